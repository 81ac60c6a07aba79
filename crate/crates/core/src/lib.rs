//! Wavelet-domain super-resolution with sub-band adversarial networks.
//!
//! An image is split into four Haar sub-bands, each sub-band is upscaled by
//! its own generator, the results are re-weighted by a learnable gate and
//! recomposed by a trainable inverse transform.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod tensor;
pub mod trainer;
pub mod wavelet;

pub use autodiff::{Gradients, ParamId, ParamStore, Tape, Var};
pub use error::{Error, Result};
pub use optim::{AdamConfig, AdamState};
pub use metrics::{MetricResult, Psnr};
pub use tensor::{DType, Element, Tensor};
pub use wavelet::{Band, SubBandSet, WaveletFilters};
pub use trainer::{Checkpoint, StepRecord, TrainConfig, Trainer};
