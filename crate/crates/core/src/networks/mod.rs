//! Sub-band generators, discriminators and the attention gate.

mod attention;
mod discriminator;
mod generator;
mod layers;
mod model;

pub use attention::{attention_weights, SubBandAttention};
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig};
pub use layers::{Binding, Conv2dLayer, DenseLayer};
pub use model::{ForwardOutput, ForwardVars, FpGanModel, ModelConfig};

/// Negative slope of every LeakyReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;
