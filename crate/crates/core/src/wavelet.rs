//! One-level 2-d Haar decomposition and recomposition.
//!
//! Each non-overlapping 2×2 block `[A B; C D]` maps to four sub-band pixels
//!
//! ```text
//! a = A + B + C + D      (approximation)
//! b = A + B - C - D      (horizontal detail)
//! c = A - B + C - D      (vertical detail)
//! d = A - B - C + D      (diagonal detail)
//! ```
//!
//! and back via `A = (a + b + c + d) / 4` and its sign permutations. The
//! transform is unnormalized: `a` spans `[0, 4]` for images in `[0, 1]`.
//!
//! The analysis filters are applied as a true convolution (kernel rotated by
//! 180°), which is what turns the filter bank below into the block formulas
//! above.

use std::fmt;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// The four sub-bands, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Band {
    A,
    H,
    V,
    D,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::A, Band::H, Band::V, Band::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::A => "A",
            Band::H => "H",
            Band::V => "V",
            Band::D => "D",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Haar filter bank `f_LL, f_LH, f_HL, f_HH`.
pub const HAAR_FILTERS: [[[f64; 2]; 2]; 4] = [
    [[1.0, 1.0], [1.0, 1.0]],
    [[-1.0, -1.0], [1.0, 1.0]],
    [[-1.0, 1.0], [-1.0, 1.0]],
    [[1.0, -1.0], [-1.0, 1.0]],
];

fn rotate180(k: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[k[1][1], k[1][0]], [k[0][1], k[0][0]]]
}

/// Analysis and synthesis kernels of the wavelet module.
///
/// The analysis bank is always the fixed Haar bank. The synthesis kernels
/// start as its exact inverse and may be trained when `learnable` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilters {
    analysis: [[[f64; 2]; 2]; 4],
    synthesis: [[[f64; 2]; 2]; 4],
    learnable: bool,
}

impl WaveletFilters {
    pub fn init_haar(learnable: bool) -> Self {
        Self {
            analysis: HAAR_FILTERS,
            synthesis: HAAR_FILTERS.map(|k| rotate180(k).map(|row| row.map(|v| v / 4.0))),
            learnable,
        }
    }

    pub fn learnable(&self) -> bool {
        self.learnable
    }

    /// The analysis filter of one band, as declared (before rotation).
    pub fn analysis_filter(&self, band: Band) -> [[f64; 2]; 2] {
        self.analysis[band.index()]
    }

    pub fn synthesis_kernel(&self, band: Band) -> [[f64; 2]; 2] {
        self.synthesis[band.index()]
    }

    /// Per-band weights of block pixels `[A, B, C, D]` (row-major).
    pub fn analysis_taps(&self) -> [[f64; 4]; 4] {
        self.analysis.map(|k| {
            let r = rotate180(k);
            [r[0][0], r[0][1], r[1][0], r[1][1]]
        })
    }

    /// Synthesis kernels as a 4×2×2 tensor.
    pub fn synthesis_tensor<T: Element>(&self) -> Tensor<T> {
        let flat: Vec<f64> = self.synthesis.iter().flatten().flatten().copied().collect();
        Tensor::from_f64(&[4, 2, 2], &flat).expect("static shape")
    }

    /// Overwrites the synthesis kernels from a 4×2×2 tensor.
    pub fn set_synthesis<T: Element>(&mut self, kernels: &Tensor<T>) -> Result<()> {
        if kernels.numel() != 16 {
            return Err(Error::Shape("synthesis kernels must be 4×2×2".into()));
        }
        let d = kernels.data();
        for k in 0..4 {
            for p in 0..2 {
                for q in 0..2 {
                    self.synthesis[k][p][q] = d[k * 4 + p * 2 + q].to_f64().unwrap_or(f64::NAN);
                }
            }
        }
        Ok(())
    }
}

/// The sub-bands of one batch of images, each N×1×(h/2)×(w/2).
#[derive(Debug, Clone, PartialEq)]
pub struct SubBandSet<T: Element = f32> {
    bands: [Tensor<T>; 4],
}

impl<T: Element> SubBandSet<T> {
    pub fn new(a: Tensor<T>, h: Tensor<T>, v: Tensor<T>, d: Tensor<T>) -> Result<Self> {
        let bands = [a, h, v, d];
        let [_, c, _, _] = bands[0].dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("sub-bands must have 1 channel, got {c}")));
        }
        for b in &bands[1..] {
            bands[0].expect_same_shape(b, "sub-band set")?;
        }
        Ok(Self { bands })
    }

    pub fn band(&self, band: Band) -> &Tensor<T> {
        &self.bands[band.index()]
    }

    pub fn bands(&self) -> &[Tensor<T>; 4] {
        &self.bands
    }

    pub fn shape(&self) -> &[usize] {
        self.bands[0].shape()
    }

    /// Packs the bands as channels of one N×4×h×w tensor.
    pub fn stack(&self) -> Tensor<T> {
        let [n, _, h, w] = self.bands[0].dims4().expect("validated");
        let plane = h * w;
        let mut data = Vec::with_capacity(n * 4 * plane);
        for b in 0..n {
            for band in &self.bands {
                data.extend_from_slice(&band.data()[b * plane..(b + 1) * plane]);
            }
        }
        Tensor::new(&[n, 4, h, w], data).expect("consistent shape")
    }

    /// Inverse of [`SubBandSet::stack`].
    pub fn unstack(stacked: &Tensor<T>) -> Result<Self> {
        let [n, c, h, w] = stacked.dims4()?;
        if c != 4 {
            return Err(Error::Shape(format!("expected 4 stacked bands, got {c}")));
        }
        let plane = h * w;
        let bands = std::array::from_fn(|k| {
            let mut data = Vec::with_capacity(n * plane);
            for b in 0..n {
                let off = (b * 4 + k) * plane;
                data.extend_from_slice(&stacked.data()[off..off + plane]);
            }
            Tensor::new(&[n, 1, h, w], data).expect("consistent shape")
        });
        Ok(Self { bands })
    }

    pub fn map(&self, f: impl Fn(Band, &Tensor<T>) -> Tensor<T>) -> Result<Self> {
        let [a, h, v, d] = Band::ALL.map(|b| f(b, self.band(b)));
        Self::new(a, h, v, d)
    }
}

/// Decomposes N×1×h×w images (h, w even) into stacked N×4×(h/2)×(w/2) bands.
pub fn dwt2_var<T: Element>(tape: &mut Tape<T>, image: Var, filters: &WaveletFilters) -> Result<Var> {
    tape.block_analysis(image, filters.analysis_taps())
}

/// Recomposes stacked bands with the given 4×2×2 synthesis kernel node.
pub fn idwt2_var<T: Element>(tape: &mut Tape<T>, bands: Var, kernels: Var) -> Result<Var> {
    tape.block_synthesis(bands, kernels)
}

pub fn dwt2<T: Element>(image: &Tensor<T>, filters: &WaveletFilters) -> Result<SubBandSet<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(image.clone());
    let y = dwt2_var(&mut tape, x, filters)?;
    SubBandSet::unstack(tape.value(y))
}

pub fn idwt2<T: Element>(bands: &SubBandSet<T>, filters: &WaveletFilters) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let b = tape.constant(bands.stack());
    let k = tape.constant(filters.synthesis_tensor());
    let y = idwt2_var(&mut tape, b, k)?;
    Ok(tape.value(y).clone())
}
