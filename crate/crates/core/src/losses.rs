//! Training objectives.
//!
//! Adversarial terms use the relativistic-average pairing
//! `D_rf = σ(C(real) − mean C(fake))`, `D_fr = σ(C(fake) − mean C(real))`,
//! where `C` is the raw discriminator score.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;
use crate::wavelet::Band;

/// Probabilities are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]` before `log`.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Per-band weights λ for A, H, V, D.
    pub lambda: [f64; 4],
    /// Adversarial weight inside each band term.
    pub alpha: f64,
    /// Pixel-loss weight.
    pub beta: f64,
    /// Charbonnier slack.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: [0.1; 4],
            alpha: 1e-4,
            beta: 0.1,
            epsilon: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.lambda.iter().chain([&self.alpha, &self.beta]);
        if all.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Scalar loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub adv_g: [f64; 4],
    pub adv_d: [f64; 4],
    pub wavelet: [f64; 4],
    pub pixel: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    /// Recomputes `total_g` from the parts.
    pub fn compose_total_g(&self, weights: &LossWeights, use_wavelet_loss: bool) -> f64 {
        let parts = BandLossParts {
            adv_g: self.adv_g,
            wavelet: use_wavelet_loss.then_some(self.wavelet),
            pixel: self.pixel,
        };
        parts.total(weights)
    }

    pub fn mean_wavelet(&self) -> f64 {
        self.wavelet.iter().sum::<f64>() / 4.0
    }
}

/// Scalar ingredients of the generator objective.
#[derive(Debug, Clone, Copy)]
pub struct BandLossParts {
    pub adv_g: [f64; 4],
    /// `None` when the wavelet loss is ablated.
    pub wavelet: Option<[f64; 4]>,
    pub pixel: f64,
}

impl BandLossParts {
    /// `Σ_i λ_i (α adv_i + wavelet_i) + β pixel`
    pub fn total(&self, w: &LossWeights) -> f64 {
        let bands: f64 = (0..4)
            .map(|i| w.lambda[i] * (w.alpha * self.adv_g[i] + self.wavelet.map_or(0.0, |wl| wl[i])))
            .sum();
        bands + w.beta * self.pixel
    }
}

fn check_pair<T: Element>(tape: &Tape<T>, real: Var, fake: Var) -> Result<()> {
    let (r, f) = (tape.shape(real), tape.shape(fake));
    if r != f {
        return Err(Error::Shape(format!("score shapes {r:?} and {f:?} differ")));
    }
    if r.len() != 2 || r[1] != 1 {
        return Err(Error::Shape(format!("scores must be N×1, got {r:?}")));
    }
    Ok(())
}

/// `(D_rf, D_fr)`, both N×1 probabilities.
pub fn relativistic_pair<T: Element>(tape: &mut Tape<T>, score_real: Var, score_fake: Var) -> Result<(Var, Var)> {
    check_pair(tape, score_real, score_fake)?;
    let mean_fake = tape.mean(score_fake)?;
    let mean_real = tape.mean(score_real)?;
    let rf = tape.sub_scalar(score_real, mean_fake)?;
    let fr = tape.sub_scalar(score_fake, mean_real)?;
    Ok((tape.sigmoid(rf)?, tape.sigmoid(fr)?))
}

/// `−mean log(clamp(p))`
fn neg_mean_log<T: Element>(tape: &mut Tape<T>, p: Var) -> Result<Var> {
    let p = tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    let l = tape.log(p)?;
    let m = tape.mean(l)?;
    tape.scale(m, -1.0)
}

/// `−mean log(1 − clamp(p))`
fn neg_mean_log_complement<T: Element>(tape: &mut Tape<T>, p: Var) -> Result<Var> {
    let p = tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    let q = tape.affine(p, -1.0, 1.0)?;
    let l = tape.log(q)?;
    let m = tape.mean(l)?;
    tape.scale(m, -1.0)
}

/// `−mean log D_rf − mean log(1 − D_fr)`
pub fn adversarial_d_loss<T: Element>(tape: &mut Tape<T>, score_real: Var, score_fake: Var) -> Result<Var> {
    let (rf, fr) = relativistic_pair(tape, score_real, score_fake)?;
    let a = neg_mean_log(tape, rf)?;
    let b = neg_mean_log_complement(tape, fr)?;
    tape.add(a, b)
}

/// `−mean log D_fr − mean log(1 − D_rf)`
pub fn adversarial_g_loss<T: Element>(tape: &mut Tape<T>, score_real: Var, score_fake: Var) -> Result<Var> {
    let (rf, fr) = relativistic_pair(tape, score_real, score_fake)?;
    let a = neg_mean_log(tape, fr)?;
    let b = neg_mean_log_complement(tape, rf)?;
    tape.add(a, b)
}

/// Mean absolute error between generated and target sub-bands.
pub fn wavelet_loss<T: Element>(tape: &mut Tape<T>, sr_band: Var, hr_band: Var) -> Result<Var> {
    let d = tape.sub(sr_band, hr_band)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

/// Mean of `sqrt((y − ŷ)² + ε²)`.
pub fn pixel_loss_charbonnier<T: Element>(tape: &mut Tape<T>, sr_image: Var, hr_image: Var, epsilon: f64) -> Result<Var> {
    if !(epsilon > 0.0) {
        return Err(Error::Config("Charbonnier epsilon must be positive".into()));
    }
    let d = tape.sub(sr_image, hr_image)?;
    let sq = tape.mul(d, d)?;
    let shifted = tape.affine(sq, 1.0, epsilon * epsilon)?;
    let r = tape.sqrt(shifted)?;
    tape.mean(r)
}

/// Per-band generator terms on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BandLossVars {
    pub adv_g: [Var; 4],
    /// Absent when the wavelet loss is ablated.
    pub wavelet: Option<[Var; 4]>,
    pub pixel: Var,
}

/// `λ1 Loss_A + λ2 Loss_H + λ3 Loss_V + λ4 Loss_D + β pixel` with
/// `Loss_i = α adv_g_i + wavelet_i`.
pub fn total_g_loss<T: Element>(tape: &mut Tape<T>, parts: &BandLossVars, weights: &LossWeights) -> Result<Var> {
    let mut total = tape.scale(parts.pixel, weights.beta)?;
    for band in Band::ALL {
        let i = band.index();
        let mut term = tape.scale(parts.adv_g[i], weights.alpha)?;
        if let Some(wl) = parts.wavelet {
            term = tape.add(term, wl[i])?;
        }
        let term = tape.scale(term, weights.lambda[i])?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Plain sum of the four discriminator losses, in band order.
pub fn total_d_loss<T: Element>(tape: &mut Tape<T>, adv_d: [Var; 4]) -> Result<Var> {
    let mut total = adv_d[0];
    for &l in &adv_d[1..] {
        total = tape.add(total, l)?;
    }
    Ok(total)
}
