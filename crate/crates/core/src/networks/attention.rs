use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::{Element, Tensor};
use crate::wavelet::SubBandSet;

use super::layers::Binding;

/// One multiplicative weight per sub-band, `w = 4 · softmax(θ)`.
///
/// Logits start at zero, so the gate starts as the identity and the weights
/// always sum to 4.
#[derive(Debug, Clone)]
pub struct SubBandAttention {
    logits: ParamId,
}

impl SubBandAttention {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str) -> Result<Self> {
        let logits = store.register(format!("{name}.logits"), Tensor::zeros(&[4]))?;
        Ok(Self { logits })
    }

    pub fn logits(&self) -> ParamId {
        self.logits
    }

    /// Current weights in band order A, H, V, D.
    pub fn weights<T: Element>(&self, store: &ParamStore<T>) -> [f64; 4] {
        attention_weights(store.value(self.logits).data())
    }

    /// Scales each channel of stacked N×4×h×w bands by its weight.
    pub fn apply<T: Element>(&self, tape: &mut Tape<T>, b: &Binding<T>, bands: Var) -> Result<Var> {
        let theta = b.bind(tape, self.logits);
        let probs = tape.softmax(theta)?;
        let weights = tape.scale(probs, 4.0)?;
        tape.channel_scale(bands, weights)
    }

    pub fn apply_set<T: Element>(&self, store: &ParamStore<T>, bands: &SubBandSet<T>) -> Result<SubBandSet<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(bands.stack());
        let y = self.apply(&mut tape, &Binding::frozen(store), x)?;
        SubBandSet::unstack(tape.value(y))
    }
}

/// `4 · softmax(logits)` evaluated in double precision.
pub fn attention_weights<T: Element>(logits: &[T]) -> [f64; 4] {
    let l: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    std::array::from_fn(|i| 4.0 * e[i] / total)
}
