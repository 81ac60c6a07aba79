use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Parameters bound into a tape: trainable or frozen.
#[derive(Clone, Copy)]
pub struct Binding<'a, T: Element> {
    pub store: &'a ParamStore<T>,
    pub trainable: bool,
}

impl<'a, T: Element> Binding<'a, T> {
    pub fn trainable(store: &'a ParamStore<T>) -> Self {
        Self {
            store,
            trainable: true,
        }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self {
            store,
            trainable: false,
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, id: ParamId) -> Var {
        tape.param(self.store, id, self.trainable)
    }
}

/// He-normal weights scaled by `gain`.
pub(crate) fn kaiming<T: Element>(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::c(z * std)
        })
        .collect();
    Tensor::new(shape, data).expect("positive shape")
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    /// 3×3 convolution with "same" padding for stride 1.
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        gain: f64,
    ) -> Result<Self> {
        let weight = store.register(
            format!("{name}.weight"),
            kaiming(rng, &[cout, cin, 3, 3], cin * 9, gain),
        )?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: 1,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, b: &Binding<T>, x: Var) -> Result<Var> {
        let w = b.bind(tape, self.weight);
        let bias = b.bind(tape, self.bias);
        tape.conv2d(x, w, bias, self.stride, self.padding)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        fin: usize,
        fout: usize,
    ) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), kaiming(rng, &[fout, fin], fin, 1.0))?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[fout]))?;
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, b: &Binding<T>, x: Var) -> Result<Var> {
        let w = b.bind(tape, self.weight);
        let bias = b.bind(tape, self.bias);
        tape.dense(x, w, bias)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}
