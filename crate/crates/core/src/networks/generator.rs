use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Binding, Conv2dLayer};
use super::LEAKY_SLOPE;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_rrdb: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    pub scale_factor: usize,
    pub residual_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_rrdb: 4,
            base_channels: 32,
            growth_channels: 16,
            scale_factor: 4,
            residual_scale: 0.2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.scale_factor.is_power_of_two() || self.scale_factor < 2 {
            return Err(Error::Config(format!(
                "scale factor must be a power of two ≥ 2, got {}",
                self.scale_factor
            )));
        }
        if self.num_rrdb == 0 {
            return Err(Error::Config("num_rrdb must be at least 1".into()));
        }
        if self.base_channels == 0 || self.growth_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn upsample_stages(&self) -> usize {
        self.scale_factor.trailing_zeros() as usize
    }
}

/// Five densely connected convolutions with a scaled residual.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    convs: Vec<Conv2dLayer>,
}

impl DenseBlock {
    fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        nf: usize,
        gc: usize,
    ) -> Result<Self> {
        let convs = (0..5)
            .map(|i| {
                let cout = if i == 4 { nf } else { gc };
                Conv2dLayer::new(store, rng, &format!("{name}.conv{}", i + 1), nf + i * gc, cout, 1, 0.1)
            })
            .collect::<Result<_>>()?;
        Ok(Self { convs })
    }

    fn forward<T: Element>(&self, tape: &mut Tape<T>, b: &Binding<T>, x: Var, residual_scale: f64) -> Result<Var> {
        let mut features = vec![x];
        for conv in &self.convs[..4] {
            let input = tape.concat_channels(&features)?;
            let y = conv.forward(tape, b, input)?;
            features.push(tape.leaky_relu(y, LEAKY_SLOPE)?);
        }
        let input = tape.concat_channels(&features)?;
        let y = self.convs[4].forward(tape, b, input)?;
        let y = tape.scale(y, residual_scale)?;
        tape.add(y, x)
    }
}

/// Residual-in-residual dense block: three dense blocks inside a scaled
/// outer residual.
#[derive(Debug, Clone)]
pub struct Rrdb {
    blocks: [DenseBlock; 3],
}

impl Rrdb {
    fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        nf: usize,
        gc: usize,
    ) -> Result<Self> {
        let blocks = [
            DenseBlock::new(store, rng, &format!("{name}.rdb1"), nf, gc)?,
            DenseBlock::new(store, rng, &format!("{name}.rdb2"), nf, gc)?,
            DenseBlock::new(store, rng, &format!("{name}.rdb3"), nf, gc)?,
        ];
        Ok(Self { blocks })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, b: &Binding<T>, x: Var, residual_scale: f64) -> Result<Var> {
        let mut y = x;
        for block in &self.blocks {
            y = block.forward(tape, b, y, residual_scale)?;
        }
        let y = tape.scale(y, residual_scale)?;
        tape.add(y, x)
    }
}

/// Maps one low-resolution sub-band to its high-resolution estimate.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    conv_first: Conv2dLayer,
    rrdbs: Vec<Rrdb>,
    trunk: Conv2dLayer,
    upsample: Vec<Conv2dLayer>,
    conv_last: Conv2dLayer,
    params: Vec<ParamId>,
}

impl Generator {
    pub fn new<T: Element>(
        config: &GeneratorConfig,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
    ) -> Result<Self> {
        config.validate()?;
        let first_param = store.len();
        let nf = config.base_channels;
        let gc = config.growth_channels;
        let conv_first = Conv2dLayer::new(store, rng, &format!("{name}.conv_first"), 1, nf, 1, 1.0)?;
        let rrdbs = (0..config.num_rrdb)
            .map(|i| Rrdb::new(store, rng, &format!("{name}.rrdb{i}"), nf, gc))
            .collect::<Result<_>>()?;
        let trunk = Conv2dLayer::new(store, rng, &format!("{name}.trunk"), nf, nf, 1, 1.0)?;
        let upsample = (0..config.upsample_stages())
            .map(|i| Conv2dLayer::new(store, rng, &format!("{name}.up{i}"), nf, nf, 1, 1.0))
            .collect::<Result<_>>()?;
        let conv_last = Conv2dLayer::new(store, rng, &format!("{name}.conv_last"), nf, 1, 1, 1.0)?;
        let params = store.ids().skip(first_param).collect();
        Ok(Self {
            config: config.clone(),
            conv_first,
            rrdbs,
            trunk,
            upsample,
            conv_last,
            params,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// N×1×s×s → N×1×(f·s)×(f·s), linear output.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, b: &Binding<T>, band: Var) -> Result<Var> {
        let [_, c, _, _] = tape.value(band).dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("generator expects one band channel, got {c}")));
        }
        let features = self.conv_first.forward(tape, b, band)?;
        let mut trunk = features;
        for rrdb in &self.rrdbs {
            trunk = rrdb.forward(tape, b, trunk, self.config.residual_scale)?;
        }
        let trunk = self.trunk.forward(tape, b, trunk)?;
        let mut y = tape.add(features, trunk)?;
        for conv in &self.upsample {
            let up = tape.upsample_nearest(y, 2)?;
            let up = conv.forward(tape, b, up)?;
            y = tape.leaky_relu(up, LEAKY_SLOPE)?;
        }
        self.conv_last.forward(tape, b, y)
    }

    /// Runs a single RRDB; exposed for block-level checks.
    pub fn rrdb_forward<T: Element>(
        &self,
        index: usize,
        tape: &mut Tape<T>,
        b: &Binding<T>,
        x: Var,
        residual_scale: f64,
    ) -> Result<Var> {
        self.rrdbs[index].forward(tape, b, x, residual_scale)
    }
}
