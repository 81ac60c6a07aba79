use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Binding, Conv2dLayer, DenseLayer};
use super::LEAKY_SLOPE;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub num_conv: usize,
    /// Hidden width of the first dense layer and output width of the second.
    pub fc_sizes: [usize; 2],
    pub use_instance_norm: bool,
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_conv: 10,
            fc_sizes: [100, 1],
            use_instance_norm: true,
            base_channels: 32,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_conv < 2 {
            return Err(Error::Config("discriminator needs at least 2 conv layers".into()));
        }
        if self.fc_sizes[1] != 1 {
            return Err(Error::Config(
                "the last dense layer must produce one score".into(),
            ));
        }
        if self.fc_sizes[0] == 0 || self.base_channels == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Output channels of conv layer `i`: doubling every second layer, capped
    /// at 8× the base width.
    pub fn channels(&self, i: usize) -> usize {
        self.base_channels << (i / 2).min(3)
    }

    /// Odd layers downsample by 2.
    pub fn stride(&self, i: usize) -> usize {
        if i % 2 == 1 {
            2
        } else {
            1
        }
    }

    /// Total spatial reduction of the conv stack.
    pub fn downsampling(&self) -> usize {
        1 << (self.num_conv / 2)
    }
}

/// Scores a high-resolution sub-band; returns raw N×1 logits.
#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    input_size: usize,
    convs: Vec<Conv2dLayer>,
    fc: [DenseLayer; 2],
    params: Vec<ParamId>,
}

impl Discriminator {
    pub fn new<T: Element>(
        config: &DiscriminatorConfig,
        input_size: usize,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
    ) -> Result<Self> {
        config.validate()?;
        if input_size < config.downsampling() {
            return Err(Error::Config(format!(
                "discriminator input {input_size} is smaller than its total downsampling {}",
                config.downsampling()
            )));
        }
        let first_param = store.len();
        let mut convs = Vec::with_capacity(config.num_conv);
        let mut cin = 1;
        let mut side = input_size;
        for i in 0..config.num_conv {
            let cout = config.channels(i);
            let stride = config.stride(i);
            convs.push(Conv2dLayer::new(store, rng, &format!("{name}.conv{i}"), cin, cout, stride, 1.0)?);
            side = (side + 2 - 3) / stride + 1;
            cin = cout;
        }
        let flat = cin * side * side;
        let fc = [
            DenseLayer::new(store, rng, &format!("{name}.fc0"), flat, config.fc_sizes[0])?,
            DenseLayer::new(store, rng, &format!("{name}.fc1"), config.fc_sizes[0], config.fc_sizes[1])?,
        ];
        let params = store.ids().skip(first_param).collect();
        Ok(Self {
            config: config.clone(),
            input_size,
            convs,
            fc,
            params,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn last_bias(&self) -> ParamId {
        self.fc[1].bias
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, b: &Binding<T>, band: Var) -> Result<Var> {
        self.forward_layers(tape, b, band, self.convs.len())
            .and_then(|y| self.head(tape, b, y))
    }

    /// Activations after the first `layers` conv layers (including their
    /// normalization and activation).
    pub fn forward_layers<T: Element>(
        &self,
        tape: &mut Tape<T>,
        b: &Binding<T>,
        band: Var,
        layers: usize,
    ) -> Result<Var> {
        let [_, c, h, w] = tape.value(band).dims4()?;
        if c != 1 || h != self.input_size || w != self.input_size {
            return Err(Error::Shape(format!(
                "discriminator built for 1×{0}×{0} bands, got {c}×{h}×{w}",
                self.input_size
            )));
        }
        let mut y = band;
        for (i, conv) in self.convs.iter().take(layers).enumerate() {
            y = conv.forward(tape, b, y)?;
            let [_, _, oh, ow] = tape.value(y).dims4()?;
            // per-channel standardization of a 1×1 map is identically zero
            if self.config.use_instance_norm && i > 0 && oh * ow > 1 {
                y = tape.instance_norm(y, INSTANCE_NORM_EPS)?;
            }
            y = tape.leaky_relu(y, LEAKY_SLOPE)?;
        }
        Ok(y)
    }

    fn head<T: Element>(&self, tape: &mut Tape<T>, b: &Binding<T>, features: Var) -> Result<Var> {
        let n = tape.shape(features)[0];
        let flat = tape.value(features).numel() / n;
        let y = tape.reshape(features, &[n, flat])?;
        let y = self.fc[0].forward(tape, b, y)?;
        let y = tape.leaky_relu(y, LEAKY_SLOPE)?;
        self.fc[1].forward(tape, b, y)
    }
}
