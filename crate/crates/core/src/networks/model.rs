use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::SubBandAttention;
use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::layers::Binding;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::wavelet::{dwt2_var, idwt2_var, Band, SubBandSet, WaveletFilters};

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Side of the high-resolution training images; discriminators score
    /// bands of half this size.
    pub hr_size: usize,
    pub use_attention: bool,
    pub learnable_idwt: bool,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn scale(&self) -> usize {
        self.generator.scale_factor
    }

    pub fn band_size(&self) -> usize {
        self.hr_size / 2
    }
}

/// Tape nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Stacked N×4 low-resolution bands.
    pub lr_bands: Var,
    /// Stacked generator outputs, before attention.
    pub sr_bands: Var,
    /// Stacked bands after attention (equal to `sr_bands` when disabled).
    pub weighted_bands: Var,
    pub sr_image: Var,
}

/// Value-level result of [`FpGanModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Element> {
    pub sr_image: Tensor<T>,
    pub sr_bands: SubBandSet<T>,
    pub weighted_bands: SubBandSet<T>,
}

/// Four sub-band generator/discriminator pairs, the attention gate and the
/// wavelet transforms.
#[derive(Debug, Clone)]
pub struct FpGanModel<T: Element = f32> {
    config: ModelConfig,
    store: ParamStore<T>,
    generators: [Generator; 4],
    discriminators: [Discriminator; 4],
    attention: SubBandAttention,
    wavelet: WaveletFilters,
    synthesis: ParamId,
}

impl<T: Element> FpGanModel<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        if config.hr_size % 2 != 0 || config.hr_size == 0 {
            return Err(Error::Config(format!(
                "hr_size must be even and positive, got {}",
                config.hr_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let mut gens = Vec::with_capacity(4);
        for band in Band::ALL {
            gens.push(Generator::new(
                &config.generator,
                &mut store,
                &mut rng,
                &format!("generator.{band}"),
            )?);
        }
        let mut discs = Vec::with_capacity(4);
        for band in Band::ALL {
            discs.push(Discriminator::new(
                &config.discriminator,
                config.band_size(),
                &mut store,
                &mut rng,
                &format!("discriminator.{band}"),
            )?);
        }
        let attention = SubBandAttention::new(&mut store, "attention")?;
        let wavelet = WaveletFilters::init_haar(config.learnable_idwt);
        let synthesis = store.register("idwt.synthesis", wavelet.synthesis_tensor())?;
        Ok(Self {
            config: config.clone(),
            store,
            generators: gens.try_into().expect("four generators"),
            discriminators: discs.try_into().expect("four discriminators"),
            attention,
            wavelet,
            synthesis,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn generator(&self, band: Band) -> &Generator {
        &self.generators[band.index()]
    }

    pub fn discriminator(&self, band: Band) -> &Discriminator {
        &self.discriminators[band.index()]
    }

    pub fn attention(&self) -> &SubBandAttention {
        &self.attention
    }

    pub fn wavelet(&self) -> &WaveletFilters {
        &self.wavelet
    }

    pub fn synthesis_param(&self) -> ParamId {
        self.synthesis
    }

    pub fn attention_weights(&self) -> [f64; 4] {
        self.attention.weights(&self.store)
    }

    /// Parameters of all four generators.
    pub fn generator_params(&self) -> Vec<ParamId> {
        self.generators
            .iter()
            .flat_map(|g| g.params().iter().copied())
            .collect()
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.discriminators
            .iter()
            .flat_map(|d| d.params().iter().copied())
            .collect()
    }

    /// Sets every generator parameter to zero.
    pub fn zero_generators(&mut self) {
        for id in self.generator_params() {
            self.store.value_mut(id).data_mut().fill(T::zero());
        }
    }

    /// Forward pass with pluggable per-band generators; used by
    /// [`FpGanModel::forward_vars`] and by tests that substitute known bands.
    pub fn forward_with<F>(
        &self,
        tape: &mut Tape<T>,
        binding: &Binding<T>,
        lr_image: Var,
        mut generate: F,
    ) -> Result<ForwardVars>
    where
        F: FnMut(&mut Tape<T>, Band, Var) -> Result<Var>,
    {
        let lr_bands = dwt2_var(tape, lr_image, &self.wavelet)?;
        let mut outputs = Vec::with_capacity(4);
        for band in Band::ALL {
            let input = tape.slice_channels(lr_bands, band.index(), 1)?;
            outputs.push(generate(tape, band, input)?);
        }
        let sr_bands = tape.concat_channels(&outputs)?;
        let weighted_bands = if self.config.use_attention {
            self.attention.apply(tape, binding, sr_bands)?
        } else {
            sr_bands
        };
        let kernels = if self.config.learnable_idwt {
            binding.bind(tape, self.synthesis)
        } else {
            tape.param(&self.store, self.synthesis, false)
        };
        let sr_image = idwt2_var(tape, weighted_bands, kernels)?;
        Ok(ForwardVars {
            lr_bands,
            sr_bands,
            weighted_bands,
            sr_image,
        })
    }

    /// DWT → four generators → attention → IDWT.
    pub fn forward_vars(&self, tape: &mut Tape<T>, binding: &Binding<T>, lr_image: Var) -> Result<ForwardVars> {
        self.forward_with(tape, binding, lr_image, |tape, band, x| {
            self.generators[band.index()].forward(tape, binding, x)
        })
    }

    /// Inference on N×1×h×w low-resolution images (h, w even).
    pub fn forward(&self, lr_image: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(lr_image.clone());
        let vars = self.forward_vars(&mut tape, &Binding::frozen(&self.store), x)?;
        Ok(ForwardOutput {
            sr_image: tape.value(vars.sr_image).clone(),
            sr_bands: SubBandSet::unstack(tape.value(vars.sr_bands))?,
            weighted_bands: SubBandSet::unstack(tape.value(vars.weighted_bands))?,
        })
    }

    /// Raw discriminator score for one band, N×1.
    pub fn score(&self, tape: &mut Tape<T>, binding: &Binding<T>, band: Band, x: Var) -> Result<Var> {
        self.discriminators[band.index()].forward(tape, binding, x)
    }

    /// Keeps [`FpGanModel::wavelet`] in sync with the trained synthesis kernel.
    pub(crate) fn sync_wavelet(&mut self) -> Result<()> {
        let kernels = self.store.value(self.synthesis).clone();
        self.wavelet.set_synthesis(&kernels)
    }
}
