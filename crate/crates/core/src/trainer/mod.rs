//! Alternating adversarial training, evaluation and checkpoints.

mod checkpoint;
mod config;
mod evaluate;
mod run;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use evaluate::{evaluate, sample_grid, super_resolve, write_eval_artifacts, Evaluation};
pub use run::{fit, LOSS_CSV_HEADER};

use crate::autodiff::{Tape, Var};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_d_loss, adversarial_g_loss, pixel_loss_charbonnier, total_d_loss, total_g_loss,
    wavelet_loss, BandLossVars, LossReport,
};
use crate::networks::{Binding, FpGanModel};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::wavelet::{dwt2, Band};

/// Step records kept in checkpoints.
pub const HISTORY_TAIL: usize = 100;

/// Losses and attention weights logged after one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub losses: LossReport,
    pub attention: [f64; 4],
}

impl StepRecord {
    /// One row matching [`LOSS_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        let mut fields = vec![self.step.to_string()];
        let values = l
            .adv_g
            .iter()
            .chain(&l.adv_d)
            .chain(&l.wavelet)
            .chain([&l.pixel, &l.total_g, &l.total_d])
            .chain(&self.attention);
        fields.extend(values.map(|v| format!("{v:e}")));
        fields.join(",")
    }
}

/// Adds the name of the offending loss term to numeric failures.
fn term<T>(name: impl std::fmt::Display, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numeric(m) => Error::Numeric(format!("{name}: {m}")),
        other => other,
    })
}

/// Model, optimizers and step counter of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: FpGanModel,
    opt_g: AdamState,
    opt_idwt: Option<AdamState>,
    opt_d: AdamState,
    step: u64,
    history: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let mut config = config;
        config.normalize();
        config.validate()?;
        let model = FpGanModel::new(&config.model_config())?;
        let store = model.store();
        let mut g_params = model.generator_params();
        if config.use_attention {
            g_params.push(model.attention().logits());
        }
        let opt_g = AdamState::new(AdamConfig::with_lr(config.lr_g), g_params, store);
        let opt_idwt = config.learnable_idwt.then(|| {
            AdamState::new(
                AdamConfig::with_lr(config.lr_idwt),
                vec![model.synthesis_param()],
                store,
            )
        });
        let opt_d = AdamState::new(
            AdamConfig::with_lr(config.lr_d),
            model.discriminator_params(),
            store,
        );
        Ok(Self {
            config,
            model,
            opt_g,
            opt_idwt,
            opt_d,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &FpGanModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut FpGanModel {
        &mut self.model
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    /// Optimizer groups: generators (+ attention), synthesis IDWT, discriminators.
    pub fn optimizers(&self) -> (&AdamState, Option<&AdamState>, &AdamState) {
        (&self.opt_g, self.opt_idwt.as_ref(), &self.opt_d)
    }

    /// Indices of the training pairs used by the next step; a pure function
    /// of the seed and the step counter.
    pub fn batch_indices(&self, num_pairs: usize) -> Result<Vec<usize>> {
        if num_pairs == 0 {
            return Err(Error::Data("training split is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step);
        let amount = self.config.batch_size.min(num_pairs);
        Ok(rand::seq::index::sample(&mut rng, num_pairs, amount).into_vec())
    }

    /// Samples the next batch from `pairs` and trains on it.
    pub fn step_on(&mut self, pairs: &[ImagePair]) -> Result<StepRecord> {
        let batch: Vec<ImagePair> = self
            .batch_indices(pairs.len())?
            .into_iter()
            .map(|i| pairs[i].clone())
            .collect();
        self.train_step(&batch)
    }

    fn stack(&self, batch: &[ImagePair]) -> Result<(Tensor, Tensor)> {
        let lr = Tensor::stack_batch(&batch.iter().map(|p| p.lr.clone()).collect::<Vec<_>>())?;
        let hr = Tensor::stack_batch(&batch.iter().map(|p| p.hr.clone()).collect::<Vec<_>>())?;
        let hr_side = self.config.hr_size;
        let lr_side = hr_side / self.config.scale;
        if hr.shape()[1..] != [1, hr_side, hr_side] || lr.shape()[1..] != [1, lr_side, lr_side] {
            return Err(Error::Shape(format!(
                "batch has LR {:?} / HR {:?}, config expects {lr_side}/{hr_side} single-channel squares",
                lr.shape(),
                hr.shape()
            )));
        }
        Ok((lr, hr))
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &[ImagePair]) -> Result<StepRecord> {
        let (lr, hr) = self.stack(batch)?;
        let hr_bands = dwt2(&hr, self.model.wavelet())?;
        let mut report = LossReport::default();

        let mut g_tape = Tape::new();
        let lr_var = g_tape.constant(lr);
        let vars = term(
            "generator forward",
            self.model
                .forward_vars(&mut g_tape, &Binding::trainable(self.model.store()), lr_var),
        )?;
        let mut fakes = Vec::with_capacity(4);
        for band in Band::ALL {
            fakes.push(g_tape.slice_channels(vars.sr_bands, band.index(), 1)?);
        }

        // Discriminators see detached generator outputs.
        let mut d_tape = Tape::new();
        let binding = Binding::trainable(self.model.store());
        let mut adv_d = Vec::with_capacity(4);
        for band in Band::ALL {
            let i = band.index();
            let real = d_tape.constant(hr_bands.band(band).clone());
            let fake = d_tape.constant(g_tape.value(fakes[i]).clone());
            let sr = term(format!("D_{band} real score"), self.model.score(&mut d_tape, &binding, band, real))?;
            let sf = term(format!("D_{band} fake score"), self.model.score(&mut d_tape, &binding, band, fake))?;
            let loss = term(format!("adv_d[{band}]"), adversarial_d_loss(&mut d_tape, sr, sf))?;
            report.adv_d[i] = d_tape.item(loss) as f64;
            adv_d.push(loss);
        }
        let total_d = term("total_d", total_d_loss(&mut d_tape, to_array(adv_d)))?;
        report.total_d = d_tape.item(total_d) as f64;
        let grads = d_tape.backward(total_d)?;
        drop(d_tape);
        grads.accumulate_into(self.model.store_mut())?;
        self.opt_d.step(self.model.store_mut())?;

        // Generators are scored by the freshly updated, frozen discriminators.
        let binding = Binding::frozen(self.model.store());
        let mut adv_g = Vec::with_capacity(4);
        let mut wavelet = Vec::with_capacity(4);
        for band in Band::ALL {
            let i = band.index();
            let real = g_tape.constant(hr_bands.band(band).clone());
            let sr = term(format!("D_{band} real score"), self.model.score(&mut g_tape, &binding, band, real))?;
            let sf = term(format!("D_{band} fake score"), self.model.score(&mut g_tape, &binding, band, fakes[i]))?;
            let adv = term(format!("adv_g[{band}]"), adversarial_g_loss(&mut g_tape, sr, sf))?;
            let wl = term(format!("wavelet[{band}]"), wavelet_loss(&mut g_tape, fakes[i], real))?;
            report.adv_g[i] = g_tape.item(adv) as f64;
            report.wavelet[i] = g_tape.item(wl) as f64;
            adv_g.push(adv);
            wavelet.push(wl);
        }
        let hr_var = g_tape.constant(hr);
        let pixel = term(
            "pixel",
            pixel_loss_charbonnier(&mut g_tape, vars.sr_image, hr_var, self.config.loss.epsilon),
        )?;
        report.pixel = g_tape.item(pixel) as f64;
        let parts = BandLossVars {
            adv_g: to_array(adv_g),
            wavelet: self.config.use_wavelet_loss.then(|| to_array(wavelet)),
            pixel,
        };
        let total_g = term("total_g", total_g_loss(&mut g_tape, &parts, &self.config.loss))?;
        report.total_g = g_tape.item(total_g) as f64;
        let grads = g_tape.backward(total_g)?;
        drop(g_tape);
        let store = self.model.store_mut();
        grads.accumulate_into(store)?;
        self.opt_g.step(store)?;
        if let Some(opt) = self.opt_idwt.as_mut() {
            opt.step(store)?;
        }
        self.model.sync_wavelet()?;

        self.step += 1;
        let record = StepRecord {
            step: self.step,
            losses: report,
            attention: self.model.attention_weights(),
        };
        self.history.push(record);
        Ok(record)
    }

    /// Snapshot of the full training state.
    pub fn checkpoint(&self) -> Checkpoint {
        let store = self.model.store();
        let mut tensors: Vec<(String, Tensor)> = store
            .iter()
            .map(|(_, p)| (format!("param/{}", p.name()), p.value().clone()))
            .collect();
        for (group, opt) in self.optimizer_groups() {
            for (i, &id) in opt.params().iter().enumerate() {
                let (m, v) = opt.moments(i);
                tensors.push((format!("adam.{group}.m/{}", store.name(id)), m.clone()));
                tensors.push((format!("adam.{group}.v/{}", store.name(id)), v.clone()));
            }
        }
        let tail = self.history.len().saturating_sub(HISTORY_TAIL);
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            optimizer_steps: [
                self.opt_g.step_count(),
                self.opt_idwt.as_ref().map_or(0, AdamState::step_count),
                self.opt_d.step_count(),
            ],
            history: self.history[tail..].to_vec(),
            tensors,
        }
    }

    /// Rebuilds a trainer from a checkpoint; every parameter and moment
    /// buffer must be present with the expected shape.
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let mut trainer = Self::new(checkpoint.config.clone())?;
        let expected = trainer.checkpoint().tensors;
        if expected.len() != checkpoint.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, the configured model needs {}",
                checkpoint.tensors.len(),
                expected.len()
            )));
        }
        let fetch = |name: &str| {
            checkpoint
                .tensor(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let ids: Vec<_> = trainer.model.store().ids().collect();
        for id in ids {
            let name = format!("param/{}", trainer.model.store().name(id));
            trainer
                .model
                .store_mut()
                .set_value(id, fetch(&name)?)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        }
        let [g_steps, idwt_steps, d_steps] = checkpoint.optimizer_steps;
        let store = trainer.model.store().clone();
        let restore = |group: &str, opt: &mut AdamState, steps: u64| -> Result<()> {
            let mut first = Vec::new();
            let mut second = Vec::new();
            for &id in opt.params() {
                first.push(fetch(&format!("adam.{group}.m/{}", store.name(id)))?);
                second.push(fetch(&format!("adam.{group}.v/{}", store.name(id)))?);
            }
            opt.restore(steps, first, second)
        };
        restore("g", &mut trainer.opt_g, g_steps)?;
        if let Some(opt) = trainer.opt_idwt.as_mut() {
            restore("idwt", opt, idwt_steps)?;
        }
        restore("d", &mut trainer.opt_d, d_steps)?;
        trainer.model.sync_wavelet()?;
        trainer.step = checkpoint.step;
        trainer.history = checkpoint.history.clone();
        Ok(trainer)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    fn optimizer_groups(&self) -> Vec<(&'static str, &AdamState)> {
        let mut groups = vec![("g", &self.opt_g)];
        if let Some(opt) = &self.opt_idwt {
            groups.push(("idwt", opt));
        }
        groups.push(("d", &self.opt_d));
        groups
    }
}

fn to_array(v: Vec<Var>) -> [Var; 4] {
    v.try_into().expect("one entry per band")
}
