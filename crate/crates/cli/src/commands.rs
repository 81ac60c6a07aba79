use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fpsr_core::data::{
    build_dataset, load_grayscale, save_grayscale, BitDepth, DatasetManifest, DatasetSpec, Source,
    Split, SplitFractions,
};
use fpsr_core::metrics::{diff_heatmap, save_heatmap, write_metrics_csv};
use fpsr_core::trainer::{evaluate, fit, super_resolve, write_eval_artifacts};
use fpsr_core::{Checkpoint, Error, Result, StepRecord, TrainConfig, Trainer};
use serde::Serialize;

use crate::args::{DiffmapArgs, EvalArgs, PrepareArgs, SrArgs, TrainArgs};

/// `<primary>.run.toml` next to a command's main output.
fn run_record_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".run.toml");
    primary.with_file_name(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn write_effective<T: Serialize>(path: &Path, args: &T) -> Result<()> {
    let text = toml::to_string(args).map_err(|e| Error::Config(e.to_string()))?;
    write_text(path, &text)
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let splits: [f64; 3] = args
        .splits
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config("--splits takes exactly three fractions".into()))?;
    let spec = DatasetSpec {
        source: args.source.parse::<Source>()?,
        scale: args.scale,
        crop: args.crop,
        splits: SplitFractions(splits),
        seed: args.seed,
        method: args.method,
    };
    let manifest = build_dataset(&spec, &args.out)?;
    write_effective(&args.out.join("prepare.toml"), args)?;
    let count = |s| manifest.split(s).count();
    println!(
        "wrote {} pairs to {} (train {}, val {}, test {})",
        manifest.entries.len(),
        args.out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(())
}

fn merged_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::read(&args.config)?;
    if let Some(m) = &args.manifest {
        config.manifest = Some(m.clone());
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.eval_every {
        config.eval_every = v;
    }
    if let Some(v) = args.checkpoint_every {
        config.checkpoint_every = v;
    }
    config.validate()?;
    Ok(config)
}

/// Restores a checkpoint, adopting the schedule of `config`. Anything else
/// that differs would silently change the run, so it is rejected.
fn resume(path: &Path, config: &TrainConfig) -> Result<Trainer> {
    let mut checkpoint = Checkpoint::load(path)?;
    let schedule_only = TrainConfig {
        iterations: checkpoint.config.iterations,
        eval_every: checkpoint.config.eval_every,
        checkpoint_every: checkpoint.config.checkpoint_every,
        manifest: checkpoint.config.manifest.clone(),
        ..config.clone()
    };
    if schedule_only != checkpoint.config {
        return Err(Error::Config(format!(
            "config differs from the one stored in {} beyond iterations, eval_every, checkpoint_every and manifest",
            path.display()
        )));
    }
    checkpoint.config = config.clone();
    Trainer::from_checkpoint(&checkpoint)
}

fn progress_line(r: &StepRecord, total: u64) -> String {
    let l = &r.losses;
    format!(
        "step {}/{total} total_g {:.5} total_d {:.5} wavelet {:.5} pixel {:.5} w [{:.4}, {:.4}, {:.4}, {:.4}]",
        r.step,
        l.total_g,
        l.total_d,
        l.mean_wavelet(),
        l.pixel,
        r.attention[0],
        r.attention[1],
        r.attention[2],
        r.attention[3]
    )
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let config = merged_config(args)?;
    let manifest_path = config
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no dataset: set `manifest` in the config or pass --manifest".into()))?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    if manifest.scale != config.scale {
        return Err(Error::Config(format!(
            "manifest was prepared for ×{}, config trains ×{}",
            manifest.scale, config.scale
        )));
    }
    let train = manifest.load_split(Split::Train)?;
    let val = manifest.load_split(Split::Val)?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_text(&args.out.join("effective_config.toml"), &config.to_toml())?;

    let mut trainer = match &args.resume {
        Some(path) => resume(path, &config)?,
        None => Trainer::new(config.clone())?,
    };
    let total = config.iterations;
    let log_every = args.log_every;
    fit(&mut trainer, &train, &val, &args.out, |r| {
        if log_every > 0 && (r.step % log_every == 0 || r.step == total) {
            eprintln!("{}", progress_line(r, total));
        }
    })?;
    println!("finished at step {}; checkpoint {}", trainer.step(), args.out.join("final.fpsr").display());
    Ok(())
}

pub fn sr(args: &SrArgs) -> Result<()> {
    let trainer = Trainer::load(&args.model)?;
    let lr = load_grayscale(&args.input)?;
    let sr = super_resolve(trainer.model(), &lr)?;
    let depth = if args.depth == 8 { BitDepth::Eight } else { BitDepth::Sixteen };
    save_grayscale(&args.output, &sr, depth)?;
    write_effective(&run_record_path(&args.output), args)?;
    let s = sr.shape();
    println!("wrote {}x{} image to {}", s[3], s[2], args.output.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let trainer = Trainer::load(&args.model)?;
    let manifest = DatasetManifest::read(&args.manifest)?;
    if manifest.scale != trainer.config().scale {
        return Err(Error::Data(format!(
            "manifest is ×{}, model is ×{}",
            manifest.scale,
            trainer.config().scale
        )));
    }
    let pairs = manifest.load_split(args.split)?;
    let result = evaluate(trainer.model(), &pairs, args.baselines)?;
    if let Some(dir) = &args.artifacts {
        write_eval_artifacts(trainer.model(), &pairs, dir, args.samples)?;
    }
    if let Some(dir) = args.csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let file = File::create(&args.csv).map_err(|e| io_err(&args.csv, e))?;
    write_metrics_csv(BufWriter::new(file), &result.all()).map_err(|e| io_err(&args.csv, e))?;
    write_effective(&run_record_path(&args.csv), args)?;
    for m in result.all() {
        if let (Some((psnr, psnr_std)), Some(ssim)) = (m.psnr(), m.ssim()) {
            println!(
                "{:<10} PSNR {psnr} ± {psnr_std:.4} dB  SSIM {:.4} ± {:.4}",
                m.method, ssim.mean, ssim.std
            );
        }
    }
    Ok(())
}

pub fn diffmap(args: &DiffmapArgs) -> Result<()> {
    let a = load_grayscale(&args.a)?;
    let b = load_grayscale(&args.b)?;
    let heat = diff_heatmap(&a, &b)?;
    save_heatmap(&args.out, &heat)?;
    write_effective(&run_record_path(&args.out), args)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
