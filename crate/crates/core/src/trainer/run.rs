use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{evaluate, write_eval_artifacts, StepRecord, Trainer};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::write_metrics_csv;

pub const LOSS_CSV_HEADER: &str = "step,adv_g_A,adv_g_H,adv_g_V,adv_g_D,\
adv_d_A,adv_d_H,adv_d_V,adv_d_D,wavelet_A,wavelet_H,wavelet_V,wavelet_D,\
pixel,total_g,total_d,w_A,w_H,w_V,w_D";

const EVAL_SAMPLES: usize = 2;

fn open_loss_log(path: &Path, fresh: bool) -> Result<BufWriter<File>> {
    let io = |e| Error::io(path, e);
    let file = if fresh || !path.exists() {
        let mut f = File::create(path).map_err(io)?;
        writeln!(f, "{LOSS_CSV_HEADER}").map_err(io)?;
        f
    } else {
        OpenOptions::new().append(true).open(path).map_err(io)?
    };
    Ok(BufWriter::new(file))
}

fn run_eval(trainer: &Trainer, val: &[ImagePair], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let eval = evaluate(trainer.model(), val, true)?;
    let csv = dir.join("metrics.csv");
    let file = File::create(&csv).map_err(|e| Error::io(&csv, e))?;
    write_metrics_csv(BufWriter::new(file), &eval.all()).map_err(|e| Error::io(&csv, e))?;
    write_eval_artifacts(trainer.model(), val, dir, EVAL_SAMPLES)
}

/// Trains until `config.iterations` steps are done, writing to `out`:
/// `losses.csv`, `eval/step_NNNNNN/` every `eval_every` steps,
/// `checkpoints/step_NNNNNN.fpsr` every `checkpoint_every` steps and
/// `final.fpsr` at the end. A resumed trainer appends to the loss log.
pub fn fit(
    trainer: &mut Trainer,
    train: &[ImagePair],
    val: &[ImagePair],
    out: impl AsRef<Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<()> {
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("losses.csv");
    let mut log = open_loss_log(&log_path, trainer.step() == 0)?;
    let (eval_every, ckpt_every) = (trainer.config().eval_every, trainer.config().checkpoint_every);
    while trainer.step() < trainer.config().iterations {
        let record = trainer.step_on(train)?;
        writeln!(log, "{}", record.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        on_step(&record);
        let step = record.step;
        if eval_every > 0 && step % eval_every == 0 && !val.is_empty() {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            run_eval(trainer, val, &out.join(format!("eval/step_{step:06}")))?;
        }
        if ckpt_every > 0 && step % ckpt_every == 0 {
            trainer.save(out.join(format!("checkpoints/step_{step:06}.fpsr")))?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    trainer.save(out.join("final.fpsr"))
}
