use std::path::Path;

use crate::data::{save_grayscale, upsample, BitDepth, ImagePair, ResampleMethod};
use crate::error::{Error, Result};
use crate::metrics::{diff_heatmaps, save_heatmap, MetricResult};
use crate::networks::FpGanModel;
use crate::tensor::Tensor;

/// Metrics of the model and, optionally, interpolation baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub model: MetricResult,
    /// Bicubic then bilinear, when requested.
    pub baselines: Vec<MetricResult>,
}

impl Evaluation {
    pub fn all(&self) -> Vec<MetricResult> {
        std::iter::once(self.model.clone())
            .chain(self.baselines.iter().cloned())
            .collect()
    }

    pub fn baseline(&self, method: &str) -> Option<&MetricResult> {
        self.baselines.iter().find(|m| m.method == method)
    }
}

/// Model output for a 1×1×h×w LR image, clamped to [0, 1].
pub fn super_resolve(model: &FpGanModel, lr: &Tensor) -> Result<Tensor> {
    Ok(model.forward(lr)?.sr_image.map(|v| v.clamp(0.0, 1.0)))
}

/// PSNR/SSIM of the model on `pairs`; never modifies the model.
pub fn evaluate(model: &FpGanModel, pairs: &[ImagePair], baselines: bool) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let scale = model.config().scale();
    let mut result = MetricResult::new("model");
    let mut bicubic = MetricResult::new("bicubic");
    let mut bilinear = MetricResult::new("bilinear");
    for pair in pairs {
        let sr = super_resolve(model, &pair.lr)?;
        result.push(&pair.id, &sr, &pair.hr)?;
        if baselines {
            let b = upsample(&pair.lr, scale, ResampleMethod::Bicubic)?.map(|v| v.clamp(0.0, 1.0));
            bicubic.push(&pair.id, &b, &pair.hr)?;
            let b = upsample(&pair.lr, scale, ResampleMethod::Bilinear)?;
            bilinear.push(&pair.id, &b, &pair.hr)?;
        }
    }
    Ok(Evaluation {
        model: result,
        baselines: if baselines { vec![bicubic, bilinear] } else { Vec::new() },
    })
}

/// Side-by-side panels LR (pixel-replicated) | bicubic | model | HR.
pub fn sample_grid(lr: &Tensor, sr: &Tensor, hr: &Tensor, scale: usize) -> Result<Tensor> {
    let panels = [
        upsample(lr, scale, ResampleMethod::Nearest)?,
        upsample(lr, scale, ResampleMethod::Bicubic)?.map(|v| v.clamp(0.0, 1.0)),
        sr.clone(),
        hr.clone(),
    ];
    let [_, _, h, w] = hr.dims4()?;
    for p in &panels {
        if p.dims4()? != [1, 1, h, w] {
            return Err(Error::Shape(format!("grid panel {:?} does not match HR {h}x{w}", p.shape())));
        }
    }
    let mut data = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for p in &panels {
            data.extend_from_slice(&p.data()[y * w..(y + 1) * w]);
        }
    }
    Tensor::new(&[1, 1, h, 4 * w], data)
}

/// For the first `max_samples` pairs writes `<id>_grid.png` plus heatmaps of
/// bicubic and model errors, normalized jointly so they are comparable.
pub fn write_eval_artifacts(
    model: &FpGanModel,
    pairs: &[ImagePair],
    dir: impl AsRef<Path>,
    max_samples: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    let scale = model.config().scale();
    for pair in pairs.iter().take(max_samples) {
        let sr = super_resolve(model, &pair.lr)?;
        let grid = sample_grid(&pair.lr, &sr, &pair.hr, scale)?;
        save_grayscale(dir.join(format!("{}_grid.png", pair.id)), &grid, BitDepth::Eight)?;
        let bicubic = upsample(&pair.lr, scale, ResampleMethod::Bicubic)?.map(|v| v.clamp(0.0, 1.0));
        let maps = diff_heatmaps(&pair.hr, &[&bicubic, &sr])?;
        save_heatmap(dir.join(format!("{}_diff_bicubic.png", pair.id)), &maps[0])?;
        save_heatmap(dir.join(format!("{}_diff_model.png", pair.id)), &maps[1])?;
    }
    Ok(())
}
