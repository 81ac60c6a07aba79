//! PSNR, SSIM and difference heatmaps.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::data::save_rgb;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio. Identical inputs have no finite PSNR and are
/// reported as [`Psnr::Identical`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }

    pub fn is_identical(self) -> bool {
        matches!(self, Psnr::Identical)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("inf"),
        }
    }
}

fn plane(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[1, 1, h, w] | &[h, w] => Ok((h, w)),
        s => Err(Error::Shape(format!(
            "{what} expects a single-channel image, got shape {s:?}"
        ))),
    }
}

fn check_pair(pred: &Tensor, target: &Tensor, what: &str) -> Result<(usize, usize)> {
    let a = plane(pred, what)?;
    let b = plane(target, what)?;
    if a != b {
        return Err(Error::Shape(format!(
            "{what}: image sizes {a:?} and {b:?} differ"
        )));
    }
    Ok(a)
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.numel() != target.numel() {
        return Err(Error::Shape("mse: element counts differ".into()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.numel() as f64)
}

/// `10 · log10(peak² / MSE)`
pub fn psnr(pred: &Tensor, target: &Tensor, peak: f64) -> Result<Psnr> {
    check_pair(pred, target, "psnr")?;
    let err = mse(pred, target)?;
    if err == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(10.0 * (peak * peak / err).log10()))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Valid-mode separable filtering of an h×w plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5), valid windows
/// only, dynamic range `peak`.
pub fn ssim(pred: &Tensor, target: &Tensor, peak: f64) -> Result<f64> {
    let (h, w) = check_pair(pred, target, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let x: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let k = gaussian_window();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|s| filter_valid(s, h, w, &k));
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// `|a − b|` as an H×W tensor.
pub fn abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (h, w) = check_pair(a, b, "diff_heatmap")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .collect();
    Tensor::new(&[h, w], data)
}

/// Absolute differences of every candidate against `reference`, normalized
/// by the largest difference over the whole set so maps are comparable.
pub fn diff_heatmaps(reference: &Tensor, candidates: &[&Tensor]) -> Result<Vec<Tensor>> {
    let diffs: Vec<Tensor> = candidates
        .iter()
        .map(|c| abs_diff(c, reference))
        .collect::<Result<_>>()?;
    let max = diffs
        .iter()
        .flat_map(|d| d.data().iter().copied())
        .fold(0.0f32, f32::max);
    Ok(diffs
        .into_iter()
        .map(|d| if max > 0.0 { d.map(|v| v / max) } else { d })
        .collect())
}

/// Single-pair heatmap in [0, 1]; all zeros when `a == b`.
pub fn diff_heatmap(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(diff_heatmaps(b, &[a])?.remove(0))
}

/// Black → red → yellow → white; luminance increases monotonically.
pub fn hot_colormap(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    [
        (3.0 * t).min(1.0),
        (3.0 * t - 1.0).clamp(0.0, 1.0),
        (3.0 * t - 2.0).clamp(0.0, 1.0),
    ]
}

/// Renders an H×W heatmap as an 8-bit RGB PNG.
pub fn save_heatmap(path: impl AsRef<Path>, heat: &Tensor) -> Result<()> {
    let (h, w) = plane(heat, "save_heatmap")?;
    let rgb: Vec<f32> = heat.data().iter().flat_map(|&v| hot_colormap(v)).collect();
    save_rgb(path, w, h, &rgb)
}

/// Metrics of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Per-image metrics of one method over a set, with aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    pub method: String,
    pub images: Vec<ImageMetrics>,
}

impl MetricResult {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            images: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, pred: &Tensor, target: &Tensor) -> Result<()> {
        self.images.push(ImageMetrics {
            id: id.into(),
            psnr: psnr(pred, target, 1.0)?,
            ssim: ssim(pred, target, 1.0)?,
        });
        Ok(())
    }

    /// PSNR aggregate; [`Psnr::Identical`] if any image was reproduced exactly.
    pub fn psnr(&self) -> Option<(Psnr, f64)> {
        if self.images.iter().any(|m| m.psnr.is_identical()) {
            return Some((Psnr::Identical, 0.0));
        }
        let v: Vec<f64> = self.images.iter().filter_map(|m| m.psnr.db()).collect();
        MeanStd::of(&v).map(|s| (Psnr::Db(s.mean), s.std))
    }

    pub fn ssim(&self) -> Option<MeanStd> {
        MeanStd::of(&self.images.iter().map(|m| m.ssim).collect::<Vec<_>>())
    }
}

/// CSV with columns `method,id,psnr_db,ssim`; each method ends with `mean`
/// and `std` rows.
pub fn write_metrics_csv(mut out: impl Write, results: &[MetricResult]) -> std::io::Result<()> {
    writeln!(out, "method,id,psnr_db,ssim")?;
    for r in results {
        for m in &r.images {
            writeln!(out, "{},{},{},{:.6}", r.method, m.id, m.psnr, m.ssim)?;
        }
        if let (Some((p, p_std)), Some(s)) = (r.psnr(), r.ssim()) {
            writeln!(out, "{},mean,{},{:.6}", r.method, p, s.mean)?;
            writeln!(out, "{},std,{:.4},{:.6}", r.method, p_std, s.std)?;
        }
    }
    Ok(())
}
