//! Separable resampling with edge clamping.
//!
//! Output pixel `o` samples source coordinate `(o + 0.5) · in/out − 0.5`.
//! When shrinking, the kernel is stretched by the shrink ratio so it acts as
//! an anti-aliasing filter. Weights are normalized per output pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMethod {
    /// Catmull-Rom cubic (a = −0.5).
    Bicubic,
    Bilinear,
    /// Top-left sample of each block when shrinking, replication when growing.
    Nearest,
}

impl std::str::FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bicubic" => Ok(Self::Bicubic),
            "bilinear" => Ok(Self::Bilinear),
            "nearest" => Ok(Self::Nearest),
            other => Err(Error::Config(format!("unknown resampling method {other}"))),
        }
    }
}

impl std::fmt::Display for ResampleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bicubic => "bicubic",
            Self::Bilinear => "bilinear",
            Self::Nearest => "nearest",
        })
    }
}

const CUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (CUBIC_A + 2.0) * x * x * x - (CUBIC_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        CUBIC_A * x * x * x - 5.0 * CUBIC_A * x * x + 8.0 * CUBIC_A * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

fn triangle(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

/// Source taps `(index, weight)` for every output position along one axis.
fn axis_taps(in_len: usize, out_len: usize, method: ResampleMethod) -> Vec<Vec<(usize, f64)>> {
    let ratio = in_len as f64 / out_len as f64;
    let last = in_len as isize - 1;
    (0..out_len)
        .map(|o| {
            let (kernel, radius): (fn(f64) -> f64, f64) = match method {
                ResampleMethod::Nearest => {
                    let src = ((o as f64 * ratio).floor() as usize).min(in_len - 1);
                    return vec![(src, 1.0)];
                }
                ResampleMethod::Bicubic => (cubic, 2.0),
                ResampleMethod::Bilinear => (triangle, 1.0),
            };
            let support = ratio.max(1.0);
            let center = (o as f64 + 0.5) * ratio - 0.5;
            let lo = (center - radius * support).floor() as isize;
            let hi = (center + radius * support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let w = kernel((i as f64 - center) / support);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, last) as usize;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Resizes every plane of an N×C×H×W tensor to `out_h`×`out_w`.
pub fn resize(image: &Tensor, out_h: usize, out_w: usize, method: ResampleMethod) -> Result<Tensor> {
    let [n, c, h, w] = image.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize target must be non-empty".into()));
    }
    let rows = axis_taps(h, out_h, method);
    let cols = axis_taps(w, out_w, method);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    let mut tmp = vec![0.0f64; h * out_w];
    for plane in image.data().chunks_exact(h * w) {
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[y * out_w + x] = taps.iter().map(|&(i, wt)| row[i] as f64 * wt).sum();
            }
        }
        for taps in &rows {
            for x in 0..out_w {
                let v: f64 = taps.iter().map(|&(i, wt)| tmp[i * out_w + x] * wt).sum();
                out.push(v as f32);
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

/// Shrinks by an integer factor; both sides must be divisible by it.
pub fn downsample(image: &Tensor, factor: usize, method: ResampleMethod) -> Result<Tensor> {
    let [_, _, h, w] = image.dims4()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} is not divisible by factor {factor}"
        )));
    }
    resize(image, h / factor, w / factor, method)
}

/// Enlarges by an integer factor.
pub fn upsample(image: &Tensor, factor: usize, method: ResampleMethod) -> Result<Tensor> {
    let [_, _, h, w] = image.dims4()?;
    if factor == 0 {
        return Err(Error::Shape("upsampling factor must be positive".into()));
    }
    resize(image, h * factor, w * factor, method)
}

#[cfg(test)]
mod tests {
    use super::*;

    const METHODS: [ResampleMethod; 3] = [
        ResampleMethod::Bicubic,
        ResampleMethod::Bilinear,
        ResampleMethod::Nearest,
    ];

    #[test]
    fn catmull_rom_kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        // a = -0.5 at x = 0.5: 1.5/8 - 2.5/4 + 1
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn constant_is_preserved() {
        let img = Tensor::full(&[1, 1, 12, 8], 0.37f32);
        for m in METHODS {
            let d = downsample(&img, 4, m).unwrap();
            assert_eq!(d.shape(), &[1, 1, 3, 2]);
            assert!(d.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
            let u = upsample(&d, 4, m).unwrap();
            assert!(u.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let data: Vec<f32> = (0..20).map(|i| (i as f32 * 0.7).sin().abs()).collect();
        let img = Tensor::new(&[1, 1, 4, 5], data).unwrap();
        for m in METHODS {
            let out = downsample(&img, 1, m).unwrap();
            assert!(out.max_abs_diff(&img).unwrap() < 1e-6);
        }
    }

    #[test]
    fn nearest_takes_top_left_samples() {
        // 4x4 tiling of [[1,2],[3,4]]
        let tile = [1.0f32, 2.0, 3.0, 4.0];
        let data: Vec<f32> = (0..16).map(|i| tile[(i / 4 % 2) * 2 + i % 2]).collect();
        let img = Tensor::new(&[1, 1, 4, 4], data).unwrap();
        let out = downsample(&img, 2, ResampleMethod::Nearest).unwrap();
        assert_eq!(out.data(), &[1.0; 4]);
    }

    #[test]
    fn nearest_upsample_replicates() {
        let img = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let out = upsample(&img, 2, ResampleMethod::Nearest).unwrap();
        assert_eq!(
            out.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn indivisible_size_is_rejected() {
        let img = Tensor::<f32>::zeros(&[1, 1, 6, 5]);
        assert!(downsample(&img, 2, ResampleMethod::Bicubic).is_err());
    }

    #[test]
    fn parses_method_names() {
        assert_eq!("bicubic".parse::<ResampleMethod>().unwrap(), ResampleMethod::Bicubic);
        assert!("lanczos".parse::<ResampleMethod>().is_err());
    }
}
