//! Synthetic head-like phantoms standing in for sliced MR data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// A `size`×`size` image in [0, 1], deterministic in `seed`.
///
/// Layers: a bright elliptical rim with a darker interior, a handful of
/// filled inner ellipses, a ridge texture (sinusoids, warped) inside the
/// interior, and a smooth multiplicative bias field.
pub fn synthesize_phantom(seed: u64, size: usize) -> Result<Tensor> {
    if size == 0 || size % 2 != 0 {
        return Err(Error::Config(format!("phantom size must be even, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = Ellipse {
        cx: rng.random_range(-0.05..0.05),
        cy: rng.random_range(-0.05..0.05),
        rx: rng.random_range(0.75..0.9),
        ry: rng.random_range(0.8..0.95),
        angle: rng.random_range(-0.3..0.3),
        value: 0.9,
    };
    let inner = Ellipse {
        rx: outer.rx - rng.random_range(0.06..0.1),
        ry: outer.ry - rng.random_range(0.06..0.1),
        value: 0.35,
        ..outer
    };
    let blobs: Vec<Ellipse> = (0..rng.random_range(3..7))
        .map(|_| Ellipse {
            cx: rng.random_range(-0.45..0.45),
            cy: rng.random_range(-0.5..0.5),
            rx: rng.random_range(0.06..0.25),
            ry: rng.random_range(0.06..0.25),
            angle: rng.random_range(0.0..PI),
            value: rng.random_range(0.1..0.8),
        })
        .collect();
    let ridges: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(6.0..14.0),
                rng.random_range(0.0..PI),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.08..0.15),
            )
        })
        .collect();
    let warp = rng.random_range(0.5..2.0);
    let bias = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));

    let mut data = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let x = (col as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            let y = (row as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            let mut v = 0.0;
            if outer.contains(x, y) {
                v = outer.value;
                if inner.contains(x, y) {
                    v = inner.value;
                    for &(freq, theta, phase, amp) in &ridges {
                        let t = x * theta.cos() + y * theta.sin();
                        let bend = warp * (PI * (x * theta.sin() - y * theta.cos())).sin();
                        v += amp * (PI * freq * t + bend + phase).sin();
                    }
                    for b in &blobs {
                        if b.contains(x, y) {
                            v = b.value;
                        }
                    }
                }
            }
            v *= 1.0 + bias.0 * x + bias.1 * y;
            data.push(v);
        }
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = (hi - lo).max(f64::EPSILON);
    let data = data.into_iter().map(|v| ((v - lo) / span) as f32).collect();
    Tensor::new(&[1, 1, size, size], data)
}
