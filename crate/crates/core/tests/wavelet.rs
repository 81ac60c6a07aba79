mod common;

use common::{rng, uniform};
use fpsr_core::autodiff::Tape;
use fpsr_core::wavelet::{dwt2, dwt2_var, idwt2, idwt2_var, HAAR_FILTERS};
use fpsr_core::{Band, Error, SubBandSet, Tensor, WaveletFilters};
use proptest::prelude::*;
use rand::Rng;

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    uniform(&mut rng(seed), &[1, 1, h, w], 0.0, 1.0).cast()
}

/// The four analysis outputs of a 2×2 block [p0 p1; p2 p3], written out.
fn block_oracle(p: [f64; 4]) -> [f64; 4] {
    let [a, b, c, d] = p;
    [a + b + c + d, a + b - c - d, a - b + c - d, a - b - c + d]
}

#[test]
fn declared_filter_values() {
    let f = WaveletFilters::init_haar(true);
    assert_eq!(f.analysis_filter(Band::A), [[1.0, 1.0], [1.0, 1.0]]);
    assert_eq!(f.analysis_filter(Band::H), [[-1.0, -1.0], [1.0, 1.0]]);
    assert_eq!(f.analysis_filter(Band::V), [[-1.0, 1.0], [-1.0, 1.0]]);
    assert_eq!(f.analysis_filter(Band::D), [[1.0, -1.0], [-1.0, 1.0]]);
    assert_eq!(HAAR_FILTERS[0], [[1.0, 1.0], [1.0, 1.0]]);
    assert!(f.learnable());
}

#[test]
fn constant_image_has_no_detail() {
    let f = WaveletFilters::init_haar(false);
    let bands = dwt2(&Tensor::full(&[1, 1, 6, 4], 1.0f32), &f).unwrap();
    assert!(bands.band(Band::A).data().iter().all(|&v| v == 4.0));
    for b in [Band::H, Band::V, Band::D] {
        assert!(bands.band(b).data().iter().all(|&v| v == 0.0));
    }
    let back = idwt2(&bands, &f).unwrap();
    assert!(back.data().iter().all(|&v| v == 1.0));
}

#[test]
fn single_block_example() {
    let f = WaveletFilters::init_haar(false);
    let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let bands = dwt2(&x, &f).unwrap();
    let got: Vec<f32> = Band::ALL.iter().map(|&b| bands.band(b).data()[0]).collect();
    assert_eq!(got, vec![10.0, -4.0, -2.0, 0.0]);
    let one = |v: f32| Tensor::full(&[1, 1, 1, 1], v);
    let set = SubBandSet::new(one(10.0), one(-4.0), one(-2.0), one(0.0)).unwrap();
    assert_eq!(idwt2(&set, &f).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matches_block_oracle_on_random_images() {
    let f = WaveletFilters::init_haar(false);
    let x: Tensor<f64> = uniform(&mut rng(9), &[2, 1, 6, 8], -1.0, 1.0);
    let bands = dwt2(&x, &f).unwrap();
    for n in 0..2 {
        for i in 0..3 {
            for j in 0..4 {
                let px = |p: usize, q: usize| x.data()[(n * 6 + 2 * i + p) * 8 + 2 * j + q];
                let expect = block_oracle([px(0, 0), px(0, 1), px(1, 0), px(1, 1)]);
                for band in Band::ALL {
                    let got = bands.band(band).data()[(n * 3 + i) * 4 + j];
                    assert!((got - expect[band.index()]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn analysis_map_has_full_rank() {
    // rows of the 4×4 map from block pixels to (a, b, c, d)
    let rows: Vec<[f64; 4]> = (0..4)
        .map(|k| std::array::from_fn(|p| block_oracle(std::array::from_fn(|i| (i == p) as u8 as f64))[k]))
        .collect();
    // Gaussian elimination with partial pivoting
    let mut m: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    let mut rank = 0;
    for col in 0..4 {
        let Some(pivot) = (rank..4).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())) else {
            break;
        };
        if m[pivot][col].abs() < 1e-12 {
            continue;
        }
        m.swap(rank, pivot);
        for r in 0..4 {
            if r != rank {
                let factor = m[r][col] / m[rank][col];
                for c in 0..4 {
                    m[r][c] -= factor * m[rank][c];
                }
            }
        }
        rank += 1;
    }
    assert_eq!(rank, 4);
}

#[test]
fn odd_sizes_and_mismatched_bands_are_rejected() {
    let f = WaveletFilters::init_haar(false);
    assert!(matches!(dwt2(&image(1, 5, 4), &f), Err(Error::Shape(_))));
    let a = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
    let b = Tensor::<f32>::zeros(&[1, 1, 2, 3]);
    assert!(SubBandSet::new(a.clone(), a.clone(), a, b).is_err());
}

#[test]
fn perfect_reconstruction_on_many_images() {
    let f = WaveletFilters::init_haar(true);
    let mut g = rng(10);
    for seed in 0..100 {
        let h = 2 * g.random_range(1..=16);
        let w = 2 * g.random_range(1..=16);
        let x = image(seed, h, w);
        let back = idwt2(&dwt2(&x, &f).unwrap(), &f).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-5);
    }
}

#[test]
fn synthesis_gradient_matches_finite_differences() {
    let f = WaveletFilters::init_haar(true);
    let bands: Tensor<f64> = uniform(&mut rng(11), &[1, 4, 3, 2], -1.0, 1.0);
    let kernels: Tensor<f64> = f.synthesis_tensor();
    let eval = |k: &Tensor<f64>| {
        let mut tape = Tape::new();
        let b = tape.constant(bands.clone());
        let kv = tape.constant(k.clone());
        let img = idwt2_var(&mut tape, b, kv).unwrap();
        let m = tape.mean(img).unwrap();
        tape.item(m)
    };
    let mut tape = Tape::new();
    let b = tape.constant(bands.clone());
    let kv = tape.variable(kernels.clone());
    let img = idwt2_var(&mut tape, b, kv).unwrap();
    let m = tape.mean(img).unwrap();
    let grads = tape.backward(m).unwrap();
    let analytic = grads.wrt(kv).unwrap();
    let h = 1e-4;
    for i in 0..16 {
        let mut plus = kernels.clone();
        plus.data_mut()[i] += h;
        let mut minus = kernels.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let a = analytic.data()[i];
        assert!((a - numeric).abs() <= 1e-5 * a.abs().max(numeric.abs()).max(1e-3));
    }
}

#[test]
fn tape_and_value_transforms_agree() {
    let f = WaveletFilters::init_haar(false);
    let x = image(12, 8, 6);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let stacked = dwt2_var(&mut tape, xv, &f).unwrap();
    assert_eq!(tape.value(stacked), &dwt2(&x, &f).unwrap().stack());
}

fn even_image() -> impl Strategy<Value = Tensor> {
    (1usize..=8, 1usize..=8, any::<u64>()).prop_map(|(h, w, seed)| image(seed, 2 * h, 2 * w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn reconstruction_is_exact(x in even_image()) {
        let f = WaveletFilters::init_haar(true);
        let back = idwt2(&dwt2(&x, &f).unwrap(), &f).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn analysis_is_linear(seed in any::<u64>(), alpha in -2.0f32..2.0, beta in -2.0f32..2.0) {
        let f = WaveletFilters::init_haar(false);
        let x = image(seed, 6, 8);
        let y = image(seed.wrapping_add(1), 6, 8);
        let mix = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
        let lhs = dwt2(&mix, &f).unwrap().stack();
        let (dx, dy) = (dwt2(&x, &f).unwrap().stack(), dwt2(&y, &f).unwrap().stack());
        let rhs = dx.zip_map(&dy, |a, b| alpha * a + beta * b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-5);
    }
}
