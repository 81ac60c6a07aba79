mod common;

use common::{rng, uniform};
use fpsr_core::autodiff::{ParamStore, Tape};
use fpsr_core::optim::{AdamConfig, AdamState};
use fpsr_core::{Error, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

/// Direct summation over output pixel, output channel, input channel and taps.
fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [cout, _, kh, kw] = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], out).unwrap()
}

#[test]
fn conv_of_zero_input_is_bias() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let w = tape.constant(uniform(&mut rng(1), &[1, 1, 3, 3], -1.0, 1.0));
    let b = tape.constant(t(&[1], &[0.7]));
    let y = tape.conv2d(x, w, b, 1, 1).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
}

#[test]
fn one_by_one_conv_scales() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
    let w = tape.constant(t(&[1, 1, 1, 1], &[2.]));
    let b = tape.constant(t(&[1], &[0.]));
    let y = tape.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[2., 4., 6., 8.]);
}

#[test]
fn conv_matches_direct_summation() {
    for seed in 0..10 {
        let mut g = rng(seed);
        let x = uniform(&mut g, &[1, 2, 5, 5], -1.0, 1.0);
        let w = uniform(&mut g, &[3, 2, 3, 3], -1.0, 1.0);
        let b = uniform(&mut g, &[3], -1.0, 1.0);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let mut tape = Tape::<f64>::new();
            let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
            let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
            let oracle = naive_conv(&x, &w, &b, stride, pad);
            assert_eq!(tape.shape(y), oracle.shape());
            assert!(tape.value(y).max_abs_diff(&oracle).unwrap() < 1e-5);
        }
    }
}

#[test]
fn conv_shape_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[1]));
    assert!(matches!(tape.conv2d(x, w, b, 1, 1), Err(Error::Shape(_))));
}

#[test]
fn dense_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 2], &[1., 2.]));
    let w = tape.constant(t(&[1, 2], &[3., 4.]));
    let b = tape.constant(t(&[1], &[5.]));
    let y = tape.dense(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[16.]);

    let x = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let zero = tape.constant(t(&[2], &[0., 0.]));
    let y = tape.dense(x, eye, zero).unwrap();
    assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);

    let zw = tape.constant(Tensor::zeros(&[3, 2]));
    let bias = tape.constant(t(&[3], &[1., -2., 3.]));
    let y = tape.dense(x, zw, bias).unwrap();
    assert_eq!(tape.value(y).data(), &[1., -2., 3., 1., -2., 3.]);

    let bad = tape.constant(Tensor::zeros(&[3, 5]));
    assert!(tape.dense(x, bad, bias).is_err());
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(t(&[1], &[0.]));
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.item(s), 0.5);
    let x = tape.constant(t(&[2], &[-1., 3.]));
    let l = tape.leaky_relu(x, 0.2).unwrap();
    assert_eq!(tape.value(l).data(), &[-0.2, 3.]);
    let a = tape.constant(t(&[2], &[1., 2.]));
    let b = tape.constant(t(&[2], &[3., 4.]));
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[4., 6.]);
    let short = tape.constant(t(&[1], &[1.]));
    assert!(matches!(tape.add(a, short), Err(Error::Shape(_))));
    let neg = tape.constant(t(&[1], &[-1.]));
    assert!(matches!(tape.sqrt(neg), Err(Error::Numeric(_))));
}

#[test]
fn upsample_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
    let same = tape.upsample_nearest(x, 1).unwrap();
    assert_eq!(tape.value(same).data(), &[1., 2., 3., 4.]);
    let y = tape.upsample_nearest(x, 2).unwrap();
    assert_eq!(
        tape.value(y).data(),
        &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
    );
    assert!(tape.upsample_nearest(x, 0).is_err());
    let y3 = tape.upsample_nearest(x, 3).unwrap();
    let s = tape.sum(y3).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 9.0));
}

#[test]
fn reductions() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[2., 4.]));
    let m = tape.mean(x).unwrap();
    assert_eq!(tape.item(m), 3.0);
    let z = tape.constant(Tensor::zeros(&[3, 2]));
    let s = tape.sum(z).unwrap();
    assert_eq!(tape.item(s), 0.0);
    let r = uniform(&mut rng(3), &[10], -1.0, 1.0);
    let oracle = r.data().iter().sum::<f64>() / 10.0;
    let v = tape.constant(r);
    let m = tape.mean(v).unwrap();
    assert!((tape.item(m) - oracle).abs() < 1e-6);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let p = tape.variable(uniform(&mut rng(4), &[2, 3], -1.0, 1.0));
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.wrt(p).unwrap().data().iter().all(|&v| v == 1.0));

    let target = uniform(&mut rng(5), &[4], -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let p = tape.variable(target.clone());
    let tv = tape.constant(target);
    let d = tape.sub(p, tv).unwrap();
    let sq = tape.mul(d, d).unwrap();
    let loss = tape.mean(sq).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.wrt(p).unwrap().data().iter().all(|&v| v == 0.0));

    assert!(matches!(tape.backward(sq), Err(Error::Graph(_))));
    let det = tape.detach(loss);
    assert!(matches!(tape.backward(det), Err(Error::Graph(_))));
}

#[test]
fn adam_examples() {
    let mut store = ParamStore::<f64>::new();
    let id = store.register("p", Tensor::scalar(1.0)).unwrap();
    let mut adam = AdamState::new(AdamConfig::with_lr(0.1), vec![id], &store);
    assert!(adam.step(&mut store).is_err());
    store.accumulate_grad(id, &Tensor::scalar(1.0)).unwrap();
    adam.step(&mut store).unwrap();
    assert!((store.value(id).data()[0] - 0.9).abs() < 1e-6);
    store.accumulate_grad(id, &Tensor::scalar(1.0)).unwrap();
    adam.step(&mut store).unwrap();
    assert!(store.value(id).data()[0] < 0.9);
}

fn loss_pair(tape: &mut Tape<f64>, x: fpsr_core::Var) -> (fpsr_core::Var, fpsr_core::Var) {
    let s = tape.sigmoid(x).unwrap();
    let l1 = tape.mean(s).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let l2 = tape.sum(sq).unwrap();
    (l1, l2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(
        data in prop::collection::vec(-2.0f64..2.0, 1..32),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let x0 = Tensor::new(&[data.len()], data).unwrap();
        let grad = |f: &dyn Fn(&mut Tape<f64>, fpsr_core::Var) -> fpsr_core::Var| {
            let mut tape = Tape::new();
            let x = tape.variable(x0.clone());
            let l = f(&mut tape, x);
            tape.backward(l).unwrap().wrt(x).unwrap().clone()
        };
        let g1 = grad(&|t, x| loss_pair(t, x).0);
        let g2 = grad(&|t, x| loss_pair(t, x).1);
        let combined = grad(&|t, x| {
            let (l1, l2) = loss_pair(t, x);
            let s1 = t.scale(l1, a).unwrap();
            let s2 = t.scale(l2, b).unwrap();
            t.add(s1, s2).unwrap()
        });
        for i in 0..x0.numel() {
            let expected = a * g1.data()[i] + b * g2.data()[i];
            prop_assert!((combined.data()[i] - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut g = rng(seed);
            let mut tape = Tape::<f64>::new();
            let x = tape.variable(uniform(&mut g, &[1, 2, 4, 4], -1.0, 1.0));
            let w = tape.variable(uniform(&mut g, &[2, 2, 3, 3], -1.0, 1.0));
            let b = tape.variable(uniform(&mut g, &[2], -1.0, 1.0));
            let y = tape.conv2d(x, w, b, 1, 1).unwrap();
            let y = tape.instance_norm(y, 1e-5).unwrap();
            let y = tape.leaky_relu(y, 0.2).unwrap();
            let l = tape.mean(y).unwrap();
            let g = tape.backward(l).unwrap();
            (tape.item(l), g.wrt(w).unwrap().clone(), g.wrt(x).unwrap().clone())
        };
        let (l1, gw1, gx1) = run();
        let (l2, gw2, gx2) = run();
        prop_assert_eq!(l1.to_bits(), l2.to_bits());
        prop_assert_eq!(gw1, gw2);
        prop_assert_eq!(gx1, gx2);
    }
}
