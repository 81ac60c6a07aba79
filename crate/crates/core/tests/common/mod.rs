//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use fpsr_core::autodiff::{Tape, Var};
use fpsr_core::wavelet::WaveletFilters;
use fpsr_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-5;
pub const INSTANCES: u64 = 20;

pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One gradient-check instance: inputs and the function under test.
pub struct Case {
    pub op: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in [0.2, 1] and random sign, away from kinks at 0.
pub fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn forward_value(case: &Case, inputs: &[Tensor<f64>]) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).expect("forward");
    tape.value(out).clone()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Largest relative error between analytic and central-difference gradients
/// of `Σ out ⊙ R` (R a fixed random projection) over every input tensor.
///
/// Per input, the error is `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`.
pub fn gradcheck(case: &Case, seed: u64) -> f64 {
    let reference = forward_value(case, &case.inputs);
    let projection = uniform(&mut rng(seed ^ 0x5eed), reference.shape(), -1.0, 1.0);

    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).expect("forward");
    let r = tape.constant(projection.clone());
    let prod = tape.mul(out, r).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).expect("backward");

    let mut worst: f64 = 0.0;
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(case.inputs[k].shape()));
        let mut numeric = vec![0.0; case.inputs[k].numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = case.inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = case.inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let fp = dot(&forward_value(case, &plus), &projection);
            let fm = dot(&forward_value(case, &minus), &projection);
            *slot = (fp - fm) / (2.0 * FD_STEP);
        }
        let diff = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = analytic
            .data()
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

fn case(op: &'static str, inputs: Vec<Tensor<f64>>, build: Build) -> Case {
    Case { op, inputs, build }
}

/// Random instances of every differentiable tape operation for one seed.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let mut g = rng(seed);
    let mut cases = Vec::new();

    let n = g.random_range(1..=2);
    let cin = g.random_range(1..=2);
    let cout = g.random_range(1..=3);
    let k = g.random_range(1..=3);
    let size = g.random_range(k.max(3)..=4);
    let stride = g.random_range(1..=2);
    let padding = g.random_range(0..=1);
    cases.push(case(
        "conv2d",
        vec![
            uniform(&mut g, &[n, cin, size, size], -1.0, 1.0),
            uniform(&mut g, &[cout, cin, k, k], -1.0, 1.0),
            uniform(&mut g, &[cout], -1.0, 1.0),
        ],
        Box::new(move |t, v| t.conv2d(v[0], v[1], v[2], stride, padding)),
    ));

    let (n, f, o) = (g.random_range(1..=3), g.random_range(1..=6), g.random_range(1..=4));
    cases.push(case(
        "dense",
        vec![
            uniform(&mut g, &[n, f], -1.0, 1.0),
            uniform(&mut g, &[o, f], -1.0, 1.0),
            uniform(&mut g, &[o], -1.0, 1.0),
        ],
        Box::new(|t, v| t.dense(v[0], v[1], v[2])),
    ));

    let shape = [g.random_range(1..=2), g.random_range(1..=3), 3, g.random_range(2..=4)];
    let slope = g.random_range(0.05..0.5);
    cases.push(case(
        "leaky_relu",
        vec![signed_away_from_zero(&mut g, &shape)],
        Box::new(move |t, v| t.leaky_relu(v[0], slope)),
    ));
    cases.push(case(
        "sigmoid",
        vec![uniform(&mut g, &shape, -4.0, 4.0)],
        Box::new(|t, v| t.sigmoid(v[0])),
    ));
    for (op, build) in [
        ("add", Box::new(|t: &mut Tape<f64>, v: &[Var]| t.add(v[0], v[1])) as Build),
        ("sub", Box::new(|t: &mut Tape<f64>, v: &[Var]| t.sub(v[0], v[1]))),
        ("mul", Box::new(|t: &mut Tape<f64>, v: &[Var]| t.mul(v[0], v[1]))),
    ] {
        cases.push(case(
            op,
            vec![uniform(&mut g, &shape, -2.0, 2.0), uniform(&mut g, &shape, -2.0, 2.0)],
            build,
        ));
    }
    let c = g.random_range(-3.0..3.0);
    let shift = g.random_range(-1.0..1.0);
    cases.push(case(
        "scale",
        vec![uniform(&mut g, &shape, -2.0, 2.0)],
        Box::new(move |t, v| t.scale(v[0], c)),
    ));
    cases.push(case(
        "affine",
        vec![uniform(&mut g, &shape, -2.0, 2.0)],
        Box::new(move |t, v| t.affine(v[0], c, shift)),
    ));
    cases.push(case(
        "abs",
        vec![signed_away_from_zero(&mut g, &shape)],
        Box::new(|t, v| t.abs(v[0])),
    ));
    cases.push(case(
        "sqrt",
        vec![uniform(&mut g, &shape, 0.3, 3.0)],
        Box::new(|t, v| t.sqrt(v[0])),
    ));
    cases.push(case(
        "log",
        vec![uniform(&mut g, &shape, 0.3, 3.0)],
        Box::new(|t, v| t.log(v[0])),
    ));
    // keep samples at least 0.05 away from the clamp bounds
    let clamp_input = {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = g.random_range(-1.0..1.0);
                if (v.abs() - 0.5).abs() > 0.05 {
                    break v;
                }
            })
            .collect();
        Tensor::new(&shape, data).unwrap()
    };
    cases.push(case(
        "clamp",
        vec![clamp_input],
        Box::new(|t, v| t.clamp(v[0], -0.5, 0.5)),
    ));
    cases.push(case(
        "sub_scalar",
        vec![uniform(&mut g, &shape, -1.0, 1.0), uniform(&mut g, &[1], -1.0, 1.0)],
        Box::new(|t, v| t.sub_scalar(v[0], v[1])),
    ));

    let factor = g.random_range(1..=3);
    cases.push(case(
        "upsample_nearest",
        vec![uniform(&mut g, &[1, 2, 2, 3], -1.0, 1.0)],
        Box::new(move |t, v| t.upsample_nearest(v[0], factor)),
    ));
    cases.push(case(
        "mean",
        vec![uniform(&mut g, &shape, -1.0, 1.0)],
        Box::new(|t, v| t.mean(v[0])),
    ));
    cases.push(case(
        "sum",
        vec![uniform(&mut g, &shape, -1.0, 1.0)],
        Box::new(|t, v| t.sum(v[0])),
    ));

    let (n, h, w) = (g.random_range(1..=2), g.random_range(1..=3), g.random_range(1..=3));
    let parts = g.random_range(2..=3);
    let inputs = (0..parts)
        .map(|_| {
            let c = g.random_range(1..=3);
            uniform(&mut g, &[n, c, h, w], -1.0, 1.0)
        })
        .collect();
    cases.push(case(
        "concat_channels",
        inputs,
        Box::new(|t, v| t.concat_channels(v)),
    ));
    let c = g.random_range(2..=4);
    let start = g.random_range(0..c);
    let len = g.random_range(1..=c - start);
    cases.push(case(
        "slice_channels",
        vec![uniform(&mut g, &[n, c, h, w], -1.0, 1.0)],
        Box::new(move |t, v| t.slice_channels(v[0], start, len)),
    ));
    cases.push(case(
        "reshape",
        vec![uniform(&mut g, &[n, c, h, w], -1.0, 1.0)],
        Box::new(move |t, v| t.reshape(v[0], &[n, c * h * w])),
    ));

    let (n, c) = (g.random_range(1..=2), g.random_range(1..=3));
    cases.push(case(
        "instance_norm",
        vec![uniform(&mut g, &[n, c, 3, 3], -2.0, 2.0)],
        Box::new(|t, v| t.instance_norm(v[0], 1e-5)),
    ));
    let len = g.random_range(2..=8);
    cases.push(case(
        "softmax",
        vec![uniform(&mut g, &[len], -2.0, 2.0)],
        Box::new(|t, v| t.softmax(v[0])),
    ));
    cases.push(case(
        "channel_scale",
        vec![uniform(&mut g, &[n, c, 2, 3], -1.0, 1.0), uniform(&mut g, &[c], -2.0, 2.0)],
        Box::new(|t, v| t.channel_scale(v[0], v[1])),
    ));

    let (h, w) = (2 * g.random_range(1..=3), 2 * g.random_range(1..=3));
    let taps = WaveletFilters::init_haar(false).analysis_taps();
    cases.push(case(
        "block_analysis",
        vec![uniform(&mut g, &[n, 1, h, w], -1.0, 1.0)],
        Box::new(move |t, v| t.block_analysis(v[0], taps)),
    ));
    cases.push(case(
        "block_synthesis",
        vec![
            uniform(&mut g, &[1, 4, h / 2, w / 2], -1.0, 1.0),
            uniform(&mut g, &[4, 2, 2], -1.0, 1.0),
        ],
        Box::new(|t, v| t.block_synthesis(v[0], v[1])),
    ));
    cases
}

/// Small but complete training setup: ×2, 16×16 HR, shallow networks.
pub fn tiny_config(seed: u64) -> fpsr_core::TrainConfig {
    use fpsr_core::networks::{DiscriminatorConfig, GeneratorConfig};
    let mut c = fpsr_core::TrainConfig {
        scale: 2,
        hr_size: 16,
        batch_size: 2,
        iterations: 3,
        eval_every: 0,
        checkpoint_every: 0,
        seed,
        generator: GeneratorConfig {
            num_rrdb: 1,
            base_channels: 4,
            growth_channels: 4,
            ..GeneratorConfig::default()
        },
        discriminator: DiscriminatorConfig {
            num_conv: 4,
            base_channels: 4,
            fc_sizes: [8, 1],
            ..DiscriminatorConfig::default()
        },
        ..fpsr_core::TrainConfig::default()
    };
    c.normalize();
    c
}

/// Phantom pairs split train/val/test at 75/12.5/12.5.
pub fn phantom_splits(
    count: usize,
    scale: usize,
    hr: usize,
    seed: u64,
) -> [Vec<fpsr_core::data::ImagePair>; 3] {
    use fpsr_core::data::{build_pairs, DatasetSpec, ResampleMethod, Source, Split, SplitFractions};
    let spec = DatasetSpec {
        source: Source::Phantoms(count),
        scale,
        crop: hr,
        splits: SplitFractions([0.75, 0.125, 0.125]),
        seed,
        method: ResampleMethod::Bicubic,
    };
    let mut out: [Vec<_>; 3] = Default::default();
    for (pair, split) in build_pairs(&spec).unwrap() {
        let slot = match split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        out[slot].push(pair);
    }
    out
}

/// SHA-256 over the little-endian bytes of the given parameters.
pub fn hash_params(store: &fpsr_core::ParamStore<f32>, ids: &[fpsr_core::ParamId]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for &id in ids {
        for v in store.value(id).data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}
