//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value. [`Tape::backward`]
//! walks the nodes in reverse record order, so each node is visited once.
//! A tape lives for one forward/backward pass and is dropped (or cleared)
//! after the optimizer step.

mod kernels;
mod params;

pub use params::{ParamId, ParamStore, Parameter};

use kernels::ConvGeometry;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Abs(Var),
    Sqrt(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SubScalar(Var, Var),
    UpsampleNearest(Var, usize),
    Mean(Var),
    Sum(Var),
    Concat(Vec<Var>),
    SliceChannels(Var, usize),
    Reshape(Var),
    InstanceNorm(Var, Vec<T>),
    Softmax(Var),
    ChannelScale(Var, Var),
    HaarAnalysis(Var, [[f64; 4]; 4]),
    HaarSynthesis(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Record of executed operations for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

/// Result of [`Tape::backward`]: the gradient of the loss w.r.t. every node
/// that requires one.
#[derive(Debug, Clone)]
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(Var, ParamId)>,
}

impl<T: Element> Gradients<T> {
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradients of parameter leaves, in record order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|&(v, id)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }

    /// Adds every parameter gradient into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, g) in self.params() {
            store.accumulate_grad(id, g)?;
        }
        Ok(())
    }
}

fn shape_err(op: &str, msg: impl std::fmt::Display) -> Error {
    Error::Shape(format!("{op}: {msg}"))
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, var: Var) -> T {
        self.value(var).data()[0]
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true, None)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false, None)
    }

    /// Binds a stored parameter. Frozen bindings act as constants and never
    /// produce a gradient for the parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId, trainable: bool) -> Var {
        let value = store.value(id).clone();
        if trainable {
            self.leaf(value, true, Some(id))
        } else {
            self.leaf(value, false, None)
        }
    }

    /// Copies the value of `var` into a new constant leaf, cutting the graph.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.constant(value)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{name} produced a non-finite value")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn unary(&mut self, name: &str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(name, value, op, &[x])
    }

    // ---- convolution and dense -------------------------------------------

    /// 2-d cross-correlation with zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4()?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4()?;
        if wcin != cin {
            return Err(shape_err(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if self.value(bias).numel() != cout {
            return Err(shape_err(
                "conv2d",
                format!("bias has {} entries, expected {cout}", self.value(bias).numel()),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(shape_err(
                "conv2d",
                format!("padded input {h}x{w} (pad {padding}) smaller than kernel {kh}x{kw}"),
            ));
        }
        let geom = ConvGeometry {
            batch: n,
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let data = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[n, cout, geom.out_h, geom.out_w], data)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &[input, weight, bias],
        )
    }

    /// `out[n, g] = Σ_f input[n, f] · weight[g, f] + bias[g]`
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, f) = match self.shape(input) {
            &[n, f] => (n, f),
            s => return Err(shape_err("dense", format!("input must be N×F, got {s:?}"))),
        };
        let (g, wf) = match self.shape(weight) {
            &[g, wf] => (g, wf),
            s => return Err(shape_err("dense", format!("weight must be G×F, got {s:?}"))),
        };
        if wf != f {
            return Err(shape_err(
                "dense",
                format!("input has {f} features but weight expects {wf}"),
            ));
        }
        if self.value(bias).numel() != g {
            return Err(shape_err("dense", format!("bias must have {g} entries")));
        }
        let data = kernels::dense_forward(
            n,
            f,
            g,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[n, g], data)?;
        self.push(
            "dense",
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        )
    }

    // ---- elementwise -----------------------------------------------------

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::c(slope);
        self.unary(
            "leaky_relu",
            x,
            |v| if v > T::zero() { v } else { v * s },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let k = T::c(c);
        self.unary("scale", x, |v| v * k, Op::Affine(x, c))
    }

    /// `c · x + shift`
    pub fn affine(&mut self, x: Var, c: f64, shift: f64) -> Result<Var> {
        let (k, s) = (T::c(c), T::c(shift));
        self.unary("affine", x, |v| v * k + s, Op::Affine(x, c))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, |v| v.abs(), Op::Abs(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Numeric("sqrt of a negative value".into()));
        }
        self.unary("sqrt", x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::Numeric("log of a non-positive value".into()));
        }
        self.unary("log", x, |v| v.ln(), Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (l, h) = (T::c(lo), T::c(hi));
        self.unary("clamp", x, |v| v.max(l).min(h), Op::Clamp(x, lo, hi))
    }

    /// `x - s` where `s` is a one-element tensor.
    pub fn sub_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err("sub_scalar", "subtrahend must hold one element"));
        }
        let k = self.item(s);
        self.unary("sub_scalar", x, |v| v - k, Op::SubScalar(x, s))
    }

    // ---- resampling and reductions ---------------------------------------

    /// Replicates every pixel into a `factor`×`factor` block.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(shape_err("upsample_nearest", "factor must be at least 1"));
        }
        let [n, c, h, w] = self.value(x).dims4()?;
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in src.chunks_exact(h * w) {
            for oy in 0..oh {
                let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
                for ox in 0..ow {
                    out.push(row[ox / factor]);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        self.push(
            "upsample_nearest",
            value,
            Op::UpsampleNearest(x, factor),
            &[x],
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).mean());
        self.push("mean", value, Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum(x), &[x])
    }

    // ---- structural ------------------------------------------------------

    /// Concatenates N×Cᵢ×H×W tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_channels", "no inputs"))?;
        let [n, _, h, w] = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err(
                    "concat_channels",
                    format!("{:?} incompatible with {:?}", self.shape(p), self.shape(first)),
                ));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (&p, &c) in parts.iter().zip(&channels) {
                let src = self.value(p).data();
                out.extend_from_slice(&src[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::new(&[n, total, h, w], out)?;
        self.push("concat_channels", value, Op::Concat(parts.to_vec()), parts)
    }

    /// Channels `start..start+len` of an N×C×H×W tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if len == 0 || start + len > c {
            return Err(shape_err(
                "slice_channels",
                format!("range {start}..{} outside {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let off = (b * c + start) * plane;
            out.extend_from_slice(&src[off..off + len * plane]);
        }
        let value = Tensor::new(&[n, len, h, w], out)?;
        self.push("slice_channels", value, Op::SliceChannels(x, start), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    // ---- normalization and gating ----------------------------------------

    /// Per-sample, per-channel standardization without affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let [_, _, h, w] = self.value(x).dims4()?;
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        let mut inv_stds = Vec::with_capacity(src.len() / plane);
        let inv_n = T::c(1.0 / plane as f64);
        for p in src.chunks_exact(plane) {
            let mean = p.iter().copied().sum::<T>() * inv_n;
            let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let inv = (var + T::c(eps)).sqrt().recip();
            inv_stds.push(inv);
            out.extend(p.iter().map(|&v| (v - mean) * inv));
        }
        let value = Tensor::new(self.shape(x), out)?;
        self.push("instance_norm", value, Op::InstanceNorm(x, inv_stds), &[x])
    }

    /// Softmax over all elements of `x`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let max = src
            .data()
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = src.data().iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let value = Tensor::new(src.shape(), exps.into_iter().map(|e| e / total).collect())?;
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    /// Multiplies channel `c` of an N×C×H×W tensor by `weights[c]`.
    pub fn channel_scale(&mut self, x: Var, weights: Var) -> Result<Var> {
        let [_, c, h, w] = self.value(x).dims4()?;
        if self.value(weights).numel() != c {
            return Err(shape_err(
                "channel_scale",
                format!("{} weights for {c} channels", self.value(weights).numel()),
            ));
        }
        let wts = self.value(weights).data();
        let plane = h * w;
        let data = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .enumerate()
            .flat_map(|(i, p)| {
                let k = wts[i % c];
                p.iter().map(move |&v| v * k)
            })
            .collect();
        let value = Tensor::new(self.shape(x), data)?;
        self.push(
            "channel_scale",
            value,
            Op::ChannelScale(x, weights),
            &[x, weights],
        )
    }

    // ---- 2×2 block transforms --------------------------------------------

    /// Stride-2 analysis with four fixed 2×2 filters: N×1×h×w → N×4×(h/2)×(w/2).
    ///
    /// `taps[k][2p + q]` weights pixel `(2i + p, 2j + q)` for output channel `k`.
    pub fn block_analysis(&mut self, x: Var, taps: [[f64; 4]; 4]) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if c != 1 {
            return Err(shape_err("block_analysis", format!("expected 1 channel, got {c}")));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(
                "block_analysis",
                format!("image sides must be even, got {h}x{w}"),
            ));
        }
        let t: Vec<[T; 4]> = taps.iter().map(|k| k.map(T::c)).collect();
        let (bh, bw) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * 4 * bh * bw];
        for b in 0..n {
            let img = &src[b * h * w..(b + 1) * h * w];
            for i in 0..bh {
                for j in 0..bw {
                    let px = [
                        img[2 * i * w + 2 * j],
                        img[2 * i * w + 2 * j + 1],
                        img[(2 * i + 1) * w + 2 * j],
                        img[(2 * i + 1) * w + 2 * j + 1],
                    ];
                    for (k, tk) in t.iter().enumerate() {
                        out[((b * 4 + k) * bh + i) * bw + j] =
                            tk[0] * px[0] + tk[1] * px[1] + tk[2] * px[2] + tk[3] * px[3];
                    }
                }
            }
        }
        let value = Tensor::new(&[n, 4, bh, bw], out)?;
        self.push(
            "block_analysis",
            value,
            Op::HaarAnalysis(x, taps),
            &[x],
        )
    }

    /// Stride-2 synthesis: N×4×h×w bands and a 4×2×2 kernel → N×1×2h×2w,
    /// `out[2i + p, 2j + q] = Σ_k kernels[k, p, q] · bands[k, i, j]`.
    pub fn block_synthesis(&mut self, bands: Var, kernels: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(bands).dims4()?;
        if c != 4 {
            return Err(shape_err("block_synthesis", format!("expected 4 bands, got {c}")));
        }
        if self.value(kernels).numel() != 16 {
            return Err(shape_err("block_synthesis", "kernels must be 4×2×2"));
        }
        let kern = self.value(kernels).data();
        let src = self.value(bands).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * oh * ow];
        let plane = h * w;
        for b in 0..n {
            let img = &mut out[b * oh * ow..(b + 1) * oh * ow];
            for i in 0..h {
                for j in 0..w {
                    let coef: [T; 4] =
                        std::array::from_fn(|k| src[(b * 4 + k) * plane + i * w + j]);
                    for p in 0..2 {
                        for q in 0..2 {
                            let mut acc = T::zero();
                            for (k, &ck) in coef.iter().enumerate() {
                                acc = acc + kern[k * 4 + p * 2 + q] * ck;
                            }
                            img[(2 * i + p) * ow + 2 * j + q] = acc;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[n, 1, oh, ow], out)?;
        self.push(
            "block_synthesis",
            value,
            Op::HaarSynthesis(bands, kernels),
            &[bands, kernels],
        )
    }

    // ---- backward --------------------------------------------------------

    /// Back-propagates from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Err(Error::Graph(
                "loss does not depend on any differentiable tensor".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (earlier, rest) = grads.split_at_mut(i);
            let Some(dy) = rest[0].as_ref() else {
                continue;
            };
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: earlier,
            };
            self.backward_node(node, dy, &mut sink)?;
            // Intermediate gradients are only needed for leaves.
            rest[0] = None;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .filter_map(|(i, n)| n.param.map(|p| (Var(i), p)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, node: &Node<T>, dy: &Tensor<T>, sink: &mut GradSink<'_, T>) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let want = (sink.wants(*input), sink.wants(*weight), sink.wants(*bias));
                let g = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    dy.data(),
                    want,
                );
                sink.add_vec(*input, g.input)?;
                sink.add_vec(*weight, g.weight)?;
                sink.add_vec(*bias, g.bias)?;
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (n, f) = (self.shape(*input)[0], self.shape(*input)[1]);
                let g_out = self.shape(*weight)[0];
                let want = (sink.wants(*input), sink.wants(*weight), sink.wants(*bias));
                let g = kernels::dense_backward(
                    n,
                    f,
                    g_out,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    dy.data(),
                    want,
                );
                sink.add_vec(*input, g.input)?;
                sink.add_vec(*weight, g.weight)?;
                sink.add_vec(*bias, g.bias)?;
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::c(*slope);
                sink.add_with(*x, || {
                    self.value(*x)
                        .zip_map(dy, |v, d| if v > T::zero() { d } else { d * s })
                })?;
            }
            Op::Sigmoid(x) => {
                sink.add_with(*x, || y.zip_map(dy, |s, d| d * s * (T::one() - s)))?;
            }
            Op::Add(a, b) => {
                sink.add_with(*a, || Ok(dy.clone()))?;
                sink.add_with(*b, || Ok(dy.clone()))?;
            }
            Op::Sub(a, b) => {
                sink.add_with(*a, || Ok(dy.clone()))?;
                sink.add_with(*b, || Ok(dy.map(|d| -d)))?;
            }
            Op::Mul(a, b) => {
                sink.add_with(*a, || self.value(*b).zip_map(dy, |v, d| v * d))?;
                sink.add_with(*b, || self.value(*a).zip_map(dy, |v, d| v * d))?;
            }
            Op::Affine(x, c) => {
                let k = T::c(*c);
                sink.add_with(*x, || Ok(dy.map(|d| d * k)))?;
            }
            Op::Abs(x) => {
                sink.add_with(*x, || {
                    self.value(*x).zip_map(dy, |v, d| {
                        if v > T::zero() {
                            d
                        } else if v < T::zero() {
                            -d
                        } else {
                            T::zero()
                        }
                    })
                })?;
            }
            Op::Sqrt(x) => {
                sink.add_with(*x, || y.zip_map(dy, |s, d| d / (s + s)))?;
            }
            Op::Log(x) => {
                sink.add_with(*x, || self.value(*x).zip_map(dy, |v, d| d / v))?;
            }
            Op::Clamp(x, lo, hi) => {
                let (l, h) = (T::c(*lo), T::c(*hi));
                sink.add_with(*x, || {
                    self.value(*x)
                        .zip_map(dy, |v, d| if v >= l && v <= h { d } else { T::zero() })
                })?;
            }
            Op::SubScalar(x, s) => {
                sink.add_with(*x, || Ok(dy.clone()))?;
                sink.add_with(*s, || Ok(Tensor::full(self.shape(*s), -dy.sum())))?;
            }
            Op::UpsampleNearest(x, factor) => {
                let f = *factor;
                sink.add_with(*x, || {
                    let [n, c, h, w] = self.value(*x).dims4()?;
                    let ow = w * f;
                    let mut dx = vec![T::zero(); n * c * h * w];
                    for (plane, g) in dx.chunks_exact_mut(h * w).zip(dy.data().chunks_exact(h * w * f * f)) {
                        for oy in 0..h * f {
                            for ox in 0..ow {
                                let idx = (oy / f) * w + ox / f;
                                plane[idx] = plane[idx] + g[oy * ow + ox];
                            }
                        }
                    }
                    Tensor::new(&[n, c, h, w], dx)
                })?;
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let g = dy.data()[0] / T::c(n as f64);
                sink.add_with(*x, || Ok(Tensor::full(self.shape(*x), g)))?;
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                sink.add_with(*x, || Ok(Tensor::full(self.shape(*x), g)))?;
            }
            Op::Concat(parts) => {
                let [n, total, h, w] = dy.dims4()?;
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if sink.wants(p) {
                        let mut g = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let off = (b * total + offset) * plane;
                            g.extend_from_slice(&dy.data()[off..off + c * plane]);
                        }
                        sink.add(p, Tensor::new(self.shape(p), g)?)?;
                    }
                    offset += c;
                }
            }
            Op::SliceChannels(x, start) => {
                sink.add_with(*x, || {
                    let [n, c, h, w] = self.value(*x).dims4()?;
                    let len = dy.shape()[1];
                    let plane = h * w;
                    let mut g = vec![T::zero(); n * c * plane];
                    for b in 0..n {
                        let dst = (b * c + start) * plane;
                        let src = b * len * plane;
                        g[dst..dst + len * plane]
                            .copy_from_slice(&dy.data()[src..src + len * plane]);
                    }
                    Tensor::new(&[n, c, h, w], g)
                })?;
            }
            Op::Reshape(x) => {
                sink.add_with(*x, || dy.clone().reshape(self.shape(*x)))?;
            }
            Op::InstanceNorm(x, inv_stds) => {
                sink.add_with(*x, || {
                    let [_, _, h, w] = y.dims4()?;
                    let plane = h * w;
                    let inv_n = T::c(1.0 / plane as f64);
                    let mut g = Vec::with_capacity(y.numel());
                    for ((yp, dp), &inv) in y
                        .data()
                        .chunks_exact(plane)
                        .zip(dy.data().chunks_exact(plane))
                        .zip(inv_stds)
                    {
                        let mean_d = dp.iter().copied().sum::<T>() * inv_n;
                        let mean_dy = yp.iter().zip(dp).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
                        g.extend(
                            yp.iter()
                                .zip(dp)
                                .map(|(&yv, &d)| inv * (d - mean_d - yv * mean_dy)),
                        );
                    }
                    Tensor::new(y.shape(), g)
                })?;
            }
            Op::Softmax(x) => {
                sink.add_with(*x, || {
                    let dot: T = y.data().iter().zip(dy.data()).map(|(&a, &b)| a * b).sum();
                    y.zip_map(dy, |s, d| s * (d - dot))
                })?;
            }
            Op::ChannelScale(x, weights) => {
                let [n, c, h, w] = self.value(*x).dims4()?;
                let plane = h * w;
                let wts = self.value(*weights).data();
                sink.add_with(*x, || {
                    let data = dy
                        .data()
                        .chunks_exact(plane)
                        .enumerate()
                        .flat_map(|(i, p)| {
                            let k = wts[i % c];
                            p.iter().map(move |&d| d * k)
                        })
                        .collect();
                    Tensor::new(&[n, c, h, w], data)
                })?;
                sink.add_with(*weights, || {
                    let mut g = vec![T::zero(); c];
                    for (i, (xp, dp)) in self
                        .value(*x)
                        .data()
                        .chunks_exact(plane)
                        .zip(dy.data().chunks_exact(plane))
                        .enumerate()
                    {
                        let dot: T = xp.iter().zip(dp).map(|(&a, &b)| a * b).sum();
                        g[i % c] = g[i % c] + dot;
                    }
                    Tensor::new(self.shape(*weights), g)
                })?;
            }
            Op::HaarAnalysis(x, taps) => {
                sink.add_with(*x, || {
                    let [n, _, h, w] = self.value(*x).dims4()?;
                    let t: Vec<[T; 4]> = taps.iter().map(|k| k.map(T::c)).collect();
                    let (bh, bw) = (h / 2, w / 2);
                    let mut g = vec![T::zero(); n * h * w];
                    for b in 0..n {
                        let img = &mut g[b * h * w..(b + 1) * h * w];
                        for i in 0..bh {
                            for j in 0..bw {
                                let d: [T; 4] = std::array::from_fn(|k| {
                                    dy.data()[((b * 4 + k) * bh + i) * bw + j]
                                });
                                let offs = [
                                    2 * i * w + 2 * j,
                                    2 * i * w + 2 * j + 1,
                                    (2 * i + 1) * w + 2 * j,
                                    (2 * i + 1) * w + 2 * j + 1,
                                ];
                                for (pos, &o) in offs.iter().enumerate() {
                                    img[o] = (0..4).fold(T::zero(), |acc, k| acc + t[k][pos] * d[k]);
                                }
                            }
                        }
                    }
                    Tensor::new(&[n, 1, h, w], g)
                })?;
            }
            Op::HaarSynthesis(bands, kernels) => {
                let [n, _, h, w] = self.value(*bands).dims4()?;
                let (oh, ow) = (2 * h, 2 * w);
                let plane = h * w;
                let kern = self.value(*kernels).data();
                let src = self.value(*bands).data();
                let d = dy.data();
                sink.add_with(*bands, || {
                    let mut g = vec![T::zero(); n * 4 * plane];
                    for b in 0..n {
                        for i in 0..h {
                            for j in 0..w {
                                let o = b * oh * ow;
                                let dd = [
                                    d[o + 2 * i * ow + 2 * j],
                                    d[o + 2 * i * ow + 2 * j + 1],
                                    d[o + (2 * i + 1) * ow + 2 * j],
                                    d[o + (2 * i + 1) * ow + 2 * j + 1],
                                ];
                                for k in 0..4 {
                                    let kk = &kern[k * 4..k * 4 + 4];
                                    g[(b * 4 + k) * plane + i * w + j] = kk[0] * dd[0]
                                        + kk[1] * dd[1]
                                        + kk[2] * dd[2]
                                        + kk[3] * dd[3];
                                }
                            }
                        }
                    }
                    Tensor::new(&[n, 4, h, w], g)
                })?;
                sink.add_with(*kernels, || {
                    let mut g = vec![T::zero(); 16];
                    for b in 0..n {
                        for i in 0..h {
                            for j in 0..w {
                                let o = b * oh * ow;
                                let dd = [
                                    d[o + 2 * i * ow + 2 * j],
                                    d[o + 2 * i * ow + 2 * j + 1],
                                    d[o + (2 * i + 1) * ow + 2 * j],
                                    d[o + (2 * i + 1) * ow + 2 * j + 1],
                                ];
                                for k in 0..4 {
                                    let c = src[(b * 4 + k) * plane + i * w + j];
                                    for pos in 0..4 {
                                        g[k * 4 + pos] = g[k * 4 + pos] + c * dd[pos];
                                    }
                                }
                            }
                        }
                    }
                    Tensor::new(self.shape(*kernels), g)
                })?;
            }
        }
        Ok(())
    }
}

/// Accumulates gradients into nodes recorded before the one being processed.
struct GradSink<'a, T: Element> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
}

impl<T: Element> GradSink<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, g: Tensor<T>) -> Result<()> {
        if !g.is_finite() {
            return Err(Error::Numeric(
                "backward produced a non-finite gradient".into(),
            ));
        }
        match self.grads[v.0].as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => self.grads[v.0] = Some(g),
        }
        Ok(())
    }

    fn add_with(&mut self, v: Var, f: impl FnOnce() -> Result<Tensor<T>>) -> Result<()> {
        if self.wants(v) {
            let g = f()?;
            self.add(v, g)?;
        }
        Ok(())
    }

    fn add_vec(&mut self, v: Var, g: Option<Vec<T>>) -> Result<()> {
        if let Some(g) = g {
            let t = Tensor::new(self.nodes[v.0].value.shape(), g)?;
            self.add(v, t)?;
        }
        Ok(())
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
