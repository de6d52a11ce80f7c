//! A small reverse-mode differentiation tape over dynamic `ndarray` tensors.
//!
//! The graph is built once per optimization run, then `forward` and
//! `backward` are executed every iteration with the buffers reused. The
//! element type is generic so the training graph (single precision) and the
//! finite-difference checks (double precision) share one code path.

pub mod adam;
pub mod fftconv;
mod ops;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use num_traits::FromPrimitive;

pub use adam::Adam;

/// Element types the tape can run on.
pub trait Scalar:
    ndarray::NdFloat + FromPrimitive + num_traits::ToPrimitive + std::iter::Sum + rustfft::FftNum
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand conversion from f64 literals into the tape's element type.
#[inline]
pub fn fl<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts into scalar type")
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    /// x:(cin,h,w), w:(cout,cin,kh,kw), b:(cout) → (cout,h',w')
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    /// Per-channel standardization over the spatial axes with affine params.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: T,
    },
    LeakyRelu {
        x: NodeId,
        slope: T,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    /// sin(omega·x)
    SinScaled {
        x: NodeId,
        omega: T,
    },
    UpsampleBilinear2x {
        x: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    /// Keep the top-left (h, w) window of every channel.
    CropHw {
        x: NodeId,
        h: usize,
        w: usize,
    },
    /// x:(n,in), w:(in,out), b:(out) → (n,out)
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    /// y = x / Σx
    NormalizeSum {
        x: NodeId,
    },
    /// Valid cross-correlation of an image stack with a single kernel.
    ConvValidXk {
        x: NodeId,
        k: NodeId,
    },
    /// Mean Huber penalty of (x − target).
    HuberVsConst {
        x: NodeId,
        target: ArrayD<T>,
        delta: T,
    },
    /// Mean squared residual against a constant target.
    MseVsConst {
        x: NodeId,
        target: ArrayD<T>,
    },
    /// Forward differences along both spatial axes, stacked over channels:
    /// (c,h,w) → (2c,h,w), replicate boundary (zero at the far edge).
    ForwardDiff {
        x: NodeId,
    },
    /// Σ|v| as a 0-d tensor.
    L1 {
        x: NodeId,
    },
    /// sqrt(Σv²) as a 0-d tensor.
    L2 {
        x: NodeId,
    },
    /// num / (den + eps) on 0-d tensors.
    RatioEps {
        num: NodeId,
        den: NodeId,
        eps: T,
    },
    /// Σ cᵢ·termᵢ on 0-d tensors.
    WeightedSum {
        terms: Vec<(NodeId, T)>,
    },
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: ArrayD<T>,
    grad: ArrayD<T>,
    requires_grad: bool,
    trainable: bool,
    /// Cached im2col matrix (convolutions) or standardized tensor (batchnorm).
    scratch_mat: Option<Array2<T>>,
    scratch_arr: Option<ArrayD<T>>,
    scratch_vals: Vec<T>,
    scratch_fft: Option<Box<fftconv::FftConvState<T>>>,
}

impl<T: Scalar> Node<T> {
    fn new(op: Op<T>, value: ArrayD<T>, requires_grad: bool, trainable: bool) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Node {
            op,
            value,
            grad,
            requires_grad,
            trainable,
            scratch_mat: None,
            scratch_arr: None,
            scratch_vals: Vec::new(),
            scratch_fft: None,
        }
    }
}

/// The differentiation tape.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<T>, shape: &[usize], requires_grad: bool) -> NodeId {
        let value = ArrayD::zeros(IxDyn(shape));
        self.nodes.push(Node::new(op, value, requires_grad, false));
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<T> {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> &ArrayD<T> {
        &self.nodes[id].grad
    }

    /// Scalar value of a 0-d node.
    pub fn scalar(&self, id: NodeId) -> T {
        *self.nodes[id]
            .value
            .iter()
            .next()
            .expect("scalar node has one element")
    }

    /// Overwrites a leaf's value (shape must match).
    pub fn set_value(&mut self, id: NodeId, value: &ArrayD<T>) {
        assert_eq!(self.nodes[id].value.shape(), value.shape());
        self.nodes[id].value.assign(value);
    }

    /// Mutable access to a leaf's value, for in-place optimizer updates.
    pub fn value_mut(&mut self, id: NodeId) -> &mut ArrayD<T> {
        &mut self.nodes[id].value
    }

    /// Registers a constant leaf.
    pub fn constant(&mut self, value: ArrayD<T>) -> NodeId {
        self.nodes.push(Node::new(Op::Leaf, value, false, false));
        self.nodes.len() - 1
    }

    /// Registers a trainable leaf.
    pub fn parameter(&mut self, value: ArrayD<T>) -> NodeId {
        self.nodes.push(Node::new(Op::Leaf, value, true, true));
        self.nodes.len() - 1
    }

    /// All trainable leaves in registration order.
    pub fn parameters(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].trainable)
            .collect()
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let (cin, h, wd) = dim3(self.value(x));
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be 4-d");
        assert_eq!(ws[1], cin, "conv weight channel mismatch");
        let (kh, kw) = (ws[2], ws[3]);
        let h_out = ops::conv_out_size(h, kh, stride, pad);
        let w_out = ops::conv_out_size(wd, kw, stride, pad);
        let req = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Op::Conv2d { x, w, b, stride, pad }, &[ws[0], h_out, w_out], req)
    }

    pub fn batchnorm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        let req = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                eps: fl(1e-5),
            },
            &shape,
            req,
        )
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        let req = self.needs(x);
        self.push(
            Op::LeakyRelu {
                x,
                slope: fl(slope),
            },
            &shape,
            req,
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        let req = self.needs(x);
        self.push(Op::Relu { x }, &shape, req)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        let req = self.needs(x);
        self.push(Op::Sigmoid { x }, &shape, req)
    }

    pub fn sin_scaled(&mut self, x: NodeId, omega: f64) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        let req = self.needs(x);
        self.push(
            Op::SinScaled {
                x,
                omega: fl(omega),
            },
            &shape,
            req,
        )
    }

    pub fn upsample_bilinear2x(&mut self, x: NodeId) -> NodeId {
        let (c, h, w) = dim3(self.value(x));
        let req = self.needs(x);
        self.push(Op::UpsampleBilinear2x { x }, &[c, 2 * h, 2 * w], req)
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ca, h, w) = dim3(self.value(a));
        let (cb, hb, wb) = dim3(self.value(b));
        assert_eq!((h, w), (hb, wb), "concat spatial mismatch");
        let req = self.needs(a) || self.needs(b);
        self.push(Op::ConcatChannels { a, b }, &[ca + cb, h, w], req)
    }

    pub fn crop_hw(&mut self, x: NodeId, h: usize, w: usize) -> NodeId {
        let (c, hx, wx) = dim3(self.value(x));
        assert!(h <= hx && w <= wx, "crop larger than input");
        let req = self.needs(x);
        self.push(Op::CropHw { x, h, w }, &[c, h, w], req)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(xs.len(), 2);
        assert_eq!(ws.len(), 2);
        assert_eq!(xs[1], ws[0], "linear shape mismatch");
        let req = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Op::Linear { x, w, b }, &[xs[0], ws[1]], req)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let n: usize = shape.iter().product();
        assert_eq!(self.value(x).len(), n, "reshape element count mismatch");
        let req = self.needs(x);
        self.push(Op::Reshape { x }, shape, req)
    }

    pub fn normalize_sum(&mut self, x: NodeId) -> NodeId {
        let shape = self.value(x).shape().to_vec();
        let req = self.needs(x);
        self.push(Op::NormalizeSum { x }, &shape, req)
    }

    pub fn conv_valid_xk(&mut self, x: NodeId, k: NodeId) -> NodeId {
        let (c, h, w) = dim3(self.value(x));
        let ks = self.value(k).shape().to_vec();
        assert_eq!(ks.len(), 2);
        assert!(h >= ks[0] && w >= ks[1], "kernel larger than canvas");
        let req = self.needs(x) || self.needs(k);
        self.push(
            Op::ConvValidXk { x, k },
            &[c, h - ks[0] + 1, w - ks[1] + 1],
            req,
        )
    }

    pub fn huber_vs_const(&mut self, x: NodeId, target: ArrayD<T>, delta: f64) -> NodeId {
        assert_eq!(self.value(x).shape(), target.shape());
        let req = self.needs(x);
        self.push(
            Op::HuberVsConst {
                x,
                target,
                delta: fl(delta),
            },
            &[],
            req,
        )
    }

    pub fn mse_vs_const(&mut self, x: NodeId, target: ArrayD<T>) -> NodeId {
        assert_eq!(self.value(x).shape(), target.shape());
        let req = self.needs(x);
        self.push(Op::MseVsConst { x, target }, &[], req)
    }

    pub fn forward_diff(&mut self, x: NodeId) -> NodeId {
        let (c, h, w) = dim3(self.value(x));
        let req = self.needs(x);
        self.push(Op::ForwardDiff { x }, &[2 * c, h, w], req)
    }

    pub fn l1_norm(&mut self, x: NodeId) -> NodeId {
        let req = self.needs(x);
        self.push(Op::L1 { x }, &[], req)
    }

    pub fn l2_norm(&mut self, x: NodeId) -> NodeId {
        let req = self.needs(x);
        self.push(Op::L2 { x }, &[], req)
    }

    pub fn ratio_eps(&mut self, num: NodeId, den: NodeId, eps: f64) -> NodeId {
        let req = self.needs(num) || self.needs(den);
        self.push(
            Op::RatioEps {
                num,
                den,
                eps: fl(eps),
            },
            &[],
            req,
        )
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let req = terms.iter().any(|(id, _)| self.needs(*id));
        let terms = terms.iter().map(|&(id, c)| (id, fl(c))).collect();
        self.push(Op::WeightedSum { terms }, &[], req)
    }

    /// Recomputes every node in insertion order.
    pub fn forward(&mut self) {
        for i in 0..self.nodes.len() {
            self.forward_node(i);
        }
    }

    /// Zeroes gradients and backpropagates from `loss` (a 0-d node).
    pub fn backward(&mut self, loss: NodeId) {
        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad.fill(T::zero());
            }
        }
        self.nodes[loss].grad.fill(T::one());
        for i in (0..=loss).rev() {
            if self.nodes[i].requires_grad {
                self.backward_node(i);
            }
        }
    }

    fn forward_node(&mut self, id: NodeId) {
        let (before, rest) = self.nodes.split_at_mut(id);
        let node = &mut rest[0];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let xv = view3(&before[*x].value);
                let ws = before[*w].value.shape();
                let (cout, cin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let (h_out, w_out) = {
                    let s = node.value.shape();
                    (s[1], s[2])
                };
                let col = node
                    .scratch_mat
                    .get_or_insert_with(|| Array2::zeros((cin * kh * kw, h_out * w_out)));
                ops::im2col(&xv, kh, kw, *stride, *pad, col);
                let w2 = before[*w]
                    .value
                    .view()
                    .into_shape((cout, cin * kh * kw))
                    .expect("contiguous weight");
                let mut out2 = node
                    .value
                    .view_mut()
                    .into_shape((cout, h_out * w_out))
                    .expect("contiguous output");
                ndarray::linalg::general_mat_mul(T::one(), &w2, &col.view(), T::zero(), &mut out2);
                let bias = &before[*b].value;
                for (c, mut row) in out2.axis_iter_mut(Axis(0)).enumerate() {
                    let bv = bias[c];
                    row.mapv_inplace(|v| v + bv);
                }
            }
            Op::BatchNorm { x, gamma, beta, eps } => {
                let xv = view3(&before[*x].value);
                let shape = before[*x].value.raw_dim();
                let xhat = node
                    .scratch_arr
                    .get_or_insert_with(|| ArrayD::zeros(shape));
                let mut xhat3 = view3_mut(xhat);
                let (means, invstds) = ops::batchnorm_forward(&xv, *eps, &mut xhat3);
                node.scratch_vals.clear();
                node.scratch_vals.extend_from_slice(&means);
                node.scratch_vals.extend_from_slice(&invstds);
                let gamma_v = &before[*gamma].value;
                let beta_v = &before[*beta].value;
                let c = xv.dim().0;
                let mut out = view3_mut(&mut node.value);
                for ch in 0..c {
                    let g = gamma_v[ch];
                    let bv = beta_v[ch];
                    let xh = xhat3_for(node.scratch_arr.as_ref().unwrap(), ch);
                    let mut out_plane = out.index_axis_mut(Axis(0), ch);
                    for (o, h) in out_plane.iter_mut().zip(xh.iter()) {
                        *o = g * *h + bv;
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                for (o, v) in node.value.iter_mut().zip(before[*x].value.iter()) {
                    *o = if *v > T::zero() { *v } else { s * *v };
                }
            }
            Op::Relu { x } => {
                for (o, v) in node.value.iter_mut().zip(before[*x].value.iter()) {
                    *o = if *v > T::zero() { *v } else { T::zero() };
                }
            }
            Op::Sigmoid { x } => {
                for (o, v) in node.value.iter_mut().zip(before[*x].value.iter()) {
                    *o = T::one() / (T::one() + (-*v).exp());
                }
            }
            Op::SinScaled { x, omega } => {
                let w = *omega;
                for (o, v) in node.value.iter_mut().zip(before[*x].value.iter()) {
                    *o = (w * *v).sin();
                }
            }
            Op::UpsampleBilinear2x { x } => {
                let xv = view3(&before[*x].value);
                let mut out = view3_mut(&mut node.value);
                ops::upsample_bilinear2x(&xv, &mut out);
            }
            Op::ConcatChannels { a, b } => {
                let av = view3(&before[*a].value);
                let bv = view3(&before[*b].value);
                let ca = av.dim().0;
                let mut out = view3_mut(&mut node.value);
                out.slice_mut(ndarray::s![..ca, .., ..]).assign(&av);
                out.slice_mut(ndarray::s![ca.., .., ..]).assign(&bv);
            }
            Op::CropHw { x, h, w } => {
                let xv = view3(&before[*x].value);
                let mut out = view3_mut(&mut node.value);
                out.assign(&xv.slice(ndarray::s![.., ..*h, ..*w]));
            }
            Op::Linear { x, w, b } => {
                let xv = view2(&before[*x].value);
                let wv = view2(&before[*w].value);
                let mut out = view2_mut(&mut node.value);
                ndarray::linalg::general_mat_mul(T::one(), &xv, &wv, T::zero(), &mut out);
                let bias = &before[*b].value;
                for mut row in out.axis_iter_mut(Axis(0)) {
                    for (o, bv) in row.iter_mut().zip(bias.iter()) {
                        *o = *o + *bv;
                    }
                }
            }
            Op::Reshape { x } => {
                for (o, v) in node.value.iter_mut().zip(before[*x].value.iter()) {
                    *o = *v;
                }
            }
            Op::NormalizeSum { x } => {
                let sum = before[*x].value.sum();
                node.scratch_vals.clear();
                node.scratch_vals.push(sum);
                for (o, v) in node.value.iter_mut().zip(before[*x].value.iter()) {
                    *o = *v / sum;
                }
            }
            Op::ConvValidXk { x, k } => {
                let xv = view3(&before[*x].value);
                let kv = view2(&before[*k].value);
                if kv.len() >= fftconv::FFT_CONV_MIN_KERNEL_AREA {
                    let (c, h, w) = xv.dim();
                    let mut state = node
                        .scratch_fft
                        .take()
                        .unwrap_or_else(|| Box::new(fftconv::FftConvState::new(c, h, w)));
                    let mut out = view3_mut(&mut node.value);
                    state.forward(&xv, &kv, &mut out);
                    node.scratch_fft = Some(state);
                } else {
                    let mut out = view3_mut(&mut node.value);
                    ops::conv_valid_xk(&xv, &kv, &mut out);
                }
            }
            Op::HuberVsConst { x, target, delta } => {
                let d = *delta;
                let mut acc = T::zero();
                for (v, t) in before[*x].value.iter().zip(target.iter()) {
                    let u = *v - *t;
                    let a = u.abs();
                    acc = acc
                        + if a <= d {
                            u * u / fl(2.0)
                        } else {
                            d * (a - d / fl(2.0))
                        };
                }
                let n = T::from_usize(target.len()).unwrap();
                node.value.fill(acc / n);
            }
            Op::MseVsConst { x, target } => {
                let mut acc = T::zero();
                for (v, t) in before[*x].value.iter().zip(target.iter()) {
                    let u = *v - *t;
                    acc = acc + u * u;
                }
                let n = T::from_usize(target.len()).unwrap();
                node.value.fill(acc / n);
            }
            Op::ForwardDiff { x } => {
                let xv = view3(&before[*x].value);
                let (c, h, w) = xv.dim();
                let mut out = view3_mut(&mut node.value);
                out.fill(T::zero());
                for ch in 0..c {
                    let plane = xv.index_axis(Axis(0), ch);
                    for i in 0..h {
                        for j in 0..w.saturating_sub(1) {
                            out[[ch, i, j]] = plane[[i, j + 1]] - plane[[i, j]];
                        }
                    }
                    for i in 0..h.saturating_sub(1) {
                        for j in 0..w {
                            out[[c + ch, i, j]] = plane[[i + 1, j]] - plane[[i, j]];
                        }
                    }
                }
            }
            Op::L1 { x } => {
                let acc: T = before[*x].value.iter().map(|v| v.abs()).sum();
                node.value.fill(acc);
            }
            Op::L2 { x } => {
                let acc: T = before[*x].value.iter().map(|v| *v * *v).sum();
                node.value.fill(acc.sqrt());
            }
            Op::RatioEps { num, den, eps } => {
                let n = scalar_of(&before[*num].value);
                let d = scalar_of(&before[*den].value);
                node.value.fill(n / (d + *eps));
            }
            Op::WeightedSum { terms } => {
                let mut acc = T::zero();
                for (id, c) in terms {
                    acc = acc + *c * scalar_of(&before[*id].value);
                }
                node.value.fill(acc);
            }
        }
    }

    /// Takes a parent's gradient buffer out so it can be accumulated into
    /// while the rest of the graph stays immutably borrowable.
    fn take_grad(&mut self, id: NodeId) -> ArrayD<T> {
        std::mem::replace(&mut self.nodes[id].grad, ArrayD::zeros(IxDyn(&[0])))
    }

    fn put_grad(&mut self, id: NodeId, grad: ArrayD<T>) {
        self.nodes[id].grad = grad;
    }

    fn backward_node(&mut self, id: NodeId) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let ws = self.nodes[w].value.shape().to_vec();
                let (cout, cin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let (h_out, w_out) = {
                    let s = self.nodes[id].value.shape();
                    (s[1], s[2])
                };
                if self.needs(b) {
                    let mut gb = self.take_grad(b);
                    {
                        let dout = self.nodes[id]
                            .grad
                            .view()
                            .into_shape((cout, h_out * w_out))
                            .unwrap();
                        for (c, row) in dout.axis_iter(Axis(0)).enumerate() {
                            gb[c] = gb[c] + row.sum();
                        }
                    }
                    self.put_grad(b, gb);
                }
                if self.needs(w) {
                    let mut gw = self.take_grad(w);
                    {
                        let dout = self.nodes[id]
                            .grad
                            .view()
                            .into_shape((cout, h_out * w_out))
                            .unwrap();
                        let col = self.nodes[id].scratch_mat.as_ref().expect("forward ran");
                        let mut gw2 = gw
                            .view_mut()
                            .into_shape((cout, cin * kh * kw))
                            .unwrap();
                        ndarray::linalg::general_mat_mul(
                            T::one(),
                            &dout,
                            &col.t(),
                            T::one(),
                            &mut gw2,
                        );
                    }
                    self.put_grad(w, gw);
                }
                if self.needs(x) {
                    let mut dcol = Array2::zeros((cin * kh * kw, h_out * w_out));
                    {
                        let dout = self.nodes[id]
                            .grad
                            .view()
                            .into_shape((cout, h_out * w_out))
                            .unwrap();
                        let w2 = self.nodes[w]
                            .value
                            .view()
                            .into_shape((cout, cin * kh * kw))
                            .unwrap();
                        ndarray::linalg::general_mat_mul(
                            T::one(),
                            &w2.t(),
                            &dout,
                            T::zero(),
                            &mut dcol.view_mut(),
                        );
                    }
                    let mut gx = self.take_grad(x);
                    ops::col2im_add(&dcol.view(), kh, kw, stride, pad, &mut view3_mut(&mut gx));
                    self.put_grad(x, gx);
                }
            }
            Op::BatchNorm { x, gamma, beta, eps: _ } => {
                let c = self.nodes[id].value.shape()[0];
                let hw = self.nodes[id].value.len() / c;
                let n = T::from_usize(hw).unwrap();
                if self.needs(beta) {
                    let mut gb = self.take_grad(beta);
                    {
                        let dout = view3(&self.nodes[id].grad);
                        for ch in 0..c {
                            gb[ch] = gb[ch] + dout.index_axis(Axis(0), ch).sum();
                        }
                    }
                    self.put_grad(beta, gb);
                }
                if self.needs(gamma) {
                    let mut gg = self.take_grad(gamma);
                    {
                        let dout = view3(&self.nodes[id].grad);
                        let xhat = view3(self.nodes[id].scratch_arr.as_ref().unwrap());
                        for ch in 0..c {
                            let mut acc = T::zero();
                            for (g, h) in dout
                                .index_axis(Axis(0), ch)
                                .iter()
                                .zip(xhat.index_axis(Axis(0), ch).iter())
                            {
                                acc = acc + *g * *h;
                            }
                            gg[ch] = gg[ch] + acc;
                        }
                    }
                    self.put_grad(gamma, gg);
                }
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    {
                        let dout = view3(&self.nodes[id].grad);
                        let xhat = view3(self.nodes[id].scratch_arr.as_ref().unwrap());
                        let gamma_v = &self.nodes[gamma].value;
                        let invstds = &self.nodes[id].scratch_vals[c..2 * c];
                        let mut gx3 = view3_mut(&mut gx);
                        for ch in 0..c {
                            let g = gamma_v[ch];
                            let invstd = invstds[ch];
                            let dplane = dout.index_axis(Axis(0), ch);
                            let hplane = xhat.index_axis(Axis(0), ch);
                            let mut sum_d = T::zero();
                            let mut sum_dh = T::zero();
                            for (dv, hv) in dplane.iter().zip(hplane.iter()) {
                                sum_d = sum_d + *dv;
                                sum_dh = sum_dh + *dv * *hv;
                            }
                            let mean_d = sum_d / n;
                            let mean_dh = sum_dh / n;
                            let mut out_plane = gx3.index_axis_mut(Axis(0), ch);
                            for ((o, dv), hv) in
                                out_plane.iter_mut().zip(dplane.iter()).zip(hplane.iter())
                            {
                                *o = *o + g * invstd * (*dv - mean_d - *hv * mean_dh);
                            }
                        }
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    for ((o, g), v) in gx
                        .iter_mut()
                        .zip(self.nodes[id].grad.iter())
                        .zip(self.nodes[x].value.iter())
                    {
                        *o = *o + if *v > T::zero() { *g } else { slope * *g };
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::Relu { x } => {
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    for ((o, g), v) in gx
                        .iter_mut()
                        .zip(self.nodes[id].grad.iter())
                        .zip(self.nodes[x].value.iter())
                    {
                        if *v > T::zero() {
                            *o = *o + *g;
                        }
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    for ((o, g), y) in gx
                        .iter_mut()
                        .zip(self.nodes[id].grad.iter())
                        .zip(self.nodes[id].value.iter())
                    {
                        *o = *o + *g * *y * (T::one() - *y);
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::SinScaled { x, omega } => {
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    for ((o, g), v) in gx
                        .iter_mut()
                        .zip(self.nodes[id].grad.iter())
                        .zip(self.nodes[x].value.iter())
                    {
                        *o = *o + *g * omega * (omega * *v).cos();
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::UpsampleBilinear2x { x } => {
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    ops::upsample_bilinear2x_adj(
                        &view3(&self.nodes[id].grad),
                        &mut view3_mut(&mut gx),
                    );
                    self.put_grad(x, gx);
                }
            }
            Op::ConcatChannels { a, b } => {
                let ca = self.nodes[a].value.shape()[0];
                if self.needs(a) {
                    let mut ga = self.take_grad(a);
                    {
                        let dout = view3(&self.nodes[id].grad);
                        let mut ga3 = view3_mut(&mut ga);
                        ga3 += &dout.slice(ndarray::s![..ca, .., ..]);
                    }
                    self.put_grad(a, ga);
                }
                if self.needs(b) {
                    let mut gb = self.take_grad(b);
                    {
                        let dout = view3(&self.nodes[id].grad);
                        let mut gb3 = view3_mut(&mut gb);
                        gb3 += &dout.slice(ndarray::s![ca.., .., ..]);
                    }
                    self.put_grad(b, gb);
                }
            }
            Op::CropHw { x, h, w } => {
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    {
                        let dout = view3(&self.nodes[id].grad);
                        let mut gx3 = view3_mut(&mut gx);
                        let mut region = gx3.slice_mut(ndarray::s![.., ..h, ..w]);
                        region += &dout;
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::Linear { x, w, b } => {
                if self.needs(b) {
                    let mut gb = self.take_grad(b);
                    {
                        let dout = view2(&self.nodes[id].grad);
                        for row in dout.axis_iter(Axis(0)) {
                            for (o, g) in gb.iter_mut().zip(row.iter()) {
                                *o = *o + *g;
                            }
                        }
                    }
                    self.put_grad(b, gb);
                }
                if self.needs(w) {
                    let mut gw = self.take_grad(w);
                    {
                        let dout = view2(&self.nodes[id].grad);
                        let xv = view2(&self.nodes[x].value);
                        let mut gw2 = view2_mut(&mut gw);
                        ndarray::linalg::general_mat_mul(
                            T::one(),
                            &xv.t(),
                            &dout,
                            T::one(),
                            &mut gw2,
                        );
                    }
                    self.put_grad(w, gw);
                }
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    {
                        let dout = view2(&self.nodes[id].grad);
                        let wv = view2(&self.nodes[w].value);
                        let mut gx2 = view2_mut(&mut gx);
                        ndarray::linalg::general_mat_mul(
                            T::one(),
                            &dout,
                            &wv.t(),
                            T::one(),
                            &mut gx2,
                        );
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::Reshape { x } => {
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    for (o, g) in gx.iter_mut().zip(self.nodes[id].grad.iter()) {
                        *o = *o + *g;
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::NormalizeSum { x } => {
                if self.needs(x) {
                    let sum = self.nodes[id].scratch_vals[0];
                    let mut dot = T::zero();
                    for (g, y) in self.nodes[id]
                        .grad
                        .iter()
                        .zip(self.nodes[id].value.iter())
                    {
                        dot = dot + *g * *y;
                    }
                    let mut gx = self.take_grad(x);
                    for (o, g) in gx.iter_mut().zip(self.nodes[id].grad.iter()) {
                        *o = *o + (*g - dot) / sum;
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::ConvValidXk { x, k } => {
                if let Some(mut state) = self.nodes[id].scratch_fft.take() {
                    // One dout spectrum feeds both gradients.
                    let needs_k = self.needs(k);
                    let needs_x = self.needs(x);
                    let mut gk = if needs_k { Some(self.take_grad(k)) } else { None };
                    let mut gx = if needs_x { Some(self.take_grad(x)) } else { None };
                    {
                        let dout = view3(&self.nodes[id].grad);
                        let mut gk_view = gk.as_mut().map(|g| view2_mut(g));
                        let mut gx_view = gx.as_mut().map(|g| view3_mut(g));
                        state.backward(&dout, gk_view.as_mut(), gx_view.as_mut());
                    }
                    if let Some(g) = gk {
                        self.put_grad(k, g);
                    }
                    if let Some(g) = gx {
                        self.put_grad(x, g);
                    }
                    self.nodes[id].scratch_fft = Some(state);
                } else {
                    if self.needs(k) {
                        let mut gk = self.take_grad(k);
                        ops::conv_valid_xk_grad_k(
                            &view3(&self.nodes[x].value),
                            &view3(&self.nodes[id].grad),
                            &mut view2_mut(&mut gk),
                        );
                        self.put_grad(k, gk);
                    }
                    if self.needs(x) {
                        let mut gx = self.take_grad(x);
                        ops::conv_valid_xk_grad_x(
                            &view2(&self.nodes[k].value),
                            &view3(&self.nodes[id].grad),
                            &mut view3_mut(&mut gx),
                        );
                        self.put_grad(x, gx);
                    }
                }
            }
            Op::HuberVsConst { x, target, delta } => {
                if self.needs(x) {
                    let g = scalar_of(&self.nodes[id].grad);
                    let n = T::from_usize(target.len()).unwrap();
                    let scale = g / n;
                    let mut gx = self.take_grad(x);
                    for ((o, v), t) in gx
                        .iter_mut()
                        .zip(self.nodes[x].value.iter())
                        .zip(target.iter())
                    {
                        let u = *v - *t;
                        let psi = if u.abs() <= delta {
                            u
                        } else if u > T::zero() {
                            delta
                        } else {
                            -delta
                        };
                        *o = *o + scale * psi;
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::MseVsConst { x, target } => {
                if self.needs(x) {
                    let g = scalar_of(&self.nodes[id].grad);
                    let n = T::from_usize(target.len()).unwrap();
                    let scale = g * fl::<T>(2.0) / n;
                    let mut gx = self.take_grad(x);
                    for ((o, v), t) in gx
                        .iter_mut()
                        .zip(self.nodes[x].value.iter())
                        .zip(target.iter())
                    {
                        *o = *o + scale * (*v - *t);
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::ForwardDiff { x } => {
                if self.needs(x) {
                    let mut gx = self.take_grad(x);
                    {
                        let dout = view3(&self.nodes[id].grad);
                        let mut gx3 = view3_mut(&mut gx);
                        let (c, h, w) = gx3.dim();
                        for ch in 0..c {
                            for i in 0..h {
                                for j in 0..w.saturating_sub(1) {
                                    let g = dout[[ch, i, j]];
                                    gx3[[ch, i, j + 1]] = gx3[[ch, i, j + 1]] + g;
                                    gx3[[ch, i, j]] = gx3[[ch, i, j]] - g;
                                }
                            }
                            for i in 0..h.saturating_sub(1) {
                                for j in 0..w {
                                    let g = dout[[c + ch, i, j]];
                                    gx3[[ch, i + 1, j]] = gx3[[ch, i + 1, j]] + g;
                                    gx3[[ch, i, j]] = gx3[[ch, i, j]] - g;
                                }
                            }
                        }
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::L1 { x } => {
                if self.needs(x) {
                    let g = scalar_of(&self.nodes[id].grad);
                    let mut gx = self.take_grad(x);
                    for (o, v) in gx.iter_mut().zip(self.nodes[x].value.iter()) {
                        if *v > T::zero() {
                            *o = *o + g;
                        } else if *v < T::zero() {
                            *o = *o - g;
                        }
                    }
                    self.put_grad(x, gx);
                }
            }
            Op::L2 { x } => {
                if self.needs(x) {
                    let g = scalar_of(&self.nodes[id].grad);
                    let l2 = scalar_of(&self.nodes[id].value);
                    if l2 > T::zero() {
                        let scale = g / l2;
                        let mut gx = self.take_grad(x);
                        for (o, v) in gx.iter_mut().zip(self.nodes[x].value.iter()) {
                            *o = *o + scale * *v;
                        }
                        self.put_grad(x, gx);
                    }
                }
            }
            Op::RatioEps { num, den, eps } => {
                let g = scalar_of(&self.nodes[id].grad);
                let n = scalar_of(&self.nodes[num].value);
                let d = scalar_of(&self.nodes[den].value) + eps;
                if self.needs(num) {
                    let mut gn = self.take_grad(num);
                    gn.fill(scalar_of(&gn) + g / d);
                    self.put_grad(num, gn);
                }
                if self.needs(den) {
                    let mut gd = self.take_grad(den);
                    gd.fill(scalar_of(&gd) - g * n / (d * d));
                    self.put_grad(den, gd);
                }
            }
            Op::WeightedSum { terms } => {
                let g = scalar_of(&self.nodes[id].grad);
                for (tid, c) in terms {
                    if self.needs(tid) {
                        let mut gt = self.take_grad(tid);
                        gt.fill(scalar_of(&gt) + g * c);
                        self.put_grad(tid, gt);
                    }
                }
            }
        }
    }
}

fn scalar_of<T: Scalar>(arr: &ArrayD<T>) -> T {
    *arr.iter().next().expect("0-d array")
}

fn dim3<T: Scalar>(arr: &ArrayD<T>) -> (usize, usize, usize) {
    let s = arr.shape();
    assert_eq!(s.len(), 3, "expected a 3-d tensor, got {s:?}");
    (s[0], s[1], s[2])
}

fn view3<T: Scalar>(arr: &ArrayD<T>) -> ndarray::ArrayView3<'_, T> {
    arr.view().into_dimensionality().expect("3-d tensor")
}

fn view3_mut<T: Scalar>(arr: &mut ArrayD<T>) -> ndarray::ArrayViewMut3<'_, T> {
    arr.view_mut().into_dimensionality().expect("3-d tensor")
}

fn view2<T: Scalar>(arr: &ArrayD<T>) -> ndarray::ArrayView2<'_, T> {
    arr.view().into_dimensionality().expect("2-d tensor")
}

fn view2_mut<T: Scalar>(arr: &mut ArrayD<T>) -> ndarray::ArrayViewMut2<'_, T> {
    arr.view_mut().into_dimensionality().expect("2-d tensor")
}

fn xhat3_for<T: Scalar>(arr: &ArrayD<T>, ch: usize) -> ndarray::ArrayView2<'_, T> {
    view3(arr).index_axis_move(Axis(0), ch)
}

/// Timing hooks for the data-term convolution kernels (bench support).
pub mod ops_bench {
    use ndarray::{Array2, Array3};
    use std::time::Instant;

    pub fn conv_valid_bench(h: usize, w: usize, kh: usize, kw: usize, reps: usize) -> f64 {
        let x = Array3::<f32>::from_elem((1, h, w), 0.5);
        let k = Array2::<f32>::from_elem((kh, kw), 1.0 / (kh * kw) as f32);
        let mut out = Array3::<f32>::zeros((1, h - kh + 1, w - kw + 1));
        let t = Instant::now();
        for _ in 0..reps {
            super::ops::conv_valid_xk(&x.view(), &k.view(), &mut out.view_mut());
        }
        1000.0 * t.elapsed().as_secs_f64() / reps as f64
    }

    pub fn conv_valid_grads_bench(
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        reps: usize,
    ) -> (f64, f64) {
        let x = Array3::<f32>::from_elem((1, h, w), 0.5);
        let k = Array2::<f32>::from_elem((kh, kw), 1.0 / (kh * kw) as f32);
        let dout = Array3::<f32>::from_elem((1, h - kh + 1, w - kw + 1), 1.0);
        let mut dk = Array2::<f32>::zeros((kh, kw));
        let t = Instant::now();
        for _ in 0..reps {
            super::ops::conv_valid_xk_grad_k(&x.view(), &dout.view(), &mut dk.view_mut());
        }
        let gk = 1000.0 * t.elapsed().as_secs_f64() / reps as f64;
        let mut dx = Array3::<f32>::zeros((1, h, w));
        let t = Instant::now();
        for _ in 0..reps {
            super::ops::conv_valid_xk_grad_x(&k.view(), &dout.view(), &mut dx.view_mut());
        }
        let gx = 1000.0 * t.elapsed().as_secs_f64() / reps as f64;
        (gk, gx)
    }
}
