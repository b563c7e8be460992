use super::conv::{self, ConvGrads};
use super::{Scalar, Tensor};
use crate::model::color;
use crate::model::nr;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which image supplies the chroma in colour recovery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    /// `M_enh · I_enh / M_low`, exactly as the recovery formula is written.
    LiteralEq5,
    /// `M_enh · I_low / M_low`: chroma of the low-frequency input.
    InputColor,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvT2 { x: Var, w: Var, b: Var },
    Prelu { x: Var, a: Var },
    Sigmoid(Var),
    Relu(Var),
    MaxPool2 { x: Var, arg: Vec<u32> },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    ChannelAffine { x: Var, scale: Vec<T> },
    ConcatChannels(Vec<Var>),
    Softplus(Var),
    NrBank { x: Var, sigma: Var, n: Var },
    ColorRecover { enh: Var, low: Var, mode: ColorMode },
    Mse(Var, Var),
    Tv(Var),
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward pass recorded for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse index order is a
/// valid topological order for the backward sweep.
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
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A constant: no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let y = conv::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad);
        let g = self.any_grad(&[x, w, b]);
        self.push(y, Op::Conv2d { x, w, b, stride, pad }, g)
    }

    /// 2×2 stride-2 transposed convolution (exact 2× upsampling).
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = conv::conv_t2_forward(self.value(x), self.value(w), self.value(b));
        let g = self.any_grad(&[x, w, b]);
        self.push(y, Op::ConvT2 { x, w, b }, g)
    }

    /// PReLU with a single learnable slope `a` (shape `[1]`).
    pub fn prelu(&mut self, x: Var, a: Var) -> Var {
        let slope = self.value(a).item();
        let y = self.value(x).map(|v| if v > T::zero() { v } else { slope * v });
        let g = self.any_grad(&[x, a]);
        self.push(y, Op::Prelu { x, a }, g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let g = self.any_grad(&[x]);
        self.push(y, Op::Sigmoid(x), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        let g = self.any_grad(&[x]);
        self.push(y, Op::Relu(x), g)
    }

    pub fn maxpool2(&mut self, x: Var) -> Var {
        let (y, arg) = conv::maxpool2_forward(self.value(x));
        let g = self.any_grad(&[x]);
        self.push(y, Op::MaxPool2 { x, arg }, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(y, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "shape mismatch in sub");
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p - q).collect();
        let y = Tensor::from_vec(va.shape(), data);
        let g = self.any_grad(&[a, b]);
        self.push(y, Op::Sub(a, b), g)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let y = self.value(x).map(|v| v * s);
        let g = self.any_grad(&[x]);
        self.push(y, Op::Scale(x, s), g)
    }

    /// Per-channel `x * scale[c] + shift[c]` with constant coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[T], shift: &[T]) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(scale.len(), c);
        assert_eq!(shift.len(), c);
        let mut y = self.value(x).clone();
        for (p, plane) in y.data_mut().chunks_mut(h * w).enumerate().take(n * c) {
            let ch = p % c;
            for v in plane {
                *v = *v * scale[ch] + shift[ch];
            }
        }
        let g = self.any_grad(&[x]);
        self.push(
            y,
            Op::ChannelAffine {
                x,
                scale: scale.to_vec(),
            },
            g,
        )
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let total_c: usize = parts.iter().map(|&p| self.value(p).dims4().1).sum();
        let mut data = Vec::with_capacity(n * total_c * h * w);
        for b in 0..n {
            for &p in parts {
                let (pn, pc, ph, pw) = self.value(p).dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat operands differ in shape");
                let len = pc * h * w;
                data.extend_from_slice(&self.value(p).data()[b * len..(b + 1) * len]);
            }
        }
        let y = Tensor::from_vec(&[n, total_c, h, w], data);
        let g = self.any_grad(parts);
        self.push(y, Op::ConcatChannels(parts.to_vec()), g)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let y = self.value(x).map(softplus);
        let g = self.any_grad(&[x]);
        self.push(y, Op::Softplus(x), g)
    }

    /// Applies every curve `k` of the bank to the 3-channel input and
    /// concatenates the responses: output channel `3k + c` holds curve `k`
    /// on input channel `c`.
    pub fn nr_bank(&mut self, x: Var, sigma: Var, n: Var) -> Var {
        let (b, c, h, w) = self.value(x).dims4();
        let sig = self.value(sigma).data().to_vec();
        let ex = self.value(n).data().to_vec();
        assert_eq!(sig.len(), ex.len(), "sigma and exponent banks differ in length");
        let k = sig.len();
        let plane = c * h * w;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(b * k * plane);
        for bi in 0..b {
            let src = &xs[bi * plane..(bi + 1) * plane];
            for kk in 0..k {
                out.extend(src.iter().map(|&v| nr::response(v, sig[kk], ex[kk])));
            }
        }
        let y = Tensor::from_vec(&[b, k * c, h, w], out);
        let g = self.any_grad(&[x, sigma, n]);
        self.push(y, Op::NrBank { x, sigma, n }, g)
    }

    pub fn color_recover(&mut self, enh: Var, low: Var, mode: ColorMode) -> Var {
        let (ve, vl) = (self.value(enh), self.value(low));
        assert_eq!(ve.shape(), vl.shape(), "colour recovery operands differ in shape");
        let (n, c, h, w) = ve.dims4();
        assert_eq!(c, 3, "colour recovery expects RGB");
        let mut y = Tensor::zeros(ve.shape());
        let plane = h * w;
        for b in 0..n {
            let base = b * 3 * plane;
            for p in 0..plane {
                let e = [ve.data()[base + p], ve.data()[base + plane + p], ve.data()[base + 2 * plane + p]];
                let l = [vl.data()[base + p], vl.data()[base + plane + p], vl.data()[base + 2 * plane + p]];
                let o = color::recover_pixel(e, l, mode);
                for ch in 0..3 {
                    y.data_mut()[base + ch * plane + p] = o[ch];
                }
            }
        }
        let g = self.any_grad(&[enh, low]);
        self.push(y, Op::ColorRecover { enh, low, mode }, g)
    }

    /// Mean squared error over all elements, as a `[1]` tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "shape mismatch in mse");
        let sum: T = va.data().iter().zip(vb.data()).map(|(&p, &q)| (p - q) * (p - q)).sum();
        let y = Tensor::scalar(sum / T::of(va.len() as f64));
        let g = self.any_grad(&[a, b]);
        self.push(y, Op::Mse(a, b), g)
    }

    /// Anisotropic total variation: mean |horizontal forward difference|
    /// plus mean |vertical forward difference|.
    pub fn tv(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(tv_value(self.value(x)));
        let g = self.any_grad(&[x]);
        self.push(y, Op::Tv(x), g)
    }

    /// `Σ wᵢ·termᵢ` over `[1]`-shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut s = T::zero();
        for &(v, w) in terms {
            assert_eq!(self.value(v).len(), 1, "weighted_sum operands must be scalars");
            s = s + w * self.value(v).item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let g = self.any_grad(&vars);
        self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), g)
    }

    /// Reverse sweep from a scalar `loss`, seeded with d(loss)=1.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gy);
                continue;
            }
            for (v, g) in self.node_backward(node, &gy) {
                accumulate(&mut grads[v.0], g);
            }
            // Interior gradients are not kept.
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn node_backward(&self, node: &Node<T>, gy: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b, stride, pad } => {
                let ConvGrads { dx, dw, db } = conv::conv2d_backward(
                    self.value(x),
                    self.value(w),
                    gy,
                    stride,
                    pad,
                    (self.wants(x), self.wants(w), self.wants(b)),
                );
                push_some(&mut out, x, dx);
                push_some(&mut out, w, dw);
                push_some(&mut out, b, db);
            }
            &Op::ConvT2 { x, w, b } => {
                let ConvGrads { dx, dw, db } = conv::conv_t2_backward(
                    self.value(x),
                    self.value(w),
                    gy,
                    (self.wants(x), self.wants(w), self.wants(b)),
                );
                push_some(&mut out, x, dx);
                push_some(&mut out, w, dw);
                push_some(&mut out, b, db);
            }
            &Op::Prelu { x, a } => {
                let xv = self.value(x);
                let slope = self.value(a).item();
                if self.wants(x) {
                    let d = xv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&v, &g)| if v > T::zero() { g } else { slope * g })
                        .collect();
                    out.push((x, Tensor::from_vec(xv.shape(), d)));
                }
                if self.wants(a) {
                    let s: T = xv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .filter(|(&v, _)| v <= T::zero())
                        .map(|(&v, &g)| v * g)
                        .sum();
                    out.push((a, Tensor::scalar(s)));
                }
            }
            &Op::Sigmoid(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                out.push((x, Tensor::from_vec(node.value.shape(), d)));
            }
            &Op::Relu(x) => {
                let d = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((x, Tensor::from_vec(node.value.shape(), d)));
            }
            Op::MaxPool2 { x, arg } => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                for (&idx, &g) in arg.iter().zip(gy.data()) {
                    d.data_mut()[idx as usize] = d.data()[idx as usize] + g;
                }
                out.push((*x, d));
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    out.push((a, gy.clone()));
                }
                if self.wants(b) {
                    out.push((b, gy.clone()));
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    out.push((a, gy.clone()));
                }
                if self.wants(b) {
                    out.push((b, gy.map(|g| -g)));
                }
            }
            &Op::Scale(x, s) => out.push((x, gy.map(|g| g * s))),
            Op::ChannelAffine { x, scale } => {
                let (_, c, h, w) = gy.dims4();
                let mut d = gy.clone();
                for (p, plane) in d.data_mut().chunks_mut(h * w).enumerate() {
                    let s = scale[p % c];
                    for v in plane {
                        *v = *v * s;
                    }
                }
                out.push((*x, d));
            }
            Op::ConcatChannels(parts) => {
                let (n, _, h, w) = gy.dims4();
                let chans: Vec<usize> = parts.iter().map(|&p| self.value(p).dims4().1).collect();
                let total: usize = chans.iter().sum();
                let mut offset = 0;
                for (&p, &pc) in parts.iter().zip(&chans) {
                    if self.wants(p) {
                        let len = pc * h * w;
                        let mut data = Vec::with_capacity(n * len);
                        for b in 0..n {
                            let start = (b * total + offset) * h * w;
                            data.extend_from_slice(&gy.data()[start..start + len]);
                        }
                        out.push((p, Tensor::from_vec(&[n, pc, h, w], data)));
                    }
                    offset += pc;
                }
            }
            &Op::Softplus(x) => {
                let d = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&v, &g)| g * sigmoid(v))
                    .collect();
                out.push((x, Tensor::from_vec(gy.shape(), d)));
            }
            &Op::NrBank { x, sigma, n } => self.nr_bank_backward(x, sigma, n, gy, &mut out),
            &Op::ColorRecover { enh, low, mode } => {
                let (ve, vl) = (self.value(enh), self.value(low));
                let (nb, _, h, w) = ve.dims4();
                let plane = h * w;
                let mut de = Tensor::zeros(ve.shape());
                let mut dl = Tensor::zeros(vl.shape());
                for b in 0..nb {
                    let base = b * 3 * plane;
                    for p in 0..plane {
                        let idx = [base + p, base + plane + p, base + 2 * plane + p];
                        let e = idx.map(|i| ve.data()[i]);
                        let l = idx.map(|i| vl.data()[i]);
                        let g = idx.map(|i| gy.data()[i]);
                        let (ge, gl) = color::recover_pixel_backward(e, l, g, mode);
                        for ch in 0..3 {
                            de.data_mut()[idx[ch]] = ge[ch];
                            dl.data_mut()[idx[ch]] = gl[ch];
                        }
                    }
                }
                if self.wants(enh) {
                    out.push((enh, de));
                }
                if self.wants(low) {
                    out.push((low, dl));
                }
            }
            &Op::Mse(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let k = T::of(2.0) * gy.item() / T::of(va.len() as f64);
                let d: Vec<T> = va.data().iter().zip(vb.data()).map(|(&p, &q)| k * (p - q)).collect();
                if self.wants(b) {
                    out.push((b, Tensor::from_vec(vb.shape(), d.iter().map(|&v| -v).collect())));
                }
                if self.wants(a) {
                    out.push((a, Tensor::from_vec(va.shape(), d)));
                }
            }
            &Op::Tv(x) => out.push((x, tv_grad(self.value(x), gy.item()))),
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if self.wants(v) {
                        out.push((v, Tensor::scalar(gy.item() * w)));
                    }
                }
            }
        }
        out
    }

    fn nr_bank_backward(&self, x: Var, sigma: Var, n: Var, gy: &Tensor<T>, out: &mut Vec<(Var, Tensor<T>)>) {
        let xv = self.value(x);
        let (b, c, h, w) = xv.dims4();
        let sig = self.value(sigma).data();
        let ex = self.value(n).data();
        let k = sig.len();
        let plane = c * h * w;
        let mut dx = vec![T::zero(); xv.len()];
        let mut ds = vec![T::zero(); k];
        let mut dn = vec![T::zero(); k];
        for bi in 0..b {
            let src = &xv.data()[bi * plane..(bi + 1) * plane];
            let dxs = &mut dx[bi * plane..(bi + 1) * plane];
            for kk in 0..k {
                let g = &gy.data()[(bi * k + kk) * plane..(bi * k + kk + 1) * plane];
                let (mut acc_s, mut acc_n) = (T::zero(), T::zero());
                for ((&v, &gv), d) in src.iter().zip(g).zip(dxs.iter_mut()) {
                    let p = nr::partials(v, sig[kk], ex[kk]);
                    *d = *d + gv * p.d_input;
                    acc_s = acc_s + gv * p.d_sigma;
                    acc_n = acc_n + gv * p.d_exponent;
                }
                ds[kk] = ds[kk] + acc_s;
                dn[kk] = dn[kk] + acc_n;
            }
        }
        if self.wants(x) {
            out.push((x, Tensor::from_vec(xv.shape(), dx)));
        }
        if self.wants(sigma) {
            out.push((sigma, Tensor::from_vec(&[k], ds)));
        }
        if self.wants(n) {
            out.push((n, Tensor::from_vec(&[k], dn)));
        }
    }
}

fn push_some<T>(out: &mut Vec<(Var, Tensor<T>)>, v: Var, g: Option<Tensor<T>>) {
    if let Some(g) = g {
        out.push((v, g));
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Gradients of leaf parameters after [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when no gradient reached `v` (or `v` is a constant).
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

pub(crate) fn tv_value<T: Scalar>(x: &Tensor<T>) -> T {
    let (n, c, h, w) = x.dims4();
    let d = x.data();
    let (mut sh, mut sv) = (T::zero(), T::zero());
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let v = d[base + i * w + j];
                if j + 1 < w {
                    sh = sh + (d[base + i * w + j + 1] - v).abs();
                }
                if i + 1 < h {
                    sv = sv + (d[base + (i + 1) * w + j] - v).abs();
                }
            }
        }
    }
    let mut tv = T::zero();
    if w > 1 {
        tv = tv + sh / T::of((n * c * h * (w - 1)) as f64);
    }
    if h > 1 {
        tv = tv + sv / T::of((n * c * (h - 1) * w) as f64);
    }
    tv
}

fn tv_grad<T: Scalar>(x: &Tensor<T>, g: T) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let d = x.data();
    let mut out = Tensor::zeros(x.shape());
    let kh = if w > 1 { g / T::of((n * c * h * (w - 1)) as f64) } else { T::zero() };
    let kv = if h > 1 { g / T::of((n * c * (h - 1) * w) as f64) } else { T::zero() };
    let sign = |v: T| {
        if v > T::zero() {
            T::one()
        } else if v < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    };
    let o = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let idx = base + i * w + j;
                if j + 1 < w {
                    let s = sign(d[idx + 1] - d[idx]) * kh;
                    o[idx + 1] = o[idx + 1] + s;
                    o[idx] = o[idx] - s;
                }
                if i + 1 < h {
                    let s = sign(d[idx + w] - d[idx]) * kv;
                    o[idx + w] = o[idx + w] + s;
                    o[idx] = o[idx] - s;
                }
            }
        }
    }
    out
}
