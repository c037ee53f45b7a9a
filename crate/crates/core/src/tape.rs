//! Recorded-tape reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append a node and return a [`Var`] handle; since a node can only refer to
//! handles that already exist, node order is a topological order and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Nodes record whether they depend on a leaf created with
//! `requires_grad = true`; gradients are only propagated and stored along
//! those nodes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{gemm, MatRef};
use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Marks an output element of [`Tape::gather`] that reads zero.
pub const GATHER_ZERO: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat {
        a: Var,
        b: Var,
        outer: usize,
        a_inner: usize,
        b_inner: usize,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Downsample2 {
        x: Var,
        c: usize,
        h: usize,
        w: usize,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Mse(Var, Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Only leaves created with `requires_grad` receive
    /// gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by the last [`Tape::backward`], if `v`
    /// was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `x[B×I] · w[I×O] + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(TensorError::mismatch("linear", xs, ws));
        }
        if bs.len() != 1 || bs[0] != ws[1] {
            return Err(TensorError::mismatch("linear", ws, bs));
        }
        let (batch, inner, out) = (xs[0], xs[1], ws[1]);
        let bias = self.value(b).data();
        let mut data = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            data.extend_from_slice(bias);
        }
        gemm(
            1.0,
            MatRef::new(self.value(x).data(), batch, inner),
            MatRef::new(self.value(w).data(), inner, out),
            1.0,
            &mut data,
        );
        let value = Tensor::new(&[batch, out], data)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    /// Cross-correlation of `x[Cin×H×W]` with `k[Cout×Cin×K×K]`, zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let (xs, ks, bs) = (self.shape(x), self.shape(k), self.shape(b));
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] {
            return Err(TensorError::mismatch("conv2d", xs, ks));
        }
        if ks[2] != ks[3] || ks[2] % 2 == 0 {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel must be square with odd extent, got {ks:?}"),
            ));
        }
        if bs.len() != 1 || bs[0] != ks[0] {
            return Err(TensorError::mismatch("conv2d", ks, bs));
        }
        if stride == 0 {
            return Err(TensorError::dim("conv2d", "stride must be positive"));
        }
        let (cin, h, w, cout, kk) = (xs[0], xs[1], xs[2], ks[0], ks[2]);
        let span_h = (h + 2 * padding) as isize - kk as isize;
        let span_w = (w + 2 * padding) as isize - kk as isize;
        if span_h < 0 || span_w < 0 {
            return Err(TensorError::dim(
                "conv2d",
                format!("non-positive output extent for input {xs:?}, kernel {kk}, padding {padding}"),
            ));
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            cout,
            k: kk,
            stride,
            pad: padding,
            ho: span_h as usize / stride + 1,
            wo: span_w as usize / stride + 1,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let p = geom.positions();
        let mut data = Vec::with_capacity(cout * p);
        for &bias in self.value(b).data() {
            data.extend(core::iter::repeat(bias).take(p));
        }
        gemm(
            1.0,
            MatRef::new(self.value(k).data(), cout, geom.patch()),
            MatRef::new(&cols, geom.patch(), p),
            1.0,
            &mut data,
        );
        let value = Tensor::new(&[cout, geom.ho, geom.wo], data)?;
        let rg = self.any_grad(&[x, k, b]);
        // im2col columns are only needed for the kernel gradient.
        let cols = if self.requires_grad(k) { cols } else { Vec::new() };
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                k,
                b,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Rectified linear unit; the derivative at exactly zero is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.requires_grad(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| sigmoid(a)).collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.requires_grad(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a * s).collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.requires_grad(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    fn zip(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::mismatch(op, va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape(), data)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len()
            || axis >= sa.len()
            || sa
                .iter()
                .zip(sb)
                .enumerate()
                .any(|(i, (x, y))| i != axis && x != y)
        {
            return Err(TensorError::mismatch("concat", sa, sb));
        }
        let outer: usize = sa[..axis].iter().product();
        let tail: usize = sa[axis + 1..].iter().product();
        let a_inner = sa[axis] * tail;
        let b_inner = sb[axis] * tail;
        let mut shape = sa.to_vec();
        shape[axis] += sb[axis];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(outer * (a_inner + b_inner));
        for o in 0..outer {
            data.extend_from_slice(&da[o * a_inner..(o + 1) * a_inner]);
            data.extend_from_slice(&db[o * b_inner..(o + 1) * b_inner]);
        }
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            value,
            Op::Concat {
                a,
                b,
                outer,
                a_inner,
                b_inner,
            },
            rg,
        ))
    }

    /// Per-channel normalization of `x[C×H×W]` over its spatial plane using
    /// the population variance, followed by a per-channel affine map.
    pub fn instance_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let (xs, gs, bs) = (self.shape(x), self.shape(gamma), self.shape(beta));
        if xs.len() != 3 {
            return Err(TensorError::dim(
                "instance_norm",
                format!("expected C×H×W input, got {xs:?}"),
            ));
        }
        if gs != [xs[0]] || bs != [xs[0]] {
            return Err(TensorError::mismatch("instance_norm", xs, gs));
        }
        let (c, plane) = (xs[0], xs[1] * xs[2]);
        let xd = self.value(x).data();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; c * plane];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; c * plane];
        for ch in 0..c {
            let src = &xd[ch * plane..(ch + 1) * plane];
            let mean = src.iter().sum::<f64>() / plane as f64;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            inv_std[ch] = inv;
            for i in 0..plane {
                let xh = (src[i] - mean) * inv;
                xhat[ch * plane + i] = xh;
                out[ch * plane + i] = xh * g[ch] + be[ch];
            }
        }
        let value = Tensor::new(xs, out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// 2×2 average pooling of `x[C×H×W]`.
    pub fn downsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[1] % 2 != 0 || xs[2] % 2 != 0 {
            return Err(TensorError::dim(
                "downsample2",
                format!("expected C×H×W with even H and W, got {xs:?}"),
            ));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let at = |r: usize, s: usize| xd[ch * h * w + r * w + s];
                    out[ch * ho * wo + i * wo + j] = 0.25
                        * (at(2 * i, 2 * j)
                            + at(2 * i, 2 * j + 1)
                            + at(2 * i + 1, 2 * j)
                            + at(2 * i + 1, 2 * j + 1));
                }
            }
        }
        let value = Tensor::new(&[c, ho, wo], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Downsample2 { x, c, h, w }, rg))
    }

    /// Nearest-neighbour 2× upsampling of `x[C×H×W]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(TensorError::dim(
                "upsample2",
                format!("expected C×H×W input, got {xs:?}"),
            ));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ho, wo) = (2 * h, 2 * w);
        let mut index = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    index.push(ch * h * w + (i / 2) * w + j / 2);
                }
            }
        }
        self.gather(x, index, &[c, ho, wo])
    }

    /// Pads `x[C×H×W]` at the bottom and right by mirroring interior rows and
    /// columns (the edge itself is not repeated). Padding wider than the
    /// input keeps bouncing between the edges.
    pub fn reflect_pad(&mut self, x: Var, bottom: usize, right: usize) -> Result<Var, TensorError> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(TensorError::dim(
                "reflect_pad",
                format!("expected C×H×W input, got {xs:?}"),
            ));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ho, wo) = (h + bottom, w + right);
        let reflect = |i: usize, n: usize| {
            if n == 1 {
                return 0;
            }
            let r = i % (2 * (n - 1));
            if r < n { r } else { 2 * (n - 1) - r }
        };
        let mut index = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    index.push(ch * h * w + reflect(i, h) * w + reflect(j, w));
                }
            }
        }
        self.gather(x, index, &[c, ho, wo])
    }

    /// The `h × w` window of `x[C×H×W]` starting at row `top`, column `left`.
    pub fn crop(
        &mut self,
        x: Var,
        top: usize,
        left: usize,
        h: usize,
        w: usize,
    ) -> Result<Var, TensorError> {
        let xs = self.shape(x);
        if xs.len() != 3 || top + h > xs[1] || left + w > xs[2] {
            return Err(TensorError::dim(
                "crop",
                format!("window {h}×{w} at ({top}, {left}) exceeds {xs:?}"),
            ));
        }
        let (c, sh, sw) = (xs[0], xs[1], xs[2]);
        let mut index = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    index.push(ch * sh * sw + (top + i) * sw + left + j);
                }
            }
        }
        self.gather(x, index, &[c, h, w])
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    /// Indices may repeat; gradients add up.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if let Some(bad) = index.iter().find(|&&i| i != GATHER_ZERO && i >= n) {
            return Err(TensorError::Usage(format!(
                "gather index {bad} out of range for {n} elements"
            )));
        }
        let xd = self.value(x).data();
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { xd[i] })
            .collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Gather { x, index }, rg))
    }

    /// Mean of squared differences, as a one-element tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (a, b) = (self.value(pred), self.value(target));
        if a.shape() != b.shape() {
            return Err(TensorError::mismatch("mse", a.shape(), b.shape()));
        }
        let n = a.len() as f64;
        let s: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target), rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Reverse sweep from a one-element `loss`. Previous gradients are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let Tape { nodes, grads } = self;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        if !nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop(nodes, grads, id, &g);
            grads[id] = Some(g);
        }
        Ok(())
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` when `v` does not
/// need a gradient.
fn buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let node = &nodes[id];
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let (batch, inner) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
            let out = nodes[w.0].value.shape()[1];
            if let Some(dx) = buf(nodes, grads, *x) {
                gemm(
                    1.0,
                    MatRef::new(g, batch, out),
                    MatRef::transposed(val(*w), inner, out),
                    1.0,
                    dx,
                );
            }
            if let Some(dw) = buf(nodes, grads, *w) {
                gemm(
                    1.0,
                    MatRef::transposed(val(*x), batch, inner),
                    MatRef::new(g, batch, out),
                    1.0,
                    dw,
                );
            }
            if let Some(db) = buf(nodes, grads, *b) {
                for row in g.chunks_exact(out) {
                    for (d, r) in db.iter_mut().zip(row) {
                        *d += r;
                    }
                }
            }
        }
        Op::Conv2d {
            x,
            k,
            b,
            geom,
            cols,
        } => {
            let p = geom.positions();
            if let Some(dk) = buf(nodes, grads, *k) {
                gemm(
                    1.0,
                    MatRef::new(g, geom.cout, p),
                    MatRef::transposed(cols, geom.patch(), p),
                    1.0,
                    dk,
                );
            }
            if let Some(dx) = buf(nodes, grads, *x) {
                let mut dcols = vec![0.0; geom.patch() * p];
                gemm(
                    1.0,
                    MatRef::transposed(val(*k), geom.cout, geom.patch()),
                    MatRef::new(g, geom.cout, p),
                    0.0,
                    &mut dcols,
                );
                col2im_add(&dcols, geom, dx);
            }
            if let Some(db) = buf(nodes, grads, *b) {
                for (d, row) in db.iter_mut().zip(g.chunks_exact(p)) {
                    *d += row.iter().sum::<f64>();
                }
            }
        }
        Op::Relu(x) => {
            let xv = val(*x);
            if let Some(dx) = buf(nodes, grads, *x) {
                for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                    if xi > 0.0 {
                        *d += gi;
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            if let Some(dx) = buf(nodes, grads, *x) {
                for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (1.0 - yi);
                }
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = buf(nodes, grads, *v) {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            for (v, other) in [(a, b), (b, a)] {
                let ov = val(*other);
                if let Some(d) = buf(nodes, grads, *v) {
                    for ((di, gi), oi) in d.iter_mut().zip(g).zip(ov) {
                        *di += gi * oi;
                    }
                }
            }
        }
        Op::Scale(x, s) => {
            if let Some(dx) = buf(nodes, grads, *x) {
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += gi * s;
                }
            }
        }
        Op::Concat {
            a,
            b,
            outer,
            a_inner,
            b_inner,
        } => {
            let stride = a_inner + b_inner;
            if let Some(da) = buf(nodes, grads, *a) {
                for o in 0..*outer {
                    let src = &g[o * stride..o * stride + a_inner];
                    for (d, s) in da[o * a_inner..(o + 1) * a_inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            if let Some(db) = buf(nodes, grads, *b) {
                for o in 0..*outer {
                    let src = &g[o * stride + a_inner..(o + 1) * stride];
                    for (d, s) in db[o * b_inner..(o + 1) * b_inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        Op::InstanceNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let c = inv_std.len();
            let plane = xhat.len() / c;
            let gam = val(*gamma);
            if let Some(dg) = buf(nodes, grads, *gamma) {
                for ch in 0..c {
                    let r = ch * plane..(ch + 1) * plane;
                    dg[ch] += g[r.clone()].iter().zip(&xhat[r]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if let Some(db) = buf(nodes, grads, *beta) {
                for ch in 0..c {
                    db[ch] += g[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                }
            }
            if let Some(dx) = buf(nodes, grads, *x) {
                let n = plane as f64;
                for ch in 0..c {
                    let r = ch * plane..(ch + 1) * plane;
                    let (gs, xh) = (&g[r.clone()], &xhat[r.clone()]);
                    let sum_d: f64 = gs.iter().sum::<f64>() * gam[ch];
                    let sum_dx: f64 = gs.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() * gam[ch];
                    let k = inv_std[ch] / n;
                    for (i, d) in dx[r].iter_mut().enumerate() {
                        let dxhat = gs[i] * gam[ch];
                        *d += k * (n * dxhat - sum_d - xh[i] * sum_dx);
                    }
                }
            }
        }
        Op::Downsample2 { x, c, h, w } => {
            let (ho, wo) = (h / 2, w / 2);
            if let Some(dx) = buf(nodes, grads, *x) {
                for ch in 0..*c {
                    for i in 0..*h {
                        for j in 0..*w {
                            dx[ch * h * w + i * w + j] +=
                                0.25 * g[ch * ho * wo + (i / 2) * wo + j / 2];
                        }
                    }
                }
            }
        }
        Op::Gather { x, index } => {
            if let Some(dx) = buf(nodes, grads, *x) {
                for (&i, gi) in index.iter().zip(g) {
                    if i != GATHER_ZERO {
                        dx[i] += gi;
                    }
                }
            }
        }
        Op::Mse(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let k = 2.0 * g[0] / av.len() as f64;
            if let Some(da) = buf(nodes, grads, *a) {
                for ((d, x), y) in da.iter_mut().zip(av).zip(bv) {
                    *d += k * (x - y);
                }
            }
            if let Some(db) = buf(nodes, grads, *b) {
                for ((d, x), y) in db.iter_mut().zip(av).zip(bv) {
                    *d -= k * (x - y);
                }
            }
        }
        Op::Mean(x) => {
            let n = nodes[x.0].value.len() as f64;
            if let Some(dx) = buf(nodes, grads, *x) {
                for d in dx.iter_mut() {
                    *d += g[0] / n;
                }
            }
        }
    }
}

/// Logistic function, evaluated so that `exp` never overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.positions();
    let mut cols = vec![0.0; g.patch() * p];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[ci * g.h * g.w + iy as usize * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = ci * g.h * g.w + iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dx[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}
