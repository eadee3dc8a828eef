//! Reverse-mode differentiation over a linear tape of array operations.
//!
//! Every operation appends a node holding its output; nodes that depend on a
//! parameter are flagged and only those receive gradients. Forward outputs are
//! checked for NaN/Inf.

use super::array::Array;
use crate::error::{Error, Result};

/// Lower clamp applied to the input of `log`.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine(Var, Var, Var),
    Conv1d(Var, Var, Var),
    Conv2d(Var, Var, Var),
    /// flat argmax input index per output element
    MaxPool(Var, Vec<usize>),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    Sum(Var, Option<usize>),
    Gaussian { x: Var, mu: f64, sigma: f64 },
    /// saved row norms
    NormalizeRows(Var, Vec<f64>),
    MatMulT(Var, Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Scale(Var, f64),
    MulConst(Var, Array),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar w.r.t. every parameter-dependent node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dims2(op: &'static str, a: &Array) -> Result<(usize, usize)> {
    match *a.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(Error::shape(op, format!("expected a 2-D input, got {s:?}"))),
    }
}

fn dims3(op: &'static str, a: &Array) -> Result<(usize, usize, usize)> {
    match *a.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(op, format!("expected a 3-D input, got {s:?}"))),
    }
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].grad)
    }

    fn push(&mut self, name: &'static str, value: Array, op: Op, grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x·W + b` for x: [n, i], W: [i, o], b: [o].
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, i) = dims2("affine", self.value(x))?;
        let (wi, o) = dims2("affine", self.value(w))?;
        if wi != i || self.value(b).len() != o {
            return Err(Error::shape(
                "affine",
                format!("x {:?}, W {:?}, b {:?}", self.shape(x), self.shape(w), self.shape(b)),
            ));
        }
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * o);
        for r in 0..n {
            out.extend_from_slice(bv);
            let row = &mut out[r * o..(r + 1) * o];
            for k in 0..i {
                let a = xv[r * i + k];
                if a != 0.0 {
                    for (y, wk) in row.iter_mut().zip(&wv[k * o..(k + 1) * o]) {
                        *y += a * wk;
                    }
                }
            }
        }
        let grad = self.needs(&[x, w, b]);
        self.push("affine", Array::from_parts(vec![n, o], out), Op::Affine(x, w, b), grad)
    }

    /// Valid 1-D convolution over the token axis. x: [len, c], filters:
    /// [f, width, c], bias: [f]; output [len - width + 1, f].
    pub fn conv1d(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var> {
        let (len, c) = dims2("conv1d", self.value(x))?;
        let (f, width, fc) = dims3("conv1d", self.value(filters))?;
        if fc != c || self.value(bias).len() != f || width == 0 || len < width {
            return Err(Error::shape(
                "conv1d",
                format!("x {:?}, filters {:?}, bias {:?}", self.shape(x), self.shape(filters), self.shape(bias)),
            ));
        }
        let out_len = len - width + 1;
        let (xv, fv, bv) = (self.value(x).data(), self.value(filters).data(), self.value(bias).data());
        let span = width * c;
        let mut out = Vec::with_capacity(out_len * f);
        for t in 0..out_len {
            let window = &xv[t * c..t * c + span];
            for k in 0..f {
                let kern = &fv[k * span..(k + 1) * span];
                out.push(bv[k] + window.iter().zip(kern).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let grad = self.needs(&[x, filters, bias]);
        self.push(
            "conv1d",
            Array::from_parts(vec![out_len, f], out),
            Op::Conv1d(x, filters, bias),
            grad,
        )
    }

    /// Valid 2-D convolution. x: [c, h, w], filters: [o, c, kh, kw], bias: [o].
    pub fn conv2d(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = dims3("conv2d", self.value(x))?;
        let fshape = self.shape(filters).to_vec();
        let [o, fc, kh, kw] = fshape[..] else {
            return Err(Error::shape("conv2d", format!("filters must be 4-D, got {fshape:?}")));
        };
        if fc != c || self.value(bias).len() != o || h < kh || w < kw || kh == 0 || kw == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("x {:?}, filters {fshape:?}, bias {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let (xv, fv, bv) = (self.value(x).data(), self.value(filters).data(), self.value(bias).data());
        // row q = (ic, a, b) holds the input under that tap for every output
        // position, so the accumulation below runs over contiguous planes
        let taps = c * kh * kw;
        let plane_len = oh * ow;
        let mut cols = Vec::with_capacity(taps * plane_len);
        for ic in 0..c {
            for a in 0..kh {
                for b in 0..kw {
                    for i in 0..oh {
                        cols.extend_from_slice(&xv[(ic * h + i + a) * w + b..][..ow]);
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(o * plane_len);
        for &bias in bv {
            out.extend(std::iter::repeat_n(bias, plane_len));
        }
        // four output channels share each pass over a tap row
        let mut blocks = out.chunks_exact_mut(4 * plane_len);
        for (blk, four) in (&mut blocks).enumerate() {
            let (p0, rest) = four.split_at_mut(plane_len);
            let (p1, rest) = rest.split_at_mut(plane_len);
            let (p2, p3) = rest.split_at_mut(plane_len);
            let wrow = |k: usize| &fv[(4 * blk + k) * taps..(4 * blk + k + 1) * taps];
            let (w0, w1, w2, w3) = (wrow(0), wrow(1), wrow(2), wrow(3));
            for (q, src) in cols.chunks_exact(plane_len).enumerate() {
                let (a0, a1, a2, a3) = (w0[q], w1[q], w2[q], w3[q]);
                for ((((y0, y1), y2), y3), s) in p0.iter_mut().zip(p1.iter_mut()).zip(p2.iter_mut()).zip(p3.iter_mut()).zip(src) {
                    *y0 += a0 * s;
                    *y1 += a1 * s;
                    *y2 += a2 * s;
                    *y3 += a3 * s;
                }
            }
        }
        let done = o / 4 * 4;
        for (k, plane) in blocks.into_remainder().chunks_exact_mut(plane_len).enumerate() {
            let w = &fv[(done + k) * taps..(done + k + 1) * taps];
            for (q, src) in cols.chunks_exact(plane_len).enumerate() {
                for (y, s) in plane.iter_mut().zip(src) {
                    *y += w[q] * s;
                }
            }
        }
        let grad = self.needs(&[x, filters, bias]);
        self.push(
            "conv2d",
            Array::from_parts(vec![o, oh, ow], out),
            Op::Conv2d(x, filters, bias),
            grad,
        )
    }

    fn pool(&mut self, name: &'static str, x: Var, rows: &[(usize, usize)], cols: &[(usize, usize)]) -> Result<Var> {
        let (c, h, w) = dims3(name, self.value(x))?;
        let xv = self.value(x).data();
        let (oh, ow) = (rows.len(), cols.len());
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for &(r0, r1) in rows {
                for &(c0, c1) in cols {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = usize::MAX;
                    for i in r0..r1 {
                        for j in c0..c1 {
                            let idx = (ch * h + i) * w + j;
                            if xv[idx] > best {
                                best = xv[idx];
                                at = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(at);
                }
            }
        }
        let grad = self.needs(&[x]);
        self.push(name, Array::from_parts(vec![c, oh, ow], out), Op::MaxPool(x, argmax), grad)
    }

    /// Non-overlapping max pooling with stride equal to the window; trailing
    /// rows/columns that do not fill a window are dropped.
    pub fn maxpool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let (_, h, w) = dims3("maxpool2d", self.value(x))?;
        let (ph, pw) = window;
        if ph == 0 || pw == 0 || h < ph || w < pw {
            return Err(Error::shape("maxpool2d", format!("input {:?}, window {window:?}", self.shape(x))));
        }
        let rows: Vec<_> = (0..h / ph).map(|i| (i * ph, (i + 1) * ph)).collect();
        let cols: Vec<_> = (0..w / pw).map(|j| (j * pw, (j + 1) * pw)).collect();
        self.pool("maxpool2d", x, &rows, &cols)
    }

    /// Max pooling to a fixed output grid; cell i spans
    /// [floor(i·H/out), ceil((i+1)·H/out)), so inputs smaller than the grid
    /// are repeated.
    pub fn adaptive_maxpool2d(&mut self, x: Var, grid: (usize, usize)) -> Result<Var> {
        let (_, h, w) = dims3("adaptive_maxpool2d", self.value(x))?;
        if grid.0 == 0 || grid.1 == 0 || h == 0 || w == 0 {
            return Err(Error::shape("adaptive_maxpool2d", format!("input {:?}, grid {grid:?}", self.shape(x))));
        }
        let spans = |n: usize, out: usize| -> Vec<(usize, usize)> {
            (0..out).map(|i| (i * n / out, ((i + 1) * n).div_ceil(out))).collect()
        };
        let (rows, cols) = (spans(h, grid.0), spans(w, grid.1));
        self.pool("adaptive_maxpool2d", x, &rows, &cols)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x).map(f);
        let grad = self.needs(&[x]);
        self.push(name, value, op, grad)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    /// Natural log with the input clamped below at [`LOG_FLOOR`].
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, |v| v.max(LOG_FLOOR).ln(), Op::Log(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    /// exp(−(x − μ)² / (2σ²)) elementwise.
    pub fn gaussian(&mut self, x: Var, mu: f64, sigma: f64) -> Result<Var> {
        let denom = 2.0 * sigma * sigma;
        self.unary(
            "gaussian",
            x,
            |v| (-(v - mu) * (v - mu) / denom).exp(),
            Op::Gaussian { x, mu, sigma },
        )
    }

    /// Max-shifted softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let a = self.value(x);
        let last = *a.shape().last().unwrap_or(&0);
        let mut out = a.data().to_vec();
        for row in out.chunks_mut(last.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let shape = a.shape().to_vec();
        let grad = self.needs(&[x]);
        self.push("softmax", Array::from_parts(shape, out), Op::Softmax(x), grad)
    }

    /// Sum over one axis (which is removed) or over everything (shape [1]).
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let a = self.value(x);
        let value = match axis {
            None => Array::scalar(a.data().iter().sum()),
            Some(ax) => {
                let shape = a.shape();
                if ax >= shape.len() {
                    return Err(Error::shape("reduce_sum", format!("axis {ax} on {shape:?}")));
                }
                let outer: usize = shape[..ax].iter().product();
                let n = shape[ax];
                let inner: usize = shape[ax + 1..].iter().product();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for k in 0..n {
                        let src = &a.data()[(o * n + k) * inner..][..inner];
                        for (y, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *y += s;
                        }
                    }
                }
                let mut s: Vec<usize> = shape[..ax].iter().chain(&shape[ax + 1..]).copied().collect();
                if s.is_empty() {
                    s.push(1);
                }
                Array::from_parts(s, out)
            }
        };
        let grad = self.needs(&[x]);
        self.push("reduce_sum", value, Op::Sum(x, axis), grad)
    }

    /// L2-normalizes each row of a 2-D array; zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = dims2("normalize_rows", self.value(x))?;
        let xv = self.value(x).data();
        let mut norms = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(norm);
            if norm > 0.0 {
                out.extend(row.iter().map(|v| v / norm));
            } else {
                out.extend(std::iter::repeat_n(0.0, d));
            }
        }
        let grad = self.needs(&[x]);
        self.push(
            "normalize_rows",
            Array::from_parts(vec![n, d], out),
            Op::NormalizeRows(x, norms),
            grad,
        )
    }

    /// a·bᵀ for a: [n, d], b: [m, d].
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = dims2("matmul_t", self.value(a))?;
        let (m, db) = dims2("matmul_t", self.value(b))?;
        if d != db {
            return Err(Error::shape("matmul_t", format!("{:?} · {:?}ᵀ", self.shape(a), self.shape(b))));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ar = &av[i * d..(i + 1) * d];
            for j in 0..m {
                out.push(ar.iter().zip(&bv[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum());
            }
        }
        let grad = self.needs(&[a, b]);
        self.push("matmul_t", Array::from_parts(vec![n, m], out), Op::MatMulT(a, b), grad)
    }

    /// Flattens and concatenates into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let data: Vec<f64> = parts.iter().flat_map(|&p| self.value(p).data().iter().copied()).collect();
        let grad = self.needs(parts);
        self.push("concat", Array::vector(data), Op::Concat(parts.to_vec()), grad)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let grad = self.needs(&[x]);
        self.push("reshape", value, Op::Reshape(x), grad)
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Array) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(Error::shape("mul_const", format!("{:?} vs {:?}", self.shape(x), c.shape())));
        }
        let data = self.value(x).data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let shape = c.shape().to_vec();
        let grad = self.needs(&[x]);
        self.push("mul_const", Array::from_parts(shape, data), Op::MulConst(x, c), grad)
    }

    /// Gradients of the scalar `loss` w.r.t. all parameter-dependent nodes.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(Error::Contract("backward called before any forward op recorded the loss".into()));
        };
        if node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        if !node.grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Array::full(node.value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array>], v: Var, g: Array) {
        if !self.nodes[v.0].grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) {
        let gy = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Affine(x, w, b) => {
                let (xa, wa) = (self.value(x), self.value(w));
                let (n, i) = (xa.shape()[0], xa.shape()[1]);
                let o = wa.shape()[1];
                if self.wants(x) {
                    let mut gx = vec![0.0; n * i];
                    for r in 0..n {
                        for k in 0..i {
                            gx[r * i + k] = (0..o).map(|c| gy[r * o + c] * wa.data()[k * o + c]).sum();
                        }
                    }
                    self.accumulate(grads, x, Array::from_parts(vec![n, i], gx));
                }
                if self.wants(w) {
                    let mut gw = vec![0.0; i * o];
                    for r in 0..n {
                        for k in 0..i {
                            let a = xa.data()[r * i + k];
                            for c in 0..o {
                                gw[k * o + c] += a * gy[r * o + c];
                            }
                        }
                    }
                    self.accumulate(grads, w, Array::from_parts(vec![i, o], gw));
                }
                if self.wants(b) {
                    let mut gb = vec![0.0; o];
                    for r in 0..n {
                        for c in 0..o {
                            gb[c] += gy[r * o + c];
                        }
                    }
                    let shape = self.shape(b).to_vec();
                    self.accumulate(grads, b, Array::from_parts(shape, gb));
                }
            }
            &Op::Conv1d(x, f, b) => {
                let (xa, fa) = (self.value(x), self.value(f));
                let c = xa.shape()[1];
                let (nf, width) = (fa.shape()[0], fa.shape()[1]);
                let span = width * c;
                let out_len = node.value.shape()[0];
                let mut gx = vec![0.0; xa.len()];
                let mut gf = vec![0.0; fa.len()];
                let mut gb = vec![0.0; nf];
                for t in 0..out_len {
                    for k in 0..nf {
                        let gv = gy[t * nf + k];
                        if gv == 0.0 {
                            continue;
                        }
                        gb[k] += gv;
                        let kern = &fa.data()[k * span..(k + 1) * span];
                        let window = &xa.data()[t * c..t * c + span];
                        for (s, (kv, xv)) in kern.iter().zip(window).enumerate() {
                            gx[t * c + s] += gv * kv;
                            gf[k * span + s] += gv * xv;
                        }
                    }
                }
                self.accumulate(grads, x, Array::from_parts(xa.shape().to_vec(), gx));
                self.accumulate(grads, f, Array::from_parts(fa.shape().to_vec(), gf));
                self.accumulate(grads, b, Array::from_parts(self.shape(b).to_vec(), gb));
            }
            &Op::Conv2d(x, f, b) => {
                let (xa, fa) = (self.value(x), self.value(f));
                let (c, h, w) = (xa.shape()[0], xa.shape()[1], xa.shape()[2]);
                let (o, kh, kw) = (fa.shape()[0], fa.shape()[2], fa.shape()[3]);
                let (oh, ow) = (node.value.shape()[1], node.value.shape()[2]);
                let want_x = self.wants(x);
                let mut gx = if want_x { vec![0.0; xa.len()] } else { Vec::new() };
                let mut gf = vec![0.0; fa.len()];
                let mut gb = vec![0.0; o];
                for oc in 0..o {
                    let plane = &gy[oc * oh * ow..(oc + 1) * oh * ow];
                    gb[oc] = plane.iter().sum();
                    for ic in 0..c {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let fidx = ((oc * c + ic) * kh + a) * kw + bb;
                                let wt = fa.data()[fidx];
                                let mut acc = 0.0;
                                for i in 0..oh {
                                    let off = (ic * h + i + a) * w + bb;
                                    let src = &xa.data()[off..off + ow];
                                    let gr = &plane[i * ow..(i + 1) * ow];
                                    acc += src.iter().zip(gr).map(|(s, g)| s * g).sum::<f64>();
                                    if want_x && wt != 0.0 {
                                        for (dst, g) in gx[off..off + ow].iter_mut().zip(gr) {
                                            *dst += wt * g;
                                        }
                                    }
                                }
                                gf[fidx] += acc;
                            }
                        }
                    }
                }
                if want_x {
                    self.accumulate(grads, x, Array::from_parts(xa.shape().to_vec(), gx));
                }
                self.accumulate(grads, f, Array::from_parts(fa.shape().to_vec(), gf));
                self.accumulate(grads, b, Array::from_parts(self.shape(b).to_vec(), gb));
            }
            Op::MaxPool(x, argmax) => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (o, &idx) in argmax.iter().enumerate() {
                    gx[idx] += gy[o];
                }
                self.accumulate(grads, *x, Array::from_parts(self.shape(*x).to_vec(), gx));
            }
            &Op::Relu(x) => {
                let xv = self.value(x).data();
                let gx = gy.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, x, Array::from_parts(self.shape(x).to_vec(), gx));
            }
            &Op::Tanh(x) => {
                let gx = gy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, x, Array::from_parts(self.shape(x).to_vec(), gx));
            }
            &Op::Exp(x) => {
                let gx = gy.iter().zip(y).map(|(g, e)| g * e).collect();
                self.accumulate(grads, x, Array::from_parts(self.shape(x).to_vec(), gx));
            }
            &Op::Log(x) => {
                let xv = self.value(x).data();
                let gx = gy
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| if *v > LOG_FLOOR { g / v } else { 0.0 })
                    .collect();
                self.accumulate(grads, x, Array::from_parts(self.shape(x).to_vec(), gx));
            }
            &Op::Scale(x, c) => {
                let gx = gy.iter().map(|g| g * c).collect();
                self.accumulate(grads, x, Array::from_parts(self.shape(x).to_vec(), gx));
            }
            &Op::Gaussian { x, mu, sigma } => {
                let xv = self.value(x).data();
                let s2 = sigma * sigma;
                let gx = gy
                    .iter()
                    .zip(y)
                    .zip(xv)
                    .map(|((g, k), v)| -g * k * (v - mu) / s2)
                    .collect();
                self.accumulate(grads, x, Array::from_parts(self.shape(x).to_vec(), gx));
            }
            &Op::Softmax(x) => {
                let last = *node.value.shape().last().unwrap_or(&1);
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(last.max(1)).zip(gy.chunks(last.max(1))) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(p, g)| p * (g - dot)));
                }
                self.accumulate(grads, x, Array::from_parts(self.shape(x).to_vec(), gx));
            }
            &Op::Sum(x, axis) => {
                let shape = self.shape(x).to_vec();
                let gx = match axis {
                    None => vec![gy[0]; shape.iter().product()],
                    Some(ax) => {
                        let outer: usize = shape[..ax].iter().product();
                        let n = shape[ax];
                        let inner: usize = shape[ax + 1..].iter().product();
                        let mut gx = vec![0.0; outer * n * inner];
                        for o in 0..outer {
                            for k in 0..n {
                                gx[(o * n + k) * inner..][..inner].copy_from_slice(&gy[o * inner..(o + 1) * inner]);
                            }
                        }
                        gx
                    }
                };
                self.accumulate(grads, x, Array::from_parts(shape, gx));
            }
            Op::NormalizeRows(x, norms) => {
                let d = node.value.shape()[1];
                let mut gx = vec![0.0; y.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    if norm == 0.0 {
                        continue;
                    }
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gy[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..d {
                        gx[r * d + k] = (gr[k] - yr[k] * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, Array::from_parts(self.shape(*x).to_vec(), gx));
            }
            &Op::MatMulT(a, b) => {
                let (aa, ba) = (self.value(a), self.value(b));
                let (n, d) = (aa.shape()[0], aa.shape()[1]);
                let m = ba.shape()[0];
                if self.wants(a) {
                    let mut ga = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..m {
                            let g = gy[i * m + j];
                            if g != 0.0 {
                                for k in 0..d {
                                    ga[i * d + k] += g * ba.data()[j * d + k];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, a, Array::from_parts(vec![n, d], ga));
                }
                if self.wants(b) {
                    let mut gb = vec![0.0; m * d];
                    for i in 0..n {
                        for j in 0..m {
                            let g = gy[i * m + j];
                            if g != 0.0 {
                                for k in 0..d {
                                    gb[j * d + k] += g * aa.data()[i * d + k];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, b, Array::from_parts(vec![m, d], gb));
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let shape = self.shape(p).to_vec();
                    let n = self.value(p).len();
                    self.accumulate(grads, p, Array::from_parts(shape, gy[off..off + n].to_vec()));
                    off += n;
                }
            }
            &Op::Reshape(x) => {
                self.accumulate(grads, x, Array::from_parts(self.shape(x).to_vec(), gy.to_vec()));
            }
            Op::MulConst(x, c) => {
                let gx = gy.iter().zip(c.data()).map(|(g, k)| g * k).collect();
                self.accumulate(grads, *x, Array::from_parts(c.shape().to_vec(), gx));
            }
        }
    }
}
