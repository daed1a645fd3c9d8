//! Primitive operations: forward evaluation on [`Graph`] and the matching
//! vector-Jacobian products used by the reverse sweep.

use rand::Rng;

use super::graph::{Graph, Node, Var};
use super::kernels::{matmul_nn, matmul_nt, matmul_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output length of a 1-D convolution.
pub fn conv1d_out_len(len_in: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len_in + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[derive(Clone, Debug)]
pub(crate) enum Broadcast {
    Same,
    /// `b` repeats with period `b.len()` (broadcast over leading axes).
    Suffix(usize),
    /// Explicit output-to-`b` index map.
    General(Vec<usize>),
}

impl Broadcast {
    fn new(out: &[usize], b: &[usize]) -> Result<Self> {
        if b.len() > out.len() {
            return Err(Error::Shape(format!("cannot broadcast {b:?} to {out:?}")));
        }
        let mut padded = vec![1; out.len() - b.len()];
        padded.extend_from_slice(b);
        for (&o, &d) in out.iter().zip(&padded) {
            if d != o && d != 1 {
                return Err(Error::Shape(format!("cannot broadcast {b:?} to {out:?}")));
            }
        }
        if padded == out {
            return Ok(Broadcast::Same);
        }
        let first_full = padded.iter().zip(out).position(|(&d, &o)| d == o && o != 1);
        let suffix = match first_full {
            Some(f) => padded[f..] == out[f..] && padded[..f].iter().all(|&d| d == 1),
            None => padded.iter().all(|&d| d == 1),
        };
        let nb: usize = padded.iter().product();
        if suffix {
            return Ok(Broadcast::Suffix(nb));
        }
        let rank = out.len();
        let mut strides = vec![0; rank];
        let mut acc = 1;
        for ax in (0..rank).rev() {
            strides[ax] = if padded[ax] == 1 { 0 } else { acc };
            acc *= padded[ax];
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0; rank];
        let mut off = 0usize;
        for _ in 0..total {
            map.push(off);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < out[ax] {
                    break;
                }
                off -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Ok(Broadcast::General(map))
    }

    #[inline]
    fn for_each(&self, n: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Broadcast::Same => (0..n).for_each(|i| f(i, i)),
            Broadcast::Suffix(nb) => {
                for base in (0..n).step_by((*nb).max(1)) {
                    for j in 0..*nb {
                        f(base + j, j);
                    }
                }
            }
            Broadcast::General(map) => map.iter().enumerate().for_each(|(i, &j)| f(i, j)),
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, shared_b: bool },
    MatMulLeft { w: Var, x: Var, batch: usize, m: usize, k: usize, n: usize },
    LstmCell { z: Var, c_prev: Option<Var>, hidden: usize, gates: Vec<T> },
    Conv1d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom, patches: Vec<T> },
    Add { a: Var, b: Var, bc: Broadcast },
    Mul { a: Var, b: Var, bc: Broadcast },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { a: Var, outer: usize, n: usize, inner: usize },
    LayerNorm { a: Var, outer: usize, n: usize, inner: usize, rstd: Vec<T> },
    Dropout { a: Var, mask: Vec<T> },
    Mean { a: Var, outer: usize, n: usize, inner: usize },
    Sum(Var),
    Concat { parts: Vec<Var>, outer: usize, sizes: Vec<usize>, inner: usize },
    Slice { a: Var, outer: usize, n: usize, start: usize, len: usize, inner: usize },
    Transpose { a: Var, in_shape: Vec<usize>, ax1: usize, ax2: usize },
    Reshape(Var),
    Scale { a: Var, c: T },
    CrossEntropy { a: Var, classes: usize, labels: Vec<usize>, probs: Vec<T> },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    batch: usize,
    len_in: usize,
    c_in: usize,
    len_out: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b, .. } | Op::Mul { a, b, .. } => vec![*a, *b],
            Op::MatMulLeft { w, x, .. } => vec![*w, *x],
            Op::LstmCell { z, c_prev, .. } => {
                let mut v = vec![*z];
                v.extend(c_prev.iter().copied());
                v
            }
            Op::Conv1d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias.iter().copied());
                v
            }
            Op::Relu(a) | Op::Sigmoid(a) | Op::Tanh(a) | Op::Sum(a) | Op::Reshape(a) => vec![*a],
            Op::Softmax { a, .. }
            | Op::LayerNorm { a, .. }
            | Op::Dropout { a, .. }
            | Op::Mean { a, .. }
            | Op::Slice { a, .. }
            | Op::Transpose { a, .. }
            | Op::Scale { a, .. }
            | Op::CrossEntropy { a, .. } => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }

    /// Accumulates `g · ∂out/∂parent` into each parent that needs a gradient.
    pub(crate) fn backward(
        &self,
        nodes: &[Node<T>],
        out: &Tensor<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let val = |v: &Var| nodes[v.id].value.data();
        let mut acc = |v: &Var, f: &mut dyn FnMut(&mut [T])| {
            let node = &nodes[v.id];
            if node.needs_grad {
                let buf = grads[v.id].get_or_insert_with(|| vec![T::zero(); node.value.len()]);
                f(buf);
            }
        };
        match self {
            Op::Leaf => {}
            Op::MatMul { a, b, batch, m, k, n, shared_b } => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| {
                    if *shared_b {
                        matmul_nt(g, bv, ga, batch * m, *n, *k);
                    } else {
                        for i in 0..*batch {
                            matmul_nt(
                                &g[i * m * n..(i + 1) * m * n],
                                &bv[i * k * n..(i + 1) * k * n],
                                &mut ga[i * m * k..(i + 1) * m * k],
                                *m,
                                *n,
                                *k,
                            );
                        }
                    }
                });
                acc(b, &mut |gb| {
                    if *shared_b {
                        matmul_tn(av, g, gb, batch * m, *k, *n);
                    } else {
                        for i in 0..*batch {
                            matmul_tn(
                                &av[i * m * k..(i + 1) * m * k],
                                &g[i * m * n..(i + 1) * m * n],
                                &mut gb[i * k * n..(i + 1) * k * n],
                                *m,
                                *k,
                                *n,
                            );
                        }
                    }
                });
            }
            Op::MatMulLeft { w, x, batch, m, k, n } => {
                let (wv, xv) = (val(w), val(x));
                acc(x, &mut |gx| {
                    for i in 0..*batch {
                        matmul_tn(wv, &g[i * m * n..(i + 1) * m * n], &mut gx[i * k * n..(i + 1) * k * n], *m, *k, *n);
                    }
                });
                acc(w, &mut |gw| {
                    for i in 0..*batch {
                        matmul_nt(&g[i * m * n..(i + 1) * m * n], &xv[i * k * n..(i + 1) * k * n], gw, *m, *n, *k);
                    }
                });
            }
            Op::LstmCell { z, c_prev, hidden, gates } => {
                let h = *hidden;
                let rows = g.len() / (2 * h);
                let prev = c_prev.as_ref().map(val);
                let mut dz = vec![T::zero(); rows * 4 * h];
                let mut dc_prev = vec![T::zero(); rows * h];
                let one = T::one();
                for r in 0..rows {
                    let gt = &gates[r * 5 * h..(r + 1) * 5 * h];
                    let (gh, gc) = (&g[r * 2 * h..r * 2 * h + h], &g[r * 2 * h + h..(r + 1) * 2 * h]);
                    for j in 0..h {
                        let (i, f, c_in, o, tc) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j], gt[4 * h + j]);
                        let dc = gc[j] + gh[j] * o * (one - tc * tc);
                        let cp = prev.map_or(T::zero(), |p| p[r * h + j]);
                        let dzr = &mut dz[r * 4 * h..(r + 1) * 4 * h];
                        dzr[j] = dc * c_in * i * (one - i);
                        dzr[h + j] = dc * cp * f * (one - f);
                        dzr[2 * h + j] = dc * i * (one - c_in * c_in);
                        dzr[3 * h + j] = gh[j] * tc * o * (one - o);
                        dc_prev[r * h + j] = dc * f;
                    }
                }
                acc(z, &mut |gz| gz.iter_mut().zip(&dz).for_each(|(d, &v)| *d += v));
                if let Some(c) = c_prev {
                    acc(c, &mut |gc| gc.iter_mut().zip(&dc_prev).for_each(|(d, &v)| *d += v));
                }
            }
            Op::Conv1d { x, w, bias, geom, patches } => {
                let rows = geom.batch * geom.len_out;
                let ck = geom.c_in * geom.kernel;
                acc(w, &mut |gw| matmul_tn(g, patches, gw, rows, geom.c_out, ck));
                if let Some(bias) = bias {
                    acc(bias, &mut |gb| {
                        for row in g.chunks_exact(geom.c_out) {
                            for (d, &v) in gb.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    });
                }
                let wv = val(w);
                acc(x, &mut |gx| {
                    let mut gp = vec![T::zero(); rows * ck];
                    matmul_nn(g, wv, &mut gp, rows, geom.c_out, ck);
                    col2im(&gp, gx, geom);
                });
            }
            Op::Add { a, b, bc } => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
                acc(b, &mut |gb| bc.for_each(g.len(), |i, j| gb[j] += g[i]));
            }
            Op::Mul { a, b, bc } => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| bc.for_each(g.len(), |i, j| ga[i] += g[i] * bv[j]));
                acc(b, &mut |gb| bc.for_each(g.len(), |i, j| gb[j] += g[i] * av[i]));
            }
            Op::Relu(a) => {
                let av = val(a);
                acc(a, &mut |ga| {
                    for ((d, &x), &v) in ga.iter_mut().zip(av).zip(g) {
                        if x > T::zero() {
                            *d += v;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(a, &mut |ga| {
                    for ((d, &s), &v) in ga.iter_mut().zip(y).zip(g) {
                        *d += v * s * (T::one() - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc(a, &mut |ga| {
                    for ((d, &t), &v) in ga.iter_mut().zip(y).zip(g) {
                        *d += v * (T::one() - t * t);
                    }
                });
            }
            Op::Softmax { a, outer, n, inner } => {
                let y = out.data();
                acc(a, &mut |ga| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let dot: T = (0..*n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..*n {
                                ga[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { a, outer, n, inner, rstd } => {
                let y = out.data();
                let nf = T::lit(*n as f64);
                acc(a, &mut |ga| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let r = rstd[o * inner + i];
                            let mg: T = (0..*n).map(|j| g[idx(j)]).sum::<T>() / nf;
                            let mgy: T = (0..*n).map(|j| g[idx(j)] * y[idx(j)]).sum::<T>() / nf;
                            for j in 0..*n {
                                ga[idx(j)] += r * (g[idx(j)] - mg - y[idx(j)] * mgy);
                            }
                        }
                    }
                });
            }
            Op::Dropout { a, mask } => {
                acc(a, &mut |ga| {
                    for ((d, &m), &v) in ga.iter_mut().zip(mask).zip(g) {
                        *d += v * m;
                    }
                });
            }
            Op::Mean { a, outer, n, inner } => {
                let inv = T::one() / T::lit(*n as f64);
                acc(a, &mut |ga| {
                    for o in 0..*outer {
                        for j in 0..*n {
                            for i in 0..*inner {
                                ga[(o * n + j) * inner + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => acc(a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::Concat { parts, outer, sizes, inner } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (p, &sz) in parts.iter().zip(sizes) {
                    acc(p, &mut |gp| {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + sz) * inner];
                            for (d, &v) in gp[o * sz * inner..(o + 1) * sz * inner].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    });
                    offset += sz;
                }
            }
            Op::Slice { a, outer, n, start, len, inner } => {
                acc(a, &mut |ga| {
                    for o in 0..*outer {
                        let dst = &mut ga[(o * n + start) * inner..(o * n + start + len) * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::Transpose { a, in_shape, ax1, ax2 } => {
                let mut out_shape = in_shape.clone();
                out_shape.swap(*ax1, *ax2);
                let back = swap_axes(g, &out_shape, *ax1, *ax2);
                acc(a, &mut |ga| ga.iter_mut().zip(&back).for_each(|(d, &v)| *d += v));
            }
            Op::Reshape(a) => acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v)),
            Op::Scale { a, c } => acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *c)),
            Op::CrossEntropy { a, classes, labels, probs } => {
                let scale = g[0] / T::lit(labels.len() as f64);
                acc(a, &mut |ga| {
                    for (r, &lab) in labels.iter().enumerate() {
                        for c in 0..*classes {
                            let onehot = if c == lab { T::one() } else { T::zero() };
                            ga[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                });
            }
        }
    }
}

/// Swaps two axes of a row-major array.
fn swap_axes<T: Scalar>(x: &[T], shape: &[usize], ax1: usize, ax2: usize) -> Vec<T> {
    let (lo, hi) = if ax1 < ax2 { (ax1, ax2) } else { (ax2, ax1) };
    if lo == hi {
        return x.to_vec();
    }
    // shape = [p0.., A, p1.., B, p2..]
    let p0: usize = shape[..lo].iter().product();
    let a = shape[lo];
    let p1: usize = shape[lo + 1..hi].iter().product();
    let b = shape[hi];
    let p2: usize = shape[hi + 1..].iter().product();
    let mut out = Vec::with_capacity(x.len());
    if p2 == 1 {
        for i0 in 0..p0 {
            for jb in 0..b {
                for i1 in 0..p1 {
                    let base = (i0 * a * p1 + i1) * b + jb;
                    out.extend((0..a).map(|ja| x[base + ja * p1 * b]));
                }
            }
        }
        return out;
    }
    for i0 in 0..p0 {
        for jb in 0..b {
            for i1 in 0..p1 {
                for ja in 0..a {
                    let src = (((i0 * a + ja) * p1 + i1) * b + jb) * p2;
                    out.extend_from_slice(&x[src..src + p2]);
                }
            }
        }
    }
    out
}

fn im2col<T: Scalar>(x: &[T], geom: &ConvGeom) -> Vec<T> {
    let ck = geom.c_in * geom.kernel;
    let mut patches = vec![T::zero(); geom.batch * geom.len_out * ck];
    for b in 0..geom.batch {
        for t in 0..geom.len_out {
            let row = &mut patches[(b * geom.len_out + t) * ck..(b * geom.len_out + t + 1) * ck];
            for k in 0..geom.kernel {
                let pos = (t * geom.stride + k) as isize - geom.pad as isize;
                if pos < 0 || pos as usize >= geom.len_in {
                    continue;
                }
                let src = &x[(b * geom.len_in + pos as usize) * geom.c_in..][..geom.c_in];
                for (ci, &v) in src.iter().enumerate() {
                    row[ci * geom.kernel + k] = v;
                }
            }
        }
    }
    patches
}

fn col2im<T: Scalar>(gp: &[T], gx: &mut [T], geom: &ConvGeom) {
    let ck = geom.c_in * geom.kernel;
    for b in 0..geom.batch {
        for t in 0..geom.len_out {
            let row = &gp[(b * geom.len_out + t) * ck..(b * geom.len_out + t + 1) * ck];
            for k in 0..geom.kernel {
                let pos = (t * geom.stride + k) as isize - geom.pad as isize;
                if pos < 0 || pos as usize >= geom.len_in {
                    continue;
                }
                let dst = &mut gx[(b * geom.len_in + pos as usize) * geom.c_in..][..geom.c_in];
                for (ci, d) in dst.iter_mut().enumerate() {
                    *d += row[ci * geom.kernel + k];
                }
            }
        }
    }
}

fn check_axis(shape: &[usize], axis: usize, op: &str) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("{op}: axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, a: Var, name: &str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(x.shape(), data)?;
        self.push(t, op, name)
    }

    /// Matrix product over the last two axes. `b` is either a plain
    /// `[k, n]` matrix shared by every leading index of `a`, or carries the
    /// same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::Shape(format!("matmul needs rank >= 2, got {sa:?} and {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if kb != k || (!shared_b && &sb[..sb.len() - 2] != lead) {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        if shared_b {
            matmul_nn(av, bv, &mut out, batch * m, k, n);
        } else {
            for i in 0..batch {
                matmul_nn(
                    &av[i * m * k..(i + 1) * m * k],
                    &bv[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::MatMul { a, b, batch, m, k, n, shared_b }, "matmul")
    }

    /// `w · x` over the last two axes of `x`, with `w [m, k]` shared by every
    /// leading index: `x [.., k, n]` gives `[.., m, n]`.
    pub fn matmul_left(&mut self, w: Var, x: Var) -> Result<Var> {
        self.check(w)?;
        self.check(x)?;
        let (sw, sx) = (self.shape(w).to_vec(), self.shape(x).to_vec());
        if sw.len() != 2 || sx.len() < 2 || sx[sx.len() - 2] != sw[1] {
            return Err(Error::Shape(format!("matmul_left {sw:?} x {sx:?}")));
        }
        let (m, k, n) = (sw[0], sw[1], sx[sx.len() - 1]);
        let batch: usize = sx[..sx.len() - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        let (wv, xv) = (self.value(w).data(), self.value(x).data());
        for i in 0..batch {
            matmul_nn(wv, &xv[i * k * n..(i + 1) * k * n], &mut out[i * m * n..(i + 1) * m * n], m, k, n);
        }
        let mut shape = sx[..sx.len() - 2].to_vec();
        shape.extend([m, n]);
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::MatMulLeft { w, x, batch, m, k, n }, "matmul_left")
    }

    /// One LSTM step. `z [B, 4h]` holds the gate pre-activations in the
    /// order input, forget, candidate, output; `c_prev [B, h]` defaults to
    /// zeros. Returns `[B, 2h]`: the new hidden state then the new cell state.
    pub fn lstm_cell(&mut self, z: Var, c_prev: Option<Var>) -> Result<Var> {
        self.check(z)?;
        let sz = self.shape(z).to_vec();
        if sz.len() != 2 || sz[1] % 4 != 0 || sz[1] == 0 {
            return Err(Error::Shape(format!("lstm_cell gates {sz:?}, expected [B, 4h]")));
        }
        let (rows, h) = (sz[0], sz[1] / 4);
        if let Some(c) = c_prev {
            self.check(c)?;
            if self.shape(c) != [rows, h] {
                return Err(Error::Shape(format!("lstm_cell state {:?}, expected [{rows}, {h}]", self.shape(c))));
            }
        }
        let sigmoid = |v: T| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        };
        let zv = self.value(z).data();
        let prev = c_prev.map(|c| self.value(c).data());
        let mut gates = vec![T::zero(); rows * 5 * h];
        let mut out = vec![T::zero(); rows * 2 * h];
        for r in 0..rows {
            let zr = &zv[r * 4 * h..(r + 1) * 4 * h];
            let gt = &mut gates[r * 5 * h..(r + 1) * 5 * h];
            let o_row = &mut out[r * 2 * h..(r + 1) * 2 * h];
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let c_in = zr[2 * h + j].tanh();
                let o = sigmoid(zr[3 * h + j]);
                let cp = prev.map_or(T::zero(), |p| p[r * h + j]);
                let c = f * cp + i * c_in;
                let tc = c.tanh();
                gt[j] = i;
                gt[h + j] = f;
                gt[2 * h + j] = c_in;
                gt[3 * h + j] = o;
                gt[4 * h + j] = tc;
                o_row[j] = o * tc;
                o_row[h + j] = c;
            }
        }
        let t = Tensor::new(&[rows, 2 * h], out)?;
        self.push(t, Op::LstmCell { z, c_prev, hidden: h, gates }, "lstm_cell")
    }

    /// Channels-last 1-D convolution: `x [B, L, C_in]`, `w [C_out, C_in, K]`,
    /// optional `bias [C_out]`; output `[B, L_out, C_out]` with
    /// `L_out = floor((L + 2·pad − K)/stride) + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] {
            return Err(Error::Shape(format!("conv1d input {sx:?} with weight {sw:?}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(Error::Shape(format!("conv1d bias {:?}, expected [{}]", self.shape(b), sw[0])));
            }
        }
        let len_out = conv1d_out_len(sx[1], sw[2], stride, pad).ok_or_else(|| {
            Error::Shape(format!("conv1d: length {} too short for kernel {} pad {pad}", sx[1], sw[2]))
        })?;
        let geom = ConvGeom {
            batch: sx[0],
            len_in: sx[1],
            c_in: sx[2],
            len_out,
            c_out: sw[0],
            kernel: sw[2],
            stride,
            pad,
        };
        let patches = im2col(self.value(x).data(), &geom);
        let rows = geom.batch * len_out;
        let mut out = vec![T::zero(); rows * geom.c_out];
        matmul_nt(&patches, self.value(w).data(), &mut out, rows, geom.c_in * geom.kernel, geom.c_out);
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(geom.c_out) {
                row.iter_mut().zip(bv).for_each(|(o, &v)| *o += v);
            }
        }
        let t = Tensor::new(&[geom.batch, len_out, geom.c_out], out)?;
        self.push(t, Op::Conv1d { x, w, bias, geom, patches }, "conv1d")
    }

    /// Elementwise sum; `b` broadcasts onto the shape of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let bc = Broadcast::new(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = av.to_vec();
        bc.for_each(out.len(), |i, j| out[i] += bv[j]);
        let t = Tensor::new(self.shape(a), out)?;
        self.push(t, Op::Add { a, b, bc }, "add")
    }

    /// Adds a positional table `[L, d]` to every sequence of `x [B, L, d]`.
    pub fn embedding_add(&mut self, x: Var, table: Var) -> Result<Var> {
        let (sx, st) = (self.shape(x), self.shape(table));
        if sx.len() != 3 || st.len() != 2 || sx[1..] != st[..] {
            return Err(Error::Shape(format!("embedding_add {sx:?} + {st:?}")));
        }
        self.add(x, table)
    }

    /// Elementwise product; `b` broadcasts onto the shape of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let bc = Broadcast::new(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = av.to_vec();
        bc.for_each(out.len(), |i, j| out[i] *= bv[j]);
        let t = Tensor::new(self.shape(a), out)?;
        self.push(t, Op::Mul { a, b, bc }, "mul")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(
            a,
            "sigmoid",
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(a),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", |v| v.tanh(), Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary(a, "scale", |v| v * c, Op::Scale { a, c })
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        check_axis(&shape, axis, "softmax")?;
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| x[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for j in 0..n {
                    let e = (x[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[idx(j)] /= sum;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::Softmax { a, outer, n, inner }, "softmax")
    }

    /// Normalizes to zero mean and unit variance along `axis` (biased
    /// variance, `eps` inside the square root). Gain and bias are applied by
    /// the caller with [`Graph::mul`] and [`Graph::add`].
    pub fn layer_norm(&mut self, a: Var, axis: usize, eps: f64) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        check_axis(&shape, axis, "layer_norm")?;
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let nf = T::lit(n as f64);
        let eps = T::lit(eps);
        let mut out = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mean = (0..n).map(|j| x[idx(j)]).sum::<T>() / nf;
                let var = (0..n).map(|j| (x[idx(j)] - mean).powi(2)).sum::<T>() / nf;
                let r = T::one() / (var + eps).sqrt();
                rstd[o * inner + i] = r;
                for j in 0..n {
                    out[idx(j)] = (x[idx(j)] - mean) * r;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::LayerNorm { a, outer, n, inner, rstd }, "layer_norm")
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        self.check(a)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let x = self.value(a);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(x.shape(), out)?;
        self.push(t, Op::Dropout { a, mask }, "dropout")
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        check_axis(&shape, axis, "mean")?;
        let (outer, n, inner) = split_axis(&shape, axis);
        if n == 0 {
            return Err(Error::Shape("mean over empty axis".into()));
        }
        let x = self.value(a).data();
        let inv = T::one() / T::lit(n as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * n + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut oshape = shape.clone();
        oshape.remove(axis);
        let t = Tensor::new(&oshape, out)?;
        self.push(t, Op::Mean { a, outer, n, inner }, "mean")
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        for &p in parts {
            self.check(p)?;
        }
        let base = self.shape(first).to_vec();
        check_axis(&base, axis, "concat")?;
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(Error::Shape(format!("concat {base:?} with {s:?} on axis {axis}")));
            }
            sizes.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &sz) in parts.iter().zip(&sizes) {
                out.extend_from_slice(&self.value(p).data()[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::Concat { parts: parts.to_vec(), outer, sizes, inner }, "concat")
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        check_axis(&shape, axis, "slice")?;
        if start > end || end > shape[axis] {
            return Err(Error::Shape(format!("slice {start}..{end} of axis {axis} in {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let len = end - start;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let t = Tensor::new(&oshape, out)?;
        self.push(t, Op::Slice { a, outer, n, start, len, inner }, "slice")
    }

    /// Swaps two axes (materialized).
    pub fn transpose(&mut self, a: Var, ax1: usize, ax2: usize) -> Result<Var> {
        self.check(a)?;
        let in_shape = self.shape(a).to_vec();
        check_axis(&in_shape, ax1, "transpose")?;
        check_axis(&in_shape, ax2, "transpose")?;
        let out = swap_axes(self.value(a).data(), &in_shape, ax1, ax2);
        let mut shape = in_shape.clone();
        shape.swap(ax1, ax2);
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::Transpose { a, in_shape, ax1, ax2 }, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// Mean cross entropy of row-wise logits `[B, C]` against class labels,
    /// computed with max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(Error::Shape(format!("cross_entropy logits {shape:?} with {} labels", labels.len())));
        }
        let classes = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} >= class count {classes}")));
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); x.len()];
        let mut loss = T::zero();
        for (r, &lab) in labels.iter().enumerate() {
            let row = &x[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[lab];
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - lse).exp();
            }
        }
        loss /= T::lit(labels.len() as f64);
        let op = Op::CrossEntropy { a: logits, classes, labels: labels.to_vec(), probs };
        self.push(Tensor::scalar(loss), op, "cross_entropy")
    }
}
