use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::{gemm, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Matmul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, k: T },
    Relu { a: Var },
    Softmax { a: Var, axis: usize },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ConcatLast { a: Var, b: Var },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Gather { table: Var, ids: Vec<usize> },
    Sum { a: Var },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    Nll {
        probs: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of primitive operations for one traced computation.
///
/// A tape is single-use: [`Tape::backward`] consumes the recorded history and
/// a second call fails with [`TensorError::TapeConsumed`].
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf; its gradient is reported by [`Tape::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Batched product over leading axes; `b` is either a shared matrix or
    /// carries the same leading axes as `a`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T` on the last two axes.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (sa, sb) = (av.shape(), bv.shape());
        let op = "matmul";
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err(op, sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = {
            let (r, c) = (sb[sb.len() - 2], sb[sb.len() - 1]);
            if trans_b {
                (c, r)
            } else {
                (r, c)
            }
        };
        if kb != k {
            return Err(shape_err(op, sa, sb));
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); batch * m * n];
        if sb.len() == 2 {
            gemm(batch * m, k, n, av.data(), false, bv.data(), trans_b, &mut out, false);
        } else if sb.len() == sa.len() && &sb[..sb.len() - 2] == lead {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av.data()[i * m * k..],
                    false,
                    &bv.data()[i * k * n..],
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        } else {
            return Err(shape_err(op, sa, sb));
        }
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Matmul { a, b, trans_b }, g))
    }

    /// Elementwise sum; `b` may omit leading axes of `a`.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (sa, sb) = (av.shape(), bv.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add", sa, sb));
        }
        let mut data = av.data().to_vec();
        if !bv.is_empty() {
            for chunk in data.chunks_exact_mut(bv.len()) {
                for (x, &y) in chunk.iter_mut().zip(bv.data()) {
                    *x += y;
                }
            }
        }
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(sa.to_vec(), data)?, Op::Add { a, b }, g))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(av.shape().to_vec(), data)?, Op::Mul { a, b }, g))
    }

    pub fn scale(&self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x * k);
        let g = self.needs(a);
        self.push(out, Op::Scale { a, k }, g)
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        let g = self.needs(a);
        self.push(out, Op::Relu { a }, g)
    }

    /// Softmax along `axis`, stabilized by subtracting the running maximum.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = av.data();
        let mut out = vec![T::zero(); x.len()];
        if inner == 1 && n > 0 {
            for (row, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut sum = T::zero();
                for (o, &v) in dst.iter_mut().zip(row) {
                    *o = (v - mx).exp();
                    sum += *o;
                }
                let inv = T::one() / sum;
                dst.iter_mut().for_each(|o| *o *= inv);
            }
            let g = self.needs(a);
            return Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::Softmax { a, axis }, g));
        }
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * n + i) * inner + j;
                let mut mx = T::neg_infinity();
                for i in 0..n {
                    mx = mx.max(x[at(i)]);
                }
                let mut sum = T::zero();
                for i in 0..n {
                    let e = (x[at(i)] - mx).exp();
                    out[at(i)] = e;
                    sum += e;
                }
                for i in 0..n {
                    out[at(i)] /= sum;
                }
            }
        }
        let g = self.needs(a);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::Softmax { a, axis }, g))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain * x + bias`.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let shape = xv.shape();
        let d = *shape.last().ok_or_else(|| shape_err("layer_norm", shape, gv.shape()))?;
        if gv.shape() != [d] || bv.shape() != [d] || d == 0 {
            return Err(shape_err("layer_norm", shape, gv.shape()));
        }
        let rows = xv.len() / d;
        let dn = T::of(d as f64);
        let mut out = vec![T::zero(); xv.len()];
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let h = (row[i] - mean) * is;
                xhat[r * d + i] = h;
                out[r * d + i] = gv.data()[i] * h + bv.data()[i];
            }
        }
        let g = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape.to_vec(), out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            g,
        ))
    }

    pub fn concat_last(&self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat_last", sa, sb));
        }
        let (da, db) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = if da > 0 { av.len() / da } else { bv.len() / db.max(1) };
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for r in 0..rows {
            out.extend_from_slice(&av.data()[r * da..(r + 1) * da]);
            out.extend_from_slice(&bv.data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatLast { a, b }, g))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if shape.iter().product::<usize>() != av.len() {
            return Err(shape_err("reshape", av.shape(), shape));
        }
        let out = Tensor::new(shape.to_vec(), av.data().to_vec())?;
        let g = self.needs(a);
        Ok(self.push(out, Op::Reshape { a }, g))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let rank = av.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", av.shape(), perm));
        }
        let (shape, data) = permute_data(av.data(), av.shape(), perm);
        let g = self.needs(a);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            g,
        ))
    }

    /// Row lookup: `table` is `(vocab, d)`, output is `ids_shape + [d]`.
    pub fn gather(&self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(shape_err("gather", tv.shape(), ids_shape));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::Index {
                    op: "gather",
                    index: id,
                    extent: vocab,
                });
            }
            out.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let g = self.needs(table);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            g,
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let g = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, g)
    }

    /// `-sum_r w_r * log softmax(logits_r)[t_r]` over all rows of the last axis.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        let s = *lv.shape().last().ok_or_else(|| shape_err("cross_entropy", lv.shape(), &[]))?;
        let rows = if s == 0 { 0 } else { lv.len() / s };
        if targets.len() != rows || weights.len() != rows {
            return Err(shape_err("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let mut probs = vec![T::zero(); lv.len()];
        let mut loss = T::zero();
        for r in 0..rows {
            let row = &lv.data()[r * s..(r + 1) * s];
            let t = targets[r];
            if t >= s {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    extent: s,
                });
            }
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in probs[r * s..(r + 1) * s].iter_mut().zip(row) {
                *p = (x - mx).exp();
                z += *p;
            }
            for p in &mut probs[r * s..(r + 1) * s] {
                *p /= z;
            }
            loss -= weights[r] * (row[t] - mx - z.ln());
        }
        let g = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            g,
        ))
    }

    /// `-sum_r w_r * log probs_r[t_r]` for already-normalized rows.
    pub fn nll(&self, probs: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let pv = self.value(probs);
        let s = *pv.shape().last().ok_or_else(|| shape_err("nll", pv.shape(), &[]))?;
        let rows = if s == 0 { 0 } else { pv.len() / s };
        if targets.len() != rows || weights.len() != rows {
            return Err(shape_err("nll", pv.shape(), &[targets.len()]));
        }
        let mut loss = T::zero();
        for r in 0..rows {
            if targets[r] >= s {
                return Err(TensorError::Index {
                    op: "nll",
                    index: targets[r],
                    extent: s,
                });
            }
            if weights[r] != T::zero() {
                loss -= weights[r] * pv.data()[r * s + targets[r]].ln();
            }
        }
        let g = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            g,
        ))
    }

    /// Reverse pass from a rank-0 `loss`; visits every record once, newest first.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(TensorError::TapeConsumed);
        }
        let lshape = self.shape(loss);
        if !lshape.is_empty() {
            return Err(TensorError::NotScalar(lshape));
        }
        self.consumed.set(true);
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        let accumulate = |grads: &mut Vec<Option<Tensor<T>>>, v: Var, g: Tensor<T>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let val = &node.value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Matmul { a, b, trans_b } => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let sa = av.shape();
                    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                    let n = *val.shape().last().unwrap();
                    let batch = av.len() / (m * k).max(1);
                    let shared = bv.rank() == 2;
                    if nodes[a.0].needs_grad {
                        let mut ga = vec![T::zero(); av.len()];
                        // dA = dC * op(B)^T
                        if shared {
                            gemm(batch * m, n, k, gout.data(), false, bv.data(), !trans_b, &mut ga, false);
                        } else {
                            for i in 0..batch {
                                gemm(
                                    m,
                                    n,
                                    k,
                                    &gout.data()[i * m * n..],
                                    false,
                                    &bv.data()[i * k * n..],
                                    !trans_b,
                                    &mut ga[i * m * k..(i + 1) * m * k],
                                    false,
                                );
                            }
                        }
                        accumulate(&mut grads, *a, Tensor::new(sa.to_vec(), ga)?);
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = vec![T::zero(); bv.len()];
                        let slices = if shared { 1 } else { batch };
                        let rows = if shared { batch * m } else { m };
                        for i in 0..slices {
                            let a_s = &av.data()[i * rows * k..];
                            let g_s = &gout.data()[i * rows * n..];
                            let out = &mut gb[i * k * n..(i + 1) * k * n];
                            if *trans_b {
                                // dB (n x k) = dC^T * A
                                gemm(n, rows, k, g_s, true, a_s, false, out, false);
                            } else {
                                // dB (k x n) = A^T * dC
                                gemm(k, rows, n, a_s, true, g_s, false, out, false);
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
                    }
                }
                Op::Add { a, b } => {
                    if nodes[b.0].needs_grad {
                        let bshape = nodes[b.0].value.shape().to_vec();
                        let inner = nodes[b.0].value.len();
                        let mut gb = vec![T::zero(); inner];
                        if inner > 0 {
                            for chunk in gout.data().chunks_exact(inner) {
                                for (acc, &g) in gb.iter_mut().zip(chunk) {
                                    *acc += g;
                                }
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::new(bshape, gb)?);
                    }
                    accumulate(&mut grads, *a, gout);
                }
                Op::Mul { a, b } => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    if nodes[a.0].needs_grad {
                        let d = gout.data().iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
                        accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), d)?);
                    }
                    if nodes[b.0].needs_grad {
                        let d = gout.data().iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                        accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), d)?);
                    }
                }
                Op::Scale { a, k } => {
                    let k = *k;
                    accumulate(&mut grads, *a, gout.map(|g| g * k));
                }
                Op::Relu { a } => {
                    let d = gout
                        .data()
                        .iter()
                        .zip(val.data())
                        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(val.shape().to_vec(), d)?);
                }
                Op::Softmax { a, axis } => {
                    let shape = val.shape();
                    let n = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let outer: usize = shape[..*axis].iter().product();
                    let (y, g) = (val.data(), gout.data());
                    let mut d = vec![T::zero(); y.len()];
                    if inner == 1 && n > 0 {
                        for ((yr, gr), dr) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(d.chunks_exact_mut(n)) {
                            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            for ((o, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                                *o = yi * (gi - dot);
                            }
                        }
                    } else {
                        for o in 0..outer {
                            for j in 0..inner {
                                let at = |i: usize| (o * n + i) * inner + j;
                                let dot: T = (0..n).map(|i| y[at(i)] * g[at(i)]).sum();
                                for i in 0..n {
                                    d[at(i)] = y[at(i)] * (g[at(i)] - dot);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(shape.to_vec(), d)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = &nodes[gain.0].value;
                    let d = gv.len();
                    let rows = xhat.len() / d;
                    let dn = T::of(d as f64);
                    let g = gout.data();
                    let mut dgain = vec![T::zero(); d];
                    let mut dbias = vec![T::zero(); d];
                    let mut dx = vec![T::zero(); xhat.len()];
                    for r in 0..rows {
                        let (gr, hr) = (&g[r * d..(r + 1) * d], &xhat[r * d..(r + 1) * d]);
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for i in 0..d {
                            dgain[i] += gr[i] * hr[i];
                            dbias[i] += gr[i];
                            let dh = gr[i] * gv.data()[i];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[i];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for i in 0..d {
                            let dh = gr[i] * gv.data()[i];
                            dx[r * d + i] = inv_std[r] * (dh - mean_dh - hr[i] * mean_dh_h);
                        }
                    }
                    let xshape = nodes[x.0].value.shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(xshape, dx)?);
                    accumulate(&mut grads, *gain, Tensor::new(vec![d], dgain)?);
                    accumulate(&mut grads, *bias, Tensor::new(vec![d], dbias)?);
                }
                Op::ConcatLast { a, b } => {
                    let sa = nodes[a.0].value.shape().to_vec();
                    let sb = nodes[b.0].value.shape().to_vec();
                    let (da, db) = (sa[sa.len() - 1], sb[sb.len() - 1]);
                    let rows = gout.len() / (da + db).max(1);
                    let mut ga = Vec::with_capacity(rows * da);
                    let mut gb = Vec::with_capacity(rows * db);
                    for r in 0..rows {
                        let row = &gout.data()[r * (da + db)..(r + 1) * (da + db)];
                        ga.extend_from_slice(&row[..da]);
                        gb.extend_from_slice(&row[da..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(sa, ga)?);
                    accumulate(&mut grads, *b, Tensor::new(sb, gb)?);
                }
                Op::Reshape { a } => {
                    let sa = nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads, *a, gout.reshape(&sa)?);
                }
                Op::Permute { a, perm } => {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let (shape, data) = permute_data(gout.data(), gout.shape(), &inverse);
                    accumulate(&mut grads, *a, Tensor::new(shape, data)?);
                }
                Op::Gather { table, ids } => {
                    let tv = &nodes[table.0].value;
                    let d = tv.shape()[1];
                    let mut gt = vec![T::zero(); tv.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for i in 0..d {
                            gt[id * d + i] += gout.data()[r * d + i];
                        }
                    }
                    accumulate(&mut grads, *table, Tensor::new(tv.shape().to_vec(), gt)?);
                }
                Op::Sum { a } => {
                    let sa = nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&sa, gout.item()));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let lshape = nodes[logits.0].value.shape().to_vec();
                    let s = *lshape.last().unwrap();
                    let g = gout.item();
                    let mut d = probs.clone();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let row = &mut d[r * s..(r + 1) * s];
                        row[t] -= T::one();
                        for v in row.iter_mut() {
                            *v *= g * w;
                        }
                    }
                    accumulate(&mut grads, *logits, Tensor::new(lshape, d)?);
                }
                Op::Nll {
                    probs,
                    targets,
                    weights,
                } => {
                    let pv = &nodes[probs.0].value;
                    let s = *pv.shape().last().unwrap();
                    let g = gout.item();
                    let mut d = vec![T::zero(); pv.len()];
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w != T::zero() {
                            d[r * s + t] = -g * w / pv.data()[r * s + t];
                        }
                    }
                    accumulate(&mut grads, *probs, Tensor::new(pv.shape().to_vec(), d)?);
                }
            }
        }
        // Only leaves keep their gradients.
        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}
