use std::ops::Range;

use super::kernels::gemm_acc;
use super::{Op, Tape, Unary, Var};
use crate::error::{Error, Result};
use crate::tensor::{broadcast_offsets, broadcast_shapes, split_axis, strides, Scalar, Tensor};

/// Layout of a (possibly batched, possibly broadcast) matrix product.
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub p: usize,
    pub out_shape: Vec<usize>,
    /// Per output batch entry, element offsets into `a` and `b`.
    pub a_off: Vec<usize>,
    pub b_off: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, p) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        if b.len() == 2 {
            // Fold every leading dimension of `a` into the row count.
            let rows: usize = a[..a.len() - 1].iter().product();
            let mut out_shape = a[..a.len() - 1].to_vec();
            out_shape.push(p);
            return Ok(MatmulPlan {
                m: rows,
                k,
                p,
                out_shape,
                a_off: vec![0],
                b_off: vec![0],
            });
        }
        let a_batch = &a[..a.len() - 2];
        let b_batch = &b[..b.len() - 2];
        let batch = broadcast_shapes("matmul", a_batch, b_batch).map_err(|_| mismatch())?;
        let a_off = broadcast_offsets(a_batch, &batch)
            .into_iter()
            .map(|o| o * m * k)
            .collect();
        let b_off = broadcast_offsets(b_batch, &batch)
            .into_iter()
            .map(|o| o * k * p)
            .collect();
        let mut out_shape = batch;
        out_shape.extend_from_slice(&[m, p]);
        Ok(MatmulPlan {
            m,
            k,
            p,
            out_shape,
            a_off,
            b_off,
        })
    }
}

/// Elementwise `f(a, b)` with numpy broadcasting.
pub(crate) fn broadcast_zip<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape(), data);
    }
    let out = broadcast_shapes(op, a.shape(), b.shape())?;
    let numel: usize = out.iter().product();
    // `b` is a trailing suffix of `a` (bias, position embedding).
    if a.shape() == out.as_slice() && out.ends_with(b.shape()) {
        let bn = b.numel().max(1);
        let mut data = Vec::with_capacity(numel);
        for chunk in a.data().chunks(bn) {
            data.extend(chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
        }
        return Tensor::new(out, data);
    }
    let ao = broadcast_offsets(a.shape(), &out);
    let bo = broadcast_offsets(b.shape(), &out);
    let data = ao
        .iter()
        .zip(&bo)
        .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
        .collect();
    Tensor::new(out, data)
}

/// `0.5·x·(1 + tanh(u))` with `u = c·(x + a·x³)`, evaluated as the
/// equivalent `x·σ(2u)` so only one exponential is needed.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let (c, a, _) = gelu_consts::<T>();
    let u = c * (x + a * x * x * x);
    x / (T::one() + (-(u + u)).exp())
}

pub(crate) fn gelu_deriv<T: Scalar>(x: T) -> T {
    let (c, a, two) = gelu_consts::<T>();
    let u = c * (x + a * x * x * x);
    let s = T::one() / (T::one() + (-(u + u)).exp());
    let du = c * (T::one() + T::of_f64(3.0) * a * x * x);
    s + x * s * (T::one() - s) * two * du
}

#[inline]
fn gelu_consts<T: Scalar>() -> (T, T, T) {
    (
        T::of_f64((2.0 / std::f64::consts::PI).sqrt()),
        T::of_f64(0.044715),
        T::of_f64(2.0),
    )
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::BadAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

/// Softmax (or log-softmax) over `axis`, with max subtraction.
pub(crate) fn softmax_along<T: Scalar>(x: &Tensor<T>, axis: usize, log: bool) -> Tensor<T> {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let idx = |j: usize| base + j * inner;
            let mut mx = T::neg_infinity();
            for j in 0..n {
                mx = mx.max(src[idx(j)]);
            }
            let mut total = T::zero();
            for j in 0..n {
                let e = (src[idx(j)] - mx).exp();
                out[idx(j)] = e;
                total += e;
            }
            if log {
                let lse = total.ln();
                for j in 0..n {
                    out[idx(j)] = src[idx(j)] - mx - lse;
                }
            } else {
                let inv = total.recip();
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] * inv;
                }
            }
        }
    }
    Tensor::new(x.shape(), out).expect("softmax shape")
}

impl<T: Scalar> Tape<T> {
    /// Matrix product over the last two axes, broadcasting leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let plan = MatmulPlan::new(av.shape(), bv.shape())?;
        let (m, k, p) = (plan.m, plan.k, plan.p);
        let mut out = vec![T::zero(); plan.a_off.len() * m * p];
        for (bi, (&ao, &bo)) in plan.a_off.iter().zip(&plan.b_off).enumerate() {
            gemm_acc(
                &av.data()[ao..ao + m * k],
                false,
                &bv.data()[bo..bo + k * p],
                false,
                &mut out[bi * m * p..(bi + 1) * m * p],
                m,
                k,
                p,
            );
        }
        let value = Tensor::new(plan.out_shape, out)?;
        Ok(self.record(value, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_zip("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.record(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_zip("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.record(value, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_zip("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.record(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::of_f64(factor);
        let value = self.value(a).map(|x| x * f);
        self.record(value, Op::Scale { a, factor }, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let value = match kind {
            Unary::Gelu => self.value(a).map(gelu),
            Unary::Sqrt => self.value(a).map(|x| x.sqrt()),
            Unary::Recip => self.value(a).map(|x| x.recip()),
            Unary::Abs => self.value(a).map(|x| x.abs()),
            Unary::Exp => self.value(a).map(|x| x.exp()),
            Unary::Ln => self.value(a).map(|x| x.ln()),
            Unary::Tanh => self.value(a).map(|x| x.tanh()),
        };
        self.record(value, Op::Unary { a, kind }, &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    /// Elementwise user function with a user-supplied derivative. Both are
    /// evaluated in f64.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, deriv: fn(f64) -> f64) -> Var {
        let value = self.value(a).map(|x| T::of_f64(f(x.as_f64())));
        self.record(value, Op::Map { a, deriv }, &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("softmax", self.shape(a), axis)?;
        let value = softmax_along(self.value(a), axis, false);
        Ok(self.record(value, Op::Softmax { a, axis }, &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("log_softmax", self.shape(a), axis)?;
        let value = softmax_along(self.value(a), axis, true);
        Ok(self.record(value, Op::LogSoftmax { a, axis }, &[a]))
    }

    /// Normalize each vector along the last axis to zero mean and unit
    /// variance, then apply `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap_or(&0);
        if d == 0 {
            return Err(Error::EmptyAxis { op: "layer_norm" });
        }
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let eps_t = T::of_f64(eps);
        let inv_d = T::of_f64(1.0 / d as f64);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rstd = (var + eps_t).sqrt().recip();
            out.extend(
                row.iter()
                    .zip(g.iter().zip(b))
                    .map(|(&v, (&gi, &bi))| (v - mean) * rstd * gi + bi),
            );
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.record(
            value,
            Op::LayerNorm { x, gain, bias, eps },
            &[x, gain, bias],
        ))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(value, Op::SumAll { a }, &[a])
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::EmptyAxis { op: "mean" });
        }
        let s = self.sum(a);
        Ok(self.scale(s, 1.0 / n as f64))
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, keepdim: bool, mean: bool) -> Result<Var> {
        let op = if mean { "mean_axis" } else { "sum_axis" };
        let shape = self.shape(a).to_vec();
        check_axis(op, &shape, axis)?;
        let (outer, n, inner) = split_axis(&shape, axis);
        if n == 0 {
            return Err(Error::EmptyAxis { op });
        }
        let src = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        if mean {
            let inv = T::of_f64(1.0 / n as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let value = Tensor::new(out_shape, out)?;
        let node = if mean {
            Op::MeanAxis { a, axis }
        } else {
            Op::SumAxis { a, axis }
        };
        Ok(self.record(value, node, &[a]))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce_axis(a, axis, keepdim, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce_axis(a, axis, keepdim, true)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let value = Tensor::new(out_shape, out)?;
        Ok(self.record(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("slice", &shape, axis)?;
        if range.start > range.end || range.end > shape[axis] {
            return Err(Error::OutOfBounds {
                op: "slice",
                axis,
                start: range.start,
                end: range.end,
                len: shape[axis],
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let width = (range.end - range.start) * inner;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let begin = o * n * inner + range.start * inner;
            out.extend_from_slice(&src[begin..begin + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = range.end - range.start;
        let value = Tensor::new(out_shape, out)?;
        Ok(self.record(
            value,
            Op::Slice {
                a,
                axis,
                start: range.start,
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.record(value, Op::Reshape { a }, &[a]))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Contract(format!(
                "permute {perm:?} invalid for shape {shape:?}"
            )));
        }
        let value = permute_tensor(self.value(a), perm);
        Ok(self.record(
            value,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            &[a],
        ))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::BadAxis {
                op: "transpose",
                axis: 1,
                rank: r,
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let out = broadcast_shapes("broadcast_to", src.shape(), shape)?;
        if out != shape {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                lhs: src.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = broadcast_offsets(src.shape(), shape)
            .into_iter()
            .map(|o| src.data()[o])
            .collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.record(value, Op::BroadcastTo { a }, &[a]))
    }
}

pub(crate) fn permute_tensor<T: Scalar>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = t.shape();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel = t.numel();
    let mut out = Vec::with_capacity(numel);
    // When the last axis stays in place, whole rows move as contiguous runs.
    let rank = out_shape.len();
    let (outer_shape, run) = match perm.last() {
        Some(&l) if l + 1 == rank && numel > 0 => (&out_shape[..rank - 1], out_shape[rank - 1]),
        _ => (&out_shape[..], 1),
    };
    let mut idx = vec![0usize; outer_shape.len()];
    let mut off = 0usize;
    for _ in 0..numel / run.max(1) {
        out.extend_from_slice(&t.data()[off..off + run]);
        for ax in (0..outer_shape.len()).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < outer_shape[ax] {
                break;
            }
            off -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permute shape")
}
