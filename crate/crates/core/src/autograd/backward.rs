use super::kernels::{gemm_acc, reduce_broadcast};
use super::ops::{broadcast_zip, gelu_deriv, permute_tensor, MatmulPlan};
use super::{Op, Tape, Unary};
use crate::error::Result;
use crate::tensor::{split_axis, Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Push the gradient `g` of node `id` into its inputs.
    pub(super) fn propagate(
        &self,
        id: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let plan = MatmulPlan::new(av.shape(), bv.shape())?;
                let (m, k, p) = (plan.m, plan.k, plan.p);
                let gd = g.data();
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); av.numel()];
                    for (bi, (&ao, &bo)) in plan.a_off.iter().zip(&plan.b_off).enumerate() {
                        gemm_acc(
                            &gd[bi * m * p..(bi + 1) * m * p],
                            false,
                            &bv.data()[bo..bo + k * p],
                            true,
                            &mut da[ao..ao + m * k],
                            m,
                            p,
                            k,
                        );
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); bv.numel()];
                    for (bi, (&ao, &bo)) in plan.a_off.iter().zip(&plan.b_off).enumerate() {
                        gemm_acc(
                            &av.data()[ao..ao + m * k],
                            true,
                            &gd[bi * m * p..(bi + 1) * m * p],
                            false,
                            &mut db[bo..bo + k * p],
                            k,
                            m,
                            p,
                        );
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = matches!(node.op, Op::Sub { .. });
                if self.requires_grad(*a) {
                    let da = reduce_broadcast(g.data(), out.shape(), self.shape(*a));
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = reduce_broadcast(g.data(), out.shape(), self.shape(*b));
                    if sign {
                        db.iter_mut().for_each(|v| *v = -*v);
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Mul { a, b } => {
                if self.requires_grad(*a) {
                    let gb = broadcast_zip("mul", g, self.value(*b), |x, y| x * y)?;
                    let da = reduce_broadcast(gb.data(), out.shape(), self.shape(*a));
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let ga = broadcast_zip("mul", g, self.value(*a), |x, y| x * y)?;
                    let db = reduce_broadcast(ga.data(), out.shape(), self.shape(*b));
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale { a, factor } => {
                let f = T::of_f64(*factor);
                self.accumulate(grads, *a, g.data().iter().map(|&v| v * f).collect());
            }
            Op::Unary { a, kind } => {
                let x = self.value(*a).data();
                let y = out.data();
                let zero = T::zero();
                let half = T::of_f64(0.5);
                let da = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        let d = match kind {
                            Unary::Gelu => gelu_deriv(x[i]),
                            Unary::Sqrt => half / y[i],
                            Unary::Recip => -(y[i] * y[i]),
                            Unary::Abs => {
                                if x[i] > zero {
                                    T::one()
                                } else if x[i] < zero {
                                    -T::one()
                                } else {
                                    zero
                                }
                            }
                            Unary::Exp => y[i],
                            Unary::Ln => x[i].recip(),
                            Unary::Tanh => T::one() - y[i] * y[i],
                        };
                        gi * d
                    })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Map { a, deriv } => {
                let x = self.value(*a).data();
                let da = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| gi * T::of_f64(deriv(xi.as_f64())))
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Softmax { a, axis } | Op::LogSoftmax { a, axis } => {
                let log = matches!(node.op, Op::LogSoftmax { .. });
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let (y, gd) = (out.data(), g.data());
                let mut da = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        if log {
                            // dx = dy - softmax * sum(dy)
                            let total: T = (0..n).map(|j| gd[base + j * inner]).sum();
                            for j in 0..n {
                                let at = base + j * inner;
                                da[at] = gd[at] - y[at].exp() * total;
                            }
                        } else {
                            // dx = y * (dy - sum(dy * y))
                            let dot: T = (0..n)
                                .map(|j| gd[base + j * inner] * y[base + j * inner])
                                .sum();
                            for j in 0..n {
                                let at = base + j * inner;
                                da[at] = y[at] * (gd[at] - dot);
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gain_v = self.value(*gain).data();
                let d = gain_v.len();
                let inv_d = T::of_f64(1.0 / d as f64);
                let eps = T::of_f64(*eps);
                let mut dx = vec![T::zero(); xv.numel()];
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for (r, (row, grow)) in xv.data().chunks(d).zip(g.data().chunks(d)).enumerate() {
                    let mean = row.iter().copied().sum::<T>() * inv_d;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                    let rstd = (var + eps).sqrt().recip();
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * rstd;
                        dxhat[j] = grow[j] * gain_v[j];
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                    }
                    let m1 = dxhat.iter().copied().sum::<T>() * inv_d;
                    let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                    for j in 0..d {
                        dx[r * d + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dgain);
                self.accumulate(grads, *bias, dbias);
            }
            Op::SumAll { a } => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, vec![gv; self.value(*a).numel()]);
            }
            Op::SumAxis { a, axis } | Op::MeanAxis { a, axis } => {
                let shape = self.shape(*a);
                let (outer, n, inner) = split_axis(shape, *axis);
                let f = if matches!(node.op, Op::MeanAxis { .. }) {
                    T::of_f64(1.0 / n as f64)
                } else {
                    T::one()
                };
                let gd = g.data();
                let mut da = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        da.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * f));
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.requires_grad(p) {
                        let mut dp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let begin = (o * total + offset) * inner;
                            dp.extend_from_slice(&g.data()[begin..begin + len * inner]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let shape = self.shape(*a);
                let (outer, n, inner) = split_axis(shape, *axis);
                let width = out.shape()[*axis] * inner;
                let mut da = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let begin = o * n * inner + start * inner;
                    da[begin..begin + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
                }
                self.accumulate(grads, *a, da);
            }
            Op::Reshape { a } => {
                self.accumulate(grads, *a, g.data().to_vec());
            }
            Op::Permute { a, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                self.accumulate(grads, *a, permute_tensor(g, &inverse).into_data());
            }
            Op::BroadcastTo { a } => {
                let da = reduce_broadcast(g.data(), out.shape(), self.shape(*a));
                self.accumulate(grads, *a, da);
            }
        }
        Ok(())
    }
}
