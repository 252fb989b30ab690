//! AdamW and the warmup-plus-cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moments per parameter tensor, plus the number of
/// updates applied so far.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub steps: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor<f32>]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            steps: 0,
        }
    }
}

impl AdamW {
    /// One update at learning rate `lr`. A missing gradient counts as zero.
    /// Weight decay is applied only where `decay[i]` is set.
    pub fn step(
        &self,
        params: &mut [Tensor<f32>],
        grads: &[Option<&Tensor<f32>>],
        decay: &[bool],
        state: &mut AdamState,
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len()
            || decay.len() != params.len()
            || state.m.len() != params.len()
        {
            return Err(Error::Contract(format!(
                "{} params, {} grads, {} decay flags, {} moment slots",
                params.len(),
                grads.len(),
                decay.len(),
                state.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if let Some(g) = g {
                if g.shape() != p.shape() || state.m[i].len() != p.numel() {
                    return Err(Error::ShapeMismatch {
                        op: "adamw",
                        lhs: p.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        step: state.steps as usize,
                        what: format!("gradient of parameter {i}"),
                    });
                }
            }
        }
        state.steps += 1;
        let t = state.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (i, p) in params.iter_mut().enumerate() {
            let shrink = if decay[i] {
                (1.0 - lr * self.weight_decay) as f32
            } else {
                1.0
            };
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            let g = grads[i].map(Tensor::data);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] as f64 / c1;
                let vhat = v[j] as f64 / c2;
                *w = *w * shrink - (lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr` over `warmup` steps, then cosine decay
/// to 0 at `total`.
pub fn lr_schedule(step: usize, warmup: usize, total: usize, base_lr: f64) -> f64 {
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return base_lr;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}
