//! Patch-diversification regularizers and the combined training objective.
//!
//! All losses take token matrices of shape `[batch, n, dim]` with the class
//! patch already removed, and average over the batch.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::MIN_ROW_NORM;
use crate::mixing::MixedBatch;
use crate::tensor::{Scalar, Tensor};
use crate::vit::{BoundParams, ForwardOutput};

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_cos: f64,
    pub alpha_contrastive: f64,
    pub alpha_mixing: f64,
    /// Classify the average-pooled patches of each source image instead of
    /// every patch.
    pub pooled_mixing: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_cos: 1.0,
            alpha_contrastive: 1.0,
            alpha_mixing: 1.0,
            pooled_mixing: false,
        }
    }
}

impl LossWeights {
    pub fn baseline() -> Self {
        LossWeights {
            alpha_cos: 0.0,
            alpha_contrastive: 0.0,
            alpha_mixing: 0.0,
            pooled_mixing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("alpha_cos", self.alpha_cos),
            ("alpha_contrastive", self.alpha_contrastive),
            ("alpha_mixing", self.alpha_mixing),
        ] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {a}")));
            }
        }
        Ok(())
    }
}

/// Which recorded layers the regularizers read.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTaps {
    /// Read the final-normed tokens instead of the raw last block output.
    pub final_norm: bool,
    /// Stack entry used as the gradient-stopped contrastive reference.
    pub contrastive_reference_layer: usize,
    /// Stack entry the mixing head reads; `None` means the last layer.
    pub mixing_layer: Option<usize>,
}

impl Default for LossTaps {
    fn default() -> Self {
        LossTaps {
            final_norm: false,
            contrastive_reference_layer: 1,
            mixing_layer: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub ce_class: f64,
    pub l_cos: f64,
    pub l_contrastive: f64,
    pub l_mixing: f64,
}

fn expect_rank3<T: Scalar>(tape: &Tape<T>, v: Var, what: &str) -> Result<(usize, usize, usize)> {
    match *tape.shape(v) {
        [b, n, d] => Ok((b, n, d)),
        ref s => Err(Error::Contract(format!(
            "{what} expects [batch, n, dim], got {s:?}"
        ))),
    }
}

/// Mean absolute cosine between distinct patch rows, averaged over the batch.
pub fn cosine_loss<T: Scalar>(tape: &mut Tape<T>, h: Var) -> Result<Var> {
    let (b, n, _) = expect_rank3(tape, h, "cosine_loss")?;
    if n < 2 {
        return Err(Error::Contract(format!(
            "cosine_loss needs n >= 2, got {n}"
        )));
    }
    let sq = tape.mul(h, h)?;
    let sumsq = tape.sum_axis(sq, 2, true)?;
    let norm = tape.sqrt(sumsq);
    if let Some(i) = tape
        .value(norm)
        .data()
        .iter()
        .position(|v| v.as_f64().is_nan() || v.as_f64() < MIN_ROW_NORM)
    {
        return Err(Error::DegenerateRow {
            row: i % n,
            norm: tape.value(norm).data()[i].as_f64(),
        });
    }
    let inv = tape.recip(norm);
    let unit = tape.mul(h, inv)?;
    let unit_t = tape.transpose(unit)?;
    let gram = tape.matmul(unit, unit_t)?;
    let gram = tape.abs(gram);
    let off_diag = tape.constant(Tensor::from_fn([n, n], |i| {
        if i / n == i % n {
            T::zero()
        } else {
            T::one()
        }
    }));
    let masked = tape.mul(gram, off_diag)?;
    let total = tape.sum(masked);
    Ok(tape.scale(total, 1.0 / (b * n * (n - 1)) as f64))
}

/// Per patch, a two-way log-softmax between the positive score
/// `h1_i·hL_i` and the score against the mean of the other patches,
/// `h1_i·mean_{j≠i} hL_j`; negated and averaged. `h1` is detached here, so
/// no gradient ever reaches it.
pub fn contrastive_loss<T: Scalar>(tape: &mut Tape<T>, h1: Var, hl: Var) -> Result<Var> {
    let (b, n, d) = expect_rank3(tape, hl, "contrastive_loss")?;
    if tape.shape(h1) != tape.shape(hl) {
        return Err(Error::ShapeMismatch {
            op: "contrastive_loss",
            lhs: tape.shape(h1).to_vec(),
            rhs: tape.shape(hl).to_vec(),
        });
    }
    if n < 2 {
        return Err(Error::Contract(format!(
            "contrastive_loss needs n >= 2, got {n}"
        )));
    }
    let reference = tape.detach(h1);
    let pos = tape.mul(reference, hl)?;
    let pos = tape.sum_axis(pos, 2, true)?;
    let total = tape.sum_axis(hl, 1, true)?;
    let others = tape.sub(total, hl)?;
    let others = tape.scale(others, 1.0 / (n - 1) as f64);
    let neg = tape.mul(reference, others)?;
    let neg = tape.sum_axis(neg, 2, true)?;
    let scores = tape.concat(&[pos, neg], 2)?;
    let logp = tape.log_softmax(scores, 2)?;
    let logp_pos = tape.slice(logp, 2, 0..1)?;
    let s = tape.sum(logp_pos);
    debug_assert_eq!(tape.shape(hl), [b, n, d]);
    Ok(tape.scale(s, -1.0 / (b * n) as f64))
}

/// `-Σ targets·log_softmax(logits)` over the last axis; `targets` rows are
/// pre-scaled so the plain sum is the desired average.
fn weighted_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: Tensor<T>,
) -> Result<Var> {
    let axis = tape.shape(logits).len() - 1;
    let logp = tape.log_softmax(logits, axis)?;
    let t = tape.constant(targets);
    let prod = tape.mul(logp, t)?;
    let s = tape.sum(prod);
    Ok(tape.neg(s))
}

/// Soft-label cross entropy of `logits: [batch, classes]`, batch mean.
pub fn soft_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[Vec<f64>],
) -> Result<Var> {
    let (b, c) = match *tape.shape(logits) {
        [b, c] => (b, c),
        ref s => {
            return Err(Error::Contract(format!(
                "soft_cross_entropy expects [batch, classes], got {s:?}"
            )))
        }
    };
    if targets.len() != b || targets.iter().any(|t| t.len() != c) {
        return Err(Error::Contract(format!(
            "targets do not match logits of shape [{b}, {c}]"
        )));
    }
    let inv_b = 1.0 / b as f64;
    let t = Tensor::from_fn([b, c], |i| T::of_f64(targets[i / c][i % c] * inv_b));
    weighted_cross_entropy(tape, logits, t)
}

/// Inputs of the mixing loss for one batch.
pub struct PatchLabels<'a> {
    pub y_patch: &'a [Vec<usize>],
    pub masks: &'a [Vec<bool>],
    pub y0: &'a [usize],
    pub y1: &'a [usize],
}

impl<'a> PatchLabels<'a> {
    pub fn from_batch(batch: &'a MixedBatch) -> Self {
        PatchLabels {
            y_patch: &batch.y_patch,
            masks: &batch.masks,
            y0: &batch.y0,
            y1: &batch.y1,
        }
    }
}

/// Patch-level classification through the shared head `(weight, bias)`.
///
/// Per-patch mode averages the cross entropy of every patch against its
/// source label. Pooled mode averages the patches of each source image,
/// classifies the pooled vector, and averages over the non-empty groups.
pub fn mixing_loss<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    head: (Var, Var),
    labels: &PatchLabels<'_>,
    pooled: bool,
) -> Result<Var> {
    let (b, n, _) = expect_rank3(tape, h, "mixing_loss")?;
    let c = tape.shape(head.1)[0];
    if labels.y_patch.len() != b || labels.y_patch.iter().any(|y| y.len() != n) || n == 0 {
        return Err(Error::Contract(format!(
            "need {b} per-patch label rows of length {n}"
        )));
    }
    if labels
        .y_patch
        .iter()
        .flatten()
        .chain(labels.y0)
        .chain(labels.y1)
        .any(|&y| y >= c)
    {
        return Err(Error::Validation(format!(
            "patch label out of range for {c} classes"
        )));
    }
    if !pooled {
        let logits = tape.matmul(h, head.0)?;
        let logits = tape.add(logits, head.1)?;
        let w = 1.0 / (b * n) as f64;
        let targets = Tensor::from_fn([b, n, c], |i| {
            let (row, cls) = (i / c, i % c);
            if labels.y_patch[row / n][row % n] == cls {
                T::of_f64(w)
            } else {
                T::zero()
            }
        });
        return weighted_cross_entropy(tape, logits, targets);
    }
    if labels.masks.len() != b || labels.y0.len() != b || labels.y1.len() != b {
        return Err(Error::Contract(
            "pooled mixing loss needs masks and labels per row".into(),
        ));
    }
    let mut pool = vec![T::zero(); b * 2 * n];
    let mut targets = vec![T::zero(); b * 2 * c];
    for e in 0..b {
        let mask = &labels.masks[e];
        let count0 = mask.iter().filter(|&&m| m).count();
        let counts = [count0, n - count0];
        let groups = counts.iter().filter(|&&k| k > 0).count() as f64;
        for (g, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            for (i, &m) in mask.iter().enumerate() {
                if m == (g == 0) {
                    pool[(e * 2 + g) * n + i] = T::of_f64(1.0 / count as f64);
                }
            }
            let y = if g == 0 { labels.y0[e] } else { labels.y1[e] };
            targets[(e * 2 + g) * c + y] = T::of_f64(1.0 / (groups * b as f64));
        }
    }
    let pool = tape.constant(Tensor::new([b, 2, n], pool)?);
    let pooled_h = tape.matmul(pool, h)?;
    let logits = tape.matmul(pooled_h, head.0)?;
    let logits = tape.add(logits, head.1)?;
    weighted_cross_entropy(tape, logits, Tensor::new([b, 2, c], targets)?)
}

/// Drop the class patch from `[batch, n+1, dim]`.
pub fn patch_rows<T: Scalar>(tape: &mut Tape<T>, h: Var) -> Result<Var> {
    let t = tape.shape(h).get(1).copied().unwrap_or(0);
    tape.slice(h, 1, 1..t)
}

/// Class-patch soft cross entropy plus the weighted regularizers.
///
/// A regularizer whose weight is zero is still evaluated for the report but
/// on detached inputs, so it contributes nothing to any gradient.
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    out: &ForwardOutput,
    params: &BoundParams,
    batch: &MixedBatch,
    weights: &LossWeights,
    taps: &LossTaps,
) -> Result<(Var, LossReport)> {
    weights.validate()?;
    let depth = out.layers.len() - 1;
    let layer = |l: usize| -> Result<Var> {
        if l == depth && taps.final_norm {
            return Ok(out.normed);
        }
        out.layers.get(l).copied().ok_or_else(|| {
            Error::Contract(format!(
                "loss needs activation layer {l}, model has layers 0..={depth}"
            ))
        })
    };
    let last = layer(depth)?;
    let reference = layer(taps.contrastive_reference_layer)?;
    let mix_layer = layer(taps.mixing_layer.unwrap_or(depth))?;

    let ce = soft_cross_entropy(tape, out.logits, &batch.y_mix)?;
    let mut total = ce;

    let live =
        |tape: &mut Tape<T>, v: Var, alpha: f64| if alpha > 0.0 { v } else { tape.detach(v) };

    let h = live(tape, last, weights.alpha_cos);
    let h = patch_rows(tape, h)?;
    let l_cos = cosine_loss(tape, h)?;

    let h = live(tape, last, weights.alpha_contrastive);
    let h = patch_rows(tape, h)?;
    let r = patch_rows(tape, reference)?;
    let l_con = contrastive_loss(tape, r, h)?;

    let h = live(tape, mix_layer, weights.alpha_mixing);
    let h = patch_rows(tape, h)?;
    let head = params.patch_head();
    let head = (
        live(tape, head.0, weights.alpha_mixing),
        live(tape, head.1, weights.alpha_mixing),
    );
    let l_mix = mixing_loss(
        tape,
        h,
        head,
        &PatchLabels::from_batch(batch),
        weights.pooled_mixing,
    )?;

    for (term, alpha) in [
        (l_cos, weights.alpha_cos),
        (l_con, weights.alpha_contrastive),
        (l_mix, weights.alpha_mixing),
    ] {
        if alpha > 0.0 {
            let w = tape.scale(term, alpha);
            total = tape.add(total, w)?;
        }
    }
    let val = |v: Var| tape.value(v).data()[0].as_f64();
    let report = LossReport {
        total: val(total),
        ce_class: val(ce),
        l_cos: val(l_cos),
        l_contrastive: val(l_con),
        l_mixing: val(l_mix),
    };
    Ok((total, report))
}
