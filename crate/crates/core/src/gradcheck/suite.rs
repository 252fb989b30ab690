//! The gradient suite: every differentiable op, each regularizer, and the
//! combined objective through a small transformer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::finite_diff_check;
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::losses::{
    combined_loss, contrastive_loss, cosine_loss, mixing_loss, LossTaps, LossWeights, PatchLabels,
};
use crate::mixing::{mix_batch, MixSpec, MixedBatch};
use crate::rng;
use crate::tensor::Tensor;
use crate::vit::{forward, param_layout, Mode, ModelConfig, ViTParams};

/// Largest relative error a case may show.
pub const TOLERANCE: f64 = 1e-4;

const STEP: f64 = 1e-3;
const DROP_TAG: u64 = 0x4752_4450;

pub type CaseFn = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;

/// A scalar function of one tensor, and the point to check it at.
pub struct Case {
    pub name: &'static str,
    pub input: Tensor<f64>,
    pub f: CaseFn,
}

impl Case {
    fn new(name: &'static str, input: Tensor<f64>, f: CaseFn) -> Self {
        Case { name, input, f }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst relative error over all seeds and coordinates.
    pub rel_err: f64,
    pub passed: bool,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for ops with a kink or pole there.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.2..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.3..2.0))
}

/// Reduce an arbitrary tensor to a scalar with fixed random weights so every
/// coordinate of the upstream gradient differs.
fn weighted_sum(t: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let w = random(t.shape(v), &mut rng);
    let w = t.constant(w);
    let p = t.mul(v, w)?;
    Ok(t.sum(p))
}

/// Randomized cases for each tape operation.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..4);
    let k = rng.random_range(1..5);
    let p = rng.random_range(1..4);
    let other = random(&[m, k], &mut rng);
    let right = random(&[k, p], &mut rng);
    let batched = random(&[2, k, p], &mut rng);
    let row = random(&[k], &mut rng);
    let gain = random(&[k], &mut rng);
    let bias = random(&[k], &mut rng);
    let mut cases: Vec<Case> = Vec::new();

    let r = right.clone();
    cases.push(Case::new(
        "matmul_lhs",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let b = t.constant(r.clone());
            let c = t.matmul(x, b)?;
            weighted_sum(t, c, seed)
        }),
    ));
    let o = other.clone();
    cases.push(Case::new(
        "matmul_rhs",
        random(&[k, p], &mut rng),
        Box::new(move |t, x| {
            let a = t.constant(o.clone());
            let c = t.matmul(a, x)?;
            weighted_sum(t, c, seed)
        }),
    ));
    let bt = batched.clone();
    cases.push(Case::new(
        "matmul_broadcast",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let b = t.constant(bt.clone());
            let c = t.matmul(x, b)?;
            weighted_sum(t, c, seed)
        }),
    ));
    let rw = row.clone();
    cases.push(Case::new(
        "add_broadcast",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let b = t.constant(rw.clone());
            let c = t.add(x, b)?;
            let c = t.mul(c, c)?;
            weighted_sum(t, c, seed)
        }),
    ));
    let o2 = other.clone();
    cases.push(Case::new(
        "sub_rhs_reduced",
        random(&[k], &mut rng),
        Box::new(move |t, x| {
            let a = t.constant(o2.clone());
            let c = t.sub(a, x)?;
            let c = t.mul(c, c)?;
            weighted_sum(t, c, seed)
        }),
    ));
    let o3 = other.clone();
    cases.push(Case::new(
        "mul",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let a = t.constant(o3.clone());
            let c = t.mul(x, a)?;
            let c = t.mul(c, x)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "scale",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.scale(x, -1.7);
            let c = t.mul(c, x)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "gelu",
        random(&[m, k], &mut rng).map(|v| 2.5 * v),
        Box::new(move |t, x| {
            let c = t.gelu(x);
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "sqrt",
        positive(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.sqrt(x);
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "recip",
        positive(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.recip(x);
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "abs",
        away_from_zero(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.abs(x);
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "exp_ln",
        positive(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let a = t.exp(x);
            let b = t.ln(x);
            let c = t.mul(a, b)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "softmax_last",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.softmax(x, 1)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "softmax_axis0",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.softmax(x, 0)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "log_softmax",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.log_softmax(x, 1)?;
            weighted_sum(t, c, seed)
        }),
    ));
    let (g1, b1) = (gain.clone(), bias.clone());
    cases.push(Case::new(
        "layer_norm_x",
        random(&[m, k + 2], &mut rng),
        Box::new(move |t, x| {
            let d = t.shape(x)[1];
            let g = t.constant(Tensor::from_fn([d], |i| g1.data()[i % g1.numel()] + 1.0));
            let b = t.constant(Tensor::from_fn([d], |i| b1.data()[i % b1.numel()]));
            let c = t.layer_norm(x, g, b, 1e-6)?;
            weighted_sum(t, c, seed)
        }),
    ));
    let xs = random(&[m, k], &mut rng);
    cases.push(Case::new(
        "layer_norm_gain",
        gain.clone(),
        Box::new(move |t, g| {
            let x = t.constant(xs.clone());
            let b = t.constant(Tensor::zeros([xs.shape()[1]]));
            let c = t.layer_norm(x, g, b, 1e-6)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "sum_axis",
        random(&[m, k, 2], &mut rng),
        Box::new(move |t, x| {
            let c = t.sum_axis(x, 1, false)?;
            let c = t.mul(c, c)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "mean_axis_keepdim",
        random(&[m, k, 2], &mut rng),
        Box::new(move |t, x| {
            let c = t.mean_axis(x, 2, true)?;
            let c = t.mul(c, c)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "concat_slice",
        random(&[m, k + 1], &mut rng),
        Box::new(move |t, x| {
            let a = t.slice(x, 1, 0..1)?;
            let b = t.slice(x, 1, 1..k + 1)?;
            let b = t.mul(b, b)?;
            let c = t.concat(&[b, a, a], 1)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "reshape_permute",
        random(&[m, k, p], &mut rng),
        Box::new(move |t, x| {
            let c = t.permute(x, &[2, 0, 1])?;
            let c = t.reshape(c, &[p, m * k])?;
            let c = t.transpose(c)?;
            let c = t.mul(c, c)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "broadcast_to",
        random(&[1, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.broadcast_to(x, &[m, 3, k])?;
            let c = t.mul(c, c)?;
            weighted_sum(t, c, seed)
        }),
    ));
    cases.push(Case::new(
        "mean_all",
        random(&[m, k], &mut rng),
        Box::new(move |t, x| {
            let c = t.mul(x, x)?;
            t.mean(c)
        }),
    ));
    cases.push(Case::new(
        "neg_tanh",
        random(&[m, k], &mut rng).map(|v| 2.0 * v),
        Box::new(move |t, x| {
            let c = t.tanh(x);
            let c = t.neg(c);
            weighted_sum(t, c, seed)
        }),
    ));
    cases
}

fn mixed_batch(cfg: &ModelConfig, batch: usize, seed: u64) -> Result<MixedBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69);
    let patches = Tensor::from_fn([batch, cfg.num_patches(), cfg.patch_dim()], |_| {
        rng.random_range(-1.0f32..1.0)
    });
    let labels: Vec<usize> = (0..batch)
        .map(|i| (i + seed as usize) % cfg.num_classes)
        .collect();
    mix_batch(
        &patches,
        &labels,
        cfg.num_classes,
        &MixSpec::default(),
        &mut rng,
    )
}

/// Cases for the three regularizers on random token matrices.
pub fn loss_cases(seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, d, c) = (2, 4, 5, 3);
    let mut cases = Vec::new();
    cases.push(Case::new(
        "cosine_loss",
        random(&[b, n, d], &mut rng),
        Box::new(cosine_loss),
    ));
    let reference = random(&[b, n, d], &mut rng);
    cases.push(Case::new(
        "contrastive_loss",
        random(&[b, n, d], &mut rng),
        Box::new(move |t, h| {
            let r = t.constant(reference.clone());
            contrastive_loss(t, r, h)
        }),
    ));
    let grid = ModelConfig {
        image_size: 4,
        patch_size: 2,
        num_classes: c,
        ..ModelConfig::default()
    };
    for pooled in [false, true] {
        let batch = mixed_batch(&grid, b, seed)?;
        let (w, bias) = (random(&[d, c], &mut rng), random(&[c], &mut rng));
        let head = (w.clone(), bias.clone());
        let bt = batch.clone();
        cases.push(Case::new(
            if pooled {
                "mixing_loss_pooled"
            } else {
                "mixing_loss"
            },
            random(&[b, n, d], &mut rng),
            Box::new(move |t, h| {
                let hw = t.constant(head.0.clone());
                let hb = t.constant(head.1.clone());
                mixing_loss(t, h, (hw, hb), &PatchLabels::from_batch(&bt), pooled)
            }),
        ));
        let h = random(&[b, n, d], &mut rng);
        cases.push(Case::new(
            if pooled {
                "mixing_loss_pooled_head"
            } else {
                "mixing_loss_head"
            },
            w,
            Box::new(move |t, w| {
                let hv = t.constant(h.clone());
                let hb = t.constant(bias.clone());
                mixing_loss(t, hv, (w, hb), &PatchLabels::from_batch(&batch), pooled)
            }),
        ));
    }
    Ok(cases)
}

/// Two blocks, dim 16, a 2×2 patch grid and 3 classes.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        image_size: 4,
        patch_size: 2,
        channels: 1,
        dim: 16,
        depth: 2,
        heads: 2,
        mlp_ratio: 2.0,
        num_classes: 3,
        drop_path_max: 0.1,
    }
}

/// The full training objective with every weight at 1, differentiated with
/// respect to each parameter tensor of [`small_model`] in turn. Drop-path
/// masks come from a fixed stream so repeated evaluations agree, and the
/// contrastive reference tokens are held at their value at the base point.
pub fn objective_cases(seed: u64) -> Result<Vec<(String, Case)>> {
    let cfg = small_model();
    let params = ViTParams::<f64>::init(&cfg, seed)?;
    let batch = mixed_batch(&cfg, 2, seed)?;
    let taps = LossTaps::default();
    let reference = {
        let mut t = Tape::new();
        let bound = params.bind(&mut t, false);
        let patches = t.constant(batch.patches.cast());
        let mut drop = rng::stream(seed, &[DROP_TAG]);
        let out = forward(&mut t, &cfg, &bound, patches, Mode::Train(&mut drop))?;
        t.value(out.layers[taps.contrastive_reference_layer])
            .clone()
    };
    let mut cases = Vec::new();
    for (i, spec) in param_layout(&cfg).into_iter().enumerate() {
        let (cfg, params, batch) = (cfg.clone(), params.clone(), batch.clone());
        let (taps, reference) = (taps.clone(), reference.clone());
        let input = params.tensors[i].clone();
        let f: CaseFn = Box::new(move |t, x| {
            let mut bound = params.bind(t, false);
            bound.vars[i] = x;
            let patches = t.constant(batch.patches.cast());
            let mut drop = rng::stream(seed, &[DROP_TAG]);
            let mut out = forward(t, &cfg, &bound, patches, Mode::Train(&mut drop))?;
            // No gradient flows into the contrastive reference tokens, so the
            // function being differentiated sees them as fixed.
            out.layers[taps.contrastive_reference_layer] = t.constant(reference.clone());
            let (total, _) =
                combined_loss(t, &out, &bound, &batch, &LossWeights::default(), &taps)?;
            Ok(total)
        });
        cases.push((spec.name, Case::new("combined_objective", input, f)));
    }
    Ok(cases)
}

/// Largest gradient magnitude that reaches the reference tokens of the
/// contrastive loss. It must be exactly zero.
pub fn contrastive_reference_grad(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tape::<f64>::new();
    let h1 = t.param(random(&[2, 4, 5], &mut rng));
    let hl = t.param(random(&[2, 4, 5], &mut rng));
    let l = contrastive_loss(&mut t, h1, hl)?;
    t.backward(l)?;
    Ok(t.grad(h1)
        .map_or(0.0, |g| g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))))
}

fn record(results: &mut Vec<CheckResult>, name: String, err: f64) {
    match results.iter_mut().find(|r| r.name == name) {
        Some(r) => r.rel_err = r.rel_err.max(err),
        None => results.push(CheckResult {
            name,
            rel_err: err,
            passed: false,
        }),
    }
}

/// Run every case for `seeds` seeds (the transformer objective for the
/// first seed only, since it checks thousands of coordinates). Results are
/// merged per name, keeping the worst error.
pub fn run_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for seed in 0..seeds.max(1) {
        let groups = [("op", op_cases(seed)), ("loss", loss_cases(seed)?)];
        for (group, cases) in groups {
            for case in cases {
                let err = finite_diff_check(&*case.f, &case.input, STEP)?;
                record(&mut results, format!("{group}/{}", case.name), err);
            }
        }
        let zero = contrastive_reference_grad(seed)?;
        record(
            &mut results,
            "contrastive_reference_grad_is_zero".into(),
            if zero == 0.0 { 0.0 } else { f64::INFINITY },
        );
    }
    for (param, case) in objective_cases(0)? {
        let err = finite_diff_check(&*case.f, &case.input, 1e-4)?;
        record(&mut results, format!("{}/{param}", case.name), err);
    }
    for r in &mut results {
        r.passed = r.rel_err < TOLERANCE;
    }
    Ok(results)
}
