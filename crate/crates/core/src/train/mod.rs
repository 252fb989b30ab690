//! Training, evaluation and ablation.
//!
//! A run writes into `output_dir` (when set):
//!
//! - `config.txt`: the resolved configuration
//! - `metrics.csv`: one row per step, `step,epoch,lr,total,ce_class,l_cos,l_contrastive,l_mixing`
//! - `epochs.csv`: one row per epoch, `epoch,train_loss,eval_top1,p_first,p_last`
//! - `profile.csv`: the last epoch's per-layer similarity profile
//! - `last.dpck`, `best.dpck`: checkpoints after the latest epoch and at the
//!   best eval accuracy so far

mod ablate;
pub mod config;
pub mod optim;

use std::fs;
use std::path::Path;

use crate::autograd::Tape;
use crate::data::{batches, Batch, PatchSet};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, soft_cross_entropy, LossReport};
use crate::metrics::{self, DiversityProfile};
use crate::mixing::{mix_batch, MixedBatch};
use crate::rng;
use crate::tensor::Tensor;
use crate::vit::{argmax_rows, checkpoint, forward, param_layout, Init, Mode, ViTParams};

pub use ablate::{ablate, ablation_csv, AblationRow, Component};
pub use config::{MixToggle, TrainConfig, SEED_ENV};
pub use optim::{lr_schedule, AdamState, AdamW};

const MIX_TAG: u64 = 0x4d49_5821;
const DROP_TAG: u64 = 0x4452_4f50;
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean reported total loss over the epoch's steps.
    pub train_loss: f64,
    pub eval_top1: f64,
    pub profile: DiversityProfile,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunLog {
    pub steps: Vec<StepRow>,
    pub epochs: Vec<EpochRow>,
}

impl RunLog {
    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "step",
            "epoch",
            "lr",
            "total",
            "ce_class",
            "l_cos",
            "l_contrastive",
            "l_mixing",
        ])?;
        for s in &self.steps {
            let r = &s.report;
            w.write_record(&[
                s.step.to_string(),
                s.epoch.to_string(),
                s.lr.to_string(),
                r.total.to_string(),
                r.ce_class.to_string(),
                r.l_cos.to_string(),
                r.l_contrastive.to_string(),
                r.l_mixing.to_string(),
            ])?;
        }
        finish_csv(w)
    }

    pub fn epochs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "eval_top1", "p_first", "p_last"])?;
        for e in &self.epochs {
            let p = |s: Option<&metrics::LayerStat>| s.map_or(f64::NAN, |s| s.mean).to_string();
            w.write_record(&[
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.eval_top1.to_string(),
                p(e.profile.layers.first()),
                p(e.profile.last()),
            ])?;
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: RunLog,
    /// Parameters after the last step.
    pub params: ViTParams<f32>,
    pub best_top1: f64,
}

impl TrainOutcome {
    pub fn final_profile(&self) -> Option<&DiversityProfile> {
        self.log.epochs.last().map(|e| &e.profile)
    }

    pub fn final_top1(&self) -> f64 {
        self.log.epochs.last().map_or(f64::NAN, |e| e.eval_top1)
    }
}

/// Top-1 accuracy of the class logits on `set`, without mixing or proxy
/// losses.
pub fn evaluate(params: &ViTParams<f32>, set: &PatchSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut correct = 0;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let b = set.gather(chunk)?;
        let logits = params.infer(&b.patches)?.logits;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&b.labels)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Parameters that receive weight decay: the 2-d matrices of linear layers.
pub fn decay_mask(params: &ViTParams<f32>) -> Vec<bool> {
    param_layout(&params.config)
        .iter()
        .map(|s| matches!(s.init, Init::Linear { .. }) && s.shape.len() == 2)
        .collect()
}

struct StepResult {
    report: LossReport,
    grads: Vec<Option<Tensor<f32>>>,
}

/// Full objective: optional patch mixing, class soft cross entropy plus the
/// weighted regularizers.
fn objective_step(
    cfg: &TrainConfig,
    params: &ViTParams<f32>,
    batch: &Batch,
    step: usize,
) -> Result<(StepResult, MixedBatch)> {
    let c = cfg.model.num_classes;
    let mixed = if cfg.mixing_enabled() {
        let mut r = rng::stream(cfg.seed, &[MIX_TAG, step as u64]);
        mix_batch(&batch.patches, &batch.labels, c, &cfg.mix_spec, &mut r)?
    } else {
        MixedBatch::unmixed(batch.patches.clone(), &batch.labels, c)?
    };
    let mut drop_rng = rng::stream(cfg.seed, &[DROP_TAG, step as u64]);
    let mut tape = Tape::<f32>::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(mixed.patches.clone());
    let out = forward(&mut tape, &cfg.model, &bound, x, Mode::Train(&mut drop_rng))?;
    if let Some(l) = out.layers.iter().position(|&v| !tape.value(v).is_finite()) {
        return Err(Error::NonFinite {
            step,
            what: format!("activations at layer {l}"),
        });
    }
    let (total, report) = combined_loss(&mut tape, &out, &bound, &mixed, &cfg.weights, &cfg.taps)?;
    if !report.total.is_finite() {
        return Err(Error::NonFinite {
            step,
            what: format!("loss ({report:?})"),
        });
    }
    tape.backward(total)?;
    let grads = bound.vars.iter().map(|&v| tape.grad(v).cloned()).collect();
    Ok((StepResult { report, grads }, mixed))
}

/// Plain vision-transformer step: unmixed batch, hard-label cross entropy,
/// no regularizers.
fn baseline_step(
    cfg: &TrainConfig,
    params: &ViTParams<f32>,
    batch: &Batch,
    step: usize,
) -> Result<(StepResult, MixedBatch)> {
    let c = cfg.model.num_classes;
    let mut drop_rng = rng::stream(cfg.seed, &[DROP_TAG, step as u64]);
    let mut tape = Tape::<f32>::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(batch.patches.clone());
    let out = forward(&mut tape, &cfg.model, &bound, x, Mode::Train(&mut drop_rng))?;
    let one_hot: Vec<Vec<f64>> = batch
        .labels
        .iter()
        .map(|&y| (0..c).map(|k| if k == y { 1.0 } else { 0.0 }).collect())
        .collect();
    let loss = soft_cross_entropy(&mut tape, out.logits, &one_hot)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            step,
            what: "loss".into(),
        });
    }
    tape.backward(loss)?;
    let grads = bound.vars.iter().map(|&v| tape.grad(v).cloned()).collect();
    let report = LossReport {
        total: value,
        ce_class: value,
        ..LossReport::default()
    };
    let unmixed = MixedBatch::unmixed(batch.patches.clone(), &batch.labels, c)?;
    Ok((StepResult { report, grads }, unmixed))
}

type StepFn = fn(&TrainConfig, &ViTParams<f32>, &Batch, usize) -> Result<(StepResult, MixedBatch)>;

/// Train with the configured objective.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(cfg, objective_step)
}

/// Train a plain vision transformer on unmixed batches with the class loss
/// only, ignoring the loss weights and mixing settings.
pub fn train_baseline(cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(cfg, baseline_step)
}

fn write_nonfinite_dump(dir: &Path, step: usize, batch: &Batch) -> Result<()> {
    let stack = crate::vit::ActivationStack {
        layers: (0..batch.labels.len())
            .map(|i| batch.patches.index0(i))
            .collect::<Result<_>>()?,
    };
    metrics::write_dump(&stack, dir.join(format!("nonfinite_step{step}.pdmp")))?;
    let info = format!(
        "step = {step}\nindices = {:?}\nlabels = {:?}\n",
        batch.indices, batch.labels
    );
    fs::write(dir.join(format!("nonfinite_step{step}.txt")), info)?;
    Ok(())
}

fn run(cfg: &TrainConfig, step_fn: StepFn) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, eval_set) = cfg.data.load(cfg.seed)?;
    let p = cfg.model.patch_size;
    let (train_set, eval_set) = (train_set.to_patches(p)?, eval_set.to_patches(p)?);
    let total = cfg.epochs * (train_set.len() / cfg.batch_size.max(1));
    let warmup = cfg
        .warmup_steps
        .unwrap_or_else(|| (total as f64 * 0.05).round() as usize);
    if total > 0 && warmup >= total {
        return Err(Error::Config(format!(
            "warmup {warmup} must be shorter than the {total} training steps"
        )));
    }
    let out_dir = cfg.output_dir.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
    }

    let mut params = ViTParams::<f32>::init(&cfg.model, cfg.seed)?;
    let decay = decay_mask(&params);
    let mut state = AdamState::new(&params.tensors);
    let mut log = RunLog::default();
    let mut best = f64::NEG_INFINITY;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for batch in batches(&train_set, cfg.batch_size, cfg.seed, epoch as u64)? {
            let lr = lr_schedule(step, warmup, total, cfg.lr);
            let outcome = step_fn(cfg, &params, &batch, step).and_then(|(r, _)| {
                let grads: Vec<Option<&Tensor<f32>>> = r.grads.iter().map(Option::as_ref).collect();
                cfg.optimizer
                    .step(&mut params.tensors, &grads, &decay, &mut state, lr)?;
                Ok(r.report)
            });
            let report = match outcome {
                Ok(r) => r,
                Err(e @ Error::NonFinite { .. }) => {
                    if let Some(dir) = out_dir {
                        write_nonfinite_dump(dir, step, &batch)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            epoch_loss += report.total;
            epoch_steps += 1;
            log.steps.push(StepRow {
                step,
                epoch,
                lr,
                report,
            });
            step += 1;
        }
        let eval_top1 = evaluate(&params, &eval_set)?;
        let profile = if cfg.profile_examples > 0 {
            metrics::profile(&params, &eval_set.patches, cfg.profile_examples)?
        } else {
            DiversityProfile { layers: Vec::new() }
        };
        log.epochs.push(EpochRow {
            epoch,
            train_loss: epoch_loss / epoch_steps.max(1) as f64,
            eval_top1,
            profile,
        });
        if let Some(dir) = out_dir {
            checkpoint::save(&params, dir.join("last.dpck"))?;
            if eval_top1 > best {
                checkpoint::save(&params, dir.join("best.dpck"))?;
            }
            fs::write(dir.join("metrics.csv"), log.metrics_csv()?)?;
            fs::write(dir.join("epochs.csv"), log.epochs_csv()?)?;
            if let Some(e) = log.epochs.last() {
                e.profile.write_csv(dir.join("profile.csv"))?;
            }
        }
        best = best.max(eval_top1);
    }
    Ok(TrainOutcome {
        log,
        params,
        best_top1: best,
    })
}
