//! Patch-level mixing of two images.
//!
//! Given patchified examples `(x0, y0)` and `(x1, y1)`, a mixing rate `λ` is
//! drawn from `Beta(alpha, alpha)` and each output patch is copied verbatim
//! from `x0` or `x1`. The per-patch provenance becomes a per-patch label, and
//! the image label is the soft mix `λ·y0 + (1-λ)·y1`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixMode {
    /// Each patch independently taken from image 0 with probability λ.
    Random,
    /// One square of neighbouring patches taken from image 1.
    Block,
}

/// Which λ weights the soft image label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelLambda {
    /// Fraction of patches actually taken from image 0.
    Realized,
    /// The Beta draw itself.
    Sampled,
}

impl FromStr for MixMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MixMode::Random),
            "block" => Ok(MixMode::Block),
            _ => Err(Error::Config(format!("unknown mix mode {s:?}"))),
        }
    }
}

impl fmt::Display for MixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixMode::Random => "random",
            MixMode::Block => "block",
        })
    }
}

impl FromStr for LabelLambda {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "realized" => Ok(LabelLambda::Realized),
            "sampled" => Ok(LabelLambda::Sampled),
            _ => Err(Error::Config(format!("unknown label_lambda {s:?}"))),
        }
    }
}

impl fmt::Display for LabelLambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelLambda::Realized => "realized",
            LabelLambda::Sampled => "sampled",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub mode: MixMode,
    /// λ ~ Beta(alpha, alpha).
    pub alpha: f64,
    pub label_lambda: LabelLambda,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            mode: MixMode::Random,
            alpha: 1.0,
            label_lambda: LabelLambda::Realized,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "mix alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

pub fn sample_lambda(spec: &MixSpec, rng: &mut ChaCha8Rng) -> Result<f64> {
    spec.validate()?;
    let beta = Beta::new(spec.alpha, spec.alpha)
        .map_err(|e| Error::Config(format!("beta({}): {e}", spec.alpha)))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}

/// `true` entries come from image 0: entry `i` is `ρ_i < λ` with `ρ_i`
/// uniform on [0, 1).
pub fn sample_mask_random(n: usize, lambda: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() < lambda).collect()
}

/// All `true` except one axis-aligned square of side
/// `round(grid_side·sqrt(1-λ))`, placed uniformly on the patch grid.
pub fn sample_mask_block(grid_side: usize, lambda: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let side = ((grid_side as f64) * (1.0 - lambda).max(0.0).sqrt()).round() as usize;
    let side = side.min(grid_side);
    let top = rng.random_range(0..=grid_side - side);
    let left = rng.random_range(0..=grid_side - side);
    let mut mask = vec![true; grid_side * grid_side];
    for r in top..top + side {
        for c in left..left + side {
            mask[r * grid_side + c] = false;
        }
    }
    mask
}

/// One mixed example.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedRow {
    /// `[n, pdim]`.
    pub patches: Tensor<f32>,
    /// `true` where the patch came from image 0.
    pub mask: Vec<bool>,
    pub y0: usize,
    pub y1: usize,
    pub y_patch: Vec<usize>,
    /// Soft image label over `num_classes`.
    pub y_mix: Vec<f64>,
    pub lambda_sampled: f64,
    /// `popcount(mask) / n`.
    pub lambda_eff: f64,
}

/// Build a mixed example from an explicit mask.
#[allow(clippy::too_many_arguments)]
pub fn mix_with_mask(
    x0: &Tensor<f32>,
    y0: usize,
    x1: &Tensor<f32>,
    y1: usize,
    mask: Vec<bool>,
    num_classes: usize,
    lambda_sampled: f64,
    label_lambda: LabelLambda,
) -> Result<MixedRow> {
    if x0.shape() != x1.shape() || x0.rank() != 2 {
        return Err(Error::Config(format!(
            "cannot mix patch grids {:?} and {:?}",
            x0.shape(),
            x1.shape()
        )));
    }
    let (n, pdim) = (x0.shape()[0], x0.shape()[1]);
    if mask.len() != n {
        return Err(Error::Config(format!(
            "mask of length {} for {n} patches",
            mask.len()
        )));
    }
    if y0 >= num_classes || y1 >= num_classes {
        return Err(Error::Validation(format!(
            "labels {y0}, {y1} out of range for {num_classes} classes"
        )));
    }
    let mut data = Vec::with_capacity(n * pdim);
    for (i, &from0) in mask.iter().enumerate() {
        let src = if from0 { x0 } else { x1 };
        data.extend_from_slice(src.row(i));
    }
    let count0 = mask.iter().filter(|&&m| m).count();
    let lambda_eff = count0 as f64 / n as f64;
    let (w0, w1) = match label_lambda {
        LabelLambda::Realized => (lambda_eff, (n - count0) as f64 / n as f64),
        LabelLambda::Sampled => (lambda_sampled, 1.0 - lambda_sampled),
    };
    let mut y_mix = vec![0.0; num_classes];
    y_mix[y0] += w0;
    y_mix[y1] += w1;
    let y_patch = mask.iter().map(|&m| if m { y0 } else { y1 }).collect();
    Ok(MixedRow {
        patches: Tensor::new([n, pdim], data)?,
        mask,
        y0,
        y1,
        y_patch,
        y_mix,
        lambda_sampled,
        lambda_eff,
    })
}

/// Draw λ and a mask, then mix.
pub fn mix_pair(
    x0: &Tensor<f32>,
    y0: usize,
    x1: &Tensor<f32>,
    y1: usize,
    num_classes: usize,
    spec: &MixSpec,
    rng: &mut ChaCha8Rng,
) -> Result<MixedRow> {
    if x0.shape() != x1.shape() {
        return Err(Error::Config(format!(
            "cannot mix patch grids {:?} and {:?}",
            x0.shape(),
            x1.shape()
        )));
    }
    let n = x0.shape().first().copied().unwrap_or(0);
    let lambda = sample_lambda(spec, rng)?;
    let mask = match spec.mode {
        MixMode::Random => sample_mask_random(n, lambda, rng),
        MixMode::Block => {
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n {
                return Err(Error::Config(format!(
                    "block mixing needs a square patch grid, got {n} patches"
                )));
            }
            sample_mask_block(side, lambda, rng)
        }
    };
    mix_with_mask(x0, y0, x1, y1, mask, num_classes, lambda, spec.label_lambda)
}

/// A batch ready for the combined loss: possibly mixed patches with the
/// per-patch and soft labels that go with them.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    /// `[batch, n, pdim]`.
    pub patches: Tensor<f32>,
    pub masks: Vec<Vec<bool>>,
    pub y0: Vec<usize>,
    pub y1: Vec<usize>,
    pub y_patch: Vec<Vec<usize>>,
    pub y_mix: Vec<Vec<f64>>,
    pub lambda_sampled: Vec<f64>,
    pub lambda_eff: Vec<f64>,
}

impl MixedBatch {
    /// Wrap an unmixed batch: every patch keeps its own image's label.
    pub fn unmixed(patches: Tensor<f32>, labels: &[usize], num_classes: usize) -> Result<Self> {
        let (b, n) = (patches.shape()[0], patches.shape()[1]);
        if labels.len() != b {
            return Err(Error::Validation(format!(
                "{} labels for batch of {b}",
                labels.len()
            )));
        }
        let mut y_mix = Vec::with_capacity(b);
        for &y in labels {
            if y >= num_classes {
                return Err(Error::Validation(format!(
                    "label {y} out of range for {num_classes} classes"
                )));
            }
            let mut v = vec![0.0; num_classes];
            v[y] = 1.0;
            y_mix.push(v);
        }
        Ok(MixedBatch {
            patches,
            masks: vec![vec![true; n]; b],
            y0: labels.to_vec(),
            y1: labels.to_vec(),
            y_patch: labels.iter().map(|&y| vec![y; n]).collect(),
            y_mix,
            lambda_sampled: vec![1.0; b],
            lambda_eff: vec![1.0; b],
        })
    }

    pub fn from_rows(rows: Vec<MixedRow>) -> Result<Self> {
        let patches = Tensor::stack(&rows.iter().map(|r| r.patches.clone()).collect::<Vec<_>>())?;
        let mut out = MixedBatch {
            patches,
            masks: Vec::new(),
            y0: Vec::new(),
            y1: Vec::new(),
            y_patch: Vec::new(),
            y_mix: Vec::new(),
            lambda_sampled: Vec::new(),
            lambda_eff: Vec::new(),
        };
        for r in rows {
            out.masks.push(r.mask);
            out.y0.push(r.y0);
            out.y1.push(r.y1);
            out.y_patch.push(r.y_patch);
            out.y_mix.push(r.y_mix);
            out.lambda_sampled.push(r.lambda_sampled);
            out.lambda_eff.push(r.lambda_eff);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }
}

/// Example `i` is mixed with example `(i + batch/2) mod batch`, with its own
/// λ and mask.
pub fn mix_batch(
    patches: &Tensor<f32>,
    labels: &[usize],
    num_classes: usize,
    spec: &MixSpec,
    rng: &mut ChaCha8Rng,
) -> Result<MixedBatch> {
    let b = labels.len();
    if b < 2 || patches.shape().first() != Some(&b) {
        return Err(Error::Config(format!(
            "mixing needs a batch of at least 2 with matching labels, got {:?} and {b} labels",
            patches.shape()
        )));
    }
    let examples: Vec<Tensor<f32>> = (0..b).map(|i| patches.index0(i)).collect::<Result<_>>()?;
    let rows = (0..b)
        .map(|i| {
            let j = (i + b / 2) % b;
            mix_pair(
                &examples[i],
                labels[i],
                &examples[j],
                labels[j],
                num_classes,
                spec,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MixedBatch::from_rows(rows)
}
