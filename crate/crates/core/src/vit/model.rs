use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{BoundParams, ViTParams};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// LayerNorm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-6;

/// Split a `[channels, H, W]` image into `n` flattened non-overlapping
/// patches, raster order over the patch grid. Each row is laid out as
/// `(channel, row-in-patch, column-in-patch)`.
pub fn patchify<T: Scalar>(image: &Tensor<T>, patch_size: usize) -> Result<Tensor<T>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::Config(format!(
            "expected a square [channels, H, W] image, got {shape:?}"
        )));
    }
    let (c, side) = (shape[0], shape[1]);
    if patch_size == 0 || side % patch_size != 0 {
        return Err(Error::Config(format!(
            "image side {side} not divisible by patch size {patch_size}"
        )));
    }
    let grid = side / patch_size;
    let pdim = c * patch_size * patch_size;
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for gy in 0..grid {
        for gx in 0..grid {
            for ch in 0..c {
                for py in 0..patch_size {
                    let row = (ch * side + gy * patch_size + py) * side + gx * patch_size;
                    out.extend_from_slice(&src[row..row + patch_size]);
                }
            }
        }
    }
    Tensor::new([grid * grid, pdim], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(
    patches: &Tensor<T>,
    channels: usize,
    patch_size: usize,
) -> Result<Tensor<T>> {
    let shape = patches.shape();
    let n = shape.first().copied().unwrap_or(0);
    let grid = (n as f64).sqrt().round() as usize;
    let pdim = channels * patch_size * patch_size;
    if shape.len() != 2 || grid * grid != n || shape[1] != pdim {
        return Err(Error::Config(format!(
            "cannot unpatchify shape {shape:?} with {channels} channels and patch {patch_size}"
        )));
    }
    let side = grid * patch_size;
    let mut out = vec![T::zero(); channels * side * side];
    let src = patches.data();
    let mut at = 0;
    for gy in 0..grid {
        for gx in 0..grid {
            for ch in 0..channels {
                for py in 0..patch_size {
                    let row = (ch * side + gy * patch_size + py) * side + gx * patch_size;
                    out[row..row + patch_size].copy_from_slice(&src[at..at + patch_size]);
                    at += patch_size;
                }
            }
        }
    }
    Tensor::new([channels, side, side], out)
}

/// Evaluation runs without stochastic depth; training draws drop-path masks
/// from the supplied stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Class logits, `[batch, num_classes]`.
    pub logits: Var,
    /// Token matrices `h^[0..=L]`, each `[batch, n+1, dim]`; entry 0 is the
    /// embedded input to the first block, entry `l` the output of block `l`.
    pub layers: Vec<Var>,
    /// Final LayerNorm applied to `layers[L]`.
    pub normed: Var,
}

impl ForwardOutput {
    /// Copy out the recorded token matrices of one example.
    pub fn stack<T: Scalar>(&self, tape: &Tape<T>, example: usize) -> Result<ActivationStack<T>> {
        let layers = self
            .layers
            .iter()
            .map(|&v| tape.value(v).index0(example))
            .collect::<Result<_>>()?;
        Ok(ActivationStack { layers })
    }
}

/// Per-layer token matrices of a single example, each `(n+1, dim)` with the
/// class patch at row 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStack<T: Scalar = f32> {
    pub layers: Vec<Tensor<T>>,
}

fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Multiply a residual branch by per-sample keep masks scaled by
/// `1/(1-rate)`. No-op when `rate` is zero or in eval mode.
fn drop_path<T: Scalar>(
    tape: &mut Tape<T>,
    branch: Var,
    rate: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let Mode::Train(rng) = mode else {
        return Ok(branch);
    };
    if rate <= 0.0 {
        return Ok(branch);
    }
    let batch = tape.shape(branch)[0];
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<T> = (0..batch)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                T::of_f64(keep)
            }
        })
        .collect();
    let mask = tape.constant(Tensor::new([batch, 1, 1], mask)?);
    tape.mul(branch, mask)
}

fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    x: Var,
    blk: &super::params::BlockVars,
) -> Result<Var> {
    let (b, t) = (tape.shape(x)[0], tape.shape(x)[1]);
    let (h, dh) = (cfg.heads, cfg.head_dim());
    let mut split = |w| -> Result<Var> {
        let y = linear(tape, x, w)?;
        let y = tape.reshape(y, &[b, t, h, dh])?;
        tape.permute(y, &[0, 2, 1, 3])
    };
    let q = split(blk.wq)?;
    let k = split(blk.wk)?;
    let v = split(blk.wv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let attn = tape.softmax(scores, 3)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, t, cfg.dim])?;
    linear(tape, ctx, blk.wo)
}

/// Pre-LN vision transformer forward pass on `patches: [batch, n, pdim]`.
///
/// Each block computes `x = x + drop_path(attn(norm1(x)))` and then
/// `x = x + drop_path(mlp(norm2(x)))`. Logits come from the class patch of
/// the final-normed output.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &BoundParams,
    patches: Var,
    mut mode: Mode<'_>,
) -> Result<ForwardOutput> {
    let shape = tape.shape(patches).to_vec();
    if shape.len() != 3 || shape[1] != cfg.num_patches() || shape[2] != cfg.patch_dim() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: vec![0, cfg.num_patches(), cfg.patch_dim()],
            rhs: shape,
        });
    }
    let b = shape[0];
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let d = cfg.dim;
    let rates = cfg.drop_path_rates();

    let emb = linear(tape, patches, params.patch_embed())?;
    let cls = tape.broadcast_to(params.class_token(), &[b, 1, d])?;
    let tokens = tape.concat(&[cls, emb], 1)?;
    let mut x = tape.add(tokens, params.pos_embed())?;
    let mut layers = Vec::with_capacity(cfg.depth + 1);
    layers.push(x);

    for (l, &rate) in rates.iter().enumerate() {
        let blk = params.block(l);
        let y = tape.layer_norm(x, blk.norm1.0, blk.norm1.1, LN_EPS)?;
        let a = attention(tape, cfg, y, &blk)?;
        let a = drop_path(tape, a, rate, &mut mode)?;
        x = tape.add(x, a)?;

        let y = tape.layer_norm(x, blk.norm2.0, blk.norm2.1, LN_EPS)?;
        let m = linear(tape, y, blk.fc1)?;
        let m = tape.gelu(m);
        let m = linear(tape, m, blk.fc2)?;
        let m = drop_path(tape, m, rate, &mut mode)?;
        x = tape.add(x, m)?;
        layers.push(x);
    }

    let (g, beta) = params.final_norm();
    let normed = tape.layer_norm(x, g, beta, LN_EPS)?;
    let cls_out = tape.slice(normed, 1, 0..1)?;
    let cls_out = tape.reshape(cls_out, &[b, d])?;
    let logits = linear(tape, cls_out, params.head())?;
    Ok(ForwardOutput {
        logits,
        layers,
        normed,
    })
}

/// Values of an evaluation-mode forward pass.
#[derive(Clone, Debug)]
pub struct Inference<T: Scalar = f32> {
    pub logits: Tensor<T>,
    /// `[batch, n+1, dim]` per layer.
    pub layers: Vec<Tensor<T>>,
}

impl<T: Scalar> ViTParams<T> {
    /// Eval-mode forward without keeping a tape around.
    pub fn infer(&self, patches: &Tensor<T>) -> Result<Inference<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(patches.clone());
        let out = forward(&mut tape, &self.config, &bound, x, Mode::Eval)?;
        Ok(Inference {
            logits: tape.value(out.logits).clone(),
            layers: out.layers.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }
}

/// Index of the largest logit per row of `[batch, classes]`.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape().last().copied().unwrap_or(1).max(1);
    logits
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}
