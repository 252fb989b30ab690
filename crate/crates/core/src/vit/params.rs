use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Tensors before the first block.
pub(crate) const STEM: usize = 4;
/// Tensors per transformer block.
pub(crate) const PER_BLOCK: usize = 16;
/// Tensors after the last block.
pub(crate) const TAIL: usize = 6;

const BLOCK_NAMES: [&str; PER_BLOCK] = [
    "norm1.gain",
    "norm1.bias",
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "norm2.gain",
    "norm2.bias",
    "mlp.fc1.weight",
    "mlp.fc1.bias",
    "mlp.fc2.weight",
    "mlp.fc2.bias",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Truncated normal, std 0.02, cut at two standard deviations.
    Embedding,
    /// Uniform in ±1/sqrt(fan_in).
    Linear {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Every parameter tensor in its fixed storage order.
///
/// Stem: `patch_embed.weight [pdim, dim]`, `patch_embed.bias [dim]`,
/// `class_token [1, dim]`, `pos_embed [n+1, dim]`. Then per block
/// `blocks.{l}.` followed by `norm1.gain`, `norm1.bias`, `attn.wq`, `attn.bq`,
/// `attn.wk`, `attn.bk`, `attn.wv`, `attn.bv`, `attn.wo`, `attn.bo`,
/// `norm2.gain`, `norm2.bias`, `mlp.fc1.weight [dim, hidden]`,
/// `mlp.fc1.bias`, `mlp.fc2.weight [hidden, dim]`, `mlp.fc2.bias`. Tail:
/// `norm.gain`, `norm.bias`, `head.weight [dim, classes]`, `head.bias`,
/// `patch_head.weight [dim, classes]`, `patch_head.bias`.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.dim;
    let hid = cfg.mlp_hidden();
    let c = cfg.num_classes;
    let spec = |name: String, shape: Vec<usize>, init| ParamSpec { name, shape, init };
    let mut out = vec![
        spec(
            "patch_embed.weight".into(),
            vec![cfg.patch_dim(), d],
            Init::Linear {
                fan_in: cfg.patch_dim(),
            },
        ),
        spec("patch_embed.bias".into(), vec![d], Init::Zeros),
        spec("class_token".into(), vec![1, d], Init::Embedding),
        spec(
            "pos_embed".into(),
            vec![cfg.num_tokens(), d],
            Init::Embedding,
        ),
    ];
    for l in 0..cfg.depth {
        for name in BLOCK_NAMES {
            let (shape, init) = match name {
                "norm1.gain" | "norm2.gain" => (vec![d], Init::Ones),
                "attn.wq" | "attn.wk" | "attn.wv" | "attn.wo" => {
                    (vec![d, d], Init::Linear { fan_in: d })
                }
                "mlp.fc1.weight" => (vec![d, hid], Init::Linear { fan_in: d }),
                "mlp.fc1.bias" => (vec![hid], Init::Zeros),
                "mlp.fc2.weight" => (vec![hid, d], Init::Linear { fan_in: hid }),
                _ => (vec![d], Init::Zeros),
            };
            out.push(spec(format!("blocks.{l}.{name}"), shape, init));
        }
    }
    out.push(spec("norm.gain".into(), vec![d], Init::Ones));
    out.push(spec("norm.bias".into(), vec![d], Init::Zeros));
    out.push(spec(
        "head.weight".into(),
        vec![d, c],
        Init::Linear { fan_in: d },
    ));
    out.push(spec("head.bias".into(), vec![c], Init::Zeros));
    out.push(spec(
        "patch_head.weight".into(),
        vec![d, c],
        Init::Linear { fan_in: d },
    ));
    out.push(spec("patch_head.bias".into(), vec![c], Init::Zeros));
    out
}

/// Closed-form parameter count.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (d, n, hid, c, pd) = (
        cfg.dim,
        cfg.num_patches(),
        cfg.mlp_hidden(),
        cfg.num_classes,
        cfg.patch_dim(),
    );
    let stem = pd * d + d + d + (n + 1) * d;
    let block = 4 * d + 4 * (d * d + d) + (d * hid + hid) + (hid * d + d);
    let tail = 2 * d + 2 * (d * c + c);
    stem + cfg.depth * block + tail
}

/// All model weights, stored in [`param_layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ViTParams<T: Scalar = f32> {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ViTParams<T> {
    /// Deterministic initialization from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[0x1417]);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let tensors = param_layout(config)
            .into_iter()
            .map(|spec| {
                Tensor::from_fn(spec.shape, |_| match spec.init {
                    Init::Embedding => loop {
                        let v: f64 = normal.sample(&mut rng);
                        if v.abs() <= 0.04 {
                            break T::of_f64(v);
                        }
                    },
                    Init::Linear { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        T::of_f64(rng.random_range(-bound..bound))
                    }
                    Init::Zeros => T::zero(),
                    Init::Ones => T::one(),
                })
            })
            .collect();
        Ok(ViTParams {
            config: config.clone(),
            tensors,
        })
    }

    /// Wrap tensors loaded from elsewhere, checking them against the layout.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.iter().zip(&tensors) {
            if spec.shape != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "params",
                    lhs: spec.shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(ViTParams { config, tensors })
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ViTParams<U> {
        ViTParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn class_token(&self) -> &Tensor<T> {
        &self.tensors[2]
    }

    pub fn pos_embed(&self) -> &Tensor<T> {
        &self.tensors[3]
    }

    pub fn pos_embed_mut(&mut self) -> &mut Tensor<T> {
        &mut self.tensors[3]
    }

    /// Record every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), requires_grad))
                .collect(),
        }
    }
}

/// Tape handles for a [`ViTParams`], in layout order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

pub(crate) struct BlockVars {
    pub norm1: (Var, Var),
    pub wq: (Var, Var),
    pub wk: (Var, Var),
    pub wv: (Var, Var),
    pub wo: (Var, Var),
    pub norm2: (Var, Var),
    pub fc1: (Var, Var),
    pub fc2: (Var, Var),
}

impl BoundParams {
    pub(crate) fn patch_embed(&self) -> (Var, Var) {
        (self.vars[0], self.vars[1])
    }

    pub(crate) fn class_token(&self) -> Var {
        self.vars[2]
    }

    pub(crate) fn pos_embed(&self) -> Var {
        self.vars[3]
    }

    pub(crate) fn block(&self, l: usize) -> BlockVars {
        let v = &self.vars[STEM + l * PER_BLOCK..STEM + (l + 1) * PER_BLOCK];
        BlockVars {
            norm1: (v[0], v[1]),
            wq: (v[2], v[3]),
            wk: (v[4], v[5]),
            wv: (v[6], v[7]),
            wo: (v[8], v[9]),
            norm2: (v[10], v[11]),
            fc1: (v[12], v[13]),
            fc2: (v[14], v[15]),
        }
    }

    fn tail(&self) -> &[Var] {
        &self.vars[self.vars.len() - TAIL..]
    }

    pub(crate) fn final_norm(&self) -> (Var, Var) {
        (self.tail()[0], self.tail()[1])
    }

    pub(crate) fn head(&self) -> (Var, Var) {
        (self.tail()[2], self.tail()[3])
    }

    /// Shared linear head applied to individual patch representations.
    pub fn patch_head(&self) -> (Var, Var) {
        (self.tail()[4], self.tail()[5])
    }
}
