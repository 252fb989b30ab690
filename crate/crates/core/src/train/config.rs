//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and text after a `#` are comments. Keys are the
//! field names listed in [`TrainConfig::to_text`]; unknown keys are errors.
//! `image_size`, `channels` and `num_classes` feed both the model and the
//! dataset.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{DatasetSpec, Source};
use crate::error::{Error, Result};
use crate::losses::{LossTaps, LossWeights};
use crate::mixing::MixSpec;
use crate::train::optim::AdamW;
use crate::vit::ModelConfig;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "DIVPATCH_SEED";

/// Whether training batches are patch-mixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixToggle {
    /// Mix exactly when the mixing loss has a positive weight.
    Auto,
    On,
    Off,
}

impl FromStr for MixToggle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(MixToggle::Auto),
            "on" => Ok(MixToggle::On),
            "off" => Ok(MixToggle::Off),
            _ => Err(Error::Config(format!(
                "unknown mix setting {s:?} (auto | on | off)"
            ))),
        }
    }
}

impl fmt::Display for MixToggle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixToggle::Auto => "auto",
            MixToggle::On => "on",
            MixToggle::Off => "off",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DatasetSpec,
    pub weights: LossWeights,
    pub taps: LossTaps,
    pub mix: MixToggle,
    pub mix_spec: MixSpec,
    pub lr: f64,
    pub optimizer: AdamW,
    /// `None` means 5% of all steps.
    pub warmup_steps: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Eval examples used for the per-epoch similarity profile.
    pub profile_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            data: DatasetSpec::default(),
            weights: LossWeights::default(),
            taps: LossTaps::default(),
            mix: MixToggle::Auto,
            mix_spec: MixSpec::default(),
            lr: 5e-4,
            optimizer: AdamW::default(),
            warmup_steps: None,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            output_dir: None,
            profile_examples: 64,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn parse_auto<V: FromStr>(key: &str, value: &str) -> Result<Option<V>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

fn show_auto<V: fmt::Display>(v: &Option<V>) -> String {
    v.as_ref()
        .map_or_else(|| "auto".into(), ToString::to_string)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".into(), |p| p.display().to_string())
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "image_size" => {
                self.model.image_size = parse(key, v)?;
                self.data.image_size = self.model.image_size;
            }
            "channels" => {
                self.model.channels = parse(key, v)?;
                self.data.channels = self.model.channels;
            }
            "num_classes" => {
                self.model.num_classes = parse(key, v)?;
                self.data.num_classes = self.model.num_classes;
            }
            "patch_size" | "dim" | "depth" | "heads" | "mlp_ratio" | "drop_path_max" => {
                self.model.set(key, v)?
            }
            "data_source" => self.data.source = v.parse::<Source>()?,
            "frequency" => self.data.frequency = parse(key, v)?,
            "noise_std" => self.data.noise_std = parse(key, v)?,
            "class_offset" => self.data.class_offset = parse(key, v)?,
            "train_size" => self.data.train_size = parse(key, v)?,
            "eval_size" => self.data.eval_size = parse(key, v)?,
            "train_images" => self.data.train_images = parse_path(v),
            "train_labels" => self.data.train_labels = parse_path(v),
            "eval_images" => self.data.eval_images = parse_path(v),
            "eval_labels" => self.data.eval_labels = parse_path(v),
            "alpha_cos" => self.weights.alpha_cos = parse(key, v)?,
            "alpha_contrastive" => self.weights.alpha_contrastive = parse(key, v)?,
            "alpha_mixing" => self.weights.alpha_mixing = parse(key, v)?,
            "pooled_mixing" => self.weights.pooled_mixing = parse_bool(key, v)?,
            "loss_taps_final_norm" => self.taps.final_norm = parse_bool(key, v)?,
            "contrastive_reference_layer" => self.taps.contrastive_reference_layer = parse(key, v)?,
            "mixing_loss_layer" => self.taps.mixing_layer = parse_auto(key, v)?,
            "mix" => self.mix = v.parse()?,
            "mix_mode" => self.mix_spec.mode = v.parse()?,
            "mix_alpha" => self.mix_spec.alpha = parse(key, v)?,
            "label_lambda" => self.mix_spec.label_lambda = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.optimizer.weight_decay = parse(key, v)?,
            "beta1" => self.optimizer.beta1 = parse(key, v)?,
            "beta2" => self.optimizer.beta2 = parse(key, v)?,
            "adam_eps" => self.optimizer.eps = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse_auto(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "output_dir" => self.output_dir = parse_path(v),
            "profile_examples" => self.profile_examples = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    no + 1
                ))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Build a config from optional file text, then the seed environment
    /// variable, then `--set` overrides, in that order of precedence.
    pub fn resolve(
        file_text: Option<&str>,
        env_seed: Option<&str>,
        overrides: &[String],
    ) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        if let Some(text) = file_text {
            cfg.apply_text(text)?;
        }
        if let Some(seed) = env_seed {
            cfg.seed = parse(SEED_ENV, seed.trim())?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        self.weights.validate()?;
        self.mix_spec.validate()?;
        if self.model.image_size != self.data.image_size
            || self.model.channels != self.data.channels
            || self.model.num_classes != self.data.num_classes
        {
            return Err(Error::Config("model and dataset geometry disagree".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        let o = &self.optimizer;
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config(
                "betas must lie in [0, 1) and adam_eps be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.mixing_enabled() && self.batch_size < 2 {
            return Err(Error::Config("patch mixing needs batch_size >= 2".into()));
        }
        Ok(())
    }

    pub fn mixing_enabled(&self) -> bool {
        match self.mix {
            MixToggle::Auto => self.weights.alpha_mixing > 0.0,
            MixToggle::On => true,
            MixToggle::Off => false,
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.train_size / self.batch_size
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    pub fn warmup(&self) -> usize {
        self.warmup_steps
            .unwrap_or_else(|| (self.total_steps() as f64 * 0.05).round() as usize)
    }

    /// Every key with its resolved value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let d = &self.data;
        let w = &self.weights;
        let rows: Vec<(&str, String)> = vec![
            ("image_size", m.image_size.to_string()),
            ("patch_size", m.patch_size.to_string()),
            ("channels", m.channels.to_string()),
            ("dim", m.dim.to_string()),
            ("depth", m.depth.to_string()),
            ("heads", m.heads.to_string()),
            ("mlp_ratio", m.mlp_ratio.to_string()),
            ("num_classes", m.num_classes.to_string()),
            ("drop_path_max", m.drop_path_max.to_string()),
            ("data_source", d.source.to_string()),
            ("frequency", d.frequency.to_string()),
            ("noise_std", d.noise_std.to_string()),
            ("class_offset", d.class_offset.to_string()),
            ("train_size", d.train_size.to_string()),
            ("eval_size", d.eval_size.to_string()),
            ("train_images", show_path(&d.train_images)),
            ("train_labels", show_path(&d.train_labels)),
            ("eval_images", show_path(&d.eval_images)),
            ("eval_labels", show_path(&d.eval_labels)),
            ("alpha_cos", w.alpha_cos.to_string()),
            ("alpha_contrastive", w.alpha_contrastive.to_string()),
            ("alpha_mixing", w.alpha_mixing.to_string()),
            ("pooled_mixing", w.pooled_mixing.to_string()),
            ("loss_taps_final_norm", self.taps.final_norm.to_string()),
            (
                "contrastive_reference_layer",
                self.taps.contrastive_reference_layer.to_string(),
            ),
            ("mixing_loss_layer", show_auto(&self.taps.mixing_layer)),
            ("mix", self.mix.to_string()),
            ("mix_mode", self.mix_spec.mode.to_string()),
            ("mix_alpha", self.mix_spec.alpha.to_string()),
            ("label_lambda", self.mix_spec.label_lambda.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.optimizer.weight_decay.to_string()),
            ("beta1", self.optimizer.beta1.to_string()),
            ("beta2", self.optimizer.beta2.to_string()),
            ("adam_eps", self.optimizer.eps.to_string()),
            ("warmup_steps", show_auto(&self.warmup_steps)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("output_dir", show_path(&self.output_dir)),
            ("profile_examples", self.profile_examples.to_string()),
        ];
        rows.into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`Self::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("alpha_cos", "0.5").unwrap();
        cfg.set("mixing_loss_layer", "3").unwrap();
        cfg.set("output_dir", "/tmp/run").unwrap();
        cfg.set("mix_mode", "block").unwrap();
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn comments_overrides_and_env_seed() {
        let text = "# toy run\ndepth = 2   # shallow\nseed = 3\n\nalpha_mixing=0\n";
        let cfg = TrainConfig::resolve(Some(text), None, &[]).unwrap();
        assert_eq!((cfg.model.depth, cfg.seed), (2, 3));
        assert!(!cfg.mixing_enabled());
        let cfg = TrainConfig::resolve(Some(text), Some("11"), &[]).unwrap();
        assert_eq!(cfg.seed, 11);
        let cfg =
            TrainConfig::resolve(Some(text), Some("11"), &["seed=12".into(), "mix=on".into()])
                .unwrap();
        assert_eq!(cfg.seed, 12);
        assert!(cfg.mixing_enabled());
    }

    #[test]
    fn shared_keys_feed_model_and_data() {
        let cfg = TrainConfig::resolve(
            None,
            None,
            &["num_classes=7".into(), "image_size=16".into()],
        )
        .unwrap();
        assert_eq!((cfg.model.num_classes, cfg.data.num_classes), (7, 7));
        assert_eq!((cfg.model.image_size, cfg.data.image_size), (16, 16));
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(TrainConfig::from_text("nonsense = 1").is_err());
        assert!(TrainConfig::from_text("depth 3").is_err());
        assert!(TrainConfig::from_text("lr = fast").is_err());
        assert!(TrainConfig::resolve(None, Some("x"), &[]).is_err());
        assert!(TrainConfig::resolve(None, None, &["alpha_cos=-1".into()]).is_err());
    }

    #[test]
    fn warmup_defaults_to_five_percent() {
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 64,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.total_steps(), 320);
        assert_eq!(cfg.warmup(), 16);
    }
}
