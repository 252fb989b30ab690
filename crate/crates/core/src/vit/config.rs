use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub drop_path_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 4,
            channels: 1,
            dim: 64,
            depth: 6,
            heads: 4,
            mlp_ratio: 4.0,
            num_classes: 4,
            drop_path_max: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0
            || self.image_size == 0
            || !self.image_size.is_multiple_of(self.patch_size)
        {
            return fail(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.channels == 0 || self.dim == 0 || self.num_classes == 0 {
            return fail("channels, dim and num_classes must be positive".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            ));
        }
        if self.mlp_hidden() == 0 {
            return fail(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio));
        }
        if !(0.0..1.0).contains(&self.drop_path_max) {
            return fail(format!(
                "drop_path_max {} outside [0, 1)",
                self.drop_path_max
            ));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Number of image patches `n` (the class patch is not counted).
    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Tokens per sequence: patches plus the class patch.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio).round() as usize
    }

    /// `key=value` lines, one per field, in declaration order.
    pub fn to_text(&self) -> String {
        format!(
            "image_size={}\npatch_size={}\nchannels={}\ndim={}\ndepth={}\nheads={}\nmlp_ratio={}\nnum_classes={}\ndrop_path_max={}\n",
            self.image_size,
            self.patch_size,
            self.channels,
            self.dim,
            self.depth,
            self.heads,
            self.mlp_ratio,
            self.num_classes,
            self.drop_path_max
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed config line {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = ModelConfig::default();
        for (k, v) in &map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one field from its textual value. Returns an error for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "image_size" => self.image_size = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "mlp_ratio" => self.mlp_ratio = num(key, value)?,
            "num_classes" => self.num_classes = num(key, value)?,
            "drop_path_max" => self.drop_path_max = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// Stochastic-depth rate per block, rising linearly from 0 at the first
    /// block to `drop_path_max` at the last.
    pub fn drop_path_rates(&self) -> Vec<f64> {
        drop_path_rates(self.depth, self.drop_path_max)
    }
}

pub fn drop_path_rates(depth: usize, max: f64) -> Vec<f64> {
    match depth {
        0 => vec![],
        1 => vec![0.0],
        l => (0..l).map(|i| max * i as f64 / (l - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_rise_linearly() {
        let r = drop_path_rates(24, 0.5);
        assert_eq!(r.len(), 24);
        assert_eq!(r[0], 0.0);
        assert_eq!(r[23], 0.5);
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        assert!(drop_path_rates(6, 0.0).iter().all(|&v| v == 0.0));
        assert_eq!(drop_path_rates(2, 0.5), vec![0.0, 0.5]);
        assert_eq!(drop_path_rates(1, 0.5), vec![0.0]);
    }

    #[test]
    fn validation() {
        let ok = ModelConfig::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.num_patches(), 64);
        let bad = ModelConfig {
            image_size: 30,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            heads: 5,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            drop_path_max: 1.0,
            ..ok
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = ModelConfig {
            mlp_ratio: 2.5,
            drop_path_max: 0.1,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(ModelConfig::from_text("bogus=1").is_err());
    }

    #[test]
    fn imagenet_patch_count() {
        let cfg = ModelConfig {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            dim: 768,
            heads: 12,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.num_patches(), 196);
    }
}
