use std::fmt;
use std::str::FromStr;

use super::{train, TrainConfig};
use crate::error::{Error, Result};

/// A regularizer that the ablation switches on and off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Cos,
    Contrastive,
    Mixing,
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cos" => Ok(Component::Cos),
            "contrastive" => Ok(Component::Contrastive),
            "mixing" => Ok(Component::Mixing),
            _ => Err(Error::Config(format!(
                "unknown component {s:?} (cos | contrastive | mixing)"
            ))),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Cos => "cos",
            Component::Contrastive => "contrastive",
            Component::Mixing => "mixing",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cos: bool,
    pub contrastive: bool,
    pub mixing: bool,
    pub top1: f64,
    /// Mean similarity at the last layer on the eval profile sample.
    pub final_p: f64,
    pub config_hash: String,
    pub config: TrainConfig,
}

impl AblationRow {
    pub fn tag(&self) -> String {
        let on = |b: bool, c: Component| if b { c.to_string() } else { String::new() };
        let parts: Vec<String> = [
            on(self.cos, Component::Cos),
            on(self.contrastive, Component::Contrastive),
            on(self.mixing, Component::Mixing),
        ]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }
}

fn weight(base: f64) -> f64 {
    if base > 0.0 {
        base
    } else {
        1.0
    }
}

/// Train every on/off combination of `subset` with the same seed. Components
/// outside `subset` stay off; a component that is on keeps its configured
/// weight, or 1 if that weight is zero. Each run writes into
/// `output_dir/<tag>` when an output directory is set.
pub fn ablate(base: &TrainConfig, subset: &[Component]) -> Result<Vec<AblationRow>> {
    let mut subset = subset.to_vec();
    subset.dedup();
    let mut rows = Vec::with_capacity(1 << subset.len());
    for bits in 0..1usize << subset.len() {
        let on = |c: Component| {
            subset
                .iter()
                .position(|&s| s == c)
                .is_some_and(|i| bits >> i & 1 == 1)
        };
        let (cos, contrastive, mixing) = (
            on(Component::Cos),
            on(Component::Contrastive),
            on(Component::Mixing),
        );
        let mut cfg = base.clone();
        cfg.weights.alpha_cos = if cos {
            weight(base.weights.alpha_cos)
        } else {
            0.0
        };
        cfg.weights.alpha_contrastive = if contrastive {
            weight(base.weights.alpha_contrastive)
        } else {
            0.0
        };
        cfg.weights.alpha_mixing = if mixing {
            weight(base.weights.alpha_mixing)
        } else {
            0.0
        };
        let mut row = AblationRow {
            cos,
            contrastive,
            mixing,
            top1: f64::NAN,
            final_p: f64::NAN,
            config_hash: String::new(),
            config: cfg,
        };
        // The hash covers the configuration as it would be with the shared
        // output directory, so rows differ only in the loss weights.
        row.config_hash = row.config.hash();
        if let Some(dir) = &base.output_dir {
            row.config.output_dir = Some(dir.join(row.tag()));
        }
        let outcome = train(&row.config)?;
        row.top1 = outcome.final_top1();
        row.final_p = outcome
            .final_profile()
            .and_then(|p| p.last())
            .map_or(f64::NAN, |s| s.mean);
        rows.push(row);
    }
    Ok(rows)
}

/// Columns `cos,contrastive,mixing,top1,final_p,config_hash`, flags as 0/1.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cos",
        "contrastive",
        "mixing",
        "top1",
        "final_p",
        "config_hash",
    ])?;
    for r in rows {
        w.write_record(&[
            u8::from(r.cos).to_string(),
            u8::from(r.contrastive).to_string(),
            u8::from(r.mixing).to_string(),
            r.top1.to_string(),
            r.final_p.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    super::finish_csv(w)
}
