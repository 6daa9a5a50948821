//! Experiment configuration: sectioned `section.key = value` text.
//!
//! The format is a subset of TOML, so dotted keys and `[section]` tables are
//! both accepted. Every key is optional and falls back to its default; unknown
//! keys are rejected with a message naming them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::AssignConfig;
use crate::cls_loss::focal::FocalConfig;
use crate::cls_loss::ClsConfig;
use crate::error::{Error, Result};
use crate::harness::{EvalConfig, LossConfig, LossKind, OptimConfig, SceneConfig};
use crate::reg_loss::RegConfig;

/// Seed used when a config does not name one.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub loss: LossKind,
    pub cls: ClsConfig,
    pub reg: RegConfig,
    pub focal: FocalConfig,
    pub assign: AssignConfig,
    pub scene: SceneConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            loss: LossKind::Hcral,
            cls: ClsConfig::default(),
            reg: RegConfig::default(),
            focal: FocalConfig::default(),
            assign: AssignConfig::default(),
            scene: SceneConfig::default(),
            optim: OptimConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates config text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.cls.validate()?;
        self.reg.validate()?;
        self.assign.validate()?;
        self.scene.validate()?;
        self.optim.validate()?;
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(Error::OutOfRange {
                name: "eval.iou_threshold",
                value: self.eval.iou_threshold,
                expected: "(0, 1]",
            });
        }
        if !(self.eval.nms_iou > 0.0 && self.eval.nms_iou <= 1.0) {
            return Err(Error::OutOfRange {
                name: "eval.nms_iou",
                value: self.eval.nms_iou,
                expected: "(0, 1]",
            });
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            cls: self.cls,
            reg: self.reg,
            focal: self.focal,
        }
    }

    /// Every effective value as one `section.key = value` line, sorted by
    /// key. Parsing the output yields an equal config.
    pub fn to_flat_string(&self) -> Result<String> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = String::new();
        flatten(&mut out, "", &value);
        Ok(out)
    }
}

fn flatten(out: &mut String, prefix: &str, value: &toml::Value) {
    match value {
        toml::Value::Table(table) => {
            // Top-level scalars first so they do not land inside a section.
            let (scalars, tables): (Vec<_>, Vec<_>) =
                table.iter().partition(|(_, v)| !v.is_table());
            for (key, v) in scalars.into_iter().chain(tables) {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                flatten(out, &path, v);
            }
        }
        scalar => {
            let _ = writeln!(out, "{prefix} = {scalar}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn defaults_match_best_settings() {
        let c = ExperimentConfig::default();
        assert_eq!(c.cls.theta, 5.0);
        assert_eq!(c.cls.m_bins, 20);
        assert_eq!(c.cls.mu, 0.7);
        assert_eq!(c.cls.alpha, -0.1);
        assert_eq!(c.reg.alpha, -0.1);
        assert_eq!(c.reg.ep, 0.001);
        assert_eq!(c.reg.gamma, Some(1.2));
        assert_eq!(c.reg.flat_weight, 1.5);
        assert_eq!(c.assign.l, 3);
    }

    #[test]
    fn dotted_and_table_forms() {
        let a = ExperimentConfig::parse("cls.theta = 4\nassign.l = 2\nreg.gamma = \"flat\"\n").unwrap();
        let b = ExperimentConfig::parse("[cls]\ntheta = 4.0\n[assign]\nl = 2\n[reg]\ngamma = \"flat\"\n")
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cls.theta, 4.0);
        assert_eq!(a.reg.gamma, None);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("cls.thetaa = 5\n").unwrap_err();
        assert!(err.to_string().contains("thetaa"), "{err}");
        let err = ExperimentConfig::parse("bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_value_rejected() {
        assert!(ExperimentConfig::parse("cls.m_bins = 0\n").is_err());
        assert!(ExperimentConfig::parse("loss = \"softmax\"\n").is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut c = ExperimentConfig {
            seed: 17,
            loss: LossKind::FocalGiou,
            ..ExperimentConfig::default()
        };
        c.reg.gamma = None;
        c.cls.theta = 0.1 + 0.2;
        let text = c.to_flat_string().unwrap();
        assert!(text.starts_with("loss = \"focal_giou\"\nseed = 17\n"), "{text}");
        assert!(text.contains("cls.theta = "));
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }
}
