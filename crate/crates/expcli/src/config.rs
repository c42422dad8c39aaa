//! Experiment configuration.
//!
//! Files are flat `section.key = value` lines (a subset of TOML); see
//! `docs/config.md` for the schema. Unknown sections and keys are rejected
//! with the offending line and column.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub landscape: LandscapeSection,
    pub optimizer: OptimizerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ire: Option<IreSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub steps: usize,
    #[serde(default = "one")]
    pub log_every: usize,
    #[serde(default, with = "seed_repr")]
    pub seed: u64,
    /// CSV path; relative paths resolve against the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Starting point; the landscape default is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coords: Vec<usize>,
    #[serde(default)]
    pub track_distance: bool,
    #[serde(default = "default_converge_loss")]
    pub converge_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeKind {
    Toy2d,
    QuadraticValley,
    InterpolatingRegression,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValleyProfile {
    Shifted,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSection {
    pub kind: LandscapeKind,
    /// Valley: total dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Valley: base curvatures, one per sharp coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ValleyProfile>,
    /// Regression: scalar inputs and targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<f64>>,
    /// Regression: tanh hidden width (0 selects the linear feature map).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    /// Softmax: synthetic data shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_seed_repr"
    )]
    pub data_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Gd,
    Sgd,
    Momentum,
    Adam,
    Adamw,
    SamStandard,
    SamAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Constant,
    Step,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerName,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleName>,
    /// Step decay: multiply by `decay_factor` at each milestone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<usize>>,
    /// Cosine: linear warm-up length and floor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Fisher,
    ExactDiag,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IreSection {
    pub kappa: f64,
    pub gamma: f64,
    #[serde(default = "one")]
    pub refresh: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_loss: Option<f64>,
    pub estimator: EstimatorName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharp_dim: Option<usize>,
}

/// Grid axes for `sweep`; the grid is their Cartesian product in the order
/// kappa, gamma, refresh, lr, rho (last axis fastest). Absent axes keep the
/// base value; a grid with no axes has no cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

fn default_converge_loss() -> f64 {
    1e-10
}

/// TOML integers are signed; seeds above `i64::MAX` are written as strings.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Int(i64),
        Text(String),
    }

    pub(super) fn to_u64<E: de::Error>(r: Repr) -> Result<u64, E> {
        match r {
            Repr::Int(i) => u64::try_from(i).map_err(|_| E::custom("seed must be non-negative")),
            Repr::Text(s) => s
                .parse()
                .map_err(|_| E::custom(format!("seed {s:?} is not a 64-bit unsigned integer"))),
        }
    }

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(i) => i.serialize(s),
            Err(_) => seed.to_string().serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        to_u64(Repr::deserialize(d)?)
    }
}

mod opt_seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
        match seed {
            Some(v) => super::seed_repr::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
        super::seed_repr::to_u64(super::seed_repr::Repr::deserialize(d)?).map(Some)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    /// Flat `section.key = value` text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let value = toml::Value::try_from(self).expect("config is representable");
        let mut out = String::new();
        let toml::Value::Table(sections) = value else {
            unreachable!("config serializes to a table")
        };
        for section in ["run", "landscape", "optimizer", "ire", "sweep"] {
            let Some(toml::Value::Table(keys)) = sections.get(section) else {
                continue;
            };
            if !out.is_empty() {
                out.push('\n');
            }
            for (key, v) in keys {
                let _ = writeln!(out, "{section}.{key} = {}", leaf(v));
            }
        }
        out
    }

    /// Semantic checks that the grammar cannot express.
    pub fn check(&self) -> Result<(), ConfigError> {
        let field = |name: &str, msg: &str| {
            Err(ConfigError::Field {
                field: name.to_string(),
                message: msg.to_string(),
            })
        };
        if self.run.log_every == 0 {
            return field("run.log_every", "must be at least 1");
        }
        if !(self.optimizer.lr > 0.0) || !self.optimizer.lr.is_finite() {
            return field("optimizer.lr", "must be a positive finite number");
        }
        if let Some(ire) = &self.ire {
            if !(ire.gamma > 0.0 && ire.gamma < 1.0) {
                return field("ire.gamma", "must lie in (0, 1)");
            }
            if !(ire.kappa >= 0.0) || !ire.kappa.is_finite() {
                return field("ire.kappa", "must be finite and >= 0");
            }
            if ire.refresh == 0 {
                return field("ire.refresh", "must be at least 1");
            }
        }
        if let Some(sw) = &self.sweep {
            let ire_axes = sw.kappa.is_some() || sw.gamma.is_some() || sw.refresh.is_some();
            if ire_axes && self.ire.is_none() {
                return field("sweep", "kappa, gamma and refresh axes need an ire section");
            }
        }
        let l = &self.landscape;
        let allowed: &[&str] = match l.kind {
            LandscapeKind::Toy2d => &["radius"],
            LandscapeKind::QuadraticValley => &["p", "a", "profile", "radius"],
            LandscapeKind::InterpolatingRegression => &["inputs", "targets", "width", "radius"],
            LandscapeKind::Softmax => &[
                "input_dim",
                "hidden",
                "classes",
                "batch",
                "data_seed",
                "radius",
            ],
        };
        let present = [
            ("p", l.p.is_some()),
            ("a", l.a.is_some()),
            ("profile", l.profile.is_some()),
            ("inputs", l.inputs.is_some()),
            ("targets", l.targets.is_some()),
            ("width", l.width.is_some()),
            ("input_dim", l.input_dim.is_some()),
            ("hidden", l.hidden.is_some()),
            ("classes", l.classes.is_some()),
            ("batch", l.batch.is_some()),
            ("data_seed", l.data_seed.is_some()),
            ("radius", l.radius.is_some()),
        ];
        if let Some((name, _)) = present.iter().find(|(n, set)| *set && !allowed.contains(n)) {
            return field(
                &format!("landscape.{name}"),
                &format!("not a parameter of landscape kind {:?}", l.kind),
            );
        }
        Ok(())
    }
}

fn leaf(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(x) => format!("{x:?}"),
        toml::Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(leaf).collect();
            format!("[{}]", parts.join(", "))
        }
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "\
run.steps = 100
run.seed = 7
landscape.kind = \"toy2d\"
optimizer.kind = \"gd\"
optimizer.lr = 0.5
ire.kappa = 1.0
ire.gamma = 0.5
ire.estimator = \"exact_diag\"
";

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::parse(TOY).unwrap();
        assert_eq!(c.run.log_every, 1);
        assert_eq!(c.run.converge_loss, 1e-10);
        assert_eq!(c.ire.as_ref().unwrap().refresh, 1);
        assert!(c.sweep.is_none());
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut c = ExperimentConfig::parse(TOY).unwrap();
        c.run.seed = u64::MAX;
        c.optimizer.lr = 0.1 + 0.2;
        c.run.init = Some(vec![1.0 / 3.0, -0.0, 1e-300, 2.5e300]);
        c.landscape.radius = Some(f64::INFINITY);
        c.sweep = Some(SweepSection {
            kappa: Some(vec![0.0, 1.0]),
            ..SweepSection::default()
        });
        let text = c.to_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert!(text.lines().all(|l| l.is_empty() || l.contains('.')));
        assert_eq!(
            back.run.init.as_ref().unwrap()[1].to_bits(),
            (-0.0f64).to_bits()
        );
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = ExperimentConfig::parse(&format!("{TOY}ire.kapa = 2\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 9") && msg.contains("kapa"), "{msg}");
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(ExperimentConfig::parse(&format!("{TOY}extra.x = 1\n")).is_err());
    }

    #[test]
    fn field_level_diagnostics() {
        let err = ExperimentConfig::parse(&TOY.replace("ire.gamma = 0.5", "ire.gamma = 1.5"))
            .unwrap_err();
        assert!(err.to_string().contains("ire.gamma"));
        let err = ExperimentConfig::parse(&format!("{TOY}landscape.p = 3\n")).unwrap_err();
        assert!(err.to_string().contains("landscape.p"));
    }

    #[test]
    fn negative_seed_rejected() {
        assert!(ExperimentConfig::parse(&TOY.replace("run.seed = 7", "run.seed = -1")).is_err());
    }
}
