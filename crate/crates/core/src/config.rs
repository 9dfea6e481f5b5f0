//! Experiment configuration: one JSON document per experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contract::{RevenueCurve, TypeProfile, BETA_SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::learning::{ComparisonSettings, PassGate, Scheme, TaskSettings};
use crate::sim::{RoundMode, SelectionRule};

pub const SCHEMA_VERSION: u32 = 1;

/// `analytic` books expected outcomes; `ml` trains models and tests them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Analytic,
    Ml,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Mode::Analytic),
            "ml" => Ok(Mode::Ml),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub thetas: Vec<f64>,
    pub betas: Vec<f64>,
    pub c: f64,
    pub revenue_curve: RevenueCurve,
    pub benchmarks: Vec<f64>,
    pub population: usize,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    /// Costs swept by `compare`; empty means just `c`.
    #[serde(default)]
    pub c_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default)]
    pub task: TaskSettings,
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        if self.thetas.is_empty() {
            return Err(Error::config("thetas", "at least one type is required"));
        }
        for (i, &t) in self.thetas.iter().enumerate() {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::config(
                    format!("thetas[{i}]"),
                    format!("{t} outside (0,1]"),
                ));
            }
            if i > 0 && t <= self.thetas[i - 1] {
                return Err(Error::config(
                    format!("thetas[{i}]"),
                    "thetas must be strictly increasing",
                ));
            }
        }
        if self.betas.len() != self.thetas.len() {
            return Err(Error::config(
                "betas",
                format!("expected {} entries, got {}", self.thetas.len(), self.betas.len()),
            ));
        }
        for (i, &b) in self.betas.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::config(format!("betas[{i}]"), format!("{b} outside [0,1]")));
            }
        }
        let total: f64 = self.betas.iter().sum();
        if (total - 1.0).abs() > BETA_SUM_TOLERANCE {
            return Err(Error::config("betas", format!("sum to {total}, expected 1")));
        }
        positive("c", self.c)?;
        for (i, &c) in self.c_values.iter().enumerate() {
            positive(&format!("c_values[{i}]"), c)?;
        }
        self.revenue_curve.validate()?;
        if self.benchmarks.len() != self.thetas.len() {
            return Err(Error::config(
                "benchmarks",
                format!(
                    "expected {} entries, got {}",
                    self.thetas.len(),
                    self.benchmarks.len()
                ),
            ));
        }
        for (i, &m) in self.benchmarks.iter().enumerate() {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::config(
                    format!("benchmarks[{i}]"),
                    format!("{m} outside [0,1]"),
                ));
            }
            if let Err(e) = self.revenue_curve.eval(m) {
                return Err(Error::config(format!("benchmarks[{i}]"), e.to_string()));
            }
        }
        if self.population == 0 {
            return Err(Error::config("population", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "at least one scheme is required"));
        }
        let t = &self.task;
        for (name, v) in [
            ("task.dimension", t.dimension),
            ("task.test_size", t.test_size),
            ("task.points_per_client", t.points_per_client),
            ("task.max_epochs", t.max_epochs),
            ("task.train.batch_size", t.train.batch_size),
            ("task.coverage.samples", t.coverage.samples),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if t.classes < 2 {
            return Err(Error::config("task.classes", "at least two classes are required"));
        }
        if t.coverage.radius_steps < 2 {
            return Err(Error::config(
                "task.coverage.radius_steps",
                "at least two steps are required",
            ));
        }
        positive("task.train.learning_rate", t.train.learning_rate)
    }

    pub fn profile(&self) -> Result<TypeProfile> {
        TypeProfile::new(&self.thetas, &self.betas, self.c)
    }

    /// Seeds to run, replaced by a single seed when overridden.
    pub fn seeds(&self, seed_override: Option<u64>) -> Vec<u64> {
        seed_override.map_or_else(|| self.seeds.clone(), |s| vec![s])
    }

    pub fn c_sweep(&self) -> Vec<f64> {
        if self.c_values.is_empty() {
            vec![self.c]
        } else {
            self.c_values.clone()
        }
    }

    /// `ml` rounds draw their outcomes; `analytic` rounds book expectations.
    pub fn round_mode(&self) -> RoundMode {
        match self.mode {
            Mode::Analytic => RoundMode::Analytic,
            Mode::Ml => RoundMode::Stochastic,
        }
    }

    pub fn comparison_settings(&self, seed_override: Option<u64>) -> Result<ComparisonSettings> {
        Ok(ComparisonSettings {
            profile: self.profile()?,
            curve: self.revenue_curve.clone(),
            benchmarks: self.benchmarks.clone(),
            population: self.population,
            seeds: self.seeds(seed_override),
            c_values: self.c_sweep(),
            schemes: self.schemes.clone(),
            gate: match self.mode {
                Mode::Analytic => PassGate::Sampled,
                Mode::Ml => PassGate::ServerTest,
            },
            task: self.task.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = r#"{
        "schema_version": 1,
        "thetas": [0.5, 1.0],
        "betas": [0.5, 0.5],
        "c": 1.0,
        "revenue_curve": {"kind": "table", "points": [{"M": 0.2, "G": 1.0}, {"M": 0.4, "G": 2.0}]},
        "benchmarks": [0.2, 0.4],
        "population": 100,
        "seeds": [7],
        "mode": "analytic"
    }"#;

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(CANONICAL).unwrap();
        f(&mut v);
        v.to_string()
    }

    fn path_of(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn canonical_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(CANONICAL).unwrap();
        assert_eq!(cfg.schemes, Scheme::ALL.to_vec());
        assert_eq!(cfg.c_sweep(), vec![1.0]);
        assert_eq!(cfg.selection, SelectionRule::Truthful);
        assert_eq!(cfg.seeds(Some(3)), vec![3]);
        assert_eq!(cfg.profile().unwrap().len(), 2);
        assert_eq!(cfg.comparison_settings(None).unwrap().gate, PassGate::Sampled);
    }

    #[test]
    fn round_trip_is_idempotent_after_normalization() {
        let first = ExperimentConfig::from_json(CANONICAL).unwrap().to_json().unwrap();
        let second = ExperimentConfig::from_json(&first).unwrap().to_json().unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn validation_names_the_field() {
        assert_eq!(
            path_of(&edit(|v| v["thetas"] = serde_json::json!([0.6, 0.6]))),
            "thetas[1]"
        );
        assert_eq!(
            path_of(&edit(|v| v["betas"] = serde_json::json!([0.5, 0.6]))),
            "betas"
        );
        assert_eq!(path_of(&edit(|v| v["c"] = serde_json::json!(0.0))), "c");
        assert_eq!(
            path_of(&edit(|v| v["c_values"] = serde_json::json!([1.0, -2.0]))),
            "c_values[1]"
        );
        assert_eq!(
            path_of(&edit(|v| v["benchmarks"] = serde_json::json!([0.2]))),
            "benchmarks"
        );
        assert_eq!(
            path_of(&edit(|v| v["benchmarks"] = serde_json::json!([0.1, 0.4]))),
            "benchmarks[0]"
        );
        assert_eq!(
            path_of(&edit(|v| v["schema_version"] = serde_json::json!(2))),
            "schema_version"
        );
        assert_eq!(path_of(&edit(|v| v["seeds"] = serde_json::json!([]))), "seeds");
        assert_eq!(
            path_of(&edit(|v| v["task"] = serde_json::json!({
                "dimension": 2, "classes": 1, "test_size": 10, "points_per_client": 5, "max_epochs": 3
            }))),
            "task.classes"
        );
    }

    #[test]
    fn unknown_fields_and_syntax_errors_are_rejected() {
        assert!(path_of(&edit(|v| v["colour"] = serde_json::json!(1))).starts_with("line"));
        assert!(path_of("{").starts_with("line"));
        assert_eq!("ml".parse::<Mode>().unwrap(), Mode::Ml);
        assert!("fast".parse::<Mode>().is_err());
    }
}
