//! Run configuration: a TOML document with `run`, `population`, `model`,
//! `incentive`, `selection`, `bids` and `profiler` sections. Every section
//! and field has a default, so an empty file is a valid configuration.
//!
//! ```toml
//! [run]
//! rounds = 30
//! tiers = 2
//! seed = 7
//!
//! [population]
//! kind = "mixture"
//! partition = "10:90"
//! inverse_test = true
//!
//! [bids]
//! mode = "random"
//! ```

use serde::{Deserialize, Serialize};

use crate::client::BidPolicy;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TrainingParams};
use crate::profiler::ShapleyVariant;
use crate::scheduler::SelectionConfig;
use crate::synth::{GaussianPopulationSpec, MixtureSpec};
use crate::tokens::IncentiveParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    LocalOnly,
    GlobalFedavg,
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineKind::LocalOnly => "local-only",
            BaselineKind::GlobalFedavg => "global-fedavg",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub rounds: usize,
    pub tiers: usize,
    pub seed: u64,
    pub pretraining_rounds: usize,
    /// Reply deadline in pre-training rounds; absent means no deadline.
    pub response_threshold: Option<f64>,
    /// Mean of the simulated exponential reply latency.
    pub mean_latency: f64,
    pub baselines: Vec<BaselineKind>,
    /// Worker threads; absent means one per hardware thread.
    pub threads: Option<usize>,
    /// Rounds at the end of the run used for purity and dominance summaries.
    pub summary_window: usize,
    pub holdout_samples: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            rounds: 30,
            tiers: 2,
            seed: 0,
            pretraining_rounds: 0,
            response_threshold: None,
            mean_latency: 1.0,
            baselines: Vec::new(),
            threads: None,
            summary_window: 10,
            holdout_samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PopulationConfig {
    Mixture(MixtureSpec),
    Gaussian(GaussianPopulationSpec),
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig::Mixture(MixtureSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Hit radius for scalar-mean accuracy.
    pub hit_radius: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainingParams::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            hit_radius: 1.0,
        }
    }
}

impl ModelSection {
    pub fn training(&self) -> TrainingParams {
        TrainingParams {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }
}

/// Where the server draws the evaluation set used for contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSource {
    /// Tier members' declared training mixtures.
    #[default]
    Declared,
    /// The complement of the declared mixtures; a deliberately misaligned
    /// valuation used to show group rationality can fail.
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilerSection {
    pub variant: ShapleyVariant,
    pub eval_samples: usize,
    pub eval_source: EvalSource,
}

impl Default for ProfilerSection {
    fn default() -> Self {
        Self {
            variant: ShapleyVariant::Normalized,
            eval_samples: 200,
            eval_source: EvalSource::Declared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub population: PopulationConfig,
    pub model: ModelSection,
    pub incentive: IncentiveParams,
    pub selection: SelectionConfig,
    pub bids: BidPolicy,
    pub profiler: ProfilerSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides on dotted paths, then
    /// validates. Values are read as TOML, falling back to a bare string.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // A population section without a tag is a mixture population.
        if let Some(toml::Value::Table(p)) = table.get_mut("population") {
            p.entry("kind").or_insert_with(|| toml::Value::String("mixture".into()));
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| {
            // Deserializing from a table loses source positions; when the
            // original text fails the same way, report that error instead.
            match toml::from_str::<RunConfig>(text) {
                Err(orig) if orig.message() == e.message() => Error::Config(orig.to_string()),
                _ => Error::Config(e.to_string()),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_spec(&self) -> ModelSpec {
        match &self.population {
            PopulationConfig::Mixture(m) => m.model_spec(),
            PopulationConfig::Gaussian(_) => ModelSpec::ScalarMean {
                hit_radius: self.model.hit_radius,
            },
        }
    }

    pub fn num_clients(&self) -> usize {
        match &self.population {
            PopulationConfig::Mixture(m) => m.num_clients,
            PopulationConfig::Gaussian(g) => g.m1 + g.m2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.rounds == 0 {
            return Err(Error::invalid("run.rounds", "must be at least 1"));
        }
        if r.tiers == 0 {
            return Err(Error::invalid("run.tiers", "must be at least 1"));
        }
        if let Some(t) = r.response_threshold {
            if t.is_nan() || t < 0.0 {
                return Err(Error::invalid("run.response_threshold", "must be a nonnegative number"));
            }
        }
        if !(r.mean_latency.is_finite() && r.mean_latency > 0.0) {
            return Err(Error::invalid("run.mean_latency", "must be positive"));
        }
        if r.threads == Some(0) {
            return Err(Error::invalid("run.threads", "must be at least 1"));
        }
        if r.holdout_samples == 0 {
            return Err(Error::invalid("run.holdout_samples", "must be positive"));
        }
        match &self.population {
            PopulationConfig::Mixture(m) => m.validate()?,
            PopulationConfig::Gaussian(g) => g.validate()?,
        }
        if r.pretraining_rounds > 0 && matches!(self.population, PopulationConfig::Gaussian(_)) {
            return Err(Error::invalid(
                "run.pretraining_rounds",
                "pre-training tiering needs a classification population",
            ));
        }
        self.model_spec().validate()?;
        self.model.training().validate()?;
        if !(self.model.hit_radius.is_finite() && self.model.hit_radius > 0.0) {
            return Err(Error::invalid("model.hit_radius", "must be positive"));
        }
        self.incentive.validate()?;
        self.selection.validate()?;
        self.bids.validate()?;
        if self.profiler.eval_samples == 0 {
            return Err(Error::invalid("profiler.eval_samples", "must be positive"));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override path `{path}` has an empty segment")));
    }
    let mut cursor = table;
    for key in &keys[..keys.len() - 1] {
        let entry = cursor
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{path}`: `{key}` is not a section")))?;
    }
    cursor.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::BidMode;
    use crate::synth::Partition;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.run.baselines = vec![BaselineKind::LocalOnly];
        cfg.bids.mode = BidMode::Random;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_take_precedence() {
        let text = "[run]\nrounds = 10\n[population]\nkind = \"mixture\"\npartition = \"10:90\"\n";
        let cfg = RunConfig::from_toml_with_overrides(
            text,
            &["run.rounds=50".into(), "population.partition=linear".into(), "bids.mode=random".into()],
        )
        .unwrap();
        assert_eq!(cfg.run.rounds, 50);
        let PopulationConfig::Mixture(m) = &cfg.population else { panic!() };
        assert_eq!(m.partition, Partition::Linear);
        assert_eq!(cfg.bids.mode, BidMode::Random);
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::from_toml("[run]\nrounds = 0\n").unwrap_err();
        assert!(err.to_string().contains("run.rounds"), "{err}");
        let err = RunConfig::from_toml("[incentive]\neta = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("incentive.eta"), "{err}");
        let err = RunConfig::from_toml("[run]\nroundz = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(RunConfig::from_toml_with_overrides("", &["nonsense".into()]).is_err());
    }

    #[test]
    fn gaussian_population_uses_scalar_model() {
        let cfg = RunConfig::from_toml("[population]\nkind = \"gaussian\"\nm1 = 3\nm2 = 4\n").unwrap();
        assert_eq!(cfg.num_clients(), 7);
        assert!(matches!(cfg.model_spec(), ModelSpec::ScalarMean { .. }));
    }
}
