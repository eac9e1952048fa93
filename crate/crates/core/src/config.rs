//! Run configuration: one JSON document, every default materialized on load.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{BenchmarkConfig, PhysicsThresholds};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mp::MpConfig;
use crate::nn::{ModelKind, TrainConfig};
use crate::scenario::{ScenarioConfig, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    pub seeds: Vec<u64>,
    pub thresholds: PhysicsThresholds,
    pub timing_repeats: usize,
    pub train_sizes: Vec<usize>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            seeds: vec![1, 2, 3],
            thresholds: PhysicsThresholds::default(),
            timing_repeats: 5,
            train_sizes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Grid file; `None` selects the bundled IEEE 14-bus case.
    pub grid_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub scenario: BTreeMap<Split, ScenarioConfig>,
    pub train: BTreeMap<ModelKind, TrainConfig>,
    pub mp: MpConfig,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sizes = [
            (Split::Train, 10_000, 11),
            (Split::Val, 1_000, 12),
            (Split::Test, 1_000, 13),
            (Split::Ood, 1_000, 14),
        ];
        RunConfig {
            grid_path: None,
            output_dir: PathBuf::from("runs"),
            scenario: sizes
                .into_iter()
                .map(|(s, n, seed)| (s, ScenarioConfig::for_split(s, n, seed)))
                .collect(),
            train: ModelKind::ALL.iter().map(|&k| (k, TrainConfig::for_kind(k))).collect(),
            mp: MpConfig::default(),
            bench: BenchSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config file and fill in every missing value.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: RunConfig = crate::store::read_json(path).map_err(|e| match e {
            Error::Json { path, source } => Error::InvalidConfig(format!("{}: {source}", path.display())),
            Error::Io { path, source } => {
                Error::InvalidConfig(format!("cannot read config {}: {source}", path.display()))
            }
            other => other,
        })?;
        config.materialize();
        config.validate()?;
        Ok(config)
    }

    /// Add defaults for splits or model kinds the file left out and align
    /// per-entry settings with their map key (a split fixes its
    /// disconnection rule, a model entry fixes its kind).
    pub fn materialize(&mut self) {
        let defaults = RunConfig::default();
        for (split, cfg) in defaults.scenario {
            self.scenario.entry(split).or_insert(cfg);
        }
        for (kind, cfg) in defaults.train {
            self.train.entry(kind).or_insert(cfg);
        }
        for (split, cfg) in self.scenario.iter_mut() {
            cfg.disconnection_rule = split.rule();
        }
        for (kind, cfg) in self.train.iter_mut() {
            cfg.model_kind = *kind;
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (split, cfg) in &self.scenario {
            cfg.validate()?;
            if cfg.disconnection_rule != split.rule() {
                return Err(Error::InvalidConfig(format!(
                    "split {} requires disconnection rule {:?}",
                    split.name(),
                    split.rule()
                )));
            }
        }
        for cfg in self.train.values() {
            cfg.validate()?;
        }
        self.mp.validate()?;
        if let Some(p) = &self.grid_path {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!(
                    "grid file {} does not exist",
                    p.display()
                )));
            }
        }
        if self.bench.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one benchmark seed is required".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        match &self.grid_path {
            Some(p) => Grid::load(p),
            None => Ok(Grid::ieee14()),
        }
    }

    pub fn scenario(&self, split: Split) -> ScenarioConfig {
        self.scenario
            .get(&split)
            .cloned()
            .unwrap_or_else(|| RunConfig::default().scenario[&split].clone())
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            models: ModelKind::ALL.to_vec(),
            include_mp_opt: true,
            train: self.train.clone(),
            seeds: self.bench.seeds.clone(),
            mp: self.mp,
            thresholds: self.bench.thresholds,
            timing_repeats: self.bench.timing_repeats,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
