use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Grid;
use crate::mp::{mp_opt_solve, MpConfig, MpTrajectory};
use crate::nn::{train, ModelKind, SurrogateModel, TrainConfig, TrainReport};
use crate::scenario::Dataset;

use super::curves::{warm_vs_flat, WarmStartComparison};
use super::timing::{speedup, MpOpt, PhasorModel, SpeedupReport};
use super::{evaluate, Evaluation, PhysicsThresholds};

/// Mean and sample standard deviation of a set of run values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub mae: Option<Stat>,
    pub mape90: Option<Stat>,
    pub p5: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub failures: Vec<String>,
    pub test: SplitStats,
    pub ood: SplitStats,
    pub speedup: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub grid: String,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn row(&self, model: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_markdown(&self) -> String {
        let fmt = |s: &Option<Stat>, pct: bool| match s {
            Some(s) if pct => format!("{:.2}% ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
            Some(s) => format!("{:.2e} ± {:.1e}", s.mean, s.std),
            None => "n/a".into(),
        };
        let mut out = format!("# Benchmark on {}\n\n", self.grid);
        out.push_str(
            "| Model | Runs | MAE test | MAPE90 test | Speed-up | P5 test | P5 OOD | MAE OOD | MAPE90 OOD |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let speed = match &r.speedup {
                Some(s) => format!("{:.2} ± {:.2}", s.mean, s.std),
                None => "n/a".into(),
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.model,
                r.runs,
                fmt(&r.test.mae, false),
                fmt(&r.test.mape90, false),
                speed,
                fmt(&r.test.p5, true),
                fmt(&r.ood.p5, true),
                fmt(&r.ood.mae, false),
                fmt(&r.ood.mape90, false),
            );
        }
        let failed: Vec<_> = self.rows.iter().filter(|r| !r.failures.is_empty()).collect();
        if !failed.is_empty() {
            out.push_str("\nFailed runs:\n");
            for r in failed {
                for f in &r.failures {
                    let _ = writeln!(out, "- {}: {f}", r.model);
                }
            }
        }
        out.push_str("\nP5 is the share of non-slack buses whose local conservation residual exceeds the configured threshold. P3 is not applicable to lossless DC flows.\n");
        out
    }
}

/// Everything the benchmark consumes.
pub struct BenchmarkInputs<'a> {
    pub grid: &'a Grid,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
    pub ood: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub models: Vec<ModelKind>,
    pub include_mp_opt: bool,
    pub train: BTreeMap<ModelKind, TrainConfig>,
    pub seeds: Vec<u64>,
    pub mp: MpConfig,
    pub thresholds: PhysicsThresholds,
    pub timing_repeats: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            models: ModelKind::ALL.to_vec(),
            include_mp_opt: true,
            train: ModelKind::ALL.iter().map(|&k| (k, TrainConfig::for_kind(k))).collect(),
            seeds: vec![1, 2, 3],
            mp: MpConfig::default(),
            thresholds: PhysicsThresholds::default(),
            timing_repeats: 5,
        }
    }
}

impl BenchmarkConfig {
    pub fn train_config(&self, kind: ModelKind, seed: u64) -> TrainConfig {
        TrainConfig {
            model_kind: kind,
            seed,
            ..self
                .train
                .get(&kind)
                .cloned()
                .unwrap_or_else(|| TrainConfig::for_kind(kind))
        }
    }
}

/// Outcome of one (model, seed) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub seed: u64,
    pub train_size: usize,
    pub report: Option<TrainReport>,
    pub test: Option<Evaluation>,
    pub ood: Option<Evaluation>,
    pub speedup: Option<SpeedupReport>,
    pub warm_start: Option<WarmStartComparison>,
    pub error: Option<String>,
    #[serde(skip)]
    pub model_state: Option<SurrogateModel>,
}

pub struct BenchmarkOutcome {
    pub table: BenchmarkTable,
    pub runs: Vec<RunRecord>,
    /// Flat-start solve of the first test sample.
    pub mp_trajectory: Option<MpTrajectory>,
}

fn eval_model(
    model: &dyn PhasorModel,
    inputs: &BenchmarkInputs,
    config: &BenchmarkConfig,
) -> Result<(Evaluation, Evaluation, SpeedupReport)> {
    let test = evaluate(model, inputs.grid, &inputs.test.samples, &config.thresholds)?;
    let ood = evaluate(model, inputs.grid, &inputs.ood.samples, &config.thresholds)?;
    let speed = speedup(model, inputs.grid, &inputs.test.samples, config.timing_repeats)?;
    Ok((test, ood, speed))
}

/// Train and evaluate one learned model.
pub fn run_learned(inputs: &BenchmarkInputs, config: &BenchmarkConfig, kind: ModelKind, seed: u64) -> RunRecord {
    let mut record = RunRecord {
        model: kind.to_string(),
        seed,
        train_size: inputs.train.len(),
        report: None,
        test: None,
        ood: None,
        speedup: None,
        warm_start: None,
        error: None,
        model_state: None,
    };
    let tc = config.train_config(kind, seed);
    let outcome = train(inputs.grid, inputs.train, inputs.val, &tc).and_then(|(model, report)| {
        record.report = Some(report);
        let (test, ood, speed) = eval_model(&model, inputs, config)?;
        if kind != ModelKind::Mlp {
            record.warm_start = Some(warm_vs_flat(&model, inputs.grid, &inputs.test.samples, tc.pimp_layers)?);
        }
        record.test = Some(test);
        record.ood = Some(ood);
        record.speedup = Some(speed);
        record.model_state = Some(model);
        Ok(())
    });
    if let Err(e) = outcome {
        log::error!("{kind} seed {seed} failed: {e}");
        record.error = Some(e.to_string());
    }
    record
}

fn run_mp_opt(inputs: &BenchmarkInputs, config: &BenchmarkConfig, seed: u64) -> RunRecord {
    let model = MpOpt { config: config.mp };
    let mut record = RunRecord {
        model: model.name(),
        seed,
        train_size: 0,
        report: None,
        test: None,
        ood: None,
        speedup: None,
        warm_start: None,
        error: None,
        model_state: None,
    };
    match eval_model(&model, inputs, config) {
        Ok((test, ood, speed)) => {
            record.test = Some(test);
            record.ood = Some(ood);
            record.speedup = Some(speed);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

fn split_stats(runs: &[&RunRecord], pick: impl Fn(&RunRecord) -> Option<&Evaluation>) -> SplitStats {
    let evals: Vec<&Evaluation> = runs.iter().filter_map(|r| pick(r)).collect();
    SplitStats {
        mae: Stat::of(evals.iter().map(|e| e.metrics.mae).collect()),
        mape90: Stat::of(evals.iter().filter_map(|e| e.metrics.mape90).collect()),
        p5: Stat::of(evals.iter().map(|e| e.physics.p5).collect()),
    }
}

pub fn summarize(grid: &str, runs: &[RunRecord]) -> BenchmarkTable {
    let mut names: Vec<&str> = Vec::new();
    for r in runs {
        if !names.contains(&r.model.as_str()) {
            names.push(&r.model);
        }
    }
    let rows = names
        .into_iter()
        .map(|name| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.model == name).collect();
            let ok: Vec<&RunRecord> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
            BenchmarkRow {
                model: name.to_string(),
                runs: ok.len(),
                seeds: mine.iter().map(|r| r.seed).collect(),
                failures: mine
                    .iter()
                    .filter_map(|r| r.error.as_ref().map(|e| format!("seed {}: {e}", r.seed)))
                    .collect(),
                test: split_stats(&ok, |r| r.test.as_ref()),
                ood: split_stats(&ok, |r| r.ood.as_ref()),
                speedup: Stat::of(ok.iter().filter_map(|r| r.speedup.as_ref().map(|s| s.ratio)).collect()),
            }
        })
        .collect();
    BenchmarkTable {
        grid: grid.to_string(),
        rows,
    }
}

/// Train every learned model once per seed, evaluate it with the exact
/// solver's ground truth, and add the flat-start message-passing baseline.
pub fn run_benchmark(inputs: &BenchmarkInputs, config: &BenchmarkConfig) -> BenchmarkOutcome {
    let mut runs = Vec::new();
    for &kind in &config.models {
        for &seed in &config.seeds {
            log::info!("training {kind} with seed {seed}");
            runs.push(run_learned(inputs, config, kind, seed));
        }
    }
    if config.include_mp_opt {
        for &seed in &config.seeds {
            runs.push(run_mp_opt(inputs, config, seed));
        }
    }
    let mp_trajectory = inputs.test.samples.first().and_then(|s| {
        let case = crate::dc::solve_case(inputs.grid, &s.tau, &s.inj).ok()?;
        let cfg = MpConfig {
            track_trajectory: true,
            ..config.mp
        };
        Some(match mp_opt_solve(&case.y, &case.p, case.bus_graph.slack_bus, &cfg) {
            Ok(sol) => sol.trajectory,
            Err(nc) => nc.solution.trajectory,
        })
    });
    BenchmarkOutcome {
        table: summarize(&inputs.grid.name, &runs),
        runs,
        mp_trajectory,
    }
}

/// Test MAE of one (model, size, seed) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub model: String,
    pub train_size: usize,
    pub seed: u64,
    pub test_mae: Option<f64>,
    pub error: Option<String>,
}

/// Retrain on the first `n` training samples for each requested size.
/// Runs already present in `reuse` (same model, seed and size) are not repeated.
pub fn train_size_sweep(
    inputs: &BenchmarkInputs,
    config: &BenchmarkConfig,
    sizes: &[usize],
    reuse: &[RunRecord],
) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for &kind in &config.models {
        for &size in sizes {
            for &seed in &config.seeds {
                let size = size.min(inputs.train.len());
                let prior = reuse
                    .iter()
                    .find(|r| r.model == kind.name() && r.seed == seed && r.train_size == size);
                let record = match prior {
                    Some(r) => r.clone(),
                    None => {
                        let subset = inputs.train.truncated(size);
                        let sub_inputs = BenchmarkInputs {
                            train: &subset,
                            ..*inputs
                        };
                        let quick = BenchmarkConfig {
                            timing_repeats: 1,
                            ..config.clone()
                        };
                        run_learned(&sub_inputs, &quick, kind, seed)
                    }
                };
                points.push(SweepPoint {
                    model: kind.to_string(),
                    train_size: size,
                    seed,
                    test_mae: record.test.as_ref().map(|e| e.metrics.mae),
                    error: record.error.clone(),
                });
            }
        }
    }
    points
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("model,train_size,seed,test_mae\n");
    for p in points {
        let mae = p.test_mae.map_or_else(|| "nan".to_string(), |v| format!("{v:e}"));
        let _ = writeln!(out, "{},{},{},{mae}", p.model, p.train_size, p.seed);
    }
    out
}
