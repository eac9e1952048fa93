//! End-to-end commands behind the CLI.
//!
//! A run directory holds `config.json`, `data/<split>/`,
//! `checkpoints/<model>/seed-<n>/`, `eval/` and `benchmark/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{
    evaluate, export_curves, run_benchmark, sweep_csv, train_size_sweep, BenchmarkInputs, BenchmarkTable, Evaluation,
    MpOpt, PhasorModel,
};
use crate::config::RunConfig;
use crate::dc::{solve_case, Injection, LineFlows};
use crate::error::{Error, Result};
use crate::grid::{Grid, TopologyVector};
use crate::mp::{lc_residual, mp_opt_solve, residual_stats, MpConfig};
use crate::nn::{train, ModelKind, TrainConfig, TrainReport};
use crate::scenario::{generate_dataset, nominal_injection, Dataset, Split};
use crate::store::{load_checkpoint, load_dataset, save_checkpoint, save_dataset, split_dir};

pub fn data_root(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn checkpoint_dir(out: &Path, kind: ModelKind, seed: u64) -> PathBuf {
    out.join("checkpoints").join(kind.name()).join(format!("seed-{seed}"))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write(path, text + "\n")
}

/// Store the resolved config next to the outputs it produced.
pub fn persist_config(dir: &Path, config: &RunConfig) -> Result<()> {
    write(&dir.join("config.json"), config.to_json())
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedSplit {
    pub split: Split,
    pub path: PathBuf,
    pub n_samples: usize,
}

pub fn cmd_generate(config: &RunConfig, out: &Path) -> Result<Vec<GeneratedSplit>> {
    let grid = config.grid()?;
    persist_config(out, config)?;
    let root = data_root(out);
    Split::ALL
        .iter()
        .map(|&split| {
            let ds = generate_dataset(&grid, split, &config.scenario(split))?;
            let path = split_dir(&root, split);
            save_dataset(&path, &grid, &ds)?;
            log::info!("wrote {} {} samples to {}", ds.len(), split.name(), path.display());
            Ok(GeneratedSplit {
                split,
                path,
                n_samples: ds.len(),
            })
        })
        .collect()
}

pub fn load_split(out: &Path, grid: &Grid, split: Split) -> Result<Dataset> {
    let dir = split_dir(&data_root(out), split);
    if !dir.is_dir() {
        return Err(Error::malformed(
            &dir,
            format!("dataset for split `{}` not found; run `generate` first", split.name()),
        ));
    }
    load_dataset(&dir, grid)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainedRun {
    pub kind: ModelKind,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub best_val_loss: f64,
    pub epochs: usize,
}

pub fn cmd_train(config: &RunConfig, out: &Path, kind: ModelKind, seeds: &[u64]) -> Result<Vec<TrainedRun>> {
    let grid = config.grid()?;
    let train_ds = load_split(out, &grid, Split::Train)?;
    let val_ds = load_split(out, &grid, Split::Val)?;
    let base = config
        .train
        .get(&kind)
        .cloned()
        .unwrap_or_else(|| TrainConfig::for_kind(kind));
    let mut runs = Vec::new();
    for &seed in seeds {
        let tc = TrainConfig { seed, ..base.clone() };
        log::info!("training {kind} with seed {seed}");
        let (model, report) = train(&grid, &train_ds, &val_ds, &tc)?;
        let dir = checkpoint_dir(out, kind, seed);
        save_checkpoint(&dir, &grid, &model, Some(&tc))?;
        write_json(&dir.join("report.json"), &report)?;
        write(
            &dir.join("loss_curves.csv"),
            crate::bench::loss_curves_csv(&[(format!("{kind}-{seed}"), &report)]),
        )?;
        persist_config(&dir, config)?;
        runs.push(TrainedRun {
            kind,
            seed,
            checkpoint: dir,
            best_val_loss: report.best_val_loss,
            epochs: report.epochs_run(),
        });
    }
    Ok(runs)
}

/// Which predictor to evaluate.
#[derive(Debug, Clone)]
pub enum ModelSource {
    Checkpoint(PathBuf),
    MpOpt,
    Dc,
}

impl ModelSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "mp-opt" | "mpopt" | "mp_opt" => ModelSource::MpOpt,
            "dc" => ModelSource::Dc,
            path => ModelSource::Checkpoint(PathBuf::from(path)),
        }
    }
}

pub fn load_model(source: &ModelSource, grid: &Grid, mp: MpConfig) -> Result<Box<dyn PhasorModel>> {
    Ok(match source {
        ModelSource::MpOpt => Box::new(MpOpt { config: mp }),
        ModelSource::Dc => Box::new(crate::bench::DcSolver),
        ModelSource::Checkpoint(dir) => {
            let (model, manifest) = load_checkpoint(dir)?;
            if manifest.grid != grid.name {
                return Err(Error::malformed(
                    dir.join(crate::store::MANIFEST),
                    format!(
                        "checkpoint was trained on grid `{}`, not `{}`",
                        manifest.grid, grid.name
                    ),
                ));
            }
            model.check_grid(grid)?;
            Box::new(model)
        }
    })
}

pub fn cmd_evaluate(config: &RunConfig, out: &Path, source: &ModelSource, split: Split) -> Result<Evaluation> {
    let grid = config.grid()?;
    let ds = load_split(out, &grid, split)?;
    let model = load_model(source, &grid, config.mp)?;
    let eval = evaluate(model.as_ref(), &grid, &ds.samples, &config.bench.thresholds)?;
    let dir = out.join("eval").join(format!("{}-{}", model.name(), split.name()));
    write_json(&dir.join("accuracy.json"), &eval.metrics)?;
    write_json(&dir.join("physics.json"), &eval.physics)?;
    persist_config(&dir, config)?;
    Ok(eval)
}

pub fn cmd_benchmark(config: &RunConfig, out: &Path, train_sizes: &[usize]) -> Result<BenchmarkTable> {
    let grid = config.grid()?;
    let [train_ds, val, test, ood] = Split::ALL.map(|s| load_split(out, &grid, s));
    let (train_ds, val, test, ood) = (train_ds?, val?, test?, ood?);
    let inputs = BenchmarkInputs {
        grid: &grid,
        train: &train_ds,
        val: &val,
        test: &test,
        ood: &ood,
    };
    let bench = config.benchmark();
    let outcome = run_benchmark(&inputs, &bench);
    let dir = out.join("benchmark");
    persist_config(&dir, config)?;
    write_json(&dir.join("benchmark.json"), &outcome.table)?;
    write_json(&dir.join("runs.json"), &outcome.runs)?;
    write(&dir.join("benchmark.md"), outcome.table.to_markdown())?;

    let reports: Vec<(String, &TrainReport)> = outcome
        .runs
        .iter()
        .filter_map(|r| r.report.as_ref().map(|rep| (format!("{}-{}", r.model, r.seed), rep)))
        .collect();
    let trajectories: Vec<_> = outcome
        .mp_trajectory
        .iter()
        .map(|t| ("mp-opt".to_string(), t))
        .collect();
    let warm: Vec<_> = outcome
        .runs
        .iter()
        .filter_map(|r| r.warm_start.as_ref().map(|w| (format!("{}-{}", r.model, r.seed), w)))
        .collect();
    export_curves(&dir.join("curves"), &reports, &trajectories, &warm)?;

    if !train_sizes.is_empty() {
        let sweep_cfg = crate::bench::BenchmarkConfig {
            models: vec![ModelKind::Mlp, ModelKind::MlpReg, ModelKind::Pimp],
            ..bench
        };
        let points = train_size_sweep(&inputs, &sweep_cfg, train_sizes, &outcome.runs);
        write(&dir.join("train_size_sweep.csv"), sweep_csv(&points))?;
    }
    Ok(outcome.table)
}

/// Re-render the markdown table of an existing benchmark.
pub fn cmd_report(out: &Path) -> Result<String> {
    let path = out.join("benchmark").join("benchmark.json");
    let table: BenchmarkTable = crate::store::read_json(&path)?;
    let md = table.to_markdown();
    write(&out.join("benchmark").join("benchmark.md"), &md)?;
    Ok(md)
}

/// Which single operating point `solve` examines.
#[derive(Debug, Clone, Default)]
pub struct SolveSpec {
    /// Lines taken out of service.
    pub disconnect: Vec<usize>,
    /// Uniform scaling of nominal loads (and dispatch).
    pub load_scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOutput {
    pub grid: String,
    pub n_buses: usize,
    pub slack_bus: usize,
    pub theta_dc: Vec<f64>,
    pub theta_mp: Vec<f64>,
    pub max_abs_diff: f64,
    pub mp_layers: usize,
    pub mp_converged: bool,
    pub mp_max_residual: f64,
    pub dc_max_residual: f64,
    pub flows: LineFlows,
}

pub fn cmd_solve(grid: &Grid, spec: &SolveSpec, mp: &MpConfig) -> Result<SolveOutput> {
    let mut tau = TopologyVector::reference(grid);
    for &l in &spec.disconnect {
        if l >= grid.n_lines() {
            return Err(Error::InvalidConfig(format!(
                "line {l} does not exist ({} lines)",
                grid.n_lines()
            )));
        }
        tau.line_status[l] = false;
    }
    let inj: Injection = match spec.load_scale {
        Some(s) => crate::scenario::dispatch(grid, grid.loads.iter().map(|l| l.p_nominal * s).collect()),
        None => nominal_injection(grid),
    };
    let case = solve_case(grid, &tau, &inj)?;
    let slack = case.bus_graph.slack_bus;
    let (theta_mp, layers, converged, residual) = match mp_opt_solve(&case.y, &case.p, slack, mp) {
        Ok(sol) => (sol.theta, sol.layers, true, sol.final_max_residual),
        Err(nc) => {
            log::warn!("{nc}");
            (nc.solution.theta, nc.solution.layers, false, nc.max_residual)
        }
    };
    let max_abs_diff = case
        .theta
        .iter()
        .zip(&theta_mp)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let dc_max_residual = residual_stats(&lc_residual(&case.theta, &case.p, &case.y), slack).max;
    Ok(SolveOutput {
        grid: grid.name.clone(),
        n_buses: case.bus_graph.n_buses,
        slack_bus: slack,
        theta_dc: case.theta.clone(),
        theta_mp,
        max_abs_diff,
        mp_layers: layers,
        mp_converged: converged,
        mp_max_residual: residual,
        dc_max_residual,
        flows: case.flows,
    })
}
