//! Evaluation: accuracy, physics compliance, out-of-distribution behaviour,
//! inference speed and convergence curves.

mod curves;
mod metrics;
mod physics;
mod table;
mod timing;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Grid;
use crate::scenario::Sample;

pub use curves::{export_curves, loss_curves_csv, trajectory_csv, warm_start_csv, warm_vs_flat, WarmStartComparison};
pub use metrics::{mae, mape90, metric_report, MetricReport, VariableMetrics};
pub use physics::{physics_report, residual_from_flows, PhysicsReport, PhysicsThresholds};
pub use table::{
    run_benchmark, run_learned, summarize, sweep_csv, train_size_sweep, BenchmarkConfig, BenchmarkInputs,
    BenchmarkOutcome, BenchmarkRow, BenchmarkTable, RunRecord, SplitStats, Stat, SweepPoint,
};
pub use timing::{speedup, DcSolver, MpOpt, PhasorModel, SpeedupReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: String,
    pub n_samples: usize,
    pub metrics: MetricReport,
    pub physics: PhysicsReport,
}

/// Accuracy and physics reports of `model` on `samples`.
pub fn evaluate(
    model: &dyn PhasorModel,
    grid: &Grid,
    samples: &[Sample],
    thresholds: &PhysicsThresholds,
) -> Result<Evaluation> {
    let predictions = model.predict_samples(grid, samples)?;
    Ok(Evaluation {
        model: model.name(),
        n_samples: samples.len(),
        metrics: metric_report(&predictions, samples, grid)?,
        physics: physics_report(&predictions, samples, grid, thresholds)?,
    })
}
