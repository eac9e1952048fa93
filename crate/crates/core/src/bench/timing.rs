use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dc::{line_flows, nodal_injections, solve_case, theta_line, Injection};
use crate::error::Result;
use crate::grid::{apply_topology, build_nodal_matrix, Grid, TopologyVector};
use crate::mp::{mp_opt_solve, MpConfig};
use crate::nn::{Prediction, SurrogateModel};
use crate::scenario::Sample;

/// Anything that maps a batch of inputs to phasor predictions.
pub trait PhasorModel {
    fn name(&self) -> String;
    fn predict_batch(&self, grid: &Grid, inputs: &[(&TopologyVector, &Injection)]) -> Result<Vec<Prediction>>;

    fn predict_samples(&self, grid: &Grid, samples: &[Sample]) -> Result<Vec<Prediction>> {
        let inputs: Vec<_> = samples.iter().map(|s| (&s.tau, &s.inj)).collect();
        self.predict_batch(grid, &inputs)
    }
}

impl PhasorModel for SurrogateModel {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn predict_batch(&self, grid: &Grid, inputs: &[(&TopologyVector, &Injection)]) -> Result<Vec<Prediction>> {
        SurrogateModel::predict_batch(self, grid, inputs)
    }
}

/// The exact solver, wrapped as a predictor.
#[derive(Debug, Clone, Copy, Default)]
pub struct DcSolver;

impl PhasorModel for DcSolver {
    fn name(&self) -> String {
        "dc".into()
    }

    fn predict_batch(&self, grid: &Grid, inputs: &[(&TopologyVector, &Injection)]) -> Result<Vec<Prediction>> {
        inputs
            .iter()
            .map(|(tau, inj)| {
                let case = solve_case(grid, tau, inj)?;
                Ok(Prediction {
                    theta_line: case.theta_line(),
                    flows: case.flows,
                    theta_bus: Some(case.theta),
                })
            })
            .collect()
    }
}

/// Flat-start message passing. Inputs that exhaust the layer budget keep
/// their last iterate.
#[derive(Debug, Clone, Copy, Default)]
pub struct MpOpt {
    pub config: MpConfig,
}

impl PhasorModel for MpOpt {
    fn name(&self) -> String {
        "mp-opt".into()
    }

    fn predict_batch(&self, grid: &Grid, inputs: &[(&TopologyVector, &Injection)]) -> Result<Vec<Prediction>> {
        let config = MpConfig {
            track_trajectory: false,
            ..self.config
        };
        let mut unconverged = 0;
        let out = inputs
            .iter()
            .map(|(tau, inj)| {
                let bg = apply_topology(grid, tau)?;
                let y = build_nodal_matrix(&bg);
                let p = nodal_injections(&bg, grid, inj);
                let theta = match mp_opt_solve(&y, &p, bg.slack_bus, &config) {
                    Ok(sol) => sol.theta,
                    Err(nc) => {
                        unconverged += 1;
                        nc.solution.theta
                    }
                };
                Ok(Prediction {
                    theta_line: theta_line(&theta, &bg),
                    flows: line_flows(&theta, &bg),
                    theta_bus: Some(theta),
                })
            })
            .collect();
        if unconverged > 0 {
            log::warn!(
                "message passing hit its {}-layer budget on {unconverged}/{} inputs",
                config.n_layers,
                inputs.len()
            );
        }
        out
    }
}

/// Solver-over-model wall-time ratio with the raw measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub ratio: f64,
    /// `(solver seconds, model seconds)` per repeat.
    pub pairs: Vec<(f64, f64)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over `repeats` of the per-repeat ratio between the exact solver,
/// run sample by sample, and one batched model call. One untimed warm-up
/// pass of each precedes the measurements.
pub fn speedup(model: &dyn PhasorModel, grid: &Grid, samples: &[Sample], repeats: usize) -> Result<SpeedupReport> {
    let inputs: Vec<_> = samples.iter().map(|s| (&s.tau, &s.inj)).collect();
    let solver = DcSolver;
    let time_solver = || -> Result<f64> {
        let start = Instant::now();
        for input in &inputs {
            std::hint::black_box(solver.predict_batch(grid, std::slice::from_ref(input))?);
        }
        Ok(start.elapsed().as_secs_f64())
    };
    let time_model = || -> Result<f64> {
        let start = Instant::now();
        std::hint::black_box(model.predict_batch(grid, &inputs)?);
        Ok(start.elapsed().as_secs_f64())
    };
    time_solver()?;
    time_model()?;
    let mut pairs = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        pairs.push((time_solver()?, time_model()?));
    }
    let ratio = median(pairs.iter().map(|(s, m)| s / m).collect());
    Ok(SpeedupReport { ratio, pairs })
}
