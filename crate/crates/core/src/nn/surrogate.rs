use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dc::{line_flows, nodal_injections, theta_line, Injection, LineFlows};
use crate::error::{Error, Result};
use crate::grid::{apply_topology, build_nodal_matrix, encode_features, feature_len, Grid, TopologyVector};
use crate::mp::mp_forward;

use super::{MlpParams, ModelKind, PhysicsOptions};

/// Per-feature standardization fitted on the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    /// Fit on the columns of `x`; constant features get unit scale.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.ncols().max(1) as f64;
        let mut mean = Vec::with_capacity(x.nrows());
        let mut std = Vec::with_capacity(x.nrows());
        for row in x.row_iter() {
            let m = row.sum() / n;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 });
        }
        FeatureScaler { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        FeatureScaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &mut DMatrix<f64>) {
        for mut col in x.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = (*v - self.mean[i]) / self.std[i];
            }
        }
    }
}

/// Stack encoded inputs as columns.
pub fn encode_batch<'a>(
    grid: &Grid,
    inputs: impl ExactSizeIterator<Item = (&'a TopologyVector, &'a Injection)>,
) -> Result<DMatrix<f64>> {
    let rows = feature_len(grid);
    let n = inputs.len();
    let mut x = DMatrix::zeros(rows, n);
    for (j, (tau, inj)) in inputs.enumerate() {
        let f = encode_features(grid, tau, inj)?;
        x.column_mut(j).copy_from_slice(&f);
    }
    Ok(x)
}

/// Phasor estimate for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Energized-bus angles; `None` for models that only predict line extremities.
    pub theta_bus: Option<Vec<f64>>,
    /// `[θ_or | θ_ex]` per line.
    pub theta_line: Vec<f64>,
    pub flows: LineFlows,
}

/// A trained network together with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub kind: ModelKind,
    pub params: MlpParams,
    pub scaler: FeatureScaler,
    pub physics: PhysicsOptions,
}

impl SurrogateModel {
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        let fin = feature_len(grid);
        if self.params.input_dim() != fin || self.scaler.dim() != fin {
            return Err(Error::DimensionMismatch {
                what: "model input (grid encoding)",
                expected: fin,
                got: self.params.input_dim(),
            });
        }
        let out = self.kind.output_dim(grid);
        if self.params.output_dim() != out {
            return Err(Error::DimensionMismatch {
                what: "model output",
                expected: out,
                got: self.params.output_dim(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, grid: &Grid, tau: &TopologyVector, inj: &Injection) -> Result<Prediction> {
        Ok(self.predict_batch(grid, &[(tau, inj)])?.remove(0))
    }

    /// Batched prediction; identical to calling [`SurrogateModel::predict`] per input.
    pub fn predict_batch(&self, grid: &Grid, inputs: &[(&TopologyVector, &Injection)]) -> Result<Vec<Prediction>> {
        self.check_grid(grid)?;
        let mut x = encode_batch(grid, inputs.iter().copied())?;
        self.scaler.transform(&mut x);
        let out = self.params.forward_batch(&x)?;
        inputs
            .iter()
            .enumerate()
            .map(|(j, (tau, inj))| self.finish(grid, tau, inj, out.column(j).as_slice()))
            .collect()
    }

    fn finish(&self, grid: &Grid, tau: &TopologyVector, inj: &Injection, out: &[f64]) -> Result<Prediction> {
        match self.kind {
            ModelKind::Mlp => {
                let l = grid.n_lines();
                let p_or: Vec<f64> = grid
                    .lines
                    .iter()
                    .enumerate()
                    .map(|(k, line)| line.susceptance() * (out[k] - out[l + k]))
                    .collect();
                let p_ex = p_or.iter().map(|v| -v).collect();
                Ok(Prediction {
                    theta_bus: None,
                    theta_line: out.to_vec(),
                    flows: LineFlows { p_or, p_ex },
                })
            }
            ModelKind::MlpReg | ModelKind::Pimp => {
                let bg = apply_topology(grid, tau)?;
                let mut theta = bg.from_slots(out);
                theta[bg.slack_bus] = 0.0;
                if self.kind == ModelKind::Pimp && self.physics.pimp_layers > 0 {
                    let y = build_nodal_matrix(&bg);
                    let p = nodal_injections(&bg, grid, inj);
                    theta = mp_forward(
                        &theta,
                        &p,
                        &y,
                        self.physics.damping,
                        self.physics.pimp_layers,
                        bg.slack_bus,
                    )
                    .0;
                }
                Ok(Prediction {
                    theta_line: theta_line(&theta, &bg),
                    flows: line_flows(&theta, &bg),
                    theta_bus: Some(theta),
                })
            }
        }
    }
}
