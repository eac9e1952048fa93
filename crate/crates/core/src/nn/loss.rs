//! Model-kind losses and their exact gradients with respect to network outputs.

use nalgebra::DMatrix;

use crate::dc::nodal_injections;
use crate::error::{Error, Result};
use crate::grid::{apply_topology, build_nodal_matrix, Grid, NodalMatrix};
use crate::mp::{lc_residual, mp_adjoint_step, phasor_update};
use crate::scenario::Sample;

use super::{MlpParams, ModelKind};

/// Physics settings shared by the loss and the predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsOptions {
    pub lambda: f64,
    pub pimp_layers: usize,
    pub damping: f64,
    /// Average the residual penalty over every layer of the chain instead of
    /// applying it to the final layer only.
    pub intermediate_physics: bool,
}

impl Default for PhysicsOptions {
    fn default() -> Self {
        PhysicsOptions {
            lambda: 1.0,
            pimp_layers: 50,
            damping: 1.0,
            intermediate_physics: false,
        }
    }
}

/// Per-sample data the bus-level losses need.
#[derive(Debug, Clone)]
pub struct SampleAux {
    pub y: NodalMatrix,
    pub p: Vec<f64>,
    /// Output slot feeding each energized bus.
    pub bus_slot: Vec<usize>,
    pub slack: usize,
    pub target_bus: Vec<f64>,
    pub target_line: Vec<f64>,
}

impl SampleAux {
    pub fn new(grid: &Grid, sample: &Sample) -> Result<Self> {
        let bg = apply_topology(grid, &sample.tau)?;
        let y = build_nodal_matrix(&bg);
        let p = nodal_injections(&bg, grid, &sample.inj);
        let target_bus = bg.from_slots(&sample.theta_bus);
        Ok(SampleAux {
            y,
            p,
            bus_slot: bg.bus_slot.clone(),
            slack: bg.slack_bus,
            target_bus,
            target_line: sample.theta_line.clone(),
        })
    }

    pub fn n_buses(&self) -> usize {
        self.bus_slot.len()
    }

    /// Gather bus angles from a slot-layout output, slack pinned to zero.
    pub fn gather(&self, slots: &[f64]) -> Vec<f64> {
        let mut theta: Vec<f64> = self.bus_slot.iter().map(|&s| slots[s]).collect();
        theta[self.slack] = 0.0;
        theta
    }
}

/// Loss of one sample split into its two parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub data: f64,
    pub physics: f64,
}

impl LossParts {
    pub fn total(&self, lambda: f64) -> f64 {
        self.data + lambda * self.physics
    }
}

/// Mean of `E_i²` over non-slack buses.
fn physics_term(e: &[f64], slack: usize) -> f64 {
    let n = e.len().saturating_sub(1);
    if n == 0 {
        return 0.0;
    }
    e.iter()
        .enumerate()
        .filter(|&(i, _)| i != slack)
        .map(|(_, v)| v * v)
        .sum::<f64>()
        / n as f64
}

/// Adds `scale · ∂physics/∂θ` to `g`. With `E = p − Yθ` and `Y` symmetric the
/// derivative is `−2/n · Y E'` where `E'` has its slack entry zeroed.
fn add_physics_grad(g: &mut [f64], e: &[f64], aux: &SampleAux, scale: f64) {
    let n = e.len().saturating_sub(1);
    if n == 0 || scale == 0.0 {
        return;
    }
    let mut masked = e.to_vec();
    masked[aux.slack] = 0.0;
    let ye = aux.y.mul_vec(&masked);
    let c = -2.0 * scale / n as f64;
    for (gi, v) in g.iter_mut().zip(ye) {
        *gi += c * v;
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64
}

/// Loss parts of one network output and, optionally, `∂loss/∂output`.
pub fn sample_loss(
    kind: ModelKind,
    output: &[f64],
    aux: &SampleAux,
    opts: &PhysicsOptions,
    want_grad: bool,
) -> (LossParts, Option<Vec<f64>>) {
    match kind {
        ModelKind::Mlp => {
            let data = mse(output, &aux.target_line);
            let grad = want_grad.then(|| {
                let c = 2.0 / output.len() as f64;
                output.iter().zip(&aux.target_line).map(|(o, t)| c * (o - t)).collect()
            });
            (LossParts { data, physics: 0.0 }, grad)
        }
        ModelKind::MlpReg => bus_loss(output, aux, opts, 0, want_grad),
        ModelKind::Pimp => bus_loss(output, aux, opts, opts.pimp_layers, want_grad),
    }
}

fn bus_loss(
    output: &[f64],
    aux: &SampleAux,
    opts: &PhysicsOptions,
    layers: usize,
    want_grad: bool,
) -> (LossParts, Option<Vec<f64>>) {
    let intermediate = opts.intermediate_physics && layers > 0;
    let mut states = Vec::with_capacity(if intermediate { layers + 1 } else { 1 });
    let mut theta = aux.gather(output);
    let mut physics = 0.0;
    for _ in 0..layers {
        let next = phasor_update(&theta, &aux.p, &aux.y, opts.damping, aux.slack);
        if intermediate {
            states.push(std::mem::replace(&mut theta, next));
            physics += physics_term(&lc_residual(&theta, &aux.p, &aux.y), aux.slack);
        } else {
            theta = next;
        }
    }
    let e_final = lc_residual(&theta, &aux.p, &aux.y);
    if intermediate {
        physics /= layers as f64;
    } else {
        physics = physics_term(&e_final, aux.slack);
    }
    let data = mse(&theta, &aux.target_bus);
    let parts = LossParts { data, physics };
    if !want_grad {
        return (parts, None);
    }

    let nb = theta.len() as f64;
    let mut g: Vec<f64> = theta
        .iter()
        .zip(&aux.target_bus)
        .map(|(a, t)| 2.0 * (a - t) / nb)
        .collect();
    if intermediate {
        let w = opts.lambda / layers as f64;
        add_physics_grad(&mut g, &e_final, aux, w);
        for k in (0..layers).rev() {
            g = mp_adjoint_step(&g, &aux.y, opts.damping, aux.slack);
            if k > 0 {
                let e = lc_residual(&states[k], &aux.p, &aux.y);
                add_physics_grad(&mut g, &e, aux, w);
            }
        }
    } else {
        add_physics_grad(&mut g, &e_final, aux, opts.lambda);
        for _ in 0..layers {
            g = mp_adjoint_step(&g, &aux.y, opts.damping, aux.slack);
        }
    }
    g[aux.slack] = 0.0;

    let mut grad = vec![0.0; output.len()];
    for (b, &slot) in aux.bus_slot.iter().enumerate() {
        grad[slot] = g[b];
    }
    (parts, Some(grad))
}

/// Batch gradient: mean of the per-sample losses over the batch.
#[derive(Debug, Clone)]
pub struct GradResult {
    pub grads: MlpParams,
    pub loss: f64,
    pub data: f64,
    pub physics: f64,
}

/// Exact gradient of the mean model-kind loss over a batch.
///
/// `x` holds one (already normalized) input per column; `aux[j]` belongs to column `j`.
pub fn grad(
    params: &MlpParams,
    x: DMatrix<f64>,
    aux: &[&SampleAux],
    kind: ModelKind,
    opts: &PhysicsOptions,
) -> Result<GradResult> {
    let n = x.ncols();
    if n == 0 {
        return Err(Error::EmptySelection("gradient batch"));
    }
    if aux.len() != n {
        return Err(Error::DimensionMismatch {
            what: "auxiliary batch",
            expected: n,
            got: aux.len(),
        });
    }
    let cache = params.forward_cached(x)?;
    let out = cache.prediction();
    let mut grad_out = DMatrix::zeros(out.nrows(), n);
    let mut data = 0.0;
    let mut physics = 0.0;
    let scale = 1.0 / n as f64;
    for j in 0..n {
        let col = out.column(j);
        let (parts, g) = sample_loss(kind, col.as_slice(), aux[j], opts, true);
        data += parts.data;
        physics += parts.physics;
        let g = g.expect("gradient requested");
        for (i, v) in g.into_iter().enumerate() {
            grad_out[(i, j)] = v * scale;
        }
    }
    let grads = params.backward(&cache, grad_out);
    let data = data * scale;
    let physics = physics * scale;
    let lambda = if kind == ModelKind::Mlp { 0.0 } else { opts.lambda };
    Ok(GradResult {
        grads,
        loss: data + lambda * physics,
        data,
        physics,
    })
}
