//! Message-passing physics engine.
//!
//! Each bus receives messages `θ_j · y_ij` from its neighbours. Their sum
//! drives two operations: the local conservation residual
//! `E_i = p_i − Σ_{j ∈ {i} ∪ N(i)} y_ij θ_j` and the damped Jacobi update
//!
//! ```text
//! θ'_i = (1 − ω) θ_i + ω (p_i − Σ_{j ∈ N(i)} y_ij θ_j) / y_ii
//! ```
//!
//! with the slack angle pinned at zero. Stacking updates gives the flat-start
//! solver ([`mp_opt_solve`]) and the fixed-depth chain used to warm-start
//! from a learned initial guess ([`mp_forward`] / [`mp_adjoint`]).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::NodalMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpConfig {
    pub n_layers: usize,
    /// Damping ω in (0, 1]; 1 is the plain update.
    pub damping: f64,
    /// Convergence threshold on max |E_i| over non-slack buses, p.u.
    pub tol: f64,
    pub track_trajectory: bool,
}

impl Default for MpConfig {
    fn default() -> Self {
        MpConfig {
            n_layers: 5000,
            damping: 1.0,
            tol: 1e-6,
            track_trajectory: true,
        }
    }
}

impl MpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidConfig("message passing needs at least one layer".into()));
        }
        check_damping(self.damping)?;
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

fn check_damping(damping: f64) -> Result<()> {
    if damping > 0.0 && damping <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "damping must lie in (0, 1], got {damping}"
        )))
    }
}

/// Residual statistics per executed layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MpTrajectory {
    pub max_residual: Vec<f64>,
    pub mean_residual: Vec<f64>,
}

impl MpTrajectory {
    pub fn layers(&self) -> usize {
        self.max_residual.len()
    }

    fn push(&mut self, stats: ResidualStats) {
        self.max_residual.push(stats.max);
        self.mean_residual.push(stats.mean);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
}

/// `E = p − Y θ` for every bus, slack included.
pub fn lc_residual(theta: &[f64], p: &[f64], y: &NodalMatrix) -> Vec<f64> {
    let mut e = y.mul_vec(theta);
    for (ei, pi) in e.iter_mut().zip(p) {
        *ei = pi - *ei;
    }
    e
}

/// Max and mean of `|E_i|` over non-slack buses.
pub fn residual_stats(residual: &[f64], slack: usize) -> ResidualStats {
    let mut max = 0.0_f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, e) in residual.iter().enumerate() {
        if i != slack {
            max = max.max(e.abs());
            sum += e.abs();
            n += 1;
        }
    }
    ResidualStats {
        max,
        mean: if n == 0 { 0.0 } else { sum / n as f64 },
    }
}

/// One Jacobi step. Every bus reads the previous layer only.
pub fn phasor_update(theta: &[f64], p: &[f64], y: &NodalMatrix, damping: f64, slack: usize) -> Vec<f64> {
    let mut next = vec![0.0; theta.len()];
    phasor_update_into(theta, p, y, damping, slack, &mut next);
    next
}

fn phasor_update_into(theta: &[f64], p: &[f64], y: &NodalMatrix, damping: f64, slack: usize, next: &mut [f64]) {
    let diag = y.diag();
    for i in 0..theta.len() {
        if i == slack {
            next[i] = 0.0;
            continue;
        }
        let messages: f64 = y.neighbors(i).map(|(j, yij)| yij * theta[j]).sum();
        let target = (p[i] - messages) / diag[i];
        next[i] = if damping == 1.0 {
            target
        } else {
            (1.0 - damping) * theta[i] + damping * target
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpSolution {
    pub theta: Vec<f64>,
    pub trajectory: MpTrajectory,
    pub layers: usize,
    pub final_max_residual: f64,
}

/// Flat-start solve that exhausted its layer budget above tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct NotConverged {
    pub max_residual: f64,
    pub tol: f64,
    pub solution: Box<MpSolution>,
}

impl fmt::Display for NotConverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "message passing did not converge after {} layers: max residual {:.3e} > tol {:.3e}",
            self.solution.layers, self.max_residual, self.tol
        )
    }
}

impl std::error::Error for NotConverged {}

/// Iterate [`phasor_update`] from θ = 0 until the non-slack residual drops
/// below `config.tol` or `config.n_layers` layers have run.
pub fn mp_opt_solve(y: &NodalMatrix, p: &[f64], slack: usize, config: &MpConfig) -> Result<MpSolution, NotConverged> {
    let n = y.dim();
    let mut theta = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut trajectory = MpTrajectory::default();
    let mut last = f64::INFINITY;
    let mut layers = 0;
    for _ in 0..config.n_layers {
        phasor_update_into(&theta, p, y, config.damping, slack, &mut next);
        std::mem::swap(&mut theta, &mut next);
        layers += 1;
        let stats = residual_stats(&lc_residual(&theta, p, y), slack);
        last = stats.max;
        if config.track_trajectory {
            trajectory.push(stats);
        }
        if stats.max < config.tol {
            break;
        }
    }
    let solution = MpSolution {
        theta,
        trajectory,
        layers,
        final_max_residual: last,
    };
    if last < config.tol {
        Ok(solution)
    } else {
        Err(NotConverged {
            max_residual: last,
            tol: config.tol,
            solution: Box::new(solution),
        })
    }
}

/// Record of a fixed-depth chain: the layer map is affine in θ, so the
/// adjoint only needs the operator, not the intermediate states.
#[derive(Debug, Clone, Copy)]
pub struct MpTape<'a> {
    pub y: &'a NodalMatrix,
    pub slack: usize,
    pub damping: f64,
    pub n_layers: usize,
}

/// Unrolled chain of `n_layers` updates from an arbitrary start.
///
/// The slack entry of `theta0` is pinned to zero before the first layer,
/// so it never influences the output.
pub fn mp_forward<'a>(
    theta0: &[f64],
    p: &[f64],
    y: &'a NodalMatrix,
    damping: f64,
    n_layers: usize,
    slack: usize,
) -> (Vec<f64>, MpTape<'a>) {
    let (theta, _) = mp_forward_traced(theta0, p, y, damping, n_layers, slack, false);
    (
        theta,
        MpTape {
            y,
            slack,
            damping,
            n_layers,
        },
    )
}

/// Like [`mp_forward`], optionally recording residual statistics after each layer.
pub fn mp_forward_traced(
    theta0: &[f64],
    p: &[f64],
    y: &NodalMatrix,
    damping: f64,
    n_layers: usize,
    slack: usize,
    trace: bool,
) -> (Vec<f64>, MpTrajectory) {
    let mut theta = theta0.to_vec();
    theta[slack] = 0.0;
    let mut next = vec![0.0; theta.len()];
    let mut trajectory = MpTrajectory::default();
    for _ in 0..n_layers {
        phasor_update_into(&theta, p, y, damping, slack, &mut next);
        std::mem::swap(&mut theta, &mut next);
        if trace {
            trajectory.push(residual_stats(&lc_residual(&theta, p, y), slack));
        }
    }
    (theta, trajectory)
}

/// Pull a gradient with respect to the chain output back to its input.
///
/// Per layer the linear part is `A = (1 − ω) I − ω D⁻¹ R` on non-slack rows
/// and zero on the slack row; the adjoint applies `Aᵀ` in reverse order and
/// finally drops the slack component (pinned before the first layer).
pub fn mp_adjoint(grad_out: &[f64], tape: &MpTape<'_>) -> Vec<f64> {
    let mut g = grad_out.to_vec();
    for _ in 0..tape.n_layers {
        g = mp_adjoint_step(&g, tape.y, tape.damping, tape.slack);
    }
    g[tape.slack] = 0.0;
    g
}

/// `Aᵀ g` for a single layer, the building block of [`mp_adjoint`].
pub fn mp_adjoint_step(g: &[f64], y: &NodalMatrix, damping: f64, slack: usize) -> Vec<f64> {
    let diag = y.diag();
    let scaled: Vec<f64> = (0..g.len())
        .map(|i| if i == slack { 0.0 } else { damping * g[i] / diag[i] })
        .collect();
    (0..g.len())
        .map(|j| {
            let from_rows: f64 = y.neighbors(j).map(|(i, yji)| yji * scaled[i]).sum();
            let own = if j == slack { 0.0 } else { (1.0 - damping) * g[j] };
            own - from_rows
        })
        .collect()
}
