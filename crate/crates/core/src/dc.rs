//! Exact DC power flow: nodal injections, direct solve and line flows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_topology, build_nodal_matrix, BusGraph, Element, Grid, NodalMatrix, TopologyVector};

/// Active-power injections in p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub p_prod: Vec<f64>,
    pub p_load: Vec<f64>,
}

impl Injection {
    pub fn zeros(grid: &Grid) -> Self {
        Injection {
            p_prod: vec![0.0; grid.generators.len()],
            p_load: vec![0.0; grid.loads.len()],
        }
    }

    pub fn check_dims(&self, grid: &Grid) -> Result<()> {
        if self.p_prod.len() != grid.generators.len() {
            return Err(Error::DimensionMismatch {
                what: "injection p_prod",
                expected: grid.generators.len(),
                got: self.p_prod.len(),
            });
        }
        if self.p_load.len() != grid.loads.len() {
            return Err(Error::DimensionMismatch {
                what: "injection p_load",
                expected: grid.loads.len(),
                got: self.p_load.len(),
            });
        }
        if self.p_prod.iter().chain(&self.p_load).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("injection contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn total_prod(&self) -> f64 {
        self.p_prod.iter().sum()
    }

    pub fn total_load(&self) -> f64 {
        self.p_load.iter().sum()
    }
}

/// Per-bus voltage angles in radians, slack pinned at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorSolution {
    pub theta: Vec<f64>,
}

/// Active power at both ends of every line, p.u.; zero on disconnected lines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LineFlows {
    pub p_or: Vec<f64>,
    pub p_ex: Vec<f64>,
}

/// Net injection per bus. The slack entry is overwritten so the vector sums to zero.
pub fn nodal_injections(bg: &BusGraph, grid: &Grid, inj: &Injection) -> Vec<f64> {
    let mut p = vec![0.0; bg.n_buses];
    for (e, bus) in bg.element_to_bus.iter().enumerate() {
        let Some(bus) = *bus else { continue };
        match grid.element(e) {
            Element::Gen(g) => p[bus] += inj.p_prod[g],
            Element::Load(d) => p[bus] -= inj.p_load[d],
            Element::LineOr(_) | Element::LineEx(_) => {}
        }
    }
    p[bg.slack_bus] = 0.0;
    let rest: f64 = p.iter().sum();
    p[bg.slack_bus] = -rest;
    p
}

/// Solve `Y θ = p` with `θ[slack] = 0` by Cholesky factorization of the reduced system.
pub fn solve_dc(y: &NodalMatrix, p: &[f64], slack: usize) -> Result<PhasorSolution> {
    let n = y.dim();
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            what: "injection vector",
            expected: n,
            got: p.len(),
        });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut theta = vec![0.0; n];
    if keep.is_empty() {
        return Ok(PhasorSolution { theta });
    }
    let m = keep.len();
    let mut reduced = DMatrix::zeros(m, m);
    let mut position = vec![usize::MAX; n];
    for (r, &i) in keep.iter().enumerate() {
        position[i] = r;
    }
    for (r, &i) in keep.iter().enumerate() {
        reduced[(r, r)] = y.diag()[i];
        for (j, v) in y.neighbors(i) {
            if j != slack {
                reduced[(r, position[j])] = v;
            }
        }
    }
    let rhs = DVector::from_iterator(m, keep.iter().map(|&i| p[i]));
    let chol = reduced.cholesky().ok_or(Error::SingularSystem { dim: m })?;
    let solution = chol.solve(&rhs);
    for (r, &i) in keep.iter().enumerate() {
        theta[i] = solution[r];
    }
    Ok(PhasorSolution { theta })
}

pub fn line_flows(theta: &[f64], bg: &BusGraph) -> LineFlows {
    let n = bg.n_lines();
    let mut flows = LineFlows {
        p_or: vec![0.0; n],
        p_ex: vec![0.0; n],
    };
    for (l, buses) in bg.line_buses.iter().enumerate() {
        if let Some((o, e)) = *buses {
            let b = bg.line_susceptance[l];
            flows.p_or[l] = b * (theta[o] - theta[e]);
            flows.p_ex[l] = b * (theta[e] - theta[o]);
        }
    }
    flows
}

/// Everything the exact solver produces for one `(τ, injection)` pair.
#[derive(Debug, Clone)]
pub struct DcCase {
    pub bus_graph: BusGraph,
    pub y: NodalMatrix,
    pub p: Vec<f64>,
    pub theta: Vec<f64>,
    pub flows: LineFlows,
}

impl DcCase {
    /// `(θ_or, θ_ex)` per line in `[or.. | ex..]` layout; zeros on disconnected lines.
    pub fn theta_line(&self) -> Vec<f64> {
        theta_line(&self.theta, &self.bus_graph)
    }
}

pub fn theta_line(theta: &[f64], bg: &BusGraph) -> Vec<f64> {
    let n = bg.n_lines();
    let mut out = vec![0.0; 2 * n];
    for (l, buses) in bg.line_buses.iter().enumerate() {
        if let Some((o, e)) = *buses {
            out[l] = theta[o];
            out[n + l] = theta[e];
        }
    }
    out
}

/// Topology, matrix assembly, balancing and exact solve in one call.
pub fn solve_case(grid: &Grid, tau: &TopologyVector, inj: &Injection) -> Result<DcCase> {
    inj.check_dims(grid)?;
    let bus_graph = apply_topology(grid, tau)?;
    let y = build_nodal_matrix(&bus_graph);
    let p = nodal_injections(&bus_graph, grid, inj);
    let theta = solve_dc(&y, &p, bus_graph.slack_bus)?.theta;
    let flows = line_flows(&theta, &bus_graph);
    Ok(DcCase {
        bus_graph,
        y,
        p,
        theta,
        flows,
    })
}
