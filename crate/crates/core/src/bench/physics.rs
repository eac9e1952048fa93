use serde::{Deserialize, Serialize};

use crate::dc::{nodal_injections, LineFlows};
use crate::error::{Error, Result};
use crate::grid::{apply_topology, BusGraph, Grid};
use crate::nn::Prediction;
use crate::scenario::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsThresholds {
    /// Numeric-zero guard for negative losses (P1).
    pub tau_loss: f64,
    /// Numeric-zero guard for flows on open lines (P2).
    pub tau_null: f64,
    /// Admissible loss ratio (P3).
    pub loss_range: [f64; 2],
    /// Samples whose `|Prod − Load|` falls below this are left out of P4.
    pub balance_floor: f64,
    /// Local conservation violation threshold (P5), p.u.
    pub tau_lc: f64,
}

impl Default for PhysicsThresholds {
    fn default() -> Self {
        PhysicsThresholds {
            tau_loss: 1e-6,
            tau_null: 1e-6,
            loss_range: [0.005, 0.04],
            balance_floor: 1e-9,
            tau_lc: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsReport {
    /// Share of connected lines with negative losses.
    pub p1: f64,
    /// Share of disconnected lines carrying flow.
    pub p2: f64,
    /// Share of samples whose loss ratio lies inside `loss_range`.
    pub p3: f64,
    /// Lossless DC flows can never satisfy the loss-range check.
    pub p3_applicable: bool,
    /// MAPE of the global balance residual against `|Prod − Load|`.
    pub p4: Option<f64>,
    pub p4_excluded: usize,
    /// Mean `|(Prod − Load) − Σ losses|` over all samples, p.u.
    pub p4_abs: f64,
    /// Share of (sample, non-slack bus) pairs with `|E_i| > tau_lc`.
    pub p5: f64,
    /// Mean `|E_i| / |p_i|` over non-slack buses with non-zero injection.
    pub p5_mape: Option<f64>,
    pub p5_mean_abs: f64,
    pub thresholds: PhysicsThresholds,
}

/// `E_i = p_i − Σ (flows leaving bus i)` from predicted line flows.
pub fn residual_from_flows(bg: &BusGraph, p: &[f64], flows: &LineFlows) -> Vec<f64> {
    let mut e = p.to_vec();
    for (k, ends) in bg.line_buses.iter().enumerate() {
        if let Some((a, b)) = *ends {
            e[a] -= flows.p_or[k];
            e[b] -= flows.p_ex[k];
        }
    }
    e
}

#[derive(Default)]
struct Ratio {
    hit: usize,
    total: usize,
}

impl Ratio {
    fn add(&mut self, hit: bool) {
        self.hit += hit as usize;
        self.total += 1;
    }

    fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hit as f64 / self.total as f64
        }
    }
}

pub fn physics_report(
    predictions: &[Prediction],
    samples: &[Sample],
    grid: &Grid,
    thresholds: &PhysicsThresholds,
) -> Result<PhysicsReport> {
    if predictions.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions",
            expected: samples.len(),
            got: predictions.len(),
        });
    }
    let (mut p1, mut p2, mut p3, mut p5) = (Ratio::default(), Ratio::default(), Ratio::default(), Ratio::default());
    let (mut p4_sum, mut p4_n, mut p4_excluded, mut p4_abs) = (0.0, 0usize, 0usize, 0.0);
    let (mut p5_rel, mut p5_rel_n, mut p5_abs) = (0.0, 0usize, 0.0);
    let l = grid.n_lines();

    for (pred, s) in predictions.iter().zip(samples) {
        let flows = &pred.flows;
        let mut losses = 0.0;
        for k in 0..l {
            let loss = flows.p_or[k] + flows.p_ex[k];
            if s.tau.line_status[k] {
                p1.add(loss < -thresholds.tau_loss);
                losses += loss;
            } else {
                p2.add(flows.p_or[k].abs() + flows.p_ex[k].abs() > thresholds.tau_null);
            }
        }

        let gen = s.inj.total_prod();
        let ratio = if gen != 0.0 { losses / gen } else { f64::NAN };
        p3.add(ratio >= thresholds.loss_range[0] && ratio <= thresholds.loss_range[1]);

        let imbalance = gen - s.inj.total_load();
        let gap = (imbalance - losses).abs();
        p4_abs += gap;
        if imbalance.abs() < thresholds.balance_floor {
            p4_excluded += 1;
        } else {
            p4_sum += gap / imbalance.abs();
            p4_n += 1;
        }

        let bg = apply_topology(grid, &s.tau)?;
        let p = nodal_injections(&bg, grid, &s.inj);
        let e = residual_from_flows(&bg, &p, flows);
        for (i, ei) in e.iter().enumerate() {
            if i == bg.slack_bus {
                continue;
            }
            p5.add(ei.abs() > thresholds.tau_lc);
            p5_abs += ei.abs();
            if p[i].abs() > thresholds.balance_floor {
                p5_rel += (ei / p[i]).abs();
                p5_rel_n += 1;
            }
        }
    }

    let n = samples.len().max(1) as f64;
    Ok(PhysicsReport {
        p1: p1.value(),
        p2: p2.value(),
        p3: p3.value(),
        p3_applicable: false,
        p4: (p4_n > 0).then(|| p4_sum / p4_n as f64),
        p4_excluded,
        p4_abs: p4_abs / n,
        p5: p5.value(),
        p5_mape: (p5_rel_n > 0).then(|| p5_rel / p5_rel_n as f64),
        p5_mean_abs: if p5.total == 0 { 0.0 } else { p5_abs / p5.total as f64 },
        thresholds: *thresholds,
    })
}
