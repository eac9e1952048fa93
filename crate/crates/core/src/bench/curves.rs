use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dc::nodal_injections;
use crate::error::{Error, Result};
use crate::grid::{apply_topology, build_nodal_matrix, Grid};
use crate::mp::{lc_residual, mp_forward_traced, residual_stats, MpTrajectory};
use crate::nn::{encode_batch, ModelKind, SurrogateModel, TrainReport};
use crate::scenario::Sample;

/// Layer-wise mean residuals of learned and flat starts over the same samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartComparison {
    pub depth: usize,
    /// Mean over samples of the per-sample mean `|E_i|`, for layers `0..=depth`.
    pub warm: Vec<f64>,
    pub flat: Vec<f64>,
}

impl WarmStartComparison {
    pub fn final_warm(&self) -> f64 {
        *self.warm.last().unwrap()
    }

    pub fn final_flat(&self) -> f64 {
        *self.flat.last().unwrap()
    }
}

/// Run `depth` message-passing layers from the model's initial guess and from
/// θ = 0, recording the mean residual after every layer (layer 0 is the start).
pub fn warm_vs_flat(
    model: &SurrogateModel,
    grid: &Grid,
    samples: &[Sample],
    depth: usize,
) -> Result<WarmStartComparison> {
    if model.kind == ModelKind::Mlp {
        return Err(Error::InvalidConfig("warm starts need a bus-level model".into()));
    }
    if samples.is_empty() {
        return Err(Error::EmptySelection("warm-start samples"));
    }
    model.check_grid(grid)?;
    let mut x = encode_batch(grid, samples.iter().map(|s| (&s.tau, &s.inj)))?;
    model.scaler.transform(&mut x);
    let out = model.params.forward_batch(&x)?;
    let mut warm = vec![0.0; depth + 1];
    let mut flat = vec![0.0; depth + 1];
    let damping = model.physics.damping;
    for (j, s) in samples.iter().enumerate() {
        let bg = apply_topology(grid, &s.tau)?;
        let y = build_nodal_matrix(&bg);
        let p = nodal_injections(&bg, grid, &s.inj);
        let mut theta0 = bg.from_slots(out.column(j).as_slice());
        theta0[bg.slack_bus] = 0.0;
        for (start, acc) in [(theta0, &mut warm), (vec![0.0; bg.n_buses], &mut flat)] {
            let e0 = lc_residual(&start, &p, &y);
            acc[0] += residual_stats(&e0, bg.slack_bus).mean;
            let (_, traj) = mp_forward_traced(&start, &p, &y, damping, depth, bg.slack_bus, true);
            for (k, v) in traj.mean_residual.iter().enumerate() {
                acc[k + 1] += v;
            }
        }
    }
    let n = samples.len() as f64;
    warm.iter_mut().chain(flat.iter_mut()).for_each(|v| *v /= n);
    Ok(WarmStartComparison { depth, warm, flat })
}

const TRAJECTORY_HEADER: &str = "run,layer,max_residual,mean_residual,log10_max_residual,log10_mean_residual\n";
const WARM_HEADER: &str = "run,layer,warm_mean_residual,flat_mean_residual,log10_warm,log10_flat\n";

fn write(path: &Path, body: String) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// One row per (run, epoch): train/val totals and their data/physics parts.
pub fn loss_curves_csv(reports: &[(String, &TrainReport)]) -> String {
    let mut out = String::from("run,epoch,train_loss,val_loss,train_data,train_physics,val_data,val_physics,lr\n");
    for (run, r) in reports {
        for e in 0..r.epochs_run() {
            let _ = writeln!(
                out,
                "{run},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                e + 1,
                r.train_loss[e],
                r.val_loss[e],
                r.train_data[e],
                r.train_physics[e],
                r.val_data[e],
                r.val_physics[e],
                r.lr[e]
            );
        }
    }
    out
}

/// One row per executed layer with natural and log10 residuals.
pub fn trajectory_csv(run: &str, trajectory: &MpTrajectory) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    for (k, (mx, mean)) in trajectory
        .max_residual
        .iter()
        .zip(&trajectory.mean_residual)
        .enumerate()
    {
        let _ = writeln!(
            out,
            "{run},{},{mx:e},{mean:e},{:e},{:e}",
            k + 1,
            mx.log10(),
            mean.log10()
        );
    }
    out
}

/// Warm and flat chains on a shared layer grid.
pub fn warm_start_csv(run: &str, cmp: &WarmStartComparison) -> String {
    let mut out = String::from(WARM_HEADER);
    for (k, (w, f)) in cmp.warm.iter().zip(&cmp.flat).enumerate() {
        let _ = writeln!(out, "{run},{k},{w:e},{f:e},{:e},{:e}", w.log10(), f.log10());
    }
    out
}

fn concat(header: &str, bodies: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    for body in bodies {
        out.push_str(body.split_once('\n').map_or("", |(_, rows)| rows));
    }
    out
}

/// Write every curve family under `dir`.
pub fn export_curves(
    dir: &Path,
    reports: &[(String, &TrainReport)],
    trajectories: &[(String, &MpTrajectory)],
    warm_starts: &[(String, &WarmStartComparison)],
) -> Result<()> {
    write(&dir.join("loss_curves.csv"), loss_curves_csv(reports))?;
    let traj = concat(
        TRAJECTORY_HEADER,
        trajectories.iter().map(|(run, t)| trajectory_csv(run, t)),
    );
    write(&dir.join("mp_trajectory.csv"), traj)?;
    let warm = concat(WARM_HEADER, warm_starts.iter().map(|(run, c)| warm_start_csv(run, c)));
    write(&dir.join("warm_vs_flat.csv"), warm)
}
