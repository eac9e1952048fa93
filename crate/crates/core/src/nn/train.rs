use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scenario::Dataset;

use super::surrogate::encode_batch;
use super::{
    grad, sample_loss, Activation, FeatureScaler, MlpParams, ModelKind, PhysicsOptions, SampleAux, SurrogateModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub lambda_physics: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub pimp_layers: usize,
    pub damping: f64,
    pub intermediate_physics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model_kind: ModelKind::Mlp,
            epochs: 200,
            batch_size: 128,
            initial_lr: 1e-3,
            plateau_patience: 10,
            plateau_factor: 0.5,
            min_lr: 1e-6,
            lambda_physics: 1.0,
            seed: 0,
            hidden: vec![256; 4],
            activation: Activation::Relu,
            pimp_layers: 50,
            damping: 1.0,
            intermediate_physics: false,
        }
    }
}

impl TrainConfig {
    pub fn for_kind(model_kind: ModelKind) -> Self {
        TrainConfig {
            model_kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.plateau_factor) || self.plateau_factor == 0.0 {
            return bad(format!(
                "plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            ));
        }
        if !self.lambda_physics.is_finite() || self.lambda_physics < 0.0 {
            return bad(format!(
                "lambda_physics must be non-negative, got {}",
                self.lambda_physics
            ));
        }
        if self.initial_lr.is_nan() || self.initial_lr <= 0.0 || self.min_lr.is_nan() || self.min_lr < 0.0 {
            return bad("learning rates must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        Ok(())
    }

    pub fn physics(&self) -> PhysicsOptions {
        PhysicsOptions {
            lambda: self.lambda_physics,
            pimp_layers: self.pimp_layers,
            damping: self.damping,
            intermediate_physics: self.intermediate_physics,
        }
    }
}

/// Per-epoch loss trajectories. Every vector has one entry per epoch run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model_kind: Option<ModelKind>,
    pub train_loss: Vec<f64>,
    pub train_data: Vec<f64>,
    pub train_physics: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_data: Vec<f64>,
    pub val_physics: Vec<f64>,
    /// Learning rate used during each epoch.
    pub lr: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }

    /// Equality ignoring wall time.
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        TrainReport {
            wall_time_s: 0.0,
            ..self.clone()
        } == TrainReport {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }
}

struct Prepared {
    x: DMatrix<f64>,
    aux: Vec<SampleAux>,
}

fn prepare(grid: &Grid, ds: &Dataset) -> Result<Prepared> {
    let x = encode_batch(grid, ds.samples.iter().map(|s| (&s.tau, &s.inj)))?;
    let aux = ds
        .samples
        .iter()
        .map(|s| SampleAux::new(grid, s))
        .collect::<Result<_>>()?;
    Ok(Prepared { x, aux })
}

struct Adam {
    m: MlpParams,
    v: MlpParams,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &MlpParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let blocks = params
            .blocks_mut()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut().zip(self.v.blocks_mut()));
        for ((p, g), (m, v)) in blocks {
            for k in 0..p.len() {
                m[k] = Self::B1 * m[k] + (1.0 - Self::B1) * g[k];
                v[k] = Self::B2 * v[k] + (1.0 - Self::B2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn gather(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |i, j| x[(i, idx[j])])
}

/// Mean loss parts of `params` over a prepared set, evaluated in chunks.
fn evaluate(params: &MlpParams, set: &Prepared, kind: ModelKind, opts: &PhysicsOptions) -> Result<(f64, f64)> {
    let n = set.aux.len();
    let (mut data, mut physics) = (0.0, 0.0);
    let chunk = 512;
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let cols = set.x.columns(start, end - start).into_owned();
        let out = params.forward_batch(&cols)?;
        for j in 0..end - start {
            let (parts, _) = sample_loss(kind, out.column(j).as_slice(), &set.aux[start + j], opts, false);
            data += parts.data;
            physics += parts.physics;
        }
    }
    Ok((data / n as f64, physics / n as f64))
}

/// Mini-batch Adam with learning-rate reduction on validation plateaus.
///
/// Returns the parameters with the lowest validation loss.
pub fn train(
    grid: &Grid,
    train_ds: &Dataset,
    val_ds: &Dataset,
    config: &TrainConfig,
) -> Result<(SurrogateModel, TrainReport)> {
    config.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::EmptySelection("training or validation set"));
    }
    let started = Instant::now();
    let kind = config.model_kind;
    let opts = config.physics();
    let lambda = if kind.uses_physics() { opts.lambda } else { 0.0 };

    let mut train_set = prepare(grid, train_ds)?;
    let mut val_set = prepare(grid, val_ds)?;
    let scaler = FeatureScaler::fit(&train_set.x);
    scaler.transform(&mut train_set.x);
    scaler.transform(&mut val_set.x);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = vec![train_set.x.nrows()];
    dims.extend(&config.hidden);
    dims.push(kind.output_dim(grid));
    let mut params = MlpParams::init(&dims, config.activation, &mut rng);
    let mut adam = Adam::new(&params);

    let mut report = TrainReport {
        model_kind: Some(kind),
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    let mut lr = config.initial_lr;
    let mut bad_epochs = 0;
    let mut order: Vec<usize> = (0..train_set.aux.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut data, mut physics) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let aux: Vec<&SampleAux> = batch.iter().map(|&i| &train_set.aux[i]).collect();
            let res = grad(&params, gather(&train_set.x, batch), &aux, kind, &opts)?;
            if !res.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            data += res.data * batch.len() as f64;
            physics += res.physics * batch.len() as f64;
            adam.step(&mut params, &res.grads, lr);
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let n = order.len() as f64;
        let (data, physics) = (data / n, physics / n);
        let (vd, vp) = evaluate(&params, &val_set, kind, &opts)?;
        let val = vd + lambda * vp;
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        report.train_loss.push(data + lambda * physics);
        report.train_data.push(data);
        report.train_physics.push(physics);
        report.val_loss.push(val);
        report.val_data.push(vd);
        report.val_physics.push(vp);
        report.lr.push(lr);
        log::debug!(
            "{kind} epoch {epoch}: train {:.4e} val {val:.4e} lr {lr:.1e}",
            data + lambda * physics
        );

        if val < report.best_val_loss {
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best = params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.plateau_patience {
                lr = (lr * config.plateau_factor).max(config.min_lr);
                bad_epochs = 0;
            }
        }
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    let model = SurrogateModel {
        kind,
        params: best,
        scaler,
        physics: opts,
    };
    Ok((model, report))
}
