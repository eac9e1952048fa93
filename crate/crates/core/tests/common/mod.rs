#![allow(dead_code)]

use nalgebra::DMatrix;
use pflab::grid::{feature_len, Generator, Grid, Line, Load, NodalMatrix};
use pflab::mp::{mp_adjoint, mp_forward};
use pflab::nn::{grad, sample_loss, Activation, MlpParams, ModelKind, PhysicsOptions, SampleAux};
use pflab::scenario::{generate_sample, Sample, ScenarioConfig, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Four substations on a ring with one chord.
pub fn toy_grid() -> Grid {
    let line = |id: &str, a, b, x| Line {
        id: id.into(),
        sub_or: a,
        sub_ex: b,
        x,
    };
    Grid::new(Grid {
        name: "toy4".into(),
        base_mva: 100.0,
        substations: 4,
        slack_substation: 0,
        lines: vec![
            line("l01", 0, 1, 0.1),
            line("l12", 1, 2, 0.2),
            line("l23", 2, 3, 0.15),
            line("l30", 3, 0, 0.25),
            line("l02", 0, 2, 0.3),
        ],
        generators: vec![
            Generator {
                id: "g0".into(),
                substation: 0,
                p_max: 2.0,
            },
            Generator {
                id: "g2".into(),
                substation: 2,
                p_max: 1.0,
            },
        ],
        loads: vec![
            Load {
                id: "d1".into(),
                substation: 1,
                p_nominal: 0.9,
            },
            Load {
                id: "d2".into(),
                substation: 2,
                p_nominal: 0.4,
            },
            Load {
                id: "d3".into(),
                substation: 3,
                p_nominal: 0.7,
            },
        ],
    })
    .expect("toy grid is valid")
}

pub fn toy_samples(n: usize, seed: u64) -> (Grid, Vec<Sample>) {
    let grid = toy_grid();
    let cfg = ScenarioConfig::for_split(Split::Train, n, seed);
    let samples = (0..n as u64)
        .map(|i| generate_sample(&grid, &cfg, i).unwrap())
        .collect();
    (grid, samples)
}

pub struct GradCheck {
    pub worst_rel: f64,
    pub points: usize,
}

/// Central finite differences of the batch loss at `points` random parameter
/// vectors; returns the worst norm-wise relative error `‖g − g_fd‖ / ‖g_fd‖`.
pub fn check_gradients(kind: ModelKind, opts: &PhysicsOptions, points: usize, h: f64, seed: u64) -> GradCheck {
    let (grid, samples) = toy_samples(3, seed);
    let aux: Vec<SampleAux> = samples.iter().map(|s| SampleAux::new(&grid, s).unwrap()).collect();
    let refs: Vec<&SampleAux> = aux.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let fin = feature_len(&grid);
    let x = DMatrix::from_fn(fin, samples.len(), |_, _| rng.gen_range(-1.0..1.0));
    let lambda = if kind == ModelKind::Mlp { 0.0 } else { opts.lambda };
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let mut params = MlpParams::init(&[fin, 6, 5, kind.output_dim(&grid)], Activation::Tanh, &mut rng);
        let analytic = grad(&params, x.clone(), &refs, kind, opts).unwrap().grads.to_flat();
        let base = params.to_flat();
        let loss_at = |params: &MlpParams| -> f64 {
            let out = params.forward_batch(&x).unwrap();
            (0..x.ncols())
                .map(|j| {
                    sample_loss(kind, out.column(j).as_slice(), &aux[j], opts, false)
                        .0
                        .total(lambda)
                })
                .sum::<f64>()
                / x.ncols() as f64
        };
        let mut fd = vec![0.0; base.len()];
        let mut v = base.clone();
        for k in 0..base.len() {
            v[k] = base[k] + h;
            params.set_flat(&v).unwrap();
            let up = loss_at(&params);
            v[k] = base[k] - h;
            params.set_flat(&v).unwrap();
            let down = loss_at(&params);
            v[k] = base[k];
            fd[k] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-300));
    }
    GradCheck {
        worst_rel: worst,
        points,
    }
}

/// Random connected `n`-bus system: a random spanning tree plus a few
/// chords, susceptances in [1, 20], injections in [-1, 1].
pub fn random_system(n: usize, rng: &mut impl Rng) -> (NodalMatrix, Vec<f64>) {
    let mut branches = Vec::new();
    for i in 1..n {
        branches.push((rng.gen_range(0..i), i, rng.gen_range(1.0..20.0)));
    }
    for _ in 0..n / 2 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            branches.push((a, b, rng.gen_range(1.0..20.0)));
        }
    }
    let p = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (NodalMatrix::from_branches(n, branches), p)
}

/// Directional derivative of `w · mp_forward(θ0)` along `v`: adjoint versus
/// central differences. Returns the relative error. The chain is affine in
/// `θ0`, so the difference quotient has no truncation error and a moderate
/// `h` keeps cancellation out of the comparison.
pub fn adjoint_check(n: usize, depth: usize, damping: f64, h: f64, rng: &mut impl Rng) -> f64 {
    let (y, p) = random_system(n, rng);
    let slack = 0;
    let theta0: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |t: &[f64]| -> f64 {
        let (out, _) = mp_forward(t, &p, &y, damping, depth, slack);
        out.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let shifted = |s: f64| -> Vec<f64> { theta0.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
    let fd = (f(&shifted(h)) - f(&shifted(-h))) / (2.0 * h);
    let (_, tape) = mp_forward(&theta0, &p, &y, damping, depth, slack);
    let g = mp_adjoint(&w, &tape);
    let analytic: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
    (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-12)
}

/// SHA-256 of every file under `dir`, keyed by relative path.
pub fn dir_digest(dir: &std::path::Path) -> std::collections::BTreeMap<String, String> {
    use sha2::{Digest, Sha256};
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(&bytes)));
            }
        }
    }
    out
}

/// Rebuild a saved split from its manifest alone into `target`.
pub fn regenerate_from_manifest(grid: &Grid, saved: &std::path::Path, target: &std::path::Path) {
    let manifest: pflab::store::DatasetFileManifest = pflab::store::read_json(&saved.join("manifest.json")).unwrap();
    let ds = pflab::scenario::generate_dataset(grid, manifest.dataset.split, &manifest.dataset.config).unwrap();
    pflab::store::save_dataset(target, grid, &ds).unwrap();
}
