//! On-disk formats.
//!
//! Datasets and checkpoints share one layout: a directory with
//! `manifest.json` plus one raw little-endian `f64` file per array, stored
//! row-major with the shape recorded in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dc::{Injection, LineFlows};
use crate::error::{Error, Result};
use crate::grid::{apply_topology, Busbar, Grid, TopologyVector};
use crate::nn::{
    Activation, DenseLayer, FeatureScaler, MlpParams, ModelKind, PhysicsOptions, SurrogateModel, TrainConfig,
};
use crate::scenario::{Dataset, DatasetManifest, Sample};

pub const MANIFEST: &str = "manifest.json";
const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

/// A named row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Array {
            name: name.into(),
            shape,
            data,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Write every array into `dir` and return their manifest entries.
pub fn write_arrays(dir: &Path, arrays: &[Array]) -> Result<Vec<ArraySpec>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    arrays
        .iter()
        .map(|a| {
            let file = format!("{}.f64", a.name);
            let path = dir.join(&file);
            let bytes: Vec<u8> = a.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            Ok(ArraySpec {
                name: a.name.clone(),
                shape: a.shape.clone(),
                dtype: DTYPE.into(),
                file,
            })
        })
        .collect()
}

pub fn read_array(dir: &Path, spec: &ArraySpec) -> Result<Array> {
    let path = dir.join(&spec.file);
    if spec.dtype != DTYPE {
        return Err(Error::malformed(&path, format!("unsupported dtype {}", spec.dtype)));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = spec.shape.iter().product::<usize>() * 8;
    if bytes.len() != expected {
        return Err(Error::malformed(
            &path,
            format!(
                "expected {expected} bytes for shape {:?}, found {}",
                spec.shape,
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Array::new(spec.name.clone(), spec.shape.clone(), data))
}

fn find<'a>(dir: &Path, arrays: &'a [ArraySpec], name: &str) -> Result<&'a ArraySpec> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::malformed(dir.join(MANIFEST), format!("missing array `{name}`")))
}

fn check_width(dir: &Path, array: &Array, rows: usize, cols: usize) -> Result<()> {
    if array.shape != [rows, cols] {
        return Err(Error::malformed(
            dir.join(&array.name),
            format!("shape {:?} does not match expected [{rows}, {cols}]", array.shape),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFileManifest {
    #[serde(flatten)]
    pub dataset: DatasetManifest,
    pub arrays: Vec<ArraySpec>,
}

/// Persist a dataset. Rewriting the same dataset yields identical bytes.
pub fn save_dataset(dir: &Path, grid: &Grid, ds: &Dataset) -> Result<()> {
    let n = ds.len();
    let rows = |width: usize, f: &dyn Fn(&Sample) -> Vec<f64>| -> (Vec<usize>, Vec<f64>) {
        let mut data = Vec::with_capacity(n * width);
        for s in &ds.samples {
            data.extend(f(s));
        }
        (vec![n, width], data)
    };
    let mut arrays = Vec::new();
    let mut push = |name: &str, width: usize, f: &dyn Fn(&Sample) -> Vec<f64>| -> Result<()> {
        let (shape, data) = rows(width, f);
        arrays.push(Array::new(name, shape, data));
        Ok(())
    };
    push("p_prod", grid.generators.len(), &|s| s.inj.p_prod.clone())?;
    push("p_load", grid.loads.len(), &|s| s.inj.p_load.clone())?;
    push("element_bus", grid.n_elements(), &|s| {
        s.tau.element_bus.iter().map(|b| (b.index() + 1) as f64).collect()
    })?;
    push("line_status", grid.n_lines(), &|s| {
        s.tau.line_status.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    })?;
    push("theta_bus", grid.n_slots(), &|s| s.theta_bus.clone())?;
    let mut masks = Vec::with_capacity(n * grid.n_slots());
    for s in &ds.samples {
        masks.extend(apply_topology(grid, &s.tau)?.slot_mask());
    }
    arrays.push(Array::new("bus_mask", vec![n, grid.n_slots()], masks));
    arrays.push(Array::new(
        "theta_line",
        vec![n, 2 * grid.n_lines()],
        ds.samples.iter().flat_map(|s| s.theta_line.iter().copied()).collect(),
    ));
    arrays.push(Array::new(
        "p_or",
        vec![n, grid.n_lines()],
        ds.samples.iter().flat_map(|s| s.flows.p_or.iter().copied()).collect(),
    ));
    arrays.push(Array::new(
        "p_ex",
        vec![n, grid.n_lines()],
        ds.samples.iter().flat_map(|s| s.flows.p_ex.iter().copied()).collect(),
    ));
    let specs = write_arrays(dir, &arrays)?;
    write_json(
        &dir.join(MANIFEST),
        &DatasetFileManifest {
            dataset: ds.manifest.clone(),
            arrays: specs,
        },
    )
}

pub fn load_dataset(dir: &Path, grid: &Grid) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::malformed(&manifest_path, "dataset manifest not found"));
    }
    let manifest: DatasetFileManifest = read_json(&manifest_path)?;
    if manifest.dataset.grid != grid.name {
        return Err(Error::malformed(
            &manifest_path,
            format!(
                "dataset was generated for grid `{}`, not `{}`",
                manifest.dataset.grid, grid.name
            ),
        ));
    }
    let n = manifest.dataset.n_samples;
    let load = |name: &str, width: usize| -> Result<Array> {
        let a = read_array(dir, find(dir, &manifest.arrays, name)?)?;
        check_width(dir, &a, n, width)?;
        Ok(a)
    };
    let l = grid.n_lines();
    let p_prod = load("p_prod", grid.generators.len())?;
    let p_load = load("p_load", grid.loads.len())?;
    let element_bus = load("element_bus", grid.n_elements())?;
    let line_status = load("line_status", l)?;
    let theta_bus = load("theta_bus", grid.n_slots())?;
    let theta_line = load("theta_line", 2 * l)?;
    let p_or = load("p_or", l)?;
    let p_ex = load("p_ex", l)?;
    let row = |a: &Array, i: usize| -> Vec<f64> {
        let w = a.shape[1];
        a.data[i * w..(i + 1) * w].to_vec()
    };
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let buses = row(&element_bus, i)
            .into_iter()
            .map(|v| match v as i64 {
                1 => Ok(Busbar::One),
                2 => Ok(Busbar::Two),
                _ => Err(Error::malformed(
                    dir.join("element_bus.f64"),
                    format!("busbar value {v} in row {i}"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            tau: TopologyVector {
                element_bus: buses,
                line_status: row(&line_status, i).into_iter().map(|v| v != 0.0).collect(),
            },
            inj: Injection {
                p_prod: row(&p_prod, i),
                p_load: row(&p_load, i),
            },
            theta_bus: row(&theta_bus, i),
            theta_line: row(&theta_line, i),
            flows: LineFlows {
                p_or: row(&p_or, i),
                p_ex: row(&p_ex, i),
            },
        });
    }
    Ok(Dataset {
        split: manifest.dataset.split,
        samples,
        manifest: manifest.dataset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub grid: String,
    pub model_kind: ModelKind,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub lambda_physics: f64,
    pub pimp_layers: usize,
    pub damping: f64,
    pub intermediate_physics: bool,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
    pub arrays: Vec<ArraySpec>,
}

const CHECKPOINT_FORMAT: &str = "pflab-checkpoint/1";

pub fn save_checkpoint(
    dir: &Path,
    grid: &Grid,
    model: &SurrogateModel,
    train_config: Option<&TrainConfig>,
) -> Result<()> {
    let mut arrays = vec![
        Array::new("scaler_mean", vec![model.scaler.dim()], model.scaler.mean.clone()),
        Array::new("scaler_std", vec![model.scaler.dim()], model.scaler.std.clone()),
    ];
    for (k, layer) in model.params.layers.iter().enumerate() {
        let (r, c) = layer.weights.shape();
        let row_major = layer.weights.transpose().as_slice().to_vec();
        arrays.push(Array::new(format!("layer{k}_weights"), vec![r, c], row_major));
        arrays.push(Array::new(
            format!("layer{k}_bias"),
            vec![r],
            layer.bias.as_slice().to_vec(),
        ));
    }
    let specs = write_arrays(dir, &arrays)?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        grid: grid.name.clone(),
        model_kind: model.kind,
        dims: model.params.dims(),
        activation: model.params.activation,
        lambda_physics: model.physics.lambda,
        pimp_layers: model.physics.pimp_layers,
        damping: model.physics.damping,
        intermediate_physics: model.physics.intermediate_physics,
        seed: train_config.map_or(0, |c| c.seed),
        train_config: train_config.cloned(),
        arrays: specs,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(SurrogateModel, CheckpointManifest)> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::malformed(&path, "checkpoint manifest not found"));
    }
    let m: CheckpointManifest = read_json(&path)?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::malformed(
            &path,
            format!("unknown checkpoint format {}", m.format),
        ));
    }
    if m.dims.len() < 2 {
        return Err(Error::malformed(
            &path,
            "checkpoint needs at least two layer dimensions",
        ));
    }
    let get = |name: &str| -> Result<Array> { read_array(dir, find(dir, &m.arrays, name)?) };
    let mut layers = Vec::new();
    for (k, w) in m.dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights = get(&format!("layer{k}_weights"))?;
        check_width(dir, &weights, fan_out, fan_in)?;
        let bias = get(&format!("layer{k}_bias"))?;
        if bias.shape != [fan_out] {
            return Err(Error::malformed(dir.join(&bias.name), "bias shape does not match dims"));
        }
        layers.push(DenseLayer {
            weights: DMatrix::from_row_slice(fan_out, fan_in, &weights.data),
            bias: DVector::from_vec(bias.data),
        });
    }
    let mean = get("scaler_mean")?.data;
    let std = get("scaler_std")?.data;
    if mean.len() != m.dims[0] || std.len() != m.dims[0] {
        return Err(Error::malformed(&path, "scaler size does not match input dimension"));
    }
    let model = SurrogateModel {
        kind: m.model_kind,
        params: MlpParams {
            layers,
            activation: m.activation,
        },
        scaler: FeatureScaler { mean, std },
        physics: PhysicsOptions {
            lambda: m.lambda_physics,
            pimp_layers: m.pimp_layers,
            damping: m.damping,
            intermediate_physics: m.intermediate_physics,
        },
    };
    Ok((model, m))
}

/// `dir/<split>` for a dataset root.
pub fn split_dir(root: &Path, split: crate::scenario::Split) -> PathBuf {
    root.join(split.name())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_dataset, ScenarioConfig, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dataset_round_trip() {
        let grid = Grid::ieee14();
        let ds = generate_dataset(&grid, Split::Test, &ScenarioConfig::for_split(Split::Test, 20, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &grid, &ds).unwrap();
        let back = load_dataset(dir.path(), &grid).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_array_is_rejected() {
        let grid = Grid::ieee14();
        let ds = generate_dataset(&grid, Split::Val, &ScenarioConfig::for_split(Split::Val, 3, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &grid, &ds).unwrap();
        let f = dir.path().join("p_or.f64");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &grid),
            Err(Error::MalformedData { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let grid = Grid::ieee14();
        let params = MlpParams::init(
            &[crate::grid::feature_len(&grid), 7, grid.n_slots()],
            Activation::Tanh,
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        let model = SurrogateModel {
            kind: ModelKind::Pimp,
            scaler: FeatureScaler::identity(params.input_dim()),
            params,
            physics: PhysicsOptions {
                pimp_layers: 17,
                ..Default::default()
            },
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &grid, &model, None).unwrap();
        let (back, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(manifest.pimp_layers, 17);
    }
}
