//! Dense networks and the three learned models.
//!
//! * `Mlp` maps the encoded input to `(θ_or, θ_ex)` for every line.
//! * `MlpReg` maps it to one angle per busbar slot and adds the local
//!   conservation penalty to the loss.
//! * `Pimp` feeds the same bus-level prediction through a fixed-depth
//!   message-passing chain before the loss.

mod loss;
mod mlp;
mod surrogate;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::grid::Grid;

pub use loss::{grad, sample_loss, GradResult, LossParts, PhysicsOptions, SampleAux};
pub use mlp::{Activation, DenseLayer, ForwardCache, MlpParams};
pub use surrogate::{encode_batch, FeatureScaler, Prediction, SurrogateModel};
pub use train::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    MlpReg,
    Pimp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::MlpReg, ModelKind::Pimp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::MlpReg => "mlpreg",
            ModelKind::Pimp => "pimp",
        }
    }

    pub fn output_dim(self, grid: &Grid) -> usize {
        match self {
            ModelKind::Mlp => 2 * grid.n_lines(),
            ModelKind::MlpReg | ModelKind::Pimp => grid.n_slots(),
        }
    }

    pub fn uses_physics(self) -> bool {
        self != ModelKind::Mlp
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "mlpreg" => Ok(ModelKind::MlpReg),
            "pimp" => Ok(ModelKind::Pimp),
            other => Err(Error::InvalidConfig(format!("unknown model kind `{other}`"))),
        }
    }
}
