//! DC power-flow surrogate laboratory.
//!
//! * [`grid`]: grid description, busbar topologies and nodal susceptance matrices.
//! * [`dc`]: exact DC solver used as ground truth.
//! * [`scenario`]: seeded train/val/test/OOD dataset generation.
//! * [`mp`]: message-passing physics engine (local conservation residual,
//!   Jacobi-style phasor updates, flat-start solver and adjoint).
//! * [`nn`]: dense networks and the three learned models (MLP, regularized MLP,
//!   warm-started physics-informed message passing).
//! * [`bench`]: accuracy, physics-compliance, OOD and speed-up evaluation.
//! * [`store`] and [`config`]: on-disk formats and run configuration.
//! * [`pipeline`]: end-to-end commands used by the CLI.

pub mod bench;
pub mod config;
pub mod dc;
pub mod error;
pub mod grid;
pub mod mp;
pub mod nn;
pub mod pipeline;
pub mod scenario;
pub mod store;

pub use error::{Error, Result};
