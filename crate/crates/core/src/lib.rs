//! Cucker–Smale flocking with finite-speed information propagation.
//!
//! Agent `i` sees agent `j` at the retarded time `t - tau_ij(t)`, where
//! `c tau_ij = |x_i(t) - x_j(t - tau_ij)|`. The crate provides
//!
//! * [`influence`]: communication kernels and their monotone rearrangement,
//! * [`history`]: dense-output trajectory storage,
//! * [`delay`]: the retarded-time root solver,
//! * [`dynamics`]: an RK4 integrator with predictor/corrector treatment of
//!   in-step delays, and the Picard fixed-point iteration used as an oracle,
//! * [`diagnostics`]: diameters, delay statistics and decay checks,
//! * [`certificate`]: critical propagation speeds that guarantee flocking,
//! * [`meanfield`]: atomic trajectory ensembles and exact transport distances,
//! * [`cli_io`]: configuration files and experiment orchestration.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certificate;
pub mod cli_io;
pub mod delay;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod history;
pub mod influence;
mod linalg;
pub mod meanfield;

pub use error::{Error, Result};
pub use history::{InitialPath, Trajectory, TrajectoryHistory};
pub use influence::InfluenceFunction;
