//! Coupled opinion–position dynamics of interacting agents.
//!
//! Agents move in a social space and update scalar opinions; both are driven by
//! bounded-confidence pair kernels plus additive or state-dependent noise. The
//! crate integrates the particle system ([`abm`]), solves its mean-field density
//! equation on a grid ([`pde`]) and compares the two ([`measures`]).
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the usual double-precision choice.

pub mod abm;
pub mod error;
pub mod measures;
pub mod model;
pub mod neighbors;
pub mod pde;
pub mod rng;
pub mod scalar;

pub use abm::{em_step, init_state, simulate, simulate_from, InitLaw, MixtureComponent, SimConfig, Trajectory};
pub use error::{Error, Result};
pub use measures::{
    cluster_components, fluctuation_slope, sample_from_density, sliced_w2, synchronous_path_distance,
    w2_1d_exact, within_cluster_opinion_spread, ClusterLabels, DistanceReport, EmpiricalMeasure,
};
pub use model::{
    noise_amplitude, opinion_drift_pair, opinion_drift_threebody, spatial_drift_pair, total_drift, DriftVector,
    Kernel, ModelParams, NoiseSpec, NoiseTarget, SigmaKernel, SystemState,
};
pub use neighbors::neighbor_pairs;
pub use pde::{
    init_gaussian_mixture, nonlocal_coefficients, pde_integrate, pde_rhs, CoefficientFields, DensityField,
    GaussianBump, Grid2D, PdeRun, PdeSettings,
};
pub use scalar::Scalar;

pub type SystemState64 = SystemState<f64>;
pub type SystemState32 = SystemState<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type SimConfig64 = SimConfig<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type DensityField64 = DensityField<f64>;
pub type DensityField32 = DensityField<f32>;
pub type Grid2D64 = Grid2D<f64>;
pub type EmpiricalMeasure64 = EmpiricalMeasure<f64>;
