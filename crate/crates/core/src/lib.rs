//! Processed time reversal iterations for the wave equation driven from the boundary.
//!
//! The crate simulates a boundary-to-boundary response operator on a grid,
//! wraps it behind a measurement oracle, and builds on top of it the
//! connecting operator, the regularized control iteration, focusing sources
//! and boundary distance queries.
//!
//! ```no_run
//! use ptrlab_core::boundary_ops::ProjectorSpec;
//! use ptrlab_core::probes::single_node_source;
//! use ptrlab_core::{control_limit, presets, Convention, FilterVariant, IterationConfig, MeasurementOracle, OmegaRule};
//!
//! # fn main() -> ptrlab_core::Result<()> {
//! let (grid, medium) = presets::find("1d-homogeneous")?.build(None, None)?;
//! let oracle = MeasurementOracle::ideal(&grid, &medium)?;
//! let f = single_node_source(&grid, 0, |t| (-((t - 1.2) / 0.12f64).powi(2)).exp());
//!
//! let mut cfg = IterationConfig::new(1e-2, Convention::canonical(FilterVariant::Causal));
//! cfg.omega = OmegaRule::Scaled(1.0);
//! let windows = ProjectorSpec::full_boundary(&grid, 0.4);
//! let path = control_limit(&oracle, &f, &windows, &[1e-1, 1e-2, 1e-3], &cfg, Some((&grid, &medium)))?;
//! for p in &path {
//!     println!("alpha {:e}: {} steps, interior error {:?}", p.result.alpha, p.result.iterations, p.error);
//! }
//! # Ok(())
//! # }
//! ```

pub mod boundary_ops;
pub mod connecting;
pub mod distance;
mod eikonal;
pub mod error;
pub mod export;
pub mod focusing;
pub mod grid;
pub mod measurement;
pub mod medium;
pub mod presets;
pub mod probes;
pub mod ptr;
pub mod signal;
pub mod wave_solver;

pub use boundary_ops::{FilterVariant, Projector, ProjectorSpec};
pub use error::{Error, Result};
pub use grid::{build_grid, build_grid_with_steps, DomainGrid};
pub use medium::{DistanceField, MediumSpec};
pub use presets::{catalog, Preset};
pub use signal::{BoundaryLattice, BoundarySignal};
pub use wave_solver::{solve_forward, WaveSnapshot, WaveSolver};
pub use measurement::{assemble_cached, lambda_apply, CachedOperator, MeasurementOracle, NoiseCovarianceSpec};
pub use connecting::{blago_inner_product, connecting_apply, estimate_pkp_norm, Convention};
pub use ptr::{averaged_noisy_iterate, cg_solve, control_limit, ptr_iterate, IterationConfig, IterationResult, OmegaRule};
pub use focusing::{focusing_source, point_value_recover, FocusSpec, FocusedSource, PointValueEstimate};
pub use distance::{arrival_time_map, boundary_distance, boundary_wavespeed, condition_test, DistanceQuery};
