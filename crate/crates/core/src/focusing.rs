//! Focusing sources: boundary controls whose wave at `T` concentrates near `x_hat = gamma_z(t_hat)`.
//!
//! The source is the difference of two regularized controls,
//! `h(alpha; B) - h(alpha; B')` with `B = Gamma x [T - t_hat, T] + boundary x [T - t0, T]`
//! and `B' = boundary x [T - t0, T]`.  Its wave approximates `u^f(T)` restricted
//! to the slab `M(Gamma, t_hat) \ M(boundary, t0)`.

use serde::{Deserialize, Serialize};

use crate::boundary_ops::{realized_window, Projector, ProjectorSpec};
use crate::connecting::{blago_inner_product, InteriorReference};
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::measurement::MeasurementOracle;
use crate::medium::{
    boundary_distance_field, boundary_nodes, c0_constant, normal_geodesic_point, travel_time_distance, GeodesicPoint,
    MediumSpec,
};
use crate::ptr::{ptr_iterate, IterationConfig, IterationResult};
use crate::signal::BoundarySignal;

/// Focusing target and patch schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusSpec {
    /// Boundary slot of `z_hat`.
    pub z_hat: usize,
    pub t_hat: f64,
    pub t0: f64,
    /// Radius of `Gamma_0` along the boundary; `Gamma_j` has radius `r0 / 2^j`.
    pub r0: f64,
    pub j_max: usize,
}

impl FocusSpec {
    /// Default schedule: `r0 = |boundary| / 8`, `j_max = 4`.
    pub fn new(grid: &DomainGrid, z_hat: usize, t_hat: f64, t0: f64) -> Self {
        Self { z_hat, t_hat, t0, r0: grid.boundary_length() / 8.0, j_max: 4 }
    }

    pub fn validate(&self, grid: &DomainGrid) -> Result<()> {
        if self.z_hat >= grid.n_boundary() {
            return Err(Error::Invalid(format!("focus slot {} out of range", self.z_hat)));
        }
        if !(0.0 < self.t0 && self.t0 <= self.t_hat && self.t_hat < grid.horizon()) {
            return Err(Error::Invalid(format!(
                "need 0 < t0 <= t_hat < T, got t0 = {}, t_hat = {}, T = {}",
                self.t0,
                self.t_hat,
                grid.horizon()
            )));
        }
        Ok(())
    }

    /// Boundary slots of `Gamma_j`.
    pub fn patch(&self, grid: &DomainGrid, j: usize) -> Vec<usize> {
        patch(grid, self.z_hat, self.r0 / f64::powi(2.0, j as i32))
    }

    /// The windows `B` and `B'`.
    pub fn windows(&self, grid: &DomainGrid, j: usize) -> (ProjectorSpec, ProjectorSpec) {
        let outer = ProjectorSpec::full_boundary(grid, self.t0);
        let b = ProjectorSpec::single(self.patch(grid, j), self.t_hat).union(&outer);
        (b, outer)
    }
}

/// Slots within perimeter distance `radius` of `z` (always including `z`).
pub fn patch(grid: &DomainGrid, z: usize, radius: f64) -> Vec<usize> {
    if grid.dim() == 1 {
        return vec![z];
    }
    let tol = 1e-9 * grid.h();
    (0..grid.n_boundary()).filter(|&b| b == z || grid.boundary_separation(z, b) <= radius + tol).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusedSource {
    pub h_tilde: BoundarySignal,
    pub patch: Vec<usize>,
    /// Runs for `B` and `B'`, controls dropped.
    pub runs: [RunSummary; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub omega: f64,
    pub pkp_norm: f64,
    pub queries: u64,
}

impl From<&IterationResult> for RunSummary {
    fn from(r: &IterationResult) -> Self {
        Self {
            iterations: r.iterations,
            converged: r.converged,
            residual: r.residual,
            omega: r.omega,
            pkp_norm: r.pkp_norm,
            queries: r.queries,
        }
    }
}

/// `h(alpha; B) - h(alpha; B')` for patch level `j`.
pub fn focusing_source(
    oracle: &MeasurementOracle,
    grid: &DomainGrid,
    f: &BoundarySignal,
    spec: &FocusSpec,
    j: usize,
    config: &IterationConfig,
) -> Result<FocusedSource> {
    spec.validate(grid)?;
    let (b, b_prime) = spec.windows(grid, j);
    let lat = oracle.lattice();
    let run = |w: &ProjectorSpec| -> Result<IterationResult> {
        let p = Projector::new(w, lat)?;
        let mut cfg = config.clone();
        cfg.pkp_norm = None;
        let r = ptr_iterate(oracle, f, &p, &cfg, None)?;
        if !r.converged {
            return Err(Error::Numerical(format!(
                "control iteration stopped after {} steps at residual {:.3e}",
                r.iterations, r.residual
            )));
        }
        Ok(r)
    };
    let hb = run(&b)?;
    let hp = run(&b_prime)?;
    Ok(FocusedSource {
        h_tilde: hb.h.sub(&hp.h),
        patch: spec.patch(grid, j),
        runs: [RunSummary::from(&hb), RunSummary::from(&hp)],
    })
}

/// Concentration of a focused wave around `x_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub x_hat: GeodesicPoint,
    /// Radii `2h, 4h, 8h` (in travel time, scaled by `1/c(x_hat)`).
    pub radii: [f64; 3],
    /// Mass fraction within each radius.
    pub fractions: [f64; 3],
    /// Mass fraction on the slab nodes.
    pub slab_fraction: f64,
    /// `|| (t_hat - t0)^(-(m+1)/2) u(T) ||`.
    pub normalized_mass: f64,
    /// The scale factor `(t_hat - t0)^(-(m+1)/2)`.
    pub scale: f64,
}

/// Evaluates the normalized field `(t_hat - t0)^(-(m+1)/2) u^h(T)` by direct solve and measures it.
pub fn focusing_profile(
    grid: &DomainGrid,
    medium: &MediumSpec,
    h_tilde: &BoundarySignal,
    spec: &FocusSpec,
) -> Result<(Vec<f64>, ConcentrationReport)> {
    spec.validate(grid)?;
    let reference = InteriorReference::new(grid, medium)?;
    let x_hat = normal_geodesic_point(grid, medium, spec.z_hat, spec.t_hat)?;
    let delta = spec.t_hat - spec.t0;
    let scale = if delta > 0.0 { delta.powf(-0.5 * (grid.dim() as f64 + 1.0)) } else { 1.0 };
    let mut u = reference.field_at_horizon(h_tilde)?;
    u.iter_mut().for_each(|v| *v *= scale);
    let mass = medium.volume_weights(grid);
    let total: f64 = u.iter().zip(&mass).map(|(v, m)| v * v * m).sum();
    let frac = |keep: &dyn Fn(usize) -> bool| -> f64 {
        if total == 0.0 {
            return 0.0;
        }
        (0..u.len()).filter(|&k| keep(k)).map(|k| u[k] * u[k] * mass[k]).sum::<f64>() / total
    };
    let dx = travel_time_distance(grid, medium, &[x_hat.node])?;
    let (c_hat, _) = medium.speed_at(grid, x_hat.position);
    let radii = [2.0, 4.0, 8.0].map(|k| k * grid.h() / c_hat);
    let fractions = radii.map(|r| frac(&|k| dx.at(k) <= r + 1e-12));
    let dz = travel_time_distance(grid, medium, &boundary_nodes(grid, &[spec.z_hat])?)?;
    let db = boundary_distance_field(grid, medium);
    let eps = 1e-12;
    let slab_fraction = frac(&|k| dz.at(k) <= spec.t_hat + eps && db.at(k) > spec.t0 + eps);
    let report = ConcentrationReport {
        x_hat,
        radii,
        fractions,
        slab_fraction,
        normalized_mass: total.sqrt(),
        scale,
    };
    Ok((u, report))
}

/// A probe source `g` together with the known value of `u^g(x_hat, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub g: BoundarySignal,
    pub value_at_focus: f64,
}

/// Probe for a homogeneous interval with `c = 1`, driven from the left end.
///
/// `g = G'` where `G` rises smoothly from 0 at `s = s0 - w` to 1 at `s = s0 + w`,
/// so `u^g(x, T) = G(T - x) = 1` for `x < T - s0 - w`.
pub fn interval_plateau_probe(grid: &DomainGrid, s0: f64, w: f64) -> Result<Probe> {
    if grid.dim() != 1 || s0 - w < 0.0 || s0 + w > grid.horizon() {
        return Err(Error::Invalid("plateau probe needs a 1D grid and a ramp inside [0, T]".into()));
    }
    let t_end = grid.horizon();
    let g = BoundarySignal::from_fn(grid.n_boundary(), grid.n_times(), |b, k| {
        let t = grid.time(k);
        if b != 0 || t > t_end {
            return 0.0;
        }
        let s = (t - s0) / w;
        if s.abs() >= 1.0 {
            0.0
        } else {
            // Derivative of the smoothstep built on (1 - s^2)^2, normalized to unit integral.
            15.0 / 16.0 * (1.0 - s * s).powi(2) / w
        }
    });
    Ok(Probe { g, value_at_focus: 1.0 })
}

/// Point value estimate with its schedule spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointValueEstimate {
    pub estimate: f64,
    /// `(t_hat - t0, estimate)` per schedule point, coarse to fine.
    pub schedule: Vec<(f64, f64)>,
    /// Largest deviation from the finest estimate, relative to it.
    pub spread: f64,
    pub reliable: bool,
    pub c0: f64,
}

/// Recovers `u^f(x_hat, T)` from boundary data only.
///
/// For each slab thickness `delta` the focused source pairs with the probe:
/// `<K h_tilde, g> ~ u^f(x_hat, T) u^g(x_hat, T) vol(slab)` with
/// `vol(slab) ~ delta^((m+1)/2) / C0`.  The estimate is the finest
/// schedule point; it is flagged unreliable when the spread exceeds 50%.
/// The slab thickness entering the volume is the one realized by the time
/// lattice, which differs from `delta` by up to one step.
#[allow(clippy::too_many_arguments)]
pub fn point_value_recover(
    oracle: &MeasurementOracle,
    grid: &DomainGrid,
    medium: &MediumSpec,
    f: &BoundarySignal,
    spec: &FocusSpec,
    deltas: &[f64],
    probe: &Probe,
    config: &IterationConfig,
) -> Result<PointValueEstimate> {
    spec.validate(grid)?;
    if deltas.is_empty() {
        return Err(Error::Invalid("empty slab schedule".into()));
    }
    let m = grid.dim() as f64;
    let dmax = deltas.iter().cloned().fold(0.0, f64::max);
    let c0 = c0_constant(grid, medium, spec.z_hat, spec.t_hat, dmax)?.value;
    let mut schedule = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let s = FocusSpec { t0: spec.t_hat - delta, ..spec.clone() };
        let src = focusing_source(oracle, grid, f, &s, s.j_max, config)?;
        let pairing = blago_inner_product(oracle, &src.h_tilde, &probe.g, config.convention)?;
        let dt = oracle.lattice().dt();
        let thickness = realized_window(spec.t_hat, dt) - realized_window(s.t0, dt);
        let vol = thickness.powf(0.5 * (m + 1.0)) / c0;
        schedule.push((delta, pairing / (vol * probe.value_at_focus)));
    }
    let estimate = schedule.last().map(|s| s.1).unwrap_or(0.0);
    let spread = if estimate == 0.0 {
        0.0
    } else {
        schedule.iter().map(|(_, v)| ((v - estimate) / estimate).abs()).fold(0.0, f64::max)
    };
    Ok(PointValueEstimate { estimate, schedule, spread, reliable: spread <= 0.5, c0 })
}

/// Boundary-data test for whether the normal geodesic still minimizes at `t_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutIndicator {
    /// Normalized focused mass at `t_hat`.
    pub mass: f64,
    /// The same at the reference depth.
    pub reference_mass: f64,
    pub ratio: f64,
    /// False when the mass collapsed below `CUT_RATIO` of the reference.
    pub minimizing: bool,
}

pub const CUT_RATIO: f64 = 0.1;

/// Compares the focused mass at `spec.t_hat` with the mass at a shallower `reference_t_hat`.
///
/// Past the cut time the focused waves vanish, so a collapse of
/// `(t_hat - t0)^(-(m+1)/2) <K h_tilde, h_tilde>^(1/2)` flags `t_hat > tau(z)`.
/// Only boundary data enter.  The reference uses the same slab thickness and
/// must itself be minimizing.
pub fn cut_indicator(
    oracle: &MeasurementOracle,
    grid: &DomainGrid,
    f: &BoundarySignal,
    spec: &FocusSpec,
    reference_t_hat: f64,
    config: &IterationConfig,
) -> Result<CutIndicator> {
    let delta = spec.t_hat - spec.t0;
    if !(delta > 0.0 && reference_t_hat > delta && reference_t_hat < spec.t_hat) {
        return Err(Error::Invalid("reference depth must lie in (t_hat - t0, t_hat)".into()));
    }
    let scale = delta.powf(-0.5 * (grid.dim() as f64 + 1.0));
    let mass = |s: &FocusSpec| -> Result<f64> {
        let src = focusing_source(oracle, grid, f, s, s.j_max, config)?;
        Ok(scale * blago_inner_product(oracle, &src.h_tilde, &src.h_tilde, config.convention)?.max(0.0).sqrt())
    };
    let m = mass(spec)?;
    let reference = FocusSpec { t_hat: reference_t_hat, t0: reference_t_hat - delta, ..spec.clone() };
    let r = mass(&reference)?;
    let ratio = if r > 0.0 { m / r } else { 0.0 };
    Ok(CutIndicator { mass: m, reference_mass: r, ratio, minimizing: ratio >= CUT_RATIO })
}

/// Convention-independent helper: the focused wave at `T` by direct solve (validation only).
pub fn focused_field(grid: &DomainGrid, medium: &MediumSpec, h: &BoundarySignal) -> Result<Vec<f64>> {
    InteriorReference::new(grid, medium)?.field_at_horizon(h)
}
