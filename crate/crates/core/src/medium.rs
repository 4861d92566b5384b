//! Wave speed, potential and boundary impedance on a grid, plus travel-time geometry.

use serde::{Deserialize, Serialize};

use crate::eikonal::fast_marching;
use crate::error::{Error, Result};
use crate::grid::DomainGrid;

/// Nodal coefficients of `A = -c^m div(c^(2-m) grad) + q` with Robin impedance `eta` on the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    c: Vec<f64>,
    q: Vec<f64>,
    eta: Vec<f64>,
}

impl MediumSpec {
    pub fn new(grid: &DomainGrid, c: Vec<f64>, q: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        if c.len() != grid.n_nodes() || q.len() != grid.n_nodes() {
            return Err(Error::Medium(format!(
                "expected {} nodal values, got c: {}, q: {}",
                grid.n_nodes(),
                c.len(),
                q.len()
            )));
        }
        if eta.len() != grid.n_boundary() {
            return Err(Error::Medium(format!(
                "expected {} boundary impedances, got {}",
                grid.n_boundary(),
                eta.len()
            )));
        }
        if let Some(v) = c.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Medium(format!("wave speed must be positive and finite, found {v}")));
        }
        if q.iter().chain(eta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Medium("potential and impedance must be finite".into()));
        }
        Ok(Self { c, q, eta })
    }

    /// Samples `c(x)`, `q(x)` at the nodes and `eta(x)` at the boundary nodes.
    pub fn from_fn(
        grid: &DomainGrid,
        c: impl Fn([f64; 2]) -> f64,
        q: impl Fn([f64; 2]) -> f64,
        eta: impl Fn([f64; 2]) -> f64,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        let cv = (0..n).map(|k| c(grid.coords(k))).collect();
        let qv = (0..n).map(|k| q(grid.coords(k))).collect();
        let ev = grid.boundary().iter().map(|b| eta(grid.coords(b.node))).collect();
        Self::new(grid, cv, qv, ev)
    }

    pub fn homogeneous(grid: &DomainGrid, c: f64) -> Result<Self> {
        Self::from_fn(grid, |_| c, |_| 0.0, |_| 0.0)
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }
    pub fn q(&self) -> &[f64] {
        &self.q
    }
    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
    pub fn c_min(&self) -> f64 {
        self.c.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn c_max(&self) -> f64 {
        self.c.iter().copied().fold(0.0, f64::max)
    }

    /// Riemannian volume weight `c^-m dV` of each node.
    pub fn volume_weights(&self, grid: &DomainGrid) -> Vec<f64> {
        let m = grid.dim() as i32;
        grid.cell_volume().iter().zip(&self.c).map(|(v, c)| v * c.powi(-m)).collect()
    }

    /// Riemannian surface weight `c^(1-m) dS` of each boundary node.
    pub fn surface_weights(&self, grid: &DomainGrid) -> Vec<f64> {
        let m = grid.dim() as i32;
        grid.boundary().iter().map(|b| b.measure * self.c[b.node].powi(1 - m)).collect()
    }

    /// Bilinear (or linear) interpolation of the wave speed and its gradient.
    pub fn speed_at(&self, grid: &DomainGrid, x: [f64; 2]) -> (f64, [f64; 2]) {
        interpolate_with_gradient(grid, &self.c, x)
    }
}

/// Travel-time distance from a node set, stored per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceField {
    values: Vec<f64>,
}

impl DistanceField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }
    /// Linear or bilinear interpolation at a point.
    pub fn interpolate(&self, grid: &DomainGrid, x: [f64; 2]) -> f64 {
        interpolate_with_gradient(grid, &self.values, x).0
    }
}

pub(crate) fn interpolate_with_gradient(grid: &DomainGrid, v: &[f64], x: [f64; 2]) -> (f64, [f64; 2]) {
    let h = grid.h();
    let [nx, ny] = grid.shape();
    let cell = |p: f64, n: usize| -> (usize, f64) {
        let s = (p / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    };
    let (i, fx) = cell(x[0], nx);
    if grid.dim() == 1 {
        let (a, b) = (v[i], v[i + 1]);
        return (a + fx * (b - a), [(b - a) / h, 0.0]);
    }
    let (j, fy) = cell(x[1], ny);
    let k = j * nx + i;
    let (v00, v10, v01, v11) = (v[k], v[k + 1], v[k + nx], v[k + nx + 1]);
    let val = v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy;
    let gx = ((v10 - v00) * (1.0 - fy) + (v11 - v01) * fy) / h;
    let gy = ((v01 - v00) * (1.0 - fx) + (v11 - v10) * fx) / h;
    (val, [gx, gy])
}

/// Cumulative travel time `int_0^x ds / c` at the nodes of a 1D grid (trapezoid in `1/c`).
fn travel_coordinate_1d(grid: &DomainGrid, medium: &MediumSpec) -> Vec<f64> {
    let c = medium.c();
    let h = grid.h();
    let mut tau = vec![0.0; c.len()];
    for i in 1..c.len() {
        tau[i] = tau[i - 1] + 0.5 * h * (1.0 / c[i - 1] + 1.0 / c[i]);
    }
    tau
}

/// Travel-time distance from a set of nodes.
///
/// In 1D this is the integral of `1/c`; in 2D it is first-order fast marching.
pub fn travel_time_distance(grid: &DomainGrid, medium: &MediumSpec, sources: &[usize]) -> Result<DistanceField> {
    if sources.is_empty() {
        return Err(Error::Invalid("travel-time source set is empty".into()));
    }
    if let Some(&s) = sources.iter().find(|&&s| s >= grid.n_nodes()) {
        return Err(Error::Invalid(format!("source node {s} out of range")));
    }
    let values = if grid.dim() == 1 {
        let tau = travel_coordinate_1d(grid, medium);
        tau.iter()
            .map(|&t| sources.iter().map(|&s| (t - tau[s]).abs()).fold(f64::INFINITY, f64::min))
            .collect()
    } else {
        fast_marching(grid.shape(), grid.h(), medium.c(), sources)
    };
    Ok(DistanceField { values })
}

/// Travel-time distance from the whole boundary.
pub fn boundary_distance_field(grid: &DomainGrid, medium: &MediumSpec) -> DistanceField {
    let sources: Vec<usize> = grid.boundary().iter().map(|b| b.node).collect();
    travel_time_distance(grid, medium, &sources).expect("boundary is never empty")
}

/// Nodes of the boundary slots in `gamma`.
pub fn boundary_nodes(grid: &DomainGrid, gamma: &[usize]) -> Result<Vec<usize>> {
    gamma
        .iter()
        .map(|&b| {
            grid.boundary()
                .get(b)
                .map(|n| n.node)
                .ok_or_else(|| Error::Invalid(format!("boundary slot {b} out of range")))
        })
        .collect()
}

/// Indicator of `M(Gamma, t) = { x : d(x, Gamma) <= t }` for boundary slots `gamma`.
pub fn domain_of_influence(grid: &DomainGrid, medium: &MediumSpec, gamma: &[usize], t: f64) -> Result<Vec<bool>> {
    if gamma.is_empty() {
        return Err(Error::Invalid("boundary patch is empty".into()));
    }
    let d = travel_time_distance(grid, medium, &boundary_nodes(grid, gamma)?)?;
    let tol = 1e-12 * (1.0 + t.abs());
    Ok(d.values.iter().map(|&v| v <= t + tol).collect())
}

/// Union of domains of influence `M(Gamma_j, T_j)`.
pub fn domain_of_influence_union(
    grid: &DomainGrid,
    medium: &MediumSpec,
    windows: &[(Vec<usize>, f64)],
) -> Result<Vec<bool>> {
    let mut acc = vec![false; grid.n_nodes()];
    for (gamma, t) in windows {
        for (a, b) in acc.iter_mut().zip(domain_of_influence(grid, medium, gamma, *t)?) {
            *a |= b;
        }
    }
    Ok(acc)
}

/// End point of the normal geodesic from a boundary slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPoint {
    pub position: [f64; 2],
    pub node: usize,
    /// Travel-time distance of the end point to the boundary.
    pub boundary_distance: f64,
    /// True when the geodesic still minimizes the distance to the boundary.
    pub minimizing: bool,
}

/// Follows the inward normal geodesic from boundary slot `z` for travel time `s`.
///
/// 2D uses RK4 on the Hamiltonian system `x' = c^2 p`, `p' = -c |p|^2 grad c`
/// with steps of at most `h / 4` in arclength.  The minimizing flag compares
/// the boundary distance of the end point with `s` at a tolerance of two cells.
pub fn normal_geodesic_point(grid: &DomainGrid, medium: &MediumSpec, z: usize, s: f64) -> Result<GeodesicPoint> {
    let bnode = grid
        .boundary()
        .get(z)
        .ok_or_else(|| Error::Invalid(format!("boundary slot {z} out of range")))?
        .clone();
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Invalid(format!("geodesic length must be non-negative, got {s}")));
    }
    let dfield = boundary_distance_field(grid, medium);
    let position = if grid.dim() == 1 {
        geodesic_1d(grid, medium, bnode.edge, s)?
    } else {
        geodesic_2d(grid, medium, grid.coords(bnode.node), bnode.normal, s)?
    };
    let node = grid.nearest_node(&position);
    let boundary_distance = dfield.interpolate(grid, position);
    let tol = 2.0 * grid.h() / medium.c_min();
    Ok(GeodesicPoint { position, node, boundary_distance, minimizing: (boundary_distance - s).abs() <= tol })
}

fn geodesic_1d(grid: &DomainGrid, medium: &MediumSpec, edge: usize, s: f64) -> Result<[f64; 2]> {
    let tau = travel_coordinate_1d(grid, medium);
    let total = *tau.last().unwrap();
    if s > total * (1.0 + 1e-12) {
        return Err(Error::GeodesicExit(total));
    }
    let target = if edge == 0 { s } else { total - s };
    let i = tau.partition_point(|&t| t < target).clamp(1, tau.len() - 1);
    let w = (target - tau[i - 1]) / (tau[i] - tau[i - 1]);
    let x = (i - 1) as f64 * grid.h() + w.clamp(0.0, 1.0) * grid.h();
    Ok([x, 0.0])
}

fn geodesic_2d(grid: &DomainGrid, medium: &MediumSpec, x0: [f64; 2], normal: [f64; 2], s: f64) -> Result<[f64; 2]> {
    let (c0, _) = medium.speed_at(grid, x0);
    let mut y = [x0[0], x0[1], normal[0] / c0, normal[1] / c0];
    if s == 0.0 {
        return Ok(x0);
    }
    let dt_max = 0.25 * grid.h() / medium.c_max();
    let n = (s / dt_max).ceil().max(1.0) as usize;
    let dt = s / n as f64;
    let rhs = |y: &[f64; 4]| -> [f64; 4] {
        let (c, g) = medium.speed_at(grid, [y[0], y[1]]);
        let p2 = y[2] * y[2] + y[3] * y[3];
        [c * c * y[2], c * c * y[3], -c * p2 * g[0], -c * p2 * g[1]]
    };
    for step in 0..n {
        let k1 = rhs(&y);
        let k2 = rhs(&add(&y, &k1, 0.5 * dt));
        let k3 = rhs(&add(&y, &k2, 0.5 * dt));
        let k4 = rhs(&add(&y, &k3, dt));
        for a in 0..4 {
            y[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        if !grid.contains(&[y[0], y[1]]) {
            return Err(Error::GeodesicExit((step + 1) as f64 * dt));
        }
    }
    Ok([y[0], y[1]])
}

fn add(y: &[f64; 4], k: &[f64; 4], s: f64) -> [f64; 4] {
    [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2], y[3] + s * k[3]]
}

/// Riemannian volume of the slab `{ d(x, z) <= t_hat, d(x, boundary) > t0 }`.
///
/// Each cell is integrated by interpolating both distance fields and `c^-m`:
/// exactly along the line in 1D, and on an 8 x 8 sub-sample in 2D.
pub fn slab_volume(grid: &DomainGrid, medium: &MediumSpec, z: usize, t_hat: f64, t0: f64) -> Result<f64> {
    if !(t0 < t_hat) {
        return Err(Error::Invalid(format!("slab needs t0 < t_hat, got t0 = {t0}, t_hat = {t_hat}")));
    }
    let dz = travel_time_distance(grid, medium, &boundary_nodes(grid, &[z])?)?;
    let db = boundary_distance_field(grid, medium);
    let m = grid.dim() as i32;
    let w: Vec<f64> = medium.c().iter().map(|c| c.powi(-m)).collect();
    let h = grid.h();
    let [nx, ny] = grid.shape();
    let inside = |a: f64, b: f64| a <= t_hat && b > t0;
    let mut vol = 0.0;
    if m == 1 {
        const SUB: usize = 64;
        for i in 0..nx - 1 {
            for s in 0..SUB {
                let f = (s as f64 + 0.5) / SUB as f64;
                let lerp = |v: &[f64]| v[i] + f * (v[i + 1] - v[i]);
                if inside(lerp(dz.values()), lerp(db.values())) {
                    vol += lerp(&w) * h / SUB as f64;
                }
            }
        }
    } else {
        const SUB: usize = 8;
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let k = j * nx + i;
                let corners = |v: &[f64]| [v[k], v[k + 1], v[k + nx], v[k + nx + 1]];
                let (a, b, c) = (corners(dz.values()), corners(db.values()), corners(&w));
                for sj in 0..SUB {
                    let fy = (sj as f64 + 0.5) / SUB as f64;
                    for si in 0..SUB {
                        let fx = (si as f64 + 0.5) / SUB as f64;
                        let bil = |v: [f64; 4]| {
                            v[0] * (1.0 - fx) * (1.0 - fy) + v[1] * fx * (1.0 - fy) + v[2] * (1.0 - fx) * fy + v[3] * fx * fy
                        };
                        if inside(bil(a), bil(b)) {
                            vol += bil(c) * h * h / (SUB * SUB) as f64;
                        }
                    }
                }
            }
        }
    }
    Ok(vol)
}

/// Estimate of `lim (t_hat - t0)^((m+1)/2) / vol(slab)` as `t0 -> t_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C0Estimate {
    pub value: f64,
    /// Ratios at `delta`, `delta/2`, `delta/4`.
    pub ratios: [f64; 3],
    /// Largest relative deviation of the ratios from `value`.
    pub spread: f64,
}

/// Richardson extrapolation of the slab ratio over `delta`, `delta/2`, `delta/4`.
pub fn c0_constant(grid: &DomainGrid, medium: &MediumSpec, z: usize, t_hat: f64, delta: f64) -> Result<C0Estimate> {
    let m = grid.dim() as f64;
    let mut ratios = [0.0; 3];
    for (k, r) in ratios.iter_mut().enumerate() {
        let d = delta / f64::powi(2.0, k as i32);
        let vol = slab_volume(grid, medium, z, t_hat, t_hat - d)?;
        if vol <= 0.0 {
            return Err(Error::Numerical(format!("empty slab at thickness {d:.3e}")));
        }
        *r = d.powf(0.5 * (m + 1.0)) / vol;
    }
    let r1 = 2.0 * ratios[1] - ratios[0];
    let r2 = 2.0 * ratios[2] - ratios[1];
    let value = (4.0 * r2 - r1) / 3.0;
    let spread = ratios.iter().map(|r| ((r - value) / value).abs()).fold(0.0, f64::max);
    Ok(C0Estimate { value, ratios, spread })
}
