//! Uniform node grids on intervals and rectangles, with a time lattice sized by the CFL rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CFL safety factor for the explicit scheme, before the `1/sqrt(dim)` correction.
pub const CFL: f64 = 0.9;
/// Smallest accepted number of nodes along any axis.
pub const MIN_NODES: usize = 16;

/// A node on the boundary, in perimeter order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryNode {
    /// Index into the flat node array.
    pub node: usize,
    /// Position along the perimeter (2D) or the endpoint coordinate (1D).
    pub arclength: f64,
    /// Unit inward normal. Corners use the normalized bisector.
    pub normal: [f64; 2],
    /// Euclidean dual boundary measure attached to the node.
    pub measure: f64,
    /// Straight edge id (0 bottom, 1 right, 2 top, 3 left; 1D: 0 left, 1 right).
    pub edge: usize,
    pub corner: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    dim: usize,
    extents: [f64; 2],
    shape: [usize; 2],
    h: f64,
    dt: f64,
    n_steps: usize,
    horizon: f64,
    boundary: Vec<BoundaryNode>,
    cell_volume: Vec<f64>,
    boundary_slot: Vec<Option<usize>>,
}

/// Builds a grid with `resolution` nodes per axis on `[0, extents[i]]`.
///
/// The time step obeys `dt <= 0.9 h / (sqrt(dim) c_max)` and `2T` is an even
/// multiple of `dt`, so that `T` itself lies on the lattice.
pub fn build_grid(extents: &[f64], resolution: &[usize], horizon: f64, c_max: f64) -> Result<DomainGrid> {
    build_grid_with_steps(extents, resolution, horizon, c_max, None)
}

/// As [`build_grid`] but with an explicit number of steps over `[0, 2T]`.
pub fn build_grid_with_steps(
    extents: &[f64],
    resolution: &[usize],
    horizon: f64,
    c_max: f64,
    n_steps: Option<usize>,
) -> Result<DomainGrid> {
    let dim = extents.len();
    if dim != 1 && dim != 2 {
        return Err(Error::Grid(format!("dimension must be 1 or 2, got {dim}")));
    }
    if resolution.len() != dim {
        return Err(Error::Grid(format!(
            "resolution has {} entries for a {dim}D domain",
            resolution.len()
        )));
    }
    if let Some(&n) = resolution.iter().find(|&&n| n < MIN_NODES) {
        return Err(Error::Grid(format!("resolution {n} is below the minimum of {MIN_NODES} nodes")));
    }
    if extents.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
        return Err(Error::Grid("extents must be positive".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Grid("horizon must be positive".into()));
    }
    if !(c_max.is_finite() && c_max > 0.0) {
        return Err(Error::Grid("c_max must be positive".into()));
    }
    let h = extents[0] / (resolution[0] - 1) as f64;
    if dim == 2 {
        let hy = extents[1] / (resolution[1] - 1) as f64;
        if (hy - h).abs() > 1e-9 * h {
            return Err(Error::Grid(format!("cells must be square: hx = {h}, hy = {hy}")));
        }
    }
    let dt_max = CFL / (dim as f64).sqrt() * h / c_max;
    let n_steps = match n_steps {
        Some(n) => {
            if n == 0 || n % 2 != 0 {
                return Err(Error::Grid(format!("step count {n} must be positive and even")));
            }
            if 2.0 * horizon / n as f64 > dt_max * (1.0 + 1e-12) {
                return Err(Error::Grid(format!(
                    "step count {n} violates the CFL bound dt <= {dt_max:.4e}"
                )));
            }
            n
        }
        None => {
            let n = (2.0 * horizon / dt_max).ceil() as usize;
            n + n % 2
        }
    };
    let dt = 2.0 * horizon / n_steps as f64;
    let shape = if dim == 1 { [resolution[0], 1] } else { [resolution[0], resolution[1]] };
    let ext = if dim == 1 { [extents[0], 0.0] } else { [extents[0], extents[1]] };

    let (boundary, cell_volume) = if dim == 1 { layout_1d(shape[0], h) } else { layout_2d(shape, h) };
    let mut boundary_slot = vec![None; shape[0] * shape[1]];
    for (b, node) in boundary.iter().enumerate() {
        boundary_slot[node.node] = Some(b);
    }
    Ok(DomainGrid { dim, extents: ext, shape, h, dt, n_steps, horizon, boundary, cell_volume, boundary_slot })
}

fn layout_1d(n: usize, h: f64) -> (Vec<BoundaryNode>, Vec<f64>) {
    let boundary = vec![
        BoundaryNode { node: 0, arclength: 0.0, normal: [1.0, 0.0], measure: 1.0, edge: 0, corner: false },
        BoundaryNode {
            node: n - 1,
            arclength: (n - 1) as f64 * h,
            normal: [-1.0, 0.0],
            measure: 1.0,
            edge: 1,
            corner: false,
        },
    ];
    let mut vol = vec![h; n];
    vol[0] = 0.5 * h;
    vol[n - 1] = 0.5 * h;
    (boundary, vol)
}

fn layout_2d(shape: [usize; 2], h: f64) -> (Vec<BoundaryNode>, Vec<f64>) {
    let [nx, ny] = shape;
    let idx = |i: usize, j: usize| j * nx + i;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut boundary = Vec::with_capacity(2 * (nx + ny) - 4);
    let mut arc = 0.0;
    let mut push = |node: usize, normal: [f64; 2], edge: usize, corner: bool, arc: f64| {
        boundary.push(BoundaryNode { node, arclength: arc, normal, measure: h, edge, corner });
    };
    for i in 0..nx {
        let corner = i == 0 || i == nx - 1;
        let normal = match i {
            0 => [s, s],
            _ if i == nx - 1 => [-s, s],
            _ => [0.0, 1.0],
        };
        push(idx(i, 0), normal, 0, corner, arc);
        arc += h;
    }
    for j in 1..ny {
        let corner = j == ny - 1;
        let normal = if corner { [-s, -s] } else { [-1.0, 0.0] };
        push(idx(nx - 1, j), normal, 1, corner, arc);
        arc += h;
    }
    for i in (0..nx - 1).rev() {
        let corner = i == 0;
        let normal = if corner { [s, -s] } else { [0.0, -1.0] };
        push(idx(i, ny - 1), normal, 2, corner, arc);
        arc += h;
    }
    for j in (1..ny - 1).rev() {
        push(idx(0, j), [1.0, 0.0], 3, false, arc);
        arc += h;
    }
    let mut vol = vec![h * h; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let fx = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
            let fy = if j == 0 || j == ny - 1 { 0.5 } else { 1.0 };
            vol[idx(i, j)] *= fx * fy;
        }
    }
    (boundary, vol)
}

impl DomainGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }
    /// Nodes per axis; the second entry is 1 in 1D.
    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }
    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }
    pub fn n_nodes(&self) -> usize {
        self.shape[0] * self.shape[1]
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    /// Number of steps covering `[0, 2T]`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    /// Number of time samples `t_k = k dt`, `k = 0..=n_steps`.
    pub fn n_times(&self) -> usize {
        self.n_steps + 1
    }
    /// Index of the sample at `t = T`.
    pub fn mid_step(&self) -> usize {
        self.n_steps / 2
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn boundary(&self) -> &[BoundaryNode] {
        &self.boundary
    }
    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }
    /// Boundary slot of a node, if it lies on the boundary.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }
    /// Euclidean dual cell volume of each node.
    pub fn cell_volume(&self) -> &[f64] {
        &self.cell_volume
    }
    /// Total perimeter (2D) or number of endpoints (1D).
    pub fn boundary_length(&self) -> f64 {
        self.boundary.iter().map(|b| b.measure).sum()
    }
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.shape[0] + i
    }
    /// Axis indices of a flat node index.
    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % self.shape[0], node / self.shape[0])
    }
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(node);
        [i as f64 * self.h, j as f64 * self.h]
    }
    /// Nearest node to a point, clamped into the domain.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let clamp = |v: f64, n: usize| ((v / self.h).round().max(0.0) as usize).min(n - 1);
        let i = clamp(x[0], self.shape[0]);
        let j = if self.dim == 2 { clamp(x[1], self.shape[1]) } else { 0 };
        self.node_index(i, j)
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
    /// Sample index nearest to time `t`, clamped to the lattice.
    pub fn time_index(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }
    pub fn contains(&self, x: &[f64]) -> bool {
        let tol = 1e-12 * self.h;
        (0..self.dim).all(|a| x[a] >= -tol && x[a] <= self.extents[a] + tol)
    }
    /// Perimeter distance between two boundary slots (2D wraps around; 1D is the coordinate gap).
    pub fn boundary_separation(&self, a: usize, b: usize) -> f64 {
        let d = (self.boundary[a].arclength - self.boundary[b].arclength).abs();
        if self.dim == 2 {
            let per = self.boundary_length();
            d.min(per - d)
        } else {
            d
        }
    }
    /// Euclidean distance between two nodes.
    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.coords(a), self.coords(b));
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cfl_bound_1d() {
        let g = build_grid(&[1.0], &[256], 1.5, 2.0).unwrap();
        assert!(g.dt() <= 0.9 * g.h() / 2.0 + 1e-15);
        assert_eq!(g.n_steps() % 2, 0);
        assert!((g.time(g.mid_step()) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cfl_bound_2d() {
        let g = build_grid(&[1.0, 1.0], &[33, 33], 0.7, 1.3).unwrap();
        assert!(g.dt() <= 0.9 / 2f64.sqrt() * g.h() / 1.3 + 1e-15);
        assert_eq!(g.n_boundary(), 4 * 32);
        assert!((g.boundary_length() - 4.0).abs() < 1e-12);
        let vol: f64 = g.cell_volume().iter().sum();
        assert!((vol - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_coarse_grid() {
        assert!(matches!(build_grid(&[1.0], &[8], 1.0, 1.0), Err(Error::Grid(_))));
    }

    #[test]
    fn rejects_non_square_cells() {
        assert!(build_grid(&[1.0, 2.0], &[33, 33], 1.0, 1.0).is_err());
        assert!(build_grid(&[1.0, 2.0], &[33, 65], 1.0, 1.0).is_ok());
    }

    #[test]
    fn explicit_steps_checked() {
        assert!(build_grid_with_steps(&[1.0], &[65], 1.0, 1.0, Some(143)).is_err());
        assert!(build_grid_with_steps(&[1.0], &[65], 1.0, 1.0, Some(100)).is_err());
        let g = build_grid_with_steps(&[1.0], &[65], 1.0, 1.0, Some(200)).unwrap();
        assert_eq!(g.n_times(), 201);
    }

    #[test]
    fn perimeter_order_is_closed() {
        let g = build_grid(&[1.0, 1.0], &[17, 17], 1.0, 1.0).unwrap();
        let b = g.boundary();
        for w in b.windows(2) {
            assert!((g.node_distance(w[0].node, w[1].node) - g.h()).abs() < 1e-12);
        }
        assert!((g.node_distance(b[0].node, b[b.len() - 1].node) - g.h()).abs() < 1e-12);
        assert!((g.boundary_separation(0, b.len() - 1) - g.h()).abs() < 1e-12);
    }
}
