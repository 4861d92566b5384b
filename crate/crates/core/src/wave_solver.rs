//! Explicit leapfrog solver for the boundary-driven wave equation with zero initial data.
//!
//! The semi-discretization is lumped-mass finite volumes:
//! `M u'' + S u + (q M + eta W) u = W f` on the boundary nodes, where `M` holds
//! `c^-m` times the dual cell volume, `S` comes from `int c^(2-m) |grad u|^2`
//! and `W` holds the surface weights `c^(1-m) dS`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::medium::MediumSpec;
use crate::signal::BoundarySignal;

/// Field values at all nodes at one time sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveSnapshot {
    pub step: usize,
    pub time: f64,
    pub values: Vec<f64>,
}

/// Trace and requested snapshots of one forward solve.
#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub trace: BoundarySignal,
    pub snapshots: Vec<WaveSnapshot>,
}

/// Ratio of field norm to source norm that counts as a blow-up.
const BLOWUP: f64 = 1e6;

/// Precomputed stencil for one grid and medium.
#[derive(Clone, Debug)]
pub struct WaveSolver {
    shape: [usize; 2],
    dt: f64,
    n_steps: usize,
    /// `dt^2 / M`.
    step_scale: Vec<f64>,
    /// `q M + eta W`.
    diag: Vec<f64>,
    /// Edge conductances along x, `(nx - 1) * ny` entries.
    wx: Vec<f64>,
    /// Edge conductances along y, `nx * (ny - 1)` entries.
    wy: Vec<f64>,
    boundary_nodes: Vec<usize>,
    surface: Vec<f64>,
    mass: Vec<f64>,
}

impl WaveSolver {
    pub fn new(grid: &DomainGrid, medium: &MediumSpec) -> Result<Self> {
        if medium.c().len() != grid.n_nodes() || medium.eta().len() != grid.n_boundary() {
            return Err(Error::Shape("medium does not match grid".into()));
        }
        let m = grid.dim() as i32;
        let [nx, ny] = grid.shape();
        let c = medium.c();
        let mass = medium.volume_weights(grid);
        let surface = medium.surface_weights(grid);
        let boundary_nodes: Vec<usize> = grid.boundary().iter().map(|b| b.node).collect();
        let mut diag: Vec<f64> = mass.iter().zip(medium.q()).map(|(mm, q)| q * mm).collect();
        for (b, &node) in boundary_nodes.iter().enumerate() {
            diag[node] += medium.eta()[b] * surface[b];
        }
        let face = |a: usize, b: usize| 0.5 * (c[a] + c[b]);
        let (wx, wy) = if m == 1 {
            let h = grid.h();
            ((0..nx - 1).map(|i| face(i, i + 1) / h).collect(), Vec::new())
        } else {
            // c^(2-m) = 1 in 2D; boundary rows and columns carry half-length faces.
            let half = |k: usize, n: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            let mut wx = Vec::with_capacity((nx - 1) * ny);
            for j in 0..ny {
                for _ in 0..nx - 1 {
                    wx.push(half(j, ny));
                }
            }
            let mut wy = Vec::with_capacity(nx * (ny - 1));
            for _ in 0..ny - 1 {
                for i in 0..nx {
                    wy.push(half(i, nx));
                }
            }
            (wx, wy)
        };
        let dt = grid.dt();
        let step_scale = mass.iter().map(|mm| dt * dt / mm).collect();
        Ok(Self {
            shape: [nx, ny],
            dt,
            n_steps: grid.n_steps(),
            step_scale,
            diag,
            wx,
            wy,
            boundary_nodes,
            surface,
            mass,
        })
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary_nodes.len()
    }
    pub fn n_times(&self) -> usize {
        self.n_steps + 1
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    /// Lumped Riemannian mass `c^-m dV` per node.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `acc = -(S + diag) u`.
    fn apply_stiffness(&self, u: &[f64], acc: &mut [f64]) {
        let [nx, ny] = self.shape;
        for (a, (d, v)) in acc.iter_mut().zip(self.diag.iter().zip(u)) {
            *a = -d * v;
        }
        for j in 0..ny {
            let row = j * nx;
            let w = &self.wx[j * (nx - 1)..(j + 1) * (nx - 1)];
            for i in 0..nx - 1 {
                let flux = w[i] * (u[row + i + 1] - u[row + i]);
                acc[row + i] += flux;
                acc[row + i + 1] -= flux;
            }
        }
        for j in 0..ny.saturating_sub(1) {
            let row = j * nx;
            let w = &self.wy[row..row + nx];
            for i in 0..nx {
                let flux = w[i] * (u[row + nx + i] - u[row + i]);
                acc[row + i] += flux;
                acc[row + nx + i] -= flux;
            }
        }
    }

    /// Runs the scheme over `[0, 2T]` and returns the boundary trace plus snapshots at `snapshot_steps`.
    pub fn solve(&self, f: &BoundarySignal, snapshot_steps: &[usize]) -> Result<ForwardSolution> {
        self.solve_inner(f, snapshot_steps, None)
    }

    /// As [`WaveSolver::solve`], also recording the discrete energy at every step.
    pub fn solve_with_energy(&self, f: &BoundarySignal) -> Result<(ForwardSolution, Vec<f64>)> {
        let mut energy = Vec::with_capacity(self.n_steps);
        let sol = self.solve_inner(f, &[], Some(&mut energy))?;
        Ok((sol, energy))
    }

    fn solve_inner(
        &self,
        f: &BoundarySignal,
        snapshot_steps: &[usize],
        mut energy: Option<&mut Vec<f64>>,
    ) -> Result<ForwardSolution> {
        let nb = self.n_boundary();
        let nt = self.n_times();
        if f.n_boundary() != nb || f.n_times() != nt {
            return Err(Error::Shape(format!(
                "source is {} x {}, lattice is {nb} x {nt}",
                f.n_boundary(),
                f.n_times()
            )));
        }
        if !f.is_finite() {
            return Err(Error::Invalid("source contains non-finite values".into()));
        }
        if let Some(&s) = snapshot_steps.iter().find(|&&s| s >= nt) {
            return Err(Error::Invalid(format!("snapshot step {s} beyond the last sample {}", nt - 1)));
        }
        let n = self.mass.len();
        let mut prev = vec![0.0; n];
        let mut cur = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut trace = BoundarySignal::zeros(nb, nt);
        let mut snapshots = Vec::new();
        let src_scale = f.max_abs();
        let mut kcur = vec![0.0; n];
        for step in 0..=self.n_steps {
            for (b, &node) in self.boundary_nodes.iter().enumerate() {
                trace.set(b, step, cur[node]);
            }
            if snapshot_steps.contains(&step) {
                snapshots.push(WaveSnapshot { step, time: step as f64 * self.dt, values: cur.clone() });
            }
            if step == self.n_steps {
                break;
            }
            self.apply_stiffness(&cur, &mut acc);
            for (b, &node) in self.boundary_nodes.iter().enumerate() {
                acc[node] += self.surface[b] * f.get(b, step);
            }
            for i in 0..n {
                let next = 2.0 * cur[i] - prev[i] + self.step_scale[i] * acc[i];
                prev[i] = cur[i];
                cur[i] = next;
            }
            if let Some(e) = energy.as_deref_mut() {
                // E^{n+1/2} = 1/2 |(u^{n+1} - u^n)/dt|_M^2 + 1/2 <(S + diag) u^{n+1}, u^n>.
                let mut kin = 0.0;
                let mut pot = 0.0;
                self.apply_stiffness(&cur, &mut kcur);
                for i in 0..n {
                    let v = (cur[i] - prev[i]) / self.dt;
                    kin += self.mass[i] * v * v;
                    pot -= kcur[i] * prev[i];
                }
                e.push(0.5 * (kin + pot));
            }
            if step % 64 == 63 {
                let norm = cur.iter().zip(&self.mass).map(|(u, m)| u * u * m).sum::<f64>().sqrt();
                if !norm.is_finite() || norm > BLOWUP * (src_scale + f64::MIN_POSITIVE) {
                    return Err(Error::Unstable { step: step + 1, norm });
                }
            }
        }
        Ok(ForwardSolution { trace, snapshots })
    }
}

/// Boundary trace and snapshots for source `f` with zero initial data.
pub fn solve_forward(
    grid: &DomainGrid,
    medium: &MediumSpec,
    f: &BoundarySignal,
    snapshot_steps: &[usize],
) -> Result<ForwardSolution> {
    WaveSolver::new(grid, medium)?.solve(f, snapshot_steps)
}

/// Solution at `T` for the source `f_tt`, using a second difference with zero padding.
pub fn solve_source_timederiv(grid: &DomainGrid, medium: &MediumSpec, f: &BoundarySignal) -> Result<WaveSnapshot> {
    let ftt = second_difference(f, grid.dt());
    let mut sol = solve_forward(grid, medium, &ftt, &[grid.mid_step()])?;
    Ok(sol.snapshots.remove(0))
}

/// `(f[k+1] - 2 f[k] + f[k-1]) / dt^2` with `f[-1] = f[n] = 0`.
pub fn second_difference(f: &BoundarySignal, dt: f64) -> BoundarySignal {
    let nt = f.n_times();
    BoundarySignal::from_fn(f.n_boundary(), nt, |b, k| {
        let r = f.row(b);
        let prev = if k > 0 { r[k - 1] } else { 0.0 };
        let next = if k + 1 < nt { r[k + 1] } else { 0.0 };
        (next - 2.0 * r[k] + prev) / (dt * dt)
    })
}

/// `sum w1 w2 c^-m dV` over the nodes.
pub fn inner_product_volume(grid: &DomainGrid, medium: &MediumSpec, w1: &[f64], w2: &[f64]) -> Result<f64> {
    if w1.len() != grid.n_nodes() || w2.len() != grid.n_nodes() {
        return Err(Error::Shape(format!(
            "fields have {} and {} values on {} nodes",
            w1.len(),
            w2.len(),
            grid.n_nodes()
        )));
    }
    let m = medium.volume_weights(grid);
    Ok(w1.iter().zip(w2).zip(&m).map(|((a, b), w)| a * b * w).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn bump(t: f64, t0: f64, w: f64) -> f64 {
        let s = (t - t0) / w;
        if s.abs() < 1.0 {
            (1.0 - s * s).powi(4)
        } else {
            0.0
        }
    }

    #[test]
    fn zero_source_gives_zero_field() {
        let g = build_grid(&[1.0, 1.0], &[17, 17], 0.5, 1.0).unwrap();
        let m = MediumSpec::homogeneous(&g, 1.0).unwrap();
        let f = BoundarySignal::zeros(g.n_boundary(), g.n_times());
        let sol = solve_forward(&g, &m, &f, &[g.mid_step()]).unwrap();
        assert!(sol.trace.values().iter().all(|&v| v == 0.0));
        assert!(sol.snapshots[0].values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_dimensional_pulse_travels_at_unit_speed() {
        // A Neumann flux -u_x(0) = f gives u(x, t) = int_0^{t-x} f for t < 1 + x.
        let g = build_grid(&[1.0], &[401], 0.5, 1.0).unwrap();
        let m = MediumSpec::homogeneous(&g, 1.0).unwrap();
        let f = BoundarySignal::from_fn(2, g.n_times(), |b, k| if b == 0 { bump(g.time(k), 0.15, 0.1) } else { 0.0 });
        let sol = solve_forward(&g, &m, &f, &[g.mid_step()]).unwrap();
        let u = &sol.snapshots[0].values;
        let total: f64 = (0..g.n_times()).map(|k| f.get(0, k) * g.dt()).sum();
        assert!((u[0] - total).abs() < 1e-3 * total);
        assert!(u[300].abs() < 1e-6, "ahead of the front: {}", u[300]);
    }

    #[test]
    fn energy_is_conserved_after_source() {
        let g = build_grid(&[1.0, 1.0], &[25, 25], 1.0, 1.2).unwrap();
        let m = MediumSpec::from_fn(&g, |x| 1.0 + 0.2 * x[0], |_| 0.0, |_| 0.0).unwrap();
        let nb = g.n_boundary();
        let f = BoundarySignal::from_fn(nb, g.n_times(), |b, k| if b < 5 { bump(g.time(k), 0.2, 0.15) } else { 0.0 });
        let solver = WaveSolver::new(&g, &m).unwrap();
        let (_, e) = solver.solve_with_energy(&f).unwrap();
        let off = g.time_index(0.4);
        let e0 = e[off];
        assert!(e0 > 0.0);
        let drift = e[off..].iter().map(|v| (v - e0).abs()).fold(0.0, f64::max) / e0;
        assert!(drift < 1e-10, "drift {drift}");
    }

    #[test]
    fn robin_term_keeps_energy_bounded() {
        let g = build_grid(&[1.0], &[65], 2.0, 1.0).unwrap();
        let m = MediumSpec::from_fn(&g, |_| 1.0, |_| 0.0, |_| 1.0).unwrap();
        let f = BoundarySignal::from_fn(2, g.n_times(), |b, k| if b == 0 { bump(g.time(k), 0.2, 0.15) } else { 0.0 });
        let (_, e) = WaveSolver::new(&g, &m).unwrap().solve_with_energy(&f).unwrap();
        let off = g.time_index(0.4);
        let max = e[off..].iter().cloned().fold(0.0, f64::max);
        assert!(max.is_finite() && max <= 1.01 * e[off]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let g = build_grid(&[1.0], &[32], 0.5, 1.0).unwrap();
        let m = MediumSpec::homogeneous(&g, 1.0).unwrap();
        let f = BoundarySignal::zeros(2, g.n_times() + 1);
        assert!(matches!(solve_forward(&g, &m, &f, &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn cfl_violation_blows_up() {
        use crate::grid::build_grid_with_steps;
        // A grid built for c_max = 1 driven through a medium with c = 3.
        let g = build_grid_with_steps(&[1.0], &[65], 1.0, 1.0, Some(150)).unwrap();
        let m = MediumSpec::homogeneous(&g, 3.0).unwrap();
        let f = BoundarySignal::from_fn(2, g.n_times(), |b, k| if b == 0 && k == 1 { 1.0 } else { 0.0 });
        assert!(matches!(solve_forward(&g, &m, &f, &[]), Err(Error::Unstable { .. })));
    }
}
