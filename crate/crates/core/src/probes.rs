//! Smooth test sources on the boundary lattice.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::grid::DomainGrid;
use crate::signal::BoundarySignal;

/// `(1 - s^2)^4` on `|s| < 1` with `s = (t - t0) / w`; three times differentiable.
pub fn bump(t: f64, t0: f64, w: f64) -> f64 {
    let s = (t - t0) / w;
    if s.abs() < 1.0 {
        (1.0 - s * s).powi(4)
    } else {
        0.0
    }
}

/// A random source that is smooth in time, supported in `[t_lo, t_hi]`, and smooth along the boundary.
///
/// Each of two terms is a bump in time times a random spatial profile: an
/// independent amplitude per endpoint in 1D, a few low Fourier modes of the
/// perimeter arclength in 2D.
pub fn random_smooth_source<R: Rng>(grid: &DomainGrid, rng: &mut R, t_lo: f64, t_hi: f64) -> BoundarySignal {
    let nb = grid.n_boundary();
    let nt = grid.n_times();
    let span = t_hi - t_lo;
    let w = 0.25 * span;
    let mut f = BoundarySignal::zeros(nb, nt);
    for _ in 0..2 {
        let t0 = t_lo + w + rng.random::<f64>() * (span - 2.0 * w);
        let profile: Vec<f64> = if grid.dim() == 1 {
            (0..nb).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        } else {
            let per = grid.boundary_length();
            let modes: Vec<(f64, f64, f64)> = (0..3)
                .map(|m| {
                    let a: f64 = rng.sample(StandardNormal);
                    let p = rng.random::<f64>() * std::f64::consts::TAU;
                    (m as f64, a, p)
                })
                .collect();
            grid.boundary()
                .iter()
                .map(|b| {
                    let s = b.arclength / per * std::f64::consts::TAU;
                    modes.iter().map(|(m, a, p)| a * (m * s + p).cos()).sum()
                })
                .collect()
        };
        for (b, amp) in profile.iter().enumerate() {
            for k in 0..nt {
                let v = f.get(b, k) + amp * bump(grid.time(k), t0, w);
                f.set(b, k, v);
            }
        }
    }
    f
}

/// `g(t)` on one boundary slot, zero elsewhere.
pub fn single_node_source(grid: &DomainGrid, slot: usize, g: impl Fn(f64) -> f64) -> BoundarySignal {
    BoundarySignal::from_fn(grid.n_boundary(), grid.n_times(), |b, k| if b == slot { g(grid.time(k)) } else { 0.0 })
}
