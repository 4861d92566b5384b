//! Time reversal `R`, the time filter `J` and window projectors `P_B` on boundary signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::signal::{BoundaryLattice, BoundarySignal};

/// Which of the two time filters to use.
///
/// `Causal` is `(Jf)(t) = 1/2 int_0^{min(t, 2T-t)} f(s) ds`;
/// `Anticausal` is its adjoint `(Jf)(t) = 1/2 int_t^{2T-t} f(s) ds` for `t < T`, zero after.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterVariant {
    Causal,
    Anticausal,
}

impl FilterVariant {
    pub fn name(self) -> &'static str {
        match self {
            FilterVariant::Causal => "causal",
            FilterVariant::Anticausal => "anticausal",
        }
    }
}

impl std::str::FromStr for FilterVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(FilterVariant::Causal),
            "anticausal" => Ok(FilterVariant::Anticausal),
            other => Err(Error::Invalid(format!("unknown filter variant '{other}'"))),
        }
    }
}

/// `(Rf)(t) = f(2T - t)`.
pub fn time_reverse(f: &BoundarySignal) -> BoundarySignal {
    let mut out = f.clone();
    for b in 0..f.n_boundary() {
        out.row_mut(b).reverse();
    }
    out
}

/// Applies the time filter with lattice spacing `dt`.
///
/// The quadrature is the causal trapezoid rule: half weight at the upper
/// limit, full weight at `s = 0`.  With it the two variants are exact
/// transposes of each other and `J + J*` equals `R` times the causal
/// trapezoid integral, which keeps the connecting operator symmetric.
pub fn time_filter(f: &BoundarySignal, dt: f64, variant: FilterVariant) -> BoundarySignal {
    let mut out = BoundarySignal::zeros(f.n_boundary(), f.n_times());
    for b in 0..f.n_boundary() {
        match variant {
            FilterVariant::Causal => filter_causal(f.row(b), out.row_mut(b), dt),
            FilterVariant::Anticausal => filter_anticausal(f.row(b), out.row_mut(b), dt),
        }
    }
    out
}

fn filter_causal(g: &[f64], out: &mut [f64], dt: f64) {
    let nt = g.len();
    let n2 = nt - 1;
    let mid = n2 / 2;
    let mut prefix = vec![0.0; nt + 1];
    for k in 0..nt {
        prefix[k + 1] = prefix[k] + g[k];
    }
    for k in 0..nt {
        let top = k.min(n2 - k);
        let w = if k == mid { 0.25 } else { 0.5 };
        out[k] = 0.5 * dt * (prefix[top] + w * g[top]);
    }
}

fn filter_anticausal(g: &[f64], out: &mut [f64], dt: f64) {
    let nt = g.len();
    let n2 = nt - 1;
    let mid = n2 / 2;
    let mut prefix = vec![0.0; nt + 1];
    for k in 0..nt {
        prefix[k + 1] = prefix[k] + g[k];
    }
    for n in 0..mid {
        let full = prefix[n2 - n + 1] - prefix[n];
        out[n] = 0.5 * dt * (full - 0.5 * g[n] - 0.5 * g[n2 - n]);
    }
    out[mid] = 0.5 * dt * 0.25 * g[mid];
}

/// Windows `Gamma_j x [T - T_j, T]` by boundary slot and length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorSpec {
    pub windows: Vec<(Vec<usize>, f64)>,
}

impl ProjectorSpec {
    pub fn new(windows: Vec<(Vec<usize>, f64)>) -> Self {
        Self { windows }
    }
    /// A single window on all of `gamma`.
    pub fn single(gamma: Vec<usize>, len: f64) -> Self {
        Self { windows: vec![(gamma, len)] }
    }
    /// The whole boundary over `[T - len, T]`.
    pub fn full_boundary(grid: &DomainGrid, len: f64) -> Self {
        Self::single((0..grid.n_boundary()).collect(), len)
    }
    /// Adds the windows of `other`.
    pub fn union(&self, other: &ProjectorSpec) -> ProjectorSpec {
        let mut w = self.windows.clone();
        w.extend(other.windows.iter().cloned());
        ProjectorSpec { windows: w }
    }
}

/// Lattice mask of a [`ProjectorSpec`].
/// Number of lattice steps spanned by a window of length `len` ending at `T`.
pub fn window_samples(len: f64, dt: f64) -> usize {
    (len / dt + 1e-9).floor() as usize
}

/// Window length as seen by the lattice: `len` rounded down to a whole number of steps.
pub fn realized_window(len: f64, dt: f64) -> f64 {
    window_samples(len, dt) as f64 * dt
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    mask: Vec<bool>,
    n_times: usize,
}

impl Projector {
    /// A sample `(b, t_k)` is kept when `b` lies in some `Gamma_j` and `T - T_j <= t_k <= T`.
    pub fn new(spec: &ProjectorSpec, lattice: &BoundaryLattice) -> Result<Self> {
        let (nb, nt) = (lattice.n_boundary(), lattice.n_times());
        let mid = lattice.mid_step();
        let dt = lattice.dt();
        let mut mask = vec![false; nb * nt];
        for (gamma, len) in &spec.windows {
            if !(len.is_finite() && *len >= 0.0) {
                return Err(Error::Invalid(format!("window length must be non-negative, got {len}")));
            }
            let first = mid.saturating_sub(window_samples(*len, dt));
            for &b in gamma {
                if b >= nb {
                    return Err(Error::Invalid(format!("boundary slot {b} out of range")));
                }
                for k in first..=mid {
                    mask[b * nt + k] = true;
                }
            }
        }
        Ok(Self { mask, n_times: nt })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn apply(&self, f: &BoundarySignal) -> BoundarySignal {
        let mut out = f.clone();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, f: &mut BoundarySignal) {
        for (v, &m) in f.values_mut().iter_mut().zip(&self.mask) {
            if !m {
                *v = 0.0;
            }
        }
    }
}

/// Zeroes `f` outside the windows of `spec`.
pub fn project(f: &BoundarySignal, spec: &ProjectorSpec, lattice: &BoundaryLattice) -> Result<BoundarySignal> {
    lattice.check(f)?;
    Ok(Projector::new(spec, lattice)?.apply(f))
}

/// `sum f h dS_g dt` over the lattice.
pub fn inner_product_boundary(lattice: &BoundaryLattice, f: &BoundarySignal, h: &BoundarySignal) -> Result<f64> {
    lattice.check(f)?;
    f.check_shape(h)?;
    Ok(lattice.inner(f, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(nb: usize, nt: usize, dt: f64) -> BoundaryLattice {
        BoundaryLattice::from_parts(vec![1.0; nb], dt, nt)
    }

    #[test]
    fn causal_filter_of_constant() {
        let nt = 201;
        let dt = 0.01;
        let f = BoundarySignal::from_fn(1, nt, |_, _| 1.0);
        let j = time_filter(&f, dt, FilterVariant::Causal);
        for k in 0..nt {
            let t = k as f64 * dt;
            let exact = 0.5 * t.min(2.0 - t);
            assert!((j.get(0, k) - exact).abs() <= dt, "k = {k}");
        }
    }

    #[test]
    fn anticausal_filter_of_constant() {
        let nt = 201;
        let dt = 0.01;
        let f = BoundarySignal::from_fn(1, nt, |_, _| 1.0);
        let j = time_filter(&f, dt, FilterVariant::Anticausal);
        for k in 0..100 {
            let t = k as f64 * dt;
            assert!((j.get(0, k) - (1.0 - t)).abs() < 1e-12);
        }
        for k in 101..nt {
            assert_eq!(j.get(0, k), 0.0);
        }
    }

    #[test]
    fn variants_are_adjoint() {
        let nt = 41;
        let lat = lattice(2, nt, 0.05);
        let f = BoundarySignal::from_fn(2, nt, |b, k| ((b * 7 + k * 3) % 11) as f64 - 5.0);
        let g = BoundarySignal::from_fn(2, nt, |b, k| ((b * 5 + k * 13) % 17) as f64 - 8.0);
        let a = lat.inner(&time_filter(&f, 0.05, FilterVariant::Causal), &g);
        let b = lat.inner(&f, &time_filter(&g, 0.05, FilterVariant::Anticausal));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn reverse_is_involution() {
        let f = BoundarySignal::from_fn(3, 9, |b, k| (b * 9 + k) as f64);
        assert_eq!(time_reverse(&time_reverse(&f)), f);
        assert_eq!(time_reverse(&f).get(1, 0), f.get(1, 8));
    }

    #[test]
    fn projector_windows() {
        let lat = lattice(3, 21, 0.1);
        let spec = ProjectorSpec::new(vec![(vec![0], 0.5), (vec![2], 1.0)]);
        let p = Projector::new(&spec, &lat).unwrap();
        let f = BoundarySignal::from_fn(3, 21, |_, _| 1.0);
        let pf = p.apply(&f);
        let kept: Vec<usize> = (0..21).filter(|&k| pf.get(0, k) != 0.0).collect();
        assert_eq!(kept, vec![5, 6, 7, 8, 9, 10]);
        assert!((0..21).all(|k| pf.get(1, k) == 0.0));
        assert_eq!((0..21).filter(|&k| pf.get(2, k) != 0.0).count(), 11);
        assert_eq!(p.apply(&pf), pf);
    }

    #[test]
    fn boundary_inner_product_weights() {
        let lat = BoundaryLattice::from_parts(vec![0.5, 2.0], 0.1, 3);
        let f = BoundarySignal::from_fn(2, 3, |_, _| 1.0);
        assert!((inner_product_boundary(&lat, &f, &f).unwrap() - 0.75).abs() < 1e-12);
        let g = BoundarySignal::zeros(2, 4);
        assert!(inner_product_boundary(&lat, &f, &g).is_err());
    }
}
