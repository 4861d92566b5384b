//! Travel-time distances from boundary data: the four-window condition test, bisection for
//! `d(x, y)`, boundary distance functions, first-arrival maps and boundary wave speed.

use serde::{Deserialize, Serialize};

use crate::boundary_ops::{Projector, ProjectorSpec};
use crate::connecting::blago_inner_product;
use crate::error::{Error, Result};
use crate::focusing::patch;
use crate::grid::DomainGrid;
use crate::measurement::MeasurementOracle;
use crate::medium::{domain_of_influence, MediumSpec};
use crate::probes::bump;
use crate::ptr::{ptr_iterate, IterationConfig};
use crate::signal::BoundarySignal;

/// Geometry of a distance query for `x = gamma_z(t1)` and the boundary point `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceQuery {
    pub z: usize,
    pub y: usize,
    pub t1: f64,
    /// Perimeter radius of the patches `Gamma` around `z` and `Sigma` around `y` (ignored in 1D).
    pub patch_radius: f64,
    /// Thickness removed below `t1` in the third window.
    pub eps: f64,
    /// Decision threshold relative to `<K f0, f0>`.
    pub theta: f64,
}

impl DistanceQuery {
    pub fn new(z: usize, y: usize, t1: f64, eps: f64) -> Self {
        Self { z, y, t1, patch_radius: 0.0, eps, theta: 1e-3 }
    }

    fn validate(&self, grid: &DomainGrid) -> Result<()> {
        let nb = grid.n_boundary();
        if self.z >= nb || self.y >= nb {
            return Err(Error::Invalid("query slot out of range".into()));
        }
        if !(self.eps > 0.0 && self.eps < self.t1 && self.t1 < grid.horizon()) {
            return Err(Error::Invalid(format!(
                "need 0 < eps < t1 < T, got eps = {}, t1 = {}",
                self.eps, self.t1
            )));
        }
        if !(self.theta > 0.0) {
            return Err(Error::Invalid("threshold must be positive".into()));
        }
        Ok(())
    }

    fn gamma(&self, grid: &DomainGrid) -> Vec<usize> {
        patch(grid, self.z, self.patch_radius)
    }

    fn sigma(&self, grid: &DomainGrid) -> Vec<usize> {
        patch(grid, self.y, self.patch_radius)
    }

    /// Windows `B1 = Gamma x [T-t1, T]`, `B2 = Sigma x [T-tau, T]`, `B3 = boundary x [T-(t1-eps), T]`.
    fn base_windows(&self, grid: &DomainGrid, tau: f64) -> [ProjectorSpec; 3] {
        [
            ProjectorSpec::single(self.gamma(grid), self.t1),
            ProjectorSpec::single(self.sigma(grid), tau),
            ProjectorSpec::full_boundary(grid, self.t1 - self.eps),
        ]
    }
}

/// One evaluation of the condition at a given `tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub tau: f64,
    pub holds: bool,
    /// `<K p, p> / <K f0, f0>`.
    pub value: f64,
    /// Value within `[theta/2, 2 theta]`.
    pub indeterminate: bool,
}

/// Evaluates the condition for one query, caching the two `tau`-independent controls.
pub struct ConditionTester<'a> {
    oracle: &'a MeasurementOracle,
    grid: &'a DomainGrid,
    f0: BoundarySignal,
    query: DistanceQuery,
    config: IterationConfig,
    scale: f64,
    h1: BoundarySignal,
    h4: BoundarySignal,
}

impl<'a> ConditionTester<'a> {
    pub fn new(
        oracle: &'a MeasurementOracle,
        grid: &'a DomainGrid,
        f0: &BoundarySignal,
        query: &DistanceQuery,
        config: &IterationConfig,
    ) -> Result<Self> {
        query.validate(grid)?;
        let scale = blago_inner_product(oracle, f0, f0, config.convention)?;
        let [b1, _, b3] = query.base_windows(grid, 0.0);
        let mut tester = Self {
            oracle,
            grid,
            f0: f0.clone(),
            query: query.clone(),
            config: config.clone(),
            scale,
            h1: oracle.lattice().zeros(),
            h4: oracle.lattice().zeros(),
        };
        if scale > 0.0 {
            tester.h1 = tester.control(&b1.union(&b3))?;
            tester.h4 = tester.control(&b3)?;
        }
        Ok(tester)
    }

    fn control(&self, windows: &ProjectorSpec) -> Result<BoundarySignal> {
        let p = Projector::new(windows, self.oracle.lattice())?;
        let r = ptr_iterate(self.oracle, &self.f0, &p, &self.config, None)?;
        if !r.converged {
            return Err(Error::Numerical(format!(
                "control iteration stopped after {} steps at residual {:.3e}",
                r.iterations, r.residual
            )));
        }
        Ok(r.h)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `p = h1 + h2 - h3 - h4` and the test value `<K p, p> / <K f0, f0>`.
    pub fn test(&self, tau: f64) -> Result<ConditionOutcome> {
        if self.scale <= 0.0 {
            return Ok(ConditionOutcome { tau, holds: false, value: 0.0, indeterminate: false });
        }
        let [b1, b2, b3] = self.query.base_windows(self.grid, tau);
        let h2 = self.control(&b2.union(&b3))?;
        let h3 = self.control(&b1.union(&b2).union(&b3))?;
        let mut p = self.h1.add(&h2);
        p.axpy(-1.0, &h3);
        p.axpy(-1.0, &self.h4);
        let value = blago_inner_product(self.oracle, &p, &p, self.config.convention)? / self.scale;
        let theta = self.query.theta;
        Ok(ConditionOutcome {
            tau,
            holds: value.abs() > theta,
            value,
            indeterminate: value.abs() >= 0.5 * theta && value.abs() <= 2.0 * theta,
        })
    }
}

/// Single evaluation of the condition at `tau`.
pub fn condition_test(
    oracle: &MeasurementOracle,
    grid: &DomainGrid,
    f0: &BoundarySignal,
    query: &DistanceQuery,
    tau: f64,
    config: &IterationConfig,
) -> Result<ConditionOutcome> {
    ConditionTester::new(oracle, grid, f0, query, config)?.test(tau)
}

/// Inclusion-exclusion check on the indicator fields of the four windows.
///
/// Returns the largest pointwise violation of
/// `chi_I = chi_N1 + chi_N2 - chi_N3 - chi_N4` with
/// `I = (M(Gamma, t1) & M(Sigma, tau)) \ M(boundary, t1 - eps)`.
pub fn chi_identity_violation(grid: &DomainGrid, medium: &MediumSpec, query: &DistanceQuery, tau: f64) -> Result<f64> {
    let all: Vec<usize> = (0..grid.n_boundary()).collect();
    let a = domain_of_influence(grid, medium, &query.gamma(grid), query.t1)?;
    let b = domain_of_influence(grid, medium, &query.sigma(grid), tau)?;
    let c = domain_of_influence(grid, medium, &all, query.t1 - query.eps)?;
    let mut worst: f64 = 0.0;
    for k in 0..grid.n_nodes() {
        let ind = |v: bool| if v { 1.0f64 } else { 0.0 };
        let n1 = ind(a[k] || c[k]);
        let n2 = ind(b[k] || c[k]);
        let n3 = ind(a[k] || b[k] || c[k]);
        let n4 = ind(c[k]);
        let i = ind(a[k] && b[k] && !c[k]);
        worst = worst.max((i - (n1 + n2 - n3 - n4)).abs());
    }
    Ok(worst)
}

/// Result of the bisection for `d(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub estimate: f64,
    /// `(lo, hi)` with the condition false at `lo` and true at `hi`.
    pub bracket: (f64, f64),
    pub trace: Vec<ConditionOutcome>,
    /// True when every decision along the trace is consistent with monotonicity in `tau`.
    pub monotone: bool,
    pub queries: u64,
}

/// Bisection on `tau` in `[0, T]` down to a bracket of width `2 dt`.
pub fn boundary_distance(
    oracle: &MeasurementOracle,
    grid: &DomainGrid,
    f0: &BoundarySignal,
    query: &DistanceQuery,
    config: &IterationConfig,
) -> Result<DistanceEstimate> {
    let start = oracle.query_count();
    let tester = ConditionTester::new(oracle, grid, f0, query, config)?;
    if tester.scale() <= 0.0 {
        return Err(Error::Invalid("base source has no energy".into()));
    }
    let dt = oracle.lattice().dt();
    let (mut lo, mut hi) = (0.0, grid.horizon());
    let mut trace = Vec::new();
    let top = tester.test(hi)?;
    let top_holds = top.holds;
    trace.push(top);
    if !top_holds {
        return Err(Error::Numerical(format!("condition never holds for tau <= T = {hi}")));
    }
    while hi - lo > 2.0 * dt {
        let mid = 0.5 * (lo + hi);
        let out = tester.test(mid)?;
        if out.holds {
            hi = mid;
        } else {
            lo = mid;
        }
        trace.push(out);
    }
    if trace.iter().all(|o| o.indeterminate) {
        return Err(Error::Numerical("condition indeterminate across the bracket".into()));
    }
    let monotone = trace.iter().all(|o| o.holds == (o.tau >= hi));
    let (lo, hi) = widen(&trace, lo, hi);
    Ok(DistanceEstimate {
        estimate: 0.5 * (lo + hi),
        bracket: (lo, hi),
        trace,
        monotone,
        queries: oracle.query_count() - start,
    })
}

/// Stretches `(lo, hi)` over every inconsistent decision: from the smallest `tau`
/// that held to the largest that did not.
fn widen(trace: &[ConditionOutcome], lo: f64, hi: f64) -> (f64, f64) {
    let first_true = trace.iter().filter(|o| o.holds).map(|o| o.tau).fold(hi, f64::min);
    let last_false = trace.iter().filter(|o| !o.holds).map(|o| o.tau).fold(lo, f64::max);
    (lo.min(first_true), hi.max(last_false))
}

/// `r_x(z_i) = d(x, z_i)` for `x = gamma_z(t1)` on a sample of boundary slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDistanceFunction {
    pub z: usize,
    pub t1: f64,
    pub sample: Vec<usize>,
    /// Per sample slot: the distance or the failure message.
    pub values: Vec<std::result::Result<f64, String>>,
}

impl BoundaryDistanceFunction {
    /// Largest `|r(a) - r(b)| - d_ab` over sampled pairs with a known boundary separation `d_ab`.
    pub fn lipschitz_excess(&self, separation: impl Fn(usize, usize) -> f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, a) in self.sample.iter().enumerate() {
            for (j, b) in self.sample.iter().enumerate().skip(i + 1) {
                if let (Ok(ra), Ok(rb)) = (&self.values[i], &self.values[j]) {
                    worst = worst.max((ra - rb).abs() - separation(*a, *b));
                }
            }
        }
        worst
    }
}

pub fn boundary_distance_function(
    oracle: &MeasurementOracle,
    grid: &DomainGrid,
    f0: &BoundarySignal,
    template: &DistanceQuery,
    sample: &[usize],
    config: &IterationConfig,
) -> BoundaryDistanceFunction {
    let values = sample
        .iter()
        .map(|&y| {
            let q = DistanceQuery { y, ..template.clone() };
            boundary_distance(oracle, grid, f0, &q, config).map(|d| d.estimate).map_err(|e| e.to_string())
        })
        .collect();
    BoundaryDistanceFunction { z: template.z, t1: template.t1, sample: sample.to_vec(), values }
}

/// Pairwise first-arrival travel times between boundary slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalMap {
    pub n: usize,
    /// Raw picks `t(source i -> receiver j) - t(i -> i)`, row-major, `NaN` where no arrival.
    pub raw: Vec<f64>,
    /// Symmetrized distances.
    pub distance: Vec<f64>,
    /// Pairs whose arrival was not seen within `2T`.
    pub late: Vec<(usize, usize)>,
}

impl ArrivalMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.distance[i * self.n + j]
    }
    pub fn raw(&self, i: usize, j: usize) -> f64 {
        self.raw[i * self.n + j]
    }
}

/// Fraction of each trace's peak that marks an arrival.
pub const ARRIVAL_THRESHOLD: f64 = 0.05;

/// Default pulse half-width for arrival maps, in time steps.
pub const DEFAULT_PULSE_STEPS: f64 = 8.0;

/// Smooth pulse of half-width `pulse` at each slot, first crossing of 5% of each receiver's peak.
///
/// Picks are taken relative to the source slot's own pick, which removes the
/// pulse rise time.  The pulse must span a few steps or grid dispersion sends
/// precursors ahead of the true front.
pub fn arrival_time_map(oracle: &MeasurementOracle, pulse: f64) -> Result<ArrivalMap> {
    let lat = oracle.lattice();
    let (n, nt, dt) = (lat.n_boundary(), lat.n_times(), lat.dt());
    if !(pulse >= dt && 2.0 * pulse < lat.horizon()) {
        return Err(Error::Invalid(format!("pulse half-width {pulse} must lie in [dt, T/2)")));
    }
    let mut raw = vec![f64::NAN; n * n];
    let mut late = Vec::new();
    for i in 0..n {
        let mut f = lat.zeros();
        for (k, v) in f.row_mut(i).iter_mut().enumerate() {
            *v = bump(k as f64 * dt, pulse, pulse);
        }
        let trace = oracle.apply(&f)?;
        let picks: Vec<Option<f64>> = (0..n).map(|j| first_crossing(trace.row(j), dt)).collect();
        let own = picks[i].unwrap_or(0.0);
        for j in 0..n {
            match picks[j] {
                Some(t) => raw[i * n + j] = (t - own).max(0.0),
                None => late.push((i, j)),
            }
        }
        debug_assert_eq!(trace.n_times(), nt);
    }
    let mut distance = vec![f64::NAN; n * n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (raw[i * n + j], raw[j * n + i]);
            distance[i * n + j] = match (a.is_nan(), b.is_nan()) {
                (false, false) => 0.5 * (a + b),
                (false, true) => a,
                (true, false) => b,
                (true, true) => f64::NAN,
            };
        }
    }
    Ok(ArrivalMap { n, raw, distance, late })
}

fn first_crossing(trace: &[f64], dt: f64) -> Option<f64> {
    let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return None;
    }
    let thr = ARRIVAL_THRESHOLD * peak;
    let k = trace.iter().position(|v| v.abs() >= thr)?;
    if k == 0 {
        return Some(0.0);
    }
    let (a, b) = (trace[k - 1].abs(), trace[k].abs());
    Some(((k - 1) as f64 + (thr - a) / (b - a)) * dt)
}

/// Neighbour offsets used in the slope fit for the boundary speed.
const SPEED_FIT: std::ops::RangeInclusive<usize> = 2..=6;

/// Boundary wave speed from arrival times between nearby boundary points.
///
/// In 1D the only neighbour is the far end, so `c = L / d(0, L)`.  In 2D each
/// slot fits `d = a + s / c` over collinear neighbours two to six cells away
/// on either side; the result is smoothed over three consecutive slots.
pub fn boundary_wavespeed(map: &ArrivalMap, grid: &DomainGrid) -> Result<Vec<f64>> {
    let n = grid.n_boundary();
    if map.n != n {
        return Err(Error::Shape(format!("arrival map has {} slots, grid has {n}", map.n)));
    }
    if grid.dim() == 1 {
        let c = grid.extents()[0] / map.get(0, 1);
        return Ok(vec![c; 2]);
    }
    let b = grid.boundary();
    let ext = grid.extents();
    let on_side = |p: [f64; 2], q: [f64; 2]| {
        let tol = 1e-9 * grid.h();
        let same = |a: f64, b: f64| (a - b).abs() < tol;
        let side = |v: f64, e: f64| same(v, 0.0) || same(v, e);
        (same(p[0], q[0]) && side(p[0], ext[0])) || (same(p[1], q[1]) && side(p[1], ext[1]))
    };
    let mut raw = vec![f64::NAN; n];
    for i in 0..n {
        let pi = grid.coords(b[i].node);
        let mut pts = Vec::new();
        for k in SPEED_FIT {
            for j in [(i + k) % n, (i + n - k % n) % n] {
                let pj = grid.coords(b[j].node);
                let s = grid.node_distance(b[i].node, b[j].node);
                let d = map.get(i, j);
                if on_side(pi, pj) && (s - k as f64 * grid.h()).abs() < 1e-9 && d.is_finite() {
                    pts.push((s, d));
                }
            }
        }
        if pts.len() >= 2 {
            let m = pts.len() as f64;
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            let (mx, my) = (sx / m, sy / m);
            let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
            let slope = sxy / sxx;
            if slope > 0.0 {
                raw[i] = 1.0 / slope;
            }
        }
    }
    let mut out = vec![f64::NAN; n];
    for i in 0..n {
        let vals: Vec<f64> = [(i + n - 1) % n, i, (i + 1) % n].iter().map(|&k| raw[k]).filter(|v| v.is_finite()).collect();
        if !vals.is_empty() {
            out[i] = vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }
    Ok(out)
}
