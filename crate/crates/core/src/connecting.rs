//! The connecting operator `K = R Lambda R J - J Lambda` evaluated through the oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::boundary_ops::{time_filter, time_reverse, FilterVariant, Projector};
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::measurement::MeasurementOracle;
use crate::medium::MediumSpec;
use crate::probes::random_smooth_source;
use crate::signal::BoundarySignal;
use crate::wave_solver::WaveSolver;

/// Filter variant plus the overall sign applied to `R Lambda R J - J Lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convention {
    pub variant: FilterVariant,
    pub sign: f64,
}

impl Convention {
    /// The sign under which the variant reproduces the interior inner product on this lattice.
    pub fn canonical(variant: FilterVariant) -> Self {
        match variant {
            FilterVariant::Causal => Self { variant, sign: 1.0 },
            FilterVariant::Anticausal => Self { variant, sign: -1.0 },
        }
    }
}

/// `K f` from exactly two oracle queries: `Lambda f` and `Lambda (R J f)`.
pub fn connecting_apply(oracle: &MeasurementOracle, f: &BoundarySignal, conv: Convention) -> Result<BoundarySignal> {
    let dt = oracle.lattice().dt();
    let a = oracle.apply(f)?;
    let b = oracle.apply(&time_reverse(&time_filter(f, dt, conv.variant)))?;
    let mut k = time_reverse(&b);
    k.axpy(-1.0, &time_filter(&a, dt, conv.variant));
    k.scale(conv.sign);
    Ok(k)
}

/// `<K f, h>`, which equals `<u^f(T), u^h(T)>` in the interior.
pub fn blago_inner_product(
    oracle: &MeasurementOracle,
    f: &BoundarySignal,
    h: &BoundarySignal,
    conv: Convention,
) -> Result<f64> {
    oracle.lattice().check(h)?;
    let kf = connecting_apply(oracle, f, conv)?;
    Ok(oracle.lattice().inner(&kf, h))
}

/// `P K P f`.
pub fn pkp_apply(
    oracle: &MeasurementOracle,
    projector: &Projector,
    f: &BoundarySignal,
    conv: Convention,
) -> Result<BoundarySignal> {
    let mut k = connecting_apply(oracle, &projector.apply(f), conv)?;
    projector.apply_in_place(&mut k);
    Ok(k)
}

/// Power-method estimate of `||P K P||`; uses `2 n_iter` queries.
pub fn estimate_pkp_norm(
    oracle: &MeasurementOracle,
    projector: &Projector,
    conv: Convention,
    n_iter: usize,
    seed: u64,
) -> Result<f64> {
    if n_iter < 8 {
        return Err(Error::Invalid(format!("power method needs at least 8 iterations, got {n_iter}")));
    }
    if projector.is_empty() {
        return Err(Error::Invalid("projector window is empty".into()));
    }
    let lat = oracle.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = lat.zeros();
    v.values_mut().iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
    projector.apply_in_place(&mut v);
    let mut est = 0.0;
    for _ in 0..n_iter {
        let nv = lat.norm(&v);
        let w = pkp_apply(oracle, projector, &v, conv)?;
        let nw = lat.norm(&w);
        est = nw / nv;
        if nw == 0.0 {
            break;
        }
        v = w.scaled(1.0 / nw);
    }
    Ok(est)
}

/// Interior reference `<u^f(T), u^h(T)>` computed by direct solves.
///
/// This is the validation path; it never goes through an oracle.
pub struct InteriorReference {
    solver: WaveSolver,
    mid: usize,
}

impl InteriorReference {
    pub fn new(grid: &DomainGrid, medium: &MediumSpec) -> Result<Self> {
        Ok(Self { solver: WaveSolver::new(grid, medium)?, mid: grid.mid_step() })
    }

    pub fn field_at_horizon(&self, f: &BoundarySignal) -> Result<Vec<f64>> {
        let mut sol = self.solver.solve(f, &[self.mid])?;
        Ok(sol.snapshots.remove(0).values)
    }

    pub fn inner(&self, u: &[f64], w: &[f64]) -> f64 {
        u.iter().zip(w).zip(self.solver.mass()).map(|((a, b), m)| a * b * m).sum()
    }

    pub fn inner_product(&self, f: &BoundarySignal, h: &BoundarySignal) -> Result<f64> {
        let u = self.field_at_horizon(f)?;
        let w = self.field_at_horizon(h)?;
        Ok(self.inner(&u, &w))
    }
}

/// Outcome of matching the boundary formula against the interior reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConvention {
    pub convention: Convention,
    /// Largest relative mismatch over the probe pairs.
    pub max_rel_error: f64,
    /// Smallest `<K f, f> / |f|^2` over the probes.
    pub min_rayleigh: f64,
    pub probes: usize,
}

/// Picks the sign (and if needed the variant) that reproduces the interior inner product.
///
/// The preferred variant is tried first with both signs; the other variant
/// is a fallback.  Selection needs a mismatch below 5% and non-negative
/// `<K f, f>` on every probe.
pub fn resolve_convention(
    oracle: &MeasurementOracle,
    grid: &DomainGrid,
    medium: &MediumSpec,
    preferred: FilterVariant,
    seed: u64,
) -> Result<ResolvedConvention> {
    const PROBES: usize = 3;
    let reference = InteriorReference::new(grid, medium)?;
    let lat = oracle.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = lat.horizon();
    let sources: Vec<BoundarySignal> =
        (0..2 * PROBES).map(|_| random_smooth_source(grid, &mut rng, 0.05 * horizon, horizon)).collect();
    let fields = sources.iter().map(|f| reference.field_at_horizon(f)).collect::<Result<Vec<_>>>()?;
    let other = match preferred {
        FilterVariant::Causal => FilterVariant::Anticausal,
        FilterVariant::Anticausal => FilterVariant::Causal,
    };
    let mut best: Option<ResolvedConvention> = None;
    for variant in [preferred, other] {
        let unit = Convention { variant, sign: 1.0 };
        let mut errs = [0.0f64; 2];
        let mut rayleigh = [f64::INFINITY; 2];
        for p in 0..PROBES {
            let (f, h) = (&sources[2 * p], &sources[2 * p + 1]);
            let (uf, uh) = (&fields[2 * p], &fields[2 * p + 1]);
            let kf = connecting_apply(oracle, f, unit)?;
            let (vfh, vff, vhh) = (reference.inner(uf, uh), reference.inner(uf, uf), reference.inner(uh, uh));
            let scale = (vff * vhh).sqrt().max(f64::MIN_POSITIVE);
            let (bfh, bff) = (lat.inner(&kf, h), lat.inner(&kf, f));
            let fnorm2 = lat.inner(f, f);
            for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                let e = ((sign * bfh - vfh).abs() / scale).max((sign * bff - vff).abs() / vff.max(f64::MIN_POSITIVE));
                errs[s] = errs[s].max(e);
                rayleigh[s] = rayleigh[s].min(sign * bff / fnorm2);
            }
        }
        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
            let cand = ResolvedConvention {
                convention: Convention { variant, sign },
                max_rel_error: errs[s],
                min_rayleigh: rayleigh[s],
                probes: PROBES,
            };
            let better = best.as_ref().is_none_or(|b| cand.max_rel_error < b.max_rel_error);
            if better {
                best = Some(cand);
            }
        }
        if let Some(b) = &best {
            if b.convention.variant == variant && b.max_rel_error < 0.05 && b.min_rayleigh >= -1e-6 {
                return Ok(b.clone());
            }
        }
    }
    Err(Error::Convention(best.map_or(f64::INFINITY, |b| b.max_rel_error)))
}
