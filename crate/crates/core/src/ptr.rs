//! Regularized boundary control: the processed time reversal iteration and its reference solvers.
//!
//! All solvers target `(P K P + alpha) h = P K f`, whose solution `h(alpha)`
//! makes `u^h(T)` approach the restriction of `u^f(T)` to the domain of
//! influence of the windows in `P`.

use serde::{Deserialize, Serialize};

use crate::boundary_ops::{time_filter, time_reverse, Projector, ProjectorSpec};
use crate::connecting::{connecting_apply, estimate_pkp_norm, pkp_apply, Convention, InteriorReference};
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::measurement::MeasurementOracle;
use crate::medium::{domain_of_influence_union, MediumSpec};
use crate::signal::BoundarySignal;

/// How the step parameter `omega` is chosen from the estimate of `||PKP||`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaRule {
    /// `2.2 (1 + ||PKP||)`.
    Auto,
    /// `factor (alpha + ||PKP||)`; converges for `factor > 1/2`.
    Scaled(f64),
    Fixed(f64),
}

impl OmegaRule {
    pub fn resolve(self, alpha: f64, pkp_norm: f64) -> Result<f64> {
        let omega = match self {
            OmegaRule::Auto => 2.2 * (1.0 + pkp_norm),
            OmegaRule::Scaled(s) => {
                if s <= 0.5 {
                    return Err(Error::Invalid(format!("omega scale {s} must exceed 1/2")));
                }
                s * (alpha + pkp_norm)
            }
            OmegaRule::Fixed(w) => w,
        };
        if !(omega.is_finite() && omega > 0.5 * (alpha + pkp_norm)) {
            return Err(Error::Invalid(format!(
                "omega = {omega:.4e} does not contract: need omega > (alpha + ||PKP||)/2 = {:.4e}",
                0.5 * (alpha + pkp_norm)
            )));
        }
        Ok(omega)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub alpha: f64,
    pub omega: OmegaRule,
    /// Stop when `||P K f - (P K P + alpha) h_n|| <= tol ||P K f||`.
    pub tol: f64,
    /// Iteration cap; `None` means `10 omega / alpha`.
    pub max_iter: Option<usize>,
    /// Power iterations for `||PKP||`.
    pub power_iters: usize,
    /// Skips the power method when the norm is already known.
    pub pkp_norm: Option<f64>,
    pub seed: u64,
    pub convention: Convention,
}

impl IterationConfig {
    pub fn new(alpha: f64, convention: Convention) -> Self {
        Self {
            alpha,
            omega: OmegaRule::Auto,
            tol: 1e-6,
            max_iter: None,
            power_iters: 12,
            pkp_norm: None,
            seed: 0,
            convention,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub h: BoundarySignal,
    pub alpha: f64,
    pub omega: f64,
    pub pkp_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `||h_{n+1} - h_n||` per step.
    pub change_norms: Vec<f64>,
    /// Relative residual of the returned iterate, from two extra queries.
    pub residual: f64,
    /// Geometric mean of the last step-to-step change ratios.
    pub contraction: f64,
    /// Oracle queries spent by this call.
    pub queries: u64,
}

fn check_inputs(oracle: &MeasurementOracle, f: &BoundarySignal, projector: &Projector, alpha: f64) -> Result<()> {
    oracle.lattice().check(f)?;
    if projector.n_times() != oracle.lattice().n_times() || projector.mask().len() != f.len() {
        return Err(Error::Shape("projector does not match the oracle lattice".into()));
    }
    if projector.is_empty() {
        return Err(Error::Invalid("projector window is empty".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

fn resolve_omega(oracle: &MeasurementOracle, projector: &Projector, config: &IterationConfig) -> Result<(f64, f64)> {
    let norm = match config.pkp_norm {
        Some(n) => n,
        None => estimate_pkp_norm(oracle, projector, config.convention, config.power_iters, config.seed)?,
    };
    Ok((config.omega.resolve(config.alpha, norm)?, norm))
}

/// One application of `S h = (1 - alpha/omega) h - (1/omega) P K h` from two queries.
fn contraction_step(
    oracle: &MeasurementOracle,
    projector: &Projector,
    h: &BoundarySignal,
    alpha: f64,
    omega: f64,
    conv: Convention,
) -> Result<BoundarySignal> {
    let dt = oracle.lattice().dt();
    let a = oracle.apply(h)?;
    let b = oracle.apply(&time_reverse(&time_filter(h, dt, conv.variant)))?;
    let mut kh = time_reverse(&b);
    kh.axpy(-1.0, &time_filter(&a, dt, conv.variant));
    projector.apply_in_place(&mut kh);
    let mut next = h.scaled(1.0 - alpha / omega);
    next.axpy(-conv.sign / omega, &kh);
    Ok(next)
}

/// Runs `h_{n+1} = S h_n + F` with `F = (1/omega) P K f`, from `warm` (projected) or zero.
pub fn ptr_iterate(
    oracle: &MeasurementOracle,
    f: &BoundarySignal,
    projector: &Projector,
    config: &IterationConfig,
    warm: Option<&BoundarySignal>,
) -> Result<IterationResult> {
    check_inputs(oracle, f, projector, config.alpha)?;
    let start_queries = oracle.query_count();
    let lat = oracle.lattice();
    let alpha = config.alpha;
    let conv = config.convention;
    let (omega, pkp_norm) = resolve_omega(oracle, projector, config)?;
    let mut rhs = connecting_apply(oracle, f, conv)?;
    projector.apply_in_place(&mut rhs);
    let rhs_norm = lat.norm(&rhs);
    let forcing = rhs.scaled(1.0 / omega);
    let mut h = match warm {
        Some(w) => {
            lat.check(w)?;
            projector.apply(w)
        }
        None => lat.zeros(),
    };
    let max_iter = config.max_iter.unwrap_or(((10.0 * omega / alpha).ceil() as usize).max(1));
    let mut change_norms = Vec::new();
    let mut converged = rhs_norm == 0.0;
    let mut best = f64::INFINITY;
    while !converged && change_norms.len() < max_iter {
        let mut next = contraction_step(oracle, projector, &h, alpha, omega, conv)?;
        next.axpy(1.0, &forcing);
        let change = lat.norm(&next.sub(&h));
        h = next;
        change_norms.push(change);
        if !change.is_finite() || change > 1e6 * best.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "iteration diverged after {} steps (omega = {omega:.4e})",
                change_norms.len()
            )));
        }
        best = best.min(change);
        converged = omega * change <= config.tol * rhs_norm;
    }
    let residual = if rhs_norm == 0.0 {
        0.0
    } else {
        let mut r = rhs.clone();
        r.axpy(-1.0, &pkp_apply(oracle, projector, &h, conv)?);
        r.axpy(-alpha, &h);
        lat.norm(&r) / rhs_norm
    };
    let contraction = observed_rate(&change_norms);
    Ok(IterationResult {
        h,
        alpha,
        omega,
        pkp_norm,
        iterations: change_norms.len(),
        converged,
        change_norms,
        residual,
        contraction,
        queries: oracle.query_count() - start_queries,
    })
}

fn observed_rate(changes: &[f64]) -> f64 {
    let n = changes.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = (n - 1).min(50);
    let (a, b) = (changes[n - 1 - m], changes[n - 1]);
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    (b / a).powf(1.0 / m as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgResult {
    pub h: BoundarySignal,
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual norm per iteration.
    pub residuals: Vec<f64>,
    pub queries: u64,
}

/// Conjugate gradients for `(P K P + alpha) h = P K f` in the boundary inner product.
pub fn cg_solve(
    oracle: &MeasurementOracle,
    f: &BoundarySignal,
    projector: &Projector,
    alpha: f64,
    conv: Convention,
    tol: f64,
    max_iter: usize,
) -> Result<CgResult> {
    check_inputs(oracle, f, projector, alpha)?;
    let start_queries = oracle.query_count();
    let lat = oracle.lattice();
    let mut b = connecting_apply(oracle, f, conv)?;
    projector.apply_in_place(&mut b);
    let bnorm = lat.norm(&b);
    let mut h = lat.zeros();
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = lat.inner(&r, &r);
    let mut residuals = Vec::new();
    let mut converged = bnorm == 0.0;
    let mut it = 0;
    while !converged && it < max_iter {
        let mut ap = pkp_apply(oracle, projector, &p, conv)?;
        ap.axpy(alpha, &p);
        let curvature = lat.inner(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::CgBreakdown { iteration: it, curvature });
        }
        let step = rr / curvature;
        h.axpy(step, &p);
        r.axpy(-step, &ap);
        let rr_new = lat.inner(&r, &r);
        it += 1;
        let rel = rr_new.sqrt() / bnorm;
        residuals.push(rel);
        converged = rel <= tol;
        p.scale(rr_new / rr);
        p.axpy(1.0, &r);
        rr = rr_new;
    }
    Ok(CgResult { h, iterations: it, converged, residuals, queries: oracle.query_count() - start_queries })
}

/// One entry of a regularization sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub result: IterationResult,
    /// `||u^h(T) - chi_N u^f(T)|| / ||u^f(T)||`, when validated.
    pub error: Option<f64>,
}

/// Sweeps `alpha` in the given order, warm-starting each run from the previous control.
///
/// With `validation`, each control is compared with the restriction of
/// `u^f(T)` to `N = union M(Gamma_j, T_j)` by direct interior solves.
pub fn control_limit(
    oracle: &MeasurementOracle,
    f: &BoundarySignal,
    windows: &ProjectorSpec,
    alphas: &[f64],
    config: &IterationConfig,
    validation: Option<(&DomainGrid, &MediumSpec)>,
) -> Result<Vec<ControlPoint>> {
    let projector = Projector::new(windows, oracle.lattice())?;
    let target = match validation {
        Some((grid, medium)) => {
            let reference = InteriorReference::new(grid, medium)?;
            let mask = domain_of_influence_union(grid, medium, &windows.windows)?;
            let mut u = reference.field_at_horizon(f)?;
            let full = reference.inner(&u, &u);
            u.iter_mut().zip(&mask).for_each(|(v, &m)| {
                if !m {
                    *v = 0.0
                }
            });
            Some((reference, u, full))
        }
        None => None,
    };
    let mut cfg = config.clone();
    let mut warm: Option<BoundarySignal> = None;
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        cfg.alpha = alpha;
        let result = ptr_iterate(oracle, f, &projector, &cfg, warm.as_ref())?;
        cfg.pkp_norm = Some(result.pkp_norm);
        let error = match &target {
            Some((reference, u, full)) => {
                let mut w = reference.field_at_horizon(&result.h)?;
                w.iter_mut().zip(u).for_each(|(a, b)| *a -= b);
                Some((reference.inner(&w, &w) / full).sqrt())
            }
            None => None,
        };
        warm = Some(result.h.clone());
        out.push(ControlPoint { result, error });
    }
    Ok(out)
}

/// Running averages of the noisy iteration at the requested counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyAverage {
    /// `(K, (1/K) sum_{n=1}^{K} h_n)` after burn-in.
    pub averages: Vec<(usize, BoundarySignal)>,
    pub omega: f64,
    pub pkp_norm: f64,
    pub queries: u64,
}

/// Runs `h_{n+1} = S h_n + F + N_n` through a noisy oracle and averages the iterates.
///
/// `S h_n` costs two noisy queries per step, so `N_n = P J eps1 - P R eps2`
/// is fresh each step.  The forcing `F` and the step parameter are formed
/// once from the noise-free reference measurement.  The first `burn_in`
/// iterates are discarded before averaging.
pub fn averaged_noisy_iterate(
    oracle: &MeasurementOracle,
    f: &BoundarySignal,
    projector: &Projector,
    config: &IterationConfig,
    burn_in: usize,
    checkpoints: &[usize],
) -> Result<NoisyAverage> {
    check_inputs(oracle, f, projector, config.alpha)?;
    if checkpoints.is_empty() || checkpoints.contains(&0) {
        return Err(Error::Invalid("checkpoints must be positive".into()));
    }
    let start_queries = oracle.query_count();
    let reference = oracle.reference();
    let lat = oracle.lattice();
    let (omega, pkp_norm) = resolve_omega(reference, projector, config)?;
    let mut forcing = connecting_apply(reference, f, config.convention)?;
    projector.apply_in_place(&mut forcing);
    forcing.scale(1.0 / omega);
    let total = *checkpoints.iter().max().unwrap();
    let mut h = lat.zeros();
    let mut sum = lat.zeros();
    let mut averages = Vec::new();
    for n in 1..=burn_in + total {
        let mut next = contraction_step(oracle, projector, &h, config.alpha, omega, config.convention)?;
        next.axpy(1.0, &forcing);
        h = next;
        if !h.is_finite() {
            return Err(Error::Numerical(format!("noisy iteration overflowed at step {n}")));
        }
        if n > burn_in {
            sum.axpy(1.0, &h);
            let k = n - burn_in;
            if checkpoints.contains(&k) {
                averages.push((k, sum.scaled(1.0 / k as f64)));
            }
        }
    }
    Ok(NoisyAverage { averages, omega, pkp_norm, queries: oracle.query_count() - start_queries })
}
