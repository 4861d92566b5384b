//! End-to-end acceptance checks.  Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.  Pass criterion numbers as arguments to run a subset.

use std::error::Error;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ptrlab_core::boundary_ops::{time_reverse, FilterVariant, Projector, ProjectorSpec};
use ptrlab_core::connecting::{blago_inner_product, connecting_apply, resolve_convention, InteriorReference};
use ptrlab_core::distance::{
    arrival_time_map, boundary_distance, boundary_wavespeed, chi_identity_violation, DistanceQuery,
    DEFAULT_PULSE_STEPS,
};
use ptrlab_core::focusing::{
    focused_field, focusing_profile, focusing_source, interval_plateau_probe, point_value_recover, FocusSpec,
};
use ptrlab_core::measurement::assemble_cached_shifted;
use ptrlab_core::medium::{boundary_nodes, domain_of_influence, normal_geodesic_point, travel_time_distance};
use ptrlab_core::probes::{bump, random_smooth_source, single_node_source};
use ptrlab_core::{
    averaged_noisy_iterate, cg_solve, control_limit, presets, ptr_iterate, BoundarySignal, Convention, DomainGrid,
    IterationConfig, MeasurementOracle, MediumSpec, NoiseCovarianceSpec, OmegaRule,
};

type Check = Result<Outcome, Box<dyn Error>>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Check {
    Ok(Outcome { pass, detail })
}

fn preset(name: &str, res: Option<usize>, horizon: Option<f64>) -> Result<(DomainGrid, MediumSpec), Box<dyn Error>> {
    Ok(presets::find(name)?.build(res, horizon)?)
}

fn cached(g: &DomainGrid, m: &MediumSpec) -> Result<MeasurementOracle, Box<dyn Error>> {
    let ideal = MeasurementOracle::ideal(g, m)?;
    Ok(MeasurementOracle::cached(assemble_cached_shifted(&ideal, 8192)?))
}

fn causal() -> Convention {
    Convention::canonical(FilterVariant::Causal)
}

fn gaussian(t0: f64, w: f64) -> impl Fn(f64) -> f64 {
    move |t| (-((t - t0) / w).powi(2)).exp()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

/// Largest boundary-vs-interior mismatch over ten random pairs.
fn blago_error(res: usize) -> Result<f64, Box<dyn Error>> {
    let (g, m) = preset("1d-homogeneous", Some(res), Some(1.5))?;
    let o = MeasurementOracle::ideal(&g, &m)?;
    let reference = InteriorReference::new(&g, &m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let f = random_smooth_source(&g, &mut rng, 0.0, g.horizon());
        let h = random_smooth_source(&g, &mut rng, 0.0, g.horizon());
        let (uf, uh) = (reference.field_at_horizon(&f)?, reference.field_at_horizon(&h)?);
        let v = reference.inner(&uf, &uh);
        let scale = (reference.inner(&uf, &uf) * reference.inner(&uh, &uh)).sqrt();
        let b = blago_inner_product(&o, &f, &h, causal())?;
        worst = worst.max((b - v).abs() / scale);
    }
    Ok(worst)
}

fn criterion_1() -> Check {
    let coarse = blago_error(256)?;
    let fine = blago_error(511)?;
    let ratio = coarse / fine;
    outcome(
        coarse < 0.02 && ratio >= 2.5,
        format!("max relative mismatch {coarse:.3e} at 256 nodes, {fine:.3e} at 511 nodes, ratio {ratio:.2}"),
    )
}

fn criterion_2() -> Check {
    let mut worst: f64 = 0.0;
    for (name, res) in [("1d-sinusoidal", None), ("2d-lens", Some(24))] {
        let (g, m) = preset(name, res, None)?;
        let o = MeasurementOracle::ideal(&g, &m)?;
        let lat = o.lattice().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let f = random_smooth_source(&g, &mut rng, 0.0, 2.0 * g.horizon());
            let h = random_smooth_source(&g, &mut rng, 0.0, 2.0 * g.horizon());
            let lf = o.apply(&f)?;
            let lhs = lat.inner(&lf, &h);
            let rhs = lat.inner(&f, &time_reverse(&o.apply(&time_reverse(&h))?));
            worst = worst.max((lhs - rhs).abs() / (lat.norm(&lf) * lat.norm(&h)));
        }
    }
    outcome(worst < 0.01, format!("max relative mismatch {worst:.3e} over 10 pairs"))
}

fn criterion_3() -> Check {
    let mut min_rayleigh = f64::INFINITY;
    let mut worst_sym: f64 = 0.0;
    let mut conventions = Vec::new();
    for (name, res) in [("1d-sinusoidal", None), ("2d-gradient", Some(24))] {
        let (g, m) = preset(name, res, None)?;
        let o = MeasurementOracle::ideal(&g, &m)?;
        let conv = resolve_convention(&o, &g, &m, FilterVariant::Causal, 3)?.convention;
        conventions.push(format!("{}:{:+}", conv.variant.name(), conv.sign));
        let lat = o.lattice().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let f = random_smooth_source(&g, &mut rng, 0.0, g.horizon());
            let h = random_smooth_source(&g, &mut rng, 0.0, g.horizon());
            let (kf, kh) = (connecting_apply(&o, &f, conv)?, connecting_apply(&o, &h, conv)?);
            min_rayleigh = min_rayleigh.min(lat.inner(&kf, &f) / lat.inner(&f, &f));
            let (a, b) = (lat.inner(&kf, &h), lat.inner(&f, &kh));
            let scale = (lat.inner(&kf, &f) * lat.inner(&kh, &h)).sqrt();
            worst_sym = worst_sym.max((a - b).abs() / scale);
        }
    }
    outcome(
        min_rayleigh >= -1e-6 && worst_sym < 0.01,
        format!(
            "conventions [{}], min <Kf,f>/|f|^2 = {min_rayleigh:.3e}, max asymmetry {worst_sym:.3e}",
            conventions.join(", ")
        ),
    )
}

fn criterion_4() -> Check {
    let (g, m) = preset("1d-homogeneous", Some(64), Some(1.5))?;
    let o = cached(&g, &m)?;
    let lat = o.lattice().clone();
    let dof = lat.n_boundary() * lat.n_times();
    let alpha = 1e-3;
    let f = single_node_source(&g, 0, gaussian(1.0, 0.15)).add(&single_node_source(&g, 1, gaussian(0.8, 0.2)));
    let p = Projector::new(&ProjectorSpec::full_boundary(&g, 0.8), &lat)?;
    let mut cfg = IterationConfig::new(alpha, causal());
    cfg.tol = 1e-10;
    cfg.max_iter = Some(2_000_000);
    let fixed = ptr_iterate(&o, &f, &p, &cfg, None)?;
    let cg = cg_solve(&o, &f, &p, alpha, causal(), 1e-12, 5000)?;
    // Dense normal equations on the kept samples, in the weighted inner product.
    let kept: Vec<usize> = p.mask().iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect();
    let n = kept.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (col, &idx) in kept.iter().enumerate() {
        let mut e = lat.zeros();
        e.values_mut()[idx] = 1.0;
        let ke = connecting_apply(&o, &e, causal())?;
        for (row, &r) in kept.iter().enumerate() {
            a[(row, col)] = ke.values()[r];
        }
        a[(col, col)] += alpha;
    }
    let kf = connecting_apply(&o, &f, causal())?;
    let b = DVector::from_iterator(n, kept.iter().map(|&r| kf.values()[r]));
    let x = a.lu().solve(&b).ok_or("dense system is singular")?;
    let mut direct = lat.zeros();
    for (i, &idx) in kept.iter().enumerate() {
        direct.values_mut()[idx] = x[i];
    }
    let rel = |u: &BoundarySignal, v: &BoundarySignal| lat.norm(&u.sub(v)) / lat.norm(v);
    let d = [rel(&fixed.h, &direct), rel(&cg.h, &direct), rel(&fixed.h, &cg.h)];
    outcome(
        dof <= 512 && fixed.converged && cg.converged && d.iter().all(|v| *v < 1e-4),
        format!(
            "{dof} DOF, PTR {} steps, CG {} steps; ptr-direct {:.2e}, cg-direct {:.2e}, ptr-cg {:.2e}",
            fixed.iterations, cg.iterations, d[0], d[1], d[2]
        ),
    )
}

fn criterion_5() -> Check {
    let (g, m) = preset("1d-homogeneous", Some(129), Some(1.5))?;
    let o = cached(&g, &m)?;
    let f = single_node_source(&g, 0, gaussian(1.2, 0.12))
        .add(&single_node_source(&g, 1, |t| 0.5 * gaussian(1.0, 0.15)(t) * (8.0 * t).sin()));
    let mut cfg = IterationConfig::new(1e-1, causal());
    cfg.omega = OmegaRule::Scaled(1.0);
    cfg.tol = 1e-5;
    cfg.max_iter = Some(2_000_000);
    let alphas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let pts = control_limit(&o, &f, &ProjectorSpec::full_boundary(&g, 0.4), &alphas, &cfg, Some((&g, &m)))?;
    let e: Vec<f64> = pts.iter().map(|p| p.error.unwrap_or(f64::NAN)).collect();
    let decreasing = e.windows(2).all(|w| w[1] < w[0]);
    let last = *e.last().unwrap();
    let converged = pts.iter().all(|p| p.result.converged);
    outcome(decreasing && last < 0.10 && converged, format!("e(alpha) = [{}]", fmt_list(&e)))
}

fn criterion_6() -> Check {
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    for p in presets::catalog() {
        let (g, m) = p.build(None, Some(0.4))?;
        let z = if g.dim() == 1 { 0 } else { g.boundary_slot(g.nearest_node(&[0.5, 0.0])).unwrap() };
        let gamma = ptrlab_core::focusing::patch(&g, z, 0.1);
        let t_end = g.horizon();
        let f = BoundarySignal::from_fn(g.n_boundary(), g.n_times(), |b, k| {
            if gamma.contains(&b) { bump(g.time(k), 0.5 * t_end, 0.5 * t_end) } else { 0.0 }
        });
        let u = focused_field(&g, &m, &f)?;
        let inside = domain_of_influence(&g, &m, &gamma, t_end)?;
        let w = m.volume_weights(&g);
        let total: f64 = u.iter().zip(&w).map(|(v, w)| v * v * w).sum();
        let outside: f64 = (0..u.len()).filter(|&k| !inside[k]).map(|k| u[k] * u[k] * w[k]).sum();
        worst = worst.max(outside / total);
        names.push(p.name);
    }
    outcome(worst < 1e-3, format!("max outside mass fraction {worst:.3e} over {} presets", names.len()))
}

fn criterion_7() -> Check {
    // Interval: slab (0.45, 0.5] from the left end.
    let (g, m) = preset("1d-homogeneous", Some(385), Some(1.5))?;
    let o = cached(&g, &m)?;
    let f = single_node_source(&g, 0, gaussian(0.9, 0.25))
        .add(&single_node_source(&g, 1, |t| 0.3 * gaussian(1.0, 0.2)(t)));
    let spec = FocusSpec::new(&g, 0, 0.5, 0.45);
    let mut cfg = IterationConfig::new(3e-5, causal());
    cfg.omega = OmegaRule::Scaled(1.0);
    cfg.tol = 1e-4;
    cfg.max_iter = Some(2_000_000);
    let src = focusing_source(&o, &g, &f, &spec, 0, &cfg)?;
    let (_, rep1) = focusing_profile(&g, &m, &src.h_tilde, &spec)?;

    // Square: shrinking patches around the bottom midpoint, then a target past the cut locus.
    let (g, m) = preset("2d-homogeneous", Some(32), Some(0.75))?;
    let o = MeasurementOracle::ideal(&g, &m)?;
    let f = BoundarySignal::from_fn(g.n_boundary(), g.n_times(), |b, k| {
        let s = g.boundary()[b].arclength;
        gaussian(0.5, 0.15)(g.time(k)) * (1.0 + 0.5 * (std::f64::consts::TAU * s).cos())
    });
    let z = g.boundary_slot(g.nearest_node(&[0.5, 0.0])).unwrap();
    let mut cfg = IterationConfig::new(1e-4, causal());
    cfg.omega = OmegaRule::Scaled(1.0);
    cfg.tol = 1e-4;
    cfg.max_iter = Some(200_000);
    let mut spec = FocusSpec::new(&g, z, 0.3, 0.25);
    spec.j_max = 3;
    let mut fractions = Vec::new();
    let mut minimizing_mass = 0.0;
    for j in 0..=spec.j_max {
        let src = focusing_source(&o, &g, &f, &spec, j, &cfg)?;
        let (_, rep) = focusing_profile(&g, &m, &src.h_tilde, &spec)?;
        fractions.push(rep.fractions[2]);
        minimizing_mass = rep.normalized_mass;
    }
    let cut = FocusSpec { t_hat: 0.65, t0: 0.6, ..spec.clone() };
    let src = focusing_source(&o, &g, &f, &cut, cut.j_max, &cfg)?;
    let (_, rep_cut) = focusing_profile(&g, &m, &src.h_tilde, &cut)?;
    let monotone = fractions.windows(2).all(|w| w[1] > w[0]);
    let ratio = rep_cut.normalized_mass / minimizing_mass;
    outcome(
        rep1.slab_fraction >= 0.9 && monotone && ratio < 0.1 && !rep_cut.x_hat.minimizing,
        format!(
            "interval slab fraction {:.3}; square 8h fractions [{}]; cut/minimizing mass {ratio:.3e}",
            rep1.slab_fraction,
            fmt_list(&fractions)
        ),
    )
}

fn criterion_8() -> Check {
    let (g, m) = preset("1d-sinusoidal", Some(64), Some(1.0))?;
    let o = cached(&g, &m)?;
    let f0 = BoundarySignal::from_fn(2, g.n_times(), |b, k| {
        let t = g.time(k);
        if t > 1.0 {
            return 0.0;
        }
        (std::f64::consts::PI * t).sin().powi(2) * ((5.0 + 3.0 * b as f64) * t + b as f64).cos()
    });
    let mut cfg = IterationConfig::new(1e-4, causal());
    cfg.omega = OmegaRule::Scaled(1.0);
    cfg.tol = 1e-5;
    cfg.max_iter = Some(2_000_000);
    let h = g.h();
    let mut worst: f64 = 0.0;
    let mut chi: f64 = 0.0;
    let mut errs = Vec::new();
    for (z, y, t1) in [(0, 0, 0.3), (0, 1, 0.3), (0, 1, 0.4), (1, 0, 0.4), (1, 1, 0.25)] {
        let mut q = DistanceQuery::new(z, y, t1, h);
        q.theta = 1e-4;
        let x = normal_geodesic_point(&g, &m, z, t1)?;
        let truth = travel_time_distance(&g, &m, &boundary_nodes(&g, &[y])?)?.interpolate(&g, x.position);
        let d = boundary_distance(&o, &g, &f0, &q, &cfg)?;
        let err = (d.estimate - truth).abs() / h;
        errs.push(err);
        worst = worst.max(err);
        for k in 0..=20 {
            chi = chi.max(chi_identity_violation(&g, &m, &q, k as f64 * 0.05)?);
        }
    }
    outcome(
        worst <= 2.0 && chi == 0.0,
        format!("errors in cells [{}], chi identity violation {chi}", fmt_list(&errs)),
    )
}

fn criterion_9() -> Check {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, tol) in [("1d-homogeneous", 0.05), ("1d-homogeneous-c2", 0.05), ("2d-gradient", 0.10)] {
        let (g, m) = preset(name, None, None)?;
        let o = MeasurementOracle::ideal(&g, &m)?;
        let map = arrival_time_map(&o, DEFAULT_PULSE_STEPS * g.dt())?;
        let c = boundary_wavespeed(&map, &g)?;
        let mut worst: f64 = 0.0;
        for (i, b) in g.boundary().iter().enumerate() {
            let x = g.coords(b.node);
            let near_corner = g.dim() == 2 && x[0].min(1.0 - x[0]).hypot(x[1].min(1.0 - x[1])) <= 0.15;
            if !near_corner {
                let truth = m.c()[b.node];
                worst = worst.max(((c[i] - truth) / truth).abs());
            }
        }
        pass &= worst < tol;
        parts.push(format!("{name} {worst:.3e}"));
    }
    outcome(pass, format!("max relative speed error: {}", parts.join(", ")))
}

fn criterion_10() -> Check {
    let (g, m) = preset("1d-homogeneous", Some(129), Some(1.5))?;
    let ideal = MeasurementOracle::ideal(&g, &m)?;
    let op = assemble_cached_shifted(&ideal, 8192)?;
    let clean = MeasurementOracle::cached(op.clone());
    let lat = clean.lattice().clone();
    let f = single_node_source(&g, 0, gaussian(1.2, 0.12))
        .add(&single_node_source(&g, 1, |t| 0.5 * gaussian(1.0, 0.15)(t) * (8.0 * t).sin()));
    let p = Projector::new(&ProjectorSpec::full_boundary(&g, 0.4), &lat)?;
    let mut cfg = IterationConfig::new(0.1, causal());
    cfg.omega = OmegaRule::Scaled(1.0);
    cfg.tol = 1e-12;
    cfg.max_iter = Some(1_000_000);
    let reference = ptr_iterate(&clean, &f, &p, &cfg, None)?;
    cfg.pkp_norm = Some(reference.pkp_norm);
    let ks: Vec<usize> = (2..=8).map(|e| 1usize << e).collect();
    let run = |seed: u64| -> Result<_, Box<dyn Error>> {
        let spec = NoiseCovarianceSpec { sigma: 0.01, ell_x: 0.0, ell_t: 0.0, seed };
        let noisy = MeasurementOracle::noisy(MeasurementOracle::cached(op.clone()), spec)?;
        Ok(averaged_noisy_iterate(&noisy, &f, &p, &cfg, 50, &ks)?)
    };
    const REPLICAS: u64 = 8;
    let mut sq = vec![0.0; ks.len()];
    let mut first = None;
    for r in 0..REPLICAS {
        let avg = run(100 + r)?;
        for (i, (_, a)) in avg.averages.iter().enumerate() {
            sq[i] += lat.norm(&a.sub(&reference.h)).powi(2);
        }
        if r == 0 {
            first = Some(avg);
        }
    }
    let again = run(100)?;
    let deterministic = first.as_ref().is_some_and(|a| {
        a.averages.iter().zip(&again.averages).all(|(x, y)| {
            x.1.values().iter().zip(y.1.values()).all(|(u, v)| u.to_bits() == v.to_bits())
        })
    });
    let errs: Vec<f64> = sq.iter().map(|s| (s / REPLICAS as f64).sqrt()).collect();
    let lx: Vec<f64> = ks.iter().map(|k| (*k as f64).ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    outcome(
        (-0.65..=-0.35).contains(&slope) && deterministic,
        format!("log-log slope {slope:.3}, bit-exact rerun {deterministic}, errors [{}]", fmt_list(&errs)),
    )
}

fn criterion_11() -> Check {
    let (g, m) = preset("1d-homogeneous", Some(129), Some(1.5))?;
    let o = cached(&g, &m)?;
    let f = single_node_source(&g, 0, gaussian(1.25, 0.15))
        .add(&single_node_source(&g, 1, |t| 0.3 * gaussian(1.0, 0.2)(t)));
    let u = focused_field(&g, &m, &f)?;
    let umax = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let probe = interval_plateau_probe(&g, 0.3, 0.2)?;
    let mut cfg = IterationConfig::new(1e-5, causal());
    cfg.omega = OmegaRule::Scaled(1.0);
    cfg.tol = 1e-5;
    cfg.max_iter = Some(2_000_000);
    let h = g.h();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for t_hat in [0.2, 0.3, 0.4] {
        let truth = u[g.nearest_node(&[t_hat])];
        if truth.abs() < 0.1 * umax {
            continue;
        }
        let spec = FocusSpec::new(&g, 0, t_hat, t_hat - 2.0 * h);
        let est = point_value_recover(&o, &g, &m, &f, &spec, &[8.0 * h, 4.0 * h, 2.0 * h], &probe, &cfg)?;
        let rel = ((est.estimate - truth) / truth).abs();
        worst = worst.max(rel);
        checked += 1;
        parts.push(format!("x={t_hat}: {:.4} vs {truth:.4}", est.estimate));
    }
    outcome(checked > 0 && worst < 0.15, format!("{}; max relative error {worst:.3e}", parts.join(", ")))
}

const CRITERIA: [(&str, fn() -> Check); 11] = [
    ("boundary Gram identity", criterion_1),
    ("adjoint identity", criterion_2),
    ("connecting operator positivity and symmetry", criterion_3),
    ("normal equation solvers agree", criterion_4),
    ("regularized control convergence", criterion_5),
    ("finite propagation speed", criterion_6),
    ("focusing", criterion_7),
    ("boundary distance", criterion_8),
    ("arrival map and boundary speed", criterion_9),
    ("noise averaging", criterion_10),
    ("point value recovery", criterion_11),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (status, detail) = match check() {
            Ok(o) => (if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {n:>2} {status} {name} ({:.1} s): {detail}", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
