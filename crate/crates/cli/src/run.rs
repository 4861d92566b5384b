//! Experiment execution and artifact writing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use ptrlab_core::boundary_ops::{Projector, ProjectorSpec};
use ptrlab_core::connecting::{blago_inner_product, resolve_convention, InteriorReference};
use ptrlab_core::distance::{arrival_time_map, boundary_distance, boundary_wavespeed, DistanceQuery};
use ptrlab_core::export::{fmt_f64, write_field, write_table};
use ptrlab_core::focusing::{
    cut_indicator, focused_field, focusing_profile, focusing_source, interval_plateau_probe, point_value_recover, FocusSpec,
};
use ptrlab_core::measurement::{assemble_cached_shifted, MAX_CACHED_DOF};
use ptrlab_core::medium::{boundary_nodes, normal_geodesic_point, travel_time_distance};
use ptrlab_core::probes::random_smooth_source;
use ptrlab_core::{
    averaged_noisy_iterate, CachedOperator, control_limit, ptr_iterate, BoundarySignal, Convention, DomainGrid, IterationConfig,
    MeasurementOracle, MediumSpec, NoiseCovarianceSpec,
};

use crate::config::{preferred_variant, ConventionChoice, ExperimentConfig, Kind, Loaded, OracleMode, Pulse};

/// One declared output file.
#[derive(Clone, Debug, Serialize)]
pub struct Output {
    pub file: String,
    pub description: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    kind: &'static str,
    config: &'a ExperimentConfig,
    grid: Value,
    oracle: Value,
    convention: Value,
    summary: Value,
    outputs: Vec<Output>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    grid: DomainGrid,
    medium: MediumSpec,
    outputs: Vec<Output>,
}

impl Run<'_> {
    fn path(&mut self, file: &str, description: &str) -> PathBuf {
        self.outputs.push(Output { file: file.into(), description: description.into() });
        self.dir.join(file)
    }

    fn meta(&self) -> Vec<(String, String)> {
        vec![
            ("kind".into(), self.cfg.kind.name().into()),
            ("seed".into(), self.cfg.seed.map_or("none".into(), |s| s.to_string())),
            ("h".into(), fmt_f64(self.grid.h())),
            ("dt".into(), fmt_f64(self.grid.dt())),
            ("horizon".into(), fmt_f64(self.grid.horizon())),
        ]
    }

    fn iteration(&self, conv: Convention) -> IterationConfig {
        let it = &self.cfg.iteration;
        let mut c = IterationConfig::new(it.alpha, conv);
        c.omega = it.omega.into();
        c.tol = it.tol;
        c.max_iter = it.max_iter;
        c.seed = self.cfg.seed.unwrap_or(0);
        c
    }

    fn source(&self) -> BoundarySignal {
        let g = &self.grid;
        let pulse = |p: &Pulse, t: f64| p.amplitude * (-((t - p.center) / p.width).powi(2)).exp() * (p.frequency * t).cos();
        let per = g.boundary_length();
        BoundarySignal::from_fn(g.n_boundary(), g.n_times(), |b, k| {
            let t = g.time(k);
            let mut v: f64 = self.cfg.source.pulses.iter().filter(|p| p.slot == b).map(|p| pulse(p, t)).sum();
            if let Some(p) = &self.cfg.source.all_slots {
                let s = g.boundary()[b].arclength / per;
                let shape = if g.dim() == 2 { 1.0 + 0.5 * (std::f64::consts::TAU * s).cos() } else { 1.0 };
                v += shape * pulse(p, t);
            }
            v
        })
    }
}

/// Builds the oracle; the cached form is used when it fits.
fn make_oracle(
    mode: OracleMode,
    grid: &DomainGrid,
    medium: &MediumSpec,
) -> Result<(MeasurementOracle, Option<CachedOperator>, Value)> {
    let ideal = MeasurementOracle::ideal(grid, medium)?;
    let dof = grid.n_boundary() * grid.n_times();
    let cache = match mode {
        OracleMode::Ideal => false,
        OracleMode::Cached => true,
        OracleMode::Auto => dof <= MAX_CACHED_DOF,
    };
    if !cache {
        return Ok((ideal, None, json!({ "mode": "ideal", "dof": dof, "assembly_queries": 0 })));
    }
    let op = assemble_cached_shifted(&ideal, MAX_CACHED_DOF)?;
    let info = json!({
        "mode": "cached",
        "dof": dof,
        "assembly_queries": ideal.query_count(),
        "shift_invariant": op.is_shift_invariant(),
    });
    Ok((MeasurementOracle::cached(op.clone()), Some(op), info))
}

/// Runs a validated configuration and writes its artifacts into `dir`.
pub fn run(loaded: &Loaded, dir: &Path) -> Result<Vec<Output>> {
    let start = Instant::now();
    let cfg = &loaded.config;
    let (grid, medium) = loaded.build_medium()?;
    loaded.validate(&grid)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (oracle, cached, mut oracle_info) = make_oracle(cfg.oracle.mode, &grid, &medium)?;
    let variant = preferred_variant(cfg.oracle.convention);
    let (conv, conv_info) = match cfg.oracle.convention {
        ConventionChoice::Auto => {
            let r = resolve_convention(&oracle, &grid, &medium, variant, cfg.seed.unwrap_or(0))?;
            let info = json!({
                "variant": r.convention.variant.name(),
                "sign": r.convention.sign,
                "resolved": true,
                "calibration": "interior solves on random probes",
                "max_rel_error": r.max_rel_error,
                "min_rayleigh": r.min_rayleigh,
            });
            (r.convention, info)
        }
        _ => {
            let c = Convention::canonical(variant);
            (c, json!({ "variant": c.variant.name(), "sign": c.sign, "resolved": false }))
        }
    };
    let calibration_queries = oracle.query_count();
    let mut run = Run { cfg, dir: dir.to_path_buf(), grid, medium, outputs: Vec::new() };
    let medium_file = run.path("medium_c.csv", "wave speed at the nodes");
    write_field(&medium_file, &run.grid, run.medium.c(), &[])?;
    let (summary, extra_queries) = match cfg.kind {
        Kind::BlagoCheck => (blago_check(&mut run, &oracle, conv)?, 0),
        Kind::Control => (control(&mut run, &oracle, conv)?, 0),
        Kind::Focus => (focus(&mut run, loaded, &oracle, conv)?, 0),
        Kind::Distance => (distance(&mut run, &oracle, conv)?, 0),
        Kind::ArrivalMap => (arrival(&mut run, &oracle)?, 0),
        Kind::NoiseAvg => noise(&mut run, &oracle, cached, conv)?,
    };
    oracle_info["calibration_queries"] = json!(calibration_queries);
    oracle_info["queries"] = json!(oracle.query_count() + extra_queries);
    let g = &run.grid;
    let grid_info = json!({
        "dim": g.dim(),
        "shape": g.shape(),
        "h": g.h(),
        "dt": g.dt(),
        "n_steps": g.n_steps(),
        "horizon": g.horizon(),
        "n_boundary": g.n_boundary(),
    });
    let timing = run.path("timing.json", "wall time of the run (varies between runs)");
    run.outputs.push(Output { file: "manifest.json".into(), description: "this manifest".into() });
    let manifest = Manifest {
        tool: "ptrlab",
        version: env!("CARGO_PKG_VERSION"),
        kind: cfg.kind.name(),
        config: cfg,
        grid: grid_info,
        oracle: oracle_info,
        convention: conv_info,
        summary,
        outputs: run.outputs.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    std::fs::write(timing, serde_json::to_string_pretty(&json!({ "wall_seconds": start.elapsed().as_secs_f64() }))? + "\n")?;
    Ok(run.outputs)
}

fn blago_check(run: &mut Run, oracle: &MeasurementOracle, conv: Convention) -> Result<Value> {
    let pairs = run.cfg.blago.as_ref().map_or(10, |b| b.pairs);
    let reference = InteriorReference::new(&run.grid, &run.medium)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.seed.unwrap_or(0));
    let horizon = run.grid.horizon();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..pairs {
        let f = random_smooth_source(&run.grid, &mut rng, 0.0, horizon);
        let h = random_smooth_source(&run.grid, &mut rng, 0.0, horizon);
        let (uf, uh) = (reference.field_at_horizon(&f)?, reference.field_at_horizon(&h)?);
        let volume = reference.inner(&uf, &uh);
        let scale = (reference.inner(&uf, &uf) * reference.inner(&uh, &uh)).sqrt();
        let boundary = blago_inner_product(oracle, &f, &h, conv)?;
        let rel = (boundary - volume).abs() / scale;
        worst = worst.max(rel);
        rows.push(vec![i.to_string(), fmt_f64(boundary), fmt_f64(volume), fmt_f64(rel)]);
    }
    let meta = run.meta();
    let p = run.path("blago.csv", "boundary against interior inner products for random pairs");
    write_table(&p, &meta, &["pair", "boundary", "volume", "rel_error"], rows)?;
    Ok(json!({ "pairs": pairs, "max_rel_error": worst }))
}

fn control(run: &mut Run, oracle: &MeasurementOracle, conv: Convention) -> Result<Value> {
    let ctl = run.cfg.control.as_ref().expect("validated");
    let spec = ProjectorSpec::new(ctl.windows.iter().map(|w| (w.slots.clone(), w.length)).collect());
    let f = run.source();
    let mut it = run.iteration(conv);
    if it.max_iter.is_none() {
        it.max_iter = Some(2_000_000);
    }
    let pts = control_limit(oracle, &f, &spec, &ctl.alphas, &it, Some((&run.grid, &run.medium)))?;
    let rows: Vec<Vec<String>> = pts
        .iter()
        .map(|p| {
            let r = &p.result;
            vec![
                fmt_f64(r.alpha),
                fmt_f64(r.omega),
                r.iterations.to_string(),
                r.converged.to_string(),
                fmt_f64(r.residual),
                p.error.map_or("nan".into(), fmt_f64),
            ]
        })
        .collect();
    let meta = run.meta();
    let p = run.path("control.csv", "regularization path: alpha, omega, steps, convergence, residual, interior error");
    write_table(&p, &meta, &["alpha", "omega", "iterations", "converged", "residual", "error"], rows)?;
    let history = pts.iter().flat_map(|p| {
        let alpha = fmt_f64(p.result.alpha);
        p.result.change_norms.iter().enumerate().map(move |(n, c)| vec![alpha.clone(), (n + 1).to_string(), fmt_f64(*c)])
    });
    let p = run.path("control_history.csv", "step-to-step change norm per iteration and alpha");
    write_table(&p, &meta, &["alpha", "step", "change"], history)?;
    let last = pts.last().expect("non-empty schedule");
    let p = run.path("control_h.csv", "control for the smallest alpha, one row per boundary slot");
    write_signal(&p, &meta, &last.result.h)?;
    let u = focused_field(&run.grid, &run.medium, &last.result.h)?;
    let p = run.path("control_field.csv", "wave of the final control at time T (validation solve)");
    write_field(&p, &run.grid, &u, &[])?;
    Ok(json!({
        "errors": pts.iter().map(|p| p.error).collect::<Vec<_>>(),
        "iterations": pts.iter().map(|p| p.result.iterations).collect::<Vec<_>>(),
        "converged": pts.iter().all(|p| p.result.converged),
        "pkp_norm": last.result.pkp_norm,
    }))
}

fn focus(run: &mut Run, loaded: &Loaded, oracle: &MeasurementOracle, conv: Convention) -> Result<Value> {
    let fc = run.cfg.focus.clone().expect("validated");
    let mut spec = FocusSpec::new(&run.grid, fc.z, fc.t_hat, fc.t0);
    if let Some(r) = fc.r0 {
        spec.r0 = r;
    }
    if let Some(j) = fc.j_max {
        spec.j_max = j;
    }
    let f = run.source();
    let mut it = run.iteration(conv);
    if it.max_iter.is_none() {
        it.max_iter = Some(2_000_000);
    }
    let mut rows = Vec::new();
    let mut last = None;
    let mut fractions = Vec::new();
    for j in 0..=spec.j_max {
        let src = focusing_source(oracle, &run.grid, &f, &spec, j, &it)?;
        let (field, rep) = focusing_profile(&run.grid, &run.medium, &src.h_tilde, &spec)?;
        fractions.push(rep.fractions[2]);
        rows.push(vec![
            j.to_string(),
            src.patch.len().to_string(),
            fmt_f64(rep.slab_fraction),
            fmt_f64(rep.fractions[0]),
            fmt_f64(rep.fractions[1]),
            fmt_f64(rep.fractions[2]),
            fmt_f64(rep.normalized_mass),
            (src.runs[0].iterations + src.runs[1].iterations).to_string(),
        ]);
        last = Some((field, rep));
    }
    let (field, rep) = last.expect("j schedule is non-empty");
    let meta = run.meta();
    let p = run.path("focus.csv", "concentration per patch level: slab fraction, fractions at 2h/4h/8h, normalized mass");
    write_table(&p, &meta, &["j", "patch", "slab", "frac_2h", "frac_4h", "frac_8h", "mass", "iterations"], rows)?;
    let p = run.path("focus_field.csv", "normalized focused wave at time T for the finest patch (validation solve)");
    write_field(&p, &run.grid, &field, &[])?;
    let mut summary = json!({
        "x_hat": rep.x_hat.position,
        "minimizing": rep.x_hat.minimizing,
        "fractions_8h": fractions,
        "normalized_mass": rep.normalized_mass,
    });
    if let Some(deltas) = &fc.point_deltas {
        if (run.medium.c_min() - 1.0).abs() > 1e-12 || (run.medium.c_max() - 1.0).abs() > 1e-12 {
            Err(loaded.error("focus.point_deltas", "the plateau probe needs a homogeneous medium with c = 1"))?;
        }
        let probe = interval_plateau_probe(&run.grid, 0.3, 0.2)?;
        let est = point_value_recover(oracle, &run.grid, &run.medium, &f, &spec, deltas, &probe, &it)?;
        let u = focused_field(&run.grid, &run.medium, &f)?;
        let truth = u[rep.x_hat.node];
        let rows = est.schedule.iter().map(|(d, v)| vec![fmt_f64(*d), fmt_f64(*v)]);
        let p = run.path("point_value.csv", "point value estimate per slab thickness");
        write_table(&p, &meta, &["delta", "estimate"], rows)?;
        summary["point_value"] = json!({
            "estimate": est.estimate,
            "solver_value": truth,
            "spread": est.spread,
            "reliable": est.reliable,
        });
    }
    Ok(summary)
}

fn distance(run: &mut Run, oracle: &MeasurementOracle, conv: Convention) -> Result<Value> {
    let dc = run.cfg.distance.clone().expect("validated");
    let f0 = run.source();
    let mut it = run.iteration(conv);
    if it.max_iter.is_none() {
        it.max_iter = Some(2_000_000);
    }
    let mut rows = Vec::new();
    let mut trace_rows = Vec::new();
    let mut estimates = Vec::new();
    for (i, q) in dc.queries.iter().enumerate() {
        let query = DistanceQuery { z: q.z, y: q.y, t1: q.t1, patch_radius: dc.patch_radius, eps: dc.eps, theta: dc.theta };
        let d = boundary_distance(oracle, &run.grid, &f0, &query, &it)?;
        let cut = if dc.cut_check && 0.5 * q.t1 > dc.eps {
            let mut spec = FocusSpec::new(&run.grid, q.z, q.t1, q.t1 - dc.eps);
            spec.j_max = 0;
            Some(cut_indicator(oracle, &run.grid, &f0, &spec, 0.5 * q.t1, &it)?)
        } else {
            None
        };
        // Eikonal reference, for validation only.
        let x = normal_geodesic_point(&run.grid, &run.medium, q.z, q.t1)?;
        let dy = travel_time_distance(&run.grid, &run.medium, &boundary_nodes(&run.grid, &[q.y])?)?;
        let reference = dy.interpolate(&run.grid, x.position);
        rows.push(vec![
            i.to_string(),
            q.z.to_string(),
            q.y.to_string(),
            fmt_f64(q.t1),
            fmt_f64(d.estimate),
            fmt_f64(d.bracket.0),
            fmt_f64(d.bracket.1),
            d.monotone.to_string(),
            d.queries.to_string(),
            cut.as_ref().map_or("nan".into(), |c| fmt_f64(c.ratio)),
            cut.as_ref().map_or("unchecked".into(), |c| c.minimizing.to_string()),
            fmt_f64(reference),
        ]);
        for (step, o) in d.trace.iter().enumerate() {
            trace_rows.push(vec![
                i.to_string(),
                step.to_string(),
                fmt_f64(o.tau),
                fmt_f64(dc.eps),
                fmt_f64(o.value),
                o.holds.to_string(),
                o.indeterminate.to_string(),
            ]);
        }
        estimates.push(d.estimate);
    }
    let meta = run.meta();
    let p = run.path("distance.csv", "distance estimates with brackets, the cut-time check, and the eikonal reference");
    let header =
        ["query", "z", "y", "t1", "estimate", "lo", "hi", "monotone", "queries", "cut_ratio", "t1_minimizing", "reference"];
    write_table(&p, &meta, &header, rows)?;
    let p = run.path("distance_trace.csv", "bisection decisions per query");
    write_table(&p, &meta, &["query", "step", "tau", "eps", "value", "decision", "indeterminate"], trace_rows)?;
    Ok(json!({ "estimates": estimates }))
}

fn arrival(run: &mut Run, oracle: &MeasurementOracle) -> Result<Value> {
    let steps = run.cfg.arrival.as_ref().map_or(ptrlab_core::distance::DEFAULT_PULSE_STEPS, |a| a.pulse_steps);
    let map = arrival_time_map(oracle, steps * run.grid.dt())?;
    let speed = boundary_wavespeed(&map, &run.grid)?;
    let n = map.n;
    let meta = run.meta();
    let header: Vec<String> = (0..n).map(|j| format!("s{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..n).map(|i| (0..n).map(|j| fmt_f64(map.get(i, j))).collect::<Vec<_>>());
    let p = run.path("arrival.csv", "symmetrized first-arrival times between boundary slots");
    write_table(&p, &meta, &header, rows)?;
    let rows: Vec<_> = run
        .grid
        .boundary()
        .iter()
        .enumerate()
        .map(|(i, bn)| {
            let x = run.grid.coords(bn.node);
            vec![i.to_string(), fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(speed[i]), fmt_f64(run.medium.c()[bn.node])]
        })
        .collect();
    let p = run.path("boundary_speed.csv", "recovered boundary wave speed and the true nodal speed");
    write_table(&p, &meta, &["slot", "x", "y", "speed", "reference"], rows)?;
    Ok(json!({ "late_pairs": map.late.len(), "pulse_steps": steps }))
}

fn noise(run: &mut Run, oracle: &MeasurementOracle, cached: Option<CachedOperator>, conv: Convention) -> Result<(Value, u64)> {
    let nc = run.cfg.noise.clone().expect("validated");
    let seed = run.cfg.seed.expect("validated");
    let f = run.source();
    let lat = oracle.lattice().clone();
    let p = Projector::new(&ProjectorSpec::full_boundary(&run.grid, nc.window), &lat)?;
    let mut it = run.iteration(conv);
    let mut exact_cfg = it.clone();
    exact_cfg.tol = exact_cfg.tol.min(1e-10);
    exact_cfg.max_iter = Some(exact_cfg.max_iter.unwrap_or(2_000_000));
    let exact = ptr_iterate(oracle, &f, &p, &exact_cfg, None)?;
    it.pkp_norm = Some(exact.pkp_norm);
    let mut checkpoints = nc.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut sq = vec![0.0; checkpoints.len()];
    let mut queries = 0;
    for r in 0..nc.replicas {
        let spec = NoiseCovarianceSpec { sigma: nc.sigma, ell_x: nc.ell_x, ell_t: nc.ell_t, seed: seed + r };
        let inner = match &cached {
            Some(op) => MeasurementOracle::cached(op.clone()),
            None => MeasurementOracle::ideal(&run.grid, &run.medium)?,
        };
        let noisy = MeasurementOracle::noisy(inner, spec)?;
        let avg = averaged_noisy_iterate(&noisy, &f, &p, &it, nc.burn_in, &checkpoints)?;
        queries += avg.queries;
        for (i, (_, a)) in avg.averages.iter().enumerate() {
            sq[i] += lat.norm(&a.sub(&exact.h)).powi(2);
        }
    }
    let errs: Vec<f64> = sq.iter().map(|s| (s / nc.replicas as f64).sqrt()).collect();
    let slope = loglog_slope(&checkpoints, &errs);
    let meta = run.meta();
    let rows = checkpoints.iter().zip(&errs).map(|(k, e)| vec![k.to_string(), fmt_f64(*e)]);
    let p = run.path("noise.csv", "root-mean-square distance of the averaged iterate from the noise-free control");
    write_table(&p, &meta, &["K", "error"], rows)?;
    Ok((json!({ "slope": slope, "errors": errs, "omega": exact.omega, "replicas": nc.replicas }), queries))
}

fn loglog_slope(ks: &[usize], errs: &[f64]) -> Option<f64> {
    if ks.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = ks.iter().map(|k| (*k as f64).ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Some(lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx)
}

fn write_signal(path: &Path, meta: &[(String, String)], h: &BoundarySignal) -> Result<()> {
    let header: Vec<String> = std::iter::once("slot".to_string()).chain((0..h.n_times()).map(|k| format!("k{k}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..h.n_boundary())
        .map(|b| std::iter::once(b.to_string()).chain(h.row(b).iter().map(|v| fmt_f64(*v))).collect::<Vec<_>>());
    write_table(path, meta, &header, rows)?;
    Ok(())
}
