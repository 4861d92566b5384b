use ptrlab_core::focusing::cut_indicator;
use ptrlab_core::presets::find;
use ptrlab_core::{BoundarySignal, Convention, FilterVariant, FocusSpec, IterationConfig, MeasurementOracle, OmegaRule};

#[test]
fn focused_mass_collapses_past_the_cut_time() {
    // Bottom midpoint of the unit square: the normal stops minimizing at depth 0.5.
    let (g, m) = find("2d-homogeneous").unwrap().build(None, None).unwrap();
    let o = MeasurementOracle::ideal(&g, &m).unwrap();
    let f = BoundarySignal::from_fn(g.n_boundary(), g.n_times(), |b, k| {
        let s = g.boundary()[b].arclength;
        (-((g.time(k) - 0.5) / 0.15).powi(2)).exp() * (1.0 + 0.5 * (std::f64::consts::TAU * s).cos())
    });
    let z = g.boundary_slot(g.nearest_node(&[0.5, 0.0])).unwrap();
    let mut cfg = IterationConfig::new(1e-4, Convention::canonical(FilterVariant::Causal));
    cfg.omega = OmegaRule::Scaled(1.0);
    cfg.tol = 1e-4;
    cfg.max_iter = Some(200_000);
    let mut spec = FocusSpec::new(&g, z, 0.4, 0.35);
    spec.j_max = 3;
    let inside = cut_indicator(&o, &g, &f, &spec, 0.25, &cfg).unwrap();
    assert!(inside.minimizing, "{inside:?}");
    let past = FocusSpec { t_hat: 0.65, t0: 0.6, ..spec };
    let outside = cut_indicator(&o, &g, &f, &past, 0.25, &cfg).unwrap();
    assert!(!outside.minimizing, "{outside:?}");
}

#[test]
fn interval_depths_below_the_midpoint_minimize() {
    let (g, m) = find("1d-homogeneous").unwrap().build(Some(65), None).unwrap();
    let o = MeasurementOracle::ideal(&g, &m).unwrap();
    let f = BoundarySignal::from_fn(2, g.n_times(), |b, k| {
        let t = g.time(k);
        (1.0 + b as f64) * (-((t - 1.0) / 0.3).powi(2)).exp() * (6.0 * t).cos()
    });
    let mut cfg = IterationConfig::new(1e-4, Convention::canonical(FilterVariant::Causal));
    cfg.omega = OmegaRule::Scaled(1.0);
    cfg.tol = 1e-5;
    cfg.max_iter = Some(2_000_000);
    let spec = FocusSpec::new(&g, 0, 0.4, 0.35);
    let r = cut_indicator(&o, &g, &f, &spec, 0.2, &cfg).unwrap();
    assert!(r.minimizing, "{r:?}");
    let past = FocusSpec { t_hat: 0.7, t0: 0.65, ..spec };
    let r = cut_indicator(&o, &g, &f, &past, 0.2, &cfg).unwrap();
    assert!(!r.minimizing, "{r:?}");
}
