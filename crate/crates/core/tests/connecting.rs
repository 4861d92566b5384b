use ptrlab_core::boundary_ops::{time_reverse, FilterVariant};
use ptrlab_core::connecting::{
    blago_inner_product, connecting_apply, resolve_convention, Convention, InteriorReference,
};
use ptrlab_core::probes::random_smooth_source;
use ptrlab_core::{build_grid, DomainGrid, MeasurementOracle, MediumSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sinusoidal_1d(n: usize, horizon: f64) -> (DomainGrid, MediumSpec) {
    let g = build_grid(&[1.0], &[n], horizon, 1.3).unwrap();
    let m = MediumSpec::from_fn(&g, |x| 1.0 + 0.3 * (std::f64::consts::PI * x[0]).sin(), |_| 0.0, |_| 0.0).unwrap();
    (g, m)
}

fn gradient_2d(n: usize, horizon: f64) -> (DomainGrid, MediumSpec) {
    let g = build_grid(&[1.0, 1.0], &[n, n], horizon, 1.3).unwrap();
    let m = MediumSpec::from_fn(&g, |x| 1.0 + 0.3 * x[0], |x| 0.5 * x[1], |_| 0.2).unwrap();
    (g, m)
}

#[test]
fn adjoint_identity_holds_on_the_lattice() {
    for (g, m) in [sinusoidal_1d(65, 1.0), gradient_2d(17, 0.6)] {
        let o = MeasurementOracle::ideal(&g, &m).unwrap();
        let lat = o.lattice().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            let f = random_smooth_source(&g, &mut rng, 0.0, 2.0 * g.horizon());
            let h = random_smooth_source(&g, &mut rng, 0.0, 2.0 * g.horizon());
            let lhs = lat.inner(&o.apply(&f).unwrap(), &h);
            let rhs = lat.inner(&f, &time_reverse(&o.apply(&time_reverse(&h)).unwrap()));
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-12), "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn variants_differ_by_sign_only() {
    let (g, m) = gradient_2d(17, 0.6);
    let o = MeasurementOracle::ideal(&g, &m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_smooth_source(&g, &mut rng, 0.0, g.horizon());
    let a = connecting_apply(&o, &f, Convention { variant: FilterVariant::Causal, sign: 1.0 }).unwrap();
    let b = connecting_apply(&o, &f, Convention { variant: FilterVariant::Anticausal, sign: 1.0 }).unwrap();
    assert!(a.add(&b).max_abs() <= 1e-10 * a.max_abs());
}

#[test]
fn blagovestchenskii_matches_interior_in_2d() {
    let (g, m) = gradient_2d(25, 0.6);
    let o = MeasurementOracle::ideal(&g, &m).unwrap();
    let reference = InteriorReference::new(&g, &m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let conv = Convention::canonical(FilterVariant::Causal);
    for _ in 0..2 {
        let f = random_smooth_source(&g, &mut rng, 0.0, g.horizon());
        let h = random_smooth_source(&g, &mut rng, 0.0, g.horizon());
        let b = blago_inner_product(&o, &f, &h, conv).unwrap();
        let v = reference.inner_product(&f, &h).unwrap();
        let scale = (reference.inner_product(&f, &f).unwrap() * reference.inner_product(&h, &h).unwrap()).sqrt();
        assert!((b - v).abs() < 0.02 * scale, "{b} vs {v}");
    }
}

#[test]
fn convention_resolution_finds_both_variants() {
    let (g, m) = sinusoidal_1d(65, 1.0);
    let o = MeasurementOracle::ideal(&g, &m).unwrap();
    for variant in [FilterVariant::Causal, FilterVariant::Anticausal] {
        let r = resolve_convention(&o, &g, &m, variant, 5).unwrap();
        assert_eq!(r.convention, Convention::canonical(variant));
        assert!(r.max_rel_error < 0.01, "{r:?}");
    }
}
