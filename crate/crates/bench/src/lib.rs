//! Shared fixtures for the benchmarks.

use ptrlab_core::{presets, BoundarySignal, DomainGrid, MediumSpec};

/// Grid and medium of a bundled preset at its default resolution.
pub fn preset(name: &str) -> (DomainGrid, MediumSpec) {
    presets::find(name).and_then(|p| p.build(None, None)).expect("bundled preset")
}

/// The same Gaussian pulse on every boundary slot.
pub fn pulse(grid: &DomainGrid) -> BoundarySignal {
    let t_mid = 0.5 * grid.horizon();
    BoundarySignal::from_fn(grid.n_boundary(), grid.n_times(), |_, k| (-((grid.time(k) - t_mid) / 0.1).powi(2)).exp())
}
