//! Bundled media with their recommended grids and horizons.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{build_grid, DomainGrid};
use crate::medium::MediumSpec;

/// Wave-speed profiles known to the catalog.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Constant(f64),
    /// `1 + 0.3 sin(pi x)`.
    Sinusoidal,
    /// `1 + 0.5 x`.
    LinearGradient,
    /// `1.1 - 0.4 exp(-|x - (0.5, 0.5)|^2 / 0.15^2)`.
    GaussianLens,
}

impl Profile {
    pub fn speed(self, x: [f64; 2]) -> f64 {
        match self {
            Profile::Constant(c) => c,
            Profile::Sinusoidal => 1.0 + 0.3 * (PI * x[0]).sin(),
            Profile::LinearGradient => 1.0 + 0.5 * x[0],
            Profile::GaussianLens => {
                let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
                1.1 - 0.4 * (-r2 / 0.0225).exp()
            }
        }
    }

    /// Speed bounds on the unit interval or square.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Profile::Constant(c) => (c, c),
            Profile::Sinusoidal => (1.0, 1.3),
            Profile::LinearGradient => (1.0, 1.5),
            Profile::GaussianLens => (0.7, 1.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub dim: usize,
    pub profile: Profile,
    /// Nodes per axis.
    pub resolution: usize,
    /// Recommended horizon `T`.
    pub horizon: f64,
}

impl Preset {
    pub fn c_min(&self) -> f64 {
        self.profile.bounds().0
    }

    pub fn c_max(&self) -> f64 {
        self.profile.bounds().1
    }

    pub fn extents(&self) -> Vec<f64> {
        vec![1.0; self.dim]
    }

    /// Grid and medium, with optional overrides of the resolution and horizon.
    pub fn build(&self, resolution: Option<usize>, horizon: Option<f64>) -> Result<(DomainGrid, MediumSpec)> {
        let n = resolution.unwrap_or(self.resolution);
        let grid = build_grid(&self.extents(), &vec![n; self.dim], horizon.unwrap_or(self.horizon), self.c_max())?;
        let profile = self.profile;
        let medium = MediumSpec::from_fn(&grid, move |x| profile.speed(x), |_| 0.0, |_| 0.0)?;
        Ok((grid, medium))
    }
}

pub fn catalog() -> Vec<Preset> {
    let p = |name, description, dim, profile, resolution, horizon| Preset {
        name,
        description,
        dim,
        profile,
        resolution,
        horizon,
    };
    vec![
        p("1d-homogeneous", "unit interval, c = 1", 1, Profile::Constant(1.0), 129, 1.5),
        p("1d-homogeneous-c2", "unit interval, c = 2", 1, Profile::Constant(2.0), 129, 0.75),
        p("1d-sinusoidal", "unit interval, c = 1 + 0.3 sin(pi x)", 1, Profile::Sinusoidal, 129, 1.0),
        p("2d-homogeneous", "unit square, c = 1", 2, Profile::Constant(1.0), 32, 0.75),
        p("2d-gradient", "unit square, c = 1 + 0.5 x", 2, Profile::LinearGradient, 32, 0.75),
        p("2d-lens", "unit square, slow Gaussian lens at the centre", 2, Profile::GaussianLens, 32, 0.75),
    ]
}

pub fn find(name: &str) -> Result<Preset> {
    catalog()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Invalid(format!("unknown preset '{name}'")))
}
