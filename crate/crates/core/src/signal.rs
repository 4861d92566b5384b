//! Boundary time series on the space-time lattice `boundary x {t_k}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::medium::MediumSpec;

/// Samples `f(z_b, t_k)`, stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySignal {
    n_boundary: usize,
    n_times: usize,
    values: Vec<f64>,
}

impl BoundarySignal {
    pub fn zeros(n_boundary: usize, n_times: usize) -> Self {
        Self { n_boundary, n_times, values: vec![0.0; n_boundary * n_times] }
    }

    pub fn from_fn(n_boundary: usize, n_times: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut s = Self::zeros(n_boundary, n_times);
        for b in 0..n_boundary {
            for k in 0..n_times {
                s.values[b * n_times + k] = f(b, k);
            }
        }
        s
    }

    pub fn from_vec(n_boundary: usize, n_times: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_boundary * n_times {
            return Err(Error::Shape(format!(
                "{} values for a {n_boundary} x {n_times} lattice",
                values.len()
            )));
        }
        Ok(Self { n_boundary, n_times, values })
    }

    pub fn n_boundary(&self) -> usize {
        self.n_boundary
    }
    pub fn n_times(&self) -> usize {
        self.n_times
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn get(&self, b: usize, k: usize) -> f64 {
        self.values[b * self.n_times + k]
    }
    pub fn set(&mut self, b: usize, k: usize, v: f64) {
        self.values[b * self.n_times + k] = v;
    }
    pub fn row(&self, b: usize) -> &[f64] {
        &self.values[b * self.n_times..(b + 1) * self.n_times]
    }
    pub fn row_mut(&mut self, b: usize) -> &mut [f64] {
        &mut self.values[b * self.n_times..(b + 1) * self.n_times]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_boundary == other.n_boundary && self.n_times == other.n_times
    }

    pub(crate) fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{} x {} signal against {} x {}",
                self.n_boundary, self.n_times, other.n_boundary, other.n_times
            )))
        }
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert!(self.same_shape(x));
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut s = self.clone();
        s.scale(a);
        s
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut s = self.clone();
        s.axpy(-1.0, other);
        s
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut s = self.clone();
        s.axpy(1.0, other);
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Quadrature of the boundary inner product: surface weight `dS_g` times `dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLattice {
    weights: Vec<f64>,
    dt: f64,
    n_times: usize,
}

impl BoundaryLattice {
    pub fn new(grid: &DomainGrid, medium: &MediumSpec) -> Self {
        Self { weights: medium.surface_weights(grid), dt: grid.dt(), n_times: grid.n_times() }
    }

    pub fn from_parts(weights: Vec<f64>, dt: f64, n_times: usize) -> Self {
        Self { weights, dt, n_times }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn n_times(&self) -> usize {
        self.n_times
    }
    pub fn n_boundary(&self) -> usize {
        self.weights.len()
    }
    /// Index of the sample at `T`.
    pub fn mid_step(&self) -> usize {
        (self.n_times - 1) / 2
    }
    pub fn horizon(&self) -> f64 {
        self.mid_step() as f64 * self.dt
    }
    pub fn zeros(&self) -> BoundarySignal {
        BoundarySignal::zeros(self.n_boundary(), self.n_times)
    }

    pub fn check(&self, f: &BoundarySignal) -> Result<()> {
        if f.n_boundary() == self.n_boundary() && f.n_times() == self.n_times {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "signal is {} x {}, lattice is {} x {}",
                f.n_boundary(),
                f.n_times(),
                self.n_boundary(),
                self.n_times
            )))
        }
    }

    /// `sum_b sum_k f h dS_g dt`.
    pub fn inner(&self, f: &BoundarySignal, g: &BoundarySignal) -> f64 {
        debug_assert!(f.same_shape(g));
        let mut total = 0.0;
        for (b, w) in self.weights.iter().enumerate() {
            let s: f64 = f.row(b).iter().zip(g.row(b)).map(|(x, y)| x * y).sum();
            total += w * s;
        }
        total * self.dt
    }

    pub fn norm(&self, f: &BoundarySignal) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }
}
