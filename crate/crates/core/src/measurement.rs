//! The measurement oracle: the only door to the response operator `Lambda`.
//!
//! Three flavours share one interface: the ideal oracle runs the solver per
//! query, the cached oracle applies a dense assembled matrix, and the noisy
//! oracle adds correlated Gaussian noise to another oracle's output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::medium::MediumSpec;
use crate::signal::{BoundaryLattice, BoundarySignal};
use crate::wave_solver::WaveSolver;

/// Largest operator the cached oracle will assemble.
pub const MAX_CACHED_DOF: usize = 8192;

const MAGIC: &[u8; 4] = b"PTRK";
const FORMAT_VERSION: u32 = 1;

/// Stationary Gaussian noise with separable squared-exponential correlation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCovarianceSpec {
    /// Pointwise standard deviation.
    pub sigma: f64,
    /// Correlation length along the boundary (arclength; ignored in 1D).
    pub ell_x: f64,
    /// Correlation length in time.
    pub ell_t: f64,
    pub seed: u64,
}

/// One logged oracle query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: u64,
    pub input_norm: f64,
    pub output_norm: f64,
}

enum Backend {
    Ideal(WaveSolver),
    Cached(CachedOperator),
    Noisy { inner: Box<MeasurementOracle>, noise: NoiseGenerator },
}

/// Black-box access to `f -> Lambda f` with a query counter.
pub struct MeasurementOracle {
    backend: Backend,
    lattice: BoundaryLattice,
    queries: AtomicU64,
    log: Option<Mutex<Vec<QueryRecord>>>,
    /// Spacing of consecutive boundary slots along a closed perimeter.
    perimeter_step: Option<f64>,
}

impl std::fmt::Debug for MeasurementOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeasurementOracle")
            .field("kind", &self.kind())
            .field("queries", &self.query_count())
            .finish()
    }
}

impl MeasurementOracle {
    /// An oracle that solves the forward problem on every query.
    pub fn ideal(grid: &DomainGrid, medium: &MediumSpec) -> Result<Self> {
        let mut o = Self::with_backend(Backend::Ideal(WaveSolver::new(grid, medium)?), BoundaryLattice::new(grid, medium));
        o.perimeter_step = (grid.dim() == 2).then(|| grid.h());
        Ok(o)
    }

    /// An oracle backed by an assembled operator.
    pub fn cached(op: CachedOperator) -> Self {
        let lattice = op.lattice.clone();
        Self::with_backend(Backend::Cached(op), lattice)
    }

    /// Wraps `inner`, adding fresh noise to every query.
    pub fn noisy(inner: MeasurementOracle, spec: NoiseCovarianceSpec) -> Result<Self> {
        if !(spec.sigma.is_finite() && spec.sigma >= 0.0) {
            return Err(Error::Invalid(format!("noise level must be non-negative, got {}", spec.sigma)));
        }
        if !(spec.ell_x >= 0.0 && spec.ell_t >= 0.0) {
            return Err(Error::Invalid("correlation lengths must be non-negative".into()));
        }
        let lattice = inner.lattice.clone();
        let step = inner.perimeter_step;
        let noise = NoiseGenerator::new(spec, &lattice, step);
        let mut o = Self::with_backend(Backend::Noisy { inner: Box::new(inner), noise }, lattice);
        o.perimeter_step = step;
        Ok(o)
    }

    fn with_backend(backend: Backend, lattice: BoundaryLattice) -> Self {
        Self { backend, lattice, queries: AtomicU64::new(0), log: None, perimeter_step: None }
    }

    /// Declares the boundary slots a closed perimeter with the given spacing (used for noise correlation).
    pub fn with_perimeter_step(mut self, step: f64) -> Self {
        self.perimeter_step = Some(step);
        self
    }

    /// Starts recording a [`QueryRecord`] per query.
    pub fn with_query_log(mut self) -> Self {
        self.log = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn kind(&self) -> &'static str {
        match self.backend {
            Backend::Ideal(_) => "ideal",
            Backend::Cached(_) => "cached",
            Backend::Noisy { .. } => "noisy",
        }
    }

    pub fn lattice(&self) -> &BoundaryLattice {
        &self.lattice
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn query_log(&self) -> Vec<QueryRecord> {
        self.log.as_ref().map(|l| l.lock().expect("query log poisoned").clone()).unwrap_or_default()
    }

    /// Writes the query log as CSV with `#` metadata lines.
    pub fn write_query_log(&self, path: &Path) -> Result<()> {
        let rows = self
            .query_log()
            .into_iter()
            .map(|r| vec![r.index.to_string(), format!("{:e}", r.input_norm), format!("{:e}", r.output_norm)]);
        let meta = [("oracle".to_string(), self.kind().to_string()), ("queries".to_string(), self.query_count().to_string())];
        crate::export::write_table(path, &meta, &["query", "input_norm", "output_norm"], rows)
    }

    /// The noise-free oracle underneath a noisy one, or `self`.
    pub fn reference(&self) -> &MeasurementOracle {
        match &self.backend {
            Backend::Noisy { inner, .. } => inner.reference(),
            _ => self,
        }
    }

    /// One measurement `Lambda f`.
    pub fn apply(&self, f: &BoundarySignal) -> Result<BoundarySignal> {
        self.lattice.check(f)?;
        let index = self.queries.fetch_add(1, Ordering::Relaxed);
        let out = match &self.backend {
            Backend::Ideal(solver) => solver.solve(f, &[])?.trace,
            Backend::Cached(op) => op.apply(f)?,
            Backend::Noisy { inner, noise } => {
                let mut out = inner.apply(f)?;
                noise.add_to(&mut out);
                out
            }
        };
        if let Some(log) = &self.log {
            log.lock().expect("query log poisoned").push(QueryRecord {
                index,
                input_norm: self.lattice.norm(f),
                output_norm: self.lattice.norm(&out),
            });
        }
        Ok(out)
    }
}

/// `Lambda f` through the oracle.
pub fn lambda_apply(oracle: &MeasurementOracle, f: &BoundarySignal) -> Result<BoundarySignal> {
    oracle.apply(f)
}

/// Correlated noise draws from a seeded stream; queries are serialized by the lock.
struct NoiseGenerator {
    spec: NoiseCovarianceSpec,
    rng: Mutex<ChaCha8Rng>,
    kernel_t: Vec<f64>,
    kernel_x: Vec<f64>,
    scale: f64,
}

impl NoiseGenerator {
    fn new(spec: NoiseCovarianceSpec, lattice: &BoundaryLattice, perimeter_step: Option<f64>) -> Self {
        let kernel = |ell: f64, step: f64| -> Vec<f64> {
            if ell < 0.5 * step {
                return vec![1.0];
            }
            let r = (4.0 * ell / step).ceil() as isize;
            (-r..=r).map(|j| (-0.5 * (j as f64 * step / ell).powi(2)).exp()).collect()
        };
        let kernel_t = kernel(spec.ell_t, lattice.dt());
        let kernel_x = match perimeter_step {
            Some(step) if lattice.n_boundary() > 2 => kernel(spec.ell_x, step),
            _ => vec![1.0],
        };
        let energy = |k: &[f64]| k.iter().map(|v| v * v).sum::<f64>();
        let scale = spec.sigma / (energy(&kernel_t) * energy(&kernel_x)).sqrt();
        let rng = Mutex::new(ChaCha8Rng::seed_from_u64(spec.seed));
        Self { spec, rng, kernel_t, kernel_x, scale }
    }

    fn add_to(&self, out: &mut BoundarySignal) {
        if self.spec.sigma == 0.0 {
            return;
        }
        let (nb, nt) = (out.n_boundary(), out.n_times());
        let white: Vec<f64> = {
            let mut rng = self.rng.lock().expect("noise stream poisoned");
            (0..nb * nt).map(|_| StandardNormal.sample(&mut *rng)).collect()
        };
        // Time smoothing with zero padding, then periodic smoothing along the perimeter.
        let rt = (self.kernel_t.len() / 2) as isize;
        let mut smooth_t = vec![0.0; nb * nt];
        for b in 0..nb {
            for k in 0..nt as isize {
                let mut acc = 0.0;
                for (j, w) in self.kernel_t.iter().enumerate() {
                    let src = k + j as isize - rt;
                    if src >= 0 && src < nt as isize {
                        acc += w * white[b * nt + src as usize];
                    }
                }
                smooth_t[b * nt + k as usize] = acc;
            }
        }
        let rx = (self.kernel_x.len() / 2) as isize;
        let vals = out.values_mut();
        for b in 0..nb as isize {
            for k in 0..nt {
                let mut acc = 0.0;
                for (j, w) in self.kernel_x.iter().enumerate() {
                    let src = (b + j as isize - rx).rem_euclid(nb as isize) as usize;
                    acc += w * smooth_t[src * nt + k];
                }
                vals[b as usize * nt + k] += self.scale * acc;
            }
        }
    }
}

/// Dense `Lambda` on the lattice, row-major with index `b * n_times + k`.
#[derive(Clone)]
pub struct CachedOperator {
    lattice: BoundaryLattice,
    matrix: Vec<f64>,
    conv: Option<Arc<Convolution>>,
}

impl std::fmt::Debug for CachedOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CachedOperator")
            .field("dof", &self.dof())
            .field("shift_invariant", &self.conv.is_some())
            .finish()
    }
}

impl CachedOperator {
    pub fn dof(&self) -> usize {
        self.lattice.n_boundary() * self.lattice.n_times()
    }
    pub fn lattice(&self) -> &BoundaryLattice {
        &self.lattice
    }
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
    /// True when the operator was recognised as a causal convolution and is applied by FFT.
    pub fn is_shift_invariant(&self) -> bool {
        self.conv.is_some()
    }

    fn from_matrix(lattice: BoundaryLattice, matrix: Vec<f64>) -> Self {
        let conv = Convolution::detect(&lattice, &matrix).map(Arc::new);
        Self { lattice, matrix, conv }
    }

    pub fn apply(&self, f: &BoundarySignal) -> Result<BoundarySignal> {
        self.lattice.check(f)?;
        if let Some(conv) = &self.conv {
            return Ok(conv.apply(f));
        }
        Ok(self.apply_dense(f))
    }

    /// Matrix-vector product, bypassing the convolution path.
    pub fn apply_dense(&self, f: &BoundarySignal) -> BoundarySignal {
        let n = self.dof();
        let x = f.values();
        let mut y = vec![0.0; n];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.matrix[i * n..(i + 1) * n];
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        BoundarySignal::from_vec(f.n_boundary(), f.n_times(), y).expect("shape preserved")
    }

    /// Writes the binary format: magic, version, dims, dt, weights, row-major matrix (little endian).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.lattice.n_boundary() as u64).to_le_bytes())?;
        w.write_all(&(self.lattice.n_times() as u64).to_le_bytes())?;
        w.write_all(&self.lattice.dt().to_le_bytes())?;
        for v in self.lattice.weights().iter().chain(&self.matrix) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let nb = read_u64(&mut r)? as usize;
        let nt = read_u64(&mut r)? as usize;
        let dof = nb.checked_mul(nt).filter(|&d| d <= MAX_CACHED_DOF && d > 0);
        let dof = dof.ok_or_else(|| Error::Format(format!("implausible dimensions {nb} x {nt}")))?;
        let read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let dt = read_f64(&mut r)?;
        let weights = (0..nb).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let matrix = (0..dof * dof).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self::from_matrix(BoundaryLattice::from_parts(weights, dt, nt), matrix))
    }
}

fn check_cacheable(oracle: &MeasurementOracle, max_dof: usize) -> Result<usize> {
    let lat = oracle.lattice();
    let dof = lat.n_boundary() * lat.n_times();
    let limit = max_dof.min(MAX_CACHED_DOF);
    if dof > limit {
        return Err(Error::TooLarge { dof, limit });
    }
    Ok(dof)
}

/// Assembles `Lambda` column by column from unit impulses at every lattice site.
pub fn assemble_cached(oracle: &MeasurementOracle, max_dof: usize) -> Result<CachedOperator> {
    let dof = check_cacheable(oracle, max_dof)?;
    let lat = oracle.lattice();
    let mut matrix = vec![0.0; dof * dof];
    let mut e = lat.zeros();
    for j in 0..dof {
        e.values_mut()[j] = 1.0;
        let col = oracle.apply(&e)?;
        e.values_mut()[j] = 0.0;
        for (i, v) in col.values().iter().enumerate() {
            matrix[i * dof + j] = *v;
        }
    }
    Ok(CachedOperator::from_matrix(lat.clone(), matrix))
}

/// Assembles `Lambda` from one impulse per boundary node, assuming time invariance.
///
/// For a time-invariant medium this reproduces [`assemble_cached`] exactly
/// with `n_boundary` queries instead of `n_boundary * n_times`.
pub fn assemble_cached_shifted(oracle: &MeasurementOracle, max_dof: usize) -> Result<CachedOperator> {
    let dof = check_cacheable(oracle, max_dof)?;
    let lat = oracle.lattice();
    let (nb, nt) = (lat.n_boundary(), lat.n_times());
    let mut matrix = vec![0.0; dof * dof];
    let mut e = lat.zeros();
    for bin in 0..nb {
        e.set(bin, 0, 1.0);
        let resp = oracle.apply(&e)?;
        e.set(bin, 0, 0.0);
        for bout in 0..nb {
            for k in 0..nt {
                for lag in 0..nt - k {
                    matrix[(bout * nt + k + lag) * dof + bin * nt + k] = resp.get(bout, lag);
                }
            }
        }
    }
    Ok(CachedOperator::from_matrix(lat.clone(), matrix))
}

/// `Lambda` as a block causal convolution, applied with FFTs.
struct Convolution {
    nb: usize,
    nt: usize,
    len: usize,
    /// Spectra indexed `[bout * nb + bin]`.
    spectra: Vec<Vec<Complex<f64>>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Convolution {
    fn detect(lattice: &BoundaryLattice, m: &[f64]) -> Option<Self> {
        let (nb, nt) = (lattice.n_boundary(), lattice.n_times());
        let dof = nb * nt;
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-12 * scale;
        let kernel = |bout: usize, bin: usize, lag: usize| m[(bout * nt + lag) * dof + bin * nt];
        for bout in 0..nb {
            for bin in 0..nb {
                for k in 0..nt {
                    for row in 0..nt {
                        let v = m[(bout * nt + row) * dof + bin * nt + k];
                        let expect = if row >= k { kernel(bout, bin, row - k) } else { 0.0 };
                        if (v - expect).abs() > tol {
                            return None;
                        }
                    }
                }
            }
        }
        let len = (2 * nt).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut spectra = Vec::with_capacity(nb * nb);
        for bout in 0..nb {
            for bin in 0..nb {
                let mut buf = vec![Complex::new(0.0, 0.0); len];
                for (lag, slot) in buf.iter_mut().take(nt).enumerate() {
                    slot.re = kernel(bout, bin, lag);
                }
                fwd.process(&mut buf);
                spectra.push(buf);
            }
        }
        Some(Self { nb, nt, len, spectra, fwd, inv })
    }

    fn apply(&self, f: &BoundarySignal) -> BoundarySignal {
        let (nb, nt, len) = (self.nb, self.nt, self.len);
        let zero = Complex::new(0.0, 0.0);
        let mut acc = vec![vec![zero; len]; nb];
        let mut buf = vec![zero; len];
        for bin in 0..nb {
            let row = f.row(bin);
            if row.iter().all(|&v| v == 0.0) {
                continue;
            }
            buf.iter_mut().for_each(|c| *c = zero);
            for (slot, &v) in buf.iter_mut().zip(row) {
                slot.re = v;
            }
            self.fwd.process(&mut buf);
            for (bout, out) in acc.iter_mut().enumerate() {
                let spec = &self.spectra[bout * nb + bin];
                for ((o, s), x) in out.iter_mut().zip(spec).zip(&buf) {
                    *o += s * x;
                }
            }
        }
        let mut out = BoundarySignal::zeros(nb, nt);
        let norm = 1.0 / len as f64;
        for (bout, mut spec) in acc.into_iter().enumerate() {
            self.inv.process(&mut spec);
            for (slot, c) in out.row_mut(bout).iter_mut().zip(&spec) {
                *slot = c.re * norm;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn small_1d() -> (DomainGrid, MediumSpec) {
        let g = build_grid(&[1.0], &[17], 0.6, 1.3).unwrap();
        let m = MediumSpec::from_fn(&g, |x| 1.0 + 0.3 * (std::f64::consts::PI * x[0]).sin(), |_| 0.0, |_| 0.0).unwrap();
        (g, m)
    }

    fn probe(nb: usize, nt: usize) -> BoundarySignal {
        BoundarySignal::from_fn(nb, nt, |b, k| ((b as f64 + 1.0) * 0.37 * k as f64).sin())
    }

    #[test]
    fn cached_matches_ideal_and_counts_queries() {
        let (g, m) = small_1d();
        let ideal = MeasurementOracle::ideal(&g, &m).unwrap();
        let op = assemble_cached(&ideal, 4096).unwrap();
        assert_eq!(ideal.query_count() as usize, op.dof());
        assert_eq!(op.matrix().len(), op.dof() * op.dof());
        let cached = MeasurementOracle::cached(op.clone());
        let f = probe(g.n_boundary(), g.n_times());
        let a = ideal.apply(&f).unwrap();
        let b = cached.apply(&f).unwrap();
        let c = op.apply_dense(&f);
        let scale = a.max_abs();
        assert!(a.sub(&b).max_abs() <= 1e-12 * scale);
        assert!(a.sub(&c).max_abs() <= 1e-12 * scale);
        assert_eq!(cached.query_count(), 1);
    }

    #[test]
    fn shifted_assembly_is_bitwise_equal() {
        let (g, m) = small_1d();
        let ideal = MeasurementOracle::ideal(&g, &m).unwrap();
        let full = assemble_cached(&ideal, 4096).unwrap();
        let fast = assemble_cached_shifted(&ideal, 4096).unwrap();
        assert_eq!(full.matrix(), fast.matrix());
        assert!(full.is_shift_invariant());
    }

    #[test]
    fn too_large_is_refused() {
        let (g, m) = small_1d();
        let ideal = MeasurementOracle::ideal(&g, &m).unwrap();
        assert!(matches!(assemble_cached(&ideal, 10), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn binary_round_trip() {
        let (g, m) = small_1d();
        let ideal = MeasurementOracle::ideal(&g, &m).unwrap();
        let op = assemble_cached_shifted(&ideal, 4096).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("op.ptrk");
        op.save(&path).unwrap();
        let back = CachedOperator::load(&path).unwrap();
        assert_eq!(back.matrix(), op.matrix());
        assert_eq!(back.lattice(), op.lattice());
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PTRK");
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(CachedOperator::load(&path).is_err());
    }

    #[test]
    fn noise_is_seeded_and_has_requested_level() {
        let g = build_grid(&[1.0], &[65], 1.0, 1.0).unwrap();
        let m = MediumSpec::homogeneous(&g, 1.0).unwrap();
        let spec = NoiseCovarianceSpec { sigma: 0.01, ell_x: 0.0, ell_t: 0.02, seed: 9 };
        let make = || MeasurementOracle::noisy(MeasurementOracle::ideal(&g, &m).unwrap(), spec.clone()).unwrap();
        let (a, b) = (make(), make());
        let zero = BoundarySignal::zeros(2, g.n_times());
        let na = a.apply(&zero).unwrap();
        assert_eq!(na, b.apply(&zero).unwrap());
        assert_ne!(na, a.apply(&zero).unwrap());
        let interior: Vec<f64> = (0..2).flat_map(|bb| na.row(bb)[10..g.n_times() - 10].to_vec()).collect();
        let std = (interior.iter().map(|v| v * v).sum::<f64>() / interior.len() as f64).sqrt();
        assert!((std - 0.01).abs() < 0.003, "std {std}");
        assert_eq!(a.reference().kind(), "ideal");
    }

    #[test]
    fn zero_noise_is_transparent() {
        let (g, m) = small_1d();
        let spec = NoiseCovarianceSpec { sigma: 0.0, ell_x: 0.1, ell_t: 0.1, seed: 1 };
        let noisy = MeasurementOracle::noisy(MeasurementOracle::ideal(&g, &m).unwrap(), spec).unwrap();
        let ideal = MeasurementOracle::ideal(&g, &m).unwrap();
        let f = probe(2, g.n_times());
        assert_eq!(noisy.apply(&f).unwrap(), ideal.apply(&f).unwrap());
    }

    #[test]
    fn query_log_records_each_call() {
        let (g, m) = small_1d();
        let o = MeasurementOracle::ideal(&g, &m).unwrap().with_query_log();
        let f = probe(2, g.n_times());
        o.apply(&f).unwrap();
        o.apply(&f).unwrap();
        let log = o.query_log();
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].index, 1);
        assert!(log[0].input_norm > 0.0);
    }
}
