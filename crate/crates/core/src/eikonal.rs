//! First-order fast marching for `|grad d| = 1/c` on a square grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(PartialEq)]
struct Trial(f64, usize);

impl Eq for Trial {}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Trial {
    // Min-heap on the tentative value.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Travel times from `sources` on an `nx * ny` grid with spacing `h` and nodal speed `c`.
///
/// Nodes within two cells of a source are seeded with the straight-ray time
/// using the source speed; this removes most of the point-source error.
pub(crate) fn fast_marching(shape: [usize; 2], h: f64, c: &[f64], sources: &[usize]) -> Vec<f64> {
    let [nx, ny] = shape;
    let n = nx * ny;
    let mut t = vec![f64::INFINITY; n];
    let mut frozen = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        t[s] = 0.0;
    }
    for &s in sources {
        let (si, sj) = ((s % nx) as isize, (s / nx) as isize);
        for dj in -2isize..=2 {
            for di in -2isize..=2 {
                let (i, j) = (si + di, sj + dj);
                if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                    continue;
                }
                let k = j as usize * nx + i as usize;
                let r = ((di * di + dj * dj) as f64).sqrt() * h;
                let cm = 0.5 * (c[s] + c[k]);
                let v = r / cm;
                if v < t[k] {
                    t[k] = v;
                }
            }
        }
    }
    for (k, &v) in t.iter().enumerate() {
        if v.is_finite() {
            heap.push(Trial(v, k));
        }
    }
    while let Some(Trial(v, k)) = heap.pop() {
        if frozen[k] || v > t[k] {
            continue;
        }
        frozen[k] = true;
        let (i, j) = (k % nx, k / nx);
        let mut visit = |ni: usize, nj: usize| {
            let m = nj * nx + ni;
            if frozen[m] {
                return;
            }
            let cand = local_update(&t, &frozen, shape, h, c[m], ni, nj);
            if cand < t[m] {
                t[m] = cand;
                heap.push(Trial(cand, m));
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < nx {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < ny {
            visit(i, j + 1);
        }
    }
    t
}

fn local_update(t: &[f64], frozen: &[bool], shape: [usize; 2], h: f64, c: f64, i: usize, j: usize) -> f64 {
    let [nx, ny] = shape;
    let val = |ii: usize, jj: usize| {
        let m = jj * nx + ii;
        if frozen[m] {
            t[m]
        } else {
            f64::INFINITY
        }
    };
    let mut a = f64::INFINITY;
    if i > 0 {
        a = a.min(val(i - 1, j));
    }
    if i + 1 < nx {
        a = a.min(val(i + 1, j));
    }
    let mut b = f64::INFINITY;
    if ny > 1 {
        if j > 0 {
            b = b.min(val(i, j - 1));
        }
        if j + 1 < ny {
            b = b.min(val(i, j + 1));
        }
    }
    let hf = h / c;
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if !lo.is_finite() {
        return f64::INFINITY;
    }
    if hi - lo >= hf {
        return lo + hf;
    }
    0.5 * (lo + hi + (2.0 * hf * hf - (hi - lo) * (hi - lo)).sqrt())
}
