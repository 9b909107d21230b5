//! Arrival-heading optimization: the value of a Dubins path is the UCB
//! integrated over its swath, and the heading is chosen by a small exact-GP
//! BO loop over `[-pi, pi]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::acquisition::ucb;
use crate::geometry::wrap_angle;
use crate::svgp::Snapshot;
use crate::vehicle::{dubins_shortest, sample_path, DubinsPath, Pose};
use crate::Rect;

/// Fractions `(along, across)` in `[0, 1)^2` locating swath samples.
pub fn swath_fractions<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random(), rng.random())).collect()
}

/// Swath integral of the UCB along `path` with fixed sample fractions.
/// Samples outside `extent` contribute nothing.
pub fn path_value_with(
    snap: &Snapshot,
    path: &DubinsPath,
    swath_width: f64,
    beta: f64,
    extent: &Rect,
    fractions: &[(f64, f64)],
) -> f64 {
    if path.length <= 0.0 || fractions.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &(fs, fo) in fractions {
        let pose = path.pose_at(fs * path.length);
        let off = (fo - 0.5) * swath_width;
        let x = pose.x - off * pose.theta.sin();
        let y = pose.y + off * pose.theta.cos();
        if extent.contains(x, y) {
            let (m, s) = snap.latent([x, y]);
            total += ucb(m, s, beta);
        }
    }
    total / fractions.len() as f64 * path.length * swath_width
}

/// Monte Carlo swath integral of the UCB with `n_samples` fresh draws.
pub fn path_value<R: Rng + ?Sized>(
    snap: &Snapshot,
    path: &DubinsPath,
    swath_width: f64,
    beta: f64,
    extent: &Rect,
    n_samples: usize,
    rng: &mut R,
) -> f64 {
    assert!(n_samples >= 1);
    let fr = swath_fractions(n_samples, rng);
    path_value_with(snap, path, swath_width, beta, extent, &fr)
}

/// True when every pose sampled at 1 m spacing lies in `extent`.
pub fn path_within(path: &DubinsPath, extent: &Rect) -> bool {
    sample_path(path, 1.0).iter().all(|p| extent.contains(p.x, p.y))
}

/// Exact GP over headings with a Matérn-5/2 kernel on chordal distance and an
/// incrementally grown Cholesky factor.
#[derive(Debug, Clone)]
pub struct HeadingSurrogate {
    thetas: Vec<f64>,
    values: Vec<f64>,
    chol: DMatrix<f64>,
    lengthscale: f64,
    noise: f64,
}

pub const HEADING_LENGTHSCALE: f64 = 1.0;
const HEADING_NOISE: f64 = 1e-6;

fn chordal(a: f64, b: f64) -> f64 {
    2.0 * (0.5 * wrap_angle(a - b)).sin().abs()
}

fn k52(r: f64, ell: f64) -> f64 {
    let t = 5f64.sqrt() * r / ell;
    (1.0 + t + t * t / 3.0) * (-t).exp()
}

impl Default for HeadingSurrogate {
    fn default() -> Self {
        Self::new(HEADING_LENGTHSCALE)
    }
}

impl HeadingSurrogate {
    pub fn new(lengthscale: f64) -> Self {
        Self {
            thetas: Vec::new(),
            values: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            lengthscale,
            noise: HEADING_NOISE,
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.thetas.iter().copied().zip(self.values.iter().copied())
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    fn kvec(&self, theta: f64) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.thetas.iter().map(|&t| k52(chordal(t, theta), self.lengthscale)))
    }

    /// Appends one observation, extending the factor by one row.
    pub fn push(&mut self, theta: f64, value: f64) {
        let n = self.len();
        let k = self.kvec(theta);
        let l = if n > 0 {
            self.chol.solve_lower_triangular(&k).expect("factor has a positive diagonal")
        } else {
            DVector::zeros(0)
        };
        let d2 = 1.0 + self.noise - l.norm_squared();
        let d = d2.max(self.noise).sqrt();
        let mut next = DMatrix::zeros(n + 1, n + 1);
        next.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        for j in 0..n {
            next[(n, j)] = l[j];
        }
        next[(n, n)] = d;
        self.chol = next;
        self.thetas.push(wrap_angle(theta));
        self.values.push(value);
    }

    /// Factor of the full kernel matrix computed from scratch.
    pub fn factor_from_scratch(&self) -> DMatrix<f64> {
        let n = self.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            k52(chordal(self.thetas[i], self.thetas[j]), self.lengthscale) + if i == j { self.noise } else { 0.0 }
        });
        k.cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(n, n))
    }

    fn standardization(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
    }

    /// Posterior mean and standard deviation in standardized value units.
    pub fn posterior(&self, theta: f64) -> (f64, f64) {
        if self.is_empty() {
            return (0.0, 1.0);
        }
        let (mean, std) = self.standardization();
        let y = DVector::from_iterator(self.len(), self.values.iter().map(|v| (v - mean) / std));
        let k = self.kvec(theta);
        let lk = self.chol.solve_lower_triangular(&k).expect("factor has a positive diagonal");
        let ly = self.chol.solve_lower_triangular(&y).expect("factor has a positive diagonal");
        let mu = lk.dot(&ly);
        let var = (1.0 - lk.norm_squared()).max(0.0);
        (mu, var.sqrt())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadingSearch {
    pub beta: f64,
    pub n_samples: usize,
    pub extra_evals: usize,
    pub grid: usize,
    pub swath_width: f64,
    pub turn_radius: f64,
}

#[derive(Debug, Clone)]
pub struct HeadingResult {
    pub theta: f64,
    pub path: DubinsPath,
    pub value: f64,
    pub evaluations: usize,
    pub within_extent: bool,
}

pub const HEADING_INIT: [f64; 4] = [-PI / 2.0, 0.0, PI / 2.0, PI];

/// BO over the arrival heading at `target`. Paths leaving `extent` are
/// penalized in the surrogate and never returned when a contained path was
/// found.
pub fn optimize_heading<R: Rng + ?Sized>(
    snap: &Snapshot,
    start: Pose,
    target: [f64; 2],
    extent: &Rect,
    search: &HeadingSearch,
    rng: &mut R,
) -> HeadingResult {
    let fractions = swath_fractions(search.n_samples.max(1), rng);
    let evaluate = |theta: f64| {
        let path = dubins_shortest(start, Pose::new(target[0], target[1], theta), search.turn_radius);
        let inside = path_within(&path, extent);
        let v = path_value_with(snap, &path, search.swath_width, search.beta, extent, &fractions);
        (path, v, inside)
    };

    let mut gp = HeadingSurrogate::default();
    let mut best: Option<HeadingResult> = None;
    let mut worst = f64::INFINITY;
    let mut evaluations = 0;
    let mut record = |theta: f64, gp: &mut HeadingSurrogate, best: &mut Option<HeadingResult>| {
        let (path, v, inside) = evaluate(theta);
        evaluations += 1;
        let surrogate_value = if inside {
            worst = worst.min(v);
            v
        } else {
            let base = if worst.is_finite() { worst } else { 0.0 };
            base - v.abs().max(1.0)
        };
        gp.push(theta, surrogate_value);
        let better = match best {
            None => true,
            Some(b) => (inside && !b.within_extent) || (inside == b.within_extent && v > b.value),
        };
        if better {
            *best = Some(HeadingResult {
                theta: wrap_angle(theta),
                path,
                value: v,
                evaluations: 0,
                within_extent: inside,
            });
        }
    };
    for &t in &HEADING_INIT {
        record(t, &mut gp, &mut best);
    }
    let grid: Vec<f64> = (0..search.grid.max(4))
        .map(|i| -PI + 2.0 * PI * (i as f64 + 0.5) / search.grid.max(4) as f64)
        .collect();
    for _ in 0..search.extra_evals {
        let mut arg = grid[0];
        let mut top = f64::NEG_INFINITY;
        for &t in &grid {
            let (m, s) = gp.posterior(t);
            let a = ucb(m, s, search.beta);
            if a > top {
                top = a;
                arg = t;
            }
        }
        if gp.observations().any(|(o, _)| chordal(o, arg) < 1e-9) {
            break;
        }
        record(arg, &mut gp, &mut best);
    }
    let mut result = best.expect("initial headings evaluated");
    if !result.within_extent {
        // dense scan for any contained path
        for &t in &grid {
            let (path, v, inside) = evaluate(t);
            evaluations += 1;
            if inside && (!result.within_extent || v > result.value) {
                result = HeadingResult {
                    theta: t,
                    path,
                    value: v,
                    evaluations: 0,
                    within_extent: true,
                };
            }
        }
    }
    result.evaluations = evaluations;
    result
}
