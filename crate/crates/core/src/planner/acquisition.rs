//! Upper-confidence acquisitions and the batch candidate search.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::region::Region;
use crate::svgp::Snapshot;
use crate::{Error, Result};

/// `mu + sqrt(beta) * sigma`.
#[inline]
pub fn ucb(mu: f64, sigma: f64, beta: f64) -> f64 {
    mu + beta.sqrt() * sigma
}

/// Batch UCB with a diagonal covariance built from per-candidate standard
/// deviations, estimated with `n` reparameterized draws.
pub fn qucb<R: Rng + ?Sized>(mus: &[f64], sigmas: &[f64], beta: f64, n: usize, rng: &mut R) -> f64 {
    assert_eq!(mus.len(), sigmas.len());
    assert!(n >= 1 && !mus.is_empty());
    let scale = (beta * std::f64::consts::PI / 2.0).sqrt();
    let mut total = 0.0;
    for _ in 0..n {
        let mut best = f64::NEG_INFINITY;
        for (m, s) in mus.iter().zip(sigmas) {
            let a: f64 = rng.sample(StandardNormal);
            best = best.max(m + (scale * s * a).abs());
        }
        total += best;
    }
    total / n as f64
}

/// Standard normal draws shared across acquisition evaluations.
#[derive(Debug, Clone)]
pub struct BaseSamples {
    q: usize,
    draws: Vec<f64>,
}

impl BaseSamples {
    pub fn new<R: Rng + ?Sized>(q: usize, n: usize, rng: &mut R) -> Self {
        assert!(q >= 1 && n >= 1);
        Self {
            q,
            draws: (0..q * n).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// A factor `L` with `L L^T = cov` (Cholesky when it exists, otherwise the
/// symmetric square root with negative eigenvalues clipped).
fn cov_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = cov.clone().cholesky() {
        return c.l();
    }
    let eig = SymmetricEigen::new(cov.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d
}

/// Batch UCB with a full covariance `cov` over the candidates.
pub fn qucb_joint(mus: &DVector<f64>, cov: &DMatrix<f64>, beta: f64, base: &BaseSamples) -> f64 {
    let q = mus.len();
    assert_eq!(q, base.q);
    let scaled = cov * (beta * std::f64::consts::PI / 2.0);
    let l = cov_factor(&scaled);
    let mut total = 0.0;
    for a in base.draws.chunks_exact(q) {
        let mut best = f64::NEG_INFINITY;
        for j in 0..q {
            let mut z = 0.0;
            for (k, ak) in a.iter().enumerate() {
                z += l[(j, k)] * ak;
            }
            best = best.max(mus[j] + z.abs());
        }
        total += best;
    }
    total / base.len() as f64
}

/// Joint acquisition of a candidate batch under a snapshot (latent mean).
pub fn batch_value(snap: &Snapshot, pts: &[[f64; 2]], beta: f64, base: &BaseSamples) -> f64 {
    if pts.len() == 1 {
        let (m, s) = snap.latent(pts[0]);
        return ucb(m, s, beta);
    }
    let (mu, cov) = snap.latent_joint(pts);
    qucb_joint(&mu, &cov, beta, base)
}

/// Settings for the multi-start candidate search.
#[derive(Debug, Clone, Copy)]
pub struct CandidateSearch {
    pub q: usize,
    pub beta: f64,
    pub n_mc: usize,
    pub restarts: usize,
    /// Random batches scored to choose the restart points.
    pub raw_samples: usize,
    pub iters: usize,
}

#[derive(Debug, Clone)]
pub struct Candidates {
    pub points: Vec<[f64; 2]>,
    pub value: f64,
}

/// Latin-hypercube starts over the region, `count` points.
fn lhs_points<R: Rng + ?Sized>(region: &Region, count: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut a: Vec<usize> = (0..count).collect();
    let mut b: Vec<usize> = (0..count).collect();
    shuffle(&mut a, rng);
    shuffle(&mut b, rng);
    (0..count)
        .map(|i| {
            let u = (a[i] as f64 + rng.random::<f64>()) / count as f64;
            let v = (b[i] as f64 + rng.random::<f64>()) / count as f64;
            let p = region.from_unit(u, v);
            if region.contains(p) {
                p
            } else {
                region.sample(rng)
            }
        })
        .collect()
}

fn shuffle<R: Rng + ?Sized>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Builds a batch of `q` viewpoints in `region` greedily: each new point
/// maximizes the batch acquisition given the points already chosen, by
/// projected ascent with numerical gradients started from the best of a pool
/// of Latin-hypercube points.
///
/// Fails with [`Error::NonConvergence`] when the single-point acquisition is
/// flat across the start pool or when no ascent improves on its start.
pub fn optimize_q_candidates<R: Rng + ?Sized>(
    snap: &Snapshot,
    region: &Region,
    search: &CandidateSearch,
    rng: &mut R,
) -> Result<Candidates> {
    let q = search.q;
    assert!(q >= 1 && search.restarts >= 1);
    let bases: Vec<BaseSamples> = (1..=q).map(|k| BaseSamples::new(k, search.n_mc.max(1), rng)).collect();
    let n_raw = search.raw_samples.max(search.restarts);
    let flat_tol = 1e-9 * snap.signal_std();
    let h = 1e-3 * region.scale().max(1.0);

    let mut chosen: Vec<[f64; 2]> = Vec::with_capacity(q);
    let mut value = f64::NEG_INFINITY;
    let mut improved_any = false;
    for k in 0..q {
        let base = &bases[k];
        let eval = |p: [f64; 2]| {
            let mut pts = chosen.clone();
            pts.push(p);
            batch_value(snap, &pts, search.beta, base)
        };
        let raw = lhs_points(region, n_raw, rng);
        if k == 0 {
            let marginal: Vec<f64> = raw
                .iter()
                .map(|&p| {
                    let (m, sd) = snap.latent(p);
                    ucb(m, sd, search.beta)
                })
                .collect();
            let lo = marginal.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = marginal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(hi - lo >= flat_tol) {
                return Err(Error::NonConvergence("acquisition landscape is flat".into()));
            }
        }
        let mut scored: Vec<(f64, usize)> = raw.iter().enumerate().map(|(i, &p)| (eval(p), i)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut best = ([f64::NAN; 2], f64::NEG_INFINITY);
        for &(v0, i) in scored.iter().take(search.restarts) {
            let mut p = raw[i];
            let mut val = v0;
            let mut step = 0.1 * region.scale();
            for _ in 0..search.iters {
                let gx = (eval([p[0] + h, p[1]]) - eval([p[0] - h, p[1]])) / (2.0 * h);
                let gy = (eval([p[0], p[1] + h]) - eval([p[0], p[1] - h])) / (2.0 * h);
                let norm = gx.hypot(gy);
                if !(norm > 0.0) {
                    break;
                }
                let mut accepted = false;
                while step > 1e-3 {
                    let trial = region.project([p[0] + step * gx / norm, p[1] + step * gy / norm]);
                    let tv = eval(trial);
                    if tv > val {
                        p = trial;
                        val = tv;
                        step *= 1.5;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            if val > v0 + flat_tol {
                improved_any = true;
            }
            if val > best.1 {
                best = (p, val);
            }
        }
        chosen.push(best.0);
        value = best.1;
    }
    if !value.is_finite() {
        return Err(Error::NonConvergence("non-finite acquisition".into()));
    }
    if !improved_any {
        return Err(Error::NonConvergence("no start improved on its initial value".into()));
    }
    Ok(Candidates { points: chosen, value })
}

/// Mean predictive standard deviation at `n` points uniform in the disc of
/// `radius` around `center`, clipped to `extent`.
pub fn rollout_value<R: Rng + ?Sized>(
    snap: &Snapshot,
    center: [f64; 2],
    radius: f64,
    extent: &crate::Rect,
    n: usize,
    rng: &mut R,
) -> f64 {
    assert!(n >= 1);
    let disc = Region::disc(center, radius, 0.0, *extent);
    let mut total = 0.0;
    for _ in 0..n {
        let p = disc.sample(rng);
        total += snap.latent(p).1;
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ucb_examples() {
        assert_eq!(ucb(1.5, 2.0, 0.0), 1.5);
        assert!((ucb(1.0, 0.5, 100.0) - 6.0).abs() < 1e-12);
        assert!(ucb(1.0, 0.6, 100.0) > ucb(1.0, 0.5, 100.0));
        assert!(ucb(1.1, 0.5, 100.0) > ucb(1.0, 0.5, 100.0));
    }

    #[test]
    fn single_candidate_matches_ucb() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = qucb(&[1.0], &[0.5], 100.0, 100_000, &mut rng);
        assert!((v - 6.0).abs() / 6.0 < 0.01, "{v}");
    }

    #[test]
    fn qucb_deterministic_for_seed() {
        let a = qucb(&[0.0, 1.0], &[1.0, 0.3], 4.0, 100, &mut ChaCha8Rng::seed_from_u64(5));
        let b = qucb(&[0.0, 1.0], &[1.0, 0.3], 4.0, 100, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn three_independent_candidates_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = qucb(&[0.0; 3], &[1.0; 3], 100.0, 100_000, &mut rng);
        // brute force: E max_j |x_j| with x_j ~ N(0, beta*pi/2), sorted-sample estimate
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let s = (100.0 * std::f64::consts::PI / 2.0).sqrt();
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut m: f64 = 0.0;
            for _ in 0..3 {
                let x: f64 = rng.sample(StandardNormal);
                m = m.max((s * x).abs());
            }
            acc += m;
        }
        let oracle = acc / n as f64;
        assert!((v - oracle).abs() / oracle < 0.02, "{v} vs {oracle}");
    }

    #[test]
    fn joint_with_identical_candidates_reduces_to_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = BaseSamples::new(3, 100_000, &mut rng);
        let mu = DVector::from_element(3, 1.0);
        let cov = DMatrix::from_element(3, 3, 0.25);
        let v = qucb_joint(&mu, &cov, 100.0, &base);
        assert!((v - 6.0).abs() / 6.0 < 0.01, "{v}");
    }

    #[test]
    fn joint_with_diagonal_covariance_matches_diagonal_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = BaseSamples::new(2, 200_000, &mut rng);
        let mu = DVector::from_vec(vec![0.5, 0.0]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 1.0]));
        let a = qucb_joint(&mu, &cov, 9.0, &base);
        let b = qucb(&[0.5, 0.0], &[0.2, 1.0], 9.0, 200_000, &mut ChaCha8Rng::seed_from_u64(4));
        assert!((a - b).abs() / b < 0.01, "{a} vs {b}");
    }
}
