use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::KernelParams;
use crate::geometry::Rect;
use crate::linalg::{cholesky_jittered, JITTER_START};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "SVGP-CKPT v1";

/// Sparse variational GP over the plane with a constant prior mean.
///
/// The latent function `f` has prior `GP(0, k)`; observations are
/// `z = mean_offset + f + noise`. The variational posterior over the inducing
/// values is `N(var_mean, var_chol var_chol^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvgpModel {
    pub(crate) inducing: Vec<[f64; 2]>,
    pub(crate) var_mean: DVector<f64>,
    pub(crate) var_chol: DMatrix<f64>,
    pub(crate) kernel: KernelParams,
    pub(crate) noise_variance: f64,
    pub(crate) n_seen: u64,
    pub(crate) mean_offset: f64,
    pub(crate) extent: Option<Rect>,
}

/// Gaussian with explicit precision, used as the KL anchor when conditioning
/// a copy of a model on extra data.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub log_det_cov: f64,
}

impl SvgpModel {
    /// Prior-initialized model: `m = 0`, `S = K_ZZ`.
    pub fn new(inducing: Vec<[f64; 2]>, kernel: KernelParams, noise_variance: f64, mean_offset: f64) -> Result<Self> {
        if inducing.is_empty() {
            return Err(Error::InvalidConfig("need at least one inducing point".into()));
        }
        kernel.validate()?;
        if !(noise_variance > 0.0) {
            return Err(Error::InvalidConfig("noise variance must be > 0".into()));
        }
        let u = inducing.len();
        let mut model = Self {
            inducing,
            var_mean: DVector::zeros(u),
            var_chol: DMatrix::identity(u, u),
            kernel,
            noise_variance,
            n_seen: 0,
            mean_offset,
            extent: None,
        };
        let (chol, _) = model.kzz_cholesky()?;
        model.var_chol = chol.l();
        Ok(model)
    }

    /// Builds a model from explicit parts. `var_chol` must be lower triangular
    /// with a positive diagonal.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        inducing: Vec<[f64; 2]>,
        var_mean: DVector<f64>,
        var_chol: DMatrix<f64>,
        kernel: KernelParams,
        noise_variance: f64,
        n_seen: u64,
        mean_offset: f64,
    ) -> Result<Self> {
        let u = inducing.len();
        if u == 0 || var_mean.len() != u || var_chol.shape() != (u, u) {
            return Err(Error::InvalidConfig("inconsistent variational shapes".into()));
        }
        for i in 0..u {
            if !(var_chol[(i, i)] > 0.0) {
                return Err(Error::InvalidConfig("variational Cholesky needs a positive diagonal".into()));
            }
            for j in i + 1..u {
                if var_chol[(i, j)] != 0.0 {
                    return Err(Error::InvalidConfig("variational Cholesky must be lower triangular".into()));
                }
            }
        }
        kernel.validate()?;
        Ok(Self {
            inducing,
            var_mean,
            var_chol,
            kernel,
            noise_variance,
            n_seen,
            mean_offset,
            extent: None,
        })
    }

    /// Inducing inputs on a jittered regular lattice covering `extent`.
    pub fn grid_inducing(extent: &Rect, u: usize, jitter_seed: u64) -> Vec<[f64; 2]> {
        use rand::{Rng, SeedableRng};
        assert!(u > 0);
        let aspect = (extent.width() / extent.height().max(1e-9)).max(1e-9);
        let nx = ((u as f64 * aspect).sqrt().round() as usize).clamp(1, u);
        let ny = u.div_ceil(nx);
        let cells = nx * ny;
        let (cw, ch) = (extent.width() / nx as f64, extent.height() / ny as f64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(jitter_seed);
        (0..u)
            .map(|i| {
                let c = i * cells / u;
                let (ix, iy) = (c % nx, c / nx);
                let jx = rng.random_range(-0.25..0.25);
                let jy = rng.random_range(-0.25..0.25);
                [
                    extent.min_x + (ix as f64 + 0.5 + jx) * cw,
                    extent.min_y + (iy as f64 + 0.5 + jy) * ch,
                ]
            })
            .collect()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    pub fn inducing(&self) -> &[[f64; 2]] {
        &self.inducing
    }

    pub fn var_mean(&self) -> &DVector<f64> {
        &self.var_mean
    }

    pub fn var_chol(&self) -> &DMatrix<f64> {
        &self.var_chol
    }

    pub fn var_cov(&self) -> DMatrix<f64> {
        &self.var_chol * self.var_chol.transpose()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn extent(&self) -> Option<Rect> {
        self.extent
    }

    pub fn set_extent(&mut self, extent: Rect) {
        self.extent = Some(extent);
    }

    pub fn set_mean_offset(&mut self, offset: f64) {
        self.mean_offset = offset;
    }

    /// Records newly observed beams; the count only grows.
    pub fn observe(&mut self, n: u64) {
        self.n_seen += n;
    }

    pub fn set_var_mean(&mut self, m: DVector<f64>) {
        assert_eq!(m.len(), self.num_inducing());
        self.var_mean = m;
    }

    /// Resets `q(u)` to the prior `N(0, K_ZZ)`.
    pub fn reset_to_prior(&mut self) -> Result<()> {
        let (chol, _) = self.kzz_cholesky()?;
        self.var_chol = chol.l();
        self.var_mean.fill(0.0);
        Ok(())
    }

    pub(crate) fn kzz(&self) -> DMatrix<f64> {
        let u = self.inducing.len();
        let k = &self.kernel;
        let mut m = DMatrix::zeros(u, u);
        for a in 0..u {
            m[(a, a)] = k.signal_variance;
            for b in 0..a {
                let v = super::kernel::matern52(self.inducing[a], self.inducing[b], k);
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        m
    }

    pub(crate) fn kzx(&self, xs: &[[f64; 2]]) -> DMatrix<f64> {
        let u = self.inducing.len();
        let k = &self.kernel;
        DMatrix::from_fn(u, xs.len(), |a, j| super::kernel::matern52(self.inducing[a], xs[j], k))
    }

    /// Cholesky of `K_ZZ + jitter * sigma_f^2 * I` with escalating jitter.
    pub(crate) fn kzz_cholesky(&self) -> Result<(Cholesky<f64, Dyn>, f64)> {
        cholesky_jittered(&self.kzz(), self.kernel.signal_variance, JITTER_START)
    }

    /// KL anchor equal to the current variational distribution.
    pub fn anchor(&self) -> Result<Anchor> {
        let u = self.num_inducing();
        let l_inv = self
            .var_chol
            .solve_lower_triangular(&DMatrix::identity(u, u))
            .ok_or_else(|| Error::Numerical("singular variational factor".into()))?;
        Ok(Anchor {
            mean: self.var_mean.clone(),
            precision: l_inv.transpose() * l_inv,
            log_det_cov: 2.0 * self.var_chol.diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        })
    }

    /// Sets `q(u)` to the collapsed-bound optimum for the given data with the
    /// current inducing inputs and hyperparameters.
    pub fn set_optimal_variational(&mut self, xs: &[[f64; 2]], zs: &[f64]) -> Result<()> {
        assert_eq!(xs.len(), zs.len());
        let u = self.num_inducing();
        let (chol, _) = self.kzz_cholesky()?;
        let l = chol.l();
        let c = self.kzx(xs);
        let lc = l
            .solve_lower_triangular(&c)
            .ok_or_else(|| Error::Numerical("singular K_ZZ factor".into()))?;
        let inv_noise = 1.0 / self.noise_variance;
        let mut b = &lc * lc.transpose() * inv_noise;
        for i in 0..u {
            b[(i, i)] += 1.0;
        }
        let bchol = Cholesky::new(b).ok_or_else(|| Error::Numerical("collapsed system not SPD".into()))?;
        let y = DVector::from_iterator(zs.len(), zs.iter().map(|z| z - self.mean_offset));
        // m = sigma^-2 L B^-1 L^-1 C y
        let rhs = &lc * y * inv_noise;
        self.var_mean = &l * bchol.solve(&rhs);
        let s = &l * bchol.inverse() * l.transpose();
        let s = (&s + s.transpose()) * 0.5;
        let (schol, _) = cholesky_jittered(&s, s.diagonal().max().max(1e-300), 1e-12)?;
        self.var_chol = schol.l();
        Ok(())
    }

    /// Precomputes the quantities needed for predictions.
    pub fn posterior(&self) -> Result<Posterior> {
        let (chol, _) = self.kzz_cholesky()?;
        let k_inv = chol.inverse();
        let alpha = &k_inv * &self.var_mean;
        let ks = &k_inv * &self.var_chol;
        let b = &k_inv - &ks * ks.transpose();
        Ok(Posterior { alpha, b, k_inv })
    }

    pub fn snapshot(&self) -> Result<Arc<Snapshot>> {
        Ok(Arc::new(Snapshot {
            posterior: self.posterior()?,
            model: self.clone(),
        }))
    }

    /// Posterior mean and latent variance at each query.
    pub fn predict(&self, queries: &[[f64; 2]]) -> Result<(Vec<f64>, Vec<f64>)> {
        let snap = Snapshot {
            posterior: self.posterior()?,
            model: self.clone(),
        };
        Ok(snap.predict(queries))
    }

    /// Bytes held by the model's parameters; independent of the data seen.
    pub fn heap_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        self.inducing.len() * 2 * f + self.var_mean.len() * f + self.var_chol.len() * f
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_checkpoint_text(&self) -> String {
        let u = self.num_inducing();
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "inducing {u}");
        let _ = writeln!(s, "kernel {} {} {}", self.kernel.signal_variance, self.kernel.lengthscale, KernelParams::NU);
        let _ = writeln!(s, "noise {}", self.noise_variance);
        let _ = writeln!(s, "n_seen {}", self.n_seen);
        let _ = writeln!(s, "mean_offset {}", self.mean_offset);
        match self.extent {
            Some(e) => {
                let _ = writeln!(s, "extent {} {} {} {}", e.min_x, e.min_y, e.max_x, e.max_y);
            }
            None => s.push_str("extent none\n"),
        }
        s.push_str("Z\n");
        for z in &self.inducing {
            let _ = writeln!(s, "{} {}", z[0], z[1]);
        }
        s.push_str("m\n");
        for v in self.var_mean.iter() {
            let _ = writeln!(s, "{v}");
        }
        s.push_str("S_chol\n");
        for i in 0..u {
            let row: Vec<String> = (0..=i).map(|j| self.var_chol[(i, j)].to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_checkpoint(&text, path)
    }

    pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file, expected {what}")))
        };
        let (n, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::parse(path, n, format!("expected `{CHECKPOINT_MAGIC}`")));
        }
        fn nums(path: &Path, n: usize, line: &str, key: &str, count: usize) -> Result<Vec<f64>> {
            let mut it = line.split_whitespace();
            if !key.is_empty() && it.next() != Some(key) {
                return Err(Error::parse(path, n, format!("expected `{key}`")));
            }
            let v: Vec<f64> = it
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, n, format!("bad number `{t}`"))))
                .collect::<Result<_>>()?;
            if v.len() != count {
                return Err(Error::parse(path, n, format!("expected {count} values, found {}", v.len())));
            }
            Ok(v)
        }
        let (n, l) = next("inducing")?;
        let u = nums(path, n, l, "inducing", 1)?[0] as usize;
        let (n, l) = next("kernel")?;
        let k = nums(path, n, l, "kernel", 3)?;
        let (n, l) = next("noise")?;
        let noise = nums(path, n, l, "noise", 1)?[0];
        let (n, l) = next("n_seen")?;
        let n_seen = l
            .strip_prefix("n_seen ")
            .and_then(|v| v.trim().parse::<u64>().ok())
            .ok_or_else(|| Error::parse(path, n, "bad n_seen"))?;
        let (n, l) = next("mean_offset")?;
        let offset = nums(path, n, l, "mean_offset", 1)?[0];
        let (n, l) = next("extent")?;
        let extent = if l == "extent none" {
            None
        } else {
            let e = nums(path, n, l, "extent", 4)?;
            Some(Rect::new(e[0], e[1], e[2], e[3]))
        };
        let (n, l) = next("Z")?;
        if l != "Z" {
            return Err(Error::parse(path, n, "expected `Z`"));
        }
        let mut inducing = Vec::with_capacity(u);
        for _ in 0..u {
            let (n, l) = next("inducing input")?;
            let v = nums(path, n, l, "", 2)?;
            inducing.push([v[0], v[1]]);
        }
        let (n, l) = next("m")?;
        if l != "m" {
            return Err(Error::parse(path, n, "expected `m`"));
        }
        let mut m = DVector::zeros(u);
        for i in 0..u {
            let (n, l) = next("mean entry")?;
            m[i] = nums(path, n, l, "", 1)?[0];
        }
        let (n, l) = next("S_chol")?;
        if l != "S_chol" {
            return Err(Error::parse(path, n, "expected `S_chol`"));
        }
        let mut lmat = DMatrix::zeros(u, u);
        for i in 0..u {
            let (n, l) = next("Cholesky row")?;
            let v = nums(path, n, l, "", i + 1)?;
            for (j, x) in v.into_iter().enumerate() {
                lmat[(i, j)] = x;
            }
        }
        let kernel = KernelParams::new(k[0], k[1]).map_err(|e| Error::parse(path, 3, e.to_string()))?;
        let mut model = Self::from_parts(inducing, m, lmat, kernel, noise, n_seen, offset)?;
        model.extent = extent;
        Ok(model)
    }
}

/// Cached predictive quantities: `alpha = K^-1 m`, `B = K^-1 - K^-1 S K^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    alpha: DVector<f64>,
    b: DMatrix<f64>,
    k_inv: DMatrix<f64>,
}

/// Immutable model copy with its predictive cache; what planners and
/// evaluators read.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    model: SvgpModel,
    posterior: Posterior,
}

impl Snapshot {
    pub fn model(&self) -> &SvgpModel {
        &self.model
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.model.kernel
    }

    pub fn signal_std(&self) -> f64 {
        self.model.kernel.signal_variance.sqrt()
    }

    pub fn mean_offset(&self) -> f64 {
        self.model.mean_offset
    }

    pub fn extent(&self) -> Option<Rect> {
        self.model.extent
    }

    fn kvec(&self, x: [f64; 2]) -> DVector<f64> {
        let k = &self.model.kernel;
        DVector::from_iterator(
            self.model.inducing.len(),
            self.model.inducing.iter().map(|z| super::kernel::matern52(*z, x, k)),
        )
    }

    /// Latent mean (without the constant offset) and latent variance, with the
    /// unclamped variance for diagnostics.
    pub fn latent_raw(&self, x: [f64; 2]) -> (f64, f64) {
        let k = self.kvec(x);
        let mean = k.dot(&self.posterior.alpha);
        let var = self.model.kernel.signal_variance - (&self.posterior.b * &k).dot(&k);
        (mean, var)
    }

    /// Latent mean and standard deviation at one point.
    #[inline]
    pub fn latent(&self, x: [f64; 2]) -> (f64, f64) {
        let (m, v) = self.latent_raw(x);
        (m, v.max(0.0).sqrt())
    }

    /// Observation-space mean (including the offset) and latent variance.
    pub fn predict(&self, queries: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
        let mut means = Vec::with_capacity(queries.len());
        let mut vars = Vec::with_capacity(queries.len());
        for &q in queries {
            let (m, v) = self.latent_raw(q);
            means.push(m + self.model.mean_offset);
            vars.push(v.max(0.0));
        }
        (means, vars)
    }

    /// Latent variance plus noise.
    pub fn predict_observation_variance(&self, queries: &[[f64; 2]]) -> Vec<f64> {
        queries
            .iter()
            .map(|&q| self.latent_raw(q).1.max(0.0) + self.model.noise_variance)
            .collect()
    }

    /// Joint latent mean vector and covariance matrix over a small batch.
    pub fn latent_joint(&self, xs: &[[f64; 2]]) -> (DVector<f64>, DMatrix<f64>) {
        let kern = &self.model.kernel;
        let ks: Vec<DVector<f64>> = xs.iter().map(|&x| self.kvec(x)).collect();
        let bk: Vec<DVector<f64>> = ks.iter().map(|k| &self.posterior.b * k).collect();
        let n = xs.len();
        let mean = DVector::from_iterator(n, ks.iter().map(|k| k.dot(&self.posterior.alpha)));
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = super::kernel::matern52(xs[i], xs[j], kern) - ks[i].dot(&bk[j]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        (mean, cov)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::new(self.clone())
    }

    /// Exact Gaussian update of `q(u)` on extra observations `zs` (observation
    /// space) at `xs` with per-point noise variances `noise`. Hyperparameters
    /// and inducing inputs are unchanged. This is the maximizer of the bound
    /// with the current `q(u)` as KL anchor.
    pub fn condition(&self, xs: &[[f64; 2]], zs: &[f64], noise: &[f64]) -> Result<Snapshot> {
        let q = xs.len();
        assert!(zs.len() == q && noise.len() == q);
        if q == 0 {
            return Ok(self.clone());
        }
        let c = self.model.kzx(xs);
        let a = &self.posterior.k_inv * &c;
        let ls = &self.model.var_chol;
        let sa = ls * ls.tr_mul(&a);
        let mut g = a.tr_mul(&sa);
        for i in 0..q {
            g[(i, i)] += noise[i].max(0.0);
        }
        let g = (&g + g.transpose()) * 0.5;
        let (gchol, _) = cholesky_jittered(&g, g.diagonal().max().max(1e-300), 1e-12)?;
        let m = &self.model.var_mean;
        let resid = DVector::from_iterator(q, (0..q).map(|j| zs[j] - self.model.mean_offset - a.column(j).dot(m)));
        let var_mean = m + &sa * gchol.solve(&resid);
        // S' = S - W W^T with W = S A Lg^-T
        let w = gchol
            .l()
            .solve_lower_triangular(&sa.transpose())
            .ok_or_else(|| Error::Numerical("singular innovation factor".into()))?
            .transpose();
        let mut l_new = ls.clone();
        let mut downdated = true;
        for j in 0..q {
            if !chol_downdate(&mut l_new, w.column(j).clone_owned()) {
                downdated = false;
                break;
            }
        }
        if !downdated {
            let s = ls * ls.transpose() - &w * w.transpose();
            let s = (&s + s.transpose()) * 0.5;
            let (sc, _) = cholesky_jittered(&s, s.diagonal().max().max(1e-300), 1e-12)?;
            l_new = sc.l();
        }
        let kw = &self.posterior.k_inv * &w;
        let posterior = Posterior {
            alpha: &self.posterior.k_inv * &var_mean,
            b: &self.posterior.b + &kw * kw.transpose(),
            k_inv: self.posterior.k_inv.clone(),
        };
        let mut model = self.model.clone();
        model.var_mean = var_mean;
        model.var_chol = l_new;
        model.n_seen += q as u64;
        Ok(Snapshot { model, posterior })
    }
}

/// In-place rank-one downdate `L L^T - x x^T`. Returns false when the result
/// would not be positive definite.
fn chol_downdate(l: &mut DMatrix<f64>, mut x: DVector<f64>) -> bool {
    let n = l.nrows();
    for k in 0..n {
        let lkk = l[(k, k)];
        let r2 = lkk * lkk - x[k] * x[k];
        if !(r2 > 1e-300) {
            return false;
        }
        let r = r2.sqrt();
        let c = r / lkk;
        let s = x[k] / lkk;
        l[(k, k)] = r;
        for i in k + 1..n {
            let v = (l[(i, k)] - s * x[i]) / c;
            x[i] = c * x[i] - s * v;
            l[(i, k)] = v;
        }
    }
    true
}
