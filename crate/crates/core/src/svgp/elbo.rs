//! Minibatch evidence lower bound and its gradient.
//!
//! For a batch of `M` inputs out of `N` observed beams the objective is
//!
//! ```text
//! L = N/M * sum_j ( ln N(z_j | mu_j, sn2) - v_j / (2 sn2) ) - KL[q(u) || p(u)]
//! ```
//!
//! where `mu_j`, `v_j` are the marginals of `q(f_j)`. Gradients are obtained by
//! reverse-mode matrix calculus through `A = K^-1 C`, the variational
//! parameters, the kernel hyperparameters (in log space) and the inducing
//! inputs. When an [`Anchor`] is supplied, the KL term is taken against the
//! anchor Gaussian instead of the GP prior.

use nalgebra::{DMatrix, DVector};

use super::model::{Anchor, SvgpModel};
use crate::{Error, Result};

/// Value of the bound and its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboValue {
    pub value: f64,
    /// Scaled expected log-likelihood, `N/M * sum_j E[ln p(z_j | f_j)]`.
    pub expected_loglik: f64,
    pub kl: f64,
}

/// Gradient of the bound with respect to every free parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    pub inducing: Vec<[f64; 2]>,
    pub var_mean: DVector<f64>,
    /// Lower triangle; the diagonal entries are derivatives with respect to
    /// the log of the Cholesky diagonal.
    pub var_chol: DMatrix<f64>,
    pub log_signal_variance: f64,
    pub log_lengthscale: f64,
    pub log_noise_variance: f64,
}

pub enum KlTarget<'a> {
    Prior,
    Anchor(&'a Anchor),
}

/// KL divergence from `q(u)` to the prior `N(0, K_ZZ)`.
pub fn kl_to_prior(model: &SvgpModel) -> Result<f64> {
    let (chol, _) = model.kzz_cholesky()?;
    let u = model.num_inducing();
    let l = chol.l();
    let w = l
        .solve_lower_triangular(&model.var_chol)
        .ok_or_else(|| Error::Numerical("singular K_ZZ factor".into()))?;
    let mw = l
        .solve_lower_triangular(&model.var_mean)
        .ok_or_else(|| Error::Numerical("singular K_ZZ factor".into()))?;
    let logdet_k = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let logdet_s = 2.0 * model.var_chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(0.5 * (w.norm_squared() + mw.norm_squared() - u as f64 + logdet_k - logdet_s))
}

pub fn elbo_minibatch(
    model: &SvgpModel,
    xs: &[[f64; 2]],
    zs: &[f64],
    n_total: f64,
) -> Result<(ElboValue, ElboGradient)> {
    elbo_with_target(model, xs, zs, n_total, KlTarget::Prior)
}

pub fn elbo_value(model: &SvgpModel, xs: &[[f64; 2]], zs: &[f64], n_total: f64) -> Result<ElboValue> {
    Ok(elbo_minibatch(model, xs, zs, n_total)?.0)
}

pub fn elbo_with_target(
    model: &SvgpModel,
    xs: &[[f64; 2]],
    zs: &[f64],
    n_total: f64,
    target: KlTarget<'_>,
) -> Result<(ElboValue, ElboGradient)> {
    let mb = xs.len();
    if mb == 0 || zs.len() != mb {
        return Err(Error::Training("empty or mismatched minibatch".into()));
    }
    let u = model.num_inducing();
    let sf2 = model.kernel.signal_variance;
    let sn2 = model.noise_variance;
    let scale = n_total / mb as f64;

    let (chol, jitter) = model.kzz_cholesky()?;
    let mut kmat = model.kzz();
    for i in 0..u {
        kmat[(i, i)] += jitter * sf2;
    }
    let c = model.kzx(xs);
    let a = chol.solve(&c);
    let m = &model.var_mean;
    let ls = &model.var_chol;

    let mu = a.tr_mul(m);
    let lt_a = ls.tr_mul(&a);
    let sa = ls * &lt_a;

    let mut g_mu = DVector::zeros(mb);
    let mut sq_sum = 0.0;
    let mut v_sum = 0.0;
    let mut ell = 0.0;
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sn2).ln();
    for j in 0..mb {
        let ca: f64 = c.column(j).dot(&a.column(j));
        let sq = lt_a.column(j).norm_squared();
        let v = sf2 - ca + sq;
        let r = zs[j] - model.mean_offset - mu[j];
        ell += log_norm - (r * r + v) / (2.0 * sn2);
        g_mu[j] = scale * r / sn2;
        sq_sum += r * r;
        v_sum += v;
    }
    let g_v = -scale / (2.0 * sn2);
    let expected_loglik = scale * ell;

    // KL and its partials
    let k_inv = chol.inverse();
    let s = ls * ls.transpose();
    let logdet_s = 2.0 * ls.diagonal().iter().map(|d| d.ln()).sum::<f64>();

    let mut m_bar = &a * &g_mu;
    let mut s_bar = (&a * a.transpose()) * g_v;
    let mut k_bar_extra: Option<DMatrix<f64>> = None;
    let kl = match target {
        KlTarget::Prior => {
            let pm = &k_inv * m;
            let logdet_k = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let tr = k_inv.component_mul(&s).sum();
            let kl = 0.5 * (tr + m.dot(&pm) - u as f64 + logdet_k - logdet_s);
            m_bar -= &pm;
            s_bar -= &k_inv * 0.5;
            let psp = &k_inv * &s * &k_inv;
            k_bar_extra = Some((psp + &pm * pm.transpose() - &k_inv) * 0.5);
            kl
        }
        KlTarget::Anchor(anchor) => {
            let d = m - &anchor.mean;
            let pd = &anchor.precision * &d;
            let tr = anchor.precision.component_mul(&s).sum();
            let kl = 0.5 * (tr + d.dot(&pd) - u as f64 + anchor.log_det_cov - logdet_s);
            m_bar -= &pd;
            s_bar -= &anchor.precision * 0.5;
            kl
        }
    };

    // chain S = Ls Ls^T (S_bar symmetric); the log det S term adds exactly 1
    // per log diagonal entry, which stays exact when Ls is ill-conditioned
    let s_bar = (&s_bar + s_bar.transpose()) * 0.5;
    let mut l_bar = (&s_bar * ls) * 2.0;
    for i in 0..u {
        for j in i + 1..u {
            l_bar[(i, j)] = 0.0;
        }
        l_bar[(i, i)] = l_bar[(i, i)] * ls[(i, i)] + 1.0;
    }

    // A = K^-1 C; v depends on A through 2 S a_j - c_j, on C through -a_j
    let mut a_bar = m * g_mu.transpose();
    a_bar += (&sa * 2.0 - &c) * g_v;
    let kinv_a_bar = chol.solve(&a_bar);
    let c_bar = &kinv_a_bar - &a * g_v;
    let mut k_bar = -(&kinv_a_bar * a.transpose());
    if let Some(extra) = k_bar_extra {
        k_bar += extra;
    }

    // kernel hyperparameters and inducing inputs
    let kern = &model.kernel;
    let mut g_log_ell = 0.0;
    let mut g_z = vec![[0.0f64; 2]; u];
    for ai in 0..u {
        let za = model.inducing[ai];
        for bi in 0..u {
            if ai == bi {
                continue;
            }
            let (_, dl, g) = kern.with_derivatives(za, model.inducing[bi]);
            let kb = k_bar[(ai, bi)];
            g_log_ell += kb * dl;
            let w = (kb + k_bar[(bi, ai)]) * g;
            g_z[ai][0] += w * (za[0] - model.inducing[bi][0]);
            g_z[ai][1] += w * (za[1] - model.inducing[bi][1]);
        }
        for (j, x) in xs.iter().enumerate() {
            let (_, dl, g) = kern.with_derivatives(za, *x);
            let cb = c_bar[(ai, j)];
            g_log_ell += cb * dl;
            g_z[ai][0] += cb * g * (za[0] - x[0]);
            g_z[ai][1] += cb * g * (za[1] - x[1]);
        }
    }
    // K and C are proportional to sf2 (jitter included)
    let g_log_sf2 = k_bar.component_mul(&kmat).sum() + c_bar.component_mul(&c).sum() + mb as f64 * g_v * sf2;
    let g_log_sn2 = scale * (-0.5 * mb as f64 + (sq_sum + v_sum) / (2.0 * sn2));

    let value = expected_loglik - kl;
    Ok((
        ElboValue {
            value,
            expected_loglik,
            kl,
        },
        ElboGradient {
            inducing: g_z,
            var_mean: m_bar,
            var_chol: l_bar,
            log_signal_variance: g_log_sf2,
            log_lengthscale: g_log_ell,
            log_noise_variance: g_log_sn2,
        },
    ))
}

/// Flat parameter vector layout shared by the optimizer and the gradient.
///
/// Order: inducing inputs (2u), variational mean (u), lower triangle of the
/// variational Cholesky row by row with log diagonal (u(u+1)/2), then
/// log signal variance, log lengthscale, log noise variance.
pub fn num_params(u: usize) -> usize {
    2 * u + u + u * (u + 1) / 2 + 3
}

pub fn pack_params(model: &SvgpModel) -> Vec<f64> {
    let u = model.num_inducing();
    let mut p = Vec::with_capacity(num_params(u));
    for z in &model.inducing {
        p.extend_from_slice(z);
    }
    p.extend(model.var_mean.iter().copied());
    for i in 0..u {
        for j in 0..i {
            p.push(model.var_chol[(i, j)]);
        }
        p.push(model.var_chol[(i, i)].ln());
    }
    p.push(model.kernel.signal_variance.ln());
    p.push(model.kernel.lengthscale.ln());
    p.push(model.noise_variance.ln());
    p
}

pub fn unpack_params(model: &mut SvgpModel, p: &[f64]) {
    let u = model.num_inducing();
    assert_eq!(p.len(), num_params(u));
    let mut k = 0;
    for z in model.inducing.iter_mut() {
        z[0] = p[k];
        z[1] = p[k + 1];
        k += 2;
    }
    for i in 0..u {
        model.var_mean[i] = p[k];
        k += 1;
    }
    for i in 0..u {
        for j in 0..i {
            model.var_chol[(i, j)] = p[k];
            k += 1;
        }
        model.var_chol[(i, i)] = p[k].exp();
        k += 1;
    }
    model.kernel.signal_variance = p[k].exp();
    model.kernel.lengthscale = p[k + 1].exp();
    model.noise_variance = p[k + 2].exp();
}

impl ElboGradient {
    pub fn pack(&self) -> Vec<f64> {
        let u = self.var_mean.len();
        let mut g = Vec::with_capacity(num_params(u));
        for z in &self.inducing {
            g.extend_from_slice(z);
        }
        g.extend(self.var_mean.iter().copied());
        for i in 0..u {
            for j in 0..=i {
                g.push(self.var_chol[(i, j)]);
            }
        }
        g.push(self.log_signal_variance);
        g.push(self.log_lengthscale);
        g.push(self.log_noise_variance);
        g
    }
}

/// Index ranges of the parameter groups inside the flat layout.
pub struct ParamLayout {
    pub inducing: std::ops::Range<usize>,
    pub variational: std::ops::Range<usize>,
    pub hyper: std::ops::Range<usize>,
}

pub fn layout(u: usize) -> ParamLayout {
    let n = num_params(u);
    ParamLayout {
        inducing: 0..2 * u,
        variational: 2 * u..n - 3,
        hyper: n - 3..n,
    }
}
