//! SVGP checks against an independent dense exact-GP implementation.

mod common;

use common::{toy30, DenseGp};
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survey_core::svgp::elbo::{elbo_value, elbo_with_target, layout, pack_params, unpack_params, KlTarget};
use survey_core::svgp::{KernelParams, SvgpModel, TrainBuffer, TrainConfig, TrainSample, Trainer};

#[test]
fn converged_bound_below_exact_evidence() {
    let (xs, ys) = toy30();
    let (sf2, ell, sn2) = (1.0, 1.2, 0.01);
    let dense = DenseGp::fit(&xs, &ys, sf2, ell, sn2);
    let mut m = SvgpModel::new(xs.clone(), KernelParams::new(sf2, ell).unwrap(), sn2, 0.0).unwrap();
    m.set_optimal_variational(&xs, &ys).unwrap();
    let elbo = elbo_value(&m, &xs, &ys, xs.len() as f64).unwrap().value;
    assert!(elbo <= dense.lml + 1e-9, "elbo {elbo} lml {}", dense.lml);
    assert!((dense.lml - elbo) < 0.01 * dense.lml.abs(), "elbo {elbo} lml {}", dense.lml);
}

#[test]
fn predictions_match_dense_gp() {
    let (xs, ys) = toy30();
    let (sf2, ell, sn2) = (1.0, 1.0, 1e-6);
    let dense = DenseGp::fit(&xs, &ys, sf2, ell, sn2);
    let mut m = SvgpModel::new(xs.clone(), KernelParams::new(sf2, ell).unwrap(), sn2, 0.0).unwrap();
    m.set_optimal_variational(&xs, &ys).unwrap();
    let queries: Vec<[f64; 2]> = (0..50).map(|i| [i as f64 * 0.21 + 0.05, 0.1]).collect();
    let (mu, _) = m.predict(&queries).unwrap();
    for (q, mu) in queries.iter().zip(&mu) {
        let (dm, _) = dense.predict(*q);
        assert!((mu - dm).abs() <= 1e-3 * dm.abs().max(1.0), "{q:?}: {mu} vs {dm}");
    }
}

#[test]
fn prediction_at_inducing_input_consistent() {
    let (xs, ys) = toy30();
    let mut m = SvgpModel::new(xs.clone(), KernelParams::new(1.0, 1.0).unwrap(), 1e-4, 0.0).unwrap();
    m.set_optimal_variational(&xs, &ys).unwrap();
    let (mu, var) = m.predict(&xs).unwrap();
    for i in 0..xs.len() {
        assert!((mu[i] - ys[i]).abs() <= 3.0 * var[i].sqrt() + 1e-9, "{i}: {} vs {}", mu[i], ys[i]);
    }
}

#[test]
fn gradient_gate_at_ten_random_settings() {
    let (xs, ys) = toy30();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..10 {
        let z: Vec<[f64; 2]> = (0..12).map(|_| [rng.random_range(0.0..10.0), rng.random_range(-0.5..0.5)]).collect();
        let mut m = SvgpModel::new(z, KernelParams::new(1.0, 1.5).unwrap(), 0.05, 0.2).unwrap();
        let mut p = pack_params(&m);
        for v in p.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        unpack_params(&mut m, &p);
        let (_, g) = survey_core::svgp::elbo_minibatch(&m, &xs, &ys, 100.0).unwrap();
        let g = g.pack();
        for i in 0..p.len() {
            let h = 1e-5 * p[i].abs().max(1.0);
            let f = |d: f64| {
                let mut q = p.clone();
                q[i] += d;
                let mut mm = m.clone();
                unpack_params(&mut mm, &q);
                elbo_value(&mm, &xs, &ys, 100.0).unwrap().value
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1e-3);
            assert!((fd - g[i]).abs() / denom < 1e-4, "trial {trial} param {i}: fd {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn sgd_training_converges_on_toy() {
    let (xs, ys) = toy30();
    let mut buf = TrainBuffer::new(1000);
    for (x, y) in xs.iter().zip(&ys) {
        buf.push(TrainSample {
            input: *x,
            z: *y,
            omega: Matrix2::zeros(),
        });
    }
    let z: Vec<[f64; 2]> = (0..15).map(|i| [i as f64 * 0.7, 0.0]).collect();
    let mut m = SvgpModel::new(z, KernelParams::new(1.0, 2.0).unwrap(), 0.1, 0.0).unwrap();
    let mut t = Trainer::new(TrainConfig {
        minibatch: 30,
        learning_rate: 0.01,
        seed: 3,
        ..TrainConfig::default()
    })
    .unwrap();
    m.observe(30);
    t.train_steps(&mut m, &buf, 2000).unwrap();

    let dense = DenseGp::fit(&xs, &ys, 1.0, 1.0, 1e-4);
    let held: Vec<[f64; 2]> = (0..29).map(|i| [i as f64 * 0.35 + 0.175, 0.0]).collect();
    let (mu, _) = m.predict(&held).unwrap();
    let rmse = (held
        .iter()
        .zip(&mu)
        .map(|(q, m)| (m - dense.predict(*q).0).powi(2))
        .sum::<f64>()
        / held.len() as f64)
        .sqrt();
    let range = ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min);
    assert!(rmse < 0.05 * range, "rmse {rmse} range {range}");
}

#[test]
fn conditioning_the_prior_reproduces_dense_gp() {
    let (xs, ys) = toy30();
    let (sf2, ell, sn2) = (1.0, 1.0, 0.01);
    let dense = DenseGp::fit(&xs, &ys, sf2, ell, sn2);
    let m = SvgpModel::new(xs.clone(), KernelParams::new(sf2, ell).unwrap(), sn2, 0.0).unwrap();
    let snap = m.snapshot().unwrap();
    let cond = snap.condition(&xs[..15], &ys[..15], &[sn2; 15]).unwrap();
    let cond = cond.condition(&xs[15..], &ys[15..], &[sn2; 15]).unwrap();
    for i in 0..40 {
        let q = [i as f64 * 0.27, 0.05];
        let (mu, sd) = cond.latent(q);
        let (dm, dv) = dense.predict(q);
        assert!((mu - dm).abs() < 1e-4, "{q:?}: {mu} vs {dm}");
        assert!((sd * sd - dv).abs() < 1e-4, "{q:?}: {} vs {dv}", sd * sd);
    }
}

#[test]
fn conditioning_maximizes_anchored_bound() {
    let (xs, ys) = toy30();
    let z: Vec<[f64; 2]> = (0..10).map(|i| [i as f64 * 1.1, 0.0]).collect();
    let mut m = SvgpModel::new(z, KernelParams::new(1.0, 1.5).unwrap(), 0.02, 0.0).unwrap();
    m.set_optimal_variational(&xs[..20], &ys[..20]).unwrap();
    let anchor = m.anchor().unwrap();
    let snap = m.snapshot().unwrap();
    let batch = &xs[20..23];
    let obs = &ys[20..23];
    let cond = snap.condition(batch, obs, &[0.02; 3]).unwrap();
    let (_, g) = elbo_with_target(cond.model(), batch, obs, 3.0, KlTarget::Anchor(&anchor)).unwrap();
    let g = g.pack();
    let lay = layout(10);
    let gmax = g[lay.variational].iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(gmax < 1e-5, "{gmax}");
}
