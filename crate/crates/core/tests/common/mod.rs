//! Oracles and constructed surrogate fields shared by integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use survey_core::svgp::{KernelParams, Snapshot, SvgpModel};
use survey_core::Rect;

#[derive(Debug, Clone, Copy)]
pub enum Hole {
    Disc([f64; 2], f64),
    Band(Rect),
}

impl Hole {
    fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Hole::Disc(c, r) => (p[0] - c[0]).hypot(p[1] - c[1]) <= *r,
            Hole::Band(b) => b.contains(p[0], p[1]),
        }
    }
}

pub fn inducing_grid(extent: &Rect, spacing: f64) -> Vec<[f64; 2]> {
    let nx = (extent.width() / spacing).round().max(1.0) as usize;
    let ny = (extent.height() / spacing).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push([
                extent.min_x + (i as f64 + 0.5) * extent.width() / nx as f64,
                extent.min_y + (j as f64 + 0.5) * extent.height() / ny as f64,
            ]);
        }
    }
    out
}

/// Model fitted to dense observations of `target` everywhere outside the
/// holes, so variance is high only inside them.
pub fn field(
    extent: Rect,
    lengthscale: f64,
    inducing_spacing: f64,
    data_spacing: f64,
    holes: &[Hole],
    target: impl Fn(f64, f64) -> f64,
) -> Arc<Snapshot> {
    let z = inducing_grid(&extent, inducing_spacing);
    let mut m = SvgpModel::new(z, KernelParams::new(1.0, lengthscale).unwrap(), 1e-2, 0.0).unwrap();
    m.set_extent(extent);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let nx = (extent.width() / data_spacing).floor() as usize;
    let ny = (extent.height() / data_spacing).floor() as usize;
    for j in 0..=ny {
        for i in 0..=nx {
            let p = [extent.min_x + i as f64 * data_spacing, extent.min_y + j as f64 * data_spacing];
            if holes.iter().any(|h| h.contains(p)) {
                continue;
            }
            xs.push(p);
            ys.push(target(p[0], p[1]));
        }
    }
    if !xs.is_empty() {
        m.set_optimal_variational(&xs, &ys).unwrap();
    }
    m.snapshot().unwrap()
}

/// Prior model over `extent`.
pub fn prior(extent: Rect, lengthscale: f64, inducing_spacing: f64) -> Arc<Snapshot> {
    let z = inducing_grid(&extent, inducing_spacing);
    let mut m = SvgpModel::new(z, KernelParams::new(1.0, lengthscale).unwrap(), 1e-2, 0.0).unwrap();
    m.set_extent(extent);
    m.snapshot().unwrap()
}

/// Arg-max of `f` over a regular grid of `step` restricted by `keep`.
pub fn grid_argmax(rect: &Rect, step: f64, keep: impl Fn([f64; 2]) -> bool, f: impl Fn([f64; 2]) -> f64) -> ([f64; 2], f64) {
    let mut best = ([f64::NAN; 2], f64::NEG_INFINITY);
    let nx = (rect.width() / step).floor() as usize;
    let ny = (rect.height() / step).floor() as usize;
    for j in 0..=ny {
        for i in 0..=nx {
            let p = [rect.min_x + i as f64 * step, rect.min_y + j as f64 * step];
            if !keep(p) {
                continue;
            }
            let v = f(p);
            if v > best.1 {
                best = (p, v);
            }
        }
    }
    best
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Dense exact GP with the same Matern-5/2 kernel.
pub fn k52(a: [f64; 2], b: [f64; 2], sf2: f64, ell: f64) -> f64 {
    let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let t = 5f64.sqrt() * r / ell;
    sf2 * (1.0 + t + t * t / 3.0) * (-t).exp()
}

pub struct DenseGp {
    xs: Vec<[f64; 2]>,
    alpha: DVector<f64>,
    kinv: DMatrix<f64>,
    sf2: f64,
    ell: f64,
    pub lml: f64,
}

impl DenseGp {
    pub fn fit(xs: &[[f64; 2]], ys: &[f64], sf2: f64, ell: f64, sn2: f64) -> Self {
        let n = xs.len();
        let k = DMatrix::from_fn(n, n, |i, j| k52(xs[i], xs[j], sf2, ell) + if i == j { sn2 } else { 0.0 });
        let ch = k.clone().cholesky().expect("dense kernel SPD");
        let y = DVector::from_column_slice(ys);
        let alpha = ch.solve(&y);
        let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let lml = -0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Self {
            xs: xs.to_vec(),
            alpha,
            kinv: ch.inverse(),
            sf2,
            ell,
            lml,
        }
    }

    pub fn predict(&self, q: [f64; 2]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|x| k52(*x, q, self.sf2, self.ell)));
        (ks.dot(&self.alpha), self.sf2 - (&self.kinv * &ks).dot(&ks))
    }
}

pub fn toy30() -> (Vec<[f64; 2]>, Vec<f64>) {
    let xs: Vec<[f64; 2]> = (0..30).map(|i| [i as f64 * 0.35, 0.0]).collect();
    let ys = xs.iter().map(|x| (x[0] * 0.9).sin() + 0.3 * (x[0] * 2.1).cos()).collect();
    (xs, ys)
}


fn wrap(a: f64) -> f64 {
    a.rem_euclid(2.0 * PI)
}

/// Closed-form lengths of the six Dubins words as normalized segment triples
/// `(t, p, q)` and turn directions, `None` where a word does not exist.
pub fn dubins_words(start: [f64; 3], end: [f64; 3], radius: f64) -> Vec<(&'static str, [f64; 3])> {
    let (dx, dy) = (end[0] - start[0], end[1] - start[1]);
    let d = dx.hypot(dy) / radius;
    let phi = dy.atan2(dx);
    let a = wrap(start[2] - phi);
    let b = wrap(end[2] - phi);
    let (sa, sb, ca, cb) = (a.sin(), b.sin(), a.cos(), b.cos());
    let cab = (a - b).cos();
    let mut out = Vec::new();

    let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sa - sb);
    if p2 >= 0.0 {
        let th = (cb - ca).atan2(d + sa - sb);
        out.push(("LSL", [wrap(th - a), p2.sqrt(), wrap(b - th)]));
    }
    let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sb - sa);
    if p2 >= 0.0 {
        let th = (ca - cb).atan2(d - sa + sb);
        out.push(("RSR", [wrap(a - th), p2.sqrt(), wrap(th - b)]));
    }
    let p2 = -2.0 + d * d + 2.0 * cab + 2.0 * d * (sa + sb);
    if p2 >= 0.0 {
        let p = p2.sqrt();
        let th = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
        out.push(("LSR", [wrap(th - a), p, wrap(th - b)]));
    }
    let p2 = -2.0 + d * d + 2.0 * cab - 2.0 * d * (sa + sb);
    if p2 >= 0.0 {
        let p = p2.sqrt();
        let th = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
        out.push(("RSL", [wrap(a - th), p, wrap(b - th)]));
    }
    let c = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sa - sb)) / 8.0;
    if c.abs() <= 1.0 {
        let p = wrap(2.0 * PI - c.acos());
        let t = wrap(a - (ca - cb).atan2(d - sa + sb) + 0.5 * p);
        out.push(("RLR", [t, p, wrap(a - b - t + p)]));
    }
    let c = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sb - sa)) / 8.0;
    if c.abs() <= 1.0 {
        let p = wrap(2.0 * PI - c.acos());
        let t = wrap(-a - (ca - cb).atan2(d + sa - sb) + 0.5 * p);
        out.push(("LRL", [t, p, wrap(b - a - t + p)]));
    }
    out
}

/// Integrates a word with normalized segment lengths from `start`.
pub fn integrate_word(start: [f64; 3], word: &str, seg: [f64; 3], radius: f64) -> [f64; 3] {
    let [mut x, mut y, mut th] = start;
    for (c, s) in word.chars().zip(seg) {
        match c {
            'L' => {
                x += radius * ((th + s).sin() - th.sin());
                y += radius * (th.cos() - (th + s).cos());
                th += s;
            }
            'R' => {
                x += radius * (th.sin() - (th - s).sin());
                y += radius * ((th - s).cos() - th.cos());
                th -= s;
            }
            _ => {
                x += radius * s * th.cos();
                y += radius * s * th.sin();
            }
        }
    }
    [x, y, th]
}

pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap(a - b);
    d.min(2.0 * PI - d)
}

/// Fraction of `cell`-sized raster cells inside `area` touched by the beam
/// line of a flat-bottom swath of `swath` width swept along `poses`.
pub fn swath_coverage(area: &Rect, cell: f64, swath: f64, poses: &[[f64; 3]]) -> f64 {
    let nx = (area.width() / cell).round() as usize;
    let ny = (area.height() / cell).round() as usize;
    let mut hit = vec![false; nx * ny];
    let step = 0.25 * cell;
    let n_side = (0.5 * swath / step).floor() as i64;
    for p in poses {
        let (px, py) = (-p[2].sin(), p[2].cos());
        for k in -n_side..=n_side {
            let x = p[0] + k as f64 * step * px;
            let y = p[1] + k as f64 * step * py;
            let i = ((x - area.min_x) / cell).floor();
            let j = ((y - area.min_y) / cell).floor();
            if i >= 0.0 && j >= 0.0 && (i as usize) < nx && (j as usize) < ny {
                hit[j as usize * nx + i as usize] = true;
            }
        }
    }
    hit.iter().filter(|h| **h).count() as f64 / hit.len() as f64
}
