//! Isotropic Matérn-5/2 covariance on the plane.

use crate::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscale: f64,
}

impl KernelParams {
    /// Smoothness is fixed.
    pub const NU: f64 = 2.5;

    pub fn new(signal_variance: f64, lengthscale: f64) -> Result<Self> {
        let k = Self {
            signal_variance,
            lengthscale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "signal variance must be > 0, got {}",
                self.signal_variance
            )));
        }
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lengthscale must be > 0, got {}",
                self.lengthscale
            )));
        }
        Ok(())
    }

    /// Covariance as a function of distance.
    #[inline]
    pub fn at_distance(&self, r: f64) -> f64 {
        let t = SQRT5 * r / self.lengthscale;
        self.signal_variance * (1.0 + t + t * t / 3.0) * (-t).exp()
    }

    /// Returns `(k, dk/dlog(lengthscale), g)` where the gradient of `k` with
    /// respect to the first argument is `g * (a - b)`.
    #[inline]
    pub fn with_derivatives(&self, a: [f64; 2], b: [f64; 2]) -> (f64, f64, f64) {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let r = (dx * dx + dy * dy).sqrt();
        let ell = self.lengthscale;
        let t = SQRT5 * r / ell;
        let e = (-t).exp();
        let sf2 = self.signal_variance;
        let k = sf2 * (1.0 + t + t * t / 3.0) * e;
        let dk_dlog_ell = sf2 * t * t * (1.0 + t) * e / 3.0;
        let g = -sf2 * (5.0 / (3.0 * ell * ell)) * (1.0 + t) * e;
        (k, dk_dlog_ell, g)
    }
}

#[inline]
pub fn matern52(a: [f64; 2], b: [f64; 2], k: &KernelParams) -> f64 {
    let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    k.at_distance(r)
}
