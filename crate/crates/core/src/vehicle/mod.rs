//! AUV kinematics at a fixed surveying depth: the noisy "true" unicycle, the
//! dead-reckoned pose belief, and Dubins path generation.

pub mod dubins;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{wrap_angle, Point2};
use crate::linalg::{is_psd3, psd_sqrt3, symmetrize3};
use crate::{Error, Result};

pub use dubins::{dubins_shortest, sample_path, DubinsPath, DubinsWord, SegmentKind};

/// Planar pose; `theta` is kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseBelief {
    pub mean: Pose,
    /// Covariance over (x, y, theta).
    pub cov: Matrix3<f64>,
}

impl PoseBelief {
    pub fn new(mean: Pose, cov: Matrix3<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn certain(mean: Pose) -> Self {
        Self::new(mean, Matrix3::zeros())
    }

    pub fn position_trace(&self) -> f64 {
        self.cov[(0, 0)] + self.cov[(1, 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleConfig {
    /// Constant surveying speed (m/s).
    pub speed: f64,
    pub turn_radius_min: f64,
    /// Process-noise covariance rate over (x, y, theta), per second.
    pub process_noise: Matrix3<f64>,
    pub initial_cov: Matrix3<f64>,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            speed: 0.8,
            turn_radius_min: 10.0,
            process_noise: Matrix3::from_diagonal(&Vector3::new(2e-4, 2e-4, 1e-9)),
            initial_cov: Matrix3::from_diagonal(&Vector3::new(0.25, 0.25, 1e-5)),
        }
    }
}

impl VehicleConfig {
    pub fn max_turn_rate(&self) -> f64 {
        self.speed / self.turn_radius_min
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0) {
            return Err(Error::InvalidConfig("vehicle speed must be > 0".into()));
        }
        if !(self.turn_radius_min > 0.0) {
            return Err(Error::InvalidConfig("turn radius must be > 0".into()));
        }
        for (name, m) in [("process noise", &self.process_noise), ("initial covariance", &self.initial_cov)] {
            if (m - m.transpose()).abs().max() > 1e-12 || !is_psd3(m, 1e-12) {
                return Err(Error::InvalidConfig(format!("{name} must be symmetric PSD")));
            }
        }
        Ok(())
    }
}

fn check_step(turn_rate: f64, dt: f64, cfg: &VehicleConfig) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be > 0, got {dt}")));
    }
    let limit = cfg.max_turn_rate();
    if turn_rate.abs() > limit * (1.0 + 1e-9) {
        return Err(Error::InvalidConfig(format!(
            "turn rate {turn_rate:.5} rad/s exceeds curvature limit {limit:.5} rad/s"
        )));
    }
    Ok(())
}

/// Closed-form unicycle integration at constant speed and turn rate.
pub fn unicycle(pose: &Pose, speed: f64, turn_rate: f64, dt: f64) -> Pose {
    let th = pose.theta;
    if turn_rate.abs() < 1e-12 {
        Pose::new(pose.x + speed * dt * th.cos(), pose.y + speed * dt * th.sin(), th)
    } else {
        let r = speed / turn_rate;
        let th1 = th + turn_rate * dt;
        Pose::new(
            pose.x + r * (th1.sin() - th.sin()),
            pose.y - r * (th1.cos() - th.cos()),
            th1,
        )
    }
}

/// Jacobian of [`unicycle`] with respect to the pose.
fn unicycle_jacobian(pose: &Pose, speed: f64, turn_rate: f64, dt: f64) -> Matrix3<f64> {
    let th = pose.theta;
    let (dx_dth, dy_dth) = if turn_rate.abs() < 1e-12 {
        (-speed * dt * th.sin(), speed * dt * th.cos())
    } else {
        let r = speed / turn_rate;
        let th1 = th + turn_rate * dt;
        (r * (th1.cos() - th.cos()), r * (th1.sin() - th.sin()))
    };
    Matrix3::new(1.0, 0.0, dx_dth, 0.0, 1.0, dy_dth, 0.0, 0.0, 1.0)
}

/// Advances the true vehicle state: exact unicycle motion plus zero-mean
/// Gaussian noise with covariance `W * dt`.
pub fn step_true<R: Rng + ?Sized>(pose: &Pose, turn_rate: f64, dt: f64, cfg: &VehicleConfig, rng: &mut R) -> Result<Pose> {
    check_step(turn_rate, dt, cfg)?;
    let next = unicycle(pose, cfg.speed, turn_rate, dt);
    if cfg.process_noise == Matrix3::zeros() {
        return Ok(next);
    }
    let l = psd_sqrt3(&cfg.process_noise) * dt.sqrt();
    let a = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let e = l * a;
    Ok(Pose::new(next.x + e.x, next.y + e.y, next.theta + e.z))
}

/// Dead-reckoning prediction: noiseless mean, first-order covariance
/// `J cov J^T + W dt`.
pub fn propagate_belief(belief: &PoseBelief, turn_rate: f64, dt: f64, cfg: &VehicleConfig) -> Result<PoseBelief> {
    check_step(turn_rate, dt, cfg)?;
    let j = unicycle_jacobian(&belief.mean, cfg.speed, turn_rate, dt);
    let cov = symmetrize3(&(j * belief.cov * j.transpose() + cfg.process_noise * dt));
    Ok(PoseBelief::new(unicycle(&belief.mean, cfg.speed, turn_rate, dt), cov))
}
