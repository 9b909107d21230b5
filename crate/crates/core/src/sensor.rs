//! Multibeam echosounder simulation.
//!
//! Each ping fans `n_beams` rays across track. A ray's footprint is where it
//! meets the height field under the *true* pose; the beam is then georeferenced
//! with the *believed* pose, so dead-reckoning drift shows up as map error.

use std::io::Write;

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::terrain::TerrainGrid;
use crate::vehicle::{Pose, PoseBelief};
use crate::{Error, Result};

const FOOTPRINT_TOL: f64 = 1e-3;
const FOOTPRINT_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    /// Total fan width (rad).
    pub opening_angle: f64,
    pub n_beams: usize,
    pub ping_rate: f64,
    /// Per-beam measurement noise variances on (x, y, z), m^2.
    pub noise_q: Vector3<f64>,
    /// Added to both diagonal entries of every input covariance, m^2.
    pub ui_floor: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            opening_angle: 90f64.to_radians(),
            n_beams: 64,
            ping_rate: 20.0,
            noise_q: Vector3::new(0.01, 0.01, 0.01),
            ui_floor: 1e-4,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.opening_angle > 0.0 && self.opening_angle < std::f64::consts::PI) {
            return Err(Error::InvalidConfig("opening angle must lie in (0, pi)".into()));
        }
        if self.n_beams == 0 {
            return Err(Error::InvalidConfig("need at least one beam".into()));
        }
        if !(self.ping_rate > 0.0) {
            return Err(Error::InvalidConfig("ping rate must be > 0".into()));
        }
        if self.noise_q.iter().any(|&q| !(q >= 0.0)) || !(self.ui_floor >= 0.0) {
            return Err(Error::InvalidConfig("sensor noise terms must be >= 0".into()));
        }
        Ok(())
    }

    /// Across-track beam angles, evenly spaced over the fan; positive is port.
    pub fn beam_angles(&self) -> Vec<f64> {
        if self.n_beams == 1 {
            return vec![0.0];
        }
        let step = self.opening_angle / (self.n_beams - 1) as f64;
        (0..self.n_beams)
            .map(|k| -0.5 * self.opening_angle + k as f64 * step)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    /// Georeferenced sounding: horizontal position and z = -depth.
    pub pos: Vector3<f64>,
    /// Horizontal input covariance.
    pub omega: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ping {
    pub t: f64,
    pub true_pose: Pose,
    pub believed: PoseBelief,
    pub beams: Vec<Beam>,
}

/// Flat-bottom swath width `2 d tan(opening / 2)`.
pub fn swath_width(depth: f64, opening_angle: f64) -> Result<f64> {
    if !(opening_angle > 0.0 && opening_angle < std::f64::consts::PI) {
        return Err(Error::InvalidConfig(format!(
            "opening angle {opening_angle} outside (0, pi)"
        )));
    }
    if !(depth > 0.0) {
        return Err(Error::InvalidConfig(format!("depth must be > 0, got {depth}")));
    }
    Ok(2.0 * depth * (0.5 * opening_angle).tan())
}

fn port_unit(theta: f64) -> Vector2<f64> {
    Vector2::new(-theta.sin(), theta.cos())
}

/// Input covariance of a beam with vehicle-frame lever arm `offset`
/// (along-track, port). Positional uncertainty passes through unchanged; heading
/// uncertainty rotates the lever arm, displacing the footprint perpendicular to
/// it.
pub fn beam_ui_cov(believed: &PoseBelief, offset: Vector2<f64>, cfg: &SensorConfig) -> Matrix2<f64> {
    let p = believed.cov.fixed_view::<2, 2>(0, 0).into_owned();
    let p = (p + p.transpose()) * 0.5;
    let var_theta = believed.cov[(2, 2)].max(0.0);
    let (s, c) = believed.mean.theta.sin_cos();
    let rot = Matrix2::new(c, -s, s, c);
    // d(R(theta) o)/d(theta) = R(theta) * perp(o)
    let lever = rot * Vector2::new(-offset.y, offset.x);
    p + lever * lever.transpose() * var_theta + Matrix2::identity() * cfg.ui_floor
}

/// Horizontal distance at which a ray leaving the surface at across-track angle
/// `alpha` meets the seabed, by bisection on the height-field intersection.
fn footprint_range(grid: &TerrainGrid, origin: Vector2<f64>, dir: Vector2<f64>, tan_alpha: f64) -> f64 {
    let h = |rho: f64| {
        let p = origin + dir * rho;
        rho / tan_alpha - grid.depth_at_clamped(p.x, p.y)
    };
    let mut lo = 0.0;
    let mut hi = tan_alpha * grid.max_depth() * (1.0 + 1e-9) + 1e-9;
    for _ in 0..FOOTPRINT_MAX_ITERS {
        if hi - lo < FOOTPRINT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One ping. Beams whose footprint falls outside the grid are dropped.
pub fn simulate_ping<R: Rng + ?Sized>(
    t: f64,
    true_pose: &Pose,
    believed: &PoseBelief,
    grid: &TerrainGrid,
    cfg: &SensorConfig,
    rng: &mut R,
) -> Ping {
    let extent = grid.extent();
    let origin = Vector2::new(true_pose.x, true_pose.y);
    let true_port = port_unit(true_pose.theta);
    let bel_origin = Vector2::new(believed.mean.x, believed.mean.y);
    let bel_port = port_unit(believed.mean.theta);
    let q_sd = cfg.noise_q.map(|q| q.sqrt());
    let mut beams = Vec::with_capacity(cfg.n_beams);
    for alpha in cfg.beam_angles() {
        let (sign, rho) = if alpha == 0.0 {
            (1.0, 0.0)
        } else {
            let sign = alpha.signum();
            (sign, footprint_range(grid, origin, true_port * sign, alpha.abs().tan()))
        };
        let foot = origin + true_port * (sign * rho);
        // draw noise before the extent check so the stream does not depend on drops
        let e = Vector3::new(
            q_sd.x * rng.sample::<f64, _>(StandardNormal),
            q_sd.y * rng.sample::<f64, _>(StandardNormal),
            q_sd.z * rng.sample::<f64, _>(StandardNormal),
        );
        if !extent.contains(foot.x, foot.y) {
            continue;
        }
        let depth = grid.depth_at_clamped(foot.x, foot.y);
        let xy = bel_origin + bel_port * (sign * rho);
        let offset = Vector2::new(0.0, sign * rho);
        beams.push(Beam {
            pos: Vector3::new(xy.x + e.x, xy.y + e.y, -depth + e.z),
            omega: beam_ui_cov(believed, offset, cfg),
        });
    }
    Ping {
        t,
        true_pose: *true_pose,
        believed: *believed,
        beams,
    }
}

pub const PING_CSV_HEADER: &str = "t,beam_idx,x,y,z,om_xx,om_xy,om_yy";

pub fn write_ping_rows<W: Write>(out: &mut W, ping: &Ping) -> std::io::Result<()> {
    for (i, b) in ping.beams.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            ping.t, i, b.pos.x, b.pos.y, b.pos.z, b.omega[(0, 0)], b.omega[(0, 1)], b.omega[(1, 1)]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::linalg::is_psd2;
    use crate::terrain::{synth_terrain, Bump, FeatureSpec};
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless() -> SensorConfig {
        SensorConfig {
            noise_q: Vector3::zeros(),
            ui_floor: 0.0,
            ..SensorConfig::default()
        }
    }

    fn flat(depth: f64) -> TerrainGrid {
        synth_terrain(&FeatureSpec::flat(depth), Point2::origin(), 1.0, 201, 201).unwrap()
    }

    fn bumpy() -> TerrainGrid {
        let spec = FeatureSpec {
            bumps: vec![
                Bump { center: Point2::new(90.0, 100.0), amplitude: -6.0, radius: 12.0 },
                Bump { center: Point2::new(130.0, 80.0), amplitude: 4.0, radius: 9.0 },
            ],
            noise_amplitude: 0.3,
            noise_lengthscale: 6.0,
            seed: 4,
            ..FeatureSpec::flat(20.0)
        };
        synth_terrain(&spec, Point2::origin(), 1.0, 201, 201).unwrap()
    }

    #[test]
    fn nadir_on_flat_bottom() {
        let cfg = SensorConfig { n_beams: 1, ..noiseless() };
        let pose = Pose::new(100.0, 100.0, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ping = simulate_ping(0.0, &pose, &PoseBelief::certain(pose), &flat(20.0), &cfg, &mut rng);
        assert_eq!(ping.beams.len(), 1);
        let b = &ping.beams[0];
        assert!((b.pos.x - 100.0).abs() < 1e-12 && (b.pos.y - 100.0).abs() < 1e-12);
        assert_eq!(b.pos.z, -20.0);
    }

    #[test]
    fn outer_beam_offset_equals_depth() {
        let cfg = noiseless();
        let pose = Pose::new(100.0, 100.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ping = simulate_ping(0.0, &pose, &PoseBelief::certain(pose), &flat(20.0), &cfg, &mut rng);
        assert_eq!(ping.beams.len(), 64);
        let first = &ping.beams[0];
        let last = &ping.beams[63];
        // heading east: port is +y
        assert!((first.pos.y - 80.0).abs() < FOOTPRINT_TOL, "{}", first.pos.y);
        assert!((last.pos.y - 120.0).abs() < FOOTPRINT_TOL, "{}", last.pos.y);
        assert!((first.pos.x - 100.0).abs() < 1e-9);
    }

    #[test]
    fn ping_count_over_leg() {
        let cfg = SensorConfig::default();
        let grid = flat(20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pings = 0;
        let mut beams = 0;
        let n = (10.0 * cfg.ping_rate) as usize;
        for k in 0..n {
            let t = k as f64 / cfg.ping_rate;
            let pose = Pose::new(50.0 + 0.8 * t, 100.0, 0.0);
            let ping = simulate_ping(t, &pose, &PoseBelief::certain(pose), &grid, &cfg, &mut rng);
            pings += 1;
            beams += ping.beams.len();
        }
        assert_eq!(pings, 200);
        assert!(beams <= 12_800);
        assert_eq!(beams, 12_800);
    }

    #[test]
    fn edge_beams_dropped() {
        let cfg = noiseless();
        let pose = Pose::new(5.0, 100.0, std::f64::consts::FRAC_PI_2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ping = simulate_ping(0.0, &pose, &PoseBelief::certain(pose), &flat(20.0), &cfg, &mut rng);
        assert!(ping.beams.len() < 64 && ping.beams.len() > 32);
        assert!(ping.beams.iter().all(|b| b.pos.x >= 0.0));
    }

    #[test]
    fn noiseless_beams_sample_the_surface() {
        let cfg = noiseless();
        let grid = bumpy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (x, y, th) in [(90.0, 100.0, 0.3), (120.0, 85.0, -2.0), (60.0, 140.0, 1.2)] {
            let pose = Pose::new(x, y, th);
            let ping = simulate_ping(0.0, &pose, &PoseBelief::certain(pose), &grid, &cfg, &mut rng);
            for b in &ping.beams {
                let d = grid.depth_at(b.pos.x, b.pos.y).unwrap();
                // horizontal bisection tolerance times the local slope
                assert!((b.pos.z + d).abs() < 2e-3, "{} vs {}", b.pos.z, -d);
            }
        }
    }

    #[test]
    fn belief_shift_translates_beams() {
        let cfg = SensorConfig::default();
        let grid = bumpy();
        let pose = Pose::new(100.0, 100.0, 0.7);
        let bel = PoseBelief::new(pose, Matrix3::from_diagonal(&Vector3::new(0.3, 0.2, 1e-4)));
        let mut shifted = bel;
        shifted.mean.x += 1.25;
        shifted.mean.y -= 0.5;
        let a = simulate_ping(0.0, &pose, &bel, &grid, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = simulate_ping(0.0, &pose, &shifted, &grid, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.beams.len(), b.beams.len());
        for (p, q) in a.beams.iter().zip(&b.beams) {
            assert!((q.pos.x - p.pos.x - 1.25).abs() < 1e-9);
            assert!((q.pos.y - p.pos.y + 0.5).abs() < 1e-9);
            assert_eq!(q.pos.z, p.pos.z);
        }
    }

    #[test]
    fn ui_cov_cases() {
        let cfg = noiseless();
        let zero = PoseBelief::certain(Pose::new(0.0, 0.0, 0.3));
        assert_eq!(beam_ui_cov(&zero, Vector2::new(0.0, 15.0), &cfg), Matrix2::zeros());

        let floor = SensorConfig { ui_floor: 0.01, ..noiseless() };
        let bel = PoseBelief::new(Pose::new(0.0, 0.0, 1.1), Matrix3::from_diagonal(&Vector3::new(4.0, 4.0, 0.37)));
        let om = beam_ui_cov(&bel, Vector2::zeros(), &floor);
        assert!((om - Matrix2::from_diagonal(&Vector2::new(4.01, 4.01))).norm() < 1e-12);

        // heading east, port lever arm: heading error moves the footprint along x
        let bel = PoseBelief::new(Pose::new(0.0, 0.0, 0.0), Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, 0.01)));
        let om = beam_ui_cov(&bel, Vector2::new(0.0, 10.0), &cfg);
        assert!((om[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(om[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn swath_width_cases() {
        assert!((swath_width(20.0, 90f64.to_radians()).unwrap() - 40.0).abs() < 1e-9);
        assert!(swath_width(20.0, 1e-9).unwrap() < 1e-7);
        let w1 = swath_width(13.0, 1.2).unwrap();
        let w2 = swath_width(26.0, 1.2).unwrap();
        assert!((w2 - 2.0 * w1).abs() < 1e-12);
        assert!(swath_width(20.0, std::f64::consts::PI).is_err());
        assert!(swath_width(-1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn ui_cov_is_psd_and_monotone(
            a in 0.0f64..5.0, b in 0.0f64..5.0, rho in -0.99f64..0.99,
            vth in 0.0f64..0.1, th in -3.1f64..3.1, off in -40.0f64..40.0, k in 1.0f64..4.0,
        ) {
            let cfg = SensorConfig::default();
            let cxy = rho * (a * b).sqrt();
            let mut cov = Matrix3::new(a, cxy, 0.0, cxy, b, 0.0, 0.0, 0.0, vth);
            let bel = PoseBelief::new(Pose::new(0.0, 0.0, th), cov);
            let om = beam_ui_cov(&bel, Vector2::new(0.0, off), &cfg);
            prop_assert!((om - om.transpose()).norm() < 1e-12);
            prop_assert!(is_psd2(&om, 1e-12));
            cov.fixed_view_mut::<2, 2>(0, 0).scale_mut(k);
            let om2 = beam_ui_cov(&PoseBelief::new(bel.mean, cov), Vector2::new(0.0, off), &cfg);
            prop_assert!(om2.trace() >= om.trace() - 1e-12);
        }
    }
}
