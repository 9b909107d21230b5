//! Shortest curvature-bounded paths between oriented poses.
//!
//! Segment parameters are computed in the usual normalized frame (turn radius 1,
//! start at the origin, goal on the positive x axis) and scaled back to meters.

use std::f64::consts::PI;

use super::Pose;
use crate::geometry::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Left,
    Straight,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DubinsWord {
    Lsl,
    Rsr,
    Lsr,
    Rsl,
    Rlr,
    Lrl,
}

impl DubinsWord {
    pub const ALL: [DubinsWord; 6] = [
        DubinsWord::Lsl,
        DubinsWord::Rsr,
        DubinsWord::Lsr,
        DubinsWord::Rsl,
        DubinsWord::Rlr,
        DubinsWord::Lrl,
    ];

    pub fn segments(self) -> [SegmentKind; 3] {
        use SegmentKind::*;
        match self {
            DubinsWord::Lsl => [Left, Straight, Left],
            DubinsWord::Rsr => [Right, Straight, Right],
            DubinsWord::Lsr => [Left, Straight, Right],
            DubinsWord::Rsl => [Right, Straight, Left],
            DubinsWord::Rlr => [Right, Left, Right],
            DubinsWord::Lrl => [Left, Right, Left],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DubinsWord::Lsl => "LSL",
            DubinsWord::Rsr => "RSR",
            DubinsWord::Lsr => "LSR",
            DubinsWord::Rsl => "RSL",
            DubinsWord::Rlr => "RLR",
            DubinsWord::Lrl => "LRL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsPath {
    pub start: Pose,
    pub end: Pose,
    pub word: DubinsWord,
    /// Segment lengths in meters.
    pub segment_lengths: [f64; 3],
    pub radius: f64,
    pub length: f64,
}

fn mod2pi(a: f64) -> f64 {
    a.rem_euclid(2.0 * PI)
}

/// Normalized `(t, p, q)` segment parameters for one word, or `None` when the
/// word cannot connect the configuration.
fn word_params(word: DubinsWord, alpha: f64, beta: f64, d: f64) -> Option<[f64; 3]> {
    let (sa, sb) = (alpha.sin(), beta.sin());
    let (ca, cb) = (alpha.cos(), beta.cos());
    let c_ab = (alpha - beta).cos();
    match word {
        DubinsWord::Lsl => {
            let p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sa - sb);
            if p_sq < 0.0 {
                return None;
            }
            let tmp = (cb - ca).atan2(d + sa - sb);
            Some([mod2pi(tmp - alpha), p_sq.sqrt(), mod2pi(beta - tmp)])
        }
        DubinsWord::Rsr => {
            let p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sb - sa);
            if p_sq < 0.0 {
                return None;
            }
            let tmp = (ca - cb).atan2(d - sa + sb);
            Some([mod2pi(alpha - tmp), p_sq.sqrt(), mod2pi(tmp - beta)])
        }
        DubinsWord::Lsr => {
            let p_sq = -2.0 + d * d + 2.0 * c_ab + 2.0 * d * (sa + sb);
            if p_sq < 0.0 {
                return None;
            }
            let p = p_sq.sqrt();
            let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
            Some([mod2pi(tmp - alpha), p, mod2pi(tmp - mod2pi(beta))])
        }
        DubinsWord::Rsl => {
            let p_sq = -2.0 + d * d + 2.0 * c_ab - 2.0 * d * (sa + sb);
            if p_sq < 0.0 {
                return None;
            }
            let p = p_sq.sqrt();
            let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
            Some([mod2pi(alpha - tmp), p, mod2pi(beta - tmp)])
        }
        DubinsWord::Rlr => {
            let tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0;
            if tmp.abs() > 1.0 {
                return None;
            }
            let phi = (ca - cb).atan2(d - sa + sb);
            let p = mod2pi(2.0 * PI - tmp.acos());
            let t = mod2pi(alpha - phi + mod2pi(p / 2.0));
            Some([t, p, mod2pi(alpha - beta - t + mod2pi(p))])
        }
        DubinsWord::Lrl => {
            let tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0;
            if tmp.abs() > 1.0 {
                return None;
            }
            let phi = (ca - cb).atan2(d + sa - sb);
            let p = mod2pi(2.0 * PI - tmp.acos());
            let t = mod2pi(-alpha - phi + p / 2.0);
            Some([t, p, mod2pi(mod2pi(beta) - alpha - t + mod2pi(p))])
        }
    }
}

impl DubinsPath {
    /// Path of the given word, or `None` if the word is infeasible.
    pub fn with_word(start: Pose, end: Pose, radius: f64, word: DubinsWord) -> Option<DubinsPath> {
        assert!(radius > 0.0, "turn radius must be positive");
        let dx = end.x - start.x;
        let dy = end.y - start.y;
        let d = dx.hypot(dy) / radius;
        let th = if d > 0.0 { mod2pi(dy.atan2(dx)) } else { 0.0 };
        let alpha = mod2pi(start.theta - th);
        let beta = mod2pi(end.theta - th);
        let params = word_params(word, alpha, beta, d)?;
        let segment_lengths = params.map(|p| p * radius);
        Some(DubinsPath {
            start,
            end,
            word,
            segment_lengths,
            radius,
            length: segment_lengths.iter().sum(),
        })
    }

    pub fn segments(&self) -> impl Iterator<Item = (SegmentKind, f64)> + '_ {
        self.word
            .segments()
            .into_iter()
            .zip(self.segment_lengths.iter().copied())
    }

    /// Signed curvature (1/m, positive = left) at arc length `s`.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (kind, len) in self.segments() {
            if s < acc + len || len == 0.0 && s <= acc {
                return segment_curvature(kind, self.radius);
            }
            acc += len;
        }
        self.word
            .segments()
            .last()
            .map(|&k| segment_curvature(k, self.radius))
            .unwrap_or(0.0)
    }

    /// Pose at arc length `s`, clamped to `[0, length]`.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length);
        let mut pose = self.start;
        let mut remaining = s;
        for (kind, len) in self.segments() {
            let step = remaining.min(len);
            pose = advance(&pose, kind, step, self.radius);
            remaining -= step;
            if remaining <= 0.0 {
                break;
            }
        }
        pose
    }

    /// The sub-path from arc length `s` to the end, as segment pieces
    /// `(kind, length)`.
    pub fn pieces_from(&self, s: f64) -> Vec<(SegmentKind, f64)> {
        let mut out = Vec::with_capacity(3);
        let mut acc = 0.0;
        for (kind, len) in self.segments() {
            let lo = acc;
            acc += len;
            if acc > s {
                out.push((kind, acc - s.max(lo)));
            }
        }
        out
    }
}

pub fn segment_curvature(kind: SegmentKind, radius: f64) -> f64 {
    match kind {
        SegmentKind::Left => 1.0 / radius,
        SegmentKind::Right => -1.0 / radius,
        SegmentKind::Straight => 0.0,
    }
}

fn advance(pose: &Pose, kind: SegmentKind, len: f64, radius: f64) -> Pose {
    let th = pose.theta;
    match kind {
        SegmentKind::Straight => Pose::new(pose.x + len * th.cos(), pose.y + len * th.sin(), th),
        SegmentKind::Left => {
            let phi = len / radius;
            Pose::new(
                pose.x + radius * ((th + phi).sin() - th.sin()),
                pose.y - radius * ((th + phi).cos() - th.cos()),
                th + phi,
            )
        }
        SegmentKind::Right => {
            let phi = len / radius;
            Pose::new(
                pose.x - radius * ((th - phi).sin() - th.sin()),
                pose.y + radius * ((th - phi).cos() - th.cos()),
                th - phi,
            )
        }
    }
}

/// Minimum-length path over the six words. Identical start and end poses give
/// a zero-length path.
pub fn dubins_shortest(start: Pose, end: Pose, radius: f64) -> DubinsPath {
    let mut best: Option<DubinsPath> = None;
    for word in DubinsWord::ALL {
        if let Some(p) = DubinsPath::with_word(start, end, radius, word) {
            if best.as_ref().is_none_or(|b| p.length < b.length) {
                best = Some(p);
            }
        }
    }
    // LSL and RSR always exist; the fallback only guards against NaN input.
    let mut path = best.expect("Dubins path must exist for finite poses");
    // Snap numerically full loops to zero for coincident poses.
    if start.distance_to(&end) < 1e-12 && wrap_angle(start.theta - end.theta).abs() < 1e-12 {
        path.segment_lengths = [0.0; 3];
        path.length = 0.0;
    }
    path
}

/// Poses at arc-length multiples of `ds`, plus the end pose when the length is
/// not a multiple of `ds`.
pub fn sample_path(path: &DubinsPath, ds: f64) -> Vec<Pose> {
    assert!(ds > 0.0, "sample spacing must be positive");
    let n = (path.length / ds + 1e-9).floor() as usize;
    let mut out: Vec<Pose> = (0..=n).map(|i| path.pose_at(i as f64 * ds)).collect();
    if path.length - n as f64 * ds > 1e-9 {
        out.push(path.pose_at(path.length));
    }
    out
}
