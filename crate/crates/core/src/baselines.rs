//! Comparison baselines: the boustrophedon lawn-mower coverage pattern and the
//! myopic single-candidate planner.

use std::sync::Arc;

use rand::Rng;

use crate::planner::{plan_myopic, Clock, PlanContext, PlanResult, PlannerConfig};
use crate::sensor::{swath_width, SensorConfig};
use crate::svgp::Snapshot;
use crate::terrain::TerrainGrid;
use crate::vehicle::{dubins_shortest, DubinsPath, Pose, PoseBelief};
use crate::{Error, Rect, Result};

/// Corner of the area where the first track starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Corner {
    #[default]
    SouthWest,
    SouthEast,
    NorthWest,
    NorthEast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LawnmowerSpec {
    pub area: Rect,
    pub track_spacing: f64,
    pub swath_width: f64,
    pub entry: Corner,
    pub turn_radius: f64,
}

/// One straight survey line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Track {
    pub start: Pose,
    pub end: Pose,
}

impl LawnmowerSpec {
    pub fn new(area: Rect, nominal_depth: f64, sensor: &SensorConfig, overlap_fraction: f64, turn_radius: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap_fraction) {
            return Err(Error::InvalidConfig(format!("overlap fraction {overlap_fraction} outside [0, 1)")));
        }
        if !(turn_radius > 0.0) {
            return Err(Error::InvalidConfig("turn radius must be > 0".into()));
        }
        if !(area.width() > 0.0 && area.height() > 0.0) {
            return Err(Error::InvalidConfig("lawn-mower area must have positive size".into()));
        }
        let swath = swath_width(nominal_depth, sensor.opening_angle)?;
        Ok(Self {
            area,
            track_spacing: (1.0 - overlap_fraction) * swath,
            swath_width: swath,
            entry: Corner::SouthWest,
            turn_radius,
        })
    }

    /// Spec for a survey of a whole grid at its mean depth.
    pub fn for_grid(grid: &TerrainGrid, sensor: &SensorConfig, overlap_fraction: f64, turn_radius: f64) -> Result<Self> {
        Self::new(grid.extent(), grid.mean_depth(), sensor, overlap_fraction, turn_radius)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.track_spacing > 0.0 && self.track_spacing <= self.swath_width) {
            return Err(Error::InvalidConfig(format!(
                "track spacing {} must lie in (0, swath width {}]",
                self.track_spacing, self.swath_width
            )));
        }
        if !(self.turn_radius > 0.0) {
            return Err(Error::InvalidConfig("turn radius must be > 0".into()));
        }
        Ok(())
    }

    /// Tracks run along the longer side of the area.
    fn along_x(&self) -> bool {
        self.area.width() >= self.area.height()
    }

    fn cross_extent(&self) -> f64 {
        if self.along_x() {
            self.area.height()
        } else {
            self.area.width()
        }
    }

    pub fn track_count(&self) -> usize {
        let w = self.cross_extent();
        if self.swath_width >= w {
            1
        } else {
            ((w / self.track_spacing) - 1e-9).ceil().max(1.0) as usize
        }
    }

    /// Across-track offsets of the track centerlines from the entry side,
    /// centered on the area.
    pub fn track_offsets(&self) -> Vec<f64> {
        let n = self.track_count();
        let w = self.cross_extent();
        let first = 0.5 * (w - (n - 1) as f64 * self.track_spacing);
        (0..n).map(|i| first + i as f64 * self.track_spacing).collect()
    }

    /// Straight tracks in boustrophedon order.
    pub fn tracks(&self) -> Vec<Track> {
        let a = &self.area;
        let (flip_x, flip_y) = match self.entry {
            Corner::SouthWest => (false, false),
            Corner::SouthEast => (true, false),
            Corner::NorthWest => (false, true),
            Corner::NorthEast => (true, true),
        };
        let along_x = self.along_x();
        let length = if along_x { a.width() } else { a.height() };
        // local (u along, v across) to world
        let to_world = |u: f64, v: f64| -> [f64; 2] {
            let (du, dv) = if along_x { (u, v) } else { (v, u) };
            let x = if flip_x { a.max_x - du } else { a.min_x + du };
            let y = if flip_y { a.max_y - dv } else { a.min_y + dv };
            [x, y]
        };
        self.track_offsets()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (u0, u1) = if i % 2 == 0 { (0.0, length) } else { (length, 0.0) };
                let p0 = to_world(u0, v);
                let p1 = to_world(u1, v);
                let theta = (p1[1] - p0[1]).atan2(p1[0] - p0[0]);
                Track {
                    start: Pose::new(p0[0], p0[1], theta),
                    end: Pose::new(p1[0], p1[1], theta),
                }
            })
            .collect()
    }

    /// Legs alternating straight tracks and Dubins turns. When the spacing is
    /// below twice the turn radius the turns bulge outside the area.
    pub fn path(&self) -> Vec<DubinsPath> {
        let tracks = self.tracks();
        let mut legs = Vec::with_capacity(2 * tracks.len());
        for (i, t) in tracks.iter().enumerate() {
            if i > 0 {
                legs.push(dubins_shortest(tracks[i - 1].end, t.start, self.turn_radius));
            }
            legs.push(dubins_shortest(t.start, t.end, self.turn_radius));
        }
        legs
    }
}

/// Lawn-mower legs with tracks spaced `(1 - overlap_fraction)` swath widths
/// apart at `nominal_depth`.
pub fn lawnmower_path(area: Rect, nominal_depth: f64, sensor: &SensorConfig, overlap_fraction: f64, turn_radius: f64) -> Result<Vec<DubinsPath>> {
    let spec = LawnmowerSpec::new(area, nominal_depth, sensor, overlap_fraction, turn_radius)?;
    spec.validate()?;
    Ok(spec.path())
}

pub fn total_length(legs: &[DubinsPath]) -> f64 {
    legs.iter().map(|l| l.length).sum()
}

/// Myopic baseline from the believed pose: single-candidate UCB over the
/// horizon disc, heading BO, random viewpoint on failure.
pub fn myopic_plan<R: Rng + ?Sized>(
    snap: Arc<Snapshot>,
    belief: &PoseBelief,
    ctx: &PlanContext,
    cfg: &PlannerConfig,
    clock: &dyn Clock,
    deadline: f64,
    rng: &mut R,
) -> PlanResult {
    plan_myopic(snap, belief.mean, ctx, cfg, clock, deadline, rng)
}
