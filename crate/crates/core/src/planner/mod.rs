//! Two-layer viewpoint and path planner.
//!
//! Layer one searches a tree of viewpoints expanded with batch UCB candidates;
//! layer two picks the Dubins arrival heading whose swath collects the most
//! UCB mass. [`plan_next`] wraps both in the fail-safe ladder: tree search,
//! then single-candidate UCB, then a random viewpoint.

pub mod acquisition;
pub mod heading;
pub mod region;
pub mod tree;

use std::cell::Cell;
use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

pub use acquisition::{optimize_q_candidates, qucb, qucb_joint, rollout_value, ucb, CandidateSearch, Candidates};
pub use heading::{optimize_heading, path_value, HeadingSearch, HeadingSurrogate};
pub use region::Region;
pub use tree::{backprop_max, expand, select_child, tree_search, SearchTree, TreeNode, TreeOutcome};

use crate::svgp::{Snapshot, SvgpModel};
use crate::vehicle::{dubins_shortest, DubinsPath, Pose};
use crate::{Error, Rect, Result};

/// Clock charges per planning operation, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerCosts {
    pub candidates: f64,
    pub train: f64,
    pub heading: f64,
}

impl Default for PlannerCosts {
    fn default() -> Self {
        // per-call averages of the onboard timings: 3.5 s over four candidate
        // searches, 10.7 s over three models, 0.8 s heading
        Self {
            candidates: 3.5 / 4.0,
            train: 10.7 / 3.0,
            heading: 0.8,
        }
    }
}

impl PlannerCosts {
    pub fn zero() -> Self {
        Self {
            candidates: 0.0,
            train: 0.0,
            heading: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub beta: f64,
    pub uct_c: f64,
    pub gamma: f64,
    pub d_max: usize,
    pub q: usize,
    pub n_mc_qucb: usize,
    pub horizon_radius: f64,
    pub rollout_samples: usize,
    /// Defaults to half the horizon radius.
    pub rollout_radius: Option<f64>,
    /// Replan when the queued path is shorter than this (m).
    pub replan_threshold: f64,
    /// Upper bound on the planning time of one cycle (s).
    pub time_budget: f64,
    pub restarts: usize,
    pub raw_samples: usize,
    pub opt_iters: usize,
    pub max_tree_iters: usize,
    pub min_viewpoint_distance: f64,
    pub path_samples: usize,
    pub heading_evals: usize,
    pub heading_grid: usize,
    pub fantasy_spacing: f64,
    pub fantasy_lanes: usize,
    pub fantasy_cap: usize,
    pub costs: PlannerCosts,
    /// Replace the tree-search surrogate with a flat prior (fault injection).
    pub inject_flat_tree: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            beta: 100.0,
            uct_c: 12.0,
            gamma: 0.9,
            d_max: 2,
            q: 3,
            n_mc_qucb: 512,
            horizon_radius: 80.0,
            rollout_samples: 64,
            rollout_radius: None,
            replan_threshold: 30.0,
            time_budget: 60.0,
            restarts: 4,
            raw_samples: 128,
            opt_iters: 30,
            max_tree_iters: 64,
            min_viewpoint_distance: 20.0,
            path_samples: 256,
            heading_evals: 12,
            heading_grid: 360,
            fantasy_spacing: 8.0,
            fantasy_lanes: 3,
            fantasy_cap: 96,
            costs: PlannerCosts::default(),
            inject_flat_tree: false,
        }
    }
}

impl PlannerConfig {
    pub fn rollout_radius(&self) -> f64 {
        self.rollout_radius.unwrap_or(0.5 * self.horizon_radius)
    }

    pub fn validate(&self, turn_radius: f64) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.q == 0 {
            return bad("planner.q must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("planner.gamma must lie in (0, 1]");
        }
        if !(self.beta >= 0.0) {
            return bad("planner.beta must be >= 0");
        }
        if !(self.uct_c >= 0.0) {
            return bad("planner.uct_c must be >= 0");
        }
        if !(self.horizon_radius > turn_radius) {
            return bad("planner.horizon_radius must exceed the turn radius");
        }
        if self.n_mc_qucb == 0 || self.rollout_samples == 0 || self.path_samples == 0 {
            return bad("sample counts must be >= 1");
        }
        if !(self.rollout_radius() > 0.0) {
            return bad("planner.rollout_radius must be > 0");
        }
        if self.restarts == 0 || self.raw_samples == 0 {
            return bad("planner.restarts and planner.raw_samples must be >= 1");
        }
        if !(self.replan_threshold >= 0.0) || !(self.time_budget >= 0.0) {
            return bad("planner thresholds must be >= 0");
        }
        if !(self.min_viewpoint_distance >= 0.0) || !(self.fantasy_spacing > 0.0) {
            return bad("planner distances must be positive");
        }
        if self.heading_grid < 4 || self.fantasy_lanes == 0 || self.fantasy_cap == 0 {
            return bad("planner grid sizes must be positive");
        }
        Ok(())
    }
}

/// Geometry the planner needs about the survey.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanContext {
    pub extent: Rect,
    pub turn_radius: f64,
    pub swath_width: f64,
    /// Viewpoints stay this far inside the extent.
    pub margin: f64,
}

impl PlanContext {
    pub fn new(extent: Rect, turn_radius: f64, swath_width: f64) -> Self {
        Self {
            extent,
            turn_radius,
            swath_width,
            margin: 2.0 * turn_radius,
        }
    }

    pub fn planning_rect(&self) -> Rect {
        self.extent.shrink(self.margin)
    }
}

/// Time source for deadlines. The simulated clock only advances when
/// planning operations are charged to it.
pub trait Clock {
    fn now(&self) -> f64;
    fn charge(&self, secs: f64);
}

#[derive(Debug, Default)]
pub struct SimClock {
    t: Cell<f64>,
}

impl SimClock {
    pub fn new(t0: f64) -> Self {
        Self { t: Cell::new(t0) }
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.t.get()
    }

    fn charge(&self, secs: f64) {
        self.t.set(self.t.get() + secs);
    }
}

/// Wall-clock seconds since creation, optionally sped up by `scale`;
/// charges are ignored.
#[derive(Debug)]
pub struct WallClock {
    start: Instant,
    offset: f64,
    scale: f64,
}

impl WallClock {
    pub fn new(t0: f64) -> Self {
        Self::scaled(t0, 1.0)
    }

    pub fn scaled(t0: f64, scale: f64) -> Self {
        Self {
            start: Instant::now(),
            offset: t0,
            scale,
        }
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.offset + self.scale * self.start.elapsed().as_secs_f64()
    }

    fn charge(&self, _secs: f64) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlanTag {
    Nonmyopic,
    MyopicFallback,
    RandomFallback,
    /// Output of the myopic baseline planner.
    Myopic,
    Lawnmower,
}

impl PlanTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanTag::Nonmyopic => "nonmyopic",
            PlanTag::MyopicFallback => "myopic_fallback",
            PlanTag::RandomFallback => "random_fallback",
            PlanTag::Myopic => "myopic",
            PlanTag::Lawnmower => "lawnmower",
        }
    }
}

impl fmt::Display for PlanTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub path: DubinsPath,
    pub tag: PlanTag,
    pub viewpoint: [f64; 2],
    pub theta: f64,
    pub tree_iters: usize,
    pub models_trained: usize,
}

fn heading_search(ctx: &PlanContext, cfg: &PlannerConfig) -> HeadingSearch {
    HeadingSearch {
        beta: cfg.beta,
        n_samples: cfg.path_samples,
        extra_evals: cfg.heading_evals,
        grid: cfg.heading_grid,
        swath_width: ctx.swath_width,
        turn_radius: ctx.turn_radius,
    }
}

fn viewpoint_region(start: Pose, ctx: &PlanContext, cfg: &PlannerConfig) -> Region {
    let rect = ctx.planning_rect();
    let c = [start.x.clamp(rect.min_x, rect.max_x), start.y.clamp(rect.min_y, rect.max_y)];
    let r_min = cfg.min_viewpoint_distance.min(0.5 * cfg.horizon_radius);
    Region::disc(c, cfg.horizon_radius, r_min, rect)
}

/// Flat prior surrogate with the same kernel, inducing inputs and offset.
pub fn flat_snapshot(snap: &Snapshot) -> Result<Arc<Snapshot>> {
    let m = snap.model();
    let mut prior = SvgpModel::new(m.inducing().to_vec(), *m.kernel(), m.noise_variance(), m.mean_offset())?;
    if let Some(e) = m.extent() {
        prior.set_extent(e);
    }
    prior.snapshot()
}

/// Single-candidate UCB maximization followed by heading optimization.
#[allow(clippy::too_many_arguments)]
fn myopic_step<R: Rng + ?Sized>(
    snap: &Snapshot,
    start: Pose,
    ctx: &PlanContext,
    cfg: &PlannerConfig,
    clock: &dyn Clock,
    deadline: f64,
    rng: &mut R,
    tag: PlanTag,
) -> Result<PlanResult> {
    if clock.now() + cfg.costs.candidates + cfg.costs.heading > deadline {
        return Err(Error::NonConvergence("no time for myopic optimization".into()));
    }
    let region = viewpoint_region(start, ctx, cfg);
    let search = CandidateSearch {
        q: 1,
        beta: cfg.beta,
        n_mc: 1,
        restarts: cfg.restarts,
        raw_samples: cfg.raw_samples,
        iters: cfg.opt_iters,
    };
    let cands = optimize_q_candidates(snap, &region, &search, rng);
    clock.charge(cfg.costs.candidates);
    let target = cands?.points[0];
    let h = optimize_heading(snap, start, target, &ctx.extent, &heading_search(ctx, cfg), rng);
    clock.charge(cfg.costs.heading);
    Ok(PlanResult {
        path: h.path,
        tag,
        viewpoint: target,
        theta: h.theta,
        tree_iters: 0,
        models_trained: 0,
    })
}

/// Uniform viewpoint in the horizon region approached with the straight-in
/// heading. Prefers targets whose path stays inside the extent.
pub fn random_fallback<R: Rng + ?Sized>(start: Pose, ctx: &PlanContext, cfg: &PlannerConfig, rng: &mut R) -> PlanResult {
    let region = viewpoint_region(start, ctx, cfg);
    let mut fallback = None;
    for _ in 0..32 {
        let t = region.sample(rng);
        let bearing = (t[1] - start.y).atan2(t[0] - start.x);
        let path = dubins_shortest(start, Pose::new(t[0], t[1], bearing), ctx.turn_radius);
        let res = PlanResult {
            theta: path.end.theta,
            path,
            tag: PlanTag::RandomFallback,
            viewpoint: t,
            tree_iters: 0,
            models_trained: 0,
        };
        if path.length > 0.0 && heading::path_within(&path, &ctx.extent) {
            return res;
        }
        if fallback.is_none() && path.length > 0.0 {
            fallback = Some(res);
        }
    }
    fallback.unwrap_or_else(|| {
        let c = ctx.extent.center();
        let bearing = (c.y - start.y).atan2(c.x - start.x);
        let mut end = Pose::new(start.x + ctx.turn_radius * bearing.cos(), start.y + ctx.turn_radius * bearing.sin(), bearing);
        if start.distance_to(&end) < 1e-9 {
            end = Pose::new(start.x + ctx.turn_radius, start.y, 0.0);
        }
        let path = dubins_shortest(start, end, ctx.turn_radius);
        PlanResult {
            theta: end.theta,
            path,
            tag: PlanTag::RandomFallback,
            viewpoint: [end.x, end.y],
            tree_iters: 0,
            models_trained: 0,
        }
    })
}

/// Next path from `start`: tree search and heading BO, falling back to the
/// myopic step and then to a random viewpoint. Always returns a path.
pub fn plan_next<R: Rng + ?Sized>(
    snap: Arc<Snapshot>,
    start: Pose,
    ctx: &PlanContext,
    cfg: &PlannerConfig,
    clock: &dyn Clock,
    deadline: f64,
    rng: &mut R,
) -> PlanResult {
    let mut iters = 0;
    let mut trained = 0;
    if clock.now() < deadline {
        let tree_model = if cfg.inject_flat_tree {
            flat_snapshot(&snap).unwrap_or_else(|_| snap.clone())
        } else {
            snap.clone()
        };
        let heading_reserve = cfg.costs.heading;
        match tree_search(tree_model, start, ctx, cfg, clock, deadline - heading_reserve, rng) {
            Ok(out) => {
                iters = out.iterations;
                trained = out.models_trained;
                if clock.now() + cfg.costs.heading <= deadline {
                    let h = optimize_heading(&snap, start, out.viewpoint, &ctx.extent, &heading_search(ctx, cfg), rng);
                    clock.charge(cfg.costs.heading);
                    return PlanResult {
                        path: h.path,
                        tag: PlanTag::Nonmyopic,
                        viewpoint: out.viewpoint,
                        theta: h.theta,
                        tree_iters: iters,
                        models_trained: trained,
                    };
                }
            }
            Err(e) => log::debug!("tree search failed: {e}"),
        }
        match myopic_step(&snap, start, ctx, cfg, clock, deadline, rng, PlanTag::MyopicFallback) {
            Ok(mut r) => {
                r.tree_iters = iters;
                r.models_trained = trained;
                return r;
            }
            Err(e) => log::debug!("myopic fallback failed: {e}"),
        }
    }
    let mut r = random_fallback(start, ctx, cfg, rng);
    r.tree_iters = iters;
    r.models_trained = trained;
    r
}

/// Myopic baseline: single-candidate UCB and heading BO, random viewpoint
/// when the optimization fails.
pub fn plan_myopic<R: Rng + ?Sized>(
    snap: Arc<Snapshot>,
    start: Pose,
    ctx: &PlanContext,
    cfg: &PlannerConfig,
    clock: &dyn Clock,
    deadline: f64,
    rng: &mut R,
) -> PlanResult {
    match myopic_step(&snap, start, ctx, cfg, clock, deadline, rng, PlanTag::Myopic) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("myopic planner failed: {e}");
            random_fallback(start, ctx, cfg, rng)
        }
    }
}

/// Same machinery as the myopic rung of [`plan_next`], tagged as such.
pub fn plan_myopic_fallback<R: Rng + ?Sized>(
    snap: Arc<Snapshot>,
    start: Pose,
    ctx: &PlanContext,
    cfg: &PlannerConfig,
    clock: &dyn Clock,
    deadline: f64,
    rng: &mut R,
) -> Result<PlanResult> {
    myopic_step(&snap, start, ctx, cfg, clock, deadline, rng, PlanTag::MyopicFallback)
}

pub const PLAN_LOG_HEADER: &str = "cycle,t,tag,viewpoint_x,viewpoint_y,theta,tree_iters,models_trained,wall_time_s";

pub fn write_plan_row<W: Write>(out: &mut W, cycle: usize, t: f64, r: &PlanResult, wall: f64) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{:.3},{},{:.3},{:.3},{:.6},{},{},{:.6}",
        cycle, t, r.tag, r.viewpoint[0], r.viewpoint[1], r.theta, r.tree_iters, r.models_trained, wall
    )
}
