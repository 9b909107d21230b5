//! Receding-horizon mission loop at the sonar ping cadence.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ClockMode, Method, MissionConfig};
use crate::baselines::{total_length, LawnmowerSpec};
use crate::eval::{consistency_rmse, write_metrics_rows, MetricSample, METRICS_HEADER};
use crate::linalg::psd_sqrt3;
use crate::planner::{plan_myopic, plan_next, write_plan_row, Clock, PlanContext, PlanResult, PlanTag, SimClock, WallClock, PLAN_LOG_HEADER};
use crate::sensor::{simulate_ping, swath_width, write_ping_rows, PING_CSV_HEADER};
use crate::svgp::{KernelParams, Snapshot, SvgpModel, TrainBuffer, TrainSample, Trainer};
use crate::terrain::TerrainGrid;
use crate::vehicle::dubins::segment_curvature;
use crate::vehicle::{dubins_shortest, propagate_belief, step_true, DubinsPath, Pose, PoseBelief};
use crate::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "t,x_true,y_true,theta_true,x_bel,y_bel,theta_bel,cov_xx,cov_xy,cov_yy";

const STREAM_MOTION: u64 = 1;
const STREAM_SENSOR: u64 = 2;
const STREAM_PLAN_BASE: u64 = 1 << 20;
const TRAIN_SEED_MIX: u64 = 0x5EED_7A11_0000_0001;

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Queue of paths the vehicle flies in order.
#[derive(Debug, Clone, Default)]
pub struct PathQueue {
    legs: VecDeque<DubinsPath>,
    /// Arc length flown on the front leg.
    s: f64,
}

impl PathQueue {
    pub fn push(&mut self, p: DubinsPath) {
        if p.length > 0.0 {
            self.legs.push_back(p);
        }
    }

    pub fn remaining(&self) -> f64 {
        self.legs.iter().map(|l| l.length).sum::<f64>() - self.s
    }

    pub fn is_empty(&self) -> bool {
        self.legs.is_empty()
    }

    /// Pose where the last queued leg ends.
    pub fn end_pose(&self) -> Option<Pose> {
        self.legs.back().map(|l| l.pose_at(l.length))
    }

    pub fn clear(&mut self) {
        self.legs.clear();
        self.s = 0.0;
    }

    /// Constant-curvature pieces `(curvature, length)` covering the next
    /// `dist` meters, consumed from the queue.
    pub fn advance(&mut self, mut dist: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        while dist > 1e-12 {
            let Some(front) = self.legs.front() else { break };
            let pieces = front.pieces_from(self.s);
            let Some(&(kind, len)) = pieces.iter().find(|(_, l)| *l > 1e-12) else {
                self.legs.pop_front();
                self.s = 0.0;
                continue;
            };
            let take = len.min(dist);
            out.push((segment_curvature(kind, front.radius), take));
            self.s += take;
            dist -= take;
            if front.length - self.s <= 1e-12 {
                self.legs.pop_front();
                self.s = 0.0;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PlanRecord {
    pub cycle: usize,
    pub t: f64,
    pub result: PlanResult,
    pub wall_time: f64,
}

/// Everything a mission produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub budget: f64,
    pub distance: f64,
    pub t: f64,
    pub n_pings: u64,
    pub n_beams: u64,
    pub metrics: Vec<MetricSample>,
    pub plans: Vec<PlanRecord>,
    /// Ticks where the path queue ran dry before the budget was spent.
    pub empty_queue_ticks: usize,
    pub final_model: SvgpModel,
    pub output_dir: Option<PathBuf>,
}

impl RunArtifacts {
    pub fn tag_counts(&self) -> BTreeMap<PlanTag, usize> {
        let mut m = BTreeMap::new();
        for p in &self.plans {
            *m.entry(p.result.tag).or_insert(0) += 1;
        }
        m
    }
}

struct Outputs {
    dir: PathBuf,
    trajectory: BufWriter<File>,
    plans: BufWriter<File>,
    pings: Option<BufWriter<File>>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

impl Outputs {
    fn open(dir: &Path, log_pings: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut trajectory = create(&dir.join("trajectory.csv"))?;
        let mut plans = create(&dir.join("planning.csv"))?;
        let io = |p: &'static str| move |e| Error::io(dir.join(p), e);
        writeln!(trajectory, "{TRAJECTORY_HEADER}").map_err(io("trajectory.csv"))?;
        writeln!(plans, "{PLAN_LOG_HEADER}").map_err(io("planning.csv"))?;
        let pings = if log_pings {
            let mut w = create(&dir.join("pings.csv"))?;
            writeln!(w, "{PING_CSV_HEADER}").map_err(io("pings.csv"))?;
            Some(w)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            trajectory,
            plans,
            pings,
        })
    }

    fn err(&self, name: &str) -> impl Fn(std::io::Error) -> Error + '_ {
        let p = self.dir.join(name);
        move |e| Error::io(p.clone(), e)
    }
}

pub fn write_trajectory_row<W: Write>(out: &mut W, t: f64, truth: &Pose, belief: &PoseBelief) -> std::io::Result<()> {
    let c = &belief.cov;
    writeln!(
        out,
        "{:.3},{:.4},{:.4},{:.6},{:.4},{:.4},{:.6},{:.6e},{:.6e},{:.6e}",
        t, truth.x, truth.y, truth.theta, belief.mean.x, belief.mean.y, belief.mean.theta, c[(0, 0)], c[(0, 1)], c[(1, 1)]
    )
}

/// Writes a path pattern (for example the lawn-mower legs) as a trajectory
/// sampled every `ds` meters at `speed`, with true and believed pose equal.
pub fn write_pattern_csv<W: Write>(out: &mut W, legs: &[DubinsPath], speed: f64, ds: f64) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    let mut s0 = 0.0;
    for leg in legs {
        let n = (leg.length / ds).ceil() as usize;
        for i in 0..n {
            let s = (i as f64 * ds).min(leg.length);
            let pose = leg.pose_at(s);
            write_trajectory_row(out, (s0 + s) / speed, &pose, &PoseBelief::certain(pose))?;
        }
        s0 += leg.length;
    }
    if let Some(last) = legs.last() {
        let pose = last.pose_at(last.length);
        write_trajectory_row(out, s0 / speed, &pose, &PoseBelief::certain(pose))?;
    }
    Ok(())
}

/// Runs one mission. When the config names an output directory, the
/// trajectory, planning log, metric curve and final model are written there.
pub fn run_mission(cfg: &MissionConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let grid = cfg.terrain.build()?;
    run_mission_on(cfg, &grid)
}

fn mission_err(module: &'static str, cycle: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Mission {
        module,
        cycle,
        source: Box::new(e),
    }
}

/// Prior-initialized model over the grid extent.
pub fn initial_model(cfg: &MissionConfig, grid: &TerrainGrid) -> Result<SvgpModel> {
    let extent = grid.extent();
    let s = &cfg.svgp;
    let z = SvgpModel::grid_inducing(&extent, s.inducing, cfg.seed ^ 0x1D0C);
    let mut m = SvgpModel::new(z, KernelParams::new(s.signal_variance, s.lengthscale)?, s.noise_variance, 0.0)?;
    m.set_extent(extent);
    Ok(m)
}

/// Lawn-mower spec used both as the baseline pattern and to define the
/// default start pose and budget.
pub fn lawnmower_spec(cfg: &MissionConfig, grid: &TerrainGrid) -> Result<LawnmowerSpec> {
    let spec = LawnmowerSpec::for_grid(grid, &cfg.sensor, cfg.lawnmower_overlap, cfg.vehicle.turn_radius_min)?;
    spec.validate()?;
    Ok(spec)
}

/// Straight leg from `start`, shortened so it ends inside the extent.
fn initial_leg(start: Pose, length: f64, ctx: &PlanContext) -> DubinsPath {
    let rect = ctx.extent;
    let (c, s) = (start.theta.cos(), start.theta.sin());
    let mut l = length;
    while l > 1.0 && !rect.contains(start.x + l * c, start.y + l * s) {
        l *= 0.9;
    }
    dubins_shortest(start, Pose::new(start.x + l * c, start.y + l * s, start.theta), ctx.turn_radius)
}

fn tag_mix(counts: &BTreeMap<&'static str, usize>) -> String {
    counts.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";")
}

struct Pending {
    cycle: usize,
    rx: mpsc::Receiver<(PlanResult, f64)>,
    t: f64,
}

pub fn run_mission_on(cfg: &MissionConfig, grid: &TerrainGrid) -> Result<RunArtifacts> {
    cfg.validate()?;
    let run_id = format!("{}-s{}", cfg.method, cfg.seed);
    let extent = grid.extent();
    let lm = lawnmower_spec(cfg, grid)?;
    let lm_legs = lm.path();
    let budget = cfg.distance_budget.unwrap_or_else(|| total_length(&lm_legs));
    let speed = cfg.vehicle.speed;
    let dt = 1.0 / cfg.sensor.ping_rate;
    let step = speed * dt;

    let start = cfg.start.unwrap_or(lm_legs.first().map(|l| l.start).unwrap_or(Pose::new(extent.min_x, extent.min_y, 0.0)));
    let ctx_swath = swath_width(grid.mean_depth(), cfg.sensor.opening_angle)?;
    let mut ctx = PlanContext::new(extent, cfg.vehicle.turn_radius_min, ctx_swath);

    let mut motion_rng = rng_stream(cfg.seed, STREAM_MOTION);
    let mut sensor_rng = rng_stream(cfg.seed, STREAM_SENSOR);

    let mut belief = PoseBelief::new(start, cfg.vehicle.initial_cov);
    let mut truth = {
        let l = psd_sqrt3(&cfg.vehicle.initial_cov);
        let a = Vector3::new(
            StandardNormal.sample(&mut motion_rng),
            StandardNormal.sample(&mut motion_rng),
            StandardNormal.sample(&mut motion_rng),
        );
        let e = l * a;
        Pose::new(start.x + e.x, start.y + e.y, start.theta + e.z)
    };

    let mut queue = PathQueue::default();
    match cfg.method {
        Method::Lawnmower => {
            if start.distance_to(&lm_legs[0].start) > 1e-9 || (start.theta - lm_legs[0].start.theta).abs() > 1e-9 {
                queue.push(dubins_shortest(start, lm_legs[0].start, ctx.turn_radius));
            }
            for l in &lm_legs {
                queue.push(*l);
            }
        }
        Method::Ipp | Method::Myopic => queue.push(initial_leg(start, cfg.initial_leg, &ctx)),
    }

    let mut model = initial_model(cfg, grid)?;
    let mut train_cfg = cfg.svgp.train.clone();
    train_cfg.seed = cfg.seed ^ TRAIN_SEED_MIX;
    let mut trainer = Trainer::new(train_cfg)?;
    let mut buffer = TrainBuffer::new(cfg.svgp.train.buffer_capacity);
    let mut offset_set = false;

    let gt = grid.gt_pointcloud(cfg.eval_resolution)?;
    let mut out = match &cfg.output_dir {
        Some(d) => Some(Outputs::open(d, cfg.log_pings)?),
        None => None,
    };

    let mut tags: BTreeMap<&'static str, usize> = BTreeMap::new();
    if cfg.method == Method::Lawnmower {
        tags.insert(PlanTag::Lawnmower.as_str(), 1);
    }
    let mut metrics = Vec::new();
    let mut plans = Vec::new();
    let mut t = 0.0;
    let mut dist = 0.0;
    let mut tick: u64 = 0;
    let mut n_pings = 0;
    let mut empty_ticks = 0;
    let mut next_ckpt = 0.0;
    let mut cycle = 0;
    let mut pending: Option<Pending> = None;
    let wall_start = Instant::now();

    let checkpoint = |model: &SvgpModel, dist: f64, t: f64, tags: &BTreeMap<&'static str, usize>, cycle: usize| -> Result<MetricSample> {
        let snap = model.snapshot().map_err(mission_err("svgp", cycle))?;
        let rmse = consistency_rmse(&gt, &snap);
        let k = model.kernel();
        log::debug!(
            "{dist:.0} m: rmse {rmse:.4}, signal variance {:.4}, lengthscale {:.2}, noise {:.4}",
            k.signal_variance,
            k.lengthscale,
            model.noise_variance()
        );
        Ok(MetricSample {
            distance: dist,
            t,
            rmse,
            n_beams: model.n_seen(),
            tag: tag_mix(tags),
        })
    };

    if let Some(o) = out.as_mut() {
        write_trajectory_row(&mut o.trajectory, t, &truth, &belief).map_err(o.err("trajectory.csv"))?;
    }

    loop {
        while dist + 1e-9 >= next_ckpt {
            metrics.push(checkpoint(&model, dist, t, &tags, cycle)?);
            next_ckpt += cfg.checkpoint_every;
        }
        if dist >= budget - 1e-9 {
            break;
        }

        // collect a finished concurrent plan
        if let Some(p) = pending.as_ref() {
            if let Ok((result, wall)) = p.rx.try_recv() {
                let start_ok = queue.end_pose().is_some_and(|e| e.distance_to(&result.path.start) < 1e-6);
                if start_ok {
                    *tags.entry(result.tag.as_str()).or_insert(0) += 1;
                    queue.push(result.path);
                    plans.push(PlanRecord {
                        cycle: p.cycle,
                        t: p.t,
                        result,
                        wall_time: wall,
                    });
                }
                pending = None;
            }
        }

        if cfg.method != Method::Lawnmower && pending.is_none() && queue.remaining() < cfg.planner.replan_threshold {
            if offset_set {
                ctx.swath_width = swath_width((-model.mean_offset()).max(1.0), cfg.sensor.opening_angle)?;
            }
            let from = queue.end_pose().unwrap_or(belief.mean);
            let remaining = queue.remaining().max(0.0);
            let window = (remaining / speed).min(cfg.planner.time_budget);
            let snap = model.snapshot().map_err(mission_err("svgp", cycle))?;
            let mut prng = rng_stream(cfg.seed, STREAM_PLAN_BASE + cycle as u64);
            match cfg.mode {
                ClockMode::Sync => {
                    let w0 = Instant::now();
                    let clock = SimClock::new(t + cfg.min_planner_runtime);
                    let r = plan_for(cfg.method, snap, from, &ctx, cfg, &clock, t + window, &mut prng);
                    let wall = w0.elapsed().as_secs_f64();
                    *tags.entry(r.tag.as_str()).or_insert(0) += 1;
                    queue.push(r.path);
                    plans.push(PlanRecord {
                        cycle,
                        t,
                        result: r,
                        wall_time: wall,
                    });
                }
                ClockMode::Realtime => {
                    let (tx, rx) = mpsc::channel();
                    let (method, pctx, pcfg) = (cfg.method, ctx, cfg.clone());
                    let (t0, factor, min_rt) = (t, cfg.realtime_factor, cfg.min_planner_runtime);
                    thread::spawn(move || {
                        let w0 = Instant::now();
                        if min_rt > 0.0 {
                            thread::sleep(Duration::from_secs_f64(min_rt / factor));
                        }
                        let clock = WallClock::scaled(t0 + min_rt, factor);
                        let r = plan_for(method, snap, from, &pctx, &pcfg, &clock, t0 + window, &mut prng);
                        let _ = tx.send((r, w0.elapsed().as_secs_f64()));
                    });
                    pending = Some(Pending { cycle, rx, t });
                }
            }
            cycle += 1;
        }

        if queue.is_empty() {
            if cfg.method == Method::Lawnmower {
                break;
            }
            // plan did not arrive in time: keep moving on a random leg
            empty_ticks += 1;
            pending = None;
            let mut prng = rng_stream(cfg.seed, STREAM_PLAN_BASE + cycle as u64);
            let r = crate::planner::random_fallback(belief.mean, &ctx, &cfg.planner, &mut prng);
            *tags.entry(r.tag.as_str()).or_insert(0) += 1;
            queue.push(r.path);
            plans.push(PlanRecord {
                cycle,
                t,
                result: r,
                wall_time: 0.0,
            });
            cycle += 1;
        }

        // move one ping interval along the queue
        tick += 1;
        let target = (tick as f64 * step).min(budget);
        let pieces = queue.advance(target - dist);
        let mut moved = 0.0;
        for (kappa, len) in pieces {
            let sub_dt = len / speed;
            let rate = speed * kappa;
            truth = step_true(&truth, rate, sub_dt, &cfg.vehicle, &mut motion_rng).map_err(mission_err("vehicle", cycle))?;
            belief = propagate_belief(&belief, rate, sub_dt, &cfg.vehicle).map_err(mission_err("vehicle", cycle))?;
            moved += len;
        }
        if moved <= 0.0 {
            if cfg.method == Method::Lawnmower {
                break;
            }
            continue;
        }
        dist += moved;
        t += moved / speed;

        let ping = simulate_ping(t, &truth, &belief, grid, &cfg.sensor, &mut sensor_rng);
        n_pings += 1;
        if let Some(o) = out.as_mut() {
            write_trajectory_row(&mut o.trajectory, t, &truth, &belief).map_err(o.err("trajectory.csv"))?;
            if let Some(w) = o.pings.as_mut() {
                write_ping_rows(w, &ping).map_err(|e| Error::io(o.dir.join("pings.csv"), e))?;
            }
        }
        if !ping.beams.is_empty() {
            if !offset_set {
                let mean_z = ping.beams.iter().map(|b| b.pos.z).sum::<f64>() / ping.beams.len() as f64;
                model.set_mean_offset(mean_z);
                offset_set = true;
            }
            buffer.extend(ping.beams.iter().map(|b| TrainSample {
                input: [b.pos.x, b.pos.y],
                z: b.pos.z,
                omega: b.omega,
            }));
            model.observe(ping.beams.len() as u64);
        }
        let steps = trainer.steps_for_ping();
        if steps > 0 && !buffer.is_empty() {
            trainer
                .train_steps(&mut model, &buffer, steps)
                .map_err(mission_err("svgp", cycle))?;
        }

        if cfg.mode == ClockMode::Realtime {
            let ahead = t / cfg.realtime_factor - wall_start.elapsed().as_secs_f64();
            if ahead > 0.0 {
                thread::sleep(Duration::from_secs_f64(ahead));
            }
        }
    }
    if metrics.last().is_none_or(|m| m.distance < dist - 1e-9) {
        metrics.push(checkpoint(&model, dist, t, &tags, cycle)?);
    }

    if let Some(o) = out.as_mut() {
        for p in &plans {
            write_plan_row(&mut o.plans, p.cycle, p.t, &p.result, p.wall_time).map_err(o.err("planning.csv"))?;
        }
        o.trajectory.flush().map_err(o.err("trajectory.csv"))?;
        o.plans.flush().map_err(o.err("planning.csv"))?;
        if let Some(w) = o.pings.as_mut() {
            w.flush().map_err(|e| Error::io(o.dir.join("pings.csv"), e))?;
        }
        let mpath = o.dir.join("metrics.csv");
        let mut m = create(&mpath)?;
        writeln!(m, "{METRICS_HEADER}").map_err(|e| Error::io(&mpath, e))?;
        write_metrics_rows(&mut m, &run_id, cfg.method.as_str(), cfg.seed, &metrics).map_err(|e| Error::io(&mpath, e))?;
        m.flush().map_err(|e| Error::io(&mpath, e))?;
        model.save_checkpoint(o.dir.join("model.ckpt"))?;
    }

    Ok(RunArtifacts {
        run_id,
        method: cfg.method,
        seed: cfg.seed,
        budget,
        distance: dist,
        t,
        n_pings,
        n_beams: model.n_seen(),
        metrics,
        plans,
        empty_queue_ticks: empty_ticks,
        final_model: model,
        output_dir: cfg.output_dir.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn plan_for(
    method: Method,
    snap: Arc<Snapshot>,
    from: Pose,
    ctx: &PlanContext,
    cfg: &MissionConfig,
    clock: &dyn Clock,
    deadline: f64,
    rng: &mut ChaCha8Rng,
) -> PlanResult {
    match method {
        Method::Myopic => plan_myopic(snap, from, ctx, &cfg.planner, clock, deadline, rng),
        _ => plan_next(snap, from, ctx, &cfg.planner, clock, deadline, rng),
    }
}
