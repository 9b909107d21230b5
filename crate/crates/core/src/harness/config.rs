//! Mission configuration: flat `key = value` files with `#` comments, with
//! environment overrides named `SURVEY_` plus the upper-cased key with dots
//! replaced by underscores (`planner.beta` becomes `SURVEY_PLANNER_BETA`).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::planner::PlannerConfig;
use crate::sensor::SensorConfig;
use crate::svgp::{Optimizer, TrainConfig};
use crate::terrain::{synth_terrain, Bump, FeatureSpec, TerrainGrid};
use crate::vehicle::{Pose, VehicleConfig};
use crate::{Error, Point2, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ipp,
    Myopic,
    Lawnmower,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ipp, Method::Myopic, Method::Lawnmower];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ipp => "ipp",
            Method::Myopic => "myopic",
            Method::Lawnmower => "lawnmower",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ipp" => Ok(Method::Ipp),
            "myopic" => Ok(Method::Myopic),
            "lawnmower" => Ok(Method::Lawnmower),
            _ => Err(format!("unknown method `{s}` (expected ipp, myopic or lawnmower)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Planning is charged fixed simulated costs; runs are bit-reproducible.
    Sync,
    /// The planner runs on a thread against the wall clock.
    Realtime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainConfig {
    /// Grid file; when set the synthetic fields below are ignored.
    pub file: Option<PathBuf>,
    pub width: f64,
    pub height: f64,
    pub cell_size: f64,
    pub base_depth: f64,
    pub noise_amplitude: f64,
    pub noise_lengthscale: f64,
    pub seed: u64,
    /// Explicit features; when empty, `n_features` random ones are drawn.
    pub bumps: Vec<Bump>,
    pub n_features: usize,
    pub feature_amplitude: f64,
    pub feature_radius: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            file: None,
            width: 200.0,
            height: 200.0,
            cell_size: 1.0,
            base_depth: 20.0,
            noise_amplitude: 0.2,
            noise_lengthscale: 8.0,
            seed: 7,
            bumps: Vec::new(),
            n_features: 3,
            feature_amplitude: 5.0,
            feature_radius: 18.0,
        }
    }
}

impl TerrainConfig {
    /// Feature set: explicit bumps, or `n_features` Gaussians with random
    /// sign, centers kept 1.5 radii inside the extent.
    pub fn feature_spec(&self) -> FeatureSpec {
        let bumps = if self.bumps.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let m = (1.5 * self.feature_radius).min(0.4 * self.width.min(self.height));
            (0..self.n_features)
                .map(|_| {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    Bump {
                        center: Point2::new(rng.random_range(m..self.width - m), rng.random_range(m..self.height - m)),
                        amplitude: sign * self.feature_amplitude * rng.random_range(0.7..1.0),
                        radius: self.feature_radius * rng.random_range(0.7..1.2),
                    }
                })
                .collect()
        } else {
            self.bumps.clone()
        };
        FeatureSpec {
            base_depth: self.base_depth,
            bumps,
            noise_amplitude: self.noise_amplitude,
            noise_lengthscale: self.noise_lengthscale,
            seed: self.seed,
        }
    }

    pub fn build(&self) -> Result<TerrainGrid> {
        if let Some(f) = &self.file {
            return TerrainGrid::load(f);
        }
        let n_cols = (self.width / self.cell_size).round() as usize + 1;
        let n_rows = (self.height / self.cell_size).round() as usize + 1;
        synth_terrain(&self.feature_spec(), Point2::origin(), self.cell_size, n_rows, n_cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgpConfig {
    pub inducing: usize,
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub noise_variance: f64,
    pub train: TrainConfig,
}

impl Default for SvgpConfig {
    fn default() -> Self {
        Self {
            inducing: 250,
            signal_variance: 1.0,
            lengthscale: 15.0,
            noise_variance: 0.05,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionConfig {
    pub method: Method,
    pub seed: u64,
    /// Total path length; `None` uses the full lawn-mower pattern length.
    pub distance_budget: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint_every: f64,
    pub eval_resolution: f64,
    pub mode: ClockMode,
    /// Simulated seconds per wall second in real-time mode.
    pub realtime_factor: f64,
    /// Straight leg flown before the first plan (m).
    pub initial_leg: f64,
    pub log_pings: bool,
    pub lawnmower_overlap: f64,
    /// Planner time spent before any optimization (s), to emulate a slow
    /// onboard computer.
    pub min_planner_runtime: f64,
    pub terrain: TerrainConfig,
    pub vehicle: VehicleConfig,
    /// Defaults to the lawn-mower entry pose.
    pub start: Option<Pose>,
    pub sensor: SensorConfig,
    pub svgp: SvgpConfig,
    pub planner: PlannerConfig,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            method: Method::Ipp,
            seed: 0,
            distance_budget: None,
            output_dir: None,
            checkpoint_every: 50.0,
            eval_resolution: 2.0,
            mode: ClockMode::Sync,
            realtime_factor: 1.0,
            initial_leg: 40.0,
            log_pings: false,
            lawnmower_overlap: 0.1,
            min_planner_runtime: 0.0,
            terrain: TerrainConfig::default(),
            vehicle: VehicleConfig::default(),
            start: None,
            sensor: SensorConfig::default(),
            svgp: SvgpConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

/// Every accepted key, in file order of the documentation.
pub const CONFIG_KEYS: &[&str] = &[
    "method",
    "seed",
    "distance_budget",
    "output_dir",
    "checkpoint_every",
    "eval_resolution",
    "mode",
    "realtime_factor",
    "initial_leg",
    "log_pings",
    "lawnmower.overlap",
    "terrain.file",
    "terrain.width",
    "terrain.height",
    "terrain.cell_size",
    "terrain.base_depth",
    "terrain.noise_amplitude",
    "terrain.noise_lengthscale",
    "terrain.seed",
    "terrain.bumps",
    "terrain.n_features",
    "terrain.feature_amplitude",
    "terrain.feature_radius",
    "vehicle.speed",
    "vehicle.turn_radius",
    "vehicle.process_noise_xy",
    "vehicle.process_noise_theta",
    "vehicle.initial_var_xy",
    "vehicle.initial_var_theta",
    "vehicle.start",
    "sensor.opening_angle_deg",
    "sensor.n_beams",
    "sensor.ping_rate",
    "sensor.noise_xy",
    "sensor.noise_z",
    "sensor.ui_floor",
    "svgp.inducing",
    "svgp.nu",
    "svgp.signal_variance",
    "svgp.lengthscale",
    "svgp.noise_variance",
    "svgp.minibatch",
    "svgp.learning_rate",
    "svgp.steps_per_ping",
    "svgp.optimizer",
    "svgp.uncertain_inputs",
    "svgp.train_hyper",
    "svgp.train_inducing",
    "svgp.min_noise_variance",
    "svgp.buffer_capacity",
    "planner.beta",
    "planner.uct_c",
    "planner.gamma",
    "planner.d_max",
    "planner.q",
    "planner.n_mc",
    "planner.horizon_radius",
    "planner.rollout_samples",
    "planner.rollout_radius",
    "planner.replan_threshold",
    "planner.time_budget",
    "planner.min_runtime",
    "planner.restarts",
    "planner.raw_samples",
    "planner.opt_iters",
    "planner.max_tree_iters",
    "planner.min_viewpoint_distance",
    "planner.path_samples",
    "planner.heading_evals",
    "planner.heading_grid",
    "planner.fantasy_spacing",
    "planner.fantasy_lanes",
    "planner.fantasy_cap",
    "planner.cost_candidates",
    "planner.cost_train",
    "planner.cost_heading",
    "planner.inject_flat_tree",
];

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("expected a {} value, got `{v}`", std::any::type_name::<T>()))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn floats(v: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let out: Vec<f64> = v.split_whitespace().map(num::<f64>).collect::<std::result::Result<_, _>>()?;
    if out.len() != n {
        return Err(format!("expected {n} numbers, got {}", out.len()));
    }
    Ok(out)
}

fn diag3(a: f64, b: f64) -> Matrix3<f64> {
    Matrix3::from_diagonal(&nalgebra::Vector3::new(a, a, b))
}

impl MissionConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let p = &mut self.planner;
        let t = &mut self.svgp.train;
        match key {
            "method" => self.method = v.parse()?,
            "seed" => self.seed = num(v)?,
            "distance_budget" => {
                self.distance_budget = match v {
                    "lawnmower" | "auto" => None,
                    _ => Some(num(v)?),
                }
            }
            "output_dir" => self.output_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "checkpoint_every" => self.checkpoint_every = num(v)?,
            "eval_resolution" => self.eval_resolution = num(v)?,
            "mode" => {
                self.mode = match v {
                    "sync" => ClockMode::Sync,
                    "realtime" => ClockMode::Realtime,
                    _ => return Err(format!("expected sync or realtime, got `{v}`")),
                }
            }
            "realtime_factor" => self.realtime_factor = num(v)?,
            "initial_leg" => self.initial_leg = num(v)?,
            "log_pings" => self.log_pings = boolean(v)?,
            "lawnmower.overlap" => self.lawnmower_overlap = num(v)?,
            "terrain.file" => self.terrain.file = (!v.is_empty()).then(|| PathBuf::from(v)),
            "terrain.width" => self.terrain.width = num(v)?,
            "terrain.height" => self.terrain.height = num(v)?,
            "terrain.cell_size" => self.terrain.cell_size = num(v)?,
            "terrain.base_depth" => self.terrain.base_depth = num(v)?,
            "terrain.noise_amplitude" => self.terrain.noise_amplitude = num(v)?,
            "terrain.noise_lengthscale" => self.terrain.noise_lengthscale = num(v)?,
            "terrain.seed" => self.terrain.seed = num(v)?,
            "terrain.bumps" => {
                // `x y amplitude radius; ...`
                self.terrain.bumps = v
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        let f = floats(s, 4)?;
                        Ok(Bump {
                            center: Point2::new(f[0], f[1]),
                            amplitude: f[2],
                            radius: f[3],
                        })
                    })
                    .collect::<std::result::Result<_, String>>()?;
            }
            "terrain.n_features" => self.terrain.n_features = num(v)?,
            "terrain.feature_amplitude" => self.terrain.feature_amplitude = num(v)?,
            "terrain.feature_radius" => self.terrain.feature_radius = num(v)?,
            "vehicle.speed" => self.vehicle.speed = num(v)?,
            "vehicle.turn_radius" => self.vehicle.turn_radius_min = num(v)?,
            "vehicle.process_noise_xy" => {
                let th = self.vehicle.process_noise[(2, 2)];
                self.vehicle.process_noise = diag3(num(v)?, th);
            }
            "vehicle.process_noise_theta" => {
                let xy = self.vehicle.process_noise[(0, 0)];
                self.vehicle.process_noise = diag3(xy, num(v)?);
            }
            "vehicle.initial_var_xy" => {
                let th = self.vehicle.initial_cov[(2, 2)];
                self.vehicle.initial_cov = diag3(num(v)?, th);
            }
            "vehicle.initial_var_theta" => {
                let xy = self.vehicle.initial_cov[(0, 0)];
                self.vehicle.initial_cov = diag3(xy, num(v)?);
            }
            "vehicle.start" => {
                // `x y heading_deg` or `auto`
                self.start = if v == "auto" {
                    None
                } else {
                    let f = floats(v, 3)?;
                    Some(Pose::new(f[0], f[1], f[2].to_radians()))
                }
            }
            "sensor.opening_angle_deg" => self.sensor.opening_angle = num::<f64>(v)?.to_radians(),
            "sensor.n_beams" => self.sensor.n_beams = num(v)?,
            "sensor.ping_rate" => self.sensor.ping_rate = num(v)?,
            "sensor.noise_xy" => {
                let q: f64 = num(v)?;
                self.sensor.noise_q.x = q;
                self.sensor.noise_q.y = q;
            }
            "sensor.noise_z" => self.sensor.noise_q.z = num(v)?,
            "sensor.ui_floor" => self.sensor.ui_floor = num(v)?,
            "svgp.inducing" => self.svgp.inducing = num(v)?,
            "svgp.nu" => {
                let nu: f64 = num(v)?;
                if nu != 2.5 {
                    return Err(format!("only nu = 2.5 is supported, got {nu}"));
                }
            }
            "svgp.signal_variance" => self.svgp.signal_variance = num(v)?,
            "svgp.lengthscale" => self.svgp.lengthscale = num(v)?,
            "svgp.noise_variance" => self.svgp.noise_variance = num(v)?,
            "svgp.minibatch" => t.minibatch = num(v)?,
            "svgp.learning_rate" => t.learning_rate = num(v)?,
            "svgp.steps_per_ping" => t.steps_per_ping = num(v)?,
            "svgp.optimizer" => {
                t.optimizer = match v {
                    "adam" => Optimizer::Adam,
                    "sgd" => Optimizer::Sgd,
                    _ => return Err(format!("expected adam or sgd, got `{v}`")),
                }
            }
            "svgp.uncertain_inputs" => t.uncertain_inputs = boolean(v)?,
            "svgp.train_hyper" => t.train_hyper = boolean(v)?,
            "svgp.train_inducing" => t.train_inducing = boolean(v)?,
            "svgp.min_noise_variance" => t.min_noise_variance = num(v)?,
            "svgp.buffer_capacity" => t.buffer_capacity = num(v)?,
            "planner.beta" => p.beta = num(v)?,
            "planner.uct_c" => p.uct_c = num(v)?,
            "planner.gamma" => p.gamma = num(v)?,
            "planner.d_max" => p.d_max = num(v)?,
            "planner.q" => p.q = num(v)?,
            "planner.n_mc" => p.n_mc_qucb = num(v)?,
            "planner.horizon_radius" => p.horizon_radius = num(v)?,
            "planner.rollout_samples" => p.rollout_samples = num(v)?,
            "planner.rollout_radius" => {
                p.rollout_radius = if v == "auto" { None } else { Some(num(v)?) };
            }
            "planner.replan_threshold" => p.replan_threshold = num(v)?,
            "planner.time_budget" => p.time_budget = num(v)?,
            "planner.min_runtime" => self.min_planner_runtime = num(v)?,
            "planner.restarts" => p.restarts = num(v)?,
            "planner.raw_samples" => p.raw_samples = num(v)?,
            "planner.opt_iters" => p.opt_iters = num(v)?,
            "planner.max_tree_iters" => p.max_tree_iters = num(v)?,
            "planner.min_viewpoint_distance" => p.min_viewpoint_distance = num(v)?,
            "planner.path_samples" => p.path_samples = num(v)?,
            "planner.heading_evals" => p.heading_evals = num(v)?,
            "planner.heading_grid" => p.heading_grid = num(v)?,
            "planner.fantasy_spacing" => p.fantasy_spacing = num(v)?,
            "planner.fantasy_lanes" => p.fantasy_lanes = num(v)?,
            "planner.fantasy_cap" => p.fantasy_cap = num(v)?,
            "planner.cost_candidates" => p.costs.candidates = num(v)?,
            "planner.cost_train" => p.costs.train = num(v)?,
            "planner.cost_heading" => p.costs.heading = num(v)?,
            "planner.inject_flat_tree" => p.inject_flat_tree = boolean(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if let Some(b) = self.distance_budget {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("distance_budget must be >= 0, got {b}"));
            }
        }
        if !(self.checkpoint_every > 0.0) {
            return bad("checkpoint_every must be > 0".into());
        }
        if !(self.eval_resolution > 0.0) {
            return bad("eval_resolution must be > 0".into());
        }
        if !(self.realtime_factor > 0.0) {
            return bad("realtime_factor must be > 0".into());
        }
        if !(self.initial_leg > 0.0) {
            return bad("initial_leg must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.lawnmower_overlap) {
            return bad("lawnmower.overlap must lie in [0, 1)".into());
        }
        if !(self.min_planner_runtime >= 0.0) {
            return bad("planner.min_runtime must be >= 0".into());
        }
        let t = &self.terrain;
        if t.file.is_none() && !(t.width > 0.0 && t.height > 0.0 && t.cell_size > 0.0) {
            return bad("terrain size and cell size must be > 0".into());
        }
        if t.file.is_none() && t.bumps.is_empty() && t.n_features > 0 && !(t.feature_radius > 0.0) {
            return bad("terrain.feature_radius must be > 0".into());
        }
        self.vehicle.validate()?;
        self.sensor.validate()?;
        let s = &self.svgp;
        if s.inducing == 0 {
            return bad("svgp.inducing must be >= 1".into());
        }
        if !(s.signal_variance > 0.0 && s.lengthscale > 0.0 && s.noise_variance > 0.0) {
            return bad("svgp kernel and noise parameters must be > 0".into());
        }
        s.train.validate()?;
        self.planner.validate(self.vehicle.turn_radius_min)?;
        Ok(())
    }

    /// Applies `key = value` lines. Errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(path, i + 1, format!("expected `key = value`, got `{line}`")));
            };
            self.set(k.trim(), v.trim()).map_err(|m| Error::parse(path, i + 1, m))?;
        }
        Ok(())
    }

    /// Applies `SURVEY_*` overrides from `vars`.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let vars: Vec<(String, String)> = vars
            .into_iter()
            .map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string()))
            .collect();
        for key in CONFIG_KEYS {
            let name = env_name(key);
            if let Some((_, v)) = vars.iter().find(|(k, _)| *k == name) {
                self.set(key, v.trim())
                    .map_err(|m| Error::InvalidConfig(format!("{name}: {m}")))?;
            }
        }
        if let Some((k, _)) = vars
            .iter()
            .find(|(k, _)| k.starts_with("SURVEY_") && !CONFIG_KEYS.iter().any(|c| env_name(c) == *k))
        {
            return Err(Error::InvalidConfig(format!("unknown override `{k}`")));
        }
        Ok(())
    }
}

pub fn env_name(key: &str) -> String {
    format!("SURVEY_{}", key.to_uppercase().replace('.', "_"))
}

/// Parses text on top of the defaults and validates.
pub fn parse_config_str(text: &str, path: &Path) -> Result<MissionConfig> {
    let mut cfg = MissionConfig::default();
    cfg.apply_text(text, path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file, applies `SURVEY_*` environment overrides and
/// validates.
pub fn parse_config(path: impl AsRef<Path>) -> Result<MissionConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = MissionConfig::default();
    cfg.apply_text(&text, path)?;
    cfg.apply_env(std::env::vars())?;
    cfg.validate()?;
    Ok(cfg)
}
