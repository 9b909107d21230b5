//! Mission runner: wires terrain, vehicle, sensor, trainer, planners and the
//! evaluator into seeded receding-horizon surveys, plus suites and map export.

pub mod config;
pub mod maps;
pub mod mission;
pub mod suite;

pub use config::{parse_config, parse_config_str, ClockMode, Method, MissionConfig, SvgpConfig, TerrainConfig, CONFIG_KEYS};
pub use maps::{export_maps, posterior_rasters, MapExport, Raster};
pub use mission::{initial_model, lawnmower_spec, run_mission, run_mission_on, write_pattern_csv, PathQueue, PlanRecord, RunArtifacts, TRAJECTORY_HEADER};
pub use suite::{run_suite, Comparison, RunOutcome, SuiteReport, PARITY_FACTOR};
