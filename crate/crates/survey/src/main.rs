//! `survey`: run missions, suites and map exports from config files.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use survey_core::harness::{export_maps, parse_config, run_mission, run_suite, Method, MissionConfig};
use survey_core::svgp::SvgpModel;
use survey_core::Rect;

#[derive(Parser, Debug)]
#[command(name = "survey", version, about = "Informative path planning for simulated AUV bathymetric surveys")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one mission.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run each method over consecutive seeds and aggregate the curves.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: usize,
        /// Comma-separated subset of ipp,myopic,lawnmower.
        #[arg(long, default_value = "ipp,myopic,lawnmower", value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write posterior mean and std images from a model checkpoint.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pixel size in meters.
        #[arg(long)]
        res: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &PathBuf) -> Result<MissionConfig> {
    parse_config(config).with_context(|| format!("loading {}", config.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Run { config, seed, method, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = method {
                cfg.method = m;
            }
            if out.is_some() {
                cfg.output_dir = out;
            }
            if cfg.output_dir.is_none() {
                cfg.output_dir = Some(PathBuf::from(format!("runs/{}-s{}", cfg.method, cfg.seed)));
            }
            let a = run_mission(&cfg)?;
            let last = a.metrics.last().map(|m| m.rmse).unwrap_or(f64::NAN);
            println!(
                "{}: {:.1} m in {:.1} s, {} pings, {} plans, final rmse {:.4} m -> {}",
                a.run_id,
                a.distance,
                a.t,
                a.n_pings,
                a.plans.len(),
                last,
                cfg.output_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            );
        }
        Cmd::Suite { config, seeds, methods, out } => {
            let base = load(&config)?;
            if methods.is_empty() {
                bail!("no methods selected");
            }
            let configs: Vec<MissionConfig> = methods
                .iter()
                .map(|&m| MissionConfig {
                    method: m,
                    ..base.clone()
                })
                .collect();
            let out = out.or(base.output_dir.clone()).unwrap_or_else(|| PathBuf::from("suite"));
            let report = run_suite(&configs, seeds, Some(&out))?;
            for r in report.runs.iter().filter(|r| r.error.is_some()) {
                eprintln!("{} failed: {}", r.run_id, r.error.as_deref().unwrap_or(""));
            }
            for c in &report.comparisons {
                println!(
                    "{} vs {}: parity {:.4} m, improvement {}",
                    c.method,
                    c.reference,
                    c.parity_rmse,
                    c.improvement.value().map(|v| format!("{:.1}%", 100.0 * v)).unwrap_or_else(|| "not reached".into())
                );
            }
            println!("results in {}", out.display());
        }
        Cmd::Export { checkpoint, res, out } => {
            let model = SvgpModel::load_checkpoint(&checkpoint)?;
            let extent = model.extent().unwrap_or_else(|| {
                let z = model.inducing();
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for p in z {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
                Rect::new(lo[0], lo[1], hi[0], hi[1])
            });
            let snap = model.snapshot()?;
            let dir = out.unwrap_or_else(|| checkpoint.parent().map(|p| p.to_path_buf()).unwrap_or_default());
            let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            let e = export_maps(&snap, &extent, res, &dir, stem)?;
            println!("{} x {} -> {}, {}", e.width, e.height, e.mean_path.display(), e.std_path.display());
        }
    }
    Ok(())
}
