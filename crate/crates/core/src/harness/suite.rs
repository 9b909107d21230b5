//! Method-by-seed experiment suites with aggregated curves and
//! distance-at-parity comparisons.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::{Method, MissionConfig};
use super::mission::run_mission_on;
use crate::eval::{first_reach, median, summarize, write_metrics_rows, write_summary_rows, MetricSample, Parity, SummaryRow, METRICS_HEADER, SUMMARY_HEADER};
use crate::{Error, Result};

/// Parity level relative to the reference method's terminal RMSE.
pub const PARITY_FACTOR: f64 = 1.05;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub distance: f64,
    pub curve: Vec<MetricSample>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub method: Method,
    pub reference: Method,
    pub parity_rmse: f64,
    /// Median over seeds of the distance at which each method first reaches
    /// the parity RMSE; `None` when the median run never does.
    pub median_reach: Option<f64>,
    pub median_reach_reference: Option<f64>,
    /// Median total distance flown by the reference.
    pub median_total_reference: f64,
    pub improvement: Parity,
}

impl Comparison {
    /// Median distance to parity as a fraction of the reference's full run.
    pub fn fraction_of_reference_total(&self) -> Option<f64> {
        self.median_reach.map(|d| d / self.median_total_reference)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
    pub comparisons: Vec<Comparison>,
}

impl SuiteReport {
    pub fn curves(&self, method: Method) -> Vec<&[MetricSample]> {
        self.runs
            .iter()
            .filter(|r| r.method == method && r.error.is_none())
            .map(|r| r.curve.as_slice())
            .collect()
    }

    pub fn comparison(&self, method: Method, reference: Method) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.method == method && c.reference == reference)
    }

    /// Median terminal RMSE of a method's successful runs.
    pub fn median_terminal(&self, method: Method) -> Option<f64> {
        let mut v: Vec<f64> = self.curves(method).iter().filter_map(|c| c.last().map(|s| s.rmse)).collect();
        (!v.is_empty()).then(|| median(&mut v))
    }
}

/// Median with unreached runs counted as infinitely far.
fn median_reach(curves: &[&[MetricSample]], parity: f64) -> Option<f64> {
    if curves.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = curves.iter().map(|c| first_reach(c, parity).unwrap_or(f64::INFINITY)).collect();
    let m = median(&mut d);
    m.is_finite().then_some(m)
}

fn compare(report: &SuiteReport, method: Method, reference: Method) -> Option<Comparison> {
    let a = report.curves(method);
    let b = report.curves(reference);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let parity = PARITY_FACTOR * report.median_terminal(reference)?;
    let ra = median_reach(&a, parity);
    let rb = median_reach(&b, parity);
    let mut totals: Vec<f64> = b.iter().filter_map(|c| c.last().map(|s| s.distance)).collect();
    let improvement = match (ra, rb) {
        (Some(x), Some(y)) if y > 0.0 => Parity::Improvement(1.0 - x / y),
        (Some(_), Some(_)) => Parity::Improvement(0.0),
        _ => Parity::NotReached {
            a: ra.is_some(),
            b: rb.is_some(),
        },
    };
    Some(Comparison {
        method,
        reference,
        parity_rmse: parity,
        median_reach: ra,
        median_reach_reference: rb,
        median_total_reference: median(&mut totals),
        improvement,
    })
}

pub const COMPARISON_HEADER: &str = "method,reference,parity_rmse_m,median_reach_m,median_reach_reference_m,median_total_reference_m,improvement";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "not_reached".into())
}

/// Runs every config for `n_seeds` consecutive seeds starting at its own
/// seed. Failed runs are recorded and the suite continues. With `out_dir`,
/// each run writes its own directory and the suite writes `metrics.csv`,
/// `summary.csv` and `comparison.csv`.
pub fn run_suite(configs: &[MissionConfig], n_seeds: usize, out_dir: Option<&Path>) -> Result<SuiteReport> {
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("suite needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for base in configs {
        let grid = match base.validate().and_then(|_| base.terrain.build()) {
            Ok(g) => g,
            Err(e) => {
                for k in 0..n_seeds as u64 {
                    runs.push(RunOutcome {
                        run_id: format!("{}-s{}", base.method, base.seed + k),
                        method: base.method,
                        seed: base.seed + k,
                        distance: 0.0,
                        curve: Vec::new(),
                        error: Some(e.to_string()),
                    });
                }
                continue;
            }
        };
        for k in 0..n_seeds as u64 {
            let mut cfg = base.clone();
            cfg.seed = base.seed + k;
            let run_id = format!("{}-s{}", cfg.method, cfg.seed);
            cfg.output_dir = out_dir.map(|d| d.join(&run_id));
            log::info!("suite: starting {run_id}");
            match run_mission_on(&cfg, &grid) {
                Ok(a) => runs.push(RunOutcome {
                    run_id,
                    method: cfg.method,
                    seed: cfg.seed,
                    distance: a.distance,
                    curve: a.metrics,
                    error: None,
                }),
                Err(e) => {
                    log::warn!("suite: {run_id} failed: {e}");
                    runs.push(RunOutcome {
                        run_id,
                        method: cfg.method,
                        seed: cfg.seed,
                        distance: 0.0,
                        curve: Vec::new(),
                        error: Some(e.to_string()),
                    })
                }
            }
        }
    }
    let summary = summarize(
        &runs
            .iter()
            .filter(|r| r.error.is_none())
            .map(|r| (r.method.as_str().to_string(), r.curve.clone()))
            .collect::<Vec<_>>(),
    );
    let mut report = SuiteReport {
        runs,
        summary,
        comparisons: Vec::new(),
    };
    for (a, b) in [(Method::Ipp, Method::Lawnmower), (Method::Ipp, Method::Myopic), (Method::Myopic, Method::Lawnmower)] {
        if let Some(c) = compare(&report, a, b) {
            report.comparisons.push(c);
        }
    }
    if let Some(dir) = out_dir {
        write_suite_files(&report, dir)?;
    }
    Ok(report)
}

fn write_suite_files(report: &SuiteReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(name);
        let mut buf = Vec::new();
        body(&mut buf).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))
    };
    write("metrics.csv", &|w| {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in report.runs.iter().filter(|r| r.error.is_none()) {
            write_metrics_rows(w, &r.run_id, r.method.as_str(), r.seed, &r.curve)?;
        }
        Ok(())
    })?;
    write("summary.csv", &|w| {
        writeln!(w, "{SUMMARY_HEADER}")?;
        write_summary_rows(w, &report.summary)
    })?;
    write("comparison.csv", &|w| {
        writeln!(w, "{COMPARISON_HEADER}")?;
        for c in &report.comparisons {
            let imp = c.improvement.value().map(|v| format!("{v:.4}")).unwrap_or_else(|| "not_reached".into());
            writeln!(
                w,
                "{},{},{:.6},{},{},{:.3},{}",
                c.method,
                c.reference,
                c.parity_rmse,
                opt(c.median_reach),
                opt(c.median_reach_reference),
                c.median_total_reference,
                imp
            )?;
        }
        Ok(())
    })?;
    write("failures.csv", &|w| {
        writeln!(w, "run_id,error")?;
        for r in report.runs.iter().filter(|r| r.error.is_some()) {
            writeln!(w, "{},\"{}\"", r.run_id, r.error.as_deref().unwrap_or("").replace('"', "'"))?;
        }
        Ok(())
    })
}
