//! Map consistency RMSE against the ground truth and RMSE-versus-distance
//! curves.
//!
//! Ground-truth points are `(x, y, depth)` with depth positive down, as
//! produced by [`TerrainGrid::gt_pointcloud`](crate::terrain::TerrainGrid::gt_pointcloud).
//! Models regress `z = -depth`, so the predicted depth is the negated
//! posterior mean.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use crate::svgp::Snapshot;

pub fn consistency_rmse(gt: &[[f64; 3]], snap: &Snapshot) -> f64 {
    assert!(!gt.is_empty(), "ground truth must not be empty");
    let offset = snap.mean_offset();
    let sq: f64 = gt
        .iter()
        .map(|p| {
            let (m, _) = snap.latent([p[0], p[1]]);
            let depth = -(m + offset);
            (depth - p[2]).powi(2)
        })
        .sum();
    (sq / gt.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub distance: f64,
    pub t: f64,
    pub rmse: f64,
    pub n_beams: u64,
    /// Planner tags that produced the path so far, as `tag:count` pairs.
    pub tag: String,
}

/// Model state captured during a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub distance: f64,
    pub t: f64,
    pub n_beams: u64,
    pub tag: String,
    pub snapshot: Arc<Snapshot>,
}

pub fn rmse_curve(checkpoints: &[Checkpoint], gt: &[[f64; 3]]) -> Vec<MetricSample> {
    debug_assert!(checkpoints.windows(2).all(|w| w[0].distance <= w[1].distance));
    checkpoints
        .iter()
        .map(|c| MetricSample {
            distance: c.distance,
            t: c.t,
            rmse: consistency_rmse(gt, &c.snapshot),
            n_beams: c.n_beams,
            tag: c.tag.clone(),
        })
        .collect()
}

/// Distance at which the curve first drops to `parity` or below.
pub fn first_reach(curve: &[MetricSample], parity: f64) -> Option<f64> {
    curve.iter().find(|s| s.rmse <= parity).map(|s| s.distance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Parity {
    /// `1 - d_a / d_b`.
    Improvement(f64),
    NotReached { a: bool, b: bool },
}

impl Parity {
    pub fn value(self) -> Option<f64> {
        match self {
            Parity::Improvement(v) => Some(v),
            Parity::NotReached { .. } => None,
        }
    }
}

/// Relative distance saving of `a` over `b` at the first time each reaches
/// `parity_rmse`.
pub fn improvement_at_parity(a: &[MetricSample], b: &[MetricSample], parity_rmse: f64) -> Parity {
    match (first_reach(a, parity_rmse), first_reach(b, parity_rmse)) {
        (Some(da), Some(db)) if db > 0.0 => Parity::Improvement(1.0 - da / db),
        (Some(_), Some(_)) => Parity::Improvement(0.0),
        (ra, rb) => Parity::NotReached {
            a: ra.is_some(),
            b: rb.is_some(),
        },
    }
}

/// Terminal RMSE gap of `a` over `b`, relative to `b`'s initial RMSE.
pub fn residual_gap(a: &[MetricSample], b: &[MetricSample]) -> Option<f64> {
    let (fa, fb, ib) = (a.last()?, b.last()?, b.first()?);
    (ib.rmse > 0.0).then(|| (fa.rmse - fb.rmse) / ib.rmse)
}

/// Step interpolation: RMSE of the last sample at or before `distance`.
pub fn rmse_at(curve: &[MetricSample], distance: f64) -> Option<f64> {
    curve.iter().take_while(|s| s.distance <= distance + 1e-9).last().map(|s| s.rmse)
}

pub const METRICS_HEADER: &str = "run_id,method,seed,distance_m,t_s,rmse_m";

pub fn write_metrics_rows<W: Write>(out: &mut W, run_id: &str, method: &str, seed: u64, curve: &[MetricSample]) -> std::io::Result<()> {
    for s in curve {
        writeln!(out, "{},{},{},{:.3},{:.3},{:.6}", run_id, method, seed, s.distance, s.t, s.rmse)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub distance: f64,
    pub n_runs: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median, minimum and maximum RMSE per method on the union of checkpoint
/// distances. Runs that ended before a distance contribute their last value.
pub fn summarize(runs: &[(String, Vec<MetricSample>)]) -> Vec<SummaryRow> {
    let mut by_method: BTreeMap<&str, Vec<&[MetricSample]>> = BTreeMap::new();
    for (m, c) in runs {
        if !c.is_empty() {
            by_method.entry(m.as_str()).or_default().push(c);
        }
    }
    let mut rows = Vec::new();
    for (method, curves) in by_method {
        let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.iter().map(|s| s.distance)).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        for d in grid {
            let mut vals: Vec<f64> = curves.iter().filter_map(|c| rmse_at(c, d)).collect();
            if vals.is_empty() {
                continue;
            }
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            rows.push(SummaryRow {
                method: method.to_string(),
                distance: d,
                n_runs: vals.len(),
                median: median(&mut vals),
                min,
                max,
            });
        }
    }
    rows
}

pub const SUMMARY_HEADER: &str = "method,distance_m,n_runs,rmse_median_m,rmse_min_m,rmse_max_m";

pub fn write_summary_rows<W: Write>(out: &mut W, rows: &[SummaryRow]) -> std::io::Result<()> {
    for r in rows {
        writeln!(out, "{},{:.3},{},{:.6},{:.6},{:.6}", r.method, r.distance, r.n_runs, r.median, r.min, r.max)?;
    }
    Ok(())
}
