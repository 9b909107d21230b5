//! Posterior mean and standard-deviation rasters as binary PGM images.

use std::fs;
use std::path::{Path, PathBuf};

use crate::svgp::Snapshot;
use crate::{Error, Rect, Result};

/// A row-major, north-up raster: row 0 holds the largest `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// 8-bit min-max normalization; a constant raster maps to zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }
}

/// Pixel centers over `extent` at `resolution`, with dimensions rounded up.
pub fn raster_dims(extent: &Rect, resolution: f64) -> (usize, usize) {
    let w = (extent.width() / resolution - 1e-9).ceil().max(1.0) as usize;
    let h = (extent.height() / resolution - 1e-9).ceil().max(1.0) as usize;
    (w, h)
}

/// Predicted depth (positive down) and latent standard deviation rasters.
pub fn posterior_rasters(snap: &Snapshot, extent: &Rect, resolution: f64) -> Result<(Raster, Raster)> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidConfig("map resolution must be > 0".into()));
    }
    let (w, h) = raster_dims(extent, resolution);
    let mut depth = Vec::with_capacity(w * h);
    let mut std = Vec::with_capacity(w * h);
    for row in 0..h {
        let y = extent.max_y - (row as f64 + 0.5) * resolution;
        for col in 0..w {
            let x = extent.min_x + (col as f64 + 0.5) * resolution;
            let (m, s) = snap.latent([x, y]);
            depth.push(-(m + snap.mean_offset()));
            std.push(s);
        }
    }
    Ok((
        Raster {
            width: w,
            height: h,
            values: depth,
        },
        Raster {
            width: w,
            height: h,
            values: std,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapExport {
    pub mean_path: PathBuf,
    pub std_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub width: usize,
    pub height: usize,
}

/// Writes `<prefix>_mean.pgm`, `<prefix>_std.pgm` and `<prefix>_maps.txt`,
/// the last recording each image's value range.
pub fn export_maps(snap: &Snapshot, extent: &Rect, resolution: f64, dir: &Path, prefix: &str) -> Result<MapExport> {
    let (mean, std) = posterior_rasters(snap, extent, resolution)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mean_path = dir.join(format!("{prefix}_mean.pgm"));
    let std_path = dir.join(format!("{prefix}_std.pgm"));
    let sidecar_path = dir.join(format!("{prefix}_maps.txt"));
    fs::write(&mean_path, mean.to_pgm()).map_err(|e| Error::io(&mean_path, e))?;
    fs::write(&std_path, std.to_pgm()).map_err(|e| Error::io(&std_path, e))?;
    let (m0, m1) = mean.min_max();
    let (s0, s1) = std.min_max();
    let text = format!(
        "# pixel = round(255 * (value - min) / (max - min)), row 0 north\n\
         resolution {resolution}\n\
         extent {} {} {} {}\n\
         size {} {}\n\
         mean_depth_m {m0} {m1}\n\
         std_m {s0} {s1}\n",
        extent.min_x, extent.min_y, extent.max_x, extent.max_y, mean.width, mean.height
    );
    fs::write(&sidecar_path, text).map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(MapExport {
        mean_path,
        std_path,
        sidecar_path,
        width: mean.width,
        height: mean.height,
    })
}
