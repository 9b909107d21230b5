//! Ground-truth seabed: a regular depth grid with bilinear interpolation,
//! a procedural generator and a plain-text file format.
//!
//! Depths are stored positive-down. Node `(r, c)` sits at
//! `(origin_x + c * cell_size, origin_y + r * cell_size)`, so row 0 is the
//! southern edge and the extent spans the outermost nodes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::geometry::{Point2, Rect};
use crate::{Error, Result};

pub const GRID_MAGIC: &str = "BGRID v1";

/// A Gaussian shoal (negative amplitude) or hole (positive amplitude).
#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub center: Point2,
    pub amplitude: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub base_depth: f64,
    pub bumps: Vec<Bump>,
    pub noise_amplitude: f64,
    pub noise_lengthscale: f64,
    pub seed: u64,
}

impl FeatureSpec {
    pub fn flat(base_depth: f64) -> Self {
        Self {
            base_depth,
            bumps: Vec::new(),
            noise_amplitude: 0.0,
            noise_lengthscale: 10.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_depth.is_finite() && self.base_depth > 0.0) {
            return Err(Error::Terrain(format!(
                "base depth must be positive, got {}",
                self.base_depth
            )));
        }
        for (i, b) in self.bumps.iter().enumerate() {
            if !(b.radius > 0.0) {
                return Err(Error::Terrain(format!("bump {i} has non-positive radius")));
            }
        }
        if self.noise_amplitude < 0.0 {
            return Err(Error::Terrain("noise amplitude must be >= 0".into()));
        }
        if self.noise_amplitude > 0.0 && !(self.noise_lengthscale > 0.0) {
            return Err(Error::Terrain("noise lengthscale must be > 0".into()));
        }
        Ok(())
    }

    /// Depth at a point, without the value-noise term.
    pub fn features_at(&self, p: Point2) -> f64 {
        self.base_depth
            + self
                .bumps
                .iter()
                .map(|b| {
                    let d2 = (p - b.center).norm_squared();
                    b.amplitude * (-d2 / (2.0 * b.radius * b.radius)).exp()
                })
                .sum::<f64>()
    }

    pub fn noise_at(&self, p: Point2) -> f64 {
        if self.noise_amplitude == 0.0 {
            return 0.0;
        }
        self.noise_amplitude * value_noise(p.x / self.noise_lengthscale, p.y / self.noise_lengthscale, self.seed)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lattice value in [-1, 1], a pure function of the lattice coordinates and seed.
fn lattice_value(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((ix as u64).wrapping_mul(0x1F1F_1F1F) ^ splitmix64(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn cosine_blend(t: f64) -> f64 {
    0.5 * (1.0 - (std::f64::consts::PI * t).cos())
}

/// Value noise: random lattice values blended with cosine smoothing.
pub fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (cosine_blend(x - x0), cosine_blend(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice_value(ix, iy, seed);
    let v10 = lattice_value(ix + 1, iy, seed);
    let v01 = lattice_value(ix, iy + 1, seed);
    let v11 = lattice_value(ix + 1, iy + 1, seed);
    let a = v00 + (v10 - v00) * tx;
    let b = v01 + (v11 - v01) * tx;
    a + (b - a) * ty
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainGrid {
    origin: Point2,
    cell_size: f64,
    n_rows: usize,
    n_cols: usize,
    depth: Vec<f64>,
}

impl TerrainGrid {
    pub fn new(origin: Point2, cell_size: f64, n_rows: usize, n_cols: usize, depth: Vec<f64>) -> Result<Self> {
        if n_rows < 2 || n_cols < 2 {
            return Err(Error::Terrain(format!(
                "grid needs at least 2x2 nodes, got {n_rows}x{n_cols}"
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::Terrain(format!("cell size must be positive, got {cell_size}")));
        }
        if depth.len() != n_rows * n_cols {
            return Err(Error::Terrain(format!(
                "expected {} depth values, got {}",
                n_rows * n_cols,
                depth.len()
            )));
        }
        if let Some(i) = depth.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Terrain(format!(
                "non-positive or non-finite depth {} at row {}, col {}",
                depth[i],
                i / n_cols,
                i % n_cols
            )));
        }
        Ok(Self {
            origin,
            cell_size,
            n_rows,
            n_cols,
            depth,
        })
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn node(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.n_cols + col]
    }

    pub fn node_position(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin.x + col as f64 * self.cell_size,
            self.origin.y + row as f64 * self.cell_size,
        )
    }

    /// Rectangle spanned by the outermost nodes.
    pub fn extent(&self) -> Rect {
        Rect::new(
            self.origin.x,
            self.origin.y,
            self.origin.x + (self.n_cols - 1) as f64 * self.cell_size,
            self.origin.y + (self.n_rows - 1) as f64 * self.cell_size,
        )
    }

    /// Surveyed area counting one cell per node.
    pub fn area_hectares(&self) -> f64 {
        (self.n_rows * self.n_cols) as f64 * self.cell_size * self.cell_size / 1e4
    }

    pub fn max_depth(&self) -> f64 {
        self.depth.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn mean_depth(&self) -> f64 {
        self.depth.iter().sum::<f64>() / self.depth.len() as f64
    }

    /// Largest absolute difference between horizontally or vertically adjacent
    /// nodes divided by the cell size.
    pub fn lipschitz_bound(&self) -> f64 {
        let mut best = 0.0f64;
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                let d = self.node(r, c);
                if c + 1 < self.n_cols {
                    best = best.max((self.node(r, c + 1) - d).abs());
                }
                if r + 1 < self.n_rows {
                    best = best.max((self.node(r + 1, c) - d).abs());
                }
            }
        }
        best / self.cell_size
    }

    /// Bilinear interpolation of the four surrounding nodes.
    pub fn depth_at(&self, x: f64, y: f64) -> Result<f64> {
        if !self.extent().contains(x, y) {
            return Err(Error::OutOfExtent { x, y });
        }
        Ok(self.interpolate(x, y))
    }

    /// Like [`depth_at`](Self::depth_at) but clamps the query to the extent.
    pub fn depth_at_clamped(&self, x: f64, y: f64) -> f64 {
        let p = self.extent().clamp(Point2::new(x, y));
        self.interpolate(p.x, p.y)
    }

    fn interpolate(&self, x: f64, y: f64) -> f64 {
        let fx = (x - self.origin.x) / self.cell_size;
        let fy = (y - self.origin.y) / self.cell_size;
        let c0 = (fx.floor() as usize).min(self.n_cols - 2);
        let r0 = (fy.floor() as usize).min(self.n_rows - 2);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let d00 = self.node(r0, c0);
        let d01 = self.node(r0, c0 + 1);
        let d10 = self.node(r0 + 1, c0);
        let d11 = self.node(r0 + 1, c0 + 1);
        let bottom = d00 + (d01 - d00) * tx;
        let top = d10 + (d11 - d10) * tx;
        bottom + (top - bottom) * ty
    }

    /// Samples `(x, y, depth)` on a regular lattice over the extent, row-major
    /// (south to north, west to east).
    pub fn gt_pointcloud(&self, resolution: f64) -> Result<Vec<[f64; 3]>> {
        if !(resolution >= self.cell_size / 4.0) {
            return Err(Error::InvalidConfig(format!(
                "point-cloud resolution {resolution} finer than cell_size/4"
            )));
        }
        let ext = self.extent();
        let nx = (ext.width() / resolution + 1.0 + 1e-9).floor() as usize;
        let ny = (ext.height() / resolution + 1.0 + 1e-9).floor() as usize;
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = (ext.min_y + j as f64 * resolution).min(ext.max_y);
            for i in 0..nx {
                let x = (ext.min_x + i as f64 * resolution).min(ext.max_x);
                out.push([x, y, self.interpolate(x, y)]);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.depth.len() * 8 + 64);
        s.push_str(GRID_MAGIC);
        s.push('\n');
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            self.origin.x, self.origin.y, self.cell_size, self.n_rows, self.n_cols
        );
        for r in 0..self.n_rows {
            let row = &self.depth[r * self.n_cols..(r + 1) * self.n_cols];
            for (c, d) in row.iter().enumerate() {
                if c > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{d}");
            }
            s.push('\n');
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim() == GRID_MAGIC => {}
            Some((n, l)) => return Err(Error::parse(path, n, format!("expected `{GRID_MAGIC}`, found `{}`", l.trim()))),
            None => return Err(Error::parse(path, 1, "empty file")),
        }
        let (hn, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 2, "missing header line"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                hn,
                format!("header needs 5 fields (origin_x origin_y cell_size n_rows n_cols), found {}", fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(path, hn, format!("bad number `{}`", fields[i])))
        };
        let count = |i: usize| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|_| Error::parse(path, hn, format!("bad count `{}`", fields[i])))
        };
        let (ox, oy, cell) = (num(0)?, num(1)?, num(2)?);
        let (n_rows, n_cols) = (count(3)?, count(4)?);
        let mut depth = Vec::with_capacity(n_rows * n_cols);
        let mut rows_seen = 0;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if rows_seen == n_rows {
                return Err(Error::parse(path, n, format!("more than the {n_rows} declared rows")));
            }
            let before = depth.len();
            for tok in line.split_whitespace() {
                let d: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, n, format!("bad depth `{tok}`")))?;
                if !d.is_finite() {
                    return Err(Error::parse(path, n, format!("non-finite depth `{tok}`")));
                }
                depth.push(d);
            }
            if depth.len() - before != n_cols {
                return Err(Error::parse(
                    path,
                    n,
                    format!("row has {} values, header declares {n_cols}", depth.len() - before),
                ));
            }
            rows_seen += 1;
        }
        if rows_seen != n_rows {
            return Err(Error::parse(
                path,
                hn,
                format!("header declares {n_rows} rows, file has {rows_seen}"),
            ));
        }
        Self::new(Point2::new(ox, oy), cell, n_rows, n_cols, depth)
            .map_err(|e| Error::parse(path, hn, e.to_string()))
    }
}

/// Evaluates the feature spec on every grid node.
pub fn synth_terrain(spec: &FeatureSpec, origin: Point2, cell_size: f64, n_rows: usize, n_cols: usize) -> Result<TerrainGrid> {
    spec.validate()?;
    let mut depth = Vec::with_capacity(n_rows * n_cols);
    for r in 0..n_rows {
        for c in 0..n_cols {
            let p = Point2::new(origin.x + c as f64 * cell_size, origin.y + r as f64 * cell_size);
            let d = spec.features_at(p) + spec.noise_at(p);
            if !(d > 0.0) {
                return Err(Error::Terrain(format!(
                    "synthesized depth {d:.3} m is not positive at ({:.1}, {:.1})",
                    p.x, p.y
                )));
            }
            depth.push(d);
        }
    }
    TerrainGrid::new(origin, cell_size, n_rows, n_cols, depth)
}
