//! Viewpoint search regions: an annulus around a center clipped to a
//! rectangle.

use rand::Rng;

use crate::Rect;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub center: [f64; 2],
    pub r_max: f64,
    pub r_min: f64,
    pub rect: Rect,
}

const MAX_REJECTIONS: usize = 2000;

impl Region {
    pub fn disc(center: [f64; 2], r_max: f64, r_min: f64, rect: Rect) -> Self {
        assert!(r_max > 0.0 && r_min >= 0.0 && r_min < r_max);
        Self {
            center,
            r_max,
            r_min,
            rect,
        }
    }

    fn radius_of(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let r = self.radius_of(p);
        self.rect.contains(p[0], p[1]) && r <= self.r_max + 1e-9 && r >= self.r_min - 1e-9
    }

    /// Length scale used for optimizer step sizes.
    pub fn scale(&self) -> f64 {
        self.r_max.min(self.rect.width().max(self.rect.height())).max(1e-6)
    }

    /// Nearby point of the region: rectangle clamp, radial clamp, rectangle
    /// clamp. The rectangle always wins.
    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        let clamp_rect = |q: [f64; 2]| {
            [
                q[0].clamp(self.rect.min_x, self.rect.max_x),
                q[1].clamp(self.rect.min_y, self.rect.max_y),
            ]
        };
        let mut q = clamp_rect(p);
        let r = self.radius_of(q);
        if r > self.r_max || (r < self.r_min && r > 0.0) {
            let target = r.clamp(self.r_min, self.r_max);
            let f = target / r;
            q = [
                self.center[0] + (q[0] - self.center[0]) * f,
                self.center[1] + (q[1] - self.center[1]) * f,
            ];
        }
        clamp_rect(q)
    }

    /// Maps the unit square onto the annulus with uniform area density.
    pub fn from_unit(&self, u: f64, v: f64) -> [f64; 2] {
        let r2 = self.r_min * self.r_min + u * (self.r_max * self.r_max - self.r_min * self.r_min);
        let phi = 2.0 * std::f64::consts::PI * v;
        let r = r2.sqrt();
        [self.center[0] + r * phi.cos(), self.center[1] + r * phi.sin()]
    }

    /// Uniform draw by rejection; falls back to projecting a draw when the
    /// region is empty or tiny.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let mut last = self.center;
        for _ in 0..MAX_REJECTIONS {
            let p = self.from_unit(rng.random(), rng.random());
            if self.contains(p) {
                return p;
            }
            last = p;
        }
        self.project(last)
    }
}
