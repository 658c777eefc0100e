use crate::geometry::{Rect, Vec2};

/// Regular node grid: node `(i, j)` sits at `origin + (i, j) * h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec2,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn covering(domain: &Rect, h: f64) -> Self {
        let nx = ((domain.width() / h) - 1e-9).ceil() as usize + 1;
        let ny = ((domain.height() / h) - 1e-9).ceil() as usize + 1;
        Self {
            origin: Vec2::new(domain.x_min, domain.y_min),
            h,
            nx,
            ny,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(self.origin.x + i as f64 * self.h, self.origin.y + j as f64 * self.h)
    }

    pub fn nearest_node(&self, p: Vec2) -> (usize, usize) {
        let i = ((p.x - self.origin.x) / self.h).round().clamp(0.0, (self.nx - 1) as f64);
        let j = ((p.y - self.origin.y) / self.h).round().clamp(0.0, (self.ny - 1) as f64);
        (i as usize, j as usize)
    }

    /// Lower-left node of the cell holding `p` and the fractional offsets,
    /// with `p` clamped onto the grid.
    #[inline]
    pub fn locate(&self, p: Vec2) -> (usize, usize, f64, f64) {
        let gx = ((p.x - self.origin.x) / self.h).clamp(0.0, (self.nx - 1) as f64);
        let gy = ((p.y - self.origin.y) / self.h).clamp(0.0, (self.ny - 1) as f64);
        let i = (gx.floor() as usize).min(self.nx.saturating_sub(2));
        let j = (gy.floor() as usize).min(self.ny.saturating_sub(2));
        (i, j, gx - i as f64, gy - j as f64)
    }

    /// Bilinear interpolation of node values.
    #[inline]
    pub fn interpolate(&self, values: &[f64], p: Vec2) -> f64 {
        let (i, j, fx, fy) = self.locate(p);
        let k = self.index(i, j);
        let (v00, v10) = (values[k], values[k + 1]);
        let (v01, v11) = (values[k + self.nx], values[k + self.nx + 1]);
        let lower = v00 + (v10 - v00) * fx;
        let upper = v01 + (v11 - v01) * fx;
        lower + (upper - lower) * fy
    }

    /// Gradient of the bilinear interpolant.
    pub fn interpolate_gradient(&self, values: &[f64], p: Vec2) -> Vec2 {
        let (i, j, fx, fy) = self.locate(p);
        let k = self.index(i, j);
        let (v00, v10) = (values[k], values[k + 1]);
        let (v01, v11) = (values[k + self.nx], values[k + self.nx + 1]);
        let gx = ((v10 - v00) * (1.0 - fy) + (v11 - v01) * fy) / self.h;
        let gy = ((v01 - v00) * (1.0 - fx) + (v11 - v10) * fx) / self.h;
        Vec2::new(gx, gy)
    }
}
