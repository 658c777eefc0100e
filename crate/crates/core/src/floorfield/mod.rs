//! Floor fields: arrival times of a wave from each target and their
//! mollified gradient.
//!
//! The arrival times `sigma` solve `G |grad sigma| = 1` on a node grid by
//! fast marching, with `G` reduced near obstacles. Walkers use the
//! gradient of `eta * sigma`, where `eta` is a normalized bump of radius
//! `moll_radius`; the convolution is evaluated with a 21 x 21 tensor
//! Gauss-Legendre rule on the square around the bump's support.

mod fmm;
mod grid;
mod quadrature;
mod speed;

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::{ModelParams, Scenario};

pub use fmm::{march, MarchResult};
pub use grid::GridSpec;
pub use quadrature::gauss_legendre;
pub use speed::{build_speed_function, build_speed_grid, SpeedFunction, SpeedGrid, UniformSpeed, WallSlowdown};

/// Quadrature nodes per axis for the mollified gradient.
pub const MOLLIFIER_NODES: usize = 21;

/// Precomputed weights `w_k * grad eta(y_k)` of the gradient convolution.
#[derive(Debug, Clone)]
pub struct MollifierKernel {
    pub radius: f64,
    /// `1 / integral of exp(1 / (|y/R|^2 - 1))`.
    pub normalization: f64,
    offsets: Vec<Vec2>,
    weights: Vec<Vec2>,
}

impl MollifierKernel {
    pub fn new(radius: f64, nodes: usize) -> Self {
        let normalization = 1.0 / bump_integral(radius);
        let (x, w) = gauss_legendre(nodes);
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let jac = radius * radius;
        for (xa, wa) in x.iter().zip(&w) {
            for (xb, wb) in x.iter().zip(&w) {
                let y = Vec2::new(xa * radius, xb * radius);
                let g = bump_gradient(y, radius) * normalization;
                if g.x == 0.0 && g.y == 0.0 {
                    continue;
                }
                offsets.push(y);
                weights.push(g * (wa * wb * jac));
            }
        }
        Self {
            radius,
            normalization,
            offsets,
            weights,
        }
    }

    /// `sum_k W_k f(x - y_k)`, the quadrature of `integral grad eta(y) f(x - y) dy`.
    #[inline]
    pub fn apply(&self, x: Vec2, mut f: impl FnMut(Vec2) -> f64) -> Vec2 {
        let mut acc = Vec2::zeros();
        for (y, w) in self.offsets.iter().zip(&self.weights) {
            acc += w * f(x - y);
        }
        acc
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Integral of `exp(1 / (|y/R|^2 - 1))` over the disc of radius `R`, by a
/// 64-point radial Gauss-Legendre rule.
fn bump_integral(radius: f64) -> f64 {
    let (x, w) = gauss_legendre(64);
    let radial: f64 = x
        .iter()
        .zip(&w)
        .map(|(xi, wi)| {
            let s = 0.5 * (xi + 1.0);
            0.5 * wi * (1.0 / (s * s - 1.0)).exp() * s
        })
        .sum();
    2.0 * PI * radius * radius * radial
}

/// Gradient of `exp(1 / (|y/R|^2 - 1))` (unnormalized).
fn bump_gradient(y: Vec2, radius: f64) -> Vec2 {
    let q2 = y.norm_squared() / (radius * radius);
    if q2 >= 1.0 {
        return Vec2::zeros();
    }
    let d = q2 - 1.0;
    let e = (1.0 / d).exp();
    y * (-2.0 * e / (radius * radius * d * d))
}

/// Arrival-time field of one target.
#[derive(Debug, Clone)]
pub struct FloorField {
    pub target_id: u32,
    pub grid: GridSpec,
    /// Arrival times; `+inf` on blocked and unreachable nodes.
    pub sigma: Vec<f64>,
    pub traversable: Vec<bool>,
    /// Traversable nodes the front never reached.
    pub unreachable: usize,
    /// How `G` was built and the mollifier normalization.
    pub speed_fn_desc: String,
    filled: Vec<f64>,
    kernel: MollifierKernel,
}

impl FloorField {
    /// Wrap march output. Nodes without a finite value take the value of a
    /// nearest finite node, for interpolation and quadrature.
    pub fn from_march(target_id: u32, speed: &SpeedGrid, result: MarchResult, moll_radius: f64) -> Self {
        let grid = speed.grid;
        let filled = fill_nearest(&grid, &result.sigma);
        let kernel = MollifierKernel::new(moll_radius, MOLLIFIER_NODES);
        let speed_fn_desc = format!(
            "{}; mollifier R={} C={:.12e} nodes={}x{}",
            speed.description, moll_radius, kernel.normalization, MOLLIFIER_NODES, MOLLIFIER_NODES
        );
        Self {
            target_id,
            grid,
            sigma: result.sigma,
            traversable: speed.traversable.clone(),
            unreachable: result.unreachable,
            speed_fn_desc,
            filled,
            kernel,
        }
    }

    /// Interpolated arrival time (nearest finite value substituted off the
    /// walkable region).
    pub fn sigma_at(&self, x: Vec2) -> f64 {
        self.grid.interpolate(&self.filled, x)
    }

    /// Gradient of the bilinear interpolant of `sigma`.
    pub fn raw_gradient(&self, x: Vec2) -> Vec2 {
        self.grid.interpolate_gradient(&self.filled, x)
    }

    /// Smooth gradient of the mollified arrival times at `x`.
    pub fn mollified_gradient(&self, x: Vec2) -> Vec2 {
        let (i, j) = self.grid.nearest_node(x);
        if !self.traversable[self.grid.index(i, j)] && self.support_blocked(x) {
            return self.raw_gradient(x);
        }
        let grid = &self.grid;
        let values = &self.filled;
        self.kernel.apply(x, |p| grid.interpolate(values, p))
    }

    fn support_blocked(&self, x: Vec2) -> bool {
        let r = self.kernel.radius;
        let steps = (r / self.grid.h).ceil() as i64;
        let (ci, cj) = self.grid.nearest_node(x);
        for dj in -steps..=steps {
            for di in -steps..=steps {
                let (i, j) = (ci as i64 + di, cj as i64 + dj);
                if i < 0 || j < 0 || i >= self.grid.nx as i64 || j >= self.grid.ny as i64 {
                    continue;
                }
                let p = self.grid.node(i as usize, j as usize);
                if (p - x).norm() < r && self.traversable[self.grid.index(i as usize, j as usize)] {
                    return false;
                }
            }
        }
        true
    }

    pub fn kernel(&self) -> &MollifierKernel {
        &self.kernel
    }

    /// Write `x,y,sigma,gx,gy` for every node. Blocked and unreachable nodes
    /// carry `inf` for sigma.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "x,y,sigma,gx,gy")?;
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let p = self.grid.node(i, j);
                let g = self.mollified_gradient(p);
                let s = self.sigma[self.grid.index(i, j)];
                writeln!(out, "{},{},{},{},{}", p.x, p.y, s, g.x, g.y)?;
            }
        }
        Ok(())
    }
}

/// Multi-source breadth-first fill of non-finite nodes.
fn fill_nearest(grid: &GridSpec, sigma: &[f64]) -> Vec<f64> {
    let mut filled = sigma.to_vec();
    let mut done: Vec<bool> = sigma.iter().map(|s| s.is_finite()).collect();
    let mut queue: VecDeque<usize> = (0..grid.len()).filter(|&k| done[k]).collect();
    if queue.is_empty() {
        return filled;
    }
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % grid.nx, k / grid.nx);
        let mut visit = |m: usize| {
            if !done[m] {
                done[m] = true;
                filled[m] = filled[k];
                queue.push_back(m);
            }
        };
        if i > 0 {
            visit(k - 1);
        }
        if i + 1 < grid.nx {
            visit(k + 1);
        }
        if j > 0 {
            visit(k - grid.nx);
        }
        if j + 1 < grid.ny {
            visit(k + grid.nx);
        }
    }
    filled
}

/// Seeds for a target polygon: nodes inside it or on its boundary start at
/// zero, nodes within one spacing outside start at their straight-line
/// travel time. A target too small to hold a node seeds the nodes around
/// its centroid the same way.
fn target_seeds(scenario: &Scenario, target_id: u32, speed: &SpeedGrid) -> Result<Vec<(usize, f64)>> {
    let target = scenario.target(target_id)?;
    let poly = target.polygon.as_ref().ok_or_else(|| {
        Error::config(
            format!("targets[id={target_id}].polygon"),
            "fast marching needs a target polygon",
        )
    })?;
    let grid = speed.grid;
    let bb = poly.bounding_box();
    let on_edge = 1e-9 * grid.h;
    let i0 = (((bb.x_min - grid.origin.x) / grid.h).floor() - 1.0).max(0.0) as usize;
    let j0 = (((bb.y_min - grid.origin.y) / grid.h).floor() - 1.0).max(0.0) as usize;
    let i1 = ((((bb.x_max - grid.origin.x) / grid.h).ceil() + 1.0).max(0.0) as usize).min(grid.nx - 1);
    let j1 = ((((bb.y_max - grid.origin.y) / grid.h).ceil() + 1.0).max(0.0) as usize).min(grid.ny - 1);
    let mut seeds = Vec::new();
    let mut inside = 0;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let k = grid.index(i, j);
            if !speed.traversable[k] {
                continue;
            }
            let p = grid.node(i, j);
            let d = if poly.contains(p) {
                0.0
            } else {
                (poly.nearest_boundary_point(p) - p).norm()
            };
            if d <= on_edge {
                seeds.push((k, 0.0));
                inside += 1;
            } else if d <= grid.h {
                seeds.push((k, d / speed.values[k]));
            }
        }
    }
    if inside == 0 {
        seeds.clear();
        let c = poly.centroid();
        let (i, j, _, _) = grid.locate(c);
        for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let k = grid.index(i + di, j + dj);
            if speed.traversable[k] {
                let d = (grid.node(i + di, j + dj) - c).norm();
                seeds.push((k, d / speed.values[k]));
            }
        }
    }
    if seeds.is_empty() {
        return Err(Error::UnreachableTarget { target: target_id });
    }
    Ok(seeds)
}

/// Solve the eikonal equation for one target.
pub fn fast_march(scenario: &Scenario, target_id: u32, speed: &SpeedGrid, moll_radius: f64) -> Result<FloorField> {
    let seeds = target_seeds(scenario, target_id, speed)?;
    let result = march(speed, &seeds);
    Ok(FloorField::from_march(target_id, speed, result, moll_radius))
}

/// Fields for every target of a closed scenario, built in parallel.
pub fn build_fields(scenario: &Scenario, params: &ModelParams) -> Result<Vec<FloorField>> {
    let speed = build_speed_function(scenario, params);
    scenario
        .targets
        .par_iter()
        .map(|t| fast_march(scenario, t.id, &speed, params.moll_radius))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Obstacle, Polygon, Rect};
    use crate::scenario::{Boundary, Target};

    fn square_scenario(half: f64, target: Rect, obstacles: Vec<Obstacle>) -> Scenario {
        Scenario {
            name: String::new(),
            domain: Rect::new(-half, -half, half, half),
            boundary: Boundary::Closed,
            grid_h: 0.1,
            obstacles,
            targets: vec![Target {
                id: 1,
                polygon: Some(Polygon::from_rect(&target)),
                heading: None,
            }],
            sources: vec![],
        }
    }

    fn uniform(s: &Scenario) -> SpeedGrid {
        build_speed_grid(s, &UniformSpeed)
    }

    #[test]
    fn point_target_matches_euclidean_distance() {
        let s = square_scenario(5.0, Rect::new(-0.01, -0.01, 0.01, 0.01), vec![]);
        let speed = uniform(&s);
        let f = fast_march(&s, 1, &speed, 0.5).unwrap();
        let mut worst = 0.0f64;
        for j in 0..f.grid.ny {
            for i in 0..f.grid.nx {
                let p = f.grid.node(i, j);
                let err = (f.sigma[f.grid.index(i, j)] - p.norm()).abs();
                assert!(err <= 0.05 + 0.05 * p.norm(), "at {p:?}: err {err}");
                worst = worst.max(err / (0.05 + 0.05 * p.norm()));
            }
        }
        assert!(worst < 1.0);
        assert_eq!(f.unreachable, 0);
    }

    #[test]
    fn halving_speed_doubles_sigma_exactly() {
        let block = Obstacle::Polygon(Polygon::from_rect(&Rect::new(1.0, -2.0, 1.5, 2.0)));
        let s = square_scenario(3.0, Rect::new(-0.3, -0.3, 0.3, 0.3), vec![block]);
        let speed = build_speed_function(&s, &ModelParams::default());
        let a = fast_march(&s, 1, &speed, 0.5).unwrap();
        let b = fast_march(&s, 1, &speed.scaled(0.5), 0.5).unwrap();
        for (x, y) in a.sigma.iter().zip(&b.sigma) {
            if x.is_finite() {
                assert_eq!(2.0 * x, *y);
            } else {
                assert!(y.is_infinite());
            }
        }
    }

    #[test]
    fn obstacle_interior_is_infinite_and_field_goes_around() {
        let block = Obstacle::Polygon(Polygon::from_rect(&Rect::new(-0.5, -3.0, 0.5, 3.0)));
        let s = square_scenario(4.0, Rect::new(3.0, -0.5, 3.9, 0.5), vec![block]);
        let speed = build_speed_function(&s, &ModelParams::default());
        let f = fast_march(&s, 1, &speed, 0.5).unwrap();
        let (i, j) = f.grid.nearest_node(Vec2::new(0.0, 0.0));
        assert!(f.sigma[f.grid.index(i, j)].is_infinite());
        // behind the wall the arrival time exceeds the straight-line distance
        let behind = Vec2::new(-2.0, 0.0);
        assert!(f.sigma_at(behind) > (Vec2::new(3.0, 0.0) - behind).norm() + 1.0);
    }

    #[test]
    fn mollified_gradient_of_linear_field() {
        let s = square_scenario(3.0, Rect::new(-0.2, -0.2, 0.2, 0.2), vec![]);
        let speed = uniform(&s);
        let mut result = march(&speed, &[(0, 0.0)]);
        let grid = speed.grid;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                result.sigma[grid.index(i, j)] = grid.node(i, j).x;
            }
        }
        let f = FloorField::from_march(1, &speed, result, 0.5);
        for p in [Vec2::new(0.0, 0.0), Vec2::new(1.23, -0.77), Vec2::new(-2.0, 2.0)] {
            let g = f.mollified_gradient(p);
            assert!((g - Vec2::new(1.0, 0.0)).norm() <= 1e-3, "{g:?}");
        }
    }

    #[test]
    fn mollified_gradient_vanishes_at_symmetry_center() {
        let s = square_scenario(3.0, Rect::new(-0.01, -0.01, 0.01, 0.01), vec![]);
        let speed = uniform(&s);
        let mut result = march(&speed, &[(0, 0.0)]);
        let grid = speed.grid;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                result.sigma[grid.index(i, j)] = grid.node(i, j).norm_squared();
            }
        }
        let f = FloorField::from_march(1, &speed, result, 0.5);
        let g = f.mollified_gradient(Vec2::zeros());
        assert!(g.norm() <= 1e-6, "{g:?}");
    }

    #[test]
    fn mollified_gradient_is_smooth_in_position() {
        let block = Obstacle::Polygon(Polygon::from_rect(&Rect::new(-0.5, -1.0, 0.5, 1.0)));
        let s = square_scenario(4.0, Rect::new(3.0, -0.5, 3.9, 0.5), vec![block]);
        let f = build_fields(&s, &ModelParams::default()).unwrap().remove(0);
        for p in [Vec2::new(-1.0, 1.2), Vec2::new(0.0, 1.4), Vec2::new(1.0, -1.3)] {
            let a = f.mollified_gradient(p);
            let b = f.mollified_gradient(p + Vec2::new(1e-4, 0.0));
            assert!((a - b).norm() <= 1e-2, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn kernel_normalization_is_recorded() {
        let s = square_scenario(2.0, Rect::new(-0.2, -0.2, 0.2, 0.2), vec![]);
        let f = build_fields(&s, &ModelParams::default()).unwrap().remove(0);
        assert!(f.speed_fn_desc.contains("mollifier R=0.5"));
        // integral of the unnormalized bump over the unit disc
        assert!((bump_integral(1.0) - 0.466_512_393_178).abs() < 1e-9);
    }

    #[test]
    fn csv_dump_has_one_row_per_node() {
        let s = square_scenario(1.0, Rect::new(-0.2, -0.2, 0.2, 0.2), vec![]);
        let f = build_fields(&s, &ModelParams::default()).unwrap().remove(0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), f.grid.len() + 1);
        assert!(text.starts_with("x,y,sigma,gx,gy"));
    }
}
