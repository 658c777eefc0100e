//! Speed functions `G` for the eikonal solve.

use crate::geometry::{Obstacle, Vec2};
use crate::scenario::{ModelParams, Scenario};
use crate::smoothmath::BumpParams;

use super::grid::GridSpec;

/// Maps the distance to the nearest obstacle onto a wave speed in `(0, 1]`.
pub trait SpeedFunction: Send + Sync {
    fn speed(&self, obstacle_distance: f64) -> f64;
    fn describe(&self) -> String;
}

/// `G = 1 / (1 + h(d; p_B, R_B))`: the front slows down near walls, with
/// the same profile as the obstacle repulsion.
#[derive(Debug, Clone, Copy)]
pub struct WallSlowdown {
    pub bump: BumpParams,
}

impl SpeedFunction for WallSlowdown {
    fn speed(&self, d: f64) -> f64 {
        1.0 / (1.0 + self.bump.value(d))
    }

    fn describe(&self) -> String {
        format!("wall-slowdown(R_B={}, p_B={})", self.bump.radius, self.bump.height)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformSpeed;

impl SpeedFunction for UniformSpeed {
    fn speed(&self, _d: f64) -> f64 {
        1.0
    }

    fn describe(&self) -> String {
        "uniform".into()
    }
}

/// `G` sampled on the grid nodes, plus the traversability mask.
#[derive(Debug, Clone)]
pub struct SpeedGrid {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub traversable: Vec<bool>,
    pub description: String,
}

impl SpeedGrid {
    /// Same mask, every speed multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> SpeedGrid {
        SpeedGrid {
            grid: self.grid,
            values: self.values.iter().map(|g| g * factor).collect(),
            traversable: self.traversable.clone(),
            description: format!("{} x {factor}", self.description),
        }
    }
}

/// Nodes closer than this fraction of the spacing to an obstacle are
/// blocked, so no grid edge crosses a wall segment.
const BLOCK_FRACTION: f64 = 0.5;

pub fn build_speed_function(scenario: &Scenario, params: &ModelParams) -> SpeedGrid {
    build_speed_grid(
        scenario,
        &WallSlowdown {
            bump: params.obstacle_bump(),
        },
    )
}

pub fn build_speed_grid(scenario: &Scenario, speed: &dyn SpeedFunction) -> SpeedGrid {
    let grid = GridSpec::covering(&scenario.domain, scenario.grid_h);
    let block = BLOCK_FRACTION * grid.h;
    let boxes: Vec<_> = scenario.obstacles.iter().map(Obstacle::bounding_box).collect();
    let mut values = vec![1.0; grid.len()];
    let mut traversable = vec![true; grid.len()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let p: Vec2 = grid.node(i, j);
            let mut d = f64::INFINITY;
            for (o, b) in scenario.obstacles.iter().zip(&boxes) {
                // cheap reject: bounding box farther than the current best
                let dx = (b.x_min - p.x).max(p.x - b.x_max).max(0.0);
                let dy = (b.y_min - p.y).max(p.y - b.y_max).max(0.0);
                if dx.hypot(dy) >= d {
                    continue;
                }
                d = d.min(o.distance(p));
            }
            let k = grid.index(i, j);
            if d < block {
                traversable[k] = false;
            }
            values[k] = speed.speed(d);
        }
    }
    SpeedGrid {
        grid,
        values,
        traversable,
        description: speed.describe(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rect, Segment};
    use crate::scenario::{Boundary, Target};
    use std::f64::consts::E;

    fn open_scenario(obstacles: Vec<Obstacle>) -> Scenario {
        Scenario {
            name: String::new(),
            domain: Rect::new(0.0, 0.0, 4.0, 4.0),
            boundary: Boundary::Closed,
            grid_h: 0.1,
            obstacles,
            targets: vec![Target {
                id: 1,
                polygon: Some(crate::geometry::Polygon::from_rect(&Rect::new(0.0, 0.0, 0.5, 0.5))),
                heading: None,
            }],
            sources: vec![],
        }
    }

    #[test]
    fn free_space_is_unit_speed() {
        let g = build_speed_function(&open_scenario(vec![]), &ModelParams::default());
        assert!(g.values.iter().all(|&v| v == 1.0));
        assert!(g.traversable.iter().all(|&t| t));
    }

    #[test]
    fn wall_contact_speed() {
        let f = WallSlowdown {
            bump: ModelParams::default().obstacle_bump(),
        };
        assert!((f.speed(0.0) - 1.0 / (1.0 + 9.96 / E)).abs() < 1e-15);
        assert!((f.speed(0.0) - 0.214_404_590_877_392_8).abs() < 1e-15);
        assert_eq!(f.speed(0.25), 1.0);
        assert_eq!(f.speed(0.3), 1.0);
    }

    #[test]
    fn nodes_near_walls_are_slow_or_blocked() {
        let wall = Obstacle::Wall(Segment::new(Vec2::new(2.0, 0.0), Vec2::new(2.0, 3.0)));
        let g = build_speed_function(&open_scenario(vec![wall]), &ModelParams::default());
        let k_on = g.grid.index(20, 10);
        assert!(!g.traversable[k_on]);
        let k_near = g.grid.index(18, 10); // 0.2 m away
        assert!(g.traversable[k_near] && g.values[k_near] < 1.0);
        let k_far = g.grid.index(10, 10);
        assert_eq!(g.values[k_far], 1.0);
    }
}
