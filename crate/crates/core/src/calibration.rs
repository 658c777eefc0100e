//! Calibration of the repulsion heights from the standoff condition.
//!
//! In the densest admissible crowd a walker enclosed by neighbors and a
//! wall must not move: `g(N_T) = -g(N_P)`. With the supports `R_p`, `R_B`
//! fixed this pins the heights `p_p` and `p_B`. The condition only fixes
//! the direction of `N_P` and a lower bound on its length; closing it with
//! `N_P = -N_T / |N_T|` gives two equations for the two unknowns.

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::{standoff, Config, ModelParams};
use crate::smoothmath::{normalize_capped, view_scale, BumpParams};

/// Nearest-neighbor spacing of a hexagonal lattice with density `rho` (P/m^2):
/// `sqrt(2 / (sqrt(3) rho))`.
pub fn lattice_spacing(rho: f64) -> f64 {
    (2.0 / (3f64.sqrt() * rho)).sqrt()
}

/// Hexagonal lattice sites with spacing `r` around a walker at the origin,
/// restricted to `y >= 0` and to distances in `(0, reach)`.
pub fn upper_lattice_sites(r: f64, reach: f64) -> Vec<Vec2> {
    let h = 3f64.sqrt() / 2.0 * r;
    let rows = (reach / h).ceil() as i64 + 1;
    let cols = (reach / r).ceil() as i64 + 1;
    let mut sites = Vec::new();
    for j in 0..=rows {
        let shift = if j % 2 == 1 { r / 2.0 } else { 0.0 };
        for i in -cols..=cols {
            let p = Vec2::new(i as f64 * r + shift, j as f64 * h);
            let d = p.norm();
            if d > 0.0 && d < reach {
                sites.push(p);
            }
        }
    }
    sites.sort_by(|a, b| {
        a.norm()
            .total_cmp(&b.norm())
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    sites
}

/// The calibration configuration: a walker at the origin heading along
/// `target_dir`, pedestrians at `neighbors` and a horizontal wall at
/// `y = -wall_distance`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandoffScenario {
    pub neighbors: Vec<Vec2>,
    pub wall_distance: f64,
    pub target_dir: Vec2,
    /// Lattice spacing the neighbors were generated with (m).
    pub spacing: f64,
}

impl StandoffScenario {
    /// Closest shell of the densest lattice: `(+-r, 0)` and `(+-r/2, sqrt(3) r / 2)`,
    /// wall 0.2 m below.
    pub fn single_layer(rho_max: f64) -> Self {
        let r = lattice_spacing(rho_max);
        let h = 3f64.sqrt() / 2.0 * r;
        Self {
            neighbors: vec![
                Vec2::new(r, 0.0),
                Vec2::new(-r, 0.0),
                Vec2::new(r / 2.0, h),
                Vec2::new(-r / 2.0, h),
            ],
            wall_distance: 0.2,
            target_dir: Vec2::new(1.0, 0.0),
            spacing: r,
        }
    }

    /// Every upper-half-plane lattice site inside `reach`.
    pub fn layered(rho_max: f64, reach: f64) -> Self {
        let r = lattice_spacing(rho_max);
        Self {
            neighbors: upper_lattice_sites(r, reach),
            wall_distance: 0.2,
            target_dir: Vec2::new(1.0, 0.0),
            spacing: r,
        }
    }

    pub fn validate(&self, ped_radius: f64, obstacle_radius: f64) -> Result<()> {
        if let Some(p) = self.neighbors.iter().find(|p| p.norm() >= ped_radius || p.norm() == 0.0) {
            return Err(Error::config(
                "standoff.neighbors",
                format!("neighbor at ({}, {}) is not within R_p = {ped_radius}", p.x, p.y),
            ));
        }
        if !(self.wall_distance > 0.0 && self.wall_distance < obstacle_radius) {
            return Err(Error::config(
                "standoff.wall_distance",
                format!("must lie in (0, R_B = {obstacle_radius}) for the wall term to act"),
            ));
        }
        if self.target_dir.norm() == 0.0 {
            return Err(Error::config("standoff.target_dir", "must be non-zero"));
        }
        Ok(())
    }

    /// Unit-height contributions: `N_P = -(p_p a + p_B b)`.
    fn columns(&self, ped_radius: f64, obstacle_radius: f64, params: &ModelParams) -> (Vec2, Vec2) {
        let dir = self.target_dir.normalize();
        let unit_ped = BumpParams {
            radius: ped_radius,
            height: 1.0,
        };
        let mut a = Vec2::zeros();
        for &p in &self.neighbors {
            let d = p.norm();
            a += p / d * (unit_ped.value(d) * view_scale(dir, p, params.kappa, params.logistic()));
        }
        let unit_wall = BumpParams {
            radius: obstacle_radius,
            height: 1.0,
        };
        let b = Vec2::new(0.0, -1.0) * unit_wall.value(self.wall_distance);
        (a, b)
    }

    /// `N_P` for heights `(p_p, p_B)`, with plain bumps (no inner radius).
    pub fn repulsion(&self, p_p: f64, p_b: f64, ped_radius: f64, obstacle_radius: f64, params: &ModelParams) -> Vec2 {
        let (a, b) = self.columns(ped_radius, obstacle_radius, params);
        -(a * p_p + b * p_b)
    }

    /// Walking config reproducing the configuration with the full engine.
    pub fn to_config(&self, params: &ModelParams) -> Config {
        let mut c = standoff(&self.neighbors, self.wall_distance);
        c.model = *params;
        c
    }
}

/// `F = g(N_T) + g(N_P)`; zero when the walker stands still.
pub fn standoff_residual(
    p_p: f64,
    p_b: f64,
    scenario: &StandoffScenario,
    ped_radius: f64,
    obstacle_radius: f64,
    params: &ModelParams,
) -> Vec2 {
    let n_p = scenario.repulsion(p_p, p_b, ped_radius, obstacle_radius, params);
    normalize_capped(scenario.target_dir) + normalize_capped(n_p)
}

/// `N_P + N_T / |N_T|`, the closed form of the standoff condition.
fn closure(
    p: Vector2<f64>,
    scenario: &StandoffScenario,
    ped_radius: f64,
    obstacle_radius: f64,
    params: &ModelParams,
) -> Vector2<f64> {
    let n_p = scenario.repulsion(p.x, p.y, ped_radius, obstacle_radius, params);
    let c = n_p + scenario.target_dir.normalize();
    Vector2::new(c.x, c.y)
}

/// Upper end of the search box for both heights.
pub const SEARCH_MAX: f64 = 50.0;
/// Convergence threshold on the closure residual.
pub const CLOSURE_TOLERANCE: f64 = 1e-12;
const MAX_NEWTON: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub p_p: f64,
    pub p_b: f64,
    /// `|g(N_T) + g(N_P)|` at the solution.
    pub residual: f64,
    /// `|N_P + N_T / |N_T||` at the solution.
    pub closure_residual: f64,
    pub iterations: usize,
}

impl Calibration {
    /// Euclidean distance of `(p_p, p_B)` from a reference pair.
    pub fn distance_to(&self, p_p: f64, p_b: f64) -> f64 {
        (self.p_p - p_p).hypot(self.p_b - p_b)
    }
}

/// Solve the standoff condition for `(p_p, p_B)`.
///
/// A scan of `scan x scan` cells on `(0, 50]^2` finds a cell whose corners
/// bracket zero in both closure components; damped Newton with a
/// finite-difference Jacobian then starts from its center. Singular
/// Jacobians (a height that does not enter) are handled by a
/// minimum-norm least-squares step, which leaves that height unchanged.
pub fn calibrate(
    scenario: &StandoffScenario,
    ped_radius: f64,
    obstacle_radius: f64,
    params: &ModelParams,
    scan: usize,
) -> Result<Calibration> {
    scenario.validate(ped_radius, obstacle_radius)?;
    let scan = scan.max(1);
    let f = |p: Vector2<f64>| closure(p, scenario, ped_radius, obstacle_radius, params);
    let step = SEARCH_MAX / scan as f64;
    let node = |k: usize| (k as f64 * step).max(step * 1e-3);
    let values: Vec<Vec<Vector2<f64>>> = (0..=scan)
        .map(|i| (0..=scan).map(|j| f(Vector2::new(node(i), node(j)))).collect())
        .collect();
    let brackets = |a: [f64; 4]| {
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lo <= 0.0 && hi >= 0.0
    };
    let mut start: Option<(f64, Vector2<f64>)> = None;
    for i in 0..scan {
        for j in 0..scan {
            let corners = [values[i][j], values[i + 1][j], values[i][j + 1], values[i + 1][j + 1]];
            if brackets(corners.map(|c| c.x)) && brackets(corners.map(|c| c.y)) {
                let center = Vector2::new((node(i) + node(i + 1)) / 2.0, (node(j) + node(j + 1)) / 2.0);
                let size = f(center).norm();
                if start.is_none_or(|(s, _)| size < s) {
                    start = Some((size, center));
                }
            }
        }
    }
    let Some((_, mut p)) = start else {
        let mut dump = String::from("p_p,p_B,C_x,C_y\n");
        for (i, row) in values.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                dump.push_str(&format!("{},{},{:.6e},{:.6e}\n", node(i), node(j), c.x, c.y));
            }
        }
        return Err(Error::NoBracket { dump });
    };

    let mut c = f(p);
    let mut iterations = 0;
    while c.norm() > CLOSURE_TOLERANCE && iterations < MAX_NEWTON {
        iterations += 1;
        let mut jac = Matrix2::zeros();
        for k in 0..2 {
            let delta = 1e-6 * p[k].abs().max(1.0);
            let mut plus = p;
            let mut minus = p;
            plus[k] += delta;
            minus[k] -= delta;
            jac.set_column(k, &((f(plus) - f(minus)) / (2.0 * delta)));
        }
        let svd = jac.svd(true, true);
        let dp = svd
            .solve(&(-c), 1e-12 * svd.singular_values.max().max(1e-300))
            .map_err(|e| Error::InvalidInput(format!("least-squares step failed: {e}")))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = p + dp * lambda;
            let ct = f(trial);
            if ct.norm() < c.norm() {
                p = trial;
                c = ct;
                accepted = true;
                break;
            }
            lambda /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    if c.norm() > CLOSURE_TOLERANCE {
        return Err(Error::NoConvergence {
            residual: c.norm(),
            iterations,
        });
    }
    Ok(Calibration {
        p_p: p.x,
        p_b: p.y,
        residual: standoff_residual(p.x, p.y, scenario, ped_radius, obstacle_radius, params).norm(),
        closure_residual: c.norm(),
        iterations,
    })
}

/// Wall distance at which the calibrated `p_B` equals `target_p_b`, by
/// bisection on `(0, R_B)`; `p_B` grows monotonically with the distance.
pub fn fit_wall_distance(
    scenario: &StandoffScenario,
    ped_radius: f64,
    obstacle_radius: f64,
    params: &ModelParams,
    target_p_b: f64,
) -> Result<(f64, Calibration)> {
    let solve = |d: f64| {
        let mut s = scenario.clone();
        s.wall_distance = d;
        calibrate(&s, ped_radius, obstacle_radius, params, 50)
    };
    let (mut lo, mut hi) = (1e-3 * obstacle_radius, 0.999 * obstacle_radius);
    let (flo, fhi) = (
        solve(lo)?.p_b - target_p_b,
        solve(hi).map(|c| c.p_b - target_p_b).unwrap_or(f64::INFINITY),
    );
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::config(
            "standoff.wall_distance",
            format!("p_B = {target_p_b} is not reached for wall distances in (0, {obstacle_radius})"),
        ));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        match solve(mid) {
            Ok(c) if c.p_b < target_p_b => lo = mid,
            _ => hi = mid,
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let d = 0.5 * (lo + hi);
    Ok((d, solve(d)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn table() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn lattice_spacing_examples() {
        let r = lattice_spacing(7.0);
        assert!((r - 0.406_149_257_993_246_25).abs() < 1e-15);
        assert!((r - 0.41).abs() < 0.005);
        assert!((3f64.sqrt() * r - 0.70).abs() < 0.005);
        assert!((lattice_spacing(28.0) - r / 2.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_sites_by_shell() {
        let r = lattice_spacing(7.0);
        assert_eq!(upper_lattice_sites(r, 0.70).len(), 4);
        // shells r, sqrt(3) r and 2 r in the upper half plane
        assert_eq!(upper_lattice_sites(r, 1.0).len(), 11);
    }

    #[test]
    fn no_repulsion_leaves_target_drive() {
        let s = StandoffScenario::single_layer(7.0);
        let f = standoff_residual(0.0, 0.0, &s, 0.70, 0.25, &table());
        assert_eq!(f, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn symmetric_layout_vertical_balance() {
        // with the target drive along x, F_y only comes from the wall and
        // the vertical components of the upper neighbors
        let s = StandoffScenario::single_layer(7.0);
        let p = table();
        let only_upper = StandoffScenario {
            neighbors: s.neighbors[2..].to_vec(),
            ..s.clone()
        };
        let full = s.repulsion(3.0, 10.0, 0.70, 0.25, &p);
        let upper = only_upper.repulsion(3.0, 10.0, 0.70, 0.25, &p);
        assert!((full.y - upper.y).abs() < 1e-15);
    }

    #[test]
    fn calibrated_heights_solve_the_standoff() {
        let s = StandoffScenario::single_layer(7.0);
        let c = calibrate(&s, 0.70, 0.25, &table(), 50).unwrap();
        assert!(c.residual <= 1e-10 && c.closure_residual <= 1e-12, "{c:?}");
        assert!((c.p_p - 3.72).abs() < 0.01, "{c:?}");
        assert!((c.p_b - 18.07).abs() < 0.05, "{c:?}");
    }

    #[test]
    fn scan_resolution_does_not_move_the_root() {
        let s = StandoffScenario::single_layer(7.0);
        let a = calibrate(&s, 0.70, 0.25, &table(), 20).unwrap();
        let b = calibrate(&s, 0.70, 0.25, &table(), 73).unwrap();
        assert!((a.p_p - b.p_p).abs() < 1e-8 && (a.p_b - b.p_b).abs() < 1e-8);
    }

    #[test]
    fn wall_only_inversion() {
        let d = 0.2;
        let s = StandoffScenario {
            neighbors: vec![],
            wall_distance: d,
            target_dir: Vec2::new(0.0, -1.0),
            spacing: 0.0,
        };
        let c = calibrate(&s, 0.70, 0.25, &table(), 50).unwrap();
        let exact = (-1.0 / ((d / 0.25f64).powi(2) - 1.0)).exp();
        assert!((c.p_b - exact).abs() < 1e-10 * exact);
        let b = BumpParams::new(0.25, c.p_b).unwrap();
        assert!((b.value(d) - 1.0).abs() < 1e-12);
        assert!(exact > E);
    }

    #[test]
    fn unsolvable_configuration_dumps_the_scan() {
        // pedestrians only behind and no wall influence on y: no bracket
        let s = StandoffScenario {
            neighbors: vec![Vec2::new(0.0, 0.3)],
            wall_distance: 0.2,
            target_dir: Vec2::new(1.0, 0.0),
            spacing: 0.0,
        };
        let err = calibrate(&s, 0.70, 0.25, &table(), 10).unwrap_err();
        assert!(matches!(err, Error::NoBracket { .. }));
        assert!(err.to_string().contains("p_p,p_B,C_x,C_y"));
    }

    #[test]
    fn wall_distance_fit_reaches_target_height() {
        let s = StandoffScenario::single_layer(7.0);
        let (d, c) = fit_wall_distance(&s, 0.70, 0.25, &table(), 9.96).unwrap();
        assert!((c.p_b - 9.96).abs() < 1e-6, "{c:?}");
        assert!(d > 0.17 && d < 0.2, "{d}");
    }

    #[test]
    fn table_heights_leave_a_residual_drive() {
        let s = StandoffScenario::single_layer(7.0);
        let f = standoff_residual(3.59, 9.96, &s, 0.70, 0.25, &table());
        // reference values from an independent evaluation of the kernels
        assert!((f.x - 0.099_236_349_393_857).abs() < 1e-12, "{f:?}");
        assert!((f.y + 0.434_309_619_680_125).abs() < 1e-12, "{f:?}");
    }

    #[test]
    fn second_layer_calibration() {
        let s = StandoffScenario::layered(7.0, 1.0);
        assert_eq!(s.neighbors.len(), 11);
        let c = calibrate(&s, 1.0, 0.25, &table(), 50).unwrap();
        assert!(c.residual <= 1e-10, "{c:?}");
        assert!((c.p_p - 1.8185).abs() < 1e-3, "{c:?}");
        let (d, c) = fit_wall_distance(&s, 1.0, 0.25, &table(), 11.3).unwrap();
        assert!((c.p_b - 11.3).abs() < 1e-6 && d > 0.18 && d < 0.19, "{d} {c:?}");
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut s = StandoffScenario::single_layer(7.0);
        s.wall_distance = 0.3;
        assert!(calibrate(&s, 0.70, 0.25, &table(), 10).is_err());
    }
}
