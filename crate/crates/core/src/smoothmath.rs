//! Smooth scalar and vector kernels used by the navigation model.
//!
//! Everything here is pure. The compactly supported bump `h`, its
//! `h_eps` variant that vanishes at the origin, the mollifier-based smooth
//! ramp, the length-capping map `g` and the shifted logistic used for the
//! viewing-angle scale.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Mollification exponent used by the smooth ramp.
pub const RAMP_EXPONENT: i32 = 3;

/// Height and support of the bump `p * exp(1 / ((r/R)^2 - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpParams {
    /// Support radius in meters.
    pub radius: f64,
    /// Height scale; the maximum value is `height / e`.
    pub height: f64,
}

impl BumpParams {
    pub fn new(radius: f64, height: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidInput(format!("bump radius must be positive, got {radius}")));
        }
        if !(height.is_finite() && height > 0.0) {
            return Err(Error::InvalidInput(format!("bump height must be positive, got {height}")));
        }
        Ok(Self { radius, height })
    }

    /// Unchecked evaluation for hot loops. `r` is used through `|r / R|`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let q = r / self.radius;
        let q2 = q * q;
        if q2 < 1.0 {
            self.height * (1.0 / (q2 - 1.0)).exp()
        } else {
            0.0
        }
    }

    /// `h(r; p, R) - h(r; p, eps)`, zero at the origin.
    #[inline]
    pub fn value_eps(&self, r: f64, eps: f64) -> f64 {
        let inner = BumpParams {
            radius: eps,
            height: self.height,
        };
        self.value(r) - inner.value(r)
    }
}

/// Midpoint and steepness of the shifted logistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub midpoint: f64,
    pub steepness: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            midpoint: 0.3,
            steepness: 0.03,
        }
    }
}

impl LogisticParams {
    pub fn new(midpoint: f64, steepness: f64) -> Result<Self> {
        if !(steepness.is_finite() && steepness > 0.0) || !midpoint.is_finite() {
            return Err(Error::InvalidInput(format!(
                "logistic needs finite midpoint and positive steepness, got ({midpoint}, {steepness})"
            )));
        }
        Ok(Self { midpoint, steepness })
    }
}

pub fn bump(r: f64, params: BumpParams) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::InvalidInput(format!("bump distance is not finite: {r}")));
    }
    Ok(params.value(r))
}

pub fn bump_eps(r: f64, params: BumpParams, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < params.radius) {
        return Err(Error::config(
            "eps",
            format!("must satisfy 0 < eps < R = {}, got {eps}", params.radius),
        ));
    }
    bump(r, params)?;
    Ok(params.value_eps(r, eps))
}

/// `e * exp(1 / ((|x|/R)^(2p) - 1))` inside the support, zero outside.
#[inline]
pub fn mollifier_weight(x: f64, radius: f64, exponent: i32) -> f64 {
    let q = (x / radius).abs();
    if q < 1.0 {
        E * (1.0 / (q.powi(2 * exponent) - 1.0)).exp()
    } else {
        0.0
    }
}

#[inline]
fn ramp_unchecked(x: f64, exponent: i32) -> f64 {
    let m = mollifier_weight(x, 1.0, exponent);
    m * x + (1.0 - m)
}

/// Smooth version of `clamp(x, 0, 1)` for `x >= 0`.
///
/// Exactly 0 at 0 and exactly 1 from 1 on. Negative arguments are rejected:
/// the blend formula does not reproduce the ramp there.
pub fn smooth_ramp(x: f64, exponent: i32) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidInput(format!("smooth ramp is defined for x >= 0, got {x}")));
    }
    Ok(ramp_unchecked(x, exponent))
}

/// Rescale `v` to length `smooth_ramp(|v|)`, keeping its direction.
#[inline]
pub fn normalize_capped(v: Vec2) -> Vec2 {
    let n = v.norm();
    if n == 0.0 {
        return Vec2::zeros();
    }
    v * (ramp_unchecked(n, RAMP_EXPONENT) / n)
}

#[inline]
pub fn logistic(x: f64, params: LogisticParams) -> f64 {
    1.0 / (1.0 + (-(x - params.midpoint) / params.steepness).exp())
}

/// Viewing-angle weight of a neighbor at `offset` for a walker heading along
/// the unit vector `heading`.
///
/// The angle between the two vectors lies in `[0, pi]`; the result only
/// depends on `cos(kappa * angle)`, so it is symmetric in the side the
/// neighbor is on.
#[inline]
pub fn view_scale(heading: Vec2, offset: Vec2, kappa: f64, params: LogisticParams) -> f64 {
    let cross = heading.x * offset.y - heading.y * offset.x;
    let dot = heading.dot(&offset);
    let angle = cross.atan2(dot);
    logistic((kappa * angle).cos(), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit() -> BumpParams {
        BumpParams::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn bump_examples() {
        assert_relative_eq!(bump(0.0, unit()).unwrap(), 1.0 / E, max_relative = 1e-15);
        assert_eq!(bump(1.0, unit()).unwrap(), 0.0);
        assert_eq!(bump(1.5, unit()).unwrap(), 0.0);
        assert_relative_eq!(bump(0.5, unit()).unwrap(), (-4.0f64 / 3.0).exp(), max_relative = 1e-15);
        assert!(bump(f64::NAN, unit()).is_err());
        assert!(bump(f64::INFINITY, unit()).is_err());
    }

    #[test]
    fn bump_is_symmetric_in_r() {
        let p = BumpParams::new(0.7, 3.59).unwrap();
        assert_eq!(p.value(-0.3), p.value(0.3));
    }

    #[test]
    fn bump_eps_examples() {
        let p = unit();
        assert_eq!(bump_eps(0.0, p, 0.1).unwrap(), 0.0);
        assert_eq!(bump_eps(0.5, p, 0.1).unwrap(), p.value(0.5));
        let inner = BumpParams::new(0.1, 1.0).unwrap();
        assert_eq!(bump_eps(0.05, p, 0.1).unwrap(), p.value(0.05) - inner.value(0.05));
        assert!(bump_eps(0.5, p, 1.0).is_err());
        assert!(bump_eps(0.5, p, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(BumpParams::new(0.0, 1.0).is_err());
        assert!(BumpParams::new(1.0, -1.0).is_err());
        assert!(LogisticParams::new(0.3, 0.0).is_err());
    }

    #[test]
    fn ramp_examples() {
        assert_eq!(smooth_ramp(0.0, 3).unwrap(), 0.0);
        assert_eq!(smooth_ramp(1.0, 3).unwrap(), 1.0);
        assert_eq!(smooth_ramp(2.0, 3).unwrap(), 1.0);
        assert!(smooth_ramp(-0.5, 3).is_err());
        assert_eq!(mollifier_weight(0.0, 1.0, 3), 1.0);
        assert_eq!(mollifier_weight(1.2, 1.0, 3), 0.0);
    }

    #[test]
    fn normalize_capped_examples() {
        assert_eq!(normalize_capped(Vec2::zeros()), Vec2::zeros());
        let v = normalize_capped(Vec2::new(3.0, 4.0));
        assert_relative_eq!(v.x, 0.6, max_relative = 1e-15);
        assert_relative_eq!(v.y, 0.8, max_relative = 1e-15);
        let w = normalize_capped(Vec2::new(0.5, 0.0));
        assert_eq!(w.y, 0.0);
        assert_relative_eq!(w.x, smooth_ramp(0.5, 3).unwrap(), max_relative = 1e-15);
    }

    #[test]
    fn logistic_midpoint() {
        assert_eq!(logistic(0.3, LogisticParams::default()), 0.5);
    }

    #[test]
    fn view_scale_directions() {
        let lp = LogisticParams::default();
        let heading = Vec2::new(1.0, 0.0);
        let ahead = view_scale(heading, Vec2::new(2.0, 0.0), 0.6, lp);
        assert_relative_eq!(ahead, logistic(1.0, lp), max_relative = 1e-15);
        let left = view_scale(heading, Vec2::new(0.0, 1.0), 0.6, lp);
        let right = view_scale(heading, Vec2::new(0.0, -1.0), 0.6, lp);
        assert_eq!(left, right);
        assert_relative_eq!(left, logistic((0.6 * PI / 2.0).cos(), lp), max_relative = 1e-14);
        let behind = view_scale(heading, Vec2::new(-1.0, 0.0), 0.6, lp);
        assert!(behind < 2e-9);
    }

    #[test]
    fn bump_is_c1_at_support_boundary() {
        let p = BumpParams::new(0.7, 3.59).unwrap();
        let step = 1e-6;
        let left = (p.value(p.radius) - p.value(p.radius - 2.0 * step)) / (2.0 * step);
        let centered = (p.value(p.radius + step) - p.value(p.radius - step)) / (2.0 * step);
        assert!(left.abs() < 1e-4 && centered.abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn bump_strictly_decreasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // exp(1/(q^2-1)) underflows to zero a hair before the support edge
            prop_assume!(unit().value(hi) > 0.0);
            prop_assert!(unit().value(lo) > unit().value(hi));
        }

        #[test]
        fn ramp_bounded_and_monotone(a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (rl, rh) = (smooth_ramp(lo, 3).unwrap(), smooth_ramp(hi, 3).unwrap());
            prop_assert!((0.0..=1.0).contains(&rl));
            prop_assert!(rl <= rh + 1e-15);
        }

        #[test]
        fn normalize_capped_keeps_direction(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let v = Vec2::new(x, y);
            prop_assume!(v.norm() > 1e-9);
            let g = normalize_capped(v);
            let expected = smooth_ramp(v.norm(), 3).unwrap();
            prop_assert!((g.norm() - expected).abs() <= 1e-14);
            prop_assert!(g.norm() <= 1.0 + 1e-15);
            if g.norm() > 0.0 {
                prop_assert!((v.x * g.y - v.y * g.x).abs() <= 1e-12 * v.norm());
                prop_assert!(v.dot(&g) > 0.0);
            }
        }

        #[test]
        fn view_scale_depends_on_cos_only(angle in -PI..PI, len in 0.1f64..3.0) {
            let lp = LogisticParams::default();
            let heading = Vec2::new(1.0, 0.0);
            let up = view_scale(heading, Vec2::new(angle.cos(), angle.sin()) * len, 0.6, lp);
            let down = view_scale(heading, Vec2::new(angle.cos(), -angle.sin()) * len, 0.6, lp);
            prop_assert!((up - down).abs() <= 1e-15);
        }
    }
}
