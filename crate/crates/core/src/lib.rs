//! Gradient navigation model for microscopic pedestrian dynamics.
//!
//! Pedestrians follow the smoothed gradient of an eikonal floor field, are
//! repelled by neighbors inside their field of view and by walls, and relax
//! their speed towards a desired value. The crate covers the smooth kernels,
//! scenario description, floor fields, the right-hand side of the equations
//! of motion, an adaptive Dormand-Prince integrator, the calibration of the
//! repulsion heights and the measurement suite.

pub mod calibration;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod floorfield;
pub mod geometry;
pub mod integrator;
pub mod measurement;
pub mod scenario;
pub mod smoothmath;

pub use error::{Error, ErrorClass, Result};
pub use geometry::Vec2;
