//! Geodesic-segment detection, description, matching and point-line
//! estimation for large field-of-view cameras.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ba;
pub mod camera;
pub mod cli;
pub mod descriptor;
pub mod detector;
pub mod eval;
pub mod image;
pub mod io;
pub mod line;
pub mod scalar;
pub mod sphere;
pub mod synthetic;

pub use scalar::Real;

pub type Bearing = camera::Bearing<f64>;
pub type CameraModel = camera::CameraModel<f64>;
pub type GreatCircle = sphere::GreatCircle<f64>;
pub type GeodesicSegment = sphere::GeodesicSegment<f64>;
pub type Pose = line::Pose<f64>;
pub type PluckerLine = line::PluckerLine<f64>;
pub type OrthonormalLine = line::OrthonormalLine<f64>;
pub type BaProblem = ba::BaProblem<f64>;
