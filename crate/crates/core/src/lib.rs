//! Star-domain neural primitives.
//!
//! Each primitive is a radius function over the unit sphere, realised by a
//! small MLP on the unit direction and placed at a translation `t`. The same
//! parameters give an implicit indicator (a sigmoid of the radial margin) and
//! explicit surface points (`r(d) * omega(d) + t`), so shapes can be fitted by
//! gradient descent on both Chamfer and occupancy objectives and meshed
//! directly from a spherical template.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod checkpoint;
pub mod cli;
pub mod diff_engine;
pub mod error;
pub mod fitting;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod nsd;
pub mod parallel;
pub mod shape_io;
pub mod shapes;
pub mod spatial;
pub mod sph_harmonics;
pub mod sphere_geom;

pub use error::{Error, Result};

/// Three-vector used throughout the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
