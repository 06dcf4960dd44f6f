//! Reconstruction of refractive fluid surfaces with a coordinate network
//! that emits volume density and surface normal.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: rays, pinhole cameras, vector Snell refraction and
//!   ray/plane and ray/height-field intersection.
//! * [`autodiff`] and [`optim`]: the reverse-mode tape and Adam.
//! * [`field`]: the density/normal network and volume accumulation.
//! * [`simulator`]: analytic wave surfaces, patterns and ground-truth renders.
//! * [`training`]: correspondence and depth-smoothness losses and the
//!   optimization loop.
//! * [`evaluation`]: error metrics, re-rendering and ablation sweeps.
//! * [`io`]: PFM/PNG images, checkpoints and configuration files.

pub mod autodiff;
pub mod evaluation;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod optim;
pub mod simulator;
pub mod training;

pub use field::{Architecture, NeRefNetwork};
pub use geometry::{PinholeCamera, Ray, ReferencePlane, RefractionConstants, Vec3};
