//! Synthesis of maximally exciting 3D stimuli.
//!
//! A base mesh is deformed by a Gaussian radial-basis field, rendered by a
//! small differentiable rasterizer, normalized, and scored by a response
//! model. Adam adjusts the field offsets and kernel scales to maximize the
//! response while geometric regularizers keep the mesh well shaped. The
//! resulting stimulus can then be probed with pose and light-direction sweeps.

pub mod chamfer;
pub mod deformation;
pub mod dual;
pub mod error;
pub mod mesh;
pub mod optim;
pub mod regularizers;
pub mod render;
pub mod response;
pub mod sweeps;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
