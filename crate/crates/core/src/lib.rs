//! Sketch-driven articulation modeling for CAD meshes.

pub mod complete;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod infer;
pub mod kinematics;
pub mod meshops;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod segment;
pub mod shapes;
pub mod sketch;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use model::{ArticulatedObject, ArticulationSpec, Joint, Mesh, MotionType, Part, Vec3};
