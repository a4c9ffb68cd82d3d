//! Session engine, REST routes and command-line driver for articulation
//! authoring.

pub mod cli;
pub mod engine;
pub mod error;
pub mod http;
pub mod jobs;

pub use engine::{Engine, EngineConfig};
pub use error::{ServiceError, ServiceResult};
