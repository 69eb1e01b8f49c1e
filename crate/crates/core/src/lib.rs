//! Compositional space-attribute neural fields: a six-plane 4D field with
//! learned attribute indexes, skinning-based canonicalization, SDF volume
//! rendering and a reconstruction fitting harness.

pub mod config;
pub mod container;
pub mod deform;
pub mod error;
pub mod field;
pub mod image_io;
pub mod indexing;
pub mod math;
pub mod mlp;
pub mod optimize;
pub mod oracle;
pub mod par;
pub mod render;
pub mod sampling;
pub mod scene;

pub use error::{Error, Result};
