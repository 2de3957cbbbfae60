//! Training, interpreting and certifying one-hidden-layer networks on finite
//! group composition.

pub mod error;
pub mod experiment;
pub mod group;
pub mod idealized;
pub mod interpret;
pub mod interventions;
pub mod linalg;
pub mod model;
pub mod rep;
pub mod verify;

pub use error::{Error, Result};
