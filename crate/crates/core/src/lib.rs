//! Sensor precision allocation for Kalman filtering of linear time-varying systems.

mod error;
pub mod casestudies;
pub mod estimation;
pub mod linalg;
pub mod lmi;
pub mod precision;
pub mod sdpsolve;
pub mod sysmodel;

pub use error::{Error, Result};
