//! Three-layer barrier-function control of a free-floating mobile
//! manipulator in compliant contact with a planar surface.

pub mod cli;
pub mod config;
pub mod contact;
pub mod controller;
pub mod dyn_cbf;
pub mod dynamics;
pub mod error;
pub mod kin_cbf;
pub mod kinematics;
pub mod sim;
pub mod task;

pub use error::{Error, Result};

/// Names of the six task channels, in error-stack order.
pub const CHANNELS: [&str; 6] = ["f", "y", "z", "o1", "o2", "o3"];
