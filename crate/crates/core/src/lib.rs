//! Synthetic parallel-jaw grasping toolkit.
//!
//! The crate generates procedural parts, renders top-down depth
//! observations, labels random grasps with a deterministic quasi-static
//! pinch oracle, trains a grasp quality network (GQN) and grasp
//! displacement networks (GDN) with a small from-scratch tensor core, and
//! plans grasps that are both likely to lift and have low predicted
//! displacement variance.

mod binio;
pub mod error;
pub mod dataset;
pub mod geom;
pub mod harness;
pub mod models;
pub mod parts;
pub mod physics;
pub mod planner;
pub mod rng;
pub mod sensor;
pub mod tensor;

pub use error::{Error, Result};
