//! Joint DNN partitioning and resource allocation for multi-user cooperative
//! edge inference.
//!
//! The crate simulates a slotted system of user devices that split DNN
//! inference with an edge server, converts the long-term energy and memory
//! constraints into virtual queues, and optimizes each slot by combining a
//! PPO agent (partition cuts) with exact convex solvers (CPU and bandwidth).

// `!(x > 0.0)` is the idiom for rejecting NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod allocators;
pub mod environment;
pub mod error;
pub mod exec;
pub mod harness;
pub mod profiles;
pub mod queue_sim;
pub mod system_model;

pub use error::{Error, Result};
