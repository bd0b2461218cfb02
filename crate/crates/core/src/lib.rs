//! Edge/cloud split planning for layered inference.
//!
//! A network is cut after one of its decoupling points. The edge runs the
//! prefix, quantizes and entropy-codes the feature map, and ships it to the
//! cloud which runs the suffix. The planner picks the cut and the bit depth
//! that minimize end-to-end latency within an accuracy-loss budget.

pub mod codec;
pub mod error;
pub mod latency;
pub mod planner;
pub mod predictor;
pub mod profiles;
pub mod quantizer;
pub mod simulator;
pub mod synthetic;
pub mod transport;

pub use error::{Error, Result};
