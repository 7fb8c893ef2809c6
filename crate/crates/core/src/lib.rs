//! Demonstration-driven UI navigation agents over simulated apps.

pub mod augment;
pub mod encoding;
pub mod macro_exec;
pub mod model;
pub mod net;
pub mod orchestrator;
pub mod persistence;
pub mod pixel;
pub mod rollout;
pub mod sim;
pub mod train;
