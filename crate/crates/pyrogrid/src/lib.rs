//! Desk-scale distributed wildfire grid-map prediction.
//!
//! Per-location agents run online system identification and multi-horizon
//! fire-map prediction over weekly grid observations, while an actor-critic
//! policy decides which agent's replay buffer each agent trains from. All
//! components are updated simultaneously under a four-rate step schedule.

pub mod buffers;
pub mod environment;
pub mod exchange;
pub mod metrics;
pub mod nets;
pub mod numerics;
pub mod trainer;
