//! Breath-synchronized robot arm control.
//!
//! Respiration samples flow through [`signal`] into normalized integration
//! differences, [`motion`] turns those into shoulder/elbow displacements on
//! top of gamepad jogging from [`controller`], and [`arm`] ships the
//! resulting pose to a (simulated) six-joint arm as text frames. [`session`]
//! hosts the whole thing and runs the synced / non-synced conditions;
//! [`metrics`] analyzes the recorded sessions offline.

pub mod arm;
pub mod controller;
pub mod ingest;
pub mod metrics;
pub mod motion;
pub mod par;
pub mod session;
pub mod signal;
