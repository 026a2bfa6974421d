//! Uplink-RSSI emergency caller search: world model, propagation, measurement
//! entities, localization and search orchestration.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod lcs;
pub mod rf;
pub mod seeding;
pub mod sme;
pub mod uplink;
pub mod world;
pub mod protocol;
pub mod orchestrator;
pub mod harness;
