//! Closed-loop traffic-anomaly resolution harness.
//!
//! A deterministic lane-based micro-world ([`world`]) hosts staged anomalies
//! ([`scenario`]). A four-stage reasoning pipeline ([`pipeline`]) classifies
//! the scene, analyses its cause, proposes interventions and formats them in
//! the intervention command language ([`command`]). The [`executor`] compiles
//! validated plans into vehicle controllers and closes the loop; [`harness`]
//! wires everything into batch runs, timing tables and conformance checks.

pub mod command;
pub mod executor;
pub mod harness;
pub mod kv;
pub mod label;
pub mod pipeline;
pub mod scenario;
pub mod world;

pub use label::{AnomalyLabel, FaultDegree};
pub use world::{VehicleId, WorldConfig, WorldState};
