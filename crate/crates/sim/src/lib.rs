//! Deterministic discrete-event simulation of a wavedag committee.
//!
//! [`run`] hosts `n` validators behind a seeded delivery schedule, injects
//! crashes, restarts and equivocation, and returns a [`RunReport`]. The
//! [`checks`] module holds the safety and structure checks run over reports.

pub mod checks;
pub mod engine;
pub mod estimate;
pub mod policy;
pub mod report;
pub mod testkit;
pub mod walkthrough;

pub use engine::{run, SimConfig, SimError};
pub use policy::{Adversarial, CrashRecovery, FaultPlan, Scheduler};
pub use report::{Metrics, Role, RunReport, SlotRecord, ValidatorReport};
