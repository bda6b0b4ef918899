//! Episode reports, metrics, batch runs, conformance and output files.

pub mod batch;
pub mod config;
pub mod conformance;
pub mod metrics;
pub mod output;
pub mod report;

pub use batch::{run_batch, BatchReport, BatchSuite, TimingRow};
pub use config::{ConfigError, HarnessConfig, ResolverKind};
pub use conformance::{conformance, ConformanceChecklist};
pub use report::{EpisodeReport, Iteration, Metrics};
