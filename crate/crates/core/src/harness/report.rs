use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::executor::ExecutionLog;
use crate::label::FaultDegree;
use crate::pipeline::{Stage, StageTrace};
use crate::scenario::{GroundTruth, ScenarioSpec};
use crate::world::VehicleId;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Ticks from the first intervention to resolution; `None` when unresolved.
    pub time_to_clear: Option<u64>,
    pub mean_speed_before: f64,
    pub mean_speed_after: f64,
    /// Seconds of free driving the tracked vehicles lost against a lone run.
    pub travel_time_delta: f64,
    pub new_collisions: usize,
    /// Scene, analysis, solution and formatting seconds summed over iterations.
    pub stage_durations: [f64; 4],
    pub total_duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub index: u32,
    pub tick: u64,
    pub observation_digest: String,
    pub traces: Vec<StageTrace>,
    pub plan: Option<String>,
    pub error: Option<String>,
    pub failed_stage: Option<Stage>,
    pub log: Option<ExecutionLog>,
    pub log_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub spec: ScenarioSpec,
    pub truth: GroundTruth,
    pub iterations: Vec<Iteration>,
    pub resolved: bool,
    pub final_tick: u64,
    /// Set when the loop stopped because the resolver could not be reached.
    pub transport_failure: bool,
    /// Fault assignments from the last executed plan.
    pub faults: BTreeMap<VehicleId, FaultDegree>,
    pub metrics: Metrics,
}

impl EpisodeReport {
    /// The same report with every wall-clock field zeroed.
    pub fn redacted(&self) -> EpisodeReport {
        let mut r = self.clone();
        r.metrics.stage_durations = [0.0; 4];
        r.metrics.total_duration = 0.0;
        for it in &mut r.iterations {
            for t in &mut it.traces {
                t.duration_s = 0.0;
            }
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
