use serde::{Deserialize, Serialize};

use super::report::EpisodeReport;
use crate::executor::{run_closed_loop, LoopConfig};
use crate::label::AnomalyLabel;
use crate::pipeline::Resolver;
use crate::scenario::{ScenarioError, ScenarioSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSuite {
    pub kinds: Vec<AnomalyLabel>,
    /// Seeds `0..seeds` for every kind.
    pub seeds: u64,
    /// Runs per (kind, seed).
    pub repetitions: u32,
}

impl BatchSuite {
    pub fn specs(&self) -> Vec<ScenarioSpec> {
        let mut out = Vec::new();
        for kind in &self.kinds {
            for seed in 0..self.seeds {
                for _ in 0..self.repetitions {
                    out.push(ScenarioSpec::new(*kind, seed));
                }
            }
        }
        out
    }
}

/// Mean stage seconds for one scenario kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub kind: AnomalyLabel,
    pub scene_s: f64,
    pub analysis_s: f64,
    pub solution_s: f64,
    pub formatting_s: f64,
    /// Sum of the four stage columns, before any rounding.
    pub total_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub episodes: Vec<EpisodeReport>,
    pub timing: Vec<TimingRow>,
    pub all_resolved: bool,
    pub transport_failure: bool,
}

/// One row per kind, in order of first appearance.
pub fn timing_table(episodes: &[EpisodeReport]) -> Vec<TimingRow> {
    let mut kinds: Vec<AnomalyLabel> = Vec::new();
    for e in episodes {
        if !kinds.contains(&e.spec.kind) {
            kinds.push(e.spec.kind);
        }
    }
    kinds
        .into_iter()
        .map(|kind| {
            let rows: Vec<&EpisodeReport> = episodes.iter().filter(|e| e.spec.kind == kind).collect();
            let mean = |i: usize| rows.iter().map(|e| e.metrics.stage_durations[i]).sum::<f64>() / rows.len() as f64;
            let (scene_s, analysis_s, solution_s, formatting_s) = (mean(0), mean(1), mean(2), mean(3));
            TimingRow { kind, scene_s, analysis_s, solution_s, formatting_s, total_s: scene_s + analysis_s + solution_s + formatting_s }
        })
        .collect()
}

/// Run every episode of the suite, in parallel across episodes unless the
/// resolver asks for single-flight calls. Reports keep suite order.
pub fn run_batch(
    suite: &BatchSuite,
    resolver: &dyn Resolver,
    config: &LoopConfig,
    workers: usize,
) -> Result<BatchReport, ScenarioError> {
    use rayon::prelude::*;
    let specs = suite.specs();
    let threads = if resolver.single_flight() { 1 } else { workers.max(1) };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let episodes: Vec<EpisodeReport> = pool.install(|| {
        specs.par_iter().map(|spec| run_closed_loop(spec, resolver, config)).collect::<Result<_, _>>()
    })?;
    Ok(BatchReport {
        timing: timing_table(&episodes),
        all_resolved: episodes.iter().all(|e| e.resolved),
        transport_failure: episodes.iter().any(|e| e.transport_failure),
        episodes,
    })
}
