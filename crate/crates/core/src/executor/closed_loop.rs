use serde::{Deserialize, Serialize};

use super::{compile, Execution};
use crate::command::{self, validate};
use crate::harness::metrics::{compute_metrics, speed_ahead, travel_time_delta, SpeedWindow, SPEED_WINDOW};
use crate::harness::report::{EpisodeReport, Iteration};
use crate::pipeline::{run_pipeline, Resolver};
use crate::scenario::{build, is_resolved, ScenarioError, ScenarioSpec, WARMUP_TICKS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Ticks to watch for resolution after each plan starts.
    pub settle_ticks: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { settle_ticks: 600 }
    }
}

/// Build, warm up, then observe, resolve and execute until the scenario is
/// resolved or a budget runs out. Warm-up counts against the tick budget.
pub fn run_closed_loop(
    spec: &ScenarioSpec,
    resolver: &dyn Resolver,
    config: &LoopConfig,
) -> Result<EpisodeReport, ScenarioError> {
    let (mut world, truth) = build(spec)?;
    let initial = world.clone();
    let tracked = truth.involved.clone();
    let mut before = SpeedWindow::default();
    for t in 0..WARMUP_TICKS.min(spec.tick_budget) {
        world.step();
        if t + SPEED_WINDOW >= WARMUP_TICKS {
            before.sample(&world, &tracked);
        }
    }
    let mut resolved_tick = is_resolved(&world, &truth).then_some(world.tick);
    let mut iterations = Vec::new();
    let mut first_intervention = None;
    let mut transport_failure = false;
    let mut faults = Default::default();
    for index in 0..spec.resolve_budget {
        if resolved_tick.is_some() || world.tick >= spec.tick_budget {
            break;
        }
        let obs = world.observe();
        let mut it = Iteration {
            index,
            tick: obs.tick,
            observation_digest: obs.digest(),
            traces: Vec::new(),
            plan: None,
            error: None,
            failed_stage: None,
            log: None,
            log_digest: None,
        };
        let output = match run_pipeline(&obs, resolver) {
            Ok(out) => out,
            Err(failure) => {
                it.traces = failure.traces;
                it.failed_stage = Some(failure.error.stage());
                it.error = Some(failure.error.to_string());
                iterations.push(it);
                if failure.error.is_transport() {
                    transport_failure = true;
                    break;
                }
                continue;
            }
        };
        it.traces = output.traces;
        it.plan = Some(command::serialize(&output.plan));
        let controllers = match validate(&output.plan, &obs)
            .map_err(|e| e.to_string())
            .and_then(|vp| compile(&vp, &world).map_err(|e| e.to_string()))
        {
            Ok(c) => c,
            Err(e) => {
                it.error = Some(e);
                iterations.push(it);
                continue;
            }
        };
        faults = output.plan.faults.iter().map(|f| (f.vehicle, f.degree)).collect();
        first_intervention.get_or_insert(world.tick);
        let start = world.tick;
        let mut run = Execution::new(&world, controllers);
        // Controllers still running at resolution are seen through, then
        // the predicate is checked again.
        while world.tick < start + config.settle_ticks && world.tick < spec.tick_budget {
            run.tick(&mut world);
            if resolved_tick.is_none() && is_resolved(&world, &truth) {
                resolved_tick = Some(world.tick);
            }
            if resolved_tick.is_some() && run.finished() {
                break;
            }
        }
        if !is_resolved(&world, &truth) {
            resolved_tick = None;
        }
        run.log.resolved_tick = resolved_tick;
        it.log_digest = Some(run.log.digest());
        it.log = Some(run.log);
        iterations.push(it);
    }
    let metrics = compute_metrics(
        &iterations,
        first_intervention,
        resolved_tick,
        before.mean(),
        speed_ahead(&world, &tracked),
        travel_time_delta(&initial, &world, &tracked),
    );
    Ok(EpisodeReport {
        spec: spec.clone(),
        truth,
        iterations,
        resolved: resolved_tick.is_some(),
        final_tick: world.tick,
        transport_failure,
        faults,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::AnomalyLabel;
    use crate::pipeline::oracle::OracleResolver;

    #[test]
    fn oracle_resolves_staged_anomalies() {
        for kind in [AnomalyLabel::GhostJam, AnomalyLabel::Deadlock, AnomalyLabel::Accident] {
            for seed in 0..3 {
                let spec = ScenarioSpec::new(kind, seed);
                let report = run_closed_loop(&spec, &OracleResolver::default(), &LoopConfig::default()).unwrap();
                assert!(report.resolved, "{kind} seed {seed}");
                assert_eq!(report.iterations.len(), 1);
                assert_eq!(report.metrics.new_collisions, 0);
                assert!(report.metrics.mean_speed_after >= report.metrics.mean_speed_before);
            }
        }
    }

    #[test]
    fn accident_report_carries_faults() {
        let spec = ScenarioSpec::new(AnomalyLabel::Accident, 4);
        let report = run_closed_loop(&spec, &OracleResolver::default(), &LoopConfig::default()).unwrap();
        assert_eq!(Some(report.faults.clone()), report.truth.fault);
        let log = report.iterations[0].log.as_ref().unwrap();
        assert!(log.completions.len() == 2 && log.completions.iter().all(|c| c.status == crate::executor::ControllerStatus::Done));
    }

    #[test]
    fn normal_needs_no_intervention() {
        let spec = ScenarioSpec::new(AnomalyLabel::Normal, 1);
        let report = run_closed_loop(&spec, &OracleResolver::default(), &LoopConfig::default()).unwrap();
        assert!(report.resolved && report.iterations.is_empty());
        assert_eq!(report.metrics.travel_time_delta, 0.0);
    }

    #[test]
    fn failing_resolver_uses_the_whole_budget() {
        struct Garbage;
        impl Resolver for Garbage {
            fn name(&self) -> &str {
                "garbage"
            }
            fn respond(&self, _: &crate::pipeline::StageRequest<'_>) -> Result<String, crate::pipeline::ResolverError> {
                Ok("???".into())
            }
        }
        let spec = ScenarioSpec::new(AnomalyLabel::Deadlock, 2);
        let report = run_closed_loop(&spec, &Garbage, &LoopConfig::default()).unwrap();
        assert!(!report.resolved);
        assert_eq!(report.iterations.len(), spec.resolve_budget as usize);
        assert!(report.iterations.iter().all(|it| it.error.is_some()));
        assert_eq!(report.metrics.time_to_clear, None);
    }
}
