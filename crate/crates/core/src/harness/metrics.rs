use crate::pipeline::Stage;
use crate::world::{VehicleId, WorldState};

use super::report::{Iteration, Metrics};

/// Ticks in each speed sampling window.
pub const SPEED_WINDOW: u64 = 100;

/// Running mean of the tracked vehicles' speed.
#[derive(Clone, Debug, Default)]
pub struct SpeedWindow {
    sum: f64,
    samples: u64,
}

impl SpeedWindow {
    /// Exited vehicles count at their desired speed.
    pub fn sample(&mut self, world: &WorldState, tracked: &[VehicleId]) {
        let speeds: Vec<f64> = tracked
            .iter()
            .filter_map(|id| world.vehicle(*id))
            .map(|v| if v.exited { v.desired } else { v.signed_speed() })
            .collect();
        if !speeds.is_empty() {
            self.sum += speeds.iter().sum::<f64>() / speeds.len() as f64;
            self.samples += 1;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.sum / self.samples as f64
        }
    }
}

/// Mean tracked speed over the next window, without disturbing `world`.
pub fn speed_ahead(world: &WorldState, tracked: &[VehicleId]) -> f64 {
    let mut world = world.clone();
    let mut window = SpeedWindow::default();
    for _ in 0..SPEED_WINDOW {
        world.step();
        window.sample(&world, tracked);
    }
    window.mean()
}

/// Distance each tracked vehicle falls short of driving alone, in seconds at
/// its desired speed, summed.
pub fn travel_time_delta(initial: &WorldState, last: &WorldState, tracked: &[VehicleId]) -> f64 {
    let ticks = last.tick - initial.tick;
    tracked
        .iter()
        .filter_map(|id| Some((initial.vehicle(*id)?, last.vehicle(*id)?)))
        .map(|(start, end)| {
            let mut alone = initial.clone();
            alone.vehicles.retain(|k, _| k == &start.id);
            alone.collisions.clear();
            let v = alone.vehicle_mut(start.id).unwrap();
            v.speed_cap = None;
            v.wrecked = false;
            alone.run(ticks);
            let free = alone.vehicle(start.id).unwrap().odometer;
            (free - end.odometer).max(0.0) / start.desired
        })
        .sum()
}

pub fn stage_durations(iterations: &[Iteration]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for trace in iterations.iter().flat_map(|it| &it.traces) {
        let idx = Stage::ALL.iter().position(|s| *s == trace.stage).unwrap();
        out[idx] += trace.duration_s;
    }
    out
}

pub fn compute_metrics(
    iterations: &[Iteration],
    first_intervention: Option<u64>,
    resolved_tick: Option<u64>,
    before: f64,
    after: f64,
    travel_time_delta: f64,
) -> Metrics {
    let stage_durations = stage_durations(iterations);
    Metrics {
        time_to_clear: resolved_tick.map(|t| t - first_intervention.unwrap_or(t).min(t)),
        mean_speed_before: before,
        mean_speed_after: after,
        travel_time_delta,
        new_collisions: iterations.iter().filter_map(|it| it.log.as_ref()).map(|l| l.new_collisions.len()).sum(),
        total_duration: stage_durations.iter().sum(),
        stage_durations,
    }
}
