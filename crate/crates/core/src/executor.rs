//! Turns validated plans into vehicle controls and drives the world under
//! them, closing the loop back through the pipeline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::command::{SpeedAdjust, ValidatedPlan, Verb};
use crate::world::{CollisionEvent, ControlInput, ControlStatus, LaneSide, SpeedRelease, VehicleId, WorldState};

mod closed_loop;

pub use closed_loop::{run_closed_loop, LoopConfig};

/// Ticks a validated plan stays fresh.
pub const STALENESS_TICKS: u64 = 10;
/// Speed change requested by `increase` and `decrease`.
pub const SPEED_STEP: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Program {
    Forward { target: f64, release: SpeedRelease },
    Reverse { distance: f64, speed_cap: f64 },
    LaneChange { side: LaneSide },
    Stop,
    Relocate { distance: f64 },
}

impl Program {
    fn input(&self) -> ControlInput {
        match *self {
            Program::Forward { target, release } => ControlInput::TargetSpeed { target, release },
            Program::Reverse { distance, speed_cap } => ControlInput::Reverse { distance, speed_cap },
            Program::LaneChange { side } => ControlInput::LaneChange(side),
            Program::Stop => ControlInput::Halt,
            Program::Relocate { distance } => ControlInput::Relocate { distance },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerStatus {
    Pending,
    Active,
    Done,
    SafetyStopped,
}

impl ControllerStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ControllerStatus::Done | ControllerStatus::SafetyStopped)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleController {
    pub vehicle: VehicleId,
    pub program: Program,
    pub status: ControllerStatus,
    /// Controllers in phase 1 wait until every phase 0 controller is terminal.
    pub phase: u8,
    /// Odometer reading when the controller went live.
    #[serde(skip)]
    start_odometer: f64,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("plan validated at tick {validated} is stale at tick {now}")]
    StalePlan { validated: u64, now: u64 },
    #[error("vehicle {0} is not in the world")]
    UnknownVehicle(VehicleId),
}

pub fn compile(plan: &ValidatedPlan, world: &WorldState) -> Result<Vec<VehicleController>, ExecError> {
    if world.tick >= plan.tick + STALENESS_TICKS {
        return Err(ExecError::StalePlan { validated: plan.tick, now: world.tick });
    }
    let cfg = &world.config;
    let barrier = plan.plan.commands.iter().any(|c| c.verb == Verb::MoveBackward);
    plan.plan
        .commands
        .iter()
        .map(|cmd| {
            let v = world.vehicle(cmd.vehicle).ok_or(ExecError::UnknownVehicle(cmd.vehicle))?.v;
            let program = match cmd.verb {
                Verb::MoveForward => match cmd.speed.unwrap_or(SpeedAdjust::Maintain) {
                    SpeedAdjust::Increase => {
                        Program::Forward { target: (v + SPEED_STEP).min(cfg.v_max), release: SpeedRelease::Uncap }
                    }
                    SpeedAdjust::Maintain => Program::Forward { target: v, release: SpeedRelease::Keep },
                    SpeedAdjust::Decrease => {
                        Program::Forward { target: (v - SPEED_STEP).max(0.0), release: SpeedRelease::Cap }
                    }
                },
                Verb::MoveBackward => Program::Reverse {
                    distance: cmd.distance_m.unwrap_or_default(),
                    speed_cap: match cmd.speed {
                        Some(SpeedAdjust::Decrease) => cfg.reverse_speed_cap / 2.0,
                        _ => cfg.reverse_speed_cap,
                    },
                },
                Verb::ChangeLaneLeft => Program::LaneChange { side: LaneSide::Left },
                Verb::ChangeLaneRight => Program::LaneChange { side: LaneSide::Right },
                Verb::Stop => Program::Stop,
                Verb::Relocate => Program::Relocate { distance: cmd.distance_m.unwrap_or_default() },
            };
            let phase = u8::from(barrier && cmd.verb == Verb::MoveForward);
            Ok(VehicleController {
                vehicle: cmd.vehicle,
                program,
                status: ControllerStatus::Pending,
                phase,
                start_odometer: 0.0,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedControl {
    pub tick: u64,
    pub vehicle: VehicleId,
    pub program: Program,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub vehicle: VehicleId,
    pub tick: u64,
    pub status: ControllerStatus,
    /// Signed distance covered along the route while the controller ran.
    pub displacement: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub start_tick: u64,
    pub end_tick: u64,
    pub applied: Vec<AppliedControl>,
    /// (tick, vehicle) for every tick a commanded motion was withheld.
    pub holds: Vec<(u64, VehicleId)>,
    pub completions: Vec<Completion>,
    pub new_collisions: Vec<CollisionEvent>,
    pub resolved_tick: Option<u64>,
}

impl ExecutionLog {
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("log serializes")))
    }

    pub fn completion(&self, vehicle: VehicleId) -> Option<&Completion> {
        self.completions.iter().find(|c| c.vehicle == vehicle)
    }
}

/// Tick-by-tick driver for a set of controllers.
pub struct Execution {
    pub controllers: Vec<VehicleController>,
    pub log: ExecutionLog,
    collisions_before: usize,
}

impl Execution {
    pub fn new(world: &WorldState, controllers: Vec<VehicleController>) -> Self {
        Execution {
            controllers,
            log: ExecutionLog { start_tick: world.tick, end_tick: world.tick, ..ExecutionLog::default() },
            collisions_before: world.collisions.len(),
        }
    }

    pub fn finished(&self) -> bool {
        self.controllers.iter().all(|c| c.status.is_terminal())
    }

    fn activate(&mut self, world: &mut WorldState) {
        let barrier_open = self.controllers.iter().filter(|c| c.phase == 0).all(|c| c.status.is_terminal());
        for c in &mut self.controllers {
            if c.status != ControllerStatus::Pending || (c.phase > 0 && !barrier_open) {
                continue;
            }
            let Some(v) = world.vehicle(c.vehicle) else {
                c.status = ControllerStatus::SafetyStopped;
                continue;
            };
            let program = c.program.clone();
            c.start_odometer = v.odometer;
            c.status = ControllerStatus::Active;
            world.apply_control(c.vehicle, program.input()).expect("vehicle checked above");
            self.log.applied.push(AppliedControl { tick: world.tick, vehicle: c.vehicle, program });
        }
    }

    /// Apply pending controllers, advance one tick and record outcomes.
    pub fn tick(&mut self, world: &mut WorldState) {
        self.activate(world);
        world.step();
        for c in &mut self.controllers {
            if c.status != ControllerStatus::Active {
                continue;
            }
            let v = world.vehicle(c.vehicle).expect("controlled vehicle exists");
            let ctl = v.control.as_ref();
            if ctl.map(|k| k.held_now).unwrap_or(false) {
                self.log.holds.push((world.tick, c.vehicle));
            }
            let status = match ctl.map(|k| k.status) {
                Some(ControlStatus::Active) if !v.exited => continue,
                Some(ControlStatus::SafetyStopped) => ControllerStatus::SafetyStopped,
                _ => ControllerStatus::Done,
            };
            c.status = status;
            self.log.completions.push(Completion {
                vehicle: c.vehicle,
                tick: world.tick,
                status,
                displacement: v.odometer - c.start_odometer,
            });
        }
        self.log.new_collisions = world.collisions[self.collisions_before..].to_vec();
        self.log.end_tick = world.tick;
    }
}

/// Step until every controller is terminal or the budget runs out.
pub fn execute(world: &mut WorldState, controllers: Vec<VehicleController>, budget: u64) -> ExecutionLog {
    let mut run = Execution::new(world, controllers);
    for _ in 0..budget {
        if run.finished() {
            break;
        }
        run.tick(world);
    }
    run.log
}
