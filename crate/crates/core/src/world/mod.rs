//! Deterministic discrete-time lane-based traffic micro-world.
//!
//! Vehicles move along routes of lane segments under a gap-keeping
//! car-following rule. Crossing traffic at the four-approach intersection is
//! arbitrated through conflict-box cell grants. Collisions are detected as
//! 1-D interval overlap per lane plus co-occupancy of a conflict-box cell by
//! vehicles on different connectors.

mod dynamics;
pub mod geometry;
pub mod observe;
pub mod road;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use observe::{SceneObservation, VehicleRow};
pub use road::{Cell, Heading, LaneId, Movement, RoadNet, SegmentId, SegmentKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Seconds per tick.
    pub dt: f64,
    pub v_max: f64,
    /// Braking limit, also the bound on any per-tick speed change.
    pub a_max: f64,
    pub a_cruise: f64,
    /// Standstill gap d0 of the safe gap d0 + headway * v.
    pub min_gap: f64,
    pub headway: f64,
    pub reverse_speed_cap: f64,
    /// Consecutive held ticks after which a controller is safety-stopped.
    pub hold_limit: u32,
    pub position_tolerance: f64,
    /// Distance to the stop line at which a vehicle requests a box grant.
    pub grant_distance: f64,
    pub lookahead: f64,
    pub lane_change_cooldown: u64,
    /// Clearance kept to the vehicle behind while reversing or towing.
    pub reverse_clearance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            dt: 0.1,
            v_max: 16.7,
            a_max: 4.0,
            a_cruise: 2.0,
            min_gap: 2.0,
            headway: 1.0,
            reverse_speed_cap: 3.0,
            hold_limit: 50,
            position_tolerance: 0.05,
            grant_distance: 50.0,
            lookahead: 120.0,
            lane_change_cooldown: 30,
            reverse_clearance: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn safe_gap(&self, v: f64) -> f64 {
        self.min_gap + self.headway * v
    }
}

/// Vehicle identifier, written `v-<n>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v-{}", self.0)
    }
}

impl FromStr for VehicleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix("v-")
            .or_else(|| s.strip_prefix("V-"))
            .ok_or_else(|| format!("vehicle id `{s}` must look like v-<n>"))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("vehicle id `{s}` must look like v-<n>"));
        }
        digits
            .parse::<u32>()
            .map(VehicleId)
            .map_err(|_| format!("vehicle id `{s}` is out of range"))
    }
}

impl TryFrom<String> for VehicleId {
    type Error = String;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<VehicleId> for String {
    fn from(id: VehicleId) -> String {
        id.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneSide {
    /// Towards the higher lane index.
    Left,
    Right,
}

/// What happens to a vehicle's speed cap when a target-speed control completes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedRelease {
    /// Lift any cap; the vehicle returns to its own desired speed.
    Uncap,
    Keep,
    /// Cap the vehicle at the reached target.
    Cap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlInput {
    TargetSpeed { target: f64, release: SpeedRelease },
    Reverse { distance: f64, speed_cap: f64 },
    LaneChange(LaneSide),
    Halt,
    /// Shift onto the nearest downstream shoulder, then tow `distance` forward.
    Relocate { distance: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlStatus {
    Active,
    Done,
    SafetyStopped,
}

impl ControlStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, ControlStatus::Active)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActiveControl {
    pub input: ControlInput,
    pub status: ControlStatus,
    /// Consecutive ticks the commanded motion was withheld.
    pub held_ticks: u32,
    pub held_now: bool,
    /// Distance still to cover for reverse and tow motions.
    pub remaining: f64,
    /// Relocation has reached the shoulder.
    pub on_shoulder: bool,
}

impl ActiveControl {
    fn new(input: ControlInput) -> Self {
        let remaining = match &input {
            ControlInput::Reverse { distance, .. } => *distance,
            ControlInput::Relocate { distance } => *distance,
            _ => 0.0,
        };
        ActiveControl {
            input,
            status: ControlStatus::Active,
            held_ticks: 0,
            held_now: false,
            remaining,
            on_shoulder: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub lane: LaneId,
    /// Centre position from the start of `lane.segment`.
    pub s: f64,
    /// Speed magnitude; direction given by `reversing`.
    pub v: f64,
    pub reversing: bool,
    /// Acceleration applied on the last step (signed along the direction of travel).
    pub a: f64,
    pub length: f64,
    pub desired: f64,
    pub speed_cap: Option<f64>,
    pub route: Vec<SegmentId>,
    pub route_index: usize,
    pub wrecked: bool,
    pub exited: bool,
    /// Test hook: ignore gaps entirely.
    pub reckless: bool,
    pub stopped_ticks: u64,
    pub last_lane_change: Option<u64>,
    pub granted: bool,
    pub box_entry_tick: Option<u64>,
    pub odometer: f64,
    pub control: Option<ActiveControl>,
}

impl VehicleState {
    /// A vehicle at rest-free cruising defaults; callers adjust fields.
    pub fn new(id: VehicleId, lane: LaneId, s: f64, v: f64, route: Vec<SegmentId>) -> Self {
        VehicleState {
            id,
            lane,
            s,
            v,
            reversing: false,
            a: 0.0,
            length: 4.5,
            desired: v.max(1.0),
            speed_cap: None,
            route,
            route_index: 0,
            wrecked: false,
            exited: false,
            reckless: false,
            stopped_ticks: 0,
            last_lane_change: None,
            granted: false,
            box_entry_tick: None,
            odometer: 0.0,
            control: None,
        }
    }

    pub fn effective_desired(&self) -> f64 {
        match self.speed_cap {
            Some(cap) => self.desired.min(cap),
            None => self.desired,
        }
    }

    /// Signed speed along the route.
    pub fn signed_speed(&self) -> f64 {
        if self.reversing {
            -self.v
        } else {
            self.v
        }
    }

    pub fn is_active(&self) -> bool {
        !self.exited
    }

    pub fn control_status(&self) -> Option<ControlStatus> {
        self.control.as_ref().map(|c| c.status)
    }

    pub fn has_live_control(&self) -> bool {
        matches!(self.control_status(), Some(ControlStatus::Active))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum CollisionSite {
    Lane { segment: SegmentId, lane: u8, s: f64 },
    Cell { cell: Cell },
}

impl fmt::Display for CollisionSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CollisionSite::Lane { segment, lane, s } => write!(f, "lane:{segment}/{lane}@{s:.2}"),
            CollisionSite::Cell { cell } => write!(f, "cell:{}", cell.token()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub tick: u64,
    pub a: VehicleId,
    pub b: VehicleId,
    pub site: CollisionSite,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorldError {
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub config: WorldConfig,
    pub road: RoadNet,
    pub vehicles: BTreeMap<VehicleId, VehicleState>,
    /// Append-only within an episode.
    pub collisions: Vec<CollisionEvent>,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    pub fn new(config: WorldConfig, road: RoadNet, seed: u64) -> Self {
        WorldState {
            tick: 0,
            config,
            road,
            vehicles: BTreeMap::new(),
            collisions: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn insert(&mut self, vehicle: VehicleState) {
        self.vehicles.insert(vehicle.id, vehicle);
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.get(&id)
    }

    pub fn vehicle_mut(&mut self, id: VehicleId) -> Option<&mut VehicleState> {
        self.vehicles.get_mut(&id)
    }

    /// Advance one tick.
    pub fn step(&mut self) {
        dynamics::step(self);
    }

    pub fn run(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.step();
        }
    }

    /// Replace the vehicle's controller; it acts from the next step on.
    pub fn apply_control(&mut self, id: VehicleId, input: ControlInput) -> Result<(), WorldError> {
        let v_max = self.config.v_max;
        let vehicle = self.vehicles.get_mut(&id).ok_or(WorldError::UnknownVehicle(id))?;
        let input = match input {
            ControlInput::TargetSpeed { target, release } => ControlInput::TargetSpeed {
                target: target.clamp(0.0, v_max),
                release,
            },
            other => other,
        };
        vehicle.control = Some(ActiveControl::new(input));
        Ok(())
    }

    pub fn clear_control(&mut self, id: VehicleId) -> Result<(), WorldError> {
        let vehicle = self.vehicles.get_mut(&id).ok_or(WorldError::UnknownVehicle(id))?;
        vehicle.control = None;
        Ok(())
    }

    /// All currently overlapping vehicle pairs; pure.
    pub fn detect_collisions(&self) -> Vec<CollisionEvent> {
        geometry::detect_collisions(self)
    }

    pub fn observe(&self) -> SceneObservation {
        observe::observe(self)
    }

    /// Record overlaps not seen before and wreck the vehicles involved.
    /// Returns the number of new events.
    pub fn record_collisions(&mut self) -> usize {
        dynamics::record_collisions(self)
    }

    /// Vehicles whose body currently overlaps a conflict-box cell.
    pub fn box_occupants(&self) -> Vec<VehicleId> {
        let occ = geometry::Occupancy::build(self);
        let mut ids: Vec<VehicleId> = occ
            .cells
            .values()
            .flat_map(|list| list.iter().map(|(id, _)| *id))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn is_on_shoulder(&self, id: VehicleId) -> bool {
        self.vehicles
            .get(&id)
            .map(|v| {
                let seg = self.road.segment(v.lane.segment);
                seg.has_shoulder() && v.lane.index == seg.shoulder_index()
            })
            .unwrap_or(false)
    }
}
