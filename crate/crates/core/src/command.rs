//! The intervention command language: plan types, parser, validator and the
//! canonical serializer.
//!
//! ```text
//! FORMAT 1
//! PLAN accident
//! FAULT v-9 primary
//! FAULT v-0 none
//! ACTION v-9 relocate distance_m=8
//! ACTION v-0 relocate distance_m=8
//! ```

mod parse;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use crate::label::FaultDegree;
use crate::label::AnomalyLabel;
use crate::world::VehicleId;

pub use parse::{parse, parse_bytes, ParseError};
pub use validate::{validate, ValidatedPlan, ValidationError, MAX_DISTANCE_M};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    MoveForward,
    MoveBackward,
    ChangeLaneLeft,
    ChangeLaneRight,
    Stop,
    Relocate,
}

impl Verb {
    pub const ALL: [Verb; 6] = [
        Verb::MoveForward,
        Verb::MoveBackward,
        Verb::ChangeLaneLeft,
        Verb::ChangeLaneRight,
        Verb::Stop,
        Verb::Relocate,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Verb::MoveForward => "move_forward",
            Verb::MoveBackward => "move_backward",
            Verb::ChangeLaneLeft => "change_lane_left",
            Verb::ChangeLaneRight => "change_lane_right",
            Verb::Stop => "stop",
            Verb::Relocate => "relocate",
        }
    }

    pub fn requires_distance(self) -> bool {
        matches!(self, Verb::MoveBackward | Verb::Relocate)
    }

    pub fn accepts_speed(self) -> bool {
        matches!(self, Verb::MoveForward | Verb::MoveBackward)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedAdjust {
    Increase,
    Maintain,
    Decrease,
}

impl SpeedAdjust {
    pub const ALL: [SpeedAdjust; 3] = [SpeedAdjust::Increase, SpeedAdjust::Maintain, SpeedAdjust::Decrease];

    pub fn token(self) -> &'static str {
        match self {
            SpeedAdjust::Increase => "increase",
            SpeedAdjust::Maintain => "maintain",
            SpeedAdjust::Decrease => "decrease",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionCommand {
    pub vehicle: VehicleId,
    pub verb: Verb,
    pub distance_m: Option<f64>,
    pub speed: Option<SpeedAdjust>,
}

impl InterventionCommand {
    pub fn new(vehicle: VehicleId, verb: Verb) -> Self {
        InterventionCommand { vehicle, verb, distance_m: None, speed: None }
    }

    pub fn distance(mut self, metres: f64) -> Self {
        self.distance_m = Some(metres);
        self
    }

    pub fn speed(mut self, speed: SpeedAdjust) -> Self {
        self.speed = Some(speed);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultAssignment {
    pub vehicle: VehicleId,
    pub degree: FaultDegree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPlan {
    pub label: AnomalyLabel,
    pub commands: Vec<InterventionCommand>,
    pub faults: Vec<FaultAssignment>,
}

impl ResolutionPlan {
    pub fn new(label: AnomalyLabel) -> Self {
        ResolutionPlan { label, commands: Vec::new(), faults: Vec::new() }
    }

    pub fn command_for(&self, id: VehicleId) -> Option<&InterventionCommand> {
        self.commands.iter().find(|c| c.vehicle == id)
    }

    pub fn fault_of(&self, id: VehicleId) -> Option<FaultDegree> {
        self.faults.iter().find(|f| f.vehicle == id).map(|f| f.degree)
    }
}

impl fmt::Display for InterventionCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ACTION {} {}", self.vehicle, self.verb.token())?;
        if let Some(d) = self.distance_m {
            write!(f, " distance_m={d}")?;
        }
        if let Some(s) = self.speed {
            write!(f, " speed={}", s.token())?;
        }
        Ok(())
    }
}

/// Canonical text: header, faults, then actions, one per line, single
/// spaces, line keywords upper case and everything else lower case.
pub fn serialize(plan: &ResolutionPlan) -> String {
    let mut lines = vec![format!("PLAN {}", plan.label)];
    for fault in &plan.faults {
        lines.push(format!("FAULT {} {}", fault.vehicle, fault.degree));
    }
    for cmd in &plan.commands {
        lines.push(cmd.to_string());
    }
    lines.join("\n")
}

impl fmt::Display for ResolutionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const GHOST_JAM: &str = "PLAN ghost_jam\nACTION v-0 move_forward speed=increase\nACTION v-2 move_forward speed=maintain\nACTION v-1 move_forward speed=increase";
    pub(crate) const DEADLOCK: &str = "PLAN deadlock\nACTION v-8 move_backward distance_m=5 speed=increase\nACTION v-0 move_backward distance_m=6\nACTION v-3 move_backward distance_m=5\nACTION v-6 move_forward speed=maintain";
    pub(crate) const ACCIDENT: &str = "PLAN accident\nFAULT v-9 primary\nFAULT v-0 none\nACTION v-9 relocate distance_m=8\nACTION v-0 relocate distance_m=8";

    fn v(n: u32) -> VehicleId {
        VehicleId(n)
    }

    #[test]
    fn ghost_jam_example_structure() {
        let plan = parse(GHOST_JAM).unwrap();
        assert_eq!(
            plan,
            ResolutionPlan {
                label: AnomalyLabel::GhostJam,
                commands: vec![
                    InterventionCommand::new(v(0), Verb::MoveForward).speed(SpeedAdjust::Increase),
                    InterventionCommand::new(v(2), Verb::MoveForward).speed(SpeedAdjust::Maintain),
                    InterventionCommand::new(v(1), Verb::MoveForward).speed(SpeedAdjust::Increase),
                ],
                faults: vec![],
            }
        );
    }

    #[test]
    fn deadlock_example_structure() {
        let plan = parse(DEADLOCK).unwrap();
        assert_eq!(
            plan,
            ResolutionPlan {
                label: AnomalyLabel::Deadlock,
                commands: vec![
                    InterventionCommand::new(v(8), Verb::MoveBackward).distance(5.0).speed(SpeedAdjust::Increase),
                    InterventionCommand::new(v(0), Verb::MoveBackward).distance(6.0),
                    InterventionCommand::new(v(3), Verb::MoveBackward).distance(5.0),
                    InterventionCommand::new(v(6), Verb::MoveForward).speed(SpeedAdjust::Maintain),
                ],
                faults: vec![],
            }
        );
    }

    #[test]
    fn accident_example_structure() {
        let plan = parse(ACCIDENT).unwrap();
        assert_eq!(
            plan,
            ResolutionPlan {
                label: AnomalyLabel::Accident,
                commands: vec![
                    InterventionCommand::new(v(9), Verb::Relocate).distance(8.0),
                    InterventionCommand::new(v(0), Verb::Relocate).distance(8.0),
                ],
                faults: vec![
                    FaultAssignment { vehicle: v(9), degree: FaultDegree::Primary },
                    FaultAssignment { vehicle: v(0), degree: FaultDegree::None },
                ],
            }
        );
    }

    #[test]
    fn examples_serialize_back_to_themselves() {
        for text in [GHOST_JAM, DEADLOCK, ACCIDENT] {
            let plan = parse(text).unwrap();
            assert_eq!(serialize(&plan), text);
            assert_eq!(parse(&serialize(&plan)).unwrap(), plan);
        }
    }

    #[test]
    fn empty_normal_plan_is_one_line() {
        assert_eq!(serialize(&ResolutionPlan::new(AnomalyLabel::Normal)), "PLAN normal");
    }

    fn arb_command() -> impl Strategy<Value = InterventionCommand> {
        (0u32..200, prop::sample::select(Verb::ALL.to_vec()), 1u32..2000, prop::option::of(prop::sample::select(SpeedAdjust::ALL.to_vec())))
            .prop_map(|(id, verb, centi, speed)| InterventionCommand {
                vehicle: VehicleId(id),
                verb,
                distance_m: verb.requires_distance().then(|| centi as f64 / 100.0),
                speed: if verb.accepts_speed() { speed } else { None },
            })
    }

    pub(crate) fn arb_plan() -> impl Strategy<Value = ResolutionPlan> {
        (
            prop::sample::select(AnomalyLabel::ALL.to_vec()),
            prop::collection::vec(arb_command(), 0..8),
            prop::collection::vec((0u32..200, prop::sample::select(vec![FaultDegree::Secondary, FaultDegree::None])), 1..4),
            any::<bool>(),
        )
            .prop_map(|(label, commands, mut faults, with_primary)| {
                let faults = if label == AnomalyLabel::Accident {
                    if with_primary {
                        faults[0].1 = FaultDegree::Primary;
                    }
                    faults.into_iter().map(|(id, degree)| FaultAssignment { vehicle: VehicleId(id), degree }).collect()
                } else {
                    Vec::new()
                };
                ResolutionPlan { label, commands, faults }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn parse_inverts_serialize(plan in arb_plan()) {
            let text = serialize(&plan);
            prop_assert_eq!(parse(&text).unwrap(), plan);
        }
    }
}
