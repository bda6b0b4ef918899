use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ResolutionPlan, Verb};
use crate::world::{SceneObservation, VehicleId};

/// Upper bound on commanded distances.
pub const MAX_DISTANCE_M: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("{vehicle}: distance {distance} m outside (0, {MAX_DISTANCE_M}]")]
    OutOfRange { vehicle: VehicleId, distance: f64 },
    #[error("{vehicle}: {verb} not allowed: {reason}")]
    IllegalVerbForState { vehicle: VehicleId, verb: &'static str, reason: &'static str },
    #[error("more than one command or fault for {0}")]
    DuplicateTarget(VehicleId),
}

/// A plan checked against the observation it will run on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidatedPlan {
    pub plan: ResolutionPlan,
    pub tick: u64,
}

pub fn validate(plan: &ResolutionPlan, obs: &SceneObservation) -> Result<ValidatedPlan, ValidationError> {
    let mut commanded = BTreeSet::new();
    for cmd in &plan.commands {
        let row = obs.vehicle(cmd.vehicle).ok_or(ValidationError::UnknownVehicle(cmd.vehicle))?;
        if !commanded.insert(cmd.vehicle) {
            return Err(ValidationError::DuplicateTarget(cmd.vehicle));
        }
        if let Some(d) = cmd.distance_m {
            if !(d > 0.0 && d <= MAX_DISTANCE_M) {
                return Err(ValidationError::OutOfRange { vehicle: cmd.vehicle, distance: d });
            }
        }
        let illegal = |reason| ValidationError::IllegalVerbForState { vehicle: cmd.vehicle, verb: cmd.verb.token(), reason };
        if row.exited {
            return Err(illegal("vehicle has left the network"));
        }
        match (cmd.verb, row.wrecked) {
            (Verb::Relocate, false) => return Err(illegal("only wrecked vehicles are relocated")),
            (Verb::Relocate, true) => {}
            (_, true) => return Err(illegal("wrecked vehicles can only be relocated")),
            _ => {}
        }
    }
    let mut assigned = BTreeSet::new();
    for fault in &plan.faults {
        obs.vehicle(fault.vehicle).ok_or(ValidationError::UnknownVehicle(fault.vehicle))?;
        if !assigned.insert(fault.vehicle) {
            return Err(ValidationError::DuplicateTarget(fault.vehicle));
        }
    }
    Ok(ValidatedPlan { plan: plan.clone(), tick: obs.tick })
}
