//! Staged scenes for the five classes, with ground truth and a resolution
//! predicate per class.

mod build;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kv::{self, KvError};
use crate::label::{AnomalyLabel, FaultDegree};
use crate::world::{VehicleId, WorldState};

pub use build::build;

/// Ticks simulated after building before the first observation.
pub const WARMUP_TICKS: u64 = 300;
/// Ticks at rest before a box standstill counts as deadlock.
pub const DEADLOCK_WINDOW: u64 = 50;

pub const DEFAULT_TICK_BUDGET: u64 = 3000;
pub const DEFAULT_RESOLVE_BUDGET: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: AnomalyLabel,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub tick_budget: u64,
    pub resolve_budget: u32,
}

impl ScenarioSpec {
    pub fn new(kind: AnomalyLabel, seed: u64) -> Self {
        ScenarioSpec {
            kind,
            seed,
            params: BTreeMap::new(),
            tick_budget: DEFAULT_TICK_BUDGET,
            resolve_budget: DEFAULT_RESOLVE_BUDGET,
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn param(&self, name: &str, default: f64) -> f64 {
        self.params.get(name).copied().unwrap_or(default)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.tick_budget == 0 || self.resolve_budget == 0 {
            return Err(ScenarioError::InvalidParams("budgets must be positive".into()));
        }
        Ok(())
    }

    /// The documented file form; `parse` reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("kind = {}\n", self.kind));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("tick_budget = {}\n", self.tick_budget));
        out.push_str(&format!("resolve_budget = {}\n", self.resolve_budget));
        for (name, value) in &self.params {
            out.push_str(&format!("param.{name} = {value}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<ScenarioSpec, ScenarioError> {
        let entries = kv::parse(text)?;
        let mut kind = None;
        let mut seed = None;
        let mut spec_params = BTreeMap::new();
        let mut tick_budget = DEFAULT_TICK_BUDGET;
        let mut resolve_budget = DEFAULT_RESOLVE_BUDGET;
        for entry in &entries {
            match entry.key.as_str() {
                "kind" => {
                    kind = Some(entry.value.parse::<AnomalyLabel>().map_err(|e| {
                        KvError::new(entry.line, Some("kind"), e.to_string())
                    })?)
                }
                "seed" => seed = Some(kv::parse_u64(entry)?),
                "tick_budget" => tick_budget = kv::parse_u64(entry)?,
                "resolve_budget" => {
                    resolve_budget = u32::try_from(kv::parse_u64(entry)?).map_err(|_| {
                        KvError::new(entry.line, Some("resolve_budget"), "value too large")
                    })?
                }
                key => match key.strip_prefix("param.") {
                    Some(name) if !name.is_empty() => {
                        spec_params.insert(name.to_string(), kv::parse_f64(entry)?);
                    }
                    _ => return Err(KvError::new(entry.line, Some(key), "unknown field").into()),
                },
            }
        }
        let last = entries.last().map(|e| e.line).unwrap_or(0);
        let spec = ScenarioSpec {
            kind: kind.ok_or_else(|| KvError::new(last, Some("kind"), "missing field"))?,
            seed: seed.ok_or_else(|| KvError::new(last, Some("seed"), "missing field"))?,
            params: spec_params,
            tick_budget,
            resolve_budget,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn load_spec(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    ScenarioSpec::parse(&text)
}

pub fn save_spec(spec: &ScenarioSpec, path: &Path) -> Result<(), ScenarioError> {
    std::fs::write(path, spec.to_text()).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error("scenario file: {0}")]
    Parse(#[from] KvError),
    #[error("scenario file: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: AnomalyLabel,
    /// GhostJam: lead blocker, trailing blocker, then followers.
    /// Deadlock: reversal order, the vehicle that proceeds last.
    /// Accident: violator, other party.
    pub involved: Vec<VehicleId>,
    pub fault: Option<BTreeMap<VehicleId, FaultDegree>>,
}

impl GroundTruth {
    /// Vehicles whose speeds the ghost-jam predicate averages.
    pub fn followers(&self) -> &[VehicleId] {
        match self.label {
            AnomalyLabel::GhostJam => self.involved.get(2..).unwrap_or(&[]),
            _ => &[],
        }
    }
}

/// Share of desired speed the queued vehicles must regain.
pub const GHOST_JAM_RECOVERY: f64 = 0.6;

pub fn is_resolved(world: &WorldState, truth: &GroundTruth) -> bool {
    match truth.label {
        AnomalyLabel::Normal | AnomalyLabel::Congestion => true,
        AnomalyLabel::GhostJam => {
            let (mut speed, mut desired) = (0.0, 0.0);
            for id in truth.followers() {
                let Some(v) = world.vehicle(*id) else { continue };
                speed += if v.exited { v.desired } else { v.signed_speed() };
                desired += v.desired;
            }
            desired > 0.0 && speed >= GHOST_JAM_RECOVERY * desired
        }
        AnomalyLabel::Deadlock => {
            world.box_occupants().is_empty()
                && truth
                    .involved
                    .iter()
                    .filter_map(|id| world.vehicle(*id))
                    .all(|v| v.exited || v.signed_speed() > 0.0)
        }
        AnomalyLabel::Accident => truth
            .involved
            .iter()
            .filter_map(|id| world.vehicle(*id))
            .filter(|v| v.wrecked)
            .all(|v| world.is_on_shoulder(v.id)),
    }
}

/// Run the warm-up period on a freshly built world.
pub fn warm_up(world: &mut WorldState) {
    world.run(WARMUP_TICKS);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_text_round_trip() {
        let spec = ScenarioSpec::new(AnomalyLabel::GhostJam, 7)
            .with_param("followers", 5.0)
            .with_param("slow_speed", 2.75);
        let back = ScenarioSpec::parse(&spec.to_text()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unknown_kind_names_the_field() {
        let err = ScenarioSpec::parse("kind = traffic\nseed = 1\n").unwrap_err();
        match err {
            ScenarioError::Parse(e) => {
                assert_eq!(e.field.as_deref(), Some("kind"));
                assert_eq!(e.line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_budget_is_rejected() {
        let err = ScenarioSpec::parse("kind = deadlock\nseed = 1\nresolve_budget = 0\n").unwrap_err();
        assert!(matches!(err, ScenarioError::InvalidParams(_)));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = ScenarioSpec::parse("kind = deadlock\nseed = 1\nspeed = 3\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(KvError { line: 3, .. })));
    }
}
