use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five scene classes the scene stage distinguishes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyLabel {
    Normal,
    Congestion,
    GhostJam,
    Deadlock,
    Accident,
}

impl AnomalyLabel {
    pub const ALL: [AnomalyLabel; 5] = [
        AnomalyLabel::Normal,
        AnomalyLabel::Congestion,
        AnomalyLabel::GhostJam,
        AnomalyLabel::Deadlock,
        AnomalyLabel::Accident,
    ];

    /// Labels that describe an anomaly requiring intervention.
    pub const ANOMALIES: [AnomalyLabel; 3] =
        [AnomalyLabel::GhostJam, AnomalyLabel::Deadlock, AnomalyLabel::Accident];

    pub fn token(self) -> &'static str {
        match self {
            AnomalyLabel::Normal => "normal",
            AnomalyLabel::Congestion => "congestion",
            AnomalyLabel::GhostJam => "ghost_jam",
            AnomalyLabel::Deadlock => "deadlock",
            AnomalyLabel::Accident => "accident",
        }
    }

    pub fn requires_resolution(self) -> bool {
        matches!(
            self,
            AnomalyLabel::GhostJam | AnomalyLabel::Deadlock | AnomalyLabel::Accident
        )
    }
}

impl fmt::Display for AnomalyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown anomaly label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for AnomalyLabel {
    type Err = UnknownLabel;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        AnomalyLabel::ALL
            .into_iter()
            .find(|l| l.token() == lower)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Responsibility degree in an accident.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultDegree {
    Primary,
    Secondary,
    None,
}

impl FaultDegree {
    pub const ALL: [FaultDegree; 3] = [FaultDegree::Primary, FaultDegree::Secondary, FaultDegree::None];

    pub fn token(self) -> &'static str {
        match self {
            FaultDegree::Primary => "primary",
            FaultDegree::Secondary => "secondary",
            FaultDegree::None => "none",
        }
    }
}

impl fmt::Display for FaultDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_round_trip() {
        for label in AnomalyLabel::ALL {
            assert_eq!(label.token().parse::<AnomalyLabel>().unwrap(), label);
        }
        assert_eq!("GHOST_JAM".parse::<AnomalyLabel>().unwrap(), AnomalyLabel::GhostJam);
        assert!("jam".parse::<AnomalyLabel>().is_err());
    }
}
