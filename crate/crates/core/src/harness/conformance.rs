use std::fmt;

use serde::{Deserialize, Serialize};

use crate::label::AnomalyLabel;
use crate::pipeline::{run_pipeline, Resolver, Stage};
use crate::scenario::{build, warm_up, ScenarioError, ScenarioSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformanceChecklist {
    pub resolver: String,
    /// Scene, analysis, solution, formatting.
    pub stages: [bool; 4],
    pub episodes: usize,
}

impl ConformanceChecklist {
    pub fn passed(&self, stage: Stage) -> bool {
        self.stages[Stage::ALL.iter().position(|s| *s == stage).unwrap()]
    }

    pub fn marks(&self) -> String {
        self.stages.iter().map(|ok| if *ok { '✓' } else { '✗' }).collect()
    }
}

impl fmt::Display for ConformanceChecklist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:<8} {:<8} {:<8} formatting", "resolver", "scene", "analysis", "solution")?;
        let mark = |ok: bool| if ok { "✓" } else { "✗" };
        write!(
            f,
            "{:<20} {:<8} {:<8} {:<8} {}",
            self.resolver,
            mark(self.stages[0]),
            mark(self.stages[1]),
            mark(self.stages[2]),
            mark(self.stages[3])
        )
    }
}

/// A stage passes when every suite episode gets through it.
pub fn conformance(resolver: &dyn Resolver, kinds: &[AnomalyLabel], seeds: u64) -> Result<ConformanceChecklist, ScenarioError> {
    let mut stages = [true; 4];
    let mut episodes = 0;
    for kind in kinds {
        for seed in 0..seeds {
            let (mut world, _) = build(&ScenarioSpec::new(*kind, seed))?;
            warm_up(&mut world);
            episodes += 1;
            if let Err(failure) = run_pipeline(&world.observe(), resolver) {
                let failed = Stage::ALL.iter().position(|s| *s == failure.error.stage()).unwrap();
                stages[failed..].iter_mut().for_each(|s| *s = false);
            }
        }
    }
    Ok(ConformanceChecklist { resolver: resolver.name().to_string(), stages, episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::oracle::{ClassifierOnly, OracleResolver};

    #[test]
    fn oracle_and_classifier_only() {
        let oracle = conformance(&OracleResolver::default(), &AnomalyLabel::ALL, 2).unwrap();
        assert_eq!(oracle.marks(), "✓✓✓✓");
        let stub = conformance(&ClassifierOnly::default(), &AnomalyLabel::ALL, 2).unwrap();
        assert_eq!(stub.marks(), "✓✗✗✗");
        assert!(stub.to_string().contains("classifier-only"));
    }
}
