//! Stage prompts. Each template holds a system part and a user part
//! separated by a `---` line.

use super::{parse_scene_output, Stage, StageRequest};

pub const GRAMMAR: &str = include_str!("../../prompts/grammar.txt");

fn template(stage: Stage) -> &'static str {
    match stage {
        Stage::Scene => include_str!("../../prompts/scene.txt"),
        Stage::Analysis => include_str!("../../prompts/analysis.txt"),
        Stage::Solution => include_str!("../../prompts/solution.txt"),
        Stage::Formatting => include_str!("../../prompts/formatting.txt"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

pub fn render(request: &StageRequest<'_>) -> Prompt {
    let prior = |i: usize| request.prior.get(i).map(String::as_str).unwrap_or("");
    let label = parse_scene_output(prior(0)).map(|l| l.to_string()).unwrap_or_default();
    let diagnostics = request
        .diagnostics
        .map(|d| format!("\nYour previous plan was rejected: {d}\nReply with a corrected plan."))
        .unwrap_or_default();
    let fill = |text: &str| {
        text.replace("{{scene}}", request.scene_text)
            .replace("{{label}}", &label)
            .replace("{{analysis}}", prior(1))
            .replace("{{solution}}", prior(2))
            .replace("{{grammar}}", GRAMMAR.trim_end())
            .replace("{{diagnostics}}", &diagnostics)
    };
    let (system, user) = template(request.stage).split_once("\n---\n").expect("template has a separator");
    Prompt { system: fill(system).trim().to_string(), user: fill(user).trim().to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::AnomalyLabel;
    use crate::scenario::{build, ScenarioSpec};

    #[test]
    fn every_placeholder_is_filled() {
        let obs = build(&ScenarioSpec::new(AnomalyLabel::Accident, 2)).unwrap().0.observe();
        let scene = obs.to_text();
        let prior = vec!["LABEL: accident".to_string(), "LABEL: accident".into(), "- v-9: stop".into()];
        for stage in Stage::ALL {
            let request =
                StageRequest { stage, observation: &obs, scene_text: &scene, prior: &prior, diagnostics: Some("line 1") };
            let prompt = render(&request);
            assert!(!prompt.system.contains("{{") && !prompt.user.contains("{{"), "{stage}");
            assert!(!prompt.system.is_empty() && !prompt.user.is_empty());
        }
    }
}
