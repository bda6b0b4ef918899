//! Four-stage reasoning pipeline: Scene, Analysis, Solution, Formatting.
//!
//! Each stage sees the scene text plus every earlier stage's output. The
//! backend behind the stages is a [`Resolver`]: the rule-based
//! [`oracle::OracleResolver`] or a chat-completions endpoint
//! ([`remote::RemoteResolver`]).

pub mod oracle;
pub mod prompt;
pub mod remote;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::command::{self, ResolutionPlan};
use crate::label::AnomalyLabel;
use crate::world::{SceneObservation, VehicleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scene,
    Analysis,
    Solution,
    Formatting,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Scene, Stage::Analysis, Stage::Solution, Stage::Formatting];

    pub fn token(self) -> &'static str {
        match self {
            Stage::Scene => "scene",
            Stage::Analysis => "analysis",
            Stage::Solution => "solution",
            Stage::Formatting => "formatting",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseCode {
    SlowPairBlocking,
    RightOfWayGridlock,
    FailureToYield,
    ImproperLaneChange,
    None,
}

impl CauseCode {
    pub const ALL: [CauseCode; 5] = [
        CauseCode::SlowPairBlocking,
        CauseCode::RightOfWayGridlock,
        CauseCode::FailureToYield,
        CauseCode::ImproperLaneChange,
        CauseCode::None,
    ];

    pub fn token(self) -> &'static str {
        match self {
            CauseCode::SlowPairBlocking => "slow_pair_blocking",
            CauseCode::RightOfWayGridlock => "right_of_way_gridlock",
            CauseCode::FailureToYield => "failure_to_yield",
            CauseCode::ImproperLaneChange => "improper_lane_change",
            CauseCode::None => "none",
        }
    }

    pub fn fits(self, label: AnomalyLabel) -> bool {
        match label {
            AnomalyLabel::GhostJam => self == CauseCode::SlowPairBlocking,
            AnomalyLabel::Deadlock => self == CauseCode::RightOfWayGridlock,
            AnomalyLabel::Accident => matches!(self, CauseCode::FailureToYield | CauseCode::ImproperLaneChange),
            AnomalyLabel::Normal | AnomalyLabel::Congestion => self == CauseCode::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub label: AnomalyLabel,
    pub cause: CauseCode,
    pub involved: Vec<VehicleId>,
    pub narrative: String,
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let involved: Vec<String> = self.involved.iter().map(|v| v.to_string()).collect();
        format!(
            "LABEL: {}\nCAUSE: {}\nINVOLVED: {}\nNARRATIVE: {}",
            self.label,
            self.cause.token(),
            involved.join(", "),
            self.narrative
        )
    }

    /// Read the `KEY: value` lines of an analysis stage output.
    pub fn parse(text: &str) -> Result<AnalysisReport, String> {
        let label = field(text, "LABEL").ok_or("missing LABEL line")?;
        let label = label.parse::<AnomalyLabel>().map_err(|e| e.to_string())?;
        let cause = field(text, "CAUSE").ok_or("missing CAUSE line")?;
        let cause = CauseCode::ALL
            .into_iter()
            .find(|c| c.token().eq_ignore_ascii_case(cause.trim()))
            .ok_or_else(|| format!("unknown cause `{cause}`"))?;
        let involved = field(text, "INVOLVED").ok_or("missing INVOLVED line")?;
        let involved = involved
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<VehicleId>())
            .collect::<Result<Vec<_>, _>>()?;
        let narrative = field(text, "NARRATIVE").unwrap_or_default();
        Ok(AnalysisReport { label, cause, involved, narrative })
    }
}

/// Value of the first `KEY: value` line, case-insensitive on the key.
pub fn field(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let line = line.trim().trim_start_matches(['*', '#', '-']).trim();
        let (k, v) = line.split_once(':')?;
        k.trim().trim_matches('*').eq_ignore_ascii_case(key).then(|| v.trim().trim_matches('*').trim().to_string())
    })
}

/// Scene-stage output: a `LABEL:` line, or a bare label.
pub fn parse_scene_output(text: &str) -> Result<AnomalyLabel, String> {
    if let Some(value) = field(text, "LABEL") {
        return value.parse::<AnomalyLabel>().map_err(|e| e.to_string());
    }
    text.trim()
        .parse::<AnomalyLabel>()
        .map_err(|_| "no `LABEL:` line in scene output".to_string())
}

/// Drop markdown code fences that chat models like to add.
pub fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: Stage,
    /// sha256 of everything the stage was given.
    pub input_digest: String,
    pub output: String,
    pub duration_s: f64,
    pub attempts: u32,
}

/// Per-stage validity, one flag per stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub scene: bool,
    pub analysis: bool,
    pub solution: bool,
    pub formatting: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities { scene: true, analysis: true, solution: true, formatting: true };
}

pub struct StageRequest<'a> {
    pub stage: Stage,
    pub observation: &'a SceneObservation,
    pub scene_text: &'a str,
    /// Outputs of the earlier stages, in order.
    pub prior: &'a [String],
    /// Parser diagnostics when re-asking the Formatting stage.
    pub diagnostics: Option<&'a str>,
}

impl StageRequest<'_> {
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.stage.token());
        h.update([0]);
        h.update(self.scene_text);
        for p in self.prior {
            h.update([0]);
            h.update(p);
        }
        if let Some(d) = self.diagnostics {
            h.update([1]);
            h.update(d);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ResolverError {
    /// The backend declines or cannot produce this stage.
    #[error("{0}")]
    Refused(String),
    #[error("inconsistent scene: {0}")]
    InconsistentScene(String),
    #[error("no feasible action: {0}")]
    NoFeasibleAction(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    BudgetExceeded { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

impl ResolverError {
    /// Failures of the connection rather than of the reasoning.
    pub fn is_transport(&self) -> bool {
        matches!(self, ResolverError::Transport(_) | ResolverError::Auth(_) | ResolverError::BudgetExceeded { .. })
    }
}

pub trait Resolver: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    /// The harness serialises calls when this is set.
    fn single_flight(&self) -> bool {
        false
    }

    fn respond(&self, request: &StageRequest<'_>) -> Result<String, ResolverError>;
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("stage {stage} failed: {detail}")]
    StageFailure { stage: Stage, detail: String },
    #[error("stage {stage}: {error}")]
    Resolver { stage: Stage, error: ResolverError },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::StageFailure { stage, .. } | PipelineError::Resolver { stage, .. } => *stage,
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, PipelineError::Resolver { error, .. } if error.is_transport())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub label: AnomalyLabel,
    pub report: AnalysisReport,
    pub plan: ResolutionPlan,
    pub traces: Vec<StageTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineFailure {
    pub error: PipelineError,
    /// Stages completed or attempted before the failure.
    pub traces: Vec<StageTrace>,
}

fn failure(stage: Stage, detail: impl Into<String>) -> PipelineError {
    PipelineError::StageFailure { stage, detail: detail.into() }
}

/// Ask one stage, timing the call, and record the trace.
fn ask(
    resolver: &dyn Resolver,
    obs: &SceneObservation,
    scene_text: &str,
    stage: Stage,
    prior: &[String],
    diagnostics: Option<&str>,
) -> (Result<String, PipelineError>, String, f64) {
    let request = StageRequest { stage, observation: obs, scene_text, prior, diagnostics };
    let digest = request.digest();
    let started = Instant::now();
    let result = resolver.respond(&request).map_err(|error| match error {
        ResolverError::Refused(d) | ResolverError::InconsistentScene(d) | ResolverError::NoFeasibleAction(d) => {
            failure(stage, d)
        }
        other => PipelineError::Resolver { stage, error: other },
    });
    (result, digest, started.elapsed().as_secs_f64())
}

/// Run the four stages in order against one observation.
pub fn run_pipeline(obs: &SceneObservation, resolver: &dyn Resolver) -> Result<PipelineOutput, PipelineFailure> {
    let scene_text = obs.to_text();
    let mut traces = Vec::new();
    let mut prior: Vec<String> = Vec::new();
    macro_rules! bail {
        ($err:expr) => {
            return Err(PipelineFailure { error: $err, traces })
        };
    }
    let push = |traces: &mut Vec<StageTrace>, stage, digest, output: &str, duration, attempts| {
        traces.push(StageTrace { stage, input_digest: digest, output: output.to_string(), duration_s: duration, attempts });
    };

    // Scene
    let (res, digest, dt) = ask(resolver, obs, &scene_text, Stage::Scene, &prior, None);
    let text = match res {
        Ok(t) => t,
        Err(e) => {
            push(&mut traces, Stage::Scene, digest, "", dt, 1);
            bail!(e)
        }
    };
    push(&mut traces, Stage::Scene, digest, &text, dt, 1);
    let label = match parse_scene_output(&text) {
        Ok(l) => l,
        Err(e) => bail!(failure(Stage::Scene, e)),
    };
    prior.push(text);

    // Analysis
    let (res, digest, dt) = ask(resolver, obs, &scene_text, Stage::Analysis, &prior, None);
    let text = match res {
        Ok(t) => t,
        Err(e) => {
            push(&mut traces, Stage::Analysis, digest, "", dt, 1);
            bail!(e)
        }
    };
    push(&mut traces, Stage::Analysis, digest, &text, dt, 1);
    let report = match AnalysisReport::parse(&text) {
        Ok(r) => r,
        Err(e) => bail!(failure(Stage::Analysis, e)),
    };
    if report.label != label {
        bail!(failure(Stage::Analysis, format!("analysis label {} contradicts scene label {label}", report.label)));
    }
    if !report.cause.fits(label) {
        bail!(failure(Stage::Analysis, format!("cause {} does not fit label {label}", report.cause.token())));
    }
    if let Some(id) = report.involved.iter().find(|id| obs.vehicle(**id).is_none()) {
        bail!(failure(Stage::Analysis, format!("involved vehicle {id} is not in the scene")));
    }
    prior.push(text);

    // Solution
    let (res, digest, dt) = ask(resolver, obs, &scene_text, Stage::Solution, &prior, None);
    let text = match res {
        Ok(t) => t,
        Err(e) => {
            push(&mut traces, Stage::Solution, digest, "", dt, 1);
            bail!(e)
        }
    };
    push(&mut traces, Stage::Solution, digest, &text, dt, 1);
    if label != AnomalyLabel::Normal && text.trim().is_empty() {
        bail!(failure(Stage::Solution, format!("empty solution for {label}")));
    }
    prior.push(text);

    // Formatting, with exactly one re-ask on unusable output
    let mut total = 0.0;
    let mut diagnostics: Option<String> = None;
    let mut first_digest = None;
    for attempt in 1..=2u32 {
        let (res, digest, dt) = ask(resolver, obs, &scene_text, Stage::Formatting, &prior, diagnostics.as_deref());
        total += dt;
        let digest = first_digest.get_or_insert(digest).clone();
        let text = match res {
            Ok(t) => t,
            Err(e) => {
                push(&mut traces, Stage::Formatting, digest, "", total, attempt);
                bail!(e)
            }
        };
        let checked = command::parse(&strip_fences(&text)).map_err(|e| e.to_string()).and_then(|plan| {
            if plan.label == label {
                Ok(plan)
            } else {
                Err(format!("plan label {} does not match scene label {label}", plan.label))
            }
        });
        match checked {
            Ok(plan) => {
                push(&mut traces, Stage::Formatting, digest, &text, total, attempt);
                return Ok(PipelineOutput { label, report, plan, traces });
            }
            Err(diag) if attempt == 1 => diagnostics = Some(diag),
            Err(diag) => {
                push(&mut traces, Stage::Formatting, digest, &text, total, attempt);
                bail!(failure(Stage::Formatting, format!("unparseable after re-ask: {diag}")))
            }
        }
    }
    unreachable!("the formatting loop returns on its second attempt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Replays fixed stage outputs and records requests.
    struct Canned {
        outputs: Mutex<Vec<String>>,
        seen: Mutex<Vec<(Stage, Option<String>)>>,
    }

    impl Canned {
        fn new(outputs: &[&str]) -> Self {
            Canned {
                outputs: Mutex::new(outputs.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl Resolver for Canned {
        fn name(&self) -> &str {
            "canned"
        }
        fn respond(&self, request: &StageRequest<'_>) -> Result<String, ResolverError> {
            self.seen.lock().unwrap().push((request.stage, request.diagnostics.map(str::to_string)));
            self.outputs.lock().unwrap().pop().ok_or_else(|| ResolverError::Refused("exhausted".into()))
        }
    }

    fn empty_obs() -> SceneObservation {
        crate::world::WorldState::new(Default::default(), crate::world::RoadNet::straight(100.0, 1), 0).observe()
    }

    #[test]
    fn normal_scene_yields_four_traces() {
        let r = Canned::new(&["LABEL: normal", "LABEL: normal\nCAUSE: none\nINVOLVED:\nNARRATIVE: free flow", "", "PLAN normal"]);
        let out = run_pipeline(&empty_obs(), &r).unwrap();
        assert_eq!(out.label, AnomalyLabel::Normal);
        assert!(out.plan.commands.is_empty());
        let stages: Vec<Stage> = out.traces.iter().map(|t| t.stage).collect();
        assert_eq!(stages, Stage::ALL);
    }

    #[test]
    fn formatting_garbage_is_re_asked_once() {
        let r = Canned::new(&[
            "LABEL: normal",
            "LABEL: normal\nCAUSE: none\nINVOLVED:\nNARRATIVE: x",
            "",
            "garbage",
            "more garbage",
        ]);
        let err = run_pipeline(&empty_obs(), &r).unwrap_err();
        assert!(matches!(err.error, PipelineError::StageFailure { stage: Stage::Formatting, .. }));
        let seen = r.seen.lock().unwrap();
        assert_eq!(seen.len(), 5);
        assert_eq!(seen[3], (Stage::Formatting, None));
        assert!(seen[4].1.as_deref().unwrap().contains("expected PLAN"));
        assert_eq!(err.traces.last().unwrap().attempts, 2);
    }

    #[test]
    fn re_ask_can_recover() {
        let r = Canned::new(&[
            "LABEL: normal",
            "LABEL: normal\nCAUSE: none\nINVOLVED:\nNARRATIVE: x",
            "",
            "PLAN",
            "```\nPLAN normal\n```",
        ]);
        let out = run_pipeline(&empty_obs(), &r).unwrap();
        assert_eq!(out.traces[3].attempts, 2);
    }

    #[test]
    fn inconsistent_analysis_fails() {
        let r = Canned::new(&["LABEL: normal", "LABEL: deadlock\nCAUSE: none\nINVOLVED:\nNARRATIVE: x"]);
        let err = run_pipeline(&empty_obs(), &r).unwrap_err();
        assert_eq!(err.error.stage(), Stage::Analysis);
        let r = Canned::new(&["LABEL: normal", "LABEL: normal\nCAUSE: none\nINVOLVED: v-4\nNARRATIVE: x"]);
        assert_eq!(run_pipeline(&empty_obs(), &r).unwrap_err().error.stage(), Stage::Analysis);
    }

    #[test]
    fn refused_classification_is_a_scene_failure() {
        let r = Canned::new(&["I cannot tell."]);
        let err = run_pipeline(&empty_obs(), &r).unwrap_err();
        assert!(matches!(err.error, PipelineError::StageFailure { stage: Stage::Scene, .. }));
    }

    #[test]
    fn report_text_round_trip() {
        let report = AnalysisReport {
            label: AnomalyLabel::Deadlock,
            cause: CauseCode::RightOfWayGridlock,
            involved: vec![VehicleId(8), VehicleId(0), VehicleId(3), VehicleId(6)],
            narrative: "four vehicles hold each other's cells".into(),
        };
        assert_eq!(AnalysisReport::parse(&report.to_text()).unwrap(), report);
    }
}
