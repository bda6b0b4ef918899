//! Rule-based resolver. Reads only the scene observation and earlier stage
//! outputs, so it exercises the same stage contract as a remote model.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{parse_scene_output, AnalysisReport, CauseCode, Resolver, ResolverError, Stage, StageRequest};
use crate::command::{self, FaultAssignment, FaultDegree, InterventionCommand, ResolutionPlan, SpeedAdjust, Verb};
use crate::label::AnomalyLabel;
use crate::world::{SceneObservation, VehicleId, VehicleRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Speeds at or below this count as slow.
    pub slow_speed: f64,
    /// Free road ahead of a blocker, in metres.
    pub free_gap: f64,
    pub queue_min: usize,
    /// Queue speed must fall below this share of its desired speed.
    pub deficit_ratio: f64,
    pub congestion_ratio: f64,
    pub deadlock_window: u64,
    /// Reaching this far before the stop line still counts as at the box.
    pub box_adjacent: f64,
    pub min_reverse: f64,
    pub reverse_clearance: f64,
    pub relocate_distance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            slow_speed: 5.0,
            free_gap: 30.0,
            queue_min: 3,
            deficit_ratio: 0.5,
            congestion_ratio: 0.5,
            deadlock_window: crate::scenario::DEADLOCK_WINDOW,
            box_adjacent: 10.0,
            min_reverse: 5.0,
            reverse_clearance: 0.5,
            relocate_distance: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("inconsistent scene: {0}")]
    InconsistentScene(String),
    #[error("no feasible action: {0}")]
    NoFeasibleAction(String),
}

impl From<OracleError> for ResolverError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::InconsistentScene(d) => ResolverError::InconsistentScene(d),
            OracleError::NoFeasibleAction(d) => ResolverError::NoFeasibleAction(d),
        }
    }
}

fn live(obs: &SceneObservation) -> impl Iterator<Item = &VehicleRow> {
    obs.vehicles.iter().filter(|v| !v.exited)
}

fn is_connector(obs: &SceneObservation, v: &VehicleRow) -> bool {
    obs.segment(v.segment).map(|s| s.kind == "connector").unwrap_or(false)
}

struct SlowPair {
    lead: VehicleId,
    trail: VehicleId,
    queue: Vec<VehicleId>,
}

/// Two slow vehicles side by side with open road ahead and a queue behind.
fn find_slow_pair(obs: &SceneObservation, cfg: &OracleConfig) -> Option<SlowPair> {
    let candidates: Vec<&VehicleRow> = live(obs)
        .filter(|v| !v.wrecked && !v.on_shoulder && !is_connector(obs, v))
        .filter(|v| v.v.abs() <= cfg.slow_speed)
        .filter(|v| v.gap_ahead.map(|g| g >= cfg.free_gap).unwrap_or(true))
        .collect();
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            if a.segment != b.segment || a.lane == b.lane || (a.s - b.s).abs() >= (a.length + b.length) / 2.0 {
                continue;
            }
            let queue = queue_behind(obs, cfg, &[a.id, b.id]);
            if queue.len() < cfg.queue_min {
                continue;
            }
            let (speed, desired) = queue
                .iter()
                .filter_map(|id| obs.vehicle(*id))
                .fold((0.0, 0.0), |(s, d), v| (s + v.v.max(0.0), d + v.desired));
            if speed >= cfg.deficit_ratio * desired {
                continue;
            }
            let (lead, trail) = if a.s > b.s || (a.s == b.s && a.id < b.id) { (a.id, b.id) } else { (b.id, a.id) };
            return Some(SlowPair { lead, trail, queue });
        }
    }
    None
}

/// Vehicles chained behind the given heads by close following.
fn queue_behind(obs: &SceneObservation, cfg: &OracleConfig, heads: &[VehicleId]) -> Vec<VehicleId> {
    let mut seen: BTreeSet<VehicleId> = heads.iter().copied().collect();
    let mut frontier: VecDeque<VehicleId> = heads.iter().copied().collect();
    let mut queue = Vec::new();
    while let Some(head) = frontier.pop_front() {
        for f in live(obs) {
            if f.leader == Some(head) && f.gap_ahead.map(|g| g < cfg.free_gap).unwrap_or(false) && seen.insert(f.id) {
                queue.push(f.id);
                frontier.push_back(f.id);
            }
        }
    }
    queue.sort();
    queue
}

/// Who holds the cell `v` needs next.
fn blocker_of<'a>(obs: &'a SceneObservation, v: &VehicleRow) -> Option<&'a VehicleRow> {
    let next = v.next_cell?;
    live(obs).find(|o| o.id != v.id && o.cells.contains(&next))
}

/// A cycle in the waits-for graph over vehicles at the box.
fn find_gridlock(obs: &SceneObservation, cfg: &OracleConfig) -> Option<Vec<VehicleId>> {
    if !obs.has_intersection {
        return None;
    }
    let stuck: BTreeSet<VehicleId> = live(obs)
        .filter(|v| v.v == 0.0 && v.stopped_ticks >= cfg.deadlock_window && !v.wrecked)
        .filter(|v| {
            !v.cells.is_empty()
                || obs
                    .segment(v.segment)
                    .map(|s| s.kind == "inbound" && v.s + v.length / 2.0 >= s.length - cfg.box_adjacent)
                    .unwrap_or(false)
        })
        .map(|v| v.id)
        .collect();
    if stuck.len() < 4 {
        return None;
    }
    let waits: BTreeMap<VehicleId, VehicleId> = live(obs)
        .filter(|v| stuck.contains(&v.id) && !v.cells.is_empty())
        .filter_map(|v| blocker_of(obs, v).map(|b| (v.id, b.id)))
        .collect();
    for start in waits.keys() {
        let mut path = vec![*start];
        let mut cur = *start;
        while let Some(next) = waits.get(&cur) {
            if let Some(pos) = path.iter().position(|p| p == next) {
                let cycle = path[pos..].to_vec();
                if cycle.len() >= 2 && cycle.iter().all(|id| stuck.contains(id)) {
                    return Some(cycle);
                }
                break;
            }
            path.push(*next);
            cur = *next;
        }
    }
    None
}

fn wreck_in_lane(obs: &SceneObservation) -> bool {
    live(obs).any(|v| v.wrecked && !v.on_shoulder)
}

/// Scene stage.
pub fn classify(obs: &SceneObservation, cfg: &OracleConfig) -> AnomalyLabel {
    if wreck_in_lane(obs) {
        return AnomalyLabel::Accident;
    }
    if find_gridlock(obs, cfg).is_some() {
        return AnomalyLabel::Deadlock;
    }
    if find_slow_pair(obs, cfg).is_some() {
        return AnomalyLabel::GhostJam;
    }
    let moving: Vec<&VehicleRow> = live(obs).filter(|v| !v.wrecked).collect();
    if !moving.is_empty() {
        let speed: f64 = moving.iter().map(|v| v.v.max(0.0)).sum();
        let desired: f64 = moving.iter().map(|v| v.desired).sum();
        if speed < cfg.congestion_ratio * desired {
            return AnomalyLabel::Congestion;
        }
    }
    AnomalyLabel::Normal
}

fn exit_clear(obs: &SceneObservation, v: &VehicleRow) -> bool {
    let Some(out) = v.route.last() else { return false };
    !live(obs).any(|o| o.id != v.id && o.segment == *out && o.s - o.length / 2.0 < 15.0)
}

/// Analysis stage.
pub fn analyze(obs: &SceneObservation, label: AnomalyLabel, cfg: &OracleConfig) -> Result<AnalysisReport, OracleError> {
    let missing = |what: &str| OracleError::InconsistentScene(format!("{label} without {what}"));
    let ids = |list: &[VehicleId]| list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
    match label {
        AnomalyLabel::Normal => Ok(AnalysisReport {
            label,
            cause: CauseCode::None,
            involved: Vec::new(),
            narrative: "traffic flows near desired speeds".into(),
        }),
        AnomalyLabel::Congestion => {
            let mut involved: Vec<VehicleId> =
                live(obs).filter(|v| !v.wrecked && v.v < cfg.slow_speed).map(|v| v.id).collect();
            involved.sort();
            Ok(AnalysisReport {
                label,
                cause: CauseCode::None,
                narrative: format!("{} vehicles crawl with no single obstruction; demand exceeds capacity", involved.len()),
                involved,
            })
        }
        AnomalyLabel::GhostJam => {
            let pair = find_slow_pair(obs, cfg).ok_or_else(|| missing("a slow side-by-side pair"))?;
            let mut involved = vec![pair.lead, pair.trail];
            involved.extend(&pair.queue);
            Ok(AnalysisReport {
                label,
                cause: CauseCode::SlowPairBlocking,
                narrative: format!(
                    "{} and {} drive side by side well below the limit with open road ahead, so {} cannot overtake",
                    pair.lead,
                    pair.trail,
                    ids(&pair.queue)
                ),
                involved,
            })
        }
        AnomalyLabel::Deadlock => {
            let cycle = find_gridlock(obs, cfg).ok_or_else(|| missing("a waits-for cycle at the box"))?;
            let rows: Vec<&VehicleRow> = cycle.iter().filter_map(|id| obs.vehicle(*id)).collect();
            let proceeder = rows
                .iter()
                .filter(|v| exit_clear(obs, v))
                .map(|v| v.id)
                .min()
                .or_else(|| cycle.iter().min().copied())
                .unwrap();
            let mut chain = Vec::new();
            let mut cur = obs.vehicle(proceeder).unwrap();
            while let Some(b) = blocker_of(obs, cur) {
                if b.id == proceeder || chain.contains(&b.id) {
                    break;
                }
                chain.push(b.id);
                cur = b;
            }
            chain.reverse();
            chain.push(proceeder);
            Ok(AnalysisReport {
                label,
                cause: CauseCode::RightOfWayGridlock,
                narrative: format!(
                    "{} each hold a cell the next one needs; {proceeder} has a clear exit once its blocker backs out",
                    ids(&cycle)
                ),
                involved: chain,
            })
        }
        AnomalyLabel::Accident => {
            let event = obs
                .collisions
                .iter()
                .rev()
                .find(|c| {
                    [c.a, c.b].iter().all(|id| obs.vehicle(*id).map(|v| v.wrecked).unwrap_or(false))
                        && [c.a, c.b].iter().any(|id| obs.vehicle(*id).map(|v| !v.on_shoulder).unwrap_or(false))
                })
                .ok_or_else(|| missing("a recorded collision between wrecks"))?;
            let (a, b) = (obs.vehicle(event.a).unwrap(), obs.vehicle(event.b).unwrap());
            let turning = |v: &VehicleRow| v.movement.map(|m| m.is_turn()).unwrap_or(false);
            let recent_change = |v: &VehicleRow| {
                v.last_lane_change.map(|t| t + 30 >= event.tick && t <= event.tick).unwrap_or(false)
            };
            let (violator, other, cause) = if turning(a) != turning(b) {
                let (v, o) = if turning(a) { (a, b) } else { (b, a) };
                (v, o, CauseCode::FailureToYield)
            } else if !is_connector(obs, a) && !is_connector(obs, b) && recent_change(a) != recent_change(b) {
                let (v, o) = if recent_change(a) { (a, b) } else { (b, a) };
                (v, o, CauseCode::ImproperLaneChange)
            } else {
                let entry = |v: &VehicleRow| (v.box_entry_tick.unwrap_or(u64::MAX), v.id);
                let (v, o) = if entry(a) > entry(b) { (a, b) } else { (b, a) };
                (v, o, CauseCode::FailureToYield)
            };
            let reason = match cause {
                CauseCode::ImproperLaneChange => "changed lanes into it without a safe gap",
                _ if turning(violator) => "turned across straight-through traffic without yielding",
                _ => "entered the conflict area after the other vehicle held it",
            };
            Ok(AnalysisReport {
                label,
                cause,
                involved: vec![violator.id, other.id],
                narrative: format!("{} {reason}; {} had right of way and is not liable", violator.id, other.id),
            })
        }
    }
}

fn adjacent_lane_free(obs: &SceneObservation, v: &VehicleRow) -> Option<Verb> {
    let seg = obs.segment(v.segment)?;
    let mut options = Vec::new();
    if v.lane + 1 < seg.lanes {
        options.push((v.lane + 1, Verb::ChangeLaneLeft));
    }
    if v.lane > 0 {
        options.push((v.lane - 1, Verb::ChangeLaneRight));
    }
    options.into_iter().find_map(|(lane, verb)| {
        let busy = live(obs).any(|o| o.id != v.id && o.segment == v.segment && o.lane == lane && (o.s - v.s).abs() < 30.0);
        (!busy).then_some(verb)
    })
}

/// Solution stage: a bullet list the formatting stage turns into a plan.
pub fn solve(report: &AnalysisReport, obs: &SceneObservation, cfg: &OracleConfig) -> Result<String, OracleError> {
    let row = |id: VehicleId| {
        obs.vehicle(id).ok_or_else(|| OracleError::InconsistentScene(format!("{id} not in the scene")))
    };
    let mut lines = Vec::new();
    match report.label {
        AnomalyLabel::Normal => return Ok("No action required.".into()),
        AnomalyLabel::Congestion => {
            for id in &report.involved {
                lines.push(format!("- {id}: move forward and maintain speed"));
            }
        }
        AnomalyLabel::GhostJam => {
            let [lead, trail, queue @ ..] = report.involved.as_slice() else {
                return Err(OracleError::InconsistentScene("ghost jam needs two blockers".into()));
            };
            lines.push(format!("- {lead}: move forward and increase speed"));
            match adjacent_lane_free(obs, row(*trail)?) {
                Some(Verb::ChangeLaneLeft) => lines.push(format!("- {trail}: change to the left lane")),
                Some(_) => lines.push(format!("- {trail}: change to the right lane")),
                None => lines.push(format!("- {trail}: move forward and maintain speed")),
            }
            for id in queue {
                lines.push(format!("- {id}: move forward and increase speed"));
            }
        }
        AnomalyLabel::Deadlock => {
            let Some((proceeder, reversers)) = report.involved.split_last() else {
                return Err(OracleError::InconsistentScene("deadlock without vehicles".into()));
            };
            for id in reversers {
                let v = row(*id)?;
                let seg = obs.segment(v.segment).unwrap();
                let front = v.s + v.length / 2.0;
                let depth = if seg.kind == "connector" { front } else { front - seg.length };
                let distance = cfg.min_reverse.max((depth + 1.0).ceil());
                if distance > command::MAX_DISTANCE_M {
                    return Err(OracleError::NoFeasibleAction(format!("{id} would need to reverse {distance} m")));
                }
                let room = v.gap_behind.unwrap_or(f64::INFINITY);
                if room < distance + cfg.reverse_clearance {
                    return Err(OracleError::NoFeasibleAction(format!(
                        "{id} has {room:.2} m behind it, needs {distance} m plus clearance"
                    )));
                }
                lines.push(format!("- {id}: move backward {distance} meters"));
            }
            lines.push(format!("- {proceeder}: move forward and maintain speed"));
        }
        AnomalyLabel::Accident => {
            let [violator, other] = report.involved.as_slice() else {
                return Err(OracleError::InconsistentScene("accident needs two parties".into()));
            };
            lines.push(format!("- {violator}: fault primary"));
            lines.push(format!("- {other}: fault none"));
            for id in [violator, other] {
                row(*id)?;
                lines.push(format!("- {id}: relocate to the shoulder and tow {} meters", cfg.relocate_distance));
            }
        }
    }
    Ok(lines.join("\n"))
}

fn speed_word(text: &str) -> Option<SpeedAdjust> {
    SpeedAdjust::ALL.into_iter().find(|s| text.contains(s.token()))
}

fn metres(text: &str) -> Option<f64> {
    let words: Vec<&str> = text.split_whitespace().collect();
    words.windows(2).find(|w| w[1].starts_with("meter") || w[1] == "m").and_then(|w| w[0].parse().ok())
}

/// Formatting stage: turn the solution bullets into a plan.
pub fn format_draft(draft: &str, label: AnomalyLabel) -> Result<ResolutionPlan, String> {
    let mut plan = ResolutionPlan::new(label);
    for line in draft.lines().map(str::trim).filter(|l| l.starts_with('-')) {
        let (id, rest) = line[1..].split_once(':').ok_or_else(|| format!("no `vehicle:` prefix in `{line}`"))?;
        let vehicle: VehicleId = id.trim().parse()?;
        let rest = rest.trim().to_ascii_lowercase();
        if let Some(degree) = rest.strip_prefix("fault ") {
            let degree = FaultDegree::ALL
                .into_iter()
                .find(|d| d.token() == degree.trim())
                .ok_or_else(|| format!("unknown fault degree in `{line}`"))?;
            plan.faults.push(FaultAssignment { vehicle, degree });
            continue;
        }
        let mut cmd = if rest.starts_with("move forward") {
            InterventionCommand::new(vehicle, Verb::MoveForward)
        } else if rest.starts_with("move backward") {
            InterventionCommand::new(vehicle, Verb::MoveBackward)
        } else if rest.starts_with("change to the left") {
            InterventionCommand::new(vehicle, Verb::ChangeLaneLeft)
        } else if rest.starts_with("change to the right") {
            InterventionCommand::new(vehicle, Verb::ChangeLaneRight)
        } else if rest.starts_with("relocate") {
            InterventionCommand::new(vehicle, Verb::Relocate)
        } else if rest.starts_with("stop") {
            InterventionCommand::new(vehicle, Verb::Stop)
        } else {
            return Err(format!("unrecognised instruction `{line}`"));
        };
        if cmd.verb.requires_distance() {
            cmd.distance_m = Some(metres(&rest).ok_or_else(|| format!("no distance in `{line}`"))?);
        }
        if cmd.verb.accepts_speed() {
            cmd.speed = speed_word(&rest);
        }
        plan.commands.push(cmd);
    }
    Ok(plan)
}

/// The deterministic reference resolver.
#[derive(Clone, Debug, Default)]
pub struct OracleResolver {
    pub config: OracleConfig,
}

impl OracleResolver {
    pub fn new(config: OracleConfig) -> Self {
        OracleResolver { config }
    }
}

fn prior<'a>(request: &StageRequest<'a>, stage: Stage) -> Result<&'a str, ResolverError> {
    let idx = Stage::ALL.iter().position(|s| *s == stage).unwrap();
    request
        .prior
        .get(idx)
        .map(String::as_str)
        .ok_or_else(|| ResolverError::Refused(format!("missing {stage} output")))
}

impl Resolver for OracleResolver {
    fn name(&self) -> &str {
        "oracle"
    }

    fn respond(&self, request: &StageRequest<'_>) -> Result<String, ResolverError> {
        let obs = request.observation;
        let cfg = &self.config;
        match request.stage {
            Stage::Scene => Ok(format!("LABEL: {}", classify(obs, cfg))),
            Stage::Analysis => {
                let label = parse_scene_output(prior(request, Stage::Scene)?).map_err(ResolverError::Refused)?;
                Ok(analyze(obs, label, cfg)?.to_text())
            }
            Stage::Solution => {
                let report = AnalysisReport::parse(prior(request, Stage::Analysis)?).map_err(ResolverError::Refused)?;
                Ok(solve(&report, obs, cfg)?)
            }
            Stage::Formatting => {
                let label = parse_scene_output(prior(request, Stage::Scene)?).map_err(ResolverError::Refused)?;
                let plan = format_draft(prior(request, Stage::Solution)?, label).map_err(ResolverError::Refused)?;
                Ok(command::serialize(&plan))
            }
        }
    }
}

/// Classifies like the oracle and declines every later stage.
#[derive(Clone, Debug, Default)]
pub struct ClassifierOnly {
    pub config: OracleConfig,
}

impl Resolver for ClassifierOnly {
    fn name(&self) -> &str {
        "classifier-only"
    }

    fn capabilities(&self) -> super::Capabilities {
        super::Capabilities { scene: true, analysis: false, solution: false, formatting: false }
    }

    fn respond(&self, request: &StageRequest<'_>) -> Result<String, ResolverError> {
        match request.stage {
            Stage::Scene => Ok(format!("LABEL: {}", classify(request.observation, &self.config))),
            stage => Err(ResolverError::Refused(format!("{stage} is not supported"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::parse;
    use crate::pipeline::run_pipeline;
    use crate::scenario::{build, warm_up, GroundTruth, ScenarioSpec};

    fn scene(kind: AnomalyLabel, seed: u64) -> (SceneObservation, GroundTruth) {
        let (mut world, truth) = build(&ScenarioSpec::new(kind, seed)).unwrap();
        warm_up(&mut world);
        (world.observe(), truth)
    }

    #[test]
    fn classification_matches_ground_truth() {
        let cfg = OracleConfig::default();
        for kind in AnomalyLabel::ALL {
            for seed in 0..20 {
                let (obs, _) = scene(kind, seed);
                assert_eq!(classify(&obs, &cfg), kind, "seed {seed}");
            }
        }
    }

    #[test]
    fn analysis_names_the_staged_vehicles() {
        let cfg = OracleConfig::default();
        for kind in [AnomalyLabel::GhostJam, AnomalyLabel::Deadlock, AnomalyLabel::Accident] {
            for seed in 0..20 {
                let (obs, truth) = scene(kind, seed);
                let report = analyze(&obs, kind, &cfg).unwrap();
                assert!(report.cause.fits(kind));
                assert_eq!(report.involved, truth.involved, "{kind} seed {seed}");
            }
        }
    }

    #[test]
    fn analysis_of_a_missing_pattern_is_inconsistent() {
        let (obs, _) = scene(AnomalyLabel::Normal, 3);
        for kind in [AnomalyLabel::GhostJam, AnomalyLabel::Deadlock, AnomalyLabel::Accident] {
            assert!(matches!(analyze(&obs, kind, &OracleConfig::default()), Err(OracleError::InconsistentScene(_))));
        }
    }

    #[test]
    fn deadlock_example_plan() {
        // Four straight-through vehicles at a box, as in the worked example:
        // v-8, v-0 and v-3 back out and v-6 proceeds.
        let (mut obs, _) = scene(AnomalyLabel::Deadlock, 0);
        let rename = [VehicleId(8), VehicleId(0), VehicleId(3), VehicleId(6)];
        let report = analyze(&obs, AnomalyLabel::Deadlock, &OracleConfig::default()).unwrap();
        let map = |id: VehicleId| rename[report.involved.iter().position(|x| *x == id).unwrap()];
        for v in &mut obs.vehicles {
            v.id = map(v.id);
            v.leader = v.leader.map(map);
        }
        for v in &mut obs.vehicles {
            let front = if v.id == VehicleId(0) { 4.95 } else { 3.75 };
            v.s = front - v.length / 2.0;
        }
        let report = AnalysisReport { involved: rename.to_vec(), ..report };
        let draft = solve(&report, &obs, &OracleConfig::default()).unwrap();
        let plan = format_draft(&draft, AnomalyLabel::Deadlock).unwrap();
        let expected = parse(
            "PLAN deadlock\nACTION v-8 move_backward distance_m=5\nACTION v-0 move_backward distance_m=6\nACTION v-3 move_backward distance_m=5\nACTION v-6 move_forward speed=maintain",
        )
        .unwrap();
        assert_eq!(plan, expected);
    }

    #[test]
    fn ghost_jam_plan_shape() {
        let (obs, truth) = scene(AnomalyLabel::GhostJam, 4);
        let out = run_pipeline(&obs, &OracleResolver::default()).unwrap();
        let plan = out.plan;
        assert_eq!(plan.commands.len(), truth.involved.len());
        assert_eq!(plan.commands[0].speed, Some(SpeedAdjust::Increase));
        assert_eq!(plan.commands[1].speed, Some(SpeedAdjust::Maintain));
        assert!(plan.commands[2..].iter().all(|c| c.speed == Some(SpeedAdjust::Increase)));
    }

    #[test]
    fn accident_plan_assigns_fault_and_tows() {
        for seed in 0..8 {
            let (obs, _) = scene(AnomalyLabel::Accident, seed);
            let plan = run_pipeline(&obs, &OracleResolver::default()).unwrap().plan;
            let expected = parse(
                "PLAN accident\nFAULT v-9 primary\nFAULT v-0 none\nACTION v-9 relocate distance_m=8\nACTION v-0 relocate distance_m=8",
            )
            .unwrap();
            assert_eq!(plan, expected);
        }
    }

    #[test]
    fn blocked_reverse_is_infeasible() {
        let spec = ScenarioSpec::new(AnomalyLabel::Deadlock, 5).with_param("upstream_per_approach", 1.0);
        let (mut world, _) = build(&spec).unwrap();
        warm_up(&mut world);
        let obs = world.observe();
        let cfg = OracleConfig::default();
        let report = analyze(&obs, AnomalyLabel::Deadlock, &cfg).unwrap();
        assert!(matches!(solve(&report, &obs, &cfg), Err(OracleError::NoFeasibleAction(_))));
    }

    #[test]
    fn draft_parsing_rejects_free_text() {
        assert!(format_draft("- v-1: fly away", AnomalyLabel::Normal).is_err());
        assert!(format_draft("- v-1: move backward please", AnomalyLabel::Deadlock).is_err());
        assert_eq!(format_draft("No action required.", AnomalyLabel::Normal).unwrap(), ResolutionPlan::new(AnomalyLabel::Normal));
    }

    #[test]
    fn classifier_only_fails_after_scene() {
        let (obs, _) = scene(AnomalyLabel::GhostJam, 1);
        let err = run_pipeline(&obs, &ClassifierOnly::default()).unwrap_err();
        assert_eq!(err.error.stage(), Stage::Analysis);
        assert_eq!(err.traces.len(), 2);
    }
}
