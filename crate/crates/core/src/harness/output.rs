//! Transcript, report and timing-table files.

use std::fs;
use std::io;
use std::path::Path;

use serde_json::{json, Value};

use super::batch::{BatchReport, TimingRow};
use super::report::EpisodeReport;

pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing_table.csv";

/// One JSON event per line: the episode header, every stage, every plan
/// and execution, then the outcome.
pub fn transcript_events(episode: usize, report: &EpisodeReport) -> Vec<Value> {
    let mut events = vec![json!({
        "episode": episode,
        "event": "episode_start",
        "spec": report.spec,
        "truth": report.truth,
    })];
    for it in &report.iterations {
        for trace in &it.traces {
            events.push(json!({
                "episode": episode,
                "event": "stage",
                "iteration": it.index,
                "tick": it.tick,
                "observation_digest": it.observation_digest,
                "trace": trace,
            }));
        }
        if let Some(plan) = &it.plan {
            events.push(json!({"episode": episode, "event": "plan", "iteration": it.index, "plan": plan}));
        }
        if let Some(error) = &it.error {
            events.push(json!({
                "episode": episode,
                "event": "iteration_failed",
                "iteration": it.index,
                "stage": it.failed_stage,
                "error": error,
            }));
        }
        if let Some(log) = &it.log {
            events.push(json!({
                "episode": episode,
                "event": "execution",
                "iteration": it.index,
                "log_digest": it.log_digest,
                "log": log,
            }));
        }
    }
    events.push(json!({
        "episode": episode,
        "event": "episode_end",
        "resolved": report.resolved,
        "final_tick": report.final_tick,
        "metrics": report.metrics,
    }));
    events
}

fn jsonl(events: impl IntoIterator<Item = Value>) -> String {
    events.into_iter().map(|e| format!("{e}\n")).collect()
}

pub fn episode_transcript(report: &EpisodeReport) -> String {
    jsonl(transcript_events(0, report))
}

pub fn batch_transcript(batch: &BatchReport) -> String {
    jsonl(batch.episodes.iter().enumerate().flat_map(|(i, r)| transcript_events(i, r)))
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("kind,scene_s,analysis_s,solution_s,formatting_s,total_s\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.kind, r.scene_s, r.analysis_s, r.solution_s, r.formatting_s, r.total_s
        ));
    }
    out
}

pub fn write_episode(dir: &Path, report: &EpisodeReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRANSCRIPT_FILE), episode_transcript(report))?;
    fs::write(dir.join(REPORT_FILE), report.to_json())?;
    let rows = super::batch::timing_table(std::slice::from_ref(report));
    fs::write(dir.join(TIMING_FILE), timing_csv(&rows))
}

pub fn write_batch(dir: &Path, batch: &BatchReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRANSCRIPT_FILE), batch_transcript(batch))?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(batch).expect("batch serializes"))?;
    fs::write(dir.join(TIMING_FILE), timing_csv(&batch.timing))
}

const DURATION_KEYS: [&str; 8] = [
    "duration_s",
    "stage_durations",
    "total_duration",
    "scene_s",
    "analysis_s",
    "solution_s",
    "formatting_s",
    "total_s",
];

fn zero(value: &mut Value) {
    match value {
        Value::Number(_) => *value = json!(0.0),
        Value::Array(items) => items.iter_mut().for_each(zero),
        _ => {}
    }
}

fn redact(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if DURATION_KEYS.contains(&key.as_str()) {
                    zero(v);
                } else {
                    redact(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(redact),
        _ => {}
    }
}

/// Zero every wall-clock duration in a JSON or JSON-lines document, leaving
/// the rest byte for byte comparable.
pub fn redact_durations(text: &str) -> String {
    if let Ok(mut whole) = serde_json::from_str::<Value>(text) {
        redact(&mut whole);
        return serde_json::to_string_pretty(&whole).expect("value serializes");
    }
    text.lines()
        .map(|line| match serde_json::from_str::<Value>(line) {
            Ok(mut v) => {
                redact(&mut v);
                format!("{v}\n")
            }
            Err(_) => format!("{line}\n"),
        })
        .collect()
}
