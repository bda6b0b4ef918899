mod common;

use common::{canned_handler, canned_outputs, completion, stage_of, StubServer};

use anomaloop::executor::{run_closed_loop, LoopConfig};
use anomaloop::label::AnomalyLabel;
use anomaloop::pipeline::oracle::OracleResolver;
use anomaloop::pipeline::remote::{RemoteConfig, RemoteResolver};
use anomaloop::pipeline::{run_pipeline, PipelineError, ResolverError, Stage};
use anomaloop::scenario::{build, warm_up, ScenarioSpec};

fn resolver(url: &str) -> RemoteResolver {
    let mut cfg = RemoteConfig::new(url, "stub-model");
    cfg.backoff_s = 0.01;
    cfg.timeout_s = 5.0;
    RemoteResolver::new(cfg)
}

#[test]
fn four_ordered_stage_requests() {
    let spec = ScenarioSpec::new(AnomalyLabel::GhostJam, 3);
    let stub = StubServer::start(canned_handler(canned_outputs(&spec)));
    let (mut world, _) = build(&spec).unwrap();
    warm_up(&mut world);
    let out = run_pipeline(&world.observe(), &resolver(&stub.url)).unwrap();
    let stages: Vec<Stage> = stub.requests.lock().unwrap().iter().map(stage_of).collect();
    assert_eq!(stages, Stage::ALL.to_vec());
    let first = &stub.requests.lock().unwrap()[0];
    assert_eq!(first["model"], "stub-model");
    assert_eq!(first["temperature"], 0.0);
    assert!(first["messages"][1]["content"].as_str().unwrap().contains("SCENE tick="));
    assert_eq!(out.label, AnomalyLabel::GhostJam);
}

#[test]
fn remote_episode_matches_the_oracle() {
    for kind in [AnomalyLabel::GhostJam, AnomalyLabel::Deadlock, AnomalyLabel::Accident] {
        let spec = ScenarioSpec::new(kind, 5);
        let stub = StubServer::start(canned_handler(canned_outputs(&spec)));
        let remote = run_closed_loop(&spec, &resolver(&stub.url), &LoopConfig::default()).unwrap();
        let oracle = run_closed_loop(&spec, &OracleResolver::default(), &LoopConfig::default()).unwrap();
        assert!(remote.resolved);
        assert_eq!(remote.redacted().to_json(), oracle.redacted().to_json());
    }
}

#[test]
fn two_server_errors_then_success() {
    let spec = ScenarioSpec::new(AnomalyLabel::Accident, 2);
    let outputs = canned_outputs(&spec);
    let stub = StubServer::start(Box::new(move |n, req| {
        if n < 2 {
            return (500, "overloaded".into());
        }
        let idx = Stage::ALL.iter().position(|s| *s == stage_of(req)).unwrap();
        (200, completion(&outputs[idx]))
    }));
    let (mut world, _) = build(&spec).unwrap();
    warm_up(&mut world);
    let out = run_pipeline(&world.observe(), &resolver(&stub.url)).unwrap();
    assert_eq!(out.label, AnomalyLabel::Accident);
    assert_eq!(stub.request_count(), 6);
}

#[test]
fn persistent_outage_exhausts_the_budget() {
    let stub = StubServer::start(Box::new(|_, _| (503, "down".into())));
    let (mut world, _) = build(&ScenarioSpec::new(AnomalyLabel::Normal, 1)).unwrap();
    warm_up(&mut world);
    let err = run_pipeline(&world.observe(), &resolver(&stub.url)).unwrap_err();
    assert!(err.error.is_transport());
    assert!(matches!(
        err.error,
        PipelineError::Resolver { stage: Stage::Scene, error: ResolverError::BudgetExceeded { attempts: 4, .. } }
    ));
    assert_eq!(stub.request_count(), 4);
}

#[test]
fn rejected_credentials_are_not_retried() {
    let stub = StubServer::start(Box::new(|_, _| (401, "no".into())));
    let (mut world, _) = build(&ScenarioSpec::new(AnomalyLabel::Normal, 1)).unwrap();
    warm_up(&mut world);
    let err = run_pipeline(&world.observe(), &resolver(&stub.url)).unwrap_err();
    assert!(matches!(err.error, PipelineError::Resolver { error: ResolverError::Auth(_), .. }));
    assert_eq!(stub.request_count(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let stub = StubServer::start(Box::new(|_, _| (200, "{\"choices\": []}".into())));
    let (mut world, _) = build(&ScenarioSpec::new(AnomalyLabel::Normal, 1)).unwrap();
    warm_up(&mut world);
    let err = run_pipeline(&world.observe(), &resolver(&stub.url)).unwrap_err();
    assert!(matches!(err.error, PipelineError::Resolver { error: ResolverError::MalformedResponse(_), .. }));
}

#[test]
fn formatting_garbage_is_re_asked_once() {
    let spec = ScenarioSpec::new(AnomalyLabel::Deadlock, 1);
    let outputs = canned_outputs(&spec);
    let stub = StubServer::start(Box::new(move |_, req| match stage_of(req) {
        Stage::Formatting => (200, completion("Sure! Here is your plan: back everyone up.")),
        stage => (200, completion(&outputs[Stage::ALL.iter().position(|s| *s == stage).unwrap()])),
    }));
    let (mut world, _) = build(&spec).unwrap();
    warm_up(&mut world);
    let err = run_pipeline(&world.observe(), &resolver(&stub.url)).unwrap_err();
    assert!(matches!(err.error, PipelineError::StageFailure { stage: Stage::Formatting, .. }));
    let requests = stub.requests.lock().unwrap();
    assert_eq!(requests.len(), 5);
    let re_ask = requests[4]["messages"][1]["content"].as_str().unwrap();
    assert!(re_ask.contains("rejected"), "{re_ask}");
}
