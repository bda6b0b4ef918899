use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use anomaloop::command::{self, validate};
use anomaloop::executor::run_closed_loop;
use anomaloop::harness::output::{write_batch, write_episode};
use anomaloop::harness::{conformance, run_batch, BatchSuite, HarnessConfig};
use anomaloop::label::AnomalyLabel;
use anomaloop::scenario::{build, load_spec, warm_up};

/// Closed-loop traffic anomaly resolution harness.
#[derive(Parser)]
#[command(name = "anomaloop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario through the closed loop.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a suite of scenarios and write the timing table.
    Batch {
        /// Comma-separated scenario kinds.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<AnomalyLabel>>,
        /// Number of seeds per kind, starting at 0.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        repetitions: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Check which pipeline stages a resolver completes.
    Conformance {
        #[arg(long)]
        seeds: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Parse and validate a plan file against a scenario.
    ValidatePlan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key-value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// oracle, remote or classifier-only.
    #[arg(long)]
    resolver: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<HarnessConfig> {
        let mut cfg = HarnessConfig::default();
        if let Some(path) = &self.config {
            cfg = cfg.load(path)?;
        }
        if let Some(r) = &self.resolver {
            cfg.resolver = r.parse().map_err(anyhow::Error::msg)?;
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(e.clone());
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w.max(1);
        }
        Ok(cfg)
    }
}

const RESOLVED: u8 = 0;
const UNRESOLVED: u8 = 1;
const CONFIG_ERROR: u8 = 2;
const TRANSPORT: u8 = 3;

fn run(scenario: &Path, common: &Common) -> Result<u8> {
    let cfg = common.config()?;
    let mut spec = load_spec(scenario)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let resolver = cfg.resolver()?;
    let report = run_closed_loop(&spec, resolver.as_ref(), &cfg.loop_config())?;
    write_episode(&cfg.out, &report).with_context(|| format!("writing {}", cfg.out.display()))?;
    let m = &report.metrics;
    println!(
        "{} seed {}: {} after {} iteration(s), time to clear {}, speed {:.2} -> {:.2} m/s",
        spec.kind,
        spec.seed,
        if report.resolved { "resolved" } else { "unresolved" },
        report.iterations.len(),
        m.time_to_clear.map(|t| format!("{t} ticks")).unwrap_or_else(|| "inf".into()),
        m.mean_speed_before,
        m.mean_speed_after,
    );
    if let Some(err) = report.iterations.iter().rev().find_map(|it| it.error.as_ref()) {
        eprintln!("last error: {err}");
    }
    Ok(if report.transport_failure {
        TRANSPORT
    } else if report.resolved {
        RESOLVED
    } else {
        UNRESOLVED
    })
}

fn batch(kinds: Option<Vec<AnomalyLabel>>, seeds: Option<u64>, repetitions: Option<u32>, common: &Common) -> Result<u8> {
    let cfg = common.config()?;
    let suite = BatchSuite {
        kinds: kinds.unwrap_or_else(|| cfg.kinds.clone()),
        seeds: seeds.unwrap_or(cfg.seeds),
        repetitions: repetitions.unwrap_or(cfg.repetitions),
    };
    let resolver = cfg.resolver()?;
    let report = run_batch(&suite, resolver.as_ref(), &cfg.loop_config(), cfg.workers)?;
    write_batch(&cfg.out, &report).with_context(|| format!("writing {}", cfg.out.display()))?;
    let resolved = report.episodes.iter().filter(|e| e.resolved).count();
    println!("{resolved}/{} episodes resolved", report.episodes.len());
    println!("{:<12} {:>9} {:>9} {:>9} {:>10} {:>9}", "kind", "scene", "analysis", "solution", "formatting", "total");
    for r in &report.timing {
        println!(
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>10.4} {:>9.4}",
            r.kind.token(),
            r.scene_s,
            r.analysis_s,
            r.solution_s,
            r.formatting_s,
            r.total_s
        );
    }
    Ok(if report.transport_failure {
        TRANSPORT
    } else if report.all_resolved {
        RESOLVED
    } else {
        UNRESOLVED
    })
}

fn conformance_cmd(seeds: Option<u64>, common: &Common) -> Result<u8> {
    let cfg = common.config()?;
    let resolver = cfg.resolver()?;
    let checklist = conformance(resolver.as_ref(), &AnomalyLabel::ALL, seeds.unwrap_or(cfg.seeds))?;
    println!("{checklist}");
    Ok(if checklist.stages.iter().all(|s| *s) { RESOLVED } else { UNRESOLVED })
}

fn validate_plan(scenario: &Path, plan: &Path, seed: Option<u64>) -> Result<u8> {
    let mut spec = load_spec(scenario)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let bytes = std::fs::read(plan).with_context(|| format!("reading {}", plan.display()))?;
    let (mut world, _) = build(&spec)?;
    warm_up(&mut world);
    let parsed = match command::parse_bytes(&bytes) {
        Ok(p) => p,
        Err(e) => {
            println!("{}: {e}", plan.display());
            return Ok(UNRESOLVED);
        }
    };
    match validate(&parsed, &world.observe()) {
        Ok(v) => {
            println!("valid at tick {}\n{}", v.tick, command::serialize(&v.plan));
            Ok(RESOLVED)
        }
        Err(e) => {
            println!("{}: {e}", plan.display());
            Ok(UNRESOLVED)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { scenario, common } => run(scenario, common),
        Command::Batch { kinds, seeds, repetitions, common } => batch(kinds.clone(), *seeds, *repetitions, common),
        Command::Conformance { seeds, common } => conformance_cmd(*seeds, common),
        Command::ValidatePlan { scenario, plan, seed } => validate_plan(scenario, plan, *seed),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(CONFIG_ERROR)
        }
    }
}
