use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use ogi_control::{ControlConfig, ControlServer, ControlService};
use ogi_core::clock::NANOS_PER_MS;
use ogi_core::kernel::Kernel;
use ogi_harness::bench::{bench, BenchConfig, DEFAULT_REPS};
use ogi_harness::exit;
use ogi_harness::{run, Scenario};

#[derive(Parser)]
#[command(name = "ogi", version, about = "Scenario runner and benchmark for the cognition kernel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and check its expectations.
    Run {
        scenario: PathBuf,
        /// Set a dotted path in the scenario before loading, e.g. `seed=9`.
        #[arg(long = "override", value_name = "KEY=VAL")]
        overrides: Vec<String>,
        /// Write the JSON metrics report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the decision log (newline-delimited JSON) here.
        #[arg(long)]
        decision_log: Option<PathBuf>,
    },
    /// Run the switching scenario at several background load levels.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        levels: Vec<u32>,
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        lanes: usize,
        /// Mean lane delay in microseconds; switches the fabric to queued mode.
        #[arg(long)]
        jitter_us: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for per-repetition decision logs and event counts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate {
        scenario: PathBuf,
        #[arg(long = "override", value_name = "KEY=VAL")]
        overrides: Vec<String>,
    },
    /// Run a scenario in wall-clock time with the control endpoint attached.
    Serve {
        scenario: PathBuf,
        /// Control service config file.
        #[arg(long)]
        config: PathBuf,
        /// Virtual seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Keep cycling after the scenario horizon.
        #[arg(long)]
        forever: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let code = match Cli::parse().command {
        Command::Run {
            scenario,
            overrides,
            report,
            decision_log,
        } => cmd_run(&scenario, &overrides, report.as_deref(), decision_log.as_deref()),
        Command::Bench {
            levels,
            reps,
            seed,
            lanes,
            jitter_us,
            report,
            out,
        } => cmd_bench(
            BenchConfig {
                levels,
                reps,
                seed,
                lanes,
                jitter_us,
            },
            report.as_deref(),
            out.as_deref(),
        ),
        Command::Validate { scenario, overrides } => match Scenario::load(&scenario, &overrides) {
            Ok(r) => {
                println!(
                    "{}: ok ({} modules, {} adapters, {} procedures, {} timeline steps, {} expectations)",
                    scenario.display(),
                    r.registry.len(),
                    r.adapters.len(),
                    r.procedures.len(),
                    r.scenario.timeline.len(),
                    r.scenario.expectations.len()
                );
                Ok(exit::PASS)
            }
            Err(e) => Err(anyhow::Error::new(e)),
        },
        Command::Serve {
            scenario,
            config,
            speed,
            forever,
        } => cmd_serve(&scenario, &config, speed, forever),
    };
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::LOAD_ERROR as u8)
        }
    }
}

fn cmd_run(path: &Path, overrides: &[String], report: Option<&Path>, log: Option<&Path>) -> anyhow::Result<i32> {
    let resolved = Scenario::load(path, overrides)?;
    let outcome = run(&resolved).context("kernel start")?;
    print!("{}", outcome.report.summary());
    for r in &outcome.results {
        println!("  [{}] {}", if r.passed { "pass" } else { "FAIL" }, r.detail);
    }
    if let Some(p) = report {
        std::fs::write(p, serde_json::to_vec_pretty(&outcome.report)?).with_context(|| format!("write {}", p.display()))?;
    }
    if let Some(p) = log {
        std::fs::write(p, outcome.decision_log()).with_context(|| format!("write {}", p.display()))?;
    }
    Ok(match outcome.first_failure() {
        None => {
            println!("PASS");
            exit::PASS
        }
        Some(f) => {
            println!("FAIL: {}", f.detail);
            exit::EXPECTATION_FAILED
        }
    })
}

fn cmd_bench(config: BenchConfig, report: Option<&Path>, out: Option<&Path>) -> anyhow::Result<i32> {
    let result = bench(&config)?;
    print!("{}", result.report.summary());
    if let Some(p) = report {
        std::fs::write(p, serde_json::to_vec_pretty(&result.report)?).with_context(|| format!("write {}", p.display()))?;
    }
    if let Some(dir) = out {
        result
            .write_artifacts(dir)
            .with_context(|| format!("write {}", dir.display()))?;
    }
    let all_met = result.report.rows.iter().all(|r| r.accuracy >= 1.0);
    Ok(if all_met { exit::PASS } else { exit::EXPECTATION_FAILED })
}

fn cmd_serve(path: &Path, config: &Path, speed: f64, forever: bool) -> anyhow::Result<i32> {
    anyhow::ensure!(speed > 0.0, "speed must be > 0");
    let resolved = Scenario::load(path, &[])?;
    let text = std::fs::read_to_string(config).with_context(|| format!("read {}", config.display()))?;
    let config = ControlConfig::from_json(&text).with_context(|| format!("parse {}", config.display()))?;
    let (mut setup, events) = resolved.kernel_setup();
    setup.config.telemetry_buffer = config.telemetry_buffer;
    let mut kernel = Kernel::new(setup)?;
    kernel.schedule(events);
    let server = ControlServer::start(ControlService::new(kernel.handle(), config))?;
    println!("control endpoint on {}", server.local_addr());
    let horizon = resolved.scenario.horizon_ms * NANOS_PER_MS;
    let cycle = Duration::from_secs_f64(kernel.config().cycle_ns as f64 / 1e9 / speed);
    let mut next = Instant::now();
    while forever || kernel.now() < horizon {
        kernel.step_cycle()?;
        next += cycle;
        if let Some(wait) = next.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    server.shutdown();
    println!("horizon reached after {} cycles", kernel.handle().metrics().counters.cycles);
    Ok(exit::PASS)
}
