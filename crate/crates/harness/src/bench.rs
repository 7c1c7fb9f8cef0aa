//! Switching benchmark under background load.
//!
//! Each repetition walks a trail until an obstacle appears at a seeded time
//! with a seeded magnitude, while a background sensor injects at the level's
//! rate. Repetition `r` of every level uses seed `seed + r`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ogi_core::fabric::{DeliveryMode, LaneDelayModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::report::{median, percentile, EventCounts};
use crate::run::{run, RunOutcome};
use crate::scenario::{LoadError, Scenario};

pub const DEFAULT_LEVELS: [u32; 3] = [10, 100, 1000];
pub const DEFAULT_REPS: usize = 5;
pub const HORIZON_MS: u64 = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub levels: Vec<u32>,
    pub reps: usize,
    pub seed: u64,
    pub lanes: usize,
    /// Mean per-frame lane delay; `None` runs the fabric in zero-latency mode.
    pub jitter_us: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            reps: DEFAULT_REPS,
            seed: 0,
            lanes: 1,
            jitter_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub p50: f64,
    pub p99: f64,
}

fn spread(mut v: Vec<f64>) -> Spread {
    v.sort_by(f64::total_cmp);
    Spread {
        p50: median(&v).unwrap_or(0.0),
        p99: percentile(&v, 0.99).unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// Background injections per second.
    pub level: u32,
    pub runs: usize,
    pub task_switch_latency_ns: Spread,
    pub accuracy: f64,
    pub peak_queue_depth: Spread,
    pub peak_stm: Spread,
    pub frames_per_sec: Spread,
    pub wall_time_ms: Spread,
    pub counts: EventCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

/// The deterministic part of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepDigest {
    pub level: u32,
    pub rep: usize,
    pub seed: u64,
    pub counts: EventCounts,
}

pub struct BenchRun {
    pub report: BenchReport,
    pub digests: Vec<RepDigest>,
    /// Decision logs as newline-delimited JSON, in (level, rep) order.
    pub decision_logs: Vec<((u32, usize), Vec<u8>)>,
}

/// The switching scenario at one background rate.
pub fn switching_scenario(level: u32, seed: u64, lanes: usize, jitter_us: Option<f64>) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obstacle_ms: u64 = rng.random_range(1000..=3000);
    let magnitude: f64 = rng.random_range(0.6..=1.0);
    let mut walk = json!({
        "trail.Tactile": 1.0,
        "obstacle.Numeric": 1.0,
        "obstacle.mean": 0.0
    });
    let mut timeline = vec![
        json!({"at_ms": 0, "adapter_id": "trail", "payload": {"kind": "Tactile", "pressure": 0.7}}),
        json!({"at_ms": 0, "adapter_id": "obstacle", "payload": {"kind": "Numeric", "values": [0.0]}}),
    ];
    if level > 0 {
        walk["load.Tactile"] = json!(1.0);
        let n = level as u64 * HORIZON_MS / 1000;
        for i in 0..n {
            let pressure: f64 = rng.random_range(0.0..=1.0);
            timeline.push(json!({
                "at_ms": i * 1000 / level as u64,
                "adapter_id": "load",
                "payload": {"kind": "Tactile", "pressure": pressure}
            }));
        }
    }
    timeline.push(json!({
        "at_ms": obstacle_ms,
        "adapter_id": "obstacle",
        "payload": {"kind": "Numeric", "values": [magnitude]}
    }));
    timeline.sort_by_key(|e| e["at_ms"].as_u64());
    let mut assess = walk.clone();
    assess["obstacle.mean"] = json!(magnitude);
    let fabric = match jitter_us {
        None => json!({"lanes": lanes, "delivery_mode": DeliveryMode::ZeroLatency}),
        Some(mean_us) => json!({
            "lanes": lanes,
            "delivery_mode": DeliveryMode::Queued,
            "lane_delay_model": LaneDelayModel::Exponential { mean_us }
        }),
    };
    let doc = json!({
        "name": format!("switching@{level}"),
        "seed": seed,
        "horizon_ms": HORIZON_MS,
        "kernel": {"fabric": fabric},
        "modules": [
            {"id": "language", "kinds": ["Text"]},
            {"id": "vision", "kinds": ["Image"]},
            {"id": "motor", "kinds": ["Tactile", "Numeric"]}
        ],
        "adapters": [
            {"adapter_id": "trail", "direction": "Input", "modality": "Tactile"},
            {"adapter_id": "obstacle", "direction": "Input", "modality": "Numeric"},
            {"adapter_id": "load", "direction": "Input", "modality": "Tactile",
             "rate_limit": level.saturating_mul(2).max(1)},
            {"adapter_id": "legs", "direction": "Output", "modality": "Tactile"}
        ],
        "procedures": [
            {"proc_id": "walk", "trigger": {"features": walk}, "expected": {"features": walk},
             "steps": [
                {"action_id": "stride-left", "adapter_id": "legs", "payload": {"kind": "Tactile", "pressure": 0.6}},
                {"action_id": "stride-right", "adapter_id": "legs", "payload": {"kind": "Tactile", "pressure": 0.6}}
             ],
             "loop": true, "max_iterations": 10000},
            {"proc_id": "stop-and-assess", "trigger": {"features": assess}, "expected": {"features": assess},
             "steps": [
                {"action_id": "plant-feet", "adapter_id": "legs", "payload": {"kind": "Tactile", "pressure": 0.0}}
             ],
             "loop": false, "max_iterations": 1}
        ],
        "program": {
            "version": 1,
            "primary_goal": "walk the trail",
            "instructions": ["safe-action legs Tactile"],
            "base_log_weights": [0.0, 0.0, 0.0]
        },
        "ltm_seed": [
            {"content": {"kind": "Text", "text": "procedure:stop-and-assess"},
             "cue": {"features": assess}, "strength": 0.9}
        ],
        "timeline": timeline,
        "expectations": [
            {"type": "interrupt_count", "count": 1},
            {"type": "directive_present", "kind": "TakeOver", "count": 1},
            {"type": "directive_present", "kind": "DispatchProcedure", "count": 1},
            {"type": "metric_bound", "metric": "task_switch_latency.max_ns", "max": 10_000_000.0}
        ]
    });
    serde_json::from_value(doc).expect("switching scenario is well formed")
}

fn rep_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(rep as u64)
}

pub fn bench(config: &BenchConfig) -> Result<BenchRun, LoadError> {
    if config.levels.is_empty() {
        return Err(LoadError::Invalid("at least one load level is required".into()));
    }
    let mut rows = Vec::new();
    let mut digests = Vec::new();
    let mut decision_logs = Vec::new();
    for &level in &config.levels {
        let mut outcomes: Vec<RunOutcome> = Vec::new();
        for rep in 0..config.reps {
            let seed = rep_seed(config.seed, rep);
            let resolved =
                switching_scenario(level, seed, config.lanes, config.jitter_us).resolve(Path::new("."))?;
            let outcome = run(&resolved).map_err(|e| LoadError::Invalid(e.to_string()))?;
            digests.push(RepDigest {
                level,
                rep,
                seed,
                counts: outcome.report.counts.clone(),
            });
            decision_logs.push(((level, rep), outcome.decision_log()));
            outcomes.push(outcome);
        }
        let of = |f: &dyn Fn(&RunOutcome) -> f64| spread(outcomes.iter().map(f).collect());
        let latencies: Vec<f64> = outcomes
            .iter()
            .flat_map(|o| o.interrupts.iter().filter_map(|r| r.switch_latency_ns()))
            .map(|n| n as f64)
            .collect();
        let mut counts = EventCounts::default();
        for o in &outcomes {
            counts.add(&o.report.counts);
        }
        let fractions: Vec<f64> = outcomes
            .iter()
            .map(|o| o.report.accuracy_under_load.first().map_or(0.0, |a| a.fraction))
            .collect();
        rows.push(BenchRow {
            level,
            runs: outcomes.len(),
            task_switch_latency_ns: spread(latencies),
            accuracy: if fractions.is_empty() {
                0.0
            } else {
                fractions.iter().sum::<f64>() / fractions.len() as f64
            },
            peak_queue_depth: of(&|o| o.report.resource.total_peak_depth() as f64),
            peak_stm: of(&|o| o.report.resource.peak_stm as f64),
            frames_per_sec: of(&|o| o.report.resource.frames_per_sec),
            wall_time_ms: of(&|o| o.report.wall_time_ms),
            counts,
        });
    }
    Ok(BenchRun {
        report: BenchReport {
            config: config.clone(),
            rows,
        },
        digests,
        decision_logs,
    })
}

impl BenchRun {
    /// Write one decision log per repetition plus `counts.json` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for ((level, rep), log) in &self.decision_logs {
            std::fs::write(dir.join(format!("decisions-L{level}-r{rep}.ndjson")), log)?;
        }
        let counts = serde_json::to_vec_pretty(&self.digests)?;
        std::fs::write(dir.join("counts.json"), counts)
    }

    /// All decision logs concatenated in run order.
    pub fn combined_decision_log(&self) -> Vec<u8> {
        self.decision_logs.iter().flat_map(|(_, l)| l.iter().copied()).collect()
    }

    pub fn counts_by_level(&self) -> BTreeMap<u32, EventCounts> {
        self.report.rows.iter().map(|r| (r.level, r.counts.clone())).collect()
    }
}

impl BenchReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>8} {:>5} {:>12} {:>12} {:>9} {:>10} {:>10} {:>10}",
            "level", "runs", "switch p50", "switch p99", "accuracy", "queue p50", "queue p99", "frames/s"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8} {:>5} {:>9.3} ms {:>9.3} ms {:>9.3} {:>10.0} {:>10.0} {:>10.1}",
                r.level,
                r.runs,
                r.task_switch_latency_ns.p50 / 1e6,
                r.task_switch_latency_ns.p99 / 1e6,
                r.accuracy,
                r.peak_queue_depth.p50,
                r.peak_queue_depth.p99,
                r.frames_per_sec.p50
            );
        }
        s
    }
}
