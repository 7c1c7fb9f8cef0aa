//! Acceptance gate: one line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use ogi_control::{ControlConfig, ControlServer, ControlService};
use ogi_core::clock::{VirtualClock, NANOS_PER_MS};
use ogi_core::dps::{
    compute_weights, derive_routing, AuditOutcome, ExternalProgram, LinearScore, ModuleEntry, ModuleRegistry,
    OperationalProfile, ProfileId, ProfileTable, RoutingTable,
};
use ogi_core::executive::DirectiveKind;
use ogi_core::fabric::{DeliveryMode, DestinationFilter, Fabric, FabricConfig, LaneDelayModel};
use ogi_core::kernel::Kernel;
use ogi_core::memory::{decay, strengthen, ContextSnapshot, Memory, MemoryConfig, StmBody, StmWrite, TraceSeed};
use ogi_core::modality::{FrameBody, ModalityKind, ModalityPayload, ModuleId, Priority, Signature};
use ogi_core::telemetry::TelemetryEvent;
use ogi_harness::bench::switching_scenario;
use ogi_harness::{run, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str, overrides: &[String]) -> Result<ogi_harness::Resolved, String> {
    Scenario::load(&fixture(name), overrides).map_err(|e| format!("{name}: {e}"))
}

const MODULES: [(&str, &[&str]); 3] = [
    ("language", &["Text", "Audio"]),
    ("vision", &["Image"]),
    ("motor", &["Tactile", "Numeric"]),
];

const FEATURES: [&str; 8] = [
    "doc.Text",
    "mic.Audio",
    "cam.Image",
    "arm.Tactile",
    "lab.Numeric",
    "lab.mean",
    "cam.brightness",
    "autonomous.status",
];

fn registry() -> ModuleRegistry {
    let kind = |n: &str| ModalityKind::from_name(n).unwrap();
    ModuleRegistry::new(
        MODULES
            .iter()
            .map(|(id, kinds)| ModuleEntry::new(id, &kinds.iter().map(|k| kind(k)).collect::<Vec<_>>(), ""))
            .collect(),
    )
    .unwrap()
}

/// Scores computed directly from the linear rule, without the library.
fn oracle_scores(ctx: &BTreeMap<&str, f64>, b: &[f64], delta: &[f64]) -> Vec<f64> {
    MODULES
        .iter()
        .enumerate()
        .map(|(i, (_, kinds))| {
            let c: f64 = ctx
                .iter()
                .filter(|(k, _)| kinds.iter().any(|kind| k.ends_with(&format!(".{kind}"))))
                .map(|(_, v)| v)
                .sum();
            b[i] + delta[i] + c
        })
        .collect()
}

fn naive_softmax(g: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = g.iter().map(|x| (x / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

struct Draw {
    ctx: BTreeMap<&'static str, f64>,
    b: Vec<f64>,
    profile: ProfileId,
    tau: f64,
}

fn draws(n: usize, seed: u64) -> Vec<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let ctx = (0..rng.random_range(0..=FEATURES.len()))
                .map(|_| (FEATURES[rng.random_range(0..FEATURES.len())], rng.random_range(0.0..=1.0)))
                .collect();
            Draw {
                ctx,
                b: (0..3).map(|_| rng.random_range(-5.0..=5.0)).collect(),
                profile: ProfileId::ALL[rng.random_range(0..ProfileId::ALL.len())],
                tau: rng.random_range(0.5..=2.0),
            }
        })
        .collect()
}

fn snapshot(ctx: &BTreeMap<&str, f64>) -> ContextSnapshot {
    let mut s = ContextSnapshot::empty();
    s.features = Signature::from_pairs(ctx.iter().map(|(k, v)| (k.to_string(), *v))).unwrap();
    s
}

fn program(b: &[f64], tau: f64) -> ExternalProgram {
    let mut p = ExternalProgram::neutral(b.len(), "acceptance");
    p.base_log_weights = b.to_vec();
    p.temperature = tau;
    p
}

fn simplex_and_softmax() -> Verdict {
    let reg = registry();
    let table = ProfileTable::defaults(&reg);
    let mut compared = 0;
    let mut worst = 0.0f64;
    let all = draws(10_000, 11);
    for d in &all {
        let profile = table.get(d.profile).unwrap();
        let w = compute_weights::<f64>(&LinearScore, &snapshot(&d.ctx), &program(&d.b, d.tau), &profile, &reg, 0)
            .map_err(|e| e.to_string())?;
        ensure!((w.sum() - 1.0).abs() <= 1e-9, "sum {} off the simplex", w.sum());
        ensure!(w.w.iter().all(|&x| x >= 0.0), "negative weight in {:?}", w.w);
        let g = oracle_scores(&d.ctx, &d.b, &profile.delta);
        if g.iter().all(|x| x.abs() <= 20.0) {
            compared += 1;
            for (x, y) in w.w.iter().zip(naive_softmax(&g, d.tau)) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    ensure!(worst <= 1e-9, "max deviation from oracle {worst:e}");
    ensure!(compared == all.len(), "only {compared} draws had bounded scores");
    let w = compute_weights::<f64>(
        &LinearScore,
        &ContextSnapshot::empty(),
        &program(&[std::f64::consts::LN_2, 0.0, 0.0], 1.0),
        &OperationalProfile::neutral(3),
        &reg,
        0,
    )
    .map_err(|e| e.to_string())?;
    for (x, y) in w.w.iter().zip([0.5, 0.25, 0.25]) {
        ensure!((x - y).abs() <= 1e-12, "ln 2 case gave {:?}", w.w);
    }
    Ok(format!("{} draws on the simplex, max oracle deviation {worst:.1e}, ln 2 case exact", all.len()))
}

fn same_routing(a: &RoutingTable, b: &RoutingTable) -> bool {
    a.routes.len() == b.routes.len()
        && a.routes.iter().all(|(k, ra)| {
            b.routes.get(k).is_some_and(|rb| {
                ra.len() == rb.len()
                    && ra
                        .iter()
                        .zip(rb)
                        .all(|(x, y)| x.module == y.module && (x.share - y.share).abs() <= 1e-9)
            })
        })
}

fn shift_invariance() -> Verdict {
    let reg = registry();
    let table = ProfileTable::defaults(&reg);
    let mut worst = 0.0f64;
    let all = draws(10_000, 12);
    for d in &all {
        let profile = table.get(d.profile).unwrap();
        let ctx = snapshot(&d.ctx);
        let base = program(&d.b, d.tau);
        let w0 = compute_weights::<f64>(&LinearScore, &ctx, &base, &profile, &reg, 0).map_err(|e| e.to_string())?;
        let r0 = derive_routing(&w0, &base, &reg, 0.1).map_err(|e| e.to_string())?;
        for c in [-5.0, 0.0, 7.0] {
            let moved = program(&d.b.iter().map(|x| x + c).collect::<Vec<_>>(), d.tau);
            let w = compute_weights::<f64>(&LinearScore, &ctx, &moved, &profile, &reg, 0).map_err(|e| e.to_string())?;
            for (x, y) in w0.w.iter().zip(&w.w) {
                worst = worst.max((x - y).abs());
            }
            let r = derive_routing(&w, &moved, &reg, 0.1).map_err(|e| e.to_string())?;
            ensure!(same_routing(&r0, &r), "routing changed under shift {c}");
        }
    }
    ensure!(worst <= 1e-9, "max weight change {worst:e}");
    Ok(format!("{} draws x 3 shifts, max change {worst:.1e}, routing unchanged", all.len()))
}

struct MultipathStats {
    delivered: u64,
    faulted: u64,
    violations: u64,
    accounting_failures: u64,
    snapshots: u64,
}

fn multipath_run(rng: &mut ChaCha8Rng, stats: &mut MultipathStats) -> Result<(), String> {
    let lanes = rng.random_range(1..=8);
    let delay = if rng.random_bool(0.5) {
        LaneDelayModel::Exponential {
            mean_us: rng.random_range(50.0..=2000.0),
        }
    } else {
        let min_us = rng.random_range(0..=500);
        LaneDelayModel::Uniform {
            min_us,
            max_us: min_us + rng.random_range(1..=2000),
        }
    };
    let clock = VirtualClock::shared();
    let fabric = Fabric::new(FabricConfig::queued(lanes, delay, rng.random()), clock.clone()).map_err(|e| e.to_string())?;
    let sink = ModuleId::new("sink");
    fabric.register(sink.clone());
    fabric.subscribe(&sink, DestinationFilter::Module(sink.clone())).map_err(|e| e.to_string())?;
    let sources: Vec<ModuleId> = (0..4).map(|i| ModuleId::new(format!("src{i}"))).collect();
    for s in &sources {
        fabric.register(s.clone());
    }
    let mut last: BTreeMap<(ModuleId, u64), u64> = BTreeMap::new();
    let mut observe = |fabric: &Fabric, stats: &mut MultipathStats| {
        for d in fabric.recv(&sink) {
            let prev = last.insert((d.frame.source.clone(), d.frame.stream_id), d.frame.seq).unwrap_or(0);
            if d.frame.seq <= prev {
                stats.violations += 1;
            }
        }
        let m = fabric.metrics();
        stats.snapshots += 1;
        if m.accepted != m.delivered + m.pending + m.faulted {
            stats.accounting_failures += 1;
        }
    };
    let n = rng.random_range(1..=80);
    for _ in 0..n {
        let src = &sources[rng.random_range(0..sources.len())];
        let stream = rng.random_range(0..4u64);
        let prio = [Priority::Data, Priority::Control][rng.random_range(0..2)];
        fabric
            .send_new(src, [sink.clone()], stream, prio, FrameBody::Payload(ModalityPayload::tactile(0.5)))
            .map_err(|e| e.to_string())?;
        clock.advance_by(rng.random_range(0..=1_000_000));
        fabric.pump();
        observe(&fabric, stats);
    }
    while let Some(t) = fabric.next_arrival() {
        clock.advance_to(t);
        fabric.pump();
        observe(&fabric, stats);
    }
    let m = fabric.metrics();
    stats.delivered += m.delivered;
    stats.faulted += m.faulted;
    ensure!(m.pending == 0, "{} frames never left the fabric", m.pending);
    ensure!(m.accepted == n, "accepted {} of {n}", m.accepted);
    Ok(())
}

fn multipath_ordering() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut stats = MultipathStats {
        delivered: 0,
        faulted: 0,
        violations: 0,
        accounting_failures: 0,
        snapshots: 0,
    };
    for _ in 0..1000 {
        multipath_run(&mut rng, &mut stats)?;
    }
    ensure!(stats.violations == 0, "{} ordering violations", stats.violations);
    ensure!(
        stats.accounting_failures == 0,
        "accounting broke at {} of {} snapshots",
        stats.accounting_failures,
        stats.snapshots
    );
    Ok(format!(
        "1000 runs, {} delivered, {} faulted, 0 violations, accounting held at {} snapshots",
        stats.delivered, stats.faulted, stats.snapshots
    ))
}

fn count_kind(o: &ogi_harness::RunOutcome, kind: DirectiveKind) -> usize {
    o.decisions.iter().filter(|d| d.action.kind() == kind).count()
}

fn interrupt_pathway() -> Verdict {
    let resolved = load("trail-walk.json", &[])?;
    ensure!(
        resolved.scenario.kernel.fabric.delivery_mode == DeliveryMode::ZeroLatency,
        "fixture is not in zero-latency mode"
    );
    let o = run(&resolved).map_err(|e| e.to_string())?;
    ensure!(o.interrupts.len() == 1, "{} interrupts", o.interrupts.len());
    let takeovers = count_kind(&o, DirectiveKind::TakeOver);
    ensure!(takeovers == 1, "{takeovers} TakeOver directives");
    let i = &o.interrupts[0];
    ensure!((i.interrupt.divergence - 0.9).abs() <= 1e-12, "divergence {}", i.interrupt.divergence);
    let latency = i.switch_latency_ns().ok_or("interrupt never taken over")?;
    ensure!(latency < 10 * NANOS_PER_MS, "switch latency {latency} ns");
    let quiet = run(&load("trail-walk-no-obstacle.json", &[])?).map_err(|e| e.to_string())?;
    ensure!(quiet.interrupts.is_empty(), "{} interrupts without obstacle", quiet.interrupts.len());
    Ok(format!(
        "1 interrupt, 1 TakeOver, divergence {}, latency {:.3} ms, 0 without obstacle",
        i.interrupt.divergence,
        latency as f64 / 1e6
    ))
}

fn one_way_visibility() -> Verdict {
    let source = include_str!("../../core/src/executive.rs");
    ensure!(!source.contains("ProcedureRun"), "executive source names ProcedureRun");
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut observed = 0;
    for run_ix in 0..100u64 {
        let lanes = rng.random_range(1..=8);
        let jitter = rng.random_range(100.0..=3000.0);
        let resolved = switching_scenario(10, 1000 + run_ix, lanes, Some(jitter))
            .resolve(Path::new("."))
            .map_err(|e| e.to_string())?;
        let o = run(&resolved).map_err(|e| e.to_string())?;
        for obs in &o.observations {
            ensure!(
                obs.snapshot_revision >= obs.report_revision,
                "run {run_ix}: observed revision {} before report revision {}",
                obs.snapshot_revision,
                obs.report_revision
            );
        }
        observed += o.observations.len();
    }
    ensure!(observed > 0, "no observations recorded");
    Ok(format!("executive is structurally blind to runs; {observed} observations over 100 queued runs"))
}

fn stm_write(key: String, strength: f64, value: f64) -> StmWrite {
    StmWrite {
        key,
        payload: StmBody::Payload(ModalityPayload::tactile(value)),
        signature: Signature::from_pairs([("arm.Tactile", value)]).unwrap(),
        strength,
        author: ModuleId::io(),
    }
}

fn memory() -> Verdict {
    let config = MemoryConfig::default();
    let k = config.stm_capacity;
    ensure!(k == 256, "default capacity {k}");
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut m = Memory::new(config);
    let mut fresh = BTreeSet::new();
    for t in 0..10_000u64 {
        let key = format!("k{}", rng.random_range(0..700));
        if m.stm_get(&key).is_none() {
            fresh.insert(t);
        }
        m.stm_put(stm_write(key, rng.random_range(0.0..=1.0), rng.random()), t);
        ensure!(m.stm_len() <= k, "STM holds {} > {k}", m.stm_len());
    }
    let theta = m.config().consolidation_threshold;
    let mut consolidated = 0;
    for e in m.evictions() {
        match e.consolidated {
            Some(id) => {
                ensure!(e.strength >= theta, "weak entry {} consolidated", e.key);
                ensure!(m.ltm().get(id).is_some(), "trace {id} missing");
                consolidated += 1;
            }
            None => ensure!(e.strength < theta, "strong entry {} dropped", e.key),
        }
    }
    ensure!(consolidated == m.ltm().len(), "{consolidated} consolidations, {} traces", m.ltm().len());
    ensure!(m.evictions().len() + m.stm_len() == fresh.len(), "entries lost outside eviction");

    ensure!((strengthen(0.5, 0.2) - 0.6f64).abs() <= 1e-12, "strengthen(0.5, 0.2) = {}", strengthen(0.5, 0.2));
    let mut recall = Memory::new(MemoryConfig {
        alpha: 0.2,
        ..MemoryConfig::default()
    });
    let cue = Signature::from_pairs([("cam.Image", 1.0)]).unwrap();
    recall
        .ltm_store(
            TraceSeed {
                content: ModalityPayload::text("x"),
                cue: cue.clone(),
                strength: 0.5,
            },
            0,
        )
        .map_err(|e| e.to_string())?;
    let got = recall.ltm_recall(&cue, 1, 1).map_err(|e| e.to_string())?;
    let s = got.first().ok_or("nothing recalled")?.trace.strength;
    ensure!((s - 0.6).abs() <= 1e-12, "recalled strength {s}");

    let ln2 = std::f64::consts::LN_2;
    ensure!((decay(0.8, ln2, 1.0) - 0.4f64).abs() <= 1e-12, "decay gave {}", decay(0.8, ln2, 1.0));
    let mut fading = Memory::new(MemoryConfig {
        decay_rate_per_s: ln2 / 2.0,
        ..MemoryConfig::default()
    });
    let id = fading
        .ltm_store(
            TraceSeed {
                content: ModalityPayload::text("y"),
                cue,
                strength: 0.8,
            },
            0,
        )
        .map_err(|e| e.to_string())?;
    fading.decay_seconds(2.0);
    let faded = fading.ltm().get(id).ok_or("trace vanished")?.strength;
    ensure!((faded - 0.4).abs() <= 1e-12, "store decay gave {faded}");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    m.stm_persist(&a).map_err(|e| e.to_string())?;
    let mut restored = Memory::default();
    restored.stm_restore(&a).map_err(|e| e.to_string())?;
    restored.stm_persist(&b).map_err(|e| e.to_string())?;
    let (ba, bb) = (std::fs::read(&a).map_err(|e| e.to_string())?, std::fs::read(&b).map_err(|e| e.to_string())?);
    ensure!(ba == bb, "persisted bytes differ after restore");
    ensure!(restored.revision() == m.revision(), "revision changed on restore");
    for (x, y) in m.stm_entries().zip(restored.stm_entries()) {
        ensure!(
            x == y && x.strength.to_bits() == y.strength.to_bits(),
            "entry {} changed on restore",
            x.key
        );
    }
    Ok(format!(
        "10000 writes under K={k}, {} evictions ({consolidated} consolidated), recall 0.5 -> {s}, decay 0.8 -> {faded}, \
         {} byte round trip",
        m.evictions().len(),
        ba.len()
    ))
}

fn triage_gating() -> Verdict {
    let o = run(&load("triage.json", &[])?).map_err(|e| e.to_string())?;
    let completes: Vec<_> = o.decisions.iter().filter(|d| d.action.kind() == DirectiveKind::Complete).collect();
    ensure!(!completes.is_empty(), "no Complete with every modality present");
    for d in &completes {
        let ctx = &o.contexts[&d.directive_id];
        for f in ["history.Text", "labs.Numeric", "xray.Image"] {
            ensure!(ctx.get(f) > 0.0, "Complete {} issued without {f}", d.directive_id);
        }
    }
    for missing in ["history", "labs", "xray"] {
        let o = run(&load(&format!("triage-without-{missing}.json"), &[])?).map_err(|e| e.to_string())?;
        let n = count_kind(&o, DirectiveKind::Complete);
        ensure!(n == 0, "{n} Complete without {missing}");
    }
    Ok(format!(
        "Complete at {:.0} ms with all three; none when any one is missing",
        completes[0].issued_at as f64 / 1e6
    ))
}

fn bench_artifacts(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_ogi"))
        .args(["bench", "--seed", "7", "--out"])
        .arg(dir)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(status.status.code() == Some(0), "bench exited with {:?}", status.status.code());
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn determinism() -> Verdict {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    let first = bench_artifacts(a.path())?;
    let second = bench_artifacts(b.path())?;
    ensure!(first.contains_key("counts.json"), "no counts.json written");
    let logs = first.keys().filter(|k| k.starts_with("decisions-")).count();
    ensure!(logs > 0, "no decision logs written");
    let bytes: usize = first.values().map(Vec::len).sum();
    ensure!(
        first.keys().eq(second.keys()),
        "artifact sets differ: {:?} vs {:?}",
        first.keys(),
        second.keys()
    );
    for (name, content) in &first {
        ensure!(&second[name] == content, "{name} differs between runs");
    }
    Ok(format!("{logs} decision logs and counts.json identical ({bytes} bytes)"))
}

fn live_readministration() -> Verdict {
    let resolved = load("trail-walk.json", &[])?;
    let (setup, events) = resolved.kernel_setup();
    let mut kernel = Kernel::new(setup).map_err(|e| e.to_string())?;
    kernel.schedule(events);
    let h = kernel.handle();
    let frames = h.subscribe_telemetry();
    let config = ControlConfig {
        listen: "127.0.0.1:0".into(),
        admin_token: "admin".into(),
        viewer_token: "viewer".into(),
        telemetry_buffer: 4096,
    };
    let server = ControlServer::start(ControlService::new(h.clone(), config)).map_err(|e| e.to_string())?;
    kernel.run_until(1000 * NANOS_PER_MS).map_err(|e| e.to_string())?;
    let mut before = None;
    while let Ok(f) = frames.try_recv() {
        if let TelemetryEvent::Weights { weights, .. } = f.event {
            before = Some(weights);
        }
    }
    let before = before.ok_or("no weight frame before the edit")?;

    let program = h.program();
    let target = ogi_core::dps::argmax(&before.w.iter().map(|x| -x).collect::<Vec<_>>());
    let mut edited = program.clone();
    edited.version += 1;
    edited.base_log_weights[target] += 1.5;
    let stream = TcpStream::connect(server.local_addr()).map_err(|e| e.to_string())?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).map_err(|e| e.to_string())?;
    let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
    let req = json!({"op": "PutProgram", "auth_token": "admin", "body": edited, "id": 1});
    writeln!(writer, "{req}").map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line).map_err(|e| e.to_string())?;
    let reply: Value = serde_json::from_str(&line).map_err(|e| e.to_string())?;
    ensure!(reply["status"] == json!("ok"), "PutProgram refused: {line}");

    kernel.step_cycle().map_err(|e| e.to_string())?;
    let next = std::iter::from_fn(|| frames.try_recv().ok())
        .find_map(|f| match f.event {
            TelemetryEvent::Weights { weights, .. } => Some(weights),
            _ => None,
        })
        .ok_or("no weight frame after the edit")?;
    server.shutdown();
    let version = next.inputs_version.program_version;
    ensure!(version == program.version + 1, "version {} -> {version}", program.version);
    ensure!(
        next.w[target] > before.w[target],
        "module {target} weight {} -> {}",
        before.w[target],
        next.w[target]
    );
    let audited = h
        .audit_log()
        .iter()
        .any(|r| r.outcome == AuditOutcome::Accepted { version });
    ensure!(audited, "no audit record for version {version}");
    Ok(format!(
        "module {target} weight {:.4} -> {:.4}, version {} -> {version}, audit recorded",
        before.w[target], next.w[target], program.version
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("simplex and softmax", simplex_and_softmax),
        ("shift invariance", shift_invariance),
        ("ordering under multipath", multipath_ordering),
        ("interrupt pathway", interrupt_pathway),
        ("one-way visibility", one_way_visibility),
        ("memory", memory),
        ("multi-modal gating", triage_gating),
        ("determinism", determinism),
        ("live re-administration", live_readministration),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name:<26} {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<26} {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
