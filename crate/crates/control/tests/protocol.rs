use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use ogi_control::{ControlConfig, ControlResponse, ControlServer, ControlService, ErrorCode, Followup};
use ogi_core::autonomous::StoredProcedure;
use ogi_core::clock::NANOS_PER_MS;
use ogi_core::dps::{AuditOutcome, ExternalProgram, ModuleEntry, ModuleRegistry, Principal};
use ogi_core::io::{ActionDescriptor, AdapterDescriptor, Direction};
use ogi_core::kernel::{Kernel, KernelSetup, TimelineEvent};
use ogi_core::modality::{ModalityKind, ModalityPayload, ModuleId, Signature};
use ogi_core::telemetry::TelemetryFrame;
use serde_json::{json, Value};

fn config() -> ControlConfig {
    ControlConfig {
        listen: "127.0.0.1:0".into(),
        admin_token: "admin-secret".into(),
        viewer_token: "viewer-secret".into(),
        telemetry_buffer: 64,
    }
}

fn registry() -> ModuleRegistry {
    ModuleRegistry::new(vec![
        ModuleEntry::new("language", &[ModalityKind::Text], ""),
        ModuleEntry::new("vision", &[ModalityKind::Image], ""),
        ModuleEntry::new("motor", &[ModalityKind::Tactile, ModalityKind::Numeric], ""),
    ])
    .unwrap()
}

fn walking_kernel() -> Kernel {
    let mut setup = KernelSetup::new(registry(), ExternalProgram::neutral(3, "walk the trail"));
    setup.adapters = vec![
        AdapterDescriptor::new("trail", Direction::Input, ModalityKind::Tactile),
        AdapterDescriptor::new("obstacle", Direction::Input, ModalityKind::Numeric),
        AdapterDescriptor::new("legs", Direction::Output, ModalityKind::Tactile),
    ];
    let ctx = Signature::from_pairs([("trail.Tactile", 1.0), ("obstacle.Numeric", 1.0), ("obstacle.mean", 0.0)]).unwrap();
    setup.procedures = vec![StoredProcedure {
        proc_id: "walk".into(),
        trigger: ctx.clone(),
        expected: ctx,
        steps: vec![ActionDescriptor {
            action_id: "stride".into(),
            adapter_id: "legs".into(),
            payload: ModalityPayload::tactile(0.5),
            feedback_requested: false,
        }],
        looping: true,
        max_iterations: 1000,
    }];
    let mut k = Kernel::new(setup).unwrap();
    k.schedule([
        TimelineEvent::Inject {
            at_ms: 0,
            adapter_id: "trail".into(),
            payload: ModalityPayload::tactile(0.7),
        },
        TimelineEvent::Inject {
            at_ms: 0,
            adapter_id: "obstacle".into(),
            payload: ModalityPayload::numeric(vec![0.0]),
        },
        TimelineEvent::Inject {
            at_ms: 500,
            adapter_id: "obstacle".into(),
            payload: ModalityPayload::numeric(vec![0.9]),
        },
    ]);
    k
}

fn request(service: &ControlService, v: Value) -> ControlResponse {
    service.handle_line(&v.to_string()).0
}

#[test]
fn get_weights_after_startup() {
    let k = walking_kernel();
    let s = ControlService::new(k.handle(), config());
    let r = request(&s, json!({"op": "GetWeights", "auth_token": "viewer-secret"}));
    assert!(r.is_ok());
    assert_eq!(r.body["weights"]["inputs_version"]["program_version"], 1);
    assert_eq!(r.body["weights"]["w"].as_array().unwrap().len(), 3);
}

#[test]
fn reads_require_a_token() {
    let k = walking_kernel();
    let s = ControlService::new(k.handle(), config());
    for op in ["GetProgram", "GetWeights", "GetStmSummary", "GetDecisionLog", "GetMetrics", "GetAuditLog", "SubscribeTelemetry"] {
        let r = request(&s, json!({"op": op, "auth_token": "wrong"}));
        assert_eq!(r.code(), Some(ErrorCode::Unauthorized), "{op}");
        let r = request(&s, json!({"op": op, "auth_token": "viewer-secret"}));
        assert!(r.is_ok(), "{op}");
    }
}

#[test]
fn viewer_cannot_put_program() {
    let k = walking_kernel();
    let h = k.handle();
    let s = ControlService::new(h.clone(), config());
    let mut p = h.program();
    p.version += 1;
    let r = request(&s, json!({"op": "PutProgram", "auth_token": "viewer-secret", "body": p}));
    assert_eq!(r.code(), Some(ErrorCode::Unauthorized));
    assert_eq!(h.program().version, 1);
    let audit = h.audit_log();
    assert_eq!(audit.len(), 1);
    assert_eq!(audit[0].role, "viewer");
    assert_eq!(audit[0].outcome, AuditOutcome::Rejected { reason: "unauthorized".into() });
}

#[test]
fn admin_put_program_moves_weights() {
    let mut k = walking_kernel();
    let h = k.handle();
    let s = ControlService::new(h.clone(), config());
    assert!(h.audit_log().is_empty());
    k.step_cycle().unwrap();
    let before = request(&s, json!({"op": "GetWeights", "auth_token": "viewer-secret"})).body;
    let mut p = h.program();
    p.version += 1;
    p.base_log_weights[1] += 1.0;
    let r = request(&s, json!({"op": "PutProgram", "auth_token": "admin-secret", "body": p, "id": 7}));
    assert!(r.is_ok(), "{r:?}");
    assert_eq!(r.body["version"], 2);
    assert_eq!(r.id, Some(json!(7)));
    k.step_cycle().unwrap();
    let after = request(&s, json!({"op": "GetWeights", "auth_token": "viewer-secret"})).body;
    assert_eq!(after["weights"]["inputs_version"]["program_version"], 2);
    assert!(after["weights"]["w"][1].as_f64().unwrap() > before["weights"]["w"][1].as_f64().unwrap());
    let audit = h.audit_log();
    assert_eq!(audit.len(), 1);
    assert_eq!(audit[0].outcome, AuditOutcome::Accepted { version: 2 });
}

#[test]
fn stale_version_conflicts() {
    let k = walking_kernel();
    let h = k.handle();
    let s = ControlService::new(h.clone(), config());
    let p = h.program();
    let r = request(&s, json!({"op": "PutProgram", "auth_token": "admin-secret", "body": p}));
    assert_eq!(r.code(), Some(ErrorCode::Conflict));
    let audit = h.audit_log();
    assert_eq!(audit.len(), 1);
    assert_eq!(audit[0].outcome, AuditOutcome::Rejected { reason: "conflict".into() });
}

#[test]
fn malformed_json_reports_position() {
    let k = walking_kernel();
    let s = ControlService::new(k.handle(), config());
    let (r, f) = s.handle_line(r#"{"op": "GetWeights", "auth_token": }"#);
    assert_eq!(f, Followup::None);
    let e = r.error.unwrap();
    assert_eq!(e.code, ErrorCode::Protocol);
    assert_eq!(e.line, Some(1));
    assert_eq!(e.column, Some(36));
}

#[test]
fn layers_stay_separate() {
    let k = walking_kernel();
    let h = k.handle();
    let s = ControlService::new(h.clone(), config());
    let r = request(&s, json!({"op": "SelectProfile", "auth_token": "admin-secret", "body": {"profile": "Creative"}}));
    assert_eq!(r.code(), Some(ErrorCode::Protocol));
    let mut p = h.program();
    p.version += 1;
    for m in ["executive", "autonomous", "io", "memory"] {
        let err = h.put_program(&Principal::Module(ModuleId::new(m)), p.clone()).unwrap_err();
        assert!(matches!(err, ogi_core::dps::DpsError::Unauthorized { .. }));
    }
    assert_eq!(h.program().version, 1);
}

#[test]
fn config_file_shape() {
    let c = ControlConfig::from_json(r#"{"listen":"127.0.0.1:9000","admin_token":"a","viewer_token":"v"}"#).unwrap();
    assert_eq!(c.telemetry_buffer, ogi_core::telemetry::DEFAULT_BUFFER);
    assert_eq!(c.listen, "127.0.0.1:9000");
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn connect(addr: std::net::SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Self {
            reader: BufReader::new(stream.try_clone().unwrap()),
            writer: stream,
        }
    }

    fn send(&mut self, v: Value) {
        writeln!(self.writer, "{v}").unwrap();
    }

    fn line(&mut self) -> Value {
        let mut s = String::new();
        self.reader.read_line(&mut s).unwrap();
        serde_json::from_str(&s).unwrap()
    }
}

#[test]
fn tcp_requests_are_answered_in_order() {
    let k = walking_kernel();
    let server = ControlServer::start(ControlService::new(k.handle(), config())).unwrap();
    let mut c = Client::connect(server.local_addr());
    for i in 0..5 {
        c.send(json!({"op": "GetMetrics", "auth_token": "viewer-secret", "id": i}));
    }
    c.writer.write_all(b"not json\n").unwrap();
    for i in 0..5 {
        let r = c.line();
        assert_eq!(r["type"], "response");
        assert_eq!(r["status"], "ok");
        assert_eq!(r["id"], i);
    }
    let bad = c.line();
    assert_eq!(bad["status"], "error");
    assert_eq!(bad["error"]["code"], "protocol");
    assert_eq!(bad["error"]["line"], 1);
    server.shutdown();
}

#[test]
fn telemetry_is_complete_over_tcp() {
    let mut k = walking_kernel();
    let h = k.handle();
    let server = ControlServer::start(ControlService::new(h.clone(), config())).unwrap();
    let mut c = Client::connect(server.local_addr());
    c.send(json!({"op": "SubscribeTelemetry", "auth_token": "viewer-secret"}));
    assert_eq!(c.line()["status"], "ok");
    while h.telemetry_subscribers() == 0 {
        std::thread::sleep(Duration::from_millis(5));
    }
    let recomputes_before = h.metrics().counters.weight_recomputes;
    k.run_until(1_000 * NANOS_PER_MS).unwrap();
    let m = h.metrics();
    let weights = m.counters.weight_recomputes - recomputes_before;
    let interrupts = m.interrupts as u64;
    let directives = m.directives as u64;
    assert_eq!(interrupts, 1);
    let total = weights + interrupts + directives;
    let mut seen = std::collections::BTreeMap::<String, u64>::new();
    let mut last_seq = 0;
    for _ in 0..total {
        let v = c.line();
        assert_eq!(v["type"], "telemetry");
        let frame: TelemetryFrame = serde_json::from_value(v.clone()).unwrap();
        assert!(frame.seq > last_seq);
        last_seq = frame.seq;
        *seen.entry(v["event"].as_str().unwrap().to_string()).or_default() += 1;
    }
    assert_eq!(seen.get("weights").copied().unwrap_or(0), weights);
    assert_eq!(seen.get("interrupt").copied().unwrap_or(0), interrupts);
    assert_eq!(seen.get("directive").copied().unwrap_or(0), directives);
    server.shutdown();
}

#[test]
fn stalled_subscriber_does_not_block_kernel() {
    let mut setup = KernelSetup::new(registry(), ExternalProgram::neutral(3, "g"));
    setup.config.telemetry_buffer = 2;
    setup.adapters = vec![AdapterDescriptor::new("cam", Direction::Input, ModalityKind::Image)];
    let mut k = Kernel::new(setup).unwrap();
    k.schedule((0..20).map(|i| TimelineEvent::Inject {
        at_ms: i * 50,
        adapter_id: "cam".into(),
        payload: ModalityPayload::image(1, 1, vec![i as f64 / 20.0]),
    }));
    let h = k.handle();
    let stalled = h.subscribe_telemetry();
    k.run_until(1_000 * NANOS_PER_MS).unwrap();
    assert_eq!(h.telemetry_subscribers(), 0);
    assert_eq!(stalled.try_iter().count(), 2);
}

#[test]
fn undecodable_program_is_audited() {
    let k = walking_kernel();
    let h = k.handle();
    let s = ControlService::new(h.clone(), config());
    let r = request(&s, json!({"op": "PutProgram", "auth_token": "admin-secret", "body": {"version": 2}}));
    assert_eq!(r.code(), Some(ErrorCode::InvalidProgram));
    let r = request(&s, json!({"op": "PutProgram", "auth_token": "", "body": {}}));
    assert_eq!(r.code(), Some(ErrorCode::Unauthorized));
    let mut p = h.program();
    p.version += 1;
    p.base_log_weights.pop();
    let r = request(&s, json!({"op": "PutProgram", "auth_token": "admin-secret", "body": p}));
    assert_eq!(r.code(), Some(ErrorCode::InvalidProgram));
    let reasons: Vec<_> = h
        .audit_log()
        .into_iter()
        .map(|a| match a.outcome {
            AuditOutcome::Rejected { reason } => reason,
            AuditOutcome::Accepted { .. } => "accepted".into(),
        })
        .collect();
    assert_eq!(reasons.len(), 3);
    assert_eq!(reasons[0], "invalid_program");
    assert_eq!(reasons[1], "unauthorized");
    assert!(reasons[2].contains("base_log_weights"));
    assert_eq!(h.program().version, 1);
}
