//! Control endpoint for a running kernel.
//!
//! Newline-delimited JSON over TCP. Each line is a [`ControlRequest`]; each
//! request gets exactly one [`ControlResponse`] line, in order. After a
//! successful `SubscribeTelemetry` the connection also carries telemetry push
//! frames (`"type": "telemetry"`). The protocol is documented in
//! `docs/control-protocol.md`.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use ogi_core::dps::{DpsError, ExternalProgram, Principal, Role};
use ogi_core::kernel::KernelHandle;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub admin_token: String,
    pub viewer_token: String,
    #[serde(default = "default_buffer")]
    pub telemetry_buffer: usize,
}

fn default_listen() -> String {
    "127.0.0.1:7878".to_string()
}

fn default_buffer() -> usize {
    ogi_core::telemetry::DEFAULT_BUFFER
}

impl ControlConfig {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    GetProgram,
    PutProgram,
    GetWeights,
    GetStmSummary,
    GetDecisionLog,
    GetMetrics,
    GetAuditLog,
    SubscribeTelemetry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRequest {
    pub op: Op,
    #[serde(default)]
    pub body: Value,
    #[serde(default)]
    pub auth_token: String,
    /// Echoed back in the response when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Protocol,
    Unauthorized,
    Conflict,
    InvalidProgram,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResponse {
    #[serde(rename = "type")]
    pub frame_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub body: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

pub const RESPONSE_FRAME_TYPE: &str = "response";

const WRITE_TIMEOUT: std::time::Duration = std::time::Duration::from_secs(5);

impl ControlResponse {
    pub fn ok(id: Option<Value>, body: Value) -> Self {
        Self {
            frame_type: RESPONSE_FRAME_TYPE.into(),
            id,
            status: Status::Ok,
            body,
            error: None,
        }
    }

    pub fn error(id: Option<Value>, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            frame_type: RESPONSE_FRAME_TYPE.into(),
            id,
            status: Status::Error,
            body: Value::Null,
            error: Some(ErrorBody {
                code,
                message: message.into(),
                line: None,
                column: None,
            }),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn code(&self) -> Option<ErrorCode> {
        self.error.as_ref().map(|e| e.code)
    }
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Request handling independent of transport.
#[derive(Debug, Clone)]
pub struct ControlService {
    kernel: KernelHandle,
    config: Arc<ControlConfig>,
}

/// What a request asks the transport to do beyond replying.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Followup {
    None,
    StartTelemetry,
}

impl ControlService {
    pub fn new(kernel: KernelHandle, config: ControlConfig) -> Self {
        Self {
            kernel,
            config: Arc::new(config),
        }
    }

    pub fn kernel(&self) -> &KernelHandle {
        &self.kernel
    }

    pub fn principal(&self, token: &str) -> Principal {
        if !token.is_empty() && token == self.config.admin_token {
            Principal::Operator(Role::Admin)
        } else if !token.is_empty() && token == self.config.viewer_token {
            Principal::Operator(Role::Viewer)
        } else {
            Principal::Unauthenticated
        }
    }

    /// Parse and serve one request line.
    pub fn handle_line(&self, line: &str) -> (ControlResponse, Followup) {
        match serde_json::from_str::<ControlRequest>(line) {
            Ok(req) => self.handle(req),
            Err(e) => {
                let mut r = ControlResponse::error(
                    None,
                    ErrorCode::Protocol,
                    format!("malformed request at line {} column {}: {e}", e.line(), e.column()),
                );
                if let Some(err) = r.error.as_mut() {
                    err.line = Some(e.line());
                    err.column = Some(e.column());
                }
                (r, Followup::None)
            }
        }
    }

    pub fn handle(&self, req: ControlRequest) -> (ControlResponse, Followup) {
        let principal = self.principal(&req.auth_token);
        let id = req.id.clone();
        if req.op == Op::PutProgram {
            return (self.put_program(id, &principal, req.body), Followup::None);
        }
        if principal == Principal::Unauthenticated {
            return (
                ControlResponse::error(id, ErrorCode::Unauthorized, "a viewer or admin token is required"),
                Followup::None,
            );
        }
        let k = &self.kernel;
        let body = match req.op {
            Op::GetProgram => to_value(&k.program()),
            Op::GetWeights => match k.weights() {
                Some(w) => to_value(&w),
                None => {
                    return (
                        ControlResponse::error(id, ErrorCode::Unavailable, "no weights computed yet"),
                        Followup::None,
                    )
                }
            },
            Op::GetStmSummary => to_value(&k.stm_summary()),
            Op::GetDecisionLog => {
                let since = req.body.get("since").and_then(Value::as_u64).unwrap_or(0);
                let directives: Vec<_> = k
                    .decision_log()
                    .into_iter()
                    .filter(|d| d.directive_id > since)
                    .collect();
                json!({ "directives": directives })
            }
            Op::GetMetrics => to_value(&k.metrics()),
            Op::GetAuditLog => json!({ "records": k.audit_log() }),
            Op::SubscribeTelemetry => {
                return (
                    ControlResponse::ok(id, json!({ "subscribed": true })),
                    Followup::StartTelemetry,
                )
            }
            Op::PutProgram => unreachable!("handled above"),
        };
        (ControlResponse::ok(id, body), Followup::None)
    }

    fn put_program(&self, id: Option<Value>, principal: &Principal, body: Value) -> ControlResponse {
        let submitted = body.get("version").and_then(Value::as_u64).unwrap_or(0);
        let program: ExternalProgram = match serde_json::from_value(body) {
            Ok(p) => p,
            Err(e) => {
                let reason = if *principal == Principal::Operator(Role::Admin) {
                    "invalid_program"
                } else {
                    "unauthorized"
                };
                self.kernel.reject_undecodable_program(principal, submitted, reason);
                let code = if reason == "unauthorized" {
                    ErrorCode::Unauthorized
                } else {
                    ErrorCode::InvalidProgram
                };
                return ControlResponse::error(id, code, e.to_string());
            }
        };
        match self.kernel.put_program(principal, program) {
            Ok(version) => ControlResponse::ok(id, json!({ "version": version })),
            Err(e @ DpsError::Unauthorized { .. }) => ControlResponse::error(id, ErrorCode::Unauthorized, e.to_string()),
            Err(e @ DpsError::Conflict { .. }) => ControlResponse::error(id, ErrorCode::Conflict, e.to_string()),
            Err(e) => ControlResponse::error(id, ErrorCode::InvalidProgram, e.to_string()),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// A listening control endpoint.
pub struct ControlServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ControlServer {
    /// Bind and start accepting connections on a background thread.
    pub fn start(service: ControlService) -> Result<Self, ControlError> {
        let listen = service.config.listen.clone();
        let listener = TcpListener::bind(&listen).map_err(|source| ControlError::Bind {
            addr: listen.clone(),
            source,
        })?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::Builder::new()
            .name("control-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if flag.load(Ordering::SeqCst) {
                        break;
                    }
                    match conn {
                        Ok(stream) => {
                            let svc = service.clone();
                            let _ = thread::Builder::new()
                                .name("control-conn".into())
                                .spawn(move || serve_connection(svc, stream));
                        }
                        Err(e) => tracing::warn!(error = %e, "accept failed"),
                    }
                }
            })?;
        tracing::info!(%addr, "control service listening");
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

fn write_line<T: Serialize>(out: &Mutex<TcpStream>, v: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(v)?;
    line.push(b'\n');
    out.lock().write_all(&line)
}

fn serve_connection(service: ControlService, stream: TcpStream) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_write_timeout(Some(WRITE_TIMEOUT));
    let writer = match stream.try_clone() {
        Ok(w) => Arc::new(Mutex::new(w)),
        Err(e) => {
            tracing::warn!(error = %e, "connection setup failed");
            return;
        }
    };
    let mut subscribed = false;
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let (response, followup) = service.handle_line(&line);
        if write_line(&writer, &response).is_err() {
            break;
        }
        if followup == Followup::StartTelemetry && !subscribed {
            subscribed = true;
            let rx = service.kernel.subscribe_telemetry();
            let out = writer.clone();
            let _ = thread::Builder::new()
                .name("control-telemetry".into())
                .spawn(move || {
                    for frame in rx {
                        if write_line(&out, &frame).is_err() {
                            break;
                        }
                    }
                    let _ = out.lock().shutdown(std::net::Shutdown::Both);
                });
        }
    }
    tracing::debug!(?peer, "control connection closed");
}
