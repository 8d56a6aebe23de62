//! Live sessions: reorder buffering, calibration, classification and
//! adaptation behind one append-only log.
//!
//! Each event is processed to completion on arrival, so the log of arrived
//! events and overrides is enough to rebuild every estimate and directive.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AdaptationDirective, AdaptationEngine, EngineConfig, EngineError, OverrideCmd};
use crate::features::{
    calibrate, featurize, FeatureError, PersonalBaseline, SignalWindow, WindowStream,
    CALIBRATION_SPAN_MS, LIVE_STRIDE_MS, WINDOW_MS,
};
use crate::forest::{predict_proba, ForestError, ForestModel};
use crate::signal::{
    event_from_value, AttentionState, Attribution, BehavioralEvent, EventKind, StateEstimate,
};

pub const LOG_VERSION: u32 = 1;
pub const REORDER_MS: u64 = 2_000;
pub const DEFAULT_RETENTION_MS: u64 = 24 * 60 * 60 * 1000;
pub const SNAPSHOT_DIRECTIVES: usize = 5;
pub const DEFAULT_MODEL_ID: &str = "default";

fn tie_key(event: &BehavioralEvent) -> String {
    serde_json::to_string(event).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("unknown trace {0}")]
    UnknownTrace(String),
    #[error("session {0} has ended")]
    SessionEnded(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("log line {line}: {reason}")]
    Log { line: usize, reason: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

impl ServiceError {
    /// True for the "no such resource" family.
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            ServiceError::UnknownSession(_) | ServiceError::UnknownModel(_) | ServiceError::UnknownTrace(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    /// Classifier estimates drive the engine.
    Auto,
    /// Overrides drive the engine; the classifier runs in shadow.
    Wizard,
    /// Auto processing of a pre-registered trace.
    Replay,
}

impl SessionMode {
    pub fn parse(s: &str) -> Result<Self, ServiceError> {
        match s {
            "auto" => Ok(SessionMode::Auto),
            "wizard" => Ok(SessionMode::Wizard),
            "replay" => Ok(SessionMode::Replay),
            _ => Err(ServiceError::InvalidRequest(format!("unknown mode {s:?}"))),
        }
    }

    fn drives_engine(self) -> bool {
        self != SessionMode::Wizard
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Calibrating,
    Active,
    CalibrationFailed,
    Ended,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Calibrating => "calibrating",
            SessionStatus::Active => "active",
            SessionStatus::CalibrationFailed => "calibration_failed",
            SessionStatus::Ended => "ended",
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogBody {
    Header {
        session_id: String,
        mode: SessionMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model_id: Option<String>,
        created_at: u64,
    },
    Event {
        event: BehavioralEvent,
        /// Arrived behind the watermark and was not processed.
        #[serde(default, skip_serializing_if = "is_false")]
        late: bool,
    },
    Estimate(StateEstimate),
    Directive(AdaptationDirective),
    Override {
        t: u64,
        cmd: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state: Option<AttentionState>,
    },
    Lifecycle {
        t: u64,
        event: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
}

/// One log line. `seq` is dense and starts at 0 with the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: LogBody,
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }

    /// Whether the record belongs on the live message stream (everything
    /// except the header and raw events).
    pub fn is_message(&self) -> bool {
        !matches!(self.body, LogBody::Header { .. } | LogBody::Event { .. })
    }
}

/// Parses an exported log. Every record must carry the supported version
/// and sequence numbers must be dense from 0.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, ServiceError> {
    let mut out: Vec<LogRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| ServiceError::Log { line: i + 1, reason };
        let rec: LogRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.v != LOG_VERSION {
            return Err(bad(format!("unsupported log version {}", rec.v)));
        }
        if rec.seq != out.len() as u64 {
            return Err(bad(format!("expected seq {}, found {}", out.len(), rec.seq)));
        }
        if out.is_empty() != matches!(rec.body, LogBody::Header { .. }) {
            return Err(bad("header must be the first and only header record".into()));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(ServiceError::Log {
            line: 0,
            reason: "log is empty".into(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub dropped_late: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideAck {
    pub v: u32,
    pub seq: u64,
    pub cmd: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<AttentionState>,
    pub t: u64,
    pub directives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSnapshot {
    pub v: u32,
    pub seq: u64,
    pub session_id: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    /// "calibrating" / "calibration_failed" until a state is known, then the
    /// committed state name.
    pub state: String,
    pub last_estimate: Option<StateEstimate>,
    pub attributions: Vec<Attribution>,
    pub directives: Vec<AdaptationDirective>,
    pub paused: bool,
    pub disabled: bool,
    pub dropped_late: u64,
    pub events_accepted: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    pub retention_ms: Option<u64>,
}

impl ServiceConfig {
    pub fn retention_ms(&self) -> u64 {
        self.retention_ms.unwrap_or(DEFAULT_RETENTION_MS)
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    mode: SessionMode,
    model_id: Option<String>,
    model: Arc<ForestModel>,
    created_at: u64,
    engine: AdaptationEngine,
    pending: Vec<BehavioralEvent>,
    max_seen: Option<u64>,
    watermark: u64,
    windows: WindowStream,
    calibration: Vec<SignalWindow>,
    baseline: Option<PersonalBaseline>,
    status: SessionStatus,
    log: Vec<LogRecord>,
    last_estimate: Option<StateEstimate>,
    recent: VecDeque<AdaptationDirective>,
    dropped_late: u64,
    accepted: u64,
}


impl Session {
    pub fn new(
        id: impl Into<String>,
        mode: SessionMode,
        model_id: Option<String>,
        model: Arc<ForestModel>,
        engine: EngineConfig,
        created_at: u64,
    ) -> Result<Self, ServiceError> {
        let mut s = Session {
            id: id.into(),
            mode,
            model_id,
            model,
            created_at,
            engine: AdaptationEngine::new(engine, CALIBRATION_SPAN_MS)?,
            pending: Vec::new(),
            max_seen: None,
            watermark: 0,
            windows: WindowStream::new(LIVE_STRIDE_MS)?,
            calibration: Vec::new(),
            baseline: None,
            status: SessionStatus::Calibrating,
            log: Vec::new(),
            last_estimate: None,
            recent: VecDeque::with_capacity(SNAPSHOT_DIRECTIVES),
            dropped_late: 0,
            accepted: 0,
        };
        s.push(LogBody::Header {
            session_id: s.id.clone(),
            mode,
            model_id: s.model_id.clone(),
            created_at,
        });
        Ok(s)
    }

    /// Rebuilds a session by feeding the arrived events and overrides of an
    /// exported log, in log order, to a fresh session. Derived records in the
    /// input are ignored; the rebuilt log regenerates them.
    pub fn replay_log(
        records: &[LogRecord],
        model: Arc<ForestModel>,
        engine: EngineConfig,
    ) -> Result<Session, ServiceError> {
        let Some(LogRecord {
            body:
                LogBody::Header {
                    session_id,
                    mode,
                    model_id,
                    created_at,
                },
            ..
        }) = records.first()
        else {
            return Err(ServiceError::Log {
                line: 1,
                reason: "missing header".into(),
            });
        };
        let mut s = Session::new(
            session_id.clone(),
            *mode,
            model_id.clone(),
            model,
            engine,
            *created_at,
        )?;
        for rec in &records[1..] {
            let at = |e: ServiceError| ServiceError::Log {
                line: rec.seq as usize + 1,
                reason: e.to_string(),
            };
            match &rec.body {
                LogBody::Event { event, .. } => {
                    s.ingest(vec![event.clone()]).map_err(at)?;
                }
                LogBody::Override { cmd, state, .. } => {
                    let cmd = OverrideCmd::parse(cmd, *state).map_err(|e| at(e.into()))?;
                    s.apply_override(cmd).map_err(at)?;
                }
                LogBody::Lifecycle { event, .. } if event == "ended" && !s.is_ended() => s.end(),
                _ => {}
            }
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn model_id(&self) -> Option<&str> {
        self.model_id.as_deref()
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn is_ended(&self) -> bool {
        self.status == SessionStatus::Ended
    }

    pub fn engine(&self) -> &AdaptationEngine {
        &self.engine
    }

    pub fn baseline(&self) -> Option<&PersonalBaseline> {
        self.baseline.as_ref()
    }

    pub fn watermark(&self) -> u64 {
        self.watermark
    }

    pub fn dropped_late(&self) -> u64 {
        self.dropped_late
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Sequence number of the latest record.
    pub fn last_seq(&self) -> u64 {
        self.log.len() as u64 - 1
    }

    /// Stream messages with `seq > from_seq`.
    pub fn messages_after(&self, from_seq: Option<u64>) -> Vec<LogRecord> {
        let start = from_seq.map_or(0, |s| (s as usize).saturating_add(1));
        self.log
            .get(start..)
            .unwrap_or(&[])
            .iter()
            .filter(|r| r.is_message())
            .cloned()
            .collect()
    }

    pub fn estimates(&self) -> Vec<&StateEstimate> {
        self.log
            .iter()
            .filter_map(|r| match &r.body {
                LogBody::Estimate(e) => Some(e),
                _ => None,
            })
            .collect()
    }

    pub fn directives(&self) -> Vec<&AdaptationDirective> {
        self.log
            .iter()
            .filter_map(|r| match &r.body {
                LogBody::Directive(d) => Some(d),
                _ => None,
            })
            .collect()
    }

    /// Accepts a batch of parsed events. Events are processed one at a time
    /// through the reorder buffer, so batch boundaries never change results.
    pub fn ingest(&mut self, batch: Vec<BehavioralEvent>) -> Result<IngestReport, ServiceError> {
        self.ensure_open()?;
        let mut report = IngestReport::default();
        for (index, event) in batch.into_iter().enumerate() {
            if self.is_ended() {
                report.rejected.push(Rejection {
                    index,
                    reason: "session ended earlier in this batch".into(),
                });
                continue;
            }
            if let Err(e) = event.validate() {
                report.rejected.push(Rejection {
                    index,
                    reason: e.to_string(),
                });
                continue;
            }
            if self.accept(event) {
                report.accepted += 1;
            } else {
                report.dropped_late += 1;
            }
        }
        Ok(report)
    }

    /// Parses a JSONL body and ingests the valid lines. Rejections carry the
    /// 0-based line index.
    pub fn ingest_jsonl(&mut self, body: &str) -> Result<IngestReport, ServiceError> {
        self.ensure_open()?;
        let mut rejected = Vec::new();
        let mut events = Vec::new();
        for (index, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str(line)
                .map_err(|e| e.to_string())
                .and_then(|v| event_from_value(v).map_err(|e| e.to_string()));
            match parsed {
                Ok(e) => events.push(e),
                Err(reason) => rejected.push(Rejection { index, reason }),
            }
        }
        let mut report = self.ingest(events)?;
        rejected.append(&mut report.rejected);
        report.rejected = rejected;
        Ok(report)
    }

    pub fn apply_override(&mut self, cmd: OverrideCmd) -> Result<OverrideAck, ServiceError> {
        let t = self.max_seen.unwrap_or(0);
        let seq = self.push(LogBody::Override {
            t,
            cmd: cmd.name().to_string(),
            state: cmd.state(),
        });
        let directives = self.engine.apply_override(cmd, t);
        let n = directives.len();
        self.emit(directives);
        Ok(OverrideAck {
            v: LOG_VERSION,
            seq,
            cmd: cmd.name().to_string(),
            state: cmd.state(),
            t,
            directives: n,
        })
    }

    /// Flushes the reorder buffer and closes the session. Idempotent.
    pub fn end(&mut self) {
        if self.is_ended() {
            return;
        }
        let last = self.max_seen.unwrap_or(0);
        self.release(last.max(self.watermark), true);
        self.status = SessionStatus::Ended;
        self.push(LogBody::Lifecycle {
            t: last,
            event: "ended".into(),
            detail: None,
        });
    }

    pub fn snapshot(&self) -> ObserverSnapshot {
        let state = match (self.engine.override_state(), self.status) {
            (Some(s), _) => s.to_string(),
            (None, SessionStatus::Calibrating | SessionStatus::CalibrationFailed) => {
                self.status.as_str().to_string()
            }
            (None, _) if self.status == SessionStatus::Ended && self.baseline.is_none() => {
                self.status.as_str().to_string()
            }
            (None, _) => self.engine.committed().to_string(),
        };
        ObserverSnapshot {
            v: LOG_VERSION,
            seq: self.last_seq(),
            session_id: self.id.clone(),
            mode: self.mode,
            status: self.status,
            state,
            attributions: self
                .last_estimate
                .as_ref()
                .map(|e| e.attributions.clone())
                .unwrap_or_default(),
            last_estimate: self.last_estimate.clone(),
            directives: self.recent.iter().cloned().collect(),
            paused: self.engine.paused(),
            disabled: self.engine.disabled(),
            dropped_late: self.dropped_late,
            events_accepted: self.accepted,
        }
    }

    /// The full log as JSONL. Event records are re-validated so nothing
    /// outside the event schema leaves the session.
    pub fn export_log(&self) -> Result<String, ServiceError> {
        let mut out = String::new();
        for rec in &self.log {
            if let LogBody::Event { event, .. } = &rec.body {
                event.validate().map_err(|e| ServiceError::Log {
                    line: rec.seq as usize + 1,
                    reason: e.to_string(),
                })?;
            }
            out.push_str(&rec.to_json());
            out.push('\n');
        }
        Ok(out)
    }

    fn ensure_open(&self) -> Result<(), ServiceError> {
        if self.is_ended() {
            Err(ServiceError::SessionEnded(self.id.clone()))
        } else {
            Ok(())
        }
    }

    fn push(&mut self, body: LogBody) -> u64 {
        let seq = self.log.len() as u64;
        self.log.push(LogRecord {
            v: LOG_VERSION,
            seq,
            body,
        });
        seq
    }

    /// Returns false when the event is behind the watermark. A session-end
    /// event flushes the buffer and closes the session on arrival.
    fn accept(&mut self, event: BehavioralEvent) -> bool {
        let late = event.t_ms < self.watermark;
        let ends = event.kind == EventKind::SessionEnd;
        self.push(LogBody::Event {
            event: event.clone(),
            late,
        });
        if late {
            self.dropped_late += 1;
            return false;
        }
        self.accepted += 1;
        let t = event.t_ms;
        let lo = self.pending.partition_point(|e| e.t_ms < t);
        let hi = self.pending.partition_point(|e| e.t_ms <= t);
        let at = if lo == hi {
            hi
        } else {
            // equal timestamps have no arrival-independent order, so ties
            // are kept in wire-form order
            let key = tie_key(&event);
            lo + self.pending[lo..hi].partition_point(|e| tie_key(e) <= key)
        };
        self.pending.insert(at, event);
        self.max_seen = Some(self.max_seen.map_or(t, |m| m.max(t)));
        if ends {
            self.end();
        } else {
            let mark = self.max_seen.unwrap_or(0).saturating_sub(REORDER_MS);
            if mark > self.watermark {
                self.release(mark, false);
            }
        }
        true
    }

    /// Moves buffered events before `mark` into the window stream and
    /// processes every window that closes by then. Events at `mark` itself
    /// stay buffered: they are not late yet, and a tie arriving later must
    /// still be ordered among them.
    fn release(&mut self, mark: u64, all: bool) {
        self.watermark = mark;
        let n = if all {
            self.pending.len()
        } else {
            self.pending.partition_point(|e| e.t_ms < mark)
        };
        for e in self.pending.drain(..n) {
            self.windows
                .push(e)
                .expect("reorder buffer releases events in time order");
        }
        for w in self.windows.advance(mark) {
            self.on_window(w);
        }
    }

    fn on_window(&mut self, w: SignalWindow) {
        match self.baseline {
            None => {
                if self.status != SessionStatus::Calibrating {
                    return;
                }
                if w.t_start_ms % WINDOW_MS == 0 && w.t_start_ms < CALIBRATION_SPAN_MS {
                    self.calibration.push(w.clone());
                }
                if w.t_end_ms >= CALIBRATION_SPAN_MS {
                    self.finish_calibration();
                }
            }
            Some(ref baseline) => {
                if w.t_end_ms <= CALIBRATION_SPAN_MS {
                    return;
                }
                let fv = featurize(&w, baseline);
                let est = predict_proba(&self.model, &fv)
                    .expect("model validated when registered");
                self.push(LogBody::Estimate(est.clone()));
                let directives = if self.mode.drives_engine() {
                    self.engine.decide(&est, Some(&fv))
                } else {
                    self.engine.note_features(&fv);
                    Vec::new()
                };
                self.last_estimate = Some(est);
                self.emit(directives);
            }
        }
    }

    fn finish_calibration(&mut self) {
        let windows = std::mem::take(&mut self.calibration);
        match calibrate(&windows) {
            Ok(b) => {
                self.baseline = Some(b);
                self.status = SessionStatus::Active;
                self.push(LogBody::Lifecycle {
                    t: CALIBRATION_SPAN_MS,
                    event: "calibrated".into(),
                    detail: None,
                });
            }
            Err(e) => {
                self.status = SessionStatus::CalibrationFailed;
                self.push(LogBody::Lifecycle {
                    t: CALIBRATION_SPAN_MS,
                    event: "calibration_failed".into(),
                    detail: Some(e.to_string()),
                });
            }
        }
    }

    fn emit(&mut self, directives: Vec<AdaptationDirective>) {
        for d in directives {
            if self.recent.len() == SNAPSHOT_DIRECTIVES {
                self.recent.pop_front();
            }
            self.recent.push_back(d.clone());
            self.push(LogBody::Directive(d));
        }
    }
}

pub type SharedSession = Arc<Mutex<Session>>;

/// Registry of models, replayable traces and live sessions.
#[derive(Debug, Default)]
pub struct SessionManager {
    cfg: ServiceConfig,
    models: RwLock<HashMap<String, Arc<ForestModel>>>,
    traces: RwLock<HashMap<String, Arc<Vec<BehavioralEvent>>>>,
    sessions: RwLock<HashMap<String, SharedSession>>,
    next_id: AtomicU64,
}

impl SessionManager {
    pub fn new(cfg: ServiceConfig) -> Self {
        SessionManager {
            cfg,
            ..SessionManager::default()
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn register_model(&self, id: impl Into<String>, model: ForestModel) -> Result<(), ServiceError> {
        model.validate()?;
        self.models
            .write()
            .expect("model registry lock")
            .insert(id.into(), Arc::new(model));
        Ok(())
    }

    pub fn register_trace(&self, id: impl Into<String>, events: Vec<BehavioralEvent>) {
        self.traces
            .write()
            .expect("trace registry lock")
            .insert(id.into(), Arc::new(events));
    }

    pub fn model(&self, id: &str) -> Result<Arc<ForestModel>, ServiceError> {
        self.models
            .read()
            .expect("model registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownModel(id.to_string()))
    }

    /// Creates a session. Replay sessions need `trace_id` and are fully
    /// processed before this returns.
    pub fn create_session(
        &self,
        mode: SessionMode,
        model_id: Option<&str>,
        trace_id: Option<&str>,
        now_ms: u64,
    ) -> Result<String, ServiceError> {
        let model_id = model_id.unwrap_or(DEFAULT_MODEL_ID);
        let model = self.model(model_id)?;
        let trace = match (mode, trace_id) {
            (SessionMode::Replay, Some(t)) => Some(
                self.traces
                    .read()
                    .expect("trace registry lock")
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ServiceError::UnknownTrace(t.to_string()))?,
            ),
            (SessionMode::Replay, None) => {
                return Err(ServiceError::InvalidRequest("replay sessions need a trace_id".into()))
            }
            (_, Some(_)) => {
                return Err(ServiceError::InvalidRequest("trace_id is only valid for replay".into()))
            }
            (_, None) => None,
        };
        let n = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("sess-{n:06}");
        let mut session = Session::new(
            id.clone(),
            mode,
            Some(model_id.to_string()),
            model,
            self.cfg.engine.clone(),
            now_ms,
        )?;
        if let Some(trace) = trace {
            session.ingest(trace.as_ref().clone())?;
            session.end();
        }
        self.sessions
            .write()
            .expect("session registry lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<SharedSession, ServiceError> {
        self.sessions
            .read()
            .expect("session registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .expect("session registry lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    fn with<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let s = self.session(id)?;
        let mut guard = s.lock().expect("session lock");
        f(&mut guard)
    }

    pub fn ingest(&self, id: &str, events: Vec<BehavioralEvent>) -> Result<IngestReport, ServiceError> {
        self.with(id, |s| s.ingest(events))
    }

    pub fn ingest_jsonl(&self, id: &str, body: &str) -> Result<IngestReport, ServiceError> {
        self.with(id, |s| s.ingest_jsonl(body))
    }

    pub fn apply_override(&self, id: &str, cmd: OverrideCmd) -> Result<OverrideAck, ServiceError> {
        self.with(id, |s| s.apply_override(cmd))
    }

    pub fn observer_snapshot(&self, id: &str) -> Result<ObserverSnapshot, ServiceError> {
        self.with(id, |s| Ok(s.snapshot()))
    }

    pub fn messages_after(&self, id: &str, from_seq: Option<u64>) -> Result<Vec<LogRecord>, ServiceError> {
        self.with(id, |s| Ok(s.messages_after(from_seq)))
    }

    pub fn export_log(&self, id: &str) -> Result<String, ServiceError> {
        self.with(id, |s| s.export_log())
    }

    pub fn end_session(&self, id: &str) -> Result<(), ServiceError> {
        self.with(id, |s| {
            s.end();
            Ok(())
        })
    }

    pub fn delete_session(&self, id: &str) -> Result<(), ServiceError> {
        self.sessions
            .write()
            .expect("session registry lock")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Drops sessions created more than the retention period before
    /// `now_ms`. Returns the purged ids in order.
    pub fn purge_expired(&self, now_ms: u64) -> Vec<String> {
        let retention = self.cfg.retention_ms();
        let mut sessions = self.sessions.write().expect("session registry lock");
        let mut expired: Vec<String> = sessions
            .iter()
            .filter(|(_, s)| {
                let created = s.lock().expect("session lock").created_at();
                now_ms.saturating_sub(created) >= retention
            })
            .map(|(id, _)| id.clone())
            .collect();
        expired.sort();
        for id in &expired {
            sessions.remove(id);
        }
        expired
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Action;
    use crate::forest::{train, ForestConfig};
    use crate::sim::{generate_trace, synthetic_dataset, SimProfile};
    use std::sync::OnceLock;

    fn model() -> Arc<ForestModel> {
        static MODEL: OnceLock<Arc<ForestModel>> = OnceLock::new();
        MODEL
            .get_or_init(|| {
                let samples = synthetic_dataset(&SimProfile::default(), 6, 1800, 9).unwrap();
                let data: Vec<_> = samples.into_iter().map(|s| (s.features, s.label)).collect();
                let cfg = ForestConfig {
                    n_trees: 15,
                    ..ForestConfig::default()
                };
                Arc::new(train(&data, &cfg, 3).unwrap())
            })
            .clone()
    }

    fn session(mode: SessionMode) -> Session {
        Session::new("s1", mode, Some("m".into()), model(), EngineConfig::default(), 0).unwrap()
    }

    fn trace(seconds: u64, seed: u64) -> Vec<BehavioralEvent> {
        generate_trace(&SimProfile::default(), seconds, seed, "s1").unwrap().events
    }

    fn click(t: u64) -> BehavioralEvent {
        BehavioralEvent::bare("s1", t, EventKind::Click)
    }

    #[test]
    fn fresh_session_is_calibrating_with_header_only_log() {
        let s = session(SessionMode::Auto);
        assert_eq!(s.snapshot().state, "calibrating");
        assert!(s.snapshot().last_estimate.is_none());
        let log = s.export_log().unwrap();
        assert_eq!(log.lines().count(), 1);
        assert!(log.starts_with(r#"{"v":1,"seq":0,"type":"header","session_id":"s1","mode":"auto""#));
    }

    #[test]
    fn reorder_buffer() {
        let mut s = session(SessionMode::Auto);
        let r = s.ingest((0..10).map(|i| click(i * 1000)).collect()).unwrap();
        assert_eq!((r.accepted, r.dropped_late), (10, 0));
        // watermark is now 9000 - 2000; a slightly out-of-order event still fits
        let r = s.ingest(vec![click(7500), click(20_000)]).unwrap();
        assert_eq!((r.accepted, r.dropped_late), (2, 0));
        assert_eq!(s.watermark(), 18_000);
        let r = s.ingest(vec![click(13_000)]).unwrap();
        assert_eq!((r.accepted, r.dropped_late), (0, 1));
        assert_eq!(s.snapshot().dropped_late, 1);
    }

    #[test]
    fn equal_timestamps_are_ordered_independently_of_arrival() {
        let at = |x| BehavioralEvent {
            session_id: "s1".into(),
            t_ms: 5000,
            kind: EventKind::MouseMove,
            payload: crate::signal::Payload::Cursor { x, y: 0 },
        };
        let buffered = |first, second| {
            let mut s = session(SessionMode::Auto);
            s.ingest(vec![click(4000), at(first), click(7000)]).unwrap();
            // the watermark is exactly at the tie, which stays buffered
            assert_eq!(s.watermark(), 5000);
            s.ingest(vec![at(second)]).unwrap();
            s.pending.clone()
        };
        let one = buffered(20, 10);
        assert_eq!(one, buffered(10, 20));
        assert_eq!(one.iter().filter(|e| e.t_ms == 5000).count(), 2);
    }

    #[test]
    fn malformed_lines_are_rejected_by_index() {
        let mut s = session(SessionMode::Auto);
        let body = "{\"sid\":\"s1\",\"t\":0,\"k\":\"session-start\"}\n\
                    {\"sid\":\"s1\",\"t\":10,\"k\":\"click\",\"dy\":5}\n\
                    not json\n\
                    {\"sid\":\"s1\",\"t\":20,\"k\":\"click\"}\n";
        let r = s.ingest_jsonl(body).unwrap();
        assert_eq!(r.accepted, 2);
        let idx: Vec<usize> = r.rejected.iter().map(|x| x.index).collect();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn first_estimate_within_one_stride_of_calibration() {
        let mut s = session(SessionMode::Auto);
        let mut seen_at = None;
        for e in trace(600, 5) {
            s.ingest(vec![e]).unwrap();
            if seen_at.is_none() && !s.estimates().is_empty() {
                seen_at = Some(s.watermark());
            }
        }
        assert_eq!(s.status(), SessionStatus::Ended);
        let first = s.estimates()[0].t_ms;
        assert_eq!(first, CALIBRATION_SPAN_MS + LIVE_STRIDE_MS);
        let mark = seen_at.unwrap();
        assert!(mark >= first && mark - first < LIVE_STRIDE_MS);
        let calibrated = s
            .log()
            .iter()
            .position(|r| matches!(&r.body, LogBody::Lifecycle { event, .. } if event == "calibrated"))
            .unwrap();
        let first_est = s.log().iter().position(|r| matches!(r.body, LogBody::Estimate(_))).unwrap();
        assert!(calibrated < first_est);
        // the estimates cover every live stride up to the end
        let ts: Vec<u64> = s.estimates().iter().map(|e| e.t_ms).collect();
        assert!(ts.windows(2).all(|w| w[1] == w[0] + LIVE_STRIDE_MS));
        assert_eq!(*ts.last().unwrap(), 600_000);
    }

    #[test]
    fn directives_follow_their_estimate() {
        let mut s = session(SessionMode::Auto);
        s.ingest(trace(3600, 11)).unwrap();
        assert!(!s.directives().is_empty());
        let log = s.log();
        for (i, r) in log.iter().enumerate() {
            if let LogBody::Directive(d) = &r.body {
                assert!(!d.rationale.is_empty());
                let mut j = i - 1;
                while matches!(log[j].body, LogBody::Directive(_)) {
                    j -= 1;
                }
                match &log[j].body {
                    LogBody::Estimate(e) => assert_eq!(e.t_ms, d.t_ms),
                    other => panic!("directive preceded by {other:?}"),
                }
            }
        }
    }

    #[test]
    fn pause_keeps_estimating_without_directives() {
        let mut s = session(SessionMode::Auto);
        s.apply_override(OverrideCmd::Pause).unwrap();
        let r = s.ingest(trace(3600, 11)).unwrap();
        assert!(r.accepted > 0);
        assert!(s.estimates().len() > 600);
        assert!(s.directives().is_empty());
        assert!(s.snapshot().paused);
    }

    #[test]
    fn wizard_set_state_emits_wizard_directives() {
        let mut s = session(SessionMode::Wizard);
        let events: Vec<_> = trace(900, 2).into_iter().filter(|e| e.kind != EventKind::SessionEnd).collect();
        s.ingest(events).unwrap();
        assert!(!s.estimates().is_empty());
        assert!(s.directives().is_empty(), "wizard sessions take no classifier directives");
        let ack = s.apply_override(OverrideCmd::SetState(AttentionState::Drifting)).unwrap();
        assert_eq!(ack.directives, 5);
        let snap = s.snapshot();
        assert_eq!(snap.state, "Drifting");
        assert!(snap.directives.iter().all(|d| d.source == crate::signal::EstimateSource::Wizard));
        assert!(snap.directives.iter().any(|d| d.action == Action::Micro));
    }

    #[test]
    fn enable_without_disable_is_a_no_op() {
        let mut s = session(SessionMode::Auto);
        let before = s.snapshot();
        let ack = s.apply_override(OverrideCmd::Enable).unwrap();
        assert_eq!(ack.directives, 0);
        let after = s.snapshot();
        assert_eq!(before.state, after.state);
        assert_eq!(before.disabled, after.disabled);
    }

    #[test]
    fn wizard_overrides_are_logged() {
        let mut s = session(SessionMode::Wizard);
        for i in 0..10u64 {
            s.ingest(vec![click(i * 1000)]).unwrap();
            s.apply_override(OverrideCmd::SetState(AttentionState::ALL[i as usize % 4])).unwrap();
        }
        let log = s.export_log().unwrap();
        let records = parse_log(&log).unwrap();
        let overrides: Vec<u64> = records
            .iter()
            .filter_map(|r| match r.body {
                LogBody::Override { t, .. } => Some(t),
                _ => None,
            })
            .collect();
        assert_eq!(overrides, (0..10).map(|i| i * 1000).collect::<Vec<_>>());
    }

    #[test]
    fn replay_reproduces_log() {
        let mut s = session(SessionMode::Auto);
        let events = trace(1800, 4);
        for (i, chunk) in events.chunks(37).enumerate() {
            s.ingest(chunk.to_vec()).unwrap();
            if i == 40 {
                s.apply_override(OverrideCmd::Pause).unwrap();
            }
            if i == 60 {
                s.apply_override(OverrideCmd::Resume).unwrap();
            }
        }
        let text = s.export_log().unwrap();
        let replayed = Session::replay_log(&parse_log(&text).unwrap(), model(), EngineConfig::default()).unwrap();
        assert_eq!(replayed.export_log().unwrap(), text);
    }

    #[test]
    fn resume_from_seq() {
        let mut s = session(SessionMode::Auto);
        s.ingest(trace(900, 4)).unwrap();
        let all = s.messages_after(None);
        assert!(all.iter().all(|r| r.is_message()));
        let n = all[3].seq;
        let rest = s.messages_after(Some(n));
        assert_eq!(rest.as_slice(), &all[4..]);
        assert!(rest.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn parse_log_checks_sequence() {
        let s = session(SessionMode::Auto);
        let mut text = s.export_log().unwrap();
        text.push_str(r#"{"v":1,"seq":5,"type":"lifecycle","t":0,"event":"ended"}"#);
        assert!(matches!(parse_log(&text), Err(ServiceError::Log { line: 2, .. })));
        assert!(parse_log("").is_err());
    }

    #[test]
    fn ended_session_rejects_events() {
        let mut s = session(SessionMode::Auto);
        s.end();
        assert_eq!(
            s.ingest(vec![click(0)]),
            Err(ServiceError::SessionEnded("s1".into()))
        );
    }

    #[test]
    fn manager_lifecycle() {
        let m = SessionManager::new(ServiceConfig::default());
        assert!(m
            .create_session(SessionMode::Auto, Some("nope"), None, 0)
            .unwrap_err()
            .is_not_found());
        m.register_model(DEFAULT_MODEL_ID, (*model()).clone()).unwrap();
        let a = m.create_session(SessionMode::Auto, None, None, 0).unwrap();
        assert_eq!(m.observer_snapshot(&a).unwrap().state, "calibrating");

        m.register_trace("t1", trace(900, 8));
        let r = m.create_session(SessionMode::Replay, None, Some("t1"), 1000).unwrap();
        let snap = m.observer_snapshot(&r).unwrap();
        assert_eq!(snap.status, SessionStatus::Ended);
        assert!(snap.last_estimate.is_some());
        assert!(m.create_session(SessionMode::Replay, None, Some("t2"), 0).unwrap_err().is_not_found());

        let purged = m.purge_expired(DEFAULT_RETENTION_MS + 500);
        assert_eq!(purged, vec![a.clone()]);
        assert!(m.observer_snapshot(&a).unwrap_err().is_not_found());
        m.delete_session(&r).unwrap();
        assert!(m.session_ids().is_empty());
    }
}
