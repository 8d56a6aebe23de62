//! Event model and attention-state vocabulary shared by every other module.
//!
//! Traces are JSONL, one event per line, with short keys:
//!
//! ```text
//! {"sid":"s1","t":500,"k":"scroll","dy":-120}
//! ```
//!
//! `t` is integer milliseconds since session start. Payload keys (`dy`, `x`,
//! `y`, `lat`, `ref`) are only legal on the kinds that need them, and no other
//! keys are accepted. There is no free-text field of any kind.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: {kind}")]
    AtLine { line: usize, kind: ParseErrorKind },
    #[error(transparent)]
    Record(#[from] ParseErrorKind),
}

impl ParseError {
    pub fn kind(&self) -> &ParseErrorKind {
        match self {
            ParseError::AtLine { kind, .. } => kind,
            ParseError::Record(kind) => kind,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::AtLine { line, .. } => Some(*line),
            ParseError::Record(_) => None,
        }
    }

    fn at(self, line: usize) -> Self {
        ParseError::AtLine {
            line,
            kind: self.kind().clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown event kind `{0}`")]
    UnknownKind(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("field `{field}` not allowed for kind `{kind}`")]
    PayloadNotAllowed { field: &'static str, kind: EventKind },
    #[error("field `{field}` required for kind `{kind}`")]
    PayloadRequired { field: &'static str, kind: EventKind },
    #[error("field `{field}`: {reason}")]
    InvalidValue { field: &'static str, reason: String },
    #[error("negative timestamp {0}")]
    NegativeTimestamp(i64),
}

/// Closed set of interaction kinds a client may report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Click,
    Scroll,
    MouseMove,
    KeyPress,
    IdleStart,
    IdleEnd,
    TabHidden,
    TabVisible,
    FocusGain,
    FocusLoss,
    AnswerSubmit,
    AnswerRevise,
    NavBack,
    ChunkAdvance,
    SessionStart,
    SessionEnd,
}

impl EventKind {
    pub const ALL: [EventKind; 16] = [
        EventKind::Click,
        EventKind::Scroll,
        EventKind::MouseMove,
        EventKind::KeyPress,
        EventKind::IdleStart,
        EventKind::IdleEnd,
        EventKind::TabHidden,
        EventKind::TabVisible,
        EventKind::FocusGain,
        EventKind::FocusLoss,
        EventKind::AnswerSubmit,
        EventKind::AnswerRevise,
        EventKind::NavBack,
        EventKind::ChunkAdvance,
        EventKind::SessionStart,
        EventKind::SessionEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Click => "click",
            EventKind::Scroll => "scroll",
            EventKind::MouseMove => "mouse-move",
            EventKind::KeyPress => "key-press",
            EventKind::IdleStart => "idle-start",
            EventKind::IdleEnd => "idle-end",
            EventKind::TabHidden => "tab-hidden",
            EventKind::TabVisible => "tab-visible",
            EventKind::FocusGain => "focus-gain",
            EventKind::FocusLoss => "focus-loss",
            EventKind::AnswerSubmit => "answer-submit",
            EventKind::AnswerRevise => "answer-revise",
            EventKind::NavBack => "nav-back",
            EventKind::ChunkAdvance => "chunk-advance",
            EventKind::SessionStart => "session-start",
            EventKind::SessionEnd => "session-end",
        }
    }

    fn payload_shape(self) -> PayloadShape {
        match self {
            EventKind::Scroll => PayloadShape::Scroll,
            EventKind::MouseMove => PayloadShape::Cursor,
            EventKind::AnswerSubmit => PayloadShape::Latency,
            EventKind::NavBack | EventKind::ChunkAdvance => PayloadShape::ContentRef,
            _ => PayloadShape::None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = ParseErrorKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ParseErrorKind::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PayloadShape {
    None,
    Scroll,
    Cursor,
    Latency,
    ContentRef,
}

/// Kind-specific payload. Each variant is legal for exactly the kinds listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    None,
    /// `scroll`: signed pixel delta, positive is down.
    Scroll { dy: i64 },
    /// `mouse-move`: viewport-relative cursor position.
    Cursor { x: i64, y: i64 },
    /// `answer-submit`: milliseconds from question render to submission.
    Latency { ms: u64 },
    /// `nav-back`, `chunk-advance`: opaque section/chunk id.
    ContentRef(String),
}

impl Payload {
    fn shape(&self) -> PayloadShape {
        match self {
            Payload::None => PayloadShape::None,
            Payload::Scroll { .. } => PayloadShape::Scroll,
            Payload::Cursor { .. } => PayloadShape::Cursor,
            Payload::Latency { .. } => PayloadShape::Latency,
            Payload::ContentRef(_) => PayloadShape::ContentRef,
        }
    }
}

/// One privacy-preserving interaction record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehavioralEvent {
    pub session_id: String,
    pub t_ms: u64,
    pub kind: EventKind,
    pub payload: Payload,
}

impl BehavioralEvent {
    /// Builds an event, checking that the payload matches the kind.
    pub fn new(
        session_id: impl Into<String>,
        t_ms: u64,
        kind: EventKind,
        payload: Payload,
    ) -> Result<Self, ParseErrorKind> {
        let event = BehavioralEvent {
            session_id: session_id.into(),
            t_ms,
            kind,
            payload,
        };
        event.validate()?;
        Ok(event)
    }

    /// Shorthand for kinds without payload.
    pub fn bare(session_id: impl Into<String>, t_ms: u64, kind: EventKind) -> Self {
        debug_assert_eq!(kind.payload_shape(), PayloadShape::None);
        BehavioralEvent {
            session_id: session_id.into(),
            t_ms,
            kind,
            payload: Payload::None,
        }
    }

    pub fn validate(&self) -> Result<(), ParseErrorKind> {
        let want = self.kind.payload_shape();
        let have = self.payload.shape();
        if want == have {
            if let Payload::ContentRef(r) = &self.payload {
                if r.is_empty() {
                    return Err(ParseErrorKind::InvalidValue {
                        field: "ref",
                        reason: "empty content reference".into(),
                    });
                }
            }
            if self.session_id.is_empty() {
                return Err(ParseErrorKind::InvalidValue {
                    field: "sid",
                    reason: "empty session id".into(),
                });
            }
            return Ok(());
        }
        if have != PayloadShape::None {
            return Err(ParseErrorKind::PayloadNotAllowed {
                field: shape_field(have),
                kind: self.kind,
            });
        }
        Err(ParseErrorKind::PayloadRequired {
            field: shape_field(want),
            kind: self.kind,
        })
    }

    pub fn scroll_delta(&self) -> Option<i64> {
        match self.payload {
            Payload::Scroll { dy } => Some(dy),
            _ => None,
        }
    }

    pub fn cursor(&self) -> Option<(i64, i64)> {
        match self.payload {
            Payload::Cursor { x, y } => Some((x, y)),
            _ => None,
        }
    }

    pub fn answer_latency_ms(&self) -> Option<u64> {
        match self.payload {
            Payload::Latency { ms } => Some(ms),
            _ => None,
        }
    }

    pub fn content_ref(&self) -> Option<&str> {
        match &self.payload {
            Payload::ContentRef(r) => Some(r),
            _ => None,
        }
    }

    /// Canonical single-line JSON with the fixed key order
    /// `sid, t, k, dy, x, y, lat, ref`.
    pub fn to_canonical(&self) -> String {
        serde_json::to_string(&self.wire()).expect("wire record serializes")
    }

    fn wire(&self) -> WireEvent<'_> {
        let mut wire = WireEvent {
            sid: &self.session_id,
            t: self.t_ms,
            k: self.kind.as_str(),
            dy: None,
            x: None,
            y: None,
            lat: None,
            reference: None,
        };
        match &self.payload {
            Payload::None => {}
            Payload::Scroll { dy } => wire.dy = Some(*dy),
            Payload::Cursor { x, y } => {
                wire.x = Some(*x);
                wire.y = Some(*y);
            }
            Payload::Latency { ms } => wire.lat = Some(*ms),
            Payload::ContentRef(r) => wire.reference = Some(r),
        }
        wire
    }
}

#[derive(Serialize)]
struct WireEvent<'a> {
    sid: &'a str,
    t: u64,
    k: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    dy: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lat: Option<u64>,
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none")]
    reference: Option<&'a str>,
}

fn shape_field(shape: PayloadShape) -> &'static str {
    match shape {
        PayloadShape::None => "",
        PayloadShape::Scroll => "dy",
        PayloadShape::Cursor => "x",
        PayloadShape::Latency => "lat",
        PayloadShape::ContentRef => "ref",
    }
}

impl Serialize for BehavioralEvent {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.wire().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BehavioralEvent {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        event_from_value(value).map_err(serde::de::Error::custom)
    }
}

/// Parses and validates one JSONL record.
pub fn parse_event(line: &str) -> Result<BehavioralEvent, ParseError> {
    let value: Value = serde_json::from_str(line.trim_end_matches('\r'))
        .map_err(|e| ParseErrorKind::Malformed(e.to_string()))?;
    Ok(event_from_value(value)?)
}

/// Parses a whole JSONL trace. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn parse_trace(text: &str) -> Result<Vec<BehavioralEvent>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_event(l).map_err(|e| e.at(i + 1)))
        .collect()
}

/// Serializes events as canonical JSONL, one per line with trailing LF.
pub fn write_trace(events: &[BehavioralEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_canonical());
        out.push('\n');
    }
    out
}

pub fn event_from_value(value: Value) -> Result<BehavioralEvent, ParseErrorKind> {
    let Value::Object(mut map) = value else {
        return Err(ParseErrorKind::Malformed("record is not a JSON object".into()));
    };
    for key in map.keys() {
        if !matches!(
            key.as_str(),
            "sid" | "t" | "k" | "dy" | "x" | "y" | "lat" | "ref"
        ) {
            return Err(ParseErrorKind::UnknownKey(key.clone()));
        }
    }

    let sid = match map.remove("sid") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(invalid("sid", "expected string")),
        None => return Err(ParseErrorKind::MissingKey("sid")),
    };
    let t_ms = match map.remove("t") {
        Some(Value::Number(n)) => {
            if let Some(u) = n.as_u64() {
                u
            } else if let Some(i) = n.as_i64() {
                return Err(ParseErrorKind::NegativeTimestamp(i));
            } else {
                return Err(invalid("t", "expected integer milliseconds"));
            }
        }
        Some(_) => return Err(invalid("t", "expected integer milliseconds")),
        None => return Err(ParseErrorKind::MissingKey("t")),
    };
    let kind: EventKind = match map.remove("k") {
        Some(Value::String(s)) => s.parse()?,
        Some(_) => return Err(invalid("k", "expected string")),
        None => return Err(ParseErrorKind::MissingKey("k")),
    };

    let dy = map.remove("dy");
    let x = map.remove("x");
    let y = map.remove("y");
    let lat = map.remove("lat");
    let reference = map.remove("ref");

    let not_allowed = |field: &'static str| ParseErrorKind::PayloadNotAllowed { field, kind };
    let required = |field: &'static str| ParseErrorKind::PayloadRequired { field, kind };

    let shape = kind.payload_shape();
    for (field, present, owner) in [
        ("dy", dy.is_some(), PayloadShape::Scroll),
        ("x", x.is_some(), PayloadShape::Cursor),
        ("y", y.is_some(), PayloadShape::Cursor),
        ("lat", lat.is_some(), PayloadShape::Latency),
        ("ref", reference.is_some(), PayloadShape::ContentRef),
    ] {
        if present && shape != owner {
            return Err(not_allowed(field));
        }
    }

    let payload = match shape {
        PayloadShape::None => Payload::None,
        PayloadShape::Scroll => {
            let dy = dy.ok_or_else(|| required("dy"))?;
            Payload::Scroll {
                dy: dy.as_i64().ok_or_else(|| invalid("dy", "expected integer"))?,
            }
        }
        PayloadShape::Cursor => {
            let x = x.ok_or_else(|| required("x"))?;
            let y = y.ok_or_else(|| required("y"))?;
            Payload::Cursor {
                x: coordinate("x", &x)?,
                y: coordinate("y", &y)?,
            }
        }
        PayloadShape::Latency => {
            let lat = lat.ok_or_else(|| required("lat"))?;
            Payload::Latency {
                ms: lat
                    .as_u64()
                    .ok_or_else(|| invalid("lat", "expected non-negative integer"))?,
            }
        }
        PayloadShape::ContentRef => match reference.ok_or_else(|| required("ref"))? {
            Value::String(s) => Payload::ContentRef(s),
            _ => return Err(invalid("ref", "expected string")),
        },
    };

    let event = BehavioralEvent {
        session_id: sid,
        t_ms,
        kind,
        payload,
    };
    event.validate()?;
    Ok(event)
}

fn invalid(field: &'static str, reason: &str) -> ParseErrorKind {
    ParseErrorKind::InvalidValue {
        field,
        reason: reason.to_string(),
    }
}

// Fractional coordinates truncate toward zero.
fn coordinate(field: &'static str, v: &Value) -> Result<i64, ParseErrorKind> {
    if let Some(i) = v.as_i64() {
        return Ok(i);
    }
    match v.as_f64() {
        Some(f) if f.is_finite() && f.abs() < 9.0e15 => Ok(f.trunc() as i64),
        _ => Err(invalid(field, "expected number")),
    }
}

/// The four engagement-attention states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionState {
    Focused,
    Drifting,
    Hyperfocused,
    Fatigued,
}

impl AttentionState {
    /// Canonical index order used for probability vectors and confusion
    /// matrices.
    pub const ALL: [AttentionState; 4] = [
        AttentionState::Focused,
        AttentionState::Drifting,
        AttentionState::Hyperfocused,
        AttentionState::Fatigued,
    ];

    pub fn index(self) -> usize {
        match self {
            AttentionState::Focused => 0,
            AttentionState::Drifting => 1,
            AttentionState::Hyperfocused => 2,
            AttentionState::Fatigued => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Tie-break rank: lower wins. Hyperfocused, Fatigued, Drifting, Focused.
    pub fn priority(self) -> u8 {
        match self {
            AttentionState::Hyperfocused => 0,
            AttentionState::Fatigued => 1,
            AttentionState::Drifting => 2,
            AttentionState::Focused => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionState::Focused => "Focused",
            AttentionState::Drifting => "Drifting",
            AttentionState::Hyperfocused => "Hyperfocused",
            AttentionState::Fatigued => "Fatigued",
        }
    }
}

impl fmt::Display for AttentionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttentionState::ALL
            .iter()
            .copied()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown attention state `{s}`"))
    }
}

/// Index of the maximum entry, ties resolved by state priority.
pub fn argmax_state(probs: &[f64; 4]) -> AttentionState {
    let mut best = AttentionState::Focused;
    let mut best_p = f64::NEG_INFINITY;
    for state in AttentionState::ALL {
        let p = probs[state.index()];
        if p > best_p || (p == best_p && state.priority() < best.priority()) {
            best = state;
            best_p = p;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateSource {
    Classifier,
    Wizard,
    Rule,
}

impl EstimateSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateSource::Classifier => "classifier",
            EstimateSource::Wizard => "wizard",
            EstimateSource::Rule => "rule",
        }
    }
}

/// A named signed deviation contributing to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature: String,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    #[serde(rename = "t")]
    pub t_ms: u64,
    pub state: AttentionState,
    pub probs: [f64; 4],
    pub attributions: Vec<Attribution>,
    pub source: EstimateSource,
}

impl StateEstimate {
    /// A point-mass estimate, used for rule and wizard sources.
    pub fn certain(t_ms: u64, state: AttentionState, source: EstimateSource) -> Self {
        let mut probs = [0.0; 4];
        probs[state.index()] = 1.0;
        StateEstimate {
            t_ms,
            state,
            probs,
            attributions: Vec::new(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_record() {
        let e = parse_event(r#"{"sid":"s1","t":0,"k":"session-start"}"#).unwrap();
        assert_eq!(e.kind, EventKind::SessionStart);
        assert_eq!(e.t_ms, 0);
        assert_eq!(e.payload, Payload::None);
    }

    #[test]
    fn scroll_record() {
        let e = parse_event(r#"{"sid":"s1","t":500,"k":"scroll","dy":-120}"#).unwrap();
        assert_eq!(e.scroll_delta(), Some(-120));
        assert_eq!(e.t_ms, 500);
    }

    #[test]
    fn payload_on_wrong_kind_rejected() {
        let err = parse_event(r#"{"sid":"s1","t":10,"k":"click","dy":5}"#).unwrap_err();
        assert_eq!(
            err.kind(),
            &ParseErrorKind::PayloadNotAllowed {
                field: "dy",
                kind: EventKind::Click
            }
        );
    }

    #[test]
    fn missing_payload_rejected() {
        let err = parse_event(r#"{"sid":"s1","t":10,"k":"mouse-move","x":3}"#).unwrap_err();
        assert!(matches!(
            err.kind(),
            ParseErrorKind::PayloadRequired { field: "y", .. }
        ));
        let err = parse_event(r#"{"sid":"s1","t":10,"k":"nav-back"}"#).unwrap_err();
        assert!(matches!(
            err.kind(),
            ParseErrorKind::PayloadRequired { field: "ref", .. }
        ));
    }

    #[test]
    fn unknown_kind_and_negative_time() {
        let err = parse_event(r#"{"sid":"s1","t":10,"k":"hover"}"#).unwrap_err();
        assert_eq!(err.kind(), &ParseErrorKind::UnknownKind("hover".into()));
        let err = parse_event(r#"{"sid":"s1","t":-5,"k":"click"}"#).unwrap_err();
        assert_eq!(err.kind(), &ParseErrorKind::NegativeTimestamp(-5));
        let err = parse_event(r#"{"sid":"s1","t":1.5,"k":"click"}"#).unwrap_err();
        assert!(matches!(err.kind(), ParseErrorKind::InvalidValue { field: "t", .. }));
    }

    #[test]
    fn extra_keys_rejected() {
        let err = parse_event(r#"{"sid":"s1","t":1,"k":"key-press","text":"hello"}"#).unwrap_err();
        assert_eq!(err.kind(), &ParseErrorKind::UnknownKey("text".into()));
    }

    #[test]
    fn fractional_cursor_truncates_toward_zero() {
        let e = parse_event(r#"{"sid":"s","t":1,"k":"mouse-move","x":10.9,"y":-3.7}"#).unwrap();
        assert_eq!(e.cursor(), Some((10, -3)));
    }

    #[test]
    fn trace_errors_carry_line_numbers() {
        let text = "{\"sid\":\"a\",\"t\":0,\"k\":\"click\"}\n\n{not json}\n";
        let err = parse_trace(text).unwrap_err();
        assert_eq!(err.line(), Some(3));
    }

    #[test]
    fn canonical_key_order() {
        let e = parse_event(r#"{"lat":4200,"k":"answer-submit","t":9,"sid":"z"}"#).unwrap();
        assert_eq!(e.to_canonical(), r#"{"sid":"z","t":9,"k":"answer-submit","lat":4200}"#);
        let e = parse_event(r#"{"y":2,"x":1,"k":"mouse-move","t":9,"sid":"z"}"#).unwrap();
        assert_eq!(e.to_canonical(), r#"{"sid":"z","t":9,"k":"mouse-move","x":1,"y":2}"#);
    }

    #[test]
    fn argmax_tie_uses_priority() {
        assert_eq!(argmax_state(&[0.25; 4]), AttentionState::Hyperfocused);
        assert_eq!(argmax_state(&[0.4, 0.4, 0.1, 0.1]), AttentionState::Drifting);
        assert_eq!(argmax_state(&[0.4, 0.1, 0.1, 0.4]), AttentionState::Fatigued);
        assert_eq!(argmax_state(&[0.7, 0.1, 0.1, 0.1]), AttentionState::Focused);
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        fn arb_event() -> impl Strategy<Value = BehavioralEvent> {
            let kind = proptest::sample::select(EventKind::ALL.to_vec());
            (kind, "[a-z0-9]{1,8}", 0u64..10_000_000, any::<i32>(), any::<i32>(), 0u64..100_000, "[A-Za-z0-9_.-]{1,12}")
                .prop_map(|(kind, sid, t, a, b, lat, r)| {
                    let payload = match kind.payload_shape() {
                        PayloadShape::None => Payload::None,
                        PayloadShape::Scroll => Payload::Scroll { dy: a as i64 },
                        PayloadShape::Cursor => Payload::Cursor { x: a as i64, y: b as i64 },
                        PayloadShape::Latency => Payload::Latency { ms: lat },
                        PayloadShape::ContentRef => Payload::ContentRef(r),
                    };
                    BehavioralEvent::new(sid, t, kind, payload).unwrap()
                })
        }

        proptest! {
            #[test]
            fn canonical_round_trip(e in arb_event()) {
                let line = e.to_canonical();
                let back = parse_event(&line).unwrap();
                prop_assert_eq!(&back, &e);
                prop_assert_eq!(back.to_canonical(), line);
            }
        }
    }
}
