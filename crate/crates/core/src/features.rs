//! Window aggregation, personal calibration and robust-z feature vectors.
//!
//! Raw signals are aggregated over 30-second windows. The first five minutes
//! of a session (ten non-overlapping windows) establish a per-user baseline of
//! medians and MADs; every later window is expressed as robust-z deviations
//! from that baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{BehavioralEvent, EventKind};

pub const WINDOW_MS: u64 = 30_000;
pub const LIVE_STRIDE_MS: u64 = 5_000;
pub const TRAINING_STRIDE_MS: u64 = 30_000;
pub const CALIBRATION_SPAN_MS: u64 = 300_000;
pub const CALIBRATION_WINDOWS: usize = 10;
pub const MIN_CALIBRATION_WINDOWS: usize = 8;
pub const FEATURE_COUNT: usize = 10;

/// MAD to standard-deviation consistency constant for normal data.
pub const MAD_SCALE: f64 = 1.4826;
const RELATIVE_FLOOR: f64 = 0.05;
const ABSOLUTE_FLOOR: f64 = 1e-6;

const DIRECTION_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("events not sorted by time at index {index}")]
    Unsorted { index: usize },
    #[error("calibration needs {required} windows with events, got {valid}")]
    CalibrationInsufficient { valid: usize, required: usize },
    #[error("stride must be in 1..={WINDOW_MS} ms, got {0}")]
    InvalidStride(u64),
}

/// The ten per-window signals, in canonical feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    ClickRate,
    ScrollVelocity,
    ScrollReversal,
    MouseEntropy,
    IdleFraction,
    AnswerLatency,
    RevisionRate,
    TabHidden,
    FocusChange,
    Backtrack,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::ClickRate,
        Feature::ScrollVelocity,
        Feature::ScrollReversal,
        Feature::MouseEntropy,
        Feature::IdleFraction,
        Feature::AnswerLatency,
        Feature::RevisionRate,
        Feature::TabHidden,
        Feature::FocusChange,
        Feature::Backtrack,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Name of the deviation feature, e.g. `click_rate_dev`.
    pub fn dev_name(self) -> &'static str {
        FEATURE_NAMES[self.index()]
    }
}

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "click_rate_dev",
    "scroll_velocity_dev",
    "scroll_reversal_dev",
    "mouse_entropy_dev",
    "idle_fraction_dev",
    "answer_latency_dev",
    "revision_rate_dev",
    "tab_hidden_dev",
    "focus_change_dev",
    "backtrack_dev",
];

/// Raw aggregates over one 30-second window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalWindow {
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    /// Number of events whose timestamp falls inside the window.
    pub event_count: u32,
    /// Clicks per minute.
    pub click_rate: f64,
    /// Total absolute scroll distance per second.
    pub scroll_velocity_mean: f64,
    pub scroll_reversal_count: u32,
    /// Bits, in `[0, 3]`.
    pub mouse_entropy: f64,
    pub idle_fraction: f64,
    /// Mean answer latency; `None` when no answer was submitted.
    pub answer_latency_ms: Option<f64>,
    pub revision_count: u32,
    pub tab_hidden_fraction: f64,
    pub focus_change_count: u32,
    pub backtrack_count: u32,
}

impl SignalWindow {
    pub fn raw(&self, feature: Feature) -> Option<f64> {
        Some(match feature {
            Feature::ClickRate => self.click_rate,
            Feature::ScrollVelocity => self.scroll_velocity_mean,
            Feature::ScrollReversal => self.scroll_reversal_count as f64,
            Feature::MouseEntropy => self.mouse_entropy,
            Feature::IdleFraction => self.idle_fraction,
            Feature::AnswerLatency => return self.answer_latency_ms,
            Feature::RevisionRate => self.revision_count as f64,
            Feature::TabHidden => self.tab_hidden_fraction,
            Feature::FocusChange => self.focus_change_count as f64,
            Feature::Backtrack => self.backtrack_count as f64,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.event_count == 0
    }
}

/// Per-feature robust location and scale from the calibration period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalBaseline {
    pub median: [f64; FEATURE_COUNT],
    pub mad: [f64; FEATURE_COUNT],
    /// Floored robust-z denominators, `max(1.4826·MAD, 0.05·|median|, 1e-6)`.
    pub scale: [f64; FEATURE_COUNT],
    /// False when no calibration window contained an answer.
    pub latency_available: bool,
    pub n_windows: usize,
    pub calibration_span_ms: u64,
}

impl PersonalBaseline {
    pub fn robust_z(&self, feature: Feature, x: f64) -> f64 {
        let i = feature.index();
        (x - self.median[i]) / self.scale[i]
    }
}

/// Robust-z deviations of one window from the personal baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub t_end_ms: u64,
    pub values: [f64; FEATURE_COUNT],
    /// Whether `answer_latency_dev` was measured; it is 0 otherwise.
    pub latency_present: bool,
}

impl FeatureVector {
    pub fn new(t_end_ms: u64, values: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            t_end_ms,
            values,
            latency_present: true,
        }
    }

    pub fn zeros(t_end_ms: u64) -> Self {
        Self::new(t_end_ms, [0.0; FEATURE_COUNT])
    }

    pub fn get(&self, feature: Feature) -> f64 {
        self.values[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, value: f64) -> &mut Self {
        self.values[feature.index()] = value;
        self
    }

    pub fn with(mut self, feature: Feature, value: f64) -> Self {
        self.set(feature, value);
        self
    }

    /// The `n` largest-magnitude deviations, ties broken by feature order.
    pub fn top_deviations(&self, n: usize) -> Vec<(Feature, f64)> {
        let mut ranked: Vec<(Feature, f64)> =
            Feature::ALL.iter().map(|&f| (f, self.get(f))).collect();
        ranked.sort_by(|a, b| {
            b.1.abs()
                .total_cmp(&a.1.abs())
                .then(a.0.index().cmp(&b.0.index()))
        });
        ranked.truncate(n);
        ranked
    }
}

/// Flat JSONL form of a [`FeatureVector`] with a fixed key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub t: u64,
    pub click_rate_dev: f64,
    pub scroll_velocity_dev: f64,
    pub scroll_reversal_dev: f64,
    pub mouse_entropy_dev: f64,
    pub idle_fraction_dev: f64,
    pub answer_latency_dev: f64,
    pub revision_rate_dev: f64,
    pub tab_hidden_dev: f64,
    pub focus_change_dev: f64,
    pub backtrack_dev: f64,
    pub latency_present: bool,
}

impl From<&FeatureVector> for FeatureRecord {
    fn from(fv: &FeatureVector) -> Self {
        let v = fv.values;
        FeatureRecord {
            t: fv.t_end_ms,
            click_rate_dev: v[0],
            scroll_velocity_dev: v[1],
            scroll_reversal_dev: v[2],
            mouse_entropy_dev: v[3],
            idle_fraction_dev: v[4],
            answer_latency_dev: v[5],
            revision_rate_dev: v[6],
            tab_hidden_dev: v[7],
            focus_change_dev: v[8],
            backtrack_dev: v[9],
            latency_present: fv.latency_present,
        }
    }
}

impl From<FeatureRecord> for FeatureVector {
    fn from(r: FeatureRecord) -> Self {
        FeatureVector {
            t_end_ms: r.t,
            values: [
                r.click_rate_dev,
                r.scroll_velocity_dev,
                r.scroll_reversal_dev,
                r.mouse_entropy_dev,
                r.idle_fraction_dev,
                r.answer_latency_dev,
                r.revision_rate_dev,
                r.tab_hidden_dev,
                r.focus_change_dev,
                r.backtrack_dev,
            ],
            latency_present: r.latency_present,
        }
    }
}

/// Serializes feature vectors as JSONL.
pub fn write_features(features: &[FeatureVector]) -> String {
    let mut out = String::new();
    for fv in features {
        out.push_str(&serde_json::to_string(&FeatureRecord::from(fv)).expect("finite record"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: u64,
    end: Option<u64>,
}

/// Open/close interval tracker for idle and tab-hidden periods.
#[derive(Debug, Clone, Default)]
struct SpanTracker {
    spans: Vec<Span>,
}

impl SpanTracker {
    fn open(&mut self, t: u64) {
        if self.spans.last().is_none_or(|s| s.end.is_some()) {
            self.spans.push(Span { start: t, end: None });
        }
    }

    fn close(&mut self, t: u64) {
        if let Some(last) = self.spans.last_mut() {
            if last.end.is_none() {
                last.end = Some(t);
            }
        }
    }

    /// Milliseconds of `[lo, hi)` covered by spans.
    fn overlap(&self, lo: u64, hi: u64) -> u64 {
        let first = self
            .spans
            .partition_point(|s| s.end.is_some_and(|e| e <= lo));
        let mut total = 0;
        for s in &self.spans[first..] {
            if s.start >= hi {
                break;
            }
            let a = s.start.max(lo);
            let b = s.end.map_or(hi, |e| e.min(hi));
            total += b.saturating_sub(a);
        }
        total
    }

    fn prune_before(&mut self, t: u64) {
        let keep = self
            .spans
            .partition_point(|s| s.end.is_some_and(|e| e <= t));
        self.spans.drain(..keep);
    }
}

#[derive(Debug, Clone, Default)]
struct Spans {
    idle: SpanTracker,
    hidden: SpanTracker,
}

impl Spans {
    fn observe(&mut self, e: &BehavioralEvent) {
        match e.kind {
            EventKind::IdleStart => self.idle.open(e.t_ms),
            EventKind::IdleEnd => self.idle.close(e.t_ms),
            EventKind::TabHidden => self.hidden.open(e.t_ms),
            EventKind::TabVisible => self.hidden.close(e.t_ms),
            _ => {}
        }
    }
}

fn check_sorted(events: &[BehavioralEvent]) -> Result<(), FeatureError> {
    match events.windows(2).position(|w| w[1].t_ms < w[0].t_ms) {
        Some(i) => Err(FeatureError::Unsorted { index: i + 1 }),
        None => Ok(()),
    }
}

/// Aggregates the window `[t_start_ms, t_start_ms + 30 s)` of a time-ordered
/// event stream. Idle and tab-hidden spans that straddle the window edges are
/// clipped to it, so events before the window still matter.
pub fn aggregate_window(
    events: &[BehavioralEvent],
    t_start_ms: u64,
) -> Result<SignalWindow, FeatureError> {
    check_sorted(events)?;
    let t_end = t_start_ms + WINDOW_MS;
    let mut spans = Spans::default();
    for e in events.iter().take_while(|e| e.t_ms < t_end) {
        spans.observe(e);
    }
    Ok(aggregate_with_spans(events, &spans, t_start_ms))
}

fn aggregate_with_spans(events: &[BehavioralEvent], spans: &Spans, t_start: u64) -> SignalWindow {
    let t_end = t_start + WINDOW_MS;
    let lo = events.partition_point(|e| e.t_ms < t_start);
    let hi = events.partition_point(|e| e.t_ms < t_end);
    let in_window = &events[lo..hi];

    let mut clicks = 0u32;
    let mut scroll_abs = 0u64;
    let mut last_scroll_sign = 0i64;
    let mut reversals = 0u32;
    let mut cursor = Vec::new();
    let mut latency_sum = 0u64;
    let mut answers = 0u32;
    let mut revisions = 0u32;
    let mut focus_changes = 0u32;
    let mut backtracks = 0u32;

    for e in in_window {
        match e.kind {
            EventKind::Click => clicks += 1,
            EventKind::Scroll => {
                let dy = e.scroll_delta().unwrap_or(0);
                scroll_abs += dy.unsigned_abs();
                let sign = dy.signum();
                if sign != 0 {
                    if last_scroll_sign != 0 && sign != last_scroll_sign {
                        reversals += 1;
                    }
                    last_scroll_sign = sign;
                }
            }
            EventKind::MouseMove => {
                if let Some(p) = e.cursor() {
                    cursor.push(p);
                }
            }
            EventKind::AnswerSubmit => {
                answers += 1;
                latency_sum += e.answer_latency_ms().unwrap_or(0);
            }
            EventKind::AnswerRevise => revisions += 1,
            EventKind::FocusGain | EventKind::FocusLoss => focus_changes += 1,
            EventKind::NavBack => backtracks += 1,
            _ => {}
        }
    }

    let width = WINDOW_MS as f64;
    let idle_fraction = if in_window.is_empty() {
        1.0
    } else {
        spans.idle.overlap(t_start, t_end) as f64 / width
    };

    SignalWindow {
        t_start_ms: t_start,
        t_end_ms: t_end,
        event_count: in_window.len() as u32,
        click_rate: clicks as f64 / (width / 60_000.0),
        scroll_velocity_mean: scroll_abs as f64 / (width / 1000.0),
        scroll_reversal_count: reversals,
        mouse_entropy: mouse_entropy(&cursor),
        idle_fraction,
        answer_latency_ms: (answers > 0).then(|| latency_sum as f64 / answers as f64),
        revision_count: revisions,
        tab_hidden_fraction: spans.hidden.overlap(t_start, t_end) as f64 / width,
        focus_change_count: focus_changes,
        backtrack_count: backtracks,
    }
}

/// 45-degree direction bin of a displacement, bin 0 starting at east and
/// increasing counter-clockwise in the mathematical orientation.
fn direction_bin(dx: i64, dy: i64) -> usize {
    let angle = (dy as f64).atan2(dx as f64).rem_euclid(std::f64::consts::TAU);
    ((angle / std::f64::consts::FRAC_PI_4) as usize).min(DIRECTION_BINS - 1)
}

/// Shannon entropy (bits) of the 8-bin direction histogram of consecutive
/// cursor displacements. Zero-length moves are skipped.
pub fn mouse_entropy(positions: &[(i64, i64)]) -> f64 {
    let mut hist = [0u32; DIRECTION_BINS];
    let mut total = 0u32;
    for w in positions.windows(2) {
        let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
        if dx == 0 && dy == 0 {
            continue;
        }
        hist[direction_bin(dx, dy)] += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // -0.0 and rounding noise below zero
    h.max(0.0)
}

/// Incremental windowing over a time-ordered event stream.
///
/// Windows start at multiples of the stride and are emitted once the
/// watermark reaches their end.
#[derive(Debug, Clone)]
pub struct WindowStream {
    stride_ms: u64,
    events: Vec<BehavioralEvent>,
    spans: Spans,
    next_start: u64,
    last_t: Option<u64>,
}

impl WindowStream {
    pub fn new(stride_ms: u64) -> Result<Self, FeatureError> {
        if stride_ms == 0 || stride_ms > WINDOW_MS {
            return Err(FeatureError::InvalidStride(stride_ms));
        }
        Ok(WindowStream {
            stride_ms,
            events: Vec::new(),
            spans: Spans::default(),
            next_start: 0,
            last_t: None,
        })
    }

    pub fn stride_ms(&self) -> u64 {
        self.stride_ms
    }

    pub fn push(&mut self, event: BehavioralEvent) -> Result<(), FeatureError> {
        if self.last_t.is_some_and(|t| event.t_ms < t) {
            return Err(FeatureError::Unsorted {
                index: self.events.len(),
            });
        }
        self.last_t = Some(event.t_ms);
        self.spans.observe(&event);
        self.events.push(event);
        Ok(())
    }

    /// Emits every window whose end is at or before `watermark_ms`.
    pub fn advance(&mut self, watermark_ms: u64) -> Vec<SignalWindow> {
        let mut out = Vec::new();
        while self.next_start + WINDOW_MS <= watermark_ms {
            out.push(aggregate_with_spans(&self.events, &self.spans, self.next_start));
            self.next_start += self.stride_ms;
        }
        if !out.is_empty() {
            let keep_from = self.events.partition_point(|e| e.t_ms < self.next_start);
            self.events.drain(..keep_from);
            self.spans.idle.prune_before(self.next_start);
            self.spans.hidden.prune_before(self.next_start);
        }
        out
    }
}

/// All windows of a complete stream at the given stride. The stream's
/// watermark is its last timestamp.
pub fn sliding_windows(
    events: &[BehavioralEvent],
    stride_ms: u64,
) -> Result<Vec<SignalWindow>, FeatureError> {
    check_sorted(events)?;
    let mut stream = WindowStream::new(stride_ms)?;
    let Some(last) = events.last() else {
        return Ok(Vec::new());
    };
    for e in events {
        stream.push(e.clone())?;
    }
    Ok(stream.advance(last.t_ms))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median and MAD of a non-empty sample.
pub fn median_mad(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    (med, median(&mut dev))
}

/// Robust-z denominator with the relative and absolute floors applied.
pub fn robust_scale(median: f64, mad: f64) -> f64 {
    (MAD_SCALE * mad)
        .max(RELATIVE_FLOOR * median.abs())
        .max(ABSOLUTE_FLOOR)
}

/// Builds the personal baseline from the calibration windows. Windows without
/// any event do not count towards the minimum of eight.
pub fn calibrate(windows: &[SignalWindow]) -> Result<PersonalBaseline, FeatureError> {
    let valid: Vec<&SignalWindow> = windows.iter().filter(|w| !w.is_empty()).collect();
    if valid.len() < MIN_CALIBRATION_WINDOWS {
        return Err(FeatureError::CalibrationInsufficient {
            valid: valid.len(),
            required: MIN_CALIBRATION_WINDOWS,
        });
    }
    let mut median = [0.0; FEATURE_COUNT];
    let mut mad = [0.0; FEATURE_COUNT];
    let mut scale = [ABSOLUTE_FLOOR; FEATURE_COUNT];
    let mut latency_available = true;
    for f in Feature::ALL {
        let values: Vec<f64> = valid.iter().filter_map(|w| w.raw(f)).collect();
        if values.is_empty() {
            latency_available = false;
            continue;
        }
        let (m, d) = median_mad(&values);
        median[f.index()] = m;
        mad[f.index()] = d;
        scale[f.index()] = robust_scale(m, d);
    }
    Ok(PersonalBaseline {
        median,
        mad,
        scale,
        latency_available,
        n_windows: valid.len(),
        calibration_span_ms: CALIBRATION_SPAN_MS,
    })
}

/// Robust-z deviations of `window` from `baseline`.
pub fn featurize(window: &SignalWindow, baseline: &PersonalBaseline) -> FeatureVector {
    let mut values = [0.0; FEATURE_COUNT];
    let mut latency_present = false;
    for f in Feature::ALL {
        match window.raw(f) {
            Some(x) if f != Feature::AnswerLatency || baseline.latency_available => {
                values[f.index()] = baseline.robust_z(f, x);
                if f == Feature::AnswerLatency {
                    latency_present = true;
                }
            }
            _ => {}
        }
    }
    FeatureVector {
        t_end_ms: window.t_end_ms,
        values,
        latency_present,
    }
}

/// A calibrated session in training mode: baseline plus every
/// post-calibration non-overlapping window and its features.
#[derive(Debug, Clone)]
pub struct SessionFeatures {
    pub baseline: PersonalBaseline,
    pub windows: Vec<SignalWindow>,
    pub features: Vec<FeatureVector>,
}

/// Training-mode featurization of a complete trace.
pub fn session_features(events: &[BehavioralEvent]) -> Result<SessionFeatures, FeatureError> {
    let windows = sliding_windows(events, TRAINING_STRIDE_MS)?;
    let (calib, rest): (Vec<_>, Vec<_>) = windows
        .into_iter()
        .partition(|w| w.t_start_ms < CALIBRATION_SPAN_MS);
    let baseline = calibrate(&calib)?;
    let features = rest.iter().map(|w| featurize(w, &baseline)).collect();
    Ok(SessionFeatures {
        baseline,
        windows: rest,
        features,
    })
}
