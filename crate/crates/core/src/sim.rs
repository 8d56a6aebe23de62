//! Synthetic sessions, OULAD-style session adapter and cohort scoring.
//!
//! The generator walks a Markov chain over attention states in 30-second
//! steps (the first five minutes are always Focused so calibration sees
//! ordinary behaviour) and samples events from state-conditioned rates.
//! Idle time alternates with engaged time in exponentially distributed
//! spans; interaction events only happen while engaged and visible.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    median_mad, robust_scale, session_features, FeatureError, FeatureVector, CALIBRATION_SPAN_MS,
    TRAINING_STRIDE_MS, WINDOW_MS,
};
use crate::forest::GroupedSample;
use crate::labeler::{label_stream, LabelRuleConfig};
use crate::signal::{parse_trace, AttentionState, BehavioralEvent, EventKind, ParseError, Payload};
use crate::stats::{self, Alternative, StatsError, TestResult};

pub const STEP_MS: u64 = 30_000;
pub const MIN_DURATION_S: u64 = 360;
const VIEWPORT: (f64, f64) = (1600.0, 900.0);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("duration must be at least {MIN_DURATION_S} s, got {0}")]
    DurationTooShort(u64),
    #[error("missing column {0:?} in header")]
    Schema(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("no feature vectors to score")]
    EmptyInput,
    #[error("truth line {line}: {reason}")]
    Truth { line: usize, reason: String },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Emission parameters for one state. Rates are per minute of wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateParams {
    pub click_rate: f64,
    pub idle_fraction: f64,
    /// Mean length of one idle span, seconds.
    pub idle_span_s: f64,
    pub tab_hidden_prob: f64,
    pub latency_multiplier: f64,
    pub focus_change_rate: f64,
    pub scroll_rate: f64,
    pub scroll_reversal_prob: f64,
    pub mouse_move_rate: f64,
    /// Share of mouse moves that follow the window's dominant direction.
    pub mouse_concentration: f64,
    pub answer_rate: f64,
    pub backtrack_rate: f64,
    pub revision_prob: f64,
}

impl StateParams {
    fn validate(&self, name: &str) -> Result<(), SimError> {
        let rates = [
            self.click_rate,
            self.idle_span_s,
            self.latency_multiplier,
            self.focus_change_rate,
            self.scroll_rate,
            self.mouse_move_rate,
            self.answer_rate,
            self.backtrack_rate,
        ];
        let probs = [
            self.tab_hidden_prob,
            self.scroll_reversal_prob,
            self.mouse_concentration,
            self.revision_prob,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0))
            || probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || !(0.0..1.0).contains(&self.idle_fraction)
            || self.idle_span_s <= 0.0
            || self.latency_multiplier <= 0.0
        {
            return Err(SimError::InvalidProfile(format!("bad parameters for {name}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimProfile {
    /// Row-stochastic, rows and columns in canonical state order.
    pub transition: [[f64; 4]; 4],
    pub focused: StateParams,
    pub drifting: StateParams,
    pub hyperfocused: StateParams,
    pub fatigued: StateParams,
    /// Log-scale sd of the per-session multiplier on every rate.
    pub session_jitter: f64,
    pub base_latency_ms: f64,
    /// Log-scale sd of single answer latencies.
    pub latency_sigma: f64,
    pub key_press_rate: f64,
    pub chunk_advance_rate: f64,
}

fn symmetric_transition(stay: f64) -> [[f64; 4]; 4] {
    let other = (1.0 - stay) / 3.0;
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { stay } else { other }))
}

impl Default for SimProfile {
    fn default() -> Self {
        SimProfile {
            transition: symmetric_transition(0.9),
            focused: StateParams {
                click_rate: 12.0,
                idle_fraction: 0.05,
                idle_span_s: 0.15,
                tab_hidden_prob: 0.01,
                latency_multiplier: 1.0,
                focus_change_rate: 6.0,
                scroll_rate: 12.0,
                scroll_reversal_prob: 0.3,
                mouse_move_rate: 40.0,
                mouse_concentration: 0.7,
                answer_rate: 6.0,
                backtrack_rate: 6.0,
                revision_prob: 0.6,
            },
            drifting: StateParams {
                click_rate: 4.0,
                idle_fraction: 0.5,
                idle_span_s: 6.0,
                tab_hidden_prob: 0.3,
                latency_multiplier: 1.5,
                focus_change_rate: 8.0,
                scroll_rate: 16.0,
                scroll_reversal_prob: 0.5,
                mouse_move_rate: 60.0,
                mouse_concentration: 0.35,
                answer_rate: 0.2,
                backtrack_rate: 10.0,
                revision_prob: 0.5,
            },
            hyperfocused: StateParams {
                click_rate: 18.0,
                idle_fraction: 0.01,
                idle_span_s: 0.1,
                tab_hidden_prob: 0.0,
                latency_multiplier: 0.8,
                focus_change_rate: 0.3,
                scroll_rate: 8.0,
                scroll_reversal_prob: 0.1,
                mouse_move_rate: 20.0,
                mouse_concentration: 0.8,
                answer_rate: 7.0,
                backtrack_rate: 2.0,
                revision_prob: 0.2,
            },
            fatigued: StateParams {
                click_rate: 5.0,
                idle_fraction: 0.2,
                idle_span_s: 1.0,
                tab_hidden_prob: 0.05,
                latency_multiplier: 2.2,
                focus_change_rate: 3.0,
                scroll_rate: 6.0,
                scroll_reversal_prob: 0.3,
                mouse_move_rate: 20.0,
                mouse_concentration: 0.6,
                answer_rate: 8.0,
                backtrack_rate: 8.0,
                revision_prob: 0.6,
            },
            session_jitter: 0.2,
            base_latency_ms: 6000.0,
            latency_sigma: 0.2,
            key_press_rate: 3.0,
            chunk_advance_rate: 0.5,
        }
    }
}

impl SimProfile {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let p: SimProfile =
            toml::from_str(text).map_err(|e| SimError::InvalidProfile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidProfile(format!(
                    "transition row {i} must be a probability vector"
                )));
            }
        }
        for s in AttentionState::ALL {
            self.params(s).validate(s.as_str())?;
        }
        let globals = [
            self.session_jitter,
            self.base_latency_ms,
            self.latency_sigma,
            self.key_press_rate,
            self.chunk_advance_rate,
        ];
        if globals.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || self.base_latency_ms <= 0.0 {
            return Err(SimError::InvalidProfile("global parameters must be non-negative".into()));
        }
        Ok(())
    }

    pub fn params(&self, s: AttentionState) -> &StateParams {
        match s {
            AttentionState::Focused => &self.focused,
            AttentionState::Drifting => &self.drifting,
            AttentionState::Hyperfocused => &self.hyperfocused,
            AttentionState::Fatigued => &self.fatigued,
        }
    }

    /// Cohort profile that mostly stays Focused and returns there quickly.
    pub fn calm() -> Self {
        let mut transition = [[0.0; 4]; 4];
        transition[0] = [0.96, 0.02, 0.01, 0.01];
        for row in transition.iter_mut().skip(1) {
            *row = [0.3, 0.0, 0.0, 0.0];
        }
        for (i, row) in transition.iter_mut().enumerate().skip(1) {
            row[i] = 0.7;
        }
        SimProfile {
            transition,
            ..SimProfile::default()
        }
    }

    /// Cohort profile that switches state often and leaves Focused readily.
    pub fn volatile() -> Self {
        let mut transition = symmetric_transition(0.6);
        transition[0] = [0.4, 0.3, 0.1, 0.2];
        SimProfile {
            transition,
            ..SimProfile::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub events: Vec<BehavioralEvent>,
    /// State at the start of every 30-second step.
    pub truth: Vec<(u64, AttentionState)>,
}

impl SimTrace {
    pub fn events_jsonl(&self) -> String {
        crate::signal::write_trace(&self.events)
    }

    pub fn truth_jsonl(&self) -> String {
        write_truth(&self.truth)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthRecord {
    t: u64,
    state: AttentionState,
}

pub fn write_truth(truth: &[(u64, AttentionState)]) -> String {
    let mut out = String::new();
    for &(t, state) in truth {
        out.push_str(&serde_json::to_string(&TruthRecord { t, state }).expect("serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_truth(text: &str) -> Result<Vec<(u64, AttentionState)>, SimError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TruthRecord = serde_json::from_str(line).map_err(|e| SimError::Truth {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if out.last().is_some_and(|&(t, _)| r.t <= t) {
            return Err(SimError::Truth {
                line: i + 1,
                reason: "timestamps must increase".into(),
            });
        }
        out.push((r.t, r.state));
    }
    Ok(out)
}

/// State in force at `t_ms` according to a step timeline.
pub fn state_at(truth: &[(u64, AttentionState)], t_ms: u64) -> Option<AttentionState> {
    let i = truth.partition_point(|&(t, _)| t <= t_ms);
    (i > 0).then(|| truth[i - 1].1)
}

struct Gen<'a> {
    profile: &'a SimProfile,
    rng: ChaCha8Rng,
    sid: String,
    events: Vec<BehavioralEvent>,
    jitter: Jitter,
    idle: bool,
    span_end_ms: u64,
    scroll_sign: i64,
    cursor: (f64, f64),
    focus_lost: bool,
    section: u32,
}

struct Jitter {
    click: f64,
    scroll: f64,
    mouse: f64,
    answer: f64,
    latency: f64,
}

impl Gen<'_> {
    fn push(&mut self, t: u64, kind: EventKind, payload: Payload) {
        self.events.push(BehavioralEvent {
            session_id: self.sid.clone(),
            t_ms: t,
            kind,
            payload,
        });
    }

    fn exp_ms(&mut self, mean_s: f64) -> u64 {
        let d = Exp::new(1.0 / mean_s).expect("positive mean");
        ((d.sample(&mut self.rng) * 1000.0).round() as u64).max(1)
    }

    fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean).expect("positive mean").sample(&mut self.rng) as u64
    }

    /// Idle spans inside `[t0, t1)`, emitting their boundary events. The
    /// remaining span length is redrawn at each step from the new state's
    /// distribution, which the exponential's memorylessness permits.
    fn idle_spans(&mut self, p: &StateParams, t0: u64, t1: u64) -> Vec<(u64, u64)> {
        let idle_mean = p.idle_span_s;
        let engaged_mean = if p.idle_fraction > 0.0 {
            idle_mean * (1.0 - p.idle_fraction) / p.idle_fraction
        } else {
            f64::INFINITY
        };
        let mean_for = |idle: bool| if idle { idle_mean } else { engaged_mean };
        let mut spans = Vec::new();
        let mut t = t0;
        let m = mean_for(self.idle);
        self.span_end_ms = if m.is_finite() { t0 + self.exp_ms(m) } else { u64::MAX };
        loop {
            let end = self.span_end_ms.min(t1);
            if self.idle {
                spans.push((t, end));
            }
            if self.span_end_ms >= t1 {
                break;
            }
            t = self.span_end_ms;
            self.idle = !self.idle;
            self.push(
                t,
                if self.idle { EventKind::IdleStart } else { EventKind::IdleEnd },
                Payload::None,
            );
            let m = mean_for(self.idle);
            self.span_end_ms = if m.is_finite() { t + self.exp_ms(m) } else { u64::MAX };
        }
        spans
    }

    /// Uniform event times over `[t0, t1)` for a Poisson process whose rate
    /// is `per_min` averaged over the whole step, thinned to engaged time.
    fn times(&mut self, per_min: f64, t0: u64, t1: u64, blocked: &[(u64, u64)], engaged_share: f64) -> Vec<u64> {
        let width = (t1 - t0) as f64;
        let _ = engaged_share;
        let n = self.poisson(per_min * width / 60_000.0);
        let mut ts: Vec<u64> = (0..n)
            .map(|_| self.rng.random_range(t0..t1))
            .filter(|t| !blocked.iter().any(|&(a, b)| *t >= a && *t < b))
            .collect();
        ts.sort_unstable();
        ts
    }

    fn step(&mut self, state: AttentionState, t0: u64, t1: u64) {
        let p = self.profile.params(state).clone();
        let mut blocked = self.idle_spans(&p, t0, t1);

        if t1 - t0 > 8_000 && self.rng.random_bool(p.tab_hidden_prob) {
            let start = self.rng.random_range(t0..t1 - 4_000);
            let dur = self.rng.random_range(4_000..=20_000u64);
            let end = (start + dur).min(t1 - 1);
            self.push(start, EventKind::TabHidden, Payload::None);
            self.push(end, EventKind::TabVisible, Payload::None);
            blocked.push((start, end));
        }
        let engaged = 1.0 - p.idle_fraction;

        for t in self.times(p.click_rate * self.jitter.click, t0, t1, &blocked, engaged) {
            self.push(t, EventKind::Click, Payload::None);
        }
        for t in self.times(self.profile.key_press_rate, t0, t1, &blocked, engaged) {
            self.push(t, EventKind::KeyPress, Payload::None);
        }
        for t in self.times(p.scroll_rate * self.jitter.scroll, t0, t1, &blocked, engaged) {
            if self.rng.random_bool(p.scroll_reversal_prob) {
                self.scroll_sign = -self.scroll_sign;
            }
            let dy = self.rng.random_range(30..=240i64) * self.scroll_sign;
            self.push(t, EventKind::Scroll, Payload::Scroll { dy });
        }

        // centred in a 45-degree direction bin
        let heading = (self.rng.random_range(0..8u32) as f64 + 0.5) * std::f64::consts::FRAC_PI_4;
        let wobble = Normal::new(0.0, 0.15).expect("valid sd");
        for t in self.times(p.mouse_move_rate * self.jitter.mouse, t0, t1, &blocked, engaged) {
            let angle = if self.rng.random_bool(p.mouse_concentration) {
                heading + wobble.sample(&mut self.rng)
            } else {
                self.rng.random_range(0.0..std::f64::consts::TAU)
            };
            let len = self.rng.random_range(10.0..80.0);
            let (mut x, mut y) = (self.cursor.0 + len * angle.cos(), self.cursor.1 + len * angle.sin());
            // wrap rather than reflect so the direction of travel is kept
            x = x.rem_euclid(VIEWPORT.0);
            y = y.rem_euclid(VIEWPORT.1);
            self.cursor = (x, y);
            self.push(t, EventKind::MouseMove, Payload::Cursor { x: x as i64, y: y as i64 });
        }

        let lat_noise = LogNormal::new(0.0, self.profile.latency_sigma).expect("valid sigma");
        for t in self.times(p.answer_rate * self.jitter.answer, t0, t1, &blocked, engaged) {
            let base = self.profile.base_latency_ms * self.jitter.latency * p.latency_multiplier;
            let ms = (base * lat_noise.sample(&mut self.rng)).round().max(1.0) as u64;
            self.push(t, EventKind::AnswerSubmit, Payload::Latency { ms });
            if self.rng.random_bool(p.revision_prob) {
                let r = t + self.rng.random_range(1_000..5_000u64);
                if r < t1 {
                    self.push(r, EventKind::AnswerRevise, Payload::None);
                }
            }
        }
        for t in self.times(p.focus_change_rate, t0, t1, &[], 1.0) {
            self.focus_lost = !self.focus_lost;
            let kind = if self.focus_lost { EventKind::FocusLoss } else { EventKind::FocusGain };
            self.push(t, kind, Payload::None);
        }
        for t in self.times(p.backtrack_rate, t0, t1, &blocked, engaged) {
            let r = format!("section-{}", self.section.saturating_sub(1));
            self.push(t, EventKind::NavBack, Payload::ContentRef(r));
        }
        for t in self.times(self.profile.chunk_advance_rate, t0, t1, &blocked, engaged) {
            self.section += 1;
            let r = format!("section-{}", self.section);
            self.push(t, EventKind::ChunkAdvance, Payload::ContentRef(r));
        }
    }
}

fn next_state(rng: &mut ChaCha8Rng, row: &[f64; 4]) -> AttentionState {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return AttentionState::ALL[i];
        }
    }
    // rounding left a sliver above the last non-zero entry
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    AttentionState::ALL[last]
}

/// Generates one session. Identical arguments give identical traces.
pub fn generate_trace(
    profile: &SimProfile,
    duration_s: u64,
    seed: u64,
    session_id: &str,
) -> Result<SimTrace, SimError> {
    profile.validate()?;
    if duration_s < MIN_DURATION_S {
        return Err(SimError::DurationTooShort(duration_s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jit = LogNormal::new(0.0, profile.session_jitter).expect("valid sigma");
    let jitter = Jitter {
        click: jit.sample(&mut rng),
        scroll: jit.sample(&mut rng),
        mouse: jit.sample(&mut rng),
        answer: jit.sample(&mut rng),
        latency: jit.sample(&mut rng),
    };
    let cursor = (rng.random_range(0.0..VIEWPORT.0), rng.random_range(0.0..VIEWPORT.1));
    let mut g = Gen {
        profile,
        rng,
        sid: session_id.to_string(),
        events: Vec::new(),
        jitter,
        idle: false,
        span_end_ms: 0,
        scroll_sign: 1,
        cursor,
        focus_lost: false,
        section: 0,
    };
    let end_ms = duration_s * 1000;
    g.push(0, EventKind::SessionStart, Payload::None);
    let mut truth = Vec::new();
    let mut state = AttentionState::Focused;
    let mut t0 = 0;
    while t0 < end_ms {
        if t0 >= CALIBRATION_SPAN_MS {
            state = next_state(&mut g.rng, &profile.transition[state.index()]);
        }
        truth.push((t0, state));
        let t1 = (t0 + STEP_MS).min(end_ms);
        g.step(state, t0, t1);
        t0 = t1;
    }
    if g.idle {
        g.push(end_ms, EventKind::IdleEnd, Payload::None);
    }
    g.push(end_ms, EventKind::SessionEnd, Payload::None);
    let mut events = g.events;
    // stable, so boundary events keep generation order at equal timestamps
    events.sort_by_key(|e| e.t_ms);
    Ok(SimTrace { events, truth })
}

/// Featurizes a trace in training mode and pairs each window with the state
/// in force at its start.
pub fn truth_samples(
    events: &[BehavioralEvent],
    truth: &[(u64, AttentionState)],
) -> Result<Vec<(FeatureVector, AttentionState)>, SimError> {
    let sf = session_features(events)?;
    Ok(sf
        .features
        .into_iter()
        .filter_map(|fv| {
            let start = fv.t_end_ms - WINDOW_MS;
            state_at(truth, start).map(|s| (fv, s))
        })
        .collect())
}

/// Featurizes a trace and labels its windows with the rule labeler.
pub fn rule_samples(
    events: &[BehavioralEvent],
    cfg: &LabelRuleConfig,
) -> Result<Vec<(FeatureVector, AttentionState)>, SimError> {
    let sf = session_features(events)?;
    Ok(label_stream(&sf.features, cfg))
}

/// Generates `n` sessions with derived seeds and returns grouped training
/// samples against ground truth. Sessions are generated in parallel.
pub fn synthetic_dataset(
    profile: &SimProfile,
    n_sessions: usize,
    duration_s: u64,
    seed: u64,
) -> Result<Vec<GroupedSample>, SimError> {
    use rayon::prelude::*;
    let per: Vec<Vec<GroupedSample>> = (0..n_sessions)
        .into_par_iter()
        .map(|i| {
            let sid = session_name(i);
            let trace = generate_trace(profile, duration_s, derive_seed(seed, i), &sid)?;
            Ok(truth_samples(&trace.events, &trace.truth)?
                .into_iter()
                .map(|(features, label)| GroupedSample {
                    group: sid.clone(),
                    features,
                    label,
                })
                .collect())
        })
        .collect::<Result<_, SimError>>()?;
    Ok(per.into_iter().flatten().collect())
}

pub fn session_name(i: usize) -> String {
    format!("sim{i:03}")
}

/// Seed of the `i`-th session of a batch.
pub fn derive_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

// ---- OULAD-style session adapter ----

pub const OULAD_COLUMNS: [&str; 6] = [
    "student_id",
    "click_rate_norm",
    "duration_ratio",
    "resource_diversity",
    "backtracking_ratio",
    "idle_pattern_score",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFeaturesOulad {
    pub student_id: String,
    pub click_rate_norm: f64,
    pub duration_ratio: f64,
    pub resource_diversity: f64,
    pub backtracking_ratio: f64,
    pub idle_pattern_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRejection {
    /// 1-based data row, header excluded.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuladOutput {
    pub records: Vec<SessionFeaturesOulad>,
    pub labels: Vec<AttentionState>,
    pub rejected: Vec<RowRejection>,
}

/// Session-level thresholds, in robust-z units over the accepted rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionRuleConfig {
    pub hyper_duration: f64,
    pub hyper_click: f64,
    pub hyper_idle: f64,
    pub fatigue_click: f64,
    pub fatigue_duration: f64,
    pub drift_idle: f64,
    pub drift_backtrack: f64,
    pub drift_diversity: f64,
    pub drift_diversity_click: f64,
}

impl Default for SessionRuleConfig {
    fn default() -> Self {
        SessionRuleConfig {
            hyper_duration: 1.0,
            hyper_click: 0.0,
            hyper_idle: -0.5,
            fatigue_click: -1.0,
            fatigue_duration: -1.0,
            drift_idle: 1.0,
            drift_backtrack: 1.0,
            drift_diversity: 1.0,
            drift_diversity_click: -0.5,
        }
    }
}

impl SessionRuleConfig {
    /// Same priority as the window labeler; no persistence at session level.
    pub fn label(&self, z: &[f64; 5]) -> AttentionState {
        let [click, duration, diversity, backtrack, idle] = *z;
        if duration >= self.hyper_duration && click >= self.hyper_click && idle <= self.hyper_idle {
            AttentionState::Hyperfocused
        } else if click < self.fatigue_click && duration < self.fatigue_duration {
            AttentionState::Fatigued
        } else if idle > self.drift_idle
            || backtrack > self.drift_backtrack
            || (diversity > self.drift_diversity && click < self.drift_diversity_click)
        {
            AttentionState::Drifting
        } else {
            AttentionState::Focused
        }
    }
}

pub fn oulad_adapt(csv_text: &str, rules: &SessionRuleConfig) -> Result<OuladOutput, SimError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| SimError::Csv(e.to_string()))?.clone();
    let mut idx = [0usize; 6];
    for (slot, col) in idx.iter_mut().zip(OULAD_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| SimError::Schema(col.to_string()))?;
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowRejection { row: row_no, reason: e.to_string() });
                continue;
            }
        };
        match oulad_row(&row, &idx) {
            Ok(r) => records.push(r),
            Err(reason) => rejected.push(RowRejection { row: row_no, reason }),
        }
    }

    let columns: [Vec<f64>; 5] = [
        records.iter().map(|r| r.click_rate_norm).collect(),
        records.iter().map(|r| r.duration_ratio).collect(),
        records.iter().map(|r| r.resource_diversity).collect(),
        records.iter().map(|r| r.backtracking_ratio).collect(),
        records.iter().map(|r| r.idle_pattern_score).collect(),
    ];
    let centre: [(f64, f64); 5] = std::array::from_fn(|c| {
        if columns[c].is_empty() {
            (0.0, 1.0)
        } else {
            let (m, d) = median_mad(&columns[c]);
            (m, robust_scale(m, d))
        }
    });
    let labels = (0..records.len())
        .map(|r| {
            let z: [f64; 5] = std::array::from_fn(|c| (columns[c][r] - centre[c].0) / centre[c].1);
            rules.label(&z)
        })
        .collect();
    Ok(OuladOutput { records, labels, rejected })
}

fn oulad_row(row: &csv::StringRecord, idx: &[usize; 6]) -> Result<SessionFeaturesOulad, String> {
    let field = |k: usize| -> Result<&str, String> {
        match row.get(idx[k]) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(format!("missing {}", OULAD_COLUMNS[k])),
        }
    };
    let num = |k: usize| -> Result<f64, String> {
        let v = field(k)?;
        let x: f64 = v
            .parse()
            .map_err(|_| format!("{} is not a number: {v:?}", OULAD_COLUMNS[k]))?;
        if !x.is_finite() {
            return Err(format!("{} must be finite", OULAD_COLUMNS[k]));
        }
        Ok(x)
    };
    let rec = SessionFeaturesOulad {
        student_id: field(0)?.to_string(),
        click_rate_norm: num(1)?,
        duration_ratio: num(2)?,
        resource_diversity: num(3)?,
        backtracking_ratio: num(4)?,
        idle_pattern_score: num(5)?,
    };
    if rec.resource_diversity < 0.0 {
        return Err("resource_diversity must be non-negative".into());
    }
    Ok(rec)
}

// ---- cohort dysregulation ----

pub const DYSREGULATION_FORMULA: &str =
    "mean over windows of the mean absolute robust-z deviation across the 10 features";

/// Mean over windows of the mean absolute deviation across features.
pub fn dysregulation_score(features: &[FeatureVector]) -> Result<f64, SimError> {
    if features.is_empty() {
        return Err(SimError::EmptyInput);
    }
    let per_window = features
        .iter()
        .map(|fv| fv.values.iter().map(|v| v.abs()).sum::<f64>() / fv.values.len() as f64);
    Ok(per_window.sum::<f64>() / features.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortGroup {
    Adhd,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantScore {
    pub participant_id: String,
    pub group: CohortGroup,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub formula: String,
    pub scores: Vec<ParticipantScore>,
    /// One-sided: the adhd group scores higher.
    pub mann_whitney: TestResult,
    /// Probability that a random adhd participant outscores a control.
    pub auc: f64,
}

pub fn parse_cohort_labels(text: &str) -> Result<Vec<(String, CohortGroup)>, SimError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| SimError::Csv(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SimError::Schema(name.to_string()))
    };
    let (pid, grp) = (col("participant_id")?, col("group")?);
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| SimError::Csv(e.to_string()))?;
        let group = match row.get(grp).unwrap_or("").to_ascii_lowercase().as_str() {
            "adhd" => CohortGroup::Adhd,
            "control" => CohortGroup::Control,
            other => {
                return Err(SimError::Csv(format!("row {}: unknown group {other:?}", i + 1)));
            }
        };
        let id = row.get(pid).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(SimError::Csv(format!("row {}: empty participant_id", i + 1)));
        }
        out.push((id, group));
    }
    Ok(out)
}

pub fn cohort_report(scores: Vec<ParticipantScore>) -> Result<CohortReport, SimError> {
    let pick = |g: CohortGroup| -> Vec<f64> {
        scores.iter().filter(|s| s.group == g).map(|s| s.score).collect()
    };
    let (adhd, control) = (pick(CohortGroup::Adhd), pick(CohortGroup::Control));
    let mann_whitney = stats::mann_whitney_u(&adhd, &control, Alternative::Greater)?;
    let auc = stats::roc_auc(&adhd, &control)?;
    Ok(CohortReport {
        formula: DYSREGULATION_FORMULA.to_string(),
        scores,
        mann_whitney,
        auc,
    })
}

/// Scores every labelled participant from `<dir>/<participant_id>.jsonl`.
pub fn cohort_from_dir(dir: &Path, labels_csv: &str) -> Result<CohortReport, SimError> {
    let mut scores = Vec::new();
    for (id, group) in parse_cohort_labels(labels_csv)? {
        let path = dir.join(format!("{id}.jsonl"));
        let text = std::fs::read_to_string(&path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let events = parse_trace(&text)?;
        let sf = session_features(&events)?;
        scores.push(ParticipantScore {
            participant_id: id,
            group,
            score: dysregulation_score(&sf.features)?,
        });
    }
    cohort_report(scores)
}

/// Two generated cohorts of `n` participants each: volatile as adhd, calm as
/// control.
pub fn synthetic_cohort(n: usize, duration_s: u64, seed: u64) -> Result<CohortReport, SimError> {
    use rayon::prelude::*;
    let (calm, volatile) = (SimProfile::calm(), SimProfile::volatile());
    let scores = (0..2 * n)
        .into_par_iter()
        .map(|i| {
            let (profile, group) = if i < n {
                (&volatile, CohortGroup::Adhd)
            } else {
                (&calm, CohortGroup::Control)
            };
            let id = format!("p{i:03}");
            let trace = generate_trace(profile, duration_s, derive_seed(seed, i), &id)?;
            let sf = session_features(&trace.events)?;
            Ok(ParticipantScore {
                participant_id: id,
                group,
                score: dysregulation_score(&sf.features)?,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    cohort_report(scores)
}

/// Fraction of each state in a timeline after calibration.
pub fn occupancy(truth: &[(u64, AttentionState)]) -> [f64; 4] {
    let mut counts = [0usize; 4];
    let mut n = 0;
    for &(t, s) in truth {
        if t >= CALIBRATION_SPAN_MS {
            counts[s.index()] += 1;
            n += 1;
        }
    }
    counts.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
}

/// Groups an owned sample list by session for reporting.
pub fn samples_by_group(samples: &[GroupedSample]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for s in samples {
        *m.entry(s.group.as_str()).or_insert(0) += 1;
    }
    m
}

const _: () = assert!(TRAINING_STRIDE_MS == STEP_MS);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Feature;
    use crate::signal::parse_trace;
    use AttentionState::*;

    #[test]
    fn generation_is_deterministic() {
        let p = SimProfile::default();
        let a = generate_trace(&p, 900, 42, "s1").unwrap();
        let b = generate_trace(&p, 900, 42, "s1").unwrap();
        assert_eq!(a.events_jsonl(), b.events_jsonl());
        assert_eq!(a.truth_jsonl(), b.truth_jsonl());
        let c = generate_trace(&p, 900, 43, "s1").unwrap();
        assert_ne!(a.events_jsonl(), c.events_jsonl());
    }

    #[test]
    fn traces_are_valid_streams() {
        let trace = generate_trace(&SimProfile::default(), 1800, 5, "s9").unwrap();
        let text = trace.events_jsonl();
        let parsed = parse_trace(&text).unwrap();
        assert_eq!(parsed, trace.events);
        assert!(trace.events.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
        assert_eq!(trace.events.first().unwrap().kind, EventKind::SessionStart);
        assert_eq!(trace.events.last().unwrap().kind, EventKind::SessionEnd);
        assert_eq!(trace.truth.len(), 60);
        assert!(trace.truth[..10].iter().all(|&(_, s)| s == Focused));
        session_features(&trace.events).unwrap();
    }

    #[test]
    fn identity_chain_stays_focused() {
        let p = SimProfile {
            transition: symmetric_transition(1.0),
            ..SimProfile::default()
        };
        let trace = generate_trace(&p, 3600, 1, "s").unwrap();
        assert!(trace.truth.iter().all(|&(_, s)| s == Focused));
    }

    #[test]
    fn occupancy_near_stationary() {
        // One 2-hour trace has only ~17 effectively independent steps under
        // this chain (occupancy sd near 0.1), so the check pools sessions and
        // compares against the exact expected occupancy from a Focused start.
        let p = SimProfile::default();
        let steps = 7200 / 30 - 10;
        let mut dist = [1.0, 0.0, 0.0, 0.0];
        let mut expected = [0.0; 4];
        for _ in 0..steps {
            dist = std::array::from_fn(|j| (0..4).map(|i| dist[i] * p.transition[i][j]).sum());
            for k in 0..4 {
                expected[k] += dist[k] / steps as f64;
            }
        }
        assert!(expected.iter().all(|e| (e - 0.25).abs() < 0.03));
        let n = 100;
        let mut pooled = [0.0; 4];
        for i in 0..n {
            let o = occupancy(&generate_trace(&p, 7200, derive_seed(9, i), "s").unwrap().truth);
            for k in 0..4 {
                pooled[k] += o[k] / n as f64;
            }
        }
        for k in 0..4 {
            assert!((pooled[k] - expected[k]).abs() <= 0.04, "{pooled:?} vs {expected:?}");
        }
    }

    #[test]
    fn profile_validation() {
        let p = SimProfile::default();
        assert!(matches!(generate_trace(&p, 300, 1, "s"), Err(SimError::DurationTooShort(300))));
        let mut bad = p.clone();
        bad.transition[2] = [0.5, 0.5, 0.5, 0.0];
        assert!(matches!(bad.validate(), Err(SimError::InvalidProfile(_))));
        let mut bad = p.clone();
        bad.drifting.click_rate = -1.0;
        assert!(bad.validate().is_err());
        let back = SimProfile::from_toml(&p.to_toml()).unwrap();
        assert_eq!(back, p);
        let partial = SimProfile::from_toml("session_jitter = 0.0\n").unwrap();
        assert_eq!(partial.session_jitter, 0.0);
        assert_eq!(partial.focused, p.focused);
        assert!(SimProfile::from_toml("nonsense = 1").is_err());
        SimProfile::calm().validate().unwrap();
        SimProfile::volatile().validate().unwrap();
    }

    #[test]
    fn truth_round_trip() {
        let truth = vec![(0, Focused), (30_000, Drifting), (60_000, Fatigued)];
        assert_eq!(parse_truth(&write_truth(&truth)).unwrap(), truth);
        assert_eq!(state_at(&truth, 29_999), Some(Focused));
        assert_eq!(state_at(&truth, 30_000), Some(Drifting));
        assert_eq!(state_at(&truth, 999_999), Some(Fatigued));
        assert!(parse_truth("{\"t\":5,\"state\":\"Focused\"}\n{\"t\":5,\"state\":\"Focused\"}").is_err());
    }

    #[test]
    fn labeler_recovers_generator_truth() {
        let p = SimProfile::default();
        let cfg = LabelRuleConfig::default();
        let (mut hits, mut total) = (0usize, 0usize);
        for i in 0..60 {
            let trace = generate_trace(&p, 7200, derive_seed(42, i), "s").unwrap();
            let labels = rule_samples(&trace.events, &cfg).unwrap();
            for (fv, label) in labels {
                total += 1;
                hits += (state_at(&trace.truth, fv.t_end_ms - WINDOW_MS) == Some(label)) as usize;
            }
        }
        let closure = hits as f64 / total as f64;
        assert!(closure >= 0.70, "closure {closure:.4}");
    }

    #[test]
    fn oulad_examples() {
        let header = OULAD_COLUMNS.join(",");
        let csv = format!("{header}\na,1.0,1.0,3,0.1,0.2\nb,1.1,0.9,4,0.2,0.1\nc,0.9,1.1,2,0.1,0.3\n");
        let out = oulad_adapt(&csv, &SessionRuleConfig::default()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.rejected.is_empty());
        // row a holds the median of every column
        assert_eq!(out.labels[0], Focused);

        let csv = format!("{header}\na,1.0,,3,0.1,0.2\nb,1.1,0.9,4,0.2,0.1\n");
        let out = oulad_adapt(&csv, &SessionRuleConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected[0].row, 1);
        assert!(out.rejected[0].reason.contains("duration_ratio"));

        let csv = "student_id,click_rate_norm\na,1\n";
        assert!(matches!(
            oulad_adapt(csv, &SessionRuleConfig::default()),
            Err(SimError::Schema(c)) if c == "duration_ratio"
        ));
        let csv = format!("{header}\na,1.0,1.0,-3,0.1,0.2\n");
        assert_eq!(oulad_adapt(&csv, &SessionRuleConfig::default()).unwrap().rejected.len(), 1);
    }

    #[test]
    fn session_rules() {
        let r = SessionRuleConfig::default();
        assert_eq!(r.label(&[0.0; 5]), Focused);
        assert_eq!(r.label(&[0.5, 1.5, 0.0, 0.0, -1.0]), Hyperfocused);
        assert_eq!(r.label(&[-1.5, -1.5, 0.0, 0.0, 2.0]), Fatigued);
        assert_eq!(r.label(&[0.0, 0.0, 0.0, 0.0, 1.5]), Drifting);
        assert_eq!(r.label(&[-0.8, 0.0, 1.5, 0.0, 0.0]), Drifting);
    }

    #[test]
    fn dysregulation_examples() {
        let zeros = vec![FeatureVector::zeros(0); 5];
        assert_eq!(dysregulation_score(&zeros).unwrap(), 0.0);
        let twos = vec![FeatureVector::new(0, [2.0; 10]); 3];
        assert_eq!(dysregulation_score(&twos).unwrap(), 2.0);
        let mixed = vec![FeatureVector::new(0, [-2.0; 10]), FeatureVector::zeros(1)];
        assert_eq!(dysregulation_score(&mixed).unwrap(), 1.0);
        assert!(matches!(dysregulation_score(&[]), Err(SimError::EmptyInput)));
        let one = vec![FeatureVector::zeros(0).with(Feature::Backtrack, 1e-9)];
        assert!(dysregulation_score(&one).unwrap() > 0.0);
    }

    #[test]
    fn cohort_labels_and_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = String::from("participant_id,group\n");
        for (i, (profile, group)) in [(SimProfile::volatile(), "adhd"), (SimProfile::calm(), "control")]
            .iter()
            .cycle()
            .take(6)
            .enumerate()
        {
            let id = format!("p{i}");
            let trace = generate_trace(profile, 900, i as u64, &id).unwrap();
            std::fs::write(dir.path().join(format!("{id}.jsonl")), trace.events_jsonl()).unwrap();
            labels.push_str(&format!("{id},{group}\n"));
        }
        let report = cohort_from_dir(dir.path(), &labels).unwrap();
        assert_eq!(report.scores.len(), 6);
        assert!(report.scores.iter().all(|s| s.score >= 0.0));
        assert!((0.0..=1.0).contains(&report.auc));
        assert!(parse_cohort_labels("participant_id,group\nx,other\n").is_err());
        assert!(parse_cohort_labels("id,group\nx,adhd\n").is_err());
        assert!(cohort_from_dir(dir.path(), "participant_id,group\nmissing,adhd\n").is_err());
    }
}
