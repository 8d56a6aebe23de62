//! Adaptation engine: turns state estimates into absolute, reversible UI
//! directives.
//!
//! A committed state changes only after `min_consecutive` identical
//! estimates and `dwell_ms` since the previous change. Wizard overrides
//! commit immediately and pin the state until the next override.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureVector};
use crate::signal::{AttentionState, EstimateSource, StateEstimate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("journey needs at least one section")]
    NoSections,
    #[error("position {position} outside {len} sections")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("invalid override command: {0}")]
    InvalidCommand(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Chunking,
    Verification,
    Scaffolding,
    Feedback,
    Navigation,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Chunking,
        Pattern::Verification,
        Pattern::Scaffolding,
        Pattern::Feedback,
        Pattern::Navigation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Chunking => "chunking",
            Pattern::Verification => "verification",
            Pattern::Scaffolding => "scaffolding",
            Pattern::Feedback => "feedback",
            Pattern::Navigation => "navigation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Micro,
    Standard,
    Extended,
    Review,
    Immediate,
    Lightweight,
    Deferred,
    Consolidation,
    ReduceStimulation,
    IncreaseStimulation,
    Neutral,
    RsdSafeStandard,
    RsdSafeReward,
    LandmarksOn,
}

impl Action {
    pub fn pattern(self) -> Pattern {
        use Action::*;
        match self {
            Micro | Standard | Extended | Review => Pattern::Chunking,
            Immediate | Lightweight | Deferred | Consolidation => Pattern::Verification,
            ReduceStimulation | IncreaseStimulation | Neutral => Pattern::Scaffolding,
            RsdSafeStandard | RsdSafeReward => Pattern::Feedback,
            LandmarksOn => Pattern::Navigation,
        }
    }

    pub fn as_str(self) -> &'static str {
        use Action::*;
        match self {
            Micro => "micro",
            Standard => "standard",
            Extended => "extended",
            Review => "review",
            Immediate => "immediate",
            Lightweight => "lightweight",
            Deferred => "deferred",
            Consolidation => "consolidation",
            ReduceStimulation => "reduce_stimulation",
            IncreaseStimulation => "increase_stimulation",
            Neutral => "neutral",
            RsdSafeStandard => "rsd_safe_standard",
            RsdSafeReward => "rsd_safe_reward",
            LandmarksOn => "landmarks_on",
        }
    }

    fn describe(self) -> &'static str {
        use Action::*;
        match self {
            Micro => "micro-chunks",
            Standard => "standard paragraphs",
            Extended => "extended sections",
            Review => "review of mastered material",
            Immediate => "immediate verification",
            Lightweight => "lightweight confirmations",
            Deferred => "verification deferred to the next breakpoint",
            Consolidation => "consolidation without new checks",
            ReduceStimulation => "reduced visual complexity",
            IncreaseStimulation => "novelty and curiosity hooks",
            Neutral => "neutral scaffolding",
            RsdSafeStandard => "neutral, constructive feedback",
            RsdSafeReward => "neutral feedback with a micro-reward",
            LandmarksOn => "journey landmarks",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One absolute UI setting. Every directive can be undone by applying the
/// previous setting of the same pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationDirective {
    #[serde(rename = "t")]
    pub t_ms: u64,
    pub pattern: Pattern,
    pub action: Action,
    pub rationale: String,
    pub source: EstimateSource,
}

impl AdaptationDirective {
    pub fn reversible(&self) -> bool {
        true
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("directive serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stimulation {
    Overstimulated,
    Understimulated,
    Neutral,
}

impl Stimulation {
    pub fn action(self) -> Action {
        match self {
            Stimulation::Overstimulated => Action::ReduceStimulation,
            Stimulation::Understimulated => Action::IncreaseStimulation,
            Stimulation::Neutral => Action::Neutral,
        }
    }
}

pub fn classify_stimulation(fv: &FeatureVector) -> Stimulation {
    let entropy = fv.get(Feature::MouseEntropy);
    if fv.get(Feature::ScrollReversal) > 1.0 || entropy > 1.0 {
        Stimulation::Overstimulated
    } else if fv.get(Feature::IdleFraction) > 1.0 && entropy <= 0.0 {
        Stimulation::Understimulated
    } else {
        Stimulation::Neutral
    }
}

/// The five actions for a committed state, in pattern order.
pub fn directive_set(state: AttentionState, stimulation: Stimulation) -> [Action; 5] {
    use Action::*;
    match state {
        AttentionState::Focused => [Standard, Lightweight, Neutral, RsdSafeStandard, LandmarksOn],
        AttentionState::Drifting => [
            Micro,
            Immediate,
            stimulation.action(),
            RsdSafeStandard,
            LandmarksOn,
        ],
        AttentionState::Hyperfocused => [Extended, Deferred, Neutral, RsdSafeStandard, LandmarksOn],
        AttentionState::Fatigued => [Review, Consolidation, Neutral, RsdSafeStandard, LandmarksOn],
    }
}

/// Current UI parameterization as the reader would hold it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiParameters {
    pub chunking: Action,
    pub verification: Action,
    pub scaffolding: Action,
    pub feedback: Action,
    pub navigation: Action,
}

impl Default for UiParameters {
    fn default() -> Self {
        let [chunking, verification, scaffolding, feedback, navigation] =
            directive_set(AttentionState::Focused, Stimulation::Neutral);
        UiParameters {
            chunking,
            verification,
            scaffolding,
            feedback,
            navigation,
        }
    }
}

impl UiParameters {
    pub fn apply(&mut self, d: &AdaptationDirective) {
        let slot = match d.pattern {
            Pattern::Chunking => &mut self.chunking,
            Pattern::Verification => &mut self.verification,
            Pattern::Scaffolding => &mut self.scaffolding,
            Pattern::Feedback => &mut self.feedback,
            Pattern::Navigation => &mut self.navigation,
        };
        *slot = d.action;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverrideCmd {
    SetState(AttentionState),
    Pause,
    Resume,
    Disable,
    Enable,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireCmd {
    cmd: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<AttentionState>,
}

impl OverrideCmd {
    pub fn name(self) -> &'static str {
        match self {
            OverrideCmd::SetState(_) => "set_state",
            OverrideCmd::Pause => "pause",
            OverrideCmd::Resume => "resume",
            OverrideCmd::Disable => "disable",
            OverrideCmd::Enable => "enable",
        }
    }

    pub fn state(self) -> Option<AttentionState> {
        match self {
            OverrideCmd::SetState(s) => Some(s),
            _ => None,
        }
    }

    pub fn parse(cmd: &str, state: Option<AttentionState>) -> Result<Self, EngineError> {
        let parsed = match (cmd, state) {
            ("set_state", Some(s)) => OverrideCmd::SetState(s),
            ("set_state", None) => {
                return Err(EngineError::InvalidCommand("set_state requires a state".into()))
            }
            (_, Some(_)) => {
                return Err(EngineError::InvalidCommand(format!("{cmd} takes no state")))
            }
            ("pause", None) => OverrideCmd::Pause,
            ("resume", None) => OverrideCmd::Resume,
            ("disable", None) => OverrideCmd::Disable,
            ("enable", None) => OverrideCmd::Enable,
            _ => return Err(EngineError::InvalidCommand(format!("unknown command {cmd:?}"))),
        };
        Ok(parsed)
    }
}

impl Serialize for OverrideCmd {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WireCmd {
            cmd: self.name().to_string(),
            state: self.state(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OverrideCmd {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = WireCmd::deserialize(d)?;
        OverrideCmd::parse(&w.cmd, w.state).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub min_consecutive: u32,
    pub dwell_ms: u64,
    pub reward_probability: f64,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            min_consecutive: 2,
            dwell_ms: 60_000,
            reward_probability: 1.0 / 3.0,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.min_consecutive == 0 {
            return Err(EngineError::InvalidConfig("min_consecutive must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reward_probability) {
            return Err(EngineError::InvalidConfig("reward_probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdaptationEngine {
    cfg: EngineConfig,
    committed: AttentionState,
    candidate: Option<AttentionState>,
    consecutive: u32,
    last_change_ms: u64,
    last_estimate_ms: Option<u64>,
    paused: bool,
    disabled: bool,
    override_state: Option<AttentionState>,
    stimulation: Stimulation,
    current: Vec<AdaptationDirective>,
    reward_rng: ChaCha8Rng,
}

impl AdaptationEngine {
    /// Starts committed to Focused with the dwell clock at `start_ms`.
    pub fn new(cfg: EngineConfig, start_ms: u64) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(AdaptationEngine {
            reward_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            committed: AttentionState::Focused,
            candidate: None,
            consecutive: 0,
            last_change_ms: start_ms,
            last_estimate_ms: None,
            paused: false,
            disabled: false,
            override_state: None,
            stimulation: Stimulation::Neutral,
            current: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn committed(&self) -> AttentionState {
        self.committed
    }

    pub fn candidate(&self) -> Option<(AttentionState, u32)> {
        self.candidate.map(|c| (c, self.consecutive))
    }

    pub fn last_change_ms(&self) -> u64 {
        self.last_change_ms
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn disabled(&self) -> bool {
        self.disabled
    }

    pub fn suppressed(&self) -> bool {
        self.paused || self.disabled
    }

    pub fn override_state(&self) -> Option<AttentionState> {
        self.override_state
    }

    pub fn stimulation(&self) -> Stimulation {
        self.stimulation
    }

    /// The directive set of the committed state as last produced, whether or
    /// not it was emitted.
    pub fn current_directives(&self) -> &[AdaptationDirective] {
        &self.current
    }

    /// Records the stimulation direction of a fresh window, used when a
    /// Drifting set is built without its own feature vector.
    pub fn note_features(&mut self, fv: &FeatureVector) {
        self.stimulation = classify_stimulation(fv);
    }

    /// Feeds one estimate. Returns the directives to emit, empty unless the
    /// committed state changed and emission is not suppressed. Estimates not
    /// newer than the previous one are ignored.
    pub fn decide(
        &mut self,
        est: &StateEstimate,
        fv: Option<&FeatureVector>,
    ) -> Vec<AdaptationDirective> {
        if self.last_estimate_ms.is_some_and(|t| est.t_ms <= t) {
            return Vec::new();
        }
        self.last_estimate_ms = Some(est.t_ms);
        if let Some(fv) = fv {
            self.note_features(fv);
        }
        if self.candidate == Some(est.state) {
            self.consecutive = self.consecutive.saturating_add(1);
        } else {
            self.candidate = Some(est.state);
            self.consecutive = 1;
        }
        let ready = est.state != self.committed
            && self.consecutive >= self.cfg.min_consecutive
            && est.t_ms.saturating_sub(self.last_change_ms) >= self.cfg.dwell_ms;
        if !ready || self.override_state.is_some() {
            return Vec::new();
        }
        self.commit(est.state, est.t_ms, est.source, &signal_summary(est));
        self.emitted()
    }

    pub fn apply_override(&mut self, cmd: OverrideCmd, t_ms: u64) -> Vec<AdaptationDirective> {
        let was_suppressed = self.suppressed();
        match cmd {
            OverrideCmd::SetState(s) => {
                self.override_state = Some(s);
                self.candidate = None;
                self.consecutive = 0;
                self.commit(s, t_ms, EstimateSource::Wizard, "set by wizard");
                return self.emitted();
            }
            OverrideCmd::Pause => self.paused = true,
            OverrideCmd::Disable => self.disabled = true,
            OverrideCmd::Resume => self.paused = false,
            OverrideCmd::Enable => self.disabled = false,
        }
        if was_suppressed && !self.suppressed() && !self.current.is_empty() {
            // settings committed while suppressed were never sent
            let mut out = self.current.clone();
            for d in &mut out {
                d.t_ms = t_ms;
            }
            return out;
        }
        Vec::new()
    }

    /// Variable-ratio reward decision for one successful verification.
    pub fn reward_draw(&mut self) -> bool {
        self.reward_rng.random_bool(self.cfg.reward_probability)
    }

    fn commit(&mut self, state: AttentionState, t_ms: u64, source: EstimateSource, why: &str) {
        self.committed = state;
        self.last_change_ms = t_ms;
        let stim = if state == AttentionState::Drifting {
            self.stimulation
        } else {
            Stimulation::Neutral
        };
        self.current = directive_set(state, stim)
            .into_iter()
            .map(|action| AdaptationDirective {
                t_ms,
                pattern: action.pattern(),
                action,
                rationale: format!("{state} ({why}): {}", action.describe()),
                source,
            })
            .collect();
    }

    fn emitted(&self) -> Vec<AdaptationDirective> {
        if self.suppressed() {
            Vec::new()
        } else {
            self.current.clone()
        }
    }
}

fn signal_summary(est: &StateEstimate) -> String {
    if est.attributions.is_empty() {
        return "no dominant signal".to_string();
    }
    est.attributions
        .iter()
        .map(|a| format!("{} {:+.2}", a.feature, a.deviation))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerResult {
    Correct,
    Incorrect,
}

/// Colour tokens the feedback renderer may use. None of them signals error.
pub const NEUTRAL_PALETTE: [&str; 4] = ["ink-slate", "paper-warm", "accent-sage", "accent-sky"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressDisplay {
    /// Fraction of the journey already covered.
    pub distance_traveled: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSpec {
    pub palette: Vec<String>,
    pub message_template: String,
    pub progress_display: ProgressDisplay,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<bool>,
}

/// Builds feedback for an answer. Progress is clamped into [0, 1].
pub fn feedback_render(result: AnswerResult, progress: f64, rewarded: bool) -> FeedbackSpec {
    let progress = if progress.is_nan() { 0.0 } else { progress.clamp(0.0, 1.0) };
    let template = match result {
        AnswerResult::Correct => "affirm_progress",
        AnswerResult::Incorrect => "constructive_retry",
    };
    FeedbackSpec {
        palette: NEUTRAL_PALETTE.iter().map(|s| s.to_string()).collect(),
        message_template: template.to_string(),
        progress_display: ProgressDisplay {
            distance_traveled: progress,
            text: format!("You've covered {:.0}% of the journey", progress * 100.0),
        },
        reward: (result == AnswerResult::Correct && rewarded).then_some(true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkStatus {
    Visited,
    Current,
    Ahead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub index: usize,
    pub label: String,
    pub status: LandmarkStatus,
}

/// Spatial progress through content. Carries no time fields by design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JourneySpec {
    pub landmarks: Vec<Landmark>,
    pub position: usize,
}

pub fn landmark_map<S: AsRef<str>>(sections: &[S], position: usize) -> Result<JourneySpec, EngineError> {
    if sections.is_empty() {
        return Err(EngineError::NoSections);
    }
    if position >= sections.len() {
        return Err(EngineError::PositionOutOfRange {
            position,
            len: sections.len(),
        });
    }
    let landmarks = sections
        .iter()
        .enumerate()
        .map(|(index, label)| Landmark {
            index,
            label: label.as_ref().to_string(),
            status: match index.cmp(&position) {
                std::cmp::Ordering::Less => LandmarkStatus::Visited,
                std::cmp::Ordering::Equal => LandmarkStatus::Current,
                std::cmp::Ordering::Greater => LandmarkStatus::Ahead,
            },
        })
        .collect();
    Ok(JourneySpec { landmarks, position })
}
