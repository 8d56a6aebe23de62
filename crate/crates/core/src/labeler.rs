//! Rule-based attention-state labeler for unlabeled session logs.
//!
//! Rules are evaluated most-specific first: Hyperfocused (persistent
//! conjunction), Fatigued (conjunction), Drifting (disjunction), then
//! Focused as the fallback. Thresholds are in robust-z units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureVector};
use crate::signal::AttentionState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("label history is empty")]
    EmptyHistory,
    #[error("invalid labeler config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelRuleConfig {
    pub drift_idle: f64,
    pub drift_hidden: f64,
    pub drift_entropy: f64,
    /// Click deviation that must be undercut alongside `drift_entropy`.
    pub drift_entropy_click: f64,
    pub fatigue_click: f64,
    pub fatigue_latency: f64,
    pub hyper_idle: f64,
    pub hyper_focuschg: f64,
    pub hyper_click: f64,
    /// Consecutive qualifying windows needed for Hyperfocused.
    pub hyper_persistence: usize,
}

impl Default for LabelRuleConfig {
    fn default() -> Self {
        LabelRuleConfig {
            drift_idle: 1.0,
            drift_hidden: 1.0,
            drift_entropy: 1.0,
            drift_entropy_click: -0.5,
            fatigue_click: -1.0,
            fatigue_latency: 1.0,
            hyper_idle: -0.5,
            hyper_focuschg: -0.5,
            hyper_click: 0.0,
            hyper_persistence: 4,
        }
    }
}

impl LabelRuleConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if self.hyper_persistence < 1 {
            return Err(LabelError::InvalidConfig(
                "hyper_persistence must be at least 1".into(),
            ));
        }
        let thresholds = [
            self.drift_idle,
            self.drift_hidden,
            self.drift_entropy,
            self.drift_entropy_click,
            self.fatigue_click,
            self.fatigue_latency,
            self.hyper_idle,
            self.hyper_focuschg,
            self.hyper_click,
        ];
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(LabelError::InvalidConfig("thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, LabelError> {
        let cfg: LabelRuleConfig =
            toml::from_str(text).map_err(|e| LabelError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn hyper_pattern(&self, fv: &FeatureVector) -> bool {
        fv.get(Feature::ClickRate) >= self.hyper_click
            && fv.get(Feature::IdleFraction) <= self.hyper_idle
            && fv.get(Feature::FocusChange) <= self.hyper_focuschg
    }

    fn fatigue_pattern(&self, fv: &FeatureVector) -> bool {
        fv.get(Feature::ClickRate) < self.fatigue_click
            && fv.get(Feature::AnswerLatency) > self.fatigue_latency
    }

    fn drift_pattern(&self, fv: &FeatureVector) -> bool {
        fv.get(Feature::IdleFraction) > self.drift_idle
            || fv.get(Feature::TabHidden) > self.drift_hidden
            || (fv.get(Feature::MouseEntropy) > self.drift_entropy
                && fv.get(Feature::ClickRate) < self.drift_entropy_click)
    }

    fn classify(&self, fv: &FeatureVector, hyper_run: usize) -> AttentionState {
        if hyper_run >= self.hyper_persistence {
            AttentionState::Hyperfocused
        } else if self.fatigue_pattern(fv) {
            AttentionState::Fatigued
        } else if self.drift_pattern(fv) {
            AttentionState::Drifting
        } else {
            AttentionState::Focused
        }
    }
}

/// Labels the last window of `history`. Earlier windows only matter for the
/// Hyperfocused persistence requirement.
pub fn label_window(
    history: &[FeatureVector],
    cfg: &LabelRuleConfig,
) -> Result<AttentionState, LabelError> {
    let current = history.last().ok_or(LabelError::EmptyHistory)?;
    let run = history
        .iter()
        .rev()
        .take_while(|fv| cfg.hyper_pattern(fv))
        .count();
    Ok(cfg.classify(current, run))
}

/// Labels every window of one session in order.
pub fn label_stream(
    features: &[FeatureVector],
    cfg: &LabelRuleConfig,
) -> Vec<(FeatureVector, AttentionState)> {
    let mut run = 0usize;
    features
        .iter()
        .map(|fv| {
            run = if cfg.hyper_pattern(fv) { run + 1 } else { 0 };
            (fv.clone(), cfg.classify(fv, run))
        })
        .collect()
}
