//! Agreement between wizard decisions and the classifier running in shadow.
//!
//! Each `set_state` override in a session log is paired with the latest
//! classifier estimate logged before it.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{directive_set, EngineConfig, Stimulation};
use crate::forest::ForestModel;
use crate::service::{LogBody, LogRecord, ServiceError, Session};
use crate::signal::AttentionState;
use crate::stats::{match_rates, CompatMatrix, ConfusionMatrix4, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConcordError {
    #[error("log contains no set_state decision with a preceding estimate")]
    NoDecisions,
    #[error("invalid compatibility config: {0}")]
    Config(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// States whose neutral directive sets are identical count as compatible.
pub fn default_compat() -> CompatMatrix {
    let mut m = [[false; 4]; 4];
    for a in AttentionState::ALL {
        for b in AttentionState::ALL {
            m[a.index()][b.index()] =
                directive_set(a, Stimulation::Neutral) == directive_set(b, Stimulation::Neutral);
        }
    }
    m
}

/// Extra compatible pairs on top of the default relation, as
/// `(wizard state, classifier state)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompatConfig {
    pub symmetric: bool,
    pub pairs: Vec<[AttentionState; 2]>,
}

impl Default for CompatConfig {
    fn default() -> Self {
        CompatConfig {
            symmetric: true,
            pairs: Vec::new(),
        }
    }
}

impl CompatConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConcordError> {
        toml::from_str(text).map_err(|e| ConcordError::Config(e.to_string()))
    }

    pub fn matrix(&self) -> CompatMatrix {
        let mut m = default_compat();
        for [a, b] in &self.pairs {
            m[a.index()][b.index()] = true;
            if self.symmetric {
                m[b.index()][a.index()] = true;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPair {
    pub seq: u64,
    pub t: u64,
    pub wizard: AttentionState,
    pub shadow: AttentionState,
    pub shadow_t: u64,
}

/// Pairs every `set_state` override with the latest earlier estimate.
/// Returns the pairs and the number of decisions with no estimate before
/// them.
pub fn decision_pairs(records: &[LogRecord]) -> (Vec<DecisionPair>, usize) {
    let mut latest = None;
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for rec in records {
        match &rec.body {
            LogBody::Estimate(e) => latest = Some((e.t_ms, e.state)),
            LogBody::Override {
                t,
                state: Some(wizard),
                ..
            } => match latest {
                Some((shadow_t, shadow)) => pairs.push(DecisionPair {
                    seq: rec.seq,
                    t: *t,
                    wizard: *wizard,
                    shadow,
                    shadow_t,
                }),
                None => skipped += 1,
            },
            _ => {}
        }
    }
    (pairs, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordReport {
    pub n: usize,
    pub skipped: usize,
    pub exact: f64,
    pub compatible: f64,
    /// Absent when chance agreement is 1 and κ is undefined.
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_error: Option<String>,
    /// Rows are wizard decisions, columns the shadow estimates.
    pub confusion: ConfusionMatrix4,
    pub compat: CompatMatrix,
    /// "logged" or "replayed".
    pub estimates: String,
}

impl ConcordReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let kappa = self
            .kappa
            .map_or_else(|| "undefined".to_string(), |k| format!("{k:.4}"));
        writeln!(out, "decisions          {:>8}", self.n).unwrap();
        writeln!(out, "skipped            {:>8}", self.skipped).unwrap();
        writeln!(out, "exact match        {:>8.4}", self.exact).unwrap();
        writeln!(out, "compatible match   {:>8.4}", self.compatible).unwrap();
        writeln!(out, "cohen kappa        {kappa:>8}").unwrap();
        writeln!(out, "estimates          {:>8}", self.estimates).unwrap();
        writeln!(out).unwrap();
        write!(out, "{:<14}", "wizard\\shadow").unwrap();
        for s in AttentionState::ALL {
            write!(out, "{:>14}", s.as_str()).unwrap();
        }
        writeln!(out).unwrap();
        for a in AttentionState::ALL {
            write!(out, "{:<14}", a.as_str()).unwrap();
            for b in AttentionState::ALL {
                write!(out, "{:>14}", self.confusion.0[a.index()][b.index()]).unwrap();
            }
            writeln!(out).unwrap();
        }
        out
    }
}

fn report(records: &[LogRecord], compat: &CompatMatrix, source: &str) -> Result<ConcordReport, ConcordError> {
    let (pairs, skipped) = decision_pairs(records);
    if pairs.is_empty() {
        return Err(ConcordError::NoDecisions);
    }
    let wizard: Vec<AttentionState> = pairs.iter().map(|p| p.wizard).collect();
    let shadow: Vec<AttentionState> = pairs.iter().map(|p| p.shadow).collect();
    let rates = match_rates(&wizard, &shadow, compat)?;
    let confusion = ConfusionMatrix4::from_pairs(&wizard, &shadow)?;
    let (kappa, kappa_error) = match confusion.kappa() {
        Ok(k) => (Some(k), None),
        Err(StatsError::DegenerateAgreement) => (None, Some(StatsError::DegenerateAgreement.to_string())),
        Err(e) => return Err(e.into()),
    };
    Ok(ConcordReport {
        n: pairs.len(),
        skipped,
        exact: rates.exact,
        compatible: rates.compatible,
        kappa,
        kappa_error,
        confusion,
        compat: *compat,
        estimates: source.to_string(),
    })
}

/// Concordance against the estimates recorded in the log.
pub fn concordance(records: &[LogRecord], compat: &CompatMatrix) -> Result<ConcordReport, ConcordError> {
    report(records, compat, "logged")
}

/// Concordance against estimates recomputed by replaying the log's events
/// and overrides through `model`.
pub fn concordance_replayed(
    records: &[LogRecord],
    model: Arc<ForestModel>,
    engine: EngineConfig,
    compat: &CompatMatrix,
) -> Result<ConcordReport, ConcordError> {
    let session = Session::replay_log(records, model, engine)?;
    report(session.log(), compat, "replayed")
}
