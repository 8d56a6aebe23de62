//! Attention-state detection from privacy-preserving interaction streams.
//!
//! The pipeline runs in four stages: [`signal`] events are aggregated into
//! 30-second windows and robust-z [`features`] against a personal baseline;
//! a decision [`forest`] (trained on [`labeler`] or simulator labels)
//! classifies each window into one of four attention states; the
//! [`engine`] turns committed states into reversible UI directives. The
//! [`service`] module wires these into replayable sessions. [`stats`] and
//! [`concord`] hold the evaluation toolkit, and [`sim`] generates seeded
//! synthetic sessions with ground truth.

pub mod features;
pub mod labeler;
pub mod engine;
pub mod forest;
pub mod stats;
pub mod signal;
pub mod sim;
pub mod service;
pub mod concord;

pub use features::{
    calibrate, featurize, mouse_entropy, sliding_windows, Feature, FeatureError, FeatureVector,
    PersonalBaseline, SignalWindow,
};
pub use signal::{
    parse_event, parse_trace, AttentionState, BehavioralEvent, EstimateSource, EventKind,
    ParseError, Payload, StateEstimate,
};
