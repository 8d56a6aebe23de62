use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attnguard_core::concord::{concordance, concordance_replayed, CompatConfig, ConcordReport};
use attnguard_core::features::{session_features, write_features};
use attnguard_core::forest::{
    cross_validate, evaluate, feature_importances, predict_proba, train, EvalReport, ForestConfig,
    ForestModel, GroupedSample, Metrics,
};
use attnguard_core::labeler::label_stream;
use attnguard_core::service::{
    parse_log, ServiceConfig, Session, SessionManager, SessionMode, DEFAULT_MODEL_ID,
};
use attnguard_core::signal::{parse_trace, AttentionState, BehavioralEvent};
use attnguard_core::sim::{
    cohort_from_dir, derive_seed, generate_trace, oulad_adapt, parse_truth, rule_samples,
    session_name, synthetic_cohort, truth_samples, CohortReport, OuladOutput, SimProfile,
};
use attnguard_core::stats::{batch_from_csv, Alternative, BatchReport};
use serde::Serialize;

use crate::config::FileConfig;
use crate::error::CliError;
use crate::io::{emit, read, sidecar, trace_files, write, write_json};
use crate::{AltArg, Cli, Command, Global};

/// Provenance embedded in, or written beside, every artifact.
#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    global: &'a Global,
    /// Seed actually used; differs from `global.seed` when generated.
    seed: Option<u64>,
    config: &'a FileConfig,
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: FileConfig,
    seed: Option<u64>,
}

impl Ctx<'_> {
    fn meta(&self) -> Meta<'_> {
        Meta {
            tool: "attnguard",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.cli.command,
            global: &self.cli.global,
            seed: self.seed,
            config: &self.cfg,
        }
    }

    fn meta_value(&self) -> serde_json::Value {
        serde_json::to_value(self.meta()).expect("meta serializes")
    }

    /// The explicit seed, or a fresh one that is recorded in the metadata.
    fn require_seed(&mut self) -> u64 {
        *self.seed.get_or_insert_with(|| {
            let s: u64 = rand::random();
            eprintln!("attnguard: no --seed given, using {s}");
            s
        })
    }

    fn output(&self, specific: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
        specific
            .clone()
            .or_else(|| self.cli.global.out.clone())
            .ok_or_else(|| CliError::Usage(format!("{flag} (or --out) is required")))
    }

    fn optional_output(&self, specific: &Option<PathBuf>) -> Option<PathBuf> {
        specific.clone().or_else(|| self.cli.global.out.clone())
    }
}

#[derive(Serialize)]
struct WithMeta<'a, T: Serialize> {
    meta: serde_json::Value,
    #[serde(flatten)]
    body: &'a T,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = FileConfig::load(cli.global.config.as_deref())?;
    let mut ctx = Ctx {
        cli,
        cfg,
        seed: cli.global.seed,
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&mut ctx, a),
        Command::Train(a) => train_cmd(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
        Command::Replay(a) => replay(&mut ctx, a),
        Command::Concord(a) => concord(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::Cohort(a) => cohort(&mut ctx, a),
        Command::Label(a) => label(&ctx, a),
        Command::Features(a) => features(&ctx, a),
    }
}

fn simulate(ctx: &mut Ctx, a: &crate::SimulateArgs) -> Result<(), CliError> {
    let seed = ctx.require_seed();
    let out = ctx.output(&None, "--out")?;
    let profile = match &a.profile {
        Some(p) => SimProfile::from_toml(&read(p)?)?,
        None => SimProfile::default(),
    };
    if a.sessions == 0 {
        return Err(CliError::Usage("--sessions must be at least 1".into()));
    }
    if a.sessions == 1 {
        let sid = out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| session_name(0));
        let trace = generate_trace(&profile, a.duration, seed, &sid)?;
        write(&out, &trace.events_jsonl())?;
        write(&sidecar(&out, "truth.jsonl"), &trace.truth_jsonl())?;
        write_json(&sidecar(&out, "meta.json"), &ctx.meta())?;
        emit(&format!("{}: {} events, {} steps\n", out.display(), trace.events.len(), trace.truth.len()));
    } else {
        for i in 0..a.sessions {
            let sid = session_name(i);
            let trace = generate_trace(&profile, a.duration, derive_seed(seed, i), &sid)?;
            let path = out.join(format!("{sid}.jsonl"));
            write(&path, &trace.events_jsonl())?;
            write(&sidecar(&path, "truth.jsonl"), &trace.truth_jsonl())?;
        }
        write_json(&out.join("meta.json"), &ctx.meta())?;
        emit(&format!("{}: {} sessions\n", out.display(), a.sessions));
    }
    Ok(())
}

#[derive(Debug, Default, Clone, Serialize)]
struct LabelSources {
    truth: usize,
    rules: usize,
}

/// Windows of every trace in `dir`, grouped by file stem. Ground truth comes
/// from `*.truth.jsonl` sidecars, otherwise from the rule labeler.
fn load_dataset(dir: &Path, cfg: &FileConfig) -> Result<(Vec<GroupedSample>, LabelSources), CliError> {
    let mut samples = Vec::new();
    let mut sources = LabelSources::default();
    for path in trace_files(dir)? {
        let group = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let events = parse_trace(&read(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let truth_path = sidecar(&path, "truth.jsonl");
        let labelled = if truth_path.exists() {
            sources.truth += 1;
            let truth = parse_truth(&read(&truth_path)?)?;
            truth_samples(&events, &truth)
        } else {
            sources.rules += 1;
            rule_samples(&events, &cfg.labeler)
        }
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        samples.extend(labelled.into_iter().map(|(features, label)| GroupedSample {
            group: group.clone(),
            features,
            label,
        }));
    }
    Ok((samples, sources))
}

fn forest_cfg(base: &ForestConfig, trees: Option<usize>) -> Result<ForestConfig, CliError> {
    let mut cfg = base.clone();
    if let Some(n) = trees {
        cfg.n_trees = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<ForestModel, CliError> {
    ForestModel::from_json(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn train_cmd(ctx: &mut Ctx, a: &crate::TrainArgs) -> Result<(), CliError> {
    let seed = ctx.require_seed();
    let out = ctx.output(&a.model_out, "--model-out")?;
    let cfg = forest_cfg(&ctx.cfg.forest, a.trees)?;
    let (samples, sources) = load_dataset(&a.data, &ctx.cfg)?;
    let data: Vec<_> = samples.iter().map(|s| (s.features.clone(), s.label)).collect();
    let mut model = train(&data, &cfg, seed)?;
    model.meta = Some(ctx.meta_value());
    write(&out, &model.to_json())?;
    emit(&format!(
        "{}: {} trees on {} windows from {} sessions ({} truth, {} rule-labelled)\n",
        out.display(),
        cfg.n_trees,
        data.len(),
        sources.truth + sources.rules,
        sources.truth,
        sources.rules
    ));
    Ok(())
}

#[derive(Serialize)]
struct ModelScore {
    #[serde(flatten)]
    metrics: Metrics,
    feature_importances: [f64; attnguard_core::features::FEATURE_COUNT],
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    cv: EvalReport,
    label_sources: LabelSources,
    /// The `--model` applied directly to every window.
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelScore>,
}

fn score_model(model: &ForestModel, samples: &[GroupedSample]) -> Result<ModelScore, CliError> {
    let mut truth = Vec::with_capacity(samples.len());
    let mut predicted = Vec::with_capacity(samples.len());
    let mut probs = Vec::with_capacity(samples.len());
    for s in samples {
        let est = predict_proba(model, &s.features)?;
        truth.push(s.label);
        predicted.push(est.state);
        probs.push(est.probs);
    }
    Ok(ModelScore {
        metrics: evaluate(&truth, &predicted, &probs)?,
        feature_importances: feature_importances(model),
    })
}

fn eval(ctx: &mut Ctx, a: &crate::EvalArgs) -> Result<(), CliError> {
    let seed = ctx.require_seed();
    let model = a.model.as_deref().map(load_model).transpose()?;
    let base = model.as_ref().map_or(&ctx.cfg.forest, |m| &m.cfg);
    let cfg = forest_cfg(base, a.trees)?;
    let (samples, label_sources) = load_dataset(&a.data, &ctx.cfg)?;
    let cv = cross_validate(&samples, a.folds, &cfg, seed)?;
    let model = model.map(|m| score_model(&m, &samples)).transpose()?;

    emit(&cv.to_table());
    if let Some(m) = &model {
        emit("\n");
        emit(&format!("{:<28}{:>10.4}\n", "model accuracy", m.metrics.accuracy));
        emit(&format!("{:<28}{:>10.4}\n", "model macro_f1", m.metrics.macro_f1));
    }
    let output = EvalOutput {
        cv,
        label_sources,
        model,
    };
    if let Some(path) = ctx.optional_output(&a.report) {
        write_json(&path, &WithMeta { meta: ctx.meta_value(), body: &output })?;
    }
    Ok(())
}

fn replay(ctx: &mut Ctx, a: &crate::ReplayArgs) -> Result<(), CliError> {
    let model = Arc::new(load_model(&a.model)?);
    let mut engine = ctx.cfg.engine.clone();
    if let Some(s) = ctx.seed {
        engine.seed = s;
    } else {
        ctx.seed = Some(engine.seed);
    }
    let events: Vec<BehavioralEvent> =
        parse_trace(&read(&a.trace)?).map_err(|e| CliError::Data(format!("{}: {e}", a.trace.display())))?;
    let sid = a.trace.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let model_id = a.model.file_stem().map(|s| s.to_string_lossy().into_owned());
    let mut session = Session::new(sid, SessionMode::Replay, model_id, model, engine, 0)?;
    let report = session.ingest(events)?;
    session.end();

    let mut text = String::new();
    for d in session.directives() {
        text.push_str(&serde_json::to_string(d).expect("directive serializes"));
        text.push('\n');
    }
    match ctx.optional_output(&a.directives_out) {
        Some(path) => {
            write(&path, &text)?;
            write_json(&sidecar(&path, "meta.json"), &ctx.meta())?;
        }
        None => emit(&text),
    }
    if let Some(path) = &a.log_out {
        write(path, &session.export_log()?)?;
    }
    eprintln!(
        "{} events accepted, {} late, {} rejected; {} estimates, {} directives",
        report.accepted,
        report.dropped_late,
        report.rejected.len(),
        session.estimates().len(),
        session.directives().len()
    );
    Ok(())
}

fn concord(ctx: &Ctx, a: &crate::ConcordArgs) -> Result<(), CliError> {
    let records = parse_log(&read(&a.log)?).map_err(|e| CliError::Data(format!("{}: {e}", a.log.display())))?;
    let compat = match &a.compat {
        Some(p) => CompatConfig::from_toml(&read(p)?)?,
        None => CompatConfig::default(),
    }
    .matrix();
    let report: ConcordReport = match &a.model {
        Some(p) => concordance_replayed(&records, Arc::new(load_model(p)?), ctx.cfg.engine.clone(), &compat)?,
        None => concordance(&records, &compat)?,
    };
    emit(&report.to_table());
    if let Some(path) = ctx.optional_output(&a.report) {
        write_json(&path, &WithMeta { meta: ctx.meta_value(), body: &report })?;
    }
    Ok(())
}

fn serve(ctx: &Ctx, a: &crate::ServeArgs) -> Result<(), CliError> {
    let manager = SessionManager::new(ServiceConfig {
        engine: ctx.cfg.engine.clone(),
        retention_ms: ctx.cfg.service.retention_ms,
    });
    manager.register_model(DEFAULT_MODEL_ID, load_model(&a.model)?)?;
    if let Some(dir) = &a.traces {
        for path in trace_files(dir)? {
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let events =
                parse_trace(&read(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            manager.register_trace(id, events);
        }
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad --host/--port: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    eprintln!("attnguard: listening on http://{addr}");
    let state = attnguard_server::AppState::new(Arc::new(manager));
    runtime
        .block_on(attnguard_server::serve(state, addr))
        .map_err(|e| CliError::Internal(format!("server: {e}")))
}

fn stats(ctx: &Ctx, a: &crate::StatsArgs) -> Result<(), CliError> {
    let alt = match a.alternative {
        AltArg::TwoSided => Alternative::TwoSided,
        AltArg::Greater => Alternative::Greater,
        AltArg::Less => Alternative::Less,
    };
    let report: BatchReport = batch_from_csv(&read(&a.csv)?, alt)?;
    let wrapped = WithMeta { meta: ctx.meta_value(), body: &report };
    emit(&format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")));
    if let Some(path) = ctx.optional_output(&a.report) {
        write_json(&path, &wrapped)?;
    }
    Ok(())
}

fn cohort_table(r: &CohortReport) -> String {
    let mut out = String::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in &r.scores {
        *counts.entry(format!("{:?}", s.group).to_lowercase()).or_default() += 1;
    }
    for (g, n) in &counts {
        let _ = writeln!(out, "{:<20}{:>12}", format!("n {g}"), n);
    }
    let mw = &r.mann_whitney;
    let _ = writeln!(out, "{:<20}{:>12.4}", "mann-whitney U", mw.statistic);
    let _ = writeln!(out, "{:<20}{:>12.3e}", "p (one-sided)", mw.p_value);
    let _ = writeln!(out, "{:<20}{:>12.4}", "auc", r.auc);
    out
}

fn cohort(ctx: &mut Ctx, a: &crate::CohortArgs) -> Result<(), CliError> {
    let report = match (&a.dir, &a.labels, a.synthetic) {
        (Some(dir), Some(labels), _) => cohort_from_dir(dir, &read(labels)?)?,
        (None, _, Some(n)) => {
            let seed = ctx.require_seed();
            synthetic_cohort(n, a.duration, seed)?
        }
        _ => return Err(CliError::Usage("give --dir with --labels, or --synthetic".into())),
    };
    emit(&cohort_table(&report));
    if let Some(path) = ctx.optional_output(&a.report) {
        write_json(&path, &WithMeta { meta: ctx.meta_value(), body: &report })?;
    }
    Ok(())
}

fn label(ctx: &Ctx, a: &crate::LabelArgs) -> Result<(), CliError> {
    let output: OuladOutput = oulad_adapt(&read(&a.csv)?, &ctx.cfg.oulad)?;
    emit(&format!("{:<20}{:>14}\n", "student_id", "label"));
    for (r, l) in output.records.iter().zip(&output.labels) {
        emit(&format!("{:<20}{:>14}\n", r.student_id, l.as_str()));
    }
    for r in &output.rejected {
        eprintln!("row {} rejected: {}", r.row, r.reason);
    }
    if let Some(path) = ctx.optional_output(&a.report) {
        write_json(&path, &WithMeta { meta: ctx.meta_value(), body: &output })?;
    }
    Ok(())
}

fn features(ctx: &Ctx, a: &crate::FeaturesArgs) -> Result<(), CliError> {
    let events =
        parse_trace(&read(&a.trace)?).map_err(|e| CliError::Data(format!("{}: {e}", a.trace.display())))?;
    let sf = session_features(&events)?;
    let mut text = write_features(&sf.features);
    if a.labels {
        let labels: Vec<AttentionState> =
            label_stream(&sf.features, &ctx.cfg.labeler).into_iter().map(|(_, l)| l).collect();
        let mut labelled = String::new();
        for (line, l) in text.lines().zip(labels) {
            let mut v: serde_json::Value = serde_json::from_str(line).expect("own output parses");
            v["label"] = serde_json::json!(l);
            labelled.push_str(&v.to_string());
            labelled.push('\n');
        }
        text = labelled;
    }
    match ctx.optional_output(&None) {
        Some(path) => write(&path, &text)?,
        None => emit(&text),
    }
    eprintln!("{} windows", sf.features.len());
    Ok(())
}
