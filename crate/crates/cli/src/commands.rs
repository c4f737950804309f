use std::path::Path;

use anyhow::{Context, Result};
use obshte::dgp::{sample_units, simulate_covariates, simulate_experiment, simulate_panel};
use obshte::expanalysis::{
    fit_monotone_map, interaction_regression, pooled_effect, select_targets, stratified_effects, MonotoneMap,
    OutcomeForm, RegressionFit, UnitScore,
};
use obshte::learner::{build_examples, make_labels, train, GbdtModel, TrainingLog};
use obshte::panel::fit_all;
use obshte::rankcheck::{rank_preservation_report, PairSampling, RankReport};
use obshte::{io, Error};
use serde::{Deserialize, Serialize};

use crate::config::{Artifact, PipelineConfig, RunEcho};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Step {
    Simulate,
    Fit,
    Label,
    Train,
    Score,
    Analyze,
    Target,
    Pipeline,
    Report,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::Simulate => "simulate",
            Step::Fit => "fit",
            Step::Label => "label",
            Step::Train => "train",
            Step::Score => "score",
            Step::Analyze => "analyze",
            Step::Target => "target",
            Step::Pipeline => "pipeline",
            Step::Report => "report",
        }
    }
}

/// A JSON artifact with the run configuration alongside its payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Echoed<T> {
    pub run: RunEcho,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub n_records: usize,
    pub n_treated: usize,
    pub pooled_ate: f64,
    pub pooled_stderr: f64,
    pub interaction: RegressionFit,
    pub monotone_map: MonotoneMap,
    pub excluded_strata: Vec<usize>,
}

fn write_echoed<T: Serialize>(cfg: &PipelineConfig, a: Artifact, body: T) -> Result<()> {
    let doc = Echoed { run: cfg.echo(), body };
    Ok(io::write_json(&cfg.path(a), &doc)?)
}

fn note(step: &str, msg: impl std::fmt::Display) {
    eprintln!("{step}: {msg}");
}

/// Run one step inside a pool capped at the configured thread count.
pub fn run(step: Step, cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building worker pool")?;
    pool.install(|| dispatch(step, cfg))
}

fn dispatch(step: Step, cfg: &PipelineConfig) -> Result<()> {
    match step {
        Step::Simulate => simulate(cfg),
        Step::Fit => fit(cfg),
        Step::Label => label(cfg),
        Step::Train => train_model(cfg),
        Step::Score => score(cfg),
        Step::Analyze => analyze(cfg),
        Step::Target => target(cfg),
        Step::Report => report(cfg),
        Step::Pipeline => {
            for s in [
                Step::Simulate,
                Step::Fit,
                Step::Label,
                Step::Train,
                Step::Score,
                Step::Analyze,
                Step::Target,
                Step::Report,
            ] {
                dispatch(s, cfg).with_context(|| format!("pipeline step {}", s.name()))?;
            }
            Ok(())
        }
    }
}

fn simulate(cfg: &PipelineConfig) -> Result<()> {
    let spec = cfg.dgp_spec();
    let units = sample_units(&spec)?;
    let panel = simulate_panel(&units, &spec)?;
    io::write_panel(&cfg.path(Artifact::Panel), &panel)?;
    drop(panel);
    io::write_covariates(&cfg.path(Artifact::Covariates), &simulate_covariates(&units, &spec)?)?;
    let exp = simulate_experiment(&units, &spec, cfg.analysis.treated_fraction)?;
    io::write_experiment(&cfg.path(Artifact::Experiment), &exp)?;
    io::write_truth(&cfg.path(Artifact::Truth), &units)?;
    note(
        "simulate",
        format!(
            "{} units, {} periods, {} treated",
            units.len(),
            spec.t_periods,
            exp.n_treated()
        ),
    );
    Ok(())
}

fn fit(cfg: &PipelineConfig) -> Result<()> {
    let panel = io::read_panel(&cfg.path(Artifact::Panel))?;
    let result = fit_all(&panel, cfg.analysis.min_obs)?;
    io::write_effects(&cfg.path(Artifact::Effects), &result.estimates)?;
    io::write_skips(&cfg.path(Artifact::Skips), &result.skips)?;
    note(
        "fit",
        format!(
            "{} units estimated, {} skipped",
            result.estimates.len(),
            result.skips.len()
        ),
    );
    Ok(())
}

fn label(cfg: &PipelineConfig) -> Result<()> {
    let estimates = io::read_effects(&cfg.path(Artifact::Effects))?;
    let labels = make_labels(&estimates, cfg.train.quantile)?;
    io::write_labels(&cfg.path(Artifact::Labels), &labels)?;
    let positives = labels.iter().filter(|l| l.label == 1).count();
    note(
        "label",
        format!("{positives} of {} units labeled positive", labels.len()),
    );
    Ok(())
}

fn train_model(cfg: &PipelineConfig) -> Result<()> {
    let tc = cfg.train_config();
    let estimates = io::read_effects(&cfg.path(Artifact::Effects))?;
    let labels = make_labels(&estimates, tc.quantile)?;
    let covariates = io::read_covariates(&cfg.path(Artifact::Covariates))?;
    let examples = build_examples(&labels, &covariates)?;
    let (model, log) = train(&examples, &tc)?;
    write_echoed(cfg, Artifact::Model, &model)?;
    write_echoed(cfg, Artifact::TrainingLog, &log)?;
    match log.holdout_auc {
        Some(auc) => note("train", format!("{} trees, holdout AUC {auc:.4}", model.trees.len())),
        None => note("train", format!("{} trees", model.trees.len())),
    }
    Ok(())
}

pub fn read_model(path: &Path) -> Result<GbdtModel> {
    let doc: Echoed<GbdtModel> = io::read_json(path)?;
    Ok(doc.body)
}

pub fn read_training_log(path: &Path) -> Result<TrainingLog> {
    let doc: Echoed<TrainingLog> = io::read_json(path)?;
    Ok(doc.body)
}

fn score(cfg: &PipelineConfig) -> Result<()> {
    let model = read_model(&cfg.path(Artifact::Model))?;
    let covariates = io::read_covariates(&cfg.path(Artifact::Covariates))?;
    let scores = model.predict_batch(&covariates.rows)?;
    let scores: Vec<UnitScore> = covariates
        .unit_ids
        .iter()
        .zip(scores)
        .map(|(&unit_id, score)| UnitScore { unit_id, score })
        .collect();
    io::write_scores(&cfg.path(Artifact::Scores), &scores)?;
    note("score", format!("{} units scored", scores.len()));
    Ok(())
}

fn analyze(cfg: &PipelineConfig) -> Result<()> {
    let exp = io::read_experiment(&cfg.path(Artifact::Experiment))?;
    let scores = io::read_scores(&cfg.path(Artifact::Scores))?;
    let strata = stratified_effects(&exp, &scores, cfg.analysis.n_strata)?;
    io::write_strata(&cfg.path(Artifact::Strata), &strata)?;
    io::emit_figure_data(&cfg.path(Artifact::Figure), &strata)?;
    let (pooled_ate, pooled_stderr) = pooled_effect(&exp, OutcomeForm::DeltaLog)?;
    let interaction = interaction_regression(&exp, &scores)?;
    let monotone_map = fit_monotone_map(&strata, cfg.analysis.interpolation)?;
    let excluded_strata = strata
        .iter()
        .filter(|s| s.ate.is_none() || s.stderr.is_none())
        .map(|s| s.stratum_index)
        .collect();
    let it = interaction.interaction();
    note(
        "analyze",
        format!(
            "interaction {:.4} (p = {:.3e}), pooled effect {pooled_ate:.4}",
            it.estimate, it.p_value
        ),
    );
    write_echoed(
        cfg,
        Artifact::Analysis,
        AnalysisSummary {
            n_records: exp.records.len(),
            n_treated: exp.n_treated(),
            pooled_ate,
            pooled_stderr,
            interaction,
            monotone_map,
            excluded_strata,
        },
    )
}

fn target(cfg: &PipelineConfig) -> Result<()> {
    let scores = io::read_scores(&cfg.path(Artifact::Scores))?;
    let targets = select_targets(&scores, cfg.analysis.budget_k);
    io::write_targets(&cfg.path(Artifact::Targets), &targets)?;
    note("target", format!("{} units selected", targets.len()));
    Ok(())
}

fn report(cfg: &PipelineConfig) -> Result<()> {
    let truth = io::read_truth(&cfg.path(Artifact::Truth))?;
    let estimates = io::read_effects(&cfg.path(Artifact::Effects))?;
    // skipped units have no estimate to compare
    let estimated: std::collections::HashSet<u64> = estimates.iter().map(|e| e.unit_id).collect();
    let truth: Vec<_> = truth.into_iter().filter(|u| estimated.contains(&u.unit_id)).collect();
    let sampling = PairSampling {
        seed: cfg.pair_sampling_seed(),
        ..PairSampling::default()
    };
    let r: RankReport = rank_preservation_report(&truth, &estimates, &cfg.dgp_spec(), &sampling)?;
    note(
        "report",
        format!("kendall tau {:.4} over {} units", r.kendall_tau, r.n_units),
    );
    write_echoed(cfg, Artifact::RankReport, r)
}

/// Machine-readable description of a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub subcommand: String,
    pub kind: String,
    pub message: String,
    pub chain: Vec<String>,
}

impl ErrorRecord {
    pub fn new(step: &str, err: &anyhow::Error) -> Self {
        let kind = err
            .chain()
            .find_map(|e| e.downcast_ref::<Error>())
            .map_or("cli", Error::kind)
            .to_string();
        ErrorRecord {
            subcommand: step.to_string(),
            kind,
            message: err.to_string(),
            chain: err.chain().skip(1).map(ToString::to_string).collect(),
        }
    }
}
