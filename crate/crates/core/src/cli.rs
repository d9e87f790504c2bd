//! Command-line interface: argument definitions and the four commands.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{self, Method};
use crate::outcomes::{self, OutcomeDataset, OutcomeKind};
use crate::pipeline;
use crate::sessions::SessionFeatureTable;
use crate::simgen::{self, Scenario};

#[derive(Debug, Parser)]
#[command(name = "eventseg", version, about = "Sleep/wake segmentation of wearable-sensor records")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one simulated realization.
    Simulate {
        /// stable, unstable++ or unstable+-.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Segment subject records (a CSV file or a directory of them).
    Segment {
        input: PathBuf,
    },
    /// Run the simulation benchmark.
    Evaluate {
        #[arg(long, default_value = "stable")]
        scenario: String,
        /// Comma-separated subset of hmm, dhmm, proposed.
        #[arg(long, default_value = "hmm,dhmm,proposed")]
        methods: String,
        /// Realizations (each with `--repeats` data draws).
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Rank session features as outcome predictors.
    Predict {
        /// Session feature table (`subject,day,...`).
        #[arg(long)]
        features: PathBuf,
        /// `subject,outcome` table.
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelArg::Lr)]
        model: ModelArg,
        /// Rebalance training folds with SMOTE, averaged over repeated runs.
        #[arg(long)]
        smote: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    /// Logistic regression on a binary outcome.
    Lr,
    /// Continuation-ratio regression on an ordinal outcome.
    Cr,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<T: Serialize> {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub details: T,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest<T: Serialize>(out: &Path, manifest: &Manifest<T>) -> Result<PathBuf> {
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(manifest)?)?;
    Ok(path)
}

/// Loads the configuration and applies the `--seed` override.
pub fn resolve_config(common: &Common) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.hmm.seed = seed;
        config.simulation.seed = seed;
        config.benchmark.seed = seed;
        config.benchmark.hmm.seed = seed;
        config.outcomes.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn manifest_for<T: Serialize>(
    command: &str,
    config: &PipelineConfig,
    seed: Option<u64>,
    inputs: &[PathBuf],
    outputs: Vec<PathBuf>,
    details: T,
) -> Result<Manifest<T>> {
    Ok(Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: hex(&Sha256::digest(config.to_json()?.as_bytes())),
        seed,
        inputs: inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?,
        outputs,
        details,
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.common.jobs {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    let config = resolve_config(&cli.common)?;
    let out = &cli.common.output;
    match &cli.command {
        Command::Simulate { scenario } => cmd_simulate(&config, scenario.as_deref(), out).map(|_| ()),
        Command::Segment { input } => cmd_segment(&config, input, out).map(|_| ()),
        Command::Evaluate {
            scenario,
            methods,
            trials,
            repeats,
        } => cmd_evaluate(&config, scenario, methods, *trials, *repeats, out).map(|_| ()),
        Command::Predict {
            features,
            outcomes,
            model,
            smote,
        } => cmd_predict(&config, features, outcomes, *model, *smote, out).map(|_| ()),
    }
}

/// Writes `realization.csv` and the resolved `config.json`.
pub fn cmd_simulate(config: &PipelineConfig, scenario: Option<&str>, out: &Path) -> Result<PathBuf> {
    let mut sim = config.simulation.clone();
    if let Some(name) = scenario {
        let sc: Scenario = name.parse()?;
        if sc != sim.scenario {
            sim = simgen::SimConfig::for_scenario(sc).with_seed(sim.seed);
        }
    }
    let realization = simgen::generate(&sim)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("realization.csv");
    realization.write_csv(&path)?;
    let mut resolved = config.clone();
    resolved.simulation = sim;
    resolved.save(&out.join("config.json"))?;
    log::info!("{} epochs, apex pair {}", realization.len(), realization.apex);
    Ok(path)
}

#[derive(Debug, Serialize)]
struct SegmentDetails {
    features: Vec<String>,
    selection: Option<crate::ingest::FeatureSelection>,
    subjects: Vec<pipeline::SubjectSummary>,
}

/// Runs the segmentation pipeline over every input record.
pub fn cmd_segment(config: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<pipeline::SubjectSummary>> {
    let files = pipeline::input_files(input)?;
    let records = files
        .iter()
        .map(|f| pipeline::load_record(f, config))
        .collect::<Result<Vec<_>>>()?;
    let run = pipeline::run(records, config)?;
    let mut outputs = pipeline::write_outputs(&run, out)?;
    config.save(&out.join("config.json"))?;
    outputs.push(out.join("config.json"));
    let summaries = run.summaries();
    let details = SegmentDetails {
        features: run.features.clone(),
        selection: run.selection.clone(),
        subjects: summaries.clone(),
    };
    let manifest = manifest_for("segment", config, Some(config.hmm.seed), &files, outputs, details)?;
    write_manifest(out, &manifest)?;
    // A lone record that fails to segment is an error rather than a report.
    if let [(p, Err(e))] = run.subjects.as_slice() {
        if files.len() == 1 {
            return Err(Error::Validation(format!("{}: {e}", p.record.id())));
        }
    }
    Ok(summaries)
}

/// Writes `report.json` and `trials.csv` for one scenario.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    scenario: &str,
    methods: &str,
    trials: Option<usize>,
    repeats: Option<usize>,
    out: &Path,
) -> Result<eval::BenchmarkReport> {
    let sc: Scenario = scenario.parse()?;
    let mut bench = config.benchmark.clone();
    bench.methods = Method::parse_list(methods)?;
    if let Some(t) = trials {
        bench.n_realizations = t;
        bench.n_repeats = repeats.unwrap_or(1);
    } else if let Some(r) = repeats {
        bench.n_repeats = r;
    }
    let mut sim = simgen::SimConfig::for_scenario(sc);
    sim.seed = config.simulation.seed;
    let report = eval::run_benchmark(&sim, &bench)?;
    std::fs::create_dir_all(out)?;
    let json = out.join("report.json");
    let csv = out.join("trials.csv");
    report.write_json(&json)?;
    report.write_trials_csv(&csv)?;
    let mut resolved = config.clone();
    resolved.benchmark = bench.clone();
    let manifest = manifest_for("evaluate", &resolved, Some(bench.seed), &[], vec![json, csv], &bench)?;
    write_manifest(out, &manifest)?;
    Ok(report)
}

/// Joins session features to outcomes and writes `ranking.csv`.
pub fn cmd_predict(
    config: &PipelineConfig,
    features: &Path,
    outcomes_path: &Path,
    model: ModelArg,
    smote: bool,
    out: &Path,
) -> Result<Vec<outcomes::FeatureResult>> {
    let kind = match model {
        ModelArg::Lr => OutcomeKind::Binary,
        ModelArg::Cr => OutcomeKind::Ordinal {
            levels: config.outcomes.levels,
        },
    };
    let table = SessionFeatureTable::read_csv(features)?;
    let labels = outcomes::read_outcomes_csv(outcomes_path, kind)?;
    let day = config.outcomes.day;
    let table_subjects: BTreeSet<&str> = table.rows.iter().filter(|r| r.day == day).map(|r| r.subject.as_str()).collect();
    let outcome_subjects: BTreeSet<&str> = labels.keys().map(String::as_str).collect();
    let joined = table_subjects.intersection(&outcome_subjects).count();
    let unmatched: Vec<&str> = table_subjects.symmetric_difference(&outcome_subjects).copied().collect();
    if joined < 3 {
        return Err(Error::Validation(format!(
            "only {joined} subjects have both day-{day} features and an outcome; unmatched: {}",
            if unmatched.is_empty() { "none".to_string() } else { unmatched.join(", ") }
        )));
    }
    if !unmatched.is_empty() {
        log::warn!("subjects without a match: {}", unmatched.join(", "));
    }
    let dataset = OutcomeDataset::from_feature_table(&table, day, &labels, kind)?;
    let smote_runs = smote.then_some((config.outcomes.smote_runs, config.outcomes.seed));
    let ranked = outcomes::rank_features(&dataset, &dataset.feature_names, &config.outcomes.glm, smote_runs);
    std::fs::create_dir_all(out)?;
    let path = out.join("ranking.csv");
    outcomes::write_results_csv(&path, kind, &ranked)?;
    let manifest = manifest_for(
        "predict",
        config,
        Some(config.outcomes.seed),
        &[features.to_path_buf(), outcomes_path.to_path_buf()],
        vec![path],
        serde_json::json!({ "subjects": joined, "unmatched": unmatched, "smote": smote, "model": format!("{model:?}") }),
    )?;
    write_manifest(out, &manifest)?;
    Ok(ranked)
}
