//! Batch CLI for the load-forecasting pipeline: synthesize data, train,
//! forecast, explain location importance, and run the comparison suite.
//!
//! Exit codes: 0 success, 1 runtime/numeric failure, 2 configuration or
//! validation failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use geoload::bench::{forecast_series, run_suite};
use geoload::config::RunConfig;
use geoload::data::{
    build_samples, ingest, star_locations, synthesize, synthesize_at, write_csvs, Sample,
    SyntheticGroundTruth, EXO_LEN, NODE_FEATURES,
};
use geoload::explain::{
    exact_shapley, explain_locations, write_explanation_csv, Explanation, EXACT_NODE_GUARD,
};
use geoload::graph::build_adjacency;
use geoload::metrics::stratified;
use geoload::model::{load_model, save_model, train, IntegratedModel};
use geoload::{Error, Result};

#[derive(Parser)]
#[command(name = "geoload", about = "Day-ahead load forecasting with location importance scoring")]
struct Cli {
    /// JSON run configuration; defaults are used where absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic CSVs with planted location importance.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        locations: usize,
        #[arg(long)]
        days: usize,
        /// Load noise standard deviation, MW.
        #[arg(long, default_value_t = 2.0)]
        noise: f64,
        /// Slope of the V-shaped load response, MW per degree.
        #[arg(long, default_value_t = 12.0)]
        response: f64,
        /// Comma-separated planted weights (defaults to a geometric decay).
        #[arg(long)]
        weights: Option<String>,
        /// Spatial arrangement: "grid" (square) or "star" (plus-shaped).
        #[arg(long, default_value = "grid")]
        layout: String,
    },
    /// Train the integrated model on ingested CSVs.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop the graph generator: forecast from calendar/lags only.
        #[arg(long)]
        no_mf: bool,
    },
    /// Forecast the test split with a trained model.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score per-location importance on the test split.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Coalition enumeration instead of Monte Carlo masks.
        #[arg(long)]
        exact: bool,
        /// Monte Carlo masks per explained sample.
        #[arg(long)]
        samples: Option<usize>,
        /// Cap on explained test samples (0 = all).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train and score the comparison forecasters.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        suite: String,
    },
    /// Compute metrics from a forecasts CSV.
    Report {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    });
}

fn log(msg: &str) {
    if let Ok(level) = std::env::var("GEOLOAD_LOG") {
        if !level.is_empty() && level != "0" && level != "off" {
            eprintln!("geoload: {msg}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.trainer.seed = seed;
        config.explainer.seed = seed;
    }

    match cli.command {
        Command::Synth { out, locations, days, noise, response, weights, layout } => cmd_synth(
            &config,
            &out,
            locations,
            days,
            noise,
            response,
            weights.as_deref(),
            &layout,
            cli.force,
        ),
        Command::Train { data, out, no_mf } => cmd_train(&config, &data, &out, no_mf, cli.force),
        Command::Forecast { model, data, out } => {
            cmd_forecast(&config, &model, &data, &out, cli.force)
        }
        Command::Explain { model, data, out, exact, samples, limit } => {
            cmd_explain(&config, &model, &data, &out, exact, samples, limit, cli.force)
        }
        Command::Benchmark { data, out, suite } => {
            cmd_benchmark(&config, &data, &out, &suite, cli.force)
        }
        Command::Report { forecasts, out } => cmd_report(&config, &forecasts, &out, cli.force),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Validation(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn data_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join("load.csv"), dir.join("weather.csv"), dir.join("locations.csv"))
}

#[derive(Serialize, Deserialize)]
struct GroundTruthArtifact {
    config_hash: String,
    seed: u64,
    n_locations: usize,
    n_days: usize,
    #[serde(flatten)]
    truth: SyntheticGroundTruth,
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    config: &RunConfig,
    out: &Path,
    locations: usize,
    days: usize,
    noise: f64,
    response: f64,
    weights: Option<&str>,
    layout: &str,
    force: bool,
) -> Result<()> {
    let weights = match weights {
        Some(text) => text
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("--weights: {w:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?,
        // geometric decay keeps a clear dominant location while every
        // location still matters a little
        None => (0..locations).map(|i| 0.6f64.powi(i as i32)).collect(),
    };
    if weights.len() != locations {
        return Err(Error::Config(format!(
            "--weights has {} entries for {locations} locations",
            weights.len()
        )));
    }
    let mut truth = SyntheticGroundTruth::new(weights, noise, config.trainer.seed);
    truth.response_mw_per_deg = response;
    let dataset = match layout {
        "grid" => synthesize(locations, days, &truth)?,
        "star" => synthesize_at(star_locations(locations), days, &truth)?,
        other => return Err(Error::Config(format!("unknown layout {other:?}"))),
    };

    fs::create_dir_all(out)?;
    let (load, weather, locs) = data_paths(out);
    let truth_path = out.join("ground_truth.json");
    for path in [&load, &weather, &locs, &truth_path] {
        refuse_overwrite(path, force)?;
    }
    write_csvs(&dataset, &load, &weather, &locs)?;
    let artifact = GroundTruthArtifact {
        config_hash: config.hash(),
        seed: truth.seed,
        n_locations: locations,
        n_days: days,
        truth,
    };
    fs::write(&truth_path, serde_json::to_string_pretty(&artifact)?)?;
    log(&format!("wrote {} hours for {locations} locations to {}", days * 24, out.display()));
    Ok(())
}

fn prepare(config: &RunConfig, data: &Path) -> Result<(geoload::data::SampleSets, geoload::graph::AdjacencyMatrix)> {
    let (load, weather, locs) = data_paths(data);
    let dataset = ingest(&load, &weather, &locs)?;
    let adjacency = build_adjacency(&dataset.locations, config.graph_rule)?;
    let sets = build_samples(&dataset, config.split)?;
    Ok((sets, adjacency))
}

fn cmd_train(config: &RunConfig, data: &Path, out: &Path, no_mf: bool, force: bool) -> Result<()> {
    let (sets, adjacency) = prepare(config, data)?;
    fs::create_dir_all(out)?;
    let model_path = out.join("model.json");
    let history_path = out.join("history.csv");
    refuse_overwrite(&model_path, force)?;
    refuse_overwrite(&history_path, force)?;

    let gcn_dims: &[usize] = if no_mf { &[] } else { &config.gcn_dims };
    let mut model = IntegratedModel::init(
        adjacency,
        NODE_FEATURES,
        EXO_LEN,
        gcn_dims,
        &config.dense_hidden,
        config.trainer.seed,
        config.hash(),
    );
    log(&format!(
        "training on {} samples ({} validation)...",
        sets.train.len(),
        sets.val.len()
    ));
    let history = train(&mut model, &sets.train, &sets.val, &config.trainer)?;
    save_model(&model_path, &model, config.graph_rule, &sets.schema, &sets.stats)?;

    let mut writer = csv::Writer::from_path(&history_path)?;
    writer.write_record(["epoch", "train_loss", "val_loss", "best_val_loss"])?;
    for rec in &history {
        writer.write_record(&[
            rec.epoch.to_string(),
            format!("{}", rec.train_loss),
            format!("{}", rec.val_loss),
            format!("{}", rec.best_val_loss),
        ])?;
    }
    writer.flush()?;
    log(&format!(
        "stopped after {} epochs, best val loss {}",
        history.len(),
        history.last().map(|r| r.best_val_loss).unwrap_or(f64::NAN)
    ));
    Ok(())
}

fn load_compatible_model(
    config: &RunConfig,
    model_path: &Path,
    data: &Path,
) -> Result<(IntegratedModel, geoload::model::ModelFile, geoload::data::SampleSets)> {
    let (model, file) = load_model(model_path)?;
    let (sets, _) = prepare(config, data)?;
    if sets.schema.hash() != file.schema_hash {
        return Err(Error::Validation(format!(
            "feature schema mismatch: model was trained on {} locations (hash {}), data gives hash {}",
            file.schema.n_locations,
            file.schema_hash,
            sets.schema.hash()
        )));
    }
    Ok((model, file, sets))
}

fn cmd_forecast(
    config: &RunConfig,
    model_path: &Path,
    data: &Path,
    out: &Path,
    force: bool,
) -> Result<()> {
    refuse_overwrite(out, force)?;
    let (model, file, sets) = load_compatible_model(config, model_path, data)?;
    let (actuals, forecasts, stamps) = forecast_series(&model, &sets.test, &file.stats)?;

    let mut text = format!("# config_hash={} seed={}\n", file.config_hash, file.seed);
    text.push_str("timestamp,forecast_mw,actual_mw\n");
    for ((stamp, f), y) in stamps.iter().zip(&forecasts).zip(&actuals) {
        text.push_str(&format!("{},{},{}\n", stamp.format("%Y-%m-%dT%H:%M:%SZ"), f, y));
    }
    fs::write(out, text)?;
    log(&format!("wrote {} forecast rows to {}", forecasts.len(), out.display()));
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ExplanationArtifact {
    config_hash: String,
    method: String,
    #[serde(flatten)]
    explanation: Explanation,
}

#[allow(clippy::too_many_arguments)]
fn cmd_explain(
    config: &RunConfig,
    model_path: &Path,
    data: &Path,
    out: &Path,
    exact: bool,
    samples: Option<usize>,
    limit: Option<usize>,
    force: bool,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let json_path = out.join("explanation.json");
    let csv_path = out.join("explanation.csv");
    refuse_overwrite(&json_path, force)?;
    refuse_overwrite(&csv_path, force)?;

    let (model, file, sets) = load_compatible_model(config, model_path, data)?;
    if model.gcn_layers.is_empty() {
        return Err(Error::Validation(
            "model has no graph generator; nothing to attribute to locations".into(),
        ));
    }
    let limit = limit.unwrap_or(config.explainer.sample_limit);
    // stride across the test range: consecutive hours are strongly
    // correlated and would waste the sample budget
    let subset: Vec<Sample> = if limit == 0 || limit >= sets.test.len() {
        sets.test.clone()
    } else {
        let stride = sets.test.len() / limit;
        sets.test.iter().step_by(stride).take(limit).cloned().collect()
    };
    let subset: &[Sample] = &subset;

    let explanation = if exact {
        if model.n_nodes() > EXACT_NODE_GUARD {
            return Err(Error::Config(format!(
                "--exact refused for n = {} > {EXACT_NODE_GUARD}",
                model.n_nodes()
            )));
        }
        log(&format!("enumerating coalitions over {} samples...", subset.len()));
        aggregate_exact(&model, subset, &file.stats)?
    } else {
        let mask_count = samples.unwrap_or(config.explainer.mask_count);
        log(&format!(
            "scoring {} samples with {mask_count} masks each...",
            subset.len()
        ));
        explain_locations(&model, subset, mask_count, config.explainer.seed, &file.stats)?
    };

    let artifact = ExplanationArtifact {
        config_hash: file.config_hash.clone(),
        method: if exact { "exact".into() } else { "kernel".into() },
        explanation,
    };
    fs::write(&json_path, serde_json::to_string_pretty(&artifact)?)?;
    write_explanation_csv(&csv_path, &artifact.explanation)?;
    log(&format!("top location: {}", artifact.explanation.ranking[0]));
    Ok(())
}

/// Exact counterpart of the aggregated kernel explanation: mean |phi| over
/// samples, denormalized.
fn aggregate_exact(
    model: &IntegratedModel,
    samples: &[Sample],
    stats: &geoload::data::NormStats,
) -> Result<Explanation> {
    use rayon::prelude::*;
    if samples.is_empty() {
        return Err(Error::Validation("no samples to explain".into()));
    }
    let per_sample: Vec<Explanation> = samples
        .par_iter()
        .map(|s| exact_shapley(model, s))
        .collect::<Result<Vec<_>>>()?;
    let n = model.n_nodes();
    let count = per_sample.len() as f64;
    let mut phi = vec![0.0; n];
    let mut phi0 = 0.0;
    for expl in &per_sample {
        for (acc, v) in phi.iter_mut().zip(&expl.phi) {
            *acc += v.abs() * stats.target_std;
        }
        phi0 += stats.denormalize_target(expl.phi0);
    }
    for v in phi.iter_mut() {
        *v /= count;
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| phi[b].partial_cmp(&phi[a]).unwrap().then(a.cmp(&b)));
    Ok(Explanation {
        phi0: phi0 / count,
        phi,
        ranking,
        units: "MW".into(),
        mask_count: 0,
        seed: 0,
        sample_count: per_sample.len(),
        condition_warning: false,
    })
}

fn cmd_benchmark(
    config: &RunConfig,
    data: &Path,
    out: &Path,
    suite: &str,
    force: bool,
) -> Result<()> {
    if suite != "full" {
        return Err(Error::Config(format!("unknown suite {suite:?}; only \"full\" is available")));
    }
    refuse_overwrite(out, force)?;
    let (sets, _) = prepare(config, data)?;
    log(&format!(
        "running {} benchmark trainings...",
        2 * sets.schema.n_locations + 3
    ));
    let report =
        run_suite(&sets, &config.trainer, &config.dense_hidden, config.hours, config.hash())?;
    fs::write(out, serde_json::to_string_pretty(&report)?)?;
    log(&format!("wrote {} rows to {}", report.rows.len(), out.display()));
    Ok(())
}

#[derive(Serialize)]
struct MetricsArtifact {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    metrics: geoload::metrics::MetricReport,
}

fn cmd_report(config: &RunConfig, forecasts: &Path, out: &Path, force: bool) -> Result<()> {
    refuse_overwrite(out, force)?;
    let text = fs::read_to_string(forecasts)?;
    let mut config_hash = config.hash();
    let mut seed = config.trainer.seed;
    let mut actuals = Vec::new();
    let mut preds = Vec::new();
    let mut stamps = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.starts_with('#') {
            for token in line.trim_start_matches('#').split_whitespace() {
                if let Some(h) = token.strip_prefix("config_hash=") {
                    config_hash = h.to_string();
                } else if let Some(s) = token.strip_prefix("seed=") {
                    seed = s.parse().map_err(|e| {
                        Error::Parse(format!("{}:{}: bad seed: {e}", forecasts.display(), idx + 1))
                    })?;
                }
            }
            continue;
        }
        if line.starts_with("timestamp") || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "{}:{}: expected timestamp,forecast_mw,actual_mw",
                forecasts.display(),
                idx + 1
            )));
        }
        let stamp = chrono::DateTime::parse_from_rfc3339(fields[0])
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", forecasts.display(), idx + 1)))?
            .with_timezone(&chrono::Utc);
        let parse = |field: &str| -> Result<f64> {
            field.parse().map_err(|e| {
                Error::Parse(format!("{}:{}: {e}", forecasts.display(), idx + 1))
            })
        };
        stamps.push(stamp);
        preds.push(parse(fields[1])?);
        actuals.push(parse(fields[2])?);
    }
    let metrics = stratified(&actuals, &preds, &stamps, config.hours)?;
    let artifact = MetricsArtifact { config_hash, seed, metrics };
    fs::write(out, serde_json::to_string_pretty(&artifact)?)?;
    Ok(())
}
