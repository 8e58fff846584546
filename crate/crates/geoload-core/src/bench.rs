//! Comparison suite: dense forecasters fed different meteorological-factor
//! (MF) input blocks, plus the rank-and-average virtual-station selection.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, Sample, SampleSets, EXO_LEN};
use crate::error::{Error, Result};
use crate::metrics::{mae, stratified, MetricReport, StratumHours};
use crate::model::{train, EpochRecord, TrainableModel, TrainerConfig};
use crate::nn::{Mlp, Parametrized};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which meteorological inputs a benchmark forecaster sees alongside the
/// calendar/lag block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MfInput {
    /// Calendar and lags only.
    None,
    /// Weather of one location.
    Single(usize),
    /// Weather of every location, concatenated.
    All,
    /// Per-channel mean over all locations.
    Average,
    /// Per-channel mean over a chosen subset (the rank-based method).
    VirtualStation(Vec<usize>),
}

impl MfInput {
    /// Width of the MF block for an n-location dataset.
    pub fn mf_dim(&self, n: usize) -> usize {
        match self {
            MfInput::None => 0,
            MfInput::All => 2 * n,
            _ => 2,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MfInput::None => "none".into(),
            MfInput::Single(i) => format!("single({i})"),
            MfInput::All => "all".into(),
            MfInput::Average => "average".into(),
            MfInput::VirtualStation(ids) => format!("virtual(k={})", ids.len()),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            MfInput::Single(i) if *i >= n => {
                Err(Error::Config(format!("single-location index {i} out of range for n = {n}")))
            }
            MfInput::VirtualStation(ids) if ids.is_empty() => {
                Err(Error::Config("virtual station needs at least one location".into()))
            }
            MfInput::VirtualStation(ids) if ids.iter().any(|i| *i >= n) => {
                Err(Error::Config(format!("virtual station index out of range for n = {n}")))
            }
            _ => Ok(()),
        }
    }

    /// Assemble the forecaster input: MF block followed by the exogenous
    /// block.
    pub fn features(&self, sample: &Sample) -> Array1<f64> {
        let n = sample.node_features.nrows();
        let mut out = Vec::with_capacity(self.mf_dim(n) + sample.exo.len());
        match self {
            MfInput::None => {}
            MfInput::Single(i) => {
                out.push(sample.node_features[[*i, 0]]);
                out.push(sample.node_features[[*i, 1]]);
            }
            MfInput::All => {
                for i in 0..n {
                    out.push(sample.node_features[[i, 0]]);
                    out.push(sample.node_features[[i, 1]]);
                }
            }
            MfInput::Average => {
                for ch in 0..2 {
                    out.push((0..n).map(|i| sample.node_features[[i, ch]]).sum::<f64>() / n as f64);
                }
            }
            MfInput::VirtualStation(ids) => {
                for ch in 0..2 {
                    out.push(
                        ids.iter().map(|&i| sample.node_features[[i, ch]]).sum::<f64>()
                            / ids.len() as f64,
                    );
                }
            }
        }
        out.extend(sample.exo.iter());
        Array1::from_vec(out)
    }
}

/// Dense forecaster over a fixed MF input block.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseForecastModel {
    pub mf: MfInput,
    pub net: Mlp,
    pub seed: u64,
}

impl DenseForecastModel {
    pub fn init(mf: MfInput, n_locations: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        mf.validate(n_locations)?;
        let in_dim = mf.mf_dim(n_locations) + EXO_LEN;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(DenseForecastModel { mf, net: Mlp::init(in_dim, hidden, &mut rng), seed })
    }

    pub fn in_dim(&self) -> usize {
        self.net.in_dim()
    }
}

impl Parametrized for DenseForecastModel {
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn get_params(&self) -> Vec<f64> {
        self.net.get_params()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.net.set_params(params);
    }
}

impl TrainableModel for DenseForecastModel {
    fn predict_sample(&self, sample: &Sample) -> Result<f64> {
        self.net.forward(&self.mf.features(sample))
    }

    fn sample_loss_and_grad(&self, sample: &Sample) -> Result<(f64, Vec<f64>)> {
        self.net.loss_and_grad(&self.mf.features(sample), sample.target)
    }
}

/// Denormalized forecasts, actuals and timestamps for a sample set.
pub fn evaluate<M: TrainableModel>(
    model: &M,
    samples: &[Sample],
    stats: &NormStats,
    hours: StratumHours,
) -> Result<MetricReport> {
    let (actuals, forecasts, stamps) = forecast_series(model, samples, stats)?;
    stratified(&actuals, &forecasts, &stamps, hours)
}

pub fn forecast_series<M: TrainableModel>(
    model: &M,
    samples: &[Sample],
    stats: &NormStats,
) -> Result<(Vec<f64>, Vec<f64>, Vec<chrono::DateTime<chrono::Utc>>)> {
    let mut actuals = Vec::with_capacity(samples.len());
    let mut forecasts = Vec::with_capacity(samples.len());
    let mut stamps = Vec::with_capacity(samples.len());
    for sample in samples {
        actuals.push(sample.actual_mw);
        forecasts.push(stats.denormalize_target(model.predict_sample(sample)?));
        stamps.push(sample.timestamp);
    }
    Ok((actuals, forecasts, stamps))
}

fn val_mae<M: TrainableModel>(model: &M, samples: &[Sample], stats: &NormStats) -> Result<f64> {
    let (actuals, forecasts, _) = forecast_series(model, samples, stats)?;
    mae(&actuals, &forecasts)
}

/// A trained benchmark with its validation error and test report.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub label: String,
    pub model: DenseForecastModel,
    pub history: Vec<EpochRecord>,
    pub val_mae_mw: f64,
    pub test_report: MetricReport,
}

/// Train one benchmark forecaster. All runs in a suite must share the
/// trainer config and splits; the MF block is the only difference.
pub fn run_benchmark(
    mf: MfInput,
    sets: &SampleSets,
    trainer: &TrainerConfig,
    hidden: &[usize],
    hours: StratumHours,
) -> Result<BenchmarkRun> {
    let label = mf.label();
    let mut model = DenseForecastModel::init(mf, sets.schema.n_locations, hidden, trainer.seed)?;
    let history = train(&mut model, &sets.train, &sets.val, trainer)?;
    let val_mae_mw = val_mae(&model, &sets.val, &sets.stats)?;
    let test_report = evaluate(&model, &sets.test, &sets.stats, hours)?;
    Ok(BenchmarkRun { label, model, history, val_mae_mw, test_report })
}

/// Rank-based virtual-station selection: rank locations by single-location
/// validation MAE (ties broken by id), then for each k average the top-k
/// into a virtual station and pick k* on validation error. Test errors per
/// k are recorded too, because the validation choice need not be
/// test-optimal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HongtaoResult {
    /// Locations ordered best-first by single-location validation MAE.
    pub ranking: Vec<usize>,
    /// Validation MAE of each single-location model, indexed by location.
    pub single_val_mae: Vec<f64>,
    /// Validation MAE for the top-k virtual station, index k-1.
    pub val_mae_per_k: Vec<f64>,
    /// Test MAE for the top-k virtual station, index k-1.
    pub test_mae_per_k: Vec<f64>,
    /// k chosen on validation error.
    pub k_star: usize,
    /// k that would have been chosen on test error.
    pub test_best_k: usize,
    /// Test report of the k* model.
    pub test_report: MetricReport,
}

/// Index of the minimum, first occurrence on ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

pub fn hongtao_select(
    sets: &SampleSets,
    trainer: &TrainerConfig,
    hidden: &[usize],
    hours: StratumHours,
) -> Result<(HongtaoResult, DenseForecastModel)> {
    let n = sets.schema.n_locations;
    if n < 2 {
        return Err(Error::Config(format!("rank-based selection needs n >= 2, got {n}")));
    }
    let singles: Vec<BenchmarkRun> = (0..n)
        .into_par_iter()
        .map(|i| run_benchmark(MfInput::Single(i), sets, trainer, hidden, hours))
        .collect::<Result<Vec<_>>>()?;
    let single_val_mae: Vec<f64> = singles.iter().map(|r| r.val_mae_mw).collect();
    hongtao_from_singles(&single_val_mae, sets, trainer, hidden, hours)
}

/// Selection given already-trained single-location validation errors.
pub fn hongtao_from_singles(
    single_val_mae: &[f64],
    sets: &SampleSets,
    trainer: &TrainerConfig,
    hidden: &[usize],
    hours: StratumHours,
) -> Result<(HongtaoResult, DenseForecastModel)> {
    let n = sets.schema.n_locations;
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| {
        single_val_mae[a].partial_cmp(&single_val_mae[b]).unwrap().then(a.cmp(&b))
    });

    let virtuals: Vec<BenchmarkRun> = (1..=n)
        .into_par_iter()
        .map(|k| {
            run_benchmark(
                MfInput::VirtualStation(ranking[..k].to_vec()),
                sets,
                trainer,
                hidden,
                hours,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let val_mae_per_k: Vec<f64> = virtuals.iter().map(|r| r.val_mae_mw).collect();
    let test_mae_per_k: Vec<f64> = virtuals.iter().map(|r| r.test_report.mae).collect();
    let k_star = argmin(&val_mae_per_k) + 1;
    let test_best_k = argmin(&test_mae_per_k) + 1;
    let chosen = virtuals.into_iter().nth(k_star - 1).unwrap();

    Ok((
        HongtaoResult {
            ranking,
            single_val_mae: single_val_mae.to_vec(),
            val_mae_per_k,
            test_mae_per_k,
            k_star,
            test_best_k,
            test_report: chosen.test_report.clone(),
        },
        chosen.model,
    ))
}

/// One row of the benchmark report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReportRow {
    pub label: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// Full suite output: every benchmark row plus the selection curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSuiteReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<BenchmarkReportRow>,
    pub hongtao: HongtaoResult,
}

/// Run every comparison forecaster with one shared trainer config: n
/// single-location models, none, all, average, and the rank-based virtual
/// station. Independent trainings run in parallel; row order is fixed.
pub fn run_suite(
    sets: &SampleSets,
    trainer: &TrainerConfig,
    hidden: &[usize],
    hours: StratumHours,
    config_hash: String,
) -> Result<BenchmarkSuiteReport> {
    let n = sets.schema.n_locations;
    let mut specs: Vec<MfInput> = (0..n).map(MfInput::Single).collect();
    specs.extend([MfInput::None, MfInput::All, MfInput::Average]);
    let runs: Vec<BenchmarkRun> = specs
        .into_par_iter()
        .map(|mf| run_benchmark(mf, sets, trainer, hidden, hours))
        .collect::<Result<Vec<_>>>()?;
    let single_val_mae: Vec<f64> = runs[..n].iter().map(|r| r.val_mae_mw).collect();
    let (hongtao, _) = hongtao_from_singles(&single_val_mae, sets, trainer, hidden, hours)?;

    let mut rows: Vec<BenchmarkReportRow> = runs
        .into_iter()
        .map(|r| BenchmarkReportRow { label: r.label, metrics: r.test_report })
        .collect();
    rows.push(BenchmarkReportRow {
        label: format!("hongtao(k*={})", hongtao.k_star),
        metrics: hongtao.test_report.clone(),
    });
    Ok(BenchmarkSuiteReport { config_hash, seed: trainer.seed, rows, hongtao })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_samples, synthesize, SplitConfig, SyntheticGroundTruth};
    use ndarray::Array2;

    fn sample_with_features(features: Array2<f64>) -> Sample {
        Sample {
            timestamp: chrono::Utc::now(),
            node_features: features,
            exo: Array1::from_vec(vec![0.25; EXO_LEN]),
            target: 0.0,
            actual_mw: 1.0,
        }
    }

    #[test]
    fn input_dims_match_schema_arithmetic() {
        assert_eq!(MfInput::None.mf_dim(9) + EXO_LEN, 50);
        assert_eq!(MfInput::Single(0).mf_dim(9) + EXO_LEN, 52);
        assert_eq!(MfInput::All.mf_dim(18), 36);
        assert_eq!(MfInput::Average.mf_dim(18) + EXO_LEN, 52);
        let model = DenseForecastModel::init(MfInput::All, 6, &[8], 0).unwrap();
        assert_eq!(model.in_dim(), 12 + EXO_LEN);
    }

    #[test]
    fn invalid_single_index_is_config_error() {
        let err = DenseForecastModel::init(MfInput::Single(6), 6, &[8], 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn average_of_identical_weather_equals_single() {
        let row = [1.25f64, -0.75];
        let features = Array2::from_shape_fn((5, 2), |(_, c)| row[c]);
        let sample = sample_with_features(features);
        let avg = MfInput::Average.features(&sample);
        let single = MfInput::Single(2).features(&sample);
        assert_eq!(avg, single);
    }

    #[test]
    fn virtual_station_of_all_equals_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features = Array2::from_shape_fn((4, 2), |_| {
            rand::Rng::random_range(&mut rng, -1.0..1.0)
        });
        let sample = sample_with_features(features);
        let avg = MfInput::Average.features(&sample);
        let virt = MfInput::VirtualStation(vec![0, 1, 2, 3]).features(&sample);
        for (a, b) in avg.iter().zip(virt.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn argmin_picks_first_minimum() {
        assert_eq!(argmin(&[3.0, 2.9, 3.1]), 1); // k* = 2
        assert_eq!(argmin(&[1.0, 1.0, 0.5, 0.5]), 2);
    }

    fn quick_sets(n: usize, seed: u64) -> SampleSets {
        let mut weights = vec![0.05; n];
        weights[0] = 1.0;
        let truth = SyntheticGroundTruth::new(weights, 2.0, seed);
        let dataset = synthesize(n, 70, &truth).unwrap();
        build_samples(&dataset, SplitConfig::default()).unwrap()
    }

    fn quick_trainer(seed: u64) -> TrainerConfig {
        TrainerConfig { learning_rate: 3e-3, max_epochs: 20, patience: 5, batch_size: 32, seed }
    }

    #[test]
    fn hongtao_exhaustive_at_n2() {
        let sets = quick_sets(2, 3);
        let (result, _) =
            hongtao_select(&sets, &quick_trainer(3), &[16], StratumHours::default()).unwrap();
        assert_eq!(result.val_mae_per_k.len(), 2);
        assert_eq!(result.test_mae_per_k.len(), 2);
        assert!(result.k_star == 1 || result.k_star == 2);
        assert_eq!(result.k_star, argmin(&result.val_mae_per_k) + 1);
        let mut sorted = result.ranking.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1]);
    }

    #[test]
    fn benchmark_run_is_deterministic() {
        let sets = quick_sets(3, 7);
        let trainer = quick_trainer(7);
        let a = run_benchmark(MfInput::Average, &sets, &trainer, &[16], StratumHours::default())
            .unwrap();
        let b = run_benchmark(MfInput::Average, &sets, &trainer, &[16], StratumHours::default())
            .unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.test_report, b.test_report);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn suite_rows_cover_every_spec() {
        let sets = quick_sets(3, 11);
        let report =
            run_suite(&sets, &quick_trainer(11), &[16], StratumHours::default(), "h".into())
                .unwrap();
        let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
        assert!(labels.contains(&"single(0)"));
        assert!(labels.contains(&"single(2)"));
        assert!(labels.contains(&"none"));
        assert!(labels.contains(&"all"));
        assert!(labels.contains(&"average"));
        assert!(labels.iter().any(|l| l.starts_with("hongtao(")));
        assert_eq!(report.rows.len(), 3 + 3 + 1);
        assert_eq!(report.hongtao.k_star, argmin(&report.hongtao.val_mae_per_k) + 1);
    }
}
