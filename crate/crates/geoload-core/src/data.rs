//! Data ingestion, synthetic data generation and per-timestamp sample
//! construction with chronological train/validation/test splits.

use std::path::Path;

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Location;

pub const LAG_DAYS: usize = 7;
pub const HOURS_PER_DAY: usize = 24;
/// month(12) + weekday(7) + hour(24) + load lags(7)
pub const EXO_LEN: usize = 12 + 7 + 24 + LAG_DAYS;
/// temperature, relative humidity
pub const NODE_FEATURES: usize = 2;

/// Hourly load in MW, gap-free from `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    pub start: DateTime<Utc>,
    pub values_mw: Vec<f64>,
}

impl LoadSeries {
    pub fn len(&self) -> usize {
        self.values_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_mw.is_empty()
    }

    pub fn timestamp(&self, idx: usize) -> DateTime<Utc> {
        self.start + Duration::hours(idx as i64)
    }
}

/// Hourly temperature/humidity per location, gap-free from `start`.
/// Rows are timestamps, columns are locations.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub start: DateTime<Utc>,
    pub temp_c: Array2<f64>,
    pub rh_pct: Array2<f64>,
}

impl WeatherSeries {
    pub fn len(&self) -> usize {
        self.temp_c.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.temp_c.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub locations: Vec<Location>,
    pub load: LoadSeries,
    pub weather: WeatherSeries,
}

impl Dataset {
    pub fn new(locations: Vec<Location>, load: LoadSeries, weather: WeatherSeries) -> Result<Self> {
        if load.start != weather.start || load.len() != weather.len() {
            return Err(Error::Validation(format!(
                "load ({} from {}) and weather ({} from {}) are not aligned",
                load.len(),
                load.start,
                weather.len(),
                weather.start
            )));
        }
        if weather.n_locations() != locations.len() {
            return Err(Error::Validation(format!(
                "weather has {} locations, locations file has {}",
                weather.n_locations(),
                locations.len()
            )));
        }
        Ok(Dataset { locations, load, weather })
    }
}

/// Planted per-location importance for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    /// Importance of each location's temperature on the load response.
    pub weights: Vec<f64>,
    /// Standard deviation of the Gaussian load noise, MW.
    pub noise_level: f64,
    pub seed: u64,
    /// Temperature of minimum load response, degrees C.
    pub comfort_temp_c: f64,
    /// Slope of the V-shaped response, MW per degree of deviation.
    pub response_mw_per_deg: f64,
    /// Per-location (temperature degC, humidity pct) climate offsets.
    /// Defaults to small random temperature offsets when absent.
    #[serde(default)]
    pub climate_offsets: Option<Vec<(f64, f64)>>,
}

impl SyntheticGroundTruth {
    pub fn new(weights: Vec<f64>, noise_level: f64, seed: u64) -> Self {
        SyntheticGroundTruth {
            weights,
            noise_level,
            seed,
            comfort_temp_c: 18.0,
            response_mw_per_deg: 12.0,
            climate_offsets: None,
        }
    }
}

fn smooth_noise(rng: &mut ChaCha8Rng, len: usize, sigma: f64) -> Vec<f64> {
    // AR(1) with rho=0.95, stationary variance sigma^2
    let rho: f64 = 0.95;
    let innovation = sigma * (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut x = sigma * gaussian(rng);
    for _ in 0..len {
        out.push(x);
        x = rho * x + innovation * gaussian(rng);
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Deterministic synthetic dataset with planted location importance.
///
/// Locations sit on a 0.25-degree grid. Temperature is a shared
/// seasonal+diurnal sinusoid plus a per-location offset, a shared smooth
/// noise component and an independent per-location smooth component. Load
/// is a diurnal/weekly base profile plus a V-shaped response to the
/// weight-averaged temperature mix plus Gaussian noise.
pub fn synthesize(
    n_locations: usize,
    n_days: usize,
    ground_truth: &SyntheticGroundTruth,
) -> Result<Dataset> {
    let side = (n_locations as f64).sqrt().ceil() as usize;
    let locations: Vec<Location> = (0..n_locations)
        .map(|id| Location {
            id,
            lat: 30.0 + 0.25 * (id / side) as f64,
            lon: 114.0 + 0.25 * (id % side) as f64,
        })
        .collect();
    synthesize_at(locations, n_days, ground_truth)
}

/// Star layout: location 0 at the hub of a plus sign, the rest along four
/// arms at 0.25-degree steps. With the default grid rule this yields a
/// tree whose center, inner and outer positions are structurally distinct.
pub fn star_locations(n_locations: usize) -> Vec<Location> {
    let dirs = [(1i64, 0i64), (0, 1), (-1, 0), (0, -1)];
    (0..n_locations)
        .map(|id| {
            let (dr, dc) = if id == 0 {
                (0, 0)
            } else {
                let (dir, step) = ((id - 1) % 4, ((id - 1) / 4 + 1) as i64);
                (dirs[dir].0 * step, dirs[dir].1 * step)
            };
            Location { id, lat: 32.0 + 0.25 * dr as f64, lon: 115.0 + 0.25 * dc as f64 }
        })
        .collect()
}

/// Synthesis with an explicit location set (one weight per location).
pub fn synthesize_at(
    locations: Vec<Location>,
    n_days: usize,
    ground_truth: &SyntheticGroundTruth,
) -> Result<Dataset> {
    let n_locations = locations.len();
    if n_locations < 2 {
        return Err(Error::Config(format!("synthesis needs n_locations >= 2, got {n_locations}")));
    }
    if n_days < 60 {
        return Err(Error::Config(format!("synthesis needs n_days >= 60, got {n_days}")));
    }
    if ground_truth.weights.len() != n_locations {
        return Err(Error::Config(format!(
            "ground truth has {} weights for {n_locations} locations",
            ground_truth.weights.len()
        )));
    }
    if ground_truth.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::Validation("planted weights must be finite and >= 0".into()));
    }
    let weight_sum: f64 = ground_truth.weights.iter().sum();
    if weight_sum <= 0.0 {
        return Err(Error::Validation("planted weights are all zero".into()));
    }

    let len = n_days * HOURS_PER_DAY;
    let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(ground_truth.seed);

    let offsets: Vec<(f64, f64)> = match &ground_truth.climate_offsets {
        Some(provided) => {
            if provided.len() != n_locations {
                return Err(Error::Config(format!(
                    "ground truth has {} climate offsets for {n_locations} locations",
                    provided.len()
                )));
            }
            // Keep the rng draw so data with and without explicit offsets
            // share the rest of the noise stream.
            for _ in 0..n_locations {
                let _: f64 = rng.random_range(-2.0..2.0);
            }
            provided.clone()
        }
        None => (0..n_locations).map(|_| (rng.random_range(-2.0..2.0), 0.0)).collect(),
    };
    let shared = smooth_noise(&mut rng, len, 1.0);
    let locals: Vec<Vec<f64>> =
        (0..n_locations).map(|_| smooth_noise(&mut rng, len, 2.5)).collect();
    let rh_noise: Vec<Vec<f64>> =
        (0..n_locations).map(|_| smooth_noise(&mut rng, len, 6.0)).collect();

    let mut temp_c = Array2::zeros((len, n_locations));
    let mut rh_pct = Array2::zeros((len, n_locations));
    for t in 0..len {
        let stamp = start + Duration::hours(t as i64);
        let doy = stamp.ordinal0() as f64;
        let hour = stamp.hour() as f64;
        let seasonal = 15.0 + 10.0 * (std::f64::consts::TAU * doy / 365.0 - 1.9).sin();
        let diurnal = 4.0 * (std::f64::consts::TAU * (hour - 9.0) / 24.0).sin();
        for i in 0..n_locations {
            temp_c[[t, i]] = seasonal + diurnal + offsets[i].0 + shared[t] + locals[i][t];
            let rh = 65.0 - 1.2 * (temp_c[[t, i]] - 15.0) + offsets[i].1 + rh_noise[i][t];
            rh_pct[[t, i]] = rh.clamp(2.0, 98.0);
        }
    }

    let mut values_mw = Vec::with_capacity(len);
    for t in 0..len {
        let stamp = start + Duration::hours(t as i64);
        let hour = stamp.hour() as f64;
        let dow = stamp.weekday().num_days_from_monday() as f64;
        let base = 1000.0
            + 180.0 * (std::f64::consts::TAU * (hour - 3.0) / 24.0).sin()
            + 60.0 * (std::f64::consts::TAU * dow / 7.0).cos();
        let mix: f64 = (0..n_locations)
            .map(|i| ground_truth.weights[i] * temp_c[[t, i]])
            .sum::<f64>()
            / weight_sum;
        let response = ground_truth.response_mw_per_deg * (mix - ground_truth.comfort_temp_c).abs();
        let noise = ground_truth.noise_level * gaussian(&mut rng);
        values_mw.push((base + response + noise).max(1.0));
    }

    Dataset::new(locations, LoadSeries { start, values_mw }, WeatherSeries { start, temp_c, rh_pct })
}

#[derive(Deserialize, Serialize)]
struct LoadRow {
    timestamp: String,
    load_mw: f64,
}

#[derive(Deserialize, Serialize)]
struct WeatherRow {
    timestamp: String,
    location_id: usize,
    temp_c: f64,
    rh_pct: f64,
}

fn parse_stamp(s: &str, context: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| Error::Parse(format!("{context}: bad timestamp {s:?}: {e}")))
}

fn fmt_stamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Read and validate `load.csv`, `weather.csv`, `locations.csv`.
pub fn ingest(load_csv: &Path, weather_csv: &Path, locations_csv: &Path) -> Result<Dataset> {
    let locations = crate::graph::read_locations_csv(locations_csv)?;
    let n = locations.len();

    let mut reader = csv::Reader::from_path(load_csv)?;
    let mut stamps = Vec::new();
    let mut values_mw = Vec::new();
    for (idx, row) in reader.deserialize::<LoadRow>().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| Error::Parse(format!("{}:{line}: {e}", load_csv.display())))?;
        let stamp = parse_stamp(&row.timestamp, &format!("{}:{line}", load_csv.display()))?;
        if row.load_mw <= 0.0 {
            return Err(Error::Validation(format!(
                "{}:{line}: nonpositive load {} at {} (MAPE undefined)",
                load_csv.display(),
                row.load_mw,
                row.timestamp
            )));
        }
        stamps.push(stamp);
        values_mw.push(row.load_mw);
    }
    if stamps.is_empty() {
        return Err(Error::Validation(format!("{}: no load records", load_csv.display())));
    }
    let start = stamps[0];
    let mut gaps = Vec::new();
    for (i, stamp) in stamps.iter().enumerate() {
        let expected = start + Duration::hours(i as i64);
        if *stamp != expected {
            gaps.push(fmt_stamp(expected));
            if gaps.len() >= 5 {
                break;
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Gap(format!(
            "{}: missing or out-of-order stamps starting at {}",
            load_csv.display(),
            gaps.join(", ")
        )));
    }
    let len = values_mw.len();

    let mut temp_c = Array2::from_elem((len, n), f64::NAN);
    let mut rh_pct = Array2::from_elem((len, n), f64::NAN);
    let mut reader = csv::Reader::from_path(weather_csv)?;
    for (idx, row) in reader.deserialize::<WeatherRow>().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| Error::Parse(format!("{}:{line}: {e}", weather_csv.display())))?;
        let stamp = parse_stamp(&row.timestamp, &format!("{}:{line}", weather_csv.display()))?;
        if row.location_id >= n {
            return Err(Error::Reference(format!(
                "{}:{line}: unknown location_id {}",
                weather_csv.display(),
                row.location_id
            )));
        }
        let offset = (stamp - start).num_hours();
        if offset < 0 || offset as usize >= len || stamp != start + Duration::hours(offset) {
            return Err(Error::Validation(format!(
                "{}:{line}: timestamp {} outside the load range",
                weather_csv.display(),
                row.timestamp
            )));
        }
        if !(0.0..=100.0).contains(&row.rh_pct) {
            return Err(Error::Validation(format!(
                "{}:{line}: relative humidity {} outside [0, 100]",
                weather_csv.display(),
                row.rh_pct
            )));
        }
        temp_c[[offset as usize, row.location_id]] = row.temp_c;
        rh_pct[[offset as usize, row.location_id]] = row.rh_pct;
    }
    for t in 0..len {
        for i in 0..n {
            if temp_c[[t, i]].is_nan() || rh_pct[[t, i]].is_nan() {
                return Err(Error::Gap(format!(
                    "{}: missing weather for location {i} at {}",
                    weather_csv.display(),
                    fmt_stamp(start + Duration::hours(t as i64))
                )));
            }
        }
    }

    Dataset::new(locations, LoadSeries { start, values_mw }, WeatherSeries { start, temp_c, rh_pct })
}

/// Write a dataset back out in the ingest schemas.
pub fn write_csvs(dataset: &Dataset, load_csv: &Path, weather_csv: &Path, locations_csv: &Path) -> Result<()> {
    crate::graph::write_locations_csv(locations_csv, &dataset.locations)?;

    let mut writer = csv::Writer::from_path(load_csv)?;
    for (i, v) in dataset.load.values_mw.iter().enumerate() {
        writer.serialize(LoadRow { timestamp: fmt_stamp(dataset.load.timestamp(i)), load_mw: *v })?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(weather_csv)?;
    for t in 0..dataset.weather.len() {
        let stamp = fmt_stamp(dataset.load.timestamp(t));
        for i in 0..dataset.weather.n_locations() {
            writer.serialize(WeatherRow {
                timestamp: stamp.clone(),
                location_id: i,
                temp_c: dataset.weather.temp_c[[t, i]],
                rh_pct: dataset.weather.rh_pct[[t, i]],
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// One forecasting sample: node features at the target hour, exogenous
/// calendar/lag features, and the target load. Continuous features and the
/// target are z-scored with train statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub timestamp: DateTime<Utc>,
    /// n x 2 (temperature, humidity), z-scored per location and channel.
    pub node_features: Array2<f64>,
    /// Length EXO_LEN; one-hots raw, lags z-scored.
    pub exo: Array1<f64>,
    /// z-scored target.
    pub target: f64,
    /// Target in natural units, MW.
    pub actual_mw: f64,
}

/// Per-feature train-split normalization statistics. Weather channels are
/// z-scored with one mean/std per channel, pooled over all locations, so
/// that between-location climate differences survive normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub temp_mean: f64,
    pub temp_std: f64,
    pub rh_mean: f64,
    pub rh_std: f64,
    pub lag_mean: Vec<f64>,
    pub lag_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl NormStats {
    pub fn denormalize_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }

    pub fn denormalize_lag(&self, lag_idx: usize, z: f64) -> f64 {
        z * self.lag_std[lag_idx] + self.lag_mean[lag_idx]
    }
}

/// Identifies the feature layout a model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub n_locations: usize,
    pub node_feature_names: Vec<String>,
    pub exo_len: usize,
    pub lag_days: usize,
}

impl FeatureSchema {
    pub fn new(n_locations: usize) -> Self {
        FeatureSchema {
            n_locations,
            node_feature_names: vec!["temp_c".into(), "rh_pct".into()],
            exo_len: EXO_LEN,
            lag_days: LAG_DAYS,
        }
    }

    pub fn hash(&self) -> String {
        crate::config::sha256_json(self)
    }
}

/// Chronological split fractions. Validation is carved from the tail of
/// the training range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.2, val_fraction_of_train: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct SampleSets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: NormStats,
    pub schema: FeatureSchema,
}

struct RawSample {
    timestamp: DateTime<Utc>,
    t_idx: usize,
    lags_mw: [f64; LAG_DAYS],
    target_mw: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, what: &str) -> Result<(f64, f64)> {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std <= 0.0 {
        return Err(Error::Validation(format!("constant feature: {what} has zero variance in train split")));
    }
    Ok((mean, std))
}

/// Build z-scored samples and split them chronologically. Lag features of
/// the sample at day d, hour h are the raw loads at (d-1..d-7, h).
pub fn build_samples(dataset: &Dataset, split: SplitConfig) -> Result<SampleSets> {
    let len = dataset.load.len();
    let first = LAG_DAYS * HOURS_PER_DAY;
    if len <= first {
        return Err(Error::Validation(format!(
            "need more than {LAG_DAYS} days of history; first usable timestamp would be {}",
            fmt_stamp(dataset.load.timestamp(first))
        )));
    }
    if !(0.0..1.0).contains(&split.test_fraction) || !(0.0..1.0).contains(&split.val_fraction_of_train) {
        return Err(Error::Config("split fractions must lie in [0, 1)".into()));
    }

    let mut raw = Vec::with_capacity(len - first);
    for t in first..len {
        let mut lags = [0.0; LAG_DAYS];
        for (d, lag) in lags.iter_mut().enumerate() {
            *lag = dataset.load.values_mw[t - (d + 1) * HOURS_PER_DAY];
        }
        raw.push(RawSample {
            timestamp: dataset.load.timestamp(t),
            t_idx: t,
            lags_mw: lags,
            target_mw: dataset.load.values_mw[t],
        });
    }

    let total = raw.len();
    let test_count = (total as f64 * split.test_fraction).round() as usize;
    let rest = total - test_count;
    let val_count = (rest as f64 * split.val_fraction_of_train).round() as usize;
    let train_count = rest - val_count;
    if train_count == 0 || (split.test_fraction > 0.0 && test_count == 0) {
        return Err(Error::Validation("split produced an empty range".into()));
    }

    let n = dataset.weather.n_locations();
    let train_raw = &raw[..train_count];
    let train_idx: Vec<usize> = train_raw.iter().map(|r| r.t_idx).collect();

    let mut stats = NormStats {
        temp_mean: 0.0,
        temp_std: 0.0,
        rh_mean: 0.0,
        rh_std: 0.0,
        lag_mean: Vec::with_capacity(LAG_DAYS),
        lag_std: Vec::with_capacity(LAG_DAYS),
        target_mean: 0.0,
        target_std: 0.0,
    };
    let temps: Vec<f64> = train_idx
        .iter()
        .flat_map(|&t| (0..n).map(move |i| (t, i)))
        .map(|(t, i)| dataset.weather.temp_c[[t, i]])
        .collect();
    (stats.temp_mean, stats.temp_std) = mean_std(temps.iter().copied(), "temperature")?;
    let rhs: Vec<f64> = train_idx
        .iter()
        .flat_map(|&t| (0..n).map(move |i| (t, i)))
        .map(|(t, i)| dataset.weather.rh_pct[[t, i]])
        .collect();
    (stats.rh_mean, stats.rh_std) = mean_std(rhs.iter().copied(), "humidity")?;
    for d in 0..LAG_DAYS {
        let lags = train_raw.iter().map(|r| r.lags_mw[d]).collect::<Vec<_>>();
        let (m, s) = mean_std(lags.iter().copied(), &format!("lag d-{}", d + 1))?;
        stats.lag_mean.push(m);
        stats.lag_std.push(s);
    }
    let targets = train_raw.iter().map(|r| r.target_mw).collect::<Vec<_>>();
    let (m, s) = mean_std(targets.iter().copied(), "target load")?;
    stats.target_mean = m;
    stats.target_std = s;

    let build = |r: &RawSample| -> Sample {
        let mut node_features = Array2::zeros((n, NODE_FEATURES));
        for i in 0..n {
            node_features[[i, 0]] =
                (dataset.weather.temp_c[[r.t_idx, i]] - stats.temp_mean) / stats.temp_std;
            node_features[[i, 1]] =
                (dataset.weather.rh_pct[[r.t_idx, i]] - stats.rh_mean) / stats.rh_std;
        }
        let mut exo = Array1::zeros(EXO_LEN);
        exo[(r.timestamp.month0()) as usize] = 1.0;
        exo[12 + r.timestamp.weekday().num_days_from_monday() as usize] = 1.0;
        exo[12 + 7 + r.timestamp.hour() as usize] = 1.0;
        for d in 0..LAG_DAYS {
            exo[12 + 7 + 24 + d] = (r.lags_mw[d] - stats.lag_mean[d]) / stats.lag_std[d];
        }
        Sample {
            timestamp: r.timestamp,
            node_features,
            exo,
            target: (r.target_mw - stats.target_mean) / stats.target_std,
            actual_mw: r.target_mw,
        }
    };

    let train = raw[..train_count].iter().map(build).collect();
    let val = raw[train_count..train_count + val_count].iter().map(build).collect();
    let test = raw[train_count + val_count..].iter().map(build).collect();

    Ok(SampleSets { train, val, test, stats, schema: FeatureSchema::new(n) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_truth(n: usize, noise: f64, seed: u64) -> SyntheticGroundTruth {
        let mut w = vec![0.2; n];
        w[n - 1] = 2.0;
        SyntheticGroundTruth::new(w, noise, seed)
    }

    #[test]
    fn synthesis_is_deterministic() {
        let gt = tiny_truth(4, 20.0, 7);
        let a = synthesize(4, 60, &gt).unwrap();
        let b = synthesize(4, 60, &gt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthesis_record_count() {
        let gt = tiny_truth(4, 20.0, 7);
        let d = synthesize(4, 60, &gt).unwrap();
        assert_eq!(d.load.len(), 1440);
        assert_eq!(d.weather.len(), 1440);
        assert_eq!(d.weather.n_locations(), 4);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let gt = SyntheticGroundTruth::new(vec![0.0; 4], 10.0, 1);
        assert!(matches!(synthesize(4, 60, &gt), Err(Error::Validation(_))));
    }

    fn residual_correlation(dataset: &Dataset, gt: &SyntheticGroundTruth, loc: usize) -> f64 {
        // remove the known calendar base, correlate the remainder with the
        // V-shaped transform of one location's temperature
        let len = dataset.load.len();
        let mut resid = Vec::with_capacity(len);
        let mut probe = Vec::with_capacity(len);
        for t in 0..len {
            let stamp = dataset.load.timestamp(t);
            let hour = stamp.hour() as f64;
            let dow = stamp.weekday().num_days_from_monday() as f64;
            let base = 1000.0
                + 180.0 * (std::f64::consts::TAU * (hour - 3.0) / 24.0).sin()
                + 60.0 * (std::f64::consts::TAU * dow / 7.0).cos();
            resid.push(dataset.load.values_mw[t] - base);
            probe.push((dataset.weather.temp_c[[t, loc]] - gt.comfort_temp_c).abs());
        }
        correlation(&resid, &probe)
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn one_hot_weights_with_zero_noise_single_location_signal() {
        let mut w = vec![0.0; 5];
        w[3] = 1.0;
        let gt = SyntheticGroundTruth::new(w, 0.0, 11);
        let d = synthesize(5, 90, &gt).unwrap();
        assert!(residual_correlation(&d, &gt, 3) > 0.9);
    }

    #[test]
    fn noise_degrades_planted_correlation_monotonically() {
        let mut corrs = Vec::new();
        for noise in [0.0, 60.0, 240.0] {
            let mut w = vec![0.0; 4];
            w[2] = 1.0;
            let gt = SyntheticGroundTruth::new(w, noise, 5);
            let d = synthesize(4, 90, &gt).unwrap();
            corrs.push(residual_correlation(&d, &gt, 2));
        }
        assert!(corrs[0] > corrs[1] && corrs[1] > corrs[2], "{corrs:?}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gt = tiny_truth(3, 15.0, 3);
        let d = synthesize(3, 60, &gt).unwrap();
        let load = dir.path().join("load.csv");
        let weather = dir.path().join("weather.csv");
        let locs = dir.path().join("locations.csv");
        write_csvs(&d, &load, &weather, &locs).unwrap();
        let back = ingest(&load, &weather, &locs).unwrap();
        assert_eq!(back.locations, d.locations);
        assert_eq!(back.load.start, d.load.start);
        for (a, b) in back.load.values_mw.iter().zip(&d.load.values_mw) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ingest_reports_weather_gap_with_location_and_hour() {
        let dir = tempfile::tempdir().unwrap();
        let gt = tiny_truth(2, 15.0, 3);
        let d = synthesize(2, 60, &gt).unwrap();
        let load = dir.path().join("load.csv");
        let weather = dir.path().join("weather.csv");
        let locs = dir.path().join("locations.csv");
        write_csvs(&d, &load, &weather, &locs).unwrap();
        // drop the row for location 1 at hour 13
        let text = std::fs::read_to_string(&weather).unwrap();
        let filtered: Vec<&str> =
            text.lines().filter(|l| !l.starts_with("2021-01-01T13:00:00Z,1,")).collect();
        std::fs::write(&weather, filtered.join("\n")).unwrap();
        let err = ingest(&load, &weather, &locs).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("location 1") && msg.contains("13:00"), "{msg}");
    }

    #[test]
    fn ingest_rejects_nonpositive_load() {
        let dir = tempfile::tempdir().unwrap();
        let gt = tiny_truth(2, 15.0, 3);
        let d = synthesize(2, 60, &gt).unwrap();
        let load = dir.path().join("load.csv");
        let weather = dir.path().join("weather.csv");
        let locs = dir.path().join("locations.csv");
        write_csvs(&d, &load, &weather, &locs).unwrap();
        let text = std::fs::read_to_string(&load).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let stamp = lines[5].split(',').next().unwrap().to_string();
        lines[5] = format!("{stamp},0.0");
        std::fs::write(&load, lines.join("\n")).unwrap();
        assert!(matches!(ingest(&load, &weather, &locs), Err(Error::Validation(_))));
    }

    #[test]
    fn ingest_rejects_unknown_location() {
        let dir = tempfile::tempdir().unwrap();
        let gt = tiny_truth(2, 15.0, 3);
        let d = synthesize(2, 60, &gt).unwrap();
        let load = dir.path().join("load.csv");
        let weather = dir.path().join("weather.csv");
        let locs = dir.path().join("locations.csv");
        write_csvs(&d, &load, &weather, &locs).unwrap();
        let mut text = std::fs::read_to_string(&weather).unwrap();
        text.push_str("2021-01-02T00:00:00Z,9,10.0,50.0\n");
        std::fs::write(&weather, text).unwrap();
        assert!(matches!(ingest(&load, &weather, &locs), Err(Error::Reference(_))));
    }

    #[test]
    fn lag_window_consumes_first_seven_days() {
        let gt = tiny_truth(2, 15.0, 3);
        let d = synthesize(2, 60, &gt).unwrap();
        let sets = build_samples(&d, SplitConfig::default()).unwrap();
        let total = sets.train.len() + sets.val.len() + sets.test.len();
        assert_eq!(total, (60 - 7) * 24);
        assert_eq!(sets.train[0].timestamp, d.load.timestamp(7 * 24));
    }

    #[test]
    fn too_little_history_is_an_error() {
        let gt = tiny_truth(2, 15.0, 3);
        let mut d = synthesize(2, 60, &gt).unwrap();
        d.load.values_mw.truncate(7 * 24);
        let rows = d.weather.temp_c.nrows();
        let n = d.weather.n_locations();
        d.weather.temp_c = d.weather.temp_c.clone().slice_move(ndarray::s![..rows.min(7 * 24), ..n]);
        d.weather.rh_pct = d.weather.rh_pct.clone().slice_move(ndarray::s![..rows.min(7 * 24), ..n]);
        let err = build_samples(&d, SplitConfig::default()).unwrap_err();
        assert!(err.to_string().contains("2021-01-08T00:00:00Z"), "{err}");
    }

    #[test]
    fn hour_one_hot_is_set_correctly() {
        let gt = tiny_truth(2, 15.0, 3);
        let d = synthesize(2, 60, &gt).unwrap();
        let sets = build_samples(&d, SplitConfig::default()).unwrap();
        let sample = sets.train.iter().find(|s| s.timestamp.hour() == 11).unwrap();
        for h in 0..24 {
            let expected = if h == 11 { 1.0 } else { 0.0 };
            assert_eq!(sample.exo[12 + 7 + h], expected);
        }
    }

    #[test]
    fn train_targets_are_z_scored() {
        let gt = tiny_truth(3, 15.0, 3);
        let d = synthesize(3, 80, &gt).unwrap();
        let sets = build_samples(&d, SplitConfig::default()).unwrap();
        let n = sets.train.len() as f64;
        let mean: f64 = sets.train.iter().map(|s| s.target).sum::<f64>() / n;
        let var: f64 = sets.train.iter().map(|s| s.target * s.target).sum::<f64>() / n - mean * mean;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "std {}", var.sqrt());
    }

    #[test]
    fn stats_come_from_train_split_only() {
        let gt = tiny_truth(3, 15.0, 3);
        let d = synthesize(3, 80, &gt).unwrap();
        let sets = build_samples(&d, SplitConfig::default()).unwrap();
        // recompute target stats from the train samples' natural units
        let n = sets.train.len() as f64;
        let mean: f64 = sets.train.iter().map(|s| s.actual_mw).sum::<f64>() / n;
        let var: f64 =
            sets.train.iter().map(|s| (s.actual_mw - mean) * (s.actual_mw - mean)).sum::<f64>() / n;
        assert!((mean - sets.stats.target_mean).abs() < 1e-9);
        assert!((var.sqrt() - sets.stats.target_std).abs() < 1e-9);
    }

    #[test]
    fn lag_features_round_trip_to_raw_loads() {
        let gt = tiny_truth(2, 15.0, 3);
        let d = synthesize(2, 62, &gt).unwrap();
        let sets = build_samples(&d, SplitConfig::default()).unwrap();
        for (k, sample) in sets.train.iter().enumerate().step_by(97) {
            let t = 7 * 24 + k;
            for lag in 0..LAG_DAYS {
                let z = sample.exo[12 + 7 + 24 + lag];
                let raw = sets.stats.denormalize_lag(lag, z);
                let expected = d.load.values_mw[t - (lag + 1) * 24];
                assert!((raw - expected).abs() < 1e-9);
            }
        }
    }
}
