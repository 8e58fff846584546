//! Forecast error metrics: MAE, MAPE, the noon/night strata and the
//! 0.6/0.2/0.2 composite scores.

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hours (0-23) defining the two critical strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumHours {
    pub noon: u32,
    pub night: u32,
}

impl Default for StratumHours {
    fn default() -> Self {
        StratumHours { noon: 11, night: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mape_pct: f64,
    pub mae_noon: Option<f64>,
    pub mape_noon_pct: Option<f64>,
    pub mae_night: Option<f64>,
    pub mape_night_pct: Option<f64>,
    /// 0.6*overall + 0.2*noon + 0.2*night; absent when a stratum is empty.
    pub mae_com: Option<f64>,
    pub mape_com_pct: Option<f64>,
    pub count: usize,
    pub count_noon: usize,
    pub count_night: usize,
}

pub fn mae(actuals: &[f64], forecasts: &[f64]) -> Result<f64> {
    check_lengths(actuals, forecasts)?;
    let sum: f64 = actuals.iter().zip(forecasts).map(|(y, f)| (y - f).abs()).sum();
    Ok(sum / actuals.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(actuals: &[f64], forecasts: &[f64]) -> Result<f64> {
    check_lengths(actuals, forecasts)?;
    let mut sum = 0.0;
    for (y, f) in actuals.iter().zip(forecasts) {
        if *y == 0.0 {
            return Err(Error::Validation("MAPE undefined for zero actual load".into()));
        }
        sum += ((y - f) / y).abs();
    }
    Ok(100.0 * sum / actuals.len() as f64)
}

fn check_lengths(actuals: &[f64], forecasts: &[f64]) -> Result<()> {
    if actuals.is_empty() {
        return Err(Error::Validation("metrics need at least one sample".into()));
    }
    if actuals.len() != forecasts.len() {
        return Err(Error::Shape(format!(
            "actuals ({}) and forecasts ({}) differ in length",
            actuals.len(),
            forecasts.len()
        )));
    }
    Ok(())
}

/// Full report with noon/night strata and composite scores.
/// Mid-ranks for tied values (average of the positions a tie group spans).
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with mid-rank tie handling (Pearson on ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    if a.len() < 2 {
        return Err(Error::Shape("spearman needs at least 2 observations".into()));
    }
    let ra = midranks(a);
    let rb = midranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean).powi(2);
        db += (y - mean).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return Err(Error::Validation("spearman undefined when one input is constant".into()));
    }
    Ok(num / (da * db).sqrt())
}

pub fn stratified(
    actuals: &[f64],
    forecasts: &[f64],
    timestamps: &[DateTime<Utc>],
    hours: StratumHours,
) -> Result<MetricReport> {
    check_lengths(actuals, forecasts)?;
    if timestamps.len() != actuals.len() {
        return Err(Error::Shape("timestamps length mismatch".into()));
    }
    let overall_mae = mae(actuals, forecasts)?;
    let overall_mape = mape(actuals, forecasts)?;

    let subset = |hour: u32| -> (Vec<f64>, Vec<f64>) {
        let mut ys = Vec::new();
        let mut fs = Vec::new();
        for ((y, f), t) in actuals.iter().zip(forecasts).zip(timestamps) {
            if t.hour() == hour {
                ys.push(*y);
                fs.push(*f);
            }
        }
        (ys, fs)
    };
    let (noon_y, noon_f) = subset(hours.noon);
    let (night_y, night_f) = subset(hours.night);

    let stratum = |ys: &[f64], fs: &[f64]| -> Result<Option<(f64, f64)>> {
        if ys.is_empty() {
            Ok(None)
        } else {
            Ok(Some((mae(ys, fs)?, mape(ys, fs)?)))
        }
    };
    let noon = stratum(&noon_y, &noon_f)?;
    let night = stratum(&night_y, &night_f)?;

    let composite = |n: Option<f64>, g: Option<f64>, overall: f64| -> Option<f64> {
        Some(0.6 * overall + 0.2 * n? + 0.2 * g?)
    };

    Ok(MetricReport {
        mae: overall_mae,
        mape_pct: overall_mape,
        mae_noon: noon.map(|s| s.0),
        mape_noon_pct: noon.map(|s| s.1),
        mae_night: night.map(|s| s.0),
        mape_night_pct: night.map(|s| s.1),
        mae_com: composite(noon.map(|s| s.0), night.map(|s| s.0), overall_mae),
        mape_com_pct: composite(noon.map(|s| s.1), night.map(|s| s.1), overall_mape),
        count: actuals.len(),
        count_noon: noon_y.len(),
        count_night: night_y.len(),
    })
}
