//! Error metrics, residual variography, curve factors and panel diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{tenor_to_months, Dataset, Sample};
use crate::error::{Error, Result};
use crate::geostat::{
    default_max_lag, empirical_variogram, fit_variogram, weighted_sse, EmpiricalVariogram,
    VariogramModel, VariogramShape,
};

pub const DEFAULT_NUGGET_THRESHOLD: f64 = 0.9;
const MIN_RESIDUALS: usize = 30;
const MIN_DATES: usize = 30;
const RESIDUAL_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Mean of `predicted - observed`.
    pub bias: f64,
    pub n: usize,
}

/// Metrics over `(observed, predicted)` pairs.
pub fn metrics(pairs: &[(f64, f64)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::data("metrics need at least one pair"));
    }
    let n = pairs.len() as f64;
    let (mut sq, mut abs, mut sum) = (0.0, 0.0, 0.0);
    for &(obs, pred) in pairs {
        let e = pred - obs;
        sq += e * e;
        abs += e.abs();
        sum += e;
    }
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        bias: sum / n,
        n: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    PureNugget,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `(u, v, observed - predicted)`.
    pub residuals: Vec<Sample>,
    pub nugget_ratio: f64,
    pub residual_variance: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub best_fit: Option<VariogramModel>,
    pub smallest_lag: Option<f64>,
    pub empirical: Option<EmpiricalVariogram>,
}

/// Decides whether residuals look spatially uncorrelated.
///
/// The best of the structured shapes (by weighted SSE) is fitted to the
/// residual variogram. The verdict is pure nugget when the nugget carries at
/// least `threshold` of the total sill, or when the fitted range is shorter
/// than the first lag actually observed.
pub fn residual_nugget_check(residuals: &[Sample], threshold: f64) -> Result<ResidualReport> {
    if residuals.len() < MIN_RESIDUALS {
        return Err(Error::data(format!(
            "residual check needs at least {MIN_RESIDUALS} residuals, got {}",
            residuals.len()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config("nugget threshold must lie in [0, 1]"));
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().map(|s| s.value).sum::<f64>() / n;
    let variance = residuals.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / n;
    let mut report = ResidualReport {
        residuals: residuals.to_vec(),
        nugget_ratio: 1.0,
        residual_variance: variance,
        threshold,
        verdict: Verdict::PureNugget,
        best_fit: None,
        smallest_lag: None,
        empirical: None,
    };
    if residuals.iter().all(|s| s.value == residuals[0].value) {
        return Ok(report);
    }

    let max_lag = default_max_lag(residuals);
    if !(max_lag > 0.0) {
        return Ok(report);
    }
    let emp = empirical_variogram(residuals, RESIDUAL_BINS, max_lag)?;
    let mut best: Option<(f64, VariogramModel)> = None;
    for shape in VariogramShape::STRUCTURED {
        let model = fit_variogram(&emp, shape)?;
        let sse = weighted_sse(&emp, &model);
        if best.map_or(true, |(b, _)| sse < b) {
            best = Some((sse, model));
        }
    }
    let (_, model) = best.expect("three shapes fitted");
    let total = model.total_sill();
    let ratio = if total > 0.0 { (model.nugget / total).clamp(0.0, 1.0) } else { 1.0 };
    let smallest = emp.usable().map(|l| l.h).fold(f64::INFINITY, f64::min);

    report.nugget_ratio = ratio;
    report.verdict = if ratio >= threshold || model.range < smallest {
        Verdict::PureNugget
    } else {
        Verdict::Structured
    };
    report.best_fit = Some(model);
    report.smallest_lag = Some(smallest);
    report.empirical = Some(emp);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFactors {
    pub level: f64,
    pub slope: f64,
    pub curvature: f64,
}

/// Empirical factors from a curve given as `(maturity months, rate)` pairs.
pub fn curve_factors(curve: &[(f64, f64)]) -> Result<CurveFactors> {
    let rate = |label: &str| -> Result<f64> {
        let months = tenor_to_months(label)?;
        curve
            .iter()
            .find(|(m, _)| (m - months).abs() < 1e-9)
            .map(|&(_, r)| r)
            .ok_or_else(|| Error::data(format!("curve has no {label} rate")))
    };
    let (r3m, r2y, r10y) = (rate("3M")?, rate("2Y")?, rate("10Y")?);
    Ok(CurveFactors {
        level: r10y,
        slope: r10y - r3m,
        curvature: 2.0 * r2y - r3m - r10y,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenorStat {
    pub tenor: String,
    pub months: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizedFacts {
    pub n_dates: usize,
    pub mean_curve: Vec<TenorStat>,
    pub mean_curve_nondecreasing: bool,
    /// Slopes between adjacent tenors, per month of maturity, never increase.
    pub mean_curve_concave: bool,
    pub increasing_and_concave: bool,
    /// Sample standard deviation of day-to-day changes between consecutive
    /// panel dates.
    pub change_sd: Vec<TenorStat>,
    /// `sd(1M) > sd(10Y)`; absent when either tenor is missing.
    pub short_end_more_volatile: Option<bool>,
    /// Dates with `rate(1W) > rate(1M)`; absent when either tenor is missing.
    pub inversions: Option<usize>,
}

const SHAPE_TOL: f64 = 1e-12;

pub fn stylized_facts(dataset: &Dataset) -> Result<StylizedFacts> {
    let n_dates = dataset.dates.len();
    if n_dates < MIN_DATES {
        return Err(Error::data(format!(
            "stylized facts need at least {MIN_DATES} dates, got {n_dates}"
        )));
    }
    let series = dataset.tenor_series();
    let mut order: Vec<usize> = (0..dataset.tenors.len()).collect();
    order.sort_by(|&a, &b| dataset.tenors[a].months.total_cmp(&dataset.tenors[b].months));

    let stat = |t: usize, value: f64| TenorStat {
        tenor: dataset.tenors[t].label.clone(),
        months: dataset.tenors[t].months,
        value,
    };
    let mut mean_curve = Vec::new();
    let mut change_sd = Vec::new();
    for &t in &order {
        let present: Vec<f64> = series[t].iter().flatten().copied().collect();
        if present.is_empty() {
            continue;
        }
        mean_curve.push(stat(t, present.iter().sum::<f64>() / present.len() as f64));
        let changes: Vec<f64> = series[t]
            .windows(2)
            .filter_map(|w| Some(w[1]? - w[0]?))
            .collect();
        if changes.len() >= 2 {
            change_sd.push(stat(t, sample_sd(&changes)));
        }
    }

    let nondecreasing = mean_curve
        .windows(2)
        .all(|w| w[1].value >= w[0].value - SHAPE_TOL);
    let slopes: Vec<f64> = mean_curve
        .windows(2)
        .map(|w| (w[1].value - w[0].value) / (w[1].months - w[0].months))
        .collect();
    let concave = slopes.windows(2).all(|w| w[1] <= w[0] + SHAPE_TOL);

    let find = |stats: &[TenorStat], months: f64| {
        stats.iter().find(|s| (s.months - months).abs() < 1e-9).map(|s| s.value)
    };
    let (m1w, m1m, m10y) = (tenor_to_months("1W")?, 1.0, 120.0);
    let short_end_more_volatile = match (find(&change_sd, m1m), find(&change_sd, m10y)) {
        (Some(a), Some(b)) => Some(a > b),
        _ => None,
    };
    let inversions = match (dataset.tenor_index(m1w), dataset.tenor_index(m1m)) {
        (Some(w), Some(m)) => Some(
            series[w]
                .iter()
                .zip(&series[m])
                .filter(|(a, b)| matches!((a, b), (Some(a), Some(b)) if a > b))
                .count(),
        ),
        _ => None,
    };

    Ok(StylizedFacts {
        n_dates,
        mean_curve,
        mean_curve_nondecreasing: nondecreasing,
        mean_curve_concave: concave,
        increasing_and_concave: nondecreasing && concave,
        change_sd,
        short_end_more_volatile,
        inversions,
    })
}

fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Pearson correlations of rate levels; `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub tenors: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    /// Square CSV with a header row of tenor labels; undefined entries are `NA`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["tenor".to_string()];
        header.extend(self.tenors.iter().cloned());
        wtr.write_record(&header)?;
        for (label, row) in self.tenors.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string())));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Correlations over dates where both tenors are observed.
pub fn correlation_matrix(dataset: &Dataset) -> Result<CorrelationMatrix> {
    if dataset.dates.len() < 3 {
        return Err(Error::data("correlation matrix needs at least 3 dates"));
    }
    let series = dataset.tenor_series();
    let k = series.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let mut r = pearson(&series[i], &series[j]);
            if i == j {
                r = r.map(|_| 1.0);
            }
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        tenors: dataset.tenors.iter().map(|t| t.label.clone()).collect(),
        values,
    })
}

fn pearson(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    let constant = |f: fn(&(f64, f64)) -> f64| pairs.iter().all(|p| f(p) == f(&pairs[0]));
    if pairs.len() < 3 || constant(|p| p.0) || constant(|p| p.1) {
        return None;
    }
    let n = pairs.len() as f64;
    let (sx, sy) = pairs.iter().fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
