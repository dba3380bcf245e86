//! Surface grids, in-sample curve reconstruction and out-of-sample curve
//! forecasts, including a moving-window walk-forward harness.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{moving_windows, Dataset, Tenor};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, SurfaceModel, TrainingPolicy};

pub const DEFAULT_HORIZON_DAYS: u32 = 31;

/// Model evaluated on a maturity × day lattice. `values` is row-major with
/// one row per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub maturities: Vec<f64>,
    pub days: Vec<f64>,
    pub values: Vec<f64>,
    pub model_tag: String,
}

/// Metadata written next to a grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub model_tag: String,
    pub config: ModelSpec,
    pub maturities: Vec<f64>,
    pub days: Vec<f64>,
}

impl SurfaceGrid {
    pub fn value(&self, day_row: usize, maturity_col: usize) -> f64 {
        self.values[day_row * self.maturities.len() + maturity_col]
    }

    /// `(min, max)` over all nodes.
    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Long-form `maturity_months,day_index,rate`, day-major.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["maturity_months", "day_index", "rate"])?;
        for (r, day) in self.days.iter().enumerate() {
            for (c, m) in self.maturities.iter().enumerate() {
                wtr.write_record([m.to_string(), day.to_string(), self.value(r, c).to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn sidecar(&self, config: &ModelSpec) -> GridSidecar {
        GridSidecar {
            model_tag: self.model_tag.clone(),
            config: config.clone(),
            maturities: self.maturities.clone(),
            days: self.days.clone(),
        }
    }
}

/// `n >= 2` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::config("grid resolution must be at least 2"));
    }
    if !(hi > lo) {
        return Err(Error::config("grid axis must have hi > lo"));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect())
}

fn check_axis(axis: &[f64], name: &str) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::config(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !v.is_finite()) || axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(format!("{name} axis must be finite and strictly increasing")));
    }
    Ok(())
}

pub fn map_surface(model: &SurfaceModel, maturities: &[f64], days: &[f64]) -> Result<SurfaceGrid> {
    check_axis(maturities, "maturity")?;
    check_axis(days, "day")?;
    let mut values = Vec::with_capacity(maturities.len() * days.len());
    for &d in days {
        for &m in maturities {
            values.push(model.predict(m, d)?);
        }
    }
    Ok(SurfaceGrid {
        maturities: maturities.to_vec(),
        days: days.to_vec(),
        values,
        model_tag: model.model.tag().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tenor: String,
    pub months: f64,
    pub rate: f64,
}

fn evaluate_curve(model: &SurfaceModel, day: u32, tenors: &[Tenor]) -> Result<Vec<CurvePoint>> {
    tenors
        .iter()
        .map(|t| {
            Ok(CurvePoint {
                tenor: t.label.clone(),
                months: t.months,
                rate: model.predict(t.months, f64::from(day))?,
            })
        })
        .collect()
}

/// In-sample curve at a day inside the training span.
pub fn reconstruct_curve(model: &SurfaceModel, day: u32, tenors: &[Tenor]) -> Result<Vec<CurvePoint>> {
    if day < model.first_training_day || day > model.last_training_day {
        return Err(Error::config(format!(
            "day {day} lies outside the training span [{}, {}]",
            model.first_training_day, model.last_training_day
        )));
    }
    evaluate_curve(model, day, tenors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSpec {
    pub horizon_days: u32,
    pub target_day: u32,
    pub tenors: Vec<Tenor>,
}

impl ForecastSpec {
    /// Target `horizon_days` after the model's last training day.
    pub fn after(model: &SurfaceModel, horizon_days: u32, tenors: Vec<Tenor>) -> Result<Self> {
        if horizon_days == 0 {
            return Err(Error::config("forecast horizon must be at least 1 day"));
        }
        Ok(ForecastSpec {
            horizon_days,
            target_day: model.last_training_day + horizon_days,
            tenors,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub tenor: String,
    pub months: f64,
    pub forecast: f64,
    pub truth: Option<f64>,
    pub abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveForecast {
    pub target_day: u32,
    pub target_date: NaiveDate,
    pub points: Vec<ForecastPoint>,
    /// Mean absolute error over tenors that have a truth value.
    pub mae: Option<f64>,
}

/// Curve at a day beyond the training span. Truth, when given, is matched by
/// exact date and tenor.
pub fn forecast_curve(model: &SurfaceModel, spec: &ForecastSpec, truth: Option<&Dataset>) -> Result<CurveForecast> {
    if spec.target_day <= model.last_training_day {
        return Err(Error::config(format!(
            "forecast target day {} is not beyond the training cutoff {}",
            spec.target_day, model.last_training_day
        )));
    }
    let target_date = model.origin + chrono::Days::new(u64::from(spec.target_day));
    let truth_day = truth.and_then(|t| t.day_of(target_date).map(|d| (t, d)));
    let points: Vec<ForecastPoint> = evaluate_curve(model, spec.target_day, &spec.tenors)?
        .into_iter()
        .map(|p| {
            let truth = truth_day.and_then(|(t, d)| t.rate_at(d, p.months));
            ForecastPoint {
                abs_error: truth.map(|v| (p.rate - v).abs()),
                tenor: p.tenor,
                months: p.months,
                forecast: p.rate,
                truth,
            }
        })
        .collect();
    let errors: Vec<f64> = points.iter().filter_map(|p| p.abs_error).collect();
    let mae = (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
    Ok(CurveForecast {
        target_day: spec.target_day,
        target_date,
        points,
        mae,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowForecast {
    pub window: usize,
    pub start_day: u32,
    /// Exclusive.
    pub end_day: u32,
    pub max_training_day: u32,
    pub forecast: CurveForecast,
}

/// Trains on each moving window and forecasts `horizon_days` past the
/// window's last day, scoring against the panel itself.
///
/// Only windows whose target falls inside the panel are evaluated. Window
/// `k` uses seed `seed + k`.
pub fn walk_forward(
    dataset: &Dataset,
    spec: &ModelSpec,
    window_days: u32,
    step_days: u32,
    horizon_days: u32,
    seed: u64,
) -> Result<Vec<WindowForecast>> {
    if horizon_days == 0 {
        return Err(Error::config("forecast horizon must be at least 1 day"));
    }
    spec.validate()?;
    if dataset.span_days() < window_days.saturating_add(horizon_days) {
        return Err(Error::data(format!(
            "panel spans {} days, walk-forward needs window {window_days} + horizon {horizon_days}",
            dataset.span_days()
        )));
    }
    let mut out = Vec::new();
    for (k, w) in moving_windows(dataset, window_days, step_days)?.into_iter().enumerate() {
        let target_day = w.end_day - 1 + horizon_days;
        if target_day > dataset.last_day() {
            continue;
        }
        let (model, _) = SurfaceModel::fit(&w.data, spec, TrainingPolicy::AllData { seed: seed + k as u64 })?;
        let max_training_day = w.data.last_day();
        if w.data.observations.iter().any(|o| o.day_index >= target_day) {
            return Err(Error::data(format!(
                "window {k} trains on day {max_training_day}, at or after target day {target_day}"
            )));
        }
        let fspec = ForecastSpec {
            horizon_days,
            target_day,
            tenors: dataset.tenors.clone(),
        };
        out.push(WindowForecast {
            window: k,
            start_day: w.start_day,
            end_day: w.end_day,
            max_training_day,
            forecast: forecast_curve(&model, &fspec, Some(dataset))?,
        });
    }
    Ok(out)
}
