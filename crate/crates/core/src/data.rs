//! Rate panels embedded in the {maturity, time} feature space.
//!
//! A panel is a table of dates by tenors. Every non-empty cell becomes an
//! [`Observation`] at `(maturity in months, calendar-day offset)`. Models never
//! see raw coordinates: both axes are min-max scaled to `[0, 1]` by a
//! [`ScalingSpec`], and the time axis is then stretched by an anisotropy factor.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The thirteen tenors of a LIBOR + swap curve, short end first.
pub const STANDARD_TENORS: [&str; 13] = [
    "1W", "1M", "2M", "3M", "6M", "9M", "1Y", "2Y", "3Y", "4Y", "5Y", "7Y", "10Y",
];

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Converts a tenor label such as `"1W"`, `"6M"` or `"10Y"` to months.
///
/// A week is 12/52 of a month.
pub fn tenor_to_months(label: &str) -> Result<f64> {
    let label = label.trim();
    let Some(unit) = label.chars().last() else {
        return Err(Error::Parse("empty tenor label".into()));
    };
    let count: u32 = label[..label.len() - unit.len_utf8()]
        .parse()
        .map_err(|_| Error::Parse(format!("bad tenor count in {label:?}")))?;
    if count == 0 {
        return Err(Error::Parse(format!("non-positive tenor count in {label:?}")));
    }
    let n = f64::from(count);
    match unit.to_ascii_uppercase() {
        'W' => Ok(n * 12.0 / 52.0),
        'M' => Ok(n),
        'Y' => Ok(12.0 * n),
        _ => Err(Error::Parse(format!("unknown tenor unit in {label:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tenor {
    pub label: String,
    pub months: f64,
}

impl Tenor {
    pub fn parse(label: &str) -> Result<Self> {
        Ok(Tenor {
            label: label.trim().to_string(),
            months: tenor_to_months(label)?,
        })
    }

    pub fn standard() -> Vec<Tenor> {
        STANDARD_TENORS
            .iter()
            .map(|l| Tenor::parse(l).expect("standard tenor"))
            .collect()
    }
}

/// One rate sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub maturity_months: f64,
    /// Calendar days since the panel origin.
    pub day_index: u32,
    /// Percent per annum.
    pub rate: f64,
}

/// A location in the scaled feature space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub u: f64,
    pub v: f64,
}

impl Point {
    pub fn new(u: f64, v: f64) -> Self {
        Point { u, v }
    }

    pub fn distance_sq(&self, other: &Point) -> f64 {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        du * du + dv * dv
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

/// A value attached to a scaled location: a training rate, or a residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub point: Point,
    pub value: f64,
}

impl Sample {
    pub fn new(u: f64, v: f64, value: f64) -> Self {
        Sample {
            point: Point { u, v },
            value,
        }
    }
}

/// Affine map from (months, days) to the unit square, with the time axis
/// multiplied by `anisotropy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub anisotropy: f64,
}

impl ScalingSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, anisotropy: f64) -> Result<Self> {
        let spec = ScalingSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            anisotropy,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Min-max bounds over a set of observations, anisotropy 1.
    ///
    /// An axis with a single distinct value gets a unit-wide range so that
    /// the spec stays valid.
    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::data("cannot scale an empty observation set"));
        }
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for o in obs {
            x_min = x_min.min(o.maturity_months);
            x_max = x_max.max(o.maturity_months);
            let d = f64::from(o.day_index);
            y_min = y_min.min(d);
            y_max = y_max.max(d);
        }
        if x_max <= x_min {
            x_max = x_min + 1.0;
        }
        if y_max <= y_min {
            y_max = y_min + 1.0;
        }
        ScalingSpec::new(x_min, x_max, y_min, y_max, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.anisotropy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("scaling bounds must be finite"));
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::config("scaling requires max > min on both axes"));
        }
        if self.anisotropy <= 0.0 {
            return Err(Error::config("anisotropy must be positive"));
        }
        Ok(())
    }

    pub fn with_anisotropy(mut self, anisotropy: f64) -> Result<Self> {
        self.anisotropy = anisotropy;
        self.validate()?;
        Ok(self)
    }

    /// Scaled coordinates of `(maturity months, day)`. Points outside the
    /// bounds extrapolate linearly.
    pub fn embed(&self, maturity_months: f64, day: f64) -> Point {
        Point {
            u: (maturity_months - self.x_min) / (self.x_max - self.x_min),
            v: self.anisotropy * (day - self.y_min) / (self.y_max - self.y_min),
        }
    }

    pub fn embed_observation(&self, obs: &Observation) -> Point {
        self.embed(obs.maturity_months, f64::from(obs.day_index))
    }

    /// Same bounds up to `tol`, ignoring anisotropy.
    pub fn same_bounds(&self, other: &ScalingSpec, tol: f64) -> bool {
        (self.x_min - other.x_min).abs() <= tol
            && (self.x_max - other.x_max).abs() <= tol
            && (self.y_min - other.y_min).abs() <= tol
            && (self.y_max - other.y_max).abs() <= tol
    }
}

/// A rate panel: observations over a dates × tenors table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub tenors: Vec<Tenor>,
    /// Dates that carry at least one observation, ascending.
    pub dates: Vec<NaiveDate>,
    /// Day 0 of the panel. Windows keep their parent's origin.
    pub origin: NaiveDate,
    pub scaling: ScalingSpec,
}

impl Dataset {
    /// Builds a dataset, validating that there are no duplicate cells.
    pub fn new(
        mut observations: Vec<Observation>,
        tenors: Vec<Tenor>,
        origin: NaiveDate,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::data("panel has no valid cells"));
        }
        if let Some(o) = observations.iter().find(|o| !o.rate.is_finite()) {
            return Err(Error::data(format!(
                "non-finite rate at day {} maturity {}",
                o.day_index, o.maturity_months
            )));
        }
        observations.sort_by(|a, b| {
            a.day_index
                .cmp(&b.day_index)
                .then(a.maturity_months.total_cmp(&b.maturity_months))
        });
        for pair in observations.windows(2) {
            if pair[0].day_index == pair[1].day_index
                && pair[0].maturity_months == pair[1].maturity_months
            {
                return Err(Error::data(format!(
                    "duplicate cell at day {} maturity {}",
                    pair[0].day_index, pair[0].maturity_months
                )));
            }
        }
        let mut dates: Vec<NaiveDate> = observations
            .iter()
            .map(|o| origin + chrono::Days::new(u64::from(o.day_index)))
            .collect();
        dates.dedup();
        let scaling = ScalingSpec::from_observations(&observations)?;
        Ok(Dataset {
            observations,
            tenors,
            dates,
            origin,
            scaling,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn with_anisotropy(mut self, anisotropy: f64) -> Result<Self> {
        self.scaling = self.scaling.with_anisotropy(anisotropy)?;
        Ok(self)
    }

    pub fn first_day(&self) -> u32 {
        self.observations[0].day_index
    }

    pub fn last_day(&self) -> u32 {
        self.observations[self.observations.len() - 1].day_index
    }

    /// Number of calendar days covered, counting both ends.
    pub fn span_days(&self) -> u32 {
        self.last_day() - self.first_day() + 1
    }

    pub fn day_of(&self, date: NaiveDate) -> Option<u32> {
        let days = (date - self.origin).num_days();
        u32::try_from(days).ok()
    }

    pub fn date_of(&self, day_index: u32) -> NaiveDate {
        self.origin + chrono::Days::new(u64::from(day_index))
    }

    /// Observations as scaled samples under this dataset's scaling.
    pub fn samples(&self) -> Vec<Sample> {
        self.samples_with(&self.scaling)
    }

    pub fn samples_with(&self, scaling: &ScalingSpec) -> Vec<Sample> {
        self.observations
            .iter()
            .map(|o| Sample {
                point: scaling.embed_observation(o),
                value: o.rate,
            })
            .collect()
    }

    /// Rate at an exact `(day, maturity)` cell.
    pub fn rate_at(&self, day_index: u32, maturity_months: f64) -> Option<f64> {
        let start = self
            .observations
            .partition_point(|o| o.day_index < day_index);
        self.observations[start..]
            .iter()
            .take_while(|o| o.day_index == day_index)
            .find(|o| o.maturity_months == maturity_months)
            .map(|o| o.rate)
    }

    /// Per-tenor time series, aligned on `dates`; `None` marks a missing cell.
    pub fn tenor_series(&self) -> Vec<Vec<Option<f64>>> {
        let day_pos: HashMap<u32, usize> = self
            .dates
            .iter()
            .enumerate()
            .map(|(i, d)| (self.day_of(*d).expect("date after origin"), i))
            .collect();
        let mut series = vec![vec![None; self.dates.len()]; self.tenors.len()];
        for o in &self.observations {
            if let Some(t) = self.tenor_index(o.maturity_months) {
                series[t][day_pos[&o.day_index]] = Some(o.rate);
            }
        }
        series
    }

    pub fn tenor_index(&self, maturity_months: f64) -> Option<usize> {
        self.tenors.iter().position(|t| t.months == maturity_months)
    }

    /// Parses a panel with header `date,<tenor>,...`.
    pub fn load_panel<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("date") {
            return Err(Error::data("panel header must be `date,<tenor>,...`"));
        }
        let tenors = headers
            .iter()
            .skip(1)
            .map(Tenor::parse)
            .collect::<Result<Vec<_>>>()?;
        for (i, t) in tenors.iter().enumerate() {
            if tenors[..i].iter().any(|o| o.months == t.months) {
                return Err(Error::data(format!("duplicate tenor column {}", t.label)));
            }
        }

        let mut origin: Option<NaiveDate> = None;
        let mut previous: Option<NaiveDate> = None;
        let mut observations = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let row = line + 2;
            let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT)
                .map_err(|e| Error::data(format!("row {row}: bad date {:?}: {e}", &record[0])))?;
            if let Some(prev) = previous {
                if date <= prev {
                    return Err(Error::data(format!(
                        "row {row}: dates must be strictly ascending ({date} after {prev})"
                    )));
                }
            }
            previous = Some(date);
            let origin = *origin.get_or_insert(date);
            let day_index = u32::try_from((date - origin).num_days())
                .map_err(|_| Error::data(format!("row {row}: date out of range")))?;
            if record.len() != tenors.len() + 1 {
                return Err(Error::data(format!(
                    "row {row}: expected {} fields, found {}",
                    tenors.len() + 1,
                    record.len()
                )));
            }
            for (tenor, cell) in tenors.iter().zip(record.iter().skip(1)) {
                if cell.is_empty() {
                    continue;
                }
                let rate: f64 = cell
                    .parse()
                    .map_err(|_| Error::data(format!("row {row}: malformed number {cell:?}")))?;
                if !rate.is_finite() {
                    return Err(Error::data(format!("row {row}: non-finite rate {cell:?}")));
                }
                observations.push(Observation {
                    maturity_months: tenor.months,
                    day_index,
                    rate,
                });
            }
        }
        let origin = origin.ok_or_else(|| Error::data("panel has no rows"))?;
        Dataset::new(observations, tenors, origin)
    }

    /// Writes the panel in the format read by [`Dataset::load_panel`].
    pub fn write_panel<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.tenors.iter().map(|t| t.label.clone()));
        wtr.write_record(&header)?;
        let series = self.tenor_series();
        for (i, date) in self.dates.iter().enumerate() {
            let mut row = vec![date.format(DATE_FORMAT).to_string()];
            row.extend(
                series
                    .iter()
                    .map(|s| s[i].map(|r| r.to_string()).unwrap_or_default()),
            );
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Sub-panel of observations with `start <= day < end`, rescaled on its
    /// own data and keeping this panel's anisotropy.
    pub fn day_range(&self, start: u32, end: u32) -> Result<Dataset> {
        let obs: Vec<Observation> = self
            .observations
            .iter()
            .filter(|o| o.day_index >= start && o.day_index < end)
            .copied()
            .collect();
        if obs.is_empty() {
            return Err(Error::data(format!("no observations in days [{start}, {end})")));
        }
        Dataset::new(obs, self.tenors.clone(), self.origin)?.with_anisotropy(self.scaling.anisotropy)
    }

    /// Sub-panel made of the observations at the given indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let obs = indices.iter().map(|&i| self.observations[i]).collect();
        Dataset::new(obs, self.tenors.clone(), self.origin)?.with_anisotropy(self.scaling.anisotropy)
    }
}

/// A random partition of `0..n` into training and test indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffles `0..n` with a seeded generator and keeps `round(0.8 n)` indices
/// for training. Both index lists come back sorted.
pub fn split_80_20(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 5 {
        return Err(Error::data(format!("need at least 5 observations to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    // round(0.8 n) in integers; 4n/5 never has a fractional part of one half.
    let n_train = (4 * n + 2) / 5;
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train: idx,
        test,
        seed,
    })
}

/// A contiguous time slice of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelWindow {
    pub start_day: u32,
    /// Exclusive.
    pub end_day: u32,
    pub data: Dataset,
}

/// Start days of windows `[first + k·step, first + k·step + window)` that lie
/// inside a span of `span` days. A window longer than the span collapses to
/// the whole span.
pub fn window_starts(span: u32, window_days: u32, step_days: u32) -> Vec<u32> {
    if window_days >= span {
        return vec![0];
    }
    (0..)
        .map(|k| k * step_days)
        .take_while(|s| s + window_days <= span)
        .collect()
}

/// Slices a panel into moving windows; each view carries its own scaling.
/// Windows with no observations are skipped.
pub fn moving_windows(dataset: &Dataset, window_days: u32, step_days: u32) -> Result<Vec<PanelWindow>> {
    if window_days < 30 {
        return Err(Error::config("window must cover at least 30 days"));
    }
    if step_days < 1 {
        return Err(Error::config("window step must be at least 1 day"));
    }
    let first = dataset.first_day();
    let span = dataset.span_days();
    let mut windows = Vec::new();
    for offset in window_starts(span, window_days, step_days) {
        let start = first + offset;
        let end = start + window_days.min(span);
        if let Ok(data) = dataset.day_range(start, end) {
            windows.push(PanelWindow {
                start_day: start,
                end_day: end,
                data,
            });
        }
    }
    Ok(windows)
}

/// Nelson-Siegel factors; `lambda` is the decay per month of maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsFactors {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
}

/// Nelson-Siegel rate at `maturity_months`. At zero maturity this is the
/// analytic limit `beta0 + beta1`.
pub fn ns_rate(f: &NsFactors, maturity_months: f64) -> f64 {
    let x = f.lambda * maturity_months;
    if x == 0.0 {
        return f.beta0 + f.beta1;
    }
    let decay = (-x).exp();
    let slope_loading = -(-x).exp_m1() / x;
    f.beta0 + f.beta1 * slope_loading + f.beta2 * (slope_loading - decay)
}

/// Generates a rate panel from one set of factors per day plus Gaussian
/// noise. Day `i` is `start + i` calendar days.
pub fn synthesize_panel(
    factor_paths: &[NsFactors],
    tenors: &[Tenor],
    start: NaiveDate,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if factor_paths.len() < 2 {
        return Err(Error::config("synthetic panel needs at least 2 days"));
    }
    if tenors.len() < 2 {
        return Err(Error::config("synthetic panel needs at least 2 tenors"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::config("noise sd must be finite and non-negative"));
    }
    if factor_paths.iter().any(|f| !(f.lambda > 0.0)) {
        return Err(Error::config("Nelson-Siegel lambda must be positive"));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::with_capacity(factor_paths.len() * tenors.len());
    for (day, factors) in factor_paths.iter().enumerate() {
        for tenor in tenors {
            let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            observations.push(Observation {
                maturity_months: tenor.months,
                day_index: day as u32,
                rate: ns_rate(factors, tenor.months) + eps,
            });
        }
    }
    Dataset::new(observations, tenors.to_vec(), start)
}

/// Recipe for daily factor paths: each factor is its base value plus a
/// linear drift plus an AR(1) deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorPathSpec {
    pub base: NsFactors,
    /// AR(1) coefficient shared by all deviations.
    pub phi: f64,
    pub level_sd: f64,
    pub slope_sd: f64,
    pub curvature_sd: f64,
    /// Per-day drift of the level factor.
    pub level_trend: f64,
}

impl Default for FactorPathSpec {
    fn default() -> Self {
        FactorPathSpec {
            base: NsFactors {
                beta0: 3.5,
                beta1: -2.0,
                beta2: 1.0,
                lambda: 0.0609,
            },
            phi: 0.98,
            level_sd: 0.01,
            slope_sd: 0.0,
            curvature_sd: 0.0,
            level_trend: 0.0,
        }
    }
}

impl FactorPathSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base.lambda > 0.0) {
            return Err(Error::config("lambda must be positive"));
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::config("AR(1) coefficient must lie in (-1, 1)"));
        }
        let sds = [self.level_sd, self.slope_sd, self.curvature_sd];
        if sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config("innovation sds must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn generate(&self, days: usize, seed: u64) -> Result<Vec<NsFactors>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let mut dev = [0.0f64; 3];
        let sds = [self.level_sd, self.slope_sd, self.curvature_sd];
        let mut paths = Vec::with_capacity(days);
        for day in 0..days {
            if day > 0 {
                for (d, sd) in dev.iter_mut().zip(sds) {
                    let shock: f64 = std.sample(&mut rng);
                    *d = self.phi * *d + sd * shock;
                }
            }
            paths.push(NsFactors {
                beta0: self.base.beta0 + self.level_trend * day as f64 + dev[0],
                beta1: self.base.beta1 + dev[1],
                beta2: self.base.beta2 + dev[2],
                lambda: self.base.lambda,
            });
        }
        Ok(paths)
    }
}
