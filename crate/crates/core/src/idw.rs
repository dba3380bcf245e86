//! Inverse distance weighting.

use serde::{Deserialize, Serialize};

use crate::data::{Point, Sample};
use crate::error::{Error, Result};

/// Which training points enter a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    All,
    Nearest(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdwConfig {
    pub power: f64,
    pub neighbors: Neighborhood,
    /// Distance below which a query counts as sitting on a training point.
    pub tie_epsilon: f64,
}

impl Default for IdwConfig {
    fn default() -> Self {
        IdwConfig {
            power: 2.0,
            neighbors: Neighborhood::All,
            tie_epsilon: 1e-12,
        }
    }
}

impl IdwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::config("IDW power must be positive"));
        }
        if !(self.tie_epsilon >= 0.0) {
            return Err(Error::config("IDW tie epsilon must be non-negative"));
        }
        if self.neighbors == Neighborhood::Nearest(0) {
            return Err(Error::config("IDW neighbor count must be at least 1"));
        }
        Ok(())
    }
}

/// Weighted mean of training values with weights `d^-power`.
///
/// A query within `tie_epsilon` of one or more training points returns the
/// mean of those points' values.
pub fn idw_predict(config: &IdwConfig, training: &[Sample], query: Point) -> Result<f64> {
    if training.is_empty() {
        return Err(Error::data("IDW needs at least one training point"));
    }
    let mut dists: Vec<(f64, f64)> = training
        .iter()
        .map(|s| (s.point.distance(&query), s.value))
        .collect();

    let (tie_sum, tie_count) = dists
        .iter()
        .filter(|(d, _)| *d <= config.tie_epsilon)
        .fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
    if tie_count > 0 {
        return Ok(tie_sum / tie_count as f64);
    }

    if let Neighborhood::Nearest(k) = config.neighbors {
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
            dists.truncate(k);
        }
    }
    let (num, den) = dists.iter().fold((0.0, 0.0), |(num, den), (d, v)| {
        let w = d.powf(-config.power);
        (num + w * v, den + w)
    });
    Ok(num / den)
}

/// IDW bound to its training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdwModel {
    pub config: IdwConfig,
    pub training: Vec<Sample>,
}

impl IdwModel {
    pub fn new(config: IdwConfig, training: Vec<Sample>) -> Result<Self> {
        config.validate()?;
        if training.is_empty() {
            return Err(Error::data("IDW needs at least one training point"));
        }
        Ok(IdwModel { config, training })
    }

    pub fn predict(&self, query: Point) -> f64 {
        idw_predict(&self.config, &self.training, query).expect("non-empty training set")
    }
}
