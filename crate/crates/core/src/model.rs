//! One prediction contract over the four model families, plus the fitted
//! artifact that remembers how panel coordinates map into model space.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::analytics::{metrics, Metrics};
use crate::data::{split_80_20, Dataset, Point, Sample, ScalingSpec, Tenor};
use crate::error::{Error, Result};
use crate::geostat::{KrigingConfig, KrigingSystem};
use crate::idw::{IdwConfig, IdwModel};
use crate::mlp::{mlp_train, EpochRecord, MlpConfig, MlpModel};
use crate::svr::{svr_fit, SvrConfig, SvrModel};

/// Model family and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Idw(IdwConfig),
    Kriging(KrigingConfig),
    Svr(SvrConfig),
    Mlp(MlpConfig),
}

impl ModelSpec {
    /// Family with default hyperparameters.
    pub fn family(name: &str) -> Result<Self> {
        match name {
            "idw" => Ok(ModelSpec::Idw(IdwConfig::default())),
            "kriging" => Ok(ModelSpec::Kriging(KrigingConfig::default())),
            "svr" => Ok(ModelSpec::Svr(SvrConfig::default())),
            "mlp" => Ok(ModelSpec::Mlp(MlpConfig::default())),
            _ => Err(Error::config(format!("unknown model family {name:?}"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelSpec::Idw(_) => "idw",
            ModelSpec::Kriging(_) => "kriging",
            ModelSpec::Svr(_) => "svr",
            ModelSpec::Mlp(_) => "mlp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Idw(c) => c.validate(),
            ModelSpec::Kriging(c) => c.validate(),
            ModelSpec::Svr(c) => c.validate(),
            ModelSpec::Mlp(c) => c.validate(),
        }
    }

    /// Only the MLP looks at `monitor`, for early stopping.
    pub fn fit(&self, train: &[Sample], monitor: &[Sample]) -> Result<(FittedModel, FitDetails)> {
        self.validate()?;
        let mut details = FitDetails::default();
        let model = match self {
            ModelSpec::Idw(c) => FittedModel::Idw(IdwModel::new(*c, train.to_vec())?),
            ModelSpec::Kriging(c) => FittedModel::Kriging(c.fit(train)?),
            ModelSpec::Svr(c) => {
                let fit = svr_fit(c, train)?;
                details.svr_converged = Some(fit.converged);
                FittedModel::Svr(fit.model)
            }
            ModelSpec::Mlp(c) => {
                let run = mlp_train(c, train, monitor)?;
                details.history = Some(run.history);
                FittedModel::Mlp(run.model)
            }
        };
        Ok((model, details))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDetails {
    pub history: Option<Vec<EpochRecord>>,
    pub svr_converged: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", content = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Idw(IdwModel),
    Kriging(KrigingSystem),
    Svr(SvrModel),
    Mlp(MlpModel),
}

impl FittedModel {
    pub fn tag(&self) -> &'static str {
        match self {
            FittedModel::Idw(_) => "idw",
            FittedModel::Kriging(_) => "kriging",
            FittedModel::Svr(_) => "svr",
            FittedModel::Mlp(_) => "mlp",
        }
    }

    /// Prediction at a scaled location.
    pub fn predict(&self, query: Point) -> Result<f64> {
        match self {
            FittedModel::Idw(m) => Ok(m.predict(query)),
            FittedModel::Kriging(k) => Ok(k.predict(query)?.rate),
            FittedModel::Svr(m) => Ok(m.predict(query)),
            FittedModel::Mlp(m) => Ok(m.forward(query)),
        }
    }

    /// Whether the model reproduces its training data exactly.
    pub fn is_exact_interpolator(&self) -> bool {
        match self {
            FittedModel::Idw(_) => true,
            FittedModel::Kriging(k) => k.variogram().nugget == 0.0,
            _ => false,
        }
    }
}

/// Which observations a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrainingPolicy {
    /// Every family trains on the 80% side of a seeded split; the 20% side is
    /// held out for scoring.
    Holdout { seed: u64 },
    /// Interpolators and SVR train on everything; the MLP still needs a
    /// monitor set and trains on the 80% side of a seeded split.
    AllData { seed: u64 },
}

/// A fitted model together with the panel geometry it was trained under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub spec: ModelSpec,
    pub scaling: ScalingSpec,
    pub tenors: Vec<Tenor>,
    pub origin: NaiveDate,
    pub first_training_day: u32,
    pub last_training_day: u32,
    pub n_observations: usize,
    pub policy: TrainingPolicy,
    pub model: FittedModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub train: Metrics,
    pub test: Option<Metrics>,
    pub details: FitDetails,
}

impl SurfaceModel {
    pub fn fit(dataset: &Dataset, spec: &ModelSpec, policy: TrainingPolicy) -> Result<(SurfaceModel, FitSummary)> {
        spec.validate()?;
        let samples = dataset.samples();
        let split = match policy {
            TrainingPolicy::Holdout { seed } | TrainingPolicy::AllData { seed } => {
                split_80_20(samples.len(), seed)?
            }
        };
        let pick = |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| samples[i]).collect() };
        let (train_set, test_set) = (pick(&split.train), pick(&split.test));
        let (train, monitor, scored_test) = match (policy, spec) {
            (TrainingPolicy::Holdout { .. }, _) | (_, ModelSpec::Mlp(_)) => {
                (train_set.clone(), test_set.clone(), Some(test_set))
            }
            (TrainingPolicy::AllData { .. }, _) => (samples.clone(), Vec::new(), None),
        };
        let (model, details) = spec.fit(&train, &monitor)?;
        let score = |set: &[Sample]| -> Result<Metrics> {
            let pairs = set
                .iter()
                .map(|s| Ok((s.value, model.predict(s.point)?)))
                .collect::<Result<Vec<_>>>()?;
            metrics(&pairs)
        };
        let summary = FitSummary {
            train: score(&train)?,
            test: scored_test.as_deref().map(score).transpose()?,
            details,
        };
        Ok((
            SurfaceModel {
                spec: spec.clone(),
                scaling: dataset.scaling,
                tenors: dataset.tenors.clone(),
                origin: dataset.origin,
                first_training_day: dataset.first_day(),
                last_training_day: dataset.last_day(),
                n_observations: dataset.len(),
                policy,
                model,
            },
            summary,
        ))
    }

    /// Rate at panel coordinates `(maturity months, day index)`.
    pub fn predict(&self, maturity_months: f64, day: f64) -> Result<f64> {
        self.model.predict(self.scaling.embed(maturity_months, day))
    }

    /// Indices of `dataset` observations the model was trained on, assuming
    /// `dataset` is the panel it was fitted to.
    pub fn in_sample_indices(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        if dataset.len() != self.n_observations {
            return Err(Error::data(format!(
                "panel has {} observations, model was fitted on {}",
                dataset.len(),
                self.n_observations
            )));
        }
        Ok(match (self.policy, &self.spec) {
            (TrainingPolicy::Holdout { seed }, _) | (TrainingPolicy::AllData { seed }, ModelSpec::Mlp(_)) => {
                split_80_20(dataset.len(), seed)?.train
            }
            (TrainingPolicy::AllData { .. }, _) => (0..dataset.len()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_panel, FactorPathSpec};

    fn panel() -> Dataset {
        let paths = FactorPathSpec::default().generate(20, 3).unwrap();
        let start = NaiveDate::from_ymd_opt(2004, 1, 5).unwrap();
        synthesize_panel(&paths, &Tenor::standard(), start, 0.01, 3).unwrap()
    }

    #[test]
    fn spec_json_shape() {
        let spec: ModelSpec = serde_json::from_str(r#"{"family":"svr","c":-1}"#).unwrap();
        assert!(matches!(spec, ModelSpec::Svr(SvrConfig { c, .. }) if c == -1.0));
        assert!(spec.validate().is_err());
        let idw: ModelSpec = serde_json::from_str(r#"{"family":"idw"}"#).unwrap();
        assert_eq!(idw, ModelSpec::family("idw").unwrap());
        assert!(ModelSpec::family("tree").is_err());
    }

    #[test]
    fn holdout_fit_scores_both_sides() {
        let ds = panel();
        let (model, summary) = SurfaceModel::fit(&ds, &ModelSpec::family("idw").unwrap(), TrainingPolicy::Holdout { seed: 1 }).unwrap();
        assert_eq!(summary.train.rmse, 0.0);
        assert!(summary.test.unwrap().rmse.is_finite());
        assert_eq!(model.in_sample_indices(&ds).unwrap().len(), (4 * ds.len() + 2) / 5);
    }

    #[test]
    fn all_data_fit_uses_every_point() {
        let ds = panel();
        let (model, summary) = SurfaceModel::fit(&ds, &ModelSpec::family("kriging").unwrap(), TrainingPolicy::AllData { seed: 1 }).unwrap();
        assert!(summary.test.is_none());
        assert_eq!(model.in_sample_indices(&ds).unwrap().len(), ds.len());
        for o in ds.observations.iter().step_by(17) {
            let p = model.predict(o.maturity_months, f64::from(o.day_index)).unwrap();
            assert!((p - o.rate).abs() < 1e-8);
        }
    }

    #[test]
    fn artifact_round_trips_through_json() {
        let ds = panel();
        for family in ["idw", "kriging", "svr"] {
            let (model, _) = SurfaceModel::fit(&ds, &ModelSpec::family(family).unwrap(), TrainingPolicy::Holdout { seed: 2 }).unwrap();
            let json = serde_json::to_string(&model).unwrap();
            let back: SurfaceModel = serde_json::from_str(&json).unwrap();
            let q = (7.0, 4.5);
            assert_eq!(model.predict(q.0, q.1).unwrap(), back.predict(q.0, q.1).unwrap());
            assert_eq!(json, serde_json::to_string(&back).unwrap());
        }
    }
}
