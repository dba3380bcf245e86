use std::path::Path;

use chrono::NaiveDate;
use irmap::data::{FactorPathSpec, Tenor, STANDARD_TENORS};
use irmap::forecast::DEFAULT_HORIZON_DAYS;
use irmap::model::ModelSpec;
use serde::Deserialize;

use irmap::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { nx: 100, ny: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub days: usize,
    pub noise_sd: f64,
    pub start: NaiveDate,
    pub tenors: Vec<String>,
    pub factors: FactorPathSpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            days: 100,
            noise_sd: 0.02,
            start: NaiveDate::from_ymd_opt(2004, 1, 5).expect("valid date"),
            tenors: STANDARD_TENORS.iter().map(|s| s.to_string()).collect(),
            factors: FactorPathSpec::default(),
        }
    }
}

impl SynthSpec {
    pub fn parsed_tenors(&self) -> Result<Vec<Tenor>, Error> {
        if self.tenors.is_empty() {
            return Err(Error::Config("synth needs at least one tenor".into()));
        }
        self.tenors
            .iter()
            .map(|t| Tenor::parse(t).map_err(|e| Error::Config(e.to_string())))
            .collect()
    }
}

/// Settings shared by every subcommand, read from `--config`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub anisotropy: f64,
    pub grid: GridSpec,
    pub split_seed: u64,
    pub horizon_days: u32,
    pub nugget_threshold: f64,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSpec::family("idw").expect("known family"),
            anisotropy: 1.0,
            grid: GridSpec::default(),
            split_seed: 0,
            horizon_days: DEFAULT_HORIZON_DAYS,
            nugget_threshold: irmap::analytics::DEFAULT_NUGGET_THRESHOLD,
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        if self.grid.nx < 2 || self.grid.ny < 2 {
            return Err(Error::Config("grid resolution must be at least 2 per axis".into()));
        }
        if !(self.anisotropy > 0.0 && self.anisotropy.is_finite()) {
            return Err(Error::Config("anisotropy must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.nugget_threshold) {
            return Err(Error::Config("nugget threshold must lie in [0, 1]".into()));
        }
        self.synth.factors.validate()?;
        Ok(())
    }
}
