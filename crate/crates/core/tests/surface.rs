mod support;

use chrono::NaiveDate;
use irmap::data::{Dataset, Observation, Tenor};
use irmap::forecast::{linspace, map_surface};
use irmap::geostat::{KrigingConfig, KrigingSystem, VariogramModel, VariogramShape};
use irmap::model::{FittedModel, ModelSpec, SurfaceModel, TrainingPolicy};

#[test]
fn grid_matches_node_by_node_kriging() {
    let tenors = vec![Tenor::parse("1M").unwrap(), Tenor::parse("2Y").unwrap(), Tenor::parse("10Y").unwrap()];
    let obs = vec![
        Observation { maturity_months: 1.0, day_index: 0, rate: 1.0 },
        Observation { maturity_months: 24.0, day_index: 5, rate: 2.0 },
        Observation { maturity_months: 120.0, day_index: 9, rate: 3.5 },
    ];
    let ds = Dataset::new(obs, tenors.clone(), NaiveDate::from_ymd_opt(2005, 3, 1).unwrap()).unwrap();
    let samples = ds.samples();
    // three points are too few to estimate a variogram, so fix one
    let variogram = VariogramModel { shape: VariogramShape::Spherical, nugget: 0.0, sill: 1.0, range: 1.0 };
    let model = SurfaceModel {
        spec: ModelSpec::Kriging(KrigingConfig::default()),
        scaling: ds.scaling,
        tenors,
        origin: ds.origin,
        first_training_day: 0,
        last_training_day: 9,
        n_observations: 3,
        policy: TrainingPolicy::AllData { seed: 0 },
        model: FittedModel::Kriging(KrigingSystem::fit(&samples, variogram).unwrap()),
    };

    let mats = linspace(0.25, 120.0, 100).unwrap();
    let days = linspace(0.0, 9.0, 100).unwrap();
    let grid = map_surface(&model, &mats, &days).unwrap();
    assert_eq!(grid.values.len(), 10_000);
    for (r, d) in days.iter().enumerate() {
        for (c, m) in mats.iter().enumerate() {
            let want = support::ordinary_kriging(&samples, &variogram, ds.scaling.embed(*m, *d)).prediction;
            assert!((grid.value(r, c) - want).abs() < 1e-9);
        }
    }
}
