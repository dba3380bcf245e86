//! Command-line front end for the `irmap` toolkit.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

pub mod config;
pub mod heatmap;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use irmap::analytics::{correlation_matrix, residual_nugget_check, stylized_facts};
use irmap::data::{synthesize_panel, Dataset, Sample};
use irmap::forecast::{
    forecast_curve, linspace, map_surface, reconstruct_curve, walk_forward, ForecastSpec,
};
use irmap::model::{ModelSpec, SurfaceModel, TrainingPolicy};
use irmap::{Error, Result};
use serde::Serialize;

use config::RunConfig;

/// Keeps the noise stream of `synth` independent of the factor stream.
const NOISE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Parser)]
#[command(name = "irmap", version, about = "Map, reconstruct and forecast interest-rate surfaces")]
struct Cli {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthesis, splits and training
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic Nelson-Siegel panel
    Synth {
        #[arg(long)]
        days: Option<usize>,
        /// Standard deviation of the observation noise
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit a model on the 80% side of a random split and score the rest
    Fit {
        #[arg(long)]
        panel: PathBuf,
        /// Model family; overrides the configured one
        #[arg(long)]
        model: Option<String>,
    },
    /// Evaluate a fitted model on a maturity × day grid
    Map {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        ny: Option<usize>,
    },
    /// Curve at a date inside the training span
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        /// Panel holding the observed curve for comparison
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Curve beyond the training span, or a walk-forward evaluation
    Forecast {
        #[arg(long, required_unless_present = "walk_forward")]
        model: Option<PathBuf>,
        /// Panel to walk forward over
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Panel holding realized rates at the target date
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<u32>,
        #[arg(long, num_args = 2, value_names = ["WINDOW", "STEP"])]
        walk_forward: Option<Vec<u32>>,
    },
    /// Residual variography, stylized facts and tenor correlations
    Diagnose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        panel: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Parse(_) | Error::Data(_) | Error::Io(_) => 3,
        Error::Numerical(_) => 4,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("irmap: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let out = Output::new(&cli.out)?;
    match cli.command {
        Command::Synth { days, noise } => synth(&cfg, &out, cli.seed.unwrap_or(0), days, noise),
        Command::Fit { panel, model } => {
            let spec = match model {
                Some(family) if family != cfg.model.tag() => ModelSpec::family(&family)?,
                _ => cfg.model.clone(),
            };
            fit(&cfg, &out, &panel, &spec, cli.seed.unwrap_or(cfg.split_seed))
        }
        Command::Map { model, nx, ny } => map(&cfg, &out, &model, nx, ny),
        Command::Reconstruct { model, date, panel } => reconstruct(&out, &model, date, panel.as_deref()),
        Command::Forecast {
            model,
            panel,
            truth,
            horizon,
            walk_forward,
        } => {
            let horizon = horizon.unwrap_or(cfg.horizon_days);
            match (walk_forward, model) {
                (Some(ws), _) => {
                    let panel = panel.ok_or_else(|| Error::Config("--walk-forward needs --panel".into()))?;
                    walk(&cfg, &out, &panel, ws[0], ws[1], horizon, cli.seed.unwrap_or(cfg.split_seed))
                }
                (None, Some(model)) => forecast(&out, &model, horizon, truth.as_deref()),
                (None, None) => Err(Error::Config("forecast needs --model or --walk-forward".into())),
            }
        }
        Command::Diagnose { model, panel } => diagnose(&cfg, &out, &model, &panel),
    }
}

/// Output directory; refuses to overwrite any of the given inputs.
struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str, inputs: &[&Path]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Ok(target) = fs::canonicalize(&path) {
            for input in inputs {
                if fs::canonicalize(input).is_ok_and(|p| p == target) {
                    return Err(Error::Config(format!(
                        "output {} would overwrite input {}",
                        path.display(),
                        input.display()
                    )));
                }
            }
        }
        Ok(path)
    }

    fn create(&self, name: &str, inputs: &[&Path]) -> Result<BufWriter<File>> {
        let path = self.path(name, inputs)?;
        Ok(BufWriter::new(File::create(path)?))
    }

    fn json<T: Serialize>(&self, name: &str, inputs: &[&Path], value: &T) -> Result<()> {
        let mut w = self.create(name, inputs)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn csv(&self, name: &str, inputs: &[&Path]) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.create(name, inputs)?))
    }
}

fn read_panel(path: &Path, anisotropy: f64) -> Result<Dataset> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open panel {}: {e}", path.display())))?;
    Dataset::load_panel(BufReader::new(file))?.with_anisotropy(anisotropy)
}

fn read_model(path: &Path) -> Result<SurfaceModel> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open model {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Data(format!("invalid model file {}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn synth(cfg: &RunConfig, out: &Output, seed: u64, days: Option<usize>, noise: Option<f64>) -> Result<()> {
    let spec = &cfg.synth;
    let days = days.unwrap_or(spec.days);
    let noise = noise.unwrap_or(spec.noise_sd);
    if days == 0 {
        return Err(Error::Config("synth needs at least one day".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config("noise must be a non-negative number".into()));
    }
    let tenors = spec.parsed_tenors()?;
    let paths = spec.factors.generate(days, seed)?;
    let panel = synthesize_panel(&paths, &tenors, spec.start, noise, seed ^ NOISE_SEED_SALT)?;
    panel.write_panel(out.create("panel.csv", &[])?)?;

    let mut w = out.csv("factors.csv", &[])?;
    w.write_record(["date", "beta0", "beta1", "beta2", "lambda"])?;
    for (i, f) in paths.iter().enumerate() {
        let date = spec.start + chrono::Days::new(i as u64);
        w.write_record([
            date.to_string(),
            f.beta0.to_string(),
            f.beta1.to_string(),
            f.beta2.to_string(),
            f.lambda.to_string(),
        ])?;
    }
    w.flush()?;
    eprintln!("synth: {} days × {} tenors", days, tenors.len());
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    model: &'a str,
    split_seed: u64,
    train: irmap::analytics::Metrics,
    test: Option<irmap::analytics::Metrics>,
    svr_converged: Option<bool>,
    mlp_best_epoch: Option<usize>,
}

fn fit(cfg: &RunConfig, out: &Output, panel: &Path, spec: &ModelSpec, seed: u64) -> Result<()> {
    let ds = read_panel(panel, cfg.anisotropy)?;
    let (model, summary) = SurfaceModel::fit(&ds, spec, TrainingPolicy::Holdout { seed })?;
    out.json("model.json", &[panel], &model)?;

    let history = summary.details.history.as_deref();
    let best_epoch = history.and_then(|h| {
        h.iter()
            .min_by(|a, b| a.test_rmse.total_cmp(&b.test_rmse).then(a.epoch.cmp(&b.epoch)))
            .map(|r| r.epoch)
    });
    out.json(
        "metrics.json",
        &[panel],
        &FitReport {
            model: spec.tag(),
            split_seed: seed,
            train: summary.train,
            test: summary.test,
            svr_converged: summary.details.svr_converged,
            mlp_best_epoch: best_epoch,
        },
    )?;
    if summary.details.svr_converged == Some(false) {
        eprintln!("fit: SVR stopped at the pass limit before reaching tolerance");
    }
    if let Some(history) = history {
        let mut w = out.csv("history.csv", &[panel])?;
        w.write_record(["epoch", "train_rmse", "test_rmse"])?;
        for r in history {
            w.write_record([r.epoch.to_string(), r.train_rmse.to_string(), r.test_rmse.to_string()])?;
        }
        w.flush()?;
    }
    if let Some(test) = summary.test {
        eprintln!("fit: {} test rmse {:.6} mae {:.6}", spec.tag(), test.rmse, test.mae);
    }
    Ok(())
}

fn map(cfg: &RunConfig, out: &Output, model_path: &Path, nx: Option<usize>, ny: Option<usize>) -> Result<()> {
    let (nx, ny) = (nx.unwrap_or(cfg.grid.nx), ny.unwrap_or(cfg.grid.ny));
    if nx < 2 || ny < 2 {
        return Err(Error::Config("grid resolution must be at least 2 per axis".into()));
    }
    let model = read_model(model_path)?;
    let months = model.tenors.iter().map(|t| t.months);
    let (lo, hi) = months.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), m| (a.min(m), b.max(m)));
    let maturities = linspace(lo, hi, nx)?;
    let days = linspace(f64::from(model.first_training_day), f64::from(model.last_training_day), ny)?;
    let grid = map_surface(&model, &maturities, &days)?;

    grid.write_csv(out.create("grid.csv", &[model_path])?)?;
    out.json("grid.json", &[model_path], &grid.sidecar(&model.spec))?;
    heatmap::write_ppm(&grid, out.create("heatmap.ppm", &[model_path])?)?;
    Ok(())
}

fn day_of(model: &SurfaceModel, date: NaiveDate) -> Result<u32> {
    u32::try_from((date - model.origin).num_days())
        .map_err(|_| Error::Config(format!("{date} precedes the panel origin {}", model.origin)))
}

fn reconstruct(out: &Output, model_path: &Path, date: NaiveDate, panel: Option<&Path>) -> Result<()> {
    let model = read_model(model_path)?;
    let day = day_of(&model, date)?;
    let curve = reconstruct_curve(&model, day, &model.tenors)?;
    let observed = panel.map(|p| read_panel(p, model.scaling.anisotropy)).transpose()?;
    let observed_day = observed.as_ref().and_then(|ds| ds.day_of(date).map(|d| (ds, d)));

    let mut inputs = vec![model_path];
    inputs.extend(panel);
    let mut w = out.csv("curve.csv", &inputs)?;
    w.write_record(["tenor", "months", "date", "rate", "observed"])?;
    for p in &curve {
        let obs = observed_day.and_then(|(ds, d)| ds.rate_at(d, p.months));
        w.write_record([p.tenor.clone(), p.months.to_string(), date.to_string(), p.rate.to_string(), opt(obs)])?;
    }
    w.flush()?;
    Ok(())
}

fn forecast(out: &Output, model_path: &Path, horizon: u32, truth: Option<&Path>) -> Result<()> {
    let model = read_model(model_path)?;
    let spec = ForecastSpec::after(&model, horizon, model.tenors.clone())?;
    let truth_panel = truth.map(|p| read_panel(p, model.scaling.anisotropy)).transpose()?;
    let fc = forecast_curve(&model, &spec, truth_panel.as_ref())?;

    let mut inputs = vec![model_path];
    inputs.extend(truth);
    let mut w = out.csv("forecast.csv", &inputs)?;
    w.write_record(["tenor", "months", "target_date", "forecast", "truth", "abs_error"])?;
    for p in &fc.points {
        w.write_record([
            p.tenor.clone(),
            p.months.to_string(),
            fc.target_date.to_string(),
            p.forecast.to_string(),
            opt(p.truth),
            opt(p.abs_error),
        ])?;
    }
    w.flush()?;
    if let Some(mae) = fc.mae {
        eprintln!("forecast: {} mae {mae:.6}", fc.target_date);
    }
    Ok(())
}

fn walk(cfg: &RunConfig, out: &Output, panel: &Path, window: u32, step: u32, horizon: u32, seed: u64) -> Result<()> {
    let ds = read_panel(panel, cfg.anisotropy)?;
    let runs = walk_forward(&ds, &cfg.model, window, step, horizon, seed)?;
    let mut w = out.csv("walk_forward.csv", &[panel])?;
    w.write_record(["window", "start_date", "end_date", "last_training_date", "target_date", "mae", "n_scored"])?;
    for r in &runs {
        let scored = r.forecast.points.iter().filter(|p| p.abs_error.is_some()).count();
        w.write_record([
            r.window.to_string(),
            ds.date_of(r.start_day).to_string(),
            ds.date_of(r.end_day - 1).to_string(),
            ds.date_of(r.max_training_day).to_string(),
            r.forecast.target_date.to_string(),
            opt(r.forecast.mae),
            scored.to_string(),
        ])?;
    }
    w.flush()?;
    eprintln!("forecast: {} walk-forward windows", runs.len());
    Ok(())
}

fn diagnose(cfg: &RunConfig, out: &Output, model_path: &Path, panel: &Path) -> Result<()> {
    let model = read_model(model_path)?;
    let ds = read_panel(panel, model.scaling.anisotropy)?;
    if ds.origin != model.origin || !ds.scaling.same_bounds(&model.scaling, 1e-9) {
        return Err(Error::Data(format!(
            "panel {} does not match the scaling the model was fitted under",
            panel.display()
        )));
    }
    let residuals = model
        .in_sample_indices(&ds)?
        .into_iter()
        .map(|i| {
            let o = &ds.observations[i];
            let point = model.scaling.embed_observation(o);
            Ok(Sample { point, value: o.rate - model.model.predict(point)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let inputs = [model_path, panel];
    let report = residual_nugget_check(&residuals, cfg.nugget_threshold)?;
    out.json("residual_report.json", &inputs, &report)?;

    match stylized_facts(&ds) {
        Ok(facts) => out.json("stylized_facts.json", &inputs, &facts)?,
        Err(e) => eprintln!("diagnose: skipping stylized facts: {e}"),
    }
    match correlation_matrix(&ds) {
        Ok(corr) => corr.write_csv(out.create("correlation.csv", &inputs)?)?,
        Err(e) => eprintln!("diagnose: skipping correlations: {e}"),
    }
    eprintln!(
        "diagnose: nugget ratio {:.4}, verdict {:?}",
        report.nugget_ratio, report.verdict
    );
    Ok(())
}
