//! Epsilon-insensitive support vector regression with a Gaussian kernel.
//!
//! The dual is solved in the doubled form used by LIBSVM: one variable per
//! upper and lower tube constraint, `2n` in total, with signs `+1` and `-1`.
//! Each SMO step picks the maximal violating variable and pairs it with the
//! partner that promises the largest second-order decrease.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::data::{Point, Sample};
use crate::error::{Error, Result};

/// Training sets up to this size keep the whole kernel matrix in memory.
pub const FULL_CACHE_LIMIT: usize = 4000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    /// Iteration budget in units of the training-set size.
    pub max_passes: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            c: 10.0,
            epsilon: 0.01,
            sigma: 0.1,
            tol: 1e-3,
            max_passes: 1000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config("SVR C must be positive"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("SVR epsilon must be non-negative"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("SVR kernel width must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("SVR tolerance must be positive"));
        }
        if self.max_passes == 0 {
            return Err(Error::config("SVR needs at least one pass"));
        }
        Ok(())
    }
}

pub fn rbf_kernel(sigma: f64, p: Point, q: Point) -> f64 {
    (-p.distance_sq(&q) / (2.0 * sigma * sigma)).exp()
}

/// Kernel expansion `f(q) = Σ βᵢ K(q, pᵢ) + b` over the support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub config: SvrConfig,
    pub support: Vec<Point>,
    pub betas: Vec<f64>,
    pub bias: f64,
}

impl SvrModel {
    pub fn predict(&self, query: Point) -> f64 {
        self.support
            .iter()
            .zip(&self.betas)
            .map(|(p, b)| b * rbf_kernel(self.config.sigma, *p, query))
            .sum::<f64>()
            + self.bias
    }
}

/// Outcome of an SMO run.
#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: SvrModel,
    /// `βᵢ = αᵢ − αᵢ*` for every training point, in input order.
    pub betas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Maximal KKT violation at exit.
    pub gap: f64,
    /// `-½ βᵀKβ − ε Σ|βᵢ| + Σ βᵢ yᵢ`
    pub dual_objective: f64,
    /// Dual objective after every update, when tracing was requested.
    pub trace: Option<Vec<f64>>,
}

enum KernelRows {
    Full(Vec<Rc<[f64]>>),
    Lru {
        rows: HashMap<usize, (Rc<[f64]>, u64)>,
        capacity: usize,
        clock: u64,
    },
}

struct KernelCache<'a> {
    points: &'a [Point],
    sigma: f64,
    rows: KernelRows,
}

impl<'a> KernelCache<'a> {
    fn new(points: &'a [Point], sigma: f64) -> Self {
        let n = points.len();
        let mut cache = KernelCache {
            points,
            sigma,
            rows: KernelRows::Lru {
                rows: HashMap::new(),
                capacity: (FULL_CACHE_LIMIT * FULL_CACHE_LIMIT / n.max(1)).max(2),
                clock: 0,
            },
        };
        if n <= FULL_CACHE_LIMIT {
            cache.rows = KernelRows::Full((0..n).map(|i| cache.compute(i)).collect());
        }
        cache
    }

    fn compute(&self, i: usize) -> Rc<[f64]> {
        let p = self.points[i];
        self.points
            .iter()
            .map(|q| rbf_kernel(self.sigma, p, *q))
            .collect()
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        if let KernelRows::Full(rows) = &self.rows {
            return Rc::clone(&rows[i]);
        }
        let fresh = match &self.rows {
            KernelRows::Lru { rows, .. } if rows.contains_key(&i) => None,
            _ => Some(self.compute(i)),
        };
        let KernelRows::Lru { rows, capacity, clock } = &mut self.rows else {
            unreachable!()
        };
        *clock += 1;
        if let Some(row) = fresh {
            if rows.len() >= *capacity {
                let oldest = rows
                    .iter()
                    .min_by_key(|(_, (_, stamp))| *stamp)
                    .map(|(k, _)| *k)
                    .expect("non-empty cache");
                rows.remove(&oldest);
            }
            rows.insert(i, (row, *clock));
        }
        let entry = rows.get_mut(&i).expect("cached row");
        entry.1 = *clock;
        Rc::clone(&entry.0)
    }
}

struct Smo<'a> {
    n: usize,
    c: f64,
    targets: &'a [f64],
    epsilon: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    kernel: KernelCache<'a>,
}

impl<'a> Smo<'a> {
    fn sign(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    fn point(&self, t: usize) -> usize {
        t % self.n
    }

    fn linear(&self, t: usize) -> f64 {
        let y = self.targets[self.point(t)];
        if t < self.n {
            self.epsilon - y
        } else {
            self.epsilon + y
        }
    }

    fn in_up(&self, t: usize) -> bool {
        if t < self.n {
            self.alpha[t] < self.c
        } else {
            self.alpha[t] > 0.0
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if t < self.n {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c
        }
    }

    /// Primal-form minimization objective `½ αᵀQα + pᵀα`.
    fn objective(&self) -> f64 {
        (0..2 * self.n)
            .map(|t| 0.5 * self.alpha[t] * (self.grad[t] + self.linear(t)))
            .sum()
    }

    /// Returns the working pair, or `None` with the current gap when the KKT
    /// conditions hold within `tol`.
    fn select(&mut self, tol: f64) -> (Option<(usize, usize)>, f64) {
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..2 * self.n {
            if self.in_up(t) {
                let v = -self.sign(t) * self.grad[t];
                if v > g_max {
                    g_max = v;
                    i_sel = Some(t);
                }
            }
        }
        let Some(i) = i_sel else {
            return (None, 0.0);
        };
        let k_i = self.kernel.row(self.point(i));
        let k_ii = k_i[self.point(i)];
        let mut g_min = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..2 * self.n {
            if !self.in_low(t) {
                continue;
            }
            let v = -self.sign(t) * self.grad[t];
            g_min = g_min.min(v);
            let diff = g_max - v;
            if diff > 0.0 {
                let pt = self.point(t);
                let k_tt = self.kernel_diag(pt);
                let mut quad = k_ii + k_tt - 2.0 * k_i[pt];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let score = -diff * diff / quad;
                if score < best {
                    best = score;
                    j_sel = Some(t);
                }
            }
        }
        let gap = g_max - g_min;
        match j_sel {
            Some(j) if gap >= tol => (Some((i, j)), gap),
            _ => (None, gap.max(0.0)),
        }
    }

    fn kernel_diag(&self, _i: usize) -> f64 {
        // Gaussian kernel: K(x, x) = 1.
        1.0
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (pi, pj) = (self.point(i), self.point(j));
        let k_i = self.kernel.row(pi);
        let k_j = self.kernel.row(pj);
        let quad = {
            let q = self.kernel_diag(pi) + self.kernel_diag(pj) - 2.0 * k_i[pj];
            if q <= 0.0 {
                TAU
            } else {
                q
            }
        };
        let (yi, yj) = (self.sign(i), self.sign(j));
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj);
        if yi != yj {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = old_i - old_j;
            ai = old_i + delta;
            aj = old_j + delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = old_i + old_j;
            ai = old_i - delta;
            aj = old_j + delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        // G_t += Q_ti Δα_i + Q_tj Δα_j with Q_ts = y_t y_s K(t, s)
        for t in 0..2 * self.n {
            let pt = t % self.n;
            let yt = if t < self.n { 1.0 } else { -1.0 };
            self.grad[t] += yt * (yi * k_i[pt] * di + yj * k_j[pt] * dj);
        }
    }

    fn bias(&self) -> f64 {
        let mut free_sum = 0.0;
        let mut free_count = 0usize;
        let mut upper = f64::INFINITY;
        let mut lower = f64::NEG_INFINITY;
        for t in 0..2 * self.n {
            let v = -self.sign(t) * self.grad[t];
            if self.alpha[t] > 0.0 && self.alpha[t] < self.c {
                free_sum += v;
                free_count += 1;
            } else {
                if self.in_up(t) {
                    lower = lower.max(v);
                }
                if self.in_low(t) {
                    upper = upper.min(v);
                }
            }
        }
        if free_count > 0 {
            free_sum / free_count as f64
        } else {
            match (lower.is_finite(), upper.is_finite()) {
                (true, true) => 0.5 * (lower + upper),
                (true, false) => lower,
                (false, true) => upper,
                (false, false) => 0.0,
            }
        }
    }
}

/// Dual objective of the β form, for any feasible β.
pub fn dual_objective(config: &SvrConfig, training: &[Sample], betas: &[f64]) -> f64 {
    let mut quad = 0.0;
    for (i, (si, bi)) in training.iter().zip(betas).enumerate() {
        if *bi == 0.0 {
            continue;
        }
        quad += bi * bi;
        for (sj, bj) in training[i + 1..].iter().zip(&betas[i + 1..]) {
            quad += 2.0 * bi * bj * rbf_kernel(config.sigma, si.point, sj.point);
        }
    }
    let lin: f64 = training
        .iter()
        .zip(betas)
        .map(|(s, b)| b * s.value - config.epsilon * b.abs())
        .sum();
    -0.5 * quad + lin
}

pub fn svr_fit(config: &SvrConfig, training: &[Sample]) -> Result<SvrFit> {
    fit_impl(config, training, false)
}

/// Like [`svr_fit`] but records the dual objective after every SMO step.
pub fn svr_fit_traced(config: &SvrConfig, training: &[Sample]) -> Result<SvrFit> {
    fit_impl(config, training, true)
}

fn fit_impl(config: &SvrConfig, training: &[Sample], trace: bool) -> Result<SvrFit> {
    config.validate()?;
    if training.len() < 2 {
        return Err(Error::data("SVR needs at least 2 training points"));
    }
    if training
        .iter()
        .any(|s| !(s.value.is_finite() && s.point.u.is_finite() && s.point.v.is_finite()))
    {
        return Err(Error::data("SVR inputs must be finite"));
    }
    let n = training.len();
    let points: Vec<Point> = training.iter().map(|s| s.point).collect();
    let targets: Vec<f64> = training.iter().map(|s| s.value).collect();
    let mut smo = Smo {
        n,
        c: config.c,
        targets: &targets,
        epsilon: config.epsilon,
        alpha: vec![0.0; 2 * n],
        grad: Vec::new(),
        kernel: KernelCache::new(&points, config.sigma),
    };
    smo.grad = (0..2 * n).map(|t| smo.linear(t)).collect();

    let max_iter = config.max_passes.saturating_mul(n);
    let mut history = trace.then(Vec::new);
    let mut iterations = 0;
    let (converged, gap) = loop {
        let (pair, gap) = smo.select(config.tol);
        let Some((i, j)) = pair else {
            break (true, gap);
        };
        if iterations >= max_iter {
            break (false, gap);
        }
        smo.update(i, j);
        iterations += 1;
        if let Some(h) = history.as_mut() {
            h.push(-smo.objective());
        }
    };

    let betas: Vec<f64> = (0..n).map(|k| smo.alpha[k] - smo.alpha[k + n]).collect();
    let bias = smo.bias();
    let dual = -smo.objective();
    let (support, kept): (Vec<Point>, Vec<f64>) = points
        .iter()
        .zip(&betas)
        .filter(|(_, b)| **b != 0.0)
        .map(|(p, b)| (*p, *b))
        .unzip();
    Ok(SvrFit {
        model: SvrModel {
            config: *config,
            support,
            betas: kept,
            bias,
        },
        betas,
        iterations,
        converged,
        gap,
        dual_objective: dual,
        trace: history,
    })
}

/// Indices of training points whose residual breaks the KKT conditions of
/// the fitted dual by more than `tol`.
pub fn kkt_violations(fit: &SvrFit, training: &[Sample], tol: f64) -> Vec<usize> {
    let c = fit.model.config.c;
    let eps = fit.model.config.epsilon;
    let at_bound = |b: f64| b.abs() >= c * (1.0 - 1e-12);
    training
        .iter()
        .zip(&fit.betas)
        .enumerate()
        .filter(|(_, (s, &b))| {
            let r = s.value - fit.model.predict(s.point);
            let ok = if b == 0.0 {
                r.abs() <= eps + tol
            } else if b > 0.0 {
                if at_bound(b) {
                    r >= eps - tol
                } else {
                    (eps - tol..=eps + tol).contains(&r)
                }
            } else if at_bound(b) {
                r <= -eps + tol
            } else {
                (-eps - tol..=-eps + tol).contains(&r)
            };
            !ok
        })
        .map(|(i, _)| i)
        .collect()
}

/// Picks the candidate with the lowest RMSE on `test` after fitting on
/// `train`. Ties keep the earlier candidate.
pub fn tune_svr(candidates: &[SvrConfig], train: &[Sample], test: &[Sample]) -> Result<(SvrConfig, f64)> {
    if test.is_empty() {
        return Err(Error::data("tuning needs a non-empty test set"));
    }
    let mut best: Option<(SvrConfig, f64)> = None;
    for cfg in candidates {
        let fit = svr_fit(cfg, train)?;
        let mse = test
            .iter()
            .map(|s| (fit.model.predict(s.point) - s.value).powi(2))
            .sum::<f64>()
            / test.len() as f64;
        let rmse = mse.sqrt();
        if best.map_or(true, |(_, b)| rmse < b) {
            best = Some((*cfg, rmse));
        }
    }
    best.ok_or_else(|| Error::config("no SVR candidates to tune"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (u, v): (f64, f64) = (rng.gen(), rng.gen());
                Sample::new(u, v, (3.0 * u).sin() + v * v + 0.1 * rng.gen::<f64>())
            })
            .collect()
    }

    #[test]
    fn kernel_examples() {
        let p = Point::new(0.3, 0.4);
        assert_eq!(rbf_kernel(0.2, p, p), 1.0);
        let sigma = 0.25;
        let q = Point::new(0.3 + sigma * 2f64.sqrt(), 0.4);
        assert!((rbf_kernel(sigma, p, q) - (-1f64).exp()).abs() < 1e-12);
        let r = Point::new(0.9, 0.1);
        assert_eq!(rbf_kernel(0.3, p, r), rbf_kernel(0.3, r, p));
    }

    #[test]
    fn constant_targets_stay_in_tube() {
        let training: Vec<Sample> = (0..10).map(|i| Sample::new(i as f64 / 9.0, 0.5, 2.75)).collect();
        let fit = svr_fit(&SvrConfig::default(), &training).unwrap();
        assert!(fit.betas.iter().all(|b| *b == 0.0));
        assert_eq!(fit.model.bias, 2.75);
        assert_eq!(fit.model.predict(Point::new(7.0, -3.0)), 2.75);
    }

    #[test]
    fn hand_built_model() {
        // K values 0.5 and 0.25 at the query, betas +1 and -1, bias 2.
        let sigma = 1.0;
        let d1 = (2.0 * 2f64.ln()).sqrt();
        let d2 = (2.0 * 4f64.ln()).sqrt();
        let model = SvrModel {
            config: SvrConfig { sigma, ..SvrConfig::default() },
            support: vec![Point::new(d1, 0.0), Point::new(0.0, d2)],
            betas: vec![1.0, -1.0],
            bias: 2.0,
        };
        assert!((model.predict(Point::new(0.0, 0.0)) - 2.25).abs() < 1e-12);
        let empty = SvrModel { support: vec![], betas: vec![], bias: 1.7, ..model };
        assert_eq!(empty.predict(Point::new(0.4, 0.4)), 1.7);
    }

    #[test]
    fn dual_feasibility_and_kkt() {
        for seed in 0..5 {
            let training = random_problem(seed, 40);
            let cfg = SvrConfig { c: 5.0, epsilon: 0.05, sigma: 0.3, ..SvrConfig::default() };
            let fit = svr_fit(&cfg, &training).unwrap();
            assert!(fit.converged);
            assert!(fit.betas.iter().sum::<f64>().abs() < 1e-8);
            assert!(fit.betas.iter().all(|b| b.abs() <= cfg.c + 1e-12));
            assert!(kkt_violations(&fit, &training, cfg.tol).is_empty());
            let direct = dual_objective(&cfg, &training, &fit.betas);
            assert!((direct - fit.dual_objective).abs() < 1e-9 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn free_support_vectors_sit_on_tube_edge() {
        let training = random_problem(3, 30);
        let cfg = SvrConfig { c: 50.0, epsilon: 0.02, sigma: 0.25, ..SvrConfig::default() };
        let fit = svr_fit(&cfg, &training).unwrap();
        for (s, b) in training.iter().zip(&fit.betas) {
            if *b != 0.0 && b.abs() < cfg.c {
                let r = (s.value - fit.model.predict(s.point)).abs();
                assert!((r - cfg.epsilon).abs() <= cfg.tol, "{r}");
            }
        }
    }

    #[test]
    fn objective_ascends_monotonically() {
        let training = random_problem(11, 50);
        let cfg = SvrConfig { c: 3.0, epsilon: 0.01, sigma: 0.2, ..SvrConfig::default() };
        let fit = svr_fit_traced(&cfg, &training).unwrap();
        let trace = fit.trace.unwrap();
        assert!(!trace.is_empty());
        let mut prev = 0.0;
        for v in trace {
            assert!(v >= prev - 1e-12, "{v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn hard_fit_on_noiseless_points() {
        let training: Vec<Sample> = [(0.1, 0.2), (0.8, 0.3), (0.4, 0.9), (0.6, 0.6), (0.2, 0.7)]
            .iter()
            .map(|&(u, v)| Sample::new(u, v, u * 2.0 - v))
            .collect();
        let cfg = SvrConfig { c: 1e4, epsilon: 0.0, sigma: 0.3, tol: 1e-6, max_passes: 100_000 };
        let fit = svr_fit(&cfg, &training).unwrap();
        let worst = training
            .iter()
            .map(|s| (s.value - fit.model.predict(s.point)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-2, "{worst}");
    }

    #[test]
    fn lru_cache_matches_full_cache() {
        let points: Vec<Point> = (0..10).map(|i| Point::new(i as f64 * 0.1, 0.0)).collect();
        let mut full = KernelCache::new(&points, 0.3);
        let mut lru = KernelCache {
            points: &points,
            sigma: 0.3,
            rows: KernelRows::Lru { rows: HashMap::new(), capacity: 2, clock: 0 },
        };
        for i in [0, 3, 0, 7, 9, 3, 0] {
            assert_eq!(&*full.row(i), &*lru.row(i));
        }
        if let KernelRows::Lru { rows, .. } = &lru.rows {
            assert!(rows.len() <= 2);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let training = random_problem(0, 5);
        assert!(svr_fit(&SvrConfig { c: 0.0, ..SvrConfig::default() }, &training).is_err());
        assert!(svr_fit(&SvrConfig { sigma: -1.0, ..SvrConfig::default() }, &training).is_err());
        assert!(svr_fit(&SvrConfig::default(), &training[..1]).is_err());
        let mut bad = training.clone();
        bad[0].value = f64::NAN;
        assert!(svr_fit(&SvrConfig::default(), &bad).is_err());
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let training = random_problem(5, 60);
        let cfg = SvrConfig { c: 100.0, epsilon: 0.0, sigma: 0.1, tol: 1e-9, max_passes: 1 };
        let fit = svr_fit(&cfg, &training).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 60);
        assert!(fit.betas.iter().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn tuning_prefers_lower_test_error() {
        let data = random_problem(8, 60);
        let (train, test) = data.split_at(48);
        let candidates = [
            SvrConfig { sigma: 5.0, c: 0.01, ..SvrConfig::default() },
            SvrConfig { sigma: 0.3, c: 10.0, ..SvrConfig::default() },
        ];
        let (best, rmse) = tune_svr(&candidates, train, test).unwrap();
        assert_eq!(best, candidates[1]);
        assert!(rmse.is_finite());
    }
}
