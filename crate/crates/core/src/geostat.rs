//! Variography and ordinary kriging.
//!
//! Distances are Euclidean in the scaled feature space. Semivariance models
//! follow the practical-range convention: the exponential and Gaussian shapes
//! reach 95% of the sill at `range`.

use serde::{Deserialize, Serialize};

use crate::data::{Point, Sample};
use crate::error::{Error, Result};
use crate::linalg::Lu;

/// Points closer than this are merged before kriging.
pub const MERGE_DISTANCE: f64 = 1e-12;
const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagBin {
    /// Mean pair distance in the bin, or the bin midpoint when empty.
    pub h: f64,
    pub gamma: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    pub lags: Vec<LagBin>,
    pub max_lag: f64,
    pub n_bins: usize,
}

impl EmpiricalVariogram {
    pub fn usable(&self) -> impl Iterator<Item = &LagBin> {
        self.lags.iter().filter(|l| l.pairs > 0)
    }
}

/// Half the largest pairwise distance.
pub fn default_max_lag(points: &[Sample]) -> f64 {
    let mut max_d2 = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            max_d2 = max_d2.max(a.point.distance_sq(&b.point));
        }
    }
    0.5 * max_d2.sqrt()
}

/// Matheron estimator over `n_bins` equal-width bins on `[0, max_lag]`.
/// Pairs farther apart than `max_lag` are ignored.
pub fn empirical_variogram(points: &[Sample], n_bins: usize, max_lag: f64) -> Result<EmpiricalVariogram> {
    if points.len() < 2 {
        return Err(Error::data("variogram needs at least 2 points"));
    }
    if n_bins == 0 {
        return Err(Error::config("variogram needs at least one bin"));
    }
    if !(max_lag > 0.0 && max_lag.is_finite()) {
        return Err(Error::config("max lag must be positive"));
    }
    let width = max_lag / n_bins as f64;
    let mut sum_sq = vec![0.0; n_bins];
    let mut sum_h = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let h = a.point.distance(&b.point);
            if h > max_lag {
                continue;
            }
            let k = ((h / width) as usize).min(n_bins - 1);
            let dz = a.value - b.value;
            sum_sq[k] += dz * dz;
            sum_h[k] += h;
            count[k] += 1;
        }
    }
    let lags = (0..n_bins)
        .map(|k| {
            if count[k] == 0 {
                LagBin {
                    h: (k as f64 + 0.5) * width,
                    gamma: 0.0,
                    pairs: 0,
                }
            } else {
                let n = count[k] as f64;
                LagBin {
                    h: sum_h[k] / n,
                    gamma: sum_sq[k] / (2.0 * n),
                    pairs: count[k],
                }
            }
        })
        .collect();
    Ok(EmpiricalVariogram {
        lags,
        max_lag,
        n_bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramShape {
    Spherical,
    Exponential,
    Gaussian,
    PureNugget,
}

impl VariogramShape {
    pub const STRUCTURED: [VariogramShape; 3] = [
        VariogramShape::Spherical,
        VariogramShape::Exponential,
        VariogramShape::Gaussian,
    ];

    /// Structured part normalized to a unit sill, for `h > 0`.
    fn unit(self, h: f64, range: f64) -> f64 {
        let r = h / range;
        match self {
            VariogramShape::Spherical => {
                if r >= 1.0 {
                    1.0
                } else {
                    1.5 * r - 0.5 * r * r * r
                }
            }
            VariogramShape::Exponential => -(-3.0 * r).exp_m1(),
            VariogramShape::Gaussian => -(-3.0 * r * r).exp_m1(),
            VariogramShape::PureNugget => 0.0,
        }
    }
}

impl std::str::FromStr for VariogramShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(VariogramShape::Spherical),
            "exponential" => Ok(VariogramShape::Exponential),
            "gaussian" => Ok(VariogramShape::Gaussian),
            "pure_nugget" => Ok(VariogramShape::PureNugget),
            _ => Err(Error::config(format!("unknown variogram shape {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub shape: VariogramShape,
    pub nugget: f64,
    /// Partial sill.
    pub sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0 && self.sill >= 0.0) {
            return Err(Error::config("nugget and sill must be non-negative"));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(Error::config("variogram range must be positive"));
        }
        Ok(())
    }

    /// Semivariance at lag `h`; zero at the origin for every shape.
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        self.nugget + self.sill * self.shape.unit(h, self.range)
    }

    pub fn total_sill(&self) -> f64 {
        self.nugget + self.sill
    }
}

/// Cressie-style weighted squared error `Σ N(h)/h² (γ̂ − γ(h))²` over
/// non-empty bins.
pub fn weighted_sse(emp: &EmpiricalVariogram, model: &VariogramModel) -> f64 {
    let floor = emp.max_lag * 1e-9;
    emp.usable()
        .map(|l| {
            let h = l.h.max(floor);
            let r = l.gamma - model.gamma(h);
            l.pairs as f64 / (h * h) * r * r
        })
        .sum()
}

struct LagData {
    h: Vec<f64>,
    w: Vec<f64>,
    g: Vec<f64>,
}

/// Best `(nugget, sill, sse)` for fixed unit-shape values `f`, with both
/// linear parameters boxed in `[0, cap]`.
fn bounded_linear_fit(data: &LagData, f: &[f64], cap: f64) -> (f64, f64, f64) {
    let sse = |n: f64, s: f64| -> f64 {
        data.w
            .iter()
            .zip(&data.g)
            .zip(f)
            .map(|((w, g), fk)| {
                let r = g - n - s * fk;
                w * r * r
            })
            .sum()
    };
    let (mut sw, mut swf, mut swff, mut swg, mut swfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((w, g), fk) in data.w.iter().zip(&data.g).zip(f) {
        sw += w;
        swf += w * fk;
        swff += w * fk * fk;
        swg += w * g;
        swfg += w * fk * g;
    }
    let clamp = |v: f64| if v.is_finite() { v.clamp(0.0, cap) } else { 0.0 };
    let mut candidates = Vec::with_capacity(5);
    let det = sw * swff - swf * swf;
    if det > 1e-12 * sw * swff {
        let n = (swg * swff - swf * swfg) / det;
        let s = (sw * swfg - swf * swg) / det;
        if (0.0..=cap).contains(&n) && (0.0..=cap).contains(&s) {
            candidates.push((n, s));
        }
    }
    // Edges of the box; the convex optimum lies on one of them otherwise.
    candidates.push((clamp(swg / sw), 0.0));
    if swff > 0.0 {
        candidates.push((0.0, clamp(swfg / swff)));
        candidates.push((cap, clamp((swfg - cap * swf) / swff)));
    }
    candidates.push((clamp((swg - cap * swf) / sw), cap));
    candidates
        .into_iter()
        .map(|(n, s)| (n, s, sse(n, s)))
        .fold((0.0, 0.0, f64::INFINITY), |best, c| if c.2 < best.2 { c } else { best })
}

/// Weighted least-squares variogram fit.
///
/// Nugget and sill enter the model linearly, so for any trial range they are
/// solved exactly under their bounds; the range is found by a log-spaced grid
/// scan followed by golden-section refinement around the best grid node.
/// Bounds: nugget, sill in `[0, 2 max γ̂]`, range in `(0, 2 max_lag]`.
pub fn fit_variogram(emp: &EmpiricalVariogram, shape: VariogramShape) -> Result<VariogramModel> {
    let usable: Vec<&LagBin> = emp.usable().collect();
    if usable.len() < 3 {
        return Err(Error::data(format!(
            "variogram fit needs at least 3 non-empty bins, found {}",
            usable.len()
        )));
    }
    let floor = emp.max_lag * 1e-9;
    let data = LagData {
        h: usable.iter().map(|l| l.h.max(floor)).collect(),
        w: usable
            .iter()
            .map(|l| {
                let h = l.h.max(floor);
                l.pairs as f64 / (h * h)
            })
            .collect(),
        g: usable.iter().map(|l| l.gamma).collect(),
    };
    let g_max = data.g.iter().fold(0.0f64, |m, g| m.max(*g));
    let cap = 2.0 * g_max;
    let range_lo = emp.max_lag * 1e-6;
    let range_hi = 2.0 * emp.max_lag;

    if g_max == 0.0 {
        return Ok(VariogramModel {
            shape,
            nugget: 0.0,
            sill: 0.0,
            range: range_lo,
        });
    }
    if shape == VariogramShape::PureNugget {
        let zeros = vec![0.0; data.h.len()];
        let (nugget, _, _) = bounded_linear_fit(&data, &zeros, cap);
        return Ok(VariogramModel {
            shape,
            nugget,
            sill: 0.0,
            range: emp.max_lag,
        });
    }

    let profile = |range: f64| -> (f64, f64, f64) {
        let f: Vec<f64> = data.h.iter().map(|&h| shape.unit(h, range)).collect();
        bounded_linear_fit(&data, &f, cap)
    };

    const GRID: usize = 80;
    let log_lo = range_lo.ln();
    let log_hi = range_hi.ln();
    let grid: Vec<f64> = (0..GRID)
        .map(|i| log_lo + (log_hi - log_lo) * i as f64 / (GRID - 1) as f64)
        .collect();
    let scores: Vec<f64> = grid.iter().map(|lr| profile(lr.exp()).2).collect();
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if *s < scores[b] { i } else { b });

    // Golden-section search on log(range) in the bracket around the best node.
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(GRID - 1)];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = profile(c.exp()).2;
    let mut fd = profile(d.exp()).2;
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = profile(c.exp()).2;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = profile(d.exp()).2;
        }
    }
    let mut log_range = 0.5 * (a + b);
    let (mut nugget, mut sill, mut sse) = profile(log_range.exp());
    if scores[best] < sse {
        log_range = grid[best];
        (nugget, sill, sse) = profile(log_range.exp());
    }
    debug_assert!(sse.is_finite());
    Ok(VariogramModel {
        shape,
        nugget,
        sill,
        range: log_range.exp().clamp(range_lo, range_hi),
    })
}

/// Search neighborhood for kriging predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrigingNeighborhood {
    Global,
    /// The `k` nearest data points, solved per query.
    Local(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingPrediction {
    pub rate: f64,
    pub variance: f64,
}

/// Ordinary-kriging weights for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingWeights {
    /// Indices into [`KrigingSystem::points`].
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub lagrange: f64,
}

#[derive(Serialize, Deserialize)]
struct KrigingParts {
    variogram: VariogramModel,
    neighborhood: KrigingNeighborhood,
    points: Vec<Sample>,
}

/// Ordinary kriging with a fixed variogram.
///
/// Coincident inputs are merged by averaging and keep the position of their
/// first occurrence. With a global neighborhood the
/// bordered semivariance matrix is factorized once and reused by every query.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "KrigingParts", into = "KrigingParts")]
pub struct KrigingSystem {
    variogram: VariogramModel,
    neighborhood: KrigingNeighborhood,
    points: Vec<Sample>,
    lu: Option<Lu>,
}

impl TryFrom<KrigingParts> for KrigingSystem {
    type Error = Error;

    fn try_from(p: KrigingParts) -> Result<Self> {
        KrigingSystem::with_neighborhood(&p.points, p.variogram, p.neighborhood)
    }
}

impl From<KrigingSystem> for KrigingParts {
    fn from(s: KrigingSystem) -> Self {
        KrigingParts {
            variogram: s.variogram,
            neighborhood: s.neighborhood,
            points: s.points,
        }
    }
}

/// Groups points within [`MERGE_DISTANCE`] and averages their values.
fn merge_coincident(points: &[Sample]) -> Vec<Sample> {
    // (first input index, running sum, count)
    let mut merged: Vec<(usize, Sample, usize)> = Vec::with_capacity(points.len());
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].point.u.total_cmp(&points[b].point.u).then(a.cmp(&b)));
    let mut start = 0;
    for i in order {
        let s = &points[i];
        while start < merged.len() && merged[start].1.point.u < s.point.u - MERGE_DISTANCE {
            start += 1;
        }
        match merged[start..]
            .iter_mut()
            .find(|(_, m, _)| m.point.distance(&s.point) <= MERGE_DISTANCE)
        {
            Some((first, m, n)) => {
                *first = (*first).min(i);
                m.value += s.value;
                *n += 1;
            }
            None => merged.push((i, *s, 1)),
        }
    }
    merged.sort_by_key(|&(first, _, _)| first);
    merged
        .into_iter()
        .map(|(_, s, n)| Sample {
            value: s.value / n as f64,
            ..s
        })
        .collect()
}

/// Row-major bordered matrix `[[Γ, 1], [1ᵀ, 0]]`.
fn bordered_matrix(points: &[&Sample], model: &VariogramModel, jitter: f64) -> Vec<f64> {
    let n = points.len();
    let m = n + 1;
    let mut a = vec![0.0; m * m];
    for i in 0..n {
        a[i * m + i] = jitter;
        for j in i + 1..n {
            let g = model.gamma(points[i].point.distance(&points[j].point));
            a[i * m + j] = g;
            a[j * m + i] = g;
        }
        a[i * m + n] = 1.0;
        a[n * m + i] = 1.0;
    }
    a
}

fn factor_with_rescue(points: &[&Sample], model: &VariogramModel) -> Result<Lu> {
    let m = points.len() + 1;
    Lu::factor(bordered_matrix(points, model, 0.0), m)
        .or_else(|| Lu::factor(bordered_matrix(points, model, JITTER), m))
        .ok_or_else(|| Error::numerical("singular kriging system"))
}

impl KrigingSystem {
    pub fn fit(points: &[Sample], variogram: VariogramModel) -> Result<Self> {
        Self::with_neighborhood(points, variogram, KrigingNeighborhood::Global)
    }

    pub fn with_neighborhood(
        points: &[Sample],
        variogram: VariogramModel,
        neighborhood: KrigingNeighborhood,
    ) -> Result<Self> {
        variogram.validate()?;
        if points.is_empty() {
            return Err(Error::data("kriging needs at least one point"));
        }
        if points.iter().any(|p| !(p.value.is_finite() && p.point.u.is_finite() && p.point.v.is_finite())) {
            return Err(Error::data("kriging inputs must be finite"));
        }
        if neighborhood == KrigingNeighborhood::Local(0) {
            return Err(Error::config("local kriging needs at least one neighbor"));
        }
        let points = merge_coincident(points);
        let global = match neighborhood {
            KrigingNeighborhood::Global => true,
            KrigingNeighborhood::Local(k) => k >= points.len(),
        };
        let lu = if global {
            let refs: Vec<&Sample> = points.iter().collect();
            Some(factor_with_rescue(&refs, &variogram)?)
        } else {
            None
        };
        Ok(KrigingSystem {
            variogram,
            neighborhood,
            points,
            lu,
        })
    }

    pub fn variogram(&self) -> &VariogramModel {
        &self.variogram
    }

    pub fn points(&self) -> &[Sample] {
        &self.points
    }

    /// The factorized left-hand side, rebuilt densely. Global systems only.
    pub fn matrix(&self) -> Vec<f64> {
        let refs: Vec<&Sample> = self.points.iter().collect();
        bordered_matrix(&refs, &self.variogram, 0.0)
    }

    pub fn weights(&self, query: Point) -> Result<KrigingWeights> {
        let (indices, lu_local);
        let lu = match &self.lu {
            Some(lu) => {
                indices = (0..self.points.len()).collect::<Vec<_>>();
                lu
            }
            None => {
                let KrigingNeighborhood::Local(k) = self.neighborhood else {
                    unreachable!("global systems are factorized at fit time")
                };
                let mut order: Vec<(f64, usize)> = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.point.distance_sq(&query), i))
                    .collect();
                order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
                order.truncate(k);
                order.sort_by_key(|&(_, i)| i);
                indices = order.into_iter().map(|(_, i)| i).collect::<Vec<_>>();
                let refs: Vec<&Sample> = indices.iter().map(|&i| &self.points[i]).collect();
                lu_local = factor_with_rescue(&refs, &self.variogram)?;
                &lu_local
            }
        };
        let mut rhs: Vec<f64> = indices
            .iter()
            .map(|&i| self.variogram.gamma(self.points[i].point.distance(&query)))
            .collect();
        rhs.push(1.0);
        let mut sol = lu.solve(&rhs);
        let lagrange = sol.pop().expect("bordered system");
        Ok(KrigingWeights {
            indices,
            weights: sol,
            lagrange,
        })
    }

    /// Kriged value and kriging variance at `query`.
    ///
    /// With a zero nugget the predictor honors the data exactly. With a
    /// positive nugget it still returns the datum at an exactly coincident
    /// query because `γ(0) = 0`.
    pub fn predict(&self, query: Point) -> Result<KrigingPrediction> {
        let w = self.weights(query)?;
        let mut rate = 0.0;
        let mut variance = w.lagrange;
        for (&i, wi) in w.indices.iter().zip(&w.weights) {
            let p = &self.points[i];
            rate += wi * p.value;
            variance += wi * self.variogram.gamma(p.point.distance(&query));
        }
        Ok(KrigingPrediction { rate, variance })
    }
}

/// How to build a kriging model from raw training samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrigingConfig {
    pub shape: VariogramShape,
    pub n_bins: usize,
    /// Defaults to half the largest pairwise distance.
    pub max_lag: Option<f64>,
    pub neighborhood: KrigingNeighborhood,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        KrigingConfig {
            shape: VariogramShape::Spherical,
            n_bins: 15,
            max_lag: None,
            neighborhood: KrigingNeighborhood::Global,
        }
    }
}

impl KrigingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 3 {
            return Err(Error::config("kriging needs at least 3 variogram bins"));
        }
        if let Some(l) = self.max_lag {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::config("max lag must be positive"));
            }
        }
        if self.neighborhood == KrigingNeighborhood::Local(0) {
            return Err(Error::config("local kriging needs at least one neighbor"));
        }
        Ok(())
    }

    /// Estimates and fits the variogram on `training`, then builds the system.
    pub fn fit(&self, training: &[Sample]) -> Result<KrigingSystem> {
        self.validate()?;
        let max_lag = self.max_lag.unwrap_or_else(|| default_max_lag(training));
        let emp = empirical_variogram(training, self.n_bins, max_lag)?;
        let variogram = if emp.usable().all(|l| l.gamma == 0.0) {
            // Constant field: any zero-sill model interpolates it.
            VariogramModel {
                shape: self.shape,
                nugget: 0.0,
                sill: 0.0,
                range: max_lag,
            }
        } else {
            fit_variogram(&emp, self.shape)?
        };
        let variogram = if variogram.total_sill() == 0.0 {
            // A zero variogram makes the bordered matrix singular; a unit
            // sill gives the same predictions for a constant field.
            VariogramModel { sill: 1.0, range: variogram.range.max(max_lag), ..variogram }
        } else {
            variogram
        };
        KrigingSystem::with_neighborhood(training, variogram, self.neighborhood)
    }
}
