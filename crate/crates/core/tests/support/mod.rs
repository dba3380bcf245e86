//! Reference implementations used to check the library from the outside.
//! Nothing here calls into the solvers under test.
#![allow(dead_code)]

use irmap::data::{Point, Sample};
use irmap::geostat::{VariogramModel, VariogramShape};
use irmap::mlp::MlpModel;
use nalgebra::{DMatrix, DVector};

pub fn gamma(model: &VariogramModel, h: f64) -> f64 {
    if h == 0.0 {
        return 0.0;
    }
    let r = h / model.range;
    let unit = match model.shape {
        VariogramShape::Spherical => {
            if r >= 1.0 {
                1.0
            } else {
                1.5 * r - 0.5 * r.powi(3)
            }
        }
        VariogramShape::Exponential => 1.0 - (-3.0 * r).exp(),
        VariogramShape::Gaussian => 1.0 - (-3.0 * r * r).exp(),
        VariogramShape::PureNugget => 0.0,
    };
    model.nugget + model.sill * unit
}

pub struct OkSolution {
    pub weights: Vec<f64>,
    pub lagrange: f64,
    pub prediction: f64,
    pub variance: f64,
}

/// Ordinary kriging through a dense solve of the bordered system.
pub fn ordinary_kriging(points: &[Sample], model: &VariogramModel, query: Point) -> OkSolution {
    let n = points.len();
    let dist = |a: Point, b: Point| ((a.u - b.u).powi(2) + (a.v - b.v).powi(2)).sqrt();
    let a = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => gamma(model, dist(points[i].point, points[j].point)),
        (false, false) => 0.0,
        _ => 1.0,
    });
    let b = DVector::from_fn(n + 1, |i, _| if i < n { gamma(model, dist(points[i].point, query)) } else { 1.0 });
    let x = a.full_piv_lu().solve(&b).expect("oracle system is nonsingular");
    let weights: Vec<f64> = x.iter().take(n).copied().collect();
    let prediction = weights.iter().zip(points).map(|(w, p)| w * p.value).sum();
    let variance = x.iter().zip(b.iter()).map(|(xi, bi)| xi * bi).sum();
    OkSolution { weights, lagrange: x[n], prediction, variance }
}

pub fn rbf(sigma: f64, p: Point, q: Point) -> f64 {
    (-((p.u - q.u).powi(2) + (p.v - q.v).powi(2)) / (2.0 * sigma * sigma)).exp()
}

/// Euclidean projection onto `{x : lo <= x <= hi, sum(a_i x_i) = 0}` with
/// `a_i = ±1`, by bisection on the multiplier.
fn project(z: &[f64], sign: &[f64], c: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> { z.iter().zip(sign).map(|(zi, a)| (zi - mu * a).clamp(0.0, c)).collect() };
    let resid = |x: &[f64]| -> f64 { x.iter().zip(sign).map(|(xi, a)| xi * a).sum() };
    let bound = z.iter().fold(0.0f64, |m, v| m.max(v.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if resid(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Optimal value of the ε-SVR dual in `(α, α*)` form, by accelerated
/// projected gradient ascent with adaptive restart.
pub fn svr_dual_optimum(c: f64, epsilon: f64, sigma: f64, data: &[Sample]) -> f64 {
    let n = data.len();
    let k = DMatrix::from_fn(n, n, |i, j| rbf(sigma, data[i].point, data[j].point));
    let y = DVector::from_iterator(n, data.iter().map(|s| s.value));
    let sign: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
    let objective = |x: &[f64]| -> f64 {
        let beta = DVector::from_fn(n, |i, _| x[i] - x[n + i]);
        let l1: f64 = x.iter().sum();
        -0.5 * beta.dot(&(&k * &beta)) - epsilon * l1 + y.dot(&beta)
    };
    let grad = |x: &[f64]| -> Vec<f64> {
        let beta = DVector::from_fn(n, |i, _| x[i] - x[n + i]);
        let kb = &k * &beta;
        (0..2 * n)
            .map(|t| if t < n { y[t] - kb[t] - epsilon } else { -y[t - n] + kb[t - n] - epsilon })
            .collect()
    };
    let lipschitz = 2.0 * k.symmetric_eigenvalues().max();
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; 2 * n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(&x);
    let pg_residual = |x: &[f64]| -> f64 {
        let g = grad(x);
        let ascent: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
        let p = project(&ascent, &sign, c);
        p.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / step
    };
    for iter in 0..50_000 {
        if iter % 50 == 0 && pg_residual(&x) < 1e-10 {
            break;
        }
        let g = grad(&z);
        let ascent: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi + step * gi).collect();
        let x_new = project(&ascent, &sign, c);
        let f_new = objective(&x_new);
        if f_new < f_prev {
            // restart momentum
            t = 1.0;
            z = x.clone();
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = x_new
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_new * (a - b))
            .collect();
        x = x_new;
        t = t_new;
        f_prev = f_new;
    }
    // Polish: fix the variables FISTA put on a bound and solve the
    // equality-constrained problem on the rest exactly.
    let free: Vec<usize> = (0..2 * n).filter(|&t| x[t] > 1e-9 && x[t] < c - 1e-9).collect();
    let fixed: Vec<f64> = x.iter().map(|&v| if v >= c - 1e-9 { c } else { 0.0 }).collect();
    let h = |s: usize, t: usize| sign[s] * sign[t] * k[(s % n, t % n)];
    let q = |t: usize| if t < n { y[t] - epsilon } else { -y[t - n] - epsilon };
    let m = free.len();
    let mut best = f_prev;
    if m > 0 {
        let a = DMatrix::from_fn(m + 1, m + 1, |i, j| match (i < m, j < m) {
            (true, true) => h(free[i], free[j]),
            (false, false) => 0.0,
            (true, false) => sign[free[i]],
            (false, true) => sign[free[j]],
        });
        let rhs = DVector::from_fn(m + 1, |i, _| {
            if i < m {
                let t = free[i];
                q(t) - (0..2 * n).filter(|s| !free.contains(s)).map(|s| h(t, s) * fixed[s]).sum::<f64>()
            } else {
                -(0..2 * n).filter(|s| !free.contains(s)).map(|s| sign[s] * fixed[s]).sum::<f64>()
            }
        });
        if let Some(sol) = a.full_piv_lu().solve(&rhs) {
            let mut polished = fixed.clone();
            for (i, &t) in free.iter().enumerate() {
                polished[t] = sol[i];
            }
            let feasible = polished.iter().all(|&v| (-1e-12..=c + 1e-12).contains(&v))
                && polished.iter().zip(&sign).map(|(v, a)| v * a).sum::<f64>().abs() < 1e-10;
            if feasible {
                best = best.max(objective(&polished));
            }
        }
    }
    best
}

/// Central differences of the training MSE with respect to every parameter,
/// in `Gradient::flatten` order.
pub fn finite_difference_gradient(model: &MlpModel, batch: &[Sample], step: f64) -> Vec<f64> {
    let n = model.parameter_count();
    (0..n)
        .map(|i| {
            let mut plus = model.clone();
            *plus.parameters_mut().nth(i).unwrap() += step;
            let mut minus = model.clone();
            *minus.parameters_mut().nth(i).unwrap() -= step;
            (plus.mse(batch) - minus.mse(batch)) / (2.0 * step)
        })
        .collect()
}
