use crate::{Result, UmapError};

pub const FIT_GRID_POINTS: usize = 300;
const MAX_ITER: usize = 500;

/// Fitted `1 / (1 + a d^(2b))` and its mean squared residual on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbFit {
    pub a: f64,
    pub b: f64,
    pub residual: f64,
}

impl AbFit {
    pub fn eval(&self, d: f64) -> f64 {
        1.0 / (1.0 + self.a * d.powf(2.0 * self.b))
    }
}

/// Offset exponential membership in the low-dimensional space.
pub fn curve_target(d: f64, min_dist: f64, spread: f64) -> f64 {
    if d <= min_dist {
        1.0
    } else {
        (-(d - min_dist) / spread).exp()
    }
}

fn grid(spread: f64) -> Vec<f64> {
    (1..=FIT_GRID_POINTS).map(|i| 3.0 * spread * i as f64 / FIT_GRID_POINTS as f64).collect()
}

fn mse(a: f64, b: f64, xs: &[f64], ys: &[f64]) -> f64 {
    let fit = AbFit { a, b, residual: 0.0 };
    xs.iter().zip(ys).map(|(&x, &y)| (fit.eval(x) - y).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Levenberg-Marquardt least squares on the grid `d_i = 3 * spread * i / 300`,
/// `i = 1..=300`, from the start `(a, b) = (1, 1)`.
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<AbFit> {
    if !(min_dist > 0.0 && min_dist < spread && spread.is_finite()) {
        return Err(UmapError::Config(format!("need 0 < min_dist < spread, got {min_dist} and {spread}")));
    }
    let xs = grid(spread);
    let ys: Vec<f64> = xs.iter().map(|&d| curve_target(d, min_dist, spread)).collect();
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut cost = mse(a, b, &xs, &ys);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        // Normal equations of the residuals f(d) - y.
        let (mut jtj, mut jtr) = ([0.0f64; 3], [0.0f64; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let f = 1.0 / den;
            let da = -p / (den * den);
            let db = -a * p * 2.0 * x.ln() / (den * den);
            let r = f - y;
            jtj[0] += da * da;
            jtj[1] += da * db;
            jtj[2] += db * db;
            jtr[0] += da * r;
            jtr[1] += db * r;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let m00 = jtj[0] * (1.0 + lambda);
            let m11 = jtj[2] * (1.0 + lambda);
            let det = m00 * m11 - jtj[1] * jtj[1];
            let step_a = -(m11 * jtr[0] - jtj[1] * jtr[1]) / det;
            let step_b = -(m00 * jtr[1] - jtj[1] * jtr[0]) / det;
            let (na, nb) = (a + step_a, b + step_b);
            let new_cost = if na > 0.0 && nb > 0.0 { mse(na, nb, &xs, &ys) } else { f64::INFINITY };
            if new_cost.is_finite() && new_cost <= cost {
                let small = step_a.abs() <= 1e-13 * a.abs() && step_b.abs() <= 1e-13 * b.abs();
                a = na;
                b = nb;
                let flat = cost - new_cost <= 1e-16 * cost;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = small || flat;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    if !converged || !a.is_finite() || !b.is_finite() || !cost.is_finite() {
        return Err(UmapError::FitDiverged { residual: cost });
    }
    Ok(AbFit { a, b, residual: cost })
}
