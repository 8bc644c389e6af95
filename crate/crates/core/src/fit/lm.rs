//! Bounded Levenberg-Marquardt with a central-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost decrease below which an accepted step ends the run.
    pub ftol: f64,
    /// Relative step size below which the run ends.
    pub xtol: f64,
    /// Infinity norm of the gradient below which the run ends.
    pub gtol: f64,
    /// Cost at or below which the start point is already a solution.
    pub cost_floor: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-12,
            gtol: 1e-12,
            cost_floor: 1e-14,
            fd_step: 1e-6,
            lambda0: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after the start point and after every accepted step.
    pub cost_history: Vec<f64>,
    /// Jacobian at `x`.
    pub jacobian: DMatrix<f64>,
}

fn clamp(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn jacobian<F>(f: &mut F, x: &[f64], m: usize, rel: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = rel * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        let rp = f(&xp)?;
        xp[j] = x[j] - h;
        let rm = f(&xp)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Minimises `sum f(x)_i^2` over the box `lower <= x <= upper`.
///
/// Steps are projected onto the box; a step is accepted only if it lowers
/// the cost, so `cost_history` is non-increasing.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LmOptions) -> Result<LmOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    levenberg_marquardt_with(f, |_: &[f64]| Ok(false), x0, lower, upper, opts)
}

/// As [`levenberg_marquardt`], calling `on_accept(x)` after every accepted
/// step. A `true` return means the residual function changed; it must not
/// have raised the cost at `x`.
pub fn levenberg_marquardt_with<F, H>(
    mut f: F,
    mut on_accept: H,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    H: FnMut(&[f64]) -> Result<bool>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Dimension(format!("{n} parameters but {} / {} bounds", lower.len(), upper.len())));
    }
    if lower.iter().zip(upper).any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidParameter("lower bound exceeds upper bound".into()));
    }
    let mut x = x0.to_vec();
    clamp(&mut x, lower, upper);
    let mut r = f(&x)?;
    let m = r.len();
    let mut cost = sse(&r);
    let mut history = vec![cost];
    let mut mu = opts.lambda0;
    let mut iterations = 0;
    let mut converged = cost <= opts.cost_floor;
    let mut jac = jacobian(&mut f, &x, m, opts.fd_step)?;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let rv = DVector::from_column_slice(&r);
        let g = jac.transpose() * &rv;
        if g.amax() <= opts.gtol {
            converged = true;
            break;
        }
        let a = jac.transpose() * &jac;
        let dmax = a.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while mu < 1e16 {
            let mut damped = a.clone();
            for j in 0..n {
                damped[(j, j)] += mu * a[(j, j)].max(1e-12 * dmax);
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut xn, lower, upper);
            let rn = f(&xn)?;
            let cn = sse(&rn);
            if cn.is_finite() && cn < cost {
                let step: f64 = x.iter().zip(&xn).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let xnorm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                let small_gain = cost - cn <= opts.ftol * cost;
                let small_step = step <= opts.xtol * (xnorm + opts.xtol);
                x = xn;
                r = rn;
                cost = cn;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                let changed = on_accept(&x)?;
                if changed {
                    r = f(&x)?;
                    cost = sse(&r);
                }
                history.push(cost);
                jac = jacobian(&mut f, &x, m, opts.fd_step)?;
                if !changed && (small_gain || small_step || cost <= opts.cost_floor) {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            // No descent direction left at machine precision.
            converged = true;
        }
    }
    Ok(LmOutcome {
        x,
        residuals: r,
        cost,
        iterations,
        converged,
        cost_history: history,
        jacobian: jac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let out = levenberg_marquardt(f, &[-1.2, 1.0], &[-5.0; 2], &[5.0; 2], &LmOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
        assert!(out.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn exponential_fit() {
        let ts: Vec<f64> = (0..30).map(|k| k as f64 * 0.1).collect();
        let data: Vec<f64> = ts.iter().map(|t| 2.5 * (-1.3 * t).exp() + 0.4).collect();
        let f = |p: &[f64]| Ok(ts.iter().zip(&data).map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y).collect());
        let out = levenberg_marquardt(f, &[1.0, 0.5, 0.0], &[-10.0; 3], &[10.0; 3], &LmOptions::default()).unwrap();
        assert!((out.x[0] - 2.5).abs() < 1e-6 && (out.x[1] - 1.3).abs() < 1e-6 && (out.x[2] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| Ok(vec![x[0] - 3.0]);
        let out = levenberg_marquardt(f, &[0.0], &[-1.0], &[1.0], &LmOptions::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solution_start_takes_no_iterations() {
        let f = |x: &[f64]| Ok(vec![x[0] - 3.0, 2.0 * (x[1] + 1.0)]);
        let out = levenberg_marquardt(f, &[3.0, -1.0], &[-9.0; 2], &[9.0; 2], &LmOptions::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged && out.cost < 1e-12);
    }
}
