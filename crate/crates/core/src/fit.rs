//! Damped Gauss–Newton (Levenberg–Marquardt) least squares with analytic
//! Jacobians. The fitting problems in this crate are small and
//! well-conditioned, so a straightforward implementation with Marquardt
//! diagonal scaling is enough.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A least-squares problem with analytic residuals and Jacobian.
pub trait LeastSquaresProblem {
    fn n_residuals(&self) -> usize;
    fn n_params(&self) -> usize;
    /// Residuals r_i(p), length `n_residuals`.
    fn residuals(&self, params: &[f64], out: &mut [f64]);
    /// Jacobian J_ij = ∂r_i/∂p_j.
    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative decrease of the sum of squares considered converged.
    pub ftol: f64,
    /// Relative step size considered converged.
    pub xtol: f64,
    pub lambda_init: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 200, ftol: 1e-12, xtol: 1e-12, lambda_init: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Covariance of the parameters, `SSR/(m-n) (JᵀJ)⁻¹` at the optimum.
    pub covariance: DMatrix<f64>,
    /// √SSR at the optimum.
    pub residual_norm: f64,
    pub iterations: usize,
    /// √SSR after each accepted step.
    pub history: Vec<f64>,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

pub fn levenberg_marquardt(
    problem: &impl LeastSquaresProblem,
    init: &[f64],
    opts: &LmOptions,
) -> Result<LmResult> {
    let m = problem.n_residuals();
    let n = problem.n_params();
    assert_eq!(init.len(), n);

    let mut params = init.to_vec();
    let mut r = vec![0.0; m];
    let mut jac = DMatrix::<f64>::zeros(m, n);
    problem.residuals(&params, &mut r);
    let mut ssr = sum_sq(&r);
    let mut lambda = opts.lambda_init;
    let mut history = vec![ssr.sqrt()];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iterations {
        iterations += 1;
        problem.jacobian(&params, &mut jac);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);

        // Inner damping loop: grow lambda until a step is accepted.
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-30);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let trial: Vec<f64> =
                params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
            let mut r_trial = vec![0.0; m];
            problem.residuals(&trial, &mut r_trial);
            let ssr_trial = sum_sq(&r_trial);
            if ssr_trial.is_finite() && ssr_trial < ssr {
                let rel_step = params
                    .iter()
                    .zip(delta.iter())
                    .map(|(p, d)| d.abs() / p.abs().max(1e-12))
                    .fold(0.0, f64::max);
                let rel_drop = (ssr - ssr_trial) / ssr.max(1e-300);
                params = trial;
                r = r_trial;
                ssr = ssr_trial;
                history.push(ssr.sqrt());
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                if rel_drop < opts.ftol || rel_step < opts.xtol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !accepted {
            // No downhill step found; treat a stalled small-gradient state as
            // converged, otherwise report failure with the history.
            if g.amax() < 1e-10 * (1.0 + ssr) {
                converged = true;
            }
            break;
        }
        if converged {
            break;
        }
    }

    if !converged && iterations >= opts.max_iterations {
        return Err(Error::FitNoConverge { iterations, history });
    }

    problem.jacobian(&params, &mut jac);
    let jtj = jac.transpose() * &jac;
    let dof = (m.saturating_sub(n)).max(1) as f64;
    let sigma2 = ssr / dof;
    let covariance = match jtj.clone().cholesky() {
        Some(ch) => ch.inverse() * sigma2,
        None => jtj.pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::zeros(n, n)) * sigma2,
    };

    Ok(LmResult {
        params,
        covariance,
        residual_norm: ssr.sqrt(),
        iterations,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// y = a e^{b x} sampled noiselessly.
    struct ExpProblem {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem for ExpProblem {
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for i in 0..self.x.len() {
                out[i] = p[0] * (p[1] * self.x[i]).exp() - self.y[i];
            }
        }
        fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
            for i in 0..self.x.len() {
                let e = (p[1] * self.x[i]).exp();
                out[(i, 0)] = e;
                out[(i, 1)] = p[0] * self.x[i] * e;
            }
        }
    }

    #[test]
    fn recovers_exponential_parameters() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|&xi| 2.5 * (-1.3 * xi).exp()).collect();
        let problem = ExpProblem { x, y };
        let fit = levenberg_marquardt(&problem, &[1.0, -0.5], &LmOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.params[0], 2.5, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.params[1], -1.3, epsilon = 1e-8);
        assert!(fit.residual_norm < 1e-8);
        assert!(!fit.history.is_empty());
    }

    #[test]
    fn history_is_monotone_nonincreasing() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&xi| 0.7 * (0.9 * xi).exp() + 0.01).collect();
        let problem = ExpProblem { x, y };
        let fit = levenberg_marquardt(&problem, &[0.2, 0.2], &LmOptions::default()).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
}
