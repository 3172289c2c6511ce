//! Penalized logistic regression on a cubic B-spline basis (P-spline GAM)
//! with quasi-binomial dispersion and GCV smoothing selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::bspline::{difference_penalty, BSplineBasis};
use crate::error::{Error, Result};

pub const N_INTERIOR_KNOTS: usize = 20;
pub const SPLINE_DEGREE: usize = 3;
pub const PENALTY_ORDER: usize = 2;
pub const MIN_POINTS: usize = 20;
const MAX_PIRLS_ITER: usize = 200;
const ETA_TOL: f64 = 1e-8;
const WEIGHT_FLOOR: f64 = 1e-10;
const DISPERSION_FLOOR: f64 = 1e-12;
/// Linear predictor bound for flat fits at 0 or 1.
const ETA_BOUND: f64 = 20.0;

fn log10_lambda_grid() -> impl Iterator<Item = f64> {
    (0..=56).map(|k| -6.0 + 0.25 * k as f64)
}

fn inv_logit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamFit {
    pub knots: Vec<f64>,
    pub basis_coefficients: Vec<f64>,
    pub smoothing_parameter: f64,
    pub dispersion: f64,
    /// Row-major `q × q` Bayesian posterior covariance of the coefficients.
    pub posterior_covariance: Vec<f64>,
    pub edf: f64,
    pub gcv_score: f64,
    pub iterations: usize,
    /// Set when the response was constant and no smoothing was done.
    pub degenerate: bool,
}

/// Fitted curve with a symmetric pointwise band on the link scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub fit: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GamFit {
    fn basis(&self) -> BSplineBasis {
        BSplineBasis::uniform(N_INTERIOR_KNOTS, SPLINE_DEGREE, 0.0, 1.0)
    }

    fn q(&self) -> usize {
        self.basis_coefficients.len()
    }

    pub fn eta(&self, t: f64) -> f64 {
        let (first, values) = self.basis().nonzero(t);
        values.iter().enumerate().map(|(k, v)| v * self.basis_coefficients[first + k]).sum()
    }

    pub fn se_eta(&self, t: f64) -> f64 {
        let (first, values) = self.basis().nonzero(t);
        let q = self.q();
        let mut var = 0.0;
        for (i, vi) in values.iter().enumerate() {
            for (j, vj) in values.iter().enumerate() {
                var += vi * vj * self.posterior_covariance[(first + i) * q + first + j];
            }
        }
        var.max(0.0).sqrt()
    }

    pub fn mean(&self, t: f64) -> f64 {
        inv_logit(self.eta(t))
    }

    /// Pointwise two-sided band at `level`, mapped through the inverse link.
    pub fn band(&self, grid: &[f64], level: f64) -> Band {
        let z = band_quantile(level);
        let mut band = Band {
            fit: Vec::with_capacity(grid.len()),
            lower: Vec::with_capacity(grid.len()),
            upper: Vec::with_capacity(grid.len()),
        };
        for &t in grid {
            let (eta, se) = (self.eta(t), self.se_eta(t));
            band.fit.push(inv_logit(eta));
            band.lower.push(inv_logit(eta - z * se));
            band.upper.push(inv_logit(eta + z * se));
        }
        band
    }
}

/// Normal quantile for the upper edge of a central interval at `level`.
pub fn band_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Lower edge of the pointwise band at `level` (0.8 in the standard method).
pub fn gam_lower_band(fit: &GamFit, grid: &[f64], level: f64) -> Vec<f64> {
    fit.band(grid, level).lower
}

struct Problem {
    design: DMatrix<f64>,
    penalty: DMatrix<f64>,
    response: DVector<f64>,
}

struct Pirls {
    beta: DVector<f64>,
    hessian_inv: DMatrix<f64>,
    edf: f64,
    deviance: f64,
    pearson: f64,
    iterations: usize,
}

fn binomial_deviance(a: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    let term = |y: f64, m: f64| if y > 0.0 { y * (y / m).ln() } else { 0.0 };
    2.0 * a
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| {
            let mu = inv_logit(e).clamp(1e-300, 1.0 - 1e-16);
            term(y, mu) + term(1.0 - y, 1.0 - mu)
        })
        .sum::<f64>()
}

impl Problem {
    fn weighted(&self, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut w = DVector::zeros(eta.len());
        let mut z = DVector::zeros(eta.len());
        for i in 0..eta.len() {
            let mu = inv_logit(eta[i]);
            let wi = (mu * (1.0 - mu)).max(WEIGHT_FLOOR);
            w[i] = wi;
            z[i] = eta[i] + (self.response[i] - mu) / wi;
        }
        (w, z)
    }

    fn information(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut bw = self.design.clone();
        for (i, mut row) in bw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        self.design.transpose() * bw
    }

    fn penalized_deviance(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        let eta = &self.design * beta;
        binomial_deviance(&self.response, &eta) + lambda * beta.dot(&(&self.penalty * beta))
    }

    fn pirls(&self, lambda: f64, start: &DVector<f64>) -> Result<Pirls> {
        let mut beta = start.clone();
        let mut eta = &self.design * &beta;
        let mut objective = self.penalized_deviance(&beta, lambda);
        for iteration in 1..=MAX_PIRLS_ITER {
            let (w, z) = self.weighted(&eta);
            let mut wz = z;
            wz.component_mul_assign(&w);
            let rhs = self.design.transpose() * wz;
            let h = self.information(&w) + &self.penalty * lambda;
            let chol = h
                .cholesky()
                .ok_or_else(|| Error::Divergence(format!("penalized information not positive definite at lambda {lambda:e}")))?;
            let mut proposal = chol.solve(&rhs);
            let mut new_objective = self.penalized_deviance(&proposal, lambda);
            let mut halvings = 0;
            while !(new_objective <= objective * (1.0 + 1e-12) + 1e-12) && halvings < 30 {
                proposal = (&proposal + &beta) * 0.5;
                new_objective = self.penalized_deviance(&proposal, lambda);
                halvings += 1;
            }
            let new_eta = &self.design * &proposal;
            let delta = (&new_eta - &eta).amax();
            beta = proposal;
            eta = new_eta;
            objective = new_objective;
            if !delta.is_finite() {
                break;
            }
            if delta < ETA_TOL {
                return Ok(self.summarize(beta, &eta, lambda, iteration));
            }
        }
        Err(Error::Divergence(format!(
            "penalized IRLS did not reach max |delta eta| < {ETA_TOL:e} within {MAX_PIRLS_ITER} iterations at lambda {lambda:e}"
        )))
    }

    fn summarize(&self, beta: DVector<f64>, eta: &DVector<f64>, lambda: f64, iterations: usize) -> Pirls {
        let (w, _) = self.weighted(eta);
        let info = self.information(&w);
        let h = &info + &self.penalty * lambda;
        let hessian_inv = h
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| h.try_inverse().unwrap_or_else(|| DMatrix::zeros(beta.len(), beta.len())));
        let edf = (&hessian_inv * &info).trace();
        let pearson = self
            .response
            .iter()
            .zip(eta.iter())
            .map(|(&y, &e)| {
                let mu = inv_logit(e);
                (y - mu).powi(2) / (mu * (1.0 - mu)).max(WEIGHT_FLOOR)
            })
            .sum();
        Pirls {
            deviance: binomial_deviance(&self.response, eta),
            beta,
            hessian_inv,
            edf,
            pearson,
            iterations,
        }
    }
}

fn validate(a: &[f64], x: &[f64]) -> Result<()> {
    if a.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: x.len(),
        });
    }
    if a.len() < MIN_POINTS {
        return Err(Error::InvalidArgument(format!("GAM needs at least {MIN_POINTS} points, got {}", a.len())));
    }
    if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("GAM response outside [0, 1]".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GAM covariate".into()));
    }
    Ok(())
}

fn flat_fit(level: f64) -> GamFit {
    let basis = BSplineBasis::uniform(N_INTERIOR_KNOTS, SPLINE_DEGREE, 0.0, 1.0);
    let q = basis.n_basis();
    let eta = if level <= 0.0 {
        -ETA_BOUND
    } else if level >= 1.0 {
        ETA_BOUND
    } else {
        (level / (1.0 - level)).ln()
    };
    GamFit {
        knots: basis.knots().to_vec(),
        basis_coefficients: vec![eta; q],
        smoothing_parameter: f64::INFINITY,
        dispersion: DISPERSION_FLOOR,
        posterior_covariance: vec![0.0; q * q],
        edf: 1.0,
        gcv_score: 0.0,
        iterations: 0,
        degenerate: true,
    }
}

fn problem(a: &[f64], x: &[f64]) -> (Problem, DVector<f64>, Vec<f64>) {
    let basis = BSplineBasis::uniform(N_INTERIOR_KNOTS, SPLINE_DEGREE, 0.0, 1.0);
    let q = basis.n_basis();
    let mean = (a.iter().sum::<f64>() / a.len() as f64).clamp(1e-6, 1.0 - 1e-6);
    let start = DVector::from_element(q, (mean / (1.0 - mean)).ln());
    (
        Problem {
            design: basis.design(x),
            penalty: difference_penalty(q, PENALTY_ORDER),
            response: DVector::from_column_slice(a),
        },
        start,
        basis.knots().to_vec(),
    )
}

fn into_fit(p: Pirls, lambda: f64, n: usize, knots: Vec<f64>) -> GamFit {
    let n = n as f64;
    let dispersion = (p.pearson / (n - p.edf).max(1.0)).max(DISPERSION_FLOOR);
    let cov = &p.hessian_inv * dispersion;
    let q = cov.nrows();
    let posterior_covariance = (0..q * q).map(|k| cov[(k / q, k % q)]).collect();
    GamFit {
        knots,
        basis_coefficients: p.beta.iter().copied().collect(),
        smoothing_parameter: lambda,
        dispersion,
        posterior_covariance,
        edf: p.edf,
        gcv_score: gcv(p.deviance, p.edf, n),
        iterations: p.iterations,
        degenerate: false,
    }
}

/// Inflation of the effective degrees of freedom in the GCV score; values
/// above one counter the undersmoothing plain GCV shows at small n.
pub const GCV_GAMMA: f64 = 1.4;

fn gcv(deviance: f64, edf: f64, n: f64) -> f64 {
    n * deviance / (n - GCV_GAMMA * edf).powi(2)
}

/// Fits at a fixed smoothing parameter.
pub fn fit_gam_fixed(a: &[f64], x: &[f64], lambda: f64) -> Result<GamFit> {
    validate(a, x)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing parameter {lambda} must be >= 0")));
    }
    if a.iter().all(|&v| v == a[0]) {
        return Ok(flat_fit(a[0]));
    }
    let (prob, start, knots) = problem(a, x);
    let p = prob.pirls(lambda, &start)?;
    Ok(into_fit(p, lambda, a.len(), knots))
}

/// Fits `a` against budget fractions `x`, choosing the smoothing parameter
/// by GCV over a log-spaced grid.
pub fn fit_gam(a: &[f64], x: &[f64]) -> Result<GamFit> {
    validate(a, x)?;
    if a.iter().all(|&v| v == a[0]) {
        return Ok(flat_fit(a[0]));
    }
    let (prob, start, knots) = problem(a, x);
    let n = a.len() as f64;
    let mut warm = start.clone();
    let mut best: Option<(f64, f64)> = None;
    let mut last_error = None;
    for log_lambda in log10_lambda_grid() {
        let lambda = 10f64.powf(log_lambda);
        match prob.pirls(lambda, &warm) {
            Ok(p) => {
                let score = gcv(p.deviance, p.edf, n);
                if score.is_finite() && best.is_none_or(|(s, _)| score < s) {
                    best = Some((score, lambda));
                }
                warm = p.beta;
            }
            Err(e) => {
                warm = start.clone();
                last_error = Some(e);
            }
        }
    }
    let Some((_, lambda)) = best else {
        return Err(last_error.unwrap_or_else(|| Error::Divergence("no smoothing parameter converged".into())));
    };
    let p = prob.pirls(lambda, &start).or_else(|_| prob.pirls(lambda, &warm))?;
    Ok(into_fit(p, lambda, a.len(), knots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Binomial, Distribution};

    fn fractions(n: usize) -> Vec<f64> {
        (1..=n).map(|i| i as f64 / n as f64).collect()
    }

    fn truth(t: f64) -> f64 {
        inv_logit(1.0 - 4.0 * t)
    }

    fn synthetic(seed: u64) -> (Vec<f64>, Vec<f64>) {
        let x = fractions(100);
        let mut rng = crate::seed::rng(seed);
        let a = x
            .iter()
            .map(|&t| Binomial::new(10, truth(t)).unwrap().sample(&mut rng) as f64 / 10.0)
            .collect();
        (a, x)
    }

    #[test]
    fn band_quantile_matches_normal_table() {
        assert!((band_quantile(0.8) - 1.2816).abs() < 1e-4);
    }

    #[test]
    fn constant_half_gives_flat_half() {
        let x = fractions(100);
        let fit = fit_gam(&vec![0.5; 100], &x).unwrap();
        assert!(fit.degenerate);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(fit.mean(t), 0.5);
            assert_eq!(fit.se_eta(t), 0.0);
        }
        let band = fit.band(&x, 0.8);
        assert_eq!(band.lower, band.fit);
    }

    #[test]
    fn lower_band_arithmetic() {
        // eta = 0 and se = 0.5 everywhere: a flat fit with a hand-set covariance
        let mut fit = flat_fit(0.5);
        let q = fit.basis_coefficients.len();
        fit.posterior_covariance = vec![0.25; q * q];
        let band = gam_lower_band(&fit, &[0.3, 0.7], 0.8);
        for v in band {
            assert!((v - 0.345).abs() < 5e-4, "{v}");
        }
    }

    #[test]
    fn recovers_logistic_decay() {
        let (a, x) = synthetic(11);
        let fit = fit_gam(&a, &x).unwrap();
        let rmse = (x.iter().map(|&t| (fit.mean(t) - truth(t)).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!(rmse < 0.05, "rmse {rmse}");
        assert!(fit.dispersion > 0.0);
        assert!(fit.edf >= 2.0 - 1e-6 && fit.edf <= 24.0);
        let band = fit.band(&x, 0.8);
        for i in 0..x.len() {
            assert!(band.lower[i] <= band.fit[i] && band.fit[i] <= band.upper[i]);
            assert!(band.fit[i] > 0.0 && band.fit[i] < 1.0);
        }
    }

    #[test]
    fn doubling_penalty_never_raises_edf() {
        let (a, x) = synthetic(3);
        let mut previous = f64::INFINITY;
        for k in -4..8 {
            let fit = fit_gam_fixed(&a, &x, 10f64.powi(k)).unwrap();
            let doubled = fit_gam_fixed(&a, &x, 2.0 * 10f64.powi(k)).unwrap();
            assert!(doubled.edf <= fit.edf + 1e-9);
            assert!(fit.edf <= previous + 1e-9);
            previous = fit.edf;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = fractions(10);
        assert!(fit_gam(&vec![0.5; 10], &x).is_err());
        let x = fractions(30);
        assert!(fit_gam(&vec![1.5; 30], &x).is_err());
        assert!(fit_gam(&vec![0.5; 29], &x).is_err());
    }

    #[test]
    fn noisy_zero_one_response_still_fits() {
        let x = fractions(100);
        let mut rng = crate::seed::rng(4);
        let a: Vec<f64> = x.iter().map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
        let fit = fit_gam(&a, &x).unwrap();
        assert!((fit.mean(0.5) - 0.3).abs() < 0.15);
    }
}
