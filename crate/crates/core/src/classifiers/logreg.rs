//! Ridge-penalized logistic regression fitted by IRLS.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LogRegModel {
    /// Intercept first, then one weight per feature.
    coefficients: Vec<f64>,
    converged: bool,
    iterations: usize,
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^x) without overflow
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl LogRegModel {
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        Self {
            coefficients,
            converged: true,
            iterations: 0,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn prob_one(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x))
    }

    fn linear(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    /// Newton-Raphson on the penalized log-likelihood with step halving.
    /// Stops when the largest coefficient change falls below 1e-8; after 100
    /// iterations the last iterate is kept and flagged as not converged.
    pub fn fit(train: &Dataset, ridge: f64) -> Result<Self> {
        let q = train.n_cols() + 1;
        let y: Vec<f64> = train.labels.iter().map(|&v| f64::from(v)).collect();
        let mut model = Self {
            coefficients: vec![0.0; q],
            converged: false,
            iterations: 0,
        };
        let objective = |m: &LogRegModel| -> f64 {
            let ll: f64 = train
                .features
                .rows()
                .zip(&y)
                .map(|(x, yi)| {
                    let eta = m.linear(x);
                    yi * eta - softplus(eta)
                })
                .sum();
            ll - 0.5 * ridge * m.coefficients.iter().map(|b| b * b).sum::<f64>()
        };
        let mut current = objective(&model);
        for iter in 1..=MAX_ITER {
            model.iterations = iter;
            let mut hess = DMatrix::<f64>::zeros(q, q);
            let mut grad = DVector::<f64>::zeros(q);
            let mut xa = vec![1.0; q];
            for (x, yi) in train.features.rows().zip(&y) {
                xa[1..].copy_from_slice(x);
                let mu = sigmoid(model.linear(x));
                let w = mu * (1.0 - mu);
                let r = yi - mu;
                for a in 0..q {
                    grad[a] += xa[a] * r;
                    let wa = w * xa[a];
                    for b in 0..=a {
                        hess[(a, b)] += wa * xa[b];
                    }
                }
            }
            for a in 0..q {
                grad[a] -= ridge * model.coefficients[a];
                hess[(a, a)] += ridge;
                for b in 0..a {
                    hess[(b, a)] = hess[(a, b)];
                }
            }
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::DegenerateFit("logistic Hessian not positive definite".into()))?
                .solve(&grad);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial = Self {
                    coefficients: model
                        .coefficients
                        .iter()
                        .zip(step.iter())
                        .map(|(b, d)| b + t * d)
                        .collect(),
                    ..model.clone()
                };
                let value = objective(&trial);
                if value >= current - 1e-12 * current.abs() {
                    accepted = Some((trial, value));
                    break;
                }
                t *= 0.5;
            }
            let Some((next, value)) = accepted else {
                // no ascent direction left: at the optimum up to rounding
                model.converged = true;
                break;
            };
            let max_change = next
                .coefficients
                .iter()
                .zip(&model.coefficients)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            model.coefficients = next.coefficients;
            current = value;
            if max_change < TOL {
                model.converged = true;
                break;
            }
        }
        if model.coefficients.iter().any(|b| !b.is_finite()) {
            return Err(Error::DegenerateFit("non-finite logistic coefficients".into()));
        }
        Ok(model)
    }
}
