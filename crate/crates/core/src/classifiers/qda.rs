//! Quadratic discriminant analysis with a ridge on each class covariance.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct ClassGaussian {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    // ln prior - 0.5 ln det
    offset: f64,
}

impl ClassGaussian {
    fn log_score(&self, x: &[f64]) -> f64 {
        let p = self.mean.len();
        let mut y = vec![0.0; p];
        let mut quad = 0.0;
        for i in 0..p {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * y[j];
            }
            y[i] = s / self.chol[(i, i)];
            quad += y[i] * y[i];
        }
        self.offset - 0.5 * quad
    }
}

#[derive(Debug, Clone)]
pub struct QdaModel {
    classes: [ClassGaussian; 2],
}

impl QdaModel {
    /// Per-class mean and unbiased covariance, plus `eps * I` with
    /// `eps = ridge_factor * trace(cov) / p`. A class whose covariance has
    /// zero trace (a single point, or identical points) borrows the trace of
    /// the whole training set.
    pub fn fit(train: &Dataset, ridge_factor: f64) -> Result<Self> {
        let p = train.n_cols();
        let n = train.len() as f64;
        let overall_scale = {
            let all: Vec<usize> = (0..train.len()).collect();
            let (_, cov) = moments(train, &all);
            (cov.trace() / p as f64).max(1e-12)
        };
        let build = |class: u8| -> Result<ClassGaussian> {
            let idx: Vec<usize> = (0..train.len()).filter(|&i| train.labels[i] == class).collect();
            let (mean, mut cov) = moments(train, &idx);
            let scale = cov.trace() / p as f64;
            let eps = ridge_factor * if scale > 1e-12 * overall_scale { scale } else { overall_scale };
            for d in 0..p {
                cov[(d, d)] += eps;
            }
            let chol = cov
                .cholesky()
                .ok_or_else(|| Error::DegenerateFit(format!("class {class} covariance not positive definite")))?
                .unpack();
            let log_det: f64 = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let prior = idx.len() as f64 / n;
            Ok(ClassGaussian {
                mean,
                chol,
                offset: prior.ln() - 0.5 * log_det,
            })
        };
        Ok(Self {
            classes: [build(0)?, build(1)?],
        })
    }

    pub fn prob_one(&self, x: &[f64]) -> f64 {
        let l0 = self.classes[0].log_score(x);
        let l1 = self.classes[1].log_score(x);
        1.0 / (1.0 + (l0 - l1).exp())
    }
}

fn moments(train: &Dataset, idx: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let p = train.n_cols();
    let mut mean = DVector::<f64>::zeros(p);
    for &i in idx {
        for (m, v) in mean.iter_mut().zip(train.features.row(i)) {
            *m += v;
        }
    }
    mean /= idx.len() as f64;
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for &i in idx {
        let row = train.features.row(i);
        for a in 0..p {
            let da = row[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = if idx.len() > 1 { idx.len() as f64 - 1.0 } else { 1.0 };
    for a in 0..p {
        for b in 0..=a {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureMatrix;
    use crate::taskgen::{sample_dataset, GaussianCluster, InputType, Task};

    #[test]
    fn mirror_symmetric_classes_tie_at_origin() {
        let pts = [[1.0, 0.3], [2.0, -0.4], [1.5, 1.1], [0.7, -0.9]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for p in pts {
            rows.push(p.to_vec());
            labels.push(0);
            rows.push(vec![-p[0], -p[1]]);
            labels.push(1);
        }
        let ds = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), labels).unwrap();
        let m = QdaModel::fit(&ds, 1e-6).unwrap();
        assert_eq!(m.prob_one(&[0.0, 0.0]), 0.5);
    }

    #[test]
    fn single_point_class_still_fits() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.5], vec![5.0, 5.0]];
        let ds = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), vec![0, 0, 0, 1]).unwrap();
        let m = QdaModel::fit(&ds, 1e-6).unwrap();
        assert!(m.prob_one(&[5.0, 5.0]) > 0.99);
    }

    #[test]
    fn posterior_approaches_exact_bayes_posterior() {
        let c = |mean: Vec<f64>, covariance: Vec<f64>, class_label| GaussianCluster {
            mean,
            covariance,
            weight: 1.0,
            class_label,
        };
        let task = Task::from_clusters(
            vec![
                c(vec![0.0, -0.5], vec![1.0, 0.0, 0.0, 1.0], 0),
                c(vec![0.0, 0.5], vec![2.0, 0.3, 0.3, 1.0], 1),
            ],
            0.5,
            0,
            InputType::Continuous,
        )
        .unwrap();
        let train = sample_dataset(&task, 10_000, 2).unwrap();
        let m = QdaModel::fit(&train, 1e-6).unwrap();
        let mut kl_sum = 0.0;
        let mut count = 0.0;
        for gx in -4..=4 {
            for gy in -4..=4 {
                let x = [gx as f64 * 0.5, gy as f64 * 0.5];
                let p = task.posterior(&x).clamp(1e-12, 1.0 - 1e-12);
                let q = m.prob_one(&x).clamp(1e-12, 1.0 - 1e-12);
                kl_sum += p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
                count += 1.0;
            }
        }
        let mean_kl = kl_sum / count;
        assert!(mean_kl < 0.01, "{mean_kl}");
    }
}
