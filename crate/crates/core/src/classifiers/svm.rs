//! Linear soft-margin SVM trained by projected stochastic subgradient descent
//! (Pegasos), with the penalty chosen by stratified cross-validation and
//! posteriors from Platt scaling of out-of-fold decision values.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::Result;
use crate::seed;

const EPOCHS: usize = 20;
const MIN_UPDATES: usize = 2000;

#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(data: &Dataset) -> Self {
        let p = data.n_cols();
        let n = data.len() as f64;
        let mut mean = vec![0.0; p];
        for row in data.features.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; p];
        for row in data.features.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    // standardized features followed by a constant 1 for the bias
    fn transform(&self, x: &[f64], out: &mut [f64]) {
        for (j, v) in x.iter().enumerate() {
            out[j] = (v - self.mean[j]) / self.scale[j];
        }
        out[x.len()] = 1.0;
    }
}

/// Hinge-loss linear separator on standardized inputs.
#[derive(Debug, Clone)]
struct LinearSvm {
    standardizer: Standardizer,
    weights: Vec<f64>,
}

impl LinearSvm {
    fn train(data: &Dataset, rows: &[usize], c: f64, rng: &mut seed::Rng) -> Self {
        let standardizer = Standardizer::fit(data);
        let q = data.n_cols() + 1;
        let n = rows.len();
        let lambda = 1.0 / (c * n as f64);
        let radius = 1.0 / lambda.sqrt();
        let mut w = vec![0.0; q];
        let mut avg = vec![0.0; q];
        let mut averaged = 0usize;
        let mut x = vec![0.0; q];
        let epochs = EPOCHS.max(MIN_UPDATES.div_ceil(n.max(1)));
        let total = epochs * n;
        let mut order = rows.to_vec();
        let mut t = 0usize;
        for _ in 0..epochs {
            order.shuffle(rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                standardizer.transform(data.features.row(i), &mut x);
                let y = if data.labels[i] == 1 { 1.0 } else { -1.0 };
                let margin = y * dot(&w, &x);
                let shrink = 1.0 - eta * lambda;
                w.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    for (wv, xv) in w.iter_mut().zip(&x) {
                        *wv += eta * y * xv;
                    }
                }
                let norm = dot(&w, &w).sqrt();
                if norm > radius {
                    let f = radius / norm;
                    w.iter_mut().for_each(|v| *v *= f);
                }
                if 2 * t > total {
                    averaged += 1;
                    for (a, v) in avg.iter_mut().zip(&w) {
                        *a += v;
                    }
                }
            }
        }
        if averaged > 0 {
            avg.iter_mut().for_each(|a| *a /= averaged as f64);
        }
        Self {
            standardizer,
            weights: avg,
        }
    }

    fn decision(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.weights.len()];
        self.standardizer.transform(x, &mut buf);
        dot(&self.weights, &buf)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `P(y = 1 | f) = 1 / (1 + exp(a f + b))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattScaling {
    pub a: f64,
    pub b: f64,
}

impl PlattScaling {
    /// Newton's method with backtracking on the regularized-target
    /// cross-entropy (Lin, Lin & Weng's formulation of Platt's fit).
    pub fn fit(decision: &[f64], labels: &[u8]) -> Self {
        let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
        let n0 = labels.len() as f64 - n1;
        let hi = (n1 + 1.0) / (n1 + 2.0);
        let lo = 1.0 / (n0 + 2.0);
        let targets: Vec<f64> = labels.iter().map(|&y| if y == 1 { hi } else { lo }).collect();
        // With y = 1 as the "positive" class, p = 1/(1+exp(af+b)) should rise
        // with f, so a is expected to be negative.
        let mut a = 0.0;
        let mut b = ((n0 + 1.0) / (n1 + 1.0)).ln();
        let objective = |a: f64, b: f64| -> f64 {
            decision
                .iter()
                .zip(&targets)
                .map(|(&f, &t)| {
                    let z = a * f + b;
                    // -[t ln p + (1-t) ln(1-p)] with p = 1/(1+e^z)
                    if z >= 0.0 {
                        t * z + (-z).exp().ln_1p()
                    } else {
                        (t - 1.0) * z + z.exp().ln_1p()
                    }
                })
                .sum()
        };
        let mut fval = objective(a, b);
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
            for (&f, &t) in decision.iter().zip(&targets) {
                let z = a * f + b;
                let (p, q) = if z >= 0.0 {
                    let e = (-z).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = z.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += f * f * d2;
                h22 += d2;
                h21 += f * d2;
                let d1 = t - p;
                g1 += f * d1;
                g2 += d1;
            }
            if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            let mut moved = false;
            while step >= 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Self { a, b }
    }

    pub fn prob_one(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvmModel {
    svm: LinearSvm,
    platt: PlattScaling,
    c: f64,
}

impl SvmModel {
    pub fn fit(train: &Dataset, c_grid: &[f64], folds: usize, seed: u64) -> Result<Self> {
        let n = train.len();
        let folds = folds.min(n);
        let fold_of = stratified_folds(train, folds, seed::derive(seed, "svm-folds", 0));
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (ci, &c) in c_grid.iter().enumerate() {
            let mut oof = vec![0.0; n];
            for k in 0..folds {
                let fit_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
                let mut rng = seed::rng(seed::derive(seed, "svm-cv", (ci * folds + k) as u64));
                let svm = LinearSvm::train(train, &fit_rows, c, &mut rng);
                for i in (0..n).filter(|&i| fold_of[i] == k) {
                    oof[i] = svm.decision(train.features.row(i));
                }
            }
            let correct = oof
                .iter()
                .zip(&train.labels)
                .filter(|(f, &y)| u8::from(**f > 0.0) == y)
                .count();
            if best.as_ref().is_none_or(|(b, _, _)| correct > *b) {
                best = Some((correct, c, oof));
            }
        }
        let (_, c, oof) = best.expect("non-empty penalty grid");
        let platt = PlattScaling::fit(&oof, &train.labels);
        let all: Vec<usize> = (0..n).collect();
        let mut rng = seed::rng(seed::derive(seed, "svm-final", 0));
        let svm = LinearSvm::train(train, &all, c, &mut rng);
        Ok(Self { svm, platt, c })
    }

    pub fn penalty(&self) -> f64 {
        self.c
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.svm.decision(x)
    }

    pub fn prob_one(&self, x: &[f64]) -> f64 {
        self.platt.prob_one(self.svm.decision(x))
    }
}

/// Fold index per row; each class is shuffled and dealt round-robin.
fn stratified_folds(data: &Dataset, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    let mut fold_of = vec![0; data.len()];
    let mut next = 0;
    for class in 0..=1u8 {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    fold_of
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureMatrix;
    use crate::taskgen::{build_task, sample_dataset, TaskId, TaskSpec};

    #[test]
    fn platt_recovers_logistic_link() {
        use rand::Rng;
        let mut rng = seed::rng(3);
        let mut f = Vec::new();
        let mut y = Vec::new();
        for _ in 0..20_000 {
            let v: f64 = rng.random_range(-3.0..3.0);
            let p = 1.0 / (1.0 + (-2.0 * v + 0.5f64).exp());
            f.push(v);
            y.push(u8::from(rng.random::<f64>() < p));
        }
        let s = PlattScaling::fit(&f, &y);
        assert!((s.a + 2.0).abs() < 0.1, "{s:?}");
        assert!((s.b - 0.5).abs() < 0.1, "{s:?}");
    }

    #[test]
    fn separates_linearly_separable_clouds() {
        let task = build_task(&TaskSpec::new(TaskId::Sd2).with_scale(4.0)).unwrap();
        let train = sample_dataset(&task, 300, 1).unwrap();
        let test = sample_dataset(&task, 1000, 2).unwrap();
        let m = SvmModel::fit(&train, &[0.1, 1.0, 10.0], 5, 7).unwrap();
        let acc = test
            .features
            .rows()
            .zip(&test.labels)
            .filter(|(x, &y)| u8::from(m.prob_one(x) > 0.5) == y)
            .count() as f64
            / test.len() as f64;
        assert!(acc > 0.85, "{acc}");
    }

    #[test]
    fn folds_are_stratified() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let labels = (0..20).map(|i| u8::from(i < 10)).collect();
        let ds = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), labels).unwrap();
        let folds = stratified_folds(&ds, 5, 1);
        for k in 0..5 {
            let members: Vec<usize> = (0..20).filter(|&i| folds[i] == k).collect();
            let ones = members.iter().filter(|&&i| ds.labels[i] == 1).count();
            assert_eq!(members.len(), 4);
            assert_eq!(ones, 2);
        }
    }

    #[test]
    fn tiny_training_set_fits() {
        let rows = vec![vec![0.0, 0.0], vec![0.1, 0.2], vec![2.0, 2.0], vec![2.1, 1.9]];
        let ds = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), vec![0, 0, 1, 1]).unwrap();
        let m = SvmModel::fit(&ds, &[0.1, 1.0, 10.0], 5, 0).unwrap();
        assert!(m.decision(&[2.0, 2.0]) > m.decision(&[0.0, 0.0]));
        let p = m.prob_one(&[1.0, 1.0]);
        assert!((0.0..=1.0).contains(&p));
    }
}
