//! Classifier family behind one fit / predict-probability interface.
//!
//! Every fitted [`Model`] returns two-column posteriors `[P(y=0), P(y=1)]`
//! whose rows sum to one. Fits are pure functions of `(spec, train, seed)`.

mod forest;
mod knn;
mod logreg;
mod qda;
mod svm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::seed;
use crate::taskgen::{sample_dataset, Task};

pub use forest::{DecisionTree, Forest};
pub use knn::KnnModel;
pub use logreg::LogRegModel;
pub use qda::QdaModel;
pub use svm::SvmModel;

pub const LOGREG_RIDGE: f64 = 1e-6;
pub const QDA_RIDGE_FACTOR: f64 = 1e-6;
pub const RF_TREES: usize = 500;
pub const SVM_C_GRID: [f64; 3] = [0.1, 1.0, 10.0];
pub const SVM_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    LogReg,
    Qda,
    Knn,
    RandomForest,
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierSpec {
    LogReg { ridge: f64 },
    Qda { ridge_factor: f64 },
    Knn { k: usize },
    RandomForest { n_trees: usize, max_features: Option<usize> },
    Svm { c_grid: Vec<f64>, folds: usize },
}

impl ClassifierSpec {
    pub fn logreg() -> Self {
        ClassifierSpec::LogReg { ridge: LOGREG_RIDGE }
    }

    pub fn qda() -> Self {
        ClassifierSpec::Qda {
            ridge_factor: QDA_RIDGE_FACTOR,
        }
    }

    pub fn knn(k: usize) -> Self {
        ClassifierSpec::Knn { k }
    }

    /// `max_features: None` means `floor(sqrt(p))`.
    pub fn random_forest() -> Self {
        ClassifierSpec::RandomForest {
            n_trees: RF_TREES,
            max_features: None,
        }
    }

    pub fn svm() -> Self {
        ClassifierSpec::Svm {
            c_grid: SVM_C_GRID.to_vec(),
            folds: SVM_FOLDS,
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierSpec::LogReg { .. } => ClassifierKind::LogReg,
            ClassifierSpec::Qda { .. } => ClassifierKind::Qda,
            ClassifierSpec::Knn { .. } => ClassifierKind::Knn,
            ClassifierSpec::RandomForest { .. } => ClassifierKind::RandomForest,
            ClassifierSpec::Svm { .. } => ClassifierKind::Svm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            ClassifierSpec::LogReg { ridge } if !(*ridge > 0.0) => bad(format!("ridge {ridge} must be > 0")),
            ClassifierSpec::Qda { ridge_factor } if !(*ridge_factor > 0.0) => {
                bad(format!("ridge factor {ridge_factor} must be > 0"))
            }
            ClassifierSpec::Knn { k } if *k == 0 || k % 2 == 0 => bad(format!("k = {k} must be odd and >= 1")),
            ClassifierSpec::RandomForest { n_trees, .. } if *n_trees == 0 => bad("forest needs at least one tree".into()),
            ClassifierSpec::RandomForest {
                max_features: Some(0), ..
            } => bad("max_features must be >= 1".into()),
            ClassifierSpec::Svm { c_grid, folds } => {
                if c_grid.is_empty() || c_grid.iter().any(|c| !(*c > 0.0)) {
                    bad("SVM penalty grid must be non-empty and positive".into())
                } else if *folds < 2 {
                    bad("SVM needs at least 2 CV folds".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierSpec::LogReg { .. } => f.write_str("logreg"),
            ClassifierSpec::Qda { .. } => f.write_str("qda"),
            ClassifierSpec::Knn { k } => write!(f, "knn{k}"),
            ClassifierSpec::RandomForest { .. } => f.write_str("rf"),
            ClassifierSpec::Svm { .. } => f.write_str("svm"),
        }
    }
}

impl FromStr for ClassifierSpec {
    type Err = Error;

    /// `logreg`, `qda`, `rf`, `svm`, `knn` (k = 5) or `knn<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let spec = match s {
            "logreg" => Self::logreg(),
            "qda" => Self::qda(),
            "rf" | "random_forest" => Self::random_forest(),
            "svm" => Self::svm(),
            "knn" => Self::knn(5),
            other => match other.strip_prefix("knn").and_then(|k| k.parse().ok()) {
                Some(k) => Self::knn(k),
                None => {
                    return Err(Error::InvalidArgument(format!("unknown classifier `{other}`")))
                }
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
enum Fitted {
    LogReg(LogRegModel),
    Qda(QdaModel),
    Knn(KnnModel),
    Forest(Forest),
    Svm(SvmModel),
}

/// A fitted classifier.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ClassifierSpec,
    fitted: Fitted,
    training_dim: usize,
    converged: bool,
}

impl Model {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn training_dim(&self) -> usize {
        self.training_dim
    }

    /// False only when an iterative fit hit its iteration cap.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn as_forest(&self) -> Option<&Forest> {
        match &self.fitted {
            Fitted::Forest(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_logreg(&self) -> Option<&LogRegModel> {
        match &self.fitted {
            Fitted::LogReg(m) => Some(m),
            _ => None,
        }
    }

    /// `P(y = 1 | x)` for one row.
    pub fn prob_one(&self, x: &[f64]) -> f64 {
        let p = match &self.fitted {
            Fitted::LogReg(m) => m.prob_one(x),
            Fitted::Qda(m) => m.prob_one(x),
            Fitted::Knn(m) => m.prob_one(x),
            Fitted::Forest(m) => m.prob_one(x),
            Fitted::Svm(m) => m.prob_one(x),
        };
        p.clamp(0.0, 1.0)
    }

    pub fn predict_proba(&self, features: &FeatureMatrix) -> Result<Vec<[f64; 2]>> {
        self.check_dim(features)?;
        Ok(features.rows().map(|x| two_class(self.prob_one(x))).collect())
    }

    /// Argmax labels; a tie goes to class 0.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(features)?
            .into_iter()
            .map(|[p0, p1]| u8::from(p1 > p0))
            .collect())
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.n_cols() != self.training_dim {
            return Err(Error::DimensionMismatch {
                expected: self.training_dim,
                got: features.n_cols(),
            });
        }
        Ok(())
    }
}

fn two_class(p1: f64) -> [f64; 2] {
    [1.0 - p1, p1]
}

pub fn fit(spec: &ClassifierSpec, train: &Dataset, seed: u64) -> Result<Model> {
    spec.validate()?;
    let counts = train.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass {
            class: u8::from(counts[0] == 0),
        });
    }
    let mut converged = true;
    let fitted = match spec {
        ClassifierSpec::LogReg { ridge } => {
            let m = LogRegModel::fit(train, *ridge)?;
            converged = m.converged();
            Fitted::LogReg(m)
        }
        ClassifierSpec::Qda { ridge_factor } => Fitted::Qda(QdaModel::fit(train, *ridge_factor)?),
        ClassifierSpec::Knn { k } => Fitted::Knn(KnnModel::fit(train, *k)),
        ClassifierSpec::RandomForest {
            n_trees,
            max_features,
        } => {
            let p = train.n_cols();
            let m = max_features.unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1));
            Fitted::Forest(Forest::fit(train, *n_trees, m.min(p), seed))
        }
        ClassifierSpec::Svm { c_grid, folds } => {
            Fitted::Svm(SvmModel::fit(train, c_grid, *folds, seed)?)
        }
    };
    Ok(Model {
        spec: spec.clone(),
        fitted,
        training_dim: train.n_cols(),
        converged,
    })
}

/// Fraction of correct argmax predictions.
pub fn score(model: &Model, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let pred = model.predict(&test.features)?;
    let correct = pred.iter().zip(&test.labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimumError {
    pub rate: f64,
    pub std_error: f64,
    pub per_rep: Vec<f64>,
}

/// Mean test error over `reps` independent large train/test pairs.
pub fn optimum_error_rate(
    spec: &ClassifierSpec,
    task: &Task,
    reps: usize,
    n_large: usize,
    seed: u64,
) -> Result<OptimumError> {
    if reps < 5 {
        return Err(Error::InvalidArgument(format!("reps = {reps}; need at least 5")));
    }
    if n_large < 5000 {
        return Err(Error::InvalidArgument(format!("n_large = {n_large}; need at least 5000")));
    }
    let per_rep = (0..reps as u64)
        .map(|r| {
            let train = sample_dataset(task, n_large, seed::derive(seed, "opt-train", r))?;
            let test = sample_dataset(task, n_large, seed::derive(seed, "opt-test", r))?;
            let model = fit(spec, &train, seed::derive(seed, "opt-fit", r))?;
            Ok(1.0 - score(&model, &test)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = per_rep.len() as f64;
    let rate = per_rep.iter().sum::<f64>() / n;
    let var = per_rep.iter().map(|e| (e - rate).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(OptimumError {
        rate,
        std_error: (var / n).sqrt(),
        per_rep,
    })
}

/// Excess of a classifier's optimum error over the Bayes error, clamped at 0.
pub fn classifier_mismatch(opt_rate: f64, ber: f64) -> f64 {
    (opt_rate - ber).max(0.0)
}
