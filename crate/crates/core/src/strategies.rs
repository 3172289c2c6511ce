//! Pool scoring and batch selection.
//!
//! Informative strategies (Shannon-entropy uncertainty sampling and the two
//! query-by-committee disagreement measures) rank the pool and take the top
//! of the ranking. Random selection ignores the scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierSpec, Model};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed;

/// Posterior clamp used inside KL divergences.
pub const KL_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Se,
    QbcVe,
    QbcKl,
    Random,
}

impl StrategyId {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Se => "se",
            StrategyId::QbcVe => "qbc_ve",
            StrategyId::QbcKl => "qbc_kl",
            StrategyId::Random => "random",
        }
    }

    pub fn is_informative(self) -> bool {
        self != StrategyId::Random
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" => Ok(StrategyId::Se),
            "qbc_ve" => Ok(StrategyId::QbcVe),
            "qbc_kl" | "qbc" => Ok(StrategyId::QbcKl),
            "random" | "rs" => Ok(StrategyId::Random),
            other => Err(Error::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disagreement {
    VoteEntropy,
    AvgKl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeSpec {
    pub members: Vec<ClassifierSpec>,
    pub disagreement: Disagreement,
}

impl CommitteeSpec {
    /// LogReg, kNN (k = 5), kNN (k = 21), linear SVM, random forest.
    pub fn standard(disagreement: Disagreement) -> Self {
        Self {
            members: vec![
                ClassifierSpec::logreg(),
                ClassifierSpec::knn(5),
                ClassifierSpec::knn(21),
                ClassifierSpec::svm(),
                ClassifierSpec::random_forest(),
            ],
            disagreement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::InvalidArgument("committee needs at least 2 members".into()));
        }
        self.members.iter().try_for_each(ClassifierSpec::validate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolScores {
    pub values: Vec<f64>,
    pub strategy_id: StrategyId,
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!("malformed probability vector {p:?}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
    }
    Ok(p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum())
}

pub fn rank_pool_se(model: &Model, pool: &FeatureMatrix) -> Result<PoolScores> {
    if pool.n_rows() == 0 {
        return Err(Error::InvalidArgument("empty pool".into()));
    }
    let values = model
        .predict_proba(pool)?
        .iter()
        .map(|p| entropy(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(PoolScores {
        values,
        strategy_id: StrategyId::Se,
    })
}

fn kl(p: &[f64; 2], q: &[f64; 2]) -> f64 {
    let c = |v: f64| v.clamp(KL_CLAMP, 1.0 - KL_CLAMP);
    (0..2).map(|k| c(p[k]) * (c(p[k]) / c(q[k])).ln()).sum()
}

/// Committee disagreement on each pool row, given member posteriors.
pub fn disagreement_from_posteriors(member_posteriors: &[Vec<[f64; 2]>], measure: Disagreement) -> Result<Vec<f64>> {
    let m = member_posteriors.len();
    if m < 2 {
        return Err(Error::InvalidArgument("committee needs at least 2 members".into()));
    }
    let n = member_posteriors[0].len();
    if member_posteriors.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidArgument("committee posteriors have unequal lengths".into()));
    }
    (0..n)
        .map(|j| match measure {
            Disagreement::AvgKl => {
                let mut consensus = [0.0; 2];
                for post in member_posteriors {
                    consensus[0] += post[j][0] / m as f64;
                    consensus[1] += post[j][1] / m as f64;
                }
                let total: f64 = member_posteriors.iter().map(|post| kl(&post[j], &consensus)).sum();
                Ok((total / m as f64).max(0.0))
            }
            Disagreement::VoteEntropy => {
                let ones = member_posteriors.iter().filter(|post| post[j][1] > post[j][0]).count();
                let f1 = ones as f64 / m as f64;
                entropy(&[1.0 - f1, f1])
            }
        })
        .collect()
}

pub fn qbc_disagreement(committee: &[Model], pool: &FeatureMatrix, measure: Disagreement) -> Result<PoolScores> {
    let posts = committee
        .iter()
        .map(|m| m.predict_proba(pool))
        .collect::<Result<Vec<_>>>()?;
    Ok(PoolScores {
        values: disagreement_from_posteriors(&posts, measure)?,
        strategy_id: match measure {
            Disagreement::VoteEntropy => StrategyId::QbcVe,
            Disagreement::AvgKl => StrategyId::QbcKl,
        },
    })
}

/// Picks `batch` pool indices: the highest scores (ties to the lower index)
/// for informative strategies, a seeded uniform sample otherwise.
pub fn select_batch(scores: &PoolScores, batch: usize, seed: u64) -> Result<Vec<usize>> {
    let n = scores.values.len();
    if batch > n {
        return Err(Error::InvalidArgument(format!("batch {batch} exceeds pool size {n}")));
    }
    if scores.strategy_id == StrategyId::Random {
        let mut rng = seed::rng(seed);
        return Ok(rand::seq::index::sample(&mut rng, n, batch).into_vec());
    }
    if let Some(bad) = scores.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("pool score {bad}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| scores.values[*b].total_cmp(&scores.values[*a]).then(a.cmp(b));
    if batch > 0 && batch < n {
        order.select_nth_unstable_by(batch - 1, cmp);
    }
    order.truncate(batch);
    order.sort_by(cmp);
    Ok(order)
}
