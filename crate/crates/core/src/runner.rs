//! One experiment: a fixed train/test draw, an initial labelled split, and
//! budget iteration over the pool for the active strategy and for several
//! random-selection instances.
//!
//! Every trajectory refits from scratch on the labelled rows in original
//! training order with the same fit seed, so all trajectories share their
//! first score (`S_initial`) and their last (`S_all`).

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, fit, score, ClassifierSpec, Model};
use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::seed;
use crate::strategies::{qbc_disagreement, rank_pool_se, select_batch, CommitteeSpec, PoolScores, StrategyId};
use crate::taskgen::{build_task, estimate_bayes_error, sample_dataset, Task, TaskSpec};

pub const DEFAULT_POOL_SIZE: usize = 1000;
pub const DEFAULT_N_TEST: usize = 2000;
pub const DEFAULT_N_STEPS: usize = 100;
pub const DEFAULT_N_RS: usize = 10;

/// Each class needs at least this many rows in the initial labelled set so
/// every classifier's fit preconditions hold.
pub const MIN_INITIAL_PER_CLASS: usize = 2;
const SPLIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Se,
    Qbc(CommitteeSpec),
    Random,
}

impl Strategy {
    pub fn id(&self) -> StrategyId {
        match self {
            Strategy::Se => StrategyId::Se,
            Strategy::Qbc(c) => match c.disagreement {
                crate::strategies::Disagreement::VoteEntropy => StrategyId::QbcVe,
                crate::strategies::Disagreement::AvgKl => StrategyId::QbcKl,
            },
            Strategy::Random => StrategyId::Random,
        }
    }

    pub fn from_id(id: StrategyId) -> Self {
        use crate::strategies::Disagreement;
        match id {
            StrategyId::Se => Strategy::Se,
            StrategyId::QbcVe => Strategy::Qbc(CommitteeSpec::standard(Disagreement::VoteEntropy)),
            StrategyId::QbcKl => Strategy::Qbc(CommitteeSpec::standard(Disagreement::AvgKl)),
            StrategyId::Random => Strategy::Random,
        }
    }
}

/// Sizes for the per-task benchmarks attached to every result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSettings {
    pub ber_n_mc: usize,
    pub opt_reps: usize,
    pub opt_n_large: usize,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            ber_n_mc: 100_000,
            opt_reps: 5,
            opt_n_large: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task_spec: TaskSpec,
    pub classifier: ClassifierSpec,
    pub strategy: Strategy,
    pub n_initial: usize,
    pub pool_size: usize,
    pub n_test: usize,
    pub n_steps: usize,
    pub n_rs: usize,
    pub master_seed: u64,
    pub benchmarks: BenchmarkSettings,
}

impl ExperimentConfig {
    pub fn new(task_spec: TaskSpec, classifier: ClassifierSpec, strategy: Strategy, n_initial: usize, master_seed: u64) -> Self {
        Self {
            task_spec,
            classifier,
            strategy,
            n_initial,
            pool_size: DEFAULT_POOL_SIZE,
            n_test: DEFAULT_N_TEST,
            n_steps: DEFAULT_N_STEPS,
            n_rs: DEFAULT_N_RS,
            master_seed,
            benchmarks: BenchmarkSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_initial < 10 {
            return bad(format!("n_initial = {} below 10", self.n_initial));
        }
        if self.n_steps == 0 || self.pool_size == 0 || self.pool_size % self.n_steps != 0 {
            return bad(format!(
                "pool_size {} must be a positive multiple of n_steps {}",
                self.pool_size, self.n_steps
            ));
        }
        if self.n_rs < 2 {
            return bad(format!("n_rs = {} below 2", self.n_rs));
        }
        if self.n_test < 20 {
            return bad(format!("n_test = {} below 20", self.n_test));
        }
        self.classifier.validate()?;
        if let Strategy::Qbc(c) = &self.strategy {
            c.validate()?;
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.pool_size / self.n_steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scores: Vec<f64>,
    pub labelled_counts: Vec<usize>,
    pub strategy_id: StrategyId,
    pub rs_instance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub al_trajectory: Trajectory,
    pub rs_trajectories: Vec<Trajectory>,
    pub s_initial: f64,
    pub s_all: f64,
    pub space_for_al: f64,
    pub ber_estimate: f64,
    pub opt_error_rate: f64,
}

impl ExperimentResult {
    /// Initial fit already beats the full-data fit.
    pub fn negative_space(&self) -> bool {
        self.space_for_al < 0.0
    }
}

/// Task-level benchmarks, shareable between experiments on the same task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Benchmarks {
    pub ber_estimate: f64,
    pub opt_error_rate: f64,
}

pub fn compute_benchmarks(task: &Task, classifier: &ClassifierSpec, settings: &BenchmarkSettings, seed: u64) -> Result<Benchmarks> {
    let ber = estimate_bayes_error(task, settings.ber_n_mc, seed::derive(seed, "ber", 0))?;
    let opt = classifiers::optimum_error_rate(
        classifier,
        task,
        settings.opt_reps,
        settings.opt_n_large,
        seed::derive(seed, "opt", 0),
    )?;
    Ok(Benchmarks {
        ber_estimate: ber.rate,
        opt_error_rate: opt.rate,
    })
}

pub fn space_for_al(s_all: f64, s_initial: f64) -> Result<f64> {
    if !(s_all > 0.0) {
        return Err(Error::InvalidArgument(format!("S_all = {s_all} must be positive")));
    }
    Ok((s_all - s_initial) / s_all)
}

/// Index form of [`split_initial`]; both halves are in ascending order.
pub fn split_indices(train: &Dataset, n_initial: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = train.len();
    if n_initial >= n {
        return Err(Error::InvalidArgument(format!("n_initial {n_initial} >= training size {n}")));
    }
    let mut rng = seed::rng(seed);
    for _ in 0..SPLIT_ATTEMPTS {
        let mut initial = rand::seq::index::sample(&mut rng, n, n_initial).into_vec();
        let ones = initial.iter().filter(|&&i| train.labels[i] == 1).count();
        if ones < MIN_INITIAL_PER_CLASS || n_initial - ones < MIN_INITIAL_PER_CLASS {
            continue;
        }
        initial.sort_unstable();
        let mut in_initial = vec![false; n];
        initial.iter().for_each(|&i| in_initial[i] = true);
        let pool = (0..n).filter(|&i| !in_initial[i]).collect();
        return Ok((initial, pool));
    }
    Err(Error::SplitFailed {
        attempts: SPLIT_ATTEMPTS,
    })
}

/// Splits the training data into an initially labelled set and a pool.
pub fn split_initial(train: &Dataset, n_initial: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (initial, pool) = split_indices(train, n_initial, seed)?;
    Ok((train.subset(&initial), train.subset(&pool)))
}

/// Reveals pool labels; the only path from a pool row to its label.
struct Oracle<'a> {
    train: &'a Dataset,
}

impl Oracle<'_> {
    /// Training set made of the labelled rows, in original order.
    fn labelled_set(&self, labelled: &[bool]) -> Dataset {
        let idx: Vec<usize> = (0..labelled.len()).filter(|&i| labelled[i]).collect();
        self.train.subset(&idx)
    }
}

/// Fixed data for one experiment, shared by all of its trajectories.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
    pub initial: Vec<usize>,
    pub pool: Vec<usize>,
    pub fit_seed: u64,
}

impl ExperimentData {
    pub fn draw(config: &ExperimentConfig, task: &Task) -> Result<Self> {
        let m = config.master_seed;
        let train = sample_dataset(task, config.n_initial + config.pool_size, seed::derive(m, "train", 0))?;
        let test = sample_dataset(task, config.n_test, seed::derive(m, "test", 0))?;
        let (initial, pool) = split_indices(&train, config.n_initial, seed::derive(m, "split", 0))?;
        Ok(Self {
            train,
            test,
            initial,
            pool,
            fit_seed: seed::derive(m, "fit", 0),
        })
    }
}

fn committee_scores(committee: &CommitteeSpec, labelled: &Dataset, pool: &FeatureMatrix, fit_seed: u64) -> Result<PoolScores> {
    let models = committee
        .members
        .iter()
        .enumerate()
        .map(|(k, spec)| fit(spec, labelled, seed::derive(fit_seed, "committee", k as u64)))
        .collect::<Result<Vec<Model>>>()?;
    qbc_disagreement(&models, pool, committee.disagreement)
}

/// Runs budget iteration for one selection strategy.
pub fn run_trajectory(
    config: &ExperimentConfig,
    data: &ExperimentData,
    strategy: &Strategy,
    selection_seed: u64,
    rs_instance: Option<usize>,
) -> Result<Trajectory> {
    let oracle = Oracle { train: &data.train };
    let mut labelled = vec![false; data.train.len()];
    data.initial.iter().for_each(|&i| labelled[i] = true);
    let mut remaining = data.pool.clone();
    let batch = config.batch_size();

    let abort = |step: usize| move |e: Error| Error::TrajectoryAborted { step, source: Box::new(e) };
    let mut train_set = oracle.labelled_set(&labelled);
    let mut model = fit(&config.classifier, &train_set, data.fit_seed).map_err(abort(0))?;
    let mut scores = vec![score(&model, &data.test).map_err(abort(0))?];
    let mut counts = vec![data.initial.len()];

    for step in 1..=config.n_steps {
        let pool_features = data.train.features.select_rows(&remaining);
        let pool_scores = match strategy {
            Strategy::Se => rank_pool_se(&model, &pool_features),
            Strategy::Qbc(c) => committee_scores(c, &train_set, &pool_features, data.fit_seed),
            Strategy::Random => Ok(PoolScores {
                values: vec![0.0; remaining.len()],
                strategy_id: StrategyId::Random,
            }),
        }
        .map_err(abort(step))?;
        let chosen = select_batch(&pool_scores, batch, seed::derive(selection_seed, "step", step as u64)).map_err(abort(step))?;
        let mut taken = vec![false; remaining.len()];
        for j in chosen {
            labelled[remaining[j]] = true;
            taken[j] = true;
        }
        let mut k = 0;
        remaining.retain(|_| {
            k += 1;
            !taken[k - 1]
        });
        train_set = oracle.labelled_set(&labelled);
        model = fit(&config.classifier, &train_set, data.fit_seed).map_err(abort(step))?;
        scores.push(score(&model, &data.test).map_err(abort(step))?);
        counts.push(train_set.len());
    }
    Ok(Trajectory {
        scores,
        labelled_counts: counts,
        strategy_id: strategy.id(),
        rs_instance,
    })
}

/// Runs one experiment, computing the task benchmarks as well.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let task = build_task(&config.task_spec)?;
    let benchmarks = compute_benchmarks(&task, &config.classifier, &config.benchmarks, seed::derive(config.master_seed, "benchmarks", 0))?;
    run_experiment_with(config, &task, benchmarks)
}

/// Runs one experiment with precomputed benchmarks.
pub fn run_experiment_with(config: &ExperimentConfig, task: &Task, benchmarks: Benchmarks) -> Result<ExperimentResult> {
    config.validate()?;
    let data = ExperimentData::draw(config, task)?;
    let full = fit(&config.classifier, &data.train, data.fit_seed)?;
    let s_all = score(&full, &data.test)?;
    let m = config.master_seed;
    let al_trajectory = run_trajectory(config, &data, &config.strategy, seed::derive(m, "al", 0), None)?;
    let rs_trajectories = (0..config.n_rs)
        .into_par_iter()
        .map(|j| run_trajectory(config, &data, &Strategy::Random, seed::derive(m, "rs", j as u64), Some(j)))
        .collect::<Result<Vec<_>>>()?;
    let s_initial = al_trajectory.scores[0];
    Ok(ExperimentResult {
        space_for_al: space_for_al(s_all, s_initial)?,
        al_trajectory,
        rs_trajectories,
        s_initial,
        s_all,
        ber_estimate: benchmarks.ber_estimate,
        opt_error_rate: benchmarks.opt_error_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryRow {
    step: usize,
    labelled_count: usize,
    strategy: StrategyId,
    instance: Option<usize>,
    score: f64,
}

/// Writes `step,labelled_count,strategy,instance,score`; the active
/// trajectory has an empty instance.
pub fn write_trajectories_csv<W: Write>(writer: W, al: &Trajectory, rs: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for traj in std::iter::once(al).chain(rs) {
        for (step, (&score, &labelled_count)) in traj.scores.iter().zip(&traj.labelled_counts).enumerate() {
            w.serialize(TrajectoryRow {
                step,
                labelled_count,
                strategy: traj.strategy_id,
                instance: traj.rs_instance,
                score,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_trajectories_csv`]: the active trajectory and the RS
/// trajectories ordered by instance.
pub fn read_trajectories_csv<R: Read>(reader: R) -> Result<(Trajectory, Vec<Trajectory>)> {
    let mut al: Option<Trajectory> = None;
    let mut rs: Vec<Trajectory> = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<TrajectoryRow>() {
        let row = row?;
        let slot = match row.instance {
            None => al.get_or_insert_with(|| empty_trajectory(row.strategy, None)),
            Some(j) => {
                let pos = match rs.iter().position(|t| t.rs_instance == Some(j)) {
                    Some(p) => p,
                    None => {
                        rs.push(empty_trajectory(row.strategy, Some(j)));
                        rs.len() - 1
                    }
                };
                &mut rs[pos]
            }
        };
        if row.step != slot.scores.len() {
            return Err(Error::InvalidArgument(format!("trajectory rows out of order at step {}", row.step)));
        }
        slot.scores.push(row.score);
        slot.labelled_counts.push(row.labelled_count);
    }
    rs.sort_by_key(|t| t.rs_instance);
    let al = al.ok_or_else(|| Error::InvalidArgument("no active-learning trajectory in file".into()))?;
    Ok((al, rs))
}

fn empty_trajectory(strategy_id: StrategyId, rs_instance: Option<usize>) -> Trajectory {
    Trajectory {
        scores: Vec::new(),
        labelled_counts: Vec::new(),
        strategy_id,
        rs_instance,
    }
}
