//! Grid expansion, per-cell execution and result assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::artifacts::{
    self, Cell, ErrorRow, ExperimentRecord, ResultRow, ERRORS_FILE, EXPERIMENT_FILE, RESULTS_FILE, ROW_FILE, TRAJECTORIES_FILE,
};
use super::config::SweepConfig;
use crate::classifiers::{classifier_mismatch, optimum_error_rate, ClassifierSpec};
use crate::error::{Error, Result};
use crate::evalstat::evaluate_experiment;
use crate::runner::{self, Benchmarks, ExperimentConfig, Strategy};
use crate::seed;
use crate::taskgen::{build_task, calibrate_separation, estimate_bayes_error, InputType, TaskId, TaskSpec};

/// Cells in a fixed nested order, repeats innermost.
pub fn expand_grid(config: &SweepConfig) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(config.grid_size() * config.repeats);
    for &task in &config.tasks {
        for &input_type in &config.input_types {
            for &input_dim in &config.input_dims {
                for classifier in &config.classifiers {
                    for &strategy in &config.strategies {
                        for &n_initial in &config.n_initials {
                            for &ber_target in &config.bers {
                                for repeat in 0..config.repeats {
                                    cells.push(Cell {
                                        task,
                                        input_type,
                                        input_dim,
                                        classifier: classifier.clone(),
                                        strategy,
                                        n_initial,
                                        ber_target,
                                        repeat,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

pub fn experiment_seed(master_seed: u64, experiment_id: &str) -> u64 {
    seed::derive(master_seed, experiment_id, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct CalibrationKey {
    task: TaskId,
    ber_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct OptimumKey {
    calibration: CalibrationKey,
    input_type: InputType,
    input_dim: usize,
    classifier: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Calibrated {
    scale: f64,
    ber_est: f64,
}

fn calibration_key(cell: &Cell) -> CalibrationKey {
    CalibrationKey {
        task: cell.task,
        ber_bits: cell.ber_target.to_bits(),
    }
}

fn optimum_key(cell: &Cell) -> OptimumKey {
    OptimumKey {
        calibration: calibration_key(cell),
        input_type: cell.input_type,
        input_dim: cell.input_dim,
        classifier: cell.classifier.clone(),
    }
}

/// Calibrated scales, BER estimates and classifier optima shared by cells.
#[derive(Debug, Default)]
struct BenchmarkCache {
    calibrated: BTreeMap<CalibrationKey, Calibrated>,
    optimum: BTreeMap<OptimumKey, f64>,
}

fn task_spec(cell: &Cell, scale: f64) -> TaskSpec {
    TaskSpec {
        separation_scale: scale,
        target_ber: Some(cell.ber_target),
        ..TaskSpec::new(cell.task).with_input(cell.input_type, cell.input_dim)
    }
}

impl BenchmarkCache {
    fn build(config: &SweepConfig, cells: &[&Cell]) -> Result<Self> {
        let m = config.master_seed;
        let mut cal_keys: Vec<CalibrationKey> = cells.iter().map(|c| calibration_key(c)).collect();
        cal_keys.sort();
        cal_keys.dedup();
        let calibrated = cal_keys
            .par_iter()
            .map(|key| {
                let ber = f64::from_bits(key.ber_bits);
                let label = format!("{}:{ber:.4}", key.task);
                let base = TaskSpec::new(key.task);
                let scale = calibrate_separation(
                    &base,
                    ber,
                    config.calibration.tolerance,
                    config.calibration.n_mc,
                    seed::derive(m, &format!("calibrate:{label}"), 0),
                )?;
                let task = build_task(&base.with_scale(scale))?;
                let est = estimate_bayes_error(&task, config.benchmarks.ber_n_mc, seed::derive(m, &format!("ber:{label}"), 0))?;
                Ok((*key, Calibrated { scale, ber_est: est.rate }))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;

        let mut opt_cells: BTreeMap<OptimumKey, &Cell> = BTreeMap::new();
        for c in cells {
            opt_cells.entry(optimum_key(c)).or_insert(c);
        }
        let optimum = opt_cells
            .par_iter()
            .map(|(key, cell)| {
                let scale = calibrated[&key.calibration].scale;
                let task = build_task(&task_spec(cell, scale))?;
                let spec: ClassifierSpec = cell.classifier.parse()?;
                let label = format!(
                    "optimum:{}:{}:{}:{}:{:.4}",
                    cell.task, cell.input_type, cell.input_dim, cell.classifier, cell.ber_target
                );
                let opt = optimum_error_rate(
                    &spec,
                    &task,
                    config.benchmarks.opt_reps,
                    config.benchmarks.opt_n_large,
                    seed::derive(m, &label, 0),
                )?;
                Ok((key.clone(), opt.rate))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { calibrated, optimum })
    }
}

fn experiment_config(config: &SweepConfig, cell: &Cell, scale: f64, seed: u64) -> Result<ExperimentConfig> {
    let classifier: ClassifierSpec = cell.classifier.parse()?;
    let mut ec = ExperimentConfig::new(task_spec(cell, scale), classifier, Strategy::from_id(cell.strategy), cell.n_initial, seed);
    ec.pool_size = config.pool_size;
    ec.n_test = config.n_test;
    ec.n_steps = config.n_steps;
    ec.n_rs = config.n_rs;
    ec.benchmarks = config.benchmarks.into();
    Ok(ec)
}

/// Runs one cell's experiment and writes `trajectories.csv` and
/// `experiment.json` into `dir`.
fn run_cell(config: &SweepConfig, cell: &Cell, cache: &BenchmarkCache, dir: &Path) -> Result<ExperimentRecord> {
    let id = cell.id();
    let seed = experiment_seed(config.master_seed, &id);
    let cal = cache.calibrated[&calibration_key(cell)];
    let opt = cache.optimum[&optimum_key(cell)];
    let ec = experiment_config(config, cell, cal.scale, seed)?;
    let task = build_task(&ec.task_spec)?;
    let result = runner::run_experiment_with(
        &ec,
        &task,
        Benchmarks {
            ber_estimate: cal.ber_est,
            opt_error_rate: opt,
        },
    )?;
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    runner::write_trajectories_csv(&mut buf, &result.al_trajectory, &result.rs_trajectories)?;
    artifacts::write_atomic(&dir.join(TRAJECTORIES_FILE), &buf)?;
    let record = ExperimentRecord {
        experiment_id: id,
        cell: cell.clone(),
        seed,
        separation_scale: cal.scale,
        pool_size: ec.pool_size,
        n_test: ec.n_test,
        n_steps: ec.n_steps,
        n_rs: ec.n_rs,
        s_initial: result.s_initial,
        s_all: result.s_all,
        space_for_al: result.space_for_al,
        ber_est: result.ber_estimate,
        opt_error_rate: result.opt_error_rate,
        mismatch: classifier_mismatch(result.opt_error_rate, result.ber_estimate),
    };
    record.write(dir)?;
    Ok(record)
}

/// Evaluates a finished experiment directory and writes its comparison,
/// GAM and results-row files.
pub fn evaluate_dir(dir: &Path) -> Result<ResultRow> {
    let record = ExperimentRecord::read(dir)?;
    let bytes = artifacts::read_existing(&dir.join(TRAJECTORIES_FILE))?;
    let (al, rs) = runner::read_trajectories_csv(bytes.as_slice())?;
    let evaluation = evaluate_experiment(&al, &rs)?;
    artifacts::write_comparison_csv(dir, &evaluation)?;
    artifacts::write_gam_csv(dir, &evaluation)?;
    let row = ResultRow::new(&record, &evaluation);
    artifacts::write_row_file(dir, &row)?;
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Trajectories and experiment records only.
    Run,
    /// Run followed by evaluation.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub force: bool,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub total: usize,
    pub skipped: usize,
    pub completed: usize,
    pub failures: Vec<ErrorRow>,
}

impl SweepReport {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn is_done(dir: &Path, stage: Stage) -> bool {
    match stage {
        Stage::Run => dir.join(EXPERIMENT_FILE).exists() && dir.join(TRAJECTORIES_FILE).exists(),
        Stage::Full => dir.join(ROW_FILE).exists(),
    }
}

fn write_errors(out: &Path, failures: &mut [ErrorRow]) -> Result<()> {
    failures.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
    let mut buf = b"experiment_id,stage,message\n".to_vec();
    if !failures.is_empty() {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for f in failures.iter() {
            w.serialize(f)?;
        }
        buf.extend(w.into_inner().map_err(|e| Error::Io(e.into_error()))?);
    }
    artifacts::write_atomic(&out.join(ERRORS_FILE), &buf)
}

/// Runs every grid cell not already finished (all of them with `force`).
pub fn run_sweep(config: &SweepConfig, options: SweepOptions) -> Result<SweepReport> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(artifacts::experiments_root(out))?;
    let cells = expand_grid(config);
    log::info!(
        "grid: {} factor combinations x {} repeats = {} experiments",
        config.grid_size(),
        config.repeats,
        cells.len()
    );
    let pending: Vec<&Cell> = cells
        .iter()
        .filter(|c| options.force || !is_done(&artifacts::experiment_dir(out, &c.id()), options.stage))
        .collect();
    let mut report = SweepReport {
        total: cells.len(),
        skipped: cells.len() - pending.len(),
        ..SweepReport::default()
    };
    let pool = thread_pool(config.parallelism)?;
    if !pending.is_empty() {
        let cache = pool.install(|| BenchmarkCache::build(config, &pending))?;
        let outcomes: Vec<Option<ErrorRow>> = pool.install(|| {
            pending
                .par_iter()
                .map(|cell| {
                    let id = cell.id();
                    let dir = artifacts::experiment_dir(out, &id);
                    let fail = |stage: &str, e: Error| {
                        log::warn!("{id}: {stage} failed: {e}");
                        Some(ErrorRow {
                            experiment_id: id.clone(),
                            stage: stage.into(),
                            message: e.to_string(),
                        })
                    };
                    // a stale row must not survive a rerun of its cell
                    let _ = fs::remove_file(dir.join(ROW_FILE));
                    if let Err(e) = run_cell(config, cell, &cache, &dir) {
                        return fail("run", e);
                    }
                    if options.stage == Stage::Full {
                        if let Err(e) = evaluate_dir(&dir) {
                            return fail("evaluate", e);
                        }
                    }
                    log::info!("{id}: done");
                    None
                })
                .collect()
        });
        report.failures = outcomes.into_iter().flatten().collect();
        report.completed = pending.len() - report.failures.len();
    }
    write_errors(out, &mut report.failures)?;
    if options.stage == Stage::Full {
        assemble_results(out)?;
    }
    Ok(report)
}

fn experiment_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let root = artifacts::experiments_root(out);
    if !root.exists() {
        return Err(Error::MissingInput(root));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Evaluates every experiment directory under `out` that has trajectories.
pub fn evaluate_all(out: &Path, parallelism: usize, force: bool) -> Result<SweepReport> {
    let dirs: Vec<PathBuf> = experiment_dirs(out)?
        .into_iter()
        .filter(|d| d.join(TRAJECTORIES_FILE).exists() && d.join(EXPERIMENT_FILE).exists())
        .collect();
    let pending: Vec<&PathBuf> = dirs.iter().filter(|d| force || !d.join(ROW_FILE).exists()).collect();
    let pool = thread_pool(parallelism)?;
    let outcomes: Vec<Option<ErrorRow>> = pool.install(|| {
        pending
            .par_iter()
            .map(|dir| {
                evaluate_dir(dir).err().map(|e| ErrorRow {
                    experiment_id: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                    stage: "evaluate".into(),
                    message: e.to_string(),
                })
            })
            .collect()
    });
    let mut failures: Vec<ErrorRow> = outcomes.into_iter().flatten().collect();
    write_errors(out, &mut failures)?;
    assemble_results(out)?;
    Ok(SweepReport {
        total: dirs.len(),
        skipped: dirs.len() - pending.len(),
        completed: pending.len() - failures.len(),
        failures,
    })
}

/// Concatenates the per-experiment row files into `results.csv`, ordered by
/// experiment id.
pub fn assemble_results(out: &Path) -> Result<usize> {
    let mut rows: Vec<ResultRow> = Vec::new();
    for dir in experiment_dirs(out)? {
        let path = dir.join(ROW_FILE);
        if path.exists() {
            rows.extend(artifacts::read_rows::<ResultRow>(&path)?);
        }
    }
    rows.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
    let bytes = if rows.is_empty() {
        artifacts::empty_results()
    } else {
        let mut buf = Vec::new();
        artifacts::write_rows(&mut buf, &rows)?;
        buf
    };
    artifacts::write_atomic(&out.join(RESULTS_FILE), &bytes)?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::StrategyId;

    #[test]
    fn grid_counts_and_unique_ids() {
        let mut c = SweepConfig::new(vec![TaskId::Sd2, TaskId::Sd7], vec!["qda".into(), "logreg".into()], vec![StrategyId::Se]);
        c.repeats = 3;
        let cells = expand_grid(&c);
        assert_eq!(cells.len(), 12);
        let mut ids: Vec<String> = cells.iter().map(Cell::id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 12);
    }

    #[test]
    fn experiment_seeds_depend_on_id_and_master() {
        let a = experiment_seed(1, "sd2-continuous-d2-qda-se-n10-ber0.20-r000");
        assert_eq!(a, experiment_seed(1, "sd2-continuous-d2-qda-se-n10-ber0.20-r000"));
        assert_ne!(a, experiment_seed(1, "sd2-continuous-d2-qda-se-n10-ber0.20-r001"));
        assert_ne!(a, experiment_seed(2, "sd2-continuous-d2-qda-se-n10-ber0.20-r000"));
    }
}
