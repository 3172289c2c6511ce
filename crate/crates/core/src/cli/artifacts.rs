//! On-disk layout and file formats of a sweep directory.
//!
//! ```text
//! <out>/results.csv                      one row per finished experiment
//! <out>/errors.csv                       cells that failed in the last run
//! <out>/coefficients.csv, report.txt     written by `analyze`
//! <out>/experiments/<id>/experiment.json factors, seed and benchmarks
//! <out>/experiments/<id>/trajectories.csv
//! <out>/experiments/<id>/comparison.csv  A_i and the per-instance C_i
//! <out>/experiments/<id>/gam.csv         fitted curve and band on the zone grid
//! <out>/experiments/<id>/result.csv      this experiment's results row
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalstat::Evaluation;
use crate::strategies::StrategyId;
use crate::taskgen::{InputType, TaskId};

pub const RESULTS_FILE: &str = "results.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const EXPERIMENTS_DIR: &str = "experiments";
pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const GAM_FILE: &str = "gam.csv";
pub const ROW_FILE: &str = "result.csv";

pub fn experiments_root(out: &Path) -> PathBuf {
    out.join(EXPERIMENTS_DIR)
}

pub fn experiment_dir(out: &Path, id: &str) -> PathBuf {
    experiments_root(out).join(id)
}

/// Writes through a temporary sibling and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_existing(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

/// Factor levels of one grid cell and repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub task: TaskId,
    pub input_type: InputType,
    pub input_dim: usize,
    pub classifier: String,
    pub strategy: StrategyId,
    pub n_initial: usize,
    pub ber_target: f64,
    pub repeat: usize,
}

impl Cell {
    /// e.g. `sd2-continuous-d2-logreg-se-n10-ber0.20-r003`.
    pub fn id(&self) -> String {
        format!(
            "{}-{}-d{}-{}-{}-n{}-ber{:.2}-r{:03}",
            self.task, self.input_type, self.input_dim, self.classifier, self.strategy, self.n_initial, self.ber_target, self.repeat
        )
    }
}

/// Contents of `experiment.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment_id: String,
    pub cell: Cell,
    pub seed: u64,
    pub separation_scale: f64,
    pub pool_size: usize,
    pub n_test: usize,
    pub n_steps: usize,
    pub n_rs: usize,
    pub s_initial: f64,
    pub s_all: f64,
    pub space_for_al: f64,
    pub ber_est: f64,
    pub opt_error_rate: f64,
    pub mismatch: f64,
}

impl ExperimentRecord {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join(EXPERIMENT_FILE), text.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&read_existing(&dir.join(EXPERIMENT_FILE))?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// The initial fit already beat the full-data fit.
    NegativeSpace,
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub task: TaskId,
    pub input_type: InputType,
    pub input_dim: usize,
    pub classifier: String,
    pub strategy: StrategyId,
    pub n_initial: usize,
    pub ber_target: f64,
    pub ber_est: f64,
    pub opt_error_rate: f64,
    pub mismatch: f64,
    pub space_for_al: f64,
    pub s_initial: f64,
    pub s_all: f64,
    pub zone_length: usize,
    pub gain_flag: bool,
    pub aua_al: f64,
    pub aua_rs_mean: f64,
    pub acf1_scores: Option<f64>,
    pub acf1_deltas: Option<f64>,
    pub seed: u64,
    pub status: Status,
}

pub const RESULT_COLUMNS: [&str; 22] = [
    "experiment_id",
    "task",
    "input_type",
    "input_dim",
    "classifier",
    "strategy",
    "n_initial",
    "ber_target",
    "ber_est",
    "opt_error_rate",
    "mismatch",
    "space_for_al",
    "s_initial",
    "s_all",
    "zone_length",
    "gain_flag",
    "aua_al",
    "aua_rs_mean",
    "acf1_scores",
    "acf1_deltas",
    "seed",
    "status",
];

impl ResultRow {
    pub fn new(record: &ExperimentRecord, evaluation: &Evaluation) -> Self {
        let c = &record.cell;
        Self {
            experiment_id: record.experiment_id.clone(),
            task: c.task,
            input_type: c.input_type,
            input_dim: c.input_dim,
            classifier: c.classifier.clone(),
            strategy: c.strategy,
            n_initial: c.n_initial,
            ber_target: c.ber_target,
            ber_est: record.ber_est,
            opt_error_rate: record.opt_error_rate,
            mismatch: record.mismatch,
            space_for_al: record.space_for_al,
            s_initial: record.s_initial,
            s_all: record.s_all,
            zone_length: evaluation.zone.zone_length,
            gain_flag: evaluation.zone.gain_flag,
            aua_al: evaluation.aua_al,
            aua_rs_mean: evaluation.aua_rs_mean,
            acf1_scores: evaluation.acf1_scores,
            acf1_deltas: evaluation.acf1_deltas,
            seed: record.seed,
            status: if record.space_for_al < 0.0 { Status::NegativeSpace } else { Status::Ok },
        }
    }
}

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_existing(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_row_file(dir: &Path, row: &ResultRow) -> Result<()> {
    let mut buf = Vec::new();
    write_rows(&mut buf, std::slice::from_ref(row))?;
    write_atomic(&dir.join(ROW_FILE), &buf)
}

/// Results file with header only, for sweeps that produced no rows.
pub fn empty_results() -> Vec<u8> {
    let mut s = RESULT_COLUMNS.join(",");
    s.push('\n');
    s.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub experiment_id: String,
    pub stage: String,
    pub message: String,
}

pub fn write_comparison_csv(dir: &Path, evaluation: &Evaluation) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n_rs = evaluation.comparison.c.first().map_or(0, Vec::len);
    let mut header = vec!["step".to_string(), "budget_fraction".into(), "a".into()];
    header.extend((0..n_rs).map(|j| format!("c{j}")));
    w.write_record(&header)?;
    for (i, (row, a)) in evaluation.comparison.c.iter().zip(&evaluation.comparison.a).enumerate() {
        let mut rec = vec![(i + 1).to_string(), evaluation.budget_fractions[i].to_string(), a.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&dir.join(COMPARISON_FILE), &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamRow {
    pub grid_index: usize,
    pub budget_fraction: f64,
    pub fit: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn write_gam_csv(dir: &Path, evaluation: &Evaluation) -> Result<()> {
    let z = &evaluation.zone;
    let rows: Vec<GamRow> = (0..z.grid.len())
        .map(|k| GamRow {
            grid_index: k,
            budget_fraction: z.grid[k],
            fit: z.fit_curve[k],
            lower: z.lower_band[k],
            upper: z.upper_band[k],
        })
        .collect();
    let mut buf = Vec::new();
    write_rows(&mut buf, &rows)?;
    write_atomic(&dir.join(GAM_FILE), &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(acf: Option<f64>) -> ResultRow {
        ResultRow {
            experiment_id: "sd2-continuous-d2-qda-se-n10-ber0.20-r000".into(),
            task: TaskId::Sd2,
            input_type: InputType::Continuous,
            input_dim: 2,
            classifier: "qda".into(),
            strategy: StrategyId::Se,
            n_initial: 10,
            ber_target: 0.2,
            ber_est: 0.2013,
            opt_error_rate: 0.21,
            mismatch: 0.0087,
            space_for_al: -0.01,
            s_initial: 0.7,
            s_all: 0.1 + 0.2,
            zone_length: 17,
            gain_flag: true,
            aua_al: 0.77,
            aua_rs_mean: 0.765,
            acf1_scores: acf,
            acf1_deltas: Some(-0.45),
            seed: u64::MAX,
            status: Status::NegativeSpace,
        }
    }

    #[test]
    fn cell_id_format() {
        let c = Cell {
            task: TaskId::Sd2,
            input_type: InputType::Continuous,
            input_dim: 2,
            classifier: "logreg".into(),
            strategy: StrategyId::Se,
            n_initial: 10,
            ber_target: 0.2,
            repeat: 3,
        };
        assert_eq!(c.id(), "sd2-continuous-d2-logreg-se-n10-ber0.20-r003");
    }

    #[test]
    fn result_rows_round_trip() {
        let rows = vec![sample_row(Some(0.93)), sample_row(None)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        write_atomic(&path, &buf).unwrap();
        let header = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, RESULT_COLUMNS.join(","));
        assert_eq!(read_rows::<ResultRow>(&path).unwrap(), rows);
        let factor_rows: Vec<crate::factoranalysis::FactorRow> = read_rows(&path).unwrap();
        assert_eq!(factor_rows[0].zone_length, 17);
        assert_eq!(factor_rows[0].task_id, "sd2");
    }

    #[test]
    fn empty_results_has_header() {
        assert_eq!(String::from_utf8(empty_results()).unwrap().trim_end(), RESULT_COLUMNS.join(","));
    }
}
