//! Synthetic binary classification tasks built from Gaussian clusters.
//!
//! Four fixed two-dimensional presets (`sd10`, `sd2`, `sd7`, `sd8`) are
//! shipped as constants. A preset is scaled by a single separation factor
//! `s`: every cluster mean becomes `s * m` and every covariance becomes
//! `I + s * E`, where `E` is the preset's positive semi-definite excess over
//! the identity. At `s = 0` both classes collapse onto `N(0, I)`, and the
//! Bayes error falls monotonically as `s` grows, which is what
//! [`calibrate_separation`] searches over.
//!
//! Extra input dimensions are i.i.d. standard normal noise, independent of
//! the class. Discretized inputs are produced by [`apply_input_transform`]
//! after sampling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::seed;

/// Equal-frequency bins used for discretized inputs.
pub const DISCRETIZE_BINS: usize = 8;

/// Dimension of every preset's class-dependent subspace.
pub const BASE_DIM: usize = 2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Sd10,
    Sd2,
    Sd7,
    Sd8,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::Sd10, TaskId::Sd2, TaskId::Sd7, TaskId::Sd8];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Sd10 => "sd10",
            TaskId::Sd2 => "sd2",
            TaskId::Sd7 => "sd7",
            TaskId::Sd8 => "sd8",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd10" => Ok(TaskId::Sd10),
            "sd2" => Ok(TaskId::Sd2),
            "sd7" => Ok(TaskId::Sd7),
            "sd8" => Ok(TaskId::Sd8),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputType {
    Continuous,
    Discretized,
    Mixed,
}

impl InputType {
    pub fn as_str(self) -> &'static str {
        match self {
            InputType::Continuous => "continuous",
            InputType::Discretized => "discretized",
            InputType::Mixed => "mixed",
        }
    }
}

impl fmt::Display for InputType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(InputType::Continuous),
            "discretized" | "discretised" | "discrete" => Ok(InputType::Discretized),
            "mixed" => Ok(InputType::Mixed),
            other => Err(Error::InvalidArgument(format!("unknown input type `{other}`"))),
        }
    }
}

/// One Gaussian component of a class-conditional mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCluster {
    pub mean: Vec<f64>,
    /// Row-major `p x p` covariance.
    pub covariance: Vec<f64>,
    pub weight: f64,
    pub class_label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    /// Probability of class 0.
    pub class_prior: f64,
    pub separation_scale: f64,
    pub input_type: InputType,
    pub input_dim: usize,
    pub target_ber: Option<f64>,
}

impl TaskSpec {
    pub fn new(task_id: TaskId) -> Self {
        Self {
            task_id,
            class_prior: 0.5,
            separation_scale: 1.0,
            input_type: InputType::Continuous,
            input_dim: BASE_DIM,
            target_ber: None,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.separation_scale = scale;
        self
    }

    pub fn with_input(mut self, input_type: InputType, input_dim: usize) -> Self {
        self.input_type = input_type;
        self.input_dim = input_dim;
        self
    }
}

// (class, weight, mean, excess covariance [a, b, c] meaning [[a, b], [b, c]])
type PresetCluster = (u8, f64, [f64; 2], [f64; 3]);

const THIRD: f64 = 1.0 / 3.0;

// sd2: one cluster per class, unequal covariances give a single curved boundary.
const SD2: &[PresetCluster] = &[
    (0, 1.0, [0.0, -0.6], [0.0, 0.0, 0.0]),
    (1, 1.0, [0.0, 0.6], [2.0, 0.0, 0.3]),
];

// sd7: two clusters per class arranged as opposing bent arms.
const SD7: &[PresetCluster] = &[
    (0, 0.5, [-1.0, 0.4], [0.3, 0.2, 0.3]),
    (0, 0.5, [0.2, 1.2], [0.5, 0.0, 0.1]),
    (1, 0.5, [1.0, -0.4], [0.3, 0.2, 0.3]),
    (1, 0.5, [-0.2, -1.2], [0.1, 0.0, 0.5]),
];

// sd8: three clusters per class alternating along x, a wavy boundary.
const SD8: &[PresetCluster] = &[
    (0, THIRD, [-2.0, 0.7], [0.2, 0.0, 0.0]),
    (0, THIRD, [0.0, -0.7], [0.2, 0.0, 0.0]),
    (0, THIRD, [2.0, 0.7], [0.2, 0.0, 0.0]),
    (1, THIRD, [-2.0, -0.7], [0.2, 0.0, 0.0]),
    (1, THIRD, [0.0, 0.7], [0.2, 0.0, 0.0]),
    (1, THIRD, [2.0, -0.7], [0.2, 0.0, 0.0]),
];

// sd10: two interleaved clusters per class (exclusive-or layout).
const SD10: &[PresetCluster] = &[
    (0, 0.5, [-1.0, 1.0], [0.2, 0.0, 0.2]),
    (0, 0.5, [1.0, -1.0], [0.2, 0.0, 0.2]),
    (1, 0.5, [1.0, 1.0], [0.2, 0.0, 0.2]),
    (1, 0.5, [-1.0, -1.0], [0.2, 0.0, 0.2]),
];

fn preset(task_id: TaskId) -> &'static [PresetCluster] {
    match task_id {
        TaskId::Sd10 => SD10,
        TaskId::Sd2 => SD2,
        TaskId::Sd7 => SD7,
        TaskId::Sd8 => SD8,
    }
}

/// Clusters of a preset at the given separation scale.
pub fn preset_clusters(task_id: TaskId, scale: f64) -> Vec<GaussianCluster> {
    preset(task_id)
        .iter()
        .map(|&(class_label, weight, m, [a, b, c])| GaussianCluster {
            mean: vec![scale * m[0], scale * m[1]],
            covariance: vec![1.0 + scale * a, scale * b, scale * b, 1.0 + scale * c],
            weight,
            class_label,
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Component {
    cluster: GaussianCluster,
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn new(index: usize, cluster: GaussianCluster) -> Result<Self> {
        let p = cluster.mean.len();
        if cluster.covariance.len() != p * p {
            return Err(Error::InvalidTask(format!(
                "cluster {index}: covariance has {} entries, expected {}",
                cluster.covariance.len(),
                p * p
            )));
        }
        let cov = DMatrix::from_row_slice(p, p, &cluster.covariance);
        let sym_err = (&cov - cov.transpose()).amax();
        if sym_err > 1e-12 * cov.amax().max(1.0) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { cluster: index });
        }
        let chol = cov
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { cluster: index })?
            .unpack();
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_norm = -0.5 * (p as f64 * LN_2PI + log_det);
        Ok(Self {
            mean: DVector::from_column_slice(&cluster.mean),
            cluster,
            chol,
            log_norm,
        })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        // Forward substitution L y = x - mean.
        let p = self.mean.len();
        let mut y = [0.0f64; 16];
        let mut buf;
        let y: &mut [f64] = if p <= 16 {
            &mut y[..p]
        } else {
            buf = vec![0.0; p];
            &mut buf
        };
        let mut quad = 0.0;
        for i in 0..p {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * y[j];
            }
            y[i] = s / self.chol[(i, i)];
            quad += y[i] * y[i];
        }
        self.log_norm - 0.5 * quad
    }
}

/// A sampleable generative model for a binary task.
#[derive(Debug, Clone)]
pub struct Task {
    spec: Option<TaskSpec>,
    components: Vec<Component>,
    class_prior: f64,
    base_dim: usize,
    noise_dims: usize,
    input_type: InputType,
}

/// Monte Carlo estimate of the Bayes error rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerEstimate {
    pub rate: f64,
    pub std_error: f64,
}

impl Task {
    /// Builds a task directly from clusters.
    pub fn from_clusters(
        clusters: Vec<GaussianCluster>,
        class_prior: f64,
        noise_dims: usize,
        input_type: InputType,
    ) -> Result<Self> {
        if !(class_prior > 0.0 && class_prior < 1.0) {
            return Err(Error::InvalidTask(format!(
                "class prior {class_prior} outside (0, 1)"
            )));
        }
        let base_dim = clusters.first().map_or(0, |c| c.mean.len());
        if base_dim == 0 {
            return Err(Error::InvalidTask("no clusters".into()));
        }
        let mut weight_sum = [0.0f64; 2];
        for (i, c) in clusters.iter().enumerate() {
            if c.mean.len() != base_dim {
                return Err(Error::InvalidTask(format!("cluster {i} has wrong dimension")));
            }
            if c.class_label > 1 {
                return Err(Error::InvalidTask(format!("cluster {i} has label {}", c.class_label)));
            }
            if !(c.weight > 0.0) {
                return Err(Error::InvalidTask(format!("cluster {i} has non-positive weight")));
            }
            weight_sum[c.class_label as usize] += c.weight;
        }
        for (class, s) in weight_sum.iter().enumerate() {
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidTask(format!(
                    "class {class} cluster weights sum to {s}, expected 1"
                )));
            }
        }
        let components = clusters
            .into_iter()
            .enumerate()
            .map(|(i, c)| Component::new(i, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: None,
            components,
            class_prior,
            base_dim,
            noise_dims,
            input_type,
        })
    }

    pub fn spec(&self) -> Option<&TaskSpec> {
        self.spec.as_ref()
    }

    pub fn clusters(&self) -> impl Iterator<Item = &GaussianCluster> {
        self.components.iter().map(|c| &c.cluster)
    }

    pub fn class_prior(&self) -> f64 {
        self.class_prior
    }

    pub fn input_type(&self) -> InputType {
        self.input_type
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn dim(&self) -> usize {
        self.base_dim + self.noise_dims
    }

    /// `ln(pi_c * f_c(x))` for both classes, on the class-dependent columns.
    pub fn log_joint(&self, x: &[f64]) -> [f64; 2] {
        let mut acc = [f64::NEG_INFINITY; 2];
        for comp in &self.components {
            let c = comp.cluster.class_label as usize;
            let v = comp.cluster.weight.ln() + comp.log_density(&x[..self.base_dim]);
            acc[c] = log_add(acc[c], v);
        }
        acc[0] += self.class_prior.ln();
        acc[1] += (1.0 - self.class_prior).ln();
        acc
    }

    /// Exact posterior `P(y = 1 | x)`.
    pub fn posterior(&self, x: &[f64]) -> f64 {
        let [l0, l1] = self.log_joint(x);
        1.0 / (1.0 + (l0 - l1).exp())
    }

    /// Bayes rule; ties go to class 0.
    pub fn bayes_label(&self, x: &[f64]) -> u8 {
        let [l0, l1] = self.log_joint(x);
        u8::from(l1 > l0)
    }

    // Fixed number of draws per call regardless of outcome, so estimates at
    // different scales share random numbers.
    fn draw_base(&self, rng: &mut seed::Rng, out: &mut [f64]) -> u8 {
        let u_class: f64 = rng.random();
        let u_cluster: f64 = rng.random();
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let label = u8::from(u_class >= self.class_prior);
        let mut acc = 0.0;
        let mut chosen = None;
        for comp in self.components.iter().filter(|c| c.cluster.class_label == label) {
            acc += comp.cluster.weight;
            chosen = Some(comp);
            if u_cluster < acc {
                break;
            }
        }
        let comp = chosen.expect("both classes have clusters");
        let p = self.base_dim;
        // x = mean + L z, computed in place from the bottom row up.
        for i in (0..p).rev() {
            let mut s = comp.mean[i];
            for j in 0..=i {
                s += comp.chol[(i, j)] * out[j];
            }
            out[i] = s;
        }
        label
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Builds the preset task named by `spec`, scaled by `spec.separation_scale`.
pub fn build_task(spec: &TaskSpec) -> Result<Task> {
    if spec.input_dim < BASE_DIM {
        return Err(Error::InvalidTask(format!(
            "input_dim {} below base dimension {BASE_DIM}",
            spec.input_dim
        )));
    }
    if !spec.separation_scale.is_finite() {
        return Err(Error::InvalidTask("non-finite separation scale".into()));
    }
    let clusters = preset_clusters(spec.task_id, spec.separation_scale);
    let mut task = Task::from_clusters(
        clusters,
        spec.class_prior,
        spec.input_dim - BASE_DIM,
        spec.input_type,
    )?;
    task.spec = Some(spec.clone());
    Ok(task)
}

/// Two unit-variance Gaussians at `-mu` (class 0) and `+mu` (class 1), equal
/// priors. Its Bayes error is `Phi(-mu)`.
pub fn analytic_check_task(mu: f64) -> Result<Task> {
    let cluster = |m: f64, class_label| GaussianCluster {
        mean: vec![m],
        covariance: vec![1.0],
        weight: 1.0,
        class_label,
    };
    Task::from_clusters(
        vec![cluster(-mu, 0), cluster(mu, 1)],
        0.5,
        0,
        InputType::Continuous,
    )
}

pub fn estimate_bayes_error(task: &Task, n_mc: usize, seed: u64) -> Result<BerEstimate> {
    if n_mc < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "n_mc = {n_mc}; at least 10000 draws required"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut x = vec![0.0; task.base_dim];
    let mut errors = 0usize;
    for _ in 0..n_mc {
        let y = task.draw_base(&mut rng, &mut x);
        let [l0, l1] = task.log_joint(&x);
        if !l0.is_finite() && !l1.is_finite() {
            return Err(Error::InvalidTask("zero total density at a sampled point".into()));
        }
        if u8::from(l1 > l0) != y {
            errors += 1;
        }
    }
    let rate = errors as f64 / n_mc as f64;
    Ok(BerEstimate {
        rate,
        std_error: (rate * (1.0 - rate) / n_mc as f64).sqrt(),
    })
}

/// Rao-Blackwellized Bayes error: the mean over sampled points of the
/// smaller exact class posterior. Unbiased for the same quantity as
/// [`estimate_bayes_error`] with a far smaller variance.
fn posterior_bayes_error(task: &Task, n_mc: usize, seed: u64) -> Result<BerEstimate> {
    let mut rng = seed::rng(seed);
    let mut x = vec![0.0; task.base_dim];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_mc {
        task.draw_base(&mut rng, &mut x);
        let [l0, l1] = task.log_joint(&x);
        if !l0.is_finite() && !l1.is_finite() {
            return Err(Error::InvalidTask("zero total density at a sampled point".into()));
        }
        let minority = 1.0 / (1.0 + (l0 - l1).abs().exp());
        sum += minority;
        sum_sq += minority * minority;
    }
    let n = n_mc as f64;
    let rate = sum / n;
    let var = ((sum_sq - n * rate * rate) / (n - 1.0)).max(0.0);
    Ok(BerEstimate {
        rate,
        std_error: (var / n).sqrt(),
    })
}

/// Bisection on the separation scale until the Monte Carlo Bayes error is
/// within `tol` of `target_ber`.
///
/// The search runs on the low-variance posterior estimator over one fixed
/// set of draws and tightens to `tol / 10`, so the returned scale's true
/// error rate sits well inside `tol`. The result is then confirmed with
/// [`estimate_bayes_error`] on the same draws.
pub fn calibrate_separation(
    spec: &TaskSpec,
    target_ber: f64,
    tol: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::Calibration(format!(
            "target BER {target_ber} unreachable; must lie in (0, 0.5)"
        )));
    }
    if tol < 0.005 {
        return Err(Error::InvalidArgument(format!("tolerance {tol} below 0.005")));
    }
    let ber_at = |scale: f64| -> Result<BerEstimate> {
        let s = TaskSpec {
            separation_scale: scale,
            ..spec.clone()
        };
        posterior_bayes_error(&build_task(&s)?, n_mc, seed)
    };

    let mut lo = 0.0;
    let mut lo_est = ber_at(lo)?;
    if lo_est.rate < target_ber - tol {
        return Err(Error::Calibration(format!(
            "BER at zero separation is {:.4}, already below target {target_ber}",
            lo_est.rate
        )));
    }
    let mut hi = 1.0;
    let mut hi_est = ber_at(hi)?;
    let mut doublings = 0;
    while hi_est.rate > target_ber {
        ensure_monotone(&lo_est, &hi_est, lo, hi)?;
        lo = hi;
        lo_est = hi_est;
        hi *= 2.0;
        hi_est = ber_at(hi)?;
        doublings += 1;
        if doublings > 12 {
            return Err(Error::Calibration(format!(
                "target BER {target_ber} not bracketed up to scale {hi}"
            )));
        }
    }
    ensure_monotone(&lo_est, &hi_est, lo, hi)?;

    let goal = tol / 10.0;
    let mut best = if (hi_est.rate - target_ber).abs() < (lo_est.rate - target_ber).abs() {
        (hi, hi_est.rate)
    } else {
        (lo, lo_est.rate)
    };
    for _ in 0..60 {
        if (best.1 - target_ber).abs() <= goal {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let mid_est = ber_at(mid)?;
        ensure_monotone(&lo_est, &mid_est, lo, mid)?;
        ensure_monotone(&mid_est, &hi_est, mid, hi)?;
        if (mid_est.rate - target_ber).abs() < (best.1 - target_ber).abs() {
            best = (mid, mid_est.rate);
        }
        if mid_est.rate > target_ber {
            lo = mid;
            lo_est = mid_est;
        } else {
            hi = mid;
            hi_est = mid_est;
        }
    }
    let confirmed = estimate_bayes_error(&build_task(&TaskSpec { separation_scale: best.0, ..spec.clone() })?, n_mc, seed)?;
    if (best.1 - target_ber).abs() > tol || (confirmed.rate - target_ber).abs() > tol {
        return Err(Error::Calibration(format!(
            "bisection ended at BER {:.4}, target {target_ber} +/- {tol}",
            confirmed.rate
        )));
    }
    Ok(best.0)
}

// BER must not increase with scale; a few standard errors of slack absorb
// sampling wobble between neighbouring scales.
fn ensure_monotone(lo: &BerEstimate, hi: &BerEstimate, s_lo: f64, s_hi: f64) -> Result<()> {
    let slack = 4.0 * lo.std_error.max(hi.std_error);
    if hi.rate > lo.rate + slack {
        return Err(Error::Calibration(format!(
            "BER not monotone: {:.4} at scale {s_lo} but {:.4} at scale {s_hi}",
            lo.rate, hi.rate
        )));
    }
    Ok(())
}

/// Draws `n` labelled points and applies the task's input transform.
///
/// Both classes are guaranteed present: a draw lacking one is discarded and
/// redrawn from the continuing random stream.
pub fn sample_dataset(task: &Task, n: usize, seed: u64) -> Result<Dataset> {
    if n < 20 {
        return Err(Error::InvalidArgument(format!("sample size {n} below 20")));
    }
    let mut rng = seed::rng(seed);
    let p = task.dim();
    loop {
        let mut data = vec![0.0; n * p];
        let mut labels = Vec::with_capacity(n);
        for row in data.chunks_exact_mut(p) {
            let (base, noise) = row.split_at_mut(task.base_dim);
            labels.push(task.draw_base(&mut rng, base));
            for v in noise.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        let ones = labels.iter().filter(|&&y| y == 1).count();
        if ones == 0 || ones == n {
            continue;
        }
        let ds = Dataset::new(FeatureMatrix::new(data, p)?, labels)?;
        return apply_input_transform(&ds, task.input_type);
    }
}

/// Replaces values by the midpoint of their equal-frequency bin.
///
/// Cut points are the values at ranks `k * n / n_bins`; every value is
/// assigned by comparison against the cut values, so ties always share a bin
/// and repeated application is a no-op.
pub fn discretize_column(values: &[f64], n_bins: usize) -> Vec<f64> {
    let n = values.len();
    if n == 0 || n_bins <= 1 {
        let (lo, hi) = min_max(values);
        return vec![0.5 * (lo + hi); n];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = (1..n_bins).map(|k| sorted[k * n / n_bins]).collect();
    cuts.dedup();
    let bin_of = |v: f64| cuts.partition_point(|&c| c <= v);
    let mut lo = vec![f64::INFINITY; cuts.len() + 1];
    let mut hi = vec![f64::NEG_INFINITY; cuts.len() + 1];
    for &v in values {
        let b = bin_of(v);
        lo[b] = lo[b].min(v);
        hi[b] = hi[b].max(v);
    }
    values
        .iter()
        .map(|&v| {
            let b = bin_of(v);
            0.5 * (lo[b] + hi[b])
        })
        .collect()
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

/// Continuous is the identity; discretized bins every column into
/// [`DISCRETIZE_BINS`] equal-frequency bins; mixed bins the even-indexed
/// columns only.
pub fn apply_input_transform(dataset: &Dataset, input_type: InputType) -> Result<Dataset> {
    let mut out = dataset.clone();
    for j in 0..dataset.n_cols() {
        let discretize = match input_type {
            InputType::Continuous => false,
            InputType::Discretized => true,
            InputType::Mixed => j % 2 == 0,
        };
        if discretize {
            let col = discretize_column(&dataset.features.column(j), DISCRETIZE_BINS);
            out.features.set_column(j, &col);
            out.column_meta[j] = ColumnKind::Discretized;
        }
    }
    Ok(out)
}

/// Self-describing plain-text dump of a task's generative model.
pub fn task_to_text(task: &Task) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "# alsim task definition");
    if let Some(spec) = &task.spec {
        let _ = writeln!(s, "task {}", spec.task_id);
        let _ = writeln!(s, "separation_scale {}", spec.separation_scale);
        if let Some(t) = spec.target_ber {
            let _ = writeln!(s, "target_ber {t}");
        }
    } else {
        let _ = writeln!(s, "task custom");
    }
    let _ = writeln!(s, "class_prior {}", task.class_prior);
    let _ = writeln!(s, "input_type {}", task.input_type);
    let _ = writeln!(s, "base_dim {}", task.base_dim);
    let _ = writeln!(s, "noise_dims {}", task.noise_dims);
    let _ = writeln!(s, "clusters {}", task.components.len());
    for (i, comp) in task.components.iter().enumerate() {
        let c = &comp.cluster;
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "cluster {i} class {} weight {}", c.class_label, c.weight);
        let _ = writeln!(s, "  mean {}", join(&c.mean));
        let _ = writeln!(s, "  covariance {}", join(&c.covariance));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn phi(x: f64) -> f64 {
        Normal::standard().cdf(x)
    }

    #[test]
    fn posterior_estimator_matches_analytic_error_with_small_variance() {
        for mu in [0.5, 1.2816, 2.0] {
            let task = analytic_check_task(mu).unwrap();
            let smooth = posterior_bayes_error(&task, 50_000, 3).unwrap();
            let counted = estimate_bayes_error(&task, 50_000, 3).unwrap();
            assert!((smooth.rate - phi(-mu)).abs() < 4.0 * smooth.std_error);
            assert!(smooth.std_error < 0.6 * counted.std_error);
        }
    }

    #[test]
    fn presets_build_at_unit_scale() {
        for id in TaskId::ALL {
            let task = build_task(&TaskSpec::new(id)).unwrap();
            assert_eq!(task.dim(), 2);
            let counts = task.clusters().fold([0, 0], |mut acc, c| {
                acc[c.class_label as usize] += 1;
                acc
            });
            let expected = match id {
                TaskId::Sd2 => 1,
                TaskId::Sd7 | TaskId::Sd10 => 2,
                TaskId::Sd8 => 3,
            };
            assert_eq!(counts, [expected, expected], "{id}");
        }
    }

    #[test]
    fn unknown_task_is_rejected() {
        assert!(matches!("sd3".parse::<TaskId>(), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn negative_scale_breaks_positive_definiteness() {
        let spec = TaskSpec::new(TaskId::Sd2).with_scale(-1.0);
        assert!(matches!(build_task(&spec), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn ten_dim_task_appends_noise_columns() {
        let spec = TaskSpec::new(TaskId::Sd2).with_input(InputType::Continuous, 10);
        let task = build_task(&spec).unwrap();
        let ds = sample_dataset(&task, 10_000, 3).unwrap();
        assert_eq!(ds.n_cols(), 10);
        let y: Vec<f64> = ds.labels.iter().map(|&v| f64::from(v)).collect();
        for j in 2..10 {
            let r = correlation(&ds.features.column(j), &y);
            assert!(r.abs() < 0.05, "column {j} correlates with label: {r}");
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn zero_scale_classes_are_indistinguishable() {
        let task = build_task(&TaskSpec::new(TaskId::Sd7).with_scale(0.0)).unwrap();
        let est = estimate_bayes_error(&task, 100_000, 11).unwrap();
        assert!((est.rate - 0.5).abs() <= 0.005, "{est:?}");
    }

    #[test]
    fn analytic_task_matches_gaussian_cdf() {
        let mu = 1.2816;
        let truth = phi(-mu);
        let task = analytic_check_task(mu).unwrap();
        let est = estimate_bayes_error(&task, 100_000, 5).unwrap();
        assert!((est.rate - 0.10).abs() <= 0.005);
        assert!((est.rate - truth).abs() <= 4.0 * est.std_error);
    }

    #[test]
    fn analytic_task_within_four_se_in_most_repeats() {
        let mu = 0.8;
        let truth = phi(-mu);
        let task = analytic_check_task(mu).unwrap();
        let hits = (0..100)
            .filter(|&s| {
                let est = estimate_bayes_error(&task, 10_000, 1000 + s).unwrap();
                (est.rate - truth).abs() <= 4.0 * est.std_error
            })
            .count();
        assert!(hits >= 99, "{hits}/100");
    }

    #[test]
    fn ber_estimate_is_deterministic() {
        let task = build_task(&TaskSpec::new(TaskId::Sd8)).unwrap();
        let a = estimate_bayes_error(&task, 20_000, 9).unwrap();
        let b = estimate_bayes_error(&task, 20_000, 9).unwrap();
        assert_eq!(a.rate.to_bits(), b.rate.to_bits());
    }

    #[test]
    fn too_few_mc_draws_rejected() {
        let task = analytic_check_task(1.0).unwrap();
        assert!(estimate_bayes_error(&task, 9_999, 1).is_err());
    }

    #[test]
    fn calibration_hits_target_on_fresh_draws() {
        let spec = TaskSpec::new(TaskId::Sd2);
        let scale = calibrate_separation(&spec, 0.10, 0.005, 100_000, 21).unwrap();
        let task = build_task(&spec.clone().with_scale(scale)).unwrap();
        let est = estimate_bayes_error(&task, 100_000, 777).unwrap();
        assert!((0.095..=0.105).contains(&est.rate), "{est:?}");
    }

    #[test]
    fn harder_target_needs_smaller_scale() {
        let spec = TaskSpec::new(TaskId::Sd10);
        let easy = calibrate_separation(&spec, 0.10, 0.005, 20_000, 4).unwrap();
        let hard = calibrate_separation(&spec, 0.35, 0.005, 20_000, 4).unwrap();
        assert!(hard < easy);
    }

    #[test]
    fn zero_target_is_unreachable() {
        let spec = TaskSpec::new(TaskId::Sd2);
        assert!(matches!(
            calibrate_separation(&spec, 0.0, 0.005, 20_000, 1),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn sample_has_shape_and_both_classes() {
        let task = build_task(&TaskSpec::new(TaskId::Sd2)).unwrap();
        let ds = sample_dataset(&task, 100, 1).unwrap();
        assert_eq!(ds.len(), 100);
        let [c0, c1] = ds.class_counts();
        assert!(c0 > 0 && c1 > 0);
        assert_eq!(ds, sample_dataset(&task, 100, 1).unwrap());
        assert!(sample_dataset(&task, 19, 1).is_err());
    }

    #[test]
    fn class_fraction_matches_prior() {
        let mut spec = TaskSpec::new(TaskId::Sd7);
        spec.class_prior = 0.3;
        let task = build_task(&spec).unwrap();
        let ds = sample_dataset(&task, 100_000, 8).unwrap();
        let frac0 = ds.class_counts()[0] as f64 / ds.len() as f64;
        // binomial sd at n = 1e5 is ~0.0015; 0.01 is > 6 sd
        assert!((frac0 - 0.3).abs() < 0.01, "{frac0}");
    }

    #[test]
    fn two_bin_midpoints() {
        assert_eq!(discretize_column(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 1.5, 3.5, 3.5]);
    }

    #[test]
    fn constant_column_is_preserved() {
        assert_eq!(discretize_column(&[2.5; 10], 8), vec![2.5; 10]);
    }

    #[test]
    fn mixed_discretizes_even_columns() {
        let spec = TaskSpec::new(TaskId::Sd2).with_input(InputType::Mixed, 2);
        let task = build_task(&spec).unwrap();
        let ds = sample_dataset(&task, 200, 2).unwrap();
        assert_eq!(ds.column_meta, vec![ColumnKind::Discretized, ColumnKind::Continuous]);
        let mut c0 = ds.features.column(0);
        c0.sort_by(f64::total_cmp);
        c0.dedup();
        assert!(c0.len() <= 8);
        let mut c1 = ds.features.column(1);
        c1.sort_by(f64::total_cmp);
        c1.dedup();
        assert_eq!(c1.len(), 200);
    }

    #[test]
    fn export_lists_every_cluster() {
        let task = build_task(&TaskSpec::new(TaskId::Sd8)).unwrap();
        let text = task_to_text(&task);
        assert!(text.contains("task sd8"));
        assert_eq!(text.matches("\ncluster ").count(), 6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn discretize_is_idempotent(values in prop::collection::vec(-5.0f64..5.0, 1..200)) {
                let once = discretize_column(&values, DISCRETIZE_BINS);
                let twice = discretize_column(&once, DISCRETIZE_BINS);
                prop_assert_eq!(&once, &twice);
                let mut distinct = once.clone();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                prop_assert!(distinct.len() <= DISCRETIZE_BINS);
            }

            #[test]
            fn discretize_preserves_order(values in prop::collection::vec(-5.0f64..5.0, 2..100)) {
                let out = discretize_column(&values, DISCRETIZE_BINS);
                for i in 0..values.len() {
                    for j in 0..values.len() {
                        if values[i] < values[j] {
                            prop_assert!(out[i] <= out[j]);
                        }
                    }
                }
            }
        }
    }
}
