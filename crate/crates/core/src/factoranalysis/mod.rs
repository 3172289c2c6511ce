//! Regression of zone length on the experiment factors.

pub mod glm;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use glm::{fit_negbin_fixed_kappa, fit_negbin_glm, fit_poisson_glm, Design, Family, GlmFit, KAPPA_CAP};

use crate::error::{Error, Result};

/// Per-experiment factor levels and outcome, read from the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    #[serde(rename = "task")]
    pub task_id: String,
    pub input_type: String,
    pub input_dim: usize,
    pub classifier: String,
    pub n_initial: usize,
    pub ber_target: f64,
    pub strategy: String,
    pub space_for_al: f64,
    pub opt_error_rate: f64,
    pub mismatch: f64,
    pub zone_length: u64,
    pub gain_flag: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Include `space_for_al` and `mismatch` as standardized covariates.
    pub include_inferred_covariates: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            include_inferred_covariates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDesign {
    pub design: Design,
    /// `(factor, reference level)` for every dummy-coded factor.
    pub reference_levels: Vec<(String, String)>,
    /// Factors or covariates left out, with the reason.
    pub dropped: Vec<String>,
}

type Extract = fn(&FactorRow) -> String;

fn categorical_factors() -> [(&'static str, Extract); 7] {
    [
        ("task", |r| r.task_id.clone()),
        ("input_type", |r| r.input_type.clone()),
        ("input_dim", |r| r.input_dim.to_string()),
        ("classifier", |r| r.classifier.clone()),
        ("n_initial", |r| r.n_initial.to_string()),
        ("ber_target", |r| format!("{:.2}", r.ber_target)),
        ("strategy", |r| r.strategy.clone()),
    ]
}

/// Alphabetical order, except that all-numeric level sets sort by value.
fn ordered_levels(values: &[String]) -> Vec<String> {
    let set: BTreeSet<&String> = values.iter().collect();
    let mut levels: Vec<String> = set.into_iter().cloned().collect();
    if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
        levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    levels
}

fn standardize(values: &[f64]) -> Option<Vec<f64>> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    (sd > 0.0 && sd.is_finite()).then(|| values.iter().map(|v| (v - mean) / sd).collect())
}

/// Treatment coding of the categorical factors (first level as reference),
/// standardized continuous covariates, intercept first.
pub fn encode_factors(rows: &[FactorRow], options: &EncodeOptions) -> Result<EncodedDesign> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!("{} rows are too few to fit", rows.len())));
    }
    let n = rows.len();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut names = vec!["intercept".to_string()];
    let mut reference_levels = Vec::new();
    let mut dropped = Vec::new();
    for (factor, extract) in categorical_factors() {
        let values: Vec<String> = rows.iter().map(extract).collect();
        let levels = ordered_levels(&values);
        if levels.len() < 2 {
            dropped.push(format!("{factor}: single level `{}`", levels[0]));
            continue;
        }
        reference_levels.push((factor.to_string(), levels[0].clone()));
        for level in &levels[1..] {
            columns.push(values.iter().map(|v| f64::from(u8::from(v == level))).collect());
            names.push(format!("{factor}:{level}"));
        }
    }
    if options.include_inferred_covariates {
        let covariates: [(&str, fn(&FactorRow) -> f64); 2] = [("space_for_al", |r| r.space_for_al), ("mismatch", |r| r.mismatch)];
        for (name, extract) in covariates {
            let raw: Vec<f64> = rows.iter().map(extract).collect();
            match standardize(&raw) {
                Some(z) => {
                    columns.push(z);
                    names.push(name.to_string());
                }
                None => dropped.push(format!("{name}: zero variance")),
            }
        }
    }
    for note in &dropped {
        log::warn!("dropped from design: {note}");
    }
    let matrix = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let response = rows.iter().map(|r| r.zone_length).collect();
    Ok(EncodedDesign {
        design: Design::new(matrix, response, names)?,
        reference_levels,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub family: Family,
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
}

pub fn coefficient_table(fit: &GlmFit) -> Vec<CoefficientRow> {
    (0..fit.coefficients.len())
        .map(|j| CoefficientRow {
            family: fit.family,
            name: fit.design_column_names[j].clone(),
            coefficient: fit.coefficients[j],
            std_error: fit.standard_errors[j],
            z_value: fit.z_values[j],
            p_value: fit.p_values[j],
        })
        .collect()
}

pub fn write_coefficients_csv<W: Write>(writer: W, fits: &[&GlmFit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for fit in fits {
        for row in coefficient_table(fit) {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Published values, shown beside the fitted ones for qualitative comparison.
pub const REFERENCE_COEFFICIENTS: [(&str, f64); 4] = [
    ("intercept", -1.695),
    ("logreg classifier", 1.142),
    ("continuous input", 0.578),
    ("discrete input", -1.235),
];
pub const REFERENCE_GAIN_RATE: f64 = 0.11;
pub const REFERENCE_ZONE_MEAN: f64 = 38.0;
pub const REFERENCE_ZONE_MEDIAN: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRates {
    pub n_experiments: usize,
    pub n_gain: usize,
    pub gain_rate: f64,
    /// Over experiments with a gain only.
    pub zone_mean: Option<f64>,
    pub zone_median: Option<f64>,
}

pub fn gain_rates(rows: &[FactorRow]) -> GainRates {
    let mut zones: Vec<u64> = rows.iter().filter(|r| r.gain_flag).map(|r| r.zone_length).collect();
    zones.sort_unstable();
    let k = zones.len();
    let zone_mean = (k > 0).then(|| zones.iter().sum::<u64>() as f64 / k as f64);
    let zone_median = (k > 0).then(|| {
        if k % 2 == 1 {
            zones[k / 2] as f64
        } else {
            (zones[k / 2 - 1] + zones[k / 2]) as f64 / 2.0
        }
    });
    GainRates {
        n_experiments: rows.len(),
        n_gain: k,
        gain_rate: if rows.is_empty() { 0.0 } else { k as f64 / rows.len() as f64 },
        zone_mean,
        zone_median,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Findings {
    pub family: Family,
    pub converged: bool,
    pub alpha: f64,
    /// Coefficients with `p < alpha`, most significant first.
    pub significant: Vec<CoefficientRow>,
    pub overall: GainRates,
    pub per_strategy: Vec<(String, GainRates)>,
}

pub fn summarize_findings(fit: &GlmFit, rows: &[FactorRow], alpha: f64) -> Findings {
    let mut significant: Vec<CoefficientRow> = coefficient_table(fit).into_iter().filter(|r| r.p_value < alpha).collect();
    significant.sort_by(|a, b| a.p_value.total_cmp(&b.p_value).then_with(|| a.name.cmp(&b.name)));
    let strategies: BTreeSet<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
    let per_strategy = strategies
        .into_iter()
        .map(|s| {
            let subset: Vec<FactorRow> = rows.iter().filter(|r| r.strategy == s).cloned().collect();
            (s.to_string(), gain_rates(&subset))
        })
        .collect();
    Findings {
        family: fit.family,
        converged: fit.converged,
        alpha,
        significant,
        overall: gain_rates(rows),
        per_strategy,
    }
}

/// Both fits plus the summary drawn from the negative binomial one.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub encoded: EncodedDesign,
    pub poisson: GlmFit,
    pub negbin: GlmFit,
    pub findings: Findings,
}

pub fn analyze(rows: &[FactorRow], options: &EncodeOptions, alpha: f64) -> Result<Analysis> {
    let encoded = encode_factors(rows, options)?;
    let poisson = fit_poisson_glm(&encoded.design)?;
    let negbin = fit_negbin_glm(&encoded.design)?;
    let findings = summarize_findings(&negbin, rows, alpha);
    Ok(Analysis {
        encoded,
        poisson,
        negbin,
        findings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

impl Analysis {
    /// Plain-text report.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let f = &self.findings;
        let _ = writeln!(out, "Zone-length regression on {} experiments", f.overall.n_experiments);
        let _ = writeln!(out);
        let _ = writeln!(out, "Reference levels:");
        for (factor, level) in &self.encoded.reference_levels {
            let _ = writeln!(out, "  {factor} = {level}");
        }
        for note in &self.encoded.dropped {
            let _ = writeln!(out, "  dropped {note}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Poisson fit: Pearson chi2/df = {:.4}, converged = {}", self.poisson.pearson_dispersion, self.poisson.converged);
        let kappa = self.negbin.kappa.unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "Negative binomial fit: kappa = {kappa:.4}{}, Pearson chi2/df = {:.4}, converged = {}",
            if self.negbin.poisson_limit { " (Poisson limit)" } else { "" },
            self.negbin.pearson_dispersion,
            self.negbin.converged
        );
        let _ = writeln!(out, "AIC: Poisson {:.2}, negative binomial {:.2}", self.poisson.aic(), self.negbin.aic());
        let _ = writeln!(out);
        let _ = writeln!(out, "Significant negative binomial coefficients (p < {}):", f.alpha);
        if f.significant.is_empty() {
            let _ = writeln!(out, "  none");
        }
        for row in &f.significant {
            let _ = writeln!(out, "  {:<28} {:>10.4}  p = {:.3e}", row.name, row.coefficient, row.p_value);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Gain rate: {:.1}% ({} of {}); zone length among gains: mean {}, median {}",
            100.0 * f.overall.gain_rate,
            f.overall.n_gain,
            f.overall.n_experiments,
            fmt_opt(f.overall.zone_mean),
            fmt_opt(f.overall.zone_median)
        );
        for (strategy, rates) in &f.per_strategy {
            let _ = writeln!(
                out,
                "  {strategy}: {:.1}% ({} of {}), mean {}, median {}",
                100.0 * rates.gain_rate,
                rates.n_gain,
                rates.n_experiments,
                fmt_opt(rates.zone_mean),
                fmt_opt(rates.zone_median)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Published reference values (qualitative comparison only):");
        for (name, value) in REFERENCE_COEFFICIENTS {
            let _ = writeln!(out, "  {name:<28} {value:>+10.3}");
        }
        let _ = writeln!(
            out,
            "  gain rate about {:.0}%, zone mean/median {:.0}/{:.0} of 200",
            100.0 * REFERENCE_GAIN_RATE,
            REFERENCE_ZONE_MEAN,
            REFERENCE_ZONE_MEDIAN
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(task: &str, classifier: &str, input_type: &str, zone: u64, space: f64) -> FactorRow {
        FactorRow {
            task_id: task.into(),
            input_type: input_type.into(),
            input_dim: 2,
            classifier: classifier.into(),
            n_initial: 10,
            ber_target: 0.2,
            strategy: "se".into(),
            space_for_al: space,
            opt_error_rate: 0.2,
            mismatch: space * 0.5 + 0.01 * zone as f64,
            zone_length: zone,
            gain_flag: zone > 0,
            seed: 1,
        }
    }

    fn grid() -> Vec<FactorRow> {
        let mut rows = Vec::new();
        let mut k = 0u64;
        for task in ["sd2", "sd10"] {
            for classifier in ["svm", "logreg", "qda", "rf"] {
                for input_type in ["continuous", "discretized"] {
                    for r in 0..6 {
                        k += 1;
                        rows.push(row(task, classifier, input_type, (k * 7 + r) % 5, (k as f64 * 0.37).sin()));
                    }
                }
            }
        }
        rows
    }

    #[test]
    fn classifier_coding_uses_alphabetical_reference() {
        let enc = encode_factors(&grid(), &EncodeOptions::default()).unwrap();
        let names = &enc.design.column_names;
        assert_eq!(names[0], "intercept");
        assert!(names.contains(&"classifier:qda".to_string()));
        assert!(names.contains(&"classifier:rf".to_string()));
        assert!(names.contains(&"classifier:svm".to_string()));
        assert!(!names.contains(&"classifier:logreg".to_string()));
        assert!(enc.reference_levels.contains(&("classifier".into(), "logreg".into())));
        // intercept + task(1) + input_type(1) + classifier(3) + 2 covariates
        assert_eq!(enc.design.n_cols(), 1 + 1 + 1 + 3 + 2);
        assert_eq!(enc.dropped.len(), 4);
    }

    #[test]
    fn covariates_are_standardized() {
        let enc = encode_factors(&grid(), &EncodeOptions::default()).unwrap();
        let j = enc.design.column_names.iter().position(|n| n == "space_for_al").unwrap();
        let col = enc.design.matrix.column(j);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        assert!(mean.abs() < 1e-12);
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 1e-12);
        let without = encode_factors(
            &grid(),
            &EncodeOptions {
                include_inferred_covariates: false,
            },
        )
        .unwrap();
        assert_eq!(without.design.n_cols(), enc.design.n_cols() - 2);
    }

    #[test]
    fn numeric_levels_sort_by_value() {
        let levels = ordered_levels(&["100".into(), "25".into(), "10".into(), "50".into()]);
        assert_eq!(levels, vec!["10", "25", "50", "100"]);
    }

    #[test]
    fn gain_rates_and_medians() {
        let rows: Vec<FactorRow> = [0, 0, 10, 30, 0, 20].iter().map(|&z| row("sd2", "qda", "continuous", z, 0.1)).collect();
        let g = gain_rates(&rows);
        assert_eq!(g.n_gain, 3);
        assert_eq!(g.gain_rate, 0.5);
        assert_eq!(g.zone_mean, Some(20.0));
        assert_eq!(g.zone_median, Some(20.0));
    }

    #[test]
    fn summary_sorts_by_p_and_handles_none_significant() {
        let rows = grid();
        let a = analyze(&rows, &EncodeOptions::default(), 0.05).unwrap();
        let ps: Vec<f64> = a.findings.significant.iter().map(|r| r.p_value).collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        let none = summarize_findings(&a.negbin, &rows, 0.0);
        assert!(none.significant.is_empty());
        assert_eq!(none.overall, gain_rates(&rows));
        let text = a.report();
        assert!(text.contains("Gain rate"));
        assert!(text.contains("-1.695"));
    }

    #[test]
    fn coefficient_csv_has_one_row_per_term() {
        let a = analyze(&grid(), &EncodeOptions::default(), 0.05).unwrap();
        let mut buf = Vec::new();
        write_coefficients_csv(&mut buf, &[&a.poisson, &a.negbin]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * a.encoded.design.n_cols());
        assert!(text.starts_with("family,name,coefficient,std_error,z_value,p_value"));
    }
}
