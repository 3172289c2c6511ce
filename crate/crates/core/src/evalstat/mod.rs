//! Assessment of one experiment: per-step score differences, pairwise
//! comparison against the random-selection instances, a smoothed curve of the
//! averaged comparisons with a lower confidence band, the length of the
//! initial zone where that band stays above 0.5, plus AUA and ACF summaries.

pub mod bspline;
pub mod gam;

use serde::{Deserialize, Serialize};

pub use gam::{band_quantile, fit_gam, fit_gam_fixed, gam_lower_band, Band, GamFit};

use crate::error::{Error, Result};
use crate::runner::Trajectory;

pub const ZONE_GRID_POINTS: usize = 200;
pub const BAND_LEVEL: f64 = 0.8;

/// `S_i - S_{i-1}` for consecutive scores.
pub fn score_differences(scores: &[f64]) -> Vec<f64> {
    scores.windows(2).map(|w| w[1] - w[0]).collect()
}

/// 1 if `x > y`, 0.5 on exact equality, 0 otherwise.
pub fn compare(x: f64, y: f64) -> Result<f64> {
    if x.is_nan() || y.is_nan() {
        return Err(Error::NonFinite("compare input".into()));
    }
    Ok(if x > y {
        1.0
    } else if x == y {
        0.5
    } else {
        0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSeries {
    /// `c[i][j]`: step `i` against random instance `j`.
    pub c: Vec<Vec<f64>>,
    /// Row means of `c`.
    pub a: Vec<f64>,
}

pub fn comparison_series(al_deltas: &[f64], rs_deltas: &[Vec<f64>]) -> Result<ComparisonSeries> {
    if rs_deltas.is_empty() {
        return Err(Error::InvalidArgument("no random-selection instances".into()));
    }
    if let Some(bad) = rs_deltas.iter().find(|d| d.len() != al_deltas.len()) {
        return Err(Error::DimensionMismatch {
            expected: al_deltas.len(),
            got: bad.len(),
        });
    }
    let c = al_deltas
        .iter()
        .enumerate()
        .map(|(i, &x)| rs_deltas.iter().map(|d| compare(x, d[i])).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let a = c.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
    Ok(ComparisonSeries { c, a })
}

/// Sample autocorrelation at lags `1..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag + 1 {
        return Err(Error::InvalidArgument(format!("series of length {n} too short for lag {max_lag}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("acf input".into()));
    }
    if series.iter().all(|&v| v == series[0]) {
        return Err(Error::ZeroVariance);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((1..=max_lag)
        .map(|k| centered.iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Trapezoidal mean of equally spaced scores over `[0, 1]`.
pub fn aua(scores: &[f64]) -> Result<f64> {
    match scores {
        [] => Err(Error::InvalidArgument("empty trajectory".into())),
        [only] => Ok(*only),
        [first, .., last] => {
            let interior: f64 = scores.iter().sum::<f64>() - first - last;
            Ok((interior + 0.5 * (first + last)) / (scores.len() - 1) as f64)
        }
    }
}

/// `ZONE_GRID_POINTS` equally spaced points spanning `[lo, hi]`.
pub fn zone_grid(lo: f64, hi: f64) -> Vec<f64> {
    let last = (ZONE_GRID_POINTS - 1) as f64;
    (0..ZONE_GRID_POINTS).map(|k| lo + (hi - lo) * k as f64 / last).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneRun {
    pub start: usize,
    pub length: usize,
}

/// Initial run of band values above 0.5, allowed to begin at index 0 or 1.
pub fn zone_run(lower_band: &[f64]) -> Option<ZoneRun> {
    let start = (0..lower_band.len().min(2)).find(|&i| lower_band[i] > 0.5)?;
    let length = lower_band[start..].iter().take_while(|&&v| v > 0.5).count();
    Some(ZoneRun { start, length })
}

pub fn zone_length(lower_band: &[f64]) -> usize {
    zone_run(lower_band).map_or(0, |r| r.length)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneResult {
    pub zone_length: usize,
    pub zone_start: Option<usize>,
    pub grid: Vec<f64>,
    pub fit_curve: Vec<f64>,
    pub lower_band: Vec<f64>,
    pub upper_band: Vec<f64>,
    pub gain_flag: bool,
}

pub fn evaluate_zone(fit: &GamFit, lo: f64, hi: f64, level: f64) -> ZoneResult {
    let grid = zone_grid(lo, hi);
    let band = fit.band(&grid, level);
    let run = zone_run(&band.lower);
    let zone_length = run.map_or(0, |r| r.length);
    ZoneResult {
        zone_length,
        zone_start: run.map(|r| r.start),
        grid,
        fit_curve: band.fit,
        lower_band: band.lower,
        upper_band: band.upper,
        gain_flag: zone_length > 0,
    }
}

/// Full assessment of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub budget_fractions: Vec<f64>,
    pub comparison: ComparisonSeries,
    pub gam: GamFit,
    pub zone: ZoneResult,
    pub aua_al: f64,
    pub aua_rs_mean: f64,
    /// Undefined when the series has zero variance.
    pub acf1_scores: Option<f64>,
    pub acf1_deltas: Option<f64>,
}

impl Evaluation {
    pub fn aua_difference(&self) -> f64 {
        self.aua_al - self.aua_rs_mean
    }
}

pub fn evaluate_scores(al: &[f64], rs: &[&[f64]]) -> Result<Evaluation> {
    if al.len() < 2 {
        return Err(Error::InvalidArgument("trajectory needs at least two scores".into()));
    }
    let n_steps = al.len() - 1;
    let al_deltas = score_differences(al);
    let rs_deltas: Vec<Vec<f64>> = rs.iter().map(|s| score_differences(s)).collect();
    let comparison = comparison_series(&al_deltas, &rs_deltas)?;
    let x: Vec<f64> = (1..=n_steps).map(|i| i as f64 / n_steps as f64).collect();
    let gam = fit_gam(&comparison.a, &x)?;
    let zone = evaluate_zone(&gam, x[0], x[n_steps - 1], BAND_LEVEL);
    let aua_al = aua(al)?;
    let aua_rs_mean = rs.iter().map(|s| aua(s)).sum::<Result<f64>>()? / rs.len() as f64;
    let lag1 = |s: &[f64]| acf(s, 1).ok().map(|r| r[0]);
    Ok(Evaluation {
        acf1_scores: lag1(al),
        acf1_deltas: lag1(&al_deltas),
        budget_fractions: x,
        comparison,
        gam,
        zone,
        aua_al,
        aua_rs_mean,
    })
}

pub fn evaluate_experiment(al: &Trajectory, rs: &[Trajectory]) -> Result<Evaluation> {
    let rs_scores: Vec<&[f64]> = rs.iter().map(|t| t.scores.as_slice()).collect();
    evaluate_scores(&al.scores, &rs_scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_difference_example() {
        let d = score_differences(&[0.5, 0.6, 0.55]);
        assert!((d[0] - 0.1).abs() < 1e-12 && (d[1] + 0.05).abs() < 1e-12);
        assert_eq!(score_differences(&[0.7; 5]), vec![0.0; 4]);
    }

    #[test]
    fn compare_examples() {
        assert_eq!(compare(0.02, 0.01).unwrap(), 1.0);
        assert_eq!(compare(0.0, 0.0).unwrap(), 0.5);
        assert_eq!(compare(-0.01, 0.01).unwrap(), 0.0);
        assert!(compare(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn comparison_series_cases() {
        let al = vec![0.1, 0.0, -0.1];
        let same = comparison_series(&al, &[al.clone(), al.clone()]).unwrap();
        assert_eq!(same.a, vec![0.5; 3]);
        let worse = vec![-1.0, -1.0, -1.0];
        assert_eq!(comparison_series(&al, &[worse.clone(), worse]).unwrap().a, vec![1.0; 3]);
        assert!(comparison_series(&al, &[vec![0.0; 2]]).is_err());
    }

    /// Textbook lag-k sample autocorrelation, written out directly.
    fn acf_oracle(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let mut num = 0.0;
        for t in 0..x.len() - k {
            num += (x[t] - m) * (x[t + k] - m);
        }
        let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        num / den
    }

    #[test]
    fn acf_of_linear_ramp() {
        let ramp: Vec<f64> = (0..=100).map(f64::from).collect();
        let r = acf(&ramp, 3).unwrap();
        assert!((r[0] - acf_oracle(&ramp, 1)).abs() < 1e-12);
        assert!((r[0] - 0.97).abs() < 0.005, "{}", r[0]);
        assert!((r[2] - acf_oracle(&ramp, 3)).abs() < 1e-12);
        assert!(matches!(acf(&score_differences(&ramp), 1), Err(Error::ZeroVariance)));
        assert!(acf(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn acf_white_noise_band() {
        use rand_distr::{Distribution, StandardNormal};
        let n = 100;
        let inside = (0..400)
            .filter(|&s| {
                let mut rng = crate::seed::rng(s);
                let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                acf(&x, 1).unwrap()[0].abs() < 2.0 / (n as f64).sqrt()
            })
            .count();
        let frac = inside as f64 / 400.0;
        assert!(frac > 0.92, "{frac}");
    }

    #[test]
    fn zone_examples() {
        assert_eq!(zone_length(&[0.4; 200]), 0);
        let mut band = vec![0.6, 0.6, 0.4, 0.7];
        band.resize(200, 0.7);
        assert_eq!(zone_length(&band), 2);
        assert_eq!(zone_length(&[0.6; 200]), 200);
        let mut late = vec![0.4, 0.6, 0.6, 0.3];
        late.resize(200, 0.3);
        assert_eq!(zone_run(&late), Some(ZoneRun { start: 1, length: 2 }));
        let mut too_late = vec![0.4, 0.4, 0.6];
        too_late.resize(200, 0.6);
        assert_eq!(zone_length(&too_late), 0);
    }

    #[test]
    fn aua_examples() {
        assert!((aua(&[0.8; 101]).unwrap() - 0.8).abs() < 1e-12);
        assert!((aua(&[0.5, 0.9, 0.7]).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zone_grid_spans_range() {
        let g = zone_grid(0.01, 1.0);
        assert_eq!(g.len(), 200);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[199], 1.0);
    }

    #[test]
    fn identical_trajectories_give_no_zone() {
        let s: Vec<f64> = (0..=100).map(|i| 0.6 + 0.003 * i as f64).collect();
        let e = evaluate_scores(&s, &[&s, &s]).unwrap();
        assert_eq!(e.zone.zone_length, 0);
        assert!(!e.zone.gain_flag);
        assert_eq!(e.aua_difference(), 0.0);
        assert!(e.acf1_scores.unwrap() > 0.9);
    }

    #[test]
    fn dominant_start_gives_early_zone() {
        let al: Vec<f64> = (0..=100).map(|i| 0.5 + 0.4 * (1.0 - (-(i as f64) / 8.0).exp())).collect();
        let rs: Vec<Vec<f64>> = (0..10)
            .map(|j| (0..=100).map(|i| 0.5 + 0.4 * i as f64 / 100.0 + 0.001 * ((i * (j + 3)) % 7) as f64).collect())
            .collect();
        let rs_refs: Vec<&[f64]> = rs.iter().map(Vec::as_slice).collect();
        let e = evaluate_scores(&al, &rs_refs).unwrap();
        assert!(e.zone.gain_flag);
        assert!(e.zone.zone_start.unwrap() <= 1);
        assert!(e.zone.zone_length < 200);
    }

    proptest! {
        #[test]
        fn compare_is_complementary(x in -1.0f64..1.0, y in -1.0f64..1.0, tie in any::<bool>()) {
            let y = if tie { x } else { y };
            prop_assert_eq!(compare(x, y).unwrap() + compare(y, x).unwrap(), 1.0);
        }

        #[test]
        fn differences_telescope(scores in prop::collection::vec(0.0f64..1.0, 2..120)) {
            let total: f64 = score_differences(&scores).iter().sum();
            prop_assert!((total - (scores[scores.len() - 1] - scores[0])).abs() < 1e-9);
        }

        #[test]
        fn averaged_comparisons_on_half_grid(
            al in prop::collection::vec(0u8..5, 30),
            rs in prop::collection::vec(prop::collection::vec(0u8..5, 30), 2..12),
        ) {
            let al: Vec<f64> = al.into_iter().map(f64::from).collect();
            let rs: Vec<Vec<f64>> = rs.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
            let series = comparison_series(&al, &rs).unwrap();
            let unit = 0.5 / rs.len() as f64;
            for v in series.a {
                prop_assert!((0.0..=1.0).contains(&v));
                let k = v / unit;
                prop_assert!((k - k.round()).abs() < 1e-9);
            }
        }

        #[test]
        fn wider_band_never_lengthens_zone(
            eta in prop::collection::vec(-1.0f64..2.0, 200),
            se in prop::collection::vec(0.0f64..1.0, 200),
            z1 in 0.0f64..3.0,
            dz in 0.0f64..2.0,
        ) {
            let band = |z: f64| -> Vec<f64> {
                eta.iter().zip(&se).map(|(e, s)| 1.0 / (1.0 + (-(e - z * s)).exp())).collect()
            };
            prop_assert!(zone_length(&band(z1 + dz)) <= zone_length(&band(z1)));
        }
    }
}
