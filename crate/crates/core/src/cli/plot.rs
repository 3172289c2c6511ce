//! Static SVG figures for one experiment. Every figure carries its plotted
//! values as XML comments so outputs can be diffed and checked in tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::artifacts::{self, TRAJECTORIES_FILE};
use crate::error::Result;
use crate::evalstat::{evaluate_experiment, score_differences, Evaluation};
use crate::runner::{read_trajectories_csv, Trajectory};

pub const TRAJECTORY_PLOT: &str = "plot_a_trajectories.svg";
pub const DIFFERENCE_PLOT: &str = "plot_b_differences.svg";
pub const COMPARISON_PLOT: &str = "plot_c_comparison.svg";

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn x_step(&self) -> f64 {
        (WIDTH - LEFT - RIGHT) / (self.x.1 - self.x.0)
    }
}

fn open(svg: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>", WIDTH / 2.0);
    let (x0, x1) = (frame.px(frame.x.0), frame.px(frame.x.1));
    let (y0, y1) = (frame.py(frame.y.0), frame.py(frame.y.1));
    let _ = writeln!(
        svg,
        "<polyline points=\"{x0:.2},{y1:.2} {x0:.2},{y0:.2} {x1:.2},{y0:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = frame.x.0 + t * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + t * (frame.y.1 - frame.y.0);
        let (xp, yp) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(
            svg,
            "<line x1=\"{xp:.2}\" y1=\"{y0:.2}\" x2=\"{xp:.2}\" y2=\"{:.2}\" stroke=\"black\"/><text x=\"{xp:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            y0 + 4.0,
            y0 + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{x0:.2}\" y2=\"{yp:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            x0 - 4.0,
            x0 - 6.0,
            yp + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>", (x0 + x1) / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{y_label}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn polyline(svg: &mut String, points: impl Iterator<Item = (f64, f64)>, stroke: &str, width: f64) {
    let pts: Vec<String> = points.map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"/>",
        pts.join(" ")
    );
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Active-learning scores over random-selection boxplots per step.
pub fn plot_trajectories(al: &Trajectory, rs: &[Trajectory]) -> String {
    let n = al.scores.len();
    let all = al.scores.iter().chain(rs.iter().flat_map(|t| t.scores.iter())).copied();
    let frame = Frame::new((-0.5, n as f64 - 0.5), range(all));
    let mut svg = String::new();
    open(&mut svg, "Scores: active learning vs random selection", &frame, "budget step", "accuracy");
    let half = 0.3 * frame.x_step();
    for step in 0..n {
        let mut v: Vec<f64> = rs.iter().map(|t| t.scores[step]).collect();
        v.sort_by(f64::total_cmp);
        let (min, q1, med, q3, max) = (v[0], quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75), v[v.len() - 1]);
        let _ = writeln!(
            svg,
            "<!-- step={step} n={} min={min} q1={q1} median={med} q3={q3} max={max} al={} -->",
            v.len(),
            al.scores[step]
        );
        let x = frame.px(step as f64);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"gray\"/>",
            frame.py(min),
            frame.py(max)
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"lightgray\" stroke=\"gray\"/>",
            x - half,
            frame.py(q3),
            2.0 * half,
            (frame.py(q1) - frame.py(q3)).max(0.0)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            x - half,
            frame.py(med),
            x + half,
            frame.py(med)
        );
    }
    polyline(
        &mut svg,
        al.scores.iter().enumerate().map(|(i, &s)| (frame.px(i as f64), frame.py(s))),
        "firebrick",
        1.5,
    );
    svg.push_str("</svg>\n");
    svg
}

/// Per-step score differences of the active run and each random run.
pub fn plot_differences(al: &Trajectory, rs: &[Trajectory]) -> String {
    let al_d = score_differences(&al.scores);
    let rs_d: Vec<Vec<f64>> = rs.iter().map(|t| score_differences(&t.scores)).collect();
    let all = al_d.iter().chain(rs_d.iter().flatten()).copied().chain([0.0]);
    let frame = Frame::new((0.5, al_d.len() as f64 + 0.5), range(all));
    let mut svg = String::new();
    open(&mut svg, "Score differences", &frame, "budget step", "score difference");
    let zero = frame.py(0.0);
    let _ = writeln!(
        svg,
        "<line x1=\"{:.2}\" y1=\"{zero:.2}\" x2=\"{:.2}\" y2=\"{zero:.2}\" stroke=\"gray\"/>",
        frame.px(frame.x.0),
        frame.px(frame.x.1)
    );
    for (i, d) in al_d.iter().enumerate() {
        let rs_vals: Vec<String> = rs_d.iter().map(|r| r[i].to_string()).collect();
        let _ = writeln!(svg, "<!-- step={} al={d} rs={} -->", i + 1, rs_vals.join(" "));
        for r in &rs_d {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"gray\"/>",
                frame.px((i + 1) as f64),
                frame.py(r[i])
            );
        }
    }
    polyline(
        &mut svg,
        al_d.iter().enumerate().map(|(i, &d)| (frame.px((i + 1) as f64), frame.py(d))),
        "firebrick",
        1.2,
    );
    svg.push_str("</svg>\n");
    svg
}

/// Averaged comparison values with the smoothed curve, its band and the
/// 0.5 reference.
pub fn plot_comparison(evaluation: &Evaluation) -> String {
    let z = &evaluation.zone;
    let x_lo = evaluation.budget_fractions.first().copied().unwrap_or(0.0).min(z.grid[0]);
    let frame = Frame::new((x_lo.min(0.0), 1.0), (0.0, 1.0));
    let mut svg = String::new();
    open(&mut svg, "Averaged comparison values", &frame, "budget fraction", "A_i");
    let _ = writeln!(
        svg,
        "<!-- zone_length={} zone_start={} gain_flag={} smoothing={} dispersion={} -->",
        z.zone_length,
        z.zone_start.map_or_else(|| "none".to_string(), |s| s.to_string()),
        z.gain_flag,
        evaluation.gam.smoothing_parameter,
        evaluation.gam.dispersion
    );
    let mut band: Vec<String> = z.grid.iter().zip(&z.upper_band).map(|(&x, &u)| format!("{:.2},{:.2}", frame.px(x), frame.py(u))).collect();
    band.extend(z.grid.iter().zip(&z.lower_band).rev().map(|(&x, &l)| format!("{:.2},{:.2}", frame.px(x), frame.py(l))));
    let _ = writeln!(svg, "<polygon points=\"{}\" fill=\"steelblue\" fill-opacity=\"0.2\" stroke=\"none\"/>", band.join(" "));
    let half = frame.py(0.5);
    let _ = writeln!(
        svg,
        "<line x1=\"{:.2}\" y1=\"{half:.2}\" x2=\"{:.2}\" y2=\"{half:.2}\" stroke=\"black\" stroke-dasharray=\"2,4\"/>",
        frame.px(frame.x.0),
        frame.px(frame.x.1)
    );
    for (k, &x) in z.grid.iter().enumerate() {
        let _ = writeln!(svg, "<!-- grid={k} x={x} fit={} lower={} upper={} -->", z.fit_curve[k], z.lower_band[k], z.upper_band[k]);
    }
    for (i, (&x, &a)) in evaluation.budget_fractions.iter().zip(&evaluation.comparison.a).enumerate() {
        let _ = writeln!(svg, "<!-- step={} x={x} a={a} -->", i + 1);
        let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"black\"/>", frame.px(x), frame.py(a));
    }
    polyline(&mut svg, z.grid.iter().zip(&z.lower_band).map(|(&x, &l)| (frame.px(x), frame.py(l))), "steelblue", 1.0);
    polyline(&mut svg, z.grid.iter().zip(&z.fit_curve).map(|(&x, &f)| (frame.px(x), frame.py(f))), "navy", 1.8);
    if let (Some(start), true) = (z.zone_start, z.gain_flag) {
        let end = z.grid[start + z.zone_length - 1];
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"6\" fill=\"seagreen\"/>",
            frame.px(z.grid[start]),
            frame.py(0.0) - 6.0,
            frame.px(end) - frame.px(z.grid[start])
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the three figures into the experiment directory.
pub fn render_plots(dir: &Path) -> Result<[PathBuf; 3]> {
    let bytes = artifacts::read_existing(&dir.join(TRAJECTORIES_FILE))?;
    let (al, rs) = read_trajectories_csv(bytes.as_slice())?;
    let evaluation = evaluate_experiment(&al, &rs)?;
    let files = [
        (dir.join(TRAJECTORY_PLOT), plot_trajectories(&al, &rs)),
        (dir.join(DIFFERENCE_PLOT), plot_differences(&al, &rs)),
        (dir.join(COMPARISON_PLOT), plot_comparison(&evaluation)),
    ];
    for (path, svg) in &files {
        artifacts::write_atomic(path, svg.as_bytes())?;
    }
    let [a, b, c] = files;
    Ok([a.0, b.0, c.0])
}
