use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::output::write_text;
use crate::record::{MetricRow, RunRecord};

/// Values below this are drawn at the floor.
pub const DEFAULT_FLOOR: f64 = 1e-6;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    /// `(iteration, value)`
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    pub fn from_rows(label: impl Into<String>, rows: &[MetricRow], metric: &str) -> Result<Self> {
        let points = rows
            .iter()
            .map(|r| r.get(metric).map(|v| (r.iter as f64, v)))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Plot(format!("unknown metric {metric:?}")))?;
        Ok(Self {
            label: label.into(),
            points,
        })
    }

    pub fn from_record(record: &RunRecord, metric: &str) -> Result<Self> {
        Self::from_rows(record.label.clone(), &record.rows, metric)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Log-scale SVG of `metric` against iteration, one polyline per series.
pub fn render_plot(series: &[PlotSeries], metric: &str, floor: f64) -> Result<String> {
    if !(floor > 0.0) {
        return Err(Error::Plot(format!("floor must be positive, got {floor}")));
    }
    let finite = |&(x, y): &(f64, f64)| x.is_finite() && !y.is_nan();
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(finite)
        .collect();
    if all.is_empty() {
        return Err(Error::Plot("no plottable points".into()));
    }
    let clamp = |y: f64| {
        if y.is_finite() {
            y.max(floor)
        } else {
            f64::MAX
        }
    };
    let (x_min, x_max) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let y_top = all
        .iter()
        .map(|p| clamp(p.1))
        .filter(|y| *y < f64::MAX)
        .fold(floor, f64::max);
    let lo = floor.log10().floor();
    let hi = (y_top.log10().ceil()).max(lo + 1.0);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_min) / x_span * pw;
    let py = |y: f64| TOP + (hi - clamp(y).min(10f64.powf(hi)).log10()) / (hi - lo) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    let mut e = lo;
    while e <= hi {
        let y = TOP + (hi - e) / (hi - lo) * ph;
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            e as i64
        );
        e += 1.0;
    }
    for k in 0..=4 {
        let x = x_min + x_span * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(x),
            TOP + ph + 18.0,
            x.round() as i64
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(metric)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|p| finite(p))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !coords.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_plot(
    series: &[PlotSeries],
    metric: &str,
    floor: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_text(path, &render_plot(series, metric, floor)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polylines(svg: &str) -> Vec<&str> {
        svg.lines().filter(|l| l.starts_with("<polyline")).collect()
    }

    #[test]
    fn single_point_gives_one_pair() {
        let s = PlotSeries {
            label: "egpo".into(),
            points: vec![(0.0, 0.5)],
        };
        let svg = render_plot(&[s], "dualgap_beta", DEFAULT_FLOOR).unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 1);
        let pts = lines[0]
            .split("points=\"")
            .nth(1)
            .unwrap()
            .trim_end_matches("\"/>");
        assert_eq!(pts.split(' ').count(), 1);
        assert!(svg.contains(">egpo</text>"));
    }

    #[test]
    fn values_below_floor_are_flat() {
        let s = PlotSeries {
            label: "a".into(),
            points: vec![(0.0, 1e-9), (1.0, 1e-12), (2.0, 0.0)],
        };
        let svg = render_plot(&[s], "kl_star_pi", DEFAULT_FLOOR).unwrap();
        let pts = polylines(&svg)[0]
            .split("points=\"")
            .nth(1)
            .unwrap()
            .trim_end_matches("\"/>")
            .to_string();
        let ys: Vec<&str> = pts
            .split(' ')
            .map(|p| p.split(',').nth(1).unwrap())
            .collect();
        assert!(ys.iter().all(|y| *y == ys[0]));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(render_plot(&[], "dualgap", DEFAULT_FLOOR).is_err());
        let s = PlotSeries {
            label: "a".into(),
            points: vec![],
        };
        assert!(render_plot(&[s], "dualgap", DEFAULT_FLOOR).is_err());
        assert!(PlotSeries::from_rows("a", &[], "bogus").is_ok());
        let row = MetricRow {
            iter: 0,
            kl_star_pi: 1.0,
            kl_pi_star: 1.0,
            dualgap_beta: 1.0,
            dualgap: 1.0,
            residual: 1.0,
        };
        assert!(PlotSeries::from_rows("a", &[row], "bogus").is_err());
    }
}
