//! Self-contained SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use shadekit::datakit::write_atomic;
use shadekit::evalkit::CurveSet;

use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const TICKS: usize = 5;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Fixed axis ranges; `None` fits the data.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fit(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64, span: f64) -> String {
    if span >= 20.0 {
        format!("{v:.0}")
    } else if span >= 2.0 {
        format!("{v:.1}")
    } else if span >= 0.02 {
        format!("{v:.2}")
    } else {
        format!("{v:.3e}")
    }
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = self.x_range.unwrap_or_else(|| fit(all().map(|p| p.0)));
        let (y0, y1) = self.y_range.unwrap_or_else(|| fit(all().map(|p| p.1)));
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        for i in 0..=TICKS {
            let t = i as f64 / TICKS as f64;
            let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##,
                TOP + ph
            );
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e5e5e5"/>"##,
                LEFT + pw
            );
            let _ = writeln!(
                s,
                r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph + 16.0,
                tick_label(xv, x1 - x0)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                py + 4.0,
                tick_label(yv, y1 - y0)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| (sx(x), sy(y)))
                .collect();
            match pts.as_slice() {
                [] => {}
                [(x, y)] => {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{color}"/>"#);
                }
                _ => {
                    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                        path.join(" ")
                    );
                }
            }
            if self.series.len() > 1 {
                let ly = TOP + 14.0 + 16.0 * k as f64;
                let lx = LEFT + pw - 150.0;
                let _ = writeln!(
                    s,
                    r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                    ly - 4.0,
                    lx + 18.0,
                    ly - 4.0
                );
                let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 24.0, escape(&series.name));
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn unit_chart(title: &str, x_label: &str, y_label: &str, name: &str, points: Vec<(f64, f64)>) -> Chart {
    Chart {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        x_range: Some((0.0, 1.0)),
        y_range: Some((0.0, 1.0)),
        series: vec![Series {
            name: name.into(),
            points,
        }],
    }
}

/// F1, precision and recall against confidence plus the PR curve.
pub fn curve_charts(c: &CurveSet) -> Vec<(&'static str, Chart)> {
    let vs_conf = |ys: &[f64]| c.thresholds.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>();
    vec![
        ("f1_curve.svg", unit_chart("F1-Confidence Curve", "confidence", "F1", "f1", vs_conf(&c.f1))),
        ("pr_curve.svg", unit_chart("Precision-Recall Curve", "recall", "precision", "pr", c.pr_pairs())),
        ("p_curve.svg", unit_chart("Precision-Confidence Curve", "confidence", "precision", "precision", vs_conf(&c.precision))),
        ("r_curve.svg", unit_chart("Recall-Confidence Curve", "confidence", "recall", "recall", vs_conf(&c.recall))),
    ]
}

pub fn write_curve_plots(c: &CurveSet, dir: &Path) -> Result<()> {
    for (name, chart) in curve_charts(c) {
        write_atomic(&dir.join(name), chart.to_svg().as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_renders_a_marker() {
        let chart = unit_chart("t", "x", "y", "s", vec![(0.5, 0.5)]);
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains(r#"<circle cx="345.00" cy="202.50""#), "{svg}");
        assert!(!svg.contains("polyline"));
    }

    #[test]
    fn text_is_escaped_and_flat_data_gets_a_range() {
        let chart = Chart {
            title: "a<b & c".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_range: None,
            y_range: None,
            series: vec![Series {
                name: "s".into(),
                points: vec![(1.0, 2.0), (2.0, 2.0)],
            }],
        };
        let svg = chart.to_svg();
        assert!(svg.contains("a&lt;b &amp; c"));
        assert!(svg.contains("polyline") && !svg.contains("NaN"));
    }
}
