//! Minimal SVG line charts for loss curves.

use std::fmt::Write;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 56.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Panels stacked vertically; y is plotted on a log10 scale when every
/// value is positive.
pub fn render(panels: &[Panel]) -> String {
    let height = panels.len().max(1) as f64 * (PANEL_H + MARGIN) + MARGIN;
    let width = PANEL_W + 2.0 * MARGIN + 140.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, panel) in panels.iter().enumerate() {
        let top = MARGIN + p as f64 * (PANEL_H + MARGIN);
        let all = || panel.series.iter().flat_map(|s| s.points.iter());
        let log_y = all().all(|&(_, y)| y > 0.0);
        let ty = |y: f64| if log_y { y.log10() } else { y };
        let (x0, x1) = bounds(all().map(|&(x, _)| x));
        let (y0, y1) = bounds(all().map(|&(_, y)| ty(y)));
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * PANEL_W;
        let sy = |y: f64| top + PANEL_H - (ty(y) - y0) / (y1 - y0) * PANEL_H;

        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#,
            MARGIN + PANEL_W / 2.0,
            top - 8.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN + PANEL_W / 2.0,
            top + PANEL_H + 30.0,
            escape(&panel.x_label)
        );
        let y_label = if log_y {
            format!("{} (log)", panel.y_label)
        } else {
            panel.y_label.clone()
        };
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
            top + PANEL_H / 2.0,
            top + PANEL_H / 2.0,
            escape(&y_label)
        );
        for (v, anchor, x, y) in [
            (x0, "start", MARGIN, top + PANEL_H + 14.0),
            (x1, "end", MARGIN + PANEL_W, top + PANEL_H + 14.0),
        ] {
            let _ = writeln!(svg, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3}</text>"#);
        }
        for (v, y) in [(y0, top + PANEL_H), (y1, top + 10.0)] {
            let shown = if log_y { 10f64.powf(v) } else { v };
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{y}" text-anchor="end">{shown:.3}</text>"#,
                MARGIN - 4.0
            );
        }
        for (k, s) in panel.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && ty(*y).is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = top + 16.0 + 16.0 * k as f64;
            let lx = MARGIN + PANEL_W + 10.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 18.0,
                lx + 24.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_series() {
        let panel = Panel {
            title: "loss <a&b>".into(),
            x_label: "seconds".into(),
            y_label: "total".into(),
            series: vec![
                Series {
                    label: "adapter".into(),
                    points: vec![(0.0, 2.0), (1.0, 1.0)],
                },
                Series {
                    label: "full".into(),
                    points: vec![(0.0, 2.0), (2.0, 0.5)],
                },
            ],
        };
        let svg = render(&[panel]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("loss &lt;a&amp;b&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let panel = Panel {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            series: vec![Series {
                label: "flat".into(),
                points: vec![(1.0, 0.0), (1.0, 0.0)],
            }],
        };
        assert!(!render(&[panel]).contains("NaN"));
    }
}
