//! Minimal SVG renderer for convergence curves with mean +/- band.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

/// One curve: per-iteration mean with a symmetric band (typically twice the
/// standard deviation across repetitions).
#[derive(Debug, Clone)]
pub struct CurveSeries {
    pub label: String,
    pub mean: Vec<f64>,
    pub band: Vec<f64>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 25.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Render convergence curves as a standalone SVG document.
pub fn render_convergence_svg(series: &[CurveSeries], title: &str, y_label: &str) -> String {
    let max_len = series.iter().map(|s| s.mean.len()).max().unwrap_or(0);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (i, &m) in s.mean.iter().enumerate() {
            let b = s.band.get(i).copied().unwrap_or(0.0);
            for v in [m - b, m + b] {
                if v.is_finite() {
                    y_min = y_min.min(v);
                    y_max = y_max.max(v);
                }
            }
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |t: f64| MARGIN_LEFT + (t - 1.0) / (max_len.max(2) as f64 - 1.0) * plot_w;
    let y_of = |v: f64| MARGIN_TOP + (y_max - v) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_LEFT:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_LEFT:.2}" y1="{MARGIN_TOP:.2}" x2="{MARGIN_LEFT:.2}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - MARGIN_BOTTOM
    );

    // Ticks.
    for k in 0..=5 {
        let v = y_min + (y_max - y_min) * k as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT:.2}" y2="{y:.2}" stroke="black"/>"#,
            MARGIN_LEFT - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.2}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0
        );
    }
    let x_ticks = 5.min(max_len.saturating_sub(1)).max(1);
    for k in 0..=x_ticks {
        let t = 1.0 + (max_len.max(2) as f64 - 1.0) * k as f64 / x_ticks as f64;
        let x = x_of(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            HEIGHT - MARGIN_BOTTOM,
            HEIGHT - MARGIN_BOTTOM + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.0}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 18.0,
            t
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">iteration</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    // Bands first so curves draw on top.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.mean.is_empty() {
            continue;
        }
        let mut pts = String::new();
        for (t, &m) in s.mean.iter().enumerate() {
            let b = s.band.get(t).copied().unwrap_or(0.0);
            let _ = write!(
                pts,
                "{:.2},{:.2} ",
                x_of(t as f64 + 1.0),
                y_of((m + b).clamp(y_min, y_max))
            );
        }
        for (t, &m) in s.mean.iter().enumerate().rev() {
            let b = s.band.get(t).copied().unwrap_or(0.0);
            let _ = write!(
                pts,
                "{:.2},{:.2} ",
                x_of(t as f64 + 1.0),
                y_of((m - b).clamp(y_min, y_max))
            );
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            pts.trim_end()
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for (t, &m) in s.mean.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", x_of(t as f64 + 1.0), y_of(m.clamp(y_min, y_max)));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.trim_end()
        );
    }

    // Legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_TOP + 16.0 * i as f64 + 8.0;
        let x = WIDTH - MARGIN_RIGHT - 150.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#,
            x + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            x + 30.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write the convergence plot to a file.
pub fn write_convergence_svg(
    path: &Path,
    series: &[CurveSeries],
    title: &str,
    y_label: &str,
) -> io::Result<()> {
    std::fs::write(path, render_convergence_svg(series, title, y_label))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_svg() {
        let series = vec![
            CurveSeries {
                label: "addtree".into(),
                mean: vec![0.0, -1.0, -2.0, -3.0],
                band: vec![0.5, 0.4, 0.3, 0.2],
            },
            CurveSeries {
                label: "random".into(),
                mean: vec![0.0, -0.2, -0.4, -0.5],
                band: vec![0.1, 0.1, 0.1, 0.1],
            },
        ];
        let svg = render_convergence_svg(&series, "convergence", "log10 regret");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("addtree"));
        // Deterministic output.
        assert_eq!(svg, render_convergence_svg(&series, "convergence", "log10 regret"));
    }

    #[test]
    fn handles_degenerate_inputs() {
        let svg = render_convergence_svg(&[], "empty", "y");
        assert!(svg.contains("</svg>"));
        let flat = vec![CurveSeries {
            label: "flat".into(),
            mean: vec![1.0, 1.0],
            band: vec![0.0, 0.0],
        }];
        assert!(render_convergence_svg(&flat, "flat", "y").contains("polyline"));
    }
}
