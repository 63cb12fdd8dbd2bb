//! Minimal SVG line and bar charts for experiment output. Presentation only:
//! every plotted number is also written to CSV.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        (LEFT + W - RIGHT) / 2.0,
        escape(title)
    );
    s
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>",
            x0 - 5.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 15.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{c}\"/>", y - 10.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\">{}</text>", x + 18.0, escape(n));
    }
}

/// One polyline per series over shared `x`; `None` points break the line.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, x: &[f64], series: &[(&str, Vec<Option<f64>>)]) -> String {
    let mut s = header(title);
    let (y_lo, y_hi) = range(series.iter().flat_map(|(_, v)| v.iter().flatten().copied()));
    let (x_lo, x_hi) = range(x.iter().copied());
    axes(&mut s, x_label, y_label, y_lo, y_hi);
    let px = |v: f64| LEFT + (W - RIGHT - LEFT) * (v - x_lo) / (x_hi - x_lo);
    let py = |v: f64| (H - BOTTOM) - (H - BOTTOM - TOP) * (v - y_lo) / (y_hi - y_lo);
    for (i, (_, values)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for (xv, yv) in x.iter().zip(values) {
            match yv {
                Some(v) => {
                    let _ = write!(pts, "{:.2},{:.2} ", px(*xv), py(*v));
                }
                None if !pts.is_empty() => {
                    let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{c}\" stroke-width=\"2\"/>", pts.trim_end());
                    pts.clear();
                }
                None => {}
            }
        }
        if !pts.is_empty() {
            let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{c}\" stroke-width=\"2\"/>", pts.trim_end());
        }
    }
    legend(&mut s, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(title: &str, y_label: &str, categories: &[String], series: &[(&str, Vec<Option<f64>>)]) -> String {
    let mut s = header(title);
    let hi = series
        .iter()
        .flat_map(|(_, v)| v.iter().flatten().copied())
        .fold(0.0f64, f64::max);
    let y_hi = if hi > 0.0 { hi * 1.05 } else { 1.0 };
    axes(&mut s, "", y_label, 0.0, y_hi);
    let plot_w = W - RIGHT - LEFT;
    let group_w = plot_w / categories.len().max(1) as f64;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    let base = H - BOTTOM;
    for (g, cat) in categories.iter().enumerate() {
        let gx = LEFT + g as f64 * group_w + 0.1 * group_w;
        for (i, (_, values)) in series.iter().enumerate() {
            if let Some(v) = values.get(g).copied().flatten() {
                let h = (H - BOTTOM - TOP) * v / y_hi;
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                    gx + i as f64 * bar_w,
                    base - h,
                    bar_w,
                    h,
                    PALETTE[i % PALETTE.len()]
                );
            }
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            gx + 0.4 * group_w,
            base + 15.0,
            escape(cat)
        );
    }
    legend(&mut s, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_breaks_on_gaps() {
        let svg = line_chart("t", "x", "y", &[0.0, 1.0, 2.0, 3.0], &[("a", vec![Some(1.0), None, Some(2.0), Some(3.0)])]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn bar_chart_draws_present_values() {
        let cats = vec!["S1".to_string(), "S2 & co".to_string()];
        let svg = bar_chart("acc", "%", &cats, &[("csp", vec![Some(70.0), None]), ("ssf", vec![Some(72.0), Some(1.0)])]);
        assert_eq!(svg.matches("<rect x=").count(), 3 + 2);
        assert!(svg.contains("S2 &amp; co"));
    }
}
