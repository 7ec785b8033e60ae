//! Static SVG charts: deterministic text artifacts, diffable in tests.
//! Numeric text uses fixed 6-significant-digit formatting so identical data
//! always serializes to identical bytes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::influence::Histogram;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct LineSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Rounds to 6 significant digits, then uses shortest round-trip formatting.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return "nan".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(5 - mag);
    let y = (x * factor).round() / factor;
    format!("{y}")
}

fn header(out: &mut String) {
    write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}">"#,
        W = WIDTH,
        H = HEIGHT
    )
    .expect("svg write");
    out.push('\n');
    write!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).expect("svg write");
    out.push('\n');
}

fn axes(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let x0 = MARGIN_LEFT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y1 = MARGIN_TOP;
    write!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="monospace" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .expect("svg write");
    out.push('\n');
    write!(
        out,
        r##"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333" stroke-width="1"/>"##
    )
    .expect("svg write");
    out.push('\n');
    write!(
        out,
        r##"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333" stroke-width="1"/>"##
    )
    .expect("svg write");
    out.push('\n');
    write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="12">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    )
    .expect("svg write");
    out.push('\n');
    write!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="monospace" font-size="12" transform="rotate(-90 18 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
    .expect("svg write");
    out.push('\n');
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Histogram as vertical bars. Tick labels carry the bin edges.
pub fn histogram_svg(hist: &Histogram, title: &str, x_label: &str) -> Result<String> {
    if hist.counts.is_empty() {
        return Err(Error::input("cannot plot an empty histogram"));
    }
    let mut out = String::new();
    header(&mut out);
    axes(&mut out, title, x_label, "count");
    let max_count = *hist.counts.iter().max().expect("non-empty") as f64;
    let max_count = max_count.max(1.0);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let n = hist.counts.len() as f64;
    let bar_w = plot_w / n;
    for (i, &c) in hist.counts.iter().enumerate() {
        let h = plot_h * c as f64 / max_count;
        let x = MARGIN_LEFT + i as f64 * bar_w;
        let y = HEIGHT - MARGIN_BOTTOM - h;
        write!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="white" stroke-width="0.5"/>"#,
            fmt_sig6(x),
            fmt_sig6(y),
            fmt_sig6(bar_w),
            fmt_sig6(h),
            PALETTE[0]
        )
        .expect("svg write");
        out.push('\n');
    }
    // Edge ticks: first, middle, last.
    for idx in [0usize, hist.edges.len() / 2, hist.edges.len() - 1] {
        let x = MARGIN_LEFT + plot_w * idx as f64 / (hist.edges.len() - 1) as f64;
        write!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="10">{}</text>"#,
            fmt_sig6(x),
            HEIGHT - MARGIN_BOTTOM + 16.0,
            fmt_sig6(hist.edges[idx])
        )
        .expect("svg write");
        out.push('\n');
    }
    write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="monospace" font-size="10">{}</text>"#,
        MARGIN_LEFT - 6.0,
        MARGIN_TOP + 4.0,
        fmt_sig6(max_count)
    )
    .expect("svg write");
    out.push('\n');
    out.push_str("</svg>\n");
    Ok(out)
}

/// Multi-series line chart; one legend entry per series.
pub fn lines_svg(series: &[LineSeries], title: &str, x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::input("cannot plot empty series"));
    }
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if xmin == xmax {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if ymin == ymax {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + plot_w * (x - xmin) / (xmax - xmin);
    let py = |y: f64| HEIGHT - MARGIN_BOTTOM - plot_h * (y - ymin) / (ymax - ymin);

    let mut out = String::new();
    header(&mut out);
    axes(&mut out, title, x_label, y_label);
    for (si, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let color = PALETTE[si % PALETTE.len()];
        let mut path = String::new();
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            write!(path, "{cmd}{} {} ", fmt_sig6(px(x)), fmt_sig6(py(y))).expect("svg write");
        }
        write!(
            out,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.trim_end()
        )
        .expect("svg write");
        out.push('\n');
        // Legend entry.
        let ly = MARGIN_TOP + 14.0 * si as f64;
        write!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            WIDTH - MARGIN_RIGHT - 130.0,
            ly,
            WIDTH - MARGIN_RIGHT - 110.0,
            ly
        )
        .expect("svg write");
        out.push('\n');
        write!(
            out,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="11">{}</text>"#,
            WIDTH - MARGIN_RIGHT - 104.0,
            ly + 4.0,
            escape(&s.name)
        )
        .expect("svg write");
        out.push('\n');
    }
    // Axis range labels.
    for (x, anchor, v) in [
        (MARGIN_LEFT, "middle", xmin),
        (WIDTH - MARGIN_RIGHT, "middle", xmax),
    ] {
        write!(
            out,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-family="monospace" font-size="10">{}</text>"#,
            fmt_sig6(x),
            HEIGHT - MARGIN_BOTTOM + 16.0,
            fmt_sig6(v)
        )
        .expect("svg write");
        out.push('\n');
    }
    for (y, v) in [(HEIGHT - MARGIN_BOTTOM, ymin), (MARGIN_TOP, ymax)] {
        write!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="monospace" font-size="10">{}</text>"#,
            MARGIN_LEFT - 6.0,
            fmt_sig6(y + 4.0),
            fmt_sig6(v)
        )
        .expect("svg write");
        out.push('\n');
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_sig6_examples() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(0.123456789), "0.123457");
        assert_eq!(fmt_sig6(123456789.0), "123457000");
        assert_eq!(fmt_sig6(-2.5), "-2.5");
    }

    #[test]
    fn histogram_svg_is_deterministic_and_well_formed() {
        let hist = Histogram {
            edges: vec![0.0, 0.5, 1.0, 1.5],
            counts: vec![3, 0, 7],
        };
        let a = histogram_svg(&hist, "scores", "score").unwrap();
        let b = histogram_svg(&hist, "scores", "score").unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<rect").count(), 1 + hist.counts.len());
    }

    #[test]
    fn lines_svg_legend_matches_series_count() {
        let series = vec![
            LineSeries {
                name: "clean".into(),
                points: vec![(0.0, 0.5), (1.0, 0.8)],
            },
            LineSeries {
                name: "corrupted".into(),
                points: vec![(0.0, 0.1), (1.0, 0.3)],
            },
        ];
        let svg = lines_svg(&series, "accuracy", "epoch", "accuracy").unwrap();
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains(">clean<"));
        assert!(svg.contains(">corrupted<"));
    }

    #[test]
    fn empty_data_rejected() {
        assert!(lines_svg(&[], "t", "x", "y").is_err());
        let empty = Histogram {
            edges: vec![],
            counts: vec![],
        };
        assert!(histogram_svg(&empty, "t", "x").is_err());
    }
}
