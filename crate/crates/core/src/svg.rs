//! Minimal static SVG charts. Output is plain text with fixed precision so
//! repeated runs produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::stats::{BoxStats, ShareSeries};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = if self.x1 > self.x0 {
            self.x1 - self.x0
        } else {
            1.0
        };
        MARGIN + (v - self.x0) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        let span = if self.y1 > self.y0 {
            self.y1 - self.y0
        } else {
            1.0
        };
        HEIGHT - MARGIN - (v - self.y0) / span * (HEIGHT - 2.0 * MARGIN)
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m:.2},{t:.2} L{m:.2},{b:.2} L{r:.2},{b:.2}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    s
}

fn close(mut s: String) -> String {
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn legend(s: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            WIDTH - MARGIN + 4.0,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            WIDTH - MARGIN + 16.0,
            y,
            escape(name)
        );
    }
}

fn x_labels(s: &mut String, frame: &Frame, labels: &[String]) {
    let step = (labels.len() / 12).max(1);
    for (i, l) in labels.iter().enumerate().step_by(step) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            frame.x(i as f64),
            HEIGHT - MARGIN + 14.0,
            escape(l)
        );
    }
}

/// Stacked category shares per bucket.
pub fn stacked_area(series: &ShareSeries, title: &str) -> String {
    let nb = series.labels.len();
    let frame = Frame {
        x0: 0.0,
        x1: nb.saturating_sub(1) as f64,
        y0: 0.0,
        y1: 1.0,
    };
    let mut s = open(title);
    let mut base = vec![0.0; nb];
    for (c, _) in series.categories.iter().enumerate() {
        let top: Vec<f64> = (0..nb).map(|b| base[b] + series.shares[b][c]).collect();
        let mut d = String::new();
        for b in 0..nb {
            let _ = write!(
                d,
                "{}{:.2},{:.2} ",
                if b == 0 { "M" } else { "L" },
                frame.x(b as f64),
                frame.y(top[b])
            );
        }
        for b in (0..nb).rev() {
            let _ = write!(d, "L{:.2},{:.2} ", frame.x(b as f64), frame.y(base[b]));
        }
        let _ = writeln!(
            s,
            r#"<path d="{}Z" fill="{}" fill-opacity="0.8"/>"#,
            d,
            PALETTE[c % PALETTE.len()]
        );
        base = top;
    }
    x_labels(&mut s, &frame, &series.labels);
    legend(&mut s, &series.categories);
    close(s)
}

/// One box-and-whisker glyph per category.
pub fn box_plot(stats: &BTreeMap<String, BoxStats>, title: &str) -> String {
    let max = stats.values().map(|b| b.max).fold(0.0, f64::max);
    let n = stats.len();
    let frame = Frame {
        x0: -0.5,
        x1: n as f64 - 0.5,
        y0: 0.0,
        y1: max.max(1.0),
    };
    let mut s = open(title);
    let half = 0.3 * (WIDTH - 2.0 * MARGIN) / n.max(1) as f64;
    for (i, (name, b)) in stats.iter().enumerate() {
        let x = frame.x(i as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            frame.y(b.min),
            frame.y(b.max)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="black"/>"#,
            x - half,
            frame.y(b.q3),
            2.0 * half,
            frame.y(b.q1) - frame.y(b.q3),
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{m:.2}" x2="{:.2}" y2="{m:.2}" stroke="black" stroke-width="2"/>"#,
            x - half,
            x + half,
            m = frame.y(b.median)
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 14.0,
            escape(name)
        );
    }
    close(s)
}

/// CCDF on log-log axes; points with zero probability are skipped.
pub fn ccdf_loglog(curve: &[(u64, f64)], title: &str) -> String {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(v, p)| *v > 0 && *p > 0.0)
        .map(|&(v, p)| ((v as f64).log10(), p.log10()))
        .collect();
    let x1 = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let y0 = pts.iter().map(|p| p.1).fold(0.0, f64::min);
    let frame = Frame {
        x0: 0.0,
        x1: x1.max(1.0),
        y0: y0.min(-1.0),
        y1: 0.0,
    };
    let mut s = open(title);
    for (x, y) in pts {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}"/>"#,
            frame.x(x),
            frame.y(y),
            PALETTE[0]
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">log10 check-ins</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    close(s)
}

/// Line per named profile over shared x labels.
pub fn profile_lines(labels: &[String], profiles: &[(String, Vec<f64>)], title: &str) -> String {
    let max = profiles
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0, f64::max);
    let frame = Frame {
        x0: 0.0,
        x1: labels.len().saturating_sub(1) as f64,
        y0: 0.0,
        y1: if max > 0.0 { max } else { 1.0 },
    };
    let mut s = open(title);
    for (i, (_, values)) in profiles.iter().enumerate() {
        let mut d = String::new();
        for (j, v) in values.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2},{:.2} ",
                if j == 0 { "M" } else { "L" },
                frame.x(j as f64),
                frame.y(*v)
            );
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            d.trim_end(),
            PALETTE[i % PALETTE.len()]
        );
    }
    x_labels(&mut s, &frame, labels);
    let names: Vec<String> = profiles.iter().map(|(n, _)| n.clone()).collect();
    legend(&mut s, &names);
    close(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_chart_is_well_formed() {
        let labels: Vec<String> = (0..24).map(|h| h.to_string()).collect();
        let svg = profile_lines(&labels, &[("a<b".into(), vec![1.0; 24])], "t");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(
            svg,
            profile_lines(&labels, &[("a<b".into(), vec![1.0; 24])], "t")
        );
    }

    #[test]
    fn ccdf_skips_zero_counts() {
        let svg = ccdf_loglog(&[(0, 1.0), (1, 1.0), (10, 0.5), (100, 0.1)], "c");
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
