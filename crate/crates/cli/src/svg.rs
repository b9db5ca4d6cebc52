//! Minimal static SVG charts for the risk plot data.

use std::fmt::Write;

use edrisk_core::risk::Band;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn open(out: &mut String, title: &str, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        W / 2.0
    );
    let (l, r, t, b) = (PAD, W - PAD, PAD, H - PAD);
    let _ = write!(out, r#"<polyline points="{l},{t} {l},{b} {r},{b}" fill="none" stroke="black"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
        W / 2.0,
        H - 16.0
    );
    let _ = write!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, y) in [(f.y0, b), (f.y1, t)] {
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="end">{v:.0}</text>"#, l - 4.0, y + 4.0);
    }
    for (v, x) in [(f.x0, l), (f.x1, r)] {
        let _ = write!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{v:.0}</text>"#, b + 16.0);
    }
}

fn points(f: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.map(|(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect::<Vec<_>>().join(" ")
}

/// Hourly cost mean with its 2.5–97.5 % band, one color per backend.
pub fn band_plot(bands: &[(String, Vec<Band>)]) -> String {
    let all = || bands.iter().flat_map(|(_, b)| b.iter());
    let f = Frame::fit(all().map(|b| b.t as f64), all().flat_map(|b| [b.lower, b.upper]));
    let mut s = String::new();
    open(&mut s, "Hourly total cost", &f, "step", "$");
    for (i, (tag, rows)) in bands.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let upper = rows.iter().map(|b| (b.t as f64, b.upper));
        let lower = rows.iter().rev().map(|b| (b.t as f64, b.lower));
        let _ = write!(
            s,
            r#"<polygon points="{}" fill="{c}" fill-opacity="0.18" stroke="none"/>"#,
            points(&f, upper.chain(lower))
        );
        let _ = write!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            points(&f, rows.iter().map(|b| (b.t as f64, b.mean)))
        );
        let y = PAD + 14.0 * i as f64;
        let _ = write!(
            s,
            r#"<text x="{}" y="{y}" fill="{c}" text-anchor="end">{tag}</text>"#,
            W - PAD - 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Sorted oracle cost against sorted proxy cost, with the identity line.
pub fn qq_plot(tag: &str, pairs: &[(f64, f64)]) -> String {
    let both = || pairs.iter().flat_map(|&(a, b)| [a, b]);
    let f = Frame::fit(both(), both());
    let mut s = String::new();
    open(&mut s, &format!("QQ: oracle vs {tag}"), &f, "oracle cost ($)", &format!("{tag} cost ($)"));
    let _ = write!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 3"/>"##,
        f.px(f.x0),
        f.py(f.x0),
        f.px(f.x1),
        f.py(f.x1)
    );
    for &(a, b) in pairs {
        let _ = write!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
            f.px(a),
            f.py(b),
            COLORS[0]
        );
    }
    s.push_str("</svg>\n");
    s
}
