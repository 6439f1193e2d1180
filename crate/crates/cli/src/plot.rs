//! Rate-distortion figure as a hand-written SVG.
//!
//! Reports are grouped into curves by codec family (the codec id without its
//! trailing model hash), each point one report, sorted by bpp.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Result};
use illm_core::eval::MetricsReport;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 44.0;
const LEGEND_H: f64 = 28.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Fid,
    Psnr,
    MsSsim,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Fid, Metric::Psnr, Metric::MsSsim];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Fid => "FID",
            Metric::Psnr => "PSNR (dB)",
            Metric::MsSsim => "MS-SSIM",
        }
    }

    pub fn lower_is_better(self) -> bool {
        self == Metric::Fid
    }

    pub fn value(self, r: &MetricsReport) -> Option<f64> {
        let v = match self {
            Metric::Fid => r.aggregate.fid,
            Metric::Psnr => Some(r.aggregate.mean_psnr),
            Metric::MsSsim => r.aggregate.mean_ms_ssim,
        };
        v.filter(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub svg: String,
    pub panels: Vec<Metric>,
    pub curves: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

/// `illm-0123abcd...` and `illm` name the same family.
pub fn codec_family(id: &str) -> &str {
    match id.rsplit_once('-') {
        Some((head, tail)) if !head.is_empty() && tail.len() == 16 && tail.bytes().all(|b| b.is_ascii_hexdigit()) => head,
        _ => id,
    }
}

pub fn plot_rd(reports: &[MetricsReport]) -> Result<Figure> {
    let Some(first) = reports.first() else {
        bail!("plot needs at least one report");
    };
    for r in reports {
        if r.schema_version != first.schema_version {
            bail!("report schema mismatch: {} vs {}", r.schema_version, first.schema_version);
        }
        if !r.aggregate.mean_bpp.is_finite() {
            bail!("report for {} has no finite bpp", r.codec_id);
        }
    }
    let mut warnings = Vec::new();
    let mut panels = Vec::new();
    for m in Metric::ALL {
        let missing: Vec<&str> = reports.iter().filter(|r| m.value(r).is_none()).map(|r| r.codec_id.as_str()).collect();
        if missing.is_empty() {
            panels.push(m);
        } else {
            warnings.push(format!("{} panel omitted: not available for {}", m.name(), missing.join(", ")));
        }
    }
    if panels.is_empty() {
        bail!("the reports share no plottable metric");
    }

    let mut groups: BTreeMap<&str, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(codec_family(&r.codec_id)).or_default().push(r);
    }
    for pts in groups.values_mut() {
        pts.sort_by(|a, b| a.aggregate.mean_bpp.total_cmp(&b.aggregate.mean_bpp));
    }

    let width = PANEL_W * panels.len() as f64;
    let height = PANEL_H + LEGEND_H;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (bx0, bx1) = range(reports.iter().map(|r| r.aggregate.mean_bpp));
    for (i, &m) in panels.iter().enumerate() {
        let ox = PANEL_W * i as f64;
        let (y0, y1) = range(reports.iter().filter_map(|r| m.value(r)));
        let px = |v: f64| ox + MARGIN_L + (v - bx0) / (bx1 - bx0) * (PANEL_W - MARGIN_L - MARGIN_R);
        let py = |v: f64| MARGIN_T + (1.0 - (v - y0) / (y1 - y0)) * (PANEL_H - MARGIN_T - MARGIN_B);
        let marker = if m.lower_is_better() { " \u{2193} lower is better" } else { " \u{2191}" };
        let _ = writeln!(s, r#"<g class="panel" data-metric="{}">"#, m.name());
        let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}{}</text>"#, ox + PANEL_W / 2.0, escape(m.name()), marker);
        let (l, r, t, b) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R, MARGIN_T, PANEL_H - MARGIN_B);
        let _ = writeln!(s, r##"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##, r - l, b - t);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = bx0 + f * (bx1 - bx0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="#444">{}</text>"##, px(xv), b + 14.0, tick(xv));
            let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#444">{}</text>"##, l - 4.0, py(yv) + 4.0, tick(yv));
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">bits per pixel</text>"#, (l + r) / 2.0, b + 32.0);
        for (ci, pts) in groups.values().enumerate() {
            let color = COLORS[ci % COLORS.len()];
            let coords: Vec<String> = pts
                .iter()
                .filter_map(|r| m.value(r).map(|v| format!("{:.2},{:.2}", px(r.aggregate.mean_bpp), py(v))))
                .collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
            for c in &coords {
                let (x, y) = c.split_once(',').unwrap_or_default();
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
            }
        }
        let _ = writeln!(s, "</g>");
    }
    let mut curves = Vec::new();
    for (ci, (name, pts)) in groups.iter().enumerate() {
        let x = 12.0 + 150.0 * ci as f64;
        let y = PANEL_H + 14.0;
        let color = COLORS[ci % COLORS.len()];
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#, x + 18.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{} ({} pt)</text>"#, x + 22.0, y + 4.0, escape(name), pts.len());
        curves.push((name.to_string(), pts.len()));
    }
    s.push_str("</svg>\n");
    Ok(Figure {
        svg: s,
        panels,
        curves,
        warnings,
    })
}

/// Padded axis range; a single value gets a unit-wide window.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= f64::EPSILON * lo.abs().max(1.0) {
        let pad = (lo.abs() * 0.1).max(0.5);
        return (lo - pad, hi + pad);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
