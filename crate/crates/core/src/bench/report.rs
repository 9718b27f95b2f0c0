//! results.csv, report.md and the latency/cost scatter.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchError, CostMode};

pub const RESULTS_HEADER: &str =
    "model,accuracy,macro_f1,latency_per_student_s,params,annual_cost_usd,cost_mode";

/// One row of results.csv.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub latency_per_student_s: f64,
    pub params: Option<u64>,
    pub annual_cost_usd: f64,
    pub cost_mode: CostMode,
}

pub fn write_results_csv(results: &[BenchReport], w: impl Write) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(w);
    for r in results {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results_csv(r: impl Read) -> Result<Vec<BenchReport>, BenchError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(BenchError::from))
        .collect()
}

fn fmt_params(p: Option<u64>) -> String {
    match p {
        None => "n/a".into(),
        Some(n) if n >= 1_000_000_000 => format!("{:.1}B", n as f64 / 1e9),
        Some(n) if n >= 1_000_000 => format!("{:.2}M", n as f64 / 1e6),
        Some(n) => n.to_string(),
    }
}

pub fn render_report_md(results: &[BenchReport]) -> String {
    let mut s = String::from("# Benchmark results\n\n");
    s.push_str("| Model | Accuracy | Macro-F1 | Latency / student (s) | Params | Annual cost (USD) | Cost mode |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---|\n");
    for r in results {
        let _ = writeln!(
            s,
            "| {} | {:.1}% | {:.3} | {:.4} | {} | {:.2} | {} |",
            r.model,
            r.accuracy * 100.0,
            r.macro_f1,
            r.latency_per_student_s,
            fmt_params(r.params),
            r.annual_cost_usd,
            r.cost_mode.name()
        );
    }
    if let (Some(best), Some(cheap)) = (
        results
            .iter()
            .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy)),
        results
            .iter()
            .min_by(|a, b| a.annual_cost_usd.total_cmp(&b.annual_cost_usd)),
    ) {
        let _ = write!(
            s,
            "\nMost accurate: {} ({:.1}%). Cheapest: {} (${:.2} per year).\n",
            best.model,
            best.accuracy * 100.0,
            cheap.model,
            cheap.annual_cost_usd
        );
    }
    s
}

/// Base-10 axis spanning whole decades, mapped onto a pixel range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogAxis {
    pub lo_exp: i32,
    pub hi_exp: i32,
    pub px_lo: f64,
    pub px_hi: f64,
}

impl LogAxis {
    /// The smallest span of decades containing every positive value.
    pub fn covering(values: impl IntoIterator<Item = f64>, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = (i32::MAX, i32::MIN);
        for v in values.into_iter().filter(|v| *v > 0.0 && v.is_finite()) {
            let e = v.log10();
            lo = lo.min(e.floor() as i32);
            hi = hi.max(e.ceil() as i32);
        }
        if lo > hi {
            (lo, hi) = (0, 1);
        }
        if lo == hi {
            hi += 1;
        }
        Self {
            lo_exp: lo,
            hi_exp: hi,
            px_lo,
            px_hi,
        }
    }

    /// Pixel position of `v`. Values at or below zero land on the low end.
    pub fn map(&self, v: f64) -> f64 {
        let e = if v > 0.0 {
            v.log10()
        } else {
            self.lo_exp as f64
        };
        let t = (e - self.lo_exp as f64) / (self.hi_exp - self.lo_exp) as f64;
        self.px_lo + t * (self.px_hi - self.px_lo)
    }

    pub fn decades(&self) -> impl Iterator<Item = i32> {
        self.lo_exp..=self.hi_exp
    }
}

const VIRIDIS: [(u8, u8, u8); 5] = [
    (68, 1, 84),
    (59, 82, 139),
    (33, 145, 140),
    (94, 201, 98),
    (253, 231, 37),
];

fn ramp(t: f64) -> String {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.5
    };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(a.0, b.0),
        mix(a.1, b.1),
        mix(a.2, b.2)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(e: i32, unit: &str) -> String {
    let v = 10f64.powi(e);
    if e >= 0 {
        format!("{unit}{v:.0}")
    } else {
        format!("{unit}{v}")
    }
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

/// Axes used by [`render_scatter_svg`]: latency along x, cost along y (up).
pub fn scatter_axes(results: &[BenchReport]) -> (LogAxis, LogAxis) {
    (
        LogAxis::covering(
            results.iter().map(|r| r.latency_per_student_s),
            LEFT,
            W - RIGHT,
        ),
        LogAxis::covering(results.iter().map(|r| r.annual_cost_usd), H - BOTTOM, TOP),
    )
}

pub fn render_scatter_svg(results: &[BenchReport]) -> String {
    let (xa, ya) = scatter_axes(results);
    let (amin, amax) = results
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.accuracy), hi.max(r.accuracy))
        });
    let shade = |a: f64| {
        if amax > amin {
            ramp((a - amin) / (amax - amin))
        } else {
            ramp(0.5)
        }
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for e in xa.decades() {
        let x = xa.map(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            H - BOTTOM,
            H - BOTTOM + 18.0,
            tick_label(e, "")
        );
    }
    for e in ya.decades() {
        let y = ya.map(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0,
            tick_label(e, "$")
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - RIGHT - LEFT,
        H - BOTTOM - TOP
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Latency per student (s, log scale)</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">Annual cost (USD, log scale)</text>"#,
        (TOP + H - BOTTOM) / 2.0
    );
    for r in results {
        let (x, y) = (xa.map(r.latency_per_student_s), ya.map(r.annual_cost_usd));
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="{}" stroke="black"><title>{} accuracy {:.1}%</title></circle><text x="{:.2}" y="{:.2}">{}</text>"#,
            shade(r.accuracy),
            escape(&r.model),
            r.accuracy * 100.0,
            x + 8.0,
            y - 8.0,
            escape(&r.model)
        );
    }
    let lx = W - RIGHT + 30.0;
    let _ = writeln!(s, r#"<text x="{lx:.2}" y="{TOP}">Accuracy</text>"#);
    for i in 0..=10 {
        let t = 1.0 - i as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="16" height="16" fill="{}"/>"#,
            TOP + 10.0 + i as f64 * 16.0,
            ramp(t)
        );
    }
    if amin.is_finite() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{:.1}%</text><text x="{:.2}" y="{:.2}">{:.1}%</text>"#,
            lx + 22.0,
            TOP + 22.0,
            amax * 100.0,
            lx + 22.0,
            TOP + 10.0 + 10.0 * 16.0 + 12.0,
            amin * 100.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes results.csv, report.md and scatter.svg into `out_dir` and returns
/// their paths.
pub fn emit_report(results: &[BenchReport], out_dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    if results.is_empty() {
        return Err(BenchError::EmptyResults);
    }
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("results.csv");
    let mut buf = Vec::new();
    write_results_csv(results, &mut buf)?;
    fs::write(&csv_path, buf)?;
    let md_path = out_dir.join("report.md");
    fs::write(&md_path, render_report_md(results))?;
    let svg_path = out_dir.join("scatter.svg");
    fs::write(&svg_path, render_scatter_svg(results))?;
    Ok(vec![csv_path, md_path, svg_path])
}
