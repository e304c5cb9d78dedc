//! Static SVG line plots of traces and sweep summaries.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use samlab_core::theory::EosQuery;

use crate::error::{HarnessError, Result};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SvgRecipe {
    /// Top NTK eigenvalue against step, one line per run.
    EigVsStep,
    /// Top normalized eigenvalue against step with the reference line at 2.
    NormalizedVsStep,
    /// Stabilized top eigenvalue against the SAM radius with the threshold curve.
    SweepSummary,
}

#[derive(Debug, Clone, Copy)]
pub struct LabeledTrace<'a> {
    pub label: &'a str,
    pub trace: &'a Trace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub rho: f64,
    /// `None` when every run at this radius diverged.
    pub lambda_max: Option<f64>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
}

impl Axes {
    fn new(x: (f64, f64), y: (f64, f64), log_x: bool) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                let d = lo.abs().max(1.0) * 0.5;
                (lo - d, hi + d)
            }
        };
        let x = if log_x { (x.0.log10(), x.1.log10()) } else { x };
        let (ylo, yhi) = pad(y);
        let margin = 0.05 * (yhi - ylo);
        Self {
            x: pad(x),
            y: (ylo - margin, yhi + margin),
            log_x,
        }
    }

    fn px(&self, x: f64) -> f64 {
        let x = if self.log_x { x.log10() } else { x };
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn frame(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#000"/>"##,
            x1 - x0,
            y1 - y0
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let xpx = x0 + f * (x1 - x0);
            let label = if self.log_x { tick(10f64.powf(xv)) } else { tick(xv) };
            let _ = writeln!(
                out,
                r##"<line x1="{xpx:.2}" y1="{y1}" x2="{xpx:.2}" y2="{:.2}" stroke="#000"/><text x="{xpx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{label}</text>"##,
                y1 + 5.0,
                y1 + 18.0
            );
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let ypx = y1 - f * (y1 - y0);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{ypx:.2}" x2="{x0}" y2="{ypx:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                ypx + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 10.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open() -> String {
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="100%" height="100%" fill="#fff"/>
"##
    )
}

fn extent(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    vals.filter(|v| v.is_finite())
        .fold(None, |acc, v| Some(acc.map_or((v, v), |(lo, hi): (f64, f64)| (lo.min(v), hi.max(v)))))
}

fn polyline(out: &mut String, axes: &Axes, pts: &[(f64, f64)], color: &str, label: &str) {
    let coords: Vec<String> = pts
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|&(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.2" points="{}"><title>{}</title></polyline>"#,
        coords.join(" "),
        escape(label)
    );
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, l) in labels.iter().enumerate() {
        let y = TOP + 14.0 + 14.0 * i as f64;
        let x = W - RIGHT - 110.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            x + 16.0,
            PALETTE[i % PALETTE.len()],
            x + 20.0,
            y + 4.0,
            escape(l)
        );
    }
}

/// `EIG_VS_STEP` or `NORMALIZED_VS_STEP` over the given runs.
pub fn render_traces(recipe: SvgRecipe, title: &str, traces: &[LabeledTrace<'_>]) -> std::result::Result<String, String> {
    if recipe == SvgRecipe::SweepSummary {
        return Err("SWEEP_SUMMARY takes sweep points, not traces".into());
    }
    if traces.is_empty() || traces.iter().all(|t| t.trace.records.is_empty()) {
        return Err("nothing to plot".into());
    }
    let series: Vec<Vec<(f64, f64)>> = traces
        .iter()
        .map(|t| {
            t.trace
                .records
                .iter()
                .map(|r| {
                    let y = match recipe {
                        SvgRecipe::EigVsStep => r.lambda_max(),
                        // α(λ + ρλ²), which is αλ when ρ = 0
                        _ => r.sam_normalized.first().copied().unwrap_or(f64::NAN),
                    };
                    (r.step as f64, y)
                })
                .collect()
        })
        .collect();
    let xs = extent(series.iter().flatten().map(|p| p.0)).ok_or("no finite steps")?;
    let mut ys = extent(series.iter().flatten().map(|p| p.1)).ok_or("no finite values")?;
    let normalized = recipe == SvgRecipe::NormalizedVsStep;
    if normalized {
        ys = (ys.0.min(2.0), ys.1.max(2.0));
    }
    let axes = Axes::new(xs, ys, false);
    let mut out = open();
    let ylabel = if normalized { "normalized top eigenvalue" } else { "top NTK eigenvalue" };
    axes.frame(&mut out, title, "step", ylabel);
    if normalized {
        let y = axes.py(2.0);
        let _ = writeln!(
            out,
            r##"<line class="reference" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#444" stroke-dasharray="6 4"/>"##,
            W - RIGHT
        );
    }
    for (i, (t, pts)) in traces.iter().zip(&series).enumerate() {
        polyline(&mut out, &axes, pts, PALETTE[i % PALETTE.len()], t.label);
    }
    let labels: Vec<&str> = traces.iter().map(|t| t.label).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    Ok(out)
}

/// `SWEEP_SUMMARY`: one marker per stable radius and the threshold curve
/// `λ*(ρ)` for the sweep's learning rate.
pub fn render_sweep(title: &str, alpha: f64, points: &[SweepPoint]) -> std::result::Result<String, String> {
    if points.is_empty() {
        return Err("nothing to plot".into());
    }
    let log_x = points.iter().all(|p| p.rho > 0.0);
    let xs = extent(points.iter().map(|p| p.rho)).ok_or("no finite radii")?;
    let curve: Vec<(f64, f64)> = (0..=100)
        .map(|i| {
            let f = i as f64 / 100.0;
            let rho = if log_x {
                10f64.powf(xs.0.log10() + f * (xs.1.log10() - xs.0.log10()))
            } else {
                xs.0 + f * (xs.1 - xs.0)
            };
            (rho, EosQuery::new(alpha, rho).sam_eos_lambda())
        })
        .collect();
    let ys = extent(points.iter().filter_map(|p| p.lambda_max).chain(curve.iter().map(|c| c.1)))
        .ok_or("no finite values")?;
    let axes = Axes::new(xs, ys, log_x);
    let mut out = open();
    axes.frame(&mut out, title, "SAM radius", "stabilized top eigenvalue");
    polyline(&mut out, &axes, &curve, "#444", "threshold");
    for p in points {
        let x = axes.px(p.rho);
        match p.lambda_max {
            Some(l) => {
                let _ = writeln!(
                    out,
                    r#"<circle class="marker" cx="{x:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
                    axes.py(l),
                    PALETTE[0]
                );
            }
            None => {
                let y = TOP + 8.0;
                let _ = writeln!(
                    out,
                    r#"<path class="diverged" d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="{}" stroke-width="2"/>"#,
                    x - 4.0,
                    y - 4.0,
                    x + 4.0,
                    y + 4.0,
                    x - 4.0,
                    y + 4.0,
                    x + 4.0,
                    y - 4.0,
                    PALETTE[1]
                );
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| HarnessError::io(path, e))
}
