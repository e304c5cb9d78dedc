//! Per-run stabilization summaries and sweep tables. Everything here is a
//! function of the traces and the config alone, so a bundle's summary can be
//! recomputed from its CSVs.

use serde::{Deserialize, Serialize};

use samlab_core::spectral::{detect_stabilization, EosSummary, EosVerdict, TrackerConfig};
use samlab_core::theory::EosQuery;

use crate::config::SamSchedule;
use crate::trace::Trace;

/// Allowed relative rise of the stabilized `λ_max` between neighbouring radii.
pub const MONOTONE_TOLERANCE: f64 = 0.02;
/// `|α(λ + ρλ²) - 2|` below which a radius counts as matching the threshold.
pub const EOS_MATCH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub seed: u64,
    pub alpha: f64,
    pub rho: f64,
    pub csv: String,
    pub diverged_at: Option<usize>,
    pub final_lambda_max: Option<f64>,
    pub summary: Option<EosSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SegmentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub start: usize,
    pub end: usize,
    pub rho: f64,
    pub summary: Option<EosSummary>,
}

/// Tail-window summary, or `None` when the trace is too short for one.
pub fn summarize_trace(trace: &Trace, alpha: f64, rho: f64, tracker: &TrackerConfig) -> Option<EosSummary> {
    detect_stabilization(
        &trace.records,
        alpha,
        rho,
        tracker.window,
        tracker.tol,
        trace.diverged_at.is_some(),
    )
    .ok()
}

pub fn final_lambda_max(trace: &Trace) -> Option<f64> {
    trace.records.iter().rev().map(|r| r.lambda_max()).find(|l| l.is_finite())
}

/// One summary per schedule segment, each over the records of that segment
/// judged with that segment's radius.
pub fn summarize_segments(trace: &Trace, alpha: f64, schedule: &SamSchedule, tracker: &TrackerConfig) -> Vec<SegmentSummary> {
    let last = schedule.segments.len().saturating_sub(1);
    schedule
        .segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let inside = |step: usize| step >= seg.start && (step < seg.end || i == last);
            let records: Vec<_> = trace.records.iter().filter(|r| inside(r.step)).cloned().collect();
            let diverged = trace.diverged_at.is_some_and(inside);
            let summary = if records.is_empty() {
                None
            } else {
                detect_stabilization(&records, alpha, seg.rho, tracker.window, tracker.tol, diverged).ok()
            };
            SegmentSummary {
                start: seg.start,
                end: seg.end,
                rho: seg.rho,
                summary,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub runs: usize,
    pub diverged: usize,
    /// Mean over non-diverged runs of the window-mean `λ_max`.
    pub stabilized_lambda_max: Option<f64>,
    pub mean_sam_normalized: Option<f64>,
    /// Threshold `λ*` for this radius.
    pub eos_lambda: f64,
    /// `DIVERGED` when any run at this radius diverged.
    pub verdict: EosVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub alpha: f64,
    pub rows: Vec<SweepRow>,
    /// Stabilized `λ_max` never rises by more than [`MONOTONE_TOLERANCE`]
    /// between consecutive stable radii.
    pub monotone: bool,
    /// The largest radius diverged.
    pub divergent_tail: bool,
    /// Some stable radius has `|α(λ + ρλ²) - 2| <` [`EOS_MATCH`].
    pub eos_subrange: bool,
    /// Some stable radius sits above the threshold band.
    pub stable_above_threshold: bool,
}

impl SweepTable {
    pub fn all_diverged(&self) -> bool {
        self.rows.iter().all(|r| r.runs == r.diverged)
    }
}

pub fn sweep_table(alpha: f64, grid: &[f64], runs: &[RunRecord], tol: f64) -> SweepTable {
    let rows: Vec<SweepRow> = grid
        .iter()
        .map(|&rho| {
            let at: Vec<&RunRecord> = runs.iter().filter(|r| r.rho == rho).collect();
            let diverged = at.iter().filter(|r| r.diverged_at.is_some()).count();
            let stable: Vec<&EosSummary> = at
                .iter()
                .filter(|r| r.diverged_at.is_none())
                .filter_map(|r| r.summary.as_ref())
                .collect();
            let mean = |f: &dyn Fn(&EosSummary) -> f64| {
                (!stable.is_empty()).then(|| stable.iter().map(|s| f(s)).sum::<f64>() / stable.len() as f64)
            };
            let stabilized_lambda_max = mean(&|s| s.mean_lambda_max);
            let mean_sam_normalized = mean(&|s| s.mean_sam_normalized);
            let verdict = match mean_sam_normalized {
                _ if diverged > 0 => EosVerdict::Diverged,
                None => EosVerdict::Diverged,
                Some(v) if v < 2.0 - tol => EosVerdict::BelowEos,
                Some(v) if v > 2.0 + tol => EosVerdict::AboveEos,
                Some(_) if rho == 0.0 => EosVerdict::GdEos,
                Some(_) => EosVerdict::SamEos,
            };
            SweepRow {
                rho,
                runs: at.len(),
                diverged,
                stabilized_lambda_max,
                mean_sam_normalized,
                eos_lambda: EosQuery::new(alpha, rho).sam_eos_lambda(),
                verdict,
            }
        })
        .collect();
    let stable: Vec<&SweepRow> = rows.iter().filter(|r| r.verdict != EosVerdict::Diverged).collect();
    let monotone = stable.windows(2).all(|w| {
        match (w[0].stabilized_lambda_max, w[1].stabilized_lambda_max) {
            (Some(a), Some(b)) => b <= a * (1.0 + MONOTONE_TOLERANCE),
            _ => true,
        }
    });
    let divergent_tail = rows.last().is_some_and(|r| r.verdict == EosVerdict::Diverged);
    let eos_subrange = stable
        .iter()
        .any(|r| r.mean_sam_normalized.is_some_and(|v| (v - 2.0).abs() < EOS_MATCH));
    let stable_above_threshold = stable
        .iter()
        .any(|r| r.mean_sam_normalized.is_some_and(|v| v > 2.0 + EOS_MATCH));
    SweepTable {
        alpha,
        rows,
        monotone,
        divergent_tail,
        eos_subrange,
        stable_above_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(rho: f64, lambda: f64, diverged: bool) -> RunRecord {
        let alpha = 0.1;
        let q = EosQuery::new(alpha, rho);
        RunRecord {
            name: String::new(),
            seed: 0,
            alpha,
            rho,
            csv: String::new(),
            diverged_at: diverged.then_some(10),
            final_lambda_max: Some(lambda),
            summary: Some(EosSummary {
                window_start: 0,
                window_end: 10,
                mean_lambda_max: lambda,
                mean_gd_normalized: alpha * lambda,
                mean_sam_normalized: q.sam_normalized(lambda),
                relative_drift: 0.0,
                stabilized: true,
                verdict: EosVerdict::SamEos,
            }),
            segments: vec![],
        }
    }

    #[test]
    fn table_flags() {
        let alpha = 0.1;
        let grid = [0.0, 0.01, 0.1];
        let l1 = EosQuery::new(alpha, 0.01).sam_eos_lambda();
        let runs = vec![run(0.0, 20.0, false), run(0.01, l1, false), run(0.1, 1.0, true)];
        let t = sweep_table(alpha, &grid, &runs, 0.15);
        assert_eq!(t.rows[0].verdict, EosVerdict::GdEos);
        assert_eq!(t.rows[1].verdict, EosVerdict::SamEos);
        assert_eq!(t.rows[2].verdict, EosVerdict::Diverged);
        assert!(t.monotone && t.divergent_tail && t.eos_subrange && !t.stable_above_threshold);
        assert!(!t.all_diverged());
    }

    #[test]
    fn rising_lambda_breaks_monotonicity() {
        let runs = vec![run(0.0, 10.0, false), run(0.01, 10.5, false)];
        assert!(!sweep_table(0.1, &[0.0, 0.01], &runs, 0.15).monotone);
        let runs = vec![run(0.0, 10.0, false), run(0.01, 10.1, false)];
        assert!(sweep_table(0.1, &[0.0, 0.01], &runs, 0.15).monotone);
    }
}
