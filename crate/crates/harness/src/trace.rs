//! Spectral traces as CSV.
//!
//! Columns are `step,loss,grad_norm,eig_1..eig_k,gdnorm_1..gdnorm_k,samnorm_1..samnorm_k`.
//! Floats use the shortest decimal that parses back to the same value. A run
//! that diverged ends with a marker row holding the divergence step and `NaN`
//! in every other column.

use std::io::Write;
use std::path::Path;

use samlab_core::spectral::SpectrumRecord;

use crate::error::{HarnessError, Result};

/// Records of one run plus the step at which it diverged, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub k: usize,
    pub records: Vec<SpectrumRecord>,
    pub diverged_at: Option<usize>,
}

impl Trace {
    pub fn new(k: usize, records: Vec<SpectrumRecord>, diverged_at: Option<usize>) -> Self {
        Self { k, records, diverged_at }
    }
}

pub fn header(k: usize) -> Vec<String> {
    let mut cols = vec!["step".to_string(), "loss".to_string(), "grad_norm".to_string()];
    for prefix in ["eig", "gdnorm", "samnorm"] {
        cols.extend((1..=k).map(|i| format!("{prefix}_{i}")));
    }
    cols
}

pub fn fmt_float(x: f64) -> String {
    ryu::Buffer::new().format(x).to_string()
}

/// CSV bytes of a trace.
pub fn to_csv_bytes(trace: &Trace) -> std::result::Result<Vec<u8>, String> {
    let k = trace.k;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| e.to_string();
    w.write_record(header(k)).map_err(io)?;
    for r in &trace.records {
        if r.top_eigs.len() != k || r.gd_normalized.len() != k || r.sam_normalized.len() != k {
            return Err(format!("record at step {} has {} eigenvalues, header has {k}", r.step, r.k()));
        }
        let mut row = vec![r.step.to_string(), fmt_float(r.loss), fmt_float(r.grad_norm)];
        for col in [&r.top_eigs, &r.gd_normalized, &r.sam_normalized] {
            row.extend(col.iter().map(|&v| fmt_float(v)));
        }
        w.write_record(&row).map_err(io)?;
    }
    if let Some(step) = trace.diverged_at {
        let mut row = vec![step.to_string()];
        row.extend(std::iter::repeat_n("NaN".to_string(), 2 + 3 * k));
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| e.to_string())
}

pub fn emit_csv(path: &Path, trace: &Trace) -> Result<()> {
    let bytes = to_csv_bytes(trace).map_err(|message| HarnessError::Trace {
        path: path.to_path_buf(),
        message,
    })?;
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn parse_csv(text: &str) -> std::result::Result<Trace, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let cols: Vec<String> = rdr.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    if cols.len() < 3 || !(cols.len() - 3).is_multiple_of(3) {
        return Err(format!("unexpected column count {}", cols.len()));
    }
    let k = (cols.len() - 3) / 3;
    if cols != header(k) {
        return Err(format!("unexpected header {}", cols.join(",")));
    }
    let mut records = Vec::new();
    let mut diverged_at = None;
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        if diverged_at.is_some() {
            return Err(format!("row {} follows the divergence marker", line + 2));
        }
        let step: usize = row[0].parse().map_err(|e| format!("row {}: step: {e}", line + 2))?;
        let vals: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("row {}: {e}", line + 2))?;
        if vals.iter().all(|v| v.is_nan()) {
            diverged_at = Some(step);
            continue;
        }
        records.push(SpectrumRecord {
            step,
            loss: vals[0],
            grad_norm: vals[1],
            top_eigs: vals[2..2 + k].to_vec(),
            gd_normalized: vals[2 + k..2 + 2 * k].to_vec(),
            sam_normalized: vals[2 + 2 * k..].to_vec(),
        });
    }
    Ok(Trace { k, records, diverged_at })
}

pub fn read_csv(path: &Path) -> Result<Trace> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_csv(&text).map_err(|message| HarnessError::Trace {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, k: usize) -> SpectrumRecord {
        let eigs = (0..k).map(|i| 1.0 / (step + i + 3) as f64).collect();
        SpectrumRecord::from_eigs(step, 0.1 * step as f64, 1e-300, eigs, 0.08, 0.04)
    }

    #[test]
    fn empty_trace_is_header_only() {
        let bytes = to_csv_bytes(&Trace::new(2, vec![], None)).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "step,loss,grad_norm,eig_1,eig_2,gdnorm_1,gdnorm_2,samnorm_1,samnorm_2\n"
        );
    }

    #[test]
    fn single_record_round_trips() {
        let t = Trace::new(1, vec![rec(7, 1)], None);
        let text = String::from_utf8(to_csv_bytes(&t).unwrap()).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(parse_csv(&text).unwrap(), t);
    }

    #[test]
    fn divergence_marker_round_trips() {
        let t = Trace::new(2, vec![rec(0, 2), rec(1, 2)], Some(1));
        let text = String::from_utf8(to_csv_bytes(&t).unwrap()).unwrap();
        assert!(text.ends_with("1,NaN,NaN,NaN,NaN,NaN,NaN,NaN,NaN\n"));
        assert_eq!(parse_csv(&text).unwrap(), t);
    }

    #[test]
    fn rejects_ragged_records() {
        assert!(to_csv_bytes(&Trace::new(2, vec![rec(0, 1)], None)).is_err());
        assert!(parse_csv("step,loss\n").is_err());
    }

    #[test]
    fn shortest_float_text() {
        assert_eq!(fmt_float(0.1), "0.1");
        assert_eq!(fmt_float(1e-7), "1e-7");
        assert_eq!(fmt_float(f64::INFINITY).parse::<f64>().unwrap(), f64::INFINITY);
    }
}
