//! CSV and JSON reports of verification records.

use std::path::Path;
use std::str::FromStr;

use super::{record_cmp, HarnessError, VerificationRecord};

pub const CSV_HEADER: [&str; 19] = [
    "image_id",
    "kind",
    "magnitude",
    "contrast_mode",
    "z0_lo",
    "z0_hi",
    "z1_lo",
    "z1_hi",
    "z2_lo",
    "z2_hi",
    "z3_lo",
    "z3_hi",
    "vanilla_lo",
    "vanilla_hi",
    "optimal_lo",
    "optimal_hi",
    "verdict",
    "step1_ms",
    "step2_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

fn sorted(records: &[VerificationRecord]) -> Vec<&VerificationRecord> {
    let mut v: Vec<_> = records.iter().collect();
    v.sort_by(|a, b| record_cmp(a, b));
    v
}

pub fn records_to_csv(records: &[VerificationRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in sorted(records) {
        let mut row = vec![
            r.image_id.clone(),
            r.spec.kind.to_string(),
            r.spec.magnitude.to_string(),
            r.spec.contrast_mode.name().to_string(),
        ];
        for i in r.box_bounds.intervals() {
            row.push(i.lo().to_string());
            row.push(i.hi().to_string());
        }
        row.push(opt(r.vanilla.map(|b| b.lo)));
        row.push(opt(r.vanilla.map(|b| b.hi)));
        row.push(opt(r.optimal.map(|b| b.lo)));
        row.push(opt(r.optimal.map(|b| b.hi)));
        row.push(r.verdict.to_string());
        row.push(r.step1_ms.to_string());
        row.push(r.step2_ms.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn records_to_json(records: &[VerificationRecord]) -> String {
    let mut s = serde_json::to_string_pretty(&sorted(records)).expect("records serialise");
    s.push('\n');
    s
}

pub fn write_report(
    records: &[VerificationRecord],
    path: &Path,
    format: ReportFormat,
) -> Result<(), HarnessError> {
    let text = match format {
        ReportFormat::Csv => records_to_csv(records),
        ReportFormat::Json => records_to_json(records),
    };
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_json_report(path: &Path) -> Result<Vec<VerificationRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Dataset(format!("{}: {e}", path.display())))
}
