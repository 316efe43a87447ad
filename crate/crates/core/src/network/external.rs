//! Box bounds computed by an external solver.
//!
//! ```json
//! {"records": [{"image_id": "img7", "lower": [10, 20, 50, 60], "upper": [12, 22, 53, 64]}]}
//! ```
//!
//! A bare top-level array of records is accepted as well. Coordinates are
//! pixels with a bottom-left origin.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NetworkError;
use crate::interval::Interval;
use crate::iou_bounds::BoxBounds;

pub type ExternalBounds = BTreeMap<String, BoxBounds>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(alias = "id")]
    image_id: String,
    lower: [f64; 4],
    upper: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    records: Vec<Record>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyFile {
    Wrapped(RecordFile),
    Bare(Vec<Record>),
}

pub fn parse_external_bounds(text: &str) -> Result<ExternalBounds, NetworkError> {
    let records = match serde_json::from_str::<AnyFile>(text) {
        Ok(AnyFile::Wrapped(f)) => f.records,
        Ok(AnyFile::Bare(r)) => r,
        Err(_) => {
            // Re-parse as the canonical form for a precise message.
            serde_json::from_str::<RecordFile>(text)
                .map_err(|e| NetworkError::Parse(e.to_string()))?
                .records
        }
    };
    let mut out = BTreeMap::new();
    for r in records {
        let invalid = |reason: String| NetworkError::InvalidBounds {
            id: r.image_id.clone(),
            reason,
        };
        let mut raw = [Interval::point(0.0); 4];
        for (k, slot) in raw.iter_mut().enumerate() {
            *slot =
                Interval::new(r.lower[k], r.upper[k]).map_err(|e| invalid(format!("z{k}: {e}")))?;
        }
        // Solvers may return corner intervals out of order; widen as for IBP.
        let (bounds, _) = BoxBounds::repaired(raw);
        if out.insert(r.image_id.clone(), bounds).is_some() {
            return Err(invalid("duplicate image_id".into()));
        }
    }
    Ok(out)
}

pub fn load_external_bounds(path: impl AsRef<Path>) -> Result<ExternalBounds, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_external_bounds(&text)
}

pub fn external_bounds_to_json(bounds: &ExternalBounds) -> String {
    let file = RecordFile {
        records: bounds
            .iter()
            .map(|(id, b)| Record {
                image_id: id.clone(),
                lower: b.lower(),
                upper: b.upper(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("bounds serialise")
}

pub fn write_external_bounds(
    path: impl AsRef<Path>,
    bounds: &ExternalBounds,
) -> Result<(), NetworkError> {
    let path = path.as_ref();
    std::fs::write(path, external_bounds_to_json(bounds)).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}
