//! Text (CWN) and JSON notations for workflows.

mod cwn;
mod json;

pub use cwn::{parse_cwn, serialize_cwn, ParseError};
pub(crate) use json::seconds_value;
pub use json::{parse_json, parse_value, serialize_json, to_value, SchemaError, SCHEMA_VERSION};

use std::path::Path;

/// The two on-disk formats.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Format {
    Cwn,
    Json,
}

impl Format {
    /// Picks the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "cwn" => Some(Format::Cwn),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NotationError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

pub fn parse(format: Format, bytes: &[u8]) -> Result<crate::Workflow, NotationError> {
    match format {
        Format::Cwn => {
            let text = std::str::from_utf8(bytes).map_err(|e| ParseError {
                line: 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count(),
                column: 1,
                message: "input is not valid UTF-8".into(),
                snippet: String::new(),
            })?;
            Ok(parse_cwn(text)?)
        }
        Format::Json => Ok(parse_json(bytes)?),
    }
}

pub fn serialize(format: Format, w: &crate::Workflow) -> Vec<u8> {
    match format {
        Format::Cwn => serialize_cwn(w).into_bytes(),
        Format::Json => serialize_json(w),
    }
}

#[cfg(test)]
mod tests;
