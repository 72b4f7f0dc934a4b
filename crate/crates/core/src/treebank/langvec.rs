use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageMeta {
    pub code: String,
    pub typo_vector: Vec<f64>,
    pub mask_path: Option<PathBuf>,
}

impl LanguageMeta {
    pub fn new(code: impl Into<String>, typo_vector: Vec<f64>) -> Self {
        LanguageMeta {
            code: code.into(),
            typo_vector,
            mask_path: None,
        }
    }
}

/// Reads a `lang,f1,...,fK` table. Row numbers in errors count the header
/// as row 1.
pub fn load_language_vectors(path: impl AsRef<Path>) -> Result<BTreeMap<String, LanguageMeta>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_language_vectors(&text)
}

pub(crate) fn parse_language_vectors(text: &str) -> Result<BTreeMap<String, LanguageMeta>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Format { row: 1, message: e.to_string() })?
        .clone();
    if header.len() < 2 {
        return Err(Error::Format {
            row: 1,
            message: "header needs a language column and at least one feature".into(),
        });
    }
    let k = header.len() - 1;

    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Format { row, message: e.to_string() })?;
        if record.len() != k + 1 {
            return Err(Error::Format {
                row,
                message: format!("expected {} features, found {}", k, record.len().saturating_sub(1)),
            });
        }
        let code = record[0].to_string();
        if code.is_empty() {
            return Err(Error::Format { row, message: "empty language code".into() });
        }
        let mut vector = Vec::with_capacity(k);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Format {
                row,
                message: format!("feature '{}' is not numeric: '{cell}'", &header[j + 1]),
            })?;
            if !value.is_finite() {
                return Err(Error::Format {
                    row,
                    message: format!("feature '{}' is not finite", &header[j + 1]),
                });
            }
            vector.push(value);
        }
        if out.contains_key(&code) {
            return Err(Error::Format {
                row,
                message: format!("duplicate language code '{code}'"),
            });
        }
        out.insert(code.clone(), LanguageMeta::new(code, vector));
    }
    Ok(out)
}

pub fn write_language_vectors(path: impl AsRef<Path>, feature_names: &[&str], langs: &[LanguageMeta]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::file(path, e.to_string()))?;
    let mut header = vec!["lang".to_string()];
    header.extend(feature_names.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(|e| Error::file(path, e.to_string()))?;
    for lang in langs {
        let mut row = vec![lang.code.clone()];
        row.extend(lang.typo_vector.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::file(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
