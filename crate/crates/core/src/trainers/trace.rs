//! Per-iteration training records.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One outer iteration (non-episodic step or meta episode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lr_encoder: f64,
    pub lr_classifier: f64,
    /// Loss per language, in [`RunTrace::languages`] order.
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Cosine of every unordered language pair (i < j, row-major); `None`
    /// when either gradient had zero norm.
    pub cosines: Vec<Option<f64>>,
    /// Optional strided subsample of each language's gradient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_samples: Option<Vec<Vec<f64>>>,
    /// Binarized mask per language after this iteration (dynamic runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<Vec<u8>>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    /// "nonep" or "meta".
    pub framework: String,
    /// "none", "static", "dynamic" or "weights".
    pub masks: String,
    pub languages: Vec<String>,
    pub iterations: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn new(framework: &str, masks: &str, languages: Vec<String>) -> Self {
        RunTrace {
            framework: framework.into(),
            masks: masks.into(),
            languages,
            iterations: Vec::new(),
        }
    }

    /// Language pairs matching the order of [`IterationRecord::cosines`].
    pub fn pairs(&self) -> Vec<(String, String)> {
        let l = &self.languages;
        let mut out = Vec::new();
        for i in 0..l.len() {
            for j in i + 1..l.len() {
                out.push((l[i].clone(), l[j].clone()));
            }
        }
        out
    }

    pub fn has_mask_snapshots(&self) -> bool {
        self.iterations.iter().any(|r| r.masks.is_some())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::contract(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::file(path, format!("invalid trace: {e}")))
    }

    /// Long-format table: iteration, language, loss, grad_norm, lr_encoder,
    /// lr_classifier.
    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("iteration,language,loss,grad_norm,lr_encoder,lr_classifier\n");
        for r in &self.iterations {
            for (i, lang) in self.languages.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.8},{:.8}\n",
                    r.iteration, lang, r.losses[i], r.grad_norms[i], r.lr_encoder, r.lr_classifier
                ));
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
