//! Attachment scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ParseTree;
use crate::error::{Error, Result};
use crate::treebank::Sentence;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttachmentScores {
    pub tokens: usize,
    pub head_correct: usize,
    pub both_correct: usize,
}

impl AttachmentScores {
    /// Labeled attachment score in percent (0 when there are no tokens).
    pub fn las(&self) -> f64 {
        pct(self.both_correct, self.tokens)
    }

    pub fn uas(&self) -> f64 {
        pct(self.head_correct, self.tokens)
    }

    pub fn merge(&mut self, other: &AttachmentScores) {
        self.tokens += other.tokens;
        self.head_correct += other.head_correct;
        self.both_correct += other.both_correct;
    }

    pub const CSV_HEADER: &'static str = "las,uas,tokens,head_correct,both_correct";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{},{},{}",
            self.las(),
            self.uas(),
            self.tokens,
            self.head_correct,
            self.both_correct
        )
    }
}

impl fmt::Display for AttachmentScores {
    /// Key-value report block.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "LAS: {:.4}", self.las())?;
        writeln!(f, "UAS: {:.4}", self.uas())?;
        writeln!(f, "tokens: {}", self.tokens)?;
        writeln!(f, "head_correct: {}", self.head_correct)?;
        write!(f, "both_correct: {}", self.both_correct)
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Token-level LAS/UAS over aligned predictions and gold sentences.
pub fn attachment_scores(pred: &[ParseTree], gold: &[Sentence]) -> Result<AttachmentScores> {
    if pred.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} predicted trees for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut acc = AttachmentScores::default();
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.heads.len() != g.len() || p.labels.len() != g.len() {
            return Err(Error::contract(format!(
                "sentence {i}: predicted {} tokens, gold has {}",
                p.heads.len(),
                g.len()
            )));
        }
        for ((&h, l), t) in p.heads.iter().zip(&p.labels).zip(&g.tokens) {
            acc.tokens += 1;
            if h == t.head {
                acc.head_correct += 1;
                if *l == t.deprel {
                    acc.both_correct += 1;
                }
            }
        }
    }
    Ok(acc)
}

/// LAS and UAS in percent.
pub fn las(pred: &[ParseTree], gold: &[Sentence]) -> Result<(f64, f64)> {
    let s = attachment_scores(pred, gold)?;
    Ok((s.las(), s.uas()))
}
