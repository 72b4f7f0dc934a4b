//! Biaffine dependency parsing: arc/label scoring, loss, exact tree
//! decoding and attachment-score evaluation.

pub mod biaffine;
pub mod cle;
pub mod metrics;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::treebank::{validate_heads, Sentence};

pub use biaffine::{Biaffine, GoldTree, ParserConfig, ScoreGrad, Scores};
pub use cle::{max_arborescence, max_single_root_arborescence, tree_score};
pub use metrics::{attachment_scores, las, AttachmentScores};

/// Predicted heads (0 = root) and labels for tokens 1..=n.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl ParseTree {
    pub fn from_sentence(s: &Sentence) -> Self {
        ParseTree {
            heads: s.heads(),
            labels: s.deprels().map(str::to_string).collect(),
        }
    }

    pub fn is_tree(&self) -> bool {
        validate_heads(&self.heads).is_ok()
    }
}

/// Decodes heads for tokens 1..=n from an (n+1)×(n+1) arc matrix.
/// With `single_root`, exactly one token attaches to the root.
pub fn decode_cle(arc: &Array2<f64>, single_root: bool) -> Result<Vec<usize>> {
    if arc.nrows() < 2 || arc.nrows() != arc.ncols() {
        return Err(Error::contract(format!("arc matrix of shape {:?} is not (n+1)×(n+1) with n ≥ 1", arc.dim())));
    }
    if arc.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("arc scores must be finite"));
    }
    let parents = if single_root {
        max_single_root_arborescence(arc)
    } else {
        max_arborescence(arc)
    };
    Ok(parents[1..].to_vec())
}

/// Copies `gold` with heads and labels replaced by a prediction.
pub fn apply_prediction(gold: &Sentence, tree: &ParseTree) -> Result<Sentence> {
    if tree.heads.len() != gold.len() || tree.labels.len() != gold.len() {
        return Err(Error::contract("prediction length differs from sentence length"));
    }
    let mut out = gold.clone();
    for ((t, &h), l) in out.tokens.iter_mut().zip(&tree.heads).zip(&tree.labels) {
        t.head = h;
        t.deprel = l.clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::Token;

    fn sent(heads: &[usize], labels: &[&str]) -> Sentence {
        Sentence {
            tokens: heads
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&h, l))| Token::new(i + 1, format!("w{i}"), h, *l))
                .collect(),
            language: "xx".into(),
            source_id: "s".into(),
        }
    }

    #[test]
    fn las_hand_counts() {
        let gold = sent(&[2, 0, 2, 3], &["nsubj", "root", "obj", "det"]);
        let pred = ParseTree {
            heads: vec![2, 0, 2, 1],
            labels: vec!["nsubj".into(), "root".into(), "amod".into(), "det".into()],
        };
        let (l, u) = las(&[pred], std::slice::from_ref(&gold)).unwrap();
        assert_eq!((l, u), (50.0, 75.0));
        let (l, u) = las(&[ParseTree::from_sentence(&gold)], &[gold]).unwrap();
        assert_eq!((l, u), (100.0, 100.0));
    }

    #[test]
    fn empty_labels_zero_las() {
        let gold = sent(&[0, 1], &["root", "obj"]);
        let pred = ParseTree {
            heads: vec![0, 1],
            labels: vec![String::new(), String::new()],
        };
        assert_eq!(las(&[pred], &[gold]).unwrap(), (0.0, 100.0));
    }

    #[test]
    fn misaligned_is_contract_error() {
        let gold = sent(&[0, 1], &["root", "obj"]);
        assert!(las(&[], std::slice::from_ref(&gold)).is_err());
        let pred = ParseTree {
            heads: vec![0],
            labels: vec!["root".into()],
        };
        assert!(las(&[pred], &[gold]).is_err());
    }

    #[test]
    fn decode_rejects_bad_shapes() {
        assert!(decode_cle(&Array2::zeros((1, 1)), true).is_err());
        assert!(decode_cle(&Array2::zeros((2, 3)), true).is_err());
        assert_eq!(decode_cle(&Array2::zeros((2, 2)), true).unwrap(), vec![0]);
    }
}
