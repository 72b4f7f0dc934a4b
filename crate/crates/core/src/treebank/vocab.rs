use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Treebank;
use crate::error::{Error, Result};

/// Dependency relation labels in first-seen order with training counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    labels: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn from_parts(labels: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if labels.len() != counts.len() {
            return Err(Error::contract("label and count lists differ in length"));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate label '{l}'")));
            }
        }
        Ok(LabelVocab { labels, counts, index })
    }

    fn rebuild_index(&mut self) {
        self.index = self.labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    }

    /// Adds a label with count zero if absent. Returns its index.
    pub fn insert(&mut self, label: &str) -> usize {
        if self.index.len() != self.labels.len() {
            self.rebuild_index();
        }
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        self.labels.push(label.to_string());
        self.counts.push(0);
        self.index.insert(label.to_string(), self.labels.len() - 1);
        self.labels.len() - 1
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        if self.index.len() == self.labels.len() {
            self.index.get(label).copied()
        } else {
            self.labels.iter().position(|l| l == label)
        }
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, label: &str) -> u64 {
        self.get(label).map_or(0, |i| self.counts[i])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Collects every relation label of `treebanks` with its occurrence count.
pub fn build_label_vocab(treebanks: &[Treebank]) -> Result<LabelVocab> {
    if treebanks.is_empty() {
        return Err(Error::usage("build_label_vocab needs at least one treebank"));
    }
    let mut vocab = LabelVocab::default();
    for tb in treebanks {
        for s in &tb.sentences {
            for rel in s.deprels() {
                let i = vocab.insert(rel);
                vocab.counts[i] += 1;
            }
        }
    }
    Ok(vocab)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelRarity {
    Seen,
    Rare,
    Unseen,
}

/// A label is rare when it makes up strictly less than 0.1% of the training
/// instances and unseen when training never produced it (absent from the
/// vocabulary or present with a zero count).
pub fn classify_label_rarity(vocab: &LabelVocab, test_labels: &BTreeSet<String>) -> BTreeMap<String, LabelRarity> {
    const RARE_FRACTION: f64 = 0.001;
    let total = vocab.total() as f64;
    test_labels
        .iter()
        .map(|label| {
            let class = match vocab.get(label) {
                None => LabelRarity::Unseen,
                Some(i) if vocab.counts[i] == 0 => LabelRarity::Unseen,
                Some(i) if total > 0.0 && (vocab.counts[i] as f64) < RARE_FRACTION * total => LabelRarity::Rare,
                Some(_) => LabelRarity::Seen,
            };
            (label.clone(), class)
        })
        .collect()
}

/// Word-level input vocabulary with reserved unknown and root symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordVocab {
    forms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordVocab {
    pub const UNK: usize = 0;
    pub const ROOT: usize = 1;
    const UNK_FORM: &'static str = "<unk>";
    const ROOT_FORM: &'static str = "<root>";

    pub fn build(treebanks: &[&Treebank]) -> Self {
        let mut forms = vec![Self::UNK_FORM.to_string(), Self::ROOT_FORM.to_string()];
        let mut index: HashMap<String, usize> = forms.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
        for tb in treebanks {
            for s in &tb.sentences {
                for t in &s.tokens {
                    if !index.contains_key(&t.form) {
                        index.insert(t.form.clone(), forms.len());
                        forms.push(t.form.clone());
                    }
                }
            }
        }
        WordVocab { forms, index }
    }

    pub fn from_forms(forms: Vec<String>) -> Result<Self> {
        if forms.len() < 2 || forms[0] != Self::UNK_FORM || forms[1] != Self::ROOT_FORM {
            return Err(Error::contract("word vocabulary must start with <unk> and <root>"));
        }
        let index = forms.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
        Ok(WordVocab { forms, index })
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, form: &str) -> usize {
        if self.index.len() == self.forms.len() {
            self.index.get(form).copied().unwrap_or(Self::UNK)
        } else {
            self.forms.iter().position(|f| f == form).unwrap_or(Self::UNK)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{Sentence, Split, Token};

    fn tb(rels: &[&str]) -> Treebank {
        let n = rels.len();
        let tokens = rels
            .iter()
            .enumerate()
            .map(|(i, r)| Token::new(i + 1, "w", if i + 1 == n { 0 } else { n }, *r))
            .collect();
        Treebank::new(
            "xx",
            Split::Train,
            vec![Sentence {
                tokens,
                language: "xx".into(),
                source_id: "1".into(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn counts_and_first_seen_order() {
        let v = build_label_vocab(&[tb(&["nsubj", "root"])]).unwrap();
        assert_eq!(v.labels(), &["nsubj".to_string(), "root".to_string()]);
        assert_eq!(v.counts(), &[1, 1]);
    }

    #[test]
    fn same_treebank_twice_doubles_counts() {
        let t = tb(&["nsubj", "obj", "root"]);
        let v = build_label_vocab(&[t.clone(), t]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.counts(), &[2, 2, 2]);
    }

    #[test]
    fn empty_input_is_usage_error() {
        assert!(matches!(build_label_vocab(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn rarity_boundary_is_strict() {
        let v = LabelVocab::from_parts(
            vec!["a".into(), "b".into(), "c".into()],
            vec![9, 10, 9981],
        )
        .unwrap();
        assert_eq!(v.total(), 10_000);
        let labels: BTreeSet<String> = ["a", "b", "c", "z"].iter().map(|s| s.to_string()).collect();
        let classes = classify_label_rarity(&v, &labels);
        assert_eq!(classes["a"], LabelRarity::Rare);
        assert_eq!(classes["b"], LabelRarity::Seen);
        assert_eq!(classes["c"], LabelRarity::Seen);
        assert_eq!(classes["z"], LabelRarity::Unseen);
    }

    #[test]
    fn word_vocab_reserves_unk_and_root() {
        let v = WordVocab::build(&[&tb(&["x", "root"])]);
        assert_eq!(v.id("<unk>"), WordVocab::UNK);
        assert_eq!(v.id("<root>"), WordVocab::ROOT);
        assert_eq!(v.id("w"), 2);
        assert_eq!(v.id("never"), WordVocab::UNK);
    }
}
