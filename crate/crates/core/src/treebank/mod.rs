//! Dependency treebanks: CoNLL-U input/output, vocabularies, sampling,
//! synthetic toy languages and per-language typological metadata.

mod conllu;
mod langvec;
mod sample;
mod toy;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conllu::{parse_conllu, read_conllu, to_conllu, write_conllu};
pub use langvec::{load_language_vectors, write_language_vectors, LanguageMeta};
pub use sample::{sample_indices, sample_sentences, BatchSampler};
pub use toy::{gen_toy_treebank, Adposition, ToyGrammarSpec, WordOrder, TYPO_FEATURES};
pub use vocab::{build_label_vocab, classify_label_rarity, LabelRarity, LabelVocab, WordVocab};

/// One syntactic word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    /// Index of the governing token, 0 for the artificial root.
    pub head: usize,
    pub deprel: String,
    /// LEMMA, UPOS, XPOS, FEATS, DEPS and MISC columns, kept verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<Vec<String>>,
}

impl Token {
    pub fn new(index: usize, form: impl Into<String>, head: usize, deprel: impl Into<String>) -> Self {
        Token {
            index,
            form: form.into(),
            head,
            deprel: deprel.into(),
            extra: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub language: String,
    pub source_id: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn deprels(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.deprel.as_str())
    }

    /// Checks the token/tree invariants: contiguous 1-based indices, heads
    /// in range, no self loops, nonempty labels, a single root attachment
    /// and no cycles.
    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::Structure {
            sentence: self.source_id.clone(),
            message,
        };
        if self.tokens.is_empty() {
            return Err(err("empty sentence".into()));
        }
        let n = self.tokens.len();
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.index != i + 1 {
                return Err(err(format!("token {} has index {}", i + 1, tok.index)));
            }
            if tok.head > n {
                return Err(err(format!("token {} has head {} beyond length {}", tok.index, tok.head, n)));
            }
            if tok.head == tok.index {
                return Err(err(format!("token {} is its own head", tok.index)));
            }
            if tok.deprel.is_empty() {
                return Err(err(format!("token {} has an empty relation", tok.index)));
            }
        }
        validate_heads(&self.heads()).map_err(err)
    }
}

/// Checks that `heads` (0 = root, 1-based otherwise) describe a tree with
/// exactly one dependent of the root.
pub fn validate_heads(heads: &[usize]) -> std::result::Result<(), String> {
    let n = heads.len();
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots != 1 {
        return Err(format!("expected exactly one root attachment, found {roots}"));
    }
    // Walk up from every token; a path longer than n means a cycle.
    let mut state = vec![0u8; n + 1]; // 0 unvisited, 1 on stack, 2 reaches root
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            cur = heads[cur - 1];
            if cur > n {
                return Err(format!("head {cur} out of range"));
            }
        }
        if state[cur] == 1 {
            return Err(format!("cycle through token {cur}"));
        }
        for v in path {
            state[v] = 2;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::usage(format!("unknown split '{other}' (expected train, dev or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Treebank {
    pub language: String,
    pub split: Split,
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    pub fn new(language: impl Into<String>, split: Split, sentences: Vec<Sentence>) -> Result<Self> {
        let language = language.into();
        if let Some(s) = sentences.iter().find(|s| s.language != language) {
            return Err(Error::Structure {
                sentence: s.source_id.clone(),
                message: format!("language '{}' differs from treebank language '{}'", s.language, language),
            });
        }
        Ok(Treebank {
            language,
            split,
            sentences,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Splits off the first `n` sentences into a treebank with split `split`.
    pub fn take_front(&mut self, n: usize, split: Split) -> Treebank {
        let n = n.min(self.sentences.len());
        let rest = self.sentences.split_off(n);
        let front = std::mem::replace(&mut self.sentences, rest);
        Treebank {
            language: self.language.clone(),
            split,
            sentences: front,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(heads: &[usize]) -> Sentence {
        Sentence {
            tokens: heads
                .iter()
                .enumerate()
                .map(|(i, &h)| Token::new(i + 1, format!("w{i}"), h, "dep"))
                .collect(),
            language: "xx".into(),
            source_id: "s1".into(),
        }
    }

    #[test]
    fn accepts_chain_and_star() {
        sent(&[0, 1, 2]).validate().unwrap();
        sent(&[2, 0, 2, 2]).validate().unwrap();
    }

    #[test]
    fn rejects_cycle_multi_root_and_self_loop() {
        assert!(sent(&[0, 3, 2]).validate().is_err());
        assert!(sent(&[0, 0]).validate().is_err());
        assert!(sent(&[0, 2]).validate().is_err());
        assert!(sent(&[2, 1]).validate().is_err());
    }

    #[test]
    fn treebank_rejects_foreign_language() {
        let mut s = sent(&[0]);
        s.language = "yy".into();
        assert!(Treebank::new("xx", Split::Train, vec![s]).is_err());
    }
}
