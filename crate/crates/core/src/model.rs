//! A complete parser: encoder, biaffine classifier, vocabularies and the
//! flat parameter layout tying them together.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::parser::{attachment_scores, decode_cle, AttachmentScores, Biaffine, GoldTree, ParseTree, ParserConfig};
use crate::treebank::{LabelVocab, Sentence, WordVocab};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// `vocab_size` is overwritten with the word vocabulary size.
    pub encoder: EncoderConfig,
    pub arc_dim: usize,
    pub tag_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::desk(),
            arc_dim: 64,
            tag_dim: 32,
        }
    }
}

impl ModelConfig {
    /// Small enough for the synthetic benchmark to train in minutes.
    pub fn toy() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                d_model: 32,
                d_ff: 64,
                ..EncoderConfig::desk()
            },
            arc_dim: 32,
            tag_dim: 16,
        }
    }
}

/// One sentence in index form: `ids[0]` is the root symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub heads: Vec<usize>,
    pub labels: Vec<Option<usize>>,
}

impl Example {
    pub fn n_tokens(&self) -> usize {
        self.heads.len()
    }
}

/// Architecture and vocabularies; parameters live in a separate `Vec<f64>`.
#[derive(Clone, Debug)]
pub struct ParserModel {
    pub config: ModelConfig,
    pub words: WordVocab,
    pub labels: LabelVocab,
    pub layout: Layout,
    pub encoder: Encoder,
    pub parser: Biaffine,
}

impl ParserModel {
    pub fn new(mut config: ModelConfig, words: WordVocab, labels: LabelVocab) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::usage("label vocabulary is empty"));
        }
        config.encoder.vocab_size = words.len();
        let mut layout = Layout::default();
        let encoder = Encoder::new(config.encoder.clone(), &mut layout)?;
        let parser = Biaffine::new(
            ParserConfig {
                d_model: config.encoder.d_model,
                arc_dim: config.arc_dim,
                tag_dim: config.tag_dim,
                n_labels: labels.len(),
            },
            &mut layout,
        )?;
        Ok(ParserModel {
            config,
            words,
            labels,
            layout,
            encoder,
            parser,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.size()
    }

    pub fn mask_shape(&self) -> (usize, usize) {
        (self.config.encoder.n_layers, self.config.encoder.n_heads)
    }

    /// Fresh parameters, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.layout.size()];
        self.encoder.init(&self.layout, &mut params, &mut rng);
        self.parser.init(&self.layout, &mut params, &mut rng);
        params
    }

    pub fn example(&self, s: &Sentence) -> Result<Example> {
        if s.len() + 1 > self.config.encoder.max_len {
            return Err(Error::usage(format!(
                "sentence {} has {} tokens; the encoder accepts at most {}",
                s.source_id,
                s.len(),
                self.config.encoder.max_len - 1
            )));
        }
        let mut ids = Vec::with_capacity(s.len() + 1);
        ids.push(WordVocab::ROOT);
        ids.extend(s.tokens.iter().map(|t| self.words.id(&t.form)));
        Ok(Example {
            ids,
            heads: s.heads(),
            labels: s.deprels().map(|l| self.labels.get(l)).collect(),
        })
    }

    pub fn examples(&self, sentences: &[Sentence]) -> Result<Vec<Example>> {
        sentences.iter().map(|s| self.example(s)).collect()
    }

    pub fn loss(&self, params: &[f64], ex: &Example, mask: Option<&Array2<f64>>) -> Result<f64> {
        let rec = self.encoder.encode(&self.layout, params, &ex.ids, mask, false)?;
        let scores = self.parser.score(&self.layout, params, &rec.mixed)?;
        let gold = GoldTree {
            heads: &ex.heads,
            labels: &ex.labels,
        };
        Ok(self.parser.loss(&self.layout, params, &scores, &gold)?.0)
    }

    /// Sentence loss; gradients are added into `grad` and `mask_grad`.
    pub fn loss_grad(
        &self,
        params: &[f64],
        ex: &Example,
        mask: Option<&Array2<f64>>,
        grad: &mut [f64],
        mask_grad: &mut Array2<f64>,
    ) -> Result<f64> {
        let rec = self.encoder.encode(&self.layout, params, &ex.ids, mask, true)?;
        let scores = self.parser.score(&self.layout, params, &rec.mixed)?;
        let gold = GoldTree {
            heads: &ex.heads,
            labels: &ex.labels,
        };
        let (loss, sg) = self.parser.loss(&self.layout, params, &scores, &gold)?;
        let dr = self.parser.backward(&self.layout, params, &rec.mixed, &scores, &sg, grad);
        self.encoder.backward(&self.layout, params, &rec, &dr, grad, mask_grad)?;
        Ok(loss)
    }

    /// Single-root tree and per-arc argmax labels.
    pub fn predict(&self, params: &[f64], s: &Sentence, mask: Option<&Array2<f64>>) -> Result<ParseTree> {
        let ex = self.example(s)?;
        let rec = self.encoder.encode(&self.layout, params, &ex.ids, mask, false)?;
        let scores = self.parser.score(&self.layout, params, &rec.mixed)?;
        let heads = decode_cle(&scores.arc, true)?;
        let labels = heads
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let c = self.parser.best_label(&self.layout, params, &scores, h, i + 1);
                self.labels.label(c).to_string()
            })
            .collect();
        Ok(ParseTree { heads, labels })
    }

    pub fn predict_all(&self, params: &[f64], sentences: &[Sentence], mask: Option<&Array2<f64>>) -> Result<Vec<ParseTree>> {
        sentences.iter().map(|s| self.predict(params, s, mask)).collect()
    }

    pub fn evaluate(&self, params: &[f64], sentences: &[Sentence], mask: Option<&Array2<f64>>) -> Result<AttachmentScores> {
        let pred = self.predict_all(params, sentences, mask)?;
        attachment_scores(&pred, sentences)
    }
}

/// Architecture plus parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: ParserModel,
    pub params: Vec<f64>,
}

impl Model {
    pub fn new(arch: ParserModel, seed: u64) -> Self {
        let params = arch.init_params(seed);
        Model { arch, params }
    }

    pub fn evaluate(&self, sentences: &[Sentence], mask: Option<&Array2<f64>>) -> Result<AttachmentScores> {
        self.arch.evaluate(&self.params, sentences, mask)
    }
}
