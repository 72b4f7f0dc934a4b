//! Small models and treebanks shared by unit tests.

use crate::encoder::EncoderConfig;
use crate::model::{ModelConfig, ParserModel};
use crate::treebank::{build_label_vocab, gen_toy_treebank, Adposition, ToyGrammarSpec, Treebank, WordOrder, WordVocab};

pub fn toy_treebanks(n_sentences: usize) -> Vec<Treebank> {
    let specs = [
        ToyGrammarSpec::new(WordOrder::SVO, Adposition::Pre, 1),
        ToyGrammarSpec::new(WordOrder::SOV, Adposition::Post, 2),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| gen_toy_treebank(s, &format!("l{i}"), n_sentences, i as u64).unwrap())
        .collect()
}

pub fn tiny_model(treebanks: &[Treebank], n_layers: usize, n_heads: usize, d_model: usize) -> ParserModel {
    let words = WordVocab::build(&treebanks.iter().collect::<Vec<_>>());
    let labels = build_label_vocab(treebanks).unwrap();
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            n_layers,
            n_heads,
            d_model,
            d_ff: 2 * d_model,
            ..EncoderConfig::desk()
        },
        arc_dim: 6,
        tag_dim: 4,
    };
    ParserModel::new(cfg, words, labels).unwrap()
}
