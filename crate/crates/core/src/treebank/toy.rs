//! Synthetic languages with controllable word order and adposition
//! direction, used as a desk-scale stand-in for real treebanks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Sentence, Split, Token, Treebank};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordOrder {
    SVO,
    SOV,
    VSO,
}

impl FromStr for WordOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SVO" => Ok(WordOrder::SVO),
            "SOV" => Ok(WordOrder::SOV),
            "VSO" => Ok(WordOrder::VSO),
            _ => Err(Error::usage(format!("unknown word order '{s}'"))),
        }
    }
}

impl fmt::Display for WordOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adposition {
    Pre,
    Post,
}

impl FromStr for Adposition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(Adposition::Pre),
            "post" => Ok(Adposition::Post),
            _ => Err(Error::usage(format!("unknown adposition '{s}'"))),
        }
    }
}

impl fmt::Display for Adposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adposition::Pre => "pre",
            Adposition::Post => "post",
        })
    }
}

/// Names of the typological indicator features, in vector order.
pub const TYPO_FEATURES: [&str; 9] = [
    "S_SVO", "S_SOV", "S_VSO", "S_VO", "S_OV", "S_SV", "S_VS", "ADP_PRE", "ADP_POST",
];

/// Relations the generator knows how to produce.
const KNOWN_LABELS: [&str; 13] = [
    "root", "nsubj", "obj", "det", "amod", "case", "obl", "nmod", "advmod", "cc", "conj", "discourse:sp", "vocative",
];

fn default_labels() -> Vec<String> {
    KNOWN_LABELS[..11].iter().map(|s| s.to_string()).collect()
}

/// Grammar of one toy language, readable from a key-value (TOML) file with
/// keys `word_order`, `adposition`, `vocab_seed`, `labels`, `noise_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyGrammarSpec {
    pub word_order: WordOrder,
    pub adposition: Adposition,
    pub vocab_seed: u64,
    #[serde(rename = "labels", default = "default_labels")]
    pub label_inventory: Vec<String>,
    #[serde(default)]
    pub noise_rate: f64,
}

impl ToyGrammarSpec {
    pub fn new(word_order: WordOrder, adposition: Adposition, vocab_seed: u64) -> Self {
        ToyGrammarSpec {
            word_order,
            adposition,
            vocab_seed,
            label_inventory: default_labels(),
            noise_rate: 0.0,
        }
    }

    pub fn with_labels(mut self, labels: &[&str]) -> Self {
        self.label_inventory = labels.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_noise(mut self, noise_rate: f64) -> Self {
        self.noise_rate = noise_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::usage(format!("noise_rate {} outside [0, 1]", self.noise_rate)));
        }
        if self.label_inventory.is_empty() {
            return Err(Error::usage("label inventory is empty"));
        }
        if !self.has("root") {
            return Err(Error::usage("label inventory must contain 'root'"));
        }
        if let Some(l) = self.label_inventory.iter().find(|l| !KNOWN_LABELS.contains(&l.as_str())) {
            return Err(Error::usage(format!("the toy generator cannot produce label '{l}'")));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ToyGrammarSpec = toml::from_str(text).map_err(|e| Error::usage(format!("grammar spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::file(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("grammar spec serializes")
    }

    fn has(&self, label: &str) -> bool {
        self.label_inventory.iter().any(|l| l == label)
    }

    /// Binary typological indicators (see [`TYPO_FEATURES`]). Grammars that
    /// share more features have a larger cosine similarity.
    pub fn typo_vector(&self) -> Vec<f64> {
        let (svo, sov, vso) = match self.word_order {
            WordOrder::SVO => (1.0, 0.0, 0.0),
            WordOrder::SOV => (0.0, 1.0, 0.0),
            WordOrder::VSO => (0.0, 0.0, 1.0),
        };
        let vo = if self.word_order == WordOrder::SOV { 0.0 } else { 1.0 };
        let sv = if self.word_order == WordOrder::VSO { 0.0 } else { 1.0 };
        let pre = if self.adposition == Adposition::Pre { 1.0 } else { 0.0 };
        vec![svo, sov, vso, vo, 1.0 - vo, sv, 1.0 - sv, pre, 1.0 - pre]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cat {
    Noun,
    Verb,
    Adj,
    Det,
    Adp,
    Adv,
    Conj,
    Part,
}

const CATS: [(Cat, usize); 8] = [
    (Cat::Noun, 48),
    (Cat::Verb, 28),
    (Cat::Adj, 18),
    (Cat::Det, 6),
    (Cat::Adp, 8),
    (Cat::Adv, 10),
    (Cat::Conj, 3),
    (Cat::Part, 4),
];

/// Fraction of each category pool that a single language lexicalizes.
const LEXICON_SHARE: f64 = 0.6;

/// The shared pool of word forms. Every language draws its lexicon from
/// it, so unrelated toy languages still overlap in vocabulary the way
/// languages share subword units in a multilingual model.
fn form_pool() -> Vec<(Cat, Vec<String>)> {
    const ONSETS: [&str; 14] = ["k", "t", "p", "m", "n", "s", "l", "r", "d", "g", "b", "v", "z", "h"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut rng = ChaCha8Rng::seed_from_u64(0x746f79);
    let mut seen = std::collections::HashSet::new();
    CATS.iter()
        .map(|&(cat, size)| {
            let mut forms = Vec::with_capacity(size);
            while forms.len() < size {
                let syllables = if matches!(cat, Cat::Det | Cat::Adp | Cat::Conj | Cat::Part) { 1 } else { 2 + rng.random_range(0..2) };
                let mut w = String::new();
                for _ in 0..syllables {
                    w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
                    w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
                }
                if seen.insert(w.clone()) {
                    forms.push(w);
                }
            }
            (cat, forms)
        })
        .collect()
}

struct Lexicon {
    entries: Vec<(Cat, Vec<String>)>,
    all: Vec<String>,
}

impl Lexicon {
    fn new(vocab_seed: u64) -> Self {
        let pool = form_pool();
        let all = pool.iter().flat_map(|(_, f)| f.iter().cloned()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(vocab_seed);
        let entries = pool
            .into_iter()
            .map(|(cat, mut forms)| {
                let keep = ((forms.len() as f64 * LEXICON_SHARE).ceil() as usize).max(1);
                forms.shuffle(&mut rng);
                forms.truncate(keep);
                (cat, forms)
            })
            .collect();
        Lexicon { entries, all }
    }

    fn forms(&self, cat: Cat) -> &[String] {
        &self.entries.iter().find(|(c, _)| *c == cat).expect("category present").1
    }
}

struct Node {
    cat: Cat,
    label: &'static str,
    left: Vec<Node>,
    right: Vec<Node>,
}

impl Node {
    fn leaf(cat: Cat, label: &'static str) -> Self {
        Node {
            cat,
            label,
            left: Vec::new(),
            right: Vec::new(),
        }
    }
}

struct Builder<'a> {
    spec: &'a ToyGrammarSpec,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn chance(&mut self, label: &str, p: f64) -> bool {
        // Always draw so that the random stream does not depend on the
        // inventory of optional labels.
        let hit = self.rng.random::<f64>() < p;
        hit && self.spec.has(label)
    }

    fn noun_phrase(&mut self, label: &'static str, allow_nmod: bool) -> Node {
        let mut np = Node::leaf(Cat::Noun, label);
        if self.chance("det", 0.6) {
            np.left.push(Node::leaf(Cat::Det, "det"));
        }
        if self.chance("amod", 0.3) {
            np.left.push(Node::leaf(Cat::Adj, "amod"));
        }
        let nmod = self.chance("nmod", 0.15);
        if allow_nmod && nmod && self.spec.has("case") {
            let pp = self.adpositional_phrase("nmod");
            match self.spec.adposition {
                Adposition::Pre => np.right.push(pp),
                Adposition::Post => np.left.insert(0, pp),
            }
        }
        np
    }

    fn adpositional_phrase(&mut self, label: &'static str) -> Node {
        let mut np = self.noun_phrase(label, false);
        match self.spec.adposition {
            Adposition::Pre => np.left.insert(0, Node::leaf(Cat::Adp, "case")),
            Adposition::Post => np.right.push(Node::leaf(Cat::Adp, "case")),
        }
        np
    }

    fn clause(&mut self, label: &'static str) -> Node {
        let mut verb = Node::leaf(Cat::Verb, label);
        let has_subj = self.chance("nsubj", 1.0);
        let subj = has_subj.then(|| self.noun_phrase("nsubj", true));
        let has_obj = self.chance("obj", 0.7);
        let obj = has_obj.then(|| self.noun_phrase("obj", true));
        let adv = self.chance("advmod", 0.3).then(|| Node::leaf(Cat::Adv, "advmod"));
        let has_obl = self.chance("obl", 0.35) && self.spec.has("case");
        let obl = has_obl.then(|| self.adpositional_phrase("obl"));

        match self.spec.word_order {
            WordOrder::SVO => {
                verb.left.extend(subj);
                verb.left.extend(adv);
                verb.right.extend(obj);
                verb.right.extend(obl);
            }
            WordOrder::SOV => {
                verb.left.extend(subj);
                verb.left.extend(obl);
                verb.left.extend(obj);
                verb.left.extend(adv);
            }
            WordOrder::VSO => {
                verb.left.extend(adv);
                verb.right.extend(subj);
                verb.right.extend(obj);
                verb.right.extend(obl);
            }
        }
        verb
    }

    fn sentence(&mut self) -> Node {
        let mut root = self.clause("root");
        let coordinate = self.chance("conj", 0.12) && self.spec.has("cc");
        if coordinate {
            let mut second = self.clause("conj");
            second.left.insert(0, Node::leaf(Cat::Conj, "cc"));
            root.right.push(second);
        }
        if self.chance("discourse:sp", 0.5) {
            root.right.push(Node::leaf(Cat::Part, "discourse:sp"));
        }
        if self.chance("vocative", 0.005) {
            root.left.insert(0, Node::leaf(Cat::Noun, "vocative"));
        }
        root
    }
}

/// In-order traversal assigning positions; returns (cat, label, parent slot).
fn linearize(node: &Node, parent: usize, out: &mut Vec<(Cat, &'static str, usize)>) {
    // Reserve the head's slot after the left dependents have been placed.
    let mut left_slots = Vec::new();
    for child in &node.left {
        let start = out.len();
        linearize(child, usize::MAX, out);
        left_slots.push(start..out.len());
    }
    let me = out.len();
    out.push((node.cat, node.label, parent));
    for range in left_slots {
        for entry in &mut out[range] {
            if entry.2 == usize::MAX {
                entry.2 = me;
            }
        }
    }
    for child in &node.right {
        linearize(child, me, out);
    }
}

/// Generates `n_sentences` trees of the grammar. The sentence structure
/// depends only on `seed`; the word forms additionally on `vocab_seed`.
pub fn gen_toy_treebank(spec: &ToyGrammarSpec, language: &str, n_sentences: usize, seed: u64) -> Result<Treebank> {
    spec.validate()?;
    if n_sentences == 0 {
        return Err(Error::usage("n_sentences must be at least 1"));
    }
    let lexicon = Lexicon::new(spec.vocab_seed);
    let mut builder = Builder {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut word_rng = ChaCha8Rng::seed_from_u64(seed);
    word_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(2);

    let mut sentences = Vec::with_capacity(n_sentences);
    for i in 0..n_sentences {
        let tree = builder.sentence();
        let mut flat = Vec::new();
        linearize(&tree, usize::MAX, &mut flat);
        let tokens = flat
            .iter()
            .enumerate()
            .map(|(pos, &(cat, label, parent))| {
                let forms = lexicon.forms(cat);
                let mut form = forms[word_rng.random_range(0..forms.len())].clone();
                let noisy = noise_rng.random::<f64>() < spec.noise_rate;
                if noisy {
                    form = lexicon.all[noise_rng.random_range(0..lexicon.all.len())].clone();
                }
                let head = if parent == usize::MAX { 0 } else { parent + 1 };
                Token::new(pos + 1, form, head, label)
            })
            .collect();
        let sentence = Sentence {
            tokens,
            language: language.to_string(),
            source_id: format!("{language}-{seed}-{i}"),
        };
        sentence.validate()?;
        sentences.push(sentence);
    }
    Treebank::new(language, Split::Train, sentences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{parse_conllu, to_conllu};

    #[test]
    fn svo_orders_subject_verb_object() {
        let spec = ToyGrammarSpec::new(WordOrder::SVO, Adposition::Pre, 1);
        let tb = gen_toy_treebank(&spec, "t1", 200, 3).unwrap();
        let mut checked = 0;
        for s in &tb.sentences {
            for (vi, verb) in s.tokens.iter().enumerate() {
                if verb.deprel != "root" && verb.deprel != "conj" {
                    continue;
                }
                let subj = s.tokens.iter().position(|t| t.head == vi + 1 && t.deprel == "nsubj");
                let obj = s.tokens.iter().position(|t| t.head == vi + 1 && t.deprel == "obj");
                if let (Some(su), Some(ob)) = (subj, obj) {
                    assert!(su < vi && vi < ob, "{}", to_conllu(std::slice::from_ref(s)));
                    checked += 1;
                }
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn adposition_direction() {
        for (adp, before) in [(Adposition::Pre, true), (Adposition::Post, false)] {
            let spec = ToyGrammarSpec::new(WordOrder::SOV, adp, 4);
            let tb = gen_toy_treebank(&spec, "t", 100, 1).unwrap();
            for s in &tb.sentences {
                for t in s.tokens.iter().filter(|t| t.deprel == "case") {
                    assert_eq!(t.index < t.head, before);
                }
            }
        }
    }

    #[test]
    fn deterministic_without_noise() {
        let spec = ToyGrammarSpec::new(WordOrder::VSO, Adposition::Post, 2);
        assert_eq!(
            gen_toy_treebank(&spec, "t", 50, 7).unwrap(),
            gen_toy_treebank(&spec, "t", 50, 7).unwrap()
        );
    }

    #[test]
    fn vocab_seed_changes_forms_not_structure() {
        let a = gen_toy_treebank(&ToyGrammarSpec::new(WordOrder::SOV, Adposition::Post, 1), "a", 60, 9).unwrap();
        let b = gen_toy_treebank(&ToyGrammarSpec::new(WordOrder::SOV, Adposition::Post, 2), "a", 60, 9).unwrap();
        let mut differing_forms = 0;
        for (sa, sb) in a.sentences.iter().zip(&b.sentences) {
            assert_eq!(sa.heads(), sb.heads());
            assert!(sa.deprels().eq(sb.deprels()));
            differing_forms += sa.tokens.iter().zip(&sb.tokens).filter(|(x, y)| x.form != y.form).count();
        }
        assert!(differing_forms > 0);
    }

    #[test]
    fn output_reparses() {
        let spec = ToyGrammarSpec::new(WordOrder::SVO, Adposition::Post, 5)
            .with_noise(0.2)
            .with_labels(&KNOWN_LABELS);
        let tb = gen_toy_treebank(&spec, "t", 80, 2).unwrap();
        let again = parse_conllu(&to_conllu(&tb.sentences), "t", Split::Train).unwrap();
        assert_eq!(again.len(), tb.len());
        for (x, y) in tb.sentences.iter().zip(&again.sentences) {
            assert_eq!(x.heads(), y.heads());
        }
    }

    #[test]
    fn inventory_restricts_labels() {
        let spec = ToyGrammarSpec::new(WordOrder::SVO, Adposition::Pre, 1).with_labels(&["root", "nsubj"]);
        let tb = gen_toy_treebank(&spec, "t", 40, 1).unwrap();
        assert!(tb.sentences.iter().flat_map(|s| s.deprels()).all(|d| d == "root" || d == "nsubj"));
    }

    #[test]
    fn shared_features_raise_similarity() {
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let sov_pre = ToyGrammarSpec::new(WordOrder::SOV, Adposition::Pre, 0).typo_vector();
        let sov_post = ToyGrammarSpec::new(WordOrder::SOV, Adposition::Post, 0).typo_vector();
        let svo_pre = ToyGrammarSpec::new(WordOrder::SVO, Adposition::Pre, 0).typo_vector();
        let vso_post = ToyGrammarSpec::new(WordOrder::VSO, Adposition::Post, 0).typo_vector();
        assert!(cos(&sov_pre, &sov_post) > cos(&sov_pre, &svo_pre));
        assert!(cos(&sov_pre, &svo_pre) > cos(&sov_pre, &vso_post));
        assert_eq!(sov_pre.len(), TYPO_FEATURES.len());
    }

    #[test]
    fn toml_spec_roundtrip() {
        let text = "word_order = \"SOV\"\nadposition = \"post\"\nvocab_seed = 3\nlabels = [\"root\", \"nsubj\", \"obj\"]\nnoise_rate = 0.1\n";
        let spec = ToyGrammarSpec::from_toml(text).unwrap();
        assert_eq!(spec.word_order, WordOrder::SOV);
        assert_eq!(ToyGrammarSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        assert!(ToyGrammarSpec::from_toml("word_order = \"SOV\"\nadposition = \"post\"\nvocab_seed = 3\nnoise_rate = 1.5\n").is_err());
    }
}
