//! The synthetic multilingual benchmark and the training pipeline run on
//! it: stage-1 pre-training, mask discovery, multilingual training in
//! either framework, and few-shot evaluation of held-out languages.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, Model, ModelConfig, ParserModel};
use crate::parser::attachment_scores;
use crate::subnet::{
    discover_mask, make_ablation_mask, AblationKind, AblationMask, HeadMask, LangMask, MaskProvenance, PruneConfig,
    SoftMask, WeightMask,
};
use crate::trainers::{
    fewshot_predict, meta_train, random_transfer_language, select_transfer_mask, train_stage1, train_stage2,
    FewshotConfig, FewshotResult, MetaConfig, RunTrace, SeedPredictions, TaskData, TrainConfig,
};
use crate::treebank::{
    build_label_vocab, gen_toy_treebank, read_conllu, write_conllu, write_language_vectors, Adposition, LanguageMeta,
    Split, ToyGrammarSpec, Treebank, WordOrder, WordVocab, TYPO_FEATURES,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyLanguage {
    pub code: String,
    pub spec: ToyGrammarSpec,
}

impl ToyLanguage {
    pub fn new(code: &str, order: WordOrder, adp: Adposition, vocab_seed: u64) -> Self {
        ToyLanguage {
            code: code.into(),
            spec: ToyGrammarSpec::new(order, adp, vocab_seed),
        }
    }

    pub fn meta(&self) -> LanguageMeta {
        LanguageMeta::new(self.code.clone(), self.spec.typo_vector())
    }
}

/// Languages and sizes of a generated benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub source: ToyLanguage,
    pub train: Vec<ToyLanguage>,
    pub test: Vec<ToyLanguage>,
    pub source_sentences: usize,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    /// Source language "en"; two similar SVO training languages, one SOV and
    /// one VSO; six held-out languages covering the remaining feature
    /// combinations.
    fn default() -> Self {
        use Adposition::{Post, Pre};
        use WordOrder::{SOV, SVO, VSO};
        let mut en = ToyLanguage::new("en", SVO, Pre, 100);
        en.spec.label_inventory.push("vocative".into());
        let mut hvp = ToyLanguage::new("hvp", VSO, Post, 13);
        hvp.spec.label_inventory.push("discourse:sp".into());
        BenchmarkSpec {
            source: en,
            train: vec![
                ToyLanguage::new("sva", SVO, Pre, 1),
                ToyLanguage::new("svb", SVO, Pre, 2),
                ToyLanguage::new("sov", SOV, Post, 3),
                ToyLanguage::new("vso", VSO, Pre, 4),
            ],
            test: vec![
                ToyLanguage::new("hsp", SVO, Post, 11),
                ToyLanguage::new("hop", SOV, Pre, 12),
                hvp,
                ToyLanguage::new("hos", SOV, Post, 14),
                ToyLanguage::new("hvs", VSO, Pre, 15),
                ToyLanguage::new("hsv", SVO, Pre, 16),
            ],
            source_sentences: 600,
            train_sentences: 500,
            dev_sentences: 100,
            test_sentences: 150,
            seed: 0,
        }
    }
}

/// Train and dev splits of one training language.
#[derive(Clone, Debug)]
pub struct TrainLanguage {
    pub lang: ToyLanguage,
    pub train: Treebank,
    pub dev: Treebank,
}

#[derive(Clone, Debug)]
pub struct TestLanguage {
    pub lang: ToyLanguage,
    pub test: Treebank,
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub source: Treebank,
    pub train: Vec<TrainLanguage>,
    pub test: Vec<TestLanguage>,
}

fn lang_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(i as u64 * 7919)
}

impl Benchmark {
    pub fn generate(spec: &BenchmarkSpec) -> Result<Self> {
        let source = gen_toy_treebank(&spec.source.spec, &spec.source.code, spec.source_sentences, lang_seed(spec.seed, 0))?;
        let mut train = Vec::new();
        for (i, l) in spec.train.iter().enumerate() {
            let mut all = gen_toy_treebank(
                &l.spec,
                &l.code,
                spec.train_sentences + spec.dev_sentences,
                lang_seed(spec.seed, i + 1),
            )?;
            let dev = all.take_front(spec.dev_sentences, Split::Dev);
            all.split = Split::Train;
            train.push(TrainLanguage {
                lang: l.clone(),
                train: all,
                dev,
            });
        }
        let mut test = Vec::new();
        for (i, l) in spec.test.iter().enumerate() {
            let mut tb = gen_toy_treebank(&l.spec, &l.code, spec.test_sentences, lang_seed(spec.seed, 100 + i))?;
            tb.split = Split::Test;
            test.push(TestLanguage { lang: l.clone(), test: tb });
        }
        Ok(Benchmark {
            spec: spec.clone(),
            source,
            train,
            test,
        })
    }

    /// Every treebank of the benchmark; the word vocabulary is built over
    /// all of them, like a shared multilingual vocabulary.
    pub fn all_treebanks(&self) -> Vec<&Treebank> {
        let mut out = vec![&self.source];
        for t in &self.train {
            out.push(&t.train);
            out.push(&t.dev);
        }
        out.extend(self.test.iter().map(|t| &t.test));
        out
    }

    pub fn training_treebanks(&self) -> Vec<Treebank> {
        let mut out = vec![self.source.clone()];
        out.extend(self.train.iter().map(|t| t.train.clone()));
        out
    }

    pub fn train_vectors(&self) -> Vec<LanguageMeta> {
        self.train.iter().map(|t| t.lang.meta()).collect()
    }

    pub fn new_model(&self, config: ModelConfig) -> Result<ParserModel> {
        let words = WordVocab::build(&self.all_treebanks());
        let labels = build_label_vocab(&self.training_treebanks())?;
        ParserModel::new(config, words, labels)
    }

    /// Writes `<lang>-{train,dev,test}.conllu`, `languages.csv` (all
    /// languages' typological vectors) and `benchmark.toml`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_conllu(dir.join(format!("{}-train.conllu", self.source.language)), &self.source.sentences)?;
        for t in &self.train {
            write_conllu(dir.join(format!("{}-train.conllu", t.lang.code)), &t.train.sentences)?;
            write_conllu(dir.join(format!("{}-dev.conllu", t.lang.code)), &t.dev.sentences)?;
        }
        for t in &self.test {
            write_conllu(dir.join(format!("{}-test.conllu", t.lang.code)), &t.test.sentences)?;
        }
        let mut metas = vec![self.spec.source.meta()];
        metas.extend(self.spec.train.iter().map(|l| l.meta()));
        metas.extend(self.spec.test.iter().map(|l| l.meta()));
        write_language_vectors(dir.join("languages.csv"), &TYPO_FEATURES, &metas)?;
        let toml = toml::to_string(&self.spec).map_err(|e| Error::contract(e.to_string()))?;
        let p = dir.join("benchmark.toml");
        fs::write(&p, toml).map_err(|e| Error::io(&p, e))
    }
}

/// Loads `<dir>/<lang>-<split>.conllu`.
pub fn load_split(dir: impl AsRef<Path>, lang: &str, split: Split) -> Result<Treebank> {
    read_conllu(dir.as_ref().join(format!("{lang}-{split}.conllu")), lang, split)
}

/// Loads the split if its file exists.
pub fn load_optional_split(dir: impl AsRef<Path>, lang: &str, split: Split) -> Result<Option<Treebank>> {
    let p = dir.as_ref().join(format!("{lang}-{split}.conllu"));
    if p.exists() {
        read_conllu(&p, lang, split).map(Some)
    } else {
        Ok(None)
    }
}

/// Builds a fresh model whose vocabularies cover every `.conllu` file in
/// `dir` (words) and every training split (labels).
pub fn model_for_directory(dir: impl AsRef<Path>, config: ModelConfig) -> Result<ParserModel> {
    let dir = dir.as_ref();
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "conllu"))
        .collect();
    entries.sort();
    let mut all = Vec::new();
    let mut train = Vec::new();
    for p in entries {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let Some((lang, split)) = stem.rsplit_once('-') else { continue };
        let Ok(split) = split.parse::<Split>() else { continue };
        let tb = read_conllu(&p, lang, split)?;
        if split == Split::Train {
            train.push(tb.clone());
        }
        all.push(tb);
    }
    if train.is_empty() {
        return Err(Error::usage(format!("no training treebanks in {}", dir.display())));
    }
    let words = WordVocab::build(&all.iter().collect::<Vec<_>>());
    let labels = build_label_vocab(&train)?;
    ParserModel::new(config, words, labels)
}

/// Stage 1 from a fresh initialization.
pub fn pretrain(arch: ParserModel, source: &Treebank, cfg: &TrainConfig) -> Result<Model> {
    let mut model = Model::new(arch, cfg.seed);
    train_stage1(&mut model, source, cfg)?;
    Ok(model)
}

/// Seed-union mask per training language.
pub fn discover_masks(
    model: &Model,
    langs: &[TrainLanguage],
    cfg: &PruneConfig,
    seeds: &[u64],
) -> Result<BTreeMap<String, (HeadMask, MaskProvenance)>> {
    let mut out = BTreeMap::new();
    for l in langs {
        let (mask, _, prov) = discover_mask(&l.lang.code, model, &l.train.sentences, &l.dev.sentences, cfg, seeds)?;
        log::info!("{}: {} of {} heads disabled", l.lang.code, mask.n_disabled(), mask.total());
        out.insert(l.lang.code.clone(), (mask, prov));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    NonEp,
    Meta,
}

impl Framework {
    pub fn name(self) -> &'static str {
        match self {
            Framework::NonEp => "nonep",
            Framework::Meta => "meta",
        }
    }
}

impl std::str::FromStr for Framework {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonep" => Ok(Framework::NonEp),
            "meta" => Ok(Framework::Meta),
            _ => Err(Error::usage(format!("unknown mode '{s}' (expected nonep or meta)"))),
        }
    }
}

/// How training languages are masked.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskPlan {
    None,
    Static(BTreeMap<String, HeadMask>),
    /// Soft masks initialized from these weights.
    Dynamic(BTreeMap<String, SoftMask>),
    Weights(BTreeMap<String, WeightMask>),
}

impl MaskPlan {
    pub fn name(&self) -> &'static str {
        match self {
            MaskPlan::None => "none",
            MaskPlan::Static(_) => "static",
            MaskPlan::Dynamic(_) => "dynamic",
            MaskPlan::Weights(_) => "weights",
        }
    }

    /// Dynamic plan whose soft masks start from the static masks.
    pub fn dynamic_from_static(masks: &BTreeMap<String, HeadMask>, keep: f64, init: f64) -> Result<Self> {
        let soft = masks
            .iter()
            .map(|(k, m)| Ok((k.clone(), SoftMask::from_static(m, keep, init)?)))
            .collect::<Result<_>>()?;
        Ok(MaskPlan::Dynamic(soft))
    }

    fn for_language(&self, code: &str) -> Result<Option<LangMask>> {
        let missing = || Error::usage(format!("no mask for language {code}"));
        Ok(match self {
            MaskPlan::None => None,
            MaskPlan::Static(m) => Some(LangMask::Static(m.get(code).ok_or_else(missing)?.clone())),
            MaskPlan::Dynamic(m) => Some(LangMask::Dynamic(m.get(code).ok_or_else(missing)?.clone())),
            MaskPlan::Weights(m) => Some(LangMask::Weights(m.get(code).ok_or_else(missing)?.clone())),
        })
    }
}

/// Builds ablation masks from discovered masks. `Bad` masks avoid every
/// head disabled by the reference mask of their language.
pub fn ablation_plan(kind: &AblationKind, masks: &BTreeMap<String, HeadMask>, seed: u64) -> Result<MaskPlan> {
    let mut heads = BTreeMap::new();
    let mut soft = BTreeMap::new();
    for (i, (code, m)) in masks.iter().enumerate() {
        match make_ablation_mask(kind, m, seed.wrapping_add(i as u64))? {
            AblationMask::Head(h) => {
                heads.insert(code.clone(), HeadMask { language: code.clone(), ..h });
            }
            AblationMask::Soft(s) => {
                soft.insert(code.clone(), SoftMask { language: code.clone(), ..s });
            }
        }
    }
    Ok(if soft.is_empty() { MaskPlan::Static(heads) } else { MaskPlan::Dynamic(soft) })
}

/// Output of one multilingual training run.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: Model,
    pub trace: RunTrace,
    /// Head masks in force at the end of training (binarized for dynamic
    /// runs); empty without head masks.
    pub final_masks: BTreeMap<String, HeadMask>,
    pub framework: Framework,
    pub plan: &'static str,
}

pub fn train_multilingual(
    stage1: &Model,
    langs: &[(&str, &Treebank)],
    plan: &MaskPlan,
    framework: Framework,
    train_cfg: &TrainConfig,
    meta_cfg: &MetaConfig,
) -> Result<TrainedRun> {
    let arch = &stage1.arch;
    let mut tasks: Vec<TaskData<Example>> = Vec::with_capacity(langs.len());
    for (code, tb) in langs {
        tasks.push(TaskData {
            code: code.to_string(),
            examples: arch.examples(&tb.sentences)?,
            mask: plan.for_language(code)?,
        });
    }
    let mut params = stage1.params.clone();
    let trace = match framework {
        Framework::NonEp => train_stage2(arch, &mut params, &mut tasks, train_cfg)?,
        Framework::Meta => meta_train(arch, &mut params, &mut tasks, meta_cfg)?,
    };
    let final_masks = tasks
        .iter()
        .filter_map(|t| t.mask.as_ref().and_then(|m| m.head_mask()).map(|m| (t.code.clone(), m)))
        .collect();
    Ok(TrainedRun {
        model: Model {
            arch: arch.clone(),
            params,
        },
        trace,
        final_masks,
        framework,
        plan: plan.name(),
    })
}

/// Which head mask a held-out language is evaluated under.
#[derive(Clone, Debug, PartialEq)]
pub enum TransferMask {
    None,
    /// Mask of the typologically closest training language.
    Typological,
    /// A uniformly random training language's mask, drawn per evaluation
    /// seed.
    Random,
    Fixed(HeadMask),
}

/// Scores and predictions of one transfer evaluation.
#[derive(Clone, Debug)]
pub struct TransferEval {
    pub result: FewshotResult,
    /// Training language whose mask was used, per seed (empty without a
    /// transfer mask).
    pub chosen: Vec<String>,
    pub predictions: Vec<SeedPredictions>,
}

/// Few-shot evaluation with the chosen transfer mask. For `Random`, each
/// few-shot seed draws its own training language.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_transfer(
    model: &Model,
    test: &Treebank,
    dev: Option<&Treebank>,
    test_meta: &LanguageMeta,
    train_meta: &[LanguageMeta],
    masks: &BTreeMap<String, HeadMask>,
    how: &TransferMask,
    cfg: &FewshotConfig,
) -> Result<TransferEval> {
    let lookup = |code: &str| {
        masks
            .get(code)
            .ok_or_else(|| Error::usage(format!("no mask stored for transfer language {code}")))
    };
    let (predictions, chosen) = match how {
        TransferMask::None => (fewshot_predict(model, test, dev, None, cfg)?, Vec::new()),
        TransferMask::Fixed(m) => (
            fewshot_predict(model, test, dev, Some(m), cfg)?,
            vec![m.language.clone(); cfg.seeds.len()],
        ),
        TransferMask::Typological => {
            let choice = select_transfer_mask(test_meta, train_meta)?;
            let p = fewshot_predict(model, test, dev, Some(lookup(&choice.code)?), cfg)?;
            (p, vec![choice.code; cfg.seeds.len()])
        }
        TransferMask::Random => {
            let mut all = Vec::new();
            let mut chosen = Vec::new();
            for &seed in &cfg.seeds {
                let pick = random_transfer_language(train_meta, seed ^ 0xa5a5_0000)?;
                let one = FewshotConfig {
                    seeds: vec![seed],
                    ..cfg.clone()
                };
                all.extend(fewshot_predict(model, test, dev, Some(lookup(&pick.code)?), &one)?);
                chosen.push(pick.code.clone());
            }
            (all, chosen)
        }
    };
    let per_seed = predictions
        .iter()
        .map(|r| Ok((r.seed, attachment_scores(&r.predictions, &r.eval)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferEval {
        result: FewshotResult::from_seeds(&test.language, per_seed),
        chosen,
        predictions,
    })
}
