//! Test-time adaptation on a handful of target-language sentences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{batch_grad, ActiveMask};
use super::optim::{GroupLrs, Optimizer, OptimizerKind};
use super::Objective;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::parser::{attachment_scores, AttachmentScores, ParseTree};
use crate::subnet::HeadMask;
use crate::treebank::{sample_indices, Sentence, Treebank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewshotConfig {
    pub shots: usize,
    pub steps: usize,
    pub lrs: GroupLrs,
    pub optimizer: OptimizerKind,
    pub seeds: Vec<u64>,
}

impl Default for FewshotConfig {
    fn default() -> Self {
        FewshotConfig {
            shots: 20,
            steps: 20,
            lrs: GroupLrs::new(1e-4, 1e-3),
            optimizer: OptimizerKind::Sgd,
            seeds: (0..5).collect(),
        }
    }
}

/// Adaptation sentences and the sentences evaluated afterwards.
#[derive(Clone, Debug)]
pub struct FewshotSplit {
    pub shots: Vec<Sentence>,
    pub eval: Vec<Sentence>,
}

/// Draws the shots from `dev` when it can supply them; otherwise draws
/// them from `test` and removes them from the evaluation set.
pub fn split_fewshot(test: &Treebank, dev: Option<&Treebank>, shots: usize, seed: u64) -> Result<FewshotSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some(dev) = dev.filter(|d| d.len() >= shots && shots > 0) {
        if test.is_empty() {
            return Err(Error::usage(format!("test treebank for {} is empty", test.language)));
        }
        let idx = sample_indices(&mut rng, dev.len(), shots, true)?;
        return Ok(FewshotSplit {
            shots: idx.iter().map(|&i| dev.sentences[i].clone()).collect(),
            eval: test.sentences.clone(),
        });
    }
    if test.len() <= shots {
        return Err(Error::usage(format!(
            "test treebank for {} has {} sentences; need more than {shots}",
            test.language,
            test.len()
        )));
    }
    let idx = sample_indices(&mut rng, test.len(), shots, true)?;
    let mut taken = vec![false; test.len()];
    idx.iter().for_each(|&i| taken[i] = true);
    Ok(FewshotSplit {
        shots: idx.iter().map(|&i| test.sentences[i].clone()).collect(),
        eval: test
            .sentences
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(s, _)| s.clone())
            .collect(),
    })
}

fn head_mask_array(model: &Model, mask: Option<&HeadMask>) -> Result<Option<ndarray::Array2<f64>>> {
    mask.map(|m| {
        m.check_shape(model.arch.mask_shape())?;
        Ok(m.as_f64())
    })
    .transpose()
}

/// Full-batch gradient steps on `shots` under `mask`; returns the adapted
/// parameters.
pub fn fewshot_adapt(model: &Model, shots: &[Sentence], mask: Option<&HeadMask>, cfg: &FewshotConfig) -> Result<Vec<f64>> {
    let mut params = model.params.clone();
    if cfg.steps == 0 {
        return Ok(params);
    }
    if shots.is_empty() {
        return Err(Error::usage("no adaptation sentences"));
    }
    let active = match head_mask_array(model, mask)? {
        Some(m) => ActiveMask::Heads(m),
        None => ActiveMask::None,
    };
    let examples = model.arch.examples(shots)?;
    let batch: Vec<_> = examples.iter().collect();
    let groups = model.arch.groups();
    let mut opt = Optimizer::new(cfg.optimizer, params.len(), 0.0);
    for _ in 0..cfg.steps {
        let bg = batch_grad(&model.arch, &params, &batch, &active)?;
        opt.step(&mut params, &bg.grad, &groups, cfg.lrs);
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewshotResult {
    pub language: String,
    pub per_seed: Vec<(u64, AttachmentScores)>,
    pub mean_las: f64,
    pub mean_uas: f64,
}

/// Predictions of one few-shot seed on its evaluation sentences.
#[derive(Clone, Debug)]
pub struct SeedPredictions {
    pub seed: u64,
    pub eval: Vec<Sentence>,
    pub predictions: Vec<ParseTree>,
}

/// Adapt-and-predict once per seed; each seed draws its own shots. The
/// mask is applied during adaptation and prediction.
pub fn fewshot_predict(
    model: &Model,
    test: &Treebank,
    dev: Option<&Treebank>,
    mask: Option<&HeadMask>,
    cfg: &FewshotConfig,
) -> Result<Vec<SeedPredictions>> {
    if cfg.seeds.is_empty() {
        return Err(Error::usage("few-shot evaluation needs at least one seed"));
    }
    let eval_mask = head_mask_array(model, mask)?;
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let split = split_fewshot(test, dev, cfg.shots, seed)?;
        let params = fewshot_adapt(model, &split.shots, mask, cfg)?;
        let predictions = model.arch.predict_all(&params, &split.eval, eval_mask.as_ref())?;
        out.push(SeedPredictions {
            seed,
            eval: split.eval,
            predictions,
        });
    }
    Ok(out)
}

/// Mean LAS/UAS over the seeds of [`fewshot_predict`].
pub fn fewshot_evaluate(
    model: &Model,
    test: &Treebank,
    dev: Option<&Treebank>,
    mask: Option<&HeadMask>,
    cfg: &FewshotConfig,
) -> Result<FewshotResult> {
    let runs = fewshot_predict(model, test, dev, mask, cfg)?;
    let per_seed = runs
        .iter()
        .map(|r| Ok((r.seed, attachment_scores(&r.predictions, &r.eval)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FewshotResult::from_seeds(&test.language, per_seed))
}

impl FewshotResult {
    pub fn from_seeds(language: &str, per_seed: Vec<(u64, AttachmentScores)>) -> Self {
        let n = per_seed.len().max(1) as f64;
        FewshotResult {
            language: language.to_string(),
            mean_las: per_seed.iter().map(|(_, s)| s.las()).sum::<f64>() / n,
            mean_uas: per_seed.iter().map(|(_, s)| s.uas()).sum::<f64>() / n,
            per_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{tiny_model, toy_treebanks};
    use crate::treebank::Split;

    fn setup() -> (Model, Treebank) {
        let tbs = toy_treebanks(30);
        let arch = tiny_model(&tbs, 2, 2, 8);
        let model = Model::new(arch, 1);
        let test = Treebank::new("l1", Split::Test, tbs[1].sentences.clone()).unwrap();
        (model, test)
    }

    #[test]
    fn shots_come_out_of_the_test_set_without_dev() {
        let (_, test) = setup();
        let s = split_fewshot(&test, None, 20, 3).unwrap();
        assert_eq!(s.shots.len(), 20);
        assert_eq!(s.eval.len(), test.len() - 20);
        for shot in &s.shots {
            assert!(!s.eval.iter().any(|e| e.source_id == shot.source_id));
        }
        assert!(split_fewshot(&test, None, 30, 0).is_err());
        let dev = Treebank::new("l1", Split::Dev, test.sentences[..25].to_vec()).unwrap();
        let s = split_fewshot(&test, Some(&dev), 20, 3).unwrap();
        assert_eq!(s.eval.len(), test.len());
    }

    #[test]
    fn zero_steps_is_zero_shot() {
        let (model, test) = setup();
        let cfg = FewshotConfig {
            steps: 0,
            seeds: vec![0, 1],
            ..FewshotConfig::default()
        };
        let r = fewshot_evaluate(&model, &test, None, None, &cfg).unwrap();
        for (seed, scores) in &r.per_seed {
            let split = split_fewshot(&test, None, 20, *seed).unwrap();
            assert_eq!(*scores, model.evaluate(&split.eval, None).unwrap());
        }
    }

    #[test]
    fn adaptation_respects_the_mask() {
        let (model, test) = setup();
        let mut bits = ndarray::Array2::ones((2, 2));
        bits[(0, 1)] = 0;
        let mask = HeadMask::from_bits("l1", bits).unwrap();
        let cfg = FewshotConfig {
            steps: 3,
            lrs: GroupLrs::new(0.05, 0.05),
            ..FewshotConfig::default()
        };
        let adapted = fewshot_adapt(&model, &test.sentences[..5], Some(&mask), &cfg).unwrap();
        let frozen = model.arch.layout.head_indices(0, 1);
        assert!(frozen.iter().all(|&i| adapted[i] == model.params[i]));
        assert_ne!(adapted, model.params);
    }
}
