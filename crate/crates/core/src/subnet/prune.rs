//! Importance-based head pruning and unstructured magnitude pruning.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{union_masks, HeadMask, MaskProvenance, WeightMask};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::trainers::{supervised_train, ActiveMask, Objective, SupervisedConfig};
use crate::treebank::{sample_indices, Sentence};

/// Mean absolute mask-variable gradient per head.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMatrix {
    pub scores: Array2<f64>,
    /// Heads enabled in the mask the scores were computed under.
    pub active: Array2<bool>,
}

/// Averages |∂loss/∂ξ| over `data`, with the mask variables held at the
/// values of `mask`.
pub fn head_importance<O: Objective>(obj: &O, params: &[f64], data: &[O::Example], mask: &HeadMask) -> Result<ImportanceMatrix> {
    if data.is_empty() {
        return Err(Error::usage("head importance needs at least one sentence"));
    }
    let shape = obj.mask_shape();
    mask.check_shape(shape)?;
    let m = mask.as_f64();
    let mut grad = vec![0.0; obj.n_params()];
    let mut scores = Array2::zeros(shape);
    let mut mg = Array2::zeros(shape);
    for ex in data {
        mg.fill(0.0);
        obj.loss_grad(params, ex, Some(&m), &mut grad, &mut mg)?;
        scores.zip_mut_with(&mg, |s: &mut f64, g| *s += g.abs());
    }
    scores.mapv_inplace(|s| s / data.len() as f64);
    Ok(ImportanceMatrix {
        scores,
        active: mask.bits.mapv(|b| b == 1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub rate: f64,
    pub stop_ratio: f64,
    /// Fine-tuning applied to the shared model before pruning (0 epochs
    /// prunes the given model as is).
    pub finetune: SupervisedConfig,
    /// Training sentences used per importance estimate; `None` uses all.
    pub importance_sample: Option<usize>,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::usage(format!("prune rate {} must lie in (0, 1]", self.rate)));
        }
        if !(0.0..=1.0).contains(&self.stop_ratio) {
            return Err(Error::usage(format!("stop ratio {} must lie in [0, 1]", self.stop_ratio)));
        }
        Ok(())
    }
}

/// Units removed per iteration: ⌊rate · total⌋, at least 1.
pub fn units_per_iteration(total: usize, rate: f64) -> usize {
    ((rate * total as f64 + 1e-9).floor() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningStep {
    pub removed: Vec<(usize, usize)>,
    pub dev_las: f64,
    pub ratio: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruningTrace {
    pub iterations: Vec<PruningStep>,
}

#[derive(Clone, Debug)]
pub struct PruneResult {
    pub mask: HeadMask,
    pub trace: PruningTrace,
    pub original_dev_las: f64,
    /// Dev LAS of the returned mask.
    pub dev_las: f64,
    /// The fine-tuned parameters the mask was found for.
    pub params: Vec<f64>,
}

fn ratio(las: f64, original: f64) -> f64 {
    if original > 0.0 {
        las / original
    } else {
        1.0
    }
}

fn finetune(model: &Model, train: &[Sentence], dev: &[Sentence], cfg: &PruneConfig) -> Result<(Vec<f64>, Vec<crate::model::Example>)> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(Error::usage("pruning needs a nonempty development set"));
    }
    if train.is_empty() {
        return Err(Error::usage("pruning needs a nonempty training set"));
    }
    let examples = model.arch.examples(train)?;
    let mut params = model.params.clone();
    supervised_train(&model.arch, &mut params, &examples, &ActiveMask::None, &cfg.finetune)?;
    Ok((params, examples))
}

/// Fine-tunes the shared model on the language, then repeatedly disables
/// the lowest-importance active heads until dev LAS would fall below
/// `stop_ratio` of the unpruned fine-tuned model. The failing iteration is
/// recorded and rolled back.
pub fn iterative_prune(lang: &str, model: &Model, train: &[Sentence], dev: &[Sentence], cfg: &PruneConfig) -> Result<PruneResult> {
    let (params, examples) = finetune(model, train, dev, cfg)?;
    let arch = &model.arch;
    let (n_layers, n_heads) = arch.mask_shape();
    let total = n_layers * n_heads;
    let per_iter = units_per_iteration(total, cfg.rate);
    let original = arch.evaluate(&params, dev, None)?.las();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.finetune.seed ^ 0x5eed_9e37);
    let mut mask = HeadMask::all_enabled(lang, n_layers, n_heads);
    let mut current_las = original;
    let mut trace = PruningTrace::default();
    while mask.n_enabled() > per_iter {
        let sample: Vec<_> = match cfg.importance_sample {
            Some(n) if n < examples.len() => sample_indices(&mut rng, examples.len(), n, true)?
                .into_iter()
                .map(|i| examples[i].clone())
                .collect(),
            _ => examples.clone(),
        };
        let hi = head_importance(arch, &params, &sample, &mask)?;
        let mut order: Vec<usize> = (0..total).filter(|&i| mask.bits[(i / n_heads, i % n_heads)] == 1).collect();
        let flat: Vec<f64> = hi.scores.iter().copied().collect();
        order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]).then(a.cmp(&b)));
        let mut candidate = mask.clone();
        let mut removed = Vec::with_capacity(per_iter);
        for &i in &order[..per_iter] {
            let pos = (i / n_heads, i % n_heads);
            candidate.bits[pos] = 0;
            removed.push(pos);
        }
        removed.sort_unstable();
        let las = arch.evaluate(&params, dev, Some(&candidate.as_f64()))?.las();
        let accepted = las >= cfg.stop_ratio * original;
        trace.iterations.push(PruningStep {
            removed,
            dev_las: las,
            ratio: ratio(las, original),
            accepted,
        });
        if !accepted {
            break;
        }
        log::debug!("{lang}: {} heads active, dev LAS {las:.2}", candidate.n_enabled());
        mask = candidate;
        current_las = las;
    }
    Ok(PruneResult {
        mask,
        trace,
        original_dev_las: original,
        dev_las: current_las,
        params,
    })
}

/// Per-seed pruning runs (fine-tuning included) united into one mask.
pub fn discover_mask(
    lang: &str,
    model: &Model,
    train: &[Sentence],
    dev: &[Sentence],
    cfg: &PruneConfig,
    seeds: &[u64],
) -> Result<(HeadMask, Vec<PruneResult>, MaskProvenance)> {
    if seeds.is_empty() {
        return Err(Error::usage("mask discovery needs at least one seed"));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.finetune.seed = seed;
        runs.push(iterative_prune(lang, model, train, dev, &c)?);
    }
    let masks: Vec<HeadMask> = runs.iter().map(|r| r.mask.clone()).collect();
    let mut union = union_masks(&masks)?;
    union.language = lang.to_string();
    let provenance = MaskProvenance {
        seeds: seeds.to_vec(),
        stop_ratio: cfg.stop_ratio,
        prune_rate: cfg.rate,
        dev_las: runs.iter().map(|r| r.dev_las).collect(),
        original_dev_las: runs.iter().map(|r| r.original_dev_las).collect(),
    };
    Ok((union, runs, provenance))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightPruningStep {
    pub n_removed: usize,
    pub dev_las: f64,
    pub ratio: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct WeightPruneResult {
    pub mask: WeightMask,
    pub trace: Vec<WeightPruningStep>,
    pub original_dev_las: f64,
    pub dev_las: f64,
    pub params: Vec<f64>,
}

/// Same loop as [`iterative_prune`] with single attention-projection
/// weights as the unit, ranked by magnitude of the fine-tuned weights.
/// Embedding, feed-forward, normalization and classifier parameters are
/// never eligible.
pub fn magnitude_prune(lang: &str, model: &Model, train: &[Sentence], dev: &[Sentence], cfg: &PruneConfig) -> Result<WeightPruneResult> {
    let (params, _) = finetune(model, train, dev, cfg)?;
    let arch = &model.arch;
    let mut eligible = arch.layout.attention_weight_indices();
    eligible.sort_by(|&a, &b| params[a].abs().total_cmp(&params[b].abs()).then(a.cmp(&b)));
    let per_iter = units_per_iteration(eligible.len(), cfg.rate);
    let original = arch.evaluate(&params, dev, None)?.las();
    let mut kept = 0;
    let mut current_las = original;
    let mut trace = Vec::new();
    while eligible.len() - kept > per_iter {
        let n = kept + per_iter;
        let mut pruned_params = params.clone();
        for &i in &eligible[..n] {
            pruned_params[i] = 0.0;
        }
        let las = arch.evaluate(&pruned_params, dev, None)?.las();
        let accepted = las >= cfg.stop_ratio * original;
        trace.push(WeightPruningStep {
            n_removed: per_iter,
            dev_las: las,
            ratio: ratio(las, original),
            accepted,
        });
        if !accepted {
            break;
        }
        kept = n;
        current_las = las;
    }
    let mut pruned = eligible[..kept].to_vec();
    pruned.sort_unstable();
    Ok(WeightPruneResult {
        mask: WeightMask {
            language: lang.to_string(),
            n_params: params.len(),
            pruned,
        },
        trace,
        original_dev_las: original,
        dev_las: current_las,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Group;
    use crate::model::{Example, ParserModel};
    use crate::testutil::{tiny_model, toy_treebanks};
    use crate::trainers::{GroupLrs, Schedule};
    use crate::treebank::Treebank;

    fn setup(layers: usize, heads: usize) -> (ParserModel, Vec<Treebank>, Vec<f64>) {
        let tbs = toy_treebanks(12);
        let model = tiny_model(&tbs, layers, heads, 8);
        let params = model.init_params(3);
        (model, tbs, params)
    }

    fn no_finetune() -> SupervisedConfig {
        SupervisedConfig {
            epochs: 0,
            batch_size: 4,
            lrs: GroupLrs::new(1e-3, 1e-2),
            weight_decay: 0.0,
            warmup_fraction: 0.0,
            schedule: Schedule::Constant,
            freeze_encoder_first_epoch: false,
            seed: 0,
        }
    }

    #[test]
    fn importance_matches_one_sided_differences() {
        let (model, tbs, params) = setup(2, 2);
        let data: Vec<Example> = model.examples(&tbs[0].sentences[..4]).unwrap();
        let mask = HeadMask::all_enabled("l0", 2, 2);
        let hi = head_importance(&model, &params, &data, &mask).unwrap();
        let eps = 1e-4;
        for l in 0..2 {
            for h in 0..2 {
                let mut fd = 0.0;
                for ex in &data {
                    let m = mask.as_f64();
                    let mut scaled = m.clone();
                    scaled[(l, h)] *= 1.0 - eps;
                    let a = model.loss(&params, ex, Some(&m)).unwrap();
                    let b = model.loss(&params, ex, Some(&scaled)).unwrap();
                    fd += ((a - b) / eps).abs();
                }
                fd /= data.len() as f64;
                let got = hi.scores[(l, h)];
                assert!((got - fd).abs() <= 1e-3 * fd.max(1e-8), "head ({l},{h}): {got} vs {fd}");
            }
        }
        assert!(hi.scores.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn silent_head_has_zero_importance_and_duplicates_do_not_matter() {
        let (model, tbs, mut params) = setup(2, 2);
        let wo = model.layout.find("layer1.attention.output.weight").unwrap().clone();
        let d = wo.shape[0];
        let dh = d / 2;
        for r in 0..dh {
            for c in 0..d {
                params[wo.offset + r * d + c] = 0.0;
            }
        }
        let data = model.examples(&tbs[1].sentences[..3]).unwrap();
        let mask = HeadMask::all_enabled("l1", 2, 2);
        let hi = head_importance(&model, &params, &data, &mask).unwrap();
        assert_eq!(hi.scores[(1, 0)], 0.0);
        assert!(hi.scores[(1, 1)] > 0.0);
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let hi2 = head_importance(&model, &params, &doubled, &mask).unwrap();
        for (a, b) in hi.scores.iter().zip(&hi2.scores) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
        assert!(matches!(head_importance(&model, &params, &[], &mask), Err(Error::Usage(_))));
    }

    #[test]
    fn unbounded_pruning_runs_to_the_last_batch() {
        let (model, tbs, params) = setup(4, 4);
        let shared = Model { arch: model, params };
        let cfg = PruneConfig {
            rate: 0.10,
            stop_ratio: 0.0,
            finetune: no_finetune(),
            importance_sample: Some(5),
        };
        let r = iterative_prune("l0", &shared, &tbs[0].sentences[..8], &tbs[0].sentences[8..], &cfg).unwrap();
        // ⌊0.1 · 16⌋ = 1 head per iteration until a single head is left.
        assert_eq!(r.trace.iterations.len(), 15);
        assert_eq!(r.mask.n_enabled(), 1);
        let mut seen = std::collections::BTreeSet::new();
        for step in &r.trace.iterations {
            assert_eq!(step.removed.len(), 1);
            assert!(step.accepted);
            for h in &step.removed {
                assert!(seen.insert(*h));
            }
        }
        let empty: Vec<Sentence> = Vec::new();
        assert!(matches!(
            iterative_prune("l0", &shared, &tbs[0].sentences[..8], &empty, &cfg),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn stop_rule_rolls_back_the_failing_iteration() {
        let (model, tbs, params) = setup(4, 4);
        let shared = Model { arch: model, params };
        let cfg = PruneConfig {
            rate: 0.25,
            stop_ratio: 1.0,
            finetune: no_finetune(),
            importance_sample: None,
        };
        let r = iterative_prune("l1", &shared, &tbs[1].sentences[..6], &tbs[1].sentences[6..], &cfg).unwrap();
        assert!(r.dev_las >= cfg.stop_ratio * r.original_dev_las);
        let accepted = r.trace.iterations.iter().filter(|s| s.accepted).count();
        assert_eq!(r.mask.n_disabled(), 4 * accepted);
        if let Some(last) = r.trace.iterations.last() {
            if !last.accepted {
                assert!(last.dev_las < r.original_dev_las);
                assert!(last.removed.iter().all(|&(l, h)| r.mask.is_enabled(l, h)));
            }
        }
        let check = shared.arch.evaluate(&r.params, &tbs[1].sentences[6..], Some(&r.mask.as_f64())).unwrap();
        assert_eq!(check.las(), r.dev_las);
    }

    #[test]
    fn union_of_seeds_contains_every_run() {
        let (model, tbs, params) = setup(2, 4);
        let shared = Model { arch: model, params };
        let mut finetune = no_finetune();
        finetune.epochs = 1;
        let cfg = PruneConfig {
            rate: 0.10,
            stop_ratio: 0.9,
            finetune,
            importance_sample: Some(4),
        };
        let (union, runs, prov) = discover_mask("l0", &shared, &tbs[0].sentences[..8], &tbs[0].sentences[8..], &cfg, &[0, 1, 2]).unwrap();
        assert_eq!(runs.len(), 3);
        assert_eq!(prov.seeds, vec![0, 1, 2]);
        for r in &runs {
            assert!(r.mask.enabled().is_subset(&union.enabled()));
        }
        let expect = union_masks(&runs.iter().map(|r| r.mask.clone()).collect::<Vec<_>>()).unwrap();
        assert_eq!(expect.bits, union.bits);
    }

    #[test]
    fn magnitude_pruning_only_touches_attention_projections() {
        let (model, tbs, mut params) = setup(2, 2);
        let eligible = model.layout.attention_weight_indices();
        for &i in &eligible {
            params[i] = 0.5;
        }
        let shared = Model { arch: model, params };
        let cfg = PruneConfig {
            rate: 0.10,
            stop_ratio: 0.0,
            finetune: no_finetune(),
            importance_sample: None,
        };
        let r = magnitude_prune("l0", &shared, &tbs[0].sentences[..6], &tbs[0].sentences[6..], &cfg).unwrap();
        let per = units_per_iteration(eligible.len(), 0.10);
        assert_eq!(per, eligible.len() / 10);
        assert!(r.trace.iter().all(|s| s.n_removed == per && s.accepted));
        assert_eq!(r.mask.pruned.len(), per * r.trace.len());
        // Equal magnitudes: lowest flat indices go first.
        let mut sorted = eligible.clone();
        sorted.sort_unstable();
        assert_eq!(r.mask.pruned, sorted[..r.mask.pruned.len()].to_vec());
        let dense = r.mask.dense();
        let layout = &shared.arch.layout;
        for t in layout.tensors().iter().filter(|t| t.group == Group::Classifier || t.name.contains("ffn") || t.name.starts_with("embeddings")) {
            assert!(t.range().all(|i| dense[i] == 1.0), "{}", t.name);
        }
        assert_eq!(r.params, shared.params);
    }
}
