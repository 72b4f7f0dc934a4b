//! Supervised, multilingual non-episodic and first-order MAML training,
//! few-shot adaptation and typology-based transfer selection.

mod fewshot;
mod objective;
mod optim;
mod trace;

use std::ops::Range;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::cosine;
use crate::error::{Error, Result};
use crate::layout::Group;
use crate::model::Model;
use crate::subnet::{ste_backward, LangMask, SoftMask};
use crate::treebank::{sample_indices, BatchSampler, LanguageMeta, Treebank};

pub use fewshot::{
    fewshot_adapt, fewshot_evaluate, fewshot_predict, split_fewshot, FewshotConfig, FewshotResult, FewshotSplit, SeedPredictions,
};
pub use objective::{batch_grad, ActiveMask, BatchGrad, Objective};
pub use optim::{lr_factor, sgd_step, Adam, GroupLrs, Optimizer, OptimizerKind, Schedule};
pub use trace::{IterationRecord, RunTrace};

/// Hyperparameters of the two-stage non-episodic regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage1_batch: usize,
    pub stage2_iterations: usize,
    pub per_language_batch: usize,
    pub encoder_lr: f64,
    pub classifier_lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub schedule: Schedule,
    /// Stage-2 optimizer (stage 1 always uses Adam).
    pub optimizer: OptimizerKind,
    pub gradual_unfreeze_first_epoch: bool,
    pub seed: u64,
    /// Keep every n-th gradient coordinate in the trace (0 keeps none).
    pub trace_grad_stride: usize,
    pub keep_fraction: f64,
    pub soft_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 60,
            stage1_batch: 32,
            stage2_iterations: 1000,
            per_language_batch: 20,
            encoder_lr: 1e-4,
            classifier_lr: 1e-3,
            weight_decay: 0.01,
            warmup_fraction: 0.10,
            schedule: Schedule::Cosine,
            optimizer: OptimizerKind::Adam,
            gradual_unfreeze_first_epoch: true,
            seed: 0,
            trace_grad_stride: 0,
            keep_fraction: SoftMask::DEFAULT_KEEP,
            soft_init: SoftMask::DEFAULT_INIT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.encoder_lr > 0.0 && self.classifier_lr > 0.0) {
            return Err(Error::usage("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::usage("warmup_fraction must lie in [0, 1)"));
        }
        if self.per_language_batch == 0 || self.stage1_batch == 0 {
            return Err(Error::usage("batch sizes must be at least 1"));
        }
        Ok(())
    }

    pub fn lrs(&self) -> GroupLrs {
        GroupLrs::new(self.encoder_lr, self.classifier_lr)
    }
}

/// Hyperparameters of masked first-order MAML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub episodes: usize,
    /// Support and query set size N.
    pub shots: usize,
    /// Inner gradient steps k.
    pub inner_steps: usize,
    pub inner_lr_encoder: f64,
    pub inner_lr_classifier: f64,
    pub outer_lr_encoder: f64,
    pub outer_lr_classifier: f64,
    pub outer_optimizer: OptimizerKind,
    pub first_order: bool,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub trace_grad_stride: usize,
    pub keep_fraction: f64,
    pub soft_init: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            episodes: 500,
            shots: 20,
            inner_steps: 20,
            inner_lr_encoder: 1e-5,
            inner_lr_classifier: 5e-4,
            outer_lr_encoder: 1e-4,
            outer_lr_classifier: 1e-3,
            outer_optimizer: OptimizerKind::Adam,
            first_order: true,
            weight_decay: 0.01,
            warmup_fraction: 0.10,
            schedule: Schedule::Cosine,
            seed: 0,
            trace_grad_stride: 0,
            keep_fraction: SoftMask::DEFAULT_KEEP,
            soft_init: SoftMask::DEFAULT_INIT,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.shots == 0 || self.inner_steps == 0 {
            return Err(Error::usage("episodes, shots and inner steps must be at least 1"));
        }
        if self.inner_lr_encoder < 0.0 || self.inner_lr_classifier < 0.0 {
            return Err(Error::usage("inner learning rates must be nonnegative"));
        }
        if !(self.outer_lr_encoder > 0.0 && self.outer_lr_classifier > 0.0) {
            return Err(Error::usage("outer learning rates must be positive"));
        }
        if !self.first_order {
            return Err(Error::usage("only the first-order meta-gradient is implemented"));
        }
        Ok(())
    }

    pub fn inner_lrs(&self) -> GroupLrs {
        GroupLrs::new(self.inner_lr_encoder, self.inner_lr_classifier)
    }

    pub fn outer_lrs(&self) -> GroupLrs {
        GroupLrs::new(self.outer_lr_encoder, self.outer_lr_classifier)
    }
}

/// Plain supervised training on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lrs: GroupLrs,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub schedule: Schedule,
    pub freeze_encoder_first_epoch: bool,
    pub seed: u64,
}

impl SupervisedConfig {
    pub fn stage1(cfg: &TrainConfig) -> Self {
        SupervisedConfig {
            epochs: cfg.stage1_epochs,
            batch_size: cfg.stage1_batch,
            lrs: cfg.lrs(),
            weight_decay: cfg.weight_decay,
            warmup_fraction: cfg.warmup_fraction,
            schedule: cfg.schedule,
            freeze_encoder_first_epoch: cfg.gradual_unfreeze_first_epoch,
            seed: cfg.seed,
        }
    }
}

fn without_encoder(groups: &[(Range<usize>, Group)]) -> Vec<(Range<usize>, Group)> {
    groups.iter().filter(|(_, g)| *g != Group::Encoder).cloned().collect()
}

/// Mini-batch Adam over `examples`; returns the mean training loss of each
/// epoch (measured during the epoch).
pub fn supervised_train<O: Objective>(
    obj: &O,
    params: &mut [f64],
    examples: &[O::Example],
    mask: &ActiveMask,
    cfg: &SupervisedConfig,
) -> Result<Vec<f64>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if examples.is_empty() {
        return Err(Error::usage("cannot train on an empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    let groups = obj.groups();
    let frozen = without_encoder(&groups);
    let per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut adam = Adam::new(obj.n_params(), cfg.weight_decay);
    let mut sampler = BatchSampler::new(examples.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..per_epoch {
            let idx = sampler.next_batch(cfg.batch_size);
            let batch: Vec<&O::Example> = idx.iter().map(|&i| &examples[i]).collect();
            let bg = batch_grad(obj, params, &batch, mask)?;
            sum += bg.loss * batch.len() as f64;
            let lrs = cfg.lrs.scaled(lr_factor(cfg.schedule, cfg.warmup_fraction, step, total));
            let active = if epoch == 0 && cfg.freeze_encoder_first_epoch {
                &frozen
            } else {
                &groups
            };
            adam.step(params, &bg.grad, active, lrs);
            step += 1;
        }
        losses.push(sum / examples.len() as f64);
    }
    Ok(losses)
}

/// Stage 1: unmasked training on the English treebank.
pub fn train_stage1(model: &mut Model, treebank: &Treebank, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if treebank.is_empty() {
        return Err(Error::usage("stage 1 treebank is empty"));
    }
    cfg.validate()?;
    let examples = model.arch.examples(&treebank.sentences)?;
    supervised_train(&model.arch, &mut model.params, &examples, &ActiveMask::None, &SupervisedConfig::stage1(cfg))
}

/// One training language: its examples and optional mask. Dynamic masks are
/// updated in place.
#[derive(Clone, Debug)]
pub struct TaskData<E> {
    pub code: String,
    pub examples: Vec<E>,
    pub mask: Option<LangMask>,
}

fn mask_kind_name<E>(tasks: &[TaskData<E>]) -> Result<&'static str> {
    let present = tasks.iter().filter(|t| t.mask.is_some()).count();
    if present != 0 && present != tasks.len() {
        return Err(Error::usage("masks must be given for every language or for none"));
    }
    let names: Vec<&'static str> = tasks
        .iter()
        .map(|t| match &t.mask {
            None => "none",
            Some(LangMask::Static(_)) => "static",
            Some(LangMask::Dynamic(_)) => "dynamic",
            Some(LangMask::Weights(_)) => "weights",
        })
        .collect();
    if names.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::usage("all languages must use the same kind of mask"));
    }
    Ok(names.first().copied().unwrap_or("none"))
}

/// Forward-pass mask for a language.
pub fn active_mask(mask: Option<&LangMask>, shape: (usize, usize)) -> Result<ActiveMask> {
    Ok(match mask {
        None => ActiveMask::None,
        Some(LangMask::Weights(w)) => ActiveMask::Weights(w.dense()),
        Some(m) => {
            let hm = m.head_mask().expect("head-level mask");
            hm.check_shape(shape)?;
            ActiveMask::Heads(hm.as_f64())
        }
    })
}

/// Mask-variable gradient handed to a soft mask: the straight-through
/// estimate of ∂loss/∂weights, given ∂loss/∂(binary mask).
pub fn soft_mask_gradient(mask_grad_at_binary: &Array2<f64>) -> Array2<f64> {
    ste_backward(mask_grad_at_binary)
}

struct SoftState {
    adams: Vec<Option<Adam>>,
}

impl SoftState {
    fn new<E>(tasks: &[TaskData<E>]) -> Self {
        SoftState {
            adams: tasks
                .iter()
                .map(|t| match &t.mask {
                    Some(LangMask::Dynamic(s)) => Some(Adam::new(s.weights.len(), 0.0)),
                    _ => None,
                })
                .collect(),
        }
    }

    /// Updates every soft mask with its language's share of the mean-loss
    /// gradient and returns the re-binarized bits when any mask is dynamic.
    fn update<E>(&mut self, tasks: &mut [TaskData<E>], mask_grads: &[Array2<f64>], lr: f64) -> Option<Vec<Vec<u8>>> {
        let n = tasks.len() as f64;
        let mut any = false;
        for ((task, adam), g) in tasks.iter_mut().zip(&mut self.adams).zip(mask_grads) {
            if let (Some(LangMask::Dynamic(soft)), Some(adam)) = (&mut task.mask, adam.as_mut()) {
                any = true;
                let grad = soft_mask_gradient(g).mapv(|v| v / n);
                let w = soft.weights.as_slice_mut().expect("contiguous");
                adam.step_plain(w, grad.as_slice().expect("contiguous"), lr);
            }
        }
        any.then(|| {
            tasks
                .iter()
                .map(|t| match &t.mask {
                    Some(m) => m.head_mask().map(|h| h.bits.iter().copied().collect()).unwrap_or_default(),
                    None => Vec::new(),
                })
                .collect()
        })
    }
}

fn record(
    iteration: usize,
    lrs: GroupLrs,
    losses: Vec<f64>,
    grads: &[Vec<f64>],
    stride: usize,
    masks: Option<Vec<Vec<u8>>>,
) -> IterationRecord {
    let grad_norms = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut cosines = Vec::new();
    for i in 0..grads.len() {
        for j in i + 1..grads.len() {
            cosines.push(cosine(&grads[i], &grads[j]));
        }
    }
    let grad_samples = (stride > 0).then(|| grads.iter().map(|g| g.iter().step_by(stride).copied().collect()).collect());
    IterationRecord {
        iteration,
        lr_encoder: lrs.encoder,
        lr_classifier: lrs.classifier,
        losses,
        grad_norms,
        cosines,
        grad_samples,
        masks,
    }
}

fn mean_of(grads: &[Vec<f64>]) -> Vec<f64> {
    let n = grads.len() as f64;
    let mut out = vec![0.0; grads[0].len()];
    for g in grads {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Stage 2: every iteration draws a batch per language (with replacement),
/// computes each language's gradient under its own mask, and applies one
/// Adam step with the mean gradient.
pub fn train_stage2<O: Objective>(
    obj: &O,
    params: &mut [f64],
    tasks: &mut [TaskData<O::Example>],
    cfg: &TrainConfig,
) -> Result<RunTrace> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::usage("stage 2 needs at least one language"));
    }
    let kind = mask_kind_name(tasks)?;
    if let Some(t) = tasks.iter().find(|t| t.examples.is_empty()) {
        return Err(Error::usage(format!("no training data for {}", t.code)));
    }
    let groups = obj.groups();
    let shape = obj.mask_shape();
    let mut trace = RunTrace::new("nonep", kind, tasks.iter().map(|t| t.code.clone()).collect());
    let mut opt = Optimizer::new(cfg.optimizer, obj.n_params(), cfg.weight_decay);
    let mut soft = SoftState::new(tasks);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for it in 0..cfg.stage2_iterations {
        let lrs = cfg.lrs().scaled(lr_factor(cfg.schedule, cfg.warmup_fraction, it, cfg.stage2_iterations));
        let mut losses = Vec::with_capacity(tasks.len());
        let mut grads = Vec::with_capacity(tasks.len());
        let mut mask_grads = Vec::with_capacity(tasks.len());
        for task in tasks.iter() {
            let idx = sample_indices(&mut rng, task.examples.len(), cfg.per_language_batch, false)?;
            let batch: Vec<&O::Example> = idx.iter().map(|&i| &task.examples[i]).collect();
            let active = active_mask(task.mask.as_ref(), shape)?;
            let bg = batch_grad(obj, params, &batch, &active)?;
            losses.push(bg.loss);
            grads.push(bg.grad);
            mask_grads.push(bg.mask_grad);
        }
        opt.step(params, &mean_of(&grads), &groups, lrs);
        let snapshots = soft.update(tasks, &mask_grads, lrs.encoder);
        trace
            .iterations
            .push(record(it, lrs, losses, &grads, cfg.trace_grad_stride, snapshots));
    }
    Ok(trace)
}

/// Support and query indices of one episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub language: String,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

impl Episode {
    /// Draws 2N distinct sentences; the first N form the support set.
    pub fn sample(language: &str, n_sentences: usize, shots: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut idx = sample_indices(rng, n_sentences, 2 * shots, true)?;
        let query = idx.split_off(shots);
        let ep = Episode {
            language: language.to_string(),
            support: idx,
            query,
        };
        ep.check()?;
        Ok(ep)
    }

    pub fn check(&self) -> Result<()> {
        if self.support.iter().any(|i| self.query.contains(i)) {
            return Err(Error::contract(format!("support and query sets overlap for {}", self.language)));
        }
        Ok(())
    }
}

/// Masked first-order MAML. Per episode and language: copy θ, adapt the
/// copy with k plain gradient steps on the support set under the
/// language's mask, take the query gradient at the adapted copy. The outer
/// step applies the mean of the query gradients to θ.
pub fn meta_train<O: Objective>(
    obj: &O,
    params: &mut [f64],
    tasks: &mut [TaskData<O::Example>],
    cfg: &MetaConfig,
) -> Result<RunTrace> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::usage("meta-training needs at least one language"));
    }
    let kind = mask_kind_name(tasks)?;
    for t in tasks.iter() {
        if t.examples.len() < 2 * cfg.shots {
            return Err(Error::usage(format!(
                "{} has {} sentences; an episode needs {}",
                t.code,
                t.examples.len(),
                2 * cfg.shots
            )));
        }
    }
    let groups = obj.groups();
    let shape = obj.mask_shape();
    let mut trace = RunTrace::new("meta", kind, tasks.iter().map(|t| t.code.clone()).collect());
    let mut outer = Optimizer::new(cfg.outer_optimizer, obj.n_params(), cfg.weight_decay);
    let mut soft = SoftState::new(tasks);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for ep in 0..cfg.episodes {
        let lrs = cfg.outer_lrs().scaled(lr_factor(cfg.schedule, cfg.warmup_fraction, ep, cfg.episodes));
        let mut losses = Vec::with_capacity(tasks.len());
        let mut grads = Vec::with_capacity(tasks.len());
        let mut mask_grads = Vec::with_capacity(tasks.len());
        for task in tasks.iter() {
            let episode = Episode::sample(&task.code, task.examples.len(), cfg.shots, &mut rng)?;
            let active = active_mask(task.mask.as_ref(), shape)?;
            let (loss, grad, mask_grad) = adapt_and_query(obj, params, &task.examples, &episode, &active, cfg.inner_steps, cfg.inner_lrs())?;
            losses.push(loss);
            grads.push(grad);
            mask_grads.push(mask_grad);
        }
        outer.step(params, &mean_of(&grads), &groups, lrs);
        let snapshots = soft.update(tasks, &mask_grads, lrs.encoder);
        trace
            .iterations
            .push(record(ep, lrs, losses, &grads, cfg.trace_grad_stride, snapshots));
    }
    Ok(trace)
}

/// Inner loop of one language: returns the query loss, the query gradient
/// at the adapted parameters, and the query mask gradient.
pub fn adapt_and_query<O: Objective>(
    obj: &O,
    theta: &[f64],
    examples: &[O::Example],
    episode: &Episode,
    mask: &ActiveMask,
    steps: usize,
    inner: GroupLrs,
) -> Result<(f64, Vec<f64>, Array2<f64>)> {
    episode.check()?;
    let groups = obj.groups();
    let mut phi = theta.to_vec();
    let support: Vec<&O::Example> = episode.support.iter().map(|&i| &examples[i]).collect();
    let query: Vec<&O::Example> = episode.query.iter().map(|&i| &examples[i]).collect();
    for _ in 0..steps {
        let bg = batch_grad(obj, &phi, &support, mask)?;
        sgd_step(&mut phi, &bg.grad, &groups, inner);
    }
    let q = batch_grad(obj, &phi, &query, mask)?;
    Ok((q.loss, q.grad, q.mask_grad))
}

/// Chosen transfer language for an unseen test language.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferChoice {
    pub code: String,
    pub cosine: f64,
    pub mask_path: Option<std::path::PathBuf>,
}

/// The training language whose typological vector is most cosine-similar
/// to the test language's; ties go to the lexicographically smaller code.
pub fn select_transfer_mask(test: &LanguageMeta, train: &[LanguageMeta]) -> Result<TransferChoice> {
    if train.is_empty() {
        return Err(Error::usage("no training languages to transfer from"));
    }
    let mut best: Option<TransferChoice> = None;
    for lang in train {
        if lang.typo_vector.len() != test.typo_vector.len() {
            return Err(Error::usage(format!("language vector of {} has a different length", lang.code)));
        }
        let c = cosine(&test.typo_vector, &lang.typo_vector)
            .ok_or_else(|| Error::usage(format!("zero language vector for {} or {}", test.code, lang.code)))?;
        let better = match &best {
            None => true,
            Some(b) => c > b.cosine || (c == b.cosine && lang.code < b.code),
        };
        if better {
            best = Some(TransferChoice {
                code: lang.code.clone(),
                cosine: c,
                mask_path: lang.mask_path.clone(),
            });
        }
    }
    Ok(best.expect("nonempty"))
}

/// Uniformly random training language, deterministic in `seed`.
pub fn random_transfer_language(train: &[LanguageMeta], seed: u64) -> Result<&LanguageMeta> {
    if train.is_empty() {
        return Err(Error::usage("no training languages to transfer from"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let i = sample_indices(&mut rng, train.len(), 1, false)?[0];
    Ok(&train[i])
}
