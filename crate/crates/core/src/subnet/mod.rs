//! Attention-head subnetworks: binary and soft masks, their file format,
//! ablation generators, and the pruning procedures that discover them.

mod prune;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use prune::{
    discover_mask, head_importance, iterative_prune, magnitude_prune, units_per_iteration, ImportanceMatrix, PruneConfig,
    PruneResult, PruningStep, PruningTrace, WeightPruneResult, WeightPruningStep,
};

/// Binary head mask: 1 keeps a head, 0 disables it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadMask {
    pub language: String,
    pub bits: Array2<u8>,
}

impl HeadMask {
    pub fn all_enabled(language: impl Into<String>, n_layers: usize, n_heads: usize) -> Self {
        HeadMask {
            language: language.into(),
            bits: Array2::ones((n_layers, n_heads)),
        }
    }

    pub fn from_bits(language: impl Into<String>, bits: Array2<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::contract("head mask entries must be 0 or 1"));
        }
        Ok(HeadMask {
            language: language.into(),
            bits,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bits.dim()
    }

    pub fn total(&self) -> usize {
        self.bits.len()
    }

    pub fn n_enabled(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn n_disabled(&self) -> usize {
        self.total() - self.n_enabled()
    }

    pub fn is_enabled(&self, layer: usize, head: usize) -> bool {
        self.bits[(layer, head)] == 1
    }

    /// Disabled heads as (layer, head) pairs in ascending order.
    pub fn disabled(&self) -> BTreeSet<(usize, usize)> {
        self.bits.indexed_iter().filter(|(_, &b)| b == 0).map(|(i, _)| i).collect()
    }

    pub fn enabled(&self) -> BTreeSet<(usize, usize)> {
        self.bits.indexed_iter().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect()
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.bits.mapv(f64::from)
    }

    pub fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::contract(format!(
                "mask for {} has shape {:?}, expected {:?}",
                self.language,
                self.shape(),
                shape
            )));
        }
        Ok(())
    }
}

/// Real-valued relaxation of a head mask, trained through a
/// straight-through estimator and binarized for every forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftMask {
    pub language: String,
    pub weights: Array2<f64>,
    pub keep_fraction: f64,
    pub init_value: f64,
}

impl SoftMask {
    pub const DEFAULT_INIT: f64 = 0.01;
    pub const DEFAULT_KEEP: f64 = 0.8;

    /// Enabled heads start at `init_value`, disabled ones at 0, so the first
    /// binarization reproduces the static mask whenever it disables at least
    /// the binarization quota.
    pub fn from_static(mask: &HeadMask, keep_fraction: f64, init_value: f64) -> Result<Self> {
        check_keep(keep_fraction)?;
        Ok(SoftMask {
            language: mask.language.clone(),
            weights: mask.bits.mapv(|b| if b == 1 { init_value } else { 0.0 }),
            keep_fraction,
            init_value,
        })
    }

    /// Independent uniform weights in (0, 2·init_value).
    pub fn random(language: impl Into<String>, shape: (usize, usize), keep_fraction: f64, init_value: f64, seed: u64) -> Result<Self> {
        check_keep(keep_fraction)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Array2::from_shape_simple_fn(shape, || init_value * (1.0 - rng.random::<f64>()) * 2.0);
        Ok(SoftMask {
            language: language.into(),
            weights,
            keep_fraction,
            init_value,
        })
    }

    pub fn binarize(&self) -> HeadMask {
        binarize(self)
    }
}

fn check_keep(keep: f64) -> Result<()> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::usage(format!("keep fraction {keep} must lie in (0, 1]")));
    }
    Ok(())
}

/// Number of heads zeroed by binarization.
pub fn n_binarize_zeros(total: usize, keep_fraction: f64) -> usize {
    // The small slack keeps e.g. (1 - 0.8) * 144 = 28.799.. from rounding
    // below an exact integer product.
    ((1.0 - keep_fraction) * total as f64 + 1e-9).floor() as usize
}

/// Zeroes the ⌊(1−keep)·total⌋ smallest weights; ties go to the lower
/// (layer, head) index first.
pub fn binarize(soft: &SoftMask) -> HeadMask {
    let total = soft.weights.len();
    let zeros = n_binarize_zeros(total, soft.keep_fraction);
    let flat: Vec<f64> = soft.weights.iter().copied().collect();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]).then(a.cmp(&b)));
    let mut bits = Array2::ones(soft.weights.dim());
    let cols = soft.weights.ncols();
    for &i in &order[..zeros] {
        bits[(i / cols, i % cols)] = 0;
    }
    HeadMask {
        language: soft.language.clone(),
        bits,
    }
}

/// Straight-through estimator: the gradient at the binary mask is passed to
/// the soft weights unchanged.
pub fn ste_backward(grad_at_binary: &Array2<f64>) -> Array2<f64> {
    grad_at_binary.clone()
}

/// A head is enabled in the union iff it is enabled in any input.
pub fn union_masks(masks: &[HeadMask]) -> Result<HeadMask> {
    let first = masks.first().ok_or_else(|| Error::usage("union of zero masks"))?;
    let mut bits = first.bits.clone();
    for m in &masks[1..] {
        if m.shape() != first.shape() {
            return Err(Error::contract(format!(
                "cannot unite masks of shapes {:?} and {:?}",
                first.shape(),
                m.shape()
            )));
        }
        bits.zip_mut_with(&m.bits, |a, &b| *a |= b);
    }
    Ok(HeadMask {
        language: first.language.clone(),
        bits,
    })
}

/// Individual parameters switched off by unstructured pruning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightMask {
    pub language: String,
    pub n_params: usize,
    /// Sorted flat indices of pruned parameters.
    pub pruned: Vec<usize>,
}

impl WeightMask {
    pub fn dense(&self) -> Vec<f64> {
        let mut m = vec![1.0; self.n_params];
        for &i in &self.pruned {
            m[i] = 0.0;
        }
        m
    }
}

/// Which mask a language trains under.
#[derive(Clone, Debug, PartialEq)]
pub enum LangMask {
    Static(HeadMask),
    Dynamic(SoftMask),
    Weights(WeightMask),
}

impl LangMask {
    pub fn language(&self) -> &str {
        match self {
            LangMask::Static(m) => &m.language,
            LangMask::Dynamic(m) => &m.language,
            LangMask::Weights(m) => &m.language,
        }
    }

    /// Head mask used by the forward pass (binarized for soft masks).
    pub fn head_mask(&self) -> Option<HeadMask> {
        match self {
            LangMask::Static(m) => Some(m.clone()),
            LangMask::Dynamic(m) => Some(m.binarize()),
            LangMask::Weights(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskProvenance {
    pub seeds: Vec<u64>,
    pub stop_ratio: f64,
    pub prune_rate: f64,
    /// Development LAS of each seed's returned mask.
    pub dev_las: Vec<f64>,
    /// Unpruned development LAS of each seed's fine-tuned model.
    #[serde(default)]
    pub original_dev_las: Vec<f64>,
}

/// On-disk mask description (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub language: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub bits: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub provenance: MaskProvenance,
    /// Pruned parameter indices for unstructured masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruned_weights: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_params: Option<usize>,
}

impl MaskFile {
    pub fn from_head_mask(mask: &HeadMask, provenance: MaskProvenance) -> Self {
        let (n_layers, n_heads) = mask.shape();
        MaskFile {
            language: mask.language.clone(),
            n_layers,
            n_heads,
            bits: mask.bits.iter().copied().collect(),
            soft_weights: None,
            provenance,
            pruned_weights: None,
            n_params: None,
        }
    }

    pub fn from_soft_mask(soft: &SoftMask, provenance: MaskProvenance) -> Self {
        let mut f = MaskFile::from_head_mask(&soft.binarize(), provenance);
        f.soft_weights = Some(soft.weights.iter().copied().collect());
        f
    }

    pub fn from_weight_mask(mask: &WeightMask, shape: (usize, usize), provenance: MaskProvenance) -> Self {
        let mut f = MaskFile::from_head_mask(&HeadMask::all_enabled(&mask.language, shape.0, shape.1), provenance);
        f.pruned_weights = Some(mask.pruned.clone());
        f.n_params = Some(mask.n_params);
        f
    }

    pub fn head_mask(&self) -> Result<HeadMask> {
        if self.bits.len() != self.n_layers * self.n_heads {
            return Err(Error::usage(format!(
                "mask for {} lists {} bits for a {}×{} grid",
                self.language,
                self.bits.len(),
                self.n_layers,
                self.n_heads
            )));
        }
        let bits = Array2::from_shape_vec((self.n_layers, self.n_heads), self.bits.clone()).expect("checked length");
        HeadMask::from_bits(&self.language, bits).map_err(|_| Error::usage("mask bits must be 0 or 1"))
    }

    /// Soft mask from the stored weights, or from the static bits.
    pub fn soft_mask(&self, keep_fraction: f64, init_value: f64) -> Result<SoftMask> {
        match &self.soft_weights {
            Some(w) => {
                let weights = Array2::from_shape_vec((self.n_layers, self.n_heads), w.clone())
                    .map_err(|_| Error::usage("soft weights do not match the mask grid"))?;
                check_keep(keep_fraction)?;
                Ok(SoftMask {
                    language: self.language.clone(),
                    weights,
                    keep_fraction,
                    init_value,
                })
            }
            None => SoftMask::from_static(&self.head_mask()?, keep_fraction, init_value),
        }
    }

    pub fn weight_mask(&self) -> Option<WeightMask> {
        Some(WeightMask {
            language: self.language.clone(),
            n_params: self.n_params?,
            pruned: self.pruned_weights.clone()?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::contract(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::file(path, format!("invalid mask file: {e}")))
    }
}

/// Ablation mask families.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AblationKind {
    /// Same number of disabled heads at random positions.
    Shuffle,
    /// Exactly N random heads disabled.
    RandomN(usize),
    /// N heads disabled, none of them disabled by the reference mask nor in
    /// the forbidden set.
    Bad(usize, BTreeSet<(usize, usize)>),
    /// Random soft weights for dynamic training.
    RandomInitDynamic,
}

/// Output of [`make_ablation_mask`].
#[derive(Clone, Debug, PartialEq)]
pub enum AblationMask {
    Head(HeadMask),
    Soft(SoftMask),
}

fn disable_random(language: &str, shape: (usize, usize), candidates: &[usize], n: usize, rng: &mut ChaCha8Rng) -> HeadMask {
    let mut bits = Array2::ones(shape);
    for i in sample(rng, candidates.len(), n).into_iter() {
        let flat = candidates[i];
        bits[(flat / shape.1, flat % shape.1)] = 0;
    }
    HeadMask {
        language: language.to_string(),
        bits,
    }
}

pub fn make_ablation_mask(kind: &AblationKind, reference: &HeadMask, seed: u64) -> Result<AblationMask> {
    let shape = reference.shape();
    let total = reference.total();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..total).collect();
    let lang = reference.language.as_str();
    match kind {
        AblationKind::Shuffle => Ok(AblationMask::Head(disable_random(lang, shape, &all, reference.n_disabled(), &mut rng))),
        AblationKind::RandomN(n) => {
            if *n > total {
                return Err(Error::usage(format!("cannot disable {n} of {total} heads")));
            }
            Ok(AblationMask::Head(disable_random(lang, shape, &all, *n, &mut rng)))
        }
        AblationKind::Bad(n, forbidden) => {
            let excluded: BTreeSet<(usize, usize)> = reference.disabled().union(forbidden).copied().collect();
            let candidates: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&i| !excluded.contains(&(i / shape.1, i % shape.1)))
                .collect();
            if candidates.len() < *n {
                return Err(Error::usage(format!(
                    "only {} heads are eligible for a bad mask of {n}",
                    candidates.len()
                )));
            }
            Ok(AblationMask::Head(disable_random(lang, shape, &candidates, *n, &mut rng)))
        }
        AblationKind::RandomInitDynamic => Ok(AblationMask::Soft(SoftMask::random(
            lang,
            shape,
            SoftMask::DEFAULT_KEEP,
            SoftMask::DEFAULT_INIT,
            seed,
        )?)),
    }
}
