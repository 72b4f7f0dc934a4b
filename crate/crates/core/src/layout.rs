//! Flat parameter storage. Every trainable tensor lives in one `Vec<f64>`
//! at an offset recorded in a [`Layout`], so optimizers, gradient
//! statistics and checkpoints can treat a model as a single vector.

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

/// Optimizer parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Encoder,
    Classifier,
}

/// What a tensor is used for; drives masking and pruning eligibility.
///
/// Attention projections of one layer are stored fused: head `h` owns
/// columns `h·dh..(h+1)·dh` of the query/key/value weights and biases and
/// the same rows of the output weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Role {
    Embedding,
    /// Query, key or value weight (d_model × d_model).
    AttnIn { layer: usize, n_heads: usize },
    /// Query, key or value bias (d_model).
    AttnInBias { layer: usize, n_heads: usize },
    /// Output projection weight (d_model × d_model).
    AttnOut { layer: usize, n_heads: usize },
    AttnOutBias { layer: usize },
    Norm,
    FeedForward,
    Mix,
    Classifier,
    Other,
}

impl Role {
    /// Positions inside a tensor of shape `shape` that belong to `head`.
    fn head_positions(&self, shape: &[usize], layer_q: usize, head: usize) -> Vec<usize> {
        match *self {
            Role::AttnIn { layer, n_heads } if layer == layer_q => {
                let (rows, cols) = (shape[0], shape[1]);
                let dh = cols / n_heads;
                (0..rows).flat_map(|r| (head * dh..(head + 1) * dh).map(move |c| r * cols + c)).collect()
            }
            Role::AttnInBias { layer, n_heads } if layer == layer_q => {
                let dh = shape[0] / n_heads;
                (head * dh..(head + 1) * dh).collect()
            }
            Role::AttnOut { layer, n_heads } if layer == layer_q => {
                let (rows, cols) = (shape[0], shape[1]);
                let dh = rows / n_heads;
                (head * dh * cols..(head + 1) * dh * cols).collect()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub group: Group,
    pub role: Role,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    size: usize,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], group: Group, role: Role) -> TensorId {
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.size,
            group,
            role,
        };
        self.size += spec.len();
        self.tensors.push(spec);
        TensorId(self.tensors.len() - 1)
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.tensors[id.0]
    }

    pub fn range(&self, id: TensorId) -> Range<usize> {
        self.tensors[id.0].range()
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn view1<'a>(&self, data: &'a [f64], id: TensorId) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.range(id)])
    }

    pub fn view1_mut<'a>(&self, data: &'a mut [f64], id: TensorId) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut data[self.range(id)])
    }

    pub fn view2<'a>(&self, data: &'a [f64], id: TensorId) -> ArrayView2<'a, f64> {
        let s = &self.tensors[id.0];
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &data[s.range()]).expect("2-d tensor")
    }

    pub fn view2_mut<'a>(&self, data: &'a mut [f64], id: TensorId) -> ArrayViewMut2<'a, f64> {
        let s = &self.tensors[id.0];
        let range = s.range();
        ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut data[range]).expect("2-d tensor")
    }

    /// Contiguous ranges of each group, in layout order.
    pub fn group_ranges(&self) -> Vec<(Range<usize>, Group)> {
        let mut out: Vec<(Range<usize>, Group)> = Vec::new();
        for t in &self.tensors {
            match out.last_mut() {
                Some((r, g)) if *g == t.group && r.end == t.offset => r.end = t.offset + t.len(),
                _ => out.push((t.range(), t.group)),
            }
        }
        out
    }

    /// Flat indices of every parameter owned by attention head (layer, head):
    /// its query/key/value weights and biases and its output-projection rows.
    pub fn head_indices(&self, layer: usize, head: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tensors
            .iter()
            .flat_map(|t| t.role.head_positions(&t.shape, layer, head).into_iter().map(move |i| t.offset + i))
            .collect();
        out.sort_unstable();
        out
    }

    /// Flat indices of attention projection weights across all heads, the
    /// unit of unstructured magnitude pruning.
    pub fn attention_weight_indices(&self) -> Vec<usize> {
        self.tensors
            .iter()
            .filter(|t| matches!(t.role, Role::AttnIn { .. } | Role::AttnOut { .. }))
            .flat_map(|t| t.range())
            .collect()
    }

    pub fn indices_with(&self, pred: impl Fn(&TensorSpec) -> bool) -> Vec<usize> {
        self.tensors.iter().filter(|t| pred(t)).flat_map(|t| t.range()).collect()
    }
}
