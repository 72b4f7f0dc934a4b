//! What the trainers optimize: anything that maps parameters, an example
//! and a head mask to a loss with gradients.

use std::ops::Range;

use ndarray::Array2;

use crate::error::Result;
use crate::layout::Group;
use crate::model::{Example, ParserModel};

pub trait Objective {
    type Example;

    fn n_params(&self) -> usize;

    /// Contiguous parameter ranges and their optimizer group.
    fn groups(&self) -> Vec<(Range<usize>, Group)>;

    /// Shape of the head-mask variables.
    fn mask_shape(&self) -> (usize, usize);

    /// Loss of one example; gradients are added into `grad` and `mask_grad`.
    fn loss_grad(
        &self,
        params: &[f64],
        ex: &Self::Example,
        mask: Option<&Array2<f64>>,
        grad: &mut [f64],
        mask_grad: &mut Array2<f64>,
    ) -> Result<f64>;
}

impl Objective for ParserModel {
    type Example = Example;

    fn n_params(&self) -> usize {
        self.layout.size()
    }

    fn groups(&self) -> Vec<(Range<usize>, Group)> {
        self.layout.group_ranges()
    }

    fn mask_shape(&self) -> (usize, usize) {
        ParserModel::mask_shape(self)
    }

    fn loss_grad(
        &self,
        params: &[f64],
        ex: &Example,
        mask: Option<&Array2<f64>>,
        grad: &mut [f64],
        mask_grad: &mut Array2<f64>,
    ) -> Result<f64> {
        ParserModel::loss_grad(self, params, ex, mask, grad, mask_grad)
    }
}

/// The mask as seen by one forward/backward pass.
#[derive(Clone, Debug, Default)]
pub enum ActiveMask {
    #[default]
    None,
    Heads(Array2<f64>),
    /// Elementwise parameter multiplier.
    Weights(Vec<f64>),
}

/// Result of a batch pass: mean loss, mean parameter gradient and mean
/// mask-variable gradient.
#[derive(Clone, Debug)]
pub struct BatchGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mask_grad: Array2<f64>,
}

/// Averages per-example losses and gradients over `batch`.
pub fn batch_grad<O: Objective>(obj: &O, params: &[f64], batch: &[&O::Example], mask: &ActiveMask) -> Result<BatchGrad> {
    let mut grad = vec![0.0; obj.n_params()];
    let mut mask_grad = Array2::zeros(obj.mask_shape());
    let mut loss = 0.0;
    let masked_params;
    let (p, heads) = match mask {
        ActiveMask::None => (params, None),
        ActiveMask::Heads(m) => (params, Some(m)),
        ActiveMask::Weights(w) => {
            masked_params = params.iter().zip(w).map(|(a, b)| a * b).collect::<Vec<f64>>();
            (masked_params.as_slice(), None)
        }
    };
    for ex in batch {
        loss += obj.loss_grad(p, ex, heads, &mut grad, &mut mask_grad)?;
    }
    if let ActiveMask::Weights(w) = mask {
        for (g, m) in grad.iter_mut().zip(w) {
            *g *= m;
        }
    }
    let n = batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    mask_grad.mapv_inplace(|g| g / n);
    Ok(BatchGrad {
        loss: loss / n,
        grad,
        mask_grad,
    })
}
