//! Transformer encoder whose attention heads can be scaled or switched off
//! by a (layers × heads) mask, with a softmax-weighted mix of all layer
//! outputs as the token representation and an exact backward pass.

pub mod ops;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Group, Layout, Role, TensorId};
use ops::{add_at_b, affine, gelu, gelu_grad, layer_norm, layer_norm_backward, softmax, softmax_rows, LnCache};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    /// Twelve layers of twelve heads, narrow enough to train on a CPU.
    fn default() -> Self {
        EncoderConfig {
            n_layers: 12,
            n_heads: 12,
            d_model: 48,
            d_ff: 96,
            vocab_size: 2,
            max_len: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Four layers of four heads with width 64.
    pub fn desk() -> Self {
        EncoderConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_layers,
            self.n_heads,
            self.d_model,
            self.d_ff,
            self.vocab_size,
            self.max_len,
        ];
        if counts.contains(&0) {
            return Err(Error::usage("encoder sizes must all be at least 1"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::usage(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }
}

#[derive(Clone, Debug)]
struct LayerTensors {
    wq: TensorId,
    bq: TensorId,
    wk: TensorId,
    bk: TensorId,
    wv: TensorId,
    bv: TensorId,
    wo: TensorId,
    bo: TensorId,
    ln1_g: TensorId,
    ln1_b: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
    ln2_g: TensorId,
    ln2_b: TensorId,
}

/// Tensor handles of the encoder inside a shared [`Layout`].
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    tok_emb: TensorId,
    pos_emb: TensorId,
    emb_ln_g: TensorId,
    emb_ln_b: TensorId,
    layers: Vec<LayerTensors>,
    lambda: TensorId,
    eta: TensorId,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities per head.
    attn: Vec<Array2<f64>>,
    /// Head contexts before masking, heads side by side (T × d).
    context: Array2<f64>,
    /// Head contexts after masking.
    gated: Array2<f64>,
    ln1: LnCache,
    normed: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ln2: LnCache,
}

/// Everything `encode` produces: per-layer outputs, the mixed token
/// representations and (optionally) the activations needed by `backward`.
#[derive(Clone, Debug)]
pub struct MaskedForwardRecord {
    pub ids: Vec<usize>,
    /// Output of each transformer layer, `n_layers` matrices of (T × d).
    pub layer_outputs: Vec<Array2<f64>>,
    /// Softmax of the mixing weights.
    pub mix_weights: Vec<f64>,
    /// Mixed representation r (T × d).
    pub mixed: Array2<f64>,
    mask: Array2<f64>,
    emb_ln: Option<LnCache>,
    layers: Option<Vec<LayerCache>>,
}

impl MaskedForwardRecord {
    pub fn has_cache(&self) -> bool {
        self.layers.is_some()
    }
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, layout: &mut Layout) -> Result<Self> {
        cfg.validate()?;
        let (d, ff, nh) = (cfg.d_model, cfg.d_ff, cfg.n_heads);
        let enc = Group::Encoder;
        let tok_emb = layout.push("embeddings.token", &[cfg.vocab_size, d], enc, Role::Embedding);
        let pos_emb = layout.push("embeddings.position", &[cfg.max_len, d], enc, Role::Embedding);
        let emb_ln_g = layout.push("embeddings.norm.gamma", &[d], enc, Role::Norm);
        let emb_ln_b = layout.push("embeddings.norm.beta", &[d], enc, Role::Norm);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let w = Role::AttnIn { layer: l, n_heads: nh };
            let b = Role::AttnInBias { layer: l, n_heads: nh };
            let p = format!("layer{l}");
            layers.push(LayerTensors {
                wq: layout.push(format!("{p}.attention.query.weight"), &[d, d], enc, w),
                bq: layout.push(format!("{p}.attention.query.bias"), &[d], enc, b),
                wk: layout.push(format!("{p}.attention.key.weight"), &[d, d], enc, w),
                bk: layout.push(format!("{p}.attention.key.bias"), &[d], enc, b),
                wv: layout.push(format!("{p}.attention.value.weight"), &[d, d], enc, w),
                bv: layout.push(format!("{p}.attention.value.bias"), &[d], enc, b),
                wo: layout.push(
                    format!("{p}.attention.output.weight"),
                    &[d, d],
                    enc,
                    Role::AttnOut { layer: l, n_heads: nh },
                ),
                bo: layout.push(format!("{p}.attention.output.bias"), &[d], enc, Role::AttnOutBias { layer: l }),
                ln1_g: layout.push(format!("{p}.attention.norm.gamma"), &[d], enc, Role::Norm),
                ln1_b: layout.push(format!("{p}.attention.norm.beta"), &[d], enc, Role::Norm),
                w1: layout.push(format!("{p}.ffn.in.weight"), &[d, ff], enc, Role::FeedForward),
                b1: layout.push(format!("{p}.ffn.in.bias"), &[ff], enc, Role::FeedForward),
                w2: layout.push(format!("{p}.ffn.out.weight"), &[ff, d], enc, Role::FeedForward),
                b2: layout.push(format!("{p}.ffn.out.bias"), &[d], enc, Role::FeedForward),
                ln2_g: layout.push(format!("{p}.ffn.norm.gamma"), &[d], enc, Role::Norm),
                ln2_b: layout.push(format!("{p}.ffn.norm.beta"), &[d], enc, Role::Norm),
            });
        }
        // The layer mix is trained with the classifier learning rate.
        let lambda = layout.push("mix.lambda", &[cfg.n_layers], Group::Classifier, Role::Mix);
        let eta = layout.push("mix.eta", &[1], Group::Classifier, Role::Mix);
        Ok(Encoder {
            cfg,
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            lambda,
            eta,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Random weights, unit norm gains, zero biases, λ = 0 and η = 1.
    pub fn init<R: Rng>(&self, layout: &Layout, params: &mut [f64], rng: &mut R) {
        let mut fill = |id: TensorId, std: f64, params: &mut [f64]| {
            let normal = Normal::new(0.0, std).expect("valid std");
            for v in &mut params[layout.range(id)] {
                *v = normal.sample(rng);
            }
        };
        let d = self.cfg.d_model as f64;
        fill(self.tok_emb, 0.5, params);
        fill(self.pos_emb, 0.5, params);
        params[layout.range(self.emb_ln_g)].fill(1.0);
        for layer in &self.layers {
            for id in [layer.wq, layer.wk, layer.wv, layer.wo, layer.w1] {
                fill(id, 1.0 / d.sqrt(), params);
            }
            fill(layer.w2, 1.0 / (self.cfg.d_ff as f64).sqrt(), params);
            params[layout.range(layer.ln1_g)].fill(1.0);
            params[layout.range(layer.ln2_g)].fill(1.0);
        }
        params[layout.range(self.lambda)].fill(0.0);
        params[layout.range(self.eta)].fill(1.0);
    }

    fn check_inputs(&self, ids: &[usize], mask: Option<&Array2<f64>>) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::contract("cannot encode an empty sequence"));
        }
        if ids.len() > self.cfg.max_len {
            return Err(Error::contract(format!(
                "sequence length {} exceeds max_len {}",
                ids.len(),
                self.cfg.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary of {}", self.cfg.vocab_size)));
        }
        if let Some(m) = mask {
            if m.dim() != (self.cfg.n_layers, self.cfg.n_heads) {
                return Err(Error::contract(format!(
                    "mask shape {:?} does not match encoder ({}, {})",
                    m.dim(),
                    self.cfg.n_layers,
                    self.cfg.n_heads
                )));
            }
        }
        Ok(())
    }

    /// Runs the encoder. Each head's context vectors are multiplied by the
    /// head's mask value before the output projection; `mask = None` skips
    /// the multiplication entirely.
    pub fn encode(
        &self,
        layout: &Layout,
        params: &[f64],
        ids: &[usize],
        mask: Option<&Array2<f64>>,
        keep_cache: bool,
    ) -> Result<MaskedForwardRecord> {
        self.check_inputs(ids, mask)?;
        let t = ids.len();
        let d = self.cfg.d_model;
        let dh = self.cfg.d_head();
        let scale = 1.0 / (dh as f64).sqrt();

        let tok = layout.view2(params, self.tok_emb);
        let pos = layout.view2(params, self.pos_emb);
        let mut x = Array2::zeros((t, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&tok.row(id));
            row += &pos.row(i);
        }
        let (mut hidden, emb_ln) = layer_norm(&x, layout.view1(params, self.emb_ln_g), layout.view1(params, self.emb_ln_b));

        let mut layer_outputs = Vec::with_capacity(self.layers.len());
        let mut caches = keep_cache.then(|| Vec::with_capacity(self.layers.len()));
        for (l, lt) in self.layers.iter().enumerate() {
            let input = hidden;
            let xv = input.view();
            let q = affine(&xv, &layout.view2(params, lt.wq), &layout.view1(params, lt.bq));
            let k = affine(&xv, &layout.view2(params, lt.wk), &layout.view1(params, lt.bk));
            let v = affine(&xv, &layout.view2(params, lt.wv), &layout.view1(params, lt.bv));
            let mut context = Array2::zeros((t, d));
            let mut attns = Vec::with_capacity(self.cfg.n_heads);
            for h in 0..self.cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut attn = q.slice(cols).dot(&k.slice(cols).t());
                attn.mapv_inplace(|s| s * scale);
                softmax_rows(&mut attn);
                context.slice_mut(cols).assign(&attn.dot(&v.slice(cols)));
                attns.push(attn);
            }
            let gated = match mask {
                Some(m) => {
                    let mut g = context.clone();
                    for h in 0..self.cfg.n_heads {
                        let f = m[(l, h)];
                        g.slice_mut(s![.., h * dh..(h + 1) * dh]).mapv_inplace(|c| c * f);
                    }
                    g
                }
                None => context.clone(),
            };
            let attn_out = affine(&gated.view(), &layout.view2(params, lt.wo), &layout.view1(params, lt.bo));
            let residual = &input + &attn_out;
            let (normed, ln1) = layer_norm(&residual, layout.view1(params, lt.ln1_g), layout.view1(params, lt.ln1_b));
            let ff_pre = affine(&normed.view(), &layout.view2(params, lt.w1), &layout.view1(params, lt.b1));
            let ff_act = ff_pre.mapv(gelu);
            let ff_out = affine(&ff_act.view(), &layout.view2(params, lt.w2), &layout.view1(params, lt.b2));
            let residual2 = &normed + &ff_out;
            let (out, ln2) = layer_norm(&residual2, layout.view1(params, lt.ln2_g), layout.view1(params, lt.ln2_b));
            layer_outputs.push(out.clone());
            hidden = out;
            if let Some(c) = caches.as_mut() {
                c.push(LayerCache {
                    input,
                    q,
                    k,
                    v,
                    attn: attns,
                    context,
                    gated,
                    ln1,
                    normed,
                    ff_pre,
                    ff_act,
                    ln2,
                });
            }
        }

        let mix_weights = softmax(layout.view1(params, self.lambda).as_slice().expect("contiguous"));
        let eta = params[layout.range(self.eta).start];
        let mut mixed = Array2::zeros((t, d));
        for (u, &w) in layer_outputs.iter().zip(&mix_weights) {
            mixed.scaled_add(w, u);
        }
        mixed.mapv_inplace(|v| v * eta);

        let mask = mask
            .cloned()
            .unwrap_or_else(|| Array2::ones((self.cfg.n_layers, self.cfg.n_heads)));
        Ok(MaskedForwardRecord {
            ids: ids.to_vec(),
            layer_outputs,
            mix_weights,
            mixed,
            mask,
            emb_ln: keep_cache.then_some(emb_ln),
            layers: caches,
        })
    }

    /// Reverse-mode pass from `d_mixed` = ∂L/∂r. Parameter gradients are
    /// added into `grad` (full layout size) and mask-variable gradients into
    /// `mask_grad` (n_layers × n_heads).
    pub fn backward(
        &self,
        layout: &Layout,
        params: &[f64],
        record: &MaskedForwardRecord,
        d_mixed: &Array2<f64>,
        grad: &mut [f64],
        mask_grad: &mut Array2<f64>,
    ) -> Result<()> {
        let (caches, emb_ln) = match (&record.layers, &record.emb_ln) {
            (Some(c), Some(e)) => (c, e),
            _ => return Err(Error::contract("forward record was produced without cached activations")),
        };
        if d_mixed.dim() != record.mixed.dim() {
            return Err(Error::contract("gradient shape does not match the mixed representation"));
        }
        if mask_grad.dim() != (self.cfg.n_layers, self.cfg.n_heads) {
            return Err(Error::contract("mask gradient has the wrong shape"));
        }
        let t = record.ids.len();
        let d = self.cfg.d_model;
        let dh = self.cfg.d_head();
        let scale = 1.0 / (dh as f64).sqrt();
        let eta = params[layout.range(self.eta).start];
        let w = &record.mix_weights;

        // Layer mix.
        let dot_u: Vec<f64> = record.layer_outputs.iter().map(|u| (u * d_mixed).sum()).collect();
        let d_eta: f64 = w.iter().zip(&dot_u).map(|(wi, di)| wi * di).sum();
        grad[layout.range(self.eta).start] += d_eta;
        let dw: Vec<f64> = dot_u.iter().map(|v| eta * v).collect();
        let wdw: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        {
            let lam = layout.range(self.lambda);
            for (i, g) in grad[lam].iter_mut().enumerate() {
                *g += w[i] * (dw[i] - wdw);
            }
        }

        let mut d_hidden: Option<Array2<f64>> = None;
        for (l, (lt, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let mut d_out = d_mixed * (eta * w[l]);
            if let Some(dh) = d_hidden.take() {
                d_out += &dh;
            }

            // Feed-forward block.
            let d_res2 = {
                let (g, b) = split_two(grad, layout, lt.ln2_g, lt.ln2_b);
                layer_norm_backward(&d_out, &cache.ln2, layout.view1(params, lt.ln2_g), g, b)
            };
            let mut d_normed = d_res2.clone();
            layout.view1_mut(grad, lt.b2).scaled_add(1.0, &d_res2.sum_axis(Axis(0)));
            add_at_b(&mut layout.view2_mut(grad, lt.w2), &cache.ff_act.view(), &d_res2.view());
            let mut d_pre = d_res2.dot(&layout.view2(params, lt.w2).t());
            d_pre.zip_mut_with(&cache.ff_pre, |g, &x| *g *= gelu_grad(x));
            layout.view1_mut(grad, lt.b1).scaled_add(1.0, &d_pre.sum_axis(Axis(0)));
            add_at_b(&mut layout.view2_mut(grad, lt.w1), &cache.normed.view(), &d_pre.view());
            d_normed += &d_pre.dot(&layout.view2(params, lt.w1).t());

            // Attention block.
            let d_res1 = {
                let (g, b) = split_two(grad, layout, lt.ln1_g, lt.ln1_b);
                layer_norm_backward(&d_normed, &cache.ln1, layout.view1(params, lt.ln1_g), g, b)
            };
            let mut d_input = d_res1.clone();
            layout.view1_mut(grad, lt.bo).scaled_add(1.0, &d_res1.sum_axis(Axis(0)));
            add_at_b(&mut layout.view2_mut(grad, lt.wo), &cache.gated.view(), &d_res1.view());
            let d_gated = d_res1.dot(&layout.view2(params, lt.wo).t());
            let mut d_q = Array2::zeros((t, d));
            let mut d_k = Array2::zeros((t, d));
            let mut d_v = Array2::zeros((t, d));
            for (h, attn) in cache.attn.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let m = record.mask[(l, h)];
                let dg = d_gated.slice(cols);
                mask_grad[(l, h)] += (&cache.context.slice(cols) * &dg).sum();
                let d_context = &dg * m;
                let mut d_scores = d_context.dot(&cache.v.slice(cols).t());
                d_v.slice_mut(cols).assign(&attn.t().dot(&d_context));
                for (mut row, a) in d_scores.rows_mut().into_iter().zip(attn.rows()) {
                    let dot: f64 = row.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
                    row.zip_mut_with(&a, |g, &p| *g = p * (*g - dot) * scale);
                }
                d_q.slice_mut(cols).assign(&d_scores.dot(&cache.k.slice(cols)));
                d_k.slice_mut(cols).assign(&d_scores.t().dot(&cache.q.slice(cols)));
            }
            for (dm, wid, bid) in [(&d_q, lt.wq, lt.bq), (&d_k, lt.wk, lt.bk), (&d_v, lt.wv, lt.bv)] {
                add_at_b(&mut layout.view2_mut(grad, wid), &cache.input.view(), &dm.view());
                layout.view1_mut(grad, bid).scaled_add(1.0, &dm.sum_axis(Axis(0)));
                d_input += &dm.dot(&layout.view2(params, wid).t());
            }
            d_hidden = Some(d_input);
        }

        let d_x = {
            let d_h0 = d_hidden.expect("at least one layer");
            let (g, b) = split_two(grad, layout, self.emb_ln_g, self.emb_ln_b);
            layer_norm_backward(&d_h0, emb_ln, layout.view1(params, self.emb_ln_g), g, b)
        };
        {
            let mut tok = layout.view2_mut(grad, self.tok_emb);
            for (i, &id) in record.ids.iter().enumerate() {
                let mut row = tok.row_mut(id);
                row += &d_x.row(i);
            }
        }
        {
            let mut pos = layout.view2_mut(grad, self.pos_emb);
            let mut rows = pos.slice_mut(s![..t, ..]);
            rows += &d_x;
        }
        Ok(())
    }

    /// Flat index of η.
    pub fn eta_index(&self, layout: &Layout) -> usize {
        layout.range(self.eta).start
    }

    pub fn lambda_range(&self, layout: &Layout) -> std::ops::Range<usize> {
        layout.range(self.lambda)
    }
}

/// Two disjoint mutable 1-d views into `grad` for a gain/bias pair.
fn split_two<'a>(
    grad: &'a mut [f64],
    layout: &Layout,
    first: TensorId,
    second: TensorId,
) -> (ndarray::ArrayViewMut1<'a, f64>, ndarray::ArrayViewMut1<'a, f64>) {
    let a = layout.range(first);
    let b = layout.range(second);
    assert!(a.end <= b.start, "tensors must be ordered");
    let (lo, hi) = grad.split_at_mut(b.start);
    (
        ndarray::ArrayViewMut1::from(&mut lo[a]),
        ndarray::ArrayViewMut1::from(&mut hi[..b.end - b.start]),
    )
}

/// Mixed representation recomputed from the layer outputs, for checks.
pub fn mix_layers(outputs: &[Array2<f64>], lambda: &[f64], eta: f64) -> Array2<f64> {
    let w = softmax(lambda);
    let mut acc = Array2::zeros(outputs[0].dim());
    for (u, wi) in outputs.iter().zip(w) {
        acc.scaled_add(wi, u);
    }
    acc * eta
}
