//! Biaffine arc and label scorer over mixed encoder states.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::ops::{add_at_b, affine, elu, elu_grad, log_sum_exp, softmax, with_bias_column};
use crate::error::{Error, Result};
use crate::layout::{Group, Layout, Role, TensorId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParserConfig {
    pub d_model: usize,
    /// Width of the arc-head and arc-dependent feedforwards.
    pub arc_dim: usize,
    /// Width of the label-head and label-dependent feedforwards.
    pub tag_dim: usize,
    pub n_labels: usize,
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.arc_dim == 0 || self.tag_dim == 0 || self.n_labels == 0 {
            return Err(Error::usage("parser widths and label count must be at least 1"));
        }
        Ok(())
    }
}

/// Tensor handles of the classifier inside a shared [`Layout`].
#[derive(Clone, Debug)]
pub struct Biaffine {
    cfg: ParserConfig,
    arc_head_w: TensorId,
    arc_head_b: TensorId,
    arc_dep_w: TensorId,
    arc_dep_b: TensorId,
    w_arc: TensorId,
    b_arc: TensorId,
    tag_head_w: TensorId,
    tag_head_b: TensorId,
    tag_dep_w: TensorId,
    tag_dep_b: TensorId,
    w_tag: TensorId,
    b_tag: TensorId,
}

/// Scores for one sentence plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct Scores {
    /// `arc[(h, d)]` scores the arc h → d over {root} ∪ tokens.
    pub arc: Array2<f64>,
    arc_head_pre: Array2<f64>,
    arc_dep_pre: Array2<f64>,
    arc_head: Array2<f64>,
    arc_dep: Array2<f64>,
    tag_head_pre: Array2<f64>,
    tag_dep_pre: Array2<f64>,
    tag_head: Array2<f64>,
    tag_dep: Array2<f64>,
}

impl Scores {
    pub fn len(&self) -> usize {
        self.arc.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.arc.nrows() == 0
    }
}

/// Gold structure for the loss: heads of tokens 1..=n and their label
/// indices (`None` when the label is unknown to the model).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldTree<'a> {
    pub heads: &'a [usize],
    pub labels: &'a [Option<usize>],
}

impl Biaffine {
    pub fn new(cfg: ParserConfig, layout: &mut Layout) -> Result<Self> {
        cfg.validate()?;
        let (d, a, t, c) = (cfg.d_model, cfg.arc_dim, cfg.tag_dim, cfg.n_labels);
        let g = Group::Classifier;
        let r = Role::Classifier;
        Ok(Biaffine {
            arc_head_w: layout.push("parser.arc_head.weight", &[d, a], g, r),
            arc_head_b: layout.push("parser.arc_head.bias", &[a], g, r),
            arc_dep_w: layout.push("parser.arc_dep.weight", &[d, a], g, r),
            arc_dep_b: layout.push("parser.arc_dep.bias", &[a], g, r),
            w_arc: layout.push("parser.arc.weight", &[a + 1, a + 1], g, r),
            b_arc: layout.push("parser.arc.bias", &[1], g, r),
            tag_head_w: layout.push("parser.tag_head.weight", &[d, t], g, r),
            tag_head_b: layout.push("parser.tag_head.bias", &[t], g, r),
            tag_dep_w: layout.push("parser.tag_dep.weight", &[d, t], g, r),
            tag_dep_b: layout.push("parser.tag_dep.bias", &[t], g, r),
            w_tag: layout.push("parser.tag.weight", &[c, (t + 1) * (t + 1)], g, r),
            b_tag: layout.push("parser.tag.bias", &[c], g, r),
            cfg,
        })
    }

    pub fn config(&self) -> &ParserConfig {
        &self.cfg
    }

    pub fn init<R: Rng>(&self, layout: &Layout, params: &mut [f64], rng: &mut R) {
        let mut fill = |id: TensorId, std: f64, params: &mut [f64]| {
            let normal = Normal::new(0.0, std).expect("valid std");
            for v in &mut params[layout.range(id)] {
                *v = normal.sample(rng);
            }
        };
        let d = self.cfg.d_model as f64;
        fill(self.arc_head_w, 1.0 / d.sqrt(), params);
        fill(self.arc_dep_w, 1.0 / d.sqrt(), params);
        fill(self.tag_head_w, 1.0 / d.sqrt(), params);
        fill(self.tag_dep_w, 1.0 / d.sqrt(), params);
        fill(self.w_arc, 1.0 / (self.cfg.arc_dim as f64 + 1.0), params);
        fill(self.w_tag, 1.0 / (self.cfg.tag_dim as f64 + 1.0), params);
        for id in [self.arc_head_b, self.arc_dep_b, self.b_arc, self.tag_head_b, self.tag_dep_b, self.b_tag] {
            params[layout.range(id)].fill(0.0);
        }
    }

    pub fn score(&self, layout: &Layout, params: &[f64], r: &Array2<f64>) -> Result<Scores> {
        if r.nrows() == 0 {
            return Err(Error::contract("cannot score an empty sequence"));
        }
        if r.ncols() != self.cfg.d_model {
            return Err(Error::contract(format!(
                "encoding width {} does not match parser width {}",
                r.ncols(),
                self.cfg.d_model
            )));
        }
        let x = r.view();
        let ff = |w: TensorId, b: TensorId| {
            let pre = affine(&x, &layout.view2(params, w), &layout.view1(params, b));
            let act = with_bias_column(&pre.mapv(elu));
            (pre, act)
        };
        let (arc_head_pre, arc_head) = ff(self.arc_head_w, self.arc_head_b);
        let (arc_dep_pre, arc_dep) = ff(self.arc_dep_w, self.arc_dep_b);
        let (tag_head_pre, tag_head) = ff(self.tag_head_w, self.tag_head_b);
        let (tag_dep_pre, tag_dep) = ff(self.tag_dep_w, self.tag_dep_b);
        let mut arc = arc_head.dot(&layout.view2(params, self.w_arc)).dot(&arc_dep.t());
        arc += params[layout.range(self.b_arc).start];
        Ok(Scores {
            arc,
            arc_head_pre,
            arc_dep_pre,
            arc_head,
            arc_dep,
            tag_head_pre,
            tag_dep_pre,
            tag_head,
            tag_dep,
        })
    }

    fn tag_slice<'a>(&self, layout: &Layout, params: &'a [f64], c: usize) -> ArrayView2<'a, f64> {
        let k = self.cfg.tag_dim + 1;
        let w = layout.view2(params, self.w_tag);
        w.slice_move(s![c, ..]).into_shape_with_order((k, k)).expect("square label slice")
    }

    /// Label scores for the arc h → d.
    pub fn label_scores(&self, layout: &Layout, params: &[f64], scores: &Scores, h: usize, d: usize) -> Array1<f64> {
        let outer = outer_flat(&scores.tag_head.row(h), &scores.tag_dep.row(d));
        let mut out = layout.view2(params, self.w_tag).dot(&outer);
        out += &layout.view1(params, self.b_tag);
        out
    }

    /// Full label tensor S_tag with shape (labels, n+1, n+1).
    pub fn label_tensor(&self, layout: &Layout, params: &[f64], scores: &Scores) -> ndarray::Array3<f64> {
        let n = scores.len();
        let b = layout.view1(params, self.b_tag);
        let mut out = ndarray::Array3::zeros((self.cfg.n_labels, n, n));
        for c in 0..self.cfg.n_labels {
            let mut m = scores.tag_head.dot(&self.tag_slice(layout, params, c)).dot(&scores.tag_dep.t());
            m += b[c];
            out.slice_mut(s![c, .., ..]).assign(&m);
        }
        out
    }

    /// Summed per-token cross-entropy of heads (softmax over each column of
    /// the arc matrix) and of labels at the gold arc. Returns the loss and
    /// writes ∂loss/∂scores into a fresh [`ScoreGrad`].
    pub fn loss(&self, layout: &Layout, params: &[f64], scores: &Scores, gold: &GoldTree) -> Result<(f64, ScoreGrad)> {
        let n = scores.len() - 1;
        if gold.heads.len() != n || gold.labels.len() != n {
            return Err(Error::contract(format!(
                "gold tree has {} heads for {n} tokens",
                gold.heads.len()
            )));
        }
        let mut total = 0.0;
        let mut d_arc = Array2::zeros((n + 1, n + 1));
        let mut d_labels = Vec::new();
        for d in 1..=n {
            let h = gold.heads[d - 1];
            if h > n {
                return Err(Error::contract(format!("gold head {h} out of range")));
            }
            let col = scores.arc.column(d);
            let lse = log_sum_exp(col.iter());
            total += lse - col[h];
            for u in 0..=n {
                d_arc[(u, d)] = (col[u] - lse).exp();
            }
            d_arc[(h, d)] -= 1.0;
            if let Some(c) = gold.labels[d - 1] {
                if c >= self.cfg.n_labels {
                    return Err(Error::contract(format!("label index {c} out of range")));
                }
                let ls = self.label_scores(layout, params, scores, h, d);
                let lse = log_sum_exp(ls.iter());
                total += lse - ls[c];
                let mut g = Array1::from(softmax(ls.as_slice().expect("contiguous")));
                g[c] -= 1.0;
                d_labels.push((h, d, g));
            }
        }
        Ok((total, ScoreGrad { arc: d_arc, labels: d_labels }))
    }

    /// Backpropagates score gradients into `grad` and returns ∂loss/∂r.
    pub fn backward(
        &self,
        layout: &Layout,
        params: &[f64],
        r: &Array2<f64>,
        scores: &Scores,
        sg: &ScoreGrad,
        grad: &mut [f64],
    ) -> Array2<f64> {
        let n1 = scores.len();
        let a = self.cfg.arc_dim;
        let t = self.cfg.tag_dim;
        let w_arc = layout.view2(params, self.w_arc);

        // S = H W Dᵀ + b
        grad[layout.range(self.b_arc).start] += sg.arc.sum();
        let hd = scores.arc_head.t().dot(&sg.arc).dot(&scores.arc_dep);
        layout.view2_mut(grad, self.w_arc).scaled_add(1.0, &hd);
        let d_head = sg.arc.dot(&scores.arc_dep).dot(&w_arc.t());
        let d_dep = sg.arc.t().dot(&scores.arc_head).dot(&w_arc);

        let mut d_tag_head = Array2::zeros((n1, t + 1));
        let mut d_tag_dep = Array2::zeros((n1, t + 1));
        if !sg.labels.is_empty() {
            let k = t + 1;
            let w_tag = layout.view2(params, self.w_tag);
            let mut g_all = Array2::zeros((sg.labels.len(), self.cfg.n_labels));
            let mut outer_all = Array2::zeros((sg.labels.len(), k * k));
            for (i, (h, d, g)) in sg.labels.iter().enumerate() {
                g_all.row_mut(i).assign(g);
                outer_all.row_mut(i).assign(&outer_flat(&scores.tag_head.row(*h), &scores.tag_dep.row(*d)));
            }
            // Σ_c g_c W_c for every labelled arc at once.
            let combined_all = g_all.dot(&w_tag);
            add_at_b(&mut layout.view2_mut(grad, self.w_tag), &g_all.view(), &outer_all.view());
            layout.view1_mut(grad, self.b_tag).scaled_add(1.0, &g_all.sum_axis(Axis(0)));
            for (i, (h, d, _)) in sg.labels.iter().enumerate() {
                let combined = combined_all.row(i).into_shape_with_order((k, k)).expect("square");
                let x = scores.tag_head.row(*h);
                let y = scores.tag_dep.row(*d);
                let mut dx = d_tag_head.row_mut(*h);
                dx += &combined.dot(&y);
                let mut dy = d_tag_dep.row_mut(*d);
                dy += &combined.t().dot(&x);
            }
        }

        let mut dr = Array2::zeros(r.dim());
        let x = r.view();
        for (dact, pre, w, b, width) in [
            (&d_head, &scores.arc_head_pre, self.arc_head_w, self.arc_head_b, a),
            (&d_dep, &scores.arc_dep_pre, self.arc_dep_w, self.arc_dep_b, a),
            (&d_tag_head, &scores.tag_head_pre, self.tag_head_w, self.tag_head_b, t),
            (&d_tag_dep, &scores.tag_dep_pre, self.tag_dep_w, self.tag_dep_b, t),
        ] {
            let mut dpre = dact.slice(s![.., ..width]).to_owned();
            dpre.zip_mut_with(pre, |g, &p| *g *= elu_grad(p));
            layout.view1_mut(grad, b).scaled_add(1.0, &dpre.sum_axis(Axis(0)));
            add_at_b(&mut layout.view2_mut(grad, w), &x, &dpre.view());
            dr += &dpre.dot(&layout.view2(params, w).t());
        }
        dr
    }

    /// Most likely label index for the arc h → d.
    pub fn best_label(&self, layout: &Layout, params: &[f64], scores: &Scores, h: usize, d: usize) -> usize {
        let ls = self.label_scores(layout, params, scores, h, d);
        let mut best = 0;
        for (c, &v) in ls.iter().enumerate() {
            if v > ls[best] {
                best = c;
            }
        }
        best
    }
}

/// Row-major flattening of x yᵀ.
fn outer_flat(x: &ndarray::ArrayView1<f64>, y: &ndarray::ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(x.len() * y.len());
    for (chunk, &xi) in out.exact_chunks_mut(y.len()).into_iter().zip(x.iter()) {
        let mut chunk = chunk;
        chunk.assign(&(y * xi));
    }
    out
}

/// ∂loss/∂scores: the dense arc part and the label-logit gradients at the
/// gold arcs that carried a label term.
#[derive(Clone, Debug)]
pub struct ScoreGrad {
    pub arc: Array2<f64>,
    pub labels: Vec<(usize, usize, Array1<f64>)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Biaffine, Layout, Vec<f64>, Array2<f64>) {
        let cfg = ParserConfig {
            d_model: 5,
            arc_dim: 4,
            tag_dim: 3,
            n_labels: 3,
        };
        let mut layout = Layout::default();
        let p = Biaffine::new(cfg, &mut layout).unwrap();
        let mut params = vec![0.0; layout.size()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.init(&layout, &mut params, &mut rng);
        let normal = Normal::new(0.0, 0.5).unwrap();
        for v in params.iter_mut() {
            *v += normal.sample(&mut rng) * 0.3;
        }
        let r = Array2::from_shape_fn((4, 5), |_| normal.sample(&mut rng));
        (p, layout, params, r)
    }

    fn total_loss(p: &Biaffine, layout: &Layout, params: &[f64], r: &Array2<f64>, gold: &GoldTree) -> f64 {
        let sc = p.score(layout, params, r).unwrap();
        p.loss(layout, params, &sc, gold).unwrap().0
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let (p, layout, params, r) = setup(seed);
            let heads = [2, 0, 2];
            let labels = [Some(1), Some(0), None];
            let gold = GoldTree {
                heads: &heads,
                labels: &labels,
            };
            let sc = p.score(&layout, &params, &r).unwrap();
            let (_, sg) = p.loss(&layout, &params, &sc, &gold).unwrap();
            let mut grad = vec![0.0; layout.size()];
            let dr = p.backward(&layout, &params, &r, &sc, &sg, &mut grad);
            let h = 1e-5;
            for i in 0..params.len() {
                let mut q = params.clone();
                q[i] += h;
                let up = total_loss(&p, &layout, &q, &r, &gold);
                q[i] -= 2.0 * h;
                let down = total_loss(&p, &layout, &q, &r, &gold);
                let num = (up - down) / (2.0 * h);
                let err = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-6);
                assert!(err < 1e-4, "param {i}: {} vs {num}", grad[i]);
            }
            for idx in 0..r.len() {
                let (i, j) = (idx / 5, idx % 5);
                let mut q = r.clone();
                q[(i, j)] += h;
                let up = total_loss(&p, &layout, &params, &q, &gold);
                q[(i, j)] -= 2.0 * h;
                let down = total_loss(&p, &layout, &params, &q, &gold);
                let num = (up - down) / (2.0 * h);
                let err = (num - dr[(i, j)]).abs() / num.abs().max(dr[(i, j)].abs()).max(1e-6);
                assert!(err < 1e-4, "input ({i},{j}): {} vs {num}", dr[(i, j)]);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_arc_scores() {
        let (p, layout, mut params, r) = setup(1);
        params[layout.range(p.w_arc)].fill(0.0);
        params[layout.range(p.b_arc)].fill(0.0);
        let sc = p.score(&layout, &params, &r).unwrap();
        assert!(sc.arc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_arc_scores_give_log_n_plus_one_per_token() {
        let (p, layout, mut params, r) = setup(2);
        params[layout.range(p.w_arc)].fill(0.0);
        let sc = p.score(&layout, &params, &r).unwrap();
        let heads = [0, 1, 1];
        let labels = [None, None, None];
        let (l, _) = p
            .loss(&layout, &params, &sc, &GoldTree {
                heads: &heads,
                labels: &labels,
            })
            .unwrap();
        assert!((l - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_tensor_agrees_with_pointwise_scores() {
        let (p, layout, params, r) = setup(3);
        let sc = p.score(&layout, &params, &r).unwrap();
        let full = p.label_tensor(&layout, &params, &sc);
        for h in 0..4 {
            for d in 0..4 {
                let ls = p.label_scores(&layout, &params, &sc, h, d);
                for c in 0..3 {
                    assert!((full[(c, h, d)] - ls[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn width_mismatch_is_a_contract_error() {
        let (p, layout, params, _) = setup(0);
        assert!(p.score(&layout, &params, &Array2::zeros((3, 4))).is_err());
        assert!(p.score(&layout, &params, &Array2::zeros((0, 5))).is_err());
    }
}
