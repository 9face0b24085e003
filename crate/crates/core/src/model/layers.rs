//! Graph-building blocks: conditional layer norm, multi-head self-attention,
//! conv feed-forward transformer blocks, and the shared two-layer conv
//! predictor stack.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::numerics::{Graph, NodeId, ParamSet, Scalar, Tensor, LAYER_NORM_EPS};

/// Forward-pass context: the graph under construction plus everything the
/// layers need. Dropout is an inverted mask drawn from `dropout_rng` in
/// training mode and the identity in evaluation mode.
pub struct Ctx<'a, S: Scalar> {
    pub g: Graph<S>,
    pub params: &'a ParamSet<S>,
    pub cfg: &'a ModelConfig,
    pub train: bool,
    pub dropout_rng: Option<ChaCha8Rng>,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    pub fn eval(params: &'a ParamSet<S>, cfg: &'a ModelConfig) -> Self {
        Ctx {
            g: Graph::new(),
            params,
            cfg,
            train: false,
            dropout_rng: None,
        }
    }

    pub fn train(params: &'a ParamSet<S>, cfg: &'a ModelConfig, rng: ChaCha8Rng) -> Self {
        Ctx {
            g: Graph::new(),
            params,
            cfg,
            train: true,
            dropout_rng: Some(rng),
        }
    }

    /// Parameter leaf by name.
    pub fn p(&mut self, name: &str) -> Result<NodeId> {
        let slot = self.params.slot(name).ok_or_else(|| {
            crate::error::Error::State(format!("unknown parameter: {name}"))
        })?;
        Ok(self.g.param(self.params, slot))
    }

    pub fn input(&mut self, t: Tensor<S>) -> NodeId {
        self.g.input(t)
    }

    pub fn dropout(&mut self, x: NodeId) -> NodeId {
        let rate = self.cfg.dropout;
        if !self.train || rate <= 0.0 {
            return x;
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        let keep = 1.0 - rate;
        let shape = self.g.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let inv = S::from_f64(1.0 / keep);
        let data: Vec<S> = (0..n)
            .map(|_| {
                if rng.gen_range(0.0..1.0) < keep {
                    inv
                } else {
                    S::zero()
                }
            })
            .collect();
        let mask = self.input(Tensor::new(shape, data).expect("mask shape"));
        self.g.mul(x, mask).expect("same shape")
    }

    pub fn linear(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let w = self.p(&format!("{prefix}_w"))?;
        let b = self.p(&format!("{prefix}_b"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add_row(y, b)
    }

    pub fn conv(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let w = self.p(&format!("{prefix}_w"))?;
        let b = self.p(&format!("{prefix}_b"))?;
        self.g.conv1d_same(x, w, b)
    }

    /// Plain affine layer norm with named gamma/beta vectors.
    pub fn ln_affine(&mut self, x: NodeId, gamma: &str, beta: &str) -> Result<NodeId> {
        let eps = S::from_f64(LAYER_NORM_EPS);
        let normed = self.g.layer_norm_rows(x, eps);
        let gn = self.p(gamma)?;
        let bn = self.p(beta)?;
        let scaled = self.g.mul_row(normed, gn)?;
        self.g.add_row(scaled, bn)
    }

    /// Conditional layer norm: scale and shift are generated from the
    /// speaker embedding, the locus of speaker adaptation.
    pub fn cond_ln(&mut self, x: NodeId, cln_prefix: &str, spk: NodeId) -> Result<NodeId> {
        let eps = S::from_f64(LAYER_NORM_EPS);
        let gw = self.p(&format!("{cln_prefix}.gamma_w"))?;
        let gb = self.p(&format!("{cln_prefix}.gamma_b"))?;
        let bw = self.p(&format!("{cln_prefix}.beta_w"))?;
        let bb = self.p(&format!("{cln_prefix}.beta_b"))?;
        let gamma = self.g.matmul(spk, gw)?;
        let gamma = self.g.add_row(gamma, gb)?;
        let beta = self.g.matmul(spk, bw)?;
        let beta = self.g.add_row(beta, bb)?;
        let normed = self.g.layer_norm_rows(x, eps);
        let scaled = self.g.mul_row(normed, gamma)?;
        self.g.add_row(scaled, beta)
    }

    /// Multi-head scaled-dot-product self-attention over the whole sequence.
    pub fn attention(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let d = self.cfg.hidden_dim;
        let heads = self.cfg.attention_heads;
        let dh = d / heads;
        let mk = |n: &str| format!("{prefix}.{n}");
        let wq = self.p(&mk("wq"))?;
        let bq = self.p(&mk("bq"))?;
        let wk = self.p(&mk("wk"))?;
        let bk = self.p(&mk("bk"))?;
        let wv = self.p(&mk("wv"))?;
        let bv = self.p(&mk("bv"))?;
        let q = self.g.matmul(x, wq)?;
        let q = self.g.add_row(q, bq)?;
        let k = self.g.matmul(x, wk)?;
        let k = self.g.add_row(k, bk)?;
        let v = self.g.matmul(x, wv)?;
        let v = self.g.add_row(v, bv)?;
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = self.g.slice_cols(q, lo, hi)?;
            let kh = self.g.slice_cols(k, lo, hi)?;
            let vh = self.g.slice_cols(v, lo, hi)?;
            let kt = self.g.transpose(kh);
            let scores = self.g.matmul(qh, kt)?;
            let scores = self.g.scale(scores, scale);
            let weights = self.g.softmax_rows(scores);
            head_outs.push(self.g.matmul(weights, vh)?);
        }
        let merged = self.g.concat_cols(&head_outs)?;
        let wo = self.p(&mk("wo"))?;
        let bo = self.p(&mk("bo"))?;
        let out = self.g.matmul(merged, wo)?;
        self.g.add_row(out, bo)
    }

    /// Self-attention sublayer + conv feed-forward sublayer, each with a
    /// residual connection and conditional layer norm (post-norm).
    pub fn transformer_block(&mut self, x: NodeId, prefix: &str, spk: NodeId) -> Result<NodeId> {
        let attn = self.attention(x, &format!("{prefix}.attn"))?;
        let attn = self.dropout(attn);
        let res = self.g.add(x, attn)?;
        let h = self.cond_ln(res, &format!("{prefix}.attn.cln"), spk)?;

        let c1 = self.conv(h, &format!("{prefix}.ffn.conv1"))?;
        let c1 = self.g.relu(c1);
        let c1 = self.dropout(c1);
        let c2 = self.conv(c1, &format!("{prefix}.ffn.conv2"))?;
        let c2 = self.dropout(c2);
        let res2 = self.g.add(h, c2)?;
        self.cond_ln(res2, &format!("{prefix}.ffn.cln"), spk)
    }

    /// The predictor stack shared by the FP predictor, pitch and duration
    /// predictors, and the speed router: conv → ReLU → layer norm → dropout,
    /// twice, then a linear output layer. Returns raw logits/values.
    pub fn predictor(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let c1 = self.conv(x, &format!("{prefix}.conv1"))?;
        let c1 = self.g.relu(c1);
        let c1 = self.ln_affine(c1, &format!("{prefix}.ln1_gamma"), &format!("{prefix}.ln1_beta"))?;
        let c1 = self.dropout(c1);
        let c2 = self.conv(c1, &format!("{prefix}.conv2"))?;
        let c2 = self.g.relu(c2);
        let c2 = self.ln_affine(c2, &format!("{prefix}.ln2_gamma"), &format!("{prefix}.ln2_beta"))?;
        let c2 = self.dropout(c2);
        let w = self.p(&format!("{prefix}.out_w"))?;
        let b = self.p(&format!("{prefix}.out_b"))?;
        let y = self.g.matmul(c2, w)?;
        self.g.add_row(y, b)
    }
}

/// Standard sinusoidal positional encoding table for `len` positions.
pub fn sinusoidal_pe<S: Scalar>(len: usize, d: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.set(pos, i, S::from_f64(v));
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::build_params;
    use crate::model::vocab::Vocab;
    use rand::SeedableRng;

    #[test]
    fn single_position_attends_to_itself() {
        let cfg = ModelConfig::tiny();
        let vocab = Vocab::build(["p00"]);
        let ps = build_params::<f64>(&cfg, &vocab, &["s".to_string()], 5).unwrap();
        let mut ctx = Ctx::eval(&ps, &cfg);
        let x = ctx.input(Tensor::full(&[1, cfg.hidden_dim], 0.3));
        // With one position, each head's softmax row is the single weight 1.0,
        // so attention output equals v·wo + biases.
        let out = ctx.attention(x, "encoder.block0.attn").unwrap();
        assert_eq!(ctx.g.value(out).shape(), &[1, cfg.hidden_dim]);
    }

    #[test]
    fn transformer_block_preserves_shape() {
        let cfg = ModelConfig::tiny();
        let vocab = Vocab::build(["p00"]);
        let ps = build_params::<f64>(&cfg, &vocab, &["s".to_string()], 5).unwrap();
        let mut ctx = Ctx::eval(&ps, &cfg);
        let x = ctx.input(Tensor::full(&[4, cfg.hidden_dim], 0.1));
        let spk = ctx.p("speaker_embedding.s").unwrap();
        let y = ctx.transformer_block(x, "encoder.block0", spk).unwrap();
        assert_eq!(ctx.g.value(y).shape(), &[4, cfg.hidden_dim]);
    }

    #[test]
    fn zero_projections_reduce_to_normalized_residual() {
        let cfg = ModelConfig::tiny();
        let vocab = Vocab::build(["p00"]);
        let mut ps = build_params::<f64>(&cfg, &vocab, &["s".to_string()], 5).unwrap();
        // Zero every block weight and the cln generators; gamma_b stays 1.
        for p in ps.iter_mut() {
            if p.name.starts_with("encoder.block0")
                && !p.name.ends_with("gamma_b")
            {
                p.value.fill(0.0);
            }
        }
        let mut ctx = Ctx::eval(&ps, &cfg);
        let data: Vec<f64> = (0..3 * cfg.hidden_dim).map(|i| (i % 7) as f64).collect();
        let xt = Tensor::new(vec![3, cfg.hidden_dim], data).unwrap();
        let x = ctx.input(xt.clone());
        let spk = ctx.p("speaker_embedding.s").unwrap();
        let y = ctx.transformer_block(x, "encoder.block0", spk).unwrap();
        // Attention and FFN outputs vanish, so the block is LN(LN(x)).
        let eps = LAYER_NORM_EPS;
        let once = crate::numerics::ops::layer_norm_rows(&xt, eps);
        let expected = crate::numerics::ops::layer_norm_rows(&once, eps);
        for (a, b) in ctx.g.value(y).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn dropout_disabled_in_eval_mode() {
        let cfg = ModelConfig::tiny();
        let vocab = Vocab::build(["p00"]);
        let ps = build_params::<f64>(&cfg, &vocab, &["s".to_string()], 5).unwrap();
        let mut ctx = Ctx::eval(&ps, &cfg);
        let x = ctx.input(Tensor::full(&[4, 8], 1.0));
        let y = ctx.dropout(x);
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_kept_entries() {
        let mut cfg = ModelConfig::tiny();
        cfg.dropout = 0.5;
        let vocab = Vocab::build(["p00"]);
        let ps = build_params::<f64>(&cfg, &vocab, &["s".to_string()], 5).unwrap();
        let rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::train(&ps, &cfg, rng);
        let x = ctx.input(Tensor::full(&[10, 10], 1.0));
        let y = ctx.dropout(x);
        let vals = ctx.g.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
        assert!(vals.iter().any(|&v| v == 0.0));
        assert!(vals.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pe_is_deterministic_and_bounded() {
        let a = sinusoidal_pe::<f32>(16, 8);
        let b = sinusoidal_pe::<f32>(16, 8);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }
}
