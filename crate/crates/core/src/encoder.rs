//! Local-window transformer: a linear patch embedding followed by pre-norm
//! multi-head self-attention blocks over all tokens of one window, with
//! L2-normalised per-token outputs.

use rand::Rng;
use travgrid_nn::init::trunc_normal;
use travgrid_nn::{Graph, ParamSet, Scalar, Tensor, Var};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Flattened token length `M * M * C`.
    pub input_len: usize,
    /// Embedding width `D`.
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_len: 11 * 11 * 8,
            dim: 32,
            blocks: 8,
            heads: 4,
            mlp_ratio: 4,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.input_len == 0 || self.mlp_ratio == 0 {
            return Err(CoreError::Config(
                "input_len and mlp_ratio must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Tensors per block, in storage order.
pub const BLOCK_PARAMS: [&str; 16] = [
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_g", "ln2_b", "w1", "b1",
    "w2", "b2",
];

const EMBED_W: usize = 0;
const EMBED_B: usize = 1;

fn block_index(block: usize, name: &str) -> usize {
    2 + block * BLOCK_PARAMS.len()
        + BLOCK_PARAMS
            .iter()
            .position(|n| *n == name)
            .expect("known block parameter")
}

#[derive(Clone, Debug)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.dim, config.dim * config.mlp_ratio);
        let std = config.init_std;
        let mut params = ParamSet::new();
        params.push("embed_w", trunc_normal(config.input_len, d, std, rng));
        params.push("embed_b", Tensor::zeros(1, d));
        for b in 0..config.blocks {
            for name in BLOCK_PARAMS {
                let t = match name {
                    "ln1_g" | "ln2_g" => Tensor::full(1, d, T::one()),
                    "wq" | "wk" | "wv" | "wo" => trunc_normal(d, d, std, rng),
                    "w1" => trunc_normal(d, h, std, rng),
                    "w2" => trunc_normal(h, d, std, rng),
                    "b1" => Tensor::zeros(1, h),
                    _ => Tensor::zeros(1, d),
                };
                params.push(format!("block{b}.{name}"), t);
            }
        }
        Ok(Encoder { config, params })
    }

    /// Rebuilds an encoder around loaded parameters after checking the layout.
    pub fn from_params(config: EncoderConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let expect = 2 + config.blocks * BLOCK_PARAMS.len();
        if params.len() != expect {
            return Err(CoreError::Shape(format!(
                "encoder expects {expect} tensors, checkpoint has {}",
                params.len()
            )));
        }
        let (d, h) = (config.dim, config.dim * config.mlp_ratio);
        let shape_ok = params.get(EMBED_W).shape() == (config.input_len, d)
            && (0..config.blocks).all(|b| {
                params.get(block_index(b, "w1")).shape() == (d, h)
                    && params.get(block_index(b, "wq")).shape() == (d, d)
            });
        if !shape_ok {
            return Err(CoreError::Shape(format!(
                "checkpoint shapes do not match input_len={} dim={} mlp={}",
                config.input_len, d, h
            )));
        }
        Ok(Encoder { config, params })
    }

    /// Puts every parameter on the tape, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    /// `X * W_e + b_e`.
    pub fn embed(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let len = g.value(x).cols();
        if len != self.config.input_len {
            return Err(CoreError::Shape(format!(
                "token length {len}, encoder expects {}",
                self.config.input_len
            )));
        }
        let e = g.matmul(x, p[EMBED_W])?;
        Ok(g.add_row(e, p[EMBED_B])?)
    }

    fn affine_norm(&self, g: &mut Graph<T>, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let n = g.layer_norm(x);
        let s = g.mul_row(n, gain)?;
        Ok(g.add_row(s, bias)?)
    }

    fn linear(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }

    /// Multi-head attention of block `block` over all rows of `z`.
    pub fn attention(&self, g: &mut Graph<T>, p: &[Var], block: usize, z: Var) -> Result<Var> {
        let at = |name| p[block_index(block, name)];
        let q = Self::linear(g, z, at("wq"), at("bq"))?;
        let k = Self::linear(g, z, at("wk"), at("bk"))?;
        let v = Self::linear(g, z, at("wv"), at("bv"))?;
        let hd = self.config.head_dim();
        let inv = T::one() / T::from_usize(hd).unwrap().sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice_cols(q, h * hd, hd)?;
            let kh = g.slice_cols(k, h * hd, hd)?;
            let vh = g.slice_cols(v, h * hd, hd)?;
            let raw = g.matmul_nt(qh, kh)?;
            let logits = g.scale(raw, inv);
            if !g.value(logits).is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "attention logits of block {block}, head {h}"
                )));
            }
            let a = g.softmax(logits);
            heads.push(g.matmul(a, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        Self::linear(g, cat, at("wo"), at("bo"))
    }

    fn mlp(&self, g: &mut Graph<T>, p: &[Var], block: usize, z: Var) -> Result<Var> {
        let at = |name| p[block_index(block, name)];
        let h = Self::linear(g, z, at("w1"), at("b1"))?;
        let a = g.gelu(h);
        Self::linear(g, a, at("w2"), at("b2"))
    }

    /// Token states after the last block, before normalisation.
    pub fn trunk(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut z = self.embed(g, p, x)?;
        for b in 0..self.config.blocks {
            let n1 =
                self.affine_norm(g, z, p[block_index(b, "ln1_g")], p[block_index(b, "ln1_b")])?;
            let att = self.attention(g, p, b, n1)?;
            let mid = g.add(att, z)?;
            let n2 = self.affine_norm(
                g,
                mid,
                p[block_index(b, "ln2_g")],
                p[block_index(b, "ln2_b")],
            )?;
            let m = self.mlp(g, p, b, n2)?;
            z = g.add(m, mid)?;
        }
        Ok(z)
    }

    /// Unit-norm embeddings, one row per token.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let z = self.trunk(g, p, x)?;
        Ok(g.l2_normalize(z))
    }

    /// Forward pass without gradients.
    pub fn embed_window(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let z = self.forward(&mut g, &p, xv)?;
        Ok(g.value(z).clone())
    }

    /// Zeroes the output projections of every attention and MLP branch.
    pub fn zero_branch_outputs(&mut self) {
        for b in 0..self.config.blocks {
            for name in ["wo", "bo", "w2", "b2"] {
                let i = block_index(b, name);
                let t = self.params.get_mut(i);
                *t = Tensor::zeros(t.rows(), t.cols());
            }
        }
    }

    /// `self <- m * self + (1 - m) * other`, element-wise.
    pub fn momentum_from(&mut self, other: &Encoder<T>, m: T) -> Result<()> {
        momentum_update(&mut self.params, &other.params, m)
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

/// `target <- m * target + (1 - m) * source` over matching parameter tables.
pub fn momentum_update<T: Scalar>(
    target: &mut ParamSet<T>,
    source: &ParamSet<T>,
    m: T,
) -> Result<()> {
    target.check_layout(source)?;
    let step = T::one() - m;
    for (t, s) in target.tensors_mut().iter_mut().zip(source.tensors()) {
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = if m == T::zero() {
                b
            } else {
                *a + step * (b - *a)
            };
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            input_len: 6,
            dim: 8,
            blocks: 2,
            heads: 2,
            mlp_ratio: 2,
            init_std: 0.3,
        }
    }

    #[test]
    fn parameter_count_for_default_shape() {
        let enc: Encoder<f32> =
            Encoder::new(EncoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(enc.params.len(), 2 + 8 * 16);
        let per_block = 4 * (32 * 32 + 32) + 2 * 2 * 32 + (32 * 128 + 128) + (128 * 32 + 32);
        assert_eq!(enc.params.num_elements(), 968 * 32 + 32 + 8 * per_block);
    }

    #[test]
    fn zero_input_and_bias_embed_to_zero() {
        let enc: Encoder<f64> = Encoder::new(small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(3, 6));
        let e = enc.embed(&mut g, &p, x).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc: Encoder<f64> = Encoder::new(small(), &mut rng).unwrap();
        *enc.params.get_mut(EMBED_B) = Tensor::from_fn(1, 8, |_, c| c as f64 * 0.1);
        let x = Tensor::from_fn(4, 6, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let e = enc.embed(&mut g, &p, xv).unwrap();
        let w = enc.params.get(EMBED_W);
        for r in 0..4 {
            for c in 0..8 {
                let mut s = c as f64 * 0.1;
                for k in 0..6 {
                    s += x.get(r, k) * w.get(k, c);
                }
                assert!((g.value(e).get(r, c) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_token_length_is_rejected() {
        let enc: Encoder<f64> = Encoder::new(small(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(enc.embed_window(&Tensor::zeros(2, 5)).is_err());
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let mut enc: Encoder<f64> =
            Encoder::new(small(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for name in ["wq", "wk"] {
            let i = block_index(0, name);
            *enc.params.get_mut(i) = Tensor::zeros(8, 8);
        }
        let z = Tensor::from_fn(5, 8, |r, c| (r as f64 - 2.0) * 0.3 + c as f64 * 0.01);
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let out = enc.attention(&mut g, &p, 0, zv).unwrap();
        // oracle: mean of V rows through the output projection
        let v = z.matmul(enc.params.get(block_index(0, "wv"))).unwrap();
        let mean = Tensor::from_fn(1, 8, |_, c| (0..5).map(|r| v.get(r, c)).sum::<f64>() / 5.0);
        let expect = mean.matmul(enc.params.get(block_index(0, "wo"))).unwrap();
        for r in 0..5 {
            for c in 0..8 {
                assert!((g.value(out).get(r, c) - expect.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_attention_is_projected_value() {
        let enc: Encoder<f64> = Encoder::new(small(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let z = Tensor::from_fn(1, 8, |_, c| c as f64 * 0.2 - 0.5);
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let out = enc.attention(&mut g, &p, 1, zv).unwrap();
        let v = z.matmul(enc.params.get(block_index(1, "wv"))).unwrap();
        let expect = v.matmul(enc.params.get(block_index(1, "wo"))).unwrap();
        for c in 0..8 {
            assert!((g.value(out).get(0, c) - expect.get(0, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_update_examples() {
        let mut k = ParamSet::new();
        k.push("a", Tensor::scalar(2.0f64));
        let mut q = ParamSet::new();
        q.push("a", Tensor::scalar(1.0f64));
        let mut same = k.clone();
        momentum_update(&mut same, &k.clone(), 0.999).unwrap();
        assert_eq!(same.get(0).item(), 2.0);
        let mut copy = k.clone();
        momentum_update(&mut copy, &q, 0.0).unwrap();
        assert_eq!(copy.get(0).item(), 1.0);
        momentum_update(&mut k, &q, 0.999).unwrap();
        assert!((k.get(0).item() - 1.999).abs() < 1e-12);
    }
}
