//! Decoder-only transformer with learned absolute positions and a per-layer
//! key/value cache. Once frozen, parameters never receive gradient and the
//! model is safely shareable across concurrent generation requests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cache::KvCache;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::{Purpose, Rng};
use crate::tensor::{ops, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub activation: Activation,
}

impl ModelConfig {
    /// 4-layer desk-scale generation model (vocab_size is overwritten from
    /// the corpus at pretraining time).
    pub fn small() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size: 0,
            max_positions: 128,
            activation: Activation::Gelu,
        }
    }

    /// 6-layer model used as the external fluency scorer.
    pub fn fluency() -> Self {
        ModelConfig {
            n_layers: 6,
            n_heads: 4,
            d_model: 96,
            d_ff: 384,
            vocab_size: 0,
            max_positions: 128,
            activation: Activation::Gelu,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

pub(crate) struct Block {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub w_qkv: Tensor,
    pub b_qkv: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w_fc1: Tensor,
    pub b_fc1: Tensor,
    pub w_fc2: Tensor,
    pub b_fc2: Tensor,
}

pub struct TransformerLm {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub(crate) tok_emb: Tensor,
    pub(crate) pos_emb: Tensor,
    pub(crate) blocks: Vec<Block>,
    pub(crate) lnf_g: Tensor,
    pub(crate) lnf_b: Tensor,
    pub(crate) w_head: Tensor,
    frozen: bool,
}

impl std::fmt::Debug for TransformerLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformerLm")
            .field("config", &self.config)
            .field("frozen", &self.frozen)
            .finish()
    }
}

impl TransformerLm {
    /// Fresh model with N(0, 0.02) weights, zero biases, unit gains.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut rng = Rng::for_purpose(seed, Purpose::Init);
        let d = config.d_model;
        let std = 0.02;
        let w = |shape: Vec<usize>, rng: &mut Rng| Tensor::randn(shape, std, rng, true);
        let zeros = |shape: Vec<usize>| Tensor::zeros(shape, true);
        let ones = |n: usize| Tensor::from_parts(vec![n], vec![1.0; n], true);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1_g: ones(d),
                ln1_b: zeros(vec![d]),
                w_qkv: w(vec![d, 3 * d], &mut rng),
                b_qkv: zeros(vec![3 * d]),
                w_o: w(vec![d, d], &mut rng),
                b_o: zeros(vec![d]),
                ln2_g: ones(d),
                ln2_b: zeros(vec![d]),
                w_fc1: w(vec![d, config.d_ff], &mut rng),
                b_fc1: zeros(vec![config.d_ff]),
                w_fc2: w(vec![config.d_ff, d], &mut rng),
                b_fc2: zeros(vec![d]),
            })
            .collect();
        Ok(TransformerLm {
            tok_emb: w(vec![config.vocab_size, d], &mut rng),
            pos_emb: w(vec![config.max_positions, d], &mut rng),
            blocks,
            lnf_g: ones(d),
            lnf_b: zeros(vec![d]),
            w_head: w(vec![d, config.vocab_size], &mut rng),
            config,
            vocab,
            frozen: false,
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Freeze: parameters stop carrying gradient permanently.
    pub fn freeze(&mut self) {
        self.frozen = true;
        for p in self.parameters() {
            p.set_requires_grad(false);
        }
    }

    pub(crate) fn set_frozen_flag(&mut self, frozen: bool) {
        self.frozen = frozen;
        for p in self.parameters() {
            p.set_requires_grad(!frozen);
        }
    }

    /// Deep copy with trainable parameters (the source is untouched).
    pub fn clone_unfrozen(&self) -> Self {
        let mut copy = TransformerLm {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tok_emb: self.tok_emb.deep_clone(true),
            pos_emb: self.pos_emb.deep_clone(true),
            blocks: Vec::new(),
            lnf_g: self.lnf_g.deep_clone(true),
            lnf_b: self.lnf_b.deep_clone(true),
            w_head: self.w_head.deep_clone(true),
            frozen: false,
        };
        copy.blocks = self
            .blocks
            .iter()
            .map(|b| Block {
                ln1_g: b.ln1_g.deep_clone(true),
                ln1_b: b.ln1_b.deep_clone(true),
                w_qkv: b.w_qkv.deep_clone(true),
                b_qkv: b.b_qkv.deep_clone(true),
                w_o: b.w_o.deep_clone(true),
                b_o: b.b_o.deep_clone(true),
                ln2_g: b.ln2_g.deep_clone(true),
                ln2_b: b.ln2_b.deep_clone(true),
                w_fc1: b.w_fc1.deep_clone(true),
                b_fc1: b.b_fc1.deep_clone(true),
                w_fc2: b.w_fc2.deep_clone(true),
                b_fc2: b.b_fc2.deep_clone(true),
            })
            .collect();
        copy
    }

    /// Parameters in canonical (checkpoint) order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.clone()),
            ("pos_emb".to_string(), self.pos_emb.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in [
                ("ln1_g", &b.ln1_g),
                ("ln1_b", &b.ln1_b),
                ("w_qkv", &b.w_qkv),
                ("b_qkv", &b.b_qkv),
                ("w_o", &b.w_o),
                ("b_o", &b.b_o),
                ("ln2_g", &b.ln2_g),
                ("ln2_b", &b.ln2_b),
                ("w_fc1", &b.w_fc1),
                ("b_fc1", &b.b_fc1),
                ("w_fc2", &b.w_fc2),
                ("b_fc2", &b.b_fc2),
            ] {
                out.push((format!("h{i}.{name}"), t.clone()));
            }
        }
        out.push(("lnf_g".to_string(), self.lnf_g.clone()));
        out.push(("lnf_b".to_string(), self.lnf_b.clone()));
        out.push(("w_head".to_string(), self.w_head.clone()));
        out
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    /// SHA-256 over all parameter values and shapes in canonical order.
    pub fn param_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.named_parameters() {
            hasher.update(name.as_bytes());
            for dim in t.shape() {
                hasher.update((*dim as u64).to_le_bytes());
            }
            t.with_data(|d| {
                for v in d {
                    hasher.update(v.to_le_bytes());
                }
            });
        }
        hex_string(&hasher.finalize())
    }

    pub fn empty_cache(&self) -> KvCache {
        KvCache::new(self.config.n_layers, self.config.n_heads, self.config.d_head())
    }

    /// Causal forward over `ids`, appending to `cache`. `position_offset`
    /// must equal the number of text entries already cached; the new tokens
    /// take text positions offset..offset+t while attending to every prefix
    /// entry plus text entries at positions ≤ their own.
    pub fn forward(
        &self,
        tape: &Tape,
        ids: &[u32],
        cache: &mut KvCache,
        position_offset: usize,
    ) -> Result<Tensor> {
        if cache.n_layers() != self.config.n_layers {
            return Err(Error::structure(format!(
                "cache has {} layers, model has {}",
                cache.n_layers(),
                self.config.n_layers
            )));
        }
        if position_offset != cache.text_len() {
            return Err(Error::structure(format!(
                "position_offset {position_offset} does not match cache text length {}",
                cache.text_len()
            )));
        }
        let t = ids.len();
        if t == 0 {
            return Err(Error::config("forward over zero tokens"));
        }
        if position_offset + t > self.config.max_positions {
            return Err(Error::config(format!(
                "sequence length {} exceeds max_positions {}",
                position_offset + t,
                self.config.max_positions
            )));
        }
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let positions: Vec<u32> = (position_offset..position_offset + t).map(|p| p as u32).collect();
        let tok = ops::embedding(tape, &self.tok_emb, ids)?;
        let pos = ops::embedding(tape, &self.pos_emb, &positions)?;
        let mut x = ops::add(tape, &tok, &pos)?;

        let prefix_len = cache.prefix_len();
        let scale = 1.0 / (self.config.d_head() as f32).sqrt();
        for (layer_idx, block) in self.blocks.iter().enumerate() {
            let h = ops::layer_norm(tape, &x, &block.ln1_g, &block.ln1_b)?;
            let qkv = ops::add_bias(tape, &ops::matmul(tape, &h, &block.w_qkv)?, &block.b_qkv)?;
            let parts = ops::split_cols(tape, &qkv, &[d, d, d])?;
            let qh = ops::to_heads(tape, &parts[0], n_heads)?;
            let kh = ops::to_heads(tape, &parts[1], n_heads)?;
            let vh = ops::to_heads(tape, &parts[2], n_heads)?;
            let (full_k, full_v) = cache.append_layer(tape, layer_idx, kh, vh)?;
            let total = full_k.shape()[1];
            let scores = ops::scale(tape, &ops::bmm_nt(tape, &qh, &full_k)?, scale)?;
            let mask = causal_mask(t, total, prefix_len, position_offset);
            let scores = ops::add_mask(tape, &scores, &mask)?;
            let attn = ops::softmax_rows(tape, &scores)?;
            let ctx = ops::from_heads(tape, &ops::bmm_nn(tape, &attn, &full_v)?)?;
            let proj = ops::add_bias(tape, &ops::matmul(tape, &ctx, &block.w_o)?, &block.b_o)?;
            x = ops::add(tape, &x, &proj)?;

            let h2 = ops::layer_norm(tape, &x, &block.ln2_g, &block.ln2_b)?;
            let mid = ops::add_bias(tape, &ops::matmul(tape, &h2, &block.w_fc1)?, &block.b_fc1)?;
            let act = match self.config.activation {
                Activation::Gelu => ops::gelu(tape, &mid)?,
                Activation::Relu => ops::relu(tape, &mid)?,
            };
            let ff = ops::add_bias(tape, &ops::matmul(tape, &act, &block.w_fc2)?, &block.b_fc2)?;
            x = ops::add(tape, &x, &ff)?;
        }
        cache.note_text_appended(t);
        let h = ops::layer_norm(tape, &x, &self.lnf_g, &self.lnf_b)?;
        ops::matmul(tape, &h, &self.w_head)
    }

    /// Forward with a fresh, prefix-free cache.
    pub fn forward_full(&self, tape: &Tape, ids: &[u32]) -> Result<Tensor> {
        let mut cache = self.empty_cache();
        self.forward(tape, ids, &mut cache, 0)
    }

    /// exp2(mean over positions >= 1 of -log2 p(x_t | x_<t)). The text must
    /// tokenize to at least two tokens; no <bos> is prepended, so the first
    /// token is context only.
    pub fn perplexity(&self, text: &str) -> Result<f64> {
        let ids = self.vocab.encode(text);
        self.perplexity_ids(&ids)
    }

    pub fn perplexity_ids(&self, ids: &[u32]) -> Result<f64> {
        if ids.len() < 2 {
            return Err(Error::config(format!(
                "perplexity needs at least 2 tokens, got {}",
                ids.len()
            )));
        }
        let tape = Tape::inference();
        let logits = self.forward_full(&tape, &ids[..ids.len() - 1])?;
        let v = self.config.vocab_size;
        let mut total_log2 = 0.0f64;
        logits.with_data(|ld| {
            for (row_idx, &target) in ids[1..].iter().enumerate() {
                let row = &ld[row_idx * v..(row_idx + 1) * v];
                let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                let sum: f64 = row.iter().map(|&x| ((x as f64) - max).exp()).sum();
                let p = ((row[target as usize] as f64) - max).exp() / sum;
                total_log2 += -p.log2();
            }
        });
        Ok((total_log2 / (ids.len() - 1) as f64).exp2())
    }
}

/// Additive mask [t, total]: 0 where query i may attend entry j, -1e30
/// elsewhere. Prefix entries are always visible; text entries are visible
/// when their position does not exceed the query's absolute position.
fn causal_mask(t: usize, total: usize, prefix_len: usize, position_offset: usize) -> Tensor {
    let mut data = vec![0.0f32; t * total];
    for i in 0..t {
        let visible = prefix_len + position_offset + i + 1;
        for j in visible..total {
            data[i * total + j] = -1e30;
        }
    }
    Tensor::from_parts(vec![t, total], data, false)
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
