//! The trainable alignment function: a two-linear-layer ReLU MLP applied to
//! every per-head key vector and value vector of an encoded phrase.
//!
//! One parameter set per LM layer by default (each layer's KV lives in its
//! own representation space); a single set shared across layers and a
//! separate-keys/values parameterization are available as options.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ops, Tape, Tensor};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MlpOptions {
    /// Share one parameter set across all LM layers.
    #[serde(default)]
    pub shared_layers: bool,
    /// Use distinct parameters for keys and values.
    #[serde(default)]
    pub separate_kv: bool,
    /// Hidden width; 0 means 2 * d_head.
    #[serde(default)]
    pub hidden: usize,
}

impl Default for MlpOptions {
    fn default() -> Self {
        MlpOptions {
            shared_layers: false,
            separate_kv: false,
            hidden: 0,
        }
    }
}

impl MlpOptions {
    pub fn hidden_for(&self, d_head: usize) -> usize {
        if self.hidden == 0 {
            2 * d_head
        } else {
            self.hidden
        }
    }
}

#[derive(Clone)]
struct MlpLayer {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl MlpLayer {
    fn zero_out_init(d_head: usize, hidden: usize, rng: &mut Rng) -> Self {
        // W2 = 0 keeps the initial prefix an all-zero KV block, so early
        // training stays close to the unconditional LM.
        MlpLayer {
            w1: Tensor::rand_uniform(vec![d_head, hidden], 0.1, rng, true),
            b1: Tensor::zeros(vec![hidden], true),
            w2: Tensor::zeros(vec![hidden, d_head], true),
            b2: Tensor::zeros(vec![d_head], true),
        }
    }

    fn apply(&self, tape: &Tape, x2d: &Tensor) -> Result<Tensor> {
        let h = ops::add_bias(tape, &ops::matmul(tape, x2d, &self.w1)?, &self.b1)?;
        let h = ops::relu(tape, &h)?;
        ops::add_bias(tape, &ops::matmul(tape, &h, &self.w2)?, &self.b2)
    }
}

/// Alignment MLP covering all LM layers (for keys and values of one role:
/// attribute `F` or domain `F_d`).
#[derive(Clone)]
pub struct AlignmentMlp {
    k_layers: Vec<MlpLayer>,
    v_layers: Option<Vec<MlpLayer>>,
    options: MlpOptions,
    n_lm_layers: usize,
    d_head: usize,
}

impl AlignmentMlp {
    /// Fresh MLP: W2/b2 zero, W1 small uniform.
    pub fn new(n_lm_layers: usize, d_head: usize, options: MlpOptions, rng: &mut Rng) -> Self {
        let hidden = options.hidden_for(d_head);
        let count = if options.shared_layers { 1 } else { n_lm_layers };
        let make = |rng: &mut Rng| {
            (0..count)
                .map(|_| MlpLayer::zero_out_init(d_head, hidden, rng))
                .collect::<Vec<_>>()
        };
        let k_layers = make(rng);
        let v_layers = if options.separate_kv { Some(make(rng)) } else { None };
        AlignmentMlp {
            k_layers,
            v_layers,
            options,
            n_lm_layers,
            d_head,
        }
    }

    /// Exact identity configuration (test mode): W1 = [I; -I], W2 stacks
    /// [I; -I] back, so relu(x) - relu(-x) = x reproduces the input bit for
    /// bit.
    pub fn identity(n_lm_layers: usize, d_head: usize) -> Self {
        let hidden = 2 * d_head;
        let mut w1 = vec![0.0f32; d_head * hidden];
        for i in 0..d_head {
            w1[i * hidden + i] = 1.0;
            w1[i * hidden + d_head + i] = -1.0;
        }
        let mut w2 = vec![0.0f32; hidden * d_head];
        for j in 0..d_head {
            w2[j * d_head + j] = 1.0;
            w2[(d_head + j) * d_head + j] = -1.0;
        }
        let layer = MlpLayer {
            w1: Tensor::from_parts(vec![d_head, hidden], w1, true),
            b1: Tensor::zeros(vec![hidden], true),
            w2: Tensor::from_parts(vec![hidden, d_head], w2, true),
            b2: Tensor::zeros(vec![d_head], true),
        };
        AlignmentMlp {
            k_layers: vec![layer],
            v_layers: None,
            options: MlpOptions {
                shared_layers: true,
                separate_kv: false,
                hidden,
            },
            n_lm_layers,
            d_head,
        }
    }

    /// All-zero weights and biases (test mode): output is a zero block.
    pub fn zeros(n_lm_layers: usize, d_head: usize) -> Self {
        let hidden = 2 * d_head;
        let layer = MlpLayer {
            w1: Tensor::zeros(vec![d_head, hidden], true),
            b1: Tensor::zeros(vec![hidden], true),
            w2: Tensor::zeros(vec![hidden, d_head], true),
            b2: Tensor::zeros(vec![d_head], true),
        };
        AlignmentMlp {
            k_layers: vec![layer],
            v_layers: None,
            options: MlpOptions {
                shared_layers: true,
                separate_kv: false,
                hidden,
            },
            n_lm_layers,
            d_head,
        }
    }

    pub fn n_lm_layers(&self) -> usize {
        self.n_lm_layers
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn options(&self) -> MlpOptions {
        self.options
    }

    fn layer_for(&self, layers: &[MlpLayer], lm_layer: usize) -> MlpLayer {
        if self.options.shared_layers || layers.len() == 1 {
            layers[0].clone()
        } else {
            layers[lm_layer].clone()
        }
    }

    fn apply_stack(
        &self,
        tape: &Tape,
        layers: &[MlpLayer],
        lm_layer: usize,
        x: &Tensor,
    ) -> Result<Tensor> {
        let sh = x.shape().to_vec();
        if sh.len() != 3 || sh[2] != self.d_head {
            return Err(Error::structure(format!(
                "alignment MLP expects [heads, tokens, {}], got {:?}",
                self.d_head, sh
            )));
        }
        if lm_layer >= self.n_lm_layers {
            return Err(Error::structure(format!(
                "LM layer {lm_layer} out of range ({} layers)",
                self.n_lm_layers
            )));
        }
        let layer = self.layer_for(layers, lm_layer);
        let flat = ops::reshape(tape, x, vec![sh[0] * sh[1], sh[2]])?;
        let out = layer.apply(tape, &flat)?;
        ops::reshape(tape, &out, sh)
    }

    /// Transform key vectors of one LM layer: [heads, t, d_head] -> same shape.
    pub fn apply_keys(&self, tape: &Tape, lm_layer: usize, keys: &Tensor) -> Result<Tensor> {
        self.apply_stack(tape, &self.k_layers, lm_layer, keys)
    }

    /// Transform value vectors of one LM layer.
    pub fn apply_values(&self, tape: &Tape, lm_layer: usize, values: &Tensor) -> Result<Tensor> {
        match &self.v_layers {
            Some(v) => self.apply_stack(tape, v, lm_layer, values),
            None => self.apply_stack(tape, &self.k_layers, lm_layer, values),
        }
    }

    /// Parameters in canonical order.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let mut push_stack = |prefix: &str, layers: &[MlpLayer], out: &mut Vec<(String, Tensor)>| {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{prefix}.l{i}.w1"), l.w1.clone()));
                out.push((format!("{prefix}.l{i}.b1"), l.b1.clone()));
                out.push((format!("{prefix}.l{i}.w2"), l.w2.clone()));
                out.push((format!("{prefix}.l{i}.b2"), l.b2.clone()));
            }
        };
        push_stack("k", &self.k_layers, &mut out);
        if let Some(v) = &self.v_layers {
            push_stack("v", v, &mut out);
        }
        out
    }

    /// Rebuild from named tensors (checkpoint loading).
    pub fn from_named(
        n_lm_layers: usize,
        d_head: usize,
        options: MlpOptions,
        mut lookup: impl FnMut(&str) -> Result<Tensor>,
    ) -> Result<Self> {
        let count = if options.shared_layers { 1 } else { n_lm_layers };
        let mut load_stack = |prefix: &str, lookup: &mut dyn FnMut(&str) -> Result<Tensor>| {
            (0..count)
                .map(|i| {
                    Ok(MlpLayer {
                        w1: lookup(&format!("{prefix}.l{i}.w1"))?,
                        b1: lookup(&format!("{prefix}.l{i}.b1"))?,
                        w2: lookup(&format!("{prefix}.l{i}.w2"))?,
                        b2: lookup(&format!("{prefix}.l{i}.b2"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        };
        let k_layers = load_stack("k", &mut lookup)?;
        let v_layers = if options.separate_kv {
            Some(load_stack("v", &mut lookup)?)
        } else {
            None
        };
        Ok(AlignmentMlp {
            k_layers,
            v_layers,
            options,
            n_lm_layers,
            d_head,
        })
    }
}
