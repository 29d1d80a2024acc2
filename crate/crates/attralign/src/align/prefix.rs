//! Encoding attribute phrases through the frozen LM and turning the result
//! into aligned key/value prefix blocks the cache can install.

use super::mlp::AlignmentMlp;
use crate::error::{Error, Result};
use crate::lm::{EntryMeta, KvCache, Segment, TransformerLm};
use crate::tensor::{ops, Tape, Tensor};

/// Raw per-layer key/value representation of a phrase, straight from one
/// frozen-LM encoding pass (positions 0..t-1, no specials).
#[derive(Clone)]
pub struct RawKv {
    pub phrase: String,
    pub token_count: usize,
    /// One (keys, values) pair per LM layer, each [n_heads, t, d_head].
    pub layers: Vec<(Tensor, Tensor)>,
}

/// Encode a phrase with the frozen LM and collect each layer's K/V.
pub fn encode_attribute(lm: &TransformerLm, phrase: &str) -> Result<RawKv> {
    let ids = lm.vocab.encode(phrase);
    if ids.is_empty() {
        return Err(Error::config(format!(
            "attribute phrase {phrase:?} tokenizes to zero tokens"
        )));
    }
    let tape = Tape::inference();
    let mut cache = lm.empty_cache();
    lm.forward(&tape, &ids, &mut cache, 0)?;
    let layers = (0..lm.config.n_layers)
        .map(|l| {
            cache
                .text_kv(l)
                .ok_or_else(|| Error::structure(format!("layer {l} produced no cache entries")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawKv {
        phrase: phrase.to_string(),
        token_count: ids.len(),
        layers,
    })
}

/// An aligned prefix: per-layer key/value blocks plus the entry metadata the
/// cache needs (segment kind and the position ids from the encoding pass).
#[derive(Clone)]
pub struct AttributePrefix {
    /// One (keys, values) pair per LM layer, each [n_heads, t, d_head].
    pub layers: Vec<(Tensor, Tensor)>,
    pub entries: Vec<EntryMeta>,
    /// Source phrases with their segment kinds, in order.
    pub sources: Vec<(String, Segment)>,
}

impl AttributePrefix {
    pub fn empty() -> Self {
        AttributePrefix {
            layers: Vec::new(),
            entries: Vec::new(),
            sources: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Number of LM layers this prefix spans (0 when empty).
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn install_into(&self, cache: &mut KvCache) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        cache.install_prefix(self.layers.clone(), self.entries.clone())
    }
}

/// Apply an alignment function to a raw phrase encoding: per layer, per head,
/// per token, keys and values run through that layer's MLP. Shapes preserved.
pub fn align(
    tape: &Tape,
    mlp: &AlignmentMlp,
    raw: &RawKv,
    kind: Segment,
) -> Result<AttributePrefix> {
    if kind == Segment::Text {
        return Err(Error::config("a prefix segment cannot be Text"));
    }
    if mlp.n_lm_layers() != raw.layers.len() {
        return Err(Error::structure(format!(
            "alignment MLP spans {} layers, phrase encoding has {}",
            mlp.n_lm_layers(),
            raw.layers.len()
        )));
    }
    let layers = raw
        .layers
        .iter()
        .enumerate()
        .map(|(l, (k, v))| {
            Ok((mlp.apply_keys(tape, l, k)?, mlp.apply_values(tape, l, v)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = (0..raw.token_count)
        .map(|p| EntryMeta {
            segment: kind,
            position: p,
        })
        .collect();
    Ok(AttributePrefix {
        layers,
        entries,
        sources: vec![(raw.phrase.clone(), kind)],
    })
}

/// Concatenate aligned prefixes along the token axis, in the given order
/// (attribute parts before the domain part). An empty list is a valid empty
/// prefix, equal to the unconditional LM.
pub fn build_prefix(tape: &Tape, parts: &[&AttributePrefix]) -> Result<AttributePrefix> {
    let nonempty: Vec<&AttributePrefix> = parts.iter().copied().filter(|p| !p.is_empty()).collect();
    if nonempty.is_empty() {
        return Ok(AttributePrefix::empty());
    }
    if nonempty.len() == 1 {
        return Ok(nonempty[0].clone());
    }
    let n_layers = nonempty[0].n_layers();
    for p in &nonempty {
        if p.n_layers() != n_layers {
            return Err(Error::structure(format!(
                "prefix parts span {} vs {} layers",
                p.n_layers(),
                n_layers
            )));
        }
    }
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let ks: Vec<&Tensor> = nonempty.iter().map(|p| &p.layers[l].0).collect();
        let vs: Vec<&Tensor> = nonempty.iter().map(|p| &p.layers[l].1).collect();
        layers.push((
            ops::concat_tokens(tape, &ks)?,
            ops::concat_tokens(tape, &vs)?,
        ));
    }
    let mut entries = Vec::new();
    let mut sources = Vec::new();
    for p in &nonempty {
        entries.extend(p.entries.iter().copied());
        sources.extend(p.sources.iter().cloned());
    }
    Ok(AttributePrefix {
        layers,
        entries,
        sources,
    })
}

/// Forward over `ids` with the prefix installed before the text. Text
/// positions start at 0 regardless of prefix length. With an empty prefix
/// this is exactly the unconditional forward.
pub fn conditional_logits(
    tape: &Tape,
    lm: &TransformerLm,
    prefix: &AttributePrefix,
    ids: &[u32],
) -> Result<Tensor> {
    let (logits, _) = conditional_logits_with_cache(tape, lm, prefix, ids)?;
    Ok(logits)
}

/// Same as [`conditional_logits`] but hands back the cache for inspection
/// (segment layout, position ids).
pub fn conditional_logits_with_cache(
    tape: &Tape,
    lm: &TransformerLm,
    prefix: &AttributePrefix,
    ids: &[u32],
) -> Result<(Tensor, KvCache)> {
    let mut cache = lm.empty_cache();
    prefix.install_into(&mut cache)?;
    let logits = lm.forward(tape, ids, &mut cache, 0)?;
    Ok((logits, cache))
}
