//! Per-layer key/value memory for incremental decoding and prefix injection.
//!
//! Entries are ordered `[prefix][text]`. Prefix entries carry the position
//! ids and segment kinds they were built with; text entries always number
//! their positions from 0 regardless of prefix length.

use crate::error::{Error, Result};
use crate::tensor::{ops, Tape, Tensor};

/// What an entry in the cache represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    /// Aligned attribute representation.
    Attribute,
    /// Aligned corpus-domain representation.
    Domain,
    /// Ordinary text token.
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryMeta {
    pub segment: Segment,
    pub position: usize,
}

#[derive(Default)]
struct LayerKv {
    prefix_k: Option<Tensor>,
    prefix_v: Option<Tensor>,
    text_k: Option<Tensor>,
    text_v: Option<Tensor>,
}

pub struct KvCache {
    layers: Vec<LayerKv>,
    prefix_meta: Vec<EntryMeta>,
    text_len: usize,
    n_heads: usize,
    d_head: usize,
}

impl KvCache {
    pub fn new(n_layers: usize, n_heads: usize, d_head: usize) -> Self {
        KvCache {
            layers: (0..n_layers).map(|_| LayerKv::default()).collect(),
            prefix_meta: Vec::new(),
            text_len: 0,
            n_heads,
            d_head,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_meta.len()
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    pub fn total_len(&self) -> usize {
        self.prefix_len() + self.text_len
    }

    /// Per-entry metadata in cache order: prefix entries first, then text
    /// entries with positions 0..text_len.
    pub fn entries(&self) -> Vec<EntryMeta> {
        let mut out = self.prefix_meta.clone();
        out.extend((0..self.text_len).map(|p| EntryMeta {
            segment: Segment::Text,
            position: p,
        }));
        out
    }

    /// Install aligned prefix blocks: one (keys, values) pair per layer,
    /// shaped [n_heads, t, d_head], plus metadata for the t entries.
    /// Must be called before any text is appended.
    pub fn install_prefix(
        &mut self,
        per_layer: Vec<(Tensor, Tensor)>,
        meta: Vec<EntryMeta>,
    ) -> Result<()> {
        if self.text_len != 0 || self.prefix_len() != 0 {
            return Err(Error::structure("install_prefix on a non-empty cache"));
        }
        if per_layer.len() != self.layers.len() {
            return Err(Error::structure(format!(
                "prefix has {} layers, cache has {}",
                per_layer.len(),
                self.layers.len()
            )));
        }
        let t = meta.len();
        if t == 0 {
            return Ok(()); // empty prefix == unconditional
        }
        for (k, v) in &per_layer {
            let want = [self.n_heads, t, self.d_head];
            if k.shape() != want || v.shape() != want {
                return Err(Error::structure(format!(
                    "prefix block shape {:?}/{:?}, expected {:?}",
                    k.shape(),
                    v.shape(),
                    want
                )));
            }
        }
        for (layer, (k, v)) in self.layers.iter_mut().zip(per_layer) {
            layer.prefix_k = Some(k);
            layer.prefix_v = Some(v);
        }
        self.prefix_meta = meta;
        Ok(())
    }

    /// Append new text keys/values ([n_heads, t, d_head]) for one layer and
    /// return the full (prefix + text) keys and values to attend over.
    pub(crate) fn append_layer(
        &mut self,
        tape: &Tape,
        layer: usize,
        k: Tensor,
        v: Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let slot = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::structure(format!("layer {layer} out of range")))?;
        let new_k = match slot.text_k.take() {
            Some(old) => ops::concat_tokens(tape, &[&old, &k])?,
            None => k,
        };
        let new_v = match slot.text_v.take() {
            Some(old) => ops::concat_tokens(tape, &[&old, &v])?,
            None => v,
        };
        slot.text_k = Some(new_k.clone());
        slot.text_v = Some(new_v.clone());
        let full_k = match &slot.prefix_k {
            Some(p) => ops::concat_tokens(tape, &[p, &new_k])?,
            None => new_k,
        };
        let full_v = match &slot.prefix_v {
            Some(p) => ops::concat_tokens(tape, &[p, &new_v])?,
            None => new_v,
        };
        Ok((full_k, full_v))
    }

    /// Bump the text-entry count after all layers appended one forward chunk.
    pub(crate) fn note_text_appended(&mut self, t: usize) {
        self.text_len += t;
    }

    /// Handles to one layer's accumulated text keys/values.
    pub fn text_kv(&self, layer: usize) -> Option<(Tensor, Tensor)> {
        let slot = self.layers.get(layer)?;
        match (&slot.text_k, &slot.text_v) {
            (Some(k), Some(v)) => Some((k.clone(), v.clone())),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_order_prefix_then_text() {
        let mut cache = KvCache::new(1, 2, 4);
        let k = Tensor::zeros(vec![2, 3, 4], false);
        let v = Tensor::zeros(vec![2, 3, 4], false);
        let meta = vec![
            EntryMeta { segment: Segment::Attribute, position: 0 },
            EntryMeta { segment: Segment::Attribute, position: 1 },
            EntryMeta { segment: Segment::Domain, position: 0 },
        ];
        cache.install_prefix(vec![(k, v)], meta).unwrap();
        cache.note_text_appended(2);
        let entries = cache.entries();
        assert_eq!(entries.len(), 5);
        assert_eq!(entries[0].segment, Segment::Attribute);
        assert_eq!(entries[2].segment, Segment::Domain);
        assert_eq!(entries[3], EntryMeta { segment: Segment::Text, position: 0 });
        assert_eq!(entries[4], EntryMeta { segment: Segment::Text, position: 1 });
    }

    #[test]
    fn install_prefix_rejects_layer_mismatch() {
        let mut cache = KvCache::new(2, 2, 4);
        let k = Tensor::zeros(vec![2, 1, 4], false);
        let v = Tensor::zeros(vec![2, 1, 4], false);
        let meta = vec![EntryMeta { segment: Segment::Domain, position: 0 }];
        assert!(cache.install_prefix(vec![(k, v)], meta).is_err());
    }
}
