//! Shared checkpoint container.
//!
//! Layout: 8-byte magic `PALN0001`; little-endian u32 length of a UTF-8 JSON
//! header; the header itself; then the raw little-endian f32 payload. The
//! header lists every tensor (name, shape, dtype, byte offset, byte length
//! within the payload) and carries a CRC-32 of the payload. The same
//! container stores language models (`kind="lm"`), alignment functions
//! (`kind="alignment"`) and classifiers (`kind="classifier"`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{ModelConfig, TransformerLm, Vocabulary};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PALN0001";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset within the payload.
    pub offset: u64,
    /// Byte length within the payload.
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    pub model_config: Option<ModelConfig>,
    pub tensors: Vec<TensorEntry>,
    pub crc32: u32,
    /// Kind-specific metadata (vocabulary, labels, variant, effective config).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A fully loaded container: header plus named tensor data.
pub struct Container {
    pub header: Header,
    tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::config(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.tensors.iter().map(|(n, _, _)| n.as_str()).collect()
    }
}

/// IEEE CRC-32 (reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    const fn table() -> [u32; 256] {
        let mut t = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            t[i] = c;
            i += 1;
        }
        t
    }
    const TABLE: [u32; 256] = table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

/// Write a container. Tensors are laid out in the given order.
pub fn save_container(
    path: &Path,
    kind: &str,
    model_config: Option<&ModelConfig>,
    extra: serde_json::Value,
    tensors: &[(String, Tensor)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload: Vec<u8> = Vec::new();
    for (name, t) in tensors {
        let offset = payload.len() as u64;
        t.with_data(|d| {
            for v in d {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        });
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f32".to_string(),
            offset,
            len: payload.len() as u64 - offset,
        });
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        model_config: model_config.cloned(),
        tensors: entries,
        crc32: crc32(&payload),
        extra,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Read only the header (no payload validation). Recovers the model config
/// and metadata cheaply.
pub fn read_header(path: &Path) -> Result<Header> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    read_header_from(&mut r).map(|(h, _)| h)
}

fn read_header_from(r: &mut impl Read) -> Result<(Header, u64)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format { offset: 0, reason: "file shorter than magic".into() })?;
    if &magic != MAGIC {
        return Err(Error::Format { offset: 0, reason: format!("bad magic {magic:?}") });
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format { offset: 8, reason: "missing header length".into() })?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|_| Error::Format {
        offset: 12,
        reason: format!("truncated header (expected {header_len} bytes)"),
    })?;
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::Format {
        offset: 12,
        reason: format!("header is not valid JSON: {e}"),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 12,
            reason: format!("unsupported format_version {}", header.format_version),
        });
    }
    Ok((header, 12 + header_len as u64))
}

/// Load and validate a full container.
pub fn load_container(path: &Path) -> Result<Container> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let (header, payload_start) = read_header_from(&mut r)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected: u64 = header.tensors.iter().map(|t| t.offset + t.len).max().unwrap_or(0);
    if (payload.len() as u64) < expected {
        return Err(Error::Format {
            offset: payload_start + payload.len() as u64,
            reason: format!("payload truncated: {} of {expected} bytes", payload.len()),
        });
    }
    let actual_crc = crc32(&payload);
    if actual_crc != header.crc32 {
        return Err(Error::Format {
            offset: payload_start,
            reason: format!(
                "payload checksum mismatch: header {:#010x}, payload {:#010x}",
                header.crc32, actual_crc
            ),
        });
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        if entry.len as usize != numel * 4 {
            return Err(Error::Format {
                offset: payload_start + entry.offset,
                reason: format!(
                    "tensor {} length {} does not match shape {:?}",
                    entry.name, entry.len, entry.shape
                ),
            });
        }
        let bytes = &payload[entry.offset as usize..(entry.offset + entry.len) as usize];
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((entry.name.clone(), entry.shape.clone(), data));
    }
    Ok(Container { header, tensors })
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabMeta {
    tokens: Vec<String>,
    n_domains: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LmExtra {
    vocab: VocabMeta,
    frozen: bool,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    config_echo: serde_json::Value,
}

/// Save a language model (`kind="lm"`). `config_echo` is the effective run
/// configuration recorded for provenance.
pub fn save_lm(path: &Path, model: &TransformerLm, config_echo: serde_json::Value) -> Result<()> {
    let extra = LmExtra {
        vocab: VocabMeta {
            tokens: model.vocab.tokens().to_vec(),
            n_domains: model.vocab.n_domains(),
        },
        frozen: model.is_frozen(),
        config_echo,
    };
    save_container(
        path,
        "lm",
        Some(&model.config),
        serde_json::to_value(extra)?,
        &model.named_parameters(),
    )
}

/// Load a language model saved with [`save_lm`]. Bit-identical round trip.
pub fn load_lm(path: &Path) -> Result<TransformerLm> {
    let container = load_container(path)?;
    if container.header.kind != "lm" {
        return Err(Error::config(format!(
            "expected an lm checkpoint, found kind {:?}",
            container.header.kind
        )));
    }
    let config = container
        .header
        .model_config
        .clone()
        .ok_or_else(|| Error::config("lm checkpoint missing model_config"))?;
    let extra: LmExtra = serde_json::from_value(container.header.extra.clone())?;
    let vocab = Vocabulary::from_tokens(extra.vocab.tokens, extra.vocab.n_domains);
    let mut model = TransformerLm::new(config, vocab, 0)?;
    for (name, param) in model.named_parameters() {
        let (shape, data) = container.tensor(&name)?;
        if shape != param.shape() {
            return Err(Error::structure(format!(
                "tensor {name} shape {:?} does not match model {:?}",
                shape,
                param.shape()
            )));
        }
        param.with_data_mut(|d| d.copy_from_slice(data));
    }
    model.set_frozen_flag(extra.frozen);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{pretrain, Activation, LmTrainConfig};

    fn small_model() -> TransformerLm {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 0,
            max_positions: 16,
            activation: Activation::Gelu,
        };
        let texts = vec!["one two three".to_string(), "two three four".to_string()];
        let train = LmTrainConfig { epochs: 1, learning_rate: 1e-3, seed: 4 };
        pretrain(&cfg, &texts, &[], &train).unwrap().0
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = small_model();
        save_lm(&path, &model, serde_json::Value::Null).unwrap();
        let loaded = load_lm(&path).unwrap();
        assert_eq!(model.param_checksum(), loaded.param_checksum());
        assert_eq!(model.vocab.tokens(), loaded.vocab.tokens());
        assert_eq!(model.is_frozen(), loaded.is_frozen());
    }

    #[test]
    fn header_only_read_recovers_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = small_model();
        save_lm(&path, &model, serde_json::Value::Null).unwrap();
        let header = read_header(&path).unwrap();
        assert_eq!(header.kind, "lm");
        assert_eq!(header.model_config.unwrap(), model.config);
    }

    #[test]
    fn payload_corruption_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = small_model();
        save_lm(&path, &model, serde_json::Value::Null).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        match load_lm(&path) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("checksum")),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = small_model();
        save_lm(&path, &model, serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_lm(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_is_rejected_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOTMAGIC rest").unwrap();
        match load_lm(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn crc32_known_vector() {
        // standard test vector: crc32("123456789") = 0xCBF43926
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }
}
