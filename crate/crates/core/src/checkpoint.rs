//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `SUBPARSE`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header
//! (configuration, vocabularies, tensor table, RNG state, metadata) and
//! finally every parameter as a little-endian `f64`, in tensor-table order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::TensorSpec;
use crate::model::{Model, ModelConfig, ParserModel};
use crate::treebank::{LabelVocab, WordVocab};

const MAGIC: &[u8; 8] = b"SUBPARSE";
const VERSION: u32 = 1;

/// Position of a ChaCha8 generator, enough to resume the exact stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::contract("malformed RNG state in checkpoint");
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    words: Vec<String>,
    labels: Vec<String>,
    label_counts: Vec<u64>,
    tensors: Vec<TensorSpec>,
    rng: Option<RngState>,
    metadata: BTreeMap<String, serde_json::Value>,
}

/// A model with its RNG position and free-form metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub rng: Option<RngState>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint {
            model,
            rng: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arch = &self.model.arch;
        let header = Header {
            config: arch.config.clone(),
            words: arch.words.forms().to_vec(),
            labels: arch.labels.labels().to_vec(),
            label_counts: arch.labels.counts().to_vec(),
            tensors: arch.layout.tensors().to_vec(),
            rng: self.rng.clone(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::contract(format!("header serialization: {e}")))?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.model.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.model.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::contract(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        let words = WordVocab::from_forms(header.words)?;
        let labels = LabelVocab::from_parts(header.labels, header.label_counts)?;
        let arch = ParserModel::new(header.config, words, labels)?;
        if arch.layout.tensors() != header.tensors.as_slice() {
            return Err(bad("tensor table does not match the configured architecture"));
        }
        let data = &bytes[20 + hlen..];
        if data.len() != 8 * arch.layout.size() {
            return Err(bad(&format!(
                "expected {} parameters, found {} bytes",
                arch.layout.size(),
                data.len()
            )));
        }
        let params: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Ok(Checkpoint {
            model: Model { arch, params },
            rng: header.rng,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| Error::file(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn model() -> Model {
        let words = WordVocab::from_forms(vec!["<unk>".into(), "<root>".into(), "a".into()]).unwrap();
        let labels = LabelVocab::from_parts(vec!["root".into(), "obj".into()], vec![3, 0]).unwrap();
        let mut cfg = ModelConfig::toy();
        cfg.encoder.n_layers = 1;
        cfg.encoder.n_heads = 2;
        cfg.encoder.d_model = 4;
        cfg.encoder.d_ff = 4;
        cfg.arc_dim = 3;
        cfg.tag_dim = 2;
        Model::new(ParserModel::new(cfg, words, labels).unwrap(), 5)
    }

    #[test]
    fn round_trip_is_exact() {
        let mut ck = Checkpoint::new(model());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.next_u64();
        ck.rng = Some(RngState::capture(&rng));
        ck.metadata.insert("mode".into(), serde_json::json!("nonep"));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.params, ck.model.params);
        assert_eq!(back.metadata, ck.metadata);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut restored = back.rng.unwrap().restore().unwrap();
        assert_eq!(restored.next_u64(), rng.next_u64());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = Checkpoint::new(model()).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }
}
