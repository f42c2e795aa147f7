//! Frozen text encoders and the embedding bank.
//!
//! Three interchangeable backends produce caption vectors: a deterministic
//! hash encoder for fully offline runs (per-token seeded Gaussian draws,
//! summed and L2-normalized), a file bank of precomputed vectors exported
//! from any pretrained encoder, and a remote HTTP service. Nothing here is
//! trainable: training must leave backend state byte-identical.
//!
//! Vectors are stored and served as 32-bit floats and are not re-normalized
//! on load; the alignment loss normalizes internally.

mod bank;

pub use bank::{bank_load, bank_store, HEADER_LEN, MAGIC, VERSION};

use crate::captions::Tokenizer;
use crate::rng::stream_rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

/// Matches the text width of the ViT-B/16 family so hash and pretrained
/// configs are interchangeable.
pub const DEFAULT_EMBED_DIM: usize = 512;

/// Token limit shared by the backend family (the pretrained encoders accept
/// at most 77 tokens; the hash backend adopts the same limit).
pub const ENCODER_TOKEN_LIMIT: usize = 77;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("caption has {tokens} tokens, backend limit is {limit}")]
    OverBudget { tokens: usize, limit: usize },
    #[error("caption is empty")]
    EmptyCaption,
    #[error("vector dimension {got} does not match bank dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate image id '{0}' in embedding bank")]
    DuplicateId(String),
    #[error("no embedding stored for image id '{0}'")]
    UnknownId(String),
    #[error("embedding bank file is truncated: {0}")]
    Truncated(String),
    #[error("not an embedding bank file (bad magic)")]
    BadMagic,
    #[error("unsupported embedding bank version {0}")]
    BadVersion(u32),
    #[error("backend id must be ASCII and at most 40 bytes, got '{0}'")]
    BadBackendId(String),
    #[error("image id too long for bank row: {0} bytes")]
    IdTooLong(usize),
    #[error("remote embedding failure: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub backend_id: String,
    /// SHA-256 of the encoded caption; provenance only, not persisted in the
    /// bank file.
    pub caption_hash: Option<String>,
}

impl EmbeddingVector {
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Map image_id -> vector, all sharing one backend and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    pub backend_id: String,
    pub dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingBank {
    pub fn new(backend_id: &str, dim: usize) -> Self {
        Self {
            backend_id: backend_id.to_string(),
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, image_id: &str, values: Vec<f32>) -> Result<(), EmbedError> {
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        if self.entries.contains_key(image_id) {
            return Err(EmbedError::DuplicateId(image_id.to_string()));
        }
        self.entries.insert(image_id.to_string(), values);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.entries.get(image_id).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Lookup into a precomputed bank ("file backend").
pub fn encode_by_id(image_id: &str, bank: &EmbeddingBank) -> Result<EmbeddingVector, EmbedError> {
    bank.get(image_id)
        .map(|values| EmbeddingVector {
            values: values.to_vec(),
            backend_id: bank.backend_id.clone(),
            caption_hash: None,
        })
        .ok_or_else(|| EmbedError::UnknownId(image_id.to_string()))
}

/// A frozen caption encoder. Implementations expose no mutation API.
pub trait TextEncoder {
    fn encode(&self, caption: &str) -> Result<EmbeddingVector, EmbedError>;
    fn dim(&self) -> usize;
    fn backend_id(&self) -> String;
    /// The tokenizer the 77-token budget must be counted with.
    fn tokenizer(&self) -> Tokenizer;

    fn check_budget(&self, caption: &str) -> Result<(), EmbedError> {
        let tokens = self.tokenizer().count(caption);
        if tokens > ENCODER_TOKEN_LIMIT {
            return Err(EmbedError::OverBudget {
                tokens,
                limit: ENCODER_TOKEN_LIMIT,
            });
        }
        Ok(())
    }
}

/// Deterministic offline encoder: each lowercase alphanumeric token maps to
/// a Gaussian vector drawn from an RNG seeded by the token's SHA-256, the
/// token vectors are summed, and the sum is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    pub dim: usize,
}

impl HashEncoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn token_seed(token: &str) -> u64 {
        let digest = Sha256::digest(token.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = stream_rng(Self::token_seed(token), "hash-embed");
        (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    pub fn tokens(caption: &str) -> Vec<String> {
        caption
            .to_lowercase()
            .split(|ch: char| !ch.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }
}

impl TextEncoder for HashEncoder {
    fn encode(&self, caption: &str) -> Result<EmbeddingVector, EmbedError> {
        self.check_budget(caption)?;
        let tokens = Self::tokens(caption);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyCaption);
        }
        let mut sum = vec![0f64; self.dim];
        for token in &tokens {
            for (s, v) in sum.iter_mut().zip(self.token_vector(token)) {
                *s += v;
            }
        }
        let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::EmptyCaption);
        }
        Ok(EmbeddingVector {
            values: sum.iter().map(|v| (v / norm) as f32).collect(),
            backend_id: self.backend_id(),
            caption_hash: Some(format!("{:x}", Sha256::digest(caption.as_bytes()))),
        })
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_id(&self) -> String {
        format!("hash-c{}", self.dim)
    }

    fn tokenizer(&self) -> Tokenizer {
        Tokenizer::Whitespace
    }
}

#[derive(Debug, Clone, Serialize)]
struct RemoteRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Debug, Clone, Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f32>>,
}

/// HTTP backend: POST {texts: [...]} -> {vectors: [[float]]}. Responses are
/// cached per caption, so repeated encodes of the same text hit the service
/// once.
pub struct RemoteEncoder {
    pub endpoint: String,
    pub dim: usize,
    http: reqwest::blocking::Client,
    cache: std::cell::RefCell<BTreeMap<String, Vec<f32>>>,
}

impl RemoteEncoder {
    pub fn new(endpoint: &str, dim: usize) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            dim,
            http: reqwest::blocking::Client::new(),
            cache: Default::default(),
        }
    }
}

impl TextEncoder for RemoteEncoder {
    fn encode(&self, caption: &str) -> Result<EmbeddingVector, EmbedError> {
        self.check_budget(caption)?;
        if caption.is_empty() {
            return Err(EmbedError::EmptyCaption);
        }
        if let Some(hit) = self.cache.borrow().get(caption) {
            return Ok(EmbeddingVector {
                values: hit.clone(),
                backend_id: self.backend_id(),
                caption_hash: Some(format!("{:x}", Sha256::digest(caption.as_bytes()))),
            });
        }
        let response = self
            .http
            .post(&self.endpoint)
            .json(&RemoteRequest {
                texts: vec![caption],
            })
            .send()
            .map_err(|e| EmbedError::Remote(e.to_string()))?
            .error_for_status()
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        let parsed: RemoteResponse = response
            .json()
            .map_err(|e| EmbedError::Remote(format!("bad response body: {e}")))?;
        let values = parsed
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Remote("empty vectors array".into()))?;
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        self.cache
            .borrow_mut()
            .insert(caption.to_string(), values.clone());
        Ok(EmbeddingVector {
            values,
            backend_id: self.backend_id(),
            caption_hash: Some(format!("{:x}", Sha256::digest(caption.as_bytes()))),
        })
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_id(&self) -> String {
        format!("remote:{}", self.endpoint)
    }

    fn tokenizer(&self) -> Tokenizer {
        Tokenizer::Subword
    }
}

/// Encodes the refined caption of every record into a bank keyed by image id.
pub fn build_embedding_bank(
    records: &[crate::captions::CaptionRecord],
    encoder: &dyn TextEncoder,
) -> Result<EmbeddingBank, EmbedError> {
    let mut bank = EmbeddingBank::new(&encoder.backend_id(), encoder.dim());
    for record in records {
        let vector = encoder.encode(&record.refined_caption)?;
        bank.insert(&record.image_id, vector.values)?;
    }
    Ok(bank)
}
