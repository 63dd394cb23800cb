//! Behavior digests of externally visible outputs, with pluggable
//! comparators deciding what "the same response" means.
//!
//! Two built-ins: verbatim bytes, and an order-insensitive structured
//! (JSON) normalization that treats documents with permuted arrays or object
//! keys as equivalent.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// One replayed request/step and what the target answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub interaction_id: String,
    /// Domain outcome code: HTTP-style status or exit code.
    pub status_token: String,
    pub body: Vec<u8>,
}

impl Transcript {
    pub fn new(interaction_id: &str, status_token: &str, body: &[u8]) -> Self {
        Transcript {
            interaction_id: interaction_id.to_string(),
            status_token: status_token.to_string(),
            body: body.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparatorId {
    Verbatim,
    Structured,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComparatorError {
    #[error("unknown comparator: {0}")]
    Unknown(String),
}

impl std::str::FromStr for ComparatorId {
    type Err = ComparatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "verbatim" => Ok(ComparatorId::Verbatim),
            "structured" => Ok(ComparatorId::Structured),
            other => Err(ComparatorError::Unknown(other.to_string())),
        }
    }
}

impl fmt::Display for ComparatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComparatorId::Verbatim => "verbatim",
            ComparatorId::Structured => "structured",
        })
    }
}

/// Stored raw bodies are capped to bound journal size.
pub const RAW_BODY_CAP: usize = 1024 * 1024;

/// Content digest of one interaction after comparator normalization. Two
/// digests with equal `(status_token, body_hash)` compare as equivalent
/// under the comparator that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorDigest {
    pub interaction_id: String,
    pub status_token: String,
    pub body_hash: String,
    /// Set when a structured comparator got a malformed payload and fell
    /// back to verbatim hashing.
    pub fallback_verbatim: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_body_ref: Option<String>,
}

impl BehaviorDigest {
    pub fn equivalent(&self, other: &BehaviorDigest) -> bool {
        self.status_token == other.status_token && self.body_hash == other.body_hash
    }
}

/// Deterministic digest of one transcript under the given comparator.
pub fn digest_behavior(transcript: &Transcript, comparator: ComparatorId) -> BehaviorDigest {
    let (hash_input, fallback) = match comparator {
        ComparatorId::Verbatim => (transcript.body.clone(), false),
        ComparatorId::Structured => match serde_json::from_slice::<Value>(&transcript.body) {
            Ok(value) => (normalize(&value).to_string().into_bytes(), false),
            Err(_) => (transcript.body.clone(), true),
        },
    };
    let mut hasher = Sha256::new();
    hasher.update(&hash_input);
    let body_hash = format!("{:x}", hasher.finalize());
    let raw_body_ref = if transcript.body.len() <= RAW_BODY_CAP {
        Some(String::from_utf8_lossy(&transcript.body).into_owned())
    } else {
        None
    };
    BehaviorDigest {
        interaction_id: transcript.interaction_id.clone(),
        status_token: transcript.status_token.clone(),
        body_hash,
        fallback_verbatim: fallback,
        raw_body_ref,
    }
}

/// Canonical form: object keys sorted (serde_json already orders maps),
/// array elements sorted by their own canonical serialization.
fn normalize(value: &Value) -> Value {
    match value {
        Value::Array(items) => {
            let mut normalized: Vec<Value> = items.iter().map(normalize).collect();
            normalized.sort_by_key(|v| v.to_string());
            Value::Array(normalized)
        }
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), normalize(v)))
                .collect(),
        ),
        other => other.clone(),
    }
}
