//! Instruction encoding: tokenization and the natural-language to
//! retrieval-prompt rewrite.
//!
//! The built-in encoder is deterministic. It resolves the instruction to an
//! item from a configured list, either by direct mention or through a table
//! of affordance cues ("keep textbooks" → a backpack), and emits the
//! retrieval template `a photo of a <item>`. An external language model can
//! be plugged in through [`provider`].

mod encoder;
pub mod provider;

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{encode_instruction, passthrough, PROMPT_PREFIX};
pub use provider::{external_prompt, LlmProvider};

#[derive(Debug, Error)]
pub enum InstructionError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("no alphanumeric tokens in {0:?}")]
    EmptyTokens(String),
    #[error("provider timed out or could not be reached: {0}")]
    ProviderTimeout(String),
    #[error("provider reply is malformed: {0}")]
    MalformedReply(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("affordance cue {cue:?} maps to {item:?}, which is not in the item list")]
    UnknownAffordanceItem { cue: String, item: String },
}

/// A raw natural-language instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instruction {
    raw: String,
}

impl Instruction {
    pub fn new(raw: impl Into<String>) -> Result<Self, InstructionError> {
        let raw = raw.into();
        if raw.trim().is_empty() {
            return Err(InstructionError::EmptyInstruction);
        }
        Ok(Self { raw })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }
}

/// Lowercased word tokens with their 64-bit FNV-1a ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub ids: Vec<u64>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// FNV-1a 64-bit hash of a token's UTF-8 bytes.
pub fn token_id(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Result<TokenSeq, InstructionError> {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(InstructionError::EmptyTokens(text.to_string()));
    }
    let ids = tokens.iter().map(|t| token_id(t)).collect();
    Ok(TokenSeq { tokens, ids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    Template,
    Affordance,
    Passthrough,
    ExternalLlm,
}

/// Retrieval query text and how it was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub source: PromptSource,
    pub matched_item: Option<String>,
}

/// Indirect cue phrase → item mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AffordanceTable {
    pub entries: BTreeMap<String, String>,
}

impl AffordanceTable {
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, v)| (k.into().to_lowercase(), v.into()))
                .collect(),
        }
    }

    /// Every item referenced by the table must be in `items`.
    pub fn validate(&self, items: &[String]) -> Result<(), InstructionError> {
        for (cue, item) in &self.entries {
            if !items.contains(item) {
                return Err(InstructionError::UnknownAffordanceItem {
                    cue: cue.clone(),
                    item: item.clone(),
                });
            }
        }
        Ok(())
    }

    /// First cue phrase (in table order) that maps to `item`.
    pub fn cue_for(&self, item: &str) -> Option<&str> {
        self.entries.iter().find(|(_, v)| *v == item).map(|(k, _)| k.as_str())
    }

    pub fn load(path: &Path) -> Result<Self, InstructionError> {
        let table: AffordanceTable = read_json(path)?;
        Ok(Self::new(table.entries))
    }
}

const BUNDLED_ITEMS: &str = include_str!("../../assets/items.json");
const BUNDLED_AFFORDANCES: &str = include_str!("../../assets/affordances.json");

/// The bundled goal item list.
pub fn default_items() -> Vec<String> {
    serde_json::from_str(BUNDLED_ITEMS).expect("bundled item list parses")
}

/// The bundled affordance table.
pub fn default_affordances() -> AffordanceTable {
    let table: AffordanceTable = serde_json::from_str(BUNDLED_AFFORDANCES).expect("bundled affordances parse");
    AffordanceTable::new(table.entries)
}

pub fn load_items(path: &Path) -> Result<Vec<String>, InstructionError> {
    read_json(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, InstructionError> {
    let text = std::fs::read_to_string(path).map_err(|source| InstructionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| InstructionError::Parse {
        path: path.display().to_string(),
        source,
    })
}
