//! Labeled examples and batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model input for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Input {
    Dense(Vec<f64>),
    /// Sorted, deduplicated token indices.
    Tokens(Vec<u32>),
}

impl Input {
    pub fn tokens(mut toks: Vec<u32>) -> Self {
        toks.sort_unstable();
        toks.dedup();
        Input::Tokens(toks)
    }

    pub fn mode(&self) -> InputMode {
        match self {
            Input::Dense(_) => InputMode::Dense,
            Input::Tokens(_) => InputMode::Sparse,
        }
    }

    pub fn as_tokens(&self) -> Option<&[u32]> {
        match self {
            Input::Tokens(t) => Some(t),
            Input::Dense(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Dense,
    Sparse,
}

/// One example: input, main-task label, hidden property bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub input: Input,
    pub label: usize,
    pub property: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    records: Vec<Record>,
    pub batch_id: u64,
}

impl LabeledBatch {
    /// Fails on an empty batch or mixed dense/sparse inputs.
    pub fn new(records: Vec<Record>, batch_id: u64) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyBatch)?.input.mode();
        if records.iter().any(|r| r.input.mode() != first) {
            return Err(Error::invalid("batch mixes dense and sparse inputs"));
        }
        Ok(Self { records, batch_id })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mode(&self) -> InputMode {
        self.records[0].input.mode()
    }

    pub fn main_labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.iter().map(|r| r.label)
    }

    pub fn property_bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.records.iter().map(|r| r.property)
    }

    pub fn property_count(&self) -> usize {
        self.records.iter().filter(|r| r.property).count()
    }

    /// A batch counts as a property batch if any example carries the property.
    pub fn has_property(&self) -> bool {
        self.records.iter().any(|r| r.property)
    }

    /// Union of token indices over all examples (empty for dense batches).
    pub fn token_set(&self) -> std::collections::BTreeSet<u32> {
        self.records.iter().filter_map(|r| r.input.as_tokens()).flatten().copied().collect()
    }
}
