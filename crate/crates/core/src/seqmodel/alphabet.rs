use std::collections::HashMap;

use crate::error::{Error, Result};

/// Output labels. Index 0 is the CTC blank; symbol `i` maps to index `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Alphabet {
    /// Keeps the given order; duplicates are an error.
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i + 1).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate alphabet symbol U+{:04X}",
                    c as u32
                )));
            }
        }
        Ok(Alphabet { symbols, index })
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    /// Output layer width: symbols plus blank.
    pub fn size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        index.checked_sub(1).and_then(|i| self.symbols.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index_of(c).ok_or_else(|| {
                    Error::invalid(format!("symbol U+{:04X} is not in the alphabet", c as u32))
                })
            })
            .collect()
    }

    /// Blank and out-of-range indices are skipped.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels.iter().filter_map(|&i| self.symbol(i)).collect()
    }
}
