use std::fmt;

use crate::error::{Error, Result};

/// Ordered class indices, blank excluded.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn from_indices(indices: Vec<usize>) -> Self {
        LabelSequence(indices)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for LabelSequence {
    fn from(v: Vec<usize>) -> Self {
        LabelSequence(v)
    }
}

/// Map between characters and class indices.
///
/// The default alphabet holds the digits `0-9` followed by the case-folded
/// letters `a-z`; the blank takes the index after the last symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::alphanumeric()
    }
}

impl Alphabet {
    pub fn alphanumeric() -> Self {
        Alphabet {
            symbols: ('0'..='9').chain('a'..='z').collect(),
        }
    }

    /// Symbols excluding the blank.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Label classes plus the blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    /// Index of `c` after ASCII case folding.
    pub fn index_of(&self, c: char) -> Option<usize> {
        let c = c.to_ascii_lowercase();
        self.symbols.iter().position(|&s| s == c)
    }

    /// Case-folds and maps every character; any character outside the
    /// alphabet is an error.
    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::InvalidArgument(format!("character {c:?} in {text:?} is not alphanumeric")))
            })
            .collect::<Result<Vec<_>>>()
            .map(LabelSequence)
    }

    pub fn decode(&self, label: &LabelSequence) -> String {
        label
            .as_slice()
            .iter()
            .map(|&i| self.symbol(i).unwrap_or('?'))
            .collect()
    }

    /// Renders a per-frame path, blank as `-`.
    pub fn render_path(&self, path: &[usize]) -> String {
        path.iter()
            .map(|&i| if i == self.blank() { '-' } else { self.symbol(i).unwrap_or('?') })
            .collect()
    }
}

/// Displays with the default alphabet.
impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&Alphabet::alphanumeric().decode(self))
    }
}
