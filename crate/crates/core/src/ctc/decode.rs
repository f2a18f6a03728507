use std::path::Path;

use super::{collapse, log_label_probability, Alphabet, LabelSequence};
use crate::error::{Error, Result};
use crate::model::DistributionSequence;

/// Per-frame argmax (lowest index on ties).
pub fn best_path(y: &DistributionSequence) -> Vec<usize> {
    y.rows()
        .map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Collapse of the per-frame argmax path.
pub fn best_path_decode(y: &DistributionSequence) -> LabelSequence {
    collapse(&best_path(y), y.blank())
}

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Finite word list for constrained decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<LabelSequence>,
}

impl Lexicon {
    pub fn new(words: Vec<LabelSequence>) -> Self {
        Lexicon { words }
    }

    pub fn from_strs<S: AsRef<str>>(alphabet: &Alphabet, words: &[S]) -> Result<Self> {
        words
            .iter()
            .map(|w| alphabet.encode(w.as_ref()))
            .collect::<Result<_>>()
            .map(Lexicon::new)
    }

    /// Parses one word per line, case-folded. Blank lines are skipped; lines
    /// with non-alphanumeric characters fail the load, listing every
    /// offending line number.
    pub fn parse(alphabet: &Alphabet, text: &str, origin: &Path) -> Result<Self> {
        let mut words = Vec::new();
        let mut bad = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let w = line.trim();
            if w.is_empty() {
                continue;
            }
            match alphabet.encode(w) {
                Ok(l) => words.push(l),
                Err(_) => bad.push((n + 1).to_string()),
            }
        }
        if !bad.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                message: format!("non-alphanumeric lexicon entries on lines {}", bad.join(", ")),
            });
        }
        Ok(Lexicon { words })
    }

    pub fn load(alphabet: &Alphabet, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(alphabet, &text, path)
    }

    pub fn words(&self) -> &[LabelSequence] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, l: &LabelSequence) -> bool {
        self.words.contains(l)
    }
}

/// Outcome of [`lexicon_match`].
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconMatch {
    pub word: LabelSequence,
    /// The unconstrained best-path prediction the match started from.
    pub prediction: LabelSequence,
    pub distance: usize,
    /// Number of lexicon words sharing the minimum distance.
    pub tied: usize,
}

/// Best-path prediction snapped to the nearest lexicon word.
///
/// Ties on edit distance go to the higher `p(word | y)`, then to the
/// lexicographically smaller word.
pub fn lexicon_match(y: &DistributionSequence, lexicon: &Lexicon) -> Result<LexiconMatch> {
    if lexicon.is_empty() {
        return Err(Error::InvalidArgument("lexicon decoding needs a nonempty lexicon".into()));
    }
    let prediction = best_path_decode(y);
    let distances: Vec<usize> = lexicon
        .words()
        .iter()
        .map(|w| edit_distance(prediction.as_slice(), w.as_slice()))
        .collect();
    let min = *distances.iter().min().expect("nonempty");
    let mut candidates: Vec<&LabelSequence> = lexicon
        .words()
        .iter()
        .zip(&distances)
        .filter(|(_, &d)| d == min)
        .map(|(w, _)| w)
        .collect();
    candidates.sort();
    candidates.dedup();
    let tied = candidates.len();
    let word = if tied == 1 {
        candidates[0].clone()
    } else {
        let mut best = candidates[0];
        let mut best_lp = log_label_probability(y, best);
        for &c in &candidates[1..] {
            let lp = log_label_probability(y, c);
            if lp > best_lp {
                best = c;
                best_lp = lp;
            }
        }
        best.clone()
    };
    Ok(LexiconMatch {
        word,
        prediction,
        distance: min,
        tied,
    })
}

/// The lexicon word chosen by [`lexicon_match`].
pub fn lexicon_decode(y: &DistributionSequence, lexicon: &Lexicon) -> Result<LabelSequence> {
    lexicon_match(y, lexicon).map(|m| m.word)
}
