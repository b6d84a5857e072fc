//! Character vocabulary: a bijection between transcription characters and
//! class indices 0..C-2, with the CTC blank reserved as the last index.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Largest number of distinct characters a vocabulary may hold; one more
/// class is always reserved for the CTC blank, for 80 classes total.
pub const MAX_VOCAB_CHARS: usize = 79;

#[derive(Debug, Clone, PartialEq)]
pub enum VocabError {
    Empty,
    TooManyChars { count: usize },
    UnknownChar { ch: char },
    BadIndex { index: usize },
}

impl fmt::Display for VocabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VocabError::Empty => write!(f, "no characters to build a vocabulary from"),
            VocabError::TooManyChars { count } => write!(
                f,
                "{count} distinct characters exceed the {MAX_VOCAB_CHARS}-character limit"
            ),
            VocabError::UnknownChar { ch } => write!(f, "character {ch:?} not in vocabulary"),
            VocabError::BadIndex { index } => write!(f, "class index {index} out of range"),
        }
    }
}

impl core::error::Error for VocabError {}

/// Ordered character set; index order is code-point ascending so identical
/// corpora always produce identical vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl CharVocab {
    /// Builds from the distinct characters of the given transcriptions.
    pub fn build<'a>(transcriptions: impl IntoIterator<Item = &'a str>) -> Result<Self, VocabError> {
        let mut chars: Vec<char> = Vec::new();
        for t in transcriptions {
            for c in t.chars() {
                if let Err(pos) = chars.binary_search(&c) {
                    chars.insert(pos, c);
                }
            }
        }
        if chars.is_empty() {
            return Err(VocabError::Empty);
        }
        if chars.len() > MAX_VOCAB_CHARS {
            return Err(VocabError::TooManyChars { count: chars.len() });
        }
        Ok(CharVocab { chars })
    }

    /// Restores a vocabulary from its serialized character string.
    pub fn from_chars(s: &str) -> Result<Self, VocabError> {
        Self::build([s])
    }

    /// The characters in index order, as one string (checkpoint header form).
    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    /// Number of character classes, blank excluded.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Total class count including the blank: |chars| + 1.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 1
    }

    /// The blank class index (always last).
    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.chars.binary_search(&c).ok()
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        self.chars.get(index).copied()
    }

    /// Maps a transcription to class indices; fails on unknown characters.
    pub fn encode(&self, s: &str) -> Result<Vec<usize>, VocabError> {
        s.chars()
            .map(|c| self.index_of(c).ok_or(VocabError::UnknownChar { ch: c }))
            .collect()
    }

    /// Maps class indices back to a string; the blank index is rejected.
    pub fn decode(&self, indices: &[usize]) -> Result<String, VocabError> {
        indices
            .iter()
            .map(|&i| self.char_at(i).ok_or(VocabError::BadIndex { index: i }))
            .collect()
    }

    /// True when `s` contains only vocabulary characters.
    pub fn covers(&self, s: &str) -> bool {
        s.chars().all(|c| self.index_of(c).is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    #[test]
    fn build_sorts_and_dedups() {
        let v = CharVocab::build(["ab", "ba"]).unwrap();
        assert_eq!(v.as_string(), "ab");
        assert_eq!(v.blank(), 2);
        assert_eq!(v.num_classes(), 3);
    }

    #[test]
    fn ordering_is_code_point_ascending() {
        let v = CharVocab::build(["zB9 a"]).unwrap();
        assert_eq!(v.as_string(), " 9Baz");
    }

    #[test]
    fn encode_decode_roundtrip() {
        let v = CharVocab::build(["hello", "world"]).unwrap();
        let ids = v.encode("hold").unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "hold");
    }

    #[test]
    fn encode_rejects_unknown() {
        let v = CharVocab::build(["abc"]).unwrap();
        assert_eq!(v.encode("abd"), Err(VocabError::UnknownChar { ch: 'd' }));
    }

    #[test]
    fn decode_rejects_blank_index() {
        let v = CharVocab::build(["ab"]).unwrap();
        assert_eq!(v.decode(&[0, 2]), Err(VocabError::BadIndex { index: 2 }));
    }

    #[test]
    fn empty_and_oversized_rejected() {
        assert_eq!(CharVocab::build([]), Err(VocabError::Empty));
        let big: alloc::string::String = (0..80u32)
            .map(|i| char::from_u32('a' as u32 + i).unwrap())
            .collect();
        match CharVocab::build([big.as_str()]) {
            Err(VocabError::TooManyChars { count: 80 }) => {}
            other => panic!("unexpected: {:?}", format!("{other:?}")),
        }
    }

    #[test]
    fn serialized_form_roundtrips() {
        let v = CharVocab::build(["the quick brown fox"]).unwrap();
        let restored = CharVocab::from_chars(&v.as_string()).unwrap();
        assert_eq!(v, restored);
    }
}
