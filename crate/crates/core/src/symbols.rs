//! Bidirectional word-symbol table with reserved ids for the special tokens.

use std::collections::HashMap;

use thiserror::Error;

pub type WordId = u32;

pub const EPS: WordId = 0;
pub const BOS: WordId = 1;
pub const EOS: WordId = 2;
pub const UNK: WordId = 3;

pub const RESERVED: [(&str, WordId); 4] = [("<eps>", EPS), ("<s>", BOS), ("</s>", EOS), ("<unk>", UNK)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolError {
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("duplicate id {0}")]
    DuplicateId(WordId),
    #[error("reserved id {id} must map to {expected:?}")]
    ReservedIdViolation { id: WordId, expected: &'static str },
}

/// Token string to id mapping. Ids need not be contiguous but each assigned
/// id maps to exactly one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    by_id: Vec<Option<String>>,
    by_token: HashMap<String, WordId>,
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolTable {
    /// A table holding only the four reserved symbols.
    pub fn new() -> Self {
        let mut table = Self {
            by_id: Vec::new(),
            by_token: HashMap::new(),
        };
        for (tok, id) in RESERVED {
            table.insert_unchecked(tok, id);
        }
        table
    }

    /// Builds a table from explicit `(token, id)` pairs. The reserved ids
    /// must be present and correct.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, SymbolError>
    where
        I: IntoIterator<Item = (S, WordId)>,
        S: Into<String>,
    {
        let mut table = Self {
            by_id: Vec::new(),
            by_token: HashMap::new(),
        };
        for (tok, id) in pairs {
            let tok = tok.into();
            if table.by_token.contains_key(&tok) {
                return Err(SymbolError::DuplicateToken(tok));
            }
            if table.token(id).is_some() {
                return Err(SymbolError::DuplicateId(id));
            }
            table.insert_unchecked(&tok, id);
        }
        for (tok, id) in RESERVED {
            if table.token(id) != Some(tok) {
                return Err(SymbolError::ReservedIdViolation { id, expected: tok });
            }
        }
        Ok(table)
    }

    fn insert_unchecked(&mut self, tok: &str, id: WordId) {
        let idx = id as usize;
        if self.by_id.len() <= idx {
            self.by_id.resize(idx + 1, None);
        }
        self.by_id[idx] = Some(tok.to_string());
        self.by_token.insert(tok.to_string(), id);
    }

    /// Returns the id of `tok`, assigning the next free id if it is new.
    pub fn add(&mut self, tok: &str) -> WordId {
        if let Some(&id) = self.by_token.get(tok) {
            return id;
        }
        let id = self.by_id.len() as WordId;
        self.insert_unchecked(tok, id);
        id
    }

    pub fn id(&self, tok: &str) -> Option<WordId> {
        self.by_token.get(tok).copied()
    }

    /// Maps unknown tokens to `<unk>`.
    pub fn id_or_unk(&self, tok: &str) -> WordId {
        self.id(tok).unwrap_or(UNK)
    }

    pub fn token(&self, id: WordId) -> Option<&str> {
        self.by_id.get(id as usize).and_then(|t| t.as_deref())
    }

    /// Number of assigned ids.
    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }

    /// One past the largest assigned id; the size an embedding table needs.
    pub fn id_bound(&self) -> usize {
        self.by_id.len()
    }

    /// `(token, id)` pairs in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, WordId)> {
        self.by_id
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_deref().map(|t| (t, i as WordId)))
    }

    /// Ids of ordinary words (everything except the reserved symbols).
    pub fn word_ids(&self) -> impl Iterator<Item = WordId> + '_ {
        self.iter().map(|(_, id)| id).filter(|&id| id > UNK)
    }

    pub fn words_to_ids<S: AsRef<str>>(&self, words: &[S]) -> Vec<WordId> {
        words.iter().map(|w| self.id_or_unk(w.as_ref())).collect()
    }

    pub fn ids_to_words(&self, ids: &[WordId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// True for tokens that never count as words when scoring hypotheses.
#[inline]
pub fn is_auxiliary(id: WordId) -> bool {
    id == EPS || id == BOS || id == EOS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_table_has_reserved_symbols() {
        let t = SymbolTable::new();
        assert_eq!(t.id("<eps>"), Some(0));
        assert_eq!(t.id("<s>"), Some(1));
        assert_eq!(t.id("</s>"), Some(2));
        assert_eq!(t.id("<unk>"), Some(3));
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn add_is_idempotent() {
        let mut t = SymbolTable::new();
        let a = t.add("a");
        assert_eq!(a, 4);
        assert_eq!(t.add("a"), 4);
        assert_eq!(t.add("b"), 5);
        assert_eq!(t.token(5), Some("b"));
        assert_eq!(t.id_or_unk("zzz"), UNK);
    }

    #[test]
    fn from_pairs_rejects_bad_tables() {
        let base = [("<eps>", 0), ("<s>", 1), ("</s>", 2)];
        assert_eq!(
            SymbolTable::from_pairs(base).unwrap_err(),
            SymbolError::ReservedIdViolation {
                id: 3,
                expected: "<unk>"
            }
        );
        let dup = [("<eps>", 0), ("<s>", 1), ("</s>", 2), ("<unk>", 3), ("a", 3)];
        assert_eq!(
            SymbolTable::from_pairs(dup).unwrap_err(),
            SymbolError::DuplicateId(3)
        );
        let dup = [("<eps>", 0), ("<s>", 1), ("</s>", 2), ("<unk>", 3), ("<s>", 9)];
        assert!(matches!(
            SymbolTable::from_pairs(dup),
            Err(SymbolError::DuplicateToken(_))
        ));
    }
}
