//! Word pronunciations as acoustic-class sequences.
//!
//! File format: one `word<TAB>class class ...` line per pronunciation.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use ltlm_core::{SymbolTable, WordId};

use crate::LatgenError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    num_classes: usize,
    entries: BTreeMap<WordId, Vec<Vec<u32>>>,
}

impl Lexicon {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            entries: BTreeMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Adds a pronunciation; repeated pronunciations of a word are ignored.
    pub fn add(&mut self, word: WordId, pron: Vec<u32>) -> Result<(), LatgenError> {
        if pron.is_empty() {
            return Err(LatgenError::InvalidModel(format!("empty pronunciation for word {word}")));
        }
        if let Some(&class) = pron.iter().find(|&&c| c as usize >= self.num_classes) {
            return Err(LatgenError::InvalidClass {
                class,
                num_classes: self.num_classes,
            });
        }
        let prons = self.entries.entry(word).or_default();
        if !prons.contains(&pron) {
            prons.push(pron);
        }
        Ok(())
    }

    pub fn pronunciations(&self, word: WordId) -> Option<&[Vec<u32>]> {
        self.entries.get(&word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: WordId) -> bool {
        self.entries.contains_key(&word)
    }

    /// Words in increasing id order.
    pub fn words(&self) -> impl Iterator<Item = WordId> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (WordId, &[Vec<u32>])> {
        self.entries.iter().map(|(&w, p)| (w, p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read<R: Read>(reader: R, table: &SymbolTable, num_classes: usize) -> Result<Self, LatgenError> {
        let mut lex = Self::new(num_classes);
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (word, classes) = line.split_once('\t').ok_or_else(|| LatgenError::Parse {
                line: ln,
                message: "expected word<TAB>classes".into(),
            })?;
            let id = table.id(word).ok_or_else(|| LatgenError::Parse {
                line: ln,
                message: format!("word {word:?} missing from the symbol table"),
            })?;
            let pron = classes
                .split_whitespace()
                .map(|c| {
                    c.parse::<u32>().map_err(|_| LatgenError::Parse {
                        line: ln,
                        message: format!("invalid class {c:?}"),
                    })
                })
                .collect::<Result<Vec<u32>, _>>()?;
            lex.add(id, pron).map_err(|e| LatgenError::Parse {
                line: ln,
                message: e.to_string(),
            })?;
        }
        Ok(lex)
    }

    pub fn write<W: Write>(&self, mut out: W, table: &SymbolTable) -> Result<(), LatgenError> {
        let mut buf = String::new();
        for (&w, prons) in &self.entries {
            let tok = table
                .token(w)
                .ok_or_else(|| LatgenError::InvalidModel(format!("word id {w} missing from the symbol table")))?;
            for p in prons {
                let classes: Vec<String> = p.iter().map(u32::to_string).collect();
                buf.push_str(tok);
                buf.push('\t');
                buf.push_str(&classes.join(" "));
                buf.push('\n');
            }
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }
}

/// Fallback pronunciation that spells a token byte by byte.
pub fn spell(token: &str, num_classes: usize) -> Vec<u32> {
    token.bytes().map(|b| u32::from(b) % num_classes as u32).collect()
}
