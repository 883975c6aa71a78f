//! Text formats: lattice archives, symbol tables, transcripts and alignments.
//!
//! Lattice archive record grammar (UTF-8, LF line endings):
//!
//! ```text
//! <utterance-id>
//! <src> <dst> <token> <lm_cost> <ac_cost>     (zero or more arc lines)
//! <state> <final_cost>                       (one or more final lines)
//! <blank line>
//! ```
//!
//! Fields are separated by spaces or tabs. The initial state is state 0 and
//! the state count is one past the largest state mentioned. Costs are written
//! with the shortest decimal representation that parses back to the same
//! double, so `parse(write(a)) == a` bit for bit.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use thiserror::Error;

use crate::lattice::{validate, Arc, Lattice, LatticeError, StateId};
use crate::symbols::{SymbolError, SymbolTable, WordId, UNK};

/// Largest state index accepted by the parser.
pub const MAX_PARSED_STATE: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum LatticeIoError {
    #[error("line {line}, column {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("line {line}: duplicate utterance id {id:?}")]
    DuplicateUtteranceId { line: usize, id: String },
    #[error("line {line}, column {col}: unknown symbol {token:?}")]
    UnknownSymbol {
        line: usize,
        col: usize,
        token: String,
    },
    #[error("line {line}: {source}")]
    Symbol { line: usize, source: SymbolError },
    #[error("line {line}: invalid lattice: {source}")]
    InvalidLattice { line: usize, source: LatticeError },
    #[error("cannot serialize: {0}")]
    Unserializable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LatticeIoError {
    pub fn line(&self) -> Option<usize> {
        match self {
            LatticeIoError::Syntax { line, .. }
            | LatticeIoError::DuplicateUtteranceId { line, .. }
            | LatticeIoError::UnknownSymbol { line, .. }
            | LatticeIoError::Symbol { line, .. }
            | LatticeIoError::InvalidLattice { line, .. } => Some(*line),
            _ => None,
        }
    }
}

type Result<T> = std::result::Result<T, LatticeIoError>;

/// Ordered lattices with optional reference transcripts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatticeArchive {
    pub lattices: Vec<Lattice>,
    pub references: BTreeMap<String, Vec<WordId>>,
}

impl LatticeArchive {
    pub fn new(lattices: Vec<Lattice>) -> Self {
        Self {
            lattices,
            references: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.lattices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattices.is_empty()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&Lattice> {
        self.lattices.iter().find(|l| l.utterance_id == utterance_id)
    }
}

/// Whitespace-separated fields with their 1-based byte columns.
fn fields(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c == ' ' || c == '\t' {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> LatticeIoError {
    LatticeIoError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn parse_state(line: usize, (col, tok): (usize, &str)) -> Result<StateId> {
    let s: StateId = tok
        .parse()
        .map_err(|_| syntax(line, col, format!("expected a state index, found {tok:?}")))?;
    if s > MAX_PARSED_STATE {
        return Err(syntax(line, col, format!("state index {s} too large")));
    }
    Ok(s)
}

fn parse_cost(line: usize, (col, tok): (usize, &str)) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| syntax(line, col, format!("expected a cost, found {tok:?}")))?;
    if !v.is_finite() {
        return Err(syntax(line, col, format!("non-finite cost {tok:?}")));
    }
    Ok(v)
}

struct Pending {
    line: usize,
    lattice: Lattice,
}

fn finish_record(p: Pending, end_line: usize) -> Result<Lattice> {
    let mut lat = p.lattice;
    if lat.final_states.is_empty() {
        return Err(syntax(end_line, 1, format!("record {:?} has no final state", lat.utterance_id)));
    }
    lat.initial_state = 0;
    validate(&lat, false).map_err(|source| LatticeIoError::InvalidLattice { line: p.line, source })?;
    Ok(lat)
}

/// Lines of a UTF-8 stream, 1-based line numbers.
fn read_lines<R: Read>(mut reader: R) -> Result<Vec<String>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut lines = Vec::new();
    for (i, chunk) in bytes.split(|&b| b == b'\n').enumerate() {
        let s = std::str::from_utf8(chunk)
            .map_err(|e| syntax(i + 1, e.valid_up_to() + 1, "invalid UTF-8"))?;
        lines.push(s.to_string());
    }
    if bytes.last() == Some(&b'\n') {
        lines.pop();
    }
    Ok(lines)
}

/// Parses a lattice archive. In strict mode unknown tokens are an error,
/// otherwise they map to `<unk>`.
pub fn parse_lattice_text<R: BufRead>(
    reader: R,
    table: &SymbolTable,
    strict: bool,
) -> Result<LatticeArchive> {
    let lines = read_lines(reader)?;
    let mut archive = LatticeArchive::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut pending: Option<Pending> = None;
    for (idx, text) in lines.iter().enumerate() {
        let line = idx + 1;
        let f = fields(text);
        if f.is_empty() {
            if let Some(p) = pending.take() {
                archive.lattices.push(finish_record(p, line)?);
            }
            continue;
        }
        let Some(p) = pending.as_mut() else {
            if f.len() != 1 {
                return Err(syntax(line, f[1].0, "expected a single utterance id"));
            }
            let id = f[0].1.to_string();
            if !seen.insert(id.clone()) {
                return Err(LatticeIoError::DuplicateUtteranceId { line, id });
            }
            pending = Some(Pending {
                line,
                lattice: Lattice::new(id),
            });
            continue;
        };
        match f.len() {
            5 => {
                let src = parse_state(line, f[0])?;
                let dst = parse_state(line, f[1])?;
                let (col, tok) = f[2];
                let word = match table.id(tok) {
                    Some(w) => w,
                    None if strict => {
                        return Err(LatticeIoError::UnknownSymbol {
                            line,
                            col,
                            token: tok.to_string(),
                        })
                    }
                    None => UNK,
                };
                let lm_cost = parse_cost(line, f[3])?;
                let ac_cost = parse_cost(line, f[4])?;
                p.lattice.add_arc(Arc::new(src, dst, word, lm_cost, ac_cost));
            }
            2 => {
                let s = parse_state(line, f[0])?;
                let c = parse_cost(line, f[1])?;
                if p.lattice.final_states.contains_key(&s) {
                    return Err(syntax(line, f[0].0, format!("duplicate final state {s}")));
                }
                p.lattice.set_final(s, c);
            }
            n => {
                return Err(syntax(
                    line,
                    f[0].0,
                    format!("expected 5 fields (arc) or 2 fields (final), found {n}"),
                ))
            }
        }
    }
    if let Some(p) = pending.take() {
        archive.lattices.push(finish_record(p, lines.len() + 1)?);
    }
    Ok(archive)
}

pub fn parse_lattice_str(text: &str, table: &SymbolTable, strict: bool) -> Result<LatticeArchive> {
    parse_lattice_text(text.as_bytes(), table, strict)
}

/// Writes one record per lattice, in archive order.
pub fn write_lattice_text<W: Write>(
    archive: &LatticeArchive,
    table: &SymbolTable,
    mut out: W,
) -> Result<()> {
    for lat in &archive.lattices {
        write_lattice_record(lat, table, &mut out)?;
    }
    Ok(())
}

pub fn write_lattice_record<W: Write>(lat: &Lattice, table: &SymbolTable, out: &mut W) -> Result<()> {
    if lat.utterance_id.is_empty() || lat.utterance_id.contains([' ', '\t', '\n']) {
        return Err(LatticeIoError::Unserializable(format!(
            "utterance id {:?} is empty or contains whitespace",
            lat.utterance_id
        )));
    }
    if lat.initial_state != 0 {
        return Err(LatticeIoError::Unserializable(format!(
            "{}: initial state must be 0, topologically sort first",
            lat.utterance_id
        )));
    }
    let mentioned = lat
        .arcs
        .iter()
        .map(|a| a.src.max(a.dst) + 1)
        .chain(lat.final_states.keys().map(|&s| s + 1))
        .max()
        .unwrap_or(0);
    if mentioned != lat.num_states {
        return Err(LatticeIoError::Unserializable(format!(
            "{}: trailing states without arcs, trim first",
            lat.utterance_id
        )));
    }
    let mut buf = String::with_capacity(32 * (lat.arcs.len() + 2));
    buf.push_str(&lat.utterance_id);
    buf.push('\n');
    for a in &lat.arcs {
        let tok = table
            .token(a.word)
            .ok_or_else(|| LatticeIoError::Unserializable(format!("word id {} not in table", a.word)))?;
        buf.push_str(&format!("{} {} {} {} {}\n", a.src, a.dst, tok, a.lm_cost, a.ac_cost));
    }
    for (s, c) in &lat.final_states {
        buf.push_str(&format!("{s} {c}\n"));
    }
    buf.push('\n');
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn lattice_archive_to_string(archive: &LatticeArchive, table: &SymbolTable) -> Result<String> {
    let mut out = Vec::new();
    write_lattice_text(archive, table, &mut out)?;
    Ok(String::from_utf8(out).expect("writer emits UTF-8"))
}

/// Reads `token<TAB>id` lines.
pub fn read_symbol_table<R: Read>(reader: R) -> Result<SymbolTable> {
    let lines = read_lines(reader)?;
    let mut pairs = Vec::new();
    let mut tokens: HashMap<String, usize> = HashMap::new();
    let mut ids: HashSet<WordId> = HashSet::new();
    for (idx, text) in lines.iter().enumerate() {
        let line = idx + 1;
        if text.is_empty() {
            continue;
        }
        let mut parts = text.split('\t');
        let (tok, id) = match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(i), None) => (t, i),
            _ => return Err(syntax(line, 1, "expected token<TAB>id")),
        };
        if tok.is_empty() || tok.contains([' ', '\t']) {
            return Err(syntax(line, 1, format!("invalid token {tok:?}")));
        }
        let id: WordId = id
            .parse()
            .map_err(|_| syntax(line, tok.len() + 2, format!("invalid id {id:?}")))?;
        if tokens.insert(tok.to_string(), line).is_some() {
            return Err(LatticeIoError::Symbol {
                line,
                source: SymbolError::DuplicateToken(tok.to_string()),
            });
        }
        if !ids.insert(id) {
            return Err(LatticeIoError::Symbol {
                line,
                source: SymbolError::DuplicateId(id),
            });
        }
        pairs.push((tok.to_string(), id));
    }
    SymbolTable::from_pairs(pairs).map_err(|source| LatticeIoError::Symbol {
        line: lines.len() + 1,
        source,
    })
}

pub fn write_symbol_table<W: Write>(table: &SymbolTable, mut out: W) -> Result<()> {
    let mut buf = String::new();
    for (tok, id) in table.iter() {
        buf.push_str(tok);
        buf.push('\t');
        buf.push_str(&id.to_string());
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

fn read_keyed_lines<R: Read>(reader: R) -> Result<Vec<(usize, String, String)>> {
    let lines = read_lines(reader)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, text) in lines.iter().enumerate() {
        let line = idx + 1;
        if text.is_empty() {
            continue;
        }
        let Some((id, rest)) = text.split_once('\t') else {
            return Err(syntax(line, 1, "expected utterance-id<TAB>fields"));
        };
        if id.is_empty() || id.contains(' ') {
            return Err(syntax(line, 1, format!("invalid utterance id {id:?}")));
        }
        if !seen.insert(id.to_string()) {
            return Err(LatticeIoError::DuplicateUtteranceId {
                line,
                id: id.to_string(),
            });
        }
        out.push((line, id.to_string(), rest.to_string()));
    }
    Ok(out)
}

/// Reference or hypothesis transcripts: `utt_id<TAB>word word ...`.
pub type Transcripts = Vec<(String, Vec<String>)>;

pub fn read_transcripts<R: Read>(reader: R) -> Result<Transcripts> {
    Ok(read_keyed_lines(reader)?
        .into_iter()
        .map(|(_, id, rest)| (id, rest.split_whitespace().map(str::to_string).collect()))
        .collect())
}

pub fn write_transcripts<W: Write>(transcripts: &[(String, Vec<String>)], mut out: W) -> Result<()> {
    let mut buf = String::new();
    for (id, words) in transcripts {
        buf.push_str(id);
        buf.push('\t');
        buf.push_str(&words.join(" "));
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

/// Frame-level class alignments: `utt_id<TAB>class class ...`.
pub type Alignments = Vec<(String, Vec<u32>)>;

pub fn read_alignments<R: Read>(reader: R) -> Result<Alignments> {
    read_keyed_lines(reader)?
        .into_iter()
        .map(|(line, id, rest)| {
            let classes = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| syntax(line, id.len() + 2, format!("invalid class id {t:?}")))
                })
                .collect::<Result<Vec<u32>>>()?;
            Ok((id, classes))
        })
        .collect()
}

pub fn write_alignments<W: Write>(alignments: &[(String, Vec<u32>)], mut out: W) -> Result<()> {
    let mut buf = String::new();
    for (id, classes) in alignments {
        buf.push_str(id);
        buf.push('\t');
        let joined: Vec<String> = classes.iter().map(u32::to_string).collect();
        buf.push_str(&joined.join(" "));
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_with(words: &[&str]) -> SymbolTable {
        let mut t = SymbolTable::new();
        for w in words {
            t.add(w);
        }
        t
    }

    #[test]
    fn parses_single_record() {
        let t = table_with(&["a"]);
        let a = parse_lattice_str("utt1\n0 1 a 0.5 1.25\n1 0.0\n\n", &t, true).unwrap();
        assert_eq!(a.len(), 1);
        let l = &a.lattices[0];
        assert_eq!(l.utterance_id, "utt1");
        assert_eq!(l.arcs, vec![Arc::new(0, 1, 4, 0.5, 1.25)]);
        assert_eq!(l.final_states.get(&1), Some(&0.0));
        assert_eq!(l.num_states, 2);
    }

    #[test]
    fn empty_stream_is_empty_archive() {
        let a = parse_lattice_str("", &SymbolTable::new(), true).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn strict_mode_rejects_unknown_symbol() {
        let t = table_with(&["a"]);
        let err = parse_lattice_str("utt1\n0 1 zzz 0.1 0.1\n1 0\n", &t, true).unwrap_err();
        match err {
            LatticeIoError::UnknownSymbol { line, col, token } => {
                assert_eq!((line, col, token.as_str()), (2, 5, "zzz"));
            }
            e => panic!("unexpected {e:?}"),
        }
        let a = parse_lattice_str("utt1\n0 1 zzz 0.1 0.1\n1 0\n", &t, false).unwrap();
        assert_eq!(a.lattices[0].arcs[0].word, UNK);
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let t = table_with(&["a"]);
        let cases = [
            ("utt1\n0 1 a 0.5\n1 0\n", 2),
            ("utt1 extra\n", 1),
            ("utt1\n0 1 a x 0.5\n1 0\n", 2),
            ("utt1\n0 1 a inf 0.5\n1 0\n", 2),
            ("utt1\n0 1 a 0.5 0.5\n\n", 3),
            ("utt1\n0 1 a 0.5 0.5\n1 0\n1 0\n", 4),
        ];
        for (text, line) in cases {
            let e = parse_lattice_str(text, &t, true).unwrap_err();
            assert_eq!(e.line(), Some(line), "{text:?}: {e}");
        }
        let e = parse_lattice_str("u\n0 1 a 0 0\n1 0\n\nu\n0 1 a 0 0\n1 0\n", &t, true).unwrap_err();
        assert!(matches!(e, LatticeIoError::DuplicateUtteranceId { line: 5, .. }));
        let e = parse_lattice_str("u\n0 1 a 0 0\n1 0 a 0 0\n1 0\n", &t, true).unwrap_err();
        assert!(matches!(
            e,
            LatticeIoError::InvalidLattice {
                source: LatticeError::CyclicLattice,
                ..
            }
        ));
    }

    #[test]
    fn writes_canonical_records_in_order() {
        let t = table_with(&["a", "b"]);
        let text = "u1\n0 1 a 0.1 1e0\n1 0\n\nu2\n0 1 b 2.50 0\n1 -0.0\n\nu3\n0 0.25\n\n";
        let a = parse_lattice_str(text, &t, true).unwrap();
        assert_eq!(a.len(), 3);
        let out = lattice_archive_to_string(&a, &t).unwrap();
        assert_eq!(
            out,
            "u1\n0 1 a 0.1 1\n1 0\n\nu2\n0 1 b 2.5 0\n1 -0\n\nu3\n0 0.25\n\n"
        );
        assert_eq!(parse_lattice_str(&out, &t, true).unwrap(), a);
    }

    #[test]
    fn writer_rejects_unsorted_initial() {
        let t = table_with(&["a"]);
        let mut l = Lattice::new("u");
        l.add_arc(Arc::new(1, 0, 4, 0.0, 0.0));
        l.initial_state = 1;
        l.set_final(0, 0.0);
        let e = lattice_archive_to_string(&LatticeArchive::new(vec![l]), &t).unwrap_err();
        assert!(matches!(e, LatticeIoError::Unserializable(_)));
    }

    #[test]
    fn symbol_table_round_trip_and_errors() {
        let t = read_symbol_table("<eps>\t0\n<s>\t1\n</s>\t2\n<unk>\t3\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 4);
        let e = read_symbol_table("<eps>\t0\n<s>\t1\n</s>\t2\n".as_bytes()).unwrap_err();
        assert!(matches!(
            e,
            LatticeIoError::Symbol {
                source: SymbolError::ReservedIdViolation { id: 3, .. },
                ..
            }
        ));
        let e = read_symbol_table("<eps>\t0\n<s>\t1\n</s>\t2\n<unk>\t3\na\t4\na\t5\n".as_bytes())
            .unwrap_err();
        assert!(matches!(
            e,
            LatticeIoError::Symbol {
                line: 6,
                source: SymbolError::DuplicateToken(_)
            }
        ));
        let e = read_symbol_table("<eps>\t0\n<s>\t1\n</s>\t2\n<unk>\t3\na\t4\nb\t4\n".as_bytes())
            .unwrap_err();
        assert!(matches!(
            e,
            LatticeIoError::Symbol {
                source: SymbolError::DuplicateId(4),
                ..
            }
        ));
    }

    #[test]
    fn large_symbol_table_round_trip() {
        let mut t = SymbolTable::new();
        for i in 0..200_000 {
            t.add(&format!("w{i}"));
        }
        let mut out = Vec::new();
        write_symbol_table(&t, &mut out).unwrap();
        let back = read_symbol_table(out.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.len(), 200_004);
    }

    #[test]
    fn transcripts_and_alignments() {
        let refs = vec![
            ("u1".to_string(), vec!["a".to_string(), "b".to_string()]),
            ("u2".to_string(), vec![]),
        ];
        let mut out = Vec::new();
        write_transcripts(&refs, &mut out).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), "u1\ta b\nu2\t\n");
        assert_eq!(read_transcripts(out.as_slice()).unwrap(), refs);

        let ali = vec![("u1".to_string(), vec![1, 1, 1, 2, 2])];
        let mut out = Vec::new();
        write_alignments(&ali, &mut out).unwrap();
        assert_eq!(read_alignments(out.as_slice()).unwrap(), ali);
        assert!(read_alignments("u1\t1 x\n".as_bytes()).is_err());
        assert!(read_transcripts("no tab here\n".as_bytes()).is_err());
    }
}
