//! On-disk form of a toy world: everything lattice generation needs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ltlm_core::io::{read_alignments, read_symbol_table, read_transcripts, write_alignments, write_symbol_table, write_transcripts};
use ltlm_core::{SymbolTable, WordId};
use ltlm_latgen::world::{ToyWorld, NUM_CLASSES};
use ltlm_latgen::{DurationModel, FakeAcousticModel, Lexicon};

use crate::error::{io_err, CliError, Result};

pub const WORDS: &str = "words.txt";
pub const LEXICON: &str = "lexicon.txt";
pub const FAM_TRUE: &str = "fam.true";
pub const FAM_EST: &str = "fam.est";
pub const DURATIONS_TRUE: &str = "durations.true";
pub const DURATIONS_EST: &str = "durations.est";
pub const TRAIN_TEXT: &str = "train.txt";
pub const EVAL_TEXT: &str = "eval.txt";
pub const LABELED_ALI: &str = "labeled.ali";

/// A world as used by the pipeline. The true models generate evaluation
/// lattices; the estimated ones generate training lattices.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldData {
    pub table: SymbolTable,
    pub lexicon: Lexicon,
    pub fam_true: FakeAcousticModel,
    pub fam_est: FakeAcousticModel,
    pub durations_true: DurationModel,
    pub durations_est: DurationModel,
    pub train_texts: Vec<(String, Vec<WordId>)>,
    pub eval_texts: Vec<(String, Vec<WordId>)>,
    pub labeled_alignments: Vec<(String, Vec<u32>)>,
}

impl WorldData {
    pub fn from_world(world: &ToyWorld) -> Result<Self> {
        let (fam_est, durations_est) = world.estimated_models()?;
        Ok(Self {
            table: world.table.clone(),
            lexicon: world.lexicon.clone(),
            fam_true: world.fam.clone(),
            fam_est,
            durations_true: world.durations.clone(),
            durations_est,
            train_texts: world.train_texts.clone(),
            eval_texts: world.eval_texts.clone(),
            labeled_alignments: world.labeled_alignments.clone(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_file(&dir.join(WORDS), |w| Ok(write_symbol_table(&self.table, w)?))?;
        write_file(&dir.join(LEXICON), |w| Ok(self.lexicon.write(w, &self.table)?))?;
        write_file(&dir.join(FAM_TRUE), |w| Ok(self.fam_true.write(w)?))?;
        write_file(&dir.join(FAM_EST), |w| Ok(self.fam_est.write(w)?))?;
        write_file(&dir.join(DURATIONS_TRUE), |w| Ok(self.durations_true.write(w)?))?;
        write_file(&dir.join(DURATIONS_EST), |w| Ok(self.durations_est.write(w)?))?;
        write_file(&dir.join(TRAIN_TEXT), |w| write_texts(&self.train_texts, &self.table, w))?;
        write_file(&dir.join(EVAL_TEXT), |w| write_texts(&self.eval_texts, &self.table, w))?;
        write_file(&dir.join(LABELED_ALI), |w| Ok(write_alignments(&self.labeled_alignments, w)?))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let table = read_symbol_table(open(&dir.join(WORDS))?)?;
        let lexicon = Lexicon::read(open(&dir.join(LEXICON))?, &table, NUM_CLASSES)?;
        let fam_true = FakeAcousticModel::read(open(&dir.join(FAM_TRUE))?)?;
        let fam_est = FakeAcousticModel::read(open(&dir.join(FAM_EST))?)?;
        for fam in [&fam_true, &fam_est] {
            if fam.num_classes() != lexicon.num_classes() {
                return Err(CliError::Data(format!(
                    "FAM has {} classes, lexicon {}",
                    fam.num_classes(),
                    lexicon.num_classes()
                )));
            }
        }
        Ok(Self {
            durations_true: DurationModel::read(open(&dir.join(DURATIONS_TRUE))?)?,
            durations_est: DurationModel::read(open(&dir.join(DURATIONS_EST))?)?,
            train_texts: read_texts(&dir.join(TRAIN_TEXT), &table)?,
            eval_texts: read_texts(&dir.join(EVAL_TEXT), &table)?,
            labeled_alignments: read_alignments(open(&dir.join(LABELED_ALI))?)?,
            table,
            lexicon,
            fam_true,
            fam_est,
        })
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

/// Writes through a buffered file, reporting failures with the path.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    body(&mut w).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_texts<W: Write>(texts: &[(String, Vec<WordId>)], table: &SymbolTable, out: W) -> Result<()> {
    let rows: Vec<(String, Vec<String>)> = texts
        .iter()
        .map(|(id, words)| (id.clone(), table.ids_to_words(words)))
        .collect();
    Ok(write_transcripts(&rows, out)?)
}

/// Reads transcripts; unknown words are a data error.
pub fn read_texts(path: &Path, table: &SymbolTable) -> Result<Vec<(String, Vec<WordId>)>> {
    read_transcripts(open(path)?)?
        .into_iter()
        .map(|(id, words)| {
            let ids = words
                .iter()
                .map(|w| {
                    table
                        .id(w)
                        .ok_or_else(|| CliError::Data(format!("{}: unknown word {w:?} in {id}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id, ids))
        })
        .collect()
}
