//! Rescoring reports, their text file form, and method comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use ltlm_core::{corpus_wer, CorpusWer, SymbolTable, WordId};
use serde::{Deserialize, Serialize};

use crate::RescoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub utterance_id: String,
    pub words: Vec<WordId>,
    pub cost: f64,
    pub first_pass_words: Vec<WordId>,
    pub first_pass_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoreReport {
    pub method: String,
    pub utterances: Vec<UtteranceResult>,
    pub model_calls: u64,
    /// Input length of every model call: arcs for lattice models, tokens
    /// (`<s>` plus words) for sequence models.
    pub call_lengths: Vec<usize>,
    /// Utterance id and reason.
    pub skipped: Vec<(String, String)>,
    /// Not written to report files, which must be reproducible.
    pub wall_time_secs: f64,
}

impl RescoreReport {
    pub fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            utterances: Vec::new(),
            model_calls: 0,
            call_lengths: Vec::new(),
            skipped: Vec::new(),
            wall_time_secs: 0.0,
        }
    }

    pub fn avg_call_length(&self) -> f64 {
        if self.call_lengths.is_empty() {
            0.0
        } else {
            self.call_lengths.iter().sum::<usize>() as f64 / self.call_lengths.len() as f64
        }
    }

    pub fn hypotheses(&self) -> BTreeMap<String, Vec<WordId>> {
        self.utterances.iter().map(|u| (u.utterance_id.clone(), u.words.clone())).collect()
    }

    pub fn first_pass_hypotheses(&self) -> BTreeMap<String, Vec<WordId>> {
        self.utterances
            .iter()
            .map(|u| (u.utterance_id.clone(), u.first_pass_words.clone()))
            .collect()
    }

    /// WER of the selected hypotheses over the references of the scored
    /// utterances.
    pub fn wer(&self, refs: &BTreeMap<String, Vec<WordId>>) -> Result<CorpusWer, RescoreError> {
        Ok(corpus_wer(&self.hypotheses(), &self.restricted(refs)?)?)
    }

    pub fn first_pass_wer(&self, refs: &BTreeMap<String, Vec<WordId>>) -> Result<CorpusWer, RescoreError> {
        Ok(corpus_wer(&self.first_pass_hypotheses(), &self.restricted(refs)?)?)
    }

    fn restricted(&self, refs: &BTreeMap<String, Vec<WordId>>) -> Result<BTreeMap<String, Vec<WordId>>, RescoreError> {
        self.utterances
            .iter()
            .map(|u| {
                refs.get(&u.utterance_id)
                    .map(|r| (u.utterance_id.clone(), r.clone()))
                    .ok_or_else(|| RescoreError::MissingReference(u.utterance_id.clone()))
            })
            .collect()
    }

    /// Tab-separated report: one `utt` record per utterance, then `skip`
    /// records and a `summary` block. Field order is fixed.
    pub fn write<W: Write>(
        &self,
        mut out: W,
        table: &SymbolTable,
        refs: Option<&BTreeMap<String, Vec<WordId>>>,
    ) -> Result<(), RescoreError> {
        let words = |ids: &[WordId]| table.ids_to_words(ids).join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "method\t{}", self.method);
        for u in &self.utterances {
            let _ = writeln!(
                s,
                "utt\t{}\tcost={}\tfirst_pass_cost={}\thyp={}\tfirst_pass={}",
                u.utterance_id,
                u.cost,
                u.first_pass_cost,
                words(&u.words),
                words(&u.first_pass_words)
            );
        }
        for (id, why) in &self.skipped {
            let _ = writeln!(s, "skip\t{id}\t{why}");
        }
        let _ = writeln!(s, "summary\tutterances={}", self.utterances.len());
        let _ = writeln!(s, "summary\tskipped={}", self.skipped.len());
        let _ = writeln!(s, "summary\tmodel_calls={}", self.model_calls);
        let _ = writeln!(s, "summary\tavg_call_length={}", self.avg_call_length());
        if let Some(refs) = refs {
            let w = self.wer(refs)?;
            let f = self.first_pass_wer(refs)?;
            let _ = writeln!(s, "summary\twer={:.2}\terrors={}\tref_words={}", w.wer, w.stats.errors(), w.stats.ref_len);
            let _ = writeln!(s, "summary\tfirst_pass_wer={:.2}\terrors={}", f.wer, f.stats.errors());
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// One row of a method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub utterances: usize,
    pub model_calls: u64,
    pub avg_seq_len: f64,
    pub wall_time_secs: f64,
    pub wer: Option<f64>,
    /// Differences against the first report.
    pub delta_model_calls: i64,
    pub delta_avg_seq_len: f64,
    pub delta_wer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>10} {:>12} {:>12} {:>10} {:>8} {:>12}",
            "method", "utterances", "model_calls", "avg_seq_len", "time_s", "WER", "d_calls"
        );
        for r in &self.rows {
            let wer = r.wer.map_or("-".to_string(), |w| format!("{w:.2}"));
            let _ = writeln!(
                s,
                "{:<16} {:>10} {:>12} {:>12.2} {:>10.3} {:>8} {:>12}",
                r.method, r.utterances, r.model_calls, r.avg_seq_len, r.wall_time_secs, wer, r.delta_model_calls
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

/// Compares reports over the same utterance set.
pub fn stats_compare(
    reports: &[&RescoreReport],
    refs: Option<&BTreeMap<String, Vec<WordId>>>,
) -> Result<Comparison, RescoreError> {
    if reports.len() < 2 {
        return Err(RescoreError::Malformed("at least two reports are needed".into()));
    }
    let ids = |r: &RescoreReport| r.utterances.iter().map(|u| u.utterance_id.clone()).collect::<BTreeSet<_>>();
    let base_ids = ids(reports[0]);
    for r in &reports[1..] {
        if ids(r) != base_ids {
            return Err(RescoreError::MismatchedUtteranceSets {
                first: reports[0].method.clone(),
                other: r.method.clone(),
            });
        }
    }
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        let wer = match refs {
            Some(refs) => Some(r.wer(refs)?.wer),
            None => None,
        };
        rows.push(ComparisonRow {
            method: r.method.clone(),
            utterances: r.utterances.len(),
            model_calls: r.model_calls,
            avg_seq_len: r.avg_call_length(),
            wall_time_secs: r.wall_time_secs,
            wer,
            delta_model_calls: 0,
            delta_avg_seq_len: 0.0,
            delta_wer: None,
        });
    }
    let base = rows[0].clone();
    for row in &mut rows {
        row.delta_model_calls = row.model_calls as i64 - base.model_calls as i64;
        row.delta_avg_seq_len = row.avg_seq_len - base.avg_seq_len;
        row.delta_wer = row.wer.zip(base.wer).map(|(a, b)| a - b);
    }
    Ok(Comparison { rows })
}
