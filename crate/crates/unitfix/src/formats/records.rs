//! JSON and CSV artifacts: phone maps, count scorers, PER reports, training
//! logs and corrector traces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unitfix_core::adapt::AdaptLogEntry;
use unitfix_core::corrector::IterationTrace;
use unitfix_core::mlm::{CountScorer, CountScorerConfig, TrainLogEntry};
use unitfix_core::phonemap::{CorpusPer, PhoneMap};
use unitfix_core::UnitVocab;

use crate::error::{Error, Result};
use crate::formats::text::write;

/// Label of the pooled row closing a PER report.
pub const CORPUS_ROW: &str = "<corpus>";

fn to_json<T: Serialize>(value: &T, what: &str) -> Result<Vec<u8>> {
    let mut out =
        serde_json::to_vec_pretty(value).map_err(|e| Error::Format(format!("{what}: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

pub fn write_phone_map(path: &Path, map: &PhoneMap) -> Result<()> {
    write(path, &to_json(map, "phone map")?)
}

pub fn read_phone_map(path: &Path) -> Result<PhoneMap> {
    let map: PhoneMap = from_json(path)?;
    map.validate()?;
    Ok(map)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRow {
    left: u8,
    right: u8,
    context: Vec<u32>,
    /// `(unit, count)` pairs in unit order.
    counts: Vec<(u32, u64)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountScorerFile {
    vocab: u32,
    config: CountScorerConfig,
    unigram: Vec<u64>,
    contexts: Vec<ContextRow>,
}

pub fn encode_count_scorer(scorer: &CountScorer) -> Result<Vec<u8>> {
    use unitfix_core::mlm::UnitScorer;
    let contexts = scorer
        .tables()
        .iter()
        .map(|((left, right, context), counts)| ContextRow {
            left: *left,
            right: *right,
            context: context.clone(),
            counts: counts.iter().map(|(&u, &c)| (u, c)).collect(),
        })
        .collect();
    let file = CountScorerFile {
        vocab: scorer.vocab().size(),
        config: *scorer.config(),
        unigram: scorer.unigram().to_vec(),
        contexts,
    };
    to_json(&file, "count scorer")
}

pub fn write_count_scorer(path: &Path, scorer: &CountScorer) -> Result<()> {
    write(path, &encode_count_scorer(scorer)?)
}

pub fn read_count_scorer(path: &Path) -> Result<CountScorer> {
    let file: CountScorerFile = from_json(path)?;
    let vocab = UnitVocab::new(file.vocab)?;
    let mut tables = BTreeMap::new();
    for row in file.contexts {
        let counts: BTreeMap<u32, u64> = row.counts.into_iter().collect();
        if tables
            .insert((row.left, row.right, row.context), counts)
            .is_some()
        {
            return Err(Error::Format(format!(
                "{}: repeated context",
                path.display()
            )));
        }
    }
    Ok(CountScorer::from_tables(
        vocab,
        &file.config,
        file.unigram,
        tables,
    )?)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))
}

/// `utt_id,per,S,D,I,ref_len`, then a pooled corpus row.
pub fn write_per_report(path: &Path, report: &CorpusPer) -> Result<()> {
    let row = |id: &str, c: &unitfix_core::phonemap::EditCounts| {
        vec![
            id.to_string(),
            format!("{:.4}", c.per()),
            c.subs.to_string(),
            c.dels.to_string(),
            c.ins.to_string(),
            c.ref_len.to_string(),
        ]
    };
    let rows = report
        .utterances
        .iter()
        .map(|u| row(&u.utt_id, &u.counts))
        .chain([row(CORPUS_ROW, &report.total)]);
    write(
        path,
        &csv_bytes(&["utt_id", "per", "S", "D", "I", "ref_len"], rows)?,
    )
}

/// Corpus PER from a report's trailing row.
pub fn read_per_summary(path: &Path) -> Result<f64> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut last = None;
    for rec in r.records() {
        last = Some(rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?);
    }
    let rec = last.filter(|r| r.get(0) == Some(CORPUS_ROW));
    let rec =
        rec.ok_or_else(|| Error::Format(format!("{}: no corpus summary row", path.display())))?;
    rec.get(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: malformed summary row", path.display())))
}

pub fn write_mlm_log(path: &Path, log: &[TrainLogEntry]) -> Result<()> {
    let rows = log
        .iter()
        .map(|e| vec![e.step.to_string(), e.loss.to_string(), e.lr.to_string()]);
    write(path, &csv_bytes(&["step", "loss", "lr"], rows)?)
}

pub fn write_adapt_log(path: &Path, log: &[AdaptLogEntry]) -> Result<()> {
    let rows = log.iter().map(|e| {
        vec![
            e.step.to_string(),
            e.loss.to_string(),
            e.masked_acc.to_string(),
            e.lr.to_string(),
        ]
    });
    write(
        path,
        &csv_bytes(&["step", "loss", "masked_acc", "lr"], rows)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub confidence: f64,
}

/// One JSON Lines record per utterance and iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub utt_id: String,
    pub iteration: usize,
    pub n_k: usize,
    pub m: usize,
    pub masked: Vec<Span>,
    pub filled: Vec<Span>,
    pub output: Vec<u32>,
}

impl TraceRecord {
    pub fn new(utt_id: &str, t: &IterationTrace) -> Self {
        let spans = |v: &[unitfix_core::corrector::SpanRecord]| {
            v.iter()
                .map(|s| Span {
                    start: s.start,
                    len: s.len,
                    confidence: s.confidence,
                })
                .collect()
        };
        Self {
            utt_id: utt_id.to_string(),
            iteration: t.iteration,
            n_k: t.n_k,
            m: t.m,
            masked: spans(&t.masked),
            filled: spans(&t.filled),
            output: t.output.clone(),
        }
    }
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(format!("trace: {e}")))?;
        out.push(b'\n');
    }
    write(path, &out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}
