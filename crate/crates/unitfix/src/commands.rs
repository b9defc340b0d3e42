//! The pipeline steps behind each subcommand. Every function reads its
//! inputs, writes its artifacts and returns a short human-readable summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use unitfix_core::adapt::{
    continual_pretrain, insert_adapters, masked_frame_accuracy, pretrain_base, trainable_report,
    Aligned,
};
use unitfix_core::corpus::{apply_accent_shift_with, generate, Dataset};
use unitfix_core::corrector::correct_all;
use unitfix_core::mlm::{
    fit_count_scorer, score_confidences, train_mlm, CountScorer, NeuralScorer, UnitScorer,
};
use unitfix_core::neural::{AdapterConfig, EncoderParams, InputKind};
use unitfix_core::phonemap::{corpus_per, frames_to_phones, learn_phone_map, CorpusPer, PhoneMap};
use unitfix_core::quantizer::{assign, fit_kmeans_with, Codebook};
use unitfix_core::{ClusterSequence, Executor, UnitVocab};

use crate::config::{AdaptSection, PipelineConfig, ScorerKind};
use crate::error::{Error, Result};
use crate::formats::binary::{
    decode_checkpoint, read_checkpoint, read_codebook, write_checkpoint, write_codebook, ENCP,
};
use crate::formats::corpus::{read_corpus, write_corpus, Corpus};
use crate::formats::records::{
    read_count_scorer, read_phone_map, write_adapt_log, write_count_scorer, write_mlm_log,
    write_per_report, write_phone_map, write_trace, TraceRecord,
};
use crate::formats::text::{
    read_sequences, read_symbols, write, write_confidences, write_sequences,
};

/// Subdirectories written by [`gen_corpus`].
pub const STANDARD: &str = "standard";
pub const ACCENTED: &str = "accented";
pub const HELDOUT: &str = "heldout";

/// Generates the standard, accented and held-out accented sets under `out`.
/// With seed `s` they draw from `s`, `s+1` and `s+3`; the two accent shifts
/// use `s+2` and `s+4`.
pub fn gen_corpus<E: Executor>(
    exec: &E,
    cfg: &PipelineConfig,
    out: &Path,
    heldout: usize,
) -> Result<String> {
    let c = &cfg.corpus;
    let lexicon = c.lexicon.build()?;
    let shift = c.shift.spec();
    let s = cfg.seed;
    let standard = generate(exec, &lexicon, c.standard_utts, c.words_per_utt, s, "std")?;
    write_corpus(&out.join(STANDARD), &lexicon, &standard)?;
    let mut summary = format!(
        "{}: {} utterances, {} frames",
        STANDARD,
        standard.len(),
        standard.total_frames()
    );
    let mut shifted = |n: usize, seed: u64, prefix: &str, dir: &str| -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        let base = generate(exec, &lexicon, n, c.words_per_utt, seed, prefix)?;
        let ds: Dataset =
            apply_accent_shift_with(exec, &base, &lexicon, &shift, seed.wrapping_add(1))?;
        write_corpus(&out.join(dir), &lexicon, &ds)?;
        summary.push_str(&format!(
            "\n{dir}: {} utterances, {} frames",
            ds.len(),
            ds.total_frames()
        ));
        Ok(())
    };
    shifted(c.accented_utts, s.wrapping_add(1), "acc", ACCENTED)?;
    shifted(heldout, s.wrapping_add(3), "held", HELDOUT)?;
    Ok(summary)
}

pub fn kmeans_fit<E: Executor>(
    exec: &E,
    cfg: &PipelineConfig,
    corpus: &Path,
    out: &Path,
) -> Result<String> {
    let corpus = read_corpus(corpus)?;
    let frames = corpus.stacked_features();
    let book = fit_kmeans_with(
        exec,
        &frames,
        corpus.feature_dim(),
        &cfg.quantizer.options(cfg.seed),
    )?;
    write_codebook(out, &book)?;
    Ok(format!(
        "{} centroids over {} frames, inertia {:.6}, {} Lloyd iterations",
        book.clusters,
        frames.len() / corpus.feature_dim(),
        book.inertia,
        book.history.len().saturating_sub(1)
    ))
}

fn assign_corpus<E: Executor>(
    exec: &E,
    book: &Codebook,
    corpus: &Corpus,
) -> Result<Vec<ClusterSequence>> {
    if book.dim != corpus.feature_dim() {
        return Err(Error::Format(format!(
            "codebook has dimension {} but the corpus features have {}",
            book.dim,
            corpus.feature_dim()
        )));
    }
    let utts = &corpus.utterances;
    exec.map(utts.len(), |i| -> Result<ClusterSequence> {
        let tokens = assign(book, &utts[i].features, book.dim)?;
        Ok(ClusterSequence {
            utt_id: utts[i].utt_id.clone(),
            tokens,
        })
    })
    .into_iter()
    .collect()
}

/// Relabels generator cluster ids into codebook labels by majority vote over
/// the corpus frames (ties to the lower label).
fn relabel_table(corpus: &Corpus, assigned: &[ClusterSequence], labels: usize) -> Vec<u32> {
    let mut votes = vec![vec![0usize; labels]; corpus.lexicon.cluster_count()];
    for (u, a) in corpus.utterances.iter().zip(assigned) {
        for (&g, &l) in u.clusters.iter().zip(&a.tokens) {
            votes[g as usize][l as usize] += 1;
        }
    }
    votes
        .iter()
        .map(|row| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, 0), |b, (l, &n)| if n > b.1 { (l, n) } else { b });
            best.0 as u32
        })
        .collect()
}

/// Assigns every frame of a corpus to its nearest centroid. With
/// `standard_out`, the corpus's ground-truth standard clusters are also
/// written in the codebook's label space.
pub fn kmeans_assign<E: Executor>(
    exec: &E,
    codebook: &Path,
    corpus: &Path,
    out: &Path,
    standard_out: Option<&Path>,
) -> Result<String> {
    let book = read_codebook(codebook)?;
    let corpus = read_corpus(corpus)?;
    let seqs = assign_corpus(exec, &book, &corpus)?;
    write_sequences(out, &seqs)?;
    if let Some(path) = standard_out {
        let table = relabel_table(&corpus, &seqs, book.clusters);
        let std: Vec<ClusterSequence> = corpus
            .utterances
            .iter()
            .map(|u| ClusterSequence {
                utt_id: u.utt_id.clone(),
                tokens: u
                    .standard_clusters
                    .iter()
                    .map(|&g| table[g as usize])
                    .collect(),
            })
            .collect();
        write_sequences(path, &std)?;
    }
    let frames: usize = seqs.iter().map(ClusterSequence::len).sum();
    Ok(format!(
        "{} utterances, {frames} frames assigned to {} units",
        seqs.len(),
        book.clusters
    ))
}

pub fn vocab(cfg: &PipelineConfig) -> Result<UnitVocab> {
    Ok(UnitVocab::new(cfg.quantizer.v)?)
}

/// Trains the unit language model selected by `mlm.kind`: a neural MLM
/// (`ENCP` checkpoint plus CSV log) or a count scorer (JSON).
pub fn mlm_train<E: Executor>(
    exec: &E,
    cfg: &PipelineConfig,
    units: &Path,
    out: &Path,
    log: Option<&Path>,
) -> Result<String> {
    let v = vocab(cfg)?;
    let seqs = read_sequences(units, v)?;
    let corpus: Vec<Vec<u32>> = seqs.into_iter().map(|s| s.tokens).collect();
    match cfg.mlm.kind {
        ScorerKind::Count => {
            let scorer =
                fit_count_scorer(corpus.iter().map(Vec::as_slice), v, &cfg.mlm.count.config())?;
            write_count_scorer(out, &scorer)?;
            Ok(format!(
                "count scorer over {} contexts",
                scorer.tables().len()
            ))
        }
        ScorerKind::Neural => {
            let tc = cfg.mlm.train_config(v, cfg.seed);
            let (params, entries) = train_mlm(exec, &corpus, v, &tc)?;
            write_checkpoint(out, &params)?;
            let log_path = log
                .map(Path::to_path_buf)
                .unwrap_or_else(|| sibling(out, "log.csv"));
            write_mlm_log(&log_path, &entries)?;
            let last = entries.last().map_or(f64::NAN, |e| e.loss);
            Ok(format!("{} steps, final loss {last:.4}", entries.len()))
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

/// Either realization of the unit scorer, read from disk.
pub enum Scorer {
    Count(CountScorer),
    Neural(NeuralScorer),
}

impl UnitScorer for Scorer {
    fn vocab(&self) -> UnitVocab {
        match self {
            Scorer::Count(s) => s.vocab(),
            Scorer::Neural(s) => s.vocab(),
        }
    }

    fn distributions(&self, tokens: &[u32]) -> unitfix_core::Result<Vec<f64>> {
        match self {
            Scorer::Count(s) => s.distributions(tokens),
            Scorer::Neural(s) => s.distributions(tokens),
        }
    }
}

pub fn load_scorer(path: &Path) -> Result<Scorer> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if bytes.starts_with(ENCP) {
        let params = decode_checkpoint(&bytes, &path.display().to_string())?;
        if !matches!(params.config().input, InputKind::Tokens { .. }) {
            return Err(Error::Format(format!(
                "{}: not a unit language model",
                path.display()
            )));
        }
        Ok(Scorer::Neural(NeuralScorer::new(params)?))
    } else {
        Ok(Scorer::Count(read_count_scorer(path)?))
    }
}

pub fn score<E: Executor>(exec: &E, scorer: &Path, units: &Path, out: &Path) -> Result<String> {
    let scorer = load_scorer(scorer)?;
    let seqs = read_sequences(units, scorer.vocab())?;
    let rows: Vec<(String, Vec<f64>)> = exec
        .map(seqs.len(), |i| -> Result<(String, Vec<f64>)> {
            Ok((
                seqs[i].utt_id.clone(),
                score_confidences(&scorer, &seqs[i].tokens)?,
            ))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    write_confidences(out, &rows)?;
    let frames: usize = seqs.iter().map(ClusterSequence::len).sum();
    let total: f64 = rows.iter().flat_map(|r| r.1.iter()).sum();
    Ok(format!(
        "{} utterances, mean confidence {:.4}",
        seqs.len(),
        total / frames.max(1) as f64
    ))
}

/// Runs the mask-and-decode corrector over every utterance of `units`.
pub fn correct<E: Executor>(
    exec: &E,
    cfg: &PipelineConfig,
    scorer: &Path,
    units: &Path,
    out: &Path,
    phone_map: Option<&Path>,
    trace: Option<&Path>,
) -> Result<String> {
    let scorer = load_scorer(scorer)?;
    let seqs = read_sequences(units, scorer.vocab())?;
    let map = phone_map.map(read_phone_map).transpose()?;
    let corrections = correct_all(exec, &seqs, &scorer, &cfg.corrector.config(), map.as_ref())?;
    let outputs: Vec<ClusterSequence> = corrections.iter().map(|c| c.sequence.clone()).collect();
    write_sequences(out, &outputs)?;
    if let Some(path) = trace {
        let records: Vec<TraceRecord> = corrections
            .iter()
            .flat_map(|c| {
                c.trace
                    .iter()
                    .map(|t| TraceRecord::new(&c.sequence.utt_id, t))
            })
            .collect();
        write_trace(path, &records)?;
    }
    let changed: usize = seqs
        .iter()
        .zip(&outputs)
        .map(|(a, b)| {
            a.tokens
                .iter()
                .zip(&b.tokens)
                .filter(|(x, y)| x != y)
                .count()
        })
        .sum();
    Ok(format!(
        "{} utterances corrected, {changed} frames changed",
        outputs.len()
    ))
}

pub fn phonemap_learn(
    cfg: &PipelineConfig,
    units: &Path,
    corpus: &Path,
    out: &Path,
) -> Result<String> {
    let v = vocab(cfg)?;
    let seqs = read_sequences(units, v)?;
    let corpus = read_corpus(corpus)?;
    let lex = &corpus.lexicon;
    let map = learn_phone_map(
        &seqs,
        &corpus.frame_phone_pairs(),
        v,
        lex.phones.clone(),
        lex.vowels.clone(),
    )?;
    write_phone_map(out, &map)?;
    let unseen = map
        .mapping
        .iter()
        .filter(|&&p| p == map.unknown_id())
        .count();
    Ok(format!(
        "{} clusters mapped onto {} phones, {unseen} unseen",
        map.clusters(),
        map.phones.len()
    ))
}

/// Scores hypotheses against reference phone lines. With a phone map the
/// hypotheses are unit sequences, mapped frame-wise and collapsed; without
/// one they are phone symbol lines compared as they are.
pub fn eval_per(
    hyp: &Path,
    reference: &Path,
    phone_map: Option<&Path>,
    out: Option<&Path>,
) -> Result<(f64, String)> {
    let refs = read_symbols(reference)?;
    let hyps: BTreeMap<String, Vec<String>> = match phone_map {
        Some(p) => {
            let map: PhoneMap = read_phone_map(p)?;
            let v = UnitVocab::new(map.clusters() as u32)?;
            read_sequences(hyp, v)?
                .into_iter()
                .map(|s| {
                    let phones = frames_to_phones(&s.tokens, &map, true)?;
                    Ok((
                        s.utt_id,
                        phones.iter().map(|&p| map.symbol(p).to_string()).collect(),
                    ))
                })
                .collect::<Result<_>>()?
        }
        None => read_symbols(hyp)?.into_iter().collect(),
    };
    if let Some(extra) = hyps.keys().find(|k| !refs.iter().any(|(id, _)| id == *k)) {
        return Err(Error::Format(format!(
            "hypothesis {extra} has no reference"
        )));
    }
    let mut triples = Vec::with_capacity(refs.len());
    for (id, r) in &refs {
        let h = hyps
            .get(id)
            .ok_or_else(|| Error::Format(format!("no hypothesis for reference {id}")))?;
        triples.push((id.as_str(), h.as_slice(), r.as_slice()));
    }
    let report: CorpusPer = corpus_per(triples)?;
    if let Some(path) = out {
        write_per_report(path, &report)?;
    }
    let per = report.per();
    let t = &report.total;
    Ok((
        per,
        format!(
            "PER {per:.2} (S {} D {} I {} over {} phones)",
            t.subs, t.dels, t.ins, t.ref_len
        ),
    ))
}

/// Pairs each corpus utterance found in `units` with its targets.
fn aligned_targets(corpus: &Corpus, units: &[ClusterSequence]) -> Result<Vec<(usize, Vec<u32>)>> {
    let index: BTreeMap<&str, usize> = corpus
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| (u.utt_id.as_str(), i))
        .collect();
    units
        .iter()
        .map(|s| {
            let i = *index.get(s.utt_id.as_str()).ok_or_else(|| {
                Error::Format(format!("unit line {} is not in the corpus", s.utt_id))
            })?;
            Ok((i, s.tokens.clone()))
        })
        .collect()
}

fn aligned<'a>(corpus: &'a Corpus, pairs: &'a [(usize, Vec<u32>)]) -> Vec<Aligned<'a>> {
    pairs
        .iter()
        .map(|(i, t)| Aligned {
            features: &corpus.utterances[*i].features,
            targets: t,
        })
        .collect()
}

/// Trains the standard-accent acoustic backbone on `corpus` features with
/// the unit targets in `units`.
pub fn adapt_pretrain<E: Executor>(
    exec: &E,
    cfg: &PipelineConfig,
    corpus: &Path,
    units: &Path,
    out: &Path,
    log: Option<&Path>,
) -> Result<String> {
    let v = vocab(cfg)?;
    let corpus = read_corpus(corpus)?;
    let pairs = aligned_targets(&corpus, &read_sequences(units, v)?)?;
    let spec = cfg.adapt.spec(corpus.feature_dim(), v.len());
    let tc = AdaptSection::train_config(&cfg.adapt.pretrain, cfg.seed);
    let (params, entries) = pretrain_base(exec, &spec, &aligned(&corpus, &pairs), &tc)?;
    write_checkpoint(out, &params)?;
    write_adapt_log(
        &log.map(Path::to_path_buf)
            .unwrap_or_else(|| sibling(out, "log.csv")),
        &entries,
    )?;
    let last = entries.last().map_or(f64::NAN, |e| e.loss);
    Ok(format!(
        "backbone trained for {} steps, final loss {last:.4}",
        entries.len()
    ))
}

/// Inserts adapters into a backbone checkpoint and trains only them on the
/// accented `corpus` with targets from `units`.
pub fn adapt_train<E: Executor>(
    exec: &E,
    cfg: &PipelineConfig,
    base: &Path,
    corpus: &Path,
    units: &Path,
    out: &Path,
    log: Option<&Path>,
) -> Result<String> {
    let backbone: EncoderParams = read_checkpoint(base)?;
    let v = UnitVocab::new(backbone.config().vocab_out as u32)?;
    let corpus = read_corpus(corpus)?;
    let pairs = aligned_targets(&corpus, &read_sequences(units, v)?)?;
    let model = insert_adapters(
        &backbone,
        &AdapterConfig {
            bottleneck: cfg.adapt.bottleneck,
        },
        cfg.seed,
    )?;
    let tc = AdaptSection::train_config(&cfg.adapt.train, cfg.seed);
    let (trained, entries) = continual_pretrain(
        exec,
        &model,
        cfg.adapt.span_len,
        cfg.adapt.p_mask,
        &aligned(&corpus, &pairs),
        &tc,
    )?;
    write_checkpoint(out, &trained)?;
    write_adapt_log(
        &log.map(Path::to_path_buf)
            .unwrap_or_else(|| sibling(out, "log.csv")),
        &entries,
    )?;
    let r = trainable_report(&trained);
    Ok(format!(
        "{} adapter steps, {} of {} parameters trainable ({:.2}%)",
        entries.len(),
        r.trainable,
        r.total,
        100.0 * r.fraction()
    ))
}

/// Masked-frame accuracy of a checkpoint against `units` targets.
pub fn adapt_eval<E: Executor>(
    exec: &E,
    cfg: &PipelineConfig,
    model: &Path,
    corpus: &Path,
    units: &Path,
    out: Option<&Path>,
) -> Result<(f64, String)> {
    let params = read_checkpoint(model)?;
    let v = UnitVocab::new(params.config().vocab_out as u32)?;
    let corpus = read_corpus(corpus)?;
    let pairs = aligned_targets(&corpus, &read_sequences(units, v)?)?;
    let acc = masked_frame_accuracy(
        exec,
        &params,
        cfg.adapt.span_len,
        cfg.adapt.p_mask,
        &aligned(&corpus, &pairs),
        cfg.adapt.eval_seed,
    )?;
    if let Some(path) = out {
        let json = serde_json::json!({ "masked_frame_accuracy": acc, "utterances": pairs.len() });
        write(path, format!("{json}\n").as_bytes())?;
    }
    Ok((
        acc,
        format!(
            "masked-frame accuracy {acc:.4} over {} utterances",
            pairs.len()
        ),
    ))
}
