//! Standard-accent unit language models.
//!
//! Two realizations share the [`UnitScorer`] capability: a transformer
//! trained with span masking ([`NeuralScorer`]) and an exact count model over
//! the run-collapsed unit sequence ([`CountScorer`]) that serves as a
//! closed-form oracle for the decoding algorithm.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{bail, Result};
use crate::exec::Executor;
use crate::neural::{
    argmax, loss_and_grads, optimizer_step, AdamConfig, EncoderConfig, EncoderInput, EncoderParams,
    Example, InputKind, LrSchedule,
};
use crate::rng::{self, Rng};
use crate::seqcore::{GroupedSequence, UnitVocab};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpanMaskPolicy {
    pub span_len: usize,
    pub p_mask: f64,
    pub replace_mask: f64,
    pub replace_random: f64,
    pub replace_keep: f64,
}

impl Default for SpanMaskPolicy {
    /// Spans of 10 frames covering 20% of the utterance, with the 80/10/10
    /// mask/random/keep replacement split.
    fn default() -> Self {
        Self {
            span_len: 10,
            p_mask: 0.2,
            replace_mask: 0.8,
            replace_random: 0.1,
            replace_keep: 0.1,
        }
    }
}

impl SpanMaskPolicy {
    /// Always substitutes the mask symbol.
    pub fn mask_only(span_len: usize, p_mask: f64) -> Self {
        Self {
            span_len,
            p_mask,
            replace_mask: 1.0,
            replace_random: 0.0,
            replace_keep: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.span_len == 0 {
            bail!(Mlm, "span length must be at least 1");
        }
        if !(self.p_mask > 0.0 && self.p_mask < 1.0) {
            bail!(Mlm, "p_mask {} outside (0, 1)", self.p_mask);
        }
        let parts = [self.replace_mask, self.replace_random, self.replace_keep];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            bail!(
                Mlm,
                "replacement probabilities must lie in [0, 1] and sum to 1"
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanMask {
    pub corrupted: Vec<u32>,
    /// Every selected frame, ascending, whatever its replacement.
    pub positions: Vec<usize>,
    /// Fewer than `floor(p_mask·T)` frames could be selected.
    pub short: bool,
}

/// Picks non-overlapping spans (truncated at the sequence end) until at
/// least `floor(p_mask·T)` frames are selected or no span fits, then corrupts
/// each selected frame independently per the replacement split.
pub fn apply_span_mask(
    tokens: &[u32],
    vocab: UnitVocab,
    policy: &SpanMaskPolicy,
    rng: &mut Rng,
) -> Result<SpanMask> {
    policy.validate()?;
    if tokens.is_empty() {
        bail!(Mlm, "cannot mask an empty sequence");
    }
    let selected = select_spans(tokens.len(), policy.span_len, policy.p_mask, rng);
    let positions: Vec<usize> = (0..tokens.len()).filter(|&i| selected[i]).collect();
    let target = (policy.p_mask * tokens.len() as f64) as usize;
    let mut corrupted = tokens.to_vec();
    for &i in &positions {
        let u: f64 = rng.random();
        if u < policy.replace_mask {
            corrupted[i] = vocab.mask_id();
        } else if u < policy.replace_mask + policy.replace_random {
            corrupted[i] = rng.random_range(0..vocab.size());
        }
    }
    Ok(SpanMask {
        corrupted,
        short: positions.len() < target,
        positions,
    })
}

/// Frame flags of non-overlapping spans covering at least `floor(p·T)`
/// frames where possible. Each span start is uniform over the starts whose
/// (truncated) span is still free.
pub fn select_spans(len: usize, span_len: usize, p_mask: f64, rng: &mut Rng) -> Vec<bool> {
    let target = (p_mask * len as f64) as usize;
    let mut selected = vec![false; len];
    let mut count = 0;
    while count < target {
        let free: Vec<usize> = (0..len)
            .filter(|&s| selected[s..(s + span_len).min(len)].iter().all(|&x| !x))
            .collect();
        if free.is_empty() {
            break;
        }
        let s = free[rng.random_range(0..free.len())];
        for x in &mut selected[s..(s + span_len).min(len)] {
            *x = true;
            count += 1;
        }
    }
    selected
}

/// Frame-wise unit probabilities for sequences that may contain masks.
pub trait UnitScorer: Sync {
    fn vocab(&self) -> UnitVocab;

    /// Row-major `T × V` probabilities over the real units (the mask id is
    /// never part of the support).
    fn distributions(&self, tokens: &[u32]) -> Result<Vec<f64>>;
}

impl<S: UnitScorer + ?Sized> UnitScorer for &S {
    fn vocab(&self) -> UnitVocab {
        (**self).vocab()
    }

    fn distributions(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        (**self).distributions(tokens)
    }
}

/// Probability the scorer assigns to each input token in context.
pub fn score_confidences<S: UnitScorer + ?Sized>(scorer: &S, tokens: &[u32]) -> Result<Vec<f64>> {
    let vocab = scorer.vocab();
    if let Some(i) = tokens.iter().position(|&t| !vocab.is_unit(t)) {
        bail!(Mlm, "frame {i} holds {} which is not a unit id", tokens[i]);
    }
    let dist = scorer.distributions(tokens)?;
    let v = vocab.len();
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| dist[i * v + t as usize])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub position: usize,
    pub unit: u32,
    pub confidence: f64,
}

/// Most likely unit (lowest id on ties) and its probability at every masked
/// frame.
pub fn predict_masked<S: UnitScorer + ?Sized>(
    scorer: &S,
    tokens: &[u32],
) -> Result<Vec<Prediction>> {
    let vocab = scorer.vocab();
    let masked: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens[i] == vocab.mask_id())
        .collect();
    if masked.is_empty() {
        bail!(Mlm, "no masked frames to predict");
    }
    if let Some(&t) = tokens.iter().find(|&&t| t > vocab.mask_id()) {
        bail!(Mlm, "token {t} is neither a unit nor the mask id");
    }
    let dist = scorer.distributions(tokens)?;
    let v = vocab.len();
    Ok(masked
        .into_iter()
        .map(|i| {
            let row = &dist[i * v..(i + 1) * v];
            let unit = argmax(row);
            Prediction {
                position: i,
                unit: unit as u32,
                confidence: row[unit],
            }
        })
        .collect())
}

// ---- neural realization ----------------------------------------------------

/// A token-input encoder over `V + 1` symbols (units plus mask) with a
/// `V`-way output head.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralScorer {
    params: EncoderParams,
    vocab: UnitVocab,
}

impl NeuralScorer {
    pub fn new(params: EncoderParams) -> Result<Self> {
        let cfg = params.config();
        let InputKind::Tokens { vocab } = cfg.input else {
            bail!(Mlm, "unit scorer needs a token-input encoder")
        };
        if vocab != cfg.vocab_out + 1 {
            bail!(
                Mlm,
                "input vocabulary {vocab} must be the {} units plus the mask id",
                cfg.vocab_out
            );
        }
        let units = UnitVocab::new(cfg.vocab_out as u32)?;
        Ok(Self {
            params,
            vocab: units,
        })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn into_params(self) -> EncoderParams {
        self.params
    }
}

impl UnitScorer for NeuralScorer {
    fn vocab(&self) -> UnitVocab {
        self.vocab
    }

    /// Inputs longer than the encoder's `max_len` are scored in windows
    /// overlapping by half; each frame keeps the distribution from the
    /// window where it sits closest to the centre.
    fn distributions(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let v = self.vocab.len();
        let run = |window: &[u32]| -> Result<Vec<f64>> {
            let out = self
                .params
                .forward(EncoderInput::Tokens(window), None)
                .map_err(|e| crate::Error::Mlm(alloc::format!("{e}")))?;
            Ok(crate::neural::probabilities(&out.logits, v))
        };
        let (len, max) = (tokens.len(), self.params.config().max_len);
        if len <= max {
            return run(tokens);
        }
        let stride = (max / 2).max(1);
        let offset = (max - stride) / 2;
        let mut out = vec![0.0; len * v];
        let mut start = 0;
        loop {
            let end = (start + max).min(len);
            let dist = run(&tokens[start..end])?;
            let keep_from = if start == 0 { 0 } else { start + offset };
            let keep_to = if end == len {
                len
            } else {
                start + offset + stride
            };
            out[keep_from * v..keep_to * v]
                .copy_from_slice(&dist[(keep_from - start) * v..(keep_to - start) * v]);
            if end == len {
                return Ok(out);
            }
            start += stride;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlmTrainConfig {
    pub encoder: EncoderConfig,
    pub policy: SpanMaskPolicy,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogEntry {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Top-1 accuracy on the frames that carried loss this step.
    pub accuracy: f64,
}

/// Crops `len` to at most `max_len` with a random window start.
fn window(len: usize, max_len: usize, rng: &mut Rng) -> core::ops::Range<usize> {
    if len <= max_len {
        return 0..len;
    }
    let start = rng.random_range(0..=len - max_len);
    start..start + max_len
}

/// Trains a unit LM from random initialization with span-masked prediction
/// (loss on selected frames only, no sentence-pair objective).
///
/// Step `s` samples `batch_size` utterances and their masks from streams
/// derived from the seed and `s`, so the log is independent of `exec`.
pub fn train_mlm<E: Executor>(
    exec: &E,
    corpus: &[Vec<u32>],
    vocab: UnitVocab,
    cfg: &MlmTrainConfig,
) -> Result<(EncoderParams, Vec<TrainLogEntry>)> {
    if corpus.iter().all(|u| u.is_empty()) {
        bail!(Mlm, "empty training corpus");
    }
    if let Some((i, _)) = corpus
        .iter()
        .enumerate()
        .find(|(_, u)| u.iter().any(|&t| !vocab.is_unit(t)))
    {
        bail!(
            Mlm,
            "utterance {i} contains ids outside the {}-unit vocabulary",
            vocab.size()
        );
    }
    if cfg.encoder.vocab_out != vocab.len()
        || cfg.encoder.input
            != (InputKind::Tokens {
                vocab: vocab.len() + 1,
            })
    {
        bail!(
            Mlm,
            "encoder must read {} symbols and predict {} units",
            vocab.len() + 1,
            vocab.len()
        );
    }
    cfg.policy.validate()?;
    cfg.schedule.validate()?;
    if cfg.batch_size == 0 {
        bail!(Mlm, "batch size must be positive");
    }
    let mut params = EncoderParams::init(&cfg.encoder, None, cfg.seed)?;
    let usable: Vec<&Vec<u32>> = corpus.iter().filter(|u| !u.is_empty()).collect();
    let mut log = Vec::with_capacity(cfg.schedule.total as usize);
    for step in 1..=cfg.schedule.total {
        let mut r = rng::derived(cfg.seed, step);
        let mut items: Vec<(Vec<u32>, Vec<u32>, Vec<bool>)> = Vec::with_capacity(cfg.batch_size);
        while items.len() < cfg.batch_size {
            let utt = usable[r.random_range(0..usable.len())];
            let span = window(utt.len(), cfg.encoder.max_len, &mut r);
            let clean = &utt[span];
            let masked = apply_span_mask(clean, vocab, &cfg.policy, &mut r)?;
            if masked.positions.is_empty() {
                continue;
            }
            let mut flags = vec![false; clean.len()];
            masked.positions.iter().for_each(|&p| flags[p] = true);
            items.push((masked.corrupted, clean.to_vec(), flags));
        }
        let batch: Vec<Example<'_>> = items
            .iter()
            .map(|(input, targets, flags)| Example {
                input: EncoderInput::Tokens(input),
                targets,
                loss_mask: flags,
            })
            .collect();
        let out = loss_and_grads(
            exec,
            &params,
            &batch,
            Some(rng::mix(cfg.seed ^ 0xd40f, step)),
        )?;
        if !out.loss.is_finite() || out.grads.0.iter().flatten().any(|g| !g.is_finite()) {
            bail!(Mlm, "non-finite loss or gradient at step {step}");
        }
        let lr = optimizer_step(&mut params, &out.grads, step, &cfg.schedule, &cfg.adam)?;
        log.push(TrainLogEntry {
            step,
            loss: out.loss,
            lr,
            accuracy: out.correct as f64 / out.flagged as f64,
        });
    }
    Ok((params, log))
}

/// Top-1 accuracy of masked-frame predictions over span masks drawn with
/// `seed` (evaluation mode).
pub fn masked_accuracy(
    scorer: &NeuralScorer,
    corpus: &[Vec<u32>],
    policy: &SpanMaskPolicy,
    seed: u64,
) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, utt) in corpus.iter().enumerate().filter(|(_, u)| !u.is_empty()) {
        let mut r = rng::derived(seed, i as u64);
        let m = apply_span_mask(
            utt,
            scorer.vocab(),
            &SpanMaskPolicy::mask_only(policy.span_len, policy.p_mask),
            &mut r,
        )?;
        if m.positions.is_empty() {
            continue;
        }
        for p in predict_masked(scorer, &m.corrupted)? {
            hit += usize::from(p.unit == utt[p.position]);
            total += 1;
        }
    }
    if total == 0 {
        bail!(Mlm, "no masked frames to evaluate");
    }
    Ok(hit as f64 / total as f64)
}

// ---- count realization -----------------------------------------------------

/// Context-count model over the run-collapsed unit sequence.
///
/// Consecutive identical units form one run. A context is the `a` runs
/// before and the `b` runs after a position, `0 ≤ a, b ≤ width` and
/// `a + b ≥ 1`, padded with the edge symbol `V` past either end. Every
/// training run counts once under each of its contexts. Only contexts
/// holding at least `min_count` training runs are consulted.
///
/// By default a position takes the add-k smoothed distribution of its first
/// usable context, wider shapes first. With `interpolate` set it takes a
/// mixture of all usable contexts instead, each weighted by its run count
/// times `4^(a+b)`, with one more factor of 4 when both sides are present.
/// Without any usable context, or when the position has no neighbouring run
/// at all, the run unigram is used. A maximal block of masked frames is
/// treated as one unknown run.
#[derive(Debug, Clone, PartialEq)]
pub struct CountScorer {
    vocab: UnitVocab,
    config: CountScorerConfig,
    unigram: Vec<u64>,
    tables: ContextTable,
}

/// Context `(a, b, [l_a … l_1, r_1 … r_b])` to sparse unit counts.
pub type ContextTable = BTreeMap<(u8, u8, Vec<u32>), BTreeMap<u32, u64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CountScorerConfig {
    /// Add-k constant.
    pub smoothing: f64,
    /// Most runs of context on either side.
    pub width: usize,
    /// Fewest training runs a context needs before it is used.
    pub min_count: u64,
    /// Mix every usable context rather than backing off to the first.
    pub interpolate: bool,
}

impl Default for CountScorerConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.01,
            width: 1,
            min_count: 1,
            interpolate: false,
        }
    }
}

impl CountScorerConfig {
    /// Immediate neighbours only.
    pub fn trigram(smoothing: f64) -> Self {
        Self {
            smoothing,
            ..Self::default()
        }
    }

    /// The wider interpolated model used by the pipeline.
    pub fn interpolated(smoothing: f64, width: usize) -> Self {
        Self {
            smoothing,
            width,
            min_count: 1,
            interpolate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing > 0.0) || !self.smoothing.is_finite() {
            bail!(Mlm, "add-k smoothing must be a positive finite number");
        }
        if self.width == 0 || self.width > u8::MAX as usize {
            bail!(Mlm, "context width must lie in [1, 255]");
        }
        if self.min_count == 0 {
            bail!(Mlm, "minimum context count must be at least 1");
        }
        Ok(())
    }

    /// Context shapes in preference order: wider first, then left-leaning.
    fn shapes(&self) -> Vec<(u8, u8)> {
        let w = self.width as u8;
        let mut out: Vec<(u8, u8)> = (0..=w)
            .flat_map(|a| (0..=w).map(move |b| (a, b)))
            .filter(|&(a, b)| a + b > 0)
            .collect();
        out.sort_by(|x, y| (y.0 + y.1).cmp(&(x.0 + x.1)).then(y.0.cmp(&x.0)));
        out
    }
}

fn context_key(left: &[u32], right: &[u32], a: u8, b: u8, edge: u32) -> Vec<u32> {
    let at_left = |d: usize| {
        if left.len() >= d {
            left[left.len() - d]
        } else {
            edge
        }
    };
    let at_right = |d: usize| right.get(d - 1).copied().unwrap_or(edge);
    (1..=a as usize)
        .rev()
        .map(at_left)
        .chain((1..=b as usize).map(at_right))
        .collect()
}

/// Counts run contexts of `corpus` as described on [`CountScorer`].
pub fn fit_count_scorer<'a, I>(
    corpus: I,
    vocab: UnitVocab,
    config: &CountScorerConfig,
) -> Result<CountScorer>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    config.validate()?;
    let edge = vocab.size();
    let shapes = config.shapes();
    let mut unigram = vec![0u64; vocab.len()];
    let mut tables = ContextTable::new();
    let mut seen = false;
    for utt in corpus {
        if utt.is_empty() {
            continue;
        }
        if let Some(&bad) = utt.iter().find(|&&t| !vocab.is_unit(t)) {
            bail!(
                Mlm,
                "training unit {bad} outside the {}-unit vocabulary",
                vocab.size()
            );
        }
        seen = true;
        let runs: Vec<u32> = GroupedSequence::from_keys(utt)
            .groups()
            .iter()
            .map(|g| g.key)
            .collect();
        for (i, &u) in runs.iter().enumerate() {
            unigram[u as usize] += 1;
            for &(a, b) in &shapes {
                let key = context_key(&runs[..i], &runs[i + 1..], a, b, edge);
                *tables.entry((a, b, key)).or_default().entry(u).or_default() += 1;
            }
        }
    }
    if !seen {
        bail!(Mlm, "empty training corpus");
    }
    Ok(CountScorer {
        vocab,
        config: *config,
        unigram,
        tables,
    })
}

impl CountScorer {
    /// Rebuilds a scorer from its stored tables.
    pub fn from_tables(
        vocab: UnitVocab,
        config: &CountScorerConfig,
        unigram: Vec<u64>,
        tables: ContextTable,
    ) -> Result<Self> {
        config.validate()?;
        if unigram.len() != vocab.len() {
            bail!(
                Mlm,
                "unigram table does not match the {}-unit vocabulary",
                vocab.size()
            );
        }
        for ((a, b, key), counts) in &tables {
            let shape_ok =
                (*a as usize) <= config.width && (*b as usize) <= config.width && a + b > 0;
            if !shape_ok || key.len() != (a + b) as usize || key.iter().any(|&s| s > vocab.size()) {
                bail!(Mlm, "malformed ({a}, {b}) context {key:?}");
            }
            if counts.keys().any(|&u| !vocab.is_unit(u)) {
                bail!(Mlm, "context {key:?} counts a unit outside the vocabulary");
            }
        }
        Ok(Self {
            vocab,
            config: *config,
            unigram,
            tables,
        })
    }

    pub fn config(&self) -> &CountScorerConfig {
        &self.config
    }

    pub fn unigram(&self) -> &[u64] {
        &self.unigram
    }

    pub fn tables(&self) -> &ContextTable {
        &self.tables
    }

    /// The edge symbol used for utterance boundaries (`V`).
    pub fn edge(&self) -> u32 {
        self.vocab.size()
    }

    fn smoothed(&self, counts: impl Iterator<Item = (u32, u64)>) -> Vec<f64> {
        let mut dense = vec![0u64; self.vocab.len()];
        for (u, c) in counts {
            dense[u as usize] = c;
        }
        let total: u64 = dense.iter().sum();
        let k = self.config.smoothing;
        let denom = total as f64 + k * self.vocab.len() as f64;
        dense.iter().map(|&c| (c as f64 + k) / denom).collect()
    }

    /// Smoothed distribution of a position whose preceding runs are `left`
    /// (nearest last) and following runs are `right` (nearest first).
    pub fn context_distribution(&self, left: &[u32], right: &[u32]) -> Vec<f64> {
        let unigram =
            || self.smoothed(self.unigram.iter().enumerate().map(|(u, &c)| (u as u32, c)));
        if left.is_empty() && right.is_empty() {
            return unigram();
        }
        let mut mix = alloc::vec![0.0; self.vocab.len()];
        let mut total = 0.0;
        for (a, b) in self.config.shapes() {
            let key = context_key(left, right, a, b, self.edge());
            let Some(counts) = self.tables.get(&(a, b, key)) else {
                continue;
            };
            let n = counts.values().sum::<u64>();
            if n < self.config.min_count {
                continue;
            }
            let dist = self.smoothed(counts.iter().map(|(&u, &c)| (u, c)));
            if !self.config.interpolate {
                return dist;
            }
            let sides = u32::from(a > 0 && b > 0);
            let w = n as f64 * libm::pow(4.0, f64::from(u32::from(a) + u32::from(b) + sides));
            for (m, d) in mix.iter_mut().zip(&dist) {
                *m += w * d;
            }
            total += w;
        }
        if total == 0.0 {
            return unigram();
        }
        mix.iter().map(|m| m / total).collect()
    }
}

impl UnitScorer for CountScorer {
    fn vocab(&self) -> UnitVocab {
        self.vocab
    }

    fn distributions(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let mask = self.vocab.mask_id();
        if let Some(&t) = tokens.iter().find(|&&t| t > mask) {
            bail!(Mlm, "token {t} is neither a unit nor the mask id");
        }
        let groups = GroupedSequence::from_keys(tokens);
        let keys: Vec<u32> = groups.groups().iter().map(|g| g.key).collect();
        let v = self.vocab.len();
        let mut out = Vec::with_capacity(tokens.len() * v);
        for (i, run) in groups.groups().iter().enumerate() {
            let dist = self.context_distribution(&keys[..i], &keys[i + 1..]);
            for _ in 0..run.len {
                out.extend_from_slice(&dist);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::neural::EncoderConfig;

    fn vocab(n: u32) -> UnitVocab {
        UnitVocab::new(n).unwrap()
    }

    #[test]
    fn span_mask_covers_target() {
        let tokens: Vec<u32> = (0..100).map(|i| i % 7).collect();
        for seed in 0..20 {
            let m = apply_span_mask(
                &tokens,
                vocab(7),
                &SpanMaskPolicy::default(),
                &mut rng::seeded(seed),
            )
            .unwrap();
            assert!(m.positions.len() >= 20);
            assert!(!m.short);
            // whole spans of 10 (only the last span may be truncated)
            let groups = GroupedSequence::from_keys(
                &(0..100)
                    .map(|i| u32::from(m.positions.contains(&i)))
                    .collect::<Vec<_>>(),
            );
            for g in groups.groups().iter().filter(|g| g.key == 1) {
                assert!(g.len % 10 == 0 || g.end() == 100, "{g:?}");
            }
        }
    }

    #[test]
    fn keep_only_policy_leaves_tokens() {
        let tokens: Vec<u32> = (0..40).map(|i| i % 5).collect();
        let policy = SpanMaskPolicy {
            replace_mask: 0.0,
            replace_random: 0.0,
            replace_keep: 1.0,
            ..Default::default()
        };
        let m = apply_span_mask(&tokens, vocab(5), &policy, &mut rng::seeded(1)).unwrap();
        assert_eq!(m.corrupted, tokens);
        assert!(m.positions.len() >= 8);
    }

    #[test]
    fn mask_replacement_rate() {
        // 3 sigma of a binomial proportion over the selected frames
        let tokens = vec![0u32; 100];
        let mut r = rng::seeded(5);
        let (mut masked, mut total) = (0usize, 0usize);
        while total < 10_000 {
            let m = apply_span_mask(&tokens, vocab(4), &SpanMaskPolicy::default(), &mut r).unwrap();
            total += m.positions.len();
            masked += m.positions.iter().filter(|&&p| m.corrupted[p] == 4).count();
        }
        let frac = masked as f64 / total as f64;
        let sigma = libm::sqrt(0.8 * 0.2 / total as f64);
        assert!((frac - 0.8).abs() < 3.0 * sigma, "{frac}");
    }

    #[test]
    fn short_sequences_are_flagged() {
        let m = apply_span_mask(
            &[1, 2, 3],
            vocab(4),
            &SpanMaskPolicy::default(),
            &mut rng::seeded(0),
        )
        .unwrap();
        assert!(m.positions.is_empty());
        assert!(!m.short, "floor(0.6) = 0 frames requested");
        let tight = SpanMaskPolicy {
            span_len: 4,
            p_mask: 0.9,
            ..Default::default()
        };
        let m = apply_span_mask(&[1; 10], vocab(4), &tight, &mut rng::seeded(0)).unwrap();
        assert!(m.positions.len() < 9 || !m.short);
        assert!(SpanMaskPolicy {
            replace_keep: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn count_scorer_closed_forms() {
        let k = 0.01;
        let s = fit_count_scorer(
            [&[1u32, 2, 3][..]],
            vocab(5),
            &CountScorerConfig::trigram(k),
        )
        .unwrap();
        let p = s.context_distribution(&[1], &[3])[2];
        assert!((p - (1.0 + k) / (1.0 + k * 5.0)).abs() < 1e-15);
        assert!(p > 0.9);
    }

    #[test]
    fn unseen_context_approaches_uniform_monotonically() {
        let corpus = [&[1u32, 2, 1, 2, 1][..], &[1, 1, 3][..]];
        let mut prev = f64::INFINITY;
        for k in [0.01, 0.1, 1.0, 10.0, 1e3, 1e6] {
            let s = fit_count_scorer(corpus, vocab(4), &CountScorerConfig::trigram(k)).unwrap();
            let d = s.context_distribution(&[3], &[3]);
            let dev = d.iter().map(|p| (p - 0.25).abs()).fold(0.0, f64::max);
            assert!(dev <= prev);
            prev = dev;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn count_distributions_normalize() {
        let corpus: Vec<Vec<u32>> = (0..30)
            .map(|i| (0..20).map(|j| ((i * j + j / 3) % 6) as u32).collect())
            .collect();
        let s = fit_count_scorer(
            corpus.iter().map(Vec::as_slice),
            vocab(6),
            &CountScorerConfig {
                smoothing: 0.5,
                width: 2,
                min_count: 3,
                interpolate: true,
            },
        )
        .unwrap();
        let mut r = rng::seeded(2);
        for _ in 0..100 {
            let (l, rr) = (r.random_range(0..7u32), r.random_range(0..7u32));
            let total: f64 = s.context_distribution(&[l, rr], &[rr, l]).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn alternating_corpus_is_confident() {
        let line: Vec<u32> = (0..40).map(|i| 1 + i % 2).collect();
        let s = fit_count_scorer(
            [line.as_slice()],
            vocab(4),
            &CountScorerConfig::trigram(1e-3),
        )
        .unwrap();
        let conf = score_confidences(&s, &[1, 2, 1, 2]).unwrap();
        for c in conf {
            assert!(c > 0.99, "{c}");
        }
        assert!(score_confidences(&s, &[1, 4]).is_err());
    }

    #[test]
    fn count_prediction_fills_context() {
        let line: Vec<u32> = (0..41).map(|i| 1 + i % 2).collect();
        let s = fit_count_scorer(
            [line.as_slice()],
            vocab(4),
            &CountScorerConfig::trigram(1e-3),
        )
        .unwrap();
        let p = predict_masked(&s, &[1, 4, 1]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].unit, 2);
        assert!(p[0].confidence > 0.99);
        assert!(predict_masked(&s, &[1, 2, 1]).is_err());
    }

    #[test]
    fn fully_masked_single_frame_uses_unigram() {
        let corpus = [&[0u32, 3, 3, 1][..], &[3, 2, 3][..], &[2, 3][..]];
        let s = fit_count_scorer(corpus, vocab(4), &CountScorerConfig::trigram(0.1)).unwrap();
        // run unigram counts: 0:1 1:1 2:2 3:4
        let p = predict_masked(&s, &[4]).unwrap();
        assert_eq!(p[0].unit, 3);
        assert!((p[0].confidence - 4.1 / 8.4).abs() < 1e-12);
    }

    #[test]
    fn interpolation_weights_contexts() {
        let corpus = [&[1u32, 2, 3][..], &[4, 5, 3][..]];
        let cfg = CountScorerConfig {
            smoothing: 1e-12,
            ..CountScorerConfig::interpolated(1.0, 1)
        };
        let s = fit_count_scorer(corpus, vocab(6), &cfg).unwrap();
        // (1,_,3) seen once, weight 64; (1,_) once, weight 4; (_,3) twice, weight 8, half on 2
        let d = s.context_distribution(&[1], &[3]);
        assert!((d[2] - 72.0 / 76.0).abs() < 1e-9);
        assert!((d[5] - 4.0 / 76.0).abs() < 1e-9);
        let backoff =
            fit_count_scorer(corpus, vocab(6), &CountScorerConfig::trigram(1e-12)).unwrap();
        assert!((backoff.context_distribution(&[1], &[3])[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prediction_agrees_with_scoring_distribution() {
        let corpus = [&[0u32, 1, 1, 2, 0][..], &[0, 1, 3, 0][..], &[2, 1, 2][..]];
        let s =
            fit_count_scorer(corpus, vocab(4), &CountScorerConfig::interpolated(0.2, 2)).unwrap();
        let tokens = [0u32, 1, 1, 2, 0];
        let conf = score_confidences(&s, &tokens).unwrap();
        // mask exactly the run holding frames 1..3
        let masked = [0u32, 4, 4, 2, 0];
        let dist = s.distributions(&masked).unwrap();
        assert_eq!(dist[4 + 1], conf[1]);
        let p = predict_masked(&s, &masked).unwrap();
        assert_eq!(p[0].confidence, dist[4 + p[0].unit as usize]);
    }

    fn pattern_corpus() -> Vec<Vec<u32>> {
        (0..40)
            .map(|i| (0..(12 + i % 9)).map(|j| (j % 3) as u32 + 1).collect())
            .collect()
    }

    fn tiny_cfg(total: u64, peak: f64) -> MlmTrainConfig {
        MlmTrainConfig {
            encoder: EncoderConfig {
                layers: 1,
                model_dim: 16,
                heads: 2,
                ffn_dim: 32,
                max_len: 24,
                dropout: 0.0,
                input: InputKind::Tokens { vocab: 5 },
                vocab_out: 4,
            },
            policy: SpanMaskPolicy {
                span_len: 2,
                p_mask: 0.2,
                ..Default::default()
            },
            schedule: LrSchedule {
                peak,
                warmup: total / 10,
                total,
            },
            adam: AdamConfig::default(),
            batch_size: 8,
            seed: 3,
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = tiny_cfg(2, 0.0);
        let (params, log) = train_mlm(&Serial, &pattern_corpus(), vocab(4), &cfg).unwrap();
        let init = EncoderParams::init(&cfg.encoder, None, cfg.seed).unwrap();
        for (a, b) in params.params().iter().zip(init.params()) {
            assert_eq!(a.data, b.data);
        }
        assert_eq!(log.len(), 2);
        // near-uniform start
        assert!(
            (log[0].loss - libm::log(4.0)).abs() < 0.1,
            "{}",
            log[0].loss
        );
    }

    #[test]
    fn learns_periodic_pattern() {
        let cfg = tiny_cfg(300, 3e-3);
        let corpus = pattern_corpus();
        let (params, log) = train_mlm(&Serial, &corpus, vocab(4), &cfg).unwrap();
        assert!(log.iter().all(|e| e.loss.is_finite()));
        let scorer = NeuralScorer::new(params).unwrap();
        let acc = masked_accuracy(&scorer, &corpus, &cfg.policy, 99).unwrap();
        assert_eq!(acc, 1.0);
        // neural scores are probabilities
        for c in score_confidences(&scorer, &corpus[0]).unwrap() {
            assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn training_errors() {
        let cfg = tiny_cfg(2, 1e-3);
        assert!(train_mlm(&Serial, &[], vocab(4), &cfg).is_err());
        assert!(train_mlm(&Serial, &[vec![9]], vocab(4), &cfg).is_err());
        assert!(train_mlm(&Serial, &pattern_corpus(), vocab(5), &cfg).is_err());
    }

    #[test]
    fn long_inputs_are_scored_in_centred_windows() {
        let mut cfg = tiny_cfg(1, 0.0);
        cfg.encoder.max_len = 8;
        let params = EncoderParams::init(&cfg.encoder, None, 5).unwrap();
        let scorer = NeuralScorer::new(params.clone()).unwrap();
        let tokens: Vec<u32> = (0..21).map(|i| (i * 7 % 5) as u32).collect();
        let dist = scorer.distributions(&tokens).unwrap();
        assert_eq!(dist.len(), 21 * 4);
        // stride 4: windows start at 0, 4, 8, 12, 16 and each keeps its middle four frames
        let window_rows = |start: usize| {
            let end = (start + 8).min(21);
            let out = params
                .forward(EncoderInput::Tokens(&tokens[start..end]), None)
                .unwrap();
            crate::neural::probabilities(&out.logits, 4)
        };
        for i in 0..21 {
            let start = match i {
                0..=5 => 0,
                6..=9 => 4,
                10..=13 => 8,
                14..=17 => 12,
                _ => 16,
            };
            let w = window_rows(start);
            assert_eq!(
                &dist[i * 4..(i + 1) * 4],
                &w[(i - start) * 4..(i - start + 1) * 4],
                "frame {i}"
            );
        }
        let short = scorer.distributions(&tokens[..8]).unwrap();
        assert_eq!(short, window_rows(0));
    }
}
