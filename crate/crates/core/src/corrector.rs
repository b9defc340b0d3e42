//! Iterative mask-and-fill correction of accented unit sequences.
//!
//! Each iteration scores the current sequence with a standard-accent
//! [`UnitScorer`], masks the least plausible groups, asks the scorer to
//! predict them and keeps only the most confident fills. The mask budget
//! shrinks linearly over the iterations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::exec::Executor;
use crate::mlm::{predict_masked, score_confidences, UnitScorer};
use crate::phonemap::PhoneMap;
use crate::seqcore::{ClusterSequence, Group, GroupedSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSchedule {
    pub frames: usize,
    pub iterations: usize,
    pub p_mask: f64,
    pub n_max: usize,
    /// Frames to mask at iterations `1..=K` (index `k - 1`); empty when
    /// `n_max == 0`.
    pub n_k: Vec<usize>,
    /// Frames to fill per iteration.
    pub m: usize,
}

impl MaskSchedule {
    pub fn is_empty(&self) -> bool {
        self.n_k.is_empty()
    }

    /// Mask budget of iteration `k` (1-based).
    pub fn budget(&self, k: usize) -> usize {
        self.n_k.get(k.wrapping_sub(1)).copied().unwrap_or(0)
    }
}

/// `n_max = floor(p·T)`, `n_k = floor(n_max·(K−k+1)/K)` and
/// `m = floor(n_max/K)`, with `n_k` and `m` clamped to at least one frame.
pub fn build_schedule(frames: usize, iterations: usize, p_mask: f64) -> Result<MaskSchedule> {
    if frames == 0 {
        bail!(Corrector, "cannot schedule an empty sequence");
    }
    if iterations == 0 {
        bail!(Corrector, "iteration count K must be at least 1");
    }
    if !(p_mask > 0.0 && p_mask < 1.0) {
        bail!(Corrector, "p_mask {p_mask} outside (0, 1)");
    }
    let n_max = (p_mask * frames as f64) as usize;
    let n_k = if n_max == 0 {
        Vec::new()
    } else {
        (1..=iterations)
            .map(|k| (n_max * (iterations - k + 1) / iterations).max(1))
            .collect()
    };
    Ok(MaskSchedule {
        frames,
        iterations,
        p_mask,
        n_max,
        n_k,
        m: (n_max / iterations).max(1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Grouping {
    #[default]
    ByCluster,
    ByPhone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Fill {
    #[default]
    TopM,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CandidateFilter {
    #[default]
    All,
    /// After iteration `k0`, only groups whose key maps to a vowel may be
    /// masked.
    VowelsAfter(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrectionVariant {
    pub grouping: Grouping,
    pub fill: Fill,
    pub filter: CandidateFilter,
}

impl CorrectionVariant {
    pub const DEFAULT_K0: usize = 3;

    pub fn cluster_groups() -> Self {
        Self::default()
    }

    pub fn phone_groups() -> Self {
        Self {
            grouping: Grouping::ByPhone,
            ..Self::default()
        }
    }

    pub fn fill_all(self) -> Self {
        Self {
            fill: Fill::All,
            ..self
        }
    }

    pub fn vowels_after(self, k0: usize) -> Self {
        Self {
            filter: CandidateFilter::VowelsAfter(k0),
            ..self
        }
    }

    pub fn needs_phone_map(&self) -> bool {
        self.grouping == Grouping::ByPhone || matches!(self.filter, CandidateFilter::VowelsAfter(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrectorConfig {
    pub iterations: usize,
    pub p_mask: f64,
    pub variant: CorrectionVariant,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            p_mask: 0.2,
            variant: CorrectionVariant::default(),
        }
    }
}

/// Indices of the lowest-scoring candidate groups, taken in ascending score
/// order (earlier start on ties) until they cover at least `n_k` frames, or
/// every candidate when that is impossible. Returned in frame order.
///
/// Unscored groups rank after every scored one.
pub fn select_mask_groups(
    grouped: &GroupedSequence,
    n_k: usize,
    candidate: impl Fn(&Group) -> bool,
) -> Vec<usize> {
    if n_k == 0 {
        return Vec::new();
    }
    let groups = grouped.groups();
    let mut order: Vec<usize> = (0..groups.len())
        .filter(|&i| candidate(&groups[i]))
        .collect();
    let score = |i: usize| groups[i].score.unwrap_or(f64::INFINITY);
    order.sort_by(|&a, &b| {
        score(a)
            .total_cmp(&score(b))
            .then(groups[a].start.cmp(&groups[b].start))
    });
    let mut picked = Vec::new();
    let mut covered = 0;
    for i in order {
        if covered >= n_k {
            break;
        }
        covered += groups[i].len;
        picked.push(i);
    }
    picked.sort_unstable();
    picked
}

/// A masked or filled group in a trace.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpanRecord {
    pub start: usize,
    pub len: usize,
    /// Group score when masked, mean prediction confidence when filled.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationTrace {
    pub iteration: usize,
    pub n_k: usize,
    pub m: usize,
    pub masked: Vec<SpanRecord>,
    pub filled: Vec<SpanRecord>,
    pub output: Vec<u32>,
}

impl IterationTrace {
    pub fn masked_frames(&self) -> usize {
        self.masked.iter().map(|s| s.len).sum()
    }

    pub fn filled_frames(&self) -> usize {
        self.filled.iter().map(|s| s.len).sum()
    }
}

fn grouping_keys(
    tokens: &[u32],
    variant: &CorrectionVariant,
    map: Option<&PhoneMap>,
) -> Result<GroupedSequence> {
    match variant.grouping {
        Grouping::ByCluster => Ok(GroupedSequence::from_keys(tokens)),
        Grouping::ByPhone => {
            let map = map.ok_or_else(|| {
                crate::Error::Corrector("phone grouping needs a phone map".into())
            })?;
            let keys: Vec<u32> = tokens
                .iter()
                .map(|&c| map.phone_of(c))
                .collect::<Result<_>>()?;
            Ok(GroupedSequence::from_keys(&keys))
        }
    }
}

/// One mask-and-fill pass at iteration `k` (1-based).
pub fn correct_iteration<S: UnitScorer + ?Sized>(
    state: &[u32],
    scorer: &S,
    schedule: &MaskSchedule,
    k: usize,
    variant: &CorrectionVariant,
    phone_map: Option<&PhoneMap>,
) -> Result<IterationTrace> {
    if variant.needs_phone_map() && phone_map.is_none() {
        bail!(Corrector, "variant {variant:?} needs a phone map");
    }
    let vocab = scorer.vocab();
    if let Some(i) = state.iter().position(|&t| !vocab.is_unit(t)) {
        bail!(
            Corrector,
            "frame {i} holds {} which is not a unit id",
            state[i]
        );
    }
    if state.len() != schedule.frames {
        bail!(
            Corrector,
            "schedule built for {} frames applied to {}",
            schedule.frames,
            state.len()
        );
    }
    let n_k = schedule.budget(k);
    let mut trace = IterationTrace {
        iteration: k,
        n_k,
        m: schedule.m,
        masked: vec![],
        filled: vec![],
        output: state.to_vec(),
    };
    if n_k == 0 {
        return Ok(trace);
    }

    let confidences = score_confidences(scorer, state)?;
    let mut grouped = grouping_keys(state, variant, phone_map)?;
    grouped.score_max(&confidences)?;
    let vowels_only = matches!(variant.filter, CandidateFilter::VowelsAfter(k0) if k > k0);
    let candidate = |g: &Group| -> bool {
        if !vowels_only {
            return true;
        }
        let Some(map) = phone_map else { return false };
        let phone = match variant.grouping {
            Grouping::ByPhone => g.key,
            Grouping::ByCluster => match map.phone_of(g.key) {
                Ok(p) => p,
                Err(_) => return false,
            },
        };
        map.is_vowel(phone)
    };
    let picked = select_mask_groups(&grouped, n_k, candidate);
    if picked.is_empty() {
        return Ok(trace);
    }

    let groups = grouped.groups();
    let mut masked = state.to_vec();
    for &i in &picked {
        masked[groups[i].frames()].fill(vocab.mask_id());
        trace.masked.push(SpanRecord {
            start: groups[i].start,
            len: groups[i].len,
            confidence: groups[i].score.unwrap_or(f64::NAN),
        });
    }
    let predictions = predict_masked(scorer, &masked)?;
    let mut unit = vec![0u32; state.len()];
    let mut conf = vec![0.0f64; state.len()];
    for p in &predictions {
        unit[p.position] = p.unit;
        conf[p.position] = p.confidence;
    }

    let mut ranked: Vec<(usize, f64)> = picked
        .iter()
        .map(|&i| {
            let g = &groups[i];
            (i, conf[g.frames()].iter().sum::<f64>() / g.len as f64)
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(groups[a.0].start.cmp(&groups[b.0].start))
    });
    let mut filled = 0;
    for (i, c) in ranked {
        if variant.fill == Fill::TopM && filled >= schedule.m {
            break;
        }
        let g = &groups[i];
        trace.output[g.frames()].copy_from_slice(&unit[g.frames()]);
        trace.filled.push(SpanRecord {
            start: g.start,
            len: g.len,
            confidence: c,
        });
        filled += g.len;
    }
    trace.filled.sort_by_key(|s| s.start);
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub sequence: ClusterSequence,
    pub schedule: MaskSchedule,
    pub trace: Vec<IterationTrace>,
}

/// Runs `K` iterations, regrouping and rescoring the corrected sequence
/// every time. An empty sequence, or one too short for any mask, is
/// returned unchanged.
pub fn correct<S: UnitScorer + ?Sized>(
    seq: &ClusterSequence,
    scorer: &S,
    config: &CorrectorConfig,
    phone_map: Option<&PhoneMap>,
) -> Result<Correction> {
    if config.variant.needs_phone_map() && phone_map.is_none() {
        bail!(Corrector, "variant {:?} needs a phone map", config.variant);
    }
    let schedule = build_schedule(seq.len().max(1), config.iterations, config.p_mask)?;
    if seq.is_empty() {
        return Ok(Correction {
            sequence: seq.clone(),
            schedule,
            trace: Vec::new(),
        });
    }
    let mut state = seq.tokens.clone();
    let mut trace = Vec::with_capacity(config.iterations);
    if !schedule.is_empty() {
        for k in 1..=config.iterations {
            let step = correct_iteration(&state, scorer, &schedule, k, &config.variant, phone_map)
                .map_err(|e| {
                    crate::Error::Corrector(alloc::format!("utterance {}: {e}", seq.utt_id))
                })?;
            state.clone_from(&step.output);
            trace.push(step);
        }
    }
    let sequence = ClusterSequence {
        utt_id: seq.utt_id.clone(),
        tokens: state,
    };
    Ok(Correction {
        sequence,
        schedule,
        trace,
    })
}

/// Corrects utterances independently; output order follows the input.
pub fn correct_all<E: Executor, S: UnitScorer + ?Sized>(
    exec: &E,
    seqs: &[ClusterSequence],
    scorer: &S,
    config: &CorrectorConfig,
    phone_map: Option<&PhoneMap>,
) -> Result<Vec<Correction>> {
    exec.map(seqs.len(), |i| correct(&seqs[i], scorer, config, phone_map))
        .into_iter()
        .collect()
}
