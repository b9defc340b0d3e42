//! Discrete unit sequences and their run-length grouped view.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Unit alphabet `[0, size)` plus one reserved mask id equal to `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnitVocab {
    size: u32,
}

impl UnitVocab {
    pub const DEFAULT_SIZE: u32 = 500;

    pub fn new(size: u32) -> Result<Self> {
        if size < 2 {
            bail!(Sequence, "vocabulary size must be at least 2, got {size}");
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mask_id(&self) -> u32 {
        self.size
    }

    pub fn is_unit(&self, id: u32) -> bool {
        id < self.size
    }
}

/// One utterance as a sequence of unit ids, one per 20 ms frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSequence {
    pub utt_id: String,
    pub tokens: Vec<u32>,
}

impl ClusterSequence {
    /// Validated constructor: non-empty, every token a real unit.
    pub fn new(utt_id: impl Into<String>, tokens: Vec<u32>, vocab: UnitVocab) -> Result<Self> {
        let utt_id = utt_id.into();
        if tokens.is_empty() {
            bail!(Sequence, "utterance {utt_id} is empty");
        }
        if let Some(pos) = tokens.iter().position(|&t| !vocab.is_unit(t)) {
            bail!(
                Sequence,
                "utterance {utt_id}: token {} at frame {pos} outside vocabulary of {}",
                tokens[pos],
                vocab.size()
            );
        }
        Ok(Self { utt_id, tokens })
    }

    /// An explicitly empty utterance.
    pub fn empty(utt_id: impl Into<String>) -> Self {
        Self {
            utt_id: utt_id.into(),
            tokens: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn grouped(&self) -> GroupedSequence {
        GroupedSequence::from_keys(&self.tokens)
    }
}

/// A maximal run of one grouping key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Group {
    pub key: u32,
    pub start: usize,
    pub len: usize,
    pub score: Option<f64>,
}

impl Group {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn frames(&self) -> core::ops::Range<usize> {
        self.start..self.end()
    }
}

/// Run-length view of a key sequence. Groups are contiguous, cover `[0, T)`
/// and adjacent groups carry distinct keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupedSequence {
    groups: Vec<Group>,
}

impl GroupedSequence {
    pub fn from_keys(keys: &[u32]) -> Self {
        let mut groups: Vec<Group> = Vec::new();
        for (i, &key) in keys.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.key == key => g.len += 1,
                _ => groups.push(Group {
                    key,
                    start: i,
                    len: 1,
                    score: None,
                }),
            }
        }
        Self { groups }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Total frame count covered.
    pub fn frames(&self) -> usize {
        self.groups.last().map_or(0, Group::end)
    }

    /// Scores each group by the maximum of its member-frame scores.
    pub fn score_max(&mut self, frame_scores: &[f64]) -> Result<()> {
        if frame_scores.len() != self.frames() {
            bail!(
                Sequence,
                "{} frame scores for a grouped view of {} frames",
                frame_scores.len(),
                self.frames()
            );
        }
        for g in &mut self.groups {
            let best = frame_scores[g.frames()]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            g.score = Some(best);
        }
        Ok(())
    }
}

/// Groups `tokens` into maximal runs of equal key. The key of frame `i` is
/// `keys[i]` when given, otherwise `tokens[i]`.
pub fn group_runs(tokens: &[u32], keys: Option<&[u32]>) -> Result<GroupedSequence> {
    match keys {
        Some(keys) if keys.len() != tokens.len() => {
            bail!(
                Sequence,
                "{} grouping keys for {} tokens",
                keys.len(),
                tokens.len()
            )
        }
        Some(keys) => Ok(GroupedSequence::from_keys(keys)),
        None => Ok(GroupedSequence::from_keys(tokens)),
    }
}

/// Expands a grouped view back into its per-frame keys.
pub fn ungroup(grouped: &GroupedSequence) -> Vec<u32> {
    let mut out = Vec::with_capacity(grouped.frames());
    for g in grouped.groups() {
        out.extend(core::iter::repeat_n(g.key, g.len));
    }
    out
}
