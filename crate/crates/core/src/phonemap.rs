//! Cluster-to-phone mapping learned from frame alignments, and phone error
//! rates.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::seqcore::{ClusterSequence, GroupedSequence, UnitVocab};

/// Symbol reserved for clusters never seen during learning.
pub const UNKNOWN_PHONE: &str = "<unk>";

/// Most likely phone for every cluster id.
///
/// `mapping[c]` indexes `phones`; the id `phones.len()` denotes
/// [`UNKNOWN_PHONE`].
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhoneMap {
    pub phones: Vec<String>,
    pub vowels: Vec<String>,
    pub mapping: Vec<u32>,
    /// `V × P` frame co-occurrence counts.
    pub counts: Vec<Vec<u64>>,
}

impl PhoneMap {
    /// Builds the map as the row-argmax of `counts` (lowest phone index on
    /// ties, unknown for all-zero rows).
    pub fn from_counts(
        phones: Vec<String>,
        vowels: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if phones.is_empty() {
            bail!(PhoneMap, "empty phone inventory");
        }
        if let Some(v) = vowels.iter().find(|v| !phones.contains(v)) {
            bail!(PhoneMap, "vowel {v} is not in the phone inventory");
        }
        if let Some(c) = counts.iter().position(|row| row.len() != phones.len()) {
            bail!(
                PhoneMap,
                "count row {c} has {} entries for {} phones",
                counts[c].len(),
                phones.len()
            );
        }
        let unknown = phones.len() as u32;
        let mapping = counts
            .iter()
            .map(|row| {
                let mut best = unknown;
                let mut top = 0;
                for (p, &c) in row.iter().enumerate() {
                    if c > top {
                        top = c;
                        best = p as u32;
                    }
                }
                best
            })
            .collect();
        Ok(Self {
            phones,
            vowels,
            mapping,
            counts,
        })
    }

    /// A map given directly as cluster → phone ids.
    pub fn from_mapping(
        phones: Vec<String>,
        vowels: Vec<String>,
        mapping: Vec<u32>,
    ) -> Result<Self> {
        let p = phones.len();
        let mut counts = vec![vec![0u64; p]; mapping.len()];
        for (c, &ph) in mapping.iter().enumerate() {
            if ph as usize > p {
                bail!(
                    PhoneMap,
                    "cluster {c} maps to phone id {ph} outside an inventory of {p}"
                );
            }
            if (ph as usize) < p {
                counts[c][ph as usize] = 1;
            }
        }
        let map = Self::from_counts(phones, vowels, counts)?;
        debug_assert_eq!(map.mapping, mapping);
        Ok(map)
    }

    pub fn clusters(&self) -> usize {
        self.mapping.len()
    }

    pub fn unknown_id(&self) -> u32 {
        self.phones.len() as u32
    }

    pub fn symbol(&self, phone: u32) -> &str {
        self.phones
            .get(phone as usize)
            .map_or(UNKNOWN_PHONE, String::as_str)
    }

    pub fn phone_id(&self, symbol: &str) -> Option<u32> {
        self.phones
            .iter()
            .position(|p| p == symbol)
            .map(|i| i as u32)
    }

    pub fn is_vowel(&self, phone: u32) -> bool {
        self.phones
            .get(phone as usize)
            .is_some_and(|p| self.vowels.contains(p))
    }

    /// Phone of one cluster id.
    pub fn phone_of(&self, cluster: u32) -> Result<u32> {
        match self.mapping.get(cluster as usize) {
            Some(&p) => Ok(p),
            None => bail!(
                PhoneMap,
                "cluster {cluster} has no mapping (map covers {} clusters)",
                self.mapping.len()
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rebuilt = Self::from_counts(
            self.phones.clone(),
            self.vowels.clone(),
            self.counts.clone(),
        )?;
        if rebuilt.mapping != self.mapping {
            bail!(
                PhoneMap,
                "mapping disagrees with the row-argmax of its counts"
            );
        }
        Ok(())
    }
}

/// Accumulates frame-level cluster/phone co-occurrences over utterances.
///
/// `frame_phones` pairs each utterance id with its per-frame phone ids.
pub fn learn_phone_map(
    clusters: &[ClusterSequence],
    frame_phones: &[(String, Vec<u32>)],
    vocab: UnitVocab,
    phones: Vec<String>,
    vowels: Vec<String>,
) -> Result<PhoneMap> {
    let by_id: BTreeMap<&str, &[u32]> = frame_phones
        .iter()
        .map(|(id, p)| (id.as_str(), p.as_slice()))
        .collect();
    let n_phones = phones.len();
    let mut counts = vec![vec![0u64; n_phones]; vocab.len()];
    for seq in clusters {
        let Some(labels) = by_id.get(seq.utt_id.as_str()) else {
            bail!(PhoneMap, "no phone alignment for utterance {}", seq.utt_id);
        };
        if labels.len() != seq.len() {
            bail!(
                PhoneMap,
                "utterance {}: {} cluster frames but {} phone frames",
                seq.utt_id,
                seq.len(),
                labels.len()
            );
        }
        for (&c, &p) in seq.tokens.iter().zip(labels.iter()) {
            if !vocab.is_unit(c) {
                bail!(
                    PhoneMap,
                    "utterance {}: cluster {c} outside the vocabulary",
                    seq.utt_id
                );
            }
            if p as usize >= n_phones {
                bail!(
                    PhoneMap,
                    "utterance {}: phone id {p} outside the inventory",
                    seq.utt_id
                );
            }
            counts[c as usize][p as usize] += 1;
        }
    }
    PhoneMap::from_counts(phones, vowels, counts)
}

/// Maps frames to phones; with `collapse`, runs of one phone become a single
/// symbol.
pub fn frames_to_phones(tokens: &[u32], map: &PhoneMap, collapse: bool) -> Result<Vec<u32>> {
    let frames: Vec<u32> = tokens
        .iter()
        .map(|&c| map.phone_of(c))
        .collect::<Result<_>>()?;
    if collapse {
        Ok(GroupedSequence::from_keys(&frames)
            .groups()
            .iter()
            .map(|g| g.key)
            .collect())
    } else {
        Ok(frames)
    }
}

/// Edit counts of one hypothesis against one reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub subs: usize,
    pub dels: usize,
    pub ins: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.subs + self.dels + self.ins
    }

    /// Percent errors per reference symbol.
    pub fn per(&self) -> f64 {
        if self.ref_len == 0 {
            return 0.0;
        }
        100.0 * self.errors() as f64 / self.ref_len as f64
    }
}

impl core::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.subs += o.subs;
        self.dels += o.dels;
        self.ins += o.ins;
        self.ref_len += o.ref_len;
    }
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`.
///
/// The backtrace prefers match/substitution, then deletion, then insertion,
/// so the S/D/I split is deterministic.
pub fn phone_error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<EditCounts> {
    if reference.is_empty() {
        bail!(PhoneMap, "empty reference");
    }
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for (j, x) in d.iter_mut().take(w).enumerate() {
        *x = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut out = EditCounts {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0
            && j > 0
            && here == d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1])
        {
            out.subs += usize::from(reference[i - 1] != hyp[j - 1]);
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[(i - 1) * w + j] + 1 {
            out.dels += 1;
            i -= 1;
        } else {
            out.ins += 1;
            j -= 1;
        }
    }
    Ok(out)
}

/// One scored utterance of a corpus PER report.
#[derive(Debug, Clone, PartialEq)]
pub struct UttPer {
    pub utt_id: String,
    pub counts: EditCounts,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusPer {
    pub utterances: Vec<UttPer>,
    pub total: EditCounts,
}

impl CorpusPer {
    /// `100·Σ(S+D+I) / Σ|ref|`.
    pub fn per(&self) -> f64 {
        self.total.per()
    }
}

/// Scores `(utt_id, hyp, ref)` triples and pools their edit counts.
pub fn corpus_per<'a, T, I>(pairs: I) -> Result<CorpusPer>
where
    T: PartialEq + 'a,
    I: IntoIterator<Item = (&'a str, &'a [T], &'a [T])>,
{
    let mut out = CorpusPer::default();
    for (id, hyp, reference) in pairs {
        let counts = phone_error_rate(hyp, reference)
            .map_err(|e| crate::Error::PhoneMap(alloc::format!("{id}: {e}")))?;
        out.total += counts;
        out.utterances.push(UttPer {
            utt_id: id.to_string(),
            counts,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ARPABET_40, ARPABET_VOWELS};
    use proptest::prelude::*;

    fn inventory() -> (Vec<String>, Vec<String>) {
        (
            ARPABET_40.iter().map(|s| s.to_string()).collect(),
            ARPABET_VOWELS.iter().map(|s| s.to_string()).collect(),
        )
    }

    const EXAMPLE_INPUT: [u32; 18] = [
        7, 345, 181, 181, 181, 181, 468, 406, 406, 467, 356, 356, 356, 281, 281, 453, 9, 9,
    ];

    fn worked_example_map() -> PhoneMap {
        let (phones, vowels) = inventory();
        let id = |s: &str| phones.iter().position(|p| p == s).unwrap() as u32;
        let mut mapping = vec![0u32; 500];
        for (c, p) in [
            (7, "W"),
            (345, "W"),
            (181, "AH"),
            (468, "R"),
            (406, "R"),
            (467, "R"),
            (356, "IH"),
            (281, "Z"),
            (453, "Z"),
            (9, "Z"),
            (109, "EH"),
            (264, "EH"),
        ] {
            mapping[c] = id(p);
        }
        PhoneMap::from_mapping(phones, vowels, mapping).unwrap()
    }

    fn symbols(map: &PhoneMap, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&p| map.symbol(p).to_string()).collect()
    }

    #[test]
    fn worked_example_phone_rows() {
        let map = worked_example_map();
        let frames = frames_to_phones(&EXAMPLE_INPUT, &map, false).unwrap();
        assert_eq!(
            symbols(&map, &frames).join(" "),
            "W W AH AH AH AH R R R R IH IH IH Z Z Z Z Z"
        );
        let collapsed = frames_to_phones(&EXAMPLE_INPUT, &map, true).unwrap();
        assert_eq!(symbols(&map, &collapsed).join(" "), "W AH R IH Z");
        let mut output = EXAMPLE_INPUT;
        output[2..6].copy_from_slice(&[109, 109, 264, 264]);
        let collapsed = frames_to_phones(&output, &map, true).unwrap();
        assert_eq!(symbols(&map, &collapsed).join(" "), "W EH R IH Z");
        assert!(frames_to_phones(&[], &map, true).unwrap().is_empty());
        assert!(frames_to_phones(&[500], &map, true).is_err());
    }

    #[test]
    fn learns_exclusive_cooccurrence() {
        let (phones, vowels) = inventory();
        let w = 21;
        let seqs =
            vec![ClusterSequence::new("a", vec![7, 7, 3], UnitVocab::new(10).unwrap()).unwrap()];
        let labels = vec![("a".to_string(), vec![w, w, 1])];
        let map =
            learn_phone_map(&seqs, &labels, UnitVocab::new(10).unwrap(), phones, vowels).unwrap();
        assert_eq!(map.symbol(map.mapping[7]), "W");
        assert_eq!(map.mapping[0], map.unknown_id());
        assert_eq!(map.symbol(map.mapping[0]), UNKNOWN_PHONE);
        map.validate().unwrap();
    }

    #[test]
    fn argmax_ties_take_lowest_phone() {
        let (phones, vowels) = inventory();
        let mut row = vec![0u64; 40];
        row[0] = 5;
        row[1] = 5;
        let map = PhoneMap::from_counts(phones, vowels, vec![row]).unwrap();
        assert_eq!(map.mapping, vec![0]);
    }

    #[test]
    fn learning_errors() {
        let (phones, vowels) = inventory();
        let v = UnitVocab::new(10).unwrap();
        let seqs = vec![ClusterSequence::new("a", vec![1, 2], v).unwrap()];
        let short = vec![("a".to_string(), vec![0])];
        assert!(learn_phone_map(&seqs, &short, v, phones.clone(), vowels.clone()).is_err());
        let other = vec![("b".to_string(), vec![0, 0])];
        assert!(learn_phone_map(&seqs, &other, v, phones, vowels).is_err());
    }

    #[test]
    fn per_examples() {
        assert_eq!(
            phone_error_rate(&["A", "B"], &["A", "C"]).unwrap().per(),
            50.0
        );
        assert_eq!(phone_error_rate(&[1, 2, 3], &[1, 2, 3]).unwrap().per(), 0.0);
        let c = phone_error_rate(&[1, 1, 1, 1], &[1]).unwrap();
        assert_eq!((c.ins, c.per()), (3, 300.0));
        assert!(phone_error_rate::<u32>(&[1], &[]).is_err());
        let c = phone_error_rate::<u32>(&[], &[1, 2]).unwrap();
        assert_eq!((c.dels, c.per()), (2, 100.0));
    }

    #[test]
    fn corpus_per_pools_counts() {
        let a: Vec<u32> = vec![1, 2];
        let b: Vec<u32> = vec![1, 3];
        let c: Vec<u32> = vec![4, 4, 4];
        let r = corpus_per([
            ("x", a.as_slice(), b.as_slice()),
            ("y", c.as_slice(), c.as_slice()),
        ])
        .unwrap();
        assert_eq!(r.total.errors(), 1);
        assert_eq!(r.total.ref_len, 5);
        assert!((r.per() - 20.0).abs() < 1e-12);
    }

    /// Plain recursion over every alignment; only usable for short inputs.
    fn brute_distance(h: &[u32], r: &[u32]) -> usize {
        match (h, r) {
            ([], r) => r.len(),
            (h, []) => h.len(),
            ([a, hs @ ..], [b, rs @ ..]) => {
                let diag = brute_distance(hs, rs) + usize::from(a != b);
                let del = brute_distance(h, rs) + 1;
                let ins = brute_distance(hs, r) + 1;
                diag.min(del).min(ins)
            }
        }
    }

    proptest! {
        #[test]
        fn matches_exhaustive_recursion(h in prop::collection::vec(0u32..3, 0..7), r in prop::collection::vec(0u32..3, 1..7)) {
            let c = phone_error_rate(&h, &r).unwrap();
            prop_assert_eq!(c.errors(), brute_distance(&h, &r));
            prop_assert_eq!(r.len() + c.ins - c.dels, h.len());
        }

        #[test]
        fn swap_exchanges_dels_and_ins(h in prop::collection::vec(0u32..40, 1..30), r in prop::collection::vec(0u32..40, 1..30)) {
            let a = phone_error_rate(&h, &r).unwrap();
            let b = phone_error_rate(&r, &h).unwrap();
            prop_assert_eq!(a.errors(), b.errors());
            prop_assert_eq!(a.dels + b.dels, a.ins + b.ins);
            prop_assert_eq!(phone_error_rate(&r, &r).unwrap().per(), 0.0);
        }

        #[test]
        fn grouping_commutes_with_mapping(tokens in prop::collection::vec(0u32..12, 0..40), mapping in prop::collection::vec(0u32..5, 12)) {
            let (phones, vowels) = inventory();
            let map = PhoneMap::from_mapping(phones, vowels, mapping).unwrap();
            let direct = frames_to_phones(&tokens, &map, true).unwrap();
            let keys: Vec<u32> = GroupedSequence::from_keys(&tokens).groups().iter().map(|g| g.key).collect();
            prop_assert_eq!(direct, frames_to_phones(&keys, &map, true).unwrap());
        }
    }
}
