//! Synthetic accent-shift corpus.
//!
//! Utterances are random word strings from a small lexicon, rendered frame by
//! frame: each phone gets a uniform integer duration, every frame draws a
//! cluster from the phone's emission distribution and a feature vector from an
//! isotropic Gaussian around that cluster's center. Two optional knobs make
//! the units look more like learned ones: a frame may keep its predecessor's
//! cluster inside a phone, and a small share of frames emit a random cluster
//! of any phone. An accent is a phone-level
//! substitution map; shifted phones are re-rendered with the target phone's
//! emissions while the standard rendering is kept as ground truth.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{bail, Result};
use crate::exec::{Executor, Serial};
use crate::rng;

/// Silence first, then consonants, then vowels.
pub const ARPABET_40: [&str; 40] = [
    "SIL", "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S",
    "SH", "T", "TH", "V", "W", "Y", "Z", "ZH", "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER",
    "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

pub const ARPABET_VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

/// Vowel substitutions loosely modelled on British against North American
/// English.
pub const DEFAULT_VOWEL_SHIFT: [(&str, &str); 5] = [
    ("AE", "AA"),
    ("OW", "AO"),
    ("ER", "AH"),
    ("IY", "AY"),
    ("AH", "EH"),
];

pub const SILENCE: &str = "SIL";

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LexiconSpec {
    pub phones: Vec<String>,
    pub vowels: Vec<String>,
    /// Words as phone-id strings.
    pub words: Vec<Vec<u32>>,
    /// Cluster ids owned by each phone; a partition of `[0, V)`.
    pub phone_clusters: Vec<Vec<u32>>,
    /// Per-phone weights over `phone_clusters[p]`.
    pub emission: Vec<Vec<f64>>,
    /// Inclusive frame-duration range per phone.
    pub duration_range: (usize, usize),
    pub feature_dim: usize,
    pub centroid_spread: f64,
    pub noise_sigma: f64,
    /// Seed of the cluster-center layout.
    pub layout_seed: u64,
    /// Pad every utterance with one silence phone at each end.
    pub silence_edges: bool,
    /// Chance that a frame keeps the previous frame's cluster inside one
    /// phone instance. Zero draws every frame independently; any value keeps
    /// the per-frame marginal equal to the emission weights.
    pub persistence: f64,
    /// Chance that a frame emits a uniformly drawn cluster of any phone.
    pub confusion: f64,
}

/// Knobs for [`LexiconSpec::synthetic`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LexiconParams {
    pub clusters: u32,
    pub words: usize,
    pub word_len: (usize, usize),
    pub duration_range: (usize, usize),
    pub feature_dim: usize,
    pub centroid_spread: f64,
    pub noise_sigma: f64,
    pub persistence: f64,
    pub confusion: f64,
    pub seed: u64,
}

impl Default for LexiconParams {
    fn default() -> Self {
        Self {
            clusters: 50,
            words: 20,
            word_len: (3, 6),
            duration_range: (2, 6),
            feature_dim: 16,
            centroid_spread: 1.0,
            noise_sigma: 0.1,
            persistence: 0.9,
            confusion: 0.03,
            seed: 7,
        }
    }
}

impl LexiconSpec {
    /// A 40-phone ARPAbet lexicon with randomly drawn words.
    ///
    /// Clusters are spread as evenly as possible: each phone owns
    /// `clusters / 40` ids and the first `clusters % 40` phones one more.
    /// Words alternate consonant and vowel slots, and the first words cycle
    /// through the inventory so every non-silence phone is used.
    pub fn synthetic(params: &LexiconParams) -> Result<Self> {
        let phones: Vec<String> = ARPABET_40.iter().map(|s| s.to_string()).collect();
        let vowels: Vec<String> = ARPABET_VOWELS.iter().map(|s| s.to_string()).collect();
        let n_phones = phones.len() as u32;
        if params.clusters < n_phones {
            bail!(
                Corpus,
                "{} clusters cannot cover {} phones",
                params.clusters,
                n_phones
            );
        }
        let phone_clusters = spread_clusters(params.clusters, n_phones);
        let emission = phone_clusters.iter().map(|c| vec![1.0; c.len()]).collect();

        let vowel_ids: Vec<u32> = (0..n_phones)
            .filter(|&p| vowels.contains(&phones[p as usize]))
            .collect();
        let consonant_ids: Vec<u32> = (1..n_phones)
            .filter(|&p| !vowels.contains(&phones[p as usize]))
            .collect();
        let (lo, hi) = params.word_len;
        if lo == 0 || lo > hi {
            bail!(Corpus, "invalid word length range [{lo}, {hi}]");
        }
        let mut r = rng::derived(params.seed, 0x1e81c0);
        let mut words = Vec::with_capacity(params.words);
        let mut next_c = 0usize;
        let mut next_v = 0usize;
        for w in 0..params.words {
            let len = r.random_range(lo..=hi);
            let vowel_first = r.random_bool(0.3);
            let mut word = Vec::with_capacity(len);
            for slot in 0..len {
                let is_vowel = (slot % 2 == 0) == vowel_first;
                let pool = if is_vowel { &vowel_ids } else { &consonant_ids };
                // coverage pass: the first words walk the inventory in order
                let cursor = if is_vowel { &mut next_v } else { &mut next_c };
                let id = if w < 2 * consonant_ids.len() && *cursor < pool.len() {
                    *cursor += 1;
                    pool[*cursor - 1]
                } else {
                    pool[r.random_range(0..pool.len())]
                };
                word.push(id);
            }
            words.push(word);
        }
        let spec = Self {
            phones,
            vowels,
            words,
            phone_clusters,
            emission,
            duration_range: params.duration_range,
            feature_dim: params.feature_dim,
            centroid_spread: params.centroid_spread,
            noise_sigma: params.noise_sigma,
            layout_seed: params.seed,
            silence_edges: true,
            persistence: params.persistence,
            confusion: params.confusion,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phones.is_empty() {
            bail!(Corpus, "empty phone inventory");
        }
        if self.words.is_empty() {
            bail!(Corpus, "empty lexicon");
        }
        let n = self.phones.len();
        for v in &self.vowels {
            if !self.phones.contains(v) {
                bail!(Corpus, "vowel {v} is not a declared phone");
            }
        }
        for (i, w) in self.words.iter().enumerate() {
            if w.is_empty() {
                bail!(Corpus, "word {i} has no phones");
            }
            if let Some(p) = w.iter().find(|&&p| p as usize >= n) {
                bail!(Corpus, "word {i} uses undeclared phone id {p}");
            }
        }
        if self.phone_clusters.len() != n || self.emission.len() != n {
            bail!(
                Corpus,
                "cluster partition and emissions must list all {n} phones"
            );
        }
        let v = self.cluster_count();
        let mut seen = vec![false; v];
        for (p, cl) in self.phone_clusters.iter().enumerate() {
            if cl.is_empty() {
                bail!(Corpus, "phone {} owns no clusters", self.phones[p]);
            }
            if self.emission[p].len() != cl.len() {
                bail!(
                    Corpus,
                    "phone {}: emission size differs from its cluster count",
                    self.phones[p]
                );
            }
            if self.emission[p]
                .iter()
                .any(|&w| !(w >= 0.0) || !w.is_finite())
                || self.emission[p].iter().sum::<f64>() <= 0.0
            {
                bail!(
                    Corpus,
                    "phone {}: emission weights must be non-negative with positive mass",
                    self.phones[p]
                );
            }
            for &c in cl {
                if c as usize >= v || seen[c as usize] {
                    bail!(Corpus, "cluster ids do not partition [0, {v})");
                }
                seen[c as usize] = true;
            }
        }
        let (lo, hi) = self.duration_range;
        if lo == 0 || lo > hi {
            bail!(Corpus, "invalid duration range [{lo}, {hi}]");
        }
        if self.feature_dim == 0 {
            bail!(Corpus, "feature dimension must be positive");
        }
        if !(self.centroid_spread > 0.0) || !(self.noise_sigma >= 0.0) {
            bail!(Corpus, "centroid spread must be > 0 and noise sigma >= 0");
        }
        if !(0.0..1.0).contains(&self.persistence) {
            bail!(
                Corpus,
                "persistence must lie in [0, 1), got {}",
                self.persistence
            );
        }
        if !(0.0..1.0).contains(&self.confusion) {
            bail!(
                Corpus,
                "confusion must lie in [0, 1), got {}",
                self.confusion
            );
        }
        if self.silence_edges && self.phone_id(SILENCE).is_none() {
            bail!(
                Corpus,
                "silence edges requested but {SILENCE} is not a phone"
            );
        }
        Ok(())
    }

    pub fn cluster_count(&self) -> usize {
        self.phone_clusters.iter().map(Vec::len).sum()
    }

    pub fn phone_id(&self, symbol: &str) -> Option<u32> {
        self.phones
            .iter()
            .position(|p| p == symbol)
            .map(|i| i as u32)
    }

    /// Phone owning each cluster id.
    pub fn cluster_phones(&self) -> Vec<u32> {
        let mut out = vec![0; self.cluster_count()];
        for (p, cl) in self.phone_clusters.iter().enumerate() {
            for &c in cl {
                out[c as usize] = p as u32;
            }
        }
        out
    }

    /// Gaussian feature centers, one row per cluster, drawn with standard
    /// deviation `centroid_spread` per coordinate.
    pub fn cluster_centers(&self) -> Vec<Vec<f64>> {
        let mut r = rng::derived(self.layout_seed, 0xce47e5);
        // redraw centers that land within half the typical norm of an
        // earlier one, so every pair of clusters stays separable
        let min_sq = self.centroid_spread * self.centroid_spread * self.feature_dim as f64 / 4.0;
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(self.cluster_count());
        for _ in 0..self.cluster_count() {
            let mut c = Vec::new();
            for _attempt in 0..1000 {
                c = (0..self.feature_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        self.centroid_spread * z
                    })
                    .collect();
                let clear = centers.iter().all(|o| {
                    o.iter()
                        .zip(&c)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        >= min_sq
                });
                if clear {
                    break;
                }
            }
            centers.push(c);
        }
        centers
    }
}

fn spread_clusters(clusters: u32, phones: u32) -> Vec<Vec<u32>> {
    let base = clusters / phones;
    let extra = clusters % phones;
    let mut next = 0;
    (0..phones)
        .map(|p| {
            let n = base + u32::from(p < extra);
            let ids = (next..next + n).collect();
            next += n;
            ids
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShiftSpec {
    pub substitutions: BTreeMap<String, String>,
    pub apply_prob: f64,
}

impl ShiftSpec {
    pub fn new<I, S>(pairs: I, apply_prob: f64) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        Self {
            substitutions: pairs
                .into_iter()
                .map(|(a, b)| (a.into(), b.into()))
                .collect(),
            apply_prob,
        }
    }

    pub fn default_vowel_shift(apply_prob: f64) -> Self {
        Self::new(DEFAULT_VOWEL_SHIFT, apply_prob)
    }

    /// Resolves symbols against the lexicon into a per-phone target table.
    fn resolve(&self, spec: &LexiconSpec) -> Result<Vec<u32>> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            bail!(Corpus, "apply_prob {} outside [0, 1]", self.apply_prob);
        }
        let mut table: Vec<u32> = (0..spec.phones.len() as u32).collect();
        for (from, to) in &self.substitutions {
            let Some(f) = spec.phone_id(from) else {
                bail!(Corpus, "unknown phone {from} in shift")
            };
            let Some(t) = spec.phone_id(to) else {
                bail!(Corpus, "unknown phone {to} in shift")
            };
            table[f as usize] = t;
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Accent {
    Standard,
    Accented,
}

impl Accent {
    pub fn as_str(&self) -> &'static str {
        match self {
            Accent::Standard => "standard",
            Accent::Accented => "accented",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub accent: Accent,
    pub words: Vec<u32>,
    /// Standard pronunciation, one id per phone instance.
    pub phones: Vec<u32>,
    pub durations: Vec<usize>,
    /// Realized phone per frame (after any shift).
    pub frame_phones: Vec<u32>,
    /// Realized cluster per frame.
    pub clusters: Vec<u32>,
    /// Standard-accent rendering of the same utterance.
    pub standard_clusters: Vec<u32>,
    /// Row-major `frames × feature_dim`.
    pub features: Vec<f32>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.clusters.len()
    }

    /// Frame span of each phone instance.
    pub fn phone_spans(&self) -> impl Iterator<Item = core::ops::Range<usize>> + '_ {
        self.durations.iter().scan(0usize, |start, &d| {
            let s = *start;
            *start += d;
            Some(s..s + d)
        })
    }

    pub fn feature_row(&self, frame: usize, dim: usize) -> &[f32] {
        &self.features[frame * dim..(frame + 1) * dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::frames).sum()
    }

    /// All features stacked as an `N × d` row-major matrix.
    pub fn stacked_features(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.total_frames() * self.feature_dim);
        for u in &self.utterances {
            out.extend_from_slice(&u.features);
        }
        out
    }
}

struct Renderer<'a> {
    spec: &'a LexiconSpec,
    centers: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
}

impl<'a> Renderer<'a> {
    fn new(spec: &'a LexiconSpec) -> Self {
        let cumulative = spec
            .emission
            .iter()
            .map(|w| {
                let total: f64 = w.iter().sum();
                let mut acc = 0.0;
                w.iter()
                    .map(|x| {
                        acc += x / total;
                        acc
                    })
                    .collect()
            })
            .collect();
        Self {
            spec,
            centers: spec.cluster_centers(),
            cumulative,
        }
    }

    fn emit(&self, phone: u32, r: &mut impl RngCore) -> u32 {
        let cdf = &self.cumulative[phone as usize];
        let clusters = &self.spec.phone_clusters[phone as usize];
        if clusters.len() == 1 {
            return clusters[0];
        }
        let x: f64 = r.random();
        let i = cdf
            .iter()
            .position(|&c| x < c)
            .unwrap_or(clusters.len() - 1);
        clusters[i]
    }

    fn feature(&self, cluster: u32, out: &mut [f32], r: &mut impl RngCore) {
        let center = &self.centers[cluster as usize];
        for (o, &c) in out.iter_mut().zip(center) {
            let z: f64 = StandardNormal.sample(r);
            *o = (c + self.spec.noise_sigma * z) as f32;
        }
    }

    /// Renders frames `span` of `utt` as `phone`.
    fn render(
        &self,
        utt: &mut Utterance,
        span: core::ops::Range<usize>,
        phone: u32,
        r: &mut impl RngCore,
    ) {
        let dim = self.spec.feature_dim;
        let mut prev = None;
        for f in span {
            let c = match prev {
                Some(c) if self.spec.persistence > 0.0 && r.random_bool(self.spec.persistence) => c,
                _ => self.emit(phone, r),
            };
            prev = Some(c);
            let c = if self.spec.confusion > 0.0 && r.random_bool(self.spec.confusion) {
                r.random_range(0..self.centers.len() as u32)
            } else {
                c
            };
            utt.clusters[f] = c;
            utt.frame_phones[f] = phone;
            self.feature(c, &mut utt.features[f * dim..(f + 1) * dim], r);
        }
    }
}

/// Generates `n_utts` standard-accent utterances with ids `std00000`, ...
pub fn generate_standard(
    spec: &LexiconSpec,
    n_utts: usize,
    words_per_utt: (usize, usize),
    seed: u64,
) -> Result<Dataset> {
    generate(&Serial, spec, n_utts, words_per_utt, seed, "std")
}

/// Generates standard-accent utterances named `{id_prefix}{index:05}`. Each
/// utterance draws from its own stream derived from `seed` and its index, so
/// the output does not depend on the executor.
pub fn generate<E: Executor>(
    exec: &E,
    spec: &LexiconSpec,
    n_utts: usize,
    words_per_utt: (usize, usize),
    seed: u64,
    id_prefix: &str,
) -> Result<Dataset> {
    spec.validate()?;
    let (lo, hi) = words_per_utt;
    if lo == 0 || lo > hi {
        bail!(Corpus, "invalid words-per-utterance range [{lo}, {hi}]");
    }
    let renderer = Renderer::new(spec);
    let silence = spec.phone_id(SILENCE);
    let utterances = exec.map(n_utts, |i| {
        let mut r = rng::derived(seed, i as u64);
        let n_words = r.random_range(lo..=hi);
        let words: Vec<u32> = (0..n_words)
            .map(|_| r.random_range(0..spec.words.len()) as u32)
            .collect();
        let mut phones = Vec::new();
        if spec.silence_edges {
            phones.extend(silence);
        }
        for &w in &words {
            phones.extend_from_slice(&spec.words[w as usize]);
        }
        if spec.silence_edges {
            phones.extend(silence);
        }
        let (dlo, dhi) = spec.duration_range;
        let durations: Vec<usize> = phones.iter().map(|_| r.random_range(dlo..=dhi)).collect();
        let frames: usize = durations.iter().sum();
        let mut utt = Utterance {
            utt_id: format!("{id_prefix}{i:05}"),
            accent: Accent::Standard,
            words,
            phones: phones.clone(),
            durations,
            frame_phones: vec![0; frames],
            clusters: vec![0; frames],
            standard_clusters: Vec::new(),
            features: vec![0.0; frames * spec.feature_dim],
        };
        let spans: Vec<_> = utt.phone_spans().collect();
        for (span, &p) in spans.into_iter().zip(&phones) {
            renderer.render(&mut utt, span, p, &mut r);
        }
        utt.standard_clusters = utt.clusters.clone();
        utt
    });
    Ok(Dataset {
        feature_dim: spec.feature_dim,
        utterances,
    })
}

/// Applies a phone-level accent shift. Each phone instance with a
/// non-identity substitution is replaced with probability `apply_prob` and
/// its frames are re-rendered as the target phone. Frame counts, the
/// reference phone string and the standard cluster ground truth are kept.
pub fn apply_accent_shift(
    dataset: &Dataset,
    spec: &LexiconSpec,
    shift: &ShiftSpec,
    seed: u64,
) -> Result<Dataset> {
    apply_accent_shift_with(&Serial, dataset, spec, shift, seed)
}

pub fn apply_accent_shift_with<E: Executor>(
    exec: &E,
    dataset: &Dataset,
    spec: &LexiconSpec,
    shift: &ShiftSpec,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    let table = shift.resolve(spec)?;
    if dataset.feature_dim != spec.feature_dim {
        bail!(
            Corpus,
            "dataset feature dim {} differs from lexicon {}",
            dataset.feature_dim,
            spec.feature_dim
        );
    }
    if let Some(u) = dataset
        .utterances
        .iter()
        .find(|u| u.phones.iter().any(|&p| p as usize >= table.len()))
    {
        bail!(
            Corpus,
            "utterance {} uses a phone outside the lexicon",
            u.utt_id
        );
    }
    let renderer = Renderer::new(spec);
    let utterances = exec.map(dataset.len(), |i| {
        let src = &dataset.utterances[i];
        let mut r = rng::derived(seed, i as u64);
        let mut utt = src.clone();
        utt.accent = Accent::Accented;
        let spans: Vec<_> = src.phone_spans().collect();
        for (span, &p) in spans.into_iter().zip(&src.phones) {
            let target = table[p as usize];
            if target == p {
                continue;
            }
            if r.random_bool(shift.apply_prob) {
                renderer.render(&mut utt, span, target, &mut r);
            }
        }
        utt
    });
    Ok(Dataset {
        feature_dim: dataset.feature_dim,
        utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_phone_spec() -> LexiconSpec {
        LexiconSpec {
            phones: vec!["A".into(), "B".into()],
            vowels: vec!["A".into()],
            words: vec![vec![0, 1]],
            phone_clusters: vec![vec![0], vec![1]],
            emission: vec![vec![1.0], vec![1.0]],
            duration_range: (2, 2),
            feature_dim: 3,
            centroid_spread: 10.0,
            noise_sigma: 0.5,
            layout_seed: 1,
            silence_edges: false,
            persistence: 0.0,
            confusion: 0.0,
        }
    }

    /// Three standard deviations of a Binomial(n, p) proportion.
    fn three_sigma(n: usize, p: f64) -> f64 {
        3.0 * libm::sqrt(p * (1.0 - p) / n as f64)
    }

    #[test]
    fn degenerate_deterministic_spec() {
        let ds = generate_standard(&two_phone_spec(), 1, (1, 1), 3).unwrap();
        let u = &ds.utterances[0];
        assert_eq!(u.clusters, vec![0, 0, 1, 1]);
        assert_eq!(u.frame_phones, vec![0, 0, 1, 1]);
        assert_eq!(u.standard_clusters, u.clusters);
        assert_eq!(u.features.len(), 4 * 3);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = LexiconSpec::synthetic(&LexiconParams::default()).unwrap();
        let a = generate_standard(&spec, 20, (2, 4), 11).unwrap();
        let b = generate_standard(&spec, 20, (2, 4), 11).unwrap();
        assert_eq!(a, b);
        let c = generate_standard(&spec, 20, (2, 4), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_two_cluster_emission_frequency() {
        let mut spec = two_phone_spec();
        spec.phone_clusters = vec![vec![0, 1], vec![2, 3]];
        spec.emission = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        // 2500 utterances x 2 frames of phone A
        let ds = generate_standard(&spec, 2500, (1, 1), 5).unwrap();
        let mut n = 0usize;
        let mut first = 0usize;
        for u in &ds.utterances {
            for (&c, &p) in u.clusters.iter().zip(&u.frame_phones) {
                if p == 0 {
                    n += 1;
                    first += usize::from(c == 0);
                }
            }
        }
        assert_eq!(n, 5000);
        let frac = first as f64 / n as f64;
        assert!((frac - 0.5).abs() < three_sigma(n, 0.5), "fraction {frac}");
    }

    #[test]
    fn persistence_switch_rate() {
        let mut spec = two_phone_spec();
        spec.phone_clusters = vec![vec![0, 1], vec![2, 3]];
        spec.emission = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        spec.duration_range = (6, 6);
        spec.persistence = 0.9;
        let ds = generate_standard(&spec, 2000, (1, 1), 8).unwrap();
        // a switch needs a fresh draw (0.1) that lands on the other cluster (0.5)
        let (mut n, mut switches) = (0usize, 0usize);
        for u in &ds.utterances {
            for w in u.clusters.windows(2).zip(u.frame_phones.windows(2)) {
                if w.1[0] == w.1[1] {
                    n += 1;
                    switches += usize::from(w.0[0] != w.0[1]);
                }
            }
        }
        let frac = switches as f64 / n as f64;
        assert!(
            (frac - 0.05).abs() < three_sigma(n, 0.05),
            "switch rate {frac}"
        );
    }

    #[test]
    fn confusion_rate() {
        let mut spec = two_phone_spec();
        spec.confusion = 0.2;
        let ds = generate_standard(&spec, 2500, (1, 1), 6).unwrap();
        // a confused frame lands on the other phone's cluster half the time
        let n = ds.total_frames();
        let off = ds
            .utterances
            .iter()
            .flat_map(|u| u.clusters.iter().zip(&u.frame_phones))
            .filter(|(c, p)| c != p)
            .count();
        let frac = off as f64 / n as f64;
        assert!(
            (frac - 0.1).abs() < three_sigma(n, 0.1),
            "off-partition rate {frac}"
        );
        let mut bad = two_phone_spec();
        bad.persistence = 1.0;
        assert!(bad.validate().is_err());
        bad.persistence = 0.0;
        bad.confusion = -0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn synthetic_lexicon_covers_inventory() {
        let spec = LexiconSpec::synthetic(&LexiconParams::default()).unwrap();
        assert_eq!(spec.phones.len(), 40);
        assert_eq!(spec.cluster_count(), 50);
        for p in 1..40u32 {
            assert!(
                spec.words.iter().any(|w| w.contains(&p)),
                "phone {} unused",
                spec.phones[p as usize]
            );
        }
        assert!(LexiconSpec::synthetic(&LexiconParams {
            clusters: 10,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn frame_counts_agree() {
        let spec = LexiconSpec::synthetic(&LexiconParams::default()).unwrap();
        let ds = generate_standard(&spec, 30, (1, 5), 2).unwrap();
        let acc = apply_accent_shift(&ds, &spec, &ShiftSpec::default_vowel_shift(0.5), 9).unwrap();
        for (s, a) in ds.utterances.iter().zip(&acc.utterances) {
            assert_eq!(s.frames(), s.frame_phones.len());
            assert_eq!(s.features.len(), s.frames() * spec.feature_dim);
            assert_eq!(a.frames(), s.frames());
            assert_eq!(a.features.len(), s.features.len());
            assert_eq!(a.standard_clusters, s.clusters);
            assert_eq!(a.phones, s.phones);
            assert_eq!(a.accent, Accent::Accented);
        }
    }

    #[test]
    fn identity_shift_keeps_clusters() {
        let spec = LexiconSpec::synthetic(&LexiconParams::default()).unwrap();
        let ds = generate_standard(&spec, 10, (2, 3), 4).unwrap();
        let ident = ShiftSpec::new([("AE", "AE"), ("IY", "IY")], 1.0);
        let out = apply_accent_shift(&ds, &spec, &ident, 1).unwrap();
        for (a, b) in ds.utterances.iter().zip(&out.utterances) {
            assert_eq!(a.clusters, b.clusters);
            assert_eq!(a.features, b.features);
        }
    }

    #[test]
    fn forced_substitution_renders_target() {
        let spec = two_phone_spec();
        let ds = generate_standard(&spec, 1, (1, 1), 3).unwrap();
        let out = apply_accent_shift(&ds, &spec, &ShiftSpec::new([("A", "B")], 1.0), 0).unwrap();
        let u = &out.utterances[0];
        assert_eq!(u.frame_phones, vec![1, 1, 1, 1]);
        assert_eq!(u.clusters, vec![1, 1, 1, 1]);
        assert_eq!(u.standard_clusters, vec![0, 0, 1, 1]);
        assert_eq!(u.phones, vec![0, 1]);
    }

    #[test]
    fn unknown_shift_phone_is_rejected() {
        let spec = two_phone_spec();
        let ds = generate_standard(&spec, 1, (1, 1), 3).unwrap();
        assert!(apply_accent_shift(&ds, &spec, &ShiftSpec::new([("A", "Q")], 1.0), 0).is_err());
        assert!(apply_accent_shift(&ds, &spec, &ShiftSpec::new([("A", "B")], 1.5), 0).is_err());
    }

    #[test]
    fn half_probability_substitution_rate() {
        let spec = two_phone_spec();
        // 10k instances of phone A
        let ds = generate_standard(&spec, 10_000, (1, 1), 8).unwrap();
        let out = apply_accent_shift(&ds, &spec, &ShiftSpec::new([("A", "B")], 0.5), 21).unwrap();
        let shifted = out
            .utterances
            .iter()
            .filter(|u| u.frame_phones[0] == 1)
            .count();
        let frac = shifted as f64 / 10_000.0;
        assert!(
            (frac - 0.5).abs() < three_sigma(10_000, 0.5),
            "fraction {frac}"
        );
    }

    #[test]
    fn invalid_specs() {
        let mut spec = two_phone_spec();
        spec.words.clear();
        assert!(generate_standard(&spec, 1, (1, 1), 0).is_err());
        let spec = two_phone_spec();
        assert!(generate_standard(&spec, 1, (3, 1), 0).is_err());
        let mut spec = two_phone_spec();
        spec.duration_range = (0, 2);
        assert!(spec.validate().is_err());
        let mut spec = two_phone_spec();
        spec.phone_clusters = vec![vec![0], vec![0]];
        assert!(spec.validate().is_err());
    }
}
