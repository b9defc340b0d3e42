//! Pipeline configuration: one JSON document, every key optional, unknown
//! keys rejected. Validation errors name the offending field by its JSON
//! path, e.g. `corrector.K`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unitfix_core::adapt::{AcousticEncoderSpec, AdaptTrainConfig};
use unitfix_core::corpus::{LexiconParams, LexiconSpec, ShiftSpec};
use unitfix_core::corrector::{CorrectionVariant, CorrectorConfig};
use unitfix_core::mlm::{CountScorerConfig, MlmTrainConfig, SpanMaskPolicy};
use unitfix_core::neural::{AdamConfig, AdapterConfig, EncoderConfig, InputKind, LrSchedule};
use unitfix_core::quantizer::KMeansOptions;
use unitfix_core::UnitVocab;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub quantizer: QuantizerSection,
    pub mlm: MlmSection,
    pub corrector: CorrectorSection,
    pub adapt: AdaptSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: Paths::default(),
            corpus: CorpusSection::default(),
            quantizer: QuantizerSection::default(),
            mlm: MlmSection::default(),
            corrector: CorrectorSection::default(),
            adapt: AdaptSection::default(),
        }
    }
}

/// Default locations used by `run-all`; individual commands take explicit
/// paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            checkpoints: "checkpoints".into(),
            outputs: "outputs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconSection {
    pub clusters: u32,
    pub words: usize,
    pub word_len: (usize, usize),
    pub duration: (usize, usize),
    pub feature_dim: usize,
    pub centroid_spread: f64,
    pub noise_sigma: f64,
    pub persistence: f64,
    pub confusion: f64,
    pub layout_seed: u64,
}

impl Default for LexiconSection {
    fn default() -> Self {
        let p = LexiconParams::default();
        Self {
            clusters: p.clusters,
            words: p.words,
            word_len: p.word_len,
            duration: p.duration_range,
            feature_dim: p.feature_dim,
            centroid_spread: p.centroid_spread,
            noise_sigma: p.noise_sigma,
            persistence: p.persistence,
            confusion: p.confusion,
            layout_seed: p.seed,
        }
    }
}

impl LexiconSection {
    pub fn params(&self) -> LexiconParams {
        LexiconParams {
            clusters: self.clusters,
            words: self.words,
            word_len: self.word_len,
            duration_range: self.duration,
            feature_dim: self.feature_dim,
            centroid_spread: self.centroid_spread,
            noise_sigma: self.noise_sigma,
            persistence: self.persistence,
            confusion: self.confusion,
            seed: self.layout_seed,
        }
    }

    pub fn build(&self) -> Result<LexiconSpec> {
        Ok(LexiconSpec::synthetic(&self.params())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSection {
    pub substitutions: BTreeMap<String, String>,
    pub apply_prob: f64,
}

impl Default for ShiftSection {
    fn default() -> Self {
        let s = ShiftSpec::default_vowel_shift(0.5);
        Self {
            substitutions: s.substitutions,
            apply_prob: s.apply_prob,
        }
    }
}

impl ShiftSection {
    pub fn spec(&self) -> ShiftSpec {
        ShiftSpec {
            substitutions: self.substitutions.clone(),
            apply_prob: self.apply_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub lexicon: LexiconSection,
    pub standard_utts: usize,
    pub accented_utts: usize,
    pub words_per_utt: (usize, usize),
    pub shift: ShiftSection,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            lexicon: LexiconSection::default(),
            standard_utts: 2000,
            accented_utts: 500,
            words_per_utt: (3, 8),
            shift: ShiftSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerSection {
    #[serde(rename = "V")]
    pub v: u32,
    pub iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        let o = KMeansOptions::default();
        Self {
            v: UnitVocab::DEFAULT_SIZE,
            iters: o.max_iters,
            tol: o.tol,
            restarts: o.restarts,
        }
    }
}

impl QuantizerSection {
    pub fn options(&self, seed: u64) -> KMeansOptions {
        KMeansOptions {
            clusters: self.v as usize,
            max_iters: self.iters,
            tol: self.tol,
            seed,
            restarts: self.restarts,
        }
    }
}

/// Encoder hyper-parameters; input and output sizes follow from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderShape {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self::from_config(&EncoderConfig::unit_lm(2))
    }
}

impl EncoderShape {
    fn from_config(c: &EncoderConfig) -> Self {
        Self {
            layers: c.layers,
            model_dim: c.model_dim,
            heads: c.heads,
            ffn_dim: c.ffn_dim,
            max_len: c.max_len,
            dropout: c.dropout,
        }
    }

    pub fn config(&self, input: InputKind, vocab_out: usize) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            model_dim: self.model_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
            dropout: self.dropout,
            input,
            vocab_out,
        }
    }

    fn validate(&self, at: &str) -> Result<()> {
        let field = |name: &str, msg: &str| Err(invalid(&format!("{at}.{name}"), msg));
        for (name, v) in [
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return field(name, "must be at least 1");
            }
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return field("heads", "must divide model_dim");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return field("dropout", "must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub peak: f64,
    pub warmup: u64,
    pub total: u64,
}

impl ScheduleSection {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.peak,
            warmup: self.warmup,
            total: self.total,
        }
    }

    fn validate(&self, at: &str) -> Result<()> {
        if !(self.peak.is_finite() && self.peak >= 0.0) {
            return Err(invalid(
                &format!("{at}.peak"),
                "must be finite and non-negative",
            ));
        }
        if self.warmup > self.total {
            return Err(invalid(&format!("{at}.warmup"), "exceeds total"));
        }
        Ok(())
    }
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            peak: 1e-3,
            warmup: 0,
            total: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Neural,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpanSection {
    pub span_len: usize,
    pub p_mask: f64,
    pub replace_mask: f64,
    pub replace_random: f64,
    pub replace_keep: f64,
}

impl Default for SpanSection {
    fn default() -> Self {
        let p = SpanMaskPolicy::default();
        Self {
            span_len: p.span_len,
            p_mask: p.p_mask,
            replace_mask: p.replace_mask,
            replace_random: p.replace_random,
            replace_keep: p.replace_keep,
        }
    }
}

impl SpanSection {
    pub fn policy(&self) -> SpanMaskPolicy {
        SpanMaskPolicy {
            span_len: self.span_len,
            p_mask: self.p_mask,
            replace_mask: self.replace_mask,
            replace_random: self.replace_random,
            replace_keep: self.replace_keep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountSection {
    pub smoothing: f64,
    pub width: usize,
    pub min_count: u64,
    pub interpolate: bool,
}

impl Default for CountSection {
    fn default() -> Self {
        let c = CountScorerConfig::interpolated(0.01, 3);
        Self {
            smoothing: c.smoothing,
            width: c.width,
            min_count: c.min_count,
            interpolate: c.interpolate,
        }
    }
}

impl CountSection {
    pub fn config(&self) -> CountScorerConfig {
        CountScorerConfig {
            smoothing: self.smoothing,
            width: self.width,
            min_count: self.min_count,
            interpolate: self.interpolate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmSection {
    pub kind: ScorerKind,
    pub encoder: EncoderShape,
    pub span: SpanSection,
    pub schedule: ScheduleSection,
    pub batch_size: usize,
    pub count: CountSection,
}

impl Default for MlmSection {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Neural,
            encoder: EncoderShape::default(),
            span: SpanSection::default(),
            schedule: ScheduleSection {
                peak: 5e-5,
                warmup: 0,
                total: 200_000,
            },
            batch_size: 32,
            count: CountSection::default(),
        }
    }
}

impl MlmSection {
    pub fn train_config(&self, vocab: UnitVocab, seed: u64) -> MlmTrainConfig {
        MlmTrainConfig {
            encoder: self.encoder.config(
                InputKind::Tokens {
                    vocab: vocab.len() + 1,
                },
                vocab.len(),
            ),
            policy: self.span.policy(),
            schedule: self.schedule.schedule(),
            adam: AdamConfig::default(),
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Named corrector variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    ClusterGroups,
    PhoneGroups,
    ClusterGroupsFillAll,
    PhoneGroupsFillAll,
    /// Cluster groups; after iteration `k0` only vowel groups are masked.
    VowelsAfter,
}

impl VariantName {
    pub fn variant(self, k0: usize) -> CorrectionVariant {
        match self {
            VariantName::ClusterGroups => CorrectionVariant::cluster_groups(),
            VariantName::PhoneGroups => CorrectionVariant::phone_groups(),
            VariantName::ClusterGroupsFillAll => CorrectionVariant::cluster_groups().fill_all(),
            VariantName::PhoneGroupsFillAll => CorrectionVariant::phone_groups().fill_all(),
            VariantName::VowelsAfter => CorrectionVariant::cluster_groups().vowels_after(k0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorSection {
    #[serde(rename = "K")]
    pub k: usize,
    pub p_mask: f64,
    pub variant: VariantName,
    pub k0: usize,
}

impl Default for CorrectorSection {
    fn default() -> Self {
        let c = CorrectorConfig::default();
        Self {
            k: c.iterations,
            p_mask: c.p_mask,
            variant: VariantName::ClusterGroups,
            k0: CorrectionVariant::DEFAULT_K0,
        }
    }
}

impl CorrectorSection {
    pub fn config(&self) -> CorrectorConfig {
        CorrectorConfig {
            iterations: self.k,
            p_mask: self.p_mask,
            variant: self.variant.variant(self.k0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub schedule: ScheduleSection,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSection {
    pub encoder: EncoderShape,
    pub span_len: usize,
    pub p_mask: f64,
    pub bottleneck: usize,
    /// Training of the standard-accent acoustic backbone.
    pub pretrain: TrainSection,
    /// Adapter-only continual pre-training.
    pub train: TrainSection,
    /// Seed of the evaluation masks.
    pub eval_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            schedule: ScheduleSection {
                peak: 1e-3,
                warmup: 500,
                total: 5000,
            },
            batch_size: 8,
        }
    }
}

impl Default for AdaptSection {
    fn default() -> Self {
        let desk = AcousticEncoderSpec::desk(1, 2);
        let full = AdaptTrainConfig::full_scale(0);
        Self {
            encoder: EncoderShape::from_config(&desk.encoder),
            span_len: desk.span_len,
            p_mask: desk.p_mask,
            bottleneck: AdapterConfig::FULL_SCALE_BOTTLENECK,
            pretrain: TrainSection::default(),
            train: TrainSection {
                schedule: ScheduleSection {
                    peak: full.schedule.peak,
                    warmup: full.schedule.warmup,
                    total: full.schedule.total,
                },
                batch_size: full.batch_size,
            },
            eval_seed: 77,
        }
    }
}

impl AdaptSection {
    pub fn spec(&self, feature_dim: usize, units: usize) -> AcousticEncoderSpec {
        AcousticEncoderSpec {
            encoder: self
                .encoder
                .config(InputKind::Features { dim: feature_dim }, units),
            span_len: self.span_len,
            p_mask: self.p_mask,
        }
    }

    pub fn train_config(t: &TrainSection, seed: u64) -> AdaptTrainConfig {
        AdaptTrainConfig {
            schedule: t.schedule.schedule(),
            adam: AdamConfig::default(),
            batch_size: t.batch_size,
            seed,
        }
    }
}

fn invalid(path: &str, msg: &str) -> Error {
    Error::Usage(format!("config field {path} {msg}"))
}

fn unit_interval(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(
            path,
            &format!("must lie strictly between 0 and 1, got {v}"),
        ))
    }
}

fn positive(path: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(invalid(path, "must be at least 1"))
    } else {
        Ok(())
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        self.corpus
            .lexicon
            .build()
            .map_err(|e| invalid("corpus.lexicon", &format!("is unusable: {e}")))?;
        positive("corpus.standard_utts", c.standard_utts)?;
        let (lo, hi) = c.words_per_utt;
        if lo == 0 || lo > hi {
            return Err(invalid(
                "corpus.words_per_utt",
                "must be a range [lo, hi] with 1 <= lo <= hi",
            ));
        }
        if !(0.0..=1.0).contains(&c.shift.apply_prob) {
            return Err(invalid("corpus.shift.apply_prob", "must lie in [0, 1]"));
        }
        let known: Vec<&str> = unitfix_core::corpus::ARPABET_40.to_vec();
        for (from, to) in &c.shift.substitutions {
            if !known.contains(&from.as_str()) || !known.contains(&to.as_str()) {
                return Err(invalid(
                    "corpus.shift.substitutions",
                    &format!("names unknown phone in {from} -> {to}"),
                ));
            }
        }

        let q = &self.quantizer;
        if q.v < 2 {
            return Err(invalid("quantizer.V", "must be at least 2"));
        }
        if q.tol.is_nan() || q.tol < 0.0 {
            return Err(invalid("quantizer.tol", "must be non-negative"));
        }
        positive("quantizer.restarts", q.restarts)?;

        let m = &self.mlm;
        m.encoder.validate("mlm.encoder")?;
        positive("mlm.span.span_len", m.span.span_len)?;
        unit_interval("mlm.span.p_mask", m.span.p_mask)?;
        m.span.policy().validate().map_err(|_| {
            invalid(
                "mlm.span",
                "replace probabilities must be non-negative and sum to 1",
            )
        })?;
        m.schedule.validate("mlm.schedule")?;
        positive("mlm.batch_size", m.batch_size)?;
        m.count
            .config()
            .validate()
            .map_err(|e| invalid("mlm.count", &format!("is invalid: {e}")))?;

        let k = &self.corrector;
        positive("corrector.K", k.k)?;
        unit_interval("corrector.p_mask", k.p_mask)?;

        let a = &self.adapt;
        a.encoder.validate("adapt.encoder")?;
        positive("adapt.span_len", a.span_len)?;
        unit_interval("adapt.p_mask", a.p_mask)?;
        positive("adapt.bottleneck", a.bottleneck)?;
        a.pretrain.schedule.validate("adapt.pretrain.schedule")?;
        positive("adapt.pretrain.batch_size", a.pretrain.batch_size)?;
        a.train.schedule.validate("adapt.train.schedule")?;
        positive("adapt.train.batch_size", a.train.batch_size)?;
        Ok(())
    }

    /// Parses and validates a JSON document. Blank input yields the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim().is_empty() {
            Self::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pretty JSON with every key spelled out.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))?;
    PipelineConfig::from_json(&text).map_err(|e| match e {
        Error::Usage(m) => Error::Usage(format!("{}: {m}", path.display())),
        e => e,
    })
}
