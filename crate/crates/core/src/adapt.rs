//! Masked-prediction acoustic encoder and adapter-only continual
//! pre-training.
//!
//! Feature frames are projected linearly into the model; spans of frames are
//! replaced by a learned mask embedding and the encoder predicts the aligned
//! unit of every masked frame. A backbone trained this way on standard-accent
//! data is then adapted to accented data by training inserted bottleneck
//! adapters while every backbone tensor stays frozen.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{bail, Result};
use crate::exec::Executor;
use crate::mlm::select_spans;
use crate::neural::{
    argmax, loss_and_grads, optimizer_step, AdamConfig, AdapterConfig, EncoderConfig, EncoderInput,
    EncoderParams, Example, InputKind, LrSchedule, Param,
};
use crate::rng::{self, Rng};

/// Encoder shape plus the feature-masking policy. The mask embedding itself
/// is a parameter of the encoder (`input.mask`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AcousticEncoderSpec {
    pub encoder: EncoderConfig,
    pub span_len: usize,
    pub p_mask: f64,
}

impl AcousticEncoderSpec {
    /// Four layers of width 64, spans of 10 frames over 20% of each
    /// utterance.
    pub fn desk(feature_dim: usize, units: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                layers: 4,
                model_dim: 64,
                heads: 4,
                ffn_dim: 128,
                max_len: 256,
                dropout: 0.0,
                input: InputKind::Features { dim: feature_dim },
                vocab_out: units,
            },
            span_len: 10,
            p_mask: 0.2,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.encoder.input {
            InputKind::Features { dim } => dim,
            InputKind::Tokens { .. } => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !matches!(self.encoder.input, InputKind::Features { .. }) {
            bail!(Adapt, "acoustic encoder must read feature frames");
        }
        if self.span_len == 0 {
            bail!(Adapt, "span length must be at least 1");
        }
        if !(self.p_mask > 0.0 && self.p_mask < 1.0) {
            bail!(Adapt, "p_mask {} outside (0, 1)", self.p_mask);
        }
        Ok(())
    }
}

/// One utterance: row-major feature frames and one unit target per frame.
#[derive(Debug, Clone, Copy)]
pub struct Aligned<'a> {
    pub features: &'a [f32],
    pub targets: &'a [u32],
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdaptTrainConfig {
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl AdaptTrainConfig {
    /// Learning rate 1.5e-3 for 30k updates after 5k warm-up steps, 32
    /// utterances per batch.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            schedule: LrSchedule {
                peak: 1.5e-3,
                warmup: 5_000,
                total: 30_000,
            },
            adam: AdamConfig::default(),
            batch_size: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            bail!(Adapt, "batch size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptLogEntry {
    pub step: u64,
    pub loss: f64,
    /// Top-1 accuracy on this step's masked frames.
    pub masked_acc: f64,
    pub lr: f64,
}

fn check_data(spec: &AcousticEncoderSpec, data: &[Aligned<'_>]) -> Result<()> {
    let dim = spec.feature_dim();
    if data.iter().all(|u| u.targets.is_empty()) {
        bail!(Adapt, "empty training corpus");
    }
    for (i, u) in data.iter().enumerate() {
        if u.features.len() != u.targets.len() * dim {
            bail!(
                Adapt,
                "utterance {i}: {} feature values for {} targets of dimension {dim}",
                u.features.len(),
                u.targets.len()
            );
        }
        if let Some(&t) = u
            .targets
            .iter()
            .find(|&&t| t as usize >= spec.encoder.vocab_out)
        {
            bail!(
                Adapt,
                "utterance {i}: target {t} outside {} units",
                spec.encoder.vocab_out
            );
        }
    }
    Ok(())
}

fn spec_of(params: &EncoderParams, span_len: usize, p_mask: f64) -> AcousticEncoderSpec {
    AcousticEncoderSpec {
        encoder: params.config().clone(),
        span_len,
        p_mask,
    }
}

/// A masked, cropped training item.
struct Item {
    features: Vec<f32>,
    targets: Vec<u32>,
    masked: Vec<bool>,
}

fn draw_item(u: &Aligned<'_>, spec: &AcousticEncoderSpec, r: &mut Rng) -> Option<Item> {
    let len = u.targets.len();
    if len == 0 {
        return None;
    }
    let max_len = spec.encoder.max_len;
    let start = if len > max_len {
        r.random_range(0..=len - max_len)
    } else {
        0
    };
    let end = (start + max_len).min(len);
    let dim = spec.feature_dim();
    let masked = select_spans(end - start, spec.span_len, spec.p_mask, r);
    if !masked.contains(&true) {
        return None;
    }
    Some(Item {
        features: u.features[start * dim..end * dim].to_vec(),
        targets: u.targets[start..end].to_vec(),
        masked,
    })
}

fn train_loop<E: Executor>(
    exec: &E,
    params: &mut EncoderParams,
    spec: &AcousticEncoderSpec,
    data: &[Aligned<'_>],
    cfg: &AdaptTrainConfig,
) -> Result<Vec<AdaptLogEntry>> {
    let usable: Vec<&Aligned<'_>> = data.iter().filter(|u| !u.targets.is_empty()).collect();
    let mut log = Vec::with_capacity(cfg.schedule.total as usize);
    for step in 1..=cfg.schedule.total {
        let mut r = rng::derived(cfg.seed, step);
        let mut items = Vec::with_capacity(cfg.batch_size);
        let mut attempts = 0usize;
        while items.len() < cfg.batch_size {
            attempts += 1;
            if attempts > 100 * cfg.batch_size {
                bail!(Adapt, "utterances too short to place any mask span");
            }
            let u = usable[r.random_range(0..usable.len())];
            if let Some(item) = draw_item(u, spec, &mut r) {
                items.push(item);
            }
        }
        let batch: Vec<Example<'_>> = items
            .iter()
            .map(|it| Example {
                input: EncoderInput::Features {
                    frames: &it.features,
                    masked: &it.masked,
                },
                targets: &it.targets,
                loss_mask: &it.masked,
            })
            .collect();
        let out = loss_and_grads(
            exec,
            params,
            &batch,
            Some(rng::mix(cfg.seed ^ 0xada9, step)),
        )?;
        if !out.loss.is_finite() || out.grads.0.iter().flatten().any(|g| !g.is_finite()) {
            bail!(Adapt, "non-finite loss or gradient at step {step}");
        }
        let lr = optimizer_step(params, &out.grads, step, &cfg.schedule, &cfg.adam)?;
        log.push(AdaptLogEntry {
            step,
            loss: out.loss,
            masked_acc: out.correct as f64 / out.flagged as f64,
            lr,
        });
    }
    Ok(log)
}

/// Trains a backbone from random initialization to predict `targets` at
/// masked feature frames. With zero scheduled steps the initialization is
/// returned as is.
pub fn pretrain_base<E: Executor>(
    exec: &E,
    spec: &AcousticEncoderSpec,
    data: &[Aligned<'_>],
    cfg: &AdaptTrainConfig,
) -> Result<(EncoderParams, Vec<AdaptLogEntry>)> {
    spec.validate()?;
    cfg.validate()?;
    check_data(spec, data)?;
    let mut params = EncoderParams::init(&spec.encoder, None, cfg.seed)?;
    let log = train_loop(exec, &mut params, spec, data, cfg)?;
    Ok((params, log))
}

/// Adds identity-initialized adapters after the attention and FFN blocks of
/// every layer and freezes the backbone.
pub fn insert_adapters(
    backbone: &EncoderParams,
    config: &AdapterConfig,
    seed: u64,
) -> Result<EncoderParams> {
    if !matches!(backbone.config().input, InputKind::Features { .. }) {
        bail!(Adapt, "adapters go on a feature-input acoustic encoder");
    }
    if backbone.has_adapters() {
        bail!(Adapt, "backbone already carries adapters");
    }
    config.validate()?;
    backbone.insert_adapters(config, seed)
}

fn is_adapter(p: &Param) -> bool {
    p.name.starts_with("adapter.")
}

/// Fails unless adapters are present, trainable, and every other tensor is
/// frozen.
pub fn ensure_frozen_backbone(params: &EncoderParams) -> Result<()> {
    if !params.has_adapters() {
        bail!(Adapt, "model has no adapters to train");
    }
    if let Some(p) = params.params().iter().find(|p| !is_adapter(p) && !p.frozen) {
        bail!(Adapt, "backbone parameter {} is not frozen", p.name);
    }
    if let Some(p) = params.params().iter().find(|p| is_adapter(p) && p.frozen) {
        bail!(Adapt, "adapter parameter {} is frozen", p.name);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainableReport {
    pub trainable: usize,
    pub total: usize,
}

impl TrainableReport {
    pub fn fraction(&self) -> f64 {
        self.trainable as f64 / self.total as f64
    }
}

pub fn trainable_report(params: &EncoderParams) -> TrainableReport {
    TrainableReport {
        trainable: params.trainable_count(),
        total: params.total_count(),
    }
}

/// Trains only the adapters of `model` on accented features with the given
/// (typically corrected) unit targets.
pub fn continual_pretrain<E: Executor>(
    exec: &E,
    model: &EncoderParams,
    span_len: usize,
    p_mask: f64,
    data: &[Aligned<'_>],
    cfg: &AdaptTrainConfig,
) -> Result<(EncoderParams, Vec<AdaptLogEntry>)> {
    ensure_frozen_backbone(model)?;
    let spec = spec_of(model, span_len, p_mask);
    spec.validate()?;
    cfg.validate()?;
    check_data(&spec, data)?;
    let mut params = model.clone();
    params.step = 0;
    let log = train_loop(exec, &mut params, &spec, data, cfg)?;
    ensure_frozen_backbone(&params)?;
    Ok((params, log))
}

/// Top-1 accuracy at masked frames in evaluation mode. Utterance `i` draws
/// its spans from a stream derived from `seed` and `i`, so two models
/// evaluated with one seed see identical masks.
pub fn masked_frame_accuracy<E: Executor>(
    exec: &E,
    params: &EncoderParams,
    span_len: usize,
    p_mask: f64,
    data: &[Aligned<'_>],
    seed: u64,
) -> Result<f64> {
    let spec = spec_of(params, span_len, p_mask);
    spec.validate()?;
    check_data(&spec, data)?;
    let dim = spec.feature_dim();
    let max_len = spec.encoder.max_len;
    let parts = exec.map(data.len(), |i| -> Result<(usize, usize)> {
        let u = &data[i];
        let mut r = rng::derived(seed, i as u64);
        let (mut hit, mut total) = (0, 0);
        // long utterances are scored window by window
        let mut start = 0;
        while start < u.targets.len() {
            let end = (start + max_len).min(u.targets.len());
            let masked = select_spans(end - start, span_len, p_mask, &mut r);
            if masked.contains(&true) {
                let out = params.forward(
                    EncoderInput::Features {
                        frames: &u.features[start * dim..end * dim],
                        masked: &masked,
                    },
                    None,
                )?;
                for (t, _) in masked.iter().enumerate().filter(|(_, &m)| m) {
                    hit += usize::from(argmax(out.logits_row(t)) == u.targets[start + t] as usize);
                    total += 1;
                }
            }
            start = end;
        }
        Ok((hit, total))
    });
    let (mut hit, mut total) = (0usize, 0usize);
    for p in parts {
        let (h, t) = p?;
        hit += h;
        total += t;
    }
    if total == 0 {
        bail!(Adapt, "no masked frames to evaluate");
    }
    Ok(hit as f64 / total as f64)
}

/// Bit patterns of every backbone tensor, for frozen-contract checks.
pub fn backbone_bits(params: &EncoderParams) -> Vec<(alloc::string::String, Vec<u64>)> {
    params
        .params()
        .iter()
        .filter(|p| !is_adapter(p))
        .map(|p| (p.name.clone(), p.data.iter().map(|x| x.to_bits()).collect()))
        .collect()
}
