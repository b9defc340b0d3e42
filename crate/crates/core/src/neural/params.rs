//! Named parameter store for the encoder, its adapters and optimizer state.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use super::{AdapterConfig, EncoderConfig, InputKind};
use crate::error::{bail, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub frozen: bool,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        let n = data.len();
        Self {
            name: name.into(),
            shape,
            data,
            frozen: false,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Parameter family used in reports: `embedding`, `attention`, ...
    pub fn kind(&self) -> &'static str {
        let n = self.name.as_str();
        if n.starts_with("adapter.") {
            "adapter"
        } else if n.starts_with("embed.") {
            "embedding"
        } else if n.contains(".attn.") {
            "attention"
        } else if n.contains(".ffn.") {
            "ffn"
        } else if n.contains("norm.") {
            "layer_norm"
        } else {
            "output_projection"
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AdapterIdx {
    pub down_w: usize,
    pub down_b: usize,
    pub up_w: usize,
    pub up_b: usize,
    pub norm_g: usize,
    pub norm_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerIdx {
    pub attn_norm_g: usize,
    pub attn_norm_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ffn_norm_g: usize,
    pub ffn_norm_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub adapters: Option<[AdapterIdx; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum InputIdx {
    Tokens {
        embed: usize,
    },
    Features {
        proj_w: usize,
        proj_b: usize,
        mask: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub input: InputIdx,
    pub pos: usize,
    pub layers: Vec<LayerIdx>,
    pub final_g: usize,
    pub final_b: usize,
    pub head_w: usize,
    pub head_b: usize,
}

/// How a freshly created tensor is filled.
#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Sine/cosine position table of shape `[len, dim]`.
    Sinusoid,
}

/// Canonical parameter list: backbone first, then adapters layer by layer.
fn canonical(
    config: &EncoderConfig,
    adapter: Option<&AdapterConfig>,
) -> (Vec<(String, Vec<usize>, Init)>, Layout) {
    let d = config.model_dim;
    let f = config.ffn_dim;
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        specs.push((name, shape, init));
        specs.len() - 1
    };
    let inv_sqrt = |n: usize| 1.0 / libm::sqrt(n as f64);
    let input = match config.input {
        InputKind::Tokens { vocab } => InputIdx::Tokens {
            embed: push("embed.tokens".into(), vec![vocab, d], Init::Normal(0.5)),
        },
        InputKind::Features { dim } => InputIdx::Features {
            proj_w: push(
                "embed.proj.weight".into(),
                vec![dim, d],
                Init::Normal(inv_sqrt(dim)),
            ),
            proj_b: push("embed.proj.bias".into(), vec![d], Init::Zeros),
            mask: push("embed.mask".into(), vec![d], Init::Normal(0.5)),
        },
    };
    let pos = push(
        "embed.positions".into(),
        vec![config.max_len, d],
        Init::Sinusoid,
    );
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        layers.push(LayerIdx {
            attn_norm_g: push(p("attn_norm.gain"), vec![d], Init::Ones),
            attn_norm_b: push(p("attn_norm.bias"), vec![d], Init::Zeros),
            wq: push(p("attn.q.weight"), vec![d, d], Init::Normal(inv_sqrt(d))),
            bq: push(p("attn.q.bias"), vec![d], Init::Zeros),
            wk: push(p("attn.k.weight"), vec![d, d], Init::Normal(inv_sqrt(d))),
            bk: push(p("attn.k.bias"), vec![d], Init::Zeros),
            wv: push(p("attn.v.weight"), vec![d, d], Init::Normal(inv_sqrt(d))),
            bv: push(p("attn.v.bias"), vec![d], Init::Zeros),
            wo: push(p("attn.out.weight"), vec![d, d], Init::Normal(inv_sqrt(d))),
            bo: push(p("attn.out.bias"), vec![d], Init::Zeros),
            ffn_norm_g: push(p("ffn_norm.gain"), vec![d], Init::Ones),
            ffn_norm_b: push(p("ffn_norm.bias"), vec![d], Init::Zeros),
            w1: push(p("ffn.up.weight"), vec![d, f], Init::Normal(inv_sqrt(d))),
            b1: push(p("ffn.up.bias"), vec![f], Init::Zeros),
            w2: push(p("ffn.down.weight"), vec![f, d], Init::Normal(inv_sqrt(f))),
            b2: push(p("ffn.down.bias"), vec![d], Init::Zeros),
            adapters: None,
        });
    }
    let final_g = push("final_norm.gain".into(), vec![d], Init::Ones);
    let final_b = push("final_norm.bias".into(), vec![d], Init::Zeros);
    // small head keeps the initial output close to uniform
    let head_w = push(
        "head.weight".into(),
        vec![d, config.vocab_out],
        Init::Normal(0.02),
    );
    let head_b = push("head.bias".into(), vec![config.vocab_out], Init::Zeros);
    if let Some(a) = adapter {
        let b = a.bottleneck;
        for (l, layer) in layers.iter_mut().enumerate() {
            let mut pair = [None, None];
            for (slot, placement) in ["attn", "ffn"].iter().enumerate() {
                let p = |s: &str| format!("adapter.L{l}.{placement}.{s}");
                pair[slot] = Some(AdapterIdx {
                    down_w: push(p("down.weight"), vec![d, b], Init::Normal(inv_sqrt(d))),
                    down_b: push(p("down.bias"), vec![b], Init::Zeros),
                    up_w: push(p("up.weight"), vec![b, d], Init::Zeros),
                    up_b: push(p("up.bias"), vec![d], Init::Zeros),
                    norm_g: push(p("norm.gain"), vec![d], Init::Ones),
                    norm_b: push(p("norm.bias"), vec![d], Init::Zeros),
                });
            }
            layer.adapters = Some([pair[0].unwrap(), pair[1].unwrap()]);
        }
    }
    let layout = Layout {
        input,
        pos,
        layers,
        final_g,
        final_b,
        head_w,
        head_b,
    };
    (specs, layout)
}

/// Encoder parameters with per-parameter frozen flags and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    adapter: Option<AdapterConfig>,
    params: Vec<Param>,
    pub(crate) layout: Layout,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl EncoderParams {
    /// Random initialization. Adapters, when requested, start at identity:
    /// zero up-projection so the block reduces to its layer norm.
    pub fn init(
        config: &EncoderConfig,
        adapter: Option<&AdapterConfig>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(a) = adapter {
            a.validate()?;
        }
        let (specs, layout) = canonical(config, adapter);
        let mut r = rng::derived(seed, 0x9a4a);
        let params = specs
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal(std) => (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut r);
                            std * z
                        })
                        .collect(),
                    Init::Sinusoid => {
                        let dim = shape[1];
                        (0..n)
                            .map(|k| {
                                let (t, i) = ((k / dim) as f64, k % dim);
                                let angle =
                                    t / libm::pow(10_000.0, (i / 2 * 2) as f64 / dim as f64);
                                if i % 2 == 0 {
                                    libm::sin(angle)
                                } else {
                                    libm::cos(angle)
                                }
                            })
                            .collect()
                    }
                };
                Param::new(name, shape, data)
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            adapter: adapter.copied(),
            params,
            layout,
            step: 0,
        })
    }

    /// Rebuilds a parameter set from named tensors in any order, checking
    /// names and shapes against the layout implied by the configs.
    pub fn from_named(
        config: &EncoderConfig,
        adapter: Option<&AdapterConfig>,
        named: Vec<Param>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(a) = adapter {
            a.validate()?;
        }
        let (specs, layout) = canonical(config, adapter);
        if named.len() != specs.len() {
            bail!(
                Neural,
                "expected {} parameters, found {}",
                specs.len(),
                named.len()
            );
        }
        let mut named: Vec<Option<Param>> = named.into_iter().map(Some).collect();
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, _) in specs {
            let Some(slot) = named
                .iter_mut()
                .find(|p| p.as_ref().is_some_and(|p| p.name == name))
            else {
                bail!(Neural, "missing parameter {name}");
            };
            let p = slot.take().unwrap();
            if p.shape != shape || p.data.len() != shape.iter().product::<usize>() {
                bail!(
                    Neural,
                    "parameter {name} has shape {:?}, expected {:?}",
                    p.shape,
                    shape
                );
            }
            let mut fresh = Param::new(p.name, p.shape, p.data);
            fresh.frozen = p.frozen;
            params.push(fresh);
        }
        Ok(Self {
            config: config.clone(),
            adapter: adapter.copied(),
            params,
            layout,
            step: 0,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn adapter(&self) -> Option<&AdapterConfig> {
        self.adapter.as_ref()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub(crate) fn data(&self, idx: usize) -> &[f64] {
        &self.params[idx].data
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(Param::len)
            .sum()
    }

    pub fn set_frozen(&mut self, pred: impl Fn(&Param) -> bool) {
        for p in &mut self.params {
            p.frozen = pred(p);
        }
    }

    pub fn has_adapters(&self) -> bool {
        self.adapter.is_some()
    }

    /// Appends identity-initialized adapters after the attention and FFN
    /// blocks of every layer and freezes everything else.
    pub fn insert_adapters(&self, adapter: &AdapterConfig, seed: u64) -> Result<Self> {
        if self.adapter.is_some() {
            bail!(Neural, "encoder already carries adapters");
        }
        let fresh = Self::init(&self.config, Some(adapter), seed)?;
        let backbone = self.params.len();
        let mut params: Vec<Param> = self.params.clone();
        for p in &mut params {
            p.frozen = true;
            p.m.iter_mut().for_each(|x| *x = 0.0);
            p.v.iter_mut().for_each(|x| *x = 0.0);
        }
        params.extend(fresh.params.into_iter().skip(backbone));
        Ok(Self {
            config: self.config.clone(),
            adapter: Some(*adapter),
            params,
            layout: fresh.layout,
            step: 0,
        })
    }

    /// Drops every adapter parameter, returning the backbone alone with all
    /// parameters trainable again.
    pub fn remove_adapters(&self) -> Self {
        let (_, layout) = canonical(&self.config, None);
        let params = self
            .params
            .iter()
            .filter(|p| !p.name.starts_with("adapter."))
            .map(|p| {
                let mut p = p.clone();
                p.frozen = false;
                p
            })
            .collect();
        Self {
            config: self.config.clone(),
            adapter: None,
            params,
            layout,
            step: self.step,
        }
    }

    pub(crate) fn zero_grads(&self) -> Grads {
        Grads(
            self.params
                .iter()
                .map(|p| {
                    if p.frozen {
                        Vec::new()
                    } else {
                        vec![0.0; p.len()]
                    }
                })
                .collect(),
        )
    }
}

/// Gradients aligned with [`EncoderParams::params`]; frozen parameters carry
/// an empty slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub(crate) fn slot(&mut self, idx: usize) -> Option<&mut [f64]> {
        let s = &mut self.0[idx];
        if s.is_empty() {
            None
        } else {
            Some(s.as_mut_slice())
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.0[idx]
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().flatten().map(|g| g * g).sum())
    }
}
