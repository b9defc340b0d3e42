//! Pre-norm bidirectional transformer encoder: forward pass with cached
//! activations and the matching hand-written backward pass.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::ops::{
    acc_at_g, acc_rows, affine, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul_bt,
    softmax, NormCache,
};
use super::params::{AdapterIdx, EncoderParams, Grads, InputIdx, LayerIdx};
use crate::error::{bail, Result};
use crate::rng::Rng;

/// One sequence fed to the encoder.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a> {
    /// Unit ids; the mask id is an ordinary embedding row.
    Tokens(&'a [u32]),
    /// Row-major feature frames; frames flagged in `masked` are replaced by
    /// the learned mask embedding after projection.
    Features {
        frames: &'a [f32],
        masked: &'a [bool],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub len: usize,
    /// `len × model_dim`, after the final layer norm.
    pub hidden: Vec<f64>,
    /// `len × vocab_out`.
    pub logits: Vec<f64>,
}

impl ForwardOutput {
    pub fn logits_row(&self, t: usize) -> &[f64] {
        let v = self.logits.len() / self.len.max(1);
        &self.logits[t * v..(t + 1) * v]
    }
}

/// Borrowed weights of one adapter block.
#[derive(Debug, Clone, Copy)]
pub struct AdapterWeights<'a> {
    pub bottleneck: usize,
    pub down_w: &'a [f64],
    pub down_b: &'a [f64],
    pub up_w: &'a [f64],
    pub up_b: &'a [f64],
    pub norm_g: &'a [f64],
    pub norm_b: &'a [f64],
}

pub(crate) struct AdapterCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    norm: NormCache,
}

struct LayerCache {
    ln1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    drop1: Option<Vec<f64>>,
    ad1: Option<AdapterCache>,
    ln2: NormCache,
    c: Vec<f64>,
    u: Vec<f64>,
    gact: Vec<f64>,
    drop2: Option<Vec<f64>>,
    ad2: Option<AdapterCache>,
}

pub(crate) struct Trace {
    len: usize,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
}

/// `layer_norm(h + up(relu(down(h))))` over `rows × model_dim`.
pub fn adapter_forward(h: &[f64], model_dim: usize, w: &AdapterWeights<'_>) -> Result<Vec<f64>> {
    let b = w.bottleneck;
    if model_dim == 0 || !h.len().is_multiple_of(model_dim) {
        bail!(
            Neural,
            "adapter input of {} values is not a multiple of model_dim {model_dim}",
            h.len()
        );
    }
    if w.down_w.len() != model_dim * b
        || w.down_b.len() != b
        || w.up_w.len() != b * model_dim
        || w.up_b.len() != model_dim
        || w.norm_g.len() != model_dim
        || w.norm_b.len() != model_dim
    {
        bail!(
            Neural,
            "adapter weights do not match model_dim {model_dim} and bottleneck {b}"
        );
    }
    Ok(adapter_fwd(h, model_dim, w).0)
}

fn adapter_fwd(h: &[f64], d: usize, w: &AdapterWeights<'_>) -> (Vec<f64>, AdapterCache) {
    let rows = h.len() / d;
    let b = w.bottleneck;
    let pre = affine(h, rows, d, w.down_w, w.down_b, b);
    let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
    let up = affine(&act, rows, b, w.up_w, w.up_b, d);
    let s: Vec<f64> = h.iter().zip(&up).map(|(a, b)| a + b).collect();
    let (out, norm) = layer_norm(&s, d, w.norm_g, w.norm_b);
    (
        out,
        AdapterCache {
            input: h.to_vec(),
            pre,
            act,
            norm,
        },
    )
}

impl EncoderParams {
    pub fn adapter_weights(&self, layer: usize, after_ffn: bool) -> Option<AdapterWeights<'_>> {
        let idx = self.layout.layers.get(layer)?.adapters?[usize::from(after_ffn)];
        Some(self.adapter_view(&idx))
    }

    fn adapter_view(&self, idx: &AdapterIdx) -> AdapterWeights<'_> {
        AdapterWeights {
            bottleneck: self.adapter().map_or(0, |a| a.bottleneck),
            down_w: self.data(idx.down_w),
            down_b: self.data(idx.down_b),
            up_w: self.data(idx.up_w),
            up_b: self.data(idx.up_b),
            norm_g: self.data(idx.norm_g),
            norm_b: self.data(idx.norm_b),
        }
    }

    fn check_input(&self, input: &EncoderInput<'_>) -> Result<usize> {
        let cfg = self.config();
        let len = match (input, cfg.input) {
            (EncoderInput::Tokens(tokens), super::InputKind::Tokens { vocab }) => {
                if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
                    bail!(Neural, "token id {bad} outside input vocabulary of {vocab}");
                }
                tokens.len()
            }
            (EncoderInput::Features { frames, masked }, super::InputKind::Features { dim }) => {
                if frames.len() % dim != 0 || frames.len() / dim != masked.len() {
                    bail!(
                        Neural,
                        "{} feature values and {} mask flags do not match dimension {dim}",
                        frames.len(),
                        masked.len()
                    );
                }
                masked.len()
            }
            _ => bail!(
                Neural,
                "input kind does not match the encoder configuration"
            ),
        };
        if len == 0 {
            bail!(Neural, "empty input sequence");
        }
        if len > cfg.max_len {
            bail!(
                Neural,
                "sequence of {len} frames exceeds max_len {}",
                cfg.max_len
            );
        }
        Ok(len)
    }

    /// Full bidirectional forward pass. Passing a random source turns on
    /// training mode (dropout); `None` is the deterministic evaluation mode.
    pub fn forward(&self, input: EncoderInput<'_>, rng: Option<&mut Rng>) -> Result<ForwardOutput> {
        Ok(self.forward_traced(input, rng)?.0)
    }

    pub(crate) fn forward_traced(
        &self,
        input: EncoderInput<'_>,
        mut rng: Option<&mut Rng>,
    ) -> Result<(ForwardOutput, Trace)> {
        let t = self.check_input(&input)?;
        let cfg = self.config().clone();
        let d = cfg.model_dim;
        let lay = self.layout.clone();
        let mut x = self.embed(&input, t);
        let mut layers = Vec::with_capacity(cfg.layers);
        for li in &lay.layers {
            let (next, cache) = self.layer_forward(li, &x, t, rng.as_deref_mut());
            x = next;
            layers.push(cache);
        }
        let (hidden, final_norm) =
            layer_norm(&x, d, self.data(lay.final_g), self.data(lay.final_b));
        let logits = affine(
            &hidden,
            t,
            d,
            self.data(lay.head_w),
            self.data(lay.head_b),
            cfg.vocab_out,
        );
        Ok((
            ForwardOutput {
                len: t,
                hidden,
                logits,
            },
            Trace {
                len: t,
                layers,
                final_norm,
            },
        ))
    }

    fn embed(&self, input: &EncoderInput<'_>, t: usize) -> Vec<f64> {
        let d = self.config().model_dim;
        let pos = self.data(self.layout.pos);
        let mut x = match (input, self.layout.input) {
            (EncoderInput::Tokens(tokens), InputIdx::Tokens { embed }) => {
                let e = self.data(embed);
                let mut x = Vec::with_capacity(t * d);
                for &tok in tokens.iter() {
                    x.extend_from_slice(&e[tok as usize * d..(tok as usize + 1) * d]);
                }
                x
            }
            (
                EncoderInput::Features { frames, masked },
                InputIdx::Features {
                    proj_w,
                    proj_b,
                    mask,
                },
            ) => {
                let dim = frames.len() / t;
                let f64_frames: Vec<f64> = frames.iter().map(|&v| f64::from(v)).collect();
                let mut x = affine(&f64_frames, t, dim, self.data(proj_w), self.data(proj_b), d);
                let m = self.data(mask);
                for (row, &is_masked) in x.chunks_exact_mut(d).zip(masked.iter()) {
                    if is_masked {
                        row.copy_from_slice(m);
                    }
                }
                x
            }
            _ => unreachable!("input kind checked"),
        };
        for (i, v) in x.iter_mut().enumerate() {
            *v += pos[i];
        }
        x
    }

    fn dropout_mask(&self, n: usize, rng: Option<&mut Rng>) -> Option<Vec<f64>> {
        let p = self.config().dropout;
        let r = rng?;
        if p <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        Some(
            (0..n)
                .map(|_| if r.random::<f64>() < p { 0.0 } else { keep })
                .collect(),
        )
    }

    fn layer_forward(
        &self,
        li: &LayerIdx,
        x: &[f64],
        t: usize,
        mut rng: Option<&mut Rng>,
    ) -> (Vec<f64>, LayerCache) {
        let cfg = self.config();
        let (d, f, heads) = (cfg.model_dim, cfg.ffn_dim, cfg.heads);
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);

        let (a, ln1) = layer_norm(x, d, self.data(li.attn_norm_g), self.data(li.attn_norm_b));
        let q = affine(&a, t, d, self.data(li.wq), self.data(li.bq), d);
        let k = affine(&a, t, d, self.data(li.wk), self.data(li.bk), d);
        let v = affine(&a, t, d, self.data(li.wv), self.data(li.bv), d);
        let mut probs = vec![0.0; heads * t * t];
        let mut ctx = vec![0.0; t * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..t {
                let row = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
                let qi = &q[i * d + off..i * d + off + dh];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + dh];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax(row);
                let out = &mut ctx[i * d + off..i * d + off + dh];
                for (j, &p) in row.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *o += p * vv;
                    }
                }
            }
        }
        let mut o = affine(&ctx, t, d, self.data(li.wo), self.data(li.bo), d);
        let drop1 = self.dropout_mask(t * d, rng.as_deref_mut());
        if let Some(m) = &drop1 {
            o.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
        }
        let mut y: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
        let ad1 = li.adapters.map(|ad| {
            let (out, cache) = adapter_fwd(&y, d, &self.adapter_view(&ad[0]));
            y = out;
            cache
        });

        let (c, ln2) = layer_norm(&y, d, self.data(li.ffn_norm_g), self.data(li.ffn_norm_b));
        let u = affine(&c, t, d, self.data(li.w1), self.data(li.b1), f);
        let gact: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
        let mut ff = affine(&gact, t, f, self.data(li.w2), self.data(li.b2), d);
        let drop2 = self.dropout_mask(t * d, rng);
        if let Some(m) = &drop2 {
            ff.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
        }
        let mut z: Vec<f64> = y.iter().zip(&ff).map(|(a, b)| a + b).collect();
        let ad2 = li.adapters.map(|ad| {
            let (out, cache) = adapter_fwd(&z, d, &self.adapter_view(&ad[1]));
            z = out;
            cache
        });
        (
            z,
            LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                drop1,
                ad1,
                ln2,
                c,
                u,
                gact,
                drop2,
                ad2,
            },
        )
    }

    /// Accumulates parameter gradients for `dlogits` (`len × vocab_out`).
    pub(crate) fn backward(
        &self,
        input: &EncoderInput<'_>,
        trace: &Trace,
        hidden: &[f64],
        dlogits: &[f64],
        grads: &mut Grads,
    ) {
        let cfg = self.config();
        let (d, t) = (cfg.model_dim, trace.len);
        let lay = &self.layout;
        if let Some(g) = grads.slot(lay.head_w) {
            acc_at_g(g, hidden, t, d, dlogits, cfg.vocab_out);
        }
        if let Some(g) = grads.slot(lay.head_b) {
            acc_rows(g, dlogits, cfg.vocab_out);
        }
        let dhidden = matmul_bt(dlogits, t, cfg.vocab_out, self.data(lay.head_w), d);
        let (mut dg, mut db) = split_slots(grads, lay.final_g, lay.final_b);
        let mut dx = layer_norm_backward(
            &dhidden,
            d,
            self.data(lay.final_g),
            &trace.final_norm,
            dg.as_deref_mut(),
            db.as_deref_mut(),
        );
        restore_slots(grads, lay.final_g, lay.final_b, dg, db);
        for (li, cache) in lay.layers.iter().zip(&trace.layers).rev() {
            dx = self.layer_backward(li, cache, &dx, t, grads);
        }
        self.embed_backward(input, &dx, t, grads);
    }

    fn embed_backward(&self, input: &EncoderInput<'_>, dx: &[f64], t: usize, grads: &mut Grads) {
        let d = self.config().model_dim;
        if let Some(g) = grads.slot(self.layout.pos) {
            for (gv, &x) in g.iter_mut().zip(dx) {
                *gv += x;
            }
        }
        match (input, self.layout.input) {
            (EncoderInput::Tokens(tokens), InputIdx::Tokens { embed }) => {
                if let Some(g) = grads.slot(embed) {
                    for (i, &tok) in tokens.iter().enumerate() {
                        let row = &mut g[tok as usize * d..(tok as usize + 1) * d];
                        row.iter_mut()
                            .zip(&dx[i * d..(i + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            (
                EncoderInput::Features { frames, masked },
                InputIdx::Features {
                    proj_w,
                    proj_b,
                    mask,
                },
            ) => {
                let dim = frames.len() / t;
                if let Some(g) = grads.slot(mask) {
                    for (i, _) in masked.iter().enumerate().filter(|(_, &m)| m) {
                        g.iter_mut()
                            .zip(&dx[i * d..(i + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                }
                // masked rows never saw the projection
                let mut dproj = dx.to_vec();
                for (i, _) in masked.iter().enumerate().filter(|(_, &m)| m) {
                    dproj[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = 0.0);
                }
                if let Some(g) = grads.slot(proj_w) {
                    let f64_frames: Vec<f64> = frames.iter().map(|&v| f64::from(v)).collect();
                    acc_at_g(g, &f64_frames, t, dim, &dproj, d);
                }
                if let Some(g) = grads.slot(proj_b) {
                    acc_rows(g, &dproj, d);
                }
            }
            _ => unreachable!("input kind checked"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn linear_backward(
        &self,
        w: usize,
        b: usize,
        input: &[f64],
        rows: usize,
        n_in: usize,
        dout: &[f64],
        n_out: usize,
        grads: &mut Grads,
    ) -> Vec<f64> {
        if let Some(g) = grads.slot(w) {
            acc_at_g(g, input, rows, n_in, dout, n_out);
        }
        if let Some(g) = grads.slot(b) {
            acc_rows(g, dout, n_out);
        }
        matmul_bt(dout, rows, n_out, self.data(w), n_in)
    }

    fn norm_backward(
        &self,
        g_idx: usize,
        b_idx: usize,
        cache: &NormCache,
        dy: &[f64],
        grads: &mut Grads,
    ) -> Vec<f64> {
        let d = self.config().model_dim;
        let (mut dg, mut db) = split_slots(grads, g_idx, b_idx);
        let dx = layer_norm_backward(
            dy,
            d,
            self.data(g_idx),
            cache,
            dg.as_deref_mut(),
            db.as_deref_mut(),
        );
        restore_slots(grads, g_idx, b_idx, dg, db);
        dx
    }

    fn adapter_backward(
        &self,
        idx: &AdapterIdx,
        cache: &AdapterCache,
        dout: &[f64],
        grads: &mut Grads,
    ) -> Vec<f64> {
        let d = self.config().model_dim;
        let b = self.adapter().map_or(0, |a| a.bottleneck);
        let rows = dout.len() / d;
        let ds = self.norm_backward(idx.norm_g, idx.norm_b, &cache.norm, dout, grads);
        let mut dact = self.linear_backward(idx.up_w, idx.up_b, &cache.act, rows, b, &ds, d, grads);
        for (g, &p) in dact.iter_mut().zip(&cache.pre) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        let dh = self.linear_backward(
            idx.down_w,
            idx.down_b,
            &cache.input,
            rows,
            d,
            &dact,
            b,
            grads,
        );
        ds.iter().zip(&dh).map(|(a, b)| a + b).collect()
    }

    fn layer_backward(
        &self,
        li: &LayerIdx,
        c: &LayerCache,
        dout: &[f64],
        t: usize,
        grads: &mut Grads,
    ) -> Vec<f64> {
        let cfg = self.config();
        let (d, f, heads) = (cfg.model_dim, cfg.ffn_dim, cfg.heads);
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);

        let dz = match (&c.ad2, li.adapters) {
            (Some(cache), Some(ad)) => self.adapter_backward(&ad[1], cache, dout, grads),
            _ => dout.to_vec(),
        };
        let mut dff = dz.clone();
        if let Some(m) = &c.drop2 {
            dff.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
        }
        let mut dgact = self.linear_backward(li.w2, li.b2, &c.gact, t, f, &dff, d, grads);
        for (g, &u) in dgact.iter_mut().zip(&c.u) {
            *g *= gelu_grad(u);
        }
        let dc = self.linear_backward(li.w1, li.b1, &c.c, t, d, &dgact, f, grads);
        let dy_norm = self.norm_backward(li.ffn_norm_g, li.ffn_norm_b, &c.ln2, &dc, grads);
        let dy: Vec<f64> = dz.iter().zip(&dy_norm).map(|(a, b)| a + b).collect();

        let dy = match (&c.ad1, li.adapters) {
            (Some(cache), Some(ad)) => self.adapter_backward(&ad[0], cache, &dy, grads),
            _ => dy,
        };
        let mut do_ = dy.clone();
        if let Some(m) = &c.drop1 {
            do_.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
        }
        let dctx = self.linear_backward(li.wo, li.bo, &c.ctx, t, d, &do_, d, grads);

        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut dp = vec![0.0; t];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..t {
                let p = &c.probs[(h * t + i) * t..(h * t + i + 1) * t];
                let dci = &dctx[i * d + off..i * d + off + dh];
                for j in 0..t {
                    let vj = &c.v[j * d + off..j * d + off + dh];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    for (g, &x) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                        *g += p[j] * x;
                    }
                }
                let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..t {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for cc in 0..dh {
                        dq[i * d + off + cc] += ds * c.k[j * d + off + cc];
                        dk[j * d + off + cc] += ds * c.q[i * d + off + cc];
                    }
                }
            }
        }
        let mut da = self.linear_backward(li.wq, li.bq, &c.a, t, d, &dq, d, grads);
        let dak = self.linear_backward(li.wk, li.bk, &c.a, t, d, &dk, d, grads);
        let dav = self.linear_backward(li.wv, li.bv, &c.a, t, d, &dv, d, grads);
        for ((a, b), c2) in da.iter_mut().zip(&dak).zip(&dav) {
            *a += b + c2;
        }
        let dx_norm = self.norm_backward(li.attn_norm_g, li.attn_norm_b, &c.ln1, &da, grads);
        dy.iter().zip(&dx_norm).map(|(a, b)| a + b).collect()
    }
}

type Slot = Option<Vec<f64>>;

// Layer-norm backward needs two gradient slots at once; move them out of the
// store and back to satisfy the borrow checker.
fn split_slots(grads: &mut Grads, a: usize, b: usize) -> (Slot, Slot) {
    let take = |v: &mut Vec<f64>| {
        if v.is_empty() {
            None
        } else {
            Some(core::mem::take(v))
        }
    };
    let ga = take(&mut grads.0[a]);
    let gb = take(&mut grads.0[b]);
    (ga, gb)
}

fn restore_slots(grads: &mut Grads, a: usize, b: usize, ga: Slot, gb: Slot) {
    if let Some(v) = ga {
        grads.0[a] = v;
    }
    if let Some(v) = gb {
        grads.0[b] = v;
    }
}
