//! Masked cross-entropy over a batch and its gradients.

use alloc::vec;
use alloc::vec::Vec;

use super::encoder::EncoderInput;
use super::ops::{log_sum_exp, softmax};
use super::params::{EncoderParams, Grads};
use crate::error::{bail, Result};
use crate::exec::Executor;
use crate::rng;

/// One training sequence: input, per-frame targets and the frames that
/// contribute to the loss.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub input: EncoderInput<'a>,
    pub targets: &'a [u32],
    pub loss_mask: &'a [bool],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean cross-entropy over flagged frames of the whole batch.
    pub loss: f64,
    pub grads: Grads,
    pub flagged: usize,
    /// Flagged frames whose argmax equals the target.
    pub correct: usize,
}

fn validate(params: &EncoderParams, batch: &[Example<'_>]) -> Result<usize> {
    let vocab = params.config().vocab_out;
    let mut flagged = 0;
    for ex in batch {
        if ex.targets.len() != ex.loss_mask.len() {
            bail!(
                Neural,
                "{} targets for {} loss flags",
                ex.targets.len(),
                ex.loss_mask.len()
            );
        }
        for (&t, &m) in ex.targets.iter().zip(ex.loss_mask) {
            if m {
                if t as usize >= vocab {
                    bail!(Neural, "target {t} outside output vocabulary of {vocab}");
                }
                flagged += 1;
            }
        }
    }
    if flagged == 0 {
        bail!(Neural, "loss mask selects no frames");
    }
    Ok(flagged)
}

/// Loss over flagged frames and gradients for every non-frozen parameter.
///
/// Batch elements run through `exec` independently; their gradients are
/// summed in batch order. With `dropout_seed` set the forward passes run in
/// training mode, element `i` drawing from a stream derived from the seed.
pub fn loss_and_grads<E: Executor>(
    exec: &E,
    params: &EncoderParams,
    batch: &[Example<'_>],
    dropout_seed: Option<u64>,
) -> Result<LossOutput> {
    let total = validate(params, batch)?;
    let norm = 1.0 / total as f64;
    let vocab = params.config().vocab_out;
    let parts = exec.map(batch.len(), |i| -> Result<(f64, usize, Grads)> {
        let ex = &batch[i];
        let mut r = dropout_seed.map(|s| rng::derived(s, i as u64));
        let (out, trace) = params.forward_traced(ex.input, r.as_mut())?;
        if out.len != ex.targets.len() {
            bail!(
                Neural,
                "{} targets for a sequence of {} frames",
                ex.targets.len(),
                out.len
            );
        }
        let mut dlogits = vec![0.0; out.logits.len()];
        let mut loss = 0.0;
        let mut correct = 0;
        for t in 0..out.len {
            if !ex.loss_mask[t] {
                continue;
            }
            let row = out.logits_row(t);
            let target = ex.targets[t] as usize;
            loss += log_sum_exp(row) - row[target];
            correct += usize::from(argmax(row) == target);
            let drow = &mut dlogits[t * vocab..(t + 1) * vocab];
            drow.copy_from_slice(row);
            softmax(drow);
            drow[target] -= 1.0;
            drow.iter_mut().for_each(|g| *g *= norm);
        }
        let mut grads = params.zero_grads();
        params.backward(&ex.input, &trace, &out.hidden, &dlogits, &mut grads);
        Ok((loss, correct, grads))
    });
    let mut grads = params.zero_grads();
    let mut loss = 0.0;
    let mut correct = 0;
    for part in parts {
        let (l, c, g) = part?;
        loss += l;
        correct += c;
        grads.add_assign(&g);
    }
    Ok(LossOutput {
        loss: loss * norm,
        grads,
        flagged: total,
        correct,
    })
}

/// Evaluation-mode loss without gradients.
pub fn loss_only(params: &EncoderParams, batch: &[Example<'_>]) -> Result<f64> {
    let total = validate(params, batch)?;
    let mut loss = 0.0;
    for ex in batch {
        let out = params.forward(ex.input, None)?;
        for t in (0..out.len).filter(|&t| ex.loss_mask[t]) {
            let row = out.logits_row(t);
            loss += log_sum_exp(row) - row[ex.targets[t] as usize];
        }
    }
    Ok(loss / total as f64)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax of `logits` (`rows × n`).
pub fn probabilities(logits: &[f64], n: usize) -> Vec<f64> {
    let mut p = logits.to_vec();
    p.chunks_exact_mut(n).for_each(softmax);
    p
}
