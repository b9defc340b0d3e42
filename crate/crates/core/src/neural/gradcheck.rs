//! Central finite-difference verification of the analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use super::loss::{loss_and_grads, loss_only, Example};
use super::params::EncoderParams;
use crate::error::Result;
use crate::exec::Serial;

/// Denominator floor for coordinates whose true gradient is ~0.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Largest relative error per parameter family.
    pub per_kind: Vec<(&'static str, f64)>,
    /// Parameter name and coordinate of the worst mismatch.
    pub worst: (String, usize),
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every trainable coordinate against `(L(θ+ε) − L(θ−ε)) / 2ε`
/// computed with evaluation-mode forward passes only.
pub fn check_gradients(
    params: &EncoderParams,
    batch: &[Example<'_>],
    eps: f64,
) -> Result<GradCheckReport> {
    let analytic = loss_and_grads(&Serial, params, batch, None)?.grads;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        per_kind: Vec::new(),
        worst: (String::new(), 0),
    };
    for pi in 0..params.params().len() {
        let p = &params.params()[pi];
        if p.frozen {
            continue;
        }
        let kind = p.kind();
        for i in 0..p.len() {
            let orig = probe.params()[pi].data[i];
            probe.params_mut()[pi].data[i] = orig + eps;
            let up = loss_only(&probe, batch)?;
            probe.params_mut()[pi].data[i] = orig - eps;
            let down = loss_only(&probe, batch)?;
            probe.params_mut()[pi].data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic.get(pi)[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (p.name.clone(), i);
            }
            match report.per_kind.iter_mut().find(|(k, _)| *k == kind) {
                Some((_, e)) => *e = e.max(err),
                None => report.per_kind.push((kind, err)),
            }
        }
    }
    Ok(report)
}
