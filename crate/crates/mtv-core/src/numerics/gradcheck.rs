//! Finite-difference verification of tape gradients.
//!
//! The analytic gradient from one backward pass is compared entry by entry
//! against a central difference `(f(θ+ε) - f(θ-ε)) / 2ε`. Agreement is scored
//! with the symmetric relative error
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`, whose floor
//! keeps near-zero gradients from dividing by dust.

use crate::error::{Error, Result};

use super::array::DenseArray;
use super::tape::{Tape, ValueId};

pub const DEFAULT_EPS: f64 = 1e-5;
const REL_ERR_FLOOR: f64 = 1e-8;

/// Worst disagreement found by a `grad_check` run.
#[derive(Debug, Clone, Copy)]
pub struct WorstEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Maximum relative error per checked parameter, in input order.
    pub per_param: Vec<f64>,
    pub worst: Option<WorstEntry>,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err <= threshold
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Checks the gradient of `loss_fn` with respect to every entry of `params`.
///
/// `loss_fn` must build a scalar loss on the given tape from leaves lifted in
/// the same order as `params`; it is re-invoked for every perturbed forward
/// pass, so it must be a pure function of the parameter values.
pub fn grad_check<F>(mut loss_fn: F, params: &[DenseArray], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[ValueId]) -> Result<ValueId>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::invalid(
            "grad_check",
            format!("eps must be finite and positive, got {eps}"),
        ));
    }

    let evaluate = |loss_fn: &mut F, values: &[DenseArray], context: &str| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = values.iter().map(|p| tape.param(p)).collect();
        let loss_id = loss_fn(&mut tape, &ids)?;
        let loss = tape.value(loss_id);
        if loss.numel() != 1 {
            return Err(Error::invalid(
                "grad_check",
                format!("loss must be a scalar, got shape {:?}", loss.shape()),
            ));
        }
        let value = loss.data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: context.to_string(),
            });
        }
        Ok(value)
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|p| tape.param(p)).collect();
    let loss_id = loss_fn(&mut tape, &ids)?;
    if tape.value(loss_id).numel() != 1 {
        return Err(Error::invalid(
            "grad_check",
            format!(
                "loss must be a scalar, got shape {:?}",
                tape.value(loss_id).shape()
            ),
        ));
    }
    let base_loss = tape.value(loss_id).data()[0];
    if !base_loss.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check base loss".to_string(),
        });
    }
    let mut grads = tape.backward(loss_id)?;
    let analytic: Vec<DenseArray> = ids
        .iter()
        .enumerate()
        .map(|(pi, &id)| {
            grads
                .take(id)
                .unwrap_or_else(|| DenseArray::zeros(params[pi].shape()))
        })
        .collect();
    drop(tape);

    // Numeric passes: one central difference per parameter entry.
    let mut work: Vec<DenseArray> = params.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut per_param = vec![0.0f64; params.len()];
    let mut worst = None;
    let mut entries = 0usize;

    for pi in 0..params.len() {
        for j in 0..params[pi].numel() {
            let original = work[pi].data()[j];

            work[pi].data_mut()[j] = original + eps;
            let ctx_plus = format!("grad_check at param {pi} entry {j} (+eps)");
            let loss_plus = evaluate(&mut loss_fn, &work, &ctx_plus)?;

            work[pi].data_mut()[j] = original - eps;
            let ctx_minus = format!("grad_check at param {pi} entry {j} (-eps)");
            let loss_minus = evaluate(&mut loss_fn, &work, &ctx_minus)?;

            work[pi].data_mut()[j] = original;

            let numeric = (loss_plus - loss_minus) / (2.0 * eps);
            let a = analytic[pi].data()[j];
            let rel = relative_error(a, numeric);
            entries += 1;
            if rel > per_param[pi] {
                per_param[pi] = rel;
            }
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some(WorstEntry {
                    param: pi,
                    index: j,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        per_param,
        worst,
        entries_checked: entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_verifies() {
        // f(x) = mean(x*x), df/dx = 2x/n: the checker should agree tightly.
        let x = DenseArray::new(vec![3], vec![0.5, -1.25, 2.0]).unwrap();
        let report = grad_check(
            |tape, ids| {
                let sq = tape.mul(ids[0], ids[0])?;
                Ok(tape.mean_all(sq))
            },
            &[x],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "{}", report.max_rel_err);
        assert_eq!(report.entries_checked, 3);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        // Scale the loss inside the closure only for the analytic pass by
        // sabotaging through a captured flag: simpler, feed a closure whose
        // gradient is genuinely wrong by building a different graph when a
        // counter is odd. First call = analytic pass.
        let x = DenseArray::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut calls = 0usize;
        let report = grad_check(
            |tape, ids| {
                calls += 1;
                let doubled = if calls == 1 {
                    tape.scale(ids[0], 2.0)
                } else {
                    tape.scale(ids[0], 1.0)
                };
                let sq = tape.mul(doubled, doubled)?;
                Ok(tape.mean_all(sq))
            },
            &[x],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_err > 0.5, "{}", report.max_rel_err);
        assert!(report.worst.is_some());
    }

    #[test]
    fn non_finite_loss_reports_parameter_context() {
        let x = DenseArray::new(vec![1], vec![2.0]).unwrap();
        let err = grad_check(
            |tape, ids| {
                // ln of a negative number once perturbation crosses zero is
                // not the goal here; force a NaN directly instead.
                let nan = tape.constant(DenseArray::scalar(f64::NAN));
                let s = tape.add(ids[0], nan)?;
                Ok(tape.mean_all(s))
            },
            &[x],
            DEFAULT_EPS,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn relative_error_floor_protects_near_zero() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 0.0) < 1e-3);
    }
}
