//! Central finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParamSet;
use super::tape::{Tape, TensorId};
use super::DiffError;
use crate::mat::Scalar;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all checked entries.
    pub max_rel_error: f64,
    /// `(parameter name, row, col)` of the worst entry, if any was checked.
    pub worst_entry: Option<(String, usize, usize)>,
    pub entries_checked: usize,
    /// Entries excluded because perturbing them flipped an activation sign
    /// or another recorded branch, i.e. the loss is not differentiable there
    /// at this step size.
    pub entries_skipped: usize,
}

/// Relative error floor: differences below this absolute size are treated as
/// matching, so near-zero gradients are not dominated by roundoff noise.
const ABS_FLOOR: f64 = 1e-6;

/// Compares tape gradients of `build` against central finite differences.
///
/// `build` records the loss (a `1×1` tensor) for the parameters it is given;
/// it must be deterministic. Analytic gradients are taken in precision `F`,
/// while the finite-difference oracle evaluates `build_oracle` — the same
/// computation — on an `O`-precision copy of the parameters, so a 32-bit
/// model can be checked against a 64-bit oracle. For a same-precision check,
/// pass the same (copyable) closure twice.
///
/// Entries where the two perturbed evaluations disagree on any recorded
/// branch (activation signs, caller-noted masks) are skipped rather than
/// reported as failures; the loss has a kink there and finite differences do
/// not estimate a derivative.
pub fn grad_check<F, O, B, BO>(
    params: &mut ParamSet<F>,
    eps: f64,
    mut build: B,
    mut build_oracle: BO,
) -> Result<GradCheckReport, DiffError>
where
    F: Scalar,
    O: Scalar,
    B: FnMut(&mut Tape<F>, &ParamSet<F>) -> Result<TensorId, DiffError>,
    BO: FnMut(&mut Tape<O>, &ParamSet<O>) -> Result<TensorId, DiffError>,
{
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    tape.backward(loss, params)?;

    let mut oracle: ParamSet<O> = params.cast();
    let mut eval = |oracle: &ParamSet<O>| -> Result<(f64, Vec<bool>), DiffError> {
        let mut t = Tape::new();
        let id = build_oracle(&mut t, oracle)?;
        let value = t.value(id)[(0, 0)].to_f64();
        Ok((value, t.branch_signature().to_vec()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_entry: None,
        entries_checked: 0,
        entries_skipped: 0,
    };

    for idx in 0..params.len() {
        let id = super::params::ParamId(idx);
        let (rows, cols) = params.value(id).shape();
        for r in 0..rows {
            for c in 0..cols {
                let original = oracle.value(id)[(r, c)];
                oracle.entry_mut(id).value[(r, c)] = original + O::from_f64(eps);
                let (loss_plus, sig_plus) = eval(&oracle)?;
                oracle.entry_mut(id).value[(r, c)] = original - O::from_f64(eps);
                let (loss_minus, sig_minus) = eval(&oracle)?;
                oracle.entry_mut(id).value[(r, c)] = original;

                if sig_plus != sig_minus {
                    report.entries_skipped += 1;
                    continue;
                }

                let fd = (loss_plus - loss_minus) / (2.0 * eps);
                let analytic = params.entry(id).grad[(r, c)].to_f64();
                let denom = fd.abs().max(analytic.abs()).max(ABS_FLOOR);
                let rel = (fd - analytic).abs() / denom;
                report.entries_checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst_entry =
                        Some((params.entry(id).name.clone(), r, c));
                }
            }
        }
    }
    Ok(report)
}
