use rand::seq::index::sample;
use rand::Rng;

use super::ParamStore;
use crate::error::{Error, Result};

/// Denominator floor for the relative error. Components whose analytic and
/// numeric gradients are both below this are compared in absolute terms,
/// which keeps round-off in `f(θ ± eps)` from dominating near-zero entries.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (parameter, flat index, analytic, numeric) of the worst component.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares the gradients currently held in `params` against central finite
/// differences of `f`. When `max_per_tensor` is set, at most that many
/// components of each tensor are sampled.
pub fn grad_check<F, R>(
    params: &mut ParamStore,
    eps: f64,
    max_per_tensor: Option<usize>,
    rng: &mut R,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
    R: Rng + ?Sized,
{
    let base = f(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("objective is {base}")));
    }
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for name in names {
        let len = params.get(&name)?.value.len();
        let indices: Vec<usize> = match max_per_tensor {
            Some(k) if k < len => {
                let mut v = sample(rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for i in indices {
            let orig = params.get(&name)?.value.data()[i];
            params.get_mut(&name)?.value.data_mut()[i] = orig + eps;
            let plus = f(params)?;
            params.get_mut(&name)?.value.data_mut()[i] = orig - eps;
            let minus = f(params)?;
            params.get_mut(&name)?.value.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective non-finite while perturbing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = params.get(&name)?.grad.data()[i];
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}

pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR);
    (a - b).abs() / denom
}
