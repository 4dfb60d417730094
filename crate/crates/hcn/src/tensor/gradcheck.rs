//! Finite-difference verification of analytic gradients.
//!
//! Central differences with step `h` perturb one parameter element at a
//! time; the relative error against the analytic gradient uses a floored
//! denominator so near-zero gradients do not blow up the ratio. The
//! numeric and comparison halves are separate functions: a test can
//! corrupt an analytic gradient and confirm the comparison catches it.

use serde::Serialize;
use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::Tensor;

/// Relative-error threshold below which a gradient element passes.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor in the relative error; keeps tiny true gradients
/// from inflating finite-difference noise into failures.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// One compared gradient element.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome over every element of every parameter.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// The element with the largest relative error, if any were checked.
    pub worst: Option<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Central-difference gradient of `loss` with respect to every element
/// of every parameter. `params` is restored exactly before returning.
pub fn numeric_gradients<F>(
    loss: &mut F,
    params: &mut BTreeMap<String, Tensor>,
    step: f64,
) -> Result<BTreeMap<String, Tensor>>
where
    F: FnMut(&BTreeMap<String, Tensor>) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let names: Vec<String> = params.keys().cloned().collect();
    let mut out = BTreeMap::new();
    for name in names {
        let numel = params[&name].numel();
        let shape = params[&name].shape().to_vec();
        let mut grad = vec![0.0; numel];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = params.get(&name).unwrap().data()[i];
            params.get_mut(&name).unwrap().data_mut()[i] = orig + step;
            let up = loss(params)?;
            params.get_mut(&name).unwrap().data_mut()[i] = orig - step;
            let down = loss(params)?;
            params.get_mut(&name).unwrap().data_mut()[i] = orig;
            *g = (up - down) / (2.0 * step);
        }
        out.insert(name, Tensor::from_vec(shape, grad)?);
    }
    Ok(out)
}

/// Element-wise relative-error comparison of two gradient maps. The key
/// sets must agree exactly, as must shapes per key.
pub fn compare_gradients(
    analytic: &BTreeMap<String, Tensor>,
    numeric: &BTreeMap<String, Tensor>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    for name in analytic.keys() {
        if !numeric.contains_key(name) {
            return Err(Error::validation(
                "gradient comparison",
                name.clone(),
                "present in analytic gradients only",
            ));
        }
    }
    for name in numeric.keys() {
        if !analytic.contains_key(name) {
            return Err(Error::validation(
                "gradient comparison",
                name.clone(),
                "present in numeric gradients only",
            ));
        }
    }
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        tolerance,
        worst: None,
    };
    for (name, a) in analytic {
        let n = &numeric[name];
        if a.shape() != n.shape() {
            return Err(Error::ShapeMismatch {
                op: "gradient comparison",
                lhs: a.shape().to_vec(),
                rhs: n.shape().to_vec(),
            });
        }
        for (i, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            let denom = av.abs().max(nv.abs()).max(REL_ERR_FLOOR);
            let rel = (av - nv).abs() / denom;
            report.checked += 1;
            if rel >= report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some(GradCheckEntry {
                    param: name.clone(),
                    index: i,
                    analytic: av,
                    numeric: nv,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Verifies `analytic` against central differences of `loss`.
pub fn gradcheck<F>(
    mut loss: F,
    params: &mut BTreeMap<String, Tensor>,
    analytic: &BTreeMap<String, Tensor>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&BTreeMap<String, Tensor>) -> Result<f64>,
{
    let numeric = numeric_gradients(&mut loss, params, step)?;
    compare_gradients(analytic, &numeric, tolerance)
}
