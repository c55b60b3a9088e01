//! Entropy, Kullback–Leibler and Jensen–Shannon divergences between gridded
//! densities.
//!
//! Densities are first turned into probability vectors `P_j = w_j p_j / sum(w p)`
//! with trapezoid weights `w_j`. Integrals become finite sums over those
//! vectors, so JSD stays inside `[0, 1]` (log base 2) and its square root is a
//! metric exactly, not just up to quadrature error.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityEstimate;

/// Floor applied to the second argument of the generic KL.
pub const KL_FLOOR: f64 = 1e-300;
/// Allowed deviation of the trapezoid mass from one for [`shannon_entropy`].
pub const MASS_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Error, PartialEq)]
pub enum DivergenceError {
    #[error("densities live on different grids ({0} vs {1})")]
    GridMismatch(String, String),
    #[error("density mass {0} deviates from 1 by more than {MASS_TOLERANCE}")]
    UnnormalizedDensity(f64),
    #[error("density has zero mass")]
    ZeroMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Jsd,
    SqrtJsd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceValue {
    pub value: f64,
    pub kind: DivergenceKind,
    pub grid_id: String,
}

fn probabilities(p: &DensityEstimate) -> Result<Vec<f64>, DivergenceError> {
    let w = p.grid().weights();
    let mass = p.mass();
    if !(mass > 0.0) {
        return Err(DivergenceError::ZeroMass);
    }
    Ok(p.density().iter().zip(&w).map(|(d, w)| d * w / mass).collect())
}

fn same_grid(p: &DensityEstimate, q: &DensityEstimate) -> Result<String, DivergenceError> {
    let (a, b) = (p.grid().id(), q.grid().id());
    if a != b {
        return Err(DivergenceError::GridMismatch(a, b));
    }
    Ok(a)
}

fn xlogy_ratio(x: f64, ratio: f64) -> f64 {
    if x > 0.0 {
        x * ratio.ln()
    } else {
        0.0
    }
}

/// Differential entropy `-∫ p log2 p` in bits, with `0 log 0 = 0`.
pub fn shannon_entropy(p: &DensityEstimate) -> Result<f64, DivergenceError> {
    let mass = p.mass();
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(DivergenceError::UnnormalizedDensity(mass));
    }
    entropy_bits(p)
}

fn entropy_bits(p: &DensityEstimate) -> Result<f64, DivergenceError> {
    let mass = p.mass();
    if !(mass > 0.0) {
        return Err(DivergenceError::ZeroMass);
    }
    let w = p.grid().weights();
    let nats: f64 = p
        .density()
        .iter()
        .zip(&w)
        .map(|(d, w)| {
            let d = d / mass;
            -w * xlogy_ratio(d, d)
        })
        .sum();
    Ok(nats / LN_2)
}

/// `KL(p || q) = ∫ p ln(p/q)` in nats; `q` is floored at [`KL_FLOOR`].
pub fn kl_divergence(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64, DivergenceError> {
    same_grid(p, q)?;
    let (pp, qq) = (probabilities(p)?, probabilities(q)?);
    Ok(pp
        .iter()
        .zip(&qq)
        .map(|(&a, &b)| xlogy_ratio(a, a / b.max(KL_FLOOR)))
        .sum())
}

fn jsd_bits(pp: &[f64], qq: &[f64]) -> f64 {
    let nats: f64 = pp
        .iter()
        .zip(qq)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            // m > 0 wherever a or b is, so no floor is needed here
            0.5 * xlogy_ratio(a, a / m) + 0.5 * xlogy_ratio(b, b / m)
        })
        .sum();
    (nats / LN_2).clamp(0.0, 1.0)
}

/// `JSD(p, q) = ½ KL(p || m) + ½ KL(q || m)` with `m = (p + q)/2`, in bits.
pub fn jsd(p: &DensityEstimate, q: &DensityEstimate) -> Result<DivergenceValue, DivergenceError> {
    let grid_id = same_grid(p, q)?;
    let value = jsd_bits(&probabilities(p)?, &probabilities(q)?);
    Ok(DivergenceValue { value, kind: DivergenceKind::Jsd, grid_id })
}

/// Entropy form `H(m) - ½ H(p) - ½ H(q)`; kept as an independent cross-check
/// of [`jsd`].
pub fn jsd_entropy_form(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64, DivergenceError> {
    same_grid(p, q)?;
    let (mp, mq) = (p.mass(), q.mass());
    if !(mp > 0.0 && mq > 0.0) {
        return Err(DivergenceError::ZeroMass);
    }
    let mix: Vec<f64> = p
        .density()
        .iter()
        .zip(q.density())
        .map(|(a, b)| 0.5 * (a / mp + b / mq))
        .collect();
    let m = DensityEstimate::from_density(*p.grid(), mix).map_err(|_| DivergenceError::ZeroMass)?;
    Ok(entropy_bits(&m)? - 0.5 * entropy_bits(p)? - 0.5 * entropy_bits(q)?)
}

/// Square root of [`jsd`]; a metric on densities.
pub fn sqrt_jsd(p: &DensityEstimate, q: &DensityEstimate) -> Result<DivergenceValue, DivergenceError> {
    let j = jsd(p, q)?;
    Ok(DivergenceValue { value: j.value.sqrt(), kind: DivergenceKind::SqrtJsd, grid_id: j.grid_id })
}
