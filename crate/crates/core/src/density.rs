//! Gaussian kernel density estimates on equally spaced grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GRID_POINTS: usize = 512;
pub const MIN_GRID_POINTS: usize = 16;
/// Grid padding in bandwidths on both sides of the data.
pub const GRID_PADDING_BANDWIDTHS: f64 = 5.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
// below this many kernel evaluations a parallel split costs more than it saves
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("no values to estimate a density from")]
    EmptyInput,
    #[error("bandwidth must be positive and finite, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: f64,
    hi: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self, DensityError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DensityError::InvalidGrid(format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        if n_points < MIN_GRID_POINTS {
            return Err(DensityError::InvalidGrid(format!(
                "{n_points} points, need at least {MIN_GRID_POINTS}"
            )));
        }
        Ok(Self { lo, hi, n_points })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        if j + 1 == self.n_points {
            self.hi
        } else {
            self.lo + j as f64 * self.step()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|j| self.point(j))
    }

    /// Bit-exact identity of the grid, used to check that two densities share support.
    pub fn id(&self) -> String {
        format!("{:016x}-{:016x}-{}", self.lo.to_bits(), self.hi.to_bits(), self.n_points)
    }

    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.n_points];
        w[0] = 0.5 * h;
        w[self.n_points - 1] = 0.5 * h;
        w
    }

    /// Trapezoid rule of `f` sampled on this grid.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n_points);
        let inner: f64 = f[1..f.len() - 1].iter().sum();
        self.step() * (inner + 0.5 * (f[0] + f[f.len() - 1]))
    }
}

/// Density values on a grid together with how they were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    grid: Grid,
    density: Vec<f64>,
    bandwidth: f64,
    n_samples: usize,
}

impl DensityEstimate {
    /// Wrap density values computed elsewhere (e.g. an exact pdf sampled on
    /// the grid). The grid step stands in for the bandwidth.
    pub fn from_density(grid: Grid, density: Vec<f64>) -> Result<Self, DensityError> {
        if density.len() != grid.n_points {
            return Err(DensityError::InvalidDensity(format!(
                "{} values for {} grid points",
                density.len(),
                grid.n_points
            )));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(DensityError::InvalidDensity("values must be finite and >= 0".into()));
        }
        Ok(Self { bandwidth: grid.step(), grid, density, n_samples: 0 })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Trapezoid mass over the grid.
    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.density)
    }
}

/// `p(g) = 1/(n h) * sum_i phi((g - y_i) / h)` at every grid point.
pub fn estimate_kde(values: &[f64], bandwidth: f64, grid: &Grid) -> Result<DensityEstimate, DensityError> {
    if values.is_empty() {
        return Err(DensityError::EmptyInput);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(DensityError::NonPositiveBandwidth(bandwidth));
    }
    let inv_h = 1.0 / bandwidth;
    let norm = INV_SQRT_2PI / (values.len() as f64 * bandwidth);
    let at = |g: f64| {
        let s: f64 = values
            .iter()
            .map(|y| {
                let u = (g - y) * inv_h;
                (-0.5 * u * u).exp()
            })
            .sum();
        norm * s
    };
    let density: Vec<f64> = if values.len() * grid.n_points >= PAR_THRESHOLD {
        (0..grid.n_points).into_par_iter().map(|j| at(grid.point(j))).collect()
    } else {
        grid.points().map(at).collect()
    };
    Ok(DensityEstimate { grid: *grid, density, bandwidth, n_samples: values.len() })
}

/// Grid covering both samples padded by five bandwidths.
pub fn shared_grid(values_a: &[f64], values_b: &[f64], bandwidth: f64, n_points: usize) -> Result<Grid, DensityError> {
    if values_a.is_empty() || values_b.is_empty() {
        return Err(DensityError::EmptyInput);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(DensityError::NonPositiveBandwidth(bandwidth));
    }
    let (lo, hi) = values_a
        .iter()
        .chain(values_b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let pad = GRID_PADDING_BANDWIDTHS * bandwidth;
    Grid::new(lo - pad, hi + pad, n_points)
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR/1.34) * n^(-1/5)`, falling
/// back to whichever spread is non-zero. Returns 0 for constant samples.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return 0.0,
    };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}
