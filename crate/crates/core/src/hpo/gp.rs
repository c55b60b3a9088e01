use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::HpoError;

const LENGTH_SCALES: [f64; 7] = [0.1, 0.15, 0.2, 0.3, 0.5, 0.8, 1.2];
const NOISE_VARIANCES: [f64; 3] = [1e-6, 1e-3, 1e-1];

/// Zero-mean GP with a unit-variance squared-exponential kernel on
/// standardized targets. Length scale and noise are picked from a fixed grid
/// by marginal likelihood.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    xs: Vec<[f64; 3]>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    length_scale: f64,
    y_mean: f64,
    y_scale: f64,
}

fn kernel(a: &[f64; 3], b: &[f64; 3], ell: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2 / (ell * ell)).exp()
}

impl GaussianProcess {
    pub fn fit(xs: &[[f64; 3]], ys: &[f64]) -> Result<Self, HpoError> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(HpoError::Surrogate("need matching, non-empty inputs and targets".into()));
        }
        let n = xs.len();
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let sd = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let y_scale = if sd > 0.0 { sd } else { 1.0 };
        let y = DVector::from_iterator(n, ys.iter().map(|v| (v - y_mean) / y_scale));

        let mut best: Option<(f64, Self)> = None;
        for &ell in &LENGTH_SCALES {
            for &noise in &NOISE_VARIANCES {
                let k = DMatrix::from_fn(n, n, |i, j| kernel(&xs[i], &xs[j], ell) + if i == j { noise } else { 0.0 });
                let Some(chol) = k.cholesky() else { continue };
                let alpha = chol.solve(&y);
                let log_det: f64 = chol.l_dirty().diagonal().iter().take(n).map(|d| d.ln()).sum();
                let lml = -0.5 * y.dot(&alpha) - log_det;
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((
                        lml,
                        Self { xs: xs.to_vec(), chol, alpha, length_scale: ell, y_mean, y_scale },
                    ));
                }
            }
        }
        best.map(|(_, gp)| gp).ok_or_else(|| HpoError::Surrogate("kernel matrix not positive definite".into()))
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// Posterior mean and standard deviation in the original score units.
    pub fn predict(&self, x: &[f64; 3]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| kernel(xi, x, self.length_scale)));
        let mu = ks.dot(&self.alpha);
        let v = self.chol.solve(&ks);
        let var = (1.0 - ks.dot(&v)).max(0.0);
        (self.y_mean + self.y_scale * mu, self.y_scale * var.sqrt())
    }

    /// Expected reduction below `best` (minimization).
    pub fn expected_improvement(&self, x: &[f64; 3], best: f64) -> f64 {
        let (mu, sigma) = self.predict(x);
        let gain = best - mu;
        if sigma < 1e-12 {
            return gain.max(0.0);
        }
        let z = gain / sigma;
        let std = Normal::standard();
        gain * std.cdf(z) + sigma * std.pdf(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_training_points() {
        let xs = [[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [1.0, 0.2, 0.9]];
        let ys = [3.0, 1.0, 2.0];
        let gp = GaussianProcess::fit(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(ys) {
            let (mu, sd) = gp.predict(x);
            assert!((mu - y).abs() < 0.2, "{mu} vs {y}");
            assert!(sd < 0.5);
        }
    }

    #[test]
    fn uncertainty_grows_away_from_data() {
        let xs = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        let gp = GaussianProcess::fit(&xs, &[1.0, 1.5]).unwrap();
        assert!(gp.predict(&[1.0, 1.0, 1.0]).1 > gp.predict(&[0.05, 0.0, 0.0]).1);
    }

    #[test]
    fn expected_improvement_is_non_negative() {
        let xs = [[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0]];
        let gp = GaussianProcess::fit(&xs, &[2.0, 0.5, 1.0]).unwrap();
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            assert!(gp.expected_improvement(&[t, 1.0 - t, t], 0.5) >= 0.0);
        }
    }

    #[test]
    fn constant_targets_fit() {
        let xs = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let gp = GaussianProcess::fit(&xs, &[4.0, 4.0]).unwrap();
        assert!((gp.predict(&[0.5, 0.5, 0.5]).0 - 4.0).abs() < 1e-9);
    }
}
