//! Metrics of bivariate normal forecasts: analytic confidence level and
//! area, Monte Carlo weighted error, and Monte Carlo cross-checks with
//! standard errors.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::MetricsError;
use crate::models::GaussianForecast;

fn check(f: &GaussianForecast) -> Result<(), MetricsError> {
    if f.is_valid() {
        Ok(())
    } else {
        Err(MetricsError::DegenerateCovariance)
    }
}

/// Probability mass of the density level set through `y`.
pub fn gaussian_confidence_level(f: &GaussianForecast, y: [f64; 2]) -> Result<f64, MetricsError> {
    check(f)?;
    Ok(-(-0.5 * f.mahalanobis2(y)).exp_m1())
}

/// Area (m^2) of the ellipse holding probability `level`.
pub fn gaussian_confidence_area(f: &GaussianForecast, level: f64) -> Result<f64, MetricsError> {
    check(f)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    let alpha = 1.0 - level;
    Ok(PI * f.sigma[0] * f.sigma[1] * (1.0 - f.rho * f.rho).sqrt() * (-2.0 * alpha.ln()))
}

/// Seeded draws from the forecast.
pub fn gaussian_samples(f: &GaussianForecast, n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (1.0 - f.rho * f.rho).sqrt();
    (0..n)
        .map(|_| {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            [
                f.mean[0] + f.sigma[0] * z1,
                f.mean[1] + f.sigma[1] * (f.rho * z1 + c * z2),
            ]
        })
        .collect()
}

/// Monte Carlo mean distance between forecast draws and `y`.
pub fn gaussian_waee(f: &GaussianForecast, y: [f64; 2], n: usize, seed: u64) -> Result<f64, MetricsError> {
    check(f)?;
    if n == 0 {
        return Err(MetricsError::Empty("Monte Carlo samples"));
    }
    let total: f64 = gaussian_samples(f, n, seed)
        .iter()
        .map(|p| (p[0] - y[0]).hypot(p[1] - y[1]))
        .sum();
    Ok(total / n as f64)
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// Whether `reference` lies within `k` standard errors.
    pub fn agrees(&self, reference: f64, k: f64) -> bool {
        (self.value - reference).abs() <= k * self.std_error
    }
}

/// Fraction of draws at least as probable as `y`, with binomial error.
pub fn mc_confidence_level(f: &GaussianForecast, y: [f64; 2], n: usize, seed: u64) -> Result<McEstimate, MetricsError> {
    check(f)?;
    if n == 0 {
        return Err(MetricsError::Empty("Monte Carlo samples"));
    }
    let dy = f.mahalanobis2(y);
    let hits = gaussian_samples(f, n, seed)
        .iter()
        .filter(|p| f.mahalanobis2(**p) <= dy)
        .count();
    let p = hits as f64 / n as f64;
    Ok(McEstimate {
        value: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt().max(0.5 / n as f64),
    })
}

/// Area of the `level` region from draws: the empirical quantile of the
/// squared Mahalanobis distance fixes the region, whose area is then
/// measured by uniform box counting. The error combines the quantile
/// uncertainty (delta method) and the box-count binomial error.
pub fn mc_confidence_area(f: &GaussianForecast, level: f64, n: usize, seed: u64) -> Result<McEstimate, MetricsError> {
    check(f)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    if n < 2 {
        return Err(MetricsError::Empty("Monte Carlo samples"));
    }
    let mut d2: Vec<f64> = gaussian_samples(f, n, seed).iter().map(|p| f.mahalanobis2(*p)).collect();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, q, _) = d2.select_nth_unstable_by(k, f64::total_cmp);
    let q = *q;

    // the region {d2 <= q} spans sigma * sqrt(q) around the mean on each axis
    let hx = f.sigma[0] * q.sqrt();
    let hy = f.sigma[1] * q.sqrt();
    let box_area = 4.0 * hx * hy;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let ux = Uniform::new_inclusive(-hx, hx).expect("finite box");
    let uy = Uniform::new_inclusive(-hy, hy).expect("finite box");
    let inside = (0..n)
        .filter(|_| {
            let p = [f.mean[0] + ux.sample(&mut rng), f.mean[1] + uy.sample(&mut rng)];
            f.mahalanobis2(p) <= q
        })
        .count();
    let frac = inside as f64 / n as f64;
    let area = frac * box_area;
    let se_box = box_area * (frac * (1.0 - frac) / n as f64).sqrt();
    // squared distance is chi-square with 2 degrees of freedom: density e^{-q/2}/2
    let density = 0.5 * (-0.5 * q).exp();
    let se_q = (level * (1.0 - level) / n as f64).sqrt() / density;
    let se_from_q = area / q * se_q;
    Ok(McEstimate {
        value: area,
        std_error: se_box.hypot(se_from_q),
    })
}
