//! Error metrics, sample statistics and kernel density estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, WALL};

/// `100 * max|fom - rom| / max|fom|`.
pub fn cp_error(fom: &[f64], rom: &[f64]) -> Result<f64> {
    if fom.len() != rom.len() || fom.is_empty() {
        return Err(Error::Dimension(format!("C_P lengths {} and {}", fom.len(), rom.len())));
    }
    let num = fom.iter().zip(rom).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let den = fom.iter().map(|a| a.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        return Err(Error::Domain("reference C_P is identically zero".into()));
    }
    Ok(100.0 * num / den)
}

/// `100 * |rom - fom| / |fom|`.
pub fn scalar_error(rom: f64, fom: f64) -> Result<f64> {
    if fom == 0.0 {
        return Err(Error::Domain("reference value is zero".into()));
    }
    Ok(100.0 * (rom - fom).abs() / fom.abs())
}

/// Wall-face x coordinates normalized to [0, 1] by the wall's extent.
pub fn wall_x_over_c(mesh: &Mesh) -> Result<Vec<f64>> {
    let wall = mesh.patch(WALL).ok_or_else(|| Error::InvalidInput("mesh has no wall patch".into()))?;
    let centers = mesh.face_centers.as_ref().ok_or_else(|| Error::InvalidInput("mesh has no face centers".into()))?;
    let xs: Vec<f64> = wall.faces.iter().map(|&f| centers[f][0]).collect();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let c = (hi - lo).max(f64::MIN_POSITIVE);
    Ok(xs.iter().map(|x| (x - lo) / c).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (n - 1).
    pub std: f64,
    pub skewness: f64,
    /// Non-excess kurtosis (3 for a normal distribution).
    pub kurtosis: f64,
}

pub fn statistics(x: &[f64]) -> Result<Statistics> {
    let n = x.len();
    if n == 0 || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("statistics need finite samples".into()));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let moment = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / nf;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let std = if n > 1 { (m2 * nf / (nf - 1.0)).sqrt() } else { 0.0 };
    let (skewness, kurtosis) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2)) } else { (0.0, 0.0) };
    Ok(Statistics { count: n, mean, median, std, skewness, kurtosis })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl Kde {
    /// Trapezoid integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid.windows(2).zip(self.density.windows(2)).map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1])).sum()
    }
}

/// Gaussian KDE on `points` equally spaced values spanning the samples
/// widened by four bandwidths on each side.
pub fn gaussian_kde(samples: &[f64], bandwidth: f64, points: usize) -> Result<Kde> {
    if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("KDE needs finite samples".into()));
    }
    if !(bandwidth > 0.0) || points < 2 {
        return Err(Error::InvalidInput(format!("KDE bandwidth {bandwidth}, {points} points")));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * bandwidth;
    let grid: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|g| samples.iter().map(|s| (-0.5 * ((g - s) / bandwidth).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    Ok(Kde { bandwidth, grid, density })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round2(x: f64) -> f64 {
        (x * 100.0).round() / 100.0
    }

    #[test]
    fn published_error_rows() {
        assert_eq!(round2(scalar_error(0.1889, 0.1912).unwrap()), 1.20);
        assert_eq!(round2(scalar_error(0.0161, 0.0174).unwrap()), 7.47);
        assert_eq!(round2(scalar_error(0.0336, 0.0302).unwrap()), 11.26);
    }

    #[test]
    fn identical_outputs_have_zero_error() {
        let cp = [-1.2, 0.3, 1.0, -0.4];
        assert_eq!(cp_error(&cp, &cp).unwrap(), 0.0);
        assert_eq!(scalar_error(0.2, 0.2).unwrap(), 0.0);
        assert!((cp_error(&[-2.0, 1.0], &[-1.9, 1.0]).unwrap() - 5.0).abs() < 1e-12);
        assert!(cp_error(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn statistics_of_known_samples() {
        let s = statistics(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(s.skewness.abs() < 1e-15);
        assert!((s.kurtosis - 1.64).abs() < 1e-12);
        let c = statistics(&[0.3; 7]).unwrap();
        assert_eq!((c.std, c.median), (0.0, 0.3));
    }

    #[test]
    fn kde_of_single_value_is_one_kernel() {
        let k = gaussian_kde(&[0.02; 10], 0.001, 100).unwrap();
        assert_eq!(k.grid.len(), 100);
        let peak = k.density.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 1.0 / (0.001 * (2.0 * std::f64::consts::PI).sqrt())).abs() / peak < 1e-2);
        assert!((k.integral() - 1.0).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn kde_integrates_to_one(xs in proptest::collection::vec(-1.0f64..1.0, 1..200), r in 0.03f64..1.0) {
            // Bandwidths the 100-point grid resolves.
            let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let h = (r * spread).max(1e-3);
            let k = gaussian_kde(&xs, h, 100).unwrap();
            prop_assert!((k.integral() - 1.0).abs() < 0.02);
            prop_assert!(k.density.iter().all(|d| *d >= 0.0));
        }
    }
}
