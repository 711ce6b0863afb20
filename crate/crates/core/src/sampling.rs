//! Space-filling and Monte Carlo designs over axis-aligned boxes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "bounds of length {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidInput("bounds must be finite with lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Latin hypercube design: each coordinate hits every one of the `count`
/// equal-width strata exactly once.
pub fn latin_hypercube(bounds: &Bounds, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = bounds.dim();
    let mut points = vec![vec![0.0; d]; count];
    let mut perm: Vec<usize> = (0..count).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        for (i, p) in points.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let t = (perm[i] as f64 + u) / count as f64;
            p[j] = bounds.lower[j] + t * bounds.width(j);
        }
    }
    points
}

/// Independent uniform samples over the box.
pub fn uniform(bounds: &Bounds, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..bounds.dim())
                .map(|j| bounds.lower[j] + rng.random::<f64>() * bounds.width(j))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_per_stratum() {
        let b = Bounds::new(vec![-1.0, 2.0, 0.0], vec![1.0, 5.0, 0.1]).unwrap();
        let pts = latin_hypercube(&b, 37, 11);
        for j in 0..3 {
            let mut seen = vec![false; 37];
            for p in &pts {
                let s = ((p[j] - b.lower[j]) / b.width(j) * 37.0).floor() as usize;
                assert!(!seen[s.min(36)]);
                seen[s.min(36)] = true;
            }
        }
    }

    #[test]
    fn deterministic() {
        let b = Bounds::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(latin_hypercube(&b, 5, 3), latin_hypercube(&b, 5, 3));
        assert_eq!(uniform(&b, 5, 3), uniform(&b, 5, 3));
        assert_ne!(uniform(&b, 5, 3), uniform(&b, 5, 4));
    }
}
