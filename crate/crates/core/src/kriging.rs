//! Zero-mean Gaussian-process interpolation of reduced coordinates.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::db::column_std;
use crate::error::{Error, Result};
use crate::euler::{read_f64s, read_line, write_f64s, Freestream};
use crate::mesh::Mesh;
use crate::pod::BlockBasis;
use crate::rom::{predict_full, Prediction};

pub const NUGGET: f64 = 1e-10;
pub const MAX_NUGGET: f64 = 1e-6;

pub fn se_kernel(a: &[f64], b: &[f64], ell: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * ell * ell)).exp()
}

/// Maps raw parameters to the standardized space the kernel works in.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(thetas: &[Vec<f64>]) -> Self {
        let m = thetas.len().max(1) as f64;
        let d = thetas.first().map_or(0, |t| t.len());
        let mean = (0..d).map(|j| thetas.iter().map(|t| t[j]).sum::<f64>() / m).collect();
        let std = column_std(thetas).into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    /// Standardized training inputs.
    pub x: Vec<Vec<f64>>,
    pub y: DVector<f64>,
    pub ell: f64,
    pub sigma2: f64,
    pub nugget: f64,
    /// Lower Cholesky factor of `R + nugget I`.
    pub chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpOptions {
    pub bounds: (f64, f64),
    pub max_condition: Option<f64>,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self { bounds: (0.05, 20.0), max_condition: Some(1e8) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPrediction {
    pub mean: f64,
    pub variance: f64,
}

fn correlation(x: &[Vec<f64>], ell: f64, nugget: f64) -> DMatrix<f64> {
    let m = x.len();
    DMatrix::from_fn(m, m, |i, j| se_kernel(&x[i], &x[j], ell) + if i == j { nugget } else { 0.0 })
}

/// Cholesky of the correlation matrix with nugget escalation.
fn factor(x: &[Vec<f64>], ell: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut nugget = NUGGET;
    loop {
        if let Some(c) = correlation(x, ell, nugget).cholesky() {
            return Ok((c, nugget));
        }
        if nugget >= MAX_NUGGET {
            return Err(Error::NotPositiveDefinite { eigenvalue: f64::NAN });
        }
        nugget = (nugget * 10.0).min(MAX_NUGGET);
    }
}

/// Profiled log marginal likelihood and sigma^2 at one length-scale.
fn profiled(x: &[Vec<f64>], y: &DVector<f64>, ell: f64) -> Result<(f64, f64)> {
    let m = x.len() as f64;
    let (c, _) = factor(x, ell)?;
    let quad = y.dot(&c.solve(y));
    let sigma2 = quad / m;
    let logdet = 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let ll = if sigma2 > 0.0 {
        -0.5 * m * sigma2.ln() - 0.5 * logdet - 0.5 * m * (1.0 + (2.0 * std::f64::consts::PI).ln())
    } else {
        f64::INFINITY
    };
    Ok((ll, sigma2))
}

/// `R^{-1} y` by iterative refinement on the nugget-regularized factor, so
/// the mean interpolates the data rather than the nugget-smoothed data.
fn refined_weights(x: &[Vec<f64>], y: &DVector<f64>, ell: f64, c: &Cholesky<f64, Dyn>) -> DVector<f64> {
    let r = correlation(x, ell, 0.0);
    let mut alpha = c.solve(y);
    let mut res = y - &r * &alpha;
    for _ in 0..8 {
        let next = &alpha + c.solve(&res);
        let next_res = y - &r * &next;
        if next_res.norm() >= res.norm() {
            break;
        }
        alpha = next;
        res = next_res;
    }
    alpha
}

impl GpModel {
    /// Maximum-likelihood fit over `ell in bounds` (standardized units).
    pub fn fit(x: Vec<Vec<f64>>, y: DVector<f64>, bounds: (f64, f64)) -> Result<Self> {
        Self::fit_with(x, y, &GpOptions { bounds, max_condition: None })
    }

    /// Fit with the length-scale search restricted to correlation matrices
    /// whose condition number stays below `max_condition`.
    pub fn fit_with(x: Vec<Vec<f64>>, y: DVector<f64>, opts: &GpOptions) -> Result<Self> {
        let bounds = opts.bounds;
        let m = x.len();
        if m < 3 {
            return Err(Error::InvalidInput(format!("Kriging needs at least 3 points, got {m}")));
        }
        if y.len() != m {
            return Err(Error::Dimension(format!("{} values for {m} inputs", y.len())));
        }
        if !(bounds.0 > 0.0 && bounds.1 > bounds.0) {
            return Err(Error::InvalidInput(format!("bad length-scale bounds {bounds:?}")));
        }
        for i in 0..m {
            for j in 0..i {
                if x[i] == x[j] {
                    return Err(Error::InvalidInput(format!("duplicate training inputs {j} and {i}")));
                }
            }
        }
        let (lo, hi) = (bounds.0.ln(), bounds.1.ln());
        let ell = if y.iter().all(|v| *v == 0.0) {
            (0.5 * (lo + hi)).exp()
        } else {
            let nll = |t: f64| {
                if let Some(cap) = opts.max_condition {
                    let ev = correlation(&x, t.exp(), 0.0).symmetric_eigenvalues();
                    if ev.max() > cap * ev.min().max(0.0) {
                        return f64::INFINITY;
                    }
                }
                profiled(&x, &y, t.exp()).map(|(ll, _)| -ll).unwrap_or(f64::INFINITY)
            };
            // Coarse scan to bracket the best mode, then golden section inside it.
            let grid = 24;
            let ts: Vec<f64> = (0..=grid).map(|i| lo + (hi - lo) * i as f64 / grid as f64).collect();
            let vals: Vec<f64> = ts.iter().map(|&t| nll(t)).collect();
            let best = (0..ts.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
            if !vals[best].is_finite() {
                log::warn!("no admissible length-scale in {bounds:?}; using the lower bound");
            }
            let (mut a, mut b) = (ts[best.saturating_sub(1)], ts[(best + 1).min(grid)]);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            let (mut fc, mut fd) = (nll(c), nll(d));
            while b - a > 1e-6 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = nll(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = nll(d);
                }
            }
            let t = 0.5 * (a + b);
            if nll(t) <= vals[best] { t.exp() } else { ts[best].exp() }
        };
        let (c, nugget) = factor(&x, ell)?;
        let sigma2 = (y.dot(&c.solve(&y)) / m as f64).max(0.0);
        let alpha = refined_weights(&x, &y, ell, &c);
        Ok(Self { x, y, ell, sigma2, nugget, chol: c.unpack(), alpha })
    }

    fn from_parts(x: Vec<Vec<f64>>, y: DVector<f64>, ell: f64, sigma2: f64, nugget: f64, chol: DMatrix<f64>) -> Result<Self> {
        let c = Cholesky::pack_dirty(chol.clone());
        let alpha = refined_weights(&x, &y, ell, &c);
        Ok(Self { x, y, ell, sigma2, nugget, chol, alpha })
    }

    fn r_vec(&self, xs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| se_kernel(xs, xi, self.ell)))
    }

    /// Posterior at a standardized input.
    pub fn predict(&self, xs: &[f64]) -> GpPrediction {
        let r = self.r_vec(xs);
        let mean = r.dot(&self.alpha);
        let v = self.chol.solve_lower_triangular(&r).unwrap_or_else(|| DVector::zeros(r.len()));
        let variance = (self.sigma2 * (1.0 - v.norm_squared())).max(0.0);
        GpPrediction { mean, variance }
    }

    pub fn predict_mean(&self, xs: &[f64]) -> f64 {
        self.r_vec(xs).dot(&self.alpha)
    }
}

/// POD+Kriging baseline: one GP per retained reduced coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PodKrigSurrogate {
    pub standardizer: Standardizer,
    pub models: Vec<GpModel>,
}

impl PodKrigSurrogate {
    /// Fit from training parameters and their reduced coordinates.
    pub fn fit(thetas: &[Vec<f64>], reduced: &[DVector<f64>], opts: &GpOptions) -> Result<Self> {
        if thetas.len() != reduced.len() || reduced.is_empty() {
            return Err(Error::Dimension("parameter and reduced-coordinate counts differ".into()));
        }
        let standardizer = Standardizer::fit(thetas);
        let x: Vec<Vec<f64>> = thetas.iter().map(|t| standardizer.apply(t)).collect();
        let k = reduced[0].len();
        let models = (0..k)
            .into_par_iter()
            .map(|j| GpModel::fit_with(x.clone(), DVector::from_iterator(reduced.len(), reduced.iter().map(|r| r[j])), opts))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { standardizer, models })
    }

    pub fn predict_reduced(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.standardizer.mean.len() {
            return Err(Error::Dimension(format!("query has {} parameters", theta.len())));
        }
        let xs = self.standardizer.apply(theta);
        Ok(DVector::from_iterator(self.models.len(), self.models.iter().map(|m| m.predict_mean(&xs))))
    }

    pub fn predict(&self, basis: &BlockBasis, mesh: &Mesh, fs: &Freestream, theta: &[f64]) -> Result<Prediction> {
        predict_full(basis, mesh, fs, &self.predict_reduced(theta)?)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let count = self.models.len();
        let m = self.models.first().map_or(0, |g| g.x.len());
        let d = self.standardizer.mean.len();
        writeln!(w, "liftrom-gp v1 {count} {m} {d}")?;
        write_f64s(w, &self.standardizer.mean)?;
        write_f64s(w, &self.standardizer.std)?;
        if let Some(g) = self.models.first() {
            for xi in &g.x {
                write_f64s(w, xi)?;
            }
        }
        for g in &self.models {
            write_f64s(w, &[g.ell, g.sigma2, g.nugget])?;
            write_f64s(w, g.y.as_slice())?;
            write_f64s(w, g.chol.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let header = read_line(r)?;
        let bad = || Error::Format(format!("bad surrogate header `{header}`"));
        let rest = header.strip_prefix("liftrom-gp v1 ").ok_or_else(bad)?;
        let nums: Vec<usize> = rest.split_whitespace().map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let [count, m, d]: [usize; 3] = nums.try_into().map_err(|_| bad())?;
        if count > 1 << 16 || m > 1 << 14 || d > 1 << 10 {
            return Err(bad());
        }
        let mean = read_f64s(r, d)?;
        let std = read_f64s(r, d)?;
        let x: Vec<Vec<f64>> = (0..m).map(|_| read_f64s(r, d)).collect::<Result<_>>()?;
        let models = (0..count)
            .map(|_| {
                let h = read_f64s(r, 3)?;
                let y = DVector::from_vec(read_f64s(r, m)?);
                let chol = DMatrix::from_vec(m, m, read_f64s(r, m * m)?);
                GpModel::from_parts(x.clone(), y, h[0], h[1], h[2], chol)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { standardizer: Standardizer { mean, std }, models })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
