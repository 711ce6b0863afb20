//! Class-shape transformation (CST) airfoils.
//!
//! A surface is `y(psi) = C(psi) * S(psi)` with the class function
//! `C = psi^n1 (1 - psi)^n2` and a Bernstein shape function
//! `S = sum_i A_i psi^i (1 - psi)^(n - i)`. The coefficients carry the
//! binomial scale: `A_i = K(i, n)` is the unit shape function `S = 1`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{latin_hypercube, Bounds};

/// CST description of a two-surface airfoil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CstAirfoil {
    pub n1: f64,
    pub n2: f64,
    pub order: usize,
    pub coeffs_upper: Vec<f64>,
    pub coeffs_lower: Vec<f64>,
}

impl CstAirfoil {
    pub fn new(n1: f64, n2: f64, coeffs_upper: Vec<f64>, coeffs_lower: Vec<f64>) -> Result<Self> {
        if !(n1 > 0.0 && n2 > 0.0) {
            return Err(Error::InvalidInput(format!("class exponents must be positive, got ({n1}, {n2})")));
        }
        if coeffs_upper.is_empty() || coeffs_upper.len() != coeffs_lower.len() {
            return Err(Error::Dimension(format!(
                "coefficient rows of length {} and {}",
                coeffs_upper.len(),
                coeffs_lower.len()
            )));
        }
        Ok(Self { n1, n2, order: coeffs_upper.len() - 1, coeffs_upper, coeffs_lower })
    }

    /// Round-nose, sharp-trailing-edge airfoil class (`n1 = 0.5`, `n2 = 1`).
    pub fn airfoil_class(coeffs_upper: Vec<f64>, coeffs_lower: Vec<f64>) -> Result<Self> {
        Self::new(0.5, 1.0, coeffs_upper, coeffs_lower)
    }

    pub fn naca0012() -> Self {
        Self::airfoil_class(vec![0.1689, 0.2699, 0.1387], vec![-0.1689, -0.2699, -0.1387]).unwrap()
    }

    pub fn rae2822() -> Self {
        Self::airfoil_class(
            vec![0.1268, 0.4670, 0.5834, 0.2103],
            vec![-0.1268, -0.5425, -0.5096, 0.0581],
        )
        .unwrap()
    }

    /// Flattened coefficient vector: upper row followed by lower row.
    pub fn parameters(&self) -> Vec<f64> {
        self.coeffs_upper.iter().chain(&self.coeffs_lower).copied().collect()
    }

    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        let n = self.order + 1;
        if params.len() != 2 * n {
            return Err(Error::Dimension(format!("expected {} parameters, got {}", 2 * n, params.len())));
        }
        Self::new(self.n1, self.n2, params[..n].to_vec(), params[n..].to_vec())
    }

    /// Copy with the `active` flattened coefficients replaced by `values`.
    pub fn with_active(&self, active: &[usize], values: &[f64]) -> Result<Self> {
        if active.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} active indices but {} values",
                active.len(),
                values.len()
            )));
        }
        let mut p = self.parameters();
        for (&i, &v) in active.iter().zip(values) {
            *p.get_mut(i).ok_or_else(|| Error::InvalidInput(format!("active index {i} out of range")))? = v;
        }
        self.with_parameters(&p)
    }

    pub fn y_upper(&self, psi: f64) -> Result<f64> {
        Ok(class_fn(psi, self.n1, self.n2)? * shape_fn(psi, &self.coeffs_upper)?)
    }

    pub fn y_lower(&self, psi: f64) -> Result<f64> {
        Ok(class_fn(psi, self.n1, self.n2)? * shape_fn(psi, &self.coeffs_lower)?)
    }
}

/// Sampled airfoil surfaces on a shared chord grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AirfoilShape {
    pub psi: Vec<f64>,
    pub y_upper: Vec<f64>,
    pub y_lower: Vec<f64>,
}

impl AirfoilShape {
    /// Checks grid monotonicity, endpoints and surface ordering.
    pub fn validate(&self) -> Result<()> {
        let n = self.psi.len();
        if n < 2 || self.y_upper.len() != n || self.y_lower.len() != n {
            return Err(Error::Dimension("shape arrays must share a length of at least 2".into()));
        }
        if self.psi[0] != 0.0 || self.psi[n - 1] != 1.0 {
            return Err(Error::InvalidInput("chord grid must start at 0 and end at 1".into()));
        }
        if self.psi.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("chord grid must be strictly increasing".into()));
        }
        if let Some(i) = (0..n).find(|&i| self.y_upper[i] < self.y_lower[i] - 1e-14) {
            return Err(Error::InvalidInput(format!("upper surface below lower surface at psi = {}", self.psi[i])));
        }
        Ok(())
    }

    /// Location and value of maximum thickness on the sample grid.
    pub fn max_thickness(&self) -> (f64, f64) {
        self.psi
            .iter()
            .zip(self.y_upper.iter().zip(&self.y_lower))
            .map(|(&p, (u, l))| (p, u - l))
            .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    }

    /// Writes `# upper` and `# lower` blocks of `(psi, y)` rows.
    pub fn write_points(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::new();
        for (name, ys) in [("upper", &self.y_upper), ("lower", &self.y_lower)] {
            writeln!(s, "# {name}").unwrap();
            for (p, y) in self.psi.iter().zip(ys.iter()) {
                writeln!(s, "{p:.17e} {y:.17e}").unwrap();
            }
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Reads the two-block point-cloud format. Both surfaces must share the chord grid.
    pub fn read_points(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (upper, lower) = parse_surfaces(&text)?;
        let psi: Vec<f64> = upper.iter().map(|r| r.0).collect();
        if psi.len() != lower.len() || lower.iter().zip(&psi).any(|(r, p)| r.0 != *p) {
            return Err(Error::Format("upper and lower surfaces must share the chord grid".into()));
        }
        let shape = Self {
            psi,
            y_upper: upper.iter().map(|r| r.1).collect(),
            y_lower: lower.iter().map(|r| r.1).collect(),
        };
        shape.validate()?;
        Ok(shape)
    }
}

fn parse_surfaces(text: &str) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    let mut current: Option<&mut Vec<(f64, f64)>> = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(tag) = line.strip_prefix('#') {
            current = match tag.trim() {
                "upper" => Some(&mut upper),
                "lower" => Some(&mut lower),
                _ => current,
            };
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        let row = match (it.next(), it.next(), it.next()) {
            (Some(Ok(p)), Some(Ok(y)), None) => (p, y),
            _ => return Err(Error::Format(format!("line {}: expected two numeric columns", ln + 1))),
        };
        match current.as_deref_mut() {
            Some(v) => v.push(row),
            None => return Err(Error::Format(format!("line {}: data before a surface header", ln + 1))),
        }
    }
    Ok((upper, lower))
}

/// `psi^n1 (1 - psi)^n2`.
pub fn class_fn(psi: f64, n1: f64, n2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::Domain(format!("psi = {psi} outside [0, 1]")));
    }
    Ok(psi.powf(n1) * (1.0 - psi).powf(n2))
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Binomially weighted Bernstein polynomials of order `n` at `psi`.
pub fn bernstein_basis(psi: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| binomial(n, i) * psi.powi(i as i32) * (1.0 - psi).powi((n - i) as i32))
        .collect()
}

/// Shape-function basis `psi^i (1 - psi)^(n - i)`; the binomial weight lives in the coefficients.
pub fn shape_basis(psi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| psi.powi(i as i32) * (1.0 - psi).powi((n - i) as i32)).collect()
}

/// Coefficients of the unit shape function of order `n`.
pub fn unit_shape_coeffs(n: usize) -> Vec<f64> {
    (0..=n).map(|i| binomial(n, i)).collect()
}

/// Shape function with coefficients `coeffs` (order = len - 1).
pub fn shape_fn(psi: f64, coeffs: &[f64]) -> Result<f64> {
    if coeffs.is_empty() {
        return Err(Error::InvalidInput("shape function needs at least one coefficient".into()));
    }
    Ok(shape_basis(psi, coeffs.len() - 1).iter().zip(coeffs).map(|(b, a)| b * a).sum())
}

/// Cosine-clustered chord stations, dense at both edges.
pub fn cosine_spacing(m: usize) -> Vec<f64> {
    let mut psi: Vec<f64> = (0..m)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / (m - 1) as f64).cos()))
        .collect();
    psi[0] = 0.0;
    psi[m - 1] = 1.0;
    psi
}

/// Samples both surfaces at `m` cosine-clustered stations.
pub fn evaluate_airfoil(cst: &CstAirfoil, m: usize) -> Result<AirfoilShape> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {m}")));
    }
    let psi = cosine_spacing(m);
    let y_upper = psi.iter().map(|&p| cst.y_upper(p)).collect::<Result<Vec<_>>>()?;
    let y_lower = psi.iter().map(|&p| cst.y_lower(p)).collect::<Result<Vec<_>>>()?;
    Ok(AirfoilShape { psi, y_upper, y_lower })
}

/// Least-squares CST fit of order `order` using every supplied point.
/// Class exponents are fixed to the round-nose airfoil class.
pub fn fit_cst(points: &AirfoilShape, order: usize) -> Result<CstAirfoil> {
    fit_cst_with_class(points, order, 0.5, 1.0)
}

pub fn fit_cst_with_class(points: &AirfoilShape, order: usize, n1: f64, n2: f64) -> Result<CstAirfoil> {
    let n = points.psi.len();
    if points.y_upper.len() != n || points.y_lower.len() != n {
        return Err(Error::Dimension("shape arrays differ in length".into()));
    }
    let mut design = DMatrix::zeros(n, order + 1);
    for (r, &p) in points.psi.iter().enumerate() {
        let c = class_fn(p, n1, n2)?;
        for (i, b) in shape_basis(p, order).into_iter().enumerate() {
            design[(r, i)] = c * b;
        }
    }
    let solve = |ys: &[f64], surface: &str| -> Result<Vec<f64>> {
        let svd = design.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin <= smax * 1e-12 {
            return Err(Error::RankDeficient { surface: surface.into() });
        }
        let rhs = DVector::from_column_slice(ys);
        let x = svd.solve(&rhs, 0.0).map_err(|e| Error::Singular(e.to_string()))?;
        Ok(x.iter().copied().collect())
    };
    let upper = solve(&points.y_upper, "upper")?;
    let lower = solve(&points.y_lower, "lower")?;
    CstAirfoil::new(n1, n2, upper, lower)
}

/// Box spanned by `±fraction` around each active coefficient. Negative
/// coefficients get their bounds swapped so the interval stays ordered.
pub fn perturbation_bounds(base: &CstAirfoil, fraction: f64, active: &[usize]) -> Result<Bounds> {
    if active.is_empty() {
        return Err(Error::InvalidInput("active coefficient set is empty".into()));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("perturbation fraction {fraction} outside [0, 1)")));
    }
    let p = base.parameters();
    let mut lo = Vec::with_capacity(active.len());
    let mut hi = Vec::with_capacity(active.len());
    for &i in active {
        let a = *p.get(i).ok_or_else(|| Error::InvalidInput(format!("active index {i} out of range")))?;
        let (x, y) = (a * (1.0 - fraction), a * (1.0 + fraction));
        lo.push(x.min(y));
        hi.push(x.max(y));
    }
    Bounds::new(lo, hi)
}

/// Latin-hypercube family of active-coefficient vectors within `±fraction`.
pub fn perturb_family(
    base: &CstAirfoil,
    fraction: f64,
    count: usize,
    active: &[usize],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::InvalidInput("family size must be at least 1".into()));
    }
    let bounds = perturbation_bounds(base, fraction, active)?;
    Ok(latin_hypercube(&bounds, count, seed))
}

/// CSV with a header naming the active coefficient indices (`a<i>`).
pub fn write_family_csv(path: impl AsRef<Path>, active: &[usize], family: &[Vec<f64>]) -> Result<()> {
    let mut s = active.iter().map(|i| format!("a{i}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in family {
        s.push_str(&row.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_family_csv(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty family file".into()))?;
    let active = header
        .split(',')
        .map(|h| {
            h.trim()
                .strip_prefix('a')
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad header column `{h}`")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let rows = lines
        .map(|l| {
            let row = l
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != active.len() {
                return Err(Error::Format(format!("row has {} columns, header {}", row.len(), active.len())));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((active, rows))
}
