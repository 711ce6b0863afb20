//! ROM database: persistence, nearest anchor and parametric interpolation.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::deim::DeimData;
use crate::error::{Error, Result};
use crate::euler::{read_f64s, read_line, write_f64s, N_OBS};
use crate::lift::{read_u64s, ConstraintForm, ConstraintKernel};
use crate::pod::BlockBasis;
use crate::rom::{min_eigenvalue, Provenance, RomInstance};
use crate::spd::SpdAnchor;

#[derive(Debug, Clone, PartialEq)]
pub struct RomDatabase {
    /// Training parameters, one row per instance.
    pub thetas: Vec<Vec<f64>>,
    pub instances: Vec<RomInstance>,
    /// Reduced training snapshots, used as solver initial guesses.
    pub reduced: Vec<DVector<f64>>,
    pub basis: BlockBasis,
    pub deim: DeimData,
    pub std: Vec<f64>,
    /// Free-form JSON written by the builder (problem setup).
    pub meta: String,
}

/// Sample standard deviation per column.
pub fn column_std(thetas: &[Vec<f64>]) -> Vec<f64> {
    let m = thetas.len();
    let d = thetas.first().map_or(0, |t| t.len());
    (0..d)
        .map(|j| {
            if m < 2 {
                return 0.0;
            }
            let mean = thetas.iter().map(|t| t[j]).sum::<f64>() / m as f64;
            (thetas.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
        })
        .collect()
}

impl RomDatabase {
    pub fn new(
        instances: Vec<RomInstance>,
        reduced: Vec<DVector<f64>>,
        basis: BlockBasis,
        deim: DeimData,
        meta: String,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::InvalidInput("empty ROM database".into()));
        }
        let k = basis.k();
        let d = instances[0].theta.len();
        for (i, inst) in instances.iter().enumerate() {
            if inst.b.shape() != (k, k) || inst.f.len() != k || inst.theta.len() != d {
                return Err(Error::Dimension(format!("instance {i} does not match k = {k}, d = {d}")));
            }
        }
        if reduced.len() != instances.len() || reduced.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("reduced snapshots do not match instances".into()));
        }
        let thetas: Vec<Vec<f64>> = instances.iter().map(|i| i.theta.clone()).collect();
        for i in 0..thetas.len() {
            for j in 0..i {
                if thetas[i] == thetas[j] {
                    return Err(Error::InvalidInput(format!("duplicate parameter rows {j} and {i}")));
                }
            }
        }
        let std = column_std(&thetas);
        for (j, s) in std.iter().enumerate() {
            if !(*s > 0.0) {
                log::warn!("parameter dimension {j} has zero spread; dropped from the distance metric");
            }
        }
        Ok(Self { thetas, instances, reduced, basis, deim, std, meta })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    fn check_query(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!("query has {} parameters, database {}", theta.len(), self.dim())));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Standardized coordinate differences `(a - b) / std`, zero-spread dimensions dropped.
    fn standardized(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .zip(&self.std)
            .filter(|(_, s)| **s > 0.0)
            .map(|((x, y), s)| (x - y) / s)
            .collect()
    }

    fn distance2(&self, a: &[f64], b: &[f64]) -> f64 {
        self.standardized(a, b).iter().map(|x| x * x).sum()
    }

    /// Training indices sorted by standardized distance, ties by index.
    fn ranked(&self, theta: &[f64]) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self.thetas.iter().enumerate().map(|(i, t)| (i, self.distance2(theta, t))).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn nearest_anchor(&self, theta: &[f64]) -> Result<usize> {
        self.check_query(theta)?;
        Ok(self.ranked(theta)[0].0)
    }

    /// Neighbor indices and the weights whose combination evaluates the
    /// least-squares polynomial fit at `theta`.
    pub fn stencil(&self, theta: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
        self.check_query(theta)?;
        let d_eff = self.std.iter().filter(|s| **s > 0.0).count();
        let n_quad = (d_eff + 1) * (d_eff + 2) / 2;
        let m = self.len().min(2 * n_quad);
        let ranked = self.ranked(theta);
        let nbrs: Vec<usize> = ranked[..m].iter().map(|r| r.0).collect();
        let degree = if m >= n_quad {
            2
        } else if m > d_eff {
            log::warn!("{m} neighbors for {n_quad} quadratic coefficients; using a linear fit");
            1
        } else {
            log::warn!("{m} neighbors cannot support a linear fit; using the nearest instance");
            return Ok((vec![nbrs[0]], vec![1.0]));
        };
        let rows: Vec<Vec<f64>> = nbrs.iter().map(|&i| monomials(&self.standardized(&self.thetas[i], theta), degree)).collect();
        let p = rows[0].len();
        let v = DMatrix::from_fn(m, p, |r, c| rows[r][c]);
        let pinv = v.pseudo_inverse(1e-12).map_err(|e| Error::Singular(e.to_string()))?;
        let w: Vec<f64> = (0..m).map(|j| pinv[(0, j)]).collect();
        Ok((nbrs, w))
    }

    /// Interpolated ROM at `theta`: B on the SPD tangent plane at the nearest
    /// anchor, f in Euclidean space, both with the same stencil.
    pub fn interpolate(&self, theta: &[f64]) -> Result<RomInstance> {
        let (nbrs, w) = self.stencil(theta)?;
        if let [only] = nbrs[..] {
            let inst = &self.instances[only];
            return Ok(RomInstance { theta: theta.to_vec(), provenance: Provenance::Interpolated, ..inst.clone() });
        }
        let anchor_idx = self.nearest_anchor(theta)?;
        let anchor = SpdAnchor::new(&self.instances[anchor_idx].b)?;
        let k = self.k();
        let mut t = DMatrix::zeros(k, k);
        let mut f = DVector::zeros(k);
        for (&i, &wi) in nbrs.iter().zip(&w) {
            if wi == 0.0 {
                continue;
            }
            let inst = &self.instances[i];
            if i != anchor_idx {
                t += anchor.log(&inst.b)? * wi;
            }
            f.axpy(wi, &inst.f, 1.0);
        }
        let b = anchor.exp(&t)?;
        Ok(RomInstance { b, f, theta: theta.to_vec(), provenance: Provenance::Interpolated })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let (m, d, k, n) = (self.len(), self.dim(), self.k(), self.basis.n);
        writeln!(w, "liftrom-db v1 {m} {d} {k} {n}")?;
        for t in &self.thetas {
            write_f64s(w, t)?;
        }
        write_f64s(w, &self.std)?;
        for inst in &self.instances {
            let tag: u64 = match inst.provenance {
                Provenance::Snapshot => 0,
                Provenance::Interpolated => 1,
            };
            w.write_all(&tag.to_le_bytes())?;
            write_f64s(w, inst.b.as_slice())?;
            write_f64s(w, inst.f.as_slice())?;
        }
        for r in &self.reduced {
            write_f64s(w, r.as_slice())?;
        }
        self.basis.write_to(w)?;
        let form: u64 = match self.deim.kernel.form {
            ConstraintForm::Quotient => 0,
            ConstraintForm::CrossMultiplied => 1,
        };
        w.write_all(&form.to_le_bytes())?;
        write_f64s(w, &[self.deim.kernel.gamma])?;
        write_f64s(w, &self.deim.kernel.scales)?;
        w.write_all(&(self.deim.sets.len() as u64).to_le_bytes())?;
        for s in &self.deim.sets {
            w.write_all(&(s.indices.len() as u64).to_le_bytes())?;
            for &i in &s.indices {
                w.write_all(&(i as u64).to_le_bytes())?;
            }
            write_f64s(w, s.projector.as_slice())?;
            write_f64s(w, &[s.condition])?;
        }
        let meta = self.meta.as_bytes();
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(meta)?;
        w.write_all(b"end\n")?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let header = read_line(r)?;
        let bad = || Error::Format(format!("bad database header `{header}`"));
        let rest = header.strip_prefix("liftrom-db v1 ").ok_or_else(bad)?;
        let nums: Vec<usize> = rest.split_whitespace().map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let [m, d, k, n]: [usize; 4] = nums.try_into().map_err(|_| bad())?;
        if m == 0 || m > 1 << 20 || d > 1 << 10 || k > 1 << 14 {
            return Err(bad());
        }
        let thetas: Vec<Vec<f64>> = (0..m).map(|_| read_f64s(r, d)).collect::<Result<_>>()?;
        let std = read_f64s(r, d)?;
        let mut instances = Vec::with_capacity(m);
        for theta in &thetas {
            let provenance = match read_u64s(r, 1)?[0] {
                0 => Provenance::Snapshot,
                1 => Provenance::Interpolated,
                t => return Err(Error::Format(format!("unknown provenance tag {t}"))),
            };
            let b = DMatrix::from_vec(k, k, read_f64s(r, k * k)?);
            let f = DVector::from_vec(read_f64s(r, k)?);
            instances.push(RomInstance { b, f, theta: theta.clone(), provenance });
        }
        let reduced = (0..m).map(|_| Ok(DVector::from_vec(read_f64s(r, k)?))).collect::<Result<Vec<_>>>()?;
        let basis = BlockBasis::read_from(r)?;
        if basis.n != n || basis.k() != k {
            return Err(Error::Format("basis section disagrees with database header".into()));
        }
        let form = match read_u64s(r, 1)?[0] {
            0 => ConstraintForm::Quotient,
            1 => ConstraintForm::CrossMultiplied,
            t => return Err(Error::Format(format!("unknown constraint form {t}"))),
        };
        let gamma = read_f64s(r, 1)?[0];
        let scales: [f64; N_OBS] = read_f64s(r, N_OBS)?.try_into().unwrap();
        let kernel = ConstraintKernel { form, gamma, scales };
        let n_sets = read_u64s(r, 1)?[0];
        if n_sets > 4 {
            return Err(Error::Format(format!("{n_sets} DEIM sets")));
        }
        let ks = basis.ks();
        let mut stored = Vec::with_capacity(n_sets);
        for j in 0..n_sets {
            let q = read_u64s(r, 1)?[0];
            if q > n {
                return Err(Error::Format("implausible DEIM size".into()));
            }
            let idx = read_u64s(r, q)?;
            let proj = DMatrix::from_vec(ks[4 + j], q, read_f64s(r, ks[4 + j] * q)?);
            let cond = read_f64s(r, 1)?[0];
            stored.push((idx, proj, cond));
        }
        let deim = DeimData::restore(&basis, kernel, stored)?;
        let len = read_u64s(r, 1)?[0];
        if len > 1 << 24 {
            return Err(Error::Format("implausible metadata length".into()));
        }
        let mut meta = vec![0u8; len];
        r.read_exact(&mut meta).map_err(|_| Error::Format("truncated metadata".into()))?;
        let meta = String::from_utf8(meta).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let mut end = [0u8; 4];
        r.read_exact(&mut end).map_err(|_| Error::Format("missing end marker".into()))?;
        if &end != b"end\n" {
            return Err(Error::Format("missing end marker".into()));
        }
        Ok(Self { thetas, instances, reduced, basis, deim, std, meta })
    }

    /// Write the binary database and a JSON index next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.index())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn index(&self) -> DbIndex {
        DbIndex {
            format: "liftrom-db v1".into(),
            count: self.len(),
            dim: self.dim(),
            k: self.k(),
            ks: self.basis.ks().to_vec(),
            cells: self.basis.n,
            thetas: self.thetas.clone(),
            std: self.std.clone(),
            min_eigenvalues: self.instances.iter().map(|i| min_eigenvalue(&i.b)).collect(),
            deim_points: self.deim.sets.iter().map(|s| s.indices.len()).collect(),
            form: self.deim.kernel.form,
        }
    }
}

/// Human-readable summary written beside the binary database.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DbIndex {
    pub format: String,
    pub count: usize,
    pub dim: usize,
    pub k: usize,
    pub ks: Vec<usize>,
    pub cells: usize,
    pub thetas: Vec<Vec<f64>>,
    pub std: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
    pub deim_points: Vec<usize>,
    pub form: ConstraintForm,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `1, u_a, u_a u_b (a <= b)` up to the given degree.
fn monomials(u: &[f64], degree: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    if degree >= 1 {
        out.extend_from_slice(u);
    }
    if degree >= 2 {
        for a in 0..u.len() {
            for b in a..u.len() {
                out.push(u[a] * u[b]);
            }
        }
    }
    out
}
