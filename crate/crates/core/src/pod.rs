//! Per-observable POD bases and the block-diagonal basis over all eight.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::euler::{read_f64s, read_line, write_f64s, Observables, N_OBS};
use crate::lift::read_u64s;

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `N x k`, orthonormal columns.
    pub phi: DMatrix<f64>,
    /// All singular values of the snapshot matrix, descending.
    pub sigma: Vec<f64>,
    pub energy_target: f64,
}

impl PodBasis {
    pub fn k(&self) -> usize {
        self.phi.ncols()
    }
}

/// Number of modes whose cumulative singular-value fraction first reaches `target`.
/// A target of 1 keeps the numerical rank.
pub fn energy_rank(sigma: &[f64], target: f64, rows: usize) -> usize {
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank_tol = smax * f64::EPSILON * rows.max(sigma.len()) as f64;
    let rank = sigma.iter().filter(|&&s| s > rank_tol).count();
    if target >= 1.0 {
        return rank;
    }
    let total: f64 = sigma.iter().sum();
    let mut acc = 0.0;
    for (j, s) in sigma.iter().enumerate() {
        acc += s;
        if acc / total >= target {
            return (j + 1).min(rank.max(1));
        }
    }
    rank
}

/// Thin-SVD POD of an `N x M` snapshot matrix (one observable across parameters).
pub fn pod(snapshots: &DMatrix<f64>, energy_target: f64) -> Result<PodBasis> {
    if !(energy_target > 0.0 && energy_target <= 1.0) {
        return Err(Error::InvalidInput(format!("energy target {energy_target} outside (0, 1]")));
    }
    if snapshots.ncols() == 0 || snapshots.nrows() == 0 {
        return Err(Error::InvalidInput("empty snapshot matrix".into()));
    }
    if snapshots.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("snapshot matrix is identically zero".into()));
    }
    let svd = snapshots.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Singular("SVD did not return left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&j| svd.singular_values[j]).collect();
    let k = energy_rank(&sigma, energy_target, snapshots.nrows());
    let mut phi = DMatrix::zeros(snapshots.nrows(), k);
    for (c, &j) in order.iter().take(k).enumerate() {
        let mut col = u.column(j).into_owned();
        let amax = col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12 * amax) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        phi.set_column(c, &col);
    }
    Ok(PodBasis { phi, sigma, energy_target })
}

/// `blkdiag(Phi_1, ..., Phi_8)` acting on observables divided by `scales`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBasis {
    pub n: usize,
    pub bases: Vec<PodBasis>,
    pub scales: [f64; N_OBS],
}

impl BlockBasis {
    pub fn new(bases: Vec<PodBasis>, scales: [f64; N_OBS]) -> Result<Self> {
        if bases.len() != N_OBS {
            return Err(Error::InvalidInput(format!("{} observable bases, expected {N_OBS}", bases.len())));
        }
        let n = bases[0].phi.nrows();
        if bases.iter().any(|b| b.phi.nrows() != n) {
            return Err(Error::Dimension("observable bases disagree on N".into()));
        }
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput("observable scales must be positive".into()));
        }
        Ok(Self { n, bases, scales })
    }

    /// Per-observable POD of a training set (each observable scaled first).
    pub fn from_snapshots(snaps: &[&Observables], scales: [f64; N_OBS], energy_target: f64) -> Result<Self> {
        if snaps.is_empty() {
            return Err(Error::InvalidInput("no snapshots".into()));
        }
        let n = snaps[0].n_cells();
        let bases = (0..N_OBS)
            .map(|k| {
                let mat = DMatrix::from_fn(n, snaps.len(), |i, j| snaps[j].y(k)[i] / scales[k]);
                pod(&mat, energy_target)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bases, scales)
    }

    pub fn ks(&self) -> [usize; N_OBS] {
        std::array::from_fn(|i| self.bases[i].k())
    }

    pub fn k(&self) -> usize {
        self.ks().iter().sum()
    }

    /// Start of each observable's block in the reduced vector; `offsets()[8] == k`.
    pub fn offsets(&self) -> [usize; N_OBS + 1] {
        let ks = self.ks();
        let mut o = [0; N_OBS + 1];
        for i in 0..N_OBS {
            o[i + 1] = o[i] + ks[i];
        }
        o
    }

    pub fn reduce(&self, y: &Observables) -> Result<DVector<f64>> {
        if y.n_cells() != self.n {
            return Err(Error::Dimension(format!("observables on {} cells, basis has N = {}", y.n_cells(), self.n)));
        }
        let off = self.offsets();
        let mut out = DVector::zeros(self.k());
        for (i, b) in self.bases.iter().enumerate() {
            let yi = DVector::from_column_slice(y.y(i)) / self.scales[i];
            out.rows_mut(off[i], b.k()).copy_from(&(b.phi.transpose() * yi));
        }
        Ok(out)
    }

    pub fn lift(&self, yt: &DVector<f64>) -> Result<Observables> {
        if yt.len() != self.k() {
            return Err(Error::Dimension(format!("reduced vector of length {}, expected {}", yt.len(), self.k())));
        }
        let off = self.offsets();
        let mut y = Observables::zeros(self.n);
        for (i, b) in self.bases.iter().enumerate() {
            let col = &b.phi * yt.rows(off[i], b.k()) * self.scales[i];
            y.y_mut(i).copy_from_slice(col.as_slice());
        }
        Ok(y)
    }

    /// Columns of `D Phi` for observable `i` (physical units per unit reduced coordinate).
    pub fn scaled_block(&self, i: usize) -> DMatrix<f64> {
        &self.bases[i].phi * self.scales[i]
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let ks = self.ks();
        let ks_txt: Vec<String> = ks.iter().map(|k| k.to_string()).collect();
        writeln!(w, "liftrom-basis v1 {} {}", self.n, ks_txt.join(" "))?;
        for b in &self.bases {
            write_f64s(w, b.phi.as_slice())?;
        }
        for b in &self.bases {
            w.write_all(&(b.sigma.len() as u64).to_le_bytes())?;
            write_f64s(w, &b.sigma)?;
        }
        write_f64s(w, &self.scales)?;
        write_f64s(w, &self.bases.iter().map(|b| b.energy_target).collect::<Vec<_>>())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let header = read_line(r)?;
        let bad = || Error::Format(format!("bad basis header `{header}`"));
        let rest = header.strip_prefix("liftrom-basis v1").ok_or_else(bad)?;
        let nums: Vec<usize> = rest.split_whitespace().map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if nums.len() != 1 + N_OBS {
            return Err(bad());
        }
        let n = nums[0];
        let phis = (0..N_OBS)
            .map(|i| Ok(DMatrix::from_vec(n, nums[1 + i], read_f64s(r, n * nums[1 + i])?)))
            .collect::<Result<Vec<_>>>()?;
        let mut sigmas = Vec::new();
        for _ in 0..N_OBS {
            let len = read_u64s(r, 1)?[0];
            if len > 1 << 24 {
                return Err(Error::Format("implausible singular-value count".into()));
            }
            sigmas.push(read_f64s(r, len)?);
        }
        let scales: [f64; N_OBS] = read_f64s(r, N_OBS)?.try_into().unwrap();
        let targets = read_f64s(r, N_OBS)?;
        let bases = phis
            .into_iter()
            .zip(sigmas)
            .zip(targets)
            .map(|((phi, sigma), energy_target)| PodBasis { phi, sigma, energy_target })
            .collect();
        Self::new(bases, scales)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
