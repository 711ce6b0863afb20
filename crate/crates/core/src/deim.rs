//! DEIM point selection and hyper-reduced closure constraints.
//!
//! Constraint `j` is sampled at the points selected from the basis of its
//! nonlinear observable `y_{5+j}` and projected with `Phi^T X (P^T X)^{-1}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::euler::N_OBS;
use crate::lift::{ConstraintForm, ConstraintKernel, N_CON};
use crate::pod::BlockBasis;

/// Greedy DEIM indices for the columns of `x`, in selection order.
pub fn deim_select(x: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, q) = x.shape();
    if q == 0 || q > n {
        return Err(Error::InvalidInput(format!("DEIM on a {n} x {q} basis")));
    }
    let mut idx = vec![x.column(0).iamax()];
    for l in 1..q {
        let p = DMatrix::from_fn(l, l, |r, c| x[(idx[r], c)]);
        let rhs = DVector::from_fn(l, |r, _| x[(idx[r], l)]);
        let c = p
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular(format!("DEIM interpolation matrix singular at step {l}")))?;
        let resid = x.column(l) - x.columns(0, l) * c;
        let next = resid.iamax();
        if resid[next].abs() <= 1e-14 * x.column(l).amax() || idx.contains(&next) {
            return Err(Error::Singular(format!("DEIM basis is rank deficient at column {l}")));
        }
        idx.push(next);
    }
    Ok(idx)
}

/// `X (P^T X)^{-1} P^T f`: the DEIM reconstruction of `f`.
pub fn deim_reconstruct(x: &DMatrix<f64>, idx: &[usize], f: &DVector<f64>) -> Result<DVector<f64>> {
    let p = DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)]);
    let pf = DVector::from_fn(idx.len(), |r, _| f[idx[r]]);
    let c = p.lu().solve(&pf).ok_or_else(|| Error::Singular("P^T X is singular".into()))?;
    Ok(x * c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeimSet {
    pub indices: Vec<usize>,
    /// `Phi_t^T X (P^T X)^{-1}` with `t` the constraint's nonlinear observable.
    pub projector: DMatrix<f64>,
    /// `D_k Phi_k(indices, :)` for every observable `k`.
    pub rows: Vec<DMatrix<f64>>,
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeimData {
    pub kernel: ConstraintKernel,
    pub sets: Vec<DeimSet>,
    pub offsets: [usize; N_OBS + 1],
}

impl DeimData {
    /// No constraints: the reduced problem is plain least squares.
    pub fn empty(basis: &BlockBasis, kernel: ConstraintKernel) -> Self {
        Self { kernel, sets: Vec::new(), offsets: basis.offsets() }
    }

    /// DEIM for all four constraints with `q_j` defaulting to `k_{5+j}`.
    pub fn build(basis: &BlockBasis, kernel: ConstraintKernel, q: Option<[usize; N_CON]>) -> Result<Self> {
        let ks = basis.ks();
        let q = q.unwrap_or(std::array::from_fn(|j| ks[4 + j]));
        let sets = (0..N_CON)
            .map(|j| {
                let phi_t = &basis.bases[4 + j].phi;
                if q[j] == 0 || q[j] > phi_t.ncols() {
                    return Err(Error::InvalidInput(format!(
                        "q = {} for constraint {} with {} modes",
                        q[j],
                        j + 1,
                        phi_t.ncols()
                    )));
                }
                let x = phi_t.columns(0, q[j]).into_owned();
                Self::build_set(basis, phi_t, &x)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernel, sets, offsets: basis.offsets() })
    }

    fn build_set(basis: &BlockBasis, phi_t: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DeimSet> {
        let indices = deim_select(x)?;
        let q = indices.len();
        let ptx = DMatrix::from_fn(q, q, |r, c| x[(indices[r], c)]);
        let sv = ptx.clone().singular_values();
        let condition = sv.max() / sv.min();
        log::debug!("DEIM P^T X condition number {condition:.3e}");
        let inv = ptx.try_inverse().ok_or_else(|| Error::Singular("P^T X is singular".into()))?;
        let projector = phi_t.transpose() * x * inv;
        let rows = Self::sampled_rows(basis, &indices);
        Ok(DeimSet { indices, projector, rows, condition })
    }

    fn sampled_rows(basis: &BlockBasis, indices: &[usize]) -> Vec<DMatrix<f64>> {
        (0..N_OBS)
            .map(|k| {
                let phi = &basis.bases[k].phi;
                DMatrix::from_fn(indices.len(), phi.ncols(), |r, c| phi[(indices[r], c)] * basis.scales[k])
            })
            .collect()
    }

    /// Rebuild from stored indices and projectors (one per constraint).
    pub fn restore(
        basis: &BlockBasis,
        kernel: ConstraintKernel,
        stored: Vec<(Vec<usize>, DMatrix<f64>, f64)>,
    ) -> Result<Self> {
        let ks = basis.ks();
        let sets = stored
            .into_iter()
            .enumerate()
            .map(|(j, (indices, projector, condition))| {
                if j >= N_CON
                    || indices.iter().any(|&i| i >= basis.n)
                    || projector.shape() != (ks[4 + j], indices.len())
                {
                    return Err(Error::Format(format!("inconsistent DEIM payload for constraint {}", j + 1)));
                }
                let rows = Self::sampled_rows(basis, &indices);
                Ok(DeimSet { indices, projector, rows, condition })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernel, sets, offsets: basis.offsets() })
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Total number of reduced constraint equations.
    pub fn len(&self) -> usize {
        self.sets.iter().map(|s| s.projector.nrows()).sum()
    }

    fn sampled(&self, set: &DeimSet, yt: &DVector<f64>) -> Vec<[f64; N_OBS]> {
        let q = set.indices.len();
        let mut out = vec![[0.0; N_OBS]; q];
        for k in 0..N_OBS {
            let (o, len) = (self.offsets[k], self.offsets[k + 1] - self.offsets[k]);
            let vals = &set.rows[k] * yt.rows(o, len);
            for r in 0..q {
                out[r][k] = vals[r];
            }
        }
        out
    }

    fn point_kernel(&self, y: &[f64; N_OBS]) -> ConstraintKernel {
        if self.kernel.form == ConstraintForm::Quotient && !self.kernel.quotient_safe(y) {
            self.kernel.with_form(ConstraintForm::CrossMultiplied)
        } else {
            self.kernel
        }
    }

    /// Reduced constraint values, all four constraints stacked.
    pub fn eval(&self, yt: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        let mut o = 0;
        for (j, set) in self.sets.iter().enumerate() {
            let pts = self.sampled(set, yt);
            let h = DVector::from_iterator(pts.len(), pts.iter().map(|y| self.point_kernel(y).eval(y)[j]));
            let ht = &set.projector * h;
            out.rows_mut(o, ht.len()).copy_from(&ht);
            o += ht.len();
        }
        out
    }

    /// Values and Jacobian with respect to the reduced vector.
    pub fn eval_with_jacobian(&self, yt: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.offsets[N_OBS];
        let mut val = DVector::zeros(self.len());
        let mut jac = DMatrix::zeros(self.len(), k);
        let mut o = 0;
        for (j, set) in self.sets.iter().enumerate() {
            let pts = self.sampled(set, yt);
            let q = pts.len();
            let mut h = DVector::zeros(q);
            // dh(point) / d(yt), one row per sampled point.
            let mut dh = DMatrix::zeros(q, k);
            for (r, y) in pts.iter().enumerate() {
                let (hv, hj) = self.point_kernel(y).eval_with_jacobian(y);
                h[r] = hv[j];
                for kk in 0..N_OBS {
                    let d = hj[j][kk];
                    if d != 0.0 {
                        let (off, len) = (self.offsets[kk], self.offsets[kk + 1] - self.offsets[kk]);
                        for c in 0..len {
                            dh[(r, off + c)] += d * set.rows[kk][(r, c)];
                        }
                    }
                }
            }
            let m = set.projector.nrows();
            val.rows_mut(o, m).copy_from(&(&set.projector * h));
            jac.view_mut((o, 0), (m, k)).copy_from(&(&set.projector * dh));
            o += m;
        }
        (val, jac)
    }

    /// Full-order reference: `Phi_t^T h_j(Phi yt)` over all N cells.
    pub fn full_order(&self, basis: &BlockBasis, yt: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let y = basis.lift(yt)?;
        let n = y.n_cells();
        let mut h: Vec<DVector<f64>> = (0..N_CON).map(|_| DVector::zeros(n)).collect();
        for i in 0..n {
            let yi: [f64; N_OBS] = std::array::from_fn(|k| y.data[(i, k)]);
            let hv = self.point_kernel(&yi).eval(&yi);
            for j in 0..N_CON {
                h[j][i] = hv[j];
            }
        }
        Ok((0..self.sets.len()).map(|j| basis.bases[4 + j].phi.transpose() * &h[j]).collect())
    }

    /// Split a stacked reduced-constraint vector back into its four constraints.
    pub fn split(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut o = 0;
        self.sets
            .iter()
            .map(|s| {
                let m = s.projector.nrows();
                let part = v.rows(o, m).into_owned();
                o += m;
                part
            })
            .collect()
    }
}
