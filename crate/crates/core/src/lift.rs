//! Lifted linear system `A y = f` for the Euler equations and the closure
//! constraints `h_1..h_4` tying the eight observables together.

use std::io::{Read, Write};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::path::Path;

use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{read_f64s, read_line, write_f64s, Freestream, Observables, GUARD_EPS, N_OBS};
use crate::fv::{csr_mul, BoundaryValues, ClosureEntry, GradientOperators};
use crate::mesh::WALL;

pub const N_EQ: usize = 4;
pub const N_CON: usize = 4;

/// `(row block, observable, use Gx)` for every nonzero block of `A`.
pub const BLOCKS: [(usize, usize, bool); 10] = [
    (0, 0, true),
    (0, 1, false),
    (1, 2, false),
    (1, 3, true),
    (1, 4, true),
    (2, 2, true),
    (2, 3, false),
    (2, 5, false),
    (3, 6, true),
    (3, 7, false),
];

#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub n: usize,
    /// `4N x 8N`, physical units.
    pub a: CsrMatrix<f64>,
    /// `4N`; empty until extracted.
    pub f: Vec<f64>,
    /// Boundary faces not folded into `A` (the farfield).
    pub closure: Vec<ClosureEntry>,
    pub theta: Vec<f64>,
}

/// Wall faces are folded into `A` by owner extrapolation; the remaining
/// boundary faces stay as closure descriptors.
pub fn assemble_lifted(ops: &GradientOperators, theta: &[f64]) -> Result<LiftedSystem> {
    let ops = if ops.patch_id(WALL).is_some() { ops.with_extrapolated(WALL)? } else { ops.clone() };
    let n = ops.n_cells();
    if ops.gx.ncols() != n || ops.gy.nrows() != n || ops.gy.ncols() != n {
        return Err(Error::Dimension("gradient operators are not square and equal-sized".into()));
    }
    let mut coo = CooMatrix::new(N_EQ * n, N_OBS * n);
    for &(b, k, use_x) in &BLOCKS {
        let g = if use_x { &ops.gx } else { &ops.gy };
        for (r, c, &v) in g.triplet_iter() {
            coo.push(b * n + r, k * n + c, v);
        }
    }
    Ok(LiftedSystem { n, a: CsrMatrix::from(&coo), f: Vec::new(), closure: ops.closure, theta: theta.to_vec() })
}

impl LiftedSystem {
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != N_OBS * self.n {
            return Err(Error::Dimension(format!("y of length {} for N = {}", y.len(), self.n)));
        }
        let mut out = vec![0.0; N_EQ * self.n];
        csr_mul(&self.a, y, &mut out);
        Ok(out)
    }

    pub fn residual(&self, y: &[f64]) -> Result<Vec<f64>> {
        if self.f.len() != N_EQ * self.n {
            return Err(Error::InvalidInput("right-hand side has not been formed".into()));
        }
        let mut r = self.apply(y)?;
        r.iter_mut().zip(&self.f).for_each(|(a, b)| *a -= b);
        Ok(r)
    }

    /// `f = -b_a` from prescribed values of every observable on the closure faces.
    pub fn closure_rhs(&self, face_values: &[BoundaryValues; N_OBS]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut f = vec![0.0; N_EQ * n];
        for e in &self.closure {
            for &(b, k, use_x) in &BLOCKS {
                let v = *face_values[k].get(&e.face).ok_or_else(|| Error::MissingBoundaryValue {
                    patch: format!("closure patch {}", e.patch),
                    face: e.face,
                })?;
                f[b * n + e.cell] -= if use_x { e.cx } else { e.cy } * v;
            }
        }
        Ok(f)
    }

    /// Closure right-hand side with freestream observables on every closure face.
    pub fn freestream_rhs(&self, fs: &Freestream) -> Result<Vec<f64>> {
        let y = crate::euler::state_to_observables(&fs.state(1), fs);
        let vals: [BoundaryValues; N_OBS] =
            std::array::from_fn(|k| self.closure.iter().map(|e| (e.face, y.y(k)[0])).collect());
        self.closure_rhs(&vals)
    }

    /// Row-block weights that bring each conservation law to O(1).
    pub fn row_weights(fs: &Freestream) -> [f64; N_EQ] {
        let s = fs.observable_scales();
        [1.0 / s[0], 1.0 / s[2], 1.0 / s[2], 1.0 / s[6]]
    }
}

/// Snapshot-exact right-hand side `f = A y`.
pub fn extract_rhs(sys: &LiftedSystem, y: &Observables) -> Result<Vec<f64>> {
    if y.n_cells() != sys.n {
        return Err(Error::Dimension(format!("observables on {} cells for N = {}", y.n_cells(), sys.n)));
    }
    sys.apply(y.stacked())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintForm {
    Quotient,
    #[default]
    CrossMultiplied,
}

/// Scalar type the constraint kernel is generic over: plain `f64` or a dual
/// number carrying derivatives with respect to the eight observables.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(x: f64) -> Self;
    fn val(&self) -> f64;
}

impl Scalar for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn val(&self) -> f64 {
        *self
    }
}

/// Forward-mode dual number over the eight observables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; N_OBS],
}

impl Dual {
    pub fn var(v: f64, k: usize) -> Self {
        let mut d = [0.0; N_OBS];
        d[k] = 1.0;
        Self { v, d }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: std::array::from_fn(|k| self.d[k] + o.d[k]) }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d: std::array::from_fn(|k| self.d[k] - o.d[k]) }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self { v: self.v * o.v, d: std::array::from_fn(|k| self.d[k] * o.v + self.v * o.d[k]) }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        Self { v: q, d: std::array::from_fn(|k| (self.d[k] - q * o.d[k]) * inv) }
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d: self.d.map(|x| -x) }
    }
}

impl Scalar for Dual {
    fn cst(x: f64) -> Self {
        Self { v: x, d: [0.0; N_OBS] }
    }
    fn val(&self) -> f64 {
        self.v
    }
}

/// Pointwise constraint evaluation on physical observables at one cell,
/// normalized by freestream scale products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintKernel {
    pub form: ConstraintForm,
    pub gamma: f64,
    pub scales: [f64; N_OBS],
}

impl ConstraintKernel {
    pub fn new(fs: &Freestream, form: ConstraintForm) -> Self {
        Self { form, gamma: fs.gamma, scales: fs.observable_scales() }
    }

    pub fn with_form(&self, form: ConstraintForm) -> Self {
        Self { form, ..*self }
    }

    /// True when the quotient form's denominators are all above the guard floor.
    pub fn quotient_safe(&self, y: &[f64; N_OBS]) -> bool {
        let s = &self.scales;
        y[0].abs() > GUARD_EPS * s[0] && y[1].abs() > GUARD_EPS * s[1] && y[2].abs() > GUARD_EPS * s[2]
    }

    pub fn eval<T: Scalar>(&self, y: &[T; N_OBS]) -> [T; N_CON] {
        let s = &self.scales;
        let c = T::cst;
        let [y1, y2, y3, y4, y5, y6, y7, y8] = *y;
        let gg = c(self.gamma / (self.gamma - 1.0));
        match self.form {
            ConstraintForm::CrossMultiplied => {
                let m = y5 + y6;
                let q2 = y1 * y1 + y2 * y2;
                let hh = m * (c(0.5) * m + gg * y4);
                [
                    (y5 * y2 - y1 * y3) / c(s[4] * s[1]),
                    (y6 * y1 - y2 * y3) / c(s[5] * s[0]),
                    (q2 * y7 - y1 * hh) / c(s[0] * s[0] * s[6]),
                    (q2 * y8 - y2 * hh) / c(s[1] * s[1] * s[7]),
                ]
            }
            ConstraintForm::Quotient => {
                let u = y3 / y2;
                let v = y3 / y1;
                let rho = y1 * y2 / y3;
                let e = c(0.5) * (u * u + v * v) + y4 / (c(self.gamma - 1.0) * rho);
                let h = e + y4 * y3 / (y1 * y2);
                [
                    (y5 - y1 * y3 / y2) / c(s[4]),
                    (y6 - y2 * y3 / y1) / c(s[5]),
                    (y7 - y1 * h) / c(s[6]),
                    (y8 - y2 * h) / c(s[7]),
                ]
            }
        }
    }

    /// Values and `dh_j / dy_k` at one cell.
    pub fn eval_with_jacobian(&self, y: &[f64; N_OBS]) -> ([f64; N_CON], [[f64; N_OBS]; N_CON]) {
        let d: [Dual; N_OBS] = std::array::from_fn(|k| Dual::var(y[k], k));
        let h = self.eval(&d);
        (h.map(|x| x.v), h.map(|x| x.d))
    }
}

/// Full-field constraint residuals `h_1..h_4`, each of length N.
pub fn constraints(y: &Observables, fs: &Freestream, form: ConstraintForm) -> Result<[Vec<f64>; N_CON]> {
    let kernel = ConstraintKernel::new(fs, form);
    let n = y.n_cells();
    let mut out: [Vec<f64>; N_CON] = std::array::from_fn(|_| vec![0.0; n]);
    for i in 0..n {
        let yi: [f64; N_OBS] = std::array::from_fn(|k| y.data[(i, k)]);
        if form == ConstraintForm::Quotient && !kernel.quotient_safe(&yi) {
            return Err(Error::Domain(format!(
                "quotient constraint denominator below floor in cell {i}; use the cross-multiplied form"
            )));
        }
        let h = kernel.eval(&yi);
        for j in 0..N_CON {
            out[j][i] = h[j];
        }
    }
    Ok(out)
}

const SPMAT_MAGIC: &str = "liftrom-spmat v1";

pub fn write_spmat(w: &mut impl Write, a: &CsrMatrix<f64>, f: &[f64]) -> Result<()> {
    writeln!(w, "{SPMAT_MAGIC} {} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    let offs: Vec<u8> = a.row_offsets().iter().flat_map(|&o| (o as u64).to_le_bytes()).collect();
    let cols: Vec<u8> = a.col_indices().iter().flat_map(|&c| (c as u64).to_le_bytes()).collect();
    w.write_all(&offs)?;
    w.write_all(&cols)?;
    write_f64s(w, a.values())?;
    w.write_all(&(f.len() as u64).to_le_bytes())?;
    write_f64s(w, f)
}

pub fn read_spmat(r: &mut impl Read) -> Result<(CsrMatrix<f64>, Vec<f64>)> {
    let header = read_line(r)?;
    let bad = || Error::Format(format!("bad sparse-matrix header `{header}`"));
    let rest = header.strip_prefix(SPMAT_MAGIC).ok_or_else(bad)?;
    let nums: Vec<usize> = rest.split_whitespace().map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    let [rows, cols, nnz] = nums[..] else { return Err(bad()) };
    let offs = read_u64s(r, rows + 1)?;
    let idx = read_u64s(r, nnz)?;
    let vals = read_f64s(r, nnz)?;
    let flen = read_u64s(r, 1)?[0];
    if flen != 0 && flen != rows {
        return Err(Error::Format(format!("rhs of length {flen} for {rows} rows")));
    }
    let f = read_f64s(r, flen)?;
    let a = CsrMatrix::try_from_csr_data(rows, cols, offs, idx, vals)
        .map_err(|e| Error::Format(format!("invalid CSR payload: {e}")))?;
    Ok((a, f))
}

pub(crate) fn read_u64s(r: &mut impl Read, count: usize) -> Result<Vec<usize>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated integer payload".into()))?;
    Ok(buf.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize).collect())
}

impl LiftedSystem {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_spmat(&mut w, &self.a, &self.f)?;
        w.flush()?;
        Ok(())
    }
}
