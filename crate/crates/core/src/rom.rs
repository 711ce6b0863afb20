//! Projection of the lifted system and the constrained reduced solve.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::deim::DeimData;
use crate::error::{Error, Result};
use crate::euler::{aero_from_wall_pressure, observables_to_state, AeroCoefficients, FlowState, Freestream, Observables};
use crate::lift::{LiftedSystem, N_EQ};
use crate::mesh::Mesh;
use crate::pod::BlockBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Snapshot,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomInstance {
    pub b: DMatrix<f64>,
    pub f: DVector<f64>,
    pub theta: Vec<f64>,
    pub provenance: Provenance,
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `B~ = (W A D Phi)^T (W A D Phi)`, `f~ = (W A D Phi)^T W f`.
pub fn project(sys: &LiftedSystem, basis: &BlockBasis, row_weights: &[f64; N_EQ]) -> Result<RomInstance> {
    let n = sys.n;
    if basis.n != n {
        return Err(Error::Dimension(format!("basis on N = {}, system on N = {n}", basis.n)));
    }
    if sys.f.len() != N_EQ * n {
        return Err(Error::InvalidInput("right-hand side has not been formed".into()));
    }
    let k = basis.k();
    let off = basis.offsets();
    let mut dphi = DMatrix::zeros(8 * n, k);
    for i in 0..8 {
        dphi.view_mut((i * n, off[i]), (n, basis.bases[i].k())).copy_from(&basis.scaled_block(i));
    }
    let mut aphi: DMatrix<f64> = &sys.a * &dphi;
    let mut wf = DVector::from_column_slice(&sys.f);
    for b in 0..N_EQ {
        aphi.rows_mut(b * n, n).scale_mut(row_weights[b]);
        wf.rows_mut(b * n, n).scale_mut(row_weights[b]);
    }
    let mut bt = aphi.tr_mul(&aphi);
    symmetrize(&mut bt);
    let ft = aphi.tr_mul(&wf);
    let lmin = min_eigenvalue(&bt);
    if !(lmin > 0.0) {
        return Err(Error::NotPositiveDefinite { eigenvalue: lmin });
    }
    Ok(RomInstance { b: bt, f: ft, theta: sys.theta.clone(), provenance: Provenance::Snapshot })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub obj_tol: f64,
    pub con_tol: f64,
    pub max_evals: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { obj_tol: 1e-6, con_tol: 1e-6, max_evals: 4_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSolution {
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub constraint_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub init_index: Option<usize>,
    pub method: String,
    pub seconds: f64,
}

impl ReducedSolution {
    pub fn y(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Smooth equality constraints `c(y) = 0` with Jacobian.
pub trait ReducedConstraints {
    fn len(&self) -> usize;
    fn eval(&self, y: &DVector<f64>) -> DVector<f64>;
    fn eval_with_jacobian(&self, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ReducedConstraints for DeimData {
    fn len(&self) -> usize {
        DeimData::len(self)
    }
    fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        DeimData::eval(self, y)
    }
    fn eval_with_jacobian(&self, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        DeimData::eval_with_jacobian(self, y)
    }
}

struct Problem<'a, C: ReducedConstraints> {
    b: &'a DMatrix<f64>,
    f: &'a DVector<f64>,
    con: &'a C,
    evals: usize,
    max_evals: usize,
}

impl<C: ReducedConstraints> Problem<'_, C> {
    fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * (self.b * y - self.f).norm_squared()
    }

    fn eval(&mut self, y: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.charge()?;
        Ok((self.objective(y), self.con.eval(y)))
    }

    fn eval_jac(&mut self, y: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        self.charge()?;
        let (c, j) = self.con.eval_with_jacobian(y);
        Ok((self.objective(y), c, j))
    }

    fn charge(&mut self) -> Result<()> {
        self.evals += 1;
        if self.evals > self.max_evals {
            return Err(Error::Optimization { reason: "evaluation budget exhausted".into(), best: None });
        }
        Ok(())
    }
}

/// `min 1/2 |B y - f|^2  s.t.  c(y) = 0`, started from `init`.
pub fn solve_rom<C: ReducedConstraints>(
    rom: &RomInstance,
    con: &C,
    init: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<ReducedSolution> {
    let t0 = Instant::now();
    let k = rom.b.nrows();
    if init.len() != k || rom.f.len() != k || rom.b.ncols() != k {
        return Err(Error::Dimension(format!("reduced problem of size {k} with init of length {}", init.len())));
    }
    let mut prob = Problem { b: &rom.b, f: &rom.f, con, evals: 0, max_evals: opts.max_evals };
    let finish = |y: DVector<f64>, c: f64, obj: f64, it: usize, evals: usize, method: &str| ReducedSolution {
        theta: rom.theta.clone(),
        y: y.as_slice().to_vec(),
        objective: obj,
        constraint_norm: c,
        iterations: it,
        evaluations: evals,
        init_index: None,
        method: method.into(),
        seconds: t0.elapsed().as_secs_f64(),
    };
    if con.is_empty() {
        let chol = rom.b.clone().cholesky().ok_or(Error::NotPositiveDefinite { eigenvalue: min_eigenvalue(&rom.b) })?;
        let y = chol.solve(&rom.f);
        let obj = prob.objective(&y);
        return Ok(finish(y, 0.0, obj, 1, 1, "cholesky"));
    }
    match sqp(&mut prob, init, opts) {
        Ok((y, it)) => {
            let (obj, c) = prob.eval(&y)?;
            Ok(finish(y, c.norm(), obj, it, prob.evals, "sqp"))
        }
        Err(e) => {
            log::debug!("SQP failed ({e}); switching to augmented Lagrangian");
            let start = match &e {
                Error::Optimization { best: Some(b), .. } => DVector::from_column_slice(b),
                _ => init.clone(),
            };
            let (y, it) = augmented_lagrangian(&mut prob, &start, opts)?;
            let (obj, c) = prob.eval(&y)?;
            Ok(finish(y, c.norm(), obj, it, prob.evals, "augmented-lagrangian"))
        }
    }
}

/// Null-space Gauss-Newton SQP with an l1 merit line search.
fn sqp<C: ReducedConstraints>(p: &mut Problem<C>, init: &DVector<f64>, opts: &SolveOptions) -> Result<(DVector<f64>, usize)> {
    let k = init.len();
    let bb = p.b.tr_mul(p.b);
    let mut y = init.clone();
    let mut mu = 0.0f64;
    let mut stall = 0;
    for it in 1..=500 {
        let (obj, c, jac) = p.eval_jac(&y)?;
        let r = p.b * &y - p.f;
        let grad = p.b.tr_mul(&r);
        let svd = jac.clone().svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let s = &svd.singular_values;
        let smax = s.max();
        let rank = s.iter().filter(|&&v| v > 1e-10 * smax).count();
        if rank == 0 {
            return Err(Error::Optimization { reason: "constraint Jacobian vanished".into(), best: Some(y.as_slice().to_vec()) });
        }
        // Range-space step restores linearized feasibility; null-space step minimizes the objective.
        let mut dp = DVector::zeros(k);
        for i in 0..rank {
            let coef = -u.column(i).dot(&c) / s[i];
            dp.axpy(coef, &vt.row(i).transpose(), 1.0);
        }
        let z = null_space(&vt, rank, k);
        let delta = if z.ncols() > 0 {
            let bz = p.b * &z;
            let rhs = -(&r + p.b * &dp);
            let w = bz.svd(true, true).solve(&rhs, 1e-14).map_err(|m| Error::Singular(m.into()))?;
            &dp + &z * w
        } else {
            dp
        };
        // Multiplier estimate from J^T lambda = -(grad + BB delta).
        let g_new = &grad + &bb * &delta;
        let mut lam_max = 0.0f64;
        for i in 0..rank {
            let li = -vt.row(i).transpose().dot(&g_new) / s[i];
            lam_max = lam_max.max(li.abs() * u.column(i).amax());
        }
        mu = mu.max(2.0 * lam_max + 1e-12);
        let cn1 = c.lp_norm(1);
        let merit0 = obj + mu * cn1;
        let dderiv = grad.dot(&delta) - mu * cn1;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &y + &delta * t;
            let (o2, c2) = p.eval(&trial)?;
            let m2 = o2 + mu * c2.lp_norm(1);
            if m2.is_finite() && m2 <= merit0 + 1e-4 * t * dderiv.min(0.0) {
                accepted = Some((trial, o2, c2));
                break;
            }
            t *= 0.5;
        }
        let Some((ynew, onew, cnew)) = accepted else {
            return Err(Error::Optimization { reason: "line search failed".into(), best: Some(y.as_slice().to_vec()) });
        };
        let step = (&ynew - &y).norm();
        y = ynew;
        let obj_change = (obj - onew).abs() / obj.abs().max(1.0);
        let small_step = step <= opts.obj_tol * (1.0 + y.norm());
        if cnew.norm() <= opts.con_tol && (obj_change <= opts.obj_tol || small_step) {
            // Confirm with one more stationary step before declaring success.
            stall += 1;
            if stall >= 2 || small_step {
                return Ok((y, it));
            }
        } else {
            stall = 0;
        }
    }
    Err(Error::Optimization { reason: "SQP iteration limit".into(), best: Some(y.as_slice().to_vec()) })
}

/// Orthonormal basis for the null space of `J` from its right singular vectors.
fn null_space(vt: &DMatrix<f64>, rank: usize, k: usize) -> DMatrix<f64> {
    let rows = vt.nrows();
    if rows >= k {
        return vt.rows(rank, k - rank).transpose();
    }
    // Thin SVD only returns min(m, k) right vectors: complete the basis by QR.
    let mut full = DMatrix::zeros(k, k);
    full.columns_mut(0, rank).copy_from(&vt.rows(0, rank).transpose());
    let mut next = rank;
    for e in 0..k {
        if next == k {
            break;
        }
        let mut v = DVector::zeros(k);
        v[e] = 1.0;
        for _ in 0..2 {
            for c in 0..next {
                let proj = full.column(c).dot(&v);
                v.axpy(-proj, &full.column(c), 1.0);
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            full.set_column(next, &(v / nv));
            next += 1;
        }
    }
    full.columns(rank, k - rank).into_owned()
}

/// Bound-free augmented Lagrangian; inner problems by Levenberg-Marquardt.
fn augmented_lagrangian<C: ReducedConstraints>(
    p: &mut Problem<C>,
    init: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<(DVector<f64>, usize)> {
    let k = init.len();
    let m = p.con.len();
    let mut y = init.clone();
    let mut lam = DVector::zeros(m);
    let bscale = p.b.norm().max(1.0);
    let mut rho = bscale * bscale;
    let mut iters = 0;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _outer in 0..60 {
        let mut damp = 1e-3;
        for _inner in 0..200 {
            iters += 1;
            let (_, c, jac) = p.eval_jac(&y).map_err(|e| with_best(e, &best, &y))?;
            let sr = rho.sqrt();
            let mut res = DVector::zeros(k + m);
            res.rows_mut(0, k).copy_from(&(p.b * &y - p.f));
            res.rows_mut(k, m).copy_from(&((&c + &lam / rho) * sr));
            let mut jm = DMatrix::zeros(k + m, k);
            jm.rows_mut(0, k).copy_from(p.b);
            jm.rows_mut(k, m).copy_from(&(&jac * sr));
            let jtj = jm.tr_mul(&jm);
            let g = jm.tr_mul(&res);
            let phi0 = res.norm_squared();
            let mut improved = false;
            for _ in 0..30 {
                let mut a = jtj.clone();
                for d in 0..k {
                    a[(d, d)] += damp * jtj[(d, d)].max(1e-300);
                }
                let Some(ch) = a.cholesky() else {
                    damp *= 10.0;
                    continue;
                };
                let step = -ch.solve(&g);
                let trial = &y + &step;
                let (o2, c2) = p.eval(&trial).map_err(|e| with_best(e, &best, &y))?;
                let phi = 2.0 * o2 + ((&c2 + &lam / rho) * sr).norm_squared();
                if phi < phi0 {
                    let small = step.norm() <= 1e-14 * (1.0 + y.norm());
                    y = trial;
                    damp = (damp / 3.0).max(1e-12);
                    improved = !small;
                    break;
                }
                damp *= 4.0;
            }
            if !improved || g.norm() <= 1e-12 * (1.0 + phi0.sqrt()) {
                break;
            }
        }
        let (obj, c) = p.eval(&y).map_err(|e| with_best(e, &best, &y))?;
        let cn = c.norm();
        if best.as_ref().is_none_or(|(b, _)| cn < *b) {
            best = Some((cn, y.clone()));
        }
        if cn <= opts.con_tol {
            let _ = obj;
            return Ok((y, iters));
        }
        lam += &c * rho;
        rho *= 10.0;
    }
    Err(Error::Optimization {
        reason: "augmented Lagrangian did not reach the constraint tolerance".into(),
        best: best.map(|(_, y)| y.as_slice().to_vec()),
    })
}

fn with_best(e: Error, best: &Option<(f64, DVector<f64>)>, y: &DVector<f64>) -> Error {
    match e {
        Error::Optimization { reason, .. } => Error::Optimization {
            reason,
            best: Some(best.as_ref().map(|(_, b)| b).unwrap_or(y).as_slice().to_vec()),
        },
        other => other,
    }
}

/// Full-field reconstruction and aerodynamic outputs of a reduced vector.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub obs: Observables,
    pub state: FlowState,
    pub aero: AeroCoefficients,
}

pub fn predict_full(basis: &BlockBasis, mesh: &Mesh, fs: &Freestream, yt: &DVector<f64>) -> Result<Prediction> {
    let obs = basis.lift(yt)?;
    let state = observables_to_state(&obs, fs)?;
    if let Some(i) = state.p.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::NonPhysical { cell: i, rho: state.rho[i], p: state.p[i] });
    }
    let aero = aero_from_wall_pressure(&crate::euler::wall_pressure(&state.p, mesh)?, mesh, fs)?;
    Ok(Prediction { obs, state, aero })
}
