//! Steady 2D Euler solver and the state/observable conversions.
//!
//! Cell-centred finite volumes, first-order Rusanov flux, explicit local
//! time stepping. Units are SI throughout.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, FARFIELD, WALL};

pub const N_OBS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Freestream {
    pub p_inf: f64,
    pub rho_inf: f64,
    pub a_inf: f64,
    pub mach: f64,
    /// Degrees.
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Parsed for completeness; the inviscid model never reads it.
    #[serde(default)]
    pub mu_inf: Option<f64>,
}

fn default_gamma() -> f64 {
    1.4
}

impl Freestream {
    pub fn new(p_inf: f64, rho_inf: f64, a_inf: f64, mach: f64, alpha: f64, gamma: f64) -> Result<Self> {
        let fs = Self { p_inf, rho_inf, a_inf, mach, alpha, gamma, mu_inf: None };
        fs.validate()?;
        Ok(fs)
    }

    pub fn naca() -> Self {
        Self { p_inf: 101325.0, rho_inf: 1.225, a_inf: 340.296, mach: 0.6, alpha: 2.0, gamma: 1.4, mu_inf: Some(1.78e-5) }
    }

    pub fn rae() -> Self {
        Self { p_inf: 28745.0, rho_inf: 0.44, a_inf: 301.86, mach: 0.734, alpha: 2.79, gamma: 1.4, mu_inf: Some(1.49e-5) }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.p_inf, self.rho_inf, self.a_inf, self.mach, self.gamma];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!("non-physical freestream {self:?}")));
        }
        if self.gamma <= 1.0 {
            return Err(Error::InvalidInput("gamma must exceed 1".into()));
        }
        let a2 = self.gamma * self.p_inf / self.rho_inf;
        let rel = (self.a_inf * self.a_inf - a2).abs() / a2;
        if rel > 0.01 {
            return Err(Error::InvalidInput(format!(
                "speed of sound {} inconsistent with gamma p / rho = {} ({:.2}% off)",
                self.a_inf,
                a2.sqrt(),
                100.0 * rel
            )));
        }
        Ok(())
    }

    pub fn speed(&self) -> f64 {
        self.mach * self.a_inf
    }

    pub fn velocity(&self) -> [f64; 2] {
        let (s, c) = self.alpha.to_radians().sin_cos();
        [self.speed() * c, self.speed() * s]
    }

    pub fn dynamic_pressure(&self) -> f64 {
        0.5 * self.rho_inf * self.speed() * self.speed()
    }

    pub fn total_enthalpy(&self) -> f64 {
        let v = self.speed();
        0.5 * v * v + self.gamma / (self.gamma - 1.0) * self.p_inf / self.rho_inf
    }

    /// Magnitude of each observable at freestream, used to bring everything to O(1).
    pub fn observable_scales(&self) -> [f64; N_OBS] {
        let mv = self.rho_inf * self.speed();
        let mv2 = mv * self.speed();
        let mvh = mv * self.total_enthalpy();
        [mv, mv, mv2, self.p_inf, mv2, mv2, mvh, mvh]
    }

    pub fn state(&self, n: usize) -> FlowState {
        let [u, v] = self.velocity();
        FlowState { rho: vec![self.rho_inf; n], u: vec![u; n], v: vec![v; n], p: vec![self.p_inf; n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
}

impl FlowState {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.u.len() != n || self.v.len() != n || self.p.len() != n {
            return Err(Error::Dimension("state arrays of unequal length".into()));
        }
        for i in 0..n {
            if !(self.rho[i] > 0.0 && self.p[i] > 0.0) {
                return Err(Error::NonPhysical { cell: i, rho: self.rho[i], p: self.p[i] });
            }
        }
        Ok(())
    }
}

/// Observables `y_1..y_8` stored as an `N x 8` column-major matrix, so the
/// backing slice is the stacked vector `[y_1; ...; y_8]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    pub data: DMatrix<f64>,
}

impl Observables {
    pub fn zeros(n: usize) -> Self {
        Self { data: DMatrix::zeros(n, N_OBS) }
    }

    pub fn from_stacked(stacked: &[f64]) -> Result<Self> {
        if stacked.len() % N_OBS != 0 {
            return Err(Error::Dimension(format!("stacked length {} not a multiple of 8", stacked.len())));
        }
        Ok(Self { data: DMatrix::from_column_slice(stacked.len() / N_OBS, N_OBS, stacked) })
    }

    pub fn n_cells(&self) -> usize {
        self.data.nrows()
    }

    /// Zero-based: `y(0)` is `y_1`.
    pub fn y(&self, k: usize) -> &[f64] {
        let n = self.n_cells();
        &self.data.as_slice()[k * n..(k + 1) * n]
    }

    pub fn y_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.n_cells();
        &mut self.data.as_mut_slice()[k * n..(k + 1) * n]
    }

    pub fn stacked(&self) -> &[f64] {
        self.data.as_slice()
    }
}

pub fn state_to_observables(s: &FlowState, fs: &Freestream) -> Observables {
    let g = fs.gamma;
    let n = s.len();
    let mut y = Observables::zeros(n);
    for i in 0..n {
        let (r, u, v, p) = (s.rho[i], s.u[i], s.v[i], s.p[i]);
        let h = 0.5 * (u * u + v * v) + g / (g - 1.0) * p / r;
        let vals = [r * u, r * v, r * u * v, p, r * u * u, r * v * v, r * u * h, r * v * h];
        for (k, val) in vals.into_iter().enumerate() {
            y.data[(i, k)] = val;
        }
    }
    y
}

pub const GUARD_EPS: f64 = 1e-8;

/// Inverse map with division guards; also returns how many cells used a fallback.
pub fn observables_to_state_counted(y: &Observables, fs: &Freestream) -> Result<(FlowState, usize)> {
    let n = y.n_cells();
    let sc = fs.observable_scales();
    let (f1, f2, f3) = (GUARD_EPS * sc[0], GUARD_EPS * sc[1], GUARD_EPS * sc[2]);
    let mut s = FlowState { rho: vec![0.0; n], u: vec![0.0; n], v: vec![0.0; n], p: vec![0.0; n] };
    let mut guarded = 0;
    for i in 0..n {
        let [y1, y2, y3, y4, y5, y6] = [0, 1, 2, 3, 4, 5].map(|k| y.data[(i, k)]);
        let mut hit = false;
        let u = if y2.abs() > f2 && y3.abs() > f3 {
            y3 / y2
        } else {
            hit = true;
            if y1.abs() > f1 { y5 / y1 } else { 0.0 }
        };
        let v = if y1.abs() > f1 && y3.abs() > f3 {
            y3 / y1
        } else {
            hit = true;
            if y2.abs() > f2 { y6 / y2 } else { 0.0 }
        };
        let rho = if y3.abs() > f3 {
            y1 * y2 / y3
        } else {
            hit = true;
            if y5.abs() > f3 {
                y1 * y1 / y5
            } else if y6.abs() > f3 {
                y2 * y2 / y6
            } else {
                f64::NAN
            }
        };
        if hit {
            guarded += 1;
        }
        if !(rho.is_finite() && u.is_finite() && v.is_finite() && y4.is_finite()) {
            return Err(Error::Domain(format!("state recovery produced NaN in cell {i}")));
        }
        s.rho[i] = rho;
        s.u[i] = u;
        s.v[i] = v;
        s.p[i] = y4;
    }
    if n > 0 && guarded * 100 > n {
        log::warn!("division guard used in {guarded} of {n} cells");
    }
    Ok((s, guarded))
}

pub fn observables_to_state(y: &Observables, fs: &Freestream) -> Result<FlowState> {
    observables_to_state_counted(y, fs).map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub cfl: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { cfl: 0.8, max_iters: 200_000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    /// Density residual relative to the first iterate, sampled every 100 steps.
    pub history: Vec<f64>,
    pub final_ratio: f64,
}

pub fn solve_euler(mesh: &Mesh, fs: &Freestream, opts: &SolverOptions) -> Result<FlowState> {
    solve_euler_from(mesh, fs, opts, None).map(|(s, _)| s)
}

#[derive(Clone, Copy)]
enum Bc {
    Interior(usize),
    Wall,
    Farfield,
}

/// Pseudo-time march to steady state, optionally from a warm start.
pub fn solve_euler_from(
    mesh: &Mesh,
    fs: &Freestream,
    opts: &SolverOptions,
    init: Option<&FlowState>,
) -> Result<(FlowState, SolveStats)> {
    fs.validate()?;
    let n = mesh.n_cells();
    let wall = mesh.patch_id(WALL);
    let far = mesh.patch_id(FARFIELD);
    if far.is_none() {
        return Err(Error::InvalidInput("mesh has no farfield patch".into()));
    }
    let mut bcs = Vec::with_capacity(mesh.faces.len());
    for (fi, f) in mesh.faces.iter().enumerate() {
        bcs.push(match (f.neighbor, f.patch) {
            (Some(nb), _) => Bc::Interior(nb),
            (None, Some(p)) if Some(p) == wall => Bc::Wall,
            (None, Some(p)) if Some(p) == far => Bc::Farfield,
            _ => return Err(Error::InvalidInput(format!("boundary face {fi} on an unsupported patch"))),
        });
    }
    let g = fs.gamma;
    let gm1 = g - 1.0;
    let q_inf = {
        let [u, v] = fs.velocity();
        [fs.rho_inf, fs.rho_inf * u, fs.rho_inf * v, fs.p_inf / gm1 + 0.5 * fs.rho_inf * (u * u + v * v)]
    };
    let mut q = vec![[0.0; 4]; n];
    match init {
        Some(s) => {
            if s.len() != n {
                return Err(Error::Dimension(format!("initial state of length {} on {n} cells", s.len())));
            }
            for i in 0..n {
                q[i] = conservative(s.rho[i], s.u[i], s.v[i], s.p[i], gm1);
            }
        }
        None => q.iter_mut().for_each(|c| *c = q_inf),
    }
    let mut res = vec![[0.0; 4]; n];
    let mut lam = vec![0.0; n];
    let mut history = Vec::new();
    let mut r0 = None;
    let floor = 1e-13 * fs.rho_inf * fs.speed().max(fs.a_inf);
    for it in 0..opts.max_iters {
        res.iter_mut().for_each(|r| *r = [0.0; 4]);
        lam.iter_mut().for_each(|l| *l = 0.0);
        for (f, bc) in mesh.faces.iter().zip(&bcs) {
            let (o, n_, a) = (f.owner, f.normal, f.area);
            let ql = &q[o];
            match *bc {
                Bc::Interior(nb) => {
                    let (flux, l) = rusanov(ql, &q[nb], n_, g);
                    for k in 0..4 {
                        res[o][k] += flux[k] * a;
                        res[nb][k] -= flux[k] * a;
                    }
                    lam[o] += l * a;
                    lam[nb] += l * a;
                }
                Bc::Wall => {
                    let (rho, u, v, p) = primitive(ql, gm1);
                    res[o][1] += p * n_[0] * a;
                    res[o][2] += p * n_[1] * a;
                    let c = (g * p / rho).sqrt();
                    lam[o] += ((u * n_[0] + v * n_[1]).abs() + c) * a;
                }
                Bc::Farfield => {
                    let qb = farfield_state(ql, &q_inf, n_, g);
                    let (flux, l) = physical_flux(&qb, n_, g);
                    for k in 0..4 {
                        res[o][k] += flux[k] * a;
                    }
                    lam[o] += l * a;
                }
            }
        }
        let mut norm = 0.0;
        for i in 0..n {
            let r = res[i][0] / mesh.cell_volumes[i];
            norm += r * r;
        }
        let norm = (norm / n as f64).sqrt();
        let base = *r0.get_or_insert(norm.max(floor));
        let ratio = norm / base;
        if it % 100 == 0 {
            history.push(ratio);
        }
        if ratio <= opts.tol || norm <= floor {
            return Ok((to_state(&q, gm1), SolveStats { iterations: it, history, final_ratio: ratio }));
        }
        for i in 0..n {
            let dt_v = opts.cfl / lam[i];
            for k in 0..4 {
                q[i][k] -= dt_v * res[i][k];
            }
            let (rho, _, _, p) = primitive(&q[i], gm1);
            if !(rho > 0.0 && p > 0.0) {
                return Err(Error::NonPhysical { cell: i, rho, p });
            }
        }
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NotConverged { iterations: opts.max_iters, last, history })
}

fn conservative(rho: f64, u: f64, v: f64, p: f64, gm1: f64) -> [f64; 4] {
    [rho, rho * u, rho * v, p / gm1 + 0.5 * rho * (u * u + v * v)]
}

#[inline]
fn primitive(q: &[f64; 4], gm1: f64) -> (f64, f64, f64, f64) {
    let rho = q[0];
    let u = q[1] / rho;
    let v = q[2] / rho;
    let p = gm1 * (q[3] - 0.5 * rho * (u * u + v * v));
    (rho, u, v, p)
}

fn to_state(q: &[[f64; 4]], gm1: f64) -> FlowState {
    let n = q.len();
    let mut s = FlowState { rho: vec![0.0; n], u: vec![0.0; n], v: vec![0.0; n], p: vec![0.0; n] };
    for (i, c) in q.iter().enumerate() {
        let (r, u, v, p) = primitive(c, gm1);
        s.rho[i] = r;
        s.u[i] = u;
        s.v[i] = v;
        s.p[i] = p;
    }
    s
}

/// Normal flux per unit area and the spectral radius `|v_n| + c`.
#[inline]
fn physical_flux(q: &[f64; 4], n: [f64; 2], g: f64) -> ([f64; 4], f64) {
    let (rho, u, v, p) = primitive(q, g - 1.0);
    let vn = u * n[0] + v * n[1];
    let c = (g * p / rho).sqrt();
    (
        [rho * vn, q[1] * vn + p * n[0], q[2] * vn + p * n[1], (q[3] + p) * vn],
        vn.abs() + c,
    )
}

#[inline]
fn rusanov(ql: &[f64; 4], qr: &[f64; 4], n: [f64; 2], g: f64) -> ([f64; 4], f64) {
    let (fl, ll) = physical_flux(ql, n, g);
    let (fr, lr) = physical_flux(qr, n, g);
    let l = ll.max(lr);
    let mut f = [0.0; 4];
    for k in 0..4 {
        f[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * l * (qr[k] - ql[k]);
    }
    (f, l)
}

/// Riemann-invariant farfield state for outward normal `n`.
fn farfield_state(qi: &[f64; 4], q_inf: &[f64; 4], n: [f64; 2], g: f64) -> [f64; 4] {
    let gm1 = g - 1.0;
    let (ri, ui, vi, pi) = primitive(qi, gm1);
    let (re, ue, ve, pe) = primitive(q_inf, gm1);
    let (ci, ce) = ((g * pi / ri).sqrt(), (g * pe / re).sqrt());
    let (vni, vne) = (ui * n[0] + vi * n[1], ue * n[0] + ve * n[1]);
    if vne.abs() >= ce {
        // Supersonic: everything upwind.
        return if vne < 0.0 { *q_inf } else { *qi };
    }
    let rp = vni + 2.0 * ci / gm1;
    let rm = vne - 2.0 * ce / gm1;
    let vnb = 0.5 * (rp + rm);
    let cb = 0.25 * gm1 * (rp - rm);
    let (s, ut, vt, vn_ref) = if vnb > 0.0 {
        (pi / ri.powf(g), ui, vi, vni)
    } else {
        (pe / re.powf(g), ue, ve, vne)
    };
    let rb = (cb * cb / (g * s)).powf(1.0 / gm1);
    let pb = rb * cb * cb / g;
    let ub = ut + (vnb - vn_ref) * n[0];
    let vb = vt + (vnb - vn_ref) * n[1];
    conservative(rb, ub, vb, pb, gm1)
}

/// Net outward mass flux through the farfield and the magnitude of inflow.
pub fn farfield_mass_balance(s: &FlowState, mesh: &Mesh, fs: &Freestream) -> (f64, f64) {
    let far = mesh.patch_id(FARFIELD);
    let gm1 = fs.gamma - 1.0;
    let [u, v] = fs.velocity();
    let q_inf = conservative(fs.rho_inf, u, v, fs.p_inf, gm1);
    let (mut net, mut inflow) = (0.0, 0.0);
    for f in mesh.faces.iter().filter(|f| f.neighbor.is_none() && f.patch == far) {
        let o = f.owner;
        let qi = conservative(s.rho[o], s.u[o], s.v[o], s.p[o], gm1);
        let qb = farfield_state(&qi, &q_inf, f.normal, fs.gamma);
        let m = qb[1] * f.normal[0] + qb[2] * f.normal[1];
        net += m * f.area;
        if m < 0.0 {
            inflow -= m * f.area;
        }
    }
    (net, inflow)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeroCoefficients {
    /// One value per wall face, in wall-patch order.
    pub cp: Vec<f64>,
    pub cl: f64,
    pub cd: f64,
}

/// Chord as the projected length of the closed wall contour.
pub fn wall_chord(mesh: &Mesh) -> Result<f64> {
    let wall = mesh.patch(WALL).ok_or_else(|| Error::InvalidInput("mesh has no wall patch".into()))?;
    Ok(wall.faces.iter().map(|&f| mesh.faces[f].normal[1].abs() * mesh.faces[f].area).sum::<f64>() / 2.0)
}

/// Aerodynamic coefficients from wall pressures `p_f` (one per wall face).
pub fn aero_from_wall_pressure(p_wall: &[f64], mesh: &Mesh, fs: &Freestream) -> Result<AeroCoefficients> {
    let wall = mesh.patch(WALL).ok_or_else(|| Error::InvalidInput("mesh has no wall patch".into()))?;
    if wall.faces.is_empty() {
        return Err(Error::InvalidInput("wall patch is empty".into()));
    }
    if p_wall.len() != wall.faces.len() {
        return Err(Error::Dimension(format!("{} wall pressures for {} faces", p_wall.len(), wall.faces.len())));
    }
    let chord = wall_chord(mesh)?;
    if !(chord > 0.0) {
        return Err(Error::InvalidInput("zero chord".into()));
    }
    let q = fs.dynamic_pressure();
    let (mut fx, mut fy) = (0.0, 0.0);
    let mut cp = Vec::with_capacity(p_wall.len());
    for (&fi, &p) in wall.faces.iter().zip(p_wall) {
        let f = &mesh.faces[fi];
        let dp = p - fs.p_inf;
        cp.push(dp / q);
        fx += dp * f.area * f.normal[0];
        fy += dp * f.area * f.normal[1];
    }
    let (sa, ca) = fs.alpha.to_radians().sin_cos();
    let norm = q * chord;
    Ok(AeroCoefficients { cp, cl: (-fx * sa + fy * ca) / norm, cd: (fx * ca + fy * sa) / norm })
}

pub fn wall_pressure(p: &[f64], mesh: &Mesh) -> Result<Vec<f64>> {
    let wall = mesh.patch(WALL).ok_or_else(|| Error::InvalidInput("mesh has no wall patch".into()))?;
    Ok(wall.faces.iter().map(|&f| p[mesh.faces[f].owner]).collect())
}

pub fn aero_coefficients(s: &FlowState, mesh: &Mesh, fs: &Freestream) -> Result<AeroCoefficients> {
    aero_from_wall_pressure(&wall_pressure(&s.p, mesh)?, mesh, fs)
}

/// One training or test solution on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub theta: Vec<f64>,
    pub obs: Observables,
    pub state: FlowState,
}

const SNAP_MAGIC: &str = "liftrom-snap v1";

impl Snapshot {
    pub fn new(theta: Vec<f64>, state: FlowState, fs: &Freestream) -> Self {
        Self { theta, obs: state_to_observables(&state, fs), state }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let n = self.obs.n_cells();
        writeln!(w, "{SNAP_MAGIC} {n} O={N_OBS}")?;
        write_f64s(w, self.obs.stacked())?;
        for a in [&self.state.rho, &self.state.u, &self.state.v, &self.state.p] {
            write_f64s(w, a)?;
        }
        w.write_all(&(self.theta.len() as u64).to_le_bytes())?;
        write_f64s(w, &self.theta)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let header = read_line(r)?;
        let rest = header
            .strip_prefix(SNAP_MAGIC)
            .ok_or_else(|| Error::Format(format!("bad snapshot header `{header}`")))?;
        let parts: Vec<&str> = rest.split_whitespace().collect();
        if parts.len() != 2 || parts[1] != "O=8" {
            return Err(Error::Format(format!("bad snapshot header `{header}`")));
        }
        let n: usize = parts[0].parse().map_err(|_| Error::Format(format!("bad cell count `{}`", parts[0])))?;
        let obs = Observables::from_stacked(&read_f64s(r, N_OBS * n)?)?;
        let rho = read_f64s(r, n)?;
        let u = read_f64s(r, n)?;
        let v = read_f64s(r, n)?;
        let p = read_f64s(r, n)?;
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| Error::Format("truncated snapshot".into()))?;
        let d = u64::from_le_bytes(len) as usize;
        if d > 1 << 20 {
            return Err(Error::Format(format!("implausible parameter count {d}")));
        }
        let theta = read_f64s(r, d)?;
        Ok(Self { theta, obs, state: FlowState { rho, u, v, p } })
    }
}

pub(crate) fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated binary payload".into()))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub(crate) fn read_line(r: &mut impl Read) -> Result<String> {
    let mut out = Vec::new();
    let mut b = [0u8; 1];
    loop {
        if r.read(&mut b)? == 0 {
            return Err(Error::Format("unexpected end of file in header".into()));
        }
        if b[0] == b'\n' {
            break;
        }
        out.push(b[0]);
        if out.len() > 4096 {
            return Err(Error::Format("header line too long".into()));
        }
    }
    String::from_utf8(out).map_err(|_| Error::Format("header is not UTF-8".into()))
}
