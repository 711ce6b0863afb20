//! End-to-end drivers: database build, validation, inverse design, UQ and report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{cp_error, gaussian_kde, scalar_error, statistics, wall_x_over_c, Kde, Statistics};
use crate::config::RunConfig;
use crate::db::RomDatabase;
use crate::deim::DeimData;
use crate::error::{Error, Result};
use crate::euler::{
    aero_coefficients, observables_to_state, solve_euler_from, state_to_observables, AeroCoefficients, Freestream,
    Observables,
};
use crate::fv::assemble_gradient_ops;
use crate::ga::{minimize, GaResult};
use crate::geometry::{evaluate_airfoil, perturb_family, perturbation_bounds, CstAirfoil};
use crate::kriging::{GpOptions, PodKrigSurrogate};
use crate::lift::{assemble_lifted, extract_rhs, ConstraintKernel, LiftedSystem};
use crate::mesh::{generate_omesh, Mesh, WALL};
use crate::pod::BlockBasis;
use crate::rom::{predict_full, project, solve_rom, ReducedSolution, SolveOptions};
use crate::sampling::{uniform, Bounds};

pub const DB_FILE: &str = "rom.db";
pub const GP_FILE: &str = "krig.gp";
pub const BUILD_MANIFEST: &str = "build_manifest.json";
pub const FAMILY_FILE: &str = "family.csv";
pub const VALIDATE_FILE: &str = "validate.json";
pub const INVERSE_FILE: &str = "inverse.json";
pub const TARGET_FILE: &str = "target_cp.csv";
pub const UQ_FILE: &str = "uq.json";
pub const REPORT_DIR: &str = "report";

/// Fraction of failed snapshots above which a build is abandoned.
pub const MAX_SKIP_FRACTION: f64 = 0.2;

/// Size the global worker pool; a no-op once the pool exists.
pub fn configure_threads(jobs: Option<usize>) {
    if let Some(n) = jobs.filter(|n| *n > 0) {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("worker pool already initialized");
        }
    }
}

/// Geometry, flow conditions and parameter box of one configuration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub cfg: RunConfig,
    pub base: CstAirfoil,
    pub fs: Freestream,
    pub bounds: Bounds,
}

impl Problem {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.problem.baseline.airfoil();
        let bounds = perturbation_bounds(&base, cfg.problem.fraction, &cfg.problem.active)?;
        Ok(Self { cfg: cfg.clone(), base, fs: cfg.freestream.resolve(), bounds })
    }

    pub fn mesh_at(&self, theta: &[f64]) -> Result<Mesh> {
        let cst = self.base.with_active(&self.cfg.problem.active, theta)?;
        let shape = evaluate_airfoil(&cst, self.cfg.mesh.surface_samples())?;
        generate_omesh(&shape, &self.cfg.mesh)
    }

    /// Full-order solve; returns the mesh, observables, coefficients and residual history.
    pub fn fom_at(&self, theta: &[f64]) -> Result<FomResult> {
        let mesh = self.mesh_at(theta)?;
        let t = Instant::now();
        let (state, stats) = solve_euler_from(&mesh, &self.fs, &self.cfg.fom, None)?;
        let seconds = t.elapsed().as_secs_f64();
        let aero = aero_coefficients(&state, &mesh, &self.fs)?;
        Ok(FomResult { obs: state_to_observables(&state, &self.fs), aero, mesh, history: stats.history, seconds })
    }
}

pub struct FomResult {
    pub mesh: Mesh,
    pub obs: Observables,
    pub aero: AeroCoefficients,
    pub history: Vec<f64>,
    pub seconds: f64,
}

/// Normalized cumulative arc length at wall-face midpoints, in wall order.
pub fn wall_arc_length(mesh: &Mesh) -> Result<Vec<f64>> {
    let wall = mesh.patch(WALL).ok_or_else(|| Error::InvalidInput("mesh has no wall patch".into()))?;
    let mut s = Vec::with_capacity(wall.faces.len());
    let mut acc = 0.0;
    for &f in &wall.faces {
        let a = mesh.faces[f].area;
        s.push(acc + 0.5 * a);
        acc += a;
    }
    Ok(s.into_iter().map(|v| v / acc).collect())
}

/// Linear resampling of `(s, v)` onto `targets`, clamped at the ends.
pub fn resample(s: &[f64], v: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    if s.len() != v.len() || s.is_empty() || s.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("resampling needs matching, sorted abscissae".into()));
    }
    Ok(targets
        .iter()
        .map(|&t| {
            let i = s.partition_point(|x| *x < t);
            if i == 0 {
                v[0]
            } else if i == s.len() {
                v[s.len() - 1]
            } else {
                let w = (t - s[i - 1]) / (s[i] - s[i - 1]).max(f64::MIN_POSITIVE);
                v[i - 1] + w * (v[i] - v[i - 1])
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub index: usize,
    pub theta: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildManifest {
    pub config: RunConfig,
    pub thetas: Vec<Vec<f64>>,
    pub skipped: Vec<SkippedPoint>,
    pub ks: Vec<usize>,
    pub cells: usize,
    pub fom_seconds: Vec<f64>,
    pub fom_histories: Vec<Vec<f64>>,
    pub timings: Vec<(String, f64)>,
    pub kriging: bool,
}

/// Online models loaded from a build directory.
pub struct Models {
    pub problem: Problem,
    pub db: RomDatabase,
    pub krig: Option<PodKrigSurrogate>,
    /// Baseline mesh; supplies the wall-face to cell map shared by all meshes.
    pub template: Mesh,
}

#[derive(Debug, Clone)]
pub struct OnlinePrediction {
    pub aero: AeroCoefficients,
    pub solution: ReducedSolution,
}

impl Models {
    pub fn load(dir: &Path) -> Result<Self> {
        let db = RomDatabase::load(dir.join(DB_FILE))?;
        let cfg: RunConfig = serde_json::from_str(&db.meta)
            .map_err(|e| Error::Format(format!("database metadata is not a run configuration: {e}")))?;
        let problem = Problem::new(&cfg)?;
        let gp = dir.join(GP_FILE);
        let krig = if gp.exists() { Some(PodKrigSurrogate::load(gp)?) } else { None };
        let template = problem.mesh_at(&problem.bounds.lower.iter().zip(&problem.bounds.upper).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>())?;
        Ok(Self { problem, db, krig, template })
    }

    /// Interpolate the ROM at `theta` and solve it from the anchor's snapshot.
    pub fn solve(&self, theta: &[f64], opts: &SolveOptions) -> Result<ReducedSolution> {
        let rom = self.db.interpolate(theta)?;
        let anchor = self.db.nearest_anchor(theta)?;
        let mut sol = solve_rom(&rom, &self.db.deim, &self.db.reduced[anchor], opts)?;
        sol.init_index = Some(anchor);
        Ok(sol)
    }

    /// Interpolate, solve and lift; the mesh at `theta` supplies wall geometry.
    pub fn predict(&self, theta: &[f64], mesh: &Mesh, opts: &SolveOptions) -> Result<OnlinePrediction> {
        let solution = self.solve(theta, opts)?;
        let pred = predict_full(&self.db.basis, mesh, &self.problem.fs, &solution.y())?;
        Ok(OnlinePrediction { aero: pred.aero, solution })
    }

    /// Wall C_P from the reduced solution, lifting only wall-adjacent cells.
    pub fn wall_cp(&self, theta: &[f64], opts: &SolveOptions) -> Result<Vec<f64>> {
        let sol = self.solve(theta, opts)?;
        self.wall_cp_from(&sol.y())
    }

    fn wall_cp_from(&self, yt: &DVector<f64>) -> Result<Vec<f64>> {
        let wall = self.template.patch(WALL).ok_or_else(|| Error::InvalidInput("mesh has no wall patch".into()))?;
        let b = &self.db.basis;
        let off = b.offsets();
        let fs = &self.problem.fs;
        let q = fs.dynamic_pressure();
        let row = |k: usize, cell: usize| -> f64 {
            b.scales[k] * b.bases[k].phi.row(cell).dot(&yt.rows(off[k], off[k + 1] - off[k]).transpose())
        };
        wall.faces
            .iter()
            .map(|&f| {
                let c = self.template.faces[f].owner;
                let y: [f64; 8] = std::array::from_fn(|k| row(k, c));
                let p = observables_to_state(&Observables::from_stacked(&y)?, fs)?.p[0];
                Ok((p - fs.p_inf) / q)
            })
            .collect()
    }

    pub fn krig_predict(&self, theta: &[f64], mesh: &Mesh) -> Result<AeroCoefficients> {
        let k = self.krig.as_ref().ok_or_else(|| Error::InvalidInput("no Kriging surrogate in this build".into()))?;
        Ok(k.predict(&self.db.basis, mesh, &self.problem.fs, theta)?.aero)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.10e}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Generate the family, solve the FOM at every point and persist the ROM database.
pub fn cmd_build(cfg: &RunConfig, out: &Path) -> Result<BuildManifest> {
    let problem = Problem::new(cfg)?;
    std::fs::create_dir_all(out)?;
    let mut timings = Vec::new();
    let p = &cfg.problem;
    let thetas = perturb_family(&problem.base, p.fraction, p.samples, &p.active, p.seed)?;
    let header: Vec<String> = p.active.iter().map(|i| format!("cst_{i}")).collect();
    write_csv(&out.join(FAMILY_FILE), &header.iter().map(String::as_str).collect::<Vec<_>>(), thetas.clone())?;

    let t = Instant::now();
    let results: Vec<Result<FomResult>> = thetas.par_iter().map(|th| problem.fom_at(th)).collect();
    timings.push(("fom".to_string(), t.elapsed().as_secs_f64()));
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (i, (th, r)) in thetas.iter().zip(results).enumerate() {
        match r {
            Ok(f) => kept.push((th.clone(), f)),
            Err(e) => {
                log::warn!("snapshot {i} skipped: {e}");
                skipped.push(SkippedPoint { index: i, theta: th.clone(), reason: e.to_string() });
            }
        }
    }
    if skipped.len() as f64 > MAX_SKIP_FRACTION * thetas.len() as f64 || kept.is_empty() {
        return Err(Error::InvalidInput(format!("{} of {} snapshots failed", skipped.len(), thetas.len())));
    }

    let t = Instant::now();
    let snaps: Vec<&Observables> = kept.iter().map(|(_, f)| &f.obs).collect();
    let basis = BlockBasis::from_snapshots(&snaps, problem.fs.observable_scales(), cfg.reduction.energy)?;
    let kernel = ConstraintKernel::new(&problem.fs, cfg.reduction.form);
    let deim = DeimData::build(&basis, kernel, cfg.reduction.deim_points)?;
    timings.push(("pod_deim".to_string(), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let weights = LiftedSystem::row_weights(&problem.fs);
    let projected: Vec<_> = kept
        .par_iter()
        .map(|(th, f)| -> Result<_> {
            let mut sys = assemble_lifted(&assemble_gradient_ops(&f.mesh), th)?;
            sys.f = extract_rhs(&sys, &f.obs)?;
            Ok((project(&sys, &basis, &weights)?, basis.reduce(&f.obs)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (instances, reduced): (Vec<_>, Vec<_>) = projected.into_iter().unzip();
    timings.push(("projection".to_string(), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let kept_thetas: Vec<Vec<f64>> = kept.iter().map(|(th, _)| th.clone()).collect();
    let kriging = kept.len() >= 3;
    if kriging {
        PodKrigSurrogate::fit(&kept_thetas, &reduced, &GpOptions::default())?.save(out.join(GP_FILE))?;
    } else {
        log::warn!("{} snapshots are too few for Kriging; surrogate not built", kept.len());
        let _ = std::fs::remove_file(out.join(GP_FILE));
    }
    timings.push(("kriging".to_string(), t.elapsed().as_secs_f64()));

    let ks = basis.ks().to_vec();
    let cells = basis.n;
    let db = RomDatabase::new(instances, reduced, basis, deim, serde_json::to_string(cfg)?)?;
    db.save(out.join(DB_FILE))?;

    let manifest = BuildManifest {
        config: cfg.clone(),
        thetas: kept_thetas,
        skipped,
        ks,
        cells,
        fom_seconds: kept.iter().map(|(_, f)| f.seconds).collect(),
        fom_histories: kept.iter().map(|(_, f)| f.history.clone()).collect(),
        timings,
        kriging,
    };
    write_json(&out.join(BUILD_MANIFEST), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseErrors {
    pub cp: f64,
    pub cl: f64,
    pub cd: f64,
}

impl CaseErrors {
    fn between(model: &AeroCoefficients, fom: &AeroCoefficients) -> Result<Self> {
        Ok(Self { cp: cp_error(&fom.cp, &model.cp)?, cl: scalar_error(model.cl, fom.cl)?, cd: scalar_error(model.cd, fom.cd)? })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCase {
    pub theta: Vec<f64>,
    pub arc: Vec<f64>,
    pub x_over_c: Vec<f64>,
    pub fom: AeroCoefficients,
    pub rom: AeroCoefficients,
    pub krig: Option<AeroCoefficients>,
    pub rom_errors: CaseErrors,
    pub krig_errors: Option<CaseErrors>,
    pub constraint_norm: f64,
    pub fom_seconds: f64,
    pub rom_seconds: f64,
    pub krig_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub cases: Vec<ValidationCase>,
    pub max_cp_error: f64,
    pub mean_cp_error: f64,
    pub cl_within: usize,
    pub thresholds: crate::config::ValidateConfig,
    pub passed: bool,
}

/// Holdout parameters for a configuration.
pub fn holdout_thetas(problem: &Problem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    uniform(&problem.bounds, count, seed)
}

/// Compare POD-Proj and POD-Krig with fresh FOM solves at holdout points.
pub fn cmd_validate(cfg: &RunConfig, dir: &Path) -> Result<ValidationReport> {
    let models = Models::load(dir)?;
    let v = &cfg.validate;
    let thetas = holdout_thetas(&models.problem, v.holdout, v.seed);
    let mut cases = Vec::with_capacity(thetas.len());
    for th in thetas {
        let fom = models.problem.fom_at(&th)?;
        let t = Instant::now();
        let mesh = models.problem.mesh_at(&th)?;
        let rom = models.predict(&th, &mesh, &cfg.rom)?;
        let rom_seconds = t.elapsed().as_secs_f64();
        let (krig, krig_seconds) = if models.krig.is_some() {
            let t = Instant::now();
            let k = models.krig_predict(&th, &mesh)?;
            (Some(k), Some(t.elapsed().as_secs_f64()))
        } else {
            (None, None)
        };
        cases.push(ValidationCase {
            arc: wall_arc_length(&mesh)?,
            x_over_c: wall_x_over_c(&mesh)?,
            rom_errors: CaseErrors::between(&rom.aero, &fom.aero)?,
            krig_errors: krig.as_ref().map(|k| CaseErrors::between(k, &fom.aero)).transpose()?,
            constraint_norm: rom.solution.constraint_norm,
            theta: th,
            fom: fom.aero,
            rom: rom.aero,
            krig,
            fom_seconds: fom.seconds,
            rom_seconds,
            krig_seconds,
        });
    }
    let cp: Vec<f64> = cases.iter().map(|c| c.rom_errors.cp).collect();
    let max_cp_error = cp.iter().cloned().fold(0.0, f64::max);
    let mean_cp_error = if cp.is_empty() { 0.0 } else { cp.iter().sum::<f64>() / cp.len() as f64 };
    let cl_within = cases.iter().filter(|c| c.rom_errors.cl <= v.cl_error).count();
    let passed = max_cp_error <= v.max_cp_error && mean_cp_error <= v.mean_cp_error && cl_within >= v.cl_required;
    let report = ValidationReport { cases, max_cp_error, mean_cp_error, cl_within, thresholds: v.clone(), passed };
    write_json(&dir.join(VALIDATE_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseReport {
    pub target_theta: Option<Vec<f64>>,
    pub best_theta: Vec<f64>,
    /// |best - target| / box width per coordinate (self-target runs only).
    pub relative_error: Option<Vec<f64>>,
    pub ga: GaResult,
    pub seconds: f64,
}

/// Read a target C_P file with `s,cp` columns (normalized wall arc length).
pub fn read_target_cp(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut s = Vec::new();
    let mut cp = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Format(format!("{}: line {}", path.display(), i + 1)));
        if parts.len() < 2 {
            return Err(Error::Format(format!("{}: line {} needs s,cp", path.display(), i + 1)));
        }
        s.push(parse(parts[0])?);
        cp.push(parse(parts[1])?);
    }
    if s.is_empty() {
        return Err(Error::Format(format!("{} holds no C_P samples", path.display())));
    }
    Ok((s, cp))
}

/// GA search for the parameters whose ROM C_P matches a target.
pub fn cmd_inverse_design(cfg: &RunConfig, dir: &Path, target: Option<&Path>) -> Result<InverseReport> {
    let models = Models::load(dir)?;
    let inv = &cfg.inverse;
    let arc = wall_arc_length(&models.template)?;
    let (target_theta, target_cp) = match target {
        Some(path) => {
            let (s, cp) = read_target_cp(path)?;
            let cp = if s.len() == arc.len() { cp } else { resample(&s, &cp, &arc)? };
            (None, cp)
        }
        None => {
            let b = &models.problem.bounds;
            let th = inv.target_theta.clone().unwrap_or_else(|| {
                (0..b.dim()).map(|j| b.lower[j] + [0.35, 0.65][j % 2] * b.width(j)).collect()
            });
            if !b.contains(&th) {
                return Err(Error::InvalidInput("inverse.target_theta lies outside the parameter box".into()));
            }
            let cp = models.wall_cp(&th, &inv.rom)?;
            write_csv(&dir.join(TARGET_FILE), &["s", "cp"], arc.iter().zip(&cp).map(|(s, c)| vec![*s, *c]))?;
            (Some(th), cp)
        }
    };
    let t = Instant::now();
    let fitness = |th: &[f64]| -> Option<f64> {
        let cp = models.wall_cp(th, &inv.rom).ok()?;
        Some(0.5 * cp.iter().zip(&target_cp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    };
    let ga = minimize(fitness, &models.problem.bounds, &inv.ga, inv.seed)?;
    let seconds = t.elapsed().as_secs_f64();
    let relative_error = target_theta.as_ref().map(|th| {
        (0..th.len()).map(|j| (ga.best[j] - th[j]).abs() / models.problem.bounds.width(j)).collect()
    });
    let report = InverseReport { target_theta, best_theta: ga.best.clone(), relative_error, ga, seconds };
    write_json(&dir.join(INVERSE_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodStats {
    pub cl: Statistics,
    pub cd: Statistics,
}

fn method_stats(cl: &[f64], cd: &[f64]) -> Result<MethodStats> {
    Ok(MethodStats { cl: statistics(cl)?, cd: statistics(cd)? })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KdePair {
    pub grid: Vec<f64>,
    pub proj: Vec<f64>,
    pub krig: Option<Vec<f64>>,
    pub proj_integral: f64,
    pub krig_integral: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UqReport {
    pub samples: Vec<Vec<f64>>,
    pub proj_cl: Vec<f64>,
    pub proj_cd: Vec<f64>,
    pub krig_cl: Option<Vec<f64>>,
    pub krig_cd: Option<Vec<f64>>,
    pub failures: Vec<usize>,
    pub proj: MethodStats,
    pub krig: Option<MethodStats>,
    /// FOM on the first `fom_control` samples, and both models on the same subset.
    pub fom_control: Option<MethodStats>,
    pub proj_control: Option<MethodStats>,
    pub krig_control: Option<MethodStats>,
    pub kde_cl: KdePair,
    pub kde_cd: KdePair,
    pub kurtosis_convention: String,
    pub rom_seconds: f64,
    pub krig_seconds: f64,
    pub fom_seconds: f64,
}

fn kde_pair(proj: &[f64], krig: Option<&[f64]>, bw: f64, points: usize) -> Result<KdePair> {
    let mut all = proj.to_vec();
    if let Some(k) = krig {
        all.extend_from_slice(k);
    }
    // Shared grid: a KDE over the pooled samples fixes the abscissae.
    let grid = gaussian_kde(&all, bw, points)?.grid;
    let on_grid = |x: &[f64]| -> Result<Kde> {
        let k = gaussian_kde(x, bw, points)?;
        let norm = 1.0 / (x.len() as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
        let density = grid.iter().map(|g| x.iter().map(|s| (-0.5 * ((g - s) / bw).powi(2)).exp()).sum::<f64>() * norm).collect();
        Ok(Kde { density, grid: grid.clone(), ..k })
    };
    let p = on_grid(proj)?;
    let k = krig.map(on_grid).transpose()?;
    Ok(KdePair {
        proj_integral: p.integral(),
        krig_integral: k.as_ref().map(Kde::integral),
        grid: grid.clone(),
        proj: p.density,
        krig: k.map(|k| k.density),
    })
}

/// Monte Carlo propagation of uniform shape uncertainty through both surrogates.
pub fn cmd_uq(cfg: &RunConfig, dir: &Path) -> Result<UqReport> {
    let models = Models::load(dir)?;
    let u = &cfg.uq;
    let samples = uniform(&models.problem.bounds, u.samples, u.seed);
    let t = Instant::now();
    let proj: Vec<Result<(f64, f64)>> = samples
        .par_iter()
        .map(|th| {
            let mesh = models.problem.mesh_at(th)?;
            let p = models.predict(th, &mesh, &cfg.rom)?;
            Ok((p.aero.cl, p.aero.cd))
        })
        .collect();
    let rom_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let krig: Option<Vec<Result<(f64, f64)>>> = models.krig.as_ref().map(|_| {
        samples
            .par_iter()
            .map(|th| {
                let mesh = models.problem.mesh_at(th)?;
                let a = models.krig_predict(th, &mesh)?;
                Ok((a.cl, a.cd))
            })
            .collect()
    });
    let krig_seconds = t.elapsed().as_secs_f64();
    let mut failures = Vec::new();
    for (i, r) in proj.iter().enumerate() {
        let kfail = krig.as_ref().is_some_and(|k| k[i].is_err());
        if r.is_err() || kfail {
            failures.push(i);
        }
    }
    if failures.len() == samples.len() {
        return Err(Error::InvalidInput("every UQ sample failed".into()));
    }
    let ok = |i: &usize| !failures.contains(i);
    let keep: Vec<usize> = (0..samples.len()).filter(ok).collect();
    let pick = |v: &[Result<(f64, f64)>], idx: &[usize], which: usize| -> Vec<f64> {
        idx.iter().map(|&i| v[i].as_ref().map(|p| if which == 0 { p.0 } else { p.1 }).unwrap()).collect()
    };
    let (proj_cl, proj_cd) = (pick(&proj, &keep, 0), pick(&proj, &keep, 1));
    let (krig_cl, krig_cd) = match &krig {
        Some(k) => (Some(pick(k, &keep, 0)), Some(pick(k, &keep, 1))),
        None => (None, None),
    };

    let t = Instant::now();
    let control: Vec<usize> = keep.iter().cloned().filter(|&i| i < u.fom_control).collect();
    let fom: Vec<(f64, f64)> = control
        .par_iter()
        .map(|&i| models.problem.fom_at(&samples[i]).map(|f| (f.aero.cl, f.aero.cd)))
        .collect::<Result<_>>()?;
    let fom_seconds = t.elapsed().as_secs_f64();
    let (fom_control, proj_control, krig_control) = if control.is_empty() {
        (None, None, None)
    } else {
        let f_cl: Vec<f64> = fom.iter().map(|p| p.0).collect();
        let f_cd: Vec<f64> = fom.iter().map(|p| p.1).collect();
        let kc = match &krig {
            Some(k) => Some(method_stats(&pick(k, &control, 0), &pick(k, &control, 1))?),
            None => None,
        };
        (
            Some(method_stats(&f_cl, &f_cd)?),
            Some(method_stats(&pick(&proj, &control, 0), &pick(&proj, &control, 1))?),
            kc,
        )
    };
    let report = UqReport {
        proj: method_stats(&proj_cl, &proj_cd)?,
        krig: match (&krig_cl, &krig_cd) {
            (Some(a), Some(b)) => Some(method_stats(a, b)?),
            _ => None,
        },
        kde_cl: kde_pair(&proj_cl, krig_cl.as_deref(), u.bandwidth_cl, u.kde_points)?,
        kde_cd: kde_pair(&proj_cd, krig_cd.as_deref(), u.bandwidth_cd, u.kde_points)?,
        samples,
        proj_cl,
        proj_cd,
        krig_cl,
        krig_cd,
        failures,
        fom_control,
        proj_control,
        krig_control,
        kurtosis_convention: "non-excess".into(),
        rom_seconds,
        krig_seconds,
        fom_seconds,
    };
    write_json(&dir.join(UQ_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub build: Option<serde_json::Value>,
    pub validate: Option<serde_json::Value>,
    pub inverse: Option<serde_json::Value>,
    pub uq: Option<serde_json::Value>,
}

/// Turn run artifacts into plot-ready CSV files and a summary JSON.
pub fn cmd_report(dir: &Path) -> Result<ReportSummary> {
    let expected = [BUILD_MANIFEST, VALIDATE_FILE, INVERSE_FILE, UQ_FILE];
    if !expected.iter().any(|f| dir.join(f).exists()) {
        return Err(Error::InvalidInput(format!(
            "{} holds no run artifacts; expected one of: {}",
            dir.display(),
            expected.join(", ")
        )));
    }
    let out = dir.join(REPORT_DIR);
    std::fs::create_dir_all(&out)?;
    let mut files = Vec::new();
    let mut summary = ReportSummary { files: Vec::new(), build: None, validate: None, inverse: None, uq: None };

    if dir.join(BUILD_MANIFEST).exists() {
        let m: BuildManifest = read_json(&dir.join(BUILD_MANIFEST))?;
        let path = out.join("fom_convergence.csv");
        let rows = m.fom_histories.iter().enumerate().flat_map(|(c, h)| {
            h.iter().enumerate().map(move |(i, r)| vec![c as f64, (i * 100) as f64, *r])
        });
        write_csv(&path, &["case", "iteration", "residual_ratio"], rows)?;
        files.push(path);
        summary.build = Some(serde_json::json!({
            "snapshots": m.thetas.len(),
            "skipped": m.skipped.len(),
            "ks": m.ks,
            "cells": m.cells,
            "timings": m.timings,
        }));
    }
    if dir.join(VALIDATE_FILE).exists() {
        let r: ValidationReport = read_json(&dir.join(VALIDATE_FILE))?;
        for (i, c) in r.cases.iter().enumerate() {
            let path = out.join(format!("cp_case_{}.csv", i + 1));
            let krig = c.krig.as_ref().map(|k| k.cp.clone()).unwrap_or_else(|| vec![f64::NAN; c.fom.cp.len()]);
            let rows = (0..c.fom.cp.len()).map(|j| vec![c.arc[j], c.x_over_c[j], c.rom.cp[j], krig[j], c.fom.cp[j]]);
            write_csv(&path, &["s", "x_over_c", "cp_rom", "cp_krig", "cp_fom"], rows)?;
            files.push(path);
        }
        summary.validate = Some(serde_json::json!({
            "max_cp_error": r.max_cp_error,
            "mean_cp_error": r.mean_cp_error,
            "cl_within": r.cl_within,
            "passed": r.passed,
            "cases": r.cases.iter().map(|c| serde_json::json!({
                "theta": c.theta, "rom": c.rom_errors, "krig": c.krig_errors,
                "fom_seconds": c.fom_seconds, "rom_seconds": c.rom_seconds,
            })).collect::<Vec<_>>(),
        }));
    }
    if dir.join(INVERSE_FILE).exists() {
        let r: InverseReport = read_json(&dir.join(INVERSE_FILE))?;
        let path = out.join("ga_history.csv");
        let rows = r.ga.history.iter().map(|g| vec![g.generation as f64, g.best, g.mean, g.evaluations as f64]);
        write_csv(&path, &["generation", "best", "mean", "evaluations"], rows)?;
        files.push(path);
        summary.inverse = Some(serde_json::json!({
            "best_theta": r.best_theta,
            "target_theta": r.target_theta,
            "relative_error": r.relative_error,
            "evaluations": r.ga.evaluations,
            "seconds": r.seconds,
        }));
    }
    if dir.join(UQ_FILE).exists() {
        let r: UqReport = read_json(&dir.join(UQ_FILE))?;
        for (name, k) in [("kde_cl.csv", &r.kde_cl), ("kde_cd.csv", &r.kde_cd)] {
            let path = out.join(name);
            let krig = k.krig.clone().unwrap_or_else(|| vec![f64::NAN; k.grid.len()]);
            let rows = (0..k.grid.len()).map(|i| vec![k.grid[i], k.proj[i], krig[i]]);
            write_csv(&path, &["value", "density_proj", "density_krig"], rows)?;
            files.push(path);
        }
        let path = out.join("uq_statistics.csv");
        let mut rows = Vec::new();
        for (label, s) in [("proj", Some(&r.proj)), ("krig", r.krig.as_ref()), ("fom_control", r.fom_control.as_ref())] {
            if let Some(s) = s {
                rows.push(format!(
                    "{label},{},{},{},{},{},{},{},{},{},{}",
                    s.cl.mean, s.cl.median, s.cl.std, s.cl.skewness, s.cl.kurtosis,
                    s.cd.mean, s.cd.median, s.cd.std, s.cd.skewness, s.cd.kurtosis
                ));
            }
        }
        std::fs::write(
            &path,
            format!(
                "method,cl_mean,cl_median,cl_std,cl_skewness,cl_kurtosis,cd_mean,cd_median,cd_std,cd_skewness,cd_kurtosis\n{}\n",
                rows.join("\n")
            ),
        )?;
        files.push(path);
        summary.uq = Some(serde_json::json!({
            "samples": r.samples.len(),
            "failures": r.failures.len(),
            "proj": r.proj,
            "krig": r.krig,
            "fom_control": r.fom_control,
            "kurtosis_convention": r.kurtosis_convention,
        }));
    }
    let path = out.join("summary.json");
    files.push(path.clone());
    summary.files = files;
    write_json(&path, &summary)?;
    Ok(summary)
}
