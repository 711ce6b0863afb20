//! Structured O-meshes around airfoils and the face-based mesh container
//! used by the finite-volume code.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{cosine_spacing, AirfoilShape};

pub const WALL: &str = "wall";
pub const FARFIELD: &str = "farfield";

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub owner: usize,
    pub neighbor: Option<usize>,
    /// Unit normal pointing out of the owner cell.
    pub normal: [f64; 2],
    pub area: f64,
    pub patch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub name: String,
    pub faces: Vec<usize>,
}

/// Cell-centred finite-volume mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub cell_centers: Vec<[f64; 2]>,
    pub cell_volumes: Vec<f64>,
    pub faces: Vec<Face>,
    pub patches: Vec<Patch>,
    /// Face midpoints; only known for generated meshes.
    pub face_centers: Option<Vec<[f64; 2]>>,
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.cell_volumes.len()
    }

    pub fn patch(&self, name: &str) -> Option<&Patch> {
        self.patches.iter().find(|p| p.name == name)
    }

    pub fn patch_id(&self, name: &str) -> Option<usize> {
        self.patches.iter().position(|p| p.name == name)
    }

    /// Largest per-cell norm of the closed-surface sum `sum_f A_f n_f`.
    pub fn closure_residual(&self) -> f64 {
        let mut acc = vec![[0.0f64; 2]; self.n_cells()];
        for f in &self.faces {
            acc[f.owner][0] += f.area * f.normal[0];
            acc[f.owner][1] += f.area * f.normal[1];
            if let Some(nb) = f.neighbor {
                acc[nb][0] -= f.area * f.normal[0];
                acc[nb][1] -= f.area * f.normal[1];
            }
        }
        acc.iter().map(|a| a[0].hypot(a[1])).fold(0.0, f64::max)
    }

    /// Face ids adjacent to each cell.
    pub fn cell_faces(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_cells()];
        for (i, f) in self.faces.iter().enumerate() {
            out[f.owner].push(i);
            if let Some(nb) = f.neighbor {
                out[nb].push(i);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_cells();
        if self.cell_centers.len() != n {
            return Err(Error::Dimension("cell centers and volumes differ in length".into()));
        }
        if let Some((i, &v)) = self.cell_volumes.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::InvalidCell { index: i, area: v });
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.owner >= n || f.neighbor.is_some_and(|nb| nb >= n || nb == f.owner) {
                return Err(Error::InvalidInput(format!("face {i} has invalid cell references")));
            }
            if f.neighbor.is_none() != f.patch.is_some() {
                return Err(Error::InvalidInput(format!("face {i}: boundary faces need exactly one patch")));
            }
        }
        Ok(())
    }

    /// Writes the text mesh format with 17 significant digits.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "liftrom-mesh v1 {} {}", self.n_cells(), self.faces.len()).unwrap();
        for (c, v) in self.cell_centers.iter().zip(&self.cell_volumes) {
            writeln!(s, "{:.16e} {:.16e} {:.16e}", c[0], c[1], v).unwrap();
        }
        for f in &self.faces {
            let nb = f.neighbor.map_or(-1, |n| n as i64);
            let pid = f.patch.map_or(-1, |p| p as i64);
            writeln!(
                s,
                "{} {} {:.16e} {:.16e} {:.16e} {}",
                f.owner, nb, f.normal[0], f.normal[1], f.area, pid
            )
            .unwrap();
        }
        writeln!(s, "patches {}", self.patches.len()).unwrap();
        for (i, p) in self.patches.iter().enumerate() {
            writeln!(s, "{i} {}", p.name).unwrap();
        }
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("mesh file: {msg}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != "liftrom-mesh" || header[1] != "v1" {
            return Err(bad("unrecognised header"));
        }
        let nc: usize = header[2].parse().map_err(|_| bad("cell count"))?;
        let nf: usize = header[3].parse().map_err(|_| bad("face count"))?;
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad("number"));
        let mut cell_centers = Vec::with_capacity(nc);
        let mut cell_volumes = Vec::with_capacity(nc);
        for _ in 0..nc {
            let t: Vec<&str> = lines.next().ok_or_else(|| bad("truncated cells"))?.split_whitespace().collect();
            if t.len() != 3 {
                return Err(bad("cell record"));
            }
            cell_centers.push([num(t[0])?, num(t[1])?]);
            cell_volumes.push(num(t[2])?);
        }
        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            let t: Vec<&str> = lines.next().ok_or_else(|| bad("truncated faces"))?.split_whitespace().collect();
            if t.len() != 6 {
                return Err(bad("face record"));
            }
            let idx = |s: &str| s.parse::<i64>().map_err(|_| bad("index"));
            let owner = idx(t[0])?;
            let nb = idx(t[1])?;
            let pid = idx(t[5])?;
            if owner < 0 {
                return Err(bad("negative owner"));
            }
            faces.push(Face {
                owner: owner as usize,
                neighbor: (nb >= 0).then_some(nb as usize),
                normal: [num(t[2])?, num(t[3])?],
                area: num(t[4])?,
                patch: (pid >= 0).then_some(pid as usize),
            });
        }
        let t: Vec<&str> = lines.next().ok_or_else(|| bad("missing patch table"))?.split_whitespace().collect();
        if t.len() != 2 || t[0] != "patches" {
            return Err(bad("patch table header"));
        }
        let np: usize = t[1].parse().map_err(|_| bad("patch count"))?;
        let mut patches = Vec::with_capacity(np);
        for i in 0..np {
            let t: Vec<&str> = lines.next().ok_or_else(|| bad("truncated patch table"))?.split_whitespace().collect();
            if t.len() != 2 || t[0].parse::<usize>().ok() != Some(i) {
                return Err(bad("patch record"));
            }
            patches.push(Patch { name: t[1].to_string(), faces: Vec::new() });
        }
        for (i, f) in faces.iter().enumerate() {
            if let Some(p) = f.patch {
                patches.get_mut(p).ok_or_else(|| bad("patch id out of range"))?.faces.push(i);
            }
        }
        let mesh = Mesh { cell_centers, cell_volumes, faces, patches, face_centers: None };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// O-mesh sizing.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OMeshSpec {
    pub n_wrap: usize,
    pub n_radial: usize,
    /// Far-field radius in chords.
    pub far_radius: f64,
    /// Geometric growth ratio between adjacent radial layers.
    pub stretch: f64,
}

impl OMeshSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_wrap < 32 || self.n_wrap % 2 != 0 {
            return Err(Error::InvalidInput(format!("n_wrap must be even and >= 32, got {}", self.n_wrap)));
        }
        if self.n_radial < 8 {
            return Err(Error::InvalidInput(format!("n_radial must be >= 8, got {}", self.n_radial)));
        }
        if !(self.far_radius >= 10.0) {
            return Err(Error::InvalidInput(format!("far_radius must be >= 10 chords, got {}", self.far_radius)));
        }
        if !(self.stretch >= 1.0) {
            return Err(Error::InvalidInput(format!("stretch must be >= 1, got {}", self.stretch)));
        }
        Ok(())
    }

    /// Number of chord stations the airfoil should be sampled at so that
    /// surface nodes coincide with samples.
    pub fn surface_samples(&self) -> usize {
        self.n_wrap / 2 + 1
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v < x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[xs.len() - 1];
    }
    if xs[i] == x {
        return ys[i];
    }
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

fn radial_fractions(n: usize, stretch: f64) -> Vec<f64> {
    if (stretch - 1.0).abs() < 1e-12 {
        return (0..=n).map(|k| k as f64 / n as f64).collect();
    }
    let total = stretch.powi(n as i32) - 1.0;
    let mut t: Vec<f64> = (0..=n).map(|k| (stretch.powi(k as i32) - 1.0) / total).collect();
    t[n] = 1.0;
    t
}

/// Algebraic O-grid: the airfoil is the inner boundary (`wall`) and a circle
/// of `far_radius` chords about mid-chord is the outer one (`farfield`).
/// Surface nodes are cosine-clustered; if `shape` was sampled elsewhere it is
/// linearly resampled. Cells are numbered layer by layer from the wall.
pub fn generate_omesh(shape: &AirfoilShape, spec: &OMeshSpec) -> Result<Mesh> {
    spec.validate()?;
    shape.validate()?;
    let nw = spec.n_wrap;
    let half = nw / 2;
    let psi = cosine_spacing(half + 1);
    let (upper, lower): (Vec<f64>, Vec<f64>) = if shape.psi == psi {
        (shape.y_upper.clone(), shape.y_lower.clone())
    } else {
        (
            psi.iter().map(|&p| interp(&shape.psi, &shape.y_upper, p)).collect(),
            psi.iter().map(|&p| interp(&shape.psi, &shape.y_lower, p)).collect(),
        )
    };
    // Node j walks trailing edge -> upper surface -> leading edge -> lower surface.
    let inner: Vec<[f64; 2]> = (0..nw)
        .map(|j| if j <= half { [psi[half - j], upper[half - j]] } else { [psi[j - half], lower[j - half]] })
        .collect();
    let outer: Vec<[f64; 2]> = (0..nw)
        .map(|j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / nw as f64;
            [0.5 + spec.far_radius * phi.cos(), spec.far_radius * phi.sin()]
        })
        .collect();
    build_ogrid(&inner, &outer, spec.n_radial, spec.stretch, [WALL, FARFIELD])
}

/// Annulus between two circles about the origin with both boundaries tagged `farfield`.
pub fn generate_annulus(n_wrap: usize, n_radial: usize, r_inner: f64, r_outer: f64, stretch: f64) -> Result<Mesh> {
    if n_wrap < 4 || n_radial < 1 || !(r_inner > 0.0 && r_outer > r_inner) {
        return Err(Error::InvalidInput("annulus needs n_wrap >= 4, n_radial >= 1, 0 < r_inner < r_outer".into()));
    }
    let circle = |r: f64| -> Vec<[f64; 2]> {
        (0..n_wrap)
            .map(|j| {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / n_wrap as f64;
                [r * phi.cos(), r * phi.sin()]
            })
            .collect()
    };
    build_ogrid(&circle(r_inner), &circle(r_outer), n_radial, stretch, [FARFIELD, FARFIELD])
}

fn build_ogrid(
    inner: &[[f64; 2]],
    outer: &[[f64; 2]],
    n_radial: usize,
    stretch: f64,
    names: [&str; 2],
) -> Result<Mesh> {
    let nw = inner.len();
    let t = radial_fractions(n_radial, stretch);
    let node = |j: usize, k: usize| -> [f64; 2] {
        let j = j % nw;
        let (a, b) = (inner[j], outer[j]);
        [a[0] + t[k] * (b[0] - a[0]), a[1] + t[k] * (b[1] - a[1])]
    };
    let cell = |j: usize, k: usize| k * nw + (j % nw);
    let n_cells = nw * n_radial;
    let mut cell_centers = Vec::with_capacity(n_cells);
    let mut cell_volumes = Vec::with_capacity(n_cells);
    for k in 0..n_radial {
        for j in 0..nw {
            // Counter-clockwise corner order.
            let poly = [node(j, k), node(j, k + 1), node(j + 1, k + 1), node(j + 1, k)];
            let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
            for i in 0..4 {
                let (p, q) = (poly[i], poly[(i + 1) % 4]);
                let cr = p[0] * q[1] - q[0] * p[1];
                a += cr;
                cx += (p[0] + q[0]) * cr;
                cy += (p[1] + q[1]) * cr;
            }
            a *= 0.5;
            if !(a > 0.0) {
                return Err(Error::InvalidCell { index: cell(j, k), area: a });
            }
            cell_centers.push([cx / (6.0 * a), cy / (6.0 * a)]);
            cell_volumes.push(a);
        }
    }

    let mut faces = Vec::new();
    let mut face_centers = Vec::new();
    // Edge p -> q traversed counter-clockwise around the owner: outward normal (dy, -dx).
    let mut push = |p: [f64; 2], q: [f64; 2], owner: usize, neighbor: Option<usize>, patch: Option<usize>| {
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let len = dx.hypot(dy);
        faces.push(Face { owner, neighbor, normal: [dy / len, -dx / len], area: len, patch });
        face_centers.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
    };
    for k in 0..n_radial {
        for j in 0..nw {
            push(node(j, k), node(j, k + 1), cell(j, k), Some(cell(j + nw - 1, k)), None);
        }
    }
    for k in 1..n_radial {
        for j in 0..nw {
            push(node(j + 1, k), node(j, k), cell(j, k), Some(cell(j, k - 1)), None);
        }
    }
    for j in 0..nw {
        push(node(j + 1, 0), node(j, 0), cell(j, 0), None, Some(0));
    }
    for j in 0..nw {
        push(node(j, n_radial), node(j + 1, n_radial), cell(j, n_radial - 1), None, Some(1));
    }
    let first_inner = 2 * nw * n_radial - nw;
    let first_outer = first_inner + nw;
    let n_faces = faces.len();
    let patches = if names[0] == names[1] {
        for f in &mut faces[first_inner..] {
            f.patch = Some(0);
        }
        vec![Patch { name: names[0].into(), faces: (first_inner..n_faces).collect() }]
    } else {
        vec![
            Patch { name: names[0].into(), faces: (first_inner..first_outer).collect() },
            Patch { name: names[1].into(), faces: (first_outer..n_faces).collect() },
        ]
    };
    let mesh = Mesh { cell_centers, cell_volumes, faces, patches, face_centers: Some(face_centers) };
    mesh.validate()?;
    Ok(mesh)
}

/// Index map `(j, k) -> (n_wrap - 1 - j, k)` mirroring an O-mesh about the chord line.
pub fn mirror_cells(n_wrap: usize, n_radial: usize) -> Vec<usize> {
    (0..n_radial)
        .flat_map(|k| (0..n_wrap).map(move |j| k * n_wrap + (n_wrap - 1 - j)))
        .collect()
}
