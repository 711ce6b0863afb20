//! Green-Gauss cell gradients on a face-based mesh.
//!
//! `(Gx u)_i = (1/V_i) sum_f u_f n_x A_f` with `u_f` the arithmetic mean of
//! the two adjacent cell values on interior faces. Boundary faces are not
//! baked into `Gx`/`Gy`; each one is kept as a [`ClosureEntry`] holding the
//! coefficient applied to a prescribed face value.

use std::collections::HashMap;

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureEntry {
    pub face: usize,
    pub cell: usize,
    pub patch: usize,
    /// `n_x A_f / V_cell`
    pub cx: f64,
    /// `n_y A_f / V_cell`
    pub cy: f64,
}

#[derive(Debug, Clone)]
pub struct GradientOperators {
    pub gx: CsrMatrix<f64>,
    pub gy: CsrMatrix<f64>,
    pub closure: Vec<ClosureEntry>,
    pub patch_names: Vec<String>,
}

/// Prescribed boundary-face values keyed by global face index.
pub type BoundaryValues = HashMap<usize, f64>;

pub fn assemble_gradient_ops(mesh: &Mesh) -> GradientOperators {
    let n = mesh.n_cells();
    let mut gx = CooMatrix::new(n, n);
    let mut gy = CooMatrix::new(n, n);
    let mut closure = Vec::new();
    for i in 0..n {
        // Keeps the diagonal structurally present so extrapolated patches can be folded in.
        gx.push(i, i, 0.0);
        gy.push(i, i, 0.0);
    }
    for (fi, f) in mesh.faces.iter().enumerate() {
        let (o, [nx, ny], a) = (f.owner, f.normal, f.area);
        match f.neighbor {
            Some(nb) => {
                let (vo, vn) = (mesh.cell_volumes[o], mesh.cell_volumes[nb]);
                for (col, w) in [(o, 0.5), (nb, 0.5)] {
                    gx.push(o, col, w * nx * a / vo);
                    gy.push(o, col, w * ny * a / vo);
                    gx.push(nb, col, -w * nx * a / vn);
                    gy.push(nb, col, -w * ny * a / vn);
                }
            }
            None => {
                let v = mesh.cell_volumes[o];
                closure.push(ClosureEntry {
                    face: fi,
                    cell: o,
                    patch: f.patch.expect("boundary face without patch"),
                    cx: nx * a / v,
                    cy: ny * a / v,
                });
            }
        }
    }
    GradientOperators {
        gx: CsrMatrix::from(&gx),
        gy: CsrMatrix::from(&gy),
        closure,
        patch_names: mesh.patches.iter().map(|p| p.name.clone()).collect(),
    }
}

/// `out = M x` for a CSR matrix.
pub fn csr_mul(m: &CsrMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (offsets, cols, vals) = (m.row_offsets(), m.col_indices(), m.values());
    for (r, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in offsets[r]..offsets[r + 1] {
            s += vals[k] * x[cols[k]];
        }
        *o = s;
    }
}

impl GradientOperators {
    pub fn n_cells(&self) -> usize {
        self.gx.nrows()
    }

    pub fn patch_id(&self, name: &str) -> Option<usize> {
        self.patch_names.iter().position(|p| p == name)
    }

    /// Interior-face part only.
    pub fn apply_interior(&self, field: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_cells();
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        csr_mul(&self.gx, field, &mut gx);
        csr_mul(&self.gy, field, &mut gy);
        (gx, gy)
    }

    /// Boundary-closure contribution for the given face values.
    pub fn closure_contribution(&self, values: &BoundaryValues) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n_cells();
        let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
        for e in &self.closure {
            let v = *values.get(&e.face).ok_or_else(|| Error::MissingBoundaryValue {
                patch: self.patch_names[e.patch].clone(),
                face: e.face,
            })?;
            bx[e.cell] += e.cx * v;
            by[e.cell] += e.cy * v;
        }
        Ok((bx, by))
    }

    /// Full Green-Gauss gradient: interior operator plus boundary closure.
    pub fn apply_with_boundary(&self, field: &[f64], values: &BoundaryValues) -> Result<(Vec<f64>, Vec<f64>)> {
        if field.len() != self.n_cells() {
            return Err(Error::Dimension(format!("field of length {} on {} cells", field.len(), self.n_cells())));
        }
        let (mut gx, mut gy) = self.apply_interior(field);
        let (bx, by) = self.closure_contribution(values)?;
        for i in 0..gx.len() {
            gx[i] += bx[i];
            gy[i] += by[i];
        }
        Ok((gx, gy))
    }

    /// Folds the faces of `patch` into the operators with the face value
    /// taken from the owner cell; the closure keeps the remaining patches.
    pub fn with_extrapolated(&self, patch: &str) -> Result<Self> {
        let pid = self
            .patch_id(patch)
            .ok_or_else(|| Error::InvalidInput(format!("no patch named `{patch}`")))?;
        let mut gx = self.gx.clone();
        let mut gy = self.gy.clone();
        for e in self.closure.iter().filter(|e| e.patch == pid) {
            *diag_mut(&mut gx, e.cell) += e.cx;
            *diag_mut(&mut gy, e.cell) += e.cy;
        }
        Ok(Self {
            gx,
            gy,
            closure: self.closure.iter().filter(|e| e.patch != pid).copied().collect(),
            patch_names: self.patch_names.clone(),
        })
    }

    /// Values equal to `value` on every boundary face still in the closure.
    pub fn uniform_boundary(&self, value: f64) -> BoundaryValues {
        self.closure.iter().map(|e| (e.face, value)).collect()
    }
}

fn diag_mut(m: &mut CsrMatrix<f64>, i: usize) -> &mut f64 {
    m.get_entry_mut(i, i)
        .and_then(|e| match e {
            nalgebra_sparse::SparseEntryMut::NonZero(v) => Some(v),
            nalgebra_sparse::SparseEntryMut::Zero => None,
        })
        .expect("diagonal is structurally present")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{evaluate_airfoil, CstAirfoil};
    use crate::mesh::{generate_omesh, mirror_cells, Face, OMeshSpec, Patch};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    /// Uniform Cartesian `nx x ny` patch of unit-spacing `h`, all boundary faces on patch 0.
    pub(crate) fn cartesian(nx: usize, ny: usize, h: f64) -> Mesh {
        let id = |i: usize, j: usize| j * nx + i;
        let mut centers = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                centers.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            }
        }
        let mut faces = Vec::new();
        let mut centers_f = Vec::new();
        for j in 0..ny {
            for i in 0..=nx {
                let c = [i as f64 * h, (j as f64 + 0.5) * h];
                let f = if i == 0 {
                    Face { owner: id(0, j), neighbor: None, normal: [-1.0, 0.0], area: h, patch: Some(0) }
                } else if i == nx {
                    Face { owner: id(nx - 1, j), neighbor: None, normal: [1.0, 0.0], area: h, patch: Some(0) }
                } else {
                    Face { owner: id(i - 1, j), neighbor: Some(id(i, j)), normal: [1.0, 0.0], area: h, patch: None }
                };
                faces.push(f);
                centers_f.push(c);
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let c = [(i as f64 + 0.5) * h, j as f64 * h];
                let f = if j == 0 {
                    Face { owner: id(i, 0), neighbor: None, normal: [0.0, -1.0], area: h, patch: Some(0) }
                } else if j == ny {
                    Face { owner: id(i, ny - 1), neighbor: None, normal: [0.0, 1.0], area: h, patch: Some(0) }
                } else {
                    Face { owner: id(i, j - 1), neighbor: Some(id(i, j)), normal: [0.0, 1.0], area: h, patch: None }
                };
                faces.push(f);
                centers_f.push(c);
            }
        }
        let bfaces = faces.iter().enumerate().filter(|(_, f)| f.neighbor.is_none()).map(|(i, _)| i).collect();
        Mesh {
            cell_volumes: vec![h * h; nx * ny],
            cell_centers: centers,
            faces,
            patches: vec![Patch { name: "farfield".into(), faces: bfaces }],
            face_centers: Some(centers_f),
        }
    }

    fn exact_boundary(mesh: &Mesh, ops: &GradientOperators, f: impl Fn([f64; 2]) -> f64) -> BoundaryValues {
        let fc = mesh.face_centers.as_ref().unwrap();
        ops.closure.iter().map(|e| (e.face, f(fc[e.face]))).collect()
    }

    /// Dense Green-Gauss assembled straight from the face list.
    fn dense_oracle(mesh: &Mesh) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = mesh.n_cells();
        let mut gx = DMatrix::zeros(n, n);
        let mut gy = DMatrix::zeros(n, n);
        for f in &mesh.faces {
            if let Some(nb) = f.neighbor {
                for c in [f.owner, nb] {
                    gx[(f.owner, c)] += 0.5 * f.normal[0] * f.area / mesh.cell_volumes[f.owner];
                    gy[(f.owner, c)] += 0.5 * f.normal[1] * f.area / mesh.cell_volumes[f.owner];
                    gx[(nb, c)] -= 0.5 * f.normal[0] * f.area / mesh.cell_volumes[nb];
                    gy[(nb, c)] -= 0.5 * f.normal[1] * f.area / mesh.cell_volumes[nb];
                }
            }
        }
        (gx, gy)
    }

    fn small_omesh() -> Mesh {
        let spec = OMeshSpec { n_wrap: 32, n_radial: 12, far_radius: 12.0, stretch: 1.2 };
        generate_omesh(&evaluate_airfoil(&CstAirfoil::naca0012(), spec.surface_samples()).unwrap(), &spec).unwrap()
    }

    #[test]
    fn constant_field_is_annihilated() {
        for mesh in [cartesian(7, 5, 0.3), small_omesh()] {
            let ops = assemble_gradient_ops(&mesh);
            let c = 3.7;
            let u = vec![c; mesh.n_cells()];
            let (gx, gy) = ops.apply_with_boundary(&u, &ops.uniform_boundary(c)).unwrap();
            assert!(gx.iter().chain(&gy).all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let mesh = small_omesh();
        let ops = assemble_gradient_ops(&mesh);
        let (gx, gy) = ops.apply_with_boundary(&vec![0.0; mesh.n_cells()], &ops.uniform_boundary(0.0)).unwrap();
        assert!(gx.iter().chain(&gy).all(|&v| v == 0.0));
    }

    #[test]
    fn linear_field_is_exact_on_cartesian_patch() {
        let mesh = cartesian(9, 6, 0.25);
        let ops = assemble_gradient_ops(&mesh);
        let f = |p: [f64; 2]| 2.0 * p[0] - 0.5 * p[1] + 1.0;
        let u: Vec<f64> = mesh.cell_centers.iter().map(|&c| f(c)).collect();
        let (gx, gy) = ops.apply_with_boundary(&u, &exact_boundary(&mesh, &ops, f)).unwrap();
        for i in 0..mesh.n_cells() {
            assert!((gx[i] - 2.0).abs() < 1e-10 && (gy[i] + 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_field_matches_central_differences() {
        // Interior cells: Green-Gauss on x^2 equals the central difference (x_{i+1}^2 - x_{i-1}^2) / 2h,
        // and both approximate 2x with O(h^2) error.
        let mut prev_err = f64::INFINITY;
        for (n, h) in [(8usize, 0.25), (16, 0.125), (32, 0.0625)] {
            let mesh = cartesian(n, n, h);
            let ops = assemble_gradient_ops(&mesh);
            let u: Vec<f64> = mesh.cell_centers.iter().map(|c| c[0] * c[0]).collect();
            let (gx, _) = ops.apply_interior(&u);
            let mut err: f64 = 0.0;
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    let id = j * n + i;
                    let fd = (u[id + 1] - u[id - 1]) / (2.0 * h);
                    assert!((gx[id] - fd).abs() < 1e-10);
                    err = err.max((gx[id] - 2.0 * mesh.cell_centers[id][0]).abs());
                }
            }
            assert!(err <= prev_err / 3.9 || err < 1e-12);
            prev_err = err;
        }
    }

    #[test]
    fn sparse_action_matches_dense_oracle() {
        let mesh = small_omesh();
        assert!(mesh.n_cells() <= 512);
        let ops = assemble_gradient_ops(&mesh);
        let (dx, dy) = dense_oracle(&mesh);
        let u: Vec<f64> = mesh.cell_centers.iter().map(|c| (c[0] * 0.7).sin() + c[1] * c[1]).collect();
        let (gx, gy) = ops.apply_interior(&u);
        let ex = &dx * nalgebra::DVector::from_column_slice(&u);
        let ey = &dy * nalgebra::DVector::from_column_slice(&u);
        for i in 0..u.len() {
            assert!((gx[i] - ex[i]).abs() <= 1e-12 * ex[i].abs().max(1.0));
            assert!((gy[i] - ey[i]).abs() <= 1e-12 * ey[i].abs().max(1.0));
        }
    }

    #[test]
    fn operator_is_local() {
        let mesh = small_omesh();
        let ops = assemble_gradient_ops(&mesh);
        let adj = mesh.cell_faces();
        for (row, faces) in adj.iter().enumerate() {
            let mut allowed: Vec<usize> = faces
                .iter()
                .flat_map(|&f| [Some(mesh.faces[f].owner), mesh.faces[f].neighbor])
                .flatten()
                .collect();
            allowed.push(row);
            for m in [&ops.gx, &ops.gy] {
                let r = m.row(row);
                assert!(r.col_indices().iter().all(|c| allowed.contains(c)));
            }
        }
    }

    #[test]
    fn mirrored_mesh_flips_gy_only() {
        let spec = OMeshSpec { n_wrap: 32, n_radial: 10, far_radius: 12.0, stretch: 1.2 };
        let mesh = generate_omesh(&evaluate_airfoil(&CstAirfoil::naca0012(), spec.surface_samples()).unwrap(), &spec)
            .unwrap();
        let ops = assemble_gradient_ops(&mesh);
        let m = mirror_cells(32, 10);
        let (dx, dy) = (nalgebra_sparse::convert::serial::convert_csr_dense(&ops.gx), nalgebra_sparse::convert::serial::convert_csr_dense(&ops.gy));
        for i in 0..mesh.n_cells() {
            for j in 0..mesh.n_cells() {
                assert!((dx[(i, j)] - dx[(m[i], m[j])]).abs() < 1e-10);
                assert!((dy[(i, j)] + dy[(m[i], m[j])]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn missing_face_value_names_patch() {
        let mesh = small_omesh();
        let ops = assemble_gradient_ops(&mesh);
        let mut bv = ops.uniform_boundary(1.0);
        let gone = ops.closure[5].face;
        bv.remove(&gone);
        match ops.apply_with_boundary(&vec![1.0; mesh.n_cells()], &bv) {
            Err(Error::MissingBoundaryValue { patch, face }) => {
                assert_eq!(patch, "wall");
                assert_eq!(face, gone);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extrapolated_patch_folds_into_diagonal() {
        let mesh = small_omesh();
        let ops = assemble_gradient_ops(&mesh);
        let folded = ops.with_extrapolated("wall").unwrap();
        assert!(folded.closure.iter().all(|e| ops.patch_names[e.patch] == "farfield"));
        let u: Vec<f64> = mesh.cell_centers.iter().map(|c| c[0] - 2.0 * c[1]).collect();
        let mut bv = ops.uniform_boundary(0.0);
        for e in &ops.closure {
            if ops.patch_names[e.patch] == "wall" {
                bv.insert(e.face, u[e.cell]);
            }
        }
        let (a, b) = ops.apply_with_boundary(&u, &bv).unwrap();
        let (c, d) = folded.apply_with_boundary(&u, &folded.uniform_boundary(0.0)).unwrap();
        for i in 0..u.len() {
            assert!((a[i] - c[i]).abs() < 1e-12 && (b[i] - d[i]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn linear_exactness_any_gradient(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
            let mesh = cartesian(6, 5, 0.4);
            let ops = assemble_gradient_ops(&mesh);
            let f = |p: [f64; 2]| a * p[0] + b * p[1] + c;
            let u: Vec<f64> = mesh.cell_centers.iter().map(|&p| f(p)).collect();
            let (gx, gy) = ops.apply_with_boundary(&u, &exact_boundary(&mesh, &ops, f)).unwrap();
            for i in 0..u.len() {
                prop_assert!((gx[i] - a).abs() < 1e-10 && (gy[i] - b).abs() < 1e-10);
            }
        }
    }
}
