//! Exp/Log maps on the manifold of symmetric positive definite matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rom::symmetrize;

pub const EIG_FLOOR: f64 = 1e-14;

/// `V g(L) V^T` for a symmetric matrix with eigenvalues floored at `EIG_FLOOR * lambda_max`.
fn sym_fn(m: &DMatrix<f64>, g: impl Fn(f64) -> f64, require_pd: bool) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if require_pd && !(lmin > 0.0) {
        return Err(Error::NotPositiveDefinite { eigenvalue: lmin });
    }
    let floor = EIG_FLOOR * lmax.abs();
    let v = &eig.eigenvectors;
    let gl = eig.eigenvalues.map(|l| g(if require_pd { l.max(floor) } else { l }));
    let mut out = v * DMatrix::from_diagonal(&gl) * v.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Square root and inverse square root of an anchor, reusable across many maps.
#[derive(Debug, Clone)]
pub struct SpdAnchor {
    pub b0: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

impl SpdAnchor {
    pub fn new(b0: &DMatrix<f64>) -> Result<Self> {
        check_square(b0)?;
        let eig = b0.clone().symmetric_eigen();
        let lmin = eig.eigenvalues.min();
        if !(lmin > 0.0) {
            return Err(Error::NotPositiveDefinite { eigenvalue: lmin });
        }
        let floor = EIG_FLOOR * eig.eigenvalues.max();
        let v = &eig.eigenvectors;
        let s = eig.eigenvalues.map(|l| l.max(floor).sqrt());
        let mut sqrt = v * DMatrix::from_diagonal(&s) * v.transpose();
        let mut inv_sqrt = v * DMatrix::from_diagonal(&s.map(|x| 1.0 / x)) * v.transpose();
        symmetrize(&mut sqrt);
        symmetrize(&mut inv_sqrt);
        Ok(Self { b0: b0.clone(), sqrt, inv_sqrt })
    }

    pub fn log(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.shape() != self.b0.shape() {
            return Err(Error::Dimension(format!("{:?} against anchor {:?}", b.shape(), self.b0.shape())));
        }
        let mut m = &self.inv_sqrt * b * &self.inv_sqrt;
        symmetrize(&mut m);
        let l = sym_fn(&m, f64::ln, true)?;
        let mut t = &self.sqrt * l * &self.sqrt;
        symmetrize(&mut t);
        Ok(t)
    }

    pub fn exp(&self, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if t.shape() != self.b0.shape() {
            return Err(Error::Dimension(format!("{:?} against anchor {:?}", t.shape(), self.b0.shape())));
        }
        let mut m = &self.inv_sqrt * t * &self.inv_sqrt;
        symmetrize(&mut m);
        let e = sym_fn(&m, f64::exp, false)?;
        let mut out = &self.sqrt * e * &self.sqrt;
        symmetrize(&mut out);
        Ok(out)
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("matrix is {:?}, expected square", m.shape())));
    }
    Ok(())
}

/// `B0^{1/2} log(B0^{-1/2} B B0^{-1/2}) B0^{1/2}`.
pub fn spd_log(b0: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    SpdAnchor::new(b0)?.log(b)
}

/// `B0^{1/2} exp(B0^{-1/2} T B0^{-1/2}) B0^{1/2}`.
pub fn spd_exp(b0: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    SpdAnchor::new(b0)?.exp(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rom::min_eigenvalue;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_spd(k: usize, cond: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() - 0.5).qr().q();
        let ev: Vec<f64> = (0..k).map(|i| cond.powf(if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 })).collect();
        let mut m = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(ev)) * q.transpose();
        symmetrize(&mut m);
        m
    }

    #[test]
    fn log_of_anchor_is_zero() {
        let b = random_spd(6, 50.0, 1);
        assert!(spd_log(&b, &b).unwrap().amax() < 1e-12 * b.amax());
    }

    #[test]
    fn diagonal_cases() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![std::f64::consts::E, 1.0]));
        let t = spd_log(&i2, &b).unwrap();
        assert!((t - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]))).amax() < 1e-14);
        let e = spd_exp(&i2, &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]))).unwrap();
        assert!((e - &b).amax() < 1e-14);
        let b0 = random_spd(4, 10.0, 2);
        assert!((spd_exp(&b0, &DMatrix::zeros(4, 4)).unwrap() - &b0).amax() < 1e-12 * b0.amax());
    }

    #[test]
    fn rejects_indefinite_input() {
        let mut b = DMatrix::<f64>::identity(3, 3);
        b[(2, 2)] = -0.5;
        assert!(matches!(spd_log(&DMatrix::identity(3, 3), &b), Err(Error::NotPositiveDefinite { .. })));
        assert!(matches!(SpdAnchor::new(&b), Err(Error::NotPositiveDefinite { eigenvalue }) if eigenvalue < 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn exp_log_round_trip(k in 1usize..20, c0 in 0.0f64..6.0, c1 in 0.0f64..6.0, seed in any::<u64>()) {
            let b0 = random_spd(k, 10f64.powf(c0), seed);
            let b = random_spd(k, 10f64.powf(c1), seed.wrapping_add(1));
            let back = spd_exp(&b0, &spd_log(&b0, &b).unwrap()).unwrap();
            prop_assert!((&back - &b).norm() <= 1e-8 * b.norm());
        }

        #[test]
        fn exp_is_always_spd(k in 1usize..12, seed in any::<u64>(), amp in 0.1f64..5.0) {
            let b0 = random_spd(k, 100.0, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut t = DMatrix::from_fn(k, k, |_, _| amp * (rng.random::<f64>() - 0.5));
            symmetrize(&mut t);
            let e = spd_exp(&b0, &t).unwrap();
            prop_assert!(min_eigenvalue(&e) > 0.0);
            prop_assert_eq!(e.clone(), e.transpose());
        }
    }
}
