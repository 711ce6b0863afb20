use liftrom::db::RomDatabase;
use liftrom::deim::DeimData;
use liftrom::euler::{Freestream, N_OBS};
use liftrom::lift::{ConstraintForm, ConstraintKernel};
use liftrom::pod::{BlockBasis, PodBasis};
use liftrom::rom::{symmetrize, Provenance, RomInstance};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_database(m: usize, per_block: usize, n: usize, seed: u64) -> RomDatabase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = (0..N_OBS)
        .map(|_| {
            let g = DMatrix::from_fn(n, per_block, |_, _| rng.random::<f64>() - 0.5);
            PodBasis { phi: g.qr().q(), sigma: (0..per_block).map(|i| 1.0 / (i + 1) as f64).collect(), energy_target: 0.9999 }
        })
        .collect();
    let fs = Freestream::naca();
    let basis = BlockBasis::new(bases, fs.observable_scales()).unwrap();
    let deim = DeimData::build(&basis, ConstraintKernel::new(&fs, ConstraintForm::CrossMultiplied), None).unwrap();
    let k = basis.k();
    let instances = (0..m)
        .map(|_| {
            let g = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() - 0.5);
            let mut b = &g * g.transpose() + DMatrix::identity(k, k);
            symmetrize(&mut b);
            RomInstance {
                b,
                f: DVector::from_fn(k, |_, _| rng.random()),
                theta: vec![rng.random(), rng.random()],
                provenance: Provenance::Snapshot,
            }
        })
        .collect();
    let reduced = (0..m).map(|_| DVector::from_fn(k, |_, _| rng.random())).collect();
    RomDatabase::new(instances, reduced, basis, deim, "{}".into()).unwrap()
}

#[test]
fn file_size_matches_payload_accounting() {
    let (m, n) = (20, 2048);
    let db = random_database(m, 5, n, 1);
    let k = db.k();
    assert_eq!(k, 40);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("size.db");
    db.save(&path).unwrap();
    let actual = std::fs::metadata(&path).unwrap().len() as f64;
    let predicted = 8.0 * (m * k * k + m * k + n * k) as f64;
    assert!((actual - predicted).abs() <= 0.1 * predicted, "{actual} bytes vs {predicted} predicted");
}

#[test]
fn reload_interpolates_identically() {
    let db = random_database(12, 3, 64, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.db");
    db.save(&path).unwrap();
    let back = RomDatabase::load(&path).unwrap();
    for q in [[0.3, 0.6], [0.9, 0.1]] {
        let a = db.interpolate(&q).unwrap();
        let b = back.interpolate(&q).unwrap();
        assert_eq!(a.b, b.b);
        assert_eq!(a.f, b.f);
    }
}
