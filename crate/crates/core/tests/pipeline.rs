use liftrom::config::RunConfig;
use liftrom::db::RomDatabase;
use liftrom::pipeline::{self, DB_FILE, GP_FILE};

fn small() -> RunConfig {
    let mut c = RunConfig::naca_default();
    c.mesh.n_wrap = 32;
    c.mesh.n_radial = 12;
    c.problem.samples = 6;
    c.validate.holdout = 2;
    c.validate.cl_required = 1;
    c.inverse.ga.population = 8;
    c.inverse.ga.generations = 4;
    c.uq.samples = 12;
    c.uq.fom_control = 3;
    c
}

#[test]
fn build_is_deterministic() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline::cmd_build(&cfg, a.path()).unwrap();
    pipeline::cmd_build(&cfg, b.path()).unwrap();
    for f in [DB_FILE, GP_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn single_snapshot_database_returns_its_instance() {
    let mut cfg = small();
    cfg.problem.samples = 1;
    let dir = tempfile::tempdir().unwrap();
    let m = pipeline::cmd_build(&cfg, dir.path()).unwrap();
    assert_eq!(m.thetas.len(), 1);
    assert!(!m.kriging && !dir.path().join(GP_FILE).exists());
    let db = RomDatabase::load(dir.path().join(DB_FILE)).unwrap();
    let r = db.interpolate(&[0.5 * m.thetas[0][0], 0.9 * m.thetas[0][1]]).unwrap();
    assert_eq!(r.b, db.instances[0].b);
    assert_eq!(r.f, db.instances[0].f);
}

#[test]
fn stages_chain_and_report_lists_outputs() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline::cmd_build(&cfg, out).unwrap();
    let v = pipeline::cmd_validate(&cfg, out).unwrap();
    assert_eq!(v.cases.len(), 2);
    assert!(v.cases.iter().all(|c| c.constraint_norm.is_finite() && c.krig.is_some()));
    let inv = pipeline::cmd_inverse_design(&cfg, out, None).unwrap();
    assert_eq!(inv.ga.evaluations, cfg.inverse.ga.budget());
    // The written self-target file drives a file-target run to the same optimum basin.
    let from_file = pipeline::cmd_inverse_design(&cfg, out, Some(&out.join(pipeline::TARGET_FILE))).unwrap();
    assert!(from_file.target_theta.is_none());
    assert_eq!(from_file.best_theta, inv.best_theta);
    let uq = pipeline::cmd_uq(&cfg, out).unwrap();
    assert_eq!(uq.samples.len() - uq.failures.len(), uq.proj_cl.len());
    let s = pipeline::cmd_report(out).unwrap();
    assert!(s.files.iter().all(|f| f.exists()));
    assert!(s.files.iter().any(|f| f.ends_with("kde_cl.csv")));
}

#[test]
fn report_on_empty_dir_names_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let msg = pipeline::cmd_report(dir.path()).unwrap_err().to_string();
    assert!(msg.contains(pipeline::BUILD_MANIFEST) && msg.contains(pipeline::UQ_FILE), "{msg}");
}
