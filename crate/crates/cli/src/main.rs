use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use liftrom::config::RunConfig;
use liftrom::db::RomDatabase;
use liftrom::pipeline::{self, DB_FILE};

/// Reduced-order modeling of steady airfoil flows through lifted linear systems.
#[derive(Parser)]
#[command(name = "liftrom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML). Defaults to the configuration stored in the database.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the training family and write the ROM database.
    Build(Common),
    /// Compare ROM and Kriging predictions with fresh full-order solves.
    Validate(Common),
    /// Recover shape parameters from a target pressure distribution.
    InverseDesign {
        #[command(flatten)]
        common: Common,
        /// CSV with `s,cp` columns; without it the run targets the ROM at `inverse.target_theta`.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Monte Carlo propagation of shape uncertainty.
    Uq(Common),
    /// Emit plot data from a run directory.
    Report(Common),
}

fn load_config(common: &Common, dir: &Path) -> Result<RunConfig> {
    if let Some(path) = &common.config {
        return RunConfig::load(path).with_context(|| format!("reading {}", path.display()));
    }
    let db = dir.join(DB_FILE);
    if !db.exists() {
        bail!("no --config given and no database at {}", db.display());
    }
    let db = RomDatabase::load(&db)?;
    Ok(serde_json::from_str(&db.meta).context("database metadata")?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Build(c) => {
            pipeline::configure_threads(c.jobs);
            let Some(path) = &c.config else { bail!("build needs --config") };
            let mut cfg = RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
            if let Some(s) = c.seed {
                cfg.problem.seed = s;
            }
            let m = pipeline::cmd_build(&cfg, &c.out)?;
            println!(
                "built {} instances ({} skipped), k = {:?}, N = {}; database at {}",
                m.thetas.len(),
                m.skipped.len(),
                m.ks,
                m.cells,
                c.out.join(DB_FILE).display()
            );
            for (phase, secs) in &m.timings {
                println!("  {phase}: {secs:.2} s");
            }
        }
        Command::Validate(c) => {
            pipeline::configure_threads(c.jobs);
            let mut cfg = load_config(&c, &c.out)?;
            if let Some(s) = c.seed {
                cfg.validate.seed = s;
            }
            let r = pipeline::cmd_validate(&cfg, &c.out)?;
            for (i, case) in r.cases.iter().enumerate() {
                println!(
                    "case {}: theta {:?} C_P {:.2}% C_l {:.2}% C_d {:.2}% (ROM {:.1} ms, FOM {:.2} s)",
                    i + 1,
                    case.theta,
                    case.rom_errors.cp,
                    case.rom_errors.cl,
                    case.rom_errors.cd,
                    1e3 * case.rom_seconds,
                    case.fom_seconds
                );
            }
            println!(
                "max C_P error {:.2}%, mean {:.2}%, C_l within {}%: {}/{}",
                r.max_cp_error,
                r.mean_cp_error,
                r.thresholds.cl_error,
                r.cl_within,
                r.cases.len()
            );
            if !r.passed {
                println!("validation thresholds not met");
                return Ok(ExitCode::from(2));
            }
        }
        Command::InverseDesign { common: c, target } => {
            pipeline::configure_threads(c.jobs);
            let mut cfg = load_config(&c, &c.out)?;
            if let Some(s) = c.seed {
                cfg.inverse.seed = s;
            }
            let r = pipeline::cmd_inverse_design(&cfg, &c.out, target.as_deref())?;
            println!("best theta {:?} after {} evaluations ({:.1} s)", r.best_theta, r.ga.evaluations, r.seconds);
            if let (Some(t), Some(e)) = (&r.target_theta, &r.relative_error) {
                println!("target theta {t:?}, error per coordinate (fraction of range) {e:?}");
            }
        }
        Command::Uq(c) => {
            pipeline::configure_threads(c.jobs);
            let mut cfg = load_config(&c, &c.out)?;
            if let Some(s) = c.seed {
                cfg.uq.seed = s;
            }
            let r = pipeline::cmd_uq(&cfg, &c.out)?;
            println!("{} samples, {} failed", r.samples.len(), r.failures.len());
            println!("POD-Proj C_l mean {:.5} C_d mean {:.5}", r.proj.cl.mean, r.proj.cd.mean);
            if let Some(k) = &r.krig {
                println!("POD-Krig C_l mean {:.5} C_d mean {:.5}", k.cl.mean, k.cd.mean);
            }
            if let Some(f) = &r.fom_control {
                println!("FOM control ({}) C_l mean {:.5} C_d mean {:.5}", f.cl.count, f.cl.mean, f.cd.mean);
            }
        }
        Command::Report(c) => {
            let s = pipeline::cmd_report(&c.out)?;
            for f in &s.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
