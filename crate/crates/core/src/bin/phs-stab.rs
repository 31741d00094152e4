use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phs_stab::lab::{
    emit_report, run_certify, run_contraction, run_invariant, run_simulate, run_w2_selftest, run_w2_selftest_config,
    w2_from_files, ExperimentConfig, ReportRecord, SEED_ENV,
};
use phs_stab::Error;

/// Stability experiments for stochastic port-Hamiltonian systems.
///
/// Exit status: 0 when every verdict passes, 2 when a verdict fails or the
/// stability certificate does not hold, 1 on any other error.
#[derive(Parser, Debug)]
#[command(name = "phs-stab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for path-parallel simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed and $PHS_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out_dir`, else out/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stability certificate in every beta mode, dissipativity and Lipschitz checks.
    Certify(Common),
    /// Ensemble simulation from x0.
    Simulate(Common),
    /// Coupled ensembles from x0 and y0 against the contraction bounds.
    Contraction(Common),
    /// Convergence to the invariant measure.
    Invariant(Common),
    /// Exact W2 between two CSV point clouds, or the transport self-test.
    W2 {
        /// First point cloud, one point per row.
        p: Option<PathBuf>,
        /// Second point cloud.
        q: Option<PathBuf>,
        #[arg(long)]
        selftest: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.override_seed(seed, std::env::var(SEED_ENV).ok().as_deref())?;
    Ok(cfg)
}

fn finish(rec: &ReportRecord, out: PathBuf) -> Result<ExitCode, Error> {
    let files = emit_report(rec, &out)?;
    for v in &rec.verdicts {
        println!(
            "{} {}: measured {} vs bound {} (tolerance {})",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.measured,
            v.bound,
            v.tolerance
        );
    }
    println!("report: {}", files.report.display());
    Ok(if rec.pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let experiment = |c: Common, f: fn(&ExperimentConfig) -> phs_stab::Result<ReportRecord>| {
        let cfg = load(&c.config, c.seed)?;
        let rec = f(&cfg)?;
        finish(&rec, c.out.unwrap_or_else(|| cfg.out_dir()))
    };
    match cli.command {
        Command::Certify(c) => experiment(c, run_certify),
        Command::Simulate(c) => experiment(c, run_simulate),
        Command::Contraction(c) => experiment(c, run_contraction),
        Command::Invariant(c) => experiment(c, run_invariant),
        Command::W2 {
            p,
            q,
            selftest,
            config,
            seed,
            out,
        } => {
            if selftest {
                let (rec, default_out) = match config {
                    Some(path) => {
                        let cfg = load(&path, seed)?;
                        (run_w2_selftest_config(&cfg)?, cfg.out_dir())
                    }
                    None => {
                        let env = std::env::var(SEED_ENV).ok();
                        let seed = match (seed, env) {
                            (Some(s), _) => s,
                            (None, Some(text)) => text.trim().parse().map_err(|_| {
                                Error::Config(format!("{SEED_ENV} must be an unsigned integer, got '{text}'"))
                            })?,
                            (None, None) => 0,
                        };
                        (run_w2_selftest(seed, 100, 6)?, PathBuf::from("out/w2_selftest"))
                    }
                };
                return finish(&rec, out.unwrap_or(default_out));
            }
            let (Some(p), Some(q)) = (p, q) else {
                return Err(Error::InvalidArgument("w2 needs two point-cloud files or --selftest".into()));
            };
            let (d, plan) = w2_from_files(&p, &q)?;
            println!("w2 = {d}");
            println!("i,j");
            for (i, j) in plan.permutation.iter().enumerate() {
                println!("{i},{j}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(Error::NotStable(msg)) => {
            eprintln!("not stable: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
