use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dissrabi::harness::{
    cmd_bkt_fit, cmd_ed_check, cmd_kernel_table, cmd_relax, cmd_sweep, resistance_estimate, resolve, Overrides,
    RunConfig, RunMeta,
};
use dissrabi::Error;

/// Exit status of a run stopped by `halt_after`.
const EXIT_INTERRUPTED: u8 = 3;

#[derive(Parser)]
#[command(name = "dissrabi", version, about = "Dissipative quantum Rabi model: worldline Monte Carlo, ED and BKT fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from checkpoints in the output directory.
    #[arg(long)]
    resume: bool,
    /// Worker threads; falls back to DISSRABI_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and certify the kernel table of every grid point.
    KernelTable(RunArgs),
    /// Monte Carlo sweep over the (coupling, beta) grid.
    Sweep(RunArgs),
    /// Locate the BKT transition from one or more results CSVs.
    BktFit {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Seed of the parametric bootstrap.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
    },
    /// Exact-diagonalization identities and WLMC comparison.
    EdCheck(RunArgs),
    /// Relaxation traces of sigma_z at ED scale.
    Relax(RunArgs),
    /// Circuit resistance for a cavity damping alpha_cav.
    Resistance {
        #[arg(long, conflicts_with = "config")]
        alpha_cav: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<(RunConfig, RunMeta)> {
    let cfg = RunConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    let ov = Overrides { out: args.out.clone(), seed: args.seed, resume: args.resume, threads: args.threads };
    let (cfg, meta) = resolve(cfg, &ov)?;
    for note in &meta.overrides {
        eprintln!("override: {note}");
    }
    Ok((cfg, meta))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::KernelTable(a) => {
            let (cfg, meta) = load(&a)?;
            for p in cmd_kernel_table(&cfg, &meta)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep(a) => {
            let (cfg, meta) = load(&a)?;
            let rows = cmd_sweep(&cfg, &meta)?;
            println!("{} rows written to {}", rows.len(), meta.out.join("results.csv").display());
            let flagged: u64 = rows.iter().map(|r| r.warnings).sum();
            if flagged > 0 {
                eprintln!("{flagged} estimates carry reliability warnings; see summary.json");
            }
        }
        Command::BktFit { results, out, seed, bootstrap } => {
            let r = cmd_bkt_fit(&results, &out, bootstrap, seed)?;
            println!("alpha_c = {} ± {}", r.fit.alpha_c, r.fit.alpha_c_err);
            println!("g_c     = {} ± {}", r.fit.g_c, r.fit.g_c_err);
            println!("beta0   = {} ± {}", r.fit.beta0, r.fit.beta0_err);
            println!("psi_c   = {} ± {}", r.fit.psi_c, r.fit.psi_c_err);
            println!("report written to {}", out.join("bkt_fit.json").display());
        }
        Command::EdCheck(a) => {
            let (cfg, meta) = load(&a)?;
            let r = cmd_ed_check(&cfg, &meta)?;
            for i in &r.instances {
                println!(
                    "{} coupling {} beta {}: sum rule {:.2e}, identity {:.2e}, mori {:.2e}/{:.2e}, converged {}",
                    if i.pass { "PASS" } else { "FAIL" },
                    i.coupling,
                    i.beta,
                    i.sum_rule_residual,
                    i.eq5_residual,
                    i.mori_zz_residual,
                    i.mori_yy_residual,
                    i.converged
                );
            }
            for c in &r.comparisons {
                println!(
                    "{} beta {} {}: ED {} vs MC {} ± {} (pull {:.2})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.beta,
                    c.observable,
                    c.ed,
                    c.mc,
                    c.mc_err,
                    c.pull
                );
            }
            if !r.pass {
                bail!("ED check failed; see {}", meta.out.join("ed_check.json").display());
            }
        }
        Command::Relax(a) => {
            let (cfg, meta) = load(&a)?;
            for (g, tr) in cfg.coupling_list().iter().zip(cmd_relax(&cfg, &meta)?) {
                println!("coupling {g}: linearity residual {:.2e} ({})", tr.linearity_residual, if tr.linear { "linear" } else { "NONLINEAR" });
            }
        }
        Command::Resistance { alpha_cav, config } => {
            let a = match (alpha_cav, config) {
                (Some(a), _) => a,
                (None, Some(p)) => RunConfig::load(&p)?.alpha_cav,
                (None, None) => bail!("pass --alpha-cav or --config"),
            };
            println!("{} kOhm", resistance_estimate(a)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<Error>(), Some(Error::Interrupted(_))) {
                ExitCode::from(EXIT_INTERRUPTED)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
