use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use unimpc::harness::{compare_policies, reproduce, run_closed_loop, write_comparison, write_report, RunConfig, RunReport, RunStatus, Target};
use unimpc::{selftest, Error};

#[derive(Parser)]
#[command(name = "unimpc", version, about = "SQP and iterative LPV-MPC closed-loop experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Output directory (default: `out/<name>` or `out/<target>`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed of every config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only report errors
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one closed-loop run
    Run { config: PathBuf },
    /// Simulate several runs on the same benchmark and tabulate them
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Run a preset study: fig1, fig2, table2 or mpcc
    Reproduce { target: Target },
    /// Check AD, FTC quadrature and the QP solver against slow reference computations
    Selftest,
}

const ABORT: u8 = 1;
const CONFIG: u8 = 2;

fn code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io { .. } => CONFIG,
        _ => ABORT,
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_table(reports: &[RunReport]) {
    println!(
        "{:<16} {:>10} {:>7} {:>11} {:>11} {:>11}",
        "policy", "status", "n_it", "delta_r_avg", "r_avg", "violation"
    );
    for r in reports {
        let status = match &r.status {
            RunStatus::Completed => "ok".to_string(),
            RunStatus::Incomplete => "incomplete".to_string(),
            RunStatus::Aborted { k, .. } => format!("abort@{k}"),
        };
        let a = &r.aggregates;
        println!(
            "{:<16} {:>10} {:>7.3} {:>11.3e} {:>11.3e} {:>11.3e}",
            r.name, status, a.n_it, a.delta_r_avg, a.r_avg, a.max_violation
        );
    }
}

fn outcome(reports: &[RunReport], quiet: bool) -> u8 {
    let mut rc = 0;
    for r in reports {
        if let RunStatus::Aborted { k, reason } = &r.status {
            eprintln!("{}: aborted at sample {k}: {reason}", r.name);
            rc = ABORT;
        }
    }
    if !quiet {
        print_table(reports);
    }
    rc
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| Path::new("out").join(default));
    match &cli.cmd {
        Cmd::Run { config } => {
            let cfg = load(config, cli.seed)?;
            let dir = cli.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| out(&cfg.name));
            let report = run_closed_loop(&cfg)?;
            write_report(&report, &dir)?;
            if !cli.quiet {
                println!("wrote {}", dir.display());
            }
            Ok(outcome(std::slice::from_ref(&report), cli.quiet))
        }
        Cmd::Compare { configs } => {
            let cfgs = configs.iter().map(|p| load(p, cli.seed)).collect::<Result<Vec<_>, _>>()?;
            let dir = out("compare");
            let cmp = compare_policies(&cfgs)?;
            write_comparison(&cmp, &dir)?;
            if !cli.quiet {
                println!("wrote {}", dir.display());
            }
            Ok(outcome(&cmp.reports, cli.quiet))
        }
        Cmd::Reproduce { target } => {
            let name = format!("{target:?}").to_lowercase();
            let dir = out(&name);
            let cmp = reproduce(*target, cli.seed.unwrap_or(0), &dir)?;
            if !cli.quiet {
                println!("wrote {}", dir.display());
            }
            Ok(outcome(&cmp.reports, cli.quiet))
        }
        Cmd::Selftest => {
            let checks = selftest::run(cli.seed.unwrap_or(0))?;
            let mut rc = 0;
            for c in &checks {
                if !c.passed() {
                    rc = ABORT;
                }
                if !cli.quiet || !c.passed() {
                    println!("{} {}: {:.2e} <= {:.0e}", if c.passed() { "PASS" } else { "FAIL" }, c.name, c.error, c.tol);
                }
            }
            Ok(rc)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CONFIG } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(rc) => ExitCode::from(rc),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(code(&e))
        }
    }
}
