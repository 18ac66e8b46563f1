use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use urlab::config::ExperimentConfig;
use urlab::experiment::{run_experiment, Outcome, Verb};
use urlab::{exec, Error, Exec};

#[derive(Parser, Debug)]
#[command(name = "urlab", version, about = "Run smooth-distance, Green-function and Carleson experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Cmd,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config (flat `section.key = value` text).
    #[arg(long)]
    config: PathBuf,
    /// Parent directory for the bundle; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    threads: Option<usize>,
    /// Single grid spacing replacing the ladder in the config.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample the boundary and write boundary.csv.
    GenBoundary(Common),
    /// Solve for u on every rung of the spacing ladder.
    Solve(Common),
    /// Evaluate the Carleson functionals of the configured integrands.
    Functional(Common),
    /// Bilateral beta numbers and packing ratios.
    Bwgl(Common),
    /// grad_sq_grad_u trend across the ladder: bounded or increasing.
    Dichotomy(Common),
    /// Every stage, plus an SVG slice and the measured constants.
    Report(Common),
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    let (verb, common) = match cli.verb {
        Cmd::GenBoundary(c) => (Verb::GenBoundary, c),
        Cmd::Solve(c) => (Verb::Solve, c),
        Cmd::Functional(c) => (Verb::Functional, c),
        Cmd::Bwgl(c) => (Verb::Bwgl, c),
        Cmd::Dichotomy(c) => (Verb::Dichotomy, c),
        Cmd::Report(c) => (Verb::Report, c),
    };
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(out) = common.out {
        cfg.out_dir = out;
    }
    if let Some(h) = common.h {
        cfg.set_ladder(h)?;
    }
    let mode = match common.threads {
        Some(0) => return Err(Error::Validation("--threads must be at least 1".into())),
        Some(1) => Exec::Sequential,
        Some(k) => {
            exec::set_threads(k);
            Exec::Parallel
        }
        None => Exec::Parallel,
    };
    run_experiment(&cfg, verb, mode)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            println!("bundle {}", out.dir.display());
            for r in &out.rungs {
                if let Some(s) = &r.solve {
                    println!("h={:.6e} iterations={} residual={:.3e}", r.h, s.iterations, s.residual);
                }
                for (k, rep) in &r.functionals {
                    println!("h={:.6e} {}: sup={:.6e}", r.h, k.tag(), rep.sup);
                }
            }
            for (k, t) in &out.trends {
                println!("{}: {}", k.tag(), if t.divergent { "increasing" } else { "bounded" });
            }
            if let Some(b) = &out.bwgl {
                println!("bwgl eps={} max_ratio={:.6}", b.eps, b.max_ratio);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
