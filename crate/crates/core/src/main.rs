use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plapsys::cli::commands::{
    regime_record, regime_table, run_checks, run_eigen, run_solve, run_sweep, write_solution, write_sweep, Axis,
    EXPONENTS_HEADER,
};
use plapsys::cli::config::RunConfig;
use plapsys::error::Error;
use plapsys::exponents::{classify, RegimeInput};
use plapsys::grid::save_field;

/// Solver and regularity toolkit for the coupled system
/// -Δ_p u + A φ^(θ+1) |u|^(r-2) u = f,  -Δ_p φ = |u|^r φ^θ.
///
/// Exit status: 0 success, 1 I/O failure, 2 usage or configuration error,
/// 3 non-convergence or a failed check.
#[derive(Parser)]
#[command(name = "plapsys", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summability exponents and the regime of (N, p, r, θ, m).
    Exponents {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long)]
        m: f64,
        /// Print a CSV header and row instead of the table.
        #[arg(long)]
        csv: bool,
    },
    /// Solve the system; writes u.txt, phi.txt and trace.csv.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Independent solves along one parameter axis; writes sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of h, m, alpha, A.
        #[arg(long)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// First eigenpair of -Δ_p on the unit box; dumps φ₁ to phi1.txt.
    Eigen {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 64)]
        cells: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in verification battery.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Error(Error),
    /// Ran to completion without meeting its target.
    Unmet(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Exponents { n, p, r, theta, m, csv } => {
            let rep = classify(&RegimeInput::from_f64(n, p, r, theta, m)?);
            if csv {
                let mut w = csv::Writer::from_writer(std::io::stdout());
                w.write_record(EXPONENTS_HEADER).map_err(Error::from)?;
                w.write_record(regime_record(&rep)).map_err(Error::from)?;
                w.flush().map_err(|e| Error::Csv(e.into()))?;
            } else {
                print!("{}", regime_table(&rep));
            }
        }
        Command::Solve { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let dir = out.unwrap_or_else(|| cfg.out.clone());
            let pair = run_solve(&cfg)?;
            write_solution(&pair, &dir)?;
            let last = pair.trace.last().expect("at least one outer iteration");
            println!(
                "outer iterations {}, dphi_rel {:e}, J {}, norm_u_w1p {}, energy_id_res {:e}",
                pair.trace.len(),
                last.dphi_rel,
                last.j,
                last.lemma.norm_u_w1p,
                last.energy_id_res
            );
            println!("wrote u.txt, phi.txt, trace.csv to {}", dir.display());
            if !pair.converged {
                return Err(Failure::Unmet("fixed-point iteration did not converge".into()));
            }
        }
        Command::Sweep { config, axis, values, out, seed } => {
            let cfg = load(&config, seed)?;
            let dir = out.unwrap_or_else(|| cfg.out.clone());
            let rows = run_sweep(&cfg, axis, &values)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
            let path = dir.join("sweep.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
            write_sweep(&rows, std::io::BufWriter::new(file))?;
            write_sweep(&rows, std::io::stdout())?;
            let bad = rows.iter().filter(|r| !r.converged || r.error.is_some()).count();
            if bad > 0 {
                return Err(Failure::Unmet(format!("{bad} of {} runs failed or did not converge", rows.len())));
            }
        }
        Command::Eigen { dim, cells, p, eps, out } => {
            let pair = run_eigen(dim, cells, p, eps)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
            save_field(&pair.phi1, dir.join("phi1.txt"))?;
            println!("lambda1 = {}", pair.lambda1);
            println!("iterations {}, residual {:e}", pair.iterations, pair.residual);
            if !pair.converged {
                return Err(Failure::Unmet("eigen iteration did not converge".into()));
            }
        }
        Command::Check { config, seed } => {
            let mut cfg = match &config {
                Some(path) => load(path, None)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let results = run_checks(&cfg)?;
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Failure::Unmet(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unmet(msg)) => {
            eprintln!("plapsys: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("plapsys: {e}");
            match e {
                Error::Io { .. } | Error::Csv(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
