//! Batch front-end for `fiberlin-core`.
//!
//! One JSON config per run; flags override individual fields. Exit status:
//! 0 ok, 1 other failure, 2 validation, 3 divergence, 4 bound violations
//! under `--strict`.

pub mod config;
pub mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{GlobalizationSpec, RunConfig};
use fiberlin_core::Error;
use pipeline::{Command, RunOptions, EXIT_BOUNDS, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(
    name = "fiberlin",
    version,
    about = "Fiberwise linearization of skew products over toral automorphisms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Solve for the conjugacy and check it.
    Linearize(RunArgs),
    /// Linearize, then estimate regularity and check every bound.
    Verify(RunArgs),
    /// Linearize and estimate the Hölder exponent in b.
    Holder(RunArgs),
    /// Derived constants and bound checks, without solving.
    Constants(RunArgs),
    /// Build and check the globalized system only.
    GlobalizeOnly(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    pub config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub globalize: bool,
    #[arg(long)]
    pub r_inner: Option<f64>,
    #[arg(long)]
    pub r_outer: Option<f64>,
    /// Comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub center: Option<Vec<f64>>,
    #[arg(long)]
    pub tail_tol: Option<f64>,
    #[arg(long)]
    pub truncation_n: Option<usize>,
    #[arg(long)]
    pub fp_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub nb: Option<usize>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit 4 on enforced bound violations.
    #[arg(long)]
    pub strict: bool,
    /// Leave the timestamp out of report.json.
    #[arg(long)]
    pub no_timestamp: bool,
    /// Worker threads for the grid kernels.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl RunArgs {
    /// Applies flag overrides on top of the file.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        let touches_cut = self.r_inner.is_some() || self.r_outer.is_some() || self.center.is_some();
        if touches_cut && !self.globalize && cfg.globalization.is_none() {
            return Err(Error::InvalidInput(
                "--r-inner, --r-outer and --center need --globalize or a globalization block"
                    .into(),
            ));
        }
        if self.globalize || touches_cut {
            let g = cfg
                .globalization
                .get_or_insert_with(GlobalizationSpec::default);
            if let Some(r) = self.r_inner {
                g.r_inner = r;
            }
            if let Some(r) = self.r_outer {
                g.r_outer = r;
            }
            if let Some(c) = &self.center {
                g.center = Some(c.clone());
            }
        }
        let s = &mut cfg.solver;
        if let Some(t) = self.tail_tol {
            s.tail_tol = Some(t);
            s.truncation_n = None;
        }
        if let Some(n) = self.truncation_n {
            s.truncation_n = Some(n);
            s.tail_tol = None;
        }
        if let Some(v) = self.fp_tol {
            s.fixed_point_tol = v;
        }
        if let Some(v) = self.max_iter {
            s.max_iterations = v;
        }
        if let Some(v) = self.epsilon {
            s.epsilon = Some(v);
        }
        if let Some(v) = self.alpha {
            s.alpha = Some(v);
        }
        if let Some(v) = self.nb {
            s.n_b = v;
        }
        if let Some(v) = self.nx {
            s.n_x = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(())
    }
}

impl Sub {
    pub fn split(&self) -> (Command, &RunArgs) {
        match self {
            Sub::Linearize(a) => (Command::Linearize, a),
            Sub::Verify(a) => (Command::Verify, a),
            Sub::Holder(a) => (Command::Holder, a),
            Sub::Constants(a) => (Command::Constants, a),
            Sub::GlobalizeOnly(a) => (Command::GlobalizeOnly, a),
        }
    }
}

fn print_summary(outcome: &pipeline::Outcome) {
    let r = &outcome.report;
    let mut line = format!("{}: {}", r.command, r.status);
    if let Some(s) = &r.solver {
        line += &format!(
            ", eps {:.4e}, {} iterations, depth {}",
            s.epsilon, s.iterations, s.depth
        );
    }
    if let Some(c) = &r.conjugacy_residual {
        line += &format!(", residual {:.3e}", c.sup);
    }
    if let Some(o) = r.oracle_error {
        line += &format!(", oracle error {o:.3e}");
    }
    if !r.bound_checks.is_empty() {
        line += &format!(", {} enforced violations", r.enforced_violations);
    }
    println!(
        "{line} -> {}",
        r.config.output_dir.join("report.json").display()
    );
}

/// Parses `args`, runs the pipeline and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cmd, args) = cli.command.split();
    if let Some(n) = args.workers {
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let result = RunConfig::load(&args.config).and_then(|mut cfg| {
        args.apply(&mut cfg)?;
        pipeline::execute(
            cmd,
            cfg,
            RunOptions {
                strict: args.strict,
                timestamp: !args.no_timestamp,
            },
        )
    });
    match result {
        Ok(outcome) => {
            print_summary(&outcome);
            if outcome.exit_code == EXIT_BOUNDS {
                eprintln!(
                    "{}",
                    serde_json::json!({
                        "level": "error",
                        "kind": "bound_violations",
                        "exit_code": EXIT_BOUNDS,
                        "message": format!("{} enforced bound checks failed", outcome.report.enforced_violations),
                    })
                );
            } else if outcome.exit_code != 0 {
                eprintln!(
                    "{}",
                    serde_json::json!({
                        "level": "error",
                        "kind": outcome.report.status,
                        "exit_code": outcome.exit_code,
                        "message": "Picard iteration did not converge within max_iterations",
                    })
                );
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("{}", pipeline::diagnostic(&e));
            pipeline::exit_code(&e)
        }
    }
}
