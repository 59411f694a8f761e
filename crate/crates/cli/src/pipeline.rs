//! Orchestration: globalize, solve, verify, analyze, emit files.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fiberlin_core::analysis::{
    check_bounds, conjugacy_residual, estimate_holder, koenigs_oracle, narrow_band_check,
    violations, BoundCheckConfig,
};
use fiberlin_core::globalize::{globalize, VERIFY_RESOLUTION};
use fiberlin_core::skew_product::check_fiber_model;
use fiberlin_core::{AlphaTheta, Error, GridFunction, MobiusFamily, Result, SkewProduct};

use crate::config::{FiberSpec, RunConfig};
use crate::report::{
    write_bounds_csv, write_constants_csv, write_holder_csv, write_json, OracleReport, Report,
    SystemSummary, Validation,
};

/// Base resolution of the sampled model checks.
pub const MODEL_CHECK_NB: usize = 16;
pub const MODEL_CHECK_NX: usize = 33;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_BOUNDS: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Linearize,
    Verify,
    Holder,
    Constants,
    GlobalizeOnly,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Linearize => "linearize",
            Command::Verify => "verify",
            Command::Holder => "holder",
            Command::Constants => "constants",
            Command::GlobalizeOnly => "globalize-only",
        }
    }

    fn solves(self) -> bool {
        matches!(self, Command::Linearize | Command::Verify | Command::Holder)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Enforced bound violations turn into exit status 4.
    pub strict: bool,
    pub timestamp: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub exit_code: i32,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DimensionMismatch { .. }
        | Error::InvalidInput(_)
        | Error::NotUnimodular { .. }
        | Error::NotHyperbolic { .. }
        | Error::ModelViolation(_)
        | Error::GlobalizationRequired { .. }
        | Error::GlobalizationFailure { .. }
        | Error::ThetaTooLarge { .. }
        | Error::Domain { .. }
        | Error::Parse { .. } => EXIT_VALIDATION,
        Error::DomainEscape { .. } | Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Oracle(_) | Error::Estimation(_) | Error::Io(_) => EXIT_FAILURE,
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::InvalidInput(_) => "invalid_input",
        Error::NotUnimodular { .. } => "not_unimodular",
        Error::NotHyperbolic { .. } => "not_hyperbolic",
        Error::ModelViolation(_) => "model_violation",
        Error::GlobalizationRequired { .. } => "globalization_required",
        Error::GlobalizationFailure { .. } => "globalization_failure",
        Error::ThetaTooLarge { .. } => "theta_too_large",
        Error::Domain { .. } => "domain",
        Error::DomainEscape { .. } => "domain_escape",
        Error::Divergence { .. } => "divergence",
        Error::Oracle(_) => "oracle",
        Error::Estimation(_) => "estimation",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
    }
}

/// One-line JSON diagnostic for standard error.
pub fn diagnostic(e: &Error) -> String {
    serde_json::json!({
        "level": "error",
        "kind": error_kind(e),
        "exit_code": exit_code(e),
        "message": e.to_string(),
    })
    .to_string()
}

fn unix_seconds() -> Option<u64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

/// The system actually solved, after optional globalization.
pub fn build_system(
    cfg: &RunConfig,
) -> Result<(
    SkewProduct,
    Option<fiberlin_core::globalize::GlobalizationReport>,
)> {
    let base = cfg.base.automorphism()?;
    let dim = base.dim();
    let original = cfg.fiber.build(base)?;
    match &cfg.globalization {
        Some(g) => {
            let (sys, rep) = globalize(&original, g.cut(dim)?, VERIFY_RESOLUTION)?;
            Ok((sys, Some(rep)))
        }
        None => Ok((original, None)),
    }
}

/// `q`, `D`, `α`, `θ` as the solver will see them.
pub fn validate_system(system: &SkewProduct, cfg: &RunConfig) -> Result<Validation> {
    let bounds = system.linearization().safe_bounds(cfg.solver.n_b)?;
    if bounds.globalization_required {
        return Err(Error::GlobalizationRequired { q: bounds.q });
    }
    if bounds.d.is_nan() || bounds.d <= 0.0 {
        return Err(Error::ModelViolation(format!(
            "multiplier lower bound D = {} is not positive",
            bounds.d
        )));
    }
    let alpha_theta = AlphaTheta::new(
        system.fiber.holder_beta(),
        system.base.spectral_radius(),
        bounds.q,
        cfg.solver.alpha,
    )?;
    Ok(Validation {
        bounds,
        alpha_theta,
    })
}

/// Exact `h` when one is known: closed form for Möbius, Koenigs otherwise.
fn oracle(cfg: &RunConfig, system: &SkewProduct, h: &GridFunction) -> Result<Option<OracleReport>> {
    if cfg.globalization.is_some() || !system.fiber.is_base_independent() {
        return Ok(None);
    }
    let spec = h.spec();
    let xs: Vec<f64> = spec.x_nodes().into_iter().filter(|&x| x > 0.0).collect();
    let (kind, exact): (&'static str, Vec<f64>) = match cfg.fiber {
        FiberSpec::Mobius { lambda, m, .. } => {
            let fam = MobiusFamily::new(lambda, m)?;
            (
                "closed_form",
                xs.iter().map(|&x| fam.exact_conjugacy(x)).collect(),
            )
        }
        _ => {
            let origin = vec![0.0; spec.dim];
            let fiber = system.fiber.clone();
            let f = move |x: f64| fiber.eval(&origin, x);
            let lambda = system.fiber.multiplier(&vec![0.0; spec.dim]);
            let vals = xs
                .iter()
                .map(|&x| koenigs_oracle(&f, lambda, x))
                .collect::<Result<Vec<_>>>()?;
            ("koenigs", vals)
        }
    };
    let offset = spec.n_x - xs.len();
    let (mut h_err, mut conj_err) = (0.0f64, 0.0f64);
    for bflat in 0..spec.base_nodes() {
        let row = h.row(bflat);
        for (j, (&x, &hx)) in xs.iter().zip(&exact).enumerate() {
            let hv = row[offset + j];
            h_err = h_err.max((hv - (hx - x) / (x * x)).abs());
            conj_err = conj_err.max((x + x * x * hv - hx).abs());
        }
    }
    Ok(Some(OracleReport {
        kind,
        h_error: h_err,
        conjugacy_error: conj_err,
        n_points: xs.len() * spec.base_nodes(),
    }))
}

fn bound_config(cfg: &RunConfig, epsilon: f64) -> BoundCheckConfig {
    BoundCheckConfig {
        depth: cfg.analysis.depth,
        n_pairs: cfg.analysis.bound_pairs,
        n_functions: cfg.analysis.bound_functions,
        epsilon,
        seed: cfg.seed,
        ..BoundCheckConfig::default()
    }
}

/// Runs `cmd` and writes its files into `cfg.output_dir`.
pub fn execute(cmd: Command, mut cfg: RunConfig, opts: RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    let (system, globalization) = build_system(&cfg)?;
    let dim = system.base.dim();
    let model = check_fiber_model(system.fiber.as_ref(), dim, MODEL_CHECK_NB, MODEL_CHECK_NX);
    if !model.fixes_zero {
        return Err(Error::ModelViolation(
            "f_b(0) != 0 somewhere on the check grid".into(),
        ));
    }
    if !model.is_orientation_preserving() {
        return Err(Error::ModelViolation(format!(
            "f_b is not increasing: min derivative {} on the check grid",
            model.min_derivative
        )));
    }
    let mut report = Report {
        tool: "fiberlin",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name(),
        timestamp: if opts.timestamp { unix_seconds() } else { None },
        status: "ok",
        config: cfg.clone(),
        system: SystemSummary {
            dim,
            mu: system.base.spectral_radius(),
            fiber: system.fiber.name(),
            base_independent: system.fiber.is_base_independent(),
            model,
            narrow_band: None,
        },
        validation: None,
        globalization,
        solver: None,
        conjugacy_residual: None,
        refined_residual: None,
        oracle_error: None,
        oracle: None,
        holder: None,
        constants: None,
        bound_checks: vec![],
        enforced_violations: 0,
        warnings: vec![],
        files: vec![],
    };
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let mut exit = EXIT_OK;

    if cmd == Command::GlobalizeOnly {
        if report.globalization.is_none() {
            return Err(Error::InvalidInput(
                "globalize-only needs a globalization block or --globalize".into(),
            ));
        }
        return finish(report, &out, exit);
    }

    let validation = validate_system(&system, &cfg)?;
    report.system.narrow_band = Some(narrow_band_check(&validation.bounds));
    report.validation = Some(validation.clone());

    if cmd == Command::Constants {
        let eps = cfg
            .solver
            .epsilon
            .unwrap_or(BoundCheckConfig::default().epsilon);
        let (constants, checks) = check_bounds(
            &system,
            &validation.bounds,
            &validation.alpha_theta,
            &bound_config(&cfg, eps),
        )?;
        write_constants_csv(&out.join("constants.csv"), &constants)?;
        write_bounds_csv(&out.join("bounds.csv"), &checks)?;
        report
            .files
            .extend(["constants.csv".into(), "bounds.csv".into()]);
        report.constants = Some(constants);
        exit = record_checks(&mut report, checks, opts.strict);
        return finish(report, &out, exit);
    }

    debug_assert!(cmd.solves());
    let sol = fiberlin_core::solve_conjugacy(&system, &cfg.solver.solver_config(cfg.seed))?;
    sol.h.write_csv(out.join("h.csv"))?;
    sol.h
        .write_binary(out.join("h.bin"), out.join("h.meta.json"))?;
    report
        .files
        .extend(["h.csv".into(), "h.bin".into(), "h.meta.json".into()]);
    let converged = sol.report.converged;
    report.solver = Some(sol.report.clone());
    if !converged {
        report.status = "not_converged";
        return finish(report, &out, EXIT_DIVERGENCE);
    }

    let n_random = cfg.analysis.n_random;
    report.conjugacy_residual = Some(conjugacy_residual(
        &system,
        &sol.conjugacy(),
        true,
        n_random,
        cfg.seed,
    ));
    report.refined_residual = Some(conjugacy_residual(
        &system,
        &sol.refined_conjugacy(),
        false,
        n_random,
        cfg.seed,
    ));
    match oracle(&cfg, &system, &sol.h) {
        Ok(o) => {
            report.oracle_error = o.as_ref().map(|o| o.h_error);
            report.oracle = o;
        }
        Err(e) => report.warnings.push(format!("oracle skipped: {e}")),
    }

    if matches!(cmd, Command::Holder | Command::Verify) {
        let at = &sol.prepared.alpha_theta;
        match estimate_holder(
            &sol.h,
            at,
            &cfg.analysis.scales,
            cfg.analysis.holder_pairs,
            cfg.seed,
        ) {
            Ok(est) => {
                write_holder_csv(&out.join("holder_table.csv"), &est)?;
                report.files.push("holder_table.csv".into());
                report.holder = Some(est);
            }
            Err(e) => report
                .warnings
                .push(format!("holder estimate skipped: {e}")),
        }
    }

    if cmd == Command::Verify {
        let (constants, checks) = check_bounds(
            &system,
            &sol.prepared.bounds,
            &sol.prepared.alpha_theta,
            &bound_config(&cfg, sol.report.epsilon),
        )?;
        write_bounds_csv(&out.join("bounds.csv"), &checks)?;
        report.files.push("bounds.csv".into());
        report.constants = Some(constants);
        exit = record_checks(&mut report, checks, opts.strict);
    }
    finish(report, &out, exit)
}

fn record_checks(report: &mut Report, checks: Vec<fiberlin_core::BoundCheck>, strict: bool) -> i32 {
    report.enforced_violations = violations(&checks).len();
    report.bound_checks = checks;
    if report.enforced_violations > 0 {
        report.status = "bound_violations";
        if strict {
            return EXIT_BOUNDS;
        }
    }
    EXIT_OK
}

fn finish(mut report: Report, out: &Path, exit_code: i32) -> Result<Outcome> {
    report.files.push("report.json".into());
    write_json(&out.join("report.json"), &report)?;
    Ok(Outcome { report, exit_code })
}
