//! Run configuration: a single JSON file, with CLI flags applied on top.

use std::path::PathBuf;

use fiberlin_core::globalize::{CutFunction, DEFAULT_R_INNER, DEFAULT_R_OUTER};
use fiberlin_core::operators::Truncation;
use fiberlin_core::sampling::default_scales;
use fiberlin_core::{
    CustomFamily, Error, MobiusFamily, QuadraticFamily, Result, SkewProduct, SolverConfig,
    ToralAutomorphism, TorusPoint,
};
use serde::{Deserialize, Serialize};

/// Row-major integer matrix, flat or nested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matrix {
    Nested(Vec<Vec<i64>>),
    Flat(Vec<i64>),
}

impl Matrix {
    pub fn automorphism(&self) -> Result<ToralAutomorphism> {
        match self {
            Matrix::Nested(rows) => ToralAutomorphism::from_rows(rows),
            Matrix::Flat(v) => ToralAutomorphism::from_row_major(v),
        }
    }
}

impl Default for Matrix {
    fn default() -> Self {
        Matrix::Nested(vec![vec![2, 1], vec![1, 1]])
    }
}

fn one() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum FiberSpec {
    Quadratic {
        #[serde(default = "dq0")]
        q0: f64,
        #[serde(default = "dq1")]
        q1: f64,
        #[serde(default = "dc0")]
        c0: f64,
        #[serde(default = "dc1")]
        c1: f64,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "four")]
        k: usize,
    },
    Mobius {
        lambda: f64,
        m: f64,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "four")]
        k: usize,
    },
    Custom {
        expr: String,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "four")]
        k: usize,
    },
}

fn dq0() -> f64 {
    QuadraticFamily::default().q0
}
fn dq1() -> f64 {
    QuadraticFamily::default().q1
}
fn dc0() -> f64 {
    QuadraticFamily::default().c0
}
fn dc1() -> f64 {
    QuadraticFamily::default().c1
}

impl Default for FiberSpec {
    fn default() -> Self {
        FiberSpec::Quadratic {
            q0: dq0(),
            q1: dq1(),
            c0: dc0(),
            c1: dc1(),
            beta: 1.0,
            k: 4,
        }
    }
}

impl FiberSpec {
    pub fn build(&self, base: ToralAutomorphism) -> Result<SkewProduct> {
        let check = |beta: f64, k: usize| -> Result<()> {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "beta must lie in (0, 1], got {beta}"
                )));
            }
            if k < 2 {
                return Err(Error::InvalidInput(format!(
                    "smoothness k must be >= 2, got {k}"
                )));
            }
            Ok(())
        };
        match *self {
            FiberSpec::Quadratic {
                q0,
                q1,
                c0,
                c1,
                beta,
                k,
            } => {
                check(beta, k)?;
                Ok(SkewProduct::new(
                    base,
                    QuadraticFamily {
                        q0,
                        q1,
                        c0,
                        c1,
                        beta,
                        k,
                    },
                ))
            }
            FiberSpec::Mobius { lambda, m, beta, k } => {
                check(beta, k)?;
                let mut fam = MobiusFamily::new(lambda, m)?;
                fam.beta = beta;
                fam.k = k;
                Ok(SkewProduct::new(base, fam))
            }
            FiberSpec::Custom { ref expr, beta, k } => {
                check(beta, k)?;
                let fam = CustomFamily::parse(expr, beta, k)?;
                if fam.base_arity() > base.dim() {
                    return Err(Error::InvalidInput(format!(
                        "expression uses b{} but the torus has dimension {}",
                        fam.base_arity(),
                        base.dim()
                    )));
                }
                Ok(SkewProduct::new(base, fam))
            }
        }
    }

    pub fn smoothness(&self) -> usize {
        match *self {
            FiberSpec::Quadratic { k, .. }
            | FiberSpec::Mobius { k, .. }
            | FiberSpec::Custom { k, .. } => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalizationSpec {
    /// Defaults to the origin.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default = "r_inner")]
    pub r_inner: f64,
    #[serde(default = "r_outer")]
    pub r_outer: f64,
}

fn r_inner() -> f64 {
    DEFAULT_R_INNER
}
fn r_outer() -> f64 {
    DEFAULT_R_OUTER
}

impl Default for GlobalizationSpec {
    fn default() -> Self {
        GlobalizationSpec {
            center: None,
            r_inner: DEFAULT_R_INNER,
            r_outer: DEFAULT_R_OUTER,
        }
    }
}

impl GlobalizationSpec {
    pub fn cut(&self, dim: usize) -> Result<CutFunction> {
        let center = match &self.center {
            Some(c) if c.len() != dim => {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                })
            }
            Some(c) => TorusPoint::new(c.clone()),
            None => TorusPoint::origin(dim),
        };
        CutFunction::new(center, self.r_inner, self.r_outer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    /// `null` selects `ε` automatically.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Mutually exclusive with `truncation_n`.
    #[serde(default)]
    pub tail_tol: Option<f64>,
    #[serde(default)]
    pub truncation_n: Option<usize>,
    #[serde(default = "fp_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "max_iter")]
    pub max_iterations: usize,
    #[serde(default = "n_b")]
    pub n_b: usize,
    #[serde(default = "n_x")]
    pub n_x: usize,
    #[serde(default = "trace_pairs")]
    pub trace_pairs: usize,
}

fn fp_tol() -> f64 {
    SolverConfig::default().fixed_point_tol
}
fn max_iter() -> usize {
    SolverConfig::default().max_iterations
}
fn n_b() -> usize {
    SolverConfig::default().n_b
}
fn n_x() -> usize {
    SolverConfig::default().n_x
}
fn trace_pairs() -> usize {
    SolverConfig::default().trace_pairs
}

pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            epsilon: None,
            alpha: None,
            tail_tol: None,
            truncation_n: None,
            fixed_point_tol: fp_tol(),
            max_iterations: max_iter(),
            n_b: n_b(),
            n_x: n_x(),
            trace_pairs: trace_pairs(),
        }
    }
}

impl SolverSpec {
    /// Fills the truncation default so the effective config is explicit.
    pub fn normalize(&mut self) -> Result<()> {
        match (self.tail_tol, self.truncation_n) {
            (Some(_), Some(_)) => Err(Error::InvalidInput(
                "tail_tol and truncation_n are mutually exclusive".into(),
            )),
            (None, None) => {
                self.tail_tol = Some(DEFAULT_TAIL_TOL);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn solver_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon,
            alpha: self.alpha,
            truncation: match (self.truncation_n, self.tail_tol) {
                (Some(n), _) => Truncation::Depth(n),
                (None, t) => Truncation::TailTol(t.unwrap_or(DEFAULT_TAIL_TOL)),
            },
            fixed_point_tol: self.fixed_point_tol,
            max_iterations: self.max_iterations,
            n_b: self.n_b,
            n_x: self.n_x,
            trace_pairs: self.trace_pairs,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    /// Pairs per scale for the Hölder estimate of `h`.
    #[serde(default = "holder_pairs")]
    pub holder_pairs: usize,
    /// Pairs for the cocycle bound checks.
    #[serde(default = "bound_pairs")]
    pub bound_pairs: usize,
    #[serde(default = "depth")]
    pub depth: usize,
    /// Random test functions for the operator-norm checks.
    #[serde(default = "bound_functions")]
    pub bound_functions: usize,
    /// Off-grid points for the conjugacy residual.
    #[serde(default = "n_random")]
    pub n_random: usize,
}

fn holder_pairs() -> usize {
    2000
}
fn bound_pairs() -> usize {
    10_000
}
fn depth() -> usize {
    10
}
fn bound_functions() -> usize {
    100
}
fn n_random() -> usize {
    10_000
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            scales: default_scales(),
            holder_pairs: holder_pairs(),
            bound_pairs: bound_pairs(),
            depth: depth(),
            bound_functions: bound_functions(),
            n_random: n_random(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub base: Matrix,
    #[serde(default)]
    pub fiber: FiberSpec,
    #[serde(default)]
    pub globalization: Option<GlobalizationSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default = "output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn output_dir() -> PathBuf {
    PathBuf::from("fiberlin-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            base: Matrix::default(),
            fiber: FiberSpec::default(),
            globalization: None,
            solver: SolverSpec::default(),
            analysis: AnalysisSpec::default(),
            output_dir: output_dir(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(src: &str) -> Result<Self> {
        serde_json::from_str(src).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&src)
    }

    pub fn validate(&mut self) -> Result<()> {
        self.solver.normalize()?;
        let a = &self.analysis;
        if a.depth == 0 || a.depth > 15 {
            return Err(Error::InvalidInput(format!(
                "analysis depth must lie in 1..=15, got {}",
                a.depth
            )));
        }
        if a.scales.iter().any(|&s| !(s > 0.0 && s < 0.5)) {
            return Err(Error::InvalidInput(
                "analysis scales must lie in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let mut c =
            RunConfig::from_json(r#"{"fiber": {"family": "mobius", "lambda": 0.5, "m": 0.1}}"#)
                .unwrap();
        c.validate().unwrap();
        assert_eq!(c.solver.tail_tol, Some(DEFAULT_TAIL_TOL));
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn matrix_forms() {
        let flat = RunConfig::from_json(r#"{"base": [2, 1, 1, 1]}"#).unwrap();
        let nested = RunConfig::from_json(r#"{"base": [[2, 1], [1, 1]]}"#).unwrap();
        assert_eq!(
            flat.base.automorphism().unwrap(),
            nested.base.automorphism().unwrap()
        );
    }

    #[test]
    fn rejects_unknown_and_conflicting_fields() {
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let mut c =
            RunConfig::from_json(r#"{"solver": {"tail_tol": 1e-8, "truncation_n": 20}}"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn custom_arity_is_checked() {
        let base = ToralAutomorphism::cat_map();
        let spec = FiberSpec::Custom {
            expr: "0.5*x + 0.1*b3*x^2".into(),
            beta: 1.0,
            k: 4,
        };
        assert!(spec.build(base).is_err());
    }
}
