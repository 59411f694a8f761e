//! The homological operator `L`, the shift `Φ`, and the Picard iteration for
//! the fixed point `h = L Φ h`.
//!
//! `L g` is the truncated series `-Σ_{k=0}^{N} P_k(b) g(A^k b, Π_k(b) x)`. On
//! grid nodes the base orbit `A^k b` stays on the grid exactly, so only the
//! fiber argument of a grid function is ever interpolated.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::AlphaTheta;
use crate::error::{Error, Result};
use crate::gridfn::{GridFunction, GridSpec, HolderSampling};
use crate::sampling::default_scales;
use crate::skew_product::{FiberMap, LinearizedSkewProduct, MultiplierBounds, SkewProduct};
use crate::torus::{ToralAutomorphism, TorusPoint};

pub const MIN_DEPTH: usize = 8;
/// Fiber points handled per batched `Q` call.
const SHIFT_CHUNK: usize = 64;
pub const MAX_DEPTH: usize = 200;

/// Ratio threshold for accepting an `ε` in the automatic search.
pub const AUTO_EPSILON_RATIO: f64 = 0.9;
pub const AUTO_EPSILON_START: f64 = 0.1;
pub const AUTO_EPSILON_HALVINGS: usize = 10;
/// Consecutive ratios above 1 that count as divergence.
pub const DIVERGENCE_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Truncation {
    Depth(usize),
    TailTol(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// `None` selects `ε` automatically.
    pub epsilon: Option<f64>,
    /// `None` selects `0.9 alpha_max`.
    pub alpha: Option<f64>,
    pub truncation: Truncation,
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
    pub n_b: usize,
    pub n_x: usize,
    /// Pairs per scale for the Hölder part of the space-N trace.
    pub trace_pairs: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: None,
            alpha: None,
            truncation: Truncation::TailTol(1e-12),
            fixed_point_tol: 1e-10,
            max_iterations: 200,
            n_b: 64,
            n_x: 33,
            trace_pairs: 256,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e <= 1.0) {
                return bad(format!("epsilon must lie in (0, 1], got {e}"));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("alpha must lie in (0, 1), got {a}"));
            }
        }
        match self.truncation {
            Truncation::Depth(0) => return bad("truncation depth must be >= 1".into()),
            Truncation::TailTol(t) if !(t > 0.0) => {
                return bad(format!("tail_tol must be positive, got {t}"))
            }
            _ => {}
        }
        if !(self.fixed_point_tol > 0.0) {
            return bad(format!(
                "fixed_point_tol must be positive, got {}",
                self.fixed_point_tol
            ));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        if self.n_b < 2 || self.n_x < 2 {
            return bad(format!(
                "grid too small: n_b = {}, n_x = {}",
                self.n_b, self.n_x
            ));
        }
        Ok(())
    }
}

/// Smallest `N` with `||Q||_C q^{N+1} / (D (1 - q)) <= tail_tol`, clamped.
pub fn depth_for_tail(tail_tol: f64, q_norm: f64, q: f64, d: f64) -> usize {
    if q_norm <= 0.0 || q <= 0.0 {
        return MIN_DEPTH;
    }
    let n = ((tail_tol * d * (1.0 - q) / q_norm).ln() / q.ln()).ceil() - 1.0;
    if n.is_finite() {
        (n.max(0.0) as usize).clamp(MIN_DEPTH, MAX_DEPTH)
    } else {
        MAX_DEPTH
    }
}

/// Geometric tail bound `||g||_C q^{N+1} / (D (1 - q))`.
pub fn tail_bound(g_norm: f64, depth: usize, bounds: &MultiplierBounds) -> f64 {
    g_norm * bounds.q.powi(depth as i32 + 1) / (bounds.d * (1.0 - bounds.q))
}

/// Bounds defining the invariant set `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceNParams {
    pub a_c: f64,
    pub a_lip: f64,
    pub a_alpha: f64,
}

/// Floor keeping `A_Lip`, `A_α` positive when `h_1` is flat.
const SPACE_N_FLOOR: f64 = 1e-8;

impl SpaceNParams {
    /// `A_C = 2 ||Q||_C / (D (1 - q))`, `A_Lip`, `A_α` ten times the norms of `h_1`.
    pub fn from_first_iterate(
        q_norm: f64,
        bounds: &MultiplierBounds,
        h1_lip: f64,
        h1_holder: f64,
    ) -> Self {
        SpaceNParams {
            a_c: (2.0 * q_norm * bounds.homological_norm_bound()).max(SPACE_N_FLOOR),
            a_lip: (10.0 * h1_lip).max(SPACE_N_FLOOR),
            a_alpha: (10.0 * h1_holder).max(SPACE_N_FLOOR),
        }
    }

    pub fn validate(&self, q_norm: f64, bounds: &MultiplierBounds) -> Result<()> {
        let need = q_norm * bounds.homological_norm_bound();
        if !(self.a_c > need && self.a_lip > 0.0 && self.a_alpha > 0.0) {
            return Err(Error::InvalidInput(format!(
                "space-N constants {self:?} need positive entries and A_C > {need}"
            )));
        }
        Ok(())
    }
}

/// Norms of one iterate against the space-N bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceNEntry {
    pub iteration: usize,
    pub c_norm: f64,
    pub lip_x: f64,
    pub holder: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonAttempt {
    pub epsilon: f64,
    pub ratios: Vec<f64>,
    pub accepted: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    pub epsilon: f64,
    pub alpha: f64,
    pub alpha_max: f64,
    pub theta: f64,
    pub mu: f64,
    pub bounds: MultiplierBounds,
    pub depth: usize,
    pub q_norm: f64,
    pub tail_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta: f64,
    /// `δ_{i+1} / δ_i`; ratios at the rounding floor are omitted.
    pub contraction_estimates: Vec<f64>,
    /// `sup |LΦ h - h|` at the returned `h`.
    pub functional_residual: f64,
    /// Node-wise residual of `λ² h∘F0 - λ h = Φh`.
    pub homological_residual: f64,
    pub space_n: SpaceNParams,
    pub in_space_n: Vec<SpaceNEntry>,
    /// `||h||_C + ||h'||_C + ||h''||_C` on the grid.
    pub weighted_norm: f64,
    pub epsilon_search: Vec<EpsilonAttempt>,
}

/// Precomputed orbits, `Π_k` and `P_k` for every base node.
#[derive(Debug, Clone)]
pub struct OperatorContext {
    spec: GridSpec,
    depth: usize,
    base: ToralAutomorphism,
    /// Node coordinates, `dim` per node.
    coords: Vec<f64>,
    /// Multiplier at each node.
    lambda: Vec<f64>,
    /// `orbit[i * (N+1) + k]`: flat index of `A^k b_i`.
    orbit: Vec<u32>,
    pi: Vec<f64>,
    p: Vec<f64>,
}

impl OperatorContext {
    pub fn new(linear: &LinearizedSkewProduct, spec: GridSpec, depth: usize) -> Result<Self> {
        if linear.base.dim() != spec.dim {
            return Err(Error::DimensionMismatch {
                expected: linear.base.dim(),
                got: spec.dim,
            });
        }
        if spec.base_nodes() > u32::MAX as usize {
            return Err(Error::InvalidInput("base grid too large".into()));
        }
        let nodes = spec.base_nodes();
        let dim = spec.dim;
        let mut coords = vec![0.0; nodes * dim];
        coords
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, c)| spec.base_coords(i, c));
        let lambda: Vec<f64> = coords
            .par_chunks(dim)
            .map(|b| linear.multiplier(b))
            .collect();
        let mut image = vec![0u32; nodes];
        let mut idx = vec![0usize; dim];
        let mut out = vec![0usize; dim];
        for (i, im) in image.iter_mut().enumerate() {
            idx.copy_from_slice(&spec.base_multi_index(i));
            linear.base.apply_index(&idx, spec.n_b, &mut out);
            *im = spec.base_flat(&out) as u32;
        }
        let stride = depth + 1;
        let mut orbit = vec![0u32; nodes * stride];
        let mut pi = vec![0.0; nodes * stride];
        let mut p = vec![0.0; nodes * stride];
        orbit
            .par_chunks_mut(stride)
            .zip(pi.par_chunks_mut(stride))
            .zip(p.par_chunks_mut(stride))
            .enumerate()
            .for_each(|(i, ((o, pi), p))| {
                let mut cur = i as u32;
                let mut prod = 1.0;
                for k in 0..stride {
                    o[k] = cur;
                    pi[k] = prod;
                    let l = lambda[cur as usize];
                    p[k] = prod / l;
                    prod *= l;
                    cur = image[cur as usize];
                }
            });
        Ok(OperatorContext {
            spec,
            depth,
            base: linear.base.clone(),
            coords,
            lambda,
            orbit,
            pi,
            p,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn base(&self) -> &ToralAutomorphism {
        &self.base
    }

    #[inline]
    pub fn node_coords(&self, i: usize) -> &[f64] {
        &self.coords[i * self.spec.dim..(i + 1) * self.spec.dim]
    }

    #[inline]
    pub fn node_multiplier(&self, i: usize) -> f64 {
        self.lambda[i]
    }

    /// Flat index of `A b_i`.
    #[inline]
    pub fn image(&self, i: usize) -> usize {
        self.orbit[i * (self.depth + 1) + 1.min(self.depth)] as usize
    }

    /// `out(b, x_j) = -Σ_k P_k(b) Π_k(b)^l g(A^k b, Π_k(b) x_j)`, summed in
    /// increasing `k` at every node. `row(node, ys, out)` fills `g(node, ys)`.
    fn series<F>(&self, power: i32, row: F) -> Result<GridFunction>
    where
        F: Fn(usize, &[f64], &mut [f64]) -> Result<()> + Sync,
    {
        let spec = self.spec;
        let xs = spec.x_nodes();
        let stride = self.depth + 1;
        let mut values = vec![0.0; spec.len()];
        let err = values
            .par_chunks_mut(spec.n_x)
            .enumerate()
            .map_init(
                || (vec![0.0; spec.n_x], vec![0.0; spec.n_x]),
                |(ys, terms), (i, acc)| {
                    for k in 0..stride {
                        let o = self.orbit[i * stride + k] as usize;
                        let pik = self.pi[i * stride + k];
                        let w = self.p[i * stride + k] * pik.powi(power);
                        for (y, &x) in ys.iter_mut().zip(&xs) {
                            *y = pik * x;
                        }
                        if let Err(e) = row(o, ys, terms) {
                            return Some((i, e));
                        }
                        for (v, t) in acc.iter_mut().zip(terms.iter()) {
                            *v -= w * t;
                        }
                    }
                    None
                },
            )
            .flatten()
            .min_by_key(|(i, _)| *i);
        match err {
            Some((_, e)) => Err(e),
            None => GridFunction::from_values(spec, values),
        }
    }

    /// `L g` for `g` given as a closure on `T^d × [0, 1]`.
    pub fn homological_solve(
        &self,
        g: &(dyn Fn(&[f64], f64) -> f64 + Sync),
    ) -> Result<GridFunction> {
        self.series(0, |o, ys, out| {
            let b = self.node_coords(o);
            for (t, &y) in out.iter_mut().zip(ys) {
                *t = g(b, y);
            }
            Ok(())
        })
    }

    /// `L g` for `g` given on the same grid.
    pub fn homological_solve_grid(&self, g: &GridFunction) -> Result<GridFunction> {
        self.derivative_transport(g, 0)
    }

    /// `-Σ P_k Π_k^l h_l∘F0^k`: the `l`-th fiber derivative of `L h` given `h_l = h^{(l)}`.
    pub fn derivative_transport(&self, h_l: &GridFunction, l: usize) -> Result<GridFunction> {
        self.check_grid(h_l)?;
        self.series(l as i32, |o, ys, out| {
            for (t, &y) in out.iter_mut().zip(ys) {
                *t = h_l.eval_at_base_node(o, y);
            }
            Ok(())
        })
    }

    /// `(1 + x h)² Q(b, x + x² h)` along a row of fiber points, `h` read at a base node.
    fn shift_row(
        &self,
        fiber: &dyn FiberMap,
        h: &GridFunction,
        node: usize,
        xs: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let mut shifted = [0.0f64; SHIFT_CHUNK];
        let mut factor = [0.0f64; SHIFT_CHUNK];
        let b = self.node_coords(node);
        for (xc, oc) in xs.chunks(SHIFT_CHUNK).zip(out.chunks_mut(SHIFT_CHUNK)) {
            let n = xc.len();
            for j in 0..n {
                let x = xc[j];
                let hv = h.eval_at_base_node(node, x);
                let s = x + x * x * hv;
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::DomainEscape {
                        b: b.to_vec(),
                        x,
                        shifted: s,
                    });
                }
                let a = 1.0 + x * hv;
                shifted[j] = s;
                factor[j] = a * a;
            }
            fiber.quadratic_part_row(b, &shifted[..n], oc);
            for (o, f) in oc.iter_mut().zip(&factor[..n]) {
                *o *= f;
            }
        }
        Ok(())
    }

    /// `Φh` at every node.
    pub fn shift_apply(&self, fiber: &dyn FiberMap, h: &GridFunction) -> Result<GridFunction> {
        self.check_grid(h)?;
        let xs = self.spec.x_nodes();
        let mut values = vec![0.0; self.spec.len()];
        let err = values
            .par_chunks_mut(self.spec.n_x)
            .enumerate()
            .filter_map(|(i, row)| self.shift_row(fiber, h, i, &xs, row).err().map(|e| (i, e)))
            .min_by_key(|(i, _)| *i);
        match err {
            Some((_, e)) => Err(e),
            None => GridFunction::from_values(self.spec, values),
        }
    }

    /// `L Φ h`, with `Φh` evaluated exactly at the off-grid fiber points.
    pub fn apply_lphi(&self, fiber: &dyn FiberMap, h: &GridFunction) -> Result<GridFunction> {
        self.check_grid(h)?;
        self.series(0, |o, ys, out| self.shift_row(fiber, h, o, ys, out))
    }

    /// `max |λ_b² h(Ab, λ_b x) - λ_b h(b, x) - g(b, x)|` over the nodes;
    /// `g` receives `(node, x index, x)`.
    pub fn homological_residual(
        &self,
        h: &GridFunction,
        g: &(dyn Fn(usize, usize, f64) -> Result<f64> + Sync),
    ) -> Result<f64> {
        self.check_grid(h)?;
        let xs = self.spec.x_nodes();
        let per_node: Vec<Result<f64>> = (0..self.spec.base_nodes())
            .into_par_iter()
            .map(|i| {
                let l = self.lambda[i];
                let img = self.image(i);
                let mut m = 0.0f64;
                for (j, &x) in xs.iter().enumerate() {
                    let lhs = l * l * h.eval_at_base_node(img, l * x) - l * h.node(i, j);
                    m = m.max((lhs - g(i, j, x)?).abs());
                }
                Ok(m)
            })
            .collect();
        per_node.into_iter().try_fold(0.0f64, |a, r| Ok(a.max(r?)))
    }

    fn check_grid(&self, g: &GridFunction) -> Result<()> {
        if *g.spec() != self.spec {
            return Err(Error::InvalidInput(format!(
                "grid {:?} does not match the operator grid {:?}",
                g.spec(),
                self.spec
            )));
        }
        Ok(())
    }
}

/// `sup |Q|` over the nodes of `spec`.
pub fn quadratic_norm(fiber: &dyn FiberMap, spec: &GridSpec) -> f64 {
    let g = GridFunction::from_fn(*spec, |b, x| fiber.quadratic_part(b, x));
    g.c_norm()
}

/// `||h||_C + ||∂h||_C + ||∂²h||_C` from grid differences.
pub fn weighted_norm(h: &GridFunction) -> f64 {
    let spec = h.spec();
    let dx = spec.dx();
    let mut d2 = 0.0f64;
    if spec.n_x >= 3 {
        for i in 0..spec.base_nodes() {
            let r = h.row(i);
            for w in r.windows(3) {
                d2 = d2.max((w[2] - 2.0 * w[1] + w[0]).abs() / (dx * dx));
            }
        }
    }
    h.c_norm() + h.lipschitz_x() + d2
}

/// A validated problem at a fixed `ε`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub system: SkewProduct,
    pub bounds: MultiplierBounds,
    pub alpha_theta: AlphaTheta,
    pub q_norm: f64,
    pub context: OperatorContext,
}

impl Prepared {
    pub fn new(system: &SkewProduct, cfg: &SolverConfig, epsilon: f64) -> Result<Self> {
        cfg.validate()?;
        let linear = system.linearization();
        let bounds = linear.safe_bounds(cfg.n_b)?;
        if bounds.globalization_required {
            return Err(Error::GlobalizationRequired { q: bounds.q });
        }
        if !(bounds.d > 0.0) {
            return Err(Error::ModelViolation(format!(
                "multiplier lower bound D = {} is not positive",
                bounds.d
            )));
        }
        let at = AlphaTheta::new(
            system.fiber.holder_beta(),
            system.base.spectral_radius(),
            bounds.q,
            cfg.alpha,
        )?;
        let spec = GridSpec::new(system.base.dim(), cfg.n_b, cfg.n_x, epsilon)?;
        let q_norm = quadratic_norm(system.fiber.as_ref(), &spec);
        let depth = match cfg.truncation {
            Truncation::Depth(n) => n,
            Truncation::TailTol(t) => depth_for_tail(t, q_norm, bounds.q, bounds.d),
        };
        let context = OperatorContext::new(&linear, spec, depth)?;
        Ok(Prepared {
            system: system.clone(),
            bounds,
            alpha_theta: at,
            q_norm,
            context,
        })
    }

    pub fn lphi(&self, h: &GridFunction) -> Result<GridFunction> {
        self.context.apply_lphi(self.system.fiber.as_ref(), h)
    }

    fn trace_sampling(&self, cfg: &SolverConfig) -> HolderSampling {
        HolderSampling {
            n_pairs: cfg.trace_pairs,
            scales: default_scales(),
            seed: cfg.seed,
        }
    }
}

/// Outcome of a converged (or exhausted) solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub h: GridFunction,
    pub report: SolverReport,
    pub prepared: Prepared,
}

impl Solution {
    pub fn conjugacy(&self) -> Conjugacy {
        Conjugacy::new(self.h.clone())
    }

    pub fn refined_conjugacy(&self) -> RefinedConjugacy {
        RefinedConjugacy::new(
            self.prepared.system.clone(),
            self.h.clone(),
            self.prepared.context.depth(),
        )
    }
}

enum Picard {
    Done(Box<Solution>),
    /// Auto-ε probe failed: ratios and reason.
    Rejected(Vec<f64>, String),
}

/// Relative size of an update treated as rounding noise.
const NOISE_FLOOR: f64 = 1e-13;

fn picard(prep: Prepared, cfg: &SolverConfig, probe: bool) -> Result<Picard> {
    let fiber = prep.system.fiber.clone();
    let ctx = &prep.context;
    let sampling = prep.trace_sampling(cfg);
    let alpha = prep.alpha_theta.alpha;

    let mut h = GridFunction::zeros(*ctx.spec());
    let mut next = match prep.lphi(&h) {
        Ok(n) => n,
        Err(e @ Error::DomainEscape { .. }) if probe => {
            return Ok(Picard::Rejected(vec![], e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let h1_norms = next.holder_norm(alpha, &sampling)?;
    let space_n = SpaceNParams::from_first_iterate(
        prep.q_norm,
        &prep.bounds,
        h1_norms.lip_x,
        h1_norms.holder_norm,
    );
    let mut trace = vec![];
    let mut ratios: Vec<f64> = vec![];
    let mut prev_delta: Option<f64> = None;
    let mut over_one = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut delta;
    loop {
        iterations += 1;
        delta = next.sup_distance(&h);
        let norms = if iterations == 1 {
            h1_norms.clone()
        } else {
            next.holder_norm(alpha, &sampling)?
        };
        trace.push(SpaceNEntry {
            iteration: iterations,
            c_norm: norms.c_norm,
            lip_x: norms.lip_x,
            holder: norms.holder_norm,
            inside: norms.c_norm <= space_n.a_c
                && norms.lip_x <= space_n.a_lip
                && norms.holder_norm <= space_n.a_alpha,
        });
        h = next;
        let floor = NOISE_FLOOR * h.c_norm().max(1.0);
        if let Some(p) = prev_delta {
            if p > floor && delta > floor {
                let r = delta / p;
                ratios.push(r);
                over_one = if r > 1.0 { over_one + 1 } else { 0 };
                if over_one >= DIVERGENCE_RUN {
                    return if probe {
                        Ok(Picard::Rejected(ratios, "diverging".into()))
                    } else {
                        Err(Error::Divergence { ratios })
                    };
                }
            }
        }
        if probe && ratios.len() == 3 {
            if let Some(r) = ratios.iter().find(|&&r| !(r < AUTO_EPSILON_RATIO)) {
                let reason = format!("ratio {r} >= {AUTO_EPSILON_RATIO}");
                return Ok(Picard::Rejected(ratios, reason));
            }
        }
        if delta < cfg.fixed_point_tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        prev_delta = Some(delta);
        next = match prep.lphi(&h) {
            Ok(n) => n,
            Err(e @ Error::DomainEscape { .. }) if probe => {
                return Ok(Picard::Rejected(ratios, e.to_string()))
            }
            Err(e) => return Err(e),
        };
    }

    let again = prep.lphi(&h)?;
    let functional_residual = again.sup_distance(&h);
    let phi = ctx.shift_apply(fiber.as_ref(), &h)?;
    let homological_residual = ctx.homological_residual(&h, &|i, j, _| Ok(phi.node(i, j)))?;
    let at = &prep.alpha_theta;
    let report = SolverReport {
        epsilon: ctx.spec().epsilon,
        alpha: at.alpha,
        alpha_max: at.alpha_max,
        theta: at.theta,
        mu: at.mu,
        bounds: prep.bounds,
        depth: ctx.depth(),
        q_norm: prep.q_norm,
        tail_bound: tail_bound(prep.q_norm, ctx.depth(), &prep.bounds),
        iterations,
        converged,
        final_delta: delta,
        contraction_estimates: ratios,
        functional_residual,
        homological_residual,
        space_n,
        in_space_n: trace,
        weighted_norm: weighted_norm(&h),
        epsilon_search: vec![],
    };
    Ok(Picard::Done(Box::new(Solution {
        h,
        report,
        prepared: prep,
    })))
}

/// Picard iteration `h_{n+1} = L Φ h_n` from `h_0 = 0`.
///
/// With `cfg.epsilon = None`, `ε` starts at 0.1 and is halved until the first
/// three contraction ratios are below 0.9.
pub fn solve_conjugacy(system: &SkewProduct, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if let Some(eps) = cfg.epsilon {
        let prep = Prepared::new(system, cfg, eps)?;
        return match picard(prep, cfg, false)? {
            Picard::Done(s) => {
                let mut s = *s;
                s.report.epsilon_search.push(EpsilonAttempt {
                    epsilon: eps,
                    ratios: s
                        .report
                        .contraction_estimates
                        .iter()
                        .take(3)
                        .copied()
                        .collect(),
                    accepted: true,
                    reason: "fixed".into(),
                });
                Ok(s)
            }
            Picard::Rejected(r, _) => Err(Error::Divergence { ratios: r }),
        };
    }
    let mut attempts = vec![];
    let mut eps = AUTO_EPSILON_START;
    for _ in 0..=AUTO_EPSILON_HALVINGS {
        let prep = Prepared::new(system, cfg, eps)?;
        match picard(prep, cfg, true)? {
            Picard::Done(s) => {
                let mut s = *s;
                attempts.push(EpsilonAttempt {
                    epsilon: eps,
                    ratios: s
                        .report
                        .contraction_estimates
                        .iter()
                        .take(3)
                        .copied()
                        .collect(),
                    accepted: true,
                    reason: "first ratios below threshold".into(),
                });
                s.report.epsilon_search = attempts;
                return Ok(s);
            }
            Picard::Rejected(ratios, reason) => attempts.push(EpsilonAttempt {
                epsilon: eps,
                ratios,
                accepted: false,
                reason,
            }),
        }
        eps *= 0.5;
    }
    let ratios = attempts
        .last()
        .map(|a| a.ratios.clone())
        .unwrap_or_default();
    Err(Error::Divergence { ratios })
}

/// Fiber part of a conjugacy candidate `H(b, x) = (b, H_b(x))`.
pub trait ConjugacyMap: Sync {
    fn fiber(&self, b: &[f64], x: f64) -> f64;
    /// Grid the candidate was computed on.
    fn grid(&self) -> &GridSpec;
}

/// `H(b, x) = (b, x + x² h(b, x))` with `h` interpolated from the grid.
#[derive(Debug, Clone)]
pub struct Conjugacy {
    h: GridFunction,
}

impl Conjugacy {
    pub fn new(h: GridFunction) -> Self {
        Conjugacy { h }
    }

    pub fn identity(spec: GridSpec) -> Self {
        Conjugacy {
            h: GridFunction::zeros(spec),
        }
    }

    pub fn h(&self) -> &GridFunction {
        &self.h
    }

    pub fn epsilon(&self) -> f64 {
        self.h.spec().epsilon
    }

    /// Fiber part `x + x² h(b, x)`.
    #[inline]
    pub fn fiber(&self, b: &[f64], x: f64) -> f64 {
        x + x * x * self.h.eval_clamped(b, x)
    }

    pub fn apply(&self, b: &[f64], x: f64) -> Result<(TorusPoint, f64)> {
        let hv = self.h.eval(b, x)?;
        Ok((TorusPoint::new(b.to_vec()), x + x * x * hv))
    }
}

impl ConjugacyMap for Conjugacy {
    fn fiber(&self, b: &[f64], x: f64) -> f64 {
        Conjugacy::fiber(self, b, x)
    }

    fn grid(&self) -> &GridSpec {
        self.h.spec()
    }
}

/// Assembles the conjugacy from a converged `h`.
pub fn assemble_h(h: GridFunction) -> Conjugacy {
    Conjugacy::new(h)
}

/// Off-grid extension `h̃ = L Φ h` evaluated pointwise along the exact base
/// orbit of the query point; `h` is interpolated only inside `Φ`.
#[derive(Debug, Clone)]
pub struct RefinedConjugacy {
    system: SkewProduct,
    h: GridFunction,
    depth: usize,
}

impl RefinedConjugacy {
    pub fn new(system: SkewProduct, h: GridFunction, depth: usize) -> Self {
        RefinedConjugacy { system, h, depth }
    }

    pub fn h_value(&self, b: &[f64], x: f64) -> f64 {
        let fiber = self.system.fiber.as_ref();
        let mut cur = b.to_vec();
        let mut next = vec![0.0; cur.len()];
        let mut pi = 1.0;
        let mut acc = 0.0;
        for k in 0..=self.depth {
            let l = fiber.multiplier(&cur);
            let y = pi * x;
            let hv = self.h.eval_clamped(&cur, y);
            let a = 1.0 + y * hv;
            acc -= pi / l * a * a * fiber.quadratic_part(&cur, y + y * y * hv);
            if k < self.depth {
                pi *= l;
                self.system.base.apply_into(&cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
        }
        acc
    }
}

impl ConjugacyMap for RefinedConjugacy {
    fn fiber(&self, b: &[f64], x: f64) -> f64 {
        x + x * x * self.h_value(b, x)
    }

    fn grid(&self) -> &GridSpec {
        self.h.spec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skew_product::{CustomFamily, MobiusFamily, QuadraticFamily};

    fn cat() -> ToralAutomorphism {
        ToralAutomorphism::cat_map()
    }

    fn ctx(lambda: f64, n_b: usize, n_x: usize, eps: f64, depth: usize) -> OperatorContext {
        let lin = LinearizedSkewProduct::constant(cat(), lambda);
        OperatorContext::new(&lin, GridSpec::new(2, n_b, n_x, eps).unwrap(), depth).unwrap()
    }

    #[test]
    fn depth_formula() {
        // 0.05 * 0.5^{N+1} / 0.25 <= 1e-10  <=>  N + 1 >= 30.9
        assert_eq!(depth_for_tail(1e-10, 0.05, 0.5, 0.5), 30);
        assert!(0.05 * 0.5f64.powi(31) / 0.25 <= 1e-10 && 0.05 * 0.5f64.powi(30) / 0.25 > 1e-10);
        assert_eq!(depth_for_tail(1.0, 0.05, 0.5, 0.5), MIN_DEPTH);
        assert_eq!(depth_for_tail(1e-300, 1.0, 0.999, 0.5), MAX_DEPTH);
    }

    #[test]
    fn homological_examples() {
        let c = ctx(0.5, 8, 5, 0.1, 60);
        let zero = c.homological_solve(&|_, _| 0.0).unwrap();
        assert_eq!(zero.c_norm(), 0.0);
        let h = c.homological_solve(&|_, _| 0.05).unwrap();
        assert!(h.values().iter().all(|v| (v + 0.2).abs() < 1e-15));
        let xi = c.homological_solve(&|b, _| b[0].sin()).unwrap();
        for i in 0..64 {
            let r = xi.row(i);
            assert!(r.iter().all(|v| (v - r[0]).abs() < 1e-15));
        }
    }

    #[test]
    fn shift_examples() {
        let c = ctx(0.5, 4, 11, 0.1, 10);
        let fam = CustomFamily::parse("0.5*x + 0.05*x^2", 1.0, 4).unwrap();
        let zero = GridFunction::zeros(*c.spec());
        let phi0 = c.shift_apply(&fam, &zero).unwrap();
        assert!(phi0.values().iter().all(|&v| (v - 0.05).abs() < 1e-14));
        let m = GridFunction::from_fn(*c.spec(), |_, _| -0.2);
        let phi = c.shift_apply(&fam, &m).unwrap();
        assert!((phi.node(3, 10) - 0.04802).abs() < 1e-14);
        assert!((phi.node(3, 0) - 0.05).abs() < 1e-14);
        // Q = c (1 - x) for the cubic family
        let cubic = QuadraticFamily::constant(0.5, 0.3);
        let phi = c.shift_apply(&cubic, &zero).unwrap();
        assert!((phi.node(0, 10) - 0.3 * 0.9).abs() < 1e-15);
    }

    #[test]
    fn shift_reports_escape() {
        let c = ctx(0.5, 4, 11, 1.0, 10);
        let fam = QuadraticFamily::constant(0.5, 0.05);
        let big = GridFunction::from_fn(*c.spec(), |_, _| 5.0);
        match c.shift_apply(&fam, &big) {
            Err(Error::DomainEscape { shifted, .. }) => assert!(shifted > 1.0),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn derivative_transport_geometric_values() {
        let c = ctx(0.5, 4, 5, 0.1, 80);
        let one = GridFunction::from_fn(*c.spec(), |_, _| 1.0);
        let d1 = c.derivative_transport(&one, 1).unwrap();
        let d2 = c.derivative_transport(&one, 2).unwrap();
        assert!(d1.values().iter().all(|v| (v + 8.0 / 3.0).abs() < 1e-12));
        assert!(d2.values().iter().all(|v| (v + 16.0 / 7.0).abs() < 1e-12));
    }

    #[test]
    fn orbit_tables_match_direct_products() {
        let lin = LinearizedSkewProduct::new(cat(), |b| {
            0.5 + 0.1 * (2.0 * std::f64::consts::PI * b[0]).sin()
        });
        let spec = GridSpec::new(2, 16, 3, 0.1).unwrap();
        let c = OperatorContext::new(&lin, spec, 12).unwrap();
        for i in [0usize, 5, 77, 255] {
            let b = c.node_coords(i).to_vec();
            for k in 0..=12 {
                let direct = lin.cocycle_product(&b, k);
                assert!((c.pi[i * 13 + k] - direct).abs() <= 1e-15 * direct.abs());
                let pk = lin.weighted_cocycle(&b, k);
                assert!((c.p[i * 13 + k] - pk).abs() <= 1e-12 * pk.abs());
            }
        }
    }

    #[test]
    fn linear_family_converges_immediately() {
        let fam = QuadraticFamily::constant(0.5, 0.0);
        let f = SkewProduct::new(cat(), fam);
        let cfg = SolverConfig {
            epsilon: Some(0.1),
            n_b: 8,
            n_x: 5,
            ..Default::default()
        };
        let s = solve_conjugacy(&f, &cfg).unwrap();
        assert_eq!(s.report.iterations, 1);
        assert_eq!(s.h.c_norm(), 0.0);
    }

    #[test]
    fn mobius_fixed_point() {
        let fam = MobiusFamily::new(0.5, 0.1).unwrap();
        let f = SkewProduct::new(cat(), fam);
        let cfg = SolverConfig {
            epsilon: Some(0.1),
            n_b: 4,
            n_x: 33,
            ..Default::default()
        };
        let s = solve_conjugacy(&f, &cfg).unwrap();
        assert!(s.report.converged);
        let err =
            s.h.values()
                .chunks(33)
                .flat_map(|r| {
                    r.iter()
                        .enumerate()
                        .map(|(j, v)| (v - fam.exact_h(j as f64 * 0.1 / 32.0)).abs())
                })
                .fold(0.0f64, f64::max);
        assert!(err < 1e-6, "max error {err}");
        let hc = s.conjugacy();
        assert_eq!(hc.fiber(&[0.3, 0.2], 0.0), 0.0);
    }
}
