//! Fiber map families, the skew product `F(b, x) = (Ab, f_b(x))` and its
//! fiberwise linearization `F0(b, x) = (Ab, lambda_b x)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::quadrature;
use crate::torus::{ToralAutomorphism, TorusPoint};

/// Tolerance on fiber values leaving `[0, 1]`.
pub const FIBER_TOLERANCE: f64 = 1e-9;

/// Successive quadrature estimates of `Q_b(x)` must agree to this.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// A family of interval maps `f_b: [0, 1] -> [0, 1]` parametrised by `b ∈ T^d`.
///
/// Only [`FiberMap::eval`] is mandatory. Derivatives fall back to central
/// finite differences and the quadratic part to Gauss–Legendre quadrature.
pub trait FiberMap: Send + Sync + fmt::Debug {
    fn eval(&self, b: &[f64], x: f64) -> f64;

    /// `∂^order f_b / ∂x^order` at `x`.
    fn deriv(&self, b: &[f64], x: f64, order: usize) -> f64 {
        finite_difference(|t| self.eval(b, t), x, order)
    }

    /// Fiber smoothness `k` (at least 2).
    fn smoothness(&self) -> usize {
        2
    }

    /// Hölder exponent of `b ↦ f_b` in `C^k`.
    fn holder_beta(&self) -> f64 {
        1.0
    }

    /// `lambda_b = f_b'(0)`.
    fn multiplier(&self, b: &[f64]) -> f64 {
        self.deriv(b, 0.0, 1)
    }

    /// `Q_b(x)` with `f_b(x) = lambda_b x + x^2 Q_b(x)`.
    fn quadratic_part(&self, b: &[f64], x: f64) -> f64 {
        quadratic_part_quadrature(self, b, x).value
    }

    /// `out[j] = Q_b(xs[j])`; overridden where the `b`-dependence can be hoisted.
    fn quadratic_part_row(&self, b: &[f64], xs: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.quadratic_part(b, x);
        }
    }

    /// True when `f_b` does not depend on `b`.
    fn is_base_independent(&self) -> bool {
        false
    }

    fn name(&self) -> String;
}

/// Central difference of the given order with step `max(c, c|x|)`.
///
/// `c = 1e-6` for first derivatives; higher orders use larger steps, since
/// the roundoff error grows like `eps / h^order`.
pub fn finite_difference(f: impl Fn(f64) -> f64, x: f64, order: usize) -> f64 {
    if order == 0 {
        return f(x);
    }
    let c: f64 = match order {
        1 => 1e-6,
        2 => 1e-4,
        3 => 5e-4,
        _ => 2e-3,
    };
    let h = c.max(c * x.abs());
    let n = order as i32;
    let mut binom = 1.0;
    let mut acc = 0.0;
    for i in 0..=order {
        let t = x + (0.5 * n as f64 - i as f64) * h;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * f(t);
        binom = binom * (order - i) as f64 / (i + 1) as f64;
    }
    acc / h.powi(n)
}

/// Result of the quadrature for `Q_b(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPart {
    pub value: f64,
    /// False when the doubling sequence stopped before two successive
    /// estimates agreed to [`QUADRATURE_TOL`].
    pub converged: bool,
    pub nodes: usize,
}

/// `Q_b(x) = ∫_0^1 (1 - s) f_b''(x s) ds` by Gauss–Legendre, starting with 16
/// nodes and doubling until successive estimates differ by less than 1e-10.
pub fn quadratic_part_quadrature<M: FiberMap + ?Sized>(
    fiber: &M,
    b: &[f64],
    x: f64,
) -> QuadraticPart {
    if x == 0.0 {
        return QuadraticPart {
            value: 0.5 * fiber.deriv(b, 0.0, 2),
            converged: true,
            nodes: 1,
        };
    }
    let integrand = |s: f64| (1.0 - s) * fiber.deriv(b, x * s, 2);
    let mut prev = quadrature::rule(0).integrate(integrand);
    for level in 1..quadrature::LEVELS {
        let cur = quadrature::rule(level).integrate(integrand);
        if (cur - prev).abs() < QUADRATURE_TOL {
            return QuadraticPart {
                value: cur,
                converged: true,
                nodes: 16 << level,
            };
        }
        prev = cur;
    }
    QuadraticPart {
        value: prev,
        converged: false,
        nodes: 16 << (quadrature::LEVELS - 1),
    }
}

/// `f_b(x) = lambda_b x + c_b x^2 (1 - x)` with
/// `lambda_b = q0 + q1 sin(2π b1)` and `c_b = c0 (1 + c1 cos(2π b2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticFamily {
    pub q0: f64,
    pub q1: f64,
    pub c0: f64,
    pub c1: f64,
    pub beta: f64,
    pub k: usize,
}

impl Default for QuadraticFamily {
    fn default() -> Self {
        QuadraticFamily {
            q0: 0.5,
            q1: 0.1,
            c0: 0.3,
            c1: 0.25,
            beta: 1.0,
            k: 4,
        }
    }
}

impl QuadraticFamily {
    /// `b`-independent member `f(x) = lambda x + c x^2 (1 - x)`.
    pub fn constant(lambda: f64, c: f64) -> Self {
        QuadraticFamily {
            q0: lambda,
            q1: 0.0,
            c0: c,
            c1: 0.0,
            ..Default::default()
        }
    }

    #[inline]
    fn coefficients(&self, b: &[f64]) -> (f64, f64) {
        let b1 = b.first().copied().unwrap_or(0.0);
        let b2 = b.get(1).copied().unwrap_or(0.0);
        let lambda = if self.q1 == 0.0 {
            self.q0
        } else {
            self.q0 + self.q1 * (2.0 * PI * b1).sin()
        };
        let c = if self.c1 == 0.0 {
            self.c0
        } else {
            self.c0 * (1.0 + self.c1 * (2.0 * PI * b2).cos())
        };
        (lambda, c)
    }
}

impl FiberMap for QuadraticFamily {
    fn eval(&self, b: &[f64], x: f64) -> f64 {
        let (l, c) = self.coefficients(b);
        l * x + c * x * x * (1.0 - x)
    }

    fn deriv(&self, b: &[f64], x: f64, order: usize) -> f64 {
        let (l, c) = self.coefficients(b);
        match order {
            0 => l * x + c * x * x * (1.0 - x),
            1 => l + c * (2.0 * x - 3.0 * x * x),
            2 => c * (2.0 - 6.0 * x),
            3 => -6.0 * c,
            _ => 0.0,
        }
    }

    fn smoothness(&self) -> usize {
        self.k
    }

    fn holder_beta(&self) -> f64 {
        self.beta
    }

    fn multiplier(&self, b: &[f64]) -> f64 {
        self.coefficients(b).0
    }

    fn quadratic_part(&self, b: &[f64], x: f64) -> f64 {
        self.coefficients(b).1 * (1.0 - x)
    }

    fn quadratic_part_row(&self, b: &[f64], xs: &[f64], out: &mut [f64]) {
        let c = self.coefficients(b).1;
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = c * (1.0 - x);
        }
    }

    fn is_base_independent(&self) -> bool {
        self.q1 == 0.0 && (self.c1 == 0.0 || self.c0 == 0.0)
    }

    fn name(&self) -> String {
        "quadratic".into()
    }
}

/// `b`-independent Möbius map `f(x) = lambda x / (1 - m x)`.
///
/// It is exactly linearizable by `H(x) = x / (1 + c x)` with
/// `c = m / (1 - lambda)`. With `m = 1 - lambda` it fixes `x = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MobiusFamily {
    pub lambda: f64,
    pub m: f64,
    pub beta: f64,
    pub k: usize,
}

impl MobiusFamily {
    pub fn new(lambda: f64, m: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mobius lambda must be positive, got {lambda}"
            )));
        }
        if !(m < 1.0 && m.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mobius m must be < 1 so the pole lies outside [0, 1], got {m}"
            )));
        }
        Ok(MobiusFamily {
            lambda,
            m,
            beta: 1.0,
            k: 4,
        })
    }

    /// Coefficient `c` of the exact conjugacy `H(x) = x / (1 + c x)`.
    pub fn conjugacy_coefficient(&self) -> f64 {
        self.m / (1.0 - self.lambda)
    }

    /// Closed-form normalized germ `h(x) = -c / (1 + c x)`.
    pub fn exact_h(&self, x: f64) -> f64 {
        let c = self.conjugacy_coefficient();
        -c / (1.0 + c * x)
    }

    pub fn exact_conjugacy(&self, x: f64) -> f64 {
        x / (1.0 + self.conjugacy_coefficient() * x)
    }
}

impl FiberMap for MobiusFamily {
    fn eval(&self, _b: &[f64], x: f64) -> f64 {
        self.lambda * x / (1.0 - self.m * x)
    }

    fn deriv(&self, _b: &[f64], x: f64, order: usize) -> f64 {
        if order == 0 {
            return self.eval(_b, x);
        }
        // f^(n) = lambda n! m^(n-1) / (1 - m x)^(n+1)
        let n = order as i32;
        let fact: f64 = (1..=order).map(|i| i as f64).product();
        self.lambda * fact * self.m.powi(n - 1) / (1.0 - self.m * x).powi(n + 1)
    }

    fn smoothness(&self) -> usize {
        self.k
    }

    fn holder_beta(&self) -> f64 {
        self.beta
    }

    fn multiplier(&self, _b: &[f64]) -> f64 {
        self.lambda
    }

    fn quadratic_part(&self, _b: &[f64], x: f64) -> f64 {
        self.lambda * self.m / (1.0 - self.m * x)
    }

    fn is_base_independent(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "mobius".into()
    }
}

/// Fiber map given by an expression in `x, b1, ..., bd`, with symbolic
/// derivatives up to the declared smoothness.
#[derive(Debug, Clone)]
pub struct CustomFamily {
    source: String,
    /// `derivs[l]` is the l-th x-derivative; `derivs[0]` is f itself.
    derivs: Vec<Expr>,
    beta: f64,
    k: usize,
}

impl CustomFamily {
    pub fn parse(source: &str, beta: f64, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!(
                "smoothness k must be >= 2, got {k}"
            )));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "beta must lie in (0, 1], got {beta}"
            )));
        }
        let f = Expr::parse(source)?;
        let mut derivs = vec![f];
        for l in 0..k.max(3) {
            let next = derivs[l].diff_x();
            derivs.push(next);
        }
        Ok(CustomFamily {
            source: source.to_string(),
            derivs,
            beta,
            k,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of base coordinates the expression reads.
    pub fn base_arity(&self) -> usize {
        self.derivs[0].base_arity()
    }
}

impl FiberMap for CustomFamily {
    fn eval(&self, b: &[f64], x: f64) -> f64 {
        self.derivs[0].eval(b, x)
    }

    fn deriv(&self, b: &[f64], x: f64, order: usize) -> f64 {
        match self.derivs.get(order) {
            Some(e) => e.eval(b, x),
            None => finite_difference(
                |t| self.derivs[self.derivs.len() - 1].eval(b, t),
                x,
                order + 1 - self.derivs.len(),
            ),
        }
    }

    fn smoothness(&self) -> usize {
        self.k
    }

    fn holder_beta(&self) -> f64 {
        self.beta
    }

    fn is_base_independent(&self) -> bool {
        self.base_arity() == 0
    }

    fn name(&self) -> String {
        "custom".into()
    }
}

/// Shared handle to a fiber family.
pub type Fiber = Arc<dyn FiberMap>;

/// `F(b, x) = (Ab, f_b(x))`.
#[derive(Debug, Clone)]
pub struct SkewProduct {
    pub base: ToralAutomorphism,
    pub fiber: Fiber,
}

impl SkewProduct {
    pub fn new(base: ToralAutomorphism, fiber: impl FiberMap + 'static) -> Self {
        SkewProduct {
            base,
            fiber: Arc::new(fiber),
        }
    }

    pub fn from_shared(base: ToralAutomorphism, fiber: Fiber) -> Self {
        SkewProduct { base, fiber }
    }

    pub fn apply(&self, b: &[f64], x: f64) -> Result<(TorusPoint, f64)> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidInput(format!(
                "fiber coordinate {x} outside [0, 1]"
            )));
        }
        let nb = self.base.apply(b)?;
        let y = self.fiber.eval(b, x);
        if !(-FIBER_TOLERANCE..=1.0 + FIBER_TOLERANCE).contains(&y) {
            return Err(Error::ModelViolation(format!(
                "f_b({x}) = {y} leaves [0, 1] at b = {b:?}"
            )));
        }
        Ok((nb, y))
    }

    pub fn linearization(&self) -> LinearizedSkewProduct {
        let fiber = Arc::clone(&self.fiber);
        LinearizedSkewProduct {
            base: self.base.clone(),
            multiplier: Arc::new(move |b: &[f64]| fiber.multiplier(b)),
            base_independent: self.fiber.is_base_independent(),
        }
    }
}

pub type MultiplierFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `F0(b, x) = (Ab, lambda_b x)`.
#[derive(Clone)]
pub struct LinearizedSkewProduct {
    pub base: ToralAutomorphism,
    multiplier: MultiplierFn,
    base_independent: bool,
}

impl fmt::Debug for LinearizedSkewProduct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearizedSkewProduct")
            .field("base", &self.base)
            .field("base_independent", &self.base_independent)
            .finish_non_exhaustive()
    }
}

impl LinearizedSkewProduct {
    pub fn new(
        base: ToralAutomorphism,
        multiplier: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LinearizedSkewProduct {
            base,
            multiplier: Arc::new(multiplier),
            base_independent: false,
        }
    }

    pub fn constant(base: ToralAutomorphism, lambda: f64) -> Self {
        LinearizedSkewProduct {
            base,
            multiplier: Arc::new(move |_: &[f64]| lambda),
            base_independent: true,
        }
    }

    #[inline]
    pub fn multiplier(&self, b: &[f64]) -> f64 {
        (self.multiplier)(b)
    }

    pub fn is_base_independent(&self) -> bool {
        self.base_independent
    }

    /// `Π_n(b) = lambda_b lambda_{Ab} ... lambda_{A^{n-1} b}`, `Π_0 = 1`.
    pub fn cocycle_product(&self, b: &[f64], n: usize) -> f64 {
        self.walk(b, n).0
    }

    /// `P_n(b) = Π_n(b) / lambda_{A^n b}`.
    pub fn weighted_cocycle(&self, b: &[f64], n: usize) -> f64 {
        let (pi, end) = self.walk(b, n);
        pi / self.multiplier(&end)
    }

    /// `F0^k(b, x) = (A^k b, Π_k(b) x)`.
    pub fn apply_iterate(&self, b: &[f64], x: f64, k: usize) -> (TorusPoint, f64) {
        let (pi, end) = self.walk(b, k);
        (TorusPoint::new(end), pi * x)
    }

    /// Returns `(Π_n(b), A^n b)`.
    fn walk(&self, b: &[f64], n: usize) -> (f64, Vec<f64>) {
        let mut cur = b.to_vec();
        let mut next = vec![0.0; cur.len()];
        let mut pi = 1.0;
        for _ in 0..n {
            pi *= self.multiplier(&cur);
            self.base.apply_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        (pi, cur)
    }

    /// Multiplier range on the uniform `resolution^d` grid.
    pub fn estimate_bounds(&self, resolution: usize) -> Result<MultiplierBounds> {
        if resolution < 2 {
            return Err(Error::InvalidInput(format!(
                "grid resolution must be >= 2, got {resolution}"
            )));
        }
        let d = self.base.dim();
        let total = resolution.pow(d as u32);
        let mut q = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        let mut b = vec![0.0; d];
        for flat in 0..total {
            node_coords(flat, resolution, &mut b);
            let l = self.multiplier(&b);
            q = q.max(l);
            lo = lo.min(l);
        }
        Ok(MultiplierBounds::new(q, lo, total))
    }

    /// Bounds on a grid 4x finer than `n_b`, widened by the measured Lipschitz
    /// constant of `lambda` times the largest distance to a grid node.
    pub fn safe_bounds(&self, n_b: usize) -> Result<MultiplierBounds> {
        let res = 4 * n_b.max(2);
        let raw = self.estimate_bounds(res)?;
        if self.base_independent {
            return Ok(raw);
        }
        let lip = self.grid_lipschitz(res);
        let d = self.base.dim() as f64;
        let pad = lip * d.sqrt() / (2.0 * res as f64);
        let mut b = MultiplierBounds::new(raw.q + pad, raw.d - pad, raw.n_samples);
        b.padding = pad;
        Ok(b)
    }

    /// Largest adjacent-node difference quotient of `lambda` on the grid.
    pub fn grid_lipschitz(&self, resolution: usize) -> f64 {
        let d = self.base.dim();
        let total = resolution.pow(d as u32);
        let h = 1.0 / resolution as f64;
        let mut b = vec![0.0; d];
        let mut nb = vec![0.0; d];
        let mut lip = 0.0f64;
        for flat in 0..total {
            node_coords(flat, resolution, &mut b);
            let l0 = self.multiplier(&b);
            for axis in 0..d {
                nb.copy_from_slice(&b);
                nb[axis] = crate::torus::wrap_unit(nb[axis] + h);
                lip = lip.max((self.multiplier(&nb) - l0).abs() / h);
            }
        }
        lip
    }
}

/// Coordinates of the node with row-major flat index `flat` on the `n^d` grid.
#[inline]
pub fn node_coords(mut flat: usize, n: usize, out: &mut [f64]) {
    for c in out.iter_mut().rev() {
        *c = (flat % n) as f64 / n as f64;
        flat /= n;
    }
}

/// `q = sup lambda_b`, `D = inf lambda_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiplierBounds {
    pub q: f64,
    pub d: f64,
    pub n_samples: usize,
    /// Amount by which the sampled range was widened on each side.
    pub padding: f64,
    /// Set when `q >= 1`: the system must be globalized before solving.
    pub globalization_required: bool,
}

impl MultiplierBounds {
    pub fn new(q: f64, d: f64, n_samples: usize) -> Self {
        MultiplierBounds {
            q,
            d,
            n_samples,
            padding: 0.0,
            globalization_required: q >= 1.0,
        }
    }

    /// `||L||_C <= 1 / (D (1 - q))`.
    pub fn homological_norm_bound(&self) -> f64 {
        1.0 / (self.d * (1.0 - self.q))
    }
}

/// Sampled model checks for a fiber family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiberModelCheck {
    /// `f_b(0) = 0` everywhere sampled.
    pub fixes_zero: bool,
    /// `f_b(1) = 1` everywhere sampled.
    pub fixes_one: bool,
    /// Minimum of `∂f_b/∂x` over the samples.
    pub min_derivative: f64,
    pub maps_into_unit_interval: bool,
}

impl FiberModelCheck {
    pub fn is_orientation_preserving(&self) -> bool {
        self.min_derivative > 0.0
    }
}

/// Samples `f` on an `n_b^d × n_x` grid of `T^d × [0, 1]`.
pub fn check_fiber_model(
    fiber: &dyn FiberMap,
    dim: usize,
    n_b: usize,
    n_x: usize,
) -> FiberModelCheck {
    let total = n_b.pow(dim as u32);
    let mut b = vec![0.0; dim];
    let mut out = FiberModelCheck {
        fixes_zero: true,
        fixes_one: true,
        min_derivative: f64::INFINITY,
        maps_into_unit_interval: true,
    };
    for flat in 0..total {
        node_coords(flat, n_b, &mut b);
        if fiber.eval(&b, 0.0).abs() > FIBER_TOLERANCE {
            out.fixes_zero = false;
        }
        if (fiber.eval(&b, 1.0) - 1.0).abs() > FIBER_TOLERANCE {
            out.fixes_one = false;
        }
        for i in 0..n_x {
            let x = i as f64 / (n_x - 1) as f64;
            out.min_derivative = out.min_derivative.min(fiber.deriv(&b, x, 1));
            let y = fiber.eval(&b, x);
            if !(-FIBER_TOLERANCE..=1.0 + FIBER_TOLERANCE).contains(&y) {
                out.maps_into_unit_interval = false;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct EvalOnly<F: Fn(f64) -> f64 + Send + Sync>(F);

    impl<F: Fn(f64) -> f64 + Send + Sync> fmt::Debug for EvalOnly<F> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("EvalOnly")
        }
    }

    impl<F: Fn(f64) -> f64 + Send + Sync> FiberMap for EvalOnly<F> {
        fn eval(&self, _b: &[f64], x: f64) -> f64 {
            (self.0)(x)
        }
        fn name(&self) -> String {
            "eval-only".into()
        }
    }

    fn cat() -> ToralAutomorphism {
        ToralAutomorphism::cat_map()
    }

    #[test]
    fn multiplier_examples() {
        let f = QuadraticFamily::constant(0.5, 0.05);
        assert_eq!(f.multiplier(&[0.3, 0.1]), 0.5);
        let m = MobiusFamily::new(0.5, 0.1).unwrap();
        assert_eq!(m.multiplier(&[0.0, 0.0]), 0.5);
        // finite-difference path agrees with the symbolic derivative
        let fd = EvalOnly(|x: f64| 0.5 * x / (1.0 - 0.1 * x));
        assert!((fd.multiplier(&[]) - 0.5).abs() < 1e-9);
        let q = QuadraticFamily::default();
        assert!((q.multiplier(&[0.25, 0.0]) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn quadratic_part_examples() {
        // f = lambda x + c x^2 has Q = c
        let f = EvalOnly(|x: f64| 0.5 * x + 0.05 * x * x);
        for &x in &[0.0, 0.3, 1.0] {
            assert!((f.quadratic_part(&[], x) - 0.05).abs() < 1e-8);
        }
        let m = MobiusFamily::new(0.5, 0.1).unwrap();
        assert!((m.quadratic_part(&[], 0.0) - 0.05).abs() < 1e-15);
        let qd = quadratic_part_quadrature(&m, &[], 0.0);
        assert!((qd.value - 0.05).abs() < 1e-14 && qd.converged);
        let lin = EvalOnly(|x: f64| 0.7 * x);
        assert!(lin.quadratic_part(&[], 0.4).abs() < 1e-8);
    }

    #[test]
    fn quadrature_flags_non_convergence() {
        let wild = CustomFamily::parse("0.5*x + 0.001*sin(2000*x)*x^2", 1.0, 2).unwrap();
        let r = quadratic_part_quadrature(&wild, &[], 1.0);
        assert!(!r.converged);
        let tame = quadratic_part_quadrature(&wild, &[], 1e-4);
        assert!(tame.converged);
    }

    #[test]
    fn decomposition_identity_for_builtins() {
        let fams: Vec<Box<dyn FiberMap>> = vec![
            Box::new(QuadraticFamily::default()),
            Box::new(MobiusFamily::new(0.5, 0.1).unwrap()),
            Box::new(
                CustomFamily::parse(
                    "(0.5 + 0.1*sin(2*pi*b1))*x + 0.2*x^2*exp(-x)*(1 + 0.3*cos(2*pi*b2))",
                    1.0,
                    4,
                )
                .unwrap(),
            ),
        ];
        let mut s = 12345u64;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for f in &fams {
            for _ in 0..10_000 {
                let b = [next(), next()];
                let x = 0.5 * next();
                let lam = f.multiplier(&b);
                let analytic = f.quadratic_part(&b, x);
                let quad = quadratic_part_quadrature(f.as_ref(), &b, x).value;
                let y = f.eval(&b, x);
                assert!(
                    (y - lam * x - x * x * analytic).abs() <= 1e-8,
                    "{}",
                    f.name()
                );
                assert!((y - lam * x - x * x * quad).abs() <= 1e-8, "{}", f.name());
            }
        }
    }

    #[test]
    fn cocycle_examples() {
        let f0 = LinearizedSkewProduct::constant(cat(), 0.5);
        assert_eq!(f0.cocycle_product(&[0.3, 0.2], 0), 1.0);
        assert_eq!(f0.cocycle_product(&[0.3, 0.2], 5), 0.03125);
        let var = SkewProduct::new(cat(), QuadraticFamily::default()).linearization();
        assert!((var.cocycle_product(&[0.0, 0.0], 2) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weighted_cocycle_examples() {
        let f0 = LinearizedSkewProduct::constant(cat(), 0.5);
        assert_eq!(f0.weighted_cocycle(&[0.1, 0.2], 0), 2.0);
        assert_eq!(f0.weighted_cocycle(&[0.1, 0.2], 3), 0.25);
        let var = SkewProduct::new(cat(), QuadraticFamily::default()).linearization();
        for n in 0..6 {
            let expect = 0.5f64.powi(n) / 0.5;
            assert!((var.weighted_cocycle(&[0.0, 0.0], n as usize) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn estimate_bounds_examples() {
        let f0 = LinearizedSkewProduct::constant(cat(), 0.5);
        let b = f0.estimate_bounds(8).unwrap();
        assert_eq!((b.q, b.d), (0.5, 0.5));
        assert!(!b.globalization_required);

        let var = SkewProduct::new(cat(), QuadraticFamily::default()).linearization();
        let coarse = var.estimate_bounds(64).unwrap();
        let dense = var.estimate_bounds(4096 / 64).unwrap(); // d=2: 4096 nodes per axis is too many
        let dense_1d = {
            // dense oracle along b1, the only coordinate lambda depends on
            let (mut hi, mut lo) = (f64::MIN, f64::MAX);
            for i in 0..4096 {
                let l = var.multiplier(&[i as f64 / 4096.0, 0.0]);
                hi = hi.max(l);
                lo = lo.min(l);
            }
            (hi, lo)
        };
        let tol = 0.1 * (2.0 * PI / 64.0);
        assert!((coarse.q - dense_1d.0).abs() <= tol && (coarse.d - dense_1d.1).abs() <= tol);
        assert!((dense.q - 0.6).abs() < 1e-12 && (dense.d - 0.4).abs() < 1e-12);

        let hot = SkewProduct::new(
            cat(),
            QuadraticFamily {
                q0: 0.9,
                q1: 0.2,
                ..Default::default()
            },
        )
        .linearization();
        assert!(hot.estimate_bounds(16).unwrap().globalization_required);
        assert!(f0.estimate_bounds(1).is_err());
    }

    #[test]
    fn safe_bounds_enclose_true_range() {
        let fam = QuadraticFamily {
            q0: 0.5,
            q1: 0.1,
            ..Default::default()
        };
        let var = SkewProduct::new(cat(), fam).linearization();
        // offset so the grid misses the extrema of sin
        let shifted = LinearizedSkewProduct::new(cat(), move |b: &[f64]| {
            fam.multiplier(&[b[0] + 0.003, b[1]])
        });
        for f0 in [&var, &shifted] {
            let s = f0.safe_bounds(5).unwrap();
            assert!(s.q >= 0.6 && s.d <= 0.4);
            assert!(s.padding > 0.0);
        }
    }

    #[test]
    fn apply_skew_product_examples() {
        let m = SkewProduct::new(cat(), MobiusFamily::new(0.5, 0.1).unwrap());
        let b = [0.3, 0.6];
        let ab = cat().apply(&b).unwrap();
        assert_eq!(m.apply(&b, 0.0).unwrap(), (ab.clone(), 0.0));
        let (_, y) = m.apply(&b, 0.5).unwrap();
        assert!((y - 0.25 / 0.95).abs() < 1e-15);
        assert!((y - 0.263158).abs() < 1e-6);

        let q = SkewProduct::new(
            cat(),
            CustomFamily::parse("x^2 * (3 - 2*x)", 1.0, 2).unwrap(),
        );
        assert_eq!(q.apply(&b, 1.0).unwrap(), (ab, 1.0));
        assert!(q.apply(&b, 1.5).is_err());

        let bad = SkewProduct::new(cat(), CustomFamily::parse("2*x", 1.0, 2).unwrap());
        assert!(matches!(bad.apply(&b, 0.9), Err(Error::ModelViolation(_))));
    }

    #[test]
    fn apply_linearized_iterates() {
        let f0 = LinearizedSkewProduct::constant(cat(), 0.5);
        let b = [0.2, 0.7];
        let (p, x) = f0.apply_iterate(&b, 0.8, 0);
        assert_eq!((p.coords(), x), (&b[..], 0.8));
        let (p, x) = f0.apply_iterate(&b, 0.8, 3);
        assert_eq!(p, cat().iterate(&b, 3).unwrap());
        assert!((x - 0.1).abs() < 1e-16);
        let var = SkewProduct::new(cat(), QuadraticFamily::default()).linearization();
        let (_, x) = var.apply_iterate(&[0.0, 0.0], 0.8, 4);
        assert!((x - 0.8 * 0.5f64.powi(4)).abs() < 1e-16);
    }

    #[test]
    fn finite_difference_orders() {
        let f = |x: f64| x.exp();
        for order in 0..=4 {
            let got = finite_difference(f, 0.3, order);
            assert!((got - 0.3f64.exp()).abs() < 1e-4, "order {order}: {got}");
        }
    }

    #[test]
    fn model_check_reports_boundaries() {
        let q = check_fiber_model(&QuadraticFamily::default(), 2, 8, 11);
        assert!(q.fixes_zero && q.is_orientation_preserving() && q.maps_into_unit_interval);
        assert!(!q.fixes_one);
        let fixed = MobiusFamily::new(0.5, 0.5).unwrap();
        assert!(check_fiber_model(&fixed, 2, 4, 11).fixes_one);
        let fold = CustomFamily::parse("4*x*(1-x)", 1.0, 2).unwrap();
        assert!(!check_fiber_model(&fold, 2, 2, 11).is_orientation_preserving());
    }

    #[test]
    fn custom_family_rejects_bad_parameters() {
        assert!(CustomFamily::parse("x", 1.0, 1).is_err());
        assert!(CustomFamily::parse("x", 0.0, 2).is_err());
        assert!(CustomFamily::parse("x +", 1.0, 2).is_err());
        assert!(MobiusFamily::new(0.5, 1.0).is_err());
    }
}
