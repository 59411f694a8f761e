//! Globalization: blend the fiber maps with the halving map `x ↦ x/2` away
//! from the fixed point, so the multiplier is below 1 on the whole torus.
//!
//! `f̃_b(x) = f_b(x) (1 - φ(b)) + (x / 2) φ(b)` where the cut function `φ`
//! vanishes on the ball `K` of radius `r_inner` around the fixed point and
//! equals 1 outside the ball `U` of radius `r_outer`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::skew_product::{node_coords, Fiber, FiberMap, SkewProduct};
use crate::torus::{torus_distance_unchecked, TorusPoint};

/// Default radii of `K` and `U`.
pub const DEFAULT_R_INNER: f64 = 0.1;
pub const DEFAULT_R_OUTER: f64 = 0.25;

/// Points per axis of the post-construction verification grid.
pub const VERIFY_RESOLUTION: usize = 256;

/// Quintic smoothstep `6t^5 - 15t^4 + 10t^3`, clamped to `[0, 1]`.
#[inline]
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }
}

/// A radial `C^2` cut function on the torus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutFunction {
    pub center: TorusPoint,
    pub r_inner: f64,
    pub r_outer: f64,
}

impl CutFunction {
    pub fn new(center: TorusPoint, r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(0.0 < r_inner && r_inner < r_outer && r_outer < 0.5) {
            return Err(Error::InvalidInput(format!(
                "cut radii must satisfy 0 < r_inner < r_outer < 0.5, got {r_inner}, {r_outer}"
            )));
        }
        Ok(CutFunction {
            center,
            r_inner,
            r_outer,
        })
    }

    pub fn eval(&self, b: &[f64]) -> f64 {
        let d = torus_distance_unchecked(b, &self.center);
        smoothstep((d - self.r_inner) / (self.r_outer - self.r_inner))
    }
}

/// The blended family `f̃`.
#[derive(Debug, Clone)]
pub struct GlobalizedFamily {
    pub inner: Fiber,
    pub cut: CutFunction,
}

impl FiberMap for GlobalizedFamily {
    fn eval(&self, b: &[f64], x: f64) -> f64 {
        let phi = self.cut.eval(b);
        self.inner.eval(b, x) * (1.0 - phi) + 0.5 * x * phi
    }

    fn deriv(&self, b: &[f64], x: f64, order: usize) -> f64 {
        let phi = self.cut.eval(b);
        let d = self.inner.deriv(b, x, order) * (1.0 - phi);
        match order {
            0 => d + 0.5 * x * phi,
            1 => d + 0.5 * phi,
            _ => d,
        }
    }

    fn smoothness(&self) -> usize {
        self.inner.smoothness()
    }

    fn holder_beta(&self) -> f64 {
        self.inner.holder_beta().min(1.0)
    }

    fn multiplier(&self, b: &[f64]) -> f64 {
        let phi = self.cut.eval(b);
        self.inner.multiplier(b) * (1.0 - phi) + 0.5 * phi
    }

    // x/2 is linear, so only the blended part of f contributes
    fn quadratic_part(&self, b: &[f64], x: f64) -> f64 {
        let phi = self.cut.eval(b);
        if phi == 1.0 {
            0.0
        } else {
            self.inner.quadratic_part(b, x) * (1.0 - phi)
        }
    }

    fn quadratic_part_row(&self, b: &[f64], xs: &[f64], out: &mut [f64]) {
        let phi = self.cut.eval(b);
        if phi == 1.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
        } else {
            self.inner.quadratic_part_row(b, xs, out);
            out.iter_mut().for_each(|o| *o *= 1.0 - phi);
        }
    }

    fn name(&self) -> String {
        format!("globalized({})", self.inner.name())
    }
}

/// Post-construction diagnostics of a globalized system.
#[derive(Debug, Clone, Serialize)]
pub struct GlobalizationReport {
    pub resolution: usize,
    pub sup_lambda_original: f64,
    pub sup_lambda_globalized: f64,
    pub inf_lambda_globalized: f64,
    /// Largest `|f̃_b(x) - f_b(x)|` over grid nodes inside `K`, `x` on an 11-point grid.
    pub max_deviation_on_k: f64,
    pub nodes_in_k: usize,
}

/// Builds the globalized skew product and verifies `λ̃ < 1` on the
/// `resolution^d` grid.
pub fn globalize(
    f: &SkewProduct,
    cut: CutFunction,
    resolution: usize,
) -> Result<(SkewProduct, GlobalizationReport)> {
    let dim = f.base.dim();
    if cut.center.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: cut.center.dim(),
        });
    }
    let fam = GlobalizedFamily {
        inner: f.fiber.clone(),
        cut,
    };
    let total = resolution.pow(dim as u32);
    let mut b = vec![0.0; dim];
    let mut rep = GlobalizationReport {
        resolution,
        sup_lambda_original: f64::NEG_INFINITY,
        sup_lambda_globalized: f64::NEG_INFINITY,
        inf_lambda_globalized: f64::INFINITY,
        max_deviation_on_k: 0.0,
        nodes_in_k: 0,
    };
    for flat in 0..total {
        node_coords(flat, resolution, &mut b);
        let lt = fam.multiplier(&b);
        rep.sup_lambda_original = rep.sup_lambda_original.max(f.fiber.multiplier(&b));
        rep.sup_lambda_globalized = rep.sup_lambda_globalized.max(lt);
        rep.inf_lambda_globalized = rep.inf_lambda_globalized.min(lt);
        if !(lt < 1.0) {
            return Err(Error::GlobalizationFailure {
                b: b.clone(),
                lambda: lt,
            });
        }
        if fam.cut.eval(&b) == 0.0 {
            rep.nodes_in_k += 1;
            for i in 0..=10 {
                let x = i as f64 / 10.0;
                let dev = (fam.eval(&b, x) - f.fiber.eval(&b, x)).abs();
                rep.max_deviation_on_k = rep.max_deviation_on_k.max(dev);
            }
        }
    }
    Ok((
        SkewProduct::from_shared(f.base.clone(), std::sync::Arc::new(fam)),
        rep,
    ))
}
