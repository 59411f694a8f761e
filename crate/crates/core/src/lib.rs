//! Fiberwise linearization of skew products `F(b, x) = (Ab, f_b(x))` over
//! hyperbolic automorphisms of the torus, with interval fibers.
//!
//! The conjugacy `H(b, x) = (b, x + x^2 h_b(x))` with `F ∘ H = H ∘ F0` is found
//! as the fixed point of `h ↦ L Φ h`, where `L` solves the homological equation
//! by an explicit series along base orbits and `Φ` is the nonlinear shift.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod expr;
pub mod globalize;
pub mod gridfn;
pub mod operators;
pub mod quadrature;
pub mod sampling;
pub mod skew_product;
pub mod torus;

pub use analysis::{AlphaTheta, BoundCheck, VerificationReport};
pub use error::{Error, Result};
pub use gridfn::{GridFunction, GridSpec, NormReport};
pub use operators::{
    solve_conjugacy, Conjugacy, ConjugacyMap, RefinedConjugacy, SolverConfig, SolverReport,
    SpaceNParams, Truncation,
};
pub use skew_product::{
    CustomFamily, Fiber, FiberMap, LinearizedSkewProduct, MobiusFamily, MultiplierBounds,
    QuadraticFamily, SkewProduct,
};
pub use torus::{torus_distance, ToralAutomorphism, TorusPoint};
