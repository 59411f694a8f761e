//! Hyperbolic automorphisms of the torus `T^d = R^d / Z^d`.
//!
//! Points are stored with every coordinate reduced into `[0, 1)`. The
//! automorphism is an integer matrix with determinant ±1 and no eigenvalue on
//! the unit circle; its spectral radius `mu` is cached at construction.

use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimal gap between any eigenvalue modulus and 1.
pub const HYPERBOLICITY_GAP: f64 = 1e-9;

/// Reduces a real number into `[0, 1)`.
#[inline]
pub fn wrap_unit(v: f64) -> f64 {
    let r = v - v.floor();
    // v slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed coordinate difference reduced to the nearest integer translate, in `[-1/2, 1/2]`.
#[inline]
pub fn wrap_delta(v: f64) -> f64 {
    v - v.round()
}

/// A point of `T^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TorusPoint(Vec<f64>);

impl TorusPoint {
    /// Builds a point from arbitrary real coordinates, reducing each mod 1.
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        let mut coords = coords.into();
        for c in coords.iter_mut() {
            *c = wrap_unit(*c);
        }
        TorusPoint(coords)
    }

    pub fn origin(dim: usize) -> Self {
        TorusPoint(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for TorusPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Quotient Euclidean distance: the shortest distance between integer translates.
pub fn torus_distance(b1: &[f64], b2: &[f64]) -> Result<f64> {
    if b1.len() != b2.len() {
        return Err(Error::DimensionMismatch {
            expected: b1.len(),
            got: b2.len(),
        });
    }
    Ok(torus_distance_unchecked(b1, b2))
}

#[inline]
pub(crate) fn torus_distance_unchecked(b1: &[f64], b2: &[f64]) -> f64 {
    b1.iter()
        .zip(b2)
        .map(|(a, b)| {
            let d = wrap_delta(a - b);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// An integer hyperbolic matrix acting on `T^d` mod 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToralAutomorphism {
    dim: usize,
    /// Row-major entries.
    matrix: Vec<i64>,
    mu: f64,
}

impl ToralAutomorphism {
    /// Builds an automorphism from a row-major integer array of length `d*d`.
    pub fn from_row_major(entries: &[i64]) -> Result<Self> {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim != entries.len() {
            return Err(Error::InvalidInput(format!(
                "matrix with {} entries is not square",
                entries.len()
            )));
        }
        let det = integer_determinant(entries, dim);
        if det.abs() != 1 {
            return Err(Error::NotUnimodular { det: det as f64 });
        }
        let m = DMatrix::from_row_slice(
            dim,
            dim,
            &entries.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        );
        let mut mu = 0.0f64;
        for ev in m.complex_eigenvalues().iter() {
            let modulus = ev.norm();
            if (modulus - 1.0).abs() <= HYPERBOLICITY_GAP {
                return Err(Error::NotHyperbolic { modulus });
            }
            mu = mu.max(modulus);
        }
        Ok(ToralAutomorphism {
            dim,
            matrix: entries.to_vec(),
            mu,
        })
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput(
                "matrix rows have unequal length".into(),
            ));
        }
        Self::from_row_major(&rows.concat())
    }

    /// The cat map `[[2, 1], [1, 1]]`.
    pub fn cat_map() -> Self {
        Self::from_row_major(&[2, 1, 1, 1]).expect("cat map is hyperbolic")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[i64] {
        &self.matrix
    }

    /// Largest modulus among the eigenvalues.
    pub fn spectral_radius(&self) -> f64 {
        self.mu
    }

    pub fn apply(&self, b: &[f64]) -> Result<TorusPoint> {
        self.check_dim(b.len())?;
        let mut out = vec![0.0; self.dim];
        self.apply_into(b, &mut out);
        Ok(TorusPoint(out))
    }

    /// `out = A b mod 1`. Caller guarantees matching dimensions.
    #[inline]
    pub fn apply_into(&self, b: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
            let s: f64 = row.iter().zip(b).map(|(&a, &c)| a as f64 * c).sum();
            *o = wrap_unit(s);
        }
    }

    /// `A^k b`, as `k` successive applications.
    pub fn iterate(&self, b: &[f64], k: usize) -> Result<TorusPoint> {
        self.check_dim(b.len())?;
        let mut cur = b.to_vec();
        let mut next = vec![0.0; self.dim];
        for _ in 0..k {
            self.apply_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(TorusPoint(cur))
    }

    /// Image of the grid node with multi-index `idx` on the uniform `n^d` grid.
    ///
    /// Integer matrices map grid nodes `j/n` to grid nodes exactly.
    #[inline]
    pub fn apply_index(&self, idx: &[usize], n: usize, out: &mut [usize]) {
        let n = n as i64;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
            let s: i64 = row.iter().zip(idx).map(|(&a, &j)| a * j as i64).sum();
            *o = s.rem_euclid(n) as usize;
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            })
        } else {
            Ok(())
        }
    }
}

/// Fraction-free Gaussian elimination (Bareiss), exact for small integer matrices.
fn integer_determinant(entries: &[i64], n: usize) -> i128 {
    let mut m: Vec<i128> = entries.iter().map(|&v| v as i128).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if m[k * n + k] == 0 {
            let Some(p) = (k + 1..n).find(|&r| m[r * n + k] != 0) else {
                return 0;
            };
            for c in 0..n {
                m.swap(k * n + c, p * n + c);
            }
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i * n + j] = (m[i * n + j] * m[k * n + k] - m[i * n + k] * m[k * n + j]) / prev;
            }
        }
        prev = m[k * n + k];
    }
    sign * m[n * n - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14)
    }

    #[test]
    fn apply_examples() {
        let a = ToralAutomorphism::cat_map();
        assert_eq!(a.apply(&[0.0, 0.0]).unwrap().coords(), &[0.0, 0.0]);
        assert!(close(a.apply(&[0.5, 0.5]).unwrap().coords(), &[0.5, 0.0]));
        assert!(close(a.apply(&[0.25, 0.5]).unwrap().coords(), &[0.0, 0.75]));
    }

    #[test]
    fn apply_rejects_wrong_dimension() {
        let a = ToralAutomorphism::cat_map();
        assert!(matches!(
            a.apply(&[0.1, 0.2, 0.3]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 3
            })
        ));
    }

    #[test]
    fn iterate_examples() {
        let a = ToralAutomorphism::cat_map();
        let b = [0.3, 0.7];
        assert_eq!(a.iterate(&b, 0).unwrap().coords(), &b);
        assert!(close(
            a.iterate(&[0.5, 0.5], 2).unwrap().coords(),
            &[0.0, 0.5]
        ));
        assert_eq!(a.iterate(&[0.0, 0.0], 10).unwrap().coords(), &[0.0, 0.0]);
    }

    #[test]
    fn distance_examples() {
        assert!((torus_distance(&[0.1, 0.0], &[0.9, 0.0]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(torus_distance(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        // oracle: enumerate all 3^d integer shifts of b2
        let (p, r) = ([0.25, 0.25], [0.75, 0.75]);
        let mut best = f64::INFINITY;
        for s0 in -1..=1 {
            for s1 in -1..=1 {
                let dx = p[0] - (r[0] + s0 as f64);
                let dy = p[1] - (r[1] + s1 as f64);
                best = best.min((dx * dx + dy * dy).sqrt());
            }
        }
        // both coordinates differ by exactly 1/2, so the distance is sqrt(0.5)
        assert!((best - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((torus_distance(&p, &r).unwrap() - best).abs() < 1e-15);
        assert!(torus_distance(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let cat = ToralAutomorphism::cat_map();
        // largest root of t^2 - 3t + 1
        let expected = (3.0 + 5f64.sqrt()) / 2.0;
        assert!((cat.spectral_radius() - expected).abs() < 1e-12);
        assert!((expected - 2.618033988749895).abs() < 1e-15);

        let fib = ToralAutomorphism::from_row_major(&[1, 1, 1, 0]).unwrap();
        assert!((fib.spectral_radius().powi(2) - cat.spectral_radius()).abs() < 1e-12);

        let m = ToralAutomorphism::from_row_major(&[3, 2, 1, 1]).unwrap();
        assert!((m.spectral_radius() - (4.0 + 12f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((m.spectral_radius() - 3.732050808).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_matrices() {
        // rotation: eigenvalues on the unit circle
        assert!(matches!(
            ToralAutomorphism::from_row_major(&[0, -1, 1, 0]),
            Err(Error::NotHyperbolic { .. })
        ));
        // shear: eigenvalue 1
        assert!(matches!(
            ToralAutomorphism::from_row_major(&[1, 1, 0, 1]),
            Err(Error::NotHyperbolic { .. })
        ));
        assert!(matches!(
            ToralAutomorphism::from_row_major(&[2, 0, 0, 1]),
            Err(Error::NotUnimodular { .. })
        ));
        assert!(ToralAutomorphism::from_row_major(&[1, 2, 3]).is_err());
    }

    #[test]
    fn three_dimensional_automorphism() {
        // companion matrix of t^3 - t - 1 has |det| = 1 and no unit-modulus roots
        let a = ToralAutomorphism::from_row_major(&[0, 1, 0, 0, 0, 1, 1, 1, 0]).unwrap();
        assert_eq!(a.dim(), 3);
        assert!(a.spectral_radius() > 1.0);
    }

    #[test]
    fn index_map_matches_point_map() {
        let a = ToralAutomorphism::cat_map();
        let n = 16;
        let mut out = [0usize; 2];
        for i in 0..n {
            for j in 0..n {
                a.apply_index(&[i, j], n, &mut out);
                let p = a
                    .apply(&[i as f64 / n as f64, j as f64 / n as f64])
                    .unwrap();
                assert_eq!(p[0], out[0] as f64 / n as f64);
                assert_eq!(p[1], out[1] as f64 / n as f64);
            }
        }
    }

    #[test]
    fn wrap_unit_maps_into_half_open_interval() {
        assert_eq!(wrap_unit(-1e-18), 0.0);
        assert_eq!(wrap_unit(1.0), 0.0);
        assert!((wrap_unit(-0.25) - 0.75).abs() < 1e-16);
        assert!((wrap_unit(3.5) - 0.5).abs() < 1e-16);
    }
}
