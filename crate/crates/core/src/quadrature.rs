//! Gauss–Legendre rules on `[0, 1]`.

use std::sync::OnceLock;

/// Node/weight pairs of the `n`-point rule mapped to `[0, 1]`.
#[derive(Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, t);
                dp = d;
                let dt = p / d;
                t -= dt;
                if dt.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, t);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - t * t) * dp * dp);
            nodes[i] = 0.5 * (1.0 - t);
            nodes[n - 1 - i] = 0.5 * (1.0 + t);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(s))
            .sum()
    }
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

/// Cached rules with 16, 32, 64, 128 and 256 nodes.
pub fn rule(level: usize) -> &'static GaussLegendre {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (0..LEVELS).map(|l| GaussLegendre::new(16 << l)).collect());
    &rules[level]
}

pub const LEVELS: usize = 5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one_and_polynomials_are_exact() {
        for l in 0..LEVELS {
            let r = rule(l);
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            // degree 2n-1 exactness; check a degree-9 monomial
            assert!((r.integrate(|s| s.powi(9)) - 0.1).abs() < 1e-14);
        }
    }

    #[test]
    fn smooth_integrand() {
        let r = GaussLegendre::new(16);
        let exact = 1.0 - (1.0f64).cos();
        assert!((r.integrate(f64::sin) - exact).abs() < 1e-15);
    }
}
