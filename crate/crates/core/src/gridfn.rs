//! Functions on `T^d × [0, ε]` sampled on a uniform periodic grid.
//!
//! Values are stored row-major with the base multi-index first and the fiber
//! index fastest. Interpolation is multilinear: periodic in `b`, linear in `x`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::PairSampler;
use crate::skew_product::node_coords;

/// Slack allowed on queries beyond `[0, ε]`.
pub const X_DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// Nodes per torus axis.
    pub n_b: usize,
    /// Nodes on `[0, ε]`, endpoints included.
    pub n_x: usize,
    pub epsilon: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n_b: usize, n_x: usize, epsilon: f64) -> Result<Self> {
        if dim == 0 || n_b < 2 || n_x < 2 || !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "invalid grid: dim={dim}, n_b={n_b}, n_x={n_x}, epsilon={epsilon}"
            )));
        }
        Ok(GridSpec {
            dim,
            n_b,
            n_x,
            epsilon,
        })
    }

    pub fn base_nodes(&self) -> usize {
        self.n_b.pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        self.base_nodes() * self.n_x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.epsilon / (self.n_x - 1) as f64
    }

    pub fn db(&self) -> f64 {
        1.0 / self.n_b as f64
    }

    #[inline]
    pub fn x_node(&self, i: usize) -> f64 {
        if i == self.n_x - 1 {
            self.epsilon
        } else {
            i as f64 * self.dx()
        }
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x_node(i)).collect()
    }

    #[inline]
    pub fn base_coords(&self, flat: usize, out: &mut [f64]) {
        node_coords(flat, self.n_b, out)
    }

    pub fn base_multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for c in idx.iter_mut().rev() {
            *c = flat % self.n_b;
            flat /= self.n_b;
        }
        idx
    }

    pub fn base_flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n_b + i)
    }

    /// Same domain with both grid counts refined: `n_b -> 2 n_b`, `n_x -> 2 n_x - 1`.
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            n_b: 2 * self.n_b,
            n_x: 2 * self.n_x - 1,
            ..*self
        }
    }
}

/// Cell index and offset of `u >= 0`, snapping to a node within rounding error.
#[inline]
fn split_cell(u: f64) -> (usize, f64) {
    let i = u.floor();
    let t = u - i;
    if t > 1.0 - 1e-12 {
        (i as usize + 1, 0.0)
    } else if t < 1e-12 {
        (i as usize, 0.0)
    } else {
        (i as usize, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<f64>,
}

/// Per-scale maxima of the base-difference statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleStat {
    pub scale: f64,
    /// `max |h(b1,x) - h(b2,x)| / d(b1,b2)^alpha`.
    pub max_ratio: f64,
    /// `max |h(b1,x) - h(b2,x)|`.
    pub max_diff: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub c_norm: f64,
    pub lip_x: f64,
    pub holder_alpha: f64,
    pub holder_norm: f64,
    pub n_pairs: usize,
    pub per_scale: Vec<ScaleStat>,
    pub warnings: Vec<String>,
}

/// Parameters of the pair-sampled Hölder estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderSampling {
    pub n_pairs: usize,
    pub scales: Vec<f64>,
    pub seed: u64,
}

impl GridFunction {
    pub fn zeros(spec: GridSpec) -> Self {
        GridFunction {
            values: vec![0.0; spec.len()],
            spec,
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} values for grid {:?}, got {}",
                spec.len(),
                spec,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite grid value at flat index {i}"
            )));
        }
        Ok(GridFunction { spec, values })
    }

    /// Samples `f(b, x)` at every node, in parallel.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64], f64) -> f64 + Sync) -> Self {
        Self::from_node_fn(spec, |_, b, x| f(b, x))
    }

    /// Like [`GridFunction::from_fn`] but also passes the flat base index.
    pub fn from_node_fn(spec: GridSpec, f: impl Fn(usize, &[f64], f64) -> f64 + Sync) -> Self {
        let xs = spec.x_nodes();
        let mut values = vec![0.0; spec.len()];
        values
            .par_chunks_mut(spec.n_x)
            .enumerate()
            .for_each(|(bflat, row)| {
                let mut b = vec![0.0; spec.dim];
                spec.base_coords(bflat, &mut b);
                for (v, &x) in row.iter_mut().zip(&xs) {
                    *v = f(bflat, &b, x);
                }
            });
        GridFunction { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn node(&self, bflat: usize, ix: usize) -> f64 {
        self.values[bflat * self.spec.n_x + ix]
    }

    pub fn row(&self, bflat: usize) -> &[f64] {
        &self.values[bflat * self.spec.n_x..(bflat + 1) * self.spec.n_x]
    }

    /// Linear interpolation in `x` at a base grid node; `x` is clamped to `[0, ε]`.
    #[inline]
    pub fn eval_at_base_node(&self, bflat: usize, x: f64) -> f64 {
        let (i, t) = self.x_cell(x);
        let row = self.row(bflat);
        row[i] + t * (row[i + 1] - row[i])
    }

    #[inline]
    fn x_cell(&self, x: f64) -> (usize, f64) {
        let u = (x / self.spec.dx()).clamp(0.0, (self.spec.n_x - 1) as f64);
        let (i, t) = split_cell(u);
        if i >= self.spec.n_x - 1 {
            (self.spec.n_x - 2, 1.0)
        } else {
            (i, t)
        }
    }

    /// Multilinear interpolation; exact at nodes.
    pub fn eval(&self, b: &[f64], x: f64) -> Result<f64> {
        if b.len() != self.spec.dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim,
                got: b.len(),
            });
        }
        if !(x >= -X_DOMAIN_SLACK && x <= self.spec.epsilon + X_DOMAIN_SLACK) {
            return Err(Error::Domain {
                x,
                epsilon: self.spec.epsilon,
            });
        }
        Ok(self.eval_clamped(b, x))
    }

    /// Multilinear interpolation with `x` clamped to `[0, ε]`.
    pub fn eval_clamped(&self, b: &[f64], x: f64) -> f64 {
        let d = self.spec.dim;
        let n = self.spec.n_b;
        let mut lo = [0usize; crate::sampling::MAX_DIM];
        let mut frac = [0.0f64; crate::sampling::MAX_DIM];
        for k in 0..d {
            let (i, t) = split_cell(crate::torus::wrap_unit(b[k]) * n as f64);
            lo[k] = i % n;
            frac[k] = t;
        }
        let (ix, tx) = self.x_cell(x);
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for k in 0..d {
                let up = (corner >> (d - 1 - k)) & 1 == 1;
                let i = if up { (lo[k] + 1) % n } else { lo[k] };
                w *= if up { frac[k] } else { 1.0 - frac[k] };
                flat = flat * n + i;
            }
            if w == 0.0 {
                continue;
            }
            let row = self.row(flat);
            acc += w * (row[ix] + tx * (row[ix + 1] - row[ix]));
        }
        acc
    }

    /// `sup |h|` over the nodes (the sup of the multilinear interpolant).
    pub fn c_norm(&self) -> f64 {
        self.values
            .par_iter()
            .map(|v| v.abs())
            .reduce(|| 0.0, f64::max)
    }

    /// Largest adjacent-node difference quotient in `x`.
    pub fn lipschitz_x(&self) -> f64 {
        let dx = self.spec.dx();
        self.values
            .par_chunks(self.spec.n_x)
            .map(|row| {
                row.windows(2)
                    .map(|w| (w[1] - w[0]).abs() / dx)
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Sup of `|h - g|` over the nodes; both grids must share a spec.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.spec, other.spec, "grid specs differ");
        self.values
            .par_iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> GridFunction {
        GridFunction {
            spec: self.spec,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pair-sampled Hölder statistics in `b`, together with the sup and
    /// fiber-Lipschitz norms.
    pub fn holder_norm(&self, alpha: f64, sampling: &HolderSampling) -> Result<NormReport> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        let mut warnings = Vec::new();
        for &s in &sampling.scales {
            if !(s > 0.0 && s < 0.5) {
                return Err(Error::InvalidInput(format!("scale {s} outside (0, 0.5)")));
            }
            if s < self.spec.db() {
                warnings.push(format!(
                    "scale {s} is below the base grid spacing {}; interpolation smooths sub-grid variation",
                    self.spec.db()
                ));
            }
        }
        let sampler = PairSampler::new(sampling.seed, self.spec.dim);
        let xs = self.spec.x_nodes();
        let per_scale: Vec<ScaleStat> = sampling
            .scales
            .iter()
            .enumerate()
            .map(|(si, &scale)| {
                let (max_ratio, max_diff) = (0..sampling.n_pairs as u64)
                    .into_par_iter()
                    .map(|i| {
                        let p = sampler.pair(si as u64, i, scale);
                        let mut diff = 0.0f64;
                        for &x in &xs {
                            let v =
                                (self.eval_clamped(&p.b1, x) - self.eval_clamped(&p.b2, x)).abs();
                            diff = diff.max(v);
                        }
                        let ratio = if p.distance > 0.0 {
                            diff / p.distance.powf(alpha)
                        } else {
                            0.0
                        };
                        (ratio, diff)
                    })
                    .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
                ScaleStat {
                    scale,
                    max_ratio,
                    max_diff,
                    n_pairs: sampling.n_pairs,
                }
            })
            .collect();
        Ok(NormReport {
            c_norm: self.c_norm(),
            lip_x: self.lipschitz_x(),
            holder_alpha: alpha,
            holder_norm: per_scale.iter().map(|s| s.max_ratio).fold(0.0, f64::max),
            n_pairs: sampling.n_pairs * sampling.scales.len(),
            per_scale,
            warnings,
        })
    }

    /// Writes `i1,...,id,ix,value` rows with 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        let header: Vec<String> = (1..=self.spec.dim)
            .map(|k| format!("i{k}"))
            .chain(["ix".to_string(), "value".to_string()])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for bflat in 0..self.spec.base_nodes() {
            let idx = self.spec.base_multi_index(bflat);
            let prefix: String = idx.iter().map(|i| format!("{i},")).collect();
            for ix in 0..self.spec.n_x {
                writeln!(w, "{prefix}{ix},{:.16e}", self.node(bflat, ix))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file produced by [`GridFunction::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, epsilon: f64) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Io("empty csv".into()))?;
        let dim = header.split(',').count() - 2;
        let mut rows: Vec<(Vec<usize>, f64)> = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Io(format!(
                    "csv line {}: expected {} fields",
                    ln + 2,
                    dim + 2
                )));
            }
            let idx = fields[..=dim]
                .iter()
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Io(format!("csv line {}: {e}", ln + 2)))?;
            let v = fields[dim + 1]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Io(format!("csv line {}: {e}", ln + 2)))?;
            rows.push((idx, v));
        }
        let n_b = rows
            .iter()
            .flat_map(|(i, _)| i[..dim].iter())
            .max()
            .map_or(0, |m| m + 1);
        let n_x = rows.iter().map(|(i, _)| i[dim]).max().map_or(0, |m| m + 1);
        let spec = GridSpec::new(dim, n_b, n_x, epsilon)?;
        if rows.len() != spec.len() {
            return Err(Error::Io(format!(
                "csv has {} rows, grid needs {}",
                rows.len(),
                spec.len()
            )));
        }
        let mut values = vec![f64::NAN; spec.len()];
        for (idx, v) in rows {
            values[spec.base_flat(&idx[..dim]) * n_x + idx[dim]] = v;
        }
        Self::from_values(spec, values)
    }

    /// Writes raw little-endian `f64` values to `bin_path` and a JSON header to `meta_path`.
    pub fn write_binary(
        &self,
        bin_path: impl AsRef<Path>,
        meta_path: impl AsRef<Path>,
    ) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(bin_path, bytes)?;
        let meta = GridMeta::from_spec(&self.spec);
        fs::write(meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn read_binary(bin_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self> {
        let meta: GridMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
        if meta.dtype != "f64-le" || meta.order != "row-major" {
            return Err(Error::Io(format!(
                "unsupported layout {} / {}",
                meta.dtype, meta.order
            )));
        }
        let spec = GridSpec::new(meta.dim, meta.n_b, meta.n_x, meta.epsilon)?;
        let bytes = fs::read(bin_path)?;
        if bytes.len() != spec.len() * 8 {
            return Err(Error::Io(format!(
                "binary has {} bytes, grid needs {}",
                bytes.len(),
                spec.len() * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_values(spec, values)
    }
}

/// JSON header accompanying the binary dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub format: String,
    pub dim: usize,
    pub n_b: usize,
    pub n_x: usize,
    pub epsilon: f64,
    /// `[n_b; dim] ++ [n_x]`.
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
}

impl GridMeta {
    fn from_spec(spec: &GridSpec) -> Self {
        let mut shape = vec![spec.n_b; spec.dim];
        shape.push(spec.n_x);
        GridMeta {
            format: "fiberlin-grid/1".into(),
            dim: spec.dim,
            n_b: spec.n_b,
            n_x: spec.n_x,
            epsilon: spec.epsilon,
            shape,
            dtype: "f64-le".into(),
            order: "row-major".into(),
        }
    }
}
