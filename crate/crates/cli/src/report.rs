//! Report types and writers. Every float goes out with 17 significant digits.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use fiberlin_core::analysis::{Constants, HolderEstimate, ResidualReport};
use fiberlin_core::globalize::GlobalizationReport;
use fiberlin_core::skew_product::FiberModelCheck;
use fiberlin_core::{AlphaTheta, BoundCheck, Error, MultiplierBounds, Result, SolverReport};
use serde::ser::Serialize;
use serde::Serialize as DeriveSerialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

use crate::config::RunConfig;

/// Pretty JSON formatter writing `f64` as `{:.16e}`.
struct SigFigs<'a>(PrettyFormatter<'a>);

impl Formatter for SigFigs<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, SigFigs(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, DeriveSerialize)]
pub struct SystemSummary {
    pub dim: usize,
    pub mu: f64,
    pub fiber: String,
    pub base_independent: bool,
    pub model: FiberModelCheck,
    /// `(max λ)² < min λ`; reported, never required.
    pub narrow_band: Option<bool>,
}

#[derive(Debug, Clone, DeriveSerialize)]
pub struct OracleReport {
    pub kind: &'static str,
    /// Sup over grid nodes with `x > 0` of `|h - h_exact|`.
    pub h_error: f64,
    /// Same sup for `x + x² h`.
    pub conjugacy_error: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, DeriveSerialize)]
pub struct Validation {
    pub bounds: MultiplierBounds,
    pub alpha_theta: AlphaTheta,
}

#[derive(Debug, Clone, DeriveSerialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub status: &'static str,
    pub config: RunConfig,
    pub system: SystemSummary,
    pub validation: Option<Validation>,
    pub globalization: Option<GlobalizationReport>,
    pub solver: Option<SolverReport>,
    pub conjugacy_residual: Option<ResidualReport>,
    /// Residual of the pointwise series extension, on random points.
    pub refined_residual: Option<ResidualReport>,
    pub oracle_error: Option<f64>,
    pub oracle: Option<OracleReport>,
    pub holder: Option<HolderEstimate>,
    pub constants: Option<Constants>,
    pub bound_checks: Vec<BoundCheck>,
    pub enforced_violations: usize,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

pub fn write_holder_csv(path: &Path, est: &HolderEstimate) -> Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "scale,max_diff,max_ratio,n_pairs,used")?;
    for r in &est.table {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{},{}",
            r.scale, r.max_diff, r.max_ratio, r.n_pairs, r.used
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounds_csv(path: &Path, checks: &[BoundCheck]) -> Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "name,n,reading,theoretical,measured,slack,pass,enforced")?;
    for c in checks {
        let n = c.n.map(|n| n.to_string()).unwrap_or_default();
        let reading = serde_json::to_value(c.reading)?;
        writeln!(
            w,
            "{},{},{},{:.16e},{:.16e},{:.16e},{},{}",
            c.name,
            n,
            reading.as_str().unwrap_or_default(),
            c.theoretical,
            c.measured,
            c.slack,
            c.pass,
            c.enforced
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `name,value` table of the derived constants.
pub fn write_constants_csv(path: &Path, c: &Constants) -> Result<()> {
    let value = serde_json::to_value(c)?;
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "name,value")?;
    if let Some(map) = value.as_object() {
        for (k, v) in map {
            match v {
                serde_json::Value::Number(n) => {
                    writeln!(w, "{k},{:.16e}", n.as_f64().unwrap_or(f64::NAN))?
                }
                serde_json::Value::Bool(b) => writeln!(w, "{k},{b}")?,
                serde_json::Value::Array(items) => {
                    for (i, item) in items.iter().enumerate() {
                        writeln!(
                            w,
                            "{k}[{}],{:.16e}",
                            i + 1,
                            item.as_f64().unwrap_or(f64::NAN)
                        )?;
                    }
                }
                _ => writeln!(w, "{k},")?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_digits() {
        let s = to_json(&serde_json::json!({"a": 0.1, "b": [1.0, -2.5], "c": 3})).unwrap();
        assert!(s.contains("\"a\": 1.0000000000000001e-1"), "{s}");
        assert!(s.contains("-2.5000000000000000e0"), "{s}");
        assert!(s.contains("\"c\": 3"), "{s}");
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn non_finite_becomes_null() {
        let s = to_json(&vec![f64::INFINITY]).unwrap();
        assert!(s.contains("null"));
    }
}
