//! Real functions sampled on a uniform phase-space rectangle, with the
//! Planck constant carried as metadata.
//!
//! Grids are endpoint inclusive: `n_q` samples cover `[q_min, q_max]` with
//! spacing `(q_max - q_min) / (n_q - 1)`, row-major in `q` (the sample at
//! `(q_i, p_j)` sits at flat index `i * n_p + j`).  Values are immutable
//! after construction; derive new functions with `map` and `zip_with`.
//!
//! On disk a grid is a JSON manifest next to a raw array of little-endian
//! 64-bit floats:
//! `{hbar, q_min, q_max, n_q, p_min, p_max, n_p, data_file}`.

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Geometry of a uniform rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub q_min: f64,
    pub q_max: f64,
    pub n_q: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub n_p: usize,
}

impl GridSpec {
    /// Symmetric square grid `[-l, l]²` with `n` points per axis.
    pub fn square(l: f64, n: usize) -> Self {
        GridSpec {
            q_min: -l,
            q_max: l,
            n_q: n,
            p_min: -l,
            p_max: l,
            n_p: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_q < 8 || self.n_p < 8 {
            return Err(Error::GridMismatch {
                message: format!(
                    "at least 8 samples per axis required, got {} x {}",
                    self.n_q, self.n_p
                ),
            });
        }
        if !(self.q_min < self.q_max) || !(self.p_min < self.p_max) {
            return Err(Error::GridMismatch {
                message: "grid bounds must satisfy q_min < q_max and p_min < p_max".into(),
            });
        }
        if !self.q_min.is_finite()
            || !self.q_max.is_finite()
            || !self.p_min.is_finite()
            || !self.p_max.is_finite()
        {
            return Err(Error::GridMismatch {
                message: "grid bounds must be finite".into(),
            });
        }
        Ok(())
    }

    pub fn q_step(&self) -> f64 {
        (self.q_max - self.q_min) / (self.n_q - 1) as f64
    }

    pub fn p_step(&self) -> f64 {
        (self.p_max - self.p_min) / (self.n_p - 1) as f64
    }

    pub fn q_at(&self, i: usize) -> f64 {
        self.q_min + self.q_step() * i as f64
    }

    pub fn p_at(&self, j: usize) -> f64 {
        self.p_min + self.p_step() * j as f64
    }

    pub fn len(&self) -> usize {
        self.n_q * self.n_p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// On-disk description of a stored grid.
#[derive(Serialize, Deserialize)]
struct GridManifest {
    hbar: f64,
    q_min: f64,
    q_max: f64,
    n_q: usize,
    p_min: f64,
    p_max: f64,
    n_p: usize,
    data_file: String,
}

#[derive(Clone, Debug)]
pub struct GridFunction {
    spec: GridSpec,
    hbar: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, hbar: f64, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if !(hbar > 0.0) || !hbar.is_finite() {
            return Err(Error::domain("hbar must be a positive finite real"));
        }
        if values.len() != spec.len() {
            return Err(Error::GridMismatch {
                message: format!(
                    "expected {} samples for a {} x {} grid, got {}",
                    spec.len(),
                    spec.n_q,
                    spec.n_p,
                    values.len()
                ),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::GridMismatch {
                message: format!(
                    "sample at flat index {bad} is not finite: {}",
                    values[bad]
                ),
            });
        }
        Ok(GridFunction { spec, hbar, values })
    }

    /// Sample a closure of `(q, p)` over the grid.
    pub fn sample(spec: GridSpec, hbar: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        spec.validate()?;
        let mut values = Vec::with_capacity(spec.len());
        for i in 0..spec.n_q {
            let q = spec.q_at(i);
            for j in 0..spec.n_p {
                values.push(f(q, spec.p_at(j)));
            }
        }
        GridFunction::new(spec, hbar, values)
    }

    /// Sample an expression in the flat variables `(q, p)`.
    pub fn sample_expr(spec: GridSpec, hbar: f64, expr: &ScalarExpr) -> Result<Self> {
        spec.validate()?;
        let mut values = Vec::with_capacity(spec.len());
        for i in 0..spec.n_q {
            let q = spec.q_at(i);
            for j in 0..spec.n_p {
                values.push(expr.evaluate_at(&[q, spec.p_at(j)], hbar)?);
            }
        }
        GridFunction::new(spec, hbar, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.spec.n_p + j]
    }

    /// Both functions must live on the identical grid with the same `hbar`.
    pub fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch {
                message: "grids differ in geometry".into(),
            });
        }
        if self.hbar != other.hbar {
            return Err(Error::GridMismatch {
                message: format!("hbar differs: {} vs {}", self.hbar, other.hbar),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridFunction> {
        GridFunction::new(self.spec, self.hbar, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        GridFunction::new(self.spec, self.hbar, values)
    }

    /// Trapezoid rule over the whole rectangle.
    pub fn integral(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.spec.n_q {
            let wq = if i == 0 || i == self.spec.n_q - 1 { 0.5 } else { 1.0 };
            for j in 0..self.spec.n_p {
                let wp = if j == 0 || j == self.spec.n_p - 1 { 0.5 } else { 1.0 };
                total += wq * wp * self.value(i, j);
            }
        }
        total * self.spec.q_step() * self.spec.p_step()
    }

    /// Trapezoid rule applied to the square of the samples.
    pub fn l2_integral(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.spec.n_q {
            let wq = if i == 0 || i == self.spec.n_q - 1 { 0.5 } else { 1.0 };
            for j in 0..self.spec.n_p {
                let wp = if j == 0 || j == self.spec.n_p - 1 { 0.5 } else { 1.0 };
                let v = self.value(i, j);
                total += wq * wp * v * v;
            }
        }
        total * self.spec.q_step() * self.spec.p_step()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude on the boundary rows and columns, for decay checks.
    pub fn boundary_sup(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.spec.n_q {
            m = m.max(self.value(i, 0).abs());
            m = m.max(self.value(i, self.spec.n_p - 1).abs());
        }
        for j in 0..self.spec.n_p {
            m = m.max(self.value(0, j).abs());
            m = m.max(self.value(self.spec.n_q - 1, j).abs());
        }
        m
    }

    /// Write the JSON manifest at `manifest_path` and the raw samples next
    /// to it, named after the manifest stem with extension `f64`.
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let stem = manifest_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::domain("manifest path has no file name"))?;
        let data_name = format!("{stem}.f64");
        let manifest = GridManifest {
            hbar: self.hbar,
            q_min: self.spec.q_min,
            q_max: self.spec.q_max,
            n_q: self.spec.n_q,
            p_min: self.spec.p_min,
            p_max: self.spec.p_max,
            n_p: self.spec.n_p,
            data_file: data_name.clone(),
        };
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        fs::write(dir.join(&data_name), &bytes)?;
        fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(manifest_path: &Path) -> Result<GridFunction> {
        let manifest: GridManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        let spec = GridSpec {
            q_min: manifest.q_min,
            q_max: manifest.q_max,
            n_q: manifest.n_q,
            p_min: manifest.p_min,
            p_max: manifest.p_max,
            n_p: manifest.n_p,
        };
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let bytes = fs::read(dir.join(&manifest.data_file))?;
        if bytes.len() != spec.len() * 8 {
            return Err(Error::GridMismatch {
                message: format!(
                    "data file holds {} bytes, expected {} for a {} x {} grid",
                    bytes.len(),
                    spec.len() * 8,
                    spec.n_q,
                    spec.n_p
                ),
            });
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        GridFunction::new(spec, manifest.hbar, values)
    }

    /// Plain `q,p,value` rows for external plotting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "q,p,value")?;
        for i in 0..self.spec.n_q {
            let q = self.spec.q_at(i);
            for j in 0..self.spec.n_p {
                writeln!(out, "{q},{},{}", self.spec.p_at(j), self.value(i, j))?;
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}
