//! Search-space types, the sample history, and objective functions.
//!
//! An [`Objective`] is a deterministic map from points of a box-shaped search
//! space to reals. Agents only ever see it through [`Objective::evaluate`],
//! which rejects points outside the box instead of clamping them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]` in `d` dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds")]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBounds> for Bounds {
    type Error = Error;

    fn try_from(raw: RawBounds) -> Result<Self> {
        Bounds::new(raw.lower, raw.upper)
    }
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBounds("zero dimensions".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidBounds(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidBounds(format!(
                    "axis {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    /// Length of the main diagonal.
    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.width(i).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(Error::OutOfBounds { point: x.to_vec() });
        }
        Ok(())
    }
}

/// A point of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SamplePoint(pub Vec<f64>);

impl SamplePoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for SamplePoint {
    fn from(coords: Vec<f64>) -> Self {
        Self(coords)
    }
}

impl AsRef<[f64]> for SamplePoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One evaluated pair `(x, f(x))`, tagged with its position in evaluation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub order: usize,
    pub x: SamplePoint,
    pub y: f64,
}

/// The ordered sample history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordStore {
    bounds: Bounds,
    records: Vec<SampleRecord>,
}

impl RecordStore {
    pub fn new(bounds: Bounds) -> Self {
        Self {
            bounds,
            records: Vec::new(),
        }
    }

    /// Rebuilds a store from records, validating order contiguity and bounds.
    pub fn from_records(bounds: Bounds, records: Vec<SampleRecord>) -> Result<Self> {
        let mut store = Self::new(bounds);
        for r in records {
            if r.order != store.len() {
                return Err(Error::Config(format!(
                    "record order {} found where {} was expected",
                    r.order,
                    store.len()
                )));
            }
            store.push(r.x, r.y)?;
        }
        Ok(store)
    }

    /// Appends a record, assigning the next order index.
    pub fn push(&mut self, x: SamplePoint, y: f64) -> Result<&SampleRecord> {
        self.bounds.check(x.coords())?;
        if x.coords().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coordinates {:?}", x.coords())));
        }
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("objective value {y}")));
        }
        let order = self.records.len();
        self.records.push(SampleRecord { order, x, y });
        Ok(&self.records[order])
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// A store holding only the first `k` records.
    pub fn prefix(&self, k: usize) -> Self {
        Self {
            bounds: self.bounds.clone(),
            records: self.records[..k.min(self.len())].to_vec(),
        }
    }

    pub fn into_records(self) -> Vec<SampleRecord> {
        self.records
    }
}

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A deterministic black-box objective over a box-shaped search space.
#[derive(Clone)]
pub struct Objective {
    name: String,
    bounds: Bounds,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl Objective {
    /// Wraps a pure function. The function is only ever called with in-bounds points.
    pub fn new<F>(name: impl Into<String>, bounds: Bounds, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            bounds,
            eval: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.bounds.check(x)?;
        let y = (self.eval)(x);
        if !y.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} returned {y} at {x:?}",
                self.name
            )));
        }
        Ok(y)
    }
}

pub const HOLDER_TABLE_NAME: &str = "holder-table";

fn holder_table_unchecked(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let radial = (1.0 - (x1 * x1 + x2 * x2).sqrt() / PI).abs().exp();
    (x1.sin() * x2.cos() * radial).abs()
}

/// Holder-Table function on `[-10, 10]^2`.
///
/// Non-negative everywhere, with four global maxima of about 19.2085 near
/// `(±8.055, ±9.665)`.
pub fn holder_table(x: &[f64]) -> Result<f64> {
    holder_table_bounds().check(x)?;
    Ok(holder_table_unchecked(x))
}

pub fn holder_table_bounds() -> Bounds {
    Bounds::cube(2, -10.0, 10.0).expect("static bounds are valid")
}

pub fn holder_table_objective() -> Objective {
    Objective::new(
        HOLDER_TABLE_NAME,
        holder_table_bounds(),
        holder_table_unchecked,
    )
}

/// A 2-D objective tabulated on a rectangular lattice, evaluated by bilinear
/// interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTable {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Row-major: `values[i * x2.len() + j]` is the value at `(x1[i], x2[j])`.
    pub values: Vec<f64>,
}

impl GridTable {
    pub fn bounds(&self) -> Bounds {
        Bounds::new(
            vec![self.x1[0], self.x2[0]],
            vec![*self.x1.last().unwrap(), *self.x2.last().unwrap()],
        )
        .expect("axes are strictly increasing")
    }

    fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.x2.len() + j]
    }

    /// Bilinear interpolation; exact at lattice nodes. `x` must lie in bounds.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let (i, t) = cell(&self.x1, x[0]);
        let (j, u) = cell(&self.x2, x[1]);
        let v00 = self.value(i, j);
        let v10 = self.value(i + 1, j);
        let v01 = self.value(i, j + 1);
        let v11 = self.value(i + 1, j + 1);
        v00 * (1.0 - t) * (1.0 - u) + v10 * t * (1.0 - u) + v01 * (1.0 - t) * u + v11 * t * u
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            reason,
        };
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        if names != ["x1", "x2", "value"] {
            return Err(parse_err(format!(
                "expected header `x1,x2,value`, found `{}`",
                names.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(parse_err(format!("row {}: expected 3 fields", line + 1)));
            }
            let mut vals = [0.0; 3];
            for (k, field) in rec.iter().enumerate() {
                vals[k] = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("row {}: `{field}`: {e}", line + 1)))?;
                if !vals[k].is_finite() {
                    return Err(parse_err(format!("row {}: non-finite `{field}`", line + 1)));
                }
            }
            rows.push(vals);
        }
        Self::from_rows(&rows).map_err(parse_err)
    }

    /// Builds a table from `(x1, x2, value)` rows sorted by `(x1, x2)`.
    pub fn from_rows(rows: &[[f64; 3]]) -> std::result::Result<Self, String> {
        let mut x1: Vec<f64> = Vec::new();
        for r in rows {
            match x1.last() {
                Some(&last) if r[0] == last => {}
                Some(&last) if r[0] < last => {
                    return Err(format!("x1 axis not increasing at {}", r[0]));
                }
                _ => x1.push(r[0]),
            }
        }
        if x1.len() < 2 {
            return Err("x1 axis needs at least two distinct values".into());
        }
        if !rows.len().is_multiple_of(x1.len()) {
            return Err("grid is not rectangular".into());
        }
        let n2 = rows.len() / x1.len();
        if n2 < 2 {
            return Err("x2 axis needs at least two distinct values".into());
        }
        let x2: Vec<f64> = rows[..n2].iter().map(|r| r[1]).collect();
        if x2.windows(2).any(|w| w[0] >= w[1]) {
            return Err("x2 axis not strictly increasing".into());
        }
        for (i, chunk) in rows.chunks(n2).enumerate() {
            for (j, r) in chunk.iter().enumerate() {
                if r[0] != x1[i] || r[1] != x2[j] {
                    return Err(format!(
                        "grid is not rectangular: row ({}, {}) where ({}, {}) was expected",
                        r[0], r[1], x1[i], x2[j]
                    ));
                }
            }
        }
        Ok(Self {
            x1,
            x2,
            values: rows.iter().map(|r| r[2]).collect(),
        })
    }
}

/// Cell index `i` with `axis[i] <= v <= axis[i + 1]` and the local coordinate in `[0, 1]`.
fn cell(axis: &[f64], v: f64) -> (usize, f64) {
    let upper = axis.partition_point(|a| *a <= v);
    let i = upper.saturating_sub(1).min(axis.len() - 2);
    let t = (v - axis[i]) / (axis[i + 1] - axis[i]);
    (i, t)
}

/// Loads a tabulated objective from a `x1,x2,value` CSV lattice.
pub fn grid_objective_from_file(path: &Path) -> Result<Objective> {
    let table = GridTable::read_csv(path)?;
    let name = format!("grid:{}", path.display());
    let bounds = table.bounds();
    Ok(Objective::new(name, bounds, move |x| table.interpolate(x)))
}

/// Named objectives. Names of the form `grid:<path>` are resolved by loading the file.
#[derive(Clone, Debug)]
pub struct Registry {
    entries: BTreeMap<String, Objective>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(holder_table_objective());
        r
    }
}

impl Registry {
    pub fn register(&mut self, objective: Objective) {
        self.entries.insert(objective.name().to_string(), objective);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Result<Objective> {
        if let Some(path) = name.strip_prefix("grid:") {
            return grid_objective_from_file(Path::new(path));
        }
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownObjective(name.to_string()))
    }
}

/// Looks up a name in the default registry.
pub fn registry_lookup(name: &str) -> Result<Objective> {
    Registry::default().lookup(name)
}
