//! Coverage scoring of a sample history.
//!
//! A piecewise-linear regressor is fitted to the samples (Delaunay
//! triangulation with barycentric weights in 2-D, sorted breakpoints in 1-D;
//! nearest-sample values outside the convex hull). Thresholding it gives the
//! classifier `C(x) = [f̂(x) > δ]`, which is compared cell by cell with a
//! ground-truth lattice to produce a confusion matrix and an F-beta score.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, FloatTriangulation, HasPosition, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::problem::{Bounds, GridTable, Objective, RecordStore, SampleRecord};

/// Default lattice resolution per axis for 2-D ground truth.
pub const DEFAULT_GRID_RESOLUTION: usize = 256;

#[derive(Clone, Copy, Debug)]
struct Vertex {
    position: Point2<f64>,
    value: f64,
}

impl HasPosition for Vertex {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.position
    }
}

#[derive(Clone, Debug)]
enum Surface {
    /// Breakpoints sorted by coordinate.
    Line {
        xs: Vec<f64>,
        ys: Vec<f64>,
    },
    Plane(DelaunayTriangulation<Vertex>),
}

/// Piecewise-linear interpolant of a sample history.
#[derive(Clone, Debug)]
pub struct Regressor {
    bounds: Bounds,
    surface: Surface,
}

/// Fits the interpolating regressor to every record in `store`.
pub fn fit_regressor(store: &RecordStore) -> Result<Regressor> {
    fit_records(store.bounds(), store.records())
}

pub(crate) fn fit_records(bounds: &Bounds, records: &[SampleRecord]) -> Result<Regressor> {
    let d = bounds.dim();
    if records.len() < d + 1 {
        return Err(Error::Fit(format!(
            "need at least {} samples in {d} dimensions, got {}",
            d + 1,
            records.len()
        )));
    }
    let mut seen = HashSet::new();
    let unique: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| seen.insert(r.x.coords().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect();
    let surface = match d {
        1 => {
            let mut pairs: Vec<(f64, f64)> = unique.iter().map(|r| (r.x.0[0], r.y)).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs.len() < 2 {
                return Err(Error::Fit("all samples coincide".into()));
            }
            Surface::Line {
                xs: pairs.iter().map(|p| p.0).collect(),
                ys: pairs.iter().map(|p| p.1).collect(),
            }
        }
        2 => {
            let vertices: Vec<Vertex> = unique
                .iter()
                .map(|r| Vertex {
                    position: Point2::new(r.x.0[0], r.x.0[1]),
                    value: r.y,
                })
                .collect();
            let tri = DelaunayTriangulation::<Vertex>::bulk_load(vertices)
                .map_err(|e| Error::Fit(format!("triangulation failed: {e:?}")))?;
            if tri.num_inner_faces() == 0 {
                return Err(Error::Fit("samples are collinear".into()));
            }
            Surface::Plane(tri)
        }
        _ => {
            return Err(Error::Fit(format!(
                "interpolation is implemented for 1 and 2 dimensions, not {d}"
            )))
        }
    };
    Ok(Regressor {
        bounds: bounds.clone(),
        surface,
    })
}

impl Regressor {
    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_batch(x)[0]
    }

    /// Predictions for row-major points.
    pub fn predict_batch(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.bounds.dim();
        match &self.surface {
            Surface::Line { xs, ys } => coords.iter().map(|&x| interp_line(xs, ys, x)).collect(),
            Surface::Plane(tri) => {
                let bary = tri.barycentric();
                coords
                    .chunks(d)
                    .map(|p| {
                        let q = Point2::new(p[0], p[1]);
                        bary.interpolate(|v| v.data().value, q).unwrap_or_else(|| {
                            tri.nearest_neighbor(q)
                                .expect("triangulation is non-empty")
                                .data()
                                .value
                        })
                    })
                    .collect()
            }
        }
    }
}

fn interp_line(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|v| *v <= x) - 1;
    if xs[i] == x {
        return ys[i];
    }
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - t) + ys[i + 1] * t
}

/// `C(x) = [f̂(x) > δ]`.
#[derive(Clone, Debug)]
pub struct ThresholdClassifier {
    pub regressor: Regressor,
    pub delta: f64,
}

impl ThresholdClassifier {
    pub fn new(regressor: Regressor, delta: f64) -> Self {
        Self { regressor, delta }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        classify(&self.regressor, x, self.delta)
    }
}

/// Strict inequality: a prediction exactly at `delta` is negative.
pub fn classify(regressor: &Regressor, x: &[f64], delta: f64) -> bool {
    regressor.predict(x) > delta
}

/// Objective values on a complete rectangular lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthGrid {
    pub bounds: Bounds,
    /// Nodes per axis, endpoints included.
    pub resolution: Vec<usize>,
    /// Row-major node coordinates, last axis fastest.
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

impl GroundTruthGrid {
    /// Evaluates `objective` on an evenly spaced lattice.
    pub fn from_objective(objective: &Objective, resolution: &[usize]) -> Result<Self> {
        let bounds = objective.bounds().clone();
        let d = bounds.dim();
        if resolution.len() != d || resolution.iter().any(|&r| r < 2) {
            return Err(Error::Config(format!(
                "grid needs {d} axis resolutions of at least 2, got {resolution:?}"
            )));
        }
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let r = resolution[a];
                (0..r)
                    .map(|i| {
                        if i == r - 1 {
                            bounds.upper()[a]
                        } else {
                            bounds.lower()[a] + bounds.width(a) * i as f64 / (r - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let total: usize = resolution.iter().product();
        let mut coords = Vec::with_capacity(total * d);
        let mut values = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let p: Vec<f64> = (0..d).map(|a| axes[a][idx[a]]).collect();
            values.push(objective.evaluate(&p)?);
            coords.extend_from_slice(&p);
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < resolution[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Self {
            bounds,
            resolution: resolution.to_vec(),
            coords,
            values,
        })
    }

    /// A square lattice with `resolution` nodes on every axis.
    pub fn uniform(objective: &Objective, resolution: usize) -> Result<Self> {
        Self::from_objective(objective, &vec![resolution; objective.dim()])
    }

    /// Reads a 2-D `x1,x2,value` lattice.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = GridTable::read_csv(path)?;
        let bounds = table.bounds();
        let mut coords = Vec::with_capacity(table.values.len() * 2);
        for a in &table.x1 {
            for b in &table.x2 {
                coords.push(*a);
                coords.push(*b);
            }
        }
        Ok(Self {
            bounds,
            resolution: vec![table.x1.len(), table.x2.len()],
            coords,
            values: table.values,
        })
    }

    /// Writes the lattice as CSV with header `x1,...,xd,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (p, v) in self.coords.chunks(d).zip(&self.values) {
            let mut row: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            row.push(v.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    /// True labels `f(x) > delta`.
    pub fn labels(&self, delta: f64) -> Vec<bool> {
        self.values.iter().map(|&v| v > delta).collect()
    }
}

/// Counts over the lattice, laid out as prediction × truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn tally(predicted: &[bool], truth: &[bool]) -> Self {
        let mut cm = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        cm
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn same_bounds(a: &Bounds, b: &Bounds) -> bool {
    a.dim() == b.dim()
        && (0..a.dim()).all(|i| {
            let tol = 1e-9 * a.width(i);
            (a.lower()[i] - b.lower()[i]).abs() <= tol && (a.upper()[i] - b.upper()[i]).abs() <= tol
        })
}

/// Confusion matrix of `classifier` against the lattice labels at the
/// classifier's threshold.
pub fn confusion(
    classifier: &ThresholdClassifier,
    grid: &GroundTruthGrid,
) -> Result<ConfusionMatrix> {
    if !same_bounds(classifier.regressor.bounds(), &grid.bounds) {
        return Err(Error::Config(format!(
            "classifier bounds {:?} differ from grid bounds {:?}",
            classifier.regressor.bounds(),
            grid.bounds
        )));
    }
    let predicted: Vec<bool> = classifier
        .regressor
        .predict_batch(&grid.coords)
        .into_iter()
        .map(|v| v > classifier.delta)
        .collect();
    Ok(ConfusionMatrix::tally(
        &predicted,
        &grid.labels(classifier.delta),
    ))
}

/// `F_β = (1 + β²)·p·r / (β²·p + r)`, zero when `p = r = 0`.
pub fn f_beta(cm: &ConfusionMatrix, beta: f64) -> Result<f64> {
    if cm.tp + cm.fn_ == 0 && cm.tp + cm.fp == 0 {
        return Err(Error::UndefinedScore);
    }
    let p = cm.precision();
    let r = cm.recall();
    if p == 0.0 && r == 0.0 {
        return Ok(0.0);
    }
    let b2 = beta * beta;
    Ok((1.0 + b2) * p * r / (b2 * p + r))
}

pub fn f2(cm: &ConfusionMatrix) -> Result<f64> {
    f_beta(cm, 2.0)
}

/// F2 of the classifier fitted to `records` against `grid`.
pub fn score_records(
    bounds: &Bounds,
    records: &[SampleRecord],
    grid: &GroundTruthGrid,
    delta: f64,
) -> Result<f64> {
    let regressor = fit_records(bounds, records)?;
    let cm = confusion(&ThresholdClassifier::new(regressor, delta), grid)?;
    f2(&cm)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    /// `(evaluations, F2)` pairs in checkpoint order.
    pub points: Vec<(usize, f64)>,
    /// Checkpoints at which no classifier could be fitted.
    pub skipped: Vec<usize>,
}

impl CoverageCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["evaluations", "f2"])?;
        for (k, f) in &self.points {
            w.write_record([k.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn final_score(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

/// F2 after the first `k` records for every checkpoint `k`.
pub fn coverage_curve(
    store: &RecordStore,
    grid: &GroundTruthGrid,
    delta: f64,
    checkpoints: &[usize],
) -> Result<CoverageCurve> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "checkpoints must be strictly ascending".into(),
        ));
    }
    if let Some(&last) = checkpoints.last() {
        if last > store.len() {
            return Err(Error::Config(format!(
                "checkpoint {last} exceeds the {} recorded evaluations",
                store.len()
            )));
        }
    }
    let mut curve = CoverageCurve::default();
    for &k in checkpoints {
        match score_records(store.bounds(), &store.records()[..k], grid, delta) {
            Ok(f) => curve.points.push((k, f)),
            Err(Error::Fit(_)) | Err(Error::UndefinedScore) => curve.skipped.push(k),
            Err(e) => return Err(e),
        }
    }
    Ok(curve)
}
