//! Balloon-style adaptive kernel density estimation over the sample history.
//!
//! The bandwidth at a query point is the distance to its `k`-th nearest stored
//! sample (floored at `min_bandwidth`), so the kernel widens where samples are
//! sparse. Neighbor queries go through a kd-tree that is rebuilt from scratch
//! every `rebuild_interval` inserts; points inserted since the last rebuild are
//! scanned linearly, which keeps every query exact.

mod kdtree;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Bounds, SamplePoint};

use kdtree::{sq_dist, Candidates, KdTree};

/// Kernel contributions beyond this many bandwidths are dropped. At 8
/// bandwidths a Gaussian term is below `1.3e-14` of its peak, far under the
/// contribution of the nearest neighbor.
const KERNEL_CUTOFF: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    /// Neighbor rank that sets the bandwidth.
    pub k: usize,
    /// Inserts between index rebuilds.
    pub rebuild_interval: usize,
    /// Bandwidth floor as a fraction of the search-space diameter.
    pub min_bandwidth_fraction: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            k: 10,
            rebuild_interval: 256,
            min_bandwidth_fraction: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensityEstimator {
    dim: usize,
    k: usize,
    rebuild_interval: usize,
    min_bandwidth: f64,
    /// Row-major coordinates of all stored points.
    coords: Vec<f64>,
    index: KdTree,
    inserts_since_rebuild: usize,
    rebuilds: usize,
    /// Bandwidth and unnormalized kernel sum of each stored point, valid for
    /// the first `self_cache.len()` points as of the last `stored_densities`.
    self_cache: Vec<(f64, f64)>,
}

/// A stored neighbor of a query.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    /// Insertion index of the neighbor.
    pub index: usize,
    pub point: SamplePoint,
    pub distance: f64,
}

impl DensityEstimator {
    pub fn new(dim: usize, k: usize, rebuild_interval: usize, min_bandwidth: f64) -> Result<Self> {
        if dim == 0 || k == 0 || rebuild_interval == 0 {
            return Err(Error::Config(
                "density estimator needs dim, k and rebuild_interval >= 1".into(),
            ));
        }
        if !(min_bandwidth > 0.0 && min_bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "min_bandwidth must be positive, got {min_bandwidth}"
            )));
        }
        Ok(Self {
            dim,
            k,
            rebuild_interval,
            min_bandwidth,
            coords: Vec::new(),
            index: KdTree::default(),
            inserts_since_rebuild: 0,
            rebuilds: 0,
            self_cache: Vec::new(),
        })
    }

    pub fn for_bounds(bounds: &Bounds, config: &DensityConfig) -> Result<Self> {
        Self::new(
            bounds.dim(),
            config.k,
            config.rebuild_interval,
            config.min_bandwidth_fraction * bounds.diameter(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn min_bandwidth(&self) -> f64 {
        self.min_bandwidth
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Number of full index rebuilds so far.
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn inserts_since_rebuild(&self) -> usize {
        self.inserts_since_rebuild
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.coords[index * self.dim..(index + 1) * self.dim]
    }

    pub fn add_points<P: AsRef<[f64]>>(&mut self, points: &[P]) -> Result<()> {
        for p in points {
            let p = p.as_ref();
            if p.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: p.len(),
                });
            }
        }
        for p in points {
            self.coords.extend_from_slice(p.as_ref());
        }
        self.inserts_since_rebuild += points.len();
        if self.inserts_since_rebuild >= self.rebuild_interval {
            self.rebuild();
        }
        Ok(())
    }

    /// Rebuilds the index over every stored point.
    pub fn rebuild(&mut self) {
        self.index = KdTree::build(&self.coords, self.dim, self.len());
        self.inserts_since_rebuild = 0;
        self.rebuilds += 1;
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyEstimator);
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(())
    }

    fn knn_raw(&self, query: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut cands = Candidates::new(k);
        self.index.knn(&self.coords, self.dim, query, &mut cands);
        for i in self.index.len()..self.len() {
            cands.offer(sq_dist(self.point(i), query), i);
        }
        cands.items
    }

    /// The `min(k, len)` nearest stored points, ascending by distance, ties by
    /// insertion order.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(query)?;
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(self
            .knn_raw(query, k)
            .into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                point: SamplePoint(self.point(index).to_vec()),
                distance: d2.sqrt(),
            })
            .collect())
    }

    /// Distance to the `k`-th nearest stored point (or the farthest one when
    /// fewer are stored), floored at `min_bandwidth`.
    pub fn bandwidth(&self, query: &[f64]) -> Result<f64> {
        self.check_query(query)?;
        Ok(self.bandwidth_unchecked(query))
    }

    fn bandwidth_unchecked(&self, query: &[f64]) -> f64 {
        let nn = self.knn_raw(query, self.k);
        let d2 = nn.last().map_or(0.0, |c| c.0);
        d2.sqrt().max(self.min_bandwidth)
    }

    /// Gaussian kernel density at `query` with the adaptive bandwidth.
    /// Strictly positive once any point is stored.
    pub fn density(&self, query: &[f64]) -> Result<f64> {
        self.check_query(query)?;
        let (h, sum) = self.kernel_sum(query);
        Ok(self.normalize(h, sum))
    }

    fn normalize(&self, h: f64, sum: f64) -> f64 {
        sum * gaussian_norm(self.dim, h) / self.len() as f64
    }

    fn kernel_sum(&self, query: &[f64]) -> (f64, f64) {
        let h = self.bandwidth_unchecked(query);
        let radius2 = (KERNEL_CUTOFF * h).powi(2);
        let inv_2h2 = 0.5 / (h * h);
        let mut sum = 0.0;
        let mut visit = |d2: f64, _i: usize| sum += (-d2 * inv_2h2).exp();
        self.index
            .within(&self.coords, self.dim, query, radius2, &mut visit);
        for i in self.index.len()..self.len() {
            let d2 = sq_dist(self.point(i), query);
            if d2 <= radius2 {
                visit(d2, i);
            }
        }
        (h, sum)
    }

    /// Densities at every stored point, in insertion order.
    ///
    /// Matches `densities` over the stored points up to summation order, but
    /// only rescans points whose neighborhood gained one of the points added
    /// since the previous call.
    pub fn stored_densities(&mut self) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyEstimator);
        }
        let n = self.len();
        if self.self_cache.len() < self.k {
            // Every bandwidth still depends on every point.
            self.self_cache.clear();
        }
        let m = self.self_cache.len();
        let mut cache = std::mem::take(&mut self.self_cache);
        for (i, entry) in cache.iter_mut().enumerate() {
            let x = self.point(i);
            let (h, sum) = *entry;
            let h2 = h * h;
            let radius2 = KERNEL_CUTOFF * KERNEL_CUTOFF * h2;
            let mut added = 0.0;
            let mut stale = false;
            for j in m..n {
                let d2 = sq_dist(x, self.point(j));
                if d2 < h2 {
                    stale = true;
                    break;
                }
                if d2 <= radius2 {
                    added += (-0.5 * d2 / h2).exp();
                }
            }
            *entry = if stale {
                self.kernel_sum(x)
            } else {
                (h, sum + added)
            };
        }
        for j in m..n {
            cache.push(self.kernel_sum(self.point(j)));
        }
        let out = cache
            .iter()
            .map(|&(h, sum)| self.normalize(h, sum))
            .collect();
        self.self_cache = cache;
        Ok(out)
    }

    /// Densities at many points.
    pub fn densities<P: AsRef<[f64]>>(&self, queries: &[P]) -> Result<Vec<f64>> {
        queries.iter().map(|q| self.density(q.as_ref())).collect()
    }
}

/// Normalizing constant of an isotropic Gaussian with standard deviation `h`.
pub fn gaussian_norm(dim: usize, h: f64) -> f64 {
    (2.0 * PI).powf(-(dim as f64) / 2.0) / h.powi(dim as i32)
}
