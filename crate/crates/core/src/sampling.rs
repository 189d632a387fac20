//! Initial designs and in-region sampling.
//!
//! [`SobolSequence`] produces the unscrambled Sobol sequence in Gray-code
//! order using the Joe–Kuo `new-joe-kuo-6.21201` direction numbers.
//! [`sample_in_region`] draws uniform points from a box and keeps those that
//! satisfy a conjunction of linear half-space tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Bounds, SamplePoint};

const BITS: usize = 32;

/// `(a, m)` per dimension after the first: primitive polynomial coefficients and
/// initial direction integers.
const JOE_KUO: &[(u32, &[u32])] = &[
    (0, &[1]),
    (1, &[1, 3]),
    (1, &[1, 3, 1]),
    (2, &[1, 1, 1]),
    (1, &[1, 1, 3, 3]),
    (4, &[1, 3, 5, 13]),
    (2, &[1, 1, 5, 5, 17]),
    (4, &[1, 1, 5, 5, 5]),
    (7, &[1, 1, 7, 11, 19]),
    (11, &[1, 1, 5, 1, 1]),
    (13, &[1, 1, 1, 3, 11]),
    (14, &[1, 3, 5, 5, 31]),
    (1, &[1, 3, 3, 9, 7, 49]),
    (13, &[1, 1, 1, 15, 21, 21]),
    (16, &[1, 3, 1, 13, 27, 49]),
    (19, &[1, 1, 1, 15, 7, 5]),
    (22, &[1, 3, 1, 15, 13, 25]),
    (25, &[1, 1, 5, 5, 19, 61]),
    (1, &[1, 3, 7, 11, 23, 15, 103]),
    (4, &[1, 3, 7, 13, 13, 15, 69]),
];

/// Highest dimension with tabulated direction numbers.
pub const SOBOL_MAX_DIM: usize = JOE_KUO.len() + 1;

fn direction_numbers(dim_index: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim_index == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (a, m) = JOE_KUO[dim_index - 1];
    let s = m.len();
    for k in 0..BITS {
        v[k] = if k < s {
            m[k] << (BITS - 1 - k)
        } else {
            let mut vk = v[k - s] ^ (v[k - s] >> s);
            for l in 1..s {
                if (a >> (s - 1 - l)) & 1 == 1 {
                    vk ^= v[k - l];
                }
            }
            vk
        };
    }
    v
}

/// Stateful Sobol generator over `[0, 1)^d`.
#[derive(Clone, Debug)]
pub struct SobolSequence {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    next_index: u64,
}

impl SobolSequence {
    pub fn new(dim: usize) -> Result<Self> {
        Self::starting_at(dim, 0)
    }

    /// A generator whose first emitted point is element `start` of the sequence.
    pub fn starting_at(dim: usize, start: u64) -> Result<Self> {
        if dim == 0 || dim > SOBOL_MAX_DIM {
            return Err(Error::UnsupportedDimension {
                requested: dim,
                max: SOBOL_MAX_DIM,
            });
        }
        let directions: Vec<_> = (0..dim).map(direction_numbers).collect();
        let gray = start ^ (start >> 1);
        let state = directions
            .iter()
            .map(|v| {
                (0..BITS)
                    .filter(|&k| (gray >> k) & 1 == 1)
                    .fold(0u32, |acc, k| acc ^ v[k])
            })
            .collect();
        Ok(Self {
            directions,
            state,
            next_index: start,
        })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let scale = 1.0 / (1u64 << BITS) as f64;
        let point = self.state.iter().map(|&s| s as f64 * scale).collect();
        // Gray-code step: flip the direction number at the lowest zero bit of the index.
        let bit = (!self.next_index).trailing_zeros() as usize;
        if bit < BITS {
            for (s, v) in self.state.iter_mut().zip(&self.directions) {
                *s ^= v[bit];
            }
        }
        self.next_index += 1;
        point
    }
}

impl Iterator for SobolSequence {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        (self.next_index < (1u64 << BITS)).then(|| self.next_point())
    }
}

/// Points `skip .. skip + count` of the `dim`-dimensional Sobol sequence.
pub fn sobol_points(dim: usize, count: usize, skip: u64) -> Result<Vec<SamplePoint>> {
    let seq = SobolSequence::starting_at(dim, skip)?;
    Ok(seq.take(count).map(SamplePoint).collect())
}

/// Maps unit-cube points affinely onto `bounds`.
pub fn scale_to_bounds(points: &[SamplePoint], bounds: &Bounds) -> Result<Vec<SamplePoint>> {
    points
        .iter()
        .map(|p| {
            check_dim(p.dim(), bounds.dim())?;
            Ok(SamplePoint(
                p.coords()
                    .iter()
                    .enumerate()
                    .map(|(i, u)| bounds.lower()[i] + u * bounds.width(i))
                    .collect(),
            ))
        })
        .collect()
}

/// Inverse of [`scale_to_bounds`].
pub fn unscale_from_bounds(points: &[SamplePoint], bounds: &Bounds) -> Result<Vec<SamplePoint>> {
    points
        .iter()
        .map(|p| {
            check_dim(p.dim(), bounds.dim())?;
            Ok(SamplePoint(
                p.coords()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (x - bounds.lower()[i]) / bounds.width(i))
                    .collect(),
            ))
        })
        .collect()
}

fn check_dim(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Which side of a separator a region lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// `w·x + b >= 0`
    Good,
    /// `w·x + b < 0`
    Bad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub side: Side,
}

impl HalfSpace {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.offset
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let m = self.margin(x);
        match self.side {
            Side::Good => m >= 0.0,
            Side::Bad => m < 0.0,
        }
    }
}

/// The root-to-leaf chain of half-space tests that defines a leaf region.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionConstraint {
    pub halfspaces: Vec<HalfSpace>,
}

impl RegionConstraint {
    pub fn new(halfspaces: Vec<HalfSpace>) -> Self {
        Self { halfspaces }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.halfspaces.iter().all(|h| h.contains(x))
    }

    /// An axis-aligned box inside `bounds` that contains the whole region, found
    /// by interval propagation over the half-spaces. `None` if the propagation
    /// proves the region empty.
    pub fn bounding_box(&self, bounds: &Bounds) -> Option<Bounds> {
        let d = bounds.dim();
        let mut lo = bounds.lower().to_vec();
        let mut hi = bounds.upper().to_vec();
        for _ in 0..4 {
            let mut changed = false;
            for h in &self.halfspaces {
                // Oriented so the region satisfies sum_i a_i x_i + c >= 0.
                let sign = if h.side == Side::Good { 1.0 } else { -1.0 };
                let a: Vec<f64> = h.normal.iter().map(|w| sign * w).collect();
                let c = sign * h.offset;
                let terms: Vec<f64> = (0..d).map(|j| (a[j] * lo[j]).max(a[j] * hi[j])).collect();
                let total_max: f64 = terms.iter().sum::<f64>() + c;
                if total_max < 0.0 {
                    return None;
                }
                for i in 0..d {
                    if a[i] == 0.0 {
                        continue;
                    }
                    // a_i x_i >= -(c + sum_{j != i} max a_j x_j)
                    let rest = total_max - terms[i];
                    let bound = -rest / a[i];
                    if a[i] > 0.0 && bound > lo[i] {
                        lo[i] = bound.min(hi[i]);
                        changed = true;
                    } else if a[i] < 0.0 && bound < hi[i] {
                        hi[i] = bound.max(lo[i]);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // Guard against rounding: widen slightly, stay inside the original box.
        let out_lo: Vec<f64> = (0..d)
            .map(|i| (lo[i] - 1e-9 * bounds.width(i)).max(bounds.lower()[i]))
            .collect();
        let out_hi: Vec<f64> = (0..d)
            .map(|i| (hi[i] + 1e-9 * bounds.width(i)).min(bounds.upper()[i]))
            .collect();
        Bounds::new(out_lo, out_hi).ok()
    }
}

/// Uniform rejection sampling of up to `count` points of `bounds` satisfying
/// `constraint`, using at most `attempts_cap` proposals.
///
/// Returns fewer than `count` points (possibly none) when the region is thin.
pub fn sample_in_region(
    constraint: &RegionConstraint,
    bounds: &Bounds,
    count: usize,
    attempts_cap: usize,
    seed: u64,
) -> Vec<SamplePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = Vec::with_capacity(count);
    for _ in 0..attempts_cap {
        if accepted.len() >= count {
            break;
        }
        let x: Vec<f64> = (0..bounds.dim())
            .map(|i| bounds.lower()[i] + rng.gen::<f64>() * bounds.width(i))
            .collect();
        if constraint.contains(&x) && bounds.contains(&x) {
            accepted.push(SamplePoint(x));
        }
    }
    accepted
}
