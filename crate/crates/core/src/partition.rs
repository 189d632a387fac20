//! Recursive binary partitioning of the search space by learned linear separators.
//!
//! Each internal node splits its records with a hyperplane `w·x + b = 0` into a
//! good side (`w·x + b >= 0`) and a bad side. Node statistics use
//! inverse-density weights `w(x) = (1/ρ(x)) / Σ 1/ρ`, which undo the
//! over-representation of regions the search has already sampled heavily.

use serde::{Deserialize, Serialize};

use crate::density::DensityEstimator;
use crate::error::Result;
use crate::problem::{RecordStore, SampleRecord};
use crate::sampling::{HalfSpace, RegionConstraint, Side};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    /// Nodes with fewer records stay leaves.
    pub min_split: usize,
    pub max_depth: usize,
    /// Separators whose weighted training accuracy falls below this are rejected.
    pub min_separator_accuracy: f64,
    /// Ridge penalty on standardized separator coefficients.
    pub ridge: f64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            min_split: 20,
            max_depth: 10,
            min_separator_accuracy: 0.5,
            ridge: 1e-6,
        }
    }
}

/// A hyperplane `normal·x + offset = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separator {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Separator {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.offset
    }

    /// Boundary points go to the good side.
    pub fn side(&self, x: &[f64]) -> Side {
        if self.margin(x) >= 0.0 {
            Side::Good
        } else {
            Side::Bad
        }
    }

    pub fn halfspace(&self, side: Side) -> HalfSpace {
        HalfSpace {
            normal: self.normal.clone(),
            offset: self.offset,
            side,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparatorFit {
    pub separator: Separator,
    /// Weighted training accuracy in `[0, 1]`.
    pub accuracy: f64,
}

/// Per-node summary used by the bandit scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    /// Number of member records.
    pub n: usize,
    /// Inverse-density weighted mean of the member values.
    pub value: f64,
    /// Plain mean of the member values.
    pub mean: f64,
    /// Inverse-density weighted mean of the member densities.
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeStatistics {
    pub stats: NodeStats,
    pub weights: Vec<f64>,
}

/// Inverse-density weights and the weighted value and density of one node.
///
/// `values` and `densities` are the member records' objective values and
/// sampling densities; densities must be strictly positive.
pub fn node_statistics(values: &[f64], densities: &[f64]) -> NodeStatistics {
    assert_eq!(values.len(), densities.len());
    let n = values.len();
    if n == 0 {
        return NodeStatistics {
            stats: NodeStats::default(),
            weights: Vec::new(),
        };
    }
    let inv_total: f64 = densities.iter().map(|r| 1.0 / r).sum();
    let weights: Vec<f64> = densities.iter().map(|r| (1.0 / r) / inv_total).collect();
    let value = values.iter().zip(&weights).map(|(y, w)| y * w).sum();
    let rho = densities.iter().zip(&weights).map(|(r, w)| r * w).sum();
    let mean = values.iter().sum::<f64>() / n as f64;
    NodeStatistics {
        stats: NodeStats {
            n,
            value,
            mean,
            rho,
        },
        weights,
    }
}

/// Smallest value whose cumulative weight reaches half the total.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= 0.5 * total {
            return values[i];
        }
    }
    values[*idx.last().expect("non-empty input")]
}

/// Good/bad labels for splitting a node: `y > delta` when both outcomes are
/// present, otherwise `y >= weighted median`.
pub fn label_records(values: &[f64], delta: f64, weights: &[f64]) -> Vec<bool> {
    let above = values.iter().filter(|&&y| y > delta).count();
    if above > 0 && above < values.len() {
        values.iter().map(|&y| y > delta).collect()
    } else {
        let median = weighted_median(values, weights);
        values.iter().map(|&y| y >= median).collect()
    }
}

/// Weighted ridge least squares on ±1 targets, with the two classes
/// re-weighted to equal total mass.
///
/// Returns `None` when the points carry no spread or only one label occurs.
pub fn fit_separator(
    points: &[&[f64]],
    labels: &[bool],
    weights: &[f64],
    ridge: f64,
) -> Option<SeparatorFit> {
    let n = points.len();
    assert!(n == labels.len() && n == weights.len());
    let d = points.first()?.len();
    let good_mass: f64 = weights
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(w, _)| w)
        .sum();
    let bad_mass: f64 = weights
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(w, _)| w)
        .sum();
    if good_mass <= 0.0 || bad_mass <= 0.0 {
        return None;
    }
    let omega: Vec<f64> = weights
        .iter()
        .zip(labels)
        .map(|(w, &l)| {
            if l {
                0.5 * w / good_mass
            } else {
                0.5 * w / bad_mass
            }
        })
        .collect();
    let target = |l: bool| if l { 1.0 } else { -1.0 };

    let mut mean = vec![0.0; d];
    for (p, w) in points.iter().zip(&omega) {
        for a in 0..d {
            mean[a] += w * p[a];
        }
    }
    let mut scale = vec![0.0; d];
    for (p, w) in points.iter().zip(&omega) {
        for a in 0..d {
            scale[a] += w * (p[a] - mean[a]).powi(2);
        }
    }
    let magnitude = mean.iter().map(|m| m.abs()).fold(1.0, f64::max);
    let active: Vec<usize> = (0..d)
        .filter(|&a| scale[a].sqrt() > 1e-12 * magnitude)
        .collect();
    if active.is_empty() {
        return None;
    }
    let m = active.len();
    let std: Vec<f64> = active.iter().map(|&a| scale[a].sqrt()).collect();
    let z = |p: &[f64], k: usize| (p[active[k]] - mean[active[k]]) / std[k];

    let mut gram = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for ((p, w), &l) in points.iter().zip(&omega).zip(labels) {
        let zs: Vec<f64> = (0..m).map(|k| z(p, k)).collect();
        for r in 0..m {
            rhs[r] += w * zs[r] * target(l);
            for c in 0..m {
                gram[r][c] += w * zs[r] * zs[c];
            }
        }
    }
    for (r, row) in gram.iter_mut().enumerate() {
        row[r] += ridge;
    }
    let beta = solve(gram, rhs)?;
    let intercept: f64 = omega.iter().zip(labels).map(|(w, &l)| w * target(l)).sum();

    let mut normal = vec![0.0; d];
    let mut offset = intercept;
    for k in 0..m {
        normal[active[k]] = beta[k] / std[k];
        offset -= beta[k] * mean[active[k]] / std[k];
    }
    if normal.iter().all(|w| *w == 0.0) || normal.iter().any(|w| !w.is_finite()) {
        return None;
    }
    let separator = Separator { normal, offset };
    let accuracy = points
        .iter()
        .zip(&omega)
        .zip(labels)
        .filter(|((p, _), &l)| (separator.side(p) == Side::Good) == l)
        .map(|((_, w), _)| w)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Some(SeparatorFit {
        separator,
        accuracy,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// `[good, bad]` children, present iff the node is internal.
    pub children: Option<[usize; 2]>,
    pub separator: Option<Separator>,
    /// Indices into the record store.
    pub members: Vec<usize>,
    pub stats: NodeStats,
}

impl PartitionNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub nodes: Vec<PartitionNode>,
    pub params: PartitionParams,
}

impl PartitionTree {
    pub const ROOT: usize = 0;

    pub fn root(&self) -> &PartitionNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: usize) -> &PartitionNode {
        &self.nodes[id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &PartitionNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Node ids from the root down to the leaf containing `x`.
    pub fn route_path(&self, x: &[f64]) -> Vec<usize> {
        let mut path = vec![Self::ROOT];
        let mut id = Self::ROOT;
        while let (Some([good, bad]), Some(sep)) =
            (self.nodes[id].children, self.nodes[id].separator.as_ref())
        {
            id = match sep.side(x) {
                Side::Good => good,
                Side::Bad => bad,
            };
            path.push(id);
        }
        path
    }

    /// The leaf whose region contains `x`.
    pub fn route(&self, x: &[f64]) -> usize {
        *self.route_path(x).last().unwrap()
    }

    /// Half-space tests that define the region of node `id`.
    pub fn region(&self, id: usize) -> RegionConstraint {
        let mut halfspaces = Vec::new();
        let mut child = id;
        while let Some(parent) = self.nodes[child].parent {
            let p = &self.nodes[parent];
            let [good, _] = p.children.expect("parent is internal");
            let side = if good == child { Side::Good } else { Side::Bad };
            halfspaces.push(
                p.separator
                    .as_ref()
                    .expect("parent is internal")
                    .halfspace(side),
            );
            child = parent;
        }
        halfspaces.reverse();
        RegionConstraint::new(halfspaces)
    }

    /// Appends a record to every node on its root-to-leaf path and returns that path.
    pub fn add_member(&mut self, record_index: usize, x: &[f64]) -> Vec<usize> {
        let path = self.route_path(x);
        for &id in &path {
            self.nodes[id].members.push(record_index);
        }
        path
    }

    /// Recomputes the statistics of the given nodes from per-record values and densities.
    pub fn refresh_statistics(&mut self, ids: &[usize], values: &[f64], densities: &[f64]) {
        for &id in ids {
            let node = &mut self.nodes[id];
            let ys: Vec<f64> = node.members.iter().map(|&i| values[i]).collect();
            let rs: Vec<f64> = node.members.iter().map(|&i| densities[i]).collect();
            node.stats = node_statistics(&ys, &rs).stats;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Builds a partition tree, estimating each record's density with `estimator`.
pub fn treeify(
    store: &RecordStore,
    estimator: &DensityEstimator,
    delta: f64,
    params: &PartitionParams,
) -> Result<PartitionTree> {
    let densities = estimator.densities(
        &store
            .records()
            .iter()
            .map(|r| r.x.coords())
            .collect::<Vec<_>>(),
    )?;
    Ok(treeify_with_densities(
        store.records(),
        &densities,
        delta,
        params,
    ))
}

/// Builds a partition tree from records and their precomputed densities.
pub fn treeify_with_densities(
    records: &[SampleRecord],
    densities: &[f64],
    delta: f64,
    params: &PartitionParams,
) -> PartitionTree {
    assert_eq!(records.len(), densities.len());
    let values: Vec<f64> = records.iter().map(|r| r.y).collect();
    let mut tree = PartitionTree {
        nodes: vec![PartitionNode {
            id: PartitionTree::ROOT,
            parent: None,
            depth: 0,
            children: None,
            separator: None,
            members: (0..records.len()).collect(),
            stats: NodeStats::default(),
        }],
        params: params.clone(),
    };
    let mut stack = vec![PartitionTree::ROOT];
    while let Some(id) = stack.pop() {
        let members = tree.nodes[id].members.clone();
        let ys: Vec<f64> = members.iter().map(|&i| values[i]).collect();
        let rs: Vec<f64> = members.iter().map(|&i| densities[i]).collect();
        let stats = node_statistics(&ys, &rs);
        tree.nodes[id].stats = stats.stats;

        if members.len() < params.min_split || tree.nodes[id].depth >= params.max_depth {
            continue;
        }
        let labels = label_records(&ys, delta, &stats.weights);
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let points: Vec<&[f64]> = members.iter().map(|&i| records[i].x.coords()).collect();
        let Some(fit) = fit_separator(&points, &labels, &stats.weights, params.ridge) else {
            continue;
        };
        if fit.accuracy < params.min_separator_accuracy {
            continue;
        }
        let (good, bad): (Vec<usize>, Vec<usize>) = members
            .iter()
            .partition(|&&i| fit.separator.side(records[i].x.coords()) == Side::Good);
        if good.is_empty() || bad.is_empty() {
            continue;
        }
        let depth = tree.nodes[id].depth + 1;
        let good_id = tree.nodes.len();
        let bad_id = good_id + 1;
        for (child, members) in [(good_id, good), (bad_id, bad)] {
            tree.nodes.push(PartitionNode {
                id: child,
                parent: Some(id),
                depth,
                children: None,
                separator: None,
                members,
                stats: NodeStats::default(),
            });
        }
        tree.nodes[id].children = Some([good_id, bad_id]);
        tree.nodes[id].separator = Some(fit.separator);
        // Bad child first onto the stack so the good subtree is numbered first.
        stack.push(bad_id);
        stack.push(good_id);
    }
    tree
}
