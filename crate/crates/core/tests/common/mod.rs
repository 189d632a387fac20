#![allow(dead_code)]

//! Brute-force oracles shared by the integration tests and the acceptance run.

use std::f64::consts::PI;

use lambda_bbc::coverage::{
    confusion, fit_regressor, ConfusionMatrix, GroundTruthGrid, ThresholdClassifier,
};
use lambda_bbc::density::DensityEstimator;
use lambda_bbc::partition::{
    node_statistics, treeify_with_densities, PartitionParams, PartitionTree,
};
use lambda_bbc::problem::{Bounds, Objective, RecordStore, SamplePoint, SampleRecord};
use lambda_bbc::sampling::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `(index, distance)` of the `k` nearest points by full sort, ties by index.
pub fn brute_knn(points: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, dist(p, q)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Balloon Gaussian KDE summed over every point, no cutoff.
pub fn brute_density(points: &[Vec<f64>], q: &[f64], k: usize, min_bw: f64) -> f64 {
    let d = q.len() as f64;
    let nn = brute_knn(points, q, k);
    let h = nn.last().unwrap().1.max(min_bw);
    let sum: f64 = points
        .iter()
        .map(|p| {
            let r = dist(p, q);
            (-(r * r) / (2.0 * h * h)).exp()
        })
        .sum();
    sum / ((2.0 * PI).powf(d / 2.0) * h.powf(d)) / points.len() as f64
}

/// 100 random datasets (2-D and 5-D, up to 500 points, some duplicates),
/// inserted in random batches; k-NN and density must match the oracles.
pub fn density_oracle(datasets: usize) -> Check {
    let mut r = rng(5);
    let mut queries_checked = 0;
    for ds in 0..datasets {
        let dim = if ds % 2 == 0 { 2 } else { 5 };
        let n = r.gen_range(1..=500);
        let k = r.gen_range(1..=15);
        let interval = r.gen_range(1..=120);
        let min_bw = 1e-6;
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && r.gen_bool(0.05) {
                let j = r.gen_range(0..i);
                points.push(points[j].clone());
            } else {
                // Clustered and spread points mixed.
                let scale = if r.gen_bool(0.3) { 0.01 } else { 1.0 };
                points.push((0..dim).map(|_| r.gen::<f64>() * scale).collect());
            }
        }
        let mut est = DensityEstimator::new(dim, k, interval, min_bw).map_err(|e| e.to_string())?;
        let mut added = 0;
        while added < n {
            let b = r.gen_range(1..=60).min(n - added);
            est.add_points(&points[added..added + b])
                .map_err(|e| e.to_string())?;
            added += b;
            let inserted = &points[..added];
            let mut queries: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..dim).map(|_| r.gen::<f64>() * 1.2 - 0.1).collect())
                .collect();
            queries.push(inserted[r.gen_range(0..added)].clone());
            for q in &queries {
                let kq = r.gen_range(1..=20);
                let got = est.knn(q, kq).map_err(|e| e.to_string())?;
                let want = brute_knn(inserted, q, kq);
                if got.len() != want.len() {
                    return Err(format!(
                        "dataset {ds}: knn length {} vs {}",
                        got.len(),
                        want.len()
                    ));
                }
                for (g, w) in got.iter().zip(&want) {
                    if g.index != w.0 || !rel_close(g.distance, w.1, 1e-9) {
                        return Err(format!(
                            "dataset {ds}: knn {:?} vs {:?}",
                            (g.index, g.distance),
                            w
                        ));
                    }
                }
                let dg = est.density(q).map_err(|e| e.to_string())?;
                let dw = brute_density(inserted, q, k, min_bw);
                if !rel_close(dg, dw, 1e-9) {
                    return Err(format!("dataset {ds}: density {dg} vs {dw}"));
                }
                queries_checked += 1;
            }
        }
    }
    Ok(format!("{datasets} datasets, {queries_checked} queries"))
}

/// KDE of a dense uniform lattice on the unit square, averaged by Monte
/// Carlo over the interior; `n·ρ` must be within 20% of `n/volume`.
pub fn kde_mass_check() -> Check {
    let side = 40;
    let n = side * side;
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            vec![
                (i / side) as f64 / (side - 1) as f64,
                (i % side) as f64 / (side - 1) as f64,
            ]
        })
        .collect();
    let mut est = DensityEstimator::new(2, 10, 256, 1e-6).map_err(|e| e.to_string())?;
    est.add_points(&pts).map_err(|e| e.to_string())?;
    let mut r = rng(9);
    let draws = 20_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let q = [r.gen_range(0.1..0.9), r.gen_range(0.1..0.9)];
        acc += est.density(&q).map_err(|e| e.to_string())?;
    }
    let mean_count = n as f64 * acc / draws as f64;
    let expected = n as f64 / 1.0;
    let msg = format!("interior n*rho {mean_count:.1} vs n/volume {expected:.1}");
    if (mean_count / expected - 1.0).abs() > 0.2 {
        return Err(msg);
    }
    Ok(msg)
}

pub struct RandomTree {
    pub records: Vec<SampleRecord>,
    pub densities: Vec<f64>,
    pub delta: f64,
    pub params: PartitionParams,
    pub tree: PartitionTree,
}

/// A tree over random records whose values mix a random linear trend, a
/// bump and noise, with random densities and build parameters.
pub fn random_tree(seed: u64) -> RandomTree {
    let mut r = rng(seed);
    let dim = r.gen_range(1..=4);
    let n = r.gen_range(1..=300);
    let w: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let centre: Vec<f64> = (0..dim).map(|_| r.gen_range(-5.0..5.0)).collect();
    let records: Vec<SampleRecord> = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..dim)
                .map(|_| {
                    // Some coordinates on a coarse lattice to provoke exact ties.
                    if r.gen_bool(0.2) {
                        r.gen_range(-5..=5) as f64
                    } else {
                        r.gen_range(-5.0..5.0)
                    }
                })
                .collect();
            let lin: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let bump = (-x
                .iter()
                .zip(&centre)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                / 4.0)
                .exp();
            let y = lin + 5.0 * bump + r.gen_range(-0.3..0.3);
            SampleRecord {
                order: i,
                x: SamplePoint(x),
                y,
            }
        })
        .collect();
    let densities: Vec<f64> = (0..n).map(|_| 10f64.powf(r.gen_range(-3.0..1.0))).collect();
    let delta = r.gen_range(-2.0..4.0);
    let params = PartitionParams {
        min_split: r.gen_range(2..=30),
        max_depth: r.gen_range(1..=8),
        min_separator_accuracy: r.gen_range(0.0..0.9),
        ..PartitionParams::default()
    };
    let tree = treeify_with_densities(&records, &densities, delta, &params);
    RandomTree {
        records,
        densities,
        delta,
        params,
        tree,
    }
}

/// Structural invariants of one tree; returns the number of exact boundary
/// ties met.
pub fn check_tree(t: &RandomTree) -> Result<usize, String> {
    let tree = &t.tree;
    let n = t.records.len();
    let mut seen = vec![0usize; n];
    let mut leaf_total = 0;
    for leaf in tree.leaves() {
        leaf_total += leaf.stats.n;
        for &m in &leaf.members {
            seen[m] += 1;
        }
    }
    if leaf_total != n || seen.iter().any(|&c| c != 1) {
        return Err(format!("leaf counts {leaf_total} vs {n}"));
    }
    let mut ties = 0;
    for node in &tree.nodes {
        if node.stats.n != node.members.len() {
            return Err(format!("node {} n mismatch", node.id));
        }
        if node.is_leaf() != node.separator.is_none() {
            return Err(format!("node {} leaf/separator mismatch", node.id));
        }
        let ys: Vec<f64> = node.members.iter().map(|&i| t.records[i].y).collect();
        let rs: Vec<f64> = node.members.iter().map(|&i| t.densities[i]).collect();
        let want = node_statistics(&ys, &rs).stats;
        if want != node.stats {
            return Err(format!(
                "node {} stats {:?} vs {:?}",
                node.id, node.stats, want
            ));
        }
        let harmonic = node.members.len() as f64 / rs.iter().map(|r| 1.0 / r).sum::<f64>();
        if !rel_close(node.stats.rho, harmonic, 1e-12) {
            return Err(format!(
                "node {} rho {} vs harmonic {}",
                node.id, node.stats.rho, harmonic
            ));
        }
        if let (Some([g, b]), Some(sep)) = (node.children, &node.separator) {
            let good = &tree.node(g).members;
            let bad = &tree.node(b).members;
            if good.len() + bad.len() != node.members.len() || good.is_empty() || bad.is_empty() {
                return Err(format!("node {} children do not partition it", node.id));
            }
            for &m in &node.members {
                let x = t.records[m].x.coords();
                let margin = sep.margin(x);
                if margin == 0.0 {
                    ties += 1;
                }
                let expect_good = margin >= 0.0;
                if (sep.side(x) == Side::Good) != expect_good || good.contains(&m) != expect_good {
                    return Err(format!("node {} misroutes record {m}", node.id));
                }
            }
        }
    }
    for (i, rec) in t.records.iter().enumerate() {
        let leaf = tree.route(rec.x.coords());
        if !tree.node(leaf).members.contains(&i) {
            return Err(format!(
                "record {i} routes to leaf {leaf} which does not list it"
            ));
        }
        let path = tree.route_path(rec.x.coords());
        if path.first() != Some(&PartitionTree::ROOT) || path.last() != Some(&leaf) {
            return Err(format!("record {i} path {path:?}"));
        }
    }
    let again = treeify_with_densities(&t.records, &t.densities, t.delta, &t.params);
    if &again != tree {
        return Err("rebuild differs".into());
    }
    Ok(ties)
}

/// Invariants over `count` random trees plus a hand-built exact tie.
pub fn partition_invariants(count: u64) -> Check {
    let mut ties = 0;
    let mut leaves = 0;
    for seed in 0..count {
        let t = random_tree(seed);
        ties += check_tree(&t).map_err(|e| format!("tree {seed}: {e}"))?;
        leaves += t.tree.leaves().count();
    }
    exact_tie_routes_good()?;
    Ok(format!(
        "{count} trees, {leaves} leaves, {ties} exact ties met in data"
    ))
}

/// A two-cluster tree whose separator is replaced by `x1 = 0.5`; a point on
/// that line must route to the good child.
pub fn exact_tie_routes_good() -> Result<(), String> {
    let records: Vec<SampleRecord> = (0..40)
        .map(|i| {
            let x = if i < 20 { 0.0 } else { 1.0 };
            SampleRecord {
                order: i,
                x: SamplePoint(vec![x, (i % 7) as f64]),
                y: if i < 20 { 0.0 } else { 10.0 },
            }
        })
        .collect();
    let params = PartitionParams {
        max_depth: 1,
        ..PartitionParams::default()
    };
    let mut tree = treeify_with_densities(&records, &vec![1.0; 40], 5.0, &params);
    let [good, bad] = tree.root().children.ok_or("two clusters were not split")?;
    let sep = tree.nodes[0].separator.as_mut().unwrap();
    sep.normal = vec![1.0, 0.0];
    sep.offset = -0.5;
    if tree.route(&[0.5, 3.0]) != good || tree.route(&[0.4999, 3.0]) != bad {
        return Err("boundary point did not route to the good side".into());
    }
    Ok(())
}

/// Confusion counts by a per-node double loop that recomputes every lattice
/// coordinate and calls the scalar predictor.
pub fn naive_confusion(
    classifier: &ThresholdClassifier,
    objective: &Objective,
    res: [usize; 2],
    delta: f64,
) -> ConfusionMatrix {
    let b = objective.bounds();
    let coord = |a: usize, i: usize| {
        if i == res[a] - 1 {
            b.upper()[a]
        } else {
            b.lower()[a] + b.width(a) * i as f64 / (res[a] - 1) as f64
        }
    };
    let mut cm = ConfusionMatrix::default();
    for i in 0..res[0] {
        for j in 0..res[1] {
            let x = [coord(0, i), coord(1, j)];
            let truth = objective.evaluate(&x).unwrap() > delta;
            let pred = classifier.predict(&x);
            match (pred, truth) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
    }
    cm
}

fn wavy_objective(seed: u64) -> Objective {
    let mut r = rng(seed);
    let (a, b, c) = (
        r.gen_range(0.5..3.0),
        r.gen_range(0.5..3.0),
        r.gen_range(-1.0..1.0),
    );
    let bounds = Bounds::new(
        vec![r.gen_range(-3.0..0.0), r.gen_range(-3.0..0.0)],
        vec![r.gen_range(0.5..3.0), r.gen_range(0.5..3.0)],
    )
    .unwrap();
    Objective::new("wavy", bounds, move |x: &[f64]| {
        (a * x[0]).sin() + (b * x[1]).cos() + c * x[0] * x[1]
    })
}

/// Random grids up to 128×128 against the naive tally, exact.
pub fn confusion_oracle(cases: u64) -> Check {
    let mut cells = 0;
    for seed in 0..cases {
        let mut r = rng(1000 + seed);
        let objective = wavy_objective(seed);
        let res = [r.gen_range(2..=128), r.gen_range(2..=128)];
        let grid = GroundTruthGrid::from_objective(&objective, &res).map_err(|e| e.to_string())?;
        let mut store = RecordStore::new(objective.bounds().clone());
        let b = objective.bounds().clone();
        for _ in 0..r.gen_range(3..200) {
            let x: Vec<f64> = (0..2)
                .map(|a| r.gen_range(b.lower()[a]..=b.upper()[a]))
                .collect();
            let y = objective.evaluate(&x).unwrap();
            store.push(SamplePoint(x), y).map_err(|e| e.to_string())?;
        }
        let delta = r.gen_range(-1.0..1.0);
        let classifier =
            ThresholdClassifier::new(fit_regressor(&store).map_err(|e| e.to_string())?, delta);
        let got = confusion(&classifier, &grid).map_err(|e| e.to_string())?;
        let want = naive_confusion(&classifier, &objective, res, delta);
        if got != want {
            return Err(format!("case {seed} ({res:?}): {got:?} vs {want:?}"));
        }
        cells += got.total();
    }
    Ok(format!("{cases} grids, {cells} cells"))
}
