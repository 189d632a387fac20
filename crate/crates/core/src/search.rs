//! The partition-tree search loop.
//!
//! After a Sobol initial design, every iteration rebuilds the partition tree,
//! scores each leaf against the root with a density-aware bandit score,
//! samples the best `beam_width` leaves, evaluates the new points and pushes
//! them back into the tree and the density estimator. The loop stops exactly
//! when the evaluation budget is spent.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{DensityConfig, DensityEstimator};
use crate::error::{Error, Result};
use crate::partition::{treeify_with_densities, NodeStats, PartitionParams, PartitionTree};
use crate::problem::{Bounds, Objective, RecordStore, SamplePoint, SampleRecord};
use crate::sampling::{sample_in_region, scale_to_bounds, sobol_points};

/// `mean_B + 2·c_p·sqrt(2·ln n_A / n_B)`.
pub fn ucb1(parent: &NodeStats, child: &NodeStats, cp: f64) -> f64 {
    let n_a = parent.n.max(1) as f64;
    let n_b = child.n.max(1) as f64;
    child.mean + 2.0 * cp * (2.0 * n_a.ln() / n_b).sqrt()
}

/// `v_B + c_p·ln(ρ_A / ρ_B)` with inverse-density weighted `v` and `ρ`.
///
/// Children sampled more sparsely than their parent get a positive bonus.
pub fn ucb_rho(parent: &NodeStats, child: &NodeStats, cp: f64) -> f64 {
    child.value + cp * (parent.rho / child.rho).ln()
}

/// Which bandit score ranks the leaves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreRule {
    #[default]
    UcbRho,
    /// Mean-and-count score; kept to demonstrate sampling bias.
    Ucb1,
}

/// The node each leaf's score compares its density against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeafReference {
    /// The flattened tree: every leaf is scored as a direct child of the root.
    #[default]
    Root,
    /// The leaf's own parent.
    Parent,
}

/// How the exploration factor is chosen each iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exploration {
    Fixed(f64),
    /// This fraction of the observed value range `max y - min y`.
    RangeFraction(f64),
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration::RangeFraction(0.15)
    }
}

impl Exploration {
    pub fn factor(&self, store: &RecordStore) -> f64 {
        match *self {
            Exploration::Fixed(cp) => cp,
            Exploration::RangeFraction(frac) => {
                let (lo, hi) = store
                    .records()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                        (lo.min(r.y), hi.max(r.y))
                    });
                if hi > lo {
                    frac * (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub budget: usize,
    pub init_count: usize,
    pub beam_width: usize,
    pub samples_per_leaf: usize,
    pub exploration: Exploration,
    pub score: ScoreRule,
    pub leaf_reference: LeafReference,
    /// Rebuild the tree every this many iterations.
    pub retreeify_every: usize,
    /// Rejection-sampling proposals per requested in-leaf point.
    pub attempts_per_sample: usize,
    pub seed: u64,
    pub partition: PartitionParams,
    pub density: DensityConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget: 1500,
            init_count: 100,
            beam_width: 3,
            samples_per_leaf: 5,
            exploration: Exploration::default(),
            score: ScoreRule::default(),
            leaf_reference: LeafReference::default(),
            retreeify_every: 1,
            attempts_per_sample: 100,
            seed: 0,
            partition: PartitionParams::default(),
            density: DensityConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.budget == 0 {
            return fail("budget must be positive");
        }
        if self.init_count > self.budget {
            return fail("init_count exceeds budget");
        }
        if self.beam_width == 0 || self.samples_per_leaf == 0 {
            return fail("beam_width and samples_per_leaf must be at least 1");
        }
        if self.retreeify_every == 0 || self.attempts_per_sample == 0 {
            return fail("retreeify_every and attempts_per_sample must be at least 1");
        }
        let (Exploration::Fixed(cp) | Exploration::RangeFraction(cp)) = self.exploration;
        if !(cp >= 0.0 && cp.is_finite()) {
            return fail("exploration factor must be finite and non-negative");
        }
        Ok(())
    }
}

/// The agent that produced a trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Lambda,
    LambdaUcb1,
    Random,
    Sobol,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Lambda => "lambda",
            Algorithm::LambdaUcb1 => "lambda-ucb1",
            Algorithm::Random => "rs",
            Algorithm::Sobol => "sobol",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Algorithm::Lambda),
            "lambda-ucb1" | "ucb1" => Ok(Algorithm::LambdaUcb1),
            "rs" | "random" => Ok(Algorithm::Random),
            "sobol" => Ok(Algorithm::Sobol),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub objective: String,
    pub bounds: Bounds,
    pub delta: f64,
    pub search: SearchConfig,
}

/// Scores and selections of one search iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationEvent {
    pub iteration: usize,
    pub evaluations_before: usize,
    pub tree_nodes: usize,
    pub tree_leaves: usize,
    pub tree_depth: usize,
    pub exploration: f64,
    /// `(leaf id, score)` of the leaves that produced samples, in rank order.
    pub selected: Vec<(usize, f64)>,
    pub new_records: usize,
}

/// Wall-clock metadata, kept apart from the reproducible payload.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub crate_version: String,
}

impl TraceMeta {
    pub fn start() -> Self {
        Self {
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn finish(mut self) -> Self {
        self.finished_unix_ms = now_ms();
        self
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Everything an agent did during one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: RunConfig,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
    #[serde(default)]
    pub events: Vec<IterationEvent>,
    #[serde(default)]
    pub meta: TraceMeta,
}

#[derive(Serialize)]
struct Payload<'a> {
    config: &'a RunConfig,
    seed: u64,
    records: &'a [SampleRecord],
    events: &'a [IterationEvent],
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn store(&self) -> Result<RecordStore> {
        RecordStore::from_records(self.config.bounds.clone(), self.records.clone())
    }

    /// The trace without `meta`, serialized deterministically.
    pub fn payload_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Payload {
            config: &self.config,
            seed: self.seed,
            records: &self.records,
            events: &self.events,
        })?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A leaf and its bandit score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafScore {
    pub leaf: usize,
    pub score: f64,
}

fn score_leaf(
    tree: &PartitionTree,
    leaf: usize,
    cp: f64,
    rule: ScoreRule,
    reference: LeafReference,
) -> f64 {
    let node = tree.node(leaf);
    let parent = match reference {
        LeafReference::Root => &tree.root().stats,
        LeafReference::Parent => node.parent.map_or(&node.stats, |p| &tree.node(p).stats),
    };
    match rule {
        ScoreRule::UcbRho => ucb_rho(parent, &node.stats, cp),
        ScoreRule::Ucb1 => ucb1(parent, &node.stats, cp),
    }
}

/// Every leaf scored against `reference`, best first; equal scores keep the smaller id first.
pub fn rank_leaves(
    tree: &PartitionTree,
    cp: f64,
    rule: ScoreRule,
    reference: LeafReference,
) -> Vec<LeafScore> {
    let mut scored: Vec<LeafScore> = tree
        .leaves()
        .map(|n| LeafScore {
            leaf: n.id,
            score: score_leaf(tree, n.id, cp, rule, reference),
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.leaf.cmp(&b.leaf)));
    scored
}

/// The top `beam_width` leaves by the density-aware score of the flattened tree.
pub fn select_beam(tree: &PartitionTree, cp: f64, beam_width: usize) -> Vec<usize> {
    rank_leaves(tree, cp, ScoreRule::UcbRho, LeafReference::Root)
        .into_iter()
        .take(beam_width)
        .map(|s| s.leaf)
        .collect()
}

/// A freshly evaluated point and the leaf it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluated {
    pub x: SamplePoint,
    pub y: f64,
    pub leaf: usize,
}

/// Draws and evaluates up to `samples_per_leaf` points in each of the first
/// `beam_width` ranked leaves that yield any, never exceeding `remaining`.
///
/// Returns the evaluations and the leaves that contributed.
pub fn simulate_and_evaluate(
    objective: &Objective,
    ranking: &[LeafScore],
    tree: &PartitionTree,
    config: &SearchConfig,
    remaining: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Evaluated>, Vec<LeafScore>)> {
    let bounds = objective.bounds();
    let mut out = Vec::new();
    let mut used = Vec::new();
    for cand in ranking {
        if used.len() >= config.beam_width || out.len() >= remaining {
            break;
        }
        let want = config.samples_per_leaf.min(remaining - out.len());
        let region = tree.region(cand.leaf);
        let seed: u64 = rng.gen();
        let Some(proposal_box) = region.bounding_box(bounds) else {
            continue;
        };
        let points = sample_in_region(
            &region,
            &proposal_box,
            want,
            config.attempts_per_sample * want,
            seed,
        );
        if points.is_empty() {
            continue;
        }
        for x in points {
            let y = objective.evaluate(x.coords())?;
            out.push(Evaluated {
                x,
                y,
                leaf: cand.leaf,
            });
        }
        used.push(*cand);
    }
    Ok((out, used))
}

/// Adds the new records (already appended to `store`) to the estimator and
/// the tree, then refreshes statistics on every affected node.
///
/// `estimator` must hold exactly the records of `store` before the new ones,
/// in the same order.
///
/// Returns the densities of all stored records under the updated estimator,
/// or `None` when there was nothing to add.
pub fn backpropagate(
    tree: &mut PartitionTree,
    new_records: &[SampleRecord],
    estimator: &mut DensityEstimator,
    store: &RecordStore,
) -> Result<Option<Vec<f64>>> {
    if new_records.is_empty() {
        return Ok(None);
    }
    let xs: Vec<&[f64]> = new_records.iter().map(|r| r.x.coords()).collect();
    estimator.add_points(&xs)?;
    let mut affected = Vec::new();
    for r in new_records {
        for id in tree.add_member(r.order, r.x.coords()) {
            if !affected.contains(&id) {
                affected.push(id);
            }
        }
    }
    let densities = estimator.stored_densities()?;
    debug_assert_eq!(densities.len(), store.len());
    let values: Vec<f64> = store.records().iter().map(|r| r.y).collect();
    tree.refresh_statistics(&affected, &values, &densities);
    Ok(Some(densities))
}

/// Evaluates `points` in order, appending them to `store`.
pub(crate) fn evaluate_into(
    objective: &Objective,
    points: Vec<SamplePoint>,
    store: &mut RecordStore,
) -> Result<()> {
    for x in points {
        let order = store.len();
        let y = objective
            .evaluate(x.coords())
            .map_err(|e| Error::Evaluation {
                order,
                source: Box::new(e),
            })?;
        store.push(x, y)?;
    }
    Ok(())
}

/// The first `count` Sobol points scaled to `bounds`.
pub fn sobol_design(bounds: &Bounds, count: usize) -> Result<Vec<SamplePoint>> {
    scale_to_bounds(&sobol_points(bounds.dim(), count, 0)?, bounds)
}

/// Runs the partition-tree search until `config.budget` evaluations are spent.
pub fn lambda_run(objective: &Objective, delta: f64, config: &SearchConfig) -> Result<RunTrace> {
    config.validate()?;
    let meta = TraceMeta::start();
    let bounds = objective.bounds().clone();
    let algorithm = match config.score {
        ScoreRule::UcbRho => Algorithm::Lambda,
        ScoreRule::Ucb1 => Algorithm::LambdaUcb1,
    };
    let run_config = RunConfig {
        algorithm,
        objective: objective.name().to_string(),
        bounds: bounds.clone(),
        delta,
        search: config.clone(),
    };
    let mut store = RecordStore::new(bounds.clone());
    let mut estimator = DensityEstimator::for_bounds(&bounds, &config.density)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut events = Vec::new();

    let outcome = (|| -> Result<()> {
        evaluate_into(
            objective,
            sobol_design(&bounds, config.init_count)?,
            &mut store,
        )?;
        let xs: Vec<&[f64]> = store.records().iter().map(|r| r.x.coords()).collect();
        estimator.add_points(&xs)?;

        let mut densities: Option<Vec<f64>> = None;
        let mut tree: Option<PartitionTree> = None;
        let mut iteration = 0;
        while store.len() < config.budget {
            if tree.is_none() || iteration % config.retreeify_every == 0 {
                let dens = match densities.take() {
                    Some(d) => d,
                    None => estimator.stored_densities()?,
                };
                tree = Some(treeify_with_densities(
                    store.records(),
                    &dens,
                    delta,
                    &config.partition,
                ));
            }
            let current = tree.as_mut().expect("tree was built above");
            let cp = config.exploration.factor(&store);
            let ranking = rank_leaves(current, cp, config.score, config.leaf_reference);
            let remaining = config.budget - store.len();
            let (mut batch, used) =
                simulate_and_evaluate(objective, &ranking, current, config, remaining, &mut rng)
                    .map_err(|e| Error::Evaluation {
                        order: store.len(),
                        source: Box::new(e),
                    })?;
            if batch.is_empty() {
                // Every leaf refused to yield a point; fall back to the whole box.
                let want = config.samples_per_leaf.min(remaining);
                let seed: u64 = rng.gen();
                for x in sample_in_region(&Default::default(), &bounds, want, want, seed) {
                    let y = objective
                        .evaluate(x.coords())
                        .map_err(|e| Error::Evaluation {
                            order: store.len() + batch.len(),
                            source: Box::new(e),
                        })?;
                    batch.push(Evaluated {
                        x,
                        y,
                        leaf: PartitionTree::ROOT,
                    });
                }
            }
            let first_new = store.len();
            for e in &batch {
                store.push(e.x.clone(), e.y)?;
            }
            densities = backpropagate(
                current,
                &store.records()[first_new..],
                &mut estimator,
                &store,
            )?;
            events.push(IterationEvent {
                iteration,
                evaluations_before: first_new,
                tree_nodes: current.nodes.len(),
                tree_leaves: current.leaves().count(),
                tree_depth: current.depth(),
                exploration: cp,
                selected: used.iter().map(|s| (s.leaf, s.score)).collect(),
                new_records: batch.len(),
            });
            iteration += 1;
        }
        Ok(())
    })();

    let trace = RunTrace {
        config: run_config,
        seed: config.seed,
        records: store.into_records(),
        events,
        meta: meta.finish(),
    };
    keep_partial(outcome, trace)
}

/// Attaches the records committed so far to an evaluation failure.
pub(crate) fn keep_partial(outcome: Result<()>, trace: RunTrace) -> Result<RunTrace> {
    match outcome {
        Ok(()) => Ok(trace),
        Err(e @ Error::Evaluation { .. }) => Err(Error::Aborted {
            partial: Box::new(trace),
            source: Box::new(e),
        }),
        Err(e) => Err(e),
    }
}
