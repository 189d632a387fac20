//! Baseline agents and the benchmark driver.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{coverage_curve, CoverageCurve, GroundTruthGrid};
use crate::error::{Error, Result};
use crate::problem::{Objective, RecordStore, SamplePoint};
use crate::search::{
    evaluate_into, keep_partial, lambda_run, sobol_design, Algorithm, RunConfig, RunTrace,
    ScoreRule, SearchConfig, TraceMeta,
};

fn baseline_trace(
    algorithm: Algorithm,
    objective: &Objective,
    delta: f64,
    config: &SearchConfig,
    points: Vec<SamplePoint>,
    meta: TraceMeta,
) -> Result<RunTrace> {
    let mut store = RecordStore::new(objective.bounds().clone());
    let outcome = evaluate_into(objective, points, &mut store);
    let trace = RunTrace {
        config: RunConfig {
            algorithm,
            objective: objective.name().to_string(),
            bounds: objective.bounds().clone(),
            delta,
            search: config.clone(),
        },
        seed: config.seed,
        records: store.into_records(),
        events: Vec::new(),
        meta: meta.finish(),
    };
    keep_partial(outcome, trace)
}

/// `config.budget` independent uniform points, seeded by `config.seed`.
pub fn random_search(objective: &Objective, delta: f64, config: &SearchConfig) -> Result<RunTrace> {
    let meta = TraceMeta::start();
    let bounds = objective.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points = (0..config.budget)
        .map(|_| {
            SamplePoint(
                (0..bounds.dim())
                    .map(|i| bounds.lower()[i] + rng.gen::<f64>() * bounds.width(i))
                    .collect(),
            )
        })
        .collect();
    baseline_trace(Algorithm::Random, objective, delta, config, points, meta)
}

/// The first `config.budget` Sobol points, scaled to the bounds. Ignores the seed.
pub fn sobol_search(objective: &Objective, delta: f64, config: &SearchConfig) -> Result<RunTrace> {
    let meta = TraceMeta::start();
    let points = sobol_design(objective.bounds(), config.budget)?;
    baseline_trace(Algorithm::Sobol, objective, delta, config, points, meta)
}

/// Runs one agent with `config` (whose seed and budget are used as given).
pub fn run_algorithm(
    algorithm: Algorithm,
    objective: &Objective,
    delta: f64,
    config: &SearchConfig,
) -> Result<RunTrace> {
    match algorithm {
        Algorithm::Lambda => lambda_run(
            objective,
            delta,
            &SearchConfig {
                score: ScoreRule::UcbRho,
                ..config.clone()
            },
        ),
        Algorithm::LambdaUcb1 => lambda_run(
            objective,
            delta,
            &SearchConfig {
                score: ScoreRule::Ucb1,
                ..config.clone()
            },
        ),
        Algorithm::Random => random_search(objective, delta, config),
        Algorithm::Sobol => sobol_search(objective, delta, config),
    }
}

/// Evaluations at which a curve first reaches `threshold`, interpolating
/// linearly between the bracketing checkpoints. `None` if never reached.
pub fn evaluations_to_threshold(curve: &[(usize, f64)], threshold: f64) -> Option<f64> {
    let hit = curve.iter().position(|&(_, f)| f >= threshold)?;
    if hit == 0 {
        return Some(curve[0].0 as f64);
    }
    let (k0, f0) = curve[hit - 1];
    let (k1, f1) = curve[hit];
    let t = (threshold - f0) / (f1 - f0);
    Some(k0 as f64 + t * (k1 as f64 - k0 as f64))
}

/// Median with unreached runs (`None`) ranked above every finite value.
pub fn median_evaluations(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    m.is_finite().then_some(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub algorithms: Vec<Algorithm>,
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<usize>,
    /// F2 level for the evaluations-to-threshold table.
    pub threshold: f64,
    /// Budget and hyperparameters; the seed is replaced per run.
    pub search: SearchConfig,
}

impl BenchmarkSpec {
    /// Seeds `0..repeats`.
    pub fn default_seeds(repeats: usize) -> Vec<u64> {
        (0..repeats as u64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub curve: CoverageCurve,
    pub evaluations_to_threshold: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAggregate {
    pub evaluations: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmReport {
    pub algorithm: Algorithm,
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<CheckpointAggregate>,
    pub median_evaluations_to_threshold: Option<f64>,
}

impl AlgorithmReport {
    pub fn mean_at(&self, evaluations: usize) -> Option<f64> {
        self.aggregate
            .iter()
            .find(|a| a.evaluations == evaluations)
            .map(|a| a.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub objective: String,
    pub spec: BenchmarkSpec,
    pub algorithms: Vec<AlgorithmReport>,
}

/// Mean, min and max F2 per checkpoint over the runs that scored it.
pub fn aggregate_curves(runs: &[SeedRun], checkpoints: &[usize]) -> Vec<CheckpointAggregate> {
    checkpoints
        .iter()
        .filter_map(|&k| {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.curve.points.iter().find(|p| p.0 == k).map(|p| p.1))
                .collect();
            if vals.is_empty() {
                return None;
            }
            Some(CheckpointAggregate {
                evaluations: k,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                runs: vals.len(),
            })
        })
        .collect()
}

impl BenchmarkReport {
    pub fn algorithm(&self, algorithm: Algorithm) -> Option<&AlgorithmReport> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }

    /// `median evals(baseline) / median evals(candidate)` to the report threshold.
    /// Infinite when only the candidate reaches it, `None` when the candidate never does.
    pub fn speedup(&self, candidate: Algorithm, baseline: Algorithm) -> Option<f64> {
        let c = self.algorithm(candidate)?.median_evaluations_to_threshold?;
        match self.algorithm(baseline)?.median_evaluations_to_threshold {
            Some(b) => Some(b / c),
            None => Some(f64::INFINITY),
        }
    }

    /// One row per `(algorithm, seed, checkpoint)`.
    pub fn write_curves_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["algorithm", "seed", "evaluations", "f2"])?;
        for alg in &self.algorithms {
            for run in &alg.runs {
                for (k, f) in &run.curve.points {
                    w.write_record([
                        alg.algorithm.name().to_string(),
                        run.seed.to_string(),
                        k.to_string(),
                        f.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for alg in &self.algorithms {
            s.push_str(&format!("{}:\n", alg.algorithm));
            for a in &alg.aggregate {
                s.push_str(&format!(
                    "  {:>6} evals  mean F2 {:.4}  [min {:.4}, max {:.4}]\n",
                    a.evaluations, a.mean, a.min, a.max
                ));
            }
            match alg.median_evaluations_to_threshold {
                Some(m) => s.push_str(&format!(
                    "  median evals to F2 >= {}: {m:.1}\n",
                    self.spec.threshold
                )),
                None => s.push_str(&format!(
                    "  median evals to F2 >= {}: not reached\n",
                    self.spec.threshold
                )),
            }
            let failures = alg.runs.iter().filter(|r| r.error.is_some()).count();
            if failures > 0 {
                s.push_str(&format!("  {failures} run(s) failed\n"));
            }
        }
        s
    }
}

/// Scores a finished trace at `checkpoints`.
pub fn score_trace(
    trace: &RunTrace,
    grid: &GroundTruthGrid,
    delta: f64,
    checkpoints: &[usize],
) -> Result<CoverageCurve> {
    let usable: Vec<usize> = checkpoints
        .iter()
        .copied()
        .filter(|&k| k <= trace.len())
        .collect();
    coverage_curve(&trace.store()?, grid, delta, &usable)
}

/// Runs every `(algorithm, seed)` pair, scores it, and aggregates.
///
/// A failing run is recorded in its [`SeedRun::error`] and the benchmark continues.
pub fn run_benchmark(
    objective: &Objective,
    grid: &GroundTruthGrid,
    spec: &BenchmarkSpec,
) -> Result<BenchmarkReport> {
    if spec.seeds.is_empty() || spec.algorithms.is_empty() {
        return Err(Error::Config(
            "benchmark needs at least one algorithm and one seed".into(),
        ));
    }
    let jobs: Vec<(Algorithm, u64)> = spec
        .algorithms
        .iter()
        .flat_map(|&a| spec.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<((Algorithm, u64), SeedRun)> = jobs
        .par_iter()
        .map(|&(alg, seed)| {
            let config = SearchConfig {
                seed,
                ..spec.search.clone()
            };
            let run = run_algorithm(alg, objective, spec.delta, &config)
                .and_then(|t| score_trace(&t, grid, spec.delta, &spec.checkpoints));
            let run = match run {
                Ok(curve) => SeedRun {
                    seed,
                    evaluations_to_threshold: evaluations_to_threshold(
                        &curve.points,
                        spec.threshold,
                    ),
                    curve,
                    error: None,
                },
                Err(e) => SeedRun {
                    seed,
                    curve: CoverageCurve::default(),
                    evaluations_to_threshold: None,
                    error: Some(e.to_string()),
                },
            };
            ((alg, seed), run)
        })
        .collect();

    let mut grouped: BTreeMap<usize, Vec<SeedRun>> = BTreeMap::new();
    for ((alg, _), run) in results {
        let slot = spec.algorithms.iter().position(|a| *a == alg).unwrap();
        grouped.entry(slot).or_default().push(run);
    }
    let algorithms = grouped
        .into_iter()
        .map(|(slot, runs)| {
            let ok: Vec<Option<f64>> = runs
                .iter()
                .filter(|r| r.error.is_none())
                .map(|r| r.evaluations_to_threshold)
                .collect();
            AlgorithmReport {
                algorithm: spec.algorithms[slot],
                aggregate: aggregate_curves(&runs, &spec.checkpoints),
                median_evaluations_to_threshold: median_evaluations(&ok),
                runs,
            }
        })
        .collect();
    Ok(BenchmarkReport {
        objective: objective.name().to_string(),
        spec: spec.clone(),
        algorithms,
    })
}

/// Per-record rows `order,x1..xd,y` for plotting sampling dynamics.
pub fn write_dynamics_csv<W: Write>(trace: &RunTrace, out: W) -> Result<()> {
    let d = trace.config.bounds.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["order".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.push("y".into());
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.order.to_string()];
        row.extend(r.x.coords().iter().map(|v| v.to_string()));
        row.push(r.y.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
