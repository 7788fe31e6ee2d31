//! Repeated seeded trials, summary statistics, ablation sweeps and graph
//! statistics.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ScoreMode, StrategyKind};
use crate::datasets::{split_and_shuffle, Dataset, LabeledSample, TrainStream};
use crate::engine::{run_stream, DatasetOracle, Engine, Evaluation, StreamOutput};
use crate::error::{Error, Result};
use crate::graph::{ClassId, TopoGraph};
use crate::inference::Prediction;

/// Fraction of `test` classified correctly. `Unlabeled` counts as wrong.
pub fn accuracy(engine: &Engine, test: &[LabeledSample]) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let correct = test
        .par_iter()
        .map(|s| {
            engine
                .classify(&s.features)
                .map(|(y, _)| usize::from(y == Prediction::Class(s.label)))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub total_coactivations: u64,
    pub coactivations_per_node: f64,
    pub coactivations_per_sample: f64,
    pub mean_neighbors: f64,
    pub nodes_without_edges: usize,
    pub mean_edge_weight: f64,
}

pub fn graph_stats(graph: &TopoGraph) -> GraphStats {
    let nodes = graph.len();
    if nodes == 0 {
        return GraphStats::default();
    }
    let edges = graph.edges().sorted();
    let total: u64 = edges.iter().map(|e| e.2).sum();
    // Every sample increments exactly one winning count.
    let samples: u64 = graph.nodes().iter().map(|n| n.d).sum();
    let degree_sum: usize = graph
        .nodes()
        .iter()
        .map(|n| graph.neighbors(n.id).map_or(0, <[_]>::len))
        .sum();
    let isolated = graph
        .nodes()
        .iter()
        .filter(|n| graph.neighbors(n.id).map_or(true, <[_]>::is_empty))
        .count();
    let weight_sum: f64 = edges
        .iter()
        .map(|&(i, j, _)| graph.edge_weight(i, j).unwrap_or(0.0))
        .sum();
    GraphStats {
        nodes,
        total_coactivations: total,
        coactivations_per_node: total as f64 / nodes as f64,
        coactivations_per_sample: total as f64 / samples as f64,
        mean_neighbors: degree_sum as f64 / nodes as f64,
        nodes_without_edges: isolated,
        mean_edge_weight: if edges.is_empty() {
            0.0
        } else {
            weight_sum / edges.len() as f64
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub curve: Vec<(u64, f64)>,
    pub queries: u64,
    pub windows: u64,
    pub label_counts: Vec<(ClassId, u64)>,
    pub classes_discovered: usize,
    pub graph: GraphStats,
    /// Wall-clock, so it is kept out of the deterministic outputs.
    #[serde(skip)]
    pub mean_step_ms: f64,
}

/// Stream, hold-out set and fresh engine for one trial.
#[derive(Debug)]
pub struct TrialSetup {
    pub seed: u64,
    pub train: TrainStream,
    pub test: Vec<LabeledSample>,
    pub engine: Engine,
}

/// Trial `trial` uses seed `cfg.seed + trial` for the split and a derived
/// seed for the Random strategy.
pub fn setup_trial(cfg: &RunConfig, data: &Dataset, trial: usize) -> Result<TrialSetup> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let (train, test) = split_and_shuffle(data.pool(), cfg.n_train, cfg.n_test, seed)?;
    let engine = Engine::from_config(cfg, data.dims, seed ^ 0x005e_ed0f_9a11)?;
    Ok(TrialSetup {
        seed,
        train,
        test,
        engine,
    })
}

/// Outcome of a single training stream with the dataset oracle.
#[derive(Debug)]
pub struct TrainRun {
    pub seed: u64,
    pub engine: Engine,
    pub output: StreamOutput,
}

/// Streams the training split of trial `trial` once and evaluates on the
/// hold-out split every `cfg.eval_interval` samples and at the end.
pub fn train_run(
    cfg: &RunConfig,
    data: &Dataset,
    trial: usize,
    keep_trace: bool,
) -> Result<TrainRun> {
    let TrialSetup {
        seed,
        train,
        test,
        mut engine,
    } = setup_trial(cfg, data, trial)?;
    let mut oracle = DatasetOracle::new(train.peek_all());
    let eval = Evaluation {
        test: &test,
        interval: cfg.eval_interval,
    };
    let output = run_stream(&mut engine, train, &mut oracle, Some(eval), keep_trace)?;
    Ok(TrainRun {
        seed,
        engine,
        output,
    })
}

/// Runs one trial: reshuffle and resubsample the pool with the trial seed,
/// stream the training split once, evaluate on the hold-out split.
pub fn run_trial(cfg: &RunConfig, data: &Dataset, trial: usize) -> Result<TrialResult> {
    let TrainRun {
        seed,
        engine,
        output: out,
    } = train_run(cfg, data, trial, false)?;
    let n = engine.t();
    let accuracy = out.curve.last().map_or(0.0, |&(_, a)| a);
    Ok(TrialResult {
        trial,
        seed,
        accuracy,
        curve: out.curve,
        queries: out.queries,
        windows: n / cfg.window as u64,
        label_counts: out.label_counts,
        classes_discovered: engine.graph().classes().len(),
        graph: graph_stats(engine.graph()),
        mean_step_ms: out.mean_step_ms,
    })
}

/// Sample mean and sample standard deviation (`n − 1`); no deviation for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, Some((ss / (n - 1) as f64).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: &'static str,
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

pub const SUMMARY_METRICS: [&str; 10] = [
    "accuracy",
    "queries",
    "classes_discovered",
    "nodes",
    "total_coactivations",
    "coactivations_per_node",
    "coactivations_per_sample",
    "mean_neighbors",
    "nodes_without_edges",
    "mean_edge_weight",
];

pub fn metric_value(t: &TrialResult, metric: &str) -> f64 {
    match metric {
        "accuracy" => t.accuracy,
        "queries" => t.queries as f64,
        "classes_discovered" => t.classes_discovered as f64,
        "nodes" => t.graph.nodes as f64,
        "total_coactivations" => t.graph.total_coactivations as f64,
        "coactivations_per_node" => t.graph.coactivations_per_node,
        "coactivations_per_sample" => t.graph.coactivations_per_sample,
        "mean_neighbors" => t.graph.mean_neighbors,
        "nodes_without_edges" => t.graph.nodes_without_edges as f64,
        "mean_edge_weight" => t.graph.mean_edge_weight,
        other => panic!("unknown metric {other}"),
    }
}

pub fn summarize(trials: &[TrialResult]) -> Vec<SummaryRow> {
    SUMMARY_METRICS
        .iter()
        .map(|&metric| {
            let values: Vec<f64> = trials.iter().map(|t| metric_value(t, metric)).collect();
            let (mean, std) = mean_std(&values);
            SummaryRow {
                metric,
                mean,
                std,
                n: values.len(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("metric,mean,std,n\n");
    for r in rows {
        let std = r.std.map_or_else(|| "n/a".to_string(), |s| s.to_string());
        let _ = writeln!(out, "{},{},{},{}", r.metric, r.mean, std, r.n);
    }
    out
}

pub fn trials_jsonl(trials: &[TrialResult]) -> Result<String> {
    let mut out = String::new();
    for t in trials {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

/// Accuracy curve in long form: `trial,samples,accuracy`.
pub fn curve_csv(trials: &[TrialResult]) -> String {
    let mut out = String::from("trial,samples,accuracy\n");
    for t in trials {
        for (n, a) in &t.curve {
            let _ = writeln!(out, "{},{n},{a}", t.trial);
        }
    }
    out
}

fn timing_csv(trials: &[TrialResult]) -> String {
    let mut out = String::from("trial,mean_step_ms\n");
    for t in trials {
        let _ = writeln!(out, "{},{}", t.trial, t.mean_step_ms);
    }
    out
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SummaryRow>,
}

impl BenchReport {
    /// Writes `summary.csv`, `trials.jsonl`, `curve.csv` and `timing.csv`.
    /// All but the timing file are deterministic for a fixed configuration.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.csv"), summary_csv(&self.summary))?;
        std::fs::write(dir.join("trials.jsonl"), trials_jsonl(&self.trials)?)?;
        std::fs::write(dir.join("curve.csv"), curve_csv(&self.trials))?;
        std::fs::write(dir.join("timing.csv"), timing_csv(&self.trials))?;
        Ok(())
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))
}

/// Runs `cfg.trials` independent trials with seeds `seed + i` and
/// summarizes them. Trials run in parallel; results keep trial order.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let data = Dataset::from_config(cfg)?;
    run_benchmark_on(cfg, &data)
}

pub fn run_benchmark_on(cfg: &RunConfig, data: &Dataset) -> Result<BenchReport> {
    let results: Vec<Result<TrialResult>> = pool(cfg.workers)?.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| run_trial(cfg, data, i))
            .collect()
    });
    let mut trials = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(t) => trials.push(t),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(Error::State(format!(
            "{} of {} trials completed before failure: {e}",
            trials.len(),
            cfg.trials
        )));
    }
    let summary = summarize(&trials);
    Ok(BenchReport { trials, summary })
}

pub const ABLATION_LAYERS: [usize; 4] = [0, 1, 3, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub layers: usize,
    pub score: ScoreMode,
    pub strategy: StrategyKind,
    pub accuracy_mean: f64,
    pub accuracy_std: Option<f64>,
    pub queries_mean: f64,
}

/// Cross product of layer counts, score modes and strategies on one
/// dataset. Memory is included only when the budget is 1.
pub fn ablation_suite(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let data = Dataset::from_config(cfg)?;
    let mut strategies = vec![StrategyKind::Random];
    if cfg.budget == 1 {
        strategies.push(StrategyKind::Memory);
    }
    strategies.push(StrategyKind::Explorer);
    let mut rows = Vec::new();
    for &layers in &ABLATION_LAYERS {
        for score in [ScoreMode::Dw, ScoreMode::Plain] {
            for &strategy in &strategies {
                let run = RunConfig {
                    layers,
                    score,
                    strategy,
                    eval_interval: 0,
                    ..cfg.clone()
                };
                let report = run_benchmark_on(&run, &data)?;
                let acc: Vec<f64> = report.trials.iter().map(|t| t.accuracy).collect();
                let q: Vec<f64> = report.trials.iter().map(|t| t.queries as f64).collect();
                let (accuracy_mean, accuracy_std) = mean_std(&acc);
                rows.push(AblationRow {
                    layers,
                    score,
                    strategy,
                    accuracy_mean,
                    accuracy_std,
                    queries_mean: mean_std(&q).0,
                });
            }
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("layers,score,strategy,accuracy_mean,accuracy_std,queries_mean\n");
    for r in rows {
        let std = r
            .accuracy_std
            .map_or_else(|| "n/a".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.layers, r.score, r.strategy, r.accuracy_mean, std, r.queries_mean
        );
    }
    out
}
