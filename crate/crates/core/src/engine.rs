//! The per-sample learning loop.
//!
//! Each sample is complement coded, integrated into the graph (node update
//! or creation plus co-activation counts), scored by message passing around
//! its winner, and offered to the query strategy. A query is answered by an
//! [`Oracle`]; the label lands in the queried sample's node immediately.
//!
//! The loop is split into [`Engine::observe`] and [`Engine::answer`] so that
//! an answer can arrive asynchronously (the human oracle of the session
//! service). [`Engine::process_sample`] runs both with a synchronous oracle.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Hyperparams, RunConfig, ScoreMode, StrategyKind};
use crate::datasets::LabeledSample;
use crate::error::{Error, Result};
use crate::graph::{ClassId, FeatureVector, NodeId, TopoGraph};
use crate::harness::accuracy;
pub use crate::inference::InferenceRecord;
use crate::inference::{infer, Prediction};
use crate::strategies::{Candidate, QueryAction, QuerySelector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "label")]
pub enum OracleAnswer {
    Label(ClassId),
    Skip,
}

/// A query waiting for its answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    /// Stream position at which the query was raised.
    pub t: u64,
    pub sample: u64,
    /// Node that receives the label.
    pub node: NodeId,
    pub features: Vec<f64>,
}

pub trait Oracle {
    fn answer(&mut self, query: &PendingQuery) -> Result<OracleAnswer>;
}

/// Answers from known dataset labels.
#[derive(Clone, Debug, Default)]
pub struct DatasetOracle {
    labels: HashMap<u64, ClassId>,
}

impl DatasetOracle {
    pub fn new<'a>(samples: impl IntoIterator<Item = &'a LabeledSample>) -> Self {
        DatasetOracle {
            labels: samples.into_iter().map(|s| (s.id, s.label)).collect(),
        }
    }
}

impl Oracle for DatasetOracle {
    fn answer(&mut self, query: &PendingQuery) -> Result<OracleAnswer> {
        self.labels
            .get(&query.sample)
            .map(|&c| OracleAnswer::Label(c))
            .ok_or_else(|| Error::Oracle {
                sample: query.sample,
                reason: "no label for sample".into(),
            })
    }
}

/// Outcome of one stream step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based stream position.
    pub t: u64,
    pub sample: u64,
    /// True label, when the caller knows it.
    pub label: Option<ClassId>,
    /// Whether the winner was created by this sample.
    pub created: bool,
    #[serde(flatten)]
    pub inference: InferenceRecord,
    pub queried: bool,
    /// Sample the query was raised for; differs from `sample` for Memory.
    pub query_sample: Option<u64>,
    /// Oracle answer, when it arrived within the same step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<OracleAnswer>,
    pub window_rolled: bool,
}

#[derive(Clone, Debug)]
pub struct Engine {
    params: Hyperparams,
    score: ScoreMode,
    graph: TopoGraph,
    selector: QuerySelector,
    t: u64,
    pending: Option<PendingQuery>,
    queries: u64,
    skipped: u64,
}

impl Engine {
    pub fn new(
        dim: usize,
        params: Hyperparams,
        strategy: StrategyKind,
        budget: usize,
        window: usize,
        score: ScoreMode,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::config("dims", "must be at least 1"));
        }
        Ok(Engine {
            params,
            score,
            graph: TopoGraph::new(dim),
            selector: QuerySelector::new(strategy, budget, window, seed)?,
            t: 0,
            pending: None,
            queries: 0,
            skipped: 0,
        })
    }

    /// Engine for a run configuration; `seed` drives the Random strategy.
    pub fn from_config(cfg: &RunConfig, dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Engine::new(
            dim,
            cfg.hyperparams(),
            cfg.strategy,
            cfg.budget,
            cfg.window,
            cfg.score,
            seed,
        )
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn graph(&self) -> &TopoGraph {
        &self.graph
    }

    pub fn selector(&self) -> &QuerySelector {
        &self.selector
    }

    /// Samples processed so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn pending(&self) -> Option<&PendingQuery> {
        self.pending.as_ref()
    }

    /// Queries raised so far, answered or skipped.
    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Integrates one sample and runs the query decision. When a query
    /// fires it is left pending until [`Engine::answer`] is called; no
    /// further sample is accepted meanwhile.
    pub fn observe(
        &mut self,
        sample: u64,
        r: &FeatureVector,
        label: Option<ClassId>,
    ) -> Result<StepRecord> {
        if let Some(p) = &self.pending {
            return Err(Error::State(format!(
                "query pending for sample {}",
                p.sample
            )));
        }
        let input = self.graph.code(r)?;
        let learned = self.graph.learn_step(&input, &self.params)?;
        let inference = infer(&self.graph, learned.winner, &self.params)?;
        let score = match self.score {
            ScoreMode::Dw => inference.s_t,
            ScoreMode::Plain => inference.u_t,
        };
        let candidate = Candidate {
            sample,
            node: learned.winner,
            features: r.as_slice().to_vec(),
        };
        let decision = self.selector.observe(score, candidate);
        let t = self.t;
        self.t += 1;

        let query_sample = match (decision.action, decision.target) {
            (QueryAction::QueryNow, Some(target)) => {
                self.queries += 1;
                let s = target.sample;
                self.pending = Some(PendingQuery {
                    t,
                    sample: target.sample,
                    node: target.node,
                    features: target.features,
                });
                Some(s)
            }
            _ => None,
        };
        Ok(StepRecord {
            t,
            sample,
            label,
            created: learned.created,
            inference,
            queried: query_sample.is_some(),
            query_sample,
            answer: None,
            window_rolled: decision.window_rolled,
        })
    }

    /// Resolves the pending query. A label increments the density of the
    /// queried node (adding the class if new); a skip leaves the graph
    /// unchanged. The budget slot is spent either way.
    pub fn answer(&mut self, sample: u64, answer: OracleAnswer) -> Result<()> {
        match &self.pending {
            None => return Err(Error::State("no query pending".into())),
            Some(p) if p.sample != sample => {
                return Err(Error::State(format!(
                    "pending query is for sample {}, not {sample}",
                    p.sample
                )))
            }
            Some(_) => {}
        }
        let pending = self.pending.take().expect("checked above");
        match answer {
            OracleAnswer::Label(class) => self.graph.add_label(pending.node, class)?,
            OracleAnswer::Skip => self.skipped += 1,
        }
        Ok(())
    }

    /// [`Engine::observe`] followed by an immediate oracle answer.
    pub fn process_sample(
        &mut self,
        sample: u64,
        r: &FeatureVector,
        label: Option<ClassId>,
        oracle: &mut dyn Oracle,
    ) -> Result<StepRecord> {
        let mut record = self.observe(sample, r, label)?;
        if let Some(query) = self.pending.clone() {
            let answer = oracle.answer(&query)?;
            self.answer(query.sample, answer)?;
            record.answer = Some(answer);
        }
        Ok(record)
    }

    /// Evaluation-time prediction. The winner is the node with the highest
    /// choice value regardless of vigilance; nothing is modified.
    pub fn classify(&self, r: &FeatureVector) -> Result<(Prediction, Vec<f64>)> {
        let input = self.graph.code(r)?;
        match self.graph.best_choice(&input, self.params.alpha) {
            None => Ok((Prediction::Unlabeled, Vec::new())),
            Some(winner) => {
                let rec = infer(&self.graph, winner, &self.params)?;
                Ok((rec.y_hat, rec.p))
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct StreamOutput {
    /// Per-sample records, when requested.
    pub trace: Vec<StepRecord>,
    /// `(samples seen, hold-out accuracy)` points.
    pub curve: Vec<(u64, f64)>,
    pub queries: u64,
    /// Labels received per class.
    pub label_counts: Vec<(ClassId, u64)>,
    /// Mean wall time of `process_sample`, in milliseconds.
    pub mean_step_ms: f64,
}

/// Evaluation attached to a stream run.
#[derive(Clone, Copy, Debug)]
pub struct Evaluation<'a> {
    pub test: &'a [LabeledSample],
    /// Evaluate every `interval` samples; 0 evaluates only at the end.
    pub interval: usize,
}

/// Feeds every sample through the engine once, in order.
pub fn run_stream(
    engine: &mut Engine,
    stream: impl IntoIterator<Item = LabeledSample>,
    oracle: &mut dyn Oracle,
    eval: Option<Evaluation<'_>>,
    keep_trace: bool,
) -> Result<StreamOutput> {
    let mut out = StreamOutput::default();
    let mut label_counts: Vec<(ClassId, u64)> = Vec::new();
    let mut elapsed = 0.0;
    let mut steps = 0u64;
    for sample in stream {
        let start = Instant::now();
        let record =
            engine.process_sample(sample.id, &sample.features, Some(sample.label), oracle)?;
        elapsed += start.elapsed().as_secs_f64();
        steps += 1;
        if let Some(OracleAnswer::Label(class)) = record.answer {
            match label_counts.iter_mut().find(|(c, _)| *c == class) {
                Some((_, n)) => *n += 1,
                None => label_counts.push((class, 1)),
            }
        }
        if keep_trace {
            out.trace.push(record);
        }
        if let Some(ev) = eval {
            if ev.interval > 0 && engine.t().is_multiple_of(ev.interval as u64) {
                out.curve.push((engine.t(), accuracy(engine, ev.test)?));
            }
        }
    }
    if let Some(ev) = eval {
        if out.curve.last().is_none_or(|&(t, _)| t != engine.t()) {
            out.curve.push((engine.t(), accuracy(engine, ev.test)?));
        }
    }
    label_counts.sort();
    out.label_counts = label_counts;
    out.queries = engine.queries();
    out.mean_step_ms = if steps > 0 {
        elapsed * 1e3 / steps as f64
    } else {
        0.0
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn sample(id: u64, v: &[f64], label: u32) -> LabeledSample {
        LabeledSample {
            id,
            features: fv(v),
            label: ClassId(label),
        }
    }

    fn engine(strategy: StrategyKind, budget: usize, window: usize) -> Engine {
        Engine::new(
            2,
            Hyperparams::default(),
            strategy,
            budget,
            window,
            ScoreMode::Dw,
            1,
        )
        .unwrap()
    }

    #[test]
    fn first_sample_creates_an_unlabelled_node() {
        let mut e = engine(StrategyKind::Explorer, 1, 10);
        let rec = e.observe(0, &fv(&[0.2, 0.3]), None).unwrap();
        assert!(rec.created);
        assert_eq!(rec.inference.winner, Some(0));
        assert_eq!(rec.inference.y_hat, Prediction::Unlabeled);
        assert!(e.graph().classes().is_empty());
        assert_eq!(e.t(), 1);
    }

    #[test]
    fn repeated_point_with_full_budget() {
        let mut e = engine(StrategyKind::Random, 1, 1);
        let data = [sample(0, &[0.4, 0.6], 3), sample(1, &[0.4, 0.6], 3)];
        let mut oracle = DatasetOracle::new(&data);
        for s in &data {
            let rec = e
                .process_sample(s.id, &s.features, Some(s.label), &mut oracle)
                .unwrap();
            assert!(rec.queried);
        }
        let g = e.graph();
        assert_eq!(g.len(), 1);
        assert_eq!(g.node(0).unwrap().d, 2);
        assert_eq!(g.node(0).unwrap().q, vec![2]);
    }

    #[test]
    fn new_class_extends_every_density() {
        let mut e = engine(StrategyKind::Random, 1, 1);
        let data = [
            sample(0, &[0.1, 0.1], 0),
            sample(1, &[0.9, 0.9], 0),
            sample(2, &[0.5, 0.1], 5),
        ];
        let mut oracle = DatasetOracle::new(&data);
        for s in &data[..2] {
            e.process_sample(s.id, &s.features, None, &mut oracle)
                .unwrap();
        }
        assert_eq!(e.graph().classes(), &[ClassId(0)]);
        let before = e.graph().snapshot();
        e.process_sample(2, &data[2].features, None, &mut oracle)
            .unwrap();
        let after = e.graph().snapshot();
        assert_eq!(after.classes, vec![ClassId(0), ClassId(5)]);
        for (b, a) in before.nodes.iter().zip(&after.nodes) {
            assert_eq!(a.q[..1], b.q[..]);
            assert_eq!(a.q[1], 0);
        }
        assert_eq!(after.nodes[2].q, vec![0, 1]);
    }

    #[test]
    fn pending_query_blocks_the_stream() {
        let mut e = engine(StrategyKind::Random, 1, 1);
        let rec = e.observe(7, &fv(&[0.5, 0.5]), None).unwrap();
        assert!(rec.queried);
        assert_eq!(e.pending().unwrap().sample, 7);
        assert!(e.observe(8, &fv(&[0.5, 0.5]), None).is_err());
        assert!(e.answer(8, OracleAnswer::Skip).is_err());
        let hash = e.graph().state_hash();
        e.answer(7, OracleAnswer::Skip).unwrap();
        assert_eq!(e.graph().state_hash(), hash);
        assert_eq!(e.skipped(), 1);
        assert!(e.answer(7, OracleAnswer::Skip).is_err());
        e.observe(8, &fv(&[0.5, 0.5]), None).unwrap();
    }

    #[test]
    fn classify_is_pure() {
        let mut e = engine(StrategyKind::Random, 1, 1);
        assert_eq!(
            e.classify(&fv(&[0.5, 0.5])).unwrap().0,
            Prediction::Unlabeled
        );
        let data = [sample(0, &[0.1, 0.1], 0), sample(1, &[0.9, 0.9], 1)];
        let mut oracle = DatasetOracle::new(&data);
        for s in &data {
            e.process_sample(s.id, &s.features, None, &mut oracle)
                .unwrap();
        }
        let hash = e.graph().state_hash();
        let a = e.classify(&fv(&[0.1, 0.1])).unwrap();
        let b = e.classify(&fv(&[0.1, 0.1])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0, Prediction::Class(ClassId(0)));
        assert_eq!(
            e.classify(&fv(&[0.9, 0.9])).unwrap().0,
            Prediction::Class(ClassId(1))
        );
        assert_eq!(e.graph().state_hash(), hash);
    }

    #[test]
    fn run_stream_counts_and_trace() {
        let data: Vec<_> = (0..100)
            .map(|i| sample(i, &[(i % 10) as f64 / 10.0, 0.5], (i % 2) as u32))
            .collect();
        let mut e = engine(StrategyKind::Random, 2, 10);
        let mut oracle = DatasetOracle::new(&data);
        let test = data[..20].to_vec();
        let out = run_stream(
            &mut e,
            data.clone(),
            &mut oracle,
            Some(Evaluation {
                test: &test,
                interval: 25,
            }),
            true,
        )
        .unwrap();
        assert_eq!(out.trace.len() as u64, e.t());
        assert_eq!(out.queries, 20);
        assert_eq!(e.graph().label_total(), 20);
        assert_eq!(out.label_counts.iter().map(|(_, n)| n).sum::<u64>(), 20);
        assert_eq!(
            out.curve.iter().map(|(t, _)| *t).collect::<Vec<_>>(),
            vec![25, 50, 75, 100]
        );

        let mut e = engine(StrategyKind::Random, 2, 10);
        let out = run_stream(&mut e, Vec::new(), &mut oracle, None, true).unwrap();
        assert!(out.trace.is_empty());
        assert!(e.graph().is_empty());
    }

    #[test]
    fn dataset_oracle_failure_is_fatal() {
        let mut e = engine(StrategyKind::Random, 1, 1);
        let mut oracle = DatasetOracle::default();
        assert!(matches!(
            e.process_sample(3, &fv(&[0.5, 0.5]), None, &mut oracle),
            Err(Error::Oracle { sample: 3, .. })
        ));
    }
}
