//! Session state machine, independent of the transport.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use mpart_core::config::OracleMode;
use mpart_core::datasets::{Dataset, LabeledSample};
use mpart_core::engine::{DatasetOracle, Oracle, OracleAnswer, PendingQuery};
use mpart_core::harness::{accuracy, setup_trial, TrialSetup};
use mpart_core::inference::infer;
use mpart_core::{Engine, RunConfig};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::error::ApiError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SampleProcessed,
    QueryRequested,
    LabelAccepted,
    QuerySkipped,
    WindowRolled,
    EvalPoint,
    EndOfStream,
}

#[derive(Clone, Debug, Serialize)]
pub struct Event {
    pub v: u32,
    pub seq: u64,
    pub kind: EventKind,
    pub data: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct PendingView {
    #[serde(flatten)]
    pub query: PendingQuery,
    /// Milliseconds left before the query counts as skipped.
    pub deadline_ms: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepOutcome {
    pub v: u32,
    pub processed: usize,
    pub t: u64,
    pub pending: Option<PendingView>,
    pub end_of_stream: bool,
}

pub struct Session {
    pub id: String,
    cfg: RunConfig,
    engine: Engine,
    stream: Vec<LabeledSample>,
    cursor: usize,
    test: Vec<LabeledSample>,
    oracle: DatasetOracle,
    deadline: Option<Instant>,
    eval_due: bool,
    ended: bool,
    rate: f64,
    events: Vec<Event>,
    curve: Vec<(u64, f64)>,
    class_names: BTreeMap<u32, String>,
    notify: watch::Sender<usize>,
}

impl Session {
    pub fn new(id: String, cfg: RunConfig, trial: usize) -> Result<Self, ApiError> {
        cfg.validate()?;
        let data = Dataset::from_config(&cfg)?;
        let TrialSetup {
            train,
            test,
            engine,
            ..
        } = setup_trial(&cfg, &data, trial)?;
        let stream: Vec<LabeledSample> = train.collect();
        let oracle = DatasetOracle::new(&stream);
        Ok(Session {
            id,
            cfg,
            engine,
            stream,
            cursor: 0,
            test,
            oracle,
            deadline: None,
            eval_due: false,
            ended: false,
            rate: 0.0,
            events: Vec::new(),
            curve: Vec::new(),
            class_names: BTreeMap::new(),
            notify: watch::channel(0).0,
        })
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.notify.subscribe()
    }

    pub fn events_since(&self, seq: u64) -> &[Event] {
        let start = (seq as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn set_rate(&mut self, rate: f64) -> Result<(), ApiError> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(ApiError::invalid("rate", "must be a finite number >= 0"));
        }
        self.rate = rate;
        Ok(())
    }

    pub fn has_pending(&self) -> bool {
        self.engine.pending().is_some()
    }

    pub fn ended(&self) -> bool {
        self.ended
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn emit(&mut self, kind: EventKind, data: Value) {
        let seq = self.events.len() as u64;
        self.events.push(Event {
            v: 1,
            seq,
            kind,
            data,
        });
        self.notify.send_replace(self.events.len());
    }

    fn pending_view(&self, now: Instant) -> Option<PendingView> {
        self.engine.pending().map(|q| PendingView {
            query: q.clone(),
            deadline_ms: self
                .deadline
                .map_or(0, |d| d.saturating_duration_since(now).as_millis() as u64),
        })
    }

    /// Applies an expired human-oracle deadline as a skip.
    pub fn expire(&mut self, now: Instant) -> Result<(), ApiError> {
        match (self.deadline, self.engine.pending()) {
            (Some(d), Some(q)) if now >= d => {
                let sample = q.sample;
                self.resolve(sample, OracleAnswer::Skip, None, "timeout")
            }
            _ => Ok(()),
        }
    }

    fn resolve(
        &mut self,
        sample: u64,
        answer: OracleAnswer,
        name: Option<String>,
        reason: &str,
    ) -> Result<(), ApiError> {
        self.engine
            .answer(sample, answer)
            .map_err(|e| ApiError::Conflict(e.to_string()))?;
        self.deadline = None;
        match answer {
            OracleAnswer::Label(class) => {
                if let Some(name) = name {
                    self.class_names.insert(class.0, name);
                }
                let name = self.class_names.get(&class.0).cloned();
                self.emit(
                    EventKind::LabelAccepted,
                    json!({"sample": sample, "label": class, "name": name, "classes": self.engine.graph().classes().len()}),
                );
            }
            OracleAnswer::Skip => {
                self.emit(
                    EventKind::QuerySkipped,
                    json!({"sample": sample, "reason": reason}),
                );
            }
        }
        self.finish_sample()
    }

    /// Evaluation and end-of-stream bookkeeping once a sample is fully
    /// handled.
    fn finish_sample(&mut self) -> Result<(), ApiError> {
        let t = self.engine.t();
        let at_end = self.cursor == self.stream.len();
        if self.eval_due || (at_end && self.curve.last().is_none_or(|&(x, _)| x != t)) {
            self.eval_due = false;
            let acc = accuracy(&self.engine, &self.test)?;
            self.curve.push((t, acc));
            self.emit(EventKind::EvalPoint, json!({"t": t, "accuracy": acc}));
        }
        if at_end && !self.ended {
            self.ended = true;
            self.emit(EventKind::EndOfStream, json!({"t": t}));
        }
        Ok(())
    }

    /// Advances by up to `count` samples. In human mode it stops at the
    /// first query.
    pub fn step(&mut self, count: usize, now: Instant) -> Result<StepOutcome, ApiError> {
        self.expire(now)?;
        if self.has_pending() {
            return Err(ApiError::Conflict("query pending".into()));
        }
        let mut processed = 0;
        while processed < count && self.cursor < self.stream.len() {
            let sample = self.stream[self.cursor].clone();
            self.cursor += 1;
            processed += 1;
            let human = self.cfg.oracle == OracleMode::Human;
            let label = (!human).then_some(sample.label);
            let record = self.engine.observe(sample.id, &sample.features, label)?;
            let t = self.engine.t();
            let interval = self.cfg.eval_interval as u64;
            self.eval_due = interval > 0 && t.is_multiple_of(interval);
            let rolled = record.window_rolled;
            self.emit(
                EventKind::SampleProcessed,
                serde_json::to_value(&record).map_err(mpart_core::Error::from)?,
            );
            if rolled {
                self.emit(EventKind::WindowRolled, json!({"t": t}));
            }
            if let Some(query) = self.engine.pending().cloned() {
                let timeout = Duration::from_secs(self.cfg.query_timeout_secs);
                self.emit(
                    EventKind::QueryRequested,
                    json!({"sample": query.sample, "node": query.node, "features": query.features,
                           "t": query.t, "deadline_ms": timeout.as_millis() as u64}),
                );
                if human {
                    self.deadline = Some(now + timeout);
                    break;
                }
                let answer = self.oracle.answer(&query)?;
                self.resolve(query.sample, answer, None, "oracle")?;
            } else {
                self.finish_sample()?;
            }
        }
        if self.cursor == self.stream.len() && !self.has_pending() {
            self.finish_sample()?;
        }
        Ok(StepOutcome {
            v: 1,
            processed,
            t: self.engine.t(),
            pending: self.pending_view(now),
            end_of_stream: self.ended,
        })
    }

    pub fn submit(
        &mut self,
        sample: u64,
        answer: OracleAnswer,
        name: Option<String>,
        now: Instant,
    ) -> Result<(), ApiError> {
        self.expire(now)?;
        match self.engine.pending() {
            None => Err(ApiError::Conflict("no query pending".into())),
            Some(q) if q.sample != sample => Err(ApiError::Conflict(format!(
                "stale label: pending query is for sample {}",
                q.sample
            ))),
            Some(_) => self.resolve(sample, answer, name, "skip"),
        }
    }

    pub fn state(&self, now: Instant) -> Value {
        let e = &self.engine;
        json!({
            "v": 1,
            "id": self.id,
            "t": e.t(),
            "stream_len": self.stream.len(),
            "nodes": e.graph().len(),
            "classes": e.graph().classes(),
            "queries": e.queries(),
            "skipped": e.skipped(),
            "labels": e.graph().label_total(),
            "budget_remaining": e.selector().budget().remaining,
            "pending": self.pending_view(now),
            "rate": self.rate,
            "oracle": self.cfg.oracle,
            "end_of_stream": self.ended,
            "events": self.events.len(),
            "hash": e.graph().state_hash(),
        })
    }

    pub fn snapshot(&self) -> Result<Value, ApiError> {
        let g = self.engine.graph();
        let dim = g.dim();
        let params = self.engine.params();
        let mut nodes = Vec::with_capacity(g.len());
        for node in g.nodes() {
            let position: Vec<f64> = (0..dim.min(2))
                .map(|k| (node.w[k] + 1.0 - node.w[k + dim]) / 2.0)
                .collect();
            let predicted = infer(g, node.id, params)?.y_hat;
            nodes.push(json!({
                "id": node.id, "position": position, "d": node.d, "q": node.q,
                "predicted": predicted,
            }));
        }
        let edges: Vec<Value> = g
            .edges()
            .sorted()
            .into_iter()
            .map(|(i, j, c)| json!({"i": i, "j": j, "c": c, "e": g.edge_weight(i, j).unwrap_or(0.0)}))
            .collect();
        Ok(json!({
            "v": 1,
            "t": self.engine.t(),
            "classes": g.classes(),
            "class_names": self.class_names,
            "nodes": nodes,
            "edges": edges,
            "curve": self.curve,
        }))
    }
}
