//! Query selection under a hard budget of `B` queries per window of `W`
//! consecutive samples.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::StrategyKind;
use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Remaining budget and position within the current window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetState {
    /// Queries per window (`B`).
    pub budget: usize,
    /// Window length (`W`).
    pub window: usize,
    /// Budget left in this window (`b`).
    pub remaining: usize,
    /// Samples elapsed in this window (`t_p`).
    pub offset: usize,
}

impl BudgetState {
    pub fn new(budget: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("window", "must be at least 1"));
        }
        if budget == 0 || budget > window {
            return Err(Error::config("budget", "must be in [1, window]"));
        }
        Ok(BudgetState {
            budget,
            window,
            remaining: budget,
            offset: 0,
        })
    }

    /// Samples left in the window, counting the current one.
    pub fn samples_left(&self) -> usize {
        self.window - self.offset
    }

    /// Starts a new window. Unused budget does not carry over.
    pub fn on_window_boundary(&mut self) {
        debug_assert_eq!(self.offset, self.window);
        self.offset = 0;
        self.remaining = self.budget;
    }

    /// Moves past the current sample; returns `true` when a window closed.
    fn advance(&mut self) -> bool {
        self.offset += 1;
        if self.offset == self.window {
            self.on_window_boundary();
            true
        } else {
            false
        }
    }
}

/// Running score statistics since the last query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorerStats {
    pub n: u64,
    pub mu: f64,
    pub var: f64,
}

impl ExplorerStats {
    /// `μ_n = (1 − 1/n) μ_{n−1} + s/n`,
    /// `σ²_n = (1 − 1/n) σ²_{n−1} + (μ_n − s)²/n`.
    ///
    /// The variance recursion is not the sample variance; it is kept as is.
    pub fn update(&mut self, s: f64) {
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        self.mu = (1.0 - inv) * self.mu + inv * s;
        self.var = (1.0 - inv) * self.var + inv * (self.mu - s) * (self.mu - s);
    }

    pub fn reset(&mut self) {
        *self = ExplorerStats::default();
    }

    /// Normal CDF of the score model at `s`; 0.5 when the spread is zero.
    pub fn cdf(&self, s: f64) -> f64 {
        if self.var <= 0.0 {
            0.5
        } else {
            normal_cdf(s, self.mu, self.var.sqrt())
        }
    }
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (std * std::f64::consts::SQRT_2))
}

/// `P[X ≤ k]` for `X ~ Binomial(trials, p)`, summing the mass function
/// term by term.
pub fn binomial_cdf(k: usize, trials: usize, p: f64) -> f64 {
    if p >= 1.0 {
        return if trials <= k { 1.0 } else { 0.0 };
    }
    if p <= 0.0 || k >= trials {
        return 1.0;
    }
    let ratio = p / (1.0 - p);
    let mut term = (1.0 - p).powi(trials as i32);
    let mut sum = term;
    for m in 0..k {
        term *= (trials - m) as f64 / (m + 1) as f64 * ratio;
        sum += term;
    }
    sum.min(1.0)
}

/// Query when the chance that fewer than `b` of the remaining samples beat
/// `s` exceeds one half.
pub fn explorer_decide(stats: &ExplorerStats, budget: &BudgetState, s: f64) -> bool {
    if budget.remaining == 0 {
        return false;
    }
    let beaten_by_next = 1.0 - stats.cdf(s);
    binomial_cdf(budget.remaining - 1, budget.samples_left(), beaten_by_next) > 0.5
}

/// A sample eligible for a query: its id, the node it was integrated into,
/// and its features (kept only by the Memory strategy's single slot).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sample: u64,
    pub node: NodeId,
    pub features: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryAction {
    QueryNow,
    /// The sample was stored for a later query.
    Defer,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryDecision {
    pub action: QueryAction,
    /// The sample to query, set exactly when `action` is `QueryNow`.
    pub target: Option<Candidate>,
    /// Whether this sample closed a window.
    pub window_rolled: bool,
}

#[derive(Clone, Debug)]
enum StrategyState {
    Random {
        rng: Box<ChaCha8Rng>,
        offsets: Vec<usize>,
    },
    Memory {
        stored: Option<(f64, Candidate)>,
    },
    Explorer {
        stats: ExplorerStats,
    },
}

/// Strategy state plus budget accounting for one stream.
#[derive(Clone, Debug)]
pub struct QuerySelector {
    kind: StrategyKind,
    budget: BudgetState,
    state: StrategyState,
}

impl QuerySelector {
    pub fn new(kind: StrategyKind, budget: usize, window: usize, seed: u64) -> Result<Self> {
        let budget = BudgetState::new(budget, window)?;
        let state = match kind {
            StrategyKind::Random => StrategyState::Random {
                rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
                offsets: Vec::new(),
            },
            StrategyKind::Memory => {
                if budget.budget != 1 {
                    return Err(Error::config(
                        "budget",
                        "memory strategy requires budget = 1",
                    ));
                }
                StrategyState::Memory { stored: None }
            }
            StrategyKind::Explorer => StrategyState::Explorer {
                stats: ExplorerStats::default(),
            },
        };
        Ok(QuerySelector {
            kind,
            budget,
            state,
        })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn budget(&self) -> &BudgetState {
        &self.budget
    }

    pub fn explorer_stats(&self) -> Option<&ExplorerStats> {
        match &self.state {
            StrategyState::Explorer { stats } => Some(stats),
            _ => None,
        }
    }

    /// Decides for the current sample, spends budget on a query and moves
    /// the window forward by one sample.
    pub fn observe(&mut self, score: f64, candidate: Candidate) -> QueryDecision {
        let budget = &mut self.budget;
        let (action, target) = match &mut self.state {
            StrategyState::Random { rng, offsets } => {
                if budget.offset == 0 {
                    *offsets = index::sample(rng, budget.window, budget.budget).into_vec();
                }
                if budget.remaining > 0 && offsets.contains(&budget.offset) {
                    (QueryAction::QueryNow, Some(candidate))
                } else {
                    (QueryAction::None, None)
                }
            }
            StrategyState::Memory { stored } => {
                let replaced = stored.as_ref().is_none_or(|(best, _)| score > *best);
                let mut action = QueryAction::None;
                if replaced {
                    *stored = Some((score, candidate));
                    action = QueryAction::Defer;
                }
                if budget.offset + 1 == budget.window && budget.remaining > 0 {
                    (QueryAction::QueryNow, stored.take().map(|(_, c)| c))
                } else {
                    (action, None)
                }
            }
            StrategyState::Explorer { stats } => {
                stats.update(score);
                if explorer_decide(stats, budget, score) {
                    stats.reset();
                    (QueryAction::QueryNow, Some(candidate))
                } else {
                    (QueryAction::None, None)
                }
            }
        };
        if action == QueryAction::QueryNow {
            budget.remaining -= 1;
        }
        let window_rolled = budget.advance();
        QueryDecision {
            action,
            target,
            window_rolled,
        }
    }
}
