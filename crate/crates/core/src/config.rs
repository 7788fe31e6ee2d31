//! Hyperparameters and the flat run configuration.
//!
//! A run is described by one flat TOML table. Every key has a default, so an
//! empty file is a valid configuration; command-line overrides are applied
//! through [`RunConfig::set`] using the same key names.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Choice parameter, `> 0`.
    pub alpha: f64,
    /// Weight learning rate, `(0, 1]`.
    pub beta: f64,
    /// Vigilance, `(0, 1)`.
    pub rho: f64,
    /// Message-passing propagation rate, `[0, 1]`.
    pub delta: f64,
    /// Weight of epistemic against aleatoric uncertainty, `[0, 1]`.
    pub tau: f64,
    /// Epistemic sensitivity, `> 0`.
    pub k_e: f64,
    /// Density sensitivity, `> 0`.
    pub k_d: f64,
    /// Number of message-passing layers.
    pub layers: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 0.01,
            beta: 0.5,
            rho: 0.95,
            delta: 0.1,
            tau: 0.7,
            k_e: 1.0,
            k_d: 0.01,
            layers: 3,
        }
    }
}

fn check(field: &str, ok: bool, value: f64, range: &str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{value} is not in {range}")))
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        check("alpha", self.alpha > 0.0, self.alpha, "(0, inf)")?;
        check(
            "beta",
            self.beta > 0.0 && self.beta <= 1.0,
            self.beta,
            "(0, 1]",
        )?;
        check("rho", self.rho > 0.0 && self.rho < 1.0, self.rho, "(0, 1)")?;
        check(
            "delta",
            (0.0..=1.0).contains(&self.delta),
            self.delta,
            "[0, 1]",
        )?;
        check("tau", (0.0..=1.0).contains(&self.tau), self.tau, "[0, 1]")?;
        check("k_e", self.k_e > 0.0, self.k_e, "(0, inf)")?;
        check("k_d", self.k_d > 0.0, self.k_d, "(0, inf)")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Random,
    Memory,
    Explorer,
}

/// Which score drives the query decision: the density-weighted `s_t` or the
/// plain combined uncertainty `u_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Dw,
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    Dataset,
    Human,
}

macro_rules! impl_name {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    other => Err(Error::config(
                        stringify!($ty),
                        format!("unknown value `{other}`"),
                    )),
                }
            }
        }
    };
}

impl_name!(StrategyKind { Random => "random", Memory => "memory", Explorer => "explorer" });
impl_name!(ScoreMode { Dw => "dw", Plain => "plain" });
impl_name!(OracleMode { Dataset => "dataset", Human => "human" });

/// Complete description of a run: model, budget, strategy, data and trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub delta: f64,
    pub tau: f64,
    pub k_e: f64,
    pub k_d: f64,
    pub layers: usize,

    /// Queries allowed per window.
    pub budget: usize,
    /// Window length in samples.
    pub window: usize,
    pub strategy: StrategyKind,
    pub score: ScoreMode,
    pub oracle: OracleMode,

    pub seed: u64,
    pub trials: usize,
    /// Worker threads for trials; 0 uses the rayon default.
    pub workers: usize,

    /// `blobs`, `imbalanced`, or a path to a dataset file.
    pub dataset: String,
    pub dims: usize,
    pub classes: usize,
    pub spread: f64,
    /// Class proportions for `imbalanced`.
    pub ratios: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    /// Seed of the synthetic generator. Trials reshuffle and resubsample the
    /// same generated pool.
    pub data_seed: u64,

    /// Hold-out evaluation period in training samples; 0 disables the curve.
    pub eval_interval: usize,
    /// Human-oracle answer deadline.
    pub query_timeout_secs: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        RunConfig {
            alpha: hp.alpha,
            beta: hp.beta,
            rho: hp.rho,
            delta: hp.delta,
            tau: hp.tau,
            k_e: hp.k_e,
            k_d: hp.k_d,
            layers: hp.layers,
            budget: 1,
            window: 500,
            strategy: StrategyKind::Explorer,
            score: ScoreMode::Dw,
            oracle: OracleMode::Dataset,
            seed: 0,
            trials: 30,
            workers: 0,
            dataset: "blobs".into(),
            dims: 4,
            classes: 8,
            spread: 0.06,
            ratios: Vec::new(),
            n_train: 10_000,
            n_test: 2_000,
            data_seed: 7,
            eval_interval: 500,
            query_timeout_secs: 120,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            alpha: self.alpha,
            beta: self.beta,
            rho: self.rho,
            delta: self.delta,
            tau: self.tau,
            k_e: self.k_e,
            k_d: self.k_d,
            layers: self.layers,
        }
    }

    pub fn set_hyperparams(&mut self, hp: Hyperparams) {
        self.alpha = hp.alpha;
        self.beta = hp.beta;
        self.rho = hp.rho;
        self.delta = hp.delta;
        self.tau = hp.tau;
        self.k_e = hp.k_e;
        self.k_d = hp.k_d;
        self.layers = hp.layers;
    }

    /// Overrides one key. The value is parsed as a TOML value when possible
    /// and as a bare string otherwise, so `strategy=memory` and `rho=0.9`
    /// both work.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).expect("flat config is a table");
        if !table.contains_key(key) {
            return Err(Error::config(key, "unknown configuration key"));
        }
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let next: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.to_string()))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams().validate()?;
        if self.window == 0 {
            return Err(Error::config("window", "must be at least 1"));
        }
        if self.budget == 0 || self.budget > self.window {
            return Err(Error::config("budget", "must be in [1, window]"));
        }
        if self.strategy == StrategyKind::Memory && self.budget != 1 {
            return Err(Error::config(
                "budget",
                "memory strategy requires budget = 1",
            ));
        }
        if self.dims == 0 {
            return Err(Error::config("dims", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::config(
                "spread",
                "must be a finite non-negative number",
            ));
        }
        Ok(())
    }
}
