//! Class probabilities, uncertainty estimates and query scores derived from
//! the aggregated label density and winning count of the winner.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::Hyperparams;
use crate::error::Result;
use crate::graph::{ClassId, NodeId, TopoGraph};
use crate::message_passing::{aggregate, InfoField};

/// Predicted class, or `Unlabeled` while no class is known yet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Prediction {
    Class(ClassId),
    Unlabeled,
}

impl Prediction {
    pub fn class(self) -> Option<ClassId> {
        match self {
            Prediction::Class(c) => Some(c),
            Prediction::Unlabeled => None,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Class(c) => c.fmt(f),
            Prediction::Unlabeled => f.write_str("unlabeled"),
        }
    }
}

// Serialized as the class number, or the string "unlabeled".
impl Serialize for Prediction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Prediction::Class(c) => s.serialize_u32(c.0),
            Prediction::Unlabeled => s.serialize_str("unlabeled"),
        }
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Class(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Class(c) => Ok(Prediction::Class(ClassId(c))),
            Raw::Text(t) if t == "unlabeled" => Ok(Prediction::Unlabeled),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad prediction `{t}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub winner: Option<NodeId>,
    /// Class probabilities in class-set order.
    pub p: Vec<f64>,
    pub y_hat: Prediction,
    pub u_e: f64,
    pub u_a: f64,
    pub u_t: f64,
    pub s_t: f64,
    /// Aggregated winning count of the winner.
    pub d_agg: f64,
}

/// Normalizes the aggregated density; an all-zero density gives the uniform
/// distribution.
pub fn class_probabilities(q_agg: &[f64]) -> Vec<f64> {
    let total: f64 = q_agg.iter().sum();
    if total > 0.0 {
        q_agg.iter().map(|q| q / total).collect()
    } else {
        let k = q_agg.len() as f64;
        vec![1.0 / k; q_agg.len()]
    }
}

/// Index of the largest probability, lowest index on ties.
pub fn predict_index(p: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in p.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub fn predict(p: &[f64], classes: &[ClassId]) -> Prediction {
    match predict_index(p) {
        Some(i) => Prediction::Class(classes[i]),
        None => Prediction::Unlabeled,
    }
}

/// `1 - tanh(k_e · Σ q_agg)`.
pub fn epistemic_uncertainty(q_agg: &[f64], k_e: f64) -> f64 {
    let mass: f64 = q_agg.iter().sum();
    1.0 - (k_e * mass).tanh()
}

/// Entropy of `p` normalized by `ln |C|`; zero when at most one class is
/// known. Terms are summed in ascending order of probability so the result
/// does not depend on class order, and an exactly uniform `p` gives exactly 1.
pub fn aleatoric_uncertainty(p: &[f64], class_count: usize) -> f64 {
    if class_count <= 1 {
        return 0.0;
    }
    if p.windows(2).all(|w| w[0] == w[1]) {
        return 1.0;
    }
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let entropy: f64 = sorted
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum();
    (entropy / (class_count as f64).ln()).clamp(0.0, 1.0)
}

/// `τ·u_e + (1 − τ)·u_a`.
pub fn combined_score(u_e: f64, u_a: f64, tau: f64) -> f64 {
    tau * u_e + (1.0 - tau) * u_a
}

/// `tanh(k_d · d_agg) · u_t`.
pub fn density_weighted_score(d_agg: f64, u_t: f64, k_d: f64) -> f64 {
    (k_d * d_agg).tanh() * u_t
}

/// Aggregates `q` and `d` around `winner` and derives the full record.
pub fn infer(graph: &TopoGraph, winner: NodeId, params: &Hyperparams) -> Result<InferenceRecord> {
    let joint = aggregate(
        graph,
        winner,
        InfoField::DensityAndCount,
        params.layers,
        params.delta,
    )?;
    let (q_agg, d_agg) = joint.split_at(joint.len() - 1);
    let d_agg = d_agg[0];
    let classes = graph.classes();
    let p = class_probabilities(q_agg);
    let y_hat = predict(&p, classes);
    let u_e = epistemic_uncertainty(q_agg, params.k_e);
    let u_a = aleatoric_uncertainty(&p, classes.len());
    let u_t = combined_score(u_e, u_a, params.tau);
    let s_t = density_weighted_score(d_agg, u_t, params.k_d);
    Ok(InferenceRecord {
        winner: Some(winner),
        p,
        y_hat,
        u_e,
        u_a,
        u_t,
        s_t,
        d_agg,
    })
}
