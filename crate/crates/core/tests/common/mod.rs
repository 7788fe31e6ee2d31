#![allow(dead_code)]

use mpart_core::graph::{GraphSnapshot, TopoGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Random graph with `n` nodes, `classes` label dimensions and edge
/// probability `p`. Counts respect `c ≤ d_i + d_j`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, classes: usize, p: f64) -> TopoGraph {
    let d: Vec<u64> = (0..n).map(|_| rng.random_range(1..20)).collect();
    let nodes: Vec<_> = (0..n)
        .map(|i| {
            let q: Vec<u64> = (0..classes).map(|_| rng.random_range(0..6)).collect();
            json!({"id": i, "w": [0.5, 0.5], "d": d[i], "q": q})
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                let c = rng.random_range(1..=d[i] + d[j]);
                edges.push(json!({"i": i, "j": j, "c": c}));
            }
        }
    }
    let snap: GraphSnapshot = serde_json::from_value(json!({
        "v": 1, "dim": 1,
        "classes": (0..classes).collect::<Vec<_>>(),
        "nodes": nodes, "edges": edges
    }))
    .unwrap();
    TopoGraph::from_snapshot(&snap).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Propagates every node on every layer from a full dense edge matrix and
/// reads off the target.
pub fn naive_aggregate(
    graph: &TopoGraph,
    values: &[f64],
    width: usize,
    target: usize,
    layers: usize,
    delta: f64,
) -> Vec<f64> {
    let n = graph.len();
    let mut e = vec![0.0; n * n];
    for (i, j, c) in graph.edges().sorted() {
        let w = c as f64 / (graph.nodes()[i].d + graph.nodes()[j].d) as f64;
        e[i * n + j] = w;
        e[j * n + i] = w;
    }
    let mut x = values.to_vec();
    for _ in 0..layers {
        let mut next = x.clone();
        for i in 0..n {
            for j in 0..n {
                for k in 0..width {
                    next[i * width + k] += delta * e[i * n + j] * x[j * width + k];
                }
            }
        }
        x = next;
    }
    x[target * width..(target + 1) * width].to_vec()
}
