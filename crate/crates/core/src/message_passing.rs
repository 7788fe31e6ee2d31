//! Layered, discounted aggregation of node information around a target.
//!
//! One layer adds to every node the edge-weighted sum of its neighbours'
//! values, scaled by the propagation rate. After `L` layers only the target's
//! value is needed, so layer `l` is evaluated on the nodes within `L - l`
//! hops of the target; values further out cannot reach it in time.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::{NodeId, TopoGraph};

/// Per-node information to aggregate.
#[derive(Clone, Copy, Debug)]
pub enum InfoField<'a> {
    /// Winning count `d` (width 1).
    WinCount,
    /// Label density `q` (width `|C|`).
    LabelDensity,
    /// `q` followed by `d` (width `|C| + 1`), aggregated in one pass.
    DensityAndCount,
    /// Arbitrary node-major values, `data.len() == width * graph.len()`.
    Values { width: usize, data: &'a [f64] },
}

impl InfoField<'_> {
    pub fn width(&self, graph: &TopoGraph) -> usize {
        match self {
            InfoField::WinCount => 1,
            InfoField::LabelDensity => graph.classes().len(),
            InfoField::DensityAndCount => graph.classes().len() + 1,
            InfoField::Values { width, .. } => *width,
        }
    }

    fn write(&self, graph: &TopoGraph, node: NodeId, out: &mut [f64]) {
        let n = &graph.nodes()[node];
        match self {
            InfoField::WinCount => out[0] = n.d as f64,
            InfoField::LabelDensity => {
                for (o, &q) in out.iter_mut().zip(&n.q) {
                    *o = q as f64;
                }
            }
            InfoField::DensityAndCount => {
                let k = n.q.len();
                for (o, &q) in out[..k].iter_mut().zip(&n.q) {
                    *o = q as f64;
                }
                out[k] = n.d as f64;
            }
            InfoField::Values { width, data } => {
                out.copy_from_slice(&data[node * width..(node + 1) * width]);
            }
        }
    }

    fn check(&self, graph: &TopoGraph) -> Result<()> {
        if let InfoField::Values { width, data } = self {
            let expected = width * graph.len();
            if data.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: data.len(),
                });
            }
        }
        Ok(())
    }
}

/// Nodes grouped by hop distance from a target: `layers[l]` holds the nodes
/// at shortest-path distance exactly `l`, each layer sorted by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    pub layers: Vec<Vec<NodeId>>,
}

impl Neighborhood {
    /// Number of nodes within the neighbourhood.
    pub fn size(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

pub fn neighbors(graph: &TopoGraph, node: NodeId) -> Result<Vec<NodeId>> {
    let mut out = graph.neighbors(node)?.to_vec();
    out.sort_unstable();
    Ok(out)
}

/// BFS ball of radius `depth` in visiting order, with each node's distance.
struct Ball {
    order: Vec<NodeId>,
    depth: Vec<usize>,
    /// Position in `order` per graph node, `usize::MAX` when outside.
    local: Vec<usize>,
}

fn ball(graph: &TopoGraph, target: NodeId, depth: usize) -> Result<Ball> {
    graph.node(target)?;
    let mut local = vec![usize::MAX; graph.len()];
    let mut order = vec![target];
    let mut dist = vec![0];
    local[target] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(k) = queue.pop_front() {
        if dist[k] == depth {
            continue;
        }
        for &j in graph.neighbors(order[k])? {
            if local[j] == usize::MAX {
                local[j] = order.len();
                order.push(j);
                dist.push(dist[k] + 1);
                queue.push_back(local[j]);
            }
        }
    }
    Ok(Ball {
        order,
        depth: dist,
        local,
    })
}

pub fn layered_neighborhood(
    graph: &TopoGraph,
    target: NodeId,
    layers: usize,
) -> Result<Neighborhood> {
    let ball = ball(graph, target, layers)?;
    let mut out = vec![Vec::new(); layers + 1];
    for (&node, &d) in ball.order.iter().zip(&ball.depth) {
        out[d].push(node);
    }
    for layer in &mut out {
        layer.sort_unstable();
    }
    Ok(Neighborhood { layers: out })
}

/// `X_target` after `layers` rounds of
/// `X_i ← X_i + δ Σ_{j ∈ N(i)} e_ij X_j`, updated synchronously.
/// Stored node state is never modified.
pub fn aggregate(
    graph: &TopoGraph,
    target: NodeId,
    field: InfoField<'_>,
    layers: usize,
    delta: f64,
) -> Result<Vec<f64>> {
    field.check(graph)?;
    let width = field.width(graph);
    if layers == 0 || delta == 0.0 {
        graph.node(target)?;
        let mut out = vec![0.0; width];
        field.write(graph, target, &mut out);
        return Ok(out);
    }

    let Ball {
        order,
        depth,
        local,
    } = ball(graph, target, layers)?;
    let mut values = vec![0.0; order.len() * width];
    for (k, &node) in order.iter().enumerate() {
        field.write(graph, node, &mut values[k * width..(k + 1) * width]);
    }
    let nodes = graph.nodes();
    let mut next = values.clone();
    let mut acc = vec![0.0; width];
    for layer in 1..=layers {
        let limit = layers - layer;
        // `order` is BFS order, so depths are non-decreasing.
        let active = depth.partition_point(|&d| d <= limit);
        for k in 0..active {
            let node = &nodes[order[k]];
            acc.fill(0.0);
            for &j in graph.neighbors(node.id)? {
                let e = graph.edge_weight_unchecked(node, &nodes[j]);
                let src = &values[local[j] * width..(local[j] + 1) * width];
                for (a, &x) in acc.iter_mut().zip(src) {
                    *a += e * x;
                }
            }
            let dst = &mut next[k * width..(k + 1) * width];
            let cur = &values[k * width..(k + 1) * width];
            for ((o, &x), &a) in dst.iter_mut().zip(cur).zip(&acc) {
                *o = x + delta * a;
            }
        }
        values[..active * width].copy_from_slice(&next[..active * width]);
    }
    values.truncate(width);
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeRecord, GraphSnapshot, Node};

    fn graph(d: &[u64], edges: &[(usize, usize, u64)]) -> TopoGraph {
        let snap = GraphSnapshot {
            v: 1,
            dim: 1,
            classes: vec![],
            nodes: d
                .iter()
                .enumerate()
                .map(|(id, &d)| {
                    serde_json::from_value::<Node>(serde_json::json!({
                        "id": id, "w": [0.5, 0.5], "d": d, "q": []
                    }))
                    .unwrap()
                })
                .collect(),
            edges: edges
                .iter()
                .map(|&(i, j, c)| EdgeRecord { i, j, c })
                .collect(),
        };
        TopoGraph::from_snapshot(&snap).unwrap()
    }

    fn chain() -> TopoGraph {
        graph(&[2, 2, 2, 2], &[(0, 1, 1), (1, 2, 1), (2, 3, 1)])
    }

    fn triangle() -> TopoGraph {
        graph(&[1, 1, 1], &[(0, 1, 1), (1, 2, 1), (0, 2, 1)])
    }

    #[test]
    fn direct_neighbors() {
        assert!(neighbors(&graph(&[1], &[]), 0).unwrap().is_empty());
        assert_eq!(
            neighbors(&graph(&[1, 1, 1], &[(0, 1, 1), (1, 2, 1)]), 1).unwrap(),
            vec![0, 2]
        );
        let t = triangle();
        for i in 0..3 {
            assert_eq!(neighbors(&t, i).unwrap().len(), 2);
        }
        assert!(neighbors(&t, 3).is_err());
    }

    #[test]
    fn layering() {
        let c = chain();
        assert_eq!(
            layered_neighborhood(&c, 0, 0).unwrap().layers,
            vec![vec![0]]
        );
        assert_eq!(
            layered_neighborhood(&c, 0, 2).unwrap().layers,
            vec![vec![0], vec![1], vec![2]]
        );
        assert_eq!(
            layered_neighborhood(&triangle(), 0, 3).unwrap().layers,
            vec![vec![0], vec![1, 2], vec![], vec![]]
        );
    }

    #[test]
    fn zero_rate_and_isolation_are_identity() {
        let data = [1.0, 2.0, 3.0, 4.0];
        let f = InfoField::Values {
            width: 1,
            data: &data,
        };
        assert_eq!(aggregate(&chain(), 1, f, 5, 0.0).unwrap(), vec![2.0]);
        let iso = graph(&[3, 1], &[]);
        assert_eq!(
            aggregate(&iso, 0, InfoField::WinCount, 4, 0.5).unwrap(),
            vec![3.0]
        );
    }

    #[test]
    fn two_node_golden_value() {
        // c = 1, d = 1 + 1 → e = 0.5
        let g = graph(&[1, 1], &[(0, 1, 1)]);
        let data = [1.0, 1.0];
        let out = aggregate(
            &g,
            0,
            InfoField::Values {
                width: 1,
                data: &data,
            },
            1,
            0.1,
        )
        .unwrap();
        assert!((out[0] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn chain_matches_hand_expansion() {
        // e = 1/4 on every chain edge; target 0, L = 2, δ = 1, X = [1,2,3,4].
        // layer 1 over {0,1}: X0 = 1 + 2/4 = 1.5; X1 = 2 + (1 + 3)/4 = 3
        // layer 2 over {0}:   X0 = 1.5 + 3/4 = 2.25
        let data = [1.0, 2.0, 3.0, 4.0];
        let out = aggregate(
            &chain(),
            0,
            InfoField::Values {
                width: 1,
                data: &data,
            },
            2,
            1.0,
        )
        .unwrap();
        assert!((out[0] - 2.25).abs() < 1e-15);
    }

    #[test]
    fn wrong_field_length_is_rejected() {
        let data = [1.0];
        assert!(aggregate(
            &chain(),
            0,
            InfoField::Values {
                width: 1,
                data: &data
            },
            1,
            0.1
        )
        .is_err());
    }
}
