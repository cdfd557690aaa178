//! Static chain graphs from stroke structure and per-layer dilated KNN edges.

use std::collections::HashSet;

use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::sketch::Sketch;

/// Directed edge `(src, dst)`; features flow from `src` into `dst`.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    pub stroke_of: Vec<usize>,
}

impl Graph {
    pub fn stroke_count(&self) -> usize {
        self.stroke_of.iter().max().map_or(0, |&m| m + 1)
    }
}

/// Chain graph over consecutive points of each stroke, in both directions,
/// plus one self-loop per node.
pub fn build_static_graph(sketch: &Sketch) -> Graph {
    let node_count = sketch.point_count();
    let mut edges = Vec::with_capacity(3 * node_count);
    let mut offset = 0;
    for stroke in &sketch.strokes {
        for i in offset..offset + stroke.len() {
            edges.push((i, i));
        }
        for i in offset..offset + stroke.len().saturating_sub(1) {
            edges.push((i, i + 1));
            edges.push((i + 1, i));
        }
        offset += stroke.len();
    }
    Graph { node_count, edges, stroke_of: sketch.stroke_of() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMode {
    /// Every `dilation`-th of the `k * dilation` nearest candidates.
    Eval,
    /// `k` of the `k * dilation` nearest candidates, sampled uniformly.
    Train { seed: u64 },
}

/// Neighbor edges selected for one dynamic layer. Each node `i` receives
/// edges `(neighbor, i)`; [`layer_edges`] adds the reverse direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicEdgeSet {
    pub layer: usize,
    pub k: usize,
    pub dilation: usize,
    pub edges: Vec<Edge>,
}

/// Squared Euclidean distances between all rows, `n × n` row-major.
fn pairwise_dist2(features: &Tensor) -> Vec<f64> {
    let n = features.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let fi = features.row(i);
        for j in i + 1..n {
            let v: f64 = fi.iter().zip(features.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// The `pool` nodes nearest to `i`, ascending by distance, lower index first
/// on ties.
fn ranked_neighbors(dist2: &[f64], n: usize, i: usize, pool: usize) -> Vec<usize> {
    let row = &dist2[i * n..(i + 1) * n];
    let mut dist: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (row[j], j)).collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if pool < dist.len() {
        dist.select_nth_unstable_by(pool, order);
        dist.truncate(pool);
    }
    dist.sort_unstable_by(order);
    dist.into_iter().map(|(_, j)| j).collect()
}

/// 1-based candidate ranks picked in eval mode.
///
/// Ranks are `d, 2d, .., kd`; when the pool is shorter than `kd` each rank is
/// clamped so the `k` picks stay distinct and end at the pool boundary.
pub fn dilated_ranks(k: usize, dilation: usize, pool: usize) -> Vec<usize> {
    if pool <= k {
        return (1..=pool).collect();
    }
    (1..=k).map(|t| (t * dilation).min(pool - (k - t))).collect()
}

/// Dilated KNN in feature space (rows of `features` are nodes).
pub fn knn_dilated(features: &Tensor, k: usize, dilation: usize, mode: KnnMode, layer: usize) -> DynamicEdgeSet {
    let n = features.rows();
    let mut edges = Vec::new();
    if n >= 2 && k >= 1 && dilation >= 1 {
        let mut rng = match mode {
            KnnMode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            KnnMode::Eval => None,
        };
        edges.reserve(n * k.min(n - 1));
        let dist2 = pairwise_dist2(features);
        for i in 0..n {
            let pool = (k * dilation).min(n - 1);
            let ranked = ranked_neighbors(&dist2, n, i, pool);
            match rng.as_mut() {
                None => {
                    for r in dilated_ranks(k, dilation, pool) {
                        edges.push((ranked[r - 1], i));
                    }
                }
                Some(rng) => {
                    let mut picks = sample(rng, pool, k.min(pool)).into_vec();
                    picks.sort_unstable();
                    for r in picks {
                        edges.push((ranked[r], i));
                    }
                }
            }
        }
    }
    DynamicEdgeSet { layer, k, dilation, edges }
}

/// Union of the static edges with both directions of every dynamic edge,
/// without duplicates. Static edges keep their order and come first.
pub fn layer_edges(static_graph: &Graph, dynamic: &DynamicEdgeSet) -> Vec<Edge> {
    let mut seen: HashSet<Edge> = static_graph.edges.iter().copied().collect();
    let mut out = static_graph.edges.clone();
    for &(a, b) in &dynamic.edges {
        for e in [(a, b), (b, a)] {
            if seen.insert(e) {
                out.push(e);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point, Stroke};

    fn sketch(lengths: &[usize]) -> Sketch {
        let strokes = lengths
            .iter()
            .enumerate()
            .map(|(r, &n)| Stroke::new((0..n).map(|i| Point::new(i as f64, r as f64 * 10.0)).collect()))
            .collect();
        Sketch::new("t", strokes)
    }

    fn sorted(mut e: Vec<Edge>) -> Vec<Edge> {
        e.sort_unstable();
        e
    }

    #[test]
    fn chain_of_three() {
        let g = build_static_graph(&sketch(&[3]));
        let expected = vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)];
        assert_eq!(sorted(g.edges), expected);
    }

    #[test]
    fn strokes_are_disconnected() {
        let g = build_static_graph(&sketch(&[2, 2]));
        let expected = vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)];
        assert_eq!(sorted(g.edges), expected);
        assert_eq!(g.stroke_of, vec![0, 0, 1, 1]);
    }

    #[test]
    fn single_point_stroke_has_only_self_loop() {
        let g = build_static_graph(&sketch(&[1]));
        assert_eq!(g.edges, vec![(0, 0)]);
    }

    #[test]
    fn two_nodes_are_forced_neighbors() {
        let f = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let d = knn_dilated(&f, 1, 1, KnnMode::Eval, 0);
        assert_eq!(sorted(d.edges), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn dilated_ranks_on_a_line() {
        let f = Tensor::from_rows(&(0..5).map(|x| vec![x as f64]).collect::<Vec<_>>());
        let d = knn_dilated(&f, 2, 2, KnnMode::Eval, 0);
        let of_zero: Vec<usize> = d.edges.iter().filter(|e| e.1 == 0).map(|e| e.0).collect();
        assert_eq!(of_zero, vec![2, 4]);
    }

    #[test]
    fn small_pool_clamps() {
        let f = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]);
        let d = knn_dilated(&f, 8, 16, KnnMode::Eval, 3);
        assert_eq!(d.edges.len(), 6);
        assert_eq!((d.layer, d.k, d.dilation), (3, 8, 16));
        assert_eq!(dilated_ranks(3, 4, 7), vec![4, 6, 7]);
        assert_eq!(dilated_ranks(2, 1, 10), vec![1, 2]);
    }

    #[test]
    fn fewer_than_two_nodes_gives_no_edges() {
        let f = Tensor::from_rows(&[vec![0.0]]);
        assert!(knn_dilated(&f, 8, 1, KnnMode::Eval, 0).edges.is_empty());
    }

    #[test]
    fn layer_edge_union() {
        let g = build_static_graph(&sketch(&[4]));
        let empty = DynamicEdgeSet { layer: 0, k: 1, dilation: 1, edges: vec![] };
        assert_eq!(layer_edges(&g, &empty), g.edges);

        let dup = DynamicEdgeSet { edges: vec![(0, 1)], ..empty.clone() };
        assert_eq!(layer_edges(&g, &dup), g.edges);

        let far = DynamicEdgeSet { edges: vec![(0, 3)], ..empty };
        let mut expected: HashSet<Edge> = g.edges.iter().copied().collect();
        expected.insert((0, 3));
        expected.insert((3, 0));
        let got = layer_edges(&g, &far);
        assert_eq!(got.len(), expected.len());
        assert_eq!(got.into_iter().collect::<HashSet<_>>(), expected);
    }
}
