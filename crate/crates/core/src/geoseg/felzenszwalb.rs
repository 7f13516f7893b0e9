//! Felzenszwalb–Huttenlocher graph segmentation.
//!
//! Edges are visited in ascending (weight, a, b) order. Two components merge
//! across an edge when its weight does not exceed
//! `min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)`, where `Int` is the largest edge
//! weight inside a component. A second pass over the same order joins any
//! component smaller than `min_size` to its neighbor.

use super::graph::{AdjacencyGraph, Edge};
use crate::error::{Error, Result};

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn join(&mut self, a: u32, b: u32, weight: f64) {
        let (big, small) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        let int = self.internal[a as usize].max(self.internal[b as usize]).max(weight);
        self.internal[big as usize] = int;
    }
}

pub(crate) fn sorted_edges(graph: &AdjacencyGraph) -> Vec<Edge> {
    let mut edges = graph.edges.clone();
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    edges
}

/// Component label per graph node; labels are dense and numbered in order of
/// each component's first node.
pub fn felzenszwalb(graph: &AdjacencyGraph, k: f64, min_size: usize) -> Result<Vec<u32>> {
    if graph.is_empty() {
        return Err(Error::Empty("segmentation graph has no nodes"));
    }
    if !(k > 0.0) || min_size == 0 {
        return Err(Error::Config(format!("felzenszwalb needs k > 0 and min_size >= 1 (k={k}, min_size={min_size})")));
    }
    let n = graph.len();
    let edges = sorted_edges(graph);
    let mut ds = DisjointSet::new(n);

    for e in &edges {
        let (ra, rb) = (ds.find(e.a), ds.find(e.b));
        if ra == rb {
            continue;
        }
        let ta = ds.internal[ra as usize] + k / ds.size[ra as usize] as f64;
        let tb = ds.internal[rb as usize] + k / ds.size[rb as usize] as f64;
        if e.weight <= ta.min(tb) {
            ds.join(ra, rb, e.weight);
        }
    }

    for e in &edges {
        let (ra, rb) = (ds.find(e.a), ds.find(e.b));
        if ra != rb
            && ((ds.size[ra as usize] as usize) < min_size || (ds.size[rb as usize] as usize) < min_size)
        {
            ds.join(ra, rb, e.weight);
        }
    }

    let mut relabel = vec![u32::MAX; n];
    let mut next = 0;
    Ok((0..n as u32)
        .map(|i| {
            let r = ds.find(i) as usize;
            if relabel[r] == u32::MAX {
                relabel[r] = next;
                next += 1;
            }
            relabel[r]
        })
        .collect())
}
