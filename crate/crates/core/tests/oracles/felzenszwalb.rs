//! Label-array reference for graph segmentation, and random graphs.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use scenehier_core::geoseg::{AdjacencyGraph, Edge};

/// Straightforward transcription of the merge rule with explicit label
/// arrays; O(V) per merge.
pub fn reference(n: usize, edges: &[Edge], k: f64, min_size: usize) -> Vec<usize> {
    let mut order: Vec<Edge> = edges.to_vec();
    order.sort_by(|x, y| x.weight.partial_cmp(&y.weight).unwrap().then((x.a, x.b).cmp(&(y.a, y.b))));
    let mut label: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut int = vec![0f64; n];
    let merge = |label: &mut Vec<usize>, size: &mut Vec<usize>, int: &mut Vec<f64>, la: usize, lb: usize, w: f64| {
        for l in label.iter_mut() {
            if *l == lb {
                *l = la;
            }
        }
        size[la] += size[lb];
        int[la] = int[la].max(int[lb]).max(w);
    };
    for e in &order {
        let (la, lb) = (label[e.a as usize], label[e.b as usize]);
        if la == lb {
            continue;
        }
        let thr = (int[la] + k / size[la] as f64).min(int[lb] + k / size[lb] as f64);
        if e.weight <= thr {
            merge(&mut label, &mut size, &mut int, la, lb, e.weight);
        }
    }
    for e in &order {
        let (la, lb) = (label[e.a as usize], label[e.b as usize]);
        if la != lb && (size[la] < min_size || size[lb] < min_size) {
            merge(&mut label, &mut size, &mut int, la, lb, e.weight);
        }
    }
    label
}

/// Same partition up to relabeling.
pub fn same_partition(a: &[u32], b: &[usize]) -> bool {
    let mut fwd: HashMap<u32, usize> = HashMap::new();
    let mut back: HashMap<usize, u32> = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

pub fn random_graph(rng: &mut ChaCha8Rng) -> AdjacencyGraph {
    let n = rng.random_range(2..=500usize);
    let mut pairs = std::collections::BTreeSet::new();
    // a random spanning path keeps most graphs connected, extra edges add cycles
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    for w in perm.windows(2) {
        if rng.random::<f64>() < 0.95 {
            pairs.insert((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    for _ in 0..rng.random_range(0..3 * n) {
        let (a, b) = (rng.random_range(0..n as u32), rng.random_range(0..n as u32));
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    // coarse weights make ties common
    let coarse = rng.random::<bool>();
    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let weight = if coarse { rng.random_range(0..8) as f64 / 8.0 } else { rng.random::<f64>() * 0.3 };
            Edge { a, b, weight }
        })
        .collect();
    AdjacencyGraph { nodes: (0..n as u32).collect(), edges }
}
