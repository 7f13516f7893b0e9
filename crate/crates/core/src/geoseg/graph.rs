use crate::error::{Error, Result};
use crate::model::{InstanceMask, PointCloud};
use crate::spatial::KdTree;

/// Neighbors per point when the cloud has no faces.
pub const KNN_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Local node index, `a < b`.
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

/// Undirected graph over the points of one object. Node `i` is the point
/// `nodes[i]` of the scene cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjacencyGraph {
    pub nodes: Vec<u32>,
    pub edges: Vec<Edge>,
}

impl AdjacencyGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Normal-based dissimilarity `1 - n_i·n_j` in [0, 2], squared across
/// locally convex edges.
pub fn edge_weight(ni: &[f64; 3], nj: &[f64; 3], pi: &[f64; 3], pj: &[f64; 3]) -> f64 {
    let w = (1.0 - dot(ni, nj)).clamp(0.0, 2.0);
    let d = [pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]];
    if dot(ni, &d) < 0.0 {
        w * w
    } else {
        w
    }
}

/// Mesh edges inside the mask when the cloud has faces, otherwise the
/// symmetric k-NN graph (k = [`KNN_NEIGHBORS`]) of the mask's points.
pub fn build_adjacency(cloud: &PointCloud, mask: &InstanceMask) -> Result<AdjacencyGraph> {
    build_adjacency_k(cloud, mask, KNN_NEIGHBORS)
}

pub fn build_adjacency_k(cloud: &PointCloud, mask: &InstanceMask, k: usize) -> Result<AdjacencyGraph> {
    if mask.len() < 2 {
        return Err(Error::InvalidMask(format!(
            "adjacency needs at least 2 points, mask has {}",
            mask.len()
        )));
    }
    if cloud.normals.is_none() {
        return Err(Error::Unsupported("adjacency requires normals".into()));
    }
    let nodes = mask.point_indices.clone();
    let local = |g: u32| nodes.binary_search(&g).ok().map(|i| i as u32);

    let mut pairs: Vec<(u32, u32)> = Vec::new();
    if !cloud.faces.is_empty() {
        for f in &cloud.faces {
            for (u, v) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if let (Some(a), Some(b)) = (local(u), local(v)) {
                    if a != b {
                        pairs.push((a.min(b), a.max(b)));
                    }
                }
            }
        }
    } else {
        let pts: Vec<[f64; 3]> = nodes.iter().map(|&g| cloud.point(g)).collect();
        let tree = KdTree::new(pts);
        for i in 0..nodes.len() as u32 {
            for (j, _) in tree.knn(tree.point(i), k, Some(i)) {
                pairs.push((i.min(j), i.max(j)));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();

    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let (ga, gb) = (nodes[a as usize], nodes[b as usize]);
            let weight = edge_weight(
                &cloud.normal(ga).unwrap(),
                &cloud.normal(gb).unwrap(),
                &cloud.point(ga),
                &cloud.point(gb),
            );
            Edge { a, b, weight }
        })
        .collect();
    Ok(AdjacencyGraph { nodes, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::dist2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn quad() -> PointCloud {
        PointCloud {
            positions: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            normals: Some(vec![[0.0, 0.0, 1.0]; 4]),
            colors: None,
            faces: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    #[test]
    fn two_triangle_mesh_has_five_edges() {
        let g = build_adjacency(&quad(), &InstanceMask::new(vec![0, 1, 2, 3], 1.0).unwrap()).unwrap();
        assert_eq!(g.edges.len(), 5);
        assert!(g.edges.iter().all(|e| e.weight == 0.0 && e.a < e.b));
    }

    #[test]
    fn faces_clipped_to_mask() {
        let g = build_adjacency(&quad(), &InstanceMask::new(vec![0, 1, 2], 1.0).unwrap()).unwrap();
        let pairs: Vec<_> = g.edges.iter().map(|e| (g.nodes[e.a as usize], g.nodes[e.b as usize])).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn tiny_mask_is_an_error() {
        assert!(build_adjacency(&quad(), &InstanceMask::new(vec![2], 1.0).unwrap()).is_err());
    }

    #[test]
    fn knn_graph_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 400;
        let positions: Vec<[f32; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random::<f32>() * 0.1]).collect();
        let cloud = PointCloud {
            positions,
            normals: Some(vec![[0.0, 0.0, 1.0]; n]),
            colors: None,
            faces: vec![],
        };
        // every third point, so local and global indices differ
        let mask = InstanceMask::new((0..n as u32).step_by(3).collect(), 1.0).unwrap();
        let g = build_adjacency(&cloud, &mask).unwrap();

        let m = mask.len();
        let mut expect = BTreeSet::new();
        for i in 0..m {
            let pi = cloud.point(mask.point_indices[i]);
            let mut d: Vec<(f64, usize)> = (0..m)
                .filter(|&j| j != i)
                .map(|j| (dist2(&pi, &cloud.point(mask.point_indices[j])), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, j) in d.iter().take(KNN_NEIGHBORS) {
                expect.insert((i.min(j) as u32, i.max(j) as u32));
            }
        }
        let got: BTreeSet<_> = g.edges.iter().map(|e| (e.a, e.b)).collect();
        assert_eq!(got, expect);
        assert_eq!(got.len(), g.edges.len());

        let mut degree = vec![0usize; m];
        for e in &g.edges {
            degree[e.a as usize] += 1;
            degree[e.b as usize] += 1;
        }
        assert!(degree.iter().all(|&d| d >= KNN_NEIGHBORS.min(m - 1)));
    }

    #[test]
    fn small_knn_mask_is_complete() {
        let cloud = PointCloud {
            positions: (0..5).map(|i| [i as f32, 0.0, 0.0]).collect(),
            normals: Some(vec![[0.0, 0.0, 1.0]; 5]),
            colors: None,
            faces: vec![],
        };
        let g = build_adjacency(&cloud, &InstanceMask::new(vec![0, 1, 2, 3, 4], 1.0).unwrap()).unwrap();
        assert_eq!(g.edges.len(), 10);
    }

    #[test]
    fn weight_rule() {
        let z = [0.0, 0.0, 1.0];
        let x = [1.0, 0.0, 0.0];
        let o = [0.0, 0.0, 0.0];
        assert_eq!(edge_weight(&z, &z, &o, &[1.0, 0.0, -1.0]), 0.0);
        assert_eq!(edge_weight(&z, &z, &o, &[1.0, 0.0, 1.0]), 0.0);
        // neighbor above the tangent plane: concave, weight unchanged
        assert_eq!(edge_weight(&z, &x, &o, &[0.1, 0.0, 0.1]), 1.0);
        // below the tangent plane: convex, weight squared
        assert_eq!(edge_weight(&z, &x, &o, &[0.1, 0.0, -0.1]), 1.0);
        let s = 3f64.sqrt() / 2.0;
        let n60 = [s, 0.0, 0.5];
        let w = edge_weight(&z, &n60, &o, &[0.1, 0.0, -0.05]);
        assert!((w - 0.25).abs() < 1e-12, "{w}");
        let w = edge_weight(&z, &n60, &o, &[0.1, 0.0, 0.05]);
        assert!((w - 0.5).abs() < 1e-12, "{w}");
        // antiparallel normals clamp to 2
        assert_eq!(edge_weight(&z, &[0.0, 0.0, -1.0], &o, &[1.0, 0.0, 0.0]), 2.0);
    }
}
