use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::model::PointCloud;
use crate::spatial::KdTree;

pub const NORMAL_NEIGHBORS: usize = 10;

/// PCA normals from each point's 10 nearest neighbors (itself included),
/// oriented towards `viewpoint`, or towards +z without one.
pub fn estimate_normals(cloud: &PointCloud, viewpoint: Option<[f64; 3]>) -> Vec<[f32; 3]> {
    let pts: Vec<[f64; 3]> = (0..cloud.len() as u32).map(|i| cloud.point(i)).collect();
    let tree = KdTree::new(pts);
    (0..cloud.len() as u32)
        .into_par_iter()
        .map(|i| {
            let p = *tree.point(i);
            let nb = tree.knn(&p, NORMAL_NEIGHBORS, None);
            let mut n = if nb.len() < 3 {
                Vector3::z()
            } else {
                let mean = nb.iter().fold(Vector3::zeros(), |acc, (j, _)| acc + Vector3::from(*tree.point(*j)))
                    / nb.len() as f64;
                let mut cov = Matrix3::zeros();
                for (j, _) in &nb {
                    let d = Vector3::from(*tree.point(*j)) - mean;
                    cov += d * d.transpose();
                }
                let eig = SymmetricEigen::new(cov);
                let imin = eig.eigenvalues.imin();
                let v = eig.eigenvectors.column(imin).into_owned();
                if v.norm() > 0.0 { v.normalize() } else { Vector3::z() }
            };
            let toward = match viewpoint {
                Some(vp) => Vector3::from(vp) - Vector3::from(p),
                None => Vector3::z(),
            };
            if n.dot(&toward) < 0.0 {
                n = -n;
            }
            [n.x as f32, n.y as f32, n.z as f32]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normals() {
        let positions: Vec<[f32; 3]> = (0..100).map(|i| [(i % 10) as f32 * 0.1, (i / 10) as f32 * 0.1, 0.5]).collect();
        let cloud = PointCloud::from_positions(positions);
        for n in estimate_normals(&cloud, None) {
            assert!((n[2] - 1.0).abs() < 1e-5, "{n:?}");
        }
        for n in estimate_normals(&cloud, Some([0.0, 0.0, -3.0])) {
            assert!((n[2] + 1.0).abs() < 1e-5, "{n:?}");
        }
    }
}
