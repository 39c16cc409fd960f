//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use graph_normals::optimizer::WeightMatrix;
use graph_normals::{NeighborGraph, NormalField, Point3, PointCloud};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cloud(rng: &mut ChaCha8Rng, m: usize) -> PointCloud {
    PointCloud::new(
        (0..m)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, m: usize) -> NormalField {
    NormalField::normalized(
        (0..m)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, m: usize, k: usize) -> WeightMatrix {
    WeightMatrix::from_values(k, (0..m * k).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap()
}

/// `R_i`: the 3×3m block selector with `R_i n = n_i`.
pub fn r_matrix(m: usize, i: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(3, 3 * m);
    for a in 0..3 {
        r[(a, 3 * i + a)] = 1.0;
    }
    r
}

/// `C_j`: the m×3m selector of coordinate column `j`, `(C_j n)_i = n_i[j]`.
pub fn c_matrix(m: usize, j: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(m, 3 * m);
    for i in 0..m {
        c[(i, 3 * i + j)] = 1.0;
    }
    c
}

/// Normalized Laplacian assembled densely from the neighbor lists alone.
pub fn dense_laplacian(cloud: &PointCloud, neighbors: &[Vec<usize>], sigma: f64) -> DMatrix<f64> {
    let m = cloud.len();
    let p = cloud.points();
    let mut a = DMatrix::zeros(m, m);
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            let w = (-(p[i] - p[j]).norm_squared() / (sigma * sigma)).exp();
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    let d: Vec<f64> = (0..m).map(|i| a.row(i).sum()).collect();
    DMatrix::from_fn(m, m, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - a[(i, j)] / (d[i] * d[j]).sqrt()
    })
}

/// The full 3m×3m matrix `Q` with `loss = nᵀ Q n`.
pub fn dense_quadratic(
    cloud: &PointCloud,
    graph: &NeighborGraph,
    lambda: f64,
    weights: Option<&WeightMatrix>,
) -> DMatrix<f64> {
    let m = cloud.len();
    let k = graph.k();
    let p = cloud.points();
    let mut q = DMatrix::zeros(3 * m, 3 * m);
    for i in 0..m {
        let mut xc = DMatrix::zeros(k, 3);
        for (row, &j) in graph.neighbors(i).iter().enumerate() {
            let d = p[j] - p[i];
            for a in 0..3 {
                xc[(row, a)] = d[a];
            }
        }
        let w = DMatrix::from_diagonal(&DVector::from_fn(k, |row, _| weights.map_or(1.0, |w| w.point(i)[row])));
        let r = r_matrix(m, i);
        q += r.transpose() * xc.transpose() * w * &xc * r;
    }
    let l = dense_laplacian(cloud, graph.neighbor_lists(), graph.sigma());
    for j in 0..3 {
        let c = c_matrix(m, j);
        q += (c.transpose() * &l * c) * lambda;
    }
    q
}

pub fn flat(rows: &[Vector3<f64>]) -> DVector<f64> {
    DVector::from_iterator(3 * rows.len(), rows.iter().flat_map(|v| [v.x, v.y, v.z]))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b).abs())
}
