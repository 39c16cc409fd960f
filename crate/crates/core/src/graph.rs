//! k-nearest-neighbor graph, Gaussian adjacency and normalized Laplacian.
//!
//! Edges are symmetrized with the "or" rule: `i` and `j` are adjacent when
//! either ranks the other among its `k` nearest points, so adjacency rows may
//! hold more than `k` entries. The per-point neighbor lists stay exactly `k`
//! long and are what the data term of the objective consumes.
//!
//! ```text
//! A_ij = exp(-‖x_i - x_j‖² / σ²)   for every symmetrized edge
//! d_i  = Σ_j A_ij
//! L    = I - D^{-1/2} A D^{-1/2}
//! ```

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdtree::{brute_force_nearest, KdTree};
use crate::sparse::CsrMatrix;
use crate::types::{NormalField, PointCloud};

/// Below this many points the exhaustive search is used instead of a kd-tree.
pub const BRUTE_FORCE_LIMIT: usize = 64;

/// Neighbor lists plus the sparse operators built from them.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    k: usize,
    sigma: f64,
    neighbors: Vec<Vec<usize>>,
    adjacency: CsrMatrix,
    degree: Vec<f64>,
    laplacian: CsrMatrix,
}

impl NeighborGraph {
    pub fn build(cloud: &PointCloud, k: usize, sigma: f64) -> Result<Self> {
        let neighbors = build_knn(cloud, k)?;
        Self::from_neighbors(cloud, neighbors, sigma)
    }

    /// Builds the operators for precomputed neighbor lists.
    pub fn from_neighbors(cloud: &PointCloud, neighbors: Vec<Vec<usize>>, sigma: f64) -> Result<Self> {
        let k = neighbors.first().map_or(0, Vec::len);
        let adjacency = build_adjacency(cloud, &neighbors, sigma)?;
        let degree = adjacency.row_sums();
        let laplacian = build_laplacian(&adjacency, &degree)?;
        Ok(NeighborGraph {
            k,
            sigma,
            neighbors,
            adjacency,
            degree,
            laplacian,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// The `k` nearest neighbors of point `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    /// Writes `adjacency.coo` and `laplacian.coo` into `dir`.
    pub fn dump_coo(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, m) in [("adjacency.coo", &self.adjacency), ("laplacian.coo", &self.laplacian)] {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            m.write_coo(&mut w).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// For every point, the indices of its `k` nearest other points in ascending
/// distance. Equal distances resolve to the lower index.
pub fn build_knn(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let m = cloud.len();
    if k == 0 || k >= m {
        return Err(Error::InvalidK { k, m });
    }
    let pts = cloud.points();
    if m < BRUTE_FORCE_LIMIT {
        return Ok((0..m).map(|i| brute_force_nearest(pts, i, k)).collect());
    }
    let tree = KdTree::build(pts);
    Ok((0..m)
        .into_par_iter()
        .map(|i| tree.nearest(&pts[i], k, Some(i)))
        .collect())
}

/// Gaussian-kernel adjacency over the symmetrized neighbor relation.
pub fn build_adjacency(cloud: &PointCloud, neighbors: &[Vec<usize>], sigma: f64) -> Result<CsrMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", sigma, "kernel bandwidth must be > 0"));
    }
    let m = cloud.len();
    if neighbors.len() != m {
        return Err(Error::LengthMismatch {
            what: "neighbor lists",
            expected: m,
            got: neighbors.len(),
        });
    }
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            if j >= m || j == i {
                return Err(Error::invalid("neighbor index", j, "out of range or self-loop"));
            }
            cols[i].push(j);
            cols[j].push(i);
        }
    }
    let pts = cloud.points();
    let s2 = sigma * sigma;
    let rows = cols
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.sort_unstable();
            c.dedup();
            c.into_iter()
                .map(|j| (j, (-(pts[i] - pts[j]).norm_squared() / s2).exp()))
                .collect()
        })
        .collect();
    Ok(CsrMatrix::from_rows(m, rows))
}

/// `L = I - D^{-1/2} A D^{-1/2}`, assuming `A` has a zero diagonal.
pub fn build_laplacian(adjacency: &CsrMatrix, degree: &[f64]) -> Result<CsrMatrix> {
    let m = adjacency.nrows();
    if degree.len() != m {
        return Err(Error::LengthMismatch {
            what: "degree",
            expected: m,
            got: degree.len(),
        });
    }
    if let Some(i) = degree.iter().position(|&d| d.is_nan() || d <= 0.0) {
        return Err(Error::ZeroDegree(i));
    }
    let rows = (0..m)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(adjacency.row_nnz(i) + 1);
            let mut placed = false;
            for (j, a) in adjacency.row(i) {
                if !placed && j > i {
                    row.push((i, 1.0));
                    placed = true;
                }
                let v = if j == i {
                    placed = true;
                    1.0 - a / degree[i]
                } else {
                    -a / (degree[i] * degree[j]).sqrt()
                };
                row.push((j, v));
            }
            if !placed {
                row.push((i, 1.0));
            }
            row
        })
        .collect();
    Ok(CsrMatrix::from_rows(m, rows))
}

/// `Σ_j n_(j)ᵀ L n_(j)` over the three columns of the normal matrix.
pub fn laplacian_quadratic(laplacian: &CsrMatrix, field: &NormalField) -> Result<f64> {
    let m = laplacian.nrows();
    if field.len() != m || laplacian.ncols() != m {
        return Err(Error::LengthMismatch {
            what: "normal field",
            expected: m,
            got: field.len(),
        });
    }
    let n = field.normals();
    Ok((0..m)
        .map(|i| laplacian.row(i).map(|(j, v)| v * n[i].dot(&n[j])).sum::<f64>())
        .sum())
}
