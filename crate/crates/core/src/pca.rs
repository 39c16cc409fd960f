//! Per-point least-squares normals: the unregularized problem
//! `argmin_{‖n‖=1} Σ_j ⟨n, x_j - x_i⟩²`, solved as the smallest eigenvector
//! of the 3×3 scatter matrix. Used to initialize the optimizer and as a
//! baseline estimator.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::graph::NeighborGraph;
use crate::types::{NormalField, Point3, PointCloud};

/// Two smallest eigenvalues below this fraction of the largest flag the
/// neighborhood as degenerate (collinear or coincident points).
pub const DEGENERATE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaNormal {
    pub normal: Vector3<f64>,
    /// Smallest eigenvalue of the scatter matrix, i.e. the attained objective.
    pub eigenvalue: f64,
    pub degenerate: bool,
}

/// Normals for every point, with the per-point degeneracy flags.
#[derive(Debug, Clone)]
pub struct PcaField {
    pub field: NormalField,
    pub degenerate: Vec<bool>,
}

impl PcaField {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// `Σ (x - center)(x - center)ᵀ` over the neighborhood.
pub fn scatter(center: &Point3, neighborhood: &[Point3]) -> Matrix3<f64> {
    neighborhood.iter().fold(Matrix3::zeros(), |acc, x| {
        let d = x - center;
        acc + d * d.transpose()
    })
}

/// Flips `n` so its last component with magnitude above 1e-12 is positive.
pub fn canonical_sign(n: Vector3<f64>) -> Vector3<f64> {
    match n.iter().rev().find(|c| c.abs() > 1e-12) {
        Some(&c) if c < 0.0 => -n,
        _ => n,
    }
}

/// Least-squares plane normal through `center`.
pub fn pca_normal(center: &Point3, neighborhood: &[Point3]) -> PcaNormal {
    let m = scatter(center, neighborhood);
    let (eigenvalue, normal, degenerate) = smallest_eigenpair(&m);
    PcaNormal {
        normal: canonical_sign(normal),
        eigenvalue,
        degenerate,
    }
}

/// [`pca_normal`] at every point over its neighbor list.
pub fn pca_field(cloud: &PointCloud, graph: &NeighborGraph) -> PcaField {
    let pts = cloud.points();
    let results: Vec<PcaNormal> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let m = graph
                .neighbors(i)
                .iter()
                .fold(Matrix3::zeros(), |acc, &j| {
                    let d = pts[j] - pts[i];
                    acc + d * d.transpose()
                });
            let (eigenvalue, normal, degenerate) = smallest_eigenpair(&m);
            PcaNormal {
                normal: canonical_sign(normal),
                eigenvalue,
                degenerate,
            }
        })
        .collect();
    PcaField {
        field: NormalField::from_unit_unchecked(results.iter().map(|r| r.normal).collect()),
        degenerate: results.iter().map(|r| r.degenerate).collect(),
    }
}

/// Eigenvalues of a symmetric 3×3 matrix in ascending order (trigonometric
/// closed form).
pub fn symmetric_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    if p1 == 0.0 {
        let mut d = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let middle = 3.0 * q - largest - smallest;
    [smallest, middle.clamp(smallest, largest), largest]
}

/// Eigenvector for a simple eigenvalue: the largest cross product of two rows
/// of `a - λI`.
fn eigenvector_by_cross(a: &Matrix3<f64>, lambda: f64) -> Option<Vector3<f64>> {
    let s = a - Matrix3::identity() * lambda;
    let rows = [s.row(0).transpose(), s.row(1).transpose(), s.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let best = candidates
        .iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let n2 = best.norm_squared();
    (n2 > 0.0 && n2.is_finite()).then(|| best / n2.sqrt())
}

/// Eigenvalues (ascending) and major-axis angle of `a` restricted to span{u, w}.
fn block_eigen(a: &Matrix3<f64>, u: &Vector3<f64>, w: &Vector3<f64>) -> (f64, f64, f64) {
    let b00 = u.dot(&(a * u));
    let b01 = u.dot(&(a * w));
    let b11 = w.dot(&(a * w));
    let mean = 0.5 * (b00 + b11);
    let radius = (0.25 * (b00 - b11).powi(2) + b01 * b01).sqrt();
    let theta = 0.5 * (2.0 * b01).atan2(b00 - b11);
    (mean - radius, mean + radius, theta)
}

fn orthonormal_complement(v: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if v.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = v.cross(&helper).normalize();
    let w = v.cross(&u);
    (u, w)
}

/// Smallest eigenvalue and a unit eigenvector of a symmetric PSD 3×3 matrix,
/// plus the degeneracy flag.
///
/// The eigenvector of whichever extreme eigenvalue is better separated is
/// taken from row cross products; when that is the largest one, the smallest
/// eigenvector is then resolved by an exact 2×2 rotation in its orthogonal
/// complement. This keeps the result accurate for near-repeated eigenvalues.
pub fn smallest_eigenpair(m: &Matrix3<f64>) -> (f64, Vector3<f64>, bool) {
    let scale = m.amax();
    if !scale.is_finite() || scale <= 0.0 {
        return (0.0, Vector3::z(), true);
    }
    let a = m / scale;
    let [e_min, e_mid, e_max] = symmetric_eigenvalues(&a);
    if e_max - e_min <= f64::EPSILON * 4.0 {
        // a multiple of the identity: every direction is an eigenvector
        return (m[(0, 0)], Vector3::z(), false);
    }

    // The trigonometric eigenvalues lose about half the digits near a
    // repeated root; they only pick the branch. The 2×2 block in the
    // complement of the well-separated eigenvector gives the accurate split.
    let (v, mid, top) = if e_max - e_mid >= e_mid - e_min {
        let top = eigenvector_by_cross(&a, e_max).unwrap_or_else(Vector3::x);
        let (u, w) = orthonormal_complement(&top);
        let (_, hi, theta) = block_eigen(&a, &u, &w);
        // (cos θ, sin θ) spans the larger eigenvalue of the 2×2 block
        let small = Vector2::new(-theta.sin(), theta.cos());
        let v = (u * small.x + w * small.y).normalize();
        (v, hi, top.dot(&(a * top)))
    } else {
        let v = eigenvector_by_cross(&a, e_min).unwrap_or_else(Vector3::z);
        let (u, w) = orthonormal_complement(&v);
        let (lo, hi, _) = block_eigen(&a, &u, &w);
        (v, lo, hi)
    };
    let degenerate = mid < DEGENERATE_RATIO * top;
    let eigenvalue = v.dot(&(m * v));
    (eigenvalue, v, degenerate)
}
