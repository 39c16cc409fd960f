//! Domain types shared across the crate.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// A point in 3D space, in meters.
pub type Point3 = Vector3<f64>;

/// Tolerance on `|‖n‖ - 1|` accepted by [`NormalField::new`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// An ordered, non-empty set of finite 3D points.
///
/// Point indices are stable: index `i` refers to the same point in every
/// structure derived from the cloud (neighbor graph, normal field, labels).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::NoPoints);
        }
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinitePoint { index });
        }
        Ok(PointCloud { points })
    }

    pub fn from_coords(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Point3 {
        &self.points[i]
    }

    /// Returns a new cloud with `out[i] = self[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// Per-point unit normals: the rows `n_i` of the normal matrix `N`.
///
/// The flattened form used by the optimizer stores row `i` at entries
/// `3i..3i+3`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    normals: Vec<Vector3<f64>>,
}

impl NormalField {
    /// Wraps vectors that are already unit length (within [`UNIT_TOLERANCE`]).
    pub fn new(normals: Vec<Vector3<f64>>) -> Result<Self> {
        for (index, n) in normals.iter().enumerate() {
            let norm = n.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::NotUnit { index, norm });
            }
        }
        Ok(NormalField { normals })
    }

    /// Normalizes every vector; zero or non-finite vectors are rejected.
    pub fn normalized(vectors: Vec<Vector3<f64>>) -> Result<Self> {
        let mut normals = vectors;
        for (i, n) in normals.iter_mut().enumerate() {
            let norm = n.norm();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::ZeroNormal(i));
            }
            *n /= norm;
        }
        Ok(NormalField { normals })
    }

    /// Same normal at every point.
    pub fn uniform(m: usize, normal: Vector3<f64>) -> Result<Self> {
        Self::normalized(vec![normal; m])
    }

    pub(crate) fn from_unit_unchecked(normals: Vec<Vector3<f64>>) -> Self {
        NormalField { normals }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn get(&self, i: usize) -> &Vector3<f64> {
        &self.normals[i]
    }

    /// The flattened vector `n = [n_1ᵀ, …, n_mᵀ]ᵀ`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.normals.iter().flat_map(|n| [n.x, n.y, n.z]).collect()
    }

    /// Column `j` of the normal matrix, `n_(j)`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.normals.iter().map(|n| n[j]).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        NormalField {
            normals: perm.iter().map(|&i| self.normals[i]).collect(),
        }
    }

    /// Euclidean norm of the flattened difference `‖self - other‖`.
    pub fn distance(&self, other: &NormalField) -> f64 {
        self.normals
            .iter()
            .zip(&other.normals)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// How the data term of each point is reweighted between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Weighting {
    /// Plain graph-regularized objective, `W_i = I`.
    #[default]
    None,
    /// `w = |n_i · n_j|`.
    DotProduct,
    /// `w = 1 / ‖x_i - x_j‖`, clamped.
    InverseDistance,
    /// `w = |n_i · n_j| / ‖x_i - x_j‖`, clamped.
    DotProductOverDistance,
}

impl Weighting {
    pub const ALL: [Weighting; 4] = [
        Weighting::None,
        Weighting::DotProduct,
        Weighting::InverseDistance,
        Weighting::DotProductOverDistance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Weighting::None => "none",
            Weighting::DotProduct => "dot",
            Weighting::InverseDistance => "dist",
            Weighting::DotProductOverDistance => "dot-dist",
        }
    }

    /// Whether the weights depend on the current normal field.
    pub fn depends_on_normals(&self) -> bool {
        matches!(
            self,
            Weighting::DotProduct | Weighting::DotProductOverDistance
        )
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "no-weight" => Ok(Weighting::None),
            "dot" | "dot-product" | "dotproduct" => Ok(Weighting::DotProduct),
            "dist" | "inverse-distance" | "inversedistance" => Ok(Weighting::InverseDistance),
            "dot-dist" | "dot-product-over-distance" | "dotproductoverdistance" => {
                Ok(Weighting::DotProductOverDistance)
            }
            other => Err(Error::UnknownWeighting(other.to_string())),
        }
    }
}

/// Parameters of the normal estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Neighbors per point.
    pub k: usize,
    /// Weight of the Laplacian smoothness term.
    pub lambda: f64,
    /// Step size. `None` derives a safe step from a Hessian bound.
    pub alpha: Option<f64>,
    /// Stop once `‖n_t - n_{t-1}‖ < epsilon`.
    pub epsilon: f64,
    /// Bandwidth of the Gaussian adjacency kernel.
    pub sigma: f64,
    pub max_iters: usize,
    pub weighting: Weighting,
    /// Reserved for randomized initializations; the PCA warm start is deterministic.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            k: 20,
            lambda: 0.01,
            alpha: None,
            epsilon: 1e-6,
            sigma: 1.0,
            max_iters: 20_000,
            weighting: Weighting::None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Checks every parameter constraint against a cloud of `m` points.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.k == 0 || self.k >= m {
            return Err(Error::InvalidK { k: self.k, m });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", self.lambda, "must be finite and >= 0"));
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::invalid("alpha", alpha, "must be finite and > 0"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon", self.epsilon, "must be > 0"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", self.sigma, "must be finite and > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_rejects_non_finite() {
        let err = PointCloud::from_coords(&[[0.0, 0.0, 0.0], [f64::NAN, 1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFinitePoint { index: 1 }));
        assert!(PointCloud::from_coords(&[[f64::INFINITY, 0.0, 0.0]]).is_err());
        assert!(matches!(PointCloud::new(vec![]), Err(Error::NoPoints)));
    }

    #[test]
    fn normal_field_construction() {
        let f = NormalField::normalized(vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(3.0, 4.0, 0.0)])
            .unwrap();
        assert_eq!(f.get(1), &Vector3::new(0.6, 0.8, 0.0));
        assert!(NormalField::normalized(vec![Vector3::zeros()]).is_err());
        assert!(NormalField::new(vec![Vector3::new(0.0, 0.0, 1.1)]).is_err());
        assert_eq!(f.to_flat(), vec![0.0, 0.0, 1.0, 0.6, 0.8, 0.0]);
        assert_eq!(f.column(0), vec![0.0, 0.6]);
    }

    #[test]
    fn weighting_round_trips_through_strings() {
        for w in Weighting::ALL {
            assert_eq!(w.as_str().parse::<Weighting>().unwrap(), w);
        }
        assert!("bogus".parse::<Weighting>().is_err());
    }

    #[test]
    fn config_validation() {
        let c = OptimizerConfig::default();
        assert!(c.validate(21).is_ok());
        assert!(matches!(c.validate(20), Err(Error::InvalidK { .. })));
        let bad = OptimizerConfig {
            sigma: 0.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate(100).is_err());
        let bad = OptimizerConfig {
            alpha: Some(-1.0),
            ..OptimizerConfig::default()
        };
        assert!(bad.validate(100).is_err());
    }
}
