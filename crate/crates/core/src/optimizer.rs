//! Graph-regularized normal estimation by projected gradient descent.
//!
//! The objective over unit-row normal fields `N` is
//!
//! ```text
//! ℒ(N) = Σ_i n_iᵀ X_c,iᵀ W_i X_c,i n_i  +  λ Σ_{j=1..3} n_(j)ᵀ L n_(j)
//! ```
//!
//! where row `j` of `X_c,i` is `x_j - x_i` for the `j`-th neighbor of point
//! `i`, `W_i` is a diagonal weight matrix (identity when unweighted) and `L`
//! is the normalized graph Laplacian. Each iteration recomputes the weights
//! from the current field, takes a gradient step with the weights held fixed
//! and renormalizes every row:
//!
//! ```text
//! n_{t+1} = rownormalize(n_t - α ∇ℒ(n_t))
//! ```
//!
//! Loss and gradient are assembled point by point; the `3m × 3m` quadratic
//! forms are never materialized.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::pca::{pca_field, symmetric_eigenvalues};
use crate::types::{NormalField, OptimizerConfig, PointCloud, Weighting};

/// Upper clamp on distance-based weights.
pub const MAX_WEIGHT: f64 = 1e6;

/// Rows with a pre-projection norm below this keep their previous value.
pub const PROJECTION_FLOOR: f64 = 1e-12;

/// Safety factor applied to the inverse curvature bound when deriving α.
pub const STEP_SAFETY: f64 = 0.9;

/// Neighbor offsets `x_j - x_i` for every point, plus the unweighted scatter
/// matrix `X_c,iᵀ X_c,i`.
#[derive(Debug, Clone)]
pub struct CenteredNeighborhoods {
    k: usize,
    offsets: Vec<Vector3<f64>>,
    grams: Vec<Matrix3<f64>>,
}

impl CenteredNeighborhoods {
    pub fn new(cloud: &PointCloud, graph: &NeighborGraph) -> Result<Self> {
        let m = cloud.len();
        if graph.len() != m {
            return Err(Error::LengthMismatch {
                what: "neighbor graph",
                expected: m,
                got: graph.len(),
            });
        }
        let k = graph.k();
        let pts = cloud.points();
        let mut offsets = Vec::with_capacity(m * k);
        let mut grams = Vec::with_capacity(m);
        for i in 0..m {
            let mut g = Matrix3::zeros();
            for &j in graph.neighbors(i) {
                let d = pts[j] - pts[i];
                g += d * d.transpose();
                offsets.push(d);
            }
            grams.push(g);
        }
        Ok(CenteredNeighborhoods { k, offsets, grams })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Rows of `X_c,i`.
    pub fn offsets(&self, i: usize) -> &[Vector3<f64>] {
        &self.offsets[i * self.k..(i + 1) * self.k]
    }

    pub fn gram(&self, i: usize) -> &Matrix3<f64> {
        &self.grams[i]
    }

    /// `X_c,iᵀ W_i X_c,i`.
    pub fn weighted_gram(&self, i: usize, weights: &[f64]) -> Matrix3<f64> {
        self.offsets(i)
            .iter()
            .zip(weights)
            .fold(Matrix3::zeros(), |acc, (d, &w)| acc + d * d.transpose() * w)
    }

    /// `X_c,iᵀ W_i X_c,i n` without forming the matrix.
    fn apply(&self, i: usize, weights: Option<&[f64]>, n: &Vector3<f64>) -> Vector3<f64> {
        match weights {
            None => self.grams[i] * n,
            Some(w) => self
                .offsets(i)
                .iter()
                .zip(w)
                .fold(Vector3::zeros(), |acc, (d, &wj)| acc + d * (wj * d.dot(n))),
        }
    }
}

/// Diagonal entries of every `W_i`, stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    k: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn identity(m: usize, k: usize) -> Self {
        WeightMatrix {
            k,
            values: vec![1.0; m * k],
        }
    }

    pub fn from_values(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || !values.len().is_multiple_of(k) {
            return Err(Error::invalid("weights", values.len(), "length must be a multiple of k"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid("weights", v, "entries must be finite and >= 0"));
        }
        Ok(WeightMatrix { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Diagonal of `W_i`, aligned with the neighbor list of point `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// One optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Loss at the iterate entering this step, under that iterate's weights.
    pub loss: f64,
    /// `‖n_{t+1} - n_t‖` over the flattened field.
    pub displacement: f64,
    pub seconds: f64,
}

/// Output of [`project`].
#[derive(Debug, Clone)]
pub struct Projection {
    pub field: NormalField,
    /// Rows that fell back to the previous iterate.
    pub fallback: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub field: NormalField,
    pub trace: Vec<TraceRecord>,
    /// Loss of the initial (PCA) field under its own weights.
    pub initial_loss: f64,
    /// Loss of the returned field under its own weights.
    pub final_loss: f64,
    /// True when the displacement criterion stopped the loop.
    pub converged: bool,
    /// Step size actually used.
    pub alpha: f64,
    /// Per-point degeneracy flags of the PCA initialization.
    pub degenerate: Vec<bool>,
}

impl Estimate {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

fn check_field(expected: usize, field: &NormalField) -> Result<()> {
    if field.len() != expected {
        return Err(Error::LengthMismatch {
            what: "normal field",
            expected,
            got: field.len(),
        });
    }
    Ok(())
}

fn check_rows(expected: usize, rows: &[Vector3<f64>]) -> Result<()> {
    if rows.len() != expected {
        return Err(Error::LengthMismatch {
            what: "normal rows",
            expected,
            got: rows.len(),
        });
    }
    Ok(())
}

fn check_weights(hood: &CenteredNeighborhoods, weights: Option<&WeightMatrix>) -> Result<()> {
    if let Some(w) = weights {
        if w.k() != hood.k() || w.len() != hood.len() {
            return Err(Error::LengthMismatch {
                what: "weight matrix",
                expected: hood.len() * hood.k(),
                got: w.values().len(),
            });
        }
    }
    Ok(())
}

/// Evaluates the objective for a fixed neighborhood and graph.
#[derive(Debug, Clone)]
pub struct Objective<'g> {
    graph: &'g NeighborGraph,
    hood: CenteredNeighborhoods,
    lambda: f64,
}

impl<'g> Objective<'g> {
    pub fn new(cloud: &PointCloud, graph: &'g NeighborGraph, lambda: f64) -> Result<Self> {
        Ok(Objective {
            graph,
            hood: CenteredNeighborhoods::new(cloud, graph)?,
            lambda,
        })
    }

    pub fn neighborhoods(&self) -> &CenteredNeighborhoods {
        &self.hood
    }

    /// `(LN)_i` for every row.
    fn laplacian_rows(&self, n: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let l = self.graph.laplacian();
        (0..n.len())
            .map(|i| l.row(i).fold(Vector3::zeros(), |acc, (j, v)| acc + n[j] * v))
            .collect()
    }

    pub fn loss(&self, field: &NormalField, weights: Option<&WeightMatrix>) -> Result<f64> {
        check_field(self.hood.len(), field)?;
        self.loss_at(field.normals(), weights)
    }

    /// The objective as a plain quadratic function of the rows, unit length or not.
    pub fn loss_at(&self, n: &[Vector3<f64>], weights: Option<&WeightMatrix>) -> Result<f64> {
        check_rows(self.hood.len(), n)?;
        check_weights(&self.hood, weights)?;
        let data: f64 = (0..n.len())
            .map(|i| n[i].dot(&self.hood.apply(i, weights.map(|w| w.point(i)), &n[i])))
            .sum();
        let smooth: f64 = if self.lambda == 0.0 {
            0.0
        } else {
            self.laplacian_rows(n)
                .iter()
                .zip(n)
                .map(|(ln, ni)| ln.dot(ni))
                .sum()
        };
        let total = data + self.lambda * smooth;
        if !total.is_finite() {
            return Err(Error::invalid("loss", total, "non-finite objective value"));
        }
        Ok(total)
    }

    /// Flattened gradient, `2 X_c,iᵀ W_i X_c,i n_i + 2λ (LN)_i` per row.
    pub fn gradient(&self, field: &NormalField, weights: Option<&WeightMatrix>) -> Result<Vec<f64>> {
        check_field(self.hood.len(), field)?;
        self.gradient_at(field.normals(), weights)
    }

    /// Gradient of [`Objective::loss_at`].
    pub fn gradient_at(&self, n: &[Vector3<f64>], weights: Option<&WeightMatrix>) -> Result<Vec<f64>> {
        check_rows(self.hood.len(), n)?;
        check_weights(&self.hood, weights)?;
        let lap = if self.lambda == 0.0 {
            None
        } else {
            Some(self.laplacian_rows(n))
        };
        let mut g = Vec::with_capacity(3 * n.len());
        for i in 0..n.len() {
            let mut gi = self.hood.apply(i, weights.map(|w| w.point(i)), &n[i]) * 2.0;
            if let Some(lap) = &lap {
                gi += lap[i] * (2.0 * self.lambda);
            }
            g.extend_from_slice(gi.as_slice());
        }
        Ok(g)
    }

    /// Loss and gradient from one pass over the rows.
    pub fn loss_and_gradient(&self, field: &NormalField, weights: Option<&WeightMatrix>) -> Result<(f64, Vec<f64>)> {
        check_field(self.hood.len(), field)?;
        check_weights(&self.hood, weights)?;
        let n = field.normals();
        let lap = (self.lambda != 0.0).then(|| self.laplacian_rows(n));
        let mut g = Vec::with_capacity(3 * n.len());
        let mut total = 0.0;
        for i in 0..n.len() {
            let mut half = self.hood.apply(i, weights.map(|w| w.point(i)), &n[i]);
            if let Some(lap) = &lap {
                half += lap[i] * self.lambda;
            }
            total += n[i].dot(&half);
            g.extend_from_slice((half * 2.0).as_slice());
        }
        if !total.is_finite() {
            return Err(Error::invalid("loss", total, "non-finite objective value"));
        }
        Ok((total, g))
    }

    /// Step size `STEP_SAFETY / H`, where
    /// `H = 2 max_i ‖X_c,iᵀ W_i X_c,i‖₂ + 4λ` bounds the Hessian norm using
    /// the largest weights the strategy can produce (Laplacian eigenvalues are
    /// at most 2). Any `α < 1/H` makes every projected step non-increasing in
    /// the loss while the weights are held fixed.
    pub fn default_alpha(&self, cloud: &PointCloud, strategy: Weighting) -> f64 {
        let worst = match strategy {
            Weighting::None | Weighting::DotProduct => None,
            Weighting::InverseDistance | Weighting::DotProductOverDistance => Some(
                inverse_distance_weights(cloud, self.graph),
            ),
        };
        let data = (0..self.hood.len())
            .map(|i| {
                let g = match &worst {
                    None => *self.hood.gram(i),
                    Some(w) => self.hood.weighted_gram(i, w.point(i)),
                };
                // the closed-form root carries ~1e-8 relative error near repeated roots
                symmetric_eigenvalues(&g)[2] * (1.0 + 1e-6)
            })
            .fold(0.0, f64::max);
        let hessian_bound = 2.0 * data + 4.0 * self.lambda;
        if hessian_bound > 0.0 {
            STEP_SAFETY / hessian_bound
        } else {
            1.0
        }
    }
}

/// Objective value at `field`. `weights = None` means `W_i = I`.
pub fn loss(
    cloud: &PointCloud,
    graph: &NeighborGraph,
    field: &NormalField,
    lambda: f64,
    weights: Option<&WeightMatrix>,
) -> Result<f64> {
    Objective::new(cloud, graph, lambda)?.loss(field, weights)
}

/// Flattened gradient (length `3m`) with the weights held fixed.
pub fn gradient(
    cloud: &PointCloud,
    graph: &NeighborGraph,
    field: &NormalField,
    lambda: f64,
    weights: Option<&WeightMatrix>,
) -> Result<Vec<f64>> {
    Objective::new(cloud, graph, lambda)?.gradient(field, weights)
}

/// Normalizes each consecutive triple of `raw`. Triples shorter than
/// [`PROJECTION_FLOOR`] take the corresponding row of `previous`.
pub fn project(raw: &[f64], previous: &NormalField) -> Result<Projection> {
    if raw.len() != 3 * previous.len() {
        return Err(Error::LengthMismatch {
            what: "flattened field",
            expected: 3 * previous.len(),
            got: raw.len(),
        });
    }
    let mut fallback = Vec::new();
    let normals = raw
        .chunks_exact(3)
        .enumerate()
        .map(|(i, c)| {
            let v = Vector3::new(c[0], c[1], c[2]);
            let norm = v.norm();
            if norm < PROJECTION_FLOOR || !norm.is_finite() {
                fallback.push(i);
                *previous.get(i)
            } else {
                v / norm
            }
        })
        .collect();
    Ok(Projection {
        field: NormalField::from_unit_unchecked(normals),
        fallback,
    })
}

fn inverse_distance_weights(cloud: &PointCloud, graph: &NeighborGraph) -> WeightMatrix {
    let pts = cloud.points();
    let values = (0..cloud.len())
        .flat_map(|i| {
            graph
                .neighbors(i)
                .iter()
                .map(move |&j| clamped_inverse(1.0, (pts[j] - pts[i]).norm()))
        })
        .collect();
    WeightMatrix {
        k: graph.k(),
        values,
    }
}

fn clamped_inverse(numerator: f64, distance: f64) -> f64 {
    (numerator / distance.max(f64::MIN_POSITIVE)).min(MAX_WEIGHT)
}

/// Diagonal weights between each point and each of its neighbors.
pub fn compute_weights(
    cloud: &PointCloud,
    graph: &NeighborGraph,
    field: &NormalField,
    strategy: Weighting,
) -> Result<WeightMatrix> {
    let m = cloud.len();
    check_field(m, field)?;
    let k = graph.k();
    if strategy == Weighting::InverseDistance {
        return Ok(inverse_distance_weights(cloud, graph));
    }
    let pts = cloud.points();
    let n = field.normals();
    let mut values = Vec::with_capacity(m * k);
    for i in 0..m {
        for &j in graph.neighbors(i) {
            let dot = n[i].dot(&n[j]).abs();
            values.push(match strategy {
                Weighting::None => 1.0,
                Weighting::DotProduct => dot,
                Weighting::DotProductOverDistance => clamped_inverse(dot, (pts[j] - pts[i]).norm()),
                Weighting::InverseDistance => unreachable!(),
            });
        }
    }
    Ok(WeightMatrix { k, values })
}

/// Builds the neighbor graph and runs [`estimate_with_graph`].
pub fn estimate(cloud: &PointCloud, config: &OptimizerConfig) -> Result<Estimate> {
    config.validate(cloud.len())?;
    let graph = NeighborGraph::build(cloud, config.k, config.sigma)?;
    estimate_with_graph(cloud, &graph, config)
}

/// Projected gradient descent from the PCA field, reweighting each
/// iteration, until the step displacement drops below `epsilon` or
/// `max_iters` steps have been taken.
pub fn estimate_with_graph(cloud: &PointCloud, graph: &NeighborGraph, config: &OptimizerConfig) -> Result<Estimate> {
    config.validate(cloud.len())?;
    if graph.k() != config.k {
        return Err(Error::invalid("k", graph.k(), "graph was built with a different k"));
    }
    let objective = Objective::new(cloud, graph, config.lambda)?;
    let alpha = config
        .alpha
        .unwrap_or_else(|| objective.default_alpha(cloud, config.weighting));
    let init = pca_field(cloud, graph);
    let mut field = init.field;

    let strategy = config.weighting;
    let fixed_weights = (strategy == Weighting::InverseDistance).then(|| inverse_distance_weights(cloud, graph));
    let weights_at = |f: &NormalField| -> Result<Option<WeightMatrix>> {
        Ok(match strategy {
            Weighting::None => None,
            Weighting::InverseDistance => fixed_weights.clone(),
            s => Some(compute_weights(cloud, graph, f, s)?),
        })
    };

    let mut weights = weights_at(&field)?;
    let initial_loss = objective.loss(&field, weights.as_ref())?;
    let mut trace = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_iters {
        let start = Instant::now();
        if iter > 0 && strategy.depends_on_normals() {
            weights = weights_at(&field)?;
        }
        let (loss, grad) = objective
            .loss_and_gradient(&field, weights.as_ref())
            .map_err(|_| Error::Diverged { iter, alpha })?;
        let raw: Vec<f64> = field
            .to_flat()
            .iter()
            .zip(&grad)
            .map(|(n, g)| n - alpha * g)
            .collect();
        let next = project(&raw, &field)?.field;
        let displacement = next.distance(&field);
        field = next;
        trace.push(TraceRecord {
            iter,
            loss,
            displacement,
            seconds: start.elapsed().as_secs_f64(),
        });
        if displacement < config.epsilon {
            converged = true;
            break;
        }
    }
    let final_loss = objective.loss(&field, weights_at(&field)?.as_ref())?;
    Ok(Estimate {
        field,
        trace,
        initial_loss,
        final_loss,
        converged,
        alpha,
        degenerate: init.degenerate,
    })
}

/// Writes the trace as `iter,loss,displacement,seconds`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_trace(&mut buf, trace).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_trace<W: Write>(mut w: W, trace: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(w, "iter,loss,displacement,seconds")?;
    for r in trace {
        writeln!(w, "{},{},{},{}", r.iter, r.loss, r.displacement, r.seconds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Point3;

    fn pair_graph(a: Point3, b: Point3) -> (PointCloud, NeighborGraph) {
        let c = PointCloud::new(vec![a, b]).unwrap();
        let g = NeighborGraph::build(&c, 1, 1.0).unwrap();
        (c, g)
    }

    #[test]
    fn projection_rules() {
        let prev = NormalField::uniform(3, Vector3::x()).unwrap();
        let p = project(&[0.0, 0.0, 2.0, 3.0, 4.0, 0.0, 1e-15, 0.0, 0.0], &prev).unwrap();
        assert_eq!(p.field.get(0), &Vector3::new(0.0, 0.0, 1.0));
        assert!((p.field.get(1) - Vector3::new(0.6, 0.8, 0.0)).norm() < 1e-15);
        assert_eq!(p.field.get(2), &Vector3::x());
        assert_eq!(p.fallback, vec![2]);
        assert!(project(&[1.0, 0.0], &prev).is_err());
    }

    #[test]
    fn weight_examples() {
        let (c, g) = pair_graph(Point3::zeros(), Point3::new(1.0, 0.0, 0.0));
        let same = NormalField::uniform(2, Vector3::z()).unwrap();
        for s in [Weighting::DotProduct, Weighting::InverseDistance, Weighting::DotProductOverDistance] {
            let w = compute_weights(&c, &g, &same, s).unwrap();
            assert!((w.point(0)[0] - 1.0).abs() < 1e-15, "{s}");
        }
        let perp = NormalField::new(vec![Vector3::z(), Vector3::x()]).unwrap();
        for s in [Weighting::DotProduct, Weighting::DotProductOverDistance] {
            assert_eq!(compute_weights(&c, &g, &perp, s).unwrap().point(0)[0], 0.0);
        }
        let (c, g) = pair_graph(Point3::zeros(), Point3::new(1e-12, 0.0, 0.0));
        let w = compute_weights(&c, &g, &same, Weighting::InverseDistance).unwrap();
        assert_eq!(w.point(0)[0], MAX_WEIGHT);
        let (c, g) = pair_graph(Point3::zeros(), Point3::zeros());
        let w = compute_weights(&c, &g, &perp, Weighting::DotProductOverDistance).unwrap();
        assert_eq!(w.point(1)[0], 0.0);
    }

    #[test]
    fn weight_matrix_validation() {
        assert!(WeightMatrix::from_values(2, vec![1.0, 0.5, 0.0, 3.0]).is_ok());
        assert!(WeightMatrix::from_values(2, vec![1.0, -0.5]).is_err());
        assert!(WeightMatrix::from_values(2, vec![1.0, f64::NAN]).is_err());
        assert!(WeightMatrix::from_values(3, vec![1.0; 4]).is_err());
    }

    #[test]
    fn plane_loss_is_zero() {
        let pts: Vec<Point3> = (0..25)
            .map(|i| Point3::new((i % 5) as f64 * 0.1, (i / 5) as f64 * 0.1, 0.0))
            .collect();
        let c = PointCloud::new(pts).unwrap();
        let g = NeighborGraph::build(&c, 6, 1.0).unwrap();
        let f = NormalField::uniform(25, Vector3::z()).unwrap();
        assert!(loss(&c, &g, &f, 0.0, None).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let s = crate::synthetic::generate_three_planes(100, 0.05, 1).unwrap();
        let cfg = OptimizerConfig {
            max_iters: 0,
            ..OptimizerConfig::default()
        };
        let est = estimate(&s.cloud, &cfg).unwrap();
        let g = NeighborGraph::build(&s.cloud, cfg.k, cfg.sigma).unwrap();
        assert_eq!(est.field, pca_field(&s.cloud, &g).field);
        assert!(est.trace.is_empty());
        assert!(!est.converged);
    }

    #[test]
    fn trace_csv_layout() {
        let mut buf = Vec::new();
        write_trace(
            &mut buf,
            &[TraceRecord {
                iter: 0,
                loss: 1.5,
                displacement: 0.25,
                seconds: 0.0,
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,loss,displacement,seconds\n0,1.5,0.25,0\n");
    }
}
