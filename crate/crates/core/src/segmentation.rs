//! Plane extraction by normal similarity and segmentation scoring.
//!
//! Clusters are connected components of the k-NN graph after cutting every
//! edge whose normals satisfy `|n_i · n_j| <= threshold`. Scoring follows the
//! region-overlap protocol of the classic range-image segmentation
//! comparisons: a predicted region `P` and a true region `R` with overlap `O`
//! are a correct detection when `O >= T|P|` and `O >= T|R|`; unmatched regions
//! are then tested for over- and under-segmentation, and whatever remains is
//! missing (truth) or spurious (prediction).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use nalgebra::Vector3;
use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::pca::pca_normal;
use crate::types::{NormalField, Point3, PointCloud};

pub const DEFAULT_THRESHOLD: f64 = 0.95;
pub const DEFAULT_OVERLAP_TOLERANCE: f64 = 0.8;
/// Regions smaller than this get no plane model.
pub const MIN_PLANE_POINTS: usize = 3;

/// A least-squares plane `{x : ⟨normal, x⟩ = offset}` fitted to one region.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneModel {
    pub label: u32,
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub members: Vec<usize>,
    /// Sum of squared point-to-plane distances over `members`.
    pub residual_sq: f64,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn rms(&self) -> f64 {
        (self.residual_sq / self.members.len() as f64).sqrt()
    }
}

/// Labels each point with its connected component in the graph restricted to
/// edges with `|n_i · n_j| > threshold`. Components are numbered in order of
/// their smallest point index.
pub fn cluster_by_normal(graph: &NeighborGraph, field: &NormalField, threshold: f64) -> Result<Vec<u32>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid("threshold", threshold, "must lie in (0, 1]"));
    }
    let m = graph.len();
    if field.len() != m {
        return Err(Error::LengthMismatch {
            what: "normal field",
            expected: m,
            got: field.len(),
        });
    }
    let n = field.normals();
    let mut uf = UnionFind::<usize>::new(m);
    for (i, list) in graph.neighbor_lists().iter().enumerate() {
        for &j in list {
            if n[i].dot(&n[j]).abs() > threshold {
                uf.union(i, j);
            }
        }
    }
    let mut ids: HashMap<usize, u32> = HashMap::new();
    Ok((0..m)
        .map(|i| {
            let root = uf.find_mut(i);
            let next = ids.len() as u32;
            *ids.entry(root).or_insert(next)
        })
        .collect())
}

fn group_members(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

/// One plane per label with at least [`MIN_PLANE_POINTS`] members, in label
/// order. Smaller regions are skipped.
pub fn fit_planes(cloud: &PointCloud, labels: &[u32]) -> Result<Vec<PlaneModel>> {
    if labels.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: cloud.len(),
            got: labels.len(),
        });
    }
    let pts = cloud.points();
    Ok(group_members(labels)
        .into_iter()
        .filter(|(_, members)| members.len() >= MIN_PLANE_POINTS)
        .map(|(label, members)| {
            let region: Vec<Point3> = members.iter().map(|&i| pts[i]).collect();
            let centroid = region.iter().sum::<Point3>() / region.len() as f64;
            let normal = pca_normal(&centroid, &region).normal;
            let offset = normal.dot(&centroid);
            let residual_sq = region.iter().map(|p| (normal.dot(p) - offset).powi(2)).sum();
            PlaneModel {
                label,
                normal,
                offset,
                members,
                residual_sq,
            }
        })
        .collect())
}

/// A labeling together with the planes fitted to it.
#[derive(Debug, Clone)]
pub struct Segmentation {
    labels: Vec<u32>,
    planes: Vec<PlaneModel>,
}

impl Segmentation {
    pub fn fit(cloud: &PointCloud, labels: Vec<u32>) -> Result<Self> {
        let planes = fit_planes(cloud, &labels)?;
        Ok(Segmentation { labels, planes })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn planes(&self) -> &[PlaneModel] {
        &self.planes
    }

    pub fn plane(&self, label: u32) -> Option<&PlaneModel> {
        self.planes
            .binary_search_by_key(&label, |p| p.label)
            .ok()
            .map(|i| &self.planes[i])
    }

    pub fn region_count(&self) -> usize {
        group_members(&self.labels).len()
    }
}

/// Segmentation quality against a reference labeling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    /// Percent of all points inside correctly detected regions.
    pub fraction: f64,
    /// Mean over correct detections of the overlap as a percent of the true region.
    pub correct: f64,
    /// Pooled point-to-plane RMS over correctly detected predicted planes, mm.
    /// `None` when there is no such plane.
    pub rmse_mm: Option<f64>,
    /// Mean axial angle between matched plane normals, degrees.
    pub alpha_deg: Option<f64>,
    pub n_over: usize,
    pub n_under: usize,
    pub n_missing: usize,
    pub n_spurious: usize,
    pub n_correct: usize,
}

impl SegMetrics {
    pub const CSV_HEADER: &'static str = "fraction,correct,rmse_mm,alpha_deg,n_over,n_under,n_missing,n_spurious";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{:.6},{:.6},{},{},{},{},{},{}",
            self.fraction,
            self.correct,
            opt(self.rmse_mm),
            opt(self.alpha_deg),
            self.n_over,
            self.n_under,
            self.n_missing,
            self.n_spurious
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "{}", self.csv_row())
    }

    /// Whether every point sits in a correctly detected region and nothing is
    /// over-, under-, missed or spurious.
    pub fn is_perfect(&self) -> bool {
        self.fraction == 100.0 && self.n_over + self.n_under + self.n_missing + self.n_spurious == 0
    }
}

impl fmt::Display for SegMetrics {
    /// Fixed-width table: fraction, correct, RMSE, α, n_o, n_u, n_m, n_s.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        writeln!(
            f,
            "{:>9} {:>9} {:>10} {:>8} {:>5} {:>5} {:>5} {:>5}",
            "fraction", "correct", "RMSE(mm)", "α(°)", "n_o", "n_u", "n_m", "n_s"
        )?;
        write!(
            f,
            "{:>9.2} {:>9.2} {:>10} {:>8} {:>5} {:>5} {:>5} {:>5}",
            self.fraction,
            self.correct,
            opt(self.rmse_mm),
            opt(self.alpha_deg),
            self.n_over,
            self.n_under,
            self.n_missing,
            self.n_spurious
        )
    }
}

/// Angle between two lines, in radians; exactly zero for equal directions.
fn axial_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b).abs())
}

fn meets(overlap: usize, tol: f64, size: usize) -> bool {
    overlap as f64 >= tol * size as f64
}

/// Compares `predicted` with `truth`. `overlap_tolerance` must lie in
/// `(0.5, 1]` so that every region takes part in at most one correct match.
pub fn score(predicted: &Segmentation, truth: &Segmentation, overlap_tolerance: f64) -> Result<SegMetrics> {
    let t = overlap_tolerance;
    if !(t > 0.5 && t <= 1.0) {
        return Err(Error::invalid("overlap_tolerance", t, "must lie in (0.5, 1]"));
    }
    let m = truth.labels.len();
    if predicted.labels.len() != m {
        return Err(Error::LengthMismatch {
            what: "predicted labels",
            expected: m,
            got: predicted.labels.len(),
        });
    }

    let p_ids: Vec<u32> = group_members(&predicted.labels).into_keys().collect();
    let r_ids: Vec<u32> = group_members(&truth.labels).into_keys().collect();
    let p_index = |l: u32| p_ids.binary_search(&l).expect("label collected above");
    let r_index = |l: u32| r_ids.binary_search(&l).expect("label collected above");
    let mut p_size = vec![0usize; p_ids.len()];
    let mut r_size = vec![0usize; r_ids.len()];
    let mut overlap: HashMap<(usize, usize), usize> = HashMap::new();
    for (&pl, &rl) in predicted.labels.iter().zip(&truth.labels) {
        let (p, r) = (p_index(pl), r_index(rl));
        p_size[p] += 1;
        r_size[r] += 1;
        *overlap.entry((p, r)).or_default() += 1;
    }
    let mut by_truth: Vec<Vec<(usize, usize)>> = vec![Vec::new(); r_ids.len()];
    let mut by_pred: Vec<Vec<(usize, usize)>> = vec![Vec::new(); p_ids.len()];
    for (&(p, r), &o) in &overlap {
        by_truth[r].push((p, o));
        by_pred[p].push((r, o));
    }
    by_truth.iter_mut().for_each(|v| v.sort_unstable());
    by_pred.iter_mut().for_each(|v| v.sort_unstable());

    let mut p_done = vec![false; p_ids.len()];
    let mut r_done = vec![false; r_ids.len()];
    let mut matches = Vec::new();
    for (r, list) in by_truth.iter().enumerate() {
        for &(p, o) in list {
            if meets(o, t, p_size[p]) && meets(o, t, r_size[r]) {
                matches.push((p, r, o));
                p_done[p] = true;
                r_done[r] = true;
            }
        }
    }

    let mut n_over = 0;
    for (r, list) in by_truth.iter().enumerate() {
        if r_done[r] {
            continue;
        }
        let parts: Vec<(usize, usize)> = list
            .iter()
            .copied()
            .filter(|&(p, o)| !p_done[p] && meets(o, t, p_size[p]))
            .collect();
        if parts.len() >= 2 && meets(parts.iter().map(|x| x.1).sum(), t, r_size[r]) {
            n_over += 1;
            r_done[r] = true;
            parts.iter().for_each(|&(p, _)| p_done[p] = true);
        }
    }
    let mut n_under = 0;
    for (p, list) in by_pred.iter().enumerate() {
        if p_done[p] {
            continue;
        }
        let parts: Vec<(usize, usize)> = list
            .iter()
            .copied()
            .filter(|&(r, o)| !r_done[r] && meets(o, t, r_size[r]))
            .collect();
        if parts.len() >= 2 && meets(parts.iter().map(|x| x.1).sum(), t, p_size[p]) {
            n_under += 1;
            p_done[p] = true;
            parts.iter().for_each(|&(r, _)| r_done[r] = true);
        }
    }

    let covered: usize = matches.iter().map(|&(_, _, o)| o).sum();
    let correct = if matches.is_empty() {
        0.0
    } else {
        100.0 * matches.iter().map(|&(_, r, o)| o as f64 / r_size[r] as f64).sum::<f64>() / matches.len() as f64
    };
    let (mut sq, mut count) = (0.0, 0usize);
    let (mut angle_sum, mut angles) = (0.0, 0usize);
    for &(p, r, _) in &matches {
        let pp = predicted.plane(p_ids[p]);
        if let Some(pp) = pp {
            sq += pp.residual_sq;
            count += pp.members.len();
        }
        if let (Some(pp), Some(rp)) = (pp, truth.plane(r_ids[r])) {
            angle_sum += axial_angle(&pp.normal, &rp.normal).to_degrees();
            angles += 1;
        }
    }
    Ok(SegMetrics {
        fraction: 100.0 * covered as f64 / m as f64,
        correct,
        rmse_mm: (count > 0).then(|| 1000.0 * (sq / count as f64).sqrt()),
        alpha_deg: (angles > 0).then(|| angle_sum / angles as f64),
        n_over,
        n_under,
        n_missing: r_done.iter().filter(|&&d| !d).count(),
        n_spurious: p_done.iter().filter(|&&d| !d).count(),
        n_correct: matches.len(),
    })
}
