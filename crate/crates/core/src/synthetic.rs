//! Three-plane corner scene with Gaussian coordinate noise.
//!
//! Plane 0 is `x = 0`, plane 1 is `y = 0`, plane 2 is `z = 0`. Each is a
//! `√p × √p` grid in its two free coordinates, placed at
//! `(offset + r) · spacing` for `r = 0..√p`. With a positive offset the three
//! patches approach the common corner without sharing grid points.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::graph::build_knn;
use crate::io::{write_labels, write_normals, write_xyz};
use crate::types::{NormalField, Point3, PointCloud};

pub const DEFAULT_POINTS_PER_PLANE: usize = 100;

/// Placement of the grid on each plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLayout {
    pub spacing: f64,
    /// First grid coordinate, in multiples of `spacing`.
    pub offset: f64,
}

impl Default for GridLayout {
    fn default() -> Self {
        GridLayout {
            spacing: 1.0,
            offset: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub true_normals: NormalField,
    pub labels: Vec<u32>,
    pub noise_sigma: f64,
    pub seed: u64,
    /// The noise-free grid positions, in the same order as `cloud`.
    pub clean: Vec<Point3>,
}

fn axis(label: u32) -> Vector3<f64> {
    match label {
        0 => Vector3::x(),
        1 => Vector3::y(),
        _ => Vector3::z(),
    }
}

/// Generates the scene with the default [`GridLayout`]. Noise of standard
/// deviation `noise_sigma` is added independently to every coordinate.
pub fn generate_three_planes(points_per_plane: usize, noise_sigma: f64, seed: u64) -> Result<SyntheticScene> {
    generate_three_planes_with(points_per_plane, GridLayout::default(), noise_sigma, seed)
}

pub fn generate_three_planes_with(
    points_per_plane: usize,
    layout: GridLayout,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticScene> {
    let GridLayout { spacing, offset } = layout;
    let side = (points_per_plane as f64).sqrt().round() as usize;
    if side < 2 || side * side != points_per_plane {
        return Err(Error::NotSquare(points_per_plane));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise_sigma", noise_sigma, "must be finite and >= 0"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid("spacing", spacing, "must be finite and > 0"));
    }
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::invalid("offset", offset, "must be finite and >= 0"));
    }
    let mut clean = Vec::with_capacity(3 * points_per_plane);
    let mut labels = Vec::with_capacity(3 * points_per_plane);
    for label in 0..3u32 {
        for r in 0..side {
            for c in 0..side {
                let (u, v) = ((offset + r as f64) * spacing, (offset + c as f64) * spacing);
                clean.push(match label {
                    0 => Point3::new(0.0, u, v),
                    1 => Point3::new(u, 0.0, v),
                    _ => Point3::new(u, v, 0.0),
                });
                labels.push(label);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<Point3> = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("validated sigma");
        clean
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| rng.sample(normal)))
            .collect()
    } else {
        clean.clone()
    };
    let true_normals = NormalField::from_unit_unchecked(labels.iter().map(|&l| axis(l)).collect());
    Ok(SyntheticScene {
        cloud: PointCloud::new(noisy)?,
        true_normals,
        labels,
        noise_sigma,
        seed,
        clean,
    })
}

/// `m` points drawn uniformly over a gently curved sheet
/// `z = 0.2 sin(x / 3) cos(y / 3)` spanning a `√m × √m` square, so the
/// sampling density stays near one point per square meter for every `m`.
pub fn wavy_sheet(m: usize, seed: u64) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::NoPoints);
    }
    let side = (m as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..m)
        .map(|_| {
            let x = rng.random_range(0.0..side);
            let y = rng.random_range(0.0..side);
            Point3::new(x, y, 0.2 * (x / 3.0).sin() * (y / 3.0).cos())
        })
        .collect();
    PointCloud::new(pts)
}

impl SyntheticScene {
    /// Points whose whole `k`-neighborhood in the noise-free configuration
    /// carries their own label.
    pub fn interior_mask(&self, k: usize) -> Result<Vec<bool>> {
        let clean = PointCloud::new(self.clean.clone())?;
        let nbrs = build_knn(&clean, k)?;
        Ok(nbrs
            .iter()
            .enumerate()
            .map(|(i, list)| list.iter().all(|&j| self.labels[j] == self.labels[i]))
            .collect())
    }

    /// Writes `points.xyz`, `labels.txt` and `normals.txt` (ground truth) into `dir`.
    pub fn export(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_xyz(dir.join("points.xyz"), &self.cloud)?;
        write_labels(dir.join("labels.txt"), &self.labels)?;
        write_normals(dir.join("normals.txt"), &self.cloud, &self.true_normals)
    }
}
