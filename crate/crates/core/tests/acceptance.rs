//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL` line
//! straight to stderr so the verdicts show up even when output is captured.
//! Tests share a lock so the timing-sensitive ones do not overlap.

mod common;

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use graph_normals::experiment::{bench_scaling, bias_metric, derive_seed, fit_through_origin, run_sweep, SweepSpec, SweepSummary};
use graph_normals::io::read_labeled;
use graph_normals::optimizer::Objective;
use graph_normals::segmentation::{cluster_by_normal, score, Segmentation, DEFAULT_OVERLAP_TOLERANCE, DEFAULT_THRESHOLD};
use graph_normals::synthetic::{generate_three_planes, generate_three_planes_with, GridLayout, SyntheticScene};
use graph_normals::{estimate, NeighborGraph, NormalField, OptimizerConfig, Point3, PointCloud, Weighting};
use nalgebra::{DVector, SymmetricEigen, Vector3};
use rand::Rng;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n}: {verdict} | {detail}");
}

fn within(start: Instant, limit: Duration) -> (bool, f64) {
    let secs = start.elapsed().as_secs_f64();
    (secs < limit.as_secs_f64(), secs)
}

#[test]
fn criterion_01_dense_oracle_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let m = 12 + trial;
        let cloud = random_cloud(&mut r, m);
        let graph = NeighborGraph::build(&cloud, 5, 1.0).unwrap();
        let field = random_field(&mut r, m);
        let weights = random_weights(&mut r, m, 5);
        for w in [None, Some(&weights)] {
            let q = dense_quadratic(&cloud, &graph, 0.01, w);
            let n = flat(field.normals());
            let qn = &q * &n;
            let obj = Objective::new(&cloud, &graph, 0.01).unwrap();
            let l = obj.loss(&field, w).unwrap();
            let g = obj.gradient(&field, w).unwrap();
            worst = worst.max(rel_err(l, n.dot(&qn)));
            let scale = qn.amax() * 2.0;
            for (a, b) in g.iter().zip(qn.iter()) {
                worst = worst.max((a - 2.0 * b).abs() / scale);
            }
        }
    }
    let (fast, secs) = within(start, Duration::from_secs(10));
    let pass = worst < 1e-9 && fast;
    report(1, pass, &format!("max relative error {worst:.2e} (< 1e-9), {secs:.2}s (< 10s)"));
    assert!(pass);
}

#[test]
fn criterion_02_finite_difference_gradient() {
    let _g = serial();
    let start = Instant::now();
    let mut r = rng(202);
    let mut worst = 0.0f64;
    for trial in 0..24 {
        let m = 8 + trial % 23;
        let cloud = random_cloud(&mut r, m);
        let graph = NeighborGraph::build(&cloud, 5.min(m - 1), 1.0).unwrap();
        let field = random_field(&mut r, m);
        let weights = random_weights(&mut r, m, graph.k());
        let obj = Objective::new(&cloud, &graph, 0.05).unwrap();
        let g = obj.gradient(&field, Some(&weights)).unwrap();
        let mut rows = field.normals().to_vec();
        let h = 1e-6;
        for c in 0..3 * m {
            let orig = rows[c / 3][c % 3];
            rows[c / 3][c % 3] = orig + h;
            let up = obj.loss_at(&rows, Some(&weights)).unwrap();
            rows[c / 3][c % 3] = orig - h;
            let down = obj.loss_at(&rows, Some(&weights)).unwrap();
            rows[c / 3][c % 3] = orig;
            worst = worst.max(((up - down) / (2.0 * h) - g[c]).abs());
        }
    }
    let (fast, secs) = within(start, Duration::from_secs(30));
    let pass = worst < 1e-5 && fast;
    report(2, pass, &format!("24 instances, max component error {worst:.2e} (< 1e-5), {secs:.2}s (< 30s)"));
    assert!(pass);
}

#[test]
fn criterion_03_laplacian_spectrum() {
    let _g = serial();
    let mut r = rng(303);
    let (mut lo, mut hi, mut null, mut symmetric) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, true);
    for trial in 0..20 {
        let m = r.random_range(10..=200);
        let k = r.random_range(1..=12).min(m - 1);
        let cloud = random_cloud(&mut r, m);
        let g = NeighborGraph::build(&cloud, k, 0.3 + 0.1 * trial as f64).unwrap();
        let l = g.laplacian();
        symmetric &= l.is_symmetric();
        let eig = SymmetricEigen::new(l.to_dense()).eigenvalues;
        lo = lo.min(eig.min());
        hi = hi.max(eig.max());
        let sqrt_d = DVector::from_iterator(m, g.degree().iter().map(|d| d.sqrt()));
        let v = l.mul_vec(sqrt_d.as_slice());
        null = null.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    let pass = symmetric && lo >= -1e-10 && hi <= 2.0 + 1e-10 && null < 1e-10;
    report(
        3,
        pass,
        &format!("symmetric {symmetric}, eigenvalues in [{lo:.2e}, {hi:.6}], max ‖L D^1/2 1‖ {null:.2e}"),
    );
    assert!(pass);
}

/// Interior points as their own cloud, with labels and normals carried along.
fn interior_subset(scene: &SyntheticScene, field: &NormalField, k: usize) -> (PointCloud, NormalField, Vec<u32>) {
    let mask = scene.interior_mask(k).unwrap();
    let keep: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let cloud = PointCloud::new(keep.iter().map(|&i| *scene.cloud.point(i)).collect()).unwrap();
    let normals = NormalField::new(keep.iter().map(|&i| *field.get(i)).collect()).unwrap();
    (cloud, normals, keep.iter().map(|&i| scene.labels[i]).collect())
}

#[test]
fn criterion_04_noise_free_recovery() {
    let _g = serial();
    let start = Instant::now();
    let scene = generate_three_planes(100, 0.0, 0).unwrap();
    let base = OptimizerConfig::default();
    let mask = scene.interior_mask(base.k).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for w in Weighting::ALL {
        let est = estimate(&scene.cloud, &base.clone().with_weighting(w)).unwrap();
        let err = (0..mask.len())
            .filter(|&i| mask[i])
            .map(|i| angle(est.field.get(i), scene.true_normals.get(i)))
            .fold(0.0, f64::max);
        let (cloud, normals, truth) = interior_subset(&scene, &est.field, base.k);
        let graph = NeighborGraph::build(&cloud, base.k, base.sigma).unwrap();
        let labels = cluster_by_normal(&graph, &normals, DEFAULT_THRESHOLD).unwrap();
        let clusters = labels.iter().max().map_or(0, |l| l + 1);
        let agree = labels.iter().zip(&truth).all(|(a, b)| a == b);
        pass &= err < 1e-4 && clusters == 3 && agree;
        details.push(format!("{w}: err {err:.1e} rad, {clusters} clusters, agree {agree}"));
    }
    let (fast, secs) = within(start, Duration::from_secs(5));
    pass &= fast;
    report(
        4,
        pass,
        &format!("{} interior points; {}; {secs:.2}s (< 5s)", mask.iter().filter(|&&b| b).count(), details.join("; ")),
    );
    assert!(pass);
}

fn paired_bias(sigma: f64, seeds: usize, base_seed: u64, configs: &[OptimizerConfig]) -> Vec<Vec<f64>> {
    (0..seeds)
        .map(|r| {
            let seed = derive_seed(base_seed, 0, 0, 0, r);
            let scene = generate_three_planes_with(100, GridLayout::default(), sigma, seed).unwrap();
            configs
                .iter()
                .map(|c| {
                    let est = estimate(&scene.cloud, c).unwrap();
                    bias_metric(&est.field, &scene.true_normals).unwrap()
                })
                .collect()
        })
        .collect()
}

#[test]
fn criterion_05_weighting_benefit() {
    let _g = serial();
    let start = Instant::now();
    let base = OptimizerConfig::default().with_lambda(0.01);
    let configs = [
        base.clone().with_weighting(Weighting::None),
        base.with_weighting(Weighting::DotProductOverDistance),
    ];
    let bias = paired_bias(0.05, 30, 5, &configs);
    let wins = bias.iter().filter(|b| b[1] < b[0]).count();
    let mean = |j: usize| bias.iter().map(|b| b[j]).sum::<f64>() / bias.len() as f64;
    let ratio = mean(1) / mean(0);
    let (fast, secs) = within(start, Duration::from_secs(300));
    let pass = wins >= 27 && ratio < 0.5 && fast;
    report(
        5,
        pass,
        &format!(
            "dot-dist better in {wins}/30 seeds (>= 27), mean bias none {:.4} vs dot-dist {:.4}, ratio {ratio:.3} (< 0.5), {secs:.1}s",
            mean(0),
            mean(1)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_lambda_sensitivity() {
    let _g = serial();
    let start = Instant::now();
    let lambdas = [0.001, 0.01, 0.05];
    let configs: Vec<OptimizerConfig> = lambdas
        .iter()
        .map(|&l| OptimizerConfig::default().with_weighting(Weighting::DotProductOverDistance).with_lambda(l))
        .collect();
    let bias = paired_bias(0.05, 10, 6, &configs);
    let mean: Vec<f64> = (0..3).map(|j| bias.iter().map(|b| b[j]).sum::<f64>() / 10.0).collect();
    let (fast, secs) = within(start, Duration::from_secs(300));
    let pass = mean[1] < mean[0] && mean[2] < mean[0] && fast;
    report(
        6,
        pass,
        &format!(
            "mean bias at lambda 0.001 / 0.01 / 0.05: {:.6} / {:.6} / {:.6} (need both later values below the first), {secs:.1}s",
            mean[0], mean[1], mean[2]
        ),
    );
    assert!(pass);
}

fn default_sweep() -> &'static SweepSummary {
    static SWEEP: OnceLock<SweepSummary> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            write_traces: false,
            ..SweepSpec::default()
        };
        run_sweep(&spec, dir.path(), 0).unwrap()
    })
}

#[test]
fn criterion_07_convergence() {
    let _g = serial();
    let start = Instant::now();
    let sweep = default_sweep();
    let mut bad = Vec::new();
    let mut max_iters = 0;
    for r in &sweep.runs {
        match &r.outcome {
            Ok(o) => {
                max_iters = max_iters.max(o.iterations);
                if !o.converged || o.final_loss > o.initial_loss {
                    bad.push(format!("sigma {} lambda {} {} r{}", r.sigma, r.lambda, r.strategy, r.repeat));
                }
            }
            Err(e) => bad.push(format!("sigma {} lambda {} {} r{}: {e}", r.sigma, r.lambda, r.strategy, r.repeat)),
        }
    }
    let pass = bad.is_empty();
    report(
        7,
        pass,
        &format!(
            "{} runs, {} not converged or loss increased, max iterations {max_iters} of {}, {:.1}s",
            sweep.runs.len(),
            bad.len(),
            OptimizerConfig::default().max_iters,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn sweep_weighted_bias_below_unweighted_at_every_noise_level() {
    let _g = serial();
    let sweep = default_sweep();
    let spec = SweepSpec::default();
    for &sigma in &spec.noise_levels {
        let mean = |w: Weighting| {
            let rows: Vec<f64> = spec
                .lambdas
                .iter()
                .map(|&l| sweep.row(sigma, l, w).unwrap().mean_bias)
                .collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        };
        let (none, dd) = (mean(Weighting::None), mean(Weighting::DotProductOverDistance));
        assert!(dd < none, "sigma {sigma}: dot-dist {dd} vs none {none}");
    }
}

#[test]
fn criterion_08_linear_scaling() {
    let _g = serial();
    let start = Instant::now();
    let sizes = [1000, 2000, 4000, 8000];
    let config = OptimizerConfig {
        k: 10,
        ..OptimizerConfig::default()
    };
    // best of three rounds per size damps scheduler noise
    let rounds: Vec<_> = (0..3).map(|s| bench_scaling(&sizes, &config, 30, s).unwrap()).collect();
    let x: Vec<f64> = sizes.iter().map(|&m| m as f64).collect();
    let y: Vec<f64> = (0..sizes.len())
        .map(|i| rounds.iter().map(|r| r.points[i].seconds_per_iter).fold(f64::INFINITY, f64::min))
        .collect();
    let (slope, r2) = fit_through_origin(&x, &y);
    let (fast, secs) = within(start, Duration::from_secs(600));
    let pass = r2 > 0.95 && fast;
    let times: Vec<String> = y.iter().map(|t| format!("{:.3}ms", t * 1e3)).collect();
    report(
        8,
        pass,
        &format!("per-iteration {} for m = 1k/2k/4k/8k, slope {slope:.3e} s/pt, R² {r2:.4} (> 0.95), {secs:.1}s", times.join(" ")),
    );
    assert!(pass);
}

#[test]
fn criterion_09_segmentation_identity() {
    let _g = serial();
    let mut r = rng(909);
    let mut failures = 0;
    for _ in 0..20 {
        let planes = r.random_range(1..=8);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for p in 0..planes {
            let n = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)).normalize();
            let u = n.cross(&Vector3::new(0.3, 0.5, 0.7)).normalize();
            let v = n.cross(&u);
            let origin = Point3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
            for _ in 0..r.random_range(3..150) {
                pts.push(origin + u * r.random_range(-1.0..1.0) + v * r.random_range(-1.0..1.0) + n * r.random_range(-0.01..0.01));
                labels.push(100 + 7 * p as u32);
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        let truth = Segmentation::fit(&cloud, labels).unwrap();
        let m = score(&truth, &truth, DEFAULT_OVERLAP_TOLERANCE).unwrap();
        let ok = m.fraction == 100.0
            && m.correct == 100.0
            && m.alpha_deg == Some(0.0)
            && (m.n_over, m.n_under, m.n_missing, m.n_spurious) == (0, 0, 0, 0);
        failures += usize::from(!ok);
    }
    let pass = failures == 0;
    report(9, pass, &format!("{} of 20 random scenes scored perfectly against themselves", 20 - failures));
    assert!(pass);
}

#[test]
fn criterion_10_high_volume_pipeline() {
    let _g = serial();
    // 3 × 289² = 250,563 points, written to disk as the input dataset
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_three_planes(289 * 289, 0.02, 10).unwrap();
    scene.export(dir.path()).unwrap();
    drop(scene);

    let start = Instant::now();
    let data = read_labeled(dir.path().join("points.xyz"), dir.path().join("labels.txt")).unwrap();
    let config = OptimizerConfig {
        weighting: Weighting::DotProductOverDistance,
        max_iters: 300,
        ..OptimizerConfig::default()
    };
    let graph = NeighborGraph::build(&data.cloud, config.k, config.sigma).unwrap();
    let est = graph_normals::estimate_with_graph(&data.cloud, &graph, &config).unwrap();
    let labels = cluster_by_normal(&graph, &est.field, DEFAULT_THRESHOLD).unwrap();
    let predicted = Segmentation::fit(&data.cloud, labels).unwrap();
    let truth = Segmentation::fit(&data.cloud, data.labels).unwrap();
    let metrics = score(&predicted, &truth, DEFAULT_OVERLAP_TOLERANCE).unwrap();
    let (fast, secs) = within(start, Duration::from_secs(600));
    let full_row = metrics.rmse_mm.is_some() && metrics.alpha_deg.is_some();
    let pass = fast && full_row;
    report(
        10,
        pass,
        &format!(
            "{} points, {} iterations, {secs:.1}s (< 600s); {}",
            data.cloud.len(),
            est.iterations(),
            metrics.csv_row()
        ),
    );
    let _ = writeln!(std::io::stderr().lock(), "{metrics}");
    assert!(pass);
}
