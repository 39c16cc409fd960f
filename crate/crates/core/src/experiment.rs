//! Noise/λ/weighting sweeps on the three-plane scene, the bias metric, and
//! the per-iteration scaling benchmark.
//!
//! A sweep writes, under its output directory:
//!
//! - `traces/<cell>_r<repeat>.csv`: the optimizer trace of every run,
//! - `runs.csv`: one row per run with its seed, bias and losses,
//! - `aggregate.csv`: one row per `(sigma, lambda, strategy)` cell.
//!
//! Every file is written to a temporary name and renamed into place.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::optimizer::{estimate, estimate_with_graph, write_trace, Estimate};
use crate::synthetic::{generate_three_planes_with, wavy_sheet, GridLayout, DEFAULT_POINTS_PER_PLANE};
use crate::types::{NormalField, OptimizerConfig, Weighting};

/// `(1/m) Σ_i min(‖n̂_i - n_i‖, ‖n̂_i + n_i‖)²`.
pub fn bias_metric(estimated: &NormalField, truth: &NormalField) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "estimated normals",
            expected: truth.len(),
            got: estimated.len(),
        });
    }
    let total: f64 = estimated
        .normals()
        .iter()
        .zip(truth.normals())
        .map(|(a, b)| (a - b).norm_squared().min((a + b).norm_squared()))
        .sum();
    Ok(total / truth.len() as f64)
}

/// Grid of experimental conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub noise_levels: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub strategies: Vec<Weighting>,
    pub repeats: usize,
    pub base_seed: u64,
    pub points_per_plane: usize,
    pub layout: GridLayout,
    /// Settings shared by every run; `lambda` and `weighting` are overridden per cell.
    pub base: OptimizerConfig,
    /// Whether to write one trace file per run.
    pub write_traces: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            noise_levels: vec![0.025, 0.05, 0.075, 0.1],
            lambdas: vec![0.001, 0.005, 0.01, 0.05],
            strategies: Weighting::ALL.to_vec(),
            repeats: 30,
            base_seed: 0,
            points_per_plane: DEFAULT_POINTS_PER_PLANE,
            layout: GridLayout::default(),
            base: OptimizerConfig::default(),
            write_traces: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse '{}' as a value for {key}", v.trim()),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(line, key, s))
        .collect()
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.noise_levels.is_empty() || self.lambdas.is_empty() || self.strategies.is_empty() {
            return Err(Error::invalid("sweep", "empty list", "noise levels, lambdas and strategies must be non-empty"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats", 0, "must be >= 1"));
        }
        if let Some(s) = self.noise_levels.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise_levels", s, "must be finite and >= 0"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::invalid("lambdas", l, "must be finite and >= 0"));
        }
        self.base.validate(3 * self.points_per_plane)
    }

    pub fn cells(&self) -> usize {
        self.noise_levels.len() * self.lambdas.len() * self.strategies.len()
    }

    /// Sets one field from its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_at(0, key, value)
    }

    fn set_at(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "noise_levels" | "sigmas" => self.noise_levels = parse_list(line, key, value)?,
            "lambdas" => self.lambdas = parse_list(line, key, value)?,
            "strategies" | "weightings" => {
                self.strategies = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "repeats" => self.repeats = parse_num(line, key, value)?,
            "base_seed" | "seed" => self.base_seed = parse_num(line, key, value)?,
            "points_per_plane" => self.points_per_plane = parse_num(line, key, value)?,
            "spacing" => self.layout.spacing = parse_num(line, key, value)?,
            "offset" => self.layout.offset = parse_num(line, key, value)?,
            "k" => self.base.k = parse_num(line, key, value)?,
            "alpha" => self.base.alpha = Some(parse_num(line, key, value)?),
            "epsilon" => self.base.epsilon = parse_num(line, key, value)?,
            "kernel_sigma" => self.base.sigma = parse_num(line, key, value)?,
            "max_iters" => self.base.max_iters = parse_num(line, key, value)?,
            "write_traces" => self.write_traces = parse_num(line, key, value)?,
            other => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key '{other}'"),
                })
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: idx + 1,
                message: format!("expected key = value, got '{line}'"),
            })?;
            self.set_at(idx + 1, key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = SweepSpec::default();
        spec.apply_config(&text)?;
        Ok(spec)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of one run, mixed from the base seed and the run's grid indices.
pub fn derive_seed(base_seed: u64, sigma_idx: usize, lambda_idx: usize, strategy_idx: usize, repeat: usize) -> u64 {
    [sigma_idx, lambda_idx, strategy_idx, repeat]
        .iter()
        .fold(splitmix64(base_seed), |h, &i| splitmix64(h ^ i as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub bias: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub sigma: f64,
    pub lambda: f64,
    pub strategy: Weighting,
    pub repeat: usize,
    pub seed: u64,
    /// `Err` holds the error message of a failed run.
    pub outcome: std::result::Result<RunOutcome, String>,
}

/// Statistics of one `(sigma, lambda, strategy)` cell over its successful runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub sigma: f64,
    pub lambda: f64,
    pub strategy: Weighting,
    pub mean_bias: f64,
    pub sd_bias: f64,
    pub mean_final_loss: f64,
    pub mean_iters: f64,
    pub runs: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub runs: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepSummary {
    pub fn row(&self, sigma: f64, lambda: f64, strategy: Weighting) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|r| r.sigma == sigma && r.lambda == lambda && r.strategy == strategy)
    }
}

pub const AGGREGATE_HEADER: &str = "sigma,lambda,strategy,mean_bias,sd_bias,mean_final_loss,mean_iters,runs,failed";
pub const RUNS_HEADER: &str = "sigma,lambda,strategy,repeat,seed,status,bias,initial_loss,final_loss,iterations,converged";

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Writes `contents` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn trace_file_name(sigma: f64, lambda: f64, strategy: Weighting, repeat: usize) -> String {
    format!("sigma{sigma}_lambda{lambda}_{}_r{repeat:03}.csv", strategy.as_str())
}

/// One run: generate the scene, estimate, score the bias.
pub fn run_once(spec: &SweepSpec, sigma: f64, config: &OptimizerConfig, seed: u64) -> Result<(Estimate, f64)> {
    let scene = generate_three_planes_with(spec.points_per_plane, spec.layout, sigma, seed)?;
    let est = estimate(&scene.cloud, config)?;
    let bias = bias_metric(&est.field, &scene.true_normals)?;
    Ok((est, bias))
}

/// Runs every `(sigma, lambda, strategy, repeat)` combination with up to
/// `jobs` worker threads (0 picks the machine default) and writes the result
/// files. Runs that fail are recorded and the sweep carries on.
pub fn run_sweep(spec: &SweepSpec, out_dir: impl AsRef<Path>, jobs: usize) -> Result<SweepSummary> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let trace_dir = out_dir.join("traces");
    std::fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;

    let mut tasks = Vec::new();
    for (si, &sigma) in spec.noise_levels.iter().enumerate() {
        for (li, &lambda) in spec.lambdas.iter().enumerate() {
            for (wi, &strategy) in spec.strategies.iter().enumerate() {
                for repeat in 0..spec.repeats {
                    let seed = derive_seed(spec.base_seed, si, li, wi, repeat);
                    tasks.push((sigma, lambda, strategy, repeat, seed));
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|_| Error::invalid("jobs", jobs, "thread pool could not start"))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(sigma, lambda, strategy, repeat, seed)| {
                let config = OptimizerConfig {
                    lambda,
                    weighting: strategy,
                    seed,
                    ..spec.base.clone()
                };
                let outcome = run_once(spec, sigma, &config, seed).and_then(|(est, bias)| {
                    if spec.write_traces {
                        let mut buf = Vec::new();
                        write_trace(&mut buf, &est.trace).expect("writing to memory");
                        write_atomic(&trace_dir.join(trace_file_name(sigma, lambda, strategy, repeat)), &buf)?;
                    }
                    Ok(RunOutcome {
                        bias,
                        initial_loss: est.initial_loss,
                        final_loss: est.final_loss,
                        iterations: est.iterations(),
                        converged: est.converged,
                    })
                });
                RunRecord {
                    sigma,
                    lambda,
                    strategy,
                    repeat,
                    seed,
                    outcome: outcome.map_err(|e| e.to_string()),
                }
            })
            .collect()
    });

    let aggregate = aggregate(&runs, spec.repeats);
    write_atomic(&out_dir.join("runs.csv"), runs_csv(&runs).as_bytes())?;
    write_atomic(&out_dir.join("aggregate.csv"), aggregate_csv(&aggregate).as_bytes())?;
    Ok(SweepSummary { runs, aggregate })
}

/// Groups consecutive blocks of `repeats` runs into cells.
pub fn aggregate(runs: &[RunRecord], repeats: usize) -> Vec<AggregateRow> {
    runs.chunks(repeats.max(1))
        .map(|cell| {
            let ok: Vec<&RunOutcome> = cell.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let (mean_bias, sd_bias) = mean_sd(&ok.iter().map(|o| o.bias).collect::<Vec<_>>());
            let mean_final_loss = mean_sd(&ok.iter().map(|o| o.final_loss).collect::<Vec<_>>()).0;
            let mean_iters = mean_sd(&ok.iter().map(|o| o.iterations as f64).collect::<Vec<_>>()).0;
            AggregateRow {
                sigma: cell[0].sigma,
                lambda: cell[0].lambda,
                strategy: cell[0].strategy,
                mean_bias,
                sd_bias,
                mean_final_loss,
                mean_iters,
                runs: ok.len(),
                failed: cell.len() - ok.len(),
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{AGGREGATE_HEADER}").unwrap();
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.sigma, r.lambda, r.strategy, r.mean_bias, r.sd_bias, r.mean_final_loss, r.mean_iters, r.runs, r.failed
        )
        .unwrap();
    }
    s
}

pub fn runs_csv(runs: &[RunRecord]) -> String {
    let mut s = String::new();
    writeln!(s, "{RUNS_HEADER}").unwrap();
    for r in runs {
        let prefix = format!("{},{},{},{},{}", r.sigma, r.lambda, r.strategy, r.repeat, r.seed);
        match &r.outcome {
            Ok(o) => writeln!(
                s,
                "{prefix},ok,{},{},{},{},{}",
                o.bias, o.initial_loss, o.final_loss, o.iterations, o.converged
            ),
            Err(msg) => writeln!(s, "{prefix},failed: {},,,,,", msg.replace([',', '\n'], ";")),
        }
        .unwrap();
    }
    s
}

/// Per-iteration timing at one cloud size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchPoint {
    pub m: usize,
    /// Median wall time of one optimizer iteration, seconds.
    pub seconds_per_iter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Least-squares slope of time against `m` through the origin.
    pub slope: f64,
    /// Coefficient of determination of that fit, relative to the mean time.
    pub r_squared: f64,
}

/// Fits `y = b x` and returns `(b, R²)` with `R² = 1 - SS_res / SS_tot`,
/// `SS_tot` taken about the mean of `y`.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let b = sxy / sxx;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, v)| (v - b * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    (b, 1.0 - ss_res / ss_tot)
}

/// Times `iters` optimizer iterations on a [`wavy_sheet`] of each size. The
/// graph is built outside the timed region.
pub fn bench_scaling(sizes: &[usize], config: &OptimizerConfig, iters: usize, seed: u64) -> Result<BenchReport> {
    if sizes.len() < 2 {
        return Err(Error::invalid("sizes", sizes.len(), "need at least two cloud sizes"));
    }
    if iters == 0 {
        return Err(Error::invalid("iters", iters, "must be >= 1"));
    }
    let config = OptimizerConfig {
        epsilon: f64::MIN_POSITIVE,
        max_iters: iters,
        ..config.clone()
    };
    let mut points = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let cloud = wavy_sheet(m, seed)?;
        let graph = NeighborGraph::build(&cloud, config.k, config.sigma)?;
        let est = estimate_with_graph(&cloud, &graph, &config)?;
        let mut secs: Vec<f64> = est.trace.iter().map(|r| r.seconds).collect();
        secs.sort_by(f64::total_cmp);
        points.push(BenchPoint {
            m,
            seconds_per_iter: secs[secs.len() / 2],
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.m as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.seconds_per_iter).collect();
    let (slope, r_squared) = fit_through_origin(&x, &y);
    Ok(BenchReport {
        points,
        slope,
        r_squared,
    })
}

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("m,seconds_per_iter,fitted\n");
        for p in &self.points {
            writeln!(s, "{},{},{}", p.m, p.seconds_per_iter, self.slope * p.m as f64).unwrap();
        }
        s
    }
}
