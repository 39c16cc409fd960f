use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graph_normals::experiment::{bench_scaling, run_sweep, write_atomic, SweepSpec};
use graph_normals::io::{read_labels, read_normals, read_xyz, write_labels, write_normals};
use graph_normals::optimizer::{estimate_with_graph, write_trace_csv};
use graph_normals::segmentation::{
    cluster_by_normal, score, Segmentation, DEFAULT_OVERLAP_TOLERANCE, DEFAULT_THRESHOLD,
};
use graph_normals::synthetic::{generate_three_planes_with, GridLayout};
use graph_normals::{NeighborGraph, OptimizerConfig, Weighting};

type CliResult = Result<(), String>;

#[derive(Parser)]
#[command(name = "graph-normals", version, about = "Graph-regularized surface normal estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a noisy three-plane corner scene (points, labels, true normals, interior mask).
    Generate(GenerateArgs),
    /// Estimate normals for a point cloud.
    Estimate(EstimateArgs),
    /// Group points into planes by normal similarity.
    Cluster(ClusterArgs),
    /// Compare a predicted labeling with ground truth.
    Score(ScoreArgs),
    /// Run the noise / lambda / weighting experiment grid.
    Sweep(SweepArgs),
    /// Time optimizer iterations over growing clouds.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Grid points per plane (a perfect square).
    #[arg(long, default_value_t = 100)]
    points_per_plane: usize,
    /// Standard deviation of the coordinate noise, meters.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid spacing, meters.
    #[arg(long, default_value_t = GridLayout::default().spacing)]
    spacing: f64,
    /// Distance of the first grid row from the corner, in spacings.
    #[arg(long, default_value_t = GridLayout::default().offset)]
    offset: f64,
    /// Neighborhood size used to decide which points are interior.
    #[arg(long, default_value_t = OptimizerConfig::default().k)]
    k: usize,
}

#[derive(Args, Clone)]
struct OptimizerArgs {
    /// Neighbors per point.
    #[arg(long)]
    k: Option<usize>,
    /// Weight of the Laplacian smoothness term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Step size (default: derived from a Hessian bound).
    #[arg(long)]
    alpha: Option<f64>,
    /// Stop when the step displacement falls below this.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Bandwidth of the Gaussian adjacency kernel, meters.
    #[arg(long)]
    sigma: Option<f64>,
    /// none, dot, dist or dot-dist.
    #[arg(long)]
    weighting: Option<Weighting>,
    #[arg(long)]
    max_iters: Option<usize>,
}

impl OptimizerArgs {
    fn apply(&self, base: OptimizerConfig) -> OptimizerConfig {
        OptimizerConfig {
            k: self.k.unwrap_or(base.k),
            lambda: self.lambda.unwrap_or(base.lambda),
            alpha: self.alpha.or(base.alpha),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            sigma: self.sigma.unwrap_or(base.sigma),
            weighting: self.weighting.unwrap_or(base.weighting),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            seed: base.seed,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Point file (x y z per line).
    #[arg(long)]
    input: PathBuf,
    /// Normals file to write (x y z nx ny nz per line).
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    opt: OptimizerArgs,
    /// Write the per-iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write adjacency.coo and laplacian.coo into this directory.
    #[arg(long)]
    dump_graph: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Normals file (x y z nx ny nz per line).
    #[arg(long)]
    input: PathBuf,
    /// Labels file to write.
    #[arg(long)]
    output: PathBuf,
    /// Neighbors joined when |n_i · n_j| exceeds this, in (0, 1].
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().k)]
    k: usize,
}

#[derive(Args)]
struct ScoreArgs {
    /// Point file shared by both labelings.
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    predicted: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Minimum mutual overlap for a match, in (0.5, 1].
    #[arg(long, default_value_t = DEFAULT_OVERLAP_TOLERANCE)]
    overlap: f64,
    /// Also write the metrics as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    out: PathBuf,
    /// key = value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    noise_levels: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Weighting>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    points_per_plane: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Skip the per-run trace files.
    #[arg(long)]
    no_traces: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value = "none")]
    weighting: Weighting,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the timings as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn generate(a: GenerateArgs) -> CliResult {
    let layout = GridLayout {
        spacing: a.spacing,
        offset: a.offset,
    };
    let scene = generate_three_planes_with(a.points_per_plane, layout, a.sigma, a.seed).map_err(fail)?;
    scene.export(&a.out).map_err(fail)?;
    let mask = scene.interior_mask(a.k).map_err(fail)?;
    let text: String = mask.iter().map(|&b| if b { "1\n" } else { "0\n" }).collect();
    let path = a.out.join("interior.txt");
    std::fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    eprintln!("wrote {} points to {}", scene.cloud.len(), a.out.display());
    Ok(())
}

fn estimate(a: EstimateArgs) -> CliResult {
    let cloud = read_xyz(&a.input).map_err(fail)?;
    let config = a.opt.apply(OptimizerConfig::default());
    config.validate(cloud.len()).map_err(fail)?;
    let graph = NeighborGraph::build(&cloud, config.k, config.sigma).map_err(fail)?;
    if let Some(dir) = &a.dump_graph {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        graph.dump_coo(dir).map_err(fail)?;
    }
    eprintln!("update rule: n <- rownormalize(n - alpha * grad L) (descent on the loss)");
    let est = estimate_with_graph(&cloud, &graph, &config).map_err(fail)?;
    write_normals(&a.output, &cloud, &est.field).map_err(fail)?;
    if let Some(path) = &a.trace {
        write_trace_csv(path, &est.trace).map_err(fail)?;
    }
    let degenerate = est.degenerate.iter().filter(|&&d| d).count();
    eprintln!(
        "{} points, {} iterations ({}), alpha {:.3e}, loss {:.6e} -> {:.6e}, {} degenerate neighborhoods",
        cloud.len(),
        est.iterations(),
        if est.converged { "converged" } else { "hit max-iters" },
        est.alpha,
        est.initial_loss,
        est.final_loss,
        degenerate
    );
    Ok(())
}

fn cluster(a: ClusterArgs) -> CliResult {
    if !(a.threshold > 0.0 && a.threshold <= 1.0) {
        return Err(format!("--threshold must lie in (0, 1], got {}", a.threshold));
    }
    let (cloud, field) = read_normals(&a.input).map_err(fail)?;
    let graph = NeighborGraph::build(&cloud, a.k, OptimizerConfig::default().sigma).map_err(fail)?;
    let labels = cluster_by_normal(&graph, &field, a.threshold).map_err(fail)?;
    write_labels(&a.output, &labels).map_err(fail)?;
    let count = labels.iter().copied().max().map_or(0, |l| l + 1);
    eprintln!("{count} clusters");
    Ok(())
}

fn score_cmd(a: ScoreArgs) -> CliResult {
    let cloud = read_xyz(&a.points).map_err(fail)?;
    let predicted = Segmentation::fit(&cloud, read_labels(&a.predicted).map_err(fail)?).map_err(fail)?;
    let truth = Segmentation::fit(&cloud, read_labels(&a.truth).map_err(fail)?).map_err(fail)?;
    let metrics = score(&predicted, &truth, a.overlap).map_err(fail)?;
    println!("{metrics}");
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        metrics.write_csv(&mut buf).map_err(fail)?;
        write_atomic(path, &buf).map_err(fail)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult {
    let mut spec = match &a.config {
        Some(path) => SweepSpec::from_config_file(path).map_err(fail)?,
        None => SweepSpec::default(),
    };
    if let Some(v) = a.noise_levels {
        spec.noise_levels = v;
    }
    if let Some(v) = a.lambdas {
        spec.lambdas = v;
    }
    if let Some(v) = a.strategies {
        spec.strategies = v;
    }
    if let Some(v) = a.repeats {
        spec.repeats = v;
    }
    if let Some(v) = a.seed {
        spec.base_seed = v;
    }
    if let Some(v) = a.points_per_plane {
        spec.points_per_plane = v;
    }
    if let Some(v) = a.k {
        spec.base.k = v;
    }
    if a.alpha.is_some() {
        spec.base.alpha = a.alpha;
    }
    if let Some(v) = a.epsilon {
        spec.base.epsilon = v;
    }
    if let Some(v) = a.max_iters {
        spec.base.max_iters = v;
    }
    if a.no_traces {
        spec.write_traces = false;
    }
    let summary = run_sweep(&spec, &a.out, a.jobs).map_err(fail)?;
    let failed: usize = summary.aggregate.iter().map(|r| r.failed).sum();
    let unconverged = summary
        .runs
        .iter()
        .filter(|r| matches!(&r.outcome, Ok(o) if !o.converged))
        .count();
    eprintln!(
        "{} runs in {} cells written to {} ({failed} failed, {unconverged} stopped at max-iters)",
        summary.runs.len(),
        summary.aggregate.len(),
        a.out.display()
    );
    if failed > 0 {
        return Err(format!("{failed} runs failed; see {}", a.out.join("runs.csv").display()));
    }
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    let config = OptimizerConfig {
        k: a.k,
        weighting: a.weighting,
        ..OptimizerConfig::default()
    };
    let report = bench_scaling(&a.sizes, &config, a.iters, a.seed).map_err(fail)?;
    print!("{}", report.csv());
    println!("# slope {:.4e} s/point, R^2 {:.4}", report.slope, report.r_squared);
    if let Some(path) = &a.out {
        write_atomic(Path::new(path), report.csv().as_bytes()).map_err(fail)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Estimate(a) => estimate(a),
        Command::Cluster(a) => cluster(a),
        Command::Score(a) => score_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
