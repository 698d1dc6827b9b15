//! `lapseg`: segment images from scribbles or trimaps, run dataset
//! benchmarks and sweeps, measure graph statistics, or start the local
//! HTTP service.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
//! `LAPSEG_THREADS` caps the worker count (0 or unset: automatic).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lapseg_core::bench::{
    default_k_grid, discover, load_dataset, parameter_sweep, parse_grid, run_grabcut,
    seed_sensitivity, write_csv, write_json, BenchOptions, Sample, SweepParam,
};
use lapseg_core::netmetrics::small_world_ness;
use lapseg_core::pipeline::{parse_scribbles, parse_trimap, stage1_graph};
use lapseg_core::resample::{decode_gray, decode_image, encode_labelmap};
use lapseg_core::{Execution, LabelMap, LambdaPreset, RgbImage, SegConfig};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "lapseg", version, about = "Interactive image segmentation by two-stage label propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment one image; writes the label map and prints the run report.
    Segment(SegmentArgs),
    /// Evaluate a trimap dataset and print the mean error.
    Benchmark(BenchmarkArgs),
    /// Mean dataset error over a grid of one parameter.
    Sweep(SweepArgs),
    /// Error curves under random seed erasure.
    ErodeSeeds(ErodeArgs),
    /// Small-world statistics of the stage-one k-NN graph.
    Netstats(NetstatsArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
struct SegFlags {
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-4)]
    omega: f64,
    /// `uniform`, `location`, or nine comma-separated weights.
    #[arg(long, default_value = "uniform")]
    lambda: LambdaPreset,
    #[arg(long, default_value_t = 0.999)]
    tau: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iterations: usize,
    /// Run without the worker pool.
    #[arg(long)]
    sequential: bool,
}

impl SegFlags {
    fn config(&self) -> SegConfig {
        SegConfig {
            k: self.k,
            sigma: self.sigma,
            omega: self.omega,
            lambda: self.lambda.clone(),
            tau: self.tau,
            max_iterations: self.max_iterations,
            execution: if self.sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
            ..SegConfig::default()
        }
    }
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct SeedSource {
    /// Scribble image: each non-background color is a class.
    #[arg(short = 's', long)]
    scribbles: Option<PathBuf>,
    /// Trimap (0/64 background, 128 unknown, 255 foreground).
    #[arg(short = 't', long)]
    trimap: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(short = 'i', long)]
    image: PathBuf,
    #[command(flatten)]
    seeds: SeedSource,
    /// Output label map (indexed PNG).
    #[arg(short = 'o', long)]
    output: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Scribble background color as R,G,B.
    #[arg(long, default_value = "0,0,0", value_parser = parse_rgb)]
    background: [u8; 3],
    #[command(flatten)]
    seg: SegFlags,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    trimaps: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Also search the best k per image.
    #[arg(long)]
    optimize_k: bool,
    /// k values searched by --optimize-k (A:STEP:B or a list).
    #[arg(long)]
    k_grid: Option<String>,
    /// Timed repetitions per image.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[command(flatten)]
    out: OutputArgs,
    #[command(flatten)]
    seg: SegFlags,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// k, sigma or omega.
    #[arg(long)]
    param: SweepParam,
    /// A:STEP:B or a comma-separated list.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutputArgs,
    #[command(flatten)]
    seg: SegFlags,
}

#[derive(Args, Debug)]
struct ErodeArgs {
    /// Erasure probabilities, A:STEP:B or a list, within [0, 0.99].
    #[arg(long)]
    p_grid: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutputArgs,
    #[command(flatten)]
    seg: SegFlags,
}

#[derive(Args, Debug)]
struct NetstatsArgs {
    #[arg(short = 'i', long)]
    image: PathBuf,
    #[command(flatten)]
    seeds: SeedSource,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "0,0,0", value_parser = parse_rgb)]
    background: [u8; 3],
    #[command(flatten)]
    seg: SegFlags,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory with the web UI assets.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Idle minutes before a session is dropped.
    #[arg(long, default_value_t = 30)]
    idle_timeout: u64,
}

fn parse_rgb(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<u8> = s
        .split(',')
        .map(|p| p.trim().parse::<u8>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bad color {s:?}: {e}"))?;
    parts.try_into().map_err(|_| format!("expected R,G,B, got {s:?}"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_inputs(image: &Path, seeds: &SeedSource, background: [u8; 3]) -> Result<(RgbImage, LabelMap)> {
    let img = decode_image(&read(image)?).with_context(|| image.display().to_string())?;
    let map = match (&seeds.scribbles, &seeds.trimap) {
        (Some(p), _) => {
            let scrib = decode_image(&read(p)?).with_context(|| p.display().to_string())?;
            parse_scribbles(&scrib, background).with_context(|| p.display().to_string())?
        }
        (None, Some(p)) => {
            let tri = decode_gray(&read(p)?).with_context(|| p.display().to_string())?;
            parse_trimap(&tri).with_context(|| p.display().to_string())?.0
        }
        (None, None) => unreachable!("clap requires one seed source"),
    };
    Ok((img, map))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_outputs<T: Serialize, J: Serialize + ?Sized>(out: &OutputArgs, rows: &[T], json: &J) -> Result<()> {
    if let Some(p) = &out.csv {
        let f = fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?;
        write_csv(f, rows)?;
    }
    if let Some(p) = &out.json {
        let f = fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?;
        write_json(f, json)?;
    }
    Ok(())
}

fn load_samples(data: &DatasetArgs, exec: Execution) -> Result<Vec<Sample>> {
    let entries = discover(&data.images, &data.trimaps, &data.truth)?;
    log::info!("{} images", entries.len());
    Ok(load_dataset(&entries, exec)?)
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let (img, seeds) = load_inputs(&a.image, &a.seeds, a.background)?;
    let result = lapseg_core::segment(&img, &seeds, &a.seg.config())?;
    write_file(&a.output, &encode_labelmap(&result.labels)?)?;
    if let Some(p) = &a.report {
        write_file(p, serde_json::to_string_pretty(&result)?.as_bytes())?;
    }
    for w in &result.warnings {
        log::warn!("{w}");
    }
    print_json(&result)
}

fn cmd_benchmark(a: BenchmarkArgs) -> Result<()> {
    let cfg = a.seg.config();
    cfg.validate(2)?;
    let k_grid = match (&a.k_grid, a.optimize_k) {
        (Some(spec), true) => Some(
            parse_grid(spec)?
                .into_iter()
                .map(|v| if v >= 1.0 && v.fract() == 0.0 { Ok(v as usize) } else { bail!("k grid value {v} is not a positive integer") })
                .collect::<Result<Vec<_>>>()?,
        ),
        (None, true) => Some(default_k_grid()),
        (Some(_), false) => bail!("--k-grid needs --optimize-k"),
        (None, false) => None,
    };
    let samples = load_samples(&a.data, cfg.execution)?;
    let summary = run_grabcut(&samples, &cfg, &BenchOptions { repeats: a.repeats, k_grid })?;
    write_outputs(&a.out, &summary.rows, &summary)?;
    if let (Some(p), Some(rows)) = (&a.out.csv, &summary.best_k_rows) {
        let best = p.with_extension("best-k.csv");
        write_csv(fs::File::create(&best)?, rows)?;
    }
    print!(
        "images={} mean_error={:.4} mean_time_ms={:.1}",
        summary.rows.len(),
        summary.mean_error,
        summary.mean_time_ms
    );
    if let Some(e) = summary.best_k_mean_error {
        print!(" best_k_mean_error={e:.4}");
    }
    println!();
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let param = a.param;
    let grid = parse_grid(&a.grid)?;
    let cfg = a.seg.config();
    let samples = load_samples(&a.data, cfg.execution)?;
    let points = parameter_sweep(&samples, param, &grid, &cfg, a.repeats)?;
    write_outputs(&a.out, &points, &points)?;
    print_json(&points)
}

fn cmd_erode(a: ErodeArgs) -> Result<()> {
    let grid = parse_grid(&a.p_grid)?;
    let cfg = a.seg.config();
    let samples = load_samples(&a.data, cfg.execution)?;
    let points = seed_sensitivity(&samples, &grid, a.trials, a.seed, &cfg)?;
    write_outputs(&a.out, &points, &points)?;
    print_json(&points)
}

fn cmd_netstats(a: NetstatsArgs) -> Result<()> {
    let (img, seeds) = load_inputs(&a.image, &a.seeds, a.background)?;
    let cfg = a.seg.config();
    let knn = stage1_graph(&img, &seeds, &cfg)?;
    let stats = small_world_ness(&knn.graph, a.samples, a.seed, cfg.execution)?;
    print_json(&stats)
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let config = lapseg_service::ServiceConfig {
        idle_timeout: Duration::from_secs(a.idle_timeout * 60),
        static_dir: a.static_dir,
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("cannot bind {}:{}", a.host, a.port))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        lapseg_service::serve(listener, config).await?;
        Ok(())
    })
}

fn threads_from_env() -> Result<usize, String> {
    match std::env::var("LAPSEG_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("LAPSEG_THREADS must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(0),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match threads_from_env() {
        Ok(n) => lapseg_core::exec::configure_threads(n),
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ErodeSeeds(a) => cmd_erode(a),
        Command::Netstats(a) => cmd_netstats(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
