//! Command-line entry points. One subcommand per pipeline stage; every run
//! echoes its parsed configuration to `run.json` beside its outputs so the
//! exact invocation can be replayed.
//!
//! Exit codes: 0 on success, 2 for usage/input errors, 1 for internal
//! numerical failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::cluster;
use crate::corpus;
use crate::degrade::{degrade, load_noise_bank, read_kernel, write_kernel, Kernel};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, write_atomic};
use crate::kernelest::{
    estimate_kernel_blind, estimate_kernel_nonblind, make_gaussian_kernel, GaussianKernelParams,
    KernelEstConfig,
};
use crate::metrics::{psnr, ssim, MetricReport};
use crate::router;
use crate::srmodels::{sr_bicubic, sr_ibp, SrConfig};
use crate::synth;

#[derive(Parser)]
#[command(
    name = "kernelsr",
    version,
    about = "Kernel-aware blind super-resolution pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur an HR image with a kernel, downsample, optionally add noise
    Degrade(DegradeArgs),
    /// Estimate a degradation kernel, blindly or from an LR-HR pair
    EstimateKernel(EstimateArgs),
    /// K-means cluster a directory of kernel files
    Cluster(ClusterArgs),
    /// Route a manifest of LR images to per-cluster restorers
    Route(RouteArgs),
    /// Super-resolve one image with bicubic or back-projection
    Sr(SrArgs),
    /// PSNR/SSIM over a CSV of image pairs
    Eval(EvalArgs),
    /// Aggregate survey votes into a per-domain table
    Votes(VotesArgs),
    /// Generate the synthetic evaluation corpus
    SynthCorpus(SynthCorpusArgs),
}

#[derive(Args, Serialize)]
struct DegradeArgs {
    /// HR input image
    #[arg(long)]
    hr: PathBuf,
    /// Kernel file (SRK1); omit to build a Gaussian from the sigma flags
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    sigma_major: f64,
    #[arg(long, default_value_t = 2.0)]
    sigma_minor: f64,
    /// Gaussian rotation in radians
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 33)]
    kernel_size: usize,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// Noise bank directory produced by collect-noise tooling
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output LR image (pgm/ppm)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    /// Blind mode: estimate from a single LR image
    #[arg(long, conflicts_with = "pair")]
    blind: bool,
    /// Pair mode: least-squares fit from an aligned LR-HR pair
    #[arg(long)]
    pair: bool,
    /// LR image (blind mode)
    #[arg(long, required_if_eq("blind", "true"))]
    input: Option<PathBuf>,
    /// HR image (pair mode)
    #[arg(long, required_if_eq("pair", "true"))]
    hr: Option<PathBuf>,
    /// LR image (pair mode)
    #[arg(long, required_if_eq("pair", "true"))]
    lr: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    #[arg(long, default_value_t = 33)]
    kernel_size: usize,
    #[arg(long, default_value_t = 400)]
    max_evals: usize,
    #[arg(long, default_value_t = 5)]
    patch_size: usize,
    #[arg(long, default_value_t = 512)]
    sample_patches: usize,
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output kernel file (SRK1)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ClusterArgs {
    /// Directory of SRK1 kernel files (read in sorted filename order)
    #[arg(long)]
    kernel_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    /// Silhouette sweep over an inclusive k range, e.g. "2..12"
    #[arg(long)]
    sweep: Option<String>,
    /// Output clustering file (SRC1); scatter CSV/SVG are written beside it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct RouteArgs {
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Clustering file (SRC1); the estimator kernel size is derived from it
    #[arg(long)]
    clustering: PathBuf,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[arg(long, default_value_t = 400)]
    max_evals: usize,
    #[arg(long, default_value_t = 5)]
    patch_size: usize,
    #[arg(long, default_value_t = 512)]
    sample_patches: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct SrArgs {
    #[arg(long)]
    input: PathBuf,
    /// bicubic or ibp
    #[arg(long, default_value = "ibp")]
    method: String,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// Kernel file (required for ibp)
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// CSV with header id,ref,test
    #[arg(long)]
    pairs: PathBuf,
    /// Output CSV (id,psnr_db,ssim); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Serialize)]
struct VotesArgs {
    /// CSV with header respondent_id,image_id,domain_group,chosen_model
    #[arg(long)]
    votes: PathBuf,
    /// Output CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SynthCorpusArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    images_per_cluster: usize,
    #[arg(long, default_value_t = 544)]
    hr_size: usize,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    #[arg(long, default_value_t = 33)]
    kernel_size: usize,
    #[arg(long, default_value_t = 10)]
    noisy_per_kernel: usize,
    /// Within-cluster L2 spread of the noisy kernel copies
    #[arg(long, default_value_t = 0.005)]
    kernel_noise: f64,
}

/// Parses `args` (including argv[0]) and runs; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the same path
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Degrade(args) => cmd_degrade(args),
        Command::EstimateKernel(args) => cmd_estimate(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Route(args) => cmd_route(args),
        Command::Sr(args) => cmd_sr(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Votes(args) => cmd_votes(args),
        Command::SynthCorpus(args) => cmd_synth_corpus(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_run_config<A: Serialize>(command: &str, args: &A, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let echo = serde_json::json!({ "command": command, "args": args });
    let text = serde_json::to_string_pretty(&echo).expect("config serializes");
    write_atomic(&dir.join("run.json"), text.as_bytes())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn cmd_degrade(args: DegradeArgs) -> Result<()> {
    let kernel = match &args.kernel {
        Some(path) => read_kernel(path)?,
        None => make_gaussian_kernel(
            &GaussianKernelParams::new(args.sigma_major, args.sigma_minor, args.theta)?,
            args.kernel_size,
        )?,
    };
    let hr = load_image(&args.hr)?;
    let bank = args.noise_dir.as_ref().map(load_noise_bank).transpose()?;
    let lr = degrade(&hr, &kernel, args.scale, bank.as_ref(), args.seed)?;
    write_run_config("degrade", &args, &parent_dir(&args.out))?;
    save_image(&lr, &args.out)?;
    println!(
        "degraded {} -> {} ({}x{})",
        args.hr.display(),
        args.out.display(),
        lr.width(),
        lr.height()
    );
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let kernel = if args.pair {
        let hr = load_image(args.hr.as_ref().expect("required by clap"))?;
        let lr = load_image(args.lr.as_ref().expect("required by clap"))?;
        estimate_kernel_nonblind(&hr, &lr, args.scale, args.kernel_size, args.ridge)?
    } else {
        let lr = load_image(args.input.as_ref().ok_or_else(|| {
            Error::Parameter("--input is required in blind mode".into())
        })?)?;
        let cfg = KernelEstConfig {
            kernel_size: args.kernel_size,
            scale: args.scale,
            max_evals: args.max_evals,
            patch_size: args.patch_size,
            sample_patches: args.sample_patches,
            ridge: args.ridge,
            seed: args.seed,
        };
        estimate_kernel_blind(&lr, &cfg)?
    };
    write_run_config("estimate-kernel", &args, &parent_dir(&args.out))?;
    write_kernel(&kernel, &args.out)?;
    println!("kernel written to {}", args.out.display());
    Ok(())
}

/// Kernel files in sorted name order, with their file stems as labels.
fn load_kernel_dir(dir: &Path) -> Result<Vec<(String, Kernel)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("srk"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let label = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            read_kernel(&p).map(|k| (label, k))
        })
        .collect()
}

fn parse_sweep(range: &str) -> Result<(usize, usize)> {
    let (lo, hi) = range
        .split_once("..")
        .ok_or_else(|| Error::Parameter(format!("sweep {range:?} must look like 2..12")))?;
    let lo: usize = lo
        .parse()
        .map_err(|_| Error::Parameter(format!("bad sweep start {lo:?}")))?;
    let hi: usize = hi
        .parse()
        .map_err(|_| Error::Parameter(format!("bad sweep end {hi:?}")))?;
    if lo < 2 || hi < lo {
        return Err(Error::Parameter("sweep needs 2 <= start <= end".into()));
    }
    Ok((lo, hi))
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let kernels = load_kernel_dir(&args.kernel_dir)?;
    if kernels.is_empty() {
        return Err(Error::Parameter(format!(
            "no .srk kernels found in {}",
            args.kernel_dir.display()
        )));
    }
    let labels: Vec<String> = kernels.iter().map(|(l, _)| l.clone()).collect();
    let vectors: Vec<cluster::KernelVector> = kernels
        .iter()
        .map(|(label, k)| {
            let mut v = cluster::flatten_kernel(k);
            v.label = Some(label.clone());
            v
        })
        .collect();

    let chosen_k = if let Some(range) = &args.sweep {
        let (lo, hi) = parse_sweep(range)?;
        let hi = hi.min(vectors.len());
        let mut best = (lo, f64::NEG_INFINITY);
        println!("k,silhouette");
        for k in lo..=hi {
            let c = cluster::kmeans(&vectors, k, args.seed, args.max_iter, args.tol)?;
            let score = cluster::silhouette_score(&vectors, &c)?;
            println!("{k},{score:.6}");
            if score > best.1 {
                best = (k, score);
            }
        }
        println!("best k = {} (silhouette {:.6})", best.0, best.1);
        best.0
    } else {
        args.k
    };

    let clustering = cluster::kmeans(&vectors, chosen_k, args.seed, args.max_iter, args.tol)?;
    let proj = cluster::pca2d(&vectors)?;
    write_run_config("cluster", &args, &parent_dir(&args.out))?;
    cluster::write_clustering(&clustering, &args.out)?;
    let scatter_csv = args.out.with_extension("scatter.csv");
    cluster::export_scatter(&proj, &clustering, &labels, &scatter_csv)?;
    cluster::export_scatter_svg(&proj, &clustering, args.out.with_extension("scatter.svg"))?;
    println!(
        "clustered {} kernels into {} clusters (inertia {:.6e}, {} iterations)",
        vectors.len(),
        clustering.k,
        clustering.inertia,
        clustering.iterations_run
    );
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))
}

fn cmd_route(args: RouteArgs) -> Result<()> {
    let manifest = corpus::load_manifest(&args.manifest)?;
    let clustering = cluster::read_clustering(&args.clustering)?;
    let kernel_size = cluster::odd_square_side(clustering.dims)?;
    let sr_cfg = SrConfig {
        scale: args.scale,
        iterations: args.iterations,
        step: args.step,
        ..Default::default()
    };
    let registry = router::build_registry(&clustering, &sr_cfg)?;
    let est_cfg = KernelEstConfig {
        kernel_size,
        scale: args.scale,
        max_evals: args.max_evals,
        patch_size: args.patch_size,
        sample_patches: args.sample_patches,
        seed: args.seed,
        ..Default::default()
    };
    write_run_config("route", &args, &args.out_dir)?;
    let report = thread_pool(args.jobs)?
        .install(|| router::batch_apply(&manifest, &registry, &est_cfg, &args.out_dir))?;
    write_atomic(&args.out_dir.join("reports.jsonl"), report.to_jsonl().as_bytes())?;
    let failures = report.failures().count();
    for failure in report.failures() {
        eprintln!("image {} failed: {}", failure.id, failure.message);
    }
    println!(
        "routed {} images ({} failed); reports in {}",
        report.items.len(),
        failures,
        args.out_dir.join("reports.jsonl").display()
    );
    Ok(())
}

fn cmd_sr(args: SrArgs) -> Result<()> {
    let lr = load_image(&args.input)?;
    let out = match args.method.as_str() {
        "bicubic" => sr_bicubic(&lr, args.scale)?,
        "ibp" => {
            let kernel_path = args.kernel.as_ref().ok_or_else(|| {
                Error::Parameter("--kernel is required for the ibp method".into())
            })?;
            let kernel = read_kernel(kernel_path)?;
            let cfg = SrConfig {
                scale: args.scale,
                iterations: args.iterations,
                step: args.step,
                ..Default::default()
            };
            sr_ibp(&lr, &kernel, &cfg)?
        }
        other => {
            return Err(Error::Parameter(format!(
                "unknown method {other:?} (use bicubic or ibp)"
            )))
        }
    };
    write_run_config("sr", &args, &parent_dir(&args.out))?;
    save_image(&out, &args.out)?;
    println!(
        "{} upscaled to {}x{} -> {}",
        args.method,
        out.width(),
        out.height(),
        args.out.display()
    );
    Ok(())
}

fn format_metric(value: f64) -> String {
    if value.is_infinite() {
        "inf".to_string()
    } else {
        format!("{value:.6}")
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let path = &args.pairs;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path, format!("pairs csv: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, format!("pairs csv: {e}")))?
        .clone();
    if headers.iter().ne(["id", "ref", "test"]) {
        return Err(Error::format(path, "header must be id,ref,test"));
    }
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        if row.len() != 3 {
            return Err(Error::format(
                path,
                format!("line {line}: expected 3 fields, found {}", row.len()),
            ));
        }
        rows.push((row[0].to_string(), row[1].to_string(), row[2].to_string()));
    }

    let results: Vec<MetricReport> = thread_pool(args.jobs)?.install(|| {
        rows.par_iter()
            .map(|(id, ref_path, test_path)| {
                let reference = load_image(ref_path)?;
                let test = load_image(test_path)?;
                Ok(MetricReport {
                    id: id.clone(),
                    psnr_db: psnr(&reference, &test)?,
                    ssim: ssim(&reference, &test)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut text = String::from("id,psnr_db,ssim\n");
    for report in &results {
        writeln!(
            text,
            "{},{},{}",
            report.id,
            format_metric(report.psnr_db),
            format_metric(report.ssim)
        )
        .expect("string write");
    }
    match &args.out {
        Some(out) => {
            write_run_config("eval", &args, &parent_dir(out))?;
            write_atomic(out, text.as_bytes())?;
            println!("metrics for {} pairs written to {}", results.len(), out.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_votes(args: VotesArgs) -> Result<()> {
    let records = corpus::load_votes(&args.votes)?;
    let table = corpus::aggregate_votes(&records);
    let text = corpus::format_vote_table(&table);
    match &args.out {
        Some(out) => {
            write_run_config("votes", &args, &parent_dir(out))?;
            write_atomic(out, text.as_bytes())?;
            println!("vote table written to {}", out.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_synth_corpus(args: SynthCorpusArgs) -> Result<()> {
    let cfg = synth::SynthCorpusConfig {
        seed: args.seed,
        images_per_cluster: args.images_per_cluster,
        hr_size: args.hr_size,
        scale: args.scale,
        kernel_size: args.kernel_size,
        noisy_per_kernel: args.noisy_per_kernel,
        kernel_noise: args.kernel_noise,
    };
    write_run_config("synth-corpus", &args, &args.out_dir)?;
    let report = synth::generate_corpus(&args.out_dir, &cfg)?;
    println!(
        "synthetic corpus with {} images over {} kernels at {}",
        report.manifest.entries.len(),
        report.true_kernels.len(),
        args.out_dir.display()
    );
    Ok(())
}
