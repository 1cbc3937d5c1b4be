//! End-to-end routing: generate a small synthetic corpus, cluster its
//! noisy kernels, build the per-cluster registry, and batch-route every
//! LR image to its nearest cluster's restorer.
//!
//! Run with: cargo run --release --example route_corpus

use kernelsr::cluster::{flatten_kernel, kmeans};
use kernelsr::degrade::read_kernel;
use kernelsr::kernelest::KernelEstConfig;
use kernelsr::router::{batch_apply, build_registry};
use kernelsr::srmodels::SrConfig;
use kernelsr::synth::{generate_corpus, SynthCorpusConfig};

fn main() -> kernelsr::Result<()> {
    let out = std::path::Path::new("target/examples-out/route");
    if out.exists() {
        std::fs::remove_dir_all(out).expect("clear stale output");
    }

    // small corpus: 2 images per cluster at a 13-tap kernel size
    let cfg = SynthCorpusConfig {
        seed: 5,
        images_per_cluster: 2,
        hr_size: 288,
        kernel_size: 13,
        noisy_per_kernel: 4,
        ..Default::default()
    };
    let corpus = generate_corpus(out.join("corpus"), &cfg)?;
    println!("corpus: {} images", corpus.manifest.entries.len());

    // clustering from the noisy kernel files, as the CLI would
    let mut kernel_paths: Vec<_> = std::fs::read_dir(out.join("corpus/kernels_noisy"))
        .expect("kernel dir")
        .map(|e| e.expect("entry").path())
        .collect();
    kernel_paths.sort();
    let vectors: Vec<_> = kernel_paths
        .iter()
        .map(|p| read_kernel(p).map(|k| flatten_kernel(&k)))
        .collect::<kernelsr::Result<_>>()?;
    let clustering = kmeans(&vectors, 7, 0, 100, 0.0)?;

    let sr_cfg = SrConfig { scale: 2, iterations: 10, ..Default::default() };
    let registry = build_registry(&clustering, &sr_cfg)?;
    let est_cfg = KernelEstConfig {
        kernel_size: 13,
        max_evals: 60,
        sample_patches: 128,
        seed: 2,
        ..Default::default()
    };
    let batch = batch_apply(&corpus.manifest, &registry, &est_cfg, out.join("sr"))?;

    let truth: std::collections::BTreeMap<_, _> = corpus.truth.iter().cloned().collect();
    let true_cluster: Vec<usize> = corpus
        .true_kernels
        .iter()
        .map(|k| kernelsr::assign(&flatten_kernel(k), &clustering))
        .collect::<kernelsr::Result<_>>()?;
    let mut correct = 0;
    for report in batch.reports() {
        let expected = true_cluster[truth[&report.id]];
        let mark = if report.cluster == expected { "ok " } else { "MISS" };
        println!(
            "{mark} {}: cluster {} (distance {:.4})",
            report.id, report.cluster, report.distance
        );
        if report.cluster == expected {
            correct += 1;
        }
    }
    println!(
        "routed {}/{} correctly; outputs in {}",
        correct,
        batch.items.len(),
        out.join("sr").display()
    );
    Ok(())
}
