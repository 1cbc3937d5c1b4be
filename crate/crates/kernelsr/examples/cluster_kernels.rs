//! Cluster a set of kernel estimates: k-means over flattened kernels, a
//! silhouette sweep for the cluster count, and a 2-D PCA scatter export.
//!
//! Run with: cargo run --release --example cluster_kernels

use kernelsr::cluster::{
    export_scatter, export_scatter_svg, kmeans, pca2d, silhouette_score, KernelVector,
};
use kernelsr::flatten_kernel;
use kernelsr::synth::{kernel_family, perturb_kernel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kernelsr::Result<()> {
    let out = std::path::Path::new("target/examples-out/cluster");
    std::fs::create_dir_all(out).expect("create output dir");

    // 10 noisy estimates of each of the 7 reference kernels
    let family = kernel_family(33)?;
    let mut vectors: Vec<KernelVector> = Vec::new();
    let mut labels = Vec::new();
    for (ci, kernel) in family.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + ci as u64);
        for j in 0..10 {
            vectors.push(flatten_kernel(&perturb_kernel(kernel, 0.005, &mut rng)?));
            labels.push(format!("src{ci}_{j}"));
        }
    }

    println!("k  silhouette");
    for k in 2..=10 {
        let c = kmeans(&vectors, k, 0, 100, 0.0)?;
        println!("{k:<2} {:.4}", silhouette_score(&vectors, &c)?);
    }

    let clustering = kmeans(&vectors, 7, 0, 100, 0.0)?;
    println!(
        "k=7: inertia {:.3e} after {} iterations",
        clustering.inertia, clustering.iterations_run
    );

    let proj = pca2d(&vectors)?;
    println!(
        "PCA explained variance: {:.3e}, {:.3e}",
        proj.explained_variance[0], proj.explained_variance[1]
    );
    export_scatter(&proj, &clustering, &labels, out.join("scatter.csv"))?;
    export_scatter_svg(&proj, &clustering, out.join("scatter.svg"))?;
    println!("scatter written to {}", out.display());
    Ok(())
}
