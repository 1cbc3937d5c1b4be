//! Per-cluster model registry and kernel-based routing.
//!
//! Each cluster center is unflattened into a representative kernel paired
//! with a restoration config. A test image is routed by estimating its
//! kernel blindly, assigning the flattened estimate to the nearest center,
//! and restoring with that cluster's operator.

use std::path::Path;

use rayon::prelude::*;

use crate::cluster::{assign, flatten_kernel, odd_square_side, Clustering, KernelVector};
use crate::degrade::{write_kernel, Kernel};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};
use crate::kernelest::{estimate_kernel_blind, KernelEstConfig};
use crate::srmodels::{sr_ibp, SrConfig};

/// One restoration operator per cluster: the renormalized cluster-center
/// kernel plus an SR configuration.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    pub clustering: Clustering,
    pub kernels: Vec<Kernel>,
    pub configs: Vec<SrConfig>,
}

/// Routing outcome for one image.
#[derive(Debug, Clone)]
pub struct RouteReport {
    pub id: String,
    pub estimated_kernel: Kernel,
    pub cluster: usize,
    /// Euclidean distance to the assigned center.
    pub distance: f64,
    /// Euclidean distances to every center, in cluster order.
    pub distances: Vec<f64>,
    pub kernel_path: Option<String>,
    pub output: Option<String>,
}

impl RouteReport {
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "id": self.id,
            "cluster": self.cluster,
            "distance": self.distance,
            "distances": self.distances,
            "kernel_path": self.kernel_path,
            "output": self.output,
        })
        .to_string()
    }
}

/// Unflattens every cluster center into a kernel (negatives clamped,
/// renormalized) and pairs it with the default SR config.
pub fn build_registry(clustering: &Clustering, sr_defaults: &SrConfig) -> Result<ModelRegistry> {
    let size = odd_square_side(clustering.dims)?;
    let mut kernels = Vec::with_capacity(clustering.k);
    for (i, center) in clustering.centers.iter().enumerate() {
        let mut weights: Vec<f64> = center.iter().map(|w| w.max(0.0)).collect();
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Parameter(format!(
                "cluster {i} center has no positive mass"
            )));
        }
        for w in &mut weights {
            *w /= sum;
        }
        kernels.push(Kernel::new(size, weights)?);
    }
    Ok(ModelRegistry {
        clustering: clustering.clone(),
        kernels,
        configs: vec![*sr_defaults; clustering.k],
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Estimates the image's kernel, assigns it to the nearest cluster, and
/// super-resolves with that cluster's operator.
pub fn route(
    id: &str,
    lr: &Image,
    registry: &ModelRegistry,
    est_cfg: &KernelEstConfig,
) -> Result<(RouteReport, Image)> {
    if est_cfg.kernel_size * est_cfg.kernel_size != registry.clustering.dims {
        return Err(Error::Parameter(format!(
            "estimator kernel_size {} does not match registry dims {}",
            est_cfg.kernel_size, registry.clustering.dims
        )));
    }
    let kernel = estimate_kernel_blind(lr, est_cfg)
        .map_err(|e| Error::Parameter(format!("image {id}: {e}")))?;
    let vector: KernelVector = flatten_kernel(&kernel);
    let cluster = assign(&vector, &registry.clustering)?;
    let distances: Vec<f64> = registry
        .clustering
        .centers
        .iter()
        .map(|c| euclidean(&vector.values, c))
        .collect();
    let output = sr_ibp(lr, &registry.kernels[cluster], &registry.configs[cluster])?;
    let report = RouteReport {
        id: id.to_string(),
        estimated_kernel: kernel,
        cluster,
        distance: distances[cluster],
        distances,
        kernel_path: None,
        output: None,
    };
    Ok((report, output))
}

#[derive(Debug, Clone)]
pub struct BatchFailure {
    pub id: String,
    pub message: String,
}

/// Batch outcome in manifest order; failed images are recorded, not fatal.
#[derive(Debug, Default)]
pub struct BatchReport {
    pub items: Vec<std::result::Result<RouteReport, BatchFailure>>,
}

impl BatchReport {
    pub fn reports(&self) -> impl Iterator<Item = &RouteReport> {
        self.items.iter().filter_map(|i| i.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &BatchFailure> {
        self.items.iter().filter_map(|i| i.as_ref().err())
    }

    /// One JSON line per manifest entry, in manifest order.
    pub fn to_jsonl(&self) -> String {
        let mut text = String::new();
        for item in &self.items {
            match item {
                Ok(report) => text.push_str(&report.to_json_line()),
                Err(failure) => text.push_str(
                    &serde_json::json!({"id": failure.id, "error": failure.message}).to_string(),
                ),
            }
            text.push('\n');
        }
        text
    }
}

/// Routes every manifest entry, writing `<id>_sr.<ext>` (extension matching
/// the input) and `<id>_kernel.srk` into `out_dir`. Images run in parallel;
/// results are reported in manifest order.
pub fn batch_apply(
    manifest: &crate::corpus::DatasetManifest,
    registry: &ModelRegistry,
    est_cfg: &KernelEstConfig,
    out_dir: impl AsRef<Path>,
) -> Result<BatchReport> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let items = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let run = || -> Result<RouteReport> {
                let lr = load_image(&entry.path)?;
                let (mut report, output) = route(&entry.id, &lr, registry, est_cfg)?;
                let ext = Path::new(&entry.path)
                    .extension()
                    .and_then(|e| e.to_str())
                    .unwrap_or("pgm")
                    .to_ascii_lowercase();
                let out_path = out_dir.join(format!("{}_sr.{ext}", entry.id));
                save_image(&output, &out_path)?;
                let kernel_path = out_dir.join(format!("{}_kernel.srk", entry.id));
                write_kernel(&report.estimated_kernel, &kernel_path)?;
                report.output = Some(out_path.display().to_string());
                report.kernel_path = Some(kernel_path.display().to_string());
                Ok(report)
            };
            run().map_err(|e| BatchFailure {
                id: entry.id.clone(),
                message: e.to_string(),
            })
        })
        .collect();
    Ok(BatchReport { items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::kmeans;
    use crate::synth::kernel_family;

    fn registry_from_family(size: usize) -> ModelRegistry {
        let family = kernel_family(size).unwrap();
        let vectors: Vec<KernelVector> = family.iter().map(flatten_kernel).collect();
        let clustering = kmeans(&vectors, family.len(), 0, 100, 0.0).unwrap();
        build_registry(&clustering, &SrConfig::default()).unwrap()
    }

    #[test]
    fn registry_has_one_valid_kernel_per_cluster() {
        let registry = registry_from_family(33);
        assert_eq!(registry.kernels.len(), 7);
        for k in &registry.kernels {
            let sum: f64 = k.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(k.weights().iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn registry_construction_is_deterministic() {
        let a = registry_from_family(13);
        let b = registry_from_family(13);
        for (ka, kb) in a.kernels.iter().zip(&b.kernels) {
            assert_eq!(ka.weights(), kb.weights());
        }
    }

    #[test]
    fn registry_rejects_non_square_dims() {
        let clustering = Clustering {
            k: 1,
            dims: 10,
            centers: vec![vec![0.1; 10]],
            assignments: vec![],
            inertia: 0.0,
            seed: 0,
            iterations_run: 0,
            inertia_history: vec![],
        };
        assert!(matches!(
            build_registry(&clustering, &SrConfig::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn report_distances_are_consistent() {
        let report = RouteReport {
            id: "x".into(),
            estimated_kernel: Kernel::delta(3).unwrap(),
            cluster: 2,
            distance: 0.25,
            distances: vec![1.0, 0.5, 0.25, 0.9],
            kernel_path: None,
            output: None,
        };
        let argmin = report
            .distances
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmin, report.cluster);
        let line = report.to_json_line();
        assert!(line.contains("\"cluster\":2"));
        assert!(line.contains("\"kernel_path\":null"));
    }

    #[test]
    fn routing_invariant_under_cluster_relabeling() {
        use crate::degrade::degrade;
        use crate::synth::dead_leaves;

        let registry = registry_from_family(13);
        let k = registry.clustering.k;
        // rotate cluster order by one
        let perm: Vec<usize> = (0..k).map(|i| (i + 1) % k).collect();
        let permuted_clustering = Clustering {
            centers: perm.iter().map(|&i| registry.clustering.centers[i].clone()).collect(),
            ..registry.clustering.clone()
        };
        let permuted = ModelRegistry {
            clustering: permuted_clustering,
            kernels: perm.iter().map(|&i| registry.kernels[i].clone()).collect(),
            configs: perm.iter().map(|&i| registry.configs[i]).collect(),
        };

        let hr = dead_leaves(256, 256, 8, 0.0);
        let lr = degrade(&hr, &registry.kernels[3], 2, None, 0).unwrap();
        let cfg = KernelEstConfig {
            kernel_size: 13,
            max_evals: 40,
            sample_patches: 96,
            seed: 5,
            ..Default::default()
        };
        let (report_a, out_a) = route("x", &lr, &registry, &cfg).unwrap();
        let (report_b, out_b) = route("x", &lr, &permuted, &cfg).unwrap();
        // the permuted registry reports the permuted index of the same
        // representative, and the restored image is unchanged
        assert_eq!(perm[report_b.cluster], report_a.cluster);
        assert_eq!(out_a.samples(), out_b.samples());
        assert!((report_a.distance - report_b.distance).abs() < 1e-12);
    }

    #[test]
    fn empty_manifest_gives_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let registry = registry_from_family(13);
        let cfg = KernelEstConfig { kernel_size: 13, ..Default::default() };
        let report = batch_apply(
            &crate::corpus::DatasetManifest::default(),
            &registry,
            &cfg,
            dir.path().join("out"),
        )
        .unwrap();
        assert!(report.items.is_empty());
        assert!(report.to_jsonl().is_empty());
    }

    #[test]
    fn batch_records_failures_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let registry = registry_from_family(13);
        let cfg = KernelEstConfig { kernel_size: 13, ..Default::default() };
        let manifest = crate::corpus::DatasetManifest {
            entries: vec![crate::corpus::ManifestEntry {
                id: "missing".into(),
                path: dir.path().join("nope.pgm").display().to_string(),
                source_category: "s".into(),
                equipment: "e".into(),
                domain_group: crate::corpus::DomainGroup::Other,
            }],
        };
        let report = batch_apply(&manifest, &registry, &cfg, dir.path().join("out")).unwrap();
        assert_eq!(report.items.len(), 1);
        assert_eq!(report.failures().count(), 1);
        let jsonl = report.to_jsonl();
        assert!(jsonl.contains("\"error\""));
    }
}
