//! Kernel-aware blind super-resolution pipeline.
//!
//! Real low-resolution images carry unknown, sensor-specific degradation
//! kernels. This crate implements the full workflow for handling them at
//! evaluation scale:
//!
//! * [`degrade`] — synthesize LR images: blur with a kernel, stride
//!   downsample, inject harvested noise patches.
//! * [`kernelest`] — recover kernels, blindly (cross-scale patch
//!   recurrence over an anisotropic-Gaussian family) or from an LR-HR pair
//!   (regularized least squares).
//! * [`cluster`] — flatten kernels to vectors, k-means them, project to
//!   2-D with PCA, and pick k with a silhouette sweep.
//! * [`router`] — one restoration operator per cluster; test images are
//!   routed to the nearest cluster of their estimated kernel.
//! * [`srmodels`] — bicubic baseline and kernel-aware iterative
//!   back-projection.
//! * [`metrics`] — PSNR and SSIM for synthetic suites with ground truth.
//! * [`corpus`] — dataset manifests and user-study vote tallies.
//! * [`synth`] — seeded dead-leaves textures and reference kernels for
//!   end-to-end evaluation without external data.
//!
//! The `kernelsr` binary exposes each stage as a subcommand; the crate's
//! `examples/` directory shows the same workflows as library calls.

pub mod cli;
pub mod cluster;
pub mod corpus;
pub mod degrade;
pub mod error;
pub mod image;
pub mod kernelest;
pub mod metrics;
#[cfg(feature = "png")]
mod pngio;
pub mod router;
pub mod srmodels;
pub mod synth;

pub use cluster::{assign, flatten_kernel, kmeans, pca2d, silhouette_score, Clustering, KernelVector, PcaProjection};
pub use corpus::{aggregate_votes, column_totals, load_manifest, winners, DatasetManifest, DomainGroup, VoteRecord, VoteTable};
pub use degrade::{collect_noise_patches, convolve, degrade, downsample, Boundary, Kernel, NoiseBank};
pub use error::{Error, Result};
pub use image::{extract_patches, load_image, save_image, to_luma, Image, Patch};
pub use kernelest::{estimate_kernel_blind, estimate_kernel_nonblind, kernel_ncc, make_gaussian_kernel, normalize_kernel, GaussianKernelParams, KernelEstConfig};
pub use metrics::{psnr, ssim, MetricReport};
pub use router::{batch_apply, build_registry, route, ModelRegistry, RouteReport};
pub use srmodels::{sr_bicubic, sr_ibp, SrConfig};
