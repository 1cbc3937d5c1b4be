//! Degradation-kernel recovery.
//!
//! Two estimators share one output contract (a normalized [`Kernel`]):
//!
//! * [`estimate_kernel_nonblind`] solves a ridge-regularized least-squares
//!   system from an aligned LR-HR pair. It is the validation oracle: on a
//!   noiseless synthetic pair it recovers the generating kernel to solver
//!   tolerance.
//! * [`estimate_kernel_blind`] sees only the LR image. It searches a
//!   parametric anisotropic-Gaussian family for the kernel whose
//!   downscale-by-candidate best preserves the image's own patch statistics
//!   (cross-scale patch recurrence), with a coarse grid followed by
//!   Nelder-Mead refinement.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::degrade::{build_taps, correlate_plane_sampled, Boundary, Kernel};
use crate::error::{Error, Result};
use crate::image::{to_luma, Image};

/// Free parameters of the blind search and the non-blind solver.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct KernelEstConfig {
    /// Side length of the estimated kernel (odd).
    pub kernel_size: usize,
    /// Integer scale factor between the LR image and its source.
    pub scale: usize,
    /// Total objective-evaluation budget for the blind search.
    pub max_evals: usize,
    /// Side length of recurrence patches.
    pub patch_size: usize,
    /// Number of query patches drawn from the downscaled image.
    pub sample_patches: usize,
    /// Ridge weight for the non-blind normal equations.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for KernelEstConfig {
    fn default() -> Self {
        KernelEstConfig {
            kernel_size: 33,
            scale: 2,
            max_evals: 400,
            patch_size: 5,
            sample_patches: 512,
            ridge: 1e-8,
            seed: 0,
        }
    }
}

impl KernelEstConfig {
    fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Parameter("kernel_size must be odd".into()));
        }
        if self.scale < 1 {
            return Err(Error::Parameter("scale must be >= 1".into()));
        }
        if self.max_evals < 1 {
            return Err(Error::Parameter("max_evals must be >= 1".into()));
        }
        if self.patch_size < 2 {
            return Err(Error::Parameter("patch_size must be >= 2".into()));
        }
        if self.sample_patches < 1 {
            return Err(Error::Parameter("sample_patches must be >= 1".into()));
        }
        Ok(())
    }
}

/// Axis-aligned spreads and rotation of an anisotropic Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernelParams {
    sigma_major: f64,
    sigma_minor: f64,
    theta: f64,
}

impl GaussianKernelParams {
    /// `theta` is wrapped into [0, pi); the sigmas must satisfy
    /// `sigma_major >= sigma_minor > 0`.
    pub fn new(sigma_major: f64, sigma_minor: f64, theta: f64) -> Result<Self> {
        if !(sigma_minor > 0.0) || !sigma_major.is_finite() || sigma_major < sigma_minor {
            return Err(Error::Parameter(format!(
                "need sigma_major >= sigma_minor > 0, got {sigma_major}/{sigma_minor}"
            )));
        }
        Ok(GaussianKernelParams {
            sigma_major,
            sigma_minor,
            theta: theta.rem_euclid(std::f64::consts::PI),
        })
    }

    pub fn sigma_major(&self) -> f64 {
        self.sigma_major
    }

    pub fn sigma_minor(&self) -> f64 {
        self.sigma_minor
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Samples a rotated anisotropic Gaussian at pixel centers and normalizes
/// it to sum 1.
pub fn make_gaussian_kernel(p: &GaussianKernelParams, size: usize) -> Result<Kernel> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::Parameter(format!("kernel size {size} must be odd")));
    }
    if p.sigma_minor <= 1e-6 {
        return Err(Error::Parameter("degenerate sigma".into()));
    }
    let half = (size / 2) as f64;
    let (sin_t, cos_t) = p.theta.sin_cos();
    let inv_major = 0.5 / (p.sigma_major * p.sigma_major);
    let inv_minor = 0.5 / (p.sigma_minor * p.sigma_minor);
    let mut weights = Vec::with_capacity(size * size);
    for r in 0..size {
        let y = r as f64 - half;
        for c in 0..size {
            let x = c as f64 - half;
            let u = x * cos_t + y * sin_t;
            let v = -x * sin_t + y * cos_t;
            weights.push((-(u * u * inv_major + v * v * inv_minor)).exp());
        }
    }
    normalize_kernel(size, weights)
}

/// Clamps negatives to zero, recenters the center of mass by an integer
/// shift when it is off by at least one pixel, and rescales to sum 1.
pub fn normalize_kernel(size: usize, mut weights: Vec<f64>) -> Result<Kernel> {
    if size == 0 || size % 2 == 0 || weights.len() != size * size {
        return Err(Error::Parameter("kernel size must be odd and match weights".into()));
    }
    for w in &mut weights {
        if !w.is_finite() {
            return Err(Error::Parameter("kernel weight not finite".into()));
        }
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Parameter("kernel has no positive mass".into()));
    }

    let center = (size / 2) as f64;
    let mut com_r = 0.0;
    let mut com_c = 0.0;
    for r in 0..size {
        for c in 0..size {
            let w = weights[r * size + c];
            com_r += w * r as f64;
            com_c += w * c as f64;
        }
    }
    com_r /= sum;
    com_c /= sum;
    let shift_r = if (com_r - center).abs() >= 1.0 {
        (com_r - center).round() as isize
    } else {
        0
    };
    let shift_c = if (com_c - center).abs() >= 1.0 {
        (com_c - center).round() as isize
    } else {
        0
    };
    if shift_r != 0 || shift_c != 0 {
        let mut shifted = vec![0.0; size * size];
        for r in 0..size {
            for c in 0..size {
                let sr = r as isize + shift_r;
                let sc = c as isize + shift_c;
                if (0..size as isize).contains(&sr) && (0..size as isize).contains(&sc) {
                    shifted[r * size + c] = weights[sr as usize * size + sc as usize];
                }
            }
        }
        weights = shifted;
    }

    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Parameter("kernel lost all mass while recentering".into()));
    }
    for w in &mut weights {
        *w /= total;
    }
    Kernel::new(size, weights)
}

/// Cosine similarity between two kernels' weight vectors.
pub fn kernel_ncc(a: &Kernel, b: &Kernel) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.weights().iter().zip(b.weights()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

// ---------------------------------------------------------------------------
// Non-blind least-squares oracle
// ---------------------------------------------------------------------------

/// Sample cap keeping the normal-equation assembly bounded.
const MAX_LS_SAMPLES: usize = 20_000;
const LS_SAMPLE_SEED: u64 = 0;
/// Condition-estimate threshold past which the system is reported singular.
const COND_LIMIT: f64 = 1e9;

/// Recovers the kernel relating an aligned LR-HR pair by solving the
/// ridge-regularized normal equations over all `kernel_size^2` taps, then
/// clamping negatives and renormalizing.
pub fn estimate_kernel_nonblind(
    hr: &Image,
    lr: &Image,
    scale: usize,
    kernel_size: usize,
    ridge: f64,
) -> Result<Kernel> {
    let n = kernel_size * kernel_size;
    let (g, rhs, _) = assemble_normal_equations(hr, lr, scale, kernel_size)?;
    let full = unpack_symmetric(&g, n, ridge.max(0.0));

    let chol = full
        .cholesky()
        .ok_or_else(|| Error::Numerical("normal equations not positive definite".into()))?;
    let l_diag = chol.l_dirty();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..n {
        let d = l_diag[(i, i)];
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    // Two singularity signals: a large pivot-ratio condition estimate, or a
    // smallest pivot explained by the ridge alone (the data adds nothing in
    // that direction, so the kernel is unidentifiable).
    let cond_estimate = (dmax / dmin) * (dmax / dmin);
    if !cond_estimate.is_finite()
        || cond_estimate > COND_LIMIT
        || dmin * dmin <= ridge.max(f64::MIN_POSITIVE) * 1e3
    {
        return Err(Error::Numerical(format!(
            "system singular or near-singular (condition estimate {cond_estimate:.3e}); \
             the pair does not identify a kernel"
        )));
    }
    let solution = chol.solve(&nalgebra::DVector::from_vec(rhs));
    normalize_flat_solution(kernel_size, solution.as_slice())
}

/// G = A^T A (packed lower triangle) and rhs = A^T lr for the sampled LR
/// pixels. Chunk partials are reduced in index order so the result does
/// not depend on thread scheduling.
fn assemble_normal_equations(
    hr: &Image,
    lr: &Image,
    scale: usize,
    kernel_size: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if kernel_size == 0 || kernel_size % 2 == 0 {
        return Err(Error::Parameter("kernel_size must be odd".into()));
    }
    if scale < 1 {
        return Err(Error::Parameter("scale must be >= 1".into()));
    }
    let hr = to_luma(hr);
    let lr = to_luma(lr);
    if lr.width() != hr.width() / scale || lr.height() != hr.height() / scale {
        return Err(Error::Parameter(format!(
            "lr {}x{} is not hr {}x{} downsampled by {}",
            lr.width(),
            lr.height(),
            hr.width(),
            hr.height(),
            scale
        )));
    }

    let n = kernel_size * kernel_size;
    let half = (kernel_size / 2) as isize;
    let total = lr.width() * lr.height();
    let mut positions: Vec<usize> = (0..total).collect();
    if total > MAX_LS_SAMPLES {
        let mut rng = ChaCha8Rng::seed_from_u64(LS_SAMPLE_SEED);
        positions.shuffle(&mut rng);
        positions.truncate(MAX_LS_SAMPLES);
        positions.sort_unstable();
    }

    let tri = n * (n + 1) / 2;
    let hr_plane = hr.plane(0);
    let lr_plane = lr.plane(0);
    let (hw, hh) = (hr.width(), hr.height());
    let chunk_size = 1024;
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = positions
        .par_chunks(chunk_size)
        .map(|chunk| {
            let mut g = vec![0.0f64; tri];
            let mut rhs = vec![0.0f64; n];
            let mut row = vec![0.0f64; n];
            for &pos in chunk {
                let (r, c) = (pos / lr.width(), pos % lr.width());
                fill_design_row(
                    hr_plane,
                    hw,
                    hh,
                    r * scale,
                    c * scale,
                    kernel_size,
                    half,
                    &mut row,
                );
                let y = lr_plane[pos];
                let mut base = 0;
                for i in 0..n {
                    let ai = row[i];
                    if ai != 0.0 {
                        let gi = &mut g[base..base + i + 1];
                        for (gv, av) in gi.iter_mut().zip(&row[..i + 1]) {
                            *gv += ai * av;
                        }
                        rhs[i] += ai * y;
                    }
                    base += i + 1;
                }
            }
            (g, rhs)
        })
        .collect();

    let mut g = vec![0.0f64; tri];
    let mut rhs = vec![0.0f64; n];
    for (gc, rc) in &chunks {
        for (a, b) in g.iter_mut().zip(gc) {
            *a += b;
        }
        for (a, b) in rhs.iter_mut().zip(rc) {
            *a += b;
        }
    }
    Ok((g, rhs, n))
}

fn unpack_symmetric(packed: &[f64], n: usize, ridge: f64) -> nalgebra::DMatrix<f64> {
    let mut full = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut base = 0;
    for i in 0..n {
        for j in 0..=i {
            let v = packed[base + j];
            full[(i, j)] = v;
            full[(j, i)] = v;
        }
        full[(i, i)] += ridge;
        base += i + 1;
    }
    full
}

/// Clamp-and-renormalize without the recentering shift: a least-squares
/// solution is already positioned by the data.
fn normalize_flat_solution(size: usize, raw: &[f64]) -> Result<Kernel> {
    let mut weights: Vec<f64> = raw.iter().map(|w| w.max(0.0)).collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Numerical("solver produced a non-positive kernel".into()));
    }
    for w in &mut weights {
        *w /= sum;
    }
    Kernel::new(size, weights)
}

#[allow(clippy::too_many_arguments)]
fn fill_design_row(
    hr: &[f64],
    w: usize,
    h: usize,
    center_r: usize,
    center_c: usize,
    kernel_size: usize,
    half: isize,
    row: &mut [f64],
) {
    // Reflect folding matches the degradation's boundary handling.
    let fold = |i: isize, n: usize| -> usize {
        let ni = n as isize;
        let period = 2 * ni;
        let mut m = i % period;
        if m < 0 {
            m += period;
        }
        (if m < ni { m } else { period - 1 - m }) as usize
    };
    let interior = center_r as isize - half >= 0
        && center_r as isize + half < h as isize
        && center_c as isize - half >= 0
        && center_c as isize + half < w as isize;
    if interior {
        let r0 = center_r - half as usize;
        let c0 = center_c - half as usize;
        for dr in 0..kernel_size {
            let src = &hr[(r0 + dr) * w + c0..(r0 + dr) * w + c0 + kernel_size];
            row[dr * kernel_size..(dr + 1) * kernel_size].copy_from_slice(src);
        }
    } else {
        for dr in 0..kernel_size {
            let sr = fold(center_r as isize + dr as isize - half, h);
            for dc in 0..kernel_size {
                let sc = fold(center_c as isize + dc as isize - half, w);
                row[dr * kernel_size + dc] = hr[sr * w + sc];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Blind estimation by cross-scale patch recurrence
// ---------------------------------------------------------------------------

/// Candidate-pool cap for the brute-force nearest-neighbor search.
const MAX_POOL_PATCHES: usize = 4096;
/// Sigma clamp for the parametric search.
const SIGMA_MIN: f64 = 0.15;
const SIGMA_MAX: f64 = 8.0;

const SIGMA_GRID: [f64; 6] = [0.6, 1.0, 1.5, 2.1, 2.8, 3.6];
const THETA_STEPS: usize = 6;

/// Estimates the degradation kernel of a single LR image.
///
/// The candidate kernel is applied to the image (blur + stride-`scale`
/// downsample); seeded query patches from that downscale are matched
/// against a seeded patch pool from the original image; the score is the
/// mean squared distance to the nearest pool patch. The anisotropic
/// Gaussian minimizing the score over a coarse grid plus Nelder-Mead
/// refinement is returned, using at most `cfg.max_evals` score evaluations.
pub fn estimate_kernel_blind(lr: &Image, cfg: &KernelEstConfig) -> Result<Kernel> {
    cfg.validate()?;
    let luma = to_luma(lr);
    let min_side = 8 * cfg.kernel_size;
    if luma.width() < min_side || luma.height() < min_side {
        return Err(Error::Parameter(format!(
            "image {}x{} too small for blind estimation (need {min_side} per side)",
            luma.width(),
            luma.height()
        )));
    }

    let ctx = RecurrenceContext::build(&luma, cfg)?;

    // Coarse grid over (sigma_major, sigma_minor, theta); isotropic pairs
    // need no rotation sweep.
    let mut grid = Vec::new();
    for (i, &smaj) in SIGMA_GRID.iter().enumerate() {
        for &smin in SIGMA_GRID.iter().take(i + 1) {
            if (smaj - smin).abs() < 1e-12 {
                grid.push([smaj, smin, 0.0]);
            } else {
                for t in 0..THETA_STEPS {
                    grid.push([smaj, smin, t as f64 * std::f64::consts::PI / THETA_STEPS as f64]);
                }
            }
        }
    }
    grid.truncate(cfg.max_evals);

    let scores: Vec<f64> = grid
        .par_iter()
        .map(|p| ctx.score_params(p))
        .collect::<Result<Vec<_>>>()?;
    let mut best_idx = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best_idx] {
            best_idx = i;
        }
    }
    let mut evals_used = grid.len();
    let mut best = (grid[best_idx], scores[best_idx]);

    if evals_used < cfg.max_evals {
        let mut budget = cfg.max_evals - evals_used;
        let refined = nelder_mead(
            |p| ctx.score_params(p),
            best.0,
            [0.35, 0.35, 0.25],
            &mut budget,
        )?;
        evals_used = cfg.max_evals - budget;
        if refined.1 < best.1 {
            best = refined;
        }
    }
    debug_assert!(evals_used <= cfg.max_evals);

    let params = canonical_params(&best.0);
    make_gaussian_kernel(&params, cfg.kernel_size)
}

fn canonical_params(p: &[f64; 3]) -> GaussianKernelParams {
    let mut smaj = p[0].clamp(SIGMA_MIN, SIGMA_MAX);
    let mut smin = p[1].clamp(SIGMA_MIN, SIGMA_MAX);
    let mut theta = p[2];
    if smin > smaj {
        std::mem::swap(&mut smaj, &mut smin);
        theta += std::f64::consts::PI / 2.0;
    }
    GaussianKernelParams::new(smaj, smin, theta).expect("canonical params are valid")
}

/// Patch layout shared by every candidate evaluation, so the objective is
/// a deterministic function of the parameters. Public only for in-tree
/// diagnostics and tests.
///
/// The score is bidirectional. Blur-then-downsample the image with the
/// candidate kernel; then (a) structured patches of the downscale must find
/// close matches among the image's own patches, and (b) structured patches
/// of the image must find close matches in the downscale. A one-directional
/// score degenerates toward over-blurring, because heavily smoothed query
/// patches always match some flat region; term (b) is what rules that out.
/// Patches are mean-subtracted so matching reflects structure, not DC, and
/// query patches are the highest-variance ones (edges carry the blur
/// signature; flat patches carry none).
#[doc(hidden)]
pub struct RecurrenceContext {
    luma_plane: Vec<f64>,
    width: usize,
    height: usize,
    scale: usize,
    patch: usize,
    kernel_size: usize,
    /// mean-subtracted high-variance patches of the original image
    image_queries: Vec<f64>,
    /// norm-sorted mean-subtracted pool over the original image
    image_pool: SortedPatchSet,
    /// query positions on the downscaled grid, ranked by variance on a
    /// candidate-independent reference downscale
    down_query_origins: Vec<(usize, usize)>,
    /// pool positions on the downscaled grid
    down_pool_origins: Vec<(usize, usize)>,
}

/// Mean-subtracted patches sorted by L2 norm, for pruned nearest-neighbor
/// search: `|q - p|^2 >= (|q| - |p|)^2` bounds candidates by norm gap.
struct SortedPatchSet {
    patch: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl SortedPatchSet {
    fn from_patches(patch: usize, mut patches: Vec<Vec<f64>>) -> Self {
        let mut keyed: Vec<(f64, usize)> = patches
            .iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .zip(0..)
            .collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite norms").then(a.1.cmp(&b.1)));
        let mut data = Vec::with_capacity(patches.len() * patch * patch);
        let mut norms = Vec::with_capacity(patches.len());
        for (norm, idx) in keyed {
            norms.push(norm);
            data.extend(std::mem::take(&mut patches[idx]));
        }
        SortedPatchSet { patch, data, norms }
    }

    /// Smallest squared distance from `query` (norm `qnorm`) to the set,
    /// visiting patches outward from the closest norm and abandoning
    /// partial sums that already exceed the best.
    fn nearest_sq_distance(&self, query: &[f64], qnorm: f64) -> f64 {
        let pp = query.len();
        let start = self.norms.partition_point(|n| *n < qnorm);
        let mut best = f64::INFINITY;
        let mut lo = start as isize - 1;
        let mut hi = start;
        loop {
            let lo_gap = if lo >= 0 { qnorm - self.norms[lo as usize] } else { f64::INFINITY };
            let hi_gap = if hi < self.norms.len() { self.norms[hi] - qnorm } else { f64::INFINITY };
            let (idx, gap) = if lo_gap <= hi_gap {
                if lo < 0 {
                    break;
                }
                let i = lo as usize;
                lo -= 1;
                (i, lo_gap)
            } else {
                if hi >= self.norms.len() {
                    break;
                }
                let i = hi;
                hi += 1;
                (i, hi_gap)
            };
            if gap * gap >= best {
                break;
            }
            let patch = &self.data[idx * pp..(idx + 1) * pp];
            let mut acc = 0.0;
            for (qrow, prow) in query.chunks(self.patch).zip(patch.chunks(self.patch)) {
                for (q, pv) in qrow.iter().zip(prow) {
                    let d = q - pv;
                    acc += d * d;
                }
                if acc >= best {
                    break;
                }
            }
            if acc < best {
                best = acc;
            }
        }
        best
    }
}

/// Extracts the patch at `(r, c)` and subtracts its mean.
fn centered_patch(plane: &[f64], width: usize, patch: usize, r: usize, c: usize) -> Vec<f64> {
    let mut data = Vec::with_capacity(patch * patch);
    for dr in 0..patch {
        data.extend_from_slice(&plane[(r + dr) * width + c..(r + dr) * width + c + patch]);
    }
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    for v in &mut data {
        *v -= mean;
    }
    data
}

/// Patch variance at every origin of a plane, as (variance, origin-index)
/// pairs sorted descending (ties keep the lower index).
fn variance_ranked_origins(plane: &[f64], width: usize, height: usize, patch: usize) -> Vec<(usize, usize)> {
    let rows = height - patch + 1;
    let cols = width - patch + 1;
    let inv_n = 1.0 / (patch * patch) as f64;
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for dr in 0..patch {
                for v in &plane[(r + dr) * width + c..(r + dr) * width + c + patch] {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum * inv_n;
            keyed.push((sum_sq * inv_n - mean * mean, r * cols + c));
        }
    }
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite variance").then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| (i / cols, i % cols)).collect()
}

impl RecurrenceContext {
    #[doc(hidden)]
    pub fn build(luma: &Image, cfg: &KernelEstConfig) -> Result<Self> {
        let (w, h) = (luma.width(), luma.height());
        let p = cfg.patch_size;
        let w2 = w / cfg.scale;
        let h2 = h / cfg.scale;
        if w2 < p || h2 < p {
            return Err(Error::Parameter(
                "downscaled image smaller than the recurrence patch".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let plane = luma.plane(0);

        let image_ranked = variance_ranked_origins(plane, w, h, p);
        let image_queries: Vec<f64> = image_ranked
            .iter()
            .take(cfg.sample_patches)
            .flat_map(|&(r, c)| centered_patch(plane, w, p, r, c))
            .collect();

        let pool_origins = sample_origins(w, h, p, MAX_POOL_PATCHES, &mut rng);
        let image_pool = SortedPatchSet::from_patches(
            p,
            pool_origins
                .iter()
                .map(|&(r, c)| centered_patch(plane, w, p, r, c))
                .collect(),
        );

        // Rank downscale query positions on a candidate-independent
        // reference: the plain resampling filter. Edge positions are stable
        // under the blur level, so one ranking serves every candidate.
        let reference = crate::srmodels::bicubic_equivalent_weights(cfg.scale, reference_filter_size(cfg.scale));
        let taps = build_taps(reference_filter_size(cfg.scale), &reference);
        let (ref_down, _, _) =
            correlate_plane_sampled(plane, w, h, &taps, Boundary::Reflect, cfg.scale);
        let down_query_origins: Vec<(usize, usize)> =
            variance_ranked_origins(&ref_down, w2, h2, p)
                .into_iter()
                .take(cfg.sample_patches)
                .collect();

        let down_pool_origins = sample_origins(w2, h2, p, MAX_POOL_PATCHES, &mut rng);

        Ok(RecurrenceContext {
            luma_plane: plane.to_vec(),
            width: w,
            height: h,
            scale: cfg.scale,
            patch: p,
            kernel_size: cfg.kernel_size,
            image_queries,
            image_pool,
            down_query_origins,
            down_pool_origins,
        })
    }

    fn score_params(&self, p: &[f64; 3]) -> Result<f64> {
        let params = canonical_params(p);
        let kernel = make_gaussian_kernel(&params, self.kernel_size)?;
        Ok(self.score_weights(kernel.size(), kernel.weights()))
    }

    /// Recurrence score of an arbitrary weight grid (weights may be
    /// negative, e.g. the resampling-filter baseline in tests).
    #[doc(hidden)]
    pub fn score_weights(&self, size: usize, weights: &[f64]) -> f64 {
        let taps = build_taps(size, weights);
        let (mut down, w2, _) = correlate_plane_sampled(
            &self.luma_plane,
            self.width,
            self.height,
            &taps,
            Boundary::Reflect,
            self.scale,
        );
        for v in &mut down {
            *v = v.clamp(0.0, 1.0);
        }

        let p = self.patch;
        let pp = p * p;

        // downscale patches must recur in the original image
        let mut forward = 0.0;
        for &(r, c) in &self.down_query_origins {
            let q = centered_patch(&down, w2, p, r, c);
            let qnorm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            forward += self.image_pool.nearest_sq_distance(&q, qnorm);
        }
        forward /= self.down_query_origins.len() as f64;

        // image patches must recur in the downscale
        let down_pool = SortedPatchSet::from_patches(
            p,
            self.down_pool_origins
                .iter()
                .map(|&(r, c)| centered_patch(&down, w2, p, r, c))
                .collect(),
        );
        let mut reverse = 0.0;
        let n_queries = self.image_queries.len() / pp;
        for q in self.image_queries.chunks(pp) {
            let qnorm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            reverse += down_pool.nearest_sq_distance(q, qnorm);
        }
        reverse /= n_queries as f64;

        forward + reverse
    }
}

/// Support of the reference resampling filter: two lobes per side.
fn reference_filter_size(scale: usize) -> usize {
    4 * scale + 1
}

/// Up to `limit` patch origins, the full grid when it fits, otherwise a
/// seeded sample without replacement (returned in row-major order).
fn sample_origins(
    w: usize,
    h: usize,
    patch: usize,
    limit: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let rows = h - patch + 1;
    let cols = w - patch + 1;
    let total = rows * cols;
    let mut indices: Vec<usize> = (0..total).collect();
    if total > limit {
        indices.shuffle(rng);
        indices.truncate(limit);
        indices.sort_unstable();
    }
    indices.into_iter().map(|i| (i / cols, i % cols)).collect()
}

/// Deterministic Nelder-Mead on 3 parameters within an evaluation budget.
fn nelder_mead<F>(
    mut f: F,
    x0: [f64; 3],
    steps: [f64; 3],
    budget: &mut usize,
) -> Result<([f64; 3], f64)>
where
    F: FnMut(&[f64; 3]) -> Result<f64>,
{
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let mut eval = |x: &[f64; 3], budget: &mut usize| -> Result<Option<f64>> {
        if *budget == 0 {
            return Ok(None);
        }
        *budget -= 1;
        f(x).map(Some)
    };

    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    match eval(&x0, budget)? {
        Some(v) => simplex.push((x0, v)),
        None => return Err(Error::Parameter("no evaluation budget".into())),
    }
    for d in 0..3 {
        let mut x = x0;
        x[d] += steps[d];
        match eval(&x, budget)? {
            Some(v) => simplex.push((x, v)),
            None => return Ok(simplex[0]),
        }
    }

    loop {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite scores"));
        let spread = simplex[3].1 - simplex[0].1;
        let geom: f64 = (0..3)
            .map(|d| (simplex[3].0[d] - simplex[0].0[d]).abs())
            .fold(0.0, f64::max);
        if spread < 1e-12 || geom < 1e-4 || *budget == 0 {
            return Ok(simplex[0]);
        }

        let mut centroid = [0.0; 3];
        for v in &simplex[..3] {
            for d in 0..3 {
                centroid[d] += v.0[d] / 3.0;
            }
        }
        let worst = simplex[3];
        let mut reflected = [0.0; 3];
        for d in 0..3 {
            reflected[d] = centroid[d] + ALPHA * (centroid[d] - worst.0[d]);
        }
        let fr = match eval(&reflected, budget)? {
            Some(v) => v,
            None => return Ok(simplex[0]),
        };

        if fr < simplex[0].1 {
            let mut expanded = [0.0; 3];
            for d in 0..3 {
                expanded[d] = centroid[d] + GAMMA * (reflected[d] - centroid[d]);
            }
            match eval(&expanded, budget)? {
                Some(fe) if fe < fr => simplex[3] = (expanded, fe),
                Some(_) => simplex[3] = (reflected, fr),
                None => {
                    simplex[3] = (reflected, fr);
                    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite scores"));
                    return Ok(simplex[0]);
                }
            }
            continue;
        }
        if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
            continue;
        }

        let mut contracted = [0.0; 3];
        for d in 0..3 {
            contracted[d] = centroid[d] + RHO * (worst.0[d] - centroid[d]);
        }
        match eval(&contracted, budget)? {
            Some(fc) if fc < worst.1 => {
                simplex[3] = (contracted, fc);
                continue;
            }
            None => return Ok(simplex[0]),
            _ => {}
        }

        // Shrink toward the best vertex.
        let best = simplex[0];
        for v in simplex.iter_mut().skip(1) {
            for d in 0..3 {
                v.0[d] = best.0[d] + SHRINK * (v.0[d] - best.0[d]);
            }
            match eval(&v.0, budget)? {
                Some(fv) => v.1 = fv,
                None => {
                    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite scores"));
                    return Ok(simplex[0]);
                }
            }
        }
    }
}
