//! Degradation model: blur with a kernel, stride-downsample by an integer
//! scale, and inject real-noise patches.
//!
//! Convolution is correlation-style (the kernel is not flipped); estimators
//! in this crate use the same convention so synthetic round trips are exact.
//! The degradation composes as `lr = (hr (*) k) down s + n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{extract_patches, to_luma, write_atomic, Image, Patch};

/// Odd-sized nonnegative 2-D blur kernel with weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

/// Tolerance on the kernel weight sum.
pub const KERNEL_SUM_TOL: f64 = 1e-6;

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::Parameter(format!("kernel size {size} must be odd")));
        }
        if weights.len() != size * size {
            return Err(Error::Parameter(format!(
                "kernel needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter(
                "kernel weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(Error::Parameter(format!(
                "kernel weights sum to {sum}, expected 1"
            )));
        }
        Ok(Kernel { size, weights })
    }

    /// Identity kernel: 1 at the center, 0 elsewhere.
    pub fn delta(size: usize) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::Parameter(format!("kernel size {size} must be odd")));
        }
        let mut weights = vec![0.0; size * size];
        weights[(size / 2) * size + size / 2] = 1.0;
        Ok(Kernel { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The kernel rotated by 180 degrees (adjoint of correlation).
    pub fn rotated_180(&self) -> Kernel {
        let mut weights = self.weights.clone();
        weights.reverse();
        Kernel {
            size: self.size,
            weights,
        }
    }
}

/// How samples outside the image are produced during convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Mirror about the image edge, edge pixel included (…, 1, 0 | 0, 1, …).
    #[default]
    Reflect,
    /// Clamp to the nearest edge pixel.
    Replicate,
    /// Treat outside samples as 0.
    Zero,
}

impl Boundary {
    fn fold(self, i: isize, n: usize) -> Option<usize> {
        let ni = n as isize;
        match self {
            Boundary::Reflect => {
                let period = 2 * ni;
                let mut m = i % period;
                if m < 0 {
                    m += period;
                }
                Some(if m < ni { m } else { period - 1 - m } as usize)
            }
            Boundary::Replicate => Some(i.clamp(0, ni - 1) as usize),
            Boundary::Zero => (0..ni).contains(&i).then_some(i as usize),
        }
    }
}

/// Kernel flattened to significant taps with centered offsets. Taps whose
/// magnitude is below 1e-14 of the peak are dropped; the kept taps are
/// rescaled so their sum matches the original kernel mass exactly, which
/// keeps constant images invariant.
pub(crate) struct Taps {
    entries: Vec<(isize, isize, f64)>,
}

pub(crate) fn build_taps(size: usize, weights: &[f64]) -> Taps {
    let half = (size / 2) as isize;
    let peak = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let thresh = peak * 1e-14;
    let total: f64 = weights.iter().sum();
    let mut entries = Vec::new();
    let mut kept = 0.0;
    for r in 0..size {
        for c in 0..size {
            let w = weights[r * size + c];
            if w.abs() > thresh {
                entries.push((r as isize - half, c as isize - half, w));
                kept += w;
            }
        }
    }
    if kept != 0.0 && total != kept {
        let s = total / kept;
        for e in &mut entries {
            e.2 *= s;
        }
    }
    Taps { entries }
}

/// Correlates one plane with the taps at full resolution.
pub(crate) fn correlate_plane(
    src: &[f64],
    w: usize,
    h: usize,
    taps: &Taps,
    boundary: Boundary,
) -> Vec<f64> {
    let mut out = vec![0.0f64; w * h];
    let wi = w as isize;
    for (row_idx, out_row) in out.chunks_exact_mut(w).enumerate() {
        for &(dy, dx, wgt) in &taps.entries {
            let src_row = match boundary.fold(row_idx as isize + dy, h) {
                Some(r) => &src[r * w..(r + 1) * w],
                None => continue,
            };
            let lo = (-dx).clamp(0, wi) as usize;
            let hi = (wi - dx).clamp(lo as isize, wi) as usize;
            let shifted = &src_row[(lo as isize + dx) as usize..(hi as isize + dx) as usize];
            for (o, s) in out_row[lo..hi].iter_mut().zip(shifted) {
                *o += wgt * s;
            }
            for (oc, o) in out_row.iter_mut().enumerate().take(lo) {
                if let Some(c) = boundary.fold(oc as isize + dx, w) {
                    *o += wgt * src_row[c];
                }
            }
            for (oc, o) in out_row.iter_mut().enumerate().skip(hi) {
                if let Some(c) = boundary.fold(oc as isize + dx, w) {
                    *o += wgt * src_row[c];
                }
            }
        }
    }
    out
}

/// Correlates one plane evaluating only at positions `(r*scale, c*scale)`,
/// the fused blur+downsample used on hot paths. Accumulation order per
/// output sample matches [`correlate_plane`], so results are bit-identical
/// to blurring at full resolution and then stride-sampling.
pub(crate) fn correlate_plane_sampled(
    src: &[f64],
    w: usize,
    h: usize,
    taps: &Taps,
    boundary: Boundary,
    scale: usize,
) -> (Vec<f64>, usize, usize) {
    let ow = w / scale;
    let oh = h / scale;
    let mut out = vec![0.0f64; ow * oh];
    for out_r in 0..oh {
        let base_r = (out_r * scale) as isize;
        let row = &mut out[out_r * ow..(out_r + 1) * ow];
        for &(dy, dx, wgt) in &taps.entries {
            let src_row = match boundary.fold(base_r + dy, h) {
                Some(r) => &src[r * w..(r + 1) * w],
                None => continue,
            };
            for (out_c, o) in row.iter_mut().enumerate() {
                if let Some(c) = boundary.fold((out_c * scale) as isize + dx, w) {
                    *o += wgt * src_row[c];
                }
            }
        }
    }
    (out, ow, oh)
}

/// Same-size correlation of the image with the kernel, per channel.
pub fn convolve(img: &Image, k: &Kernel, boundary: Boundary) -> Image {
    let taps = build_taps(k.size, &k.weights);
    let (w, h) = (img.width(), img.height());
    let mut samples = Vec::with_capacity(img.samples().len());
    for c in 0..img.channels() {
        samples.extend(correlate_plane(img.plane(c), w, h, &taps, boundary));
    }
    Image::from_samples_clamped(w, h, img.channels(), samples)
        .expect("convolution of a valid image is finite")
}

/// Picks every `scale`-th pixel starting at (0, 0). Dimensions that do not
/// divide evenly are cropped at the bottom/right first.
pub fn downsample(img: &Image, scale: usize) -> Result<Image> {
    if scale < 1 {
        return Err(Error::Parameter("scale must be >= 1".into()));
    }
    if scale == 1 {
        return Ok(img.clone());
    }
    let ow = img.width() / scale;
    let oh = img.height() / scale;
    if ow == 0 || oh == 0 {
        return Err(Error::Parameter(format!(
            "image {}x{} too small for scale {}",
            img.width(),
            img.height(),
            scale
        )));
    }
    let mut samples = Vec::with_capacity(ow * oh * img.channels());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for r in 0..oh {
            for col in 0..ow {
                samples.push(plane[r * scale * img.width() + col * scale]);
            }
        }
    }
    Image::from_samples(ow, oh, img.channels(), samples)
}

/// Bank of mean-subtracted low-variance patches harvested from real images.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    pub patch_size: usize,
    pub patches: Vec<Patch>,
    pub source_variance_threshold: f64,
}

impl NoiseBank {
    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Harvests every non-overlapping `patch_size` patch whose variance is at
/// most `variance_threshold`, mean-subtracted, in image order then row-major.
pub fn collect_noise_patches(
    real_images: &[Image],
    patch_size: usize,
    variance_threshold: f64,
) -> Result<NoiseBank> {
    if patch_size < 4 {
        return Err(Error::Parameter("noise patch size must be >= 4".into()));
    }
    let mut patches = Vec::new();
    for img in real_images {
        let luma = to_luma(img);
        if patch_size > luma.width() || patch_size > luma.height() {
            continue;
        }
        for mut patch in extract_patches(&luma, patch_size, patch_size)? {
            if patch.variance() <= variance_threshold {
                let mu = patch.mean();
                for v in &mut patch.samples {
                    *v -= mu;
                }
                patches.push(patch);
            }
        }
    }
    Ok(NoiseBank {
        patch_size,
        patches,
        source_variance_threshold: variance_threshold,
    })
}

/// Blur with `k` (reflect boundary), downsample by `scale`, then add one
/// seeded random noise patch per non-overlapping `patch_size` tile. Partial
/// tiles at the right/bottom edges receive the matching sub-block of the
/// chosen patch. The result is clamped to [0, 1].
pub fn degrade(
    hr: &Image,
    k: &Kernel,
    scale: usize,
    noise: Option<&NoiseBank>,
    seed: u64,
) -> Result<Image> {
    if scale < 1 {
        return Err(Error::Parameter("scale must be >= 1".into()));
    }
    let taps = build_taps(k.size, &k.weights);
    let (w, h) = (hr.width(), hr.height());
    let ow = w / scale;
    let oh = h / scale;
    if ow == 0 || oh == 0 {
        return Err(Error::Parameter(format!(
            "image {w}x{h} too small for scale {scale}"
        )));
    }
    let mut samples = Vec::with_capacity(ow * oh * hr.channels());
    for c in 0..hr.channels() {
        let (plane, _, _) =
            correlate_plane_sampled(hr.plane(c), w, h, &taps, Boundary::Reflect, scale);
        samples.extend(plane);
    }

    if let Some(bank) = noise.filter(|b| !b.is_empty()) {
        let ps = bank.patch_size;
        if ow < ps || oh < ps {
            return Err(Error::Parameter(format!(
                "LR {ow}x{oh} smaller than noise patch size {ps}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tiles_r = oh.div_ceil(ps);
        let tiles_c = ow.div_ceil(ps);
        let n = ow * oh;
        for tr in 0..tiles_r {
            for tc in 0..tiles_c {
                let patch = &bank.patches[rng.gen_range(0..bank.patches.len())];
                let r0 = tr * ps;
                let c0 = tc * ps;
                let rows = ps.min(oh - r0);
                let cols = ps.min(ow - c0);
                for ch in 0..hr.channels() {
                    for r in 0..rows {
                        for c in 0..cols {
                            samples[ch * n + (r0 + r) * ow + c0 + c] +=
                                patch.samples[r * ps + c];
                        }
                    }
                }
            }
        }
    }

    Image::from_samples_clamped(ow, oh, hr.channels(), samples)
}

/// Writes a kernel in the `SRK1` text format: a `SRK1 <size>` header line,
/// then `size` lines of `size` decimal weights (17 significant digits, so
/// read-back is bit-exact).
pub fn write_kernel(k: &Kernel, path: impl AsRef<Path>) -> Result<()> {
    let mut text = format!("SRK1 {}\n", k.size);
    for row in k.weights.chunks(k.size) {
        let mut line = String::new();
        for (i, w) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{w:.16e}").expect("string write");
        }
        text.push_str(&line);
        text.push('\n');
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<Kernel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    match tokens.next() {
        Some("SRK1") => {}
        other => {
            return Err(Error::format(
                path,
                format!("expected SRK1 header, found {other:?}"),
            ))
        }
    }
    let size: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(path, "missing kernel size"))?;
    let mut weights = Vec::with_capacity(size * size);
    for token in tokens {
        let w: f64 = token
            .parse()
            .map_err(|_| Error::format(path, format!("bad weight {token:?}")))?;
        weights.push(w);
    }
    if weights.len() != size * size {
        return Err(Error::format(
            path,
            format!("expected {} weights, found {}", size * size, weights.len()),
        ));
    }
    Kernel::new(size, weights).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a noise bank as a directory of 16-bit PGM patches plus a
/// `noisebank.txt` manifest. Patch values in [-1, 1] are stored as
/// `round((v+1)/2 * 65535)`.
pub fn save_noise_bank(bank: &NoiseBank, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!(
        "SRNB1 {} {} {:.16e}\n",
        bank.patch_size,
        bank.patches.len(),
        bank.source_variance_threshold
    );
    for (i, patch) in bank.patches.iter().enumerate() {
        let name = format!("patch_{i:05}.pgm");
        let mut bytes = format!("P5\n{0} {0}\n65535\n", bank.patch_size).into_bytes();
        for v in &patch.samples {
            let q = (((v + 1.0) / 2.0) * 65535.0).round().clamp(0.0, 65535.0) as u16;
            bytes.extend_from_slice(&q.to_be_bytes());
        }
        write_atomic(&dir.join(&name), &bytes)?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    write_atomic(&dir.join("noisebank.txt"), manifest.as_bytes())
}

pub fn load_noise_bank(dir: impl AsRef<Path>) -> Result<NoiseBank> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("noisebank.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(&manifest_path, "empty manifest"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("SRNB1") {
        return Err(Error::format(&manifest_path, "expected SRNB1 header"));
    }
    let patch_size: usize = fields
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(&manifest_path, "missing patch size"))?;
    let count: usize = fields
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(&manifest_path, "missing patch count"))?;
    let threshold: f64 = fields
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(&manifest_path, "missing variance threshold"))?;
    let mut patches = Vec::with_capacity(count);
    for name in lines.take(count) {
        let path = dir.join(name.trim());
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let raster_start = bytes.len() - 2 * patch_size * patch_size;
        let mut samples = Vec::with_capacity(patch_size * patch_size);
        for pair in bytes[raster_start..].chunks_exact(2) {
            let q = u16::from_be_bytes([pair[0], pair[1]]) as f64;
            samples.push(q / 65535.0 * 2.0 - 1.0);
        }
        // re-subtract the mean: quantization can leave a small residual
        let mu = samples.iter().sum::<f64>() / samples.len() as f64;
        for v in &mut samples {
            *v -= mu;
        }
        patches.push(Patch {
            size: patch_size,
            samples,
            origin: (0, 0),
        });
    }
    if patches.len() != count {
        return Err(Error::format(
            &manifest_path,
            format!("manifest lists {count} patches, found {}", patches.len()),
        ));
    }
    Ok(NoiseBank {
        patch_size,
        patches,
        source_variance_threshold: threshold,
    })
}
