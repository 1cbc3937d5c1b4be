//! Image representation and file I/O.
//!
//! Images are planar floating-point rasters: all samples of channel 0, then
//! channel 1, then channel 2, each plane row-major. Sample values live in
//! [0, 1]; operations that could leave that range clamp explicitly.
//!
//! Supported file formats are binary PGM (P5) and PPM (P6) with maxval 255
//! or 65535 (16-bit samples big-endian). 8-bit PNG is available behind the
//! `png` feature.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Planar floating-point raster with 1 or 3 channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl Image {
    /// Builds an image from planar samples (all of channel 0, then 1, then 2).
    pub fn from_samples(
        width: usize,
        height: usize,
        channels: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter("image dimensions must be >= 1".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Parameter(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::Parameter(format!(
                "sample count {} does not match {}x{}x{}",
                samples.len(),
                width,
                height,
                channels
            )));
        }
        if samples.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Parameter(
                "samples must be finite and in [0, 1]".into(),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Constant-intensity single- or three-channel image.
    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Image::from_samples(width, height, channels, vec![value; width * height * channels])
    }

    /// Clamps arbitrary planar samples into [0, 1] and builds an image.
    /// Non-finite values are rejected; clamping is the explicit step here.
    pub fn from_samples_clamped(
        width: usize,
        height: usize,
        channels: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite sample produced".into()));
        }
        let clamped = samples.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image::from_samples(width, height, channels, clamped)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// One channel plane, row-major.
    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.samples[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.samples[channel * self.width * self.height + row * self.width + col]
    }

    /// Crops to the `width x height` region anchored at the top-left corner.
    pub fn crop_top_left(&self, width: usize, height: usize) -> Result<Image> {
        if width > self.width || height > self.height || width == 0 || height == 0 {
            return Err(Error::Parameter(format!(
                "crop {}x{} out of bounds for {}x{}",
                width, height, self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(width * height * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for r in 0..height {
                samples.extend_from_slice(&plane[r * self.width..r * self.width + width]);
            }
        }
        Image::from_samples(width, height, self.channels, samples)
    }

    /// Mirrors the image horizontally (each row reversed), all channels.
    pub fn flip_horizontal(&self) -> Image {
        let mut samples = Vec::with_capacity(self.samples.len());
        for c in 0..self.channels {
            let plane = self.plane(c);
            for r in 0..self.height {
                let row = &plane[r * self.width..(r + 1) * self.width];
                samples.extend(row.iter().rev().copied());
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            samples,
        }
    }
}

/// Square single-channel patch tied to its origin in the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub samples: Vec<f64>,
    /// (row, col) of the top-left corner in the source image.
    pub origin: (usize, usize),
}

impl Patch {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population variance of the samples. Exactly-constant patches report
    /// exactly 0 so that a zero variance threshold retains them.
    pub fn variance(&self) -> f64 {
        let first = self.samples[0];
        if self.samples.iter().all(|v| *v == first) {
            return 0.0;
        }
        let mu = self.mean();
        self.samples.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / self.samples.len() as f64
    }
}

/// Converts to single-channel luma with ITU-R BT.601 weights.
/// Single-channel input is returned unchanged.
pub fn to_luma(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let n = img.width * img.height;
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        samples.push((0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).clamp(0.0, 1.0));
    }
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        samples,
    }
}

/// All fully contained `size x size` patches at origins `(r*stride, c*stride)`,
/// row-major over the origin grid.
pub fn extract_patches(img: &Image, size: usize, stride: usize) -> Result<Vec<Patch>> {
    if img.channels != 1 {
        return Err(Error::Parameter(
            "extract_patches requires a single-channel image".into(),
        ));
    }
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    if size == 0 || size > img.width || size > img.height {
        return Err(Error::Parameter(format!(
            "patch size {} exceeds image dimensions {}x{}",
            size, img.width, img.height
        )));
    }
    let plane = img.plane(0);
    let rows = (img.height - size) / stride + 1;
    let cols = (img.width - size) / stride + 1;
    let mut patches = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let (r0, c0) = (pr * stride, pc * stride);
            let mut samples = Vec::with_capacity(size * size);
            for r in 0..size {
                let start = (r0 + r) * img.width + c0;
                samples.extend_from_slice(&plane[start..start + size]);
            }
            patches.push(Patch {
                size,
                samples,
                origin: (r0, c0),
            });
        }
    }
    Ok(patches)
}

/// Loads an image, scaling samples to [0, 1] (1/255 for 8-bit, 1/65535 for
/// 16-bit sources). Format is detected from the file's magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_pnm(&bytes, path);
    }
    #[cfg(feature = "png")]
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return crate::pngio::decode_png(&bytes, path);
    }
    let magic: Vec<String> = bytes.iter().take(4).map(|b| format!("{b:#04x}")).collect();
    Err(Error::format(
        path,
        format!("unsupported format (magic bytes [{}])", magic.join(", ")),
    ))
}

/// Writes the image in the format chosen by the path extension
/// (`.pgm`/`.ppm`, `.png` with the `png` feature). Samples are quantized
/// as `round(v * 255)`.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" | "ppm" => save_pnm(img, path),
        #[cfg(feature = "png")]
        "png" => crate::pngio::encode_png(img, path),
        other => Err(Error::format(
            path,
            format!("unsupported output extension {other:?} (use pgm/ppm)"),
        )),
    }
}

fn save_pnm(img: &Image, path: &Path) -> Result<()> {
    let ext_is_ppm = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("ppm"))
        .unwrap_or(false);
    if ext_is_ppm && img.channels != 3 {
        return Err(Error::Parameter("ppm output requires 3 channels".into()));
    }
    if !ext_is_ppm && img.channels != 1 {
        return Err(Error::Parameter("pgm output requires 1 channel".into()));
    }
    let mut out = Vec::with_capacity(img.samples.len() + 32);
    let magic = if ext_is_ppm { "P6" } else { "P5" };
    write!(out, "{magic}\n{} {}\n255\n", img.width, img.height).expect("vec write");
    let n = img.width * img.height;
    for i in 0..n {
        for c in 0..img.channels {
            out.push(quantize_u8(img.samples[c * n + i]));
        }
    }
    write_atomic(path, &out)
}

pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes via a temp file in the same directory so readers never observe a
/// partially written image.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp.partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    let channels = if bytes.starts_with(b"P6") { 3 } else { 1 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = parse_pnm_int(bytes, &mut pos)
            .ok_or_else(|| Error::format(path, "truncated or malformed PNM header"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(path, "missing whitespace after maxval")),
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    let wide = maxval > 255;
    let bytes_per_sample = if wide { 2 } else { 1 };
    let n = width * height;
    let expected = n * channels * bytes_per_sample;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("raster truncated: {} bytes, expected {expected}", raster.len()),
            ),
        ));
    }
    let scale = 1.0 / maxval as f64;
    // File samples are interleaved per pixel; internal layout is planar.
    let mut samples = vec![0.0f64; n * channels];
    for i in 0..n {
        for c in 0..channels {
            let idx = (i * channels + c) * bytes_per_sample;
            let raw = if wide {
                u16::from_be_bytes([raster[idx], raster[idx + 1]]) as f64
            } else {
                raster[idx] as f64
            };
            samples[c * n + i] = (raw * scale).min(1.0);
        }
    }
    Image::from_samples(width, height, channels, samples)
}

/// Parses the next unsigned integer, skipping whitespace and `#` comments.
fn parse_pnm_int(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}
