//! 8-bit PNG decode/encode, available behind the `png` feature.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub(crate) fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("png: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "only 8-bit png is supported"));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let n = width * height;
    let data = &buf[..info.buffer_size()];
    let (channels, step, offsets): (usize, usize, &[usize]) = match info.color_type {
        png::ColorType::Grayscale => (1, 1, &[0]),
        png::ColorType::GrayscaleAlpha => (1, 2, &[0]),
        png::ColorType::Rgb => (3, 3, &[0, 1, 2]),
        png::ColorType::Rgba => (3, 4, &[0, 1, 2]),
        other => {
            return Err(Error::format(path, format!("unsupported png color type {other:?}")));
        }
    };
    let mut samples = vec![0.0f64; n * channels];
    for i in 0..n {
        for (c, off) in offsets.iter().enumerate() {
            samples[c * n + i] = data[i * step + off] as f64 / 255.0;
        }
    }
    Image::from_samples(width, height, channels, samples)
}

pub(crate) fn encode_png(img: &Image, path: &Path) -> Result<()> {
    let n = img.width() * img.height();
    let mut data = Vec::with_capacity(n * img.channels());
    for i in 0..n {
        for c in 0..img.channels() {
            data.push(crate::image::quantize_u8(img.samples()[c * n + i]));
        }
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(if img.channels() == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::format(path, format!("png: {e}")))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::format(path, format!("png: {e}")))?;
    }
    crate::image::write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use crate::image::{load_image, save_image, Image};

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::from_samples(2, 2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.5]).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }
}
