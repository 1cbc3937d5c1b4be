//! Full-reference quality metrics: PSNR and SSIM on unit-range images.

use crate::error::{Error, Result};
use crate::image::{to_luma, Image};

/// PSNR and SSIM for one image pair. `psnr_db` is `f64::INFINITY` for
/// identical images.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// `10 * log10(1 / MSE)` with MAX = 1.0, over all samples of all channels.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::Parameter(format!(
            "shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let mse = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.samples().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 11-tap Gaussian window, sigma 1.5.
fn ssim_window_1d() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode separable filter with a symmetric window: output is
/// `(w - win + 1) x (h - win + 1)`.
fn valid_separable(src: &[f64], w: usize, h: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = win.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut mid = vec![0.0f64; ow * h];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        let out = &mut mid[r * ow..(r + 1) * ow];
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, wt) in win.iter().enumerate() {
                acc += wt * row[c + k];
            }
            *o = acc;
        }
    }
    let mut out = vec![0.0f64; ow * oh];
    for r in 0..oh {
        let dst = &mut out[r * ow..(r + 1) * ow];
        for (k, wt) in win.iter().enumerate() {
            let src_row = &mid[(r + k) * ow..(r + k + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += wt * s;
            }
        }
    }
    (out, ow, oh)
}

/// Mean local SSIM on luma with an 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2, evaluated on fully interior windows only.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Parameter("shape mismatch".into()));
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::Parameter(format!(
            "image {}x{} smaller than the {px}x{px} SSIM window",
            a.width(),
            a.height(),
            px = SSIM_WINDOW
        )));
    }
    let la = to_luma(a);
    let lb = to_luma(b);
    let (w, h) = (la.width(), la.height());
    let x = la.plane(0);
    let y = lb.plane(0);

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();

    let win = ssim_window_1d();
    let (mu_x, ow, oh) = valid_separable(x, w, h, &win);
    let (mu_y, _, _) = valid_separable(y, w, h, &win);
    let (m_xx, _, _) = valid_separable(&xx, w, h, &win);
    let (m_yy, _, _) = valid_separable(&yy, w, h, &win);
    let (m_xy, _, _) = valid_separable(&xy, w, h, &win);

    let mut total = 0.0;
    for i in 0..ow * oh {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        let v = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
        total += v;
    }
    Ok(total / (ow * oh) as f64)
}
