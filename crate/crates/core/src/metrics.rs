//! Evaluation quantities: RMSE, PSNR, MSSIM and OCR accuracy, plus the
//! report table they are presented in.
//!
//! All metrics are computed in f64 on the stored 8-bit images, independent of
//! the training core's element type.

use crate::error::{Error, Result};
use crate::imaging::RasterImage;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub rmse: f64,
    pub psnr: f64,
    pub mssim: f64,
    pub ocr_percent: f64,
}

/// Named rows of {RMSE, PSNR, MSSIM, OCR%}.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

fn check_dims(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::InvalidArgument(format!(
            "image dimension mismatch: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Root mean squared 8-bit difference over all pixels and channels.
pub fn rmse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.pixels.len() as f64;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok((sum / n).sqrt())
}

/// 20 * log10(255 / rmse), capped at [`PSNR_CAP_DB`] for identical images.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    let r = rmse(a, b)?;
    if r == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (255.0 / r).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

fn luma_plane(img: &RasterImage) -> Vec<f64> {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut out = vec![0.0; w * h];
    if c == 1 {
        for (o, &p) in out.iter_mut().zip(&img.pixels) {
            *o = p as f64;
        }
    } else {
        for i in 0..w * h {
            let r = img.pixels[i * 3] as f64;
            let g = img.pixels[i * 3 + 1] as f64;
            let b = img.pixels[i * 3 + 2] as f64;
            out[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        }
    }
    out
}

/// Mean SSIM over stride-1 valid 11x11 Gaussian windows (sigma 1.5) on the
/// luma plane.
pub fn mssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than the {}x{} SSIM window",
            a.width, a.height, SSIM_WINDOW, SSIM_WINDOW
        )));
    }
    let la = luma_plane(a);
    let lb = luma_plane(b);
    let (w, h) = (a.width, a.height);
    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(h - SSIM_WINDOW) {
        for wx in 0..=(w - SSIM_WINDOW) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let g = win[ky * SSIM_WINDOW + kx];
                    let va = la[(wy + ky) * w + wx + kx];
                    let vb = lb[(wy + ky) * w + wx + kx];
                    mu_a += g * va;
                    mu_b += g * vb;
                    aa += g * va * va;
                    bb += g * vb * vb;
                    ab += g * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let ssim = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            total += ssim;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Percent of exact character matches.
pub fn ocr_accuracy(predictions: &[char], labels: &[char]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty label list".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

impl MetricsReport {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    /// Fixed-width table: Method | RMSE | PSNR | MSSIM | OCR(%).
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>8} {:>8} {:>7} {:>7}\n",
            "Method", "RMSE", "PSNR", "MSSIM", "OCR(%)"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>8.2} {:>8.2} {:>7.3} {:>7.2}\n",
                r.method, r.rmse, r.psnr, r.mssim, r.ocr_percent
            ));
        }
        out
    }

    /// Same numbers, machine readable.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("method,rmse,psnr,mssim,ocr_percent\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.2},{:.2},{:.3},{:.2}\n",
                r.method, r.rmse, r.psnr, r.mssim, r.ocr_percent
            ));
        }
        out
    }
}
