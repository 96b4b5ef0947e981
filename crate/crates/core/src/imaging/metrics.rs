//! PSNR and SSIM with a peak signal of 1.0.

use super::Frame;
use crate::error::{Error, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::shape("mse: frame dimensions differ"));
    }
    let n = a.pixels().len() as f64;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio in decibels. Identical frames return the
/// `+inf` sentinel.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / err).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filter, valid region only: output is
/// `(h - 10) x (w - 10)`.
fn gaussian_valid(data: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    // Horizontal pass.
    let mut horiz = vec![0.0; vw * h];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * data[y * w + x + i];
            }
            horiz[y * vw + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * horiz[(y + i) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2. Frames must be at least 11x11.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::shape("ssim: frame dimensions differ"));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim requires at least {SSIM_WINDOW}x{SSIM_WINDOW} frames, got {w}x{h}"
        )));
    }
    let kernel = gaussian_kernel();
    let pa = a.pixels();
    let pb = b.pixels();
    let sq_a: Vec<f64> = pa.iter().map(|&v| v * v).collect();
    let sq_b: Vec<f64> = pb.iter().map(|&v| v * v).collect();
    let ab: Vec<f64> = pa.iter().zip(pb).map(|(&x, &y)| x * y).collect();

    let mu_a = gaussian_valid(pa, w, h, &kernel);
    let mu_b = gaussian_valid(pb, w, h, &kernel);
    let e_aa = gaussian_valid(&sq_a, w, h, &kernel);
    let e_bb = gaussian_valid(&sq_b, w, h, &kernel);
    let e_ab = gaussian_valid(&ab, w, h, &kernel);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}
