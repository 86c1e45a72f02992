//! Quality and rate metrics pooled over a fixed evaluation viewport set.
//!
//! All viewport-based metrics extract the same six-viewport 90-degree plan
//! at square viewports of half the panorama height, independent of the
//! plan a stream was coded with, so numbers are comparable across runs.

use crate::error::{Error, Result};
use crate::geometry::{extract_plan, plan_coverage, ErpImage, FieldOfView, ViewportImage};
use crate::pipeline::atomic_write;
use crate::tensor::Tensor;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use std::path::Path;

/// Scalar rate-distortion objective: latent rate plus hyper rate plus
/// weighted distortion, exactly as the trainer balances them.
pub fn rd_loss(rate_y: f64, rate_z: f64, lambda: f64, distortion: f64) -> f64 {
    rate_y + rate_z + lambda * distortion
}

/// Bits per compressed panorama: eight bits per stream byte.
pub fn bpi(stream_bytes: usize) -> f64 {
    stream_bytes as f64 * 8.0
}

/// The fixed evaluation viewports of a panorama: square 90-degree windows
/// of side height/2 at the six canonical centers.
pub fn eval_viewports(erp: &ErpImage) -> Result<Vec<ViewportImage>> {
    let side = erp.height / 2;
    let plan = plan_coverage(FieldOfView::square(90.0)?, side, side)?;
    extract_plan(erp, &plan)
}

fn check_same_dims(a: &ErpImage, b: &ErpImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch {
            op: "viewport metric",
            detail: format!(
                "panoramas are {}x{} and {}x{}",
                a.width, a.height, b.width, b.height
            ),
        });
    }
    Ok(())
}

/// Viewport-pooled PSNR in dB over [0, 1] pixels; `None` means the images
/// are identical on every evaluation viewport (infinite PSNR).
pub fn v_psnr(reference: &ErpImage, reconstruction: &ErpImage) -> Result<Option<f64>> {
    check_same_dims(reference, reconstruction)?;
    let a = eval_viewports(reference)?;
    let b = eval_viewports(reconstruction)?;
    let mut sse = 0.0f64;
    let mut count = 0usize;
    for (va, vb) in a.iter().zip(&b) {
        for (pa, pb) in va.data().iter().zip(vb.data()) {
            let d = *pa as f64 - *pb as f64;
            sse += d * d;
        }
        count += va.data().len();
    }
    let mse = sse / count as f64;
    if mse == 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (1.0 / mse).log10()))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let mut sum = 0.0;
    for dy in 0..SSIM_WINDOW {
        for dx in 0..SSIM_WINDOW {
            let ry = dy as f64 - 5.0;
            let rx = dx as f64 - 5.0;
            let w = (-(rx * rx + ry * ry) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            k[dy * SSIM_WINDOW + dx] = w;
            sum += w;
        }
    }
    for w in &mut k {
        *w /= sum;
    }
    k
}

/// Mean SSIM between two same-sized viewports, Gaussian-windowed, computed
/// per channel over the valid (unpadded) region and averaged.
fn ssim_viewport(a: &ViewportImage, b: &ViewportImage) -> f64 {
    let (w, h) = (a.width, a.height);
    assert!(w >= SSIM_WINDOW && h >= SSIM_WINDOW, "viewport smaller than the SSIM window");
    let kernel = ssim_kernel();
    let mut total = 0.0f64;
    let mut windows = 0usize;
    for ch in 0..3 {
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let kw = kernel[dy * SSIM_WINDOW + dx];
                        let i = ((y0 + dy) * w + (x0 + dx)) * 3 + ch;
                        let xa = a.data()[i] as f64;
                        let xb = b.data()[i] as f64;
                        mx += kw * xa;
                        my += kw * xb;
                        mxx += kw * xa * xa;
                        myy += kw * xb * xb;
                        mxy += kw * xa * xb;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cxy = mxy - mx * my;
                let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                total += s;
                windows += 1;
            }
        }
    }
    total / windows as f64
}

/// Viewport-pooled mean SSIM over the fixed evaluation plan.
pub fn v_ssim(reference: &ErpImage, reconstruction: &ErpImage) -> Result<f64> {
    check_same_dims(reference, reconstruction)?;
    let a = eval_viewports(reference)?;
    let b = eval_viewports(reconstruction)?;
    let sum: f64 = a.iter().zip(&b).map(|(va, vb)| ssim_viewport(va, vb)).sum();
    Ok(sum / a.len() as f64)
}

/// Per-position prediction residual (latent - mean) / variance, averaged
/// over channels: near zero where the entropy model predicts well.
/// `y_hat` is (C, h, w); `mu` and `sigma` are (h*w, C) token matrices.
pub fn redundancy_map(y_hat: &Tensor<f64>, mu: &Tensor<f64>, sigma: &Tensor<f64>) -> Tensor<f64> {
    let s = y_hat.shape();
    assert_eq!(s.len(), 3, "latent must be (C, h, w)");
    let (c, n) = (s[0], s[1] * s[2]);
    assert_eq!(mu.shape(), &[n, c], "mean token matrix shape mismatch");
    assert_eq!(sigma.shape(), &[n, c], "scale token matrix shape mismatch");
    let mut out = vec![0.0f64; n];
    for p in 0..n {
        let mut acc = 0.0;
        for ch in 0..c {
            let y = y_hat.data()[ch * n + p];
            let m = mu.data()[p * c + ch];
            let sg = sigma.data()[p * c + ch];
            acc += (y - m) / (sg * sg);
        }
        out[p] = acc / c as f64;
    }
    Tensor::from_vec(vec![s[1], s[2]], out)
}

/// Normalizes a signed map to grayscale bytes: 128 is zero, full scale is
/// the largest magnitude present; an all-zero map is uniform gray.
pub fn redundancy_to_gray(map: &Tensor<f64>) -> Vec<u8> {
    let maxabs = map.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    map.data()
        .iter()
        .map(|&v| {
            if maxabs == 0.0 {
                128u8
            } else {
                (128.0 + 127.0 * v / maxabs).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

/// Writes an 8-bit grayscale PNG atomically.
pub fn save_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel buffer does not match dimensions");
    let mut bytes = Vec::new();
    PngEncoder::new(&mut bytes).write_image(
        pixels,
        width as u32,
        height as u32,
        ExtendedColorType::L8,
    )?;
    atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_erp(height: usize, value: f32) -> ErpImage {
        ErpImage::new(2 * height, height, vec![value; 2 * height * height * 3]).unwrap()
    }

    #[test]
    fn rd_loss_is_the_documented_arithmetic() {
        assert!((rd_loss(100.0, 20.0, 0.013, 0.01) - 120.00013).abs() < 1e-12);
        assert_eq!(rd_loss(0.0, 0.0, 0.5, 0.0), 0.0);
    }

    #[test]
    fn bpi_is_eight_bits_per_byte() {
        assert_eq!(bpi(1000), 8000.0);
        assert_eq!(bpi(0), 0.0);
    }

    #[test]
    fn identical_panoramas_have_no_finite_psnr_and_unit_ssim() {
        let a = const_erp(64, 0.25);
        assert_eq!(v_psnr(&a, &a).unwrap(), None);
        assert!((v_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sixteen_level_offset_matches_hand_computed_psnr() {
        // Uniform offset of 16/255: mse = (16/255)^2, so the viewport PSNR
        // is 20*log10(255/16) = 24.0483 dB regardless of the plan.
        let a = const_erp(64, 0.5);
        let b = const_erp(64, 0.5 + 16.0 / 255.0);
        let got = v_psnr(&a, &b).unwrap().expect("finite");
        assert!((got - 24.0483).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn uniform_offset_ssim_matches_closed_form() {
        // Constant images make every window trivial: variances vanish and
        // ssim reduces to (2 mx my + C1) / (mx^2 + my^2 + C1).
        let a = const_erp(64, 0.5);
        let b = const_erp(64, 0.6);
        let expect = (2.0 * 0.5 * 0.6 + SSIM_C1) / (0.5f64.powi(2) + 0.6f64.powi(2) + SSIM_C1);
        let got = v_ssim(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-6, "got {got}, expected {expect}");
        let sym = v_ssim(&b, &a).unwrap();
        assert!((got - sym).abs() < 1e-12, "ssim must be symmetric");
    }

    #[test]
    fn ssim_penalizes_noise_more_than_psnr_equivalent_offset() {
        let a = const_erp(64, 0.5);
        let mut noisy = vec![0.5f32; 2 * 64 * 64 * 3];
        for (i, v) in noisy.iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.1 } else { -0.1 };
        }
        let b = ErpImage::new(128, 64, noisy).unwrap();
        let off = const_erp(64, 0.6);
        let s_noise = v_ssim(&a, &b).unwrap();
        let s_off = v_ssim(&a, &off).unwrap();
        assert!(
            s_noise < s_off,
            "structural noise ({s_noise}) must score below a flat offset ({s_off})"
        );
    }

    #[test]
    fn redundancy_map_formula_and_normalization() {
        // One position where y = mu + sigma^2 must map to exactly 1.
        let y = Tensor::from_vec(vec![1, 2, 2], vec![4.0, 0.0, 0.0, 0.0]);
        let mu = Tensor::from_vec(vec![4, 1], vec![0.0, 0.0, 0.0, 0.0]);
        let sigma = Tensor::from_vec(vec![4, 1], vec![2.0, 1.0, 1.0, 1.0]);
        let map = redundancy_map(&y, &mu, &sigma);
        assert_eq!(map.data(), &[1.0, 0.0, 0.0, 0.0]);
        let gray = redundancy_to_gray(&map);
        assert_eq!(gray, vec![255, 128, 128, 128]);

        let zero = Tensor::zeros(vec![2, 2]);
        assert_eq!(redundancy_to_gray(&zero), vec![128; 4], "all-zero map is mid-gray");
    }

    #[test]
    fn psnr_is_invariant_to_which_image_is_the_reference_for_offsets() {
        let a = const_erp(64, 0.3);
        let b = const_erp(64, 0.4);
        let ab = v_psnr(&a, &b).unwrap().unwrap();
        let ba = v_psnr(&b, &a).unwrap().unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }
}
