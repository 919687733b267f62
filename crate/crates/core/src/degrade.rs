//! Blind degradation synthesis: Gaussian blur, bilinear down/up scaling,
//! additive Gaussian noise in 8-bit units, and an in-memory block-DCT
//! compression operator with the classical Annex-K quality scaling. Fully
//! deterministic given (image, params, seed).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vsp_tensor::{no_grad, rng as trng, Tensor};

use crate::error::{CoreError, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationParams {
    /// Blur std in pixels.
    pub sigma: f64,
    /// Down/up scale factor.
    pub scale: f64,
    /// Noise std in 8-bit units.
    pub noise: f64,
    /// Compression quality factor.
    pub quality: f64,
}

pub const SIGMA_RANGE: (f64, f64) = (0.2, 10.0);
pub const SCALE_RANGE: (f64, f64) = (1.0, 8.0);
pub const NOISE_RANGE: (f64, f64) = (0.0, 20.0);
pub const QUALITY_RANGE: (f64, f64) = (60.0, 100.0);

/// Uniform sample within the training ranges.
pub fn sample_params(rng: &mut ChaCha8Rng) -> DegradationParams {
    let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
    DegradationParams {
        sigma: u(rng, SIGMA_RANGE),
        scale: u(rng, SCALE_RANGE),
        noise: u(rng, NOISE_RANGE),
        quality: u(rng, QUALITY_RANGE),
    }
}

/// Benign corner of the ranges (nearly identity).
pub fn benign_params() -> DegradationParams {
    DegradationParams {
        sigma: SIGMA_RANGE.0,
        scale: 1.0,
        noise: 0.0,
        quality: 100.0,
    }
}

/// Separable Gaussian blur, kernel radius ceil(3 sigma), renormalized,
/// replicate borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius < 1 {
        return img.clone();
    }
    let mut weights = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        weights.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = weights.iter().sum();
    let weights: Vec<f32> = weights.iter().map(|w| (w / total) as f32).collect();

    let (w, h) = (img.width, img.height);
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut horiz = Image::new(w, h);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (k, &wt) in weights.iter().enumerate() {
                    let sx = clamp(x as isize + k as isize - radius, w);
                    acc += wt * img.get(c, y, sx);
                }
                horiz.set(c, y, x, acc);
            }
        }
    }
    let mut out = Image::new(w, h);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (k, &wt) in weights.iter().enumerate() {
                    let sy = clamp(y as isize + k as isize - radius, h);
                    acc += wt * horiz.get(c, sy, x);
                }
                out.set(c, y, x, acc);
            }
        }
    }
    out
}

/// Bilinear resize of an image to an explicit size (align-corners = false).
pub fn resize_image(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let t = Tensor::<f32>::from_vec(&[3, img.height, img.width], img.data.clone())
        .map_err(CoreError::Tensor)?;
    let resized = no_grad(|| t.bilinear_resize(out_h, out_w)).map_err(CoreError::Tensor)?;
    Ok(Image {
        width: out_w,
        height: out_h,
        data: resized.data(),
    })
}

/// Additive N(0, (delta/255)^2) noise, then clamp to [0,1].
pub fn add_noise(img: &Image, delta: f64, rng: &mut ChaCha8Rng) -> Image {
    let std = (delta / 255.0) as f32;
    let mut out = img.clone();
    if std > 0.0 {
        let noise: Vec<f32> = trng::randn_vec(rng, out.data.len());
        for (v, n) in out.data.iter_mut().zip(noise) {
            *v += std * n;
        }
    }
    out.clamp01();
    out
}

// Annex-K base quantization tables.
#[rustfmt::skip]
const LUMA_Q: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0,
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0,
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0,
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0,
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0,
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0,
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0,
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];
#[rustfmt::skip]
const CHROMA_Q: [f64; 64] = [
    17.0, 18.0, 24.0, 47.0, 99.0, 99.0, 99.0, 99.0,
    18.0, 21.0, 26.0, 66.0, 99.0, 99.0, 99.0, 99.0,
    24.0, 26.0, 56.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    47.0, 66.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
];

/// Quality-factor scaling: q<50 uses 5000/q, otherwise 200-2q (percent).
fn scaled_table(base: &[f64; 64], quality: f64) -> [f64; 64] {
    let q = quality.clamp(1.0, 100.0);
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut out = [0.0; 64];
    for (o, b) in out.iter_mut().zip(base) {
        *o = ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    out
}

fn dct_cos_table() -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for (x, row) in t.iter_mut().enumerate() {
        for (u, cell) in row.iter_mut().enumerate() {
            *cell = (((2 * x + 1) as f64) * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    t
}

/// Quantize one 8x8 block in place through the DCT domain.
fn quantize_block(block: &mut [f64; 64], table: &[f64; 64], cos: &[[f64; 8]; 8]) {
    let c = |u: usize| if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    let mut coef = [0.0f64; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                for y in 0..8 {
                    acc += block[x * 8 + y] * cos[x][u] * cos[y][v];
                }
            }
            coef[u * 8 + v] = 0.25 * c(u) * c(v) * acc;
        }
    }
    for i in 0..64 {
        coef[i] = (coef[i] / table[i]).round() * table[i];
    }
    for x in 0..8 {
        for y in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                for v in 0..8 {
                    acc += c(u) * c(v) * coef[u * 8 + v] * cos[x][u] * cos[y][v];
                }
            }
            block[x * 8 + y] = 0.25 * acc;
        }
    }
}

/// In-memory DCT-quantization compression: luminance-chroma transform,
/// per-channel 8x8 block quantization, no container format.
pub fn compress_quality(img: &Image, quality: f64) -> Image {
    let (w, h) = (img.width, img.height);
    let pw = w.div_ceil(8) * 8;
    let ph = h.div_ceil(8) * 8;

    // RGB -> YCbCr planes at 8-bit scale, level-shifted by -128,
    // edge-replicated to block multiples
    let mut planes = vec![vec![0.0f64; pw * ph]; 3];
    for y in 0..ph {
        for x in 0..pw {
            let sy = y.min(h - 1);
            let sx = x.min(w - 1);
            let r = img.get(0, sy, sx) as f64 * 255.0;
            let g = img.get(1, sy, sx) as f64 * 255.0;
            let b = img.get(2, sy, sx) as f64 * 255.0;
            let yy = 0.299 * r + 0.587 * g + 0.114 * b;
            let cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
            let cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
            planes[0][y * pw + x] = yy - 128.0;
            planes[1][y * pw + x] = cb - 128.0;
            planes[2][y * pw + x] = cr - 128.0;
        }
    }

    let cos = dct_cos_table();
    let tables = [
        scaled_table(&LUMA_Q, quality),
        scaled_table(&CHROMA_Q, quality),
        scaled_table(&CHROMA_Q, quality),
    ];
    for (plane, table) in planes.iter_mut().zip(&tables) {
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [0.0f64; 64];
                for i in 0..8 {
                    for j in 0..8 {
                        block[i * 8 + j] = plane[(by + i) * pw + bx + j];
                    }
                }
                quantize_block(&mut block, table, &cos);
                for i in 0..8 {
                    for j in 0..8 {
                        plane[(by + i) * pw + bx + j] = block[i * 8 + j];
                    }
                }
            }
        }
    }

    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let yy = planes[0][y * pw + x] + 128.0;
            // chroma planes were stored centered (the +128 offset removed)
            let cb = planes[1][y * pw + x];
            let cr = planes[2][y * pw + x];
            let r = yy + 1.402 * cr;
            let g = yy - 0.344136 * cb - 0.714136 * cr;
            let b = yy + 1.772 * cb;
            out.set(0, y, x, (r / 255.0) as f32);
            out.set(1, y, x, (g / 255.0) as f32);
            out.set(2, y, x, (b / 255.0) as f32);
        }
    }
    out.clamp01();
    out
}

/// The full pipeline: blur, downsample, noise, compress, upsample.
pub fn degrade(img: &Image, params: &DegradationParams, seed: u64) -> Result<Image> {
    let (h, w) = (img.height, img.width);
    let blurred = gaussian_blur(img, params.sigma);
    let down = if params.scale == 1.0 {
        blurred
    } else {
        let nh = (h as f64 / params.scale).round() as usize;
        let nw = (w as f64 / params.scale).round() as usize;
        if nh < 1 || nw < 1 {
            return Err(CoreError::Degradation(format!(
                "scale {} collapses {}x{} below one pixel",
                params.scale, h, w
            )));
        }
        resize_image(&blurred, nh, nw)?
    };
    let mut rng = trng::stream(seed, "degrade/noise", 0);
    let noisy = add_noise(&down, params.noise, &mut rng);
    let compressed = compress_quality(&noisy, params.quality);
    if params.scale == 1.0 {
        Ok(compressed)
    } else {
        resize_image(&compressed, h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::face_params;
    use crate::image::psnr;

    #[test]
    fn benign_corner_is_near_identity() {
        let img = face_params(5, 0).render(32);
        let out = degrade(&img, &benign_params(), 1).unwrap();
        assert!(psnr(&img, &out) > 40.0, "psnr {}", psnr(&img, &out));
    }

    #[test]
    fn degrade_is_bit_deterministic() {
        let img = face_params(5, 1).render(32);
        let p = DegradationParams {
            sigma: 2.5,
            scale: 3.3,
            noise: 12.0,
            quality: 72.0,
        };
        let a = degrade(&img, &p, 99).unwrap();
        let b = degrade(&img, &p, 99).unwrap();
        assert_eq!(a.data, b.data);
        let c = degrade(&img, &p, 100).unwrap();
        assert_ne!(a.data, c.data, "different seed must change the noise");
    }

    #[test]
    fn noise_std_calibrated_on_constant_image() {
        let img = Image::filled(64, 64, [0.5; 3]);
        let mut rng = trng::stream(4, "t", 0);
        let noisy = add_noise(&img, 20.0, &mut rng);
        let diffs: Vec<f64> = noisy
            .data
            .iter()
            .zip(&img.data)
            .map(|(&a, &b)| (a - b) as f64 * 255.0)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / diffs.len() as f64;
        let std = var.sqrt();
        assert!(
            (std - 20.0).abs() / 20.0 < 0.05,
            "measured noise std {std}, want 20 +- 5%"
        );
    }

    #[test]
    fn compression_quality_behaviour() {
        let img = face_params(6, 2).render(32);
        let hi = compress_quality(&img, 100.0);
        assert!(psnr(&img, &hi) > 40.0, "q=100 psnr {}", psnr(&img, &hi));

        // blocking: mean absolute discontinuity across 8x8 block boundaries
        fn blockiness(img: &Image) -> f64 {
            let mut acc = 0.0;
            let mut n = 0usize;
            for c in 0..3 {
                for y in 0..img.height {
                    for x in (8..img.width).step_by(8) {
                        acc += (img.get(c, y, x) - img.get(c, y, x - 1)).abs() as f64;
                        n += 1;
                    }
                }
                for y in (8..img.height).step_by(8) {
                    for x in 0..img.width {
                        acc += (img.get(c, y, x) - img.get(c, y - 1, x)).abs() as f64;
                        n += 1;
                    }
                }
            }
            acc / n as f64
        }
        let lo = compress_quality(&img, 60.0);
        assert!(
            blockiness(&lo) > blockiness(&hi),
            "q=60 must introduce more blocking: {} vs {}",
            blockiness(&lo),
            blockiness(&hi)
        );
    }

    #[test]
    fn constant_image_survives_compression() {
        let img = Image::filled(32, 32, [0.3, 0.6, 0.9]);
        for q in [60.0, 80.0, 100.0] {
            let out = compress_quality(&img, q);
            for c in 0..3 {
                let v = out.get(c, 0, 0);
                for y in 0..32 {
                    for x in 0..32 {
                        assert!(
                            (out.get(c, y, x) - v).abs() < 1e-5,
                            "q={q} not constant at ({c},{y},{x})"
                        );
                    }
                }
                assert!((v - img.get(c, 0, 0)).abs() < 0.02, "q={q} DC shifted");
            }
        }
    }

    #[test]
    fn scale_one_skips_resampling() {
        let img = face_params(7, 3).render(32);
        let same = resize_image(&img, 32, 32).unwrap();
        assert_eq!(img.data, same.data);
        // full pipeline with only compression+blur at benign settings stays put
        let p = DegradationParams {
            sigma: 0.2,
            scale: 1.0,
            noise: 0.0,
            quality: 100.0,
        };
        let out = degrade(&img, &p, 0).unwrap();
        assert!(psnr(&img, &out) > 40.0);
    }

    #[test]
    fn sub_pixel_scale_rejected() {
        let img = Image::filled(4, 4, [0.5; 3]);
        let p = DegradationParams {
            sigma: 0.2,
            scale: 16.0,
            noise: 0.0,
            quality: 100.0,
        };
        assert!(degrade(&img, &p, 0).is_err());
    }
}
