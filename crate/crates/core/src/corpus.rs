//! Procedural toy-face corpus: ellipse head, two eyes, mouth arc, random
//! colors and positions on a random background. Landmarks are known by
//! construction, which the identity-loss tests lean on. Rendering is
//! supersampled 3x so edges are soft enough for reconstruction targets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vsp_tensor::rng as trng;

use crate::error::{CoreError, Result};
use crate::image::Image;

const SS: usize = 3; // supersampling factor

#[derive(Debug, Clone, PartialEq)]
pub struct FaceGeometry {
    pub head_cx: f32,
    pub head_cy: f32,
    pub head_rx: f32,
    pub head_ry: f32,
    pub eye_dx: f32,
    pub eye_dy: f32,
    pub eye_r: f32,
    pub mouth_dy: f32,
    pub mouth_hw: f32,
    pub mouth_th: f32,
    pub mouth_curve: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceColors {
    pub bg: [f32; 3],
    pub head: [f32; 3],
    pub eye: [f32; 3],
    pub mouth: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub geometry: FaceGeometry,
    pub colors: FaceColors,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    lo + (hi - lo) * rng.gen::<f32>()
}

fn rgb(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [
        uniform(rng, lo, hi),
        uniform(rng, lo, hi),
        uniform(rng, lo, hi),
    ]
}

impl FaceGeometry {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        FaceGeometry {
            head_cx: uniform(rng, 0.44, 0.56),
            head_cy: uniform(rng, 0.44, 0.56),
            head_rx: uniform(rng, 0.26, 0.36),
            head_ry: uniform(rng, 0.30, 0.40),
            eye_dx: uniform(rng, 0.10, 0.16),
            eye_dy: uniform(rng, -0.16, -0.08),
            eye_r: uniform(rng, 0.030, 0.055),
            mouth_dy: uniform(rng, 0.10, 0.18),
            mouth_hw: uniform(rng, 0.09, 0.16),
            mouth_th: uniform(rng, 0.020, 0.045),
            mouth_curve: uniform(rng, 0.02, 0.08),
        }
    }
}

impl FaceColors {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        FaceColors {
            bg: rgb(rng, 0.05, 0.95),
            head: rgb(rng, 0.25, 0.95),
            eye: rgb(rng, 0.0, 0.25),
            mouth: rgb(rng, 0.0, 0.45),
        }
    }
}

impl FaceParams {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        FaceParams {
            geometry: FaceGeometry::sample(rng),
            colors: FaceColors::sample(rng),
        }
    }

    pub fn with_colors(&self, rng: &mut ChaCha8Rng) -> Self {
        FaceParams {
            geometry: self.geometry.clone(),
            colors: FaceColors::sample(rng),
        }
    }

    pub fn with_geometry(&self, rng: &mut ChaCha8Rng) -> Self {
        FaceParams {
            geometry: FaceGeometry::sample(rng),
            colors: self.colors.clone(),
        }
    }

    /// Color of the face at normalized coordinates (u, v) in [0,1).
    fn shade(&self, u: f32, v: f32) -> [f32; 3] {
        let g = &self.geometry;
        let c = &self.colors;
        // mouth band: parabola around (head_cx, head_cy + mouth_dy)
        let mx = u - g.head_cx;
        if mx.abs() <= g.mouth_hw {
            let arc_y = g.head_cy + g.mouth_dy + g.mouth_curve * (mx / g.mouth_hw).powi(2);
            if (v - arc_y).abs() <= g.mouth_th * 0.5 {
                return c.mouth;
            }
        }
        // eyes
        for side in [-1.0f32, 1.0] {
            let ex = g.head_cx + side * g.eye_dx;
            let ey = g.head_cy + g.eye_dy;
            let du = u - ex;
            let dv = v - ey;
            if du * du + dv * dv <= g.eye_r * g.eye_r {
                return c.eye;
            }
        }
        // head ellipse
        let hu = (u - g.head_cx) / g.head_rx;
        let hv = (v - g.head_cy) / g.head_ry;
        if hu * hu + hv * hv <= 1.0 {
            return c.head;
        }
        c.bg
    }

    pub fn render(&self, resolution: usize) -> Image {
        let mut img = Image::new(resolution, resolution);
        let n = resolution * SS;
        let inv = 1.0 / n as f32;
        let norm = 1.0 / (SS * SS) as f32;
        for y in 0..resolution {
            for x in 0..resolution {
                let mut acc = [0.0f32; 3];
                for sy in 0..SS {
                    for sx in 0..SS {
                        let v = ((y * SS + sy) as f32 + 0.5) * inv;
                        let u = ((x * SS + sx) as f32 + 0.5) * inv;
                        let s = self.shade(u, v);
                        acc[0] += s[0];
                        acc[1] += s[1];
                        acc[2] += s[2];
                    }
                }
                for ch in 0..3 {
                    img.set(ch, y, x, acc[ch] * norm);
                }
            }
        }
        img
    }

    pub fn describe(&self) -> String {
        let g = &self.geometry;
        let c = &self.colors;
        let mut s = String::new();
        let _ = write!(
            s,
            "head={},{},{},{} eyes={},{},{} mouth={},{},{},{}",
            g.head_cx,
            g.head_cy,
            g.head_rx,
            g.head_ry,
            g.eye_dx,
            g.eye_dy,
            g.eye_r,
            g.mouth_dy,
            g.mouth_hw,
            g.mouth_th,
            g.mouth_curve
        );
        let _ = write!(
            s,
            " bg={},{},{} headc={},{},{} eyec={},{},{} mouthc={},{},{}",
            c.bg[0],
            c.bg[1],
            c.bg[2],
            c.head[0],
            c.head[1],
            c.head[2],
            c.eye[0],
            c.eye[1],
            c.eye[2],
            c.mouth[0],
            c.mouth[1],
            c.mouth[2]
        );
        s
    }
}

/// Deterministic per-index face parameters.
pub fn face_params(seed: u64, index: u64) -> FaceParams {
    FaceParams::sample(&mut trng::stream(seed, "corpus/face", index))
}

/// Write `n` toy faces plus a manifest (one line per image: index, path,
/// generation parameters).
pub fn make_toy_corpus(n: usize, seed: u64, resolution: usize, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = String::new();
    for i in 0..n {
        let params = face_params(seed, i as u64);
        let img = params.render(resolution);
        let name = format!("face_{i:05}.ppm");
        img.write_ppm(&out_dir.join(&name))?;
        let _ = writeln!(manifest, "{i} {name} {}", params.describe());
    }
    std::fs::write(out_dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Load corpus images in manifest order.
pub fn load_corpus(dir: &Path) -> Result<Vec<(PathBuf, Image)>> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| CoreError::Image(format!("missing corpus manifest in {dir:?}: {e}")))?;
    let mut images = Vec::new();
    for line in manifest.lines() {
        let mut parts = line.split_whitespace();
        let _idx = parts.next();
        let Some(name) = parts.next() else { continue };
        let path = dir.join(name);
        let img = Image::read_ppm(&path)?;
        images.push((path, img));
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_generation_is_bit_reproducible() {
        let base = std::env::temp_dir().join("vsp_corpus_test");
        let d1 = base.join("a");
        let d2 = base.join("b");
        make_toy_corpus(5, 11, 32, &d1).unwrap();
        make_toy_corpus(5, 11, 32, &d2).unwrap();
        let m1 = std::fs::read(d1.join("manifest.txt")).unwrap();
        let m2 = std::fs::read(d2.join("manifest.txt")).unwrap();
        assert_eq!(m1, m2);
        for i in 0..5 {
            let f = format!("face_{i:05}.ppm");
            assert_eq!(
                std::fs::read(d1.join(&f)).unwrap(),
                std::fs::read(d2.join(&f)).unwrap()
            );
        }
    }

    #[test]
    fn faces_have_structure() {
        let p = face_params(3, 0);
        let img = p.render(32);
        // not constant
        let first = img.data[0];
        assert!(img.data.iter().any(|&v| (v - first).abs() > 0.05));
        // all in range
        assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn color_and_geometry_resampling() {
        let mut rng = trng::stream(1, "t", 0);
        let a = FaceParams::sample(&mut rng);
        let b = a.with_colors(&mut rng);
        assert_eq!(a.geometry, b.geometry);
        assert_ne!(a.colors, b.colors);
        let c = a.with_geometry(&mut rng);
        assert_eq!(a.colors, c.colors);
        assert_ne!(a.geometry, c.geometry);
    }
}
