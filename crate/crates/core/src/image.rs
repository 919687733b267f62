//! Planar RGB float images in [0,1], bit-exact PPM (P6) as the baseline
//! interchange format, and PSNR.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use vsp_tensor::{Scalar, Tensor};

use crate::error::{CoreError, Result};

/// RGB image, planar (channel, row, col), values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 3 * height * width values, channel-major.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Image::new(width, height);
        for c in 0..3 {
            let plane = &mut img.data[c * width * height..(c + 1) * width * height];
            plane.fill(rgb[c]);
        }
        img
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Tensor in network range [-1, 1], shape (3, h, w).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data
            .iter()
            .map(|&v| T::from_f64(v as f64 * 2.0 - 1.0))
            .collect();
        Tensor::from_vec(&[3, self.height, self.width], data).expect("image tensor")
    }

    /// Back from a (3, h, w) tensor in [-1, 1], clamped into range.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(CoreError::Image(format!(
                "expected (3,h,w) tensor, got {s:?}"
            )));
        }
        let data = t
            .data()
            .iter()
            .map(|v| (((v.to_f64() + 1.0) / 2.0) as f32).clamp(0.0, 1.0))
            .collect();
        Ok(Image {
            width: s[2],
            height: s[1],
            data,
        })
    }

    /// 8-bit binary PPM; quantization is round-half-up so writes are
    /// bit-exact given identical floats.
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let hw = self.width * self.height;
        let mut row = Vec::with_capacity(3 * hw);
        for i in 0..hw {
            for c in 0..3 {
                let v = (self.data[c * hw + i].clamp(0.0, 1.0) * 255.0 + 0.5) as u8;
                row.push(v);
            }
        }
        w.write_all(&row)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header = Vec::new();
        // read "P6", width, height, maxval as whitespace-separated tokens,
        // honoring '#' comments
        let mut tokens = Vec::new();
        let mut byte = [0u8; 1];
        let mut current = Vec::new();
        let mut in_comment = false;
        while tokens.len() < 4 {
            r.read_exact(&mut byte)?;
            let b = byte[0];
            if in_comment {
                if b == b'\n' {
                    in_comment = false;
                }
                continue;
            }
            match b {
                b'#' => in_comment = true,
                b' ' | b'\t' | b'\r' | b'\n' => {
                    if !current.is_empty() {
                        tokens.push(String::from_utf8_lossy(&current).to_string());
                        current.clear();
                    }
                }
                _ => current.push(b),
            }
        }
        header.extend_from_slice(&tokens);
        if header[0] != "P6" {
            return Err(CoreError::Image(format!("not a P6 ppm: {}", header[0])));
        }
        let width: usize = header[1]
            .parse()
            .map_err(|_| CoreError::Image("bad width".into()))?;
        let height: usize = header[2]
            .parse()
            .map_err(|_| CoreError::Image("bad height".into()))?;
        if header[3] != "255" {
            return Err(CoreError::Image("only maxval 255 supported".into()));
        }
        let hw = width * height;
        let mut raw = vec![0u8; 3 * hw];
        r.read_exact(&mut raw)?;
        let mut img = Image::new(width, height);
        for i in 0..hw {
            for c in 0..3 {
                img.data[c * hw + i] = raw[i * 3 + c] as f32 / 255.0;
            }
        }
        Ok(img)
    }
}

/// PSNR in dB on the [0,1] scale; identical images give +inf.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.data.len(), b.data.len(), "psnr size mismatch");
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_is_byte_exact() {
        let dir = std::env::temp_dir().join("vsp_image_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut img = Image::new(5, 4);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.37) % 1.0;
        }
        let p1 = dir.join("a.ppm");
        let p2 = dir.join("b.ppm");
        img.write_ppm(&p1).unwrap();
        let back = Image::read_ppm(&p1).unwrap();
        back.write_ppm(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn tensor_roundtrip() {
        let img = Image::filled(4, 4, [0.25, 0.5, 0.75]);
        let t: Tensor<f32> = img.to_tensor();
        let back = Image::from_tensor(&t).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn psnr_behaves() {
        let a = Image::filled(8, 8, [0.5; 3]);
        assert!(psnr(&a, &a).is_infinite());
        let b = Image::filled(8, 8, [0.6, 0.5, 0.5]);
        let p = psnr(&a, &b);
        // mse = 0.01/3, up to f32 quantization of the inputs
        assert!((p - (-10.0 * (0.01f64 / 3.0).log10())).abs() < 1e-5);
    }
}
