use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Interleaved RGB image, row-major from the top-left corner, values nominally
/// in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, col: usize, row: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, col: usize, row: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-first `3×H×W` tensor.
    pub fn to_planar(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c];
            }
        }
        Tensor::new(&[3, self.height, self.width], out).expect("non-empty image")
    }

    pub fn from_planar(t: &Tensor) -> Image {
        let s = t.shape();
        assert!(s.len() == 3 && s[0] == 3, "expected 3×H×W, got {s:?}");
        let (h, w) = (s[1], s[2]);
        let mut img = Image::new(w, h);
        for p in 0..h * w {
            for c in 0..3 {
                img.data[p * 3 + c] = t.data()[c * h * w + p];
            }
        }
        img
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Image {
        assert!(top + height <= self.height && left + width <= self.width);
        let mut out = Image::new(width, height);
        for r in 0..height {
            let src = ((top + r) * self.width + left) * 3;
            out.data[r * width * 3..(r + 1) * width * 3]
                .copy_from_slice(&self.data[src..src + width * 3]);
        }
        out
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resized(&self, width: usize, height: usize) -> Image {
        let mut out = Image::new(width, height);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for r in 0..height {
            let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (y0, fy) = (y as usize, y - libm::floor(y));
            let y1 = (y0 + 1).min(self.height - 1);
            for c in 0..width {
                let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let (x0, fx) = (x as usize, x - libm::floor(x));
                let x1 = (x0 + 1).min(self.width - 1);
                let (a, b, cc, d) = (
                    self.pixel(x0, y0),
                    self.pixel(x1, y0),
                    self.pixel(x0, y1),
                    self.pixel(x1, y1),
                );
                let mut px = [0.0; 3];
                for k in 0..3 {
                    let top = a[k] * (1.0 - fx) + b[k] * fx;
                    let bot = cc[k] * (1.0 - fx) + d[k] * fx;
                    px[k] = top * (1.0 - fy) + bot * fy;
                }
                out.set_pixel(c, r, px);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_round_trip() {
        let mut img = Image::new(3, 2);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let t = img.to_planar();
        assert_eq!(t.shape(), &[3, 2, 3]);
        assert_eq!(t.data()[6], 1.0);
        assert_eq!(Image::from_planar(&t), img);
    }

    #[test]
    fn crop_and_identity_resize() {
        let mut img = Image::new(4, 4);
        img.set_pixel(2, 1, [1.0, 0.5, 0.25]);
        assert_eq!(img.crop(1, 2, 2, 2).pixel(0, 0), [1.0, 0.5, 0.25]);
        assert_eq!(img.resized(4, 4), img);
    }
}
