//! 8-bit RGB raster images, binary PPM I/O and the network input transform.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub type Rgb = [u8; 3];

/// Row-major interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        let data = fill.iter().copied().cycle().take(width * height * 3).collect();
        Image { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "image {width}×{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Sub-image `[x0, x1) × [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Image> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::dim(format!(
                "crop {x0}..{x1} × {y0}..{y1} outside {}×{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity((x1 - x0) * (y1 - y0) * 3);
        for y in y0..y1 {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + (x1 - x0) * 3]);
        }
        Ok(Image { width: x1 - x0, height: y1 - y0, data })
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resize(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::dim(format!("resize {}×{} -> {width}×{height}", self.width, self.height)));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let axis = |i: usize, s: f64, n: usize| {
            let p = ((i as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
            let a = p.floor() as usize;
            let b = (a + 1).min(n - 1);
            (a, b, p - a as f64)
        };
        let cols: Vec<_> = (0..width).map(|x| axis(x, sx, self.width)).collect();
        let mut out = Image::new(width, height, [0, 0, 0]);
        for y in 0..height {
            let (ya, yb, fy) = axis(y, sy, self.height);
            for (x, &(xa, xb, fx)) in cols.iter().enumerate() {
                let (p00, p01, p10, p11) = (self.get(xa, ya), self.get(xb, ya), self.get(xa, yb), self.get(xb, yb));
                let mut c = [0u8; 3];
                for k in 0..3 {
                    let top = p00[k] as f64 * (1.0 - fx) + p01[k] as f64 * fx;
                    let bot = p10[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
                    c[k] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
                }
                out.set(x, y, c);
            }
        }
        Ok(out)
    }

    /// Network input: `[3×H'×W']` with values in `[-0.5, 0.5]`, where
    /// `H'`, `W'` are rounded up to multiples of `multiple` and the padding
    /// is zero (mid-grey).
    pub fn to_tensor(&self, multiple: usize) -> Tensor {
        let m = multiple.max(1);
        let (h, w) = (self.height.div_ceil(m) * m, self.width.div_ceil(m) * m);
        let mut data = vec![0.0 as Float; 3 * h * w];
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.get(x, y);
                for (c, &v) in p.iter().enumerate() {
                    data[(c * h + y) * w + x] = v as Float / 255.0 - 0.5;
                }
            }
        }
        Tensor::new(vec![3, h, w], data).expect("consistent shape")
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PPM header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(format!("not a binary PPM (magic {:?})", fields[0]));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PPM header field {s:?}"));
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(format!("unsupported PPM maxval {maxval}"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = w * h * 3;
        if bytes.len() < pos + need {
            return Err(format!("PPM raster truncated: need {need} bytes"));
        }
        Ok(Image { width: w, height: h, data: bytes[pos..pos + need].to_vec() })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_ppm(&bytes).map_err(|msg| Error::Format { path: path.to_path_buf(), msg })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let mut img = Image::new(3, 2, [10, 20, 30]);
        img.set(2, 1, [255, 0, 7]);
        let back = Image::from_ppm(&img.to_ppm()).unwrap();
        assert_eq!(back, img);
        assert!(Image::from_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(Image::from_ppm(b"P6\n4 4\n255\n\0\0").is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::new(7, 5, [9, 99, 199]);
        assert_eq!(img.resize(7, 5).unwrap(), img);
        let big = img.resize(20, 13).unwrap();
        assert!(big.raw().chunks(3).all(|p| p == [9, 99, 199]));
    }

    #[test]
    fn tensor_padding_is_mid_grey() {
        let img = Image::new(9, 3, [255, 255, 255]);
        let t = img.to_tensor(8);
        assert_eq!(t.shape(), &[3, 8, 16]);
        assert_eq!(t.data()[0], 0.5);
        assert_eq!(t.data()[9], 0.0);
    }

    #[test]
    fn crop_bounds() {
        let mut img = Image::new(4, 4, [0, 0, 0]);
        img.set(2, 1, [1, 2, 3]);
        let c = img.crop(2, 1, 4, 3).unwrap();
        assert_eq!((c.width(), c.height()), (2, 2));
        assert_eq!(c.get(0, 0), [1, 2, 3]);
        assert!(img.crop(0, 0, 5, 1).is_err());
    }
}
