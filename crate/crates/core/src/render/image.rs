use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

/// Row-major RGB image with channel values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let px = rgb.map(|v| v.clamp(0.0, 1.0));
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&px);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    /// Builds an image from interleaved RGB values, clamping to [0, 1].
    pub fn from_data(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(CoreError::ImageSize(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        for c in 0..3 {
            self.data[i + c] = if rgb[c].is_nan() { 0.0 } else { rgb[c].clamp(0.0, 1.0) };
        }
    }

    /// Mean over a rectangle of all three channels.
    pub fn region_mean(&self, x0: usize, y0: usize, w: usize, h: usize) -> f64 {
        let mut sum = 0.0;
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                sum += self.get(x, y).iter().sum::<f64>();
            }
        }
        sum / (3 * w * h) as f64
    }

    /// Bilinear sample at continuous pixel coordinates (pixel `i` has its
    /// centre at `i + 0.5`), clamped at the borders. Returns the colour and
    /// its derivatives with respect to `u` and `v`.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> ([f64; 3], [[f64; 3]; 2]) {
        let x = u - 0.5;
        let y = v - 0.5;
        let x0f = x.floor();
        let y0f = y.floor();
        let fx = x - x0f;
        let fy = y - y0f;
        let clampx = |i: f64| (i.max(0.0) as usize).min(self.width - 1);
        let clampy = |i: f64| (i.max(0.0) as usize).min(self.height - 1);
        let (xa, xb) = (clampx(x0f), clampx(x0f + 1.0));
        let (ya, yb) = (clampy(y0f), clampy(y0f + 1.0));
        let p00 = self.get(xa, ya);
        let p10 = self.get(xb, ya);
        let p01 = self.get(xa, yb);
        let p11 = self.get(xb, yb);
        let mut c = [0.0; 3];
        let mut g = [[0.0; 3]; 2];
        for k in 0..3 {
            c[k] = (1.0 - fx) * (1.0 - fy) * p00[k]
                + fx * (1.0 - fy) * p10[k]
                + (1.0 - fx) * fy * p01[k]
                + fx * fy * p11[k];
            g[0][k] = (1.0 - fy) * (p10[k] - p00[k]) + fy * (p11[k] - p01[k]);
            g[1][k] = (1.0 - fx) * (p01[k] - p00[k]) + fx * (p11[k] - p10[k]);
        }
        (c, g)
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(CoreError::ImageSize(format!(
                "{}x{} is not divisible by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = vec![0.0; 3 * w * h];
        for y in 0..self.height {
            for x in 0..self.width {
                let src = 3 * (y * self.width + x);
                let dst = 3 * ((y / factor) * w + x / factor);
                for c in 0..3 {
                    data[dst + c] += self.data[src + c];
                }
            }
        }
        data.iter_mut().for_each(|v| *v *= norm);
        Image::from_data(w, h, data)
    }

    /// Area-average resize to a size that divides this one.
    pub fn resize_area(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || self.width % width != 0 || height == 0 || self.height / height != self.width / width || self.height % height != 0 {
            return Err(CoreError::ImageSize(format!(
                "cannot area-resize {}x{} to {width}x{height}",
                self.width, self.height
            )));
        }
        self.downsample(self.width / width)
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        self.same_size(other)?;
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.same_size(other)?;
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(s / self.data.len() as f64)
    }

    fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(CoreError::ImageSize(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn to_rgb8(&self) -> Rgb8Image {
        Rgb8Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v * 255.0).round() as u8).collect(),
        }
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        self.to_rgb8().write_ppm(path)
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        Ok(Rgb8Image::read_ppm(path)?.to_image())
    }
}

/// 8-bit RGB image, the storage format of recorded streams and datasets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    pub fn region_mean(&self, x0: usize, y0: usize, w: usize, h: usize) -> f64 {
        let mut sum = 0u64;
        for y in y0..(y0 + h).min(self.height) {
            let row = 3 * (y * self.width);
            for x in x0..(x0 + w).min(self.width) {
                sum += self.data[row + 3 * x..row + 3 * x + 3].iter().map(|&v| v as u64).sum::<u64>();
            }
        }
        sum as f64 / (255.0 * (3 * w * h) as f64)
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, rgb: [u8; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                let i = 3 * (y * self.width + x);
                self.data[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(CoreError::io(path))?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(&self.encode_ppm())
            .and_then(|_| w.flush())
            .map_err(CoreError::io(path))
    }

    pub fn read_ppm(path: &Path) -> Result<Rgb8Image> {
        let file = std::fs::File::open(path).map_err(CoreError::io(path))?;
        let bad = |message: &str| CoreError::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        let mut r = BufReader::new(file);
        let mut tokens = Vec::new();
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if r.read_line(&mut line).map_err(CoreError::io(path))? == 0 {
                return Err(bad("truncated PPM header"));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P6" || tokens.len() != 4 {
            return Err(bad("expected a binary P6 header on separate lines"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("invalid PPM header number"));
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 || width == 0 || height == 0 {
            return Err(bad("only 8-bit, non-empty PPM images are supported"));
        }
        let mut data = vec![0u8; 3 * width * height];
        r.read_exact(&mut data).map_err(|_| bad("truncated PPM pixel data"))?;
        Ok(Rgb8Image {
            width,
            height,
            data,
        })
    }
}
