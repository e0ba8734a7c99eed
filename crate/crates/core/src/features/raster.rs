use std::path::Path;

use image::DynamicImage;

use crate::catalog::BBox;
use crate::error::{Error, Result};

/// Single-channel float image, intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    /// Luminance with ITU-R BT.601 weights.
    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .pixels()
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        GrayImage {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn crop(&self, bbox: BBox) -> Result<GrayImage> {
        let (x0, y0, w, h) = (bbox.x as usize, bbox.y as usize, bbox.w as usize, bbox.h as usize);
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::BBoxOutside {
                bbox: (bbox.x, bbox.y, bbox.w, bbox.h),
                width: self.width as u32,
                height: self.height as u32,
            });
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(GrayImage { width: w, height: h, data })
    }

    /// Doubles the resolution; output pixel `(i, j)` samples the input at `(i/2, j/2)`.
    pub fn upsample2(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        GrayImage::from_fn(2 * w, 2 * h, |x, y| {
            let (x0, y0) = (x / 2, y / 2);
            let (x1, y1) = ((x0 + x % 2).min(w - 1), (y0 + y % 2).min(h - 1));
            0.25 * (self.at(x0, y0) + self.at(x1, y0) + self.at(x0, y1) + self.at(x1, y1))
        })
    }

    /// Keeps every second pixel starting at the origin.
    pub fn downsample2(&self) -> GrayImage {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        GrayImage::from_fn(w, h, |x, y| self.at(2 * x, 2 * y))
    }

    pub fn rotate90(&self) -> GrayImage {
        // (x, y) -> (h - 1 - y, x)
        GrayImage::from_fn(self.height, self.width, |x, y| self.at(y, self.height - 1 - x))
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([(self.at(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
        })
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = ((4.0 * sigma).ceil() as usize).max(1);
    let mut k: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index without repeating the edge pixel.
#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = GrayImage::new(w, h);
    let mut row = vec![0.0f32; w + 2 * r as usize];
    for y in 0..h {
        let src = &img.data[y * w..(y + 1) * w];
        for (i, v) in row.iter_mut().enumerate() {
            *v = src[reflect101(i as isize - r, w)];
        }
        let dst = &mut tmp.data[y * w..(y + 1) * w];
        for (x, out) in dst.iter_mut().enumerate() {
            *out = row[x..x + k.len()].iter().zip(&k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = GrayImage::new(w, h);
    let mut acc = vec![0.0f32; w];
    for y in 0..h {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (t, kv) in k.iter().enumerate() {
            let sy = reflect101(y as isize + t as isize - r, h);
            let src = &tmp.data[sy * w..(sy + 1) * w];
            for (a, s) in acc.iter_mut().zip(src) {
                *a += kv * s;
            }
        }
        out.data[y * w..(y + 1) * w].copy_from_slice(&acc);
    }
    out
}
