//! Difference-of-Gaussians keypoint detector with gradient-histogram descriptors.

use std::f32::consts::PI;

use serde::{Deserialize, Serialize};

use super::raster::{gaussian_blur, GrayImage};
use super::{Descriptor, Keypoint, DESCRIPTOR_LEN};

const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_SCALE_FACTOR: f32 = 3.0;
const DESCR_MAG_CLAMP: f32 = 0.2;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const ORI_RADIUS_FACTOR: f32 = 3.0 * ORI_SIGMA_FACTOR;
const ORI_PEAK_RATIO: f32 = 0.8;
const MAX_INTERP_STEPS: usize = 5;
const IMAGE_BORDER: usize = 5;
/// Blur already present in the input image.
const INPUT_SIGMA: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftParams {
    pub scales_per_octave: usize,
    pub sigma: f32,
    pub contrast_threshold: f32,
    pub edge_threshold: f32,
    /// Double the input before building the pyramid.
    pub upsample: bool,
    /// Keep only the strongest responses.
    pub max_keypoints: Option<usize>,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            scales_per_octave: 3,
            sigma: 1.6,
            contrast_threshold: 0.04,
            edge_threshold: 10.0,
            upsample: true,
            max_keypoints: None,
        }
    }
}

struct Octave {
    gauss: Vec<GrayImage>,
    dog: Vec<GrayImage>,
}

struct Candidate {
    octave: usize,
    layer: usize,
    /// Position in octave pixels.
    x: f32,
    y: f32,
    /// Scale relative to the octave.
    sigma_oct: f32,
    response: f32,
}

fn build_pyramid(base: GrayImage, p: &SiftParams) -> Vec<Octave> {
    let s = p.scales_per_octave;
    let min_dim = base.width.min(base.height) as f32;
    let n_octaves = ((min_dim.log2().round() as i32) - 2).max(1) as usize;

    // incremental blur between successive layers of one octave
    let k = 2f32.powf(1.0 / s as f32);
    let mut step = vec![p.sigma];
    for i in 1..s + 3 {
        let prev = p.sigma * k.powi(i as i32 - 1);
        let total = prev * k;
        step.push((total * total - prev * prev).sqrt());
    }

    let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
    let mut first = base;
    for o in 0..n_octaves {
        if o > 0 {
            first = octaves[o - 1].gauss[s].downsample2();
            if first.width < 2 * IMAGE_BORDER + 3 || first.height < 2 * IMAGE_BORDER + 3 {
                break;
            }
        }
        let mut gauss = Vec::with_capacity(s + 3);
        gauss.push(first.clone());
        for st in &step[1..] {
            let next = gaussian_blur(gauss.last().unwrap(), *st);
            gauss.push(next);
        }
        let dog = gauss
            .windows(2)
            .map(|w| GrayImage {
                width: w[0].width,
                height: w[0].height,
                data: w[1].data.iter().zip(&w[0].data).map(|(a, b)| a - b).collect(),
            })
            .collect();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[GrayImage], layer: usize, x: usize, y: usize) -> bool {
    let v = dog[layer].at(x, y);
    let mut is_max = v > 0.0;
    let mut is_min = v < 0.0;
    for img in &dog[layer - 1..=layer + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = img.at(xx, yy);
                is_max &= v >= n;
                is_min &= v <= n;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    is_max || is_min
}

fn solve3(h: [[f32; 3]; 3], g: [f32; 3]) -> Option<[f32; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let col = |c: usize| -> f32 {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = g[r];
        }
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    Some([col(0) / det, col(1) / det, col(2) / det])
}

/// Quadratic refinement of a scale-space extremum plus contrast and edge tests.
fn refine(oct: &Octave, octave: usize, layer: usize, x: usize, y: usize, p: &SiftParams) -> Option<Candidate> {
    let s = p.scales_per_octave;
    let (w, h) = (oct.dog[0].width, oct.dog[0].height);
    let (mut layer, mut x, mut y) = (layer, x, y);
    let mut offset = [0.0f32; 3];
    let mut converged = false;
    let mut grad = [0.0f32; 3];
    for _ in 0..MAX_INTERP_STEPS {
        let (prev, cur, next) = (&oct.dog[layer - 1], &oct.dog[layer], &oct.dog[layer + 1]);
        let v2 = 2.0 * cur.at(x, y);
        grad = [
            0.5 * (cur.at(x + 1, y) - cur.at(x - 1, y)),
            0.5 * (cur.at(x, y + 1) - cur.at(x, y - 1)),
            0.5 * (next.at(x, y) - prev.at(x, y)),
        ];
        let dxx = cur.at(x + 1, y) + cur.at(x - 1, y) - v2;
        let dyy = cur.at(x, y + 1) + cur.at(x, y - 1) - v2;
        let dss = next.at(x, y) + prev.at(x, y) - v2;
        let dxy = 0.25 * (cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1) + cur.at(x - 1, y - 1));
        let dxs = 0.25 * (next.at(x + 1, y) - next.at(x - 1, y) - prev.at(x + 1, y) + prev.at(x - 1, y));
        let dys = 0.25 * (next.at(x, y + 1) - next.at(x, y - 1) - prev.at(x, y + 1) + prev.at(x, y - 1));
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let sol = solve3(hess, grad)?;
        offset = [-sol[0], -sol[1], -sol[2]];
        if offset.iter().all(|o| o.abs() < 0.5) {
            converged = true;
            break;
        }
        if offset.iter().any(|o| o.abs() > 1e6) {
            return None;
        }
        let nx = x as f32 + offset[0].round();
        let ny = y as f32 + offset[1].round();
        let nl = layer as f32 + offset[2].round();
        if nl < 1.0
            || nl > s as f32
            || nx < IMAGE_BORDER as f32
            || nx >= (w - IMAGE_BORDER) as f32
            || ny < IMAGE_BORDER as f32
            || ny >= (h - IMAGE_BORDER) as f32
        {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    if !converged {
        return None;
    }

    let cur = &oct.dog[layer];
    let contrast = cur.at(x, y) + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
    if contrast.abs() * (s as f32) < p.contrast_threshold {
        return None;
    }

    let v2 = 2.0 * cur.at(x, y);
    let dxx = cur.at(x + 1, y) + cur.at(x - 1, y) - v2;
    let dyy = cur.at(x, y + 1) + cur.at(x, y - 1) - v2;
    let dxy = 0.25 * (cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1) + cur.at(x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = p.edge_threshold;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }

    Some(Candidate {
        octave,
        layer,
        x: x as f32 + offset[0],
        y: y as f32 + offset[1],
        sigma_oct: p.sigma * 2f32.powf((layer as f32 + offset[2]) / s as f32),
        response: contrast.abs(),
    })
}

#[inline]
fn gradient(img: &GrayImage, x: usize, y: usize) -> (f32, f32) {
    (img.at(x + 1, y) - img.at(x - 1, y), img.at(x, y + 1) - img.at(x, y - 1))
}

/// Dominant gradient orientations around a candidate (radians, `[0, 2π)`).
fn orientations(img: &GrayImage, c: &Candidate) -> Vec<f32> {
    let radius = (ORI_RADIUS_FACTOR * c.sigma_oct).round() as isize;
    let weight_scale = -1.0 / (2.0 * (ORI_SIGMA_FACTOR * c.sigma_oct).powi(2));
    let (cx, cy) = (c.x.round() as isize, c.y.round() as isize);
    let mut hist = [0.0f32; ORI_BINS];
    for dy in -radius..=radius {
        let y = cy + dy;
        if y <= 0 || y >= img.height as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x <= 0 || x >= img.width as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, x as usize, y as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            let ang = gy.atan2(gx).rem_euclid(2.0 * PI);
            let w = ((dx * dx + dy * dy) as f32 * weight_scale).exp();
            let bin = ((ang * ORI_BINS as f32 / (2.0 * PI)).round() as usize) % ORI_BINS;
            hist[bin] += w * mag;
        }
    }
    // circular [1 4 6 4 1] / 16 smoothing
    let n = ORI_BINS;
    let smooth: Vec<f32> = (0..n)
        .map(|i| {
            (hist[(i + n - 2) % n] + hist[(i + 2) % n]) / 16.0
                + (hist[(i + n - 1) % n] + hist[(i + 1) % n]) * 4.0 / 16.0
                + hist[i] * 6.0 / 16.0
        })
        .collect();
    let max = smooth.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let (l, r) = (smooth[(i + n - 1) % n], smooth[(i + 1) % n]);
        let v = smooth[i];
        if v > l && v > r && v >= ORI_PEAK_RATIO * max {
            let bin = i as f32 + 0.5 * (l - r) / (l - 2.0 * v + r);
            out.push((bin * 2.0 * PI / n as f32).rem_euclid(2.0 * PI));
        }
    }
    out
}

fn describe(img: &GrayImage, c: &Candidate, angle: f32) -> Descriptor {
    let d = DESCR_WIDTH;
    let n = DESCR_BINS;
    let hist_width = DESCR_SCALE_FACTOR * c.sigma_oct;
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round() as isize;
    let radius = radius.min(((img.width * img.width + img.height * img.height) as f32).sqrt() as isize);
    let (cos_t, sin_t) = (angle.cos() / hist_width, angle.sin() / hist_width);
    let weight_scale = -1.0 / (0.5 * (d * d) as f32);
    let bins_per_rad = n as f32 / (2.0 * PI);
    let (cx, cy) = (c.x.round() as isize, c.y.round() as isize);

    let stride = d + 2;
    let mut hist = vec![0.0f32; stride * stride * (n + 2)];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            // sample offset expressed in the keypoint frame, in histogram cells
            let u = dx as f32 * cos_t + dy as f32 * sin_t;
            let v = -(dx as f32) * sin_t + dy as f32 * cos_t;
            let rbin = v + d as f32 / 2.0 - 0.5;
            let cbin = u + d as f32 / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d as f32 || cbin <= -1.0 || cbin >= d as f32 {
                continue;
            }
            let (x, y) = (cx + dx, cy + dy);
            if x <= 0 || y <= 0 || x >= img.width as isize - 1 || y >= img.height as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, x as usize, y as usize);
            let mag = (gx * gx + gy * gy).sqrt() * ((u * u + v * v) * weight_scale).exp();
            let obin = (gy.atan2(gx) - angle).rem_euclid(2.0 * PI) * bins_per_rad;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 as isize + 1) as usize, (c0 as isize + 1) as usize);
            let o0 = (o0 as usize) % n;
            for (ri, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (ci, wc) in [(0, 1.0 - fc), (1, fc)] {
                    for (oi, wo) in [(0, 1.0 - fo), (1, fo)] {
                        let idx = ((r0 + ri) * stride + c0 + ci) * (n + 2) + o0 + oi;
                        hist[idx] += mag * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut out = [0.0f32; DESCRIPTOR_LEN];
    for r in 0..d {
        for cc in 0..d {
            let base = ((r + 1) * stride + cc + 1) * (n + 2);
            // wrap the extra orientation bins
            hist[base] += hist[base + n];
            hist[base + 1] += hist[base + n + 1];
            for o in 0..n {
                out[(r * d + cc) * n + o] = hist[base + o];
            }
        }
    }
    normalize_descriptor(&mut out);
    Descriptor(out)
}

fn normalize_descriptor(v: &mut [f32; DESCRIPTOR_LEN]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm <= 0.0 {
        // flat patch: fall back to a uniform unit vector
        v.iter_mut().for_each(|x| *x = 1.0 / (DESCRIPTOR_LEN as f32).sqrt());
        return;
    }
    let clamp = DESCR_MAG_CLAMP * norm;
    v.iter_mut().for_each(|x| *x = x.min(clamp));
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt() as f32;
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Detects keypoints and computes descriptors. Coordinates refer to `img` pixels.
pub(crate) fn detect_and_describe(img: &GrayImage, p: &SiftParams) -> Vec<(Keypoint, Descriptor)> {
    let (base, coord_scale) = if p.upsample {
        let up = img.upsample2();
        let s = (p.sigma * p.sigma - 4.0 * INPUT_SIGMA * INPUT_SIGMA).max(0.01).sqrt();
        (gaussian_blur(&up, s), 0.5f32)
    } else {
        let s = (p.sigma * p.sigma - INPUT_SIGMA * INPUT_SIGMA).max(0.01).sqrt();
        (gaussian_blur(img, s), 1.0f32)
    };
    let octaves = build_pyramid(base, p);
    let threshold = 0.5 * p.contrast_threshold / p.scales_per_octave as f32;

    let mut candidates = Vec::new();
    for (o, oct) in octaves.iter().enumerate() {
        let (w, h) = (oct.dog[0].width, oct.dog[0].height);
        for layer in 1..=p.scales_per_octave {
            for y in IMAGE_BORDER..h - IMAGE_BORDER {
                for x in IMAGE_BORDER..w - IMAGE_BORDER {
                    if oct.dog[layer].at(x, y).abs() <= threshold || !is_extremum(&oct.dog, layer, x, y) {
                        continue;
                    }
                    if let Some(c) = refine(oct, o, layer, x, y, p) {
                        candidates.push(c);
                    }
                }
            }
        }
    }

    let mut oriented: Vec<(Keypoint, f32, usize)> = Vec::new();
    for (ci, c) in candidates.iter().enumerate() {
        let img = &octaves[c.octave].gauss[c.layer];
        let to_input = coord_scale * (1u32 << c.octave) as f32;
        for angle in orientations(img, c) {
            let kp = Keypoint {
                x: c.x * to_input,
                y: c.y * to_input,
                scale: c.sigma_oct * to_input,
                angle,
            };
            oriented.push((kp, c.response, ci));
        }
    }
    oriented.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.0.x.total_cmp(&b.0.x))
            .then(a.0.scale.total_cmp(&b.0.scale))
            .then(a.0.angle.total_cmp(&b.0.angle))
    });
    if let Some(max) = p.max_keypoints {
        oriented.truncate(max);
    }
    oriented
        .into_iter()
        .map(|(kp, _, ci)| {
            let c = &candidates[ci];
            let desc = describe(&octaves[c.octave].gauss[c.layer], c, kp.angle);
            (kp, desc)
        })
        .collect()
}
