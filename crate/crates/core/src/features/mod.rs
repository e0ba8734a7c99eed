//! Keypoints, descriptors and cross-image correspondences.

mod cache;
mod raster;
mod sift;

use serde::{Deserialize, Serialize};

pub use cache::{params_hash, read_feature_set, write_feature_set, CacheKey, FeatureCache, CACHE_MAGIC, CACHE_VERSION};
pub use raster::{gaussian_blur, GrayImage};
pub use sift::SiftParams;

use crate::catalog::BBox;
use crate::error::{Error, Result};

pub const DESCRIPTOR_LEN: usize = 128;

/// Smallest crop side the detector accepts.
pub const MIN_IMAGE_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Gaussian scale in pixels.
    pub scale: f32,
    /// Dominant orientation in radians.
    pub angle: f32,
}

/// L2-normalized, nonnegative 4x4x8 gradient histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    #[inline]
    pub fn distance_squared(&self, other: &Descriptor) -> f32 {
        let mut acc = [0.0f32; 8];
        for (a, b) in self.0.chunks_exact(8).zip(other.0.chunks_exact(8)) {
            for k in 0..8 {
                let d = a[k] - b[k];
                acc[k] += d * d;
            }
        }
        acc.iter().sum()
    }
}

/// Keypoints and descriptors of one (possibly cropped) image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    /// Size of the analysed raster, after cropping.
    pub width: u32,
    pub height: u32,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn extent(&self) -> f64 {
        self.width.max(self.height) as f64
    }

    /// Mean descriptor, a cheap global signature for candidate-pair blocking.
    pub fn mean_descriptor(&self) -> Vec<f32> {
        let mut mean = vec![0.0f32; DESCRIPTOR_LEN];
        for d in &self.descriptors {
            mean.iter_mut().zip(&d.0).for_each(|(m, v)| *m += v);
        }
        if !self.descriptors.is_empty() {
            let n = self.descriptors.len() as f32;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        mean
    }
}

pub fn extract_features(image: &GrayImage, bbox: Option<BBox>, params: &SiftParams) -> Result<FeatureSet> {
    let cropped;
    let img = match bbox {
        Some(b) => {
            cropped = image.crop(b)?;
            &cropped
        }
        None => image,
    };
    if img.width < MIN_IMAGE_SIDE || img.height < MIN_IMAGE_SIDE {
        return Err(Error::ImageTooSmall {
            width: img.width as u32,
            height: img.height as u32,
            min: MIN_IMAGE_SIDE as u32,
        });
    }
    let (keypoints, descriptors) = sift::detect_and_describe(img, params).into_iter().unzip();
    Ok(FeatureSet {
        width: img.width as u32,
        height: img.height as u32,
        keypoints,
        descriptors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// Number of correspondences kept for the projective fit.
    pub top_k: usize,
    /// Restrict candidates to mutual nearest neighbours before the greedy pass.
    pub cross_check: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            top_k: 10,
            cross_check: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Keypoint index in the first feature set.
    pub a: usize,
    pub b: usize,
    /// Negative Euclidean descriptor distance.
    pub similarity: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    /// Sorted by descending similarity, one-to-one.
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Best correspondence similarity, the image-level score `s_ij`.
    pub fn image_similarity(&self) -> Option<f32> {
        self.pairs.first().map(|c| c.similarity)
    }

    /// Point pairs in pixel coordinates of the respective images.
    pub fn point_pairs(&self, fs_a: &FeatureSet, fs_b: &FeatureSet) -> Vec<([f64; 2], [f64; 2])> {
        self.pairs
            .iter()
            .map(|c| {
                let (ka, kb) = (&fs_a.keypoints[c.a], &fs_b.keypoints[c.b]);
                ([ka.x as f64, ka.y as f64], [kb.x as f64, kb.y as f64])
            })
            .collect()
    }
}

/// Greedy one-to-one selection of the `top_k` closest descriptor pairs.
///
/// Ties are broken by keypoint index, so matching a set against itself pairs
/// every keypoint with itself.
pub fn match_descriptors(fs_a: &FeatureSet, fs_b: &FeatureSet, params: &MatchParams) -> CorrespondenceSet {
    let (na, nb) = (fs_a.descriptors.len(), fs_b.descriptors.len());
    if na == 0 || nb == 0 || params.top_k == 0 {
        return CorrespondenceSet::default();
    }
    let mut dist = vec![0.0f32; na * nb];
    for (i, da) in fs_a.descriptors.iter().enumerate() {
        let row = &mut dist[i * nb..(i + 1) * nb];
        for (slot, db) in row.iter_mut().zip(&fs_b.descriptors) {
            *slot = da.distance_squared(db);
        }
    }
    if params.cross_check {
        let row_best: Vec<usize> = (0..na).map(|i| argmin((0..nb).map(|j| dist[i * nb + j]))).collect();
        let col_best: Vec<usize> = (0..nb).map(|j| argmin((0..na).map(|i| dist[i * nb + j]))).collect();
        for i in 0..na {
            for j in 0..nb {
                if row_best[i] != j || col_best[j] != i {
                    dist[i * nb + j] = f32::INFINITY;
                }
            }
        }
    }

    let mut row_used = vec![false; na];
    let mut col_used = vec![false; nb];
    let mut pairs = Vec::with_capacity(params.top_k.min(na).min(nb));
    while pairs.len() < params.top_k {
        let mut best: Option<(f32, usize, usize)> = None;
        for i in (0..na).filter(|&i| !row_used[i]) {
            let row = &dist[i * nb..(i + 1) * nb];
            for (j, &d) in row.iter().enumerate() {
                if col_used[j] || !d.is_finite() {
                    continue;
                }
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };
        row_used[i] = true;
        col_used[j] = true;
        pairs.push(Correspondence {
            a: i,
            b: j,
            similarity: -d.sqrt(),
        });
    }
    CorrespondenceSet { pairs }
}

fn argmin(values: impl Iterator<Item = f32>) -> usize {
    let mut best = (f32::INFINITY, 0);
    for (k, v) in values.enumerate() {
        if v < best.0 {
            best = (v, k);
        }
    }
    best.1
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Gaussian blobs on a dark background, centres on a regular grid.
    pub(crate) fn blob_grid(size: usize, n: usize, sigma: f32) -> (GrayImage, Vec<(f32, f32)>) {
        let step = size as f32 / n as f32;
        let centres: Vec<(f32, f32)> = (0..n * n)
            .map(|k| (step * ((k % n) as f32 + 0.5), step * ((k / n) as f32 + 0.5)))
            .collect();
        let img = GrayImage::from_fn(size, size, |x, y| {
            let v: f32 = centres
                .iter()
                .map(|(cx, cy)| {
                    let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                    (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .sum();
            0.1 + 0.8 * v.min(1.0)
        });
        (img, centres)
    }

    /// Deterministic textured image (sum of oriented ridges and blobs).
    pub(crate) fn texture(w: usize, h: usize, seed: u32) -> GrayImage {
        let mut state = seed.wrapping_mul(2_654_435_761).wrapping_add(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            state as f32 / u32::MAX as f32
        };
        let blobs: Vec<(f32, f32, f32, f32)> = (0..40)
            .map(|_| (next() * w as f32, next() * h as f32, 2.0 + 5.0 * next(), next() - 0.5))
            .collect();
        GrayImage::from_fn(w, h, |x, y| {
            let v: f32 = blobs
                .iter()
                .map(|(cx, cy, s, a)| {
                    let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
            (0.5 + v).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let img = GrayImage::from_fn(64, 64, |_, _| 0.5);
        let fs = extract_features(&img, None, &SiftParams::default()).unwrap();
        assert!(fs.is_empty());
    }

    #[test]
    fn too_small_crop_is_rejected() {
        let img = GrayImage::from_fn(64, 64, |_, _| 0.5);
        let bbox = BBox { x: 0, y: 0, w: 15, h: 40 };
        assert!(matches!(
            extract_features(&img, Some(bbox), &SiftParams::default()),
            Err(Error::ImageTooSmall { width: 15, .. })
        ));
        assert!(extract_features(&img, Some(BBox { x: 60, y: 0, w: 16, h: 16 }), &SiftParams::default()).is_err());
    }

    #[test]
    fn blob_centres_are_detected() {
        let (img, centres) = blob_grid(120, 3, 4.0);
        let fs = extract_features(&img, None, &SiftParams::default()).unwrap();
        assert!(fs.len() >= 9, "{} keypoints", fs.len());
        for (cx, cy) in centres {
            let best = fs
                .keypoints
                .iter()
                .map(|k| ((k.x - cx).powi(2) + (k.y - cy).powi(2)).sqrt())
                .fold(f32::INFINITY, f32::min);
            assert!(best < 2.0, "blob at ({cx}, {cy}) missed by {best}");
        }
    }

    #[test]
    fn descriptors_are_unit_and_nonnegative() {
        let fs = extract_features(&texture(96, 96, 3), None, &SiftParams::default()).unwrap();
        assert!(!fs.is_empty());
        for d in &fs.descriptors {
            let n: f64 = d.0.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "norm {n}");
            assert!(d.0.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = texture(80, 70, 9);
        let p = SiftParams::default();
        assert_eq!(extract_features(&img, None, &p).unwrap(), extract_features(&img, None, &p).unwrap());
    }

    #[test]
    fn keypoint_cap_keeps_strongest() {
        let img = texture(96, 96, 5);
        let all = extract_features(&img, None, &SiftParams::default()).unwrap();
        let capped = extract_features(
            &img,
            None,
            &SiftParams {
                max_keypoints: Some(5),
                ..SiftParams::default()
            },
        )
        .unwrap();
        assert_eq!(capped.len(), 5.min(all.len()));
        assert_eq!(capped.keypoints[..], all.keypoints[..capped.len()]);
    }

    #[test]
    fn self_match_pairs_each_keypoint_with_itself() {
        let fs = extract_features(&texture(96, 96, 1), None, &SiftParams::default()).unwrap();
        assert!(fs.len() >= 10);
        let m = match_descriptors(&fs, &fs, &MatchParams::default());
        assert_eq!(m.len(), 10);
        for c in &m.pairs {
            assert_eq!(c.a, c.b);
            assert_eq!(c.similarity, 0.0);
        }
    }

    #[test]
    fn match_count_is_bounded_by_smaller_set() {
        let mut fs = extract_features(&texture(96, 96, 2), None, &SiftParams::default()).unwrap();
        let other = extract_features(&texture(96, 96, 4), None, &SiftParams::default()).unwrap();
        fs.keypoints.truncate(4);
        fs.descriptors.truncate(4);
        let m = match_descriptors(&fs, &other, &MatchParams::default());
        assert_eq!(m.len(), 4);
        assert!(m.pairs.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        assert!(match_descriptors(&FeatureSet::default(), &other, &MatchParams::default()).is_empty());
    }

    #[test]
    fn matching_is_symmetric() {
        let a = extract_features(&texture(96, 96, 11), None, &SiftParams::default()).unwrap();
        let b = extract_features(&texture(96, 96, 12), None, &SiftParams::default()).unwrap();
        for cross_check in [false, true] {
            let p = MatchParams { top_k: 10, cross_check };
            let ab = match_descriptors(&a, &b, &p);
            let ba = match_descriptors(&b, &a, &p);
            let mut x: Vec<_> = ab.pairs.iter().map(|c| (c.a, c.b)).collect();
            let mut y: Vec<_> = ba.pairs.iter().map(|c| (c.b, c.a)).collect();
            x.sort();
            y.sort();
            assert_eq!(x, y);
        }
    }
}
