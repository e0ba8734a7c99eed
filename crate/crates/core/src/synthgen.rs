//! Deterministic synthetic encounter datasets.
//!
//! Every individual carries a seeded Voronoi tessellation whose cell geometry
//! never changes. What changes over time is the drift state (per-cell shade
//! walk and healing scratches) and, per encounter, the capture factors (tint,
//! blur, noise, projective warp, camera preset). Images of one encounter share
//! one factor draw and differ only in a small per-image jitter and the noise
//! realization.
//!
//! Seeds are derived hierarchically, master -> individual -> encounter ->
//! image, so rendering order and parallelism never change the output.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use image::RgbImage;
use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ImageRecord, Orientation};
use crate::error::{Error, Result};
use crate::features::{gaussian_blur, GrayImage};
use crate::geomverify::fit_projective;
use crate::par::{self, Execution};

pub const SYNTH_RNG: &str = "chacha8";
pub const META_FILE: &str = "synth-meta.json";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Spacing of the drift random-walk knots.
const KNOT_DAYS: i64 = 30;
/// Spacing of the independent knots of the short-lived shade fluctuation.
const CONDITION_DAYS: i64 = 4;
const SHADE_MIN: f64 = 0.05;
const SHADE_MAX: f64 = 0.95;

fn drift_epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorMagnitudes {
    /// Std-dev of the per-channel multiplicative tint.
    pub tint: f64,
    /// Upper bound of the encounter blur sigma, pixels.
    pub blur: f64,
    /// Upper bound of the additive noise sigma, 8-bit intensity units.
    pub noise: f64,
    /// Std-dev of projective corner displacement, as a fraction of the image side.
    pub warp: f64,
    /// Per-image shift (fraction of side) and rotation (radians) std-dev.
    pub jitter: f64,
    /// Strength of the date-dependent camera presets, 0 disables them.
    pub preset: f64,
}

impl Default for FactorMagnitudes {
    fn default() -> Self {
        FactorMagnitudes {
            tint: 0.06,
            blur: 1.0,
            noise: 3.0,
            warp: 0.03,
            jitter: 0.01,
            preset: 1.0,
        }
    }
}

impl FactorMagnitudes {
    pub fn zero() -> Self {
        FactorMagnitudes {
            tint: 0.0,
            blur: 0.0,
            noise: 0.0,
            warp: 0.0,
            jitter: 0.0,
            preset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_individuals: usize,
    pub encounters_per_individual: usize,
    pub images_per_encounter: usize,
    /// First and last admissible encounter dates, inclusive.
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub image_size: u32,
    pub min_cells: usize,
    pub max_cells: usize,
    /// Multiplier on the shade walk and the scratch arrival rate.
    pub drift_rate: f64,
    /// Shade random-walk std-dev per square-root year at `drift_rate = 1`.
    pub shade_drift: f64,
    /// Scratch arrivals per year at `drift_rate = 1`.
    pub scratch_rate: f64,
    /// Mean scratch healing time in days.
    pub scratch_heal_days: f64,
    /// Std-dev of the short-lived per-cell shade fluctuation at `drift_rate = 1`.
    pub condition_drift: f64,
    /// Probability that an encounter is a re-sighting 1-30 days after an earlier one.
    pub followup_fraction: f64,
    pub factors: FactorMagnitudes,
    /// Poses cycled over the images of an encounter.
    pub poses: Vec<Orientation>,
    pub master_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_individuals: 50,
            encounters_per_individual: 10,
            images_per_encounter: 3,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2019, 12, 31).unwrap(),
            image_size: 256,
            min_cells: 20,
            max_cells: 40,
            drift_rate: 1.0,
            shade_drift: 0.12,
            scratch_rate: 4.0,
            scratch_heal_days: 365.0,
            condition_drift: 0.08,
            followup_fraction: 0.4,
            factors: FactorMagnitudes::default(),
            poses: vec![Orientation::Left],
            master_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_individuals == 0 || self.encounters_per_individual == 0 || self.images_per_encounter == 0 {
            return bad("all counts must be at least 1");
        }
        if self.end_date < self.start_date {
            return bad("empty date range");
        }
        let days = (self.end_date - self.start_date).num_days() + 1;
        if (self.encounters_per_individual as i64) > days {
            return bad("more encounters per individual than days in the date range");
        }
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        if self.min_cells == 0 || self.min_cells > self.max_cells {
            return bad("cell range must satisfy 1 <= min_cells <= max_cells");
        }
        if self.poses.is_empty() {
            return bad("at least one pose");
        }
        if self.poses.iter().any(|p| pose_offset(*p).is_none()) {
            return bad("poses must be among left, top-left, top, top-right, right");
        }
        let f = &self.factors;
        let mags = [
            self.drift_rate,
            self.shade_drift,
            self.scratch_rate,
            self.condition_drift,
            f.tint,
            f.blur,
            f.noise,
            f.warp,
            f.jitter,
            f.preset,
        ];
        if !(0.0..=1.0).contains(&self.followup_fraction) {
            return bad("followup_fraction must lie in [0, 1]");
        }
        if mags.iter().any(|m| !m.is_finite() || *m < 0.0) || self.scratch_heal_days <= 0.0 {
            return bad("magnitudes must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Horizontal viewport offset of a pose in the two-unit-wide pattern domain.
/// Left and right views do not overlap; the three intermediate poses bridge them.
pub fn pose_offset(pose: Orientation) -> Option<f64> {
    match pose {
        Orientation::Left => Some(0.0),
        Orientation::TopLeft => Some(0.25),
        Orientation::Top => Some(0.5),
        Orientation::TopRight => Some(0.75),
        Orientation::Right => Some(1.0),
        _ => None,
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(tag, index)` under `parent`.
pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(parent ^ splitmix(tag)) ^ index)
}

const TAG_INDIVIDUAL: u64 = 1;
const TAG_ENCOUNTER: u64 = 2;
const TAG_IMAGE: u64 = 3;
const TAG_DATES: u64 = 4;
const TAG_SHADE_WALK: u64 = 5;
const TAG_SCRATCH: u64 = 6;
const TAG_CONDITION: u64 = 7;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Domain bounds the sites cover. Slightly larger than `[0,2] x [0,1]` so
/// warped viewports never see the border of the tessellation.
const DOMAIN: [f64; 4] = [-0.15, -0.15, 2.15, 1.15];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualPattern {
    pub individual_id: String,
    pub pattern_seed: u64,
    /// Cells per unit viewport area.
    pub n_cells: usize,
    pub sites: Vec<[f64; 2]>,
    pub base_shade: Vec<f64>,
    pub color: [f64; 3],
}

impl IndividualPattern {
    pub fn generate(individual_id: &str, pattern_seed: u64, min_cells: usize, max_cells: usize) -> Self {
        let mut r = rng(pattern_seed);
        let n_cells = r.random_range(min_cells..=max_cells);
        let area = (DOMAIN[2] - DOMAIN[0]) * (DOMAIN[3] - DOMAIN[1]);
        let n_sites = (n_cells as f64 * area).round() as usize;
        let sites = (0..n_sites)
            .map(|_| [r.random_range(DOMAIN[0]..DOMAIN[2]), r.random_range(DOMAIN[1]..DOMAIN[3])])
            .collect();
        let base_shade = (0..n_sites).map(|_| r.random_range(0.2..0.9)).collect();
        let color = [
            0.75 + 0.1 * r.random::<f64>(),
            0.55 + 0.1 * r.random::<f64>(),
            0.3 + 0.1 * r.random::<f64>(),
        ];
        IndividualPattern {
            individual_id: individual_id.to_string(),
            pattern_seed,
            n_cells,
            sites,
            base_shade,
            color,
        }
    }

    fn typical_radius(&self) -> f64 {
        (1.0 / (std::f64::consts::PI * self.n_cells as f64)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scratch {
    pub from: [f64; 2],
    pub to: [f64; 2],
    /// Half-width in domain units.
    pub width: f64,
    /// Remaining intensity in `(0, 1]`; decays linearly while healing.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftState {
    pub shade: Vec<f64>,
    pub scratches: Vec<Scratch>,
}

fn fold_into(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let t = (x - lo).rem_euclid(2.0 * span);
    lo + if t > span { 2.0 * span - t } else { t }
}

/// Short-lived per-cell shade fluctuation: independent values on a
/// `CONDITION_DAYS` grid, blended with a smoothstep.
fn condition_offsets(pattern: &IndividualPattern, day: i64, config: &SynthConfig) -> Vec<f64> {
    let sigma = config.drift_rate * config.condition_drift;
    let n = pattern.base_shade.len();
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let k = day / CONDITION_DAYS;
    let t = (day % CONDITION_DAYS) as f64 / CONDITION_DAYS as f64;
    let t = t * t * (3.0 - 2.0 * t);
    let knot = |k: i64| {
        let mut r = rng(derive_seed(pattern.pattern_seed, TAG_CONDITION, k as u64));
        (0..n).map(|_| sigma * normal(&mut r)).collect::<Vec<_>>()
    };
    let (a, b) = (knot(k), knot(k + 1));
    a.iter().zip(&b).map(|(a, b)| a + t * (b - a)).collect()
}

/// Appearance drift of `pattern` on `date`; a pure function of the two.
pub fn drift_state(pattern: &IndividualPattern, date: NaiveDate, config: &SynthConfig) -> DriftState {
    let day = (date - drift_epoch()).num_days().abs();
    let sigma_knot = config.drift_rate * config.shade_drift * (KNOT_DAYS as f64 / 365.25).sqrt();
    let k = day / KNOT_DAYS;
    let frac = (day % KNOT_DAYS) as f64 / KNOT_DAYS as f64;

    let shade = pattern
        .base_shade
        .iter()
        .enumerate()
        .map(|(c, &base)| {
            if sigma_knot == 0.0 {
                return base;
            }
            let mut r = rng(derive_seed(pattern.pattern_seed, TAG_SHADE_WALK, c as u64));
            let mut w = 0.0;
            for _ in 0..k {
                w += sigma_knot * normal(&mut r);
            }
            let at_k = fold_into(base + w, SHADE_MIN, SHADE_MAX);
            let at_next = fold_into(base + w + sigma_knot * normal(&mut r), SHADE_MIN, SHADE_MAX);
            at_k + frac * (at_next - at_k)
        })
        .zip(condition_offsets(pattern, day, config))
        .map(|(v, c)| (v + c).clamp(0.0, 1.0))
        .collect();

    let mut scratches = Vec::new();
    let rate = config.drift_rate * config.scratch_rate / 365.25;
    if rate > 0.0 {
        let mut r = rng(derive_seed(pattern.pattern_seed, TAG_SCRATCH, 0));
        let gap = Exp::new(rate).unwrap();
        let heal = Exp::new(1.0 / config.scratch_heal_days).unwrap();
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut r);
            if t > day as f64 {
                break;
            }
            let dur: f64 = heal.sample(&mut r);
            let cx = r.random_range(0.0..2.0);
            let cy = r.random_range(0.0..1.0);
            let len = r.random_range(0.08..0.25);
            let ang = r.random_range(0.0..std::f64::consts::PI);
            let width = r.random_range(0.004..0.008);
            let age = day as f64 - t;
            if age < dur {
                let (dx, dy) = (0.5 * len * ang.cos(), 0.5 * len * ang.sin());
                scratches.push(Scratch {
                    from: [cx - dx, cy - dy],
                    to: [cx + dx, cy + dy],
                    width,
                    strength: 1.0 - age / dur,
                });
            }
        }
    }
    DriftState { shade, scratches }
}

/// Camera eras, chosen by which third of the date range an encounter falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapturePreset {
    LowResDull,
    HighResDull,
    HighResFlash,
}

impl CapturePreset {
    pub fn for_date(date: NaiveDate, start: NaiveDate, end: NaiveDate) -> Self {
        let span = (end - start).num_days().max(1) as f64;
        let t = (date - start).num_days() as f64 / span;
        if t < 1.0 / 3.0 {
            CapturePreset::LowResDull
        } else if t < 2.0 / 3.0 {
            CapturePreset::HighResDull
        } else {
            CapturePreset::HighResFlash
        }
    }

    /// (contrast, extra blur sigma, flash highlight) at full strength.
    fn parameters(self) -> (f64, f64, f64) {
        match self {
            CapturePreset::LowResDull => (0.75, 1.0, 0.0),
            CapturePreset::HighResDull => (0.75, 0.0, 0.0),
            CapturePreset::HighResFlash => (1.0, 0.0, 0.15),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterFactors {
    pub date: NaiveDate,
    pub tint: [f64; 3],
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    /// Projective corner displacements in pixels, clockwise from top-left.
    pub warp: [[f64; 2]; 4],
    pub preset: CapturePreset,
    pub preset_strength: f64,
    #[serde(skip)]
    pub drift: Option<DriftState>,
}

impl EncounterFactors {
    /// Factors that leave the raw tessellation untouched.
    pub fn identity(date: NaiveDate) -> Self {
        EncounterFactors {
            date,
            tint: [1.0; 3],
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            warp: [[0.0; 2]; 4],
            preset: CapturePreset::HighResFlash,
            preset_strength: 0.0,
            drift: None,
        }
    }

    pub fn draw(seed: u64, date: NaiveDate, config: &SynthConfig) -> Self {
        let mut r = rng(seed);
        let f = &config.factors;
        let side = config.image_size as f64;
        let mut tint = [0.0; 3];
        for t in &mut tint {
            *t = (1.0 + f.tint * normal(&mut r)).clamp(0.5, 1.5);
        }
        let blur_sigma = f.blur * r.random_range(0.3..1.0);
        let noise_sigma = f.noise * r.random_range(0.5..1.0);
        let mut warp = [[0.0; 2]; 4];
        for c in &mut warp {
            c[0] = f.warp * side * normal(&mut r);
            c[1] = f.warp * side * normal(&mut r);
        }
        EncounterFactors {
            date,
            tint,
            blur_sigma,
            noise_sigma,
            warp,
            preset: CapturePreset::for_date(date, config.start_date, config.end_date),
            preset_strength: f.preset,
            drift: None,
        }
    }
}

/// Per-image variation inside an encounter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageFactors {
    pub pose: Orientation,
    /// Shift in pixels.
    pub shift: [f64; 2],
    /// Rotation in radians about the image centre.
    pub rotation: f64,
    pub noise_seed: u64,
}

impl ImageFactors {
    pub fn identity(pose: Orientation) -> Self {
        ImageFactors {
            pose,
            shift: [0.0; 2],
            rotation: 0.0,
            noise_seed: 0,
        }
    }

    pub fn draw(seed: u64, pose: Orientation, config: &SynthConfig) -> Self {
        let mut r = rng(seed);
        let j = config.factors.jitter;
        let side = config.image_size as f64;
        ImageFactors {
            pose,
            shift: [j * side * normal(&mut r), j * side * normal(&mut r)],
            rotation: j * normal(&mut r),
            noise_seed: r.random(),
        }
    }
}

/// Observed-from-canonical pixel map: encounter warp followed by image jitter.
pub fn capture_transform(enc: &EncounterFactors, img: &ImageFactors, side: f64) -> Matrix3<f64> {
    let corners = [[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]];
    let warp = if enc.warp.iter().all(|c| c[0] == 0.0 && c[1] == 0.0) {
        Matrix3::identity()
    } else {
        let pairs: Vec<_> = corners
            .iter()
            .zip(&enc.warp)
            .map(|(c, d)| (*c, [c[0] + d[0], c[1] + d[1]]))
            .collect();
        fit_projective(&pairs)
            .map(|f| *f.transform.matrix())
            .unwrap_or_else(|_| Matrix3::identity())
    };
    let (s, c) = img.rotation.sin_cos();
    let h = side / 2.0;
    let about_centre = Matrix3::new(1.0, 0.0, h, 0.0, 1.0, h, 0.0, 0.0, 1.0)
        * Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
        * Matrix3::new(1.0, 0.0, -h, 0.0, 1.0, -h, 0.0, 0.0, 1.0);
    let shift = Matrix3::new(1.0, 0.0, img.shift[0], 0.0, 1.0, img.shift[1], 0.0, 0.0, 1.0);
    shift * about_centre * warp
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let (wx, wy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((wx - t * vx).powi(2) + (wy - t * vy).powi(2)).sqrt()
}

/// Drifted grey value of the pattern at a domain point.
fn pattern_value(pattern: &IndividualPattern, shade: &[f64], scratches: &[Scratch], q: [f64; 2], px: f64) -> f64 {
    let (mut d1, mut d2, mut c1, mut c2) = (f64::INFINITY, f64::INFINITY, 0, 0);
    for (i, s) in pattern.sites.iter().enumerate() {
        let d = (s[0] - q[0]).powi(2) + (s[1] - q[1]).powi(2);
        if d < d1 {
            (d2, c2) = (d1, c1);
            (d1, c1) = (d, i);
        } else if d < d2 {
            (d2, c2) = (d, i);
        }
    }
    let (s1, s2) = (pattern.sites[c1], pattern.sites[c2]);
    let sep = ((s1[0] - s2[0]).powi(2) + (s1[1] - s2[1]).powi(2)).sqrt();
    // distance to the bisector between the two nearest sites, in pixels
    let seam = (d2 - d1) / (2.0 * sep) / px;
    let r = d1.sqrt() / pattern.typical_radius();
    let mut v = shade[c1] * (1.0 - 0.25 * r.min(1.0).powi(2));
    v *= 1.0 - 0.6 * (-(seam / 1.2).powi(2)).exp();
    for s in scratches {
        let d = segment_distance(q, s.from, s.to) / s.width;
        if d < 4.0 {
            v += 0.35 * s.strength * (-d * d).exp();
        }
    }
    v
}

/// Rasterizes `pattern` as seen with the given factors.
///
/// Order: drift shading and scratches, projective warp, tint and preset,
/// blur, noise.
pub fn render_individual(
    pattern: &IndividualPattern,
    enc: &EncounterFactors,
    img: &ImageFactors,
    side: u32,
) -> RgbImage {
    let n = side as usize;
    let sidef = side as f64;
    let px = 1.0 / sidef;
    let offset = pose_offset(img.pose).unwrap_or(0.0);
    let (shade, scratches): (&[f64], &[Scratch]) = match &enc.drift {
        Some(d) => (&d.shade, &d.scratches),
        None => (&pattern.base_shade, &[]),
    };
    let to_canonical = capture_transform(enc, img, sidef)
        .try_inverse()
        .unwrap_or_else(Matrix3::identity);

    let value = GrayImage::from_fn(n, n, |x, y| {
        let p = to_canonical * Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 1.0);
        let q = [offset + p[0] / p[2] * px, p[1] / p[2] * px];
        pattern_value(pattern, shade, scratches, q, px) as f32
    });

    let (contrast, extra_blur, flash) = enc.preset.parameters();
    let k = enc.preset_strength;
    let contrast = 1.0 - k * (1.0 - contrast);
    let flash = k * flash;
    let blur = (enc.blur_sigma.powi(2) + (k * extra_blur).powi(2)).sqrt();
    let h = sidef / 2.0;

    let mut noise_rng = rng(img.noise_seed);
    let noise = Normal::new(0.0, enc.noise_sigma.max(0.0)).unwrap();
    let planes: Vec<GrayImage> = (0..3)
        .map(|ch| {
            let gain = pattern.color[ch] * enc.tint[ch];
            let mut plane = GrayImage::from_fn(n, n, |x, y| {
                let mut v = 0.5 + contrast * (value.at(x, y) as f64 * gain - 0.5);
                if flash > 0.0 {
                    let r2 = ((x as f64 + 0.5 - h).powi(2) + (y as f64 + 0.5 - h).powi(2)) / (h * h);
                    v += flash * (-r2).exp();
                }
                v as f32
            });
            if blur > 0.0 {
                plane = gaussian_blur(&plane, blur as f32);
            }
            plane
        })
        .collect();

    RgbImage::from_fn(side, side, |x, y| {
        let mut rgb = [0u8; 3];
        for (ch, out) in rgb.iter_mut().enumerate() {
            let mut v = planes[ch].at(x as usize, y as usize) as f64 * 255.0;
            if enc.noise_sigma > 0.0 {
                v += noise.sample(&mut noise_rng);
            }
            *out = v.round().clamp(0.0, 255.0) as u8;
        }
        image::Rgb(rgb)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub image_seed: u64,
    pub factors: ImageFactors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterMeta {
    pub individual_id: String,
    pub encounter_seed: u64,
    pub factors: EncounterFactors,
    pub n_scratches: usize,
    pub images: Vec<ImageMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualMeta {
    pub individual_id: String,
    pub pattern_seed: u64,
    pub n_cells: usize,
}

/// Contents of the `synth-meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub generator: String,
    pub rng: String,
    pub config: SynthConfig,
    pub individuals: Vec<IndividualMeta>,
    pub encounters: Vec<EncounterMeta>,
}

/// The full plan of a dataset: patterns and all factor draws, no pixels.
#[derive(Debug, Clone)]
pub struct DatasetPlan {
    pub config: SynthConfig,
    pub patterns: Vec<IndividualPattern>,
    pub encounters: Vec<EncounterMeta>,
}

pub fn individual_id(i: usize) -> String {
    format!("t{i:03}")
}

/// Sorted distinct encounter dates of one individual. Most are uniform over
/// the date range; a `followup_fraction` share are re-sightings at a
/// log-uniform 1-30 day gap after an earlier encounter.
fn encounter_dates(ind_seed: u64, config: &SynthConfig) -> Vec<NaiveDate> {
    let n_days = (config.end_date - config.start_date).num_days() + 1;
    let n = config.encounters_per_individual;
    let mut r = rng(derive_seed(ind_seed, TAG_DATES, 0));
    let mut offsets: Vec<i64> = Vec::with_capacity(n);
    let mut attempts = 0;
    while offsets.len() < n && attempts < 100 * n {
        attempts += 1;
        let off = if !offsets.is_empty() && r.random_bool(config.followup_fraction) {
            let anchor = offsets[r.random_range(0..offsets.len())];
            let gap = 31f64.powf(r.random::<f64>()).floor() as i64;
            anchor + gap.max(1)
        } else {
            r.random_range(0..n_days)
        };
        if off < n_days && !offsets.contains(&off) {
            offsets.push(off);
        }
    }
    if offsets.len() < n {
        // tiny date ranges: fill with distinct uniform days
        let taken = offsets.clone();
        let free: Vec<i64> = (0..n_days).filter(|d| !taken.contains(d)).collect();
        for i in sample(&mut r, free.len(), n - offsets.len()) {
            offsets.push(free[i]);
        }
    }
    offsets.sort_unstable();
    offsets.into_iter().map(|o| config.start_date + Duration::days(o)).collect()
}

pub fn plan_dataset(config: &SynthConfig) -> Result<DatasetPlan> {
    config.validate()?;
    let mut patterns = Vec::with_capacity(config.n_individuals);
    let mut encounters = Vec::new();
    for i in 0..config.n_individuals {
        let ind_seed = derive_seed(config.master_seed, TAG_INDIVIDUAL, i as u64);
        let id = individual_id(i);
        let pattern = IndividualPattern::generate(&id, ind_seed, config.min_cells, config.max_cells);

        let dates = encounter_dates(ind_seed, config);
        for (e, date) in dates.into_iter().enumerate() {
            let enc_seed = derive_seed(ind_seed, TAG_ENCOUNTER, e as u64);
            let mut factors = EncounterFactors::draw(enc_seed, date, config);
            let drift = drift_state(&pattern, date, config);
            let n_scratches = drift.scratches.len();
            factors.drift = Some(drift);
            let images = (0..config.images_per_encounter)
                .map(|k| {
                    let image_seed = derive_seed(enc_seed, TAG_IMAGE, k as u64);
                    let pose = config.poses[k % config.poses.len()];
                    ImageMeta {
                        image_id: format!("{id}_e{e:02}_i{k}"),
                        image_seed,
                        factors: ImageFactors::draw(image_seed, pose, config),
                    }
                })
                .collect();
            encounters.push(EncounterMeta {
                individual_id: id.clone(),
                encounter_seed: enc_seed,
                factors,
                n_scratches,
                images,
            });
        }
        patterns.push(pattern);
    }
    Ok(DatasetPlan {
        config: config.clone(),
        patterns,
        encounters,
    })
}

impl DatasetPlan {
    pub fn meta(&self) -> SynthMeta {
        SynthMeta {
            generator: format!("reid-core {}", env!("CARGO_PKG_VERSION")),
            rng: SYNTH_RNG.to_string(),
            config: self.config.clone(),
            individuals: self
                .patterns
                .iter()
                .map(|p| IndividualMeta {
                    individual_id: p.individual_id.clone(),
                    pattern_seed: p.pattern_seed,
                    n_cells: p.n_cells,
                })
                .collect(),
            encounters: self.encounters.clone(),
        }
    }

    pub fn records(&self) -> Vec<ImageRecord> {
        self.encounters
            .iter()
            .flat_map(|enc| {
                enc.images.iter().map(|im| ImageRecord {
                    image_id: im.image_id.clone(),
                    individual_id: Some(enc.individual_id.clone()),
                    date: Some(enc.factors.date),
                    orientation: im.factors.pose,
                    image_path: PathBuf::from("images").join(format!("{}.png", im.image_id)),
                    bbox: None,
                })
            })
            .collect()
    }

    fn pattern(&self, individual_id: &str) -> &IndividualPattern {
        self.patterns
            .iter()
            .find(|p| p.individual_id == individual_id)
            .expect("plan patterns cover every encounter")
    }

    /// All images as `(image_id, raster)` in manifest order.
    pub fn render_all(&self, exec: Execution) -> Vec<(String, RgbImage)> {
        let jobs: Vec<(&EncounterMeta, &ImageMeta)> = self
            .encounters
            .iter()
            .flat_map(|e| e.images.iter().map(move |im| (e, im)))
            .collect();
        par::map(exec, &jobs, |(enc, im)| {
            let pat = self.pattern(&enc.individual_id);
            (
                im.image_id.clone(),
                render_individual(pat, &enc.factors, &im.factors, self.config.image_size),
            )
        })
    }
}

/// Result of [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub catalog: Catalog,
    pub manifest_path: PathBuf,
    pub meta_path: PathBuf,
}

/// Writes `images/*.png`, `manifest.csv` and `synth-meta.json` under `out_dir`.
pub fn generate_dataset(config: &SynthConfig, out_dir: &Path, exec: Execution) -> Result<SynthOutput> {
    let plan = plan_dataset(config)?;
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;

    let jobs: Vec<(&EncounterMeta, &ImageMeta)> = plan
        .encounters
        .iter()
        .flat_map(|e| e.images.iter().map(move |im| (e, im)))
        .collect();
    let written = par::map(exec, &jobs, |(enc, im)| -> Result<()> {
        let raster = render_individual(plan.pattern(&enc.individual_id), &enc.factors, &im.factors, config.image_size);
        let path = img_dir.join(format!("{}.png", im.image_id));
        raster.save(&path).map_err(|source| Error::Decode { path, source })
    });
    written.into_iter().collect::<Result<Vec<()>>>()?;

    let catalog = Catalog::from_records(plan.records())?.with_base_dir(out_dir);
    let manifest_path = out_dir.join(MANIFEST_FILE);
    catalog.save_manifest(&manifest_path)?;

    let meta_path = out_dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&plan.meta()).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;

    Ok(SynthOutput {
        catalog,
        manifest_path,
        meta_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n_ind: usize, n_enc: usize, n_img: usize) -> SynthConfig {
        SynthConfig {
            n_individuals: n_ind,
            encounters_per_individual: n_enc,
            images_per_encounter: n_img,
            image_size: 64,
            ..SynthConfig::default()
        }
    }

    fn mad(a: &RgbImage, b: &RgbImage) -> f64 {
        let s: f64 = a
            .as_raw()
            .iter()
            .zip(b.as_raw())
            .map(|(x, y)| (*x as f64 - *y as f64).abs())
            .sum();
        s / a.as_raw().len() as f64
    }

    #[test]
    fn counts_follow_config() {
        let plan = plan_dataset(&tiny(2, 1, 1)).unwrap();
        let cat = Catalog::from_records(plan.records()).unwrap();
        assert_eq!(cat.len(), 2);
        assert_eq!(cat.derive_encounters().encounters.len(), 2);
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(plan_dataset(&tiny(0, 1, 1)).is_err());
        let mut c = tiny(1, 1, 1);
        c.end_date = c.start_date - Duration::days(1);
        assert!(plan_dataset(&c).is_err());
        let mut c = tiny(1, 5, 1);
        c.end_date = c.start_date + Duration::days(2);
        assert!(plan_dataset(&c).is_err());
        let mut c = tiny(1, 1, 1);
        c.poses = vec![Orientation::Front];
        assert!(plan_dataset(&c).is_err());
    }

    #[test]
    fn encounter_dates_are_distinct_and_in_range() {
        let c = tiny(3, 10, 1);
        let plan = plan_dataset(&c).unwrap();
        for p in &plan.patterns {
            let mut dates: Vec<_> = plan
                .encounters
                .iter()
                .filter(|e| e.individual_id == p.individual_id)
                .map(|e| e.factors.date)
                .collect();
            assert!(dates.iter().all(|d| (c.start_date..=c.end_date).contains(d)));
            dates.dedup();
            assert_eq!(dates.len(), 10);
        }
    }

    #[test]
    fn no_noise_sources_gives_identical_images() {
        let mut c = tiny(2, 3, 2);
        c.drift_rate = 0.0;
        c.factors = FactorMagnitudes::zero();
        let plan = plan_dataset(&c).unwrap();
        let imgs = plan.render_all(Execution::Sequential);
        for ind in ["t000", "t001"] {
            let mine: Vec<_> = imgs.iter().filter(|(id, _)| id.starts_with(ind)).collect();
            assert!(mine.windows(2).all(|w| w[0].1 == w[1].1));
        }
        assert_ne!(imgs[0].1, imgs.last().unwrap().1);
    }

    #[test]
    fn rendering_is_order_independent() {
        let plan = plan_dataset(&tiny(2, 2, 2)).unwrap();
        assert_eq!(plan.render_all(Execution::Sequential), plan.render_all(Execution::Parallel));
    }

    #[test]
    fn drift_is_a_function_of_seed_and_date() {
        let c = SynthConfig::default();
        let p = IndividualPattern::generate("x", 42, 20, 40);
        let d = NaiveDate::from_ymd_opt(2017, 6, 1).unwrap();
        assert_eq!(drift_state(&p, d, &c), drift_state(&p, d, &c));
        let q = IndividualPattern::generate("x", 42, 20, 40);
        assert_eq!(p, q);
        let d2 = NaiveDate::from_ymd_opt(2019, 6, 1).unwrap();
        assert_ne!(drift_state(&p, d, &c).shade, drift_state(&p, d2, &c).shade);
    }

    #[test]
    fn drift_grows_with_gap() {
        let c = SynthConfig::default();
        let d0 = NaiveDate::from_ymd_opt(2016, 3, 10).unwrap();
        let (mut near, mut far) = (0.0, 0.0);
        for seed in 0..8u64 {
            let p = IndividualPattern::generate("x", seed, 20, 40);
            let render = |d: NaiveDate| {
                let mut f = EncounterFactors::identity(d);
                f.drift = Some(drift_state(&p, d, &c));
                render_individual(&p, &f, &ImageFactors::identity(Orientation::Left), 64)
            };
            let base = render(d0);
            near += mad(&base, &render(d0 + Duration::days(1)));
            far += mad(&base, &render(d0 + Duration::days(5 * 365)));
        }
        assert!(far > near, "far {far} near {near}");
    }

    #[test]
    fn fold_stays_in_range() {
        for x in [-3.2, -0.1, 0.0, 0.5, 0.99, 1.7, 12.3] {
            let v = fold_into(x, 0.05, 0.95);
            assert!((0.05..=0.95).contains(&v), "{x} -> {v}");
        }
        assert_eq!(fold_into(0.5, 0.05, 0.95), 0.5);
    }

    #[test]
    fn seeds_are_distinct_per_branch() {
        let a = derive_seed(7, TAG_INDIVIDUAL, 0);
        let b = derive_seed(7, TAG_INDIVIDUAL, 1);
        let c = derive_seed(7, TAG_ENCOUNTER, 0);
        assert!(a != b && a != c && b != c);
    }
}
