//! Same-individual decisions from a projective fit to the top correspondences.
//!
//! A pair is accepted when the least-squares homography `T` through the best
//! descriptor matches is well conditioned: `κ(T) < 1e5` and `κ(T̃) < 100`,
//! where `T̃` is the top-left 2x2 block and `κ` the 2-norm condition number.
//!
//! `κ(T)` depends on the pixel unit (a translation `t` alone gives `κ ≈ t²`).
//! The gate is therefore evaluated with both images rescaled so that the
//! larger side spans [`VerifyParams::frame_extent`] pixels. `κ(T̃)` does not
//! depend on this choice.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{match_descriptors, FeatureSet, MatchParams};

/// Mean head-crop side length of the photographs the default gates were tuned on.
pub const DEFAULT_FRAME_EXTENT: f64 = 640.0;

/// Relative singular-value gap below which a DLT system counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-9;

/// 2-norm condition number `σ_max / σ_min`; `f64::INFINITY` for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = max * f64::EPSILON * m.nrows().max(m.ncols()) as f64;
    if max == 0.0 || min <= tol {
        f64::INFINITY
    } else {
        (max / min).max(1.0)
    }
}

/// Homography normalized to unit Frobenius norm with a fixed sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectiveTransform {
    matrix: Matrix3<f64>,
}

impl ProjectiveTransform {
    /// Normalizes `m`; the sign is chosen so that the largest-magnitude entry
    /// (first in row-major order on ties) is positive.
    pub fn new(m: Matrix3<f64>) -> Option<Self> {
        let norm = m.norm();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        let mut lead = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                if m[(r, c)].abs() > lead.abs() * (1.0 + 1e-12) {
                    lead = m[(r, c)];
                }
            }
        }
        Some(ProjectiveTransform {
            matrix: m * (lead.signum() / norm),
        })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Top-left 2x2 block `T̃`.
    pub fn linear_block(&self) -> Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn apply(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        map_point(&self.matrix, p)
    }

    /// The transform expressed after scaling both image planes by `s`.
    pub fn rescaled(&self, s: f64) -> ProjectiveTransform {
        let d = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
        let di = Matrix3::new(1.0 / s, 0.0, 0.0, 0.0, 1.0 / s, 0.0, 0.0, 0.0, 1.0);
        ProjectiveTransform::new(d * self.matrix * di).expect("rescaling keeps a nonzero matrix")
    }

    pub fn cond(&self) -> f64 {
        condition_number(&DMatrix::from_column_slice(3, 3, self.matrix.as_slice()))
    }

    pub fn cond_linear(&self) -> f64 {
        condition_number(&DMatrix::from_column_slice(2, 2, self.linear_block().as_slice()))
    }
}

fn map_point(m: &Matrix3<f64>, p: [f64; 2]) -> Option<[f64; 2]> {
    let v = m * Vector3::new(p[0], p[1], 1.0);
    (v[2].abs() > 1e-12).then(|| [v[0] / v[2], v[1] / v[2]])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectiveFit {
    pub transform: ProjectiveTransform,
    /// RMS symmetric transfer error in pixels.
    pub residual: f64,
}

/// Translate to the centroid and scale to RMS distance √2.
fn hartley(points: impl Iterator<Item = [f64; 2]> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let ms = points.map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>() / n;
    if ms <= 1e-24 {
        return None;
    }
    let s = (2.0 / ms).sqrt();
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Normalized direct-linear-transform fit of `b ~ T a`.
pub fn fit_projective(pairs: &[([f64; 2], [f64; 2])]) -> Result<ProjectiveFit> {
    let n = pairs.len();
    if n < 4 {
        return Err(Error::InsufficientCorrespondences(n));
    }
    let na = hartley(pairs.iter().map(|p| p.0)).ok_or(Error::DegenerateConfiguration)?;
    let nb = hartley(pairs.iter().map(|p| p.1)).ok_or(Error::DegenerateConfiguration)?;

    // at least 9 rows so the SVD exposes the full right null space
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (pa, pb)) in pairs.iter().enumerate() {
        let pa = na * Vector3::new(pa[0], pa[1], 1.0);
        let pb = nb * Vector3::new(pb[0], pb[1], 1.0);
        let (x, y, u, v) = (pa[0], pa[1], pb[0], pb[1]);
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let (largest, second_smallest) = (svd.singular_values[order[0]], svd.singular_values[order[7]]);
    if second_smallest <= RANK_TOLERANCE * largest {
        return Err(Error::DegenerateConfiguration);
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let nb_inv = nb.try_inverse().ok_or(Error::DegenerateConfiguration)?;
    let transform = ProjectiveTransform::new(nb_inv * hn * na).ok_or(Error::DegenerateConfiguration)?;
    Ok(ProjectiveFit {
        transform,
        residual: symmetric_transfer_rms(&transform, pairs),
    })
}

fn symmetric_transfer_rms(t: &ProjectiveTransform, pairs: &[([f64; 2], [f64; 2])]) -> f64 {
    let Some(inv) = t.matrix.try_inverse() else {
        return f64::INFINITY;
    };
    let mut acc = 0.0;
    for (a, b) in pairs {
        match (map_point(&t.matrix, *a), map_point(&inv, *b)) {
            (Some(fa), Some(ib)) => {
                acc += (fa[0] - b[0]).powi(2) + (fa[1] - b[1]).powi(2);
                acc += (ib[0] - a[0]).powi(2) + (ib[1] - a[1]).powi(2);
            }
            _ => return f64::INFINITY,
        }
    }
    (acc / (2 * pairs.len()) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyParams {
    pub max_cond_t: f64,
    pub max_cond_t_tilde: f64,
    /// Optional gate on the RMS transfer error in pixels; off by default.
    pub max_residual: Option<f64>,
    /// Larger image side, in pixels, at which `κ(T)` is evaluated.
    /// `None` gates on raw pixel coordinates.
    pub frame_extent: Option<f64>,
    #[serde(rename = "matching")]
    pub matching: MatchParams,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            max_cond_t: 1e5,
            max_cond_t_tilde: 100.0,
            max_residual: None,
            frame_extent: Some(DEFAULT_FRAME_EXTENT),
            matching: MatchParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InsufficientCorrespondences,
    DegenerateConfiguration,
    ConditionT,
    ConditionTTilde,
    Residual,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::InsufficientCorrespondences => "insufficient_correspondences",
            RejectReason::DegenerateConfiguration => "degenerate_configuration",
            RejectReason::ConditionT => "cond_t",
            RejectReason::ConditionTTilde => "cond_t_tilde",
            RejectReason::Residual => "residual",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationDecision {
    pub accepted: bool,
    pub cond_t: f64,
    pub cond_t_tilde: f64,
    pub n_correspondences: usize,
    pub residual: f64,
    pub reason: Option<RejectReason>,
}

impl VerificationDecision {
    fn rejected(n: usize, reason: RejectReason) -> Self {
        VerificationDecision {
            accepted: false,
            cond_t: f64::INFINITY,
            cond_t_tilde: f64::INFINITY,
            n_correspondences: n,
            residual: f64::INFINITY,
            reason: Some(reason),
        }
    }
}

/// Applies the gates to point correspondences between two frames whose larger
/// sides are `extent_a` and `extent_b` pixels.
// negated comparisons so that a NaN fails its gate
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn verify_correspondences(
    pairs: &[([f64; 2], [f64; 2])],
    extent_a: f64,
    extent_b: f64,
    params: &VerifyParams,
) -> VerificationDecision {
    let n = pairs.len();
    let fit = match fit_projective(pairs) {
        Ok(f) => f,
        Err(Error::InsufficientCorrespondences(_)) => {
            return VerificationDecision::rejected(n, RejectReason::InsufficientCorrespondences)
        }
        Err(_) => return VerificationDecision::rejected(n, RejectReason::DegenerateConfiguration),
    };
    let gate = match params.frame_extent {
        Some(target) if extent_a.max(extent_b) > 0.0 => fit.transform.rescaled(target / extent_a.max(extent_b)),
        _ => fit.transform,
    };
    let cond_t = gate.cond();
    let cond_t_tilde = gate.cond_linear();
    let reason = if !(cond_t < params.max_cond_t) {
        Some(RejectReason::ConditionT)
    } else if !(cond_t_tilde < params.max_cond_t_tilde) {
        Some(RejectReason::ConditionTTilde)
    } else if params.max_residual.is_some_and(|m| !(fit.residual <= m)) {
        Some(RejectReason::Residual)
    } else {
        None
    };
    VerificationDecision {
        accepted: reason.is_none(),
        cond_t,
        cond_t_tilde,
        n_correspondences: n,
        residual: fit.residual,
        reason,
    }
}

/// Matches descriptors, fits a homography to the top pairs and gates it.
pub fn verify_pair(fs_a: &FeatureSet, fs_b: &FeatureSet, params: &VerifyParams) -> VerificationDecision {
    let corr = match_descriptors(fs_a, fs_b, &params.matching);
    let pairs = corr.point_pairs(fs_a, fs_b);
    verify_correspondences(&pairs, fs_a.extent(), fs_b.extent(), params)
}

/// Decision for an unordered image pair, stored with `image_a < image_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDecision {
    pub image_a: String,
    pub image_b: String,
    pub decision: VerificationDecision,
}

/// Verifies an unordered pair. The fit runs from the smaller id to the larger
/// one whatever the argument order, because fitting T and its inverse can fall
/// on different sides of a gate.
pub fn verify_unordered(
    a: (&str, &FeatureSet),
    b: (&str, &FeatureSet),
    params: &VerifyParams,
) -> PairDecision {
    let (a, b) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    PairDecision {
        image_a: a.0.to_string(),
        image_b: b.0.to_string(),
        decision: verify_pair(a.1, b.1, params),
    }
}

pub const DECISION_COLUMNS: [&str; 7] = ["image_a", "image_b", "accepted", "cond_T", "cond_T_tilde", "n_corr", "residual"];

pub fn write_decisions<W: Write>(decisions: &[PairDecision], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DECISION_COLUMNS)?;
    for d in decisions {
        let v = &d.decision;
        w.write_record([
            d.image_a.clone(),
            d.image_b.clone(),
            v.accepted.to_string(),
            fmt_float(v.cond_t),
            fmt_float(v.cond_t_tilde),
            v.n_correspondences.to_string(),
            fmt_float(v.residual),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<decisions>", e))?;
    Ok(())
}

pub fn save_decisions(decisions: &[PairDecision], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_decisions(decisions, std::io::BufWriter::new(file))
}

pub fn load_decisions(path: impl AsRef<Path>) -> Result<Vec<PairDecision>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_decisions(file)
}

pub fn read_decisions<R: std::io::Read>(input: R) -> Result<Vec<PairDecision>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Contract(format!("decision line {line}: bad {what}"));
        let f = |i: usize, what: &str| row.get(i).unwrap_or("").parse::<f64>().map_err(|_| bad(what));
        let accepted: bool = row.get(2).unwrap_or("").parse().map_err(|_| bad("accepted"))?;
        let (image_a, image_b) = (row.get(0).unwrap_or("").to_string(), row.get(1).unwrap_or("").to_string());
        if image_a >= image_b {
            return Err(bad("pair order (image_a must sort before image_b)"));
        }
        out.push(PairDecision {
            image_a,
            image_b,
            decision: VerificationDecision {
                accepted,
                cond_t: f(3, "cond_T")?,
                cond_t_tilde: f(4, "cond_T_tilde")?,
                n_correspondences: row.get(5).unwrap_or("").parse().map_err(|_| bad("n_corr"))?,
                residual: f(6, "residual")?,
                reason: None,
            },
        });
    }
    Ok(out)
}

/// Shortest representation that parses back to the same value; `inf` for infinity.
fn fmt_float(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:e}")
    }
}
