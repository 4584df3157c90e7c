//! Disentanglement diagnostics: rigid rotation between landmark sets and the
//! aggregated pose motion score built on it, cross-subspace orthogonality,
//! principal angles, and explained-variance curves.

use nalgebra::{DMatrix, SVD};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::subspace::{Centering, MotionSubspace, TransitionDataset};

/// Default subsampling step between landmark frames compared by [`apm`].
pub const DEFAULT_APM_STRIDE: usize = 10;

/// Number of leading components compared by default in [`orthogonality_report`].
pub const DEFAULT_TOP_K: usize = 20;

pub const HISTOGRAM_BINS: usize = 20;

/// Cumulative explained-variance levels reported by [`variance_report`].
pub const VARIANCE_THRESHOLDS: [f64; 4] = [0.5, 0.7, 0.9, 0.99];

const DEGENERATE_RATIO: f64 = 1e-12;

/// Per-frame landmark positions, each frame a `P x dims` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrack {
    frames: Vec<DMatrix<f64>>,
    pub stride: usize,
}

impl LandmarkTrack {
    pub fn new(frames: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = frames.first().ok_or(Error::TooFewFrames {
            needed: 1,
            found: 0,
        })?;
        let (points, dims) = first.shape();
        if dims != 2 && dims != 3 {
            return Err(Error::UnsupportedDimensionality(dims as u32));
        }
        if points < dims {
            return Err(Error::InvalidArgument(format!(
                "{dims}D tracks need at least {dims} points, got {points}"
            )));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.nrows() != points {
                return Err(Error::InconsistentPointCount {
                    frame: t,
                    expected: points,
                    found: f.nrows(),
                });
            }
            if f.ncols() != dims {
                return Err(Error::ShapeMismatch(format!(
                    "frame {t} has {} spatial dims, expected {dims}",
                    f.ncols()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("landmarks"));
            }
        }
        Ok(Self {
            frames,
            stride: DEFAULT_APM_STRIDE,
        })
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn frames(&self) -> &[DMatrix<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.frames[0].nrows()
    }

    pub fn spatial_dims(&self) -> usize {
        self.frames[0].ncols()
    }
}

fn centered(points: &DMatrix<f64>) -> DMatrix<f64> {
    let centroid = points.row_mean();
    let mut out = points.clone();
    for mut row in out.row_iter_mut() {
        row -= &centroid;
    }
    out
}

/// Proper rotation `R` minimising `sum |R (p_i - p_mean) - (q_i - q_mean)|^2`.
///
/// Points are rows. A reflection is never returned: when the best orthogonal
/// fit has negative determinant, the direction of the smallest singular value
/// is flipped.
pub fn kabsch_rotation(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if p.shape() != q.shape() {
        return Err(Error::ShapeMismatch(format!(
            "point sets {:?} and {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let d = p.ncols();
    if d == 0 || p.nrows() < 2 {
        return Err(Error::DegenerateConfiguration);
    }
    let (pc, qc) = (centered(p), centered(q));
    // cross-covariance H = P^T Q, so that R = V U^T maps p onto q
    let h = pc.transpose() * &qc;
    let svd = SVD::try_new(h, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("Kabsch SVD did not converge".into()))?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("Kabsch SVD incomplete".into())),
    };
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let largest = s[order[0]];
    // rank below d - 1 leaves the rotation undetermined
    let second_smallest = if d >= 2 { s[order[d - 2]] } else { largest };
    if !(largest > 0.0) || second_smallest < DEGENERATE_RATIO * largest {
        return Err(Error::DegenerateConfiguration);
    }
    if pc == qc {
        return Ok(DMatrix::identity(d, d));
    }
    let v = v_t.transpose();
    let det = (&v * u.transpose()).determinant();
    let mut correction = DMatrix::<f64>::identity(d, d);
    if det < 0.0 {
        correction[(order[d - 1], order[d - 1])] = -1.0;
    }
    Ok(v * correction * u.transpose())
}

/// Mean Frobenius norm of `R - I` over consecutive frames taken every
/// `track.stride` frames.
pub fn apm(track: &LandmarkTrack) -> Result<f64> {
    if track.stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let picked: Vec<&DMatrix<f64>> = track.frames.iter().step_by(track.stride).collect();
    if picked.len() < 2 {
        return Err(Error::TooFewFrames {
            needed: 2,
            found: picked.len(),
        });
    }
    let d = track.spatial_dims();
    let eye = DMatrix::<f64>::identity(d, d);
    let mut sum = 0.0;
    for pair in picked.windows(2) {
        let r = kabsch_rotation(pair[0], pair[1])?;
        sum += (r - &eye).norm();
    }
    Ok(sum / (picked.len() - 1) as f64)
}

/// Principal angles in radians, non-decreasing, between the row spans of two
/// matrices with orthonormal rows.
///
/// Cosines come from the singular values of `A B^T`, clamped to `[-1, 1]`.
/// Angles whose cosine exceeds `1/sqrt(2)` are taken from the matching sine
/// (singular values of the part of the smaller basis orthogonal to the other)
/// since `acos` loses half the available digits near zero.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "bases live in dimensions {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (big, small) = if a.nrows() >= b.nrows() { (a, b) } else { (b, a) };
    let n = small.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let cross = small * big.transpose();
    let cos = sorted_singular_values(&cross)?;
    let residual = small - &cross * big;
    let mut sin = sorted_singular_values(&residual)?;
    sin.reverse();
    Ok((0..n)
        .map(|i| {
            let c = cos[i].clamp(-1.0, 1.0);
            if c * c >= 0.5 {
                sin[i].clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect())
}

fn sorted_singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let rows = m.nrows();
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.resize(rows, 0.0);
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Pairwise inner products and principal angles between the leading
/// components of two subspaces.
#[derive(Debug, Clone, Serialize)]
pub struct OrthogonalityReport {
    /// `top_k_a x top_k_b` inner products, row `i` for component `i` of the first model.
    pub dot_matrix: Vec<Vec<f64>>,
    /// `HISTOGRAM_BINS + 1` uniform edges over `[0, 1]`.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub principal_angles: Vec<f64>,
    pub top_k: usize,
    pub warnings: Vec<String>,
}

impl OrthogonalityReport {
    /// Share of |dot| entries strictly below `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let total: usize = self.dot_matrix.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        let below = self
            .dot_matrix
            .iter()
            .flatten()
            .filter(|d| d.abs() < threshold)
            .count();
        below as f64 / total as f64
    }

    pub fn max_abs_dot(&self) -> f64 {
        self.dot_matrix
            .iter()
            .flatten()
            .fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Compares the first `top_k` components of `a` and `b`; `top_k` is clamped
/// to the smaller model with a warning.
pub fn orthogonality_report(
    a: &MotionSubspace,
    b: &MotionSubspace,
    top_k: usize,
) -> Result<OrthogonalityReport> {
    if a.d_sub() != b.d_sub() {
        return Err(Error::ShapeMismatch(format!(
            "subspaces live in dimensions {} and {}",
            a.d_sub(),
            b.d_sub()
        )));
    }
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    let available = a.k().min(b.k());
    let k = if top_k > available {
        warnings.push(format!(
            "top_k {top_k} clamped to {available} (models have {} and {} components)",
            a.k(),
            b.k()
        ));
        available
    } else {
        top_k
    };
    let va = a.components().rows(0, k).into_owned();
    let vb = b.components().rows(0, k).into_owned();
    let dots = &va * vb.transpose();
    let dot_matrix: Vec<Vec<f64>> = dots
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();

    let bin_edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| i as f64 / HISTOGRAM_BINS as f64)
        .collect();
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for d in dots.iter() {
        counts[histogram_bin(d.abs())] += 1;
    }
    let principal_angles = principal_angles(&va, &vb)?;
    Ok(OrthogonalityReport {
        dot_matrix,
        bin_edges,
        counts,
        principal_angles,
        top_k: k,
        warnings,
    })
}

fn histogram_bin(x: f64) -> usize {
    // the last bin is closed on the right; rounding above 1 lands there too
    let idx = (x * HISTOGRAM_BINS as f64).floor();
    if idx.is_nan() || idx < 0.0 {
        0
    } else {
        (idx as usize).min(HISTOGRAM_BINS - 1)
    }
}

/// Explained-variance curve of a transition dataset.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub per_component_ratio: Vec<f64>,
    pub cumulative_ratio: Vec<f64>,
    /// Smallest component count reaching each of [`VARIANCE_THRESHOLDS`],
    /// `None` when not reached within the reported components.
    pub k_at_thresholds: Vec<(f64, Option<usize>)>,
    pub rank: usize,
    pub centering: Centering,
}

impl VarianceReport {
    fn from_energies(sigma: &[f64], max_k: usize, centering: Centering) -> Self {
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        let per_component_ratio: Vec<f64> = sigma[..max_k]
            .iter()
            .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
            .collect();
        let mut cumulative_ratio = Vec::with_capacity(max_k);
        let mut acc = 0.0;
        for r in &per_component_ratio {
            acc += r;
            cumulative_ratio.push(acc.min(1.0));
        }
        let k_at_thresholds = VARIANCE_THRESHOLDS
            .iter()
            .map(|&th| {
                let hit = cumulative_ratio
                    .iter()
                    .position(|&c| c >= th - 1e-12)
                    .map(|i| i + 1);
                (th, hit)
            })
            .collect();
        Self {
            per_component_ratio,
            cumulative_ratio,
            k_at_thresholds,
            rank: sigma.len(),
            centering,
        }
    }
}

/// Per-component and cumulative energy ratios for the first `max_k`
/// principal directions, normalised by the energy over the full rank.
pub fn variance_report(
    data: &TransitionDataset,
    max_k: usize,
    centering: Centering,
) -> Result<VarianceReport> {
    let max = data.max_rank();
    if max_k > max {
        return Err(Error::KTooLarge { k: max_k, max });
    }
    if max_k == 0 {
        return Err(Error::InvalidArgument("max_k must be at least 1".into()));
    }
    let (x, _) = data.design_matrix(centering);
    let (sigma, _) = linalg::right_singular(&x)?;
    Ok(VarianceReport::from_energies(&sigma, max_k, centering))
}
