//! Motion subspaces: PCA over pooled transitions, projection, weighted
//! recombination, decomposition into per-motion trajectories, and transfer of
//! selected motions onto a new source code.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::trajectory::{
    compute_transitions, integrate, integrate_with, FineLayers, LatentCode, LatentTrajectory,
    LayerRange, TransitionSequence,
};

/// Relative singular value below which a kept component is flagged.
pub const RANK_DEFICIENCY_RATIO: f64 = 1e-12;

/// Max |<u, v>| between components of different subspaces that triggers a
/// coherence warning before recombination.
pub const COHERENCE_WARNING_THRESHOLD: f64 = 0.3;

/// Pooled transition vectors of a single motion type, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    samples: DMatrix<f64>,
    layer_range: LayerRange,
    dim: usize,
    pub motion_label: String,
}

impl TransitionDataset {
    pub fn from_samples(
        samples: DMatrix<f64>,
        layer_range: LayerRange,
        dim: usize,
        motion_label: impl Into<String>,
    ) -> Result<Self> {
        if samples.nrows() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                found: samples.nrows(),
            });
        }
        if samples.ncols() != layer_range.sub_dim(dim) || samples.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "sample width {} does not match {} layers x {dim}",
                samples.ncols(),
                layer_range.count
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("transition samples"));
        }
        Ok(Self {
            samples,
            layer_range,
            dim,
            motion_label: motion_label.into(),
        })
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn d_sub(&self) -> usize {
        self.samples.ncols()
    }

    pub fn layer_range(&self) -> LayerRange {
        self.layer_range
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest admissible number of components.
    pub fn max_rank(&self) -> usize {
        self.len().min(self.d_sub())
    }

    pub fn mean(&self) -> DVector<f64> {
        self.samples.row_mean().transpose()
    }

    pub(crate) fn design_matrix(&self, centering: Centering) -> (DMatrix<f64>, DVector<f64>) {
        let mean = self.mean();
        let mut x = self.samples.clone();
        if centering == Centering::MeanSubtracted {
            for mut row in x.row_iter_mut() {
                row -= mean.transpose();
            }
        }
        (x, mean)
    }
}

/// Concatenates the transitions of several sequences in input order.
pub fn accumulate(
    sequences: &[TransitionSequence],
    motion_label: impl Into<String>,
) -> Result<TransitionDataset> {
    let first = sequences.first().ok_or(Error::InsufficientSamples {
        needed: 2,
        found: 0,
    })?;
    let (range, dim) = (first.layer_range(), first.dim());
    for (i, s) in sequences.iter().enumerate() {
        if s.layer_range() != range || s.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "sequence {i} has layers {:?} dim {}, expected {range:?} dim {dim}",
                s.layer_range(),
                s.dim()
            )));
        }
    }
    let total: usize = sequences.iter().map(TransitionSequence::len).sum();
    if total < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            found: total,
        });
    }
    let mut samples = DMatrix::zeros(total, range.sub_dim(dim));
    let mut row = 0;
    for s in sequences {
        let n = s.len();
        samples.rows_mut(row, n).copy_from(s.transitions());
        row += n;
    }
    TransitionDataset::from_samples(samples, range, dim, motion_label)
}

/// Whether the sample mean is removed before the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    #[default]
    Uncentered,
    MeanSubtracted,
}

/// Non-fatal conditions recorded on a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelWarning {
    /// A kept component whose singular value is negligible relative to the largest.
    RankDeficient { component: usize, ratio: f64 },
}

impl std::fmt::Display for ModelWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelWarning::RankDeficient { component, ratio } => write!(
                f,
                "component {component} has relative singular value {ratio:e} (rank deficient)"
            ),
        }
    }
}

/// A fitted motion subspace: `K` orthonormal directions in transition space.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSubspace {
    components: DMatrix<f64>,
    singular_values: Vec<f64>,
    total_energy: f64,
    mean_vector: DVector<f64>,
    layer_range: LayerRange,
    dim: usize,
    pub motion_label: String,
    sample_count: usize,
    centering: Centering,
    warnings: Vec<ModelWarning>,
}

/// Raw parts of a [`MotionSubspace`], used when loading or synthesising models.
#[derive(Debug, Clone)]
pub struct SubspaceParts {
    pub components: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub total_energy: f64,
    pub mean_vector: DVector<f64>,
    pub layer_range: LayerRange,
    pub dim: usize,
    pub motion_label: String,
    pub sample_count: usize,
    pub centering: Centering,
    pub warnings: Vec<ModelWarning>,
}

/// Gram tolerance accepted when building a model from stored parts.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-6;

impl MotionSubspace {
    /// Validates and assembles a model from its parts.
    pub fn from_parts(parts: SubspaceParts) -> Result<Self> {
        let k = parts.components.nrows();
        let d_sub = parts.layer_range.sub_dim(parts.dim);
        if k == 0 || parts.components.ncols() != d_sub || d_sub == 0 {
            return Err(Error::ShapeMismatch(format!(
                "components are {}x{}, expected Kx{d_sub} with K >= 1",
                k,
                parts.components.ncols()
            )));
        }
        if k > d_sub {
            return Err(Error::KTooLarge { k, max: d_sub });
        }
        if parts.singular_values.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: parts.singular_values.len(),
            });
        }
        if parts.mean_vector.len() != d_sub {
            return Err(Error::LengthMismatch {
                expected: d_sub,
                found: parts.mean_vector.len(),
            });
        }
        let finite = parts.components.iter().all(|v| v.is_finite())
            && parts.singular_values.iter().all(|v| v.is_finite())
            && parts.mean_vector.iter().all(|v| v.is_finite())
            && parts.total_energy.is_finite();
        if !finite {
            return Err(Error::NonFiniteInput("subspace parameters"));
        }
        if parts.singular_values.iter().any(|&s| s < 0.0)
            || parts.singular_values.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::InvalidArgument(
                "singular values must be non-negative and non-increasing".into(),
            ));
        }
        let dev = linalg::max_gram_deviation(&parts.components);
        if dev > ORTHONORMALITY_TOLERANCE {
            return Err(Error::OrthonormalityViolation { max_deviation: dev });
        }
        Ok(Self {
            components: parts.components,
            singular_values: parts.singular_values,
            total_energy: parts.total_energy,
            mean_vector: parts.mean_vector,
            layer_range: parts.layer_range,
            dim: parts.dim,
            motion_label: parts.motion_label,
            sample_count: parts.sample_count,
            centering: parts.centering,
            warnings: parts.warnings,
        })
    }

    /// Model spanned by the given orthonormal rows with unit singular values.
    pub fn from_basis(
        basis: DMatrix<f64>,
        layer_range: LayerRange,
        dim: usize,
        motion_label: impl Into<String>,
    ) -> Result<Self> {
        let k = basis.nrows();
        let d_sub = basis.ncols();
        Self::from_parts(SubspaceParts {
            components: basis,
            singular_values: vec![1.0; k],
            total_energy: k as f64,
            mean_vector: DVector::zeros(d_sub),
            layer_range,
            dim,
            motion_label: motion_label.into(),
            sample_count: 0,
            centering: Centering::Uncentered,
            warnings: Vec::new(),
        })
    }

    /// Components as rows (`K x D_sub`).
    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.components.row(i).iter().copied().collect()
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn d_sub(&self) -> usize {
        self.components.ncols()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn total_energy(&self) -> f64 {
        self.total_energy
    }

    pub fn mean_vector(&self) -> &DVector<f64> {
        &self.mean_vector
    }

    pub fn layer_range(&self) -> LayerRange {
        self.layer_range
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn centering(&self) -> Centering {
        self.centering
    }

    pub fn warnings(&self) -> &[ModelWarning] {
        &self.warnings
    }

    /// Share of total energy carried by each kept component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_energy <= 0.0 {
            return vec![0.0; self.k()];
        }
        self.singular_values
            .iter()
            .map(|s| s * s / self.total_energy)
            .collect()
    }

    /// Orthogonal projection of the rows of `d` onto the span.
    pub(crate) fn project_rows(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        let coeffs = d * self.components.transpose();
        coeffs * &self.components
    }

    fn check_sequence(&self, ts: &TransitionSequence) -> Result<()> {
        if ts.layer_range() != self.layer_range || ts.dim() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "sequence covers layers {:?} dim {}, subspace '{}' covers {:?} dim {}",
                ts.layer_range(),
                ts.dim(),
                self.motion_label,
                self.layer_range,
                self.dim
            )));
        }
        Ok(())
    }
}

/// Fits the top-`k` principal directions of a transition dataset.
///
/// Components are the leading right singular vectors of the sample matrix
/// (mean-subtracted only with [`Centering::MeanSubtracted`]), ordered by
/// descending singular value, each signed so its largest-magnitude entry is
/// positive.
pub fn fit_subspace(
    data: &TransitionDataset,
    k: usize,
    centering: Centering,
) -> Result<MotionSubspace> {
    if data.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            found: data.len(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let max = data.max_rank();
    if k > max {
        return Err(Error::KTooLarge { k, max });
    }
    let (x, mean) = data.design_matrix(centering);
    let (sigma, v_t) = linalg::right_singular(&x)?;
    let total_energy: f64 = sigma.iter().map(|s| s * s).sum();

    let mut components = v_t.rows(0, k).into_owned();
    linalg::canonicalize_row_signs(&mut components);
    let singular_values: Vec<f64> = sigma[..k].to_vec();

    let lead = singular_values[0];
    let warnings = singular_values
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| {
            let ratio = if lead > 0.0 { s / lead } else { 0.0 };
            (ratio < RANK_DEFICIENCY_RATIO).then_some(ModelWarning::RankDeficient {
                component: i,
                ratio,
            })
        })
        .collect();

    Ok(MotionSubspace {
        components,
        singular_values,
        total_energy,
        mean_vector: mean,
        layer_range: data.layer_range(),
        dim: data.dim(),
        motion_label: data.motion_label.clone(),
        sample_count: data.len(),
        centering,
        warnings,
    })
}

/// `sum_i <d, v_i> v_i` over the components of `s`. No mean is subtracted.
pub fn project_transition(d: &[f64], s: &MotionSubspace) -> Result<Vec<f64>> {
    if d.len() != s.d_sub() {
        return Err(Error::ShapeMismatch(format!(
            "transition has length {}, subspace expects {}",
            d.len(),
            s.d_sub()
        )));
    }
    let row = DMatrix::from_row_slice(1, d.len(), d);
    Ok(s.project_rows(&row).iter().copied().collect())
}

/// Projects every transition of a sequence; anchor and passthrough are kept.
pub fn project_sequence(ts: &TransitionSequence, s: &MotionSubspace) -> Result<TransitionSequence> {
    s.check_sequence(ts)?;
    ts.with_transitions(s.project_rows(ts.transitions()))
}

/// Weighted sum `sum_j alpha_j * projected_j[t]` per step.
pub fn combine(projected: &[TransitionSequence], alphas: &[f64]) -> Result<TransitionSequence> {
    let first = projected.first().ok_or_else(|| {
        Error::InvalidArgument("combine needs at least one sequence".into())
    })?;
    if alphas.len() != projected.len() {
        return Err(Error::LengthMismatch {
            expected: projected.len(),
            found: alphas.len(),
        });
    }
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFiniteInput("alphas"));
    }
    let mut acc = DMatrix::zeros(first.len(), first.d_sub());
    for (j, (p, &alpha)) in projected.iter().zip(alphas).enumerate() {
        if p.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: first.len(),
                found: p.len(),
            });
        }
        if !p.same_shape(first) {
            return Err(Error::ShapeMismatch(format!(
                "projected sequence {j} differs in shape from sequence 0"
            )));
        }
        acc += p.transitions() * alpha;
    }
    first.with_transitions(acc)
}

/// Divides alphas by their sum, turning the weighted sum into a weighted average.
pub fn normalize_alphas(alphas: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = alphas.iter().sum();
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::InvalidArgument(
            "cannot normalize alphas that sum to zero".into(),
        ));
    }
    Ok(alphas.iter().map(|a| a / sum).collect())
}

fn shared_range(subspaces: &[MotionSubspace], traj: &LatentTrajectory) -> Result<LayerRange> {
    let first = subspaces
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one subspace is required".into()))?;
    let range = first.layer_range();
    for s in subspaces {
        if s.layer_range() != range || s.dim() != first.dim() {
            return Err(Error::ShapeMismatch(format!(
                "subspace '{}' covers {:?} dim {}, '{}' covers {:?} dim {}",
                s.motion_label,
                s.layer_range(),
                s.dim(),
                first.motion_label,
                range,
                first.dim()
            )));
        }
    }
    if first.dim() != traj.dim() {
        return Err(Error::ShapeMismatch(format!(
            "trajectory dim {} does not match subspace dim {}",
            traj.dim(),
            first.dim()
        )));
    }
    range.validate(traj.n_layers())?;
    Ok(range)
}

/// Transitions of `traj` and their projections onto each subspace.
pub fn decompose_transitions(
    traj: &LatentTrajectory,
    subspaces: &[MotionSubspace],
) -> Result<(TransitionSequence, Vec<TransitionSequence>)> {
    let range = shared_range(subspaces, traj)?;
    let ts = compute_transitions(traj, range)?;
    let parts = subspaces
        .iter()
        .map(|s| project_sequence(&ts, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((ts, parts))
}

/// One trajectory per subspace, each integrated from the input's first frame.
pub fn decompose(
    traj: &LatentTrajectory,
    subspaces: &[MotionSubspace],
) -> Result<Vec<LatentTrajectory>> {
    let (_, parts) = decompose_transitions(traj, subspaces)?;
    parts.iter().map(integrate).collect()
}

/// Applies the `alphas`-weighted motion of `driving` to `source_code`.
///
/// Layers outside the subspaces' range stay at the source values for every frame.
pub fn transfer(
    source_code: &LatentCode,
    driving: &LatentTrajectory,
    subspaces: &[MotionSubspace],
    alphas: &[f64],
) -> Result<LatentTrajectory> {
    if source_code.shape() != driving.first().shape() {
        return Err(Error::ShapeMismatch(format!(
            "source code {:?} vs driving codes {:?}",
            source_code.shape(),
            driving.first().shape()
        )));
    }
    if alphas.len() != subspaces.len() {
        return Err(Error::LengthMismatch {
            expected: subspaces.len(),
            found: alphas.len(),
        });
    }
    let (_, parts) = decompose_transitions(driving, subspaces)?;
    let edited = combine(&parts, alphas)?.reanchored(source_code.clone())?;
    integrate_with(&edited, FineLayers::Freeze)
}

/// Per-step share of transition energy captured by each projection,
/// `|d_t^j|^2 / |d_t|^2`; zero for static steps.
pub fn energy_split(ts: &TransitionSequence, parts: &[TransitionSequence]) -> Vec<Vec<f64>> {
    (0..ts.len())
        .map(|t| {
            let total = ts.transitions().row(t).norm_squared();
            parts
                .iter()
                .map(|p| {
                    if total > 0.0 {
                        p.transitions().row(t).norm_squared() / total
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Largest |<u, v>| over components `u`, `v` taken from two different subspaces.
pub fn max_cross_coherence(subspaces: &[MotionSubspace]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in subspaces.iter().enumerate() {
        for b in &subspaces[i + 1..] {
            if a.d_sub() != b.d_sub() {
                continue;
            }
            let dots = a.components() * b.components().transpose();
            worst = dots.iter().fold(worst, |m, v| m.max(v.abs()));
        }
    }
    worst
}
