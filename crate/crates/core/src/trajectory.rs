//! Latent trajectories and the transition sequences derived from them.
//!
//! A trajectory holds one layered latent code per video frame. Motion is
//! represented by the differences between consecutive codes restricted to a
//! contiguous range of layers; everything outside that range is carried along
//! untouched so a trajectory can be rebuilt after editing its transitions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default number of leading generator layers that carry motion.
pub const DEFAULT_LAYER_COUNT: usize = 10;

/// One frame's latent code: `n_layers` rows of `dim` values, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    n_layers: usize,
    dim: usize,
    values: Vec<f64>,
}

impl LatentCode {
    pub fn new(n_layers: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if n_layers == 0 || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "latent code needs n_layers >= 1 and dim >= 1, got {n_layers}x{dim}"
            )));
        }
        if values.len() != n_layers * dim {
            return Err(Error::LengthMismatch {
                expected: n_layers * dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("latent code"));
        }
        Ok(Self {
            n_layers,
            dim,
            values,
        })
    }

    pub fn zeros(n_layers: usize, dim: usize) -> Self {
        Self {
            n_layers,
            dim,
            values: vec![0.0; n_layers * dim],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_layers, self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    /// Flattened view of the layers covered by `range`.
    pub fn slice(&self, range: LayerRange) -> &[f64] {
        &self.values[range.start * self.dim..range.end() * self.dim]
    }

    fn slice_mut(&mut self, range: LayerRange) -> &mut [f64] {
        &mut self.values[range.start * self.dim..range.end() * self.dim]
    }
}

/// Contiguous block of layers `[start, start + count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerRange {
    pub start: usize,
    pub count: usize,
}

impl Default for LayerRange {
    fn default() -> Self {
        Self {
            start: 0,
            count: DEFAULT_LAYER_COUNT,
        }
    }
}

impl LayerRange {
    pub fn new(start: usize, count: usize) -> Self {
        Self { start, count }
    }

    /// Range covering every layer of a code.
    pub fn full(n_layers: usize) -> Self {
        Self {
            start: 0,
            count: n_layers,
        }
    }

    pub fn end(&self) -> usize {
        self.start + self.count
    }

    pub fn contains(&self, layer: usize) -> bool {
        layer >= self.start && layer < self.end()
    }

    /// Length of a flattened transition vector for codes of width `dim`.
    pub fn sub_dim(&self, dim: usize) -> usize {
        self.count * dim
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.count == 0 || self.end() > n_layers {
            return Err(Error::LayerRangeOutOfBounds {
                start: self.start,
                count: self.count,
                n_layers,
            });
        }
        Ok(())
    }
}

/// Ordered sequence of latent codes, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    frames: Vec<LatentCode>,
    pub frame_rate: Option<f64>,
    pub source_id: String,
}

impl LatentTrajectory {
    pub fn new(frames: Vec<LatentCode>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyTrajectory)?;
        let shape = first.shape();
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "frame {t} has shape {:?}, frame 0 has {shape:?}",
                f.shape()
            )));
        }
        Ok(Self {
            frames,
            frame_rate: None,
            source_id: String::new(),
        })
    }

    /// Builds a trajectory from a flat buffer laid out frame, layer, then dim.
    pub fn from_flat(n_frames: usize, n_layers: usize, dim: usize, values: &[f64]) -> Result<Self> {
        let per_frame = n_layers * dim;
        if n_frames == 0 {
            return Err(Error::EmptyTrajectory);
        }
        if values.len() != n_frames * per_frame {
            return Err(Error::LengthMismatch {
                expected: n_frames * per_frame,
                found: values.len(),
            });
        }
        let frames = values
            .chunks_exact(per_frame)
            .map(|c| LatentCode::new(n_layers, dim, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn with_frame_rate(mut self, fps: Option<f64>) -> Self {
        self.frame_rate = fps;
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.frames[0].n_layers
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim
    }

    pub fn frames(&self) -> &[LatentCode] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &LatentCode {
        &self.frames[t]
    }

    pub fn first(&self) -> &LatentCode {
        &self.frames[0]
    }

    /// Flat copy laid out frame, layer, then dim.
    pub fn to_flat(&self) -> Vec<f64> {
        self.frames
            .iter()
            .flat_map(|f| f.values.iter().copied())
            .collect()
    }

    /// Largest absolute entrywise difference to another trajectory of the same shape.
    pub fn max_abs_diff(&self, other: &LatentTrajectory) -> Result<f64> {
        if self.len() != other.len() || self.first().shape() != other.first().shape() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{:?} vs {}x{:?}",
                self.len(),
                self.first().shape(),
                other.len(),
                other.first().shape()
            )));
        }
        Ok(self
            .frames
            .iter()
            .zip(&other.frames)
            .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }
}

/// How layers outside the edited range behave when a trajectory is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FineLayers {
    /// Replay the original per-frame values.
    #[default]
    Passthrough,
    /// Hold every frame at the first frame's values.
    Freeze,
}

/// Frame-to-frame differences of a trajectory over a layer range.
///
/// Row `t` of `transitions` is `slice(w[t+1]) - slice(w[t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSequence {
    transitions: DMatrix<f64>,
    layer_range: LayerRange,
    dim: usize,
    origin: LatentCode,
    passthrough: Vec<LatentCode>,
}

impl TransitionSequence {
    /// Assembles a sequence from parts. `passthrough` must hold one full code
    /// per frame (`transitions.nrows() + 1`); only layers outside
    /// `layer_range` are ever read from it.
    pub fn new(
        transitions: DMatrix<f64>,
        layer_range: LayerRange,
        origin: LatentCode,
        passthrough: Vec<LatentCode>,
    ) -> Result<Self> {
        layer_range.validate(origin.n_layers)?;
        let dim = origin.dim;
        let d_sub = layer_range.sub_dim(dim);
        if transitions.ncols() != d_sub {
            return Err(Error::ShapeMismatch(format!(
                "transition width {} does not match layer range width {d_sub}",
                transitions.ncols()
            )));
        }
        if passthrough.len() != transitions.nrows() + 1 {
            return Err(Error::LengthMismatch {
                expected: transitions.nrows() + 1,
                found: passthrough.len(),
            });
        }
        if passthrough.iter().any(|c| c.shape() != origin.shape()) {
            return Err(Error::ShapeMismatch(
                "passthrough code shape differs from origin".into(),
            ));
        }
        if transitions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("transitions"));
        }
        Ok(Self {
            transitions,
            layer_range,
            dim,
            origin,
            passthrough,
        })
    }

    /// Transition matrix, one row per step.
    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.nrows() == 0
    }

    pub fn layer_range(&self) -> LayerRange {
        self.layer_range
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d_sub(&self) -> usize {
        self.transitions.ncols()
    }

    pub fn origin(&self) -> &LatentCode {
        &self.origin
    }

    pub fn passthrough(&self) -> &[LatentCode] {
        &self.passthrough
    }

    pub fn transition(&self, t: usize) -> Vec<f64> {
        self.transitions.row(t).iter().copied().collect()
    }

    /// Same metadata, new transitions of identical shape.
    pub fn with_transitions(&self, transitions: DMatrix<f64>) -> Result<Self> {
        if transitions.shape() != self.transitions.shape() {
            return Err(Error::ShapeMismatch(format!(
                "expected {:?} transitions, got {:?}",
                self.transitions.shape(),
                transitions.shape()
            )));
        }
        if transitions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("transitions"));
        }
        Ok(Self {
            transitions,
            ..self.clone()
        })
    }

    /// Replaces the anchor code and holds all layers outside the range at it.
    pub(crate) fn reanchored(&self, origin: LatentCode) -> Result<Self> {
        if origin.shape() != self.origin.shape() {
            return Err(Error::ShapeMismatch(format!(
                "source code shape {:?} differs from {:?}",
                origin.shape(),
                self.origin.shape()
            )));
        }
        let passthrough = vec![origin.clone(); self.len() + 1];
        Ok(Self {
            transitions: self.transitions.clone(),
            layer_range: self.layer_range,
            dim: self.dim,
            origin,
            passthrough,
        })
    }

    pub(crate) fn same_shape(&self, other: &TransitionSequence) -> bool {
        self.layer_range == other.layer_range
            && self.dim == other.dim
            && self.transitions.shape() == other.transitions.shape()
            && self.origin.shape() == other.origin.shape()
    }
}

/// Differences between consecutive frames over `layer_range`.
pub fn compute_transitions(
    traj: &LatentTrajectory,
    layer_range: LayerRange,
) -> Result<TransitionSequence> {
    layer_range.validate(traj.n_layers())?;
    let d_sub = layer_range.sub_dim(traj.dim());
    let steps = traj.len() - 1;
    let mut transitions = DMatrix::zeros(steps, d_sub);
    for t in 0..steps {
        let a = traj.frames[t].slice(layer_range);
        let b = traj.frames[t + 1].slice(layer_range);
        for (c, (x, y)) in a.iter().zip(b).enumerate() {
            transitions[(t, c)] = y - x;
        }
    }
    if transitions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("transitions"));
    }
    Ok(TransitionSequence {
        transitions,
        layer_range,
        dim: traj.dim(),
        origin: traj.frames[0].clone(),
        passthrough: traj.frames.clone(),
    })
}

/// Rebuilds a trajectory by cumulatively adding transitions to the origin code,
/// replaying the original values of layers outside the range.
pub fn integrate(ts: &TransitionSequence) -> Result<LatentTrajectory> {
    integrate_with(ts, FineLayers::Passthrough)
}

pub fn integrate_with(ts: &TransitionSequence, fine: FineLayers) -> Result<LatentTrajectory> {
    let range = ts.layer_range;
    let mut acc: Vec<f64> = ts.origin.slice(range).to_vec();
    let mut frames = Vec::with_capacity(ts.len() + 1);
    for t in 0..=ts.len() {
        if t > 0 {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += ts.transitions[(t - 1, c)];
            }
        }
        let mut code = match fine {
            FineLayers::Passthrough => ts.passthrough[t].clone(),
            FineLayers::Freeze => ts.origin.clone(),
        };
        code.slice_mut(range).copy_from_slice(&acc);
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("integrated code"));
        }
        frames.push(code);
    }
    LatentTrajectory::new(frames)
}

/// Multiplies every transition by `alpha`.
pub fn scale_transitions(ts: &TransitionSequence, alpha: f64) -> Result<TransitionSequence> {
    if !alpha.is_finite() {
        return Err(Error::NonFiniteInput("alpha"));
    }
    ts.with_transitions(&ts.transitions * alpha)
}
