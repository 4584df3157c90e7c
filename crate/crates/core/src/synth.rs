//! Synthetic ground truth: mutually orthogonal motion bases and latent
//! trajectories whose transitions are known mixtures of motions in those bases.
//!
//! Each transition is `sum_j weight_j * B_j^T (c_t^j + mu_j) + noise` where
//! `B_j` holds the orthonormal rows of motion `j`, `c_t^j` are fresh random
//! coefficients and `mu_j` an optional constant drift in the same basis. The
//! per-motion parts are kept alongside the trajectories for oracle checks.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::rng;
use crate::trajectory::{LatentCode, LatentTrajectory, LayerRange};

/// Degrees of freedom of the heavy-tailed coefficient option.
pub const STUDENT_T_DOF: f64 = 3.0;

/// Std of the per-frame jitter on layers outside the motion range.
pub const FINE_LAYER_JITTER: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientDistribution {
    #[default]
    Gaussian,
    /// Student-t with [`STUDENT_T_DOF`] degrees of freedom, rescaled to unit
    /// variance. Applies to both motion coefficients and noise.
    HeavyTailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Ambient transition dimension; `d_sub / dim` layers carry motion.
    pub d_sub: usize,
    /// Per-layer width of the emitted latent codes.
    pub dim: usize,
    /// Extra layers after the motion range, jittered independently per frame.
    pub fine_layers: usize,
    pub subspace_dims: Vec<usize>,
    pub n_trajectories: usize,
    pub frames: usize,
    pub noise_sigma: f64,
    /// Optional constant drift per motion, in basis coordinates.
    pub drift: Option<Vec<Vec<f64>>>,
    pub distribution: CoefficientDistribution,
    pub seed: u64,
}

impl SynthSpec {
    /// Single-layer codes of width `d_sub`, Gaussian coefficients, no drift.
    pub fn new(d_sub: usize, subspace_dims: Vec<usize>) -> Self {
        Self {
            d_sub,
            dim: d_sub,
            fine_layers: 0,
            subspace_dims,
            n_trajectories: 100,
            frames: 20,
            noise_sigma: 0.0,
            drift: None,
            distribution: CoefficientDistribution::Gaussian,
            seed: 0,
        }
    }

    pub fn layer_range(&self) -> LayerRange {
        LayerRange::new(0, self.d_sub / self.dim.max(1))
    }

    pub fn n_layers(&self) -> usize {
        self.layer_range().count + self.fine_layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_sub == 0 || self.dim == 0 || !self.d_sub.is_multiple_of(self.dim) {
            return Err(Error::InvalidArgument(format!(
                "d_sub {} must be a positive multiple of dim {}",
                self.d_sub, self.dim
            )));
        }
        if self.subspace_dims.is_empty() || self.subspace_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "every motion needs at least one dimension".into(),
            ));
        }
        let requested: usize = self.subspace_dims.iter().sum();
        if requested > self.d_sub {
            return Err(Error::DimsExceedAmbient {
                requested,
                ambient: self.d_sub,
            });
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        if self.frames < 2 {
            return Err(Error::TooFewFrames {
                needed: 2,
                found: self.frames,
            });
        }
        if let Some(drift) = &self.drift {
            if drift.len() != self.subspace_dims.len()
                || drift.iter().zip(&self.subspace_dims).any(|(d, &k)| d.len() != k)
            {
                return Err(Error::ShapeMismatch(
                    "drift must give one coefficient vector per motion, sized to its basis".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Seeded random orthonormal frame split into consecutive blocks, one
/// `dims_j x d_sub` basis (orthonormal rows) per motion.
pub fn make_orthogonal_bases(spec: &SynthSpec) -> Result<Vec<DMatrix<f64>>> {
    spec.validate()?;
    let d = spec.d_sub;
    let mut r = rng::stream(spec.seed, rng::BASIS_STREAM);
    let gaussian = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
    let q = gaussian.qr().q();
    let mut bases = Vec::with_capacity(spec.subspace_dims.len());
    let mut col = 0;
    for &k in &spec.subspace_dims {
        bases.push(q.columns(col, k).transpose());
        col += k;
    }
    Ok(bases)
}

/// Exact composition of one synthetic trajectory's transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Per motion, `(T-1) x d_sub` contribution including weight and drift.
    pub motion_transitions: Vec<DMatrix<f64>>,
    pub noise: DMatrix<f64>,
    /// Transitions as emitted: the motion parts summed in order, then noise.
    pub transitions: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthBatch {
    pub trajectories: Vec<LatentTrajectory>,
    pub ground_truth: Vec<GroundTruth>,
    pub weights: Vec<f64>,
}

struct Sampler {
    dist: CoefficientDistribution,
    student: StudentT<f64>,
    t_scale: f64,
}

impl Sampler {
    fn new(dist: CoefficientDistribution) -> Self {
        Self {
            dist,
            student: StudentT::new(STUDENT_T_DOF).expect("positive degrees of freedom"),
            t_scale: ((STUDENT_T_DOF - 2.0) / STUDENT_T_DOF).sqrt(),
        }
    }

    fn draw(&self, r: &mut ChaCha20Rng) -> f64 {
        match self.dist {
            CoefficientDistribution::Gaussian => r.sample(StandardNormal),
            CoefficientDistribution::HeavyTailed => self.student.sample(r) * self.t_scale,
        }
    }
}

/// Generates `spec.n_trajectories` trajectories mixing the motions in `bases`
/// with the given weights.
///
/// Trajectory `i` draws from its own ChaCha20 substream, determined by the
/// seed, the bit pattern of `weights` and `i`, so batches with different
/// weights are independent and any trajectory can be regenerated alone.
pub fn sample_trajectories(
    spec: &SynthSpec,
    bases: &[DMatrix<f64>],
    weights: &[f64],
) -> Result<SynthBatch> {
    spec.validate()?;
    if bases.len() != weights.len() || bases.len() != spec.subspace_dims.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} bases, {} weights, {} motions in spec",
            bases.len(),
            weights.len(),
            spec.subspace_dims.len()
        )));
    }
    for (b, &k) in bases.iter().zip(&spec.subspace_dims) {
        if b.shape() != (k, spec.d_sub) {
            return Err(Error::ShapeMismatch(format!(
                "basis is {:?}, expected ({k}, {})",
                b.shape(),
                spec.d_sub
            )));
        }
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFiniteInput("mixture weights"));
    }

    let tag = rng::batch_tag(weights);
    let sampler = Sampler::new(spec.distribution);
    let range = spec.layer_range();
    let n_layers = spec.n_layers();
    let steps = spec.frames - 1;

    let mut trajectories = Vec::with_capacity(spec.n_trajectories);
    let mut ground_truth = Vec::with_capacity(spec.n_trajectories);
    for i in 0..spec.n_trajectories {
        let mut r = rng::stream(spec.seed, rng::trajectory_stream(tag, i as u64));
        let origin: Vec<f64> = (0..n_layers * spec.dim)
            .map(|_| r.sample::<f64, _>(StandardNormal))
            .collect();

        let mut motion_transitions = Vec::with_capacity(bases.len());
        for (j, (basis, &w)) in bases.iter().zip(weights).enumerate() {
            let k = basis.nrows();
            let mut coeffs = DMatrix::from_fn(steps, k, |_, _| sampler.draw(&mut r));
            if let Some(drift) = &spec.drift {
                for mut row in coeffs.row_iter_mut() {
                    for (c, mu) in row.iter_mut().zip(&drift[j]) {
                        *c += mu;
                    }
                }
            }
            motion_transitions.push(coeffs * basis * w);
        }
        let noise = if spec.noise_sigma > 0.0 {
            DMatrix::from_fn(steps, spec.d_sub, |_, _| {
                sampler.draw(&mut r) * spec.noise_sigma
            })
        } else {
            DMatrix::zeros(steps, spec.d_sub)
        };
        let mut transitions = DMatrix::zeros(steps, spec.d_sub);
        for part in &motion_transitions {
            transitions += part;
        }
        transitions += &noise;

        let mut frames = Vec::with_capacity(spec.frames);
        let mut code = origin;
        let fine_start = range.end() * spec.dim;
        frames.push(LatentCode::new(n_layers, spec.dim, code.clone())?);
        let fine_origin = code[fine_start..].to_vec();
        for t in 0..steps {
            for (c, v) in code[..spec.d_sub].iter_mut().enumerate() {
                *v += transitions[(t, c)];
            }
            for (v, base) in code[fine_start..].iter_mut().zip(&fine_origin) {
                *v = base + FINE_LAYER_JITTER * r.sample::<f64, _>(StandardNormal);
            }
            frames.push(LatentCode::new(n_layers, spec.dim, code.clone())?);
        }
        trajectories.push(LatentTrajectory::new(frames)?.with_source_id(format!("synth-{tag:016x}-{i}")));
        ground_truth.push(GroundTruth {
            motion_transitions,
            noise,
            transitions,
        });
    }
    Ok(SynthBatch {
        trajectories,
        ground_truth,
        weights: weights.to_vec(),
    })
}
