//! FastICA baseline: independent directions in a pooled transition dataset.
//!
//! The data are centred and whitened onto their top `C` principal directions,
//! then a symmetric (parallel) fixed-point iteration finds an orthonormal
//! rotation of the whitened space that maximises non-Gaussianity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::subspace::TransitionDataset;
use crate::trajectory::{LayerRange, TransitionSequence};

pub const DEFAULT_COMPONENTS: usize = 6;
pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Non-quadratic contrast used by the fixed-point update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    /// `G(u) = log cosh(u)`, `g(u) = tanh(u)`.
    #[default]
    LogCosh,
    /// `G(u) = -exp(-u^2/2)`, `g(u) = u exp(-u^2/2)`.
    Exp,
}

impl Contrast {
    /// Returns `(g(u), g'(u))`.
    fn eval(self, u: f64) -> (f64, f64) {
        match self {
            Contrast::LogCosh => {
                let t = u.tanh();
                (t, 1.0 - t * t)
            }
            Contrast::Exp => {
                let e = (-0.5 * u * u).exp();
                (u * e, (1.0 - u * u) * e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaOptions {
    pub n_components: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub contrast: Contrast,
    pub seed: u64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self {
            n_components: DEFAULT_COMPONENTS,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            contrast: Contrast::LogCosh,
            seed: 0,
        }
    }
}

/// A fitted FastICA decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    /// `C x D_sub`; sources are `unmixing * (d - mean)`.
    pub unmixing: DMatrix<f64>,
    /// `D_sub x C`; reconstructs centred data from sources.
    pub mixing: DMatrix<f64>,
    /// `C x D_sub` PCA whitening map.
    pub whitening: DMatrix<f64>,
    /// `C x C` orthonormal rotation of the whitened space.
    pub rotation: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub layer_range: LayerRange,
    pub dim: usize,
    pub iterations: usize,
    pub converged: bool,
    pub contrast: Contrast,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl IcaModel {
    pub fn n_components(&self) -> usize {
        self.unmixing.nrows()
    }

    pub fn d_sub(&self) -> usize {
        self.unmixing.ncols()
    }

    /// Estimated source signals for each row of `samples`.
    pub fn sources(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centred = samples.clone();
        for mut row in centred.row_iter_mut() {
            row -= self.mean.transpose();
        }
        centred * self.unmixing.transpose()
    }

    pub fn to_record(&self) -> IcaRecord {
        IcaRecord {
            n_components: self.n_components(),
            d_sub: self.d_sub(),
            layer_start: self.layer_range.start,
            layer_count: self.layer_range.count,
            dim: self.dim,
            unmixing: row_major(&self.unmixing),
            mixing: row_major(&self.mixing),
            whitening: row_major(&self.whitening),
            rotation: row_major(&self.rotation),
            mean: self.mean.iter().copied().collect(),
            iterations: self.iterations,
            converged: self.converged,
            contrast: self.contrast,
            seed: self.seed,
            warnings: self.warnings.clone(),
        }
    }

    pub fn from_record(r: IcaRecord) -> Result<Self> {
        let (c, d) = (r.n_components, r.d_sub);
        let range = LayerRange::new(r.layer_start, r.layer_count);
        if c == 0 || d == 0 || range.sub_dim(r.dim) != d {
            return Err(Error::Malformed(format!(
                "ICA record shape C={c} D={d} inconsistent with {} layers x {}",
                r.layer_count, r.dim
            )));
        }
        let mat = |v: Vec<f64>, rows: usize, cols: usize, name: &str| {
            if v.len() != rows * cols {
                return Err(Error::Malformed(format!(
                    "{name} has {} entries, expected {}",
                    v.len(),
                    rows * cols
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinitePayload);
            }
            Ok(DMatrix::from_row_slice(rows, cols, &v))
        };
        let model = Self {
            unmixing: mat(r.unmixing, c, d, "unmixing")?,
            mixing: mat(r.mixing, d, c, "mixing")?,
            whitening: mat(r.whitening, c, d, "whitening")?,
            rotation: mat(r.rotation, c, c, "rotation")?,
            mean: DVector::from_vec(mat(r.mean, d, 1, "mean")?.as_slice().to_vec()),
            layer_range: range,
            dim: r.dim,
            iterations: r.iterations,
            converged: r.converged,
            contrast: r.contrast,
            seed: r.seed,
            warnings: r.warnings,
        };
        let dev = linalg::max_gram_deviation(&model.rotation);
        if dev > 1e-6 {
            return Err(Error::OrthonormalityViolation { max_deviation: dev });
        }
        Ok(model)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Serializable form of an [`IcaModel`]; matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcaRecord {
    pub n_components: usize,
    pub d_sub: usize,
    pub layer_start: usize,
    pub layer_count: usize,
    pub dim: usize,
    pub unmixing: Vec<f64>,
    pub mixing: Vec<f64>,
    pub whitening: Vec<f64>,
    pub rotation: Vec<f64>,
    pub mean: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub contrast: Contrast,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Symmetric FastICA with PCA whitening.
///
/// Non-convergence within `max_iter` is not an error: the model comes back
/// with `converged == false`.
pub fn fit_ica(data: &TransitionDataset, opts: &IcaOptions) -> Result<IcaModel> {
    let c = opts.n_components;
    let m = data.len();
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: m });
    }
    if c == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    let max = data.max_rank();
    if c > max {
        return Err(Error::KTooLarge { k: c, max });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mut warnings = Vec::new();
    if m < 2 * c {
        warnings.push(format!("only {m} samples for {c} components (at least {} recommended)", 2 * c));
    }

    let mean = data.mean();
    let mut centred = data.samples().clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let (sigma, v_t) = linalg::right_singular(&centred)?;
    if !(sigma[c - 1] > sigma[0] * 1e-12) {
        return Err(Error::NumericalFailure(format!(
            "centred data has rank below {c}; cannot whiten"
        )));
    }
    let scale = (m as f64).sqrt();
    let basis = v_t.rows(0, c).into_owned();
    let whitening =
        DMatrix::from_diagonal(&DVector::from_iterator(c, sigma[..c].iter().map(|s| scale / s)))
            * &basis;
    let dewhitening = basis.transpose()
        * DMatrix::from_diagonal(&DVector::from_iterator(c, sigma[..c].iter().map(|s| s / scale)));
    let z = &centred * whitening.transpose();

    let mut init = rng::stream(opts.seed, rng::ICA_INIT_STREAM);
    let w0 = DMatrix::from_fn(c, c, |_, _| init.sample::<f64, _>(StandardNormal));
    let mut w = linalg::symmetric_decorrelation(&w0)?;

    let mut converged = false;
    let mut iterations = 0;
    let inv_m = 1.0 / m as f64;
    for it in 1..=opts.max_iter {
        iterations = it;
        let u = &z * w.transpose();
        let mut g = DMatrix::zeros(m, c);
        let mut g_prime_mean = vec![0.0; c];
        for j in 0..c {
            for i in 0..m {
                let (gi, gpi) = opts.contrast.eval(u[(i, j)]);
                g[(i, j)] = gi;
                g_prime_mean[j] += gpi;
            }
            g_prime_mean[j] *= inv_m;
        }
        let mut w_new = g.transpose() * &z * inv_m;
        for j in 0..c {
            let row = w.row(j) * g_prime_mean[j];
            let mut target = w_new.row_mut(j);
            target -= row;
        }
        let w_new = linalg::symmetric_decorrelation(&w_new)?;
        let change = (0..c)
            .map(|j| (1.0 - w_new.row(j).dot(&w.row(j)).abs()).abs())
            .fold(0.0, f64::max);
        w = w_new;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("FastICA did not converge in {} iterations", opts.max_iter));
    }

    let mut unmixing = &w * &whitening;
    let signs = linalg::canonicalize_row_signs(&mut unmixing);
    for (j, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            w.row_mut(j).neg_mut();
        }
    }
    let mixing = &dewhitening * w.transpose();

    Ok(IcaModel {
        unmixing,
        mixing,
        whitening,
        rotation: w,
        mean,
        layer_range: data.layer_range(),
        dim: data.dim(),
        iterations,
        converged,
        contrast: opts.contrast,
        seed: opts.seed,
        warnings,
    })
}

/// Keeps only the `selected` sources of each transition and maps back,
/// re-adding the dataset mean.
pub fn ica_project(
    ts: &TransitionSequence,
    model: &IcaModel,
    selected: &[usize],
) -> Result<TransitionSequence> {
    if ts.d_sub() != model.d_sub() || ts.layer_range() != model.layer_range {
        return Err(Error::ShapeMismatch(format!(
            "sequence covers {:?} ({} values), model covers {:?} ({} values)",
            ts.layer_range(),
            ts.d_sub(),
            model.layer_range,
            model.d_sub()
        )));
    }
    let c = model.n_components();
    if let Some(&bad) = selected.iter().find(|&&i| i >= c) {
        return Err(Error::IndexOutOfRange { index: bad, len: c });
    }
    let mut sources = model.sources(ts.transitions());
    for j in (0..c).filter(|j| !selected.contains(j)) {
        sources.column_mut(j).fill(0.0);
    }
    let mut out = sources * model.mixing.transpose();
    for mut row in out.row_iter_mut() {
        row += model.mean.transpose();
    }
    ts.with_transitions(out)
}

/// Amari index of a square matrix: 0 for a scaled signed permutation,
/// approaching 1 for a maximally mixing one.
pub fn amari_index(p: &DMatrix<f64>) -> Result<f64> {
    let n = p.nrows();
    if n != p.ncols() || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "Amari index needs a non-empty square matrix, got {:?}",
            p.shape()
        )));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let a = p.abs();
    let mut total = 0.0;
    for i in 0..n {
        let row = a.row(i);
        let max = row.max();
        if max <= 0.0 {
            return Err(Error::NumericalFailure("zero row in Amari index".into()));
        }
        total += row.sum() / max - 1.0;
    }
    for j in 0..n {
        let col = a.column(j);
        let max = col.max();
        if max <= 0.0 {
            return Err(Error::NumericalFailure("zero column in Amari index".into()));
        }
        total += col.sum() / max - 1.0;
    }
    Ok(total / (2.0 * n as f64 * (n as f64 - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_sources(m: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 99);
        DMatrix::from_fn(m, 2, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn amari_of_permutations_is_zero() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, -3.0, 2.0, 0.0]);
        assert_eq!(amari_index(&p).unwrap(), 0.0);
        let full = DMatrix::from_element(2, 2, 1.0);
        assert!((amari_index(&full).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn axis_aligned_sources_unmix_to_permutation() {
        // unit-variance uniform sources are already white
        let s = uniform_sources(5000, 3) * 3f64.sqrt();
        let data = TransitionDataset::from_samples(s, LayerRange::full(1), 2, "ica").unwrap();
        let model = fit_ica(
            &data,
            &IcaOptions {
                n_components: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(model.converged);
        assert!(amari_index(&model.unmixing).unwrap() < 0.05);
        assert!(linalg::max_gram_deviation(&model.rotation) < 1e-6);
    }

    #[test]
    fn projection_validates_indices() {
        let s = uniform_sources(400, 5);
        let data = TransitionDataset::from_samples(s.clone(), LayerRange::full(1), 2, "ica").unwrap();
        let model = fit_ica(
            &data,
            &IcaOptions {
                n_components: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let origin = crate::trajectory::LatentCode::zeros(1, 2);
        let ts = TransitionSequence::new(s.rows(0, 3).into_owned(), LayerRange::full(1), origin.clone(), vec![origin; 4])
            .unwrap();
        assert!(matches!(
            ica_project(&ts, &model, &[2]),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        let none = ica_project(&ts, &model, &[]).unwrap();
        for row in none.transitions().row_iter() {
            assert!((row.transpose() - &model.mean).amax() < 1e-15);
        }
    }

    #[test]
    fn rejects_too_many_components() {
        let data = TransitionDataset::from_samples(
            uniform_sources(10, 1),
            LayerRange::full(1),
            2,
            "ica",
        )
        .unwrap();
        assert!(matches!(
            fit_ica(&data, &IcaOptions::default()),
            Err(Error::KTooLarge { k: 6, max: 2 })
        ));
    }

    #[test]
    fn record_round_trip() {
        let data = TransitionDataset::from_samples(
            uniform_sources(300, 2),
            LayerRange::full(1),
            2,
            "ica",
        )
        .unwrap();
        let model = fit_ica(
            &data,
            &IcaOptions {
                n_components: 2,
                contrast: Contrast::Exp,
                ..Default::default()
            },
        )
        .unwrap();
        let back = IcaModel::from_record(model.to_record()).unwrap();
        assert_eq!(back, model);
    }
}
