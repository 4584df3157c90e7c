//! Python bindings. Matrices cross the boundary as nested lists of floats.

use motion_subspace::analysis::{self, LandmarkTrack};
use motion_subspace::ica::{self, Contrast, IcaModel, IcaOptions};
use motion_subspace::synth::{self, CoefficientDistribution, SynthSpec};
use motion_subspace::{self as ms, io, Centering, Error, FineLayers, LayerRange};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        3 => PyRuntimeError::new_err(e.to_string()),
        4 => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ms::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn fine(freeze: bool) -> FineLayers {
    if freeze {
        FineLayers::Freeze
    } else {
        FineLayers::Passthrough
    }
}

/// A sequence of latent codes, each `n_layers x dim`.
#[pyclass(name = "Trajectory", module = "pymotionsub", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrajectory {
    inner: ms::LatentTrajectory,
}

#[pymethods]
impl PyTrajectory {
    /// `frames[t][layer][i]`.
    #[new]
    fn new(frames: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let codes = frames
            .into_iter()
            .map(|f| {
                let n_layers = f.len();
                let dim = f.first().map_or(0, Vec::len);
                if f.iter().any(|l| l.len() != dim) {
                    return Err(PyValueError::new_err("layers have different widths"));
                }
                ms::LatentCode::new(n_layers, dim, f.concat()).py_err()
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: ms::LatentTrajectory::new(codes).py_err()?,
        })
    }

    #[staticmethod]
    fn from_flat(n_frames: usize, n_layers: usize, dim: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ms::LatentTrajectory::from_flat(n_frames, n_layers, dim, &values).py_err()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_trajectory(path).py_err()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_trajectory(path, &self.inner).py_err()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    fn to_list(&self) -> Vec<Vec<Vec<f64>>> {
        let dim = self.inner.dim();
        self.inner
            .frames()
            .iter()
            .map(|f| f.as_slice().chunks(dim).map(<[f64]>::to_vec).collect())
            .collect()
    }

    /// Transitions over the given layers as a `(T-1) x (count*dim)` list.
    #[pyo3(signature = (layer_start=0, layer_count=10))]
    fn transitions(&self, layer_start: usize, layer_count: usize) -> PyResult<Vec<Vec<f64>>> {
        let ts = ms::compute_transitions(&self.inner, LayerRange::new(layer_start, layer_count))
            .py_err()?;
        Ok(rows(ts.transitions()))
    }

    fn max_abs_diff(&self, other: &PyTrajectory) -> PyResult<f64> {
        self.inner.max_abs_diff(&other.inner).py_err()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(frames={}, n_layers={}, dim={})",
            self.inner.len(),
            self.inner.n_layers(),
            self.inner.dim()
        )
    }
}

fn dataset(
    trajs: &[PyRef<'_, PyTrajectory>],
    range: LayerRange,
    label: &str,
) -> PyResult<ms::TransitionDataset> {
    let seqs = trajs
        .iter()
        .map(|t| ms::compute_transitions(&t.inner, range))
        .collect::<ms::Result<Vec<_>>>()
        .py_err()?;
    ms::accumulate(&seqs, label).py_err()
}

/// A fitted linear motion subspace.
#[pyclass(name = "Subspace", module = "pymotionsub", skip_from_py_object)]
#[derive(Clone)]
pub struct PySubspace {
    inner: ms::MotionSubspace,
}

#[pymethods]
impl PySubspace {
    /// Principal directions of the transitions of `trajectories`.
    #[staticmethod]
    #[pyo3(signature = (trajectories, k, layer_start=0, layer_count=10, center=false, label="motion"))]
    fn fit(
        trajectories: Vec<PyRef<'_, PyTrajectory>>,
        k: usize,
        layer_start: usize,
        layer_count: usize,
        center: bool,
        label: &str,
    ) -> PyResult<Self> {
        let data = dataset(&trajectories, LayerRange::new(layer_start, layer_count), label)?;
        let centering = if center {
            Centering::MeanSubtracted
        } else {
            Centering::Uncentered
        };
        Ok(Self {
            inner: ms::fit_subspace(&data, k, centering).py_err()?,
        })
    }

    /// Subspace spanned by orthonormal `basis` rows.
    #[staticmethod]
    #[pyo3(signature = (basis, layer_start, layer_count, dim, label="motion"))]
    fn from_basis(
        basis: Vec<Vec<f64>>,
        layer_start: usize,
        layer_count: usize,
        dim: usize,
        label: &str,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: ms::MotionSubspace::from_basis(
                matrix(&basis)?,
                LayerRange::new(layer_start, layer_count),
                dim,
                label,
            )
            .py_err()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_subspace(path).py_err()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_subspace(path, &self.inner).py_err()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn d_sub(&self) -> usize {
        self.inner.d_sub()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.motion_label.clone()
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        rows(self.inner.components())
    }

    #[getter]
    fn singular_values(&self) -> Vec<f64> {
        self.inner.singular_values().to_vec()
    }

    fn explained_variance_ratio(&self) -> Vec<f64> {
        self.inner.explained_variance_ratio()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner.warnings().iter().map(ToString::to_string).collect()
    }

    /// Orthogonal projection of one transition vector.
    fn project(&self, transition: Vec<f64>) -> PyResult<Vec<f64>> {
        ms::project_transition(&transition, &self.inner).py_err()
    }

    fn __repr__(&self) -> String {
        format!(
            "Subspace(label={:?}, k={}, d_sub={})",
            self.inner.motion_label,
            self.inner.k(),
            self.inner.d_sub()
        )
    }
}

fn subspaces(items: &[PyRef<'_, PySubspace>]) -> Vec<ms::MotionSubspace> {
    items.iter().map(|s| s.inner.clone()).collect()
}

/// One trajectory per subspace, each integrated from the input's first frame.
#[pyfunction]
#[pyo3(signature = (trajectory, subspaces, freeze_fine=false))]
fn decompose(
    trajectory: &PyTrajectory,
    subspaces: Vec<PyRef<'_, PySubspace>>,
    freeze_fine: bool,
) -> PyResult<Vec<PyTrajectory>> {
    let subs = self::subspaces(&subspaces);
    let (_, parts) = ms::decompose_transitions(&trajectory.inner, &subs).py_err()?;
    parts
        .iter()
        .map(|p| {
            Ok(PyTrajectory {
                inner: ms::integrate_with(p, fine(freeze_fine)).py_err()?,
            })
        })
        .collect()
}

/// Decomposes and recombines with per-subspace strengths.
#[pyfunction]
#[pyo3(signature = (trajectory, subspaces, alphas, normalize=false, freeze_fine=false))]
fn recombine(
    trajectory: &PyTrajectory,
    subspaces: Vec<PyRef<'_, PySubspace>>,
    alphas: Vec<f64>,
    normalize: bool,
    freeze_fine: bool,
) -> PyResult<PyTrajectory> {
    let subs = self::subspaces(&subspaces);
    let alphas = if normalize {
        ms::normalize_alphas(&alphas).py_err()?
    } else {
        alphas
    };
    let (_, parts) = ms::decompose_transitions(&trajectory.inner, &subs).py_err()?;
    let mixed = ms::combine(&parts, &alphas).py_err()?;
    Ok(PyTrajectory {
        inner: ms::integrate_with(&mixed, fine(freeze_fine)).py_err()?,
    })
}

/// Applies the weighted motion of `driving` to the first frame of `source`.
#[pyfunction]
fn transfer(
    source: &PyTrajectory,
    driving: &PyTrajectory,
    subspaces: Vec<PyRef<'_, PySubspace>>,
    alphas: Vec<f64>,
) -> PyResult<PyTrajectory> {
    let subs = self::subspaces(&subspaces);
    Ok(PyTrajectory {
        inner: ms::transfer(source.inner.first(), &driving.inner, &subs, &alphas).py_err()?,
    })
}

#[pyfunction]
fn principal_angles(a: &PySubspace, b: &PySubspace) -> PyResult<Vec<f64>> {
    analysis::principal_angles(a.inner.components(), b.inner.components()).py_err()
}

#[pyfunction]
#[pyo3(signature = (a, b, top_k=analysis::DEFAULT_TOP_K))]
fn orthogonality<'py>(
    py: Python<'py>,
    a: &PySubspace,
    b: &PySubspace,
    top_k: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let rep = analysis::orthogonality_report(&a.inner, &b.inner, top_k).py_err()?;
    let d = PyDict::new(py);
    d.set_item("top_k", rep.top_k)?;
    d.set_item("max_abs_dot", rep.max_abs_dot())?;
    d.set_item("dot_matrix", &rep.dot_matrix)?;
    d.set_item("bin_edges", &rep.bin_edges)?;
    d.set_item("counts", &rep.counts)?;
    d.set_item("principal_angles", &rep.principal_angles)?;
    d.set_item("warnings", &rep.warnings)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (trajectories, max_k=None, layer_start=0, layer_count=10, center=false))]
fn variance_curve<'py>(
    py: Python<'py>,
    trajectories: Vec<PyRef<'_, PyTrajectory>>,
    max_k: Option<usize>,
    layer_start: usize,
    layer_count: usize,
    center: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let data = dataset(&trajectories, LayerRange::new(layer_start, layer_count), "variance")?;
    let centering = if center {
        Centering::MeanSubtracted
    } else {
        Centering::Uncentered
    };
    let rep = analysis::variance_report(&data, max_k.unwrap_or(data.max_rank()), centering)
        .py_err()?;
    let d = PyDict::new(py);
    d.set_item("ratio", &rep.per_component_ratio)?;
    d.set_item("cumulative", &rep.cumulative_ratio)?;
    d.set_item("rank", rep.rank)?;
    d.set_item("k_at_thresholds", &rep.k_at_thresholds)?;
    Ok(d)
}

/// Rotation taking point set `p` onto `q` (rows are points).
#[pyfunction]
fn kabsch(p: Vec<Vec<f64>>, q: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&analysis::kabsch_rotation(&matrix(&p)?, &matrix(&q)?).py_err()?))
}

/// Aggregated pose motion of `frames[t][point][axis]`.
#[pyfunction]
#[pyo3(signature = (frames, stride=analysis::DEFAULT_APM_STRIDE))]
fn apm(frames: Vec<Vec<Vec<f64>>>, stride: usize) -> PyResult<f64> {
    let mats = frames.iter().map(|f| matrix(f)).collect::<PyResult<Vec<_>>>()?;
    let track = LandmarkTrack::new(mats).py_err()?.with_stride(stride);
    analysis::apm(&track).py_err()
}

/// FastICA baseline model.
#[pyclass(name = "IcaModel", module = "pymotionsub")]
pub struct PyIcaModel {
    inner: IcaModel,
}

#[pymethods]
impl PyIcaModel {
    #[staticmethod]
    #[pyo3(signature = (trajectories, n_components=ica::DEFAULT_COMPONENTS, seed=0, contrast="logcosh", layer_start=0, layer_count=10))]
    fn fit(
        trajectories: Vec<PyRef<'_, PyTrajectory>>,
        n_components: usize,
        seed: u64,
        contrast: &str,
        layer_start: usize,
        layer_count: usize,
    ) -> PyResult<Self> {
        let contrast = match contrast {
            "logcosh" => Contrast::LogCosh,
            "exp" => Contrast::Exp,
            other => return Err(PyValueError::new_err(format!("unknown contrast {other:?}"))),
        };
        let data = dataset(&trajectories, LayerRange::new(layer_start, layer_count), "ica")?;
        let opts = IcaOptions {
            n_components,
            seed,
            contrast,
            ..Default::default()
        };
        Ok(Self {
            inner: ica::fit_ica(&data, &opts).py_err()?,
        })
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn mixing(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.mixing)
    }

    /// Keeps the `selected` components of the trajectory's motion.
    #[pyo3(signature = (trajectory, selected, freeze_fine=false))]
    fn project(
        &self,
        trajectory: &PyTrajectory,
        selected: Vec<usize>,
        freeze_fine: bool,
    ) -> PyResult<PyTrajectory> {
        let ts = ms::compute_transitions(&trajectory.inner, self.inner.layer_range).py_err()?;
        let kept = ica::ica_project(&ts, &self.inner, &selected).py_err()?;
        Ok(PyTrajectory {
            inner: ms::integrate_with(&kept, fine(freeze_fine)).py_err()?,
        })
    }
}

/// Synthetic trajectories with known orthogonal motion subspaces.
///
/// Returns `(trajectories, bases)`; `bases[j]` has orthonormal rows.
#[pyfunction]
#[pyo3(signature = (subspace_dims, weights, d_sub, dim=None, n_trajectories=100, frames=20, noise_sigma=0.0, heavy_tailed=false, seed=0))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    subspace_dims: Vec<usize>,
    weights: Vec<f64>,
    d_sub: usize,
    dim: Option<usize>,
    n_trajectories: usize,
    frames: usize,
    noise_sigma: f64,
    heavy_tailed: bool,
    seed: u64,
) -> PyResult<(Vec<PyTrajectory>, Vec<Rows>)> {
    let mut spec = SynthSpec::new(d_sub, subspace_dims);
    spec.dim = dim.unwrap_or(d_sub);
    spec.n_trajectories = n_trajectories;
    spec.frames = frames;
    spec.noise_sigma = noise_sigma;
    spec.seed = seed;
    if heavy_tailed {
        spec.distribution = CoefficientDistribution::HeavyTailed;
    }
    let bases = synth::make_orthogonal_bases(&spec).py_err()?;
    let batch = synth::sample_trajectories(&spec, &bases, &weights).py_err()?;
    Ok((
        batch
            .trajectories
            .into_iter()
            .map(|inner| PyTrajectory { inner })
            .collect(),
        bases.iter().map(rows).collect(),
    ))
}

#[pymodule]
fn pymotionsub(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PySubspace>()?;
    m.add_class::<PyIcaModel>()?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(recombine, m)?)?;
    m.add_function(wrap_pyfunction!(transfer, m)?)?;
    m.add_function(wrap_pyfunction!(principal_angles, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonality, m)?)?;
    m.add_function(wrap_pyfunction!(variance_curve, m)?)?;
    m.add_function(wrap_pyfunction!(kabsch, m)?)?;
    m.add_function(wrap_pyfunction!(apm, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
