//! Test-side constructions that do not go through the code under test.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box-Muller normal draw.
pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(r))
}

/// `k x d` matrix with orthonormal rows via modified Gram-Schmidt, applied twice.
pub fn orthonormal_rows(r: &mut ChaCha8Rng, k: usize, d: usize) -> DMatrix<f64> {
    let mut m = gaussian_matrix(r, k, d);
    for _ in 0..2 {
        for i in 0..k {
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let rj = m.row(j).clone_owned();
                let mut ri = m.row_mut(i);
                ri -= rj * proj;
            }
            let n = m.row(i).norm();
            m.row_mut(i).scale_mut(1.0 / n);
        }
    }
    m
}

/// Rotation by `angle` about the unit `axis` (Rodrigues).
pub fn axis_angle(axis: [f64; 3], angle: f64) -> DMatrix<f64> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            t * x * x + c,
            t * x * y - s * z,
            t * x * z + s * y,
            t * x * y + s * z,
            t * y * y + c,
            t * y * z - s * x,
            t * x * z - s * y,
            t * y * z + s * x,
            t * z * z + c,
        ],
    )
}

/// Principal angles from `acos` of the singular values of `A B^T`, as plain
/// reference values (accurate to about 1e-8 rad near zero).
pub fn reference_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let m = a * b.transpose();
    let mut s: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s.truncate(a.nrows().min(b.nrows()));
    s.into_iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect()
}

/// Sine of the largest principal angle: spectral norm of the residual of
/// `b` after projecting onto the row span of `a`.
pub fn max_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let residual = b - (b * a.transpose()) * a;
    residual
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |m: f64, v| m.max(*v))
}

pub fn cumsum_rows(d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d.nrows() + 1, d.ncols());
    for t in 0..d.nrows() {
        let next = out.row(t) + d.row(t);
        out.row_mut(t + 1).copy_from(&next);
    }
    out
}
