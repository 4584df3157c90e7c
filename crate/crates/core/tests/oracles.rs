//! Worked examples with expected values computed from independent
//! constructions (known bases, closed forms, explicit rotations).

mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use motion_subspace::analysis::{
    apm, kabsch_rotation, orthogonality_report, principal_angles, variance_report, LandmarkTrack,
};
use motion_subspace::ica::{fit_ica, ica_project, IcaOptions};
use motion_subspace::io;
use motion_subspace::synth::{make_orthogonal_bases, sample_trajectories, SynthSpec};
use motion_subspace::*;

fn sequence(transitions: DMatrix<f64>, origin: Vec<f64>) -> TransitionSequence {
    let d = origin.len();
    let code = LatentCode::new(1, d, origin).unwrap();
    let n = transitions.nrows() + 1;
    TransitionSequence::new(transitions, LayerRange::full(1), code.clone(), vec![code; n]).unwrap()
}

fn dataset(samples: DMatrix<f64>) -> TransitionDataset {
    let d = samples.ncols();
    TransitionDataset::from_samples(samples, LayerRange::full(1), d, "test").unwrap()
}

/// `n x k` coefficients times basis rows.
fn in_span(r: &mut rand_chacha::ChaCha8Rng, basis: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    common::gaussian_matrix(r, n, basis.nrows()) * basis
}

#[test]
fn fit_recovers_noise_free_basis() {
    let mut r = common::rng(1);
    let truth = common::orthonormal_rows(&mut r, 4, 16);
    let data = dataset(in_span(&mut r, &truth, 60));
    let s = fit_subspace(&data, 4, Centering::Uncentered).unwrap();
    let angles = principal_angles(&truth, s.components()).unwrap();
    assert!(angles.iter().all(|&a| a <= 1e-8), "{angles:?}");
    // coarse acos route agrees at its own precision
    for (a, b) in angles.iter().zip(common::reference_angles(&truth, s.components())) {
        assert!((a - b).abs() < 1e-7);
    }
    assert!(common::max_sine(&truth, s.components()) < 1e-12);
    let ratios = s.explained_variance_ratio();
    assert!((ratios.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn fit_is_bitwise_deterministic() {
    let mut r = common::rng(2);
    let data = dataset(common::gaussian_matrix(&mut r, 50, 12));
    let a = fit_subspace(&data, 5, Centering::Uncentered).unwrap();
    let b = fit_subspace(&data, 5, Centering::Uncentered).unwrap();
    let bits = |s: &MotionSubspace| s.components().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    for i in 0..5 {
        let c = a.component(i);
        let lead = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(lead > 0.0);
    }
    assert!(a.singular_values().windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn projection_separates_orthogonal_motions() {
    let mut r = common::rng(3);
    let both = common::orthonormal_rows(&mut r, 6, 20);
    let pose = both.rows(0, 3).into_owned();
    let expr = both.rows(3, 3).into_owned();
    let p = in_span(&mut r, &pose, 9);
    let e = in_span(&mut r, &expr, 9);
    let ts = sequence(&p + &e, vec![0.0; 20]);
    let pose_model = MotionSubspace::from_basis(pose, LayerRange::full(1), 20, "pose").unwrap();
    let expr_model = MotionSubspace::from_basis(expr, LayerRange::full(1), 20, "expr").unwrap();

    let got = project_sequence(&ts, &pose_model).unwrap();
    assert!((got.transitions() - &p).amax() < 1e-9);
    assert_eq!(got.origin(), ts.origin());

    let inside = sequence(p.clone(), vec![1.0; 20]);
    assert!((project_sequence(&inside, &pose_model).unwrap().transitions() - &p).amax() < 1e-9);

    // pose at 1.5x strength, expression unchanged
    let parts = vec![got, project_sequence(&ts, &expr_model).unwrap()];
    let mixed = combine(&parts, &[1.5, 1.0]).unwrap();
    assert!((mixed.transitions() - (&p * 1.5 + &e)).amax() < 1e-9);
    let identity = combine(&parts, &[1.0, 1.0]).unwrap();
    assert!((identity.transitions() - ts.transitions()).amax() < 1e-9);

    // energy leaking into the other subspace is zero without noise
    for t in 0..9 {
        let d: Vec<f64> = p.row(t).iter().copied().collect();
        let leak = project_transition(&d, &expr_model).unwrap();
        let ratio = leak.iter().map(|v| v * v).sum::<f64>() / p.row(t).norm_squared();
        assert!(ratio <= 1e-12);
    }
}

#[test]
fn decompose_single_subspace_motion() {
    let mut spec = SynthSpec::new(12, vec![3, 3]);
    spec.n_trajectories = 3;
    spec.frames = 8;
    let bases = make_orthogonal_bases(&spec).unwrap();
    let batch = sample_trajectories(&spec, &bases, &[1.0, 0.0]).unwrap();
    let models: Vec<MotionSubspace> = bases
        .iter()
        .map(|b| MotionSubspace::from_basis(b.clone(), LayerRange::full(1), 12, "gt").unwrap())
        .collect();
    for traj in &batch.trajectories {
        let out = decompose(traj, &models).unwrap();
        assert!(out[0].max_abs_diff(traj).unwrap() < 1e-9);
        assert!(out[1].frames().iter().all(|f| {
            f.as_slice()
                .iter()
                .zip(traj.first().as_slice())
                .all(|(a, b)| (a - b).abs() < 1e-9)
        }));
    }
}

#[test]
fn noise_free_decomposition_matches_ground_truth() {
    let mut spec = SynthSpec::new(32, vec![4, 5]);
    spec.dim = 8;
    spec.fine_layers = 1;
    spec.n_trajectories = 30;
    spec.frames = 10;
    spec.seed = 4;
    let bases = make_orthogonal_bases(&spec).unwrap();
    let range = spec.layer_range();
    let fitted: Vec<MotionSubspace> = (0..2)
        .map(|j| {
            let mut w = [0.0, 0.0];
            w[j] = 1.0;
            let batch = sample_trajectories(&spec, &bases, &w).unwrap();
            let seqs: Vec<_> = batch
                .trajectories
                .iter()
                .map(|t| compute_transitions(t, range).unwrap())
                .collect();
            fit_subspace(&accumulate(&seqs, "m").unwrap(), spec.subspace_dims[j], Centering::Uncentered)
                .unwrap()
        })
        .collect();
    let mixed = sample_trajectories(&spec, &bases, &[1.0, 1.0]).unwrap();
    for (traj, gt) in mixed.trajectories.iter().zip(&mixed.ground_truth) {
        let (_, parts) = decompose_transitions(traj, &fitted).unwrap();
        for (p, truth) in parts.iter().zip(&gt.motion_transitions) {
            assert!((p.transitions() - truth).amax() <= 1e-8);
        }
    }
}

#[test]
fn self_reenactment_reproduces_driving() {
    let mut r = common::rng(5);
    let full = common::orthonormal_rows(&mut r, 6, 6);
    let model = MotionSubspace::from_basis(full, LayerRange::full(2), 3, "all").unwrap();
    let vals: Vec<f64> = (0..5 * 6).map(|_| common::normal(&mut r)).collect();
    let driving = LatentTrajectory::from_flat(5, 2, 3, &vals).unwrap();
    let out = transfer(driving.first(), &driving, &[model], &[1.0]).unwrap();
    assert!(out.max_abs_diff(&driving).unwrap() < 1e-9);
}

#[test]
fn transfer_only_first_motion() {
    let mut r = common::rng(6);
    let both = common::orthonormal_rows(&mut r, 4, 10);
    let models: Vec<MotionSubspace> = [0, 2]
        .iter()
        .map(|&s| {
            MotionSubspace::from_basis(both.rows(s, 2).into_owned(), LayerRange::full(1), 10, "m")
                .unwrap()
        })
        .collect();
    let p = in_span(&mut r, &both.rows(0, 2).into_owned(), 7);
    let e = in_span(&mut r, &both.rows(2, 2).into_owned(), 7);
    let w0: Vec<f64> = (0..10).map(|_| common::normal(&mut r)).collect();
    let src: Vec<f64> = (0..10).map(|_| common::normal(&mut r)).collect();
    let frames = common::cumsum_rows(&(&p + &e));
    let flat: Vec<f64> = (0..8)
        .flat_map(|t| (0..10).map(move |c| (t, c)))
        .map(|(t, c)| frames[(t, c)] + w0[c])
        .collect();
    let driving = LatentTrajectory::from_flat(8, 1, 10, &flat).unwrap();
    let source = LatentCode::new(1, 10, src.clone()).unwrap();
    let out = transfer(&source, &driving, &models, &[1.0, 0.0]).unwrap();
    let expected = common::cumsum_rows(&p);
    for t in 0..8 {
        for c in 0..10 {
            let moved = out.frame(t).as_slice()[c] - src[c];
            assert!((moved - expected[(t, c)]).abs() < 1e-9);
        }
    }
}

#[test]
fn kabsch_recovers_known_rotation() {
    let mut r = common::rng(7);
    for _ in 0..20 {
        let axis = [common::normal(&mut r), common::normal(&mut r), common::normal(&mut r)];
        let r0 = common::axis_angle(axis, r.random_range(-3.0..3.0));
        let p = common::gaussian_matrix(&mut r, 12, 3);
        let q = &p * r0.transpose();
        let est = kabsch_rotation(&p, &q).unwrap();
        assert!((&est - &r0).amax() < 1e-9);
        assert!((est.determinant() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn apm_closed_form_per_pair() {
    // |R - I|_F = 2 sqrt(2) sin(theta / 2), checked against the explicit matrix
    let theta = 5f64.to_radians();
    let rot = common::axis_angle([0.0, 1.0, 0.0], theta);
    let direct = (&rot - DMatrix::<f64>::identity(3, 3)).norm();
    let closed = 2.0 * 2f64.sqrt() * (theta / 2.0).sin();
    assert!((direct - closed).abs() < 1e-15);
    assert!((closed - 0.12337).abs() < 5e-6);

    let mut r = common::rng(8);
    let base = common::gaussian_matrix(&mut r, 20, 3);
    let frames: Vec<_> = (0..31)
        .map(|t| &base * common::axis_angle([0.0, 1.0, 0.0], 0.5f64.to_radians() * t as f64).transpose())
        .collect();
    let track = LandmarkTrack::new(frames).unwrap();
    assert_eq!(track.stride, 10);
    assert!((apm(&track).unwrap() - closed).abs() < 1e-10);
}

#[test]
fn shared_basis_vector_gives_one_zero_angle() {
    let mut r = common::rng(9);
    let q = common::orthonormal_rows(&mut r, 5, 9);
    let a_rows = DMatrix::from_rows(&[q.row(0).into_owned(), q.row(1).into_owned(), q.row(2).into_owned()]);
    let b_rows = DMatrix::from_rows(&[q.row(0).into_owned(), q.row(3).into_owned(), q.row(4).into_owned()]);
    let a = MotionSubspace::from_basis(a_rows, LayerRange::full(1), 9, "a").unwrap();
    let b = MotionSubspace::from_basis(b_rows, LayerRange::full(1), 9, "b").unwrap();
    let rep = orthogonality_report(&a, &b, 3).unwrap();
    assert!(rep.principal_angles[0].abs() < 1e-9);
    for ang in &rep.principal_angles[1..] {
        assert!((ang - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }
    assert_eq!(rep.counts.iter().sum::<usize>(), 9);

    let self_rep = orthogonality_report(&a, &a, 20).unwrap();
    assert_eq!(self_rep.top_k, 3);
    assert_eq!(self_rep.warnings.len(), 1);
    for (i, row) in self_rep.dot_matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-12);
        }
    }
}

#[test]
fn isotropic_variance_spreads_evenly() {
    // oracle: eigenvalues of the sample second-moment matrix
    let mut r = common::rng(10);
    let x = common::gaussian_matrix(&mut r, 20000, 8);
    let second_moment = x.transpose() * &x;
    let mut eig: Vec<f64> = second_moment.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();

    let rep = variance_report(&dataset(x), 8, Centering::Uncentered).unwrap();
    for (got, l) in rep.per_component_ratio.iter().zip(&eig) {
        assert!((got - l / total).abs() < 1e-10);
        assert!((got - 0.125).abs() < 0.01);
    }
    assert!((rep.cumulative_ratio[3] - 0.5).abs() < 0.02);
    assert_eq!(rep.k_at_thresholds[3], (0.99, Some(8)));
}

fn two_source_data(seed: u64, m: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut r = common::rng(seed);
    let s = DMatrix::from_fn(m, 2, |_, _| r.random_range(-1.0..1.0));
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 1.0, -0.7, 0.4]);
    let x = &s * a.transpose();
    (s, a, x)
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn ica_selection_isolates_one_source() {
    let (s, a, x) = two_source_data(11, 20000);
    let data = TransitionDataset::from_samples(x.clone(), LayerRange::full(1), 3, "mix").unwrap();
    let model = fit_ica(&data, &IcaOptions { n_components: 2, ..Default::default() }).unwrap();
    assert!(model.converged);
    let ts = sequence(x.rows(0, 2000).into_owned(), vec![0.0; 3]);

    // which recovered component tracks true source 0
    let est = model.sources(&x);
    let c0: Vec<f64> = s.column(0).iter().copied().collect();
    let pick = (0..2)
        .max_by(|&i, &j| {
            let ci = corr(&est.column(i).iter().copied().collect::<Vec<_>>(), &c0).abs();
            let cj = corr(&est.column(j).iter().copied().collect::<Vec<_>>(), &c0).abs();
            ci.total_cmp(&cj)
        })
        .unwrap();
    let out = ica_project(&ts, &model, &[pick]).unwrap();
    let truth = s.view((0, 0), (2000, 1)) * a.column(0).transpose();
    for c in 0..3 {
        let got: Vec<f64> = out.transitions().column(c).iter().copied().collect();
        let want: Vec<f64> = truth.column(c).iter().copied().collect();
        assert!(corr(&got, &want) > 0.99, "column {c}");
    }
}

#[test]
fn ica_full_selection_is_pca_reconstruction() {
    let (_, _, x) = two_source_data(12, 3000);
    let data = TransitionDataset::from_samples(x.clone(), LayerRange::full(1), 3, "mix").unwrap();
    let model = fit_ica(&data, &IcaOptions { n_components: 2, ..Default::default() }).unwrap();
    let mut r = common::rng(13);
    let probe = common::gaussian_matrix(&mut r, 5, 3);
    let ts = sequence(probe.clone(), vec![0.0; 3]);
    let out = ica_project(&ts, &model, &[0, 1]).unwrap();

    // direct whitening round trip: mean + W^+ W (d - mean)
    let w = &model.whitening;
    let pinv = w.clone().pseudo_inverse(1e-12).unwrap();
    let mean: DVector<f64> = model.mean.clone();
    for t in 0..5 {
        let d = probe.row(t).transpose() - &mean;
        let expected = &pinv * (w * d) + &mean;
        let got = out.transitions().row(t).transpose();
        assert!((got - expected).amax() < 1e-6);
    }
}

#[test]
fn synth_bases_are_reproducible() {
    let mut spec = SynthSpec::new(512, vec![8, 8]);
    spec.seed = 7;
    let a = make_orthogonal_bases(&spec).unwrap();
    let b = make_orthogonal_bases(&spec).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let cross = &a[0] * a[1].transpose();
    assert!(cross.amax() <= 1e-12);
}

#[test]
fn pose_dataset_sample_count() {
    let seqs: Vec<TransitionSequence> = (0..100)
        .map(|_| {
            let traj = LatentTrajectory::from_flat(120, 1, 2, &vec![0.0; 240]).unwrap();
            compute_transitions(&traj, LayerRange::full(1)).unwrap()
        })
        .collect();
    assert_eq!(accumulate(&seqs, "pose").unwrap().len(), 11900);
}

#[test]
fn typical_component_counts_fit_and_persist() {
    let mut r = common::rng(14);
    let dir = tempfile::tempdir().unwrap();
    for k in [35, 50, 10] {
        let data = dataset(common::gaussian_matrix(&mut r, 120, 64));
        let s = fit_subspace(&data, k, Centering::Uncentered).unwrap();
        let path = dir.path().join(format!("k{k}.msub"));
        io::save_subspace(&path, &s).unwrap();
        let back = io::load_subspace(&path).unwrap();
        assert_eq!(back.singular_values().len(), k);
        assert_eq!(back, s);
    }
}

#[test]
fn landmark_fixture_shapes_and_csv_bridge() {
    let mut r = common::rng(15);
    let frames: Vec<DMatrix<f64>> = (0..120)
        .map(|_| DMatrix::from_fn(68, 2, |_, _| (common::normal(&mut r) * 100.0) as f32 as f64))
        .collect();
    let track = LandmarkTrack::new(frames).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("face.lmrk");
    io::save_landmarks(&bin, &track).unwrap();
    let loaded = io::load_landmarks(&bin).unwrap();
    assert_eq!((loaded.len(), loaded.n_points()), (120, 68));

    let csv = dir.path().join("face.csv");
    std::fs::write(&csv, io::landmarks_to_csv(&loaded).unwrap()).unwrap();
    let from_csv = io::load_landmarks(&csv).unwrap();
    let bin2 = dir.path().join("again.lmrk");
    io::save_landmarks(&bin2, &from_csv).unwrap();
    assert_eq!(std::fs::read(&bin).unwrap(), std::fs::read(&bin2).unwrap());
}
