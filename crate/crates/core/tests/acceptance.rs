//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use motion_subspace::analysis::{
    apm, orthogonality_report, principal_angles, variance_report, LandmarkTrack,
};
use motion_subspace::ica::{amari_index, fit_ica, IcaOptions};
use motion_subspace::io;
use motion_subspace::synth::{
    make_orthogonal_bases, sample_trajectories, CoefficientDistribution, SynthBatch, SynthSpec,
};
use motion_subspace::{
    accumulate, combine, compute_transitions, decompose_transitions, fit_subspace, integrate,
    project_transition, transfer, Centering, Error, LatentTrajectory, MotionSubspace,
    SubspaceParts, TransitionDataset, TransitionSequence,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// 512-dim motion slice: 8 layers of width 64, plus 2 untouched layers.
fn spec_512(dims: Vec<usize>, noise: f64, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::new(512, dims);
    spec.dim = 64;
    spec.fine_layers = 2;
    spec.n_trajectories = 100;
    spec.frames = 20;
    spec.noise_sigma = noise;
    spec.seed = seed;
    spec
}

fn fit_batch(batch: &SynthBatch, label: &str, k: usize) -> MotionSubspace {
    let seqs: Vec<TransitionSequence> = batch
        .trajectories
        .iter()
        .map(|t| compute_transitions(t, batch_range(t)).unwrap())
        .collect();
    let data = accumulate(&seqs, label).unwrap();
    fit_subspace(&data, k, Centering::Uncentered).unwrap()
}

fn batch_range(t: &LatentTrajectory) -> motion_subspace::LayerRange {
    motion_subspace::LayerRange::new(0, t.n_layers() - 2)
}

fn pure_subspaces(spec: &SynthSpec, k: usize) -> (Vec<DMatrix<f64>>, Vec<MotionSubspace>) {
    let bases = make_orthogonal_bases(spec).unwrap();
    let n = bases.len();
    let fitted = (0..n)
        .map(|j| {
            let mut w = vec![0.0; n];
            w[j] = 1.0;
            let batch = sample_trajectories(spec, &bases, &w).unwrap();
            fit_batch(&batch, &format!("motion{j}"), k)
        })
        .collect();
    (bases, fitted)
}

fn subspace_recovery() -> Outcome {
    let start = Instant::now();
    let spec = spec_512(vec![8, 8], 0.01, 11);
    let (bases, fitted) = pure_subspaces(&spec, 8);
    let elapsed = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for (b, s) in bases.iter().zip(&fitted) {
        let angles = principal_angles(b, s.components()).map_err(|e| e.to_string())?;
        worst = worst.max(angles.iter().copied().fold(0.0, f64::max));
        // independent route: sine of the largest angle from the projection residual
        let sine = common::max_sine(b, s.components());
        check(
            (sine.asin() - angles[7]).abs() < 1e-9,
            format!("angle routes disagree: {} vs {}", sine.asin(), angles[7]),
        )?;
    }
    let worst_deg = worst.to_degrees();
    check(worst_deg <= 2.0, format!("max principal angle {worst_deg:.4} deg > 2 deg"))?;
    check(elapsed <= 10.0, format!("runtime {elapsed:.2}s > 10s"))?;
    Ok(format!("max angle {worst_deg:.4} deg, {elapsed:.2}s"))
}

fn decompose_recombine_identity() -> Outcome {
    let spec = spec_512(vec![8, 8], 0.0, 12);
    let (bases, fitted) = pure_subspaces(&spec, 8);
    let mut mixed_spec = spec.clone();
    mixed_spec.n_trajectories = 40;
    let mixed = sample_trajectories(&mixed_spec, &bases, &[1.0, 1.0]).unwrap();
    let mut worst: f64 = 0.0;
    for traj in &mixed.trajectories {
        let (_, parts) = decompose_transitions(traj, &fitted).map_err(|e| e.to_string())?;
        let rebuilt = integrate(&combine(&parts, &[1.0, 1.0]).unwrap()).unwrap();
        worst = worst.max(rebuilt.max_abs_diff(traj).unwrap());
    }
    check(worst <= 1e-8, format!("max abs deviation {worst:e} > 1e-8"))?;
    Ok(format!("max abs deviation {worst:.3e} over 40 trajectories"))
}

fn selective_transfer() -> Outcome {
    let spec = spec_512(vec![8, 8], 0.0, 13);
    let (bases, fitted) = pure_subspaces(&spec, 8);
    let mut mixed_spec = spec.clone();
    mixed_spec.n_trajectories = 40;
    let mixed = sample_trajectories(&mixed_spec, &bases, &[1.0, 1.0]).unwrap();
    let d_sub = spec.d_sub;
    let mut worst: f64 = 0.0;
    for i in 0..mixed.trajectories.len() {
        let driving = &mixed.trajectories[i];
        let source = mixed.trajectories[(i + 1) % mixed.trajectories.len()].first();
        let out = transfer(source, driving, &fitted, &[1.0, 0.0]).map_err(|e| e.to_string())?;
        let expected = common::cumsum_rows(&mixed.ground_truth[i].motion_transitions[0]);
        for t in 0..out.len() {
            let frame = out.frame(t).as_slice();
            for c in 0..d_sub {
                let moved = frame[c] - source.as_slice()[c];
                worst = worst.max((moved - expected[(t, c)]).abs());
            }
            // untouched layers stay at the source
            check(
                frame[d_sub..] == source.as_slice()[d_sub..],
                "fine layers changed during transfer",
            )?;
        }
    }
    check(worst <= 1e-6, format!("max abs error {worst:e} > 1e-6"))?;
    Ok(format!("max abs error {worst:.3e}"))
}

fn orthogonality() -> Outcome {
    let spec = spec_512(vec![24, 24], 0.01, 14);
    let (_, fitted) = pure_subspaces(&spec, 20);
    let rep = orthogonality_report(&fitted[0], &fitted[1], 20).map_err(|e| e.to_string())?;
    let frac = rep.fraction_below(0.05);
    check(rep.counts.iter().sum::<usize>() == 400, "histogram does not hold 400 entries")?;
    check(frac >= 0.95, format!("only {:.1}% of |dot| < 0.05", 100.0 * frac))?;
    Ok(format!(
        "{:.1}% of |dot| < 0.05, max |dot| {:.2e}",
        100.0 * frac,
        rep.max_abs_dot()
    ))
}

fn landmark_cloud(seed: u64, points: usize) -> DMatrix<f64> {
    let mut r = common::rng(seed);
    DMatrix::from_fn(points, 3, |_, _| common::normal(&mut r) * 50.0 + 100.0)
}

fn rotating_track(base: &DMatrix<f64>, frames: usize, step: f64) -> Vec<DMatrix<f64>> {
    (0..frames)
        .map(|t| base * common::axis_angle([0.0, 1.0, 0.0], step * t as f64).transpose())
        .collect()
}

fn apm_closed_form() -> Outcome {
    let base = landmark_cloud(15, 68);
    let step = 0.5f64.to_radians();
    let frames = rotating_track(&base, 121, step);
    let expected = 2.0 * 2f64.sqrt() * (2.5f64.to_radians()).sin();
    let got = apm(&LandmarkTrack::new(frames.clone()).unwrap()).map_err(|e| e.to_string())?;
    let rel = (got - expected).abs() / expected;
    check(rel <= 1e-6, format!("APM {got} vs {expected} (rel {rel:e})"))?;

    let still = apm(&LandmarkTrack::new(vec![base.clone(); 121]).unwrap()).unwrap();
    check(still == 0.0, format!("static APM {still} != 0"))?;

    let g = common::axis_angle([0.3, -1.0, 0.7], 1.1);
    let shift = DMatrix::from_fn(1, 3, |_, c| [5.0, -3.0, 12.0][c]);
    let moved: Vec<DMatrix<f64>> = frames
        .iter()
        .map(|f| {
            let mut m = f * g.transpose();
            for mut row in m.row_iter_mut() {
                row += &shift;
            }
            m
        })
        .collect();
    let moved_apm = apm(&LandmarkTrack::new(moved).unwrap()).unwrap();
    let drift = (moved_apm - got).abs();
    check(drift <= 1e-9, format!("global rigid motion changed APM by {drift:e}"))?;
    Ok(format!("APM {got:.8} (expected {expected:.8}), invariance {drift:.1e}"))
}

fn random_model(r: &mut rand_chacha::ChaCha8Rng, d: usize, k: usize) -> MotionSubspace {
    let rows = common::orthonormal_rows(r, k, d);
    MotionSubspace::from_basis(rows, motion_subspace::LayerRange::full(1), d, "rand").unwrap()
}

fn projection_properties() -> Outcome {
    let mut r = common::rng(16);
    let cases = 1000;
    let mut failures = Vec::new();
    for case in 0..cases {
        let d = r.random_range(2..=48);
        let k = r.random_range(1..=d);
        let s = random_model(&mut r, d, k);
        let d1: Vec<f64> = (0..d).map(|_| common::normal(&mut r) * 3.0).collect();
        let d2: Vec<f64> = (0..d).map(|_| common::normal(&mut r) * 3.0).collect();
        let (a, b) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));

        let p1 = project_transition(&d1, &s).unwrap();
        let pp = project_transition(&p1, &s).unwrap();
        let idem = max_diff(&p1, &pp);
        if idem > 1e-10 {
            failures.push(format!("idempotence case {case}: {idem:e}"));
        }

        let combo: Vec<f64> = d1.iter().zip(&d2).map(|(x, y)| a * x + b * y).collect();
        let p2 = project_transition(&d2, &s).unwrap();
        let lhs = project_transition(&combo, &s).unwrap();
        let rhs: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + b * y).collect();
        let lin = max_diff(&lhs, &rhs);
        if lin > 1e-10 {
            failures.push(format!("linearity case {case}: {lin:e}"));
        }

        if norm(&p1) > norm(&d1) + 1e-12 {
            failures.push(format!("contraction case {case}"));
        }

        let full = random_model(&mut r, d, d);
        let pf = project_transition(&d1, &full).unwrap();
        let gap = (norm(&pf) - norm(&d1)).abs();
        let same = max_diff(&pf, &d1);
        if gap > 1e-9 || same > 1e-9 {
            failures.push(format!("parseval case {case}: norm gap {gap:e}, diff {same:e}"));
        }
    }
    check(
        failures.is_empty(),
        format!("{} failures, first: {}", failures.len(), failures.first().cloned().unwrap_or_default()),
    )?;
    Ok(format!("{cases} cases x 4 properties, 0 failures"))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ica_oracle() -> Outcome {
    let mut r = common::rng(17);
    let m = 20000;
    let sources = DMatrix::from_fn(m, 2, |_, _| r.random_range(-1.0..1.0));
    let mixing = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, -0.4, 1.2]);
    let observed = &sources * mixing.transpose();
    let data = TransitionDataset::from_samples(observed, motion_subspace::LayerRange::full(1), 2, "mix")
        .unwrap();
    let opts = IcaOptions {
        n_components: 2,
        seed: 5,
        ..Default::default()
    };
    let model = fit_ica(&data, &opts).map_err(|e| e.to_string())?;
    let amari = amari_index(&(&model.unmixing * &mixing)).unwrap();
    check(amari < 0.05, format!("Amari index {amari} >= 0.05"))?;
    let again = fit_ica(&data, &opts).unwrap();
    let bits = |m: &motion_subspace::ica::IcaModel| -> Vec<u64> {
        m.unmixing.iter().chain(m.mixing.iter()).map(|v| v.to_bits()).collect()
    };
    check(bits(&model) == bits(&again), "refit with the same seed is not bit-identical")?;
    Ok(format!(
        "Amari index {amari:.4}, {} iterations, bitwise reproducible",
        model.iterations
    ))
}

fn f32_values(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| (common::normal(r) * 10.0) as f32 as f64)
        .collect()
}

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = common::rng(18);
    for i in 0..100 {
        let (t, l, d) = (r.random_range(1..20), r.random_range(1..5), r.random_range(1..16));
        let mut traj = LatentTrajectory::from_flat(t, l, d, &f32_values(&mut r, t * l * d)).unwrap();
        if i % 2 == 0 {
            traj = traj.with_source_id(format!("fixture-{i}")).with_frame_rate(Some(24.0));
        }
        let path = dir.path().join(format!("t{i}.ltrj"));
        io::save_trajectory(&path, &traj).unwrap();
        let back = io::load_trajectory(&path).unwrap();
        check(back == traj, format!("trajectory fixture {i} changed"))?;
        check(
            io::encode_trajectory(&back).unwrap() == std::fs::read(&path).unwrap(),
            format!("trajectory fixture {i} re-encodes differently"),
        )?;

        let dsub = r.random_range(1..40);
        let k = r.random_range(1..=dsub);
        let mut sv: Vec<f64> = (0..k).map(|_| r.random_range(0.0..5.0)).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let model = MotionSubspace::from_parts(SubspaceParts {
            components: common::orthonormal_rows(&mut r, k, dsub),
            singular_values: sv,
            total_energy: r.random_range(30.0..60.0),
            mean_vector: DVector::from_fn(dsub, |_, _| common::normal(&mut r)),
            layer_range: motion_subspace::LayerRange::new(r.random_range(0..3), 1),
            dim: dsub,
            motion_label: format!("m{i}"),
            sample_count: r.random_range(2..5000),
            centering: if i % 3 == 0 { Centering::MeanSubtracted } else { Centering::Uncentered },
            warnings: Vec::new(),
        })
        .unwrap();
        let path = dir.path().join(format!("s{i}.msub"));
        io::save_subspace(&path, &model).unwrap();
        check(io::load_subspace(&path).unwrap() == model, format!("subspace fixture {i} changed"))?;

        let (t, p, dims) = (r.random_range(2..30), r.random_range(3..70), 2 + i % 2);
        let frames = (0..t)
            .map(|_| DMatrix::from_row_slice(p, dims, &f32_values(&mut r, p * dims)))
            .collect();
        let track = LandmarkTrack::new(frames).unwrap();
        let path = dir.path().join(format!("l{i}.lmrk"));
        io::save_landmarks(&path, &track).unwrap();
        check(io::load_landmarks(&path).unwrap() == track, format!("landmark fixture {i} changed"))?;
        let csv = io::landmarks_to_csv(&track).unwrap();
        check(
            io::landmarks_from_csv(&csv).unwrap() == track,
            format!("landmark CSV fixture {i} changed"),
        )?;
    }

    let traj = LatentTrajectory::from_flat(10, 2, 3, &[0.5; 60]).unwrap();
    let good = io::encode_trajectory(&traj).unwrap();
    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"XXXX");
    check(
        matches!(io::decode_trajectory(&bad_magic), Err(Error::BadMagic { .. })),
        "bad magic not detected",
    )?;
    let nine_frames = &good[..good.len() - 6 * 4];
    check(
        matches!(io::decode_trajectory(nine_frames), Err(Error::TruncatedPayload { .. })),
        "truncated trajectory not detected",
    )?;
    let mut nan = good.clone();
    nan[24..28].copy_from_slice(&f32::INFINITY.to_le_bytes());
    check(
        matches!(io::decode_trajectory(&nan), Err(Error::NonFinitePayload)),
        "non-finite payload not detected",
    )?;

    let model = random_model(&mut r, 6, 3);
    let mut bytes = io::encode_subspace(&model).unwrap();
    let header = 8 + 6 * 4;
    for c in 0..6 {
        let at = header + 8 * c;
        let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) * 2.0;
        bytes[at..at + 8].copy_from_slice(&v.to_le_bytes());
    }
    check(
        matches!(io::decode_subspace(&bytes), Err(Error::OrthonormalityViolation { .. })),
        "scaled component row not detected",
    )?;

    let track = LandmarkTrack::new(vec![DMatrix::zeros(4, 3); 3]).unwrap();
    let mut lm = io::encode_landmarks(&track).unwrap();
    lm[16..20].copy_from_slice(&4u32.to_le_bytes());
    check(
        matches!(io::decode_landmarks(&lm), Err(Error::UnsupportedDimensionality(4))),
        "4-D landmarks not rejected",
    )?;

    // every truncation and single-byte flip must come back as a value or an error
    let sub = io::encode_subspace(&model).unwrap();
    let lmk = io::encode_landmarks(&track).unwrap();
    let mut corruptions = 0;
    for blob in [&good, &sub, &lmk] {
        for cut in 0..blob.len() {
            let res = catch_unwind(|| {
                let _ = io::decode_trajectory(&blob[..cut]);
                let _ = io::decode_subspace(&blob[..cut]);
                let _ = io::decode_landmarks(&blob[..cut]);
            });
            check(res.is_ok(), format!("loader panicked on truncation at {cut}"))?;
            corruptions += 1;
        }
        for pos in 0..blob.len() {
            let mut flipped = blob.to_vec();
            flipped[pos] ^= 0xA5;
            let res = catch_unwind(|| {
                let _ = io::decode_trajectory(&flipped);
                let _ = io::decode_subspace(&flipped);
                let _ = io::decode_landmarks(&flipped);
            });
            check(res.is_ok(), format!("loader panicked on flip at {pos}"))?;
            corruptions += 1;
        }
    }
    Ok(format!(
        "300 round trips bit-exact, typed errors for fixtures, {corruptions} corruptions without panic"
    ))
}

fn capture_at(data: &TransitionDataset, fraction: f64) -> (f64, usize) {
    let rank = data.max_rank();
    let k = (fraction * rank as f64).ceil() as usize;
    let rep = variance_report(data, rank, Centering::Uncentered).unwrap();
    (rep.cumulative_ratio[k - 1], k)
}

fn variance_shape() -> Outcome {
    let mut spec = SynthSpec::new(64, vec![16]);
    spec.n_trajectories = 50;
    spec.frames = 20;
    spec.noise_sigma = 0.5;
    spec.seed = 19;
    spec.distribution = CoefficientDistribution::HeavyTailed;
    let bases = make_orthogonal_bases(&spec).unwrap();
    let batch = sample_trajectories(&spec, &bases, &[1.0]).unwrap();
    let seqs: Vec<TransitionSequence> = batch
        .trajectories
        .iter()
        .map(|t| compute_transitions(t, motion_subspace::LayerRange::full(1)).unwrap())
        .collect();
    let data = accumulate(&seqs, "heavy").unwrap();
    let rank = data.max_rank();
    let rep = variance_report(&data, rank, Centering::Uncentered).map_err(|e| e.to_string())?;
    check(
        rep.cumulative_ratio.windows(2).all(|w| w[1] >= w[0]),
        "cumulative ratio decreases",
    )?;
    check(
        rep.per_component_ratio.iter().all(|r| (0.0..=1.0).contains(r)),
        "ratio outside [0, 1]",
    )?;
    let full = *rep.cumulative_ratio.last().unwrap();
    check(full >= 0.999, format!("full-rank capture {full}"))?;
    let (heavy, k) = capture_at(&data, 0.4);
    check(heavy < 0.8, format!("heavy-tailed capture {heavy:.3} at k={k} not below 0.8"))?;
    Ok(format!(
        "monotone, {full:.6} at full rank {rank}, heavy-tailed {:.1}% at k={k}",
        100.0 * heavy
    ))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("subspace recovery", subspace_recovery),
        ("decompose-recombine identity", decompose_recombine_identity),
        ("selective transfer", selective_transfer),
        ("orthogonality report", orthogonality),
        ("APM closed form", apm_closed_form),
        ("projection property suite", projection_properties),
        ("ICA oracle", ica_oracle),
        ("I/O round trips", io_round_trips),
        ("variance curve shape", variance_shape),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
