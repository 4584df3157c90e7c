use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use motion_subspace::analysis::{self, LandmarkTrack};
use motion_subspace::ica::{self, IcaModel, IcaOptions, IcaRecord};
use motion_subspace::io::{self, RawDType};
use motion_subspace::synth::{self, CoefficientDistribution, GroundTruth, SynthSpec};
use motion_subspace::*;
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::report::{ensure_dir, file_stem, parallel_map, parse_list, strings, write_csv};
use crate::*;

/// Attaches the path to I/O failures; other errors keep their type.
fn at<T>(path: &Path, r: motion_subspace::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => {
            log::error!("while processing {}", path.display());
            CliError::Core(other)
        }
    })
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn layer_range(layers: &LayerArgs, preset: Option<Preset>) -> LayerRange {
    LayerRange::new(
        layers.layer_start.unwrap_or(0),
        layers
            .layer_count
            .or(preset.map(Preset::layer_count))
            .unwrap_or(DEFAULT_LAYER_COUNT),
    )
}

fn centering(center: bool) -> Centering {
    if center {
        Centering::MeanSubtracted
    } else {
        Centering::Uncentered
    }
}

fn fine_layers(freeze: bool) -> FineLayers {
    if freeze {
        FineLayers::Freeze
    } else {
        FineLayers::Passthrough
    }
}

fn load_trajectories(paths: &[PathBuf]) -> CliResult<Vec<LatentTrajectory>> {
    parallel_map(paths, |p| at(p, io::load_trajectory(p))).into_iter().collect()
}

fn load_subspaces(paths: &[PathBuf]) -> CliResult<Vec<MotionSubspace>> {
    let subs: Vec<MotionSubspace> = paths
        .iter()
        .map(|p| at(p, io::load_subspace(p)))
        .collect::<CliResult<_>>()?;
    let coherence = max_cross_coherence(&subs);
    if coherence > COHERENCE_WARNING_THRESHOLD {
        warn!("subspaces overlap: max cross-subspace |<u,v>| = {coherence:.3}");
    }
    Ok(subs)
}

fn build_dataset(
    paths: &[PathBuf],
    range: LayerRange,
    label: &str,
) -> CliResult<TransitionDataset> {
    let trajs = load_trajectories(paths)?;
    let seqs = paths
        .iter()
        .zip(&trajs)
        .map(|(p, t)| at(p, compute_transitions(t, range)))
        .collect::<CliResult<Vec<_>>>()?;
    let data = accumulate(&seqs, label)?;
    info!(
        "{} transitions of dimension {} from {} files",
        data.len(),
        data.d_sub(),
        paths.len()
    );
    Ok(data)
}

fn resolve_alphas(text: Option<&str>, n: usize, normalize: bool) -> CliResult<Vec<f64>> {
    let alphas = match text {
        Some(t) => parse_list::<f64>(t, "alphas")?,
        None => vec![1.0; n],
    };
    if alphas.len() != n {
        return Err(CliError::Usage(format!(
            "{} alphas given for {n} subspaces",
            alphas.len()
        )));
    }
    if normalize {
        Ok(normalize_alphas(&alphas)?)
    } else {
        Ok(alphas)
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn fit(a: FitArgs) -> CliResult<Value> {
    let k = a.k.or(a.preset.map(Preset::k)).ok_or_else(|| {
        CliError::Usage("the number of components is required: pass -k or --preset".into())
    })?;
    let range = layer_range(&a.layers, a.preset);
    let data = build_dataset(&a.inputs, range, &a.label)?;
    let model = fit_subspace(&data, k, centering(a.center))?;
    for w in model.warnings() {
        warn!("{w}");
    }
    at(&a.output, io::save_subspace(&a.output, &model))?;

    let ratios = model.explained_variance_ratio();
    let explained: f64 = ratios.iter().sum();
    info!("{k} components explain {:.2}% of transition energy", 100.0 * explained);
    Ok(json!({
        "command": "fit",
        "output": path_str(&a.output),
        "label": a.label,
        "k": k,
        "layer_start": range.start,
        "layer_count": range.count,
        "samples": data.len(),
        "explained_variance": explained,
        "component_ratios": ratios,
        "warnings": model.warnings(),
    }))
}

pub fn decompose(a: DecomposeArgs) -> CliResult<Value> {
    let traj = at(&a.input, io::load_trajectory(&a.input))?;
    let subs = load_subspaces(&a.subspaces)?;
    let alphas = resolve_alphas(a.alphas.as_deref(), subs.len(), a.normalize_alphas)?;
    let fine = fine_layers(a.freeze_fine);
    let (ts, parts) = decompose_transitions(&traj, &subs)?;

    ensure_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    for (j, (part, s)) in parts.iter().zip(&subs).enumerate() {
        let out = integrate_with(part, fine)?
            .with_source_id(format!("{}#{}", traj.source_id, s.motion_label))
            .with_frame_rate(traj.frame_rate);
        let path = a.out_dir.join(format!("part{j}_{}.ltrj", file_stem(&s.motion_label)));
        at(&path, io::save_trajectory(&path, &out))?;
        outputs.push(path_str(&path));
    }

    let recombined = integrate_with(&combine(&parts, &alphas)?, fine)?
        .with_source_id(format!("{}#recombined", traj.source_id))
        .with_frame_rate(traj.frame_rate);
    let recombined_path = a.out_dir.join("recombined.ltrj");
    at(&recombined_path, io::save_trajectory(&recombined_path, &recombined))?;
    let deviation = recombined.max_abs_diff(&traj)?;

    let shares = energy_split(&ts, &parts);
    let mut header = vec!["step".to_string()];
    header.extend(subs.iter().map(|s| s.motion_label.clone()));
    let energy_path = a.out_dir.join("energy.csv");
    write_csv(
        &energy_path,
        &header,
        shares.iter().enumerate().map(|(t, row)| {
            std::iter::once(t.to_string()).chain(row.iter().map(f64::to_string))
        }),
    )?;
    let mean_share: Vec<f64> = (0..subs.len())
        .map(|j| shares.iter().map(|r| r[j]).sum::<f64>() / shares.len().max(1) as f64)
        .collect();

    Ok(json!({
        "command": "decompose",
        "parts": outputs,
        "recombined": path_str(&recombined_path),
        "energy_csv": path_str(&energy_path),
        "alphas": alphas,
        "max_abs_deviation": deviation,
        "mean_energy_share": mean_share,
    }))
}

pub fn transfer(a: TransferArgs) -> CliResult<Value> {
    let source = at(&a.source, io::load_trajectory(&a.source))?;
    let driving = at(&a.driving, io::load_trajectory(&a.driving))?;
    let subs = load_subspaces(&a.subspaces)?;
    let alphas = resolve_alphas(a.alphas.as_deref(), subs.len(), a.normalize_alphas)?;
    let out = motion_subspace::transfer(source.first(), &driving, &subs, &alphas)?
        .with_source_id(format!("{} driven by {}", source.source_id, driving.source_id))
        .with_frame_rate(driving.frame_rate);
    at(&a.output, io::save_trajectory(&a.output, &out))?;
    Ok(json!({
        "command": "transfer",
        "output": path_str(&a.output),
        "frames": out.len(),
        "alphas": alphas,
    }))
}

pub fn ortho(a: OrthoArgs) -> CliResult<Value> {
    let first = at(&a.first, io::load_subspace(&a.first))?;
    let second = at(&a.second, io::load_subspace(&a.second))?;
    let rep = analysis::orthogonality_report(&first, &second, a.top_k)?;
    for w in &rep.warnings {
        warn!("{w}");
    }
    ensure_dir(&a.out_dir)?;

    let mut header = vec!["component".to_string()];
    header.extend((0..rep.top_k).map(|j| j.to_string()));
    let dots_path = a.out_dir.join("dot_matrix.csv");
    write_csv(
        &dots_path,
        &header,
        rep.dot_matrix
            .iter()
            .enumerate()
            .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(f64::to_string))),
    )?;

    let hist_path = a.out_dir.join("histogram.csv");
    write_csv(
        &hist_path,
        &strings(&["bin_low", "bin_high", "count"]),
        rep.counts
            .iter()
            .enumerate()
            .map(|(i, c)| strings(&[rep.bin_edges[i], rep.bin_edges[i + 1], *c as f64])),
    )?;

    let angles_path = a.out_dir.join("angles.csv");
    write_csv(
        &angles_path,
        &strings(&["index", "radians", "degrees"]),
        rep.principal_angles
            .iter()
            .enumerate()
            .map(|(i, r)| vec![i.to_string(), r.to_string(), r.to_degrees().to_string()]),
    )?;

    let degrees: Vec<f64> = rep.principal_angles.iter().map(|r| r.to_degrees()).collect();
    Ok(json!({
        "command": "ortho",
        "top_k": rep.top_k,
        "max_abs_dot": rep.max_abs_dot(),
        "fraction_below_0.05": rep.fraction_below(0.05),
        "min_angle_deg": degrees.first(),
        "max_angle_deg": degrees.last(),
        "dot_matrix_csv": path_str(&dots_path),
        "histogram_csv": path_str(&hist_path),
        "angles_csv": path_str(&angles_path),
        "warnings": rep.warnings,
    }))
}

pub fn variance(a: VarianceArgs) -> CliResult<Value> {
    let range = layer_range(&a.layers, None);
    let data = build_dataset(&a.inputs, range, "variance")?;
    let max_k = a.max_k.unwrap_or_else(|| data.max_rank());
    let rep = analysis::variance_report(&data, max_k, centering(a.center))?;
    write_csv(
        &a.output,
        &strings(&["k", "ratio", "cumulative"]),
        rep.per_component_ratio
            .iter()
            .zip(&rep.cumulative_ratio)
            .enumerate()
            .map(|(i, (r, c))| vec![(i + 1).to_string(), r.to_string(), c.to_string()]),
    )?;
    let thresholds: Vec<Value> = rep
        .k_at_thresholds
        .iter()
        .map(|(t, k)| json!({ "threshold": t, "k": k }))
        .collect();
    Ok(json!({
        "command": "variance",
        "output": path_str(&a.output),
        "samples": data.len(),
        "rank": rep.rank,
        "max_k": max_k,
        "captured": rep.cumulative_ratio.last(),
        "k_at_thresholds": thresholds,
    }))
}

pub fn apm(a: ApmArgs) -> CliResult<Value> {
    let results: Vec<CliResult<f64>> = parallel_map(&a.inputs, |p| {
        let track: LandmarkTrack = at(p, io::load_landmarks(p))?.with_stride(a.stride);
        at(p, analysis::apm(&track))
    });
    let values = results.into_iter().collect::<CliResult<Vec<f64>>>()?;
    if let Some(out) = &a.output {
        write_csv(
            out,
            &strings(&["file", "apm"]),
            a.inputs
                .iter()
                .zip(&values)
                .map(|(p, v)| vec![path_str(p), v.to_string()]),
        )?;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let files: Vec<Value> = a
        .inputs
        .iter()
        .zip(&values)
        .map(|(p, v)| json!({ "path": path_str(p), "apm": v }))
        .collect();
    Ok(json!({ "command": "apm", "stride": a.stride, "apm": mean, "files": files }))
}

pub fn ica(a: IcaArgs) -> CliResult<Value> {
    let range = layer_range(&a.layers, None);
    let data = build_dataset(&a.inputs, range, "ica")?;
    let opts = IcaOptions {
        n_components: a.components,
        max_iter: a.max_iter,
        tol: a.tol,
        contrast: a.contrast.into(),
        seed: a.seed,
    };
    let model = ica::fit_ica(&data, &opts)?;
    if !model.converged {
        warn!("FastICA stopped after {} iterations without converging", model.iterations);
    }
    for w in &model.warnings {
        warn!("{w}");
    }
    let record = serde_json::to_vec_pretty(&model.to_record())?;
    at(&a.output, io::write_atomic(&a.output, &record))?;

    let mut perturbations = Vec::new();
    if let Some(dir) = &a.perturb_dir {
        if a.perturb_steps < 2 {
            return Err(CliError::Usage("--perturb-steps must be at least 2".into()));
        }
        ensure_dir(dir)?;
        let reference = at(&a.inputs[0], io::load_trajectory(&a.inputs[0]))?;
        for j in 0..model.n_components() {
            let sweep = component_sweep(&model, reference.first(), j, a.perturb_steps, a.perturb_scale)?;
            let path = dir.join(format!("component_{j:02}.ltrj"));
            at(&path, io::save_trajectory(&path, &sweep))?;
            perturbations.push(path_str(&path));
        }
        let template = dir.join("annotations.csv");
        write_csv(
            &template,
            &strings(&["component_index", "label"]),
            (0..model.n_components()).map(|j| vec![j.to_string(), String::new()]),
        )?;
    }

    Ok(json!({
        "command": "ica",
        "output": path_str(&a.output),
        "components": model.n_components(),
        "samples": data.len(),
        "iterations": model.iterations,
        "converged": model.converged,
        "perturbations": perturbations,
        "warnings": model.warnings,
    }))
}

/// Reference code moved along mixing column `j` from `-scale` to `+scale`.
fn component_sweep(
    model: &IcaModel,
    reference: &LatentCode,
    j: usize,
    steps: usize,
    scale: f64,
) -> CliResult<LatentTrajectory> {
    let offset = model.layer_range.start * model.dim;
    let direction = model.mixing.column(j);
    let frames = (0..steps)
        .map(|s| {
            let coef = scale * (2.0 * s as f64 / (steps - 1) as f64 - 1.0);
            let mut values = reference.as_slice().to_vec();
            for (i, d) in direction.iter().enumerate() {
                values[offset + i] += coef * d;
            }
            LatentCode::new(reference.n_layers(), reference.dim(), values)
        })
        .collect::<motion_subspace::Result<Vec<_>>>()?;
    Ok(LatentTrajectory::new(frames)?.with_source_id(format!("ica component {j}")))
}

fn annotated_components(path: &Path, label: &str) -> CliResult<Vec<usize>> {
    let bytes = read_file(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut picked = Vec::new();
    for row in reader.deserialize::<(usize, String)>() {
        let (index, name) = row?;
        if name.trim().eq_ignore_ascii_case(label.trim()) {
            picked.push(index);
        }
    }
    Ok(picked)
}

pub fn ica_project(a: IcaProjectArgs) -> CliResult<Value> {
    let record: IcaRecord = serde_json::from_slice(&read_file(&a.model)?)?;
    let model = IcaModel::from_record(record)?;
    let selected = match (&a.select, &a.annotations, &a.label) {
        (Some(s), None, None) => parse_list::<usize>(s, "select")?,
        (None, Some(ann), Some(label)) => annotated_components(ann, label)?,
        _ => {
            return Err(CliError::Usage(
                "pass either --select or both --annotations and --label".into(),
            ))
        }
    };
    if selected.is_empty() {
        return Err(CliError::Usage("no components selected".into()));
    }
    let traj = at(&a.input, io::load_trajectory(&a.input))?;
    let ts = compute_transitions(&traj, model.layer_range)?;
    let kept = ica::ica_project(&ts, &model, &selected)?;
    let out = integrate_with(&kept, fine_layers(a.freeze_fine))?
        .with_source_id(format!("{}#ica", traj.source_id))
        .with_frame_rate(traj.frame_rate);
    at(&a.output, io::save_trajectory(&a.output, &out))?;
    Ok(json!({
        "command": "ica-project",
        "output": path_str(&a.output),
        "selected": selected,
    }))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn truth_json(source_id: &str, weights: &[f64], gt: &GroundTruth) -> Value {
    json!({
        "source_id": source_id,
        "weights": weights,
        "rows": gt.transitions.nrows(),
        "cols": gt.transitions.ncols(),
        "motion_transitions": gt.motion_transitions.iter().map(row_major).collect::<Vec<_>>(),
        "noise": row_major(&gt.noise),
    })
}

pub fn synth(a: SynthArgs) -> CliResult<Value> {
    let dims = parse_list::<usize>(&a.dims, "dims")?;
    let mut spec = SynthSpec::new(a.dim * a.layer_count, dims);
    spec.dim = a.dim;
    spec.fine_layers = a.fine_layers;
    spec.n_trajectories = a.trajectories;
    spec.frames = a.frames;
    spec.noise_sigma = a.noise;
    spec.seed = a.seed;
    if a.heavy_tailed {
        spec.distribution = CoefficientDistribution::HeavyTailed;
    }
    let bases = synth::make_orthogonal_bases(&spec)?;
    let range = spec.layer_range();
    let n_motions = bases.len();

    let gt_dir = a.out_dir.join("ground_truth");
    ensure_dir(&gt_dir)?;
    let mut basis_files = Vec::new();
    for (j, b) in bases.iter().enumerate() {
        let model = MotionSubspace::from_basis(b.clone(), range, spec.dim, format!("motion_{j}"))?;
        let path = gt_dir.join(format!("basis_{j}.msub"));
        at(&path, io::save_subspace(&path, &model))?;
        basis_files.push(format!("ground_truth/basis_{j}.msub"));
    }

    let mut batches = Vec::new();
    if spec.n_trajectories > 0 {
        for j in 0..n_motions {
            let mut w = vec![0.0; n_motions];
            w[j] = 1.0;
            batches.push((format!("motion_{j}"), synth::sample_trajectories(&spec, &bases, &w)?));
        }
    }
    if a.mixed > 0 {
        let mut mixed = spec.clone();
        mixed.n_trajectories = a.mixed;
        let w = vec![1.0; n_motions];
        batches.push(("mixed".to_string(), synth::sample_trajectories(&mixed, &bases, &w)?));
    }

    let mut sets = Vec::new();
    for (name, batch) in &batches {
        let dir = a.out_dir.join(name);
        ensure_dir(&dir)?;
        let jobs: Vec<usize> = (0..batch.trajectories.len()).collect();
        let written: Vec<CliResult<String>> = parallel_map(&jobs, |&i| {
            let stem = format!("traj_{i:04}");
            let id = format!("{name}/{stem}");
            let traj = batch.trajectories[i].clone().with_source_id(id.clone());
            let path = dir.join(format!("{stem}.ltrj"));
            at(&path, io::save_trajectory(&path, &traj))?;
            let truth = truth_json(&id, &batch.weights, &batch.ground_truth[i]);
            let truth_path = dir.join(format!("{stem}.truth.json"));
            at(&truth_path, io::write_atomic(&truth_path, truth.to_string().as_bytes()))?;
            Ok(format!("{id}.ltrj"))
        });
        let files = written.into_iter().collect::<CliResult<Vec<_>>>()?;
        sets.push(json!({ "name": name, "weights": batch.weights, "trajectories": files }));
    }

    let manifest = json!({
        "seed": spec.seed,
        "d_sub": spec.d_sub,
        "dim": spec.dim,
        "layer_start": range.start,
        "layer_count": range.count,
        "fine_layers": spec.fine_layers,
        "n_layers": spec.n_layers(),
        "subspace_dims": spec.subspace_dims,
        "frames": spec.frames,
        "noise_sigma": spec.noise_sigma,
        "distribution": if a.heavy_tailed { "student_t" } else { "gaussian" },
        "bases": basis_files,
        "sets": sets,
        "precision": "trajectory files hold float32 values; truth files hold the float64 transitions before rounding",
    });
    let manifest_path = a.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    at(&manifest_path, io::write_atomic(&manifest_path, text.as_bytes()))?;

    let total: usize = batches.iter().map(|(_, b)| b.trajectories.len()).sum();
    info!("wrote {total} trajectories under {}", a.out_dir.display());
    Ok(json!({
        "command": "synth",
        "out_dir": path_str(&a.out_dir),
        "manifest": path_str(&manifest_path),
        "trajectories": total,
        "d_sub": spec.d_sub,
    }))
}

fn extension(p: &Path) -> String {
    p.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

pub fn convert(a: ConvertArgs) -> CliResult<Value> {
    let kind = if let Some(shape) = &a.shape {
        let s = parse_list::<usize>(shape, "shape")?;
        let [frames, layers, dim] = s[..] else {
            return Err(CliError::Usage("--shape needs FRAMES,LAYERS,DIM".into()));
        };
        let dtype = match a.dtype {
            DType::F32 => RawDType::F32,
            DType::F64 => RawDType::F64,
        };
        let bytes = read_file(&a.input)?;
        let traj = at(&a.input, io::import_raw(&bytes, frames, layers, dim, dtype))?;
        at(&a.output, io::save_trajectory(&a.output, &traj))?;
        "raw-to-trajectory"
    } else {
        match (extension(&a.input).as_str(), extension(&a.output).as_str()) {
            ("csv", "lmrk") => {
                let track = at(&a.input, io::load_landmarks(&a.input))?;
                at(&a.output, io::save_landmarks(&a.output, &track))?;
                "csv-to-landmarks"
            }
            ("lmrk", "csv") => {
                let track = at(&a.input, io::load_landmarks(&a.input))?;
                let text = io::landmarks_to_csv(&track)?;
                at(&a.output, io::write_atomic(&a.output, &text))?;
                "landmarks-to-csv"
            }
            ("ltrj", "ltrj") => {
                let traj = at(&a.input, io::load_trajectory(&a.input))?;
                at(&a.output, io::save_trajectory(&a.output, &traj))?;
                "trajectory"
            }
            (i, o) => {
                return Err(CliError::Usage(format!(
                    "no conversion from .{i} to .{o}; raw dumps need --shape"
                )))
            }
        }
    };
    Ok(json!({
        "command": "convert",
        "kind": kind,
        "input": path_str(&a.input),
        "output": path_str(&a.output),
    }))
}
