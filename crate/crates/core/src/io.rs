//! Binary file formats for trajectories (`LTRJ`), subspace models (`MSUB`)
//! and landmark tracks (`LMRK`), plus CSV landmarks and raw float imports.
//!
//! Every file starts with a 4-byte magic, a `u16` version and a `u16` flags
//! word, followed by `u32` shape fields. All integers are little-endian and
//! all floats IEEE-754 little-endian. Bit 0 of the flags announces a trailer:
//! a `u32` byte length followed by that many bytes of UTF-8 JSON. Nothing may
//! follow the payload (or trailer). Loaders check the declared sizes against
//! the file length before allocating, and map every corruption to an error.
//!
//! ```text
//! LTRJ  magic ver flags | T n_layers dim            | f32[T*n_layers*dim]  (t, layer, dim)
//! MSUB  magic ver flags | K D layer_start layer_count dim sample_count
//!                       | f64[K*D] f64[K] f64[D] f64 | JSON trailer
//! LMRK  magic ver flags | T P dims                  | f32[T*P*dims]        (t, point, axis)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::LandmarkTrack;
use crate::error::{Error, Result};
use crate::subspace::{Centering, ModelWarning, MotionSubspace, SubspaceParts};
use crate::trajectory::{LatentTrajectory, LayerRange};

pub const TRAJECTORY_MAGIC: [u8; 4] = *b"LTRJ";
pub const SUBSPACE_MAGIC: [u8; 4] = *b"MSUB";
pub const LANDMARK_MAGIC: [u8; 4] = *b"LMRK";
pub const FORMAT_VERSION: u16 = 1;

/// Largest element count any header may declare.
pub const MAX_ELEMENTS: u64 = 1 << 31;

const FLAG_TRAILER: u16 = 1;

/// Fixed-size prefix shared by all formats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHeader {
    pub magic: [u8; 4],
    pub version: u16,
    pub flags: u16,
    pub shape: Vec<u32>,
}

impl FileHeader {
    pub fn byte_len(&self) -> usize {
        8 + 4 * self.shape.len()
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        for s in &self.shape {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::TruncatedPayload {
                expected: n as u64,
                found: self.remaining() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: [u8; 4], n_shape: usize) -> Result<FileHeader> {
        if self.remaining() < 4 {
            return Err(Error::TruncatedPayload {
                expected: 4,
                found: self.remaining() as u64,
            });
        }
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != magic {
            return Err(Error::BadMagic {
                expected: magic,
                found,
            });
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let flags = self.u16()?;
        let shape = (0..n_shape).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        Ok(FileHeader {
            magic,
            version,
            flags,
            shape,
        })
    }

    /// Reserves `count` elements of `width` bytes, failing before allocation
    /// if the file cannot hold them.
    fn block(&mut self, count: u64, width: u64) -> Result<&'a [u8]> {
        if count > MAX_ELEMENTS {
            return Err(Error::SizeLimitExceeded(format!(
                "{count} elements declared (limit {MAX_ELEMENTS})"
            )));
        }
        let need = count * width;
        if (self.remaining() as u64) < need {
            return Err(Error::TruncatedPayload {
                expected: need,
                found: self.remaining() as u64,
            });
        }
        self.take(need as usize)
    }

    fn f32s(&mut self, count: u64) -> Result<Vec<f64>> {
        let block = self.block(count, 4)?;
        let out: Vec<f64> = block
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePayload);
        }
        Ok(out)
    }

    fn f64s(&mut self, count: u64) -> Result<Vec<f64>> {
        let block = self.block(count, 8)?;
        let out: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePayload);
        }
        Ok(out)
    }

    fn trailer<T: for<'de> Deserialize<'de>>(&mut self, flags: u16) -> Result<Option<T>> {
        let value = if flags & FLAG_TRAILER != 0 {
            let len = self.u32()? as usize;
            let raw = self.take(len)?;
            let text = std::str::from_utf8(raw)
                .map_err(|_| Error::Malformed("metadata trailer is not UTF-8".into()))?;
            Some(serde_json::from_str(text)?)
        } else {
            None
        };
        if self.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "{} unexpected bytes after payload",
                self.remaining()
            )));
        }
        Ok(value)
    }
}

fn element_count(dims: &[u64]) -> Result<u64> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::SizeLimitExceeded(format!("shape {dims:?} (limit {MAX_ELEMENTS} elements)")))
}

fn push_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_trailer<T: Serialize>(out: &mut Vec<u8>, meta: &T) -> Result<()> {
    let json = serde_json::to_vec(meta)?;
    out.extend_from_slice(&checked_u32(json.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(&json);
    Ok(())
}

fn checked_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::SizeLimitExceeded(format!("{what} {v} exceeds u32")))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryMeta {
    #[serde(default)]
    source_id: String,
    #[serde(default)]
    frame_rate: Option<f64>,
}

/// Serializes a trajectory. Values are rounded to binary32.
pub fn encode_trajectory(traj: &LatentTrajectory) -> Result<Vec<u8>> {
    let with_meta = !traj.source_id.is_empty() || traj.frame_rate.is_some();
    let header = FileHeader {
        magic: TRAJECTORY_MAGIC,
        version: FORMAT_VERSION,
        flags: if with_meta { FLAG_TRAILER } else { 0 },
        shape: vec![
            checked_u32(traj.len(), "frame count")?,
            checked_u32(traj.n_layers(), "layer count")?,
            checked_u32(traj.dim(), "dim")?,
        ],
    };
    let count = traj.len() * traj.n_layers() * traj.dim();
    if count as u64 > MAX_ELEMENTS {
        return Err(Error::SizeLimitExceeded(format!("{count} elements")));
    }
    let mut out = Vec::with_capacity(header.byte_len() + 4 * count);
    header.write(&mut out);
    for f in traj.frames() {
        for &v in f.as_slice() {
            if !(v as f32).is_finite() {
                return Err(Error::NonFiniteInput("value overflows binary32"));
            }
            push_f32(&mut out, v);
        }
    }
    if with_meta {
        push_trailer(
            &mut out,
            &TrajectoryMeta {
                source_id: traj.source_id.clone(),
                frame_rate: traj.frame_rate,
            },
        )?;
    }
    Ok(out)
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<LatentTrajectory> {
    let mut cur = Cursor::new(bytes);
    let header = cur.header(TRAJECTORY_MAGIC, 3)?;
    let [t, layers, dim] = [header.shape[0], header.shape[1], header.shape[2]].map(u64::from);
    if t == 0 || layers == 0 || dim == 0 {
        return Err(Error::Malformed(format!(
            "trajectory shape {t}x{layers}x{dim} has an empty axis"
        )));
    }
    let values = cur.f32s(element_count(&[t, layers, dim])?)?;
    let meta: Option<TrajectoryMeta> = cur.trailer(header.flags)?;
    let traj = LatentTrajectory::from_flat(t as usize, layers as usize, dim as usize, &values)?;
    Ok(match meta {
        Some(m) => traj.with_source_id(m.source_id).with_frame_rate(m.frame_rate),
        None => traj,
    })
}

pub fn save_trajectory(path: impl AsRef<Path>, traj: &LatentTrajectory) -> Result<()> {
    write_atomic(path.as_ref(), &encode_trajectory(traj)?)
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<LatentTrajectory> {
    decode_trajectory(&fs::read(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct SubspaceMeta {
    motion_label: String,
    #[serde(default)]
    centering: Centering,
    #[serde(default)]
    warnings: Vec<ModelWarning>,
}

pub fn encode_subspace(s: &MotionSubspace) -> Result<Vec<u8>> {
    let range = s.layer_range();
    let header = FileHeader {
        magic: SUBSPACE_MAGIC,
        version: FORMAT_VERSION,
        flags: FLAG_TRAILER,
        shape: vec![
            checked_u32(s.k(), "K")?,
            checked_u32(s.d_sub(), "D_sub")?,
            checked_u32(range.start, "layer_start")?,
            checked_u32(range.count, "layer_count")?,
            checked_u32(s.dim(), "dim")?,
            checked_u32(s.sample_count(), "sample_count")?,
        ],
    };
    let mut out = Vec::with_capacity(header.byte_len() + 8 * (s.k() + 1) * (s.d_sub() + 1));
    header.write(&mut out);
    for row in s.components().row_iter() {
        row.iter().for_each(|&v| push_f64(&mut out, v));
    }
    s.singular_values().iter().for_each(|&v| push_f64(&mut out, v));
    s.mean_vector().iter().for_each(|&v| push_f64(&mut out, v));
    push_f64(&mut out, s.total_energy());
    push_trailer(
        &mut out,
        &SubspaceMeta {
            motion_label: s.motion_label.clone(),
            centering: s.centering(),
            warnings: s.warnings().to_vec(),
        },
    )?;
    Ok(out)
}

pub fn decode_subspace(bytes: &[u8]) -> Result<MotionSubspace> {
    let mut cur = Cursor::new(bytes);
    let header = cur.header(SUBSPACE_MAGIC, 6)?;
    let sh: Vec<u64> = header.shape.iter().map(|&v| u64::from(v)).collect();
    let (k, d, start, count, dim, samples) = (sh[0], sh[1], sh[2], sh[3], sh[4], sh[5]);
    if k == 0 || d == 0 || count == 0 || dim == 0 || count * dim != d {
        return Err(Error::Malformed(format!(
            "subspace header K={k} D={d} layers={count} dim={dim} is inconsistent"
        )));
    }
    if k > d {
        return Err(Error::Malformed(format!("K={k} exceeds D={d}")));
    }
    let components = cur.f64s(element_count(&[k, d])?)?;
    let singular_values = cur.f64s(k)?;
    let mean = cur.f64s(d)?;
    let total_energy = cur.f64s(1)?[0];
    if header.flags & FLAG_TRAILER == 0 {
        return Err(Error::Malformed("subspace file lacks its metadata trailer".into()));
    }
    let meta: SubspaceMeta = cur
        .trailer(header.flags)?
        .ok_or_else(|| Error::Malformed("missing metadata".into()))?;
    let (k, d) = (k as usize, d as usize);
    let parts = SubspaceParts {
        components: DMatrix::from_row_slice(k, d, &components),
        singular_values,
        total_energy,
        mean_vector: DVector::from_vec(mean),
        layer_range: LayerRange::new(start as usize, count as usize),
        dim: dim as usize,
        motion_label: meta.motion_label,
        sample_count: samples as usize,
        centering: meta.centering,
        warnings: meta.warnings,
    };
    MotionSubspace::from_parts(parts).map_err(|e| match e {
        Error::OrthonormalityViolation { .. } => e,
        other => Error::Malformed(other.to_string()),
    })
}

pub fn save_subspace(path: impl AsRef<Path>, s: &MotionSubspace) -> Result<()> {
    write_atomic(path.as_ref(), &encode_subspace(s)?)
}

pub fn load_subspace(path: impl AsRef<Path>) -> Result<MotionSubspace> {
    decode_subspace(&fs::read(path)?)
}

/// Serializes a landmark track. Coordinates are rounded to binary32; the
/// stride is not stored.
pub fn encode_landmarks(track: &LandmarkTrack) -> Result<Vec<u8>> {
    let header = FileHeader {
        magic: LANDMARK_MAGIC,
        version: FORMAT_VERSION,
        flags: 0,
        shape: vec![
            checked_u32(track.len(), "frame count")?,
            checked_u32(track.n_points(), "point count")?,
            checked_u32(track.spatial_dims(), "dims")?,
        ],
    };
    let mut out = Vec::new();
    header.write(&mut out);
    for f in track.frames() {
        for row in f.row_iter() {
            row.iter().for_each(|&v| push_f32(&mut out, v));
        }
    }
    Ok(out)
}

pub fn decode_landmarks(bytes: &[u8]) -> Result<LandmarkTrack> {
    let mut cur = Cursor::new(bytes);
    let header = cur.header(LANDMARK_MAGIC, 3)?;
    let [t, p, dims] = [header.shape[0], header.shape[1], header.shape[2]];
    if dims != 2 && dims != 3 {
        return Err(Error::UnsupportedDimensionality(dims));
    }
    if t == 0 || p == 0 {
        return Err(Error::Malformed(format!("landmark shape {t}x{p} is empty")));
    }
    let values = cur.f32s(element_count(&[t, p, dims].map(u64::from))?)?;
    cur.trailer::<serde_json::Value>(header.flags)?;
    let per_frame = (p * dims) as usize;
    let frames = values
        .chunks_exact(per_frame)
        .map(|c| DMatrix::from_row_slice(p as usize, dims as usize, c))
        .collect();
    LandmarkTrack::new(frames)
}

pub fn save_landmarks(path: impl AsRef<Path>, track: &LandmarkTrack) -> Result<()> {
    write_atomic(path.as_ref(), &encode_landmarks(track)?)
}

/// Loads a binary `LMRK` file, or CSV when the extension is `.csv`.
pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkTrack> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        landmarks_from_csv(&bytes)
    } else {
        decode_landmarks(&bytes)
    }
}

/// Parses `frame,point,x,y[,z]` rows. Frames must be numbered `0..T` and
/// each frame must list points `0..P`; row order is free.
pub fn landmarks_from_csv(bytes: &[u8]) -> Result<LandmarkTrack> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers().map_err(|e| Error::MalformedCsv {
        line: 1,
        message: e.to_string(),
    })?;
    let names: Vec<&str> = headers.iter().collect();
    let dims = match names.as_slice() {
        ["frame", "point", "x", "y"] => 2,
        ["frame", "point", "x", "y", "z"] => 3,
        _ if names.len() > 5 && names[..5] == ["frame", "point", "x", "y", "z"] => {
            return Err(Error::UnsupportedDimensionality((names.len() - 2) as u32))
        }
        _ => {
            return Err(Error::MalformedCsv {
                line: 1,
                message: format!("expected header frame,point,x,y[,z], got {}", names.join(",")),
            })
        }
    };
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::MalformedCsv {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != dims + 2 {
            return Err(Error::MalformedCsv {
                line,
                message: format!("expected {} fields, found {}", dims + 2, rec.len()),
            });
        }
        let index = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::MalformedCsv {
                line,
                message: format!("bad index {s:?}: {e}"),
            })
        };
        let frame = index(&rec[0])?;
        let point = index(&rec[1])?;
        let coords = (2..dims + 2)
            .map(|c| {
                rec[c].parse::<f64>().map_err(|e| Error::MalformedCsv {
                    line,
                    message: format!("bad coordinate {:?}: {e}", &rec[c]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if frame as u64 >= MAX_ELEMENTS || point as u64 >= MAX_ELEMENTS {
            return Err(Error::SizeLimitExceeded(format!("index at line {line}")));
        }
        rows.push((frame, point, coords));
    }
    if rows.is_empty() {
        return Err(Error::MalformedCsv {
            line: 2,
            message: "no landmark rows".into(),
        });
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let mut frames: Vec<Vec<(usize, Vec<f64>)>> = Vec::new();
    for (frame, point, coords) in rows {
        if frame > frames.len() {
            return Err(Error::Malformed(format!("frame {} missing from CSV", frames.len())));
        }
        if frame == frames.len() {
            frames.push(Vec::new());
        }
        frames[frame].push((point, coords));
    }
    let expected = frames[0].len();
    let mut mats = Vec::with_capacity(frames.len());
    for (t, pts) in frames.into_iter().enumerate() {
        if pts.len() != expected {
            return Err(Error::InconsistentPointCount {
                frame: t,
                expected,
                found: pts.len(),
            });
        }
        if let Some((i, _)) = pts.iter().enumerate().find(|(i, (p, _))| p != i) {
            return Err(Error::Malformed(format!(
                "frame {t}: point indices must be 0..{expected}, problem at position {i}"
            )));
        }
        let flat: Vec<f64> = pts.into_iter().flat_map(|(_, c)| c).collect();
        mats.push(DMatrix::from_row_slice(expected, dims, &flat));
    }
    LandmarkTrack::new(mats)
}

/// Writes `frame,point,x,y[,z]` rows; coordinates round-trip exactly.
pub fn landmarks_to_csv(track: &LandmarkTrack) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: &[&str] = if track.spatial_dims() == 3 {
        &["frame", "point", "x", "y", "z"]
    } else {
        &["frame", "point", "x", "y"]
    };
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for (t, f) in track.frames().iter().enumerate() {
        for (p, row) in f.row_iter().enumerate() {
            let mut rec = vec![t.to_string(), p.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Element type of a headerless raw dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDType {
    F32,
    F64,
}

/// Reads a headerless little-endian float dump laid out frame, layer, then
/// dim, as exported by external encoders.
pub fn import_raw(
    bytes: &[u8],
    frames: usize,
    n_layers: usize,
    dim: usize,
    dtype: RawDType,
) -> Result<LatentTrajectory> {
    let count = element_count(&[frames as u64, n_layers as u64, dim as u64])?;
    let mut cur = Cursor::new(bytes);
    let values = match dtype {
        RawDType::F32 => cur.f32s(count)?,
        RawDType::F64 => cur.f64s(count)?,
    };
    if cur.remaining() != 0 {
        return Err(Error::Malformed(format!(
            "raw dump holds {} bytes more than shape {frames}x{n_layers}x{dim}",
            cur.remaining()
        )));
    }
    LatentTrajectory::from_flat(frames, n_layers, dim, &values)
}
