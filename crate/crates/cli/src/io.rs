//! Point-cloud and pose file formats.
//!
//! Point clouds are CSV (`x,y,z` or `x,y,z,r,g,b` per line, `#` comments) or
//! JSON (`{"points": [[x, y, z], ...], "colors": [[r, g, b], ...]}`), chosen
//! by file extension. Pose files are JSON objects with a `provenance` header
//! and a `poses` array of records carrying `pos: [x, y, z]` and
//! `quat: [w, x, y, z]` plus command-specific fields.

use std::fs;
use std::path::{Path, PathBuf};

use bidiff_core::lie::Rotation;
use bidiff_core::{PointCloud, Pose, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{fmt_f64, to_json};

/// Quaternions whose norm is further than this from 1 are rejected.
pub const QUAT_REJECT_TOLERANCE: f64 = 1e-3;
/// Quaternions whose norm is further than this from 1 are renormalized with a warning.
pub const QUAT_WARN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: line {line}: {message}")]
    Line { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{path}: pose {index}: quaternion norm {norm} is not within {QUAT_REJECT_TOLERANCE} of 1")]
    NonUnitQuaternion { path: PathBuf, index: usize, norm: f64 },
    #[error("{path}: unsupported extension (expected .csv or .json)")]
    Extension { path: PathBuf },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

#[derive(Serialize, Deserialize)]
struct CloudJson {
    points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    colors: Option<Vec<[f64; 3]>>,
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud, FormatError> {
    match extension(path).as_deref() {
        Some("csv") => parse_csv_cloud(path, &read_text(path)?),
        Some("json") => {
            let text = read_text(path)?;
            let c: CloudJson = serde_json::from_str(&text).map_err(|e| FormatError::Line {
                path: path.to_path_buf(),
                line: e.line() as u64,
                message: e.to_string(),
            })?;
            let pts = c.points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
            match c.colors {
                Some(colors) => PointCloud::with_colors(pts, colors).map_err(|e| FormatError::File {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                }),
                None => Ok(PointCloud::new(pts)),
            }
        }
        _ => Err(FormatError::Extension {
            path: path.to_path_buf(),
        }),
    }
}

fn parse_csv_cloud(path: &Path, text: &str) -> Result<PointCloud, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let line_err = |line: u64, message: String| FormatError::Line {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut with_colors = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            line_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != 3 && record.len() != 6 {
            return Err(line_err(
                line,
                format!("expected 3 or 6 fields, found {}", record.len()),
            ));
        }
        let mut v = [0.0; 6];
        for (k, field) in record.iter().enumerate() {
            v[k] = field
                .parse::<f64>()
                .map_err(|e| line_err(line, format!("field {}: {field:?}: {e}", k + 1)))?;
        }
        let has = record.len() == 6;
        match with_colors {
            None => with_colors = Some(has),
            Some(prev) if prev != has => {
                return Err(line_err(line, "mixes lines with and without colors".into()));
            }
            _ => {}
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
        if has {
            colors.push([v[3], v[4], v[5]]);
        }
    }
    if with_colors == Some(true) {
        PointCloud::with_colors(points, colors).map_err(|e| FormatError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    } else {
        Ok(PointCloud::new(points))
    }
}

pub fn write_point_cloud(path: &Path, pc: &PointCloud) -> Result<(), FormatError> {
    match extension(path).as_deref() {
        Some("csv") => {
            let mut out = String::new();
            for (i, p) in pc.positions().iter().enumerate() {
                let mut fields: Vec<String> = p.iter().map(|&x| fmt_f64(x)).collect();
                if let Some(c) = pc.color(i) {
                    fields.extend(c.iter().map(|&x| fmt_f64(x)));
                }
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            write_text(path, &out)
        }
        Some("json") => {
            let c = CloudJson {
                points: pc.positions().iter().map(|p| [p.x, p.y, p.z]).collect(),
                colors: pc.colors().map(|c| c.to_vec()),
            };
            write_text(path, &to_json(&c).expect("serializable"))
        }
        _ => Err(FormatError::Extension {
            path: path.to_path_buf(),
        }),
    }
}

/// Position and `(w, x, y, z)` quaternion of one pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub pos: [f64; 3],
    pub quat: [f64; 4],
}

impl From<&Pose> for PoseJson {
    fn from(g: &Pose) -> Self {
        let t = g.translation;
        Self {
            pos: [t.x, t.y, t.z],
            quat: g.rotation.quaternion(),
        }
    }
}

/// Where and how an output was produced. Contains no timestamps so that
/// outputs are reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: "se3-diffuse".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: bidiff_core::VERSION.into(),
            command: command.into(),
            seed,
            config,
        }
    }
}

#[derive(Serialize)]
pub struct PoseFile<'a, R: Serialize> {
    pub provenance: &'a Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<&'a serde_json::Value>,
    pub poses: &'a [R],
}

pub fn write_pose_file<R: Serialize>(
    path: &Path,
    provenance: &Provenance,
    summary: Option<&serde_json::Value>,
    poses: &[R],
) -> Result<(), FormatError> {
    let file = PoseFile {
        provenance,
        summary,
        poses,
    };
    write_text(path, &to_json(&file).expect("serializable"))
}

/// Plain pose list with a provenance header.
pub fn write_poses(path: &Path, provenance: &Provenance, poses: &[Pose]) -> Result<(), FormatError> {
    let records: Vec<PoseJson> = poses.iter().map(PoseJson::from).collect();
    write_pose_file(path, provenance, None, &records)
}

#[derive(Deserialize)]
struct PoseFileIn {
    poses: Vec<PoseJson>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosesRead {
    pub poses: Vec<Pose>,
    /// One message per renormalized quaternion.
    pub warnings: Vec<String>,
}

pub fn read_poses(path: &Path) -> Result<PosesRead, FormatError> {
    let text = read_text(path)?;
    let file: PoseFileIn = serde_json::from_str(&text).map_err(|e| FormatError::Line {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let mut poses = Vec::with_capacity(file.poses.len());
    let mut warnings = Vec::new();
    for (index, rec) in file.poses.iter().enumerate() {
        let [w, x, y, z] = rec.quat;
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > QUAT_REJECT_TOLERANCE {
            return Err(FormatError::NonUnitQuaternion {
                path: path.to_path_buf(),
                index,
                norm,
            });
        }
        if (norm - 1.0).abs() > QUAT_WARN_TOLERANCE {
            let msg = format!("{}: pose {index}: quaternion norm {norm} renormalized", path.display());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let r = Rotation::from_quaternion(w / norm, x / norm, y / norm, z / norm).map_err(|e| FormatError::File {
            path: path.to_path_buf(),
            message: format!("pose {index}: {e}"),
        })?;
        if rec.pos.iter().any(|c| !c.is_finite()) {
            return Err(FormatError::File {
                path: path.to_path_buf(),
                message: format!("pose {index}: non-finite position"),
            });
        }
        poses.push(Pose::new(Vec3::new(rec.pos[0], rec.pos[1], rec.pos[2]), r));
    }
    Ok(PosesRead { poses, warnings })
}
