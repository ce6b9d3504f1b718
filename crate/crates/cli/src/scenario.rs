//! Scenario files and the bundled mug-on-hanger toy problem.
//!
//! A scenario is a JSON file naming the scene cloud, grasp cloud, demonstration
//! poses and (optionally) score-model parameters, with paths relative to the
//! scenario file, together with the diffusion configuration, the annealing
//! schedule and the root seed.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use bidiff_core::lie::{Mat3, Rotation};
use bidiff_core::sampler::{build_schedule, Segment, DEFAULT_K1, DEFAULT_K2};
use bidiff_core::{AnnealSchedule, DiffusionConfig, PointCloud, Pose, ScoreModel, Vec3};
use serde::{Deserialize, Serialize};

use crate::format::to_json;
use crate::io::{read_point_cloud, read_poses, write_point_cloud, write_poses, write_text, Provenance};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSpec {
    /// Diffusion time used by `diffuse` when `--t` is not given.
    pub t: f64,
    pub contact_radius: f64,
    pub length_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub segments: Vec<Segment<f64>>,
    pub eps: f64,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_k2")]
    pub k2: f64,
}

fn default_k1() -> f64 {
    DEFAULT_K1
}

fn default_k2() -> f64 {
    DEFAULT_K2
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<AnnealSchedule> {
        Ok(build_schedule(&self.segments, self.eps, self.k1, self.k2)?)
    }
}

/// On-disk form of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scene: PathBuf,
    pub grasp: PathBuf,
    pub demos: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub config: ConfigSpec,
    pub schedule: ScheduleSpec,
    pub seed: u64,
}

/// A loaded scenario with every referenced file parsed.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub scene: PointCloud,
    pub grasp: PointCloud,
    pub demos: Vec<Pose>,
    pub model: Option<ScoreModel>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
        let file: ScenarioFile =
            serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let scene = read_point_cloud(&base.join(&file.scene))?;
        let grasp = read_point_cloud(&base.join(&file.grasp))?;
        let demos = read_poses(&base.join(&file.demos))?.poses;
        let model = match &file.model {
            Some(m) => Some(read_model(&base.join(m))?),
            None => None,
        };
        ensure!(!scene.is_empty(), "{}: scene cloud is empty", path.display());
        ensure!(!grasp.is_empty(), "{}: grasp cloud is empty", path.display());
        ensure!(!demos.is_empty(), "{}: no demonstration poses", path.display());
        DiffusionConfig::new(file.config.t, file.config.contact_radius, file.config.length_scale)
            .with_context(|| format!("{}: config", path.display()))?;
        file.schedule
            .build()
            .with_context(|| format!("{}: schedule", path.display()))?;
        Ok(Self {
            file,
            scene,
            grasp,
            demos,
            model,
        })
    }

    pub fn config(&self) -> DiffusionConfig {
        let c = &self.file.config;
        DiffusionConfig {
            t: c.t,
            contact_radius: c.contact_radius,
            length_scale: c.length_scale,
        }
    }
}

pub fn read_model(path: &Path) -> Result<ScoreModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    let model: ScoreModel = toml::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
    model.validate().with_context(|| format!("model {}", path.display()))?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &ScoreModel) -> Result<()> {
    write_text(path, &toml::to_string(model)?)?;
    Ok(())
}

/// Hook yaw angles (degrees) and heights of the toy rack.
pub const HOOKS: [(f64, f64); 3] = [(0.0, 0.2), (120.0, 0.27), (240.0, 0.34)];
/// Distance along each hook rod at which the handle hangs.
pub const HANG_DISTANCE: f64 = 0.08;
pub const HANDLE_CENTER: [f64; 3] = [0.06, 0.0, 0.0];
pub const HANDLE_RADIUS: f64 = 0.02;
pub const BODY_RADIUS: f64 = 0.04;

fn hook_direction(yaw_deg: f64) -> Vec3 {
    let a = yaw_deg.to_radians();
    Vec3::new(a.cos(), a.sin(), 0.0)
}

/// Rack: a vertical post with three horizontal hooks with upturned tips.
pub fn toy_scene() -> PointCloud {
    let mut pts = Vec::new();
    let mut colors = Vec::new();
    for i in 0..=45 {
        pts.push(Vec3::new(0.0, 0.0, 0.01 * i as f64));
        colors.push([0.5, 0.5, 0.5]);
    }
    for (k, &(yaw, h)) in HOOKS.iter().enumerate() {
        let d = hook_direction(yaw);
        let mut c = [0.2, 0.2, 0.2];
        c[k] = 0.9;
        for i in 1..=12 {
            pts.push(d * (0.01 * i as f64) + Vec3::new(0.0, 0.0, h));
            colors.push(c);
        }
        for i in 1..=3 {
            pts.push(d * 0.12 + Vec3::new(0.0, 0.0, h + 0.01 * i as f64));
            colors.push(c);
        }
    }
    PointCloud::with_colors(pts, colors).expect("matching lengths")
}

/// Mug in its own frame: body rings about the z axis and a handle loop in
/// the xz plane, so the handle opening faces along y.
pub fn toy_grasp() -> PointCloud {
    let mut pts = Vec::new();
    let mut colors = Vec::new();
    for &z in &[-0.04, 0.0, 0.04] {
        for i in 0..24 {
            let a = 2.0 * PI * i as f64 / 24.0;
            pts.push(Vec3::new(BODY_RADIUS * a.cos(), BODY_RADIUS * a.sin(), z));
            colors.push([0.8, 0.3, 0.1]);
        }
    }
    let c = Vec3::from(HANDLE_CENTER);
    for i in 0..16 {
        // Only the outer part of the loop; the inner part is inside the body wall.
        let a = -0.6 * PI + 1.2 * PI * i as f64 / 15.0;
        pts.push(c + Vec3::new(HANDLE_RADIUS * a.cos(), 0.0, HANDLE_RADIUS * a.sin()));
        colors.push([0.1, 0.3, 0.8]);
    }
    PointCloud::with_colors(pts, colors).expect("matching lengths")
}

/// Mug hanging from hook `k`: handle loop threaded on the rod (mug y along the
/// rod), handle pointing up.
pub fn toy_demo(k: usize) -> Pose {
    let (yaw, h) = HOOKS[k];
    let d = hook_direction(yaw);
    let up = Vec3::z();
    let r = Mat3::from_columns(&[up, d, up.cross(&d)]);
    let rotation = Rotation::from_matrix(&r).expect("orthonormal");
    let hole = d * HANG_DISTANCE + Vec3::new(0.0, 0.0, h);
    Pose::new(hole - rotation.apply(&Vec3::from(HANDLE_CENTER)), rotation)
}

pub fn toy_demos() -> Vec<Pose> {
    (0..HOOKS.len()).map(toy_demo).collect()
}

pub const TOY_LENGTH_SCALE: f64 = 0.1;
pub const TOY_CONTACT_RADIUS: f64 = 0.025;

pub fn toy_schedule() -> ScheduleSpec {
    ScheduleSpec {
        segments: vec![
            Segment {
                start: 1.0,
                end: 0.1,
                steps: 200,
            },
            Segment {
                start: 0.1,
                end: 0.01,
                steps: 200,
            },
        ],
        eps: 0.1,
        k1: DEFAULT_K1,
        k2: DEFAULT_K2,
    }
}

pub fn toy_scenario_file(seed: u64) -> ScenarioFile {
    ScenarioFile {
        scene: "scene.csv".into(),
        grasp: "grasp.csv".into(),
        demos: "demos.json".into(),
        model: Some("model.toml".into()),
        config: ConfigSpec {
            t: 0.1,
            contact_radius: TOY_CONTACT_RADIUS,
            length_scale: TOY_LENGTH_SCALE,
        },
        schedule: toy_schedule(),
        seed,
    }
}

/// Writes the toy scenario into `dir` and returns the scenario file path.
pub fn gen_scenario(dir: &Path, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let file = toy_scenario_file(seed);
    write_point_cloud(&dir.join(&file.scene), &toy_scene())?;
    write_point_cloud(&dir.join(&file.grasp), &toy_grasp())?;
    let provenance = Provenance::new("gen-scenario", seed, serde_json::to_value(&file)?);
    write_poses(&dir.join(&file.demos), &provenance, &toy_demos())?;
    let model = ScoreModel::seeded(0.05, 8, seed)?;
    write_model(
        &dir.join(file.model.as_ref().expect("toy scenario has a model")),
        &model,
    )?;
    let path = dir.join("scenario.json");
    write_text(&path, &to_json(&file)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bidiff_core::diffusion::contact_origin_weights;

    #[test]
    fn demos_thread_the_handle_on_the_hook() {
        let scene = toy_scene();
        let grasp = toy_grasp();
        for (k, &(yaw, h)) in HOOKS.iter().enumerate() {
            let g = toy_demo(k);
            let d = hook_direction(yaw);
            assert!((g.rotation.apply(&Vec3::y()) - d).norm() < 1e-12);
            let hole = g.apply(&Vec3::from(HANDLE_CENTER));
            assert!((hole - (d * HANG_DISTANCE + Vec3::new(0.0, 0.0, h))).norm() < 1e-12);
            let w = contact_origin_weights(&grasp, &scene.transform(&g.inverse()), TOY_CONTACT_RADIUS).unwrap();
            let handle_contacts = w[72..].iter().filter(|&&x| x > 0.0).count();
            assert!(handle_contacts >= 8, "hook {k}: {handle_contacts}");
        }
    }

    #[test]
    fn generated_scenario_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = gen_scenario(dir.path(), 5).unwrap();
        let s = Scenario::load(&path).unwrap();
        assert_eq!(s.scene, toy_scene());
        assert_eq!(s.grasp, toy_grasp());
        assert_eq!(s.demos.len(), 3);
        for (a, b) in s.demos.iter().zip(toy_demos()) {
            assert!((a.translation - b.translation).norm() < 1e-15);
        }
        assert_eq!(s.model.unwrap(), ScoreModel::seeded(0.05, 8, 5).unwrap());
        assert_eq!(s.file.seed, 5);
    }
}
