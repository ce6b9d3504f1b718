//! Subcommand implementations. Every command is deterministic given its seed.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use bidiff_core::diffusion::ForwardDiffuser;
use bidiff_core::igso3::AngleCdf;
use bidiff_core::lie::pose_distance;
use bidiff_core::sampler::{run_denoising, uniform_initial_poses, ChainResult, DenoiseOptions};
use bidiff_core::stats::{haar_angle_cdf, histogram, ks_statistic};
use bidiff_core::{IgParams, Igso3Sampler, Integrator, MarginalOracle, Pose, ScoreModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::check::{run_suite, CheckOptions, CheckResult, Suite};
use crate::format::to_json;
use crate::io::{write_pose_file, write_text, PoseJson, Provenance};
use crate::scenario::{read_model, Scenario};

/// Invalid combination of arguments; reported with exit status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Chains ending within these bounds of a demonstration count as hits.
pub const HIT_ROTATION_DEG: f64 = 5.0;
/// Translation hit bound as a fraction of the length scale.
pub const HIT_TRANSLATION_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, Serialize)]
pub struct DiffusedRecord {
    #[serde(flatten)]
    pub pose: PoseJson,
    pub demo: usize,
    pub origin_index: usize,
    /// Diffusion origin in the grasp frame.
    pub origin: [f64; 3],
    /// Displacement applied about the origin, translation in scene units.
    pub delta: PoseJson,
}

/// `n` forward-diffused poses at time `t`; each sample draws its
/// demonstration index, then its origin and displacement, from one generator.
pub fn diffuse(scenario: &Scenario, t: f64, n: usize, seed: u64) -> Result<Vec<DiffusedRecord>> {
    let cfg = scenario.config().with_time(t);
    let diffusers = scenario
        .demos
        .iter()
        .map(|g0| ForwardDiffuser::new(g0, &scenario.scene, &scenario.grasp, &cfg))
        .collect::<bidiff_core::Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let demo = rng.random_range(0..diffusers.len());
            let s = diffusers[demo].sample(&mut rng);
            DiffusedRecord {
                pose: PoseJson::from(&s.g_t),
                demo,
                origin_index: s.origin_index,
                origin: s.origin.into(),
                delta: PoseJson::from(&s.delta),
            }
        })
        .collect())
}

fn scenario_config(scenario_path: &Path, scenario: &Scenario) -> Result<serde_json::Value> {
    Ok(json!({
        "scenario_path": scenario_path.display().to_string(),
        "scenario": serde_json::to_value(&scenario.file)?,
    }))
}

pub fn cmd_diffuse(scenario_path: &Path, t: Option<f64>, n: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let scenario = Scenario::load(scenario_path)?;
    let seed = seed.unwrap_or(scenario.file.seed);
    let t = t.unwrap_or(scenario.file.config.t);
    let records = diffuse(&scenario, t, n, seed)?;
    let mut config = scenario_config(scenario_path, &scenario)?;
    config["t"] = json!(t);
    config["n"] = json!(n);
    let provenance = Provenance::new("diffuse", seed, config);
    write_pose_file(out, &provenance, None, &records)?;
    log::info!("wrote {} diffused poses to {}", records.len(), out.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    /// Exact score of the diffused demonstration mixture.
    Oracle,
    /// Bi-equivariant score model with synthetic descriptor fields.
    Model,
}

#[derive(Clone, Debug)]
pub struct DenoiseArgs {
    pub source: ScoreSource,
    /// Overrides the model named in the scenario.
    pub model: Option<PathBuf>,
    pub chains: usize,
    pub seed: Option<u64>,
    pub integrator: Integrator,
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureRecord {
    pub step: usize,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainRecord {
    #[serde(flatten)]
    pub pose: PoseJson,
    pub chain: usize,
    pub nearest_demo: usize,
    /// Translation distance to the nearest demonstration, scene units.
    pub trans_error: f64,
    pub rot_error_deg: f64,
    pub hit: bool,
    /// Log density of the demonstration mixture at the final time; `null`
    /// when it underflows.
    pub log_density: Option<f64>,
    pub failure: Option<FailureRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DenoiseSummary {
    pub source: ScoreSource,
    pub integrator: Integrator,
    pub chains: usize,
    pub steps: usize,
    pub failures: usize,
    pub hits: usize,
    pub hit_fraction: f64,
    /// Hits per demonstration.
    pub modes_hit: Vec<usize>,
    pub hit_translation: f64,
    pub hit_rotation_deg: f64,
}

#[derive(Clone, Debug)]
pub struct DenoiseOutput {
    pub seed: u64,
    pub records: Vec<ChainRecord>,
    pub summary: DenoiseSummary,
}

/// Distance to every demonstration in units of the hit bounds; the nearest
/// demonstration minimizes the larger of the two ratios.
fn nearest_demo(g: &Pose, demos: &[Pose], length_scale: f64) -> (usize, f64, f64) {
    let tol_t = HIT_TRANSLATION_FRACTION * length_scale;
    demos
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let (dt, dr) = pose_distance(g, d);
            (k, dt, dr.to_degrees())
        })
        .min_by(|a, b| {
            let ka = (a.1 / tol_t).max(a.2 / HIT_ROTATION_DEG);
            let kb = (b.1 / tol_t).max(b.2 / HIT_ROTATION_DEG);
            ka.total_cmp(&kb)
        })
        .expect("at least one demonstration")
}

/// Initial poses: translation uniform over the scene bounding box, Haar
/// rotation, drawn from a stream disjoint from every chain stream.
pub fn initial_poses(scenario: &Scenario, n: usize, seed: u64) -> Vec<Pose> {
    let (lo, hi) = scenario.scene.bounding_box().expect("nonempty scene");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    uniform_initial_poses(&lo, &hi, n, &mut rng)
}

pub fn denoise(scenario: &Scenario, args: &DenoiseArgs) -> Result<DenoiseOutput> {
    let seed = args.seed.unwrap_or(scenario.file.seed);
    let schedule = scenario.file.schedule.build()?;
    let cfg = scenario.config();
    let length_scale = cfg.length_scale;
    let oracle = MarginalOracle::new(
        &scenario.demos,
        &scenario.scene,
        &scenario.grasp,
        cfg.contact_radius,
        length_scale,
    )?;
    let options = DenoiseOptions {
        integrator: args.integrator,
        length_scale,
        keep_trajectory: false,
    };
    let inits = initial_poses(scenario, args.chains, seed);
    let results: Vec<ChainResult<f64>> = match args.source {
        ScoreSource::Oracle => run_denoising(|g: &Pose, t| oracle.score(g, t), &inits, &schedule, seed, &options),
        ScoreSource::Model => {
            let model: ScoreModel =
                match (&args.model, &scenario.model) {
                    (Some(path), _) => read_model(path)?,
                    (None, Some(m)) => m.clone(),
                    (None, None) => return Err(UsageError(
                        "score source `model` needs descriptor parameters: pass --model or name one in the scenario"
                            .into(),
                    )
                    .into()),
                };
            let prepared = model.prepare(&scenario.grasp)?;
            let scene = &scenario.scene;
            run_denoising(
                |g: &Pose, t| Ok(model.score(&prepared, g, scene, t, length_scale)?.score),
                &inits,
                &schedule,
                seed,
                &options,
            )
        }
    };
    let t_final = *schedule.t.last().expect("nonempty schedule");
    let mut modes_hit = vec![0; scenario.demos.len()];
    let mut records = Vec::with_capacity(results.len());
    for (chain, r) in results.iter().enumerate() {
        let g = r.final_pose;
        let (nearest, trans_error, rot_error_deg) = nearest_demo(&g, &scenario.demos, length_scale);
        let hit = r.failure.is_none()
            && trans_error <= HIT_TRANSLATION_FRACTION * length_scale
            && rot_error_deg <= HIT_ROTATION_DEG;
        if hit {
            modes_hit[nearest] += 1;
        }
        if let Some(f) = &r.failure {
            log::warn!("chain {chain} failed at step {}: {}", f.step, f.message);
        }
        let log_density = oracle.log_density(&g, t_final).ok().filter(|v| v.is_finite());
        records.push(ChainRecord {
            pose: PoseJson::from(&g),
            chain,
            nearest_demo: nearest,
            trans_error,
            rot_error_deg,
            hit,
            log_density,
            failure: r.failure.as_ref().map(|f| FailureRecord {
                step: f.step,
                message: f.message.clone(),
            }),
        });
    }
    let hits = modes_hit.iter().sum();
    let summary = DenoiseSummary {
        source: args.source,
        integrator: args.integrator,
        chains: records.len(),
        steps: schedule.len(),
        failures: records.iter().filter(|r| r.failure.is_some()).count(),
        hits,
        hit_fraction: if records.is_empty() {
            0.0
        } else {
            hits as f64 / records.len() as f64
        },
        modes_hit,
        hit_translation: HIT_TRANSLATION_FRACTION * length_scale,
        hit_rotation_deg: HIT_ROTATION_DEG,
    };
    Ok(DenoiseOutput { seed, records, summary })
}

pub fn cmd_denoise(scenario_path: &Path, args: &DenoiseArgs, out: &Path) -> Result<DenoiseSummary> {
    let scenario = Scenario::load(scenario_path)?;
    let output = denoise(&scenario, args)?;
    let mut config = scenario_config(scenario_path, &scenario)?;
    config["source"] = serde_json::to_value(args.source)?;
    config["model"] = json!(args.model.as_ref().map(|p| p.display().to_string()));
    config["chains"] = json!(args.chains);
    config["integrator"] = json!(args.integrator.to_string());
    let provenance = Provenance::new("denoise", output.seed, config);
    let summary = serde_json::to_value(&output.summary)?;
    write_pose_file(out, &provenance, Some(&summary), &output.records)?;
    log::info!(
        "{} of {} chains within {} deg / {} of a demonstration",
        output.summary.hits,
        output.summary.chains,
        HIT_ROTATION_DEG,
        output.summary.hit_translation
    );
    Ok(output.summary)
}

#[derive(Serialize)]
struct CheckReport<'a> {
    provenance: &'a Provenance,
    passed: bool,
    checks: &'a [CheckResult],
}

/// Runs `suite`, writes the report to `out` (or stdout) and returns whether
/// every check passed.
pub fn cmd_check(suite: Suite, opts: &CheckOptions, out: Option<&Path>) -> Result<bool> {
    let checks = run_suite(suite, opts)?;
    let passed = checks.iter().all(|c| c.passed);
    for c in checks.iter().filter(|c| !c.passed) {
        log::error!(
            "{}/{}: max error {:e} exceeds {:e}",
            c.suite,
            c.name,
            c.max_error,
            c.tolerance
        );
    }
    let config = json!({"suite": suite.to_string(), "perturb_adjoint": opts.perturb_adjoint});
    let provenance = Provenance::new("check", opts.seed, config);
    let text = to_json(&CheckReport {
        provenance: &provenance,
        passed,
        checks: &checks,
    })?;
    match out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(passed)
}

pub const HISTOGRAM_BINS: usize = 36;

#[derive(Clone, Debug, Serialize)]
pub struct Igso3Summary {
    pub eps: f64,
    pub n: usize,
    /// KS statistic of the sampled angles against the quadrature CDF.
    pub ks_series: f64,
    /// KS statistic against the Haar angle marginal.
    pub ks_haar: f64,
    pub histogram_lo: f64,
    pub histogram_hi: f64,
    pub angle_histogram: Vec<usize>,
}

#[derive(Serialize)]
struct Igso3File<'a> {
    provenance: &'a Provenance,
    summary: &'a Igso3Summary,
    samples: &'a [[f64; 4]],
}

pub fn sample_igso3(eps: f64, n: usize, seed: u64) -> Result<(Igso3Summary, Vec<[f64; 4]>)> {
    let params = IgParams::with_default_truncation(eps)?;
    let sampler = Igso3Sampler::new(params.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotations: Vec<_> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    let mut angles: Vec<f64> = rotations.iter().map(|r| r.angle()).collect();
    let angle_histogram = histogram(&angles, 0.0, PI, HISTOGRAM_BINS);
    let (ks_series, ks_haar) = if n == 0 {
        (0.0, 0.0)
    } else {
        let cdf = AngleCdf::new(&params, 20_000)?;
        (
            ks_statistic(&mut angles, |a| cdf.cdf(a)),
            ks_statistic(&mut angles, haar_angle_cdf),
        )
    };
    let summary = Igso3Summary {
        eps,
        n,
        ks_series,
        ks_haar,
        histogram_lo: 0.0,
        histogram_hi: PI,
        angle_histogram,
    };
    Ok((summary, rotations.iter().map(|r| r.quaternion()).collect()))
}

pub fn cmd_sample_igso3(eps: f64, n: usize, seed: u64, out: &Path) -> Result<Igso3Summary> {
    ensure!(
        eps > 0.0 && eps.is_finite(),
        UsageError(format!("--eps must be positive, got {eps}"))
    );
    let (summary, samples) = sample_igso3(eps, n, seed)?;
    let provenance = Provenance::new("sample-igso3", seed, json!({"eps": eps, "n": n}));
    let text = to_json(&Igso3File {
        provenance: &provenance,
        summary: &summary,
        samples: &samples,
    })?;
    write_text(out, &text).with_context(|| format!("writing {}", out.display()))?;
    log::info!(
        "KS vs series CDF {:.3e}, vs Haar {:.3e}",
        summary.ks_series,
        summary.ks_haar
    );
    Ok(summary)
}

pub fn cmd_gen_scenario(dir: &Path, seed: u64) -> Result<PathBuf> {
    let path = crate::scenario::gen_scenario(dir, seed)?;
    log::info!("wrote scenario {}", path.display());
    Ok(path)
}
