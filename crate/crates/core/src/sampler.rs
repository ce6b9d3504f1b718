//! Annealed Langevin dynamics on SE(3).
//!
//! One step is `g' = g exp[(alpha / 2) s + sqrt(alpha T) z]` with `z ~ N(0, I6)`
//! drawn linear part first. Scores are physical (linear part per scene unit);
//! the step is taken in dimensionless coordinates, so with length scale `L`
//! the translational increment is `L ((alpha / 2) L s_nu + sqrt(alpha T) z_nu)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{random_rotation, Pose, Twist, Vec3};
use crate::scalar::Scalar;

pub const DEFAULT_K1: f64 = 0.5;
pub const DEFAULT_K2: f64 = 1.0;

/// Linear ramp of diffusion time from `start` to `end` over `steps` steps,
/// both endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment<T: Scalar> {
    pub start: T,
    pub end: T,
    pub steps: usize,
}

/// Materialized per-step diffusion time, step size and temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealSchedule<T: Scalar> {
    pub segments: Vec<Segment<T>>,
    pub eps: T,
    pub k1: T,
    pub k2: T,
    pub t: Vec<T>,
    pub alpha: Vec<T>,
    pub temperature: Vec<T>,
}

impl<T: Scalar> AnnealSchedule<T> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

pub fn build_schedule<T: Scalar>(segments: &[Segment<T>], eps: T, k1: T, k2: T) -> Result<AnnealSchedule<T>> {
    if segments.is_empty() {
        return Err(Error::Empty("schedule segments"));
    }
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "step scale must be positive, got {eps}"
        )));
    }
    let mut t = Vec::new();
    for s in segments {
        if s.steps == 0 {
            return Err(Error::InvalidParameter("segment with zero steps".into()));
        }
        if !(s.start > T::zero()) || !(s.end > T::zero()) || !s.start.is_finite() || !s.end.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "diffusion times must be positive, got {} -> {}",
                s.start, s.end
            )));
        }
        if s.steps == 1 {
            t.push(s.start);
            continue;
        }
        let denom = T::from_usize_lossy(s.steps - 1);
        for i in 0..s.steps {
            t.push(if i == s.steps - 1 {
                s.end
            } else {
                s.start + (s.end - s.start) * T::from_usize_lossy(i) / denom
            });
        }
    }
    let alpha = t.iter().map(|&ti| eps * ti.powf(k1)).collect();
    let temperature = t.iter().map(|&ti| ti.powf(k2)).collect();
    Ok(AnnealSchedule {
        segments: segments.to_vec(),
        eps,
        k1,
        k2,
        t,
        alpha,
        temperature,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// `g exp(xi)` through the SE(3) exponential.
    #[default]
    Exact,
    /// Translation `p + R nu`, quaternion `q (1, omega / 2)` renormalized.
    QuatTrans,
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integrator::Exact => "exact",
            Integrator::QuatTrans => "quat-trans",
        })
    }
}

impl FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Integrator::Exact),
            "quat-trans" => Ok(Integrator::QuatTrans),
            _ => Err(Error::InvalidParameter(format!("unknown integrator {s:?}"))),
        }
    }
}

/// Six standard normals, linear components first.
pub fn draw_noise<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Twist<T> {
    let mut z = [T::zero(); 6];
    z.iter_mut()
        .for_each(|c| *c = T::lit(rng.sample::<f64, _>(StandardNormal)));
    Twist::new(Vec3::new(z[0], z[1], z[2]), Vec3::new(z[3], z[4], z[5]))
}

/// Applies a body-frame increment with the chosen integrator.
pub fn integrate<T: Scalar>(g: &Pose<T>, xi: &Twist<T>, integrator: Integrator) -> Result<Pose<T>> {
    match integrator {
        Integrator::Exact => Ok(*g * Pose::exp(xi)?),
        Integrator::QuatTrans => {
            if !xi.is_finite() {
                return Err(Error::NonFinite("integrate"));
            }
            Ok(Pose::new(
                g.translation + g.rotation.apply(&xi.linear),
                g.rotation.perturb_first_order(&xi.angular),
            ))
        }
    }
}

/// Deterministic part of a step given the noise `z`.
pub fn langevin_increment<T: Scalar>(
    s: &Twist<T>,
    alpha: T,
    temperature: T,
    z: &Twist<T>,
    length_scale: T,
) -> Twist<T> {
    let half = alpha * T::lit(0.5);
    let noise = (alpha * temperature).sqrt();
    let lin = (s.linear * (half * length_scale) + z.linear * noise) * length_scale;
    let ang = s.angular * half + z.angular * noise;
    Twist::new(lin, ang)
}

/// One Langevin step with unit length scale.
pub fn langevin_step<T: Scalar, R: Rng + ?Sized>(
    g: &Pose<T>,
    s: &Twist<T>,
    alpha: T,
    temperature: T,
    rng: &mut R,
    integrator: Integrator,
) -> Result<Pose<T>> {
    let z = draw_noise(rng);
    integrate(g, &langevin_increment(s, alpha, temperature, &z, T::one()), integrator)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiseOptions<T: Scalar> {
    pub integrator: Integrator,
    pub length_scale: T,
    pub keep_trajectory: bool,
}

impl<T: Scalar> Default for DenoiseOptions<T> {
    fn default() -> Self {
        Self {
            integrator: Integrator::Exact,
            length_scale: T::one(),
            keep_trajectory: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainFailure {
    pub step: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainResult<T: Scalar> {
    /// Last pose reached (the pose at which a failure occurred, if any).
    pub final_pose: Pose<T>,
    /// Initial pose followed by one pose per completed step, when requested.
    pub trajectory: Vec<Pose<T>>,
    pub failure: Option<ChainFailure>,
}

/// Generator for chain `index`: the root seed with the chain index as stream.
pub fn chain_rng(root_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(index as u64);
    rng
}

fn run_chain<T: Scalar, F>(
    score_fn: &F,
    init: &Pose<T>,
    schedule: &AnnealSchedule<T>,
    rng: &mut ChaCha8Rng,
    options: &DenoiseOptions<T>,
) -> ChainResult<T>
where
    F: Fn(&Pose<T>, T) -> Result<Twist<T>>,
{
    let mut g = *init;
    let mut trajectory = Vec::new();
    if options.keep_trajectory {
        trajectory.reserve(schedule.len() + 1);
        trajectory.push(g);
    }
    for n in 0..schedule.len() {
        let step = score_fn(&g, schedule.t[n])
            .and_then(|s| {
                if s.is_finite() {
                    Ok(s)
                } else {
                    Err(Error::NonFinite("score function"))
                }
            })
            .and_then(|s| {
                let z = draw_noise(rng);
                let xi = langevin_increment(&s, schedule.alpha[n], schedule.temperature[n], &z, options.length_scale);
                integrate(&g, &xi, options.integrator)
            });
        match step {
            Ok(next) => g = next,
            Err(e) => {
                return ChainResult {
                    final_pose: g,
                    trajectory,
                    failure: Some(ChainFailure {
                        step: n,
                        message: e.to_string(),
                    }),
                }
            }
        }
        if options.keep_trajectory {
            trajectory.push(g);
        }
    }
    ChainResult {
        final_pose: g,
        trajectory,
        failure: None,
    }
}

/// Runs one chain per initial pose in parallel. Chain `i` uses
/// [`chain_rng`]`(root_seed, i)`; results are ordered by chain index.
pub fn run_denoising<T: Scalar, F>(
    score_fn: F,
    inits: &[Pose<T>],
    schedule: &AnnealSchedule<T>,
    root_seed: u64,
    options: &DenoiseOptions<T>,
) -> Vec<ChainResult<T>>
where
    F: Fn(&Pose<T>, T) -> Result<Twist<T>> + Sync,
{
    inits
        .par_iter()
        .enumerate()
        .map(|(i, init)| run_chain(&score_fn, init, schedule, &mut chain_rng(root_seed, i), options))
        .collect()
}

/// Initial poses with translation uniform over the box `[lo, hi]` and
/// Haar-uniform rotation, drawn from one generator in order.
pub fn uniform_initial_poses<T: Scalar, R: Rng + ?Sized>(
    lo: &Vec3<T>,
    hi: &Vec3<T>,
    n: usize,
    rng: &mut R,
) -> Vec<Pose<T>> {
    (0..n)
        .map(|_| {
            let mut p = Vec3::zeros();
            for k in 0..3 {
                let u: f64 = rng.random();
                p[k] = lo[k] + (hi[k] - lo[k]) * T::lit(u);
            }
            Pose::new(p, random_rotation(rng))
        })
        .collect()
}
