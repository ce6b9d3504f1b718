//! Machine-checkable invariant suites.
//!
//! Each check returns the largest error observed over its random trials. The
//! suites are deterministic given the seed.

use std::fmt;

use anyhow::Result;
use bidiff_core::diffusion::{
    brownian_log_density, brownian_score, kernel_log_density, target_score, BrownianSampler, ForwardDiffuser,
};
use bidiff_core::igso3::{igso3_log_density, igso3_score, AngleCdf};
use bidiff_core::irreps::{cg_contract_to1, cg_paths, rep_apply, spherical_harmonics, wigner_d};
use bidiff_core::lie::{pose_distance, random_pose, random_rotation, random_unit_vector, Mat6};
use bidiff_core::stats::{haar_angle_cdf, ks_statistic};
use bidiff_core::{
    DiffusionConfig, IgParams, Igso3Sampler, IrrepsLayout, IrrepsVector, MarginalOracle, PointCloud, Pose, ScoreModel,
    Twist, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::scenario::{toy_demos, toy_grasp, toy_scene, TOY_CONTACT_RADIUS, TOY_LENGTH_SCALE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Lie,
    Irreps,
    Igso3,
    Equivariance,
    All,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Lie => "lie",
            Suite::Irreps => "irreps",
            Suite::Igso3 => "igso3",
            Suite::Equivariance => "equivariance",
            Suite::All => "all",
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Negative control: corrupt the score transport matrix so that the
    /// covariance checks must fail.
    pub perturb_adjoint: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub trials: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(suite: Suite, name: &str, trials: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            suite: suite.to_string(),
            name: name.into(),
            trials,
            max_error,
            tolerance,
            // NaN never passes.
            passed: max_error <= tolerance,
        }
    }
}

/// `[Ad_g]^{-T}`, optionally corrupted.
pub fn score_transport(g: &Pose, perturb: bool) -> Mat6<f64> {
    let mut m = g.adjoint_inv_transpose();
    if perturb {
        m[(3, 0)] += 1e-3;
    }
    m
}

fn max_abs_diff(a: &Twist, b: &Twist) -> f64 {
    (a.to_vector() - b.to_vector()).amax()
}

/// Central differences of `f` along the six right-perturbation directions.
pub fn fd_group_gradient<F: Fn(&Pose) -> Result<f64>>(f: F, g: &Pose, h: f64) -> Result<Twist> {
    let mut v = [0.0; 6];
    for (i, vi) in v.iter_mut().enumerate() {
        let e = Twist::basis(i).scale(h);
        let plus = f(&(*g * Pose::exp(&e)?))?;
        let minus = f(&(*g * Pose::exp(&e.scale(-1.0))?))?;
        *vi = (plus - minus) / (2.0 * h);
    }
    Ok(Twist::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])))
}

fn relative(a: &Twist, b: &Twist) -> f64 {
    (a.to_vector() - b.to_vector()).norm() / b.norm()
}

// Lie algebra

pub fn exp_log_error(rng: &mut impl Rng, n: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..n {
        let mut w = random_unit_vector::<f64, _>(rng);
        w *= rng.random_range(0.0..3.0);
        let v = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let xi = Twist::new(v, w);
        let back = Pose::exp(&xi)?.log()?;
        worst = worst.max(max_abs_diff(&back, &xi));
    }
    Ok(worst)
}

pub fn adjoint_transport_error(rng: &mut impl Rng, n: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..n {
        let g = random_pose::<f64, _>(rng, 1.0);
        let mut w = random_unit_vector::<f64, _>(rng);
        w *= rng.random_range(0.0..1.0);
        let xi = Twist::new(random_unit_vector(rng), w);
        let lhs = g * Pose::exp(&xi)? * g.inverse();
        let rhs = Pose::exp(&xi.transformed(&g.adjoint()))?;
        let (dt, dr) = pose_distance(&lhs, &rhs);
        worst = worst.max(dt).max(dr);
    }
    Ok(worst)
}

/// `<Ad^{-T} s, Ad xi> = <s, xi>`.
pub fn pairing_error(rng: &mut impl Rng, n: usize, perturb: bool) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..n {
        let g = random_pose::<f64, _>(rng, 1.0);
        let s = Twist::new(random_unit_vector(rng), random_unit_vector(rng));
        let xi = Twist::new(random_unit_vector(rng), random_unit_vector(rng));
        let lhs = s
            .transformed(&score_transport(&g, perturb))
            .dot(&xi.transformed(&g.adjoint()));
        worst = worst.max((lhs - s.dot(&xi)).abs());
    }
    Ok(worst)
}

pub fn inverse_error(rng: &mut impl Rng, n: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..n {
        let g = random_pose::<f64, _>(rng, 1.0);
        let (dt, dr) = pose_distance(&(g * g.inverse()), &Pose::identity());
        worst = worst.max(dt).max(dr);
    }
    Ok(worst)
}

// Irreducible representations

pub fn wigner_homomorphism_error(rng: &mut impl Rng, pairs: usize, l_max: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = random_rotation::<f64, _>(rng);
        let b = random_rotation::<f64, _>(rng);
        for l in 0..=l_max {
            let lhs = wigner_d(l, &a.compose(&b))?;
            let rhs = wigner_d(l, &a)? * wigner_d(l, &b)?;
            worst = worst.max((lhs - rhs).amax());
        }
    }
    Ok(worst)
}

/// `D_1(R) = R` in the `(x, y, z)` basis.
pub fn wigner_d1_error(rng: &mut impl Rng, n: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..n {
        let r = random_rotation::<f64, _>(rng);
        let d = wigner_d(1, &r)?;
        let m = r.matrix();
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((d[(i, j)] - m[(i, j)]).abs());
            }
        }
    }
    Ok(worst)
}

pub fn sh_steerability_error(rng: &mut impl Rng, n: usize, l_max: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..n {
        let r = random_rotation::<f64, _>(rng);
        let u = random_unit_vector::<f64, _>(rng);
        for l in 0..=l_max {
            let lhs = spherical_harmonics(l, &r.apply(&u))?;
            let y = spherical_harmonics(l, &u)?;
            let d = wigner_d(l, &r)?;
            for (i, li) in lhs.iter().enumerate() {
                let rhs: f64 = (0..y.len()).map(|j| d[(i, j)] * y[j]).sum();
                worst = worst.max((li - rhs).abs());
            }
        }
    }
    Ok(worst)
}

fn random_irreps(rng: &mut impl Rng, layout: &IrrepsLayout) -> IrrepsVector {
    let coeffs = (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    IrrepsVector::new(layout.clone(), coeffs).expect("matching dimension")
}

/// `cg(D v, D w) = R cg(v, w)` over random layouts, features and path weights.
pub fn cg_equivariance_error(rng: &mut impl Rng, n: usize) -> Result<f64> {
    let layouts = [
        IrrepsLayout::new(vec![(0, 2), (1, 2), (2, 1), (3, 1)])?,
        IrrepsLayout::new(vec![(0, 1), (1, 1), (2, 2)])?,
        IrrepsLayout::new(vec![(1, 1), (3, 2), (4, 1)])?,
    ];
    let mut worst = 0.0f64;
    for _ in 0..n {
        let lv = &layouts[rng.random_range(0..layouts.len())];
        let lw = &layouts[rng.random_range(0..layouts.len())];
        let v = random_irreps(rng, lv);
        let w = random_irreps(rng, lw);
        let weights: Vec<f64> = (0..cg_paths(lv, lw).len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let r = random_rotation::<f64, _>(rng);
        let lhs = cg_contract_to1(&rep_apply(lv, &r, &v)?, &rep_apply(lw, &r, &w)?, &weights)?;
        let rhs = r.apply(&cg_contract_to1(&v, &w, &weights)?);
        worst = worst.max((lhs - rhs).amax());
    }
    Ok(worst)
}

// Isotropic Gaussian on SO(3)

/// `|integral of the angle pdf over [0, pi] - 1|`.
pub fn igso3_normalization_error(eps: f64) -> Result<f64> {
    let params = IgParams::with_default_truncation(eps)?;
    Ok((AngleCdf::new(&params, 20_000)?.total() - 1.0).abs())
}

/// KS statistics of `n` sampled angles against the quadrature CDF and the
/// Haar angle CDF.
pub fn igso3_ks(eps: f64, n: usize, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let params = IgParams::with_default_truncation(eps)?;
    let sampler = Igso3Sampler::new(params.clone())?;
    let mut angles: Vec<f64> = (0..n).map(|_| sampler.sample(rng).angle()).collect();
    let cdf = AngleCdf::new(&params, 20_000)?;
    let ks_series = ks_statistic(&mut angles, |a| cdf.cdf(a));
    let ks_haar = ks_statistic(&mut angles, haar_angle_cdf);
    Ok((ks_series, ks_haar))
}

/// Relative error of `igso3_score` against finite differences, with states
/// drawn from the distribution itself.
pub fn igso3_score_fd_error(rng: &mut impl Rng, n: usize, t: f64) -> Result<f64> {
    let params = IgParams::with_default_truncation(0.5 * t)?;
    let sampler = Igso3Sampler::new(params.clone())?;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let g = Pose::from_rotation(sampler.sample(rng));
        let fd = fd_group_gradient(|h| Ok(igso3_log_density(h.rotation.angle(), &params)?), &g, 1e-5)?;
        let s = igso3_score(&g.rotation, &params)?;
        worst = worst.max((fd.angular - s).norm() / s.norm());
    }
    Ok(worst)
}

pub fn brownian_score_fd_error(rng: &mut impl Rng, n: usize, t: f64) -> Result<f64> {
    let sampler = BrownianSampler::new(t)?;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let g = sampler.sample(rng);
        let fd = fd_group_gradient(|h| Ok(brownian_log_density(h, t)?), &g, 1e-5)?;
        worst = worst.max(relative(&fd, &brownian_score(&g, t)?));
    }
    Ok(worst)
}

/// `target_score` against differences of `ln B_t(T^-1 g0^-1 g T)`, `T` the
/// translation to the diffusion origin.
pub fn target_score_fd_error(rng: &mut impl Rng, n: usize, t: f64) -> Result<f64> {
    let sampler = BrownianSampler::new(t)?;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let g0 = random_pose::<f64, _>(rng, 1.0);
        let p = Vec3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let frame = Pose::from_translation(p);
        let g = g0 * frame * sampler.sample(rng) * frame.inverse();
        let f = |h: &Pose| Ok(brownian_log_density(&(frame.inverse() * g0.inverse() * *h * frame), t)?);
        let fd = fd_group_gradient(f, &g, 1e-5)?;
        worst = worst.max(relative(&fd, &target_score(&g, &g0, &p, t)?));
    }
    Ok(worst)
}

// Equivariance on the toy problem

pub struct Toy {
    pub scene: PointCloud,
    pub grasp: PointCloud,
    pub demos: Vec<Pose>,
    pub cfg: DiffusionConfig,
}

impl Toy {
    pub fn new(t: f64) -> Result<Self> {
        Ok(Self {
            scene: toy_scene(),
            grasp: toy_grasp(),
            demos: toy_demos(),
            cfg: DiffusionConfig::new(t, TOY_CONTACT_RADIUS, TOY_LENGTH_SCALE)?,
        })
    }

    /// A forward-diffused pose of a random demonstration.
    pub fn diffused(&self, rng: &mut impl Rng) -> Result<(usize, Pose)> {
        let k = rng.random_range(0..self.demos.len());
        let d = ForwardDiffuser::new(&self.demos[k], &self.scene, &self.grasp, &self.cfg)?;
        Ok((k, d.sample(rng).g_t))
    }

    pub fn oracle(&self, demos: &[Pose], scene: &PointCloud, grasp: &PointCloud) -> Result<MarginalOracle> {
        Ok(MarginalOracle::new(
            demos,
            scene,
            grasp,
            self.cfg.contact_radius,
            self.cfg.length_scale,
        )?)
    }
}

/// Largest change of `kernel_log_density` under the joint left transform
/// `(dg g, dg g0, dg O_s)` and the joint right transform
/// `(g dg^-1, g0 dg^-1, dg O_e)`.
pub fn kernel_equivariance_errors(rng: &mut impl Rng, n: usize) -> Result<(f64, f64)> {
    let toy = Toy::new(0.1)?;
    let (mut left, mut right) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let (k, g) = toy.diffused(rng)?;
        let g0 = toy.demos[k];
        let dg = random_pose::<f64, _>(rng, 0.3);
        let (scene, grasp, cfg) = (&toy.scene, &toy.grasp, &toy.cfg);
        let base = kernel_log_density(&g, &g0, scene, grasp, cfg)?;
        let l = kernel_log_density(&(dg * g), &(dg * g0), &scene.transform(&dg), grasp, cfg)?;
        let inv = dg.inverse();
        let r = kernel_log_density(&(g * inv), &(g0 * inv), scene, &grasp.transform(&dg), cfg)?;
        left = left.max((l - base).abs());
        right = right.max((r - base).abs());
    }
    Ok((left, right))
}

/// Oracle score: `(left invariance, right covariance)` errors.
pub fn oracle_covariance_errors(rng: &mut impl Rng, n: usize, perturb: bool) -> Result<(f64, f64)> {
    let toy = Toy::new(0.1)?;
    let t = toy.cfg.t;
    let base_oracle = toy.oracle(&toy.demos, &toy.scene, &toy.grasp)?;
    let (mut left, mut right) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let (_, g) = toy.diffused(rng)?;
        let dg = random_pose::<f64, _>(rng, 0.3);
        let s = base_oracle.score(&g, t)?;
        let demos_l: Vec<Pose> = toy.demos.iter().map(|d| dg * *d).collect();
        let sl = toy
            .oracle(&demos_l, &toy.scene.transform(&dg), &toy.grasp)?
            .score(&(dg * g), t)?;
        left = left.max(max_abs_diff(&sl, &s));
        let inv = dg.inverse();
        let demos_r: Vec<Pose> = toy.demos.iter().map(|d| *d * inv).collect();
        let sr = toy
            .oracle(&demos_r, &toy.scene, &toy.grasp.transform(&dg))?
            .score(&(g * inv), t)?;
        right = right.max(max_abs_diff(&sr, &s.transformed(&score_transport(&dg, perturb))));
    }
    Ok((left, right))
}

fn random_colored_cloud(rng: &mut impl Rng, n: usize, spread: f64) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            )
        })
        .collect();
    let colors = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    PointCloud::with_colors(pts, colors).expect("matching lengths")
}

/// Score model: `(left invariance, right covariance, largest orbital change)`.
/// The last value shows that the right transform really moves weight between
/// the orbital and spin terms.
pub fn model_equivariance_errors(rng: &mut impl Rng, n: usize, perturb: bool) -> Result<(f64, f64, f64)> {
    let length_scale = 0.5;
    let t = 0.3;
    let model = ScoreModel::seeded(0.6, 6, rng.random())?;
    let (mut left, mut right, mut orbital_shift) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let scene = random_colored_cloud(rng, 40, 0.6);
        let grasp = random_colored_cloud(rng, 30, 0.3);
        let g = random_pose::<f64, _>(rng, 0.2);
        let dg = random_pose::<f64, _>(rng, 0.5);
        let prepared = model.prepare(&grasp)?;
        let b = model.score(&prepared, &g, &scene, t, length_scale)?;
        let bl = model.score(&prepared, &(dg * g), &scene.transform(&dg), t, length_scale)?;
        left = left.max(max_abs_diff(&bl.score, &b.score));
        let moved = model.prepare(&grasp.transform(&dg))?;
        let br = model.score(&moved, &(g * dg.inverse()), &scene, t, length_scale)?;
        let expected = b.score.transformed(&score_transport(&dg, perturb));
        right = right.max(max_abs_diff(&br.score, &expected));
        orbital_shift = orbital_shift.max((br.orbital - b.orbital).norm());
    }
    Ok((left, right, orbital_shift))
}

pub fn run_suite(suite: Suite, opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    if suite == Suite::All {
        let mut out = Vec::new();
        for s in [Suite::Lie, Suite::Irreps, Suite::Igso3, Suite::Equivariance] {
            out.extend(run_suite(s, opts)?);
        }
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rng = &mut rng;
    let p = opts.perturb_adjoint;
    let c = |name: &str, trials: usize, err: f64, tol: f64| CheckResult::new(suite, name, trials, err, tol);
    Ok(match suite {
        Suite::Lie => vec![
            c("exp_log_round_trip", 1000, exp_log_error(rng, 1000)?, 1e-9),
            c("adjoint_transport", 1000, adjoint_transport_error(rng, 1000)?, 1e-9),
            c("score_twist_pairing", 1000, pairing_error(rng, 1000, p)?, 1e-9),
            c("inverse", 1000, inverse_error(rng, 1000)?, 1e-12),
        ],
        Suite::Irreps => vec![
            c(
                "wigner_homomorphism_l4",
                200,
                wigner_homomorphism_error(rng, 200, 4)?,
                1e-9,
            ),
            c("wigner_d1_is_rotation", 200, wigner_d1_error(rng, 200)?, 1e-12),
            c("sh_steerability_l3", 100, sh_steerability_error(rng, 100, 3)?, 1e-9),
            c("cg_to_type1_equivariance", 100, cg_equivariance_error(rng, 100)?, 1e-9),
        ],
        Suite::Igso3 => {
            let mut v = Vec::new();
            for eps in [0.05, 0.5, 2.0] {
                v.push(c(
                    &format!("normalization_eps_{eps}"),
                    1,
                    igso3_normalization_error(eps)?,
                    1e-5,
                ));
            }
            for eps in [0.1, 0.5, 2.0] {
                let (ks, _) = igso3_ks(eps, 100_000, rng)?;
                v.push(c(&format!("sampler_ks_eps_{eps}"), 100_000, ks, 0.01));
            }
            for t in [0.05, 0.5, 1.0] {
                v.push(c(
                    &format!("igso3_score_fd_t_{t}"),
                    100,
                    igso3_score_fd_error(rng, 100, t)?,
                    1e-4,
                ));
            }
            v
        }
        Suite::Equivariance => {
            let mut v = Vec::new();
            for t in [0.05, 0.5, 1.0] {
                v.push(c(
                    &format!("brownian_score_fd_t_{t}"),
                    100,
                    brownian_score_fd_error(rng, 100, t)?,
                    1e-4,
                ));
                v.push(c(
                    &format!("target_score_fd_t_{t}"),
                    100,
                    target_score_fd_error(rng, 100, t)?,
                    1e-4,
                ));
            }
            let (l, r) = kernel_equivariance_errors(rng, 100)?;
            v.push(c("kernel_left_invariance", 100, l, 1e-9));
            v.push(c("kernel_right_invariance", 100, r, 1e-9));
            let (l, r) = oracle_covariance_errors(rng, 50, p)?;
            v.push(c("oracle_score_left_invariance", 50, l, 1e-8));
            v.push(c("oracle_score_right_covariance", 50, r, 1e-8));
            let (l, r, _) = model_equivariance_errors(rng, 50, p)?;
            v.push(c("model_score_left_invariance", 50, l, 1e-8));
            v.push(c("model_score_right_covariance", 50, r, 1e-8));
            v
        }
        Suite::All => unreachable!(),
    })
}
