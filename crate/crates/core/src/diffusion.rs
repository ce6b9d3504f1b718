//! Brownian diffusion on SE(3) with contact-based diffusion origins.
//!
//! The kernel `B_t(h) = N(p_h; 0, t I) IG(R_h; t / 2)` lives on dimensionless
//! poses: translations are divided by the length scale `L` before it is
//! evaluated. Scores returned from this module are derivatives with respect to
//! right perturbations `g exp(xi)` of the physical pose, so their linear part
//! carries a factor `1 / L`.
//!
//! A diffusion origin `p` (a grasp-frame point) enters through the frame
//! `T(p)`: the diffused pose is `g0 T(p) dg T(p)^-1`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::igso3::{igso3_log_density, igso3_score, IgParams, Igso3Sampler};
use crate::lie::{Pose, Twist, Vec3};
use crate::pointcloud::{PointCloud, RadiusIndex};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionConfig<T: Scalar> {
    /// Diffusion time (dimensionless).
    pub t: T,
    /// Contact radius in scene units.
    pub contact_radius: T,
    /// Scene units per dimensionless unit.
    pub length_scale: T,
}

impl<T: Scalar> DiffusionConfig<T> {
    pub fn new(t: T, contact_radius: T, length_scale: T) -> Result<Self> {
        let cfg = Self {
            t,
            contact_radius,
            length_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_time(self.t)?;
        positive(self.contact_radius, "contact radius")?;
        positive(self.length_scale, "length scale")
    }

    pub fn with_time(&self, t: T) -> Self {
        Self { t, ..*self }
    }
}

fn positive<T: Scalar>(x: T, what: &str) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive, got {x}")))
    }
}

fn check_time<T: Scalar>(t: T) -> Result<()> {
    positive(t, "diffusion time")
}

/// The Brownian kernel at a fixed time with its IGSO(3) series prepared.
#[derive(Clone, Debug)]
pub struct BrownianKernel<T: Scalar> {
    t: T,
    ig: IgParams<T>,
}

impl<T: Scalar> BrownianKernel<T> {
    pub fn new(t: T) -> Result<Self> {
        check_time(t)?;
        Ok(Self {
            t,
            ig: IgParams::with_default_truncation(t * T::lit(0.5))?,
        })
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn ig_params(&self) -> &IgParams<T> {
        &self.ig
    }

    /// `ln B_t(h)`; `-inf` where the rotational factor underflows.
    pub fn log_density(&self, h: &Pose<T>) -> Result<T> {
        let p = &h.translation;
        let gauss = -T::lit(1.5) * (T::TAU() * self.t).ln() - p.dot(p) / (T::lit(2.0) * self.t);
        Ok(gauss + igso3_log_density(h.rotation.angle(), &self.ig)?)
    }

    pub fn score(&self, h: &Pose<T>) -> Result<Twist<T>> {
        let linear = -(h.rotation.inverse().apply(&h.translation)) / self.t;
        Ok(Twist::new(linear, igso3_score(&h.rotation, &self.ig)?))
    }
}

pub fn brownian_log_density<T: Scalar>(h: &Pose<T>, t: T) -> Result<T> {
    BrownianKernel::new(t)?.log_density(h)
}

pub fn brownian_score<T: Scalar>(h: &Pose<T>, t: T) -> Result<Twist<T>> {
    BrownianKernel::new(t)?.score(h)
}

/// Draws from `B_t`: translation first (three normals), then the rotation.
#[derive(Clone, Debug)]
pub struct BrownianSampler<T: Scalar> {
    sigma: f64,
    rotation: Igso3Sampler<T>,
}

impl<T: Scalar> BrownianSampler<T> {
    pub fn new(t: T) -> Result<Self> {
        check_time(t)?;
        Ok(Self {
            sigma: t.as_f64().sqrt(),
            rotation: Igso3Sampler::new(IgParams::with_default_truncation(t * T::lit(0.5))?)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Pose<T> {
        let mut p = [0.0f64; 3];
        p.iter_mut()
            .for_each(|c| *c = self.sigma * rng.sample::<f64, _>(StandardNormal));
        let translation = Vec3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]));
        Pose::new(translation, self.rotation.sample(rng))
    }
}

/// One draw from `B_t`. Prepares the sampler on every call; reuse a
/// [`BrownianSampler`] for batches.
pub fn brownian_sample<T: Scalar, R: Rng + ?Sized>(t: T, rng: &mut R) -> Result<Pose<T>> {
    Ok(BrownianSampler::new(t)?.sample(rng))
}

/// Origin weights over the grasp cloud, proportional to the number of scene
/// points (already expressed in the grasp frame) within `r` of each grasp
/// point. Uniform when no grasp point is in contact.
pub fn contact_origin_weights<T: Scalar>(grasp: &PointCloud<T>, scene_in_body: &PointCloud<T>, r: T) -> Result<Vec<T>> {
    if grasp.is_empty() {
        return Err(Error::Empty("grasp cloud"));
    }
    positive(r, "contact radius")?;
    let index = RadiusIndex::new(scene_in_body, r)?;
    let counts: Vec<usize> = grasp.positions().iter().map(|p| index.count(p, r)).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        let u = T::one() / T::from_usize_lossy(grasp.len());
        return Ok(vec![u; grasp.len()]);
    }
    let total = T::from_usize_lossy(total);
    Ok(counts.into_iter().map(|c| T::from_usize_lossy(c) / total).collect())
}

/// Weighted diffusion frames `g_de` for one demonstration.
pub trait FrameSelection<T: Scalar> {
    fn frames(&self, g0: &Pose<T>, scene: &PointCloud<T>, grasp: &PointCloud<T>) -> Result<Vec<(Pose<T>, T)>>;
}

/// Pure-translation frames at grasp points, weighted by scene contact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactTranslation<T: Scalar> {
    pub contact_radius: T,
}

impl<T: Scalar> FrameSelection<T> for ContactTranslation<T> {
    fn frames(&self, g0: &Pose<T>, scene: &PointCloud<T>, grasp: &PointCloud<T>) -> Result<Vec<(Pose<T>, T)>> {
        if scene.is_empty() {
            return Err(Error::Empty("scene cloud"));
        }
        let scene_in_body = scene.transform(&g0.inverse());
        let w = contact_origin_weights(grasp, &scene_in_body, self.contact_radius)?;
        Ok(grasp
            .positions()
            .iter()
            .zip(w)
            .filter(|(_, w)| *w > T::zero())
            .map(|(p, w)| (Pose::from_translation(*p), w))
            .collect())
    }
}

/// `g0 g_de dg g_de^-1` with `dg` in scene units.
pub fn diffuse_about<T: Scalar>(g0: &Pose<T>, frame: &Pose<T>, delta: &Pose<T>) -> Pose<T> {
    *g0 * *frame * *delta * frame.inverse()
}

/// Result of one forward-diffusion draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardSample<T: Scalar> {
    pub g_t: Pose<T>,
    /// Diffusion origin in the grasp frame.
    pub origin: Vec3<T>,
    pub origin_index: usize,
    /// Displacement actually applied, translation in scene units.
    pub delta: Pose<T>,
}

/// Forward diffusion of one demonstration with origin weights prepared once.
#[derive(Clone, Debug)]
pub struct ForwardDiffuser<T: Scalar> {
    g0: Pose<T>,
    origins: Vec<Vec3<T>>,
    cumulative: Vec<f64>,
    length_scale: T,
    brownian: BrownianSampler<T>,
}

impl<T: Scalar> ForwardDiffuser<T> {
    pub fn new(g0: &Pose<T>, scene: &PointCloud<T>, grasp: &PointCloud<T>, cfg: &DiffusionConfig<T>) -> Result<Self> {
        cfg.validate()?;
        if scene.is_empty() {
            return Err(Error::Empty("scene cloud"));
        }
        let w = contact_origin_weights(grasp, &scene.transform(&g0.inverse()), cfg.contact_radius)?;
        let mut acc = 0.0;
        let cumulative = w
            .iter()
            .map(|w| {
                acc += w.as_f64();
                acc
            })
            .collect();
        Ok(Self {
            g0: *g0,
            origins: grasp.positions().to_vec(),
            cumulative,
            length_scale: cfg.length_scale,
            brownian: BrownianSampler::new(cfg.t)?,
        })
    }

    /// Draws the origin index (one uniform), then the displacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ForwardSample<T> {
        let total = *self.cumulative.last().expect("nonempty grasp cloud");
        let u: f64 = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.origins.len() - 1);
        let delta = self.brownian.sample(rng).scale_translation(self.length_scale);
        let origin = self.origins[idx];
        ForwardSample {
            g_t: diffuse_about(&self.g0, &Pose::from_translation(origin), &delta),
            origin,
            origin_index: idx,
            delta,
        }
    }
}

pub fn forward_diffuse<T: Scalar, R: Rng + ?Sized>(
    g0: &Pose<T>,
    scene: &PointCloud<T>,
    grasp: &PointCloud<T>,
    cfg: &DiffusionConfig<T>,
    rng: &mut R,
) -> Result<ForwardSample<T>> {
    Ok(ForwardDiffuser::new(g0, scene, grasp, cfg)?.sample(rng))
}

// h = g_de^-1 g0^-1 g g_de in dimensionless units, and the dimensionless frame.
fn relative_dimensionless<T: Scalar>(
    g: &Pose<T>,
    g0: &Pose<T>,
    frame: &Pose<T>,
    length_scale: T,
) -> (Pose<T>, Pose<T>) {
    let h = frame.inverse() * g0.inverse() * *g * *frame;
    let inv_l = T::one() / length_scale;
    (h.scale_translation(inv_l), frame.scale_translation(inv_l))
}

fn to_physical<T: Scalar>(s: Twist<T>, length_scale: T) -> Twist<T> {
    Twist::new(s.linear / length_scale, s.angular)
}

/// Score of `g -> ln B_t(g_de^-1 g0^-1 g g_de)` for an arbitrary frame `g_de`.
pub fn frame_target_score<T: Scalar>(
    kernel: &BrownianKernel<T>,
    g: &Pose<T>,
    g0: &Pose<T>,
    frame: &Pose<T>,
    length_scale: T,
) -> Result<Twist<T>> {
    let (h, frame) = relative_dimensionless(g, g0, frame, length_scale);
    let s = kernel.score(&h)?.transformed(&frame.adjoint_inv_transpose());
    Ok(to_physical(s, length_scale))
}

/// Denoising score-matching target for origin `p_de` with `L = 1`.
pub fn target_score<T: Scalar>(g: &Pose<T>, g0: &Pose<T>, p_de: &Vec3<T>, t: T) -> Result<Twist<T>> {
    target_score_scaled(g, g0, p_de, t, T::one())
}

pub fn target_score_scaled<T: Scalar>(
    g: &Pose<T>,
    g0: &Pose<T>,
    p_de: &Vec3<T>,
    t: T,
    length_scale: T,
) -> Result<Twist<T>> {
    positive(length_scale, "length scale")?;
    frame_target_score(
        &BrownianKernel::new(t)?,
        g,
        g0,
        &Pose::from_translation(*p_de),
        length_scale,
    )
}

/// `ln sum_i exp(x_i)`, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<T: Scalar>(xs: impl IntoIterator<Item = T> + Clone) -> T {
    let m = xs.clone().into_iter().fold(T::neg_infinity(), |a, b| a.max(b));
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.into_iter().map(|x| (x - m).exp()).fold(T::zero(), |a, b| a + b).ln()
}

/// `ln sum_p w_p B_t((g0 T(p))^-1 g T(p))` with contact weights `w_p`.
pub fn kernel_log_density<T: Scalar>(
    g: &Pose<T>,
    g0: &Pose<T>,
    scene: &PointCloud<T>,
    grasp: &PointCloud<T>,
    cfg: &DiffusionConfig<T>,
) -> Result<T> {
    cfg.validate()?;
    let kernel = BrownianKernel::new(cfg.t)?;
    let frames = ContactTranslation {
        contact_radius: cfg.contact_radius,
    }
    .frames(g0, scene, grasp)?;
    let terms = frames
        .iter()
        .map(|(f, w)| {
            let (h, _) = relative_dimensionless(g, g0, f, cfg.length_scale);
            Ok(w.ln() + kernel.log_density(&h)?)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(log_sum_exp(terms.iter().copied()))
}

/// One weighted kernel component of the diffused marginal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureComponent<T: Scalar> {
    pub demo: usize,
    pub g0: Pose<T>,
    pub frame: Pose<T>,
    /// Mixture weight including the `1 / N` demonstration factor.
    pub weight: T,
}

// Components further than this below the dominant one (in log space) are
// dropped from the score average.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -745.0;

/// Exact diffused marginal of a uniform Dirac mixture over demonstration poses
/// sharing one scene and grasp cloud.
#[derive(Clone, Debug)]
pub struct MarginalOracle<T: Scalar> {
    components: Vec<MixtureComponent<T>>,
    length_scale: T,
}

impl<T: Scalar> MarginalOracle<T> {
    pub fn new(
        demos: &[Pose<T>],
        scene: &PointCloud<T>,
        grasp: &PointCloud<T>,
        contact_radius: T,
        length_scale: T,
    ) -> Result<Self> {
        Self::with_selection(
            demos,
            scene,
            grasp,
            &ContactTranslation { contact_radius },
            length_scale,
        )
    }

    pub fn with_selection<S: FrameSelection<T>>(
        demos: &[Pose<T>],
        scene: &PointCloud<T>,
        grasp: &PointCloud<T>,
        selection: &S,
        length_scale: T,
    ) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::Empty("demonstration set"));
        }
        positive(length_scale, "length scale")?;
        let per_demo = T::one() / T::from_usize_lossy(demos.len());
        let mut components = Vec::new();
        for (i, g0) in demos.iter().enumerate() {
            for (frame, w) in selection.frames(g0, scene, grasp)? {
                components.push(MixtureComponent {
                    demo: i,
                    g0: *g0,
                    frame,
                    weight: w * per_demo,
                });
            }
        }
        Ok(Self {
            components,
            length_scale,
        })
    }

    pub fn components(&self) -> &[MixtureComponent<T>] {
        &self.components
    }

    pub fn length_scale(&self) -> T {
        self.length_scale
    }

    fn log_terms(&self, kernel: &BrownianKernel<T>, g: &Pose<T>) -> Result<Vec<T>> {
        self.components
            .iter()
            .map(|c| {
                let (h, _) = relative_dimensionless(g, &c.g0, &c.frame, self.length_scale);
                Ok(c.weight.ln() + kernel.log_density(&h)?)
            })
            .collect()
    }

    pub fn log_density(&self, g: &Pose<T>, t: T) -> Result<T> {
        let kernel = BrownianKernel::new(t)?;
        Ok(log_sum_exp(self.log_terms(&kernel, g)?.iter().copied()))
    }

    pub fn score(&self, g: &Pose<T>, t: T) -> Result<Twist<T>> {
        self.score_with_kernel(&BrownianKernel::new(t)?, g)
    }

    /// Score using a prepared kernel (avoids rebuilding the series per call).
    pub fn score_with_kernel(&self, kernel: &BrownianKernel<T>, g: &Pose<T>) -> Result<Twist<T>> {
        let terms = self.log_terms(kernel, g)?;
        let m = terms.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        if m == T::neg_infinity() {
            return Err(Error::DensityUnderflow("marginal score"));
        }
        let mut total = T::zero();
        let mut acc = Twist::zero();
        for (c, &lt) in self.components.iter().zip(&terms) {
            if (lt - m).as_f64() < NEGLIGIBLE_LOG_WEIGHT {
                continue;
            }
            let e = (lt - m).exp();
            let s = frame_target_score(kernel, g, &c.g0, &c.frame, self.length_scale)?;
            acc += s * e;
            total += e;
        }
        Ok(acc * (T::one() / total))
    }
}

/// Exact score of the diffused marginal at `g` for time `cfg.t`.
pub fn marginal_score_oracle<T: Scalar>(
    g: &Pose<T>,
    demos: &[Pose<T>],
    scene: &PointCloud<T>,
    grasp: &PointCloud<T>,
    cfg: &DiffusionConfig<T>,
) -> Result<Twist<T>> {
    cfg.validate()?;
    MarginalOracle::new(demos, scene, grasp, cfg.contact_radius, cfg.length_scale)?.score(g, cfg.t)
}

/// `1/2 |model - target|^2` with `L = 1`.
pub fn score_matching_loss<T: Scalar>(model: &Twist<T>, g: &Pose<T>, g0: &Pose<T>, p_de: &Vec3<T>, t: T) -> Result<T> {
    score_matching_loss_scaled(model, g, g0, p_de, t, T::one())
}

pub fn score_matching_loss_scaled<T: Scalar>(
    model: &Twist<T>,
    g: &Pose<T>,
    g0: &Pose<T>,
    p_de: &Vec3<T>,
    t: T,
    length_scale: T,
) -> Result<T> {
    let d = *model - target_score_scaled(g, g0, p_de, t, length_scale)?;
    Ok(T::lit(0.5) * d.dot(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::igso3::AngleCdf;
    use crate::lie::{random_pose, random_rotation, Rotation};
    use crate::stats::ks_statistic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FD_STEP: f64 = 1e-5;

    fn fd_score(f: impl Fn(&Pose<f64>) -> f64, g: &Pose<f64>) -> Twist<f64> {
        let mut v = [0.0; 6];
        for (i, c) in v.iter_mut().enumerate() {
            let e = Twist::basis(i);
            let plus = *g * Pose::exp(&(e * FD_STEP)).unwrap();
            let minus = *g * Pose::exp(&(e * -FD_STEP)).unwrap();
            *c = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        }
        Twist::from_vector(&v.into())
    }

    fn rel_err(a: &Twist<f64>, b: &Twist<f64>) -> f64 {
        (*a - *b).norm() / b.norm().max(1e-12)
    }

    fn cloud(points: &[[f64; 3]]) -> PointCloud<f64> {
        PointCloud::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, center: Vec3<f64>, spread: f64) -> PointCloud<f64> {
        PointCloud::new(
            (0..n)
                .map(|_| center + random_pose::<f64, _>(rng, spread).translation)
                .collect(),
        )
    }

    // g exp(xi) with xi drawn from a small isotropic box
    fn near(rng: &mut ChaCha8Rng, g: &Pose<f64>, lin: f64, ang: f64) -> Pose<f64> {
        let a = random_pose::<f64, _>(rng, lin).translation;
        let b = random_pose::<f64, _>(rng, ang).translation;
        *g * Pose::exp(&Twist::new(a, b)).unwrap()
    }

    // Grasp points around the origin, scene around a demo pose so several
    // grasp points are in contact.
    fn toy(rng: &mut ChaCha8Rng) -> (PointCloud<f64>, PointCloud<f64>, Pose<f64>) {
        let grasp = random_cloud(rng, 40, Vec3::zeros(), 0.1);
        let g0 = random_pose(rng, 0.5);
        let scene = random_cloud(rng, 200, Vec3::zeros(), 0.15).transform(&g0);
        (scene, grasp, g0)
    }

    #[test]
    fn identity_log_density() {
        let v = brownian_log_density(&Pose::<f64>::identity(), 1.0).unwrap();
        assert!((v - (-1.019729680)).abs() < 1e-8, "{v}");
    }

    #[test]
    fn translation_decreases_log_density() {
        let t = 0.7;
        let p = Vec3::new(0.3, -0.2, 0.5);
        let a = brownian_log_density(&Pose::<f64>::identity(), t).unwrap();
        let b = brownian_log_density(&Pose::from_translation(p), t).unwrap();
        assert!((a - b - p.norm_squared() / (2.0 * t)).abs() < 1e-12);
    }

    #[test]
    fn log_density_is_class_function_in_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let h: Pose<f64> = random_pose(&mut rng, 1.0);
            let q: Rotation<f64> = random_rotation(&mut rng);
            let conj = Pose::new(h.translation, q * h.rotation * q.inverse());
            let a = brownian_log_density(&h, 0.8).unwrap();
            let b = brownian_log_density(&conj, 0.8).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_vanishes_at_small_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let h: Pose<f64> = brownian_sample(1e-8, &mut rng).unwrap();
            let (d, a) = crate::lie::pose_distance(&h, &Pose::identity());
            assert!(d < 1e-3 && a < 1e-3);
        }
    }

    #[test]
    fn sample_moments_and_angle_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = BrownianSampler::<f64>::new(1.0).unwrap();
        let n = 100_000;
        let mut cov = nalgebra::Matrix3::<f64>::zeros();
        let mut angles = Vec::with_capacity(n);
        for _ in 0..n {
            let h = s.sample(&mut rng);
            cov += h.translation * h.translation.transpose();
            angles.push(h.rotation.angle());
        }
        cov /= n as f64;
        assert!((cov - nalgebra::Matrix3::identity()).abs().max() < 0.05);
        let cdf = AngleCdf::new(&IgParams::with_default_truncation(0.5).unwrap(), 20_000).unwrap();
        assert!(ks_statistic(&mut angles, |t| cdf.cdf(t)) < 0.01);
    }

    #[test]
    fn brownian_score_basics() {
        let s = brownian_score(&Pose::<f64>::identity(), 0.5).unwrap();
        assert!(s.norm() < 1e-12);
        let r = Rotation::exp(&Vec3::new(0.3, 0.2, -0.1)).unwrap();
        let s = brownian_score(&Pose::from_rotation(r), 0.5).unwrap();
        assert_eq!(s.linear, Vec3::zeros());
        assert!(s.angular.norm() > 0.0);
    }

    #[test]
    fn brownian_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = BrownianKernel::new(0.7).unwrap();
        for _ in 0..50 {
            let h: Pose<f64> = random_pose(&mut rng, 1.0);
            if h.rotation.angle() > 2.8 {
                continue;
            }
            let fd = fd_score(|x| k.log_density(x).unwrap(), &h);
            let s = k.score(&h).unwrap();
            assert!(rel_err(&fd, &s) < 1e-4, "{fd:?} vs {s:?}");
        }
    }

    #[test]
    fn contact_weights() {
        let one = cloud(&[[0.0, 0.0, 0.0]]);
        let scene = cloud(&[[0.05, 0.0, 0.0]]);
        assert_eq!(contact_origin_weights(&one, &scene, 0.1).unwrap(), vec![1.0]);

        let grasp = cloud(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let scene = cloud(&[[0.0, 0.0, 0.1], [10.0, 0.0, 0.0], [10.1, 0.0, 0.0], [9.9, 0.0, 0.0]]);
        assert_eq!(contact_origin_weights(&grasp, &scene, 0.1).unwrap(), vec![0.25, 0.75]);

        let far = cloud(&[[100.0, 0.0, 0.0]]);
        assert_eq!(contact_origin_weights(&grasp, &far, 0.1).unwrap(), vec![0.5, 0.5]);
        assert!(contact_origin_weights(&PointCloud::default(), &far, 0.1).is_err());
    }

    #[test]
    fn forward_diffusion_small_time_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (scene, grasp, g0) = toy(&mut rng);
        let cfg = DiffusionConfig::new(1e-8, 0.05, 1.0).unwrap();
        let s = forward_diffuse(&g0, &scene, &grasp, &cfg, &mut rng).unwrap();
        let (d, a) = crate::lie::pose_distance(&s.g_t, &g0);
        assert!(d < 1e-3 && a < 1e-3);

        let cfg = DiffusionConfig::new(0.4, 0.05, 0.2).unwrap();
        let a = forward_diffuse(&g0, &scene, &grasp, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = forward_diffuse(&g0, &scene, &grasp, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.origin, grasp.positions()[a.origin_index]);
    }

    #[test]
    fn pure_translation_displacement_cancels_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g0: Pose<f64> = random_pose(&mut rng, 1.0);
        let d = Vec3::new(0.1, -0.3, 0.2);
        let p = Vec3::new(0.5, 0.4, -0.7);
        let g = diffuse_about(&g0, &Pose::from_translation(p), &Pose::from_translation(d));
        let (_, angle) = crate::lie::pose_distance(&g, &g0);
        assert!(angle < 1e-12);
        assert!((g.translation - (g0.translation + g0.rotation.apply(&d))).norm() < 1e-12);
    }

    #[test]
    fn target_score_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g: Pose<f64> = random_pose(&mut rng, 0.5);
        let g0: Pose<f64> = random_pose(&mut rng, 0.5);
        let a = target_score(&g, &g0, &Vec3::zeros(), 0.6).unwrap();
        let b = brownian_score(&(g0.inverse() * g), 0.6).unwrap();
        assert!((a - b).norm() < 1e-12);
        let z = target_score(&g0, &g0, &Vec3::new(0.2, 0.1, 0.0), 0.6).unwrap();
        assert!(z.norm() < 1e-10);
    }

    #[test]
    fn target_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(t, l) in &[(0.05f64, 1.0f64), (0.5, 1.0), (1.0, 1.0), (0.3, 0.1)] {
            let k = BrownianKernel::new(t).unwrap();
            let mut checked = 0;
            while checked < 20 {
                let g0: Pose<f64> = random_pose(&mut rng, 1.0);
                let p: Vec3<f64> = random_pose::<f64, _>(&mut rng, 0.3).translation;
                let dg: f64 = k.ig_params().eps().sqrt() * 1.5;
                let local = Pose::exp(&Twist::new(
                    random_pose::<f64, _>(&mut rng, dg * l).translation,
                    random_pose::<f64, _>(&mut rng, dg).translation,
                ))
                .unwrap();
                let g = g0 * local;
                let frame = Pose::from_translation(p);
                let logp = |x: &Pose<f64>| {
                    let (h, _) = relative_dimensionless(x, &g0, &frame, l);
                    k.log_density(&h).unwrap()
                };
                let fd = fd_score(logp, &g);
                let s = target_score_scaled(&g, &g0, &p, t, l).unwrap();
                assert!(rel_err(&fd, &s) < 1e-4, "t={t} L={l}: {fd:?} vs {s:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn kernel_with_single_origin_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let grasp = cloud(&[[0.0, 0.0, 0.0]]);
        let scene = random_cloud(&mut rng, 30, Vec3::zeros(), 1.0);
        let g: Pose<f64> = random_pose(&mut rng, 0.5);
        let g0: Pose<f64> = random_pose(&mut rng, 0.5);
        let cfg = DiffusionConfig::new(0.5, 0.1, 1.0).unwrap();
        let a = kernel_log_density(&g, &g0, &scene, &grasp, &cfg).unwrap();
        let b = brownian_log_density(&(g0.inverse() * g), 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn kernel_bi_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (scene, grasp, g0) = toy(&mut rng);
        let cfg = DiffusionConfig::new(0.3, 0.05, 0.5).unwrap();
        for _ in 0..20 {
            let g = near(&mut rng, &g0, 0.2, 0.4);
            let base = kernel_log_density(&g, &g0, &scene, &grasp, &cfg).unwrap();
            let dg: Pose<f64> = random_pose(&mut rng, 1.0);
            let left = kernel_log_density(&(dg * g), &(dg * g0), &scene.transform(&dg), &grasp, &cfg).unwrap();
            let di = dg.inverse();
            let right = kernel_log_density(&(g * di), &(g0 * di), &scene, &grasp.transform(&dg), &cfg).unwrap();
            assert!((left - base).abs() < 1e-9);
            assert!((right - base).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_single_component_is_target_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grasp = cloud(&[[0.1, 0.0, 0.0]]);
        let scene = cloud(&[[0.0, 0.0, 0.0]]);
        let g0: Pose<f64> = random_pose(&mut rng, 0.3);
        let g = near(&mut rng, &g0, 0.2, 0.4);
        let cfg = DiffusionConfig::new(0.4, 0.1, 1.0).unwrap();
        let a = marginal_score_oracle(&g, &[g0], &scene, &grasp, &cfg).unwrap();
        let b = target_score(&g, &g0, &Vec3::new(0.1, 0.0, 0.0), 0.4).unwrap();
        assert!((a - b).norm() < 1e-12 * b.norm().max(1.0));
    }

    #[test]
    fn oracle_matches_finite_differences_and_weighted_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (scene, grasp, g0) = toy(&mut rng);
        let g1 = near(&mut rng, &g0, 0.2, 0.4);
        let l = 0.3;
        let oracle = MarginalOracle::new(&[g0, g1], &scene, &grasp, 0.05, l).unwrap();
        let t = 0.2;
        for _ in 0..10 {
            let g = near(&mut rng, &g0, 0.15, 0.3);
            let s = oracle.score(&g, t).unwrap();
            let fd = fd_score(|x| oracle.log_density(x, t).unwrap(), &g);
            assert!(rel_err(&fd, &s) < 1e-4, "{fd:?} vs {s:?}");

            // independent path: free functions per component, averaged by density
            let mut num = Twist::zero();
            let mut den = 0.0;
            for c in oracle.components() {
                let h = c.frame.inverse() * c.g0.inverse() * g * c.frame;
                let dens = c.weight * brownian_log_density(&h.scale_translation(1.0 / l), t).unwrap().exp();
                num += target_score_scaled(&g, &c.g0, &c.frame.translation, t, l).unwrap() * dens;
                den += dens;
            }
            assert!(rel_err(&(num * (1.0 / den)), &s) < 1e-10);
        }
    }

    #[test]
    fn oracle_symmetric_modes() {
        // demos and scene invariant under conjugation by a half turn q about z;
        // at the fixed pose the score must satisfy s = Ad_q^T s
        let q = Pose::from_rotation(Rotation::from_axis_angle(&Vec3::z(), std::f64::consts::PI).unwrap());
        let g0 = Pose::new(
            Vec3::new(0.3, 0.1, 0.2),
            Rotation::from_axis_angle(&Vec3::new(1.0, 1.0, 1.0).normalize(), 0.4).unwrap(),
        );
        let g1 = q * g0 * q.inverse();
        let grasp = cloud(&[[0.0, 0.0, 0.0]]);
        let scene = cloud(&[[0.3, 0.1, 0.2], [-0.3, -0.1, 0.2]]);
        let oracle = MarginalOracle::new(&[g0, g1], &scene, &grasp, 0.1, 1.0).unwrap();
        let s = oracle.score(&Pose::identity(), 0.5).unwrap();
        for v in [s.linear.x, s.linear.y, s.angular.x, s.angular.y] {
            assert!(v.abs() < 1e-12, "{s:?}");
        }
        assert!(s.linear.z.abs() > 1e-3);
    }

    #[test]
    fn oracle_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (scene, grasp, g0) = toy(&mut rng);
        let g1 = near(&mut rng, &g0, 0.2, 0.4);
        let (r, l, t) = (0.05, 0.4, 0.3);
        let demos = [g0, g1];
        let oracle = MarginalOracle::new(&demos, &scene, &grasp, r, l).unwrap();
        for _ in 0..10 {
            let g = near(&mut rng, &g0, 0.1, 0.3);
            let s = oracle.score(&g, t).unwrap();
            let dg: Pose<f64> = random_pose(&mut rng, 1.0);

            let moved: Vec<_> = demos.iter().map(|d| dg * *d).collect();
            let left = MarginalOracle::new(&moved, &scene.transform(&dg), &grasp, r, l)
                .unwrap()
                .score(&(dg * g), t)
                .unwrap();
            assert!((left - s).norm() < 1e-8);

            let di = dg.inverse();
            let moved: Vec<_> = demos.iter().map(|d| *d * di).collect();
            let right = MarginalOracle::new(&moved, &scene, &grasp.transform(&dg), r, l)
                .unwrap()
                .score(&(g * di), t)
                .unwrap();
            let expect = s.transformed(&dg.adjoint_inv_transpose());
            assert!((right - expect).norm() < 1e-8);
        }
    }

    #[test]
    fn loss_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g: Pose<f64> = random_pose(&mut rng, 0.5);
        let g0: Pose<f64> = random_pose(&mut rng, 0.5);
        let p = Vec3::new(0.1, 0.0, 0.2);
        let target = target_score(&g, &g0, &p, 0.5).unwrap();
        assert_eq!(score_matching_loss(&target, &g, &g0, &p, 0.5).unwrap(), 0.0);
        let off = target + Twist::basis(4);
        assert!((score_matching_loss(&off, &g, &g0, &p, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp::<f64>(std::iter::empty::<f64>()), f64::NEG_INFINITY);
        let v = log_sum_exp([f64::NEG_INFINITY, 0.0, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp([-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
