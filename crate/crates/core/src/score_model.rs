//! Bi-equivariant score model built from analytic descriptor fields.
//!
//! A descriptor field maps a point `x` and a cloud `O` to an [`IrrepsVector`]:
//!
//! ```text
//! phi(x | O) = sum_{p in O, 0 < |x - p| <= c} a_s(|x - p|, color(p), t) (|x - p| / c)^l Y_l((x - p) / |x - p|)
//! ```
//!
//! per slot `s` of type `l`, where `a_s` mixes Gaussian radial bases (with a
//! smooth cutoff envelope), the color channels `[1, r, g, b]` and scalar gates
//! over `ln t`. Fields are translation invariant and rotate by the Wigner-D
//! matrices, which is all the equivariance argument needs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irreps::{cg_contract_to1, cg_paths, spherical_harmonics_upto, IrrepsLayout, IrrepsVector, WignerSet};
use crate::lie::{Pose, Twist, Vec3};
use crate::pointcloud::PointCloud;
use crate::scalar::Scalar;

/// Color features per point: constant, r, g, b.
pub const COLOR_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEdfParams<T: Scalar> {
    pub layout: IrrepsLayout,
    pub cutoff: T,
    pub radial_widths: Vec<T>,
    /// Gate centers over `ln t`. Gate 0 is a constant channel; gate `k > 0` is a
    /// Gaussian bump around center `k - 1`.
    pub time_gate_centers: Vec<T>,
    /// Flat `[slot][radial][color][gate]`.
    pub channel_weights: Vec<T>,
}

impl<T: Scalar> SyntheticEdfParams<T> {
    pub fn num_gates(&self) -> usize {
        self.time_gate_centers.len() + 1
    }

    pub fn expected_weights(&self) -> usize {
        self.layout.num_slots() * self.radial_widths.len() * COLOR_CHANNELS * self.num_gates()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > T::zero()) || !self.cutoff.is_finite() {
            return Err(Error::InvalidParameter("cutoff must be positive".into()));
        }
        if self.radial_widths.is_empty() || self.radial_widths.iter().any(|w| !(*w > T::zero())) {
            return Err(Error::InvalidParameter(
                "radial widths must be nonempty and positive".into(),
            ));
        }
        if self.channel_weights.len() != self.expected_weights() {
            return Err(Error::WeightCount {
                expected: self.expected_weights(),
                got: self.channel_weights.len(),
            });
        }
        Ok(())
    }

    /// Standard-normal channel weights from `seed`, divided by `sqrt` of the
    /// number of channels mixed into each slot.
    pub fn seeded(
        layout: IrrepsLayout,
        cutoff: T,
        radial_widths: Vec<T>,
        time_gate_centers: Vec<T>,
        seed: u64,
    ) -> Result<Self> {
        let mut p = Self {
            layout,
            cutoff,
            radial_widths,
            time_gate_centers,
            channel_weights: Vec::new(),
        };
        let n = p.expected_weights();
        let per_slot = (n / p.layout.num_slots().max(1)).max(1) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.channel_weights = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(z / per_slot.sqrt())
            })
            .collect();
        p.validate()?;
        Ok(p)
    }

    /// Same parameters with every channel weight multiplied by `k`.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            channel_weights: self.channel_weights.iter().map(|w| *w * k).collect(),
            ..self.clone()
        }
    }

    fn gate_values(&self, t: Option<T>) -> Vec<T> {
        let mut g = vec![T::zero(); self.num_gates()];
        g[0] = T::one();
        if let Some(t) = t {
            let c = &self.time_gate_centers;
            let width = if c.len() > 1 {
                (c[c.len() - 1] - c[0]).abs() / T::from_usize_lossy(c.len() - 1)
            } else {
                T::one()
            };
            let width = if width > T::zero() { width } else { T::one() };
            let lt = t.ln();
            for (k, &ck) in c.iter().enumerate() {
                let z = (lt - ck) / width;
                g[k + 1] = (-T::lit(0.5) * z * z).exp();
            }
        }
        g
    }
}

/// Evaluates the descriptor field of `cloud` at `x`. With `t = None` only the
/// constant gate contributes.
pub fn synthetic_edf<T: Scalar>(
    x: &Vec3<T>,
    cloud: &PointCloud<T>,
    params: &SyntheticEdfParams<T>,
    t: Option<T>,
) -> Result<IrrepsVector<T>> {
    params.validate()?;
    if let Some(t) = t {
        if !(t > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "diffusion time must be positive, got {t}"
            )));
        }
    }
    let layout = &params.layout;
    let slots = layout.slots();
    let gates = params.gate_values(t);
    let (nr, ng) = (params.radial_widths.len(), gates.len());
    let c = params.cutoff;
    let c2 = c * c;
    let tiny = c * T::lit(1e-12);
    let mut out = vec![T::zero(); layout.dim()];
    let mut radial = vec![T::zero(); nr];
    for (i, p) in cloud.positions().iter().enumerate() {
        let v = x - p;
        let d2 = v.dot(&v);
        if d2 > c2 {
            continue;
        }
        let d = d2.sqrt();
        if d <= tiny {
            continue;
        }
        let env = {
            let s = T::one() - d2 / c2;
            s * s
        };
        for (r, w) in radial.iter_mut().zip(&params.radial_widths) {
            *r = (-d2 / (T::lit(2.0) * *w * *w)).exp() * env;
        }
        let color = cloud.color(i).unwrap_or([T::zero(); 3]);
        let features = [T::one(), color[0], color[1], color[2]];
        let ys = spherical_harmonics_upto(layout.max_l(), &(v / d))?;
        let rel = d / c;
        for (s, slot) in slots.iter().enumerate() {
            let mut a = T::zero();
            let base = s * nr * COLOR_CHANNELS * ng;
            for (k, rk) in radial.iter().enumerate() {
                for (ci, f) in features.iter().enumerate() {
                    if f.is_zero() {
                        continue;
                    }
                    let off = base + (k * COLOR_CHANNELS + ci) * ng;
                    let mut acc = T::zero();
                    for (gi, gv) in gates.iter().enumerate() {
                        acc += params.channel_weights[off + gi] * *gv;
                    }
                    a += acc * *rk * *f;
                }
            }
            if a.is_zero() {
                continue;
            }
            let a = a * rel.powi(slot.l as i32);
            for (o, y) in out[slot.range()].iter_mut().zip(&ys[slot.l]) {
                *o += a * *y;
            }
        }
    }
    IrrepsVector::new(layout.clone(), out)
}

/// Farthest-point sampling. Returns indices in visit order; ties in the
/// max-min distance go to the lowest index.
pub fn fps_indices<T: Scalar>(cloud: &PointCloud<T>, nq: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if nq > n {
        return Err(Error::TooManyPoints {
            requested: nq,
            available: n,
        });
    }
    if nq == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(Error::InvalidParameter(format!(
            "start index {start} out of range for {n} points"
        )));
    }
    let pts = cloud.positions();
    let mut chosen = Vec::with_capacity(nq);
    let mut dist = vec![T::infinity(); n];
    let mut current = start;
    for _ in 0..nq {
        chosen.push(current);
        let c = pts[current];
        dist[current] = T::neg_infinity();
        let mut best = None::<(usize, T)>;
        for (i, p) in pts.iter().enumerate() {
            if dist[i] == T::neg_infinity() {
                continue;
            }
            let v = p - c;
            let d2 = v.dot(&v);
            if d2 < dist[i] {
                dist[i] = d2;
            }
            if best.is_none_or(|(_, b)| dist[i] > b) {
                best = Some((i, dist[i]));
            }
        }
        match best {
            Some((i, _)) => current = i,
            None => break,
        }
    }
    Ok(chosen)
}

pub fn fps_select<T: Scalar>(cloud: &PointCloud<T>, nq: usize, start: usize) -> Result<Vec<Vec3<T>>> {
    Ok(fps_indices(cloud, nq, start)?
        .into_iter()
        .map(|i| cloud.positions()[i])
        .collect())
}

fn softplus<T: Scalar>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Query points in the end-effector frame with nonnegative weights.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet<T: Scalar> {
    pub points: Vec<Vec3<T>>,
    pub weights: Vec<T>,
}

impl<T: Scalar> QuerySet<T> {
    pub fn new(points: Vec<Vec3<T>>, weights: Vec<T>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} query weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= T::zero())) {
            return Err(Error::InvalidParameter("query weights must be nonnegative".into()));
        }
        Ok(Self { points, weights })
    }

    /// FPS points weighted by `softplus` of a scalar descriptor field of the grasp cloud.
    pub fn from_grasp(
        grasp: &PointCloud<T>,
        nq: usize,
        start: usize,
        weight_field: &SyntheticEdfParams<T>,
    ) -> Result<Self> {
        if weight_field.layout != IrrepsLayout::scalar() {
            return Err(Error::InvalidLayout(
                "query weight field must be a single scalar".into(),
            ));
        }
        let points = fps_select(grasp, nq, start)?;
        let weights = points
            .iter()
            .map(|q| Ok(softplus(synthetic_edf(q, grasp, weight_field, None)?.coeffs()[0])))
            .collect::<Result<Vec<T>>>()?;
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `cg(psi(x | O_e), D(R^-1) phi_t(g x | O_s))`.
#[allow(clippy::too_many_arguments)]
pub fn score_field<T: Scalar>(
    g: &Pose<T>,
    x: &Vec3<T>,
    scene: &PointCloud<T>,
    grasp: &PointCloud<T>,
    t: T,
    scene_params: &SyntheticEdfParams<T>,
    grasp_params: &SyntheticEdfParams<T>,
    path_weights: &[T],
) -> Result<Vec3<T>> {
    let psi = synthetic_edf(x, grasp, grasp_params, None)?;
    let phi = synthetic_edf(&g.apply(x), scene, scene_params, Some(t))?;
    let rotated = WignerSet::new(scene_params.layout.max_l(), &g.rotation.inverse())?.apply(&phi)?;
    cg_contract_to1(&psi, &rotated, path_weights)
}

/// Descriptor fields and coupling weights of the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel<T: Scalar> {
    pub scene_field: SyntheticEdfParams<T>,
    pub grasp_field: SyntheticEdfParams<T>,
    /// Separate fields for the angular channel; the linear ones are shared when absent.
    #[serde(default)]
    pub scene_field_omega: Option<SyntheticEdfParams<T>>,
    #[serde(default)]
    pub grasp_field_omega: Option<SyntheticEdfParams<T>>,
    pub query_weight_field: SyntheticEdfParams<T>,
    pub path_weights_nu: Vec<T>,
    pub path_weights_omega: Vec<T>,
    pub n_query: usize,
    #[serde(default)]
    pub fps_start: usize,
}

/// Grasp-side quantities, computed once per grasp cloud.
#[derive(Clone, Debug)]
pub struct PreparedGrasp<T: Scalar> {
    pub query: QuerySet<T>,
    psi_nu: Vec<IrrepsVector<T>>,
    psi_omega: Vec<IrrepsVector<T>>,
}

/// Assembled score with its angular contributions kept apart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreBreakdown<T: Scalar> {
    pub score: Twist<T>,
    /// `(1/sqrt t) sum w (q / L) x s_nu`.
    pub orbital: Vec3<T>,
    /// `(1/sqrt t) sum w s_omega`.
    pub spin: Vec3<T>,
    /// Set when there are no query points or all weights vanish.
    pub empty_query: bool,
}

impl<T: Scalar> ScoreModel<T> {
    /// Descriptor layout `2x0 + 2x1 + 1x2` on both sides with seeded weights.
    pub fn seeded(cutoff: T, n_query: usize, seed: u64) -> Result<Self> {
        let layout = IrrepsLayout::new(vec![(0, 2), (1, 2), (2, 1)])?;
        let widths = vec![cutoff * T::lit(0.25), cutoff * T::lit(0.5)];
        let gates: Vec<T> = [-4.0, -2.0, 0.0].iter().map(|&c| T::lit(c)).collect();
        let scene_field = SyntheticEdfParams::seeded(layout.clone(), cutoff, widths.clone(), gates, seed)?;
        let grasp_field =
            SyntheticEdfParams::seeded(layout.clone(), cutoff, widths.clone(), Vec::new(), seed.wrapping_add(1))?;
        let query_weight_field =
            SyntheticEdfParams::seeded(IrrepsLayout::scalar(), cutoff, widths, Vec::new(), seed.wrapping_add(2))?;
        let n_paths = cg_paths(&layout, &layout).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::lit(z)
                })
                .collect()
        };
        let model = Self {
            scene_field,
            grasp_field,
            scene_field_omega: None,
            grasp_field_omega: None,
            query_weight_field,
            path_weights_nu: draw(n_paths),
            path_weights_omega: draw(n_paths),
            n_query,
            fps_start: 0,
        };
        model.validate()?;
        Ok(model)
    }

    fn scene_omega(&self) -> &SyntheticEdfParams<T> {
        self.scene_field_omega.as_ref().unwrap_or(&self.scene_field)
    }

    fn grasp_omega(&self) -> &SyntheticEdfParams<T> {
        self.grasp_field_omega.as_ref().unwrap_or(&self.grasp_field)
    }

    pub fn validate(&self) -> Result<()> {
        for f in [
            &self.scene_field,
            &self.grasp_field,
            self.scene_omega(),
            self.grasp_omega(),
            &self.query_weight_field,
        ] {
            f.validate()?;
        }
        let check = |grasp: &SyntheticEdfParams<T>, scene: &SyntheticEdfParams<T>, w: &[T]| {
            let n = cg_paths(&grasp.layout, &scene.layout).len();
            if n != w.len() {
                return Err(Error::WeightCount {
                    expected: n,
                    got: w.len(),
                });
            }
            Ok(())
        };
        check(&self.grasp_field, &self.scene_field, &self.path_weights_nu)?;
        check(self.grasp_omega(), self.scene_omega(), &self.path_weights_omega)
    }

    pub fn query_set(&self, grasp: &PointCloud<T>) -> Result<QuerySet<T>> {
        QuerySet::from_grasp(grasp, self.n_query, self.fps_start, &self.query_weight_field)
    }

    pub fn prepare(&self, grasp: &PointCloud<T>) -> Result<PreparedGrasp<T>> {
        self.prepare_with_query(grasp, self.query_set(grasp)?)
    }

    pub fn prepare_with_query(&self, grasp: &PointCloud<T>, query: QuerySet<T>) -> Result<PreparedGrasp<T>> {
        self.validate()?;
        let field = |params: &SyntheticEdfParams<T>| {
            query
                .points
                .iter()
                .map(|q| synthetic_edf(q, grasp, params, None))
                .collect::<Result<Vec<_>>>()
        };
        let psi_nu = field(&self.grasp_field)?;
        let psi_omega = if self.grasp_field_omega.is_some() {
            field(self.grasp_omega())?
        } else {
            psi_nu.clone()
        };
        Ok(PreparedGrasp {
            query,
            psi_nu,
            psi_omega,
        })
    }

    /// Score at pose `g` for diffusion time `t` and length scale `L`.
    pub fn score(
        &self,
        prepared: &PreparedGrasp<T>,
        g: &Pose<T>,
        scene: &PointCloud<T>,
        t: T,
        length_scale: T,
    ) -> Result<ScoreBreakdown<T>> {
        if !(t > T::zero()) || !(length_scale > T::zero()) {
            return Err(Error::InvalidParameter(
                "diffusion time and length scale must be positive".into(),
            ));
        }
        let query = &prepared.query;
        if query.is_empty() || query.weights.iter().all(|w| w.is_zero()) {
            return Ok(ScoreBreakdown {
                score: Twist::zero(),
                orbital: Vec3::zeros(),
                spin: Vec3::zeros(),
                empty_query: true,
            });
        }
        let r_inv = g.rotation.inverse();
        let max_l = self.scene_field.layout.max_l().max(self.scene_omega().layout.max_l());
        let wigner = WignerSet::new(max_l, &r_inv)?;
        let separate_scene = self.scene_field_omega.is_some();
        let mut lin = Vec3::zeros();
        let mut orbital = Vec3::zeros();
        let mut spin = Vec3::zeros();
        for (i, (q, &w)) in query.points.iter().zip(&query.weights).enumerate() {
            if w.is_zero() {
                continue;
            }
            let x = g.apply(q);
            let phi = wigner.apply(&synthetic_edf(&x, scene, &self.scene_field, Some(t))?)?;
            let s_nu = cg_contract_to1(&prepared.psi_nu[i], &phi, &self.path_weights_nu)?;
            let phi_omega = if separate_scene {
                wigner.apply(&synthetic_edf(&x, scene, self.scene_omega(), Some(t))?)?
            } else {
                phi
            };
            let s_omega = cg_contract_to1(&prepared.psi_omega[i], &phi_omega, &self.path_weights_omega)?;
            lin += s_nu * w;
            orbital += (q / length_scale).cross(&s_nu) * w;
            spin += s_omega * w;
        }
        let inv_sqrt_t = T::one() / t.sqrt();
        let orbital = orbital * inv_sqrt_t;
        let spin = spin * inv_sqrt_t;
        Ok(ScoreBreakdown {
            score: Twist::new(lin * (inv_sqrt_t / length_scale), orbital + spin),
            orbital,
            spin,
            empty_query: false,
        })
    }
}

/// One-shot score evaluation (prepares the grasp side on every call).
pub fn assemble_score<T: Scalar>(
    model: &ScoreModel<T>,
    g: &Pose<T>,
    scene: &PointCloud<T>,
    grasp: &PointCloud<T>,
    t: T,
    length_scale: T,
) -> Result<ScoreBreakdown<T>> {
    model.score(&model.prepare(grasp)?, g, scene, t, length_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irreps::rep_apply;
    use crate::lie::random_pose;
    use rand::Rng;

    fn colored_cloud(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> PointCloud<f64> {
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
        PointCloud::with_colors(pts, colors).unwrap()
    }

    fn params(seed: u64) -> SyntheticEdfParams<f64> {
        SyntheticEdfParams::seeded(
            IrrepsLayout::new(vec![(0, 2), (1, 2), (2, 1), (3, 1)]).unwrap(),
            0.3,
            vec![0.08, 0.15],
            vec![-3.0, -1.0, 0.0],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn edf_empty_neighbourhood_is_zero() {
        let pc = PointCloud::new(vec![Vec3::new(5.0, 0.0, 0.0)]);
        let v = synthetic_edf(&Vec3::zeros(), &pc, &params(1), Some(0.5)).unwrap();
        assert!(v.is_zero());
        // the coincident point is skipped
        let pc = PointCloud::new(vec![Vec3::zeros()]);
        assert!(synthetic_edf(&Vec3::zeros(), &pc, &params(1), Some(0.5))
            .unwrap()
            .is_zero());
    }

    #[test]
    fn edf_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pc = colored_cloud(&mut rng, 80, 0.3);
        let p = params(3);
        for _ in 0..30 {
            let x = Vec3::new(rng.random_range(-0.2..0.2), 0.05, -0.1);
            let dg: Pose<f64> = random_pose(&mut rng, 1.0);
            let base = synthetic_edf(&x, &pc, &p, Some(0.3)).unwrap();
            assert!(!base.is_zero());
            let moved = synthetic_edf(&dg.apply(&x), &pc.transform(&dg), &p, Some(0.3)).unwrap();
            let expect = rep_apply(&p.layout, &dg.rotation, &base).unwrap();
            let err = moved
                .coeffs()
                .iter()
                .zip(expect.coeffs())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn edf_is_linear_in_weights_and_gated_in_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pc = colored_cloud(&mut rng, 40, 0.2);
        let p = params(5);
        let x = Vec3::new(0.01, 0.02, 0.0);
        let a = synthetic_edf(&x, &pc, &p, Some(0.1)).unwrap();
        let b = synthetic_edf(&x, &pc, &p.scaled(2.0), Some(0.1)).unwrap();
        for (u, v) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((2.0 * u - v).abs() < 1e-12 * u.abs().max(1.0));
        }
        let c = synthetic_edf(&x, &pc, &p, Some(0.9)).unwrap();
        assert!(a.coeffs() != c.coeffs());
        assert!(synthetic_edf(&x, &pc, &p, Some(0.0)).is_err());
    }

    #[test]
    fn weight_count_is_checked() {
        let mut p = params(6);
        p.channel_weights.pop();
        assert!(matches!(p.validate(), Err(Error::WeightCount { .. })));
    }

    #[test]
    fn fps_examples() {
        let pc = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
        ]);
        assert_eq!(fps_indices(&pc, 2, 0).unwrap(), vec![0, 2]);
        assert_eq!(fps_indices(&pc, 1, 1).unwrap(), vec![1]);
        assert_eq!(fps_indices(&pc, 3, 0).unwrap(), vec![0, 2, 1]);
        assert!(fps_indices(&pc, 4, 0).is_err());
        // tie between indices 1 and 2 goes to 1
        let pc = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
        ]);
        assert_eq!(fps_indices(&pc, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fps_commutes_with_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pc = colored_cloud(&mut rng, 200, 0.5);
        for _ in 0..10 {
            let dg: Pose<f64> = random_pose(&mut rng, 2.0);
            assert_eq!(
                fps_indices(&pc, 16, 3).unwrap(),
                fps_indices(&pc.transform(&dg), 16, 3).unwrap()
            );
        }
    }

    #[test]
    fn query_weights_are_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pc = colored_cloud(&mut rng, 100, 0.2);
        let model = ScoreModel::seeded(0.15, 12, 9).unwrap();
        let q = model.query_set(&pc).unwrap();
        assert!(q.weights.iter().all(|w| *w > 0.0));
        let dg: Pose<f64> = random_pose(&mut rng, 1.0);
        let q2 = model.query_set(&pc.transform(&dg)).unwrap();
        for (a, b) in q.weights.iter().zip(&q2.weights) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in q.points.iter().zip(&q2.points) {
            assert!((dg.apply(a) - b).norm() < 1e-12);
        }
    }

    #[test]
    fn default_model_has_seventeen_paths() {
        let m = ScoreModel::<f64>::seeded(0.1, 8, 0).unwrap();
        assert_eq!(m.path_weights_nu.len(), 17);
        assert_eq!(m.path_weights_omega.len(), 17);
    }

    struct Toy {
        scene: PointCloud<f64>,
        grasp: PointCloud<f64>,
        model: ScoreModel<f64>,
        g: Pose<f64>,
    }

    fn toy(seed: u64) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grasp = colored_cloud(&mut rng, 60, 0.1);
        let g: Pose<f64> = random_pose(&mut rng, 0.3);
        // scene around the grasp cloud so fields are nonzero
        let scene = colored_cloud(&mut rng, 150, 0.2).transform(&Pose::from_translation(g.translation));
        Toy {
            scene,
            grasp,
            model: ScoreModel::seeded(0.15, 10, seed).unwrap(),
            g,
        }
    }

    #[test]
    fn score_field_equivariance() {
        let Toy { scene, grasp, model, g } = toy(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sf = |g: &Pose<f64>, x: &Vec3<f64>, s: &PointCloud<f64>, e: &PointCloud<f64>| {
            score_field(
                g,
                x,
                s,
                e,
                0.3,
                &model.scene_field,
                &model.grasp_field,
                &model.path_weights_nu,
            )
            .unwrap()
        };
        for _ in 0..10 {
            let x = grasp.positions()[rng.random_range(0..grasp.len())];
            let base = sf(&g, &x, &scene, &grasp);
            assert!(base.norm() > 0.0);
            let dg: Pose<f64> = random_pose(&mut rng, 1.0);
            let left = sf(&(dg * g), &x, &scene.transform(&dg), &grasp);
            assert!((left - base).norm() < 1e-9);
            let right = sf(&(g * dg.inverse()), &dg.apply(&x), &scene, &grasp.transform(&dg));
            assert!((right - dg.rotation.apply(&base)).norm() < 1e-9);
        }
        let far = PointCloud::new(vec![Vec3::new(50.0, 0.0, 0.0)]);
        assert_eq!(sf(&g, &Vec3::zeros(), &scene, &far), Vec3::zeros());
    }

    #[test]
    fn assembled_score_bi_equivariance() {
        let Toy { scene, grasp, model, g } = toy(12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = 0.2;
        let base = assemble_score(&model, &g, &scene, &grasp, 0.25, l).unwrap();
        assert!(!base.empty_query && base.score.norm() > 0.0);
        for _ in 0..10 {
            let dg: Pose<f64> = random_pose(&mut rng, 1.0);
            let left = assemble_score(&model, &(dg * g), &scene.transform(&dg), &grasp, 0.25, l).unwrap();
            assert!((left.score - base.score).norm() < 1e-8);
            let right = assemble_score(&model, &(g * dg.inverse()), &scene, &grasp.transform(&dg), 0.25, l).unwrap();
            let expect = base.score.transformed(&dg.adjoint_inv_transpose());
            assert!((right.score - expect).norm() < 1e-8);
            // spin rotates alone; orbital picks up the lever-arm term
            let r = dg.rotation;
            assert!((right.spin - r.apply(&base.spin)).norm() < 1e-8);
            let lin_rot = r.apply(&base.score.linear) * l;
            let expect_orb = r.apply(&base.orbital) + (dg.translation / l).cross(&lin_rot);
            assert!((right.orbital - expect_orb).norm() < 1e-8);
        }
    }

    #[test]
    fn origin_query_has_no_orbital_term() {
        let Toy { scene, grasp, model, g } = toy(14);
        let prepared = model
            .prepare_with_query(&grasp, QuerySet::new(vec![Vec3::zeros()], vec![1.0]).unwrap())
            .unwrap();
        let s = model.score(&prepared, &g, &scene, 0.3, 1.0).unwrap();
        assert_eq!(s.orbital, Vec3::zeros());
        assert_eq!(s.score.angular, s.spin);
    }

    #[test]
    fn zero_weights_give_zero_score() {
        let Toy { scene, grasp, model, g } = toy(15);
        let q = model.query_set(&grasp).unwrap();
        let zero = QuerySet::new(q.points.clone(), vec![0.0; q.len()]).unwrap();
        let prepared = model.prepare_with_query(&grasp, zero).unwrap();
        let s = model.score(&prepared, &g, &scene, 0.3, 1.0).unwrap();
        assert!(s.empty_query);
        assert_eq!(s.score, Twist::zero());
    }

    #[test]
    fn separate_omega_fields() {
        let Toy {
            scene,
            grasp,
            mut model,
            g,
        } = toy(16);
        let shared = assemble_score(&model, &g, &scene, &grasp, 0.3, 1.0).unwrap();
        model.scene_field_omega = Some(model.scene_field.scaled(2.0));
        let split = assemble_score(&model, &g, &scene, &grasp, 0.3, 1.0).unwrap();
        assert_eq!(split.score.linear, shared.score.linear);
        assert!((split.spin - shared.spin * 2.0).norm() < 1e-10);
    }
}
