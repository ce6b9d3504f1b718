//! SO(3) and SE(3) group algebra.
//!
//! Rotations are stored as unit quaternions `(w, x, y, z)` kept on the
//! `w >= 0` hemisphere. Poses compose as `(p_a, R_a)(p_b, R_b) = (p_a + R_a p_b, R_a R_b)`.
//! Twists are ordered linear-first, `(nu, omega)`, so the adjoint matrix has
//! the block layout `[[R, [p]^ R], [0, R]]`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Vec3<T> = Vector3<T>;
pub type Mat3<T> = Matrix3<T>;
pub type Mat6<T> = Matrix6<T>;

/// Below this angle the closed forms of `V(omega)` and its inverse switch to Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// `log_se3` refuses rotation angles at or above `pi - LOG_BRANCH_MARGIN`.
pub const LOG_BRANCH_MARGIN: f64 = 1e-6;

#[inline]
pub fn norm3<T: Scalar>(v: &Vec3<T>) -> T {
    v.dot(v).sqrt()
}

/// Skew-symmetric matrix with `skew(a) b = a x b`.
pub fn skew<T: Scalar>(v: &Vec3<T>) -> Mat3<T> {
    let o = T::zero();
    Matrix3::new(o, -v.z, v.y, v.z, o, -v.x, -v.y, v.x, o)
}

fn all_finite<T: Scalar>(v: &Vec3<T>) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// A rotation stored as a canonical unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation<T: Scalar> {
    q: [T; 4],
}

impl<T: Scalar> Default for Rotation<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> Rotation<T> {
    pub fn identity() -> Self {
        Self {
            q: [T::one(), T::zero(), T::zero(), T::zero()],
        }
    }

    // Caller guarantees a finite, non-zero quaternion.
    fn normalized(w: T, x: T, y: T, z: T) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let s = if w < T::zero() { -n.recip() } else { n.recip() };
        Self {
            q: [w * s, x * s, y * s, z * s],
        }
    }

    /// Builds a rotation from a quaternion `(w, x, y, z)`, normalizing it.
    pub fn from_quaternion(w: T, x: T, y: T, z: T) -> Result<Self> {
        let q = [w, x, y, z];
        if q.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("Rotation::from_quaternion"));
        }
        let n2 = w * w + x * x + y * y + z * z;
        if n2 <= T::min_positive_value() {
            return Err(Error::InvalidQuaternion("zero quaternion".into()));
        }
        Ok(Self::normalized(w, x, y, z))
    }

    /// Quaternion components `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion(&self) -> [T; 4] {
        self.q
    }

    /// Exponential map of an angular velocity vector.
    pub fn exp(omega: &Vec3<T>) -> Result<Self> {
        if !all_finite(omega) {
            return Err(Error::NonFinite("exp_so3"));
        }
        let theta2 = omega.dot(omega);
        let theta = theta2.sqrt();
        let half = T::lit(0.5);
        let (w, s) = if theta < T::lit(SMALL_ANGLE) {
            (T::one() - theta2 / T::lit(8.0), half - theta2 / T::lit(48.0))
        } else {
            let h = theta * half;
            (h.cos(), h.sin() / theta)
        };
        Ok(Self::normalized(w, omega.x * s, omega.y * s, omega.z * s))
    }

    pub fn from_axis_angle(axis: &Vec3<T>, angle: T) -> Result<Self> {
        let n = norm3(axis);
        if !n.is_finite() || n <= T::zero() {
            return Err(Error::InvalidParameter("rotation axis must be non-zero".into()));
        }
        Self::exp(&(axis * (angle / n)))
    }

    /// Principal logarithm; the returned vector has norm in `[0, pi]`.
    pub fn log(&self) -> Vec3<T> {
        let [w, x, y, z] = self.q;
        let v = Vector3::new(x, y, z);
        let n = norm3(&v);
        let factor = if n < T::lit(1e-8) {
            // 2 atan2(n, w) / n for small n, w close to 1
            let r = n / w;
            T::lit(2.0) / w * (T::one() - r * r / T::lit(3.0))
        } else {
            T::lit(2.0) * n.atan2(w) / n
        };
        v * factor
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> T {
        let [w, x, y, z] = self.q;
        let n = (x * x + y * y + z * z).sqrt();
        T::lit(2.0) * n.atan2(w)
    }

    pub fn matrix(&self) -> Mat3<T> {
        let [w, x, y, z] = self.q;
        let one = T::one();
        let two = T::lit(2.0);
        Matrix3::new(
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        )
    }

    /// Converts a rotation matrix using the largest-diagonal (Shepperd) branch.
    pub fn from_matrix(m: &Mat3<T>) -> Result<Self> {
        if m.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("Rotation::from_matrix"));
        }
        let one = T::one();
        let quarter = T::lit(0.25);
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let cands = [tr, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        let mut best = 0;
        for i in 1..4 {
            if cands[i] > cands[best] {
                best = i;
            }
        }
        let (w, x, y, z) = match best {
            0 => {
                let s = (one + tr).sqrt() * T::lit(2.0);
                (
                    quarter * s,
                    (m[(2, 1)] - m[(1, 2)]) / s,
                    (m[(0, 2)] - m[(2, 0)]) / s,
                    (m[(1, 0)] - m[(0, 1)]) / s,
                )
            }
            1 => {
                let s = (one + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * T::lit(2.0);
                (
                    (m[(2, 1)] - m[(1, 2)]) / s,
                    quarter * s,
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    (m[(0, 2)] + m[(2, 0)]) / s,
                )
            }
            2 => {
                let s = (one + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * T::lit(2.0);
                (
                    (m[(0, 2)] - m[(2, 0)]) / s,
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    quarter * s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                )
            }
            _ => {
                let s = (one + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * T::lit(2.0);
                (
                    (m[(1, 0)] - m[(0, 1)]) / s,
                    (m[(0, 2)] + m[(2, 0)]) / s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                    quarter * s,
                )
            }
        };
        Self::from_quaternion(w, x, y, z)
    }

    pub fn compose(&self, other: &Self) -> Self {
        let [aw, ax, ay, az] = self.q;
        let [bw, bx, by, bz] = other.q;
        Self::normalized(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }

    pub fn inverse(&self) -> Self {
        let [w, x, y, z] = self.q;
        Self { q: [w, -x, -y, -z] }
    }

    pub fn apply(&self, v: &Vec3<T>) -> Vec3<T> {
        let [w, x, y, z] = self.q;
        let u = Vector3::new(x, y, z);
        let two = T::lit(2.0);
        let t = u.cross(v) * two;
        v + t * w + u.cross(&t)
    }

    /// First-order quaternion update `q (1, delta/2)` followed by renormalization.
    pub fn perturb_first_order(&self, delta: &Vec3<T>) -> Self {
        let half = T::lit(0.5);
        let [w, x, y, z] = self.q;
        let (dx, dy, dz) = (delta.x * half, delta.y * half, delta.z * half);
        Self::normalized(
            w - x * dx - y * dy - z * dz,
            x + w * dx + y * dz - z * dy,
            y + w * dy - x * dz + z * dx,
            z + w * dz + x * dy - y * dx,
        )
    }

    pub fn cast<U: Scalar>(&self) -> Rotation<U> {
        let [w, x, y, z] = self.q;
        Rotation::normalized(
            U::lit(w.as_f64()),
            U::lit(x.as_f64()),
            U::lit(y.as_f64()),
            U::lit(z.as_f64()),
        )
    }
}

impl<T: Scalar> Mul for Rotation<T> {
    type Output = Rotation<T>;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

pub fn exp_so3<T: Scalar>(omega: &Vec3<T>) -> Result<Rotation<T>> {
    Rotation::exp(omega)
}

pub fn log_so3<T: Scalar>(r: &Rotation<T>) -> Vec3<T> {
    r.log()
}

/// Haar-uniform rotation from a normalized 4-dimensional Gaussian.
pub fn random_rotation<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Rotation<T> {
    loop {
        let g: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n2: f64 = g.iter().map(|c| c * c).sum();
        if n2 > 1e-20 {
            return Rotation::normalized(T::lit(g[0]), T::lit(g[1]), T::lit(g[2]), T::lit(g[3]));
        }
    }
}

/// Uniformly distributed unit vector.
pub fn random_unit_vector<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec3<T> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.dot(&v).sqrt();
        if n > 1e-10 {
            return Vector3::new(T::lit(v.x / n), T::lit(v.y / n), T::lit(v.z / n));
        }
    }
}

/// Element of the Lie algebra of SE(3), linear part first.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist<T: Scalar> {
    pub linear: Vec3<T>,
    pub angular: Vec3<T>,
}

impl<T: Scalar> Twist<T> {
    pub fn new(linear: Vec3<T>, angular: Vec3<T>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn to_vector(&self) -> Vector6<T> {
        let (l, a) = (&self.linear, &self.angular);
        Vector6::new(l.x, l.y, l.z, a.x, a.y, a.z)
    }

    /// Component `i` in `(nu_x, nu_y, nu_z, omega_x, omega_y, omega_z)` order.
    pub fn component(&self, i: usize) -> T {
        if i < 3 {
            self.linear[i]
        } else {
            self.angular[i - 3]
        }
    }

    /// Unit twist along basis direction `i`.
    pub fn basis(i: usize) -> Self {
        let mut v = Vector6::zeros();
        v[i] = T::one();
        Self::from_vector(&v)
    }

    pub fn dot(&self, other: &Self) -> T {
        self.linear.dot(&other.linear) + self.angular.dot(&other.angular)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.linear) && all_finite(&self.angular)
    }

    /// Left-multiplies the 6-vector form by `m`.
    pub fn transformed(&self, m: &Mat6<T>) -> Self {
        Self::from_vector(&(m * self.to_vector()))
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.linear * s, self.angular * s)
    }
}

impl<T: Scalar> Add for Twist<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.linear + rhs.linear, self.angular + rhs.angular)
    }
}

impl<T: Scalar> AddAssign for Twist<T> {
    fn add_assign(&mut self, rhs: Self) {
        self.linear += rhs.linear;
        self.angular += rhs.angular;
    }
}

impl<T: Scalar> Sub for Twist<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.linear - rhs.linear, self.angular - rhs.angular)
    }
}

impl<T: Scalar> Neg for Twist<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.linear, -self.angular)
    }
}

impl<T: Scalar> Mul<T> for Twist<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

// V(omega) = I + b [w] + c [w]^2
fn left_jacobian_coeffs<T: Scalar>(theta: T) -> (T, T) {
    let t2 = theta * theta;
    if theta < T::lit(SMALL_ANGLE) {
        let t4 = t2 * t2;
        (
            T::lit(0.5) - t2 / T::lit(24.0) + t4 / T::lit(720.0),
            T::lit(1.0 / 6.0) - t2 / T::lit(120.0) + t4 / T::lit(5040.0),
        )
    } else {
        let sh = (theta * T::lit(0.5)).sin();
        let b = T::lit(2.0) * sh * sh / t2;
        let c = (theta - theta.sin()) / (t2 * theta);
        (b, c)
    }
}

// V(omega)^{-1} = I - [w]/2 + d [w]^2
fn inv_left_jacobian_coeff<T: Scalar>(theta: T) -> T {
    let t2 = theta * theta;
    if theta < T::lit(SMALL_ANGLE) {
        T::lit(1.0 / 12.0) + t2 / T::lit(720.0) + t2 * t2 / T::lit(30240.0)
    } else {
        let sh = (theta * T::lit(0.5)).sin();
        let ratio = theta * theta.sin() / (T::lit(4.0) * sh * sh);
        (T::one() - ratio) / t2
    }
}

/// Left Jacobian `V(omega)` of SO(3).
pub fn so3_left_jacobian<T: Scalar>(omega: &Vec3<T>) -> Mat3<T> {
    let (b, c) = left_jacobian_coeffs(norm3(omega));
    let w = skew(omega);
    Mat3::identity() + w * b + w * w * c
}

pub fn so3_left_jacobian_inv<T: Scalar>(omega: &Vec3<T>) -> Mat3<T> {
    let d = inv_left_jacobian_coeff(norm3(omega));
    let w = skew(omega);
    Mat3::identity() - w * T::lit(0.5) + w * w * d
}

/// Rigid transform `x -> R x + p`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose<T: Scalar> {
    pub translation: Vec3<T>,
    pub rotation: Rotation<T>,
}

impl<T: Scalar> Pose<T> {
    pub fn new(translation: Vec3<T>, rotation: Rotation<T>) -> Self {
        Self { translation, rotation }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), Rotation::identity())
    }

    /// Pure translation `T(p)`.
    pub fn from_translation(p: Vec3<T>) -> Self {
        Self::new(p, Rotation::identity())
    }

    pub fn from_rotation(r: Rotation<T>) -> Self {
        Self::new(Vec3::zeros(), r)
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.translation + self.rotation.apply(&other.translation),
            self.rotation.compose(&other.rotation),
        )
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::new(-r_inv.apply(&self.translation), r_inv)
    }

    pub fn apply(&self, x: &Vec3<T>) -> Vec3<T> {
        self.rotation.apply(x) + self.translation
    }

    pub fn exp(xi: &Twist<T>) -> Result<Self> {
        if !xi.is_finite() {
            return Err(Error::NonFinite("exp_se3"));
        }
        let rotation = Rotation::exp(&xi.angular)?;
        let translation = so3_left_jacobian(&xi.angular) * xi.linear;
        Ok(Self::new(translation, rotation))
    }

    /// Principal logarithm. Fails when the rotation angle reaches `pi - LOG_BRANCH_MARGIN`.
    pub fn log(&self) -> Result<Twist<T>> {
        let angle = self.rotation.angle();
        if angle >= T::PI() - T::lit(LOG_BRANCH_MARGIN) {
            return Err(Error::BranchCut {
                op: "log_se3",
                angle: angle.as_f64(),
            });
        }
        let omega = self.rotation.log();
        let nu = so3_left_jacobian_inv(&omega) * self.translation;
        Ok(Twist::new(nu, omega))
    }

    /// Adjoint matrix `[[R, [p]^ R], [0, R]]` acting on `(nu, omega)`.
    pub fn adjoint(&self) -> Mat6<T> {
        let r = self.rotation.matrix();
        let pr = skew(&self.translation) * r;
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&pr);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        m
    }

    /// Inverse-transpose adjoint `[[R, 0], [[p]^ R, R]]`, which transports scores.
    pub fn adjoint_inv_transpose(&self) -> Mat6<T> {
        let r = self.rotation.matrix();
        let pr = skew(&self.translation) * r;
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&pr);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        m
    }

    /// Maps `(p, R)` to `(s p, R)`, a group automorphism used for non-dimensionalization.
    pub fn scale_translation(&self, s: T) -> Self {
        Self::new(self.translation * s, self.rotation)
    }

    pub fn cast<U: Scalar>(&self) -> Pose<U> {
        Pose::new(self.translation.map(|c| U::lit(c.as_f64())), self.rotation.cast())
    }
}

impl<T: Scalar> Mul for Pose<T> {
    type Output = Pose<T>;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

pub fn exp_se3<T: Scalar>(xi: &Twist<T>) -> Result<Pose<T>> {
    Pose::exp(xi)
}

pub fn log_se3<T: Scalar>(g: &Pose<T>) -> Result<Twist<T>> {
    g.log()
}

/// Translation distance and rotation angle between two poses.
pub fn pose_distance<T: Scalar>(a: &Pose<T>, b: &Pose<T>) -> (T, T) {
    let d = a.translation - b.translation;
    let rel = a.rotation.inverse().compose(&b.rotation);
    (norm3(&d), rel.angle())
}

/// Random pose with Haar rotation and Gaussian translation of the given scale.
pub fn random_pose<T: Scalar, R: Rng + ?Sized>(rng: &mut R, translation_scale: f64) -> Pose<T> {
    let p = Vector3::new(
        T::lit(rng.sample::<f64, _>(StandardNormal) * translation_scale),
        T::lit(rng.sample::<f64, _>(StandardNormal) * translation_scale),
        T::lit(rng.sample::<f64, _>(StandardNormal) * translation_scale),
    );
    Pose::new(p, random_rotation(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    type P = Pose<f64>;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn rot_close(a: &Rotation<f64>, b: &Rotation<f64>, tol: f64) {
        assert!((a.matrix() - b.matrix()).abs().max() < tol, "{a:?} vs {b:?}");
    }

    fn random_tangent(rng: &mut ChaCha8Rng, max_angle: f64) -> Vec3<f64> {
        let axis = random_unit_vector::<f64, _>(rng);
        let angle = rng.random_range(1e-3..max_angle);
        axis * angle
    }

    #[test]
    fn exp_so3_zero_is_identity() {
        let r = exp_so3(&Vec3::<f64>::zeros()).unwrap();
        assert_eq!(r, Rotation::identity());
    }

    #[test]
    fn exp_so3_quarter_turn_about_z() {
        let r = exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2)).unwrap();
        let y = r.apply(&Vec3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(y, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn exp_so3_rejects_nan() {
        assert!(exp_so3(&Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn log_so3_half_turn_about_x() {
        let r = Rotation::from_axis_angle(&Vec3::new(1.0, 0.0, 0.0), PI).unwrap();
        assert_abs_diff_eq!(r.log(), Vec3::new(PI, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(log_so3(&Rotation::<f64>::identity()), Vec3::zeros());
    }

    #[test]
    fn so3_round_trips() {
        let mut rng = rng();
        for _ in 0..500 {
            let w = random_tangent(&mut rng, PI - 1e-3);
            let back = exp_so3(&w).unwrap().log();
            assert_abs_diff_eq!(back, w, epsilon = 1e-10);
            let r = random_rotation::<f64, _>(&mut rng);
            rot_close(&exp_so3(&r.log()).unwrap(), &r, 1e-10);
        }
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        for &a in &[1e-9, 5e-7, 1e-6, 2e-6, 1e-4] {
            let w = Vec3::new(a, -0.5 * a, 0.25 * a);
            assert_abs_diff_eq!(exp_so3(&w).unwrap().log(), w, epsilon = 1e-18_f64.max(a * 1e-12));
            let xi = Twist::new(Vec3::new(0.3, -1.0, 2.0), w);
            let back = Pose::exp(&xi).unwrap().log().unwrap();
            assert_abs_diff_eq!(back.linear, xi.linear, epsilon = 1e-13);
        }
    }

    #[test]
    fn quaternion_invariants_hold() {
        let mut rng = rng();
        for _ in 0..200 {
            let a = random_rotation::<f64, _>(&mut rng);
            let b = random_rotation::<f64, _>(&mut rng);
            for r in [a, b, a * b, a.inverse(), exp_so3(&a.log()).unwrap()] {
                let q = r.quaternion();
                let n: f64 = q.iter().map(|c| c * c).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
                assert!(q[0] >= 0.0);
            }
        }
        let flipped = Rotation::from_quaternion(-0.5, 0.5, 0.5, 0.5).unwrap();
        assert!(flipped.quaternion()[0] > 0.0);
        assert!(Rotation::<f64>::from_quaternion(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn matrix_conversion_round_trip_near_pi() {
        let mut rng = rng();
        for _ in 0..200 {
            let axis = random_unit_vector::<f64, _>(&mut rng);
            let angle = rng.random_range(PI - 1e-4..PI);
            let r = Rotation::from_axis_angle(&axis, angle).unwrap();
            let back = Rotation::from_matrix(&r.matrix()).unwrap();
            rot_close(&back, &r, 1e-12);
        }
    }

    #[test]
    fn exp_se3_pure_translation() {
        let g = exp_se3(&Twist::new(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros())).unwrap();
        assert_eq!(g.translation, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(g.rotation, Rotation::identity());
    }

    #[test]
    fn exp_se3_quarter_turn_with_translation() {
        let g = exp_se3(&Twist::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, FRAC_PI_2))).unwrap();
        // sin(theta)/theta and (1 - cos(theta))/theta at theta = pi/2
        let expected = 2.0 / PI;
        assert_abs_diff_eq!(g.translation, Vec3::new(expected, expected, 0.0), epsilon = 1e-15);
        rot_close(
            &g.rotation,
            &Rotation::from_axis_angle(&Vec3::z(), FRAC_PI_2).unwrap(),
            1e-15,
        );
    }

    #[test]
    fn se3_round_trips() {
        let mut rng = rng();
        for _ in 0..500 {
            let xi = Twist::new(
                Vec3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
                random_tangent(&mut rng, PI - 1e-3),
            );
            let back = exp_se3(&xi).unwrap().log().unwrap();
            assert!((back - xi).norm() < 1e-10, "{xi:?} -> {back:?}");
        }
    }

    #[test]
    fn log_se3_identity_and_translation() {
        assert_eq!(P::identity().log().unwrap(), Twist::zero());
        let p = Vec3::new(0.5, -2.0, 7.0);
        let xi = P::from_translation(p).log().unwrap();
        assert_eq!(xi.linear, p);
        assert_eq!(xi.angular, Vec3::zeros());
    }

    #[test]
    fn log_se3_rejects_branch_cut() {
        let g = P::from_rotation(Rotation::from_axis_angle(&Vec3::x(), PI).unwrap());
        assert!(matches!(g.log(), Err(Error::BranchCut { .. })));
        let g = P::from_rotation(Rotation::from_axis_angle(&Vec3::y(), PI - 1e-7).unwrap());
        assert!(g.log().is_err());
    }

    #[test]
    fn group_axioms() {
        let mut rng = rng();
        for _ in 0..200 {
            let a: P = random_pose(&mut rng, 2.0);
            let b: P = random_pose(&mut rng, 2.0);
            let c: P = random_pose(&mut rng, 2.0);
            let x = Vec3::new(0.3, -0.7, 1.9);
            assert_eq!(a.compose(&P::identity()).translation, a.translation);
            let e = a * a.inverse();
            assert!(e.translation.abs().max() < 1e-12);
            assert!(e.rotation.angle() < 1e-12);
            assert_abs_diff_eq!(a.inverse().apply(&a.apply(&x)), x, epsilon = 1e-12);
            let l = (a * b) * c;
            let r = a * (b * c);
            assert_abs_diff_eq!(l.translation, r.translation, epsilon = 1e-12);
            rot_close(&l.rotation, &r.rotation, 1e-12);
            assert_abs_diff_eq!((a * b).apply(&x), a.apply(&b.apply(&x)), epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_special_cases() {
        assert_eq!(P::identity().adjoint(), Mat6::identity());
        let r = Rotation::from_axis_angle(&Vec3::new(1.0, 2.0, -1.0), 0.8).unwrap();
        let ad = P::from_rotation(r).adjoint();
        let rm = r.matrix();
        assert_eq!(ad.fixed_view::<3, 3>(0, 0).into_owned(), rm);
        assert_eq!(ad.fixed_view::<3, 3>(3, 3).into_owned(), rm);
        assert_eq!(ad.fixed_view::<3, 3>(0, 3).into_owned(), Mat3::zeros());
        assert_eq!(ad.fixed_view::<3, 3>(3, 0).into_owned(), Mat3::zeros());
    }

    #[test]
    fn adjoint_homomorphism_and_inverse_transpose() {
        let mut rng = rng();
        for _ in 0..200 {
            let a: P = random_pose(&mut rng, 2.0);
            let b: P = random_pose(&mut rng, 2.0);
            let lhs = (a * b).adjoint();
            let rhs = a.adjoint() * b.adjoint();
            assert!((lhs - rhs).abs().max() < 1e-10);
            let it = a.adjoint().try_inverse().unwrap().transpose();
            assert!((it - a.adjoint_inv_transpose()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn adjoint_conjugation_identity() {
        let mut rng = rng();
        for _ in 0..200 {
            let g: P = random_pose(&mut rng, 2.0);
            let xi = Twist::new(
                Vec3::new(0.01, -0.02, 0.015),
                random_unit_vector::<f64, _>(&mut rng) * 0.02,
            );
            let h = P::exp(&xi).unwrap();
            let lhs = xi.transformed(&g.adjoint());
            let rhs = (g * h * g.inverse()).log().unwrap();
            assert!((lhs - rhs).norm() < 1e-8);
        }
    }

    #[test]
    fn random_rotation_is_deterministic() {
        let a = random_rotation::<f64, _>(&mut ChaCha8Rng::seed_from_u64(3));
        let b = random_rotation::<f64, _>(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn random_rotation_haar_moments() {
        let mut rng = rng();
        let n = 100_000;
        let mut mean = Mat3::<f64>::zeros();
        let mut angles = Vec::with_capacity(n);
        for _ in 0..n {
            let r = random_rotation::<f64, _>(&mut rng);
            mean += r.matrix();
            angles.push(r.angle());
        }
        mean /= n as f64;
        assert!(mean.abs().max() < 0.02);
        // Haar angle marginal (1 - cos)/pi has CDF (theta - sin theta)/pi.
        let ks = crate::stats::ks_statistic(&mut angles, |t| (t - t.sin()) / PI);
        assert!(ks < 0.01, "ks = {ks}");
    }

    #[test]
    fn f32_instantiation() {
        let w = Vec3::new(0.1f32, 0.2, -0.3);
        let r = exp_so3(&w).unwrap();
        assert!((r.log() - w).abs().max() < 1e-6);
    }
}
