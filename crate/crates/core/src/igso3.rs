//! Isotropic Gaussian on SO(3).
//!
//! The density relative to the normalized Haar measure is the truncated series
//!
//! ```text
//! f(theta) = sum_l (2l + 1) exp(-eps l (l + 1)) sin((l + 1/2) theta) / sin(theta / 2)
//! ```
//!
//! and the rotation angle of a sample has density `f(theta) (1 - cos theta) / pi`.
//! The score is the Lie derivative of `ln f` along right perturbations
//! `R exp(s e_i)`; because `f` depends on the angle only it equals
//! `f'(theta) / f(theta)` times the rotation axis.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lie::{norm3, random_unit_vector, Rotation, Vec3, LOG_BRANCH_MARGIN};
use crate::scalar::Scalar;

pub const DEFAULT_L_MAX: usize = 2000;
pub const CDF_GRID_NODES: usize = 4096;

// Below these angles the closed forms are replaced by cumulative character sums.
const DENSITY_SMALL_ANGLE: f64 = 1e-4;
const SCORE_SMALL_ANGLE: f64 = 1e-3;
// Below this concentration the sampler draws the tangent vector from N(0, 2 eps I);
// the grid would resolve the angle with only a handful of nodes.
pub const TANGENT_SAMPLER_EPS: f64 = 1e-4;

/// Concentration `eps` and truncation order of the series.
#[derive(Clone, Debug, PartialEq)]
pub struct IgParams<T: Scalar> {
    eps: T,
    l_max: usize,
    // (2l + 1) exp(-eps l (l + 1)) for the terms that are numerically relevant
    weights: Vec<T>,
    // f(0), used to estimate the cancellation noise floor of the series
    peak: T,
}

impl<T: Scalar> IgParams<T> {
    pub fn new(eps: T, l_max: usize) -> Result<Self> {
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        if l_max < 1 {
            return Err(Error::InvalidParameter("l_max must be at least 1".into()));
        }
        let e = eps.as_f64();
        let mut limit = l_max;
        if e < 0.01 {
            while {
                let l = limit as f64;
                (2.0 * l + 1.0).powi(2) * (-e * l * (l + 1.0)).exp() >= 1e-12
            } {
                limit += 1;
            }
        }
        // Past the peak of l^3 exp(-eps l^2), terms that cannot reach 1e-25 are dropped;
        // this never changes a double-precision result.
        let past_peak = (1.5 / e).sqrt() + 2.0;
        let mut weights = Vec::new();
        let mut peak = T::zero();
        for l in 0..=limit {
            let lf = l as f64;
            let w = (2.0 * lf + 1.0) * (-e * lf * (lf + 1.0)).exp();
            if lf > past_peak && w * (2.0 * lf + 1.0).powi(2) < 1e-25 {
                break;
            }
            weights.push(T::lit(w));
            peak += T::lit(w * (2.0 * lf + 1.0));
        }
        Ok(Self {
            eps,
            l_max,
            weights,
            peak,
        })
    }

    pub fn with_default_truncation(eps: T) -> Result<Self> {
        Self::new(eps, DEFAULT_L_MAX)
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Number of series terms actually evaluated.
    pub fn terms(&self) -> usize {
        self.weights.len()
    }

    fn noise_floor(&self) -> T {
        T::epsilon() * T::lit(256.0) * self.peak
    }

    fn series(&self, theta: T) -> T {
        if theta < T::lit(DENSITY_SMALL_ANGLE) {
            // character chi_l = 1 + 2 sum_{k<=l} cos(k theta)
            let mut chi = T::one();
            let mut sum = self.weights[0];
            for (l, &w) in self.weights.iter().enumerate().skip(1) {
                chi += T::lit(2.0) * (T::from_usize_lossy(l) * theta).cos();
                sum += w * chi;
            }
            sum
        } else {
            let s = (theta * T::lit(0.5)).sin();
            let mut sum = T::zero();
            for (l, &w) in self.weights.iter().enumerate() {
                sum += w * ((T::from_usize_lossy(l) + T::lit(0.5)) * theta).sin();
            }
            sum / s
        }
    }

    // f'(theta) for theta >= SCORE_SMALL_ANGLE
    fn series_derivative(&self, theta: T) -> T {
        let sh = (theta * T::lit(0.5)).sin();
        let denom = -T::lit(2.0) * sh * sh; // cos(theta) - 1
        let mut sum = T::zero();
        for (l, &w) in self.weights.iter().enumerate().skip(1) {
            let lf = T::from_usize_lossy(l);
            sum += w * ((lf + T::one()) * (lf * theta).sin() - lf * ((lf + T::one()) * theta).sin());
        }
        sum / denom
    }

    // f'(theta) / theta, finite at theta = 0
    fn series_derivative_over_angle(&self, theta: T) -> T {
        let mut acc = T::zero(); // sum_{k<=l} k^2 sinc(k theta)
        let mut sum = T::zero();
        for (l, &w) in self.weights.iter().enumerate().skip(1) {
            let k = T::from_usize_lossy(l);
            let x = k * theta;
            let sinc = if x.abs() < T::lit(1e-8) {
                T::one() - x * x / T::lit(6.0)
            } else {
                x.sin() / x
            };
            acc += k * k * sinc;
            sum += w * acc;
        }
        -T::lit(2.0) * sum
    }
}

fn check_angle<T: Scalar>(theta: T) -> Result<T> {
    let pi = T::PI();
    if !theta.is_finite() || theta < T::zero() || theta > pi + T::lit(1e-12) {
        return Err(Error::AngleOutOfRange(theta.as_f64()));
    }
    Ok(theta.min(pi))
}

/// Density at rotation angle `theta` relative to the normalized Haar measure.
///
/// Values below the cancellation noise floor of the series are returned as 0.
pub fn igso3_density<T: Scalar>(theta: T, params: &IgParams<T>) -> Result<T> {
    let theta = check_angle(theta)?;
    let f = params.series(theta);
    Ok(if f > params.noise_floor() { f } else { T::zero() })
}

/// Natural log of [`igso3_density`]; `-inf` where the density underflows.
pub fn igso3_log_density<T: Scalar>(theta: T, params: &IgParams<T>) -> Result<T> {
    Ok(igso3_density(theta, params)?.ln())
}

/// Probability density of the rotation angle, `f(theta) (1 - cos theta) / pi`.
pub fn igso3_angle_pdf<T: Scalar>(theta: T, params: &IgParams<T>) -> Result<T> {
    let f = igso3_density(theta, params)?;
    let sh = (theta * T::lit(0.5)).sin();
    Ok(f * T::lit(2.0) * sh * sh / T::PI())
}

/// Lie-derivative score of `ln IG(R; eps)` as an angular vector.
pub fn igso3_score<T: Scalar>(r: &Rotation<T>, params: &IgParams<T>) -> Result<Vec3<T>> {
    let omega = r.log();
    let theta = omega.dot(&omega).sqrt();
    if theta > T::PI() - T::lit(LOG_BRANCH_MARGIN) {
        return Err(Error::BranchCut {
            op: "igso3_score",
            angle: theta.as_f64(),
        });
    }
    let f = params.series(theta);
    if !(f > params.noise_floor()) {
        return Err(Error::DensityUnderflow("igso3_score"));
    }
    if theta < T::lit(SCORE_SMALL_ANGLE) {
        Ok(omega * (params.series_derivative_over_angle(theta) / f))
    } else {
        Ok(omega * (params.series_derivative(theta) / (f * theta)))
    }
}

/// Inverse-CDF sampler over a fixed angle grid.
#[derive(Clone, Debug)]
pub struct Igso3Sampler<T: Scalar> {
    params: IgParams<T>,
    grid: Vec<T>,
    cdf: Vec<T>,
}

impl<T: Scalar> Igso3Sampler<T> {
    pub fn new(params: IgParams<T>) -> Result<Self> {
        Self::with_nodes(params, CDF_GRID_NODES)
    }

    /// Trapezoidal CDF on `nodes` equally spaced angles over `[0, pi]`.
    pub fn with_nodes(params: IgParams<T>, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidParameter("CDF grid needs at least 2 nodes".into()));
        }
        if params.eps().as_f64() < TANGENT_SAMPLER_EPS {
            return Ok(Self {
                params,
                grid: Vec::new(),
                cdf: Vec::new(),
            });
        }
        let h = T::PI() / T::from_usize_lossy(nodes - 1);
        let grid: Vec<T> = (0..nodes).map(|i| T::from_usize_lossy(i) * h).collect();
        let pdf = grid
            .iter()
            .map(|&t| igso3_angle_pdf(t, &params))
            .collect::<Result<Vec<T>>>()?;
        let mut cdf = Vec::with_capacity(nodes);
        cdf.push(T::zero());
        for i in 1..nodes {
            let prev = cdf[i - 1];
            cdf.push(prev + h * T::lit(0.5) * (pdf[i - 1] + pdf[i]));
        }
        let total = cdf[nodes - 1];
        if !(total > T::zero()) {
            return Err(Error::DensityUnderflow("Igso3Sampler"));
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { params, grid, cdf })
    }

    pub fn params(&self) -> &IgParams<T> {
        &self.params
    }

    /// Maps a uniform variate in `[0, 1]` to an angle by linear interpolation.
    ///
    /// Not available below [`TANGENT_SAMPLER_EPS`], where no table is built; returns 0.
    pub fn angle_from_uniform(&self, u: T) -> T {
        if self.is_tangent() {
            return T::zero();
        }
        let i = self.cdf.partition_point(|&c| c <= u);
        if i == 0 {
            return self.grid[0];
        }
        if i >= self.cdf.len() {
            return self.grid[self.grid.len() - 1];
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (t0, t1) = (self.grid[i - 1], self.grid[i]);
        if c1 <= c0 {
            return t0;
        }
        t0 + (t1 - t0) * (u - c0) / (c1 - c0)
    }

    fn is_tangent(&self) -> bool {
        self.grid.is_empty()
    }

    fn tangent_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3<T> {
        let sigma = (2.0 * self.params.eps().as_f64()).sqrt();
        let mut v = [0.0f64; 3];
        v.iter_mut()
            .for_each(|c| *c = sigma * rng.sample::<f64, _>(StandardNormal));
        Vec3::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))
    }

    pub fn sample_angle<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        if self.is_tangent() {
            return norm3(&self.tangent_draw(rng));
        }
        let u: f64 = rng.random();
        self.angle_from_uniform(T::lit(u))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Rotation<T> {
        if self.is_tangent() {
            return Rotation::exp(&self.tangent_draw(rng)).expect("finite tangent");
        }
        let angle = self.sample_angle(rng);
        let axis: Vec3<T> = random_unit_vector(rng);
        Rotation::exp(&(axis * angle)).expect("finite tangent")
    }
}

/// Draws one rotation. Builds the CDF table on every call; reuse an
/// [`Igso3Sampler`] for repeated draws.
pub fn igso3_sample<T: Scalar, R: Rng + ?Sized>(params: &IgParams<T>, rng: &mut R) -> Result<Rotation<T>> {
    Ok(Igso3Sampler::new(params.clone())?.sample(rng))
}

/// CDF of the rotation angle tabulated by composite Simpson quadrature.
#[derive(Clone, Debug)]
pub struct AngleCdf {
    h: f64,
    values: Vec<f64>,
}

impl AngleCdf {
    /// `intervals` Simpson panels over `[0, pi]`.
    pub fn new(params: &IgParams<f64>, intervals: usize) -> Result<Self> {
        let intervals = intervals.max(1);
        let h = PI / intervals as f64;
        let pdf = |t: f64| igso3_angle_pdf(t.min(PI), params);
        let mut values = Vec::with_capacity(intervals + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for i in 0..intervals {
            let a = i as f64 * h;
            acc += h / 6.0 * (pdf(a)? + 4.0 * pdf(a + 0.5 * h)? + pdf(a + h)?);
            values.push(acc);
        }
        Ok(Self { h, values })
    }

    /// Unnormalized total mass; 1 up to quadrature and truncation error.
    pub fn total(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn cdf(&self, theta: f64) -> f64 {
        let x = (theta / self.h).clamp(0.0, (self.values.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let f = x - i as f64;
        (self.values[i] * (1.0 - f) + self.values[i + 1] * f) / self.total()
    }
}
