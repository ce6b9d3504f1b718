//! Real irreducible representations of SO(3).
//!
//! Basis conventions:
//!
//! * type `l` vectors have `2l + 1` components ordered `m = -l..=l`, built from
//!   real spherical harmonics without the Condon-Shortley phase;
//! * type 1 is reordered to `(x, y, z)` so that `wigner_d(1, R) == R`;
//! * [`spherical_harmonics`] is normalized to unit Euclidean norm for every
//!   direction, i.e. the usual orthonormal harmonics times `sqrt(4 pi / (2l + 1))`.
//!
//! Wigner-D matrices are matrix exponentials of the angular-momentum generators
//! of this basis. Generators and Clebsch-Gordan tensors are derived once in
//! `f64` and cached.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{Rotation, Vec3};
use crate::scalar::Scalar;

/// Largest supported irrep type.
pub const L_MAX_IRREPS: usize = 6;

/// Ordered list of `(l, multiplicity)` entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct IrrepsLayout {
    entries: Vec<(usize, usize)>,
}

/// One multiplicity instance of an irrep inside a layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub l: usize,
    pub offset: usize,
}

impl Slot {
    pub fn dim(&self) -> usize {
        2 * self.l + 1
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim()
    }
}

impl IrrepsLayout {
    pub fn new(entries: Vec<(usize, usize)>) -> Result<Self> {
        for &(l, mult) in &entries {
            if l > L_MAX_IRREPS {
                return Err(Error::IrrepTooLarge { l, max: L_MAX_IRREPS });
            }
            if mult == 0 {
                return Err(Error::InvalidLayout(format!("zero multiplicity for l={l}")));
            }
        }
        Ok(Self { entries })
    }

    /// A single scalar channel.
    pub fn scalar() -> Self {
        Self { entries: vec![(0, 1)] }
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.iter().map(|&(l, m)| m * (2 * l + 1)).sum()
    }

    pub fn max_l(&self) -> usize {
        self.entries.iter().map(|&(l, _)| l).max().unwrap_or(0)
    }

    pub fn num_slots(&self) -> usize {
        self.entries.iter().map(|&(_, m)| m).sum()
    }

    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::with_capacity(self.num_slots());
        let mut offset = 0;
        for &(l, mult) in &self.entries {
            for _ in 0..mult {
                out.push(Slot { l, offset });
                offset += 2 * l + 1;
            }
        }
        out
    }
}

impl TryFrom<Vec<(usize, usize)>> for IrrepsLayout {
    type Error = Error;
    fn try_from(v: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<IrrepsLayout> for Vec<(usize, usize)> {
    fn from(l: IrrepsLayout) -> Self {
        l.entries
    }
}

/// Coefficients laid out according to an [`IrrepsLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct IrrepsVector<T: Scalar> {
    layout: IrrepsLayout,
    coeffs: Vec<T>,
}

impl<T: Scalar> IrrepsVector<T> {
    pub fn new(layout: IrrepsLayout, coeffs: Vec<T>) -> Result<Self> {
        if coeffs.len() != layout.dim() {
            return Err(Error::LayoutMismatch {
                expected: layout.dim(),
                got: coeffs.len(),
            });
        }
        Ok(Self { layout, coeffs })
    }

    pub fn zeros(layout: IrrepsLayout) -> Self {
        let coeffs = vec![T::zero(); layout.dim()];
        Self { layout, coeffs }
    }

    pub fn layout(&self) -> &IrrepsLayout {
        &self.layout
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    pub fn block(&self, slot: &Slot) -> &[T] {
        &self.coeffs[slot.range()]
    }

    pub fn norm(&self) -> T {
        self.coeffs.iter().fold(T::zero(), |a, &c| a + c * c).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }
}

// ---------------------------------------------------------------------------
// Spherical harmonics

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Harmonics for every `l <= lmax` in the standard `m = -l..=l` ordering
/// (type 1 is `(y, z, x)` here). `u` must be a unit vector.
fn sh_standard<T: Scalar>(lmax: usize, u: &Vec3<T>) -> Vec<Vec<T>> {
    let (x, y, z) = (u.x, u.y, u.z);
    let mut out: Vec<Vec<T>> = (0..=lmax).map(|l| vec![T::zero(); 2 * l + 1]).collect();
    // cos/sin parts of (x + iy)^m
    let mut cm = T::one();
    let mut sm = T::zero();
    let mut pmm = T::one(); // (2m - 1)!!
    for m in 0..=lmax {
        if m > 0 {
            let (c, s) = (x * cm - y * sm, x * sm + y * cm);
            cm = c;
            sm = s;
            pmm *= T::from_usize_lossy(2 * m - 1);
        }
        // Associated Legendre without the (1 - z^2)^{m/2} factor.
        let mut p_prev = T::zero();
        let mut p_cur = pmm;
        for l in m..=lmax {
            if l > m {
                let p_next = if l == m + 1 {
                    T::from_usize_lossy(2 * m + 1) * z * pmm
                } else {
                    (T::from_usize_lossy(2 * l - 1) * z * p_cur - T::from_usize_lossy(l + m - 1) * p_prev)
                        / T::from_usize_lossy(l - m)
                };
                p_prev = p_cur;
                p_cur = p_next;
            }
            if m == 0 {
                out[l][l] = p_cur;
            } else {
                let norm = T::lit((2.0 * factorial(l - m) / factorial(l + m)).sqrt());
                out[l][l + m] = norm * p_cur * cm;
                out[l][l - m] = norm * p_cur * sm;
            }
        }
    }
    out
}

fn to_output_basis<T: Scalar>(l: usize, mut v: Vec<T>) -> Vec<T> {
    if l == 1 {
        // (y, z, x) -> (x, y, z)
        v = vec![v[2], v[0], v[1]];
    }
    v
}

fn check_unit<T: Scalar>(u: &Vec3<T>) -> Result<()> {
    let n = u.dot(u).sqrt();
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
    if !n.is_finite() || (n - T::one()).abs() > tol {
        return Err(Error::NotUnit(n.as_f64()));
    }
    Ok(())
}

/// Real spherical harmonics of type `l` at unit direction `u`, unit-norm.
pub fn spherical_harmonics<T: Scalar>(l: usize, u: &Vec3<T>) -> Result<Vec<T>> {
    if l > L_MAX_IRREPS {
        return Err(Error::IrrepTooLarge { l, max: L_MAX_IRREPS });
    }
    check_unit(u)?;
    let mut all = sh_standard(l, u);
    Ok(to_output_basis(l, all.pop().unwrap()))
}

/// Harmonics for every `l <= lmax` at once.
pub fn spherical_harmonics_upto<T: Scalar>(lmax: usize, u: &Vec3<T>) -> Result<Vec<Vec<T>>> {
    if lmax > L_MAX_IRREPS {
        return Err(Error::IrrepTooLarge {
            l: lmax,
            max: L_MAX_IRREPS,
        });
    }
    check_unit(u)?;
    Ok(sh_standard(lmax, u)
        .into_iter()
        .enumerate()
        .map(|(l, v)| to_output_basis(l, v))
        .collect())
}

// ---------------------------------------------------------------------------
// Generators

/// Angular-momentum generators `G_x, G_y, G_z` of type `l`, satisfying
/// `Y(exp(s e_a) u) = (I + s G_a) Y(u) + O(s^2)`.
pub fn generators(l: usize) -> Result<&'static [DMatrix<f64>; 3]> {
    if l > L_MAX_IRREPS {
        return Err(Error::IrrepTooLarge { l, max: L_MAX_IRREPS });
    }
    static GENS: OnceLock<Vec<[DMatrix<f64>; 3]>> = OnceLock::new();
    Ok(&GENS.get_or_init(|| (0..=L_MAX_IRREPS).map(build_generators).collect())[l])
}

fn sample_directions(n: usize) -> Vec<Vec3<f64>> {
    // Fibonacci lattice, slightly tilted to avoid the poles.
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64 + 0.3;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn build_generators(l: usize) -> [DMatrix<f64>; 3] {
    let d = 2 * l + 1;
    // z generator in the standard basis: rotating by a about z shifts phi by a.
    let mut gz = DMatrix::<f64>::zeros(d, d);
    for m in 1..=l {
        gz[(l + m, l - m)] = -(m as f64);
        gz[(l - m, l + m)] = m as f64;
    }
    // D(P) for the cyclic permutation P u = (u_z, u_x, u_y), which maps z->x->y->z.
    let dirs = sample_directions(4 * d + 8);
    let mut y_u = DMatrix::<f64>::zeros(d, dirs.len());
    let mut y_pu = DMatrix::<f64>::zeros(d, dirs.len());
    for (k, u) in dirs.iter().enumerate() {
        let pu = Vector3::new(u.z, u.x, u.y);
        let a = sh_standard(l, u).pop().unwrap();
        let b = sh_standard(l, &pu).pop().unwrap();
        for i in 0..d {
            y_u[(i, k)] = a[i];
            y_pu[(i, k)] = b[i];
        }
    }
    let pinv = y_u
        .clone()
        .pseudo_inverse(1e-12)
        .expect("harmonic sample matrix has full row rank");
    let dp = &y_pu * pinv;
    let gx = &dp * &gz * dp.transpose();
    let gy = &dp * &gx * dp.transpose();
    let mut basis = DMatrix::<f64>::identity(d, d);
    if l == 1 {
        // rows: output (x, y, z) <- standard (y, z, x)
        basis = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
    let finish = |g: DMatrix<f64>| {
        let g = &basis * g * basis.transpose();
        let mut a = (&g - g.transpose()) * 0.5;
        a.iter_mut().for_each(|c| {
            if c.abs() < 1e-13 {
                *c = 0.0;
            }
        });
        a
    };
    [finish(gx), finish(gy), finish(gz)]
}

fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, &c| a.max(c.abs()))
}

/// Matrix exponential by scaling and squaring with a Taylor core.
fn expm<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().fold(T::zero(), |s, &c| s + c.abs()))
        .fold(T::zero(), |m, c| m.max(c));
    let mut squarings = 0i32;
    let mut scale = T::one();
    while norm1 * scale > T::lit(0.5) {
        scale *= T::lit(0.5);
        squarings += 1;
    }
    let x = a * scale;
    let mut result = DMatrix::<T>::identity(n, n);
    let mut term = DMatrix::<T>::identity(n, n);
    for k in 1..=40 {
        term = &term * &x * (T::one() / T::from_usize_lossy(k));
        result += &term;
        if max_abs(&term) < T::epsilon() * T::lit(1e-3) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn wigner_d_via_generators<T: Scalar>(l: usize, r: &Rotation<T>) -> Result<DMatrix<T>> {
    let gens = generators(l)?;
    let w = r.log();
    let d = 2 * l + 1;
    let mut a = DMatrix::<T>::zeros(d, d);
    for (axis, g) in gens.iter().enumerate() {
        for (dst, &src) in a.iter_mut().zip(g.iter()) {
            *dst += w[axis] * T::lit(src);
        }
    }
    Ok(expm(&a))
}

/// Real Wigner-D matrix of type `l`.
pub fn wigner_d<T: Scalar>(l: usize, r: &Rotation<T>) -> Result<DMatrix<T>> {
    match l {
        0 => Ok(DMatrix::from_element(1, 1, T::one())),
        1 => {
            let m = r.matrix();
            Ok(DMatrix::from_fn(3, 3, |i, j| m[(i, j)]))
        }
        _ if l > L_MAX_IRREPS => Err(Error::IrrepTooLarge { l, max: L_MAX_IRREPS }),
        _ => wigner_d_via_generators(l, r),
    }
}

/// Wigner-D matrices of one rotation for every type up to `max_l`.
#[derive(Clone, Debug)]
pub struct WignerSet<T: Scalar> {
    blocks: Vec<DMatrix<T>>,
}

impl<T: Scalar> WignerSet<T> {
    pub fn new(max_l: usize, r: &Rotation<T>) -> Result<Self> {
        let blocks = (0..=max_l).map(|l| wigner_d(l, r)).collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn block(&self, l: usize) -> &DMatrix<T> {
        &self.blocks[l]
    }

    pub fn max_l(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn apply(&self, v: &IrrepsVector<T>) -> Result<IrrepsVector<T>> {
        if v.layout.max_l() > self.max_l() {
            return Err(Error::IrrepTooLarge {
                l: v.layout.max_l(),
                max: self.max_l(),
            });
        }
        let mut out = vec![T::zero(); v.coeffs.len()];
        for slot in v.layout.slots() {
            let d = &self.blocks[slot.l];
            let src = v.block(&slot);
            for i in 0..slot.dim() {
                let mut acc = T::zero();
                for j in 0..slot.dim() {
                    acc += d[(i, j)] * src[j];
                }
                out[slot.offset + i] = acc;
            }
        }
        Ok(IrrepsVector {
            layout: v.layout.clone(),
            coeffs: out,
        })
    }
}

/// Applies the block-diagonal representation of `r` to `v`.
pub fn rep_apply<T: Scalar>(layout: &IrrepsLayout, r: &Rotation<T>, v: &IrrepsVector<T>) -> Result<IrrepsVector<T>> {
    if &v.layout != layout {
        return Err(Error::LayoutMismatch {
            expected: layout.dim(),
            got: v.layout.dim(),
        });
    }
    WignerSet::new(layout.max_l(), r)?.apply(v)
}

// ---------------------------------------------------------------------------
// Clebsch-Gordan contraction to type 1

/// Coupling tensor `C[k][i][j]` mapping `l1 (x) l2 -> 1`, unit Frobenius norm.
///
/// The overall sign makes the first non-negligible entry positive. For the
/// `0 (x) 1` path this gives `C[k][0][j] = delta_kj / sqrt(3)`, so the contraction
/// of a scalar `a` with a vector `u` is `a u / sqrt(3)`.
#[derive(Clone, Debug)]
pub struct CgTensor {
    pub l1: usize,
    pub l2: usize,
    data: Vec<f64>,
}

impl CgTensor {
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        let (d1, d2) = (2 * self.l1 + 1, 2 * self.l2 + 1);
        self.data[(k * d1 + i) * d2 + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Whether `l1 (x) l2` contains a type-1 component.
pub fn couples_to_one(l1: usize, l2: usize) -> bool {
    l1.abs_diff(l2) <= 1 && l1 + l2 >= 1
}

/// Cached coupling tensor for `l1 (x) l2 -> 1`.
pub fn cg_tensor(l1: usize, l2: usize) -> Result<&'static CgTensor> {
    if l1 > L_MAX_IRREPS || l2 > L_MAX_IRREPS {
        return Err(Error::IrrepTooLarge {
            l: l1.max(l2),
            max: L_MAX_IRREPS,
        });
    }
    if !couples_to_one(l1, l2) {
        return Err(Error::InvalidLayout(format!("{l1} x {l2} has no type-1 path")));
    }
    static CACHE: [[OnceLock<CgTensor>; L_MAX_IRREPS + 1]; L_MAX_IRREPS + 1] =
        [const { [const { OnceLock::new() }; L_MAX_IRREPS + 1] }; L_MAX_IRREPS + 1];
    Ok(CACHE[l1][l2].get_or_init(|| solve_cg(l1, l2)))
}

// Null space of C (G1 (x) I + I (x) G2) - G_out C = 0 over the three generators.
fn solve_cg(l1: usize, l2: usize) -> CgTensor {
    let (d1, d2) = (2 * l1 + 1, 2 * l2 + 1);
    let n = 3 * d1 * d2;
    let idx = |k: usize, i: usize, j: usize| (k * d1 + i) * d2 + j;
    let g_out = generators(1).unwrap();
    let g1 = generators(l1).unwrap();
    let g2 = generators(l2).unwrap();
    let mut a = DMatrix::<f64>::zeros(3 * n, n);
    for ax in 0..3 {
        for k in 0..3 {
            for i in 0..d1 {
                for j in 0..d2 {
                    let row = ax * n + idx(k, i, j);
                    for kk in 0..3 {
                        a[(row, idx(kk, i, j))] += g_out[ax][(k, kk)];
                    }
                    for ii in 0..d1 {
                        a[(row, idx(k, ii, j))] -= g1[ax][(ii, i)];
                    }
                    for jj in 0..d2 {
                        a[(row, idx(k, i, jj))] -= g2[ax][(jj, j)];
                    }
                }
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let (min_i, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .unwrap();
    let mut data: Vec<f64> = v_t.row(min_i).iter().copied().collect();
    let max = data.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for c in data.iter_mut() {
        if c.abs() < 1e-13 * max {
            *c = 0.0;
        }
    }
    let first = data.iter().copied().find(|c| c.abs() > 1e-6 * max).unwrap();
    let norm = data.iter().map(|c| c * c).sum::<f64>().sqrt();
    let s = first.signum() / norm;
    data.iter_mut().for_each(|c| *c *= s);
    CgTensor { l1, l2, data }
}

/// One coupling path between a slot of the left operand and a slot of the right.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CgPath {
    pub left: Slot,
    pub right: Slot,
}

/// All type-1 paths, ordered left-slot major, right-slot minor.
pub fn cg_paths(left: &IrrepsLayout, right: &IrrepsLayout) -> Vec<CgPath> {
    let rs = right.slots();
    left.slots()
        .into_iter()
        .flat_map(|a| {
            rs.iter()
                .filter(move |b| couples_to_one(a.l, b.l))
                .map(move |&b| CgPath { left: a, right: b })
        })
        .collect()
}

/// Weighted sum over all type-1 coupling paths of `v (x) w`.
pub fn cg_contract_to1<T: Scalar>(v: &IrrepsVector<T>, w: &IrrepsVector<T>, path_weights: &[T]) -> Result<Vec3<T>> {
    let paths = cg_paths(&v.layout, &w.layout);
    if paths.len() != path_weights.len() {
        return Err(Error::WeightCount {
            expected: paths.len(),
            got: path_weights.len(),
        });
    }
    let mut out = Vec3::<T>::zeros();
    let mut tensors: BTreeMap<(usize, usize), &CgTensor> = BTreeMap::new();
    for (path, &weight) in paths.iter().zip(path_weights) {
        if weight.is_zero() {
            continue;
        }
        let (l1, l2) = (path.left.l, path.right.l);
        let c = match tensors.get(&(l1, l2)) {
            Some(c) => *c,
            None => {
                let c = cg_tensor(l1, l2)?;
                tensors.insert((l1, l2), c);
                c
            }
        };
        let a = v.block(&path.left);
        let b = w.block(&path.right);
        for k in 0..3 {
            let mut acc = T::zero();
            for (i, &ai) in a.iter().enumerate() {
                if ai.is_zero() {
                    continue;
                }
                for (j, &bj) in b.iter().enumerate() {
                    let cij = c.get(k, i, j);
                    if cij != 0.0 {
                        acc += T::lit(cij) * ai * bj;
                    }
                }
            }
            out[k] += weight * acc;
        }
    }
    Ok(out)
}
