//! Spatial-frequency machinery: coupling matrix, mode matrices, Laurent
//! coefficients by circular sampling and the power-coefficient recurrence.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::cmatrix::{self, CMatrix, RMatrix};
use crate::error::{Error, Result};
use crate::network_model::{BlockParams, Dims};

/// Tolerance on `|z| = 1`.
pub const UNIT_TOL: f64 = 1e-12;
/// Tolerance on `z^N = 1` when membership in `U_N` is tested.
pub const ROOT_TOL: f64 = 1e-9;

/// A point on the unit circle (chains) or on the torus (lattices).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreqPoint {
    comps: [Complex64; 2],
    axes: usize,
}

impl FreqPoint {
    pub fn circle(z: Complex64) -> Result<Self> {
        check_unit(z)?;
        Ok(Self { comps: [z, Complex64::new(1.0, 0.0)], axes: 1 })
    }

    pub fn torus(z1: Complex64, z2: Complex64) -> Result<Self> {
        check_unit(z1)?;
        check_unit(z2)?;
        Ok(Self { comps: [z1, z2], axes: 2 })
    }

    pub fn from_components(comps: &[Complex64]) -> Result<Self> {
        match comps {
            [z] => Self::circle(*z),
            [z1, z2] => Self::torus(*z1, *z2),
            _ => Err(Error::Dimension(format!("frequency point needs 1 or 2 components, got {}", comps.len()))),
        }
    }

    pub fn from_angles(angles: &[f64]) -> Result<Self> {
        let comps: Vec<Complex64> = angles.iter().map(|&a| unit(a)).collect();
        Self::from_components(&comps)
    }

    /// `e^{2πiℓ/N}` per axis; angles are reduced to `(-π, π]` so that
    /// `ℓ` and `N-ℓ` give exact conjugates.
    pub fn root(sites: usize, index: &[usize]) -> Result<Self> {
        let angles: Vec<f64> = index.iter().map(|&l| root_angle(sites, l)).collect();
        Self::from_angles(&angles)
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn components(&self) -> &[Complex64] {
        &self.comps[..self.axes]
    }

    pub fn angles(&self) -> Vec<f64> {
        self.components().iter().map(|z| z.arg()).collect()
    }

    /// `1/z`, which on the unit circle is the conjugate.
    pub fn inverse(&self) -> Self {
        let mut out = *self;
        for c in out.comps.iter_mut() {
            *c = c.conj();
        }
        out
    }

    /// `z^{s₁}` (or `z₁^{s₁} z₂^{s₂}`).
    pub fn power(&self, exps: &[i64]) -> Complex64 {
        self.components()
            .iter()
            .zip(exps)
            .map(|(z, &s)| z.powi(s as i32))
            .product()
    }

    /// Index `ℓ` with `z = e^{2πiℓ/N}` per axis, if `z ∈ U_N`.
    pub fn root_index(&self, sites: usize) -> Option<Vec<usize>> {
        self.components()
            .iter()
            .map(|z| {
                let x = z.arg() * sites as f64 / (2.0 * PI);
                let l = x.round();
                let l = (l as i64).rem_euclid(sites as i64) as usize;
                let err = (z - unit(root_angle(sites, l))).norm();
                (err <= ROOT_TOL).then_some(l)
            })
            .collect()
    }

    pub fn in_roots_of_unity(&self, sites: usize) -> bool {
        self.root_index(sites).is_some()
    }

    pub fn coincides(&self, other: &FreqPoint) -> bool {
        self.axes == other.axes
            && self
                .components()
                .iter()
                .zip(other.components())
                .all(|(a, b)| (a - b).norm() <= ROOT_TOL)
    }
}

impl fmt::Display for FreqPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.angles().iter().map(|a| format!("{a:.6}")).collect();
        write!(f, "z = exp(i·({}))", parts.join(", "))
    }
}

impl Serialize for FreqPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let comps: Vec<[f64; 2]> = self.components().iter().map(|z| [z.re, z.im]).collect();
        let mut st = s.serialize_struct("FreqPoint", 2)?;
        st.serialize_field("angles", &self.angles())?;
        st.serialize_field("components", &comps)?;
        st.end()
    }
}

fn unit(angle: f64) -> Complex64 {
    Complex64::new(angle.cos(), angle.sin())
}

fn root_angle(sites: usize, l: usize) -> f64 {
    let l = (l % sites) as f64;
    let n = sites as f64;
    if 2.0 * l <= n {
        2.0 * PI * l / n
    } else {
        2.0 * PI * (l - n) / n
    }
}

fn check_unit(z: Complex64) -> Result<()> {
    if !z.re.is_finite() || !z.im.is_finite() || (z.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::Domain(format!("|z| = {} is not 1", z.norm())));
    }
    Ok(())
}

/// `U_N` (or `U_N²`, first axis outermost) in index order.
pub fn frequency_grid(sites: usize, axes: usize) -> Result<Vec<FreqPoint>> {
    if sites == 0 {
        return Err(Error::UnsupportedFragment("N must be positive".into()));
    }
    match axes {
        1 => (0..sites).map(|l| FreqPoint::root(sites, &[l])).collect(),
        2 => (0..sites * sites)
            .map(|k| FreqPoint::root(sites, &[k / sites, k % sites]))
            .collect(),
        _ => Err(Error::UnsupportedFragment(format!("{axes} axes"))),
    }
}

/// `K_z = ⊕_α diag(z_α⁻¹ I_{m₊ᵅ}, z_α I_{m₋ᵅ})`.
pub fn coupling_matrix(z: &FreqPoint, dims: &Dims) -> Result<CMatrix> {
    if z.axes() != dims.axes() {
        return Err(Error::Dimension(format!(
            "frequency point has {} components, model has {} axes",
            z.axes(),
            dims.axes()
        )));
    }
    let mut diag = Vec::with_capacity(dims.m_internal());
    for (k, zk) in z.components().iter().enumerate() {
        diag.extend(std::iter::repeat_n(zk.conj(), dims.m_plus[k]));
        diag.extend(std::iter::repeat_n(*zk, dims.m_minus[k]));
    }
    Ok(CMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)))
}

/// `(𝒜_z, ℬ_z)` at one frequency point.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeMatrices {
    pub az: CMatrix,
    pub bz: CMatrix,
    pub at: FreqPoint,
}

/// `𝒜_z = A + Σ_α (z_α⁻¹ E₊C₊ + z_α E₋C₋)`, and `ℬ_z` likewise with `B`, `D`.
pub fn mode_matrices(params: &BlockParams, z: &FreqPoint) -> Result<ModeMatrices> {
    if z.axes() != params.axis_count() {
        return Err(Error::Dimension(format!(
            "frequency point has {} components, model has {} axes",
            z.axes(),
            params.axis_count()
        )));
    }
    let mut az = cmatrix::complexify(&params.a);
    let mut bz = cmatrix::complexify(&params.b);
    for (ax, zk) in params.axes.iter().zip(z.components()) {
        az += cmatrix::complexify(&ax.forward_loop()) * zk.conj() + cmatrix::complexify(&ax.backward_loop()) * *zk;
        bz += cmatrix::complexify(&ax.forward_noise()) * zk.conj() + cmatrix::complexify(&ax.backward_noise()) * *zk;
    }
    if az.shape() != (params.n(), params.n()) || bz.shape() != (params.n(), params.m0()) {
        return Err(Error::Dimension("mode matrices have inconsistent shapes".into()));
    }
    Ok(ModeMatrices { az, bz, at: *z })
}

/// Same matrices through the stacked form `A + E K_z C`, `B + E K_z D`.
pub fn mode_matrices_via_coupling(params: &BlockParams, z: &FreqPoint) -> Result<ModeMatrices> {
    let k = coupling_matrix(z, &params.dims)?;
    let e = cmatrix::complexify(&params.stacked_e());
    let ek = &e * &k;
    let az = cmatrix::complexify(&params.a) + &ek * cmatrix::complexify(&params.stacked_c());
    let bz = cmatrix::complexify(&params.b) + &ek * cmatrix::complexify(&params.stacked_d());
    Ok(ModeMatrices { az, bz, at: *z })
}

/// Mode matrices over `U_N` (or `U_N²`) in grid order.
pub fn mode_grid(params: &BlockParams, sites: usize) -> Result<Vec<ModeMatrices>> {
    use rayon::prelude::*;
    let grid = frequency_grid(sites, params.axis_count())?;
    grid.par_iter().map(|z| mode_matrices(params, z)).collect()
}

/// Laurent coefficients `M_s`, `|s| ≤ q`, of a matrix function sampled on `U_N`.
#[derive(Clone, Debug)]
pub struct LaurentCoeffs {
    pub max_order: usize,
    /// `coeffs[s + q]` holds `M_s`.
    pub coeffs: Vec<CMatrix>,
}

impl LaurentCoeffs {
    pub fn get(&self, s: i64) -> Option<&CMatrix> {
        if s.unsigned_abs() as usize > self.max_order {
            return None;
        }
        self.coeffs.get((s + self.max_order as i64) as usize)
    }
}

/// Circular average `(1/N) Σ_z z^{-s} L_z` over the given samples, with no
/// aliasing check.
pub fn circular_average(samples: &[(FreqPoint, CMatrix)], s: i64) -> Result<CMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Domain("no samples".into()))?;
    let mut acc = CMatrix::zeros(first.1.nrows(), first.1.ncols());
    for (z, m) in samples {
        if m.shape() != acc.shape() {
            return Err(Error::Dimension("samples differ in shape".into()));
        }
        acc += m * z.power(&[-s]);
    }
    Ok(acc.unscale(samples.len() as f64))
}

/// `M_s = (1/N) Σ_{z∈U_N} z^{-s} L_z` for `s = -q..=q`.
///
/// The samples must cover `U_N` exactly once, in any order.
pub fn laurent_coeffs(samples: &[(FreqPoint, CMatrix)], q: usize) -> Result<LaurentCoeffs> {
    let sites = samples.len();
    if sites <= 2 * q {
        return Err(Error::Aliasing { samples: sites, order: q, min_samples: 2 * q + 1 });
    }
    let mut seen = vec![false; sites];
    for (z, _) in samples {
        if z.axes() != 1 {
            return Err(Error::Dimension("Laurent extraction works on the circle only".into()));
        }
        let l = z
            .root_index(sites)
            .ok_or_else(|| Error::Domain(format!("{z} is not a {sites}-th root of unity")))?[0];
        if std::mem::replace(&mut seen[l], true) {
            return Err(Error::Domain(format!("root index {l} sampled twice")));
        }
    }
    let coeffs = (-(q as i64)..=q as i64)
        .map(|s| circular_average(samples, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(LaurentCoeffs { max_order: q, coeffs })
}

/// Coefficients `A_{p,s}` of `𝒜_z^p = Σ_s z^s A_{p,s}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaurentTable {
    pub order: usize,
    /// `blocks[s + p]` holds `A_{p,s}`.
    pub blocks: Vec<RMatrix>,
}

impl LaurentTable {
    pub fn identity(n: usize) -> Self {
        Self { order: 0, blocks: vec![RMatrix::identity(n, n)] }
    }

    fn dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// `A_{p,s}`, zero outside `|s| ≤ p`.
    pub fn coeff(&self, s: i64) -> RMatrix {
        let p = self.order as i64;
        if s.abs() > p {
            RMatrix::zeros(self.dim(), self.dim())
        } else {
            self.blocks[(s + p) as usize].clone()
        }
    }

    /// `Σ_s z^s A_{p,s}`.
    pub fn evaluate(&self, z: Complex64) -> CMatrix {
        let p = self.order as i64;
        let mut acc = CMatrix::zeros(self.dim(), self.dim());
        for s in -p..=p {
            acc += cmatrix::complexify(&self.blocks[(s + p) as usize]) * z.powi(s as i32);
        }
        acc
    }

    /// One step of `A_{p,s} = A A_{p-1,s} + E₊C₊ A_{p-1,s+1} + E₋C₋ A_{p-1,s-1}`.
    pub fn next(&self, a: &RMatrix, fwd: &RMatrix, bwd: &RMatrix) -> Self {
        let p = self.order as i64 + 1;
        let blocks = (-p..=p)
            .map(|s| a * self.coeff(s) + fwd * self.coeff(s + 1) + bwd * self.coeff(s - 1))
            .collect();
        Self { order: p as usize, blocks }
    }
}

fn require_chain(params: &BlockParams) -> Result<()> {
    if params.axis_count() != 1 {
        return Err(Error::UnsupportedFragment("power coefficients are defined for chains only".into()));
    }
    Ok(())
}

pub fn aps_table(params: &BlockParams, p: usize) -> Result<LaurentTable> {
    Ok(aps_tables(params, p)?.pop().expect("at least the order-0 table"))
}

/// Tables for orders `0..=p_max`.
pub fn aps_tables(params: &BlockParams, p_max: usize) -> Result<Vec<LaurentTable>> {
    require_chain(params)?;
    let ax = &params.axes[0];
    let (fwd, bwd) = (ax.forward_loop(), ax.backward_loop());
    let mut out = vec![LaurentTable::identity(params.n())];
    for _ in 0..p_max {
        let next = out.last().unwrap().next(&params.a, &fwd, &bwd);
        out.push(next);
    }
    Ok(out)
}
