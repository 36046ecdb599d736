//! Stability, steady-state mode covariances and mean-square cost per site.
//!
//! The steady covariance of mode `z` solves
//! `𝒜_z S + S 𝒜_z* + ℬ_z Ω ℬ_z* = 0` with `Ω = I + iJ`. Its two parts
//! `P_z` (forcing `ℬ_zℬ_z*`) and `Q_z` (forcing `ℬ_zJℬ_z*`) give `S_z = P_z + iQ_z`;
//! `Q_z` equals the CCR matrix Θ for realizable blocks.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::cmatrix::{self, CMatrix, RMatrix};
use crate::error::{Error, Result};
use crate::frequency::{self, FreqPoint};
use crate::network_model::BlockParams;

/// Stop doubling the stability grid once the abscissa moves by less than this.
pub const STABILITY_TOL: f64 = 1e-6;
pub const STABILITY_CAP: usize = 4096;
/// Stop doubling the cost quadrature once successive levels differ by less than this.
pub const QUADRATURE_TOL: f64 = 1e-9;
pub const QUADRATURE_CAP_CHAIN: usize = 1 << 16;
pub const QUADRATURE_CAP_LATTICE: usize = 1 << 10;
const QUADRATURE_START: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub enum WeightKind {
    /// Blocks `σ_k` keyed by lattice offset; `σ_{-k} = σ_kᵀ` is filled in.
    Finite(BTreeMap<Vec<i64>, RMatrix>),
    /// `σ_k = ρ^{|k|₁} σ̄` with `σ̄` symmetric and `0 ≤ ρ < 1`.
    Geometric { rho: f64, base: RMatrix },
}

/// Block-Toeplitz weight sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSequence {
    pub axes: usize,
    pub n: usize,
    pub kind: WeightKind,
    /// Bound on `Σ ‖σ_k‖` over blocks left out of a finite list.
    pub tail_bound: f64,
}

fn symmetric_within(m: &RMatrix, tol: f64) -> bool {
    (m - m.transpose()).norm() <= tol * m.norm().max(1.0)
}

impl WeightSequence {
    pub fn finite(axes: usize, n: usize, blocks: Vec<(Vec<i64>, RMatrix)>) -> Result<Self> {
        Self::finite_with_tail(axes, n, blocks, 0.0)
    }

    pub fn finite_with_tail(axes: usize, n: usize, blocks: Vec<(Vec<i64>, RMatrix)>, tail_bound: f64) -> Result<Self> {
        if !(1..=2).contains(&axes) {
            return Err(Error::Config(format!("weights for {axes} axes")));
        }
        if !(tail_bound >= 0.0) || !tail_bound.is_finite() {
            return Err(Error::Config("tail bound must be finite and nonnegative".into()));
        }
        let mut map: BTreeMap<Vec<i64>, RMatrix> = BTreeMap::new();
        for (k, m) in blocks {
            if k.len() != axes {
                return Err(Error::Config(format!("weight offset {k:?} needs {axes} components")));
            }
            if m.shape() != (n, n) {
                return Err(Error::Dimension(format!("weight block at {k:?} must be {n}x{n}")));
            }
            let mirror: Vec<i64> = k.iter().map(|x| -x).collect();
            let pairs = [(k.clone(), m.clone()), (mirror, m.transpose())];
            for (key, val) in pairs {
                if let Some(prev) = map.get(&key) {
                    if (prev - &val).norm() > 1e-12 * val.norm().max(1.0) {
                        return Err(Error::Config(format!(
                            "weight blocks at {key:?} violate sigma(-k) = sigma(k)^T"
                        )));
                    }
                } else {
                    map.insert(key, val);
                }
            }
        }
        Ok(Self { axes, n, kind: WeightKind::Finite(map), tail_bound })
    }

    pub fn geometric(axes: usize, rho: f64, base: RMatrix) -> Result<Self> {
        if !(1..=2).contains(&axes) {
            return Err(Error::Config(format!("weights for {axes} axes")));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Config(format!("geometric ratio {rho} must lie in [0, 1)")));
        }
        if !base.is_square() || !symmetric_within(&base, 1e-12) {
            return Err(Error::Config("geometric base block must be square and symmetric".into()));
        }
        Ok(Self { axes, n: base.nrows(), kind: WeightKind::Geometric { rho, base }, tail_bound: 0.0 })
    }

    /// Only `σ₀ = m`.
    pub fn local(axes: usize, m: RMatrix) -> Result<Self> {
        let n = m.nrows();
        Self::finite(axes, n, vec![(vec![0; axes], m)])
    }

    fn check_point(&self, z: &FreqPoint) -> Result<()> {
        if z.axes() != self.axes {
            return Err(Error::Dimension(format!(
                "frequency point has {} components, weights have {} axes",
                z.axes(),
                self.axes
            )));
        }
        Ok(())
    }

    /// `Σ_z = Σ_k z^{-k} σ_k`.
    pub fn spectrum(&self, z: &FreqPoint) -> Result<CMatrix> {
        self.check_point(z)?;
        Ok(match &self.kind {
            WeightKind::Finite(map) => {
                let mut acc = CMatrix::zeros(self.n, self.n);
                for (k, m) in map {
                    let neg: Vec<i64> = k.iter().map(|x| -x).collect();
                    acc += cmatrix::complexify(m) * z.power(&neg);
                }
                acc
            }
            WeightKind::Geometric { rho, base } => {
                let f: f64 = z
                    .components()
                    .iter()
                    .map(|zk| (1.0 - rho * rho) / (Complex64::new(1.0, 0.0) - zk * rho).norm_sqr())
                    .product();
                cmatrix::complexify(base) * Complex64::new(f, 0.0)
            }
        })
    }

    /// `Σ̂_N(z) = Σ_k Π_α (1 - |k_α|/N)₊ z^{-k} σ_k`.
    pub fn fejer(&self, sites: usize, z: &FreqPoint) -> Result<CMatrix> {
        self.check_point(z)?;
        let nf = sites as f64;
        Ok(match &self.kind {
            WeightKind::Finite(map) => {
                let mut acc = CMatrix::zeros(self.n, self.n);
                for (k, m) in map {
                    let w = fejer_weight(k, sites);
                    if w > 0.0 {
                        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
                        acc += cmatrix::complexify(m) * (z.power(&neg) * w);
                    }
                }
                acc
            }
            WeightKind::Geometric { rho, base } => {
                let mut f = Complex64::new(1.0, 0.0);
                for zk in z.components() {
                    let mut s = Complex64::new(1.0, 0.0);
                    for l in 1..sites {
                        let w = (1.0 - l as f64 / nf) * rho.powi(l as i32);
                        s += (zk.powi(l as i32) + zk.powi(-(l as i32))) * w;
                    }
                    f *= s;
                }
                cmatrix::complexify(base) * f
            }
        })
    }

    /// Uniform bound on `‖Σ̂_N(z) - Σ_z‖` over the circle (or torus).
    pub fn fejer_gap_bound(&self, sites: usize) -> f64 {
        match &self.kind {
            WeightKind::Finite(map) => {
                let tail: f64 = map
                    .iter()
                    .map(|(k, m)| m.norm() * (1.0 - fejer_weight(k, sites)))
                    .sum();
                tail + self.tail_bound
            }
            WeightKind::Geometric { rho, base } => {
                let nf = sites as f64;
                let full = (1.0 + rho) / (1.0 - rho);
                let mut kept = 1.0;
                for l in 1..sites {
                    kept += 2.0 * (1.0 - l as f64 / nf) * rho.powi(l as i32);
                }
                base.norm() * (full.powi(self.axes as i32) - kept.powi(self.axes as i32)).max(0.0)
            }
        }
    }

    /// `Σ_k ‖σ_k‖`.
    pub fn total_norm(&self) -> f64 {
        match &self.kind {
            WeightKind::Finite(map) => map.values().map(|m| m.norm()).sum::<f64>() + self.tail_bound,
            WeightKind::Geometric { rho, base } => base.norm() * ((1.0 + rho) / (1.0 - rho)).powi(self.axes as i32),
        }
    }
}

fn fejer_weight(k: &[i64], sites: usize) -> f64 {
    k.iter()
        .map(|&x| (1.0 - x.unsigned_abs() as f64 / sites as f64).max(0.0))
        .product()
}

pub fn weight_spectrum(w: &WeightSequence, z: &FreqPoint) -> Result<CMatrix> {
    w.spectrum(z)
}

pub fn fejer_truncation(w: &WeightSequence, sites: usize, z: &FreqPoint) -> Result<CMatrix> {
    w.fejer(sites, z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityStatus {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub status: StabilityStatus,
    /// `-max Re λ(𝒜_z)` at the worst point found.
    pub margin: f64,
    pub worst: FreqPoint,
    /// Densest grid used, points per axis.
    pub grid: usize,
    /// `(grid per axis, max abscissa)` for every level.
    pub levels: Vec<(usize, f64)>,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.status == StabilityStatus::Stable
    }

    pub fn require_stable(&self) -> Result<()> {
        match self.status {
            StabilityStatus::Stable => Ok(()),
            StabilityStatus::Unstable => Err(Error::Stability { at: self.worst, abscissa: -self.margin }),
            StabilityStatus::Inconclusive => Err(Error::Inconclusive(format!(
                "stability margin did not settle on a {}-point grid (last estimate {:.3e})",
                self.grid, self.margin
            ))),
        }
    }
}

fn abscissa_at(params: &BlockParams, angles: &[f64]) -> Result<f64> {
    let z = FreqPoint::from_angles(angles)?;
    cmatrix::spectral_abscissa(&frequency::mode_matrices(params, &z)?.az)
}

/// Golden-section search for a local maximum on `[lo, hi]`.
fn golden_max(mut f: impl FnMut(f64) -> Result<f64>, mut lo: f64, mut hi: f64) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..60 {
        if hi - lo < 1e-10 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

fn grid_angles(g: usize, axes: usize) -> Vec<Vec<f64>> {
    let step = 2.0 * PI / g as f64;
    match axes {
        1 => (0..g).map(|l| vec![l as f64 * step]).collect(),
        _ => (0..g * g)
            .map(|k| vec![(k / g) as f64 * step, (k % g) as f64 * step])
            .collect(),
    }
}

/// Largest spectral abscissa on a `g`-point grid per axis, refined by
/// golden-section search around the worst grid point.
fn abscissa_level(params: &BlockParams, g: usize) -> Result<(Vec<f64>, f64)> {
    let axes = params.axis_count();
    let angles = grid_angles(g, axes);
    let values = angles
        .par_iter()
        .map(|a| abscissa_at(params, a))
        .collect::<Result<Vec<_>>>()?;
    let (idx, mut best) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    let mut at = angles[idx].clone();
    let h = 2.0 * PI / g as f64;
    for _ in 0..axes {
        for axis in 0..axes {
            let base = at.clone();
            let (x, v) = golden_max(
                |t| {
                    let mut p = base.clone();
                    p[axis] = t;
                    abscissa_at(params, &p)
                },
                base[axis] - h,
                base[axis] + h,
            )?;
            if v > best {
                best = v;
                at[axis] = x;
            }
        }
    }
    Ok((at, best))
}

/// Certifies `max_z Re λ(𝒜_z) < 0` over the circle (or torus) on a doubling grid.
pub fn check_stability(params: &BlockParams, grid_size: usize) -> Result<StabilityReport> {
    if grid_size < 8 {
        return Err(Error::Config(format!("stability grid must have at least 8 points, got {grid_size}")));
    }
    let cap = STABILITY_CAP.max(grid_size);
    let mut g = grid_size;
    let mut levels = Vec::new();
    let mut prev: Option<f64> = None;
    loop {
        let (at, best) = abscissa_level(params, g)?;
        levels.push((g, best));
        let worst = FreqPoint::from_angles(&at)?;
        let report = |status| StabilityReport { status, margin: -best, worst, grid: g, levels: levels.clone() };
        if best >= -cmatrix::HURWITZ_MARGIN {
            return Ok(report(StabilityStatus::Unstable));
        }
        if let Some(p) = prev {
            if (best - p).abs() < STABILITY_TOL {
                return Ok(report(StabilityStatus::Stable));
            }
        }
        if g * 2 > cap {
            return Ok(report(StabilityStatus::Inconclusive));
        }
        prev = Some(best);
        g *= 2;
    }
}

/// `S_z = P_z + iQ_z` together with its parts.
#[derive(Clone, Debug)]
pub struct ModeCovariance {
    pub at: FreqPoint,
    pub s: CMatrix,
    /// Solution with forcing `ℬ_zℬ_z*`.
    pub symmetric_part: CMatrix,
    /// Solution with forcing `ℬ_zJℬ_z*`; equals Θ for realizable blocks.
    pub commutator_part: CMatrix,
}

fn hurwitz_mode(params: &BlockParams, z: &FreqPoint) -> Result<frequency::ModeMatrices> {
    let m = frequency::mode_matrices(params, z)?;
    let abscissa = cmatrix::spectral_abscissa(&m.az)?;
    if abscissa >= -cmatrix::HURWITZ_MARGIN {
        return Err(Error::Stability { at: *z, abscissa });
    }
    Ok(m)
}

/// Steady covariance `S_z` of mode `z`.
pub fn steady_covariance(params: &BlockParams, z: &FreqPoint) -> Result<CMatrix> {
    let m = hurwitz_mode(params, z)?;
    let forcing = &m.bz * params.ito_matrix() * m.bz.adjoint();
    cmatrix::solve_lyapunov(&m.az, &forcing)
}

pub fn covariance_parts(params: &BlockParams, z: &FreqPoint) -> Result<ModeCovariance> {
    let m = hurwitz_mode(params, z)?;
    let j = cmatrix::complexify(&params.j);
    let p = cmatrix::solve_lyapunov(&m.az, &(&m.bz * m.bz.adjoint()))?;
    let q = cmatrix::solve_lyapunov(&m.az, &(&m.bz * j * m.bz.adjoint()))?;
    let s = &p + &q * cmatrix::IMAG;
    Ok(ModeCovariance { at: *z, s, symmetric_part: p, commutator_part: q })
}

#[derive(Clone, Debug, Serialize)]
pub struct HeisenbergReport {
    pub points: usize,
    /// `max_z ‖Q_z - Θ‖`.
    pub max_deviation: f64,
    pub min_eigenvalue: f64,
    pub worst: FreqPoint,
}

/// Evaluates `Q_z - Θ` and the spectrum of `S_z` on `U_grid`.
pub fn heisenberg_check(params: &BlockParams, grid: usize) -> Result<HeisenbergReport> {
    let theta = cmatrix::complexify(params.theta()?);
    let points = frequency::frequency_grid(grid, params.axis_count())?;
    let rows = points
        .par_iter()
        .map(|z| {
            let c = covariance_parts(params, z)?;
            let dev = (&c.commutator_part - &theta).norm();
            let ev = cmatrix::hermitian_eigenvalues(&c.s)?;
            Ok((dev, ev.first().copied().unwrap_or(0.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = HeisenbergReport { points: points.len(), max_deviation: 0.0, min_eigenvalue: f64::INFINITY, worst: points[0] };
    for (z, (dev, ev)) in points.iter().zip(rows) {
        if dev > report.max_deviation {
            report.max_deviation = dev;
            report.worst = *z;
        }
        report.min_eigenvalue = report.min_eigenvalue.min(ev);
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeSample {
    pub at: FreqPoint,
    /// `Tr(Σ S_z)` with the weight spectrum (or its Fejér sum) used for the cost.
    pub value: f64,
    #[serde(skip)]
    pub covariance: Option<CMatrix>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CostResult {
    /// Sites per axis; `None` for the thermodynamic limit.
    pub sites: Option<usize>,
    pub cost_per_site: f64,
    pub points: usize,
    /// Limit: last change between quadrature levels. Finite N: bound on the
    /// distance to the limit due to the Fejér weights.
    pub error_estimate: f64,
    pub converged: bool,
    pub previous: Option<f64>,
    pub samples: Vec<ModeSample>,
}

fn check_weights(params: &BlockParams, w: &WeightSequence) -> Result<()> {
    if w.axes != params.axis_count() || w.n != params.n() {
        return Err(Error::Dimension(format!(
            "weights are {}x{} on {} axes, model has n = {} on {} axes",
            w.n,
            w.n,
            w.axes,
            params.n(),
            params.axis_count()
        )));
    }
    Ok(())
}

/// Mean of `Tr(Σ̂_N(z) S_z)` over `U_N`, the steady cost per site of the
/// `N`-site fragment.
pub fn finite_cost(params: &BlockParams, w: &WeightSequence, sites: usize) -> Result<CostResult> {
    check_weights(params, w)?;
    let grid = frequency::frequency_grid(sites, params.axis_count())?;
    let rows = grid
        .par_iter()
        .map(|z| {
            let s = steady_covariance(params, z)?;
            let value = (w.fejer(sites, z)? * &s).trace().re;
            Ok(ModeSample { at: *z, value, covariance: Some(s) })
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let cost = rows.iter().map(|r| r.value).sum::<f64>() / rows.len() as f64;
    let s_max = rows
        .iter()
        .filter_map(|r| r.covariance.as_ref())
        .map(trace_norm_bound)
        .fold(0.0, f64::max);
    Ok(CostResult {
        sites: Some(sites),
        cost_per_site: cost,
        points: rows.len(),
        error_estimate: w.fejer_gap_bound(sites) * s_max,
        converged: true,
        previous: None,
        samples: rows,
    })
}

/// `Σ|λ|` of the Hermitian part, the trace norm of a Hermitian matrix.
fn trace_norm_bound(m: &CMatrix) -> f64 {
    cmatrix::hermitian_eigenvalues(m)
        .map(|ev| ev.iter().map(|x| x.abs()).sum())
        .unwrap_or(f64::INFINITY)
}

/// Trapezoid rule on a uniform grid, doubled until two levels agree to
/// within `tol`. The integrand is evaluated in parallel and summed in grid order.
fn periodic_mean<T: Send>(
    axes: usize,
    cap: usize,
    tol: f64,
    eval: impl Fn(&FreqPoint) -> Result<(f64, T)> + Sync,
) -> Result<(f64, Option<f64>, usize, bool, Vec<(FreqPoint, f64, T)>)> {
    let mut g = QUADRATURE_START;
    let mut prev: Option<f64> = None;
    loop {
        let grid = frequency::frequency_grid(g, axes)?;
        let vals = grid
            .par_iter()
            .map(|z| eval(z).map(|(v, t)| (*z, v, t)))
            .collect::<Result<Vec<_>>>()?;
        let mean = vals.iter().map(|x| x.1).sum::<f64>() / vals.len() as f64;
        if let Some(p) = prev {
            if (mean - p).abs() < tol {
                return Ok((mean, prev, g, true, vals));
            }
        }
        if g * 2 > cap {
            return Ok((mean, prev, g, false, vals));
        }
        prev = Some(mean);
        g *= 2;
    }
}

fn quadrature_cap(axes: usize) -> usize {
    if axes == 1 {
        QUADRATURE_CAP_CHAIN
    } else {
        QUADRATURE_CAP_LATTICE
    }
}

/// `(1/2π)^d ∫ Tr(Σ_z S_z) dφ`, the cost per site as the fragment grows without bound.
pub fn cost_limit(params: &BlockParams, w: &WeightSequence) -> Result<CostResult> {
    check_weights(params, w)?;
    check_stability(params, 16)?.require_stable()?;
    let axes = params.axis_count();
    let (mean, prev, g, converged, vals) = periodic_mean(axes, quadrature_cap(axes), QUADRATURE_TOL, |z| {
        let s = steady_covariance(params, z)?;
        Ok(((w.spectrum(z)? * s).trace().re, ()))
    })?;
    Ok(CostResult {
        sites: None,
        cost_per_site: mean,
        points: g.pow(axes as u32),
        error_estimate: prev.map_or(f64::INFINITY, |p| (mean - p).abs()),
        converged,
        previous: prev,
        samples: vals.into_iter().map(|(at, value, _)| ModeSample { at, value, covariance: None }).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct SpatialCovariance {
    pub lag: Vec<i64>,
    pub matrix: CMatrix,
    pub points: usize,
    pub converged: bool,
}

/// Fourier coefficient `(1/2π)^d ∫ z^{lag} S_z dφ` of the mode covariances:
/// the steady cross covariance between sites `j` and `k` with `j - k = lag`.
pub fn spatial_covariance(params: &BlockParams, lag: &[i64]) -> Result<SpatialCovariance> {
    let axes = params.axis_count();
    if lag.len() != axes {
        return Err(Error::Dimension(format!("lag needs {axes} components")));
    }
    check_stability(params, 16)?.require_stable()?;
    let n = params.n();
    let cap = quadrature_cap(axes);
    let mut g = QUADRATURE_START;
    let mut prev: Option<CMatrix> = None;
    loop {
        let grid = frequency::frequency_grid(g, axes)?;
        let terms = grid
            .par_iter()
            .map(|z| steady_covariance(params, z).map(|s| s * z.power(lag)))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = CMatrix::zeros(n, n);
        for t in &terms {
            acc += t;
        }
        acc = acc.unscale(terms.len() as f64);
        let done = prev
            .as_ref()
            .map(|p| (&acc - p).norm() < 1e-13 * acc.norm().max(1.0))
            .unwrap_or(false);
        if done || g * 2 > cap {
            return Ok(SpatialCovariance { lag: lag.to_vec(), matrix: acc, points: g.pow(axes as u32), converged: done });
        }
        prev = Some(acc);
        g *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{self, GenKind, GenOptions};
    use crate::network_model::{AxisCoupling, Dims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn j2() -> RMatrix {
        RMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    fn isolated() -> BlockParams {
        BlockParams {
            dims: Dims { n: 2, m0: 2, m_plus: vec![1], m_minus: vec![1] },
            a: -RMatrix::identity(2, 2),
            b: RMatrix::identity(2, 2),
            j: j2(),
            theta: Some(j2() * 0.5),
            axes: vec![AxisCoupling::zeros(2, 2, 1, 1)],
        }
    }

    /// `𝒜_z = a + b z⁻¹ + c z` with unit forcing.
    pub(crate) fn scalar(a: f64, b: f64, c: f64) -> BlockParams {
        let mut ax = AxisCoupling::zeros(1, 1, 1, 1);
        ax.c_plus[(0, 0)] = 1.0;
        ax.e_plus[(0, 0)] = b;
        ax.c_minus[(0, 0)] = 1.0;
        ax.e_minus[(0, 0)] = c;
        BlockParams {
            dims: Dims { n: 1, m0: 1, m_plus: vec![1], m_minus: vec![1] },
            a: RMatrix::from_element(1, 1, a),
            b: RMatrix::from_element(1, 1, 1.0),
            j: RMatrix::zeros(1, 1),
            theta: None,
            axes: vec![ax],
        }
    }

    fn point(phi: f64) -> FreqPoint {
        FreqPoint::from_angles(&[phi]).unwrap()
    }

    #[test]
    fn spectrum_examples() {
        let w = WeightSequence::local(1, RMatrix::identity(2, 2)).unwrap();
        for k in 0..7 {
            assert_eq!(w.spectrum(&point(k as f64)).unwrap(), CMatrix::identity(2, 2));
        }
        let m = RMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let w = WeightSequence::finite(1, 2, vec![(vec![1], m.clone())]).unwrap();
        for k in 0..7 {
            let z = point(0.7 * k as f64);
            let zc = z.components()[0];
            let want = cmatrix::complexify(&m) * zc.inv() + cmatrix::complexify(&m.transpose()) * zc;
            let got = w.spectrum(&z).unwrap();
            assert!((&got - want).norm() < 1e-14);
            assert!((&got - got.adjoint()).norm() < 1e-14);
        }
    }

    #[test]
    fn inconsistent_weight_blocks_are_rejected() {
        let m = RMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let r = WeightSequence::finite(1, 2, vec![(vec![1], m.clone()), (vec![-1], m)]);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(WeightSequence::geometric(1, 1.0, RMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn geometric_fejer_gap_is_within_bound() {
        let base = RMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        for rho in [0.3, 0.6, 0.9] {
            let w = WeightSequence::geometric(1, rho, base.clone()).unwrap();
            for sites in [4, 8, 16, 32] {
                // Bound from the definition: 2 Σ_{ℓ≥1} ‖σ_ℓ‖ min(1, ℓ/N).
                let mut direct = 0.0;
                for l in 1..2000 {
                    direct += 2.0 * base.norm() * rho.powi(l) * (l as f64 / sites as f64).min(1.0);
                }
                assert!((w.fejer_gap_bound(sites) - direct).abs() < 1e-9 * direct.max(1.0));
                for k in 0..64 {
                    let z = point(2.0 * PI * k as f64 / 64.0);
                    let gap = (w.fejer(sites, &z).unwrap() - w.spectrum(&z).unwrap()).norm();
                    assert!(gap <= direct * (1.0 + 1e-12), "rho {rho} N {sites}: {gap} > {direct}");
                }
            }
        }
    }

    #[test]
    fn geometric_matches_explicit_blocks() {
        let base = RMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let rho = 0.4;
        let g = WeightSequence::geometric(2, rho, base.clone()).unwrap();
        let mut blocks = Vec::new();
        for k1 in -40i64..=40 {
            for k2 in -40i64..=40 {
                blocks.push((vec![k1, k2], &base * rho.powi((k1.abs() + k2.abs()) as i32)));
            }
        }
        let f = WeightSequence::finite(2, 2, blocks).unwrap();
        let z = FreqPoint::from_angles(&[0.4, -2.2]).unwrap();
        assert!((g.spectrum(&z).unwrap() - f.spectrum(&z).unwrap()).norm() < 1e-12);
        assert!((g.fejer(7, &z).unwrap() - f.fejer(7, &z).unwrap()).norm() < 1e-12);
        assert!((g.fejer_gap_bound(7) - f.fejer_gap_bound(7)).abs() < 1e-10);
    }

    #[test]
    fn stability_examples() {
        let r = check_stability(&isolated(), 8).unwrap();
        assert!(r.is_stable());
        assert!((r.margin - 1.0).abs() < 1e-12);

        let mut p = isolated();
        p.a.fill(0.0);
        let r = check_stability(&p, 8).unwrap();
        assert_eq!(r.status, StabilityStatus::Unstable);
        assert!(matches!(r.require_stable(), Err(Error::Stability { .. })));

        let r = check_stability(&scalar(-3.0, 1.0, 1.0), 8).unwrap();
        assert!(r.is_stable());
        assert!((r.margin - 1.0).abs() < 1e-9);
        assert!(r.worst.angles()[0].abs() < 1e-6);

        assert!(check_stability(&isolated(), 4).is_err());
    }

    #[test]
    fn stability_margin_matches_dense_sampling() {
        for seed in 0..5 {
            let p = generate::random_block(&GenOptions::chain(seed, 3, GenKind::Random)).unwrap();
            let r = check_stability(&p, 8).unwrap();
            assert!(r.is_stable());
            let dense = (0..20_000)
                .map(|k| abscissa_at(&p, &[2.0 * PI * k as f64 / 20_000.0]).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(-r.margin >= dense - 1e-12);
            assert!(-r.margin - dense < 1e-6, "{} vs {dense}", -r.margin);
        }
    }

    #[test]
    fn steady_covariance_examples() {
        let p = isolated();
        let want = (CMatrix::identity(2, 2) + cmatrix::complexify(&j2()) * cmatrix::IMAG) * Complex64::new(0.5, 0.0);
        for k in 0..5 {
            let c = covariance_parts(&p, &point(k as f64)).unwrap();
            assert!((&c.s - &want).norm() < 1e-14);
            assert!((&c.commutator_part - cmatrix::complexify(&(j2() * 0.5))).norm() < 1e-14);
        }
        let mut q = p.clone();
        q.a.fill(0.0);
        assert!(matches!(steady_covariance(&q, &point(0.0)), Err(Error::Stability { .. })));
    }

    #[test]
    fn covariance_parts_are_conjugation_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..10 {
            let p = generate::random_block(&GenOptions::chain(seed, 3, GenKind::Random)).unwrap();
            let z = point(rng.random_range(-PI..PI));
            let a = covariance_parts(&p, &z).unwrap();
            let b = covariance_parts(&p, &z.inverse()).unwrap();
            assert!((a.symmetric_part.map(|x| x.conj()) - &b.symmetric_part).norm() < 1e-10);
            assert!((a.commutator_part.map(|x| x.conj()) - &b.commutator_part).norm() < 1e-10);
            assert!(cmatrix::psd_check(&a.s, 1e-9).unwrap());
            assert!(cmatrix::psd_check(&a.symmetric_part, 1e-9).unwrap());
        }
    }

    #[test]
    fn heisenberg_holds_for_realizable_blocks() {
        for seed in 0..5 {
            let p = generate::pr_consistent(&GenOptions::chain(seed, 2, GenKind::PrConsistent)).unwrap();
            let h = heisenberg_check(&p, 16).unwrap();
            assert!(h.max_deviation < 1e-8, "{h:?}");
            assert!(h.min_eigenvalue > -1e-9);
        }
    }

    #[test]
    fn cost_examples() {
        let p = isolated();
        let w = WeightSequence::local(1, RMatrix::identity(2, 2)).unwrap();
        for sites in [1, 3, 8] {
            assert!((finite_cost(&p, &w, sites).unwrap().cost_per_site - 1.0).abs() < 1e-14);
        }
        let lim = cost_limit(&p, &w).unwrap();
        assert!(lim.converged);
        assert!((lim.cost_per_site - 1.0).abs() < 1e-14);

        let zero = WeightSequence::local(1, RMatrix::zeros(2, 2)).unwrap();
        assert_eq!(finite_cost(&p, &zero, 5).unwrap().cost_per_site, 0.0);
        assert_eq!(cost_limit(&p, &zero).unwrap().cost_per_site, 0.0);
    }

    #[test]
    fn scalar_limit_matches_poisson_integral() {
        let p = scalar(-3.0, 1.0, 1.0);
        let w = WeightSequence::local(1, RMatrix::identity(1, 1)).unwrap();
        let lim = cost_limit(&p, &w).unwrap();
        let exact = 1.0 / (2.0 * 5f64.sqrt());
        assert!((lim.cost_per_site - exact).abs() < 1e-12, "{}", lim.cost_per_site - exact);
    }

    #[test]
    fn spatial_covariance_examples() {
        let p = isolated();
        let s0 = spatial_covariance(&p, &[0]).unwrap();
        assert!((s0.matrix - steady_covariance(&p, &point(0.0)).unwrap()).norm() < 1e-14);
        assert!(spatial_covariance(&p, &[2]).unwrap().matrix.norm() < 1e-14);

        let q = generate::random_block(&GenOptions::chain(3, 3, GenKind::Random)).unwrap();
        let a = spatial_covariance(&q, &[2]).unwrap();
        let b = spatial_covariance(&q, &[-2]).unwrap();
        assert!((a.matrix.adjoint() - b.matrix).norm() < 1e-12);

        // Scalar model: Riemann sum with 10⁶ points.
        let s = scalar(-3.0, 1.0, 1.0);
        let lag1 = spatial_covariance(&s, &[1]).unwrap().matrix[(0, 0)];
        let m = 1_000_000;
        let mut acc = 0.0;
        for k in 0..m {
            let phi = 2.0 * PI * k as f64 / m as f64;
            acc += phi.cos() / (2.0 * (3.0 - 2.0 * phi.cos()));
        }
        acc /= m as f64;
        assert!((lag1.re - acc).abs() < 1e-8 && lag1.im.abs() < 1e-12);
    }

    #[test]
    fn finite_cost_approaches_limit() {
        let p = generate::random_block(&GenOptions::chain(5, 2, GenKind::Random)).unwrap();
        let w = WeightSequence::geometric(1, 0.5, RMatrix::identity(2, 2)).unwrap();
        let lim = cost_limit(&p, &w).unwrap().cost_per_site;
        let mut last = f64::INFINITY;
        for sites in [16, 32, 64, 128] {
            let f = finite_cost(&p, &w, sites).unwrap();
            let diff = (f.cost_per_site - lim).abs();
            assert!(diff <= f.error_estimate + 1e-9, "N {sites}: {diff} > {}", f.error_estimate);
            assert!(diff <= last);
            last = diff;
        }
    }
}
