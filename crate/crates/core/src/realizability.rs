//! Physical realizability checks for translation-invariant networks.
//!
//! Two equivalent formulations are offered. The frequency form evaluates the
//! CCR residual `L_z = 𝒜_zΘ + Θ𝒜_z* + ℬ_zJℬ_z*` on the sampling set `U_N` and
//! the averaged cross terms `Σ_z 𝒜_zᵖ(ΘCᵀ + ℬ_zJDᵀ)`. The algebraic form works
//! with the Laurent coefficients of `L_z` directly, and agrees with the
//! frequency form once `N ≥ max(5, n+1)`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::cmatrix::{self, CMatrix, RMatrix, IMAG};
use crate::error::{Error, Result};
use crate::frequency::{self, FreqPoint, LaurentCoeffs};
use crate::network_model::BlockParams;

pub const DEFAULT_TOL: f64 = 1e-8;

/// Relative singular-value cut below which the Θ system counts as rank deficient.
const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Offender {
    Frequency(FreqPoint),
    Exponent(usize),
    Condition(String),
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Residual {
    pub label: String,
    pub value: f64,
    pub at: Offender,
}

#[derive(Clone, Debug, Serialize)]
pub struct PRReport {
    pub theorem: u8,
    /// Sites per axis for the frequency form; absent for the algebraic form.
    pub sites: Option<usize>,
    pub residuals: Vec<Residual>,
    pub tolerance: f64,
    pub scale: f64,
    pub pass: bool,
    pub worst_offender: Option<Offender>,
}

impl PRReport {
    fn new(theorem: u8, sites: Option<usize>, residuals: Vec<Residual>, tol: f64, params: &BlockParams) -> Self {
        let scale = 1.0 + params.max_norm();
        let limit = tol * scale;
        let pass = residuals.iter().all(|r| r.value <= limit);
        let worst_offender = residuals
            .iter()
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .map(|r| r.at.clone());
        Self { theorem, sites, residuals, tolerance: tol, scale, pass, worst_offender }
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.value).fold(0.0, f64::max)
    }

    pub fn residual(&self, label: &str) -> Option<f64> {
        self.residuals.iter().find(|r| r.label == label).map(|r| r.value)
    }
}

fn complex_parts(params: &BlockParams) -> Result<(CMatrix, CMatrix, CMatrix, CMatrix)> {
    let theta = cmatrix::complexify(params.theta()?);
    let j = cmatrix::complexify(&params.j);
    let c = cmatrix::complexify(&params.stacked_c());
    let d = cmatrix::complexify(&params.stacked_d());
    Ok((theta, j, c, d))
}

/// `L_z = 𝒜_zΘ + Θ𝒜_z* + ℬ_zJℬ_z*`.
pub fn ccr_residual(params: &BlockParams, z: &FreqPoint) -> Result<CMatrix> {
    let m = frequency::mode_matrices(params, z)?;
    let theta = cmatrix::complexify(params.theta()?);
    let j = cmatrix::complexify(&params.j);
    Ok(&m.az * &theta + &theta * m.az.adjoint() + &m.bz * j * m.bz.adjoint())
}

/// Laurent coefficients `M_s`, `|s| ≤ 2`, of `L_z` extracted from `U_N`.
pub fn ccr_laurent_coeffs(params: &BlockParams, sites: usize) -> Result<LaurentCoeffs> {
    if params.axis_count() != 1 {
        return Err(Error::UnsupportedFragment("Laurent extraction needs a chain".into()));
    }
    let samples = frequency::frequency_grid(sites, 1)?
        .into_par_iter()
        .map(|z| ccr_residual(params, &z).map(|l| (z, l)))
        .collect::<Result<Vec<_>>>()?;
    frequency::laurent_coeffs(&samples, 2)
}

/// Frequency form of the realizability conditions on `U_N` (or `U_N²`).
pub fn check_theorem1(params: &BlockParams, sites: usize) -> Result<PRReport> {
    check_theorem1_with_tol(params, sites, DEFAULT_TOL)
}

pub fn check_theorem1_with_tol(params: &BlockParams, sites: usize, tol: f64) -> Result<PRReport> {
    let (theta, j, c, d) = complex_parts(params)?;
    let n = params.n();
    let grid = frequency::frequency_grid(sites, params.axis_count())?;
    let xy_base_d = &j * d.transpose();
    let xy_base = &theta * c.transpose();

    // Per point: CCR residual norm and the cross-term powers 𝒜_zᵖ V_z, p < n.
    let per_point = grid
        .par_iter()
        .map(|z| {
            let m = frequency::mode_matrices(params, z)?;
            let l = &m.az * &theta + &theta * m.az.adjoint() + &m.bz * &j * m.bz.adjoint();
            let mut v = &xy_base + &m.bz * &xy_base_d;
            let mut terms = Vec::with_capacity(n);
            for p in 0..n {
                if p > 0 {
                    v = &m.az * v;
                }
                terms.push(v.clone());
            }
            Ok((l.norm(), terms))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut residuals = Vec::with_capacity(n + 1);
    let (worst_idx, worst) = per_point
        .iter()
        .enumerate()
        .map(|(k, (r, _))| (k, *r))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    residuals.push(Residual {
        label: "ccr".into(),
        value: worst.max(0.0),
        at: Offender::Frequency(grid[worst_idx]),
    });

    let count = grid.len() as f64;
    for p in 0..n {
        let mut acc = CMatrix::zeros(n, c.nrows());
        for (_, terms) in &per_point {
            acc += &terms[p];
        }
        residuals.push(Residual {
            label: format!("xy p={p}"),
            value: acc.norm() / count,
            at: Offender::Exponent(p),
        });
    }
    Ok(PRReport::new(1, Some(sites), residuals, tol, params))
}

/// The Θ-dependent Laurent coefficients of `L_z` and the cross term at `p = 0`.
struct ThetaLinear {
    m0: RMatrix,
    m_minus1: RMatrix,
    xy0: RMatrix,
}

fn theta_linear(params: &BlockParams, theta: &RMatrix, with_constants: bool) -> ThetaLinear {
    let ax = &params.axes[0];
    let (a, b, j) = (&params.a, &params.b, &params.j);
    let (fwd, bwd) = (ax.forward_loop(), ax.backward_loop());
    let mut m0 = a * theta + theta * a.transpose();
    let mut m_minus1 = &fwd * theta + theta * bwd.transpose();
    let mut xy0 = theta * params.stacked_c().transpose();
    if with_constants {
        let (fn_, bn) = (ax.forward_noise(), ax.backward_noise());
        m0 += b * j * b.transpose() + &fn_ * j * fn_.transpose() + &bn * j * bn.transpose();
        m_minus1 += b * j * bn.transpose() + &fn_ * j * b.transpose();
        xy0 += b * j * params.stacked_d().transpose();
    }
    ThetaLinear { m0, m_minus1, xy0 }
}

/// Conditions of the algebraic form that do not involve Θ, as `(label, matrix)`.
fn theta_free(params: &BlockParams) -> Vec<(String, RMatrix)> {
    let ax = &params.axes[0];
    let j = &params.j;
    let (fn_, bn) = (ax.forward_noise(), ax.backward_noise());
    let mut out = vec![("ccr s=-2".to_string(), &fn_ * j * bn.transpose())];
    let jd = j * params.stacked_d().transpose();
    let tables = frequency::aps_tables(params, params.n().saturating_sub(1)).expect("chain");
    for t in tables.iter().skip(1) {
        let m = (t.coeff(1) * &fn_ + t.coeff(-1) * &bn) * &jd;
        out.push((format!("xy p={}", t.order), m));
    }
    out
}

fn require_chain(params: &BlockParams) -> Result<()> {
    if params.axis_count() != 1 {
        return Err(Error::UnsupportedFragment(
            "the algebraic realizability conditions are available for chains only".into(),
        ));
    }
    Ok(())
}

/// Algebraic form of the realizability conditions for chains.
pub fn check_theorem2(params: &BlockParams) -> Result<PRReport> {
    check_theorem2_with_tol(params, DEFAULT_TOL)
}

pub fn check_theorem2_with_tol(params: &BlockParams, tol: f64) -> Result<PRReport> {
    require_chain(params)?;
    let lin = theta_linear(params, params.theta()?, true);
    let mut entries = vec![
        ("ccr s=0".to_string(), lin.m0),
        ("ccr s=-1".to_string(), lin.m_minus1),
    ];
    let free = theta_free(params);
    entries.push(free[0].clone());
    entries.push(("xy p=0".to_string(), lin.xy0));
    entries.extend(free.into_iter().skip(1));

    let residuals = entries
        .into_iter()
        .map(|(label, m)| {
            let at = match label.strip_prefix("xy p=") {
                Some(p) => Offender::Exponent(p.parse().expect("formatted exponent")),
                None => Offender::Condition(label.clone()),
            };
            Residual { value: m.norm(), label, at }
        })
        .collect();
    Ok(PRReport::new(2, None, residuals, tol, params))
}

#[derive(Clone, Debug, Serialize)]
pub struct ThetaSolution {
    #[serde(serialize_with = "cmatrix::serialize_real")]
    pub theta: RMatrix,
    /// Frobenius norm of the stacked Θ-dependent conditions at the solution.
    pub residual: f64,
    /// True when the linear system does not determine Θ uniquely.
    pub degenerate: bool,
    pub rank: usize,
    pub unknowns: usize,
    /// Norms of the conditions that Θ cannot influence.
    pub theta_free_residuals: Vec<(String, f64)>,
}

fn antisymmetric_basis(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn flatten(lin: &ThetaLinear) -> Vec<f64> {
    lin.m0
        .iter()
        .chain(lin.m_minus1.iter())
        .chain(lin.xy0.iter())
        .copied()
        .collect()
}

/// Least-squares Θ over antisymmetric matrices for the Θ-dependent
/// conditions, with the minimum-norm choice when they are rank deficient.
pub fn solve_theta(params: &BlockParams) -> Result<ThetaSolution> {
    require_chain(params)?;
    let n = params.n();
    let basis = antisymmetric_basis(n);
    let zero = RMatrix::zeros(n, n);
    let rhs = -DVector::from_vec(flatten(&theta_linear(params, &zero, true)));

    let mut cols = Vec::with_capacity(basis.len());
    for &(i, j) in &basis {
        let mut t = RMatrix::zeros(n, n);
        t[(i, j)] = 1.0;
        t[(j, i)] = -1.0;
        cols.push(DVector::from_vec(flatten(&theta_linear(params, &t, false))));
    }

    let mut theta = RMatrix::zeros(n, n);
    let mut rank = 0;
    if !basis.is_empty() {
        let op = nalgebra::DMatrix::from_columns(&cols);
        let svd = op.svd(true, true);
        let smax = svd.singular_values.max();
        let cut = RANK_TOL * smax.max(f64::MIN_POSITIVE);
        rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
        if rank > 0 {
            let coeffs = svd
                .solve(&rhs, cut)
                .map_err(|e| Error::Numeric(format!("Θ least squares failed: {e}")))?;
            for (k, &(i, j)) in basis.iter().enumerate() {
                theta[(i, j)] = coeffs[k];
                theta[(j, i)] = -coeffs[k];
            }
        }
    }

    let residual = DVector::from_vec(flatten(&theta_linear(params, &theta, true))).norm();
    let theta_free_residuals = theta_free(params)
        .into_iter()
        .map(|(label, m)| (label, m.norm()))
        .collect();
    Ok(ThetaSolution {
        theta,
        residual,
        degenerate: rank < basis.len(),
        rank,
        unknowns: basis.len(),
        theta_free_residuals,
    })
}

/// Drift of the CCR matrix of `(X_z, X_v)` and the commutator `[X_z(t), Y_v(t)†]`.
#[derive(Clone, Debug)]
pub struct CommutatorFlow {
    pub drift: CMatrix,
    pub xy: CMatrix,
}

pub fn commutator_flow(params: &BlockParams, sites: usize, z: &FreqPoint, v: &FreqPoint, t: f64) -> Result<CommutatorFlow> {
    for p in [z, v] {
        if p.axes() != params.axis_count() || !p.in_roots_of_unity(sites) {
            return Err(Error::Domain(format!("{p} is not in the sampling set of {sites} sites")));
        }
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time {t} must be finite and >= 0")));
    }
    let n = params.n();
    let m = params.dims.m_internal();
    if !z.coincides(v) {
        return Ok(CommutatorFlow { drift: CMatrix::zeros(n, n), xy: CMatrix::zeros(n, m) });
    }
    let (theta, j, c, d) = complex_parts(params)?;
    let modes = frequency::mode_matrices(params, z)?;
    let factor = IMAG * (2.0 * sites.pow(params.axis_count() as u32) as f64);
    let l = &modes.az * &theta + &theta * modes.az.adjoint() + &modes.bz * &j * modes.bz.adjoint();
    let v0 = &theta * c.transpose() + &modes.bz * &j * d.transpose();
    let integral = cmatrix::exp_integral(&modes.az, t)?;
    Ok(CommutatorFlow { drift: l * factor, xy: integral * v0 * factor })
}
