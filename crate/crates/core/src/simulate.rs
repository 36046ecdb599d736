//! Time-domain moment integration for finite fragments.
//!
//! Mode pairs follow `Ṡ_{z,v} = 𝒜_z S + S 𝒜_v* + N^d δ_{zv} ℬ_zΩℬ_v*`, where
//! `N^d` is the number of sites. The whole-chain path integrates the
//! `Nn`-dimensional Lyapunov ODE of the assembled ring instead.

use std::collections::BTreeMap;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::cmatrix::{self, CMatrix};
use crate::error::{Error, Result};
use crate::frequency::{self, FreqPoint, ModeMatrices};
use crate::network_model::{self, BlockParams};

pub const RTOL: f64 = 1e-9;
pub const ATOL: f64 = 1e-12;
/// Steady state: `‖dS/dt‖ ≤ STEADY_TOL·‖S‖`.
pub const STEADY_TOL: f64 = 1e-9;
pub const STEADY_CAP: f64 = 1e4;
pub const STEADY_RTOL: f64 = 1e-12;
pub const STEADY_ATOL: f64 = 1e-15;
pub const FULLCHAIN_MAX_SITES: usize = 64;
pub const FULLCHAIN_MAX_ORDER: usize = 8;

/// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

type State = DVector<Complex64>;

#[derive(Clone, Copy, Debug)]
pub struct StepPolicy {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { rtol: RTOL, atol: ATOL, max_steps: 5_000_000 }
    }
}

impl StepPolicy {
    /// Tolerances for runs that stop at the steady state. Near equilibrium an
    /// explicit stepper jitters at the size of its local error, which leaves
    /// `‖dS/dt‖/‖S‖` around `rtol·|λ|`; it has to sit well below `STEADY_TOL`.
    pub fn steady() -> Self {
        Self { rtol: STEADY_RTOL, atol: STEADY_ATOL, ..Self::default() }
    }

    pub fn for_horizon(horizon: Horizon) -> Self {
        match horizon {
            Horizon::Fixed(_) => Self::default(),
            Horizon::Steady => Self::steady(),
        }
    }
}

/// When to stop integrating.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Fixed(f64),
    /// Until `‖dS/dt‖ ≤ 1e-9‖S‖` after an accepted step, or `t = 1e4`.
    Steady,
}

struct Solution {
    times: Vec<f64>,
    states: Vec<State>,
    steps: usize,
    reached_steady: bool,
}

fn error_norm(y: &State, y_new: &State, err: &State, p: &StepPolicy) -> f64 {
    let n = y.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new.iter()))
        .map(|(e, (a, b))| {
            let sc = p.atol + p.rtol * a.norm().max(b.norm());
            (e.norm() / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Adaptive Dormand–Prince integration recording the state at `record`
/// (increasing times). With `steady`, stops early once the derivative is
/// small against the state; the final state is then appended.
fn dopri(
    f: &(dyn Fn(f64, &State) -> State + Sync),
    y0: State,
    record: &[f64],
    t_end: f64,
    steady: bool,
    policy: &StepPolicy,
) -> Result<Solution> {
    let mut t = 0.0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut out = Solution { times: Vec::new(), states: Vec::new(), steps: 0, reached_steady: false };
    let mut next_rec = 0;
    while next_rec < record.len() && record[next_rec] <= 0.0 {
        out.times.push(0.0);
        out.states.push(y.clone());
        next_rec += 1;
    }

    let scale = y.norm().max(k1.norm()).max(1e-300);
    let mut h = (1e-3 * scale / k1.norm().max(1e-300)).clamp(1e-8, 1e-1).min(t_end.max(1e-300));
    let mut ks: Vec<State> = Vec::with_capacity(7);

    while t < t_end {
        if out.steps >= policy.max_steps {
            return Err(Error::Integration { last_good_time: t, reason: "step budget exhausted".into() });
        }
        let stop_at = record.get(next_rec).copied().unwrap_or(t_end).min(t_end);
        let mut hit = false;
        if t + h >= stop_at {
            h = stop_at - t;
            hit = true;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration { last_good_time: t, reason: format!("step size underflow (h = {h:e})") });
        }

        ks.clear();
        ks.push(k1.clone());
        for s in 1..7 {
            let mut ys = y.clone();
            for (r, kr) in ks.iter().enumerate() {
                let a = A[s][r];
                if a != 0.0 {
                    ys.axpy(Complex64::new(h * a, 0.0), kr, Complex64::new(1.0, 0.0));
                }
            }
            ks.push(f(t + C[s] * h, &ys));
        }
        let mut y5 = y.clone();
        let mut err = State::zeros(y.len());
        for s in 0..7 {
            if B5[s] != 0.0 {
                y5.axpy(Complex64::new(h * B5[s], 0.0), &ks[s], Complex64::new(1.0, 0.0));
            }
            let d = B5[s] - B4[s];
            if d != 0.0 {
                err.axpy(Complex64::new(h * d, 0.0), &ks[s], Complex64::new(1.0, 0.0));
            }
        }
        let en = error_norm(&y, &y5, &err, policy);
        if !en.is_finite() {
            return Err(Error::Integration { last_good_time: t, reason: "non-finite state".into() });
        }
        if en <= 1.0 {
            t = if hit { stop_at } else { t + h };
            y = y5;
            k1 = ks[6].clone();
            out.steps += 1;
            if hit && next_rec < record.len() && (record[next_rec] - t).abs() <= 1e-12 * t.max(1.0) {
                out.times.push(t);
                out.states.push(y.clone());
                next_rec += 1;
            }
            if steady && k1.norm() <= STEADY_TOL * y.norm() {
                out.reached_steady = true;
                break;
            }
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            h *= (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
        }
    }
    if steady && out.times.last() != Some(&t) {
        out.times.push(t);
        out.states.push(y);
    }
    Ok(out)
}

/// Second moments `S_{z,v}(t)` for a set of mode pairs, indexed by grid position.
#[derive(Clone, Debug)]
pub struct MomentTrajectory {
    pub sites: usize,
    pub points: Vec<FreqPoint>,
    pub pairs: Vec<(usize, usize)>,
    pub times: Vec<f64>,
    /// `values[t][k]` is the moment of `pairs[k]` at `times[t]`.
    pub values: Vec<Vec<CMatrix>>,
    pub policy: StepPolicy,
    pub steps: usize,
    pub reached_steady: bool,
}

impl MomentTrajectory {
    pub fn last(&self, pair: (usize, usize)) -> Option<&CMatrix> {
        let k = self.pairs.iter().position(|p| *p == pair)?;
        self.values.last().map(|v| &v[k])
    }
}

/// Diagonal pairs `(ℓ, ℓ)` over the whole grid with zero initial moments.
pub fn zero_initial(params: &BlockParams, sites: usize) -> BTreeMap<(usize, usize), CMatrix> {
    let n = params.n();
    let count = sites.pow(params.axis_count() as u32);
    (0..count).map(|l| ((l, l), CMatrix::zeros(n, n))).collect()
}

fn flatten(ms: &[CMatrix]) -> State {
    State::from_iterator(ms.iter().map(|m| m.len()).sum(), ms.iter().flat_map(|m| m.iter().copied()))
}

fn unflatten(y: &State, n: usize, count: usize) -> Vec<CMatrix> {
    (0..count)
        .map(|k| CMatrix::from_column_slice(n, n, &y.as_slice()[k * n * n..(k + 1) * n * n]))
        .collect()
}

fn record_times(horizon: Horizon, samples: usize) -> (Vec<f64>, f64) {
    match horizon {
        Horizon::Fixed(t) => {
            let k = samples.max(1);
            ((0..=k).map(|i| t * i as f64 / k as f64).collect(), t)
        }
        Horizon::Steady => (vec![0.0], STEADY_CAP),
    }
}

/// Integrates the mode-pair moment equations from `s0` and records
/// `samples + 1` equally spaced snapshots (or the start and the steady state).
pub fn integrate_moments(
    params: &BlockParams,
    sites: usize,
    s0: &BTreeMap<(usize, usize), CMatrix>,
    horizon: Horizon,
    samples: usize,
) -> Result<MomentTrajectory> {
    if let Horizon::Fixed(t) = horizon {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("horizon {t} must be positive")));
        }
    }
    let n = params.n();
    let points = frequency::frequency_grid(sites, params.axis_count())?;
    let total = sites.pow(params.axis_count() as u32) as f64;
    let modes: Vec<ModeMatrices> = points
        .par_iter()
        .map(|z| frequency::mode_matrices(params, z))
        .collect::<Result<_>>()?;
    let omega = params.ito_matrix();

    let pairs: Vec<(usize, usize)> = s0.keys().copied().collect();
    let mut init = Vec::with_capacity(pairs.len());
    let mut terms = Vec::with_capacity(pairs.len());
    for &(l, m) in &pairs {
        if l >= points.len() || m >= points.len() {
            return Err(Error::Domain(format!("mode pair ({l}, {m}) outside the {}-point grid", points.len())));
        }
        let s = &s0[&(l, m)];
        if s.shape() != (n, n) {
            return Err(Error::Dimension(format!("initial moment ({l}, {m}) must be {n}x{n}")));
        }
        init.push(s.clone());
        let forcing = if l == m {
            &modes[l].bz * &omega * modes[m].bz.adjoint() * Complex64::new(total, 0.0)
        } else {
            CMatrix::zeros(n, n)
        };
        terms.push((modes[l].az.clone(), modes[m].az.adjoint(), forcing));
    }

    let count = pairs.len();
    let rhs = move |_t: f64, y: &State| -> State {
        let blocks = unflatten(y, n, count);
        let d: Vec<CMatrix> = blocks
            .iter()
            .zip(&terms)
            .map(|(s, (a, b, q))| a * s + s * b + q)
            .collect();
        flatten(&d)
    };
    let (record, t_end) = record_times(horizon, samples);
    let policy = StepPolicy::for_horizon(horizon);
    let sol = dopri(&rhs, flatten(&init), &record, t_end, horizon == Horizon::Steady, &policy)?;
    Ok(MomentTrajectory {
        sites,
        points,
        pairs,
        times: sol.times,
        values: sol.states.iter().map(|y| unflatten(y, n, count)).collect(),
        policy,
        steps: sol.steps,
        reached_steady: sol.reached_steady,
    })
}

/// Closed form `e^{t𝒜_z} S0 e^{t𝒜_v*} + N^d δ_{zv} ∫₀ᵗ e^{τ𝒜_z} ℬ_zΩℬ_v* e^{τ𝒜_v*} dτ`.
pub fn closed_form_moment(params: &BlockParams, sites: usize, z: &FreqPoint, v: &FreqPoint, s0: &CMatrix, t: f64) -> Result<CMatrix> {
    let mz = frequency::mode_matrices(params, z)?;
    let mv = frequency::mode_matrices(params, v)?;
    let ez = cmatrix::expm(&(&mz.az * Complex64::new(t, 0.0)))?;
    let ev = cmatrix::expm(&(mv.az.adjoint() * Complex64::new(t, 0.0)))?;
    let mut out = &ez * s0 * &ev;
    if z.coincides(v) {
        let total = sites.pow(params.axis_count() as u32) as f64;
        let q = &mz.bz * params.ito_matrix() * mv.bz.adjoint() * Complex64::new(total, 0.0);
        out += cmatrix::lyapunov_integral(&mz.az, &q, &mv.az.adjoint(), t)?;
    }
    Ok(out)
}

/// Whole-ring second moments `P = E[x xᵀ]`-type matrix of order `Nn`.
#[derive(Clone, Debug)]
pub struct FullChainTrajectory {
    pub sites: usize,
    pub times: Vec<f64>,
    /// Mean of the diagonal site blocks at each recorded time.
    pub site_covariance: Vec<CMatrix>,
    /// Full matrix at the final time.
    pub last: CMatrix,
    pub steps: usize,
    pub reached_steady: bool,
}

impl FullChainTrajectory {
    /// Block `(j, k)` of the final matrix.
    pub fn block(&self, j: usize, k: usize) -> CMatrix {
        let n = self.last.nrows() / self.sites;
        self.last.view((j * n, k * n), (n, n)).into_owned()
    }
}

/// Integrates `Ṗ = GP + PGᵀ + 𝔅(I ⊗ Ω)𝔅ᵀ` for the assembled chain from `P = 0`.
pub fn fullchain_moments(params: &BlockParams, sites: usize, horizon: Horizon, samples: usize) -> Result<FullChainTrajectory> {
    if sites > FULLCHAIN_MAX_SITES || params.n() > FULLCHAIN_MAX_ORDER {
        return Err(Error::Resource(format!(
            "dense chain path supports N <= {FULLCHAIN_MAX_SITES} and n <= {FULLCHAIN_MAX_ORDER}, got N = {sites}, n = {}",
            params.n()
        )));
    }
    let n = params.n();
    let g = cmatrix::complexify(&network_model::assemble_chain_generator(params, sites)?);
    let gain = cmatrix::complexify(&network_model::assemble_chain_noise_gain(params, sites)?);
    let omega = CMatrix::identity(sites, sites).kronecker(&params.ito_matrix());
    let q = &gain * omega * gain.adjoint();
    let gt = g.adjoint();
    let dim = sites * n;
    let rhs = move |_t: f64, y: &State| -> State {
        let p = CMatrix::from_column_slice(dim, dim, y.as_slice());
        let d = &g * &p + &p * &gt + &q;
        State::from_column_slice(d.as_slice())
    };
    let (record, t_end) = record_times(horizon, samples);
    let sol = dopri(&rhs, State::zeros(dim * dim), &record, t_end, horizon == Horizon::Steady, &StepPolicy::for_horizon(horizon))?;
    let site_mean = |y: &State| {
        let p = CMatrix::from_column_slice(dim, dim, y.as_slice());
        let mut acc = CMatrix::zeros(n, n);
        for k in 0..sites {
            acc += p.view((k * n, k * n), (n, n));
        }
        acc.unscale(sites as f64)
    };
    let last = sol
        .states
        .last()
        .map(|y| CMatrix::from_column_slice(dim, dim, y.as_slice()))
        .unwrap_or_else(|| CMatrix::zeros(dim, dim));
    Ok(FullChainTrajectory {
        sites,
        times: sol.times.clone(),
        site_covariance: sol.states.iter().map(site_mean).collect(),
        last,
        steps: sol.steps,
        reached_steady: sol.reached_steady,
    })
}

/// Runge–Kutta integration of `Ẏ = 𝒜_z Y + V` from `Y(0) = 0`, used to
/// cross-check the closed-form commutator flow.
pub fn integrate_affine(a: &CMatrix, v: &CMatrix, t: f64) -> Result<CMatrix> {
    let (r, c) = v.shape();
    let a = a.clone();
    let v = v.clone();
    let rhs = move |_t: f64, y: &State| -> State {
        let m = CMatrix::from_column_slice(r, c, y.as_slice());
        let d = &a * m + &v;
        State::from_column_slice(d.as_slice())
    };
    let sol = dopri(&rhs, State::zeros(r * c), &[t], t, false, &StepPolicy::default())?;
    let y = sol.states.last().ok_or_else(|| Error::Integration { last_good_time: 0.0, reason: "no output".into() })?;
    Ok(CMatrix::from_column_slice(r, c, y.as_slice()))
}
