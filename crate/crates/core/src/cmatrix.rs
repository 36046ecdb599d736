//! Dense complex-matrix kernel.
//!
//! Storage is `nalgebra::DMatrix<Complex64>`. The Sylvester solver works by
//! Kronecker vectorization: the linear system has order `rows(A)·cols(B)` and
//! is solved densely, which is fine for the block sizes met in mode analysis
//! (n up to a few dozen) and keeps the result reproducible bit for bit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;

/// Relative residual accepted from the Sylvester/Lyapunov solver.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Slack on the smallest eigenvalue in positive semi-definiteness checks.
pub const PSD_SLACK: f64 = 1e-9;
/// Default distance from the imaginary axis required of Hurwitz matrices.
pub const HURWITZ_MARGIN: f64 = 1e-10;

/// Pivot/singular-value ratio below which a vectorized Sylvester system is
/// treated as singular.
const SINGULAR_RATIO: f64 = 1e-13;

pub const IMAG: Complex64 = Complex64::new(0.0, 1.0);

pub fn complexify(m: &RMatrix) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn real_part(m: &CMatrix) -> RMatrix {
    m.map(|x| x.re)
}

pub fn imag_part(m: &CMatrix) -> RMatrix {
    m.map(|x| x.im)
}

/// `(M + M*) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Row-major nested vectors, the layout used in model files and reports.
pub fn real_rows(m: &RMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn serialize_real<S: serde::Serializer>(m: &RMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&real_rows(m), s)
}

pub fn require_square(m: &CMatrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant.
pub fn expm(m: &CMatrix) -> Result<CMatrix> {
    require_square(m, "expm argument")?;
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let e = m.exp();
    if e.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::Numeric("matrix exponential overflowed".into()));
    }
    Ok(e)
}

/// Solves `A X + X B + Q = 0` for `X`.
///
/// The system `(I ⊗ A + Bᵀ ⊗ I) vec(X) = -vec(Q)` is factorized by LU with one
/// step of iterative refinement. When the pivots indicate a spectrum clash the
/// smallest singular value of the vectorized operator is computed and returned
/// in the error.
pub fn solve_sylvester(a: &CMatrix, b: &CMatrix, q: &CMatrix) -> Result<CMatrix> {
    require_square(a, "A")?;
    require_square(b, "B")?;
    let (n, m) = (a.nrows(), b.nrows());
    if q.nrows() != n || q.ncols() != m {
        return Err(Error::Dimension(format!(
            "Q must be {n}x{m}, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 || m == 0 {
        return Ok(CMatrix::zeros(n, m));
    }

    let op = sylvester_operator(a, b);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let lu = op.clone().lu();

    let u = lu.u();
    let pivots = u.diagonal().map(|p| p.norm());
    let (pmin, pmax) = (pivots.min(), pivots.max());
    if !(pmin > SINGULAR_RATIO * pmax) {
        let sv = op.singular_values();
        let (smin, smax) = (sv.min(), sv.max());
        if !(smin > SINGULAR_RATIO * smax) {
            return Err(Error::Solvability { sigma_min: smin });
        }
    }

    let mut x = lu
        .solve(&rhs)
        .ok_or(Error::Solvability { sigma_min: 0.0 })?;
    let r = &rhs - &op * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(CMatrix::from_column_slice(n, m, x.as_slice()))
}

/// `I ⊗ A + Bᵀ ⊗ I`, the column-major vectorization of `X ↦ AX + XB`.
pub fn sylvester_operator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (n, m) = (a.nrows(), b.nrows());
    CMatrix::identity(m, m).kronecker(a) + b.transpose().kronecker(&CMatrix::identity(n, n))
}

/// Solves `A X + X A* + Q = 0`.
pub fn solve_lyapunov(a: &CMatrix, q: &CMatrix) -> Result<CMatrix> {
    solve_sylvester(a, &a.adjoint(), q)
}

/// Frobenius norm of `A X + X B + Q`.
pub fn sylvester_residual(a: &CMatrix, b: &CMatrix, q: &CMatrix, x: &CMatrix) -> f64 {
    (a * x + x * b + q).norm()
}

/// `∫₀ᵗ e^{sA} Q e^{sB} ds` without inverting `A` or `B`.
///
/// A short interval is handled by the block-triangular exponential
/// `exp(τ [[A, Q], [0, -B]])`; longer horizons are reached by doubling
/// `I(2τ) = I(τ) + e^{τA} I(τ) e^{τB}`.
pub fn lyapunov_integral(a: &CMatrix, q: &CMatrix, b: &CMatrix, t: f64) -> Result<CMatrix> {
    require_square(a, "A")?;
    require_square(b, "B")?;
    let (n, m) = (a.nrows(), b.nrows());
    if q.nrows() != n || q.ncols() != m {
        return Err(Error::Dimension(format!(
            "Q must be {n}x{m}, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("integration horizon {t} must be finite and >= 0")));
    }
    if t == 0.0 || n == 0 || m == 0 {
        return Ok(CMatrix::zeros(n, m));
    }

    let scale = a.norm() + b.norm();
    let mut doublings = 0u32;
    let mut tau = t;
    while tau * scale > 1.0 && doublings < 60 {
        tau *= 0.5;
        doublings += 1;
    }

    let mut block = CMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(&a.scale(tau));
    block.view_mut((0, n), (n, m)).copy_from(&q.scale(tau));
    block.view_mut((n, n), (m, m)).copy_from(&(-b.scale(tau)));
    let big = expm(&block)?;
    let mut ea = big.view((0, 0), (n, n)).into_owned();
    let f = big.view((0, n), (n, m)).into_owned();
    let mut eb = expm(&b.scale(tau))?;
    let mut acc = &f * &eb;

    for _ in 0..doublings {
        acc = &acc + &ea * &acc * &eb;
        ea = &ea * &ea;
        eb = &eb * &eb;
    }
    Ok(acc)
}

/// `∫₀ᵗ e^{sA} ds`.
pub fn exp_integral(a: &CMatrix, t: f64) -> Result<CMatrix> {
    let n = a.nrows();
    lyapunov_integral(a, &CMatrix::identity(n, n), &CMatrix::zeros(n, n), t)
}

/// Eigenvalues from the complex Schur form.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<Complex64>> {
    require_square(m, "eigenvalue argument")?;
    let n = m.nrows();
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![m[(0, 0)]]),
        2 => {
            let (l1, l2) = eig2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            return Ok(vec![l1, l2]);
        }
        _ => {}
    }
    if m.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::Numeric("eigenvalue argument has non-finite entries".into()));
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 1000 * n)
        .ok_or_else(|| Error::Numeric(format!("Schur iteration did not converge (n = {n})")))?;
    let (_, t) = schur.unpack();

    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let split = i + 1 == n
            || t[(i + 1, i)].norm() <= f64::EPSILON * (t[(i, i)].norm() + t[(i + 1, i + 1)].norm());
        if split {
            out.push(t[(i, i)]);
            i += 1;
        } else {
            let (l1, l2) = eig2(t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            out.push(l1);
            out.push(l2);
            i += 2;
        }
    }
    Ok(out)
}

fn eig2(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> (Complex64, Complex64) {
    let half_tr = (a + d) * 0.5;
    let disc = ((a - d) * 0.5).powi(2) + b * c;
    let root = disc.sqrt();
    (half_tr + root, half_tr - root)
}

pub fn spectral_radius(m: &CMatrix) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(m: &CMatrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(m: &CMatrix, margin: f64) -> Result<bool> {
    Ok(spectral_abscissa(m)? < -margin)
}

/// Ascending eigenvalues of the Hermitian part `(M + M*)/2`.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Result<Vec<f64>> {
    require_square(m, "Hermitian eigenvalue argument")?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut ev: Vec<f64> = hermitize(m).symmetric_eigenvalues().iter().copied().collect();
    if ev.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("Hermitian eigenvalues are not finite".into()));
    }
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// True iff the Hermitian part has no eigenvalue below `-tol` and the
/// anti-Hermitian part is within `tol·‖M‖`.
pub fn psd_check(m: &CMatrix, tol: f64) -> Result<bool> {
    require_square(m, "PSD argument")?;
    let skew = (m - m.adjoint()).norm();
    if skew > tol * m.norm() {
        return Ok(false);
    }
    let ev = hermitian_eigenvalues(m)?;
    Ok(ev.first().map_or(true, |&l| l >= -tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn j2() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(-1.0), c(0.0)])
    }

    fn random_cmatrix(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMatrix {
        CMatrix::from_fn(r, k, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        let m = random_cmatrix(rng, n, n);
        let shift = spectral_abscissa(&m).unwrap() + rng.random_range(0.1..1.0);
        m - CMatrix::identity(n, n).scale(shift)
    }

    fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn expm_examples() {
        let z = CMatrix::zeros(2, 2);
        assert!(max_abs_diff(&expm(&z).unwrap(), &CMatrix::identity(2, 2)) < 1e-15);

        let d = CMatrix::from_diagonal(&DVector::from_vec(vec![c(2f64.ln()), c(3f64.ln())]));
        let want = CMatrix::from_diagonal(&DVector::from_vec(vec![c(2.0), c(3.0)]));
        assert!(max_abs_diff(&expm(&d).unwrap(), &want) < 1e-14);

        let nil = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        let want = CMatrix::from_row_slice(2, 2, &[c(1.0), c(1.0), c(0.0), c(1.0)]);
        assert!(max_abs_diff(&expm(&nil).unwrap(), &want) < 1e-15);
    }

    #[test]
    fn expm_rejects_non_square() {
        assert!(matches!(expm(&CMatrix::zeros(2, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn expm_of_commuting_sum_factorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let m = random_cmatrix(&mut rng, n, n);
            let a = &m * &m * c(0.3) + m.scale(0.5);
            let b = &m * &m * &m * c(-0.1) + CMatrix::identity(n, n).scale(0.2);
            let lhs = expm(&(&a + &b)).unwrap();
            let rhs = expm(&a).unwrap() * expm(&b).unwrap();
            assert!(max_abs_diff(&lhs, &rhs) <= 1e-9, "n = {n}");
        }
    }

    #[test]
    fn sylvester_examples() {
        let one = CMatrix::from_element(1, 1, c(-1.0));
        let x = solve_sylvester(&one, &one, &CMatrix::from_element(1, 1, c(2.0))).unwrap();
        assert!((x[(0, 0)] - c(1.0)).norm() < 1e-15);

        let neg = -CMatrix::identity(2, 2);
        let q = CMatrix::identity(2, 2) + j2() * IMAG;
        let x = solve_sylvester(&neg, &neg, &q).unwrap();
        assert!(max_abs_diff(&x, &q.scale(0.5)) < 1e-15);
    }

    #[test]
    fn sylvester_reports_spectrum_clash() {
        let a = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(-1.0), c(0.0)]);
        let err = solve_lyapunov(&a, &CMatrix::identity(2, 2)).unwrap_err();
        match err {
            Error::Solvability { sigma_min } => assert!(sigma_min < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sylvester_dimension_errors() {
        let a = CMatrix::identity(2, 2);
        assert!(matches!(
            solve_sylvester(&a, &a, &CMatrix::zeros(3, 2)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            solve_sylvester(&CMatrix::zeros(2, 3), &a, &CMatrix::zeros(2, 2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sylvester_residual_bound_on_random_hurwitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..1000 {
            let n = rng.random_range(1..=8);
            let m = rng.random_range(1..=8);
            let a = random_hurwitz(&mut rng, n);
            let b = random_hurwitz(&mut rng, m);
            let q = random_cmatrix(&mut rng, n, m);
            let x = solve_sylvester(&a, &b, &q).unwrap();
            let res = sylvester_residual(&a, &b, &q, &x);
            let bound = RESIDUAL_TOL * (a.norm() + b.norm()) * x.norm() + 1e-12 * q.norm();
            assert!(res <= bound, "trial {trial}: residual {res:e} > {bound:e}");
        }
    }

    #[test]
    fn lyapunov_with_psd_forcing_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(1..=6);
            let a = random_hurwitz(&mut rng, n);
            let g = random_cmatrix(&mut rng, n, n);
            let q = &g * g.adjoint();
            let x = solve_lyapunov(&a, &q).unwrap();
            assert!((&x - x.adjoint()).norm() <= 1e-10 * x.norm());
            assert!(psd_check(&x, 1e-9).unwrap());
        }
    }

    /// Composite 8-point Gauss–Legendre quadrature of `e^{tA} Q e^{tA*}` on
    /// `[0, T]`, refined by doubling the panel count. Uses only `expm`.
    fn lyapunov_by_quadrature(a: &CMatrix, q: &CMatrix) -> CMatrix {
        const NODES: [f64; 8] = [
            -0.960_289_856_497_536_3,
            -0.796_666_477_413_626_7,
            -0.525_532_409_916_329,
            -0.183_434_642_495_649_8,
            0.183_434_642_495_649_8,
            0.525_532_409_916_329,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_3,
        ];
        const WEIGHTS: [f64; 8] = [
            0.101_228_536_290_376_26,
            0.222_381_034_453_374_47,
            0.313_706_645_877_887_3,
            0.362_683_783_378_362,
            0.362_683_783_378_362,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_47,
            0.101_228_536_290_376_26,
        ];
        let decay = -spectral_abscissa(a).unwrap();
        let horizon = 45.0 / decay + 5.0;
        let integrate = |panels: usize| {
            let h = horizon / panels as f64;
            let mut acc = CMatrix::zeros(a.nrows(), a.nrows());
            for p in 0..panels {
                let mid = (p as f64 + 0.5) * h;
                for (x, w) in NODES.iter().zip(WEIGHTS.iter()) {
                    let t = mid + 0.5 * h * x;
                    let e = expm(&a.scale(t)).unwrap();
                    acc += (&e * q * e.adjoint()).scale(0.5 * h * w);
                }
            }
            acc
        };
        let mut panels = 16;
        let mut prev = integrate(panels);
        loop {
            panels *= 2;
            let next = integrate(panels);
            if (&next - &prev).norm() <= 1e-11 * next.norm().max(1.0) || panels > 4096 {
                return next;
            }
            prev = next;
        }
    }

    #[test]
    fn lyapunov_matches_time_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..12 {
            let n = rng.random_range(1..=4);
            let a = random_hurwitz(&mut rng, n);
            let g = random_cmatrix(&mut rng, n, n);
            let q = &g * g.adjoint();
            let x = solve_lyapunov(&a, &q).unwrap();
            let oracle = lyapunov_by_quadrature(&a, &q);
            assert!(max_abs_diff(&x, &oracle) <= 1e-6, "{}", max_abs_diff(&x, &oracle));
        }
    }

    #[test]
    fn lyapunov_integral_converges_to_steady_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_hurwitz(&mut rng, 3);
        let q = CMatrix::identity(3, 3);
        let steady = solve_lyapunov(&a, &q).unwrap();
        let decay = -spectral_abscissa(&a).unwrap();
        let long = lyapunov_integral(&a, &q, &a.adjoint(), 60.0 / decay).unwrap();
        assert!(max_abs_diff(&steady, &long) < 1e-9);
    }

    #[test]
    fn exp_integral_handles_singular_generator() {
        let nil = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        let got = exp_integral(&nil, 3.0).unwrap();
        // ∫₀³ [[1, s], [0, 1]] ds
        let want = CMatrix::from_row_slice(2, 2, &[c(3.0), c(4.5), c(0.0), c(3.0)]);
        assert!(max_abs_diff(&got, &want) < 1e-12);
        assert_eq!(exp_integral(&nil, 0.0).unwrap(), CMatrix::zeros(2, 2));
    }

    #[test]
    fn spectral_examples() {
        assert!((spectral_radius(&j2()).unwrap() - 1.0).abs() < 1e-15);
        assert!(is_hurwitz(&(-CMatrix::identity(3, 3)), HURWITZ_MARGIN).unwrap());
        assert!(!is_hurwitz(&j2(), HURWITZ_MARGIN).unwrap());
    }

    #[test]
    fn eigenvalues_of_larger_matrices_match_trace_and_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(3..=7);
            let m = random_cmatrix(&mut rng, n, n);
            let ev = eigenvalues(&m).unwrap();
            let tr: Complex64 = ev.iter().sum();
            let det: Complex64 = ev.iter().product();
            assert!((tr - m.trace()).norm() < 1e-11);
            assert!((det - m.determinant()).norm() < 1e-10 * (1.0 + det.norm()));
        }
    }

    #[test]
    fn psd_examples() {
        assert!(psd_check(&CMatrix::identity(2, 2), 1e-12).unwrap());
        let half = (CMatrix::identity(2, 2) + j2() * IMAG).scale(0.5);
        assert!(psd_check(&half, 1e-12).unwrap());
        assert!(!psd_check(&(-CMatrix::identity(2, 2)), 1e-12).unwrap());
        let ev = hermitian_eigenvalues(&half).unwrap();
        assert!(ev[0].abs() < 1e-15 && (ev[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psd_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.5), c(0.0), c(1.0)]);
        assert!(!psd_check(&m, 1e-9).unwrap());
        assert!(psd_check(&hermitize(&m), 1e-9).unwrap());
    }

    #[test]
    fn adjoint_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_cmatrix(&mut rng, 3, 5);
        assert_eq!(m.adjoint().adjoint(), m);
    }
}
