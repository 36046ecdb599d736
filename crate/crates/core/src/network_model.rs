//! Building block, ring/torus topology and the full-fragment matrices.
//!
//! A block carries `n` dynamic variables, `m0` external noise channels and,
//! per lattice axis, a rightward (`+`) and leftward (`-`) pair of internal
//! fields. Neighbour couplings enter through `E₊C₊` (input from the left
//! neighbour) and `E₋C₋` (input from the right neighbour).

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;

use crate::cmatrix::{self, CMatrix, RMatrix};
use crate::error::{Error, Result};

/// Entrywise tolerance for the structural checks in [`validate`].
pub const VALIDATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m0: usize,
    pub m_plus: Vec<usize>,
    pub m_minus: Vec<usize>,
}

impl Dims {
    pub fn axes(&self) -> usize {
        self.m_plus.len()
    }

    /// Total internal field dimension `Σ_α (m₊ᵅ + m₋ᵅ)`.
    pub fn m_internal(&self) -> usize {
        self.m_plus.iter().sum::<usize>() + self.m_minus.iter().sum::<usize>()
    }
}

/// Coupling matrices of one lattice axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisCoupling {
    pub c_plus: RMatrix,
    pub c_minus: RMatrix,
    pub d_plus: RMatrix,
    pub d_minus: RMatrix,
    pub e_plus: RMatrix,
    pub e_minus: RMatrix,
}

impl AxisCoupling {
    pub fn zeros(n: usize, m0: usize, m_plus: usize, m_minus: usize) -> Self {
        Self {
            c_plus: RMatrix::zeros(m_plus, n),
            c_minus: RMatrix::zeros(m_minus, n),
            d_plus: RMatrix::zeros(m_plus, m0),
            d_minus: RMatrix::zeros(m_minus, m0),
            e_plus: RMatrix::zeros(n, m_plus),
            e_minus: RMatrix::zeros(n, m_minus),
        }
    }

    /// `E₊C₊`
    pub fn forward_loop(&self) -> RMatrix {
        &self.e_plus * &self.c_plus
    }

    /// `E₋C₋`
    pub fn backward_loop(&self) -> RMatrix {
        &self.e_minus * &self.c_minus
    }

    /// `E₊D₊`
    pub fn forward_noise(&self) -> RMatrix {
        &self.e_plus * &self.d_plus
    }

    /// `E₋D₋`
    pub fn backward_noise(&self) -> RMatrix {
        &self.e_minus * &self.d_minus
    }
}

/// Parameters of the common building block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub dims: Dims,
    pub a: RMatrix,
    pub b: RMatrix,
    pub j: RMatrix,
    pub theta: Option<RMatrix>,
    pub axes: Vec<AxisCoupling>,
}

impl BlockParams {
    pub fn n(&self) -> usize {
        self.dims.n
    }

    pub fn m0(&self) -> usize {
        self.dims.m0
    }

    pub fn axis_count(&self) -> usize {
        self.axes.len()
    }

    pub fn with_theta(mut self, theta: RMatrix) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn theta(&self) -> Result<&RMatrix> {
        self.theta
            .as_ref()
            .ok_or_else(|| Error::Config("CCR matrix Theta is not set".into()))
    }

    /// `C = [C₊¹; C₋¹; C₊²; C₋²; …]`
    pub fn stacked_c(&self) -> RMatrix {
        stack_rows(self.n(), self.axes.iter().flat_map(|ax| [&ax.c_plus, &ax.c_minus]))
    }

    /// `D = [D₊¹; D₋¹; …]`
    pub fn stacked_d(&self) -> RMatrix {
        stack_rows(self.m0(), self.axes.iter().flat_map(|ax| [&ax.d_plus, &ax.d_minus]))
    }

    /// `E = [E₊¹ E₋¹ E₊² E₋² …]`
    pub fn stacked_e(&self) -> RMatrix {
        let blocks: Vec<&RMatrix> = self.axes.iter().flat_map(|ax| [&ax.e_plus, &ax.e_minus]).collect();
        let cols = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = RMatrix::zeros(self.n(), cols);
        let mut at = 0;
        for b in blocks {
            out.view_mut((0, at), (b.nrows(), b.ncols())).copy_from(b);
            at += b.ncols();
        }
        out
    }

    /// Quantum Ito matrix `Ω = I + iJ`.
    pub fn ito_matrix(&self) -> CMatrix {
        let m0 = self.m0();
        RMatrix::identity(m0, m0).zip_map(&self.j, |d, j| Complex64::new(d, j))
    }

    /// Largest Frobenius norm among the parameter matrices.
    pub fn max_norm(&self) -> f64 {
        let mut norms = vec![self.a.norm(), self.b.norm(), self.j.norm()];
        if let Some(t) = &self.theta {
            norms.push(t.norm());
        }
        for ax in &self.axes {
            norms.extend([
                ax.c_plus.norm(),
                ax.c_minus.norm(),
                ax.d_plus.norm(),
                ax.d_minus.norm(),
                ax.e_plus.norm(),
                ax.e_minus.norm(),
            ]);
        }
        norms.into_iter().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    /// Whether `J` sits strictly inside the unit spectral disc or on its edge.
    pub fn ito_regime(&self) -> Result<ItoRegime> {
        let r = cmatrix::spectral_radius(&cmatrix::complexify(&self.j))?;
        Ok(if r < 1.0 - VALIDATION_TOL {
            ItoRegime::Strict { spectral_radius: r }
        } else if r <= 1.0 + VALIDATION_TOL {
            ItoRegime::Boundary
        } else {
            ItoRegime::Invalid { spectral_radius: r }
        })
    }
}

fn stack_rows<'a>(cols: usize, blocks: impl Iterator<Item = &'a RMatrix>) -> RMatrix {
    let blocks: Vec<&RMatrix> = blocks.collect();
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = RMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ItoRegime {
    /// `ρ(J) < 1`: the Ito matrix is positive definite.
    Strict { spectral_radius: f64 },
    /// `ρ(J) = 1`: the Ito matrix is singular but still positive semi-definite.
    Boundary,
    Invalid { spectral_radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ZeroDimension(&'static str),
    AxisCount(usize),
    Shape { name: String, expected: (usize, usize), found: (usize, usize) },
    NonFinite(String),
    JNotAntisymmetric { deviation: f64 },
    JSpectralRadius { radius: f64 },
    ThetaNotAntisymmetric { deviation: f64 },
    Numeric(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDimension(what) => write!(f, "dimension {what} must be positive"),
            Violation::AxisCount(k) => write!(f, "number of lattice axes must be 1 or 2, got {k}"),
            Violation::Shape { name, expected, found } => write!(
                f,
                "{name} must be {}x{}, got {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Violation::NonFinite(name) => write!(f, "{name} has non-finite entries"),
            Violation::JNotAntisymmetric { deviation } => {
                write!(f, "J not antisymmetric (max |J + Jᵀ| = {deviation:.3e})")
            }
            Violation::JSpectralRadius { radius } => {
                write!(f, "spectral radius of J exceeds 1 ({radius:.6})")
            }
            Violation::ThetaNotAntisymmetric { deviation } => {
                write!(f, "Θ not antisymmetric (max |Θ + Θᵀ| = {deviation:.3e})")
            }
            Violation::Numeric(msg) => write!(f, "{msg}"),
        }
    }
}

fn max_abs(m: &RMatrix) -> f64 {
    m.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Lists every violated structural invariant; empty means the block is valid.
pub fn validate(params: &BlockParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let d = &params.dims;
    if d.n == 0 {
        out.push(Violation::ZeroDimension("n"));
    }
    if d.m0 == 0 {
        out.push(Violation::ZeroDimension("m0"));
    }
    if !(1..=2).contains(&d.axes()) || d.m_minus.len() != d.m_plus.len() {
        out.push(Violation::AxisCount(d.axes()));
    }
    if params.axes.len() != d.axes() {
        out.push(Violation::AxisCount(params.axes.len()));
    }

    let mut shape = |name: String, m: &RMatrix, rows: usize, cols: usize| {
        if m.shape() != (rows, cols) {
            out.push(Violation::Shape { name: name.clone(), expected: (rows, cols), found: m.shape() });
        }
        if m.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinite(name));
        }
    };
    shape("A".into(), &params.a, d.n, d.n);
    shape("B".into(), &params.b, d.n, d.m0);
    shape("J".into(), &params.j, d.m0, d.m0);
    if let Some(t) = &params.theta {
        shape("Theta".into(), t, d.n, d.n);
    }
    for (k, ax) in params.axes.iter().enumerate() {
        let (mp, mm) = (
            d.m_plus.get(k).copied().unwrap_or(0),
            d.m_minus.get(k).copied().unwrap_or(0),
        );
        let axis = k + 1;
        shape(format!("C_plus[{axis}]"), &ax.c_plus, mp, d.n);
        shape(format!("C_minus[{axis}]"), &ax.c_minus, mm, d.n);
        shape(format!("D_plus[{axis}]"), &ax.d_plus, mp, d.m0);
        shape(format!("D_minus[{axis}]"), &ax.d_minus, mm, d.m0);
        shape(format!("E_plus[{axis}]"), &ax.e_plus, d.n, mp);
        shape(format!("E_minus[{axis}]"), &ax.e_minus, d.n, mm);
    }

    if params.j.is_square() && params.j.iter().all(|x| x.is_finite()) {
        let dev = max_abs(&(&params.j + params.j.transpose()));
        if dev > VALIDATION_TOL * params.j.norm().max(1.0) {
            out.push(Violation::JNotAntisymmetric { deviation: dev });
        }
        match cmatrix::spectral_radius(&cmatrix::complexify(&params.j)) {
            Ok(r) if r > 1.0 + VALIDATION_TOL => out.push(Violation::JSpectralRadius { radius: r }),
            Ok(_) => {}
            Err(e) => out.push(Violation::Numeric(e.to_string())),
        }
    }
    if let Some(t) = &params.theta {
        if t.is_square() {
            let dev = max_abs(&(t + t.transpose()));
            if dev > VALIDATION_TOL * t.norm().max(1.0) {
                out.push(Violation::ThetaNotAntisymmetric { deviation: dev });
            }
        }
    }
    out
}

/// Fragment of the lattice with periodic boundary conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FragmentSpec {
    pub sites: usize,
    pub axes: usize,
}

impl FragmentSpec {
    pub fn new(sites: usize, axes: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::UnsupportedFragment("fragment needs at least one site per axis".into()));
        }
        if !(1..=2).contains(&axes) {
            return Err(Error::UnsupportedFragment(format!("{axes} axes")));
        }
        Ok(Self { sites, axes })
    }

    /// Smallest chain length at which the algebraic realizability conditions
    /// are equivalent to the per-frequency ones.
    pub fn min_sites_for_algebraic_conditions(n: usize) -> usize {
        5.max(n + 1)
    }

    pub fn admits_algebraic_conditions(&self, n: usize) -> bool {
        self.axes == 1 && self.sites >= Self::min_sites_for_algebraic_conditions(n)
    }

    pub fn total_sites(&self) -> usize {
        self.sites.pow(self.axes as u32)
    }
}

fn require_chain(params: &BlockParams, sites: usize) -> Result<()> {
    if params.axis_count() != 1 {
        return Err(Error::UnsupportedFragment(
            "full-fragment assembly is only available for chains".into(),
        ));
    }
    if sites < 3 {
        return Err(Error::UnsupportedFragment(format!(
            "chain of {sites} sites: neighbour blocks collide below 3 sites"
        )));
    }
    Ok(())
}

fn block_circulant(n_rows: usize, n_cols: usize, sites: usize, diag: &RMatrix, left: &RMatrix, right: &RMatrix) -> RMatrix {
    let mut g = RMatrix::zeros(sites * n_rows, sites * n_cols);
    for k in 0..sites {
        let prev = (k + sites - 1) % sites;
        let next = (k + 1) % sites;
        g.view_mut((k * n_rows, k * n_cols), (n_rows, n_cols)).copy_from(diag);
        g.view_mut((k * n_rows, prev * n_cols), (n_rows, n_cols)).copy_from(left);
        g.view_mut((k * n_rows, next * n_cols), (n_rows, n_cols)).copy_from(right);
    }
    g
}

/// Drift matrix of the whole ring after the internal fields are eliminated:
/// block `(k, k)` is `A`, `(k, k-1)` is `E₊C₊` and `(k, k+1)` is `E₋C₋`,
/// indices taken modulo `sites`.
pub fn assemble_chain_generator(params: &BlockParams, sites: usize) -> Result<RMatrix> {
    require_chain(params, sites)?;
    let ax = &params.axes[0];
    let n = params.n();
    Ok(block_circulant(n, n, sites, &params.a, &ax.forward_loop(), &ax.backward_loop()))
}

/// Noise gain of the whole ring: `B` on the diagonal, `E₊D₊` and `E₋D₋` on the
/// wrapped sub/super diagonals.
pub fn assemble_chain_noise_gain(params: &BlockParams, sites: usize) -> Result<RMatrix> {
    require_chain(params, sites)?;
    let ax = &params.axes[0];
    Ok(block_circulant(
        params.n(),
        params.m0(),
        sites,
        &params.b,
        &ax.forward_noise(),
        &ax.backward_noise(),
    ))
}

/// Unitary DFT matrix `Φ_N = N^{-1/2} (e^{-2πiℓμ/N})`.
pub fn dft_matrix(sites: usize) -> CMatrix {
    let norm = 1.0 / (sites as f64).sqrt();
    CMatrix::from_fn(sites, sites, |l, mu| {
        let k = (l * mu) % sites;
        Complex64::from_polar(norm, -2.0 * PI * k as f64 / sites as f64)
    })
}

/// `(Φ_N ⊗ I_n) M (Φ_N ⊗ I_n)*`. For a block-circulant `M` the result is
/// block diagonal with block `ℓ` belonging to `z_ℓ = e^{2πiℓ/N}`.
pub fn dft_block_transform(m: &CMatrix, sites: usize, n: usize) -> Result<CMatrix> {
    if m.nrows() != sites * n || m.ncols() != sites * n {
        return Err(Error::Dimension(format!(
            "expected a {0}x{0} matrix, got {1}x{2}",
            sites * n,
            m.nrows(),
            m.ncols()
        )));
    }
    let t = dft_matrix(sites).kronecker(&CMatrix::identity(n, n));
    Ok(&t * m * t.adjoint())
}

/// Permutation moving the state of site `k` to site `k+1 (mod N)`.
pub fn cyclic_shift(sites: usize, n: usize) -> RMatrix {
    let mut p = RMatrix::zeros(sites * n, sites * n);
    for k in 0..sites {
        let to = (k + 1) % sites;
        for i in 0..n {
            p[(to * n + i, k * n + i)] = 1.0;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn j2() -> RMatrix {
        RMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    fn decoupled_pair(j: RMatrix, theta: Option<RMatrix>) -> BlockParams {
        BlockParams {
            dims: Dims { n: 2, m0: 2, m_plus: vec![1], m_minus: vec![1] },
            a: -RMatrix::identity(2, 2),
            b: RMatrix::identity(2, 2),
            j,
            theta,
            axes: vec![AxisCoupling::zeros(2, 2, 1, 1)],
        }
    }

    fn scalar_chain(a: f64, fwd: f64, bwd: f64) -> BlockParams {
        let mut ax = AxisCoupling::zeros(1, 1, 1, 1);
        ax.c_plus[(0, 0)] = 1.0;
        ax.e_plus[(0, 0)] = fwd;
        ax.c_minus[(0, 0)] = 1.0;
        ax.e_minus[(0, 0)] = bwd;
        BlockParams {
            dims: Dims { n: 1, m0: 1, m_plus: vec![1], m_minus: vec![1] },
            a: RMatrix::from_element(1, 1, a),
            b: RMatrix::from_element(1, 1, 1.0),
            j: RMatrix::zeros(1, 1),
            theta: None,
            axes: vec![ax],
        }
    }

    #[test]
    fn validate_examples() {
        assert!(validate(&decoupled_pair(j2(), None)).is_empty());

        let v = validate(&decoupled_pair(j2().scale(2.0), None));
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("spectral radius of J exceeds 1"));

        let sym = RMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let v = validate(&decoupled_pair(j2(), Some(sym)));
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("Θ not antisymmetric"));
    }

    #[test]
    fn validate_reports_every_shape_problem() {
        let mut p = decoupled_pair(j2(), None);
        p.b = RMatrix::zeros(3, 2);
        p.axes[0].e_minus = RMatrix::zeros(2, 2);
        let v = validate(&p);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn ito_regime_distinguishes_boundary() {
        assert_eq!(decoupled_pair(j2(), None).ito_regime().unwrap(), ItoRegime::Boundary);
        match decoupled_pair(j2().scale(0.5), None).ito_regime().unwrap() {
            ItoRegime::Strict { spectral_radius } => assert!((spectral_radius - 0.5).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn uncoupled_generator_is_block_diagonal() {
        let p = decoupled_pair(j2(), None);
        let g = assemble_chain_generator(&p, 5).unwrap();
        let want = RMatrix::identity(5, 5).kronecker(&p.a);
        assert_eq!(g, want);
    }

    #[test]
    fn scalar_generator_stencil() {
        let g = assemble_chain_generator(&scalar_chain(1.0, 2.0, 3.0), 4).unwrap();
        let row: Vec<f64> = g.row(0).iter().copied().collect();
        assert_eq!(row, vec![1.0, 3.0, 0.0, 2.0]);
        for k in 1..4 {
            for l in 0..4 {
                assert_eq!(g[(k, l)], g[(0, (l + 4 - k) % 4)]);
            }
        }
    }

    #[test]
    fn short_chains_are_rejected() {
        assert!(matches!(
            assemble_chain_generator(&scalar_chain(1.0, 1.0, 1.0), 2),
            Err(Error::UnsupportedFragment(_))
        ));
    }

    #[test]
    fn dft_examples() {
        assert!((dft_matrix(1)[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-16);
        let h = dft_matrix(2);
        let s = 1.0 / 2f64.sqrt();
        let want = [s, s, s, -s];
        for (i, w) in want.iter().enumerate() {
            assert!((h[(i / 2, i % 2)] - Complex64::new(*w, 0.0)).norm() < 1e-15);
        }
        for n in [3, 4, 7, 12] {
            let f = dft_matrix(n);
            let err = (&f * f.adjoint() - CMatrix::identity(n, n)).norm();
            assert!(err < 1e-14, "N = {n}: {err:e}");
        }
    }

    #[test]
    fn generator_commutes_with_shift() {
        let p = scalar_chain(-2.0, 0.7, -0.3);
        let g = assemble_chain_generator(&p, 6).unwrap();
        let s = cyclic_shift(6, 1);
        assert!((&g * &s - &s * &g).norm() <= 1e-14);
    }

    #[test]
    fn fragment_spec_thresholds() {
        assert_eq!(FragmentSpec::min_sites_for_algebraic_conditions(2), 5);
        assert_eq!(FragmentSpec::min_sites_for_algebraic_conditions(6), 7);
        assert!(!FragmentSpec::new(4, 1).unwrap().admits_algebraic_conditions(2));
        assert!(FragmentSpec::new(5, 1).unwrap().admits_algebraic_conditions(2));
        assert!(FragmentSpec::new(0, 1).is_err());
    }

    #[test]
    fn stacked_matrices_follow_axis_order() {
        let mut p = decoupled_pair(j2(), None);
        p.axes[0].c_plus = RMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        p.axes[0].c_minus = RMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let c = p.stacked_c();
        assert_eq!(c, RMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(p.stacked_e().shape(), (2, 2));
    }
}
