//! Reference reconstructions from a generic affine map: nuclear-norm
//! minimisation by proximal gradient, and rank-`r` factorisation by
//! alternating least squares.

use faer::linalg::solvers::Solve;
use log::warn;
use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::affine_map::AffineMap;
use crate::error::{Error, Result};
use crate::linalg::{self, SortedSvd};

/// Safety factor on `‖S‖₂²` when choosing the proximal step.
const LIPSCHITZ_MARGIN: f64 = 1.02;
/// Relative slack on the monotonicity checks.
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when `‖X_{k+1} − X_k‖_F / ‖X_k‖_F` falls below this.
    pub tol: f64,
    /// Weight on the data-fit term of the nuclear-norm objective; `None` uses [`default_tau`].
    pub tau: Option<f64>,
    /// Proximal step; `None` uses `1/(2τ‖S‖₂²)`.
    pub step: Option<f64>,
    /// Factorisation rank.
    pub rank: usize,
    /// Noise standard deviation used by [`default_tau`].
    pub noise_std: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: 1e-6,
            tau: None,
            step: None,
            rank: 1,
            noise_std: 0.0,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        if let Some(step) = self.step {
            if !(step > 0.0) {
                return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
            }
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0) {
                return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
            }
        }
        Ok(())
    }
}

/// Singular-value soft thresholding `U max(Σ − θ, 0) Vᵀ`.
pub fn svt(x: &DMatrix<f64>, theta: f64) -> DMatrix<f64> {
    svt_with_norm(x, theta).0
}

/// [`svt`] together with the nuclear norm of its output.
fn svt_with_norm(x: &DMatrix<f64>, theta: f64) -> (DMatrix<f64>, f64) {
    assert!(theta >= 0.0, "threshold must be nonnegative");
    if x.is_empty() {
        return (x.clone(), 0.0);
    }
    let svd = SortedSvd::new(x);
    let kept = svd.singular_values.iter().take_while(|&&s| s > theta).count();
    if kept == 0 {
        return (DMatrix::zeros(x.nrows(), x.ncols()), 0.0);
    }
    let mut u = svd.u.columns(0, kept).into_owned();
    let mut norm = 0.0;
    for k in 0..kept {
        let shrunk = svd.singular_values[k] - theta;
        norm += shrunk;
        u.column_mut(k).scale_mut(shrunk);
    }
    (u * svd.v_t.rows(0, kept), norm)
}

/// Nuclear norm `Σ σ_k`.
pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    linalg::singular_values_desc(x).iter().sum()
}

/// `τ = 1/(2·max(σ, 10⁻³)·√max(M,N)·c_S)` with `c_S = ‖S‖_F/√(MN)` the RMS
/// column norm of the map.
pub fn default_tau(map: &AffineMap, noise_std: f64) -> f64 {
    let (m, n) = map.input_shape();
    let c_s = (map.frobenius_sq() / (m * n) as f64).sqrt();
    1.0 / (2.0 * noise_std.max(1e-3) * (m.max(n) as f64).sqrt() * c_s)
}

/// `‖S‖₂²`, the largest eigenvalue of the smaller of `SSᵀ` and `SᵀS`.
pub fn operator_norm_sq(s: &DMatrix<f64>) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    let gram = if s.nrows() <= s.ncols() {
        s * s.transpose()
    } else {
        s.tr_mul(s)
    };
    let n = gram.nrows();
    faer::MatRef::from_column_major_slice(gram.as_slice(), n, n)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .expect("eigenvalues of a finite symmetric matrix")
        .into_iter()
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnmSolution {
    pub l: DMatrix<f64>,
    /// Objective `‖L‖_* + τ‖y − 𝒜(L)‖²` at the start and after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub tau: f64,
    pub step: f64,
}

/// Proximal gradient on `‖L‖_* + τ‖y − 𝒜(L)‖²` from `L = 0`.
///
/// Returns [`Error::Divergence`] if the objective rises beyond a `1e-9`
/// relative slack, which happens when the step is too large.
pub fn nnm_solve(map: &AffineMap, y: &DVector<f64>, opts: &SolverOptions) -> Result<NnmSolution> {
    opts.validate()?;
    check_observations(map, y)?;
    let (m, n) = map.input_shape();
    let s = map.stacked();
    let tau = opts.tau.unwrap_or_else(|| default_tau(map, opts.noise_std));
    let lipschitz = operator_norm_sq(s) * LIPSCHITZ_MARGIN;
    let safe_step = 1.0 / (2.0 * tau * lipschitz.max(f64::MIN_POSITIVE));
    let step = match opts.step {
        Some(step) => {
            if step > safe_step {
                warn!("step {step:e} exceeds the convergence limit {safe_step:e}");
            }
            step
        }
        None => safe_step,
    };

    let mut l = DMatrix::zeros(m, n);
    let mut residual = y.clone();
    let mut objective = vec![tau * residual.norm_squared()];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        iterations = it;
        let grad = linalg::unvec(&s.tr_mul(&residual), m, n) * (-2.0 * tau);
        let (next, nuclear) = svt_with_norm(&(&l - grad * step), step);
        residual = y - s * linalg::vec(&next);
        let value = nuclear + tau * residual.norm_squared();
        let before = *objective.last().expect("objective trace starts non-empty");
        if value > before + MONOTONE_SLACK * before.abs().max(1.0) {
            return Err(Error::Divergence {
                iteration: it,
                before,
                after: value,
                step,
            });
        }
        objective.push(value);
        let change = (&next - &l).norm();
        let scale = l.norm();
        l = next;
        if change <= opts.tol * scale || (scale == 0.0 && change == 0.0) {
            converged = true;
            break;
        }
    }
    Ok(NnmSolution {
        l,
        objective,
        iterations,
        converged,
        tau,
        step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfSolution {
    pub l: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// `‖y − 𝒜(BRᵀ)‖²` after initialisation and after every half-step.
    pub residual: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_observations(map: &AffineMap, y: &DVector<f64>) -> Result<()> {
    if y.len() != map.observations() {
        return Err(Error::DimensionMismatch {
            context: "observation vector",
            expected: format!("{}", map.observations()),
            actual: format!("{}", y.len()),
        });
    }
    Ok(())
}

/// Normal equations of both half-steps, built from `G = SᵀS` and `h = Sᵀy`.
///
/// With `D_B = S(R ⊗ I_M)` and `D_R = S(I_N ⊗ B)` the Gram matrices are
/// `(R ⊗ I)ᵀG(R ⊗ I)` and `(I ⊗ B)ᵀG(I ⊗ B)`, which cost far less than
/// forming `DᵀD` when `p` is comparable to `MN`.
struct NormalEquations {
    m: usize,
    n: usize,
    g: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl NormalEquations {
    fn new(s: &DMatrix<f64>, y: &DVector<f64>, m: usize, n: usize) -> Self {
        let s_t = s.transpose();
        let g = &s_t * s;
        let h = linalg::unvec(&(&s_t * y), m, n);
        Self { m, n, g, h }
    }

    /// Gram and right-hand side for `vec(B)` (index `a + M·k`).
    fn b_step(&self, r_fac: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (m, n, r) = (self.m, self.n, r_fac.ncols());
        let mn = m * n;
        // Column b + M·j of G regrouped as an (MN·M)×N matrix; times R gives G(R ⊗ I).
        let gr = DMatrixView::from_slice(self.g.as_slice(), mn * m, n) * r_fac;
        let gr_t = DMatrix::from_column_slice(mn, m * r, gr.as_slice()).transpose();
        let gram = DMatrixView::from_slice(gr_t.as_slice(), m * r * m, n) * r_fac;
        let gram = DMatrix::from_column_slice(m * r, m * r, gram.as_slice());
        let rhs = &self.h * r_fac;
        (gram, linalg::vec(&rhs))
    }

    /// Gram and right-hand side for `vec(Rᵀ)` (index `k + r·j`).
    fn r_step(&self, b: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (m, n, r) = (self.m, self.n, b.ncols());
        let mn = m * n;
        let b_t = b.transpose();
        // G read as an M×(N·MN) matrix; Bᵀ times it, read back as Nr×MN, is (I ⊗ Bᵀ)G.
        let bg = &b_t * DMatrixView::from_slice(self.g.as_slice(), m, n * mn);
        let bg_t = DMatrix::from_column_slice(n * r, mn, bg.as_slice()).transpose();
        // Same regrouping on its transpose gives (I ⊗ Bᵀ)G(I ⊗ B), which is symmetric.
        let gram = &b_t * DMatrixView::from_slice(bg_t.as_slice(), m, n * n * r);
        let gram = DMatrix::from_column_slice(n * r, n * r, gram.as_slice());
        let rhs = &b_t * &self.h;
        (gram, linalg::vec(&rhs))
    }
}

fn solve_normal(
    (gram, rhs): (DMatrix<f64>, DVector<f64>),
    iteration: usize,
    half_step: &'static str,
) -> Result<DVector<f64>> {
    // faer's blocked Cholesky is several times faster than nalgebra's at these sizes
    let n = gram.nrows();
    let llt = faer::MatRef::from_column_major_slice(gram.as_slice(), n, n)
        .llt(faer::Side::Lower)
        .map_err(|_| Error::SingularLeastSquares { iteration, half_step })?;
    let x = llt.solve(faer::MatRef::from_column_major_slice(rhs.as_slice(), n, 1));
    let x = DVector::from_fn(n, |i, _| x[(i, 0)]);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularLeastSquares { iteration, half_step });
    }
    Ok(x)
}

fn fit_residual(s: &DMatrix<f64>, y: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    (y - s * linalg::vec(l)).norm_squared()
}

/// Alternating least squares on `‖y − 𝒜(BRᵀ)‖²` with a spectral start.
///
/// `B₀` holds the top-`r` left singular vectors of `𝒜*(y)`; `R₀` is its least
/// squares fit. The residual is checked to be nonincreasing at every half-step.
pub fn mf_solve(map: &AffineMap, y: &DVector<f64>, opts: &SolverOptions) -> Result<MfSolution> {
    opts.validate()?;
    check_observations(map, y)?;
    let (m, n) = map.input_shape();
    let rank = opts.rank;
    if rank == 0 || rank > m.min(n) {
        return Err(Error::RankTooLarge {
            requested: rank,
            available: m.min(n),
        });
    }
    let dof = rank * (m + n - rank);
    if map.observations() < dof {
        warn!(
            "{} observations are fewer than the {dof} degrees of freedom of a rank-{rank} matrix",
            map.observations()
        );
    }
    let s = map.stacked();
    let slack = MONOTONE_SLACK * (y.norm_squared() + 1.0);

    let normal = NormalEquations::new(s, y, m, n);

    let mut b = SortedSvd::new(&normal.h).left(rank);
    let x = solve_normal(normal.r_step(&b), 0, "R")?;
    let mut r_fac = linalg::unvec(&x, rank, n).transpose();
    let mut l = &b * r_fac.transpose();
    let mut residual = vec![fit_residual(s, y, &l)];
    let mut converged = false;
    let mut iterations = 0;

    if residual[0] == 0.0 {
        return Ok(MfSolution {
            l,
            b,
            r: r_fac,
            residual,
            iterations: 0,
            converged: true,
        });
    }

    let push = |value: f64, iteration: usize, residual: &mut Vec<f64>| -> Result<()> {
        let before = *residual.last().expect("residual trace starts non-empty");
        if value > before + slack {
            return Err(Error::NonMonotoneResidual {
                iteration,
                before,
                after: value,
            });
        }
        residual.push(value);
        Ok(())
    };

    for it in 1..=opts.max_iters {
        iterations = it;
        let x = solve_normal(normal.b_step(&r_fac), it, "B")?;
        b = linalg::unvec(&x, m, rank);
        push(fit_residual(s, y, &(&b * r_fac.transpose())), it, &mut residual)?;

        let x = solve_normal(normal.r_step(&b), it, "R")?;
        r_fac = linalg::unvec(&x, rank, n).transpose();
        let next = &b * r_fac.transpose();
        push(fit_residual(s, y, &next), it, &mut residual)?;

        let change = (&next - &l).norm();
        let scale = l.norm();
        l = next;
        if change <= opts.tol * scale || change == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(MfSolution {
        l,
        b,
        r: r_fac,
        residual,
        iterations,
        converged,
    })
}
