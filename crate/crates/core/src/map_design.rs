//! Power-constrained MSE-optimal designs for maps restricted to a known column
//! subspace, and the rank trade-off between estimation noise and discarded
//! spectrum.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::affine_map::NoiseModel;
use crate::error::{ensure_shape, Error, Result};
use crate::linalg::{self, SortedSvd};

/// Tolerance on `FᵀF = I`.
pub const SEMI_UNITARY_TOL: f64 = 1e-8;

/// Semi-unitary `M×d` basis of a column subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let (m, d) = basis.shape();
        if d == 0 || d > m {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension must satisfy 1 <= d <= M, got d={d}, M={m}"
            )));
        }
        let defect = linalg::orthonormality_defect(&basis);
        if defect > SEMI_UNITARY_TOL {
            return Err(Error::InvalidArgument(format!(
                "basis is not semi-unitary (defect {defect:e})"
            )));
        }
        Ok(Self { basis })
    }

    /// First `d` columns of the identity.
    pub fn canonical(m: usize, d: usize) -> Result<Self> {
        Self::new(DMatrix::identity(m, d))
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }
}

/// Optimal design `Â` and, once lifted, the full map `Ŝ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub a_hat: DMatrix<f64>,
    pub s_hat: Option<DMatrix<f64>>,
    /// KKT multiplier of the power constraint.
    pub mu: f64,
    pub theoretical_mse: f64,
}

impl DesignResult {
    /// Fills `s_hat` with `lift_design(a_hat, f)`.
    pub fn lifted(mut self, f: &SubspaceBasis) -> Result<Self> {
        self.s_hat = Some(lift_design(&self.a_hat, f)?);
        Ok(self)
    }
}

/// `A = S(I_N ⊗ F)`, one `p×M` column block of `S` at a time.
pub fn restrict_to_subspace(s: &DMatrix<f64>, f: &SubspaceBasis) -> Result<DMatrix<f64>> {
    let (m, d) = f.basis().shape();
    if s.ncols() % m != 0 {
        return Err(Error::DimensionMismatch {
            context: "restrict_to_subspace",
            expected: format!("a multiple of M={m} columns"),
            actual: format!("{}", s.ncols()),
        });
    }
    let n = s.ncols() / m;
    let mut a = DMatrix::zeros(s.nrows(), n * d);
    for j in 0..n {
        let block = s.columns(j * m, m) * f.basis();
        a.columns_mut(j * d, d).copy_from(&block);
    }
    Ok(a)
}

/// `Ŝ = Â(I_N ⊗ F)ᵀ`.
pub fn lift_design(a_hat: &DMatrix<f64>, f: &SubspaceBasis) -> Result<DMatrix<f64>> {
    let (m, d) = f.basis().shape();
    if a_hat.ncols() % d != 0 {
        return Err(Error::DimensionMismatch {
            context: "lift_design",
            expected: format!("a multiple of d={d} columns"),
            actual: format!("{}", a_hat.ncols()),
        });
    }
    let n = a_hat.ncols() / d;
    let f_t = f.basis().transpose();
    let mut s = DMatrix::zeros(a_hat.nrows(), n * m);
    for j in 0..n {
        let block = a_hat.columns(j * d, d) * &f_t;
        s.columns_mut(j * m, m).copy_from(&block);
    }
    Ok(s)
}

/// Minimum-MSE design `Â` (`p×n_cols`) under `‖Â‖_F² ≤ power`.
///
/// `Â = U_A Σ_A V_Aᵀ` where `U_A` holds the eigenvectors of `C` for its
/// `n_cols` smallest eigenvalues `D`, `μ = tr(D^{1/2})² / P²` and
/// `Σ_A² = μ^{-1/2} D^{1/2}`. `rotation` supplies `V_A` (identity if `None`).
///
/// Noise-free i.i.d. models have no unique optimum; they get equal power on
/// every coefficient, with `μ = 0` and zero MSE.
pub fn solve_power_constrained_design(
    noise: &NoiseModel,
    n_cols: usize,
    power: f64,
    rotation: Option<&DMatrix<f64>>,
) -> Result<DesignResult> {
    let p = noise.dim();
    if n_cols == 0 {
        return Err(Error::InvalidArgument("design needs at least one column".into()));
    }
    if p < n_cols {
        return Err(Error::InfeasibleDesign {
            observations: p,
            unknowns: n_cols,
        });
    }
    if !(power > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be > 0, got {power}")));
    }
    if let Some(v) = rotation {
        ensure_shape("design rotation", v.shape(), (n_cols, n_cols))?;
        let defect = linalg::orthonormality_defect(v);
        if defect > SEMI_UNITARY_TOL {
            return Err(Error::InvalidArgument(format!("rotation is not orthogonal (defect {defect:e})")));
        }
    }

    let (vals, vecs) = noise.eigen_desc();
    let first = p - n_cols;
    let u_a = vecs.columns(first, n_cols).into_owned();
    let d = vals.rows(first, n_cols).into_owned();

    let (sigma, mu, mse) = if noise.iid_variance() == Some(0.0) {
        let gain = (power / n_cols as f64).sqrt();
        (DVector::from_element(n_cols, gain), 0.0, 0.0)
    } else {
        if d.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NotPositiveDefinite(
                "selected noise eigenvalues must be positive".into(),
            ));
        }
        let root_sum: f64 = d.iter().map(|v| v.sqrt()).sum();
        let mu = root_sum * root_sum / (power * power);
        let sigma = d.map(|v| (v.sqrt() / mu.sqrt()).sqrt());
        (sigma, mu, root_sum * root_sum / power)
    };

    let mut a_hat = u_a;
    for (j, s) in sigma.iter().enumerate() {
        a_hat.column_mut(j).scale_mut(*s);
    }
    if let Some(v) = rotation {
        a_hat = a_hat * v.transpose();
    }
    Ok(DesignResult {
        a_hat,
        s_hat: None,
        mu,
        theoretical_mse: mse,
    })
}

/// `ÂᵀC⁻¹Â` formed through whitening.
fn whitened_gram(a: &DMatrix<f64>, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let aw = noise.whiten(a)?;
    Ok(linalg::at_b(&aw, &aw))
}

/// Design objective `tr((AᵀC⁻¹A)⁻¹)`.
pub fn design_mse(a: &DMatrix<f64>, noise: &NoiseModel) -> Result<f64> {
    let g = whitened_gram(a, noise)?;
    let chol = g
        .cholesky()
        .ok_or(Error::SingularGram { condition: f64::INFINITY })?;
    Ok(chol.inverse().trace())
}

/// Relative stationarity residual `‖ÂᵀÂ − μ⁻¹(ÂᵀC⁻¹Â)⁻¹‖_F / ‖ÂᵀÂ‖_F`.
pub fn kkt_residual(a_hat: &DMatrix<f64>, noise: &NoiseModel, mu: f64) -> Result<f64> {
    let ata = linalg::at_b(a_hat, a_hat);
    let g = whitened_gram(a_hat, noise)?;
    let g_inv = g
        .cholesky()
        .ok_or(Error::SingularGram { condition: f64::INFINITY })?
        .inverse();
    Ok((&ata - g_inv / mu).norm() / ata.norm())
}

/// Noise description used by [`mse_profile`].
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpectrum {
    /// `C = σ²I`; the estimation term is `d²N²σ²/P`.
    Iid { variance: f64 },
    /// Eigenvalues (any order) of the effective covariance for each `d = 1..=r`;
    /// entry `d-1` must hold at least `N·d` values.
    PerRank(Vec<Vec<f64>>),
}

fn check_descending(values: &[f64]) -> Result<()> {
    if values.iter().any(|&v| !(v >= 0.0)) || values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::UnsortedSpectrum);
    }
    Ok(())
}

/// `MSE(d)` for `d = 0..=r`: the estimation error of a rank-`d` representation
/// plus the discarded energy `Σ_{k>d} λ_k²`.
pub fn mse_profile(
    singvals: &[f64],
    noise: &NoiseSpectrum,
    n_cols: usize,
    power: f64,
) -> Result<Vec<f64>> {
    check_descending(singvals)?;
    if !(power > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be > 0, got {power}")));
    }
    let r = singvals.len();
    if let NoiseSpectrum::PerRank(spectra) = noise {
        if spectra.len() < r {
            return Err(Error::InvalidArgument(format!(
                "need a covariance spectrum for every d up to {r}, got {}",
                spectra.len()
            )));
        }
    }
    let mut tail: Vec<f64> = vec![0.0; r + 1];
    for d in (0..r).rev() {
        tail[d] = tail[d + 1] + singvals[d] * singvals[d];
    }
    let mut profile = Vec::with_capacity(r + 1);
    for (d, t) in tail.iter().enumerate() {
        let estimation = if d == 0 {
            0.0
        } else {
            match noise {
                NoiseSpectrum::Iid { variance } => {
                    let nd = (n_cols * d) as f64;
                    nd * nd * variance / power
                }
                NoiseSpectrum::PerRank(spectra) => {
                    let mut vals = spectra[d - 1].clone();
                    let need = n_cols * d;
                    if vals.len() < need {
                        return Err(Error::InfeasibleDesign {
                            observations: vals.len(),
                            unknowns: need,
                        });
                    }
                    if vals.iter().any(|&v| !(v >= 0.0)) {
                        return Err(Error::UnsortedSpectrum);
                    }
                    vals.sort_by(|a, b| a.total_cmp(b));
                    let root_sum: f64 = vals[..need].iter().map(|v| v.sqrt()).sum();
                    root_sum * root_sum / power
                }
            }
        };
        profile.push(estimation + t);
    }
    Ok(profile)
}

/// Index of the smallest profile entry; ties go to the smaller `d`.
pub fn argmin_profile(profile: &[f64]) -> usize {
    let mut best = 0;
    for (d, &v) in profile.iter().enumerate() {
        if v < profile[best] {
            best = d;
        }
    }
    best
}

/// `d_opt = argmin_d MSE(d)`.
pub fn optimal_rank(singvals: &[f64], noise: &NoiseSpectrum, n_cols: usize, power: f64) -> Result<usize> {
    Ok(argmin_profile(&mse_profile(singvals, noise, n_cols, power)?))
}

/// Top-`d` left singular vectors of `l`.
///
/// A `d` above the numerical rank is truncated to it with a warning.
pub fn optimal_subspace(l: &DMatrix<f64>, d: usize) -> Result<SubspaceBasis> {
    let svd = SortedSvd::new(l);
    let tol = l.nrows().max(l.ncols()) as f64 * f64::EPSILON;
    let rank = svd.numerical_rank(tol);
    if rank == 0 {
        return Err(Error::RankTooLarge {
            requested: d,
            available: 0,
        });
    }
    if d == 0 {
        return Err(Error::InvalidArgument("subspace dimension must be >= 1".into()));
    }
    let d_eff = if d > rank {
        warn!("requested subspace dimension {d} exceeds numerical rank {rank}; truncating");
        rank
    } else {
        d
    };
    SubspaceBasis::new(svd.left(d_eff))
}
