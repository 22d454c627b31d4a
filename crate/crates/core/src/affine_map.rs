//! Affine measurement operators `𝒜(L)_i = tr(X_iᵀ L)` stored as a dense
//! stacked matrix `S` whose row `i` is `vec(X_i)ᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_shape, shape, Error, Result};
use crate::linalg::{self, frob_sq};
use crate::rng::{normal, Rng};

/// Slack allowed on the power budget.
pub const POWER_TOLERANCE: f64 = 1e-9;

/// A stack of `p` measurement matrices over `M×N` inputs with a power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    m_rows: usize,
    n_cols: usize,
    stacked: DMatrix<f64>,
    power: f64,
}

impl AffineMap {
    /// Builds a map from its stacked form, checking shape and power feasibility.
    pub fn new(m_rows: usize, n_cols: usize, stacked: DMatrix<f64>, power: f64) -> Result<Self> {
        if stacked.ncols() != m_rows * n_cols {
            return Err(Error::DimensionMismatch {
                context: "stacked operator columns",
                expected: format!("{}", m_rows * n_cols),
                actual: format!("{}", stacked.ncols()),
            });
        }
        if !(power >= 0.0) {
            return Err(Error::InvalidArgument(format!("power must be >= 0, got {power}")));
        }
        let fsq = frob_sq(&stacked);
        if fsq > power + POWER_TOLERANCE * power.max(1.0) {
            return Err(Error::PowerExceeded {
                frobenius_sq: fsq,
                power,
            });
        }
        Ok(Self {
            m_rows,
            n_cols,
            stacked,
            power,
        })
    }

    /// Map whose power budget is exactly its realised `‖S‖_F²`.
    pub fn from_stacked(m_rows: usize, n_cols: usize, stacked: DMatrix<f64>) -> Result<Self> {
        let power = frob_sq(&stacked);
        Self::new(m_rows, n_cols, stacked, power)
    }

    /// Map from explicit measurement matrices `X_1..X_p`.
    pub fn from_matrices(matrices: &[DMatrix<f64>]) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidArgument("need at least one measurement matrix".into()))?;
        let (m, n) = first.shape();
        let mut stacked = DMatrix::zeros(matrices.len(), m * n);
        for (i, x) in matrices.iter().enumerate() {
            ensure_shape("measurement matrix", x.shape(), (m, n))?;
            for (k, &v) in x.as_slice().iter().enumerate() {
                stacked[(i, k)] = v;
            }
        }
        Self::from_stacked(m, n, stacked)
    }

    /// Map with no observations.
    pub fn empty(m_rows: usize, n_cols: usize) -> Self {
        Self {
            m_rows,
            n_cols,
            stacked: DMatrix::zeros(0, m_rows * n_cols),
            power: 0.0,
        }
    }

    /// Number of observations `p`.
    pub fn observations(&self) -> usize {
        self.stacked.nrows()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.m_rows, self.n_cols)
    }

    pub fn stacked(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    pub fn into_stacked(self) -> DMatrix<f64> {
        self.stacked
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// Realised `‖S‖_F²`.
    pub fn frobenius_sq(&self) -> f64 {
        frob_sq(&self.stacked)
    }

    /// The `i`-th measurement matrix `X_i`.
    pub fn measurement_matrix(&self, i: usize) -> DMatrix<f64> {
        let row = self.stacked.row(i).transpose();
        linalg::unvec(&row, self.m_rows, self.n_cols)
    }

    fn check_input(&self, l: &DMatrix<f64>) -> Result<()> {
        ensure_shape("affine map input", l.shape(), (self.m_rows, self.n_cols))
    }

    /// `𝒜(L) = S·vec(L)`.
    pub fn apply(&self, l: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_input(l)?;
        Ok(&self.stacked * linalg::vec(l))
    }

    /// `𝒜(L)` evaluated entry by entry as `tr(X_iᵀ L)`.
    pub fn apply_trace(&self, l: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_input(l)?;
        let p = self.observations();
        Ok(DVector::from_fn(p, |i, _| {
            let x = self.measurement_matrix(i);
            (x.transpose() * l).trace()
        }))
    }

    /// Adjoint `𝒜*(y) = unvec(Sᵀ y)`.
    pub fn adjoint(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        if y.len() != self.observations() {
            return Err(Error::DimensionMismatch {
                context: "adjoint input",
                expected: format!("{}", self.observations()),
                actual: format!("{}", y.len()),
            });
        }
        let v = self.stacked.tr_mul(y);
        Ok(linalg::unvec(&v, self.m_rows, self.n_cols))
    }

    /// Noisy observation `y = 𝒜(L) + n`, `n ~ N(0, C)`.
    pub fn observe(&self, l: &DMatrix<f64>, noise: &NoiseModel, rng: &mut Rng) -> Result<DVector<f64>> {
        if noise.dim() != self.observations() {
            return Err(Error::DimensionMismatch {
                context: "noise dimension",
                expected: format!("{}", self.observations()),
                actual: format!("{}", noise.dim()),
            });
        }
        let clean = self.apply(l)?;
        Ok(clean + noise.sample(rng))
    }

    /// Map with i.i.d. standard normal entries; its power is the realised `‖S‖_F²`.
    pub fn gaussian_random(p: usize, m_rows: usize, n_cols: usize, rng: &mut Rng) -> Self {
        Self::gaussian_with_power(p, m_rows, n_cols, None, rng)
    }

    /// Gaussian map with entry variance chosen so that `E‖S‖_F² = power`, then
    /// rescaled so that `‖S‖_F² = power` exactly. `None` keeps unit variance.
    pub fn gaussian_with_power(
        p: usize,
        m_rows: usize,
        n_cols: usize,
        power: Option<f64>,
        rng: &mut Rng,
    ) -> Self {
        let mut stacked = DMatrix::from_fn(p, m_rows * n_cols, |_, _| normal(rng));
        if let Some(target) = power {
            let f = frob_sq(&stacked);
            if f > 0.0 {
                stacked *= (target / f).sqrt();
            }
        }
        let power = frob_sq(&stacked);
        Self {
            m_rows,
            n_cols,
            stacked,
            power,
        }
    }

    /// Averaged mutual coherence `μ_av` with absolute inner products.
    pub fn averaged_mutual_coherence(&self) -> Result<Coherence> {
        self.averaged_mutual_coherence_with(true)
    }

    /// Averaged mutual coherence
    /// `Σ_{i≠j} |⟨s̄_i, s̄_j⟩| / ((MN)² − p)` over unit-normalised columns `s̄` of `S`.
    ///
    /// `absolute = false` drops the absolute value. Exactly-zero columns are
    /// excluded from all pairs and counted in [`Coherence::zero_columns`].
    pub fn averaged_mutual_coherence_with(&self, absolute: bool) -> Result<Coherence> {
        let cols = self.stacked.ncols();
        let mut normalized = self.stacked.clone();
        let mut zero_columns = 0usize;
        for j in 0..cols {
            let norm = normalized.column(j).norm();
            if norm == 0.0 {
                zero_columns += 1;
            } else {
                normalized.column_mut(j).unscale_mut(norm);
            }
        }
        if zero_columns == cols {
            return Err(Error::ZeroOperator);
        }
        let gram = linalg::at_b(&normalized, &normalized);
        let mut total = 0.0;
        for j in 0..cols {
            for i in 0..cols {
                if i != j {
                    let g = gram[(i, j)];
                    total += if absolute { g.abs() } else { g };
                }
            }
        }
        let mn = (self.m_rows * self.n_cols) as f64;
        let denominator = mn * mn - self.observations() as f64;
        let value = if total == 0.0 {
            0.0
        } else if denominator > 0.0 {
            total / denominator
        } else {
            return Err(Error::InvalidArgument(format!(
                "coherence normalisation (MN)^2 - p is not positive for p = {}",
                self.observations()
            )));
        };
        Ok(Coherence {
            value,
            zero_columns,
        })
    }
}

/// Result of [`AffineMap::averaged_mutual_coherence`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coherence {
    pub value: f64,
    pub zero_columns: usize,
}

/// Additive Gaussian noise `n ~ N(0, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// `C = σ² I`.
    Iid { variance: f64 },
    /// `C = diag(v)`.
    Diagonal { variances: DVector<f64> },
    /// Full SPD covariance with its lower Cholesky factor.
    Full {
        covariance: DMatrix<f64>,
        factor: DMatrix<f64>,
    },
}

impl NoiseModel {
    pub fn iid(dim: usize, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {variance}")));
        }
        Ok(Self {
            kind: NoiseKind::Iid { variance },
            dim,
        })
    }

    pub fn diagonal(variances: DVector<f64>) -> Result<Self> {
        if variances.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("diagonal variances must be >= 0".into()));
        }
        let dim = variances.len();
        Ok(Self {
            kind: NoiseKind::Diagonal { variances },
            dim,
        })
    }

    /// Full covariance; must be symmetric to `1e-10` and positive definite.
    pub fn full(covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() {
            return Err(Error::NotPositiveDefinite(format!(
                "covariance is {}",
                shape(covariance.nrows(), covariance.ncols())
            )));
        }
        let asym = linalg::asymmetry(&covariance);
        if asym > 1e-10 {
            return Err(Error::NotPositiveDefinite(format!("asymmetry {asym:e}")));
        }
        let (vals, _) = linalg::symmetric_eigen_desc(&covariance);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {min:e}")));
        }
        let factor = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorisation failed".into()))?
            .l();
        let dim = covariance.nrows();
        Ok(Self {
            kind: NoiseKind::Full { covariance, factor },
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    /// `Some(σ²)` for i.i.d. noise.
    pub fn iid_variance(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::Iid { variance } => Some(variance),
            _ => None,
        }
    }

    /// Same noise model on a different dimension (i.i.d. only).
    pub fn resized(&self, dim: usize) -> Result<Self> {
        match self.kind {
            NoiseKind::Iid { variance } => Self::iid(dim, variance),
            _ => Err(Error::InvalidArgument("only i.i.d. noise can be resized".into())),
        }
    }

    /// Dense covariance matrix `C`.
    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.kind {
            NoiseKind::Iid { variance } => DMatrix::identity(self.dim, self.dim) * *variance,
            NoiseKind::Diagonal { variances } => DMatrix::from_diagonal(variances),
            NoiseKind::Full { covariance, .. } => covariance.clone(),
        }
    }

    /// Eigenvalues (descending) and eigenvectors of `C`. Diagonal models keep
    /// the canonical basis, so the i.i.d. case yields `I` in index order.
    pub fn eigen_desc(&self) -> (DVector<f64>, DMatrix<f64>) {
        match &self.kind {
            NoiseKind::Iid { variance } => (
                DVector::from_element(self.dim, *variance),
                DMatrix::identity(self.dim, self.dim),
            ),
            NoiseKind::Diagonal { variances } => {
                let mut order: Vec<usize> = (0..self.dim).collect();
                order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]));
                let mut vals = DVector::zeros(self.dim);
                let mut vecs = DMatrix::zeros(self.dim, self.dim);
                for (dst, &src) in order.iter().enumerate() {
                    vals[dst] = variances[src];
                    vecs[(src, dst)] = 1.0;
                }
                (vals, vecs)
            }
            NoiseKind::Full { covariance, .. } => linalg::symmetric_eigen_desc(covariance),
        }
    }

    /// One draw of `n ~ N(0, C)`.
    pub fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim, |_, _| normal(rng));
        match &self.kind {
            NoiseKind::Iid { variance } => z * variance.sqrt(),
            NoiseKind::Diagonal { variances } => z.zip_map(variances, |zi, v| zi * v.sqrt()),
            NoiseKind::Full { factor, .. } => factor * z,
        }
    }

    /// Applies `C^{-1/2}` (the inverse Cholesky factor) to the columns of `a`.
    ///
    /// Noise-free i.i.d. models whiten with the identity: the GLS estimate is
    /// invariant to scaling of `C`, so the `σ² → 0` limit is ordinary least squares.
    pub fn whiten(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.nrows() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "whitening",
                expected: format!("{} rows", self.dim),
                actual: format!("{} rows", a.nrows()),
            });
        }
        match &self.kind {
            NoiseKind::Iid { variance } => {
                if *variance == 0.0 {
                    Ok(a.clone())
                } else {
                    Ok(a / variance.sqrt())
                }
            }
            NoiseKind::Diagonal { variances } => {
                if variances.iter().any(|&v| v == 0.0) {
                    return Err(Error::NotPositiveDefinite("diagonal covariance has zero entries".into()));
                }
                let mut out = a.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= variances[i].sqrt();
                }
                Ok(out)
            }
            NoiseKind::Full { factor, .. } => factor
                .solve_lower_triangular(a)
                .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into())),
        }
    }

    pub fn whiten_vector(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        let w = self.whiten(&m)?;
        Ok(DVector::from_column_slice(w.as_slice()))
    }
}
