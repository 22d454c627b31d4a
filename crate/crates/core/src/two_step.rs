//! Two-step reconstruction: sample `m` columns to learn the column subspace,
//! then measure the remaining columns through a design matched to it.
//!
//! Stage one observes `Y₁ = L Z₁ + √(mM/P₁)·W₁` and takes the top left singular
//! vectors `Û` of `Y₁`. Stage two observes the other `N−m` columns through
//! `S₂ = √(P₂/(r(N−m)))·(I ⊗ Û)ᵀ` and estimates their coefficients by GLS.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use crate::affine_map::{AffineMap, NoiseModel};
use crate::error::{ensure_shape, Error, Result};
use crate::estimator::GlsEstimator;
use crate::linalg::{self, SortedSvd};
use crate::map_design::{restrict_to_subspace, SubspaceBasis};
use crate::rng::{normal, Rng};

/// Slack for the bound-violation checks.
pub const BOUND_SLACK: f64 = 1e-12;

/// Stage-one column sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSample {
    /// Sampled column indices, in sampling order.
    pub indices: Vec<usize>,
    /// `M×m` noisy columns.
    pub y1: DMatrix<f64>,
    /// `√(mM/P₁)`.
    pub scale: f64,
    /// Raw noise `W₁` (entries `N(0, σ²)`), kept for oracle diagnostics.
    pub w1: DMatrix<f64>,
}

/// Draws `m` distinct columns uniformly and observes them with noise.
pub fn sample_columns(l: &DMatrix<f64>, m: usize, p1: f64, sigma2: f64, rng: &mut Rng) -> Result<ColumnSample> {
    let (rows, cols) = l.shape();
    if m > cols {
        return Err(Error::InvalidArgument(format!("cannot sample {m} of {cols} columns")));
    }
    if !(p1 > 0.0) {
        return Err(Error::InvalidArgument(format!("stage-one power must be > 0, got {p1}")));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {sigma2}")));
    }
    let indices = index::sample(rng, cols, m).into_vec();
    let sigma = sigma2.sqrt();
    let w1 = DMatrix::from_fn(rows, m, |_, _| sigma * normal(rng));
    let scale = ((m * rows) as f64 / p1).sqrt();
    let mut y1 = select_columns(l, &indices);
    y1 += &w1 * scale;
    Ok(ColumnSample { indices, y1, scale, w1 })
}

fn select_columns(l: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(l.nrows(), indices.len());
    for (t, &j) in indices.iter().enumerate() {
        out.set_column(t, &l.column(j));
    }
    out
}

/// Columns of `0..n` not in `sampled`, ascending.
pub fn complement(n: usize, sampled: &[usize]) -> Vec<usize> {
    let mut taken = vec![false; n];
    for &j in sampled {
        taken[j] = true;
    }
    (0..n).filter(|&j| !taken[j]).collect()
}

/// Estimated column subspace of `Y₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    /// `M×r̂` semi-unitary basis (zero columns when `r̂ = 0`).
    pub u_hat: DMatrix<f64>,
    pub r_hat: usize,
    /// All singular values of `Y₁`, descending.
    pub singvals: Vec<f64>,
}

impl SubspaceEstimate {
    pub fn basis(&self) -> Result<SubspaceBasis> {
        SubspaceBasis::new(self.u_hat.clone())
    }
}

/// Top-`r` left singular vectors of `Y₁`. `r = 0` yields an empty basis.
pub fn estimate_subspace(y1: &DMatrix<f64>, r: usize) -> Result<SubspaceEstimate> {
    let available = y1.nrows().min(y1.ncols());
    if r > available {
        return Err(Error::RankTooLarge { requested: r, available });
    }
    let svd = SortedSvd::new(y1);
    Ok(SubspaceEstimate {
        u_hat: svd.left(r),
        r_hat: r,
        singvals: svd.singular_values.iter().copied().collect(),
    })
}

/// Singular-value threshold `τ = σ√M(1 + √(m/M))` for an `M×m` noise matrix
/// with entry standard deviation `σ`.
pub fn rank_threshold(sigma: f64, m: usize, m_rows: usize) -> f64 {
    let mf = m_rows as f64;
    sigma * mf.sqrt() * (1.0 + (m as f64 / mf).sqrt())
}

/// Number of singular values at or above the noise threshold.
///
/// The threshold is floored at the rounding level `max(M, m)·ε·λ̂₁` so that
/// noiseless inputs return their exact rank.
pub fn estimate_rank(singvals: &[f64], sigma: f64, m: usize, m_rows: usize) -> usize {
    let lead = singvals.first().copied().unwrap_or(0.0);
    if !(lead > 0.0) {
        return 0;
    }
    let floor = m.max(m_rows) as f64 * f64::EPSILON * lead;
    let tau = rank_threshold(sigma, m, m_rows).max(floor);
    singvals.iter().take_while(|&&s| s >= tau && s > floor).count()
}

/// `Q̂₁ = ÛᵀY₁`.
pub fn coefficient_q1(u_hat: &DMatrix<f64>, y1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_shape("coefficient_q1 rows", (y1.nrows(), 0), (u_hat.nrows(), 0))?;
    Ok(linalg::at_b(u_hat, y1))
}

/// Per-measurement gain `√(P₂/(r̂(N−m)))` of the stage-two design.
pub fn second_stage_gain(p2: f64, r_hat: usize, n_rest: usize) -> f64 {
    (p2 / (r_hat * n_rest) as f64).sqrt()
}

/// Stage-two map `S₂ = √(P₂/(r̂(N−m)))·(I_{N−m} ⊗ Û)ᵀ` over the `M×(N−m)` block.
///
/// Measurement `k + r̂·j` reads column `j` of the block along `Û[:, k]`. An
/// empty map is returned when `r̂ = 0` or no columns remain.
pub fn design_second_map(u_hat: &DMatrix<f64>, p2: f64, n_rest: usize) -> Result<AffineMap> {
    let (m_rows, r_hat) = u_hat.shape();
    if r_hat == 0 || n_rest == 0 {
        return Ok(AffineMap::empty(m_rows, n_rest));
    }
    if !(p2 > 0.0) {
        return Err(Error::InvalidArgument(format!("stage-two power must be > 0, got {p2}")));
    }
    let gain = second_stage_gain(p2, r_hat, n_rest);
    let mut s2 = DMatrix::zeros(r_hat * n_rest, m_rows * n_rest);
    for j in 0..n_rest {
        for k in 0..r_hat {
            for a in 0..m_rows {
                s2[(k + r_hat * j, a + m_rows * j)] = gain * u_hat[(a, k)];
            }
        }
    }
    AffineMap::new(m_rows, n_rest, s2, p2)
}

/// GLS estimate of `Q₂` from stage-two observations.
pub fn coefficient_q2(
    u_hat: &DMatrix<f64>,
    s2: &AffineMap,
    y2: &DVector<f64>,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let basis = SubspaceBasis::new(u_hat.clone())?;
    let a2 = restrict_to_subspace(s2.stacked(), &basis)?;
    let q = GlsEstimator::new(&a2, noise)?.estimate(y2)?;
    let n_rest = s2.input_shape().1;
    Ok(linalg::unvec(&q, u_hat.ncols(), n_rest))
}

/// Closed form of [`coefficient_q2`] for the stage-two design: `Q̂₂ = unvec(y₂)/gain`.
pub fn coefficient_q2_reshape(y2: &DVector<f64>, r_hat: usize, n_rest: usize, gain: f64) -> DMatrix<f64> {
    linalg::unvec(&(y2 / gain), r_hat, n_rest)
}

/// `L̂ = Û[Q̂₁, Q̂₂]` with column `t` written to `order[t]`.
pub fn assemble(
    u_hat: &DMatrix<f64>,
    q1_hat: &DMatrix<f64>,
    q2_hat: &DMatrix<f64>,
    order: &[usize],
) -> Result<DMatrix<f64>> {
    let n = order.len();
    if q1_hat.ncols() + q2_hat.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "assemble column count",
            expected: format!("{n}"),
            actual: format!("{}", q1_hat.ncols() + q2_hat.ncols()),
        });
    }
    ensure_shape("assemble q1 rows", (q1_hat.nrows(), 0), (u_hat.ncols(), 0))?;
    ensure_shape("assemble q2 rows", (q2_hat.nrows(), 0), (u_hat.ncols(), 0))?;
    let mut seen = vec![false; n];
    for &j in order {
        if j >= n || seen[j] {
            return Err(Error::InvalidPermutation(n));
        }
        seen[j] = true;
    }
    let block1 = u_hat * q1_hat;
    let block2 = u_hat * q2_hat;
    let m1 = q1_hat.ncols();
    let mut l_hat = DMatrix::zeros(u_hat.nrows(), n);
    for (t, &j) in order.iter().enumerate() {
        if t < m1 {
            l_hat.set_column(j, &block1.column(t));
        } else {
            l_hat.set_column(j, &block2.column(t - m1));
        }
    }
    Ok(l_hat)
}

/// `η = ‖(I − ÛÛᵀ)U‖₂`.
pub fn subspace_distance(u_hat: &DMatrix<f64>, u_true: &DMatrix<f64>) -> Result<f64> {
    ensure_shape("subspace_distance rows", (u_true.nrows(), 0), (u_hat.nrows(), 0))?;
    let residual = u_true - u_hat * linalg::at_b(u_hat, u_true);
    Ok(linalg::spectral_norm(&residual).min(1.0))
}

/// Subspace perturbation bound `√(mM/P₁)·‖W₁‖₂/δ`; `NaN` when `δ ≤ 0`.
pub fn wedin_bound(w1: &DMatrix<f64>, delta: f64, p1: f64) -> f64 {
    if !(delta > 0.0) {
        warn!("singular-value gap closed (delta = {delta:e}); subspace bound undefined");
        return f64::NAN;
    }
    let (m_rows, m) = w1.shape();
    ((m * m_rows) as f64 / p1).sqrt() * linalg::spectral_norm(w1) / delta
}

/// Total error bound
/// `√(mM/P₁)(‖W₁‖_F + ‖W₁‖₂‖L‖_F/δ) + √(r(N−m)/P₂)‖W₂‖_F`; `NaN` when `δ ≤ 0`.
pub fn error_bound(
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    l_norm: f64,
    delta: f64,
    p1: f64,
    p2: f64,
) -> f64 {
    if !(delta > 0.0) {
        warn!("singular-value gap closed (delta = {delta:e}); error bound undefined");
        return f64::NAN;
    }
    let (m_rows, m) = w1.shape();
    let (r, n_rest) = w2.shape();
    let stage1 = ((m * m_rows) as f64 / p1).sqrt() * (w1.norm() + linalg::spectral_norm(w1) * l_norm / delta);
    let stage2 = if r * n_rest == 0 {
        0.0
    } else {
        ((r * n_rest) as f64 / p2).sqrt() * w2.norm()
    };
    stage1 + stage2
}

/// Gap `δ = λ_r(L₁) − λ̂_{r+1}(Y₁)`, with `λ̂_{r+1} = 0` when `Y₁` has only `r` values.
pub fn singular_gap(l1: &DMatrix<f64>, y1_singvals: &[f64], r: usize) -> f64 {
    if r == 0 {
        return f64::NAN;
    }
    let s = linalg::singular_values_desc(l1);
    let lower = s.get(r - 1).copied().unwrap_or(0.0);
    let next = y1_singvals.get(r).copied().unwrap_or(0.0);
    lower - next
}

/// Full two-step map over the `M×N` input: stage-one selectors (gain
/// `√(P₁/(mM))`) for the sampled columns stacked above the stage-two rows
/// embedded at the remaining columns.
pub fn stacked_design(
    m_rows: usize,
    n_cols: usize,
    sampled: &[usize],
    s2: &AffineMap,
    p1: f64,
) -> Result<AffineMap> {
    let rest = complement(n_cols, sampled);
    ensure_shape("stage-two map input", s2.input_shape(), (m_rows, rest.len()))?;
    let p1_rows = sampled.len() * m_rows;
    let p2_rows = s2.observations();
    let gain = if p1_rows > 0 { (p1 / p1_rows as f64).sqrt() } else { 0.0 };
    let mut s = DMatrix::zeros(p1_rows + p2_rows, m_rows * n_cols);
    for (t, &j) in sampled.iter().enumerate() {
        for a in 0..m_rows {
            s[(t * m_rows + a, j * m_rows + a)] = gain;
        }
    }
    let stacked2 = s2.stacked();
    for (jl, &j) in rest.iter().enumerate() {
        let src = stacked2.columns(jl * m_rows, m_rows);
        s.view_mut((p1_rows, j * m_rows), (p2_rows, m_rows)).copy_from(&src);
    }
    AffineMap::from_stacked(m_rows, n_cols, s)
}

/// Whether the rank is supplied or estimated from `Y₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMode {
    Known(usize),
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepConfig {
    /// Sampled columns `m`.
    pub m: usize,
    pub p1: f64,
    pub p2: f64,
    /// Per-observation noise variance `σ²`.
    pub sigma2: f64,
    pub rank: RankMode,
    /// Compute realised error and bounds against the input matrix.
    pub oracle: bool,
}

impl TwoStepConfig {
    /// `P₁ = P₂ = MN` and `m = ⌈1.5r⌉`.
    pub fn with_defaults(m_rows: usize, n_cols: usize, r: usize, sigma2: f64) -> Self {
        let power = (m_rows * n_cols) as f64;
        Self {
            m: (3 * r).div_ceil(2),
            p1: power,
            p2: power,
            sigma2,
            rank: RankMode::Known(r),
            oracle: false,
        }
    }
}

/// Oracle diagnostics for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub true_rank: usize,
    /// `‖L̂ − L‖_F`.
    pub realized_error: f64,
    /// Subspace distance `η`; `NaN` when `r̂ = 0`.
    pub eta: f64,
    /// Gap `δ`; bounds are only evaluated when `r̂` equals the true rank.
    pub delta: f64,
    pub wedin_bound: f64,
    pub total_bound: f64,
    pub gap_closed: bool,
    pub wedin_violated: bool,
    pub total_violated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepResult {
    pub l_hat: DMatrix<f64>,
    pub q1_hat: DMatrix<f64>,
    pub q2_hat: DMatrix<f64>,
    /// `[z₁, z₂]`: column `t` of `[Q̂₁, Q̂₂]` belongs to column `order[t]` of `L̂`.
    pub order: Vec<usize>,
    pub sample: ColumnSample,
    pub subspace: SubspaceEstimate,
    /// `mM + r̂(N−m)`.
    pub sample_count: usize,
    /// Stage two was skipped because `r̂ = 0`.
    pub empty_subspace: bool,
    pub oracle: Option<OracleReport>,
}

/// Runs both stages on `l`, which plays the measurement device.
pub fn run(config: &TwoStepConfig, l: &DMatrix<f64>, rng: &mut Rng) -> Result<TwoStepResult> {
    let (m_rows, n_cols) = l.shape();
    let m = config.m;
    let sample = sample_columns(l, m, config.p1, config.sigma2, rng)?;
    let sigma = config.sigma2.sqrt();
    let mut subspace = estimate_subspace(&sample.y1, 0)?;
    let r_hat = match config.rank {
        RankMode::Known(r) => r,
        RankMode::Estimated => estimate_rank(&subspace.singvals, sigma, m, m_rows),
    };
    subspace = estimate_subspace(&sample.y1, r_hat)?;
    let u_hat = &subspace.u_hat;

    let rest = complement(n_cols, &sample.indices);
    let n_rest = rest.len();
    let q1_hat = coefficient_q1(u_hat, &sample.y1)?;

    let mut w2 = DMatrix::zeros(r_hat, n_rest);
    let q2_hat = if r_hat == 0 || n_rest == 0 {
        DMatrix::zeros(r_hat, n_rest)
    } else {
        let s2 = design_second_map(u_hat, config.p2, n_rest)?;
        let noise = NoiseModel::iid(s2.observations(), config.sigma2)?;
        let l2 = select_columns(l, &rest);
        let n2 = noise.sample(rng);
        let y2 = s2.apply(&l2)? + &n2;
        w2 = linalg::unvec(&n2, r_hat, n_rest);
        coefficient_q2(u_hat, &s2, &y2, &noise)?
    };

    let mut order = sample.indices.clone();
    order.extend_from_slice(&rest);
    let l_hat = if r_hat == 0 {
        DMatrix::zeros(m_rows, n_cols)
    } else {
        assemble(u_hat, &q1_hat, &q2_hat, &order)?
    };

    let oracle = if config.oracle {
        Some(oracle_report(config, l, &l_hat, &sample, &subspace, &w2))
    } else {
        None
    };

    Ok(TwoStepResult {
        l_hat,
        q1_hat,
        q2_hat,
        order,
        sample_count: m * m_rows + r_hat * n_rest,
        empty_subspace: r_hat == 0,
        sample,
        subspace,
        oracle,
    })
}

fn oracle_report(
    config: &TwoStepConfig,
    l: &DMatrix<f64>,
    l_hat: &DMatrix<f64>,
    sample: &ColumnSample,
    subspace: &SubspaceEstimate,
    w2: &DMatrix<f64>,
) -> OracleReport {
    let svd = SortedSvd::new(l);
    let true_rank = match config.rank {
        RankMode::Known(r) => r,
        RankMode::Estimated => svd.numerical_rank(1e-9),
    };
    let realized_error = (l_hat - l).norm();
    let eta = if subspace.r_hat == 0 {
        f64::NAN
    } else {
        subspace_distance(&subspace.u_hat, &svd.left(true_rank)).unwrap_or(f64::NAN)
    };
    let mut report = OracleReport {
        true_rank,
        realized_error,
        eta,
        delta: f64::NAN,
        wedin_bound: f64::NAN,
        total_bound: f64::NAN,
        gap_closed: false,
        wedin_violated: false,
        total_violated: false,
    };
    if subspace.r_hat != true_rank || true_rank == 0 {
        return report;
    }
    let l1 = select_columns(l, &sample.indices);
    let delta = singular_gap(&l1, &subspace.singvals, true_rank);
    report.delta = delta;
    if !(delta > 0.0) {
        report.gap_closed = true;
        return report;
    }
    report.wedin_bound = wedin_bound(&sample.w1, delta, config.p1);
    report.total_bound = error_bound(&sample.w1, w2, l.norm(), delta, config.p1, config.p2);
    report.wedin_violated = eta > report.wedin_bound + BOUND_SLACK;
    report.total_violated = realized_error > report.total_bound * (1.0 + BOUND_SLACK) + BOUND_SLACK;
    report
}
