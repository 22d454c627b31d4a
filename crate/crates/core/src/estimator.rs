//! Generalised least-squares coefficient estimation and error metrics.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::affine_map::NoiseModel;
use crate::error::{ensure_shape, Error, Result};
use crate::linalg;
use crate::map_design::SubspaceBasis;

/// Gram condition numbers above this are rejected.
pub const CONDITION_ERROR: f64 = 1e12;
/// Gram condition numbers above this are flagged.
pub const CONDITION_WARN: f64 = 1e8;

/// One GLS problem `y = A x + n`, `n ~ N(0, C)`.
#[derive(Debug, Clone)]
pub struct GlsProblem {
    pub a: DMatrix<f64>,
    pub noise: NoiseModel,
    pub y: DVector<f64>,
}

/// GLS solver with `C` and `AᵀC⁻¹A` factorised once, for repeated right-hand sides.
#[derive(Debug, Clone)]
pub struct GlsEstimator {
    noise: NoiseModel,
    a_white_t: DMatrix<f64>,
    gram: Cholesky<f64, Dyn>,
    condition: f64,
}

impl GlsEstimator {
    pub fn new(a: &DMatrix<f64>, noise: &NoiseModel) -> Result<Self> {
        if a.nrows() != noise.dim() {
            return Err(Error::DimensionMismatch {
                context: "GLS design rows vs noise dimension",
                expected: format!("{}", noise.dim()),
                actual: format!("{}", a.nrows()),
            });
        }
        if a.ncols() > a.nrows() {
            return Err(Error::SingularGram {
                condition: f64::INFINITY,
            });
        }
        let a_white_t = noise.whiten(a)?.transpose();
        let g = &a_white_t * a_white_t.transpose();
        let lambda_max = linalg::power_iteration_max_eig(&g, 200, 1e-10);
        let gram = g.cholesky().ok_or(Error::SingularGram {
            condition: f64::INFINITY,
        })?;
        let lambda_min = smallest_eigenvalue(&gram, a_white_t.nrows());
        let condition = if lambda_min > 0.0 {
            lambda_max / lambda_min
        } else {
            f64::INFINITY
        };
        if !(condition <= CONDITION_ERROR) {
            return Err(Error::SingularGram { condition });
        }
        if condition > CONDITION_WARN {
            warn!("GLS Gram matrix is ill-conditioned (condition estimate {condition:e})");
        }
        Ok(Self {
            noise: noise.clone(),
            a_white_t,
            gram,
            condition,
        })
    }

    /// Estimated condition number of `AᵀC⁻¹A`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Number of unknowns `q`.
    pub fn unknowns(&self) -> usize {
        self.a_white_t.nrows()
    }

    /// `(AᵀC⁻¹A)⁻¹AᵀC⁻¹y`.
    pub fn estimate(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let yw = self.noise.whiten_vector(y)?;
        let rhs = &self.a_white_t * yw;
        Ok(self.gram.solve(&rhs))
    }

    /// `tr((AᵀC⁻¹A)⁻¹)`, the mean squared error of [`GlsEstimator::estimate`].
    pub fn mse(&self) -> f64 {
        self.gram.inverse().trace()
    }
}

/// Inverse power iteration on a Cholesky-factored SPD matrix.
fn smallest_eigenvalue(chol: &Cholesky<f64, Dyn>, n: usize) -> f64 {
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.754_877_666_2).fract());
    v /= v.norm();
    let mut mu = 0.0;
    for _ in 0..100 {
        let w = chol.solve(&v);
        let next = v.dot(&w);
        let norm = w.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return 0.0;
        }
        v = w / norm;
        if (next - mu).abs() <= 1e-8 * next.abs() {
            mu = next;
            break;
        }
        mu = next;
    }
    if mu > 0.0 {
        1.0 / mu
    } else {
        0.0
    }
}

/// One-shot GLS estimate.
pub fn gls_estimate(problem: &GlsProblem) -> Result<DVector<f64>> {
    GlsEstimator::new(&problem.a, &problem.noise)?.estimate(&problem.y)
}

/// `F Fᵀ L̃`.
pub fn project_onto_subspace(l_tilde: &DMatrix<f64>, f: &SubspaceBasis) -> Result<DMatrix<f64>> {
    if l_tilde.nrows() != f.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "project_onto_subspace",
            expected: format!("{} rows", f.ambient_dim()),
            actual: format!("{} rows", l_tilde.nrows()),
        });
    }
    let coeffs = linalg::at_b(f.basis(), l_tilde);
    Ok(f.basis() * coeffs)
}

/// `L̂ = F Q̂`.
pub fn reconstruct(f: &SubspaceBasis, q_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_shape("coefficient matrix", (q_hat.nrows(), 0), (f.dim(), 0))?;
    Ok(f.basis() * q_hat)
}

/// `‖L̂ − L‖_F² / ‖L‖_F²`.
pub fn nmse(l_hat: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    ensure_shape("nmse", l_hat.shape(), l.shape())?;
    let reference = l.norm_squared();
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((l_hat - l).norm_squared() / reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, seeded, Rng};

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| normal(rng))
    }

    fn random_spd(n: usize, rng: &mut Rng) -> DMatrix<f64> {
        let g = random_matrix(n, n, rng);
        let c = &g * g.transpose() + DMatrix::identity(n, n) * 0.5;
        (&c + c.transpose()) * 0.5
    }

    #[test]
    fn identity_design_returns_observation() {
        let y = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let problem = GlsProblem {
            a: DMatrix::identity(3, 3),
            noise: NoiseModel::iid(3, 1.0).unwrap(),
            y: y.clone(),
        };
        assert!((gls_estimate(&problem).unwrap() - y).amax() < 1e-14);
    }

    #[test]
    fn noiseless_recovery() {
        let mut rng = seeded(1);
        let a = random_matrix(8, 3, &mut rng);
        let x = DVector::from_fn(3, |_, _| normal(&mut rng));
        let noise = NoiseModel::full(random_spd(8, &mut rng)).unwrap();
        let est = GlsEstimator::new(&a, &noise).unwrap();
        assert!((est.estimate(&(&a * &x)).unwrap() - x).amax() < 1e-10);
    }

    #[test]
    fn matches_explicit_inverse_formula() {
        let mut rng = seeded(2);
        let a = random_matrix(6, 2, &mut rng);
        let c = random_spd(6, &mut rng);
        let y = DVector::from_fn(6, |_, _| normal(&mut rng));
        let ci = c.clone().try_inverse().unwrap();
        let oracle = (a.transpose() * &ci * &a).try_inverse().unwrap() * a.transpose() * &ci * &y;
        let problem = GlsProblem {
            a,
            noise: NoiseModel::full(c).unwrap(),
            y,
        };
        assert!((gls_estimate(&problem).unwrap() - oracle).amax() < 1e-10);
    }

    #[test]
    fn scaling_covariance_leaves_estimate_unchanged() {
        let mut rng = seeded(3);
        let a = random_matrix(7, 3, &mut rng);
        let y = DVector::from_fn(7, |_, _| normal(&mut rng));
        let c = random_spd(7, &mut rng);
        let e1 = GlsEstimator::new(&a, &NoiseModel::full(c.clone()).unwrap()).unwrap();
        let e2 = GlsEstimator::new(&a, &NoiseModel::full(c * 9.0).unwrap()).unwrap();
        assert!((e1.estimate(&y).unwrap() - e2.estimate(&y).unwrap()).amax() < 1e-10);
        // scaling A by c scales the estimate by 1/c
        let e3 = GlsEstimator::new(&(&a * 2.0), &NoiseModel::iid(7, 1.0).unwrap()).unwrap();
        let e4 = GlsEstimator::new(&a, &NoiseModel::iid(7, 1.0).unwrap()).unwrap();
        assert!((e3.estimate(&y).unwrap() * 2.0 - e4.estimate(&y).unwrap()).amax() < 1e-10);
    }

    #[test]
    fn singular_and_ill_conditioned_designs() {
        let noise = NoiseModel::iid(3, 1.0).unwrap();
        let mut a = DMatrix::zeros(3, 2);
        a[(0, 0)] = 1.0;
        a[(1, 0)] = 1.0;
        assert!(matches!(GlsEstimator::new(&a, &noise), Err(Error::SingularGram { .. })));
        a[(2, 1)] = 1e-7;
        assert!(matches!(GlsEstimator::new(&a, &noise), Err(Error::SingularGram { .. })));
        a[(2, 1)] = 1e-5;
        let est = GlsEstimator::new(&a, &noise).unwrap();
        assert!(est.condition() > CONDITION_WARN);
        assert!(GlsEstimator::new(&DMatrix::zeros(2, 3), &NoiseModel::iid(2, 1.0).unwrap()).is_err());
    }

    #[test]
    fn condition_estimate_is_accurate() {
        let mut rng = seeded(4);
        let a = random_matrix(20, 5, &mut rng);
        let noise = NoiseModel::iid(20, 1.0).unwrap();
        let est = GlsEstimator::new(&a, &noise).unwrap();
        let s = linalg::singular_values_desc(&a);
        let exact = (s[0] / s[4]).powi(2);
        assert!((est.condition() - exact).abs() < 1e-4 * exact);
    }

    #[test]
    fn projection_fixed_point_and_idempotence() {
        let mut rng = seeded(5);
        let f = SubspaceBasis::new(random_matrix(6, 2, &mut rng).qr().q()).unwrap();
        let inside = f.basis() * random_matrix(2, 4, &mut rng);
        let p = project_onto_subspace(&inside, &f).unwrap();
        assert!((&p - &inside).amax() < 1e-12);
        let any = random_matrix(6, 4, &mut rng);
        let once = project_onto_subspace(&any, &f).unwrap();
        let twice = project_onto_subspace(&once, &f).unwrap();
        assert!((once - twice).amax() < 1e-12);
    }

    #[test]
    fn reconstruct_is_isometric() {
        let mut rng = seeded(6);
        let f = SubspaceBasis::new(random_matrix(7, 3, &mut rng).qr().q()).unwrap();
        let q = random_matrix(3, 5, &mut rng);
        let l = reconstruct(&f, &q).unwrap();
        assert!((l.norm() - q.norm()).abs() < 1e-10);
        assert_eq!(reconstruct(&f, &DMatrix::zeros(3, 5)).unwrap(), DMatrix::zeros(7, 5));
        let truth = f.basis() * random_matrix(3, 5, &mut rng);
        let back = reconstruct(&f, &(f.basis().transpose() * &truth)).unwrap();
        assert!((back - truth).amax() < 1e-12);
        assert!(reconstruct(&f, &DMatrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn nmse_values() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(nmse(&l, &l).unwrap(), 0.0);
        assert_eq!(nmse(&DMatrix::zeros(2, 2), &l).unwrap(), 1.0);
        assert_eq!(nmse(&(&l * 2.0), &l).unwrap(), 1.0);
        assert_eq!(nmse(&l, &DMatrix::zeros(2, 2)), Err(Error::ZeroReference));
    }
}
