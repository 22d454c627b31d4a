//! Small dense linear-algebra helpers shared across modules.
//!
//! Matrices are `nalgebra::DMatrix<f64>` in column-major storage, so `vec(L)`
//! (column stacking) is a zero-cost view of the storage.

use nalgebra::{DMatrix, DVector};

/// Column-stacking `vec(L)`.
pub fn vec(l: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(l.as_slice())
}

/// Inverse of [`vec`]: reshape a length `rows * cols` vector column-major.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// `Aᵀ B` through the blocked GEMM path.
///
/// `DMatrix::tr_mul` falls back to per-entry dot products, which is several
/// times slower than materialising the transpose for the sizes used here.
pub fn at_b(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

/// Thin SVD with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    /// Sorted, sign-normalised SVD of `m`.
    ///
    /// Computed with faer: nalgebra 0.33's Golub-Kahan iteration returns an
    /// inaccurate factorisation for a small fraction of inputs without
    /// reporting failure.
    pub fn new(m: &DMatrix<f64>) -> Self {
        let k = m.nrows().min(m.ncols());
        if k == 0 {
            return Self {
                u: DMatrix::zeros(m.nrows(), 0),
                singular_values: DVector::zeros(0),
                v_t: DMatrix::zeros(0, m.ncols()),
            };
        }
        let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
        let svd = f.thin_svd().expect("SVD of a finite matrix");
        let (u, s, v) = (svd.U(), svd.S(), svd.V());
        let raw = (
            DMatrix::from_fn(m.nrows(), k, |i, j| u[(i, j)]),
            DVector::from_fn(k, |i, _| s[i]),
            DMatrix::from_fn(k, m.ncols(), |i, j| v[(j, i)]),
        );
        Self::sorted(raw)
    }

    fn sorted((u, s, v_t): RawSvd) -> Self {
        let k = s.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let mut u_sorted = DMatrix::zeros(u.nrows(), k);
        let mut vt_sorted = DMatrix::zeros(k, v_t.ncols());
        let mut s_sorted = DVector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            u_sorted.set_column(dst, &u.column(src));
            vt_sorted.set_row(dst, &v_t.row(src));
            s_sorted[dst] = s[src];
        }
        // Sign convention: largest-magnitude entry of each left vector positive.
        for j in 0..k {
            if leading_sign(u_sorted.column(j).as_slice()) < 0.0 {
                u_sorted.column_mut(j).neg_mut();
                vt_sorted.row_mut(j).neg_mut();
            }
        }
        Self {
            u: u_sorted,
            singular_values: s_sorted,
            v_t: vt_sorted,
        }
    }

    /// First `k` left singular vectors.
    pub fn left(&self, k: usize) -> DMatrix<f64> {
        self.u.columns(0, k).into_owned()
    }

    /// Number of singular values above `rel_tol * σ₁`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let s1 = self.singular_values.get(0).copied().unwrap_or(0.0);
        if s1 <= 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * s1)
            .count()
    }
}

type RawSvd = (DMatrix<f64>, DVector<f64>, DMatrix<f64>);

/// Singular values, sorted descending.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    SortedSvd::new(m).singular_values.iter().copied().collect()
}

/// Largest singular value (spectral norm).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values_desc(m)[0]
}

fn leading_sign(v: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
///
/// Ties keep their original index order, so `I` maps to itself.
pub fn symmetric_eigen_desc(c: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = c.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(c.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        if leading_sign(col.as_slice()) < 0.0 {
            col.neg_mut();
        }
        vecs.set_column(dst, &col);
    }
    (vals, vecs)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
pub fn power_iteration_max_eig(g: &DMatrix<f64>, max_iters: usize, rel_tol: f64) -> f64 {
    let n = g.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let w = g * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= rel_tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

/// Frobenius norm squared.
pub fn frob_sq(m: &DMatrix<f64>) -> f64 {
    m.norm_squared()
}

/// `max |a_ij - a_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `‖FᵀF − I‖_max`.
pub fn orthonormality_defect(f: &DMatrix<f64>) -> f64 {
    let g = at_b(f, f);
    let mut worst = 0.0f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}
