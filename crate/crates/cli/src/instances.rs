//! Random problem instances.

use lrsense_core::rng::{normal, Rng};
use lrsense_core::DMatrix;

/// `L = G₁G₂ᵀ` with `G₁: M×r`, `G₂: N×r` standard normal.
pub fn generate_low_rank(m_rows: usize, n_cols: usize, rank: usize, rng: &mut Rng) -> DMatrix<f64> {
    assert!(rank <= m_rows.min(n_cols), "rank {rank} exceeds min({m_rows}, {n_cols})");
    let g1 = DMatrix::from_fn(m_rows, rank, |_, _| normal(rng));
    let g2 = DMatrix::from_fn(n_cols, rank, |_, _| normal(rng));
    g1 * g2.transpose()
}
