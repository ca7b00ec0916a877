//! Dense least-squares solver for the small overdetermined segment systems.
//!
//! Solved by orthogonal factorization (SVD) rather than forming the normal
//! equations; the minimizer is identical but the conditioning is not
//! squared. Rank is estimated from the singular values with a tolerance
//! scaled by the spectral norm.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative singular-value cutoff for the rank estimate.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// An `M x n` least-squares problem `min ||A v - b||`.
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Minimizer plus factorization diagnostics.
#[derive(Debug, Clone)]
pub struct LsSolution {
    pub v: DVector<f64>,
    pub residual_norm: f64,
    pub rank: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum LinsysError {
    #[error("matrix is {rows}x{cols}; need at least one row and one column")]
    Empty { rows: usize, cols: usize },
    #[error("rhs has {rhs} rows but matrix has {rows}")]
    DimensionMismatch { rows: usize, rhs: usize },
    #[error("rank-deficient system: rank {rank} of {cols} columns")]
    RankDeficient { rank: usize, cols: usize },
}

/// Solves `min ||A v - b||_2`; errors out if the numerical rank is below
/// the column count.
pub fn solve_ls(problem: &LeastSquaresProblem) -> Result<LsSolution, LinsysError> {
    let (rows, cols) = problem.a.shape();
    if rows == 0 || cols == 0 {
        return Err(LinsysError::Empty { rows, cols });
    }
    if problem.b.len() != rows {
        return Err(LinsysError::DimensionMismatch {
            rows,
            rhs: problem.b.len(),
        });
    }
    let svd = problem.a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = RANK_TOLERANCE * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < cols {
        return Err(LinsysError::RankDeficient { rank, cols });
    }
    let v = svd.solve(&problem.b, tol).expect("svd computed with u/v");
    let residual_norm = (&problem.a * &v - &problem.b).norm();
    Ok(LsSolution {
        v,
        residual_norm,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, m: usize, n: usize) -> LeastSquaresProblem {
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        LeastSquaresProblem { a, b }
    }

    /// Literal normal-equation route `(A^T A)^{-1} A^T b`; test oracle only.
    pub(crate) fn normal_equation_oracle(p: &LeastSquaresProblem) -> Option<DVector<f64>> {
        let ata = p.a.transpose() * &p.a;
        let atb = p.a.transpose() * &p.b;
        ata.try_inverse().map(|inv| inv * atb)
    }

    #[test]
    fn identity_returns_rhs() {
        let p = LeastSquaresProblem {
            a: DMatrix::identity(4, 4),
            b: DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]),
        };
        let sol = solve_ls(&p).unwrap();
        assert!((sol.v - p.b).norm() < 1e-14);
        assert_eq!(sol.rank, 4);
    }

    #[test]
    fn consistent_square_system_recovers_exact_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let v0 = DVector::from_fn(5, |_, _| rng.gen_range(-2.0..2.0));
        let b = &a * &v0;
        let sol = solve_ls(&LeastSquaresProblem { a, b }).unwrap();
        assert!((&sol.v - &v0).norm() / v0.norm() < 1e-10);
        assert!(sol.residual_norm < 1e-10);
    }

    #[test]
    fn matches_normal_equation_oracle_on_random_tall_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 50, 6);
            let sol = solve_ls(&p).unwrap();
            let oracle = normal_equation_oracle(&p).unwrap();
            let rel = (&sol.v - &oracle).norm() / oracle.norm().max(1e-30);
            assert!(rel < 1e-9, "relative gap {rel}");
        }
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 30, 5);
            let sol = solve_ls(&p).unwrap();
            let r = &p.a * &sol.v - &p.b;
            let g = p.a.transpose() * r;
            let bound = 1e-8 * p.a.norm() * p.b.norm();
            assert!(g.norm() <= bound, "A^T r = {} bound {bound}", g.norm());
        }
    }

    #[test]
    fn satisfied_extra_row_leaves_solution_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 20, 4);
        let sol = solve_ls(&p).unwrap();
        // Append a row the current solution satisfies exactly.
        let w = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let extra_b = w.dot(&sol.v);
        let mut a2 = p.a.clone().insert_row(20, 0.0);
        for j in 0..4 {
            a2[(20, j)] = w[j];
        }
        let b2 = {
            let mut b = p.b.clone().insert_row(20, 0.0);
            b[20] = extra_b;
            b
        };
        let sol2 = solve_ls(&LeastSquaresProblem { a: a2, b: b2 }).unwrap();
        assert!((&sol2.v - &sol.v).norm() < 1e-9);
    }

    #[test]
    fn row_permutation_leaves_solution_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 24, 5);
        let sol = solve_ls(&p).unwrap();
        // Reverse the row order.
        let m = p.a.nrows();
        let a2 = DMatrix::from_fn(m, 5, |i, j| p.a[(m - 1 - i, j)]);
        let b2 = DVector::from_fn(m, |i, _| p.b[m - 1 - i]);
        let sol2 = solve_ls(&LeastSquaresProblem { a: a2, b: b2 }).unwrap();
        assert!((&sol2.v - &sol.v).norm() < 1e-9);
    }

    #[test]
    fn rank_deficient_system_errors_with_rank() {
        // Third column = first + second.
        let mut a = DMatrix::zeros(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..6 {
            a[(i, 0)] = rng.gen_range(-1.0..1.0);
            a[(i, 1)] = rng.gen_range(-1.0..1.0);
            a[(i, 2)] = a[(i, 0)] + a[(i, 1)];
        }
        let b = DVector::from_element(6, 1.0);
        match solve_ls(&LeastSquaresProblem { a, b }) {
            Err(LinsysError::RankDeficient { rank, cols }) => {
                assert_eq!((rank, cols), (2, 3));
            }
            other => panic!("expected rank-deficient error, got {other:?}"),
        }
    }

    #[test]
    fn empty_problem_is_an_error() {
        let p = LeastSquaresProblem {
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
        };
        assert!(matches!(solve_ls(&p), Err(LinsysError::Empty { .. })));
    }
}
