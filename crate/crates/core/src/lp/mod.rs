//! Dense linear-programming core.
//!
//! Solves `min c'x  s.t.  A x <= b, x >= 0` with a two-phase revised
//! simplex over a dense explicit basis inverse. Pricing uses the classic
//! most-negative-reduced-cost rule and falls back to Bland's rule when a
//! run of degenerate pivots is detected, which keeps the solver both fast
//! and cycle-free. Every returned solution carries a feasibility residual
//! and a duality gap computed against the original data; a solution is
//! only reported `Optimal` when both certificates pass.
//!
//! Two structural shortcuts matter for the estimators built on top:
//!
//! * problems with many more rows than columns and a nonnegative
//!   objective are solved through their dual (the basis then has the
//!   small dimension), and the primal solution is recovered from the
//!   simplex multipliers;
//! * [`LpSweep`] re-solves a family of problems sharing one constraint
//!   matrix but different right-hand sides (the column sweep of the
//!   constrained-inverse estimator) by dual-simplex reoptimization from
//!   the previous optimal basis.

mod simplex;

pub use simplex::LpSweep;
/// Brute-force reference used by tests; independent of the simplex path.
pub use simplex::enumerate_vertices_oracle;

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// `min c'x  s.t.  a_ub * x <= b_ub, x >= 0`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
}

impl LpProblem {
    pub fn new(c: DVector<f64>, a_ub: DMatrix<f64>, b_ub: DVector<f64>) -> Result<Self> {
        if a_ub.ncols() != c.len() || a_ub.nrows() != b_ub.len() {
            return Err(Error::dimension(format!(
                "LP dimensions inconsistent: A is {}x{}, c has {}, b has {}",
                a_ub.nrows(),
                a_ub.ncols(),
                c.len(),
                b_ub.len()
            )));
        }
        let finite = c.iter().all(|v| v.is_finite())
            && b_ub.iter().all(|v| v.is_finite())
            && a_ub.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("LP data contains NaN or infinity"));
        }
        Ok(LpProblem { c, a_ub, b_ub })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: LpStatus,
    /// `c'x - b'y` against the original problem, nonnegative at optimality.
    pub duality_gap: f64,
    /// Largest constraint violation `max_i (A x - b)_i`, relative scale.
    pub feasibility_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            feas_tol: 1e-9,
            gap_tol: 1e-8,
            max_iter: 200_000,
        }
    }
}

/// Solve a dense LP. Deterministic: identical input produces an identical
/// solution vector, independent of thread count (the solve is serial).
pub fn solve_lp(problem: &LpProblem, opts: LpOptions) -> Result<LpSolution> {
    let m = problem.a_ub.nrows();
    let n = problem.a_ub.ncols();
    // Row-heavy problems with c >= 0 go through the dual so the simplex
    // basis has the small dimension. c >= 0 guarantees the dual is
    // feasible at u = 0, keeping the status mapping unambiguous.
    if m >= 2 * n && m >= 64 && problem.c.iter().all(|&v| v >= 0.0) {
        if let Some(sol) = simplex::solve_via_dual(problem, opts)? {
            return Ok(sol);
        }
    }
    simplex::solve_direct(problem, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::simplex::enumerate_vertices_oracle;
    use nalgebra::{dmatrix, dvector};
    use rand::Rng;

    fn solve(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> LpSolution {
        solve_lp(&LpProblem::new(c, a, b).unwrap(), LpOptions::default()).unwrap()
    }

    #[test]
    fn min_x_subject_to_x_ge_one() {
        // min x s.t. -x <= -1, x >= 0  ->  x = 1
        let sol = solve(dvector![1.0], dmatrix![-1.0], dvector![-1.0]);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_variable_cover() {
        // min x1+x2 s.t. x1+x2 >= 2, x1 <= 1.5 -> objective 2
        let a = dmatrix![-1.0, -1.0; 1.0, 0.0];
        let sol = solve(dvector![1.0, 1.0], a, dvector![-2.0, 1.5]);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_is_reported() {
        // x <= -1 with x >= 0 is empty.
        let sol = solve(dvector![1.0], dmatrix![1.0], dvector![-1.0]);
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_reported() {
        // min -x s.t. 0*x <= 1
        let sol = solve(dvector![-1.0], dmatrix![0.0], dvector![1.0]);
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn random_lps_match_vertex_enumeration() {
        // Nonnegative objectives keep the problems bounded below, which is
        // the family the estimators produce (l1 objectives).
        let mut rng = crate::rng::stream(42, 0);
        let mut solved = 0;
        while solved < 60 {
            let n = 5;
            let m = 8;
            let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(m, |_, _| rng.gen_range(-0.3..1.5));
            let c = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
            let problem = LpProblem::new(c, a, b).unwrap();
            let oracle = enumerate_vertices_oracle(&problem);
            let sol = solve_lp(&problem, LpOptions::default()).unwrap();
            match oracle {
                Some(best) => {
                    assert_eq!(sol.status, LpStatus::Optimal);
                    assert!(
                        (sol.objective - best).abs() <= 1e-8 * (1.0 + best.abs()),
                        "objective {} vs oracle {}",
                        sol.objective,
                        best
                    );
                    solved += 1;
                }
                None => {
                    assert_eq!(sol.status, LpStatus::Infeasible);
                }
            }
        }
    }

    #[test]
    fn scaling_objective_keeps_argmin() {
        let mut rng = crate::rng::stream(7, 1);
        for _ in 0..20 {
            let n = 4;
            let m = 6;
            let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(m, |_, _| rng.gen_range(0.5..2.0));
            let c = DVector::from_fn(n, |_, _| rng.gen_range(0.1..1.0));
            let p1 = LpProblem::new(c.clone(), a.clone(), b.clone()).unwrap();
            let p2 = LpProblem::new(c * 3.5, a, b).unwrap();
            let s1 = solve_lp(&p1, LpOptions::default()).unwrap();
            let s2 = solve_lp(&p2, LpOptions::default()).unwrap();
            assert_eq!(s1.status, LpStatus::Optimal);
            assert!((&s1.x - &s2.x).amax() < 1e-8);
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let mut rng = crate::rng::stream(3, 2);
        let a = DMatrix::from_fn(12, 6, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(12, |_, _| rng.gen_range(0.1..1.0));
        let c = DVector::from_fn(6, |_, _| rng.gen_range(-0.5..1.0));
        let p = LpProblem::new(c, a, b).unwrap();
        let s1 = solve_lp(&p, LpOptions::default()).unwrap();
        let s2 = solve_lp(&p, LpOptions::default()).unwrap();
        assert_eq!(s1.x.as_slice(), s2.x.as_slice());
        assert_eq!(s1.objective.to_bits(), s2.objective.to_bits());
    }

    #[test]
    fn weak_duality_certificate() {
        let mut rng = crate::rng::stream(11, 3);
        for _ in 0..20 {
            let a = DMatrix::from_fn(10, 4, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(10, |_, _| rng.gen_range(0.3..1.5));
            let c = DVector::from_fn(4, |_, _| rng.gen_range(0.0..1.0));
            let p = LpProblem::new(c, a, b).unwrap();
            let s = solve_lp(&p, LpOptions::default()).unwrap();
            if s.status == LpStatus::Optimal {
                assert!(s.duality_gap >= -1e-7);
                assert!(s.duality_gap <= 1e-7 * (1.0 + s.objective.abs()));
                assert!(s.feasibility_residual <= 1e-8);
            }
        }
    }

    #[test]
    fn sweep_matches_cold_solves() {
        // CLIME-shaped family: shared [[M,-M],[-M,M]] matrix, b varies by
        // column. Warm-started solutions must match cold solves.
        let mut rng = crate::rng::stream(23, 9);
        let d = 12;
        let mut m_sym = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.4..0.4));
        m_sym = &m_sym * m_sym.transpose() + DMatrix::identity(d, d);
        let mut a = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] = m_sym[(i, j)];
                a[(i, j + d)] = -m_sym[(i, j)];
                a[(i + d, j)] = -m_sym[(i, j)];
                a[(i + d, j + d)] = m_sym[(i, j)];
            }
        }
        let c = DVector::from_element(2 * d, 1.0);
        let ell = 0.05;
        let mut sweep = LpSweep::new(a.clone(), c.clone(), LpOptions::default());
        for col in 0..d {
            let mut b = DVector::from_element(2 * d, ell);
            b[col] += 1.0;
            b[col + d] -= 1.0;
            let warm = sweep.solve(&b).unwrap();
            let cold = solve_lp(&LpProblem::new(c.clone(), a.clone(), b).unwrap(), LpOptions::default()).unwrap();
            assert_eq!(warm.status, LpStatus::Optimal);
            assert!(
                (warm.objective - cold.objective).abs() <= 1e-7 * (1.0 + cold.objective.abs()),
                "col {col}: warm {} cold {}",
                warm.objective,
                cold.objective
            );
        }
    }

    #[test]
    fn tall_problem_uses_dual_and_matches_direct() {
        let mut rng = crate::rng::stream(19, 4);
        // 160 rows, 6 columns triggers the dual route; compare against the
        // direct simplex on the same data.
        let a = DMatrix::from_fn(160, 6, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(160, |_, _| rng.gen_range(0.5..2.0));
        let c = DVector::from_fn(6, |_, _| rng.gen_range(0.0..1.0));
        let p = LpProblem::new(c, a, b).unwrap();
        let via_dual = solve_lp(&p, LpOptions::default()).unwrap();
        let direct = simplex::solve_direct(&p, LpOptions::default()).unwrap();
        assert_eq!(via_dual.status, LpStatus::Optimal);
        assert!((via_dual.objective - direct.objective).abs() < 1e-7);
    }
}
