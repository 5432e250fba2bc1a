//! Constrained l1-minimization for approximate matrix inversion: column i
//! of the estimate solves `min |v|_1 s.t. |M v - e_i|_inf <= ell`,
//! followed by the smaller-magnitude symmetrization.

use crate::error::{Error, Result};
use crate::lp::{LpOptions, LpStatus, LpSweep};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct ClimeConfig {
    pub ell: f64,
    /// Replace `ell` by `c * sqrt(log d / n)` using the dimension of the
    /// input matrix and the sample size recorded here.
    pub auto_ell: bool,
    pub auto_constant: f64,
    /// Sample size behind the matrix estimate; only used by the rate rule.
    pub n_obs: usize,
}

impl Default for ClimeConfig {
    fn default() -> Self {
        ClimeConfig {
            ell: 0.1,
            auto_ell: false,
            auto_constant: 2.0,
            n_obs: 0,
        }
    }
}

impl ClimeConfig {
    pub fn fixed(ell: f64) -> Self {
        ClimeConfig {
            ell,
            ..ClimeConfig::default()
        }
    }

    pub fn auto(n_obs: usize) -> Self {
        ClimeConfig {
            auto_ell: true,
            n_obs,
            ..ClimeConfig::default()
        }
    }

    pub fn effective_ell(&self, d: usize) -> Result<f64> {
        let ell = if self.auto_ell {
            if self.n_obs == 0 {
                return Err(Error::validation("auto ell needs a positive sample size"));
            }
            self.auto_constant * ((d.max(2) as f64).ln() / self.n_obs as f64).sqrt()
        } else {
            self.ell
        };
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::validation(format!("ell must be positive, got {ell}")));
        }
        Ok(ell)
    }
}

/// Column-wise constrained l1 inverse of a symmetric matrix. Columns are
/// solved in index order through a shared warm-started program, which is
/// deterministic and independent of thread count.
///
/// An infeasible column is a hard error naming the column; callers that
/// prefer escalation wrap this with a larger `ell`.
pub fn solve_clime(m: &DMatrix<f64>, cfg: &ClimeConfig) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if m.ncols() != d || d == 0 {
        return Err(Error::dimension("input must be square and nonempty"));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::validation("input has NaN or infinite entries"));
    }
    let asym = max_asymmetry(m);
    if asym > 1e-8 {
        return Err(Error::validation(format!(
            "input is not symmetric: max |M - M'| = {asym:.3e}"
        )));
    }
    let ell = cfg.effective_ell(d)?;

    // Shared constraint matrix over (v+, v-):
    //   [ M  -M] v <= ell + e_i
    //   [-M   M] v <= ell - e_i
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for r in 0..d {
        for c in 0..d {
            let v = m[(r, c)];
            a[(r, c)] = v;
            a[(r, c + d)] = -v;
            a[(r + d, c)] = -v;
            a[(r + d, c + d)] = v;
        }
    }
    let cost = DVector::from_element(2 * d, 1.0);
    let mut sweep = LpSweep::new(a, cost, LpOptions::default());
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut b = DVector::from_element(2 * d, ell);
        b[i] += 1.0;
        b[i + d] -= 1.0;
        let sol = sweep.solve(&b)?;
        match sol.status {
            LpStatus::Optimal => {
                for r in 0..d {
                    out[(r, i)] = sol.x[r] - sol.x[r + d];
                }
            }
            LpStatus::Infeasible => {
                return Err(Error::numerical(format!(
                    "inverse-estimation column {i} infeasible at ell = {ell:.6}"
                )));
            }
            LpStatus::Unbounded => {
                return Err(Error::numerical(format!(
                    "inverse-estimation column {i} reported unbounded"
                )));
            }
        }
    }
    Ok(out)
}

/// Entry-wise symmetrization keeping the smaller-magnitude member of each
/// `(i,j)/(j,i)` pair; exact ties keep the upper-triangle entry.
pub fn symmetrize(u1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = u1.nrows();
    if u1.ncols() != d {
        return Err(Error::dimension("symmetrize expects a square matrix"));
    }
    let mut out = u1.clone();
    for i in 0..d {
        for j in (i + 1)..d {
            let a = u1[(i, j)];
            let b = u1[(j, i)];
            let keep = if a.abs() <= b.abs() { a } else { b };
            out[(i, j)] = keep;
            out[(j, i)] = keep;
        }
    }
    Ok(out)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Max-norm of `M U - I`, the quantity the column programs constrain.
pub fn inverse_residual(m: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let prod = m * u;
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - target).abs());
        }
    }
    worst
}
