//! Desk-scale verification of design-matrix conditions by exhaustive
//! subset enumeration: sparse extremal singular values, a randomized
//! bound on the identification constant, and restricted-isometry checks
//! for transformed designs.

use crate::error::{Error, Result};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct SparseSpectrumReport {
    pub m: usize,
    pub sigma_min_m: f64,
    pub sigma_max_m: f64,
    pub subsets_evaluated: usize,
}

/// Exact enumeration of `min_{|I|<=m} max_{|H|<=m, |H|>=|I|} sigma_min`
/// and `max max sigma_max` over row/column subsets.
///
/// The total subset count must not exceed `cap` (an error asks for a
/// smaller instance otherwise).
pub fn sparse_singular_values(
    g: &DMatrix<f64>,
    m: usize,
    cap: usize,
) -> Result<SparseSpectrumReport> {
    let rows = g.nrows();
    let cols = g.ncols();
    if m == 0 || m > rows.min(cols) {
        return Err(Error::validation(format!(
            "sparsity level {m} out of range for a {rows}x{cols} matrix"
        )));
    }
    let col_subsets = subsets_up_to(cols, m);
    let row_subsets = subsets_up_to(rows, m);
    let work = col_subsets
        .len()
        .checked_mul(row_subsets.len())
        .ok_or_else(|| Error::validation("subset count overflow"))?;
    if work > cap {
        return Err(Error::validation(format!(
            "enumeration needs {work} subset pairs, cap is {cap}; use a smaller instance"
        )));
    }
    let mut sigma_min_m = f64::INFINITY;
    let mut sigma_max_m: f64 = 0.0;
    let mut evaluated = 0usize;
    for i_set in &col_subsets {
        let mut best_min_over_rows: f64 = 0.0;
        for h_set in &row_subsets {
            if h_set.len() < i_set.len() {
                continue;
            }
            evaluated += 1;
            let sub = submatrix(g, h_set, i_set);
            let svd = sub.svd(false, false);
            let smin = svd.singular_values.min();
            let smax = svd.singular_values.max();
            best_min_over_rows = best_min_over_rows.max(smin);
            sigma_max_m = sigma_max_m.max(smax);
        }
        sigma_min_m = sigma_min_m.min(best_min_over_rows);
    }
    Ok(SparseSpectrumReport {
        m,
        sigma_min_m,
        sigma_max_m,
        subsets_evaluated: evaluated,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaReport {
    /// Randomized estimate; an upper bound on the true minimum because it
    /// samples the cone rather than minimizing over it exactly.
    pub upper_bound: f64,
    pub s: usize,
    pub u: f64,
    pub norm_order: u8,
    pub trials_per_subset: usize,
    pub subsets_evaluated: usize,
}

/// Randomized upper bound for the identification constant
/// `min_{|I|<=s} min_{theta in cone(I,u), |theta|_a = 1} |G theta|_inf`.
///
/// Exact cone minimization is nonconvex; sampling directions inside the
/// cone yields a certified upper bound, reported as such.
pub fn kappa_bound(
    g: &DMatrix<f64>,
    s: usize,
    u: f64,
    norm_order: u8,
    trials: usize,
    cap: usize,
    seed: u64,
) -> Result<KappaReport> {
    let cols = g.ncols();
    if s == 0 || s > cols {
        return Err(Error::validation("sparsity level out of range"));
    }
    if !(norm_order == 1 || norm_order == 2) {
        return Err(Error::validation("norm order must be 1 or 2"));
    }
    if u < 0.0 {
        return Err(Error::validation("cone width u must be >= 0"));
    }
    let subsets = subsets_up_to(cols, s);
    if subsets.len().saturating_mul(trials.max(1)) > cap {
        return Err(Error::validation(format!(
            "kappa enumeration over {} subsets x {trials} trials exceeds cap {cap}",
            subsets.len()
        )));
    }
    let mut best = f64::INFINITY;
    let mut rng = rng::stream(seed, 0);
    for i_set in &subsets {
        // Coordinate directions first: they are in every cone and often
        // near-extremal.
        for &i in i_set {
            let mut theta = DVector::zeros(cols);
            theta[i] = 1.0;
            best = best.min((g * &theta).amax());
        }
        for _ in 0..trials {
            let mut theta = DVector::zeros(cols);
            let mut l1_in = 0.0;
            for &i in i_set {
                let v: f64 = StandardNormal.sample(&mut rng);
                theta[i] = v;
                l1_in += v.abs();
            }
            if u > 0.0 && cols > i_set.len() {
                // spread a random mass <= u * |theta_I|_1 outside I
                let budget = rng.gen_range(0.0..=u) * l1_in;
                let outside: Vec<usize> =
                    (0..cols).filter(|c| !i_set.contains(c)).collect();
                let mut weights: Vec<f64> =
                    outside.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
                let total: f64 = weights.iter().sum();
                if total > 0.0 {
                    for w in &mut weights {
                        *w *= budget / total;
                    }
                    for (pos, &c) in outside.iter().enumerate() {
                        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        theta[c] = sign * weights[pos];
                    }
                }
            }
            let norm = match norm_order {
                1 => theta.iter().map(|v| v.abs()).sum::<f64>(),
                _ => theta.norm(),
            };
            if norm > 0.0 {
                theta /= norm;
                best = best.min((g * &theta).amax());
            }
        }
    }
    Ok(KappaReport {
        upper_bound: best,
        s,
        u,
        norm_order,
        trials_per_subset: trials,
        subsets_evaluated: subsets.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RipSubsetReport {
    pub subset: Vec<usize>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Smallest Rayleigh quotient of X'X over the range of B_I.
    pub lambda_tilde_i: f64,
    pub gram_min_eigenvalue: f64,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RipReport {
    pub s: usize,
    /// min over subsets of `lambda_tilde_i`.
    pub lambda_tilde: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `sigma_min(X B_I)^2 >= lambda_tilde * lambda_min(B_I' B_I)` for
    /// every full-rank subset.
    pub inequality_holds: bool,
    pub subsets: Vec<RipSubsetReport>,
}

/// Enumerate column subsets of size `s` of the transform and report the
/// extremal singular values of the transformed design together with the
/// restricted Rayleigh bound.
pub fn rip_check(x: &DMatrix<f64>, b: &DMatrix<f64>, s: usize, cap: usize) -> Result<RipReport> {
    if x.ncols() != b.nrows() {
        return Err(Error::dimension(format!(
            "X has {} columns but B has {} rows",
            x.ncols(),
            b.nrows()
        )));
    }
    if s == 0 || s > b.ncols() {
        return Err(Error::validation("subset size out of range"));
    }
    let subsets = subsets_exact(b.ncols(), s);
    if subsets.len() > cap {
        return Err(Error::validation(format!(
            "{} subsets exceed cap {cap}",
            subsets.len()
        )));
    }
    let xtx = x.tr_mul(x);
    let mut reports = Vec::with_capacity(subsets.len());
    let mut lambda_tilde = f64::INFINITY;
    let mut sig_min = f64::INFINITY;
    let mut sig_max: f64 = 0.0;
    let mut inequality_holds = true;
    for subset in subsets {
        let b_i = columns(b, &subset);
        let xb = x * &b_i;
        let svd = xb.svd(false, false);
        let smin = svd.singular_values.min();
        let smax = svd.singular_values.max();
        let gram = b_i.tr_mul(&b_i);
        let gram_eig = gram.clone().symmetric_eigen().eigenvalues;
        let gram_min = gram_eig.min();
        let rank_deficient = gram_min <= 1e-10 * gram_eig.max().max(1.0);
        // Rayleigh quotient of X'X over range(B_I): generalized problem
        // (B' X'X B) v = lambda (B'B) v.
        let lt = if rank_deficient {
            f64::NAN
        } else {
            let m1 = b_i.tr_mul(&xtx) * &b_i;
            let chol = gram
                .clone()
                .cholesky()
                .ok_or_else(|| Error::numerical("Gram factorization failed"))?;
            let linv = chol
                .l()
                .try_inverse()
                .ok_or_else(|| Error::numerical("Gram factor inversion failed"))?;
            let reduced = &linv * m1 * linv.transpose();
            let sym = (&reduced + reduced.transpose()) * 0.5;
            sym.symmetric_eigen().eigenvalues.min()
        };
        if !rank_deficient {
            lambda_tilde = lambda_tilde.min(lt);
        }
        sig_min = sig_min.min(smin);
        sig_max = sig_max.max(smax);
        reports.push(RipSubsetReport {
            subset,
            sigma_min: smin,
            sigma_max: smax,
            lambda_tilde_i: lt,
            gram_min_eigenvalue: gram_min,
            rank_deficient,
        });
    }
    for r in &reports {
        if !r.rank_deficient
            && r.sigma_min * r.sigma_min
                < lambda_tilde * r.gram_min_eigenvalue - 1e-8 * (1.0 + r.sigma_max)
        {
            inequality_holds = false;
        }
    }
    Ok(RipReport {
        s,
        lambda_tilde,
        sigma_min: sig_min,
        sigma_max: sig_max,
        inequality_holds,
        subsets: reports,
    })
}

fn submatrix(g: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| g[(rows[r], cols[c])])
}

fn columns(b: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(b.nrows(), cols.len(), |r, c| b[(r, cols[c])])
}

/// All nonempty subsets of `{0..n}` of size at most `m`, in
/// lexicographic order within each size.
pub fn subsets_up_to(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=m.min(n) {
        out.extend(subsets_exact(n, size));
    }
    out
}

/// All subsets of `{0..n}` of exactly `size` elements.
pub fn subsets_exact(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..size).collect();
    if size == 0 || size > n {
        return out;
    }
    loop {
        out.push(combo.clone());
        let mut i = size;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if combo[i] != i + n - size {
                combo[i] += 1;
                for k in i + 1..size {
                    combo[k] = combo[k - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            return out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::Rng;

    #[test]
    fn identity_spectrum() {
        let g = DMatrix::identity(3, 3);
        let r = sparse_singular_values(&g, 2, 1_000_000).unwrap();
        assert!((r.sigma_min_m - 1.0).abs() < 1e-12);
        assert!((r.sigma_max_m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_min_is_smallest_entry() {
        // diag(3,2,1), m=1: min over columns of max over rows of the
        // singular value lands on the smallest diagonal entry.
        let g = dmatrix![3.0, 0.0, 0.0; 0.0, 2.0, 0.0; 0.0, 0.0, 1.0];
        let r = sparse_singular_values(&g, 1, 1_000_000).unwrap();
        assert!((r.sigma_min_m - 1.0).abs() < 1e-12);
        assert!((r.sigma_max_m - 3.0).abs() < 1e-12);
    }

    /// Independent brute force, written as directly as possible from the
    /// subset definition (used to cross-check the implementation).
    fn brute_force(g: &DMatrix<f64>, m: usize) -> (f64, f64) {
        let mut smin_outer = f64::INFINITY;
        let mut smax_outer: f64 = 0.0;
        for i_size in 1..=m {
            for i_set in subsets_exact(g.ncols(), i_size) {
                let mut inner: f64 = 0.0;
                for h_size in i_size..=m {
                    for h_set in subsets_exact(g.nrows(), h_size) {
                        let sub = DMatrix::from_fn(h_set.len(), i_set.len(), |r, c| {
                            g[(h_set[r], i_set[c])]
                        });
                        let sv = sub.svd(false, false).singular_values;
                        inner = inner.max(sv.min());
                        smax_outer = smax_outer.max(sv.max());
                    }
                }
                smin_outer = smin_outer.min(inner);
            }
        }
        (smin_outer, smax_outer)
    }

    #[test]
    fn random_matches_independent_enumeration() {
        let mut rng = crate::rng::stream(61, 0);
        for trial in 0..5 {
            let g = DMatrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
            let m = 2;
            let r = sparse_singular_values(&g, m, 1_000_000).unwrap();
            let (smin, smax) = brute_force(&g, m);
            assert!((r.sigma_min_m - smin).abs() < 1e-10, "trial {trial}");
            assert!((r.sigma_max_m - smax).abs() < 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let g = DMatrix::identity(20, 20);
        assert!(sparse_singular_values(&g, 8, 1000).is_err());
    }

    #[test]
    fn kappa_identity_coordinate_directions() {
        let g = DMatrix::identity(2, 2);
        let r = kappa_bound(&g, 1, 0.0, 2, 50, 100_000, 1).unwrap();
        assert!((r.upper_bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_scales_linearly() {
        let mut rng = crate::rng::stream(62, 0);
        let g = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let r1 = kappa_bound(&g, 2, 0.5, 2, 100, 100_000, 3).unwrap();
        let r2 = kappa_bound(&(&g * 2.5), 2, 0.5, 2, 100, 100_000, 3).unwrap();
        assert!((r2.upper_bound - 2.5 * r1.upper_bound).abs() < 1e-9);
    }

    #[test]
    fn kappa_dominates_fine_grid_search() {
        // The randomized bound samples fewer points than a fine grid, so
        // it can only be larger (both are upper bounds for the minimum).
        let mut rng = crate::rng::stream(63, 0);
        let g = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let s = 1;
        let u = 0.0;
        let r = kappa_bound(&g, s, u, 2, 30, 100_000, 4).unwrap();
        // grid over coordinate directions only (u = 0, s = 1, |.|_2 = 1
        // means theta = +-e_i)
        let mut grid_best = f64::INFINITY;
        for i in 0..3 {
            let mut theta = DVector::zeros(3);
            theta[i] = 1.0;
            grid_best = grid_best.min((&g * &theta).amax());
        }
        assert!(r.upper_bound >= grid_best - 1e-12);
        // and with these cones the coordinate directions are included, so
        // the bound is exact here
        assert!((r.upper_bound - grid_best).abs() < 1e-12);
    }

    #[test]
    fn rip_orthonormal_design() {
        // X with orthonormal columns and B = I: all bounds are one.
        let x = DMatrix::identity(6, 4);
        let b = DMatrix::identity(4, 4);
        let r = rip_check(&x, &b, 2, 100_000).unwrap();
        assert!((r.sigma_min - 1.0).abs() < 1e-10);
        assert!((r.sigma_max - 1.0).abs() < 1e-10);
        assert!((r.lambda_tilde - 1.0).abs() < 1e-10);
        assert!(r.inequality_holds);
    }

    #[test]
    fn rip_inequality_on_random_fixtures() {
        let mut rng = crate::rng::stream(64, 0);
        for _ in 0..10 {
            let x = DMatrix::from_fn(8, 4, |_, _| rng.gen_range(-1.0..1.0));
            let b = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let r = rip_check(&x, &b, 2, 100_000).unwrap();
            assert!(r.inequality_holds);
        }
    }

    #[test]
    fn rip_flags_rank_deficiency() {
        let x = DMatrix::identity(5, 3);
        let mut b = DMatrix::zeros(3, 3);
        b[(0, 0)] = 1.0;
        b[(0, 1)] = 1.0; // columns 0 and 1 identical -> any pair with both is deficient
        b[(1, 2)] = 1.0;
        let r = rip_check(&x, &b, 2, 100_000).unwrap();
        assert!(r.subsets.iter().any(|s| s.rank_deficient));
    }

    #[test]
    fn subset_generators() {
        assert_eq!(subsets_exact(4, 2).len(), 6);
        assert_eq!(subsets_up_to(4, 2).len(), 4 + 6);
        assert_eq!(subsets_exact(3, 3), vec![vec![0, 1, 2]]);
    }
}
