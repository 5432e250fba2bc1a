//! Second-stage correction: score covariance estimation, gradient
//! thresholding, the orthogonalized correction matrices and the one-step
//! debiased estimator, plus the pooled re-estimation of parameters shared
//! across equations.

use crate::clime::{self, ClimeConfig};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Square block-diagonal carrier for the score covariance and its
/// approximate inverse. A single block is the dense case.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pub blocks: Vec<DMatrix<f64>>,
    pub offsets: Vec<usize>,
    pub dim: usize,
}

impl BlockMatrix {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::dimension("block matrix needs at least one block"));
        }
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut dim = 0;
        for (i, b) in blocks.iter().enumerate() {
            if b.nrows() != b.ncols() {
                return Err(Error::dimension(format!("block {i} is not square")));
            }
            offsets.push(dim);
            dim += b.nrows();
        }
        Ok(BlockMatrix { blocks, offsets, dim })
    }

    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![m])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        }
        out
    }

    /// `G' * self` for a `dim x k` matrix G; returns `k x dim`.
    pub fn left_mul_transpose(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if g.nrows() != self.dim {
            return Err(Error::dimension(format!(
                "matrix has {} rows, blocks cover {}",
                g.nrows(),
                self.dim
            )));
        }
        let k = g.ncols();
        let mut out = DMatrix::zeros(k, self.dim);
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            let d = b.nrows();
            let gt = g.rows(off, d).transpose(); // k x d
            let prod = &gt * b;
            out.view_mut((0, off), (k, d)).copy_from(&prod);
        }
        Ok(out)
    }

    /// Apply a fallible map to every block.
    pub fn try_map<F>(&self, mut f: F) -> Result<BlockMatrix>
    where
        F: FnMut(usize, &DMatrix<f64>) -> Result<DMatrix<f64>>,
    {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            blocks.push(f(i, b)?);
        }
        BlockMatrix::new(blocks)
    }
}

/// `Omega = E_n(g_t g_t')`, symmetric positive semidefinite by
/// construction.
pub fn estimate_omega(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let n = scores.nrows() as f64;
    scores.tr_mul(scores) / n
}

/// Per-equation covariance blocks (zero cross-equation covariance
/// imposed). `eq_cols` gives each equation's score-column range.
pub fn estimate_omega_blocks(
    scores: &DMatrix<f64>,
    eq_cols: &[(usize, usize)],
) -> Result<BlockMatrix> {
    let n = scores.nrows() as f64;
    let mut blocks = Vec::with_capacity(eq_cols.len());
    for &(c0, c1) in eq_cols {
        if c1 > scores.ncols() || c0 >= c1 {
            return Err(Error::dimension("equation column range out of bounds"));
        }
        let cols = scores.columns(c0, c1 - c0);
        blocks.push(cols.tr_mul(&cols) / n);
    }
    BlockMatrix::new(blocks)
}

/// Entry-wise hard threshold: keep entries exceeding `t` in magnitude.
pub fn threshold_gradient(g_raw: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::validation("threshold must be finite and >= 0"));
    }
    Ok(g_raw.map(|v| if v.abs() > t { v } else { 0.0 }))
}

/// Inverse strategy behind the correction matrices: the constrained l1
/// estimator, or the exact dense inverse for cross-validation fixtures.
#[derive(Debug, Clone)]
pub enum InverseMethod {
    Clime(ClimeConfig),
    Exact,
}

impl InverseMethod {
    /// Symmetrize the input, invert approximately, and report the tuning
    /// level used (zero for the exact path) plus the input asymmetry.
    ///
    /// The l1 route escalates the level by 1.5 up to ten times when a
    /// column program is infeasible, which rank-deficient sample
    /// covariances can trigger.
    pub fn inverse(&self, m: &DMatrix<f64>) -> Result<ApproxInverse> {
        let asym = clime::max_asymmetry(m);
        let sym = (m + m.transpose()) * 0.5;
        match self {
            InverseMethod::Exact => {
                let svd = sym.clone().svd(false, false);
                let smax = svd.singular_values.max();
                let smin = svd.singular_values.min();
                if smin <= 0.0 || smax / smin > 1e12 {
                    return Err(Error::numerical(
                        "matrix numerically singular; exact inverse unavailable",
                    ));
                }
                let inv = sym.try_inverse().ok_or_else(|| {
                    Error::numerical("exact inverse failed despite conditioning check")
                })?;
                Ok(ApproxInverse {
                    matrix: inv,
                    ell_used: 0.0,
                    asymmetry: asym,
                    escalations: 0,
                })
            }
            InverseMethod::Clime(cfg) => {
                let mut ell = cfg.effective_ell(sym.nrows())?;
                let mut escalations = 0usize;
                loop {
                    let attempt = ClimeConfig::fixed(ell);
                    match clime::solve_clime(&sym, &attempt) {
                        Ok(u1) => {
                            let u = clime::symmetrize(&u1)?;
                            return Ok(ApproxInverse {
                                matrix: u,
                                ell_used: ell,
                                asymmetry: asym,
                                escalations,
                            });
                        }
                        Err(Error::Numerical(_)) if escalations < 10 => {
                            escalations += 1;
                            ell *= 1.5;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApproxInverse {
    pub matrix: DMatrix<f64>,
    pub ell_used: f64,
    pub asymmetry: f64,
    pub escalations: usize,
}

/// The correction matrices of the debiasing step.
#[derive(Debug, Clone)]
pub struct CorrectionParts {
    /// K1 x q orthogonalized score loading.
    pub a_hat: DMatrix<f64>,
    /// K1 x K1 approximate inverse of `A G1` (Woodbury form).
    pub b_hat: DMatrix<f64>,
    pub pi_hat: DMatrix<f64>,
    /// K2 x K2; empty when there are no nuisance columns.
    pub xi_hat: DMatrix<f64>,
    pub f_hat: DMatrix<f64>,
    pub ell_pi: f64,
    pub ell_xi: f64,
    /// Recorded asymmetry of the two quadratic forms before symmetrizing.
    pub asym_pi: f64,
    pub asym_xi: f64,
}

/// Build the orthogonalized correction from the thresholded gradients and
/// the approximate covariance inverse.
pub fn build_correction(
    g1: &DMatrix<f64>,
    g2: &DMatrix<f64>,
    upsilon: &BlockMatrix,
    inverse: &InverseMethod,
) -> Result<CorrectionParts> {
    let q = upsilon.dim;
    if g1.nrows() != q || (g2.ncols() > 0 && g2.nrows() != q) {
        return Err(Error::dimension(
            "gradient row count must match the covariance dimension",
        ));
    }
    let k1 = g1.ncols();
    if k1 == 0 {
        return Err(Error::dimension("no interest columns to correct"));
    }
    let v1 = upsilon.left_mul_transpose(g1)?; // K1 x q
    let s1 = &v1 * g1; // K1 x K1
    let pi = inverse.inverse(&s1)?;

    if g2.ncols() == 0 {
        let b_hat = pi.matrix.clone();
        return Ok(CorrectionParts {
            a_hat: v1,
            b_hat,
            pi_hat: pi.matrix,
            xi_hat: DMatrix::zeros(0, 0),
            f_hat: DMatrix::zeros(k1, k1),
            ell_pi: pi.ell_used,
            ell_xi: 0.0,
            asym_pi: pi.asymmetry,
            asym_xi: 0.0,
        });
    }

    let v2 = upsilon.left_mul_transpose(g2)?; // K2 x q
    let s2 = &v2 * g2; // K2 x K2
    let xi = inverse.inverse(&s2)?;
    let w = &v1 * g2; // K1 x K2
    let a_hat = &v1 - &w * &xi.matrix * &v2;
    let f_hat = &w * &xi.matrix * w.transpose();
    let b_hat = woodbury(&pi.matrix, &f_hat)?;
    Ok(CorrectionParts {
        a_hat,
        b_hat,
        pi_hat: pi.matrix,
        xi_hat: xi.matrix,
        f_hat,
        ell_pi: pi.ell_used,
        ell_xi: xi.ell_used,
        asym_pi: pi.asymmetry,
        asym_xi: xi.asymmetry,
    })
}

/// `B = Pi - Pi (I + F Pi)^{-1} F Pi`, the inverse of `Pi^{-1} + F`
/// without forming `Pi^{-1}`.
pub fn woodbury(pi: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k1 = pi.nrows();
    let inner = DMatrix::identity(k1, k1) + f * pi;
    let svd = inner.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::numerical(
            "correction system ill-conditioned; increase the inverse-estimation level",
        ));
    }
    let inv = inner
        .try_inverse()
        .ok_or_else(|| Error::numerical("correction system inversion failed"))?;
    Ok(pi - pi * inv * f * pi)
}

/// One-step correction `theta1 - B A g(theta_hat)`.
pub fn debias_step(
    theta_hat_1: &DVector<f64>,
    parts: &CorrectionParts,
    g_at_theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    if parts.a_hat.ncols() != g_at_theta.len() {
        return Err(Error::dimension("moment vector length mismatch"));
    }
    if parts.b_hat.nrows() != theta_hat_1.len() {
        return Err(Error::dimension("interest block length mismatch"));
    }
    Ok(theta_hat_1 - &parts.b_hat * (&parts.a_hat * g_at_theta))
}

/// Plug-in threshold `2 * c * sqrt(log P_n / n)` with
/// `P_n = max(q, n, e)`; `c` scales with the per-observation gradient
/// contributions.
pub fn rate_threshold(gradient_entry_sd: f64, q: usize, n: usize) -> f64 {
    let p_n = (q.max(n) as f64).max(std::f64::consts::E);
    2.0 * gradient_entry_sd * (p_n.ln() / n as f64).sqrt()
}

/// Pooled re-estimation of parameters shared across equations after the
/// deviations have been corrected: two-stage least squares over the
/// stacked `(j, t)` observations of `y_adj` on `x_common`, instrumented
/// by `z_tilde`. One matrix per equation in each slice.
pub fn reestimate_common(
    x_common: &[DMatrix<f64>],
    z_tilde: &[DMatrix<f64>],
    y_adj: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let p = x_common.len();
    if p == 0 || z_tilde.len() != p || y_adj.len() != p {
        return Err(Error::dimension("per-equation inputs must align"));
    }
    let k2 = x_common[0].ncols();
    let qz = z_tilde[0].ncols();
    if qz < k2 {
        return Err(Error::dimension(format!(
            "needs at least {k2} instrument columns, got {qz}"
        )));
    }
    let mut xz = DMatrix::zeros(k2, qz); // sum X z'
    let mut zz = DMatrix::zeros(qz, qz); // sum z z'
    let mut zy = DVector::zeros(qz); // sum z y
    for j in 0..p {
        if x_common[j].ncols() != k2 || z_tilde[j].ncols() != qz {
            return Err(Error::dimension(format!("equation {j}: column mismatch")));
        }
        if x_common[j].nrows() != y_adj[j].len() || z_tilde[j].nrows() != y_adj[j].len() {
            return Err(Error::dimension(format!("equation {j}: row mismatch")));
        }
        xz += x_common[j].tr_mul(&z_tilde[j]);
        zz += z_tilde[j].tr_mul(&z_tilde[j]);
        zy += z_tilde[j].tr_mul(&y_adj[j]);
    }
    let zz_inv = well_conditioned_inverse(&zz, "instrument Gram matrix")?;
    let meat = &xz * &zz_inv * xz.transpose();
    let meat_inv = well_conditioned_inverse(&meat, "projected design")?;
    Ok(meat_inv * &xz * zz_inv * zy)
}

fn well_conditioned_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::numerical(format!("{what} is numerically singular")));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical(format!("{what} inversion failed")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::Rng;

    #[test]
    fn omega_single_row() {
        let scores = dmatrix![1.0, 2.0];
        let omega = estimate_omega(&scores);
        assert_eq!(omega, dmatrix![1.0, 2.0; 2.0, 4.0]);
    }

    #[test]
    fn omega_orthogonal_rows_diagonal() {
        let scores = dmatrix![2.0, 0.0; 0.0, 3.0];
        let omega = estimate_omega(&scores);
        assert_eq!(omega, dmatrix![2.0, 0.0; 0.0, 4.5]);
    }

    #[test]
    fn omega_matches_accumulation_oracle() {
        let mut rng = crate::rng::stream(41, 0);
        let n = 13;
        let q = 5;
        let scores = DMatrix::from_fn(n, q, |_, _| rng.gen_range(-1.0..1.0));
        let omega = estimate_omega(&scores);
        let mut slow = DMatrix::zeros(q, q);
        for t in 0..n {
            let g = scores.row(t).transpose();
            slow += &g * g.transpose();
        }
        slow /= n as f64;
        assert!((&omega - &slow).amax() < 1e-13);
        let eig = omega.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-12));
    }

    #[test]
    fn omega_blocks_match_dense_diagonal_blocks() {
        let mut rng = crate::rng::stream(42, 0);
        let scores = DMatrix::from_fn(11, 6, |_, _| rng.gen_range(-1.0..1.0));
        let blocks = estimate_omega_blocks(&scores, &[(0, 2), (2, 6)]).unwrap();
        let dense = estimate_omega(&scores);
        for (bi, (c0, c1)) in [(0usize, 2usize), (2, 6)].into_iter().enumerate() {
            let d = c1 - c0;
            for r in 0..d {
                for c in 0..d {
                    assert!(
                        (blocks.blocks[bi][(r, c)] - dense[(c0 + r, c0 + c)]).abs() < 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn threshold_trivia() {
        let g = dmatrix![0.5, 0.01];
        assert_eq!(threshold_gradient(&g, 0.0).unwrap(), g);
        let thr = threshold_gradient(&g, 0.1).unwrap();
        assert_eq!(thr, dmatrix![0.5, 0.0]);
    }

    #[test]
    fn threshold_idempotent() {
        let mut rng = crate::rng::stream(43, 0);
        for _ in 0..20 {
            let g = DMatrix::from_fn(4, 6, |_, _| rng.gen_range(-1.0..1.0));
            let t = rng.gen_range(0.0..0.8);
            let once = threshold_gradient(&g, t).unwrap();
            let twice = threshold_gradient(&once, t).unwrap();
            assert_eq!(once, twice);
        }
    }

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::stream(seed, 0);
        let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.7..0.7));
        &g * g.transpose() + DMatrix::identity(d, d)
    }

    #[test]
    fn no_nuisance_degeneration() {
        let q = 5;
        let k1 = 2;
        let mut rng = crate::rng::stream(44, 0);
        let g1 = DMatrix::from_fn(q, k1, |_, _| rng.gen_range(-1.0..1.0));
        let g2 = DMatrix::zeros(q, 0);
        let upsilon = BlockMatrix::dense(random_spd(q, 45)).unwrap();
        let parts = build_correction(&g1, &g2, &upsilon, &InverseMethod::Exact).unwrap();
        let expect_a = upsilon.left_mul_transpose(&g1).unwrap();
        assert!((&parts.a_hat - &expect_a).amax() < 1e-12);
        assert_eq!(parts.f_hat.amax(), 0.0);
        assert!((&parts.b_hat - &parts.pi_hat).amax() < 1e-12);
    }

    #[test]
    fn scalar_case_small_ell() {
        // G1 = [1], no nuisance, inverse of [2] approx 0.5.
        let g1 = dmatrix![1.0];
        let g2 = DMatrix::zeros(1, 0);
        let upsilon = BlockMatrix::dense(dmatrix![2.0]).unwrap();
        let parts = build_correction(
            &g1,
            &g2,
            &upsilon,
            &InverseMethod::Clime(ClimeConfig::fixed(1e-4)),
        )
        .unwrap();
        assert!((parts.a_hat[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((parts.b_hat[(0, 0)] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn woodbury_matches_direct_inverse() {
        let mut rng = crate::rng::stream(46, 0);
        for trial in 0..50 {
            let k1 = 2 + trial % 3;
            let pi_src = random_spd(k1, 1000 + trial as u64);
            let f_src = {
                let g = DMatrix::from_fn(k1, k1, |_, _| rng.gen_range(-0.5..0.5));
                &g * g.transpose()
            };
            let b = woodbury(&pi_src, &f_src).unwrap();
            let direct = (pi_src.clone().try_inverse().unwrap() + &f_src)
                .try_inverse()
                .unwrap();
            assert!(
                (&b - &direct).amax() < 1e-6 * (1.0 + direct.amax()),
                "trial {trial}"
            );
            let recon = &b * (pi_src.clone().try_inverse().unwrap() + &f_src);
            assert!((recon - DMatrix::identity(k1, k1)).amax() < 1e-6);
        }
    }

    #[test]
    fn orthogonality_with_exact_inverses() {
        // A G2 vanishes identically when the inverses are exact.
        let mut rng = crate::rng::stream(47, 0);
        let q = 8;
        let g1 = DMatrix::from_fn(q, 3, |_, _| rng.gen_range(-1.0..1.0));
        let g2 = DMatrix::from_fn(q, 2, |_, _| rng.gen_range(-1.0..1.0));
        let upsilon = BlockMatrix::dense(random_spd(q, 48)).unwrap();
        let parts = build_correction(&g1, &g2, &upsilon, &InverseMethod::Exact).unwrap();
        assert!((&parts.a_hat * &g2).amax() < 1e-10);
    }

    #[test]
    fn debias_zero_moments_is_identity() {
        let mut rng = crate::rng::stream(49, 0);
        let q = 6;
        let g1 = DMatrix::from_fn(q, 2, |_, _| rng.gen_range(-1.0..1.0));
        let g2 = DMatrix::from_fn(q, 1, |_, _| rng.gen_range(-1.0..1.0));
        let upsilon = BlockMatrix::dense(random_spd(q, 50)).unwrap();
        let parts = build_correction(&g1, &g2, &upsilon, &InverseMethod::Exact).unwrap();
        let theta1 = dvector![0.7, -0.3];
        let out = debias_step(&theta1, &parts, &DVector::zeros(q)).unwrap();
        assert_eq!(out, theta1);
    }

    #[test]
    fn debias_reduces_to_iv_when_exactly_identified() {
        // q = K, no nuisance, exact inverse: one step from any start
        // lands on the IV solution -G^{-1} g0 and stays there.
        let mut rng = crate::rng::stream(51, 0);
        let k = 4;
        let g_mat = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0))
            + DMatrix::identity(k, k) * 2.0;
        let truth = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
        let g0 = -(&g_mat * &truth);
        let omega = random_spd(k, 52);
        let upsilon = BlockMatrix::dense(omega.try_inverse().unwrap()).unwrap();
        let parts = build_correction(
            &g_mat,
            &DMatrix::zeros(k, 0),
            &upsilon,
            &InverseMethod::Exact,
        )
        .unwrap();
        let start = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
        let g_at = &g_mat * &start + &g0;
        let out = debias_step(&start, &parts, &g_at).unwrap();
        assert!((&out - &truth).amax() < 1e-6);
        let g_at2 = &g_mat * &out + &g0;
        let out2 = debias_step(&out, &parts, &g_at2).unwrap();
        assert!((&out2 - &out).amax() < 1e-8);
    }

    #[test]
    fn correction_shift_depends_only_on_moment_value() {
        let mut rng = crate::rng::stream(53, 0);
        let q = 7;
        let g1 = DMatrix::from_fn(q, 3, |_, _| rng.gen_range(-1.0..1.0));
        let g2 = DMatrix::from_fn(q, 2, |_, _| rng.gen_range(-1.0..1.0));
        let upsilon = BlockMatrix::dense(random_spd(q, 54)).unwrap();
        let parts = build_correction(&g1, &g2, &upsilon, &InverseMethod::Exact).unwrap();
        let g_val = DVector::from_fn(q, |_, _| rng.gen_range(-0.5..0.5));
        let t1 = dvector![1.0, 2.0, 3.0];
        let t2 = dvector![-1.0, 0.5, 0.0];
        let d1 = debias_step(&t1, &parts, &g_val).unwrap() - &t1;
        let d2 = debias_step(&t2, &parts, &g_val).unwrap() - &t2;
        assert!((&d1 - &d2).amax() < 1e-14);
    }

    #[test]
    fn reestimate_common_noiseless_recovery() {
        let mut rng = crate::rng::stream(55, 0);
        let p = 3;
        let n = 40;
        let truth = dvector![0.5, 1.0, -0.7];
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..p {
            let x = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
            ys.push(&x * &truth);
            zs.push(x.clone());
            xs.push(x);
        }
        let est = reestimate_common(&xs, &zs, &ys).unwrap();
        assert!((&est - &truth).amax() < 1e-8);
    }

    #[test]
    fn reestimate_common_equals_pooled_ols_when_self_instrumented() {
        let mut rng = crate::rng::stream(56, 0);
        let p = 2;
        let n = 30;
        let k2 = 2;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..p {
            xs.push(DMatrix::from_fn(n, k2, |_, _| rng.gen_range(-1.0..1.0)));
            ys.push(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)));
        }
        let est = reestimate_common(&xs, &xs.clone(), &ys).unwrap();
        let mut xtx = DMatrix::zeros(k2, k2);
        let mut xty = DVector::zeros(k2);
        for j in 0..p {
            xtx += xs[j].tr_mul(&xs[j]);
            xty += xs[j].tr_mul(&ys[j]);
        }
        let ols = xtx.try_inverse().unwrap() * xty;
        assert!((&est - &ols).amax() < 1e-9);
    }

    #[test]
    fn reestimate_common_rejects_singular_instruments() {
        let x = vec![DMatrix::from_element(10, 2, 1.0)];
        let z = vec![DMatrix::from_element(10, 2, 1.0)];
        let y = vec![DVector::from_element(10, 1.0)];
        assert!(reestimate_common(&x, &z, &y).is_err());
    }
}
