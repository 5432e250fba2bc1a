//! Single-response process: a high-dimensional weighted effect with an
//! endogenous design, under independent or temporally dependent
//! instrument processes.

use super::{DgpConfig, SimDraw, SimTruth};
use crate::error::{Error, Result};
use crate::model::{single_equation_transform, PanelData};
use crate::rng::{derive, stream, tag};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

/// Number of leading deviation coordinates tracked for metrics and
/// individual inference.
fn tracked_count(p: usize) -> usize {
    50.min(p.saturating_sub(1))
}

struct WeightDraw {
    h: DVector<f64>,
    w: DVector<f64>,
    flipped: Vec<bool>,
    anchor: usize,
}

/// Actual weights are Bernoulli(0.8); the observed weights flip each
/// entry independently with the misspecification probability. The anchor
/// is the smallest unflipped nonzero observed weight at or beyond the
/// tracked range (falling back to any unflipped nonzero entry).
fn draw_weights(cfg: &DgpConfig, rep: u64) -> Result<WeightDraw> {
    let p = cfg.p;
    let tracked = tracked_count(p);
    let mut rng = stream(derive(cfg.seed, rep), tag::STRUCTURE);
    for _attempt in 0..100 {
        let h = DVector::from_fn(p, |_, _| if rng.gen_bool(0.8) { 1.0 } else { 0.0 });
        let flipped: Vec<bool> = (0..p).map(|_| rng.gen_bool(cfg.p_misspec)).collect();
        let w = DVector::from_fn(p, |k, _| if flipped[k] { 1.0 - h[k] } else { h[k] });
        let eligible = |k: usize| w[k] != 0.0 && !flipped[k];
        let anchor = (tracked..p)
            .find(|&k| eligible(k))
            .or_else(|| (0..p).find(|&k| eligible(k)));
        if let Some(anchor) = anchor {
            return Ok(WeightDraw { h, w, flipped, anchor });
        }
    }
    Err(Error::numerical(
        "no anchor entry found after 100 weight draws",
    ))
}

/// Cholesky factor of the geometric correlation matrix.
fn instrument_chol(q: usize, rho_z: f64) -> Result<DMatrix<f64>> {
    let sigma = DMatrix::from_fn(q, q, |i, j| rho_z.powi((i as i32 - j as i32).abs()));
    sigma
        .cholesky()
        .map(|c| c.l().into_owned())
        .ok_or_else(|| Error::numerical("instrument correlation factorization failed"))
}

/// Maps instruments into covariates: `x = pi' z + v` with
/// `pi = (2 + 2 rho_z^{q/2})^{-1/2} (1_2 (x) I_{q/2})`, so each covariate
/// loads on its own pair of instruments with unit variance.
fn covariate_from_instruments(z_row: &DVector<f64>, p: usize, rho_z: f64) -> DVector<f64> {
    let scale = (2.0 + 2.0 * rho_z.powi(p as i32)).sqrt().recip();
    DVector::from_fn(p, |k, _| scale * (z_row[k] + z_row[k + p]))
}

struct ErrorDraw {
    eps: f64,
    v: DVector<f64>,
}

/// `eps = sqrt(k) u1 + sqrt(1-k) u2`, `v = sqrt(k) u1 1_p + sqrt(1-k) u3`:
/// the shared component makes every covariate endogenous with
/// covariance `k` against the error.
fn draw_errors<R: Rng>(rng: &mut R, p: usize, kappa: f64) -> ErrorDraw {
    let u1: f64 = StandardNormal.sample(rng);
    let u2: f64 = StandardNormal.sample(rng);
    let sk = kappa.sqrt();
    let s1k = (1.0 - kappa).sqrt();
    let eps = sk * u1 + s1k * u2;
    let v = DVector::from_fn(p, |_, _| {
        let u3: f64 = StandardNormal.sample(rng);
        sk * u1 + s1k * u3
    });
    ErrorDraw { eps, v }
}

fn build_single_eq(
    cfg: &DgpConfig,
    rep: u64,
    z_matrix: DMatrix<f64>,
) -> Result<SimDraw> {
    let p = cfg.p;
    let n = cfg.n;
    let weights = draw_weights(cfg, rep)?;
    let mut err_rng = stream(derive(cfg.seed, rep), tag::ERRORS);
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for t in 0..n {
        let z_row = z_matrix.row(t).transpose().into_owned();
        let xz = covariate_from_instruments(&z_row, p, cfg.rho_z);
        let e = draw_errors(&mut err_rng, p, cfg.kappa);
        let x_t = xz + e.v;
        let hx = weights.h.dot(&x_t);
        y[t] = cfg.rho * hx + e.eps;
        x.row_mut(t).copy_from(&x_t.transpose());
    }
    let data = PanelData::new(vec![y], vec![x], vec![z_matrix], vec!["eq0".into()])?;
    let tracked = tracked_count(p);
    let spec = single_equation_transform(&weights.w, weights.anchor)?
        .with_interest_set((0..=tracked).collect())?;

    // Global layout: coordinate 0 is the effect; deviations follow in
    // ascending covariate order with the anchor removed. The truth for
    // delta is rho (h - w) on the kept coordinates.
    let k_total = spec.k_total();
    let mut theta = DVector::zeros(k_total);
    theta[0] = cfg.rho;
    let mut g = 1;
    for k in 0..p {
        if k == weights.anchor {
            continue;
        }
        theta[g] = cfg.rho * (weights.h[k] - weights.w[k]);
        g += 1;
    }
    let tested_positions: Vec<usize> = (0..=tracked).collect();
    let mut tested_nonzero = vec![true]; // the common effect
    for k in 0..tracked {
        tested_nonzero.push(weights.flipped[k]);
    }
    let truth = SimTruth {
        theta,
        rho: cfg.rho,
        gamma: None,
        tested_positions,
        tested_nonzero,
        delta_positions: (1..=tracked).collect(),
        rho_position: Some(0),
    };
    Ok(SimDraw {
        data,
        spec,
        network: None,
        truth,
    })
}

/// Independent draws: instruments are Gaussian with geometric
/// cross-sectional correlation.
pub fn gen_single_eq_iid(cfg: &DgpConfig, rep: u64) -> Result<SimDraw> {
    if cfg.q % 2 != 0 || cfg.p != cfg.q / 2 {
        return Err(Error::validation(
            "single-equation process needs q even and p = q / 2",
        ));
    }
    let chol = instrument_chol(cfg.q, cfg.rho_z)?;
    let mut z_rng = stream(derive(cfg.seed, rep), tag::INSTRUMENTS);
    let mut z = DMatrix::zeros(cfg.n, cfg.q);
    for t in 0..cfg.n {
        let raw = DVector::from_fn(cfg.q, |_, _| {
            let v: f64 = StandardNormal.sample(&mut z_rng);
            v
        });
        let zt = &chol * raw;
        z.row_mut(t).copy_from(&zt.transpose());
    }
    build_single_eq(cfg, rep, z)
}

/// Temporally dependent draws: the instruments follow a truncated linear
/// process with polynomially decaying random coefficient matrices and
/// conditionally heteroskedastic innovations.
pub fn gen_single_eq_dependent(cfg: &DgpConfig, rep: u64) -> Result<SimDraw> {
    if cfg.q % 2 != 0 || cfg.p != cfg.q / 2 {
        return Err(Error::validation(
            "single-equation process needs q even and p = q / 2",
        ));
    }
    if cfg.lag_trunc < 1 {
        return Err(Error::validation("lag truncation must be at least 1"));
    }
    let q = cfg.q;
    let n = cfg.n;
    let lags = cfg.lag_trunc;
    // innovations e_{k,s} for s = -lags-1 .. n-1 (one extra lag feeds the
    // volatility recursion), standardized Student draws
    let mut inn_rng = stream(derive(cfg.seed, rep), tag::INNOVATIONS);
    let student = StudentT::new(cfg.df as f64)
        .map_err(|e| Error::validation(format!("bad Student parameter: {e}")))?;
    let std_scale = ((cfg.df as f64) / (cfg.df as f64 - 2.0)).sqrt().recip();
    let rows = n + lags + 1;
    let mut e = DMatrix::zeros(rows, q);
    for r in 0..rows {
        for k in 0..q {
            let v: f64 = student.sample(&mut inn_rng);
            e[(r, k)] = v * std_scale;
        }
    }
    // xi_{k,s} = e_{k,s} (0.8 e_{k,s-1}^2 + 0.2)^{1/2}, s = -lags .. n-1
    let mut xi = DMatrix::zeros(rows - 1, q);
    for r in 1..rows {
        for k in 0..q {
            let prev = e[(r - 1, k)];
            xi[(r - 1, k)] = e[(r, k)] * (0.8 * prev * prev + 0.2).sqrt();
        }
    }
    // z_t = sum_l (l+1)^{-tau-1} M_l xi_{t-l}; xi row index of time t is
    // (t + lags) in 0-based storage (t = 0..n-1).
    let mut coef_rng = stream(derive(cfg.seed, rep), tag::LINEAR_PROCESS);
    let mut z = DMatrix::zeros(n, q);
    for l in 0..=lags {
        let m_l = DMatrix::from_fn(q, q, |_, _| {
            let v: f64 = StandardNormal.sample(&mut coef_rng);
            v
        });
        let scale = ((l + 1) as f64).powf(-cfg.tau - 1.0);
        // all time rows at once: xi rows (lags - l) .. (lags - l + n)
        let xi_rows = xi.rows(lags - l, n);
        z += (xi_rows * m_l.transpose()) * scale;
    }
    build_single_eq(cfg, rep, z)
}

/// The simple benchmark: regress the response on the observed weighted
/// covariate using the first instrument only.
pub fn baseline_2sls_rho(draw: &SimDraw) -> Result<f64> {
    let data = &draw.data;
    if data.p != 1 {
        return Err(Error::validation("the simple benchmark is single-equation"));
    }
    // observed weighted covariate: first column of B is the weight vector
    let b = &draw.spec.blocks[0];
    let w = b.column(0);
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..data.n {
        let z1 = data.z[0][(t, 0)];
        let wx: f64 = (0..data.x[0].ncols())
            .map(|k| w[k] * data.x[0][(t, k)])
            .sum();
        num += z1 * data.y[0][t];
        den += z1 * wx;
    }
    if den.abs() < 1e-12 {
        return Err(Error::numerical("benchmark instrument is orthogonal to the regressor"));
    }
    Ok(num / den)
}
