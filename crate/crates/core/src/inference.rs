//! Individual and simultaneous inference on the corrected estimator:
//! Gaussian-approximation critical values and the block multiplier
//! bootstrap, plus confidence-interval report assembly.

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalValueMethod {
    /// Quantile of the max of independent standard normals.
    GaussianMax,
    /// Block multiplier bootstrap quantile.
    BlockBootstrap,
}

#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub alpha: f64,
    /// Tested coordinates, as indices into the interest block.
    pub s_indices: Vec<usize>,
    pub method: CriticalValueMethod,
    pub n_boot: usize,
    /// Bootstrap block size; None picks `floor(n^(1/3))`.
    pub block_size: Option<usize>,
    /// Monte Carlo draws behind the Gaussian quantile.
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            alpha: 0.05,
            s_indices: vec![],
            method: CriticalValueMethod::GaussianMax,
            n_boot: 1000,
            block_size: None,
            mc_draws: 100_000,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation("alpha must lie in (0, 1)"));
        }
        if self.s_indices.is_empty() {
            return Err(Error::validation("the tested set must be nonempty"));
        }
        if let Some(b) = self.block_size {
            if b == 0 || b > n {
                return Err(Error::validation(format!(
                    "block size {b} out of range for n = {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn effective_block_size(&self, n: usize) -> usize {
        self.block_size
            .unwrap_or_else(|| ((n as f64).powf(1.0 / 3.0).floor() as usize).max(1))
    }
}

/// Default bootstrap block size `floor(n^(1/3))`.
pub fn default_block_size(n: usize) -> usize {
    ((n as f64).powf(1.0 / 3.0).floor() as usize).max(1)
}

/// Per-coordinate standard deviations from the diagonal of the
/// approximate `(A G1)^{-1}`; negative diagonals are clipped to zero and
/// flagged.
pub fn asymptotic_sigmas(b_hat: &DMatrix<f64>, s: &[usize]) -> Result<(DVector<f64>, usize)> {
    let k1 = b_hat.nrows();
    let mut clipped = 0usize;
    let mut out = DVector::zeros(s.len());
    for (pos, &j) in s.iter().enumerate() {
        if j >= k1 {
            return Err(Error::dimension(format!(
                "tested coordinate {j} outside the interest block of size {k1}"
            )));
        }
        let d = b_hat[(j, j)];
        if d < 0.0 {
            clipped += 1;
            out[pos] = 0.0;
        } else {
            out[pos] = d.sqrt();
        }
    }
    Ok((out, clipped))
}

/// Monte Carlo `(1 - alpha)` quantile of `max_{j <= s_size} |Z_j|` over
/// independent standard normals; deterministic under the seed.
pub fn gaussian_max_quantile(s_size: usize, alpha: f64, mc_draws: usize, seed: u64) -> Result<f64> {
    if s_size == 0 {
        return Err(Error::validation("the tested set must be nonempty"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation("alpha must lie in (0, 1)"));
    }
    let draws = mc_draws.max(1000);
    let mut stats = Vec::with_capacity(draws);
    let mut rng = rng::stream(seed, tag::GAUSSIAN_QUANTILE);
    for _ in 0..draws {
        let mut m = 0.0f64;
        for _ in 0..s_size {
            let z: f64 = StandardNormal.sample(&mut rng);
            m = m.max(z.abs());
        }
        stats.push(m);
    }
    Ok(empirical_quantile(&mut stats, 1.0 - alpha))
}

/// Sorts in place; `level`-quantile by the ceiling-index convention.
fn empirical_quantile(stats: &mut [f64], level: f64) -> f64 {
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = stats.len();
    let idx = ((level * m as f64).ceil() as usize).clamp(1, m);
    stats[idx - 1]
}

/// Block multiplier bootstrap critical value: the empirical
/// `(1 - alpha)` quantile over draws of `max_j |T_j / sigma_j|`, where
/// `T_j = -n^{-1/2} sum_i e_i sum_{t in block i} (zeta_j . g_t)` with
/// standard-normal multipliers `e_i` per block.
///
/// `zeta` holds one row per tested coordinate (|S| x q); trailing
/// observations that do not fill a block are dropped. Multipliers are
/// derived from `(seed, draw)` counters, so the result is independent of
/// any parallel scheduling.
pub fn block_multiplier_bootstrap(
    scores: &DMatrix<f64>,
    zeta: &DMatrix<f64>,
    sigmas: &DVector<f64>,
    cfg: &InferenceConfig,
) -> Result<(f64, Vec<String>)> {
    let n = scores.nrows();
    let s_size = zeta.nrows();
    if s_size == 0 {
        return Err(Error::validation("the tested set must be nonempty"));
    }
    if zeta.ncols() != scores.ncols() {
        return Err(Error::dimension("zeta columns must match the score dimension"));
    }
    if sigmas.len() != s_size {
        return Err(Error::dimension("one sigma per tested coordinate"));
    }
    let b_n = cfg.effective_block_size(n);
    if b_n > n {
        return Err(Error::validation(format!("block size {b_n} exceeds n = {n}")));
    }
    let mut warnings = Vec::new();
    if cfg.n_boot < 100 {
        warnings.push(format!(
            "n_boot = {} is small; critical values will be noisy",
            cfg.n_boot
        ));
    }
    let l_n = n / b_n;
    if l_n == 0 {
        return Err(Error::validation("no complete blocks"));
    }
    // Per-observation projected scores, then per-block sums: |S| x l_n.
    let proj = zeta * scores.transpose(); // |S| x n
    let mut block_sums: DMatrix<f64> = DMatrix::zeros(s_size, l_n);
    for i in 0..l_n {
        for t in i * b_n..(i + 1) * b_n {
            for j in 0..s_size {
                block_sums[(j, i)] += proj[(j, t)];
            }
        }
    }
    let scale = 1.0 / (n as f64).sqrt();
    let mut stats = Vec::with_capacity(cfg.n_boot);
    for draw in 0..cfg.n_boot {
        let mut rng = rng::stream(cfg.seed, tag::BOOT + draw as u64);
        let mut t_stat = vec![0.0f64; s_size];
        for i in 0..l_n {
            let e: f64 = StandardNormal.sample(&mut rng);
            for (j, acc) in t_stat.iter_mut().enumerate() {
                *acc += e * block_sums[(j, i)];
            }
        }
        let mut m = 0.0f64;
        for (j, acc) in t_stat.iter().enumerate() {
            let t = -scale * acc;
            let ratio = if sigmas[j] > 0.0 {
                (t / sigmas[j]).abs()
            } else if t == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            m = m.max(ratio);
        }
        stats.push(m);
    }
    Ok((empirical_quantile(&mut stats, 1.0 - cfg.alpha), warnings))
}

/// Per-coordinate inference summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceReport {
    pub method: CriticalValueMethod,
    pub alpha: f64,
    pub critical_value: f64,
    pub n: usize,
    /// Tested coordinate indices (into the interest block).
    pub indices: Vec<usize>,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub reject: Vec<bool>,
    pub sigma_clipped: usize,
    pub warnings: Vec<String>,
}

/// Assemble intervals `estimate -+ n^{-1/2} crit sigma_j` and the
/// rejection flags for the zero null.
pub fn make_report(
    theta_check1: &DVector<f64>,
    sigmas: &DVector<f64>,
    crit: f64,
    n: usize,
    alpha: f64,
    s: &[usize],
    names: Vec<String>,
    method: CriticalValueMethod,
) -> Result<InferenceReport> {
    if s.len() != sigmas.len() || s.len() != names.len() {
        return Err(Error::dimension("tested set, sigmas and names must align"));
    }
    if crit < 0.0 || !crit.is_finite() {
        return Err(Error::validation("critical value must be finite and >= 0"));
    }
    let root_n = (n as f64).sqrt();
    let mut estimates = Vec::with_capacity(s.len());
    let mut lo = Vec::with_capacity(s.len());
    let mut hi = Vec::with_capacity(s.len());
    let mut reject = Vec::with_capacity(s.len());
    for (pos, &j) in s.iter().enumerate() {
        if j >= theta_check1.len() {
            return Err(Error::dimension(format!("coordinate {j} out of range")));
        }
        let est = theta_check1[j];
        let half = crit * sigmas[pos] / root_n;
        estimates.push(est);
        lo.push(est - half);
        hi.push(est + half);
        reject.push(0.0 < est - half || 0.0 > est + half);
    }
    Ok(InferenceReport {
        method,
        alpha,
        critical_value: crit,
        n,
        indices: s.to_vec(),
        names,
        estimates,
        sigma_hat: sigmas.iter().cloned().collect(),
        ci_lower: lo,
        ci_upper: hi,
        reject,
        sigma_clipped: 0,
        warnings: vec![],
    })
}
