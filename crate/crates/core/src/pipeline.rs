//! End-to-end estimation driver: first-stage l1 estimation, covariance
//! inversion, gradient thresholding, the one-step correction, optional
//! pooled re-estimation of common parameters, and inference/report
//! assembly on top of a fitted bundle.

use crate::clime::ClimeConfig;
use crate::debias::{
    build_correction, debias_step, estimate_omega, estimate_omega_blocks, reestimate_common,
    threshold_gradient, BlockMatrix, CorrectionParts, InverseMethod,
};
use crate::error::{Error, Result};
use crate::inference::{
    asymptotic_sigmas, block_multiplier_bootstrap, gaussian_max_quantile, make_report,
    CriticalValueMethod, InferenceConfig, InferenceReport,
};
use crate::model::{
    assemble_linear_moments, evaluate_scores, LinearMomentSystem, PanelData, TransformSpec,
};
use crate::rmd::{select_lambda, solve_rmd, LambdaMethod, RmdConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaStructure {
    /// Full sample covariance of the stacked scores.
    Dense,
    /// Per-equation blocks (zero cross-equation covariance imposed);
    /// the tractable choice for many-equation systems.
    ByEquation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Off,
    Fixed(f64),
    /// `2 * c_hat * sqrt(log P_n / n)` with the plug-in scale from the
    /// per-observation gradient contributions.
    RateRule,
}

#[derive(Debug, Clone)]
pub struct DrgmmConfig {
    pub rmd: RmdConfig,
    pub inverse: InverseMethod,
    pub omega: OmegaStructure,
    pub threshold: ThresholdMode,
    /// Run the pooled third step for layouts with shared parameters.
    pub reestimate_common: bool,
}

impl Default for DrgmmConfig {
    fn default() -> Self {
        DrgmmConfig {
            rmd: RmdConfig::default(),
            inverse: InverseMethod::Clime(ClimeConfig::auto(0)),
            omega: OmegaStructure::Dense,
            threshold: ThresholdMode::Off,
            reestimate_common: false,
        }
    }
}

/// Everything produced by a fit, sufficient for inference and reporting.
#[derive(Debug, Clone)]
pub struct DrgmmFit {
    pub theta_hat: DVector<f64>,
    pub theta_check1: DVector<f64>,
    /// Pooled re-estimate of the shared block, in theta2 order.
    pub theta_check2: Option<DVector<f64>>,
    pub lambda_used: f64,
    pub ell_upsilon: f64,
    pub threshold_used: f64,
    pub omega: BlockMatrix,
    pub upsilon: BlockMatrix,
    pub g1: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub parts: CorrectionParts,
    pub scores: DMatrix<f64>,
    pub g_at_theta_hat: DVector<f64>,
    pub warnings: Vec<String>,
    pub n: usize,
}

/// Fit the full two-step estimator on a panel with its layout.
pub fn estimate(data: &PanelData, spec: &TransformSpec, cfg: &DrgmmConfig) -> Result<DrgmmFit> {
    spec.validate()?;
    let moments = assemble_linear_moments(data, spec)?;
    let mut warnings = moments.warnings.clone();

    // Stage one: constraint level, then the l1 program.
    let lambda = match cfg.rmd.lambda_method {
        LambdaMethod::Fixed => cfg.rmd.lambda,
        _ => select_lambda(&moments, data, spec, &cfg.rmd)?,
    };
    let mut rcfg = cfg.rmd.clone();
    rcfg.lambda = lambda;
    rcfg.lambda_method = LambdaMethod::Fixed;
    let stage1 = solve_rmd(&moments, &rcfg)?;
    if stage1.escalations > 0 {
        warnings.push(format!(
            "constraint level escalated {} times to {:.6}",
            stage1.escalations, stage1.lambda_used
        ));
    }

    // Stage two inputs: scores, covariance, approximate inverse.
    let scores = evaluate_scores(data, spec, &stage1.theta)?;
    let omega = match cfg.omega {
        OmegaStructure::Dense => BlockMatrix::dense(estimate_omega(&scores))?,
        OmegaStructure::ByEquation => estimate_omega_blocks(&scores, &moments.eq_rows)?,
    };
    let inverse = resolve_inverse(&cfg.inverse, data.n);
    let mut ell_upsilon = 0.0f64;
    let mut escalated = 0usize;
    let upsilon = omega.try_map(|_, block| {
        let inv = inverse.inverse(block)?;
        ell_upsilon = ell_upsilon.max(inv.ell_used);
        escalated += inv.escalations;
        Ok(inv.matrix)
    })?;
    if escalated > 0 {
        warnings.push(format!(
            "covariance inversion level escalated {escalated} times (final {ell_upsilon:.6})"
        ));
    }

    // Gradient blocks, optionally thresholded.
    let threshold_used = match cfg.threshold {
        ThresholdMode::Off => 0.0,
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::RateRule => {
            let sd = max_gradient_entry_sd(data, spec)?;
            crate::debias::rate_threshold(sd, moments.q_total, data.n)
        }
    };
    let g1_raw = moments.gradient_columns(&spec.theta1);
    let g2_raw = moments.gradient_columns(&spec.theta2);
    let (g1, g2) = if threshold_used > 0.0 {
        (
            threshold_gradient(&g1_raw, threshold_used)?,
            threshold_gradient(&g2_raw, threshold_used)?,
        )
    } else {
        (g1_raw, g2_raw)
    };

    let parts = build_correction(&g1, &g2, &upsilon, &inverse)?;
    let g_at = moments.g_at(&stage1.theta);
    let theta_hat_1 = DVector::from_fn(spec.theta1.len(), |l, _| stage1.theta[spec.theta1[l]]);
    let theta_check1 = debias_step(&theta_hat_1, &parts, &g_at)?;

    let theta_check2 = if cfg.reestimate_common && !spec.theta2.is_empty() {
        match common_reestimation(data, spec, &theta_check1) {
            Ok(v) => Some(v),
            Err(e) => {
                warnings.push(format!("common-parameter re-estimation skipped: {e}"));
                None
            }
        }
    } else {
        None
    };

    Ok(DrgmmFit {
        theta_hat: stage1.theta,
        theta_check1,
        theta_check2,
        lambda_used: stage1.lambda_used,
        ell_upsilon,
        threshold_used,
        omega,
        upsilon,
        g1,
        g2,
        parts,
        scores,
        g_at_theta_hat: g_at,
        warnings,
        n: data.n,
    })
}

fn resolve_inverse(inverse: &InverseMethod, n: usize) -> InverseMethod {
    match inverse {
        InverseMethod::Clime(cfg) if cfg.auto_ell && cfg.n_obs == 0 => {
            let mut c = cfg.clone();
            c.n_obs = n;
            InverseMethod::Clime(c)
        }
        other => other.clone(),
    }
}

/// Largest entrywise standard deviation of the per-observation gradient
/// contributions `z_{j,t} * xt_{j,t}` across all equations.
fn max_gradient_entry_sd(data: &PanelData, spec: &TransformSpec) -> Result<f64> {
    let n = data.n as f64;
    let mut worst = 0.0f64;
    for j in 0..data.p {
        let xt = &data.x[j] * &spec.blocks[j]; // n x K_j
        for zc in 0..data.q_j(j) {
            for xc in 0..xt.ncols() {
                let mut s = 0.0;
                let mut s2 = 0.0;
                for t in 0..data.n {
                    let v = data.z[j][(t, zc)] * xt[(t, xc)];
                    s += v;
                    s2 += v * v;
                }
                let mean = s / n;
                let var = (s2 / n - mean * mean).max(0.0);
                worst = worst.max(var.sqrt());
            }
        }
    }
    Ok(worst)
}

/// Pooled third step for network layouts: the response net of the
/// corrected deviations regressed on the observed weighted signal and
/// the shared covariates, instrumented by the equation's instruments.
fn common_reestimation(
    data: &PanelData,
    spec: &TransformSpec,
    theta_check1: &DVector<f64>,
) -> Result<DVector<f64>> {
    // The layout must carry a shared effect followed by shared loadings.
    let rho_pos_in_theta2 = spec
        .theta2
        .iter()
        .position(|&g| spec.names[g] == "rho")
        .ok_or_else(|| Error::validation("layout has no shared effect coordinate"))?;
    if rho_pos_in_theta2 != 0 {
        return Err(Error::validation("shared effect must lead the nuisance block"));
    }
    let m = spec.theta2.len() - 1;
    let p = data.p;
    let mut xs = Vec::with_capacity(p);
    let mut zs = Vec::with_capacity(p);
    let mut ys = Vec::with_capacity(p);
    for j in 0..p {
        let raw_cols = data.x[j].ncols();
        if raw_cols < p + m {
            return Err(Error::dimension(format!(
                "equation {j}: raw covariates do not carry the network signal"
            )));
        }
        let signal = data.x[j].columns(0, p); // n x p unit-level signal
        // observed weight row: the transform column mapped to the shared
        // effect holds w_j on the signal rows
        let rho_local = spec.global_index[j]
            .iter()
            .position(|&g| spec.names[g] == "rho")
            .ok_or_else(|| Error::validation("equation lacks the shared effect column"))?;
        let w_col = spec.blocks[j].column(rho_local);
        let w_j = DVector::from_fn(p, |k, _| w_col[k]);
        // corrected deviations of equation j
        let mut delta_j = DVector::zeros(p);
        for (pos, &g) in spec.theta1.iter().enumerate() {
            if let Some((jj, kk)) = parse_delta(&spec.names[g]) {
                if jj == j {
                    delta_j[kk] = theta_check1[pos];
                }
            }
        }
        let wy = &signal * &w_j; // n-vector
        let dy = &signal * &delta_j;
        let mut x_common = DMatrix::zeros(data.n, 1 + m);
        x_common.column_mut(0).copy_from(&wy);
        x_common
            .view_mut((0, 1), (data.n, m))
            .copy_from(&data.x[j].columns(p, m));
        xs.push(x_common);
        ys.push(&data.y[j] - dy);
        zs.push(data.z[j].clone());
    }
    reestimate_common(&xs, &zs, &ys)
}

pub(crate) fn parse_delta(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("delta[")?.strip_suffix(']')?;
    let mut it = rest.split(',');
    let j = it.next()?.parse().ok()?;
    let k = it.next()?.parse().ok()?;
    Some((j, k))
}

/// Run inference on a fitted bundle; tested coordinates index into the
/// interest block.
pub fn infer(
    fit: &DrgmmFit,
    spec: &TransformSpec,
    cfg: &InferenceConfig,
) -> Result<InferenceReport> {
    cfg.validate(fit.n)?;
    let (sigmas, clipped) = asymptotic_sigmas(&fit.parts.b_hat, &cfg.s_indices)?;
    let mut warnings = Vec::new();
    if clipped > 0 {
        warnings.push(format!("{clipped} variance estimates clipped at zero"));
    }
    let crit = match cfg.method {
        CriticalValueMethod::GaussianMax => {
            gaussian_max_quantile(cfg.s_indices.len(), cfg.alpha, cfg.mc_draws, cfg.seed)?
        }
        CriticalValueMethod::BlockBootstrap => {
            let zeta_full = &fit.parts.b_hat * &fit.parts.a_hat; // K1 x q
            let zeta = DMatrix::from_fn(cfg.s_indices.len(), zeta_full.ncols(), |r, c| {
                zeta_full[(cfg.s_indices[r], c)]
            });
            let (c_star, mut w) =
                block_multiplier_bootstrap(&fit.scores, &zeta, &sigmas, cfg)?;
            warnings.append(&mut w);
            c_star
        }
    };
    let names: Vec<String> = cfg
        .s_indices
        .iter()
        .map(|&pos| spec.names[spec.theta1[pos]].clone())
        .collect();
    let mut report = make_report(
        &fit.theta_check1,
        &sigmas,
        crit,
        fit.n,
        cfg.alpha,
        &cfg.s_indices,
        names,
        cfg.method,
    )?;
    report.sigma_clipped = clipped;
    report.warnings = warnings;
    Ok(report)
}

/// A recovered latent edge: the deviation at `(to, from)` is
/// significantly nonzero, indicating a link from `from` to `to`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub delta_hat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub significant: bool,
}

/// Extract the tested deviation entries from a report; edges are every
/// tested pair, flagged by rejection.
pub fn recover_edges(report: &InferenceReport) -> Vec<Edge> {
    let mut edges = Vec::new();
    for (i, name) in report.names.iter().enumerate() {
        if let Some((j, k)) = parse_delta(name) {
            edges.push(Edge {
                from: k,
                to: j,
                delta_hat: report.estimates[i],
                ci_lower: report.ci_lower[i],
                ci_upper: report.ci_upper[i],
                significant: report.reject[i],
            });
        }
    }
    edges
}

/// Re-derive the moment system of a fitted layout (for tests and tools).
pub fn moment_system(data: &PanelData, spec: &TransformSpec) -> Result<LinearMomentSystem> {
    assemble_linear_moments(data, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, DgpConfig, DgpKind};

    fn pipeline_cfg(lambda: f64) -> DrgmmConfig {
        DrgmmConfig {
            rmd: RmdConfig {
                lambda,
                lambda_method: LambdaMethod::Fixed,
                ..RmdConfig::default()
            },
            inverse: InverseMethod::Exact,
            omega: OmegaStructure::Dense,
            threshold: ThresholdMode::Off,
            reestimate_common: false,
        }
    }

    #[test]
    fn single_equation_fit_and_inference_smoke() {
        let cfg = DgpConfig {
            dgp_kind: DgpKind::SingleEqIid,
            n: 80,
            p: 8,
            q: 16,
            rho: 0.7,
            seed: 31,
            ..DgpConfig::default()
        };
        let draw = dgp::generate(&cfg, 0).unwrap();
        let fit = estimate(&draw.data, &draw.spec, &pipeline_cfg(0.4)).unwrap();
        assert_eq!(fit.theta_check1.len(), draw.spec.theta1.len());
        let icfg = InferenceConfig {
            s_indices: draw.truth.tested_positions.clone(),
            ..InferenceConfig::default()
        };
        let report = infer(&fit, &draw.spec, &icfg).unwrap();
        assert_eq!(report.reject.len(), draw.truth.tested_positions.len());
        for i in 0..report.reject.len() {
            assert!(report.ci_lower[i] <= report.ci_upper[i]);
        }
    }

    #[test]
    fn network_fit_with_reestimation() {
        let cfg = DgpConfig {
            dgp_kind: DgpKind::NetYx,
            n: 80,
            p: 4,
            m: 6,
            q: 12,
            rho: 0.5,
            seed: 32,
            ..DgpConfig::default()
        };
        let draw = dgp::generate(&cfg, 0).unwrap();
        let mut pcfg = pipeline_cfg(0.5);
        pcfg.omega = OmegaStructure::ByEquation;
        pcfg.reestimate_common = true;
        let fit = estimate(&draw.data, &draw.spec, &pcfg).unwrap();
        let t2 = fit.theta_check2.as_ref().expect("third step ran");
        assert_eq!(t2.len(), draw.spec.theta2.len());
        // recovered edge extraction round-trips the tested set
        let icfg = InferenceConfig {
            s_indices: draw.truth.tested_positions.clone(),
            ..InferenceConfig::default()
        };
        let report = infer(&fit, &draw.spec, &icfg).unwrap();
        let edges = recover_edges(&report);
        assert_eq!(edges.len(), report.names.len());
        let rejections = report.reject.iter().filter(|&&r| r).count();
        let significant = edges.iter().filter(|e| e.significant).count();
        assert_eq!(rejections, significant);
    }

    #[test]
    fn huge_lambda_returns_zero_first_stage() {
        let cfg = DgpConfig {
            dgp_kind: DgpKind::SingleEqIid,
            n: 60,
            p: 6,
            q: 12,
            seed: 33,
            ..DgpConfig::default()
        };
        let draw = dgp::generate(&cfg, 0).unwrap();
        let fit = estimate(&draw.data, &draw.spec, &pipeline_cfg(1e9)).unwrap();
        assert_eq!(fit.theta_hat.amax(), 0.0);
    }

    #[test]
    fn determinism_end_to_end() {
        let cfg = DgpConfig {
            dgp_kind: DgpKind::SingleEqIid,
            n: 60,
            p: 6,
            q: 12,
            seed: 34,
            ..DgpConfig::default()
        };
        let draw = dgp::generate(&cfg, 1).unwrap();
        let f1 = estimate(&draw.data, &draw.spec, &pipeline_cfg(0.3)).unwrap();
        let f2 = estimate(&draw.data, &draw.spec, &pipeline_cfg(0.3)).unwrap();
        assert_eq!(f1.theta_check1.as_slice(), f2.theta_check1.as_slice());
        assert_eq!(f1.lambda_used.to_bits(), f2.lambda_used.to_bits());
    }
}
