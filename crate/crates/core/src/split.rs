//! Two-fold sample splitting along the time dimension for fixed-dimension
//! interest parameters: nuisance objects estimated on one half are paired
//! with scores from the other, and the corrected estimator solves the
//! averaged orthogonalized moment equation exactly.

use crate::debias::{self, BlockMatrix, CorrectionParts, InverseMethod};
use crate::error::{Error, Result};
use crate::model::{assemble_linear_moments, evaluate_scores, PanelData, TransformSpec};
use crate::rmd::{select_lambda, solve_rmd, LambdaMethod, RmdConfig};
use nalgebra::{DMatrix, DVector};

/// Which half's preliminary estimate feeds each half's score evaluation
/// and covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    /// Nuisance from the opposite half (the conditioning argument behind
    /// the estimator requires this; default).
    CrossHalf,
    /// Everything within the same half.
    SameHalf,
}

#[derive(Debug, Clone)]
pub struct SplitConfig {
    pub rmd: RmdConfig,
    pub inverse: InverseMethod,
    pub pairing: PairingMode,
    /// Hard threshold applied to the gradient blocks (0 disables).
    pub gradient_threshold: f64,
    /// Estimate the score covariance per equation instead of densely.
    pub omega_by_equation: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitPlan {
    pub n: usize,
    pub cut: usize,
}

impl SplitPlan {
    pub fn new(n: usize) -> SplitPlan {
        SplitPlan { n, cut: n / 2 }
    }

    pub fn halves(&self) -> [(usize, usize); 2] {
        [(0, self.cut), (self.cut, self.n)]
    }
}

#[derive(Debug, Clone)]
pub struct SplitEstimate {
    pub theta1: DVector<f64>,
    pub plan: SplitPlan,
    pub lambda_used: [f64; 2],
    /// Max-norm residual of the averaged corrected moment at the solution.
    pub residual: f64,
}

struct HalfFit {
    g1: DMatrix<f64>,
    g2: DMatrix<f64>,
    g0: DVector<f64>,
    parts: CorrectionParts,
    eval_theta: DVector<f64>,
    lambda: f64,
}

/// The split estimator: each half yields a preliminary estimate and the
/// orthogonalized correction; the final interest vector is the exact zero
/// of the averaged corrected linear moment.
pub fn split_estimate(
    data: &PanelData,
    spec: &TransformSpec,
    cfg: &SplitConfig,
) -> Result<SplitEstimate> {
    if data.n < 20 {
        return Err(Error::validation("sample splitting needs n >= 20"));
    }
    spec.validate()?;
    let plan = SplitPlan::new(data.n);
    let halves = plan.halves();
    let data_halves = [
        data.time_slice(halves[0].0, halves[0].1)?,
        data.time_slice(halves[1].0, halves[1].1)?,
    ];

    // Preliminary per-half estimates.
    let mut prelim = Vec::with_capacity(2);
    for half in &data_halves {
        let moments = assemble_linear_moments(half, spec)?;
        let lambda = match cfg.rmd.lambda_method {
            LambdaMethod::Fixed => cfg.rmd.lambda,
            _ => select_lambda(&moments, half, spec, &cfg.rmd)?,
        };
        let mut rcfg = cfg.rmd.clone();
        rcfg.lambda = lambda;
        rcfg.lambda_method = LambdaMethod::Fixed;
        let sol = solve_rmd(&moments, &rcfg)?;
        prelim.push((moments, sol));
    }

    // Correction parts per half, paired per configuration.
    let mut fits: Vec<HalfFit> = Vec::with_capacity(2);
    for i in 0..2 {
        let other = 1 - i;
        let eval_theta = match cfg.pairing {
            PairingMode::CrossHalf => prelim[other].1.theta.clone(),
            PairingMode::SameHalf => prelim[i].1.theta.clone(),
        };
        let scores = evaluate_scores(&data_halves[i], spec, &eval_theta)?;
        let moments = &prelim[i].0;
        let upsilon = if cfg.omega_by_equation {
            let omega = debias::estimate_omega_blocks(&scores, &moments.eq_rows)?;
            omega.try_map(|_, b| Ok(cfg.inverse.inverse(b)?.matrix))?
        } else {
            let omega = debias::estimate_omega(&scores);
            BlockMatrix::dense(cfg.inverse.inverse(&omega)?.matrix)?
        };
        let g1 = threshold_cols(moments, &spec.theta1, cfg.gradient_threshold)?;
        let g2 = threshold_cols(moments, &spec.theta2, cfg.gradient_threshold)?;
        let parts = debias::build_correction(&g1, &g2, &upsilon, &cfg.inverse)?;
        fits.push(HalfFit {
            g1,
            g2,
            g0: moments.g0.clone(),
            parts,
            eval_theta,
            lambda: prelim[i].1.lambda_used,
        });
    }

    // Solve 0.5 * sum_i A_i (G1_i theta1 + G2_i theta2_i + g0_i) = 0.
    let k1 = spec.theta1.len();
    let mut lhs = DMatrix::zeros(k1, k1);
    let mut rhs = DVector::zeros(k1);
    for fit in &fits {
        let a = &fit.parts.a_hat;
        lhs += 0.5 * a * &fit.g1;
        let constant = if spec.theta2.is_empty() {
            fit.g0.clone()
        } else {
            let theta2 =
                DVector::from_fn(spec.theta2.len(), |l, _| fit.eval_theta[spec.theta2[l]]);
            &fit.g0 + &fit.g2 * theta2
        };
        rhs += 0.5 * a * constant;
    }
    let svd = lhs.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::numerical("pooled interest system is singular"));
    }
    let theta1 = lhs
        .clone()
        .lu()
        .solve(&(-&rhs))
        .ok_or_else(|| Error::numerical("pooled interest solve failed"))?;
    let residual = (&lhs * &theta1 + &rhs).amax();
    Ok(SplitEstimate {
        theta1,
        plan,
        lambda_used: [fits[0].lambda, fits[1].lambda],
        residual,
    })
}

fn threshold_cols(
    moments: &crate::model::LinearMomentSystem,
    idx: &[usize],
    t: f64,
) -> Result<DMatrix<f64>> {
    let cols = moments.gradient_columns(idx);
    if t > 0.0 {
        debias::threshold_gradient(&cols, t)
    } else {
        Ok(cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clime::ClimeConfig;
    use crate::model::single_equation_transform;
    use nalgebra::dvector;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fixed_cfg(lambda: f64) -> SplitConfig {
        SplitConfig {
            rmd: RmdConfig {
                lambda,
                lambda_method: LambdaMethod::Fixed,
                ..RmdConfig::default()
            },
            inverse: InverseMethod::Exact,
            pairing: PairingMode::CrossHalf,
            gradient_threshold: 0.0,
            omega_by_equation: false,
        }
    }

    /// Single-response panel y = rho * (1'x) + delta'x + noise with
    /// instruments driving every covariate.
    fn synth_panel(
        n: usize,
        p: usize,
        rho: f64,
        delta: &DVector<f64>,
        noise: f64,
        seed: u64,
    ) -> (PanelData, TransformSpec, DVector<f64>) {
        let mut rng = crate::rng::stream(seed, 0);
        let w = DVector::from_element(p, 1.0);
        let anchor = p - 1;
        let spec = single_equation_transform(&w, anchor).unwrap();
        let q = 2 * p;
        let mut x = DMatrix::zeros(n, p);
        let mut z = DMatrix::zeros(n, q);
        let mut y = DVector::zeros(n);
        for t in 0..n {
            let zs: Vec<f64> = (0..q)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v
                })
                .collect();
            for (c, v) in zs.iter().enumerate() {
                z[(t, c)] = *v;
            }
            for k in 0..p {
                let v: f64 = StandardNormal.sample(&mut rng);
                x[(t, k)] = zs[k] + zs[k + p] + 0.3 * v;
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            let wx: f64 = (0..p).map(|k| x[(t, k)]).sum();
            let dx: f64 = (0..p).map(|k| delta[k] * x[(t, k)]).sum();
            y[t] = rho * wx + dx + noise * e;
        }
        let data = PanelData::new(vec![y], vec![x], vec![z], vec!["u".into()]).unwrap();
        // global coordinates: (rho, delta_k for k != anchor)
        let mut truth = DVector::zeros(p);
        truth[0] = rho;
        for k in 0..anchor {
            truth[k + 1] = delta[k];
        }
        (data, spec, truth)
    }

    #[test]
    fn duplicated_halves_match_single_fold() {
        let p = 4;
        let mut delta = DVector::zeros(p);
        delta[1] = 0.5;
        let (base, spec, _) = synth_panel(30, p, 0.6, &delta, 0.1, 77);
        let dup = |m: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(60, m.ncols());
            out.rows_mut(0, 30).copy_from(m);
            out.rows_mut(30, 30).copy_from(m);
            out
        };
        let mut y2 = DVector::zeros(60);
        y2.rows_mut(0, 30).copy_from(&base.y[0]);
        y2.rows_mut(30, 30).copy_from(&base.y[0]);
        let data = PanelData::new(
            vec![y2],
            vec![dup(&base.x[0])],
            vec![dup(&base.z[0])],
            vec!["u".into()],
        )
        .unwrap();
        let cfg = fixed_cfg(0.05);
        let split = split_estimate(&data, &spec, &cfg).unwrap();

        // one-fold reference on the single copy
        let moments = assemble_linear_moments(&base, &spec).unwrap();
        let sol = solve_rmd(&moments, &cfg.rmd).unwrap();
        let scores = evaluate_scores(&base, &spec, &sol.theta).unwrap();
        let omega = debias::estimate_omega(&scores);
        let ups =
            BlockMatrix::dense(InverseMethod::Exact.inverse(&omega).unwrap().matrix).unwrap();
        let g1 = moments.gradient_columns(&spec.theta1);
        let g2 = moments.gradient_columns(&spec.theta2);
        let parts = debias::build_correction(&g1, &g2, &ups, &InverseMethod::Exact).unwrap();
        let lhs = &parts.a_hat * &g1;
        let rhs = &parts.a_hat * &moments.g0;
        let reference = lhs.lu().solve(&(-rhs)).unwrap();
        assert!((&split.theta1 - &reference).amax() < 1e-8);
    }

    #[test]
    fn noiseless_recovery() {
        let p = 5;
        let mut delta = DVector::zeros(p);
        delta[2] = 0.4;
        let (data, spec, truth) = synth_panel(60, p, 0.7, &delta, 0.0, 78);
        let est = split_estimate(&data, &spec, &fixed_cfg(0.02)).unwrap();
        assert!(
            (&est.theta1 - &truth).amax() < 1e-8,
            "err {}",
            (&est.theta1 - &truth).amax()
        );
        assert!(est.residual < 1e-10);
    }

    #[test]
    fn scalar_hand_ratio() {
        let n = 24;
        let mut rng = crate::rng::stream(79, 0);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(0.5..1.5));
        let z = x.clone();
        let y = &x * dvector![0.8] + DVector::from_fn(n, |_, _| rng.gen_range(-0.01..0.01));
        let data = PanelData::new(vec![y], vec![x], vec![z], vec!["u".into()]).unwrap();
        let spec = TransformSpec {
            blocks: vec![nalgebra::dmatrix![1.0]],
            global_index: vec![vec![0]],
            names: vec!["b".into()],
            theta1: vec![0],
            theta2: vec![],
            endogenous: vec![false],
        };
        let est = split_estimate(&data, &spec, &fixed_cfg(0.05)).unwrap();
        assert!((est.theta1[0] - 0.8).abs() < 0.05);
        assert!(est.residual < 1e-10);
    }

    #[test]
    fn exchangeability_under_half_swap() {
        let p = 4;
        let mut delta = DVector::zeros(p);
        delta[0] = 0.3;
        let (data, spec, _) = synth_panel(40, p, 0.5, &delta, 0.2, 80);
        let cfg = fixed_cfg(0.08);
        let est = split_estimate(&data, &spec, &cfg).unwrap();
        let cut = data.n / 2;
        let rot = |m: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(data.n, m.ncols());
            out.rows_mut(0, data.n - cut)
                .copy_from(&m.rows(cut, data.n - cut));
            out.rows_mut(data.n - cut, cut).copy_from(&m.rows(0, cut));
            out
        };
        let mut y2 = DVector::zeros(data.n);
        y2.rows_mut(0, data.n - cut)
            .copy_from(&data.y[0].rows(cut, data.n - cut));
        y2.rows_mut(data.n - cut, cut)
            .copy_from(&data.y[0].rows(0, cut));
        let swapped = PanelData::new(
            vec![y2],
            vec![rot(&data.x[0])],
            vec![rot(&data.z[0])],
            vec!["u".into()],
        )
        .unwrap();
        let est2 = split_estimate(&swapped, &spec, &cfg).unwrap();
        assert!((&est.theta1 - &est2.theta1).amax() < 1e-9);
    }

    #[test]
    fn clime_route_works_and_tiny_n_rejected() {
        let p = 3;
        let delta = DVector::zeros(p);
        let (data, spec, _) = synth_panel(40, p, 0.6, &delta, 0.1, 81);
        let cfg = SplitConfig {
            inverse: InverseMethod::Clime(ClimeConfig::fixed(0.05)),
            ..fixed_cfg(0.08)
        };
        let est = split_estimate(&data, &spec, &cfg).unwrap();
        assert_eq!(est.theta1.len(), spec.theta1.len());

        let tiny = data.time_slice(0, 10).unwrap();
        assert!(split_estimate(&tiny, &spec, &cfg).is_err());
    }
}
