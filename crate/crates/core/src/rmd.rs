//! First-stage regularized minimum-distance estimation: minimize the l1
//! norm of the parameters subject to a sup-norm bound on the empirical
//! moments, via the split `theta = theta+ - theta-` linear program.

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpOptions, LpProblem, LpStatus};
use crate::model::{evaluate_scores, LinearMomentSystem, PanelData, TransformSpec};
use crate::rng::{self, tag};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMethod {
    /// Use `RmdConfig::lambda` as given.
    Fixed,
    /// `lambda = c * max_col_std * sqrt(log q / n)`.
    RateRule,
    /// Multiplier-bootstrap quantile of the sup-norm of the mean score.
    ScoreBootstrap,
}

#[derive(Debug, Clone)]
pub struct RmdConfig {
    pub lambda: f64,
    pub lambda_method: LambdaMethod,
    /// Rate-rule constant.
    pub rate_constant: f64,
    /// Bootstrap quantile level (the constraint holds with probability
    /// 1 - alpha under the multiplier approximation).
    pub alpha: f64,
    pub boot_draws: usize,
    /// Escalation factor applied when the program is infeasible.
    pub ladder_factor: f64,
    /// Refit residuals once and re-select lambda before the final solve.
    pub pilot_refit: bool,
    pub seed: u64,
}

impl Default for RmdConfig {
    fn default() -> Self {
        RmdConfig {
            lambda: 0.0,
            lambda_method: LambdaMethod::RateRule,
            rate_constant: 1.1,
            alpha: 0.05,
            boot_draws: 2000,
            ladder_factor: 1.5,
            pilot_refit: false,
            seed: 0,
        }
    }
}

impl RmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::validation("lambda must be finite and >= 0"));
        }
        if self.ladder_factor <= 1.0 {
            return Err(Error::validation("ladder_factor must exceed 1"));
        }
        if !(0.0..1.0).contains(&self.alpha) || self.alpha == 0.0 {
            return Err(Error::validation("alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RmdSolution {
    pub theta: DVector<f64>,
    /// The constraint level actually used (after any escalation).
    pub lambda_used: f64,
    pub escalations: usize,
    pub l1_norm: f64,
    /// Sup-norm of the moments at the solution.
    pub constraint_norm: f64,
}

/// Solve the l1-minimization under `|G theta + g0|_inf <= lambda`.
///
/// Infeasibility cannot occur once lambda reaches `|g0|_inf` (zero is
/// then feasible), but the level is escalated by `ladder_factor` up to
/// ten times as a guard, and any escalation is recorded in the result.
pub fn solve_rmd(moments: &LinearMomentSystem, cfg: &RmdConfig) -> Result<RmdSolution> {
    cfg.validate()?;
    let q = moments.q_total;
    let k = moments.k_total;
    let mut lambda = cfg.lambda;
    let mut escalations = 0usize;
    loop {
        // Variables (theta+, theta-): rows G(theta+ - theta-) <= lambda - g0
        // and -G(theta+ - theta-) <= lambda + g0.
        let mut a = DMatrix::zeros(2 * q, 2 * k);
        for r in 0..q {
            for c in 0..k {
                let v = moments.g_matrix[(r, c)];
                a[(r, c)] = v;
                a[(r, c + k)] = -v;
                a[(r + q, c)] = -v;
                a[(r + q, c + k)] = v;
            }
        }
        let b = DVector::from_fn(2 * q, |i, _| {
            if i < q {
                lambda - moments.g0[i]
            } else {
                lambda + moments.g0[i - q]
            }
        });
        let c = DVector::from_element(2 * k, 1.0);
        let problem = LpProblem::new(c, a, b)?;
        let sol = solve_lp(&problem, LpOptions::default())?;
        match sol.status {
            LpStatus::Optimal => {
                let theta = DVector::from_fn(k, |j, _| sol.x[j] - sol.x[j + k]);
                let constraint_norm = moments.g_at(&theta).amax();
                if constraint_norm > lambda + 1e-8 {
                    return Err(Error::numerical(format!(
                        "constraint violated after solve: {constraint_norm} > {lambda}"
                    )));
                }
                return Ok(RmdSolution {
                    l1_norm: theta.iter().map(|v| v.abs()).sum(),
                    theta,
                    lambda_used: lambda,
                    escalations,
                    constraint_norm,
                });
            }
            LpStatus::Infeasible => {
                if escalations >= 10 {
                    return Err(Error::numerical(
                        "estimation program infeasible after ten escalations",
                    ));
                }
                escalations += 1;
                lambda = if lambda > 0.0 {
                    lambda * cfg.ladder_factor
                } else {
                    moments.g0.amax() * 1e-6
                };
            }
            LpStatus::Unbounded => {
                return Err(Error::numerical("l1 program reported unbounded"));
            }
        }
    }
}

/// Select the constraint level from pilot residuals.
///
/// Pilot residuals use theta = 0 (the raw response); with `pilot_refit`
/// set, a first pass of the estimator refines them once.
pub fn select_lambda(
    moments: &LinearMomentSystem,
    data: &PanelData,
    spec: &TransformSpec,
    cfg: &RmdConfig,
) -> Result<f64> {
    if data.n < 10 {
        return Err(Error::validation("lambda selection needs n >= 10"));
    }
    if moments.q_total < 1 {
        return Err(Error::validation("lambda selection needs q >= 1"));
    }
    match cfg.lambda_method {
        LambdaMethod::Fixed => Ok(cfg.lambda),
        _ => {
            let zero = DVector::zeros(spec.k_total());
            let scores = evaluate_scores(data, spec, &zero)?;
            let lambda = lambda_from_scores(&scores, cfg);
            if cfg.pilot_refit {
                let mut c = cfg.clone();
                c.lambda = lambda;
                c.lambda_method = LambdaMethod::Fixed;
                c.pilot_refit = false;
                let pilot = solve_rmd(moments, &c)?;
                let scores = evaluate_scores(data, spec, &pilot.theta)?;
                Ok(lambda_from_scores(&scores, cfg))
            } else {
                Ok(lambda)
            }
        }
    }
}

pub(crate) fn lambda_from_scores(scores: &DMatrix<f64>, cfg: &RmdConfig) -> f64 {
    let n = scores.nrows();
    let q = scores.ncols();
    match cfg.lambda_method {
        LambdaMethod::Fixed => cfg.lambda,
        LambdaMethod::RateRule => {
            let max_sd = max_column_std(scores);
            cfg.rate_constant * max_sd * ((q as f64).ln() / n as f64).sqrt()
        }
        LambdaMethod::ScoreBootstrap => {
            let draws = cfg.boot_draws.max(100);
            let mut stats = Vec::with_capacity(draws);
            for b in 0..draws {
                let mut rng = rng::stream(cfg.seed, tag::LAMBDA_BOOT + b as u64);
                let mut means = vec![0.0f64; q];
                for t in 0..n {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    for (c, m) in means.iter_mut().enumerate() {
                        *m += e * scores[(t, c)];
                    }
                }
                let sup = means
                    .iter()
                    .map(|m| (m / n as f64).abs())
                    .fold(0.0f64, f64::max);
                stats.push(sup);
            }
            stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = ((1.0 - cfg.alpha) * draws as f64).ceil() as usize;
            stats[idx.clamp(1, draws) - 1]
        }
    }
}

fn max_column_std(scores: &DMatrix<f64>) -> f64 {
    let n = scores.nrows() as f64;
    let mut max_sd = 0.0f64;
    for c in 0..scores.ncols() {
        let col = scores.column(c);
        let mean: f64 = col.iter().sum::<f64>() / n;
        let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        max_sd = max_sd.max(var.sqrt());
    }
    max_sd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::single_equation_transform;
    use nalgebra::dvector;
    use rand::Rng;

    fn system(g: DMatrix<f64>, g0: DVector<f64>) -> LinearMomentSystem {
        let q = g.nrows();
        let k = g.ncols();
        LinearMomentSystem {
            g_matrix: g,
            g0,
            q_total: q,
            k_total: k,
            eq_rows: vec![(0, q)],
            warnings: vec![],
        }
    }

    fn fixed(lambda: f64) -> RmdConfig {
        RmdConfig {
            lambda,
            lambda_method: LambdaMethod::Fixed,
            ..RmdConfig::default()
        }
    }

    #[test]
    fn zero_feasible_gives_zero() {
        let sys = system(DMatrix::identity(3, 3), dvector![0.1, -0.2, 0.05]);
        let sol = solve_rmd(&sys, &fixed(0.25)).unwrap();
        assert_eq!(sol.theta.amax(), 0.0);
        assert_eq!(sol.escalations, 0);
    }

    #[test]
    fn one_dimensional_closed_form() {
        // G = [-1], g0 = [1]: feasible set is theta in [0.9, 1.1] at
        // lambda = 0.1; the l1 minimizer is the left endpoint.
        let sys = system(DMatrix::from_element(1, 1, -1.0), dvector![1.0]);
        let sol = solve_rmd(&sys, &fixed(0.1)).unwrap();
        assert!((sol.theta[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn random_system_l1_optimality() {
        let mut rng = crate::rng::stream(101, 0);
        let q = 6;
        let k = 10;
        let g = DMatrix::from_fn(q, k, |_, _| rng.gen_range(-1.0..1.0));
        let g0 = DVector::from_fn(q, |_, _| rng.gen_range(-0.5..0.5));
        let sys = system(g.clone(), g0.clone());
        let lambda = 0.3;
        let sol = solve_rmd(&sys, &fixed(lambda)).unwrap();
        assert!(sol.constraint_norm <= lambda + 1e-8);
        // no random feasible point may beat the certified optimum
        let mut rng2 = crate::rng::stream(102, 0);
        for _ in 0..1000 {
            let cand = DVector::from_fn(k, |_, _| rng2.gen_range(-1.0..1.0));
            if (&g * &cand + &g0).amax() <= lambda {
                let l1: f64 = cand.iter().map(|v| v.abs()).sum();
                assert!(sol.l1_norm <= l1 + 1e-8);
            }
        }
    }

    #[test]
    fn l1_norm_monotone_in_lambda() {
        let mut rng = crate::rng::stream(103, 0);
        let g = DMatrix::from_fn(5, 7, |_, _| rng.gen_range(-1.0..1.0));
        let g0 = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
        let sys = system(g, g0);
        let mut last = f64::INFINITY;
        for lambda in [0.05, 0.1, 0.2, 0.4, 0.8, 1.6] {
            let sol = solve_rmd(&sys, &fixed(lambda)).unwrap();
            assert!(sol.l1_norm <= last + 1e-9);
            last = sol.l1_norm;
        }
    }

    #[test]
    fn restricted_set_membership() {
        // A zero-residual truth is feasible at any lambda, so the
        // solution's l1 norm can never exceed the truth's.
        let mut rng = crate::rng::stream(104, 0);
        for _ in 0..10 {
            let q = 8;
            let k = 6;
            let g = DMatrix::from_fn(q, k, |_, _| rng.gen_range(-1.0..1.0));
            let mut truth = DVector::zeros(k);
            truth[0] = 1.0;
            truth[3] = -0.5;
            let g0 = -(&g * &truth);
            let sys = system(g, g0);
            let sol = solve_rmd(&sys, &fixed(0.05)).unwrap();
            assert!(sol.l1_norm <= 1.5 + 1e-8);
        }
    }

    #[test]
    fn rate_rule_matches_plugin_arithmetic() {
        let n = 400;
        let q = 10;
        let mut rng = crate::rng::stream(105, 0);
        let scores = DMatrix::from_fn(n, q, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let cfg = RmdConfig::default();
        let lambda = lambda_from_scores(&scores, &cfg);
        let max_sd = max_column_std(&scores);
        let expect = 1.1 * max_sd * ((10.0f64).ln() / 400.0).sqrt();
        assert!((lambda - expect).abs() < 1e-12);
        assert!((lambda / max_sd - 0.0835).abs() < 0.002);
    }

    #[test]
    fn bootstrap_lambda_matches_simulation_quantile() {
        // On iid Gaussian scores the multiplier statistic has the same
        // law as the max over columns of |scaled Gaussian means|.
        let n = 200;
        let q = 5;
        let mut rng = crate::rng::stream(106, 0);
        let scores = DMatrix::from_fn(n, q, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let cfg = RmdConfig {
            lambda_method: LambdaMethod::ScoreBootstrap,
            boot_draws: 2000,
            ..RmdConfig::default()
        };
        let lambda = lambda_from_scores(&scores, &cfg);

        let mut sds = vec![0.0f64; q];
        for c in 0..q {
            let col = scores.column(c);
            let m: f64 = col.iter().sum::<f64>() / n as f64;
            sds[c] = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        }
        let mut mc = crate::rng::stream(999, 0);
        let mut stats: Vec<f64> = (0..4000)
            .map(|_| {
                (0..q)
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut mc);
                        (z * sds[c] / (n as f64).sqrt()).abs()
                    })
                    .fold(0.0f64, f64::max)
            })
            .collect();
        stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mc_q = stats[(0.95 * 4000.0) as usize - 1];
        assert!(
            (lambda - mc_q).abs() / mc_q < 0.10,
            "bootstrap {lambda} vs MC {mc_q}"
        );
    }

    #[test]
    fn lambda_shrinks_with_n() {
        let mut last = f64::INFINITY;
        for n in [100usize, 400, 1600] {
            let mut rng = crate::rng::stream(107, 7);
            let scores = DMatrix::from_fn(n, 6, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            });
            let lambda = lambda_from_scores(&scores, &RmdConfig::default());
            assert!(lambda < last);
            last = lambda;
        }
    }

    #[test]
    fn select_lambda_rejects_tiny_samples() {
        let y = vec![dvector![1.0, 2.0]];
        let x = vec![DMatrix::from_element(2, 2, 1.0)];
        let z = vec![DMatrix::from_element(2, 2, 1.0)];
        let data = PanelData::new(y, x, z, vec!["u".into()]).unwrap();
        let spec = single_equation_transform(&dvector![1.0, 1.0], 0).unwrap();
        let sys = crate::model::assemble_linear_moments(&data, &spec).unwrap();
        assert!(select_lambda(&sys, &data, &spec, &RmdConfig::default()).is_err());
    }
}
