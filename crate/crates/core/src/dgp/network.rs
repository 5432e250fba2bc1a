//! Multi-equation network processes: responses loading on an exogenous
//! unit-level signal (spillover form) or on the contemporaneous responses
//! of the other units (spatial form), with equation-specific endogenous
//! covariates and common loadings.

use super::{DgpConfig, DgpKind, SimDraw, SimTruth};
use crate::error::{Error, Result};
use crate::model::{build_network_transform, NetworkSpec, PanelData};
use crate::rng::{derive, stream, tag};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub(super) struct NetworkDraw {
    /// True (possibly normalized) coefficient network.
    pub h: DMatrix<f64>,
    /// Observed network: the visible part of `h`.
    pub w: DMatrix<f64>,
    pub hidden: Vec<(usize, usize)>,
}

/// Links are Bernoulli(0.5); a nonzero link is hidden from the observed
/// network with the misspecification probability. The spatial form
/// row-normalizes the true network (rows of zeros stay zero), which keeps
/// the simultaneous system stable for |rho| < 1.
fn draw_network<R: Rng>(rng: &mut R, p: usize, p_misspec: f64, normalize: bool) -> NetworkDraw {
    let mut h = DMatrix::zeros(p, p);
    let mut hidden = Vec::new();
    for j in 0..p {
        for k in 0..p {
            if j != k && rng.gen_bool(0.5) {
                h[(j, k)] = 1.0;
            }
        }
    }
    if normalize {
        for j in 0..p {
            let s: f64 = h.row(j).iter().sum();
            if s > 0.0 {
                for k in 0..p {
                    h[(j, k)] /= s;
                }
            }
        }
    }
    let mut w = h.clone();
    for j in 0..p {
        for k in 0..p {
            if j != k && h[(j, k)] != 0.0 && rng.gen_bool(p_misspec) {
                w[(j, k)] = 0.0;
                hidden.push((j, k));
            }
        }
    }
    NetworkDraw { h, w, hidden }
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Generate a network draw of the requested kind for replication `rep`.
pub fn gen_network(cfg: &DgpConfig, kind: DgpKind, rep: u64) -> Result<SimDraw> {
    let p = cfg.p;
    let m = cfg.m;
    let n = cfg.n;
    if p < 2 {
        return Err(Error::validation("network processes need p >= 2"));
    }
    if cfg.q % 2 != 0 || m != cfg.q / 2 {
        return Err(Error::validation(
            "network processes need q even and m = q / 2 for the covariate loading",
        ));
    }
    let spatial = matches!(kind, DgpKind::NetYy);
    let mut struct_rng = stream(derive(cfg.seed, rep), tag::STRUCTURE);
    let mut net = None;
    for _attempt in 0..100 {
        let cand = draw_network(&mut struct_rng, p, cfg.p_misspec, spatial);
        let has_visible = (0..p)
            .any(|j| (0..p).any(|k| j != k && cand.w[(j, k)] != 0.0));
        let stable = !spatial || cfg.rho.abs() * spectral_radius(&cand.h) < 1.0 - 1e-9;
        if has_visible && stable {
            net = Some(cand);
            break;
        }
    }
    let net = net.ok_or_else(|| {
        Error::numerical("no stable network with visible links after 100 draws")
    })?;

    // Per-equation instruments and endogenous covariates.
    let chol = {
        let sigma = DMatrix::from_fn(cfg.q, cfg.q, |i, j| {
            cfg.rho_z.powi((i as i32 - j as i32).abs())
        });
        sigma
            .cholesky()
            .map(|c| c.l().into_owned())
            .ok_or_else(|| Error::numerical("instrument correlation factorization failed"))?
    };
    let scale = (2.0 + 2.0 * cfg.rho_z.powi(m as i32)).sqrt().recip();
    let gamma = cfg.gamma_vector();
    if gamma.len() != m {
        return Err(Error::dimension(format!(
            "gamma has {} entries, m = {m}",
            gamma.len()
        )));
    }

    let mut z_all: Vec<DMatrix<f64>> = Vec::with_capacity(p);
    let mut x_cov: Vec<DMatrix<f64>> = Vec::with_capacity(p);
    let mut eps = DMatrix::zeros(n, p);
    for j in 0..p {
        let mut z_rng = stream(derive(cfg.seed, rep), tag::INSTRUMENTS + j as u64);
        let mut e_rng = stream(derive(cfg.seed, rep), tag::ERRORS + j as u64);
        let mut z = DMatrix::zeros(n, cfg.q);
        let mut x = DMatrix::zeros(n, m);
        for t in 0..n {
            let raw = DVector::from_fn(cfg.q, |_, _| {
                let v: f64 = StandardNormal.sample(&mut z_rng);
                v
            });
            let zt = &chol * raw;
            z.row_mut(t).copy_from(&zt.transpose());
            let u1: f64 = StandardNormal.sample(&mut e_rng);
            let u2: f64 = StandardNormal.sample(&mut e_rng);
            let sk = cfg.kappa.sqrt();
            let s1k = (1.0 - cfg.kappa).sqrt();
            eps[(t, j)] = sk * u1 + s1k * u2;
            for l in 0..m {
                let u3: f64 = StandardNormal.sample(&mut e_rng);
                x[(t, l)] = scale * (zt[l] + zt[l + m]) + sk * u1 + s1k * u3;
            }
        }
        z_all.push(z);
        x_cov.push(x);
    }

    // Unit-level network signal and responses.
    let mut signal = DMatrix::zeros(n, p); // columns: units
    let mut y = DMatrix::zeros(n, p);
    match kind {
        DgpKind::NetYx => {
            let mut d_rng = stream(derive(cfg.seed, rep), tag::COVARIATES);
            for t in 0..n {
                for j in 0..p {
                    let v: f64 = StandardNormal.sample(&mut d_rng);
                    signal[(t, j)] = v;
                }
            }
            for t in 0..n {
                for j in 0..p {
                    let hd: f64 = (0..p).map(|k| net.h[(j, k)] * signal[(t, k)]).sum();
                    let gx: f64 = (0..m).map(|l| gamma[l] * x_cov[j][(t, l)]).sum();
                    y[(t, j)] = cfg.rho * hd + gx + eps[(t, j)];
                }
            }
        }
        DgpKind::NetYy => {
            let system = DMatrix::identity(p, p) - &net.h * cfg.rho;
            let lu = system.lu();
            for t in 0..n {
                let c = DVector::from_fn(p, |j, _| {
                    let gx: f64 = (0..m).map(|l| gamma[l] * x_cov[j][(t, l)]).sum();
                    gx + eps[(t, j)]
                });
                let yt = lu
                    .solve(&c)
                    .ok_or_else(|| Error::numerical("simultaneous system solve failed"))?;
                y.row_mut(t).copy_from(&yt.transpose());
                signal.row_mut(t).copy_from(&yt.transpose());
            }
        }
        _ => unreachable!("single-equation kinds are handled elsewhere"),
    }

    // Assemble per-equation panel blocks: raw covariates are the network
    // signal followed by the equation's own covariates; instruments add
    // the exogenous signal in the spillover form.
    let mut ys = Vec::with_capacity(p);
    let mut xs = Vec::with_capacity(p);
    let mut zs = Vec::with_capacity(p);
    let mut labels = Vec::with_capacity(p);
    for j in 0..p {
        ys.push(y.column(j).into_owned());
        let mut x = DMatrix::zeros(n, p + m);
        x.view_mut((0, 0), (n, p)).copy_from(&signal);
        x.view_mut((0, p), (n, m)).copy_from(&x_cov[j]);
        xs.push(x);
        let z = if spatial {
            z_all[j].clone()
        } else {
            let mut z = DMatrix::zeros(n, p + cfg.q);
            z.view_mut((0, 0), (n, p)).copy_from(&signal);
            z.view_mut((0, p), (n, cfg.q)).copy_from(&z_all[j]);
            z
        };
        zs.push(z);
        labels.push(format!("unit{j}"));
    }
    let data = PanelData::new(ys, xs, zs, labels)?;
    let netspec = NetworkSpec::new(net.w.clone(), None, true)?;
    let spec = build_network_transform(&netspec, m, true, spatial)?;

    // Truth in the layout's coordinate order.
    let k_total = spec.k_total();
    let mut theta = DVector::zeros(k_total);
    let mut tested_positions = Vec::new();
    let mut tested_nonzero = Vec::new();
    let mut delta_positions = Vec::new();
    for (pos, &g) in spec.theta1.iter().enumerate() {
        let (j, k) = parse_delta_name(&spec.names[g])?;
        theta[g] = cfg.rho * (net.h[(j, k)] - net.w[(j, k)]);
        delta_positions.push(pos);
        if net.w[(j, k)] == 0.0 {
            tested_positions.push(pos);
            tested_nonzero.push(net.h[(j, k)] != 0.0);
        }
    }
    for &g in &spec.theta2 {
        let name = &spec.names[g];
        if name == "rho" {
            theta[g] = cfg.rho;
        } else if let Some(rest) = name.strip_prefix("gamma[") {
            let l: usize = rest
                .trim_end_matches(']')
                .parse()
                .map_err(|_| Error::validation(format!("bad coordinate name {name}")))?;
            theta[g] = gamma[l];
        }
    }
    let truth = SimTruth {
        theta,
        rho: cfg.rho,
        gamma: Some(gamma),
        tested_positions,
        tested_nonzero,
        delta_positions,
        rho_position: None,
    };
    Ok(SimDraw {
        data,
        spec,
        network: Some(netspec),
        truth,
    })
}

fn parse_delta_name(name: &str) -> Result<(usize, usize)> {
    let rest = name
        .strip_prefix("delta[")
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::validation(format!("not a deviation coordinate: {name}")))?;
    let mut it = rest.split(',');
    let j = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::validation(format!("bad coordinate name {name}")))?;
    let k = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::validation(format!("bad coordinate name {name}")))?;
    Ok((j, k))
}
