use super::NetworkSpec;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Per-equation transform matrices mapping the stacked structural
/// parameter vector into regression coefficients, together with the
/// coordinate layout.
///
/// Equation j regresses on `x_j * B_j`, whose local coefficient `l` is
/// the global coordinate `global_index[j][l]`. Coordinates shared across
/// equations (a common network effect or common covariate loadings)
/// simply appear in several equations' index maps.
#[derive(Debug, Clone)]
pub struct TransformSpec {
    /// B_j, shape K'_j x K_j.
    pub blocks: Vec<DMatrix<f64>>,
    /// Local coefficient -> global coordinate, per equation.
    pub global_index: Vec<Vec<usize>>,
    /// Global coordinate names.
    pub names: Vec<String>,
    /// Parameters of interest (indices into the global vector).
    pub theta1: Vec<usize>,
    /// Nuisance parameters.
    pub theta2: Vec<usize>,
    /// Marks coordinates whose covariate columns are endogenous and
    /// therefore need instruments. Informational.
    pub endogenous: Vec<bool>,
}

impl TransformSpec {
    pub fn k_total(&self) -> usize {
        self.names.len()
    }

    pub fn n_equations(&self) -> usize {
        self.blocks.len()
    }

    /// Checks that theta1 and theta2 form a disjoint cover of the
    /// coordinates and that every equation's index map is in range.
    pub fn validate(&self) -> Result<()> {
        let k = self.k_total();
        let mut seen = vec![0u8; k];
        for &i in self.theta1.iter().chain(self.theta2.iter()) {
            if i >= k {
                return Err(Error::dimension(format!("layout index {i} out of range")));
            }
            seen[i] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::validation(
                "theta1/theta2 must partition the coordinates exactly",
            ));
        }
        if self.endogenous.len() != k {
            return Err(Error::dimension("endogenous flags length mismatch"));
        }
        for (j, (b, idx)) in self.blocks.iter().zip(&self.global_index).enumerate() {
            if b.ncols() != idx.len() {
                return Err(Error::dimension(format!(
                    "equation {j}: B has {} columns but the index map has {}",
                    b.ncols(),
                    idx.len()
                )));
            }
            if idx.iter().any(|&g| g >= k) {
                return Err(Error::dimension(format!(
                    "equation {j}: index map points outside the coordinate space"
                )));
            }
        }
        Ok(())
    }

    /// Local coefficient vector beta_j from the global theta.
    pub fn local_coefficients(&self, theta: &DVector<f64>, j: usize) -> DVector<f64> {
        DVector::from_fn(self.global_index[j].len(), |l, _| {
            theta[self.global_index[j][l]]
        })
    }

    /// Replace the interest/nuisance partition.
    pub fn with_interest_set(mut self, theta1: Vec<usize>) -> Result<Self> {
        let k = self.k_total();
        let mut mark = vec![false; k];
        for &i in &theta1 {
            if i >= k {
                return Err(Error::dimension(format!("interest index {i} out of range")));
            }
            if mark[i] {
                return Err(Error::validation("duplicate index in interest set"));
            }
            mark[i] = true;
        }
        self.theta1 = theta1;
        self.theta2 = (0..k).filter(|&i| !mark[i]).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn name_of(&self, idx: usize) -> &str {
        &self.names[idx]
    }
}

/// Spillover model: every equation shares the covariate vector and the
/// network effect. Equation j's transform is `(w_j, I)` with the anchor
/// column of the identity removed; coordinate 0 is the common effect and
/// the rest are the per-equation deviations.
pub fn build_spillover_transform(net: &NetworkSpec, p: usize) -> Result<TransformSpec> {
    if p < 2 {
        return Err(Error::dimension("spillover transform needs p >= 2"));
    }
    if net.p() != p {
        return Err(Error::dimension(format!(
            "adjacency is {}x{} but p = {p}",
            net.p(),
            net.p()
        )));
    }
    let (_, anchor_col) = net.anchor;
    let mut names = vec!["rho".to_string()];
    let mut blocks = Vec::with_capacity(p);
    let mut global_index = Vec::with_capacity(p);
    for j in 0..p {
        let mut idx = vec![0usize];
        let keep: Vec<usize> = (0..p).filter(|&k| k != anchor_col).collect();
        let mut b = DMatrix::zeros(p, 1 + keep.len());
        for r in 0..p {
            b[(r, 0)] = net.w[(j, r)];
        }
        for (c, &k) in keep.iter().enumerate() {
            b[(k, c + 1)] = 1.0;
            idx.push(names.len());
            names.push(format!("delta[{},{}]", j, k));
        }
        blocks.push(b);
        global_index.push(idx);
    }
    let k = names.len();
    let spec = TransformSpec {
        blocks,
        global_index,
        names,
        theta1: (0..k).collect(),
        theta2: vec![],
        endogenous: vec![false; k],
    };
    spec.validate()?;
    Ok(spec)
}

/// One-equation version of the spillover transform: `B = (w, I)` with the
/// anchor column removed. Used by the single-response model where the
/// "network" is a weight vector over covariates.
pub fn single_equation_transform(w: &DVector<f64>, anchor_col: usize) -> Result<TransformSpec> {
    let p = w.len();
    if p < 2 {
        return Err(Error::dimension("weight vector needs at least 2 entries"));
    }
    if anchor_col >= p || w[anchor_col] == 0.0 {
        return Err(Error::validation(format!(
            "anchor column {anchor_col} must index a nonzero weight"
        )));
    }
    let mut names = vec!["rho".to_string()];
    let mut idx = vec![0usize];
    let keep: Vec<usize> = (0..p).filter(|&k| k != anchor_col).collect();
    let mut b = DMatrix::zeros(p, 1 + keep.len());
    for r in 0..p {
        b[(r, 0)] = w[r];
    }
    for (c, &k) in keep.iter().enumerate() {
        b[(k, c + 1)] = 1.0;
        idx.push(names.len());
        names.push(format!("delta[{}]", k));
    }
    let k_total = names.len();
    let spec = TransformSpec {
        blocks: vec![b],
        global_index: vec![idx],
        names,
        theta1: (0..k_total).collect(),
        theta2: vec![],
        endogenous: vec![false; k_total],
    };
    spec.validate()?;
    Ok(spec)
}

/// Spatial model: covariates are the contemporaneous responses, so every
/// deviation column is endogenous. The global layout stacks the
/// deviations first and puts the common effect last. `exclude_diagonal`
/// additionally removes the own-response columns (the convention when the
/// adjacency has a zero diagonal); the anchor column is always removed.
pub fn build_spatial_transform(net: &NetworkSpec, exclude_diagonal: bool) -> Result<TransformSpec> {
    let p = net.p();
    let anchor = net.anchor;
    let mut names = Vec::new();
    let mut coord_of = vec![vec![usize::MAX; p]; p];
    for j in 0..p {
        for k in 0..p {
            if (j, k) == anchor || (exclude_diagonal && j == k) {
                continue;
            }
            coord_of[j][k] = names.len();
            names.push(format!("delta[{},{}]", j, k));
        }
    }
    let rho_idx = names.len();
    names.push("rho".to_string());

    let mut blocks = Vec::with_capacity(p);
    let mut global_index = Vec::with_capacity(p);
    for j in 0..p {
        let deltas: Vec<usize> = (0..p).filter(|&k| coord_of[j][k] != usize::MAX).collect();
        let mut b = DMatrix::zeros(p, deltas.len() + 1);
        let mut idx = Vec::with_capacity(deltas.len() + 1);
        for (c, &k) in deltas.iter().enumerate() {
            b[(k, c)] = 1.0;
            idx.push(coord_of[j][k]);
        }
        for r in 0..p {
            b[(r, deltas.len())] = net.w[(j, r)];
        }
        idx.push(rho_idx);
        blocks.push(b);
        global_index.push(idx);
    }
    let k = names.len();
    let spec = TransformSpec {
        blocks,
        global_index,
        names,
        theta1: (0..k).collect(),
        theta2: vec![],
        endogenous: vec![true; k],
    };
    spec.validate()?;
    Ok(spec)
}

/// Lagged model: covariates are the once-lagged responses; each equation
/// has its own effect coefficient and its own-lag deviation is excluded,
/// which requires a nonzero diagonal weight.
pub fn build_lagged_transform(net: &NetworkSpec) -> Result<TransformSpec> {
    let p = net.p();
    for j in 0..p {
        if net.w[(j, j)] == 0.0 {
            return Err(Error::validation(format!(
                "lagged transform needs W[{j},{j}] != 0 (own lag anchors equation {j})"
            )));
        }
    }
    let mut names = Vec::new();
    let mut blocks = Vec::with_capacity(p);
    let mut global_index = Vec::with_capacity(p);
    for j in 0..p {
        let mut idx = vec![names.len()];
        names.push(format!("rho[{}]", j));
        let keep: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let mut b = DMatrix::zeros(p, 1 + keep.len());
        for r in 0..p {
            b[(r, 0)] = net.w[(j, r)];
        }
        for (c, &k) in keep.iter().enumerate() {
            b[(k, c + 1)] = 1.0;
            idx.push(names.len());
            names.push(format!("delta[{},{}]", j, k));
        }
        blocks.push(b);
        global_index.push(idx);
    }
    let k = names.len();
    let spec = TransformSpec {
        blocks,
        global_index,
        names,
        theta1: (0..k).collect(),
        theta2: vec![],
        endogenous: vec![false; k],
    };
    spec.validate()?;
    Ok(spec)
}

/// Network model with equation-specific exogenous covariates and common
/// parameters: equation j regresses on `(d_t, x_{j,t})` where the first
/// `p` raw columns carry the network part. The deviations form the
/// interest block; the shared effect and the common covariate loadings
/// are the nuisance block, replicated into every equation's index map.
pub fn build_network_transform(
    net: &NetworkSpec,
    n_covariates: usize,
    exclude_diagonal: bool,
    covariates_endogenous: bool,
) -> Result<TransformSpec> {
    let p = net.p();
    let anchor = net.anchor;
    let mut names = Vec::new();
    let mut coord_of = vec![vec![usize::MAX; p]; p];
    for j in 0..p {
        for k in 0..p {
            if (j, k) == anchor || (exclude_diagonal && j == k) {
                continue;
            }
            coord_of[j][k] = names.len();
            names.push(format!("delta[{},{}]", j, k));
        }
    }
    let n_delta = names.len();
    let rho_idx = names.len();
    names.push("rho".to_string());
    let gamma_base = names.len();
    for l in 0..n_covariates {
        names.push(format!("gamma[{}]", l));
    }

    let mut blocks = Vec::with_capacity(p);
    let mut global_index = Vec::with_capacity(p);
    for j in 0..p {
        let deltas: Vec<usize> = (0..p).filter(|&k| coord_of[j][k] != usize::MAX).collect();
        let k_j = deltas.len() + 1 + n_covariates;
        let mut b = DMatrix::zeros(p + n_covariates, k_j);
        let mut idx = Vec::with_capacity(k_j);
        for (c, &k) in deltas.iter().enumerate() {
            b[(k, c)] = 1.0;
            idx.push(coord_of[j][k]);
        }
        for r in 0..p {
            b[(r, deltas.len())] = net.w[(j, r)];
        }
        idx.push(rho_idx);
        for l in 0..n_covariates {
            b[(p + l, deltas.len() + 1 + l)] = 1.0;
            idx.push(gamma_base + l);
        }
        blocks.push(b);
        global_index.push(idx);
    }
    let k = names.len();
    let mut endogenous = vec![covariates_endogenous; k];
    for flag in endogenous.iter_mut().take(n_delta + 1) {
        // network columns: endogenous only in the spatial (own-response) case
        *flag = covariates_endogenous;
    }
    let spec = TransformSpec {
        blocks,
        global_index,
        names,
        theta1: (0..n_delta).collect(),
        theta2: (n_delta..k).collect(),
        endogenous,
    };
    spec.validate()?;
    Ok(spec)
}
