use super::{PanelData, TransformSpec};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Stacked linear moment system `g(theta) = G theta + g(0)`, with
/// `G` block-structured by equation: the rows of equation j only load on
/// the coordinates appearing in equation j's index map.
#[derive(Debug, Clone)]
pub struct LinearMomentSystem {
    /// q x K gradient, entry block -E_n(z_{j,t} xt_{j,t}').
    pub g_matrix: DMatrix<f64>,
    /// q-vector E_n(z_{j,t} y_{j,t}), stacked.
    pub g0: DVector<f64>,
    pub q_total: usize,
    pub k_total: usize,
    /// Row range of each equation's instrument block.
    pub eq_rows: Vec<(usize, usize)>,
    /// Non-fatal diagnostics collected during assembly.
    pub warnings: Vec<String>,
}

impl LinearMomentSystem {
    pub fn g_at(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.g_matrix * theta + &self.g0
    }

    /// Columns of the gradient restricted to an index set.
    pub fn gradient_columns(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.q_total, idx.len(), |r, c| self.g_matrix[(r, idx[c])])
    }
}

/// Assemble the stacked moment system. Deterministic given inputs; all
/// averages use 1/n.
pub fn assemble_linear_moments(
    data: &PanelData,
    spec: &TransformSpec,
) -> Result<LinearMomentSystem> {
    if spec.n_equations() != data.p {
        return Err(Error::dimension(format!(
            "transform has {} equations, panel has {}",
            spec.n_equations(),
            data.p
        )));
    }
    spec.validate()?;
    let k_total = spec.k_total();
    let q_total = data.q_total();
    let n = data.n as f64;
    let mut g = DMatrix::zeros(q_total, k_total);
    let mut g0 = DVector::zeros(q_total);
    let mut eq_rows = Vec::with_capacity(data.p);
    let mut warnings = Vec::new();
    let mut row = 0usize;
    for j in 0..data.p {
        let b = &spec.blocks[j];
        if data.x[j].ncols() != b.nrows() {
            return Err(Error::dimension(format!(
                "equation {j}: x has {} columns, B expects {}",
                data.x[j].ncols(),
                b.nrows()
            )));
        }
        let q_j = data.q_j(j);
        let k_j = b.ncols();
        if q_j < k_j {
            return Err(Error::dimension(format!(
                "equation {j}: order condition fails, q_j = {q_j} < K_j = {k_j}"
            )));
        }
        for c in 0..q_j {
            let norm2: f64 = data.z[j].column(c).iter().map(|v| v * v).sum();
            if norm2 == 0.0 {
                warnings.push(format!("equation {j}: instrument column {c} is identically zero"));
            }
        }
        let xt = &data.x[j] * b; // n x K_j transformed covariates
        let block = -(data.z[j].transpose() * &xt) / n; // q_j x K_j
        for l in 0..k_j {
            let gcol = spec.global_index[j][l];
            for r in 0..q_j {
                g[(row + r, gcol)] += block[(r, l)];
            }
        }
        let g0_block = (data.z[j].transpose() * &data.y[j]) / n;
        g0.rows_mut(row, q_j).copy_from(&g0_block);
        eq_rows.push((row, row + q_j));
        row += q_j;
    }
    Ok(LinearMomentSystem {
        g_matrix: g,
        g0,
        q_total,
        k_total,
        eq_rows,
        warnings,
    })
}

/// Per-observation scores: row t holds the stacked `z_{j,t} e_{j,t}(theta)`.
pub fn evaluate_scores(
    data: &PanelData,
    spec: &TransformSpec,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if theta.len() != spec.k_total() {
        return Err(Error::dimension(format!(
            "theta has {} coordinates, layout expects {}",
            theta.len(),
            spec.k_total()
        )));
    }
    if spec.n_equations() != data.p {
        return Err(Error::dimension("transform/panel equation count mismatch"));
    }
    let q_total = data.q_total();
    let mut scores = DMatrix::zeros(data.n, q_total);
    let mut col = 0usize;
    for j in 0..data.p {
        let beta = spec.local_coefficients(theta, j);
        let xt = &data.x[j] * &spec.blocks[j];
        let resid = &data.y[j] - xt * beta; // n-vector
        let q_j = data.q_j(j);
        for c in 0..q_j {
            for t in 0..data.n {
                scores[(t, col + c)] = data.z[j][(t, c)] * resid[t];
            }
        }
        col += q_j;
    }
    Ok(scores)
}

/// A weighted cross-score moment `E_n[a_t g_{il,t} g_{jm,t}]`. The weight
/// series has one entry per observation.
#[derive(Debug, Clone)]
pub struct QuadPair {
    pub eq_i: usize,
    pub inst_l: usize,
    pub eq_j: usize,
    pub inst_m: usize,
    pub weights: Vec<f64>,
}

impl QuadPair {
    pub fn constant(eq_i: usize, inst_l: usize, eq_j: usize, inst_m: usize, w: f64, n: usize) -> Self {
        QuadPair {
            eq_i,
            inst_l,
            eq_j,
            inst_m,
            weights: vec![w; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticMomentSet {
    pub pairs: Vec<QuadPair>,
    pub values: DVector<f64>,
}

/// Empirical averages of the weighted score products at `theta`.
pub fn evaluate_quadratic_moments(
    data: &PanelData,
    spec: &TransformSpec,
    theta: &DVector<f64>,
    pairs: Vec<QuadPair>,
) -> Result<QuadraticMomentSet> {
    let scores = evaluate_scores(data, spec, theta)?;
    let offsets: Vec<usize> = {
        let mut acc = 0;
        (0..data.p)
            .map(|j| {
                let o = acc;
                acc += data.q_j(j);
                o
            })
            .collect()
    };
    let mut values = DVector::zeros(pairs.len());
    for (pi, pair) in pairs.iter().enumerate() {
        if pair.eq_i == pair.eq_j && pair.inst_l == pair.inst_m {
            return Err(Error::validation(format!(
                "pair {pi}: needs i != j or l != m"
            )));
        }
        if pair.eq_i >= data.p || pair.eq_j >= data.p {
            return Err(Error::dimension(format!("pair {pi}: equation index out of range")));
        }
        if pair.inst_l >= data.q_j(pair.eq_i) || pair.inst_m >= data.q_j(pair.eq_j) {
            return Err(Error::dimension(format!("pair {pi}: instrument index out of range")));
        }
        if pair.weights.len() != data.n {
            return Err(Error::dimension(format!(
                "pair {pi}: weight series has {} entries, n = {}",
                pair.weights.len(),
                data.n
            )));
        }
        let ci = offsets[pair.eq_i] + pair.inst_l;
        let cj = offsets[pair.eq_j] + pair.inst_m;
        let mut acc = 0.0;
        for t in 0..data.n {
            acc += pair.weights[t] * scores[(t, ci)] * scores[(t, cj)];
        }
        values[pi] = acc / data.n as f64;
    }
    Ok(QuadraticMomentSet { pairs, values })
}
