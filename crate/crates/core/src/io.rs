//! File formats: long-format panel CSV, headerless network CSV, the
//! layout description, the estimate bundle and inference reports.
//!
//! All floating-point output is written with 17 significant digits so
//! identical runs produce byte-identical files.

use crate::debias::BlockMatrix;
use crate::error::{Error, Result};
use crate::inference::{CriticalValueMethod, InferenceReport};
use crate::model::{
    build_lagged_transform, build_network_transform, build_spatial_transform,
    build_spillover_transform, single_equation_transform, NetworkSpec, PanelData, TransformSpec,
};
use crate::pipeline::{DrgmmFit, Edge};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt::Write as _;
use std::path::Path;

/// 17 significant digits, scientific; round-trips every f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "\"nan\"".to_string()
    } else if v > 0.0 {
        "\"inf\"".to_string()
    } else {
        "\"-inf\"".to_string()
    }
}

/// Minimal JSON document builder with deterministic float formatting.
#[derive(Debug, Clone)]
pub enum Jv {
    Null,
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    Arr(Vec<Jv>),
    Obj(Vec<(String, Jv)>),
}

impl Jv {
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out);
        out
    }

    fn write(&self, out: &mut String) {
        match self {
            Jv::Null => out.push_str("null"),
            Jv::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Jv::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Jv::Num(v) => out.push_str(&fmt_f64(*v)),
            Jv::Str(s) => {
                let _ = write!(out, "{}", Value::String(s.clone()));
            }
            Jv::Arr(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write(out);
                }
                out.push(']');
            }
            Jv::Obj(fields) => {
                out.push('{');
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{}:", Value::String(k.clone()));
                    v.write(out);
                }
                out.push('}');
            }
        }
    }

    pub fn vector(v: &DVector<f64>) -> Jv {
        Jv::Arr(v.iter().map(|&x| Jv::Num(x)).collect())
    }

    pub fn matrix(m: &DMatrix<f64>) -> Jv {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(Jv::Num(m[(r, c)]));
            }
        }
        Jv::Obj(vec![
            ("rows".into(), Jv::Int(m.nrows() as i64)),
            ("cols".into(), Jv::Int(m.ncols() as i64)),
            ("data".into(), Jv::Arr(data)),
        ])
    }

    pub fn block_matrix(b: &BlockMatrix) -> Jv {
        Jv::Obj(vec![(
            "blocks".into(),
            Jv::Arr(b.blocks.iter().map(Jv::matrix).collect()),
        )])
    }
}

// ---- JSON parsing helpers (reading back what we emit) ----

pub fn parse_vector(v: &Value) -> Result<DVector<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::validation("expected a numeric array"))?;
    let mut out = DVector::zeros(arr.len());
    for (i, item) in arr.iter().enumerate() {
        out[i] = item
            .as_f64()
            .ok_or_else(|| Error::validation("expected a number"))?;
    }
    Ok(out)
}

pub fn parse_matrix(v: &Value) -> Result<DMatrix<f64>> {
    let rows = v["rows"].as_u64().ok_or_else(|| Error::validation("matrix needs rows"))? as usize;
    let cols = v["cols"].as_u64().ok_or_else(|| Error::validation("matrix needs cols"))? as usize;
    let data = v["data"]
        .as_array()
        .ok_or_else(|| Error::validation("matrix needs data"))?;
    if data.len() != rows * cols {
        return Err(Error::dimension("matrix data length mismatch"));
    }
    let mut out = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out[(r, c)] = data[r * cols + c]
                .as_f64()
                .ok_or_else(|| Error::validation("matrix entries must be numbers"))?;
        }
    }
    Ok(out)
}

pub fn parse_block_matrix(v: &Value) -> Result<BlockMatrix> {
    let blocks = v["blocks"]
        .as_array()
        .ok_or_else(|| Error::validation("block matrix needs blocks"))?;
    let mats = blocks.iter().map(parse_matrix).collect::<Result<Vec<_>>>()?;
    BlockMatrix::new(mats)
}

// ---- layout description ----

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One response, weighted covariates: `B = (w, I_{-anchor})`.
    SingleEquation,
    /// Multi-equation shared-covariate spillover.
    Spillover,
    /// Contemporaneous-response spatial system.
    Spatial,
    /// Lagged-response system, one effect per equation.
    Lagged,
    /// Network with an exogenous unit signal and shared loadings.
    NetworkExogenous,
    /// Network on contemporaneous responses with shared loadings.
    NetworkSpatial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterestSelector {
    /// Everything is an interest coordinate.
    All,
    /// All deviation coordinates (network layouts default).
    Deltas,
    /// Explicit coordinate indices.
    Indices { indices: Vec<usize> },
    /// The shared effect plus the first `count` deviations.
    Leading { count: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub model: ModelKind,
    /// Anchor pair for network layouts; None applies the default rule.
    pub anchor: Option<(usize, usize)>,
    /// Anchor column for the single-equation layout.
    pub anchor_col: Option<usize>,
    #[serde(default = "default_true")]
    pub exclude_diagonal: bool,
    pub interest: InterestSelector,
}

fn default_true() -> bool {
    true
}

impl LayoutSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serialization cannot fail")
    }

    pub fn from_path(path: &Path) -> Result<LayoutSpec> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

// ---- panel CSV ----

/// Raw long-format panel rows, grouped by unit and sorted by time.
pub struct RawPanel {
    pub n: usize,
    pub units: Vec<String>,
    /// y[(t, j)]
    pub y: DMatrix<f64>,
    /// per-unit covariate matrices, n x Kx
    pub x: Vec<DMatrix<f64>>,
    /// per-unit instrument matrices, n x q
    pub z: Vec<DMatrix<f64>>,
    /// optional exogenous unit signal d[(t, j)]
    pub d: Option<DMatrix<f64>>,
}

/// Read `t,unit,y[,d],x_1..,z_1..` rows. Every unit must appear exactly
/// once per time point; violations report the file line.
pub fn read_panel_csv(path: &Path) -> Result<RawPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut x_cols = Vec::new();
    let mut z_cols = Vec::new();
    let mut col_t = None;
    let mut col_unit = None;
    let mut col_y = None;
    let mut col_d = None;
    for (i, h) in headers.iter().enumerate() {
        match h {
            "t" => col_t = Some(i),
            "unit" => col_unit = Some(i),
            "y" => col_y = Some(i),
            "d" => col_d = Some(i),
            _ if h.starts_with("x_") => x_cols.push(i),
            _ if h.starts_with("z_") => z_cols.push(i),
            _ => {
                return Err(Error::validation(format!(
                    "unrecognized panel column '{h}'"
                )))
            }
        }
    }
    let (col_t, col_unit, col_y) = match (col_t, col_unit, col_y) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::validation("panel needs t, unit and y columns")),
    };
    if z_cols.is_empty() {
        return Err(Error::validation("panel needs at least one z_ column"));
    }

    struct Row {
        t: i64,
        unit: String,
        y: f64,
        d: Option<f64>,
        x: Vec<f64>,
        z: Vec<f64>,
    }
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            let raw = record
                .get(i)
                .ok_or_else(|| Error::validation(format!("line {line}: missing field")))?;
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::validation(format!("line {line}: '{raw}' is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "line {line}: non-finite value; missing data is rejected"
                )));
            }
            Ok(v)
        };
        let t: i64 = record
            .get(col_t)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::validation(format!("line {line}: bad t")))?;
        let unit = record
            .get(col_unit)
            .ok_or_else(|| Error::validation(format!("line {line}: bad unit")))?
            .trim()
            .to_string();
        rows.push(Row {
            t,
            unit,
            y: parse(col_y)?,
            d: col_d.map(parse).transpose()?,
            x: x_cols.iter().map(|&i| parse(i)).collect::<Result<_>>()?,
            z: z_cols.iter().map(|&i| parse(i)).collect::<Result<_>>()?,
        });
    }
    if rows.is_empty() {
        return Err(Error::validation("panel has no data rows"));
    }
    let mut units: Vec<String> = Vec::new();
    for r in &rows {
        if !units.contains(&r.unit) {
            units.push(r.unit.clone());
        }
    }
    let mut times: Vec<i64> = rows.iter().map(|r| r.t).collect();
    times.sort_unstable();
    times.dedup();
    let n = times.len();
    let p = units.len();
    if rows.len() != n * p {
        return Err(Error::validation(format!(
            "unbalanced panel: {} rows, expected {} (= {n} times x {p} units)",
            rows.len(),
            n * p
        )));
    }
    let kx = x_cols.len();
    let qz = z_cols.len();
    let mut y = DMatrix::zeros(n, p);
    let mut d = col_d.map(|_| DMatrix::zeros(n, p));
    let mut x = vec![DMatrix::zeros(n, kx); p];
    let mut z = vec![DMatrix::zeros(n, qz); p];
    let mut seen = vec![false; n * p];
    for r in &rows {
        let ti = times.binary_search(&r.t).expect("time present");
        let j = units.iter().position(|u| u == &r.unit).expect("unit present");
        if seen[ti * p + j] {
            return Err(Error::validation(format!(
                "duplicate observation for unit '{}' at t = {}",
                r.unit, r.t
            )));
        }
        seen[ti * p + j] = true;
        y[(ti, j)] = r.y;
        if let (Some(dm), Some(dv)) = (d.as_mut(), r.d) {
            dm[(ti, j)] = dv;
        }
        for (c, v) in r.x.iter().enumerate() {
            x[j][(ti, c)] = *v;
        }
        for (c, v) in r.z.iter().enumerate() {
            z[j][(ti, c)] = *v;
        }
    }
    Ok(RawPanel { n, units, y, x, z, d })
}

/// Write the long-format panel (inverse of `read_panel_csv`).
pub fn write_panel_csv(path: &Path, panel: &RawPanel) -> Result<()> {
    let mut out = String::new();
    let kx = panel.x.first().map_or(0, |m| m.ncols());
    let qz = panel.z.first().map_or(0, |m| m.ncols());
    out.push_str("t,unit,y");
    if panel.d.is_some() {
        out.push_str(",d");
    }
    for c in 0..kx {
        let _ = write!(out, ",x_{}", c + 1);
    }
    for c in 0..qz {
        let _ = write!(out, ",z_{}", c + 1);
    }
    out.push('\n');
    for t in 0..panel.n {
        for (j, unit) in panel.units.iter().enumerate() {
            let _ = write!(out, "{},{},{}", t + 1, unit, fmt_f64(panel.y[(t, j)]));
            if let Some(d) = &panel.d {
                let _ = write!(out, ",{}", fmt_f64(d[(t, j)]));
            }
            for c in 0..kx {
                let _ = write!(out, ",{}", fmt_f64(panel.x[j][(t, c)]));
            }
            for c in 0..qz {
                let _ = write!(out, ",{}", fmt_f64(panel.z[j][(t, c)]));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Headerless dense adjacency CSV.
pub fn read_network_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::validation(format!("network line {}: '{s}' is not a number", i + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::validation("network file is empty"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::validation("network rows have differing lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

pub fn write_network_csv(path: &Path, w: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for r in 0..w.nrows() {
        for c in 0..w.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(w[(r, c)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Assemble the estimation inputs from the raw files and the layout.
pub fn build_model(
    raw: &RawPanel,
    network: Option<&DMatrix<f64>>,
    layout: &LayoutSpec,
) -> Result<(PanelData, TransformSpec)> {
    let n = raw.n;
    let p = raw.units.len();
    let net_spec = |w: &DMatrix<f64>, zero_diag: bool| -> Result<NetworkSpec> {
        NetworkSpec::new(w.clone(), layout.anchor, zero_diag)
    };
    let (data, spec) = match layout.model {
        ModelKind::SingleEquation => {
            if p != 1 {
                return Err(Error::validation(
                    "single-equation layout expects exactly one unit",
                ));
            }
            let w = network
                .ok_or_else(|| Error::validation("single-equation layout needs a weight row"))?;
            if w.nrows() != 1 {
                return Err(Error::validation("weight file must have one row"));
            }
            let wv = w.row(0).transpose().into_owned();
            let anchor = match layout.anchor_col {
                Some(k) => k,
                None => (0..wv.len())
                    .find(|&k| wv[k] != 0.0)
                    .ok_or_else(|| Error::validation("weight row is identically zero"))?,
            };
            if raw.x[0].ncols() != wv.len() {
                return Err(Error::dimension(format!(
                    "weight row has {} entries but the panel has {} x_ columns",
                    wv.len(),
                    raw.x[0].ncols()
                )));
            }
            let spec = single_equation_transform(&wv, anchor)?;
            let data = PanelData::new(
                vec![raw.y.column(0).into_owned()],
                vec![raw.x[0].clone()],
                vec![raw.z[0].clone()],
                raw.units.clone(),
            )?;
            (data, spec)
        }
        ModelKind::Spillover => {
            let w = network.ok_or_else(|| Error::validation("layout needs a network file"))?;
            let net = net_spec(w, false)?;
            let spec = build_spillover_transform(&net, p)?;
            let data = PanelData::new(
                (0..p).map(|j| raw.y.column(j).into_owned()).collect(),
                raw.x.clone(),
                raw.z.clone(),
                raw.units.clone(),
            )?;
            (data, spec)
        }
        ModelKind::Spatial => {
            let w = network.ok_or_else(|| Error::validation("layout needs a network file"))?;
            let net = net_spec(w, layout.exclude_diagonal)?;
            let spec = build_spatial_transform(&net, layout.exclude_diagonal)?;
            let x: Vec<DMatrix<f64>> = (0..p).map(|_| raw.y.clone()).collect();
            let data = PanelData::new(
                (0..p).map(|j| raw.y.column(j).into_owned()).collect(),
                x,
                raw.z.clone(),
                raw.units.clone(),
            )?;
            (data, spec)
        }
        ModelKind::Lagged => {
            let w = network.ok_or_else(|| Error::validation("layout needs a network file"))?;
            let net = net_spec(w, false)?;
            let spec = build_lagged_transform(&net)?;
            if n < 3 {
                return Err(Error::validation("lagged layout needs at least 3 periods"));
            }
            let ylag = raw.y.rows(0, n - 1).into_owned();
            let x: Vec<DMatrix<f64>> = (0..p).map(|_| ylag.clone()).collect();
            let data = PanelData::new(
                (0..p)
                    .map(|j| raw.y.column(j).rows(1, n - 1).into_owned())
                    .collect(),
                x,
                raw.z.iter().map(|z| z.rows(1, n - 1).into_owned()).collect(),
                raw.units.clone(),
            )?;
            (data, spec)
        }
        ModelKind::NetworkExogenous | ModelKind::NetworkSpatial => {
            let w = network.ok_or_else(|| Error::validation("layout needs a network file"))?;
            let net = net_spec(w, true)?;
            let spatial = layout.model == ModelKind::NetworkSpatial;
            let signal = if spatial {
                raw.y.clone()
            } else {
                raw.d
                    .clone()
                    .ok_or_else(|| Error::validation("exogenous network layout needs a d column"))?
            };
            let m = raw.x[0].ncols();
            let spec = build_network_transform(&net, m, layout.exclude_diagonal, spatial)?;
            let mut xs = Vec::with_capacity(p);
            let mut zs = Vec::with_capacity(p);
            for j in 0..p {
                let mut x = DMatrix::zeros(n, p + m);
                x.view_mut((0, 0), (n, p)).copy_from(&signal);
                x.view_mut((0, p), (n, m)).copy_from(&raw.x[j]);
                xs.push(x);
                if spatial {
                    zs.push(raw.z[j].clone());
                } else {
                    let mut z = DMatrix::zeros(n, p + raw.z[j].ncols());
                    z.view_mut((0, 0), (n, p)).copy_from(&signal);
                    z.view_mut((0, p), (n, raw.z[j].ncols())).copy_from(&raw.z[j]);
                    zs.push(z);
                }
            }
            let data = PanelData::new(
                (0..p).map(|j| raw.y.column(j).into_owned()).collect(),
                xs,
                zs,
                raw.units.clone(),
            )?;
            (data, spec)
        }
    };
    let spec = apply_interest(spec, &layout.interest)?;
    Ok((data, spec))
}

fn apply_interest(spec: TransformSpec, sel: &InterestSelector) -> Result<TransformSpec> {
    match sel {
        InterestSelector::All => {
            let k = spec.k_total();
            spec.with_interest_set((0..k).collect())
        }
        InterestSelector::Deltas => {
            let idx: Vec<usize> = spec
                .names
                .iter()
                .enumerate()
                .filter(|(_, n)| n.starts_with("delta["))
                .map(|(i, _)| i)
                .collect();
            spec.with_interest_set(idx)
        }
        InterestSelector::Indices { indices } => spec.with_interest_set(indices.clone()),
        InterestSelector::Leading { count } => {
            let k = spec.k_total();
            let end = (1 + count).min(k);
            spec.with_interest_set((0..end).collect())
        }
    }
}

// ---- estimate bundle ----

pub fn fit_to_json(fit: &DrgmmFit, spec: &TransformSpec, timings_ms: &[(String, f64)]) -> String {
    let layout = Jv::Obj(vec![
        (
            "names".into(),
            Jv::Arr(spec.names.iter().map(|s| Jv::Str(s.clone())).collect()),
        ),
        (
            "theta1".into(),
            Jv::Arr(spec.theta1.iter().map(|&i| Jv::Int(i as i64)).collect()),
        ),
        (
            "theta2".into(),
            Jv::Arr(spec.theta2.iter().map(|&i| Jv::Int(i as i64)).collect()),
        ),
    ]);
    let mut fields = vec![
        ("layout".to_string(), layout),
        ("n".to_string(), Jv::Int(fit.n as i64)),
        ("lambda_used".to_string(), Jv::Num(fit.lambda_used)),
        ("ell_upsilon".to_string(), Jv::Num(fit.ell_upsilon)),
        ("threshold_used".to_string(), Jv::Num(fit.threshold_used)),
        ("theta_hat".to_string(), Jv::vector(&fit.theta_hat)),
        ("theta_check1".to_string(), Jv::vector(&fit.theta_check1)),
        (
            "theta_check2".to_string(),
            fit.theta_check2
                .as_ref()
                .map(Jv::vector)
                .unwrap_or(Jv::Null),
        ),
        ("g_at_theta_hat".to_string(), Jv::vector(&fit.g_at_theta_hat)),
        ("omega".to_string(), Jv::block_matrix(&fit.omega)),
        ("upsilon".to_string(), Jv::block_matrix(&fit.upsilon)),
        ("g1".to_string(), Jv::matrix(&fit.g1)),
        ("g2".to_string(), Jv::matrix(&fit.g2)),
        ("a_hat".to_string(), Jv::matrix(&fit.parts.a_hat)),
        ("b_hat".to_string(), Jv::matrix(&fit.parts.b_hat)),
        ("pi_hat".to_string(), Jv::matrix(&fit.parts.pi_hat)),
        ("xi_hat".to_string(), Jv::matrix(&fit.parts.xi_hat)),
        ("f_hat".to_string(), Jv::matrix(&fit.parts.f_hat)),
        ("scores".to_string(), Jv::matrix(&fit.scores)),
        (
            "warnings".to_string(),
            Jv::Arr(fit.warnings.iter().map(|w| Jv::Str(w.clone())).collect()),
        ),
    ];
    fields.push((
        "timings_ms".to_string(),
        Jv::Obj(
            timings_ms
                .iter()
                .map(|(k, v)| (k.clone(), Jv::Num(*v)))
                .collect(),
        ),
    ));
    Jv::Obj(fields).render()
}

/// The subset of a stored bundle needed by the inference and recovery
/// stages.
pub struct BundleView {
    pub names: Vec<String>,
    pub theta1: Vec<usize>,
    pub theta2: Vec<usize>,
    pub n: usize,
    pub theta_check1: DVector<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub scores: DMatrix<f64>,
}

pub fn read_bundle(path: &Path) -> Result<BundleView> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    let names = v["layout"]["names"]
        .as_array()
        .ok_or_else(|| Error::validation("bundle missing layout names"))?
        .iter()
        .map(|s| {
            s.as_str()
                .map(String::from)
                .ok_or_else(|| Error::validation("bad name entry"))
        })
        .collect::<Result<Vec<_>>>()?;
    let idx = |key: &str| -> Result<Vec<usize>> {
        v["layout"][key]
            .as_array()
            .ok_or_else(|| Error::validation("bundle missing layout indices"))?
            .iter()
            .map(|x| {
                x.as_u64()
                    .map(|u| u as usize)
                    .ok_or_else(|| Error::validation("bad index entry"))
            })
            .collect()
    };
    Ok(BundleView {
        names,
        theta1: idx("theta1")?,
        theta2: idx("theta2")?,
        n: v["n"]
            .as_u64()
            .ok_or_else(|| Error::validation("bundle missing n"))? as usize,
        theta_check1: parse_vector(&v["theta_check1"])?,
        a_hat: parse_matrix(&v["a_hat"])?,
        b_hat: parse_matrix(&v["b_hat"])?,
        scores: parse_matrix(&v["scores"])?,
    })
}

// ---- reports ----

pub fn report_to_json(report: &InferenceReport) -> String {
    let method = match report.method {
        CriticalValueMethod::GaussianMax => "gaussian_max",
        CriticalValueMethod::BlockBootstrap => "block_bootstrap",
    };
    Jv::Obj(vec![
        ("method".into(), Jv::Str(method.into())),
        ("alpha".into(), Jv::Num(report.alpha)),
        ("critical_value".into(), Jv::Num(report.critical_value)),
        ("n".into(), Jv::Int(report.n as i64)),
        (
            "indices".into(),
            Jv::Arr(report.indices.iter().map(|&i| Jv::Int(i as i64)).collect()),
        ),
        (
            "names".into(),
            Jv::Arr(report.names.iter().map(|s| Jv::Str(s.clone())).collect()),
        ),
        (
            "estimates".into(),
            Jv::Arr(report.estimates.iter().map(|&v| Jv::Num(v)).collect()),
        ),
        (
            "sigma_hat".into(),
            Jv::Arr(report.sigma_hat.iter().map(|&v| Jv::Num(v)).collect()),
        ),
        (
            "ci_lower".into(),
            Jv::Arr(report.ci_lower.iter().map(|&v| Jv::Num(v)).collect()),
        ),
        (
            "ci_upper".into(),
            Jv::Arr(report.ci_upper.iter().map(|&v| Jv::Num(v)).collect()),
        ),
        (
            "reject".into(),
            Jv::Arr(report.reject.iter().map(|&b| Jv::Bool(b)).collect()),
        ),
        ("sigma_clipped".into(), Jv::Int(report.sigma_clipped as i64)),
        (
            "warnings".into(),
            Jv::Arr(report.warnings.iter().map(|w| Jv::Str(w.clone())).collect()),
        ),
    ])
    .render()
}

pub fn read_report(path: &Path) -> Result<InferenceReport> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    let method = match v["method"].as_str() {
        Some("block_bootstrap") => CriticalValueMethod::BlockBootstrap,
        _ => CriticalValueMethod::GaussianMax,
    };
    let strings = |key: &str| -> Vec<String> {
        v[key]
            .as_array()
            .map(|a| a.iter().filter_map(|s| s.as_str().map(String::from)).collect())
            .unwrap_or_default()
    };
    let floats = |key: &str| -> Result<Vec<f64>> {
        v[key]
            .as_array()
            .ok_or_else(|| Error::validation(format!("report missing {key}")))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| Error::validation("bad number")))
            .collect()
    };
    Ok(InferenceReport {
        method,
        alpha: v["alpha"].as_f64().unwrap_or(0.05),
        critical_value: v["critical_value"]
            .as_f64()
            .ok_or_else(|| Error::validation("report missing critical_value"))?,
        n: v["n"].as_u64().unwrap_or(0) as usize,
        indices: v["indices"]
            .as_array()
            .map(|a| a.iter().filter_map(|x| x.as_u64().map(|u| u as usize)).collect())
            .unwrap_or_default(),
        names: strings("names"),
        estimates: floats("estimates")?,
        sigma_hat: floats("sigma_hat")?,
        ci_lower: floats("ci_lower")?,
        ci_upper: floats("ci_upper")?,
        reject: v["reject"]
            .as_array()
            .map(|a| a.iter().filter_map(|x| x.as_bool()).collect())
            .unwrap_or_default(),
        sigma_clipped: v["sigma_clipped"].as_u64().unwrap_or(0) as usize,
        warnings: strings("warnings"),
    })
}

/// One row per tested coordinate.
pub fn report_to_csv(report: &InferenceReport) -> String {
    let mut out = String::from("name,estimate,sigma_hat,ci_lower,ci_upper,reject\n");
    for i in 0..report.names.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            report.names[i],
            fmt_f64(report.estimates[i]),
            fmt_f64(report.sigma_hat[i]),
            fmt_f64(report.ci_lower[i]),
            fmt_f64(report.ci_upper[i]),
            report.reject[i]
        );
    }
    out
}

pub fn edges_to_csv(edges: &[Edge]) -> String {
    let mut out = String::from("from,to,delta_hat,ci_lower,ci_upper,significant\n");
    for e in edges {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.from,
            e.to,
            fmt_f64(e.delta_hat),
            fmt_f64(e.ci_lower),
            fmt_f64(e.ci_upper),
            e.significant
        );
    }
    out
}
