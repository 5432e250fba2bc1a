use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Balanced panel observations for a system of `p` equations over
/// `t = 1..n`: per equation a response series, raw covariates and
/// instruments. Read-only after construction; safe to share across
/// workers.
#[derive(Debug, Clone)]
pub struct PanelData {
    pub n: usize,
    pub p: usize,
    /// Per-equation response, length n.
    pub y: Vec<DVector<f64>>,
    /// Per-equation raw covariates, n x K'_j.
    pub x: Vec<DMatrix<f64>>,
    /// Per-equation instruments, n x q_j.
    pub z: Vec<DMatrix<f64>>,
    pub labels: Vec<String>,
}

impl PanelData {
    pub fn new(
        y: Vec<DVector<f64>>,
        x: Vec<DMatrix<f64>>,
        z: Vec<DMatrix<f64>>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let p = y.len();
        if p == 0 {
            return Err(Error::validation("panel has no equations"));
        }
        if x.len() != p || z.len() != p || labels.len() != p {
            return Err(Error::dimension(
                "y, x, z and labels must have one entry per equation",
            ));
        }
        let n = y[0].len();
        if n < 2 {
            return Err(Error::validation("panel needs at least two time points"));
        }
        for j in 0..p {
            if y[j].len() != n || x[j].nrows() != n || z[j].nrows() != n {
                return Err(Error::dimension(format!(
                    "equation {j}: series lengths differ from n = {n}"
                )));
            }
            if z[j].ncols() == 0 {
                return Err(Error::validation(format!(
                    "equation {j}: no instrument columns"
                )));
            }
            let finite = y[j].iter().all(|v| v.is_finite())
                && x[j].iter().all(|v| v.is_finite())
                && z[j].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::validation(format!(
                    "equation {j}: NaN or infinite entries; missing data is rejected at ingestion"
                )));
            }
        }
        Ok(PanelData { n, p, y, x, z, labels })
    }

    pub fn q_total(&self) -> usize {
        self.z.iter().map(|z| z.ncols()).sum()
    }

    /// Instrument counts per equation.
    pub fn q_j(&self, j: usize) -> usize {
        self.z[j].ncols()
    }

    /// Restrict all series to time rows `[start, end)`.
    pub fn time_slice(&self, start: usize, end: usize) -> Result<PanelData> {
        if start >= end || end > self.n {
            return Err(Error::validation(format!(
                "invalid time slice [{start}, {end}) for n = {}",
                self.n
            )));
        }
        let len = end - start;
        let y = self.y.iter().map(|v| v.rows(start, len).into_owned()).collect();
        let x = self.x.iter().map(|m| m.rows(start, len).into_owned()).collect();
        let z = self.z.iter().map(|m| m.rows(start, len).into_owned()).collect();
        PanelData::new(y, x, z, self.labels.clone())
    }
}
