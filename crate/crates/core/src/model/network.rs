use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Pre-specified adjacency structure with an anchor entry.
///
/// The anchor is an ordered pair `(j, k)`, `j != k`, whose weight is
/// nonzero while the deviation at that entry is known to be zero; the
/// corresponding deviation coordinate is eliminated from the parameter
/// space to avoid multicollinearity.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub w: DMatrix<f64>,
    pub anchor: (usize, usize),
    pub zero_diag: bool,
}

impl NetworkSpec {
    /// When `anchor` is None the lexicographically smallest off-diagonal
    /// `(j, k)` with a nonzero weight is used.
    pub fn new(w: DMatrix<f64>, anchor: Option<(usize, usize)>, zero_diag: bool) -> Result<Self> {
        let p = w.nrows();
        if p < 2 || w.ncols() != p {
            return Err(Error::dimension(format!(
                "adjacency must be square with p >= 2, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("adjacency has NaN or infinite entries"));
        }
        if zero_diag {
            for j in 0..p {
                if w[(j, j)] != 0.0 {
                    return Err(Error::validation(format!(
                        "zero_diag set but W[{j},{j}] = {}",
                        w[(j, j)]
                    )));
                }
            }
        }
        let anchor = match anchor {
            Some((j, k)) => {
                if j >= p || k >= p || j == k {
                    return Err(Error::validation(format!("invalid anchor ({j},{k})")));
                }
                if w[(j, k)] == 0.0 {
                    return Err(Error::validation(format!(
                        "anchor entry W[{j},{k}] is zero"
                    )));
                }
                (j, k)
            }
            None => Self::default_anchor(&w)?,
        };
        Ok(NetworkSpec { w, anchor, zero_diag })
    }

    fn default_anchor(w: &DMatrix<f64>) -> Result<(usize, usize)> {
        let p = w.nrows();
        for j in 0..p {
            for k in 0..p {
                if j != k && w[(j, k)] != 0.0 {
                    return Ok((j, k));
                }
            }
        }
        Err(Error::validation(
            "adjacency has no nonzero off-diagonal entry to anchor on",
        ))
    }

    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    /// Row j as an owned vector.
    pub fn row(&self, j: usize) -> nalgebra::DVector<f64> {
        self.w.row(j).transpose().into_owned()
    }
}
