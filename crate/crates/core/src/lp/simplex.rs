//! Two-phase revised simplex with a dense explicit basis inverse, plus a
//! dual-simplex reoptimizer for right-hand-side sweeps.

use super::{LpOptions, LpProblem, LpSolution, LpStatus};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-9;
const REFRESH_EVERY: usize = 256;
/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 40;

/// Internal standard form: min c'v  s.t.  [A | I] v = b, v >= 0. The
/// first `n` variables are structural (columns of `a`), the next `m`
/// form the identity block (slacks, or artificials on flipped rows).
struct Tableau<'a> {
    a: &'a DMatrix<f64>,
    m: usize,
    n: usize,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    /// Rows left with a zero-valued basic artificial after phase 1;
    /// structurally redundant, never chosen as pivot rows.
    frozen_rows: Vec<bool>,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

impl<'a> Tableau<'a> {
    fn new(a: &'a DMatrix<f64>, b: DVector<f64>, basis: Vec<usize>, binv: DMatrix<f64>) -> Self {
        let m = a.nrows();
        let n = a.ncols();
        let mut in_basis = vec![false; n + m];
        for &j in &basis {
            in_basis[j] = true;
        }
        let xb = &binv * b;
        Tableau {
            a,
            m,
            n,
            basis,
            in_basis,
            binv,
            xb,
            frozen_rows: vec![false; m],
        }
    }

    /// Inner product of a length-m vector with standard-form column j.
    fn dot_col(&self, v: &DVector<f64>, j: usize) -> f64 {
        if j < self.n {
            let mut acc = 0.0;
            let col = self.a.column(j);
            for i in 0..self.m {
                acc += v[i] * col[i];
            }
            acc
        } else {
            v[j - self.n]
        }
    }

    fn ftran(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            &self.binv * self.a.column(j)
        } else {
            self.binv.column(j - self.n).into_owned()
        }
    }

    fn multipliers(&self, cost: &dyn Fn(usize) -> f64) -> DVector<f64> {
        let cb = DVector::from_fn(self.m, |i, _| cost(self.basis[i]));
        self.binv.tr_mul(&cb)
    }

    /// Reduced costs over all columns (basic entries are stale; callers
    /// skip them via `in_basis`).
    fn reduced_costs(&self, y: &DVector<f64>, cost: &dyn Fn(usize) -> f64) -> DVector<f64> {
        let at_y = self.a.tr_mul(y);
        let mut d = DVector::zeros(self.n + self.m);
        for j in 0..self.n {
            d[j] = cost(j) - at_y[j];
        }
        for i in 0..self.m {
            d[self.n + i] = cost(self.n + i) - y[i];
        }
        d
    }

    fn pivot(&mut self, row: usize, col: usize, w: &DVector<f64>) {
        let m = self.m;
        let wr = w[row];
        for k in 0..m {
            self.binv[(row, k)] /= wr;
        }
        for i in 0..m {
            if i != row {
                let f = w[i];
                if f != 0.0 {
                    for k in 0..m {
                        self.binv[(i, k)] -= f * self.binv[(row, k)];
                    }
                }
            }
        }
        let theta = self.xb[row] / wr;
        for i in 0..m {
            if i != row {
                self.xb[i] -= w[i] * theta;
                if self.xb[i] < 0.0 && self.xb[i] > -1e-12 {
                    self.xb[i] = 0.0;
                }
            }
        }
        self.xb[row] = theta;
        self.in_basis[self.basis[row]] = false;
        self.in_basis[col] = true;
        self.basis[row] = col;
    }

    fn refactor(&mut self, b: &DVector<f64>) -> bool {
        let m = self.m;
        let mut bm = DMatrix::zeros(m, m);
        for (pos, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                bm.set_column(pos, &self.a.column(j));
            } else {
                bm[(j - self.n, pos)] = 1.0;
            }
        }
        match bm.try_inverse() {
            Some(inv) => {
                self.xb = &inv * b;
                self.binv = inv;
                true
            }
            None => false,
        }
    }

    fn objective(&self, cost: &dyn Fn(usize) -> f64) -> f64 {
        (0..self.m)
            .map(|i| cost(self.basis[i]) * self.xb[i])
            .sum()
    }

    /// Primal simplex over the given costs; `allow` filters entering
    /// candidates. Dantzig pricing with a Bland fallback on stalls.
    fn run_phase(
        &mut self,
        cost: &dyn Fn(usize) -> f64,
        allow: &dyn Fn(usize) -> bool,
        b: &DVector<f64>,
        opts: LpOptions,
    ) -> Result<PhaseOutcome> {
        let mut stall = 0usize;
        let mut last_obj = f64::INFINITY;
        for iter in 0..opts.max_iter {
            if iter > 0 && iter % REFRESH_EVERY == 0 && !self.refactor(b) {
                return Err(Error::numerical("simplex basis became singular"));
            }
            let y = self.multipliers(cost);
            let d = self.reduced_costs(&y, cost);
            let mut entering: Option<usize> = None;
            if stall >= STALL_LIMIT {
                for j in 0..self.n + self.m {
                    if !self.in_basis[j] && allow(j) && d[j] < -COST_TOL {
                        entering = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -COST_TOL;
                for j in 0..self.n + self.m {
                    if !self.in_basis[j] && allow(j) && d[j] < best {
                        best = d[j];
                        entering = Some(j);
                    }
                }
            }
            let Some(j) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            let w = self.ftran(j);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if self.frozen_rows[i] || w[i] <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.xb[i].max(0.0) / w[i];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - 1e-12 {
                            leave = Some((i, ratio));
                        } else if (ratio - br).abs() <= 1e-12 {
                            let cand_art = self.basis[i] >= self.n;
                            let best_art = self.basis[bi] >= self.n;
                            if (cand_art && !best_art)
                                || (cand_art == best_art && self.basis[i] < self.basis[bi])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, theta)) = leave else {
                return Ok(PhaseOutcome::Unbounded);
            };
            let obj = self.objective(cost);
            if theta <= 1e-12 || obj >= last_obj - 1e-12 {
                stall += 1;
            } else {
                stall = 0;
            }
            last_obj = obj;
            self.pivot(r, j, &w);
        }
        Err(Error::numerical("simplex iteration limit exceeded"))
    }
}

fn infeasible_solution(n: usize) -> LpSolution {
    LpSolution {
        x: DVector::zeros(n),
        objective: f64::INFINITY,
        status: LpStatus::Infeasible,
        duality_gap: f64::INFINITY,
        feasibility_residual: f64::INFINITY,
    }
}

/// Result of a direct solve: solution, basis (caller convention:
/// structural j < n, slack of row i at n + i, artificial of row i at
/// n + m + i) and the dual multipliers on the original rows.
struct DirectOutcome {
    solution: LpSolution,
    basis: Vec<usize>,
}

pub(super) fn solve_direct(problem: &LpProblem, opts: LpOptions) -> Result<LpSolution> {
    solve_direct_inner(problem, opts).map(|o| o.solution)
}

fn solve_direct_inner(problem: &LpProblem, opts: LpOptions) -> Result<DirectOutcome> {
    let m = problem.a_ub.nrows();
    let n = problem.a_ub.ncols();

    // Rows with negative b are sign-flipped so the identity block can
    // start as the basis; flipped rows get artificials (their slack
    // enters with coefficient -1 and is appended as an extra structural
    // column).
    let mut sign = vec![1.0f64; m];
    for i in 0..m {
        if problem.b_ub[i] < 0.0 {
            sign[i] = -1.0;
        }
    }
    let flipped: Vec<usize> = (0..m).filter(|&i| sign[i] < 0.0).collect();
    let n_ext = n + flipped.len();
    let mut a_ext = DMatrix::zeros(m, n_ext);
    for i in 0..m {
        for j in 0..n {
            a_ext[(i, j)] = sign[i] * problem.a_ub[(i, j)];
        }
    }
    for (k, &i) in flipped.iter().enumerate() {
        a_ext[(i, n + k)] = -1.0;
    }
    let b_int = DVector::from_fn(m, |i, _| sign[i] * problem.b_ub[i]);
    let mut is_artificial_row = vec![false; m];
    for &i in &flipped {
        is_artificial_row[i] = true;
    }

    let basis: Vec<usize> = (0..m).map(|i| n_ext + i).collect();
    let mut t = Tableau::new(&a_ext, b_int.clone(), basis, DMatrix::identity(m, m));

    if !flipped.is_empty() {
        let phase1_cost = |j: usize| {
            if j >= n_ext && is_artificial_row[j - n_ext] {
                1.0
            } else {
                0.0
            }
        };
        let allow_all = |_: usize| true;
        match t.run_phase(&phase1_cost, &allow_all, &b_int, opts)? {
            PhaseOutcome::Optimal => {}
            PhaseOutcome::Unbounded => {
                return Err(Error::numerical("phase-1 objective unbounded"));
            }
        }
        let p1: f64 = (0..m)
            .map(|i| phase1_cost(t.basis[i]) * t.xb[i].max(0.0))
            .sum();
        if p1 > opts.feas_tol * (1.0 + b_int.amax()) * 100.0 {
            return Ok(DirectOutcome {
                solution: infeasible_solution(n),
                basis: t.basis,
            });
        }
        // Pivot remaining zero-level artificials out where possible.
        for i in 0..m {
            let bv = t.basis[i];
            if bv >= n_ext && is_artificial_row[bv - n_ext] {
                let brow = t.binv.row(i).transpose().into_owned();
                let mut found = None;
                for j in 0..n_ext + m {
                    if t.in_basis[j] || (j >= n_ext && is_artificial_row[j - n_ext]) {
                        continue;
                    }
                    if t.dot_col(&brow, j).abs() > 1e-7 {
                        found = Some(j);
                        break;
                    }
                }
                match found {
                    Some(j) => {
                        let w = t.ftran(j);
                        t.pivot(i, j, &w);
                    }
                    None => t.frozen_rows[i] = true,
                }
            }
        }
    }

    let phase2_cost = |j: usize| if j < n { problem.c[j] } else { 0.0 };
    let allow = |j: usize| !(j >= n_ext && is_artificial_row[j - n_ext]);
    if let PhaseOutcome::Unbounded = t.run_phase(&phase2_cost, &allow, &b_int, opts)? {
        return Ok(DirectOutcome {
            solution: LpSolution {
                x: DVector::zeros(n),
                objective: f64::NEG_INFINITY,
                status: LpStatus::Unbounded,
                duality_gap: f64::INFINITY,
                feasibility_residual: 0.0,
            },
            basis: t.basis,
        });
    }

    let mut x = DVector::zeros(n);
    for (pos, &j) in t.basis.iter().enumerate() {
        if j < n {
            x[j] = t.xb[pos].max(0.0);
        }
    }
    // Dual multipliers on the original rows: the internal rows are the
    // originals scaled by `sign`, so fold the sign back.
    let y_int = t.multipliers(&phase2_cost);
    let y = DVector::from_fn(m, |i, _| sign[i] * y_int[i]);
    let objective = problem.c.dot(&x);
    let gap = objective - problem.b_ub.dot(&y);
    let resid = &problem.a_ub * &x - &problem.b_ub;
    let viol = resid.iter().cloned().fold(0.0f64, f64::max);

    // Map internal column ids to the caller convention.
    let mapped: Vec<usize> = t
        .basis
        .iter()
        .map(|&j| {
            if j < n {
                j
            } else if j < n_ext {
                n + flipped[j - n] // slack of a flipped row
            } else {
                let row = j - n_ext;
                if is_artificial_row[row] {
                    n + m + row
                } else {
                    n + row
                }
            }
        })
        .collect();
    Ok(DirectOutcome {
        solution: LpSolution {
            x,
            objective,
            status: LpStatus::Optimal,
            duality_gap: gap,
            feasibility_residual: viol,
        },
        basis: mapped,
    })
}

/// Solve a row-heavy problem through its dual; the negated dual
/// multipliers are the primal point. Returns Ok(None) when the recovered
/// point fails certification (caller falls back to the direct path).
pub(super) fn solve_via_dual(problem: &LpProblem, opts: LpOptions) -> Result<Option<LpSolution>> {
    let dual = LpProblem::new(
        problem.b_ub.clone(),
        -problem.a_ub.transpose(),
        problem.c.clone(),
    )?;
    let outcome = solve_direct_inner(&dual, opts)?;
    match outcome.solution.status {
        LpStatus::Unbounded => {
            return Ok(Some(infeasible_solution(problem.a_ub.ncols())));
        }
        LpStatus::Infeasible => return Ok(None),
        LpStatus::Optimal => {}
    }
    // Recover y for the dual problem from its optimal basis, in the dual
    // problem's original coordinates.
    let md = dual.a_ub.nrows();
    let nd = dual.a_ub.ncols();
    let mut bm = DMatrix::zeros(md, md);
    for (pos, &j) in outcome.basis.iter().enumerate() {
        if j < nd {
            bm.set_column(pos, &dual.a_ub.column(j));
        } else if j < nd + md {
            bm[(j - nd, pos)] = 1.0;
        } else {
            return Ok(None); // artificial left in basis; use direct path
        }
    }
    let Some(binv) = bm.try_inverse() else {
        return Ok(None);
    };
    let cb = DVector::from_fn(md, |i, _| {
        let j = outcome.basis[i];
        if j < nd {
            dual.c[j]
        } else {
            0.0
        }
    });
    let y_dual = binv.tr_mul(&cb); // multipliers on dual rows = -x
    let x = DVector::from_fn(problem.a_ub.ncols(), |j, _| (-y_dual[j]).max(0.0));
    let resid = &problem.a_ub * &x - &problem.b_ub;
    let scale = 1.0 + problem.b_ub.amax();
    let viol = resid.iter().cloned().fold(0.0f64, f64::max);
    let objective = problem.c.dot(&x);
    let gap = (objective - (-outcome.solution.objective)).abs();
    if viol > opts.feas_tol * scale * 10.0
        || gap > opts.gap_tol * (1.0 + objective.abs()) * 10.0
    {
        return Ok(None);
    }
    Ok(Some(LpSolution {
        x,
        objective,
        status: LpStatus::Optimal,
        duality_gap: gap,
        feasibility_residual: viol,
    }))
}

/// Re-solves a family of problems sharing `A` and `c` but differing in
/// `b`, reusing the previous optimal basis via the dual simplex.
pub struct LpSweep {
    a: DMatrix<f64>,
    c: DVector<f64>,
    basis: Vec<usize>,
    opts: LpOptions,
    warm: bool,
}

impl LpSweep {
    pub fn new(a: DMatrix<f64>, c: DVector<f64>, opts: LpOptions) -> LpSweep {
        LpSweep {
            a,
            c,
            basis: Vec::new(),
            opts,
            warm: false,
        }
    }

    pub fn solve(&mut self, b: &DVector<f64>) -> Result<LpSolution> {
        if self.warm {
            match self.try_dual_reopt(b)? {
                Some(sol) => return Ok(sol),
                None => self.warm = false,
            }
        }
        let problem = LpProblem::new(self.c.clone(), self.a.clone(), b.clone())?;
        let outcome = solve_direct_inner(&problem, self.opts)?;
        let m = self.a.nrows();
        let n = self.a.ncols();
        if outcome.solution.status == LpStatus::Optimal
            && outcome.basis.iter().all(|&j| j < n + m)
        {
            self.basis = outcome.basis;
            self.warm = true;
        }
        Ok(outcome.solution)
    }

    fn try_dual_reopt(&mut self, b: &DVector<f64>) -> Result<Option<LpSolution>> {
        let m = self.a.nrows();
        let n = self.a.ncols();
        let cost = |j: usize| if j < n { self.c[j] } else { 0.0 };
        let mut bm = DMatrix::zeros(m, m);
        for (pos, &j) in self.basis.iter().enumerate() {
            if j < n {
                bm.set_column(pos, &self.a.column(j));
            } else {
                bm[(j - n, pos)] = 1.0;
            }
        }
        let Some(binv) = bm.try_inverse() else {
            return Ok(None);
        };
        let mut t = Tableau::new(&self.a, b.clone(), self.basis.clone(), binv);
        let max_dual_iters = 4 * (m + n);
        let mut iters = 0usize;
        loop {
            let mut r: Option<usize> = None;
            let mut most_neg = -(self.opts.feas_tol.max(1e-11));
            for i in 0..m {
                if t.xb[i] < most_neg {
                    most_neg = t.xb[i];
                    r = Some(i);
                }
            }
            let Some(r) = r else { break };
            if iters >= max_dual_iters {
                return Ok(None);
            }
            iters += 1;
            let y = t.multipliers(&cost);
            let d = t.reduced_costs(&y, &cost);
            let brow = t.binv.row(r).transpose().into_owned();
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..n + m {
                if t.in_basis[j] {
                    continue;
                }
                let alpha = t.dot_col(&brow, j);
                if alpha < -PIVOT_TOL {
                    let ratio = d[j].max(0.0) / (-alpha);
                    match enter {
                        None => enter = Some((j, ratio)),
                        Some((bj, br)) => {
                            if ratio < br - 1e-12 || ((ratio - br).abs() <= 1e-12 && j < bj) {
                                enter = Some((j, ratio));
                            }
                        }
                    }
                }
            }
            let Some((j, _)) = enter else {
                return Ok(Some(infeasible_solution(n)));
            };
            let w = t.ftran(j);
            t.pivot(r, j, &w);
        }
        // Certify: primal feasibility, dual feasibility, gap.
        let mut x = DVector::zeros(n);
        for (pos, &j) in t.basis.iter().enumerate() {
            if j < n {
                x[j] = t.xb[pos].max(0.0);
            }
        }
        let y = t.multipliers(&cost);
        let d = t.reduced_costs(&y, &cost);
        let dual_feasible = (0..n + m).all(|j| t.in_basis[j] || d[j] >= -1e-7);
        let resid = &self.a * &x - b;
        let scale = 1.0 + b.amax();
        let viol = resid.iter().cloned().fold(0.0f64, f64::max);
        let objective = self.c.dot(&x);
        let gap = objective - b.dot(&y);
        if !dual_feasible
            || viol > self.opts.feas_tol * scale * 10.0
            || gap.abs() > self.opts.gap_tol * (1.0 + objective.abs()) * 100.0
        {
            return Ok(None);
        }
        self.basis = t.basis;
        Ok(Some(LpSolution {
            x,
            objective,
            status: LpStatus::Optimal,
            duality_gap: gap,
            feasibility_residual: viol,
        }))
    }
}

/// Brute-force oracle: enumerate all basic points of
/// `min c'x, Ax <= b, x >= 0` and return the best feasible objective, or
/// None when no feasible vertex exists. Exponential; test sizes only.
pub fn enumerate_vertices_oracle(problem: &LpProblem) -> Option<f64> {
    let m = problem.a_ub.nrows();
    let n = problem.a_ub.ncols();
    let total = m + n;
    let mut best: Option<f64> = None;
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        let mut mat = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for (r, &cidx) in combo.iter().enumerate() {
            if cidx < m {
                for j in 0..n {
                    mat[(r, j)] = problem.a_ub[(cidx, j)];
                }
                rhs[r] = problem.b_ub[cidx];
            } else {
                mat[(r, cidx - m)] = 1.0;
            }
        }
        if let Some(sol) = mat.lu().solve(&rhs) {
            let ok = sol.iter().all(|&v| v >= -1e-9)
                && (&problem.a_ub * &sol - &problem.b_ub)
                    .iter()
                    .all(|&v| v <= 1e-9 * (1.0 + problem.b_ub.amax()));
            if ok {
                let obj = problem.c.dot(&sol);
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        let mut i = n;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if combo[i] != i + total - n {
                combo[i] += 1;
                for k in i + 1..n {
                    combo[k] = combo[k - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            return best;
        }
    }
}
