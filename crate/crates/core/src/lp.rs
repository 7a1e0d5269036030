//! Dense two-phase simplex for bounded-variable linear programs.
//!
//! The solver keeps the full `B⁻¹A` tableau in memory and pivots with
//! Dantzig pricing, falling back to Bland's rule after a run of degenerate
//! pivots. Variable bounds (including free and fixed variables) are handled
//! implicitly rather than as constraint rows, so problems like quantile
//! regression (free coefficients, nonnegative slacks) and scenario CVaR
//! programs (box-bounded bids, free value-at-risk) map onto it directly.
//!
//! Intended problem sizes are desk scale: a few thousand rows and columns.

use std::fmt;
use std::io::Write;

use thiserror::Error;

/// Objective direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Constraint relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    relation: Relation,
    rhs: f64,
}

/// A linear program over `n` structural variables with per-variable bounds.
///
/// Variables default to `[0, +inf)`; use [`LpProblem::set_bounds`] for boxes,
/// free variables (`-inf..inf`) or fixed values.
#[derive(Debug, Clone)]
pub struct LpProblem {
    sense: Sense,
    objective: Vec<f64>,
    rows: Vec<Row>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of a solve. `values`, `duals` and `reduced_costs` are only
/// meaningful when `status == Optimal`. Duals and reduced costs are reported
/// in the sign convention of the original problem sense.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
}

/// Residuals of a candidate solution against a problem.
#[derive(Debug, Clone, Default)]
pub struct ResidualReport {
    pub max_constraint_violation: f64,
    pub max_bound_violation: f64,
    pub max_complementarity: f64,
    pub duality_gap: f64,
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "constraint {:.3e}, bound {:.3e}, complementarity {:.3e}, gap {:.3e}",
            self.max_constraint_violation,
            self.max_bound_violation,
            self.max_complementarity,
            self.duality_gap
        )
    }
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("problem is malformed: {0}")]
    Malformed(String),
    #[error("pivot limit exceeded after {iterations} iterations")]
    IterationLimit { iterations: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("validation failed ({report})")]
    ValidationFailed { report: ResidualReport },
    #[error("solution is not optimal")]
    NotOptimal,
}

/// Solver tolerances. Defaults: pivot 1e-9, feasibility 1e-7.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub pivot_tol: f64,
    pub feas_tol: f64,
    /// 0 means choose automatically from the problem size.
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-9,
            feas_tol: 1e-7,
            max_iterations: 0,
        }
    }
}

impl LpProblem {
    pub fn new(sense: Sense, n_vars: usize) -> Self {
        Self {
            sense,
            objective: vec![0.0; n_vars],
            rows: Vec::new(),
            lower: vec![0.0; n_vars],
            upper: vec![f64::INFINITY; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn set_objective(&mut self, coeffs: &[f64]) {
        assert_eq!(coeffs.len(), self.objective.len(), "objective arity");
        self.objective.copy_from_slice(coeffs);
    }

    pub fn objective_coeff(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    /// Bounds may be `-inf`/`+inf`; `lower == upper` fixes the variable.
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        assert!(lower <= upper, "lower bound above upper bound");
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.objective.len(), "row arity");
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
    }

    /// Sparse variant: unspecified coefficients are zero.
    pub fn add_row_sparse(&mut self, entries: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.objective.len()];
        for &(j, v) in entries {
            coeffs[j] += v;
        }
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
    }

    fn check(&self) -> Result<(), LpError> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != self.objective.len() {
                return Err(LpError::Malformed(format!("row {i} arity mismatch")));
            }
            if !row.rhs.is_finite() {
                return Err(LpError::Malformed(format!("row {i} has non-finite rhs")));
            }
        }
        for j in 0..self.n_vars() {
            if self.lower[j] > self.upper[j] {
                return Err(LpError::Malformed(format!("variable {j} has empty bounds")));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(LpError::Malformed(format!("variable {j} has NaN bound")));
            }
        }
        Ok(())
    }

    /// Dump in CPLEX LP text format for cross-checking with external tools.
    pub fn write_lp_format<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.sense {
            Sense::Minimize => writeln!(w, "Minimize")?,
            Sense::Maximize => writeln!(w, "Maximize")?,
        }
        write!(w, " obj:")?;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write!(w, " {c:+} x{j}")?;
            }
        }
        writeln!(w, "\nSubject To")?;
        for (i, row) in self.rows.iter().enumerate() {
            write!(w, " c{i}:")?;
            for (j, &a) in row.coeffs.iter().enumerate() {
                if a != 0.0 {
                    write!(w, " {a:+} x{j}")?;
                }
            }
            let rel = match row.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            writeln!(w, " {rel} {}", row.rhs)?;
        }
        writeln!(w, "Bounds")?;
        for j in 0..self.n_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                writeln!(w, " x{j} free")?;
            } else if hi == f64::INFINITY {
                writeln!(w, " {lo} <= x{j}")?;
            } else {
                writeln!(w, " {lo} <= x{j} <= {hi}")?;
            }
        }
        writeln!(w, "End")
    }
}

/// Solve with default options.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    solve_lp_with(problem, SolverOptions::default())
}

pub fn solve_lp_with(problem: &LpProblem, options: SolverOptions) -> Result<LpSolution, LpError> {
    let mut simplex = Simplex::new(problem, options)?;
    simplex.solve()?;
    Ok(simplex.solution())
}

/// Check a candidate solution against the problem.
///
/// Returns the residual report when every violation is within `feas_tol`;
/// otherwise fails carrying the report. Complementarity and the duality gap
/// are only checked when the solution carries duals.
pub fn validate(problem: &LpProblem, solution: &LpSolution) -> Result<ResidualReport, LpError> {
    if solution.status != LpStatus::Optimal {
        return Err(LpError::NotOptimal);
    }
    let n = problem.n_vars();
    if solution.values.len() != n {
        return Err(LpError::Malformed("solution arity mismatch".into()));
    }
    let x = &solution.values;
    let mut report = ResidualReport::default();

    let mut slacks = Vec::with_capacity(problem.rows.len());
    for row in &problem.rows {
        let ax: f64 = row.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        let viol = match row.relation {
            Relation::Le => (ax - row.rhs).max(0.0),
            Relation::Ge => (row.rhs - ax).max(0.0),
            Relation::Eq => (ax - row.rhs).abs(),
        };
        slacks.push(row.rhs - ax);
        report.max_constraint_violation = report.max_constraint_violation.max(viol);
    }
    for j in 0..n {
        let below = (problem.lower[j] - x[j]).max(0.0);
        let above = (x[j] - problem.upper[j]).max(0.0);
        report.max_bound_violation = report.max_bound_violation.max(below.max(above));
    }

    if solution.duals.len() == problem.rows.len() && solution.reduced_costs.len() == n {
        // Work in minimization convention.
        let sign = match problem.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut dual_obj = 0.0;
        for (i, row) in problem.rows.iter().enumerate() {
            let y = sign * solution.duals[i];
            report.max_complementarity = report.max_complementarity.max((y * slacks[i]).abs());
            dual_obj += y * row.rhs;
        }
        for j in 0..n {
            let d = sign * solution.reduced_costs[j];
            let gap_lo = x[j] - problem.lower[j];
            let gap_hi = problem.upper[j] - x[j];
            let dist = match (gap_lo.is_finite(), gap_hi.is_finite()) {
                (true, true) => gap_lo.min(gap_hi),
                (true, false) => gap_lo,
                (false, true) => gap_hi,
                (false, false) => 1.0,
            };
            report.max_complementarity = report.max_complementarity.max((d * dist).abs());
            if d > 0.0 {
                if problem.lower[j].is_finite() {
                    dual_obj += d * problem.lower[j];
                } else {
                    report.duality_gap = f64::INFINITY;
                }
            } else if d < 0.0 {
                if problem.upper[j].is_finite() {
                    dual_obj += d * problem.upper[j];
                } else {
                    report.duality_gap = f64::INFINITY;
                }
            }
        }
        let primal: f64 = sign
            * match problem.sense {
                Sense::Minimize => solution.objective,
                Sense::Maximize => solution.objective,
            };
        if report.duality_gap.is_finite() {
            report.duality_gap = (primal - dual_obj).abs();
        }
    }

    let tol = SolverOptions::default().feas_tol;
    let scale = 1.0
        + problem
            .rows
            .iter()
            .map(|r| r.rhs.abs())
            .fold(0.0, f64::max);
    if report.max_constraint_violation > tol * scale || report.max_bound_violation > tol * scale {
        return Err(LpError::ValidationFailed { report });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    FreeZero,
}

/// Reusable simplex instance. After a solve the objective can be replaced
/// with [`Simplex::set_objective`] and the problem re-solved from the current
/// basis, which is how the quantile-regression sweep stays cheap.
pub struct Simplex {
    sense: Sense,
    options: SolverOptions,
    m: usize,
    n_struct: usize,
    n_real: usize, // structurals + slacks
    width: usize,  // + artificials
    // Original (unscaled) structural data for objective/extraction.
    orig_objective: Vec<f64>,
    row_scale: Vec<f64>,
    // Internal minimization costs per column.
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    tab: Vec<f64>, // m x width, row-major: B^{-1} [A | I | E]
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    dj: Vec<f64>,
    zval: f64,
    status: Option<LpStatus>,
    iterations: usize,
    col_scratch: Vec<f64>,
    row_scratch: Vec<f64>,
}

impl Simplex {
    pub fn new(problem: &LpProblem, options: SolverOptions) -> Result<Self, LpError> {
        problem.check()?;
        let m = problem.n_rows();
        let n = problem.n_vars();
        let n_real = n + m;

        let mut lower = Vec::with_capacity(n_real);
        let mut upper = Vec::with_capacity(n_real);
        lower.extend_from_slice(&problem.lower);
        upper.extend_from_slice(&problem.upper);
        for row in &problem.rows {
            match row.relation {
                Relation::Le => {
                    lower.push(0.0);
                    upper.push(f64::INFINITY);
                }
                Relation::Ge => {
                    lower.push(f64::NEG_INFINITY);
                    upper.push(0.0);
                }
                Relation::Eq => {
                    lower.push(0.0);
                    upper.push(0.0);
                }
            }
        }

        // Equilibrate rows to unit max-abs coefficient.
        let mut row_scale = Vec::with_capacity(m);
        for row in &problem.rows {
            let mx = row
                .coeffs
                .iter()
                .map(|a| a.abs())
                .fold(row.rhs.abs(), f64::max);
            row_scale.push(if mx > 0.0 { mx } else { 1.0 });
        }

        // Nonbasic starting point.
        let mut state = vec![VarState::AtLower; n_real];
        let mut xval = vec![0.0; n_real];
        for j in 0..n_real {
            if lower[j].is_finite() {
                state[j] = VarState::AtLower;
                xval[j] = lower[j];
            } else if upper[j].is_finite() {
                state[j] = VarState::AtUpper;
                xval[j] = upper[j];
            } else {
                state[j] = VarState::FreeZero;
                xval[j] = 0.0;
            }
        }

        // Initial basic values for the slack of each row.
        let mut beta0 = Vec::with_capacity(m);
        for (i, row) in problem.rows.iter().enumerate() {
            let mut v = row.rhs;
            for j in 0..n {
                v -= row.coeffs[j] * xval[j];
            }
            beta0.push(v / row_scale[i]);
        }

        // Decide which rows need an artificial. The slack bounds are scale
        // invariant (one-sided at zero), so compare in scaled units.
        let guard = 1e-11;
        let mut art_rows: Vec<(usize, f64)> = Vec::new(); // (row, sign)
        let mut slack_start = vec![VarState::Basic; m];
        let mut beta = beta0.clone();
        for i in 0..m {
            let (sl, su) = (lower[n + i], upper[n + i]);
            if beta0[i] < sl - guard {
                slack_start[i] = VarState::AtLower;
                let r = beta0[i] - sl;
                art_rows.push((i, r.signum()));
                beta[i] = r.abs();
            } else if beta0[i] > su + guard {
                slack_start[i] = VarState::AtUpper;
                let r = beta0[i] - su;
                art_rows.push((i, r.signum()));
                beta[i] = r.abs();
            } else {
                beta[i] = beta0[i].clamp(sl, su);
            }
        }
        let n_art = art_rows.len();
        let width = n_real + n_art;

        let mut tab = vec![0.0; m * width];
        for (i, row) in problem.rows.iter().enumerate() {
            let s = row_scale[i];
            let base = i * width;
            for j in 0..n {
                tab[base + j] = row.coeffs[j] / s;
            }
            tab[base + n + i] = 1.0;
        }
        let mut basis: Vec<usize> = (n..n_real).collect();
        let mut art_bounds = Vec::new();
        for (k, &(i, sign)) in art_rows.iter().enumerate() {
            let col = n_real + k;
            tab[i * width + col] = sign;
            if sign < 0.0 {
                // Normalize the row so the basic artificial column is +1.
                for v in &mut tab[i * width..(i + 1) * width] {
                    *v = -*v;
                }
            }
            basis[i] = col;
            art_bounds.push(col);
        }

        let mut full_state = state;
        for i in 0..m {
            let sj = n + i;
            if slack_start[i] == VarState::Basic {
                full_state[sj] = VarState::Basic;
            } else if slack_start[i] == VarState::AtUpper {
                full_state[sj] = VarState::AtUpper;
            } else {
                full_state[sj] = VarState::AtLower;
            }
        }
        for col in art_bounds {
            full_state.push(VarState::Basic);
            lower.push(0.0);
            upper.push(f64::INFINITY);
            let _ = col;
        }

        let sign = match problem.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; width];
        for j in 0..n {
            cost[j] = sign * problem.objective[j];
        }

        Ok(Self {
            sense: problem.sense,
            options,
            m,
            n_struct: n,
            n_real,
            width,
            orig_objective: problem.objective.clone(),
            row_scale,
            cost,
            lower,
            upper,
            tab,
            beta,
            basis,
            state: full_state,
            dj: vec![0.0; width],
            zval: 0.0,
            status: None,
            iterations: 0,
            col_scratch: vec![0.0; m],
            row_scratch: vec![0.0; width],
        })
    }

    fn max_iterations(&self) -> usize {
        if self.options.max_iterations > 0 {
            self.options.max_iterations
        } else {
            1000 + 50 * (self.m + self.width)
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtLower => self.lower[j],
            VarState::AtUpper => self.upper[j],
            VarState::FreeZero => 0.0,
            VarState::Basic => unreachable!("basic var has no bound value"),
        }
    }

    fn recompute_pricing(&mut self, costs: &[f64]) {
        // dj_j = c_j - c_B' (B^{-1} A_j), z = c' x.
        let mut cb = vec![0.0; self.m];
        for i in 0..self.m {
            cb[i] = costs[self.basis[i]];
        }
        for j in 0..self.width {
            let mut d = costs[j];
            if self.state[j] == VarState::Basic {
                self.dj[j] = 0.0;
                continue;
            }
            for i in 0..self.m {
                let t = self.tab[i * self.width + j];
                if t != 0.0 {
                    d -= cb[i] * t;
                }
            }
            self.dj[j] = d;
        }
        let mut z = 0.0;
        for j in 0..self.width {
            let v = match self.state[j] {
                VarState::Basic => continue,
                _ => self.nonbasic_value(j),
            };
            z += costs[j] * v;
        }
        for i in 0..self.m {
            z += cb[i] * self.beta[i];
        }
        self.zval = z;
    }

    /// Replace the structural objective and invalidate the solved status.
    /// The current basis is kept, so a following [`Simplex::solve`] warm
    /// starts from it.
    pub fn set_objective(&mut self, coeffs: &[f64]) {
        assert_eq!(coeffs.len(), self.n_struct, "objective arity");
        let sign = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        self.orig_objective.copy_from_slice(coeffs);
        for j in 0..self.n_struct {
            self.cost[j] = sign * coeffs[j];
        }
        self.status = None;
    }

    pub fn status(&self) -> Option<LpStatus> {
        self.status
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Run (or re-run) the simplex. Returns the final status.
    pub fn solve(&mut self) -> Result<LpStatus, LpError> {
        let has_artificials = self.width > self.n_real;
        let live_artificial = self.basis.iter().enumerate().any(|(i, &b)| {
            b >= self.n_real && self.upper[b] > 0.0 && self.beta[i] > self.options.feas_tol
        });
        if live_artificial {
            let mut c1 = vec![0.0; self.width];
            for c in c1.iter_mut().skip(self.n_real) {
                *c = 1.0;
            }
            self.recompute_pricing(&c1);
            let outcome = self.iterate()?;
            if outcome == IterOutcome::Unbounded {
                return Err(LpError::Numerical(
                    "phase 1 reported an unbounded direction".into(),
                ));
            }
            if self.zval > self.options.feas_tol {
                self.status = Some(LpStatus::Infeasible);
                return Ok(LpStatus::Infeasible);
            }
        }
        if has_artificials {
            self.expel_artificials();
        }

        let costs = self.cost.clone();
        self.recompute_pricing(&costs);
        let outcome = self.iterate()?;
        let status = match outcome {
            IterOutcome::Optimal => LpStatus::Optimal,
            IterOutcome::Unbounded => LpStatus::Unbounded,
        };
        self.status = Some(status);
        Ok(status)
    }

    /// Pivot basic artificials out after phase 1; rows where no real pivot
    /// exists are redundant and keep their artificial pinned at zero.
    fn expel_artificials(&mut self) {
        for r in 0..self.m {
            let b = self.basis[r];
            if b < self.n_real {
                continue;
            }
            let base = r * self.width;
            let mut best = 0usize;
            let mut best_abs = self.options.pivot_tol;
            let mut found = false;
            for j in 0..self.n_real {
                if self.state[j] == VarState::Basic {
                    continue;
                }
                let a = self.tab[base + j].abs();
                if a > best_abs {
                    best_abs = a;
                    best = j;
                    found = true;
                }
            }
            if found {
                for i in 0..self.m {
                    self.col_scratch[i] = self.tab[i * self.width + best];
                }
                let entering_value = self.nonbasic_value(best);
                self.pivot(r, best, entering_value, VarState::AtLower);
            } else {
                // Redundant row: freeze the artificial at zero.
                self.lower[b] = 0.0;
                self.upper[b] = 0.0;
                self.beta[r] = 0.0;
            }
        }
        // Ban the artificial columns from re-entering.
        for j in self.n_real..self.width {
            if self.state[j] != VarState::Basic {
                self.lower[j] = 0.0;
                self.upper[j] = 0.0;
                self.state[j] = VarState::AtLower;
            }
        }
    }

    fn pivot(&mut self, r: usize, e: usize, entering_value: f64, leaving_state: VarState) {
        let width = self.width;
        let piv = self.tab[r * width + e];
        debug_assert!(piv.abs() > 0.0, "zero pivot");
        let inv = 1.0 / piv;
        {
            let row = &mut self.tab[r * width..(r + 1) * width];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[e] = 1.0;
            self.row_scratch.copy_from_slice(row);
        }
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.col_scratch[i];
            if f.abs() <= 1e-12 {
                continue;
            }
            let row = &mut self.tab[i * width..(i + 1) * width];
            for (v, &p) in row.iter_mut().zip(self.row_scratch.iter()) {
                *v -= f * p;
            }
            row[e] = 0.0;
        }
        let de = self.dj[e];
        if de != 0.0 {
            for (d, &p) in self.dj.iter_mut().zip(self.row_scratch.iter()) {
                *d -= de * p;
            }
        }
        self.dj[e] = 0.0;
        let leaving = self.basis[r];
        self.state[leaving] = leaving_state;
        self.basis[r] = e;
        self.state[e] = VarState::Basic;
        self.beta[r] = entering_value;
    }

    fn iterate(&mut self) -> Result<IterOutcome, LpError> {
        let dtol = 1e-9;
        let degen_tol = 1e-11;
        let max_iter = self.max_iterations();
        let mut degen_run = 0usize;
        let bland_after = 3 * self.width;

        loop {
            if self.iterations >= max_iter {
                return Err(LpError::IterationLimit {
                    iterations: self.iterations,
                });
            }
            let bland = degen_run > bland_after;

            // Entering variable. Artificial columns never re-enter.
            let mut enter: Option<(usize, f64)> = None; // (col, direction)
            let mut best_score = dtol;
            for j in 0..self.n_real {
                if self.state[j] == VarState::Basic {
                    continue;
                }
                if self.lower[j] == self.upper[j] {
                    continue; // fixed
                }
                let d = self.dj[j];
                let dir = match self.state[j] {
                    VarState::AtLower => {
                        if d < -dtol {
                            1.0
                        } else {
                            continue;
                        }
                    }
                    VarState::AtUpper => {
                        if d > dtol {
                            -1.0
                        } else {
                            continue;
                        }
                    }
                    VarState::FreeZero => {
                        if d < -dtol {
                            1.0
                        } else if d > dtol {
                            -1.0
                        } else {
                            continue;
                        }
                    }
                    VarState::Basic => unreachable!(),
                };
                if bland {
                    enter = Some((j, dir));
                    break;
                }
                if d.abs() > best_score {
                    best_score = d.abs();
                    enter = Some((j, dir));
                }
            }
            let Some((e, dir)) = enter else {
                return Ok(IterOutcome::Optimal);
            };

            for i in 0..self.m {
                self.col_scratch[i] = self.tab[i * self.width + e];
            }

            // Ratio test.
            let own_range = self.upper[e] - self.lower[e]; // may be +inf/NaN-free
            let mut t_best = if own_range.is_finite() {
                own_range
            } else {
                f64::INFINITY
            };
            let mut leave: Option<(usize, VarState, f64)> = None; // (row, bound leaving var rests at, |pivot|)
            for i in 0..self.m {
                let a = dir * self.col_scratch[i];
                if a.abs() <= self.options.pivot_tol {
                    continue;
                }
                let bi = self.basis[i];
                let (t_i, hits) = if a > 0.0 {
                    if self.lower[bi].is_finite() {
                        ((self.beta[i] - self.lower[bi]) / a, VarState::AtLower)
                    } else {
                        continue;
                    }
                } else if self.upper[bi].is_finite() {
                    ((self.upper[bi] - self.beta[i]) / (-a), VarState::AtUpper)
                } else {
                    continue;
                };
                let t_i = t_i.max(0.0);
                let replace = if t_i < t_best - 1e-12 {
                    true
                } else if t_i < t_best + 1e-12 {
                    match leave {
                        None => true,
                        Some((ri, _, ra)) => {
                            if bland {
                                self.basis[i] < self.basis[ri]
                            } else {
                                a.abs() > ra
                            }
                        }
                    }
                } else {
                    false
                };
                if replace {
                    t_best = t_best.min(t_i);
                    leave = Some((i, hits, a.abs()));
                }
            }

            if !t_best.is_finite() {
                return Ok(IterOutcome::Unbounded);
            }
            let t = t_best.max(0.0);
            if t <= degen_tol {
                degen_run += 1;
            } else {
                degen_run = 0;
            }

            let delta = dir * t;
            for i in 0..self.m {
                let c = self.col_scratch[i];
                if c != 0.0 {
                    self.beta[i] -= delta * c;
                }
            }
            self.zval += delta * self.dj[e];

            match leave {
                None => {
                    // Bound flip.
                    self.state[e] = match self.state[e] {
                        VarState::AtLower => VarState::AtUpper,
                        VarState::AtUpper => VarState::AtLower,
                        other => other,
                    };
                }
                Some((r, hits, _)) => {
                    let entering_value = match self.state[e] {
                        VarState::AtLower => self.lower[e] + delta,
                        VarState::AtUpper => self.upper[e] + delta,
                        VarState::FreeZero => delta,
                        VarState::Basic => unreachable!(),
                    };
                    self.pivot(r, e, entering_value, hits);
                }
            }
            self.iterations += 1;
        }
    }

    /// Extract the solution in original-problem terms.
    pub fn solution(&self) -> LpSolution {
        let status = self.status.unwrap_or(LpStatus::Infeasible);
        if status != LpStatus::Optimal {
            return LpSolution {
                status,
                values: Vec::new(),
                objective: f64::NAN,
                duals: Vec::new(),
                reduced_costs: Vec::new(),
                iterations: self.iterations,
            };
        }
        let mut x = vec![0.0; self.n_struct];
        for j in 0..self.n_struct {
            x[j] = match self.state[j] {
                VarState::AtLower => self.lower[j],
                VarState::AtUpper => self.upper[j],
                VarState::FreeZero => 0.0,
                VarState::Basic => {
                    let r = self.basis.iter().position(|&b| b == j).expect("basic row");
                    self.beta[r]
                }
            };
            // Sweep out round-off dust against the bounds.
            if self.lower[j].is_finite() && x[j] < self.lower[j] {
                if self.lower[j] - x[j] < self.options.feas_tol {
                    x[j] = self.lower[j];
                }
            } else if self.upper[j].is_finite() && x[j] > self.upper[j] && x[j] - self.upper[j] < self.options.feas_tol {
                x[j] = self.upper[j];
            }
        }
        let objective: f64 = self
            .orig_objective
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum();
        let sign = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut duals = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let d_slack = self.dj[self.n_struct + i];
            duals.push(sign * -d_slack / self.row_scale[i]);
        }
        let mut reduced = Vec::with_capacity(self.n_struct);
        for j in 0..self.n_struct {
            reduced.push(sign * self.dj[j]);
        }
        LpSolution {
            status,
            values: x,
            objective,
            duals,
            reduced_costs: reduced,
            iterations: self.iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IterOutcome {
    Optimal,
    Unbounded,
}
