//! Small conic-programming layer for gain design problems.
//!
//! Design problems are stated over a gain matrix `G` (`n_f x n`) as a set of
//! matrix-quadratic constraints `(G X + Y)(G X + Y)^T <= S` plus either a
//! trace objective `tr(G Sigma G^T)` or a scalar bound to minimize. They are
//! lowered to a standard conic form `A x + s = b, s in K,
//! min 1/2 x^T P x + c^T x` and
//! handed to a backend (Clarabel). Constraint residuals are always
//! recomputed from the returned `G` without trusting solver internals.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Inaccurate,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Inaccurate => "inaccurate",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

/// Cone of one constraint block; the size is the number of rows of `s`
/// except for `Psd`, whose parameter is the matrix dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cone", content = "dim", rename_all = "snake_case")]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    Soc(usize),
    Psd(usize),
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonneg(n) | Cone::Soc(n) => n,
            Cone::Psd(d) => d * (d + 1) / 2,
        }
    }
}

/// `min 1/2 x^T P x + c^T x  s.t.  b - A x in K`. `P` (upper triangle) and
/// `A` are stored as triplets. PSD blocks use the scaled upper triangle,
/// column by column, off-diagonals times `sqrt(2)`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub p_rows: Vec<usize>,
    pub p_cols: Vec<usize>,
    pub p_vals: Vec<f64>,
    pub c: Vec<f64>,
    pub a_rows: Vec<usize>,
    pub a_cols: Vec<usize>,
    pub a_vals: Vec<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

/// Affine scalar `constant + sum coef * x[var]`.
#[derive(Clone, Debug, Default)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        ConicProgram { n_vars, c: vec![0.0; n_vars], ..Default::default() }
    }

    fn push_row(&mut self, expr: &Affine) {
        let row = self.b.len();
        self.b.push(expr.constant);
        for &(var, coef) in &expr.terms {
            if coef != 0.0 {
                self.a_rows.push(row);
                self.a_cols.push(var);
                self.a_vals.push(-coef);
            }
        }
    }

    pub fn add_nonneg(&mut self, exprs: &[Affine]) {
        exprs.iter().for_each(|e| self.push_row(e));
        self.cones.push(Cone::Nonneg(exprs.len()));
    }

    /// `exprs[0] >= || exprs[1..] ||`
    pub fn add_soc(&mut self, exprs: &[Affine]) {
        exprs.iter().for_each(|e| self.push_row(e));
        self.cones.push(Cone::Soc(exprs.len()));
    }

    /// Symmetric affine matrix `F(x) >= 0` given its upper-triangle entries
    /// `entries[(i, j)]` with `i <= j`, column by column.
    pub fn add_psd(&mut self, dim: usize, upper: impl Fn(usize, usize) -> Affine) {
        let s2 = std::f64::consts::SQRT_2;
        for j in 0..dim {
            for i in 0..=j {
                let mut e = upper(i, j);
                if i != j {
                    e.constant *= s2;
                    e.terms.iter_mut().for_each(|t| t.1 *= s2);
                }
                self.push_row(&e);
            }
        }
        self.cones.push(Cone::Psd(dim));
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let rows: usize = self.cones.iter().map(Cone::rows).sum();
        if rows != self.b.len() || self.c.len() != self.n_vars {
            return Err(Error::ShapeMismatch(format!(
                "conic program has {} rows but cones cover {rows}",
                self.b.len()
            )));
        }
        if self.p_rows.iter().zip(&self.p_cols).any(|(&i, &j)| i > j || j >= self.n_vars) {
            return Err(Error::ShapeMismatch("quadratic objective must be upper triangular".into()));
        }
        if self.a_cols.iter().any(|&j| j >= self.n_vars) {
            return Err(Error::ShapeMismatch("constraint references an unknown variable".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: u32,
    pub solve_ms: f64,
}

/// Backend boundary; the design code only sees this trait.
pub trait ConicBackend: Sync {
    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution>;
}

/// Interior-point backend with feasibility and gap tolerances of 1e-8.
#[derive(Clone, Debug)]
pub struct ClarabelBackend {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        ClarabelBackend { tol: 1e-8, max_iter: 200 }
    }
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution> {
        prog.validate()?;
        let start = Instant::now();
        let n = prog.n_vars;
        let p = CscMatrix::new_from_triplets(n, n, prog.p_rows.clone(), prog.p_cols.clone(), prog.p_vals.clone());
        let a = CscMatrix::new_from_triplets(
            prog.n_rows(),
            n,
            prog.a_rows.clone(),
            prog.a_cols.clone(),
            prog.a_vals.clone(),
        );
        let cones: Vec<SupportedConeT<f64>> = prog
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(k) => SupportedConeT::ZeroConeT(k),
                Cone::Nonneg(k) => SupportedConeT::NonnegativeConeT(k),
                Cone::Soc(k) => SupportedConeT::SecondOrderConeT(k),
                Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_feas(self.tol)
            .tol_gap_abs(self.tol)
            .tol_gap_rel(self.tol)
            .max_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &prog.c, &a, &prog.b, &cones, settings).map_err(|e| {
            Error::SolverFailure { status: SolveStatus::NumericalFailure, detail: format!("setup: {e:?}") }
        })?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::Inaccurate,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::NumericalFailure,
        };
        log::debug!("conic solve: {:?} in {} iterations", sol.status, sol.iterations);
        Ok(ConicSolution {
            x: sol.x.clone(),
            status,
            objective: sol.obj_val,
            iterations: sol.iterations,
            solve_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Right-hand side of a quadratic constraint: `S = s0 + bound * I`, where
/// `bound` is either a fixed number or the scalar decision variable.
#[derive(Clone, Debug)]
pub enum Bound {
    Fixed(f64),
    Variable,
}

/// `(G X + Y)(G X + Y)^T <= s0 + bound * I`
#[derive(Clone, Debug)]
pub struct QuadConstraint {
    pub x: Mat,
    pub y: Mat,
    pub s0: Mat,
    pub bound: Bound,
}

impl QuadConstraint {
    pub fn lhs(&self, g: &Mat) -> Mat {
        let v = g * &self.x + &self.y;
        &v * v.transpose()
    }

    pub fn rhs(&self, bound_value: f64) -> Mat {
        let b = match self.bound {
            Bound::Fixed(b) => b,
            Bound::Variable => bound_value,
        };
        &self.s0 + Mat::identity(self.s0.nrows(), self.s0.nrows()) * b
    }

    /// `lambda_max(lhs - rhs)`; positive means violated.
    pub fn violation(&self, g: &Mat, bound_value: f64) -> f64 {
        linalg::lambda_max(&(self.lhs(g) - self.rhs(bound_value)))
    }

    /// The lifted matrix `[[S, G X + Y], [(G X + Y)^T, I]]` evaluated at `g`.
    pub fn lifted(&self, g: &Mat, bound_value: f64) -> Mat {
        let v = g * &self.x + &self.y;
        let (nf, k) = v.shape();
        let mut m = Mat::identity(nf + k, nf + k);
        m.view_mut((0, 0), (nf, nf)).copy_from(&self.rhs(bound_value));
        m.view_mut((0, nf), (nf, k)).copy_from(&v);
        m.view_mut((nf, 0), (k, nf)).copy_from(&v.transpose());
        m
    }
}

/// Factor `W` with `W W^T = M` by symmetric eigendecomposition, dropping
/// round-off negative eigenvalues and (numerically) null directions.
pub fn psd_factor_clipped(m: &Mat) -> Result<Mat> {
    let (vals, vecs) = linalg::sym_eigen(m);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if let Some(&lo) = vals.iter().find(|&&v| v < -1e-8 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::IndefiniteMiddleMatrix(lo));
    }
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-14 * scale).collect();
    let mut w = Mat::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        w.set_column(c, &(vecs.column(i) * vals[i].sqrt()));
    }
    Ok(w)
}

/// `[G C] M [G C]^T <= gamma2 I` for a PSD middle matrix `M` whose leading
/// block matches the columns of `G`; `c` is the constant companion block.
pub fn quad_constraint_to_psd(middle: &Mat, c: &Mat, bound: Bound) -> Result<QuadConstraint> {
    let n = middle.nrows() - c.ncols();
    let w = psd_factor_clipped(&linalg::symmetrize(middle))?;
    let x = w.rows(0, n).into_owned();
    let y = c * w.rows(n, c.ncols());
    Ok(QuadConstraint { x, y, s0: Mat::zeros(c.nrows(), c.nrows()), bound })
}

#[derive(Clone, Debug)]
pub enum Objective {
    /// `tr(G Sigma G^T)` with `Sigma = half half^T`.
    Trace(Mat),
    /// Minimize the variable bound shared by the `Bound::Variable` constraints.
    Bound,
}

/// `tr(G Sigma G^T)` for `Sigma = half half^T`.
pub fn trace_objective(g: &Mat, half: &Mat) -> f64 {
    (g * half).norm_squared()
}

/// A gain design problem over `G` of shape `n_f x n`.
#[derive(Clone, Debug)]
pub struct GainProblem {
    pub n_f: usize,
    pub n: usize,
    pub constraints: Vec<QuadConstraint>,
    pub objective: Objective,
}

#[derive(Clone, Debug)]
pub struct GainSolution {
    pub g: Mat,
    pub bound: f64,
    /// Objective recomputed from `g`.
    pub objective: f64,
    pub status: SolveStatus,
    /// `lambda_max(lhs - rhs)` per constraint, recomputed from `g`.
    pub violations: Vec<f64>,
    pub solve_ms: f64,
    pub iterations: u32,
}

impl GainProblem {
    fn g_var(&self, r: usize, c: usize) -> usize {
        r + c * self.n_f
    }

    fn has_bound(&self) -> bool {
        matches!(self.objective, Objective::Bound) || self.constraints.iter().any(|q| matches!(q.bound, Bound::Variable))
    }

    /// Lowers to conic form. Variables: `vec(G)` column-major, then the
    /// bound if used. A trace objective becomes the quadratic term
    /// `P = 2 (Sigma (x) I_nf)`.
    pub fn lower(&self) -> Result<ConicProgram> {
        let ng = self.n_f * self.n;
        let bound_var = self.has_bound().then_some(ng);
        let n_vars = ng + bound_var.map_or(0, |_| 1);
        let mut prog = ConicProgram::new(n_vars);

        for q in &self.constraints {
            if q.x.nrows() != self.n || q.y.nrows() != self.n_f || q.x.ncols() != q.y.ncols() {
                return Err(Error::ShapeMismatch("quadratic constraint does not match the gain shape".into()));
            }
            let (nf, k) = (self.n_f, q.x.ncols());
            let bv = match q.bound {
                Bound::Fixed(b) => Affine { constant: b, terms: vec![] },
                Bound::Variable => Affine { constant: 0.0, terms: vec![(bound_var.unwrap(), 1.0)] },
            };
            prog.add_psd(nf + k, |i, j| {
                if j < nf {
                    let mut e = bv.clone();
                    if i != j {
                        e.terms.clear();
                        e.constant = 0.0;
                    }
                    e.constant += q.s0[(i, j)];
                    e
                } else if i < nf {
                    let col = j - nf;
                    Affine {
                        constant: q.y[(i, col)],
                        terms: (0..self.n).map(|c| (self.g_var(i, c), q.x[(c, col)])).collect(),
                    }
                } else {
                    Affine { constant: if i == j { 1.0 } else { 0.0 }, terms: vec![] }
                }
            });
        }

        match &self.objective {
            Objective::Trace(half) => {
                if half.nrows() != self.n {
                    return Err(Error::ShapeMismatch("objective factor does not match the gain shape".into()));
                }
                let sigma = half * half.transpose();
                for c2 in 0..self.n {
                    for c1 in 0..=c2 {
                        let v = 2.0 * sigma[(c1, c2)];
                        if v == 0.0 {
                            continue;
                        }
                        for r in 0..self.n_f {
                            prog.p_rows.push(self.g_var(r, c1));
                            prog.p_cols.push(self.g_var(r, c2));
                            prog.p_vals.push(v);
                        }
                    }
                }
            }
            Objective::Bound => {
                let b = bound_var.unwrap();
                prog.c[b] = 1.0;
                prog.add_nonneg(&[Affine { constant: 0.0, terms: vec![(b, 1.0)] }]);
            }
        }
        Ok(prog)
    }

    pub fn solve(&self, backend: &dyn ConicBackend) -> Result<GainSolution> {
        let prog = self.lower()?;
        let sol = backend.solve(&prog)?;
        match sol.status {
            SolveStatus::Optimal | SolveStatus::Inaccurate => {}
            status => {
                return Err(Error::SolverFailure {
                    status,
                    detail: format!("{} iterations, {:.1} ms", sol.iterations, sol.solve_ms),
                })
            }
        }
        let ng = self.n_f * self.n;
        let g = Mat::from_column_slice(self.n_f, self.n, &sol.x[..ng]);
        let bound = if self.has_bound() { sol.x[ng] } else { 0.0 };
        let objective = match &self.objective {
            Objective::Trace(half) => trace_objective(&g, half),
            Objective::Bound => bound,
        };
        let violations: Vec<f64> = self.constraints.iter().map(|q| q.violation(&g, bound)).collect();
        if sol.status == SolveStatus::Inaccurate {
            let scale = self.constraints.iter().map(|q| q.rhs(bound).norm()).fold(1.0, f64::max);
            if violations.iter().any(|&v| v > 1e-6 * scale) {
                return Err(Error::SolverFailure {
                    status: sol.status,
                    detail: format!("reduced-accuracy solution violates constraints by {violations:?}"),
                });
            }
            log::warn!("conic solver returned a reduced-accuracy solution; constraints verified independently");
        }
        Ok(GainSolution {
            g,
            bound,
            objective,
            status: sol.status,
            violations,
            solve_ms: sol.solve_ms,
            iterations: sol.iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    #[test]
    fn psd_rows_count() {
        assert_eq!(Cone::Psd(3).rows(), 6);
        let mut p = ConicProgram::new(1);
        p.add_psd(3, |_, _| Affine::default());
        assert_eq!(p.n_rows(), 6);
        p.validate().unwrap();
    }

    #[test]
    fn zero_middle_is_trivially_feasible() {
        let q = quad_constraint_to_psd(&Mat::zeros(3, 3), &Mat::zeros(1, 1), Bound::Fixed(0.0)).unwrap();
        assert_eq!(q.x.ncols(), 0);
        assert!(q.violation(&m(1, 2, &[5.0, -3.0]), 0.0) <= 0.0);
    }

    #[test]
    fn indefinite_middle_rejected() {
        let mid = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            quad_constraint_to_psd(&mid, &Mat::zeros(1, 1), Bound::Fixed(1.0)),
            Err(Error::IndefiniteMiddleMatrix(_))
        ));
    }

    #[test]
    fn scalar_lift_matches_quadratic() {
        // g^2 m <= gamma2  <=>  [[gamma2, g sqrt(m)], [., 1]] >= 0
        let mid = m(2, 2, &[4.0, 0.0, 0.0, 0.0]);
        let q = quad_constraint_to_psd(&mid, &Mat::zeros(1, 1), Bound::Fixed(1.0)).unwrap();
        for g in [-0.6, -0.5, 0.2, 0.49, 0.51] {
            let gm = m(1, 1, &[g]);
            let lift_ok = linalg::lambda_min(&q.lifted(&gm, 1.0)) >= -1e-12;
            assert_eq!(lift_ok, 4.0 * g * g <= 1.0 + 1e-12, "g = {g}");
        }
    }

    #[test]
    fn trace_objective_identity_weight() {
        let g = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(trace_objective(&g, &Mat::identity(2, 2)), 30.0);
    }

    #[test]
    fn minimize_trace_under_ball() {
        // min ||G||_F^2 s.t. (G - 1)(G - 1)^T <= 0.25  ->  G = 0.5
        let q = QuadConstraint {
            x: Mat::identity(1, 1),
            y: m(1, 1, &[-1.0]),
            s0: Mat::zeros(1, 1),
            bound: Bound::Fixed(0.25),
        };
        let prob = GainProblem { n_f: 1, n: 1, constraints: vec![q], objective: Objective::Trace(Mat::identity(1, 1)) };
        let sol = prob.solve(&ClarabelBackend::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.g[(0, 0)] - 0.5).abs() < 1e-6, "{}", sol.g);
        assert!(sol.violations[0] < 1e-7);
    }

    #[test]
    fn minimize_bound() {
        // min gamma s.t. G G^T <= gamma I, (G - 1)^2 <= 0.25  ->  gamma = 0.25
        let ball = QuadConstraint { x: Mat::identity(1, 1), y: m(1, 1, &[-1.0]), s0: Mat::zeros(1, 1), bound: Bound::Fixed(0.25) };
        let norm = QuadConstraint { x: Mat::identity(1, 1), y: Mat::zeros(1, 1), s0: Mat::zeros(1, 1), bound: Bound::Variable };
        let prob = GainProblem { n_f: 1, n: 1, constraints: vec![ball, norm], objective: Objective::Bound };
        let sol = prob.solve(&ClarabelBackend::default()).unwrap();
        assert!((sol.bound - 0.25).abs() < 1e-6, "{}", sol.bound);
    }

    #[test]
    fn infeasible_reported() {
        // (G - 1)^2 <= -1 has no solution.
        let q = QuadConstraint { x: Mat::identity(1, 1), y: m(1, 1, &[-1.0]), s0: Mat::zeros(1, 1), bound: Bound::Fixed(-1.0) };
        let prob = GainProblem { n_f: 1, n: 1, constraints: vec![q], objective: Objective::Trace(Mat::identity(1, 1)) };
        match prob.solve(&ClarabelBackend::default()) {
            Err(Error::SolverFailure { status, .. }) => assert_eq!(status, SolveStatus::Infeasible),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn program_json_roundtrip() {
        let mut p = ConicProgram::new(2);
        p.add_soc(&[Affine { constant: 1.0, terms: vec![(0, 1.0)] }, Affine { constant: 0.0, terms: vec![(1, 2.0)] }]);
        let back: ConicProgram = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(back.cones, vec![Cone::Soc(2)]);
        assert_eq!(back.a_vals, vec![-1.0, -2.0]);
    }
}
