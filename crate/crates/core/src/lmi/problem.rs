use nalgebra::DVector;

use super::expr::{AffineMatrixExpr, VarKind, VarRef};
use super::sdp::{BlockValue, ConeBlock, ConicBackend, InteriorPoint, IpmSettings, SdpProblem, SdpStatus};
use crate::error::{Error, Result};
use crate::matcore::{max_sym_eig, min_sym_eig, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    /// `expr ≺ 0`
    NegativeDefinite,
    /// `expr ≻ 0`
    PositiveDefinite,
}

#[derive(Clone, Debug)]
pub struct LmiConstraint {
    pub label: String,
    pub expr: AffineMatrixExpr,
    pub sense: Sense,
}

/// Relative width at which objective bisection stops.
const REFINE_REL: f64 = 1e-9;
/// Objective magnitude below which the bisection width is absolute.
const REFINE_FLOOR: f64 = 1e-9;
const REFINE_MAX_STEPS: usize = 40;

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Strict inequalities become `≼ -ε·I` with `ε = eps_rel · scale`,
    /// where `scale` is the largest Frobenius norm among the constraint's
    /// constant term and coefficient matrices.
    pub eps_rel: f64,
    /// Margin used instead of `eps_rel` when an objective is minimized.
    /// Near an optimum the attainable margin grows slowly with the
    /// objective, so a margin of `eps_rel` would bias the optimal value.
    pub objective_eps_rel: f64,
    /// Relative duality gap at which the interior-point method stops.
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Box `|x_k| ≤ var_bound` on every scalar unknown.
    pub var_bound: f64,
    /// Tolerance for accepting a dual ray as an infeasibility certificate.
    pub cert_tol: f64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_rel: 1e-7,
            objective_eps_rel: 1e-9,
            gap_tol: 1e-8,
            feas_tol: 1e-9,
            max_iter: 120,
            var_bound: 1e6,
            cert_tol: 1e-8,
            verbose: false,
        }
    }
}

impl SolverOptions {
    fn ipm(&self) -> IpmSettings {
        IpmSettings {
            max_iter: self.max_iter,
            gap_tol: self.gap_tol.min(1e-9),
            feas_tol: self.feas_tol,
            verbose: self.verbose,
            ..IpmSettings::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmiStatus {
    Feasible,
    /// A dual improving ray certifies that no point satisfies the
    /// ε-shifted constraints.
    Infeasible,
    /// Neither a verified point nor a clean certificate was found.
    Marginal,
    Failed,
}

#[derive(Clone, Debug)]
pub struct LmiSolution {
    pub status: LmiStatus,
    /// Flat assignment of all scalar unknowns.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Worst constraint value at `x`: the largest eigenvalue of `expr`
    /// for `≺ 0` constraints and of `-expr` for `≻ 0` ones, normalized by
    /// the constraint's scale. Negative when every constraint holds.
    pub max_residual: f64,
    /// Optimal value of the feasibility phase `min t s.t. F_i(x) + εI ≼ t·I`
    /// (normalized units; negative iff strictly feasible with margin).
    pub feasibility_margin: f64,
    pub iterations: usize,
    pub diagnostics: String,
}

impl LmiSolution {
    pub fn value(&self, v: &VarRef) -> Matrix {
        v.value(&self.x)
    }

    pub fn scalar(&self, v: &VarRef) -> f64 {
        v.value(&self.x)[(0, 0)]
    }

    pub fn is_feasible(&self) -> bool {
        self.status == LmiStatus::Feasible
    }
}

/// A set of strict LMIs in matrix decision variables with an optional
/// linear objective to minimize.
#[derive(Clone, Debug, Default)]
pub struct LmiProblem {
    vars: Vec<VarRef>,
    nscalars: usize,
    constraints: Vec<LmiConstraint>,
    objective: Option<AffineMatrixExpr>,
}

/// One constraint in `S = C - Σ x_k A_k ⪰ 0` form, normalized.
struct Lowered {
    c: Matrix,
    a: Vec<(usize, Matrix)>,
    scale: f64,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_var(&mut self, name: &str, rows: usize, cols: usize, kind: VarKind) -> VarRef {
        let v = VarRef {
            id: self.vars.len(),
            rows,
            cols,
            kind,
            offset: self.nscalars,
            name: name.to_string(),
        };
        self.nscalars += v.scalar_count();
        self.vars.push(v.clone());
        v
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarRef {
        self.add_var(name, n, n, VarKind::Symmetric)
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> VarRef {
        self.add_var(name, rows, cols, VarKind::Full)
    }

    pub fn scalar(&mut self, name: &str) -> VarRef {
        self.add_var(name, 1, 1, VarKind::Full)
    }

    pub fn variables(&self) -> &[VarRef] {
        &self.vars
    }

    pub fn num_scalars(&self) -> usize {
        self.nscalars
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    /// Add `expr ≺ 0` or `expr ≻ 0`. Empty (0×0) constraints are dropped.
    pub fn constrain(&mut self, label: &str, expr: AffineMatrixExpr, sense: Sense) -> Result<()> {
        if expr.rows != expr.cols {
            return Err(Error::NotSquare {
                rows: expr.rows,
                cols: expr.cols,
            });
        }
        if expr.rows == 0 {
            return Ok(());
        }
        let defect = expr.symmetry_defect();
        if defect > 1e-10 {
            return Err(Error::NotSymmetric(defect));
        }
        self.constraints.push(LmiConstraint {
            label: label.to_string(),
            expr,
            sense,
        });
        Ok(())
    }

    pub fn negative(&mut self, label: &str, expr: AffineMatrixExpr) -> Result<()> {
        self.constrain(label, expr, Sense::NegativeDefinite)
    }

    pub fn positive(&mut self, label: &str, expr: AffineMatrixExpr) -> Result<()> {
        self.constrain(label, expr, Sense::PositiveDefinite)
    }

    /// Minimize a 1×1 affine expression.
    pub fn minimize(&mut self, expr: AffineMatrixExpr) -> Result<()> {
        if expr.shape() != (1, 1) {
            return Err(Error::Dimension("objective must be 1x1".into()));
        }
        self.objective = Some(expr);
        Ok(())
    }

    pub fn has_objective(&self) -> bool {
        self.objective.is_some()
    }

    fn lower(&self) -> Vec<Lowered> {
        self.constraints
            .iter()
            .map(|con| {
                let (f0, coeffs) = con.expr.coefficients();
                let scale = coeffs
                    .values()
                    .map(|f| f.norm())
                    .fold(f0.norm(), f64::max)
                    .max(f64::MIN_POSITIVE);
                let sign = match con.sense {
                    Sense::NegativeDefinite => -1.0,
                    Sense::PositiveDefinite => 1.0,
                };
                let symm = |m: &Matrix| (m + m.transpose()) * (0.5 / scale);
                Lowered {
                    c: symm(&f0) * sign,
                    a: coeffs.iter().map(|(k, f)| (*k, symm(f) * (-sign))).collect(),
                    scale,
                }
            })
            .collect()
    }

    /// Worst normalized constraint value at `x` (see
    /// [`LmiSolution::max_residual`]) together with per-constraint values.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let lowered = self.lower();
        self.constraints
            .iter()
            .zip(&lowered)
            .map(|(con, low)| {
                let v = con.expr.eval(x);
                let w = match con.sense {
                    Sense::NegativeDefinite => max_sym_eig(&v),
                    Sense::PositiveDefinite => -min_sym_eig(&v),
                };
                w / low.scale
            })
            .collect()
    }

    /// True iff every constraint holds with at least half the ε margin.
    fn verified(&self, x: &[f64], eps_rel: f64) -> (bool, f64) {
        let res = self.residuals(x);
        let worst = res.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (worst <= -0.5 * eps_rel, worst)
    }

    fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.as_ref().map(|o| o.eval(x)[(0, 0)]).unwrap_or(0.0)
    }

    fn box_block(&self, bound: f64, extra: usize) -> ConeBlock {
        let m = self.nscalars;
        let rows = 2 * m + extra;
        // Rows are divided by the bound so the box does not dominate the
        // scale of the cone problem.
        let mut c = DVector::from_element(rows, 1.0);
        let mut a = Vec::with_capacity(m + extra);
        for k in 0..m {
            let mut col = DVector::zeros(rows);
            col[2 * k] = 1.0 / bound;
            col[2 * k + 1] = -1.0 / bound;
            a.push((k, col));
        }
        if extra == 1 {
            // t + 1 ≥ 0
            c[2 * m] = 1.0;
            let mut col = DVector::zeros(rows);
            col[2 * m] = -1.0;
            a.push((m, col));
        }
        ConeBlock::Nonneg { c, a }
    }

    /// `min t  s.t.  F_i(x) ≼ (t - ε)·I,  t ≥ -1`, box, and optionally the
    /// cut `Σ c_k x_k ≤ rhs` with the same margin.
    fn phase1_problem(
        &self,
        lowered: &[Lowered],
        eps: f64,
        bound: f64,
        cut: Option<(&[(usize, f64)], f64)>,
    ) -> SdpProblem {
        let m = self.nscalars;
        let mut blocks: Vec<ConeBlock> = lowered
            .iter()
            .map(|l| {
                let n = l.c.nrows();
                let mut a = l.a.clone();
                a.push((m, -Matrix::identity(n, n)));
                ConeBlock::Psd {
                    c: &l.c - Matrix::identity(n, n) * eps,
                    a,
                }
            })
            .collect();
        blocks.push(self.box_block(bound, 1));
        if let Some((coeffs, rhs)) = cut {
            let scale = coeffs
                .iter()
                .map(|(_, v)| v.abs())
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            let mut a: Vec<(usize, DVector<f64>)> = coeffs
                .iter()
                .map(|(k, v)| (*k, DVector::from_element(1, v / scale)))
                .collect();
            a.push((m, DVector::from_element(1, -1.0)));
            blocks.push(ConeBlock::Nonneg {
                c: DVector::from_element(1, rhs / scale - eps),
                a,
            });
        }
        let mut b = DVector::zeros(m + 1);
        b[m] = -1.0;
        SdpProblem { m: m + 1, blocks, b }
    }

    /// `min τ  s.t.  F_i(x) ≼ -margin·I,  |x_k| ≤ τ` in normalized units.
    fn compact_problem(&self, lowered: &[Lowered], margin: f64, bound: f64) -> SdpProblem {
        let m = self.nscalars;
        let mut blocks: Vec<ConeBlock> = lowered
            .iter()
            .map(|l| {
                let n = l.c.nrows();
                ConeBlock::Psd {
                    c: &l.c - Matrix::identity(n, n) * margin,
                    a: l.a.clone(),
                }
            })
            .collect();
        let mut a = Vec::with_capacity(m + 1);
        for k in 0..m {
            let mut col = DVector::zeros(2 * m);
            col[2 * k] = 1.0;
            col[2 * k + 1] = -1.0;
            a.push((k, col));
        }
        a.push((m, DVector::from_element(2 * m, -1.0)));
        blocks.push(ConeBlock::Nonneg {
            c: DVector::zeros(2 * m),
            a,
        });
        blocks.push(ConeBlock::Nonneg {
            c: DVector::from_element(1, 1.0),
            a: vec![(m, DVector::from_element(1, 1.0 / bound))],
        });
        let mut b = DVector::zeros(m + 1);
        b[m] = -1.0;
        SdpProblem { m: m + 1, blocks, b }
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<LmiSolution> {
        self.solve_with(&InteriorPoint::new(opts.ipm()), opts)
    }

    pub fn solve_with(&self, backend: &dyn ConicBackend, opts: &SolverOptions) -> Result<LmiSolution> {
        if self.constraints.is_empty() {
            return Err(Error::Dimension("LMI problem without constraints".into()));
        }
        let m = self.nscalars;
        let lowered = self.lower();
        let eps = if self.objective.is_some() {
            opts.objective_eps_rel
        } else {
            opts.eps_rel
        };

        let phase1 = backend.solve(&self.phase1_problem(&lowered, eps, opts.var_bound, None));
        let mut iterations = phase1.iterations;
        let x1: Vec<f64> = phase1.y.iter().take(m).cloned().collect();
        let t_star = phase1.y[m];
        let (ok1, worst1) = self.verified(&x1, eps);
        let diag1 = format!(
            "phase 1: {:?} after {} iterations, t* = {:.3e}, gap {:.2e} ({})",
            phase1.status, phase1.iterations, t_star, phase1.relative_gap, phase1.message
        );
        if opts.verbose {
            log::info!("{diag1}");
        }

        if !ok1 {
            let status = if phase1.status == SdpStatus::Breakdown {
                LmiStatus::Failed
            } else if self.certified_infeasible(&lowered, &phase1.x, eps, opts.cert_tol) {
                LmiStatus::Infeasible
            } else {
                LmiStatus::Marginal
            };
            return Ok(LmiSolution {
                status,
                objective: self.objective_value(&x1),
                x: x1,
                max_residual: worst1,
                feasibility_margin: t_star,
                iterations,
                diagnostics: diag1,
            });
        }

        let Some(obj) = &self.objective else {
            // Once the margin floor is reached the phase-1 iterate drifts
            // toward the box; keep half the margin and shrink the point.
            let mu = -0.5 * t_star.max(-1.0);
            let compact = backend.solve(&self.compact_problem(&lowered, eps + mu, opts.var_bound));
            iterations += compact.iterations;
            let xc: Vec<f64> = compact.y.iter().take(m).cloned().collect();
            let (okc, worstc) = self.verified(&xc, eps);
            let diag = format!(
                "{diag1}; compaction: {:?} after {} iterations",
                compact.status, compact.iterations
            );
            let (x, worst) = if okc { (xc, worstc) } else { (x1, worst1) };
            return Ok(LmiSolution {
                status: LmiStatus::Feasible,
                objective: 0.0,
                x,
                max_residual: worst,
                feasibility_margin: t_star,
                iterations,
                diagnostics: diag,
            });
        };

        // Phase 2: min cᵀx  s.t.  C_i - εI - Σ x_k A_ik ⪰ 0, box.
        let (_, cvec) = obj.coefficients();
        let mut b = DVector::zeros(m);
        for (k, f) in &cvec {
            b[*k] = -f[(0, 0)];
        }
        let mut blocks: Vec<ConeBlock> = lowered
            .iter()
            .map(|l| {
                let n = l.c.nrows();
                ConeBlock::Psd {
                    c: &l.c - Matrix::identity(n, n) * eps,
                    a: l.a.clone(),
                }
            })
            .collect();
        blocks.push(self.box_block(opts.var_bound, 0));
        let phase2 = backend.solve(&SdpProblem {
            m,
            blocks,
            b: b.clone(),
        });
        iterations += phase2.iterations;
        let diag = format!(
            "{diag1}; phase 2: {:?} after {} iterations, gap {:.2e} ({})",
            phase2.status, phase2.iterations, phase2.relative_gap, phase2.message
        );
        if opts.verbose {
            log::info!("{diag}");
        }
        let x2: Vec<f64> = phase2.y.iter().cloned().collect();
        let cmax = b.amax();
        if cmax > 0.0 && -b.dot(&phase2.y) < -0.1 * opts.var_bound * cmax {
            return Err(Error::Unbounded);
        }

        // Pull the optimizer toward the strictly feasible phase-1 point
        // until the margin verifies.
        let mut chosen = None;
        for lambda in [0.0, 1e-6, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0] {
            let x: Vec<f64> = x2
                .iter()
                .zip(&x1)
                .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
                .collect();
            let (ok, worst) = self.verified(&x, eps);
            if ok {
                chosen = Some((x, worst));
                break;
            }
        }
        let (mut x, mut worst) = chosen.expect("phase-1 point verified");
        let mut status = if phase2.status == SdpStatus::Breakdown && phase2.relative_gap > 1e-3 {
            LmiStatus::Failed
        } else {
            LmiStatus::Feasible
        };
        let mut diag = diag;

        // An unconverged phase 2 is finished by bisection on the objective
        // level, each level tested by phase 1 with an objective cut. The
        // upper end is always the value at a verified point.
        if phase2.status != SdpStatus::Converged {
            let (c0, _) = obj.coefficients();
            let cut: Vec<(usize, f64)> = cvec.iter().map(|(k, f)| (*k, f[(0, 0)])).collect();
            let mut hi = self.objective_value(&x);
            let floor = |h: f64| REFINE_REL * h.abs().max(REFINE_FLOOR);
            let estimate = (phase2.primal_objective - phase2.dual_objective).abs();
            let mut width = estimate.max(1e3 * floor(hi));
            let mut lo = f64::NEG_INFINITY;
            let mut steps = 0;
            let level = |theta: f64, iterations: &mut usize| -> (bool, Vec<f64>, f64) {
                let sol = backend.solve(&self.phase1_problem(
                    &lowered,
                    eps,
                    opts.var_bound,
                    Some((&cut, theta - c0[(0, 0)])),
                ));
                *iterations += sol.iterations;
                let xt: Vec<f64> = sol.y.iter().take(m).cloned().collect();
                let (ok, w) = self.verified(&xt, eps);
                (ok, xt, w)
            };
            while steps < REFINE_MAX_STEPS {
                let theta = if lo.is_finite() {
                    if hi - lo <= floor(hi) {
                        break;
                    }
                    0.5 * (lo + hi)
                } else {
                    hi - width
                };
                steps += 1;
                let (ok, xt, w) = level(theta, &mut iterations);
                if ok {
                    let v = self.objective_value(&xt);
                    if v < hi {
                        hi = v;
                        x = xt;
                        worst = w;
                    }
                    if !lo.is_finite() {
                        width *= 4.0;
                    }
                } else {
                    lo = theta;
                }
            }
            diag = format!("{diag}; refined in {steps} bisection steps to [{lo:.10e}, {hi:.10e}]");
            if opts.verbose {
                log::info!("{diag}");
            }
            if status == LmiStatus::Failed && hi - lo <= floor(hi) {
                status = LmiStatus::Feasible;
            }
        }
        Ok(LmiSolution {
            status,
            objective: self.objective_value(&x),
            x,
            max_residual: worst,
            feasibility_margin: t_star,
            iterations,
            diagnostics: diag,
        })
    }

    /// Check that the phase-1 multipliers form a normalized dual ray
    /// `Z ⪰ 0` with `𝒜(Z) ≈ 0` and `⟨C - εI, Z⟩ < 0`.
    fn certified_infeasible(&self, lowered: &[Lowered], x: &[BlockValue], eps: f64, tol: f64) -> bool {
        let m = self.nscalars;
        let mut trace = 0.0;
        for blk in x.iter().take(lowered.len()) {
            if let Some(z) = blk.as_psd() {
                if crate::matcore::min_sym_eig(z) < -1e-12 * z.amax().max(1.0) {
                    return false;
                }
                trace += z.trace();
            }
        }
        if trace <= 1e-14 {
            return false;
        }
        let mut ray = vec![0.0; m];
        let mut c_inner = 0.0;
        for (low, blk) in lowered.iter().zip(x) {
            let z = blk.as_psd().expect("psd block") / trace;
            let n = low.c.nrows();
            c_inner += (&low.c - Matrix::identity(n, n) * eps).dot(&z);
            for (k, a) in &low.a {
                ray[*k] += a.dot(&z);
            }
        }
        let ray_res = ray.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        ray_res <= tol && c_inner < -tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn minimize_positive_scalar() {
        let mut p = LmiProblem::new();
        let x = p.symmetric("x", 1);
        p.positive("x>0", AffineMatrixExpr::var(&x)).unwrap();
        p.minimize(AffineMatrixExpr::var(&x)).unwrap();
        let sol = p.solve(&opts()).unwrap();
        assert_eq!(sol.status, LmiStatus::Feasible);
        assert!(sol.objective > 0.0 && sol.objective < 1e-5, "{}", sol.objective);
    }

    #[test]
    fn contradictory_scalar_constraints_are_infeasible() {
        let mut p = LmiProblem::new();
        let x = p.symmetric("x", 1);
        p.negative("x<0", AffineMatrixExpr::var(&x)).unwrap();
        p.positive("x>0", AffineMatrixExpr::var(&x)).unwrap();
        let sol = p.solve(&opts()).unwrap();
        assert_eq!(sol.status, LmiStatus::Infeasible, "{}", sol.diagnostics);
    }

    #[test]
    fn minimize_gamma_eigenvalue_bound() {
        // [[-γ, 3], [3, -γ]] ≺ 0  iff  γ > 3
        let mut p = LmiProblem::new();
        let g = p.scalar("gamma");
        let e = AffineMatrixExpr::scalar_times(&g, &(-Matrix::identity(2, 2)))
            .add_constant(&Matrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]))
            .unwrap();
        p.negative("bound", e).unwrap();
        p.minimize(AffineMatrixExpr::var(&g)).unwrap();
        let sol = p.solve(&opts()).unwrap();
        assert_eq!(sol.status, LmiStatus::Feasible);
        assert!((sol.objective - 3.0).abs() < 1e-6, "{}", sol.objective);
    }

    #[test]
    fn unbounded_objective_is_reported() {
        let mut p = LmiProblem::new();
        let x = p.symmetric("x", 1);
        p.negative("x<0", AffineMatrixExpr::var(&x)).unwrap();
        p.minimize(AffineMatrixExpr::var(&x)).unwrap();
        assert!(matches!(p.solve(&opts()), Err(Error::Unbounded)));
    }

    #[test]
    fn non_symmetric_constraint_rejected() {
        let mut p = LmiProblem::new();
        let v = p.full("v", 2, 2);
        assert!(matches!(
            p.negative("bad", AffineMatrixExpr::var(&v)),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn lyapunov_inequality_feasible() {
        // AᵀP + PA ≺ 0, P ≻ 0 for a Hurwitz A
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let mut p = LmiProblem::new();
        let pv = p.symmetric("P", 2);
        let pe = AffineMatrixExpr::var(&pv);
        p.negative("lyap", pe.rmul(&a).unwrap().he().unwrap()).unwrap();
        p.positive("P>0", pe).unwrap();
        let sol = p.solve(&opts()).unwrap();
        assert!(sol.is_feasible());
        let pm = sol.value(&pv);
        assert!(max_sym_eig(&(a.transpose() * &pm + &pm * &a)) < 0.0);
        assert!(min_sym_eig(&pm) > 0.0);
    }

    #[test]
    fn lyapunov_inequality_infeasible_for_unstable_matrix() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, -1.0]);
        let mut p = LmiProblem::new();
        let pv = p.symmetric("P", 2);
        let pe = AffineMatrixExpr::var(&pv);
        p.negative("lyap", pe.rmul(&a).unwrap().he().unwrap()).unwrap();
        p.positive("P>0", pe).unwrap();
        let sol = p.solve(&opts()).unwrap();
        assert_eq!(sol.status, LmiStatus::Infeasible, "{}", sol.diagnostics);
    }
}
