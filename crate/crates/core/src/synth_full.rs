//! Unstructured output-feedback H∞ synthesis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{solve_for_single_unknown, AffineMatrixExpr, LmiProblem, LmiStatus, SolverOptions, VarRef};
use crate::matcore::{block, hstack, kernel_basis, Matrix, Partition};
use crate::plant::{close_loop, GeneralizedPlant, StructuredController};

/// Settings shared by the synthesis routines.
#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub solver: SolverOptions,
    /// Relative distance above the optimal level at which a certificate
    /// is computed before constructing a controller.
    pub backoff: f64,
    /// Factor applied to the backoff after a failed construction.
    pub backoff_growth: f64,
    pub max_attempts: usize,
    /// Largest accepted condition number of `X_j`, `Y_j`, `R_jᵀV_j`.
    pub cond_cap: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            backoff: 1e-3,
            backoff_growth: 10.0,
            max_attempts: 4,
            cond_cap: 1e12,
        }
    }
}

/// γ either fixed or left as a decision variable.
#[derive(Clone, Debug)]
pub(crate) enum Level {
    Fixed(f64),
    Free(VarRef),
}

impl Level {
    pub(crate) fn new(prob: &mut LmiProblem, gamma: Option<f64>) -> Self {
        match gamma {
            Some(g) => Level::Fixed(g),
            None => Level::Free(prob.scalar("gamma")),
        }
    }

    /// `-γ/2 · I_dim`
    pub(crate) fn half_block(&self, dim: usize) -> AffineMatrixExpr {
        let m = -Matrix::identity(dim, dim) * 0.5;
        match self {
            Level::Fixed(g) => AffineMatrixExpr::constant(m * *g),
            Level::Free(v) => AffineMatrixExpr::scalar_times(v, &m),
        }
    }

    pub(crate) fn value(&self, x: &[f64]) -> f64 {
        match self {
            Level::Fixed(g) => *g,
            Level::Free(v) => v.value(x)[(0, 0)],
        }
    }

    pub(crate) fn minimize(&self, prob: &mut LmiProblem) -> Result<()> {
        if let Level::Free(v) = self {
            prob.minimize(AffineMatrixExpr::var(v))?;
        }
        Ok(())
    }
}

/// `He([[top, top_b0, 0], [0, -γ/2 I, 0], [bottom, D0, -γ/2 I]])`
/// compressed by `basis`.
pub(crate) fn projected_performance(
    top: AffineMatrixExpr,
    top_b0: AffineMatrixExpr,
    bottom: AffineMatrixExpr,
    d0: &Matrix,
    level: &Level,
    basis: &Matrix,
) -> Result<AffineMatrixExpr> {
    let (n, q, r) = (top.rows, d0.ncols(), d0.nrows());
    let k = |m: Matrix| AffineMatrixExpr::constant(m);
    let grid = AffineMatrixExpr::block(&[
        vec![top, top_b0, k(Matrix::zeros(n, r))],
        vec![k(Matrix::zeros(q, n)), level.half_block(q), k(Matrix::zeros(q, r))],
        vec![bottom, k(d0.clone()), level.half_block(r)],
    ])?;
    grid.he()?.congruence(basis)
}

/// Symmetric solutions of the two projected inequalities and the coupling
/// `[[Y, I], [I, X]] ≻ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullCertificate {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl FullCertificate {
    fn new(x: &Matrix, y: &Matrix, gamma: f64) -> Self {
        let rows = |m: &Matrix| m.row_iter().map(|r| r.iter().cloned().collect()).collect();
        Self {
            x: rows(x),
            y: rows(y),
            gamma,
        }
    }

    pub fn x_matrix(&self) -> Matrix {
        let n = self.x.len();
        Matrix::from_fn(n, n, |i, j| self.x[i][j])
    }

    pub fn y_matrix(&self) -> Matrix {
        let n = self.y.len();
        Matrix::from_fn(n, n, |i, j| self.y[i][j])
    }
}

/// `Φ` spans `ker [C F 0]` and `Ψ` spans `ker [Bᵀ 0 Eᵀ]`.
pub fn full_bases(plant: &GeneralizedPlant) -> (Matrix, Matrix) {
    let r = plant.r();
    let m = plant.m();
    let phi = kernel_basis(
        &hstack(&[&plant.c, &plant.f, &Matrix::zeros(plant.k(), r)]).expect("conforming"),
        0.0,
    );
    let psi = kernel_basis(
        &hstack(&[&plant.b.transpose(), &Matrix::zeros(m, plant.q()), &plant.e.transpose()]).expect("conforming"),
        0.0,
    );
    (phi, psi)
}

struct FullProblem {
    prob: LmiProblem,
    x: VarRef,
    y: VarRef,
    level: Level,
}

fn full_problem(plant: &GeneralizedPlant, gamma: Option<f64>) -> Result<FullProblem> {
    let n = plant.n();
    let mut prob = LmiProblem::new();
    let xv = prob.symmetric("X", n);
    let yv = prob.symmetric("Y", n);
    let level = Level::new(&mut prob, gamma);
    let (phi, psi) = full_bases(plant);
    let x = AffineMatrixExpr::var(&xv);
    let y = AffineMatrixExpr::var(&yv);
    let k = |m: &Matrix| AffineMatrixExpr::constant(m.clone());
    let in_x = projected_performance(
        x.rmul(&plant.a)?,
        x.rmul(&plant.b0)?,
        k(&plant.c0),
        &plant.d0,
        &level,
        &phi,
    )?;
    let in_y = projected_performance(
        y.lmul(&plant.a)?,
        k(&plant.b0),
        y.lmul(&plant.c0)?,
        &plant.d0,
        &level,
        &psi,
    )?;
    prob.negative("performance (X)", in_x)?;
    prob.negative("performance (Y)", in_y)?;
    let eye = k(&Matrix::identity(n, n));
    let coupling = AffineMatrixExpr::block(&[vec![y, eye.clone()], vec![eye, x]])?;
    prob.positive("coupling", coupling)?;
    level.minimize(&mut prob)?;
    Ok(FullProblem {
        prob,
        x: xv,
        y: yv,
        level,
    })
}

/// Result of a fixed-γ feasibility test.
#[derive(Clone, Debug)]
pub struct Feasibility<C> {
    pub status: LmiStatus,
    pub certificate: Option<C>,
    pub diagnostics: String,
}

impl<C> Feasibility<C> {
    pub fn is_feasible(&self) -> bool {
        self.status == LmiStatus::Feasible
    }
}

pub fn synth_full_feasible(
    plant: &GeneralizedPlant,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<Feasibility<FullCertificate>> {
    if gamma <= 0.0 {
        return Err(Error::Dimension("gamma must be positive".into()));
    }
    let fp = full_problem(plant, Some(gamma))?;
    let sol = fp.prob.solve(opts)?;
    if sol.status == LmiStatus::Failed {
        return Err(Error::Numerical(format!(
            "full synthesis LMIs at gamma = {gamma}: {}",
            sol.diagnostics
        )));
    }
    let certificate = sol
        .is_feasible()
        .then(|| FullCertificate::new(&sol.value(&fp.x), &sol.value(&fp.y), gamma));
    Ok(Feasibility {
        status: sol.status,
        certificate,
        diagnostics: sol.diagnostics,
    })
}

/// Infimal γ of the unstructured problem, computed as one SDP.
pub fn synth_full_gamma(plant: &GeneralizedPlant, opts: &SolverOptions) -> Result<f64> {
    let fp = full_problem(plant, None)?;
    let sol = fp.prob.solve(opts)?;
    match sol.status {
        LmiStatus::Feasible => Ok(fp.level.value(&sol.x)),
        LmiStatus::Failed => Err(Error::Numerical(sol.diagnostics)),
        _ => Err(Error::Infeasible(format!(
            "no gamma is achievable: {}",
            sol.diagnostics
        ))),
    }
}

/// Infimal γ together with a certificate at `γ·(1 + backoff)`.
pub fn synth_full_opt(plant: &GeneralizedPlant, opts: &SynthOptions) -> Result<(f64, FullCertificate)> {
    let gamma = synth_full_gamma(plant, &opts.solver)?;
    let mut backoff = opts.backoff;
    for _ in 0..opts.max_attempts {
        let target = backed_off(gamma, backoff, plant);
        let res = synth_full_feasible(plant, target, &opts.solver)?;
        if let Some(cert) = res.certificate {
            return Ok((gamma, cert));
        }
        backoff *= opts.backoff_growth;
    }
    Err(Error::Numerical(format!(
        "no certificate found above gamma = {gamma:.6e}"
    )))
}

/// `γ(1 + backoff)`, with an absolute floor for levels at zero.
pub(crate) fn backed_off(gamma: f64, backoff: f64, plant: &GeneralizedPlant) -> f64 {
    let floor = 1e-6 * (1.0 + plant.d0.amax() + plant.b0.amax().max(plant.c0.amax()));
    (gamma * (1.0 + backoff)).max(gamma + backoff * floor)
}

/// Controller of order `n` from a certificate, via `U = I`, `V = I - XY`.
pub fn construct_full_controller(
    plant: &GeneralizedPlant,
    cert: &FullCertificate,
    opts: &SolverOptions,
) -> Result<StructuredController> {
    let x = cert.x_matrix();
    let y = cert.y_matrix();
    let n = plant.n();
    let (q, r, m, k) = (plant.q(), plant.r(), plant.m(), plant.k());
    let g = cert.gamma;
    let z = |a, b| Matrix::zeros(a, b);
    let qm = block(&[
        vec![&plant.a * &y, plant.a.clone(), plant.b0.clone(), z(n, r)],
        vec![&x * &plant.a * &y, &x * &plant.a, &x * &plant.b0, z(n, r)],
        vec![z(q, n), z(q, n), -Matrix::identity(q, q) * (g / 2.0), z(q, r)],
        vec![
            &plant.c0 * &y,
            plant.c0.clone(),
            plant.d0.clone(),
            -Matrix::identity(r, r) * (g / 2.0),
        ],
    ])?;
    let mm = block(&[
        vec![
            plant.b.transpose(),
            plant.b.transpose() * &x,
            z(m, q),
            plant.e.transpose(),
        ],
        vec![z(n, n), Matrix::identity(n, n), z(n, q), z(n, r)],
    ])?;
    let v = Matrix::identity(n, n) - &x * &y;
    let nn = block(&[
        vec![&plant.c * &y, plant.c.clone(), plant.f.clone(), z(k, r)],
        vec![v, z(n, n), z(n, q), z(n, r)],
    ])?;
    let s = solve_for_single_unknown(&qm, &mm, &nn, opts).map_err(|e| Error::Reconstruction {
        step: 1,
        reason: e.to_string(),
    })?;
    Ok(StructuredController {
        dk: s.view((0, 0), (m, k)).into_owned(),
        ck: s.view((0, k), (m, n)).into_owned(),
        bk: s.view((m, 0), (n, k)).into_owned(),
        ak: s.view((m, k), (n, n)).into_owned(),
        nk_parts: Some(Partition::new(vec![n]).expect("n > 0")),
        generators: Some(vec![s]),
    })
}

/// A verified unstructured design.
#[derive(Clone, Debug)]
pub struct FullDesign {
    pub gamma_opt: f64,
    /// Level the controller was designed for.
    pub gamma: f64,
    pub certificate: FullCertificate,
    pub controller: StructuredController,
    /// Achieved closed-loop H∞ norm.
    pub norm: f64,
}

/// Optimal level, certificate and controller. With `gamma = Some(g)` the
/// design targets `g` directly; otherwise the optimum plus backoff, grown
/// after every construction that fails verification.
pub fn synthesize_full(plant: &GeneralizedPlant, gamma: Option<f64>, opts: &SynthOptions) -> Result<FullDesign> {
    let gamma_opt = match gamma {
        Some(g) => g,
        None => synth_full_gamma(plant, &opts.solver)?,
    };
    let mut backoff = if gamma.is_some() { 0.0 } else { opts.backoff };
    let mut last = String::new();
    for _ in 0..opts.max_attempts {
        let target = if gamma.is_some() {
            gamma_opt
        } else {
            backed_off(gamma_opt, backoff, plant)
        };
        let res = synth_full_feasible(plant, target, &opts.solver)?;
        let Some(cert) = res.certificate else {
            if gamma.is_some() {
                return Err(Error::Infeasible(format!(
                    "gamma = {target} not achievable ({:?})",
                    res.status
                )));
            }
            last = format!("no certificate at gamma = {target:.6e}");
            backoff = (backoff * opts.backoff_growth).max(opts.backoff);
            continue;
        };
        match construct_full_controller(plant, &cert, &opts.solver) {
            Ok(controller) => {
                let cl = close_loop(plant, &controller)?;
                let norm = cl.hinf_norm();
                if norm < target {
                    return Ok(FullDesign {
                        gamma_opt,
                        gamma: target,
                        certificate: cert,
                        controller,
                        norm,
                    });
                }
                last = format!("closed-loop norm {norm:.6e} not below {target:.6e}");
            }
            Err(e) => last = e.to_string(),
        }
        if gamma.is_some() {
            break;
        }
        backoff = (backoff * opts.backoff_growth).max(opts.backoff);
    }
    Err(Error::Numerical(format!("controller construction failed: {last}")))
}
