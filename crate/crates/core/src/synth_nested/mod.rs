//! Structured (nested) H∞ synthesis with block lower-triangular
//! controllers of order `n·p`.

mod construct;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{AffineMatrixExpr, LmiProblem, LmiStatus, SolverOptions, VarRef};
use crate::matcore::{hstack, kernel_basis, vstack, Matrix, Partition};
use crate::plant::GeneralizedPlant;
use crate::synth_full::{backed_off, projected_performance, Feasibility, Level, SynthOptions};

pub use construct::{
    construct_structured_controller, synthesize_structured, verify_controller, StructuredDesign, VerificationReport,
};

/// Decision variables `X̂_j`, `Ŷ_j`, `Ẑ_j` for `j = 1..=p+1` (stored at
/// index `j - 1`). Empty ones have zero size.
#[derive(Clone, Debug)]
pub struct ScalingVars {
    pub xhat: Vec<VarRef>,
    pub yhat: Vec<VarRef>,
    pub zhat: Vec<VarRef>,
    pub nparts: Partition,
}

impl ScalingVars {
    pub fn declare(prob: &mut LmiProblem, nparts: &Partition) -> Self {
        let p = nparts.blocks();
        let mut xhat = Vec::with_capacity(p + 1);
        let mut yhat = Vec::with_capacity(p + 1);
        let mut zhat = Vec::with_capacity(p + 1);
        for j in 1..=p + 1 {
            let (h, t) = (nparts.head(j), nparts.tail(j));
            xhat.push(prob.symmetric(&format!("Xhat{j}"), h));
            yhat.push(prob.symmetric(&format!("Yhat{j}"), t));
            zhat.push(prob.full(&format!("Zhat{j}"), t, h));
        }
        Self {
            xhat,
            yhat,
            zhat,
            nparts: nparts.clone(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.xhat
            .iter()
            .chain(&self.yhat)
            .chain(&self.zhat)
            .map(|v| v.scalar_count())
            .sum()
    }
}

/// `X_j = [[X̂_j, Ẑ_jᵀ], [0, I]]` and `Y_j = [[I, 0], [-Ẑ_j, Ŷ_j]]`.
pub fn assemble_xy(vars: &ScalingVars, j: usize) -> Result<(AffineMatrixExpr, AffineMatrixExpr)> {
    let p = vars.nparts.blocks();
    if j == 0 || j > p + 1 {
        return Err(Error::IndexOutOfRange { index: j, max: p + 1 });
    }
    let (h, t) = (vars.nparts.head(j), vars.nparts.tail(j));
    let xh = AffineMatrixExpr::var(&vars.xhat[j - 1]);
    let yh = AffineMatrixExpr::var(&vars.yhat[j - 1]);
    let zh = AffineMatrixExpr::var(&vars.zhat[j - 1]);
    if h == 0 {
        return Ok((AffineMatrixExpr::identity(t), yh));
    }
    if t == 0 {
        return Ok((xh, AffineMatrixExpr::identity(h)));
    }
    let x = AffineMatrixExpr::block(&[
        vec![xh, zh.transpose()],
        vec![AffineMatrixExpr::zeros(t, h), AffineMatrixExpr::identity(t)],
    ])?;
    let y = AffineMatrixExpr::block(&[
        vec![AffineMatrixExpr::identity(h), AffineMatrixExpr::zeros(h, t)],
        vec![zh.scale(-1.0), yh],
    ])?;
    Ok((x, y))
}

/// Numeric `X_j`, `Y_j` from variable values.
pub fn xy_values(xhat: &Matrix, yhat: &Matrix, zhat: &Matrix) -> (Matrix, Matrix) {
    let (h, t) = (xhat.nrows(), yhat.nrows());
    let n = h + t;
    let mut x = Matrix::identity(n, n);
    let mut y = Matrix::identity(n, n);
    x.view_mut((0, 0), (h, h)).copy_from(xhat);
    x.view_mut((0, h), (h, t)).copy_from(&zhat.transpose());
    y.view_mut((h, 0), (t, h)).copy_from(&(-zhat));
    y.view_mut((h, h), (t, t)).copy_from(yhat);
    (x, y)
}

/// `X_jᵀ A Y_j` as an affine expression, using that `A` is block
/// lower-triangular: the block columns left of `j` only meet `X_jᵀ`, the
/// others only `Y_j`.
pub fn build_xay(plant: &GeneralizedPlant, vars: &ScalingVars, j: usize) -> Result<AffineMatrixExpr> {
    let (xj, yj) = assemble_xy(vars, j)?;
    let np = &plant.nparts;
    let lam = np.lambda(j);
    let l = np.l(j);
    let left = &plant.a * &lam * lam.transpose();
    let right = &plant.a * &l * l.transpose();
    xj.transpose().rmul(&left)?.add(&yj.lmul(&right)?)
}

/// `Γ_j` spanning `ker [[Λ_jᵀC, Λ_jᵀF, 0], [L_jᵀBᵀ, 0, L_jᵀEᵀ]]`, for
/// `j = 1..=p+1`.
pub fn gamma_bases(plant: &GeneralizedPlant) -> Vec<Matrix> {
    let (q, r) = (plant.q(), plant.r());
    (1..=plant.p() + 1)
        .map(|j| {
            let lam = plant.kparts.lambda(j);
            let l = plant.mparts.l(j);
            let (a, b) = (lam.ncols(), l.ncols());
            let top = hstack(&[
                &(lam.transpose() * &plant.c),
                &(lam.transpose() * &plant.f),
                &Matrix::zeros(a, r),
            ])
            .expect("conforming");
            let bottom = hstack(&[
                &(l.transpose() * plant.b.transpose()),
                &Matrix::zeros(b, q),
                &(l.transpose() * plant.e.transpose()),
            ])
            .expect("conforming");
            kernel_basis(&vstack(&[&top, &bottom]).expect("conforming"), 0.0)
        })
        .collect()
}

/// Form of the coupling constraints between consecutive scalings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Coupling {
    /// Order `n + n_j` inequalities in the hat variables.
    #[default]
    Refined,
    /// `[[Y_jᵀX_j, X_jᵀY_{j+1}], [Y_{j+1}ᵀX_j, Y_{j+1}ᵀX_{j+1}]] ≻ 0`.
    Literal,
}

/// The assembled structured synthesis problem.
#[derive(Clone, Debug)]
pub struct StructuredProblem {
    pub problem: LmiProblem,
    pub vars: ScalingVars,
    pub(crate) level: Level,
}

impl StructuredProblem {
    pub fn gamma_var(&self) -> Option<&VarRef> {
        match &self.level {
            Level::Free(v) => Some(v),
            Level::Fixed(_) => None,
        }
    }
}

pub(crate) fn refined_coupling(vars: &ScalingVars, j: usize) -> Result<AffineMatrixExpr> {
    let np = &vars.nparts;
    let (nj, h, t1) = (np.size(j), np.head(j), np.tail(j + 1));
    let n = np.total();
    let vb = AffineMatrixExpr::var_block;
    let var = AffineMatrixExpr::var;
    let (yj, zj, xj) = (&vars.yhat[j - 1], &vars.zhat[j - 1], &vars.xhat[j - 1]);
    let (y1, z1, x1) = (&vars.yhat[j], &vars.zhat[j], &vars.xhat[j]);
    let id = AffineMatrixExpr::identity(nj);

    let y11 = vb(yj, 0..nj, 0..nj);
    let y12 = vb(yj, 0..nj, nj..nj + t1);
    let y21 = vb(yj, nj..nj + t1, 0..nj);
    let y22 = vb(yj, nj..nj + t1, nj..nj + t1);
    let zj1 = vb(zj, 0..nj, 0..h);
    let zj2 = vb(zj, nj..nj + t1, 0..h);
    let x11 = vb(x1, 0..h, 0..h);
    let x12 = vb(x1, 0..h, h..h + nj);
    let x21 = vb(x1, h..h + nj, 0..h);
    let x22 = vb(x1, h..h + nj, h..h + nj);
    let z11 = vb(z1, 0..t1, 0..h);
    let z12 = vb(z1, 0..t1, h..h + nj);
    debug_assert_eq!(nj + n, nj + t1 + h + nj);

    AffineMatrixExpr::block(&[
        vec![y11, y12, zj1.clone(), id.clone()],
        vec![y21, y22.sub(&var(y1))?, zj2.sub(&z11)?, z12.scale(-1.0)],
        vec![zj1.transpose(), zj2.sub(&z11)?.transpose(), x11.sub(&var(xj))?, x12],
        vec![id, z12.transpose().scale(-1.0), x21, x22],
    ])
}

fn literal_coupling(vars: &ScalingVars, j: usize) -> Result<AffineMatrixExpr> {
    let (xj, yj) = assemble_xy(vars, j)?;
    let (xn, yn) = assemble_xy(vars, j + 1)?;
    let a = yj.transpose().mul(&xj)?;
    let b = xj.transpose().mul(&yn)?;
    let d = yn.transpose().mul(&xn)?;
    AffineMatrixExpr::block(&[vec![a, b.clone()], vec![b.transpose(), d]])
}

/// Projected performance inequalities for `j = 1..=p+1` and the `p`
/// coupling inequalities; with `gamma = None` the level is a variable and
/// is minimized.
pub fn structured_lmis(plant: &GeneralizedPlant, gamma: Option<f64>, coupling: Coupling) -> Result<StructuredProblem> {
    let mut prob = LmiProblem::new();
    let vars = ScalingVars::declare(&mut prob, &plant.nparts);
    let level = Level::new(&mut prob, gamma);
    let bases = gamma_bases(plant);
    let p = plant.p();
    for j in 1..=p + 1 {
        let (xj, yj) = assemble_xy(&vars, j)?;
        let xay = build_xay(plant, &vars, j)?;
        let xb0 = xj.transpose().rmul(&plant.b0)?;
        let c0y = yj.lmul(&plant.c0)?;
        let ineq = projected_performance(xay, xb0, c0y, &plant.d0, &level, &bases[j - 1])?;
        prob.negative(&format!("performance {j}"), ineq)?;
    }
    for j in 1..=p {
        let c = match coupling {
            Coupling::Refined => refined_coupling(&vars, j)?,
            Coupling::Literal => literal_coupling(&vars, j)?,
        };
        prob.positive(&format!("coupling {j}"), c)?;
    }
    level.minimize(&mut prob)?;
    Ok(StructuredProblem {
        problem: prob,
        vars,
        level,
    })
}

/// Feasible scalings `(X̂_j, Ŷ_j, Ẑ_j)` at level γ.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingCertificate {
    pub gamma: f64,
    pub xhat: Vec<Matrix>,
    pub yhat: Vec<Matrix>,
    pub zhat: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct CertificateFile {
    gamma: f64,
    #[serde(rename = "Xhat")]
    xhat: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Yhat")]
    yhat: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Zhat")]
    zhat: Vec<Vec<Vec<f64>>>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn unrows(r: &[Vec<f64>], cols_if_empty: usize) -> Result<Matrix> {
    let c = r.first().map_or(cols_if_empty, |x| x.len());
    if r.iter().any(|x| x.len() != c) || r.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parse("certificate matrix ragged or non-finite".into()));
    }
    Ok(Matrix::from_fn(r.len(), c, |i, j| r[i][j]))
}

impl ScalingCertificate {
    fn from_solution(vars: &ScalingVars, x: &[f64], gamma: f64) -> Self {
        Self {
            gamma,
            xhat: vars.xhat.iter().map(|v| v.value(x)).collect(),
            yhat: vars.yhat.iter().map(|v| v.value(x)).collect(),
            zhat: vars.zhat.iter().map(|v| v.value(x)).collect(),
        }
    }

    /// `(X_j, Y_j)` for `j = 1..=p+1`, at index `j - 1`.
    pub fn xy(&self) -> Vec<(Matrix, Matrix)> {
        (0..self.xhat.len())
            .map(|i| xy_values(&self.xhat[i], &self.yhat[i], &self.zhat[i]))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let f = CertificateFile {
            gamma: self.gamma,
            xhat: self.xhat.iter().map(rows).collect(),
            yhat: self.yhat.iter().map(rows).collect(),
            zhat: self.zhat.iter().map(rows).collect(),
        };
        serde_json::to_string_pretty(&f).expect("serializable")
    }

    pub fn from_json(text: &str, nparts: &Partition) -> Result<Self> {
        let f: CertificateFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let p = nparts.blocks();
        if f.xhat.len() != p + 1 || f.yhat.len() != p + 1 || f.zhat.len() != p + 1 {
            return Err(Error::Parse(format!("certificate needs {} entries per list", p + 1)));
        }
        let mut cert = Self {
            gamma: f.gamma,
            xhat: vec![],
            yhat: vec![],
            zhat: vec![],
        };
        for j in 1..=p + 1 {
            let (h, t) = (nparts.head(j), nparts.tail(j));
            cert.xhat.push(unrows(&f.xhat[j - 1], h)?);
            cert.yhat.push(unrows(&f.yhat[j - 1], t)?);
            cert.zhat.push(unrows(&f.zhat[j - 1], h)?);
        }
        Ok(cert)
    }
}

pub fn synth_structured_feasible(
    plant: &GeneralizedPlant,
    gamma: f64,
    coupling: Coupling,
    opts: &SolverOptions,
) -> Result<Feasibility<ScalingCertificate>> {
    if gamma <= 0.0 {
        return Err(Error::Dimension("gamma must be positive".into()));
    }
    let sp = structured_lmis(plant, Some(gamma), coupling)?;
    let sol = sp.problem.solve(opts)?;
    if sol.status == LmiStatus::Failed {
        return Err(Error::Numerical(format!(
            "structured LMIs at gamma = {gamma}: {}",
            sol.diagnostics
        )));
    }
    let certificate = sol
        .is_feasible()
        .then(|| ScalingCertificate::from_solution(&sp.vars, &sol.x, gamma));
    Ok(Feasibility {
        status: sol.status,
        certificate,
        diagnostics: sol.diagnostics,
    })
}

/// Infimal structured level, computed as one SDP.
pub fn synth_structured_gamma(plant: &GeneralizedPlant, opts: &SolverOptions) -> Result<f64> {
    let sp = structured_lmis(plant, None, Coupling::Refined)?;
    let sol = sp.problem.solve(opts)?;
    match sol.status {
        LmiStatus::Feasible => Ok(sp.level.value(&sol.x)),
        LmiStatus::Failed => Err(Error::Numerical(sol.diagnostics)),
        _ => Err(Error::Infeasible(format!(
            "no gamma is achievable: {}",
            sol.diagnostics
        ))),
    }
}

/// Infimal level plus a certificate at `γ·(1 + backoff)`.
pub fn synth_structured_opt(plant: &GeneralizedPlant, opts: &SynthOptions) -> Result<(f64, ScalingCertificate)> {
    let gamma = synth_structured_gamma(plant, &opts.solver)?;
    let mut backoff = opts.backoff;
    for _ in 0..opts.max_attempts {
        let target = backed_off(gamma, backoff, plant);
        let res = synth_structured_feasible(plant, target, Coupling::Refined, &opts.solver)?;
        if let Some(cert) = res.certificate {
            return Ok((gamma, cert));
        }
        backoff *= opts.backoff_growth;
    }
    Err(Error::Numerical(format!(
        "no certificate found above gamma = {gamma:.6e}"
    )))
}
