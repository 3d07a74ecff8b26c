//! Two-block specialization under the regularity assumption: Riccati
//! inequalities, their coupling, and the state-feedback conditions.
//!
//! Every quadratic term is handled through a Schur complement against a
//! `-γI` block, so each check is an LMI feasibility problem. Returned
//! variables are re-evaluated in the original quadratic forms.

use crate::error::{Error, Result};
use crate::lmi::{AffineMatrixExpr, LmiProblem, LmiStatus, SolverOptions};
use crate::matcore::{max_sym_eig, min_sym_eig, psd_sqrt, Matrix};
use crate::plant::GeneralizedPlant;
use crate::synth_nested::{assemble_xy, refined_coupling, xy_values, ScalingCertificate, ScalingVars};

const REG_TOL: f64 = 1e-9;
const SQRT_CLAMP: f64 = 1e-10;

/// A two-block plant with `B0Fᵀ = 0`, `FFᵀ = I`, `C0ᵀE = 0`, `EᵀE = I`
/// and `D0 = 0`, together with `B̂0 = B0B0ᵀ` and `Ĉ0 = C0ᵀC0`.
#[derive(Clone, Debug)]
pub struct RegularizedPlant {
    pub plant: GeneralizedPlant,
    pub b0hat: Matrix,
    pub c0hat: Matrix,
    b0half: Matrix,
    c0half: Matrix,
}

/// Residuals (largest absolute entry) of the regularity identities.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularityResiduals {
    pub b0_ft: f64,
    pub f_ft: f64,
    pub c0t_e: f64,
    pub et_e: f64,
    pub d0: f64,
}

impl RegularityResiduals {
    pub fn of(plant: &GeneralizedPlant) -> Self {
        let (k, m) = (plant.k(), plant.m());
        Self {
            b0_ft: (&plant.b0 * plant.f.transpose()).amax(),
            f_ft: (&plant.f * plant.f.transpose() - Matrix::identity(k, k)).amax(),
            c0t_e: (plant.c0.transpose() * &plant.e).amax(),
            et_e: (plant.e.transpose() * &plant.e - Matrix::identity(m, m)).amax(),
            d0: plant.d0.amax(),
        }
    }

    fn worst(&self, with_f: bool) -> f64 {
        let f = if with_f { self.b0_ft.max(self.f_ft) } else { 0.0 };
        f.max(self.c0t_e).max(self.et_e).max(self.d0)
    }
}

fn regularize(plant: &GeneralizedPlant, with_f: bool) -> Result<RegularizedPlant> {
    if plant.p() != 2 {
        return Err(Error::Regularity(format!("needs p = 2, plant has p = {}", plant.p())));
    }
    let res = RegularityResiduals::of(plant);
    if res.worst(with_f) > REG_TOL {
        return Err(Error::Regularity(format!(
            "residuals: B0 Fᵀ {:.3e}, F Fᵀ - I {:.3e}, C0ᵀ E {:.3e}, Eᵀ E - I {:.3e}, D0 {:.3e}",
            res.b0_ft, res.f_ft, res.c0t_e, res.et_e, res.d0
        )));
    }
    let b0hat = &plant.b0 * plant.b0.transpose();
    let c0hat = plant.c0.transpose() * &plant.c0;
    Ok(RegularizedPlant {
        b0half: psd_sqrt(&b0hat, SQRT_CLAMP)?,
        c0half: psd_sqrt(&c0hat, SQRT_CLAMP)?,
        b0hat,
        c0hat,
        plant: plant.clone(),
    })
}

/// Verify the regularity identities; no normalization is attempted.
pub fn check_regularity(plant: &GeneralizedPlant) -> Result<RegularizedPlant> {
    regularize(plant, true)
}

/// Regularity without the `F` clauses, for state-feedback plants.
pub fn check_state_feedback_regularity(plant: &GeneralizedPlant) -> Result<RegularizedPlant> {
    regularize(plant, false)
}

/// Largest eigenvalues of the three Riccati forms and of the coupling;
/// all negative means every condition holds strictly.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionValues {
    pub ari1: f64,
    pub ari2: f64,
    pub ari3: f64,
    pub coupling: f64,
}

impl ConditionValues {
    pub fn holds(&self) -> bool {
        self.ari1 < 0.0 && self.ari2 < 0.0 && self.ari3 < 0.0 && self.coupling < 0.0
    }
}

fn sym(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

/// Evaluate the quadratic inequalities and `Y ≻ Z ≻ 0`, `X ≻ Z⁻¹`.
pub fn evaluate_conditions(reg: &RegularizedPlant, gamma: f64, x: &Matrix, y: &Matrix, z: &Matrix) -> ConditionValues {
    let p = &reg.plant;
    let a = &p.a;
    let r1 = p.kparts.r(1);
    let r2 = p.mparts.r(2);
    let ari1 =
        a.transpose() * x + x * a - p.c.transpose() * &p.c * gamma + &reg.c0hat / gamma + x * &reg.b0hat * x / gamma;
    let ari2 =
        a * y + y * a.transpose() - &p.b * p.b.transpose() * gamma + &reg.b0hat / gamma + y * &reg.c0hat * y / gamma;
    let cr = r1.transpose() * &p.c;
    let br = &p.b * &r2;
    let ari3 = a * z + z * a.transpose() - z * cr.transpose() * &cr * z * gamma - &br * br.transpose() * gamma
        + &reg.b0hat / gamma
        + z * &reg.c0hat * z / gamma;
    let coupling = match z.clone().try_inverse() {
        Some(zi) => max_sym_eig(&sym(z - y))
            .max(-min_sym_eig(&sym(z.clone())))
            .max(max_sym_eig(&sym(zi - x))),
        None => f64::INFINITY,
    };
    ConditionValues {
        ari1: max_sym_eig(&sym(ari1)),
        ari2: max_sym_eig(&sym(ari2)),
        ari3: max_sym_eig(&sym(ari3)),
        coupling,
    }
}

/// `X = X̂_3`, `Y = Ŷ_1` and `Z = Y_2 X_2⁻¹` from two-block scalings.
pub fn riccati_variables(cert: &ScalingCertificate) -> Result<(Matrix, Matrix, Matrix)> {
    if cert.xhat.len() != 3 {
        return Err(Error::Dimension("two-block certificate expected".into()));
    }
    let (x2, y2) = xy_values(&cert.xhat[1], &cert.yhat[1], &cert.zhat[1]);
    let x2inv = x2
        .try_inverse()
        .ok_or_else(|| Error::Numerical("X_2 is singular".into()))?;
    Ok((cert.xhat[2].clone(), cert.yhat[0].clone(), sym(y2 * x2inv)))
}

/// Outcome of a joint feasibility test.
#[derive(Clone, Debug)]
pub struct AriReport {
    pub status: LmiStatus,
    /// Direct evaluation at the returned variables, when the LMI solve
    /// produced any.
    pub values: Option<ConditionValues>,
    pub diagnostics: String,
}

impl AriReport {
    pub fn feasible(&self) -> bool {
        self.status == LmiStatus::Feasible && self.values.as_ref().is_some_and(|v| v.holds())
    }
}

fn k(m: Matrix) -> AffineMatrixExpr {
    AffineMatrixExpr::constant(m)
}

fn neg_gamma(n: usize, gamma: f64) -> AffineMatrixExpr {
    k(-Matrix::identity(n, n) * gamma)
}

/// Joint feasibility of the three Riccati inequalities and the coupling,
/// in the scaling variables of the structured problem.
pub fn ari_feasibility(reg: &RegularizedPlant, gamma: f64, opts: &SolverOptions) -> Result<AriReport> {
    if gamma <= 0.0 {
        return Err(Error::Dimension("gamma must be positive".into()));
    }
    let p = &reg.plant;
    let n = p.n();
    let a = &p.a;
    let mut prob = LmiProblem::new();
    let vars = ScalingVars::declare(&mut prob, &p.nparts);
    let x = AffineMatrixExpr::var(&vars.xhat[2]);
    let y = AffineMatrixExpr::var(&vars.yhat[0]);
    let (bh, ch) = (&reg.b0half, &reg.c0half);

    let x_b = x.rmul(bh)?;
    let top1 = x
        .rmul(a)?
        .he()?
        .add_constant(&(&reg.c0hat / gamma - p.c.transpose() * &p.c * gamma))?;
    prob.negative(
        "ari1",
        AffineMatrixExpr::block(&[vec![top1, x_b.clone()], vec![x_b.transpose(), neg_gamma(n, gamma)]])?,
    )?;

    let y_c = y.rmul(ch)?;
    let top2 = y
        .lmul(a)?
        .he()?
        .add_constant(&(&reg.b0hat / gamma - &p.b * p.b.transpose() * gamma))?;
    prob.negative(
        "ari2",
        AffineMatrixExpr::block(&[vec![top2, y_c.clone()], vec![y_c.transpose(), neg_gamma(n, gamma)]])?,
    )?;

    let (x2, y2) = assemble_xy(&vars, 2)?;
    let cr = p.kparts.r(1).transpose() * &p.c;
    let br = &p.b * p.mparts.r(2);
    let top3 = x2
        .transpose()
        .rmul(a)?
        .mul(&y2)?
        .he()?
        .add_constant(&(-(cr.transpose() * &cr + &br * br.transpose()) * gamma))?;
    let xb = x2.transpose().rmul(bh)?;
    let yc = y2.transpose().rmul(ch)?;
    let z = AffineMatrixExpr::zeros(n, n);
    prob.negative(
        "ari3",
        AffineMatrixExpr::block(&[
            vec![top3, xb.clone(), yc.clone()],
            vec![xb.transpose(), neg_gamma(n, gamma), z.clone()],
            vec![yc.transpose(), z, neg_gamma(n, gamma)],
        ])?,
    )?;
    for j in 1..=2 {
        prob.positive(&format!("coupling {j}"), refined_coupling(&vars, j)?)?;
    }

    let sol = prob.solve(opts)?;
    let values = if sol.status == LmiStatus::Failed {
        None
    } else {
        let cert = ScalingCertificate {
            gamma,
            xhat: vars.xhat.iter().map(|v| v.value(&sol.x)).collect(),
            yhat: vars.yhat.iter().map(|v| v.value(&sol.x)).collect(),
            zhat: vars.zhat.iter().map(|v| v.value(&sol.x)).collect(),
        };
        riccati_variables(&cert)
            .ok()
            .map(|(xv, yv, zv)| evaluate_conditions(reg, gamma, &xv, &yv, &zv))
    };
    Ok(AriReport {
        status: sol.status,
        values,
        diagnostics: sol.diagnostics,
    })
}

/// Result of the state-feedback test; `values` holds the largest
/// eigenvalues of the two Riccati forms and of the coupling at the
/// returned variables.
#[derive(Clone, Debug)]
pub struct StateFeedbackReport {
    pub status: LmiStatus,
    pub values: Option<[f64; 3]>,
    pub diagnostics: String,
}

impl StateFeedbackReport {
    pub fn feasible(&self) -> bool {
        self.status == LmiStatus::Feasible && self.values.is_some_and(|v| v.iter().all(|x| *x < 0.0))
    }
}

/// The three state-feedback conditions (`C = I`, `F = 0`) in `Y`, `Ŷ`
/// and `Ẑ`.
pub fn state_feedback_conditions(
    reg: &RegularizedPlant,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<StateFeedbackReport> {
    if gamma <= 0.0 {
        return Err(Error::Dimension("gamma must be positive".into()));
    }
    let p = &reg.plant;
    let n = p.n();
    if p.c != Matrix::identity(n, n) || p.f.amax() != 0.0 {
        return Err(Error::Regularity("state feedback needs C = I and F = 0".into()));
    }
    let (n1, n2) = (p.nparts.size(1), p.nparts.size(2));
    let a22 = p.a.view((n1, n1), (n2, n2)).into_owned();
    let b22 = p.b.view((n1, p.mparts.size(1)), (n2, p.mparts.size(2))).into_owned();
    let b1 = p.b0.rows(0, n1).into_owned();
    let b2 = p.b0.rows(n1, n2).into_owned();
    let c2 = p.c0.columns(n1, n2).into_owned();
    let q = p.q();
    let r = p.r();

    let mut prob = LmiProblem::new();
    let yv = prob.symmetric("Y", n);
    let yhv = prob.symmetric("Yhat", n2);
    let zv = prob.full("Zhat", n2, n1);
    let y = AffineMatrixExpr::var(&yv);
    let yh = AffineMatrixExpr::var(&yhv);
    let zh = AffineMatrixExpr::var(&zv);

    let y_c = y.rmul(&reg.c0half)?;
    let top1 = y
        .lmul(&p.a)?
        .he()?
        .add_constant(&(&reg.b0hat / gamma - &p.b * p.b.transpose() * gamma))?;
    prob.negative(
        "ari",
        AffineMatrixExpr::block(&[vec![top1, y_c.clone()], vec![y_c.transpose(), neg_gamma(n, gamma)]])?,
    )?;

    let w = zh.rmul(&b1)?.add_constant(&b2)?;
    let yc2 = yh.rmul(&c2.transpose())?;
    let top2 = yh.lmul(&a22)?.he()?.add_constant(&(-&b22 * b22.transpose() * gamma))?;
    prob.negative(
        "ari hat",
        AffineMatrixExpr::block(&[
            vec![top2, w.clone(), yc2.clone()],
            vec![w.transpose(), neg_gamma(q, gamma), AffineMatrixExpr::zeros(q, r)],
            vec![yc2.transpose(), AffineMatrixExpr::zeros(r, q), neg_gamma(r, gamma)],
        ])?,
    )?;
    let lower = AffineMatrixExpr::block(&[
        vec![AffineMatrixExpr::zeros(n1, n1), AffineMatrixExpr::zeros(n1, n2)],
        vec![AffineMatrixExpr::zeros(n2, n1), yh.clone()],
    ])?;
    prob.positive("coupling", y.sub(&lower)?)?;
    prob.positive("Yhat > 0", yh)?;

    let sol = prob.solve(opts)?;
    let values = (sol.status != LmiStatus::Failed).then(|| {
        let yv = sol.value(&yv);
        let yhv = sol.value(&yhv);
        let zv = sol.value(&zv);
        let f1 = &p.a * &yv + &yv * p.a.transpose() - &p.b * p.b.transpose() * gamma
            + &reg.b0hat / gamma
            + &yv * &reg.c0hat * &yv / gamma;
        let wv = &zv * &b1 + &b2;
        let f2 = &a22 * &yhv + &yhv * a22.transpose() - &b22 * b22.transpose() * gamma
            + &wv * wv.transpose() / gamma
            + &yhv * c2.transpose() * &c2 * &yhv / gamma;
        let mut lowered = yv.clone();
        let mut corner = lowered.view_mut((n1, n1), (n2, n2));
        corner -= &yhv;
        let coupling = (-min_sym_eig(&sym(lowered))).max(-min_sym_eig(&yhv));
        [max_sym_eig(&sym(f1)), max_sym_eig(&sym(f2)), coupling]
    });
    Ok(StateFeedbackReport {
        status: sol.status,
        values,
        diagnostics: sol.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::Partition;
    use crate::plant::{example_fig1, Fig1Variant};
    use crate::synth_nested::{synth_structured_feasible, Coupling};

    fn parts(v: &[usize]) -> Partition {
        Partition::new(v.to_vec()).unwrap()
    }

    /// `B0 = [B̃, 0]`, `F = [0, I]`, `C0 = [C̃; 0]`, `E = [0; I]`.
    fn regular_plant(a: Matrix, b: Matrix, c: Matrix, bt: Matrix, ct: Matrix) -> GeneralizedPlant {
        let (n, m, k) = (a.nrows(), b.ncols(), c.nrows());
        let (qt, rt) = (bt.ncols(), ct.nrows());
        let mut b0 = Matrix::zeros(n, qt + k);
        b0.view_mut((0, 0), (n, qt)).copy_from(&bt);
        let mut f = Matrix::zeros(k, qt + k);
        f.view_mut((0, qt), (k, k)).fill_with_identity();
        let mut c0 = Matrix::zeros(rt + m, n);
        c0.view_mut((0, 0), (rt, n)).copy_from(&ct);
        let mut e = Matrix::zeros(rt + m, m);
        e.view_mut((rt, 0), (m, m)).fill_with_identity();
        let one = parts(&[1, 1]);
        GeneralizedPlant::new(
            a,
            b0,
            b,
            c0,
            Matrix::zeros(rt + m, qt + k),
            e,
            c,
            f,
            one.clone(),
            one.clone(),
            one,
        )
        .unwrap()
    }

    fn sample() -> GeneralizedPlant {
        regular_plant(
            Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.7, -0.5]),
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]),
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, -0.4, 1.0]),
            Matrix::from_row_slice(2, 1, &[1.0, 0.5]),
            Matrix::from_row_slice(1, 2, &[0.6, 1.0]),
        )
    }

    #[test]
    fn regular_plant_passes_and_example_fails() {
        let reg = check_regularity(&sample()).unwrap();
        assert!((&reg.b0half * &reg.b0half - &reg.b0hat).amax() < 1e-12);
        let ex = example_fig1(Fig1Variant::Plus, -1.0);
        assert!(matches!(check_regularity(&ex), Err(Error::Regularity(_))));
    }

    #[test]
    fn doubled_f_reports_unit_residual() {
        let mut p = sample();
        p.f *= 2f64.sqrt();
        let res = RegularityResiduals::of(&p);
        assert!((res.f_ft - 1.0).abs() < 1e-12);
        assert!(check_regularity(&p).is_err());
    }

    #[test]
    fn huge_gamma_is_feasible() {
        let reg = check_regularity(&sample()).unwrap();
        let rep = ari_feasibility(&reg, 1e9, &SolverOptions::default()).unwrap();
        assert!(rep.feasible(), "{rep:?}");
    }

    #[test]
    fn coupling_boundary_is_not_strict() {
        let reg = check_regularity(&sample()).unwrap();
        let z = Matrix::identity(2, 2);
        let v = evaluate_conditions(&reg, 10.0, &(&z * 3.0), &z, &z);
        assert!(v.coupling >= 0.0);
    }

    #[test]
    fn structured_certificate_satisfies_riccati_forms() {
        let p = sample();
        let reg = check_regularity(&p).unwrap();
        let opts = SolverOptions::default();
        let gamma = crate::synth_nested::synth_structured_gamma(&p, &opts).unwrap() * 1.05;
        let cert = synth_structured_feasible(&p, gamma, Coupling::Refined, &opts)
            .unwrap()
            .certificate
            .unwrap();
        let (x, y, z) = riccati_variables(&cert).unwrap();
        let v = evaluate_conditions(&reg, gamma, &x, &y, &z);
        assert!(v.holds(), "{v:?}");
    }

    fn scalar_ari_feasible(a: f64, b: f64, beta: f64, c: f64, g: f64) -> bool {
        // 2a y - g b² + β²/g + c² y²/g < 0 for some y > 0
        let disc = a * a - (c * c / g) * (beta * beta / g - g * b * b);
        disc > 0.0 && disc.sqrt() > a
    }

    #[test]
    fn decoupled_state_feedback_matches_scalar_conditions() {
        let (a1, a2, b1, b2, beta1, beta2, c1, c2) = (0.5, -0.3, 1.0, 0.4, 1.0, 0.8, 1.0, 0.7);
        let plant = GeneralizedPlant::new(
            Matrix::from_row_slice(2, 2, &[a1, 0.0, 0.0, a2]),
            Matrix::from_row_slice(2, 2, &[beta1, 0.0, 0.0, beta2]),
            Matrix::from_row_slice(2, 2, &[b1, 0.0, 0.0, b2]),
            Matrix::from_row_slice(4, 2, &[c1, 0.0, 0.0, c2, 0.0, 0.0, 0.0, 0.0]),
            Matrix::zeros(4, 2),
            Matrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
            Matrix::identity(2, 2),
            Matrix::zeros(2, 2),
            parts(&[1, 1]),
            parts(&[1, 1]),
            parts(&[1, 1]),
        )
        .unwrap();
        let reg = check_state_feedback_regularity(&plant).unwrap();
        let opts = SolverOptions::default();
        for g in [0.3, 0.6, 0.9, 1.2, 2.0, 5.0] {
            let expect = scalar_ari_feasible(a1, b1, beta1, c1, g) && scalar_ari_feasible(a2, b2, beta2, c2, g);
            let rep = state_feedback_conditions(&reg, g, &opts).unwrap();
            assert_eq!(rep.feasible(), expect, "gamma {g}: {rep:?}");
        }
    }

    #[test]
    fn state_feedback_with_huge_gamma() {
        let plant = GeneralizedPlant {
            c: Matrix::identity(2, 2),
            f: Matrix::zeros(2, 3),
            ..sample()
        };
        let reg = check_state_feedback_regularity(&plant).unwrap();
        assert!(state_feedback_conditions(&reg, 1e9, &SolverOptions::default())
            .unwrap()
            .feasible());
    }
}
