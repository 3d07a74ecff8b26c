use log::debug;

use super::{synth_structured_feasible, synth_structured_gamma, Coupling, ScalingCertificate};
use crate::error::{Error, Result};
use crate::lmi::{solve_for_single_unknown, SolverOptions};
use crate::matcore::{block, condition_number, hstack, kernel_basis, spectral_abscissa, vstack, Matrix, Partition};
use crate::plant::{close_loop, GeneralizedPlant, StructuredController};
use crate::synth_full::{backed_off, SynthOptions};

fn reconstruction(step: usize, reason: impl Into<String>) -> Error {
    Error::Reconstruction {
        step,
        reason: reason.into(),
    }
}

fn check_cond(step: usize, what: &str, m: &Matrix, cap: f64) -> Result<()> {
    let c = condition_number(m);
    if c.is_nan() || c > cap {
        return Err(reconstruction(
            step,
            format!("{what} has condition number {c:.3e} (cap {cap:.1e})"),
        ));
    }
    Ok(())
}

/// Block-row stack `[[top], [bottom]]` where each row is given as pieces.
fn rows2(top: &[&Matrix], bottom: &[&Matrix]) -> Result<Matrix> {
    vstack(&[&hstack(top)?, &hstack(bottom)?])
}

/// Controller of order `n·p` with block lower-triangular realization.
///
/// The scalings define `𝒳 = [X_2 … X_{p+1}]` and `𝒴 = [Y_1 … Y_p]`; with
/// `𝒰 = I` the matrix `𝒱` is chosen block-column by block-column so that
/// the closed-loop Lyapunov matrix factors, and the controller generators
/// are then found one at a time from `p` down to `1`, each in the null
/// space of the measurements the earlier ones cannot see.
pub fn construct_structured_controller(
    plant: &GeneralizedPlant,
    cert: &ScalingCertificate,
    opts: &SolverOptions,
    cond_cap: f64,
) -> Result<StructuredController> {
    let p = plant.p();
    let n = plant.n();
    let (q, r, m, k) = (plant.q(), plant.r(), plant.m(), plant.k());
    if cert.xhat.len() != p + 1 {
        return Err(Error::Dimension(format!(
            "certificate has {} scalings, plant needs {}",
            cert.xhat.len(),
            p + 1
        )));
    }
    let xy = cert.xy();
    for (j, (xj, yj)) in xy.iter().enumerate() {
        if xj.shape() != (n, n) || yj.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "scaling {} does not match the plant partition",
                j + 1
            )));
        }
        check_cond(1, &format!("X_{}", j + 1), xj, cond_cap)?;
        check_cond(1, &format!("Y_{}", j + 1), yj, cond_cap)?;
    }
    let xs: Vec<&Matrix> = xy[1..].iter().map(|(x, _)| x).collect();
    let ys: Vec<&Matrix> = xy[..p].iter().map(|(_, y)| y).collect();
    let x = hstack(&xs)?;
    let y = hstack(&ys)?;
    let big = Partition::uniform(n, p)?;
    let npk = big.total();

    // 𝒱 with R_jᵀ𝒱_j = Y_{j+1}ᵀX_j - X_{j+1}ᵀY_j
    let mut vcols = Vec::with_capacity(p);
    for j in 1..=p {
        let (xj, yj) = &xy[j - 1];
        let parts: Vec<Matrix> = (j + 1..=p + 1)
            .map(|i| (xj.transpose() * &xy[i - 1].1 - yj.transpose() * &xy[i - 1].0).transpose())
            .collect();
        let refs: Vec<&Matrix> = parts.iter().collect();
        let vc = vstack(&refs)?;
        check_cond(2, &format!("R_{j}ᵀV_{j}"), &parts[0], cond_cap)?;
        vcols.push(big.l(j) * vc);
    }
    let vrefs: Vec<&Matrix> = vcols.iter().collect();
    let v = hstack(&vrefs)?;

    let z = |a, b| Matrix::zeros(a, b);
    let half = |d: usize| -Matrix::identity(d, d) * (cert.gamma / 2.0);
    let xt = x.transpose();
    let qm = block(&[
        vec![&plant.a * &y, plant.a.clone(), plant.b0.clone(), z(n, r)],
        vec![&xt * &plant.a * &y, &xt * &plant.a, &xt * &plant.b0, z(npk, r)],
        vec![z(q, npk), z(q, n), half(q), z(q, r)],
        vec![&plant.c0 * &y, plant.c0.clone(), plant.d0.clone(), half(r)],
    ])?;
    let dim = qm.nrows();

    let m_of = |j: usize| -> Result<Matrix> {
        let lm = plant.mparts.l(j);
        let lb = big.l(j);
        let blt = lm.transpose() * plant.b.transpose();
        rows2(
            &[
                &blt,
                &(&blt * &x),
                &z(lm.ncols(), q),
                &(lm.transpose() * plant.e.transpose()),
            ],
            &[&z(lb.ncols(), n), &lb.transpose(), &z(lb.ncols(), q), &z(lb.ncols(), r)],
        )
    };
    // measurement rows selected by `sk` (k side) and `sn` (controller side)
    let meas = |sk: &Matrix, sn: &Matrix| -> Result<Matrix> {
        let skt = sk.transpose();
        rows2(
            &[
                &(&skt * &plant.c * &y),
                &(&skt * &plant.c),
                &(&skt * &plant.f),
                &z(sk.ncols(), r),
            ],
            &[
                &(sn.transpose() * &v),
                &z(sn.ncols(), n),
                &z(sn.ncols(), q),
                &z(sn.ncols(), r),
            ],
        )
    };

    let mut acc = qm;
    let mut gens: Vec<Matrix> = vec![Matrix::zeros(0, 0); p];
    for nu in (1..=p).rev() {
        let mnu = m_of(nu)?;
        let nnu = meas(&plant.kparts.r(nu), &big.r(nu))?;
        let basis = if nu == 1 {
            Matrix::identity(dim, dim)
        } else {
            kernel_basis(&meas(&plant.kparts.lambda(nu), &big.lambda(nu))?, 0.0)
        };
        let s = solve_for_single_unknown(
            &(basis.transpose() * &acc * &basis),
            &(&mnu * &basis),
            &(&nnu * &basis),
            opts,
        )
        .map_err(|e| reconstruction(3, format!("generator {nu}: {e}")))?;
        debug!("generator {nu}: {}x{}, norm {:.3e}", s.nrows(), s.ncols(), s.norm());
        acc += mnu.transpose() * &s * &nnu;
        gens[nu - 1] = s;
    }

    // [[DK, CK], [BK, AK]] = Σ (L_j ⊕ L_j) S_j (R_j ⊕ R_j)ᵀ
    let mut stacked = Matrix::zeros(m + npk, k + npk);
    for (j, s) in gens.iter().enumerate() {
        let j = j + 1;
        let left = crate::matcore::block_diag(&[&plant.mparts.l(j), &big.l(j)]);
        let right = crate::matcore::block_diag(&[&plant.kparts.r(j), &big.r(j)]);
        stacked += left * s * right.transpose();
    }
    let ctrl = StructuredController {
        dk: stacked.view((0, 0), (m, k)).into_owned(),
        ck: stacked.view((0, k), (m, npk)).into_owned(),
        bk: stacked.view((m, 0), (npk, k)).into_owned(),
        ak: stacked.view((m, k), (npk, npk)).into_owned(),
        nk_parts: Some(big),
        generators: Some(gens),
    };
    if !ctrl.stacked().iter().all(|v| v.is_finite()) {
        return Err(reconstruction(4, "non-finite controller entries"));
    }
    Ok(ctrl)
}

/// Outcome of checking a controller against a plant and a level.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub spectral_abscissa: f64,
    pub hinf_norm: f64,
    pub structure_residual: f64,
    pub stable: bool,
    pub below_gamma: bool,
    pub structured: bool,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.stable && self.below_gamma && self.structured
    }
}

/// Closed-loop stability, `‖T‖∞ < γ` and block lower-triangularity; the
/// structure test allows `structure_tol` in absolute value. An infinite
/// tolerance skips the structure test, and then the controller state need
/// not be partitioned like the plant (the residual is reported as NaN).
pub fn verify_controller(
    plant: &GeneralizedPlant,
    ctrl: &StructuredController,
    gamma: f64,
    structure_tol: f64,
) -> Result<VerificationReport> {
    let check_structure = structure_tol.is_finite();
    let v = ctrl.validate(plant);
    let partition_ok = !v.iter().any(|x| x.matrix == "nKparts");
    if let Some(bad) = v
        .iter()
        .find(|x| (x.block.is_none() && x.matrix != "nKparts") || (x.matrix == "nKparts" && check_structure))
    {
        return Err(Error::Structure(bad.to_string()));
    }
    let cl = close_loop(plant, ctrl)?;
    let abscissa = if cl.a.nrows() == 0 {
        f64::NEG_INFINITY
    } else {
        spectral_abscissa(&cl.a)?
    };
    let stable = abscissa < 0.0;
    let norm = cl.hinf_norm();
    let residual = if partition_ok {
        ctrl.structure_residual(plant)?
    } else {
        f64::NAN
    };
    Ok(VerificationReport {
        spectral_abscissa: abscissa,
        hinf_norm: norm,
        structure_residual: residual,
        stable,
        below_gamma: norm < gamma,
        structured: !check_structure || residual <= structure_tol,
    })
}

/// A verified structured design.
#[derive(Clone, Debug)]
pub struct StructuredDesign {
    pub gamma_opt: f64,
    pub gamma: f64,
    pub certificate: ScalingCertificate,
    pub controller: StructuredController,
    pub report: VerificationReport,
}

/// Structured optimum, certificate and verified controller. With
/// `gamma = Some(g)` the design targets `g`; otherwise the optimum plus a
/// backoff that grows after each failed attempt.
pub fn synthesize_structured(
    plant: &GeneralizedPlant,
    gamma: Option<f64>,
    opts: &SynthOptions,
) -> Result<StructuredDesign> {
    let gamma_opt = match gamma {
        Some(g) => g,
        None => synth_structured_gamma(plant, &opts.solver)?,
    };
    let mut backoff = if gamma.is_some() { 0.0 } else { opts.backoff };
    let mut last = String::new();
    for _ in 0..opts.max_attempts {
        let target = if gamma.is_some() {
            gamma_opt
        } else {
            backed_off(gamma_opt, backoff, plant)
        };
        let res = synth_structured_feasible(plant, target, Coupling::Refined, &opts.solver)?;
        match res.certificate {
            None if gamma.is_some() => {
                return Err(Error::Infeasible(format!(
                    "gamma = {target} not achievable ({:?})",
                    res.status
                )));
            }
            None => last = format!("no certificate at gamma = {target:.6e}"),
            Some(cert) => match construct_structured_controller(plant, &cert, &opts.solver, opts.cond_cap) {
                Ok(controller) => {
                    let report = verify_controller(plant, &controller, target, 0.0)?;
                    if report.passed() {
                        return Ok(StructuredDesign {
                            gamma_opt,
                            gamma: target,
                            certificate: cert,
                            controller,
                            report,
                        });
                    }
                    last = format!(
                        "verification failed: abscissa {:.3e}, norm {:.6e}, residual {:.1e}",
                        report.spectral_abscissa, report.hinf_norm, report.structure_residual
                    );
                }
                Err(e) => last = e.to_string(),
            },
        }
        debug!("attempt at gamma = {target:.6e} failed: {last}");
        if gamma.is_some() {
            break;
        }
        backoff = (backoff * opts.backoff_growth).max(opts.backoff);
    }
    Err(Error::Numerical(format!("structured construction failed: {last}")))
}
