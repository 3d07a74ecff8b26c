use super::expr::AffineMatrixExpr;
use super::problem::{LmiProblem, LmiStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::matcore::{kernel_basis, max_sym_eig, Matrix};

/// Find `S` with `He(Q + Mᵀ S N) ≺ 0`.
///
/// Solvability is checked first on `ker M` and `ker N`. A strictly
/// feasible `S` is then located and, keeping half of its margin,
/// the one of least Frobenius norm is returned.
pub fn solve_for_single_unknown(q: &Matrix, m: &Matrix, n: &Matrix, opts: &SolverOptions) -> Result<Matrix> {
    let dim = q.nrows();
    if q.ncols() != dim {
        return Err(Error::NotSquare {
            rows: q.nrows(),
            cols: q.ncols(),
        });
    }
    if m.ncols() != dim || n.ncols() != dim {
        return Err(Error::Dimension(format!(
            "Q is {dim}x{dim} but M has {} and N has {} columns",
            m.ncols(),
            n.ncols()
        )));
    }
    if dim == 0 {
        return Ok(Matrix::zeros(m.nrows(), n.nrows()));
    }

    // Write M = Lm·M₀ and N = Ln·N₀ with orthonormal rows in M₀, N₀ and
    // move the part of Q in range(M₀ᵀ)×range(N₀ᵀ) into the unknown. The
    // inequality is unchanged but its constant term no longer carries
    // products of large factors.
    let (m0, lm) = row_factor(m);
    let (n0, ln) = row_factor(n);
    let q_range = &m0 * q * n0.transpose();
    let q0 = q - m0.transpose() * &q_range * &n0;
    let lm_pinv = pinv(&lm.transpose());
    let ln_pinv = pinv(&ln);
    let recover = |shat: &Matrix| &lm_pinv * (shat - &q_range) * &ln_pinv;
    let heq0 = &q0 + q0.transpose();
    // He(Q) and He(Q₀) agree on ker M and on ker N.
    let scale = heq0.norm().max(1.0);
    for (side, op) in [("M", &m0), ("N", &n0)] {
        let k = kernel_basis(op, 0.0);
        if k.ncols() == 0 {
            continue;
        }
        let lam = max_sym_eig(&(k.transpose() * &heq0 * &k));
        if lam >= -1e-14 * scale {
            return Err(Error::Unsolvable { side, eigenvalue: lam });
        }
    }

    let lhs = |p: &mut LmiProblem| -> Result<(super::expr::VarRef, AffineMatrixExpr)> {
        let s = p.full("S", m0.nrows(), n0.nrows());
        let e = AffineMatrixExpr::var(&s)
            .lmul(&m0.transpose())?
            .rmul(&n0)?
            .add_constant(&q0)?
            .he()?;
        Ok((s, e))
    };

    // Stage A: any strictly feasible S, to measure the attainable margin.
    // Near the boundary the margin can fall below the default, so smaller
    // ones are tried; the final check is made on the original data.
    let mut pa = LmiProblem::new();
    let (sa, ea) = lhs(&mut pa)?;
    pa.negative("projection", ea)?;
    let mut sol_a = pa.solve(opts)?;
    for eps_rel in [1e-9, 1e-11] {
        if sol_a.status == LmiStatus::Feasible || eps_rel >= opts.eps_rel {
            break;
        }
        sol_a = pa.solve(&SolverOptions {
            eps_rel,
            ..opts.clone()
        })?;
    }
    if sol_a.status != LmiStatus::Feasible {
        return Err(Error::Numerical(format!(
            "projection step not solved: {:?} ({})",
            sol_a.status, sol_a.diagnostics
        )));
    }
    let shat_a = sol_a.value(&sa);
    let he_a = &q0 + m0.transpose() * &shat_a * &n0;
    let delta = -max_sym_eig(&(&he_a + he_a.transpose()));
    // The margin is capped at the size of He(Q) so that a huge phase-one
    // margin does not force a huge S.
    let delta = delta.min(crate::matcore::sigma_max(&heq0).max(f64::MIN_POSITIVE));
    let s_a = recover(&shat_a);

    // Stage B: least ‖S‖_F subject to half the margin.
    let mut pb = LmiProblem::new();
    let (sb, eb) = lhs(&mut pb)?;
    let r = pb.scalar("r");
    pb.negative(
        "projection",
        eb.add_constant(&(Matrix::identity(dim, dim) * (0.5 * delta)))?,
    )?;
    let sv = AffineMatrixExpr::var(&sb)
        .add_constant(&-&q_range)?
        .lmul(&lm_pinv)?
        .rmul(&ln_pinv)?;
    let ncols = n.nrows();
    let mut vec_rows = Vec::with_capacity(ncols);
    for j in 0..ncols {
        let mut ej = Matrix::zeros(ncols, 1);
        ej[(j, 0)] = 1.0;
        vec_rows.push(vec![sv.rmul(&ej)?]);
    }
    let vec_s = AffineMatrixExpr::block(&vec_rows)?;
    let len = vec_s.rows;
    let rr = AffineMatrixExpr::var(&r);
    let cone = AffineMatrixExpr::block(&[
        vec![rr.clone(), vec_s.transpose()],
        vec![vec_s, AffineMatrixExpr::scalar_times(&r, &Matrix::identity(len, len))],
    ])?;
    pb.positive("norm", cone)?;
    pb.minimize(rr)?;
    let post = |s: &Matrix| {
        let t = q + m.transpose() * s * n;
        max_sym_eig(&(&t + t.transpose()))
    };
    if let Ok(sol) = pb.solve(opts) {
        if sol.status == LmiStatus::Feasible {
            let s = recover(&sol.value(&sb));
            if post(&s) < 0.0 {
                return Ok(s);
            }
        }
    }
    let lam = post(&s_a);
    if lam < 0.0 {
        return Ok(s_a);
    }
    // Badly conditioned factors can spoil the map back; try the
    // unreduced data directly.
    let mut pc = LmiProblem::new();
    let sc = pc.full("S", m.nrows(), n.nrows());
    let ec = AffineMatrixExpr::var(&sc)
        .lmul(&m.transpose())?
        .rmul(n)?
        .add_constant(q)?
        .he()?;
    pc.negative("projection", ec)?;
    let direct = pc
        .solve(opts)
        .ok()
        .filter(|sol| sol.status == LmiStatus::Feasible)
        .map(|sol| sol.value(&sc));
    if let Some(s) = direct.filter(|s| post(s) < 0.0) {
        Ok(s)
    } else {
        Err(Error::Numerical(format!(
            "projection step lost its margin when mapped back (largest eigenvalue {lam:.3e})"
        )))
    }
}

/// `A = L·A₀` with `A₀` having orthonormal rows spanning the row space of `A`.
fn row_factor(a: &Matrix) -> (Matrix, Matrix) {
    if a.nrows() == 0 || a.ncols() == 0 {
        return (Matrix::zeros(0, a.ncols()), Matrix::zeros(a.nrows(), 0));
    }
    let svd = a.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > smax * 1e-13 * a.nrows().max(a.ncols()) as f64)
        .collect();
    let a0 = Matrix::from_fn(keep.len(), a.ncols(), |i, j| vt[(keep[i], j)]);
    let l = Matrix::from_fn(a.nrows(), keep.len(), |i, j| {
        u[(i, keep[j])] * svd.singular_values[keep[j]]
    });
    (a0, l)
}

fn pinv(a: &Matrix) -> Matrix {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Matrix::zeros(a.ncols(), a.nrows());
    }
    a.clone().pseudo_inverse(0.0).expect("non-negative tolerance")
}
