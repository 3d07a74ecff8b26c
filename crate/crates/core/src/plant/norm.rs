use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::lmi::{AffineMatrixExpr, LmiProblem};
use crate::matcore::{eigenvalues, is_hurwitz, sigma_max, Matrix};

type CMatrix = nalgebra::DMatrix<Complex<f64>>;

fn complexify(m: &Matrix) -> CMatrix {
    m.map(|v| Complex::new(v, 0.0))
}

/// `σ_max(C (iωI - A)⁻¹ B + D)`; infinite if `iω` is an eigenvalue of `A`.
pub fn freq_response_sigma_max(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix, omega: f64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return sigma_max(d);
    }
    let mut m = -complexify(a);
    for i in 0..n {
        m[(i, i)] += Complex::new(0.0, omega);
    }
    let Some(x) = m.lu().solve(&complexify(b)) else {
        return f64::INFINITY;
    };
    let g = complexify(c) * x + complexify(d);
    if g.is_empty() {
        return 0.0;
    }
    g.singular_values().max()
}

/// H∞ norm with relative accuracy `1e-6`; `+∞` if `A` is not Hurwitz.
pub fn hinf_norm(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> f64 {
    hinf_norm_tol(a, b, c, d, 1e-6)
}

/// Level-set iteration on the Hamiltonian: for a trial level `γ` above the
/// current lower bound, imaginary-axis eigenvalues mark the frequencies
/// where some singular value of `G(iω)` equals `γ`, and evaluating `G`
/// between them raises the lower bound. Stops once no crossing remains.
pub fn hinf_norm_tol(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix, tol: f64) -> f64 {
    let n = a.nrows();
    let sd = sigma_max(d);
    if n == 0 || b.ncols() == 0 || c.nrows() == 0 {
        return sd;
    }
    if !is_hurwitz(a, 0.0).unwrap_or(false) {
        return f64::INFINITY;
    }
    let sigma = |w: f64| freq_response_sigma_max(a, b, c, d, w);

    let mut lb = (sd * (1.0 + 1e-9)).max(sigma(0.0));
    if let Ok(eigs) = eigenvalues(a) {
        for (re, im) in eigs {
            lb = lb.max(sigma(im.abs())).max(sigma(re.hypot(im)));
        }
    }
    if lb == 0.0 {
        return 0.0;
    }

    for _ in 0..100 {
        let gamma = lb * (1.0 + 2.0 * tol);
        let omegas = crossing_frequencies(a, b, c, d, gamma);
        if omegas.is_empty() {
            return lb * (1.0 + tol);
        }
        let mut best = lb;
        for w in &omegas {
            best = best.max(sigma(*w));
        }
        for pair in omegas.windows(2) {
            best = best.max(sigma(0.5 * (pair[0] + pair[1])));
        }
        if best <= lb * (1.0 + 1e-12) {
            // Spurious axis eigenvalues: no level above γ was found.
            return lb * (1.0 + tol);
        }
        lb = best;
    }
    lb
}

/// Non-negative `ω` with `iω` an eigenvalue of the Hamiltonian at level γ.
fn crossing_frequencies(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix, gamma: f64) -> Vec<f64> {
    let n = a.nrows();
    let nb = b.ncols();
    let r = Matrix::identity(nb, nb) * (gamma * gamma) - d.transpose() * d;
    let Some(r_inv) = r.clone().try_inverse() else {
        return vec![];
    };
    let ah = a + b * &r_inv * d.transpose() * c;
    let nc = c.nrows();
    let q = c.transpose() * (Matrix::identity(nc, nc) + d * &r_inv * d.transpose()) * c;
    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ah);
    h.view_mut((0, n), (n, n)).copy_from(&(b * &r_inv * b.transpose()));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-ah.transpose()));
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let Ok(eigs) = eigenvalues(&h) else {
        return vec![];
    };
    let mut out: Vec<f64> = eigs
        .into_iter()
        .filter(|(re, im)| re.abs() <= 1e-7 * scale && *im >= 0.0)
        .map(|(_, im)| im)
        .collect();
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * scale);
    out
}

/// Bounded-real inequality in the symmetric unknown `𝒳`:
///
/// ```text
///   𝒳 ≻ 0,   [[𝒳A + Aᵀ𝒳, 𝒳B, Cᵀ], [Bᵀ𝒳, -γI, Dᵀ], [C, D, -γI]] ≺ 0
/// ```
pub fn analysis_lmi(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix, gamma: f64) -> Result<LmiProblem> {
    if gamma <= 0.0 {
        return Err(Error::Dimension("gamma must be positive".into()));
    }
    let (n, q, r) = (a.nrows(), b.ncols(), c.nrows());
    let mut prob = LmiProblem::new();
    let xv = prob.symmetric("X", n);
    let x = AffineMatrixExpr::var(&xv);
    let xb = x.rmul(b)?;
    let k = |m: &Matrix| AffineMatrixExpr::constant(m.clone());
    let big = AffineMatrixExpr::block(&[
        vec![x.rmul(a)?.he()?, xb.clone(), k(&c.transpose())],
        vec![xb.transpose(), k(&(-Matrix::identity(q, q) * gamma)), k(&d.transpose())],
        vec![k(c), k(d), k(&(-Matrix::identity(r, r) * gamma))],
    ])?;
    prob.negative("bounded real", big)?;
    prob.positive("X > 0", x)?;
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{LmiStatus, SolverOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn first_order_lags() {
        assert!((hinf_norm(&s(-1.0), &s(1.0), &s(1.0), &s(0.0)) - 1.0).abs() < 1e-5);
        assert!((hinf_norm(&s(-2.0), &s(1.0), &s(3.0), &s(0.0)) - 1.5).abs() < 1.5e-5);
    }

    #[test]
    fn unstable_system_is_infinite() {
        assert!(hinf_norm(&s(0.5), &s(1.0), &s(1.0), &s(0.0)).is_infinite());
    }

    #[test]
    fn resonant_peak() {
        // 1/(s² + 0.2 s + 1): peak 1/(2ζ√(1-ζ²)) with ζ = 0.1
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let exact = 1.0 / (0.2 * (1.0f64 - 0.01).sqrt());
        let got = hinf_norm(&a, &b, &c, &s(0.0));
        assert!((got - exact).abs() / exact < 2e-6, "{got} vs {exact}");
    }

    pub(crate) fn random_stable(
        rng: &mut ChaCha8Rng,
        n: usize,
        q: usize,
        r: usize,
    ) -> (Matrix, Matrix, Matrix, Matrix) {
        let mut a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let abscissa = crate::matcore::spectral_abscissa(&a).unwrap();
        for i in 0..n {
            a[(i, i)] -= abscissa + rng.random_range(0.1..1.0);
        }
        let b = Matrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0));
        let c = Matrix::from_fn(r, n, |_, _| rng.random_range(-1.0..1.0));
        let d = Matrix::from_fn(r, q, |_, _| rng.random_range(-0.3..0.3));
        (a, b, c, d)
    }

    #[test]
    fn matches_dense_frequency_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let (a, b, c, d) = random_stable(&mut rng, 4, 2, 2);
            let norm = hinf_norm(&a, &b, &c, &d);
            let mut grid: f64 = freq_response_sigma_max(&a, &b, &c, &d, 0.0);
            let npts = 100_000;
            for i in 0..npts {
                let w = 10f64.powf(-4.0 + 8.0 * i as f64 / (npts - 1) as f64);
                grid = grid.max(freq_response_sigma_max(&a, &b, &c, &d, w));
            }
            assert!((norm - grid).abs() / grid < 1e-4, "{norm} vs {grid}");
            assert!(norm >= grid * (1.0 - 1e-9));
        }
    }

    #[test]
    fn analysis_lmi_scalar() {
        let opts = SolverOptions::default();
        let feas = analysis_lmi(&s(-1.0), &s(1.0), &s(1.0), &s(0.0), 2.0)
            .unwrap()
            .solve(&opts)
            .unwrap();
        assert_eq!(feas.status, LmiStatus::Feasible);
        let inf = analysis_lmi(&s(-1.0), &s(1.0), &s(1.0), &s(0.0), 0.5)
            .unwrap()
            .solve(&opts)
            .unwrap();
        assert_eq!(inf.status, LmiStatus::Infeasible, "{}", inf.diagnostics);
    }

    #[test]
    fn analysis_lmi_brackets_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let opts = SolverOptions::default();
        for _ in 0..3 {
            let (a, b, c, d) = random_stable(&mut rng, 3, 2, 2);
            let norm = hinf_norm(&a, &b, &c, &d);
            let above = analysis_lmi(&a, &b, &c, &d, norm * (1.0 + 1e-3))
                .unwrap()
                .solve(&opts)
                .unwrap();
            assert_eq!(above.status, LmiStatus::Feasible);
            let below = analysis_lmi(&a, &b, &c, &d, norm * (1.0 - 1e-3))
                .unwrap()
                .solve(&opts)
                .unwrap();
            assert_ne!(below.status, LmiStatus::Feasible);
        }
    }
}
