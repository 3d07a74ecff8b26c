//! Dense primal-dual interior-point solver for block-diagonal semidefinite
//! programs in dual standard form:
//!
//! ```text
//!   maximize  bᵀy
//!   s.t.      S_i = C_i - Σ_k y_k A_ik  ⪰ 0     (PSD blocks)
//!             s   = c   - Σ_k y_k a_k   ≥ 0     (non-negative orthant)
//! ```
//!
//! with primal `min ⟨C, X⟩  s.t. ⟨A_k, X⟩ = b_k, X ⪰ 0`.
//!
//! Search direction is Nesterov-Todd with a Mehrotra predictor-corrector,
//! started from an infeasible point. Intended for problems with up to a few
//! hundred scalar unknowns and PSD blocks up to roughly 60×60.

use nalgebra::{Cholesky, DVector, SymmetricEigen};

use crate::matcore::Matrix;

/// One cone block of an [`SdpProblem`]. Coefficients are sparse in the
/// unknowns: only `(k, A_k)` pairs with `A_k ≠ 0` are listed.
#[derive(Clone, Debug)]
pub enum ConeBlock {
    Psd {
        c: Matrix,
        a: Vec<(usize, Matrix)>,
    },
    Nonneg {
        c: DVector<f64>,
        a: Vec<(usize, DVector<f64>)>,
    },
}

impl ConeBlock {
    fn dim(&self) -> usize {
        match self {
            ConeBlock::Psd { c, .. } => c.nrows(),
            ConeBlock::Nonneg { c, .. } => c.len(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    /// Number of unknowns `y`.
    pub m: usize,
    pub blocks: Vec<ConeBlock>,
    pub b: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    Converged,
    /// Iteration limit or stalled progress; best iterate returned.
    Inaccurate,
    /// Linear algebra breakdown or divergence.
    Breakdown,
}

/// Primal or slack value of one block.
#[derive(Clone, Debug)]
pub enum BlockValue {
    Psd(Matrix),
    Nonneg(DVector<f64>),
}

impl BlockValue {
    fn inner(&self, other: &BlockValue) -> f64 {
        match (self, other) {
            (BlockValue::Psd(a), BlockValue::Psd(b)) => a.dot(b),
            (BlockValue::Nonneg(a), BlockValue::Nonneg(b)) => a.dot(b),
            _ => unreachable!("mismatched block kinds"),
        }
    }

    fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn as_psd(&self) -> Option<&Matrix> {
        match self {
            BlockValue::Psd(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_nonneg(&self) -> Option<&DVector<f64>> {
        match self {
            BlockValue::Nonneg(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub y: DVector<f64>,
    pub x: Vec<BlockValue>,
    pub s: Vec<BlockValue>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub iterations: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct IpmSettings {
    pub max_iter: usize,
    pub gap_tol: f64,
    pub feas_tol: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    pub verbose: bool,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            max_iter: 120,
            gap_tol: 1e-9,
            feas_tol: 1e-9,
            step_fraction: 0.98,
            verbose: false,
        }
    }
}

/// Seam for plugging in an external conic solver.
pub trait ConicBackend: Send + Sync {
    fn solve(&self, problem: &SdpProblem) -> SdpSolution;
}

/// Reference dense interior-point backend.
#[derive(Clone, Debug, Default)]
pub struct InteriorPoint {
    pub settings: IpmSettings,
}

impl InteriorPoint {
    pub fn new(settings: IpmSettings) -> Self {
        Self { settings }
    }
}

impl ConicBackend for InteriorPoint {
    fn solve(&self, problem: &SdpProblem) -> SdpSolution {
        Ipm::new(problem, &self.settings).run()
    }
}

struct Ipm<'a> {
    p: &'a SdpProblem,
    set: &'a IpmSettings,
    nu: f64,
    b_norm: f64,
    c_norm: f64,
}

/// Nesterov-Todd scaling of a PSD block: `W = G Gᵀ` with `W S W = X`
/// and `Gᵀ S G = G⁻¹ X G⁻ᵀ = diag(d)`.
struct NtScaling {
    g: Matrix,
    g_inv: Matrix,
    w: Matrix,
    d: DVector<f64>,
}

impl NtScaling {
    fn new(x: &Matrix, s: &Matrix) -> Option<Self> {
        let lx = Cholesky::new(sym(x))?.l();
        let ls = Cholesky::new(sym(s))?.l();
        let svd = (ls.transpose() * &lx).svd(false, true);
        let vt = svd.v_t?;
        let d = svd.singular_values;
        if d.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return None;
        }
        let lx_inv = lx
            .clone()
            .solve_lower_triangular(&Matrix::identity(x.nrows(), x.nrows()))?;
        let g = &lx * vt.transpose() * Matrix::from_diagonal(&d.map(|v| 1.0 / v.sqrt()));
        let g_inv = Matrix::from_diagonal(&d.map(f64::sqrt)) * &vt * lx_inv;
        let w = sym(&(&g * g.transpose()));
        Some(Self { g, g_inv, w, d })
    }
}

/// Quantities that depend on the current iterate only.
struct Factors {
    nt: Vec<Option<NtScaling>>,
    schur: Matrix,
    chol_m: Cholesky<f64, nalgebra::Dyn>,
}

impl Factors {
    /// Cholesky solve followed by iterative refinement, which also
    /// undoes a diagonal shift added to make the factorization succeed.
    fn solve(&self, h: &DVector<f64>) -> DVector<f64> {
        let mut dy = self.chol_m.solve(h);
        let mut res = (h - &self.schur * &dy).norm();
        for _ in 0..20 {
            let r = h - &self.schur * &dy;
            let next = &dy + self.chol_m.solve(&r);
            let nres = (h - &self.schur * &next).norm();
            if nres.is_nan() || nres >= 0.9 * res {
                break;
            }
            dy = next;
            res = nres;
        }
        dy
    }
}

fn sym(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn interior(v: &BlockValue) -> bool {
    match v {
        BlockValue::Psd(m) => m.nrows() == 0 || Cholesky::new(sym(m)).is_some(),
        BlockValue::Nonneg(d) => d.iter().all(|x| *x > 0.0),
    }
}

/// Largest `α` with `x + α·dx ⪰ 0` (∞ if the direction never leaves the cone).
fn max_step(x: &BlockValue, dx: &BlockValue) -> f64 {
    match (x, dx) {
        (BlockValue::Psd(x), BlockValue::Psd(dx)) => {
            if x.nrows() == 0 {
                return f64::INFINITY;
            }
            let Some(ch) = Cholesky::new(sym(x)) else {
                return 0.0;
            };
            let l = ch.l();
            let Some(linv) = l.clone().try_inverse() else {
                return 0.0;
            };
            let w = sym(&(&linv * dx * linv.transpose()));
            let lmin = SymmetricEigen::new(w)
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if lmin >= 0.0 {
                f64::INFINITY
            } else {
                -1.0 / lmin
            }
        }
        (BlockValue::Nonneg(x), BlockValue::Nonneg(dx)) => x
            .iter()
            .zip(dx.iter())
            .filter(|(_, &d)| d < 0.0)
            .map(|(&v, &d)| -v / d)
            .fold(f64::INFINITY, f64::min),
        _ => unreachable!(),
    }
}

fn axpy(x: &BlockValue, alpha: f64, dx: &BlockValue) -> BlockValue {
    match (x, dx) {
        (BlockValue::Psd(a), BlockValue::Psd(d)) => BlockValue::Psd(sym(&(a + d * alpha))),
        (BlockValue::Nonneg(a), BlockValue::Nonneg(d)) => BlockValue::Nonneg(a + d * alpha),
        _ => unreachable!(),
    }
}

impl<'a> Ipm<'a> {
    fn new(p: &'a SdpProblem, set: &'a IpmSettings) -> Self {
        let nu = p.blocks.iter().map(|b| b.dim()).sum::<usize>().max(1) as f64;
        let c_norm = p
            .blocks
            .iter()
            .map(|b| match b {
                ConeBlock::Psd { c, .. } => c.norm_squared(),
                ConeBlock::Nonneg { c, .. } => c.norm_squared(),
            })
            .sum::<f64>()
            .sqrt();
        Self {
            p,
            set,
            nu,
            b_norm: p.b.norm(),
            c_norm,
        }
    }

    /// `𝒜(X)_k = Σ_i ⟨A_ik, X_i⟩`
    fn op_a(&self, x: &[BlockValue]) -> DVector<f64> {
        let mut out = DVector::zeros(self.p.m);
        for (blk, xv) in self.p.blocks.iter().zip(x) {
            match (blk, xv) {
                (ConeBlock::Psd { a, .. }, BlockValue::Psd(x)) => {
                    for (k, ak) in a {
                        out[*k] += ak.dot(x);
                    }
                }
                (ConeBlock::Nonneg { a, .. }, BlockValue::Nonneg(x)) => {
                    for (k, ak) in a {
                        out[*k] += ak.dot(x);
                    }
                }
                _ => unreachable!(),
            }
        }
        out
    }

    /// `𝒜ᵀ(y)_i = Σ_k y_k A_ik`
    fn op_at(&self, y: &DVector<f64>) -> Vec<BlockValue> {
        self.p
            .blocks
            .iter()
            .map(|blk| match blk {
                ConeBlock::Psd { c, a } => {
                    let mut m = Matrix::zeros(c.nrows(), c.ncols());
                    for (k, ak) in a {
                        m += ak * y[*k];
                    }
                    BlockValue::Psd(m)
                }
                ConeBlock::Nonneg { c, a } => {
                    let mut v = DVector::zeros(c.len());
                    for (k, ak) in a {
                        v += ak * y[*k];
                    }
                    BlockValue::Nonneg(v)
                }
            })
            .collect()
    }

    fn c_blocks(&self) -> Vec<BlockValue> {
        self.p
            .blocks
            .iter()
            .map(|blk| match blk {
                ConeBlock::Psd { c, .. } => BlockValue::Psd(c.clone()),
                ConeBlock::Nonneg { c, .. } => BlockValue::Nonneg(c.clone()),
            })
            .collect()
    }

    fn initial_point(&self) -> (Vec<BlockValue>, DVector<f64>, Vec<BlockValue>) {
        let mut xs = Vec::new();
        let mut ss = Vec::new();
        for blk in &self.p.blocks {
            let n = blk.dim() as f64;
            let (cn, a_norms): (f64, Vec<(usize, f64)>) = match blk {
                ConeBlock::Psd { c, a } => (c.norm(), a.iter().map(|(k, m)| (*k, m.norm())).collect()),
                ConeBlock::Nonneg { c, a } => (c.norm(), a.iter().map(|(k, v)| (*k, v.norm())).collect()),
            };
            let xi = a_norms
                .iter()
                .map(|(k, an)| (1.0 + self.p.b[*k].abs()) / (1.0 + an))
                .fold(0.0, f64::max)
                * n.sqrt();
            let xi = xi.max(10.0).max(n.sqrt());
            let eta = a_norms
                .iter()
                .map(|(_, an)| *an)
                .fold(cn, f64::max)
                .max(10.0)
                .max(n.sqrt());
            match blk {
                ConeBlock::Psd { c, .. } => {
                    let k = c.nrows();
                    xs.push(BlockValue::Psd(Matrix::identity(k, k) * xi));
                    ss.push(BlockValue::Psd(Matrix::identity(k, k) * eta));
                }
                ConeBlock::Nonneg { c, .. } => {
                    xs.push(BlockValue::Nonneg(DVector::from_element(c.len(), xi)));
                    ss.push(BlockValue::Nonneg(DVector::from_element(c.len(), eta)));
                }
            }
        }
        (xs, DVector::zeros(self.p.m), ss)
    }

    /// Schur complement `M_kl = ⟨Gᵀ A_k G, Gᵀ A_l G⟩` and its Cholesky factor.
    fn factor(&self, x: &[BlockValue], s: &[BlockValue]) -> Option<Factors> {
        let m = self.p.m;
        let mut schur = Matrix::zeros(m, m);
        let mut nt = Vec::with_capacity(s.len());
        for ((blk, xv), sv) in self.p.blocks.iter().zip(x).zip(s) {
            match (blk, xv, sv) {
                (ConeBlock::Psd { a, .. }, BlockValue::Psd(xm), BlockValue::Psd(sm)) => {
                    let sc = NtScaling::new(xm, sm)?;
                    let at: Vec<Matrix> = a.iter().map(|(_, ak)| sc.g.transpose() * ak * &sc.g).collect();
                    for (p, (k, _)) in a.iter().enumerate() {
                        for (q, (l, _)) in a.iter().enumerate().skip(p) {
                            let v = at[p].dot(&at[q]);
                            schur[(*k, *l)] += v;
                            if q != p {
                                schur[(*l, *k)] += v;
                            }
                        }
                    }
                    nt.push(Some(sc));
                }
                (ConeBlock::Nonneg { a, .. }, BlockValue::Nonneg(xv), BlockValue::Nonneg(sv)) => {
                    let w = xv.component_div(sv);
                    for (p, (k, ak)) in a.iter().enumerate() {
                        let wa = ak.component_mul(&w);
                        for (l, al) in a.iter().skip(p).map(|(l, al)| (*l, al)) {
                            let v = wa.dot(al);
                            schur[(*k, l)] += v;
                            if l != *k {
                                schur[(l, *k)] += v;
                            }
                        }
                    }
                    nt.push(None);
                }
                _ => unreachable!(),
            }
        }
        let schur = sym(&schur);
        let scale = schur.diagonal().amax().max(1e-300);
        let chol_m = Cholesky::new(schur.clone()).or_else(|| {
            [1e-14, 1e-12, 1e-10, 1e-8].iter().find_map(|r| {
                let mut reg = schur.clone();
                for i in 0..m {
                    reg[(i, i)] += r * scale;
                }
                Cholesky::new(reg)
            })
        })?;
        Some(Factors { nt, schur, chol_m })
    }

    /// Solve the Newton system for target `σμ` with optional second-order
    /// correction `(ΔX_p, ΔS_p)`.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        f: &Factors,
        x: &[BlockValue],
        s: &[BlockValue],
        rp: &DVector<f64>,
        rd: &[BlockValue],
        target: f64,
        corr: Option<(&[BlockValue], &[BlockValue])>,
    ) -> (Vec<BlockValue>, DVector<f64>, Vec<BlockValue>) {
        // ΔX = Z + W 𝒜ᵀ(Δy) W with Z = G H Gᵀ - W R_d W.
        let z: Vec<BlockValue> = (0..x.len())
            .map(|i| match (&x[i], &s[i], &rd[i]) {
                (BlockValue::Psd(_), BlockValue::Psd(_), BlockValue::Psd(r)) => {
                    // In scaled space X̃ = S̃ = D, and the linearized
                    // complementarity D(ΔX̃ + ΔS̃) + (ΔX̃ + ΔS̃)D = R is diagonal.
                    let sc = f.nt[i].as_ref().unwrap();
                    let k = sc.d.len();
                    let mut rc = Matrix::from_fn(k, k, |a, b| {
                        if a == b {
                            2.0 * (target - sc.d[a] * sc.d[a])
                        } else {
                            0.0
                        }
                    });
                    if let Some((dxp, dsp)) = corr {
                        let (BlockValue::Psd(a), BlockValue::Psd(b)) = (&dxp[i], &dsp[i]) else {
                            unreachable!()
                        };
                        let xt = &sc.g_inv * a * sc.g_inv.transpose();
                        let st = sc.g.transpose() * b * &sc.g;
                        let c = &xt * &st;
                        rc -= &c + c.transpose();
                    }
                    let h = Matrix::from_fn(k, k, |a, b| rc[(a, b)] / (sc.d[a] + sc.d[b]));
                    BlockValue::Psd(&sc.g * h * sc.g.transpose() - &sc.w * r * &sc.w)
                }
                (BlockValue::Nonneg(xv), BlockValue::Nonneg(sv), BlockValue::Nonneg(r)) => {
                    let mut zi = DVector::from_fn(xv.len(), |j, _| target / sv[j] - xv[j] - xv[j] * r[j] / sv[j]);
                    if let Some((dxp, dsp)) = corr {
                        let (BlockValue::Nonneg(a), BlockValue::Nonneg(b)) = (&dxp[i], &dsp[i]) else {
                            unreachable!()
                        };
                        for j in 0..zi.len() {
                            zi[j] -= a[j] * b[j] / sv[j];
                        }
                    }
                    BlockValue::Nonneg(zi)
                }
                _ => unreachable!(),
            })
            .collect();
        let h = rp - self.op_a(&z);
        let dy = f.solve(&h);
        let at_dy = self.op_at(&dy);
        let ds: Vec<BlockValue> = rd.iter().zip(&at_dy).map(|(r, a)| axpy(r, -1.0, a)).collect();
        let dx: Vec<BlockValue> = (0..x.len())
            .map(|i| match (&z[i], &x[i], &at_dy[i]) {
                (BlockValue::Psd(zi), BlockValue::Psd(_), BlockValue::Psd(a)) => {
                    let w = &f.nt[i].as_ref().unwrap().w;
                    BlockValue::Psd(sym(&(zi + w * a * w)))
                }
                (BlockValue::Nonneg(zi), BlockValue::Nonneg(xv), BlockValue::Nonneg(a)) => {
                    let BlockValue::Nonneg(sv) = &s[i] else { unreachable!() };
                    BlockValue::Nonneg(DVector::from_fn(zi.len(), |j, _| zi[j] + xv[j] * a[j] / sv[j]))
                }
                _ => unreachable!(),
            })
            .collect();
        (dx, dy, ds)
    }

    fn run(&self) -> SdpSolution {
        let (mut x, mut y, mut s) = self.initial_point();
        let c = self.c_blocks();
        let mut best: Option<SdpSolution> = None;
        let mut stall = 0usize;
        let mut last_progress = 0usize;
        let mut message = String::from("iteration limit reached");
        let mut status = SdpStatus::Inaccurate;

        for iter in 0..=self.set.max_iter {
            let rp = &self.p.b - self.op_a(&x);
            let at_y = self.op_at(&y);
            let rd: Vec<BlockValue> = (0..c.len())
                .map(|i| axpy(&axpy(&c[i], -1.0, &s[i]), -1.0, &at_y[i]))
                .collect();
            let pobj: f64 = c.iter().zip(&x).map(|(ci, xi)| ci.inner(xi)).sum();
            let dobj = self.p.b.dot(&y);
            let gap: f64 = x.iter().zip(&s).map(|(a, b)| a.inner(b)).sum();
            let mu = gap / self.nu;
            let pinf = rp.norm() / (1.0 + self.b_norm);
            let dinf = rd.iter().map(|r| r.norm_sq()).sum::<f64>().sqrt() / (1.0 + self.c_norm);
            let rel_gap = gap.max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());

            if self.set.verbose {
                log::info!(
                    "ipm {iter:3}: pobj {pobj:+.10e} dobj {dobj:+.10e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e}"
                );
            }

            let snapshot = |status, message: &str| SdpSolution {
                status,
                y: y.clone(),
                x: x.clone(),
                s: s.clone(),
                primal_objective: pobj,
                dual_objective: dobj,
                primal_infeasibility: pinf,
                dual_infeasibility: dinf,
                relative_gap: rel_gap,
                iterations: iter,
                message: message.to_string(),
            };
            let merit = rel_gap.max(pinf).max(dinf);
            let improved = match &best {
                None => true,
                Some(b) => merit < b.relative_gap.max(b.primal_infeasibility).max(b.dual_infeasibility),
            };
            if improved {
                let before = best.as_ref().map_or(f64::INFINITY, |b| {
                    b.relative_gap.max(b.primal_infeasibility).max(b.dual_infeasibility)
                });
                if merit < 0.9 * before {
                    last_progress = iter;
                }
                best = Some(snapshot(SdpStatus::Inaccurate, "best iterate"));
            }
            if iter >= last_progress + 10 {
                message = format!("no progress since iteration {last_progress}");
                break;
            }

            if rel_gap <= self.set.gap_tol && pinf <= self.set.feas_tol && dinf <= self.set.feas_tol {
                return snapshot(SdpStatus::Converged, "converged");
            }
            if iter == self.set.max_iter {
                break;
            }
            let scale = x.iter().chain(&s).map(|v| v.norm_sq()).sum::<f64>().sqrt() + y.norm();
            if !scale.is_finite() || scale > 1e30 {
                status = SdpStatus::Breakdown;
                message = format!("iterates diverged at iteration {iter}");
                break;
            }

            let Some(f) = self.factor(&x, &s) else {
                message = format!("Schur complement factorization failed at iteration {iter}");
                break;
            };

            // predictor
            let (dxp, _, dsp) = self.direction(&f, &x, &s, &rp, &rd, 0.0, None);
            let ap = x
                .iter()
                .zip(&dxp)
                .map(|(a, d)| max_step(a, d))
                .fold(f64::INFINITY, f64::min)
                .min(1.0);
            let ad = s
                .iter()
                .zip(&dsp)
                .map(|(a, d)| max_step(a, d))
                .fold(f64::INFINITY, f64::min)
                .min(1.0);
            let mu_aff: f64 = x
                .iter()
                .zip(&dxp)
                .zip(s.iter().zip(&dsp))
                .map(|((xi, dxi), (si, dsi))| axpy(xi, ap, dxi).inner(&axpy(si, ad, dsi)))
                .sum::<f64>()
                / self.nu;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // corrector
            let (dx, dy, ds) = self.direction(&f, &x, &s, &rp, &rd, sigma * mu, Some((&dxp, &dsp)));
            let ap = x
                .iter()
                .zip(&dx)
                .map(|(a, d)| max_step(a, d))
                .fold(f64::INFINITY, f64::min);
            let ad = s
                .iter()
                .zip(&ds)
                .map(|(a, d)| max_step(a, d))
                .fold(f64::INFINITY, f64::min);
            let tau = self.set.step_fraction;
            let ap = (tau * ap).min(1.0);
            let ad = (tau * ad).min(1.0);
            if !(ap.is_finite() && ad.is_finite()) {
                status = SdpStatus::Breakdown;
                message = format!("non-finite step at iteration {iter}");
                break;
            }

            // The step bound is computed in floating point; shrink it until
            // the new iterates factor.
            let (mut ap, mut ad) = (ap, ad);
            let mut xn: Vec<BlockValue> = x.iter().zip(&dx).map(|(a, d)| axpy(a, ap, d)).collect();
            for _ in 0..30 {
                if xn.iter().all(interior) {
                    break;
                }
                ap *= 0.8;
                xn = x.iter().zip(&dx).map(|(a, d)| axpy(a, ap, d)).collect();
            }
            let mut sn: Vec<BlockValue> = s.iter().zip(&ds).map(|(a, d)| axpy(a, ad, d)).collect();
            for _ in 0..30 {
                if sn.iter().all(interior) {
                    break;
                }
                ad *= 0.8;
                sn = s.iter().zip(&ds).map(|(a, d)| axpy(a, ad, d)).collect();
            }
            x = xn;
            s = sn;
            y += dy * ad;

            if ap.min(ad) < 1e-8 {
                stall += 1;
                if stall >= 5 {
                    message = format!("stalled at iteration {iter}");
                    break;
                }
            } else {
                stall = 0;
            }
        }

        let mut out = best.expect("at least one iterate recorded");
        out.status = status;
        out.message = message;
        out
    }
}
