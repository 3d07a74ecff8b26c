#![allow(dead_code)]

use nested_hinf::matcore::spectral_abscissa;
use nested_hinf::plant::GeneralizedPlant;
use nested_hinf::{Matrix, Partition};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn parts(sizes: &[usize]) -> Partition {
    Partition::new(sizes.to_vec()).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random entries with every block above the diagonal set to zero.
pub fn random_lower(rng: &mut ChaCha8Rng, rows: &Partition, cols: &Partition, scale: f64) -> Matrix {
    let mut m = random_matrix(rng, rows.total(), cols.total(), scale);
    for j in 1..=cols.blocks() {
        m.view_mut((0, cols.head(j)), (rows.head(j), cols.size(j))).fill(0.0);
    }
    m
}

/// Shift `a` by a multiple of the identity so its spectral abscissa is `target`.
pub fn place_abscissa(a: &mut Matrix, target: f64) {
    let shift = spectral_abscissa(a).unwrap() - target;
    for i in 0..a.nrows() {
        a[(i, i)] -= shift;
    }
}

/// Random nested plant with `q` disturbances and `r` performance outputs;
/// the open loop may be mildly unstable.
pub fn random_plant(
    rng: &mut ChaCha8Rng,
    np: &Partition,
    mp: &Partition,
    kp: &Partition,
    q: usize,
    r: usize,
) -> GeneralizedPlant {
    let mut a = random_lower(rng, np, np, 1.0);
    let target = rng.random_range(-1.0..0.5);
    place_abscissa(&mut a, target);
    let b = random_lower(rng, np, mp, 1.0);
    let c = random_lower(rng, kp, np, 1.0);
    let (n, m, k) = (np.total(), mp.total(), kp.total());
    GeneralizedPlant::new(
        a,
        random_matrix(rng, n, q, 1.0),
        b,
        random_matrix(rng, r, n, 1.0),
        random_matrix(rng, r, q, 0.2),
        random_matrix(rng, r, m, 1.0),
        c,
        random_matrix(rng, k, q, 1.0),
        np.clone(),
        mp.clone(),
        kp.clone(),
    )
    .unwrap()
}

/// Random single-block plant of order `n`.
pub fn random_single(rng: &mut ChaCha8Rng, n: usize) -> GeneralizedPlant {
    let m = rng.random_range(1..=2);
    let k = rng.random_range(1..=2);
    let q = k + rng.random_range(0..=1);
    let r = m + rng.random_range(0..=1);
    random_plant(rng, &parts(&[n]), &parts(&[m]), &parts(&[k]), q, r)
}

/// Random two-block plant with subsystem orders in `1..=3`.
pub fn random_two_block(rng: &mut ChaCha8Rng) -> GeneralizedPlant {
    let np = parts(&[rng.random_range(1..=3), rng.random_range(1..=3)]);
    let mp = parts(&[1, 1]);
    let kp = parts(&[1, 1]);
    let q = rng.random_range(2..=3);
    let r = rng.random_range(2..=3);
    random_plant(rng, &np, &mp, &kp, q, r)
}

fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    nested_hinf::matcore::block_diag(&[a, b])
}

/// Two independent loops side by side, and the loops themselves.
pub fn decoupled_pair(rng: &mut ChaCha8Rng) -> (GeneralizedPlant, GeneralizedPlant, GeneralizedPlant) {
    let (n1, n2) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let g1 = random_single(rng, n1);
    let g2 = random_single(rng, n2);
    let p = GeneralizedPlant::new(
        block_diag(&g1.a, &g2.a),
        block_diag(&g1.b0, &g2.b0),
        block_diag(&g1.b, &g2.b),
        block_diag(&g1.c0, &g2.c0),
        block_diag(&g1.d0, &g2.d0),
        block_diag(&g1.e, &g2.e),
        block_diag(&g1.c, &g2.c),
        block_diag(&g1.f, &g2.f),
        parts(&[g1.n(), g2.n()]),
        parts(&[g1.m(), g2.m()]),
        parts(&[g1.k(), g2.k()]),
    )
    .unwrap();
    (p, g1, g2)
}

/// Two-block plant with `B0 = [B̃, 0]`, `F = [0, I]`, `C0 = [C̃; 0]`,
/// `E = [0; I]`, `D0 = 0`.
pub fn random_regular(rng: &mut ChaCha8Rng) -> GeneralizedPlant {
    let np = parts(&[rng.random_range(1..=2), rng.random_range(1..=2)]);
    let one = parts(&[1, 1]);
    let n = np.total();
    let mut a = random_lower(rng, &np, &np, 1.0);
    let target = rng.random_range(-1.0..0.5);
    place_abscissa(&mut a, target);
    let b = random_lower(rng, &np, &one, 1.0);
    let c = random_lower(rng, &one, &np, 1.0);
    let (qt, rt) = (rng.random_range(1..=2), rng.random_range(1..=2));
    let bt = random_matrix(rng, n, qt, 1.0);
    let ct = random_matrix(rng, rt, n, 1.0);
    let mut b0 = Matrix::zeros(n, qt + 2);
    b0.view_mut((0, 0), (n, qt)).copy_from(&bt);
    let mut f = Matrix::zeros(2, qt + 2);
    f.view_mut((0, qt), (2, 2)).fill_with_identity();
    let mut c0 = Matrix::zeros(rt + 2, n);
    c0.view_mut((0, 0), (rt, n)).copy_from(&ct);
    let mut e = Matrix::zeros(rt + 2, 2);
    e.view_mut((rt, 0), (2, 2)).fill_with_identity();
    GeneralizedPlant::new(
        a,
        b0,
        b,
        c0,
        Matrix::zeros(rt + 2, qt + 2),
        e,
        c,
        f,
        np,
        one.clone(),
        one,
    )
    .unwrap()
}

/// Random Hurwitz `(A, B, C, D)`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, q: usize, r: usize) -> (Matrix, Matrix, Matrix, Matrix) {
    let mut a = random_matrix(rng, n, n, 1.0);
    let target = -rng.random_range(0.05..1.0);
    place_abscissa(&mut a, target);
    (
        a,
        random_matrix(rng, n, q, 1.0),
        random_matrix(rng, r, n, 1.0),
        random_matrix(rng, r, q, 0.3),
    )
}
