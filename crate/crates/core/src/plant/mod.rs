//! Generalized plants, structured controllers and their interconnection.

mod interconnect;
mod io;
mod norm;

use std::fmt;

use crate::error::{Error, Result};
use crate::matcore::{block, is_block_lower_triangular, upper_block_residual, Matrix, Partition};

pub use interconnect::{
    build_interconnection, example_fig1, fig1_wiring, Fig1Variant, PortWiring, StateSpace, SubsystemPorts,
};
pub use io::{
    controller_from_json, controller_to_json, plant_from_json, plant_to_json, read_controller, read_plant,
    write_controller, write_plant,
};
pub use norm::{analysis_lmi, freq_response_sigma_max, hinf_norm, hinf_norm_tol};

/// Realization
///
/// ```text
///   ẋ = A x + B0 d + B u
///   e = C0 x + D0 d + E u
///   y = C x + F d
/// ```
///
/// with `A`, `B`, `C` block lower-triangular with respect to the state,
/// control and measurement partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedPlant {
    pub a: Matrix,
    pub b0: Matrix,
    pub b: Matrix,
    pub c0: Matrix,
    pub d0: Matrix,
    pub e: Matrix,
    pub c: Matrix,
    pub f: Matrix,
    pub nparts: Partition,
    pub mparts: Partition,
    pub kparts: Partition,
}

/// One failed structure or dimension requirement.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub matrix: &'static str,
    /// `(row block, column block)` of an offending block above the
    /// diagonal, if the violation is structural.
    pub block: Option<(usize, usize)>,
    pub magnitude: f64,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block {
            Some((i, j)) => write!(
                f,
                "{}: block ({i},{j}) above the diagonal is nonzero (max |entry| {:.3e})",
                self.matrix, self.magnitude
            ),
            None => write!(f, "{}: {}", self.matrix, self.detail),
        }
    }
}

/// Blocks `(i, j)` with `i < j` that are not exactly zero.
fn upper_violations(name: &'static str, m: &Matrix, rows: &Partition, cols: &Partition) -> Vec<Violation> {
    let mut out = Vec::new();
    for j in 1..=cols.blocks() {
        for i in 1..j.min(rows.blocks() + 1) {
            let blk = m.view((rows.head(i), cols.head(j)), (rows.size(i), cols.size(j)));
            let mag = blk.amax();
            if mag != 0.0 {
                out.push(Violation {
                    matrix: name,
                    block: Some((i, j)),
                    magnitude: mag,
                    detail: String::new(),
                });
            }
        }
    }
    out
}

fn shape_violation(name: &'static str, m: &Matrix, rows: usize, cols: usize) -> Option<Violation> {
    (m.shape() != (rows, cols)).then(|| Violation {
        matrix: name,
        block: None,
        magnitude: 0.0,
        detail: format!("shape {:?}, expected {:?}", m.shape(), (rows, cols)),
    })
}

impl GeneralizedPlant {
    /// Build a plant and reject it unless [`GeneralizedPlant::validate`]
    /// comes back empty.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        b0: Matrix,
        b: Matrix,
        c0: Matrix,
        d0: Matrix,
        e: Matrix,
        c: Matrix,
        f: Matrix,
        nparts: Partition,
        mparts: Partition,
        kparts: Partition,
    ) -> Result<Self> {
        let plant = Self {
            a,
            b0,
            b,
            c0,
            d0,
            e,
            c,
            f,
            nparts,
            mparts,
            kparts,
        };
        let v = plant.validate();
        if !v.is_empty() {
            let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            return Err(Error::Structure(msgs.join("; ")));
        }
        Ok(plant)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn q(&self) -> usize {
        self.b0.ncols()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn r(&self) -> usize {
        self.c0.nrows()
    }
    pub fn k(&self) -> usize {
        self.c.nrows()
    }
    /// Number of nested blocks.
    pub fn p(&self) -> usize {
        self.nparts.blocks()
    }

    /// Dimension and structure violations; empty iff the plant is a valid
    /// nested generalized plant. Structure is checked exactly.
    pub fn validate(&self) -> Vec<Violation> {
        let (n, q, m) = (self.nparts.total(), self.b0.ncols(), self.mparts.total());
        let (r, k) = (self.c0.nrows(), self.kparts.total());
        let mut out: Vec<Violation> = [
            shape_violation("A", &self.a, n, n),
            shape_violation("B0", &self.b0, n, q),
            shape_violation("B", &self.b, n, m),
            shape_violation("C0", &self.c0, r, n),
            shape_violation("D0", &self.d0, r, q),
            shape_violation("E", &self.e, r, m),
            shape_violation("C", &self.c, k, n),
            shape_violation("F", &self.f, k, q),
        ]
        .into_iter()
        .flatten()
        .collect();
        let p = self.nparts.blocks();
        for (name, part) in [("mparts", &self.mparts), ("kparts", &self.kparts)] {
            if part.blocks() != p {
                out.push(Violation {
                    matrix: name,
                    block: None,
                    magnitude: 0.0,
                    detail: format!("{} blocks, expected {p}", part.blocks()),
                });
            }
        }
        if !out.is_empty() {
            return out;
        }
        out.extend(upper_violations("A", &self.a, &self.nparts, &self.nparts));
        out.extend(upper_violations("B", &self.b, &self.nparts, &self.mparts));
        out.extend(upper_violations("C", &self.c, &self.kparts, &self.nparts));
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

/// Controller
///
/// ```text
///   ẋ_K = AK x_K + BK y
///   u   = CK x_K + DK y
/// ```
///
/// with all four matrices block lower-triangular. A static controller has
/// `nk_parts = None`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredController {
    pub ak: Matrix,
    pub bk: Matrix,
    pub ck: Matrix,
    pub dk: Matrix,
    pub nk_parts: Option<Partition>,
    /// Unstructured generators `S^K_j` with
    /// `[[DK, CK], [BK, AK]] = Σ_j (L_j ⊕ L_j) S^K_j (R_j ⊕ R_j)ᵀ`.
    pub generators: Option<Vec<Matrix>>,
}

impl StructuredController {
    pub fn static_gain(dk: Matrix) -> Self {
        let (m, k) = dk.shape();
        Self {
            ak: Matrix::zeros(0, 0),
            bk: Matrix::zeros(0, k),
            ck: Matrix::zeros(m, 0),
            dk,
            nk_parts: None,
            generators: None,
        }
    }

    pub fn order(&self) -> usize {
        self.ak.nrows()
    }

    /// Structure violations relative to the plant's control and
    /// measurement partitions.
    pub fn validate(&self, plant: &GeneralizedPlant) -> Vec<Violation> {
        let nk = self.order();
        let (m, k) = (plant.m(), plant.k());
        let mut out: Vec<Violation> = [
            shape_violation("AK", &self.ak, nk, nk),
            shape_violation("BK", &self.bk, nk, k),
            shape_violation("CK", &self.ck, m, nk),
            shape_violation("DK", &self.dk, m, k),
        ]
        .into_iter()
        .flatten()
        .collect();
        match &self.nk_parts {
            Some(parts) if parts.total() != nk || parts.blocks() != plant.p() => out.push(Violation {
                matrix: "nKparts",
                block: None,
                magnitude: 0.0,
                detail: format!(
                    "{:?} does not split order {nk} into {} blocks",
                    parts.sizes(),
                    plant.p()
                ),
            }),
            None if nk != 0 => out.push(Violation {
                matrix: "nKparts",
                block: None,
                magnitude: 0.0,
                detail: "missing for a dynamic controller".into(),
            }),
            _ => {}
        }
        if !out.is_empty() {
            return out;
        }
        out.extend(upper_violations("DK", &self.dk, &plant.mparts, &plant.kparts));
        if let Some(parts) = &self.nk_parts {
            out.extend(upper_violations("AK", &self.ak, parts, parts));
            out.extend(upper_violations("BK", &self.bk, parts, &plant.kparts));
            out.extend(upper_violations("CK", &self.ck, &plant.mparts, parts));
        }
        out
    }

    /// Largest entry above the block diagonal over all four matrices.
    pub fn structure_residual(&self, plant: &GeneralizedPlant) -> Result<f64> {
        let mut worst = upper_block_residual(&self.dk, &plant.mparts, &plant.kparts)?;
        if let Some(parts) = &self.nk_parts {
            worst = worst
                .max(upper_block_residual(&self.ak, parts, parts)?)
                .max(upper_block_residual(&self.bk, parts, &plant.kparts)?)
                .max(upper_block_residual(&self.ck, &plant.mparts, parts)?);
        }
        Ok(worst)
    }

    pub fn is_structured(&self, plant: &GeneralizedPlant, tol: f64) -> Result<bool> {
        Ok(self.structure_residual(plant)? <= tol)
    }

    /// `[[DK, CK], [BK, AK]]`.
    pub fn stacked(&self) -> Matrix {
        block(&[
            vec![self.dk.clone(), self.ck.clone()],
            vec![self.bk.clone(), self.ak.clone()],
        ])
        .expect("controller blocks conform")
    }
}

/// Closed-loop realization `(𝒜, ℬ, 𝒞, 𝒟)` from `d` to `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoop {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl ClosedLoop {
    pub fn is_stable(&self) -> bool {
        crate::matcore::is_hurwitz(&self.a, 0.0).unwrap_or(false)
    }

    pub fn hinf_norm(&self) -> f64 {
        hinf_norm(&self.a, &self.b, &self.c, &self.d)
    }
}

pub fn close_loop(plant: &GeneralizedPlant, k: &StructuredController) -> Result<ClosedLoop> {
    let nk = k.order();
    if k.ak.shape() != (nk, nk)
        || k.bk.shape() != (nk, plant.k())
        || k.ck.shape() != (plant.m(), nk)
        || k.dk.shape() != (plant.m(), plant.k())
    {
        return Err(Error::Dimension(format!(
            "controller (AK {:?}, BK {:?}, CK {:?}, DK {:?}) does not fit a plant with m = {}, k = {}",
            k.ak.shape(),
            k.bk.shape(),
            k.ck.shape(),
            k.dk.shape(),
            plant.m(),
            plant.k()
        )));
    }
    let p = plant;
    let a = block(&[
        vec![&p.a + &p.b * &k.dk * &p.c, &p.b * &k.ck],
        vec![&k.bk * &p.c, k.ak.clone()],
    ])?;
    let b = block(&[vec![&p.b0 + &p.b * &k.dk * &p.f], vec![&k.bk * &p.f]])?;
    let c = block(&[vec![&p.c0 + &p.e * &k.dk * &p.c, &p.e * &k.ck]])?;
    let d = &p.d0 + &p.e * &k.dk * &p.f;
    Ok(ClosedLoop { a, b, c, d })
}

/// Permutation grouping plant block `j` with controller block `j`:
/// `perm[new] = old` for the closed-loop state `(x, x_K)`.
pub fn interleaving_permutation(nparts: &Partition, nk_parts: &Partition) -> Vec<usize> {
    let n = nparts.total();
    let mut perm = Vec::with_capacity(n + nk_parts.total());
    for j in 1..=nparts.blocks() {
        perm.extend(nparts.range(j));
        perm.extend(nk_parts.range(j).map(|i| n + i));
    }
    perm
}

/// True iff the closed-loop state matrix is block lower-triangular after
/// interleaving plant and controller blocks.
pub fn closed_loop_is_nested(cl: &ClosedLoop, nparts: &Partition, nk_parts: &Partition, tol: f64) -> Result<bool> {
    let perm = interleaving_permutation(nparts, nk_parts);
    let dim = perm.len();
    let pa = Matrix::from_fn(dim, dim, |i, j| cl.a[(perm[i], perm[j])]);
    let joint = Partition::new(
        nparts
            .sizes()
            .iter()
            .zip(nk_parts.sizes())
            .map(|(a, b)| a + b)
            .collect(),
    )?;
    is_block_lower_triangular(&pa, &joint, &joint, tol)
}
