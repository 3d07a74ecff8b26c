use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::GeneralizedPlant;
use crate::error::{Error, Result};
use crate::matcore::{block_diag, Matrix, Partition};

/// `(A, B, C, D)` of one subsystem.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl StateSpace {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.shape() != (c.nrows(), b.ncols()) {
            return Err(Error::Dimension(format!(
                "inconsistent realization: A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        Ok(Self { a, b, c, d })
    }
}

/// Ports of one subsystem. Each input is driven by the sum of the listed
/// signals; each output defines a new signal name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsystemPorts {
    pub name: String,
    /// Nested block (1-based) the subsystem's states belong to.
    pub block: usize,
    pub inputs: Vec<Vec<String>>,
    pub outputs: Vec<String>,
}

/// Signal-level description of an interconnection of subsystems.
///
/// External signals are the disturbances and the per-block controls.
/// Performance outputs and measurements are sums of named signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortWiring {
    pub disturbances: Vec<String>,
    pub controls: Vec<Vec<String>>,
    pub subsystems: Vec<SubsystemPorts>,
    pub performance: Vec<Vec<String>>,
    /// Per block, the components of `y_j`.
    pub measurements: Vec<Vec<Vec<String>>>,
}

enum Signal {
    External(usize),
    Internal(usize),
}

/// Row of a summing junction over the signal space `(ext | internal)`.
fn sum_row(
    names: &[String],
    index: &HashMap<&str, Signal>,
    next: usize,
    nint: usize,
    what: &str,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if names.is_empty() {
        return Err(Error::Wiring(format!("{what} is not driven by any signal")));
    }
    let mut ext = vec![0.0; next];
    let mut int = vec![0.0; nint];
    for name in names {
        match index.get(name.as_str()) {
            Some(Signal::External(i)) => ext[*i] += 1.0,
            Some(Signal::Internal(i)) => int[*i] += 1.0,
            None => return Err(Error::Wiring(format!("{what} refers to unknown signal '{name}'"))),
        }
    }
    Ok((ext, int))
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> Matrix {
    Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// True iff the directed graph with an edge wherever `n[i][j] ≠ 0` has no
/// cycle, i.e. `n` is nilpotent for every choice of its nonzero values.
fn pattern_nilpotent(n: &Matrix) -> bool {
    let dim = n.nrows();
    let mut indeg: Vec<usize> = (0..dim)
        .map(|i| (0..dim).filter(|&j| n[(i, j)] != 0.0).count())
        .collect();
    let mut done = vec![false; dim];
    for _ in 0..dim {
        let Some(i) = (0..dim).find(|&i| !done[i] && indeg[i] == 0) else {
            return false;
        };
        done[i] = true;
        for r in 0..dim {
            if n[(r, i)] != 0.0 {
                indeg[r] -= 1;
            }
        }
    }
    true
}

/// Eliminate all internal signals and return the generalized plant with
/// inputs `(d, u_1, …, u_p)`, outputs `(e, y_1, …, y_p)` and states in
/// subsystem order.
pub fn build_interconnection(wiring: &PortWiring, subsystems: &[StateSpace]) -> Result<GeneralizedPlant> {
    if wiring.subsystems.len() != subsystems.len() {
        return Err(Error::Wiring(format!(
            "{} port lists for {} subsystems",
            wiring.subsystems.len(),
            subsystems.len()
        )));
    }
    let p = wiring.controls.len();
    if p == 0 || wiring.measurements.len() != p {
        return Err(Error::Wiring(format!(
            "{p} control groups but {} measurement groups",
            wiring.measurements.len()
        )));
    }

    let mut index: HashMap<&str, Signal> = HashMap::new();
    let mut next = 0;
    for name in wiring.disturbances.iter().chain(wiring.controls.iter().flatten()) {
        if index.insert(name.as_str(), Signal::External(next)).is_some() {
            return Err(Error::Wiring(format!("signal '{name}' defined twice")));
        }
        next += 1;
    }
    let q = wiring.disturbances.len();
    let mut nint = 0;
    let mut prev_block = 1;
    for (ports, sys) in wiring.subsystems.iter().zip(subsystems) {
        if ports.inputs.len() != sys.b.ncols() || ports.outputs.len() != sys.c.nrows() {
            return Err(Error::Wiring(format!(
                "{}: {} inputs / {} outputs declared, realization has {} / {}",
                ports.name,
                ports.inputs.len(),
                ports.outputs.len(),
                sys.b.ncols(),
                sys.c.nrows()
            )));
        }
        if ports.block < prev_block || ports.block > p {
            return Err(Error::Wiring(format!(
                "{}: block {} out of order or outside 1..={p}",
                ports.name, ports.block
            )));
        }
        prev_block = ports.block;
        for name in &ports.outputs {
            if index.insert(name.as_str(), Signal::Internal(nint)).is_some() {
                return Err(Error::Wiring(format!("signal '{name}' defined twice")));
            }
            nint += 1;
        }
    }

    // Subsystem inputs v = Hx ext + Hw w.
    let mut hx = Vec::new();
    let mut hw = Vec::new();
    for ports in &wiring.subsystems {
        for (i, names) in ports.inputs.iter().enumerate() {
            let (e, w) = sum_row(names, &index, next, nint, &format!("{} input {}", ports.name, i + 1))?;
            hx.push(e);
            hw.push(w);
        }
    }
    let hx = rows_to_matrix(&hx, next);
    let hw = rows_to_matrix(&hw, nint);

    let ab = block_diag(&subsystems.iter().map(|s| &s.a).collect::<Vec<_>>());
    let bb = block_diag(&subsystems.iter().map(|s| &s.b).collect::<Vec<_>>());
    let cb = block_diag(&subsystems.iter().map(|s| &s.c).collect::<Vec<_>>());
    let db = block_diag(&subsystems.iter().map(|s| &s.d).collect::<Vec<_>>());

    // w = Cb x + Db (Hx ext + Hw w)  ⇒  w = (I - N)⁻¹ (Cb x + Db Hx ext), N = Db Hw.
    let nmat = &db * &hw;
    if !pattern_nilpotent(&nmat) {
        return Err(Error::AlgebraicLoop);
    }
    let mut inv = Matrix::identity(nint, nint);
    let mut power = Matrix::identity(nint, nint);
    for _ in 0..nint {
        power = &power * &nmat;
        inv += &power;
    }
    let wx = &inv * &cb;
    let we = &inv * &db * &hx;
    let a = &ab + &bb * &hw * &wx;
    let b_ext = &bb * (&hx + &hw * &we);

    let out_rows = |groups: &[&Vec<String>], what: &str| -> Result<(Matrix, Matrix)> {
        let mut ext = Vec::new();
        let mut int = Vec::new();
        for (i, names) in groups.iter().enumerate() {
            let (e, w) = sum_row(names, &index, next, nint, &format!("{what} {}", i + 1))?;
            ext.push(e);
            int.push(w);
        }
        let pe = rows_to_matrix(&ext, next);
        let pw = rows_to_matrix(&int, nint);
        Ok((&pw * &wx, &pw * &we + pe))
    };
    let perf: Vec<&Vec<String>> = wiring.performance.iter().collect();
    let meas: Vec<&Vec<String>> = wiring.measurements.iter().flatten().collect();
    let (c0, d_e) = out_rows(&perf, "performance output")?;
    let (c, d_y) = out_rows(&meas, "measurement")?;

    let m = next - q;
    let split = |mat: &Matrix| (mat.columns(0, q).into_owned(), mat.columns(q, m).into_owned());
    let (b0, b) = split(&b_ext);
    let (d0, e) = split(&d_e);
    let (f, dyu) = split(&d_y);

    let mut nsizes = vec![0; p];
    for (ports, sys) in wiring.subsystems.iter().zip(subsystems) {
        nsizes[ports.block - 1] += sys.a.nrows();
    }
    let nparts = Partition::new(nsizes)?;
    let mparts = Partition::new(wiring.controls.iter().map(|g| g.len()).collect())?;
    let kparts = Partition::new(wiring.measurements.iter().map(|g| g.len()).collect())?;

    for i in 1..=p {
        for j in 1..=p {
            let blk = dyu.view((kparts.head(i), mparts.head(j)), (kparts.size(i), mparts.size(j)));
            if blk.amax() != 0.0 {
                return Err(Error::Structure(format!(
                    "feedthrough from u_{j} to y_{i} is nonzero (max |entry| {:.3e})",
                    blk.amax()
                )));
            }
        }
    }
    GeneralizedPlant::new(a, b0, b, c0, d0, e, c, f, nparts, mparts, kparts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fig1Variant {
    Plus,
    Minus,
}

impl std::str::FromStr for Fig1Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+" => Ok(Self::Plus),
            "minus" | "-" => Ok(Self::Minus),
            other => Err(Error::Parse(format!(
                "unknown variant '{other}' (expected plus or minus)"
            ))),
        }
    }
}

const FIG1_WIRING: &str = include_str!("../../data/fig1_wiring.json");

/// Port assignment of the two-subsystem nested example.
///
/// `G1` has inputs `(d1, d2, u1)` and outputs `(ξ, e1, y1)`; `G2` has
/// inputs `(d1, d2, u2, ξ)` and outputs `(e2, y2)`; `e = e1 + e2`.
pub fn fig1_wiring() -> PortWiring {
    serde_json::from_str(FIG1_WIRING).expect("bundled wiring parses")
}

/// Nested two-subsystem example with parameter `ρ`.
pub fn example_fig1(variant: Fig1Variant, rho: f64) -> GeneralizedPlant {
    let g1 = StateSpace::new(
        Matrix::from_row_slice(2, 2, &[-4.0, 2.0, 1.0, -0.6]),
        Matrix::from_row_slice(2, 3, &[2.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        Matrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]),
        Matrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
    )
    .expect("G1 realization");
    let sign = match variant {
        Fig1Variant::Plus => 1.0,
        Fig1Variant::Minus => -1.0,
    };
    let g2 = StateSpace::new(
        Matrix::from_row_slice(2, 2, &[-2.0, 1.0, 3.0, -1.6]),
        Matrix::from_row_slice(2, 4, &[0.0, 20.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]),
        Matrix::identity(2, 2),
        Matrix::from_row_slice(2, 4, &[0.0, 0.0, sign * 0.1 * rho, 1.0, 0.0, rho, 0.0, 0.0]),
    )
    .expect("G2 realization");
    build_interconnection(&fig1_wiring(), &[g1, g2]).expect("example wiring is valid")
}
