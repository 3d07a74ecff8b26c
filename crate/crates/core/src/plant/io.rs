use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeneralizedPlant, StructuredController};
use crate::error::{Error, Result};
use crate::matcore::{Matrix, Partition};

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantFile {
    nparts: Vec<usize>,
    mparts: Vec<usize>,
    kparts: Vec<usize>,
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B0")]
    b0: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C0")]
    c0: Rows,
    #[serde(rename = "D0")]
    d0: Rows,
    #[serde(rename = "E")]
    e: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "F")]
    f: Rows,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerFile {
    #[serde(rename = "nKparts")]
    nk_parts: Vec<usize>,
    #[serde(rename = "AK")]
    ak: Rows,
    #[serde(rename = "BK")]
    bk: Rows,
    #[serde(rename = "CK")]
    ck: Rows,
    #[serde(rename = "DK")]
    dk: Rows,
    #[serde(rename = "SK", default, skip_serializing_if = "Option::is_none")]
    generators: Option<Vec<Rows>>,
}

fn to_rows(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Row-major nested array to matrix. An empty outer array is `0 × cols`;
/// `cols` is only used then, so that empty blocks keep their shape.
fn from_rows(name: &str, rows: &Rows, cols_if_empty: usize) -> Result<Matrix> {
    let ncols = rows.first().map_or(cols_if_empty, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{name}: ragged rows")));
    }
    if let Some(v) = rows.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("{name}: non-finite entry {v}")));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn partition(name: &str, sizes: &[usize]) -> Result<Partition> {
    Partition::new(sizes.to_vec()).map_err(|e| Error::Parse(format!("{name}: {e}")))
}

pub fn plant_from_json(text: &str) -> Result<GeneralizedPlant> {
    let f: PlantFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let nparts = partition("nparts", &f.nparts)?;
    let mparts = partition("mparts", &f.mparts)?;
    let kparts = partition("kparts", &f.kparts)?;
    let n = nparts.total();
    let q = f.b0.first().map_or(0, |r| r.len());
    let plant = GeneralizedPlant {
        a: from_rows("A", &f.a, n)?,
        b0: from_rows("B0", &f.b0, q)?,
        b: from_rows("B", &f.b, mparts.total())?,
        c0: from_rows("C0", &f.c0, n)?,
        d0: from_rows("D0", &f.d0, q)?,
        e: from_rows("E", &f.e, mparts.total())?,
        c: from_rows("C", &f.c, n)?,
        f: from_rows("F", &f.f, q)?,
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

pub fn plant_to_json(p: &GeneralizedPlant) -> String {
    let f = PlantFile {
        nparts: p.nparts.sizes().to_vec(),
        mparts: p.mparts.sizes().to_vec(),
        kparts: p.kparts.sizes().to_vec(),
        a: to_rows(&p.a),
        b0: to_rows(&p.b0),
        b: to_rows(&p.b),
        c0: to_rows(&p.c0),
        d0: to_rows(&p.d0),
        e: to_rows(&p.e),
        c: to_rows(&p.c),
        f: to_rows(&p.f),
    };
    serde_json::to_string_pretty(&f).expect("serializable")
}

/// Parse a controller. Dimensions are checked against a plant separately
/// with [`StructuredController::validate`].
pub fn controller_from_json(text: &str) -> Result<StructuredController> {
    let f: ControllerFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let nk: usize = f.nk_parts.iter().sum();
    let nk_parts = if f.nk_parts.is_empty() {
        None
    } else {
        Some(partition("nKparts", &f.nk_parts)?)
    };
    let k = f.bk.first().map_or(f.dk.first().map_or(0, |r| r.len()), |r| r.len());
    let dk = from_rows("DK", &f.dk, k)?;
    let m = dk.nrows();
    let generators = match &f.generators {
        Some(list) => Some(
            list.iter()
                .enumerate()
                .map(|(j, g)| from_rows(&format!("SK[{}]", j + 1), g, 0))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let ctrl = StructuredController {
        ak: from_rows("AK", &f.ak, nk)?,
        bk: from_rows("BK", &f.bk, k)?,
        ck: if f.ck.is_empty() {
            Matrix::zeros(m, nk)
        } else {
            from_rows("CK", &f.ck, nk)?
        },
        dk,
        nk_parts,
        generators,
    };
    let nk_rows = ctrl.ak.nrows();
    if ctrl.ak.ncols() != nk_rows
        || nk_rows != nk
        || ctrl.bk.nrows() != nk
        || ctrl.ck.ncols() != nk
        || ctrl.ck.nrows() != m
        || ctrl.bk.ncols() != k
    {
        return Err(Error::Parse(format!(
            "inconsistent controller shapes: AK {:?}, BK {:?}, CK {:?}, DK {:?}, order {nk}",
            ctrl.ak.shape(),
            ctrl.bk.shape(),
            ctrl.ck.shape(),
            ctrl.dk.shape()
        )));
    }
    Ok(ctrl)
}

pub fn controller_to_json(k: &StructuredController) -> String {
    let f = ControllerFile {
        nk_parts: k.nk_parts.as_ref().map_or_else(Vec::new, |p| p.sizes().to_vec()),
        ak: to_rows(&k.ak),
        bk: to_rows(&k.bk),
        ck: to_rows(&k.ck),
        dk: to_rows(&k.dk),
        generators: k.generators.as_ref().map(|g| g.iter().map(to_rows).collect()),
    };
    serde_json::to_string_pretty(&f).expect("serializable")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_plant(path: &Path) -> Result<GeneralizedPlant> {
    plant_from_json(&read(path)?)
}

pub fn write_plant(path: &Path, p: &GeneralizedPlant) -> Result<()> {
    write(path, &plant_to_json(p))
}

pub fn read_controller(path: &Path) -> Result<StructuredController> {
    controller_from_json(&read(path)?)
}

pub fn write_controller(path: &Path, k: &StructuredController) -> Result<()> {
    write(path, &controller_to_json(k))
}
