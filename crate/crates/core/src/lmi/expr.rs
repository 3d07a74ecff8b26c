//! Matrix-valued expressions that are affine in scalar decision variables.
//!
//! Every expression is `constant + Σ left · V · right` (or with `Vᵀ`),
//! where `V` is a matrix decision variable. Block assembly, constant
//! multiplication and transposition stay inside this form, so the
//! coefficient of each scalar unknown can be extracted exactly.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::matcore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Symmetric,
    Full,
}

/// Handle to a matrix decision variable registered with an
/// [`LmiProblem`](super::LmiProblem).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarRef {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
    pub kind: VarKind,
    /// First scalar index inside the problem's flat unknown vector.
    pub offset: usize,
    pub name: String,
}

impl VarRef {
    /// Number of scalar unknowns.
    pub fn scalar_count(&self) -> usize {
        match self.kind {
            VarKind::Symmetric => self.rows * (self.rows + 1) / 2,
            VarKind::Full => self.rows * self.cols,
        }
    }

    /// `(row, col)` of the `s`-th scalar; for symmetric variables the
    /// upper-triangle entry with `row <= col`.
    fn position(&self, s: usize) -> (usize, usize) {
        match self.kind {
            VarKind::Full => (s % self.rows, s / self.rows),
            VarKind::Symmetric => {
                // column-wise packing of the upper triangle
                let mut col = 0;
                let mut start = 0;
                while start + col < s {
                    start += col + 1;
                    col += 1;
                }
                (s - start, col)
            }
        }
    }

    /// Matrix value of this variable inside a flat assignment.
    pub fn value(&self, x: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for s in 0..self.scalar_count() {
            let (a, b) = self.position(s);
            let v = x[self.offset + s];
            m[(a, b)] = v;
            if self.kind == VarKind::Symmetric {
                m[(b, a)] = v;
            }
        }
        m
    }

    /// Write a matrix value into a flat assignment (symmetric variables
    /// read the upper triangle).
    pub fn store(&self, value: &Matrix, x: &mut [f64]) {
        for s in 0..self.scalar_count() {
            let (a, b) = self.position(s);
            x[self.offset + s] = value[(a, b)];
        }
    }
}

#[derive(Clone, Debug)]
pub struct Term {
    pub var: VarRef,
    pub left: Matrix,
    pub right: Matrix,
    /// `left · Vᵀ · right` instead of `left · V · right`.
    pub transposed: bool,
}

impl Term {
    fn var_shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.var.cols, self.var.rows)
        } else {
            (self.var.rows, self.var.cols)
        }
    }
}

#[derive(Clone, Debug)]
pub struct AffineMatrixExpr {
    pub rows: usize,
    pub cols: usize,
    pub constant: Matrix,
    pub terms: Vec<Term>,
}

impl AffineMatrixExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Matrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Matrix::identity(n, n))
    }

    pub fn constant(m: Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    /// The variable itself.
    pub fn var(v: &VarRef) -> Self {
        Self::var_block(v, 0..v.rows, 0..v.cols)
    }

    /// Sub-block `V[rows, cols]` of a variable.
    pub fn var_block(v: &VarRef, rows: Range<usize>, cols: Range<usize>) -> Self {
        let mut left = Matrix::zeros(rows.len(), v.rows);
        for (i, r) in rows.clone().enumerate() {
            left[(i, r)] = 1.0;
        }
        let mut right = Matrix::zeros(v.cols, cols.len());
        for (i, c) in cols.clone().enumerate() {
            right[(c, i)] = 1.0;
        }
        Self {
            rows: rows.len(),
            cols: cols.len(),
            constant: Matrix::zeros(rows.len(), cols.len()),
            terms: vec![Term {
                var: v.clone(),
                left,
                right,
                transposed: false,
            }],
        }
    }

    /// `v · coeff` for a 1×1 variable `v`.
    pub fn scalar_times(v: &VarRef, coeff: &Matrix) -> Self {
        assert_eq!((v.rows, v.cols), (1, 1), "scalar_times needs a 1x1 variable");
        let (r, c) = coeff.shape();
        let mut terms = Vec::new();
        // coeff = Σ_i coeff[:, i] e_iᵀ, so v·coeff = Σ_i coeff[:, i] · v · e_iᵀ
        for i in 0..c {
            let col = coeff.column(i);
            if col.iter().all(|&x| x == 0.0) {
                continue;
            }
            let mut right = Matrix::zeros(1, c);
            right[(0, i)] = 1.0;
            terms.push(Term {
                var: v.clone(),
                left: coeff.columns(i, 1).into_owned(),
                right,
                transposed: false,
            });
        }
        Self {
            rows: r,
            cols: c,
            constant: Matrix::zeros(r, c),
            terms,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    var: t.var.clone(),
                    left: t.right.transpose(),
                    right: t.left.transpose(),
                    transposed: !t.transposed,
                })
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            constant: &self.constant + &other.constant,
            terms,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn add_constant(&self, m: &Matrix) -> Result<Self> {
        self.add(&Self::constant(m.clone()))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            constant: &self.constant * alpha,
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    left: &t.left * alpha,
                    ..t.clone()
                })
                .collect(),
        }
    }

    /// `m · self`
    pub fn lmul(&self, m: &Matrix) -> Result<Self> {
        if m.ncols() != self.rows {
            return Err(Error::Dimension(format!(
                "cannot left-multiply {:?} by {:?}",
                self.shape(),
                m.shape()
            )));
        }
        Ok(Self {
            rows: m.nrows(),
            cols: self.cols,
            constant: m * &self.constant,
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    left: m * &t.left,
                    ..t.clone()
                })
                .collect(),
        })
    }

    /// `self · m`
    pub fn rmul(&self, m: &Matrix) -> Result<Self> {
        if m.nrows() != self.cols {
            return Err(Error::Dimension(format!(
                "cannot right-multiply {:?} by {:?}",
                self.shape(),
                m.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: m.ncols(),
            constant: &self.constant * m,
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    right: &t.right * m,
                    ..t.clone()
                })
                .collect(),
        })
    }

    /// `mᵀ · self · m`
    pub fn congruence(&self, m: &Matrix) -> Result<Self> {
        self.lmul(&m.transpose())?.rmul(m)
    }

    /// Product of two affine expressions. Succeeds only when every
    /// variable-times-variable contribution vanishes structurally, i.e.
    /// `right_1 · left_2 = 0` exactly for every pair of terms.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for t1 in &self.terms {
            for t2 in &other.terms {
                if (&t1.right * &t2.left).iter().any(|&v| v != 0.0) {
                    return Err(Error::NotAffine);
                }
            }
        }
        self.rmul(&other.constant)?
            .add(&other.lmul(&self.constant)?)?
            .sub(&Self::constant(&self.constant * &other.constant))
    }

    /// `He(e) = eᵀ + e`.
    pub fn he(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        self.add(&self.transpose())
    }

    /// Assemble a block expression; heights must agree along each row of
    /// the grid and widths along each column.
    pub fn block(grid: &[Vec<AffineMatrixExpr>]) -> Result<Self> {
        if grid.is_empty() {
            return Ok(Self::zeros(0, 0));
        }
        let ncols = grid[0].len();
        if grid.iter().any(|row| row.len() != ncols) {
            return Err(Error::Dimension("ragged block grid".into()));
        }
        let heights: Vec<usize> = grid.iter().map(|row| row[0].rows).collect();
        let widths: Vec<usize> = grid[0].iter().map(|e| e.cols).collect();
        let total_r: usize = heights.iter().sum();
        let total_c: usize = widths.iter().sum();
        let mut out = Self::zeros(total_r, total_c);
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, e) in row.iter().enumerate() {
                if e.shape() != (heights[i], widths[j]) {
                    return Err(Error::Dimension(format!(
                        "block ({},{}) is {:?}, expected {:?}",
                        i + 1,
                        j + 1,
                        e.shape(),
                        (heights[i], widths[j])
                    )));
                }
                let mut place_r = Matrix::zeros(total_r, heights[i]);
                for k in 0..heights[i] {
                    place_r[(r0 + k, k)] = 1.0;
                }
                let mut place_c = Matrix::zeros(widths[j], total_c);
                for k in 0..widths[j] {
                    place_c[(k, c0 + k)] = 1.0;
                }
                out.constant
                    .view_mut((r0, c0), (heights[i], widths[j]))
                    .copy_from(&e.constant);
                for t in &e.terms {
                    out.terms.push(Term {
                        var: t.var.clone(),
                        left: &place_r * &t.left,
                        right: &t.right * &place_c,
                        transposed: t.transposed,
                    });
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        Ok(out)
    }

    /// Evaluate at a flat assignment of all scalar unknowns.
    pub fn eval(&self, x: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = t.var.value(x);
            if t.transposed {
                out += &t.left * v.transpose() * &t.right;
            } else {
                out += &t.left * v * &t.right;
            }
        }
        out
    }

    /// Exact coefficient matrices: `eval(x) = constant + Σ x_s · F_s`.
    /// Scalars with identically zero coefficient are omitted.
    pub fn coefficients(&self) -> (Matrix, BTreeMap<usize, Matrix>) {
        let mut coeffs: BTreeMap<usize, Matrix> = BTreeMap::new();
        for t in &self.terms {
            debug_assert_eq!(t.left.ncols(), t.var_shape().0);
            let v = &t.var;
            for s in 0..v.scalar_count() {
                let (a, b) = v.position(s);
                // Basis matrix entries (row, col) of V for this scalar.
                let mut entries = vec![(a, b)];
                if v.kind == VarKind::Symmetric && a != b {
                    entries.push((b, a));
                }
                let mut f = Matrix::zeros(self.rows, self.cols);
                let mut touched = false;
                for (ra, cb) in entries {
                    let (ra, cb) = if t.transposed { (cb, ra) } else { (ra, cb) };
                    let lcol = t.left.column(ra);
                    let rrow = t.right.row(cb);
                    if lcol.iter().all(|&z| z == 0.0) || rrow.iter().all(|&z| z == 0.0) {
                        continue;
                    }
                    f += lcol * rrow;
                    touched = true;
                }
                if touched {
                    let idx = v.offset + s;
                    match coeffs.get_mut(&idx) {
                        Some(acc) => *acc += f,
                        None => {
                            coeffs.insert(idx, f);
                        }
                    }
                }
            }
        }
        coeffs.retain(|_, f| f.iter().any(|&z| z != 0.0));
        (self.constant.clone(), coeffs)
    }

    /// Largest deviation from symmetry over the constant and every
    /// coefficient, relative to their magnitude.
    pub fn symmetry_defect(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let (c, coeffs) = self.coefficients();
        let rel = |m: &Matrix| (m - m.transpose()).amax() / (1.0 + m.amax());
        coeffs.values().map(rel).fold(rel(&c), f64::max)
    }
}
