//! Dense real matrix helpers and the block-selector calculus used to
//! describe block lower-triangular ("nested") structure.
//!
//! For a partition `n = n_1 + ... + n_p` and `j = 1..=p+1`:
//!
//! * `R_j` selects block `j` (empty for `j = p+1`),
//! * `L_j` selects blocks `j..=p` (so `L_1 = I`, `L_{p+1}` empty),
//! * `Λ_j` selects blocks `1..j` (so `Λ_1` empty, `Λ_{p+1} = I`).
//!
//! A matrix `M` is block lower-triangular iff `Λ_jᵀ M R_j = 0` for all `j`.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Block dimensions `n = n_1 + ... + n_p`, every block non-empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition(Vec<usize>);

impl Partition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Partition("partition needs at least one block".into()));
        }
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Partition(format!("block {} has size 0", pos + 1)));
        }
        Ok(Self(sizes))
    }

    /// `p` blocks of size `n` each.
    pub fn uniform(size: usize, blocks: usize) -> Result<Self> {
        Self::new(vec![size; blocks])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    /// Number of blocks `p`.
    pub fn blocks(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Size of block `j` (1-based).
    pub fn size(&self, j: usize) -> usize {
        self.0[j - 1]
    }

    /// `n_1 + ... + n_{j-1}` for `j` in `1..=p+1`.
    pub fn head(&self, j: usize) -> usize {
        self.0[..j - 1].iter().sum()
    }

    /// `n_j + ... + n_p` for `j` in `1..=p+1`.
    pub fn tail(&self, j: usize) -> usize {
        self.total() - self.head(j)
    }

    /// Row range of block `j` (1-based).
    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        let start = self.head(j);
        start..start + self.size(j)
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.blocks() + 1 {
            return Err(Error::IndexOutOfRange {
                index: j,
                max: self.blocks() + 1,
            });
        }
        Ok(())
    }

    /// `R_j`: identity columns of block `j`; zero columns for `j = p+1`.
    pub fn r(&self, j: usize) -> Matrix {
        let n = self.total();
        if j > self.blocks() {
            return Matrix::zeros(n, 0);
        }
        let mut m = Matrix::zeros(n, self.size(j));
        for (c, r) in self.range(j).enumerate() {
            m[(r, c)] = 1.0;
        }
        m
    }

    /// `L_j`: identity columns of blocks `j..=p`.
    pub fn l(&self, j: usize) -> Matrix {
        let n = self.total();
        let head = self.head(j);
        let mut m = Matrix::zeros(n, n - head);
        for c in 0..n - head {
            m[(head + c, c)] = 1.0;
        }
        m
    }

    /// `Λ_j`: identity columns of blocks `1..j`.
    pub fn lambda(&self, j: usize) -> Matrix {
        let n = self.total();
        let head = self.head(j);
        let mut m = Matrix::zeros(n, head);
        for c in 0..head {
            m[(c, c)] = 1.0;
        }
        m
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectorKind {
    R,
    L,
    Lambda,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selector {
    pub kind: SelectorKind,
    pub j: usize,
    pub partition: Partition,
    pub matrix: Matrix,
}

/// Exact 0/1 selector matrix `R_j`, `L_j` or `Λ_j` for `j` in `1..=p+1`.
pub fn selector(kind: SelectorKind, j: usize, partition: &Partition) -> Result<Selector> {
    partition.check_index(j)?;
    let matrix = match kind {
        SelectorKind::R => partition.r(j),
        SelectorKind::L => partition.l(j),
        SelectorKind::Lambda => partition.lambda(j),
    };
    Ok(Selector {
        kind,
        j,
        partition: partition.clone(),
        matrix,
    })
}

/// Orthonormal basis of `ker(m)`.
///
/// `tol = 0` selects `max(rows, cols) · ε · σ_max`. Columns follow the
/// sign convention that the first entry of non-negligible magnitude is
/// positive.
pub fn kernel_basis(m: &Matrix, tol: f64) -> Matrix {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Matrix::zeros(0, 0);
    }
    if rows == 0 {
        return Matrix::identity(cols, cols);
    }
    // Zero-padding to at least `cols` rows makes the SVD return all of V.
    let padded = if rows < cols {
        let mut p = Matrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = SVD::new(padded, false, true);
    let sigma = &svd.singular_values;
    let v_t = svd.v_t.expect("SVD computed with V");
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let thresh = if tol > 0.0 {
        tol
    } else {
        rows.max(cols) as f64 * f64::EPSILON * smax
    };
    let rank = sigma.iter().filter(|&&s| s > thresh).count();
    let dim = cols - rank;
    let mut basis = Matrix::zeros(cols, dim);
    for c in 0..dim {
        let row = v_t.row(rank + c);
        let lead = row.iter().find(|v| v.abs() > 1e-12).copied().unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for r in 0..cols {
            basis[(r, c)] = sign * row[r];
        }
    }
    basis
}

/// Eigenvalues of a general real square matrix as `(re, im)` pairs.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect())
}

/// Largest real part among the eigenvalues; `-inf` for an empty matrix.
pub fn spectral_abscissa(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?
        .into_iter()
        .map(|(re, _)| re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue has real part `< -margin`.
pub fn is_hurwitz(a: &Matrix, margin: f64) -> Result<bool> {
    Ok(spectral_abscissa(a)? < -margin)
}

fn check_partitions(m: &Matrix, rowpart: &Partition, colpart: &Partition) -> Result<()> {
    if rowpart.total() != m.nrows() || colpart.total() != m.ncols() {
        return Err(Error::Dimension(format!(
            "partitions {}x{} do not match matrix {}x{}",
            rowpart.total(),
            colpart.total(),
            m.nrows(),
            m.ncols()
        )));
    }
    if rowpart.blocks() != colpart.blocks() {
        return Err(Error::Dimension(format!(
            "row partition has {} blocks, column partition {}",
            rowpart.blocks(),
            colpart.blocks()
        )));
    }
    Ok(())
}

/// Largest magnitude of `Λ_jᵀ M R_j` over `j = 1..=p`, i.e. of the blocks
/// strictly above the block diagonal.
pub fn upper_block_residual(m: &Matrix, rowpart: &Partition, colpart: &Partition) -> Result<f64> {
    check_partitions(m, rowpart, colpart)?;
    let mut worst: f64 = 0.0;
    for j in 1..=colpart.blocks() {
        let rows = rowpart.head(j);
        let cols = colpart.range(j);
        if rows == 0 {
            continue;
        }
        let block = m.view((0, cols.start), (rows, cols.len()));
        worst = worst.max(block.amax());
    }
    Ok(worst)
}

pub fn is_block_lower_triangular(m: &Matrix, rowpart: &Partition, colpart: &Partition, tol: f64) -> Result<bool> {
    Ok(upper_block_residual(m, rowpart, colpart)? <= tol)
}

/// Block columns `M_j = L_jᵀ M R_j` of a block lower-triangular matrix.
pub fn block_columns(m: &Matrix, rowpart: &Partition, colpart: &Partition) -> Result<Vec<Matrix>> {
    check_partitions(m, rowpart, colpart)?;
    Ok((1..=colpart.blocks())
        .map(|j| rowpart.l(j).transpose() * m * colpart.r(j))
        .collect())
}

/// Inverse of [`block_columns`]: `Σ L_j M_j R_jᵀ`.
pub fn from_block_columns(columns: &[Matrix], rowpart: &Partition, colpart: &Partition) -> Result<Matrix> {
    if columns.len() != colpart.blocks() || rowpart.blocks() != colpart.blocks() {
        return Err(Error::Dimension("block count mismatch".into()));
    }
    let mut out = Matrix::zeros(rowpart.total(), colpart.total());
    for (idx, mj) in columns.iter().enumerate() {
        let j = idx + 1;
        if mj.shape() != (rowpart.tail(j), colpart.size(j)) {
            return Err(Error::Dimension(format!(
                "block column {j} has shape {:?}, expected {:?}",
                mj.shape(),
                (rowpart.tail(j), colpart.size(j))
            )));
        }
        out += rowpart.l(j) * mj * colpart.r(j).transpose();
    }
    Ok(out)
}

/// Assemble a block matrix. Every row of `grid` must have the same number
/// of entries; heights agree along rows and widths along columns.
pub fn block(grid: &[Vec<Matrix>]) -> Result<Matrix> {
    if grid.is_empty() {
        return Ok(Matrix::zeros(0, 0));
    }
    let ncols = grid[0].len();
    if grid.iter().any(|row| row.len() != ncols) {
        return Err(Error::Dimension("ragged block grid".into()));
    }
    let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
    let widths: Vec<usize> = grid[0].iter().map(|m| m.ncols()).collect();
    for (i, row) in grid.iter().enumerate() {
        for (j, m) in row.iter().enumerate() {
            if m.nrows() != heights[i] || m.ncols() != widths[j] {
                return Err(Error::Dimension(format!(
                    "block ({},{}) is {}x{}, expected {}x{}",
                    i + 1,
                    j + 1,
                    m.nrows(),
                    m.ncols(),
                    heights[i],
                    widths[j]
                )));
            }
        }
    }
    let mut out = Matrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, row) in grid.iter().enumerate() {
        let mut c0 = 0;
        for (j, m) in row.iter().enumerate() {
            out.view_mut((r0, c0), (heights[i], widths[j])).copy_from(m);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    Ok(out)
}

pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
    block(&[parts.iter().map(|m| (*m).clone()).collect()])
}

pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
    let grid: Vec<Vec<Matrix>> = parts.iter().map(|m| vec![(*m).clone()]).collect();
    block(&grid)
}

pub fn block_diag(parts: &[&Matrix]) -> Matrix {
    let rows = parts.iter().map(|m| m.nrows()).sum();
    let cols = parts.iter().map(|m| m.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for m in parts {
        out.view_mut((r0, c0), m.shape()).copy_from(*m);
        r0 += m.nrows();
        c0 += m.ncols();
    }
    out
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let s = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Largest eigenvalue of the symmetric part; `-inf` for an empty matrix.
pub fn max_sym_eig(m: &Matrix) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Smallest eigenvalue of the symmetric part; `+inf` for an empty matrix.
pub fn min_sym_eig(m: &Matrix) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Largest singular value (0 for empty matrices).
pub fn sigma_max(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// 2-norm condition number; `inf` if singular.
pub fn condition_number(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Symmetric positive semidefinite square root via eigendecomposition.
/// Eigenvalues down to `-clamp` are treated as zero; anything more negative
/// is rejected.
pub fn psd_sqrt(m: &Matrix, clamp: f64) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let s = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        if *v < -clamp {
            return Err(Error::Numerical(format!(
                "matrix not positive semidefinite (eigenvalue {v:.3e})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * Matrix::from_diagonal(&d) * q.transpose())
}
