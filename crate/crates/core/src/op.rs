//! Operators on registers of mixed-dimension sites.
//!
//! A register is an ordered list of site dimensions (the leftmost site is the
//! slowest index). Operators carry their register shape so tensor placement
//! and composition stay checked.

use crate::error::{Error, Result};
use crate::linalg;
use ndarray::linalg::kron;
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Ordered site dimensions of a register, leftmost slowest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemShape {
    dims: Vec<usize>,
}

impl SystemShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput(
                "register needs at least one site, each of dimension >= 2".into(),
            ));
        }
        Ok(SystemShape { dims })
    }

    /// Single site of dimension `d`.
    pub fn site(d: usize) -> Result<Self> {
        SystemShape::new(vec![d])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn site_dim(&self, site: usize) -> usize {
        self.dims[site]
    }

    /// Total Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Per-site indices of a flat basis index.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dims.len()];
        for (k, &d) in self.dims.iter().enumerate().rev() {
            idx[k] = flat % d;
            flat /= d;
        }
        idx
    }

    /// Flat basis index of per-site indices.
    pub fn ravel(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut flat = 0usize;
        for (k, &d) in self.dims.iter().enumerate() {
            debug_assert!(idx[k] < d);
            flat = flat * d + idx[k];
        }
        flat
    }
}

/// Dense operator together with its register shape.
#[derive(Clone, Debug)]
pub struct Operator {
    shape: SystemShape,
    matrix: Array2<C64>,
}

impl Operator {
    pub fn new(shape: SystemShape, matrix: Array2<C64>) -> Result<Self> {
        let d = shape.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "matrix is {}x{} but the register dimension is {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Operator { shape, matrix })
    }

    /// Single-site operator; the register shape is inferred from the matrix.
    pub fn from_matrix(matrix: Array2<C64>) -> Result<Self> {
        let shape = SystemShape::site(matrix.nrows())?;
        Operator::new(shape, matrix)
    }

    pub fn identity(shape: SystemShape) -> Self {
        let d = shape.dim();
        Operator { shape, matrix: Array2::eye(d) }
    }

    pub fn shape(&self) -> &SystemShape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn dagger(&self) -> Operator {
        Operator { shape: self.shape.clone(), matrix: linalg::dagger(&self.matrix) }
    }

    /// Matrix product `self * rhs` (rhs acts first).
    pub fn compose(&self, rhs: &Operator) -> Result<Operator> {
        if self.shape != rhs.shape {
            return Err(Error::InvalidInput("composing operators on different registers".into()));
        }
        Ok(Operator { shape: self.shape.clone(), matrix: self.matrix.dot(&rhs.matrix) })
    }

    pub fn scale(&self, z: C64) -> Operator {
        Operator { shape: self.shape.clone(), matrix: self.matrix.mapv(|x| x * z) }
    }

    pub fn unitarity_error(&self) -> f64 {
        linalg::unitarity_error(&self.matrix)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }
}

/// Tensor product of operators, leftmost factor slowest.
pub fn tensor(ops: &[&Operator]) -> Result<Operator> {
    if ops.is_empty() {
        return Err(Error::InvalidInput("tensor of zero operators".into()));
    }
    let mut dims = Vec::new();
    let mut matrix = ops[0].matrix.clone();
    dims.extend_from_slice(ops[0].shape.dims());
    for op in &ops[1..] {
        matrix = kron(&matrix, &op.matrix);
        dims.extend_from_slice(op.shape.dims());
    }
    Operator::new(SystemShape::new(dims)?, matrix)
}

/// Places a single-site operator at `site` of a larger register.
pub fn embed(op: &Operator, site: usize, shape: &SystemShape) -> Result<Operator> {
    embed_on_sites(op, &[site], shape)
}

/// Places a multi-site operator on the listed register sites (in the order the
/// operator's own sites are given, which need not be adjacent or sorted).
pub fn embed_on_sites(op: &Operator, sites: &[usize], shape: &SystemShape) -> Result<Operator> {
    if sites.len() != op.shape.num_sites() {
        return Err(Error::InvalidInput(format!(
            "operator spans {} sites but {} placement sites were given",
            op.shape.num_sites(),
            sites.len()
        )));
    }
    let mut seen = vec![false; shape.num_sites()];
    for (k, &s) in sites.iter().enumerate() {
        if s >= shape.num_sites() {
            return Err(Error::InvalidInput(format!("site {s} outside the register")));
        }
        if seen[s] {
            return Err(Error::InvalidInput(format!("site {s} listed twice")));
        }
        seen[s] = true;
        if shape.site_dim(s) != op.shape.site_dim(k) {
            return Err(Error::InvalidInput(format!(
                "operator site {k} has dimension {} but register site {s} has {}",
                op.shape.site_dim(k),
                shape.site_dim(s)
            )));
        }
    }
    let d = shape.dim();
    let mut out = Array2::<C64>::zeros((d, d));
    for row in 0..d {
        let ridx = shape.unravel(row);
        for col in 0..d {
            let cidx = shape.unravel(col);
            let mut spectator_match = true;
            for s in 0..shape.num_sites() {
                if !seen[s] && ridx[s] != cidx[s] {
                    spectator_match = false;
                    break;
                }
            }
            if !spectator_match {
                continue;
            }
            let sub_r: Vec<usize> = sites.iter().map(|&s| ridx[s]).collect();
            let sub_c: Vec<usize> = sites.iter().map(|&s| cidx[s]).collect();
            let r = op.shape.ravel(&sub_r);
            let c = op.shape.ravel(&sub_c);
            out[(row, col)] = op.matrix[(r, c)];
        }
    }
    Operator::new(shape.clone(), out)
}

/// Distance `1 - |tr(a† b)| / dim`, zero iff the unitaries agree up to a
/// global phase.
pub fn distance_up_to_global_phase(a: &Operator, b: &Operator) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::InvalidInput("comparing operators on different registers".into()));
    }
    let d = a.dim() as f64;
    let mut tr = C64::new(0.0, 0.0);
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            tr += a.matrix[(j, i)].conj() * b.matrix[(j, i)];
        }
    }
    Ok(1.0 - tr.norm() / d)
}

/// `exp(-i s h)` for a Hermitian operator `h`.
pub fn expm(h: &Operator, s: f64) -> Result<Operator> {
    let m = linalg::expm_i_hermitian(&h.matrix, s)?;
    Operator::new(h.shape.clone(), m)
}

/// Control-diagonal operator `sum_l e^{i phase_l} |l><l| x block_l` on a
/// register whose first site is the control.
///
/// Blocks are stored with unit determinant; any determinant phase of a
/// supplied block is folded into the level phase on construction.
#[derive(Clone, Debug)]
pub struct DiagonalBlockOperator {
    control_dim: usize,
    env_shape: SystemShape,
    phases: Vec<f64>,
    blocks: Vec<Array2<C64>>,
}

impl DiagonalBlockOperator {
    pub fn new(
        control_dim: usize,
        env_shape: SystemShape,
        phases: Vec<f64>,
        blocks: Vec<Array2<C64>>,
    ) -> Result<Self> {
        if control_dim < 2 {
            return Err(Error::InvalidInput("control dimension must be >= 2".into()));
        }
        if phases.len() != control_dim || blocks.len() != control_dim {
            return Err(Error::InvalidInput(format!(
                "need {control_dim} phases and blocks, got {} and {}",
                phases.len(),
                blocks.len()
            )));
        }
        let ed = env_shape.dim();
        let mut canon_phases = Vec::with_capacity(control_dim);
        let mut canon_blocks = Vec::with_capacity(control_dim);
        for (l, b) in blocks.into_iter().enumerate() {
            if b.nrows() != ed || b.ncols() != ed {
                return Err(Error::InvalidInput(format!(
                    "block {l} is {}x{} but the environment dimension is {ed}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            let uerr = linalg::unitarity_error(&b);
            if uerr > 1e-8 {
                return Err(Error::MatrixCheck(format!(
                    "block {l} deviates from unitary by {uerr:.3e}"
                )));
            }
            let (phase, block) = canonicalize_block(&b, ed);
            canon_phases.push(phases[l] + phase);
            canon_blocks.push(block);
        }
        Ok(DiagonalBlockOperator {
            control_dim,
            env_shape,
            phases: canon_phases,
            blocks: canon_blocks,
        })
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn env_shape(&self) -> &SystemShape {
        &self.env_shape
    }

    /// Level phases, each canonical for its unit-determinant block.
    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Unit-determinant blocks, indexed by control level.
    pub fn blocks(&self) -> &[Array2<C64>] {
        &self.blocks
    }

    /// Dense operator on the register `[control] + env`.
    pub fn to_operator(&self) -> Result<Operator> {
        let mut dims = vec![self.control_dim];
        dims.extend_from_slice(self.env_shape.dims());
        let shape = SystemShape::new(dims)?;
        let ed = self.env_shape.dim();
        let d = shape.dim();
        let mut out = Array2::<C64>::zeros((d, d));
        for l in 0..self.control_dim {
            let ph = C64::from_polar(1.0, self.phases[l]);
            for r in 0..ed {
                for c in 0..ed {
                    out[(l * ed + r, l * ed + c)] = ph * self.blocks[l][(r, c)];
                }
            }
        }
        Operator::new(shape, out)
    }

    /// Splits a dense operator whose first site acts as the control.
    ///
    /// Fails if any control-off-diagonal block exceeds `tol` in absolute
    /// value, or a diagonal block is not unitary.
    pub fn from_operator(op: &Operator, tol: f64) -> Result<Self> {
        let dims = op.shape().dims();
        if dims.len() < 2 {
            return Err(Error::InvalidInput(
                "splitting into control and environment needs at least two sites".into(),
            ));
        }
        let control_dim = dims[0];
        let env_shape = SystemShape::new(dims[1..].to_vec())?;
        let ed = env_shape.dim();
        let m = op.matrix();
        let mut off = 0.0f64;
        for lr in 0..control_dim {
            for lc in 0..control_dim {
                if lr == lc {
                    continue;
                }
                for r in 0..ed {
                    for c in 0..ed {
                        off = off.max(m[(lr * ed + r, lc * ed + c)].norm());
                    }
                }
            }
        }
        if off > tol {
            return Err(Error::MatrixCheck(format!(
                "operator is not control-diagonal: off-block weight {off:.3e} exceeds {tol:.1e}"
            )));
        }
        let mut phases = Vec::with_capacity(control_dim);
        let mut blocks = Vec::with_capacity(control_dim);
        for l in 0..control_dim {
            let mut b = Array2::<C64>::zeros((ed, ed));
            for r in 0..ed {
                for c in 0..ed {
                    b[(r, c)] = m[(l * ed + r, l * ed + c)];
                }
            }
            let uerr = linalg::unitarity_error(&b);
            if uerr > 1e-8 {
                return Err(Error::MatrixCheck(format!(
                    "control level {l} block deviates from unitary by {uerr:.3e}"
                )));
            }
            let (phase, block) = canonicalize_block(&b, ed);
            phases.push(phase);
            blocks.push(block);
        }
        Ok(DiagonalBlockOperator { control_dim, env_shape, phases, blocks })
    }
}

/// Splits a unitary block into `(phase, unit-determinant block)` with the
/// determinant phase divided evenly across the dimension.
fn canonicalize_block(b: &Array2<C64>, ed: usize) -> (f64, Array2<C64>) {
    let det = det_dense(b);
    let phase = det.arg() / ed as f64;
    let fix = C64::from_polar(1.0, -phase);
    (phase, b.mapv(|z| z * fix))
}

/// Determinant by LU with partial pivoting; inputs here are unitary so the
/// pivots are well conditioned.
fn det_dense(a: &Array2<C64>) -> C64 {
    let n = a.nrows();
    let mut m = a.clone();
    let mut det = C64::new(1.0, 0.0);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[(r, col)].norm() > m[(piv, col)].norm() {
                piv = r;
            }
        }
        if m[(piv, col)].norm() == 0.0 {
            return C64::new(0.0, 0.0);
        }
        if piv != col {
            for c in 0..n {
                m.swap((col, c), (piv, c));
            }
            det = -det;
        }
        det *= m[(col, col)];
        for r in col + 1..n {
            let f = m[(r, col)] / m[(col, col)];
            for c in col..n {
                let sub = f * m[(col, c)];
                m[(r, c)] -= sub;
            }
        }
    }
    det
}
