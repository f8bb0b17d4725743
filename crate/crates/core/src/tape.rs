//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar root with respect
//! to every node. Parameter leaves remember their offset in the flat parameter
//! vector so their gradients can be scattered back with
//! [`Gradients::param_grads`].

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "matrix data does not match {rows}x{cols}"
        );
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// `c = a·b + beta·c` where `a` is `m×k`, `b` is `k×n` and `c` is row-major `m×n`.
/// Strides let callers pass transposed views without copying.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows);
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(
        a.rows,
        a.cols,
        b.cols,
        &a.data,
        (a.cols, 1),
        &b.data,
        (b.cols, 1),
        0.0,
        &mut out.data,
    );
    out
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols);
    let mut out = Matrix::zeros(a.rows, b.rows);
    gemm(
        a.rows,
        a.cols,
        b.rows,
        &a.data,
        (a.cols, 1),
        &b.data,
        (1, b.cols),
        0.0,
        &mut out.data,
    );
    out
}

/// Numerically stable `log Σ exp(x)`; `-inf` entries contribute nothing.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param {
        offset: usize,
    },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddRowBroadcast(Var, Var),
    SubColBroadcast(Var, Var),
    AddScalar(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Var),
    ScaleConst(Var, f64),
    Relu(Var),
    Exp(Var),
    /// Stores the pre-normalization row norms.
    NormalizeRows(Var, Vec<f64>),
    LogSumExpRows(Var),
    GatherCols(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!((m.rows, m.cols), (1, 1));
        m.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf holding `rows × cols` values of `params` starting at `offset`.
    pub fn param(&mut self, params: &[f64], offset: usize, rows: usize, cols: usize) -> Var {
        let value = Matrix::new(rows, cols, params[offset..offset + rows * cols].to_vec());
        self.push(value, Op::Param { offset })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = matmul_nt(self.value(a), self.value(b));
        self.push(value, Op::MatMulNT(a, b))
    }

    /// Adds the `1 × cols` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(r));
        assert_eq!((rm.rows, rm.cols), (1, am.cols));
        let mut value = am.clone();
        for row in value.data.chunks_exact_mut(am.cols) {
            row.iter_mut().zip(&rm.data).for_each(|(x, y)| *x += y);
        }
        self.push(value, Op::AddRowBroadcast(a, r))
    }

    /// Subtracts the `rows × 1` column `c` from every column of `a`.
    pub fn sub_col(&mut self, a: Var, c: Var) -> Var {
        let (am, cm) = (self.value(a), self.value(c));
        assert_eq!((cm.rows, cm.cols), (am.rows, 1));
        let mut value = am.clone();
        for (row, s) in value.data.chunks_exact_mut(am.cols).zip(&cm.data) {
            row.iter_mut().for_each(|x| *x -= s);
        }
        self.push(value, Op::SubColBroadcast(a, c))
    }

    /// Adds the `1 × 1` node `s` to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x += sv);
        self.push(value, Op::AddScalar(a, s))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert!(
            am.same_shape(bm),
            "shape mismatch {}x{} vs {}x{}",
            am.rows,
            am.cols,
            bm.rows,
            bm.cols
        );
        let data = am
            .data
            .iter()
            .zip(&bm.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Matrix::new(am.rows, am.cols, data);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies `a` by the `1 × 1` node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar_value(s);
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x *= sv);
        self.push(value, Op::Scale(a, s))
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x *= c);
        self.push(value, Op::ScaleConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x = x.exp());
        self.push(value, Op::Exp(a))
    }

    /// Projects every row onto the unit sphere. Rows with norm below
    /// [`crate::types::DEGENERATE_NORM`] become the first basis vector and pass no gradient.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols;
        let norms = value
            .data
            .chunks_exact_mut(cols)
            .map(|row| {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < crate::types::DEGENERATE_NORM {
                    row.iter_mut().for_each(|x| *x = 0.0);
                    row[0] = 1.0;
                } else {
                    row.iter_mut().for_each(|x| *x /= norm);
                }
                norm
            })
            .collect();
        self.push(value, Op::NormalizeRows(a, norms))
    }

    /// Row-wise log-sum-exp, `rows × cols → rows × 1`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let data = am.data.chunks_exact(am.cols).map(log_sum_exp).collect();
        let value = Matrix::new(am.rows, 1, data);
        self.push(value, Op::LogSumExpRows(a))
    }

    /// Picks entry `(i, cols[i])` of every row, `rows × cols → rows × 1`.
    pub fn gather_cols(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let am = self.value(a);
        assert_eq!(cols.len(), am.rows);
        let data = cols.iter().enumerate().map(|(i, &j)| am.at(i, j)).collect();
        let value = Matrix::new(am.rows, 1, data);
        self.push(value, Op::GatherCols(a, cols))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in &parts {
                let m = self.value(p);
                assert_eq!(m.rows, rows);
                data.extend_from_slice(m.row(i));
            }
        }
        self.push(Matrix::new(rows, cols, data), Op::ConcatCols(parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).data.iter().sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let value = Matrix::scalar(am.data.iter().sum::<f64>() / am.data.len() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Gradients of the scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: Var) -> Result<Gradients<'_>> {
        let rv = self.value(root);
        if (rv.rows, rv.cols) != (1, 1) {
            return Err(Error::Argument(format!(
                "backward needs a scalar root, got {}x{}",
                rv.rows, rv.cols
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, tape: self })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Constant | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (am, bm) = (val(*a), val(*b));
                // dA = G·Bᵀ, dB = Aᵀ·G
                let da = accumulator(grads, *a, am.rows, am.cols);
                gemm(
                    am.rows,
                    bm.cols,
                    am.cols,
                    &g.data,
                    (g.cols, 1),
                    &bm.data,
                    (1, bm.cols),
                    1.0,
                    da,
                );
                let db = accumulator(grads, *b, bm.rows, bm.cols);
                gemm(
                    bm.rows,
                    am.rows,
                    bm.cols,
                    &am.data,
                    (1, am.cols),
                    &g.data,
                    (g.cols, 1),
                    1.0,
                    db,
                );
            }
            Op::MatMulNT(a, b) => {
                let (am, bm) = (val(*a), val(*b));
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                let da = accumulator(grads, *a, am.rows, am.cols);
                gemm(
                    am.rows,
                    bm.rows,
                    am.cols,
                    &g.data,
                    (g.cols, 1),
                    &bm.data,
                    (bm.cols, 1),
                    1.0,
                    da,
                );
                let db = accumulator(grads, *b, bm.rows, bm.cols);
                gemm(
                    bm.rows,
                    am.rows,
                    bm.cols,
                    &g.data,
                    (1, g.cols),
                    &am.data,
                    (am.cols, 1),
                    1.0,
                    db,
                );
            }
            Op::AddRowBroadcast(a, r) => {
                add_into(accumulator(grads, *a, g.rows, g.cols), &g.data, 1.0);
                let dr = accumulator(grads, *r, 1, g.cols);
                for row in g.data.chunks_exact(g.cols) {
                    add_into(dr, row, 1.0);
                }
            }
            Op::SubColBroadcast(a, c) => {
                add_into(accumulator(grads, *a, g.rows, g.cols), &g.data, 1.0);
                let dc = accumulator(grads, *c, g.rows, 1);
                for (d, row) in dc.iter_mut().zip(g.data.chunks_exact(g.cols)) {
                    *d -= row.iter().sum::<f64>();
                }
            }
            Op::AddScalar(a, s) => {
                add_into(accumulator(grads, *a, g.rows, g.cols), &g.data, 1.0);
                accumulator(grads, *s, 1, 1)[0] += g.data.iter().sum::<f64>();
            }
            Op::Add(a, b) => {
                add_into(accumulator(grads, *a, g.rows, g.cols), &g.data, 1.0);
                add_into(accumulator(grads, *b, g.rows, g.cols), &g.data, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(accumulator(grads, *a, g.rows, g.cols), &g.data, 1.0);
                add_into(accumulator(grads, *b, g.rows, g.cols), &g.data, -1.0);
            }
            Op::Mul(a, b) => {
                let (am, bm) = (val(*a), val(*b));
                let da = accumulator(grads, *a, g.rows, g.cols);
                for ((d, gv), y) in da.iter_mut().zip(&g.data).zip(&bm.data) {
                    *d += gv * y;
                }
                let db = accumulator(grads, *b, g.rows, g.cols);
                for ((d, gv), x) in db.iter_mut().zip(&g.data).zip(&am.data) {
                    *d += gv * x;
                }
            }
            Op::Scale(a, s) => {
                let (am, sv) = (val(*a), val(*s).data[0]);
                add_into(accumulator(grads, *a, g.rows, g.cols), &g.data, sv);
                let ds: f64 = g.data.iter().zip(&am.data).map(|(x, y)| x * y).sum();
                accumulator(grads, *s, 1, 1)[0] += ds;
            }
            Op::ScaleConst(a, c) => add_into(accumulator(grads, *a, g.rows, g.cols), &g.data, *c),
            Op::Relu(a) => {
                let am = val(*a);
                let da = accumulator(grads, *a, g.rows, g.cols);
                for ((d, gv), x) in da.iter_mut().zip(&g.data).zip(&am.data) {
                    if *x > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Exp(a) => {
                let da = accumulator(grads, *a, g.rows, g.cols);
                for ((d, gv), y) in da.iter_mut().zip(&g.data).zip(&node.value.data) {
                    *d += gv * y;
                }
            }
            Op::NormalizeRows(a, norms) => {
                // d/dx (x/|x|) applied to g: (g - u (u·g)) / |x|
                let cols = g.cols;
                let da = accumulator(grads, *a, g.rows, cols);
                for (i, &norm) in norms.iter().enumerate() {
                    if norm < crate::types::DEGENERATE_NORM {
                        continue;
                    }
                    let u = node.value.row(i);
                    let gi = g.row(i);
                    let ug: f64 = u.iter().zip(gi).map(|(x, y)| x * y).sum();
                    for ((d, &gv), &uv) in da[i * cols..(i + 1) * cols].iter_mut().zip(gi).zip(u) {
                        *d += (gv - uv * ug) / norm;
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let am = val(*a);
                let da = accumulator(grads, *a, am.rows, am.cols);
                for i in 0..am.rows {
                    let lse = node.value.data[i];
                    if !lse.is_finite() {
                        continue;
                    }
                    for (d, x) in da[i * am.cols..(i + 1) * am.cols].iter_mut().zip(am.row(i)) {
                        *d += g.data[i] * (x - lse).exp();
                    }
                }
            }
            Op::GatherCols(a, cols) => {
                let am = val(*a);
                let da = accumulator(grads, *a, am.rows, am.cols);
                for (i, &j) in cols.iter().enumerate() {
                    da[i * am.cols + j] += g.data[i];
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let pc = val(p).cols;
                    let dp = accumulator(grads, p, g.rows, pc);
                    for i in 0..g.rows {
                        add_into(
                            &mut dp[i * pc..(i + 1) * pc],
                            &g.row(i)[start..start + pc],
                            1.0,
                        );
                    }
                    start += pc;
                }
            }
            Op::Sum(a) => {
                let am = val(*a);
                let da = accumulator(grads, *a, am.rows, am.cols);
                da.iter_mut().for_each(|d| *d += g.data[0]);
            }
            Op::Mean(a) => {
                let am = val(*a);
                let share = g.data[0] / am.data.len() as f64;
                let da = accumulator(grads, *a, am.rows, am.cols);
                da.iter_mut().for_each(|d| *d += share);
            }
        }
    }
}

fn accumulator(grads: &mut [Option<Matrix>], v: Var, rows: usize, cols: usize) -> &mut [f64] {
    &mut grads[v.0]
        .get_or_insert_with(|| Matrix::zeros(rows, cols))
        .data
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

pub struct Gradients<'t> {
    grads: Vec<Option<Matrix>>,
    tape: &'t Tape,
}

impl Gradients<'_> {
    /// Gradient with respect to `v`; `None` when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Scatters the gradients of all parameter leaves into a flat vector.
    pub fn param_grads(&self, n_params: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_params];
        for (node, g) in self.tape.nodes.iter().zip(&self.grads) {
            if let (Op::Param { offset }, Some(g)) = (&node.op, g) {
                add_into(&mut out[*offset..*offset + g.data.len()], &g.data, 1.0);
            }
        }
        out
    }
}
