use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use super::matrix::{gemm, Matrix};
use super::qr::QrFactors;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Name of a trainable leaf.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(String);

impl ParamId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParamId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Named parameter values, e.g. the input to a finite-difference check.
pub type ParamSet = BTreeMap<ParamId, Matrix>;

/// Gradient of a scalar with respect to every parameter leaf of a tape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBundle {
    grads: BTreeMap<ParamId, Matrix>,
}

impl GradientBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ParamId, grad: Matrix) {
        self.grads.insert(id, grad);
    }

    pub fn get(&self, id: &ParamId) -> Option<&Matrix> {
        self.grads.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Matrix)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` entrywise; parameters missing here are inserted.
    pub fn accumulate(&mut self, other: &GradientBundle) {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.grads.insert(id.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.scale_assign(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Matrix::is_finite)
    }

    /// Norm-wise relative error `max|a - b| / max(max|b|, floor)` against a reference bundle.
    ///
    /// Parameters present in only one bundle count as a total mismatch.
    pub fn relative_error(&self, reference: &GradientBundle, floor: f64) -> f64 {
        let mut diff: f64 = 0.0;
        let mut scale: f64 = floor;
        for (id, r) in &reference.grads {
            let Some(a) = self.grads.get(id) else {
                return f64::INFINITY;
            };
            if a.shape() != r.shape() {
                return f64::INFINITY;
            }
            for (x, y) in a.data().iter().zip(r.data()) {
                diff = diff.max((x - y).abs());
            }
            scale = scale.max(r.max_abs());
        }
        if self.grads.len() != reference.grads.len() {
            return f64::INFINITY;
        }
        diff / scale
    }
}

enum Op {
    Param(ParamId),
    Constant,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    AddRow { a: usize, bias: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Affine { a: usize, scale: f64 },
    Transpose { a: usize },
    HStack { a: usize, b: usize },
    Tanh { a: usize },
    Exp { a: usize },
    Abs { a: usize },
    Sum { a: usize },
    RowSum { a: usize },
    SelectCols { a: usize, cols: Range<usize> },
    FaceSplit { a: usize, b: usize },
    /// `batched`: each input row is one flattened block; otherwise the input is the block.
    LogAbsDet { a: usize, factors: Vec<QrFactors>, batched: bool },
}

struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Result of [`Tape::record_logabsdet`].
#[derive(Debug, Clone, Copy)]
pub struct LogDet {
    /// 1x1 node holding `log|det A|`.
    pub value: Var,
    pub sign: f64,
}

/// Result of [`Tape::record_logabsdet_batched`].
#[derive(Debug, Clone)]
pub struct BatchedLogDet {
    /// `N x 1` node of per-row `log|det|`.
    pub values: Var,
    pub signs: Vec<f64>,
}

/// Single-owner record of matrix operations for reverse-mode differentiation.
///
/// Values are computed eagerly as operations are recorded; [`Tape::backward`]
/// walks the nodes in reverse insertion order, which is a valid reverse
/// topological order because every node's inputs are recorded before it.
#[derive(Default)]
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

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Option<f64> {
        self.value(v).as_scalar()
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, id: ParamId, value: Matrix) -> Var {
        self.push(Op::Param(id), value, true)
    }

    /// Registers a leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn record_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, false, b, false)
    }

    /// `A · Bᵀ` without materializing the transpose.
    pub fn record_matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, false, b, true)
    }

    fn matmul_impl(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (am, ak) = oriented(self.value(a), ta);
        let (bk, bn) = oriented(self.value(b), tb);
        if ak != bk {
            return Err(Error::shape(
                "record_matmul",
                format!("inner dimensions {ak} and {bk} differ"),
            ));
        }
        let mut out = Matrix::zeros(am, bn);
        gemm(ta, self.value(a), tb, self.value(b), 0.0, &mut out);
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            Op::MatMul {
                a: a.0,
                b: b.0,
                ta,
                tb,
            },
            out,
            needs,
        ))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn record_add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.value(a).shape();
        if self.value(bias).shape() != (1, cols) {
            return Err(Error::shape(
                "record_add_row",
                format!("bias {:?} for {cols} columns", self.value(bias).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let needs = self.needs(a.0) || self.needs(bias.0);
        Ok(self.push(Op::AddRow { a: a.0, bias: bias.0 }, out, needs))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Matrix::from_vec(x.rows(), x.cols(), data))
    }

    pub fn record_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("record_add", a, b, |p, q| p + q)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, out, needs))
    }

    pub fn record_sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("record_sub", a, b, |p, q| p - q)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Sub { a: a.0, b: b.0 }, out, needs))
    }

    /// Elementwise product.
    pub fn record_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("record_mul", a, b, |p, q| p * q)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, out, needs))
    }

    /// `scale · a + shift`, elementwise.
    pub fn record_affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|v| scale * v + shift);
        let needs = self.needs(a.0);
        self.push(Op::Affine { a: a.0, scale }, out, needs)
    }

    pub fn record_transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let needs = self.needs(a.0);
        self.push(Op::Transpose { a: a.0 }, out, needs)
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn record_hstack(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hstack(self.value(b))?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::HStack { a: a.0, b: b.0 }, out, needs))
    }

    pub fn record_tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let needs = self.needs(a.0);
        self.push(Op::Tanh { a: a.0 }, out, needs)
    }

    pub fn record_exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let needs = self.needs(a.0);
        self.push(Op::Exp { a: a.0 }, out, needs)
    }

    /// `|a|` with subgradient 0 at exactly 0.
    pub fn record_abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        let needs = self.needs(a.0);
        self.push(Op::Abs { a: a.0 }, out, needs)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn record_sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let needs = self.needs(a.0);
        self.push(Op::Sum { a: a.0 }, Matrix::scalar(total), needs)
    }

    /// Per-row sums, as an `N x 1` node.
    pub fn record_row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        let out = Matrix::from_vec(x.rows(), 1, data);
        let needs = self.needs(a.0);
        self.push(Op::RowSum { a: a.0 }, out, needs)
    }

    pub fn record_select_cols(&mut self, a: Var, cols: Range<usize>) -> Result<Var> {
        let width = self.value(a).cols();
        if cols.is_empty() || cols.end > width {
            return Err(Error::shape(
                "record_select_cols",
                format!("columns {cols:?} of a {width}-column matrix"),
            ));
        }
        let out = self.value(a).select_cols(cols.clone());
        let needs = self.needs(a.0);
        Ok(self.push(Op::SelectCols { a: a.0, cols }, out, needs))
    }

    /// Row-wise face-splitting product: for `A` (m x k) and `B` (n x k), returns the
    /// `(m·n) x k` matrix whose row `i·n + j` is `A[i,:] ⊙ B[j,:]`.
    pub fn record_face_split(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::shape(
                "record_face_split",
                format!("{} vs {} columns", x.cols(), y.cols()),
            ));
        }
        let (m, n, k) = (x.rows(), y.rows(), x.cols());
        let mut data = Vec::with_capacity(m * n * k);
        for i in 0..m {
            for j in 0..n {
                data.extend(x.row(i).iter().zip(y.row(j)).map(|(p, q)| p * q));
            }
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            Op::FaceSplit { a: a.0, b: b.0 },
            Matrix::from_vec(m * n, k, data),
            needs,
        ))
    }

    /// `log|det A|` of a square matrix via Householder QR.
    pub fn record_logabsdet(&mut self, a: Var) -> Result<LogDet> {
        let (r, c) = self.value(a).shape();
        if r != c {
            return Err(Error::shape(
                "record_logabsdet",
                format!("{r}x{c} is not square"),
            ));
        }
        let factors = QrFactors::factor(self.value(a).data(), r);
        if factors.is_singular() {
            return Err(Error::SingularJacobian { sample: 0 });
        }
        let sign = factors.sign();
        let out = Matrix::scalar(factors.log_abs_det());
        let needs = self.needs(a.0);
        let value = self.push(
            Op::LogAbsDet {
                a: a.0,
                factors: vec![factors],
                batched: false,
            },
            out,
            needs,
        );
        Ok(LogDet { value, sign })
    }

    /// Row-batched `log|det|`: each row of `a` is a row-major `dim x dim` matrix.
    ///
    /// Fails on the first row whose determinant is below the singularity floor,
    /// reporting that row as the sample index.
    pub fn record_logabsdet_batched(&mut self, a: Var, dim: usize) -> Result<BatchedLogDet> {
        let x = self.value(a);
        if x.cols() != dim * dim {
            return Err(Error::shape(
                "record_logabsdet_batched",
                format!("{} columns for {dim}x{dim} blocks", x.cols()),
            ));
        }
        let mut factors = Vec::with_capacity(x.rows());
        let mut values = Vec::with_capacity(x.rows());
        let mut signs = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let f = QrFactors::factor(x.row(r), dim);
            if f.is_singular() {
                return Err(Error::SingularJacobian { sample: r });
            }
            values.push(f.log_abs_det());
            signs.push(f.sign());
            factors.push(f);
        }
        let out = Matrix::from_vec(values.len(), 1, values);
        let needs = self.needs(a.0);
        let values = self.push(
            Op::LogAbsDet {
                a: a.0,
                factors,
                batched: true,
            },
            out,
            needs,
        );
        Ok(BatchedLogDet { values, signs })
    }

    /// Reverse pass from a scalar root, seeded with `seed`.
    pub fn backward(&self, root: Var, seed: f64) -> Result<GradientBundle> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(seed));
        let mut bundle = GradientBundle::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => {
                    bundle.insert(id.clone(), g);
                }
                Op::Constant => {}
                Op::MatMul { a, b, ta, tb } => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.needs(*a) {
                        let mut da = Matrix::zeros(va.rows(), va.cols());
                        match (ta, tb) {
                            (false, false) => gemm(false, &g, true, vb, 0.0, &mut da),
                            (false, true) => gemm(false, &g, false, vb, 0.0, &mut da),
                            (true, false) => gemm(false, vb, true, &g, 0.0, &mut da),
                            (true, true) => gemm(true, vb, true, &g, 0.0, &mut da),
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = Matrix::zeros(vb.rows(), vb.cols());
                        match (ta, tb) {
                            (false, false) => gemm(true, va, false, &g, 0.0, &mut db),
                            (true, false) => gemm(false, va, false, &g, 0.0, &mut db),
                            (false, true) => gemm(true, &g, false, va, 0.0, &mut db),
                            (true, true) => gemm(true, &g, true, va, 0.0, &mut db),
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddRow { a, bias } => {
                    if self.needs(*bias) {
                        let mut db = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let d = hadamard(&g, &self.nodes[*b].value);
                        accumulate(&mut grads, *a, d);
                    }
                    if self.needs(*b) {
                        let d = hadamard(&g, &self.nodes[*a].value);
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::Affine { a, scale } => {
                    if self.needs(*a) {
                        let mut d = g;
                        d.scale_assign(*scale);
                        accumulate(&mut grads, *a, d);
                    }
                }
                Op::Transpose { a } => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.transpose());
                    }
                }
                Op::HStack { a, b } => {
                    let split = self.nodes[*a].value.cols();
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.select_cols(0..split));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.select_cols(split..g.cols()));
                    }
                }
                Op::Tanh { a } => {
                    if self.needs(*a) {
                        let mut d = g;
                        for (dv, t) in d.data_mut().iter_mut().zip(node.value.data()) {
                            *dv *= 1.0 - t * t;
                        }
                        accumulate(&mut grads, *a, d);
                    }
                }
                Op::Exp { a } => {
                    if self.needs(*a) {
                        let d = hadamard(&g, &node.value);
                        accumulate(&mut grads, *a, d);
                    }
                }
                Op::Abs { a } => {
                    if self.needs(*a) {
                        let mut d = g;
                        for (dv, x) in d.data_mut().iter_mut().zip(self.nodes[*a].value.data()) {
                            *dv *= if *x > 0.0 {
                                1.0
                            } else if *x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                        }
                        accumulate(&mut grads, *a, d);
                    }
                }
                Op::Sum { a } => {
                    if self.needs(*a) {
                        let (r, c) = self.nodes[*a].value.shape();
                        accumulate(&mut grads, *a, Matrix::filled(r, c, g.data()[0]));
                    }
                }
                Op::RowSum { a } => {
                    if self.needs(*a) {
                        let (r, c) = self.nodes[*a].value.shape();
                        let mut d = Matrix::zeros(r, c);
                        for row in 0..r {
                            d.row_mut(row).fill(g.data()[row]);
                        }
                        accumulate(&mut grads, *a, d);
                    }
                }
                Op::SelectCols { a, cols } => {
                    if self.needs(*a) {
                        let (r, c) = self.nodes[*a].value.shape();
                        let mut d = Matrix::zeros(r, c);
                        for row in 0..r {
                            d.row_mut(row)[cols.clone()].copy_from_slice(g.row(row));
                        }
                        accumulate(&mut grads, *a, d);
                    }
                }
                Op::FaceSplit { a, b } => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, n, k) = (va.rows(), vb.rows(), va.cols());
                    if self.needs(*a) {
                        let mut da = Matrix::zeros(m, k);
                        for i in 0..m {
                            let out = da.row_mut(i);
                            for j in 0..n {
                                for ((o, gv), bv) in out.iter_mut().zip(g.row(i * n + j)).zip(vb.row(j)) {
                                    *o += gv * bv;
                                }
                            }
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = Matrix::zeros(n, k);
                        for i in 0..m {
                            for j in 0..n {
                                let out = db.row_mut(j);
                                for ((o, gv), av) in out.iter_mut().zip(g.row(i * n + j)).zip(va.row(i)) {
                                    *o += gv * av;
                                }
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::LogAbsDet { a, factors, batched } => {
                    if self.needs(*a) {
                        let (r, c) = self.nodes[*a].value.shape();
                        let mut d = Matrix::zeros(r, c);
                        for (block, f) in factors.iter().enumerate() {
                            let gv = g.data()[block];
                            if gv == 0.0 {
                                continue;
                            }
                            let inv_t = f.inverse_transpose();
                            let out = if *batched { d.row_mut(block) } else { d.data_mut() };
                            for (o, v) in out.iter_mut().zip(&inv_t) {
                                *o = gv * v;
                            }
                        }
                        accumulate(&mut grads, *a, d);
                    }
                }
            }
        }
        Ok(bundle)
    }
}

fn oriented(m: &Matrix, t: bool) -> (usize, usize) {
    if t {
        (m.cols(), m.rows())
    } else {
        (m.rows(), m.cols())
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn accumulate(grads: &mut [Option<Matrix>], i: usize, g: Matrix) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
