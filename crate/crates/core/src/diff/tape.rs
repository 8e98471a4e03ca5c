//! Define-by-run operation tape: forward evaluation with recorded structure,
//! replayed in reverse to accumulate gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamId, ParamSet};
use super::DiffError;
use crate::mat::{Mat, Scalar};

/// Handle to one recorded tensor on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(usize);

struct Node<F: Scalar> {
    value: Mat<F>,
    op: Op<F>,
    needs_grad: bool,
}

enum Op<F: Scalar> {
    Constant,
    Param(ParamId),
    Matmul(TensorId, TensorId),
    /// `a · bᵀ`.
    MatmulNT(TensorId, TensorId),
    Add(TensorId, TensorId),
    Scale(TensorId, F),
    /// `x` scaled by the single entry `s[(row, col)]` of another tensor.
    ScaleByEntry { x: TensorId, s: TensorId, row: usize, col: usize },
    /// `x` plus a `1×c` bias row broadcast over all rows.
    AddBiasRow { x: TensorId, bias: TensorId },
    Relu(TensorId),
    LeakyRelu(TensorId, F),
    SoftmaxRow(TensorId),
    /// `n×m` → `1×n`; entry `i` is the sum of row `i`.
    RowSums(TensorId),
    ConcatCols(Vec<TensorId>),
    ConcatRows(Vec<TensorId>),
    GatherRows(TensorId, Vec<usize>),
    /// Symmetric normalization; `degrees` caches the (self-loop adjusted)
    /// row sums of the source for the backward pass.
    SymNormalize { a: TensorId, degrees: Vec<F> },
    Symmetrize(TensorId),
    MulMask(TensorId, Mat<F>),
    Reshape(TensorId),
    SumAll(TensorId),
    CrossEntropy { logits: TensorId, labels: Vec<usize> },
}

fn shape_err(op: &'static str, msg: alloc::string::String) -> DiffError {
    DiffError::ShapeError { op, msg }
}

/// Gradients of the loss with respect to every recorded tensor, indexed by
/// [`TensorId`]. Entries are `None` where no gradient flowed.
pub type GradTable<F> = Vec<Option<Mat<F>>>;

/// Records a forward computation and differentiates it in reverse.
///
/// Every operation validates shapes, evaluates eagerly, and rejects
/// non-finite results immediately, so a NaN is reported at the op that
/// produced it rather than at the loss.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    branches: Vec<bool>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), branches: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a recorded tensor.
    pub fn value(&self, id: TensorId) -> &Mat<F> {
        &self.nodes[id.0].value
    }

    /// The sequence of discrete decisions (activation signs, caller-noted
    /// branches) taken during this forward pass. Two evaluations of the same
    /// computation are differentiable perturbations of each other only if
    /// their signatures match.
    pub fn branch_signature(&self) -> &[bool] {
        &self.branches
    }

    /// Records a discrete decision made outside the tape (e.g. a sparsity
    /// mask entry derived from forward values) so gradient checking can
    /// detect when a perturbation flips it.
    pub fn note_branch(&mut self, taken: bool) {
        self.branches.push(taken);
    }

    fn push(
        &mut self,
        opname: &'static str,
        value: Mat<F>,
        op: Op<F>,
        needs_grad: bool,
    ) -> Result<TensorId, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NumericalError { op: opname });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Records a constant; no gradient is tracked through it.
    pub fn constant(&mut self, value: Mat<F>) -> Result<TensorId, DiffError> {
        self.push("constant", value, Op::Constant, false)
    }

    /// Records the current value of a parameter as a differentiable leaf.
    pub fn param(&mut self, params: &ParamSet<F>, id: ParamId) -> Result<TensorId, DiffError> {
        self.push("param", params.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, DiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.cols() != vb.rows() {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions disagree: {:?} · {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = va.matmul(vb);
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::Matmul(a, b), needs)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, DiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.cols() != vb.cols() {
            return Err(shape_err(
                "matmul_nt",
                format!("inner dimensions disagree: {:?} · {:?}ᵀ", va.shape(), vb.shape()),
            ));
        }
        let out = va.matmul_nt(vb);
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul_nt", out, Op::MatmulNT(a, b), needs)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, DiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(shape_err(
                "add",
                format!("shapes disagree: {:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = va.add(vb);
        let needs = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), needs)
    }

    pub fn scale(&mut self, x: TensorId, c: F) -> Result<TensorId, DiffError> {
        let out = self.nodes[x.0].value.scale(c);
        let needs = self.needs(x);
        self.push("scale", out, Op::Scale(x, c), needs)
    }

    /// Scales every entry of `x` by the entry `s[(row, col)]`.
    pub fn scale_by_entry(
        &mut self,
        x: TensorId,
        s: TensorId,
        row: usize,
        col: usize,
    ) -> Result<TensorId, DiffError> {
        let vs = &self.nodes[s.0].value;
        if row >= vs.rows() || col >= vs.cols() {
            return Err(shape_err(
                "scale_by_entry",
                format!("entry ({row}, {col}) outside tensor of shape {:?}", vs.shape()),
            ));
        }
        let factor = vs[(row, col)];
        let out = self.nodes[x.0].value.scale(factor);
        let needs = self.needs(x) || self.needs(s);
        self.push("scale_by_entry", out, Op::ScaleByEntry { x, s, row, col }, needs)
    }

    /// Adds a `1×c` bias row to every row of `x`.
    pub fn add_bias_row(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, DiffError> {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(shape_err(
                "add_bias_row",
                format!("bias {:?} does not broadcast over {:?}", vb.shape(), vx.shape()),
            ));
        }
        let out = Mat::from_fn(vx.rows(), vx.cols(), |i, j| vx[(i, j)] + vb[(0, j)]);
        let needs = self.needs(x) || self.needs(bias);
        self.push("add_bias_row", out, Op::AddBiasRow { x, bias }, needs)
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId, DiffError> {
        let vx = &self.nodes[x.0].value;
        let out = vx.map(|v| if v > F::zero() { v } else { F::zero() });
        for &v in self.nodes[x.0].value.as_slice() {
            self.branches.push(v > F::zero());
        }
        let needs = self.needs(x);
        self.push("relu", out, Op::Relu(x), needs)
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: F) -> Result<TensorId, DiffError> {
        let vx = &self.nodes[x.0].value;
        let out = vx.map(|v| if v > F::zero() { v } else { slope * v });
        for &v in self.nodes[x.0].value.as_slice() {
            self.branches.push(v > F::zero());
        }
        let needs = self.needs(x);
        self.push("leaky_relu", out, Op::LeakyRelu(x, slope), needs)
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_row(&mut self, x: TensorId) -> Result<TensorId, DiffError> {
        let vx = &self.nodes[x.0].value;
        let mut out = Mat::zeros(vx.rows(), vx.cols());
        for i in 0..vx.rows() {
            let row = vx.row(i);
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let orow = out.row_mut(i);
            let mut total = F::zero();
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                total = total + *o;
            }
            for o in orow.iter_mut() {
                *o = *o / total;
            }
        }
        let needs = self.needs(x);
        self.push("softmax_row", out, Op::SoftmaxRow(x), needs)
    }

    /// Collapses an `n×m` tensor to the `1×n` row of its row sums.
    pub fn row_sums(&mut self, x: TensorId) -> Result<TensorId, DiffError> {
        let vx = &self.nodes[x.0].value;
        let mut out = Mat::zeros(1, vx.rows());
        for i in 0..vx.rows() {
            let mut s = F::zero();
            for &v in vx.row(i) {
                s = s + v;
            }
            out[(0, i)] = s;
        }
        let needs = self.needs(x);
        self.push("row_sums", out, Op::RowSums(x), needs)
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, DiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no parts given".into()));
        }
        let rows = self.nodes[parts[0].0].value.rows();
        let mut cols = 0;
        for &p in parts {
            let vp = &self.nodes[p.0].value;
            if vp.rows() != rows {
                return Err(shape_err(
                    "concat_cols",
                    format!("part has {} rows, expected {rows}", vp.rows()),
                ));
            }
            cols += vp.cols();
        }
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let vp = &self.nodes[p.0].value;
            for i in 0..rows {
                out.row_mut(i)[offset..offset + vp.cols()].copy_from_slice(vp.row(i));
            }
            offset += vp.cols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, DiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no parts given".into()));
        }
        let cols = self.nodes[parts[0].0].value.cols();
        let mut rows = 0;
        for &p in parts {
            let vp = &self.nodes[p.0].value;
            if vp.cols() != cols {
                return Err(shape_err(
                    "concat_rows",
                    format!("part has {} columns, expected {cols}", vp.cols()),
                ));
            }
            rows += vp.rows();
        }
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let vp = &self.nodes[p.0].value;
            for i in 0..vp.rows() {
                out.row_mut(offset + i).copy_from_slice(vp.row(i));
            }
            offset += vp.rows();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), needs)
    }

    /// Selects rows of `x` by index; repeated indices are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&mut self, x: TensorId, indices: &[usize]) -> Result<TensorId, DiffError> {
        let vx = &self.nodes[x.0].value;
        for &i in indices {
            if i >= vx.rows() {
                return Err(shape_err(
                    "gather_rows",
                    format!("row {i} out of range for {} rows", vx.rows()),
                ));
            }
        }
        let mut out = Mat::zeros(indices.len(), vx.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(vx.row(i));
        }
        let needs = self.needs(x);
        self.push("gather_rows", out, Op::GatherRows(x, indices.to_vec()), needs)
    }

    /// Symmetric normalization `D̃^{-1/2} Ã D̃^{-1/2}` of a square tensor,
    /// where `Ã` adds identity self-loops when requested and `D̃` holds its
    /// row sums.
    pub fn sym_normalize(
        &mut self,
        a: TensorId,
        add_self_loops: bool,
    ) -> Result<TensorId, DiffError> {
        let va = &self.nodes[a.0].value;
        if va.rows() != va.cols() {
            return Err(shape_err(
                "sym_normalize",
                format!("matrix must be square, got {:?}", va.shape()),
            ));
        }
        let n = va.rows();
        let tilde = |i: usize, j: usize| {
            let base = va[(i, j)];
            if add_self_loops && i == j {
                base + F::one()
            } else {
                base
            }
        };
        let mut degrees = Vec::with_capacity(n);
        for i in 0..n {
            let mut s = F::zero();
            for j in 0..n {
                s = s + tilde(i, j);
            }
            if !(s > F::zero()) {
                return Err(DiffError::IsolatedNode { node: i });
            }
            degrees.push(s);
        }
        let inv_sqrt: Vec<F> = degrees.iter().map(|&s| F::one() / s.sqrt()).collect();
        let out = Mat::from_fn(n, n, |i, j| tilde(i, j) * inv_sqrt[i] * inv_sqrt[j]);
        let needs = self.needs(a);
        self.push("sym_normalize", out, Op::SymNormalize { a, degrees }, needs)
    }

    /// `(x + xᵀ) / 2`.
    pub fn symmetrize(&mut self, x: TensorId) -> Result<TensorId, DiffError> {
        let vx = &self.nodes[x.0].value;
        if vx.rows() != vx.cols() {
            return Err(shape_err(
                "symmetrize",
                format!("matrix must be square, got {:?}", vx.shape()),
            ));
        }
        let half = F::from_f64(0.5);
        let out = Mat::from_fn(vx.rows(), vx.cols(), |i, j| (vx[(i, j)] + vx[(j, i)]) * half);
        let needs = self.needs(x);
        self.push("symmetrize", out, Op::Symmetrize(x), needs)
    }

    /// Elementwise product with a fixed 0/1 mask. The mask is data, not a
    /// tracked tensor: gradients flow only through surviving entries.
    pub fn mul_mask(&mut self, x: TensorId, mask: Mat<F>) -> Result<TensorId, DiffError> {
        let vx = &self.nodes[x.0].value;
        if vx.shape() != mask.shape() {
            return Err(shape_err(
                "mul_mask",
                format!("mask {:?} does not match input {:?}", mask.shape(), vx.shape()),
            ));
        }
        let out = vx.zip(&mask, |a, m| a * m);
        let needs = self.needs(x);
        self.push("mul_mask", out, Op::MulMask(x, mask), needs)
    }

    /// Reinterprets the entries of `x` under a new shape (row-major order).
    pub fn reshape(&mut self, x: TensorId, rows: usize, cols: usize) -> Result<TensorId, DiffError> {
        let vx = &self.nodes[x.0].value;
        if rows * cols != vx.rows() * vx.cols() {
            return Err(shape_err(
                "reshape",
                format!("cannot reshape {:?} into ({rows}, {cols})", vx.shape()),
            ));
        }
        let out = vx.reshaped(rows, cols);
        let needs = self.needs(x);
        self.push("reshape", out, Op::Reshape(x), needs)
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId, DiffError> {
        let total = self.nodes[x.0].value.sum();
        let needs = self.needs(x);
        self.push("sum_all", Mat::from_vec(1, 1, vec![total]), Op::SumAll(x), needs)
    }

    /// Mean cross-entropy between rows of logits and the given class labels,
    /// computed through a numerically stable log-sum-exp.
    pub fn cross_entropy(
        &mut self,
        logits: TensorId,
        labels: &[usize],
    ) -> Result<TensorId, DiffError> {
        let vl = &self.nodes[logits.0].value;
        if vl.rows() != labels.len() {
            return Err(shape_err(
                "cross_entropy",
                format!("{} logit rows but {} labels", vl.rows(), labels.len()),
            ));
        }
        let classes = vl.cols();
        let mut total = F::zero();
        for (b, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(DiffError::LabelOutOfRange { label: y, classes });
            }
            let row = vl.row(b);
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut lse = F::zero();
            for &v in row {
                lse = lse + (v - max).exp();
            }
            total = total + (max + lse.ln()) - row[y];
        }
        let mean = total / F::from_f64(labels.len() as f64);
        let needs = self.needs(logits);
        self.push(
            "cross_entropy",
            Mat::from_vec(1, 1, vec![mean]),
            Op::CrossEntropy { logits, labels: labels.to_vec() },
            needs,
        )
    }

    /// Runs reverse accumulation from `loss` (which must be `1×1`), adding
    /// dLoss/dParam into each reachable parameter's gradient buffer, and
    /// returns the per-tensor gradient table.
    ///
    /// Gradients accumulate: calling backward twice doubles what is in the
    /// parameter buffers.
    pub fn backward(
        &self,
        loss: TensorId,
        params: &mut ParamSet<F>,
    ) -> Result<GradTable<F>, DiffError> {
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(shape_err(
                "backward",
                format!("loss must be 1x1, got {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: GradTable<F> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![F::one()]));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].clone().expect("checked above");
            if !g.is_finite() {
                return Err(DiffError::NumericalError { op: "backward" });
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => params.accumulate_grad(*pid, &g)?,
                Op::Matmul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    self.acc(&mut grads, *a, || g.matmul_nt(vb));
                    self.acc(&mut grads, *b, || va.matmul_tn(&g));
                }
                Op::MatmulNT(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    self.acc(&mut grads, *a, || g.matmul(vb));
                    self.acc(&mut grads, *b, || g.matmul_tn(va));
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.clone());
                }
                Op::Scale(x, c) => {
                    self.acc(&mut grads, *x, || g.scale(*c));
                }
                Op::ScaleByEntry { x, s, row, col } => {
                    let factor = self.nodes[s.0].value[(*row, *col)];
                    let vx = &self.nodes[x.0].value;
                    self.acc(&mut grads, *x, || g.scale(factor));
                    self.acc(&mut grads, *s, || {
                        let mut ds = Mat::zeros(
                            self.nodes[s.0].value.rows(),
                            self.nodes[s.0].value.cols(),
                        );
                        let mut dot = F::zero();
                        for (&gv, &xv) in g.as_slice().iter().zip(vx.as_slice()) {
                            dot = dot + gv * xv;
                        }
                        ds[(*row, *col)] = dot;
                        ds
                    });
                }
                Op::AddBiasRow { x, bias } => {
                    self.acc(&mut grads, *x, || g.clone());
                    self.acc(&mut grads, *bias, || {
                        let mut db = Mat::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (j, &gv) in g.row(i).iter().enumerate() {
                                db[(0, j)] = db[(0, j)] + gv;
                            }
                        }
                        db
                    });
                }
                Op::Relu(x) => {
                    let vx = &self.nodes[x.0].value;
                    self.acc(&mut grads, *x, || {
                        g.zip(vx, |gv, xv| if xv > F::zero() { gv } else { F::zero() })
                    });
                }
                Op::LeakyRelu(x, slope) => {
                    let vx = &self.nodes[x.0].value;
                    self.acc(&mut grads, *x, || {
                        g.zip(vx, |gv, xv| if xv > F::zero() { gv } else { gv * *slope })
                    });
                }
                Op::SoftmaxRow(x) => {
                    let y = &node.value;
                    self.acc(&mut grads, *x, || {
                        let mut dx = Mat::zeros(y.rows(), y.cols());
                        for i in 0..y.rows() {
                            let (yr, gr) = (y.row(i), g.row(i));
                            let mut inner = F::zero();
                            for (&yv, &gv) in yr.iter().zip(gr) {
                                inner = inner + yv * gv;
                            }
                            for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                                *d = yr[j] * (gr[j] - inner);
                            }
                        }
                        dx
                    });
                }
                Op::RowSums(x) => {
                    let vx = &self.nodes[x.0].value;
                    self.acc(&mut grads, *x, || {
                        Mat::from_fn(vx.rows(), vx.cols(), |i, _| g[(0, i)])
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p.0].value.cols();
                        self.acc(&mut grads, p, || {
                            Mat::from_fn(g.rows(), pc, |i, j| g[(i, offset + j)])
                        });
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pr = self.nodes[p.0].value.rows();
                        self.acc(&mut grads, p, || {
                            Mat::from_fn(pr, g.cols(), |i, j| g[(offset + i, j)])
                        });
                        offset += pr;
                    }
                }
                Op::GatherRows(x, indices) => {
                    let vx = &self.nodes[x.0].value;
                    self.acc(&mut grads, *x, || {
                        let mut dx = Mat::zeros(vx.rows(), vx.cols());
                        for (r, &i) in indices.iter().enumerate() {
                            for (d, &gv) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                                *d = *d + gv;
                            }
                        }
                        dx
                    });
                }
                Op::SymNormalize { a, degrees } => {
                    let l = &node.value;
                    let n = l.rows();
                    self.acc(&mut grads, *a, || {
                        // dÃ_pq = g_pq·u_p·u_q − (r_p + c_p)/(2·s_p), where
                        // u = s^{-1/2}, r_p/c_p are the row/column dot
                        // products of g with the output. The self-loop shift
                        // is additive, so dA = dÃ.
                        let inv_sqrt: Vec<F> =
                            degrees.iter().map(|&s| F::one() / s.sqrt()).collect();
                        let mut row_dot = vec![F::zero(); n];
                        let mut col_dot = vec![F::zero(); n];
                        for p in 0..n {
                            for q in 0..n {
                                let gl = g[(p, q)] * l[(p, q)];
                                row_dot[p] = row_dot[p] + gl;
                                col_dot[q] = col_dot[q] + gl;
                            }
                        }
                        let half = F::from_f64(0.5);
                        Mat::from_fn(n, n, |p, q| {
                            g[(p, q)] * inv_sqrt[p] * inv_sqrt[q]
                                - (row_dot[p] + col_dot[p]) * half / degrees[p]
                        })
                    });
                }
                Op::Symmetrize(x) => {
                    let half = F::from_f64(0.5);
                    self.acc(&mut grads, *x, || {
                        Mat::from_fn(g.rows(), g.cols(), |i, j| (g[(i, j)] + g[(j, i)]) * half)
                    });
                }
                Op::MulMask(x, mask) => {
                    self.acc(&mut grads, *x, || g.zip(mask, |gv, m| gv * m));
                }
                Op::Reshape(x) => {
                    let vx = &self.nodes[x.0].value;
                    self.acc(&mut grads, *x, || g.reshaped(vx.rows(), vx.cols()));
                }
                Op::SumAll(x) => {
                    let vx = &self.nodes[x.0].value;
                    let gv = g[(0, 0)];
                    self.acc(&mut grads, *x, || Mat::from_fn(vx.rows(), vx.cols(), |_, _| gv));
                }
                Op::CrossEntropy { logits, labels } => {
                    let vl = &self.nodes[logits.0].value;
                    let gv = g[(0, 0)];
                    self.acc(&mut grads, *logits, || {
                        let batch = F::from_f64(labels.len() as f64);
                        let mut dl = Mat::zeros(vl.rows(), vl.cols());
                        for (b, &y) in labels.iter().enumerate() {
                            let row = vl.row(b);
                            let mut max = row[0];
                            for &v in row {
                                if v > max {
                                    max = v;
                                }
                            }
                            let mut total = F::zero();
                            let drow = dl.row_mut(b);
                            for (d, &v) in drow.iter_mut().zip(row) {
                                *d = (v - max).exp();
                                total = total + *d;
                            }
                            for (j, d) in drow.iter_mut().enumerate() {
                                let softmax = *d / total;
                                let target = if j == y { F::one() } else { F::zero() };
                                *d = (softmax - target) * gv / batch;
                            }
                        }
                        dl
                    });
                }
            }
        }

        Ok(grads)
    }

    fn acc(&self, grads: &mut GradTable<F>, parent: TensorId, make: impl FnOnce() -> Mat<F>) {
        if !self.nodes[parent.0].needs_grad {
            return;
        }
        let delta = make();
        match &mut grads[parent.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }
}
