//! Minimal reverse-mode autodiff over f64 matrices.
//!
//! Every tensor is an `Array2<f64>`; scalars are 1x1, row vectors 1xN, column
//! vectors Nx1. A tape is rebuilt per sample, so value-dependent control flow
//! (power projection branch, projection gates, top-K selection) is traced
//! fresh each forward pass and the recorded decisions drive the backward
//! sweep. Each op's backward is checked against central finite differences in
//! the tests at the bottom.

use ndarray::{Array2, Axis};

use crate::geometry::{project_deployment_traced, GeometryConfig, ProjTrace};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Identifier of a parameter block inside a `ParamStore`.
pub type BlockId = usize;

#[derive(Debug, Clone, Copy)]
enum UnaryKind {
    Neg,
    Relu,
    Gelu,
    Sigmoid,
    Sqrt,
    Ln,
    Cos,
    Sin,
    Recip,
}

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    MatmulNt,
    BroadcastRowAdd,
    MulColVec,
    MulScalar,
    DotSum,
    Max2,
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param,
    Unary {
        p: usize,
        kind: UnaryKind,
    },
    Affine {
        p: usize,
        a: f64,
    },
    Binary {
        a: usize,
        b: usize,
        kind: BinaryKind,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    SoftmaxRows {
        p: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
    },
    MeanRows {
        p: usize,
    },
    SumAll {
        p: usize,
    },
    SumCols {
        p: usize,
    },
    SliceCols {
        p: usize,
        from: usize,
    },
    ConcatCols {
        ps: Vec<usize>,
    },
    Reshape {
        p: usize,
    },
    Transpose {
        p: usize,
    },
    SortRow {
        p: usize,
        perm: Vec<usize>,
    },
    ProjectRow {
        p: usize,
        trace: ProjTrace,
    },
    TopKst {
        p: usize,
    },
    GatherCols {
        p: usize,
        idx: Vec<usize>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one backward sweep, indexed by node.
pub struct Grads {
    by_node: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Array2<f64>> {
        self.by_node[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(BlockId, usize)>,
    st_disabled: bool,
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[[0, 0]]
    }

    /// Parameter leaves recorded on this tape, in creation order.
    pub fn param_nodes(&self) -> &[(BlockId, usize)] {
        &self.params
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn param(&mut self, block: BlockId, value: Array2<f64>) -> Var {
        let v = self.push(value, Op::Param, true);
        self.params.push((block, v.0));
        v
    }

    fn unary(&mut self, p: Var, kind: UnaryKind) -> Var {
        let value = {
            let x = &self.nodes[p.0].value;
            match kind {
                UnaryKind::Neg => x.mapv(|v| -v),
                UnaryKind::Relu => x.mapv(|v| v.max(0.0)),
                UnaryKind::Gelu => x.mapv(gelu),
                UnaryKind::Sigmoid => x.mapv(sigmoid),
                UnaryKind::Sqrt => x.mapv(f64::sqrt),
                UnaryKind::Ln => x.mapv(f64::ln),
                UnaryKind::Cos => x.mapv(f64::cos),
                UnaryKind::Sin => x.mapv(f64::sin),
                UnaryKind::Recip => x.mapv(|v| 1.0 / v),
            }
        };
        let ng = self.ng(p);
        self.push(value, Op::Unary { p: p.0, kind }, ng)
    }

    pub fn neg(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Neg)
    }
    pub fn relu(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Relu)
    }
    pub fn gelu(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Gelu)
    }
    pub fn sigmoid(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Sigmoid)
    }
    pub fn sqrt(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Sqrt)
    }
    pub fn ln(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Ln)
    }
    pub fn cos(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Cos)
    }
    pub fn sin(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Sin)
    }
    pub fn recip(&mut self, p: Var) -> Var {
        self.unary(p, UnaryKind::Recip)
    }

    /// a*x + b, elementwise with constant coefficients.
    pub fn affine(&mut self, p: Var, a: f64, b: f64) -> Var {
        let value = self.nodes[p.0].value.mapv(|v| a * v + b);
        let ng = self.ng(p);
        self.push(value, Op::Affine { p: p.0, a }, ng)
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Var {
        let value = {
            let x = &self.nodes[a.0].value;
            let y = &self.nodes[b.0].value;
            match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => x / y,
                BinaryKind::Matmul => x.dot(y),
                BinaryKind::MatmulNt => x.dot(&y.t()),
                BinaryKind::BroadcastRowAdd => {
                    debug_assert_eq!(y.nrows(), 1);
                    x + &y.broadcast(x.dim()).unwrap()
                }
                BinaryKind::MulColVec => {
                    debug_assert_eq!(y.ncols(), 1);
                    debug_assert_eq!(x.nrows(), y.nrows());
                    let mut out = x.clone();
                    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                        row.mapv_inplace(|v| v * y[[i, 0]]);
                    }
                    out
                }
                BinaryKind::MulScalar => {
                    debug_assert_eq!(y.dim(), (1, 1));
                    x.mapv(|v| v * y[[0, 0]])
                }
                BinaryKind::DotSum => {
                    debug_assert_eq!(x.dim(), y.dim());
                    Array2::from_elem((1, 1), x.iter().zip(y.iter()).map(|(u, v)| u * v).sum())
                }
                BinaryKind::Max2 => {
                    debug_assert_eq!(x.dim(), (1, 1));
                    debug_assert_eq!(y.dim(), (1, 1));
                    Array2::from_elem((1, 1), x[[0, 0]].max(y[[0, 0]]))
                }
            }
        };
        let ng = self.ng(a) || self.ng(b);
        self.push(
            value,
            Op::Binary {
                a: a.0,
                b: b.0,
                kind,
            },
            ng,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Add)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Sub)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Mul)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Div)
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Matmul)
    }
    /// a . b^T
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::MatmulNt)
    }
    /// x (m,n) + row (1,n) broadcast over rows.
    pub fn broadcast_row_add(&mut self, x: Var, row: Var) -> Var {
        self.binary(x, row, BinaryKind::BroadcastRowAdd)
    }
    /// x (m,n) * v (m,1) broadcast over columns.
    pub fn mul_colvec(&mut self, x: Var, v: Var) -> Var {
        self.binary(x, v, BinaryKind::MulColVec)
    }
    /// x * s with s a 1x1 node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        self.binary(x, s, BinaryKind::MulScalar)
    }
    /// sum(a .* b) as a 1x1 node.
    pub fn dot_sum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::DotSum)
    }
    /// max of two scalars; ties route the gradient to `a`.
    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Max2)
    }

    /// y = x . w^T (+ b), with w stored (out, in) and b (1, out).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut value = {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            xv.dot(&wv.t())
        };
        if let Some(bias) = b {
            let bv = &self.nodes[bias.0].value;
            debug_assert_eq!(bv.nrows(), 1);
            value = &value + &bv.broadcast(value.dim()).unwrap();
        }
        let ng = self.ng(x) || self.ng(w) || b.map_or(false, |bias| self.ng(bias));
        self.push(
            value,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|v| v.0),
            },
            ng,
        )
    }

    /// Row-wise numerically stable softmax.
    pub fn softmax_rows(&mut self, p: Var) -> Var {
        let x = &self.nodes[p.0].value;
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.iter().sum();
            row.mapv_inplace(|v| v / sum);
        }
        let ng = self.ng(p);
        self.push(out, Op::SoftmaxRows { p: p.0 }, ng)
    }

    /// Row-wise layer norm with learnable gain/offset (1,n).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let value = {
            let xv = &self.nodes[x.0].value;
            let g = &self.nodes[gamma.0].value;
            let b = &self.nodes[beta.0].value;
            let mut out = xv.clone();
            for mut row in out.axis_iter_mut(Axis(0)) {
                let n = row.len() as f64;
                let mu = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                let s = (var + LN_EPS).sqrt();
                for (j, v) in row.iter_mut().enumerate() {
                    *v = g[[0, j]] * (*v - mu) / s + b[[0, j]];
                }
            }
            out
        };
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
            ng,
        )
    }

    /// (m,n) -> (1,n) mean over rows.
    pub fn mean_rows(&mut self, p: Var) -> Var {
        let x = &self.nodes[p.0].value;
        let m = x.nrows() as f64;
        let value = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / m;
        let ng = self.ng(p);
        self.push(value, Op::MeanRows { p: p.0 }, ng)
    }

    /// (m,n) -> (1,1) total sum.
    pub fn sum_all(&mut self, p: Var) -> Var {
        let s = self.nodes[p.0].value.sum();
        let ng = self.ng(p);
        self.push(Array2::from_elem((1, 1), s), Op::SumAll { p: p.0 }, ng)
    }

    /// (m,n) -> (m,1) sum over columns.
    pub fn sum_cols(&mut self, p: Var) -> Var {
        let value = self.nodes[p.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(p);
        self.push(value, Op::SumCols { p: p.0 }, ng)
    }

    pub fn slice_cols(&mut self, p: Var, from: usize, to: usize) -> Var {
        let value = self
            .nodes[p.0]
            .value
            .slice(ndarray::s![.., from..to])
            .to_owned();
        let _ = to;
        let ng = self.ng(p);
        self.push(value, Op::SliceCols { p: p.0, from }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        let ng = parts.iter().any(|v| self.ng(*v));
        self.push(
            value,
            Op::ConcatCols {
                ps: parts.iter().map(|v| v.0).collect(),
            },
            ng,
        )
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, p: Var, rows: usize, cols: usize) -> Var {
        let value = self
            .nodes[p.0]
            .value
            .clone()
            .into_shape((rows, cols))
            .expect("reshape size mismatch");
        let ng = self.ng(p);
        self.push(value, Op::Reshape { p: p.0 }, ng)
    }

    pub fn transpose(&mut self, p: Var) -> Var {
        let value = self.nodes[p.0].value.t().to_owned();
        let ng = self.ng(p);
        self.push(value, Op::Transpose { p: p.0 }, ng)
    }

    /// Ascending sort of a (1,n) row; the permutation is recorded.
    pub fn sort_row(&mut self, p: Var) -> Var {
        let x = &self.nodes[p.0].value;
        debug_assert_eq!(x.nrows(), 1);
        let n = x.ncols();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by(|&a, &b| x[[0, a]].partial_cmp(&x[[0, b]]).unwrap());
        let mut value = Array2::zeros((1, n));
        for (i, &src) in perm.iter().enumerate() {
            value[[0, i]] = x[[0, src]];
        }
        let ng = self.ng(p);
        self.push(value, Op::SortRow { p: p.0, perm }, ng)
    }

    /// Feasibility projection of a (1,n) row of raw coordinates; the gate
    /// trace is recorded for the backward sweep.
    pub fn project_row(&mut self, p: Var, geo: &GeometryConfig) -> crate::error::Result<Var> {
        let x = &self.nodes[p.0].value;
        debug_assert_eq!(x.nrows(), 1);
        let raw: Vec<f64> = x.row(0).to_vec();
        let (dep, trace) = project_deployment_traced(&raw, geo)?;
        let value = Array2::from_shape_vec((1, dep.len()), dep.y).unwrap();
        let ng = self.ng(p);
        Ok(self.push(value, Op::ProjectRow { p: p.0, trace }, ng))
    }

    /// Treat hard top-k selections as constants from here on. Used by the
    /// gradient checker: the straight-through surrogate is deliberately not
    /// the true (zero a.e.) derivative, so finite differences are compared
    /// against the continuous part of the loss only.
    pub fn disable_straight_through(&mut self) {
        self.st_disabled = true;
    }

    /// Hard top-k indicator over a (1,n) row of logits; backward follows the
    /// straight-through estimator through a temperature-1 softmax.
    pub fn topk_straight_through(&mut self, p: Var, k: usize) -> Var {
        let x = &self.nodes[p.0].value;
        debug_assert_eq!(x.nrows(), 1);
        let n = x.ncols();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x[[0, b]].partial_cmp(&x[[0, a]]).unwrap().then(a.cmp(&b)));
        let mut value = Array2::zeros((1, n));
        for &i in order.iter().take(k) {
            value[[0, i]] = 1.0;
        }
        let ng = self.ng(p) && !self.st_disabled;
        self.push(value, Op::TopKst { p: p.0 }, ng)
    }

    /// y[0,j] = x[0, idx[j]] for a (1,n) row.
    pub fn gather_cols(&mut self, p: Var, idx: &[usize]) -> Var {
        let x = &self.nodes[p.0].value;
        debug_assert_eq!(x.nrows(), 1);
        let mut value = Array2::zeros((1, idx.len()));
        for (j, &i) in idx.iter().enumerate() {
            value[[0, j]] = x[[0, i]];
        }
        let ng = self.ng(p);
        self.push(
            value,
            Op::GatherCols {
                p: p.0,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: Var) -> Grads {
        let mut by_node: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        debug_assert_eq!(self.nodes[root.0].value.dim(), (1, 1));
        by_node[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = by_node[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                by_node[i] = Some(g);
                continue;
            }
            self.step_backward(i, &g, &mut by_node);
            by_node[i] = Some(g);
        }
        Grads { by_node }
    }

    fn accum(by_node: &mut [Option<Array2<f64>>], idx: usize, g: Array2<f64>) {
        match &mut by_node[idx] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn step_backward(&self, i: usize, g: &Array2<f64>, by: &mut Vec<Option<Array2<f64>>>) {
        let val = |idx: usize| &self.nodes[idx].value;
        let wants = |idx: usize| self.nodes[idx].needs_grad;
        match &self.nodes[i].op {
            Op::Const | Op::Param => {}
            Op::Unary { p, kind } => {
                if !wants(*p) {
                    return;
                }
                let x = val(*p);
                let out = &self.nodes[i].value;
                let gx = match kind {
                    UnaryKind::Neg => g.mapv(|v| -v),
                    UnaryKind::Relu => {
                        let mut gx = g.clone();
                        gx.zip_mut_with(x, |gv, &xv| {
                            if xv <= 0.0 {
                                *gv = 0.0;
                            }
                        });
                        gx
                    }
                    UnaryKind::Gelu => {
                        let mut gx = g.clone();
                        gx.zip_mut_with(x, |gv, &xv| *gv *= gelu_grad(xv));
                        gx
                    }
                    UnaryKind::Sigmoid => {
                        let mut gx = g.clone();
                        gx.zip_mut_with(out, |gv, &yv| *gv *= yv * (1.0 - yv));
                        gx
                    }
                    UnaryKind::Sqrt => {
                        let mut gx = g.clone();
                        gx.zip_mut_with(out, |gv, &yv| *gv *= 0.5 / yv);
                        gx
                    }
                    UnaryKind::Ln => {
                        let mut gx = g.clone();
                        gx.zip_mut_with(x, |gv, &xv| *gv /= xv);
                        gx
                    }
                    UnaryKind::Cos => {
                        let mut gx = g.clone();
                        gx.zip_mut_with(x, |gv, &xv| *gv *= -xv.sin());
                        gx
                    }
                    UnaryKind::Sin => {
                        let mut gx = g.clone();
                        gx.zip_mut_with(x, |gv, &xv| *gv *= xv.cos());
                        gx
                    }
                    UnaryKind::Recip => {
                        let mut gx = g.clone();
                        gx.zip_mut_with(x, |gv, &xv| *gv *= -1.0 / (xv * xv));
                        gx
                    }
                };
                Self::accum(by, *p, gx);
            }
            Op::Affine { p, a } => {
                if wants(*p) {
                    Self::accum(by, *p, g.mapv(|v| a * v));
                }
            }
            Op::Binary { a, b, kind } => match kind {
                BinaryKind::Add => {
                    if wants(*a) {
                        Self::accum(by, *a, g.clone());
                    }
                    if wants(*b) {
                        Self::accum(by, *b, g.clone());
                    }
                }
                BinaryKind::Sub => {
                    if wants(*a) {
                        Self::accum(by, *a, g.clone());
                    }
                    if wants(*b) {
                        Self::accum(by, *b, g.mapv(|v| -v));
                    }
                }
                BinaryKind::Mul => {
                    if wants(*a) {
                        Self::accum(by, *a, g * val(*b));
                    }
                    if wants(*b) {
                        Self::accum(by, *b, g * val(*a));
                    }
                }
                BinaryKind::Div => {
                    if wants(*a) {
                        Self::accum(by, *a, g / val(*b));
                    }
                    if wants(*b) {
                        let x = val(*a);
                        let y = val(*b);
                        Self::accum(by, *b, -(g * x) / (y * y));
                    }
                }
                BinaryKind::Matmul => {
                    if wants(*a) {
                        Self::accum(by, *a, g.dot(&val(*b).t()));
                    }
                    if wants(*b) {
                        Self::accum(by, *b, val(*a).t().dot(g));
                    }
                }
                BinaryKind::MatmulNt => {
                    if wants(*a) {
                        Self::accum(by, *a, g.dot(val(*b)));
                    }
                    if wants(*b) {
                        Self::accum(by, *b, g.t().dot(val(*a)));
                    }
                }
                BinaryKind::BroadcastRowAdd => {
                    if wants(*a) {
                        Self::accum(by, *a, g.clone());
                    }
                    if wants(*b) {
                        Self::accum(by, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                BinaryKind::MulColVec => {
                    if wants(*a) {
                        let v = val(*b);
                        let mut gx = g.clone();
                        for (r, mut row) in gx.axis_iter_mut(Axis(0)).enumerate() {
                            row.mapv_inplace(|u| u * v[[r, 0]]);
                        }
                        Self::accum(by, *a, gx);
                    }
                    if wants(*b) {
                        let x = val(*a);
                        let gv = (g * x).sum_axis(Axis(1)).insert_axis(Axis(1));
                        Self::accum(by, *b, gv);
                    }
                }
                BinaryKind::MulScalar => {
                    if wants(*a) {
                        let s = val(*b)[[0, 0]];
                        Self::accum(by, *a, g.mapv(|v| v * s));
                    }
                    if wants(*b) {
                        let s = (g * val(*a)).sum();
                        Self::accum(by, *b, Array2::from_elem((1, 1), s));
                    }
                }
                BinaryKind::DotSum => {
                    let s = g[[0, 0]];
                    if wants(*a) {
                        Self::accum(by, *a, val(*b).mapv(|v| v * s));
                    }
                    if wants(*b) {
                        Self::accum(by, *b, val(*a).mapv(|v| v * s));
                    }
                }
                BinaryKind::Max2 => {
                    let take_a = val(*a)[[0, 0]] >= val(*b)[[0, 0]];
                    if take_a && wants(*a) {
                        Self::accum(by, *a, g.clone());
                    }
                    if !take_a && wants(*b) {
                        Self::accum(by, *b, g.clone());
                    }
                }
            },
            Op::Linear { x, w, b } => {
                if wants(*x) {
                    Self::accum(by, *x, g.dot(val(*w)));
                }
                if wants(*w) {
                    Self::accum(by, *w, g.t().dot(val(*x)));
                }
                if let Some(bias) = b {
                    if wants(*bias) {
                        Self::accum(by, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
            }
            Op::SoftmaxRows { p } => {
                if !wants(*p) {
                    return;
                }
                let y = &self.nodes[i].value;
                let mut gx = g.clone();
                for (mut grow, yrow) in gx.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                    let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                    for (gv, &yv) in grow.iter_mut().zip(yrow.iter()) {
                        *gv = yv * (*gv - dot);
                    }
                }
                Self::accum(by, *p, gx);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xv = val(*x);
                let gm = val(*gamma);
                let n = xv.ncols() as f64;
                let mut gx = Array2::zeros(xv.dim());
                let mut ggamma = Array2::zeros((1, xv.ncols()));
                let mut gbeta = Array2::zeros((1, xv.ncols()));
                for (r, xrow) in xv.axis_iter(Axis(0)).enumerate() {
                    let mu = xrow.iter().sum::<f64>() / n;
                    let var = xrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let s = (var + LN_EPS).sqrt();
                    let xhat: Vec<f64> = xrow.iter().map(|v| (v - mu) / s).collect();
                    let grow = g.row(r);
                    let h: Vec<f64> = grow
                        .iter()
                        .enumerate()
                        .map(|(j, gv)| gv * gm[[0, j]])
                        .collect();
                    let mean_h = h.iter().sum::<f64>() / n;
                    let mean_hx = h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    for j in 0..xv.ncols() {
                        gx[[r, j]] = (h[j] - mean_h - xhat[j] * mean_hx) / s;
                        ggamma[[0, j]] += grow[j] * xhat[j];
                        gbeta[[0, j]] += grow[j];
                    }
                }
                if wants(*x) {
                    Self::accum(by, *x, gx);
                }
                if wants(*gamma) {
                    Self::accum(by, *gamma, ggamma);
                }
                if wants(*beta) {
                    Self::accum(by, *beta, gbeta);
                }
            }
            Op::MeanRows { p } => {
                if !wants(*p) {
                    return;
                }
                let m = val(*p).nrows();
                let scaled = g.mapv(|v| v / m as f64);
                let gx = scaled
                    .broadcast((m, g.ncols()))
                    .unwrap()
                    .to_owned();
                Self::accum(by, *p, gx);
            }
            Op::SumAll { p } => {
                if !wants(*p) {
                    return;
                }
                let s = g[[0, 0]];
                Self::accum(by, *p, Array2::from_elem(val(*p).dim(), s));
            }
            Op::SumCols { p } => {
                if !wants(*p) {
                    return;
                }
                let x = val(*p);
                let mut gx = Array2::zeros(x.dim());
                for (r, mut row) in gx.axis_iter_mut(Axis(0)).enumerate() {
                    row.fill(g[[r, 0]]);
                }
                Self::accum(by, *p, gx);
            }
            Op::SliceCols { p, from } => {
                if !wants(*p) {
                    return;
                }
                let x = val(*p);
                let mut gx = Array2::zeros(x.dim());
                gx.slice_mut(ndarray::s![.., *from..*from + g.ncols()])
                    .assign(g);
                Self::accum(by, *p, gx);
            }
            Op::ConcatCols { ps } => {
                let mut offset = 0;
                for &p in ps {
                    let w = val(p).ncols();
                    if wants(p) {
                        let gp = g.slice(ndarray::s![.., offset..offset + w]).to_owned();
                        Self::accum(by, p, gp);
                    }
                    offset += w;
                }
            }
            Op::Reshape { p } => {
                if !wants(*p) {
                    return;
                }
                let gx = g.clone().into_shape(val(*p).dim()).unwrap();
                Self::accum(by, *p, gx);
            }
            Op::Transpose { p } => {
                if wants(*p) {
                    Self::accum(by, *p, g.t().to_owned());
                }
            }
            Op::SortRow { p, perm } => {
                if !wants(*p) {
                    return;
                }
                let mut gx = Array2::zeros(val(*p).dim());
                for (j, &src) in perm.iter().enumerate() {
                    gx[[0, src]] += g[[0, j]];
                }
                Self::accum(by, *p, gx);
            }
            Op::ProjectRow { p, trace } => {
                if !wants(*p) {
                    return;
                }
                let gout: Vec<f64> = g.row(0).to_vec();
                let gin = crate::geometry::project_backward(trace, &gout);
                let gx = Array2::from_shape_vec((1, gin.len()), gin).unwrap();
                Self::accum(by, *p, gx);
            }
            Op::TopKst { p } => {
                if !wants(*p) {
                    return;
                }
                // straight-through: pretend the forward was softmax(pi)
                let x = val(*p);
                let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = x.row(0).iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let probs: Vec<f64> = exps.iter().map(|v| v / sum).collect();
                let dot: f64 = g
                    .row(0)
                    .iter()
                    .zip(&probs)
                    .map(|(gv, pv)| gv * pv)
                    .sum();
                let mut gx = Array2::zeros(x.dim());
                for j in 0..x.ncols() {
                    gx[[0, j]] = probs[j] * (g[[0, j]] - dot);
                }
                Self::accum(by, *p, gx);
            }
            Op::GatherCols { p, idx } => {
                if !wants(*p) {
                    return;
                }
                let mut gx = Array2::zeros(val(*p).dim());
                for (j, &src) in idx.iter().enumerate() {
                    gx[[0, src]] += g[[0, j]];
                }
                Self::accum(by, *p, gx);
            }
        }
    }
}

const LN_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
