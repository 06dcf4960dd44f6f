//! Reverse-mode differentiation over row-batched matrices.
//!
//! Every node holds a dense row-major `rows × cols` value computed eagerly when
//! the node is recorded. Network parameters are not nodes: they live in one
//! flat vector that the tape borrows, and [`Linear`] layers address it by
//! offset. `backward` returns (or accumulates) the gradient in that same flat
//! layout; adjoints of intermediate nodes are dropped.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("backward requires a scalar output, got a {rows}×{cols} node")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("node {node} references a later node {input}")]
    GraphCycle { node: usize, input: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length does not match {rows}×{cols}");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(n, 1, data)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }
}

/// A fully connected layer `y = W·x + b` stored in the flat parameter vector:
/// `W` row-major `n_out × n_in` at `weight`, then `b` at `bias`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn param_count(n_in: usize, n_out: usize) -> usize {
        n_in * n_out + n_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    Affine(NodeId, Linear),
    Concat(NodeId, NodeId),
    Relu(NodeId),
    Softplus(NodeId, f64),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    DivCol(NodeId, NodeId),
    AddConst(NodeId),
    MulConst(NodeId, Tensor),
    Scale(NodeId, f64),
    Column(NodeId, usize),
    RowDot(NodeId, NodeId),
    RowNorm(NodeId),
    Normalize(NodeId),
    SmoothL1(NodeId, f64),
    SegmentExclusiveCumsum(NodeId, usize),
    SegmentSum(NodeId, usize),
    Gather(NodeId, Vec<usize>),
    Sum(NodeId),
}

impl Op {
    fn inputs(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match self {
            Input | Param(_) => [None, None],
            Affine(a, _) | Relu(a) | Softplus(a, _) | Sin(a) | Cos(a) | Exp(a) | Sqrt(a) | Abs(a) | AddConst(a)
            | MulConst(a, _) | Scale(a, _) | Column(a, _) | RowNorm(a) | Normalize(a) | SmoothL1(a, _)
            | SegmentExclusiveCumsum(a, _) | SegmentSum(a, _) | Gather(a, _) | Sum(a) => [Some(*a), None],
            Concat(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MulCol(a, b) | DivCol(a, b)
            | RowDot(a, b) => [Some(*a), Some(*b)],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Smooth-L1 (Huber-style) penalty: `x²/(2δ)` for `|x| < δ`, `|x| − δ/2` beyond.
#[inline]
pub fn smooth_l1(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a < delta {
        0.5 * a * a / delta
    } else {
        a - 0.5 * delta
    }
}

#[inline]
fn smooth_l1_grad(x: f64, delta: f64) -> f64 {
    if x.abs() < delta {
        x / delta
    } else {
        x.signum()
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rows with a norm below this are treated as zero by `normalize`/`row_norm`.
const TINY_NORM: f64 = 1e-300;

/// Append-only computation record. Borrowing the parameter vector keeps the
/// recorded values consistent with the parameters the gradient is taken at.
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// A `rows × cols` block of the parameter vector starting at `offset`,
    /// exposed as a differentiable leaf.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> NodeId {
        let t = Tensor::new(rows, cols, self.params[offset..offset + rows * cols].to_vec());
        self.push(t, Op::Param(offset))
    }

    pub fn affine(&mut self, x: NodeId, layer: Linear) -> NodeId {
        let xv = self.v(x);
        assert_eq!(xv.cols, layer.n_in, "affine input width mismatch");
        let n = xv.rows;
        let mut out = vec![0.0; n * layer.n_out];
        let bias = &self.params[layer.bias..layer.bias + layer.n_out];
        for row in out.chunks_exact_mut(layer.n_out) {
            row.copy_from_slice(bias);
        }
        let w = &self.params[layer.weight..layer.weight + layer.n_in * layer.n_out];
        // out (n×o) += x (n×i) · Wᵀ (i×o)
        unsafe {
            matrixmultiply::dgemm(
                n,
                layer.n_in,
                layer.n_out,
                1.0,
                xv.data.as_ptr(),
                layer.n_in as isize,
                1,
                w.as_ptr(),
                1,
                layer.n_in as isize,
                1.0,
                out.as_mut_ptr(),
                layer.n_out as isize,
                1,
            );
        }
        self.push(Tensor::new(n, layer.n_out, out), Op::Affine(x, layer))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.v(a), self.v(b));
        assert_eq!(av.rows, bv.rows, "concat row mismatch");
        let cols = av.cols + bv.cols;
        let mut data = Vec::with_capacity(av.rows * cols);
        for r in 0..av.rows {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let t = Tensor::new(av.rows, cols, data);
        self.push(t, Op::Concat(a, b))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.v(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    /// `scale · softplus(x)`.
    pub fn softplus(&mut self, x: NodeId, scale: f64) -> NodeId {
        let t = self.v(x).map(|v| scale * softplus(v));
        self.push(t, Op::Softplus(x, scale))
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        let t = self.v(x).map(f64::sin);
        self.push(t, Op::Sin(x))
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        let t = self.v(x).map(f64::cos);
        self.push(t, Op::Cos(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let t = self.v(x).map(f64::exp);
        self.push(t, Op::Exp(x))
    }

    /// Square root clamped at zero; the derivative is zero for non-positive inputs.
    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let t = self.v(x).map(|v| v.max(0.0).sqrt());
        self.push(t, Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let t = self.v(x).map(f64::abs);
        self.push(t, Op::Abs(x))
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.v(a), self.v(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        Tensor::new(
            av.rows,
            av.cols,
            av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = self.zip(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = self.zip(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = self.zip(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = self.zip(a, b, |x, y| x / y);
        self.push(t, Op::Div(a, b))
    }

    fn zip_col(&self, a: NodeId, c: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, cv) = (self.v(a), self.v(c));
        assert_eq!((av.rows, 1), cv.shape(), "column broadcast shape mismatch");
        let mut data = Vec::with_capacity(av.data.len());
        for r in 0..av.rows {
            let s = cv.data[r];
            data.extend(av.row(r).iter().map(|&x| f(x, s)));
        }
        Tensor::new(av.rows, av.cols, data)
    }

    /// Multiplies each row of `a` by the matching entry of column `c`.
    pub fn mul_col(&mut self, a: NodeId, c: NodeId) -> NodeId {
        let t = self.zip_col(a, c, |x, s| x * s);
        self.push(t, Op::MulCol(a, c))
    }

    /// Divides each row of `a` by the matching entry of column `c`.
    pub fn div_col(&mut self, a: NodeId, c: NodeId) -> NodeId {
        let t = self.zip_col(a, c, |x, s| x / s);
        self.push(t, Op::DivCol(a, c))
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, x: NodeId, c: &Tensor) -> NodeId {
        let xv = self.v(x);
        assert_eq!(xv.shape(), c.shape(), "add_const shape mismatch");
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().zip(&c.data).map(|(a, b)| a + b).collect());
        self.push(t, Op::AddConst(x))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let t = self.v(x).map(|v| v + c);
        self.push(t, Op::AddConst(x))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: NodeId, c: Tensor) -> NodeId {
        let xv = self.v(x);
        assert_eq!(xv.shape(), c.shape(), "mul_const shape mismatch");
        let t = Tensor::new(xv.rows, xv.cols, xv.data.iter().zip(&c.data).map(|(a, b)| a * b).collect());
        self.push(t, Op::MulConst(x, c))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let t = self.v(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s))
    }

    pub fn column(&mut self, x: NodeId, j: usize) -> NodeId {
        let xv = self.v(x);
        assert!(j < xv.cols);
        let t = Tensor::column((0..xv.rows).map(|r| xv.get(r, j)).collect());
        self.push(t, Op::Column(x, j))
    }

    /// Row-wise dot product, `n×k · n×k → n×1`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.v(a), self.v(b));
        assert_eq!(av.shape(), bv.shape(), "row_dot shape mismatch");
        let t = Tensor::column(
            (0..av.rows)
                .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
                .collect(),
        );
        self.push(t, Op::RowDot(a, b))
    }

    /// Euclidean norm of each row; zero rows have zero norm and zero gradient.
    pub fn row_norm(&mut self, x: NodeId) -> NodeId {
        let xv = self.v(x);
        let t = Tensor::column((0..xv.rows).map(|r| row_len(xv.row(r))).collect());
        self.push(t, Op::RowNorm(x))
    }

    /// Scales each row to unit length; zero rows stay zero.
    pub fn normalize(&mut self, x: NodeId) -> NodeId {
        let xv = self.v(x);
        let mut data = Vec::with_capacity(xv.data.len());
        for r in 0..xv.rows {
            let row = xv.row(r);
            let n = row_len(row);
            if n > TINY_NORM {
                data.extend(row.iter().map(|v| v / n));
            } else {
                data.extend(std::iter::repeat_n(0.0, row.len()));
            }
        }
        let t = Tensor::new(xv.rows, xv.cols, data);
        self.push(t, Op::Normalize(x))
    }

    pub fn smooth_l1(&mut self, x: NodeId, delta: f64) -> NodeId {
        let t = self.v(x).map(|v| smooth_l1(v, delta));
        self.push(t, Op::SmoothL1(x, delta))
    }

    /// Exclusive prefix sum of an `n×1` column restarted every `segment` rows.
    pub fn segment_exclusive_cumsum(&mut self, x: NodeId, segment: usize) -> NodeId {
        let xv = self.v(x);
        assert_eq!(xv.cols, 1);
        assert!(segment > 0 && xv.rows % segment == 0, "rows must be a multiple of the segment length");
        let mut data = Vec::with_capacity(xv.rows);
        for seg in xv.data.chunks_exact(segment) {
            let mut acc = 0.0;
            for &v in seg {
                data.push(acc);
                acc += v;
            }
        }
        let t = Tensor::column(data);
        self.push(t, Op::SegmentExclusiveCumsum(x, segment))
    }

    /// Sums consecutive groups of `segment` rows, `n×k → (n/segment)×k`.
    pub fn segment_sum(&mut self, x: NodeId, segment: usize) -> NodeId {
        let xv = self.v(x);
        assert!(segment > 0 && xv.rows % segment == 0, "rows must be a multiple of the segment length");
        let groups = xv.rows / segment;
        let mut data = vec![0.0; groups * xv.cols];
        for r in 0..xv.rows {
            let out = &mut data[(r / segment) * xv.cols..(r / segment + 1) * xv.cols];
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let t = Tensor::new(groups, xv.cols, data);
        self.push(t, Op::SegmentSum(x, segment))
    }

    /// Selects rows by index (indices may repeat).
    pub fn gather(&mut self, x: NodeId, rows: Vec<usize>) -> NodeId {
        let xv = self.v(x);
        let mut data = Vec::with_capacity(rows.len() * xv.cols);
        for &r in &rows {
            data.extend_from_slice(xv.row(r));
        }
        let t = Tensor::new(rows.len(), xv.cols, data);
        self.push(t, Op::Gather(x, rows))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let t = Tensor::scalar(self.v(x).data.iter().sum());
        self.push(t, Op::Sum(x))
    }

    /// Gradient of a scalar node with respect to the parameter vector.
    pub fn backward(&self, output: NodeId) -> Result<Vec<f64>, AutodiffError> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(&[(output, 1.0)], &mut grad)?;
        Ok(grad)
    }

    /// Accumulates `Σ seedₖ · ∂outputₖ/∂θ` into `grad`.
    pub fn backward_into(&self, seeds: &[(NodeId, f64)], grad: &mut [f64]) -> Result<(), AutodiffError> {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer has the wrong length");
        let Some(top) = seeds.iter().map(|(id, _)| id.0).max() else {
            return Ok(());
        };
        let mut adj: Vec<Option<Vec<f64>>> = (0..=top).map(|_| None).collect();
        for &(id, s) in seeds {
            let v = &self.nodes[id.0].value;
            if v.data.len() != 1 {
                return Err(AutodiffError::NonScalarOutput {
                    rows: v.rows,
                    cols: v.cols,
                });
            }
            accumulate(&mut adj[id.0], &[s]);
        }
        for i in (0..=top).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            for input in node.op.inputs().into_iter().flatten() {
                if input.0 >= i {
                    return Err(AutodiffError::GraphCycle { node: i, input: input.0 });
                }
            }
            self.propagate(node, &g, &mut adj, grad);
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>], grad: &mut [f64]) {
        use Op::*;
        let out = &node.value;
        match &node.op {
            Input => {}
            Param(offset) => {
                for (p, v) in grad[*offset..*offset + g.len()].iter_mut().zip(g) {
                    *p += v;
                }
            }
            Affine(x, layer) => {
                let xv = self.v(*x);
                let n = xv.rows;
                let (ni, no) = (layer.n_in, layer.n_out);
                // dW (o×i) += gᵀ (o×n) · x (n×i)
                unsafe {
                    matrixmultiply::dgemm(
                        no,
                        n,
                        ni,
                        1.0,
                        g.as_ptr(),
                        1,
                        no as isize,
                        xv.data.as_ptr(),
                        ni as isize,
                        1,
                        1.0,
                        grad[layer.weight..].as_mut_ptr(),
                        ni as isize,
                        1,
                    );
                }
                let gb = &mut grad[layer.bias..layer.bias + no];
                for row in g.chunks_exact(no) {
                    for (b, v) in gb.iter_mut().zip(row) {
                        *b += v;
                    }
                }
                if matches!(self.nodes[x.0].op, Input) {
                    return;
                }
                let w = &self.params[layer.weight..layer.weight + ni * no];
                let mut dx = vec![0.0; n * ni];
                // dx (n×i) = g (n×o) · W (o×i)
                unsafe {
                    matrixmultiply::dgemm(
                        n,
                        no,
                        ni,
                        1.0,
                        g.as_ptr(),
                        no as isize,
                        1,
                        w.as_ptr(),
                        ni as isize,
                        1,
                        0.0,
                        dx.as_mut_ptr(),
                        ni as isize,
                        1,
                    );
                }
                accumulate_owned(&mut adj[x.0], dx);
            }
            Concat(a, b) => {
                let (ca, cb) = (self.v(*a).cols, self.v(*b).cols);
                let mut ga = Vec::with_capacity(out.rows * ca);
                let mut gb = Vec::with_capacity(out.rows * cb);
                for row in g.chunks_exact(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                accumulate_owned(&mut adj[a.0], ga);
                accumulate_owned(&mut adj[b.0], gb);
            }
            Relu(x) => {
                let xv = self.v(*x);
                let d = g.iter().zip(&xv.data).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                accumulate_owned(&mut adj[x.0], d);
            }
            Softplus(x, s) => {
                let xv = self.v(*x);
                let d = g.iter().zip(&xv.data).map(|(g, &x)| g * s * sigmoid(x)).collect();
                accumulate_owned(&mut adj[x.0], d);
            }
            Sin(x) => {
                let d = g.iter().zip(&self.v(*x).data).map(|(g, x)| g * x.cos()).collect();
                accumulate_owned(&mut adj[x.0], d);
            }
            Cos(x) => {
                let d = g.iter().zip(&self.v(*x).data).map(|(g, x)| -g * x.sin()).collect();
                accumulate_owned(&mut adj[x.0], d);
            }
            Exp(x) => {
                let d = g.iter().zip(&out.data).map(|(g, y)| g * y).collect();
                accumulate_owned(&mut adj[x.0], d);
            }
            Sqrt(x) => {
                let d = g
                    .iter()
                    .zip(&out.data)
                    .map(|(g, &y)| if y > 0.0 { 0.5 * g / y } else { 0.0 })
                    .collect();
                accumulate_owned(&mut adj[x.0], d);
            }
            Abs(x) => {
                let d = g
                    .iter()
                    .zip(&self.v(*x).data)
                    .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                    .collect();
                accumulate_owned(&mut adj[x.0], d);
            }
            Add(a, b) => {
                accumulate(&mut adj[a.0], g);
                accumulate(&mut adj[b.0], g);
            }
            Sub(a, b) => {
                accumulate(&mut adj[a.0], g);
                accumulate_owned(&mut adj[b.0], g.iter().map(|v| -v).collect());
            }
            Mul(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                accumulate_owned(&mut adj[a.0], g.iter().zip(&bv.data).map(|(g, y)| g * y).collect());
                accumulate_owned(&mut adj[b.0], g.iter().zip(&av.data).map(|(g, x)| g * x).collect());
            }
            Div(a, b) => {
                let bv = self.v(*b);
                accumulate_owned(&mut adj[a.0], g.iter().zip(&bv.data).map(|(g, y)| g / y).collect());
                let db = g
                    .iter()
                    .zip(&out.data)
                    .zip(&bv.data)
                    .map(|((g, q), y)| -g * q / y)
                    .collect();
                accumulate_owned(&mut adj[b.0], db);
            }
            MulCol(a, c) => {
                let (av, cv) = (self.v(*a), self.v(*c));
                let k = av.cols;
                let mut da = Vec::with_capacity(g.len());
                let mut dc = Vec::with_capacity(av.rows);
                for r in 0..av.rows {
                    let gr = &g[r * k..(r + 1) * k];
                    let s = cv.data[r];
                    da.extend(gr.iter().map(|g| g * s));
                    dc.push(gr.iter().zip(av.row(r)).map(|(g, x)| g * x).sum());
                }
                accumulate_owned(&mut adj[a.0], da);
                accumulate_owned(&mut adj[c.0], dc);
            }
            DivCol(a, c) => {
                let cv = self.v(*c);
                let k = out.cols;
                let mut da = Vec::with_capacity(g.len());
                let mut dc = Vec::with_capacity(out.rows);
                for r in 0..out.rows {
                    let gr = &g[r * k..(r + 1) * k];
                    let s = cv.data[r];
                    da.extend(gr.iter().map(|g| g / s));
                    dc.push(-gr.iter().zip(out.row(r)).map(|(g, q)| g * q).sum::<f64>() / s);
                }
                accumulate_owned(&mut adj[a.0], da);
                accumulate_owned(&mut adj[c.0], dc);
            }
            AddConst(x) => accumulate(&mut adj[x.0], g),
            MulConst(x, c) => {
                accumulate_owned(&mut adj[x.0], g.iter().zip(&c.data).map(|(g, c)| g * c).collect());
            }
            Scale(x, s) => accumulate_owned(&mut adj[x.0], g.iter().map(|g| g * s).collect()),
            Column(x, j) => {
                let xv = self.v(*x);
                let mut d = vec![0.0; xv.data.len()];
                for (r, gv) in g.iter().enumerate() {
                    d[r * xv.cols + j] = *gv;
                }
                accumulate_owned(&mut adj[x.0], d);
            }
            RowDot(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let k = av.cols;
                let mut da = Vec::with_capacity(av.data.len());
                let mut db = Vec::with_capacity(bv.data.len());
                for r in 0..av.rows {
                    da.extend(bv.row(r).iter().map(|y| g[r] * y));
                    db.extend(av.row(r).iter().map(|x| g[r] * x));
                }
                debug_assert_eq!(da.len(), av.rows * k);
                accumulate_owned(&mut adj[a.0], da);
                accumulate_owned(&mut adj[b.0], db);
            }
            RowNorm(x) => {
                let xv = self.v(*x);
                let mut d = Vec::with_capacity(xv.data.len());
                for r in 0..xv.rows {
                    let n = out.data[r];
                    if n > TINY_NORM {
                        d.extend(xv.row(r).iter().map(|v| g[r] * v / n));
                    } else {
                        d.extend(std::iter::repeat_n(0.0, xv.cols));
                    }
                }
                accumulate_owned(&mut adj[x.0], d);
            }
            Normalize(x) => {
                // d(v/|v|) = (I − v̂v̂ᵀ)/|v|
                let xv = self.v(*x);
                let k = xv.cols;
                let mut d = Vec::with_capacity(xv.data.len());
                for r in 0..xv.rows {
                    let n = row_len(xv.row(r));
                    let gr = &g[r * k..(r + 1) * k];
                    if n > TINY_NORM {
                        let u = out.row(r);
                        let gu: f64 = gr.iter().zip(u).map(|(a, b)| a * b).sum();
                        d.extend(gr.iter().zip(u).map(|(g, u)| (g - gu * u) / n));
                    } else {
                        d.extend(std::iter::repeat_n(0.0, k));
                    }
                }
                accumulate_owned(&mut adj[x.0], d);
            }
            SmoothL1(x, delta) => {
                let d = g
                    .iter()
                    .zip(&self.v(*x).data)
                    .map(|(g, &x)| g * smooth_l1_grad(x, *delta))
                    .collect();
                accumulate_owned(&mut adj[x.0], d);
            }
            SegmentExclusiveCumsum(x, seg) => {
                // adjoint of an exclusive prefix sum is an exclusive suffix sum
                let mut d = vec![0.0; g.len()];
                for (gs, ds) in g.chunks_exact(*seg).zip(d.chunks_exact_mut(*seg)) {
                    let mut acc = 0.0;
                    for i in (0..*seg).rev() {
                        ds[i] = acc;
                        acc += gs[i];
                    }
                }
                accumulate_owned(&mut adj[x.0], d);
            }
            SegmentSum(x, seg) => {
                let xv = self.v(*x);
                let k = xv.cols;
                let mut d = Vec::with_capacity(xv.data.len());
                for r in 0..xv.rows {
                    let q = r / seg;
                    d.extend_from_slice(&g[q * k..(q + 1) * k]);
                }
                accumulate_owned(&mut adj[x.0], d);
            }
            Gather(x, rows) => {
                let xv = self.v(*x);
                let k = xv.cols;
                let mut d = vec![0.0; xv.data.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..k {
                        d[r * k + c] += g[i * k + c];
                    }
                }
                accumulate_owned(&mut adj[x.0], d);
            }
            Sum(x) => {
                let n = self.v(*x).data.len();
                accumulate_owned(&mut adj[x.0], vec![g[0]; n]);
            }
        }
    }
}

#[inline]
fn row_len(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of `Σ cᵢ·f(θ)ᵢ` for random weights `c`.
    fn check(params: &[f64], f: impl Fn(&mut Tape) -> NodeId) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probe = {
            let mut t = Tape::new(params);
            let out = f(&mut t);
            t.value(out).data.len()
        };
        let weights: Vec<f64> = (0..probe).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eval = |p: &[f64]| {
            let mut t = Tape::new(p);
            let out = f(&mut t);
            t.value(out).data.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut tape = Tape::new(params);
        let out = f(&mut tape);
        let shape = tape.value(out).shape();
        let weighted = tape.mul_const(out, Tensor::new(shape.0, shape.1, weights.clone()));
        let total = tape.sum(weighted);
        let grad = tape.backward(total).unwrap();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut p = params.to_vec();
            p[i] += h;
            let up = eval(&p);
            p[i] -= 2.0 * h;
            let down = eval(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-6, "parameter {i}: tape {} vs differences {fd}", grad[i]);
        }
    }

    fn values(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                // stay clear of the kinks of relu/abs/smooth-L1
                loop {
                    let v: f64 = rng.random_range(lo..hi);
                    if v.abs() > 0.05 && (v.abs() - 0.5).abs() > 0.05 {
                        return v;
                    }
                }
            })
            .collect()
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let p = [3.0];
        let mut t = Tape::new(&p);
        let x = t.param(0, 1, 1);
        let y = t.mul(x, x);
        assert_eq!(t.backward(y).unwrap(), vec![6.0]);
    }

    #[test]
    fn unary_primitives_match_differences() {
        let p = values(12, -2.0, 2.0, 1);
        let pos = values(12, 0.1, 3.0, 2);
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.relu(x)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.softplus(x, 2.5)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.sin(x)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.cos(x)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.exp(x)
        });
        check(&pos, |t| {
            let x = t.param(0, 4, 3);
            t.sqrt(x)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.abs(x)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.smooth_l1(x, 0.5)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            let s = t.scale(x, -1.7);
            let c = t.add_scalar(s, 0.3);
            t.add_const(c, &Tensor::new(4, 3, (0..12).map(|i| i as f64).collect()))
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.column(x, 1)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.row_norm(x)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.normalize(x)
        });
        check(&p, |t| {
            let x = t.param(0, 12, 1);
            t.segment_exclusive_cumsum(x, 4)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.segment_sum(x, 2)
        });
        check(&p, |t| {
            let x = t.param(0, 4, 3);
            t.gather(x, vec![3, 0, 3, 1])
        });
    }

    #[test]
    fn binary_primitives_match_differences() {
        let mut p = values(12, -2.0, 2.0, 3);
        p.extend(values(12, 0.5, 2.0, 4));
        p.extend(values(4, 0.5, 2.0, 5));
        let pair = |t: &mut Tape| (t.param(0, 4, 3), t.param(12, 4, 3));
        check(&p, |t| {
            let (a, b) = pair(t);
            t.add(a, b)
        });
        check(&p, |t| {
            let (a, b) = pair(t);
            t.sub(a, b)
        });
        check(&p, |t| {
            let (a, b) = pair(t);
            t.mul(a, b)
        });
        check(&p, |t| {
            let (a, b) = pair(t);
            t.div(a, b)
        });
        check(&p, |t| {
            let (a, b) = pair(t);
            t.concat(a, b)
        });
        check(&p, |t| {
            let (a, b) = pair(t);
            t.row_dot(a, b)
        });
        check(&p, |t| {
            let a = t.param(0, 4, 3);
            let c = t.param(24, 4, 1);
            t.mul_col(a, c)
        });
        check(&p, |t| {
            let a = t.param(0, 4, 3);
            let c = t.param(24, 4, 1);
            t.div_col(a, c)
        });
    }

    #[test]
    fn affine_matches_differences() {
        // x: 5×3 at offset 0, W: 2×3 at 15, b: 2 at 21
        let p = values(23, -1.0, 1.0, 6);
        let layer = Linear {
            weight: 15,
            bias: 21,
            n_in: 3,
            n_out: 2,
        };
        check(&p, |t| {
            let x = t.param(0, 5, 3);
            let y = t.affine(x, layer);
            t.sin(y)
        });
        check(&p, |t| {
            let x = t.input(Tensor::new(5, 3, (0..15).map(|i| 0.1 * i as f64).collect()));
            t.affine(x, layer)
        });
    }

    #[test]
    fn normalize_jacobian_at_unit_x() {
        // (I − v̂v̂ᵀ)/|v| at v = [1,0,0] annihilates the x component
        let p = [1.0, 0.0, 0.0];
        for (k, expect) in [(0, [0.0, 0.0, 0.0]), (1, [0.0, 1.0, 0.0]), (2, [0.0, 0.0, 1.0])] {
            let mut t = Tape::new(&p);
            let v = t.param(0, 1, 3);
            let n = t.normalize(v);
            let c = t.column(n, k);
            assert_eq!(t.backward(c).unwrap(), expect.to_vec());
        }
        let q = [2.0, 0.0, 0.0];
        let mut t = Tape::new(&q);
        let v = t.param(0, 1, 3);
        let n = t.normalize(v);
        let c = t.column(n, 1);
        assert_eq!(t.backward(c).unwrap(), vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn backward_is_linear_in_the_outputs() {
        let p = values(8, -1.0, 1.0, 7);
        let mut t = Tape::new(&p);
        let x = t.param(0, 4, 2);
        let s = t.sin(x);
        let r = t.row_norm(s);
        let rows: Vec<NodeId> = (0..4).map(|i| t.gather(r, vec![i])).collect();
        let total = t.sum(r);
        let whole = t.backward(total).unwrap();
        let mut parts = vec![0.0; p.len()];
        for &row in &rows {
            for (a, b) in parts.iter_mut().zip(t.backward(row).unwrap()) {
                *a += b;
            }
        }
        for (a, b) in whole.iter().zip(&parts) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut seeded = vec![0.0; p.len()];
        let seeds: Vec<(NodeId, f64)> = rows.iter().map(|&r| (r, 1.0)).collect();
        t.backward_into(&seeds, &mut seeded).unwrap();
        for (a, b) in whole.iter().zip(&seeded) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let p = [1.0, 2.0];
        let mut t = Tape::new(&p);
        let x = t.param(0, 2, 1);
        assert!(matches!(t.backward(x), Err(AutodiffError::NonScalarOutput { rows: 2, cols: 1 })));
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.0, 0.01), 0.0);
        assert!((smooth_l1(0.005, 0.01) - 0.005f64.powi(2) / 0.02).abs() < 1e-18);
        assert!((smooth_l1(3.0, 0.01) - (3.0 - 0.005)).abs() < 1e-15);
        // continuous at the knee
        assert!((smooth_l1(0.01 - 1e-12, 0.01) - smooth_l1(0.01, 0.01)).abs() < 1e-11);
    }
}
