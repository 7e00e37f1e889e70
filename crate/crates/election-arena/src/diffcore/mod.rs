//! Reverse-mode differentiable computation substrate.
//!
//! A `Tape` is a Wengert list: every operation appends a node holding its
//! forward value, and `backward` walks the list in reverse to accumulate
//! gradients. Inputs of a node always precede it, so reverse index order is
//! a valid topological order and each node is visited exactly once.
//!
//! All arithmetic is in f64. Tensors are rank-1 or rank-2; a scalar is a
//! length-1 vector.

mod adam;
pub mod gradcheck;
mod gumbel;
mod params;

pub use adam::{adam_step, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gumbel::{gumbel_sample, gumbel_softmax, GumbelNoise, Temperature};
pub use params::{Binder, ParamEntry, ParamStore, TensorData};

/// Shape of a tape tensor. Scalars are `Vector(1)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        match *self {
            Shape::Vector(_) => 1,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(_, c) => c,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }
}

/// Handle to a node on a `Tape`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Softplus(Var),
    Recip(Var),
    Scale(Var, f64),
    AddConst(Var),
    BMul(Var, Var),
    Sum(Var),
    MatMul(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Index(Var, usize),
    SliceRows(Var, usize, usize),
    Softmax(Var),
    StraightThrough(Var),
    ColMaxPool(Var),
}

struct Node {
    op: Op,
    shape: Shape,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// Computation tape. Single-threaded per episode.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Shape, values: Vec<f64>) -> Var {
        debug_assert_eq!(shape.len(), values.len());
        self.nodes.push(Node {
            op,
            shape,
            values,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: Shape, values: Vec<f64>) -> Var {
        assert_eq!(
            shape.len(),
            values.len(),
            "leaf value count must equal product of extents"
        );
        self.push(Op::Leaf, shape, values)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, Shape::Vector(1), vec![v])
    }

    pub fn constant_vec(&mut self, vals: &[f64]) -> Var {
        self.push(Op::Leaf, Shape::Vector(vals.len()), vals.to_vec())
    }

    pub fn zeros(&mut self, shape: Shape) -> Var {
        let n = shape.len();
        self.push(Op::Leaf, shape, vec![0.0; n])
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    /// Scalar value of a length-1 tensor.
    pub fn value(&self, v: Var) -> f64 {
        assert_eq!(self.nodes[v.0].values.len(), 1, "expected a scalar");
        self.nodes[v.0].values[0]
    }

    /// Gradient populated by the most recent `backward`, if this node was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), self.shape(a), vals)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x - y)
            .collect();
        self.push(Op::Sub(a, b), self.shape(a), vals)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), self.shape(a), vals)
    }

    pub fn add_n(&mut self, vs: &[Var]) -> Var {
        assert!(!vs.is_empty(), "add_n: empty input");
        let shape = self.shape(vs[0]);
        let mut vals = vec![0.0; shape.len()];
        for &v in vs {
            assert_eq!(self.shape(v), shape, "add_n: shape mismatch");
            for (o, x) in vals.iter_mut().zip(&self.nodes[v.0].values) {
                *o += x;
            }
        }
        self.push(Op::AddN(vs.to_vec()), shape, vals)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| -x).collect();
        self.push(Op::Neg(a), self.shape(a), vals)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| stable_sigmoid(x))
            .collect();
        self.push(Op::Sigmoid(a), self.shape(a), vals)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), self.shape(a), vals)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp_m1() })
            .collect();
        self.push(Op::Elu(a), self.shape(a), vals)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| stable_softplus(x))
            .collect();
        self.push(Op::Softplus(a), self.shape(a), vals)
    }

    /// Elementwise reciprocal; used for dividing by a learned temperature.
    pub fn recip(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| 1.0 / x).collect();
        self.push(Op::Recip(a), self.shape(a), vals)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), self.shape(a), vals)
    }

    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Var {
        assert_eq!(
            self.shape(a).len(),
            c.len(),
            "add_const: length mismatch"
        );
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(c)
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::AddConst(a), self.shape(a), vals)
    }

    /// Broadcast multiply by a scalar tensor.
    pub fn bmul(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.shape(s).len(), 1, "bmul: rhs must be scalar");
        let sv = self.nodes[s.0].values[0];
        let vals: Vec<f64> = self.nodes[x.0].values.iter().map(|v| v * sv).collect();
        self.push(Op::BMul(x, s), self.shape(x), vals)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.nodes[a.0].values.iter().sum();
        self.push(Op::Sum(a), Shape::Vector(1), vec![total])
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = match self.shape(a) {
            Shape::Matrix(m, k) => (m, k),
            _ => panic!("matmul: lhs must be a matrix"),
        };
        let (k2, n) = match self.shape(b) {
            Shape::Matrix(k2, n) => (k2, n),
            _ => panic!("matmul: rhs must be a matrix"),
        };
        assert_eq!(k, k2, "matmul: inner dimensions disagree");
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let x = av[i * k + l];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bb) in orow.iter_mut().zip(brow) {
                    *o += x * bb;
                }
            }
        }
        self.push(Op::MatMul(a, b), Shape::Matrix(m, n), out)
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Var {
        let (m, k) = match self.shape(a) {
            Shape::Matrix(m, k) => (m, k),
            _ => panic!("matvec: lhs must be a matrix"),
        };
        assert_eq!(
            self.shape(x),
            Shape::Vector(k),
            "matvec: dimension mismatch"
        );
        let av = &self.nodes[a.0].values;
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut acc = 0.0;
            let arow = &av[i * k..(i + 1) * k];
            for (aa, xx) in arow.iter().zip(xv) {
                acc += aa * xx;
            }
            out[i] = acc;
        }
        self.push(Op::MatVec(a, x), Shape::Vector(m), out)
    }

    pub fn vecmat(&mut self, x: Var, a: Var) -> Var {
        let (m, k) = match self.shape(a) {
            Shape::Matrix(m, k) => (m, k),
            _ => panic!("vecmat: rhs must be a matrix"),
        };
        assert_eq!(
            self.shape(x),
            Shape::Vector(m),
            "vecmat: dimension mismatch"
        );
        let av = &self.nodes[a.0].values;
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; k];
        for i in 0..m {
            let c = xv[i];
            if c == 0.0 {
                continue;
            }
            let arow = &av[i * k..(i + 1) * k];
            for (o, aa) in out.iter_mut().zip(arow) {
                *o += c * aa;
            }
        }
        self.push(Op::VecMat(x, a), Shape::Vector(k), out)
    }

    // ---- shape ----

    pub fn concat(&mut self, vs: &[Var]) -> Var {
        assert!(!vs.is_empty(), "concat: empty input");
        let mut vals = Vec::new();
        for &v in vs {
            vals.extend_from_slice(&self.nodes[v.0].values);
        }
        let n = vals.len();
        self.push(Op::Concat(vs.to_vec()), Shape::Vector(n), vals)
    }

    pub fn stack_rows(&mut self, vs: &[Var]) -> Var {
        assert!(!vs.is_empty(), "stack_rows: empty input");
        let d = self.shape(vs[0]).len();
        let mut vals = Vec::with_capacity(vs.len() * d);
        for &v in vs {
            assert_eq!(self.shape(v).len(), d, "stack_rows: row length mismatch");
            vals.extend_from_slice(&self.nodes[v.0].values);
        }
        self.push(Op::StackRows(vs.to_vec()), Shape::Matrix(vs.len(), d), vals)
    }

    pub fn row(&mut self, m: Var, i: usize) -> Var {
        let (r, c) = match self.shape(m) {
            Shape::Matrix(r, c) => (r, c),
            _ => panic!("row: input must be a matrix"),
        };
        assert!(i < r, "row: index out of range");
        let vals = self.nodes[m.0].values[i * c..(i + 1) * c].to_vec();
        self.push(Op::Row(m, i), Shape::Vector(c), vals)
    }

    pub fn index(&mut self, v: Var, i: usize) -> Var {
        assert!(i < self.shape(v).len(), "index: out of range");
        let val = self.nodes[v.0].values[i];
        self.push(Op::Index(v, i), Shape::Vector(1), vec![val])
    }

    pub fn slice_rows(&mut self, m: Var, start: usize, count: usize) -> Var {
        let (r, c) = match self.shape(m) {
            Shape::Matrix(r, c) => (r, c),
            _ => panic!("slice_rows: input must be a matrix"),
        };
        assert!(start + count <= r, "slice_rows: out of range");
        let vals = self.nodes[m.0].values[start * c..(start + count) * c].to_vec();
        self.push(
            Op::SliceRows(m, start, count),
            Shape::Matrix(count, c),
            vals,
        )
    }

    // ---- categorical ----

    /// Softmax over a vector, stabilized by subtracting the max before
    /// exponentiation.
    pub fn softmax(&mut self, z: Var) -> Var {
        let zv = &self.nodes[z.0].values;
        assert!(zv.len() >= 2, "softmax: need at least two categories");
        let m = zv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = zv.iter().map(|&x| (x - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        let vals: Vec<f64> = exps.iter().map(|e| e / s).collect();
        self.push(Op::Softmax(z), self.shape(z), vals)
    }

    /// Forward: exact one-hot at the smallest argmax index. Backward:
    /// incoming gradient passed through unchanged.
    pub fn straight_through(&mut self, y: Var) -> Var {
        let k = argmax(&self.nodes[y.0].values);
        let mut vals = vec![0.0; self.shape(y).len()];
        vals[k] = 1.0;
        self.push(Op::StraightThrough(y), self.shape(y), vals)
    }

    /// Column-wise max over a matrix. Gradient routes to the smallest-index
    /// argmax row of each column.
    pub fn col_max_pool(&mut self, m: Var) -> Var {
        let (r, c) = match self.shape(m) {
            Shape::Matrix(r, c) => (r, c),
            _ => panic!("col_max_pool: input must be a matrix"),
        };
        assert!(r >= 1, "col_max_pool: empty input");
        let mv = &self.nodes[m.0].values;
        let mut out = vec![f64::NEG_INFINITY; c];
        for i in 0..r {
            for j in 0..c {
                let x = mv[i * c + j];
                if x > out[j] {
                    out[j] = x;
                }
            }
        }
        self.push(Op::ColMaxPool(m), Shape::Vector(c), out)
    }

    // ---- backward ----

    /// Populates gradients of `root` w.r.t. every reachable node. `root`
    /// must be scalar. Previous gradients are cleared.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.nodes[root.0].values.len(),
            1,
            "backward: root must be scalar"
        );
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(g) = node.grad.as_ref() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(before, *a, 1.0, g);
                    axpy(before, *b, 1.0, g);
                }
                Op::Sub(a, b) => {
                    axpy(before, *a, 1.0, g);
                    axpy(before, *b, -1.0, g);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    // inputs may alias (x*x); accumulate sequentially
                    let bv: Vec<f64> = before[b.0].values.clone();
                    let av: Vec<f64> = before[a.0].values.clone();
                    {
                        let ga = grad_mut(&mut before[a.0]);
                        for ((o, gg), y) in ga.iter_mut().zip(g).zip(&bv) {
                            *o += gg * y;
                        }
                    }
                    {
                        let gb = grad_mut(&mut before[b.0]);
                        for ((o, gg), x) in gb.iter_mut().zip(g).zip(&av) {
                            *o += gg * x;
                        }
                    }
                }
                Op::AddN(vs) => {
                    for &v in vs {
                        axpy(before, v, 1.0, g);
                    }
                }
                Op::Neg(a) => axpy(before, *a, -1.0, g),
                Op::Sigmoid(a) => {
                    let y = &node.values;
                    let ga = grad_mut(&mut before[a.0]);
                    for ((o, gg), yy) in ga.iter_mut().zip(g).zip(y) {
                        *o += gg * yy * (1.0 - yy);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.values;
                    let ga = grad_mut(&mut before[a.0]);
                    for ((o, gg), yy) in ga.iter_mut().zip(g).zip(y) {
                        *o += gg * (1.0 - yy * yy);
                    }
                }
                Op::Elu(a) => {
                    let y = &node.values;
                    let ga = grad_mut(&mut before[a.0]);
                    for ((o, gg), yy) in ga.iter_mut().zip(g).zip(y) {
                        let d = if *yy > 0.0 { 1.0 } else { yy + 1.0 };
                        *o += gg * d;
                    }
                }
                Op::Softplus(a) => {
                    let y = &node.values;
                    let ga = grad_mut(&mut before[a.0]);
                    for ((o, gg), yy) in ga.iter_mut().zip(g).zip(y) {
                        *o += gg * (1.0 - (-yy).exp());
                    }
                }
                Op::Recip(a) => {
                    let y = &node.values;
                    let ga = grad_mut(&mut before[a.0]);
                    for ((o, gg), yy) in ga.iter_mut().zip(g).zip(y) {
                        *o -= gg * yy * yy;
                    }
                }
                Op::Scale(a, c) => axpy(before, *a, *c, g),
                Op::AddConst(a) => axpy(before, *a, 1.0, g),
                Op::BMul(x, s) => {
                    let (x, s) = (*x, *s);
                    let sv = before[s.0].values[0];
                    let xv: Vec<f64> = before[x.0].values.clone();
                    {
                        let gx = grad_mut(&mut before[x.0]);
                        for (o, gg) in gx.iter_mut().zip(g) {
                            *o += gg * sv;
                        }
                    }
                    {
                        let gs = grad_mut(&mut before[s.0]);
                        gs[0] += g.iter().zip(&xv).map(|(gg, x)| gg * x).sum::<f64>();
                    }
                }
                Op::Sum(a) => {
                    let gg = g[0];
                    let ga = grad_mut(&mut before[a.0]);
                    for o in ga.iter_mut() {
                        *o += gg;
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = match before[a.0].shape {
                        Shape::Matrix(m, k) => (m, k),
                        _ => unreachable!(),
                    };
                    let n = node.shape.cols();
                    let av = before[a.0].values.clone();
                    let bv = before[b.0].values.clone();
                    {
                        let ga = grad_mut(&mut before[a.0]);
                        for i in 0..m {
                            for l in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bv[l * n + j];
                                }
                                ga[i * k + l] += acc;
                            }
                        }
                    }
                    {
                        let gb = grad_mut(&mut before[b.0]);
                        for l in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += av[i * k + l] * g[i * n + j];
                                }
                                gb[l * n + j] += acc;
                            }
                        }
                    }
                }
                Op::MatVec(a, x) => {
                    let (a, x) = (*a, *x);
                    let (m, k) = match before[a.0].shape {
                        Shape::Matrix(m, k) => (m, k),
                        _ => unreachable!(),
                    };
                    let av = before[a.0].values.clone();
                    let xv = before[x.0].values.clone();
                    {
                        let ga = grad_mut(&mut before[a.0]);
                        for i in 0..m {
                            for l in 0..k {
                                ga[i * k + l] += g[i] * xv[l];
                            }
                        }
                    }
                    {
                        let gx = grad_mut(&mut before[x.0]);
                        for l in 0..k {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + l] * g[i];
                            }
                            gx[l] += acc;
                        }
                    }
                }
                Op::VecMat(x, a) => {
                    let (x, a) = (*x, *a);
                    let (m, k) = match before[a.0].shape {
                        Shape::Matrix(m, k) => (m, k),
                        _ => unreachable!(),
                    };
                    let av = before[a.0].values.clone();
                    let xv = before[x.0].values.clone();
                    {
                        let gx = grad_mut(&mut before[x.0]);
                        for i in 0..m {
                            let mut acc = 0.0;
                            for j in 0..k {
                                acc += av[i * k + j] * g[j];
                            }
                            gx[i] += acc;
                        }
                    }
                    {
                        let ga = grad_mut(&mut before[a.0]);
                        for i in 0..m {
                            let c = xv[i];
                            if c == 0.0 {
                                continue;
                            }
                            for j in 0..k {
                                ga[i * k + j] += c * g[j];
                            }
                        }
                    }
                }
                Op::Concat(vs) => {
                    let mut off = 0;
                    for &v in vs {
                        let len = before[v.0].values.len();
                        let gv = grad_mut(&mut before[v.0]);
                        for (o, gg) in gv.iter_mut().zip(&g[off..off + len]) {
                            *o += gg;
                        }
                        off += len;
                    }
                }
                Op::StackRows(vs) => {
                    let d = node.shape.cols();
                    for (i, &v) in vs.iter().enumerate() {
                        let gv = grad_mut(&mut before[v.0]);
                        for (o, gg) in gv.iter_mut().zip(&g[i * d..(i + 1) * d]) {
                            *o += gg;
                        }
                    }
                }
                Op::Row(m, i) => {
                    let c = node.values.len();
                    let gm = grad_mut(&mut before[m.0]);
                    for (o, gg) in gm[i * c..(i + 1) * c].iter_mut().zip(g) {
                        *o += gg;
                    }
                }
                Op::Index(v, i) => {
                    let gv = grad_mut(&mut before[v.0]);
                    gv[*i] += g[0];
                }
                Op::SliceRows(m, start, count) => {
                    let c = node.shape.cols();
                    let gm = grad_mut(&mut before[m.0]);
                    for (o, gg) in gm[start * c..(start + count) * c].iter_mut().zip(g) {
                        *o += gg;
                    }
                }
                Op::Softmax(z) => {
                    let y = &node.values;
                    let dot: f64 = g.iter().zip(y).map(|(gg, yy)| gg * yy).sum();
                    let gz = grad_mut(&mut before[z.0]);
                    for ((o, gg), yy) in gz.iter_mut().zip(g).zip(y) {
                        *o += yy * (gg - dot);
                    }
                }
                Op::StraightThrough(y) => axpy(before, *y, 1.0, g),
                Op::ColMaxPool(m) => {
                    let m = *m;
                    let (r, c) = match before[m.0].shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let mv = before[m.0].values.clone();
                    let gm = grad_mut(&mut before[m.0]);
                    for j in 0..c {
                        let mut best = 0;
                        for i in 1..r {
                            if mv[i * c + j] > mv[best * c + j] {
                                best = i;
                            }
                        }
                        gm[best * c + j] += g[j];
                    }
                }
            }
        }
    }
}

fn grad_mut(n: &mut Node) -> &mut [f64] {
    if n.grad.is_none() {
        n.grad = Some(vec![0.0; n.values.len()]);
    }
    n.grad.as_mut().unwrap()
}

fn axpy(nodes: &mut [Node], v: Var, c: f64, g: &[f64]) {
    let gv = grad_mut(&mut nodes[v.0]);
    for (o, gg) in gv.iter_mut().zip(g) {
        *o += c * gg;
    }
}

/// Smallest index attaining the maximum.
pub fn argmax(vals: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in vals.iter().enumerate().skip(1) {
        if v > vals[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::{central_diff, max_rel_err};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let y = t.mul(x, x);
        t.backward(y);
        assert_eq!(t.value(y), 9.0);
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constant_root_leaves_all_gradients_zero() {
        let mut t = Tape::new();
        let x = t.scalar(2.0);
        let c = t.scalar(5.0);
        let y = t.mul(x, c);
        let z = t.sub(y, y);
        t.backward(z);
        assert_eq!(t.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    #[should_panic(expected = "root must be scalar")]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::new();
        let x = t.constant_vec(&[1.0, 2.0]);
        t.backward(x);
    }

    #[test]
    fn elu_of_wx_matches_finite_differences() {
        // sum(ELU(Wx)) with random W, x; check dL/dW and dL/dx
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let w0: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

            let f = |wv: &[f64], xv: &[f64]| {
                let mut t = Tape::new();
                let w = t.leaf(Shape::Matrix(3, 4), wv.to_vec());
                let x = t.leaf(Shape::Vector(4), xv.to_vec());
                let h = t.matvec(w, x);
                let e = t.elu(h);
                let s = t.sum(e);
                (t, s, w, x)
            };

            let (mut t, s, w, x) = f(&w0, &x0);
            t.backward(s);
            let gw = t.grad(w).unwrap().to_vec();
            let gx = t.grad(x).unwrap().to_vec();

            let fd_w = central_diff(
                |p| {
                    let (t, s, _, _) = f(p, &x0);
                    t.value(s)
                },
                &w0,
                1e-6,
            );
            let fd_x = central_diff(
                |p| {
                    let (t, s, _, _) = f(&w0, p);
                    t.value(s)
                },
                &x0,
                1e-6,
            );
            assert!(max_rel_err(&gw, &fd_w) < 1e-5);
            assert!(max_rel_err(&gx, &fd_x) < 1e-5);
        }
    }

    #[test]
    fn straight_through_examples() {
        let mut t = Tape::new();
        let y = t.constant_vec(&[0.7, 0.2, 0.1]);
        let h = t.straight_through(y);
        assert_eq!(t.values(h), &[1.0, 0.0, 0.0]);

        // tie broken toward the smaller index
        let y2 = t.constant_vec(&[0.5, 0.5]);
        let h2 = t.straight_through(y2);
        assert_eq!(t.values(h2), &[1.0, 0.0]);
    }

    #[test]
    fn straight_through_backward_is_identity() {
        // upstream gradient (a,b,c) arrives unchanged on y
        let mut t = Tape::new();
        let y = t.constant_vec(&[0.2, 0.5, 0.3]);
        let h = t.straight_through(y);
        let w = t.constant_vec(&[3.0, -1.5, 7.0]);
        let p = t.mul(h, w);
        let s = t.sum(p);
        t.backward(s);
        assert_eq!(t.grad(y).unwrap(), &[3.0, -1.5, 7.0]);
    }

    #[test]
    fn col_max_pool_examples_and_tie_routing() {
        let mut t = Tape::new();
        let m = t.leaf(Shape::Matrix(2, 2), vec![1.0, 5.0, 3.0, 2.0]);
        let p = t.col_max_pool(m);
        assert_eq!(t.values(p), &[3.0, 5.0]);
        let s = t.sum(p);
        t.backward(s);
        assert_eq!(t.grad(m).unwrap(), &[0.0, 1.0, 1.0, 0.0]);

        // tie in a column routes to the smallest row index
        let mut t2 = Tape::new();
        let m2 = t2.leaf(Shape::Matrix(2, 1), vec![4.0, 4.0]);
        let p2 = t2.col_max_pool(m2);
        let s2 = t2.sum(p2);
        t2.backward(s2);
        assert_eq!(t2.grad(m2).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = |av: &[f64], bv: &[f64]| {
            let mut t = Tape::new();
            let a = t.leaf(Shape::Matrix(3, 2), av.to_vec());
            let b = t.leaf(Shape::Matrix(2, 4), bv.to_vec());
            let c = t.matmul(a, b);
            let e = t.tanh(c);
            let s = t.sum(e);
            (t, s, a, b)
        };
        let (mut t, s, a, b) = run(&a0, &b0);
        t.backward(s);
        let ga = t.grad(a).unwrap().to_vec();
        let gb = t.grad(b).unwrap().to_vec();
        let fa = central_diff(
            |p| {
                let (t, s, _, _) = run(p, &b0);
                t.value(s)
            },
            &a0,
            1e-6,
        );
        let fb = central_diff(
            |p| {
                let (t, s, _, _) = run(&a0, p);
                t.value(s)
            },
            &b0,
            1e-6,
        );
        assert!(max_rel_err(&ga, &fa) < 1e-5);
        assert!(max_rel_err(&gb, &fb) < 1e-5);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let z0 = vec![0.3, -1.2, 0.8, 0.0];
        let run = |zv: &[f64]| {
            let mut t = Tape::new();
            let z = t.leaf(Shape::Vector(4), zv.to_vec());
            let y = t.softmax(z);
            let w = t.constant_vec(&[1.0, 2.0, -0.5, 0.7]);
            let p = t.mul(y, w);
            let s = t.sum(p);
            (t, s, z)
        };
        let (mut t, s, z) = run(&z0);
        t.backward(s);
        let g = t.grad(z).unwrap().to_vec();
        let fd = central_diff(
            |p| {
                let (t, s, _) = run(p);
                t.value(s)
            },
            &z0,
            1e-6,
        );
        assert!(max_rel_err(&g, &fd) < 1e-5);
    }
}
