//! Neural building blocks: linear layers, ELU, LSTM cell, GCN layer,
//! embedding lookup and column-wise max pooling.
//!
//! Layers are pure functions of tape variables; learnable tensors live in a
//! `ParamStore` and are bound per episode through a `Binder`.

use rand::Rng;

use crate::diffcore::{Binder, ParamStore, Shape, Tape, Var};

/// Activation applied after a linear map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    None,
    Elu,
    Sigmoid,
    /// shift + softplus(x); always exceeds the shift.
    SoftplusShifted(f64),
}

fn apply_activation(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::None => x,
        Activation::Elu => tape.elu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::SoftplusShifted(shift) => {
            let sp = tape.softplus(x);
            let k = tape.shape(sp).len();
            tape.add_const(sp, &vec![shift; k])
        }
    }
}

/// A linear layer bound to a tape: weight [out, in], bias [out].
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
    pub act: Activation,
}

/// activation(W x + b). Accepts a vector [in] or a matrix [n, in]
/// (applied row-wise).
pub fn linear_forward(tape: &mut Tape, layer: &LinearVars, x: Var) -> Var {
    match tape.shape(x) {
        Shape::Vector(_) => {
            let wx = tape.matvec(layer.w, x);
            let z = tape.add(wx, layer.b);
            apply_activation(tape, z, layer.act)
        }
        Shape::Matrix(n, _) => {
            let rows: Vec<Var> = (0..n)
                .map(|i| {
                    let r = tape.row(x, i);
                    let wx = tape.matvec(layer.w, r);
                    tape.add(wx, layer.b)
                })
                .collect();
            let stacked = tape.stack_rows(&rows);
            apply_activation(tape, stacked, layer.act)
        }
    }
}

pub fn register_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    in_dim: usize,
    out_dim: usize,
    rng: &mut R,
) {
    store.register_uniform(
        &format!("{name}.w"),
        Shape::Matrix(out_dim, in_dim),
        in_dim,
        rng,
    );
    store.register_uniform(&format!("{name}.b"), Shape::Vector(out_dim), in_dim, rng);
}

pub fn bind_linear(
    binder: &mut Binder,
    tape: &mut Tape,
    name: &str,
    act: Activation,
) -> LinearVars {
    LinearVars {
        w: binder.get(tape, &format!("{name}.w")),
        b: binder.get(tape, &format!("{name}.b")),
        act,
    }
}

/// LSTM cell bound to a tape. Gate weights are [hidden, input+hidden] and
/// biases [hidden], one set per gate (input/forget/cell/output).
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_i: Var,
    pub w_f: Var,
    pub w_g: Var,
    pub w_o: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_g: Var,
    pub b_o: Var,
}

/// Standard LSTM recurrence with sigmoid gates and tanh squashing.
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, x: Var, h: Var, c: Var) -> (Var, Var) {
    let hidden = tape.shape(h).len();
    assert_eq!(tape.shape(c).len(), hidden, "lstm_step: h/c size mismatch");
    let z = tape.concat(&[x, h]);
    assert_eq!(
        tape.shape(p.w_i).cols(),
        tape.shape(z).len(),
        "lstm_step: input size mismatch"
    );
    let gate = |tape: &mut Tape, w: Var, b: Var| {
        let wz = tape.matvec(w, z);
        tape.add(wz, b)
    };
    let zi = gate(tape, p.w_i, p.b_i);
    let i = tape.sigmoid(zi);
    let zf = gate(tape, p.w_f, p.b_f);
    let f = tape.sigmoid(zf);
    let zg = gate(tape, p.w_g, p.b_g);
    let g = tape.tanh(zg);
    let zo = gate(tape, p.w_o, p.b_o);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc);
    (h_next, c_next)
}

pub fn register_lstm<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) {
    let fan_in = input + hidden;
    for gate in ["i", "f", "g", "o"] {
        store.register_uniform(
            &format!("{prefix}.w_{gate}"),
            Shape::Matrix(hidden, fan_in),
            fan_in,
            rng,
        );
        store.register_uniform(
            &format!("{prefix}.b_{gate}"),
            Shape::Vector(hidden),
            fan_in,
            rng,
        );
    }
}

pub fn bind_lstm(binder: &mut Binder, tape: &mut Tape, prefix: &str) -> LstmVars {
    LstmVars {
        w_i: binder.get(tape, &format!("{prefix}.w_i")),
        w_f: binder.get(tape, &format!("{prefix}.w_f")),
        w_g: binder.get(tape, &format!("{prefix}.w_g")),
        w_o: binder.get(tape, &format!("{prefix}.w_o")),
        b_i: binder.get(tape, &format!("{prefix}.b_i")),
        b_f: binder.get(tape, &format!("{prefix}.b_f")),
        b_g: binder.get(tape, &format!("{prefix}.b_g")),
        b_o: binder.get(tape, &format!("{prefix}.b_o")),
    }
}

/// GCN layer: weight [in, out] plus the normalized adjacency of the graph
/// it operates on.
#[derive(Clone, Copy, Debug)]
pub struct GcnLayerVars {
    pub w: Var,
    pub ahat: Var,
}

/// ELU(Ahat H W).
pub fn gcn_forward(tape: &mut Tape, layer: &GcnLayerVars, h: Var) -> Var {
    let n = tape.shape(layer.ahat).rows();
    assert_eq!(
        tape.shape(h).rows(),
        n,
        "gcn_forward: feature rows disagree with graph"
    );
    let hw = tape.matmul(h, layer.w);
    let agg = tape.matmul(layer.ahat, hw);
    tape.elu(agg)
}

/// Symmetric self-loop normalization D~^(-1/2) (A+I) D~^(-1/2) of a dense
/// 0/1 adjacency, row-major.
pub fn normalized_adjacency(adj: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(adj.len(), n * n);
    let mut deg = vec![0.0; n];
    for i in 0..n {
        let mut d = 1.0; // self loop
        for j in 0..n {
            if i != j {
                d += adj[i * n + j];
            }
        }
        deg[i] = d;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let a = if i == j { 1.0 } else { adj[i * n + j] };
            if a != 0.0 {
                out[i * n + j] = a * inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    out
}

/// Column-wise max over an n x d matrix; n >= 1.
pub fn column_max_pool(tape: &mut Tape, m: Var) -> Var {
    tape.col_max_pool(m)
}

/// onehot^T x table: exact row for hard one-hots, convex mix for relaxed
/// vectors.
pub fn embed(tape: &mut Tape, table: Var, onehot: Var) -> Var {
    assert_eq!(
        tape.shape(onehot).len(),
        tape.shape(table).rows(),
        "embed: one-hot length must equal table count"
    );
    tape.vecmat(onehot, table)
}
