//! Shared communication engine: vocabulary embeddings, an encoder mapping a
//! message embedding to a discrete symbol sequence, and a decoder mapping a
//! symbol sequence back to a message embedding.
//!
//! Vocabulary layout: indices 0..n_vocab are word symbols, n_vocab is the
//! end token (sampleable), n_vocab+1 is the start token (input-only, never
//! emitted).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    argmax, gumbel_softmax, Binder, GumbelNoise, ParamStore, Shape, Tape, Temperature, Var,
};
use crate::env::GameConfig;
use crate::nn::{
    bind_linear, bind_lstm, linear_forward, lstm_step, register_linear, register_lstm,
    Activation, LinearVars, LstmVars,
};

/// Message author: one of the two candidates or a member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sender {
    /// Candidate index 0 (C1) or 1 (C2).
    Candidate(u8),
    Member(usize),
}

impl std::fmt::Display for Sender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sender::Candidate(j) => write!(f, "C{}", j + 1),
            Sender::Member(i) => write!(f, "M{i}"),
        }
    }
}

/// A bounded sequence of discrete symbols plus the tape one-hots that
/// produced it. The end token, when sampled, terminates the message and is
/// not counted in its length.
#[derive(Clone, Debug)]
pub struct Message {
    pub sender: Sender,
    pub step: usize,
    /// Word symbol ids, length <= L_max.
    pub symbols: Vec<usize>,
    /// One-hot vars over the sampleable set, parallel to `symbols`.
    pub onehots: Vec<Var>,
    /// One-hot of the sampled end token, when the message stopped early.
    pub end_onehot: Option<Var>,
    /// Per-symbol encoder temperatures (recorded for diagnostics).
    pub temperatures: Vec<f64>,
}

impl Message {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Communication-engine parameters bound to a tape for one episode.
pub struct CommVars {
    pub vocab: Var,
    /// Rows 0..=n_vocab of the vocabulary (words + end token).
    pub sampleable: Var,
    pub encoder: LstmVars,
    pub logits_head: LinearVars,
    pub temp_head: LinearVars,
    pub decoder: LstmVars,
    pub n_vocab: usize,
    pub d_vocab: usize,
    pub d_msg: usize,
    pub l_max: usize,
}

impl CommVars {
    pub fn end_index(&self) -> usize {
        self.n_vocab
    }

    pub fn start_index(&self) -> usize {
        self.n_vocab + 1
    }
}

pub fn register_comm_engine<R: Rng + ?Sized>(
    store: &mut ParamStore,
    cfg: &GameConfig,
    rng: &mut R,
) {
    store.register_uniform(
        "comm.vocab",
        Shape::Matrix(cfg.n_vocab + 2, cfg.d_vocab),
        cfg.d_vocab,
        rng,
    );
    register_lstm(store, "comm.enc.lstm", cfg.d_vocab, cfg.d_msg, rng);
    register_linear(store, "comm.enc.logits", cfg.d_msg, cfg.n_vocab + 1, rng);
    register_linear(store, "comm.enc.temp", cfg.d_msg, 1, rng);
    register_lstm(store, "comm.dec.lstm", cfg.d_vocab, cfg.d_msg, rng);
}

pub fn bind_comm_engine(binder: &mut Binder, tape: &mut Tape, cfg: &GameConfig) -> CommVars {
    let vocab = binder.get(tape, "comm.vocab");
    let sampleable = tape.slice_rows(vocab, 0, cfg.n_vocab + 1);
    CommVars {
        vocab,
        sampleable,
        encoder: bind_lstm(binder, tape, "comm.enc.lstm"),
        logits_head: bind_linear(binder, tape, "comm.enc.logits", Activation::None),
        temp_head: bind_linear(
            binder,
            tape,
            "comm.enc.temp",
            Activation::SoftplusShifted(cfg.t0),
        ),
        decoder: bind_lstm(binder, tape, "comm.dec.lstm"),
        n_vocab: cfg.n_vocab,
        d_vocab: cfg.d_vocab,
        d_msg: cfg.d_msg,
        l_max: cfg.l_max,
    }
}

/// Encodes a message embedding into a symbol sequence. The encoder LSTM
/// cell state starts as u_msg and the hidden state as zeros; each step
/// samples from logits over words plus the end token via Gumbel-Softmax at
/// a learned per-symbol temperature, hardened by straight-through when
/// `hard` is set. Generation stops at the end token or after l_max symbols.
pub fn encode(
    tape: &mut Tape,
    comm: &CommVars,
    u_msg: Var,
    sender: Sender,
    step: usize,
    mut noise_for: impl FnMut(usize) -> GumbelNoise,
    hard: bool,
) -> Message {
    assert_eq!(
        tape.shape(u_msg).len(),
        comm.d_msg,
        "encode: u_msg dimension mismatch"
    );
    let mut h = tape.zeros(Shape::Vector(comm.d_msg));
    let mut c = u_msg;
    let mut input = tape.row(comm.vocab, comm.start_index());

    let mut msg = Message {
        sender,
        step,
        symbols: Vec::new(),
        onehots: Vec::new(),
        end_onehot: None,
        temperatures: Vec::new(),
    };

    for slot in 0..comm.l_max {
        let (h2, c2) = lstm_step(tape, &comm.encoder, input, h, c);
        h = h2;
        c = c2;
        let logits = linear_forward(tape, &comm.logits_head, h);
        let temp = linear_forward(tape, &comm.temp_head, h);
        msg.temperatures.push(tape.value(temp));
        let noise = noise_for(slot);
        let y = gumbel_softmax(tape, logits, Temperature::Learned(temp), &noise);
        let symbol = argmax(tape.values(y));
        let out = if hard { tape.straight_through(y) } else { y };
        if symbol == comm.end_index() {
            msg.end_onehot = Some(out);
            break;
        }
        msg.symbols.push(symbol);
        msg.onehots.push(out);
        input = tape.vecmat(out, comm.sampleable);
    }
    msg
}

/// Decodes a message into v_msg: the decoder LSTM (zero-initialized)
/// consumes the embeddings of the message's symbols followed by the end
/// token embedding, and its final hidden state is returned.
pub fn decode(tape: &mut Tape, comm: &CommVars, msg: &Message) -> Var {
    let mut h = tape.zeros(Shape::Vector(comm.d_msg));
    let mut c = tape.zeros(Shape::Vector(comm.d_msg));
    for &oh in &msg.onehots {
        let e = tape.vecmat(oh, comm.sampleable);
        let (h2, c2) = lstm_step(tape, &comm.decoder, e, h, c);
        h = h2;
        c = c2;
    }
    let end_emb = match msg.end_onehot {
        Some(oh) => tape.vecmat(oh, comm.sampleable),
        None => tape.row(comm.vocab, comm.end_index()),
    };
    let (h2, _) = lstm_step(tape, &comm.decoder, end_emb, h, c);
    h2
}
