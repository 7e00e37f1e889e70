//! Candidate and member policy networks.
//!
//! Each candidate owns a policy (GCN over the following pattern, an LSTM
//! for long-term strategy, and a message head conditioned on its propaganda
//! vector). All members share one policy (message-context encoder, LSTM,
//! and heads for the outgoing message, the step size lambda and the
//! preference target m_hat).

use rand::Rng;

use crate::diffcore::{Binder, ParamStore, Tape, Var};
use crate::env::GameConfig;
use crate::nn::{
    bind_linear, bind_lstm, column_max_pool, gcn_forward, linear_forward, lstm_step,
    register_linear, register_lstm, Activation, GcnLayerVars, LinearVars, LstmVars,
};

pub const CANDIDATE_PREFIXES: [&str; 2] = ["cand1", "cand2"];
pub const MEMBER_PREFIX: &str = "member";
pub const COMM_PREFIX: &str = "comm";

/// One candidate's parameters bound to a tape.
pub struct CandidatePolicyVars {
    pub gcn_w: [Var; 3],
    pub lstm: LstmVars,
    pub head1: LinearVars,
    pub head2: LinearVars,
}

/// The shared member policy bound to a tape.
pub struct MemberPolicyVars {
    pub ctx1: LinearVars,
    pub ctx2: LinearVars,
    pub lstm: LstmVars,
    pub umsg1: LinearVars,
    pub umsg2: LinearVars,
    pub lambda_head: LinearVars,
    pub mhat1: LinearVars,
    pub mhat2: LinearVars,
}

pub fn register_candidate_policy<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &GameConfig,
    rng: &mut R,
) {
    let w = cfg.gcn_widths();
    for l in 0..3 {
        store.register_uniform(
            &format!("{prefix}.gcn{}.w", l + 1),
            crate::diffcore::Shape::Matrix(w[l], w[l + 1]),
            w[l],
            rng,
        );
    }
    let hidden = cfg.candidate_lstm_hidden();
    register_lstm(store, &format!("{prefix}.lstm"), cfg.d_msg, hidden, rng);
    register_linear(
        store,
        &format!("{prefix}.head1"),
        hidden + cfg.d,
        32,
        rng,
    );
    register_linear(store, &format!("{prefix}.head2"), 32, cfg.d_msg, rng);
}

pub fn register_member_policy<R: Rng + ?Sized>(
    store: &mut ParamStore,
    cfg: &GameConfig,
    rng: &mut R,
) {
    let ctx = cfg.member_ctx_hidden();
    let hidden = cfg.member_lstm_hidden();
    register_linear(store, "member.ctx1", cfg.d_msg + cfg.d, ctx, rng);
    register_linear(store, "member.ctx2", ctx, ctx, rng);
    register_lstm(store, "member.lstm", ctx, hidden, rng);
    register_linear(store, "member.umsg1", hidden, 32, rng);
    register_linear(store, "member.umsg2", 32, cfg.d_msg, rng);
    register_linear(store, "member.lambda", hidden, 1, rng);
    register_linear(store, "member.mhat1", hidden, 32, rng);
    register_linear(store, "member.mhat2", 32, cfg.d, rng);
}

pub fn bind_candidate_policy(
    binder: &mut Binder,
    tape: &mut Tape,
    prefix: &str,
) -> CandidatePolicyVars {
    CandidatePolicyVars {
        gcn_w: [
            binder.get(tape, &format!("{prefix}.gcn1.w")),
            binder.get(tape, &format!("{prefix}.gcn2.w")),
            binder.get(tape, &format!("{prefix}.gcn3.w")),
        ],
        lstm: bind_lstm(binder, tape, &format!("{prefix}.lstm")),
        head1: bind_linear(binder, tape, &format!("{prefix}.head1"), Activation::Elu),
        head2: bind_linear(binder, tape, &format!("{prefix}.head2"), Activation::None),
    }
}

pub fn bind_member_policy(binder: &mut Binder, tape: &mut Tape) -> MemberPolicyVars {
    MemberPolicyVars {
        ctx1: bind_linear(binder, tape, "member.ctx1", Activation::Elu),
        ctx2: bind_linear(binder, tape, "member.ctx2", Activation::Elu),
        lstm: bind_lstm(binder, tape, "member.lstm"),
        umsg1: bind_linear(binder, tape, "member.umsg1", Activation::Elu),
        umsg2: bind_linear(binder, tape, "member.umsg2", Activation::None),
        lambda_head: bind_linear(binder, tape, "member.lambda", Activation::Sigmoid),
        mhat1: bind_linear(binder, tape, "member.mhat1", Activation::Elu),
        mhat2: bind_linear(binder, tape, "member.mhat2", Activation::None),
    }
}

/// One candidate step: the following matrix runs through three GCN layers,
/// column max pooling summarizes it, the LSTM advances, and the hidden
/// state concatenated with the propaganda vector yields u_msg.
pub fn candidate_forward(
    tape: &mut Tape,
    policy: &CandidatePolicyVars,
    ahat: Var,
    f_matrix: Var,
    c_j: Var,
    state: (Var, Var),
) -> (Var, (Var, Var)) {
    let mut h = f_matrix;
    for w in policy.gcn_w {
        let layer = GcnLayerVars { w, ahat };
        h = gcn_forward(tape, &layer, h);
    }
    let s = column_max_pool(tape, h);
    let (h_next, c_next) = lstm_step(tape, &policy.lstm, s, state.0, state.1);
    let joint = tape.concat(&[h_next, c_j]);
    let z = linear_forward(tape, &policy.head1, joint);
    let u_msg = linear_forward(tape, &policy.head2, z);
    (u_msg, (h_next, c_next))
}

/// Member outputs for one step.
pub struct MemberAction {
    pub u_msg: Var,
    /// Step size in (0, epsilon).
    pub lambda: Var,
    pub m_hat: Var,
    pub state: (Var, Var),
}

/// One member step over a non-empty inbox: each decoded message is
/// interpreted in the context of the preference vector, the results are
/// max-pooled, the LSTM advances, and three heads produce the outgoing
/// message embedding, lambda and m_hat.
pub fn member_forward(
    tape: &mut Tape,
    policy: &MemberPolicyVars,
    m_i: Var,
    inbox: &[Var],
    state: (Var, Var),
    epsilon: f64,
) -> MemberAction {
    assert!(
        !inbox.is_empty(),
        "member_forward: empty inbox must be gated by the environment"
    );
    let contexts: Vec<Var> = inbox
        .iter()
        .map(|&v_msg| {
            let joint = tape.concat(&[v_msg, m_i]);
            let z = linear_forward(tape, &policy.ctx1, joint);
            linear_forward(tape, &policy.ctx2, z)
        })
        .collect();
    let stacked = tape.stack_rows(&contexts);
    let v_bar = column_max_pool(tape, stacked);

    let (h_next, c_next) = lstm_step(tape, &policy.lstm, v_bar, state.0, state.1);

    let u1 = linear_forward(tape, &policy.umsg1, h_next);
    let u_msg = linear_forward(tape, &policy.umsg2, u1);

    let sig = linear_forward(tape, &policy.lambda_head, h_next);
    let lambda = tape.scale(sig, epsilon);

    let m1 = linear_forward(tape, &policy.mhat1, h_next);
    let m_hat = linear_forward(tape, &policy.mhat2, m1);

    MemberAction {
        u_msg,
        lambda,
        m_hat,
        state: (h_next, c_next),
    }
}
