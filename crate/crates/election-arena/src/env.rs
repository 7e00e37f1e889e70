//! Game environment: configuration, per-episode state, following/vote
//! sampling, preference dynamics, message routing and reward computation.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::commengine::Sender;
use crate::diffcore::{argmax, gumbel_softmax, GumbelNoise, Shape, Tape, Temperature, Var};
use crate::error::{ArenaError, Result};
use crate::netgen::{spectral_init, Graph};
use crate::rng::fnv64;

/// Candidate reward structure: biased (both push C1) or unbiased
/// (each maximizes its own votes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Biased,
    Unbiased,
}

/// Which candidates are allowed to broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveMask {
    #[serde(rename = "both")]
    Both,
    #[serde(rename = "c1")]
    C1Only,
    #[serde(rename = "c2")]
    C2Only,
}

impl ActiveMask {
    pub fn candidate_active(&self, j: usize) -> bool {
        match self {
            ActiveMask::Both => true,
            ActiveMask::C1Only => j == 0,
            ActiveMask::C2Only => j == 1,
        }
    }
}

impl std::fmt::Display for ActiveMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ActiveMask::Both => "both",
            ActiveMask::C1Only => "c1",
            ActiveMask::C2Only => "c2",
        };
        write!(f, "{s}")
    }
}

/// Where episode graphs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkSource {
    /// A fresh random geometric graph per episode.
    Rgg { beta: f64 },
    /// A fixed graph loaded from an edge-list file.
    File { path: String },
}

/// All game hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Member count.
    pub n: usize,
    /// Preference vector dimension.
    pub d: usize,
    /// Message embedding dimension.
    pub d_msg: usize,
    /// Symbol embedding dimension.
    pub d_vocab: usize,
    /// Vocabulary size (word symbols, excluding the end/start tokens).
    pub n_vocab: usize,
    /// Maximum message length.
    pub l_max: usize,
    /// Propaganda steps per episode.
    pub t: usize,
    /// Temperature floor for the encoder (shift before softplus).
    pub t0: f64,
    /// Temperature for following/vote sampling.
    pub t_gumbel: f64,
    pub learning_rate: f64,
    /// Cap on the preference-update step size, in (0,1).
    pub epsilon: f64,
    pub reward_mode: RewardMode,
    pub active_mask: ActiveMask,
    pub network: NetworkSource,
    /// Feed raw squared distances (instead of their negation) to the
    /// following/vote Gumbel-Softmax, for fidelity experiments.
    pub literal_distance_logits: bool,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            n: 100,
            d: 2,
            d_msg: 16,
            d_vocab: 16,
            n_vocab: 32,
            l_max: 5,
            t: 5,
            t0: 0.2,
            t_gumbel: 0.5,
            learning_rate: 0.001,
            epsilon: 0.5,
            reward_mode: RewardMode::Biased,
            active_mask: ActiveMask::Both,
            network: NetworkSource::Rgg { beta: 0.05 },
            literal_distance_logits: false,
            seed: 0,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ArenaError::Config(msg));
        if self.n < 2 {
            return fail(format!("n must be at least 2, got {}", self.n));
        }
        if self.d < 1 {
            return fail("d must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon must lie in (0,1), got {}", self.epsilon));
        }
        if self.t < 1 {
            return fail("episode length t must be at least 1".into());
        }
        if self.t_gumbel <= 0.0 {
            return fail("t_gumbel must be positive".into());
        }
        if self.t0 <= 0.0 {
            return fail("t0 must be positive".into());
        }
        if self.l_max < 1 {
            return fail("l_max must be at least 1".into());
        }
        if self.n_vocab < 2 {
            return fail("n_vocab must be at least 2".into());
        }
        if self.learning_rate <= 0.0 {
            return fail("learning_rate must be positive".into());
        }
        if let NetworkSource::Rgg { beta } = self.network {
            if !(beta > 0.0 && beta < 1.0) {
                return fail(format!("beta must lie in (0,1), got {beta}"));
            }
        }
        Ok(())
    }

    /// Hidden widths the architecture fixes beyond the table of
    /// hyperparameters.
    pub fn gcn_widths(&self) -> [usize; 4] {
        [2, 32, 32, self.d_msg]
    }

    pub fn candidate_lstm_hidden(&self) -> usize {
        32
    }

    pub fn member_lstm_hidden(&self) -> usize {
        32
    }

    pub fn member_ctx_hidden(&self) -> usize {
        32
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv64(json.as_bytes()))
    }
}

/// One following/vote draw: the relaxed simplex vector, the emitted vector
/// (hard one-hot unless running relaxed), and the discrete choice.
#[derive(Clone, Copy, Debug)]
pub struct ChoiceOutcome {
    pub relaxed: Var,
    pub output: Var,
    /// 0 for C1, 1 for C2.
    pub choice: usize,
}

/// Samples a candidate choice from preference-propaganda distances:
/// logits are -||m - c_j||^2 / d (sign flipped under
/// `literal_distance_logits`), passed through Gumbel-Softmax at t_gumbel
/// and hardened by straight-through.
pub fn sample_choice(
    tape: &mut Tape,
    m_i: Var,
    c1: Var,
    c2: Var,
    cfg: &GameConfig,
    noise: &GumbelNoise,
    hard: bool,
) -> ChoiceOutcome {
    let sq_dist = |tape: &mut Tape, c: Var| {
        let diff = tape.sub(m_i, c);
        let sq = tape.mul(diff, diff);
        let ss = tape.sum(sq);
        tape.scale(ss, 1.0 / cfg.d as f64)
    };
    let d1 = sq_dist(tape, c1);
    let d2 = sq_dist(tape, c2);
    let dists = tape.concat(&[d1, d2]);
    let logits = if cfg.literal_distance_logits {
        dists
    } else {
        tape.neg(dists)
    };
    let relaxed = gumbel_softmax(tape, logits, Temperature::Const(cfg.t_gumbel), noise);
    let choice = argmax(tape.values(relaxed));
    let output = if hard {
        tape.straight_through(relaxed)
    } else {
        relaxed
    };
    ChoiceOutcome {
        relaxed,
        output,
        choice,
    }
}

/// m' = (1 - lambda) m + lambda m_hat. The step size must already be
/// capped: 0 <= lambda <= epsilon.
pub fn update_preference(tape: &mut Tape, m: Var, m_hat: Var, lambda: Var, epsilon: f64) -> Var {
    let lv = tape.value(lambda);
    assert!(
        (0.0..=epsilon).contains(&lv),
        "update_preference: lambda {lv} outside [0, {epsilon}]"
    );
    let one = tape.scalar(1.0);
    let keep = tape.sub(one, lambda);
    let a = tape.bmul(m, keep);
    let b = tape.bmul(m_hat, lambda);
    tape.add(a, b)
}

/// Delivers the messages broadcast at step t to member inboxes for step
/// t+1: every broadcasting neighbor's message, plus the followed
/// candidate's message when that candidate is active. Candidates receive
/// nothing.
pub fn route_messages(
    graph: &Graph,
    broadcasts: &[(Sender, usize)],
    following: &[usize],
    active: [bool; 2],
) -> Vec<Vec<usize>> {
    let mut inboxes = vec![Vec::new(); graph.n()];
    for &(sender, idx) in broadcasts {
        match sender {
            Sender::Candidate(j) => {
                let j = j as usize;
                if !active[j] {
                    continue;
                }
                for (i, &f) in following.iter().enumerate() {
                    if f == j {
                        inboxes[i].push(idx);
                    }
                }
            }
            Sender::Member(src) => {
                for &nb in graph.neighbors(src) {
                    inboxes[nb].push(idx);
                }
            }
        }
    }
    inboxes
}

/// Vote tallies and reward values for one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub n1: usize,
    pub n2: usize,
    pub r_c1: f64,
    pub r_c2: f64,
    pub member_reward: f64,
}

/// Differentiable reward expressions for the three trainable groups.
#[derive(Clone, Copy, Debug)]
pub struct RewardRoots {
    pub c1: Var,
    pub c2: Var,
    pub members: Var,
}

/// Vote counts and rewards. Candidates get (N1, N2) unbiased or (N1, -N2)
/// biased; the member reward is the mean over members of
/// -||m_i - c(i)||^2 with c(i) selected by the vote one-hot.
pub fn compute_rewards(
    tape: &mut Tape,
    votes: &[ChoiceOutcome],
    m_final: &[Var],
    c1: Var,
    c2: Var,
    mode: RewardMode,
) -> (RewardRoots, RewardRecord) {
    let n = votes.len();
    assert_eq!(m_final.len(), n, "compute_rewards: vote/preference mismatch");

    let v1: Vec<Var> = votes.iter().map(|v| tape.index(v.output, 0)).collect();
    let v2: Vec<Var> = votes.iter().map(|v| tape.index(v.output, 1)).collect();
    let n1_var = tape.add_n(&v1);
    let n2_var = tape.add_n(&v2);

    let r_c1 = n1_var;
    let r_c2 = match mode {
        RewardMode::Unbiased => n2_var,
        RewardMode::Biased => tape.neg(n2_var),
    };

    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let sqd = |tape: &mut Tape, c: Var| {
            let diff = tape.sub(m_final[i], c);
            let sq = tape.mul(diff, diff);
            tape.sum(sq)
        };
        let d1 = sqd(tape, c1);
        let d2 = sqd(tape, c2);
        let t1 = tape.mul(v1[i], d1);
        let t2 = tape.mul(v2[i], d2);
        terms.push(tape.add(t1, t2));
    }
    let total = tape.add_n(&terms);
    let neg_total = tape.neg(total);
    let r_members = tape.scale(neg_total, 1.0 / n as f64);

    let n1 = votes.iter().filter(|v| v.choice == 0).count();
    let n2 = n - n1;
    let record = RewardRecord {
        n1,
        n2,
        r_c1: tape.value(r_c1),
        r_c2: tape.value(r_c2),
        member_reward: tape.value(r_members),
    };
    (
        RewardRoots {
            c1: r_c1,
            c2: r_c2,
            members: r_members,
        },
        record,
    )
}

/// Per-episode mutable state.
pub struct GameState {
    /// Current preference vars, one per member.
    pub m: Vec<Var>,
    pub c1: Var,
    pub c2: Var,
    pub c1_vals: Vec<f64>,
    pub c2_vals: Vec<f64>,
    /// Current following draw per member.
    pub following: Vec<ChoiceOutcome>,
    /// Member LSTM (hidden, cell) states.
    pub member_state: Vec<(Var, Var)>,
    /// Candidate LSTM (hidden, cell) states.
    pub cand_state: [(Var, Var); 2],
    /// Message indices (into the episode message arena) visible this step.
    pub inboxes: Vec<Vec<usize>>,
    pub t: usize,
}

/// Initial preference rows: RGG embeddings, or spectral initialization
/// for fixed networks.
pub fn initial_preferences(cfg: &GameConfig, graph: &Graph) -> Vec<Vec<f64>> {
    match cfg.network {
        NetworkSource::Rgg { .. } => graph
            .embeddings()
            .expect("RGG-mode graph must carry embeddings")
            .to_vec(),
        NetworkSource::File { .. } => spectral_init(graph, cfg.d).rows,
    }
}

/// Sets up an episode: samples c1 ~ N(0, I) and c2 = -c1, installs the
/// initial preferences, samples F(1), and resets recurrent state (member
/// LSTM cells start as m_i(1) padded with zeros).
pub fn init_episode(
    tape: &mut Tape,
    cfg: &GameConfig,
    graph: &Graph,
    initial_prefs: &[Vec<f64>],
    init_rng: &mut ChaCha8Rng,
    follow_noise: impl Fn(usize) -> GumbelNoise,
    hard: bool,
) -> GameState {
    assert_eq!(graph.n(), cfg.n, "init_episode: graph size mismatch");
    assert_eq!(initial_prefs.len(), cfg.n);

    let c1_vals: Vec<f64> = (0..cfg.d)
        .map(|_| StandardNormal.sample(init_rng))
        .collect();
    let c2_vals: Vec<f64> = c1_vals.iter().map(|x| -x).collect();
    let c1 = tape.leaf(Shape::Vector(cfg.d), c1_vals.clone());
    let c2 = tape.leaf(Shape::Vector(cfg.d), c2_vals.clone());

    let m: Vec<Var> = initial_prefs
        .iter()
        .map(|p| tape.leaf(Shape::Vector(cfg.d), p.clone()))
        .collect();

    let following: Vec<ChoiceOutcome> = (0..cfg.n)
        .map(|i| sample_choice(tape, m[i], c1, c2, cfg, &follow_noise(i), hard))
        .collect();

    let hidden = cfg.member_lstm_hidden();
    let pad = tape.zeros(Shape::Vector(hidden - cfg.d));
    let member_state: Vec<(Var, Var)> = m
        .iter()
        .map(|&mi| {
            let h = tape.zeros(Shape::Vector(hidden));
            let c = tape.concat(&[mi, pad]);
            (h, c)
        })
        .collect();

    let ch = cfg.candidate_lstm_hidden();
    let cand_state = [
        (tape.zeros(Shape::Vector(ch)), tape.zeros(Shape::Vector(ch))),
        (tape.zeros(Shape::Vector(ch)), tape.zeros(Shape::Vector(ch))),
    ];

    GameState {
        m,
        c1,
        c2,
        c1_vals,
        c2_vals,
        following,
        member_state,
        cand_state,
        inboxes: vec![Vec::new(); cfg.n],
        t: 1,
    }
}
