//! Episode simulation, the alternating training loop, loss construction
//! and checkpoint persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commengine::{
    bind_comm_engine, decode, encode, register_comm_engine, Message, Sender,
};
use crate::diffcore::{Binder, GumbelNoise, ParamStore, Shape, Tape, TensorData, Var};
use crate::env::{
    compute_rewards, init_episode, initial_preferences, route_messages, sample_choice,
    update_preference, ActiveMask, GameConfig, NetworkSource, RewardRecord, RewardRoots,
};
use crate::error::{ArenaError, Result};
use crate::netgen::{load_edge_list, sample_rgg, Graph};
use crate::nn::normalized_adjacency;
use crate::policies::{
    bind_candidate_policy, bind_member_policy, candidate_forward, member_forward,
    register_candidate_policy, register_member_policy, CandidatePolicyVars,
    CANDIDATE_PREFIXES,
};
use crate::rng::{control_rng, fnv64, noise_kind, stream_rng, NoiseField, Stream};

/// Which parameter group a training step updates (the communication engine
/// is updated alongside every choice).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateTarget {
    Candidate1,
    Candidate2,
    Members,
}

impl UpdateTarget {
    pub fn prefix(&self) -> &'static str {
        match self {
            UpdateTarget::Candidate1 => "cand1.",
            UpdateTarget::Candidate2 => "cand2.",
            UpdateTarget::Members => "member.",
        }
    }
}

/// Uniform draw over the three update targets.
pub fn select_update_target(rng: &mut ChaCha8Rng) -> UpdateTarget {
    match rng.random_range(0..3u32) {
        0 => UpdateTarget::Candidate1,
        1 => UpdateTarget::Candidate2,
        _ => UpdateTarget::Members,
    }
}

/// Registers all learnable tensors: communication engine, both candidate
/// policies and the shared member policy.
pub fn init_param_store(cfg: &GameConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = ParamStore::new();
    register_comm_engine(&mut store, cfg, rng);
    for prefix in CANDIDATE_PREFIXES {
        register_candidate_policy(&mut store, prefix, cfg, rng);
    }
    register_member_policy(&mut store, cfg, rng);
    store
}

// ---- episode traces ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMessage {
    pub sender: Sender,
    pub symbols: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    /// Following choice per member (0 or 1).
    pub f: Vec<usize>,
    pub messages: Vec<TraceMessage>,
    /// Preferences after this step's updates.
    pub prefs: Vec<Vec<f64>>,
}

/// Full record of one episode; the input to all analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub schema: u32,
    pub episode: u64,
    pub config_hash: String,
    pub graph_id: String,
    pub initial_prefs: Vec<Vec<f64>>,
    pub steps: Vec<StepTrace>,
    /// Vote choice per member (0 or 1).
    pub votes: Vec<usize>,
    pub reward: RewardRecord,
}

impl EpisodeTrace {
    pub fn digest(&self) -> u64 {
        fnv64(
            serde_json::to_string(self)
                .expect("trace serializes")
                .as_bytes(),
        )
    }
}

// ---- episode simulation ----

#[derive(Clone, Copy, Debug)]
pub struct EpisodeOptions {
    pub episode: u64,
    /// Harden categorical draws with straight-through (true for training
    /// and evaluation; false yields the fully relaxed episode used by
    /// gradient checks).
    pub hard: bool,
    pub mask: ActiveMask,
    pub record: bool,
}

pub struct EpisodeOutput<'a> {
    pub tape: Tape,
    pub binder: Binder<'a>,
    pub roots: RewardRoots,
    pub record: RewardRecord,
    pub trace: Option<EpisodeTrace>,
}

fn sender_code(s: Sender) -> u64 {
    match s {
        Sender::Candidate(j) => j as u64,
        Sender::Member(i) => 2 + i as u64,
    }
}

/// Runs one episode: t propaganda steps (candidates broadcast when active,
/// members act when their inbox is non-empty) followed by the voting step.
/// Returns differentiable reward roots for all three groups plus the trace.
pub fn run_episode<'a>(
    cfg: &GameConfig,
    graph: &Graph,
    prefs: &[Vec<f64>],
    store: &'a ParamStore,
    opts: &EpisodeOptions,
) -> EpisodeOutput<'a> {
    let noise = NoiseField::new(cfg.seed, opts.episode);
    let mut init_rng = stream_rng(cfg.seed, Stream::Init, opts.episode);
    let mut tape = Tape::new();
    let mut binder = Binder::new(store);

    let comm = bind_comm_engine(&mut binder, &mut tape, cfg);
    let member_policy = bind_member_policy(&mut binder, &mut tape);
    let cand_policies: [Option<CandidatePolicyVars>; 2] = [
        opts.mask
            .candidate_active(0)
            .then(|| bind_candidate_policy(&mut binder, &mut tape, "cand1")),
        opts.mask
            .candidate_active(1)
            .then(|| bind_candidate_policy(&mut binder, &mut tape, "cand2")),
    ];
    let ahat = tape.leaf(
        Shape::Matrix(cfg.n, cfg.n),
        normalized_adjacency(&graph.adjacency_dense(), cfg.n),
    );

    let mut state = init_episode(
        &mut tape,
        cfg,
        graph,
        prefs,
        &mut init_rng,
        |i| {
            GumbelNoise::from_uniforms(&[
                noise.uniform(&[noise_kind::FOLLOW, 1, i as u64, 0]),
                noise.uniform(&[noise_kind::FOLLOW, 1, i as u64, 1]),
            ])
        },
        opts.hard,
    );

    let mut arena: Vec<Message> = Vec::new();
    let mut decoded: Vec<Option<Var>> = Vec::new();
    let mut steps: Vec<StepTrace> = Vec::new();

    for t in 1..=cfg.t {
        // following is refreshed from current preferences each step
        if t > 1 {
            state.following = (0..cfg.n)
                .map(|i| {
                    let g = GumbelNoise::from_uniforms(&[
                        noise.uniform(&[noise_kind::FOLLOW, t as u64, i as u64, 0]),
                        noise.uniform(&[noise_kind::FOLLOW, t as u64, i as u64, 1]),
                    ]);
                    sample_choice(&mut tape, state.m[i], state.c1, state.c2, cfg, &g, opts.hard)
                })
                .collect();
        }
        let f_choices: Vec<usize> = state.following.iter().map(|f| f.choice).collect();
        let mut broadcasts: Vec<(Sender, usize)> = Vec::new();

        // candidate broadcasts
        let f_rows: Vec<Var> = state.following.iter().map(|f| f.output).collect();
        let f_matrix = tape.stack_rows(&f_rows);
        for j in 0..2 {
            let Some(policy) = &cand_policies[j] else {
                continue;
            };
            let c_j = if j == 0 { state.c1 } else { state.c2 };
            let (u_msg, next) = candidate_forward(
                &mut tape,
                policy,
                ahat,
                f_matrix,
                c_j,
                state.cand_state[j],
            );
            state.cand_state[j] = next;
            let sender = Sender::Candidate(j as u8);
            let msg = encode(
                &mut tape,
                &comm,
                u_msg,
                sender,
                t,
                |slot| {
                    let us: Vec<f64> = (0..cfg.n_vocab + 1)
                        .map(|k| {
                            noise.uniform(&[
                                noise_kind::SYMBOL,
                                t as u64,
                                sender_code(sender),
                                slot as u64,
                                k as u64,
                            ])
                        })
                        .collect();
                    GumbelNoise::from_uniforms(&us)
                },
                opts.hard,
            );
            arena.push(msg);
            decoded.push(None);
            broadcasts.push((sender, arena.len() - 1));
        }

        // member actions, gated on a non-empty inbox
        for i in 0..cfg.n {
            if state.inboxes[i].is_empty() {
                continue;
            }
            let inbox_vars: Vec<Var> = state.inboxes[i]
                .clone()
                .into_iter()
                .map(|idx| {
                    if let Some(v) = decoded[idx] {
                        v
                    } else {
                        let v = decode(&mut tape, &comm, &arena[idx]);
                        decoded[idx] = Some(v);
                        v
                    }
                })
                .collect();
            let action = member_forward(
                &mut tape,
                &member_policy,
                state.m[i],
                &inbox_vars,
                state.member_state[i],
                cfg.epsilon,
            );
            state.member_state[i] = action.state;
            state.m[i] = update_preference(
                &mut tape,
                state.m[i],
                action.m_hat,
                action.lambda,
                cfg.epsilon,
            );
            let sender = Sender::Member(i);
            let msg = encode(
                &mut tape,
                &comm,
                action.u_msg,
                sender,
                t,
                |slot| {
                    let us: Vec<f64> = (0..cfg.n_vocab + 1)
                        .map(|k| {
                            noise.uniform(&[
                                noise_kind::SYMBOL,
                                t as u64,
                                sender_code(sender),
                                slot as u64,
                                k as u64,
                            ])
                        })
                        .collect();
                    GumbelNoise::from_uniforms(&us)
                },
                opts.hard,
            );
            arena.push(msg);
            decoded.push(None);
            broadcasts.push((sender, arena.len() - 1));
        }

        let active = [opts.mask.candidate_active(0), opts.mask.candidate_active(1)];
        state.inboxes = route_messages(graph, &broadcasts, &f_choices, active);
        state.t = t + 1;

        if opts.record {
            steps.push(StepTrace {
                step: t,
                f: f_choices,
                messages: broadcasts
                    .iter()
                    .map(|&(sender, idx)| TraceMessage {
                        sender,
                        symbols: arena[idx].symbols.clone(),
                    })
                    .collect(),
                prefs: state.m.iter().map(|&m| tape.values(m).to_vec()).collect(),
            });
        }
    }

    // voting step on m(T+1)
    let votes: Vec<_> = (0..cfg.n)
        .map(|i| {
            let g = GumbelNoise::from_uniforms(&[
                noise.uniform(&[noise_kind::VOTE, (cfg.t + 1) as u64, i as u64, 0]),
                noise.uniform(&[noise_kind::VOTE, (cfg.t + 1) as u64, i as u64, 1]),
            ]);
            sample_choice(&mut tape, state.m[i], state.c1, state.c2, cfg, &g, opts.hard)
        })
        .collect();
    let (roots, record) = compute_rewards(
        &mut tape,
        &votes,
        &state.m,
        state.c1,
        state.c2,
        cfg.reward_mode,
    );

    let trace = opts.record.then(|| EpisodeTrace {
        schema: 1,
        episode: opts.episode,
        config_hash: cfg.config_hash(),
        graph_id: graph.id().to_string(),
        initial_prefs: prefs.to_vec(),
        steps,
        votes: votes.iter().map(|v| v.choice).collect(),
        reward: record.clone(),
    });

    EpisodeOutput {
        tape,
        binder,
        roots,
        record,
        trace,
    }
}

/// Graph for a given episode: freshly sampled in RGG mode, the fixed graph
/// otherwise.
pub fn episode_graph<'a>(
    cfg: &GameConfig,
    fixed: Option<&'a Graph>,
    episode: u64,
) -> Result<std::borrow::Cow<'a, Graph>> {
    match cfg.network {
        NetworkSource::Rgg { beta } => {
            let mut rng = stream_rng(cfg.seed, Stream::Graph, episode);
            let mut g = sample_rgg(cfg.n, cfg.d, beta, &mut rng)?;
            g.set_id(format!("rgg:{}:{}", cfg.seed, episode));
            Ok(std::borrow::Cow::Owned(g))
        }
        NetworkSource::File { .. } => {
            let g = fixed.ok_or_else(|| {
                ArenaError::Config("fixed-network mode requires a loaded graph".into())
            })?;
            Ok(std::borrow::Cow::Borrowed(g))
        }
    }
}

// ---- training ----

/// Run controls around the game config.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub game: GameConfig,
    pub episodes: u64,
    pub checkpoint_interval: u64,
    pub out_dir: Option<PathBuf>,
    pub fixed_graph: Option<Graph>,
}

#[derive(Debug)]
pub struct TrainReport {
    pub store: ParamStore,
    pub episodes: u64,
    pub c1_wins: u64,
    pub c2_wins: u64,
    pub ties: u64,
    pub checkpoints: Vec<PathBuf>,
    pub progress_path: Option<PathBuf>,
}

/// Loads the fixed graph named by the config, if any.
pub fn load_fixed_graph(cfg: &GameConfig) -> Result<Option<Graph>> {
    match &cfg.network {
        NetworkSource::File { path } => Ok(Some(load_edge_list(path)?)),
        NetworkSource::Rgg { .. } => Ok(None),
    }
}

/// Trains from scratch for `episodes` episodes.
pub fn train(run: &RunConfig) -> Result<TrainReport> {
    run.game.validate()?;
    let mut init_rng = control_rng(run.game.seed, Stream::Init);
    let store = init_param_store(&run.game, &mut init_rng);
    let target_rng = control_rng(run.game.seed, Stream::UpdateTarget);
    train_from(run, store, target_rng, 0, (0, 0, 0))
}

/// Resumes training from a checkpoint. With the same controls this
/// reproduces the uninterrupted run exactly.
pub fn resume(run: &RunConfig, ckpt: Checkpoint) -> Result<TrainReport> {
    let target_rng = ckpt.target_rng.restore();
    train_from(run, ckpt.store, target_rng, ckpt.episode, ckpt.tallies)
}

fn train_from(
    run: &RunConfig,
    mut store: ParamStore,
    mut target_rng: ChaCha8Rng,
    start_episode: u64,
    tallies: (u64, u64, u64),
) -> Result<TrainReport> {
    let cfg = &run.game;
    let fixed_prefs = run
        .fixed_graph
        .as_ref()
        .map(|g| initial_preferences(cfg, g));

    let mut progress: Option<(PathBuf, std::io::BufWriter<fs::File>)> = None;
    if let Some(dir) = &run.out_dir {
        fs::create_dir_all(dir).map_err(|e| ArenaError::io(dir, e))?;
        let path = dir.join("progress.csv");
        let fresh = start_episode == 0;
        let file = fs::OpenOptions::new()
            .create(true)
            .append(!fresh)
            .write(true)
            .truncate(fresh)
            .open(&path)
            .map_err(|e| ArenaError::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        if fresh {
            writeln!(w, "episode,c1_wins_cum,c2_wins_cum,ties_cum,loss")
                .map_err(|e| ArenaError::io(&path, e))?;
        }
        progress = Some((path, w));
    }

    let (mut c1_wins, mut c2_wins, mut ties) = tallies;
    let mut checkpoints = Vec::new();

    for ep in start_episode..run.episodes {
        let graph = episode_graph(cfg, run.fixed_graph.as_ref(), ep)?;
        let owned_prefs;
        let prefs: &[Vec<f64>] = match &fixed_prefs {
            Some(p) => p,
            None => {
                owned_prefs = initial_preferences(cfg, &graph);
                &owned_prefs
            }
        };
        let opts = EpisodeOptions {
            episode: ep,
            hard: true,
            mask: cfg.active_mask,
            record: false,
        };
        let target = select_update_target(&mut target_rng);
        let (record, grads, loss_value) = {
            let mut out = run_episode(cfg, &graph, prefs, &store, &opts);
            let reward = match target {
                UpdateTarget::Candidate1 => out.roots.c1,
                UpdateTarget::Candidate2 => out.roots.c2,
                UpdateTarget::Members => out.roots.members,
            };
            let loss = out.tape.neg(reward);
            let loss_value = out.tape.value(loss);
            out.tape.backward(loss);
            let grads = out.binder.collect_grads(&out.tape);
            (out.record, grads, loss_value)
        };
        let prefix = target.prefix();
        store.apply_adam(
            |name| name.starts_with(prefix) || name.starts_with("comm."),
            &grads,
            cfg.learning_rate,
        );

        match record.n1.cmp(&record.n2) {
            std::cmp::Ordering::Greater => c1_wins += 1,
            std::cmp::Ordering::Less => c2_wins += 1,
            std::cmp::Ordering::Equal => ties += 1,
        }

        if let Some((path, w)) = &mut progress {
            writeln!(
                w,
                "{},{},{},{},{}",
                ep + 1,
                c1_wins,
                c2_wins,
                ties,
                loss_value
            )
            .map_err(|e| ArenaError::io(path.clone(), e))?;
        }

        let done = ep + 1;
        if run.checkpoint_interval > 0 && done % run.checkpoint_interval == 0 {
            if let Some(dir) = &run.out_dir {
                let path = dir.join(format!("checkpoint_ep{done}.emcp"));
                let ckpt = Checkpoint {
                    game: cfg.clone(),
                    episode: done,
                    tallies: (c1_wins, c2_wins, ties),
                    store: store.clone(),
                    target_rng: RngSnapshot::capture(&target_rng),
                };
                save_checkpoint(&path, &ckpt)?;
                checkpoints.push(path);
            }
        }
    }

    if let Some((path, w)) = &mut progress {
        w.flush().map_err(|e| ArenaError::io(path.clone(), e))?;
    }
    if let Some(dir) = &run.out_dir {
        let path = dir.join("checkpoint_final.emcp");
        let ckpt = Checkpoint {
            game: cfg.clone(),
            episode: run.episodes,
            tallies: (c1_wins, c2_wins, ties),
            store: store.clone(),
            target_rng: RngSnapshot::capture(&target_rng),
        };
        save_checkpoint(&path, &ckpt)?;
        checkpoints.push(path);
    }

    Ok(TrainReport {
        store,
        episodes: run.episodes,
        c1_wins,
        c2_wins,
        ties,
        checkpoints,
        progress_path: progress.map(|(p, _)| p),
    })
}

// ---- checkpoints ----

const MAGIC: &[u8; 4] = b"EMCP";
const VERSION: u32 = 1;

/// Serializable ChaCha state (seed, stream, word position).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed_hex: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed();
        RngSnapshot {
            seed_hex: seed.iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        for i in 0..32 {
            seed[i] = u8::from_str_radix(&self.seed_hex[2 * i..2 * i + 2], 16)
                .expect("valid seed hex");
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().expect("valid word position"));
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub game: GameConfig,
    pub episode: u64,
    pub tallies: (u64, u64, u64),
    pub store: ParamStore,
    pub target_rng: RngSnapshot,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    game: GameConfig,
    episode: u64,
    tallies: (u64, u64, u64),
    adam_t: BTreeMap<String, u64>,
    target_rng: RngSnapshot,
}

/// Binary layout: magic "EMCP", version (u32 LE), entry count (u32 LE);
/// per entry: name length (u32 LE) + UTF-8 name, rank (u32 LE), extents
/// (u64 LE each), f64 LE payload; then a length-prefixed UTF-8 JSON
/// trailer with config, counters and rng state.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let mut entries: Vec<(String, &TensorData)> = Vec::new();
    let mut moment_data: Vec<(String, Shape, &Vec<f64>)> = Vec::new();
    for (name, e) in ckpt.store.iter() {
        entries.push((format!("param:{name}"), &e.data));
        moment_data.push((format!("adam_m:{name}"), e.data.shape, &e.adam_m));
        moment_data.push((format!("adam_v:{name}"), e.data.shape, &e.adam_v));
    }
    let count = (entries.len() + moment_data.len()) as u32;
    buf.extend_from_slice(&count.to_le_bytes());

    let write_entry = |buf: &mut Vec<u8>, name: &str, shape: Shape, values: &[f64]| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let dims = shape.dims();
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, data) in &entries {
        write_entry(&mut buf, name, data.shape, &data.values);
    }
    for (name, shape, values) in &moment_data {
        write_entry(&mut buf, name, *shape, values);
    }

    let meta = CheckpointMeta {
        game: ckpt.game.clone(),
        episode: ckpt.episode,
        tallies: ckpt.tallies,
        adam_t: ckpt
            .store
            .iter()
            .map(|(n, e)| (n.clone(), e.adam_t))
            .collect(),
        target_rng: ckpt.target_rng.clone(),
    };
    let meta_json = serde_json::to_vec(&meta).expect("meta serializes");
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);

    fs::write(path, &buf).map_err(|e| ArenaError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(ArenaError::Format(format!(
                "truncated: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| ArenaError::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4)? != MAGIC {
        return Err(ArenaError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ArenaError::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = cur.u32()?;

    struct RawEntry {
        shape: Shape,
        values: Vec<f64>,
    }
    let mut raw: BTreeMap<String, RawEntry> = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|e| ArenaError::Format(format!("bad entry name: {e}")))?;
        let rank = cur.u32()?;
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(cur.u64()? as usize);
        }
        let shape = match dims.as_slice() {
            [n] => Shape::Vector(*n),
            [r, c] => Shape::Matrix(*r, *c),
            other => {
                return Err(ArenaError::Format(format!(
                    "unsupported rank {}",
                    other.len()
                )))
            }
        };
        let len = shape.len();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(cur.f64()?);
        }
        raw.insert(name, RawEntry { shape, values });
    }

    let meta_len = cur.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len)?)
        .map_err(|e| ArenaError::Format(format!("bad metadata: {e}")))?;

    let mut store = ParamStore::new();
    let names: Vec<String> = raw
        .keys()
        .filter_map(|k| k.strip_prefix("param:"))
        .map(|s| s.to_string())
        .collect();
    for name in names {
        let p = raw
            .remove(&format!("param:{name}"))
            .ok_or_else(|| ArenaError::Format(format!("missing values for {name}")))?;
        let m = raw
            .remove(&format!("adam_m:{name}"))
            .ok_or_else(|| ArenaError::Format(format!("missing adam_m for {name}")))?;
        let v = raw
            .remove(&format!("adam_v:{name}"))
            .ok_or_else(|| ArenaError::Format(format!("missing adam_v for {name}")))?;
        store.register(&name, p.shape, p.values);
        let entry = store.entry_mut(&name);
        entry.adam_m = m.values;
        entry.adam_v = v.values;
        entry.adam_t = *meta.adam_t.get(&name).unwrap_or(&0);
    }

    Ok(Checkpoint {
        game: meta.game,
        episode: meta.episode,
        tallies: meta.tallies,
        store,
        target_rng: meta.target_rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardMode;

    fn desk_config(n: usize, seed: u64) -> GameConfig {
        GameConfig {
            n,
            network: NetworkSource::Rgg { beta: 0.3 },
            seed,
            ..GameConfig::default()
        }
    }

    fn run_one(cfg: &GameConfig, episode: u64, mask: ActiveMask, record: bool) -> EpisodeOutput<'static> {
        // leak the store for test convenience
        let mut init_rng = control_rng(cfg.seed, Stream::Init);
        let store = Box::leak(Box::new(init_param_store(cfg, &mut init_rng)));
        let graph = episode_graph(cfg, None, episode).unwrap();
        let prefs = initial_preferences(cfg, &graph);
        let opts = EpisodeOptions {
            episode,
            hard: true,
            mask,
            record,
        };
        run_episode(cfg, &graph, &prefs, store, &opts)
    }

    #[test]
    fn trace_has_exactly_t_propaganda_steps_and_one_vote() {
        let cfg = desk_config(8, 3);
        let out = run_one(&cfg, 0, ActiveMask::Both, true);
        let trace = out.trace.unwrap();
        assert_eq!(trace.steps.len(), cfg.t);
        assert_eq!(trace.votes.len(), cfg.n);
        assert_eq!(trace.reward.n1 + trace.reward.n2, cfg.n);
        for step in &trace.steps {
            for msg in &step.messages {
                assert!(msg.symbols.len() <= cfg.l_max);
            }
        }
    }

    #[test]
    fn muted_candidate_never_appears_in_traces() {
        let cfg = desk_config(8, 4);
        let out = run_one(&cfg, 1, ActiveMask::C1Only, true);
        let trace = out.trace.unwrap();
        for step in &trace.steps {
            for msg in &step.messages {
                assert_ne!(msg.sender, Sender::Candidate(1));
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let cfg = desk_config(8, 5);
        let a = run_one(&cfg, 2, ActiveMask::Both, true).trace.unwrap();
        let b = run_one(&cfg, 2, ActiveMask::Both, true).trace.unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let c = run_one(&cfg, 3, ActiveMask::Both, true).trace.unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn members_without_messages_keep_their_preferences() {
        // with only C1 active, members following C2 at step 1 receive
        // nothing and must not move at step 2 (no member broadcast at t=1)
        let cfg = desk_config(10, 6);
        let out = run_one(&cfg, 4, ActiveMask::C1Only, true);
        let trace = out.trace.unwrap();
        let f1 = &trace.steps[0].f;
        for i in 0..cfg.n {
            if f1[i] == 1 {
                assert_eq!(
                    trace.steps[1].prefs[i], trace.initial_prefs[i],
                    "member {i} moved without receiving a message"
                );
            }
        }
        // step-1 prefs never move for anyone (inboxes start empty)
        for i in 0..cfg.n {
            assert_eq!(trace.steps[0].prefs[i], trace.initial_prefs[i]);
        }
    }

    #[test]
    fn select_update_target_is_uniform_and_stream_isolated() {
        let mut rng = control_rng(9, Stream::UpdateTarget);
        let mut counts = [0u32; 3];
        let draws = 30_000;
        for _ in 0..draws {
            match select_update_target(&mut rng) {
                UpdateTarget::Candidate1 => counts[0] += 1,
                UpdateTarget::Candidate2 => counts[1] += 1,
                UpdateTarget::Members => counts[2] += 1,
            }
        }
        for c in counts {
            let frac = c as f64 / draws as f64;
            assert!((frac - 1.0 / 3.0).abs() < 0.01, "frac {frac}");
        }

        // deterministic given rng state, and independent of episode streams
        let seq = |spread: bool| -> Vec<UpdateTarget> {
            let mut rng = control_rng(10, Stream::UpdateTarget);
            (0..32)
                .map(|ep| {
                    if spread {
                        let _ = stream_rng(10, Stream::Graph, ep);
                        let _ = stream_rng(11, Stream::Noise, ep);
                    }
                    select_update_target(&mut rng)
                })
                .collect()
        };
        assert_eq!(seq(false), seq(true));
    }

    #[test]
    fn gradients_reach_the_active_candidate() {
        let cfg = desk_config(8, 7);
        let mut out = run_one(&cfg, 5, ActiveMask::Both, false);
        let loss = out.tape.neg(out.roots.c1);
        out.tape.backward(loss);
        let grads = out.binder.collect_grads(&out.tape);
        let c1_norm: f64 = grads
            .iter()
            .filter(|(n, _)| n.starts_with("cand1."))
            .flat_map(|(_, g)| g.iter())
            .map(|g| g * g)
            .sum();
        assert!(c1_norm > 0.0, "candidate 1 must receive gradient");
        let comm_norm: f64 = grads
            .iter()
            .filter(|(n, _)| n.starts_with("comm."))
            .flat_map(|(_, g)| g.iter())
            .map(|g| g * g)
            .sum();
        assert!(comm_norm > 0.0, "communication engine must receive gradient");
    }

    #[test]
    fn one_training_step_updates_only_target_and_comm() {
        let cfg = desk_config(8, 8);
        let mut init_rng = control_rng(cfg.seed, Stream::Init);
        let mut store = init_param_store(&cfg, &mut init_rng);
        let before: BTreeMap<String, Vec<f64>> = store
            .iter()
            .map(|(n, e)| (n.clone(), e.data.values.clone()))
            .collect();

        let graph = episode_graph(&cfg, None, 0).unwrap();
        let prefs = initial_preferences(&cfg, &graph);
        let opts = EpisodeOptions {
            episode: 0,
            hard: true,
            mask: ActiveMask::Both,
            record: false,
        };
        let mut out = run_episode(&cfg, &graph, &prefs, &store, &opts);
        let loss = out.tape.neg(out.roots.c1);
        out.tape.backward(loss);
        let grads = out.binder.collect_grads(&out.tape);
        store.apply_adam(
            |n| n.starts_with("cand1.") || n.starts_with("comm."),
            &grads,
            cfg.learning_rate,
        );

        let mut comm_changed = false;
        for (name, entry) in store.iter() {
            let changed = entry.data.values != before[name];
            if name.starts_with("cand2.") || name.starts_with("member.") {
                assert!(!changed, "{name} must be untouched");
            }
            if name.starts_with("comm.") && changed {
                comm_changed = true;
            }
        }
        assert!(comm_changed, "communication engine must move");
    }

    #[test]
    fn losses_stay_finite_across_random_parameter_episodes() {
        for seed in 0..100 {
            let cfg = desk_config(6, 1000 + seed);
            let out = run_one(&cfg, seed, ActiveMask::Both, false);
            for r in [out.roots.c1, out.roots.c2, out.roots.members] {
                assert!(out.tape.value(r).is_finite());
            }
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let cfg = desk_config(6, 11);
        let mut init_rng = control_rng(cfg.seed, Stream::Init);
        let store = init_param_store(&cfg, &mut init_rng);
        let rng = control_rng(cfg.seed, Stream::UpdateTarget);
        let ckpt = Checkpoint {
            game: cfg,
            episode: 42,
            tallies: (30, 10, 2),
            store,
            target_rng: RngSnapshot::capture(&rng),
        };
        let dir = std::env::temp_dir().join(format!("emcp_test_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.emcp");
        let p2 = dir.join("b.emcp");
        save_checkpoint(&p1, &ckpt).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, ckpt);
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());

        // truncation is a format error, not a crash
        let bytes = fs::read(&p1).unwrap();
        let p3 = dir.join("c.emcp");
        fs::write(&p3, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&p3),
            Err(ArenaError::Format(_))
        ));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let cfg = GameConfig {
            n: 6,
            t: 3,
            network: NetworkSource::Rgg { beta: 0.4 },
            seed: 21,
            reward_mode: RewardMode::Biased,
            ..GameConfig::default()
        };
        let dir = std::env::temp_dir().join(format!("emcp_train_{}", std::process::id()));
        let mk_run = |sub: &str, episodes: u64, interval: u64| RunConfig {
            game: cfg.clone(),
            episodes,
            checkpoint_interval: interval,
            out_dir: Some(dir.join(sub)),
            fixed_graph: None,
        };

        let r1 = train(&mk_run("a", 20, 10)).unwrap();
        let r2 = train(&mk_run("b", 20, 10)).unwrap();
        let a20 = fs::read(dir.join("a/checkpoint_ep20.emcp")).unwrap();
        let b20 = fs::read(dir.join("b/checkpoint_ep20.emcp")).unwrap();
        assert_eq!(a20, b20, "identical seeds must give identical bytes");
        assert_eq!(r1.store.digest(), r2.store.digest());

        // resume from the halfway checkpoint and land on the same bytes
        let half = load_checkpoint(&dir.join("a/checkpoint_ep10.emcp")).unwrap();
        let r3 = resume(&mk_run("c", 20, 10), half).unwrap();
        assert_eq!(r3.store.digest(), r1.store.digest());
        let c20 = fs::read(dir.join("c/checkpoint_ep20.emcp")).unwrap();
        assert_eq!(a20, c20);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn progress_log_accumulates_cumulative_wins() {
        let cfg = desk_config(6, 31);
        let dir = std::env::temp_dir().join(format!("emcp_log_{}", std::process::id()));
        let run = RunConfig {
            game: cfg,
            episodes: 5,
            checkpoint_interval: 0,
            out_dir: Some(dir.clone()),
            fixed_graph: None,
        };
        let report = train(&run).unwrap();
        let text = fs::read_to_string(dir.join("progress.csv")).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines[0], "episode,c1_wins_cum,c2_wins_cum,ties_cum,loss");
        assert_eq!(lines.len(), 6);
        let last: Vec<&str> = lines[5].split(',').collect();
        assert_eq!(last[0], "5");
        let sum: u64 = last[1].parse::<u64>().unwrap()
            + last[2].parse::<u64>().unwrap()
            + last[3].parse::<u64>().unwrap();
        assert_eq!(sum, 5);
        assert_eq!(report.c1_wins + report.c2_wins + report.ties, 5);
        fs::remove_dir_all(&dir).ok();
    }
}
