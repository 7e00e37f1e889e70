//! Command-line surface: train, eval, analyze and gen-graph subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::analysis::{
    build_member_symbol_matrix, collect_traces, evaluate_winrates, ngram_stats, nmi,
    spectral_cluster, tfidf_transform, write_count_matrix_csv, write_labels_csv,
    write_ngrams_csv, write_real_matrix_csv, write_scores_csv, write_traces_jsonl, ScoreTable,
};
use crate::env::{ActiveMask, GameConfig, NetworkSource, RewardMode};
use crate::error::{ArenaError, Result};
use crate::netgen::{load_edge_list, sample_rgg, Graph};
use crate::rng::{stream_rng, Stream};
use crate::trainer::{load_checkpoint, load_fixed_graph, train, RunConfig};

pub const OUT_DIR_ENV: &str = "ELECTION_ARENA_OUT";

/// JSON run configuration. Unknown keys are rejected; omitted keys take
/// the experiment defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default = "d_n")]
    n: usize,
    #[serde(default = "d_d")]
    d: usize,
    #[serde(default = "d_d_msg")]
    d_msg: usize,
    #[serde(default = "d_d_vocab")]
    d_vocab: usize,
    #[serde(default = "d_n_vocab")]
    n_vocab: usize,
    #[serde(default = "d_l_max")]
    l_max: usize,
    #[serde(default = "d_t")]
    t: usize,
    #[serde(default = "d_t0")]
    t_0: f64,
    #[serde(default = "d_t_gumbel")]
    t_gumbel: f64,
    #[serde(default = "d_lr")]
    learning_rate: f64,
    #[serde(default = "d_epsilon")]
    epsilon: f64,
    #[serde(default = "d_reward_mode")]
    reward_mode: RewardMode,
    #[serde(default = "d_active_mask")]
    active_mask: ActiveMask,
    #[serde(default = "d_network")]
    network: String,
    #[serde(default = "d_beta")]
    beta: f64,
    #[serde(default)]
    graph_file: Option<String>,
    #[serde(default)]
    literal_distance_logits: bool,
    #[serde(default)]
    seed: u64,
    #[serde(default = "d_episodes")]
    episodes: u64,
    #[serde(default = "d_ckpt_interval")]
    checkpoint_interval: u64,
    #[serde(default = "d_eval_episodes")]
    eval_episodes: usize,
    #[serde(default)]
    out_dir: Option<String>,
}

fn d_n() -> usize {
    100
}
fn d_d() -> usize {
    2
}
fn d_d_msg() -> usize {
    16
}
fn d_d_vocab() -> usize {
    16
}
fn d_n_vocab() -> usize {
    32
}
fn d_l_max() -> usize {
    5
}
fn d_t() -> usize {
    5
}
fn d_t0() -> f64 {
    0.2
}
fn d_t_gumbel() -> f64 {
    0.5
}
fn d_lr() -> f64 {
    0.001
}
fn d_epsilon() -> f64 {
    0.5
}
fn d_reward_mode() -> RewardMode {
    RewardMode::Biased
}
fn d_active_mask() -> ActiveMask {
    ActiveMask::Both
}
fn d_network() -> String {
    "rgg".into()
}
fn d_beta() -> f64 {
    0.05
}
fn d_episodes() -> u64 {
    10_000
}
fn d_ckpt_interval() -> u64 {
    1_000
}
fn d_eval_episodes() -> usize {
    500
}

impl ConfigFile {
    fn game_config(&self) -> Result<GameConfig> {
        let network = match self.network.as_str() {
            "rgg" => NetworkSource::Rgg { beta: self.beta },
            "file" => {
                let path = self.graph_file.clone().ok_or_else(|| {
                    ArenaError::Config("network \"file\" requires graph_file".into())
                })?;
                NetworkSource::File { path }
            }
            other => {
                return Err(ArenaError::Config(format!(
                    "network must be \"rgg\" or \"file\", got {other:?}"
                )))
            }
        };
        let cfg = GameConfig {
            n: self.n,
            d: self.d,
            d_msg: self.d_msg,
            d_vocab: self.d_vocab,
            n_vocab: self.n_vocab,
            l_max: self.l_max,
            t: self.t,
            t0: self.t_0,
            t_gumbel: self.t_gumbel,
            learning_rate: self.learning_rate,
            epsilon: self.epsilon,
            reward_mode: self.reward_mode,
            active_mask: self.active_mask,
            network,
            literal_distance_logits: self.literal_distance_logits,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Parser)]
#[command(
    name = "election-arena",
    about = "Networked voting game with emergent discrete communication",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum MaskArg {
    Both,
    C1,
    C2,
}

impl From<MaskArg> for ActiveMask {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Both => ActiveMask::Both,
            MaskArg::C1 => ActiveMask::C1Only,
            MaskArg::C2 => ActiveMask::C2Only,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train policies and the communication engine from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate win rates of a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mask: MaskArg,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        /// Evaluation seed; defaults to the training seed plus 1000000.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Edge-list graph overriding the checkpoint's fixed network.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record test episodes on a fixed graph and export language analysis.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Edge-list file of the fixed network to analyze on.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, value_enum, default_value = "both")]
        mask: MaskArg,
        /// Number of language clusters.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Ground-truth community labels ("node_id,community" lines) to
        /// score the language clustering against.
        #[arg(long)]
        communities: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a random geometric graph and write its edge list and
    /// embeddings.
    GenGraph {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_out_dir(explicit: Option<PathBuf>, from_config: Option<&str>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    if let Some(p) = from_config {
        return Ok(PathBuf::from(p));
    }
    if let Ok(p) = std::env::var(OUT_DIR_ENV) {
        if !p.is_empty() {
            return Ok(PathBuf::from(p));
        }
    }
    Err(ArenaError::Config(format!(
        "no output directory: pass --out, set out_dir in the config, or set {OUT_DIR_ENV}"
    )))
}

/// Entry point used by the binary; returns the process exit code.
pub fn run_cli<I>(argv: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, seed, out } => cmd_train(&config, seed, out),
        Command::Eval {
            checkpoint,
            mask,
            episodes,
            seed,
            workers,
            graph,
            out,
        } => cmd_eval(&checkpoint, mask.into(), episodes, seed, workers, graph, out),
        Command::Analyze {
            checkpoint,
            graph,
            episodes,
            mask,
            k,
            seed,
            workers,
            communities,
            out,
        } => cmd_analyze(
            &checkpoint,
            &graph,
            episodes,
            mask.into(),
            k,
            seed,
            workers,
            communities,
            out,
        ),
        Command::GenGraph {
            n,
            d,
            beta,
            seed,
            out,
        } => cmd_gen_graph(n, d, beta, seed, &out),
    }
}

fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let text = fs::read_to_string(config_path).map_err(|e| ArenaError::io(config_path, e))?;
    let file: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| ArenaError::Config(format!("{}: {e}", config_path.display())))?;
    let mut game = file.game_config()?;
    if let Some(s) = seed {
        game.seed = s;
    }
    let out_dir = resolve_out_dir(out, file.out_dir.as_deref())?;
    let fixed_graph = load_fixed_graph(&game)?;
    if let Some(g) = &fixed_graph {
        if !g.is_connected() {
            eprintln!("warning: fixed network is not connected; spectral initialization may have degenerate rows");
        }
    }
    let run = RunConfig {
        game,
        episodes: file.episodes,
        checkpoint_interval: file.checkpoint_interval,
        out_dir: Some(out_dir.clone()),
        fixed_graph,
    };
    let report = train(&run)?;
    println!(
        "trained {} episodes: C1 wins {}, C2 wins {}, ties {} (artifacts in {})",
        report.episodes,
        report.c1_wins,
        report.c2_wins,
        report.ties,
        out_dir.display()
    );
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    mask: ActiveMask,
    episodes: usize,
    seed: Option<u64>,
    workers: usize,
    graph: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = ckpt.game.clone();
    let fixed = match graph {
        Some(p) => Some(load_edge_list(p)?),
        None => load_fixed_graph(&cfg)?,
    };
    let eval_seed = seed.unwrap_or(cfg.seed + 1_000_000);
    let row = evaluate_winrates(
        &ckpt.store,
        &cfg,
        fixed.as_ref(),
        episodes,
        mask,
        eval_seed,
        workers,
    )?;
    println!(
        "mask={} episodes={}: C1 {:.4}, C2 {:.4}, ties {:.4}",
        row.mask, row.episodes, row.c1_frac, row.c2_frac, row.tie_frac
    );
    let out_dir = resolve_out_dir(out, None)?;
    fs::create_dir_all(&out_dir).map_err(|e| ArenaError::io(&out_dir, e))?;
    let mut table = ScoreTable::default();
    table.push(row);
    write_scores_csv(&out_dir.join("scores.csv"), &table)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    checkpoint: &Path,
    graph_path: &Path,
    episodes: usize,
    mask: ActiveMask,
    k: usize,
    seed: Option<u64>,
    workers: usize,
    communities: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let graph = load_edge_list(graph_path)?;
    if !graph.is_connected() {
        eprintln!("warning: analysis graph is not connected");
    }
    // analysis always runs on the fixed graph for node correspondence
    let cfg = GameConfig {
        n: graph.n(),
        network: NetworkSource::File {
            path: graph_path.display().to_string(),
        },
        ..ckpt.game.clone()
    };
    let eval_seed = seed.unwrap_or(cfg.seed + 2_000_000);
    let out_dir = resolve_out_dir(out, None)?;
    fs::create_dir_all(&out_dir).map_err(|e| ArenaError::io(&out_dir, e))?;

    let traces = collect_traces(
        &ckpt.store,
        &cfg,
        Some(&graph),
        episodes,
        mask,
        eval_seed,
        workers,
    )?;
    write_traces_jsonl(&out_dir.join("traces.jsonl"), &traces)?;

    let w = build_member_symbol_matrix(&traces, cfg.n, cfg.n_vocab)?;
    write_count_matrix_csv(&out_dir.join("member_symbol.csv"), &w.counts)?;
    let x = tfidf_transform(&w.counts);
    write_real_matrix_csv(&out_dir.join("tfidf.csv"), &x)?;

    let stats = ngram_stats(&traces);
    write_ngrams_csv(&out_dir.join("ngrams.csv"), &stats)?;

    let clusters = spectral_cluster(&x, k)?;
    write_labels_csv(&out_dir.join("clusters.csv"), &clusters)?;
    let silent = clusters.silent.iter().filter(|&&s| s).count();
    println!(
        "analyzed {episodes} episodes on {} nodes: {k} language clusters, {silent} silent members",
        cfg.n
    );

    if let Some(path) = communities {
        let truth = read_labels(&path, cfg.n)?;
        let score = nmi(&clusters.labels, &truth);
        println!("cluster-community NMI: {score:.4}");
    }
    Ok(())
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| ArenaError::io(path, e))?;
    let mut labels = vec![usize::MAX; n];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b) = (parts.next(), parts.next());
        let (Some(a), Some(b)) = (a, b) else {
            return Err(ArenaError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected \"node_id,community\"".into(),
            });
        };
        if lineno == 0 && a.parse::<usize>().is_err() {
            continue; // header row
        }
        let node: usize = a.trim().parse().map_err(|e| ArenaError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad node id: {e}"),
        })?;
        let label: usize = b.trim().parse().map_err(|e| ArenaError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad community label: {e}"),
        })?;
        if node >= n {
            return Err(ArenaError::Validation(format!(
                "node id {node} out of range for n={n}"
            )));
        }
        labels[node] = label;
    }
    if labels.iter().any(|&l| l == usize::MAX) {
        return Err(ArenaError::Validation(
            "community file must label every node".into(),
        ));
    }
    Ok(labels)
}

fn cmd_gen_graph(n: usize, d: usize, beta: f64, seed: u64, out: &Path) -> Result<()> {
    let mut rng = stream_rng(seed, Stream::Graph, 0);
    let graph = sample_rgg(n, d, beta, &mut rng)?;
    write_graph_files(&graph, out)?;
    println!(
        "wrote {} nodes, {} edges (density {:.4}) to {}",
        graph.n(),
        graph.edge_count(),
        graph.density(),
        out.display()
    );
    Ok(())
}

/// Writes the edge list to `out` and node embeddings to `out` with an
/// extra ".emb" suffix ("n d" header, then one row per node).
pub fn write_graph_files(graph: &Graph, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| ArenaError::io(parent, e))?;
        }
    }
    fs::write(out, graph.to_edge_list()).map_err(|e| ArenaError::io(out, e))?;
    if let Some(emb) = graph.embeddings() {
        let mut text = String::new();
        use std::fmt::Write as _;
        let d = emb.first().map_or(0, |e| e.len());
        let _ = writeln!(text, "{} {}", graph.n(), d);
        for row in emb {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(text, "{}", cells.join(" "));
        }
        let emb_path = PathBuf::from(format!("{}.emb", out.display()));
        fs::write(&emb_path, text).map_err(|e| ArenaError::io(&emb_path, e))?;
    }
    Ok(())
}
