//! Evaluation procedure: win-rate tables under active-candidate masks,
//! member-symbol matrix, tf-idf, spectral clustering of language usage and
//! n-gram statistics, plus file exports for external plotting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commengine::Sender;
use crate::diffcore::ParamStore;
use crate::env::{ActiveMask, GameConfig, RewardMode};
use crate::error::{ArenaError, Result};
use crate::netgen::{sym_eigen, Graph};
use crate::trainer::{episode_graph, run_episode, EpisodeOptions, EpisodeTrace};

/// One evaluation row: win fractions under a (mode, mask) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    pub mode: RewardMode,
    pub mask: ActiveMask,
    pub c1_frac: f64,
    pub c2_frac: f64,
    pub tie_frac: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn push(&mut self, row: ScoreRow) {
        self.rows.push(row);
    }
}

/// Runs `f` over episode indices, fanning out across `workers` threads.
/// Results are ordered by episode index regardless of scheduling.
pub fn run_episodes_parallel<T, F>(episodes: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    if workers <= 1 || episodes <= 1 {
        return (0..episodes as u64).map(f).collect();
    }
    let mut results: Vec<Option<T>> = (0..episodes).map(|_| None).collect();
    let chunk = episodes.div_ceil(workers);
    std::thread::scope(|s| {
        for (w, slice) in results.chunks_mut(chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (off, slot) in slice.iter_mut().enumerate() {
                    *slot = Some(f((w * chunk + off) as u64));
                }
            });
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}

fn eval_game_config(cfg: &GameConfig, mask: ActiveMask, eval_seed: u64) -> GameConfig {
    GameConfig {
        active_mask: mask,
        seed: eval_seed,
        ..cfg.clone()
    }
}

/// Plays `episodes` test episodes without parameter updates and tallies
/// the winner (argmax of vote counts; equal counts tie).
pub fn evaluate_winrates(
    store: &ParamStore,
    cfg: &GameConfig,
    fixed_graph: Option<&Graph>,
    episodes: usize,
    mask: ActiveMask,
    eval_seed: u64,
    workers: usize,
) -> Result<ScoreRow> {
    let ecfg = eval_game_config(cfg, mask, eval_seed);
    let prefs_cache = fixed_graph.map(|g| crate::env::initial_preferences(&ecfg, g));
    let outcomes = run_episodes_parallel(episodes, workers, |ep| {
        let graph = episode_graph(&ecfg, fixed_graph, ep).expect("episode graph");
        let owned;
        let prefs: &[Vec<f64>] = match &prefs_cache {
            Some(p) => p,
            None => {
                owned = crate::env::initial_preferences(&ecfg, &graph);
                &owned
            }
        };
        let opts = EpisodeOptions {
            episode: ep,
            hard: true,
            mask,
            record: false,
        };
        let out = run_episode(&ecfg, &graph, prefs, store, &opts);
        (out.record.n1, out.record.n2)
    });
    let mut c1 = 0usize;
    let mut c2 = 0usize;
    let mut ties = 0usize;
    for (n1, n2) in outcomes {
        match n1.cmp(&n2) {
            std::cmp::Ordering::Greater => c1 += 1,
            std::cmp::Ordering::Less => c2 += 1,
            std::cmp::Ordering::Equal => ties += 1,
        }
    }
    Ok(ScoreRow {
        mode: cfg.reward_mode,
        mask,
        c1_frac: c1 as f64 / episodes as f64,
        c2_frac: c2 as f64 / episodes as f64,
        tie_frac: ties as f64 / episodes as f64,
        episodes,
    })
}

/// Records full traces over test episodes (no parameter updates).
pub fn collect_traces(
    store: &ParamStore,
    cfg: &GameConfig,
    fixed_graph: Option<&Graph>,
    episodes: usize,
    mask: ActiveMask,
    eval_seed: u64,
    workers: usize,
) -> Result<Vec<EpisodeTrace>> {
    let ecfg = eval_game_config(cfg, mask, eval_seed);
    let prefs_cache = fixed_graph.map(|g| crate::env::initial_preferences(&ecfg, g));
    Ok(run_episodes_parallel(episodes, workers, |ep| {
        let graph = episode_graph(&ecfg, fixed_graph, ep).expect("episode graph");
        let owned;
        let prefs: &[Vec<f64>] = match &prefs_cache {
            Some(p) => p,
            None => {
                owned = crate::env::initial_preferences(&ecfg, &graph);
                &owned
            }
        };
        let opts = EpisodeOptions {
            episode: ep,
            hard: true,
            mask,
            record: true,
        };
        run_episode(&ecfg, &graph, prefs, store, &opts)
            .trace
            .expect("trace requested")
    }))
}

/// Member-symbol counts: W[i][j] is how often member i uttered word j
/// across the recorded episodes. End/start tokens never appear (traces
/// store word symbols only).
#[derive(Clone, Debug, PartialEq)]
pub struct MemberSymbolMatrix {
    pub counts: Vec<Vec<u64>>,
    pub episodes: usize,
}

pub fn build_member_symbol_matrix(
    traces: &[EpisodeTrace],
    n: usize,
    n_vocab: usize,
) -> Result<MemberSymbolMatrix> {
    if traces.is_empty() {
        return Err(ArenaError::Analysis("no traces supplied".into()));
    }
    let graph_id = &traces[0].graph_id;
    if traces.iter().any(|t| &t.graph_id != graph_id) {
        return Err(ArenaError::Analysis(
            "member-symbol matrix requires traces from a single fixed network".into(),
        ));
    }
    let mut counts = vec![vec![0u64; n_vocab]; n];
    for trace in traces {
        for step in &trace.steps {
            for msg in &step.messages {
                if let Sender::Member(i) = msg.sender {
                    for &s in &msg.symbols {
                        counts[i][s] += 1;
                    }
                }
            }
        }
    }
    Ok(MemberSymbolMatrix {
        counts,
        episodes: traces.len(),
    })
}

/// X[i][j] = W[i][j] * ln(n / df_j) with df_j the number of members that
/// used symbol j; columns nobody uses stay zero.
pub fn tfidf_transform(w: &[Vec<u64>]) -> Vec<Vec<f64>> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let cols = w[0].len();
    let mut df = vec![0usize; cols];
    for row in w {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                df[j] += 1;
            }
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| {
            if d == 0 {
                0.0
            } else {
                (n as f64 / d as f64).ln()
            }
        })
        .collect();
    w.iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &c)| c as f64 * idf[j])
                .collect()
        })
        .collect()
}

/// Cluster assignment plus a marker for silent members (zero tf-idf rows),
/// which are excluded from the affinity and attached to the largest
/// cluster afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub silent: Vec<bool>,
}

/// Spectral clustering of matrix rows with clipped cosine affinity:
/// S_ij = max(0, cos(x_i, x_j)) off the diagonal, L_sym = I - D^-1/2 S
/// D^-1/2, the k smallest-eigenvalue eigenvectors row-normalized, then
/// deterministic k-means (50 restarts, best inertia).
pub fn spectral_cluster(x: &[Vec<f64>], k: usize) -> Result<ClusterResult> {
    assert!(k >= 2, "spectral_cluster: k must be at least 2");
    let n = x.len();
    let silent: Vec<bool> = x
        .iter()
        .map(|row| row.iter().all(|&v| v == 0.0))
        .collect();
    let active: Vec<usize> = (0..n).filter(|&i| !silent[i]).collect();
    if active.is_empty() {
        return Err(ArenaError::Analysis(
            "all members are silent; gather more traces before clustering".into(),
        ));
    }
    if active.len() < k {
        return Err(ArenaError::Analysis(format!(
            "only {} non-silent members but k={k}; gather more traces",
            active.len()
        )));
    }

    let m = active.len();
    let norms: Vec<f64> = active
        .iter()
        .map(|&i| x[i].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut s = vec![0.0; m * m];
    for a in 0..m {
        for b in (a + 1)..m {
            let dot: f64 = x[active[a]]
                .iter()
                .zip(&x[active[b]])
                .map(|(p, q)| p * q)
                .sum();
            let cos = (dot / (norms[a] * norms[b])).max(0.0);
            s[a * m + b] = cos;
            s[b * m + a] = cos;
        }
    }

    let mut inv_sqrt_deg = vec![0.0; m];
    for i in 0..m {
        let d: f64 = (0..m).map(|j| s[i * m + j]).sum();
        inv_sqrt_deg[i] = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    }
    // -L_sym, so the leading eigenvectors of the input are the smallest of L
    let mut neg_l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let norm_s = s[i * m + j] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            neg_l[i * m + j] = norm_s - if i == j { 1.0 } else { 0.0 };
        }
    }
    let eig = sym_eigen(&neg_l, m);
    let mut embedding: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..k).map(|c| eig.vectors[i * m + c]).collect())
        .collect();
    for row in &mut embedding {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }

    let (active_labels, _) = kmeans(&embedding, k, 50);

    // silent members join the largest cluster
    let mut sizes = vec![0usize; k];
    for &l in &active_labels {
        sizes[l] += 1;
    }
    let majority = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut labels = vec![majority; n];
    for (pos, &i) in active.iter().enumerate() {
        labels[i] = active_labels[pos];
    }
    Ok(ClusterResult { labels, silent })
}

/// Deterministic k-means: restart r seeds a ChaCha stream with r,
/// k-means++ initialization, Lloyd iterations with smallest-index tie
/// breaking; the restart with the best inertia wins.
fn kmeans(points: &[Vec<f64>], k: usize, restarts: u64) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let sqdist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(r);
        let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
        while centers.len() < k {
            let d2: Vec<f64> = points
                .iter()
                .map(|p| {
                    centers
                        .iter()
                        .map(|c| sqdist(p, c))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = d2.iter().sum();
            let idx = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centers.push(points[idx].clone());
        }

        let mut labels = vec![0usize; n];
        for _ in 0..200 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut bestc = 0;
                let mut bestd = sqdist(p, &centers[0]);
                for (c, center) in centers.iter().enumerate().skip(1) {
                    let d = sqdist(p, center);
                    if d < bestd {
                        bestd = d;
                        bestc = c;
                    }
                }
                if labels[i] != bestc {
                    labels[i] = bestc;
                    changed = true;
                }
            }
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (i, p) in points.iter().enumerate() {
                counts[labels[i]] += 1;
                for (s, v) in sums[labels[i]].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // re-seed an empty cluster with the point farthest
                    // from its center (smallest index on ties)
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            sqdist(&points[a], &centers[labels[a]])
                                .partial_cmp(&sqdist(&points[b], &centers[labels[b]]))
                                .unwrap()
                                .then(b.cmp(&a))
                        })
                        .unwrap();
                    centers[c] = points[far].clone();
                    labels[far] = c;
                    changed = true;
                } else {
                    for (s, cv) in sums[c].iter().zip(centers[c].iter_mut()) {
                        *cv = s / counts[c] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points
            .iter()
            .enumerate()
            .map(|(i, p)| sqdist(p, &centers[labels[i]]))
            .sum();
        if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
            best = Some((labels, inertia));
        }
    }
    best.unwrap()
}

/// Normalized mutual information between two labelings, 2I/(H1+H2) with
/// natural logs. Two trivial (single-cluster) partitions score 1; a
/// trivial against a non-trivial scores 0.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "nmi: label lengths differ");
    let n = a.len();
    assert!(n > 0, "nmi: empty labelings");
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    let w = 1.0 / n as f64;
    for i in 0..n {
        *joint.entry((a[i], b[i])).or_insert(0.0) += w;
        *pa.entry(a[i]).or_insert(0.0) += w;
        *pb.entry(b[i]).or_insert(0.0) += w;
    }
    let entropy = |p: &BTreeMap<usize, f64>| -> f64 {
        -p.values().map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>()
    };
    let ha = entropy(&pa);
    let hb = entropy(&pb);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &pxy) in &joint {
        mi += pxy * (pxy / (pa[&x] * pb[&y])).ln();
    }
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

/// Normalized unigram/bigram tables for one speaker class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassStats {
    pub unigrams: BTreeMap<usize, f64>,
    pub bigrams: BTreeMap<(usize, usize), f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NgramStats {
    pub c1: ClassStats,
    pub c2: ClassStats,
    pub members: ClassStats,
}

/// Unigram and bigram frequencies per speaker class. Bigrams pair adjacent
/// symbols within a message only.
pub fn ngram_stats(traces: &[EpisodeTrace]) -> NgramStats {
    let mut uni: [BTreeMap<usize, u64>; 3] = Default::default();
    let mut bi: [BTreeMap<(usize, usize), u64>; 3] = Default::default();
    for trace in traces {
        for step in &trace.steps {
            for msg in &step.messages {
                let class = match msg.sender {
                    Sender::Candidate(0) => 0,
                    Sender::Candidate(_) => 1,
                    Sender::Member(_) => 2,
                };
                for &s in &msg.symbols {
                    *uni[class].entry(s).or_insert(0) += 1;
                }
                for pair in msg.symbols.windows(2) {
                    *bi[class].entry((pair[0], pair[1])).or_insert(0) += 1;
                }
            }
        }
    }
    let normalize_u = |m: &BTreeMap<usize, u64>| -> BTreeMap<usize, f64> {
        let total: u64 = m.values().sum();
        m.iter()
            .map(|(&k, &v)| (k, v as f64 / total as f64))
            .collect()
    };
    let normalize_b = |m: &BTreeMap<(usize, usize), u64>| -> BTreeMap<(usize, usize), f64> {
        let total: u64 = m.values().sum();
        m.iter()
            .map(|(&k, &v)| (k, v as f64 / total as f64))
            .collect()
    };
    let build = |i: usize| -> ClassStats {
        ClassStats {
            unigrams: if uni[i].is_empty() {
                BTreeMap::new()
            } else {
                normalize_u(&uni[i])
            },
            bigrams: if bi[i].is_empty() {
                BTreeMap::new()
            } else {
                normalize_b(&bi[i])
            },
        }
    };
    NgramStats {
        c1: build(0),
        c2: build(1),
        members: build(2),
    }
}

// ---- exports ----

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| ArenaError::io(parent, e))?;
        }
    }
    Ok(std::io::BufWriter::new(
        fs::File::create(path).map_err(|e| ArenaError::io(path, e))?,
    ))
}

/// CSV with a `s0..s{V-1}` header and one row of counts per member.
pub fn write_count_matrix_csv(path: &Path, w: &[Vec<u64>]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| ArenaError::io(path, e);
    let cols = w.first().map_or(0, |r| r.len());
    let header: Vec<String> = (0..cols).map(|j| format!("s{j}")).collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for row in w {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_real_matrix_csv(path: &Path, x: &[Vec<f64>]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| ArenaError::io(path, e);
    let cols = x.first().map_or(0, |r| r.len());
    let header: Vec<String> = (0..cols).map(|j| format!("s{j}")).collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for row in x {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", cells.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_labels_csv(path: &Path, result: &ClusterResult) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| ArenaError::io(path, e);
    writeln!(out, "node_id,cluster,silent").map_err(io)?;
    for (i, &l) in result.labels.iter().enumerate() {
        writeln!(out, "{i},{l},{}", u8::from(result.silent[i])).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_scores_csv(path: &Path, table: &ScoreTable) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| ArenaError::io(path, e);
    writeln!(out, "mode,mask,c1_frac,c2_frac,tie_frac,episodes").map_err(io)?;
    for r in &table.rows {
        let mode = match r.mode {
            RewardMode::Biased => "biased",
            RewardMode::Unbiased => "unbiased",
        };
        writeln!(
            out,
            "{mode},{},{},{},{},{}",
            r.mask, r.c1_frac, r.c2_frac, r.tie_frac, r.episodes
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_ngrams_csv(path: &Path, stats: &NgramStats) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| ArenaError::io(path, e);
    writeln!(out, "class,kind,first,second,freq").map_err(io)?;
    for (class, cs) in [("C1", &stats.c1), ("C2", &stats.c2), ("members", &stats.members)] {
        for (&s, &f) in &cs.unigrams {
            writeln!(out, "{class},unigram,{s},,{f}").map_err(io)?;
        }
        for (&(a, b), &f) in &cs.bigrams {
            writeln!(out, "{class},bigram,{a},{b},{f}").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    v: u32,
    episode: u64,
    step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    sender: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    symbols: Option<&'a [usize]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<&'a [usize]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prefs: Option<&'a [Vec<f64>]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    votes: Option<&'a [usize]>,
}

/// JSON-lines export: per step one line with the following and preference
/// snapshot, one line per message, and a final votes line per episode.
pub fn write_traces_jsonl(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| ArenaError::io(path, e);
    for trace in traces {
        for step in &trace.steps {
            let line = TraceLine {
                v: trace.schema,
                episode: trace.episode,
                step: step.step,
                sender: None,
                symbols: None,
                f: Some(&step.f),
                prefs: Some(&step.prefs),
                votes: None,
            };
            writeln!(out, "{}", serde_json::to_string(&line).unwrap()).map_err(io)?;
            for msg in &step.messages {
                let line = TraceLine {
                    v: trace.schema,
                    episode: trace.episode,
                    step: step.step,
                    sender: Some(msg.sender.to_string()),
                    symbols: Some(&msg.symbols),
                    f: None,
                    prefs: None,
                    votes: None,
                };
                writeln!(out, "{}", serde_json::to_string(&line).unwrap()).map_err(io)?;
            }
        }
        let line = TraceLine {
            v: trace.schema,
            episode: trace.episode,
            step: trace.steps.len() + 1,
            sender: None,
            symbols: None,
            f: None,
            prefs: None,
            votes: Some(&trace.votes),
        };
        writeln!(out, "{}", serde_json::to_string(&line).unwrap()).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{NetworkSource, RewardRecord};
    use crate::rng::{control_rng, Stream};
    use crate::trainer::{init_param_store, StepTrace, TraceMessage};

    fn trace_with_messages(messages: Vec<TraceMessage>) -> EpisodeTrace {
        EpisodeTrace {
            schema: 1,
            episode: 0,
            config_hash: "x".into(),
            graph_id: "g".into(),
            initial_prefs: vec![],
            steps: vec![StepTrace {
                step: 1,
                f: vec![],
                messages,
                prefs: vec![],
            }],
            votes: vec![],
            reward: RewardRecord {
                n1: 0,
                n2: 0,
                r_c1: 0.0,
                r_c2: 0.0,
                member_reward: 0.0,
            },
        }
    }

    #[test]
    fn member_symbol_matrix_hand_count() {
        // M0 says [3,3,7]; M1 says [7]
        let trace = trace_with_messages(vec![
            TraceMessage {
                sender: Sender::Member(0),
                symbols: vec![3, 3, 7],
            },
            TraceMessage {
                sender: Sender::Member(1),
                symbols: vec![7],
            },
            TraceMessage {
                sender: Sender::Candidate(0),
                symbols: vec![1, 2],
            },
        ]);
        let w = build_member_symbol_matrix(&[trace], 3, 8).unwrap();
        assert_eq!(w.counts[0][3], 2);
        assert_eq!(w.counts[0][7], 1);
        assert_eq!(w.counts[1][7], 1);
        // candidate symbols are not member usage; member 2 is silent
        let total: u64 = w.counts.iter().flatten().sum();
        assert_eq!(total, 4);
        assert!(w.counts[2].iter().all(|&c| c == 0));
    }

    #[test]
    fn member_symbol_matrix_rejects_mixed_graphs() {
        let a = trace_with_messages(vec![]);
        let mut b = trace_with_messages(vec![]);
        b.graph_id = "other".into();
        assert!(build_member_symbol_matrix(&[a, b], 2, 4).is_err());
    }

    #[test]
    fn tfidf_hand_examples() {
        // symbol used by every member gets a zero column
        let w = vec![vec![2, 1], vec![1, 0]];
        let x = tfidf_transform(&w);
        assert_eq!(x[0][0], 0.0);
        assert_eq!(x[1][0], 0.0);
        assert!((x[0][1] - 2.0f64.ln()).abs() < 1e-12);

        let w2 = vec![vec![2, 0], vec![0, 0]];
        let x2 = tfidf_transform(&w2);
        assert!((x2[0][0] - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        assert!((x2[0][0] - 1.3862943611198906).abs() < 1e-12);
        assert_eq!(x2[0][1], 0.0);
        assert_eq!(x2[1], vec![0.0, 0.0]);

        let zeros = vec![vec![0u64; 4]; 3];
        assert!(tfidf_transform(&zeros).iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn tfidf_is_monotone_in_counts() {
        let w = vec![vec![2, 3], vec![0, 1], vec![5, 0]];
        let x = tfidf_transform(&w);
        let mut w2 = w.clone();
        w2[0][0] += 4; // df unchanged
        let x2 = tfidf_transform(&w2);
        assert!(x2[0][0] >= x[0][0]);
    }

    #[test]
    fn spectral_cluster_recovers_orthogonal_blocks_exactly() {
        let mut x: Vec<Vec<f64>> = Vec::new();
        for _ in 0..6 {
            x.push(vec![5.0, 0.0, 0.0, 0.0]);
        }
        for _ in 0..4 {
            x.push(vec![0.0, 0.0, 3.0, 0.0]);
        }
        let res = spectral_cluster(&x, 2).unwrap();
        assert_eq!(res.labels.len(), 10);
        // both clusters non-empty, blocks pure
        let first = res.labels[0];
        assert!(res.labels[..6].iter().all(|&l| l == first));
        let second = res.labels[6];
        assert_ne!(first, second);
        assert!(res.labels[6..].iter().all(|&l| l == second));
        assert!(res.silent.iter().all(|&s| !s));
    }

    fn planted_matrix(noise_pct: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        // 40 members, 32 symbols; community 0 uses symbols 0..16,
        // community 1 uses 16..32, with a noise fraction crossing over
        let mut rng = control_rng(seed, Stream::Eval);
        let mut x = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40usize {
            let comm = usize::from(i >= 20);
            truth.push(comm);
            let mut row = vec![0u64; 32];
            for _ in 0..30 {
                let cross = rng.random_range(0.0..1.0) < noise_pct;
                let block = if cross { 1 - comm } else { comm };
                let s = rng.random_range(0..16) + block * 16;
                row[s] += 1;
            }
            x.push(row);
        }
        (tfidf_transform(&x), truth)
    }

    #[test]
    fn spectral_cluster_beats_planted_noise() {
        let (x, truth) = planted_matrix(0.10, 7);
        let res = spectral_cluster(&x, 2).unwrap();
        // brute-force NMI oracle: direct contingency arithmetic
        let mut cont = [[0f64; 2]; 2];
        for i in 0..40 {
            cont[truth[i]][res.labels[i].min(1)] += 1.0 / 40.0;
        }
        let marg = |v: [f64; 2]| -> f64 {
            -v.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
        };
        let pa = [cont[0][0] + cont[0][1], cont[1][0] + cont[1][1]];
        let pb = [cont[0][0] + cont[1][0], cont[0][1] + cont[1][1]];
        let mut mi = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                if cont[a][b] > 0.0 {
                    mi += cont[a][b] * (cont[a][b] / (pa[a] * pb[b])).ln();
                }
            }
        }
        let oracle = 2.0 * mi / (marg(pa) + marg(pb));
        let lib = nmi(&res.labels, &truth);
        assert!((lib - oracle).abs() < 1e-12, "nmi {lib} vs oracle {oracle}");
        assert!(lib >= 0.8, "nmi {lib} below 0.8 at 10% noise");
    }

    #[test]
    fn spectral_cluster_is_permutation_invariant() {
        let (x, _) = planted_matrix(0.10, 12);
        let res = spectral_cluster(&x, 2).unwrap();
        let n = x.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 17 + 5) % n).collect();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| x[p].clone()).collect();
        let res_p = spectral_cluster(&permuted, 2).unwrap();
        // map back and compare by NMI
        let mut unshuffled = vec![0usize; n];
        for (pos, &orig) in perm.iter().enumerate() {
            unshuffled[orig] = res_p.labels[pos];
        }
        assert_eq!(nmi(&unshuffled, &res.labels), 1.0);
    }

    #[test]
    fn spectral_cluster_handles_silent_rows_and_rejects_empty() {
        let mut x: Vec<Vec<f64>> = Vec::new();
        for _ in 0..4 {
            x.push(vec![1.0, 0.0]);
        }
        for _ in 0..4 {
            x.push(vec![0.0, 1.0]);
        }
        x.push(vec![0.0, 0.0]); // silent
        let res = spectral_cluster(&x, 2).unwrap();
        assert!(res.silent[8]);
        assert!(res.labels[8] < 2);

        let zeros = vec![vec![0.0; 3]; 5];
        let err = spectral_cluster(&zeros, 2).unwrap_err();
        assert!(err.to_string().contains("more traces"));
    }

    #[test]
    fn nmi_reference_points() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0], &[0, 0, 0]), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 2]), 0.0);

        // hand case: direct formula arithmetic
        let a = [0usize, 0, 1, 1];
        let b = [0usize, 1, 1, 1];
        let i_hand = 0.25 * (2.0f64).ln() + 0.25 * (2.0 / 3.0f64).ln() + 0.5 * (4.0 / 3.0f64).ln();
        let ha = (2.0f64).ln();
        let hb = -(0.25 * (0.25f64).ln() + 0.75 * (0.75f64).ln());
        let expect = 2.0 * i_hand / (ha + hb);
        assert!((nmi(&a, &b) - expect).abs() < 1e-12);
    }

    #[test]
    fn ngram_hand_example() {
        let trace = trace_with_messages(vec![TraceMessage {
            sender: Sender::Member(0),
            symbols: vec![3, 7, 3],
        }]);
        let stats = ngram_stats(&[trace]);
        assert!((stats.members.unigrams[&3] - 2.0 / 3.0).abs() < 1e-12);
        assert!((stats.members.unigrams[&7] - 1.0 / 3.0).abs() < 1e-12);
        assert!((stats.members.bigrams[&(3, 7)] - 0.5).abs() < 1e-12);
        assert!((stats.members.bigrams[&(7, 3)] - 0.5).abs() < 1e-12);
        assert!(stats.c1.unigrams.is_empty());

        let empty = ngram_stats(&[]);
        assert!(empty.members.unigrams.is_empty());
        assert!(empty.c1.bigrams.is_empty());
    }

    #[test]
    fn ngram_frequencies_sum_to_one_per_table() {
        let trace = trace_with_messages(vec![
            TraceMessage {
                sender: Sender::Member(0),
                symbols: vec![1, 2, 2, 5],
            },
            TraceMessage {
                sender: Sender::Candidate(1),
                symbols: vec![0, 0],
            },
        ]);
        let stats = ngram_stats(&[trace]);
        for cs in [&stats.members, &stats.c2] {
            let su: f64 = cs.unigrams.values().sum();
            assert!((su - 1.0).abs() < 1e-12);
            let sb: f64 = cs.bigrams.values().sum();
            assert!((sb - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn winrate_fractions_sum_to_one_and_ignore_worker_count() {
        let cfg = GameConfig {
            n: 6,
            t: 3,
            network: NetworkSource::Rgg { beta: 0.4 },
            seed: 3,
            ..GameConfig::default()
        };
        let mut rng = control_rng(cfg.seed, Stream::Init);
        let store = init_param_store(&cfg, &mut rng);
        let one = evaluate_winrates(&store, &cfg, None, 40, ActiveMask::Both, 99, 1).unwrap();
        let four = evaluate_winrates(&store, &cfg, None, 40, ActiveMask::Both, 99, 4).unwrap();
        assert_eq!(one, four, "worker count must not affect results");
        assert!((one.c1_frac + one.c2_frac + one.tie_frac - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_does_not_mutate_parameters() {
        let cfg = GameConfig {
            n: 5,
            t: 2,
            network: NetworkSource::Rgg { beta: 0.5 },
            seed: 8,
            ..GameConfig::default()
        };
        let mut rng = control_rng(cfg.seed, Stream::Init);
        let store = init_param_store(&cfg, &mut rng);
        let before = store.digest();
        let _ = evaluate_winrates(&store, &cfg, None, 10, ActiveMask::C1Only, 5, 2).unwrap();
        let _ = collect_traces(&store, &cfg, None, 5, ActiveMask::Both, 6, 2).unwrap();
        assert_eq!(store.digest(), before);
    }

    #[test]
    fn exports_have_expected_shapes() {
        let dir = std::env::temp_dir().join(format!("emcp_exports_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();

        let w = vec![vec![1u64, 0, 2], vec![0, 0, 0]];
        let wp = dir.join("w.csv");
        write_count_matrix_csv(&wp, &w).unwrap();
        let text = fs::read_to_string(&wp).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "s0,s1,s2");
        assert_eq!(lines[1].split(',').count(), 3);

        let labels = ClusterResult {
            labels: vec![0, 1, 0],
            silent: vec![false, false, true],
        };
        let lp = dir.join("labels.csv");
        write_labels_csv(&lp, &labels).unwrap();
        let text = fs::read_to_string(&lp).unwrap();
        assert!(text.starts_with("node_id,cluster,silent\n0,0,0\n1,1,0\n2,0,1"));

        let trace = trace_with_messages(vec![TraceMessage {
            sender: Sender::Member(2),
            symbols: vec![4, 4],
        }]);
        let tp = dir.join("traces.jsonl");
        write_traces_jsonl(&tp, &[trace]).unwrap();
        let text = fs::read_to_string(&tp).unwrap();
        for line in text.trim().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["v"], 1);
        }
        assert!(text.contains("\"sender\":\"M2\""));
        assert!(text.contains("\"votes\":[]"));

        fs::remove_dir_all(&dir).ok();
    }
}
