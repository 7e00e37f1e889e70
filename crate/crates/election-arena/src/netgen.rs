//! Graph acquisition and episode initialization: random geometric graphs
//! with sparsity control, edge-list loading, a dense symmetric eigensolver
//! and spectral preference initialization.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ArenaError, Result};

/// Undirected simple graph with sorted neighbor lists and optional node
/// embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    neighbors: Vec<Vec<usize>>,
    embeddings: Option<Vec<Vec<f64>>>,
    id: String,
}

impl Graph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)], id: impl Into<String>) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u == v {
                return Err(ArenaError::Validation(format!("self-loop at node {u}")));
            }
            if u >= n || v >= n {
                return Err(ArenaError::Validation(format!(
                    "edge ({u}, {v}) out of range for n={n}"
                )));
            }
            if !neighbors[u].contains(&v) {
                neighbors[u].push(v);
                neighbors[v].push(u);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph {
            n,
            neighbors,
            embeddings: None,
            id: id.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    pub fn density(&self) -> f64 {
        let pairs = self.n * (self.n - 1) / 2;
        self.edge_count() as f64 / pairs as f64
    }

    pub fn embeddings(&self) -> Option<&[Vec<f64>]> {
        self.embeddings.as_deref()
    }

    /// Dense 0/1 adjacency, row-major.
    pub fn adjacency_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                a[i * self.n + j] = 1.0;
            }
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Edge-list text: first line "n m", then one "u v" per edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.n, self.edge_count());
        for i in 0..self.n {
            for &j in &self.neighbors[i] {
                if i < j {
                    let _ = writeln!(s, "{i} {j}");
                }
            }
        }
        s
    }
}

/// Sparsity control for random geometric graphs: the squared-distance
/// threshold delta achieving edge probability beta in dimension d.
#[derive(Clone, Copy, Debug)]
pub struct SparsitySpec {
    pub beta: f64,
    pub d: usize,
    pub delta: f64,
}

impl SparsitySpec {
    pub fn new(beta: f64, d: usize) -> Result<Self> {
        Ok(SparsitySpec {
            beta,
            d,
            delta: delta_for_sparsity(beta, d)?,
        })
    }
}

// ---- regularized lower incomplete gamma ----

/// ln Gamma(x) by the Lanczos approximation.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// P(a, x): series expansion for x < a+1, continued fraction otherwise.
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "reg_lower_gamma: bad arguments");
    if x == 0.0 {
        return 0.0;
    }
    const ITMAX: usize = 500;
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;
    if x < a + 1.0 {
        // series for P(a,x)
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..ITMAX {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // Lentz continued fraction for Q(a,x)
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=ITMAX {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        let q = (-x + a * x.ln() - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Chi-squared CDF with d degrees of freedom.
pub fn chi2_cdf(d: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        reg_lower_gamma(d as f64 / 2.0, x / 2.0)
    }
}

/// delta = (2/d) F_d^{-1}(beta), where F_d is the chi-squared CDF. The
/// inverse is found by bisection to absolute tolerance 1e-12.
pub fn delta_for_sparsity(beta: f64, d: usize) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ArenaError::Domain(format!(
            "sparsity beta must lie in (0,1), got {beta}"
        )));
    }
    assert!(d >= 1, "delta_for_sparsity: d must be positive");
    let df = d as f64;
    let mut lo = 0.0;
    let mut hi = df + 20.0 * (2.0 * df).sqrt() + 50.0;
    debug_assert!(chi2_cdf(d, hi) > beta);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(d, mid) < beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((2.0 / df) * 0.5 * (lo + hi))
}

/// Random geometric graph: embeddings i.i.d. N(0, I/d), edge iff the
/// squared distance is at most delta(beta, d). Embeddings are retained for
/// preference initialization.
pub fn sample_rgg<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    beta: f64,
    rng: &mut R,
) -> Result<Graph> {
    assert!(n >= 2, "sample_rgg: need at least two nodes");
    let delta = delta_for_sparsity(beta, d)?;
    let scale = 1.0 / (d as f64).sqrt();
    let embeddings: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale
                })
                .collect()
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dist2: f64 = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist2 <= delta {
                edges.push((i, j));
            }
        }
    }
    let mut g = Graph::from_edges(n, &edges, "rgg")?;
    g.embeddings = Some(embeddings);
    Ok(g)
}

/// Parses the edge-list format: first line "n m", then m lines "u v" with
/// 0-based ids. Duplicate edges collapse; self-loops are rejected.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ArenaError::io(path, e))?;
    parse_edge_list(&text, &path.display().to_string())
}

pub fn parse_edge_list(text: &str, origin: &str) -> Result<Graph> {
    let mut lines = text.lines().enumerate();
    let (n, m) = loop {
        let Some((lineno, line)) = lines.next() else {
            return Err(ArenaError::Parse {
                path: origin.to_string(),
                line: 1,
                msg: "empty file".to_string(),
            });
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>, lineno: usize| -> Result<usize> {
            tok.ok_or_else(|| ArenaError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: "expected \"n m\"".to_string(),
            })?
            .parse()
            .map_err(|e| ArenaError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: format!("bad integer: {e}"),
            })
        };
        break (parse(it.next(), lineno)?, parse(it.next(), lineno)?);
    };
    let mut edges = Vec::with_capacity(m);
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next_id = || -> Result<usize> {
            it.next()
                .ok_or_else(|| ArenaError::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    msg: "expected \"u v\"".to_string(),
                })?
                .parse()
                .map_err(|e| ArenaError::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    msg: format!("bad integer: {e}"),
                })
        };
        let u = next_id()?;
        let v = next_id()?;
        edges.push((u, v));
    }
    if edges.len() != m {
        return Err(ArenaError::Parse {
            path: origin.to_string(),
            line: text.lines().count(),
            msg: format!("header promised {m} edges, found {}", edges.len()),
        });
    }
    Graph::from_edges(n, &edges, format!("file:{origin}"))
}

// ---- symmetric eigendecomposition ----

/// Eigenvalues (descending) and orthonormal eigenvectors (columns) of a
/// symmetric matrix, by cyclic Jacobi rotations. The sign of each
/// eigenvector is fixed so its largest-magnitude component is positive.
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// Row-major n x n; column k is the eigenvector for values[k].
    pub vectors: Vec<f64>,
    pub n: usize,
}

impl EigenDecomposition {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.vectors[i * self.n + k]).collect()
    }
}

pub fn sym_eigen(m: &[f64], n: usize) -> EigenDecomposition {
    assert_eq!(m.len(), n * n, "sym_eigen: not square");
    for i in 0..n {
        for j in (i + 1)..n {
            assert!(
                (m[i * n + j] - m[j * n + i]).abs() < 1e-10,
                "sym_eigen: input not symmetric"
            );
        }
    }
    let mut a = m.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) >= 1e-10 && sweeps < 100 {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let mut values = Vec::with_capacity(n);
    let mut vectors = vec![0.0; n * n];
    for (k, &src) in order.iter().enumerate() {
        values.push(a[src * n + src]);
        // sign: largest-magnitude component positive
        let mut big = 0;
        for i in 1..n {
            if v[i * n + src].abs() > v[big * n + src].abs() {
                big = i;
            }
        }
        let flip = if v[big * n + src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[i * n + k] = flip * v[i * n + src];
        }
    }
    EigenDecomposition { values, vectors, n }
}

/// Row-normalized matrix of the d leading eigenvectors of the adjacency.
pub struct SpectralInit {
    /// n rows of length d, unit Euclidean norm (or zero in degenerate
    /// cases, listed in `zero_rows`).
    pub rows: Vec<Vec<f64>>,
    pub zero_rows: Vec<usize>,
    pub connected: bool,
}

pub fn spectral_init(g: &Graph, d: usize) -> SpectralInit {
    let n = g.n();
    assert!(d <= n, "spectral_init: d must not exceed n");
    let eig = sym_eigen(&g.adjacency_dense(), n);
    let mut rows = Vec::with_capacity(n);
    let mut zero_rows = Vec::new();
    for i in 0..n {
        let mut row: Vec<f64> = (0..d).map(|k| eig.vectors[i * n + k]).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut row {
                *x /= norm;
            }
        } else {
            zero_rows.push(i);
        }
        rows.push(row);
    }
    SpectralInit {
        rows,
        zero_rows,
        connected: g.is_connected(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    #[test]
    fn delta_for_sparsity_d2_closed_forms() {
        // F_2(x) = 1 - e^(-x/2), so F_2(2) = 1 - e^-1
        let beta = 1.0 - (-1.0f64).exp();
        let delta = delta_for_sparsity(beta, 2).unwrap();
        assert!((delta - 2.0).abs() < 1e-10, "delta={delta}");

        let delta2 = delta_for_sparsity(0.05, 2).unwrap();
        let oracle = -2.0 * (0.95f64).ln();
        assert!((delta2 - oracle).abs() < 1e-10);
        assert!((delta2 - 0.102586).abs() < 1e-6);
    }

    #[test]
    fn delta_for_sparsity_d4_matches_closed_form_bisection() {
        // F_4(x) = 1 - e^(-x/2)(1 + x/2); independent bisection oracle
        let f4 = |x: f64| 1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0);
        let mut lo = 0.0;
        let mut hi = 50.0;
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if f4(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle_delta = (2.0 / 4.0) * 0.5 * (lo + hi);
        let delta = delta_for_sparsity(0.5, 4).unwrap();
        assert!((delta - oracle_delta).abs() < 1e-10);
    }

    #[test]
    fn delta_for_sparsity_rejects_bad_beta() {
        assert!(delta_for_sparsity(0.0, 2).is_err());
        assert!(delta_for_sparsity(1.0, 2).is_err());
        assert!(delta_for_sparsity(-0.5, 2).is_err());
    }

    #[test]
    fn cdf_of_inverse_round_trips() {
        for &d in &[1usize, 2, 4, 8] {
            for i in 1..=99 {
                let beta = i as f64 / 100.0;
                let delta = delta_for_sparsity(beta, d).unwrap();
                let back = chi2_cdf(d, d as f64 * delta / 2.0);
                assert!(
                    (back - beta).abs() < 1e-10,
                    "d={d} beta={beta} back={back}"
                );
            }
        }
    }

    #[test]
    fn rgg_edges_match_distance_rule_exactly() {
        let mut rng = stream_rng(5, Stream::Graph, 0);
        let g = sample_rgg(40, 2, 0.1, &mut rng).unwrap();
        let delta = delta_for_sparsity(0.1, 2).unwrap();
        let emb = g.embeddings().unwrap();
        for i in 0..g.n() {
            assert!(!g.has_edge(i, i));
            for j in 0..g.n() {
                if i == j {
                    continue;
                }
                let dist2: f64 = emb[i]
                    .iter()
                    .zip(&emb[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert_eq!(g.has_edge(i, j), dist2 <= delta);
                assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
            }
        }
    }

    #[test]
    fn rgg_single_pair_edge_rate_is_binomial() {
        // edge indicator for one pair is Bernoulli(beta)
        let beta = 0.05;
        let trials = 100_000;
        let mut rng = stream_rng(17, Stream::Graph, 1);
        let mut hits = 0usize;
        for _ in 0..trials {
            let g = sample_rgg(2, 2, beta, &mut rng).unwrap();
            if g.has_edge(0, 1) {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        let sigma = (beta * (1.0 - beta) / trials as f64).sqrt();
        assert!(
            (rate - beta).abs() < 3.0 * sigma,
            "rate={rate} beta={beta} sigma={sigma}"
        );
    }

    #[test]
    fn edge_list_round_trip_and_errors() {
        let g = parse_edge_list("3 2\n0 1\n1 2\n", "test").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edge_count(), 2);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 2) && !g.has_edge(0, 2));

        let err = parse_edge_list("6 1\n5 5\n", "test").unwrap_err();
        assert!(matches!(err, ArenaError::Validation(_)));

        let err2 = parse_edge_list("3 1\n0 x\n", "test").unwrap_err();
        match err2 {
            ArenaError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        // duplicate edges collapse
        let g2 = parse_edge_list("2 2\n0 1\n1 0\n", "test").unwrap();
        assert_eq!(g2.edge_count(), 1);
    }

    #[test]
    fn sym_eigen_identity_and_2x2() {
        let eig = sym_eigen(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3);
        for v in &eig.values {
            assert!((v - 1.0).abs() < 1e-12);
        }

        let eig2 = sym_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((eig2.values[0] - 3.0).abs() < 1e-10);
        assert!((eig2.values[1] - 1.0).abs() < 1e-10);
        let v0 = eig2.vector(0);
        let v1 = eig2.vector(1);
        let r = 1.0 / 2.0f64.sqrt();
        assert!((v0[0].abs() - r).abs() < 1e-10 && (v0[1].abs() - r).abs() < 1e-10);
        assert!(v0[0] * v0[1] > 0.0, "(1,1) direction");
        assert!(v1[0] * v1[1] < 0.0, "(1,-1) direction");
    }

    #[test]
    fn sym_eigen_residuals_and_orthonormality() {
        let mut rng = stream_rng(3, Stream::Graph, 2);
        let n = 10;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let x = rng.random_range(-1.0..1.0);
                m[i * n + j] = x;
                m[j * n + i] = x;
            }
        }
        let eig = sym_eigen(&m, n);
        for k in 0..n {
            let v = eig.vector(k);
            // residual M v - lambda v
            for i in 0..n {
                let mut mv = 0.0;
                for j in 0..n {
                    mv += m[i * n + j] * v[j];
                }
                assert!((mv - eig.values[k] * v[i]).abs() < 1e-8);
            }
            for l in 0..n {
                let u = eig.vector(l);
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                let expect = if l == k { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
        }
        // descending order
        for k in 1..n {
            assert!(eig.values[k - 1] >= eig.values[k] - 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "not symmetric")]
    fn sym_eigen_rejects_asymmetric_input() {
        sym_eigen(&[1.0, 2.0, 0.0, 1.0], 2);
    }

    #[test]
    fn spectral_init_rows_are_unit_norm() {
        let mut rng = stream_rng(11, Stream::Graph, 3);
        let g = sample_rgg(25, 2, 0.2, &mut rng).unwrap();
        let init = spectral_init(&g, 2);
        for (i, row) in init.rows.iter().enumerate() {
            if init.zero_rows.contains(&i) {
                continue;
            }
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_init_complete_graph_rows_identical() {
        // K4: leading eigenvector is proportional to the all-ones vector
        let edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let g = Graph::from_edges(4, &edges, "k4").unwrap();
        let init = spectral_init(&g, 1);
        for row in &init.rows {
            assert!((row[0] - init.rows[0][0]).abs() < 1e-10);
            assert!((row[0].abs() - 1.0).abs() < 1e-10);
        }
        assert!(init.connected);
    }

    #[test]
    fn spectral_init_matches_power_iteration_oracle() {
        // deflated power iteration as an independent eigensolver
        let mut rng = stream_rng(29, Stream::Graph, 4);
        let g = sample_rgg(30, 2, 0.25, &mut rng).unwrap();
        let n = g.n();
        let a = g.adjacency_dense();

        let matvec = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
                .collect()
        };
        let mut basis: Vec<(f64, Vec<f64>)> = Vec::new();
        for k in 0..2 {
            let mut v: Vec<f64> = (0..n)
                .map(|i| ((i * 7 + k * 3 + 1) as f64).sin())
                .collect();
            for _ in 0..20_000 {
                for (lam, u) in &basis {
                    let _ = lam;
                    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    for (x, y) in v.iter_mut().zip(u) {
                        *x -= dot * y;
                    }
                }
                let w = matvec(&v);
                let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                v = w.into_iter().map(|x| x / norm).collect();
            }
            let av = matvec(&v);
            let lam: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
            basis.push((lam, v));
        }

        let init = spectral_init(&g, 2);
        // compare row-wise up to sign after the same row normalization
        for i in 0..n {
            let mut row = vec![basis[0].1[i], basis[1].1[i]];
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for x in &mut row {
                *x /= norm;
            }
            for k in 0..2 {
                assert!(
                    (row[k].abs() - init.rows[i][k].abs()).abs() < 1e-6,
                    "row {i} col {k}: {} vs {}",
                    row[k],
                    init.rows[i][k]
                );
            }
        }
    }
}
