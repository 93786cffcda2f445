//! Posterior summaries over a recorded trace: co-clustering similarity,
//! point partitions (threshold components or minimum expected variation of
//! information over the sampled partitions), edge-inclusion probabilities,
//! and thresholded point DAGs with deterministic cycle resolution.

use crate::dpmix::Trace;
use crate::graph::Dag;
use crate::{Error, Result};
use std::collections::HashMap;

/// Symmetric matrix of pairwise co-clustering frequencies, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// A clustering of subjects; labels are compacted to 0..K-1 in
/// first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn from_labels(raw: &[usize]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Contract("empty partition".into()));
        }
        let mut map: HashMap<usize, usize> = HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &l in raw {
            let next = map.len();
            labels.push(*map.entry(l).or_insert(next));
        }
        let k = map.len();
        Ok(Partition { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.k
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Pairwise co-clustering frequencies across the trace records.
pub fn similarity(trace: &Trace) -> Result<SimilarityMatrix> {
    if trace.records.is_empty() {
        return Err(Error::Contract("trace has no records".into()));
    }
    let n = trace.meta.n;
    let r = trace.records.len();
    let mut counts = vec![0u64; n * n];
    for rec in &trace.records {
        for i in 0..n {
            for j in (i + 1)..n {
                if rec.xi[i] == rec.xi[j] {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let v = counts[i * n + j] as f64 / r as f64;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

/// Variation of information between two partitions, in nats:
/// H(p1) + H(p2) - 2 I(p1, p2). Zero exactly when the partitions agree up
/// to relabeling.
pub fn variation_of_information(p1: &Partition, p2: &Partition) -> Result<f64> {
    if p1.n() != p2.n() {
        return Err(Error::Contract("partitions cover different subject counts".into()));
    }
    let n = p1.n() as f64;
    let mut joint = vec![0usize; p1.k * p2.k];
    for (&a, &b) in p1.labels.iter().zip(&p2.labels) {
        joint[a * p2.k + b] += 1;
    }
    let entropy = |sizes: &[usize]| -> f64 {
        sizes
            .iter()
            .map(|&s| {
                let p = s as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h1 = entropy(&p1.sizes());
    let h2 = entropy(&p2.sizes());
    let sizes1 = p1.sizes();
    let sizes2 = p2.sizes();
    let mut mi = 0.0;
    for (cell, &c) in joint.iter().enumerate() {
        if c > 0 {
            let (a, b) = (cell / p2.k, cell % p2.k);
            let p = c as f64 / n;
            mi += p * (p / (sizes1[a] as f64 / n) / (sizes2[b] as f64 / n)).ln();
        }
    }
    let vi = h1 + h2 - 2.0 * mi;
    Ok(vi.max(0.0))
}

/// Point clustering by thresholding: connects subjects whose similarity
/// strictly exceeds `z` and returns the connected components. Transitive by
/// construction, so any similarity matrix yields a well-defined partition.
pub fn point_clustering_threshold(s: &SimilarityMatrix, z: f64) -> Result<Partition> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Contract("threshold must lie in (0, 1)".into()));
    }
    let n = s.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if s.get(i, j) > z {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Partition::from_labels(&roots)
}

/// Jensen lower bound on the posterior-expected variation of information of
/// a candidate partition, computed from the similarity matrix:
/// (1/n) sum_i [ln n_{c(i)} + ln sum_j S_ij - 2 ln sum_{j in c(i)} S_ij].
pub fn expected_vi_lower_bound(s: &SimilarityMatrix, p: &Partition) -> Result<f64> {
    let n = s.n();
    if p.n() != n {
        return Err(Error::Contract("partition size differs from similarity matrix".into()));
    }
    let sizes = p.sizes();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row_total = 0.0;
        let mut within = 0.0;
        for j in 0..n {
            let v = s.get(i, j);
            row_total += v;
            if p.labels[j] == p.labels[i] {
                within += v;
            }
        }
        acc += (sizes[p.labels[i]] as f64).ln() + row_total.ln() - 2.0 * within.ln();
    }
    Ok(acc / n as f64)
}

/// Point clustering minimizing the expected-VI lower bound over the distinct
/// partitions that appear in the trace. Ties break toward fewer clusters,
/// then toward the earliest record.
pub fn point_clustering_minvi(s: &SimilarityMatrix, trace: &Trace) -> Result<Partition> {
    if trace.records.is_empty() {
        return Err(Error::Contract("trace has no records".into()));
    }
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut candidates: Vec<Partition> = Vec::new();
    for rec in &trace.records {
        let p = Partition::from_labels(&rec.xi)?;
        if !seen.contains_key(&p.labels) {
            seen.insert(p.labels.clone(), candidates.len());
            candidates.push(p);
        }
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (idx, cand) in candidates.iter().enumerate() {
        let score = expected_vi_lower_bound(s, cand)?;
        let key = (score, cand.n_clusters(), idx);
        let better = match best {
            None => true,
            Some((bs, bk, bi)) => {
                score < bs - 1e-12
                    || ((score - bs).abs() <= 1e-12
                        && (cand.n_clusters() < bk
                            || (cand.n_clusters() == bk && idx < bi)))
            }
        };
        if better {
            best = Some(key);
        }
    }
    let (_, _, idx) = best.expect("at least one candidate");
    Ok(candidates[idx].clone())
}

/// Edge-inclusion frequencies, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PpiMatrix {
    q: usize,
    values: Vec<f64>,
}

impl PpiMatrix {
    pub fn from_values(q: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != q * q {
            return Err(Error::Contract("edge-probability matrix shape mismatch".into()));
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Contract("edge probabilities must lie in [0, 1]".into()));
        }
        Ok(PpiMatrix { q, values })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.q + v]
    }
}

/// Posterior probability of each directed edge in subject `i`'s cluster DAG
/// across the trace records.
pub fn ppi(trace: &Trace, i: usize) -> Result<PpiMatrix> {
    if trace.records.is_empty() {
        return Err(Error::Contract("trace has no records".into()));
    }
    if i >= trace.meta.n {
        return Err(Error::Contract(format!("subject {i} out of range")));
    }
    let q = trace.meta.q;
    let mut counts = vec![0u64; q * q];
    for rec in &trace.records {
        let dag = &rec.clusters[rec.xi[i]].dag;
        for (u, v) in dag.edges() {
            counts[u * q + v] += 1;
        }
    }
    let r = trace.records.len() as f64;
    let values = counts.into_iter().map(|c| c as f64 / r).collect();
    PpiMatrix::from_values(q, values)
}

// Finds one directed cycle (as a list of edges) in the adjacency sets, using
// depth-first search from ascending roots with ascending neighbors.
fn find_cycle(q: usize, adj: &[Vec<usize>]) -> Option<Vec<(usize, usize)>> {
    // 0 = unvisited, 1 = on stack, 2 = done.
    let mut mark = vec![0u8; q];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    for root in 0..q {
        if mark[root] != 0 {
            continue;
        }
        stack.push((root, 0));
        mark[root] = 1;
        path.push(root);
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < adj[v].len() {
                let w = adj[v][*next];
                *next += 1;
                match mark[w] {
                    0 => {
                        mark[w] = 1;
                        stack.push((w, 0));
                        path.push(w);
                    }
                    1 => {
                        let start = path.iter().position(|&x| x == w).expect("on path");
                        let cycle_nodes = &path[start..];
                        let mut edges = Vec::with_capacity(cycle_nodes.len());
                        for t in 0..cycle_nodes.len() - 1 {
                            edges.push((cycle_nodes[t], cycle_nodes[t + 1]));
                        }
                        edges.push((v, w));
                        return Some(edges);
                    }
                    _ => {}
                }
            } else {
                mark[v] = 2;
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// Point DAG by edge-probability thresholding: keeps edges with probability
/// strictly above `z`; while the result is cyclic, drops the lowest-
/// probability edge on a detected cycle (ties toward the smallest (u, v)).
pub fn point_dag(p: &PpiMatrix, z: f64) -> Result<Dag> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Contract("threshold must lie in (0, 1)".into()));
    }
    let q = p.q();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); q];
    for u in 0..q {
        for v in 0..q {
            if u != v && p.get(u, v) > z {
                adj[u].push(v);
            }
        }
    }
    while let Some(cycle) = find_cycle(q, &adj) {
        let &(u, v) = cycle
            .iter()
            .min_by(|&&(a, b), &&(c, d)| {
                p.get(a, b)
                    .partial_cmp(&p.get(c, d))
                    .expect("finite probabilities")
                    .then((a, b).cmp(&(c, d)))
            })
            .expect("nonempty cycle");
        let pos = adj[u].iter().position(|&w| w == v).expect("edge present");
        adj[u].remove(pos);
    }
    let edges: Vec<(usize, usize)> = adj
        .iter()
        .enumerate()
        .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
        .collect();
    Dag::from_edges(q, &edges)
}
