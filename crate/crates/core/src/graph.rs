//! Directed acyclic graphs over a small fixed node set, structural
//! constraints, single-edge move operators, the Beta-Binomial skeleton prior,
//! and a Metropolis sampler for the baseline DAG law.
//!
//! Nodes are `0..q` with `q <= 64`; adjacency lives in per-node bit masks and
//! sorted parent lists (the hot structure for count indexing).

use crate::{Error, Result};
use rand::{Rng, RngExt};

/// Largest supported node count (adjacency rows are single machine words).
pub const MAX_NODES: usize = 64;

fn check_q(q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::Contract("node count must be positive".into()));
    }
    if q > MAX_NODES {
        return Err(Error::TooLarge(format!(
            "node count {q} exceeds supported maximum {MAX_NODES}"
        )));
    }
    Ok(())
}

fn bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let b = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(b)
        }
    })
}

/// Immutable DAG. Construction and the move operators preserve acyclicity,
/// a zero diagonal, and at most one orientation per node pair.
#[derive(Debug, Clone)]
pub struct Dag {
    q: usize,
    children: Vec<u64>,
    parents: Vec<u64>,
    // Parents of v, sorted ascending, in parent_flat[v*q..v*q+in_degree(v)].
    // Fixed-stride flat storage keeps a clone to three allocations; entries
    // past a node's degree are meaningless.
    parent_flat: Vec<usize>,
    edge_count: usize,
}

// The children masks determine the graph; the flat parent rows may carry
// stale tails after removals and must stay out of equality and hashing.
impl PartialEq for Dag {
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q && self.children == other.children
    }
}

impl Eq for Dag {}

impl std::hash::Hash for Dag {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.q.hash(state);
        self.children.hash(state);
    }
}

impl Dag {
    /// The edgeless DAG on `q` nodes.
    pub fn empty(q: usize) -> Result<Self> {
        check_q(q)?;
        Ok(Dag {
            q,
            children: vec![0; q],
            parents: vec![0; q],
            parent_flat: vec![0; q * q],
            edge_count: 0,
        })
    }

    /// Builds a DAG from directed edges `(u, v)` meaning `u -> v`.
    pub fn from_edges(q: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut d = Dag::empty(q)?;
        for &(u, v) in edges {
            if u >= q || v >= q || u == v {
                return Err(Error::Contract(format!("invalid edge {u}->{v} for q={q}")));
            }
            if d.has_edge(u, v) || d.has_edge(v, u) {
                return Err(Error::Contract(format!(
                    "duplicate or two-way edge on pair ({u},{v})"
                )));
            }
            d.insert_unchecked(u, v);
        }
        if d.topological_order().is_none() {
            return Err(Error::Contract("edge set contains a directed cycle".into()));
        }
        Ok(d)
    }

    /// Builds a DAG from a dense 0/1 adjacency matrix (`adj[u][v] = 1` iff `u -> v`).
    pub fn from_adjacency(adj: &[Vec<u8>]) -> Result<Self> {
        if !is_acyclic(adj)? {
            return Err(Error::Contract("adjacency matrix contains a directed cycle".into()));
        }
        let mut edges = Vec::new();
        for (u, row) in adj.iter().enumerate() {
            for (v, &cell) in row.iter().enumerate() {
                if cell == 1 {
                    edges.push((u, v));
                }
            }
        }
        Dag::from_edges(adj.len(), &edges)
    }

    fn insert_unchecked(&mut self, u: usize, v: usize) {
        self.children[u] |= 1 << v;
        let deg = self.parents[v].count_ones() as usize;
        self.parents[v] |= 1 << u;
        let row = &mut self.parent_flat[v * self.q..v * self.q + deg + 1];
        let pos = row[..deg].partition_point(|&p| p < u);
        row.copy_within(pos..deg, pos + 1);
        row[pos] = u;
        self.edge_count += 1;
    }

    fn remove_unchecked(&mut self, u: usize, v: usize) {
        self.children[u] &= !(1 << v);
        let deg = self.parents[v].count_ones() as usize;
        self.parents[v] &= !(1 << u);
        let row = &mut self.parent_flat[v * self.q..v * self.q + deg];
        let pos = row[..deg].partition_point(|&p| p < u);
        debug_assert_eq!(row[pos], u);
        row.copy_within(pos + 1..deg, pos);
        row[deg - 1] = 0;
        self.edge_count -= 1;
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.children[u] >> v & 1 == 1
    }

    /// Parents of `v`, sorted ascending.
    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parent_flat[v * self.q..v * self.q + self.in_degree(v)]
    }

    pub fn parents_mask(&self, v: usize) -> u64 {
        self.parents[v]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.parents[v].count_ones() as usize
    }

    /// Directed edges `(u, v)`, sorted by `u` then `v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for u in 0..self.q {
            for v in bits(self.children[u]) {
                out.push((u, v));
            }
        }
        out
    }

    /// Unordered adjacent pairs `(u, v)` with `u < v`, sorted.
    pub fn skeleton_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for u in 0..self.q {
            for v in bits(self.children[u] | self.parents[u]) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Bit mask of all nodes reachable from `v` by directed paths of length >= 1.
    pub fn descendants_mask(&self, v: usize) -> u64 {
        self.descendants_excluding(v, None)
    }

    fn descendants_excluding(&self, v: usize, skip: Option<(usize, usize)>) -> u64 {
        let mut seen = 0u64;
        let mut frontier = match skip {
            Some((a, b)) if a == v => self.children[v] & !(1 << b),
            _ => self.children[v],
        };
        while frontier != 0 {
            seen |= frontier;
            let mut next = 0u64;
            for u in bits(frontier) {
                let mut ch = self.children[u];
                if let Some((a, b)) = skip {
                    if a == u {
                        ch &= !(1 << b);
                    }
                }
                next |= ch;
            }
            frontier = next & !seen;
        }
        seen
    }

    /// Bit mask of all nodes with a directed path of length >= 1 into `v`.
    pub fn ancestors_mask(&self, v: usize) -> u64 {
        let mut seen = 0u64;
        let mut frontier = self.parents[v];
        while frontier != 0 {
            seen |= frontier;
            let mut next = 0u64;
            for u in bits(frontier) {
                next |= self.parents[u];
            }
            frontier = next & !seen;
        }
        seen
    }

    /// Whether there is a directed path `u -> ... -> v` of length >= 1.
    pub fn reaches(&self, u: usize, v: usize) -> bool {
        self.descendants_mask(u) >> v & 1 == 1
    }

    /// A topological order, or `None` when the graph has a cycle.
    /// Among valid orders, the lexicographically smallest is returned.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = (0..self.q).map(|v| self.in_degree(v)).collect();
        let mut ready: Vec<usize> = (0..self.q).rev().filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.q);
        while let Some(v) = ready.pop() {
            order.push(v);
            for w in bits(self.children[v]) {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    let pos = ready.partition_point(|&r| r > w);
                    ready.insert(pos, w);
                }
            }
        }
        (order.len() == self.q).then_some(order)
    }

    /// Whether this DAG violates none of the constraints.
    pub fn satisfies(&self, c: &StructuralConstraints) -> bool {
        if c.q != self.q {
            return false;
        }
        for v in 0..self.q {
            if self.parents[v] & c.forbidden_into[v] != 0 {
                return false;
            }
            if let Some(cap) = c.max_in_degree {
                if self.in_degree(v) > cap {
                    return false;
                }
            }
        }
        true
    }
}

/// Decides acyclicity of a dense 0/1 adjacency matrix by Kahn elimination.
pub fn is_acyclic(adj: &[Vec<u8>]) -> Result<bool> {
    let q = adj.len();
    for (u, row) in adj.iter().enumerate() {
        if row.len() != q {
            return Err(Error::Contract("adjacency matrix is not square".into()));
        }
        if row[u] != 0 {
            return Err(Error::Contract("adjacency diagonal must be zero".into()));
        }
        if row.iter().any(|&c| c > 1) {
            return Err(Error::Contract("adjacency entries must be 0 or 1".into()));
        }
    }
    let mut indeg = vec![0usize; q];
    for row in adj {
        for (v, &cell) in row.iter().enumerate() {
            indeg[v] += cell as usize;
        }
    }
    let mut ready: Vec<usize> = (0..q).filter(|&v| indeg[v] == 0).collect();
    let mut removed = 0;
    while let Some(u) = ready.pop() {
        removed += 1;
        for (v, &cell) in adj[u].iter().enumerate() {
            if cell == 1 {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.push(v);
                }
            }
        }
    }
    Ok(removed == q)
}

/// Edges that may never appear, plus an optional in-degree cap.
///
/// `response` nodes forbid all outgoing edges, `exogenous` nodes all incoming
/// ones; both expand to plain forbidden pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralConstraints {
    q: usize,
    forbidden_into: Vec<u64>,
    max_in_degree: Option<usize>,
}

impl StructuralConstraints {
    /// No restrictions on `q` nodes.
    pub fn none(q: usize) -> Result<Self> {
        check_q(q)?;
        Ok(StructuralConstraints {
            q,
            forbidden_into: vec![0; q],
            max_in_degree: None,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn max_in_degree(&self) -> Option<usize> {
        self.max_in_degree
    }

    pub fn set_max_in_degree(&mut self, cap: Option<usize>) {
        self.max_in_degree = cap;
    }

    /// Forbids the directed edge `u -> v`.
    pub fn forbid(&mut self, u: usize, v: usize) -> Result<()> {
        if u >= self.q || v >= self.q || u == v {
            return Err(Error::Contract(format!("invalid pair ({u},{v}) for q={}", self.q)));
        }
        self.forbidden_into[v] |= 1 << u;
        Ok(())
    }

    /// Declares `u` a response: no outgoing edges.
    pub fn declare_response(&mut self, u: usize) -> Result<()> {
        if u >= self.q {
            return Err(Error::Contract(format!("invalid node {u} for q={}", self.q)));
        }
        for v in 0..self.q {
            if v != u {
                self.forbidden_into[v] |= 1 << u;
            }
        }
        Ok(())
    }

    /// Declares `u` exogenous: no incoming edges.
    pub fn declare_exogenous(&mut self, u: usize) -> Result<()> {
        if u >= self.q {
            return Err(Error::Contract(format!("invalid node {u} for q={}", self.q)));
        }
        self.forbidden_into[u] = !0 & !(1 << u);
        Ok(())
    }

    pub fn allows(&self, u: usize, v: usize) -> bool {
        self.forbidden_into[v] >> u & 1 == 0
    }

    /// Parses the constraint text format: one directive per line, `#` comments.
    /// Directives: `forbid U V`, `exogenous U`, `response U`, where nodes are
    /// 0-based indices or names from `names`.
    pub fn parse(text: &str, names: &[String]) -> Result<Self> {
        let mut c = StructuralConstraints::none(names.len())?;
        let resolve = |tok: &str, line_no: usize| -> Result<usize> {
            if let Ok(idx) = tok.parse::<usize>() {
                if idx < names.len() {
                    return Ok(idx);
                }
                return Err(Error::Data(format!(
                    "constraint line {line_no}: node index {idx} out of range (q={})",
                    names.len()
                )));
            }
            names.iter().position(|n| n == tok).ok_or_else(|| {
                Error::Data(format!("constraint line {line_no}: unknown column name {tok:?}"))
            })
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let fail = |msg: &str| Error::Data(format!("constraint line {line_no}: {msg}"));
            match toks[0] {
                "forbid" => {
                    if toks.len() != 3 {
                        return Err(fail("expected `forbid U V`"));
                    }
                    let u = resolve(toks[1], line_no)?;
                    let v = resolve(toks[2], line_no)?;
                    if u == v {
                        return Err(fail("self pair"));
                    }
                    c.forbid(u, v)?;
                }
                "exogenous" => {
                    if toks.len() != 2 {
                        return Err(fail("expected `exogenous U`"));
                    }
                    let u = resolve(toks[1], line_no)?;
                    c.declare_exogenous(u)?;
                }
                "response" => {
                    if toks.len() != 2 {
                        return Err(fail("expected `response U`"));
                    }
                    let u = resolve(toks[1], line_no)?;
                    c.declare_response(u)?;
                }
                other => return Err(fail(&format!("unknown directive {other:?}"))),
            }
        }
        Ok(c)
    }
}

/// Kind of single-edge move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Insert,
    Delete,
    Reverse,
}

/// A single-edge modification of a DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DagOperator {
    pub kind: OpKind,
    pub u: usize,
    pub v: usize,
}

/// All operators whose application yields an acyclic DAG satisfying `c`,
/// in deterministic (kind, u, v) order.
pub fn enumerate_operators(d: &Dag, c: &StructuralConstraints) -> Vec<DagOperator> {
    let q = d.q();
    let in_deg_ok = |v: usize| c.max_in_degree.map_or(true, |cap| d.in_degree(v) < cap);
    let mut ops = Vec::with_capacity(q * q);
    // Insert u->v: pair empty, direction allowed, no directed path v => u.
    let desc: Vec<u64> = (0..q).map(|v| d.descendants_mask(v)).collect();
    for u in 0..q {
        for v in 0..q {
            if u == v || d.has_edge(u, v) || d.has_edge(v, u) {
                continue;
            }
            if c.allows(u, v) && in_deg_ok(v) && desc[v] >> u & 1 == 0 {
                ops.push(DagOperator { kind: OpKind::Insert, u, v });
            }
        }
    }
    // Delete u->v: always legal for an existing edge.
    for (u, v) in d.edges() {
        ops.push(DagOperator { kind: OpKind::Delete, u, v });
    }
    // Reverse u->v: v->u allowed and no alternative directed path u => v.
    for (u, v) in d.edges() {
        if c.allows(v, u)
            && in_deg_ok(u)
            && d.descendants_excluding(u, Some((u, v))) >> v & 1 == 0
        {
            ops.push(DagOperator { kind: OpKind::Reverse, u, v });
        }
    }
    ops
}

/// Applies `op` to `d`, re-validating that the move is structurally legal.
pub fn apply_operator(d: &Dag, op: &DagOperator) -> Result<Dag> {
    let q = d.q();
    if op.u >= q || op.v >= q || op.u == op.v {
        return Err(Error::Contract(format!("operator nodes ({},{}) invalid", op.u, op.v)));
    }
    let mut out = d.clone();
    match op.kind {
        OpKind::Insert => {
            if d.has_edge(op.u, op.v) || d.has_edge(op.v, op.u) {
                return Err(Error::Contract("insert on an occupied pair".into()));
            }
            if d.reaches(op.v, op.u) {
                return Err(Error::Contract("insert would create a directed cycle".into()));
            }
            out.insert_unchecked(op.u, op.v);
        }
        OpKind::Delete => {
            if !d.has_edge(op.u, op.v) {
                return Err(Error::Contract("delete of a missing edge".into()));
            }
            out.remove_unchecked(op.u, op.v);
        }
        OpKind::Reverse => {
            if !d.has_edge(op.u, op.v) {
                return Err(Error::Contract("reverse of a missing edge".into()));
            }
            if d.descendants_excluding(op.u, Some((op.u, op.v))) >> op.v & 1 == 1 {
                return Err(Error::Contract("reverse would create a directed cycle".into()));
            }
            out.remove_unchecked(op.u, op.v);
            out.insert_unchecked(op.v, op.u);
        }
    }
    Ok(out)
}

/// Beta hyperparameters of the edge-inclusion probability underlying the
/// integrated skeleton prior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DagPriorParams {
    pub a_w: f64,
    pub b_w: f64,
}

impl DagPriorParams {
    pub fn new(a_w: f64, b_w: f64) -> Result<Self> {
        if !(a_w > 0.0) || !(b_w > 0.0) {
            return Err(Error::Config("skeleton prior parameters must be positive".into()));
        }
        Ok(DagPriorParams { a_w, b_w })
    }
}

/// log p(D_new) - log p(D_old) under the integrated skeleton-size prior
/// p(D) ∝ Γ(|S|+a_w)·Γ(M−|S|+b_w) with M = q(q−1)/2.
///
/// Depends on the two skeleton sizes only; evaluated by the log-space
/// recurrence over unit steps in |S|, never by full Gamma evaluation.
pub fn log_prior_ratio(d_new: &Dag, d_old: &Dag, p: &DagPriorParams) -> Result<f64> {
    if d_new.q() != d_old.q() {
        return Err(Error::Contract("prior ratio of DAGs with different node counts".into()));
    }
    let m = (d_new.q() * (d_new.q() - 1) / 2) as f64;
    let target = d_new.edge_count();
    let mut s = d_old.edge_count();
    let mut acc = 0.0;
    // Adding one edge multiplies the prior by (|S|+a_w)/(M-|S|-1+b_w).
    while s < target {
        acc += ((s as f64 + p.a_w) / (m - s as f64 - 1.0 + p.b_w)).ln();
        s += 1;
    }
    while s > target {
        s -= 1;
        acc -= ((s as f64 + p.a_w) / (m - s as f64 - 1.0 + p.b_w)).ln();
    }
    Ok(acc)
}

// Work caps for orientation counting and sampling. Enumeration visits
// 2^free assignments; the peeling recursion visits 3^vertices subsets.
// Components beyond every cap are astronomically unlikely under sparse
// priors and we refuse rather than stall. The enumeration cap is low
// because the expected enumeration cost of a skeleton draw is dominated
// by the largest size it admits: 2^s grows faster than the skeleton size
// tail decays.
const MAX_FREE_PAIRS_PER_COMPONENT: usize = 25;
const MAX_ENUM_FREE_PAIRS: usize = 10;
const MAX_PEEL_VERTICES: usize = 16;
const MAX_SKELETON_REJECTIONS: usize = 100_000;
const MAX_ORIENTATION_REJECTIONS: usize = 4096;

/// One connected component of a skeleton: its vertices, its pairs, and a
/// per-pair flag marking both directions allowed.
struct SkeletonComponent {
    verts: Vec<usize>,
    edges: Vec<(usize, usize)>,
    two_way: Vec<bool>,
    n_free: usize,
}

impl SkeletonComponent {
    fn is_tree(&self) -> bool {
        self.edges.len() == self.verts.len() - 1
    }

    /// Some pair admits no direction at all under `c`.
    fn has_dead_pair(&self, c: &StructuralConstraints) -> bool {
        self.edges
            .iter()
            .any(|&(u, v)| !c.allows(u, v) && !c.allows(v, u))
    }
}

/// Groups skeleton pairs into connected components.
fn skeleton_components(
    q: usize,
    pairs: &[(usize, usize)],
    c: &StructuralConstraints,
) -> Vec<SkeletonComponent> {
    let mut root: Vec<usize> = (0..q).collect();
    fn find(root: &mut Vec<usize>, mut x: usize) -> usize {
        while root[x] != x {
            root[x] = root[root[x]];
            x = root[x];
        }
        x
    }
    for &(u, v) in pairs {
        let (ru, rv) = (find(&mut root, u), find(&mut root, v));
        if ru != rv {
            root[ru] = rv;
        }
    }
    let mut comps: Vec<SkeletonComponent> = Vec::new();
    let mut comp_of = vec![usize::MAX; q];
    for &(u, v) in pairs {
        let r = find(&mut root, u);
        let idx = if comp_of[r] == usize::MAX {
            comp_of[r] = comps.len();
            comps.push(SkeletonComponent {
                verts: Vec::new(),
                edges: Vec::new(),
                two_way: Vec::new(),
                n_free: 0,
            });
            comps.len() - 1
        } else {
            comp_of[r]
        };
        let free = c.allows(u, v) && c.allows(v, u);
        comps[idx].edges.push((u, v));
        comps[idx].two_way.push(free);
        comps[idx].n_free += free as usize;
    }
    for comp in &mut comps {
        let mut verts: Vec<usize> = comp.edges.iter().flat_map(|&(u, v)| [u, v]).collect();
        verts.sort_unstable();
        verts.dedup();
        comp.verts = verts;
    }
    comps
}

/// Reusable buffers for testing whether one assignment of a component's
/// two-way pairs yields an acyclic orientation. Children masks use local
/// vertex indices; acyclicity is decided by stripping source vertices.
struct OrientScratch {
    base_children: Vec<u64>,
    free_pairs: Vec<(usize, usize)>,
    children: Vec<u64>,
}

impl OrientScratch {
    fn new(comp: &SkeletonComponent, c: &StructuralConstraints) -> Self {
        let nv = comp.verts.len();
        let mut local = [usize::MAX; MAX_NODES];
        for (i, &g) in comp.verts.iter().enumerate() {
            local[g] = i;
        }
        let mut base_children = vec![0u64; nv];
        let mut free_pairs = Vec::with_capacity(comp.n_free);
        for (e, &(u, v)) in comp.edges.iter().enumerate() {
            if comp.two_way[e] {
                free_pairs.push((local[u], local[v]));
            } else if c.allows(u, v) {
                base_children[local[u]] |= 1 << local[v];
            } else {
                base_children[local[v]] |= 1 << local[u];
            }
        }
        OrientScratch { base_children, free_pairs, children: vec![0; nv] }
    }

    /// Bit i of `assign` orients the component's i-th two-way pair; one-way
    /// pairs take their only allowed direction.
    fn is_acyclic(&mut self, assign: u64) -> bool {
        self.children.copy_from_slice(&self.base_children);
        for (slot, &(u, v)) in self.free_pairs.iter().enumerate() {
            if assign >> slot & 1 == 1 {
                self.children[u] |= 1 << v;
            } else {
                self.children[v] |= 1 << u;
            }
        }
        let mut alive = if self.children.len() == 64 { !0 } else { (1u64 << self.children.len()) - 1 };
        while alive != 0 {
            let mut has_in = 0u64;
            for u in bits(alive) {
                has_in |= self.children[u];
            }
            let sources = alive & !has_in;
            if sources == 0 {
                return false;
            }
            alive &= !sources;
        }
        true
    }
}

/// Enumerates the assignments of a component's two-way pairs, counting the
/// acyclic ones. With an rng, additionally keeps one uniformly chosen valid
/// assignment (reservoir selection); the kept bits are meaningful only when
/// the count is positive.
fn enumerate_component_orientations<R: Rng + ?Sized>(
    comp: &SkeletonComponent,
    c: &StructuralConstraints,
    mut rng: Option<&mut R>,
) -> (u64, u64) {
    let mut scratch = OrientScratch::new(comp, c);
    let mut count = 0u64;
    let mut kept = 0u64;
    for assign in 0u64..(1 << comp.n_free) {
        if scratch.is_acyclic(assign) {
            count += 1;
            if let Some(r) = rng.as_deref_mut() {
                if r.random_range(0..count) == 0 {
                    kept = assign;
                }
            }
        }
    }
    (count, kept)
}

/// Draws a uniformly random acyclic assignment by flipping a fair coin per
/// two-way pair and retrying on cycles. Every acyclic assignment has the
/// same per-try probability, so an accepted draw is exactly uniform. Returns
/// None when the try budget runs out (the component is too dense for
/// rejection to land, or admits no acyclic orientation at all).
fn sample_orientation_by_rejection<R: Rng + ?Sized>(
    comp: &SkeletonComponent,
    c: &StructuralConstraints,
    rng: &mut R,
) -> Option<u64> {
    debug_assert!(comp.n_free < 64);
    let mask = (1u64 << comp.n_free) - 1;
    let mut scratch = OrientScratch::new(comp, c);
    for _ in 0..MAX_ORIENTATION_REJECTIONS {
        let assign = rng.random::<u64>() & mask;
        if scratch.is_acyclic(assign) {
            return Some(assign);
        }
    }
    None
}

/// Counts a component's constrained acyclic orientations by peeling source
/// sets: a(S) = sum over nonempty independent T within S with no one-way
/// pair directed into T from S minus T of (-1)^(|T|+1) a(S minus T).
///
/// Pinned bits fix a subset of the two-way pairs: where `pin_mask` has bit i
/// set, the component's i-th two-way pair is treated as one-way, directed as
/// stored when bit i of `pin_dirs` is set and reversed otherwise.
fn count_orientations_by_peeling(
    comp: &SkeletonComponent,
    c: &StructuralConstraints,
    pin_mask: u64,
    pin_dirs: u64,
) -> u64 {
    let nv = comp.verts.len();
    let mut local = [usize::MAX; MAX_NODES];
    for (i, &g) in comp.verts.iter().enumerate() {
        local[g] = i;
    }
    let mut adj = vec![0u32; nv];
    let mut forced_src = vec![0u32; nv];
    let mut free_idx = 0;
    for (e, &(gu, gv)) in comp.edges.iter().enumerate() {
        let (u, v) = (local[gu], local[gv]);
        adj[u] |= 1 << v;
        adj[v] |= 1 << u;
        if comp.two_way[e] {
            let slot = free_idx;
            free_idx += 1;
            if pin_mask >> slot & 1 == 1 {
                if pin_dirs >> slot & 1 == 1 {
                    forced_src[v] |= 1 << u;
                } else {
                    forced_src[u] |= 1 << v;
                }
            }
        } else if c.allows(gu, gv) {
            forced_src[v] |= 1 << u;
        } else {
            forced_src[u] |= 1 << v;
        }
    }
    let full = (1usize << nv) - 1;
    let mut indep = vec![false; full + 1];
    let mut forced_in = vec![0u32; full + 1];
    indep[0] = true;
    for t in 1..=full {
        let low = t.trailing_zeros() as usize;
        let rest = t & (t - 1);
        indep[t] = indep[rest] && adj[low] as usize & rest == 0;
        forced_in[t] = forced_in[rest] | forced_src[low];
    }
    // Counts fit i64: a(S) <= 16! and partial alternating sums stay below
    // 2^16 times that.
    let mut a = vec![0i64; full + 1];
    a[0] = 1;
    for s in 1..=full {
        let mut acc = 0i64;
        let mut t = s;
        while t > 0 {
            if indep[t] && forced_in[t] as usize & (s ^ t) == 0 {
                if t.count_ones() % 2 == 1 {
                    acc += a[s ^ t];
                } else {
                    acc -= a[s ^ t];
                }
            }
            t = (t - 1) & s;
        }
        a[s] = acc;
    }
    debug_assert!(a[full] >= 0);
    a[full].max(0) as u64
}

/// Draws a uniformly random acyclic assignment by the chain rule: pairs are
/// pinned one at a time, choosing the stored direction with probability
/// (orientations completing the pin) / (orientations so far). Cost is one
/// peeling count per two-way pair. Returns None when the component admits no
/// acyclic orientation under the constraints.
fn sample_orientation_by_peeling<R: Rng + ?Sized>(
    comp: &SkeletonComponent,
    c: &StructuralConstraints,
    rng: &mut R,
) -> Option<u64> {
    let mut pin_mask = 0u64;
    let mut pin_dirs = 0u64;
    let mut total = count_orientations_by_peeling(comp, c, 0, 0);
    if total == 0 {
        return None;
    }
    for slot in 0..comp.n_free {
        let fwd = count_orientations_by_peeling(comp, c, pin_mask | 1 << slot, pin_dirs | 1 << slot);
        pin_mask |= 1 << slot;
        if rng.random_range(0..total) < fwd {
            pin_dirs |= 1 << slot;
            total = fwd;
        } else {
            total -= fwd;
        }
    }
    Some(pin_dirs)
}

/// ln of one component's constrained acyclic orientation count, or an error
/// when every strategy's work cap is exceeded.
fn log_orientations_component(comp: &SkeletonComponent, c: &StructuralConstraints) -> Result<f64> {
    if comp.has_dead_pair(c) {
        return Err(Error::Contract("skeleton pair with both directions forbidden".into()));
    }
    if comp.is_tree() {
        // Every orientation of a tree is acyclic.
        return Ok(comp.n_free as f64 * std::f64::consts::LN_2);
    }
    let count = if comp.n_free <= MAX_ENUM_FREE_PAIRS {
        enumerate_component_orientations(comp, c, None::<&mut rand_chacha::ChaCha20Rng>).0
    } else if comp.verts.len() <= MAX_PEEL_VERTICES {
        count_orientations_by_peeling(comp, c, 0, 0)
    } else if comp.n_free <= MAX_FREE_PAIRS_PER_COMPONENT {
        enumerate_component_orientations(comp, c, None::<&mut rand_chacha::ChaCha20Rng>).0
    } else {
        return Err(Error::TooLarge(format!(
            "skeleton component with {} vertices and {} two-way pairs exceeds every \
             orientation counting cap",
            comp.verts.len(),
            comp.n_free
        )));
    };
    debug_assert!(count >= 1);
    Ok((count as f64).ln())
}

// Orientation counts depend only on the skeleton and the directional
// restrictions, and samplers revisit a small set of skeletons millions of
// times, so counts are memoized per thread. Up to 11 nodes the key encodes
// the pair set exactly in one word; larger graphs skip the cache. The
// restriction fingerprint is a hash, so two restriction sets sharing a
// thread collide with probability 2^-64.
thread_local! {
    static ORIENT_COUNT_CACHE: std::cell::RefCell<std::collections::HashMap<(u64, u64), f64>> =
        std::cell::RefCell::new(std::collections::HashMap::new());
}
const ORIENT_CACHE_MAX_ENTRIES: usize = 1 << 20;
const ORIENT_CACHE_MAX_Q: usize = 11;

fn directional_fingerprint(c: &StructuralConstraints) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut eat = |x: u64| {
        h ^= x;
        h = h.wrapping_mul(0x100_0000_01b3);
    };
    eat(c.q as u64);
    for &w in &c.forbidden_into {
        eat(w);
    }
    h
}

/// Natural log of the number of acyclic orientations of `d`'s skeleton that
/// satisfy the directional constraints (the in-degree cap is ignored here).
pub fn log_orientation_count(d: &Dag, c: &StructuralConstraints) -> Result<f64> {
    let pairs = d.skeleton_pairs();
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let q = d.q();
    let key = if q <= ORIENT_CACHE_MAX_Q {
        let mut mask = 0u64;
        for &(u, v) in &pairs {
            mask |= 1 << (u * q - u * (u + 1) / 2 + v - u - 1);
        }
        Some((directional_fingerprint(c), mask))
    } else {
        None
    };
    if let Some(k) = key {
        if let Some(v) = ORIENT_COUNT_CACHE.with(|m| m.borrow().get(&k).copied()) {
            return Ok(v);
        }
    }
    let mut total = 0.0;
    for comp in skeleton_components(q, &pairs, c) {
        total += log_orientations_component(&comp, c)?;
    }
    if let Some(k) = key {
        ORIENT_COUNT_CACHE.with(|m| {
            let mut m = m.borrow_mut();
            if m.len() >= ORIENT_CACHE_MAX_ENTRIES {
                m.clear();
            }
            m.insert(k, total);
        });
    }
    Ok(total)
}

/// log ratio of the baseline DAG law between `d_new` and `d_old`.
///
/// The baseline puts Beta-Binomial mass Γ(|S|+a_w)Γ(M−|S|+b_w) on each
/// skeleton and splits it uniformly over the skeleton's acyclic constrained
/// orientations, so the per-DAG density is that mass divided by the
/// orientation count.
pub fn log_baseline_ratio(
    d_new: &Dag,
    d_old: &Dag,
    p: &DagPriorParams,
    c: &StructuralConstraints,
) -> Result<f64> {
    let mut r = log_prior_ratio(d_new, d_old, p)?;
    if d_new.skeleton_pairs() != d_old.skeleton_pairs() {
        r += log_orientation_count(d_old, c)? - log_orientation_count(d_new, c)?;
    }
    Ok(r)
}

/// Draws a skeleton from the pair-inclusion urn: visiting the q(q-1)/2
/// unordered pairs in a fixed order, pair i is included with probability
/// (a_w + s)/(a_w + b_w + i) given s prior inclusions. Exchangeability makes
/// every skeleton of size s equally likely with total mass proportional to
/// Γ(s+a_w)Γ(M−s+b_w).
fn draw_skeleton_urn<R: Rng + ?Sized>(
    q: usize,
    p: &DagPriorParams,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut i = 0usize;
    for u in 0..q {
        for v in (u + 1)..q {
            let pr = (p.a_w + pairs.len() as f64) / (p.a_w + p.b_w + i as f64);
            if rng.random::<f64>() < pr {
                pairs.push((u, v));
            }
            i += 1;
        }
    }
    pairs
}

/// Orients a skeleton uniformly at random among its constrained acyclic
/// orientations. Returns None when the skeleton admits none (a pair dead in
/// both directions, forced directions closing a cycle, or an in-degree cap
/// violation), signalling the caller to redraw.
fn orient_skeleton_uniform<R: Rng + ?Sized>(
    q: usize,
    pairs: &[(usize, usize)],
    c: &StructuralConstraints,
    rng: &mut R,
) -> Result<Option<Dag>> {
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
    for comp in skeleton_components(q, pairs, c) {
        if comp.has_dead_pair(c) {
            return Ok(None);
        }
        if comp.is_tree() {
            for (e, &(u, v)) in comp.edges.iter().enumerate() {
                let forward = if comp.two_way[e] { rng.random::<bool>() } else { c.allows(u, v) };
                edges.push(if forward { (u, v) } else { (v, u) });
            }
            continue;
        }
        // Small components are enumerated; beyond that, coin-flip rejection
        // is exact and cheap whenever a decent fraction of assignments is
        // acyclic, and the chain-rule sampler covers the dense remainder.
        // Small components enumerate below; mid-size ones try coin-flip
        // rejection, falling back to the chain-rule sampler, and anything
        // still unresolved lands on the enumeration arm or a refusal.
        let sampled = if comp.n_free > MAX_ENUM_FREE_PAIRS && comp.n_free < 64 {
            match sample_orientation_by_rejection(&comp, c, rng) {
                Some(a) => Some(a),
                None if comp.verts.len() <= MAX_PEEL_VERTICES => {
                    match sample_orientation_by_peeling(&comp, c, rng) {
                        Some(a) => Some(a),
                        None => return Ok(None),
                    }
                }
                None => None,
            }
        } else {
            None
        };
        let assign = match sampled {
            Some(a) => a,
            None if comp.n_free <= MAX_FREE_PAIRS_PER_COMPONENT => {
                let (count, kept) = enumerate_component_orientations(&comp, c, Some(rng));
                if count == 0 {
                    return Ok(None);
                }
                kept
            }
            None => {
                return Err(Error::TooLarge(format!(
                    "skeleton component with {} vertices and {} two-way pairs \
                     exceeds every orientation sampling cap",
                    comp.verts.len(),
                    comp.n_free
                )));
            }
        };
        let mut free_idx = 0;
        for (e, &(u, v)) in comp.edges.iter().enumerate() {
            let forward = if comp.two_way[e] {
                let f = assign >> free_idx & 1 == 1;
                free_idx += 1;
                f
            } else {
                c.allows(u, v)
            };
            edges.push(if forward { (u, v) } else { (v, u) });
        }
    }
    let d = Dag::from_edges(q, &edges)?;
    if let Some(cap) = c.max_in_degree {
        if (0..q).any(|v| d.in_degree(v) > cap) {
            return Ok(None);
        }
    }
    Ok(Some(d))
}

/// Draws a DAG from the baseline law restricted to the constrained space.
///
/// The skeleton comes from the pair-inclusion urn and is oriented uniformly
/// among its constrained acyclic orientations, redrawing on skeletons the
/// constraints reject outright; the result is an exact draw. The chain then
/// advances `burn` Metropolis moves (uniformly chosen valid operator,
/// accepted with min{1, baseline-ratio × |O_D|/|O_D~|}), which leave that
/// law invariant, so the returned state is exact for every `burn`.
pub fn sample_baseline_dag<R: Rng + ?Sized>(
    c: &StructuralConstraints,
    p: &DagPriorParams,
    burn: usize,
    rng: &mut R,
) -> Result<Dag> {
    if burn == 0 {
        return Err(Error::Contract("baseline draw needs at least one chain move".into()));
    }
    let q = c.q();
    let mut d = 'drawn: {
        for _ in 0..MAX_SKELETON_REJECTIONS {
            let pairs = draw_skeleton_urn(q, p, rng);
            if let Some(d) = orient_skeleton_uniform(q, &pairs, c, rng)? {
                break 'drawn d;
            }
        }
        return Err(Error::TooLarge(
            "structural constraints reject essentially every skeleton draw".into(),
        ));
    };
    let mut ops = enumerate_operators(&d, c);
    if ops.is_empty() {
        return Ok(d);
    }
    let mut log_orient = log_orientation_count(&d, c)?;
    for _ in 0..burn {
        let op = ops[rng.random_range(0..ops.len())];
        let proposal = apply_operator(&d, &op)?;
        let ops_new = enumerate_operators(&proposal, c);
        let log_orient_new = log_orientation_count(&proposal, c)?;
        let log_r = log_prior_ratio(&proposal, &d, p)? + log_orient - log_orient_new
            + (ops.len() as f64).ln()
            - (ops_new.len() as f64).ln();
        if log_r >= 0.0 || rng.random::<f64>() < log_r.exp() {
            d = proposal;
            ops = ops_new;
            log_orient = log_orient_new;
        }
    }
    Ok(d)
}

/// Structural Hamming distance: node pairs where the DAGs disagree; a
/// reversed edge counts 1, an edge present in exactly one DAG counts 1.
pub fn shd(d1: &Dag, d2: &Dag) -> Result<usize> {
    if d1.q() != d2.q() {
        return Err(Error::Contract("structural distance of DAGs with different node counts".into()));
    }
    let mut dist = 0;
    for u in 0..d1.q() {
        for v in (u + 1)..d1.q() {
            let o1 = (d1.has_edge(u, v), d1.has_edge(v, u));
            let o2 = (d2.has_edge(u, v), d2.has_edge(v, u));
            if o1 != o2 {
                dist += 1;
            }
        }
    }
    Ok(dist)
}
