//! Categorical datasets and the conjugate machinery of a categorical DAG
//! model: family sufficient statistics, closed-form marginal likelihoods,
//! one-row posterior predictives, and Dirichlet posterior sampling.
//!
//! Throughout, a node `j` with parent set `pa` has `|X_pa|` parent
//! configurations (the product of parent cardinalities, 1 for an empty set)
//! and `|X_fa| = |X_pa|·|X_j|` family cells. Dirichlet pseudo-counts are
//! `a/|X_fa|` per cell and `a/|X_pa|` per parent configuration, which makes
//! Markov-equivalent DAGs score identically.

use crate::graph::Dag;
use crate::{Error, Result};
use rand::{Rng, RngExt};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;

/// Highest per-variable cardinality (cells are stored as single bytes).
pub const MAX_LEVELS: usize = 256;

// Parent-configuration spaces larger than this are refused where a dense
// sweep over configurations is required (theta sampling).
const MAX_DENSE_CONFIGS: u64 = 10_000_000;

/// Immutable table of categorical observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    q: usize,
    names: Vec<String>,
    levels: Vec<usize>,
    value_labels: Vec<Vec<String>>,
    cells: Vec<u8>,
    fingerprint: String,
}

impl Dataset {
    /// Builds a dataset from row-major cells, validating every code against
    /// its column's level count.
    pub fn new(
        cells: Vec<u8>,
        levels: Vec<usize>,
        names: Vec<String>,
        value_labels: Option<Vec<Vec<String>>>,
    ) -> Result<Self> {
        let q = levels.len();
        if q == 0 {
            return Err(Error::Data("dataset has no variables".into()));
        }
        if names.len() != q {
            return Err(Error::Data("column name count differs from level count".into()));
        }
        {
            let mut seen = std::collections::HashSet::new();
            for name in &names {
                if !seen.insert(name) {
                    return Err(Error::Data(format!("duplicate column name {name:?}")));
                }
            }
        }
        for (j, &l) in levels.iter().enumerate() {
            if l == 0 || l > MAX_LEVELS {
                return Err(Error::Data(format!(
                    "column {:?} has unsupported level count {l}",
                    names[j]
                )));
            }
        }
        if cells.len() % q != 0 {
            return Err(Error::Data("cell count is not a multiple of the variable count".into()));
        }
        let n = cells.len() / q;
        for (pos, &cell) in cells.iter().enumerate() {
            let j = pos % q;
            if cell as usize >= levels[j] {
                return Err(Error::Data(format!(
                    "row {}, column {:?}: code {} out of range [0,{})",
                    pos / q,
                    names[j],
                    cell,
                    levels[j]
                )));
            }
        }
        let value_labels = match value_labels {
            Some(vl) => {
                if vl.len() != q || vl.iter().zip(&levels).any(|(v, &l)| v.len() != l) {
                    return Err(Error::Data("value label shape mismatch".into()));
                }
                vl
            }
            None => levels
                .iter()
                .map(|&l| (0..l).map(|m| m.to_string()).collect())
                .collect(),
        };
        let mut hasher = Sha256::new();
        hasher.update(b"dataset-v1");
        hasher.update((n as u64).to_le_bytes());
        hasher.update((q as u64).to_le_bytes());
        for name in &names {
            hasher.update(name.as_bytes());
            hasher.update([0]);
        }
        for &l in &levels {
            hasher.update((l as u64).to_le_bytes());
        }
        hasher.update(&cells);
        let fingerprint = hex(&hasher.finalize());
        Ok(Dataset { n, q, names, levels, value_labels, cells, fingerprint })
    }

    /// Parses CSV text with a header row. A column whose cells all parse as
    /// non-negative integers is taken as integer-coded with cardinality
    /// max+1; otherwise cells are string labels mapped to codes 0..L-1 in
    /// first-appearance order. Returns the dataset plus human-readable
    /// warnings (degenerate single-valued columns).
    pub fn from_csv_str(text: &str) -> Result<(Self, Vec<String>)> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let q = names.len();
        if q == 0 {
            return Err(Error::Data("empty header row".into()));
        }
        let mut raw: Vec<Vec<String>> = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != q {
                return Err(Error::Data(format!(
                    "row {}: expected {} fields, found {}",
                    idx + 1,
                    q,
                    rec.len()
                )));
            }
            raw.push(rec.iter().map(|f| f.to_string()).collect());
        }
        if raw.is_empty() {
            return Err(Error::Data("dataset has no rows".into()));
        }
        let n = raw.len();
        let mut cells = vec![0u8; n * q];
        let mut levels = vec![0usize; q];
        let mut value_labels: Vec<Vec<String>> = vec![Vec::new(); q];
        let mut warnings = Vec::new();
        for j in 0..q {
            let integer_coded = raw.iter().all(|row| row[j].parse::<u64>().is_ok());
            if integer_coded {
                let mut max = 0u64;
                for row in raw.iter() {
                    max = max.max(row[j].parse::<u64>().unwrap());
                }
                let card = (max + 1) as usize;
                if card > MAX_LEVELS {
                    return Err(Error::Data(format!(
                        "column {:?}: {card} levels exceed the supported {MAX_LEVELS}",
                        names[j]
                    )));
                }
                for (i, row) in raw.iter().enumerate() {
                    cells[i * q + j] = row[j].parse::<u64>().unwrap() as u8;
                }
                levels[j] = card;
                value_labels[j] = (0..card).map(|m| m.to_string()).collect();
            } else {
                let mut map: HashMap<&str, u8> = HashMap::new();
                for (i, row) in raw.iter().enumerate() {
                    let next = map.len();
                    let code = *map.entry(row[j].as_str()).or_insert_with(|| {
                        value_labels[j].push(row[j].clone());
                        next as u8
                    });
                    if code as usize >= MAX_LEVELS {
                        return Err(Error::Data(format!(
                            "column {:?}: more than {MAX_LEVELS} distinct labels",
                            names[j]
                        )));
                    }
                    cells[i * q + j] = code;
                }
                levels[j] = map.len();
            }
            let distinct: std::collections::HashSet<&str> =
                raw.iter().map(|row| row[j].as_str()).collect();
            if distinct.len() == 1 {
                warnings.push(format!(
                    "column {:?} is single-valued; retained with {} declared level(s)",
                    names[j], levels[j]
                ));
            }
        }
        let vl = Some(value_labels);
        Ok((Dataset::new(cells, levels, names, vl)?, warnings))
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> usize {
        self.levels[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value_labels(&self) -> &[Vec<String>] {
        &self.value_labels
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.cells[i * self.q..(i + 1) * self.q]
    }

    pub fn cell(&self, i: usize, j: usize) -> u8 {
        self.cells[i * self.q + j]
    }

    /// Content hash covering names, levels and cells.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Resolves a column given either its 0-based index or its name.
    pub fn resolve_column(&self, token: &str) -> Result<usize> {
        if let Ok(idx) = token.parse::<usize>() {
            if idx < self.q {
                return Ok(idx);
            }
            return Err(Error::Data(format!("column index {idx} out of range (q={})", self.q)));
        }
        self.names
            .iter()
            .position(|n| n == token)
            .ok_or_else(|| Error::Data(format!("unknown column {token:?}")))
    }

    /// Rows in their stored order with the given rows reversed; used by
    /// exchangeability checks.
    pub fn reversed_rows(&self) -> Dataset {
        let mut cells = Vec::with_capacity(self.cells.len());
        for i in (0..self.n).rev() {
            cells.extend_from_slice(self.row(i));
        }
        Dataset::new(cells, self.levels.clone(), self.names.clone(), Some(self.value_labels.clone()))
            .expect("reversal preserves validity")
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Equivalent-sample-size parameter of the Dirichlet family prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdeuParams {
    pub a: f64,
}

impl BdeuParams {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::Config("equivalent sample size must be positive".into()));
        }
        Ok(BdeuParams { a })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CountRow {
    child: Vec<u32>,
    margin: u32,
}

/// FNV-1a. Count tables and every accumulation over them must be
/// reproducible run to run, which rules out the randomly seeded default
/// hasher; speed on small integer keys is a side benefit.
#[derive(Clone)]
struct FnvHasher(u64);

impl Default for FnvHasher {
    fn default() -> Self {
        FnvHasher(0xcbf2_9ce4_8422_2325)
    }
}

impl std::hash::Hasher for FnvHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }
}

type FnvBuild = std::hash::BuildHasherDefault<FnvHasher>;

// Families whose full table fits this many cells store counts densely;
// indexing then costs one multiply and iteration order is the index order.
const DENSE_CELL_CAP: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
enum CountStore {
    /// counts[s * child_card + m]; margins[s].
    Dense { counts: Vec<u32>, margins: Vec<u32> },
    Sparse(HashMap<u64, CountRow, FnvBuild>),
}

/// Sufficient statistics of one family (node plus parent set) over a row
/// subset. Parent configurations are indexed in row-major order over the
/// sorted parent list (last parent fastest). Small configuration spaces use
/// a dense table; larger ones fall back to a map holding the configurations
/// with nonzero count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyCounts {
    j: usize,
    pa: Vec<usize>,
    pa_cards: Vec<usize>,
    child_card: usize,
    pa_card: u64,
    store: CountStore,
    total: u64,
}

impl FamilyCounts {
    /// Empty statistics for node `j` with parents `pa` (sorted copy taken).
    pub fn empty(ds: &Dataset, j: usize, pa: &[usize]) -> Result<Self> {
        if j >= ds.q() || pa.iter().any(|&p| p >= ds.q()) {
            return Err(Error::Contract("family node out of range".into()));
        }
        if pa.contains(&j) {
            return Err(Error::Contract("parent set contains the child".into()));
        }
        let mut pa = pa.to_vec();
        pa.sort_unstable();
        pa.dedup();
        let pa_cards: Vec<usize> = pa.iter().map(|&p| ds.level(p)).collect();
        let mut pa_card = 1u64;
        for &c in &pa_cards {
            pa_card = pa_card
                .checked_mul(c as u64)
                .ok_or_else(|| Error::TooLarge("parent configuration space overflows".into()))?;
        }
        let child_card = ds.level(j);
        let cells = pa_card
            .checked_mul(child_card as u64)
            .ok_or_else(|| Error::TooLarge("family configuration space overflows".into()))?;
        let store = if cells <= DENSE_CELL_CAP {
            CountStore::Dense {
                counts: vec![0; cells as usize],
                margins: vec![0; pa_card as usize],
            }
        } else {
            CountStore::Sparse(HashMap::default())
        };
        Ok(FamilyCounts {
            j,
            pa,
            pa_cards,
            child_card,
            pa_card,
            store,
            total: 0,
        })
    }

    pub fn node(&self) -> usize {
        self.j
    }

    pub fn parents(&self) -> &[usize] {
        &self.pa
    }

    /// Number of parent configurations, 1 for an empty parent set.
    pub fn parent_configs(&self) -> u64 {
        self.pa_card
    }

    pub fn child_levels(&self) -> usize {
        self.child_card
    }

    /// Rows accumulated so far.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Mixed-radix index of the parent configuration in `row`.
    pub fn config_index(&self, row: &[u8]) -> u64 {
        let mut idx = 0u64;
        for (t, &p) in self.pa.iter().enumerate() {
            idx = idx * self.pa_cards[t] as u64 + row[p] as u64;
        }
        idx
    }

    pub fn count(&self, s: u64, m: usize) -> u32 {
        match &self.store {
            CountStore::Dense { counts, .. } => counts[s as usize * self.child_card + m],
            CountStore::Sparse(t) => t.get(&s).map_or(0, |r| r.child[m]),
        }
    }

    pub fn margin(&self, s: u64) -> u32 {
        match &self.store {
            CountStore::Dense { margins, .. } => margins[s as usize],
            CountStore::Sparse(t) => t.get(&s).map_or(0, |r| r.margin),
        }
    }

    pub fn add_row(&mut self, row: &[u8]) {
        let s = self.config_index(row);
        let m = row[self.j] as usize;
        match &mut self.store {
            CountStore::Dense { counts, margins } => {
                counts[s as usize * self.child_card + m] += 1;
                margins[s as usize] += 1;
            }
            CountStore::Sparse(t) => {
                let entry = t.entry(s).or_insert_with(|| CountRow {
                    child: vec![0; self.child_card],
                    margin: 0,
                });
                entry.child[m] += 1;
                entry.margin += 1;
            }
        }
        self.total += 1;
    }

    pub fn remove_row(&mut self, row: &[u8]) -> Result<()> {
        let s = self.config_index(row);
        let m = row[self.j] as usize;
        match &mut self.store {
            CountStore::Dense { counts, margins } => {
                let cell = &mut counts[s as usize * self.child_card + m];
                if *cell == 0 {
                    return Err(Error::Invariant("removing an uncounted row".into()));
                }
                *cell -= 1;
                margins[s as usize] -= 1;
            }
            CountStore::Sparse(t) => {
                let entry = t
                    .get_mut(&s)
                    .filter(|e| e.child[m] > 0)
                    .ok_or_else(|| Error::Invariant("removing an uncounted row".into()))?;
                entry.child[m] -= 1;
                entry.margin -= 1;
                if entry.margin == 0 {
                    t.remove(&s);
                }
            }
        }
        self.total -= 1;
        Ok(())
    }

    /// Folds over the present parent configurations as (margin, child counts),
    /// in a reproducible order.
    fn fold_rows<T>(&self, init: T, mut f: impl FnMut(T, u32, &[u32]) -> T) -> T {
        let mut acc = init;
        match &self.store {
            CountStore::Dense { counts, margins } => {
                for (s, &margin) in margins.iter().enumerate() {
                    if margin > 0 {
                        let base = s * self.child_card;
                        acc = f(acc, margin, &counts[base..base + self.child_card]);
                    }
                }
            }
            CountStore::Sparse(t) => {
                for row in t.values() {
                    acc = f(acc, row.margin, &row.child);
                }
            }
        }
        acc
    }
}

/// Tallies family counts for node `j` with parents `pa` over `rows`.
pub fn count_family(ds: &Dataset, rows: &[usize], j: usize, pa: &[usize]) -> Result<FamilyCounts> {
    let mut counts = FamilyCounts::empty(ds, j, pa)?;
    for &i in rows {
        if i >= ds.n() {
            return Err(Error::Contract(format!("row index {i} out of range")));
        }
        counts.add_row(ds.row(i));
    }
    Ok(counts)
}

/// Log marginal likelihood contribution of one family, computed from its
/// counts: for each present parent configuration,
/// log Γ(a/|X_pa|) − log Γ(a/|X_pa| + n_s) + Σ_m [log Γ(a/|X_fa| + n_{m,s}) − log Γ(a/|X_fa|)].
pub fn log_marginal_from_counts(counts: &FamilyCounts, b: &BdeuParams) -> f64 {
    let a_pa = b.a / counts.pa_card as f64;
    let a_fa = a_pa / counts.child_card as f64;
    let lg_pa = ln_gamma(a_pa);
    let lg_fa = ln_gamma(a_fa);
    counts.fold_rows(0.0, |mut acc, margin, child| {
        acc += lg_pa - ln_gamma(a_pa + margin as f64);
        for &c in child {
            if c > 0 {
                acc += ln_gamma(a_fa + c as f64) - lg_fa;
            }
        }
        acc
    })
}

/// Log marginal likelihood of node `j`'s column given its parents, over `rows`.
pub fn log_marginal_node(
    ds: &Dataset,
    rows: &[usize],
    j: usize,
    pa: &[usize],
    b: &BdeuParams,
) -> Result<f64> {
    Ok(log_marginal_from_counts(&count_family(ds, rows, j, pa)?, b))
}

/// Log marginal likelihood of `rows` under DAG `d`: the sum of per-family terms.
pub fn log_marginal_dag(ds: &Dataset, rows: &[usize], d: &Dag, b: &BdeuParams) -> Result<f64> {
    if d.q() != ds.q() {
        return Err(Error::Contract("DAG and dataset disagree on variable count".into()));
    }
    let mut acc = 0.0;
    for j in 0..ds.q() {
        acc += log_marginal_node(ds, rows, j, d.parents(j), b)?;
    }
    Ok(acc)
}

/// Log posterior predictive of one observation `x` against a cluster whose
/// per-node counts are `counts` (aligned with `d`'s parent sets). When
/// `i_in_cluster` is set, `x`'s own contribution is subtracted from every
/// count first. Equals the difference of the cluster's log marginal
/// likelihood with and without `x`.
pub fn log_posterior_predictive(
    x: &[u8],
    counts: &[FamilyCounts],
    i_in_cluster: bool,
    d: &Dag,
    b: &BdeuParams,
) -> Result<f64> {
    if counts.len() != d.q() {
        return Err(Error::Contract("count cache and DAG disagree on variable count".into()));
    }
    let sub = i_in_cluster as u32;
    let mut acc = 0.0;
    for (j, cnt) in counts.iter().enumerate() {
        debug_assert_eq!(cnt.node(), j);
        debug_assert_eq!(cnt.parents(), d.parents(j));
        let s = cnt.config_index(x);
        let m = x[j] as usize;
        let c = cnt.count(s, m);
        let margin = cnt.margin(s);
        if c < sub || margin < sub {
            return Err(Error::Invariant("effective count went negative".into()));
        }
        let a_pa = b.a / cnt.pa_card as f64;
        let a_fa = a_pa / cnt.child_card as f64;
        acc += ((a_fa + (c - sub) as f64) / (a_pa + (margin - sub) as f64)).ln();
    }
    Ok(acc)
}

/// Log predictive of one observation under a cluster with no members:
/// Σ_j −log |X_j|, independent of any sampled DAG.
pub fn log_prior_predictive_empty(x: &[u8], ds: &Dataset) -> Result<f64> {
    if x.len() != ds.q() {
        return Err(Error::Contract("observation width differs from dataset".into()));
    }
    let mut acc = 0.0;
    for j in 0..ds.q() {
        if x[j] as usize >= ds.level(j) {
            return Err(Error::Contract(format!("level {} out of range at column {j}", x[j])));
        }
        acc -= (ds.level(j) as f64).ln();
    }
    Ok(acc)
}

/// One sampled conditional-probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTheta {
    pub j: usize,
    pub pa: Vec<usize>,
    pub pa_cards: Vec<usize>,
    pub child_card: usize,
    /// Row-major over parent configurations: probs[s*child_card + m].
    pub probs: Vec<f64>,
}

impl NodeTheta {
    pub fn parent_configs(&self) -> u64 {
        self.probs.len() as u64 / self.child_card as u64
    }

    pub fn prob(&self, s: u64, m: usize) -> f64 {
        self.probs[s as usize * self.child_card + m]
    }

    /// Mixed-radix parent configuration index for a full assignment `x`.
    pub fn config_index(&self, x: &[u8]) -> u64 {
        let mut idx = 0u64;
        for (t, &p) in self.pa.iter().enumerate() {
            idx = idx * self.pa_cards[t] as u64 + x[p] as u64;
        }
        idx
    }
}

/// A complete parameter draw: one conditional table per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaDraw {
    pub nodes: Vec<NodeTheta>,
}

/// Draws a Dirichlet vector proportional to independent Gamma(shape, 1)
/// variates. When every variate underflows to zero (possible for tiny
/// shapes), the limiting vertex distribution is used: a one-hot vector with
/// index drawn proportional to the shapes.
fn dirichlet<R: Rng + ?Sized>(shapes: &[f64], rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, Gamma};
    let mut draw: Vec<f64> = shapes
        .iter()
        .map(|&s| Gamma::new(s, 1.0).expect("positive shape").sample(rng))
        .collect();
    let sum: f64 = draw.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        for v in &mut draw {
            *v /= sum;
        }
        return draw;
    }
    let total: f64 = shapes.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut pick = shapes.len() - 1;
    for (i, &s) in shapes.iter().enumerate() {
        if u < s {
            pick = i;
            break;
        }
        u -= s;
    }
    let mut one_hot = vec![0.0; shapes.len()];
    one_hot[pick] = 1.0;
    one_hot
}

/// Samples a full parameter draw from the Dirichlet posterior given the rows:
/// for every node and every parent configuration (including unobserved ones),
/// θ_s ~ Dirichlet(a/|X_fa| + n_{(·,s)}).
pub fn sample_theta<R: Rng + ?Sized>(
    ds: &Dataset,
    rows: &[usize],
    d: &Dag,
    b: &BdeuParams,
    rng: &mut R,
) -> Result<ThetaDraw> {
    if d.q() != ds.q() {
        return Err(Error::Contract("DAG and dataset disagree on variable count".into()));
    }
    let mut nodes = Vec::with_capacity(ds.q());
    for j in 0..ds.q() {
        let counts = count_family(ds, rows, j, d.parents(j))?;
        if counts.pa_card > MAX_DENSE_CONFIGS {
            return Err(Error::TooLarge(format!(
                "node {j}: {} parent configurations exceed the dense sampling bound",
                counts.pa_card
            )));
        }
        let a_fa = b.a / counts.pa_card as f64 / counts.child_card as f64;
        let mut probs = Vec::with_capacity(counts.pa_card as usize * counts.child_card);
        let mut shapes = vec![0.0; counts.child_card];
        for s in 0..counts.pa_card {
            for (m, shape) in shapes.iter_mut().enumerate() {
                *shape = a_fa + counts.count(s, m) as f64;
            }
            probs.extend(dirichlet(&shapes, rng));
        }
        nodes.push(NodeTheta {
            j,
            pa: counts.pa.clone(),
            pa_cards: counts.pa_cards.clone(),
            child_card: counts.child_card,
            probs,
        });
    }
    Ok(ThetaDraw { nodes })
}

/// Draws `n_rows` observations from the marginal model of DAG `d` (parameters
/// integrated out) by sequential predictive sampling: each row is drawn in
/// topological order with cell probabilities (a/|X_fa| + n)/(a/|X_pa| + n_s)
/// given all previously drawn rows.
pub fn sample_rows_predictive<R: Rng + ?Sized>(
    d: &Dag,
    levels: &[usize],
    names: &[String],
    n_rows: usize,
    b: &BdeuParams,
    rng: &mut R,
) -> Result<Dataset> {
    if levels.len() != d.q() {
        return Err(Error::Contract("levels and DAG disagree on variable count".into()));
    }
    let q = d.q();
    let scratch = Dataset::new(
        vec![0; q],
        levels.to_vec(),
        names.to_vec(),
        None,
    )?;
    let order = d
        .topological_order()
        .ok_or_else(|| Error::Invariant("cyclic graph in predictive sampler".into()))?;
    let mut counts: Vec<FamilyCounts> = (0..q)
        .map(|j| FamilyCounts::empty(&scratch, j, d.parents(j)))
        .collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(n_rows * q);
    let mut row = vec![0u8; q];
    let mut probs: Vec<f64> = Vec::new();
    for _ in 0..n_rows {
        for &j in &order {
            let cnt = &counts[j];
            let s = cnt.config_index(&row);
            let a_pa = b.a / cnt.pa_card as f64;
            let a_fa = a_pa / cnt.child_card as f64;
            let margin = cnt.margin(s);
            probs.clear();
            for m in 0..cnt.child_card {
                probs.push((a_fa + cnt.count(s, m) as f64) / (a_pa + margin as f64));
            }
            let mut u = rng.random::<f64>();
            let mut pick = cnt.child_card - 1;
            for (m, &p) in probs.iter().enumerate() {
                if u < p {
                    pick = m;
                    break;
                }
                u -= p;
            }
            row[j] = pick as u8;
        }
        for cnt in counts.iter_mut() {
            cnt.add_row(&row);
        }
        cells.extend_from_slice(&row);
    }
    Dataset::new(cells, levels.to_vec(), names.to_vec(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Dag;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn ds(cells: &[u8], levels: &[usize]) -> Dataset {
        let names = (0..levels.len()).map(|j| format!("v{j}")).collect();
        Dataset::new(cells.to_vec(), levels.to_vec(), names, None).unwrap()
    }

    fn all_rows(ds: &Dataset) -> Vec<usize> {
        (0..ds.n()).collect()
    }

    #[test]
    fn family_counts_tally_directly() {
        let d = ds(&[0, 1, 1], &[2]);
        let c = count_family(&d, &[], 0, &[]).unwrap();
        assert_eq!(c.total(), 0);
        assert_eq!(c.margin(0), 0);
        let c = count_family(&d, &all_rows(&d), 0, &[]).unwrap();
        assert_eq!(c.count(0, 0), 1);
        assert_eq!(c.count(0, 1), 2);
        assert_eq!(c.margin(0), 3);
        // One binary parent: rows (pa,j) = (0,1),(0,1),(1,0).
        let d2 = ds(&[0, 1, 0, 1, 1, 0], &[2, 2]);
        let c = count_family(&d2, &all_rows(&d2), 1, &[0]).unwrap();
        assert_eq!(c.count(0, 1), 2);
        assert_eq!(c.count(1, 0), 1);
        assert_eq!(c.margin(0), 2);
        assert_eq!(c.margin(1), 1);
    }

    #[test]
    fn family_counts_reject_bad_shapes() {
        let d = ds(&[0, 1], &[2, 2]);
        assert!(count_family(&d, &[0], 0, &[0]).is_err());
        assert!(count_family(&d, &[5], 0, &[]).is_err());
        assert!(count_family(&d, &[0], 3, &[]).is_err());
    }

    #[test]
    fn marginal_of_single_binary_column() {
        let b = BdeuParams::new(1.0).unwrap();
        let d = ds(&[0, 1], &[2]);
        assert_eq!(log_marginal_node(&d, &[], 0, &[], &b).unwrap(), 0.0);
        // Sequential predictive product: 1/2 then 1/4.
        let lm = log_marginal_node(&d, &all_rows(&d), 0, &[], &b).unwrap();
        assert!((lm - (1.0f64 / 8.0).ln()).abs() < 1e-12);
        assert!((lm + 2.0794415416798357).abs() < 1e-10);
        // A single row of any column scores 1/|X_j|.
        let d3 = ds(&[2], &[3]);
        let lm = log_marginal_node(&d3, &[0], 0, &[], &b).unwrap();
        assert!((lm - (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn marginal_of_dag_sums_nodes_and_respects_equivalence() {
        let b = BdeuParams::new(1.0).unwrap();
        let d = ds(&[0, 1], &[2, 2]);
        let empty = Dag::empty(2).unwrap();
        let lm = log_marginal_dag(&d, &[0], &empty, &b).unwrap();
        assert!((lm - (0.25f64).ln()).abs() < 1e-12);

        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let cells: Vec<u8> = (0..40).map(|_| rng.random_range(0..2u8)).collect();
        let data = ds(&cells, &[2, 2]);
        let fwd = Dag::from_edges(2, &[(0, 1)]).unwrap();
        let bwd = Dag::from_edges(2, &[(1, 0)]).unwrap();
        let a = log_marginal_dag(&data, &all_rows(&data), &fwd, &b).unwrap();
        let c = log_marginal_dag(&data, &all_rows(&data), &bwd, &b).unwrap();
        assert!((a - c).abs() < 1e-10);

        // Chain 0->1->2 vs fork 1->0, 1->2 on ternary data.
        let cells: Vec<u8> = (0..90).map(|_| rng.random_range(0..3u8)).collect();
        let data = ds(&cells, &[3, 3, 3]);
        let chain = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let fork = Dag::from_edges(3, &[(1, 0), (1, 2)]).unwrap();
        let a = log_marginal_dag(&data, &all_rows(&data), &chain, &b).unwrap();
        let c = log_marginal_dag(&data, &all_rows(&data), &fork, &b).unwrap();
        assert!((a - c).abs() < 1e-10);
    }

    #[test]
    fn predictive_against_frozen_ratio() {
        // One binary variable, cluster counts (3,1), x=0 outside the cluster:
        // (0.5+3)/(1+4) = 0.7.
        let b = BdeuParams::new(1.0).unwrap();
        let data = ds(&[0, 0, 0, 1], &[2]);
        let d = Dag::empty(1).unwrap();
        let counts = vec![count_family(&data, &all_rows(&data), 0, &[]).unwrap()];
        let lp = log_posterior_predictive(&[0], &counts, false, &d, &b).unwrap();
        assert!((lp - 0.7f64.ln()).abs() < 1e-12);
        assert!((lp + 0.35667494393873245).abs() < 1e-10);
    }

    #[test]
    fn predictive_of_singleton_reduces_to_prior() {
        let b = BdeuParams::new(1.0).unwrap();
        let data = ds(&[1, 2, 0], &[2, 3, 2]);
        let d = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let counts: Vec<FamilyCounts> = (0..3)
            .map(|j| count_family(&data, &[0], j, d.parents(j)).unwrap())
            .collect();
        let lp = log_posterior_predictive(data.row(0), &counts, true, &d, &b).unwrap();
        let prior = log_prior_predictive_empty(data.row(0), &data).unwrap();
        assert!((lp - prior).abs() < 1e-12);
        assert!((prior - (1.0f64 / 12.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_cluster_predictive_is_dag_free() {
        let data = ds(&[0, 1, 1, 0, 1, 0], &[2, 2, 2]);
        let lp = log_prior_predictive_empty(&[0, 1, 1], &data).unwrap();
        assert!((lp - (1.0f64 / 8.0).ln()).abs() < 1e-12);
        let d2 = ds(&[0, 2], &[2, 3]);
        let lp = log_prior_predictive_empty(&[1, 2], &d2).unwrap();
        assert!((lp - (1.0f64 / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn incremental_counts_match_scratch_after_moves() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let cells: Vec<u8> = (0..60).map(|_| rng.random_range(0..3u8)).collect();
        let data = ds(&cells, &[3, 3, 3]);
        let mut inc = FamilyCounts::empty(&data, 2, &[0, 1]).unwrap();
        let mut members: Vec<usize> = Vec::new();
        for step in 0..200 {
            if !members.is_empty() && rng.random::<f64>() < 0.45 {
                let pos = rng.random_range(0..members.len());
                let i = members.swap_remove(pos);
                inc.remove_row(data.row(i)).unwrap();
            } else {
                let i = rng.random_range(0..data.n());
                members.push(i);
                inc.add_row(data.row(i));
            }
            if step % 20 == 0 {
                let scratch = count_family(&data, &members, 2, &[0, 1]).unwrap();
                assert_eq!(inc, scratch);
            }
        }
        let scratch = count_family(&data, &members, 2, &[0, 1]).unwrap();
        assert_eq!(inc, scratch);
    }

    #[test]
    fn removing_uncounted_row_is_an_invariant_error() {
        let data = ds(&[0, 1], &[2]);
        let mut c = FamilyCounts::empty(&data, 0, &[]).unwrap();
        assert!(matches!(c.remove_row(data.row(0)), Err(crate::Error::Invariant(_))));
    }

    #[test]
    fn theta_posterior_mean_matches_counts() {
        let b = BdeuParams::new(1.0).unwrap();
        let data = ds(&[0, 0, 0, 1], &[2]);
        let d = Dag::empty(1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let draws = 100_000;
        let mut mean0 = 0.0;
        for _ in 0..draws {
            let t = sample_theta(&data, &all_rows(&data), &d, &b, &mut rng).unwrap();
            let p = &t.nodes[0].probs;
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            mean0 += p[0];
        }
        mean0 /= draws as f64;
        assert!((mean0 - 0.7).abs() < 0.01, "mean {mean0}");
    }

    #[test]
    fn theta_prior_draw_covers_all_configs() {
        let b = BdeuParams::new(1.0).unwrap();
        let data = ds(&[0, 0, 1, 1], &[2, 2]);
        let d = Dag::from_edges(2, &[(0, 1)]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let t = sample_theta(&data, &[], &d, &b, &mut rng).unwrap();
        assert_eq!(t.nodes[1].parent_configs(), 2);
        for s in 0..2 {
            let total: f64 = (0..2).map(|m| t.nodes[1].prob(s, m)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predictive_row_sampler_tracks_polya_urn() {
        // For a single binary column at a=1, the second draw repeats the
        // first with probability (0.5+1)/(1+1) = 0.75.
        let b = BdeuParams::new(1.0).unwrap();
        let d = Dag::empty(1).unwrap();
        let names = vec!["v0".to_string()];
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut repeats = 0;
        let trials = 40_000;
        for _ in 0..trials {
            let data = sample_rows_predictive(&d, &[2], &names, 2, &b, &mut rng).unwrap();
            if data.cell(0, 0) == data.cell(1, 0) {
                repeats += 1;
            }
        }
        let freq = repeats as f64 / trials as f64;
        assert!((freq - 0.75).abs() < 0.01, "repeat freq {freq}");
    }

    #[test]
    fn csv_ingestion_maps_labels_and_codes() {
        let (data, warns) = Dataset::from_csv_str(
            "age,smoke,grade\n0,yes,B\n1,no,A\n1,yes,B\n0,maybe,C\n",
        )
        .unwrap();
        assert_eq!(data.n(), 4);
        assert_eq!(data.levels(), &[2, 3, 3]);
        // Labels map in first-appearance order.
        assert_eq!(data.value_labels()[1], vec!["yes", "no", "maybe"]);
        assert_eq!(data.cell(0, 1), 0);
        assert_eq!(data.cell(3, 1), 2);
        assert_eq!(data.cell(1, 2), 1);
        assert!(warns.is_empty());
        assert_eq!(data.resolve_column("grade").unwrap(), 2);
        assert_eq!(data.resolve_column("1").unwrap(), 1);
        assert!(data.resolve_column("bmi").is_err());
    }

    #[test]
    fn csv_ingestion_flags_degenerate_columns() {
        let (data, warns) = Dataset::from_csv_str("a,b\n0,x\n0,y\n").unwrap();
        assert_eq!(data.levels(), &[1, 2]);
        assert_eq!(warns.len(), 1);
        assert!(warns[0].contains("single-valued"));
    }

    #[test]
    fn csv_ingestion_rejects_malformed_input() {
        assert!(Dataset::from_csv_str("a,a\n0,1\n").is_err());
        assert!(Dataset::from_csv_str("a,b\n0\n").is_err());
        assert!(Dataset::from_csv_str("a,b\n").is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let (d1, _) = Dataset::from_csv_str("a,b\n0,1\n1,0\n").unwrap();
        let (d2, _) = Dataset::from_csv_str("a,b\n0,1\n1,0\n").unwrap();
        let (d3, _) = Dataset::from_csv_str("a,b\n0,1\n1,1\n").unwrap();
        assert_eq!(d1.fingerprint(), d2.fingerprint());
        assert_ne!(d1.fingerprint(), d3.fingerprint());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn predictive_equals_marginal_difference(seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let q = rng.random_range(1..=4usize);
            let n = rng.random_range(1..=12usize);
            let levels: Vec<usize> = (0..q).map(|_| rng.random_range(2..=3usize)).collect();
            let cells: Vec<u8> = (0..n * q)
                .map(|pos| rng.random_range(0..levels[pos % q]) as u8)
                .collect();
            let names = (0..q).map(|j| format!("v{j}")).collect();
            let data = Dataset::new(cells, levels, names, None).unwrap();
            // Random DAG via random order and dense-ish edges.
            let mut order: Vec<usize> = (0..q).collect();
            for i in (1..q).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut edges = Vec::new();
            for i in 0..q {
                for j in (i + 1)..q {
                    if rng.random::<f64>() < 0.5 {
                        edges.push((order[i], order[j]));
                    }
                }
            }
            let d = Dag::from_edges(q, &edges).unwrap();
            let b = BdeuParams::new([0.5, 1.0, 2.0][rng.random_range(0..3)]).unwrap();
            let i = rng.random_range(0..n);
            let with_i: Vec<usize> = (0..n).collect();
            let without_i: Vec<usize> = (0..n).filter(|&r| r != i).collect();
            let counts_with: Vec<FamilyCounts> = (0..q)
                .map(|j| count_family(&data, &with_i, j, d.parents(j)).unwrap())
                .collect();
            let counts_without: Vec<FamilyCounts> = (0..q)
                .map(|j| count_family(&data, &without_i, j, d.parents(j)).unwrap())
                .collect();
            let diff = log_marginal_dag(&data, &with_i, &d, &b).unwrap()
                - log_marginal_dag(&data, &without_i, &d, &b).unwrap();
            let pred_out = log_posterior_predictive(data.row(i), &counts_without, false, &d, &b).unwrap();
            let pred_in = log_posterior_predictive(data.row(i), &counts_with, true, &d, &b).unwrap();
            prop_assert!((pred_out - diff).abs() < 1e-10);
            prop_assert!((pred_in - diff).abs() < 1e-10);
        }

        #[test]
        fn chain_rule_over_any_row_order(seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let q = rng.random_range(1..=3usize);
            let n = rng.random_range(1..=8usize);
            let levels: Vec<usize> = (0..q).map(|_| rng.random_range(2..=3usize)).collect();
            let cells: Vec<u8> = (0..n * q)
                .map(|pos| rng.random_range(0..levels[pos % q]) as u8)
                .collect();
            let names = (0..q).map(|j| format!("v{j}")).collect();
            let data = Dataset::new(cells, levels, names, None).unwrap();
            let d = if q >= 2 && rng.random::<bool>() {
                Dag::from_edges(q, &[(0, 1)]).unwrap()
            } else {
                Dag::empty(q).unwrap()
            };
            let b = BdeuParams::new(1.0).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut counts: Vec<FamilyCounts> = (0..q)
                .map(|j| FamilyCounts::empty(&data, j, d.parents(j)).unwrap())
                .collect();
            let mut acc = 0.0;
            for &i in &order {
                acc += log_posterior_predictive(data.row(i), &counts, false, &d, &b).unwrap();
                for cnt in counts.iter_mut() {
                    cnt.add_row(data.row(i));
                }
            }
            let full: Vec<usize> = (0..n).collect();
            let lm = log_marginal_dag(&data, &full, &d, &b).unwrap();
            prop_assert!((acc - lm).abs() < 1e-9);
        }
    }
}
