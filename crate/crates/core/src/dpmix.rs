//! Collapsed Gibbs sampler for a Dirichlet-process mixture of categorical
//! DAG models: cluster indicators, per-cluster DAG structures, and the DP
//! concentration are sampled; conditional probability tables are integrated
//! out and only optionally drawn at recording time.
//!
//! One iteration sweeps the indicators in order (each removal followed by a
//! categorical draw over existing clusters plus one fresh baseline-DAG
//! branch), refreshes the concentration by the auxiliary-variable Gamma
//! mixture, and makes one Metropolis-Hastings structure proposal per cluster.

use crate::catmodel::{
    count_family, log_marginal_from_counts, log_posterior_predictive, log_prior_predictive_empty,
    sample_theta, BdeuParams, Dataset, FamilyCounts, ThetaDraw,
};
use crate::graph::{
    apply_operator, enumerate_operators, log_baseline_ratio, sample_baseline_dag, Dag,
    DagPriorParams, OpKind, StructuralConstraints,
};
use crate::{Error, Result};
use rand::{Rng, RngExt};
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write as _};
use std::path::Path;

/// Starting partition for a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// All subjects in one cluster.
    Single,
    /// Labels uniform among the given number of clusters (empties compacted).
    Random(usize),
}

/// Behavioural switches; all default to off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcFlags {
    /// Pin every cluster DAG to the empty graph and skip structure moves.
    pub no_dag: bool,
    /// Skip indicator updates, freezing the starting partition.
    pub no_mixture: bool,
    /// Drop the operator-count Hastings correction from structure moves.
    pub approx_hastings: bool,
    /// Skip concentration updates.
    pub fixed_alpha: bool,
}

/// Full sampler configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub bdeu_a: f64,
    pub dag_prior: DagPriorParams,
    pub alpha_prior_c: f64,
    pub alpha_prior_d: f64,
    /// Starting concentration; drawn from its Gamma prior when absent.
    pub alpha_init: Option<f64>,
    /// Stationary Metropolis moves appended to each fresh baseline DAG draw.
    pub baseline_burn: usize,
    /// Structure proposals per cluster per iteration.
    pub dag_moves_per_iter: usize,
    pub init: InitStrategy,
    /// Draw and record conditional probability tables at recorded iterations.
    pub record_theta: bool,
    pub seed: u64,
    /// Visit subjects in a fresh uniform permutation each sweep.
    pub random_scan: bool,
    /// Recount all caches from scratch after every sweep (slow; for tests).
    pub debug_checks: bool,
    pub flags: McmcFlags,
}

impl McmcConfig {
    /// Defaults scaled to a dataset with `q` variables.
    pub fn defaults(q: usize) -> Self {
        McmcConfig {
            iterations: 100_000,
            burn_in: 10_000,
            thin: 10,
            bdeu_a: 1.0,
            dag_prior: DagPriorParams { a_w: 1.0, b_w: 2.0 * q as f64 },
            alpha_prior_c: 3.0,
            alpha_prior_d: 1.0,
            alpha_init: None,
            baseline_burn: 1,
            dag_moves_per_iter: 1,
            init: InitStrategy::Single,
            record_theta: true,
            seed: 0,
            random_scan: false,
            debug_checks: false,
            flags: McmcFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config("iterations must exceed burn-in".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        if !(self.alpha_prior_c > 0.0) || !(self.alpha_prior_d > 0.0) {
            return Err(Error::Config("concentration prior parameters must be positive".into()));
        }
        if !(self.bdeu_a > 0.0) {
            return Err(Error::Config("equivalent sample size must be positive".into()));
        }
        DagPriorParams::new(self.dag_prior.a_w, self.dag_prior.b_w)?;
        if let Some(a) = self.alpha_init {
            if !(a > 0.0) {
                return Err(Error::Config("initial concentration must be positive".into()));
            }
        }
        if self.dag_moves_per_iter == 0 {
            return Err(Error::Config("structure moves per iteration must be at least 1".into()));
        }
        if self.baseline_burn == 0 {
            return Err(Error::Config("baseline draws must advance at least one chain move".into()));
        }
        if let InitStrategy::Random(k0) = self.init {
            if k0 == 0 {
                return Err(Error::Config("random initialization needs at least 1 cluster".into()));
            }
        }
        Ok(())
    }

    fn bdeu(&self) -> BdeuParams {
        BdeuParams { a: self.bdeu_a }
    }
}

/// One mixture component: its DAG, member rows, and per-node count caches
/// aligned with the DAG's parent sets.
#[derive(Debug, Clone)]
pub struct Cluster {
    dag: Dag,
    members: Vec<usize>,
    counts: Vec<FamilyCounts>,
}

impl Cluster {
    fn build(ds: &Dataset, dag: Dag, members: Vec<usize>) -> Result<Self> {
        let counts = (0..ds.q())
            .map(|j| count_family(ds, &members, j, dag.parents(j)))
            .collect::<Result<_>>()?;
        Ok(Cluster { dag, members, counts })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn counts(&self) -> &[FamilyCounts] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Mutable sampler state: labels, clusters, concentration.
#[derive(Debug, Clone)]
pub struct SamplerState {
    xi: Vec<usize>,
    clusters: Vec<Cluster>,
    alpha: f64,
}

impl SamplerState {
    /// Builds a state from explicit labels and one DAG per cluster.
    /// Labels must be 0..K-1 with every label occupied.
    pub fn from_parts(ds: &Dataset, xi: &[usize], dags: Vec<Dag>, alpha: f64) -> Result<Self> {
        if xi.len() != ds.n() {
            return Err(Error::Contract("label vector length differs from dataset".into()));
        }
        if xi.is_empty() {
            return Err(Error::Contract("empty dataset".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::Contract("concentration must be positive".into()));
        }
        let k = dags.len();
        let mut occupied = vec![false; k];
        for &l in xi {
            if l >= k {
                return Err(Error::Contract(format!("label {l} has no DAG (K={k})")));
            }
            occupied[l] = true;
        }
        if !occupied.iter().all(|&o| o) {
            return Err(Error::Contract("every cluster label must be occupied".into()));
        }
        let mut members = vec![Vec::new(); k];
        for (i, &l) in xi.iter().enumerate() {
            members[l].push(i);
        }
        let clusters = dags
            .into_iter()
            .zip(members)
            .map(|(dag, m)| {
                if dag.q() != ds.q() {
                    return Err(Error::Contract("DAG size differs from dataset".into()));
                }
                Cluster::build(ds, dag, m)
            })
            .collect::<Result<_>>()?;
        Ok(SamplerState { xi: xi.to_vec(), clusters, alpha })
    }

    /// Builds a state from arbitrary labels (compacted in first-appearance
    /// order), drawing one baseline DAG per resulting cluster.
    pub fn from_assignment<R: Rng + ?Sized>(
        ds: &Dataset,
        labels: &[usize],
        alpha: f64,
        cfg: &McmcConfig,
        constraints: &StructuralConstraints,
        rng: &mut R,
    ) -> Result<Self> {
        if labels.len() != ds.n() {
            return Err(Error::Contract("label vector length differs from dataset".into()));
        }
        let mut map: Vec<(usize, usize)> = Vec::new();
        let mut xi = Vec::with_capacity(labels.len());
        for &l in labels {
            let compact = match map.iter().find(|&&(raw, _)| raw == l) {
                Some(&(_, c)) => c,
                None => {
                    let c = map.len();
                    map.push((l, c));
                    c
                }
            };
            xi.push(compact);
        }
        let mut dags = Vec::with_capacity(map.len());
        for _ in 0..map.len() {
            dags.push(draw_cluster_dag(ds.q(), cfg, constraints, rng)?);
        }
        SamplerState::from_parts(ds, &xi, dags, alpha)
    }

    pub fn xi(&self) -> &[usize] {
        &self.xi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster(&self, k: usize) -> &Cluster {
        &self.clusters[k]
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Verifies every structural invariant by full recount; used by tests
    /// and the `debug_checks` mode.
    pub fn check_consistency(&self, ds: &Dataset) -> Result<()> {
        let n = ds.n();
        if self.xi.len() != n {
            return Err(Error::Invariant("label vector length drifted".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Invariant("concentration left (0, inf)".into()));
        }
        let total: usize = self.clusters.iter().map(|c| c.members.len()).sum();
        if total != n {
            return Err(Error::Invariant("cluster sizes do not sum to n".into()));
        }
        for (idx, cl) in self.clusters.iter().enumerate() {
            if cl.members.is_empty() {
                return Err(Error::Invariant(format!("cluster {idx} is empty")));
            }
            for &i in &cl.members {
                if i >= n || self.xi[i] != idx {
                    return Err(Error::Invariant("membership and labels disagree".into()));
                }
            }
            for (j, cnt) in cl.counts.iter().enumerate() {
                if cnt.parents() != cl.dag.parents(j) {
                    return Err(Error::Invariant("count cache misaligned with DAG".into()));
                }
                let scratch = count_family(ds, &cl.members, j, cl.dag.parents(j))?;
                if *cnt != scratch {
                    return Err(Error::Invariant("count cache differs from recount".into()));
                }
            }
        }
        Ok(())
    }
}

fn draw_cluster_dag<R: Rng + ?Sized>(
    q: usize,
    cfg: &McmcConfig,
    constraints: &StructuralConstraints,
    rng: &mut R,
) -> Result<Dag> {
    if cfg.flags.no_dag {
        Dag::empty(q)
    } else {
        sample_baseline_dag(constraints, &cfg.dag_prior, cfg.baseline_burn, rng)
    }
}

/// Draws a concentration from its Gamma(c, rate d) prior.
pub fn sample_alpha_prior<R: Rng + ?Sized>(c: f64, d: f64, rng: &mut R) -> f64 {
    Gamma::new(c, 1.0 / d).expect("validated prior parameters").sample(rng)
}

/// Initial state: one cluster by default (always under `no_mixture`), or
/// uniform random labels among K0 clusters; concentration from its prior
/// unless pinned by `alpha_init`.
pub fn init_state<R: Rng + ?Sized>(
    ds: &Dataset,
    cfg: &McmcConfig,
    constraints: &StructuralConstraints,
    rng: &mut R,
) -> Result<SamplerState> {
    cfg.validate()?;
    if ds.n() == 0 {
        return Err(Error::Data("cannot sample over an empty dataset".into()));
    }
    let alpha = match cfg.alpha_init {
        Some(a) => a,
        None => sample_alpha_prior(cfg.alpha_prior_c, cfg.alpha_prior_d, rng),
    };
    let labels: Vec<usize> = match (cfg.flags.no_mixture, cfg.init) {
        (true, _) | (false, InitStrategy::Single) => vec![0; ds.n()],
        (false, InitStrategy::Random(k0)) => {
            (0..ds.n()).map(|_| rng.random_range(0..k0)).collect()
        }
    };
    SamplerState::from_assignment(ds, &labels, alpha, cfg, constraints, rng)
}

/// Detaches subject `i` from its cluster, deleting the cluster and
/// compacting labels if it empties. `xi[i]` is left stale for the caller
/// to overwrite.
fn remove_subject(state: &mut SamplerState, ds: &Dataset, i: usize) -> Result<()> {
    let k_old = state.xi[i];
    let row = ds.row(i);
    {
        let cl = state
            .clusters
            .get_mut(k_old)
            .ok_or_else(|| Error::Invariant("label points past cluster list".into()))?;
        let pos = cl
            .members
            .iter()
            .position(|&r| r == i)
            .ok_or_else(|| Error::Invariant("subject missing from its cluster".into()))?;
        cl.members.swap_remove(pos);
        for cnt in cl.counts.iter_mut() {
            cnt.remove_row(row)?;
        }
    }
    if state.clusters[k_old].members.is_empty() {
        state.clusters.swap_remove(k_old);
        let moved = state.clusters.len();
        if k_old != moved {
            for x in state.xi.iter_mut() {
                if *x == moved {
                    *x = k_old;
                }
            }
        }
    }
    Ok(())
}

/// Unnormalized log-weights over existing clusters (log n_k plus the
/// posterior predictive) followed by the new-cluster branch (log alpha plus
/// the uniform predictive). Assumes `row`'s subject is not in any cluster.
fn assignment_log_weights(
    state: &SamplerState,
    ds: &Dataset,
    row: &[u8],
    b: &BdeuParams,
) -> Result<Vec<f64>> {
    let mut w = Vec::with_capacity(state.clusters.len() + 1);
    for cl in &state.clusters {
        w.push(
            (cl.members.len() as f64).ln()
                + log_posterior_predictive(row, &cl.counts, false, &cl.dag, b)?,
        );
    }
    w.push(state.alpha.ln() + log_prior_predictive_empty(row, ds)?);
    Ok(w)
}

fn sample_categorical_log<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|&w| (w - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (idx, &w) in log_w.iter().enumerate() {
        u -= (w - m).exp();
        if u < 0.0 {
            return idx;
        }
    }
    log_w.len() - 1
}

/// Conditional assignment probabilities for subject `i` given the rest of
/// the state, over the clusters as indexed after `i`'s removal, with the
/// fresh-cluster branch last. Read-only companion to [`update_indicator`].
pub fn indicator_probabilities(
    state: &SamplerState,
    ds: &Dataset,
    i: usize,
    cfg: &McmcConfig,
) -> Result<Vec<f64>> {
    let mut scratch = state.clone();
    remove_subject(&mut scratch, ds, i)?;
    let log_w = assignment_log_weights(&scratch, ds, ds.row(i), &cfg.bdeu())?;
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|&w| (w - m).exp()).sum();
    Ok(log_w.iter().map(|&w| (w - m).exp() / total).collect())
}

/// One Gibbs update of subject `i`'s cluster indicator: remove, reweight
/// against every cluster plus one freshly drawn baseline DAG, reassign.
/// The fresh DAG is kept only if the new-cluster branch is chosen.
pub fn update_indicator<R: Rng + ?Sized>(
    state: &mut SamplerState,
    ds: &Dataset,
    i: usize,
    constraints: &StructuralConstraints,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<()> {
    if i >= ds.n() {
        return Err(Error::Contract(format!("subject {i} out of range")));
    }
    remove_subject(state, ds, i)?;
    let fresh = draw_cluster_dag(ds.q(), cfg, constraints, rng)?;
    let row = ds.row(i);
    let log_w = assignment_log_weights(state, ds, row, &cfg.bdeu())?;
    let pick = sample_categorical_log(&log_w, rng);
    if pick < state.clusters.len() {
        let cl = &mut state.clusters[pick];
        cl.members.push(i);
        for cnt in cl.counts.iter_mut() {
            cnt.add_row(row);
        }
        state.xi[i] = pick;
    } else {
        let k = state.clusters.len();
        state.clusters.push(Cluster::build(ds, fresh, vec![i])?);
        state.xi[i] = k;
    }
    Ok(())
}

/// Mixture weight g of the high-shape component in the concentration's
/// conditional: g/(1-g) = (c+K-1)/(n(d-log eta)).
pub fn alpha_mixture_weight(c: f64, d: f64, k: usize, n: usize, eta: f64) -> f64 {
    let odds = (c + k as f64 - 1.0) / (n as f64 * (d - eta.ln()));
    odds / (1.0 + odds)
}

/// Draws a concentration given the auxiliary variable: a two-component
/// mixture of Gamma(c+K, rate d-log eta) and Gamma(c+K-1, same rate).
pub fn sample_alpha_given_eta<R: Rng + ?Sized>(
    c: f64,
    d: f64,
    k: usize,
    n: usize,
    eta: f64,
    rng: &mut R,
) -> f64 {
    let rate = d - eta.ln();
    let g = alpha_mixture_weight(c, d, k, n, eta);
    let shape = if rng.random::<f64>() < g { c + k as f64 } else { c + k as f64 - 1.0 };
    Gamma::new(shape, 1.0 / rate).expect("positive shape and rate").sample(rng)
}

/// Auxiliary-variable update of the concentration: eta ~ Beta(alpha+1, n),
/// then the Gamma mixture above. No-op under `fixed_alpha`.
pub fn update_alpha<R: Rng + ?Sized>(
    state: &mut SamplerState,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<()> {
    if cfg.flags.fixed_alpha {
        return Ok(());
    }
    let n = state.xi.len();
    let eta = Beta::new(state.alpha + 1.0, n as f64)
        .map_err(|e| Error::Invariant(format!("auxiliary draw failed: {e}")))?
        .sample(rng);
    state.alpha =
        sample_alpha_given_eta(cfg.alpha_prior_c, cfg.alpha_prior_d, state.clusters.len(), n, eta, rng);
    Ok(())
}

/// One Metropolis-Hastings structure move on cluster `k`'s DAG: a uniform
/// draw from the legal operators, scored by the marginal-likelihood change
/// of the one or two families whose parent sets move, the baseline prior
/// ratio, and the operator-count Hastings correction (dropped under
/// `approx_hastings`). Returns whether the proposal was accepted.
pub fn update_dag<R: Rng + ?Sized>(
    state: &mut SamplerState,
    ds: &Dataset,
    k: usize,
    constraints: &StructuralConstraints,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<bool> {
    let b = cfg.bdeu();
    let cl = state
        .clusters
        .get(k)
        .ok_or_else(|| Error::Contract(format!("no cluster {k}")))?;
    if cl.members.is_empty() {
        return Err(Error::Contract("structure move on an empty cluster".into()));
    }
    let ops = enumerate_operators(&cl.dag, constraints);
    if ops.is_empty() {
        return Ok(false);
    }
    let op = ops[rng.random_range(0..ops.len())];
    let proposed = apply_operator(&cl.dag, &op)?;
    let affected: &[usize] = match op.kind {
        OpKind::Insert | OpKind::Delete => &[op.v],
        OpKind::Reverse => &[op.u, op.v],
    };
    let mut delta_marginal = 0.0;
    let mut new_counts = Vec::with_capacity(affected.len());
    for &j in affected {
        let fresh = count_family(ds, &cl.members, j, proposed.parents(j))?;
        delta_marginal += log_marginal_from_counts(&fresh, &b)
            - log_marginal_from_counts(&cl.counts[j], &b);
        new_counts.push(fresh);
    }
    let log_prior = log_baseline_ratio(&proposed, &cl.dag, &cfg.dag_prior, constraints)?;
    let log_hastings = if cfg.flags.approx_hastings {
        0.0
    } else {
        (ops.len() as f64).ln() - (enumerate_operators(&proposed, constraints).len() as f64).ln()
    };
    let log_accept = delta_marginal + log_prior + log_hastings;
    let accept = rng.random::<f64>().ln() < log_accept;
    if accept {
        let cl = &mut state.clusters[k];
        cl.dag = proposed;
        for (&j, fresh) in affected.iter().zip(new_counts) {
            cl.counts[j] = fresh;
        }
    }
    Ok(accept)
}

/// Structure-move tallies from one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub dag_proposals: usize,
    pub dag_accepts: usize,
}

/// One full MCMC iteration: indicator sweep (unless `no_mixture`),
/// concentration update (unless `fixed_alpha`), then structure moves per
/// cluster (unless `no_dag`).
pub fn sweep_once<R: Rng + ?Sized>(
    state: &mut SamplerState,
    ds: &Dataset,
    cfg: &McmcConfig,
    constraints: &StructuralConstraints,
    rng: &mut R,
) -> Result<SweepStats> {
    if !cfg.flags.no_mixture {
        if cfg.random_scan {
            let mut order: Vec<usize> = (0..ds.n()).collect();
            for t in (1..order.len()).rev() {
                order.swap(t, rng.random_range(0..=t));
            }
            for &i in &order {
                update_indicator(state, ds, i, constraints, cfg, rng)?;
            }
        } else {
            for i in 0..ds.n() {
                update_indicator(state, ds, i, constraints, cfg, rng)?;
            }
        }
    }
    update_alpha(state, cfg, rng)?;
    let mut stats = SweepStats::default();
    if !cfg.flags.no_dag {
        for k in 0..state.clusters.len() {
            for _ in 0..cfg.dag_moves_per_iter {
                stats.dag_proposals += 1;
                if update_dag(state, ds, k, constraints, cfg, rng)? {
                    stats.dag_accepts += 1;
                }
            }
        }
    }
    if cfg.debug_checks {
        state.check_consistency(ds)?;
    }
    Ok(stats)
}

/// One recorded cluster: its DAG and, when requested, a parameter draw.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCluster {
    pub dag: Dag,
    pub theta: Option<ThetaDraw>,
}

/// One thinned post-burn-in state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub xi: Vec<usize>,
    pub alpha: f64,
    pub clusters: Vec<RecordedCluster>,
}

impl TraceRecord {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
}

/// Run provenance stored beside the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub version: String,
    pub n: usize,
    pub q: usize,
    pub names: Vec<String>,
    pub levels: Vec<usize>,
    pub value_labels: Vec<Vec<String>>,
    pub dataset_fingerprint: String,
    pub config: McmcConfig,
}

impl TraceMeta {
    fn new(ds: &Dataset, cfg: &McmcConfig) -> Self {
        TraceMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            n: ds.n(),
            q: ds.q(),
            names: ds.names().to_vec(),
            levels: ds.levels().to_vec(),
            value_labels: ds.value_labels().to_vec(),
            dataset_fingerprint: ds.fingerprint().to_string(),
            config: cfg.clone(),
        }
    }
}

/// Recorded output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
}

/// Progress snapshot passed to the reporting callback once per iteration.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub iteration: usize,
    pub total: usize,
    pub n_clusters: usize,
    pub alpha: f64,
    /// Structure-move acceptance rate cumulative over the run.
    pub dag_accept_rate: f64,
}

fn record_state<R: Rng + ?Sized>(
    state: &SamplerState,
    ds: &Dataset,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<TraceRecord> {
    let mut clusters = Vec::with_capacity(state.clusters.len());
    for cl in &state.clusters {
        let theta = if cfg.record_theta {
            Some(sample_theta(ds, &cl.members, &cl.dag, &cfg.bdeu(), rng)?)
        } else {
            None
        };
        clusters.push(RecordedCluster { dag: cl.dag.clone(), theta });
    }
    Ok(TraceRecord { xi: state.xi.clone(), alpha: state.alpha, clusters })
}

/// Runs a full chain from a freshly initialized state.
pub fn run_mcmc<R: Rng + ?Sized>(
    ds: &Dataset,
    cfg: &McmcConfig,
    constraints: &StructuralConstraints,
    rng: &mut R,
) -> Result<Trace> {
    let state = init_state(ds, cfg, constraints, rng)?;
    run_mcmc_from(state, ds, cfg, constraints, rng, |_| {})
}

/// Runs a full chain with a per-iteration progress callback.
pub fn run_mcmc_with_progress<R: Rng + ?Sized, F: FnMut(&Progress)>(
    ds: &Dataset,
    cfg: &McmcConfig,
    constraints: &StructuralConstraints,
    rng: &mut R,
    progress: F,
) -> Result<Trace> {
    let state = init_state(ds, cfg, constraints, rng)?;
    run_mcmc_from(state, ds, cfg, constraints, rng, progress)
}

/// Runs a chain from an explicit starting state (e.g. a pinned true
/// partition). Records are taken at iterations s with s > burn_in and
/// (s - burn_in) divisible by thin, yielding floor((S-B)/thin) records.
pub fn run_mcmc_from<R: Rng + ?Sized, F: FnMut(&Progress)>(
    mut state: SamplerState,
    ds: &Dataset,
    cfg: &McmcConfig,
    constraints: &StructuralConstraints,
    rng: &mut R,
    mut progress: F,
) -> Result<Trace> {
    cfg.validate()?;
    for cl in &state.clusters {
        if !cl.dag.satisfies(constraints) {
            return Err(Error::Contract("starting DAG violates the constraints".into()));
        }
    }
    let mut records = Vec::with_capacity((cfg.iterations - cfg.burn_in) / cfg.thin);
    let mut proposals = 0usize;
    let mut accepts = 0usize;
    for s in 1..=cfg.iterations {
        let stats = sweep_once(&mut state, ds, cfg, constraints, rng)?;
        proposals += stats.dag_proposals;
        accepts += stats.dag_accepts;
        if s > cfg.burn_in && (s - cfg.burn_in) % cfg.thin == 0 {
            records.push(record_state(&state, ds, cfg, rng)?);
        }
        progress(&Progress {
            iteration: s,
            total: cfg.iterations,
            n_clusters: state.clusters.len(),
            alpha: state.alpha,
            dag_accept_rate: if proposals == 0 { 0.0 } else { accepts as f64 / proposals as f64 },
        });
    }
    Ok(Trace { meta: TraceMeta::new(ds, cfg), records })
}

impl Trace {
    /// Concatenates records from several chains over the same dataset.
    pub fn concat(traces: Vec<Trace>) -> Result<Trace> {
        let mut iter = traces.into_iter();
        let mut merged = iter
            .next()
            .ok_or_else(|| Error::Contract("no traces to pool".into()))?;
        for t in iter {
            if t.meta.dataset_fingerprint != merged.meta.dataset_fingerprint
                || t.meta.n != merged.meta.n
                || t.meta.q != merged.meta.q
            {
                return Err(Error::Contract("traces come from different datasets".into()));
            }
            merged.records.extend(t.records);
        }
        Ok(merged)
    }

    /// Persists the trace as a directory: `meta.json`, `xi.csv` (one row per
    /// record, labels 1-based), `alpha.csv`, `K.csv`, `dags/rec<t>_k<k>.edgelist`
    /// ("u v" per edge, 0-based node indices), and when parameters were
    /// recorded `theta/rec<t>_k<k>.bin` (for each node in ascending order,
    /// for each parent configuration in row-major parent-level order, the
    /// little-endian f64 probability of each child level).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        if dir.exists() {
            return Err(Error::Data(format!("output directory {} already exists", dir.display())));
        }
        std::fs::create_dir_all(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join("meta.json"), meta + "\n")?;

        let mut xi = csv::Writer::from_path(dir.join("xi.csv"))?;
        for rec in &self.records {
            xi.write_record(rec.xi.iter().map(|&l| (l + 1).to_string()))?;
        }
        xi.flush()?;

        let mut alpha = std::io::BufWriter::new(std::fs::File::create(dir.join("alpha.csv"))?);
        let mut ks = std::io::BufWriter::new(std::fs::File::create(dir.join("K.csv"))?);
        for rec in &self.records {
            writeln!(alpha, "{}", rec.alpha)?;
            writeln!(ks, "{}", rec.n_clusters())?;
        }
        alpha.flush()?;
        ks.flush()?;

        let dags_dir = dir.join("dags");
        std::fs::create_dir(&dags_dir)?;
        let any_theta = self
            .records
            .iter()
            .any(|r| r.clusters.iter().any(|c| c.theta.is_some()));
        let theta_dir = dir.join("theta");
        if any_theta {
            std::fs::create_dir(&theta_dir)?;
        }
        for (t, rec) in self.records.iter().enumerate() {
            for (k, cl) in rec.clusters.iter().enumerate() {
                let stem = format!("rec{}_k{}", t + 1, k + 1);
                let mut out = String::new();
                for (u, v) in cl.dag.edges() {
                    out.push_str(&format!("{u} {v}\n"));
                }
                std::fs::write(dags_dir.join(format!("{stem}.edgelist")), out)?;
                if let Some(theta) = &cl.theta {
                    let mut bytes = Vec::new();
                    for node in &theta.nodes {
                        for &p in &node.probs {
                            bytes.extend_from_slice(&p.to_le_bytes());
                        }
                    }
                    std::fs::write(theta_dir.join(format!("{stem}.bin")), bytes)?;
                }
            }
        }
        Ok(())
    }

    /// Reads a trace directory written by [`Trace::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Trace> {
        let meta: TraceMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let mut xi_rows = Vec::new();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(dir.join("xi.csv"))?;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != meta.n {
                return Err(Error::Data("label row width differs from metadata".into()));
            }
            let row: Vec<usize> = rec
                .iter()
                .map(|f| {
                    f.parse::<usize>()
                        .ok()
                        .and_then(|l| l.checked_sub(1))
                        .ok_or_else(|| Error::Data(format!("bad cluster label {f:?}")))
                })
                .collect::<Result<_>>()?;
            xi_rows.push(row);
        }
        let alphas = read_column_f64(&dir.join("alpha.csv"))?;
        let ks = read_column_usize(&dir.join("K.csv"))?;
        if alphas.len() != xi_rows.len() || ks.len() != xi_rows.len() {
            return Err(Error::Data("record counts disagree across trace files".into()));
        }
        let theta_dir = dir.join("theta");
        let mut records = Vec::with_capacity(xi_rows.len());
        for (t, xi) in xi_rows.into_iter().enumerate() {
            let k_count = ks[t];
            if xi.iter().any(|&l| l >= k_count) {
                return Err(Error::Data(format!("record {}: label exceeds K", t + 1)));
            }
            let mut clusters = Vec::with_capacity(k_count);
            for k in 0..k_count {
                let stem = format!("rec{}_k{}", t + 1, k + 1);
                let dag = read_edgelist(&dir.join("dags").join(format!("{stem}.edgelist")), meta.q)?;
                let theta_path = theta_dir.join(format!("{stem}.bin"));
                let theta = if theta_path.exists() {
                    Some(read_theta(&theta_path, &dag, &meta.levels)?)
                } else {
                    None
                };
                clusters.push(RecordedCluster { dag, theta });
            }
            records.push(TraceRecord { xi, alpha: alphas[t], clusters });
        }
        Ok(Trace { meta, records })
    }
}

fn read_column_f64(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse::<f64>()
                .map_err(|_| Error::Data(format!("bad numeric value {line:?} in {}", path.display())))?,
        );
    }
    Ok(out)
}

fn read_column_usize(path: &Path) -> Result<Vec<usize>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse::<usize>()
                .map_err(|_| Error::Data(format!("bad count {line:?} in {}", path.display())))?,
        );
    }
    Ok(out)
}

fn read_edgelist(path: &Path, q: usize) -> Result<Dag> {
    let text = std::fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => {
                return Err(Error::Data(format!(
                    "{}:{}: expected 'u v'",
                    path.display(),
                    ln + 1
                )))
            }
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Data(format!("{}:{}: bad node index {s:?}", path.display(), ln + 1)))
        };
        edges.push((parse(u)?, parse(v)?));
    }
    Dag::from_edges(q, &edges)
}

fn read_theta(path: &Path, dag: &Dag, levels: &[usize]) -> Result<ThetaDraw> {
    let bytes = std::fs::read(path)?;
    let mut offset = 0usize;
    let mut nodes = Vec::with_capacity(levels.len());
    for j in 0..levels.len() {
        let pa: Vec<usize> = dag.parents(j).to_vec();
        let pa_cards: Vec<usize> = pa.iter().map(|&p| levels[p]).collect();
        let pa_card: usize = pa_cards.iter().product();
        let child_card = levels[j];
        let len = pa_card * child_card;
        let end = offset + len * 8;
        if end > bytes.len() {
            return Err(Error::Data(format!("{}: truncated parameter blob", path.display())));
        }
        let mut probs = Vec::with_capacity(len);
        for c in bytes[offset..end].chunks_exact(8) {
            probs.push(f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        }
        offset = end;
        nodes.push(crate::catmodel::NodeTheta { j, pa, pa_cards, child_card, probs });
    }
    if offset != bytes.len() {
        return Err(Error::Data(format!("{}: trailing bytes in parameter blob", path.display())));
    }
    Ok(ThetaDraw { nodes })
}
