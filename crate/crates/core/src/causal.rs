//! Post-intervention quantities for a sampled categorical DAG model: the
//! adjustment-formula causal effect, a truncated-factorization enumeration
//! oracle, and per-subject Bayesian model averages over a trace.
//!
//! The effect of do(X_h) on a response Y adjusts over pa(h): both the parent
//! marginal and the conditional success probability are functionals of the
//! full parameter draw, so they are computed by exact summation over the
//! joint table of the relevant ancestral closure rather than read off raw
//! conditional-table entries.

use crate::catmodel::ThetaDraw;
use crate::dpmix::Trace;
use crate::graph::Dag;
use crate::{Error, Result};

// Joint tables beyond this many configurations are refused.
const MAX_ENUM_CONFIGS: u64 = 10_000_000;

/// An interventional question: the effect of moving X_h from `ref_level` to
/// `treat_level` on the probability that Y equals `success_level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalQuery {
    pub y: usize,
    pub h: usize,
    pub treat_level: u8,
    pub ref_level: u8,
    pub success_level: u8,
}

impl CausalQuery {
    pub fn new(y: usize, h: usize, treat_level: u8, ref_level: u8, success_level: u8) -> Result<Self> {
        if y == h {
            return Err(Error::Contract("response and exposure must differ".into()));
        }
        Ok(CausalQuery { y, h, treat_level, ref_level, success_level })
    }

    /// Binary convention: treat 1 vs reference 0, success level 1.
    pub fn binary(y: usize, h: usize) -> Result<Self> {
        CausalQuery::new(y, h, 1, 0, 1)
    }

    fn validate(&self, levels: &[usize]) -> Result<()> {
        let q = levels.len();
        if self.y >= q || self.h >= q {
            return Err(Error::Contract("query node out of range".into()));
        }
        if self.treat_level as usize >= levels[self.h] || self.ref_level as usize >= levels[self.h] {
            return Err(Error::Contract("exposure level out of range".into()));
        }
        if self.success_level as usize >= levels[self.y] {
            return Err(Error::Contract("success level out of range".into()));
        }
        Ok(())
    }
}

/// Per-subject effect estimates with equal-tailed credible bounds and the
/// raw per-record draw sequences behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalEstimate {
    pub estimates: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
}

fn theta_levels(theta: &ThetaDraw) -> Vec<usize> {
    theta.nodes.iter().map(|n| n.child_card).collect()
}

fn check_theta_matches(theta: &ThetaDraw, d: &Dag) -> Result<()> {
    if theta.nodes.len() != d.q() {
        return Err(Error::Contract("parameter draw and DAG disagree on variable count".into()));
    }
    for (j, node) in theta.nodes.iter().enumerate() {
        if node.j != j || node.pa != d.parents(j) {
            return Err(Error::Contract("parameter draw does not align with the DAG".into()));
        }
    }
    Ok(())
}

/// Joint probability table over a sorted node subset `targets`, obtained by
/// enumerating the ancestral closure of the subset and marginalizing.
/// Configurations are indexed mixed-radix over `targets` ascending with the
/// last node fastest.
fn marginal_table(theta: &ThetaDraw, d: &Dag, targets: &[usize]) -> Result<Vec<f64>> {
    let levels = theta_levels(theta);
    let mut closure_mask = 0u64;
    for &v in targets {
        closure_mask |= d.ancestors_mask(v) | (1u64 << v);
    }
    let closure: Vec<usize> = (0..d.q()).filter(|&v| closure_mask >> v & 1 == 1).collect();
    let mut total = 1u64;
    for &v in &closure {
        total = total
            .checked_mul(levels[v] as u64)
            .filter(|&t| t <= MAX_ENUM_CONFIGS)
            .ok_or_else(|| Error::TooLarge("ancestral closure too large to enumerate".into()))?;
    }
    let mut t_total = 1u64;
    for &v in targets {
        t_total *= levels[v] as u64;
    }
    let mut out = vec![0.0; t_total as usize];
    let mut x = vec![0u8; d.q()];
    for idx in 0..total {
        let mut rem = idx;
        for &v in closure.iter().rev() {
            x[v] = (rem % levels[v] as u64) as u8;
            rem /= levels[v] as u64;
        }
        let mut p = 1.0;
        for &v in &closure {
            let node = &theta.nodes[v];
            p *= node.prob(node.config_index(&x), x[v] as usize);
        }
        let mut t_idx = 0u64;
        for &v in targets {
            t_idx = t_idx * levels[v] as u64 + x[v] as u64;
        }
        out[t_idx as usize] += p;
    }
    Ok(out)
}

/// Causal effect of do(X_h = treat) versus do(X_h = ref) on P(Y = success),
/// adjusted over pa(h): sum over parent configurations s of
/// [P(Y=succ | h=treat, s) - P(Y=succ | h=ref, s)] * P(s). Conditionals with
/// zero-probability conditioning events contribute zero.
pub fn causal_effect(theta: &ThetaDraw, d: &Dag, query: &CausalQuery) -> Result<f64> {
    check_theta_matches(theta, d)?;
    let levels = theta_levels(theta);
    query.validate(&levels)?;
    let pa = d.parents(query.h);
    // Sorted union {y, h} ∪ pa(h); y and h never appear in pa(h).
    let mut targets: Vec<usize> = pa.to_vec();
    targets.push(query.y);
    targets.push(query.h);
    targets.sort_unstable();
    let joint = marginal_table(theta, d, &targets)?;
    let y_pos = targets.iter().position(|&v| v == query.y).expect("y is a target");
    let h_pos = targets.iter().position(|&v| v == query.h).expect("h is a target");
    let cards: Vec<usize> = targets.iter().map(|&v| levels[v]).collect();
    let pa_configs: u64 = pa.iter().map(|&v| levels[v] as u64).product();
    let mut effect = 0.0;
    for s in 0..pa_configs {
        // Decode the parent configuration into per-target digits.
        let mut digits = vec![0u8; targets.len()];
        let mut rem = s;
        for &p in pa.iter().rev() {
            let pos = targets.iter().position(|&v| v == p).expect("parent is a target");
            digits[pos] = (rem % levels[p] as u64) as u8;
            rem /= levels[p] as u64;
        }
        let index_of = |digits: &[u8]| -> usize {
            let mut idx = 0usize;
            for (pos, &d) in digits.iter().enumerate() {
                idx = idx * cards[pos] + d as usize;
            }
            idx
        };
        let cond_success = |h_level: u8, digits: &mut Vec<u8>| -> f64 {
            digits[h_pos] = h_level;
            let mut num = 0.0;
            let mut den = 0.0;
            for m in 0..cards[y_pos] {
                digits[y_pos] = m as u8;
                let p = joint[index_of(digits)];
                den += p;
                if m == query.success_level as usize {
                    num = p;
                }
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        };
        // P(pa = s): marginalize y and h out of the joint at this s.
        let mut p_s = 0.0;
        for hl in 0..cards[h_pos] {
            digits[h_pos] = hl as u8;
            for m in 0..cards[y_pos] {
                digits[y_pos] = m as u8;
                p_s += joint[index_of(&digits)];
            }
        }
        let diff = cond_success(query.treat_level, &mut digits)
            - cond_success(query.ref_level, &mut digits);
        effect += diff * p_s;
    }
    Ok(effect)
}

/// Slow oracle: E[1{Y = success}] under the truncated factorization with
/// X_h externally fixed to `level`, computed by full joint enumeration.
/// `y == h` is permitted (the expectation is then 1{level == success}).
pub fn post_intervention_expectation(
    theta: &ThetaDraw,
    d: &Dag,
    h: usize,
    level: u8,
    y: usize,
    success_level: u8,
) -> Result<f64> {
    check_theta_matches(theta, d)?;
    let levels = theta_levels(theta);
    if h >= levels.len() || y >= levels.len() {
        return Err(Error::Contract("query node out of range".into()));
    }
    if level as usize >= levels[h] || success_level as usize >= levels[y] {
        return Err(Error::Contract("query level out of range".into()));
    }
    let mut total = 1u64;
    for &l in &levels {
        total = total
            .checked_mul(l as u64)
            .filter(|&t| t <= MAX_ENUM_CONFIGS)
            .ok_or_else(|| {
                Error::TooLarge(
                    "joint state space too large to enumerate; use causal_effect".into(),
                )
            })?;
    }
    let q = levels.len();
    let mut x = vec![0u8; q];
    let mut acc = 0.0;
    for idx in 0..total {
        let mut rem = idx;
        for v in (0..q).rev() {
            x[v] = (rem % levels[v] as u64) as u8;
            rem /= levels[v] as u64;
        }
        if x[h] != level || x[y] != success_level {
            continue;
        }
        let mut p = 1.0;
        for v in 0..q {
            if v == h {
                continue;
            }
            let node = &theta.nodes[v];
            p *= node.prob(node.config_index(&x), x[v] as usize);
        }
        acc += p;
    }
    Ok(acc)
}

// Type-7 empirical quantile over a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-subject Bayesian model average of the causal effect over a trace:
/// each record contributes the effect computed from the subject's cluster
/// DAG and parameter draw. Requires parameters in every recorded cluster.
pub fn bma_effects(trace: &Trace, query: &CausalQuery) -> Result<CausalEstimate> {
    bma_effects_quantiles(trace, query, 0.025, 0.975)
}

/// [`bma_effects`] with explicit equal-tailed credible levels.
pub fn bma_effects_quantiles(
    trace: &Trace,
    query: &CausalQuery,
    lower_p: f64,
    upper_p: f64,
) -> Result<CausalEstimate> {
    if trace.records.is_empty() {
        return Err(Error::Contract("trace has no records".into()));
    }
    if !(0.0..=1.0).contains(&lower_p) || !(0.0..=1.0).contains(&upper_p) || lower_p > upper_p {
        return Err(Error::Contract("invalid credible levels".into()));
    }
    query.validate(&trace.meta.levels)?;
    let n = trace.meta.n;
    let mut draws = vec![Vec::with_capacity(trace.records.len()); n];
    for rec in &trace.records {
        let mut per_cluster = Vec::with_capacity(rec.clusters.len());
        for cl in &rec.clusters {
            let theta = cl.theta.as_ref().ok_or_else(|| {
                Error::Contract(
                    "trace lacks parameter draws; re-run the fit with parameter recording".into(),
                )
            })?;
            per_cluster.push(causal_effect(theta, &cl.dag, query)?);
        }
        for (i, &label) in rec.xi.iter().enumerate() {
            draws[i].push(per_cluster[label]);
        }
    }
    let mut estimates = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for seq in &draws {
        estimates.push(seq.iter().sum::<f64>() / seq.len() as f64);
        let mut sorted = seq.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite effects"));
        lower.push(quantile(&sorted, lower_p));
        upper.push(quantile(&sorted, upper_p));
    }
    Ok(CausalEstimate { estimates, lower, upper, draws })
}

/// Battery of effects for a polytomous exposure: one estimate per treatment
/// level 1..L-1, each against reference level 0.
pub fn battery_effects(
    trace: &Trace,
    y: usize,
    h: usize,
    success_level: u8,
) -> Result<Vec<(u8, CausalEstimate)>> {
    if h >= trace.meta.levels.len() {
        return Err(Error::Contract("exposure node out of range".into()));
    }
    let card = trace.meta.levels[h];
    let mut out = Vec::with_capacity(card.saturating_sub(1));
    for treat in 1..card {
        let query = CausalQuery::new(y, h, treat as u8, 0, success_level)?;
        out.push((treat as u8, bma_effects(trace, &query)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catmodel::NodeTheta;
    use crate::dpmix::{RecordedCluster, TraceRecord};
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    // Hand-built parameter draw aligned with a DAG over binary variables.
    fn theta_for(d: &Dag, levels: &[usize], tables: Vec<Vec<f64>>) -> ThetaDraw {
        let nodes = (0..d.q())
            .map(|j| {
                let pa: Vec<usize> = d.parents(j).to_vec();
                let pa_cards: Vec<usize> = pa.iter().map(|&p| levels[p]).collect();
                NodeTheta { j, pa, pa_cards, child_card: levels[j], probs: tables[j].clone() }
            })
            .collect();
        ThetaDraw { nodes }
    }

    fn random_theta<R: rand::Rng>(d: &Dag, levels: &[usize], rng: &mut R) -> ThetaDraw {
        let tables = (0..d.q())
            .map(|j| {
                let pa_card: usize = d.parents(j).iter().map(|&p| levels[p]).product();
                let mut probs = Vec::with_capacity(pa_card * levels[j]);
                for _ in 0..pa_card {
                    let raw: Vec<f64> = (0..levels[j]).map(|_| rng.random::<f64>() + 0.05).collect();
                    let sum: f64 = raw.iter().sum();
                    probs.extend(raw.into_iter().map(|v| v / sum));
                }
                probs
            })
            .collect();
        theta_for(d, levels, tables)
    }

    fn random_dag<R: rand::Rng>(q: usize, rng: &mut R) -> Dag {
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
        Dag::from_edges(q, &edges).unwrap()
    }

    #[test]
    fn single_edge_adjustment_with_no_parents() {
        let d = Dag::from_edges(2, &[(0, 1)]).unwrap();
        let theta = theta_for(&d, &[2, 2], vec![
            vec![0.6, 0.4],
            // y | h: success prob 0.5 at h=0, 0.9 at h=1.
            vec![0.5, 0.5, 0.1, 0.9],
        ]);
        let q = CausalQuery::binary(1, 0).unwrap();
        let effect = causal_effect(&theta, &d, &q).unwrap();
        assert!((effect - 0.4).abs() < 1e-12);
    }

    #[test]
    fn one_binary_parent_adjusts_by_its_marginal() {
        // w=0, h=1, y=2; w -> h, w -> y, h -> y; P(w=0)=0.4; success probs
        // (h=1,w=0)=0.8, (h=0,w=0)=0.3, (h=1,w=1)=0.9, (h=0,w=1)=0.5.
        let d = Dag::from_edges(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let theta = theta_for(&d, &[2, 2, 2], vec![
            vec![0.4, 0.6],
            vec![0.7, 0.3, 0.2, 0.8],
            // y parents sorted (w, h), last fastest: (0,0),(0,1),(1,0),(1,1).
            vec![0.7, 0.3, 0.2, 0.8, 0.5, 0.5, 0.1, 0.9],
        ]);
        let q = CausalQuery::binary(2, 1).unwrap();
        let effect = causal_effect(&theta, &d, &q).unwrap();
        assert!((effect - 0.44).abs() < 1e-12, "effect {effect}");
    }

    #[test]
    fn non_ancestor_exposure_has_zero_effect() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..20 {
            let d = random_dag(4, &mut rng);
            let levels = vec![2usize; 4];
            let theta = random_theta(&d, &levels, &mut rng);
            // Pick (h, y) with no directed path h -> y.
            let mut found = None;
            'outer: for h in 0..4 {
                for y in 0..4 {
                    if y != h && !d.reaches(h, y) {
                        found = Some((h, y));
                        break 'outer;
                    }
                }
            }
            let Some((h, y)) = found else { continue };
            let q = CausalQuery::binary(y, h).unwrap();
            let effect = causal_effect(&theta, &d, &q).unwrap();
            assert!(effect.abs() < 1e-12, "effect {effect}");
        }
    }

    #[test]
    fn intervention_forces_the_exposed_value() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let d = random_dag(3, &mut rng);
        let theta = random_theta(&d, &[2, 2, 2], &mut rng);
        let p_same = post_intervention_expectation(&theta, &d, 1, 1, 1, 1).unwrap();
        let p_other = post_intervention_expectation(&theta, &d, 1, 1, 1, 0).unwrap();
        assert!((p_same - 1.0).abs() < 1e-12);
        assert!(p_other.abs() < 1e-12);
    }

    #[test]
    fn empty_dag_expectation_ignores_the_intervention() {
        let d = Dag::empty(3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let theta = random_theta(&d, &[2, 3, 2], &mut rng);
        let marginal = theta.nodes[2].prob(0, 1);
        for level in 0..3u8 {
            let e = post_intervention_expectation(&theta, &d, 1, level, 2, 1).unwrap();
            assert!((e - marginal).abs() < 1e-12);
        }
    }

    #[test]
    fn battery_covers_every_nonreference_level() {
        let d = Dag::from_edges(2, &[(0, 1)]).unwrap();
        let levels = vec![3usize, 2usize];
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let theta = random_theta(&d, &levels, &mut rng);
        let trace = Trace {
            meta: toy_meta(&levels),
            records: vec![TraceRecord {
                xi: vec![0, 0],
                alpha: 1.0,
                clusters: vec![RecordedCluster { dag: d.clone(), theta: Some(theta.clone()) }],
            }],
        };
        let battery = battery_effects(&trace, 1, 0, 1).unwrap();
        assert_eq!(battery.len(), 2);
        for (treat, est) in &battery {
            let q = CausalQuery::new(1, 0, *treat, 0, 1).unwrap();
            let direct = causal_effect(&theta, &d, &q).unwrap();
            assert!((est.estimates[0] - direct).abs() < 1e-12);
        }
    }

    fn toy_meta(levels: &[usize]) -> crate::dpmix::TraceMeta {
        crate::dpmix::TraceMeta {
            version: "test".into(),
            n: 2,
            q: levels.len(),
            names: (0..levels.len()).map(|j| format!("v{j}")).collect(),
            levels: levels.to_vec(),
            value_labels: levels.iter().map(|&l| (0..l).map(|m| m.to_string()).collect()).collect(),
            dataset_fingerprint: "test".into(),
            config: crate::dpmix::McmcConfig::defaults(levels.len()),
        }
    }

    #[test]
    fn bma_averages_per_subject_cluster_effects() {
        let d0 = Dag::from_edges(2, &[(0, 1)]).unwrap();
        let d1 = Dag::empty(2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let levels = vec![2usize, 2usize];
        let t0 = random_theta(&d0, &levels, &mut rng);
        let t1 = random_theta(&d1, &levels, &mut rng);
        let t0b = random_theta(&d0, &levels, &mut rng);
        let query = CausalQuery::binary(1, 0).unwrap();
        let e0 = causal_effect(&t0, &d0, &query).unwrap();
        let e1 = causal_effect(&t1, &d1, &query).unwrap();
        let e0b = causal_effect(&t0b, &d0, &query).unwrap();
        let trace = Trace {
            meta: toy_meta(&levels),
            records: vec![
                TraceRecord {
                    xi: vec![0, 1],
                    alpha: 1.0,
                    clusters: vec![
                        RecordedCluster { dag: d0.clone(), theta: Some(t0) },
                        RecordedCluster { dag: d1.clone(), theta: Some(t1) },
                    ],
                },
                TraceRecord {
                    xi: vec![0, 0],
                    alpha: 1.0,
                    clusters: vec![RecordedCluster { dag: d0.clone(), theta: Some(t0b) }],
                },
            ],
        };
        let est = bma_effects(&trace, &query).unwrap();
        assert!((est.estimates[0] - (e0 + e0b) / 2.0).abs() < 1e-12);
        assert!((est.estimates[1] - (e1 + e0b) / 2.0).abs() < 1e-12);
        assert_eq!(est.draws[0], vec![e0, e0b]);
        // Binary success probabilities keep effects inside [-1, 1].
        for v in est.estimates.iter().chain(est.lower.iter()).chain(est.upper.iter()) {
            assert!((-1.0..=1.0).contains(v));
        }
    }

    #[test]
    fn bma_requires_recorded_parameters() {
        let d = Dag::empty(2).unwrap();
        let levels = vec![2usize, 2usize];
        let trace = Trace {
            meta: toy_meta(&levels),
            records: vec![TraceRecord {
                xi: vec![0, 0],
                alpha: 1.0,
                clusters: vec![RecordedCluster { dag: d, theta: None }],
            }],
        };
        let query = CausalQuery::binary(1, 0).unwrap();
        let err = bma_effects(&trace, &query).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn effect_matches_enumeration_difference(seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let q = rng.random_range(2..=5usize);
            let d = random_dag(q, &mut rng);
            let levels = vec![2usize; q];
            let theta = random_theta(&d, &levels, &mut rng);
            let y = rng.random_range(0..q);
            let h = (y + 1 + rng.random_range(0..q - 1)) % q;
            let query = CausalQuery::binary(y, h).unwrap();
            let effect = causal_effect(&theta, &d, &query).unwrap();
            let oracle = post_intervention_expectation(&theta, &d, h, 1, y, 1).unwrap()
                - post_intervention_expectation(&theta, &d, h, 0, y, 1).unwrap();
            prop_assert!((effect - oracle).abs() < 1e-12, "{} vs {}", effect, oracle);
            prop_assert!((-1.0..=1.0).contains(&effect));
        }
    }
}
