//! Synthetic benchmark data: cluster-specific random DAGs, linear-Gaussian
//! latents discretized by empirical-quantile thresholds, and the replicate
//! protocol comparing the mixture sampler against its ablations.

use crate::catmodel::Dataset;
use crate::dpmix::{
    init_state, run_mcmc_from, McmcConfig, SamplerState, Trace,
};
use crate::graph::{shd, Dag, StructuralConstraints};
use crate::summaries::{
    point_clustering_minvi, point_dag, ppi, similarity, variation_of_information, Partition,
};
use crate::{Error, Result};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::Write as _;
use std::path::Path;

/// Generator settings: one dataset has `n_k[k]` rows in cluster k, each
/// cluster with its own random DAG and thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub q: usize,
    pub n_k: Vec<usize>,
    pub edge_prob: f64,
    pub alpha_q: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.q > crate::graph::MAX_NODES {
            return Err(Error::Config(format!(
                "variable count must lie in 1..={}",
                crate::graph::MAX_NODES
            )));
        }
        if self.n_k.is_empty() || self.n_k.iter().any(|&n| n == 0) {
            return Err(Error::Config("every cluster needs at least one row".into()));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob < 1.0) {
            return Err(Error::Config("edge probability must lie in (0, 1)".into()));
        }
        if !(self.alpha_q > 0.0 && self.alpha_q < 0.5) {
            return Err(Error::Config("discretization quantile must lie in (0, 0.5)".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("at least one replicate".into()));
        }
        Ok(())
    }
}

/// One generated dataset with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub labels: Vec<usize>,
    pub dags: Vec<Dag>,
    /// thresholds[k][j] is cluster k's cut point for variable j.
    pub thresholds: Vec<Vec<f64>>,
}

/// Uniform-order random DAG: draws a node permutation, then includes each
/// order-respecting edge independently with probability `pi`.
pub fn random_dag<R: Rng + ?Sized>(q: usize, pi: f64, rng: &mut R) -> Result<Dag> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::Contract("edge probability must lie in [0, 1]".into()));
    }
    let mut order: Vec<usize> = (0..q).collect();
    for i in (1..q).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut edges = Vec::new();
    for i in 0..q {
        for j in (i + 1)..q {
            if rng.random::<f64>() < pi {
                edges.push((order[i], order[j]));
            }
        }
    }
    Dag::from_edges(q, &edges)
}

/// Structural-equation weights: entry (u, v) is nonzero exactly for edges
/// u -> v, drawn uniformly from [-2, -1] union [1, 2]. Row-major q x q.
pub fn sample_sem_weights<R: Rng + ?Sized>(d: &Dag, rng: &mut R) -> Vec<f64> {
    let q = d.q();
    let mut l = vec![0.0; q * q];
    for (u, v) in d.edges() {
        let mag = 1.0 + rng.random::<f64>();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        l[u * q + v] = sign * mag;
    }
    l
}

/// Ancestral sampling of the linear SEM with unit innovation variances:
/// Z_v = -sum_{u in pa(v)} L[u][v] Z_u + eps_v. Returns n x q row-major.
pub fn gaussian_latents_with<R: Rng + ?Sized>(
    d: &Dag,
    l: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let q = d.q();
    if l.len() != q * q {
        return Err(Error::Contract("weight matrix shape mismatch".into()));
    }
    let order = d
        .topological_order()
        .ok_or_else(|| Error::Invariant("cyclic graph in latent sampler".into()))?;
    let mut z = vec![0.0; n * q];
    for row in z.chunks_exact_mut(q) {
        for &v in &order {
            let mut val: f64 = StandardNormal.sample(rng);
            for &u in d.parents(v) {
                val -= l[u * q + v] * row[u];
            }
            row[v] = val;
        }
    }
    Ok(z)
}

/// [`gaussian_latents_with`] with freshly drawn weights.
pub fn gaussian_latents<R: Rng + ?Sized>(d: &Dag, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let l = sample_sem_weights(d, rng);
    gaussian_latents_with(d, &l, n, rng)
}

// Type-7 empirical quantile of a sorted column.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Binarizes latent columns at thresholds drawn uniformly between each
/// column's empirical `alpha_q` and `1 - alpha_q` quantiles: X = 1{Z >= g}.
/// Returns the cells (row-major n x q) and the per-column thresholds.
pub fn discretize<R: Rng + ?Sized>(
    z: &[f64],
    n: usize,
    q: usize,
    alpha_q: f64,
    rng: &mut R,
) -> Result<(Vec<u8>, Vec<f64>)> {
    if z.len() != n * q {
        return Err(Error::Contract("latent matrix shape mismatch".into()));
    }
    if !(alpha_q > 0.0 && alpha_q < 0.5) {
        return Err(Error::Contract("quantile order must lie in (0, 0.5)".into()));
    }
    let mut cells = vec![0u8; n * q];
    let mut thresholds = Vec::with_capacity(q);
    let mut col = vec![0.0; n];
    for j in 0..q {
        for i in 0..n {
            col[i] = z[i * q + j];
        }
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite latents"));
        let lo = empirical_quantile(&col, alpha_q);
        let hi = empirical_quantile(&col, 1.0 - alpha_q);
        let g = if hi > lo { lo + rng.random::<f64>() * (hi - lo) } else { lo };
        for i in 0..n {
            cells[i * q + j] = (z[i * q + j] >= g) as u8;
        }
        thresholds.push(g);
    }
    Ok((cells, thresholds))
}

/// Generates one dataset: per cluster a random DAG, SEM latents, and
/// cluster-specific thresholds; rows are stacked block-wise.
pub fn generate<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<SynthOutput> {
    cfg.validate()?;
    let q = cfg.q;
    let total: usize = cfg.n_k.iter().sum();
    let mut cells = Vec::with_capacity(total * q);
    let mut labels = Vec::with_capacity(total);
    let mut dags = Vec::with_capacity(cfg.n_k.len());
    let mut thresholds = Vec::with_capacity(cfg.n_k.len());
    for (k, &nk) in cfg.n_k.iter().enumerate() {
        let dag = random_dag(q, cfg.edge_prob, rng)?;
        let z = gaussian_latents(&dag, nk, rng)?;
        let (block, g) = discretize(&z, nk, q, cfg.alpha_q, rng)?;
        cells.extend(block);
        labels.extend(std::iter::repeat(k).take(nk));
        dags.push(dag);
        thresholds.push(g);
    }
    let names = (0..q).map(|j| format!("v{j}")).collect();
    let dataset = Dataset::new(cells, vec![2; q], names, None)?;
    Ok(SynthOutput { dataset, labels, dags, thresholds })
}

/// Writes one replicate's ground truth: `data.csv`, `labels.csv`
/// (subject,label; both 1-based), `dag_k<k>.edgelist`, `thresholds.csv`.
pub fn write_replicate_dir(out: &SynthOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ds = &out.dataset;
    let mut w = csv::Writer::from_path(dir.join("data.csv"))?;
    w.write_record(ds.names())?;
    for i in 0..ds.n() {
        w.write_record(ds.row(i).iter().map(|c| c.to_string()))?;
    }
    w.flush()?;
    let mut labels = std::io::BufWriter::new(std::fs::File::create(dir.join("labels.csv"))?);
    writeln!(labels, "subject,label")?;
    for (i, &l) in out.labels.iter().enumerate() {
        writeln!(labels, "{},{}", i + 1, l + 1)?;
    }
    labels.flush()?;
    for (k, dag) in out.dags.iter().enumerate() {
        let mut text = String::new();
        for (u, v) in dag.edges() {
            text.push_str(&format!("{u} {v}\n"));
        }
        std::fs::write(dir.join(format!("dag_k{}.edgelist", k + 1)), text)?;
    }
    let mut th = std::io::BufWriter::new(std::fs::File::create(dir.join("thresholds.csv"))?);
    writeln!(th, "cluster,variable,threshold")?;
    for (k, row) in out.thresholds.iter().enumerate() {
        for (j, g) in row.iter().enumerate() {
            writeln!(th, "{},{},{}", k + 1, ds.names()[j], g)?;
        }
    }
    th.flush()?;
    Ok(())
}

/// Generates every replicate under `dir/rep<r>/` without fitting anything.
pub fn simulate_to_dirs(cfg: &SynthConfig, dir: &Path) -> Result<()> {
    cfg.validate()?;
    for r in 0..cfg.replicates {
        let mut rng = replicate_rng(cfg.seed, r, 0);
        let out = generate(cfg, &mut rng)?;
        write_replicate_dir(&out, &dir.join(format!("rep{}", r + 1)))?;
    }
    Ok(())
}

/// Fitting strategies compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// The full mixture-of-DAGs sampler.
    Mixture,
    /// Clustering with all DAGs pinned empty.
    NoDag,
    /// One cluster for everyone, structure still sampled.
    NoMixture,
    /// True partition pinned, structure still sampled.
    Oracle,
}

impl BenchMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchMode::Mixture => "mixture",
            BenchMode::NoDag => "no_dag",
            BenchMode::NoMixture => "no_mixture",
            BenchMode::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mixture" => Ok(BenchMode::Mixture),
            "no_dag" => Ok(BenchMode::NoDag),
            "no_mixture" => Ok(BenchMode::NoMixture),
            "oracle" => Ok(BenchMode::Oracle),
            other => Err(Error::Config(format!("unknown benchmark mode {other:?}"))),
        }
    }

    fn reports_vi(&self) -> bool {
        !matches!(self, BenchMode::Oracle)
    }

    fn reports_shd(&self) -> bool {
        !matches!(self, BenchMode::NoDag)
    }
}

/// One long-format result row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub replicate: usize,
    pub mode: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

/// Writes rows as `replicate,mode,metric,value` with a header.
pub fn write_results_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "replicate,mode,metric,value")?;
    for row in rows {
        writeln!(w, "{},{},{},{}", row.replicate, row.mode, row.metric, row.value)?;
    }
    w.flush()?;
    Ok(())
}

fn replicate_rng(seed: u64, replicate: usize, lane: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 * 16 + lane);
    rng
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        (values[m / 2 - 1] + values[m / 2]) / 2.0
    }
}

fn run_mode<R: Rng + ?Sized>(
    mode: BenchMode,
    out: &SynthOutput,
    mcfg: &McmcConfig,
    constraints: &StructuralConstraints,
    rng: &mut R,
) -> Result<Trace> {
    let mut cfg = mcfg.clone();
    cfg.record_theta = false;
    match mode {
        BenchMode::Mixture => {}
        BenchMode::NoDag => cfg.flags.no_dag = true,
        BenchMode::NoMixture => cfg.flags.no_mixture = true,
        BenchMode::Oracle => cfg.flags.no_mixture = true,
    }
    let state = if mode == BenchMode::Oracle {
        let alpha = cfg.alpha_init.unwrap_or(1.0);
        SamplerState::from_assignment(&out.dataset, &out.labels, alpha, &cfg, constraints, rng)?
    } else {
        init_state(&out.dataset, &cfg, constraints, rng)?
    };
    run_mcmc_from(state, &out.dataset, &cfg, constraints, rng, |_| {})
}

fn score_mode(mode: BenchMode, out: &SynthOutput, trace: &Trace, replicate: usize) -> Result<Vec<BenchRow>> {
    let truth = Partition::from_labels(&out.labels)?;
    let mut rows = Vec::new();
    if mode.reports_vi() {
        let s = similarity(trace)?;
        let chat = point_clustering_minvi(&s, trace)?;
        let vi = variation_of_information(&chat, &truth)?;
        rows.push(BenchRow { replicate, mode: mode.as_str(), metric: "vi", value: vi });
    }
    if mode.reports_shd() {
        let n = out.dataset.n();
        let mut per_subject = Vec::with_capacity(n);
        for i in 0..n {
            let p = ppi(trace, i)?;
            let dag_hat = point_dag(&p, 0.5)?;
            per_subject.push(shd(&dag_hat, &out.dags[out.labels[i]])? as f64);
        }
        rows.push(BenchRow {
            replicate,
            mode: mode.as_str(),
            metric: "shd_median",
            value: median(&mut per_subject),
        });
    }
    Ok(rows)
}

/// Runs the replicate protocol: per replicate, generates a dataset, fits
/// every requested mode on it (independent derived RNG streams), and scores
/// clustering by VI of the minimum-expected-VI partition against the truth
/// and structure by the median per-subject SHD of thresholded point DAGs.
/// When `export` is set, each replicate's ground truth is written under
/// `export/rep<r>/`. `on_progress` is called after each fitted mode.
pub fn benchmark_run<F: FnMut(usize, BenchMode)>(
    cfg: &SynthConfig,
    mcfg: &McmcConfig,
    modes: &[BenchMode],
    export: Option<&Path>,
    mut on_progress: F,
) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    mcfg.validate()?;
    if modes.is_empty() {
        return Err(Error::Config("no benchmark modes requested".into()));
    }
    let constraints = StructuralConstraints::none(cfg.q)?;
    let mut rows = Vec::new();
    for r in 0..cfg.replicates {
        let mut data_rng = replicate_rng(cfg.seed, r, 0);
        let out = generate(cfg, &mut data_rng)?;
        if let Some(dir) = export {
            write_replicate_dir(&out, &dir.join(format!("rep{}", r + 1)))?;
        }
        for (m, &mode) in modes.iter().enumerate() {
            let mut rng = replicate_rng(cfg.seed, r, 1 + m as u64);
            let trace = run_mode(mode, &out, mcfg, &constraints, &mut rng)?;
            rows.extend(score_mode(mode, &out, &trace, r + 1)?);
            on_progress(r + 1, mode);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn random_dag_respects_edge_probability_extremes() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let d = random_dag(5, 0.0, &mut rng).unwrap();
        assert_eq!(d.edge_count(), 0);
        let d = random_dag(5, 1.0, &mut rng).unwrap();
        assert_eq!(d.edge_count(), 10);
        assert!(d.topological_order().is_some());
    }

    #[test]
    fn random_dag_mean_edge_count_matches_rate() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let draws = 10_000;
        let mut total = 0usize;
        for _ in 0..draws {
            total += random_dag(10, 0.2, &mut rng).unwrap().edge_count();
        }
        let mean = total as f64 / draws as f64;
        assert!((mean - 9.0).abs() < 0.3, "mean {mean}");
    }

    #[test]
    fn random_dag_pair_frequencies_match_rate() {
        // Each ordered pair (u, v) appears with probability pi/2.
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let (q, pi, draws) = (4usize, 0.3f64, 5000usize);
        let mut counts = vec![0usize; q * q];
        for _ in 0..draws {
            let d = random_dag(q, pi, &mut rng).unwrap();
            for (u, v) in d.edges() {
                counts[u * q + v] += 1;
            }
        }
        let expect = pi / 2.0;
        let se = (expect * (1.0 - expect) / draws as f64).sqrt();
        for u in 0..q {
            for v in 0..q {
                if u == v {
                    continue;
                }
                let freq = counts[u * q + v] as f64 / draws as f64;
                assert!((freq - expect).abs() < 3.0 * se, "pair ({u},{v}): {freq}");
            }
        }
    }

    #[test]
    fn latents_have_unit_variance_at_roots() {
        let d = Dag::empty(3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        let n = 100_000;
        let z = gaussian_latents(&d, n, &mut rng).unwrap();
        for j in 0..3 {
            let mut mean = 0.0;
            let mut sq = 0.0;
            for i in 0..n {
                mean += z[i * 3 + j];
                sq += z[i * 3 + j] * z[i * 3 + j];
            }
            mean /= n as f64;
            let var = sq / n as f64 - mean * mean;
            assert!((var - 1.0).abs() < 0.03, "var {var}");
        }
    }

    #[test]
    fn latent_covariance_matches_fixed_weights() {
        // Chain 0 -> 1 -> 2 with L[0][1]=a, L[1][2]=b:
        // Var = (1, a^2+1, b^2(a^2+1)+1), Cov(0,1)=-a, Cov(1,2)=-b(a^2+1),
        // Cov(0,2)=ab.
        let d = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let (a, b) = (1.5f64, -1.2f64);
        let mut l = vec![0.0; 9];
        l[0 * 3 + 1] = a;
        l[1 * 3 + 2] = b;
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let n = 100_000;
        let z = gaussian_latents_with(&d, &l, n, &mut rng).unwrap();
        let expect = [
            [1.0, -a, a * b],
            [-a, a * a + 1.0, -b * (a * a + 1.0)],
            [a * b, -b * (a * a + 1.0), b * b * (a * a + 1.0) + 1.0],
        ];
        for r in 0..3 {
            for c in 0..3 {
                let mut cov = 0.0;
                let mut mr = 0.0;
                let mut mc = 0.0;
                for i in 0..n {
                    mr += z[i * 3 + r];
                    mc += z[i * 3 + c];
                    cov += z[i * 3 + r] * z[i * 3 + c];
                }
                mr /= n as f64;
                mc /= n as f64;
                let cov = cov / n as f64 - mr * mc;
                assert!((cov - expect[r][c]).abs() < 0.05, "({r},{c}): {cov} vs {}", expect[r][c]);
            }
        }
    }

    #[test]
    fn discretize_keeps_thresholds_inside_the_empirical_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(36);
        let d = Dag::empty(2).unwrap();
        let n = 1000;
        let z = gaussian_latents(&d, n, &mut rng).unwrap();
        let (cells, g) = discretize(&z, n, 2, 0.1, &mut rng).unwrap();
        for j in 0..2 {
            let ones: usize = (0..n).map(|i| cells[i * 2 + j] as usize).sum();
            assert!(ones > 0 && ones < n, "column {j} degenerate");
            // At least alpha_q mass on each side by construction.
            assert!(ones as f64 / n as f64 > 0.05 && (ones as f64 / n as f64) < 0.95);
            let col: Vec<f64> = (0..n).map(|i| z[i * 2 + j]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(g[j] > lo && g[j] < hi);
        }
    }

    #[test]
    fn near_median_quantile_order_balances_levels() {
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let d = Dag::empty(1).unwrap();
        let n = 20_000;
        let z = gaussian_latents(&d, n, &mut rng).unwrap();
        let (cells, _) = discretize(&z, n, 1, 0.499, &mut rng).unwrap();
        let ones: usize = cells.iter().map(|&c| c as usize).sum();
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn generate_stacks_blocks_and_is_deterministic() {
        let cfg = SynthConfig {
            q: 4,
            n_k: vec![30, 50],
            edge_prob: 0.3,
            alpha_q: 0.1,
            replicates: 1,
            seed: 7,
        };
        let out1 = generate(&cfg, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let out2 = generate(&cfg, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        assert_eq!(out1, out2);
        assert_eq!(out1.dataset.n(), 80);
        assert_eq!(out1.dataset.q(), 4);
        assert_eq!(out1.labels[..30], vec![0; 30][..]);
        assert_eq!(out1.labels[30..], vec![1; 50][..]);
        assert_eq!(out1.dags.len(), 2);
        // Cluster thresholds are independent draws.
        assert_ne!(out1.thresholds[0], out1.thresholds[1]);
        let out3 = generate(&cfg, &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
        assert_ne!(out1, out3);
    }

    #[test]
    fn replicate_dirs_round_trip_the_dataset() {
        let cfg = SynthConfig {
            q: 3,
            n_k: vec![10, 10],
            edge_prob: 0.4,
            alpha_q: 0.2,
            replicates: 2,
            seed: 11,
        };
        let dir = tempfile::tempdir().unwrap();
        simulate_to_dirs(&cfg, dir.path()).unwrap();
        for r in 1..=2 {
            let rep = dir.path().join(format!("rep{r}"));
            let (ds, warns) = Dataset::from_csv_path(&rep.join("data.csv")).unwrap();
            assert_eq!(ds.n(), 20);
            assert_eq!(ds.q(), 3);
            assert!(warns.is_empty());
            assert!(rep.join("labels.csv").exists());
            assert!(rep.join("dag_k1.edgelist").exists());
            assert!(rep.join("dag_k2.edgelist").exists());
            assert!(rep.join("thresholds.csv").exists());
        }
    }

    #[test]
    fn benchmark_emits_the_expected_metrics_per_mode() {
        let cfg = SynthConfig {
            q: 3,
            n_k: vec![25, 25],
            edge_prob: 0.4,
            alpha_q: 0.1,
            replicates: 2,
            seed: 5,
        };
        let mut mcfg = McmcConfig::defaults(3);
        mcfg.iterations = 120;
        mcfg.burn_in = 20;
        mcfg.thin = 5;
        let modes = [BenchMode::Mixture, BenchMode::NoDag, BenchMode::NoMixture, BenchMode::Oracle];
        let rows = benchmark_run(&cfg, &mcfg, &modes, None, |_, _| {}).unwrap();
        let count = |mode: &str, metric: &str| {
            rows.iter().filter(|r| r.mode == mode && r.metric == metric).count()
        };
        assert_eq!(count("mixture", "vi"), 2);
        assert_eq!(count("mixture", "shd_median"), 2);
        assert_eq!(count("no_dag", "vi"), 2);
        assert_eq!(count("no_dag", "shd_median"), 0);
        assert_eq!(count("no_mixture", "vi"), 2);
        assert_eq!(count("no_mixture", "shd_median"), 2);
        assert_eq!(count("oracle", "vi"), 0);
        assert_eq!(count("oracle", "shd_median"), 2);
        // One-cluster fits report VI equal to the truth's entropy.
        let truth_h = {
            let n = 50.0f64;
            -(25.0 / n) * (25.0f64 / n).ln() * 2.0
        };
        for row in rows.iter().filter(|r| r.mode == "no_mixture" && r.metric == "vi") {
            assert!((row.value - truth_h).abs() < 1e-12);
        }
        // Deterministic rerun.
        let rows2 = benchmark_run(&cfg, &mcfg, &modes, None, |_, _| {}).unwrap();
        assert_eq!(rows, rows2);
    }

    #[test]
    fn results_csv_has_long_format() {
        let rows = vec![
            BenchRow { replicate: 1, mode: "mixture", metric: "vi", value: 0.25 },
            BenchRow { replicate: 1, mode: "oracle", metric: "shd_median", value: 3.0 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_results_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "replicate,mode,metric,value\n1,mixture,vi,0.25\n1,oracle,shd_median,3\n");
    }
}
