//! Flat key=value configuration files and the flag > file > default merge.

use dagmix::dpmix::{InitStrategy, McmcConfig};
use dagmix::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Sampler options shared by `fit` and `benchmark`. Every field is also a
/// configuration-file key; explicit flags win over file values, which win
/// over defaults. `chains` and `progress_every` only affect `fit`.
#[derive(clap::Args, Debug, Default, Clone)]
pub struct McmcOpts {
    /// Total MCMC sweeps
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sweeps discarded before recording starts
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Record every THIN-th sweep after burn-in
    #[arg(long)]
    pub thin: Option<usize>,
    /// Dirichlet equivalent sample size
    #[arg(long)]
    pub bdeu_a: Option<f64>,
    /// Edge-inclusion Beta prior, first shape
    #[arg(long)]
    pub a_w: Option<f64>,
    /// Edge-inclusion Beta prior, second shape
    #[arg(long)]
    pub b_w: Option<f64>,
    /// Concentration Gamma prior shape
    #[arg(long)]
    pub alpha_c: Option<f64>,
    /// Concentration Gamma prior rate
    #[arg(long)]
    pub alpha_d: Option<f64>,
    /// Starting concentration (drawn from the prior when omitted)
    #[arg(long)]
    pub alpha_init: Option<f64>,
    /// Stationary Metropolis moves appended to each fresh baseline-graph draw
    #[arg(long)]
    pub baseline_burn: Option<usize>,
    /// Structure proposals per cluster per sweep
    #[arg(long)]
    pub dag_moves_per_iter: Option<usize>,
    /// Starting partition: "single" or "random:K"
    #[arg(long)]
    pub init: Option<String>,
    /// Record conditional probability tables at recorded sweeps (true/false)
    #[arg(long)]
    pub record_theta: Option<bool>,
    /// RNG seed; chain c uses stream c of this seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of independent chains (fit only)
    #[arg(long)]
    pub chains: Option<usize>,
    /// Progress-line cadence in sweeps, 0 to silence (fit only)
    #[arg(long)]
    pub progress_every: Option<usize>,
    /// Visit subjects in a fresh random order each sweep
    #[arg(long)]
    pub random_scan: bool,
    /// Pin every cluster graph to the empty graph
    #[arg(long)]
    pub no_dag: bool,
    /// Keep all subjects in one cluster
    #[arg(long)]
    pub no_mixture: bool,
    /// Never update the concentration parameter
    #[arg(long)]
    pub fixed_alpha: bool,
    /// Skip the operator-count correction in structure moves
    #[arg(long)]
    pub approx_hastings: bool,
    /// Recount sampler caches after every sweep (slow)
    #[arg(long)]
    pub debug_checks: bool,
}

/// Fully merged run options.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOpts {
    pub mcmc: McmcConfig,
    pub chains: usize,
    pub progress_every: usize,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {line_no}: expected key = value"))
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("config line {line_no}: empty key")));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("config line {line_no}: duplicate key {key:?}")));
        }
    }
    Ok(map)
}

pub fn parse_init(s: &str) -> Result<InitStrategy> {
    if s == "single" {
        return Ok(InitStrategy::Single);
    }
    if let Some(k) = s.strip_prefix("random:") {
        let k: usize = k
            .parse()
            .map_err(|_| Error::Config(format!("bad cluster count in init {s:?}")))?;
        return Ok(InitStrategy::Random(k));
    }
    Err(Error::Config(format!("init must be \"single\" or \"random:K\", got {s:?}")))
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("config key {key}: cannot parse value {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("config key {key}: expected true/false, got {value:?}"))),
    }
}

fn apply_file(opts: &mut RunOpts, map: &BTreeMap<String, String>) -> Result<()> {
    for (key, value) in map {
        let m = &mut opts.mcmc;
        match key.as_str() {
            "iterations" => m.iterations = parse_as(key, value)?,
            "burn_in" => m.burn_in = parse_as(key, value)?,
            "thin" => m.thin = parse_as(key, value)?,
            "bdeu_a" => m.bdeu_a = parse_as(key, value)?,
            "a_w" => m.dag_prior.a_w = parse_as(key, value)?,
            "b_w" => m.dag_prior.b_w = parse_as(key, value)?,
            "alpha_c" => m.alpha_prior_c = parse_as(key, value)?,
            "alpha_d" => m.alpha_prior_d = parse_as(key, value)?,
            "alpha_init" => m.alpha_init = Some(parse_as(key, value)?),
            "baseline_burn" => m.baseline_burn = parse_as(key, value)?,
            "dag_moves_per_iter" => m.dag_moves_per_iter = parse_as(key, value)?,
            "init" => m.init = parse_init(value)?,
            "record_theta" => m.record_theta = parse_bool(key, value)?,
            "seed" => m.seed = parse_as(key, value)?,
            "random_scan" => m.random_scan = parse_bool(key, value)?,
            "debug_checks" => m.debug_checks = parse_bool(key, value)?,
            "no_dag" => m.flags.no_dag = parse_bool(key, value)?,
            "no_mixture" => m.flags.no_mixture = parse_bool(key, value)?,
            "fixed_alpha" => m.flags.fixed_alpha = parse_bool(key, value)?,
            "approx_hastings" => m.flags.approx_hastings = parse_bool(key, value)?,
            "chains" => opts.chains = parse_as(key, value)?,
            "progress_every" => opts.progress_every = parse_as(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
    }
    Ok(())
}

fn apply_flags(opts: &mut RunOpts, f: &McmcOpts) -> Result<()> {
    let m = &mut opts.mcmc;
    if let Some(v) = f.iterations {
        m.iterations = v;
    }
    if let Some(v) = f.burn_in {
        m.burn_in = v;
    }
    if let Some(v) = f.thin {
        m.thin = v;
    }
    if let Some(v) = f.bdeu_a {
        m.bdeu_a = v;
    }
    if let Some(v) = f.a_w {
        m.dag_prior.a_w = v;
    }
    if let Some(v) = f.b_w {
        m.dag_prior.b_w = v;
    }
    if let Some(v) = f.alpha_c {
        m.alpha_prior_c = v;
    }
    if let Some(v) = f.alpha_d {
        m.alpha_prior_d = v;
    }
    if let Some(v) = f.alpha_init {
        m.alpha_init = Some(v);
    }
    if let Some(v) = f.baseline_burn {
        m.baseline_burn = v;
    }
    if let Some(v) = f.dag_moves_per_iter {
        m.dag_moves_per_iter = v;
    }
    if let Some(s) = &f.init {
        m.init = parse_init(s)?;
    }
    if let Some(v) = f.record_theta {
        m.record_theta = v;
    }
    if let Some(v) = f.seed {
        m.seed = v;
    }
    if f.random_scan {
        m.random_scan = true;
    }
    if f.debug_checks {
        m.debug_checks = true;
    }
    if f.no_dag {
        m.flags.no_dag = true;
    }
    if f.no_mixture {
        m.flags.no_mixture = true;
    }
    if f.fixed_alpha {
        m.flags.fixed_alpha = true;
    }
    if f.approx_hastings {
        m.flags.approx_hastings = true;
    }
    if let Some(v) = f.chains {
        opts.chains = v;
    }
    if let Some(v) = f.progress_every {
        opts.progress_every = v;
    }
    Ok(())
}

/// Builds the run options for a `q`-variable dataset: defaults, then the
/// optional config file, then explicit flags.
pub fn build_run_opts(q: usize, file: Option<&Path>, flags: &McmcOpts) -> Result<RunOpts> {
    let mut opts = RunOpts {
        mcmc: McmcConfig::defaults(q),
        chains: 1,
        progress_every: 1000,
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)?;
        apply_file(&mut opts, &parse_config_text(&text)?)?;
    }
    apply_flags(&mut opts, flags)?;
    if opts.chains == 0 {
        return Err(Error::Config("at least one chain".into()));
    }
    opts.mcmc.validate()?;
    Ok(opts)
}
