//! The five subcommands: fit, summarize, causal, simulate, benchmark.

use crate::config::{build_run_opts, McmcOpts};
use dagmix::catmodel::Dataset;
use dagmix::causal::{battery_effects, bma_effects, CausalEstimate, CausalQuery};
use dagmix::dpmix::{run_mcmc_with_progress, Trace};
use dagmix::graph::StructuralConstraints;
use dagmix::summaries::{
    point_clustering_minvi, point_clustering_threshold, point_dag, ppi, similarity,
    Partition, PpiMatrix, SimilarityMatrix,
};
use dagmix::synth::{benchmark_run, simulate_to_dirs, BenchMode, SynthConfig};
use dagmix::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(clap::Args, Debug)]
pub struct FitArgs {
    /// CSV of categorical observations, one row per subject
    #[arg(long)]
    pub data: PathBuf,
    /// Flat key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Structural constraints file (forbid/exogenous/response directives)
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Output directory; receives chain<c>/ traces and manifest.json
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub mcmc: McmcOpts,
}

#[derive(clap::Args, Debug)]
pub struct SummarizeArgs {
    /// Trace directory, or a fit output directory holding chain<c>/ subdirs
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    /// Concatenate all discovered chains before summarizing
    #[arg(long)]
    pub pool: bool,
    /// Output directory for summary CSVs
    #[arg(long)]
    pub out: PathBuf,
    /// Use the minimum expected variation-of-information partition
    #[arg(long)]
    pub minvi: bool,
    /// Co-clustering threshold for the partition rule
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Edge-probability threshold for per-subject point graphs
    #[arg(long, default_value_t = 0.5)]
    pub dag_threshold: f64,
    /// 1-based subject whose edge probabilities and point graph to emit
    /// (repeatable)
    #[arg(long)]
    pub subject: Vec<usize>,
}

#[derive(clap::Args, Debug)]
pub struct CausalArgs {
    /// Trace directory, or a fit output directory holding chain<c>/ subdirs
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    /// Concatenate all discovered chains first
    #[arg(long)]
    pub pool: bool,
    /// Outcome variable (name or 0-based index)
    #[arg(long)]
    pub y: String,
    /// Intervened variable (name or 0-based index)
    #[arg(long)]
    pub h: String,
    /// Treatment level of the intervened variable
    #[arg(long, default_value_t = 1)]
    pub treat: u8,
    /// Reference level of the intervened variable
    #[arg(long = "ref", default_value_t = 0)]
    pub reference: u8,
    /// Outcome level whose probability is contrasted
    #[arg(long, default_value_t = 1)]
    pub success: u8,
    /// Contrast every non-reference level against the reference
    #[arg(long)]
    pub battery: bool,
    /// Output directory for effects CSVs
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug, Clone)]
pub struct GridArgs {
    /// Number of observed variables
    #[arg(long, default_value_t = 10)]
    pub q: usize,
    /// Number of ground-truth clusters
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    /// Comma-separated per-cluster sizes to sweep
    #[arg(long, default_value = "100,200,500")]
    pub nk: String,
    /// Comma-separated discretization quantile orders to sweep
    #[arg(long, default_value = "0.1,0.4")]
    pub alpha_q: String,
    /// Edge-inclusion probability of the ground-truth graphs
    #[arg(long, default_value_t = 0.2)]
    pub pi: f64,
    /// Replicates per grid cell
    #[arg(long, default_value_t = 40)]
    pub replicates: usize,
}

#[derive(clap::Args, Debug)]
pub struct SimulateArgs {
    /// Output directory; one subdirectory per grid cell unless singular
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Generator seed (each grid cell derives its own)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args, Debug)]
pub struct BenchmarkArgs {
    /// Output directory; one subdirectory per grid cell unless singular
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Comma-separated fitting modes: mixture, no_dag, no_mixture, oracle
    #[arg(long, default_value = "mixture,no_dag,no_mixture,oracle")]
    pub modes: String,
    /// Also write each replicate's ground truth under the cell directory
    #[arg(long)]
    pub export_data: bool,
    /// Flat key=value sampler configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub mcmc: McmcOpts,
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let started = Instant::now();
    let (ds, warnings) = Dataset::from_csv_path(&args.data)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let opts = build_run_opts(ds.q(), args.config.as_deref(), &args.mcmc)?;
    let constraints = match &args.constraints {
        Some(p) => StructuralConstraints::parse(&std::fs::read_to_string(p)?, ds.names())?,
        None => StructuralConstraints::none(ds.q())?,
    };
    std::fs::create_dir_all(&args.out)?;
    for c in 1..=opts.chains {
        let mut rng = ChaCha20Rng::seed_from_u64(opts.mcmc.seed);
        rng.set_stream(c as u64);
        let every = opts.progress_every;
        let trace = run_mcmc_with_progress(&ds, &opts.mcmc, &constraints, &mut rng, |p| {
            if every > 0 && (p.iteration % every == 0 || p.iteration == p.total) {
                eprintln!(
                    "chain {c} iter {}/{} K={} alpha={:.4} dag_accept={:.3}",
                    p.iteration, p.total, p.n_clusters, p.alpha, p.dag_accept_rate
                );
            }
        })?;
        trace.write_dir(&args.out.join(format!("chain{c}")))?;
    }
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "data": args.data.display().to_string(),
        "dataset_fingerprint": ds.fingerprint(),
        "n": ds.n(),
        "q": ds.q(),
        "seed": opts.mcmc.seed,
        "chains": opts.chains,
        "config": opts.mcmc,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Expands each path to trace directories (a dir with meta.json, or a parent
/// of chain<c>/ dirs) and pools them into one trace.
fn load_traces(paths: &[PathBuf], pool: bool) -> Result<Trace> {
    let mut dirs = Vec::new();
    for p in paths {
        if p.join("meta.json").is_file() {
            dirs.push(p.clone());
            continue;
        }
        let mut chains: Vec<(usize, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(p)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(idx) = name.strip_prefix("chain") {
                if let Ok(c) = idx.parse::<usize>() {
                    if entry.path().join("meta.json").is_file() {
                        chains.push((c, entry.path()));
                    }
                }
            }
        }
        if chains.is_empty() {
            return Err(Error::Data(format!(
                "{} holds no trace: no meta.json and no chain<c>/ directories",
                p.display()
            )));
        }
        chains.sort();
        dirs.extend(chains.into_iter().map(|(_, d)| d));
    }
    if dirs.len() > 1 && !pool {
        return Err(Error::Config(format!(
            "found {} chains; pass --pool to combine them",
            dirs.len()
        )));
    }
    let traces = dirs.iter().map(|d| Trace::read_dir(d)).collect::<Result<Vec<_>>>()?;
    Trace::concat(traces)
}

fn write_similarity_csv(s: &SimilarityMatrix, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "subject")?;
    for j in 1..=s.n() {
        write!(w, ",{j}")?;
    }
    writeln!(w)?;
    for i in 0..s.n() {
        write!(w, "{}", i + 1)?;
        for j in 0..s.n() {
            write!(w, ",{}", s.get(i, j))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_partition_csv(p: &Partition, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "subject,label")?;
    for (i, &l) in p.labels().iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l + 1)?;
    }
    w.flush()?;
    Ok(())
}

fn write_ppi_csv(p: &PpiMatrix, names: &[String], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "variable")?;
    for name in names {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for u in 0..p.q() {
        write!(w, "{}", names[u])?;
        for v in 0..p.q() {
            write!(w, ",{}", p.get(u, v))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let trace = load_traces(&args.trace, args.pool)?;
    if trace.records.is_empty() {
        return Err(Error::Data("trace holds no records".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let s = similarity(&trace)?;
    write_similarity_csv(&s, &args.out.join("similarity.csv"))?;
    let partition = if args.minvi {
        point_clustering_minvi(&s, &trace)?
    } else {
        point_clustering_threshold(&s, args.threshold)?
    };
    write_partition_csv(&partition, &args.out.join("partition.csv"))?;
    for &subject in &args.subject {
        if subject == 0 || subject > trace.meta.n {
            return Err(Error::Config(format!(
                "subject {subject} out of range 1..={}",
                trace.meta.n
            )));
        }
        let p = ppi(&trace, subject - 1)?;
        write_ppi_csv(&p, &trace.meta.names, &args.out.join(format!("ppi_subject{subject}.csv")))?;
        let dag = point_dag(&p, args.dag_threshold)?;
        let mut text = String::new();
        for (u, v) in dag.edges() {
            text.push_str(&format!("{u} {v}\n"));
        }
        std::fs::write(args.out.join(format!("dag_subject{subject}.edgelist")), text)?;
    }
    Ok(())
}

fn resolve_token(token: &str, names: &[String]) -> Result<usize> {
    if let Ok(idx) = token.parse::<usize>() {
        if idx < names.len() {
            return Ok(idx);
        }
        return Err(Error::Config(format!(
            "column index {idx} out of range (q={})",
            names.len()
        )));
    }
    names
        .iter()
        .position(|n| n == token)
        .ok_or_else(|| Error::Config(format!("unknown column name {token:?}")))
}

fn write_effects_csv(est: &CausalEstimate, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "subject,estimate,lower,upper")?;
    for i in 0..est.estimates.len() {
        writeln!(w, "{},{},{},{}", i + 1, est.estimates[i], est.lower[i], est.upper[i])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_causal(args: &CausalArgs) -> Result<()> {
    let trace = load_traces(&args.trace, args.pool)?;
    let y = resolve_token(&args.y, &trace.meta.names)?;
    let h = resolve_token(&args.h, &trace.meta.names)?;
    std::fs::create_dir_all(&args.out)?;
    if args.battery {
        for (level, est) in battery_effects(&trace, y, h, args.success)? {
            write_effects_csv(&est, &args.out.join(format!("effects_treat{level}.csv")))?;
        }
    } else {
        let query = CausalQuery::new(y, h, args.treat, args.reference, args.success)?;
        let est = bma_effects(&trace, &query)?;
        write_effects_csv(&est, &args.out.join("effects.csv"))?;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for tok in s.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        out.push(
            tok.parse()
                .map_err(|_| Error::Config(format!("bad {what} value {tok:?}")))?,
        );
    }
    if out.is_empty() {
        return Err(Error::Config(format!("empty {what} list")));
    }
    Ok(out)
}

struct GridCell {
    cfg: SynthConfig,
    dir: PathBuf,
}

/// Expands the (n_k, alpha_q) grid. Single-cell grids write straight into
/// `out`; larger grids use one `nk<v>_aq<v>` subdirectory per cell.
fn grid_cells(grid: &GridArgs, seed: u64, out: &Path) -> Result<Vec<GridCell>> {
    let nks: Vec<usize> = parse_list("nk", &grid.nk)?;
    let alphas: Vec<f64> = parse_list("alpha_q", &grid.alpha_q)?;
    if grid.clusters == 0 {
        return Err(Error::Config("at least one cluster".into()));
    }
    let single = nks.len() == 1 && alphas.len() == 1;
    let mut cells = Vec::new();
    for (i, &nk) in nks.iter().enumerate() {
        for (j, &aq) in alphas.iter().enumerate() {
            let cell_index = (i * alphas.len() + j) as u64;
            let cfg = SynthConfig {
                q: grid.q,
                n_k: vec![nk; grid.clusters],
                edge_prob: grid.pi,
                alpha_q: aq,
                replicates: grid.replicates,
                seed: seed.wrapping_add(cell_index.wrapping_mul(1_000_003)),
            };
            cfg.validate()?;
            let dir = if single {
                out.to_path_buf()
            } else {
                out.join(format!("nk{nk}_aq{aq}"))
            };
            cells.push(GridCell { cfg, dir });
        }
    }
    Ok(cells)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    for cell in grid_cells(&args.grid, args.seed, &args.out)? {
        eprintln!("simulating {}", cell.dir.display());
        simulate_to_dirs(&cell.cfg, &cell.dir)?;
    }
    Ok(())
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let modes: Vec<BenchMode> = parse_list::<String>("modes", &args.modes)?
        .iter()
        .map(|s| BenchMode::parse(s))
        .collect::<Result<_>>()?;
    let opts = build_run_opts(args.grid.q, args.config.as_deref(), &args.mcmc)?;
    for cell in grid_cells(&args.grid, opts.mcmc.seed, &args.out)? {
        std::fs::create_dir_all(&cell.dir)?;
        eprintln!("benchmarking {}", cell.dir.display());
        let export = args.export_data.then(|| cell.dir.join("replicates"));
        let rows = benchmark_run(&cell.cfg, &opts.mcmc, &modes, export.as_deref(), |r, m| {
            eprintln!("  replicate {r} mode {} done", m.as_str());
        })?;
        dagmix::synth::write_results_csv(&rows, &cell.dir.join("results.csv"))?;
    }
    Ok(())
}
