//! Command-line front end: `gen` writes generator clouds, `analyze` runs one
//! analysis and writes a report that embeds the resolved [`RunConfig`].
//!
//! Values are resolved as flags, then the `--config` JSON file, then
//! [`RunConfig::defaults`]. The thread count also honors `RECTILAB_THREADS`
//! between the flag and the file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta::{beta_lattice, wgl_sum, BetaKind, BetaMethod};
use crate::cones::cone_count_profile;
use crate::experiments::{self, favard_sweep, rooted_lattice, DichotomyConfig, GeneratorSpec, WidthConfig};
use crate::heavytrees::{build_heavy_trees, verify_properties, HeavyParams, HypothesisStatus};
use crate::pointset::{self, read_cloud, write_cloud, RegularCloud};
use crate::stopping::{heavy_cubes, random_family, Outcome, StoppingConfig};
use crate::width::{width_carleson, WidthParams};

#[derive(Debug, Parser)]
#[command(name = "rectilab", version, about = "Quantitative rectifiability diagnostics on weighted point clouds")]
pub struct Cli {
    /// Worker threads; 0 means one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with a RunConfig; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a generator cloud as CSV plus JSON sidecar.
    Gen {
        kind: SetKind,
        #[command(flatten)]
        params: GeneratorFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one analysis.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetKind {
    FourCorners,
    Hrycak,
    Segment,
    Circle,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Beta,
    Wgl,
    Width,
    Pbp,
    Cones,
    Heavytrees,
    StoppingDemo,
    Dichotomy,
    Favard,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GeneratorFlags {
    /// four-corners generation.
    #[arg(long)]
    pub k: Option<u32>,
    /// Hrycak parameter.
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub lipschitz: Option<f64>,
    #[arg(long)]
    pub resolution: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    pub analysis: Analysis,
    /// Cloud CSV (with sidecar) for the per-cloud analyses.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator for dichotomy and favard.
    #[arg(long)]
    pub set: Option<SetKind>,
    #[command(flatten)]
    pub generator: GeneratorFlags,
    #[arg(long)]
    pub depth: Option<i32>,
    /// `a..b` (inclusive) or a comma list.
    #[arg(long)]
    pub depths: Option<String>,
    #[arg(long)]
    pub generations: Option<String>,
    #[arg(long = "eps")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Flagged cubes per heavy tree.
    #[arg(long = "per-tree")]
    pub per_tree: Option<usize>,
    /// Number of heavy-tree tops.
    #[arg(long)]
    pub tops: Option<usize>,
    /// Stopping threshold N.
    #[arg(long = "threshold-n")]
    pub threshold_n: Option<f64>,
    /// Stopping density target M.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub guarantee: bool,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub balls: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub directions: Option<usize>,
    /// Cone count threshold H.
    #[arg(long = "cone-threshold")]
    pub cone_threshold: Option<usize>,
    #[arg(long = "j-max")]
    pub j_max: Option<u32>,
    #[arg(long = "tube-factor")]
    pub tube_factor: Option<f64>,
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
}

/// Every tunable of every command. Absent fields fall through to the next
/// configuration layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub generator: Option<GeneratorSpec>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub depth: Option<i32>,
    pub depths: Option<Vec<i32>>,
    pub generations: Option<Vec<u32>>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub per_tree: Option<usize>,
    pub tops: Option<usize>,
    pub threshold_n: Option<f64>,
    pub density: Option<f64>,
    pub gamma: Option<f64>,
    pub mass_constant: Option<f64>,
    pub dimensional_constant: Option<f64>,
    pub guarantee: Option<bool>,
    pub dim: Option<usize>,
    pub balls: Option<usize>,
    pub max_weight: Option<f64>,
    pub grid_depth: Option<u32>,
    pub seed: Option<u64>,
    pub directions: Option<usize>,
    pub favard_directions: Option<usize>,
    pub cone_threshold: Option<usize>,
    pub j_max: Option<u32>,
    pub net_size: Option<usize>,
    pub haar_samples: Option<usize>,
    pub width_directions: Option<usize>,
    pub width_offsets: Option<usize>,
    pub tube_factor: Option<f64>,
    pub beta_kind: Option<BetaKind>,
    pub beta_method: Option<BetaMethod>,
}

macro_rules! layer {
    ($top:expr, $bottom:expr, $($field:ident),*) => {
        RunConfig { $($field: $top.$field.clone().or_else(|| $bottom.$field.clone())),* }
    };
}

impl RunConfig {
    /// The defaults table for every tunable.
    pub fn defaults() -> Self {
        let width = WidthParams::default();
        RunConfig {
            command: None,
            generator: None,
            input: None,
            out: None,
            threads: Some(0),
            depth: Some(6),
            depths: Some(vec![3, 4, 5, 6]),
            generations: Some(vec![2, 3, 4, 5]),
            epsilon: Some(0.05),
            alpha: Some(0.5),
            delta: Some(0.1),
            per_tree: Some(2),
            tops: Some(2),
            threshold_n: Some(32.0),
            density: Some(1.0),
            gamma: Some(1.0),
            mass_constant: Some(1.0),
            dimensional_constant: Some(2.0),
            guarantee: Some(false),
            dim: Some(2),
            balls: Some(16),
            max_weight: Some(80.0),
            grid_depth: Some(7),
            seed: None,
            directions: Some(16),
            favard_directions: Some(64),
            cone_threshold: Some(3),
            j_max: Some(6),
            net_size: Some(36),
            haar_samples: Some(8),
            width_directions: Some(width.directions),
            width_offsets: Some(width.offsets_per_axis),
            tube_factor: Some(width.tube_factor),
            beta_kind: Some(BetaKind::Beta1),
            beta_method: Some(BetaMethod::PcaRefined),
        }
    }

    /// Fields of `self` where present, otherwise those of `below`.
    pub fn over(&self, below: &RunConfig) -> RunConfig {
        layer!(
            self, below, command, generator, input, out, threads, depth, depths, generations, epsilon, alpha, delta, per_tree, tops,
            threshold_n, density, gamma, mass_constant, dimensional_constant, guarantee, dim, balls, max_weight, grid_depth, seed,
            directions, favard_directions, cone_threshold, j_max, net_size, haar_samples, width_directions, width_offsets, tube_factor, beta_kind,
            beta_method
        )
    }
}

/// How a successful run ended; `Degenerate` maps to exit code 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Degenerate,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Degenerate => 2,
        }
    }
}

/// Parse `a..b` (inclusive) or `a,b,c`.
pub fn parse_range<T>(s: &str) -> anyhow::Result<Vec<T>>
where
    T: std::str::FromStr + Copy + PartialOrd + std::ops::Add<Output = T> + From<u8>,
    T::Err: std::error::Error + Send + Sync + 'static,
{
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (T, T) = (a.trim().parse()?, b.trim().parse()?);
        let mut out = Vec::new();
        let mut x = a;
        while x <= b {
            out.push(x);
            x = x + T::from(1);
        }
        if out.is_empty() {
            bail!("empty range {s:?}");
        }
        Ok(out)
    } else {
        s.split(',').map(|p| Ok(p.trim().parse()?)).collect()
    }
}

fn generator_spec(kind: SetKind, g: &GeneratorFlags, fallback: Option<&GeneratorSpec>) -> GeneratorSpec {
    let res = g.resolution.unwrap_or(2f64.powi(-10));
    let same = fallback.filter(|f| kind_of(f) == kind);
    match (kind, same) {
        (SetKind::FourCorners, Some(GeneratorSpec::FourCorners { generation })) => {
            GeneratorSpec::FourCorners { generation: g.k.unwrap_or(*generation) }
        }
        (SetKind::FourCorners, _) => GeneratorSpec::FourCorners { generation: g.k.unwrap_or(3) },
        (SetKind::Hrycak, Some(GeneratorSpec::Hrycak { m })) => GeneratorSpec::Hrycak { m: g.m.unwrap_or(*m) },
        (SetKind::Hrycak, _) => GeneratorSpec::Hrycak { m: g.m.unwrap_or(3) },
        (SetKind::Segment, Some(GeneratorSpec::Segment { length, resolution })) => {
            GeneratorSpec::Segment { length: g.length.unwrap_or(*length), resolution: g.resolution.unwrap_or(*resolution) }
        }
        (SetKind::Segment, _) => GeneratorSpec::Segment { length: g.length.unwrap_or(0.5), resolution: res },
        (SetKind::Circle, Some(GeneratorSpec::Circle { radius, resolution })) => {
            GeneratorSpec::Circle { radius: g.radius.unwrap_or(*radius), resolution: g.resolution.unwrap_or(*resolution) }
        }
        (SetKind::Circle, _) => GeneratorSpec::Circle { radius: g.radius.unwrap_or(0.3), resolution: res },
        (SetKind::Graph, Some(GeneratorSpec::Graph { lipschitz, resolution })) => {
            GeneratorSpec::Graph { lipschitz: g.lipschitz.unwrap_or(*lipschitz), resolution: g.resolution.unwrap_or(*resolution) }
        }
        (SetKind::Graph, _) => GeneratorSpec::Graph { lipschitz: g.lipschitz.unwrap_or(1.0), resolution: res },
    }
}

fn kind_of(spec: &GeneratorSpec) -> SetKind {
    match spec {
        GeneratorSpec::FourCorners { .. } => SetKind::FourCorners,
        GeneratorSpec::Hrycak { .. } => SetKind::Hrycak,
        GeneratorSpec::Segment { .. } => SetKind::Segment,
        GeneratorSpec::Circle { .. } => SetKind::Circle,
        GeneratorSpec::Graph { .. } => SetKind::Graph,
    }
}

fn flag_layer(a: &AnalyzeArgs, file: &RunConfig) -> anyhow::Result<RunConfig> {
    let has_generator_flags = {
        let g = &a.generator;
        g.k.is_some() || g.m.is_some() || g.length.is_some() || g.radius.is_some() || g.lipschitz.is_some() || g.resolution.is_some()
    };
    let generator = match a.set.or_else(|| file.generator.as_ref().map(kind_of)) {
        Some(kind) if a.set.is_some() || has_generator_flags => Some(generator_spec(kind, &a.generator, file.generator.as_ref())),
        _ => None,
    };
    let enum_arg = |s: &Option<String>| s.as_ref().map(|v| serde_json::Value::String(v.replace('-', "_")));
    let beta_kind = enum_arg(&a.kind).map(serde_json::from_value).transpose().context("--kind is beta1 or beta-inf")?;
    let beta_method = enum_arg(&a.method).map(serde_json::from_value).transpose().context("--method is pca, pca-refined or grid-oracle")?;
    Ok(RunConfig {
        command: Some(serde_json::to_value(a.analysis)?.as_str().unwrap_or_default().to_string()),
        generator,
        input: a.input.clone(),
        out: a.out.clone(),
        depth: a.depth,
        depths: a.depths.as_deref().map(parse_range).transpose().context("--depths")?,
        generations: a.generations.as_deref().map(parse_range).transpose().context("--generations")?,
        epsilon: a.epsilon,
        alpha: a.alpha,
        delta: a.delta,
        per_tree: a.per_tree,
        tops: a.tops,
        threshold_n: a.threshold_n,
        density: a.density,
        gamma: a.gamma,
        guarantee: a.guarantee.then_some(true),
        dim: a.dim,
        balls: a.balls,
        seed: a.seed,
        directions: a.directions,
        cone_threshold: a.cone_threshold,
        j_max: a.j_max,
        tube_factor: a.tube_factor,
        beta_kind,
        beta_method,
        ..Default::default()
    })
}

fn load_file(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
        None => Ok(RunConfig::default()),
    }
}

fn threads_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var("RECTILAB_THREADS") {
        Ok(v) => Ok(Some(v.trim().parse().context("RECTILAB_THREADS")?)),
        Err(_) => Ok(None),
    }
}

/// The fully resolved configuration that `cli` would run for `cli`.
pub fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let file = load_file(cli.config.as_deref())?;
    let flags = match &cli.command {
        Command::Analyze(a) => flag_layer(a, &file)?,
        Command::Gen { kind, params, out } => RunConfig {
            command: Some("gen".into()),
            generator: Some(generator_spec(*kind, params, file.generator.as_ref())),
            out: out.clone(),
            ..Default::default()
        },
    };
    let threads = RunConfig { threads: cli.threads.or(threads_from_env()?), ..Default::default() };
    Ok(flags.over(&threads).over(&file).over(&RunConfig::defaults()))
}

/// Parse, run and map the outcome to an exit code, reporting errors on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<Status> {
    let cfg = resolve(cli)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads.unwrap_or(0)).build()?;
    pool.install(|| match &cli.command {
        Command::Gen { .. } => cmd_gen(&cfg),
        Command::Analyze(a) => cmd_analyze(a.analysis, &cfg),
    })
}

fn need<T: Clone>(v: &Option<T>, name: &str) -> anyhow::Result<T> {
    v.clone().with_context(|| format!("missing {name}"))
}

fn cmd_gen(cfg: &RunConfig) -> anyhow::Result<Status> {
    let spec = need(&cfg.generator, "generator")?;
    let cloud = spec.build().context("generator")?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.csv", kind_name(&spec))));
    write_cloud(&cloud, &out).with_context(|| format!("writing {}", out.display()))?;
    println!("{} points written to {}", cloud.len(), out.display());
    Ok(Status::Ok)
}

fn kind_name(spec: &GeneratorSpec) -> String {
    serde_json::to_value(kind_of(spec)).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn input_cloud(cfg: &RunConfig) -> anyhow::Result<RegularCloud> {
    let path = need(&cfg.input, "input cloud path")?;
    read_cloud(&path).with_context(|| format!("reading {}", path.display()))
}

/// A report body plus an optional CSV table rendering of it.
struct Output {
    result: serde_json::Value,
    table: Option<Box<dyn FnOnce(&Path) -> anyhow::Result<()>>>,
}

fn emit(cfg: &RunConfig, out: Output) -> anyhow::Result<()> {
    let report = serde_json::json!({
        "rectilab_version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "result": out.result,
    });
    let text = serde_json::to_string_pretty(&report)?;
    match &cfg.out {
        Some(path) if path.extension().is_some_and(|e| e == "csv") => {
            let table = out.table.context("this analysis has no CSV form; use a .json output")?;
            table(path).with_context(|| format!("writing {}", path.display()))?;
            fs::write(path.with_extension("json"), text)?;
        }
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn csv_rows<T: Serialize + 'static>(rows: Vec<T>) -> Box<dyn FnOnce(&Path) -> anyhow::Result<()>> {
    Box::new(move |path: &Path| {
        let mut w = csv::Writer::from_path(path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn cmd_analyze(analysis: Analysis, cfg: &RunConfig) -> anyhow::Result<Status> {
    let seed = || need(&cfg.seed, "--seed (this analysis is randomized)");
    let mut status = Status::Ok;
    let output = match analysis {
        Analysis::Beta => {
            let cloud = input_cloud(cfg)?;
            let (lattice, _) = rooted_lattice(&cloud, need(&cfg.depth, "depth")?, &vec![0.0; cloud.dim()]).context("cubes")?;
            let betas = beta_lattice(&cloud, &lattice, need(&cfg.beta_kind, "beta kind")?, need(&cfg.beta_method, "beta method")?).context("beta")?;
            let values: Vec<f64> = (0..lattice.len()).map(|q| betas.value(q)).collect();
            let max = values.iter().copied().fold(0.0, f64::max);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let mut buf = Vec::new();
            betas.export_csv(&lattice, &mut buf).context("beta")?;
            Output {
                result: serde_json::json!({ "cubes": values.len(), "max": max, "mean": mean }),
                table: Some(Box::new(move |p: &Path| Ok(fs::write(p, buf)?))),
            }
        }
        Analysis::Wgl => {
            let cloud = input_cloud(cfg)?;
            let zero = vec![0.0; cloud.dim()];
            let eps = need(&cfg.epsilon, "epsilon")?;
            let top = need(&cfg.depth, "depth")?;
            let method = need(&cfg.beta_method, "beta method")?;
            #[derive(Serialize)]
            struct Row {
                depth: i32,
                wgl_ratio: f64,
            }
            let mut rows = Vec::new();
            let (full, _) = rooted_lattice(&cloud, top, &zero).context("cubes")?;
            for depth in (full.j_min() + 1)..=top {
                let (lattice, root) = rooted_lattice(&cloud, depth, &zero).context("cubes")?;
                let betas = beta_lattice(&cloud, &lattice, BetaKind::Beta1, method).context("beta")?;
                rows.push(Row { depth, wgl_ratio: wgl_sum(&lattice, &betas, eps, root) });
            }
            Output { result: serde_json::to_value(&rows)?, table: Some(csv_rows(rows)) }
        }
        Analysis::Width => {
            let cloud = input_cloud(cfg)?;
            let zero = vec![0.0; cloud.dim()];
            let params = WidthParams {
                directions: need(&cfg.width_directions, "width directions")?,
                offsets_per_axis: need(&cfg.width_offsets, "width offsets")?,
                tube_factor: need(&cfg.tube_factor, "tube factor")?,
            };
            let (lattice, root) = rooted_lattice(&cloud, need(&cfg.depth, "depth")?, &zero).context("cubes")?;
            let r = width_carleson(&cloud, &lattice, root, &params, seed()?).context("width")?;
            Output { result: serde_json::to_value(r)?, table: Some(csv_rows(vec![r])) }
        }
        Analysis::Pbp => {
            let cloud = input_cloud(cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed()?);
            let ball = cloud.enclosing_ball();
            let w = pointset::pbp_margin(&cloud, &ball, need(&cfg.delta, "delta")?, need(&cfg.directions, "directions")?, &mut rng)
                .context("pbp")?;
            Output {
                result: serde_json::json!({ "margin": w.margin, "center": w.center.to_record(), "ball": ball }),
                table: None,
            }
        }
        Analysis::Cones => {
            let cloud = input_cloud(cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed()?);
            let profile = cone_count_profile(
                &cloud,
                cloud.weights(),
                need(&cfg.alpha, "alpha")?,
                need(&cfg.cone_threshold, "cone threshold")?,
                need(&cfg.j_max, "j_max")?,
                need(&cfg.net_size, "net size")?,
                need(&cfg.haar_samples, "haar samples")?,
                &mut rng,
            )
            .context("cones")?;
            let summary = serde_json::json!({ "fraction": profile.fraction, "mesh": profile.mesh, "planes": profile.planes });
            Output {
                result: summary,
                table: Some(Box::new(move |p: &Path| Ok(profile.export_csv(p)?))),
            }
        }
        Analysis::Heavytrees => {
            let cloud = input_cloud(cfg)?;
            let zero = vec![0.0; cloud.dim()];
            let (lattice, root) = rooted_lattice(&cloud, need(&cfg.depth, "depth")?, &zero).context("cubes")?;
            let eps = need(&cfg.epsilon, "epsilon")?;
            let betas = beta_lattice(&cloud, &lattice, BetaKind::Beta1, need(&cfg.beta_method, "beta method")?).context("beta")?;
            let params = HeavyParams { epsilon: eps, per_tree: need(&cfg.per_tree, "per_tree")?, tops: need(&cfg.tops, "tops")? };
            let forest = build_heavy_trees(&lattice, &betas, params, root, cloud.weights()).context("heavytrees")?;
            let flags: Vec<bool> = (0..lattice.len()).map(|q| betas.value(q) >= eps).collect();
            let mut result = forest.export_json();
            if forest.status == HypothesisStatus::Holds {
                result["properties"] = serde_json::to_value(verify_properties(&forest, &lattice, &flags, cloud.weights()))?;
            } else {
                status = Status::Degenerate;
            }
            Output { result, table: None }
        }
        Analysis::StoppingDemo => {
            let config = StoppingConfig {
                threshold: need(&cfg.threshold_n, "threshold N")?,
                density: need(&cfg.density, "density")?,
                gamma: need(&cfg.gamma, "gamma")?,
                mass_constant: need(&cfg.mass_constant, "mass constant")?,
                dimensional_constant: need(&cfg.dimensional_constant, "dimensional constant")?,
                guarantee: need(&cfg.guarantee, "guarantee")?,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed()?);
            let family = random_family(&mut rng, need(&cfg.dim, "dim")?, need(&cfg.balls, "balls")?, need(&cfg.max_weight, "max weight")?)
                .context("stopping")?;
            let run = heavy_cubes(&family, &config, need(&cfg.grid_depth, "grid depth")?).context("stopping")?;
            if run.outcome == Outcome::Vacuous {
                status = Status::Degenerate;
            }
            Output { result: serde_json::json!({ "family": family, "run": run, "passes": run.passes() }), table: None }
        }
        Analysis::Dichotomy => {
            let set = need(&cfg.generator, "--set")?;
            let mut d = DichotomyConfig::new(set, need(&cfg.depths, "depths")?, need(&cfg.epsilon, "epsilon")?, seed()?);
            d.delta = need(&cfg.delta, "delta")?;
            d.pbp_directions = need(&cfg.directions, "directions")?;
            d.alpha = need(&cfg.alpha, "alpha")?;
            d.cone_threshold = need(&cfg.cone_threshold, "cone threshold")?;
            d.width = Some(WidthConfig {
                directions: need(&cfg.width_directions, "width directions")?,
                offsets_per_axis: need(&cfg.width_offsets, "width offsets")?,
                tube_factor: need(&cfg.tube_factor, "tube factor")?,
            });
            let report = experiments::run_dichotomy(&d).context("dichotomy")?;
            let rows = report.rows.clone();
            Output { result: serde_json::to_value(&report)?, table: Some(csv_rows(rows)) }
        }
        Analysis::Favard => {
            let set = need(&cfg.generator, "--set")?;
            let gens = need(&cfg.generations, "generations")?;
            let rows = favard_sweep(&set, &gens, need(&cfg.favard_directions, "favard directions")?).context("favard")?;
            Output { result: serde_json::to_value(&rows)?, table: Some(csv_rows(rows)) }
        }
    };
    emit(cfg, output)?;
    Ok(status)
}
