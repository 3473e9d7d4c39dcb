//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    dataset_rows, load_landings, simulate_dataset, truth_path, write_landings, write_rows,
    SimulationSpec, Span, TruthSidecar,
};
use crate::diagnostics::{
    convergence, render_table, render_table_csv, summarize, PosteriorSummary,
};
use crate::error::{Error, Result};
use crate::model::{
    effect_name, effect_stems, top_level_names, Dataset, JointParams, ModelKind, Params, Sector,
    TotalParams,
};
use crate::oracle::{sbc_run, SbcConfig};
use crate::sampler::{pool, run_chains, Block, ChainConfig, ChainDraws};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET: &str = "dataset.csv";

#[derive(Debug, Parser)]
#[command(
    name = "longmix",
    version,
    about = "Bayesian longitudinal mixed models for landings panels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write draws, summaries, diagnostics and a manifest.
    Fit(FitArgs),
    /// Simulate a landings CSV and its truth sidecar.
    Simulate(SimulateArgs),
    /// Export plot data from a fit directory.
    Export(ExportArgs),
    /// Run simulation-based calibration.
    Sbc(SbcArgs),
    /// Print the posterior table of a fit directory.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// First year of the modelled span.
    #[arg(long)]
    pub start: Option<i32>,
    /// Last year of the modelled span.
    #[arg(long)]
    pub end: Option<i32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key = value` file; flags win on conflict.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Re-run the fit recorded in a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Worker threads for chain-level parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_kind, default_value = "total")]
    pub model: ModelKind,
    /// Output CSV; the truth sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub countries: usize,
    /// Comma-separated country names (overrides --countries).
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long, default_value_t = 1970)]
    pub start: i32,
    #[arg(long, default_value_t = 2014)]
    pub end: i32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Override a top-level parameter, e.g. `--param sigma=0.5`.
    #[arg(long = "param", value_parser = parse_assignment)]
    pub params: Vec<(String, f64)>,
    /// Countries observed only in the industrial sector (joint model).
    #[arg(long, value_delimiter = ',')]
    pub industrial_only: Vec<String>,
    /// Countries observed only in the artisanal sector (joint model).
    #[arg(long, value_delimiter = ',')]
    pub artisanal_only: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub figure: u8,
    /// Fit directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Destination CSV (default `<out>/figure<N>.csv`).
    #[arg(long)]
    pub dest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SbcArgs {
    #[arg(long, value_parser = parse_kind, default_value = "total")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value_t = 4)]
    pub countries: usize,
    #[arg(long, default_value_t = 10)]
    pub years: u32,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Skip the observation-sd update.
    #[arg(long)]
    pub negative_control: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Fit directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: bool,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_assignment(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_block(s: &str) -> Result<Block> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
        .map_err(|_| Error::InvalidConfig(format!("unknown block {s:?}")))
}

/// Everything that determines a fit's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub data: Option<PathBuf>,
    pub span: Span,
    pub chain: ChainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Total,
            data: None,
            span: Span::default(),
            chain: ChainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub run: RunConfig,
    pub data_sha256: String,
    /// SHA-256 of every artifact written next to the manifest.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Apply a `key = value` config file. Blank lines and `#` comments are
/// skipped.
pub fn apply_config_text(run: &mut RunConfig, text: &str) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("config line {}: expected key = value", n + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: &dyn std::fmt::Display| {
            Error::InvalidConfig(format!("config line {}: {key}: {e}", n + 1))
        };
        let c = &mut run.chain;
        match key {
            "model" => run.model = value.parse()?,
            "data" => run.data = Some(PathBuf::from(value)),
            "start" => run.span.start = value.parse().map_err(|e| bad(&e))?,
            "end" => run.span.end = value.parse().map_err(|e| bad(&e))?,
            "chains" => c.chains = value.parse().map_err(|e| bad(&e))?,
            "iters" | "iterations" => c.iterations = value.parse().map_err(|e| bad(&e))?,
            "burnin" => c.burnin = value.parse().map_err(|e| bad(&e))?,
            "thin" => c.thin = value.parse().map_err(|e| bad(&e))?,
            "seed" => c.seed = value.parse().map_err(|e| bad(&e))?,
            "adapt" => c.adapt = value.parse().map_err(|e| bad(&e))?,
            "interweave" => c.interweave = value.parse().map_err(|e| bad(&e))?,
            "step_log_sd" => c.step_log_sd = value.parse().map_err(|e| bad(&e))?,
            "step_atanh_rho" => c.step_atanh_rho = value.parse().map_err(|e| bad(&e))?,
            "frozen" => {
                c.frozen = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(parse_block)
                    .collect::<Result<BTreeSet<_>>>()?
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "config line {}: unknown key {other:?}",
                    n + 1
                )))
            }
        }
    }
    Ok(())
}

/// Defaults, then the manifest, then the config file, then flags.
pub fn resolve_fit_config(args: &FitArgs) -> Result<RunConfig> {
    let mut run = match &args.manifest {
        Some(m) => Manifest::read(m)?.run,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.config {
        apply_config_text(&mut run, &read_text(path)?)?;
    }
    if let Some(v) = args.model {
        run.model = v;
    }
    if let Some(v) = &args.data {
        run.data = Some(v.clone());
    }
    let c = &mut run.chain;
    macro_rules! flag {
        ($field:ident, $target:expr) => {
            if let Some(v) = args.$field {
                $target = v;
            }
        };
    }
    flag!(chains, c.chains);
    flag!(iters, c.iterations);
    flag!(burnin, c.burnin);
    flag!(thin, c.thin);
    flag!(seed, c.seed);
    flag!(start, run.span.start);
    flag!(end, run.span.end);
    Span::new(run.span.start, run.span.end)?;
    run.chain.validate()?;
    if run.data.is_none() {
        return Err(Error::InvalidConfig("no data file given (--data)".into()));
    }
    Ok(run)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn draws_file(k: usize) -> String {
    format!("draws_chain{k}.csv")
}

/// Run a fit and write its artifacts into `out`.
pub fn cmd_fit(run: &RunConfig, out: &Path, threads: Option<usize>) -> Result<PosteriorSummary> {
    let data_path = run
        .data
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("no data file given".into()))?;
    let data = load_landings(data_path, run.model, run.span)?;
    let chains = with_threads(threads, || run_chains(&data, &run.chain))??;

    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let mut written = Vec::new();
    write_landings(&out.join(DATASET), &data)?;
    written.push(DATASET.to_string());
    for ch in &chains {
        let name = draws_file(ch.chain);
        let mut buf = Vec::new();
        ch.write_csv(&mut buf)?;
        write_file(&out.join(&name), &buf)?;
        written.push(name);
    }

    let summary = summarize(&pool(&chains))?;
    let mut buf = Vec::new();
    summary.write_csv(&mut buf)?;
    write_file(&out.join("summary.csv"), &buf)?;
    let table = render_table(&summary, run.model)?;
    write_file(&out.join("table.txt"), table.as_bytes())?;
    write_file(
        &out.join("table.csv"),
        render_table_csv(&summary, run.model)?.as_bytes(),
    )?;
    written.extend(["summary.csv", "table.txt", "table.csv"].map(String::from));

    let top = top_level_names(run.model);
    if run.chain.chains >= 2 {
        let report = convergence(&chains, top)?;
        for r in report.flagged() {
            log::warn!(
                "{}: R-hat {:.4}, ESS {:.0} outside the convergence thresholds",
                r.name,
                r.rhat,
                r.ess
            );
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        write_file(&out.join("convergence.csv"), &buf)?;
        written.push("convergence.csv".into());
    } else {
        log::warn!("convergence report needs at least 2 chains, skipped");
    }
    let acceptance: BTreeMap<String, BTreeMap<String, f64>> = chains
        .iter()
        .filter(|c| !c.acceptance.is_empty())
        .map(|c| (draws_file(c.chain), c.acceptance.clone()))
        .collect();
    if !acceptance.is_empty() {
        write_file(
            &out.join("acceptance.json"),
            serde_json::to_string_pretty(&acceptance)?.as_bytes(),
        )?;
        written.push("acceptance.json".into());
    }

    let mut outputs = BTreeMap::new();
    for name in written {
        outputs.insert(name.clone(), sha256_file(&out.join(&name))?);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        run: run.clone(),
        data_sha256: sha256_file(data_path)?,
        outputs,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&out.join(MANIFEST), json.as_bytes())?;
    Ok(summary)
}

/// A fit directory read back from disk.
pub struct FitArtifacts {
    pub manifest: Manifest,
    pub data: Dataset,
    pub chains: Vec<ChainDraws>,
}

pub fn load_fit(dir: &Path) -> Result<FitArtifacts> {
    let manifest = Manifest::read(&dir.join(MANIFEST))?;
    let data = load_landings(&dir.join(DATASET), manifest.run.model, manifest.run.span)?;
    let mut chains = Vec::new();
    for k in 0..manifest.run.chain.chains {
        let path = dir.join(draws_file(k));
        let file = fs::File::open(&path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        chains.push(ChainDraws::read_csv(file, k)?);
    }
    Ok(FitArtifacts {
        manifest,
        data,
        chains,
    })
}

/// Figure 1: long-format log landings.
pub fn figure1_csv(data: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["country", "year", "sector", "tonnes", "log_tonnes"])?;
    for (row, obs) in dataset_rows(data).iter().zip(data.observations()) {
        w.write_record([
            row.country.clone(),
            row.year.to_string(),
            row.sector.to_string(),
            row.tonnes.to_string(),
            obs.y.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::io("rendering figure 1", e.into_error()))
}

/// Figure 2: 95% intervals and means of every country effect.
pub fn figure2_csv(fit: &FitArtifacts) -> Result<Vec<u8>> {
    let pooled = pool(&fit.chains);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["country", "effect", "q0.025", "mean", "q0.975"])?;
    for label in fit.data.labels() {
        for stem in effect_stems(fit.data.kind()) {
            let name = effect_name(stem, label);
            let d = pooled
                .get(&name)
                .ok_or_else(|| Error::InvalidDataset(format!("draws lack {name}")))?;
            let s = crate::diagnostics::summarize_one(&name, d)?;
            w.write_record([
                label.clone(),
                stem.to_string(),
                s.q025.to_string(),
                s.mean.to_string(),
                s.q975.to_string(),
            ])?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::io("rendering figure 2", e.into_error()))
}

/// Figure 3: posterior means of industrial against artisanal effects, for
/// countries observed in both sectors.
pub fn figure3_csv(fit: &FitArtifacts) -> Result<Vec<u8>> {
    if fit.data.kind() != ModelKind::Joint {
        return Err(Error::InvalidConfig(
            "figure 3 needs a joint-model fit".into(),
        ));
    }
    let pooled = pool(&fit.chains);
    let mean_of = |name: String| -> Result<f64> {
        let d = pooled
            .get(&name)
            .ok_or_else(|| Error::InvalidDataset(format!("draws lack {name}")))?;
        Ok(crate::diagnostics::mean(d))
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["country", "b0_I", "b0_A", "b1_I", "b1_A"])?;
    for i in fit.data.dual_sector_countries() {
        let label = &fit.data.labels()[i];
        let mut rec = vec![label.clone()];
        for stem in ["b0_I", "b0_A", "b1_I", "b1_A"] {
            rec.push(mean_of(effect_name(stem, label))?.to_string());
        }
        w.write_record(rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("rendering figure 3", e.into_error()))
}

pub fn cmd_export(args: &ExportArgs) -> Result<PathBuf> {
    let dest = args
        .dest
        .clone()
        .unwrap_or_else(|| args.out.join(format!("figure{}.csv", args.figure)));
    let bytes = if args.figure == 1 {
        let manifest = Manifest::read(&args.out.join(MANIFEST))?;
        let data = load_landings(
            &args.out.join(DATASET),
            manifest.run.model,
            manifest.run.span,
        )?;
        figure1_csv(&data)?
    } else {
        let fit = load_fit(&args.out)?;
        match args.figure {
            2 => figure2_csv(&fit)?,
            _ => figure3_csv(&fit)?,
        }
    };
    write_file(&dest, &bytes)?;
    Ok(dest)
}

/// Table 1 posterior means (total model).
pub fn default_total_params() -> Params {
    Params::Total(TotalParams {
        beta0: 8.098,
        sigma: 0.541,
        sigma0: 4.234,
        sigma1: 0.054,
    })
}

/// Table 2 posterior means (joint model).
pub fn default_joint_params() -> Params {
    Params::Joint(JointParams {
        beta0_i: 8.731,
        beta0_a: 5.651,
        sigma: 0.565,
        sigma0_i: 2.648,
        sigma0_a: 3.823,
        sigma1_i: 0.051,
        sigma1_a: 0.052,
        rho0: 0.673,
        rho1: 0.900,
    })
}

pub fn simulation_spec(args: &SimulateArgs) -> Result<SimulationSpec> {
    let mut params = match args.model {
        ModelKind::Total => default_total_params(),
        ModelKind::Joint => default_joint_params(),
    };
    for (name, value) in &args.params {
        params.set(name, *value)?;
    }
    let span = Span::new(args.start, args.end)?;
    let mut spec = SimulationSpec::balanced(params, args.countries, span);
    if !args.labels.is_empty() {
        spec = SimulationSpec::balanced(params, args.labels.len(), span);
        spec.labels = args.labels.iter().map(|s| s.trim().to_string()).collect();
    }
    let restrict = |names: &[String], sector: Sector, spec: &mut SimulationSpec| -> Result<()> {
        for name in names {
            if args.model != ModelKind::Joint {
                return Err(Error::InvalidConfig(
                    "sector restrictions apply to the joint model only".into(),
                ));
            }
            let i = spec
                .labels
                .iter()
                .position(|l| l == name.trim())
                .ok_or_else(|| Error::InvalidConfig(format!("unknown country {name:?}")))?;
            spec.availability[i] = [sector].into();
        }
        Ok(())
    };
    restrict(&args.industrial_only, Sector::Industrial, &mut spec)?;
    restrict(&args.artisanal_only, Sector::Artisanal, &mut spec)?;
    Ok(spec)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let spec = simulation_spec(args)?;
    let sim = simulate_dataset(&spec, args.seed)?;
    let mut buf = Vec::new();
    write_rows(&mut buf, &sim.rows)?;
    write_file(&args.out, &buf)?;
    TruthSidecar::new(&spec, &sim, args.seed).write(&truth_path(&args.out))?;
    Ok(())
}

pub fn cmd_sbc(args: &SbcArgs) -> Result<String> {
    let cfg = SbcConfig {
        kind: args.model,
        replicates: args.replicates,
        countries: args.countries,
        years: args.years,
        chains: args.chains,
        seed: args.seed,
        frozen: if args.negative_control {
            vec![Block::ObsSd]
        } else {
            Vec::new()
        },
        ..SbcConfig::default()
    };
    let report = with_threads(args.threads, || sbc_run(&cfg))??;
    fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(format!("creating {}", args.out.display()), e))?;
    let mut buf = Vec::new();
    report.write_ranks_csv(&mut buf)?;
    write_file(&args.out.join("sbc_ranks.csv"), &buf)?;
    write_file(
        &args.out.join("sbc_summary.json"),
        (report.summary_json()? + "\n").as_bytes(),
    )?;
    let mut text = format!(
        "replicates used {} of {} (excluded {})\n",
        report.used,
        report.replicates.len(),
        report.excluded
    );
    for u in &report.uniformity {
        text.push_str(&format!(
            "{:<10} chi2 {:>8.3}  p {:.4}\n",
            u.parameter, u.chi_square, u.p_value
        ));
    }
    Ok(text)
}

pub fn cmd_summarize(args: &SummarizeArgs) -> Result<String> {
    let fit = load_fit(&args.out)?;
    let summary = summarize(&pool(&fit.chains))?;
    if args.csv {
        render_table_csv(&summary, fit.data.kind())
    } else {
        render_table(&summary, fit.data.kind())
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => {
            let run = resolve_fit_config(&args)?;
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("fit"));
            let summary = cmd_fit(&run, &out, args.threads)?;
            print!("{}", render_table(&summary, run.model)?);
        }
        Command::Simulate(args) => cmd_simulate(&args)?,
        Command::Export(args) => {
            let dest = cmd_export(&args)?;
            println!("{}", dest.display());
        }
        Command::Sbc(args) => print!("{}", cmd_sbc(&args)?),
        Command::Summarize(args) => print!("{}", cmd_summarize(&args)?),
    }
    Ok(())
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
