//! Command-line front end: configuration, subcommands and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_synthetic, SyntheticConfig};
use crate::error::{Error, ErrorClass, Result};
use crate::evaluation::{mean_c_index, run_cv, CvPlan, CvRow};
use crate::federated::FederatedPartition;
use crate::io::{load_csv_dataset, write_atomic, write_csv_dataset};
use crate::schemes::{train, Scheme, SchemeConfig, SchemeOverride, ScoringModel};
use crate::survival::{contribution_gap, Dataset, Individual};
use crate::webdisco::{adversarial_center, evaluate_attack, AdversarialConfig};

#[derive(Debug, Parser)]
#[command(name = "fedsurv", version, about = "Federated survival analysis experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; falls back to FEDSURV_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    Generate(CommonArgs),
    /// Train the configured schemes on the whole dataset.
    Train(CommonArgs),
    /// Cross-validate the configured schemes.
    Cv(CommonArgs),
    /// Reconstruct individual covariates from WebDISCO summaries.
    AttackDemo(CommonArgs),
    /// Print the gap between discrete-time and Cox event contributions.
    AppendixACheck(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Cv(_) => "cv",
            Command::AttackDemo(_) => "attack-demo",
            Command::AppendixACheck(_) => "appendix-a-check",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Generate(a)
            | Command::Train(a)
            | Command::Cv(a)
            | Command::AttackDemo(a)
            | Command::AppendixACheck(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV file; relative paths are resolved against the config file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Fill the `train_seconds` column. Off by default so that results are
    /// byte-identical across runs.
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppendixSection {
    pub n_individuals: usize,
    pub dim: usize,
    pub shifts: Vec<f64>,
}

impl Default for AppendixSection {
    fn default() -> Self {
        Self {
            n_individuals: 20,
            dim: 3,
            shifts: vec![-5.0, -10.0, -15.0, -20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Data file; when absent a synthetic dataset is generated.
    pub data: Option<DataSection>,
    pub synthetic: SyntheticConfig,
    /// Settings shared by all schemes.
    pub training: SchemeConfig,
    pub schemes: Vec<Scheme>,
    /// Training settings that differ for particular schemes.
    pub overrides: BTreeMap<Scheme, SchemeOverride>,
    pub cv: CvPlan,
    pub output: OutputSection,
    pub attack: AdversarialConfig,
    pub appendix: AppendixSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            data: None,
            synthetic: SyntheticConfig::default(),
            training: SchemeConfig::default(),
            schemes: vec![Scheme::Pool, Scheme::DtFl],
            overrides: BTreeMap::new(),
            cv: CvPlan::default(),
            output: OutputSection::default(),
            attack: AdversarialConfig::default(),
            appendix: AppendixSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Propagates the top-level seed to every section.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.synthetic.seed = seed;
        self.training.seed = seed;
        self.cv.seed = seed;
        self.attack.seed = seed;
    }

    pub fn scheme_configs(&self) -> Vec<SchemeConfig> {
        self.schemes
            .iter()
            .map(|&s| {
                let config = self.training.with_scheme(s);
                match self.overrides.get(&s) {
                    Some(o) => config.overridden(o),
                    None => config,
                }
            })
            .collect()
    }

    fn validate(&self, base_dir: &Path) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("`schemes` must list at least one scheme".to_string()));
        }
        if let Some(data) = &self.data {
            let path = base_dir.join(&data.path);
            if !path.is_file() {
                return Err(Error::Config(format!("data file `{}` does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// Loaded configuration together with its verbatim text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

pub fn load_config(args: &CommonArgs) -> Result<LoadedConfig> {
    let (text, base_dir) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, base)
        }
        None => (String::new(), PathBuf::new()),
    };
    let mut config = RunConfig::parse(&text)?;
    if let Some(seed) = args.seed.or(config.seed) {
        config.apply_seed(seed);
    }
    config.validate(&base_dir)?;
    Ok(LoadedConfig {
        config,
        text,
        base_dir,
    })
}

fn load_data(loaded: &LoadedConfig) -> Result<(Dataset, FederatedPartition)> {
    match &loaded.config.data {
        Some(section) => load_csv_dataset(&loaded.base_dir.join(&section.path)),
        None => {
            let synth = generate_synthetic(&loaded.config.synthetic)?;
            Ok((synth.dataset, synth.partition))
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidValue(e.to_string()))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: &'a RunConfig,
    config_text: &'a str,
    wall_seconds: f64,
    outputs: Vec<String>,
    details: serde_json::Value,
}

fn write_manifest(
    out: &Path,
    command: &str,
    loaded: &LoadedConfig,
    started: Instant,
    outputs: &[PathBuf],
    details: serde_json::Value,
) -> Result<PathBuf> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: loaded.config.seed,
        config: &loaded.config,
        config_text: &loaded.text,
        wall_seconds: started.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        details,
    };
    let path = out.join("manifest.json");
    write_atomic(&path, json(&manifest)?.as_bytes())?;
    Ok(path)
}

/// Result table as CSV. `train_seconds` stays empty unless timing is on.
pub fn cv_rows_to_csv(rows: &[CvRow], record_timing: bool) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::InvalidValue(e.to_string());
    writer
        .write_record([
            "repeat",
            "fold_or_center",
            "scheme",
            "c_index",
            "train_seconds",
            "comm_values_down",
            "comm_values_up",
            "error",
        ])
        .map_err(to_err)?;
    for row in rows {
        writer
            .write_record([
                row.repeat.to_string(),
                row.fold_or_center.to_string(),
                row.scheme.to_string(),
                row.c_index.map(|c| c.to_string()).unwrap_or_default(),
                if record_timing {
                    format!("{:.6}", row.train_seconds)
                } else {
                    String::new()
                },
                row.comm_values_down.to_string(),
                row.comm_values_up.to_string(),
                row.error.clone().unwrap_or_default(),
            ])
            .map_err(to_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::InvalidValue(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cmd_generate(loaded: &LoadedConfig, out: &Path, started: Instant) -> Result<()> {
    let synth = generate_synthetic(&loaded.config.synthetic)?;
    let path = out.join("data.csv");
    write_csv_dataset(&path, &synth.dataset, &synth.partition)?;
    let details = serde_json::json!({
        "individuals": synth.dataset.len(),
        "events": synth.dataset.n_events(),
        "censoring_fraction": synth.censoring_fraction,
        "beta_star": synth.beta_star,
    });
    write_manifest(out, "generate", loaded, started, std::slice::from_ref(&path), details)?;
    println!(
        "wrote {} individuals ({:.1}% censored) to {}",
        synth.dataset.len(),
        100.0 * synth.censoring_fraction,
        path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainedEntry {
    scheme: Scheme,
    model: Option<ScoringModel>,
    error: Option<String>,
    comm_values_down: usize,
    comm_values_up: usize,
}

fn cmd_train(loaded: &LoadedConfig, out: &Path, started: Instant) -> Result<()> {
    let (data, partition) = load_data(loaded)?;
    let mut entries = Vec::new();
    for config in loaded.config.scheme_configs() {
        let entry = match train(&config, &data, &partition) {
            Ok(trained) => TrainedEntry {
                scheme: config.scheme,
                model: Some(trained.model),
                error: None,
                comm_values_down: trained.comm.total_down(),
                comm_values_up: trained.comm.total_up(),
            },
            Err(e) => {
                // configuration mistakes abort, data or numerical failures are reported per scheme
                if e.class() == ErrorClass::Config {
                    return Err(e);
                }
                TrainedEntry {
                    scheme: config.scheme,
                    model: None,
                    error: Some(e.to_string()),
                    comm_values_down: 0,
                    comm_values_up: 0,
                }
            }
        };
        match &entry.error {
            None => println!("{}: trained", entry.scheme),
            Some(e) => println!("{}: failed: {e}", entry.scheme),
        }
        entries.push(entry);
    }
    let path = out.join("models.json");
    write_atomic(&path, json(&entries)?.as_bytes())?;
    let comm: Vec<_> = entries
        .iter()
        .map(|e| serde_json::json!({"scheme": e.scheme, "down": e.comm_values_down, "up": e.comm_values_up}))
        .collect();
    write_manifest(out, "train", loaded, started, &[path], serde_json::json!({ "comm": comm }))?;
    Ok(())
}

fn cmd_cv(loaded: &LoadedConfig, out: &Path, started: Instant) -> Result<()> {
    let (data, partition) = load_data(loaded)?;
    let config = &loaded.config;
    let rows = run_cv(&config.cv, &config.scheme_configs(), &data, &partition)?;
    let path = out.join("results.csv");
    write_atomic(&path, cv_rows_to_csv(&rows, config.output.record_timing)?.as_bytes())?;
    let mut summary = Vec::new();
    for &scheme in &config.schemes {
        let mine: Vec<&CvRow> = rows.iter().filter(|r| r.scheme == scheme).collect();
        let failed = mine.iter().filter(|r| r.c_index.is_none()).count();
        let mean = mean_c_index(&rows, scheme);
        match mean {
            Some(m) => println!("{scheme}: mean c-index {m:.4} over {} splits ({failed} failed)", mine.len() - failed),
            None => println!("{scheme}: every split failed"),
        }
        summary.push(serde_json::json!({
            "scheme": scheme,
            "mean_c_index": mean,
            "failed_splits": failed,
            "comm_values_down": mine.iter().map(|r| r.comm_values_down).sum::<usize>(),
            "comm_values_up": mine.iter().map(|r| r.comm_values_up).sum::<usize>(),
        }));
    }
    write_manifest(out, "cv", loaded, started, &[path], serde_json::json!({ "schemes": summary }))?;
    Ok(())
}

fn cmd_attack_demo(loaded: &LoadedConfig, out: &Path, started: Instant) -> Result<()> {
    let center = adversarial_center(&loaded.config.attack)?;
    let report = evaluate_attack(&center.data, &center.grid, &center.stream);
    println!(
        "center of {} individuals, {} grid times, {} rounds of summaries",
        center.data.len(),
        center.grid.len(),
        center.stream.len()
    );
    for outcome in &report.outcomes {
        match (outcome.individual, outcome.error) {
            (Some(i), Some(err)) => {
                let marker = if i == center.planted { " (planted)" } else { "" };
                println!(
                    "grid index {:>3}: individual {i}{marker}, max abs error {err:.3e}",
                    outcome.grid_index
                );
            }
            _ => println!("grid index {:>3}: FALSE reconstruction", outcome.grid_index),
        }
    }
    let planted_found = report.outcomes.iter().any(|o| o.individual == Some(center.planted));
    println!(
        "reconstructed {} individuals, max reconstruction error {:.3e}, false reconstructions {}, planted individual {}",
        report.outcomes.len() - report.false_reconstructions,
        report.max_error,
        report.false_reconstructions,
        if planted_found { "recovered" } else { "missed" }
    );
    let path = out.join("attack.json");
    write_atomic(&path, json(&report)?.as_bytes())?;
    write_manifest(
        out,
        "attack-demo",
        loaded,
        started,
        &[path],
        serde_json::json!({ "max_error": report.max_error, "planted_recovered": planted_found }),
    )?;
    Ok(())
}

/// Random dataset for the contribution-gap table: unit-variance
/// covariates, exponential times, about a third censored.
pub fn appendix_dataset(n: usize, dim: usize, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let individuals = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let t = -(1.0 - rng.random::<f64>()).ln();
            Individual::new(x, t, rng.random_bool(2.0 / 3.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let beta = (0..dim).map(|_| 0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
    Ok((Dataset::new(individuals)?, beta))
}

fn cmd_appendix(loaded: &LoadedConfig, out: &Path, started: Instant) -> Result<()> {
    let section = &loaded.config.appendix;
    let seed = loaded.config.seed.unwrap_or(0);
    let (data, beta) = appendix_dataset(section.n_individuals, section.dim, seed)?;
    println!("{:>8}  {:>12}", "shift", "gap");
    let mut table = Vec::new();
    for &shift in &section.shifts {
        let gap = contribution_gap(&data, &beta, shift)?;
        println!("{shift:>8}  {gap:>12.3e}");
        table.push(serde_json::json!({ "shift": shift, "gap": gap }));
    }
    let path = out.join("appendix_a.json");
    write_atomic(&path, json(&table)?.as_bytes())?;
    write_manifest(out, "appendix-a-check", loaded, started, &[path], serde_json::json!({ "gaps": table }))?;
    Ok(())
}

fn configure_threads(requested: Option<usize>) -> Result<()> {
    let threads = match requested {
        Some(n) => Some(n),
        None => match std::env::var("FEDSURV_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("FEDSURV_THREADS must be a count, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".to_string()));
        }
        // a pool that is already set up (e.g. by an embedding program) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let args = cli.command.args();
    let prepared = configure_threads(args.threads).and_then(|_| load_config(args));
    let loaded = prepared.inspect_err(|e| eprintln!("fedsurv {}: {e}", cli.command.name()))?;
    let out = args.out.as_path();
    match &cli.command {
        Command::Generate(_) => cmd_generate(&loaded, out, started),
        Command::Train(_) => cmd_train(&loaded, out, started),
        Command::Cv(_) => cmd_cv(&loaded, out, started),
        Command::AttackDemo(_) => cmd_attack_demo(&loaded, out, started),
        Command::AppendixACheck(_) => cmd_appendix(&loaded, out, started),
    }
    .map_err(|e| {
        eprintln!("fedsurv {}: {e}", cli.command.name());
        e
    })
}

pub fn exit_code(error: &Error) -> i32 {
    match error.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::Other => 1,
    }
}
