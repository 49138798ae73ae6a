use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pointsfda::backbone::BackboneConfig;
use pointsfda::checkpoint::{load_model, save_model};
use pointsfda::synthetic::{gen_dataset, Dataset, DatasetRequest, Domain, Split};
use pointsfda::train::{
    adapt, config_hash, evaluate, format_table, pretrain_source, run_ablation, AblationData, AblationKind,
    AdaptConfig, MetricsReport, PretrainConfig,
};
use pointsfda::{Error, Result};

#[derive(Parser)]
#[command(name = "pointsfda", version, about = "Source-free adaptation for point cloud completion")]
struct Cli {
    /// Overrides the seed of whatever the subcommand runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override as a dotted key, e.g. `--set adapt.k=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write machine-readable rows (JSON lines) here instead of stdout.
    #[arg(long, global = true)]
    rows: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic source/target benchmark from a request file.
    GenData {
        request: PathBuf,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train the source model on labeled source data.
    Pretrain { config: PathBuf },
    /// Adapt a source checkpoint to unlabeled target partials.
    Adapt { config: PathBuf },
    /// Report per-category chamfer distance of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value = "target")]
        domain: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run one ablation (A-E, ours, table, k-sweep, fps-sweep, mask-sweep).
    Ablate { variant: String, config: PathBuf },
}

#[derive(Debug, Serialize, Deserialize)]
struct PretrainRun {
    dataset: PathBuf,
    output: PathBuf,
    #[serde(default)]
    backbone: BackboneConfig,
    #[serde(default)]
    pretrain: PretrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdaptRun {
    dataset: PathBuf,
    source: PathBuf,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    adapt: AdaptConfig,
}

fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not KEY=VALUE")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.trim().split('.').map(String::from).collect(), value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut table = root;
    for key in parents {
        table = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?} is not a table")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Reads a TOML config, applies `--set` overrides and `--seed` at `seed_key`.
fn load_config<T: DeserializeOwned>(path: &Path, cli: &Cli, seed_key: &[&str]) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for spec in &cli.overrides {
        let (key, value) = parse_override(spec)?;
        apply_override(&mut table, &key, value)?;
    }
    if let Some(seed) = cli.seed {
        let key: Vec<String> = seed_key.iter().map(|s| s.to_string()).collect();
        apply_override(&mut table, &key, toml::Value::Integer(seed as i64))?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Paths inside a config are relative to the config file.
fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new("")).join(p)
    }
}

fn parse_domain(s: &str) -> Result<Domain> {
    match s {
        "source" => Ok(Domain::Source),
        "target" => Ok(Domain::Target),
        _ => Err(Error::Config(format!("unknown domain {s:?}"))),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
}

fn emit(cli: &Cli, reports: &[MetricsReport]) -> Result<()> {
    println!("{}", format_table(reports));
    let mut lines = String::new();
    for r in reports {
        for row in r.rows() {
            lines.push_str(&serde_json::to_string(&row).expect("rows serialize"));
            lines.push('\n');
        }
    }
    match &cli.rows {
        Some(path) => {
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            f.write_all(lines.as_bytes())
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
        None => {
            print!("{lines}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { request, out } => {
            let req: DatasetRequest = load_config(request, cli, &["seed"])?;
            let (manifest, _) = gen_dataset(&req, out)?;
            println!(
                "wrote {} samples to {} (domain gap {:.2}x the resampling floor)",
                manifest.samples.len(),
                out.display(),
                manifest.gap.ratio
            );
        }
        Command::Pretrain { config } => {
            let run: PretrainRun = load_config(config, cli, &["pretrain", "seed"])?;
            let ds = Dataset::open(resolve(config, &run.dataset))?;
            let train = ds.labeled(Domain::Source, Split::Train)?;
            let val = ds.labeled(Domain::Source, Split::Val)?;
            let out = pretrain_source(&run.backbone, &train, &val, &run.pretrain)?;
            let path = resolve(config, &run.output);
            save_model(&out.params, &run.backbone, &path)?;
            println!(
                "best epoch {} of {}; source val cd x1e4 {:.3} (untrained {:.3}); saved {}",
                out.best_epoch + 1,
                out.epochs.len(),
                out.epochs[out.best_epoch].val_cd * 1e4,
                out.initial_val_cd * 1e4,
                path.display()
            );
            let test = ds.labeled(Domain::Source, Split::Test)?;
            emit(cli, &[evaluate(&out.params, &run.backbone, &test, "source-test", config_hash(&run.pretrain))?])?;
        }
        Command::Adapt { config } => {
            let run: AdaptRun = load_config(config, cli, &["adapt", "seed"])?;
            let (source, backbone) = load_model(resolve(config, &run.source))?;
            let ds = Dataset::open(resolve(config, &run.dataset))?;
            let train = ds.partials(Domain::Target, Split::Train);
            let val = ds.partials(Domain::Target, Split::Val);
            let out = adapt(&source, &backbone, &train, Some(&val), &run.adapt)?;
            let source_reads = ds.access_log().count(Domain::Source);
            println!(
                "adapted for {} steps, selected step {}; source-domain reads during adaptation: {source_reads}",
                out.history.len(),
                out.selected_step
            );
            if let Some(o) = &run.output {
                let path = resolve(config, o);
                save_model(&out.selected, &backbone, &path)?;
                println!("saved {}", path.display());
            }
            let test = ds.labeled(Domain::Target, Split::Test)?;
            let mut adapted = evaluate(&out.selected, &backbone, &test, "adapted", config_hash(&run.adapt))?;
            adapted.history = out.history;
            let frozen = evaluate(&source, &backbone, &test, "source", config_hash(&backbone))?;
            emit(cli, &[frozen, adapted])?;
        }
        Command::Eval {
            checkpoint,
            dataset,
            domain,
            split,
        } => {
            let (params, backbone) = load_model(checkpoint)?;
            let ds = Dataset::open(dataset)?;
            let samples = ds.labeled(parse_domain(domain)?, parse_split(split)?)?;
            let label = checkpoint.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            emit(cli, &[evaluate(&params, &backbone, &samples, label, config_hash(&backbone))?])?;
        }
        Command::Ablate { variant, config } => {
            let kind: AblationKind = variant.parse()?;
            let run: AdaptRun = load_config(config, cli, &["adapt", "seed"])?;
            let (source, backbone) = load_model(resolve(config, &run.source))?;
            let ds = Dataset::open(resolve(config, &run.dataset))?;
            let test = ds.labeled(Domain::Target, Split::Test)?;
            let train = ds.partials(Domain::Target, Split::Train);
            let val = ds.partials(Domain::Target, Split::Val);
            let data = AblationData {
                source: &source,
                backbone: &backbone,
                train: &train,
                val: Some(&val),
                test: &test,
            };
            let report = run_ablation(kind, &run.adapt, &data)?;
            emit(cli, &report.all())?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
