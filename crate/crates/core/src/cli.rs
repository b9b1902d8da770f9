//! Command-line front end. Every report starts with a provenance header (tool
//! version, command, seed, SHA-256 of the effective scenario) and contains no
//! timestamps, so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::crlb::{crlb_ue, verify_identities};
use crate::ensemble::{train_ensemble, EnsembleManifest};
use crate::error::{Error, Result};
use crate::harness::{self, MetricReport, Models, NnSettings, Pipeline};
use crate::nn::dataset::{make_dataset, make_scatterer_dataset, Dataset, Split};
use crate::nn::{self, Model, ModelKind};
use crate::noise::build_q;
use crate::par;
use crate::scenario::Scenario;
use crate::selection::RrhCount;

/// Environment variable holding the number of worker threads.
pub const THREADS_ENV: &str = "MMLOC_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "mmloc", version, about = "Hybrid TDOA/FDOA/AOA localization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,

    /// Output file (reports) or directory (datasets, models); stdout for reports when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    #[arg(long, global = true)]
    pub trials: Option<usize>,

    /// Noise scale factors, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub rho: Vec<f64>,

    /// Numbers of LOS RRHs, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub na: Vec<usize>,

    /// Estimation pipelines for `eval`, comma separated.
    #[arg(long, global = true, value_delimiter = ',', value_parser = Pipeline::from_str)]
    pub pipeline: Vec<Pipeline>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// WLS Monte Carlo over the noise and N_a grids (UE and configured scatterers).
    Simulate,
    /// CRLB traces over the noise and N_a grids.
    Crlb {
        /// Also evaluate the range and range-rate identities at the UE state.
        #[arg(long)]
        identities: bool,
    },
    /// Success rate of LOS path selection.
    SelectSr,
    /// Write train/val/test datasets into the `--out` directory.
    GenDataset,
    /// Train the residual and black-box networks (and optionally an ensemble).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ensemble: bool,
    },
    /// Evaluate pipelines on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
    },
    /// Compare the ensemble variants with WLS and single-network NN-WLS.
    EnsembleEval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
    },
}

impl FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.trim().replace('-', "_").to_ascii_lowercase();
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| format!("unknown pipeline '{s}' (expected one of wls, blackbox, nn_wls, nn_ls, enn_a, enn_b, enn_m)"))
    }
}

/// Process exit code for an error: 2 parse/config, 3 dimension, 4 numerical, 5 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::InvalidConfig(_) => 2,
        Error::DimensionMismatch { .. } => 3,
        Error::Io { .. } => 5,
        e if e.is_numerical() => 4,
        _ => 1,
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            par::init_workers(n);
        }
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mmloc: {e}");
            exit_code(&e)
        }
    }
}

/// Scenario after command-line overrides.
pub fn effective_scenario(cli: &Cli) -> Result<Scenario> {
    let mut sc = match &cli.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    if let Some(trials) = cli.trials {
        sc.trials = trials;
    }
    if !cli.rho.is_empty() {
        sc.rho = cli.rho.clone();
    }
    if let [n] = cli.na[..] {
        sc.n_a = n;
    }
    sc.validate()?;
    Ok(sc)
}

pub fn run(cli: &Cli) -> Result<()> {
    let sc = effective_scenario(cli)?;
    match &cli.command {
        Command::Simulate => emit(cli, &sc, "simulate", simulate(cli, &sc)?),
        Command::Crlb { identities } => emit(cli, &sc, "crlb", crlb_table(cli, &sc, *identities)?),
        Command::SelectSr => emit(cli, &sc, "select-sr", select_sr(cli, &sc)?),
        Command::GenDataset => gen_dataset(cli, &sc),
        Command::Train { data, ensemble } => train(cli, &sc, data, *ensemble),
        Command::Eval { data, models } => emit(cli, &sc, "eval", eval(cli, &sc, data, models)?),
        Command::EnsembleEval { data, models } => emit(cli, &sc, "ensemble-eval", ensemble_eval(&sc, data, models)?),
    }
}

/// Column-ordered report table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn opt(x: Option<f64>) -> Value {
    x.map(num).unwrap_or(Value::Null)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn config_hash(sc: &Scenario) -> String {
    let digest = Sha256::digest(sc.to_toml().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn provenance(sc: &Scenario, command: &str) -> Vec<(&'static str, Value)> {
    vec![
        ("tool", json!("mmloc")),
        ("version", json!(env!("CARGO_PKG_VERSION"))),
        ("command", json!(command)),
        ("seed", json!(sc.seed)),
        ("config_sha256", json!(config_hash(sc))),
    ]
}

fn as_map(fields: Vec<(&'static str, Value)>) -> Map<String, Value> {
    fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Render a table with its provenance header.
pub fn render(table: &Table, sc: &Scenario, command: &str, format: Format) -> Result<String> {
    let prov = provenance(sc, command);
    match format {
        Format::Csv => {
            let mut out = String::new();
            for (k, v) in &prov {
                let _ = writeln!(out, "# {k}: {}", cell(v));
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::InvalidConfig(format!("CSV encoding failed: {e}"));
            w.write_record(&table.columns).map_err(csv_err)?;
            for row in &table.rows {
                w.write_record(row.iter().map(cell)).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(format!("CSV encoding failed: {e}")))?;
            out.push_str(&String::from_utf8(bytes).expect("CSV output is UTF-8"));
            Ok(out)
        }
        Format::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| Value::Object(table.columns.iter().map(|c| c.to_string()).zip(r.iter().cloned()).collect()))
                .collect();
            let doc = json!({ "provenance": as_map(prov), "columns": table.columns, "rows": rows });
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            Ok(s)
        }
    }
}

fn emit(cli: &Cli, sc: &Scenario, command: &str, table: Table) -> Result<()> {
    let text = render(&table, sc, command, cli.format)?;
    match &cli.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn na_grid(cli: &Cli, sc: &Scenario) -> Vec<usize> {
    if cli.na.len() > 1 {
        cli.na.clone()
    } else {
        vec![sc.n_a]
    }
}

fn metric_cells(r: &MetricReport) -> Vec<Value> {
    vec![
        json!(r.trials),
        json!(r.failures),
        num(r.rmse_position),
        opt(r.crlb_trace_position.map(f64::sqrt)),
        num(r.rmse_velocity),
        opt(r.crlb_trace_velocity.map(f64::sqrt)),
        num(r.mae_position),
        num(r.mae_velocity),
    ]
}

pub const SIMULATE_COLUMNS: [&str; 13] = [
    "target",
    "n_a",
    "rho",
    "delta_d",
    "delta_a",
    "trials",
    "failures",
    "rmse_position",
    "crlb_position",
    "rmse_velocity",
    "crlb_velocity",
    "mae_position",
    "mae_velocity",
];

fn simulate(cli: &Cli, base: &Scenario) -> Result<Table> {
    let mut table = Table::new(&SIMULATE_COLUMNS);
    for n_a in na_grid(cli, base) {
        let sc = Scenario { n_a, ..base.clone() };
        sc.validate()?;
        for (rho, noise) in sc.noise_grid() {
            let report = harness::run_wls_campaign(&sc, &noise)?;
            let lead = |target: String| vec![json!(target), json!(n_a), opt(rho), num(noise.delta_d), num(noise.delta_a)];
            let mut row = lead("ue".into());
            row.extend(metric_cells(&report.ue));
            table.push(row);
            for (k, s) in report.scatterers.iter().enumerate() {
                let mut row = lead(format!("scatterer{k}"));
                row.extend(metric_cells(s));
                table.push(row);
            }
        }
    }
    Ok(table)
}

fn crlb_table(cli: &Cli, base: &Scenario, identities: bool) -> Result<Table> {
    let mut cols = vec!["n_a", "rho", "delta_d", "delta_a", "crlb_trace_position", "crlb_trace_velocity"];
    if identities {
        cols.push("identity_max_deviation");
    }
    let mut table = Table::new(&cols);
    let ue = base.ue_state();
    for n_a in na_grid(cli, base) {
        let sc = Scenario { n_a, ..base.clone() };
        sc.validate()?;
        let rrhs = sc.active_rrhs();
        let deviation = if identities { Some(verify_identities(&ue, &rrhs)?.max_deviation()) } else { None };
        for (rho, noise) in sc.noise_grid() {
            let bound = crlb_ue(&ue, &rrhs, &build_q(n_a, &noise)?)?;
            let mut row = vec![
                json!(n_a),
                opt(rho),
                num(noise.delta_d),
                num(noise.delta_a),
                num(bound.position_trace()),
                num(bound.velocity_trace()),
            ];
            if identities {
                row.push(opt(deviation));
            }
            table.push(row);
        }
    }
    Ok(table)
}

fn select_sr(cli: &Cli, base: &Scenario) -> Result<Table> {
    let mut table = Table::new(&["n_a", "clock_bias_m", "delta_d", "delta_a", "p_d", "trials", "failures", "success_rate"]);
    let grid: Vec<RrhCount> = if cli.na.is_empty() {
        vec![base.selection.count]
    } else {
        cli.na.iter().map(|&n| RrhCount::Fixed(n)).collect()
    };
    for count in grid {
        let mut sc = base.clone();
        sc.selection.count = count;
        let r = harness::run_sr_campaign(&sc)?;
        let p = &sc.selection.paths;
        let n_a = match count {
            RrhCount::Fixed(n) => json!(n),
            RrhCount::EnergyThreshold => json!("energy"),
        };
        table.push(vec![
            n_a,
            num(p.clock_bias_m),
            num(p.delta_d),
            num(p.delta_a),
            num(p.p_d),
            json!(r.trials),
            json!(r.failures),
            opt(r.success_rate),
        ]);
    }
    Ok(table)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("this command needs --out <directory>".into()))
}

fn split_file(dir: &Path, prefix: &str, split: Split) -> PathBuf {
    let name = match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    };
    dir.join(format!("{prefix}{name}.csv"))
}

fn write_provenance(dir: &Path, sc: &Scenario, command: &str, extra: Map<String, Value>) -> Result<()> {
    let mut p = as_map(provenance(sc, command));
    p.extend(extra);
    let mut text = serde_json::to_string_pretty(&Value::Object(p)).expect("provenance serializes");
    text.push('\n');
    write_file(&dir.join("provenance.json"), &text)
}

fn gen_dataset(cli: &Cli, sc: &Scenario) -> Result<()> {
    let dir = require_out(cli)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rrhs = sc.active_rrhs();
    let ds = &sc.dataset;
    let sizes = [(Split::Train, ds.train), (Split::Val, ds.val), (Split::Test, ds.test)];
    for (split, n) in sizes {
        let noise = match (split, &ds.test_noise) {
            (Split::Test, Some(t)) => *t,
            _ => sc.noise,
        };
        make_dataset(&rrhs, &ds.sample_box, &noise, n, sc.seed, split)?.save(&split_file(dir, "", split))?;
        if let Some(sampling) = &ds.scatterer {
            let all = sc.all_rrhs();
            make_scatterer_dataset(&all, &ds.sample_box, sampling, &noise, n, sc.seed, split)?
                .save(&split_file(dir, "scatterer_", split))?;
        }
    }
    write_provenance(dir, sc, "gen-dataset", Map::new())
}

fn report_json(r: &nn::TrainReport) -> Value {
    json!({ "best_epoch": r.best_epoch, "best_val_mse": num(r.best_val_mse) })
}

fn train(cli: &Cli, sc: &Scenario, data: &Path, ensemble: bool) -> Result<()> {
    let dir = require_out(cli)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tr = Dataset::load(&split_file(data, "", Split::Train))?;
    let va = Dataset::load(&split_file(data, "", Split::Val))?;
    let mut reports = Map::new();

    let (residual, rep) = nn::train_residual(&sc.training, &tr, &va)?;
    residual.save(&dir.join("residual.json"))?;
    reports.insert("residual".into(), report_json(&rep));
    let (blackbox, rep) = nn::train_blackbox(&sc.training, &tr, &va)?;
    blackbox.save(&dir.join("blackbox.json"))?;
    reports.insert("blackbox".into(), report_json(&rep));

    let scat_train = split_file(data, "scatterer_", Split::Train);
    if scat_train.exists() {
        let str_ = Dataset::load(&scat_train)?;
        let sva = Dataset::load(&split_file(data, "scatterer_", Split::Val))?;
        let (model, rep) = nn::train_residual(&sc.training, &str_, &sva)?;
        model.save(&dir.join("scatterer.json"))?;
        reports.insert("scatterer".into(), report_json(&rep));
    }

    if ensemble {
        let members = train_ensemble(&sc.training, &sc.ensemble, &tr, &va, sc.execution)?;
        let names: Vec<String> = (0..members.len()).map(|p| format!("member_{p:03}.json")).collect();
        for (model, name) in members.iter().zip(&names) {
            model.save(&dir.join(name))?;
        }
        EnsembleManifest::new(sc.ensemble.clone(), names).save(&dir.join("ensemble.json"))?;
    }
    let mut extra = Map::new();
    extra.insert("training".into(), Value::Object(reports));
    write_provenance(dir, sc, "train", extra)
}

fn settings(sc: &Scenario) -> NnSettings {
    NnSettings {
        eps: sc.nn_eps,
        r_a: sc.ensemble.r_a,
        r_a_velocity: sc.ensemble.r_a_velocity.unwrap_or(sc.ensemble.r_a),
        wls: sc.wls,
        execution: sc.execution,
    }
}

fn load_optional(path: &Path) -> Result<Option<Model>> {
    if path.exists() {
        Model::load(path).map(Some)
    } else {
        Ok(None)
    }
}

fn load_ensemble(models_dir: &Path) -> Result<Vec<Model>> {
    let path = models_dir.join("ensemble.json");
    if !path.exists() {
        return Ok(Vec::new());
    }
    EnsembleManifest::load(&path)?.load_members(&path)
}

pub const EVAL_COLUMNS: [&str; 7] =
    ["pipeline", "samples", "failures", "mae_position", "mae_velocity", "rmse_position", "rmse_velocity"];

fn eval_row(name: &str, r: &MetricReport) -> Vec<Value> {
    vec![
        json!(name),
        json!(r.trials),
        json!(r.failures),
        num(r.mae_position),
        num(r.mae_velocity),
        num(r.rmse_position),
        num(r.rmse_velocity),
    ]
}

fn eval(cli: &Cli, sc: &Scenario, data: &Path, models_dir: &Path) -> Result<Table> {
    let test = Dataset::load(&split_file(data, "", Split::Test))?;
    let residual = load_optional(&models_dir.join("residual.json"))?;
    let blackbox = load_optional(&models_dir.join("blackbox.json"))?;
    let ensemble = load_ensemble(models_dir)?;
    let models = Models { residual: residual.as_ref(), blackbox: blackbox.as_ref(), ensemble: &ensemble };
    let pipelines: Vec<Pipeline> = if cli.pipeline.is_empty() {
        Pipeline::ALL
            .into_iter()
            .filter(|p| match p {
                Pipeline::Wls => true,
                Pipeline::Blackbox => blackbox.is_some(),
                Pipeline::NnWls | Pipeline::NnLs => residual.is_some(),
                _ => !ensemble.is_empty(),
            })
            .collect()
    } else {
        cli.pipeline.clone()
    };
    let s = settings(sc);
    let mut table = Table::new(&EVAL_COLUMNS);
    for p in pipelines {
        table.push(eval_row(p.name(), &harness::run_nn_campaign(p, &test, &models, &s)?));
    }
    let scat_test = split_file(data, "scatterer_", Split::Test);
    if cli.pipeline.is_empty() && scat_test.exists() {
        let test = Dataset::load(&scat_test)?;
        let r = harness::run_scatterer_nn_campaign(&test, None, s.eps, &sc.wls, sc.execution)?;
        table.push(eval_row("scatterer_wls", &r));
        if let Some(model) = load_optional(&models_dir.join("scatterer.json"))? {
            if model.kind != ModelKind::ScattererResidual {
                return Err(Error::InvalidConfig("scatterer.json is not a scatterer model".into()));
            }
            let r = harness::run_scatterer_nn_campaign(&test, Some(&model), s.eps, &sc.wls, sc.execution)?;
            table.push(eval_row("scatterer_nn_wls", &r));
        }
    }
    Ok(table)
}

fn ensemble_eval(sc: &Scenario, data: &Path, models_dir: &Path) -> Result<Table> {
    let test = Dataset::load(&split_file(data, "", Split::Test))?;
    let ensemble = load_ensemble(models_dir)?;
    if ensemble.is_empty() {
        return Err(Error::io(models_dir.join("ensemble.json"), std::io::ErrorKind::NotFound.into()));
    }
    // Single-network baselines use the first member.
    let models = Models { residual: Some(&ensemble[0]), blackbox: None, ensemble: &ensemble };
    let s = settings(sc);
    let mut table = Table::new(&EVAL_COLUMNS);
    for p in [Pipeline::Wls, Pipeline::NnWls, Pipeline::NnLs, Pipeline::EnnA, Pipeline::EnnB, Pipeline::EnnM] {
        table.push(eval_row(p.name(), &harness::run_nn_campaign(p, &test, &models, &s)?));
    }
    Ok(table)
}
