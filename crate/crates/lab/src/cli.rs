//! The `mmr` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mmr_core::attack::{inject, AttackKind, NoiseSpec};
use mmr_core::data::{generate, Class};
use mmr_core::hil::{Annotator, OracleAnnotator};
use mmr_core::metrics;
use mmr_core::trainer::{self, Method};
use serde_json::{json, Value};

use crate::config::{LabConfig, Overrides};
use crate::error::{LabError, Result};
use crate::serve::{Service, DEFAULT_LISTEN, LISTEN_ENV};
use crate::{pipeline, probe, report, runio, store};

#[derive(Debug, Parser)]
#[command(name = "mmr", version, about = "Robust training under false-label injection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trajectory dataset directory.
    GenData(GenData),
    /// Write a copy of a dataset with flipped training labels.
    Inject(InjectArgs),
    /// Train with the oracle or a scripted annotator and write a run directory.
    Train(TrainArgs),
    /// Train with the HTTP annotation service as annotator.
    Serve(ServeArgs),
    /// Evaluate a run's saved model.
    Eval(EvalArgs),
    /// Summarize run directories into report.csv and report.json.
    Report(ReportArgs),
    /// Time training epochs at several training-set sizes.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample count.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Source dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, alias = "attack", value_parser = parse_attack, default_value = "sym")]
    pub kind: AttackKind,
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flip an exact per-class count instead of Bernoulli draws.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory; generated from the config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long, value_parser = parse_attack)]
    pub attack: Option<AttackKind>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Annotation period T in epochs.
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Replay answers from a `queries.csv` transcript instead of the oracle.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, env = LISTEN_ENV, default_value = DEFAULT_LISTEN)]
    pub listen: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory holding run.json and model.json.
    #[arg(long)]
    pub run: PathBuf,
    /// Evaluate on every sample of this dataset instead of the run's test split.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories; the directory name is the run id.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Explicit `a:b` pairs; defaults to (mmr, baseline-ce) and (mmr-hil, mmr).
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    /// Cost of one expert query relative to one training epoch.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1000,2000")]
    pub sizes: Vec<usize>,
    /// Timed epochs per size.
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?} (baseline-ce, mmr, mmr-hil)"))
}

fn parse_attack(s: &str) -> std::result::Result<AttackKind, String> {
    AttackKind::parse(s).ok_or_else(|| format!("unknown attack {s:?} (sym, asym)"))
}

fn load_config(path: Option<&Path>) -> Result<LabConfig> {
    let config = match path {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

impl RunArgs {
    fn resolve(&self) -> Result<LabConfig> {
        let mut config = load_config(self.config.as_deref())?;
        config.apply(&Overrides {
            seed: self.seed,
            method: self.method,
            attack: self.attack,
            ratio: self.ratio,
            rho: self.rho,
            tau: self.tau,
            period: self.period,
            epochs: self.epochs,
        })?;
        Ok(config)
    }
}

/// Runs a parsed command and returns the JSON summary printed on stdout.
pub fn execute(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::GenData(a) => {
            let mut config = load_config(a.config.as_deref())?;
            let g = &mut config.data.generator;
            if let Some(s) = a.seed {
                g.seed = s;
            }
            if let Some(n) = a.n {
                g.n = n;
            }
            let ds = generate(g)?;
            store::save(&ds, &a.out)?;
            Ok(json!({"out": a.out, "n": ds.len(), "h": ds.height(), "w": ds.width()}))
        }
        Command::Inject(a) => {
            let ds = store::load(&a.data)?;
            if ds.injection().is_some() {
                return Err(LabError::Usage(format!("{} is already attacked", a.data.display())));
            }
            let spec = NoiseSpec {
                exact: a.exact,
                ..NoiseSpec::new(a.kind, a.ratio, a.seed)
            };
            spec.validate()?;
            let attacked = inject(&ds, &spec)?;
            store::save(&attacked, &a.out)?;
            let flipped = attacked.flipped_mask().iter().filter(|&&f| f).count();
            Ok(json!({"out": a.out, "n": attacked.len(), "flipped": flipped}))
        }
        Command::Train(a) => {
            let config = a.run.resolve()?;
            let data = pipeline::prepare(&config, a.run.data.as_deref())?;
            let mut annotator: Box<dyn Annotator> = match &a.transcript {
                Some(p) => Box::new(runio::load_transcript(p)?),
                None => Box::new(OracleAnnotator),
            };
            let (record, result) = pipeline::train(&config, data, annotator.as_mut(), &mut (), Some(&a.run.out))?;
            Ok(run_summary(&a.run.out, &record, &trainer::describe(&result)))
        }
        Command::Serve(a) => {
            let config = a.run.resolve()?;
            let data = pipeline::prepare(&config, a.run.data.as_deref())?;
            let service = Service::start(&a.listen, &data.train, config.run.method, config.run.epochs)?;
            eprintln!("{}", json!({"listening": service.addr().to_string()}));
            let mut annotator = service.annotator(&config.run.hil);
            let mut observer = service.observer();
            let outcome = pipeline::train(&config, data, &mut annotator, &mut observer, Some(&a.run.out));
            service.shutdown();
            let (record, result) = outcome?;
            Ok(run_summary(&a.run.out, &record, &trainer::describe(&result)))
        }
        Command::Eval(a) => eval(&a),
        Command::Report(a) => {
            let mut runs = Vec::with_capacity(a.runs.len());
            for dir in &a.runs {
                let id = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| LabError::Usage(format!("{} has no directory name", dir.display())))?;
                if runs.iter().any(|(r, _)| *r == id) {
                    return Err(LabError::Usage(format!("duplicate run id {id:?}")));
                }
                runs.push((id, runio::read_record(dir)?));
            }
            let pairs = if a.pairs.is_empty() {
                report::auto_pairs(&runs)
            } else {
                a.pairs
                    .iter()
                    .map(|p| {
                        p.split_once(':')
                            .map(|(x, y)| (x.to_string(), y.to_string()))
                            .ok_or_else(|| LabError::Usage(format!("pair {p:?} is not a:b")))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let rep = report::emit(&runs, &pairs, a.r, &a.out)?;
            Ok(json!({"out": a.out, "runs": rep.runs.len(), "increments": rep.increments.len()}))
        }
        Command::Probe(a) => {
            let config = load_config(a.config.as_deref())?;
            let points = probe::scaling_probe(&config.data.generator, &config.run, &a.sizes, a.epochs)?;
            Ok(json!({"points": points, "ratio": probe::ratio(&points)}))
        }
    }
}

fn run_summary(out: &Path, record: &runio::RunRecord, line: &str) -> Value {
    json!({
        "out": out,
        "summary": record.summary,
        "description": line,
    })
}

fn eval(a: &EvalArgs) -> Result<Value> {
    let record = runio::read_record(&a.run)?;
    let model = runio::read_model(&a.run.join("model.json"))?;
    let ds = match &a.data {
        Some(dir) => store::load(dir)?,
        None => {
            let data_dir = (record.data.source != "generated").then(|| PathBuf::from(&record.data.source));
            pipeline::prepare(&record.config, data_dir.as_deref())?.test
        }
    };
    let pred = model.predict_dataset(&ds)?;
    let truth = ds.labels_true();
    let mut confusion = [[0usize; 2]; 2];
    for (p, t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    Ok(json!({
        "n": ds.len(),
        "accuracy": metrics::accuracy(&pred, truth)?,
        "confusion": {
            "classes": [Class::Stable.name(), Class::Unstable.name()],
            "rows_true_cols_predicted": confusion,
        },
    }))
}

/// Parses `args`, runs the command and reports failures as one JSON line on
/// stderr. Returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": {"kind": "usage", "message": if first.is_empty() { message } else { first.to_string() }}}));
            return 2;
        }
    };
    match execute(cli) {
        Ok(v) => {
            println!("{v}");
            0
        }
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            1
        }
    }
}
