use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dlsm::checkpoint::{config_mismatch, load_checkpoint, save_checkpoint};
use dlsm::config::{Mode, ModelConfig};
use dlsm::error::ErrorKind;
use dlsm::evaluation::{
    community_detection_eval, export_embeddings, factors_eval, link_prediction_eval, load_truth, write_factor_series,
    EvalReport,
};
use dlsm::graph::load_attributes;
use dlsm::trainer::{train, write_history, TrainedModel};
use dlsm::{descriptive_stats, load_edge_list, preprocess, split_edges, DirectedGraph, DlsmError, EdgeSplit, SplitRatios};
use serde::Serialize;

use crate::config_args::ConfigArgs;
use crate::manifest::{CommandRecord, Manifest};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(DlsmError),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<DlsmError> for Failure {
    fn from(e: DlsmError) -> Self {
        Failure::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> dlsm::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| DlsmError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| DlsmError::io(path, e))
}

/// Prints to stdout; a closed pipe (`dlsm ... | head`) is not an error.
fn emit(text: &str) {
    use std::io::Write as _;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn to_json<T: Serialize>(value: &T) -> dlsm::Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    /// Edge list: one `source target` pair per line
    pub graph: PathBuf,
    /// Treat every input line as an undirected edge
    #[arg(long)]
    pub undirected_input: bool,
    /// Node attribute file: `label x1 x2 ...` per line
    #[arg(long, value_name = "FILE")]
    pub attributes: Option<PathBuf>,
}

impl GraphArgs {
    pub fn load(&self) -> dlsm::Result<DirectedGraph> {
        let mut g = load_edge_list(&self.graph, !self.undirected_input)?;
        if let Some(path) = &self.attributes {
            load_attributes(&mut g, path)?;
        }
        preprocess(&g)
    }

    fn record_inputs(&self, rec: &mut CommandRecord) -> dlsm::Result<()> {
        rec.input(&self.graph)?;
        if let Some(a) = &self.attributes {
            rec.input(a)?;
        }
        Ok(())
    }
}

pub fn stats(args: &GraphArgs) -> CliResult<()> {
    let g = args.load()?;
    emit(&to_json(&descriptive_stats(&g)?)?);
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Run directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Split, train and write `split.json`, `checkpoint` and `history.csv` into `out`.
fn train_into(g: &DirectedGraph, cfg: &ModelConfig, out: &Path, rec: &mut CommandRecord) -> dlsm::Result<(EdgeSplit, TrainedModel)> {
    fs::create_dir_all(out).map_err(|e| DlsmError::io(out, e))?;
    let split = split_edges(g, SplitRatios::default(), cfg.seed)?;
    write_file(&out.join("split.json"), serde_json::to_vec(&split)?)?;
    rec.output("split.json")?;
    log::info!("training {} on {} nodes / {} edges, seed {}", cfg.mode.method_name(), g.n(), g.m(), cfg.seed);
    let tm = train(g, &split, cfg)?;
    save_checkpoint(&tm, out.join("checkpoint"))?;
    rec.output("checkpoint")?;
    write_history(&tm.history, out.join("history.csv"))?;
    rec.output("history.csv")?;
    Ok((split, tm))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: PathBuf,
    best_epoch: usize,
    best_val_auc: f64,
    epochs_run: usize,
    split_id: &'a str,
    config_hash: &'a str,
}

pub fn train_cmd(args: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let cfg = args.config.resolve()?;
    let g = args.graph.load()?;
    let mut rec = CommandRecord::new("train", argv, &args.out);
    rec.config(args.config.file.as_deref(), &cfg);
    args.graph.record_inputs(&mut rec)?;
    if let Some(path) = &args.config.file {
        rec.input(path)?;
    }
    rec.seeds = vec![cfg.seed];
    let (_, tm) = train_into(&g, &cfg, &args.out, &mut rec)?;
    Manifest::start(&args.out, rec)?;
    let summary = TrainSummary {
        checkpoint: args.out.join("checkpoint"),
        best_epoch: tm.best_epoch,
        best_val_auc: tm.best_val_auc,
        epochs_run: tm.history.len(),
        split_id: &tm.split_id,
        config_hash: &tm.config_hash,
    };
    emit(&to_json(&summary)?);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// Link prediction: AUC and AP on the held-out test pairs
    Lp,
    /// Community detection: K-means on latent positions against ground truth
    Cd,
    /// Degree and node-random-factor distributions
    Factors,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Lp => "lp",
            Task::Cd => "cd",
            Task::Factors => "factors",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Ground-truth communities, `label community` per line (required for `cd`)
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Split file [default: split.json next to the checkpoint]
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    /// Number of clusters for `cd` [default: number of true communities]
    #[arg(long)]
    pub k: Option<usize>,
    /// Run directory receiving eval/ and plots/ [default: the checkpoint's directory]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write posterior-mean embeddings as CSV
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Warn when the checkpoint was trained under a different configuration
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

fn load_split(path: &Path) -> dlsm::Result<EdgeSplit> {
    let bytes = fs::read(path).map_err(|e| DlsmError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Runs one evaluation task and writes `eval/<task>.json` (plus `plots/` for factors) under
/// `dir`, recording outputs in `rec`.
fn evaluate_into(
    tm: &TrainedModel,
    split: Option<&EdgeSplit>,
    task: Task,
    truth: Option<&Path>,
    k: Option<usize>,
    dir: &Path,
    rec: &mut CommandRecord,
) -> CliResult<EvalReport> {
    let need_split = || split.ok_or_else(|| Failure::Usage(format!("task `{}` needs the training split", task.name())));
    let report = match task {
        Task::Lp => link_prediction_eval(tm, need_split()?)?,
        Task::Cd => {
            let path = truth.ok_or_else(|| Failure::Usage("task `cd` needs --truth FILE".into()))?;
            rec.input(path)?;
            let labels = load_truth(path, &tm.train_graph)?;
            community_detection_eval(tm, &labels, k)?
        }
        Task::Factors => {
            let split = need_split()?;
            let full = DirectedGraph::with_labels(tm.train_graph.labels().to_vec(), split.all_positives())?;
            let report = factors_eval(tm, &full)?;
            let plots = dir.join("plots");
            let written = write_factor_series(report.factor_distributions.as_ref().expect("factors"), &plots)?;
            for name in written {
                rec.output(&format!("plots/{name}"))?;
            }
            report
        }
    };
    let rel = format!("eval/{}.json", task.name());
    write_file(&dir.join(&rel), report.to_json()?)?;
    rec.output(&rel)?;
    Ok(report)
}

pub fn eval_cmd(args: &EvalArgs, argv: &[String]) -> CliResult<()> {
    if args.task == Task::Cd && args.truth.is_none() {
        return Err(Failure::Usage("task `cd` needs --truth FILE".into()));
    }
    let tm = load_checkpoint(&args.checkpoint)?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    if let Some(path) = &args.config {
        if let Some(warning) = config_mismatch(&tm, &ModelConfig::from_file(path)?) {
            log::warn!("{warning}");
            eprintln!("warning: {warning}");
        }
    }
    let split_path = args.split.clone().unwrap_or_else(|| args.checkpoint.with_file_name("split.json"));
    let split = if args.task == Task::Cd && !split_path.exists() { None } else { Some(load_split(&split_path)?) };

    let mut rec = CommandRecord::new("eval", argv, &dir);
    rec.input(&args.checkpoint)?;
    if split.is_some() {
        rec.input(&split_path)?;
    }
    rec.seeds = vec![tm.config().seed];
    rec.config(None, tm.config());
    let report = evaluate_into(&tm, split.as_ref(), args.task, args.truth.as_deref(), args.k, &dir, &mut rec)?;
    if let Some(path) = &args.embeddings {
        export_embeddings(&tm, path)?;
    }
    Manifest::record(&dir, rec)?;
    emit(&report.to_json()?);
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ReproArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Output directory; completed runs found here are reused
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Seeds 1..=N
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Edge heads to compare
    #[arg(long, value_delimiter = ',', default_value = "distance,inner_product")]
    pub methods: Vec<String>,
    /// Ground-truth communities; adds a community-detection row
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Dataset column name [default: graph file stem]
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Serialize)]
struct RunRow {
    method: String,
    seed: u64,
    status: String,
    auc: Option<f64>,
    ap: Option<f64>,
    accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct Aggregate {
    method: String,
    metric: String,
    mean: f64,
    sd: f64,
    runs: usize,
}

/// Sample mean and standard deviation; a single run has sd 0.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn read_report(path: &Path) -> dlsm::Result<EvalReport> {
    let bytes = fs::read(path).map_err(|e| DlsmError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Reports of a finished run directory, or `None` if it is missing or incomplete.
fn completed(dir: &Path, with_cd: bool) -> Option<(EvalReport, Option<EvalReport>)> {
    let lp = read_report(&dir.join("eval/lp.json")).ok()?;
    let cd = if with_cd { Some(read_report(&dir.join("eval/cd.json")).ok()?) } else { None };
    Some((lp, cd))
}

fn one_run(
    g: &DirectedGraph,
    cfg: &ModelConfig,
    dir: &Path,
    truth: Option<&Path>,
    argv: &[String],
) -> CliResult<(EvalReport, Option<EvalReport>)> {
    let mut rec = CommandRecord::new("repro-run", argv, dir);
    rec.config(None, cfg);
    rec.seeds = vec![cfg.seed];
    let (split, tm) = train_into(g, cfg, dir, &mut rec)?;
    // cd first: the lp report marks the run complete
    let cd = match truth {
        Some(t) => Some(evaluate_into(&tm, Some(&split), Task::Cd, Some(t), None, dir, &mut rec)?),
        None => None,
    };
    let lp = evaluate_into(&tm, Some(&split), Task::Lp, None, None, dir, &mut rec)?;
    Manifest::start(dir, rec)?;
    Ok((lp, cd))
}

pub fn repro_cmd(args: &ReproArgs, argv: &[String]) -> CliResult<()> {
    let base = args.config.resolve()?;
    let modes = args
        .methods
        .iter()
        .map(|m| {
            let mut c = base.clone();
            c.set("mode", m).map_err(|_| Failure::Usage(format!("unknown method `{m}`; use distance or inner_product")))?;
            Ok(c.mode)
        })
        .collect::<CliResult<Vec<Mode>>>()?;
    if args.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let g = args.graph.load()?;
    let name = args.name.clone().unwrap_or_else(|| {
        args.graph.graph.file_stem().map_or("graph".into(), |s| s.to_string_lossy().into_owned())
    });

    let mut rows = Vec::new();
    let mut last_failure = None;
    for &mode in &modes {
        for seed in 1..=args.seeds {
            let cfg = ModelConfig { mode, seed, ..base.clone() };
            let dir = args.out.join(mode.name()).join(format!("seed-{seed}"));
            let result = match completed(&dir, args.truth.is_some()) {
                Some(done) => {
                    log::info!("{} seed {seed}: reusing finished run", mode.method_name());
                    Ok(done)
                }
                None => one_run(&g, &cfg, &dir, args.truth.as_deref(), argv),
            };
            let mut row = RunRow { method: mode.method_name().into(), seed, status: "ok".into(), auc: None, ap: None, accuracy: None };
            match result {
                Ok((lp, cd)) => {
                    row.auc = lp.auc;
                    row.ap = lp.ap;
                    row.accuracy = cd.and_then(|r| r.accuracy);
                }
                Err(f) => {
                    eprintln!("{} seed {seed} failed: {f}", mode.method_name());
                    row.status = format!("failed: {f}");
                    last_failure = Some(f);
                }
            }
            rows.push(row);
        }
    }

    let mut aggregates = Vec::new();
    for &mode in &modes {
        let ok: Vec<&RunRow> = rows.iter().filter(|r| r.method == mode.method_name() && r.status == "ok").collect();
        let metrics: [(&str, fn(&RunRow) -> Option<f64>); 3] =
            [("AUC", |r| r.auc), ("AP", |r| r.ap), ("ACC", |r| r.accuracy)];
        for (metric, get) in metrics {
            let xs: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
            if !xs.is_empty() {
                let (mean, sd) = mean_sd(&xs);
                aggregates.push(Aggregate { method: mode.method_name().into(), metric: metric.into(), mean, sd, runs: xs.len() });
            }
        }
    }
    if aggregates.is_empty() {
        return Err(last_failure.unwrap_or_else(|| Failure::Usage("no runs completed".into())));
    }

    let mut rec = CommandRecord::new("repro", argv, &args.out);
    rec.config(args.config.file.as_deref(), &base);
    args.graph.record_inputs(&mut rec)?;
    if let Some(t) = &args.truth {
        rec.input(t)?;
    }
    rec.seeds = (1..=args.seeds).collect();

    let runs_path = args.out.join("runs.csv");
    let mut w = csv::Writer::from_path(&runs_path).map_err(DlsmError::from)?;
    for r in &rows {
        w.serialize(r).map_err(DlsmError::from)?;
    }
    w.flush().map_err(|e| DlsmError::io(&runs_path, e))?;
    rec.output("runs.csv")?;

    let table_path = args.out.join("table.csv");
    let mut w = csv::Writer::from_path(&table_path).map_err(DlsmError::from)?;
    w.write_record(["method", "metric", name.as_str()]).map_err(DlsmError::from)?;
    for a in &aggregates {
        w.write_record([a.method.as_str(), a.metric.as_str(), &format!("{:.3}±{:.3}", a.mean, a.sd)]).map_err(DlsmError::from)?;
    }
    w.flush().map_err(|e| DlsmError::io(&table_path, e))?;
    rec.output("table.csv")?;

    write_file(&args.out.join("summary.json"), to_json(&aggregates)?)?;
    rec.output("summary.json")?;
    Manifest::start(&args.out, rec)?;
    emit(&to_json(&aggregates)?);
    Ok(())
}
