//! The `hilight` command line: train, highlight, eval, sweep, gen-synth.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 solver
//! unavailable, 4 data error (bad dataset, corrupt checkpoint, I/O).

pub mod config;

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hilight::data::{gen_needles, load_jsonl, save_jsonl, Instance, NeedleTemplate, SynthSpec};
use hilight::markup::{budget_count, char_spans, coalesce, inject, MarkerRegistry};
use hilight::selection::{topk, SamplerKind};
use hilight::text::tokenize;
use hilight::trainer::{evaluate, train, Checkpoint, EvalConfig, EvalReport, Variant};
use hilight::Error;
use serde::Serialize;

use config::{marker_by_name, RunConfig, SolverKind};

#[derive(Debug, Parser)]
#[command(name = "hilight", version, about = "Budgeted evidence highlighting for frozen solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a scorer and write a checkpoint plus metrics log.
    Train(TrainArgs),
    /// Emphasize a text with a trained scorer.
    Highlight(HighlightArgs),
    /// Evaluate a checkpoint under the ablation variants.
    Eval(EvalArgs),
    /// Evaluate a checkpoint across one sensitivity axis, as CSV.
    Sweep(SweepArgs),
    /// Write synthetic needle-in-a-haystack instances as JSONL.
    GenSynth(GenSynthArgs),
}

/// Flags shared by commands that need a solver.
#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Run configuration (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverKind>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub coverage_threshold: Option<f64>,
}

impl SolverArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_env();
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(e.clone());
        }
        if let Some(t) = self.coverage_threshold {
            cfg.coverage_threshold = t;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub train_path: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: Option<SamplerKind>,
}

#[derive(Debug, Args)]
pub struct HighlightArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text to emphasize.
    #[arg(long, conflicts_with = "input")]
    pub text: Option<String>,
    /// File to emphasize; standard input when neither this nor --text is given.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub query: String,
    #[arg(long, default_value_t = 0.15)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10)]
    pub delta: usize,
    /// Marker format name.
    #[arg(long, default_value = "default")]
    pub format: String,
    /// Also print the character spans as JSON on a second line.
    #[arg(long)]
    pub spans: bool,
}

/// Flags shared by eval and sweep.
#[derive(Debug, Args)]
pub struct EvalCommon {
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Add the row that feeds only the selected spans.
    #[arg(long)]
    pub pruned: bool,
    /// Add the row with uniformly random highlights.
    #[arg(long)]
    pub random: bool,
    /// Add the row with the untouched context.
    #[arg(long)]
    pub no_highlight: bool,
    /// All four rows.
    #[arg(long)]
    pub all: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Budget,
    Marker,
    Width,
    Sampler,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated grid; each axis has a default grid.
    #[arg(long)]
    pub grid: Option<String>,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemplateName {
    Default,
    Single,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2048)]
    pub target_tokens: usize,
    /// Exact number of haystack sentences instead of filling to the target.
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long, value_enum, default_value = "default")]
    pub template: TemplateName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure of a command, with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Template(_) | Error::Budget { .. } | Error::Parse(_) => 2,
            Error::SolverUnavailable { .. } | Error::Protocol(_) => 3,
            _ => 4,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CmdResult = Result<(), CliError>;

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn dispatch(cmd: Command, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Train(a) => cmd_train(&a, out),
        Command::Highlight(a) => cmd_highlight(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::GenSynth(a) => cmd_gen_synth(&a, out),
    }
}

fn load_data(path: &Path) -> Result<Vec<Instance>, CliError> {
    if !path.is_file() {
        return Err(CliError {
            code: 2,
            message: format!("data: {} does not exist", path.display()),
        });
    }
    load_jsonl(path).map_err(|e| CliError {
        code: 4,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = a.solver.resolve()?;
    if let Some(p) = &a.train_path {
        cfg.train_path = Some(p.clone());
    }
    if let Some(d) = &a.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = a.sampler {
        cfg.sampler = s;
    }
    let train_path = cfg.require_path("train_path", &cfg.train_path)?;
    let tcfg = cfg.train_config()?;
    let solver = cfg.build_solver(&tcfg.marker)?;
    let data = load_data(&train_path)?;
    if data.is_empty() {
        return Err(CliError {
            code: 4,
            message: format!("train_path: {} has no instances", train_path.display()),
        });
    }
    let run = train(&data, solver.as_ref(), &tcfg, Some(&cfg.out_dir))?;
    let tail = run.log.len().min(50);
    let recent: Vec<f64> = run.log[run.log.len() - tail..].iter().flat_map(|r| r.rewards.iter().copied()).collect();
    let mean = if recent.is_empty() { 0.0 } else { recent.iter().sum::<f64>() / recent.len() as f64 };
    writeln!(
        out,
        "trained {} steps; recent mean reward {mean:.4}; checkpoint {}",
        run.log.len(),
        cfg.out_dir.join("checkpoint.json").display()
    )?;
    Ok(())
}

pub fn cmd_highlight(a: &HighlightArgs, out: &mut dyn Write) -> CmdResult {
    if !(0.0..=1.0).contains(&a.gamma) {
        return Err(Error::Config(format!("gamma must be in [0, 1], got {}", a.gamma)).into());
    }
    let fmt = marker_by_name(&a.format)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let text = match (&a.text, &a.input) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p)?,
        (None, None) => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let inst = Instance {
        id: String::new(),
        query: a.query.clone(),
        context: text,
        gold: hilight::rewards::Gold::Text(String::new()),
        evidence_spans: None,
        candidates: None,
        extra: Default::default(),
    };
    let (prep, scores) = ck.model.score_instance(&inst)?;
    let ctx = &prep.ctx;
    let k = budget_count(a.gamma, ctx.omega().len());
    let mask = topk(&scores, ctx.omega(), k)?;
    let spans = coalesce(&mask, ctx, a.delta)?;
    let emphasized = inject(ctx, &spans, &fmt)?;
    writeln!(out, "{emphasized}")?;
    if a.spans {
        writeln!(out, "{}", serde_json::json!({ "spans": char_spans(&spans) }))?;
    }
    Ok(())
}

fn eval_base(c: &EvalCommon, cfg: &RunConfig) -> Result<EvalConfig, CliError> {
    Ok(EvalConfig {
        gamma: c.gamma.unwrap_or(cfg.gamma),
        delta: c.delta.unwrap_or(cfg.delta),
        marker: marker_by_name(c.format.as_deref().unwrap_or(&cfg.marker))?,
        reward: cfg.reward_spec()?,
        seed: c.seed.unwrap_or(cfg.seed),
        ..EvalConfig::default()
    })
}

#[derive(Serialize)]
struct EvalFile<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    rows: &'a [EvalReport],
}

fn print_rows(rows: &[EvalReport], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{:<13} {:>8} {:>10} {:>10} {:>10} {:>10}", "variant", "reward", "highlight", "ev_prec", "ev_rec", "ev_f1")?;
    for r in rows {
        let ev = |i: usize| r.evidence.map_or("-".to_string(), |e| format!("{:.4}", e[i]));
        writeln!(
            out,
            "{:<13} {:>8.4} {:>10.4} {:>10} {:>10} {:>10}",
            r.variant.name(),
            r.reward,
            r.mean_highlight_fraction,
            ev(0),
            ev(1),
            ev(2)
        )?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = a.common.solver.resolve()?;
    let base = eval_base(&a.common, &cfg)?;
    let ck = Checkpoint::load(&a.common.checkpoint)?;
    let data = load_data(&a.common.data)?;
    let solver = cfg.build_solver(&base.marker)?;
    let variants: Vec<Variant> = Variant::ALL
        .into_iter()
        .filter(|v| {
            a.all
                || match v {
                    Variant::NoHighlight => a.no_highlight,
                    Variant::Random => a.random,
                    Variant::Pruned => a.pruned,
                    Variant::Highlight => true,
                }
        })
        .collect();
    let mut rows = Vec::new();
    for variant in variants {
        let ecfg = EvalConfig { variant, ..base.clone() };
        rows.push(evaluate(&data, &ck.model, solver.as_ref(), &ecfg)?);
    }
    print_rows(&rows, out)?;
    if let Some(p) = &a.out {
        let file = EvalFile {
            checkpoint: &a.common.checkpoint,
            data: &a.common.data,
            rows: &rows,
        };
        std::fs::write(p, serde_json::to_string_pretty(&file).map_err(Error::from)?)?;
    }
    Ok(())
}

fn default_grid(axis: Axis) -> Vec<String> {
    match axis {
        Axis::Budget => ["0.10", "0.15", "0.25", "0.30"].map(String::from).to_vec(),
        Axis::Marker => MarkerRegistry::builtin().iter().map(|m| m.name.clone()).collect(),
        Axis::Width => (4..=16).step_by(2).map(|w| w.to_string()).collect(),
        Axis::Sampler => SamplerKind::ALL.iter().map(|s| s.name().to_string()).collect(),
    }
}

fn usage(msg: String) -> CliError {
    CliError { code: 2, message: msg }
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    let grid: Vec<String> = match &a.grid {
        Some(g) => g.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
        None => default_grid(a.axis),
    };
    if grid.is_empty() {
        return Err(usage("grid: no values given".into()));
    }
    let cfg = a.common.solver.resolve()?;
    let base = eval_base(&a.common, &cfg)?;
    let ck = Checkpoint::load(&a.common.checkpoint)?;
    let data = load_data(&a.common.data)?;

    let mut rows = Vec::with_capacity(grid.len());
    for value in &grid {
        let mut ecfg = base.clone();
        match a.axis {
            Axis::Budget => {
                ecfg.gamma = value.parse().map_err(|_| usage(format!("grid: '{value}' is not a budget")))?;
            }
            Axis::Width => {
                ecfg.delta = value.parse().map_err(|_| usage(format!("grid: '{value}' is not a width")))?;
            }
            Axis::Marker => ecfg.marker = marker_by_name(value)?,
            Axis::Sampler => ecfg.sampler = Some(value.parse()?),
        }
        let solver = cfg.build_solver(&ecfg.marker)?;
        rows.push((value.clone(), evaluate(&data, &ck.model, solver.as_ref(), &ecfg)?));
    }

    let metric_names: Vec<String> = rows[0].1.metrics.keys().cloned().collect();
    let mut header = vec!["axis_value".to_string(), "reward".into()];
    header.extend(metric_names.iter().cloned());
    header.extend(["evidence_precision", "evidence_recall", "evidence_f1", "mean_highlight_fraction", "span_digest"].map(String::from));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError { code: 4, message: e.to_string() };
    w.write_record(&header).map_err(csv_err)?;
    for (value, r) in &rows {
        let mut rec = vec![value.clone(), r.reward.to_string()];
        rec.extend(metric_names.iter().map(|m| r.metrics[m].to_string()));
        match r.evidence {
            Some(e) => rec.extend(e.iter().map(f64::to_string)),
            None => rec.extend(["", "", ""].map(String::from)),
        }
        rec.push(r.mean_highlight_fraction.to_string());
        rec.push(r.span_digest.clone());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError { code: 4, message: e.to_string() })?;
    match &a.out {
        Some(p) => std::fs::write(p, &bytes)?,
        None => out.write_all(&bytes)?,
    }
    Ok(())
}

pub fn cmd_gen_synth(a: &GenSynthArgs, out: &mut dyn Write) -> CmdResult {
    let spec = SynthSpec {
        target_tokens: a.target_tokens,
        distractors: a.distractors,
        template: match a.template {
            TemplateName::Default => NeedleTemplate::default(),
            TemplateName::Single => NeedleTemplate::single(),
        },
        seed: a.seed,
    };
    let data = gen_needles(&spec, a.n)?;
    save_jsonl(&data, &a.out)?;
    let mean = if data.is_empty() {
        0.0
    } else {
        data.iter().map(|i| tokenize(&i.context).len()).sum::<usize>() as f64 / data.len() as f64
    };
    writeln!(out, "wrote {} instances (mean {mean:.0} tokens) to {}", data.len(), a.out.display())?;
    Ok(())
}
