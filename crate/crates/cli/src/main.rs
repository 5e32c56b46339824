mod table;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastmel_core::audio::{self, MelParams, MelSpectrogram};
use fastmel_core::compress::{self, Importance, PruneOptions};
use fastmel_core::container::{read_container, write_container, MAGIC};
use fastmel_core::emcd::{self, EmcdOptions, McdScale, MfccOptions, StepRule, TransitionWeights};
use fastmel_core::graph::bench::{bench_synthesize, BenchOptions, BenchReport, BenchRow};
use fastmel_core::graph::cost::{
    count_flops, count_params, percent, CostReport, CountOptions, WindowConvention,
    REFERENCE_BASELINE_MACS, REFERENCE_BASELINE_PARAMS, REFERENCE_FAST_MACS, REFERENCE_FAST_PARAMS,
    REFERENCE_LENGTH,
};
use fastmel_core::graph::spec::text_to_ids;
use fastmel_core::graph::synth::{recompute, synthesize, SynthOptions};
use fastmel_core::graph::{Model, ModelSpec};
use fastmel_core::Error;
use serde::Serialize;
use serde_json::json;

use table::{grouped, signed_grouped, Table};

#[derive(Parser, Debug)]
#[command(
    name = "fastmel",
    version,
    about = "Cost accounting, benchmarking, compression and EMCD scoring for convolutional Text2Mel models"
)]
struct Cli {
    /// Seed for randomly initialized models.
    #[arg(long, global = true, env = "FASTMEL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Print the resolved configuration to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameter and operation counts with a per-layer breakdown.
    Count(CountArgs),
    /// Single-thread synthesis timing.
    Bench(BenchArgs),
    /// Magnitude filter pruning.
    Prune(PruneArgs),
    /// Fold weight normalization into plain kernels.
    Fold(FoldArgs),
    /// Extract a mel spectrogram from a WAV file.
    Mel(MelArgs),
    /// EMCD between a synthesized and a ground-truth mel spectrogram.
    Emcd(EmcdArgs),
    /// EMCD over a list of pairs.
    EmcdCorpus(CorpusArgs),
    /// Write a seeded random model.
    Init(InitArgs),
    /// Autoregressive synthesis from text.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Counting {
    /// Weights only, embedding excluded, full-window audio re-encoding.
    Table3,
    /// Biases, weight-norm scales and embedding included; streaming decoding.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WindowArg {
    Streaming,
    FullWindow,
}

#[derive(Args, Debug)]
struct CountArgs {
    /// Builtin name, spec JSON or FDT1 model; repeat to compare.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    #[arg(long, default_value_t = REFERENCE_LENGTH)]
    t_text: usize,
    #[arg(long, default_value_t = REFERENCE_LENGTH)]
    t_mel: usize,
    #[arg(long, value_enum, default_value_t = Counting::Table3)]
    counting: Counting,
    /// Override the audio-side window convention of the counting preset.
    #[arg(long, value_enum)]
    window: Option<WindowArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 64)]
    t_text: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the synthesized mel of each model to an FDT1 file.
    #[arg(long)]
    mel_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ImportanceArg {
    L1,
    L2,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    ratio: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Leave the attention-coupled key/value channels intact.
    #[arg(long)]
    exclude_attention: bool,
    #[arg(long, value_enum, default_value_t = ImportanceArg::L1)]
    importance: ImportanceArg,
}

#[derive(Args, Debug)]
struct FoldArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WindowFn {
    Hann,
    Rectangular,
}

#[derive(Args, Debug)]
struct MelArgs {
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    n_fft: usize,
    #[arg(long, default_value_t = 256)]
    hop: usize,
    #[arg(long, default_value_t = 80)]
    n_mels: usize,
    #[arg(long, default_value_t = 0.0)]
    fmin: f64,
    /// Defaults to half the sample rate.
    #[arg(long)]
    fmax: Option<f64>,
    #[arg(long, value_enum, default_value_t = WindowFn::Hann)]
    window: WindowFn,
    /// Power instead of magnitude spectrum.
    #[arg(long)]
    power: bool,
    #[arg(long)]
    slaney: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Bare,
    Classic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Optimal,
    Greedy,
}

#[derive(Args, Debug)]
struct ScoringArgs {
    /// Transition weights `hor,ver,diag`.
    #[arg(long, default_value = "1,1,1.4142135623730951")]
    weights: String,
    #[arg(long, default_value_t = 13)]
    coeffs: usize,
    #[arg(long, default_value_t = 1e-5)]
    floor: f64,
    #[arg(long)]
    include_c0: bool,
    #[arg(long, default_value_t = 0)]
    lifter: usize,
    #[arg(long, value_enum, default_value_t = ScaleArg::Bare)]
    scale: ScaleArg,
    #[arg(long, value_enum, default_value_t = RuleArg::Optimal)]
    rule: RuleArg,
}

impl ScoringArgs {
    fn resolve(&self, normalize: bool) -> Result<(MfccOptions, EmcdOptions), Failure> {
        let weights: TransitionWeights = self
            .weights
            .parse()
            .map_err(|e: Error| Failure::Usage(e.to_string()))?;
        Ok((
            MfccOptions {
                coeffs: self.coeffs,
                floor: self.floor,
                include_c0: self.include_c0,
                lifter: self.lifter,
            },
            EmcdOptions {
                weights,
                normalize,
                scale: match self.scale {
                    ScaleArg::Bare => McdScale::Bare,
                    ScaleArg::Classic => McdScale::Classic,
                },
                rule: match self.rule {
                    RuleArg::Optimal => StepRule::Optimal,
                    RuleArg::Greedy => StepRule::GreedyPredecessor,
                },
            },
        ))
    }
}

#[derive(Args, Debug)]
struct EmcdArgs {
    /// Synthesized mel (FDT1 or WAV).
    #[arg(long)]
    syn: PathBuf,
    /// Ground-truth mel (FDT1 or WAV).
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long)]
    no_norm: bool,
    /// Write the alignment path with move labels as CSV.
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// CSV with header `syn_path,gt_path`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    text: String,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long)]
    no_early_stop: bool,
    /// Check the incremental result against a full recomputation.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.verbose {
        eprintln!("{cli:#?}");
    }
    let result = std::panic::catch_unwind(|| run(&cli));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Usage(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Data(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Ok(Err(Failure::Internal(m))) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
        Err(_) => ExitCode::from(3),
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Count(a) => cmd_count(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::Prune(a) => cmd_prune(cli, a),
        Command::Fold(a) => cmd_fold(cli, a),
        Command::Mel(a) => cmd_mel(a),
        Command::Emcd(a) => cmd_emcd(cli, a),
        Command::EmcdCorpus(a) => cmd_corpus(cli, a),
        Command::Init(a) => cmd_init(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
    }
}

fn is_container(arg: &str) -> bool {
    let mut head = [0u8; 4];
    std::fs::File::open(arg)
        .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut head))
        .is_ok()
        && head == MAGIC
}

fn resolve_spec(arg: &str) -> Result<ModelSpec, Failure> {
    if is_container(arg) {
        let c = read_container(arg)?;
        let json = c
            .meta
            .get("spec")
            .ok_or_else(|| Failure::Data(format!("{arg}: container has no model spec")))?;
        return Ok(ModelSpec::from_json(json)?);
    }
    Ok(ModelSpec::load(arg)?)
}

/// FDT1 model files are loaded; builtin names and spec files are
/// initialized from the seed.
fn resolve_model(arg: &str, seed: u64) -> Result<Model<f32>, Failure> {
    if is_container(arg) {
        return Ok(Model::load(arg)?);
    }
    Ok(Model::init(ModelSpec::load(arg)?, seed)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn csv_string<R: Serialize>(rows: &[R]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Failure::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::Internal(e.to_string()))
}

fn records_string(header: &[&str], rows: &[Vec<String>]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    for r in rows {
        w.write_record(r)
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Failure::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::Internal(e.to_string()))
}

fn json_string(v: &impl Serialize) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Human tables go to stdout. Machine formats go to `--out` when given,
/// else stdout; in table mode `--out` still receives CSV (or JSON for a
/// `.json` path).
fn emit(
    format: Format,
    out: Option<&Path>,
    human: impl FnOnce() -> String,
    csv: impl FnOnce() -> Result<String, Failure>,
    json: impl FnOnce() -> Result<String, Failure>,
) -> Outcome {
    let machine = |fmt: Format| if fmt == Format::Json { json() } else { csv() };
    match format {
        Format::Table => {
            print!("{}", human());
            if let Some(p) = out {
                let fmt = if p.extension().is_some_and(|e| e == "json") {
                    Format::Json
                } else {
                    Format::Csv
                };
                write_file(p, machine(fmt)?.as_bytes())?;
            }
        }
        f => {
            let text = machine(f)?;
            match out {
                Some(p) => write_file(p, text.as_bytes())?,
                None => {
                    let mut so = std::io::stdout().lock();
                    so.write_all(text.as_bytes())
                        .map_err(|e| Failure::Data(e.to_string()))?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Reference {
    model: String,
    params: u64,
    params_with_embedding: u64,
    reference_params: u64,
    params_delta: i128,
    macs: u64,
    flops: u64,
    reference_macs: u64,
    macs_delta: i128,
    flops_delta: i128,
}

fn reference_for(spec: &ModelSpec) -> Option<Reference> {
    let (rp, rm) = match spec.name.as_str() {
        "dctts_baseline" => (REFERENCE_BASELINE_PARAMS, REFERENCE_BASELINE_MACS),
        "fast_dctts" => (REFERENCE_FAST_PARAMS, REFERENCE_FAST_MACS),
        _ => return None,
    };
    let t3 = CountOptions::table3();
    let r = count_flops(spec, REFERENCE_LENGTH, REFERENCE_LENGTH, &t3);
    let with_emb = count_params(
        spec,
        &CountOptions {
            include_embedding: true,
            ..t3
        },
    );
    Some(Reference {
        model: spec.name.clone(),
        params: r.params,
        params_with_embedding: with_emb,
        reference_params: rp,
        params_delta: r.params as i128 - rp as i128,
        macs: r.macs,
        flops: r.flops,
        reference_macs: rm,
        macs_delta: r.macs as i128 - rm as i128,
        flops_delta: r.flops as i128 - rm as i128,
    })
}

#[derive(Serialize)]
struct Ratio {
    model: String,
    relative_to: String,
    params_percent: f64,
    macs_percent: f64,
}

#[derive(Serialize)]
struct CountCsvRow<'a> {
    model: &'a str,
    name: &'a str,
    layer: &'a str,
    params: u64,
    macs: u64,
    elementwise: u64,
    flops: u64,
}

fn cmd_count(cli: &Cli, a: &CountArgs) -> Outcome {
    if a.t_text == 0 || a.t_mel == 0 {
        return Err(Failure::Usage(
            "--t-text and --t-mel must be at least 1".into(),
        ));
    }
    let mut opts = match a.counting {
        Counting::Table3 => CountOptions::table3(),
        Counting::Full => CountOptions::default(),
    };
    if let Some(w) = a.window {
        opts.window = match w {
            WindowArg::Streaming => WindowConvention::Streaming,
            WindowArg::FullWindow => WindowConvention::FullWindow,
        };
    }
    let specs: Vec<ModelSpec> = a
        .models
        .iter()
        .map(|m| resolve_spec(m))
        .collect::<Result<_, _>>()?;
    let reports: Vec<CostReport> = specs
        .iter()
        .map(|s| count_flops(s, a.t_text, a.t_mel, &opts))
        .collect();
    let references: Vec<Reference> = specs.iter().filter_map(reference_for).collect();
    // Ratios always use the reference convention so they are comparable
    // with the published 2.75% / 1.76%.
    let t3 = CountOptions::table3();
    let ratios: Vec<Ratio> = specs
        .iter()
        .skip(1)
        .map(|s| {
            let base = count_flops(&specs[0], REFERENCE_LENGTH, REFERENCE_LENGTH, &t3);
            let this = count_flops(s, REFERENCE_LENGTH, REFERENCE_LENGTH, &t3);
            Ratio {
                model: s.name.clone(),
                relative_to: specs[0].name.clone(),
                params_percent: percent(this.params, base.params),
                macs_percent: percent(this.macs, base.macs),
            }
        })
        .collect();

    let human = || {
        let mut out = String::new();
        for r in &reports {
            out.push_str(&format!(
                "model {}  (t_text {}, t_mel {}, {:?} counting, {:?} window)\n",
                r.model, r.t_text, r.t_mel, a.counting, r.options.window
            ));
            let mut t = Table::new(["name", "layer", "params", "macs", "elementwise", "flops"])
                .numeric_from(2);
            for row in &r.rows {
                t.row([
                    row.name.clone(),
                    row.layer.clone(),
                    grouped(row.params),
                    grouped(row.macs),
                    grouped(row.elementwise),
                    grouped(row.flops),
                ]);
            }
            t.row([
                "total".to_string(),
                String::new(),
                grouped(r.params),
                grouped(r.macs),
                grouped(r.elementwise),
                grouped(r.flops),
            ]);
            out.push_str(&t.render());
            out.push('\n');
        }
        if !references.is_empty() {
            out.push_str(&format!(
                "reference comparison (weights only, t_text = t_mel = {REFERENCE_LENGTH}, full-window audio)\n"
            ));
            let mut t =
                Table::new(["model", "quantity", "ours", "reference", "delta"]).numeric_from(2);
            for r in &references {
                t.row([
                    r.model.clone(),
                    "params".into(),
                    grouped(r.params),
                    grouped(r.reference_params),
                    signed_grouped(r.params_delta),
                ]);
                t.row([
                    r.model.clone(),
                    "params+embedding".into(),
                    grouped(r.params_with_embedding),
                    grouped(r.reference_params),
                    signed_grouped(r.params_with_embedding as i128 - r.reference_params as i128),
                ]);
                t.row([
                    r.model.clone(),
                    "macs".into(),
                    grouped(r.macs),
                    grouped(r.reference_macs),
                    signed_grouped(r.macs_delta),
                ]);
                t.row([
                    r.model.clone(),
                    "flops".into(),
                    grouped(r.flops),
                    grouped(r.reference_macs),
                    signed_grouped(r.flops_delta),
                ]);
            }
            out.push_str(&t.render());
            out.push('\n');
        }
        for r in &ratios {
            out.push_str(&format!(
                "ratio {} / {}: params {:.2}%, macs {:.2}% (published 2.75%, 1.76%)\n",
                r.model, r.relative_to, r.params_percent, r.macs_percent
            ));
        }
        out
    };
    let csv = || {
        let mut rows = Vec::new();
        for r in &reports {
            for row in &r.rows {
                rows.push(CountCsvRow {
                    model: &r.model,
                    name: &row.name,
                    layer: &row.layer,
                    params: row.params,
                    macs: row.macs,
                    elementwise: row.elementwise,
                    flops: row.flops,
                });
            }
            rows.push(CountCsvRow {
                model: &r.model,
                name: "total",
                layer: "",
                params: r.params,
                macs: r.macs,
                elementwise: r.elementwise,
                flops: r.flops,
            });
        }
        csv_string(&rows)
    };
    let json =
        || json_string(&json!({ "reports": reports, "references": references, "ratios": ratios }));
    emit(cli.format, a.out.as_deref(), human, csv, json)
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Outcome {
    if a.threads != 1 {
        return Err(Failure::Usage("bench requires exactly one thread".into()));
    }
    if a.frames == 0 || a.repeats == 0 || a.t_text == 0 {
        return Err(Failure::Usage(
            "--frames, --repeats and --t-text must be at least 1".into(),
        ));
    }
    let specs: Vec<ModelSpec> = a
        .models
        .iter()
        .map(|m| resolve_spec(m))
        .collect::<Result<_, _>>()?;
    let opts = |_: &ModelSpec| BenchOptions {
        seed: cli.seed,
        frames: a.frames,
        repeats: a.repeats,
        warmup: a.warmup,
        t_text: a.t_text,
    };
    let reports: Vec<BenchReport> = specs
        .iter()
        .map(|s| bench_synthesize(s, opts(s)))
        .collect::<Result<_, _>>()?;
    if let Some(p) = &a.mel_out {
        let entries: Vec<(String, fastmel_core::Tensor32)> = reports
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("{i}.{}", r.model), r.mel.clone()))
            .collect();
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("seed".to_string(), cli.seed.to_string());
        meta.insert("t_text".to_string(), a.t_text.to_string());
        write_container(p, &entries, &meta)?;
    }
    let multi = reports.len() > 1;
    let rows: Vec<BenchRow> = reports
        .iter()
        .flat_map(|r| {
            r.rows().into_iter().map(move |mut row| {
                if multi {
                    row.run = format!("{}/{}", r.model, row.run);
                }
                row
            })
        })
        .collect();
    let speedups: Vec<(String, String, f64)> = reports
        .iter()
        .skip(1)
        .map(|r| {
            (
                r.model.clone(),
                reports[0].model.clone(),
                reports[0].median / r.median,
            )
        })
        .collect();
    let human = || {
        let mut t = Table::new(["model", "run", "frames", "threads", "seconds"]).numeric_from(2);
        for r in &reports {
            for row in r.rows() {
                t.row([
                    r.model.clone(),
                    row.run,
                    row.frames.to_string(),
                    row.threads.to_string(),
                    format!("{:.6}", row.seconds),
                ]);
            }
        }
        let mut out = t.render();
        for (m, base, s) in &speedups {
            out.push_str(&format!("speedup {m} vs {base}: {s:.2}x (median)\n"));
        }
        out
    };
    let csv = || csv_string(&rows);
    let json = || {
        let runs: Vec<_> = reports
            .iter()
            .map(|r| json!({"model": r.model, "runs": r.runs, "median": r.median, "p10": r.p10, "p90": r.p90}))
            .collect();
        let sp: Vec<_> = speedups
            .iter()
            .map(|(m, b, s)| json!({"model": m, "relative_to": b, "speedup": s}))
            .collect();
        json_string(&json!({"benchmarks": runs, "speedups": sp}))
    };
    emit(cli.format, a.out.as_deref(), human, csv, json)
}

fn cmd_prune(cli: &Cli, a: &PruneArgs) -> Outcome {
    let model = resolve_model(&a.model, cli.seed)?;
    let opts = PruneOptions {
        ratio: a.ratio,
        importance: match a.importance {
            ImportanceArg::L1 => Importance::L1,
            ImportanceArg::L2 => Importance::L2,
        },
        include_attention: !a.exclude_attention,
        ..Default::default()
    };
    let (pruned, report) = compress::prune(&model, opts)?;
    compress::audit(&pruned)
        .map_err(|e| Failure::Internal(format!("pruned model failed audit: {e}")))?;
    pruned.save(&a.out)?;
    let report_json = json_string(&report)?;
    if let Some(p) = &a.report {
        write_file(p, report_json.as_bytes())?;
    }
    let human = || {
        let mut t = Table::new(["space", "width", "unit", "removed", "kept"]).numeric_from(1);
        for s in &report.spaces {
            t.row([
                s.name.clone(),
                s.width.to_string(),
                s.unit.to_string(),
                s.removed.len().to_string(),
                s.kept.len().to_string(),
            ]);
        }
        format!(
            "{}params {} -> {}\nmacs {} -> {} ({:.2}% fewer)\n",
            t.render(),
            grouped(report.params_before),
            grouped(report.params_after),
            grouped(report.macs_before),
            grouped(report.macs_after),
            100.0 * report.macs_drop()
        )
    };
    let csv = || {
        let rows: Vec<Vec<String>> = report
            .spaces
            .iter()
            .map(|s| {
                vec![
                    s.name.clone(),
                    s.width.to_string(),
                    s.unit.to_string(),
                    s.removed.len().to_string(),
                    s.kept.len().to_string(),
                ]
            })
            .collect();
        records_string(&["space", "width", "unit", "removed", "kept"], &rows)
    };
    emit(cli.format, None, human, csv, || Ok(report_json.clone()))
}

fn cmd_fold(cli: &Cli, a: &FoldArgs) -> Outcome {
    let model = resolve_model(&a.model, cli.seed)?;
    let folded = compress::fold_weight_norm(&model)?;
    folded.save(&a.out)?;
    let before = count_params(model.spec(), &CountOptions::default());
    let after = count_params(folded.spec(), &CountOptions::default());
    emit(
        cli.format,
        None,
        || format!("params {} -> {}\n", grouped(before), grouped(after)),
        || {
            records_string(
                &["params_before", "params_after"],
                &[vec![before.to_string(), after.to_string()]],
            )
        },
        || json_string(&json!({"params_before": before, "params_after": after})),
    )
}

fn cmd_mel(a: &MelArgs) -> Outcome {
    let p = MelParams {
        n_fft: a.n_fft,
        hop: a.hop,
        n_mels: a.n_mels,
        fmin: a.fmin,
        fmax: a.fmax,
        window: match a.window {
            WindowFn::Hann => audio::Window::Hann,
            WindowFn::Rectangular => audio::Window::Rectangular,
        },
        power: a.power,
        slaney_norm: a.slaney,
    };
    let mel = audio::wav_to_mel(&a.wav, &p)?;
    audio::save_mel(&a.out, &mel)?;
    println!(
        "{} mel bins x {} frames -> {}",
        mel.n_mels(),
        mel.frames(),
        a.out.display()
    );
    Ok(())
}

fn load_mfcc(path: &Path, opts: &MfccOptions) -> Result<emcd::MfccSequence, Failure> {
    let mel: MelSpectrogram = audio::load_mel(path)?;
    Ok(emcd::mel_to_mfcc(&mel.bins, opts)?)
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn cmd_emcd(cli: &Cli, a: &EmcdArgs) -> Outcome {
    let (mfcc, opts) = a.scoring.resolve(!a.no_norm)?;
    let x = load_mfcc(&a.syn, &mfcc)?;
    let y = load_mfcc(&a.gt, &mfcc)?;
    let r = emcd::emcd(&x, &y, &opts)?;
    if let Some(p) = &a.path {
        let rows: Vec<Vec<String>> = r
            .path
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let mv = if k == 0 {
                    "start"
                } else {
                    r.moves[k - 1].label()
                };
                vec![k.to_string(), i.to_string(), j.to_string(), mv.to_string()]
            })
            .collect();
        write_file(
            p,
            records_string(&["step", "i", "j", "move"], &rows)?.as_bytes(),
        )?;
    }
    let (syn, gt) = (a.syn.display().to_string(), a.gt.display().to_string());
    let human = || {
        let norm = r
            .emcd_normalized
            .map_or("-".to_string(), |v| format!("{v}"));
        format!(
            "t_syn {}  t_gt {}\nemcd raw {}\nemcd normalized {}\n",
            r.t_syn, r.t_gt, r.emcd_raw, norm
        )
    };
    let csv = || {
        records_string(
            &["syn", "gt", "t_syn", "t_gt", "emcd_raw", "emcd_norm"],
            &[vec![
                syn.clone(),
                gt.clone(),
                r.t_syn.to_string(),
                r.t_gt.to_string(),
                r.emcd_raw.to_string(),
                opt_num(r.emcd_normalized),
            ]],
        )
    };
    let json = || json_string(&json!({"syn": syn, "gt": gt, "report": r}));
    emit(cli.format, a.out.as_deref(), human, csv, json)
}

fn cmd_corpus(cli: &Cli, a: &CorpusArgs) -> Outcome {
    let (mfcc, opts) = a.scoring.resolve(true)?;
    let pairs = emcd::read_pairs(&a.pairs)?;
    let report = emcd::emcd_corpus(&pairs, &mfcc, &opts, a.jobs)?;
    let human = || {
        let mut t = Table::new([
            "syn",
            "gt",
            "t_syn",
            "t_gt",
            "emcd_raw",
            "emcd_norm",
            "error",
        ])
        .numeric_from(2);
        for r in &report.rows {
            t.row([
                r.syn.clone(),
                r.gt.clone(),
                r.t_syn.map_or(String::new(), |v| v.to_string()),
                r.t_gt.map_or(String::new(), |v| v.to_string()),
                opt_num(r.emcd_raw),
                opt_num(r.emcd_norm),
                r.error.clone().unwrap_or_default(),
            ]);
        }
        format!(
            "{}scored {} of {}; mean {}; std {}\n",
            t.render(),
            report.scored,
            report.rows.len(),
            opt_num(report.mean),
            opt_num(report.std)
        )
    };
    let csv = || {
        let mut rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.syn.clone(),
                    r.gt.clone(),
                    r.t_syn.map_or(String::new(), |v| v.to_string()),
                    r.t_gt.map_or(String::new(), |v| v.to_string()),
                    opt_num(r.emcd_raw),
                    opt_num(r.emcd_norm),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        for (name, v) in [("mean", report.mean), ("std", report.std)] {
            rows.push(vec![
                name.into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                opt_num(v),
                String::new(),
            ]);
        }
        records_string(
            &[
                "syn",
                "gt",
                "t_syn",
                "t_gt",
                "emcd_raw",
                "emcd_norm",
                "error",
            ],
            &rows,
        )
    };
    let json = || json_string(&report);
    emit(cli.format, a.out.as_deref(), human, csv, json)
}

fn cmd_init(cli: &Cli, a: &InitArgs) -> Outcome {
    let model = Model::<f32>::init(resolve_spec(&a.model)?, cli.seed)?;
    model.save(&a.out)?;
    println!("{} tensors -> {}", model.weights().len(), a.out.display());
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Outcome {
    let model = resolve_model(&a.model, cli.seed)?.prepare()?;
    let ids = text_to_ids(&a.text);
    let opts = SynthOptions {
        max_frames: a.frames,
        early_stop: if a.no_early_stop { None } else { Some(10) },
    };
    let out = synthesize(&model, &ids, opts)?;
    if a.verify {
        let full = recompute(&model, &ids, &out.mel)?;
        let diff = full.max_abs_diff(&out.mel);
        if diff > 1e-6 {
            return Err(Failure::Internal(format!(
                "incremental synthesis differs from recomputation by {diff}"
            )));
        }
    }
    let mel = MelSpectrogram {
        bins: out.mel,
        sample_rate: 22050,
        hop: 256,
        n_fft: 1024,
        fmin: 0.0,
        fmax: 11025.0,
    };
    audio::save_mel(&a.out, &mel)?;
    println!(
        "{} frames{} -> {}",
        mel.frames(),
        if out.stopped_early {
            " (early stop)"
        } else {
            ""
        },
        a.out.display()
    );
    Ok(())
}
