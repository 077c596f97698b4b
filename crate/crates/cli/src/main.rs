//! `aflow`: validate, convert, run, synthesize and benchmark workflow programs.
//!
//! Exit codes: 0 ok, 1 task-level failure (invalid program, unsolved task),
//! 2 usage or configuration, 3 runtime or backend, 4 language model.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use aflow_core::bench::synthetic::load_scripts;
use aflow_core::bench::{load_suite, run_suite, TaskCase};
use aflow_core::diagnostic;
use aflow_core::executor::{
    export_comfy_with, import_comfy, submit_live, ComfyError, ExportOptions, LiveConfig, TraceStatus,
};
use aflow_core::inference::{
    run_pipeline, InferenceError, LmBackend, LmError, OpenAiLm, PipelineOptions, ReferenceStore, ScriptedLm,
    TaskInput, TaskSpec,
};
use aflow_core::{
    check_source, emit, execute, Diagnostic, Modality, Registry, SimulatedBackend, SyntaxStyle,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::{CliConfig, OutputFormat};

const OK: u8 = 0;
const TASK_FAILED: u8 = 1;
const USAGE: u8 = 2;
const RUNTIME: u8 = 3;
const LM: u8 = 4;

#[derive(Parser)]
#[command(name = "aflow", version, about = "Typed generative-workflow toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Config file (default: ./aflow.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Function catalog (default: the bundled test catalog).
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a program; diagnostics go to stderr.
    Validate {
        file: PathBuf,
        #[arg(long)]
        syntax: Option<SyntaxStyle>,
    },
    /// Translate a program between syntaxes.
    Convert {
        file: PathBuf,
        #[arg(long)]
        from: Option<SyntaxStyle>,
        #[arg(long)]
        to: SyntaxStyle,
    },
    /// Validate and execute a program; prints the trace as JSON.
    Run {
        file: PathBuf,
        #[arg(long)]
        syntax: Option<SyntaxStyle>,
        #[arg(long, value_enum, default_value = "sim")]
        backend: BackendKind,
        /// ComfyUI server, overrides config and AFLOW_COMFY_URL.
        #[arg(long)]
        endpoint: Option<String>,
        /// Seconds between history polls.
        #[arg(long)]
        poll_interval: Option<f64>,
        /// Seconds before a live run is abandoned.
        #[arg(long)]
        timeout: Option<f64>,
        /// Override a node's seed, `node=value`. Repeatable.
        #[arg(long = "seed", value_parser = parse_seed)]
        seeds: Vec<(String, i64)>,
    },
    /// Synthesize a program from a task description.
    Infer(InferArgs),
    /// Run a benchmark suite directory.
    Bench(BenchArgs),
    /// Write a program as a ComfyUI API prompt.
    Export {
        file: PathBuf,
        #[arg(long)]
        syntax: Option<SyntaxStyle>,
        /// Write every parameter, including defaults.
        #[arg(long)]
        fill_defaults: bool,
    },
    /// Read a ComfyUI API prompt and print it as a program.
    Import {
        file: PathBuf,
        #[arg(long)]
        to: Option<SyntaxStyle>,
    },
    /// Regenerate a catalog from a ComfyUI `/object_info` response.
    SyncCatalog {
        /// Server to query; ignored when `--object-info` is given.
        #[arg(long)]
        endpoint: Option<String>,
        /// Saved `/object_info` response.
        #[arg(long)]
        object_info: Option<PathBuf>,
        #[arg(long, default_value = "synced")]
        version: String,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Sim,
    Comfy,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    task: Option<String>,
    #[arg(long, conflicts_with = "task")]
    task_file: Option<PathBuf>,
    /// Task input, `name:modality:uri`. Repeatable.
    #[arg(long = "input", value_parser = parse_input)]
    inputs: Vec<TaskInput>,
    #[arg(long)]
    syntax: Option<SyntaxStyle>,
    /// Maximum refinement rounds.
    #[arg(long)]
    limit: Option<usize>,
    /// References retrieved per prompt.
    #[arg(long)]
    k: Option<usize>,
    /// Ask for the whole program in one prompt.
    #[arg(long)]
    single_stage: bool,
    /// Replay model responses from a JSON file instead of calling a model.
    #[arg(long)]
    lm_script: Option<PathBuf>,
    /// Reference programs (`*.adl` with `*.task.txt`); default: bundled.
    #[arg(long)]
    references: Option<PathBuf>,
    /// Also execute candidates on the simulator and repair runtime failures.
    #[arg(long)]
    execute: bool,
    /// Write the final program here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the session transcript (JSON) here.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    suite: PathBuf,
    /// Run every case in this syntax instead of its own.
    #[arg(long)]
    syntax: Option<SyntaxStyle>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    single_stage: bool,
    /// Use the configured model instead of `<id>.script.json` files.
    #[arg(long)]
    live: bool,
    /// Write report.json and report.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-case table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_seed(s: &str) -> Result<(String, i64), String> {
    let (node, value) = s.split_once('=').ok_or("expected node=value")?;
    let value = value.parse().map_err(|e| format!("seed `{value}`: {e}"))?;
    Ok((node.to_string(), value))
}

fn parse_input(s: &str) -> Result<TaskInput, String> {
    let mut parts = s.splitn(3, ':');
    let (Some(name), Some(modality), Some(uri)) = (parts.next(), parts.next(), parts.next()) else {
        return Err("expected name:modality:uri".into());
    };
    let modality: Modality = serde_json::from_value(json!(modality.to_ascii_lowercase()))
        .map_err(|_| format!("unknown modality `{modality}`"))?;
    Ok(TaskInput {
        name: name.into(),
        modality,
        uri: uri.into(),
    })
}

/// Error that ends the command with `code`.
struct Fail {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Fail {
    Fail {
        code,
        message: message.into(),
    }
}

type Outcome = Result<u8, Fail>;

struct Ctx {
    cfg: CliConfig,
    registry: Registry,
}

impl Ctx {
    fn json(&self) -> bool {
        self.cfg.format == OutputFormat::Json
    }

    fn live_lm(&self) -> Result<OpenAiLm, Fail> {
        let (Some(url), Some(model)) = (&self.cfg.lm_url, &self.cfg.lm_model) else {
            return Err(fail(
                USAGE,
                "no model configured: set AFLOW_LM_URL and AFLOW_LM_MODEL or use a script",
            ));
        };
        let mut lm = OpenAiLm::new(url.clone(), model.clone());
        lm.api_key = self.cfg.lm_key.clone();
        if let Some(m) = &self.cfg.embed_model {
            lm.embed_model = m.clone();
        }
        Ok(lm)
    }

    fn report_diagnostics(&self, diags: &[Diagnostic]) {
        if self.json() {
            eprintln!("{}", diagnostic::to_json(diags));
        } else {
            for d in diags {
                eprintln!("{d}");
            }
        }
    }
}

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| fail(USAGE, format!("{}: {e}", path.display())))
}

fn style_for(path: &Path, flag: Option<SyntaxStyle>, cfg: &CliConfig) -> SyntaxStyle {
    flag.or_else(|| {
        path.extension()
            .and_then(|e| e.to_str())
            .and_then(SyntaxStyle::from_extension)
    })
    .unwrap_or(cfg.syntax)
}

fn load_registry(cfg: &CliConfig) -> Result<Registry, Fail> {
    match &cfg.catalog {
        None => Ok(Registry::test_catalog()),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| fail(USAGE, format!("catalog {}: {e}", p.display())))?;
            Registry::load_catalog(&bytes).map_err(|e| fail(USAGE, format!("catalog {}: {e}", p.display())))
        }
    }
}

/// Parses and validates; prints diagnostics and fails with exit 1 unless
/// the program is executable.
fn load_program(ctx: &Ctx, file: &Path, syntax: Option<SyntaxStyle>) -> Result<aflow_core::Workflow, Fail> {
    let text = read(file)?;
    let style = style_for(file, syntax, &ctx.cfg);
    let (w, diags) = check_source(&text, style, &ctx.registry);
    if !diags.is_empty() {
        ctx.report_diagnostics(&diags);
    }
    match w {
        Some(w) if diagnostic::is_executable(&diags) => Ok(w),
        _ => Err(fail(TASK_FAILED, format!("{} is not executable", file.display()))),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Fail> {
    fs::write(path, text).map_err(|e| fail(USAGE, format!("{}: {e}", path.display())))
}

fn validate(ctx: &Ctx, file: &Path, syntax: Option<SyntaxStyle>) -> Outcome {
    let text = read(file)?;
    let style = style_for(file, syntax, &ctx.cfg);
    let (_, diags) = check_source(&text, style, &ctx.registry);
    ctx.report_diagnostics(&diags);
    Ok(if diagnostic::is_executable(&diags) {
        OK
    } else {
        TASK_FAILED
    })
}

fn convert(ctx: &Ctx, file: &Path, from: Option<SyntaxStyle>, to: SyntaxStyle) -> Outcome {
    let text = read(file)?;
    let from = style_for(file, from, &ctx.cfg);
    match aflow_core::convert(&text, from, to) {
        Ok(program) => {
            if ctx.json() {
                println!("{}", json!({ "syntax": to, "program": program }));
            } else {
                print!("{program}");
            }
            Ok(OK)
        }
        Err(aflow_core::frontends::FrontendError::Parse(diags)) => {
            ctx.report_diagnostics(&diags);
            Ok(TASK_FAILED)
        }
        Err(e) => Err(fail(TASK_FAILED, e.to_string())),
    }
}

struct RunArgs {
    backend: BackendKind,
    endpoint: Option<String>,
    poll_interval: Option<f64>,
    timeout: Option<f64>,
    seeds: Vec<(String, i64)>,
}

fn run(ctx: &Ctx, file: &Path, syntax: Option<SyntaxStyle>, args: RunArgs) -> Outcome {
    let w = load_program(ctx, file, syntax)?;
    let trace = match args.backend {
        BackendKind::Sim => {
            let seeds: BTreeMap<String, i64> = args.seeds.into_iter().collect();
            execute(&w, &ctx.registry, &SimulatedBackend, &seeds)
                .map_err(|e| fail(TASK_FAILED, e.to_string()))?
        }
        BackendKind::Comfy => {
            let mut w = w;
            for (node, seed) in args.seeds {
                w.set_param(&node, "seed", aflow_core::ParamValue::Int(seed))
                    .map_err(|e| fail(USAGE, format!("--seed {node}: {e}")))?;
            }
            let doc = export_comfy_with(&w, &ctx.registry, ExportOptions { fill_defaults: true })
                .map_err(|e| fail(TASK_FAILED, e.to_string()))?;
            let cfg = LiveConfig {
                endpoint: args.endpoint.unwrap_or_else(|| ctx.cfg.comfy_url.clone()),
                poll_interval: args
                    .poll_interval
                    .map(Duration::from_secs_f64)
                    .unwrap_or_else(|| ctx.cfg.poll_interval()),
                timeout: args
                    .timeout
                    .map(Duration::from_secs_f64)
                    .unwrap_or_else(|| ctx.cfg.timeout()),
                ..LiveConfig::default()
            };
            submit_live(&doc, &cfg).map_err(|e| fail(RUNTIME, e.to_string()))?
        }
    };
    println!("{}", trace.to_json());
    if let Some(f) = &trace.failure {
        eprintln!("node {} failed: {}", f.node, f.message);
    }
    Ok(if trace.status == TraceStatus::Completed {
        OK
    } else {
        RUNTIME
    })
}

fn lm_exit(e: &LmError) -> u8 {
    match e {
        LmError::Config(_) => USAGE,
        _ => LM,
    }
}

fn infer(ctx: &Ctx, a: InferArgs) -> Outcome {
    let description = match (&a.task, &a.task_file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => read(p)?,
        (None, None) => return Err(fail(USAGE, "a task is required: --task or --task-file")),
    };
    if description.trim().is_empty() {
        return Err(fail(USAGE, "the task description is empty"));
    }
    let mut task = TaskSpec::new(description.trim(), a.syntax.unwrap_or(ctx.cfg.syntax));
    task.inputs = a.inputs;
    let lm: Box<dyn LmBackend> = match &a.lm_script {
        Some(p) => Box::new(ScriptedLm::from_json(&read(p)?).map_err(|e| fail(USAGE, e.to_string()))?),
        None => Box::new(ctx.live_lm()?),
    };
    let store = match &a.references {
        Some(dir) => ReferenceStore::load_dir(dir, &ctx.registry, lm.as_ref()),
        None => ReferenceStore::bundled(&ctx.registry, lm.as_ref()),
    }
    .map_err(|e| match e {
        aflow_core::inference::StoreError::Lm(l) => fail(lm_exit(&l), l.to_string()),
        other => fail(USAGE, format!("references: {other}")),
    })?;
    let options = PipelineOptions {
        iteration_limit: a.limit.unwrap_or(ctx.cfg.iteration_limit),
        k: a.k.unwrap_or(ctx.cfg.k),
        two_stage: !a.single_stage,
    };
    let backend = SimulatedBackend;
    let session = run_pipeline(
        &task,
        &ctx.registry,
        &store,
        lm.as_ref(),
        options,
        a.execute.then_some(&backend as &dyn aflow_core::Backend),
    )
    .map_err(|e| match e {
        InferenceError::Lm(l) => fail(lm_exit(&l), l.to_string()),
        InferenceError::EmptyResponse(_) => fail(LM, e.to_string()),
        InferenceError::InvalidTask(_) => fail(USAGE, e.to_string()),
        other => fail(TASK_FAILED, other.to_string()),
    })?;
    if let Some(p) = &a.transcript {
        write_file(p, &session.transcript_json())?;
    }
    let program = session.final_program();
    if let (Some(p), Some(text)) = (&a.out, &program) {
        write_file(p, text)?;
    }
    if ctx.json() {
        println!(
            "{}",
            json!({
                "succeeded": session.succeeded(),
                "iterations": session.iterations.len(),
                "refinements": session.refinements(),
                "program": program,
            })
        );
    } else if let Some(text) = &program {
        print!("{text}");
    }
    if session.succeeded() {
        Ok(OK)
    } else {
        if let Some(last) = session.last() {
            ctx.report_diagnostics(&last.diagnostics);
        }
        eprintln!(
            "no executable program after {} refinement(s)",
            session.refinements()
        );
        Ok(TASK_FAILED)
    }
}

fn bench(ctx: &Ctx, a: BenchArgs) -> Outcome {
    if !a.suite.is_dir() {
        return Err(fail(USAGE, format!("{} is not a directory", a.suite.display())));
    }
    let cases = load_suite(&a.suite, &ctx.registry).map_err(|e| fail(USAGE, e.to_string()))?;
    let live = if a.live { Some(ctx.live_lm()?) } else { None };
    let two_stage = !a.single_stage;
    let dir = a.suite.clone();
    let provider = |case: &TaskCase| -> Result<Box<dyn LmBackend>, LmError> {
        match &live {
            Some(lm) => Ok(Box::new(lm.clone())),
            None => {
                let scripts = load_scripts(&dir, &case.id).map_err(LmError::Config)?;
                Ok(Box::new(scripts.lm(two_stage)))
            }
        }
    };
    let store = match &live {
        Some(lm) => ReferenceStore::bundled(&ctx.registry, lm),
        None => ReferenceStore::bundled(&ctx.registry, &ScriptedLm::default()),
    }
    .map_err(|e| fail(LM, e.to_string()))?;
    let options = PipelineOptions {
        iteration_limit: a.limit.unwrap_or(ctx.cfg.iteration_limit),
        k: ctx.cfg.k,
        two_stage,
    };
    let report = run_suite(
        &cases,
        &ctx.registry,
        &store,
        &provider,
        &SimulatedBackend,
        a.syntax,
        options,
    );
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(|e| fail(USAGE, format!("{}: {e}", out.display())))?;
        write_file(&out.join("report.json"), &report.to_json())?;
        write_file(&out.join("report.csv"), &report.to_csv())?;
    }
    if let Some(p) = &a.csv {
        write_file(p, &report.to_csv())?;
    }
    if ctx.json() {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(OK)
}

fn export(ctx: &Ctx, file: &Path, syntax: Option<SyntaxStyle>, fill_defaults: bool) -> Outcome {
    let w = load_program(ctx, file, syntax)?;
    match export_comfy_with(&w, &ctx.registry, ExportOptions { fill_defaults }) {
        Ok(doc) => {
            println!("{}", doc.trim_end());
            Ok(OK)
        }
        Err(ComfyError::PreconditionViolated(diags)) => {
            ctx.report_diagnostics(&diags);
            Ok(TASK_FAILED)
        }
        Err(e) => Err(fail(TASK_FAILED, e.to_string())),
    }
}

fn import(ctx: &Ctx, file: &Path, to: Option<SyntaxStyle>) -> Outcome {
    let bytes = fs::read(file).map_err(|e| fail(USAGE, format!("{}: {e}", file.display())))?;
    let outcome = import_comfy(&bytes, &ctx.registry).map_err(|e| fail(TASK_FAILED, e.to_string()))?;
    if !outcome.diagnostics.is_empty() {
        ctx.report_diagnostics(&outcome.diagnostics);
    }
    let style = to.unwrap_or(ctx.cfg.syntax);
    let program = emit(&outcome.workflow, style).map_err(|e| fail(TASK_FAILED, e.to_string()))?;
    if ctx.json() {
        println!("{}", json!({ "syntax": style, "program": program }));
    } else {
        print!("{program}");
    }
    Ok(OK)
}

fn sync_catalog(
    ctx: &Ctx,
    endpoint: Option<String>,
    object_info: Option<PathBuf>,
    version: &str,
    out: Option<PathBuf>,
) -> Outcome {
    let text = match object_info {
        Some(p) => read(&p)?,
        None => {
            let base = endpoint.unwrap_or_else(|| ctx.cfg.comfy_url.clone());
            let url = format!("{}/object_info", base.trim_end_matches('/'));
            reqwest::blocking::Client::builder()
                .timeout(ctx.cfg.timeout())
                .build()
                .and_then(|c| c.get(&url).send())
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.text())
                .map_err(|e| fail(RUNTIME, format!("{url}: {e}")))?
        }
    };
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| fail(RUNTIME, format!("object_info: {e}")))?;
    let (registry, skipped) =
        Registry::from_object_info(&doc, version).map_err(|e| fail(RUNTIME, e.to_string()))?;
    let catalog = registry.save_catalog();
    match &out {
        Some(p) => write_file(p, &catalog)?,
        None => print!("{catalog}"),
    }
    if ctx.json() {
        eprintln!("{}", json!({ "functions": registry.len(), "skipped": skipped }));
    } else {
        eprintln!("{} functions, {} skipped", registry.len(), skipped.len());
        for s in &skipped {
            eprintln!("skipped: {s}");
        }
    }
    Ok(OK)
}

fn dispatch(cli: Cli) -> Outcome {
    let mut cfg = CliConfig::load(cli.global.config.as_deref()).map_err(|e| fail(USAGE, e))?;
    if let Some(c) = cli.global.catalog {
        cfg.catalog = Some(c);
    }
    if let Some(f) = cli.global.format {
        cfg.format = f;
    }
    let registry = load_registry(&cfg)?;
    let ctx = Ctx { cfg, registry };
    match cli.command {
        Command::Validate { file, syntax } => validate(&ctx, &file, syntax),
        Command::Convert { file, from, to } => convert(&ctx, &file, from, to),
        Command::Run {
            file,
            syntax,
            backend,
            endpoint,
            poll_interval,
            timeout,
            seeds,
        } => run(
            &ctx,
            &file,
            syntax,
            RunArgs {
                backend,
                endpoint,
                poll_interval,
                timeout,
                seeds,
            },
        ),
        Command::Infer(a) => infer(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Export {
            file,
            syntax,
            fill_defaults,
        } => export(&ctx, &file, syntax, fill_defaults),
        Command::Import { file, to } => import(&ctx, &file, to),
        Command::SyncCatalog {
            endpoint,
            object_info,
            version,
            out,
        } => sync_catalog(&ctx, endpoint, object_info, &version, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { OK });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("aflow: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
