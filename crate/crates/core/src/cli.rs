//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use similar::TextDiff;

use crate::agent::{init_persona_from_summary, read_trajectory, AgentEnv, AgentStep, Trajectory};
use crate::alignment::{align, write_alignment_log};
use crate::analysis::{export_embeddings, jaccard_matrix};
use crate::benchmark::{load_dataset, run_experiment, ExperimentResults, MethodKind, TaskSpec};
use crate::config::CliConfig;
use crate::embedding::Encoder;
use crate::memory::{summarize_profile, EpisodicBuffer, UserStore};
use crate::model::{TaskKind, UserId};
use crate::tools::ToolRegistry;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "persona-agent", version, about = "Personalized tool-using agents with test-time persona alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured method on every configured task.
    Bench(BenchArgs),
    /// Align one user's persona and print the persona diff.
    Align(AlignArgs),
    /// Persona analysis over a memory store.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Pretty-print a trajectory log.
    Inspect {
        /// A `<query_index>.traj.jsonl` file.
        path: PathBuf,
    },
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run_dir` from the config.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Let alignment simulations retrieve the record being simulated.
    #[arg(long)]
    allow_self_retrieval: bool,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    config: PathBuf,
    /// Task slug or alias; defaults to the first configured task.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    user: String,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    allow_self_retrieval: bool,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Pairwise Jaccard similarity of the stored personas, as CSV.
    Similarity {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Export persona embeddings as CSV.
    Embeddings {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = crate::embedding::DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runs the CLI with process stdout/stderr.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`cli_main`] with explicit output streams.
pub fn run_cli<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Bench(a) => bench(a, out),
        Command::Align(a) => align_cmd(a, out),
        Command::Analyze(a) => analyze(a, out),
        Command::Inspect { path } => read_trajectory(&path).map_err(|e| e.to_string()).map(|t| print_trajectory(&t, out)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn bench(args: BenchArgs, out: &mut dyn Write) -> Result<(), String> {
    let mut cfg = CliConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(dir) = args.run_dir {
        cfg.run_dir = dir;
    }
    if args.allow_self_retrieval {
        cfg.alignment.allow_self_retrieval = true;
    }
    let plan = cfg.plan().map_err(|e| e.to_string())?;
    let res = cfg.resources().map_err(|e| e.to_string())?;
    let results = run_experiment(&plan, &res).map_err(|e| e.to_string())?;
    print_results(&results, out);
    let _ = writeln!(out, "results written to {}", plan.run_dir.join(crate::benchmark::RESULTS_FILE).display());
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn print_results(results: &ExperimentResults, out: &mut dyn Write) {
    let _ = writeln!(out, "{:<34} {:<24} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}", "method", "task", "acc", "f1", "mae", "rmse", "n", "fail");
    for r in &results.reports {
        let m = &r.report;
        let _ = writeln!(
            out,
            "{:<34} {:<24} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}",
            r.method.to_string(),
            r.task.slug(),
            fmt_metric(m.accuracy),
            fmt_metric(m.f1),
            fmt_metric(m.mae),
            fmt_metric(m.rmse),
            m.n_examples,
            m.n_parse_failures
        );
    }
}

fn pick_task<'a>(specs: &'a [TaskSpec], wanted: Option<&str>) -> Result<&'a TaskSpec, String> {
    match wanted {
        None => specs.first().ok_or_else(|| "config has no tasks".to_string()),
        Some(name) => {
            let kind: TaskKind = name.parse().map_err(|e: crate::model::ModelError| e.to_string())?;
            specs
                .iter()
                .find(|s| s.definition.task == kind)
                .ok_or_else(|| format!("task {} is not configured", kind.slug()))
        }
    }
}

fn align_cmd(args: AlignArgs, out: &mut dyn Write) -> Result<(), String> {
    let mut cfg = CliConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(e) = args.iterations {
        cfg.alignment.iterations = e;
    }
    if let Some(n) = args.batch_size {
        cfg.alignment.batch_size = n;
    }
    if args.allow_self_retrieval {
        cfg.alignment.allow_self_retrieval = true;
    }
    let plan = cfg.plan().map_err(|e| e.to_string())?;
    let res = cfg.resources().map_err(|e| e.to_string())?;
    let spec = pick_task(&plan.tasks, args.task.as_deref())?;
    let user = UserId::new(args.user).map_err(|e| e.to_string())?;
    let data = load_dataset(&spec.data, &spec.definition)
        .map_err(|e| e.to_string())?
        .into_iter()
        .find(|d| d.user == user)
        .ok_or_else(|| format!("user {user} not found in {}", spec.data.display()))?;

    let buffer = EpisodicBuffer::from_records(user.clone(), data.profile_records, &res.encoder).map_err(|e| e.to_string())?;
    let profile = summarize_profile(&buffer, data.task, &plan.summary, res.llm.as_ref(), &plan.params).map_err(|e| e.to_string())?;
    let init = init_persona_from_summary(user.clone(), &profile.text);
    let registry = ToolRegistry::standard();
    let env = AgentEnv {
        llm: res.llm.as_ref(),
        knowledge: res.knowledge.as_ref(),
        encoder: &res.encoder,
        registry: &registry,
        params: &plan.params,
        config: plan.run,
    };
    let outcome = align(&env, &buffer, &init, &plan.alignment).map_err(|e| e.to_string())?;

    let align_dir = plan.run_dir.join("align").join(data.task.slug());
    write_alignment_log(&align_dir.join(user.as_str()).join("align.log.jsonl"), &outcome).map_err(|e| e.to_string())?;
    let store = UserStore::new(plan.store_root().join(data.task.slug()).join("align"));
    store.save_profile(&profile).map_err(|e| e.to_string())?;
    store.save_persona(&outcome.persona).map_err(|e| e.to_string())?;

    let diff = TextDiff::from_lines(&init.text, &outcome.persona.text);
    let _ = write!(
        out,
        "{}",
        diff.unified_diff().context_radius(3).header(
            &format!("{user} persona v{}", init.version),
            &format!("{user} persona v{}", outcome.persona.version)
        )
    );
    if let Some(w) = &outcome.warning {
        let _ = writeln!(out, "warning: {w}");
    }
    Ok(())
}

fn analyze(cmd: AnalyzeCommand, out: &mut dyn Write) -> Result<(), String> {
    match cmd {
        AnalyzeCommand::Similarity { store, output } => {
            let personas = UserStore::new(&store).load_personas().map_err(|e| e.to_string())?;
            let m = jaccard_matrix(&personas).map_err(|e| format!("{e} in {}", store.display()))?;
            let csv = m.to_csv();
            if let Some(path) = output {
                std::fs::write(&path, &csv).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            let _ = write!(out, "{csv}");
            if m.empty_pairs {
                let _ = writeln!(out, "# note: personas without tokens are treated as identical (similarity 1.0)");
            }
            Ok(())
        }
        AnalyzeCommand::Embeddings { store, output, dim, seed } => {
            if dim == 0 {
                return Err("--dim must be positive".into());
            }
            let personas = UserStore::new(&store).load_personas().map_err(|e| e.to_string())?;
            let n = export_embeddings(&personas, &Encoder::hashed(dim, seed), &output).map_err(|e| e.to_string())?;
            let _ = writeln!(out, "wrote {n} persona embeddings to {}", output.display());
            Ok(())
        }
    }
}

fn print_trajectory(t: &Trajectory, out: &mut dyn Write) {
    let _ = writeln!(out, "query: {}", t.query.replace('\n', "\n       "));
    let _ = writeln!(out, "persona version: {}", t.persona_version);
    let _ = writeln!(out, "termination: {:?}", t.termination);
    for (i, step) in t.steps.iter().enumerate() {
        let line = match step {
            AgentStep::Thought { text } => format!("thought      {text}"),
            AgentStep::Action { thought, call } => {
                let mut s = String::new();
                if let Some(th) = thought {
                    s.push_str(&format!("thought      {th}\n{:>4}  ", ""));
                }
                s.push_str(&format!("action       {}({:?})", call.tool_name, call.input));
                s
            }
            AgentStep::Observation { result } => {
                let status = if result.ok { "" } else { " [failed]" };
                format!("observation{status}  {}", result.output.replace('\n', "\n                   "))
            }
            AgentStep::FinalAnswer { text, forced } => {
                format!("final{}        {text}", if *forced { " [forced]" } else { "" })
            }
        };
        let _ = writeln!(out, "{i:>4}  {line}");
    }
}

/// Method names accepted in configs, for help texts.
pub fn known_methods() -> Vec<String> {
    let mut v = vec![
        MethodKind::DirectPrompt,
        MethodKind::Icl(4),
        MethodKind::Rag(1),
        MethodKind::Rag(4),
        MethodKind::Pag(4),
        MethodKind::ReActAgent,
        MethodKind::MemoryBankAgent,
    ];
    v.extend(crate::benchmark::AblationFlags::table().map(MethodKind::PersonaAgent));
    v.iter().map(ToString::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_cli(std::iter::once("persona-agent").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let (code, _, err) = run(&["frobnicate"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("Usage"));
    }

    #[test]
    fn help_is_success() {
        let (code, out, _) = run(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("bench"));
    }

    #[test]
    fn missing_config_is_runtime_error() {
        let (code, _, err) = run(&["bench", "--config", "/nonexistent/x.toml"]);
        assert_eq!(code, EXIT_RUNTIME);
        assert!(err.contains("cannot read"));
    }

    #[test]
    fn known_methods_parse() {
        for m in known_methods() {
            assert!(m.parse::<MethodKind>().is_ok(), "{m}");
        }
    }
}
