//! `fcqa`: segment scripts, ground questions, train, evaluate and query the
//! question-answering model from the command line.
//!
//! Settings are resolved as defaults, then `--config` file, then flags. On
//! failure a JSON object `{"error": <kind>, "message": <text>}` is written to
//! stderr and the exit status is 1.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcqa_core::embedding::load_embeddings;
use fcqa_core::grounding::ground_text;
use fcqa_core::model::checkpoint;
use fcqa_core::model::{prepare_sample, StepRunner, WeightsSource};
use fcqa_core::pipeline::{
    ablation_matrix, evaluate_checkpoint, find_sample, load_dataset, load_embedding_set, load_function_set,
    load_script, load_scripts, run_training, segment_scripts, write_file, write_function_sets, write_json,
    AblationInputs, PipelineError, RunConfig,
};
use fcqa_core::script::segment_script;
use fcqa_core::toy::toy_fixture;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fcqa", version, about = "Function-centric question answering over instructional videos")]
struct Cli {
    /// Flat `key = value` settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a script (or a directory of scripts) into function units.
    Segment {
        #[arg(long)]
        script: Option<PathBuf>,
        /// `function` or `sentence`.
        #[arg(long)]
        mode: Option<String>,
        /// Output file, or directory when `--script` is a directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weight a video's function units by TF-IDF similarity to a question.
    Ground {
        #[arg(long)]
        functions: Option<PathBuf>,
        #[arg(long)]
        question: String,
        #[arg(long)]
        top_k: Option<usize>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its best-epoch checkpoint.
    Train {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Evaluation set used for best-epoch selection (defaults to the training data).
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch loss and metrics as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write `report.json`.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        inputs: InputArgs,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank answers step by step for one question. Each step prints a JSON
    /// line; the next stdin line picks the answer to carry forward (empty
    /// line or end of input takes the top-ranked one).
    Infer {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        question: String,
        #[arg(long)]
        video: String,
        #[command(flatten)]
        inputs: InputArgs,
    },
    /// Train and evaluate every combination of the requested ablation axes.
    Ablation {
        /// Comma-separated subset of segmentation,grounding,features.
        #[arg(long)]
        axes: Option<String>,
        /// Semicolon-separated feature sets for the features axis, e.g. `fT,fV,aT;fT,fV,aT,aV`.
        #[arg(long)]
        feature_sets: Option<String>,
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Directory for `ablation.md` and `ablation.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embedding file utilities.
    Emb {
        #[command(subcommand)]
        command: EmbCommand,
    },
    /// Write the synthetic toy fixture (scripts, QA data, embeddings, config).
    ToyFixture {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EmbCommand {
    /// Print entry count, dimension and first/last ids.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct InputArgs {
    /// QA dataset JSON.
    #[arg(long)]
    data: Option<PathBuf>,
    /// A functions.json file or a directory of them.
    #[arg(long)]
    functions: Option<PathBuf>,
    /// Directory of scripts to segment when `--functions` is not given.
    #[arg(long)]
    script_dir: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    /// EMB1 file; repeat to search several.
    #[arg(long)]
    emb: Vec<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// `tfidf` or `cross-att`.
    #[arg(long)]
    grounding: Option<String>,
    /// Comma-separated subset of fT,fV,aT,aV.
    #[arg(long)]
    feat: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Feed the model's own predictions to the next step during training.
    #[arg(long)]
    no_teacher_forcing: bool,
}

type Overrides = Vec<(&'static str, String)>;

fn push<T: ToString>(out: &mut Overrides, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

fn push_path(out: &mut Overrides, key: &'static str, value: &Option<PathBuf>) {
    push(out, key, &value.as_ref().map(|p| p.display()));
}

impl InputArgs {
    fn overrides(&self, out: &mut Overrides) {
        push_path(out, "data", &self.data);
        push_path(out, "functions", &self.functions);
        push_path(out, "script_dir", &self.script_dir);
        push(out, "mode", &self.mode);
        if !self.emb.is_empty() {
            let joined = self.emb.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
            out.push(("emb", joined));
        }
        push(out, "top_k", &self.top_k);
    }
}

impl ModelArgs {
    fn overrides(&self, out: &mut Overrides) {
        push(out, "grounding", &self.grounding);
        push(out, "feat", &self.feat);
        push(out, "seed", &self.seed);
        push(out, "hidden", &self.hidden);
        push(out, "mlp_hidden", &self.mlp_hidden);
        push(out, "lr", &self.lr);
        push(out, "epochs", &self.epochs);
        push(out, "batch_size", &self.batch_size);
        if self.no_teacher_forcing {
            out.push(("teacher_forcing", "false".into()));
        }
    }
}

fn resolve(config: Option<&Path>, overrides: Overrides) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config {
        cfg.apply_file(path)?;
    }
    for (key, value) in overrides {
        cfg.set(key, &value)?;
    }
    Ok(cfg)
}

fn emit_json(out: Option<&Path>, value: &serde_json::Value) -> Result<(), PipelineError> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("JSON value"));
            Ok(())
        }
    }
}

fn segment(cfg: &RunConfig, script: Option<&Path>) -> Result<(), PipelineError> {
    let script =
        script.or(cfg.script_dir.as_deref()).ok_or_else(|| PipelineError::Config("missing `--script`".into()))?;
    let out = cfg.require(&cfg.out, "out")?;
    if script.is_dir() {
        let sets = segment_scripts(&load_scripts(script)?, cfg.mode)?;
        write_function_sets(out, &sets)?;
        eprintln!("segmented {} scripts into {}", sets.len(), out.display());
    } else {
        let set = segment_script(&load_script(script)?, cfg.mode)?;
        write_json(out, &set)?;
        eprintln!("{}: {} units", set.video_id, set.functions.len());
    }
    Ok(())
}

fn ground(cfg: &RunConfig, question: &str) -> Result<(), PipelineError> {
    let set = load_function_set(cfg.require(&cfg.functions_dir, "functions")?)?;
    let texts: Vec<&str> = set.functions.iter().map(|f| f.para_text.as_str()).collect();
    let (weights, scores) = ground_text(question, &texts, cfg.top_k)?;
    let ids: Vec<&str> = set.functions.iter().map(|f| f.function_id.as_str()).collect();
    emit_json(
        cfg.out.as_deref(),
        &json!({ "video_id": set.video_id, "function_ids": ids, "weights": weights.weights, "scores": scores }),
    )
}

fn train(cfg: &RunConfig, log: Option<&Path>) -> Result<(), PipelineError> {
    let out = cfg.require(&cfg.out, "out")?;
    let dataset = load_dataset(cfg.require(&cfg.data, "data")?)?;
    let eval = cfg.eval_data.as_deref().map(load_dataset).transpose()?;
    let table = load_embedding_set(cfg.require_emb()?)?;
    let functions = cfg.function_sets()?;
    let result = run_training(cfg, &dataset, eval.as_ref(), &functions, &table)?;
    write_file(out, checkpoint::encode(&result.config, &result.params))?;
    if let Some(path) = log {
        write_json(path, &result.log)?;
    }
    eprintln!(
        "best epoch {}: R@1 {:.1} R@3 {:.1} MR {:.3} MRR {:.4}; final loss {:.4}; wrote {}",
        result.best_epoch,
        result.report.r_at_1,
        result.report.r_at_3,
        result.report.mr,
        result.report.mrr,
        result.final_loss(),
        out.display()
    );
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> Result<(fcqa_core::ModelConfig, fcqa_core::ModelParams), PipelineError> {
    let path = cfg.require(&cfg.ckpt, "ckpt")?;
    checkpoint::load(path).map_err(|e| PipelineError::from(e).context(path.display().to_string()))
}

fn eval(cfg: &RunConfig) -> Result<(), PipelineError> {
    let (config, params) = load_checkpoint(cfg)?;
    let dataset = load_dataset(cfg.require(&cfg.data, "data")?)?;
    let table = load_embedding_set(cfg.require_emb()?)?;
    let functions = cfg.function_sets()?;
    let report = evaluate_checkpoint(&config, &params, &dataset, &functions, &table, cfg.top_k)?;
    emit_json(cfg.out.as_deref(), &serde_json::to_value(&report).expect("report serializes"))
}

fn infer(cfg: &RunConfig, question: &str, video: &str) -> Result<(), PipelineError> {
    let (config, params) = load_checkpoint(cfg)?;
    let dataset = load_dataset(cfg.require(&cfg.data, "data")?)?;
    let table = load_embedding_set(cfg.require_emb()?)?;
    let functions = cfg.function_sets()?;
    let sample = find_sample(&dataset, video, question)
        .ok_or_else(|| PipelineError::Config(format!("no question `{question}` for video `{video}` in the dataset")))?;
    let function_set = functions
        .get(video)
        .ok_or_else(|| PipelineError::from(fcqa_core::model::ModelError::UnknownVideo(video.into())))?;
    let prepared =
        prepare_sample(sample, function_set, WeightsSource::for_config(&config, cfg.top_k), &table, &config)?;
    let mut runner = StepRunner::new(&params, &config, &prepared)?;

    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let stdout = std::io::stdout();
    let weights = runner.function_weights().to_vec();
    let ids: Vec<&str> = function_set.functions.iter().map(|f| f.function_id.as_str()).collect();
    writeln!(stdout.lock(), "{}", json!({ "function_ids": ids, "function_weights": weights })).ok();
    while let (Some(ranking), Some(probs)) = (runner.rank(), runner.probabilities()) {
        let step = runner.current_step();
        let candidates = &sample.steps[step].candidates;
        let ranked: Vec<_> = ranking
            .iter()
            .map(|&c| json!({ "candidate": c, "text_emb_id": candidates[c].text_emb_id, "prob": probs[c] }))
            .collect();
        writeln!(stdout.lock(), "{}", json!({ "step": step, "ranking": ranked })).ok();
        stdout.lock().flush().ok();

        let chosen = loop {
            eprint!("step {step} choice [{}]: ", ranking[0]);
            match lines.next() {
                None => break ranking[0],
                Some(line) => {
                    let line = line.map_err(|source| PipelineError::Io { path: "<stdin>".into(), source })?;
                    let line = line.trim();
                    if line.is_empty() {
                        break ranking[0];
                    }
                    match line.parse::<usize>() {
                        Ok(c) if c < candidates.len() => break c,
                        _ => eprintln!("expected a candidate index below {}", candidates.len()),
                    }
                }
            }
        };
        runner.advance(chosen)?;
    }
    eprintln!();
    Ok(())
}

fn ablation(cfg: &RunConfig) -> Result<(), PipelineError> {
    let out = cfg.require(&cfg.out, "out")?;
    let inputs = AblationInputs::load(cfg)?;
    let table = ablation_matrix(cfg, &inputs, &cfg.axes)?;
    let markdown = table.to_markdown();
    write_file(&out.join("ablation.md"), &markdown)?;
    write_json(&out.join("ablation.json"), &table)?;
    print!("{markdown}");
    Ok(())
}

fn emb_inspect(path: &Path) -> Result<(), PipelineError> {
    let table = load_embeddings(path).map_err(|e| PipelineError::from(e).context(path.display().to_string()))?;
    let first = table.ids().next();
    let last = table.ids().last();
    println!(
        "{}",
        json!({ "path": path.display().to_string(), "count": table.len(), "dim": table.dim(), "first_id": first, "last_id": last })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = cli.config.as_deref();
    let mut o = Overrides::new();
    match cli.command {
        Command::Segment { script, mode, out } => {
            push(&mut o, "mode", &mode);
            push_path(&mut o, "out", &out);
            segment(&resolve(config, o)?, script.as_deref())
        }
        Command::Ground { functions, question, top_k, out } => {
            push_path(&mut o, "functions", &functions);
            push(&mut o, "top_k", &top_k);
            push_path(&mut o, "out", &out);
            ground(&resolve(config, o)?, &question)
        }
        Command::Train { inputs, model, eval_data, out, log } => {
            inputs.overrides(&mut o);
            model.overrides(&mut o);
            push_path(&mut o, "eval_data", &eval_data);
            push_path(&mut o, "out", &out);
            train(&resolve(config, o)?, log.as_deref())
        }
        Command::Eval { ckpt, inputs, out } => {
            push_path(&mut o, "ckpt", &ckpt);
            inputs.overrides(&mut o);
            push_path(&mut o, "out", &out);
            eval(&resolve(config, o)?)
        }
        Command::Infer { ckpt, question, video, inputs } => {
            push_path(&mut o, "ckpt", &ckpt);
            inputs.overrides(&mut o);
            infer(&resolve(config, o)?, &question, &video)
        }
        Command::Ablation { axes, feature_sets, inputs, model, eval_data, out } => {
            push(&mut o, "axes", &axes);
            push(&mut o, "feature_sets", &feature_sets);
            inputs.overrides(&mut o);
            model.overrides(&mut o);
            push_path(&mut o, "eval_data", &eval_data);
            push_path(&mut o, "out", &out);
            ablation(&resolve(config, o)?)
        }
        Command::Emb { command: EmbCommand::Inspect { path } } => emb_inspect(&path),
        Command::ToyFixture { out } => {
            toy_fixture().write_to(&out).map_err(|source| PipelineError::Io { path: out.clone(), source })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report: BTreeMap<&str, String> = BTreeMap::from([("error", err.kind()), ("message", err.to_string())]);
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::FAILURE
        }
    }
}
