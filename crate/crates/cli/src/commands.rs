use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use molmeta::autodiff::{ParameterSet, Tape};
use molmeta::data::{
    generate_synthetic_with, load_checkpoint, load_dataset, save_checkpoint, split_tasks,
    MultiTaskDataset,
};
use molmeta::diagnostics::{run_gradcheck, GradcheckScale};
use molmeta::encoder::{init_params, parameter_shapes, GraphBatch};
use molmeta::meta::{evaluate_tasks, meta_train, set_embeddings};
use molmeta::metrics::{export_embeddings, EmbeddingRow};
use molmeta::smiles::{parse, symbol, MolecularGraph};

use crate::config::{schema_help, RunConfig};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.mmck";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.tsv";

#[derive(Debug, Parser)]
#[command(name = "molmeta", version, about = "Few-shot molecular property prediction", after_help = schema_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse SMILES and print atom, bond and feature counts.
    Parse {
        /// A SMILES string.
        #[arg(required_unless_present = "file", conflicts_with = "file")]
        smiles: Option<String>,
        /// File with one SMILES per line.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Meta-train an encoder; writes a checkpoint, the resolved config and a log.
    #[command(after_help = schema_help())]
    Train(TrainArgs),
    /// Score held-out tasks with a trained checkpoint.
    #[command(after_help = schema_help())]
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        /// desk or paper (300-wide encoder).
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Export graph embeddings of one task's labeled molecules as CSV.
    #[command(after_help = schema_help())]
    Embed(EmbedArgs),
    /// Write a planted-motif synthetic dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 10)]
        tasks: usize,
        /// Molecules per task.
        #[arg(long, default_value_t = 300)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Options shared by every command that resolves a [`RunConfig`].
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file of `[section]` headers and `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base defaults: desk or paper.
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// Override one key, e.g. `--set meta.alpha=0.05`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Where the molecules come from.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV dataset.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate the synthetic tasks from the run seed instead.
    #[arg(long)]
    pub synthetic: bool,
    /// Comma-separated held-out task names (CSV datasets).
    #[arg(long)]
    pub test_tasks: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_bond_loss: bool,
    #[arg(long)]
    pub no_atom_loss: bool,
    #[arg(long)]
    pub no_attention: bool,
    /// Pooled gradient descent instead of episodic meta-learning.
    #[arg(long)]
    pub no_meta: bool,
    /// Start from this checkpoint instead of a random initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Loss-weight preset: default or eq9.
    #[arg(long)]
    pub loss_weights: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub k_shot: Option<usize>,
    /// Support sets drawn per task.
    #[arg(long)]
    pub resamples: Option<usize>,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Task whose labeled molecules are exported.
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed command with whatever it printed before failing.
#[derive(Debug)]
pub struct Failure {
    pub output: String,
    pub error: CliError,
}

impl From<CliError> for Failure {
    fn from(error: CliError) -> Self {
        Failure {
            output: String::new(),
            error,
        }
    }
}

pub fn execute(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Parse { smiles, file } => cmd_parse(smiles.as_deref(), file.as_deref()),
        Command::Train(args) => {
            let cfg = resolve(&args.config, |cfg| apply_train_flags(cfg, &args))?;
            with_threads(cfg.threads, || cmd_train(&cfg, &args)).map_err(Failure::from)
        }
        Command::Eval(args) => {
            let cfg = resolve(&args.config, |cfg| {
                if let Some(k) = args.k_shot {
                    cfg.meta.k_shot = k;
                }
                if let Some(r) = args.resamples {
                    cfg.resamples = r;
                }
                Ok(())
            })?;
            with_threads(cfg.threads, || cmd_eval(cfg.clone(), &args)).map_err(Failure::from)
        }
        Command::Gradcheck {
            scale,
            seed,
            threads,
        } => {
            let scale = GradcheckScale::parse(&scale)
                .ok_or_else(|| CliError::Usage(format!("unknown scale {scale:?} (desk, paper)")))?;
            with_threads(threads, || Ok(cmd_gradcheck(scale, seed)))?
        }
        Command::Embed(args) => {
            let cfg = resolve(&args.config, |_| Ok(()))?;
            with_threads(cfg.threads, || cmd_embed(cfg.clone(), &args)).map_err(Failure::from)
        }
        Command::Synth {
            tasks,
            size,
            seed,
            out,
        } => cmd_synth(tasks, size, seed, &out).map_err(Failure::from),
    }
}

/// Defaults, then the profile, the config file, `--set`, and finally the
/// command's own flags.
fn resolve(
    args: &ConfigArgs,
    flags: impl FnOnce(&mut RunConfig) -> Result<(), CliError>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::profile(&args.profile)?;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), strip_prefix(&e))))?;
    }
    for o in &args.overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set expects section.key=value, got {o:?}"))
        })?;
        cfg.set(key.trim(), value)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    flags(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn strip_prefix(e: &CliError) -> String {
    match e {
        CliError::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn apply_train_flags(cfg: &mut RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let a = &mut cfg.meta.ablation;
    a.use_bond_loss &= !args.no_bond_loss;
    a.use_atom_loss &= !args.no_atom_loss;
    a.use_task_attention &= !args.no_attention;
    a.use_meta &= !args.no_meta;
    if let Some(p) = &args.init {
        cfg.init = Some(p.clone());
    }
    if let Some(name) = &args.loss_weights {
        cfg.set_loss_preset(name)?;
    }
    Ok(())
}

/// Runs `f` on a pool of `threads` workers, or the global pool.
fn with_threads<R: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<R, CliError> + Send,
) -> Result<R, CliError> {
    match threads {
        None => f(),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

// ---- parse ----

/// `atoms: N, bonds: M, rings: R, aromatic: A, elements: C=2 O=1, bond types: single=1`
pub fn graph_summary(g: &MolecularGraph) -> String {
    let mut elements: BTreeMap<u8, usize> = BTreeMap::new();
    for a in g.atoms() {
        *elements.entry(a.atomic_number).or_default() += 1;
    }
    let mut bonds: BTreeMap<usize, (String, usize)> = BTreeMap::new();
    for b in g.bonds() {
        let e = bonds
            .entry(b.bond_type.index())
            .or_insert_with(|| (format!("{:?}", b.bond_type).to_lowercase(), 0));
        e.1 += 1;
    }
    let aromatic = g.atoms().iter().filter(|a| a.aromatic).count();
    let join = |parts: Vec<String>| {
        if parts.is_empty() {
            "-".to_string()
        } else {
            parts.join(" ")
        }
    };
    format!(
        "atoms: {}, bonds: {}, rings: {}, aromatic: {}, elements: {}, bond types: {}",
        g.atom_count(),
        g.bond_count(),
        g.cycle_rank(),
        aromatic,
        join(
            elements
                .iter()
                .map(|(z, n)| format!("{}={n}", symbol(*z).unwrap_or("?")))
                .collect()
        ),
        join(
            bonds
                .values()
                .map(|(name, n)| format!("{name}={n}"))
                .collect()
        ),
    )
}

fn cmd_parse(smiles: Option<&str>, file: Option<&Path>) -> Result<String, Failure> {
    if let Some(s) = smiles {
        return match parse(s) {
            Ok(g) => Ok(graph_summary(&g) + "\n"),
            Err(e) => Err(CliError::Data(e.to_string()).into()),
        };
    }
    let path = file.expect("clap requires smiles or --file");
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = String::new();
    let mut failed = 0;
    for line in text.lines() {
        match parse(line.trim()) {
            Ok(g) => writeln!(out, "{}\t{}", line.trim(), graph_summary(&g)),
            Err(e) => {
                failed += 1;
                writeln!(out, "{}\terror: {e}", line.trim())
            }
        }
        .expect("writing to a String");
    }
    if failed > 0 {
        return Err(Failure {
            output: out,
            error: CliError::Data(format!(
                "{failed} of {} lines failed to parse",
                text.lines().count()
            )),
        });
    }
    Ok(out)
}

// ---- data ----

struct LoadedData {
    dataset: MultiTaskDataset,
    train: Vec<usize>,
    test: Vec<usize>,
    /// Ingestion notes for the user.
    notes: String,
}

fn load_data(cfg: &RunConfig, args: &DataArgs) -> Result<LoadedData, CliError> {
    let mut test_names = cfg.test_tasks.clone();
    if let Some(names) = &args.test_tasks {
        test_names = names
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
    }
    if args.synthetic {
        // Seeded exactly like `synth`, so both see the same molecules.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dataset = generate_synthetic_with(&cfg.synthetic, &mut rng)?.dataset;
        let n = dataset.task_count();
        let (train, test) = if test_names.is_empty() {
            let held = cfg.synthetic_test_tasks;
            if held >= n {
                return Err(CliError::Config(format!(
                    "synthetic.test_tasks must be below {n}"
                )));
            }
            ((0..n - held).collect(), (n - held..n).collect())
        } else {
            let split = split_tasks(&dataset, &test_names)?;
            (split.train_task_ids, split.test_task_ids)
        };
        let notes = format!("synthetic: {} molecules, {n} tasks\n", dataset.len());
        return Ok(LoadedData {
            dataset,
            train,
            test,
            notes,
        });
    }
    let path = args
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("give --data <csv> or --synthetic".into()))?;
    let (dataset, report) = load_dataset(path, &cfg.load_options())?;
    let mut notes = format!(
        "loaded {}: {} rows, {} retained, {} unparseable, {} without labels, {} tasks\n",
        path.display(),
        report.rows,
        report.retained,
        report.failures.len(),
        report.all_missing,
        dataset.task_count()
    );
    for f in report.failures.iter().take(5) {
        let _ = writeln!(notes, "  line {}: {}", f.line, f.reason);
    }
    let (train, test) = if test_names.is_empty() {
        ((0..dataset.task_count()).collect(), Vec::new())
    } else {
        let split = split_tasks(&dataset, &test_names)?;
        (split.train_task_ids, split.test_task_ids)
    };
    Ok(LoadedData {
        dataset,
        train,
        test,
        notes,
    })
}

/// Loads a checkpoint and adopts the encoder settings stored in it.
fn load_model(cfg: &mut RunConfig, path: &Path) -> Result<ParameterSet<f64>, CliError> {
    let ckpt = load_checkpoint::<f64>(path)?;
    for (k, v) in &ckpt.config {
        if k.starts_with("encoder.") {
            cfg.set(k, v)?;
        }
    }
    ckpt.check_layout(&parameter_shapes(&cfg.meta.encoder))?;
    Ok(ckpt.params)
}

// ---- train ----

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<String, CliError> {
    let data = load_data(cfg, &args.data)?;
    let mut cfg = cfg.clone();
    let theta = match cfg.init.clone() {
        Some(path) => {
            cfg.meta.ablation.use_pretrained = true;
            load_model(&mut cfg, &path)?
        }
        None => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1);
            init_params::<f64, _>(&cfg.meta.encoder, &mut init_rng)
                .map_err(|e| CliError::Config(e.to_string()))?
        }
    };
    std::fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let config_path = args.out.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.resolved_text()).map_err(|e| io_error(&config_path, e))?;

    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x2);
    let (theta, log) = meta_train(theta, &data.dataset, &data.train, &cfg.meta, &mut train_rng)?;

    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&theta, &cfg.entries(), &ckpt_path)?;
    let log_path = args.out.join(LOG_FILE);
    let file = std::fs::File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
    log.write_tsv(std::io::BufWriter::new(file))
        .map_err(|e| io_error(&log_path, e))?;

    let mut out = data.notes;
    for w in &log.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let iterations = log.records.last().map_or(0, |r| r.iteration + 1);
    let _ = writeln!(
        out,
        "trained {} episodes over {iterations} iterations on {} tasks",
        log.records.len(),
        data.train.len()
    );
    if let Some(last) = log.records.last() {
        let tail: Vec<_> = log
            .records
            .iter()
            .filter(|r| r.iteration == last.iteration)
            .collect();
        let mean = tail.iter().map(|r| r.query.joint).sum::<f64>() / tail.len() as f64;
        let _ = writeln!(out, "final mean query loss {mean:.6}");
    }
    let _ = writeln!(
        out,
        "wrote {}, {} and {}",
        ckpt_path.display(),
        config_path.display(),
        log_path.display()
    );
    Ok(out)
}

// ---- eval ----

/// One row per task and a final `average` row.
pub fn eval_csv(rows: &[(String, f64, f64, usize)]) -> String {
    let mut out = String::from("task,mean_auc,std_auc,resamples\n");
    for (name, mean, std, n) in rows {
        let _ = writeln!(out, "{name},{mean:.6},{std:.6},{n}");
    }
    out
}

fn cmd_eval(mut cfg: RunConfig, args: &EvalArgs) -> Result<String, CliError> {
    let theta = load_model(&mut cfg, &args.checkpoint)?;
    cfg.validate()?;
    let data = load_data(&cfg, &args.data)?;
    if data.test.is_empty() {
        return Err(CliError::Usage(
            "no test tasks: give --test-tasks or data.test_tasks".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3);
    let aucs = evaluate_tasks(
        &theta,
        &data.dataset,
        &data.test,
        &cfg.meta,
        cfg.resamples,
        &mut rng,
    )?;

    let mut rows = Vec::new();
    for a in &aucs {
        let n = a.aucs.len() as f64;
        let var = a.aucs.iter().map(|x| (x - a.mean_auc).powi(2)).sum::<f64>() / n;
        rows.push((
            data.dataset.task_names()[a.task].clone(),
            a.mean_auc,
            var.sqrt(),
            a.aucs.len(),
        ));
    }
    let means: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    let spread = (means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / means.len() as f64).sqrt();
    rows.push(("average".into(), avg, spread, cfg.resamples));

    let csv = eval_csv(&rows);
    if let Some(path) = &args.csv {
        std::fs::write(path, &csv).map_err(|e| io_error(path, e))?;
    }
    let mut out = data.notes;
    let _ = writeln!(
        out,
        "{}-shot, {} support resamples per task",
        cfg.meta.k_shot, cfg.resamples
    );
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(4).max(4);
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", "task", "AUC", "std");
    for (i, (name, mean, std, _)) in rows.iter().enumerate() {
        if i + 1 == rows.len() {
            let _ = writeln!(out, "{}", "-".repeat(width + 20));
        }
        let _ = writeln!(out, "{name:<width$}  {mean:>8.4}  {std:>8.4}");
    }
    out.push('\n');
    out.push_str(&csv);
    Ok(out)
}

// ---- gradcheck ----

fn cmd_gradcheck(scale: GradcheckScale, seed: u64) -> Result<String, Failure> {
    let outcomes = run_gradcheck(scale, seed).map_err(CliError::from)?;
    let mut out = String::new();
    for o in &outcomes {
        let _ = writeln!(out, "{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    let _ = writeln!(out, "{} checks, {failed} failed", outcomes.len());
    if failed > 0 {
        return Err(Failure {
            output: out,
            error: CliError::CheckFailed(format!(
                "{failed} gradient checks exceeded their tolerance"
            )),
        });
    }
    Ok(out)
}

// ---- embed ----

fn cmd_embed(mut cfg: RunConfig, args: &EmbedArgs) -> Result<String, CliError> {
    let theta = load_model(&mut cfg, &args.checkpoint)?;
    let data = load_data(&cfg, &args.data)?;
    let task = data
        .dataset
        .task_index(&args.task)
        .ok_or_else(|| CliError::Data(format!("unknown task name {:?}", args.task)))?;
    let members: Vec<usize> = (0..data.dataset.len())
        .filter(|&i| data.dataset.label(i, task).is_some())
        .collect();
    let batch = GraphBatch::new(members.iter().map(|&i| &data.dataset.molecule(i).graph))
        .map_err(|e| CliError::Data(e.to_string()))?;
    let tape = Tape::new();
    let emb = set_embeddings(&theta.bind(&tape), &batch, &cfg.meta.encoder)?.value();
    let rows: Vec<EmbeddingRow> = members
        .iter()
        .enumerate()
        .map(|(r, &i)| EmbeddingRow {
            id: data.dataset.molecule(i).id.clone(),
            label: data.dataset.label(i, task),
            embedding: (0..emb.cols()).map(|c| emb.get(r, c)).collect(),
        })
        .collect();
    export_embeddings(&rows, &args.out)?;
    Ok(format!(
        "{}wrote {} embeddings of width {} to {}\n",
        data.notes,
        rows.len(),
        emb.cols(),
        args.out.display()
    ))
}

// ---- synth ----

fn cmd_synth(tasks: usize, size: usize, seed: u64, out: &Path) -> Result<String, CliError> {
    let cfg = molmeta::data::SyntheticConfig {
        n_tasks: tasks,
        molecules_per_task: size,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let synthetic = generate_synthetic_with(&cfg, &mut rng)?;
    let file = std::fs::File::create(out).map_err(|e| io_error(out, e))?;
    synthetic.dataset.write_csv(std::io::BufWriter::new(file))?;
    let mut text = format!(
        "wrote {} molecules, {tasks} tasks to {}\n",
        synthetic.dataset.len(),
        out.display()
    );
    for (name, m) in synthetic.dataset.task_names().iter().zip(&synthetic.motifs) {
        let _ = writeln!(text, "  {name}: motif {m}");
    }
    Ok(text)
}
