//! Run configuration: a `key = value` file with `[section]` headers, merged
//! over defaults and overridden by command-line flags.
//!
//! [`SCHEMA`] is the only list of keys. Parsing, the resolved-config echo and
//! the `--help` key reference are all generated from it.

use std::fmt::Write as _;
use std::path::PathBuf;

use molmeta::autodiff::MetaGradMode;
use molmeta::benchmark::BenchmarkConfig;
use molmeta::data::{LoadOptions, SyntheticConfig};
use molmeta::encoder::{Aggregator, EncoderConfig};
use molmeta::losses::LossWeights;
use molmeta::meta::MetaConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub meta: MetaConfig,
    pub seed: u64,
    /// Worker threads; `None` lets the thread pool decide.
    pub threads: Option<usize>,
    /// Checkpoint to start training from.
    pub init: Option<PathBuf>,
    /// Support resamples per task during evaluation.
    pub resamples: usize,
    pub smiles_column: String,
    /// `None` detects 0/1 columns automatically.
    pub task_columns: Option<Vec<String>>,
    pub id_column: Option<String>,
    /// Held-out task names of a CSV dataset.
    pub test_tasks: Vec<String>,
    pub synthetic: SyntheticConfig,
    /// Number of trailing synthetic tasks held out.
    pub synthetic_test_tasks: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = BenchmarkConfig::default();
        RunConfig {
            meta: MetaConfig::default(),
            seed: 0,
            threads: None,
            init: None,
            resamples: 20,
            smiles_column: LoadOptions::default().smiles_column,
            task_columns: None,
            id_column: None,
            test_tasks: Vec::new(),
            synthetic: bench.synthetic,
            synthetic_test_tasks: bench.test_tasks,
        }
    }
}

/// One configurable key.
pub struct Key {
    pub section: &'static str,
    pub name: &'static str,
    pub help: &'static str,
    set: fn(&mut RunConfig, &str) -> Result<(), String>,
    get: fn(&RunConfig) -> String,
}

impl Key {
    pub fn path(&self) -> String {
        format!("{}.{}", self.section, self.name)
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("cannot parse {v:?} as a number"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn show_f64(x: f64) -> String {
    format!("{x:?}")
}

macro_rules! key {
    ($section:literal, $name:literal, $help:literal, |$c:ident, $v:ident| $set:expr, |$g:ident| $get:expr) => {
        Key {
            section: $section,
            name: $name,
            help: $help,
            set: |$c, $v| {
                $set;
                Ok(())
            },
            get: |$g| $get,
        }
    };
}

pub static SCHEMA: &[Key] = &[
    key!(
        "encoder",
        "num_layers",
        "message-passing layers",
        |c, v| c.meta.encoder.num_layers = num(v)?,
        |c| c.meta.encoder.num_layers.to_string()
    ),
    key!(
        "encoder",
        "hidden_dim",
        "node and graph embedding width (even)",
        |c, v| c.meta.encoder.hidden_dim = num(v)?,
        |c| c.meta.encoder.hidden_dim.to_string()
    ),
    key!(
        "encoder",
        "leaky_slope",
        "negative slope of the leaky ReLU",
        |c, v| c.meta.encoder.leaky_slope = num(v)?,
        |c| show_f64(c.meta.encoder.leaky_slope)
    ),
    key!(
        "encoder",
        "aggregator",
        "neighbor aggregation: paper-concat (mean) or gin-sum",
        |c, v| c.meta.encoder.aggregator =
            Aggregator::parse(v).ok_or(format!("unknown aggregator {v:?}"))?,
        |c| c.meta.encoder.aggregator.name().to_string()
    ),
    key!(
        "meta",
        "alpha",
        "inner-loop step size",
        |c, v| c.meta.alpha = num(v)?,
        |c| show_f64(c.meta.alpha)
    ),
    key!(
        "meta",
        "beta",
        "outer-loop step size",
        |c, v| c.meta.beta = num(v)?,
        |c| show_f64(c.meta.beta)
    ),
    key!(
        "meta",
        "inner_steps_train",
        "adaptation steps per training episode",
        |c, v| c.meta.inner_steps_train = num(v)?,
        |c| c.meta.inner_steps_train.to_string()
    ),
    key!(
        "meta",
        "inner_steps_test",
        "adaptation steps at evaluation",
        |c, v| c.meta.inner_steps_test = num(v)?,
        |c| c.meta.inner_steps_test.to_string()
    ),
    key!(
        "meta",
        "k_shot",
        "support molecules per class",
        |c, v| c.meta.k_shot = num(v)?,
        |c| c.meta.k_shot.to_string()
    ),
    key!(
        "meta",
        "query_size_per_class",
        "training query molecules per class",
        |c, v| c.meta.query_size_per_class = num(v)?,
        |c| c.meta.query_size_per_class.to_string()
    ),
    key!(
        "meta",
        "tasks_per_batch",
        "tasks per outer step, or all",
        |c, v| c.meta.tasks_per_batch = if v == "all" { None } else { Some(num(v)?) },
        |c| c
            .meta
            .tasks_per_batch
            .map_or("all".into(), |n| n.to_string())
    ),
    key!(
        "meta",
        "episodes",
        "training budget in task episodes",
        |c, v| c.meta.episodes = num(v)?,
        |c| c.meta.episodes.to_string()
    ),
    key!(
        "meta",
        "meta_grad_mode",
        "first-order or second-order",
        |c, v| c.meta.meta_grad_mode =
            MetaGradMode::parse(v).ok_or(format!("unknown mode {v:?}"))?,
        |c| c.meta.meta_grad_mode.name().to_string()
    ),
    key!(
        "ablation",
        "use_meta",
        "episodic meta-learning; false trains by pooled gradient descent",
        |c, v| c.meta.ablation.use_meta = boolean(v)?,
        |c| c.meta.ablation.use_meta.to_string()
    ),
    key!(
        "ablation",
        "use_bond_loss",
        "bond-reconstruction loss",
        |c, v| c.meta.ablation.use_bond_loss = boolean(v)?,
        |c| c.meta.ablation.use_bond_loss.to_string()
    ),
    key!(
        "ablation",
        "use_atom_loss",
        "masked atom-type loss",
        |c, v| c.meta.ablation.use_atom_loss = boolean(v)?,
        |c| c.meta.ablation.use_atom_loss.to_string()
    ),
    key!(
        "ablation",
        "use_task_attention",
        "attention weights over the task batch",
        |c, v| c.meta.ablation.use_task_attention = boolean(v)?,
        |c| c.meta.ablation.use_task_attention.to_string()
    ),
    key!(
        "loss",
        "w_label",
        "weight of the property loss",
        |c, v| c.meta.loss_weights.w_label = num(v)?,
        |c| show_f64(c.meta.loss_weights.w_label)
    ),
    key!(
        "loss",
        "w_edge",
        "weight of the bond loss",
        |c, v| c.meta.loss_weights.w_edge = num(v)?,
        |c| show_f64(c.meta.loss_weights.w_edge)
    ),
    key!(
        "loss",
        "w_node",
        "weight of the atom-type loss",
        |c, v| c.meta.loss_weights.w_node = num(v)?,
        |c| show_f64(c.meta.loss_weights.w_node)
    ),
    key!(
        "sampling",
        "bond_positives",
        "bonded pairs sampled per molecule",
        |c, v| c.meta.sampling.bond_positives = num(v)?,
        |c| c.meta.sampling.bond_positives.to_string()
    ),
    key!(
        "sampling",
        "bond_negatives",
        "unbonded pairs sampled per molecule",
        |c, v| c.meta.sampling.bond_negatives = num(v)?,
        |c| c.meta.sampling.bond_negatives.to_string()
    ),
    key!(
        "sampling",
        "context_fraction",
        "fraction of atoms masked for the atom-type loss",
        |c, v| c.meta.sampling.context_fraction = num(v)?,
        |c| show_f64(c.meta.sampling.context_fraction)
    ),
    key!(
        "sampling",
        "context_hops",
        "radius of each masked atom's context",
        |c, v| c.meta.sampling.context_hops = num(v)?,
        |c| c.meta.sampling.context_hops.to_string()
    ),
    key!(
        "data",
        "smiles_column",
        "CSV column holding SMILES",
        |c, v| c.smiles_column = v.to_string(),
        |c| c.smiles_column.clone()
    ),
    key!(
        "data",
        "task_columns",
        "comma-separated task columns, or auto",
        |c, v| c.task_columns = if v == "auto" { None } else { Some(list(v)) },
        |c| c
            .task_columns
            .as_ref()
            .map_or("auto".into(), |t| t.join(","))
    ),
    key!(
        "data",
        "id_column",
        "CSV column of molecule ids, or auto",
        |c, v| c.id_column = if v == "auto" {
            None
        } else {
            Some(v.to_string())
        },
        |c| c.id_column.clone().unwrap_or("auto".into())
    ),
    key!(
        "data",
        "test_tasks",
        "comma-separated held-out task names",
        |c, v| c.test_tasks = list(v),
        |c| c.test_tasks.join(",")
    ),
    key!(
        "synthetic",
        "n_tasks",
        "planted-motif tasks to generate",
        |c, v| c.synthetic.n_tasks = num(v)?,
        |c| c.synthetic.n_tasks.to_string()
    ),
    key!(
        "synthetic",
        "molecules_per_task",
        "molecules generated per task",
        |c, v| c.synthetic.molecules_per_task = num(v)?,
        |c| c.synthetic.molecules_per_task.to_string()
    ),
    key!(
        "synthetic",
        "min_atoms",
        "smallest generated molecule",
        |c, v| c.synthetic.min_atoms = num(v)?,
        |c| c.synthetic.min_atoms.to_string()
    ),
    key!(
        "synthetic",
        "max_atoms",
        "largest generated molecule",
        |c, v| c.synthetic.max_atoms = num(v)?,
        |c| c.synthetic.max_atoms.to_string()
    ),
    key!(
        "synthetic",
        "test_tasks",
        "trailing tasks held out for evaluation",
        |c, v| c.synthetic_test_tasks = num(v)?,
        |c| c.synthetic_test_tasks.to_string()
    ),
    key!(
        "run",
        "seed",
        "master random seed",
        |c, v| c.seed = num(v)?,
        |c| c.seed.to_string()
    ),
    key!(
        "run",
        "threads",
        "worker threads, or auto",
        |c, v| c.threads = if v == "auto" { None } else { Some(num(v)?) },
        |c| c.threads.map_or("auto".into(), |n| n.to_string())
    ),
    key!(
        "run",
        "init",
        "checkpoint to start training from, or none",
        |c, v| c.init = if v == "none" {
            None
        } else {
            Some(PathBuf::from(v))
        },
        |c| c
            .init
            .as_ref()
            .map_or("none".into(), |p| p.display().to_string())
    ),
    key!(
        "eval",
        "resamples",
        "support sets drawn per evaluated task",
        |c, v| c.resamples = num(v)?,
        |c| c.resamples.to_string()
    ),
];

fn find(section: &str, name: &str) -> Option<&'static Key> {
    SCHEMA
        .iter()
        .find(|k| k.section == section && k.name == name)
}

impl RunConfig {
    /// Defaults of the named profile: `desk` or `paper` (300-wide encoder).
    pub fn profile(name: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        match name {
            "desk" => {}
            "paper" => cfg.meta.encoder = EncoderConfig::paper(),
            _ => {
                return Err(CliError::Config(format!(
                    "unknown profile {name:?} (desk, paper)"
                )))
            }
        }
        Ok(cfg)
    }

    /// Sets `section.key` to `value`.
    pub fn set(&mut self, path: &str, value: &str) -> Result<(), CliError> {
        let (section, name) = path
            .split_once('.')
            .ok_or_else(|| CliError::Config(format!("expected section.key, got {path:?}")))?;
        let key = find(section, name)
            .ok_or_else(|| CliError::Config(format!("unknown config key {path}")))?;
        (key.set)(self, value.trim()).map_err(|e| CliError::Config(format!("{path}: {e}")))
    }

    pub fn get(&self, path: &str) -> Option<String> {
        let (section, name) = path.split_once('.')?;
        find(section, name).map(|k| (k.get)(self))
    }

    /// Applies a config file's contents. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::Config(format!("line {}: {msg}", n + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|k| k.section == name) {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| at("key outside of a [section]".into()))?;
            self.set(&format!("{sec}.{}", key.trim()), value)
                .map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    /// Every key with its resolved value, in schema order; [`Self::apply_text`]
    /// reads it back to the same configuration.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for k in SCHEMA {
            if k.section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", k.section);
                current = k.section;
            }
            let _ = writeln!(out, "{} = {}", k.name, (k.get)(self));
        }
        out
    }

    /// `(section.key, value)` pairs for checkpoint manifests. The thread count
    /// is left out: it never changes results, and checkpoints must not differ
    /// between thread settings.
    pub fn entries(&self) -> Vec<(String, String)> {
        SCHEMA
            .iter()
            .filter(|k| k.path() != "run.threads")
            .map(|k| (k.path(), (k.get)(self)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.meta
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.resamples == 0 {
            return Err(CliError::Config("eval.resamples must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("run.threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            smiles_column: self.smiles_column.clone(),
            task_columns: self.task_columns.clone(),
            id_column: self.id_column.clone(),
        }
    }

    /// Loss weights from a preset name (`default`, `eq9`).
    pub fn set_loss_preset(&mut self, name: &str) -> Result<(), CliError> {
        self.meta.loss_weights = LossWeights::preset(name)
            .ok_or_else(|| CliError::Config(format!("unknown loss-weight preset {name:?}")))?;
        Ok(())
    }
}

/// The key reference printed by `--help`.
pub fn schema_help() -> String {
    let defaults = RunConfig::default();
    let mut out = String::from("Config keys (file sections, or --set section.key=value):\n");
    for k in SCHEMA {
        let _ = writeln!(
            out,
            "  {:<32} {} [default: {}]",
            k.path(),
            k.help,
            (k.get)(&defaults)
        );
    }
    out
}
