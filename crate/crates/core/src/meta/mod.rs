//! Episodic meta-training and meta-testing.
//!
//! Each training iteration samples a batch of tasks, adapts a copy of the
//! shared parameters to every task's support set with a few gradient steps,
//! evaluates the joint loss of the adapted copy on the task's query set, and
//! moves the shared parameters along the attention-weighted sum of those
//! query-loss gradients.
//!
//! Per-task work runs in parallel on private tapes. Every random draw a task
//! needs comes from a seed taken off the master stream before the parallel
//! section, and gradients are reduced in task order, so results do not depend
//! on the thread count.

mod engine;
mod objective;

pub use engine::{
    attention_weights, evaluate_tasks, inner_update, meta_test, meta_train, outer_update, run_task,
    task_attention, task_embedding, TaskAuc, TaskResult,
};
pub use objective::{
    positive_probabilities, set_embeddings, set_forward, Objective, PreparedSet,
    SelfSupervisedConfig, SetForward,
};

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::autodiff::{AutodiffError, MetaGradMode};
use crate::data::DataError;
use crate::encoder::{EncoderConfig, EncoderError};
use crate::losses::{LossBreakdown, LossError, LossWeights};
use crate::metrics::MetricsError;
use crate::molgraph::MolGraphError;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    MolGraph(#[from] MolGraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("empty support set")]
    EmptySupport,
    #[error("attention over an empty task batch")]
    EmptyBatch,
    #[error("only {0} usable training tasks, need at least 2")]
    TooFewTasks(usize),
    #[error("invalid meta config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {0}")]
    Diverged(usize),
}

/// Component switches of the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    /// Start from a loaded checkpoint instead of random initialization.
    pub use_pretrained: bool,
    /// Episodic inner/outer training; off means pooled gradient descent.
    pub use_meta: bool,
    pub use_bond_loss: bool,
    pub use_atom_loss: bool,
    pub use_task_attention: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_pretrained: false,
            use_meta: true,
            use_bond_loss: true,
            use_atom_loss: true,
            use_task_attention: true,
        }
    }
}

impl AblationFlags {
    /// Variants `M1`–`M8`; `M2` is the only one without pretraining.
    pub fn variant(name: &str) -> Option<Self> {
        let (pre, meta, bond, atom, att) = match name.to_ascii_uppercase().as_str() {
            "M1" => (true, false, false, false, false),
            "M2" => (false, true, false, false, false),
            "M3" => (true, true, false, false, false),
            "M4" => (true, true, true, false, false),
            "M5" => (true, true, false, true, false),
            "M6" => (true, true, true, true, false),
            "M7" => (true, true, false, false, true),
            "M8" => (true, true, true, true, true),
            _ => return None,
        };
        Some(AblationFlags {
            use_pretrained: pre,
            use_meta: meta,
            use_bond_loss: bond,
            use_atom_loss: atom,
            use_task_attention: att,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub inner_steps_train: usize,
    pub inner_steps_test: usize,
    pub k_shot: usize,
    pub query_size_per_class: usize,
    /// `None` uses every training task in each batch.
    pub tasks_per_batch: Option<usize>,
    /// Training budget in task episodes.
    pub episodes: usize,
    pub meta_grad_mode: MetaGradMode,
    pub ablation: AblationFlags,
    pub loss_weights: LossWeights,
    pub sampling: SelfSupervisedConfig,
    pub encoder: EncoderConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha: 0.1,
            beta: 1e-3,
            inner_steps_train: 5,
            inner_steps_test: 10,
            k_shot: 1,
            query_size_per_class: 16,
            tasks_per_batch: None,
            episodes: 2000,
            meta_grad_mode: MetaGradMode::FirstOrder,
            ablation: AblationFlags::default(),
            loss_weights: LossWeights::default(),
            sampling: SelfSupervisedConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |m: String| Err(MetaError::InvalidConfig(m));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.inner_steps_train == 0 || self.inner_steps_test == 0 {
            return bad("inner step counts must be at least 1".into());
        }
        if self.k_shot == 0 {
            return bad("k_shot must be at least 1".into());
        }
        if self.query_size_per_class == 0 {
            return bad("query_size_per_class must be at least 1".into());
        }
        if self.tasks_per_batch == Some(0) {
            return bad("tasks_per_batch must be at least 1".into());
        }
        let s = &self.sampling;
        if !(s.context_fraction > 0.0 && s.context_fraction <= 1.0) || s.context_hops == 0 {
            return bad("context sampling needs fraction in (0, 1] and hops >= 1".into());
        }
        self.loss_weights.validate()?;
        self.encoder.validate()?;
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            encoder: self.encoder,
            weights: self.loss_weights,
            use_bond_loss: self.ablation.use_bond_loss,
            use_atom_loss: self.ablation.use_atom_loss,
            sampling: self.sampling,
        }
    }
}

/// One task's share of one training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub iteration: usize,
    pub task: usize,
    pub eta: f64,
    /// Query-set losses under the adapted parameters (pooled set without meta-learning).
    pub query: LossBreakdown<f64>,
    pub support_size: usize,
    pub query_size: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub records: Vec<TaskRecord>,
    pub warnings: Vec<String>,
}

impl TrainingLog {
    pub const HEADER: &'static str =
        "iteration\ttask\teta\tjoint\tl_label\tl_edge\tl_node\tn_labels\tn_bond_pairs\tn_contexts\tsupport\tquery";

    /// Tab-separated, one line per task per iteration, with [`Self::HEADER`] first.
    /// Floats are written in shortest round-trip form.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for r in &self.records {
            writeln!(out, "{r}")?;
        }
        out.flush()
    }
}

impl fmt::Display for TaskRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = &self.query;
        write!(
            f,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{}\t{}\t{}\t{}\t{}",
            self.iteration,
            self.task,
            self.eta,
            q.joint,
            q.l_label,
            q.l_edge,
            q.l_node,
            q.counts.labels,
            q.counts.bond_pairs,
            q.counts.contexts,
            self.support_size,
            self.query_size
        )
    }
}
