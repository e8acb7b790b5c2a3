use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{MetaGradMode, ParameterSet, Tape, Tensor, Var};
use crate::data::{build_episode, Episode, MultiTaskDataset, QuerySize};
use crate::encoder::{GraphBatch, ATTENTION_WEIGHT};
use crate::losses::LossBreakdown;
use crate::meta::objective::{positive_probabilities, set_embeddings, set_forward, PreparedSet};
use crate::meta::{MetaConfig, MetaError, Objective, TaskRecord, TrainingLog};
use crate::metrics::{roc_auc, ScoredSet};
use crate::scalar::Scalar;

/// `steps` gradient-descent steps `θ ← θ − α∇L_support(θ)` on a copy of `theta`.
///
/// Returns the adapted parameters and the support losses seen before each
/// step. `alpha == 0` or `steps == 0` returns an exact copy.
pub fn inner_update<T: Scalar>(
    theta: &ParameterSet<T>,
    support: &PreparedSet,
    objective: &Objective,
    alpha: T,
    steps: usize,
) -> Result<(ParameterSet<T>, Vec<LossBreakdown<T>>), MetaError> {
    if support.is_empty() {
        return Err(MetaError::EmptySupport);
    }
    let mut current = theta.clone();
    let mut losses = Vec::with_capacity(steps);
    if alpha == T::zero() {
        return Ok((current, losses));
    }
    for _ in 0..steps {
        let tape = Tape::new();
        let bound = current.bind(&tape);
        let fwd = set_forward(&bound, support, objective)?;
        losses.push(fwd.breakdown);
        let grads = bound.gradients(&tape.backward(fwd.joint)?);
        current = current.descended(&grads, alpha);
    }
    Ok((current, losses))
}

/// `H_τ`: mean of the support-set graph embeddings (`k × d` to `1 × d`).
pub fn task_embedding<'t, T: Scalar>(
    support_embeddings: Var<'t, T>,
) -> Result<Var<'t, T>, MetaError> {
    if support_embeddings.shape()[0] == 0 {
        return Err(MetaError::EmptySupport);
    }
    Ok(support_embeddings.mean(0)?)
}

/// Softmax of the attention scores `w · H_τ` over the rows of `task_embeddings`.
pub fn task_attention<T: Scalar>(
    task_embeddings: &Tensor<T>,
    attention_w: &Tensor<T>,
) -> Result<Vec<T>, MetaError> {
    if task_embeddings.rows() == 0 {
        return Err(MetaError::EmptyBatch);
    }
    let tape = Tape::new();
    let h = tape.constant(task_embeddings.clone());
    let w = tape.constant(attention_w.clone());
    let logits = h.matmul_nt(w)?.value();
    Ok(attention_weights(logits.data()))
}

/// Numerically stable softmax of attention logits.
pub fn attention_weights<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One task's contribution to an outer update.
#[derive(Debug, Clone)]
pub struct TaskResult<T> {
    pub task: usize,
    /// `∇θ L'_τ`: at the adapted parameters in first-order mode, through the
    /// inner steps in second-order mode.
    pub query_grad: ParameterSet<T>,
    pub query: LossBreakdown<T>,
    /// Attention score `s_τ = w · H_τ` (0 when attention is off).
    pub logit: T,
    /// `∇θ s_τ`, second-order mode with attention only.
    pub logit_grad: Option<ParameterSet<T>>,
    pub support_size: usize,
    pub query_size: usize,
}

/// Adapts to one episode and differentiates its query loss.
pub fn run_task<T: Scalar>(
    theta: &ParameterSet<T>,
    data: &MultiTaskDataset,
    episode: &Episode,
    cfg: &MetaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TaskResult<T>, MetaError> {
    let objective = cfg.objective();
    let support = PreparedSet::new(data, &episode.support, &objective, rng)?;
    let query = PreparedSet::new(data, &episode.query, &objective, rng)?;
    let alpha = T::lit(cfg.alpha);
    let attention = cfg.ablation.use_task_attention;
    let mut result = TaskResult {
        task: episode.task_id,
        query_grad: ParameterSet::new(),
        query: LossBreakdown::default(),
        logit: T::zero(),
        logit_grad: None,
        support_size: support.len(),
        query_size: query.len(),
    };

    match cfg.meta_grad_mode {
        MetaGradMode::FirstOrder => {
            if attention {
                let tape = Tape::new();
                let bound = theta.bind(&tape);
                let h =
                    task_embedding(set_embeddings(&bound, &support.batch, &objective.encoder)?)?;
                result.logit = h.matmul_nt(bound.get(ATTENTION_WEIGHT)?)?.item();
            }
            let (adapted, _) =
                inner_update(theta, &support, &objective, alpha, cfg.inner_steps_train)?;
            let tape = Tape::new();
            let bound = adapted.bind(&tape);
            let fwd = set_forward(&bound, &query, &objective)?;
            result.query = fwd.breakdown;
            result.query_grad = bound.gradients(&tape.backward(fwd.joint)?);
        }
        MetaGradMode::SecondOrder => {
            let tape = Tape::new();
            let bound = theta.bind(&tape);
            let logit = if attention {
                let h =
                    task_embedding(set_embeddings(&bound, &support.batch, &objective.encoder)?)?;
                Some(h.matmul_nt(bound.get(ATTENTION_WEIGHT)?)?)
            } else {
                None
            };
            let mut adapted = bound.clone();
            for _ in 0..cfg.inner_steps_train {
                if alpha == T::zero() {
                    break;
                }
                let fwd = set_forward(&adapted, &support, &objective)?;
                let vars: Vec<_> = adapted.vars().collect();
                let grads = tape.grad_graph(fwd.joint, &vars)?;
                let stepped = vars
                    .iter()
                    .zip(grads)
                    .map(|(&p, g)| p.sub(g.scale(alpha)?))
                    .collect::<Result<Vec<_>, _>>()?;
                adapted = adapted.with_vars(stepped);
            }
            let fwd = set_forward(&adapted, &query, &objective)?;
            result.query = fwd.breakdown;
            result.query_grad = bound.gradients(&tape.backward(fwd.joint)?);
            if let Some(s) = logit {
                result.logit = s.item();
                result.logit_grad = Some(bound.gradients(&tape.backward(s)?));
            }
        }
    }
    Ok(result)
}

/// `θ − β ∇θ Σ_τ η_τ L'_τ`.
///
/// The weights `eta` are constants for the query-gradient part. When a task
/// carries `logit_grad`, the weights' own dependence on `θ` is added:
/// `∇θ Σ η_τ L'_τ = Σ η_τ ∇L'_τ + Σ η_τ (L'_τ − J) ∇s_τ` with `J = Σ η_τ L'_τ`.
pub fn outer_update<T: Scalar>(
    theta: &ParameterSet<T>,
    results: &[TaskResult<T>],
    eta: &[T],
    beta: T,
) -> ParameterSet<T> {
    let mut grad = theta.zeros_like();
    for (r, &e) in results.iter().zip(eta) {
        grad.axpy(e, &r.query_grad);
    }
    let j: T = results
        .iter()
        .zip(eta)
        .map(|(r, &e)| e * r.query.joint)
        .sum();
    for (r, &e) in results.iter().zip(eta) {
        if let Some(lg) = &r.logit_grad {
            grad.axpy(e * (r.query.joint - j), lg);
        }
    }
    theta.descended(&grad, beta)
}

fn usable_tasks(
    data: &MultiTaskDataset,
    tasks: &[usize],
    k_shot: usize,
    log: &mut TrainingLog,
) -> Vec<usize> {
    tasks
        .iter()
        .copied()
        .filter(|&t| {
            let counts = [true, false].map(|c| data.class_members(t, c).len());
            let ok = counts.iter().all(|&n| n > k_shot);
            if !ok {
                log.warnings.push(format!(
                    "task {} excluded: {} positives, {} negatives, needs {} of each",
                    data.task_names()[t],
                    counts[0],
                    counts[1],
                    k_shot + 1
                ));
            }
            ok
        })
        .collect()
}

/// Episodic training until `cfg.episodes` task episodes have been used.
///
/// With `use_meta` off, each iteration instead takes one plain gradient step
/// of size `β` on the mean joint loss of the batch's pooled support and query
/// molecules.
pub fn meta_train<T: Scalar>(
    theta: ParameterSet<T>,
    data: &MultiTaskDataset,
    train_tasks: &[usize],
    cfg: &MetaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ParameterSet<T>, TrainingLog), MetaError> {
    cfg.validate()?;
    let mut log = TrainingLog::default();
    let tasks = usable_tasks(data, train_tasks, cfg.k_shot, &mut log);
    if tasks.len() < 2 {
        return Err(MetaError::TooFewTasks(tasks.len()));
    }
    let batch_size = cfg.tasks_per_batch.unwrap_or(tasks.len()).min(tasks.len());
    let beta = T::lit(cfg.beta);
    let mut theta = theta;
    let mut used = 0;
    let mut iteration = 0;
    while used < cfg.episodes {
        let n = batch_size.min(cfg.episodes - used);
        let chosen: Vec<usize> = index::sample(rng, tasks.len(), n)
            .into_iter()
            .map(|i| tasks[i])
            .collect();
        let seeds: Vec<u64> = chosen.iter().map(|_| rng.gen()).collect();
        let snapshot = &theta;
        let results: Vec<TaskResult<T>> = chosen
            .par_iter()
            .zip(&seeds)
            .map(|(&task, &seed)| {
                let mut task_rng = ChaCha8Rng::seed_from_u64(seed);
                let episode = build_episode(
                    data,
                    task,
                    cfg.k_shot,
                    QuerySize::PerClass(cfg.query_size_per_class),
                    &mut task_rng,
                )?;
                if cfg.ablation.use_meta {
                    run_task(snapshot, data, &episode, cfg, &mut task_rng)
                } else {
                    pooled_task(snapshot, data, &episode, cfg, &mut task_rng)
                }
            })
            .collect::<Result<_, _>>()?;

        if results.iter().any(|r| !r.query.joint.is_finite()) {
            return Err(MetaError::Diverged(iteration));
        }
        let eta: Vec<T> = if cfg.ablation.use_meta && cfg.ablation.use_task_attention {
            attention_weights(&results.iter().map(|r| r.logit).collect::<Vec<_>>())
        } else {
            vec![T::one() / T::lit(results.len() as f64); results.len()]
        };
        theta = outer_update(&theta, &results, &eta, beta);
        for (r, e) in results.iter().zip(&eta) {
            log.records.push(TaskRecord {
                iteration,
                task: r.task,
                eta: e.to_f64_lossy(),
                query: breakdown_f64(&r.query),
                support_size: r.support_size,
                query_size: r.query_size,
            });
        }
        used += n;
        iteration += 1;
    }
    Ok((theta, log))
}

fn pooled_task<T: Scalar>(
    theta: &ParameterSet<T>,
    data: &MultiTaskDataset,
    episode: &Episode,
    cfg: &MetaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TaskResult<T>, MetaError> {
    let objective = cfg.objective();
    let examples: Vec<_> = episode
        .support
        .iter()
        .chain(&episode.query)
        .copied()
        .collect();
    let set = PreparedSet::new(data, &examples, &objective, rng)?;
    let tape = Tape::new();
    let bound = theta.bind(&tape);
    let fwd = set_forward(&bound, &set, &objective)?;
    Ok(TaskResult {
        task: episode.task_id,
        query_grad: bound.gradients(&tape.backward(fwd.joint)?),
        query: fwd.breakdown,
        logit: T::zero(),
        logit_grad: None,
        support_size: 0,
        query_size: set.len(),
    })
}

fn breakdown_f64<T: Scalar>(b: &LossBreakdown<T>) -> LossBreakdown<f64> {
    LossBreakdown {
        l_label: b.l_label.to_f64_lossy(),
        l_edge: b.l_edge.to_f64_lossy(),
        l_node: b.l_node.to_f64_lossy(),
        joint: b.joint.to_f64_lossy(),
        counts: b.counts,
    }
}

/// Adapts to each episode's support set with `inner_steps_test` steps and
/// scores every query molecule's positive-class probability. `theta` itself
/// is never modified.
pub fn meta_test<T: Scalar>(
    theta: &ParameterSet<T>,
    data: &MultiTaskDataset,
    episodes: &[Episode],
    cfg: &MetaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ScoredSet>, MetaError> {
    let objective = cfg.objective();
    let seeds: Vec<u64> = episodes.iter().map(|_| rng.gen()).collect();
    episodes
        .par_iter()
        .zip(&seeds)
        .map(|(episode, &seed)| {
            let mut task_rng = ChaCha8Rng::seed_from_u64(seed);
            let support = PreparedSet::new(data, &episode.support, &objective, &mut task_rng)?;
            let (adapted, _) = inner_update(
                theta,
                &support,
                &objective,
                T::lit(cfg.alpha),
                cfg.inner_steps_test,
            )?;
            let batch = GraphBatch::new(
                episode
                    .query
                    .iter()
                    .map(|e| &data.molecule(e.molecule).graph),
            )?;
            let scores = positive_probabilities(&adapted, &batch, &objective.encoder)?;
            let labels = episode.query.iter().map(|e| e.label).collect();
            Ok(ScoredSet::new(scores, labels)?)
        })
        .collect()
}

/// Mean test AUC of one task over resampled support sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskAuc {
    pub task: usize,
    pub mean_auc: f64,
    pub aucs: Vec<f64>,
}

/// `resamples` episodes per task (support of `k_shot` per class, query = the
/// rest of the task), each adapted and scored by [`meta_test`].
pub fn evaluate_tasks<T: Scalar>(
    theta: &ParameterSet<T>,
    data: &MultiTaskDataset,
    tasks: &[usize],
    cfg: &MetaConfig,
    resamples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TaskAuc>, MetaError> {
    let mut episodes = Vec::with_capacity(tasks.len() * resamples);
    for &t in tasks {
        for _ in 0..resamples {
            episodes.push(build_episode(data, t, cfg.k_shot, QuerySize::Rest, rng)?);
        }
    }
    let scored = meta_test(theta, data, &episodes, cfg, rng)?;
    tasks
        .iter()
        .enumerate()
        .map(|(i, &task)| {
            let aucs = scored[i * resamples..(i + 1) * resamples]
                .iter()
                .map(roc_auc)
                .collect::<Result<Vec<_>, _>>()?;
            let mean_auc = aucs.iter().sum::<f64>() / aucs.len().max(1) as f64;
            Ok(TaskAuc {
                task,
                mean_auc,
                aucs,
            })
        })
        .collect()
}
