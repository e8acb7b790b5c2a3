use rand::seq::index;
use rand::Rng;

use crate::data::{DataError, MultiTaskDataset};

/// One labeled molecule of an episode, by dataset index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Example {
    pub molecule: usize,
    pub label: bool,
}

/// A task's support and query sets. The two never share a molecule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub task_id: usize,
    pub support: Vec<Example>,
    pub query: Vec<Example>,
}

/// How the query set is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySize {
    /// Up to this many molecules of each class.
    PerClass(usize),
    /// Every labeled molecule of the task not in the support set.
    Rest,
}

/// Samples `k_shot` positives and `k_shot` negatives as support, then a disjoint query.
///
/// Support lists positives first; query molecules keep dataset order under
/// [`QuerySize::Rest`] and sampled order otherwise.
pub fn build_episode<R: Rng + ?Sized>(
    dataset: &MultiTaskDataset,
    task: usize,
    k_shot: usize,
    query: QuerySize,
    rng: &mut R,
) -> Result<Episode, DataError> {
    if task >= dataset.task_count() {
        return Err(DataError::UnknownTaskId(task));
    }
    if k_shot == 0 {
        return Err(DataError::Malformed("k_shot must be at least 1".into()));
    }
    let mut support = Vec::with_capacity(2 * k_shot);
    let mut sampled_query = Vec::new();
    for class in [true, false] {
        let members = dataset.class_members(task, class);
        if members.len() < k_shot + 1 {
            return Err(DataError::InsufficientClassData {
                task: dataset.task_names()[task].clone(),
                class: class as u8,
                available: members.len(),
                needed: k_shot + 1,
            });
        }
        let take = match query {
            QuerySize::PerClass(q) => (k_shot + q).min(members.len()),
            QuerySize::Rest => k_shot,
        };
        let picked: Vec<usize> = index::sample(rng, members.len(), take)
            .into_iter()
            .map(|i| members[i])
            .collect();
        let (s, q) = picked.split_at(k_shot);
        support.extend(s.iter().map(|&molecule| Example {
            molecule,
            label: class,
        }));
        sampled_query.extend(q.iter().map(|&molecule| Example {
            molecule,
            label: class,
        }));
    }
    let query = match query {
        QuerySize::PerClass(_) => sampled_query,
        QuerySize::Rest => {
            let chosen: Vec<usize> = support.iter().map(|e| e.molecule).collect();
            (0..dataset.len())
                .filter_map(|m| {
                    let label = dataset.label(m, task)?;
                    (!chosen.contains(&m)).then_some(Example { molecule: m, label })
                })
                .collect()
        }
    };
    Ok(Episode {
        task_id: task,
        support,
        query,
    })
}
