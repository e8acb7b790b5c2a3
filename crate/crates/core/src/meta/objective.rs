//! The per-set joint loss: property labels plus sampled self-supervised pairs.

use rand::Rng;

use crate::autodiff::{BoundParams, Tape, Var};
use crate::data::{Example, MultiTaskDataset};
use crate::encoder::{
    encode_nodes, graph_embedding, predict_atom_type, predict_bond, predict_property,
    EncoderConfig, EncoderParams, GraphBatch,
};
use crate::losses::{
    atom_loss, bond_loss, joint_loss, property_loss, LossBreakdown, LossTerm, LossWeights,
};
use crate::meta::MetaError;
use crate::molgraph::{sample_bond_pairs, sample_context_nodes, MolGraphError};
use crate::scalar::Scalar;

/// Sampler settings of the self-supervised terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfSupervisedConfig {
    pub bond_positives: usize,
    pub bond_negatives: usize,
    pub context_fraction: f64,
    pub context_hops: usize,
}

impl Default for SelfSupervisedConfig {
    fn default() -> Self {
        SelfSupervisedConfig {
            bond_positives: 5,
            bond_negatives: 5,
            context_fraction: 0.15,
            context_hops: 1,
        }
    }
}

/// What the joint loss of a set contains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub encoder: EncoderConfig,
    pub weights: LossWeights,
    pub use_bond_loss: bool,
    pub use_atom_loss: bool,
    pub sampling: SelfSupervisedConfig,
}

impl Objective {
    fn bond_active(&self) -> bool {
        self.use_bond_loss && self.weights.w_edge > 0.0
    }

    fn atom_active(&self) -> bool {
        self.use_atom_loss && self.weights.w_node > 0.0
    }
}

/// A support or query set with its self-supervised samples drawn once, so
/// repeated evaluations (inner steps) see the same objective.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub batch: GraphBatch,
    pub labels: Vec<usize>,
    /// Global node index pairs and whether each is bonded.
    pub bond_pairs: Vec<(usize, usize)>,
    pub bond_labels: Vec<bool>,
    /// Global node indices of each context and its center's atomic number.
    pub contexts: Vec<Vec<usize>>,
    pub context_targets: Vec<u8>,
}

impl PreparedSet {
    pub fn new<R: Rng + ?Sized>(
        data: &MultiTaskDataset,
        examples: &[Example],
        objective: &Objective,
        rng: &mut R,
    ) -> Result<Self, MetaError> {
        let graphs: Vec<_> = examples
            .iter()
            .map(|e| &data.molecule(e.molecule).graph)
            .collect();
        let batch = GraphBatch::new(graphs.iter().copied())?;
        let mut set = PreparedSet {
            labels: examples.iter().map(|e| e.label as usize).collect(),
            bond_pairs: Vec::new(),
            bond_labels: Vec::new(),
            contexts: Vec::new(),
            context_targets: Vec::new(),
            batch,
        };
        let s = objective.sampling;
        for (gi, g) in graphs.iter().enumerate() {
            let at = |a: usize| set.batch.node_index(gi, a);
            if objective.bond_active() {
                match sample_bond_pairs(g, s.bond_positives, s.bond_negatives, rng) {
                    Ok(sample) => {
                        for (pairs, label) in
                            [(&sample.positives, true), (&sample.negatives, false)]
                        {
                            for &(u, v) in pairs {
                                set.bond_pairs.push((at(u), at(v)));
                                set.bond_labels.push(label);
                            }
                        }
                    }
                    Err(MolGraphError::NoBonds | MolGraphError::NoNegativesAvailable) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if objective.atom_active() {
                for c in sample_context_nodes(g, s.context_fraction, s.context_hops, rng)? {
                    set.contexts
                        .push(c.context.iter().map(|&a| at(a)).collect());
                    set.context_targets.push(c.target_atomic_number);
                }
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Everything one forward pass over a set produces.
pub struct SetForward<'t, T: Scalar> {
    pub joint: Var<'t, T>,
    pub breakdown: LossBreakdown<T>,
    /// Graph embeddings, `molecules × d`.
    pub graph_embeddings: Var<'t, T>,
    /// Property logits, `molecules × 2`.
    pub logits: Var<'t, T>,
}

/// Joint loss of a prepared set under `params`.
pub fn set_forward<'t, T: Scalar>(
    params: &BoundParams<'t, T>,
    set: &PreparedSet,
    objective: &Objective,
) -> Result<SetForward<'t, T>, MetaError> {
    let cfg = &objective.encoder;
    let p = EncoderParams::bind(params, cfg)?;
    let slope = T::lit(cfg.leaky_slope);
    let nodes = encode_nodes(&p, &set.batch, cfg)?;
    let graph_embeddings = graph_embedding(nodes, &set.batch)?;
    let logits = predict_property(graph_embeddings, &p.property_head, slope)?;

    let label = if objective.weights.w_label > 0.0 && !set.labels.is_empty() {
        Some(LossTerm {
            value: property_loss(logits, &set.labels)?,
            count: set.labels.len(),
        })
    } else {
        None
    };
    let edge = if objective.bond_active() && !set.bond_pairs.is_empty() {
        let scores = predict_bond(nodes, &set.bond_pairs)?;
        Some(LossTerm {
            value: bond_loss(scores, &set.bond_labels)?,
            count: set.bond_pairs.len(),
        })
    } else {
        None
    };
    let node = if objective.atom_active() && !set.contexts.is_empty() {
        let type_logits = predict_atom_type(nodes, &set.contexts, &p.atom_head, slope)?;
        Some(LossTerm {
            value: atom_loss(type_logits, &set.context_targets)?,
            count: set.contexts.len(),
        })
    } else {
        None
    };
    let (joint, breakdown) = joint_loss(label, edge, node, &objective.weights)?;
    Ok(SetForward {
        joint,
        breakdown,
        graph_embeddings,
        logits,
    })
}

/// Graph embeddings of a set (no loss), `molecules × d`.
pub fn set_embeddings<'t, T: Scalar>(
    params: &BoundParams<'t, T>,
    batch: &GraphBatch,
    cfg: &EncoderConfig,
) -> Result<Var<'t, T>, MetaError> {
    let p = EncoderParams::bind(params, cfg)?;
    let nodes = encode_nodes(&p, batch, cfg)?;
    Ok(graph_embedding(nodes, batch)?)
}

/// Positive-class probabilities for every molecule of a batch.
pub fn positive_probabilities<T: Scalar>(
    params: &crate::autodiff::ParameterSet<T>,
    batch: &GraphBatch,
    cfg: &EncoderConfig,
) -> Result<Vec<f64>, MetaError> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let p = EncoderParams::bind(&bound, cfg)?;
    let emb = set_embeddings(&bound, batch, cfg)?;
    let probs = predict_property(emb, &p.property_head, T::lit(cfg.leaky_slope))?
        .softmax()?
        .value();
    Ok((0..probs.rows())
        .map(|r| probs.get(r, 1).to_f64_lossy())
        .collect())
}
