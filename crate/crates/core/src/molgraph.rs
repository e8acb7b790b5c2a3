//! Input-layer featurization and the structural samplers behind the
//! self-supervised losses.

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::autodiff::{ParameterSet, Tensor};
use crate::scalar::Scalar;
use crate::smiles::{Atom, Bond, MolecularGraph};

/// Cardinalities of the categorical atom and bond features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureVocab {
    pub atom_type_count: usize,
    pub chirality_count: usize,
    pub bond_type_count: usize,
    pub bond_direction_count: usize,
}

pub const FEATURE_VOCAB: FeatureVocab = FeatureVocab {
    atom_type_count: 118,
    chirality_count: 4,
    bond_type_count: 4,
    bond_direction_count: 3,
};

pub const ATOM_NUMBER_TABLE: &str = "embed.atom_number";
pub const CHIRALITY_TABLE: &str = "embed.chirality";
pub const BOND_TYPE_TABLE: &str = "embed.bond_type";
pub const BOND_DIRECTION_TABLE: &str = "embed.bond_direction";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MolGraphError {
    #[error("atomic number {0} outside [1, 118]")]
    IndexOutOfRange(u8),
    #[error("embedding table {name} has shape {shape:?}, expected {rows} rows")]
    TableShape {
        name: &'static str,
        shape: [usize; 2],
        rows: usize,
    },
    #[error("node halves {node:?} and edge halves {edge:?} do not add up to the same width")]
    WidthMismatch { node: [usize; 2], edge: [usize; 2] },
    #[error("missing embedding table {0}")]
    MissingTable(&'static str),
    #[error("graph has no bonds")]
    NoBonds,
    #[error("graph has no non-bonded atom pairs")]
    NoNegativesAvailable,
    #[error("context fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("hop count must be at least 1")]
    InvalidHops,
}

/// The four lookup tables of the input layer.
///
/// Node embeddings are `[atom_number row ‖ chirality row]`, edge embeddings
/// `[bond_type row ‖ bond_direction row]`; both halves add up to the model width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<T> {
    pub atom_number: Tensor<T>,
    pub chirality: Tensor<T>,
    pub bond_type: Tensor<T>,
    pub bond_direction: Tensor<T>,
}

impl<T: Scalar> EmbeddingTables<T> {
    pub fn new(
        atom_number: Tensor<T>,
        chirality: Tensor<T>,
        bond_type: Tensor<T>,
        bond_direction: Tensor<T>,
    ) -> Result<Self, MolGraphError> {
        let v = FEATURE_VOCAB;
        for (name, t, rows) in [
            (ATOM_NUMBER_TABLE, &atom_number, v.atom_type_count),
            (CHIRALITY_TABLE, &chirality, v.chirality_count),
            (BOND_TYPE_TABLE, &bond_type, v.bond_type_count),
            (
                BOND_DIRECTION_TABLE,
                &bond_direction,
                v.bond_direction_count,
            ),
        ] {
            if t.rows() != rows {
                return Err(MolGraphError::TableShape {
                    name,
                    shape: t.shape(),
                    rows,
                });
            }
        }
        let node = [atom_number.cols(), chirality.cols()];
        let edge = [bond_type.cols(), bond_direction.cols()];
        if node[0] + node[1] != edge[0] + edge[1] {
            return Err(MolGraphError::WidthMismatch { node, edge });
        }
        Ok(EmbeddingTables {
            atom_number,
            chirality,
            bond_type,
            bond_direction,
        })
    }

    /// Reads the tables out of a parameter set by their canonical names.
    pub fn from_params(params: &ParameterSet<T>) -> Result<Self, MolGraphError> {
        let get = |name: &'static str| {
            params
                .get(name)
                .cloned()
                .ok_or(MolGraphError::MissingTable(name))
        };
        Self::new(
            get(ATOM_NUMBER_TABLE)?,
            get(CHIRALITY_TABLE)?,
            get(BOND_TYPE_TABLE)?,
            get(BOND_DIRECTION_TABLE)?,
        )
    }

    /// Model width `d`.
    pub fn dim(&self) -> usize {
        self.atom_number.cols() + self.chirality.cols()
    }
}

/// Row of the atom-number table used for an atom.
pub fn atom_row(atom: &Atom) -> Result<usize, MolGraphError> {
    match atom.atomic_number {
        n @ 1..=118 => Ok(n as usize - 1),
        n => Err(MolGraphError::IndexOutOfRange(n)),
    }
}

/// `h_v⁽⁰⁾ = v_AN ‖ v_CT`
pub fn init_node_embedding<T: Scalar>(
    atom: &Atom,
    tables: &EmbeddingTables<T>,
) -> Result<Vec<T>, MolGraphError> {
    let mut out = tables.atom_number.row_slice(atom_row(atom)?).to_vec();
    out.extend_from_slice(tables.chirality.row_slice(atom.chirality.index()));
    Ok(out)
}

/// `h_e⁽⁰⁾ = e_BT ‖ e_BD`
pub fn init_edge_embedding<T: Scalar>(bond: &Bond, tables: &EmbeddingTables<T>) -> Vec<T> {
    let mut out = tables.bond_type.row_slice(bond.bond_type.index()).to_vec();
    out.extend_from_slice(tables.bond_direction.row_slice(bond.direction.index()));
    out
}

/// Bonded (positive) and non-bonded (negative) atom pairs, each stored `(u, v)` with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BondPairSample {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl BondPairSample {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `min(n_pos, bonds)` distinct bonds and `min(n_neg, non-edges)` distinct non-edges.
///
/// Negatives come from rejection sampling (at most `50 × n_neg` draws) with an
/// exhaustive fallback, so every subset of non-edges of the returned size is
/// equally likely either way.
pub fn sample_bond_pairs<R: Rng + ?Sized>(
    graph: &MolecularGraph,
    n_pos: usize,
    n_neg: usize,
    rng: &mut R,
) -> Result<BondPairSample, MolGraphError> {
    let n = graph.atom_count();
    let m = graph.bond_count();
    if m == 0 {
        return Err(MolGraphError::NoBonds);
    }
    let non_edges = n * (n - 1) / 2 - m;
    if n_neg > 0 && non_edges == 0 {
        return Err(MolGraphError::NoNegativesAvailable);
    }

    let positives = index::sample(rng, m, n_pos.min(m))
        .into_iter()
        .map(|i| graph.bonds()[i].endpoints())
        .collect();

    let want = n_neg.min(non_edges);
    let mut negatives = Vec::with_capacity(want);
    let mut seen = HashSet::with_capacity(want);
    let mut attempts = 0;
    while negatives.len() < want && attempts < 50 * n_neg {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b || graph.has_bond(a, b) {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if seen.insert(pair) {
            negatives.push(pair);
        }
    }
    if negatives.len() < want {
        let rest: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !graph.has_bond(u, v) && !seen.contains(&(u, v)))
            .collect();
        let extra = index::sample(rng, rest.len(), want - negatives.len());
        negatives.extend(extra.into_iter().map(|i| rest[i]));
    }
    Ok(BondPairSample {
        positives,
        negatives,
    })
}

/// A sampled center atom with its `l`-hop neighborhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSample {
    pub center: usize,
    /// Sorted atom indices within `l` hops, center excluded.
    pub context: Vec<usize>,
    pub target_atomic_number: u8,
}

/// Number of centers requested for a graph of `atoms` atoms: `max(1, round(fraction × atoms))`.
pub fn context_center_count(fraction: f64, atoms: usize) -> usize {
    ((fraction * atoms as f64).round() as usize).max(1)
}

/// Picks distinct non-isolated centers uniformly and returns their `l`-hop contexts.
///
/// Isolated atoms are never chosen; a graph with only isolated atoms yields
/// an empty list.
pub fn sample_context_nodes<R: Rng + ?Sized>(
    graph: &MolecularGraph,
    fraction: f64,
    l: usize,
    rng: &mut R,
) -> Result<Vec<ContextSample>, MolGraphError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MolGraphError::InvalidFraction(fraction));
    }
    if l == 0 {
        return Err(MolGraphError::InvalidHops);
    }
    let candidates: Vec<usize> = (0..graph.atom_count())
        .filter(|&a| graph.degree(a) > 0)
        .collect();
    let count = context_center_count(fraction, graph.atom_count()).min(candidates.len());
    Ok(index::sample(rng, candidates.len(), count)
        .into_iter()
        .map(|i| {
            let center = candidates[i];
            ContextSample {
                center,
                context: neighborhood(graph, center, l),
                target_atomic_number: graph.atoms()[center].atomic_number,
            }
        })
        .collect())
}

/// Atoms at graph distance `1..=l` from `center`, sorted.
pub fn neighborhood(graph: &MolecularGraph, center: usize, l: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.atom_count()];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    let mut found = BTreeSet::new();
    while let Some(a) = queue.pop_front() {
        if dist[a] == l {
            continue;
        }
        for b in graph.neighbors(a) {
            if dist[b] == usize::MAX {
                dist[b] = dist[a] + 1;
                found.insert(b);
                queue.push_back(b);
            }
        }
    }
    found.into_iter().collect()
}
