//! Planted-motif few-shot tasks over random molecule-like graphs.
//!
//! Molecules have 6–20 heavy atoms from {C, N, O, S, F}, single bonds only,
//! a random spanning tree plus up to two ring closures (5- or 6-rings), and
//! never exceed an element's usual valence. Each task owns one motif: a
//! three-atom path `a–b–c` with a fixed element triple. A molecule is
//! positive for a task iff the motif occurs anywhere in it, so every label
//! can be recomputed from the structure alone.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::data::dataset::smiles_of;
use crate::data::{DataError, Molecule, MultiTaskDataset};
use crate::smiles::{symbol, Atom, BondDirection, BondType, MolecularGraph};

pub const ELEMENTS: [u8; 5] = [6, 7, 8, 16, 9];

/// Highest number of bonds an element takes in generated molecules.
pub fn max_valence(atomic_number: u8) -> usize {
    match atomic_number {
        6 => 4,
        7 => 3,
        8 | 16 => 2,
        _ => 1,
    }
}

/// A path `ends.0 – center – ends.1` of element types; `ends` is sorted so
/// the motif and its reversal are the same value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Motif {
    pub ends: (u8, u8),
    pub center: u8,
}

impl Motif {
    pub fn new(a: u8, center: u8, c: u8) -> Self {
        Motif {
            ends: (a.min(c), a.max(c)),
            center,
        }
    }

    /// True iff some atom of the center element has two distinct neighbors
    /// of the two end elements.
    pub fn occurs_in(&self, g: &MolecularGraph) -> bool {
        let (a, c) = self.ends;
        (0..g.atom_count())
            .filter(|&v| g.atoms()[v].atomic_number == self.center)
            .any(|v| {
                let nbrs: Vec<u8> = g.neighbors(v).map(|u| g.atoms()[u].atomic_number).collect();
                nbrs.iter().enumerate().any(|(i, &x)| {
                    nbrs.iter()
                        .enumerate()
                        .any(|(j, &y)| i != j && x == a && y == c)
                })
            })
    }

    fn heteroatoms(&self) -> usize {
        [self.ends.0, self.center, self.ends.1]
            .iter()
            .filter(|&&z| z != 6)
            .count()
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |z| symbol(z).unwrap_or("?");
        write!(
            f,
            "{}-{}-{}",
            s(self.ends.0),
            s(self.center),
            s(self.ends.1)
        )
    }
}

/// Motifs eligible as tasks: the center can hold two bonds and at least two
/// of the three atoms are heteroatoms, which keeps the natural occurrence
/// rate low enough for balanced rejection sampling. The path must also have a
/// free valence left over, or it could never sit inside a larger molecule.
pub fn candidate_motifs() -> Vec<Motif> {
    let mut out = Vec::new();
    for &center in &ELEMENTS {
        if max_valence(center) < 2 {
            continue;
        }
        for (i, &a) in ELEMENTS.iter().enumerate() {
            for &c in &ELEMENTS[i..] {
                let m = Motif::new(a, center, c);
                let free = max_valence(a) + max_valence(center) + max_valence(c) - 4;
                if m.heteroatoms() >= 2 && free > 0 {
                    out.push(m);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_tasks: usize,
    pub molecules_per_task: usize,
    pub min_atoms: usize,
    pub max_atoms: usize,
    pub max_ring_closures: usize,
    /// Sampling weights of [`ELEMENTS`].
    pub element_weights: [f64; 5],
    pub positive_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_tasks: 10,
            molecules_per_task: 300,
            min_atoms: 6,
            max_atoms: 20,
            max_ring_closures: 2,
            element_weights: [0.6, 0.12, 0.12, 0.08, 0.08],
            positive_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: MultiTaskDataset,
    /// Motif of each task, in task order.
    pub motifs: Vec<Motif>,
}

/// Default-shaped generator with the given task count and size.
pub fn generate_synthetic<R: Rng + ?Sized>(
    n_tasks: usize,
    molecules_per_task: usize,
    rng: &mut R,
) -> Result<SyntheticDataset, DataError> {
    let cfg = SyntheticConfig {
        n_tasks,
        molecules_per_task,
        ..SyntheticConfig::default()
    };
    generate_synthetic_with(&cfg, rng)
}

/// Each task gets `molecules_per_task` fresh molecules labeled for that task
/// only (other cells missing), with exactly `round(positive_fraction × size)`
/// positives. Positives are made by planting the motif on a random path;
/// negatives by rejecting molecules that contain it.
pub fn generate_synthetic_with<R: Rng + ?Sized>(
    cfg: &SyntheticConfig,
    rng: &mut R,
) -> Result<SyntheticDataset, DataError> {
    if cfg.n_tasks < 2 {
        return Err(DataError::Malformed(
            "synthetic data needs at least 2 tasks".into(),
        ));
    }
    if cfg.min_atoms < 3 || cfg.min_atoms > cfg.max_atoms {
        return Err(DataError::Malformed(
            "atom count range must satisfy 3 <= min <= max".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.positive_fraction) {
        return Err(DataError::Malformed(
            "positive_fraction outside [0, 1]".into(),
        ));
    }
    let pool = candidate_motifs();
    if cfg.n_tasks > pool.len() {
        return Err(DataError::Malformed(format!(
            "at most {} distinct motifs are available",
            pool.len()
        )));
    }
    let motifs: Vec<Motif> = index::sample(rng, pool.len(), cfg.n_tasks)
        .into_iter()
        .map(|i| pool[i])
        .collect();

    let mut molecules = Vec::new();
    let mut labels = Vec::new();
    for (t, motif) in motifs.iter().enumerate() {
        let n_pos = (cfg.positive_fraction * cfg.molecules_per_task as f64).round() as usize;
        let mut classes: Vec<bool> = (0..cfg.molecules_per_task).map(|i| i < n_pos).collect();
        classes.shuffle(rng);
        for (i, &positive) in classes.iter().enumerate() {
            let graph = if positive {
                positive_molecule(cfg, motif, rng)
            } else {
                negative_molecule(cfg, motif, rng)
            }
            .ok_or_else(|| {
                DataError::Malformed(format!("could not generate molecules for motif {motif}"))
            })?;
            let mut row = vec![None; cfg.n_tasks];
            row[t] = Some(positive);
            molecules.push(Molecule {
                id: format!("t{t}_m{i}"),
                smiles: smiles_of(&graph)?,
                graph,
            });
            labels.push(row);
        }
    }
    let names = motifs
        .iter()
        .enumerate()
        .map(|(t, m)| format!("task{t}_{m}"))
        .collect();
    Ok(SyntheticDataset {
        dataset: MultiTaskDataset::new(molecules, labels, names)?,
        motifs,
    })
}

const MAX_ATTEMPTS: usize = 10_000;

fn positive_molecule<R: Rng + ?Sized>(
    cfg: &SyntheticConfig,
    motif: &Motif,
    rng: &mut R,
) -> Option<MolecularGraph> {
    (0..MAX_ATTEMPTS).find_map(|_| plant_motif(&random_molecule(cfg, rng), motif, rng))
}

fn negative_molecule<R: Rng + ?Sized>(
    cfg: &SyntheticConfig,
    motif: &Motif,
    rng: &mut R,
) -> Option<MolecularGraph> {
    (0..MAX_ATTEMPTS)
        .map(|_| random_molecule(cfg, rng))
        .find(|g| !motif.occurs_in(g))
}

fn sample_element<R: Rng + ?Sized>(weights: &[f64; 5], rng: &mut R) -> u8 {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return ELEMENTS[i];
        }
        x -= w;
    }
    ELEMENTS[0]
}

/// A connected, valence-respecting random graph per [`SyntheticConfig`].
pub fn random_molecule<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> MolecularGraph {
    loop {
        let n = rng.gen_range(cfg.min_atoms..=cfg.max_atoms);
        let types: Vec<u8> = (0..n)
            .map(|_| sample_element(&cfg.element_weights, rng))
            .collect();
        let mut degree = vec![0usize; n];
        let mut bonds = Vec::new();
        let mut ok = true;
        for i in 1..n {
            let open: Vec<usize> = (0..i)
                .filter(|&j| degree[j] < max_valence(types[j]))
                .collect();
            let Some(&j) = open.choose(rng) else {
                ok = false;
                break;
            };
            degree[i] += 1;
            degree[j] += 1;
            bonds.push((j, i));
        }
        if !ok {
            continue;
        }
        let atoms: Vec<Atom> = types.iter().map(|&z| Atom::new(z)).collect();
        let single = |(a, b)| (a, b, BondType::Single, BondDirection::None);
        let mut g = MolecularGraph::new(atoms.clone(), bonds.iter().copied().map(single))
            .expect("tree bonds are valid");
        for _ in 0..rng.gen_range(0..=cfg.max_ring_closures) {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .filter(|&(a, b)| {
                    degree[a] < max_valence(types[a])
                        && degree[b] < max_valence(types[b])
                        && matches!(distance(&g, a, b), 4 | 5)
                })
                .collect();
            if let Some(&(a, b)) = pairs.choose(rng) {
                degree[a] += 1;
                degree[b] += 1;
                bonds.push((a, b));
                g = MolecularGraph::new(atoms.clone(), bonds.iter().copied().map(single))
                    .expect("ring closure joins distinct unbonded atoms");
            }
        }
        return g;
    }
}

fn distance(g: &MolecularGraph, from: usize, to: usize) -> usize {
    let mut dist = vec![usize::MAX; g.atom_count()];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(a) = queue.pop_front() {
        if a == to {
            return dist[a];
        }
        for b in g.neighbors(a) {
            if dist[b] == usize::MAX {
                dist[b] = dist[a] + 1;
                queue.push_back(b);
            }
        }
    }
    usize::MAX
}

/// Retypes the atoms of a random path `u–v–w` to the motif's elements where
/// valences allow; `None` when no path fits.
pub fn plant_motif<R: Rng + ?Sized>(
    g: &MolecularGraph,
    motif: &Motif,
    rng: &mut R,
) -> Option<MolecularGraph> {
    let (a, c) = motif.ends;
    let fits = |atom: usize, z: u8| g.degree(atom) <= max_valence(z);
    let mut paths = Vec::new();
    for v in 0..g.atom_count() {
        if !fits(v, motif.center) {
            continue;
        }
        for u in g.neighbors(v) {
            for w in g.neighbors(v) {
                if u != w && fits(u, a) && fits(w, c) {
                    paths.push((u, v, w));
                }
            }
        }
    }
    let &(u, v, w) = paths.choose(rng)?;
    let mut atoms = g.atoms().to_vec();
    atoms[u] = Atom::new(a);
    atoms[v] = Atom::new(motif.center);
    atoms[w] = Atom::new(c);
    let bonds = g
        .bonds()
        .iter()
        .map(|b| (b.u, b.v, b.bond_type, b.direction));
    MolecularGraph::new(atoms, bonds).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn motif_scan_examples() {
        let m = Motif::new(7, 6, 8);
        assert_eq!(m, Motif::new(8, 6, 7));
        assert_eq!(m.to_string(), "N-C-O");
        assert!(m.occurs_in(&parse("CC(N)O").unwrap()));
        assert!(!m.occurs_in(&parse("NCCO").unwrap()));
        // Same element on both ends needs two distinct neighbors.
        let oo = Motif::new(8, 6, 8);
        assert!(!oo.occurs_in(&parse("CCO").unwrap()));
        assert!(oo.occurs_in(&parse("OCO").unwrap()));
    }

    #[test]
    fn candidates_are_distinct_and_hetero_rich() {
        let c = candidate_motifs();
        let mut d = c.clone();
        d.dedup();
        assert_eq!(c, d);
        assert!(c.len() >= 10);
        assert!(c
            .iter()
            .all(|m| m.heteroatoms() >= 2 && max_valence(m.center) >= 2));
    }

    #[test]
    fn random_molecules_respect_constraints() {
        let cfg = SyntheticConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let g = random_molecule(&cfg, &mut rng);
            assert!((6..=20).contains(&g.atom_count()));
            assert!(g.cycle_rank() <= 2);
            for i in 0..g.atom_count() {
                assert!(g.degree(i) <= max_valence(g.atoms()[i].atomic_number));
            }
            assert!(smiles_of(&g).is_ok());
        }
    }

    #[test]
    fn small_dataset_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = generate_synthetic(3, 40, &mut rng).unwrap();
        assert_eq!(s.dataset.task_count(), 3);
        assert_eq!(s.dataset.len(), 120);
        for t in 0..3 {
            assert_eq!(s.dataset.class_members(t, true).len(), 20);
            assert_eq!(s.dataset.class_members(t, false).len(), 20);
        }
        assert!(generate_synthetic(1, 10, &mut rng).is_err());
    }
}
