//! Heavy-atom molecular graph with the atom/bond attribute vocabulary used for featurization.

use std::fmt;

use thiserror::Error;

pub const MAX_ATOMIC_NUMBER: u8 = 118;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Chirality {
    Unspecified,
    TetrahedralCW,
    TetrahedralCCW,
    Other,
}

impl Chirality {
    pub const ALL: [Chirality; 4] = [
        Chirality::Unspecified,
        Chirality::TetrahedralCW,
        Chirality::TetrahedralCCW,
        Chirality::Other,
    ];

    /// Row index into the chirality embedding table.
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub const ALL: [BondType; 4] = [
        BondType::Single,
        BondType::Double,
        BondType::Triple,
        BondType::Aromatic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondDirection {
    None,
    EndUpRight,
    EndDownRight,
}

impl BondDirection {
    pub const ALL: [BondDirection; 3] = [
        BondDirection::None,
        BondDirection::EndUpRight,
        BondDirection::EndDownRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub atomic_number: u8,
    pub chirality: Chirality,
    pub aromatic: bool,
}

impl Atom {
    pub fn new(atomic_number: u8) -> Self {
        Atom {
            atomic_number,
            chirality: Chirality::Unspecified,
            aromatic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    /// Endpoints with `u < v`.
    pub u: usize,
    pub v: usize,
    pub bond_type: BondType,
    pub direction: BondDirection,
}

impl Bond {
    pub fn endpoints(&self) -> (usize, usize) {
        (self.u, self.v)
    }

    pub fn other(&self, atom: usize) -> usize {
        if atom == self.u {
            self.v
        } else {
            self.u
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph has no atoms")]
    NoAtoms,
    #[error("atomic number {0} outside [1, 118]")]
    AtomicNumber(u8),
    #[error("bond {0}-{1} references a missing atom")]
    MissingAtom(usize, usize),
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
}

/// Atoms, undirected bonds and a symmetric adjacency list `(neighbor, bond index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolecularGraph {
    /// Builds a graph from atoms and `(a, b, type, direction)` bonds in any endpoint order.
    pub fn new(
        atoms: Vec<Atom>,
        bonds: impl IntoIterator<Item = (usize, usize, BondType, BondDirection)>,
    ) -> Result<Self, GraphError> {
        let mut graph = MolecularGraph::with_atoms(atoms)?;
        for (a, b, ty, dir) in bonds {
            graph.add_bond(a, b, ty, dir)?;
        }
        Ok(graph)
    }

    pub(crate) fn with_atoms(atoms: Vec<Atom>) -> Result<Self, GraphError> {
        if atoms.is_empty() {
            return Err(GraphError::NoAtoms);
        }
        if let Some(a) = atoms
            .iter()
            .find(|a| a.atomic_number == 0 || a.atomic_number > MAX_ATOMIC_NUMBER)
        {
            return Err(GraphError::AtomicNumber(a.atomic_number));
        }
        let n = atoms.len();
        Ok(MolecularGraph {
            atoms,
            bonds: Vec::new(),
            adjacency: vec![Vec::new(); n],
        })
    }

    pub(crate) fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        bond_type: BondType,
        direction: BondDirection,
    ) -> Result<usize, GraphError> {
        let n = self.atoms.len();
        if a >= n || b >= n {
            return Err(GraphError::MissingAtom(a, b));
        }
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        if self.bond_between(a, b).is_some() {
            return Err(GraphError::DuplicateBond(a.min(b), a.max(b)));
        }
        let idx = self.bonds.len();
        self.bonds.push(Bond {
            u: a.min(b),
            v: a.max(b),
            bond_type,
            direction,
        });
        self.adjacency[a].push((b, idx));
        self.adjacency[b].push((a, idx));
        Ok(idx)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn adjacency(&self) -> &[Vec<(usize, usize)>] {
        &self.adjacency
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[atom].iter().map(|&(n, _)| n)
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, idx)| idx)
    }

    pub fn has_bond(&self, a: usize, b: usize) -> bool {
        self.bond_between(a, b).is_some()
    }

    /// Number of ring bonds closed beyond a spanning forest (cyclomatic number).
    pub fn cycle_rank(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.atoms.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut extra = 0;
        for b in &self.bonds {
            let (ru, rv) = (find(&mut parent, b.u), find(&mut parent, b.v));
            if ru == rv {
                extra += 1;
            } else {
                parent[ru] = rv;
            }
        }
        extra
    }

    /// Relabels atoms: new index of old atom `i` is `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length");
        let mut atoms = vec![self.atoms[0]; self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let mut g = MolecularGraph::with_atoms(atoms).expect("permutation of a valid graph");
        for b in &self.bonds {
            g.add_bond(perm[b.u], perm[b.v], b.bond_type, b.direction)
                .expect("permutation of a valid graph");
        }
        g
    }

    /// Checks every structural invariant; used by tests and after deserialization.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.atoms.is_empty() {
            return Err(GraphError::NoAtoms);
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.bonds {
            if b.u == b.v {
                return Err(GraphError::SelfLoop(b.u));
            }
            if b.u > b.v || b.v >= self.atoms.len() {
                return Err(GraphError::MissingAtom(b.u, b.v));
            }
            if !seen.insert((b.u, b.v)) {
                return Err(GraphError::DuplicateBond(b.u, b.v));
            }
        }
        for (u, adj) in self.adjacency.iter().enumerate() {
            for &(v, idx) in adj {
                let bond = self.bonds.get(idx).ok_or(GraphError::MissingAtom(u, v))?;
                if bond.endpoints() != (u.min(v), u.max(v))
                    || !self.adjacency[v].contains(&(u, idx))
                {
                    return Err(GraphError::MissingAtom(u, v));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for MolecularGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "atoms: {}, bonds: {}",
            self.atom_count(),
            self.bond_count()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> MolecularGraph {
        MolecularGraph::new(
            vec![Atom::new(6); n],
            (1..n).map(|i| (i - 1, i, BondType::Single, BondDirection::None)),
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_structure() {
        assert_eq!(MolecularGraph::new(vec![], []), Err(GraphError::NoAtoms));
        assert_eq!(
            MolecularGraph::new(vec![Atom::new(119)], []),
            Err(GraphError::AtomicNumber(119))
        );
        let dup = [
            (0, 1, BondType::Single, BondDirection::None),
            (1, 0, BondType::Double, BondDirection::None),
        ];
        assert_eq!(
            MolecularGraph::new(vec![Atom::new(6); 2], dup),
            Err(GraphError::DuplicateBond(0, 1))
        );
    }

    #[test]
    fn permutation_preserves_structure() {
        let g = path(4);
        let p = g.permuted(&[3, 1, 0, 2]);
        p.validate().unwrap();
        assert!(p.has_bond(3, 1) && p.has_bond(1, 0) && p.has_bond(0, 2));
        assert_eq!(p.bond_count(), 3);
        assert_eq!(g.cycle_rank(), 0);
    }
}
