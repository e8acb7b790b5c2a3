//! Depth-first SMILES writer, the inverse of the parser up to atom order.

use super::elements::{symbol, ORGANIC};
use super::{BondDirection, BondType, Chirality, MolecularGraph};

/// Writes a connected graph as SMILES, starting from atom 0 and visiting
/// neighbors in index order. Returns `None` for a disconnected graph.
///
/// Implicit hydrogens are not written; bracket atoms appear only when an atom
/// is outside the organic subset or carries a chirality tag.
pub fn write_smiles(graph: &MolecularGraph) -> Option<String> {
    let n = graph.atom_count();
    let mut order = vec![usize::MAX; n];
    let mut parent_bond = vec![usize::MAX; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ring_bonds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut visited = 0;
    discover(
        graph,
        0,
        &mut order,
        &mut parent_bond,
        &mut children,
        &mut ring_bonds,
        &mut visited,
    );
    if visited != n {
        return None;
    }

    let mut out = String::new();
    let mut open: Vec<Option<usize>> = Vec::new();
    emit(
        graph,
        0,
        &children,
        &ring_bonds,
        &parent_bond,
        &mut open,
        &mut out,
    );
    Some(out)
}

fn discover(
    g: &MolecularGraph,
    a: usize,
    order: &mut [usize],
    parent_bond: &mut [usize],
    children: &mut [Vec<usize>],
    ring_bonds: &mut [Vec<usize>],
    visited: &mut usize,
) {
    order[a] = *visited;
    *visited += 1;
    let mut nbrs: Vec<(usize, usize)> = g.adjacency()[a].clone();
    nbrs.sort_unstable();
    for (b, bond) in nbrs {
        if bond == parent_bond[a] {
            continue;
        }
        if order[b] == usize::MAX {
            parent_bond[b] = bond;
            children[a].push(b);
            discover(g, b, order, parent_bond, children, ring_bonds, visited);
        } else if order[b] < order[a] && !ring_bonds[b].contains(&bond) {
            // Back edge to an ancestor: opened at `b`, closed at `a`.
            ring_bonds[b].push(bond);
            ring_bonds[a].push(bond);
        }
    }
}

fn emit(
    g: &MolecularGraph,
    a: usize,
    children: &[Vec<usize>],
    ring_bonds: &[Vec<usize>],
    parent_bond: &[usize],
    open: &mut Vec<Option<usize>>,
    out: &mut String,
) {
    write_atom(g, a, out);
    for &bond in &ring_bonds[a] {
        let label = match open.iter().position(|&o| o == Some(bond)) {
            Some(slot) => {
                open[slot] = None;
                slot
            }
            None => {
                out.push_str(bond_symbol(g, bond));
                let slot = match open.iter().position(Option::is_none) {
                    Some(s) => {
                        open[s] = Some(bond);
                        s
                    }
                    None => {
                        open.push(Some(bond));
                        open.len() - 1
                    }
                };
                slot
            }
        };
        let digit = label + 1;
        if digit < 10 {
            out.push_str(&digit.to_string());
        } else {
            out.push_str(&format!("%{digit:02}"));
        }
    }
    let kids = &children[a];
    for (i, &c) in kids.iter().enumerate() {
        let branch = i + 1 < kids.len();
        if branch {
            out.push('(');
        }
        out.push_str(bond_symbol(g, parent_bond[c]));
        emit(g, c, children, ring_bonds, parent_bond, open, out);
        if branch {
            out.push(')');
        }
    }
}

fn write_atom(g: &MolecularGraph, a: usize, out: &mut String) {
    let atom = g.atoms()[a];
    let sym = symbol(atom.atomic_number).unwrap_or("*");
    let organic = ORGANIC
        .iter()
        .any(|&(_, z, aromatic)| z == atom.atomic_number && aromatic == atom.aromatic);
    let sym = if atom.aromatic {
        sym.to_ascii_lowercase()
    } else {
        sym.to_string()
    };
    if organic && atom.chirality == Chirality::Unspecified {
        out.push_str(&sym);
        return;
    }
    out.push('[');
    out.push_str(&sym);
    out.push_str(match atom.chirality {
        Chirality::Unspecified => "",
        Chirality::TetrahedralCCW => "@",
        Chirality::TetrahedralCW => "@@",
        Chirality::Other => "@AL1",
    });
    out.push(']');
}

fn bond_symbol(g: &MolecularGraph, bond: usize) -> &'static str {
    let b = g.bonds()[bond];
    let aromatic_ends = g.atoms()[b.u].aromatic && g.atoms()[b.v].aromatic;
    match (b.bond_type, b.direction) {
        (BondType::Single, BondDirection::EndUpRight) => "/",
        (BondType::Single, BondDirection::EndDownRight) => "\\",
        (BondType::Single, _) if aromatic_ends => "-",
        (BondType::Single, _) => "",
        (BondType::Double, _) => "=",
        (BondType::Triple, _) => "#",
        (BondType::Aromatic, _) if aromatic_ends => "",
        (BondType::Aromatic, _) => ":",
    }
}
