//! SMILES tokenizer and parser producing heavy-atom [`MolecularGraph`]s.
//!
//! Supported subset: organic-subset atoms (aromatic lowercase included),
//! bracket atoms (isotope, element, chirality, H count, charge, class),
//! ring closures `0-9` and `%NN`, branches and the bond symbols `- = # : / \`.
//! Implicit hydrogens are not materialized and aromaticity is purely
//! syntactic. Multi-fragment input (`.`) is rejected.

mod elements;
mod graph;
mod writer;

pub use elements::{atomic_number, symbol, SYMBOLS};
pub use graph::{
    Atom, Bond, BondDirection, BondType, Chirality, GraphError, MolecularGraph, MAX_ATOMIC_NUMBER,
};
pub use writer::write_smiles;

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("EmptyInput")]
    EmptyInput,
    #[error("UnknownCharacter({0})")]
    UnknownCharacter(usize),
    #[error("UnclosedRing({0})")]
    UnclosedRing(u32),
    #[error("UnbalancedBranch({0})")]
    UnbalancedBranch(usize),
    #[error("InvalidBracketAtom({0})")]
    InvalidBracketAtom(usize),
    #[error("DanglingBond({0})")]
    DanglingBond(usize),
    /// Conflicting explicit bond symbols on the two ends of a ring closure.
    #[error("RingBondConflict({0})")]
    RingBondConflict(usize),
    /// Ring closure that would create a self-loop or a second bond between two atoms.
    #[error("InvalidRingClosure({0})")]
    InvalidRingClosure(usize),
    /// `.` disconnected fragments are not supported.
    #[error("MultipleFragments({0})")]
    MultipleFragments(usize),
}

impl SmilesError {
    /// Character offset of the error, when it has one.
    pub fn position(&self) -> Option<usize> {
        match *self {
            SmilesError::UnknownCharacter(p)
            | SmilesError::UnbalancedBranch(p)
            | SmilesError::InvalidBracketAtom(p)
            | SmilesError::DanglingBond(p)
            | SmilesError::RingBondConflict(p)
            | SmilesError::InvalidRingClosure(p)
            | SmilesError::MultipleFragments(p) => Some(p),
            SmilesError::EmptyInput | SmilesError::UnclosedRing(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    OrganicAtom,
    BracketAtom,
    BondSymbol,
    RingClosure,
    BranchOpen,
    BranchClose,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmilesToken<'a> {
    pub kind: TokenKind,
    pub lexeme: &'a str,
    pub position: usize,
}

/// Splits a SMILES string into tokens whose lexemes concatenate back to the input.
pub fn tokenize(smiles: &str) -> Result<Vec<SmilesToken<'_>>, SmilesError> {
    if smiles.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    let bytes = smiles.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos];
        let (kind, len) = match c {
            b'[' => match bytes[pos..].iter().position(|&b| b == b']') {
                Some(end) => (TokenKind::BracketAtom, end + 1),
                None => return Err(SmilesError::InvalidBracketAtom(pos)),
            },
            b'(' => (TokenKind::BranchOpen, 1),
            b')' => (TokenKind::BranchClose, 1),
            b'.' => (TokenKind::Dot, 1),
            b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => (TokenKind::BondSymbol, 1),
            b'0'..=b'9' => (TokenKind::RingClosure, 1),
            b'%' => {
                let ok = bytes.len() >= pos + 3
                    && bytes[pos + 1].is_ascii_digit()
                    && bytes[pos + 2].is_ascii_digit();
                if !ok {
                    return Err(SmilesError::UnknownCharacter(pos));
                }
                (TokenKind::RingClosure, 3)
            }
            _ => match organic_at(&smiles[pos..]) {
                Some((sym, _, _)) => (TokenKind::OrganicAtom, sym.len()),
                None => {
                    // Report the offending character, not a byte inside a multibyte sequence.
                    return Err(SmilesError::UnknownCharacter(char_offset(smiles, pos)));
                }
            },
        };
        tokens.push(SmilesToken {
            kind,
            lexeme: &smiles[pos..pos + len],
            position: pos,
        });
        pos += len;
    }
    Ok(tokens)
}

fn char_offset(s: &str, byte_pos: usize) -> usize {
    s[..byte_pos].chars().count()
}

fn organic_at(s: &str) -> Option<(&'static str, u8, bool)> {
    elements::ORGANIC
        .iter()
        .copied()
        .find(|(sym, _, _)| s.starts_with(sym))
}

/// Parses without recording `/` `\` directions: every bond gets `BondDirection::None`.
pub fn parse(smiles: &str) -> Result<MolecularGraph, SmilesError> {
    parse_impl(smiles, false)
}

/// Parses and records `/` as `EndUpRight` and `\` as `EndDownRight` on the bond they label.
pub fn parse_directional(smiles: &str) -> Result<MolecularGraph, SmilesError> {
    parse_impl(smiles, true)
}

#[derive(Debug, Clone, Copy)]
struct BondSymbol {
    bond_type: BondType,
    direction: BondDirection,
    position: usize,
}

impl BondSymbol {
    fn from_lexeme(c: u8, position: usize) -> Self {
        let (bond_type, direction) = match c {
            b'=' => (BondType::Double, BondDirection::None),
            b'#' => (BondType::Triple, BondDirection::None),
            b':' => (BondType::Aromatic, BondDirection::None),
            b'/' => (BondType::Single, BondDirection::EndUpRight),
            b'\\' => (BondType::Single, BondDirection::EndDownRight),
            _ => (BondType::Single, BondDirection::None),
        };
        BondSymbol {
            bond_type,
            direction,
            position,
        }
    }
}

struct OpenRing {
    atom: usize,
    bond: Option<BondSymbol>,
}

fn parse_impl(smiles: &str, directional: bool) -> Result<MolecularGraph, SmilesError> {
    let tokens = tokenize(smiles)?;
    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds: Vec<(usize, usize, BondType, BondDirection)> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<BondSymbol> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut rings: BTreeMap<u32, OpenRing> = BTreeMap::new();

    let bond_of = |sym: Option<BondSymbol>, a: &Atom, b: &Atom| -> (BondType, BondDirection) {
        match sym {
            Some(s) => (
                s.bond_type,
                if directional {
                    s.direction
                } else {
                    BondDirection::None
                },
            ),
            None if a.aromatic && b.aromatic => (BondType::Aromatic, BondDirection::None),
            None => (BondType::Single, BondDirection::None),
        }
    };

    for tok in &tokens {
        match tok.kind {
            TokenKind::OrganicAtom | TokenKind::BracketAtom => {
                let atom = if tok.kind == TokenKind::OrganicAtom {
                    let (_, z, aromatic) = organic_at(tok.lexeme).expect("tokenizer invariant");
                    Atom {
                        atomic_number: z,
                        chirality: Chirality::Unspecified,
                        aromatic,
                    }
                } else {
                    parse_bracket(tok.lexeme, tok.position)?
                };
                let idx = atoms.len();
                atoms.push(atom);
                match prev {
                    Some(p) => {
                        let (ty, dir) = bond_of(pending.take(), &atoms[p], &atoms[idx]);
                        bonds.push((p, idx, ty, dir));
                    }
                    None => {
                        if let Some(b) = pending {
                            return Err(SmilesError::DanglingBond(b.position));
                        }
                    }
                }
                prev = Some(idx);
            }
            TokenKind::BondSymbol => {
                if prev.is_none() || pending.is_some() {
                    return Err(SmilesError::DanglingBond(tok.position));
                }
                pending = Some(BondSymbol::from_lexeme(
                    tok.lexeme.as_bytes()[0],
                    tok.position,
                ));
            }
            TokenKind::RingClosure => {
                let Some(atom) = prev else {
                    return Err(SmilesError::DanglingBond(tok.position));
                };
                let digit: u32 = tok.lexeme.trim_start_matches('%').parse().expect("digits");
                let here = pending.take();
                match rings.remove(&digit) {
                    None => {
                        rings.insert(digit, OpenRing { atom, bond: here });
                    }
                    Some(open) => {
                        let sym = match (open.bond, here) {
                            (Some(a), Some(b)) => {
                                if a.bond_type != b.bond_type {
                                    return Err(SmilesError::RingBondConflict(tok.position));
                                }
                                Some(if a.direction != BondDirection::None {
                                    a
                                } else {
                                    b
                                })
                            }
                            (a, b) => a.or(b),
                        };
                        if open.atom == atom
                            || bonds.iter().any(|&(x, y, _, _)| {
                                (x, y) == (open.atom, atom) || (y, x) == (open.atom, atom)
                            })
                        {
                            return Err(SmilesError::InvalidRingClosure(tok.position));
                        }
                        let (ty, dir) = bond_of(sym, &atoms[open.atom], &atoms[atom]);
                        bonds.push((open.atom, atom, ty, dir));
                    }
                }
            }
            TokenKind::BranchOpen => {
                if let Some(b) = pending {
                    return Err(SmilesError::DanglingBond(b.position));
                }
                let Some(p) = prev else {
                    return Err(SmilesError::UnbalancedBranch(tok.position));
                };
                branches.push((p, tok.position));
            }
            TokenKind::BranchClose => {
                if let Some(b) = pending {
                    return Err(SmilesError::DanglingBond(b.position));
                }
                let Some((p, _)) = branches.pop() else {
                    return Err(SmilesError::UnbalancedBranch(tok.position));
                };
                prev = Some(p);
            }
            TokenKind::Dot => return Err(SmilesError::MultipleFragments(tok.position)),
        }
    }
    if let Some(b) = pending {
        return Err(SmilesError::DanglingBond(b.position));
    }
    if let Some((_, pos)) = branches.last() {
        return Err(SmilesError::UnbalancedBranch(*pos));
    }
    if let Some((&digit, _)) = rings.iter().next() {
        return Err(SmilesError::UnclosedRing(digit));
    }
    let graph = MolecularGraph::new(atoms, bonds).map_err(|e| match e {
        GraphError::NoAtoms => SmilesError::EmptyInput,
        _ => SmilesError::InvalidRingClosure(0),
    })?;
    Ok(graph)
}

/// `[` isotope? symbol chirality? hcount? charge? class? `]`
fn parse_bracket(lexeme: &str, position: usize) -> Result<Atom, SmilesError> {
    let err = || SmilesError::InvalidBracketAtom(position);
    let inner = lexeme
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(err)?;
    let mut rest = inner.trim_start_matches(|c: char| c.is_ascii_digit());

    let (atomic_number, aromatic, sym_len) = bracket_symbol(rest).ok_or_else(err)?;
    rest = &rest[sym_len..];

    let mut chirality = Chirality::Unspecified;
    if let Some(r) = rest.strip_prefix("@@") {
        chirality = Chirality::TetrahedralCW;
        rest = r;
    } else if let Some(r) = rest.strip_prefix('@') {
        let class_len = r.bytes().take_while(|b| b.is_ascii_uppercase()).count();
        if class_len == 2 {
            let (class, tail) = r.split_at(2);
            let digits = tail.bytes().take_while(|b| b.is_ascii_digit()).count();
            if !matches!(class, "TH" | "AL" | "SP" | "TB" | "OH") || digits == 0 {
                return Err(err());
            }
            chirality = match (class, &tail[..digits]) {
                ("TH", "1") => Chirality::TetrahedralCCW,
                ("TH", "2") => Chirality::TetrahedralCW,
                _ => Chirality::Other,
            };
            rest = &tail[digits..];
        } else {
            chirality = Chirality::TetrahedralCCW;
            rest = r;
        }
    }

    if let Some(r) = rest.strip_prefix('H') {
        rest = r.trim_start_matches(|c: char| c.is_ascii_digit());
    }

    if rest.starts_with(['+', '-']) {
        let sign = rest.as_bytes()[0];
        let mut r = &rest[1..];
        let digits = r.bytes().take_while(|b| b.is_ascii_digit()).count();
        if digits > 0 {
            r = &r[digits..];
        } else {
            r = r.trim_start_matches(sign as char);
        }
        rest = r;
    }

    if let Some(r) = rest.strip_prefix(':') {
        let digits = r.bytes().take_while(|b| b.is_ascii_digit()).count();
        if digits == 0 {
            return Err(err());
        }
        rest = &r[digits..];
    }

    if !rest.is_empty() {
        return Err(err());
    }
    Ok(Atom {
        atomic_number,
        chirality,
        aromatic,
    })
}

fn bracket_symbol(s: &str) -> Option<(u8, bool, usize)> {
    if let Some(&(sym, z)) = elements::AROMATIC_BRACKET
        .iter()
        .find(|(sym, _)| s.starts_with(sym))
    {
        return Some((z, true, sym.len()));
    }
    let mut chars = s.chars();
    let first = chars.next().filter(char::is_ascii_uppercase)?;
    if let Some(second) = chars.next().filter(char::is_ascii_lowercase) {
        let two: String = [first, second].iter().collect();
        if let Some(z) = atomic_number(&two) {
            return Some((z, false, 2));
        }
    }
    atomic_number(&first.to_string()).map(|z| (z, false, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<TokenKind> {
        tokenize(s).unwrap().iter().map(|t| t.kind).collect()
    }

    #[test]
    fn tokenizes_simple_chains_and_rings() {
        use TokenKind::*;
        assert_eq!(kinds("CC"), vec![OrganicAtom, OrganicAtom]);
        assert_eq!(
            kinds("C1CC1"),
            vec![
                OrganicAtom,
                RingClosure,
                OrganicAtom,
                OrganicAtom,
                RingClosure
            ]
        );
        let toks = tokenize("ClC(Br)[NH3+]%12").unwrap();
        let lexemes: Vec<_> = toks.iter().map(|t| t.lexeme).collect();
        assert_eq!(lexemes, ["Cl", "C", "(", "Br", ")", "[NH3+]", "%12"]);
    }

    #[test]
    fn tokenizer_errors() {
        assert_eq!(tokenize("C#X"), Err(SmilesError::UnknownCharacter(2)));
        assert_eq!(tokenize(""), Err(SmilesError::EmptyInput));
        assert_eq!(tokenize("C[CH3"), Err(SmilesError::InvalidBracketAtom(1)));
        assert_eq!(tokenize("C%1"), Err(SmilesError::UnknownCharacter(1)));
        assert_eq!(tokenize("Cé"), Err(SmilesError::UnknownCharacter(1)));
    }

    #[test]
    fn parses_basic_molecules() {
        let g = parse("C").unwrap();
        assert_eq!((g.atom_count(), g.bond_count()), (1, 0));
        assert_eq!(g.atoms()[0], Atom::new(6));

        let g = parse("C=O").unwrap();
        assert_eq!(
            g.atoms()
                .iter()
                .map(|a| a.atomic_number)
                .collect::<Vec<_>>(),
            [6, 8]
        );
        assert_eq!(g.bonds()[0].bond_type, BondType::Double);

        let g = parse("c1ccccc1").unwrap();
        assert_eq!((g.atom_count(), g.bond_count()), (6, 6));
        assert!(g.bonds().iter().all(|b| b.bond_type == BondType::Aromatic));
        assert_eq!(g.cycle_rank(), 1);
        assert!((0..6).all(|i| g.degree(i) == 2));
    }

    #[test]
    fn branches_restore_attachment_atom() {
        let g = parse("CC(C)(C)O").unwrap();
        assert_eq!(g.degree(1), 4);
        assert!(g.has_bond(1, 4));
        assert!(!g.has_bond(3, 4));
    }

    #[test]
    fn directional_bonds() {
        let g = parse_directional("F/C=C/F").unwrap();
        let dirs: Vec<_> = g
            .bonds()
            .iter()
            .map(|b| (b.bond_type, b.direction))
            .collect();
        assert_eq!(
            dirs,
            [
                (BondType::Single, BondDirection::EndUpRight),
                (BondType::Double, BondDirection::None),
                (BondType::Single, BondDirection::EndUpRight),
            ]
        );
        let g = parse_directional("C/C").unwrap();
        assert_eq!(g.bonds()[0].direction, BondDirection::EndUpRight);
        let g = parse_directional("C\\C").unwrap();
        assert_eq!(g.bonds()[0].direction, BondDirection::EndDownRight);
        let g = parse("F/C=C/F").unwrap();
        assert!(g.bonds().iter().all(|b| b.direction == BondDirection::None));
        assert_eq!(
            parse_directional("CC").unwrap().bonds()[0].direction,
            BondDirection::None
        );
    }

    #[test]
    fn bracket_atoms() {
        let g = parse("N[C@@H](C)C(=O)O").unwrap();
        assert_eq!(g.atoms()[1].chirality, Chirality::TetrahedralCW);
        let g = parse("N[C@H](C)C(=O)O").unwrap();
        assert_eq!(g.atoms()[1].chirality, Chirality::TetrahedralCCW);
        let g = parse("[Fe@OH1]").unwrap();
        assert_eq!(g.atoms()[0].chirality, Chirality::Other);
        assert_eq!(g.atoms()[0].atomic_number, 26);
        let g = parse("[13CH4]").unwrap();
        assert_eq!(g.atoms()[0].atomic_number, 6);
        let g = parse("c1cc[nH]c1").unwrap();
        assert!(g.atoms()[3].aromatic);
        assert_eq!(g.atoms()[3].atomic_number, 7);
        let g = parse("[O-]C(=O)[Se]").unwrap();
        assert_eq!(g.atoms()[3].atomic_number, 34);
        assert_eq!(parse("[Cu+2]").unwrap().atoms()[0].atomic_number, 29);
        assert_eq!(parse("[Zz]"), Err(SmilesError::InvalidBracketAtom(0)));
        assert_eq!(parse("C[C@XY1]"), Err(SmilesError::InvalidBracketAtom(1)));
        assert_eq!(parse("C[CH3+x]"), Err(SmilesError::InvalidBracketAtom(1)));
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(parse("C1CC"), Err(SmilesError::UnclosedRing(1)));
        assert_eq!(parse("C%12CC"), Err(SmilesError::UnclosedRing(12)));
        assert_eq!(parse("C(C"), Err(SmilesError::UnbalancedBranch(1)));
        assert_eq!(parse("CC)C"), Err(SmilesError::UnbalancedBranch(2)));
        assert_eq!(parse("(C)C"), Err(SmilesError::UnbalancedBranch(0)));
        assert_eq!(parse("=C"), Err(SmilesError::DanglingBond(0)));
        assert_eq!(parse("CC="), Err(SmilesError::DanglingBond(2)));
        assert_eq!(parse("C==C"), Err(SmilesError::DanglingBond(2)));
        assert_eq!(parse("C(=)C"), Err(SmilesError::DanglingBond(2)));
        assert_eq!(parse("C11"), Err(SmilesError::InvalidRingClosure(2)));
        assert_eq!(parse("C1C1"), Err(SmilesError::InvalidRingClosure(3)));
        assert_eq!(parse("C=1CC#1"), Err(SmilesError::RingBondConflict(6)));
        assert_eq!(parse("CC.O"), Err(SmilesError::MultipleFragments(2)));
    }

    #[test]
    fn ring_bond_symbol_on_either_end() {
        let g = parse("C=1CCC1").unwrap();
        let ring = g.bond_between(0, 3).unwrap();
        assert_eq!(g.bonds()[ring].bond_type, BondType::Double);
        let g = parse("C1CCC=1").unwrap();
        assert_eq!(
            g.bonds()[g.bond_between(0, 3).unwrap()].bond_type,
            BondType::Double
        );
    }
}
