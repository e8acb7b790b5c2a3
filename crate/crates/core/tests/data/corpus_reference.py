"""Regenerates the reference-toolkit rows of smiles_corpus.tsv with RDKit.

Molecules are parsed with sanitize=False so that aromaticity, charges and
hydrogens stay exactly as written. RDKit's CW/CCW tags are relative to its
own neighbor ordering, so for these rows only their sum is meaningful to a
parser that keeps tags as written. Hand-derived rows are compared against
RDKit as well, and any disagreement is printed to stderr.

    python3 corpus_reference.py > smiles_corpus.tsv
"""

import sys

from rdkit import Chem

COLUMNS = [
    "smiles", "atoms", "bonds", "rings", "aromatic_atoms", "single", "double",
    "triple", "aromatic_bonds", "chiral_cw", "chiral_ccw", "up", "down",
    "elements", "source",
]

# smiles, atoms, bonds, rings, aromatic atoms, single, double, triple,
# aromatic bonds, @@, @, /, \, elements; worked out by hand.
HAND = [
    ("C", 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, "C:1"),
    ("CC", 2, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, "C:2"),
    ("C=O", 2, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, "C:1 O:1"),
    ("C#N", 2, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, "C:1 N:1"),
    ("CC#N", 3, 2, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, "C:2 N:1"),
    ("O=C=O", 3, 2, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, "C:1 O:2"),
    ("C1CC1", 3, 3, 1, 0, 3, 0, 0, 0, 0, 0, 0, 0, "C:3"),
    ("CC(C)C", 4, 3, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0, "C:4"),
    ("c1ccccc1", 6, 6, 1, 6, 0, 0, 0, 6, 0, 0, 0, 0, "C:6"),
    ("c1:c:c:c:c:c:1", 6, 6, 1, 6, 0, 0, 0, 6, 0, 0, 0, 0, "C:6"),
    ("C1CCCCC=1", 6, 6, 1, 0, 5, 1, 0, 0, 0, 0, 0, 0, "C:6"),
    ("C%10CCCCC%10", 6, 6, 1, 0, 6, 0, 0, 0, 0, 0, 0, 0, "C:6"),
    ("c1ccc2ccccc2c1", 10, 11, 2, 10, 0, 0, 0, 11, 0, 0, 0, 0, "C:10"),
    ("c1ccccc1-c1ccccc1", 12, 13, 2, 12, 1, 0, 0, 12, 0, 0, 0, 0, "C:12"),
    ("C/C=C/C", 4, 3, 0, 0, 2, 1, 0, 0, 0, 0, 2, 0, "C:4"),
    ("F/C=C\\F", 4, 3, 0, 0, 2, 1, 0, 0, 0, 0, 1, 1, "C:2 F:2"),
    ("F/C=C/F", 4, 3, 0, 0, 2, 1, 0, 0, 0, 0, 2, 0, "C:2 F:2"),
    ("[NH4+]", 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, "N:1"),
    ("[Fe]", 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, "Fe:1"),
    ("N[C@@H](C)C(=O)O", 6, 5, 0, 0, 4, 1, 0, 0, 1, 0, 0, 0, "C:3 N:1 O:2"),
    ("N[C@H](C)C(=O)O", 6, 5, 0, 0, 4, 1, 0, 0, 0, 1, 0, 0, "C:3 N:1 O:2"),
    ("FS(F)(F)(F)(F)F", 7, 6, 0, 0, 6, 0, 0, 0, 0, 0, 0, 0, "F:6 S:1"),
    ("OB(O)O", 4, 3, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0, "B:1 O:3"),
    ("IC(I)I", 4, 3, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0, "C:1 I:3"),
    ("[nH]1cccc1", 5, 5, 1, 5, 0, 0, 0, 5, 0, 0, 0, 0, "C:4 N:1"),
]

REFERENCE = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "CN1CCC[C@H]1c1cccnc1",
    "OC[C@H]1OC(O)[C@H](O)[C@@H](O)[C@@H]1O",
    "c1ccc2[nH]ccc2c1",
    "c1ccncc1",
    "c1ccoc1",
    "c1ccsc1",
    "CC(C)CCC[C@@H](C)[C@H]1CC[C@@H]2[C@@]1(CC[C@H]3[C@H]2CC=C4[C@@]3(CC[C@@H](C4)O)C)C",
    "CC1([C@@H](N2[C@H](S1)[C@@H](C2=O)NC(=O)Cc3ccccc3)C(=O)O)C",
    "CN1C(=O)CN=C(c2ccccc2)c2cc(Cl)ccc21",
    "CN(C)CCCN1c2ccccc2Sc2ccc(Cl)cc21",
    "CC(C)(c1ccc(O)cc1)c1ccc(O)cc1",
    "Oc1cc(Cl)ccc1Oc1ccc(Cl)cc1Cl",
    "ClC(Cl)(Cl)C(c1ccc(Cl)cc1)c1ccc(Cl)cc1",
    "C[C@]12CC[C@H]3[C@@H](CCc4cc(O)ccc34)[C@@H]1CC[C@@H]2O",
    "CC/C(=C(\\c1ccccc1)/c1ccc(OCCN(C)C)cc1)/c1ccccc1",
    "CCNc1nc(Cl)nc(NC(C)C)n1",
    "OC(=O)CNCP(=O)(O)O",
    "[O-][N+](=O)c1ccccc1",
    "Cc1cc(NS(=O)(=O)c2ccc(N)cc2)no1",
    "Brc1ccccc1",
    "c1ccc(cc1)P(c1ccccc1)c1ccccc1",
    "C12C3C4C1C5C2C3C45",
    "C1C2CC3CC1CC(C2)C3",
    "C1CCC2(C1)CCCC2",
    "CN1CC[C@]23c4c5ccc(O)c4O[C@H]2[C@@H](O)C=C[C@H]3[C@H]1C5",
    "[O-]C(=O)C",
    "C/C=C\\C",
    "CC(C)NCC(O)COc1cccc2ccccc12",
    "COc1ccc2[nH]cc(CCN)c2c1",
    "O=C(O)c1ccccc1O",
    "CCN(CC)C(=O)c1ccccc1",
    "NC(=O)c1cccnc1",
    "Clc1ccc(cc1)C(c1ccccc1Cl)C(Cl)Cl",
    "CC(=O)OCC[N+](C)(C)C",
    "C#Cc1ccccc1",
    "O=C1NC(=O)C(N1)(c1ccccc1)c1ccccc1",
    "CCOC(=O)C1=C(C)NC(C)=C(C1c1cccc(c1)[N+]([O-])=O)C(=O)OC",
    "OC(=O)[C@@H]1CCCN1",
    "CSCC[C@H](N)C(=O)O",
    "BrC(Br)Br",
    "FC(F)(F)c1ccccc1",
]


def counts(smiles):
    mol = Chem.MolFromSmiles(smiles, sanitize=False)
    if mol is None:
        raise SystemExit(f"RDKit rejected {smiles}")
    bt = {"SINGLE": 0, "DOUBLE": 0, "TRIPLE": 0, "AROMATIC": 0}
    up = down = 0
    for b in mol.GetBonds():
        bt[str(b.GetBondType())] += 1
        d = str(b.GetBondDir())
        up += d == "ENDUPRIGHT"
        down += d == "ENDDOWNRIGHT"
    cw = sum(str(a.GetChiralTag()) == "CHI_TETRAHEDRAL_CW" for a in mol.GetAtoms())
    ccw = sum(str(a.GetChiralTag()) == "CHI_TETRAHEDRAL_CCW" for a in mol.GetAtoms())
    elements = {}
    for a in mol.GetAtoms():
        elements[a.GetAtomicNum()] = elements.get(a.GetAtomicNum(), 0) + 1
    table = Chem.GetPeriodicTable()
    el = " ".join(f"{table.GetElementSymbol(z)}:{n}" for z, n in sorted(elements.items()))
    n_atoms, n_bonds = mol.GetNumAtoms(), mol.GetNumBonds()
    fragments = len(Chem.GetMolFrags(mol))
    aromatic = sum(a.GetIsAromatic() for a in mol.GetAtoms())
    return (smiles, n_atoms, n_bonds, n_bonds - n_atoms + fragments, aromatic,
            bt["SINGLE"], bt["DOUBLE"], bt["TRIPLE"], bt["AROMATIC"], cw, ccw,
            up, down, el)


def main():
    print("\t".join(COLUMNS))
    for row in HAND:
        ref = counts(row[0])
        if tuple(ref) != tuple(row):
            print(f"hand row disagrees with RDKit: {row} vs {ref}", file=sys.stderr)
        print("\t".join(map(str, row)) + "\thand")
    for smiles in REFERENCE:
        print("\t".join(map(str, counts(smiles))) + "\trdkit")


if __name__ == "__main__":
    main()
