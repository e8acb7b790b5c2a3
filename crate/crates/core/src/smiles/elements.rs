/// Element symbols indexed by `atomic_number - 1`.
pub const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

pub fn atomic_number(symbol: &str) -> Option<u8> {
    SYMBOLS
        .iter()
        .position(|s| *s == symbol)
        .map(|i| (i + 1) as u8)
}

pub fn symbol(atomic_number: u8) -> Option<&'static str> {
    SYMBOLS
        .get((atomic_number as usize).wrapping_sub(1))
        .copied()
}

/// Organic-subset symbols usable outside brackets, two-letter forms first.
pub const ORGANIC: [(&str, u8, bool); 16] = [
    ("Cl", 17, false),
    ("Br", 35, false),
    ("B", 5, false),
    ("C", 6, false),
    ("N", 7, false),
    ("O", 8, false),
    ("P", 15, false),
    ("S", 16, false),
    ("F", 9, false),
    ("I", 53, false),
    ("b", 5, true),
    ("c", 6, true),
    ("n", 7, true),
    ("o", 8, true),
    ("p", 15, true),
    ("s", 16, true),
];

/// Aromatic symbols accepted inside brackets.
pub const AROMATIC_BRACKET: [(&str, u8); 9] = [
    ("se", 34),
    ("as", 33),
    ("te", 52),
    ("b", 5),
    ("c", 6),
    ("n", 7),
    ("o", 8),
    ("p", 15),
    ("s", 16),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_complete() {
        assert_eq!(atomic_number("H"), Some(1));
        assert_eq!(atomic_number("C"), Some(6));
        assert_eq!(atomic_number("Og"), Some(118));
        assert_eq!(symbol(17), Some("Cl"));
        assert_eq!(symbol(0), None);
        assert_eq!(symbol(119), None);
        for (sym, z, _) in ORGANIC {
            let upper = format!("{}{}", sym[..1].to_uppercase(), &sym[1..]);
            assert_eq!(atomic_number(&upper), Some(z), "{sym}");
        }
    }
}
