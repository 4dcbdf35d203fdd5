use std::collections::BTreeMap;

use log::warn;

use super::{Atom, Bond, BondOrder, MolecularGraph};
use crate::error::{Error, Result};

const ELEMENTS: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",
    "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce",
    "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir",
    "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc",
    "Lv", "Ts", "Og",
];

const AROMATIC_BRACKET: &[&str] = &["se", "as", "b", "c", "n", "o", "p", "s"];

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct RingOpen {
    atom: usize,
    bond: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    branches: Vec<(usize, usize)>,
    prev: Option<usize>,
    pending: Option<(BondOrder, usize)>,
    rings: BTreeMap<u32, RingOpen>,
    warned_stereo: bool,
}

/// Parses a SMILES string into a hydrogen-suppressed molecular graph.
///
/// Supports the organic subset, bracket atoms with charges and explicit
/// hydrogens, bonds `- = # :`, branches, ring closures (`1`–`9` and `%nn`)
/// and `.` separated components. Stereo marks are accepted and dropped.
pub fn parse_smiles(smiles: &str, drug_id: &str) -> Result<MolecularGraph> {
    if smiles.trim().is_empty() {
        return Err(Error::Contract(format!("drug {drug_id}: empty SMILES")));
    }
    let mut p = Parser {
        src: smiles.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        branches: Vec::new(),
        prev: None,
        pending: None,
        rings: BTreeMap::new(),
        warned_stereo: false,
    };
    p.run(drug_id)?;
    Ok(MolecularGraph {
        drug_id: drug_id.to_string(),
        atoms: p.atoms,
        bonds: p.bonds,
    })
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn stereo(&mut self, drug_id: &str) {
        if !self.warned_stereo {
            warn!("drug {drug_id}: stereochemistry marks are ignored");
            self.warned_stereo = true;
        }
    }

    fn run(&mut self, drug_id: &str) -> Result<()> {
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b' ' | b'\t' | b'\r' | b'\n' => break,
                b'(' => {
                    let prev = self.prev.ok_or_else(|| err(at, "branch opened before any atom"))?;
                    if self.pending.is_some() {
                        return Err(err(at, "bond symbol before '('"));
                    }
                    self.branches.push((prev, at));
                    self.pos += 1;
                }
                b')' => {
                    let (atom, _) = self.branches.pop().ok_or_else(|| err(at, "unmatched ')'"))?;
                    if self.pending.is_some() {
                        return Err(err(at, "dangling bond before ')'"));
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() {
                        return Err(err(at, "two consecutive bond symbols"));
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        b'/' | b'\\' => {
                            self.stereo(drug_id);
                            BondOrder::Single
                        }
                        _ => BondOrder::Single,
                    };
                    self.pending = Some((order, at));
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending.is_some() {
                        return Err(err(at, "bond symbol before '.'"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_closure(u32::from(c - b'0'), at)?;
                }
                b'%' => {
                    let digits = self.src.get(at + 1..at + 3);
                    let n = match digits {
                        Some([a, b]) if a.is_ascii_digit() && b.is_ascii_digit() => {
                            u32::from(a - b'0') * 10 + u32::from(b - b'0')
                        }
                        _ => return Err(err(at, "'%' must be followed by two digits")),
                    };
                    self.pos += 3;
                    self.ring_closure(n, at)?;
                }
                b'[' => {
                    let atom = self.bracket_atom(drug_id)?;
                    self.add_atom(atom, at)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, at)?;
                }
            }
        }
        if let Some((_, at)) = self.branches.first() {
            return Err(err(*at, "unmatched '('"));
        }
        if let Some((n, open)) = self.rings.iter().next() {
            return Err(err(open.offset, format!("ring closure {n} never closed")));
        }
        if let Some((_, at)) = self.pending {
            return Err(err(at, "bond symbol at end of input"));
        }
        if self.atoms.is_empty() {
            return Err(err(0, "no atoms"));
        }
        Ok(())
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn connect(&mut self, a: usize, b: usize, order: BondOrder, at: usize) -> Result<()> {
        if a == b {
            return Err(err(at, "atom bonded to itself"));
        }
        let dup = self
            .bonds
            .iter()
            .any(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a));
        if dup {
            return Err(err(at, "duplicate bond between the same atoms"));
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom, at: usize) -> Result<()> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let order = match self.pending.take() {
                Some((o, _)) => o,
                None => self.implicit_order(prev, idx),
            };
            self.connect(prev, idx, order, at)?;
        } else if let Some((_, bat)) = self.pending {
            return Err(err(bat, "bond symbol without a preceding atom"));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self, n: u32, at: usize) -> Result<()> {
        let atom = self.prev.ok_or_else(|| err(at, "ring closure before any atom"))?;
        let bond = self.pending.take().map(|(o, _)| o);
        match self.rings.remove(&n) {
            None => {
                self.rings.insert(n, RingOpen { atom, bond, offset: at });
            }
            Some(open) => {
                let order = match (open.bond, bond) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(err(at, format!("ring closure {n} has conflicting bond orders")))
                    }
                    (Some(x), _) | (None, Some(x)) => x,
                    (None, None) => self.implicit_order(open.atom, atom),
                };
                self.connect(open.atom, atom, order, at)?;
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom> {
        let at = self.pos;
        let rest = &self.src[at..];
        let (symbol, aromatic, len) = match rest {
            [b'C', b'l', ..] => ("Cl", false, 2),
            [b'B', b'r', ..] => ("Br", false, 2),
            [b'B', ..] => ("B", false, 1),
            [b'C', ..] => ("C", false, 1),
            [b'N', ..] => ("N", false, 1),
            [b'O', ..] => ("O", false, 1),
            [b'P', ..] => ("P", false, 1),
            [b'S', ..] => ("S", false, 1),
            [b'F', ..] => ("F", false, 1),
            [b'I', ..] => ("I", false, 1),
            [b'b', ..] => ("B", true, 1),
            [b'c', ..] => ("C", true, 1),
            [b'n', ..] => ("N", true, 1),
            [b'o', ..] => ("O", true, 1),
            [b'p', ..] => ("P", true, 1),
            [b's', ..] => ("S", true, 1),
            [b'*', ..] => ("*", false, 1),
            _ => {
                let shown = std::str::from_utf8(rest)
                    .ok()
                    .and_then(|s| s.chars().next())
                    .unwrap_or('?');
                return Err(err(at, format!("unexpected character {shown:?}")));
            }
        };
        self.pos += len;
        Ok(Atom {
            symbol: symbol.to_string(),
            aromatic,
            charge: 0,
            hydrogens: None,
        })
    }

    fn bracket_atom(&mut self, drug_id: &str) -> Result<Atom> {
        let open = self.pos;
        let close = self.src[open..]
            .iter()
            .position(|&b| b == b']')
            .map(|i| open + i)
            .ok_or_else(|| err(open, "unterminated bracket atom"))?;
        let body = &self.src[open + 1..close];
        let mut i = 0;
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1;
        }
        let sym_at = open + 1 + i;
        let rest = &body[i..];
        let text = |n: usize| std::str::from_utf8(&rest[..n]).unwrap_or("");
        let (symbol, aromatic, len) = if rest.first() == Some(&b'*') {
            ("*".to_string(), false, 1)
        } else if let Some(a) = AROMATIC_BRACKET.iter().find(|a| rest.starts_with(a.as_bytes())) {
            let mut s = a.to_string();
            s[..1].make_ascii_uppercase();
            (s, true, a.len())
        } else if rest.len() >= 2
            && rest[0].is_ascii_uppercase()
            && rest[1].is_ascii_lowercase()
            && ELEMENTS.contains(&text(2))
        {
            (text(2).to_string(), false, 2)
        } else if !rest.is_empty() && ELEMENTS.contains(&text(1)) {
            (text(1).to_string(), false, 1)
        } else {
            return Err(err(sym_at, "unknown element in bracket atom"));
        };
        i += len;

        if body.get(i) == Some(&b'@') {
            self.stereo(drug_id);
            while body.get(i) == Some(&b'@') {
                i += 1;
            }
            while i < body.len() && body[i].is_ascii_uppercase() && body[i] != b'H' {
                i += 1;
            }
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }

        let mut hydrogens = None;
        if body.get(i) == Some(&b'H') {
            i += 1;
            let mut n = 0u8;
            let mut seen = false;
            while i < body.len() && body[i].is_ascii_digit() {
                n = n.saturating_mul(10).saturating_add(body[i] - b'0');
                seen = true;
                i += 1;
            }
            hydrogens = Some(if seen { n } else { 1 });
        }

        let mut charge = 0i32;
        if let Some(&sign @ (b'+' | b'-')) = body.get(i) {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            let start = i;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
            if i > start {
                let n: i32 = std::str::from_utf8(&body[start..i])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(open + 1 + start, "bad charge"))?;
                charge = unit * n;
            } else {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }

        if body.get(i) == Some(&b':') {
            i += 1;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i != body.len() {
            return Err(err(open + 1 + i, "unexpected token inside bracket atom"));
        }
        self.pos = close + 1;
        Ok(Atom {
            symbol,
            aromatic,
            charge,
            hydrogens,
        })
    }
}
