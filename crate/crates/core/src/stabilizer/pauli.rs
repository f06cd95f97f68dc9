//! Pauli operators in `i^phase * X^x Z^z` form.

use crate::model::Pauli1;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    /// Exponent of `i`, modulo 4.
    phase: u8,
}

fn words(n: usize) -> usize {
    n.div_ceil(64).max(1)
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString { n, x: vec![0; words(n)], z: vec![0; words(n)], phase: 0 }
    }

    /// Builds `sign * P_{q0} P_{q1} ...` from letters placed on `regs`.
    pub fn from_letters(n: usize, regs: &[usize], letters: &[Pauli1], sign: i8) -> Self {
        let mut p = PauliString::identity(n);
        for (q, l) in regs.iter().zip(letters) {
            p.set_letter(*q, *l);
        }
        if sign < 0 {
            p.phase = (p.phase + 2) % 4;
        }
        p
    }

    pub fn single(n: usize, q: usize, l: Pauli1) -> Self {
        PauliString::from_letters(n, &[q], &[l], 1)
    }

    /// Parses `"+XZI"`, `"-Y"` or `"ZZ"` over `s.len()` registers.
    pub fn parse(s: &str) -> Option<Self> {
        let (sign, body) = match s.as_bytes().first() {
            Some(b'+') => (1, &s[1..]),
            Some(b'-') => (-1, &s[1..]),
            _ => (1, s),
        };
        let letters = body.chars().map(Pauli1::from_char).collect::<Option<Vec<_>>>()?;
        let regs: Vec<usize> = (0..letters.len()).collect();
        Some(PauliString::from_letters(letters.len(), &regs, &letters, sign))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x(&self, q: usize) -> bool {
        (self.x[q / 64] >> (q % 64)) & 1 == 1
    }

    pub fn z(&self, q: usize) -> bool {
        (self.z[q / 64] >> (q % 64)) & 1 == 1
    }

    /// Bit `col` of the concatenated `(x | z)` vector.
    pub fn bit(&self, col: usize) -> bool {
        if col < self.n {
            self.x(col)
        } else {
            self.z(col - self.n)
        }
    }

    fn set_x(&mut self, q: usize, v: bool) {
        let m = 1u64 << (q % 64);
        if v {
            self.x[q / 64] |= m
        } else {
            self.x[q / 64] &= !m
        }
    }

    fn set_z(&mut self, q: usize, v: bool) {
        let m = 1u64 << (q % 64);
        if v {
            self.z[q / 64] |= m
        } else {
            self.z[q / 64] &= !m
        }
    }

    /// Replaces the factor on `q` by the literal letter, keeping the literal sign.
    pub fn set_letter(&mut self, q: usize, l: Pauli1) {
        let old_y = self.x(q) && self.z(q);
        let (x, z) = l.bits();
        self.set_x(q, x);
        self.set_z(q, z);
        let new_y = x && z;
        // Y = i X Z
        self.phase = (self.phase + 4 + new_y as u8 - old_y as u8) % 4;
    }

    pub fn letter(&self, q: usize) -> Pauli1 {
        Pauli1::from_bits(self.x(q), self.z(q))
    }

    pub fn is_identity(&self) -> bool {
        self.x.iter().all(|w| *w == 0) && self.z.iter().all(|w| *w == 0)
    }

    fn y_count(&self) -> u32 {
        self.x.iter().zip(&self.z).map(|(a, b)| (a & b).count_ones()).sum()
    }

    /// `+1` or `-1` in front of the letter string; `None` for anti-Hermitian operators.
    pub fn sign(&self) -> Option<i8> {
        match (self.phase as u32 + 4 - self.y_count() % 4) % 4 {
            0 => Some(1),
            2 => Some(-1),
            _ => None,
        }
    }

    pub fn negate(&mut self) {
        self.phase = (self.phase + 2) % 4;
    }

    pub fn negated(&self) -> Self {
        let mut p = self.clone();
        p.negate();
        p
    }

    pub fn commutes(&self, other: &PauliString) -> bool {
        let mut parity = 0u32;
        for w in 0..self.x.len() {
            parity += ((self.x[w] & other.z[w]) ^ (self.z[w] & other.x[w])).count_ones();
        }
        parity % 2 == 0
    }

    /// Operator product `self * other`.
    pub fn mul(&self, other: &PauliString) -> PauliString {
        debug_assert_eq!(self.n, other.n);
        // Z^z1 X^x2 = (-1)^{z1.x2} X^x2 Z^z1
        let swaps: u32 = self.z.iter().zip(&other.x).map(|(a, b)| (a & b).count_ones()).sum();
        PauliString {
            n: self.n,
            x: self.x.iter().zip(&other.x).map(|(a, b)| a ^ b).collect(),
            z: self.z.iter().zip(&other.z).map(|(a, b)| a ^ b).collect(),
            phase: ((self.phase as u32 + other.phase as u32 + 2 * (swaps % 2)) % 4) as u8,
        }
    }

    /// Letters restricted to `regs`, in that order.
    pub fn label_on(&self, regs: &[usize]) -> String {
        regs.iter().map(|q| self.letter(*q).to_char()).collect()
    }

    /// True if the operator acts as identity on every register outside `regs`.
    pub fn supported_in(&self, regs: &[usize]) -> bool {
        (0..self.n).all(|q| regs.contains(&q) || (!self.x(q) && !self.z(q)))
    }

    /// Strips the factors on `regs`, keeping the phase.
    pub(crate) fn without(&self, regs: &[usize]) -> PauliString {
        let mut p = self.clone();
        for &q in regs {
            p.set_x(q, false);
            p.set_z(q, false);
        }
        p
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign() {
            Some(1) => f.write_str("+")?,
            Some(_) => f.write_str("-")?,
            None => write!(f, "(i^{})", self.phase)?,
        }
        for q in 0..self.n {
            write!(f, "{}", self.letter(q).to_char())?;
        }
        Ok(())
    }
}
