//! Weighted mixed stabilizer states with exact rational weights.
//!
//! A tableau `(w, g_1..g_s)` denotes `w / 2^n * sum_{g in <g_1..g_s>} g`.

mod pauli;

pub use pauli::PauliString;

use crate::baseline::dense::{self, CMatrix};
use crate::model::{Basis, Branch, Gate, GateKind, Pauli1, PrepSpec, Step};
use crate::rational::{fmt_ratio, half, Rational};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;

/// Interfaces above this size are refused by [`PauliCoefficients::to_dense`].
pub const DENSE_INTERFACE_LIMIT: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StabilizerError {
    #[error("register index {0} out of range for {1} registers")]
    BadRegister(usize, usize),
    #[error("interface of {0} registers exceeds the dense bound {1}")]
    InterfaceTooLarge(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tableau {
    n: usize,
    weight: Rational,
    gens: Vec<PauliString>,
}

fn basis_generator(n: usize, q: usize, b: Basis) -> PauliString {
    let (letter, sign) = match b {
        Basis::Zero => (Pauli1::Z, 1),
        Basis::One => (Pauli1::Z, -1),
        Basis::Plus => (Pauli1::X, 1),
        Basis::Minus => (Pauli1::X, -1),
    };
    PauliString::from_letters(n, &[q], &[letter], sign)
}

/// Images of `X_q` and `Z_q` under conjugation by the gate, for each gate register.
fn conjugation_images(n: usize, g: &Gate) -> Vec<(PauliString, PauliString)> {
    let p = |q: usize, l: Pauli1| PauliString::single(n, q, l);
    let neg = |s: PauliString| s.negated();
    match g.kind {
        GateKind::H => vec![(p(g.regs[0], Pauli1::Z), p(g.regs[0], Pauli1::X))],
        GateKind::S => vec![(p(g.regs[0], Pauli1::Y), p(g.regs[0], Pauli1::Z))],
        GateKind::X => vec![(p(g.regs[0], Pauli1::X), neg(p(g.regs[0], Pauli1::Z)))],
        GateKind::Y => vec![(neg(p(g.regs[0], Pauli1::X)), neg(p(g.regs[0], Pauli1::Z)))],
        GateKind::Z => vec![(neg(p(g.regs[0], Pauli1::X)), p(g.regs[0], Pauli1::Z))],
        GateKind::Cnot => {
            let (a, b) = (g.regs[0], g.regs[1]);
            vec![
                (p(a, Pauli1::X).mul(&p(b, Pauli1::X)), p(a, Pauli1::Z)),
                (p(b, Pauli1::X), p(a, Pauli1::Z).mul(&p(b, Pauli1::Z))),
            ]
        }
        GateKind::Cz => {
            let (a, b) = (g.regs[0], g.regs[1]);
            vec![
                (p(a, Pauli1::X).mul(&p(b, Pauli1::Z)), p(a, Pauli1::Z)),
                (p(a, Pauli1::Z).mul(&p(b, Pauli1::X)), p(b, Pauli1::Z)),
            ]
        }
    }
}

fn conjugate(p: &PauliString, regs: &[usize], images: &[(PauliString, PauliString)]) -> PauliString {
    let mut out = p.without(regs);
    for (q, (ix, iz)) in regs.iter().zip(images) {
        if p.x(*q) {
            out = out.mul(ix);
        }
        if p.z(*q) {
            out = out.mul(iz);
        }
    }
    out
}

/// Gaussian elimination over GF(2) on the `(x|z)` bits, visiting columns in
/// `order`. Rows are multiplied as operators so signs stay exact. Returns
/// `(rows, pivot column of each row)`.
fn row_reduce(gens: &[PauliString], order: &[usize]) -> (Vec<PauliString>, Vec<usize>) {
    let mut rows: Vec<PauliString> = gens.to_vec();
    let mut pivots = Vec::new();
    let mut r = 0;
    for &col in order {
        if r == rows.len() {
            break;
        }
        let Some(found) = (r..rows.len()).find(|&i| rows[i].bit(col)) else {
            continue;
        };
        rows.swap(r, found);
        for i in 0..rows.len() {
            if i != r && rows[i].bit(col) {
                rows[i] = rows[i].mul(&rows[r]);
            }
        }
        pivots.push(col);
        r += 1;
    }
    rows.truncate(r);
    (rows, pivots)
}

/// Column order that eliminates the `first` registers' bits before the rest.
fn order_with_first(n: usize, first: &[usize]) -> Vec<usize> {
    let mut order = Vec::with_capacity(2 * n);
    for &q in first {
        order.push(q);
        order.push(n + q);
    }
    for q in 0..n {
        if !first.contains(&q) {
            order.push(q);
            order.push(n + q);
        }
    }
    order
}

impl Tableau {
    pub fn init(prep: &PrepSpec, n: usize) -> Result<Self, StabilizerError> {
        if prep.assign.len() != n {
            return Err(StabilizerError::BadRegister(prep.assign.len(), n));
        }
        let mut t = Tableau {
            n,
            weight: Rational::one(),
            gens: prep.assign.iter().enumerate().map(|(q, b)| basis_generator(n, q, *b)).collect(),
        };
        for g in &prep.steps {
            t.apply_gate(g)?;
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self) -> &Rational {
        &self.weight
    }

    pub fn is_zero(&self) -> bool {
        self.weight.is_zero()
    }

    pub fn generators(&self) -> &[PauliString] {
        &self.gens
    }

    fn check_reg(&self, q: usize) -> Result<(), StabilizerError> {
        if q < self.n {
            Ok(())
        } else {
            Err(StabilizerError::BadRegister(q, self.n))
        }
    }

    pub fn apply_gate(&mut self, g: &Gate) -> Result<(), StabilizerError> {
        for &q in &g.regs {
            self.check_reg(q)?;
        }
        let images = conjugation_images(self.n, g);
        for gen in &mut self.gens {
            *gen = conjugate(gen, &g.regs, &images);
        }
        Ok(())
    }

    /// `Some(1)` if `q` is in the stabilizer group, `Some(-1)` if `-q` is,
    /// `None` otherwise. `q` must be Hermitian.
    pub fn membership(&self, q: &PauliString) -> Option<i8> {
        let order: Vec<usize> = (0..2 * self.n).collect();
        let (rows, pivots) = row_reduce(&self.gens, &order);
        let mut acc = q.clone();
        for (row, col) in rows.iter().zip(&pivots) {
            if acc.bit(*col) {
                acc = acc.mul(row);
            }
        }
        if acc.is_identity() {
            acc.sign()
        } else {
            None
        }
    }

    /// Applies `(I + outcome * P) . (I + outcome * P) / 4` conjugation.
    pub fn project(&mut self, p: &PauliString, outcome: i8) {
        if self.is_zero() {
            return;
        }
        let target = if outcome < 0 { p.negated() } else { p.clone() };
        if let Some(k) = self.gens.iter().position(|g| !g.commutes(&target)) {
            let pivot = self.gens[k].clone();
            for (i, g) in self.gens.iter_mut().enumerate() {
                if i != k && !g.commutes(&target) {
                    *g = g.mul(&pivot);
                }
            }
            self.gens[k] = target;
            self.weight *= half();
            return;
        }
        match self.membership(&target) {
            Some(1) => {}
            Some(_) => {
                self.weight = Rational::zero();
            }
            None => {
                self.gens.push(target);
                self.weight *= half();
            }
        }
    }

    /// Trace-preserving reset of register `q` to a basis state.
    pub fn reset(&mut self, q: usize, b: Basis) -> Result<(), StabilizerError> {
        self.check_reg(q)?;
        let order = order_with_first(self.n, &[q]);
        let (rows, pivots) = row_reduce(&self.gens, &order);
        let (qx, qz) = (q, self.n + q);
        let mut gens: Vec<PauliString> = rows
            .into_iter()
            .zip(pivots)
            .filter(|(_, col)| *col != qx && *col != qz)
            .map(|(r, _)| r)
            .collect();
        gens.push(basis_generator(self.n, q, b));
        self.gens = gens;
        Ok(())
    }

    /// `rho -> rho_prep * Tr(rho)`.
    pub fn replace(&mut self, prep: &PrepSpec) -> Result<(), StabilizerError> {
        let fresh = Tableau::init(prep, self.n)?;
        self.gens = fresh.gens;
        Ok(())
    }

    pub fn apply_step(&mut self, step: &Step) -> Result<(), StabilizerError> {
        match step {
            Step::Prep { reg, basis } => self.reset(*reg, *basis),
            Step::Gate(g) => self.apply_gate(g),
            Step::Project { pauli, regs, outcome } => {
                for &q in regs {
                    self.check_reg(q)?;
                }
                let p = PauliString::from_letters(self.n, regs, pauli, 1);
                self.project(&p, *outcome);
                Ok(())
            }
            Step::ReplaceAll(prep) => self.replace(prep),
        }
    }

    pub fn apply_branch(&mut self, b: &Branch) -> Result<(), StabilizerError> {
        for s in &b.program {
            self.apply_step(s)?;
            if self.is_zero() {
                break;
            }
        }
        Ok(())
    }

    /// Exact Pauli expansion of the reduced operator on `iface`.
    pub fn reduce_to(&self, iface: &[usize]) -> Result<PauliCoefficients, StabilizerError> {
        for &q in iface {
            self.check_reg(q)?;
        }
        let mut out = PauliCoefficients::zero(iface.to_vec());
        if self.is_zero() {
            return Ok(out);
        }
        let complement: Vec<usize> = (0..self.n).filter(|q| !iface.contains(q)).collect();
        let order = order_with_first(self.n, &complement);
        let (rows, pivots) = row_reduce(&self.gens, &order);
        let local: Vec<PauliString> = rows
            .into_iter()
            .zip(pivots)
            .filter(|(_, col)| {
                let q = if *col < self.n { *col } else { *col - self.n };
                !complement.contains(&q)
            })
            .map(|(r, _)| r)
            .collect();
        let scale = &self.weight / Rational::from_integer(BigInt::one() << iface.len());
        for mask in 0u64..(1u64 << local.len()) {
            let mut g = PauliString::identity(self.n);
            for (i, r) in local.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    g = g.mul(r);
                }
            }
            debug_assert!(g.supported_in(iface));
            let sign = g.sign().expect("stabilizer group elements are Hermitian");
            let c = if sign > 0 { scale.clone() } else { -scale.clone() };
            out.coeffs.insert(g.label_on(iface), c);
        }
        Ok(out)
    }

    /// Canonical description of the denotation: equal iff the operators are equal.
    pub fn canonical(&self) -> (Rational, Vec<String>) {
        if self.is_zero() {
            return (Rational::zero(), Vec::new());
        }
        let order: Vec<usize> = (0..2 * self.n).collect();
        let (rows, _) = row_reduce(&self.gens, &order);
        (self.weight.clone(), rows.iter().map(|r| r.to_string()).collect())
    }

    pub fn to_dense(&self) -> Result<CMatrix, StabilizerError> {
        let all: Vec<usize> = (0..self.n).collect();
        self.reduce_to(&all)?.to_dense()
    }
}

/// Hermitian operator on an interface as exact Pauli coefficients. Labels list
/// one letter per interface register, in interface order. Zero coefficients
/// are not stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliCoefficients {
    pub registers: Vec<usize>,
    pub coeffs: BTreeMap<String, Rational>,
}

impl PauliCoefficients {
    pub fn zero(registers: Vec<usize>) -> Self {
        PauliCoefficients { registers, coeffs: BTreeMap::new() }
    }

    pub fn identity_label(&self) -> String {
        "I".repeat(self.registers.len())
    }

    pub fn get(&self, label: &str) -> Rational {
        self.coeffs.get(label).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `Tr = 2^k * c_I`.
    pub fn trace(&self) -> Rational {
        self.get(&self.identity_label()) * Rational::from_integer(BigInt::one() << self.registers.len())
    }

    pub fn add_assign(&mut self, other: &PauliCoefficients) {
        assert_eq!(self.registers, other.registers, "interface mismatch");
        for (k, v) in &other.coeffs {
            let e = self.coeffs.entry(k.clone()).or_insert_with(Rational::zero);
            *e += v;
            if e.is_zero() {
                self.coeffs.remove(k);
            }
        }
    }

    pub fn scaled(&self, f: &Rational) -> PauliCoefficients {
        if f.is_zero() {
            return PauliCoefficients::zero(self.registers.clone());
        }
        PauliCoefficients {
            registers: self.registers.clone(),
            coeffs: self.coeffs.iter().map(|(k, v)| (k.clone(), v * f)).collect(),
        }
    }

    /// Divides by the trace; `None` for a zero-trace operator.
    pub fn normalized(&self) -> Option<PauliCoefficients> {
        let t = self.trace();
        if t.is_zero() {
            None
        } else {
            Some(self.scaled(&(Rational::one() / t)))
        }
    }

    pub fn to_dense(&self) -> Result<CMatrix, StabilizerError> {
        let k = self.registers.len();
        if k > DENSE_INTERFACE_LIMIT {
            return Err(StabilizerError::InterfaceTooLarge(k, DENSE_INTERFACE_LIMIT));
        }
        let dim = 1usize << k;
        let mut m = CMatrix::zeros(dim, dim);
        for (label, c) in &self.coeffs {
            let letters: Vec<Pauli1> = label.chars().map(|ch| Pauli1::from_char(ch).unwrap()).collect();
            m += dense::pauli_string_matrix(&letters) * Complex64::new(crate::rational::to_f64(c), 0.0);
        }
        Ok(m)
    }

    /// Coefficients as `label -> "n/d"` strings.
    pub fn to_strings(&self) -> BTreeMap<String, String> {
        self.coeffs.iter().map(|(k, v)| (k.clone(), fmt_ratio(v))).collect()
    }

    pub fn max_abs_coefficient(&self) -> Rational {
        self.coeffs.values().map(|v| v.abs()).max().unwrap_or_else(Rational::zero)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::rational::ratio;

    fn gens(t: &Tableau) -> Vec<String> {
        t.generators().iter().map(|g| g.to_string()).collect()
    }

    fn prep1(b: Basis) -> Tableau {
        Tableau::init(&PrepSpec { assign: vec![b], steps: vec![] }, 1).unwrap()
    }

    #[test]
    fn init_examples() {
        let t = Tableau::init(&PrepSpec::all_zero(3), 3).unwrap();
        assert_eq!(gens(&t), vec!["+ZII", "+IZI", "+IIZ"]);
        assert_eq!(*t.weight(), Rational::one());
        assert_eq!(gens(&prep1(Basis::Plus)), vec!["+X"]);

        let m = bundled::repeater();
        let t = Tableau::init(&m.initial_state, 5).unwrap();
        let mut expected = ["+XXIII", "+ZZIII", "+IIXXI", "+IIZZI", "+IIIIZ"]
            .map(|s| PauliString::parse(s).unwrap())
            .to_vec();
        for e in &expected {
            assert_eq!(t.membership(e), Some(1), "{e}");
        }
        expected.sort();
        assert_eq!(t.generators().len(), 5);
    }

    #[test]
    fn clifford_examples() {
        let mut t = prep1(Basis::Zero);
        t.apply_gate(&Gate::new(GateKind::H, [0])).unwrap();
        assert_eq!(gens(&t), vec!["+X"]);

        let mut t = Tableau::init(&PrepSpec { assign: vec![Basis::Plus, Basis::Zero], steps: vec![] }, 2).unwrap();
        t.apply_gate(&Gate::new(GateKind::Cnot, [0, 1])).unwrap();
        assert_eq!(gens(&t), vec!["+XX", "+ZZ"]);
        assert!(t.apply_gate(&Gate::new(GateKind::H, [2])).is_err());
    }

    #[test]
    fn projection_examples() {
        let z = PauliString::parse("Z").unwrap();
        let mut t = prep1(Basis::Zero);
        t.project(&z, 1);
        assert_eq!(*t.weight(), Rational::one());
        let mut t = prep1(Basis::Zero);
        t.project(&z, -1);
        assert!(t.is_zero());
        let mut t = prep1(Basis::Plus);
        t.project(&z, 1);
        assert_eq!(*t.weight(), ratio(1, 2));
        assert_eq!(gens(&t), vec!["+Z"]);
    }

    #[test]
    fn projection_on_mixed_state_adds_generator() {
        // maximally mixed qubit 1 of a Bell pair after tracing is emulated by
        // a tableau with fewer generators than registers
        let mut t = Tableau::init(&PrepSpec::all_zero(2), 2).unwrap();
        t.reset(0, Basis::Zero).unwrap();
        t.gens.retain(|g| g.to_string() != "+ZI");
        t.project(&PauliString::parse("XI").unwrap(), -1);
        assert_eq!(*t.weight(), ratio(1, 2));
        assert_eq!(t.membership(&PauliString::parse("-XI").unwrap()), Some(1));
    }

    #[test]
    fn reduce_examples() {
        let m = bundled::repeater();
        let t = Tableau::init(&m.initial_state, 5).unwrap();
        let q_m = m.register_index("q_M").unwrap();
        let r = t.reduce_to(&[q_m]).unwrap();
        assert_eq!(r.to_strings(), [("I".into(), "1/2".into()), ("Z".into(), "1/2".into())].into());
        let r = t.reduce_to(&[0]).unwrap();
        assert_eq!(r.to_strings(), [("I".into(), "1/2".into())].into());

        // GHZ on (q1, q2, qM)
        let mut g = t.clone();
        g.apply_gate(&Gate::new(GateKind::Cnot, [1, q_m])).unwrap();
        assert_eq!(g.reduce_to(&[q_m]).unwrap().to_strings(), [("I".into(), "1/2".into())].into());
    }

    #[test]
    fn replacement_keeps_weight() {
        let m = bundled::repeater();
        let t0 = Tableau::init(&m.initial_state, 5).unwrap();
        let mut t = t0.clone();
        t.project(&PauliString::parse("IZIII").unwrap(), 1);
        t.project(&PauliString::parse("IIZII").unwrap(), -1);
        assert_eq!(*t.weight(), ratio(1, 4));
        t.replace(&m.initial_state).unwrap();
        assert_eq!(*t.weight(), ratio(1, 4));
        assert_eq!(t.canonical().1, t0.canonical().1);
        let mut z = t0.clone();
        z.weight = Rational::zero();
        z.replace(&m.initial_state).unwrap();
        assert!(z.is_zero());
        let mut same = t0.clone();
        same.replace(&m.initial_state).unwrap();
        assert_eq!(same, t0);
    }

    #[test]
    fn to_dense_examples() {
        let mut c = PauliCoefficients::zero(vec![0]);
        c.coeffs.insert("I".into(), ratio(1, 2));
        let d = c.to_dense().unwrap();
        assert!((d[(0, 0)].re - 0.5).abs() < 1e-15 && (d[(1, 1)].re - 0.5).abs() < 1e-15);
        c.coeffs.insert("Z".into(), ratio(1, 2));
        let d = c.to_dense().unwrap();
        assert!((d[(0, 0)].re - 1.0).abs() < 1e-15 && d[(1, 1)].norm() < 1e-15);
        let big = PauliCoefficients::zero((0..9).collect());
        assert!(big.to_dense().is_err());
    }
}
