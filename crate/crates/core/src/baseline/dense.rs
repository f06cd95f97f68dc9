//! Dense density-matrix simulation over `2^n x 2^n` complex matrices.
//!
//! Register 0 is the most significant bit of the computational basis index.

use crate::model::{Basis, Branch, Gate, GateKind, Pauli1, PrepSpec, Step, Transition};
use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

/// Largest register count the dense backend accepts.
pub const DENSE_REGISTER_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("dense simulation limited to {DENSE_REGISTER_LIMIT} registers, model has {0}")]
pub struct DimensionError(pub usize);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn pauli_matrix(p: Pauli1) -> CMatrix {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    match p {
        Pauli1::I => CMatrix::from_row_slice(2, 2, &[one, z, z, one]),
        Pauli1::X => CMatrix::from_row_slice(2, 2, &[z, one, one, z]),
        Pauli1::Y => CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        Pauli1::Z => CMatrix::from_row_slice(2, 2, &[one, z, z, -one]),
    }
}

/// Unitary of a gate on its own registers, first register most significant.
pub fn gate_matrix(kind: GateKind) -> CMatrix {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let h = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    match kind {
        GateKind::H => CMatrix::from_row_slice(2, 2, &[h, h, h, -h]),
        GateKind::S => CMatrix::from_row_slice(2, 2, &[one, z, z, c(0.0, 1.0)]),
        GateKind::X => pauli_matrix(Pauli1::X),
        GateKind::Y => pauli_matrix(Pauli1::Y),
        GateKind::Z => pauli_matrix(Pauli1::Z),
        GateKind::Cnot => {
            let mut m = CMatrix::zeros(4, 4);
            m[(0, 0)] = one;
            m[(1, 1)] = one;
            m[(2, 3)] = one;
            m[(3, 2)] = one;
            m
        }
        GateKind::Cz => {
            let mut m = CMatrix::identity(4, 4);
            m[(3, 3)] = -one;
            m
        }
    }
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Tensor product of single-qubit Paulis, first letter most significant.
pub fn pauli_string_matrix(letters: &[Pauli1]) -> CMatrix {
    letters
        .iter()
        .fold(CMatrix::identity(1, 1), |acc, p| kron(&acc, &pauli_matrix(*p)))
}

/// Lifts `op` acting on `qubits` (in that order, first most significant) to
/// the full `n`-register space.
pub fn embed(op: &CMatrix, qubits: &[usize], n: usize) -> CMatrix {
    let k = qubits.len();
    let dim = 1usize << n;
    let shifts: Vec<usize> = qubits.iter().map(|q| n - 1 - q).collect();
    let mask: usize = shifts.iter().map(|s| 1usize << s).sum();
    let sub = |i: usize| -> usize {
        shifts.iter().enumerate().fold(0, |acc, (pos, s)| acc | (((i >> s) & 1) << (k - 1 - pos)))
    };
    let mut full = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        let si = sub(i);
        let rest = i & !mask;
        for sj in 0..(1usize << k) {
            let v = op[(si, sj)];
            if v == c(0.0, 0.0) {
                continue;
            }
            let mut j = rest;
            for (pos, s) in shifts.iter().enumerate() {
                j |= ((sj >> (k - 1 - pos)) & 1) << s;
            }
            full[(i, j)] = v;
        }
    }
    full
}

fn basis_ket(b: Basis) -> [Complex64; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match b {
        Basis::Zero => [c(1.0, 0.0), c(0.0, 0.0)],
        Basis::One => [c(0.0, 0.0), c(1.0, 0.0)],
        Basis::Plus => [c(h, 0.0), c(h, 0.0)],
        Basis::Minus => [c(h, 0.0), c(-h, 0.0)],
    }
}

fn projector(letters: &[Pauli1], outcome: i8) -> CMatrix {
    let p = pauli_string_matrix(letters);
    let id = CMatrix::identity(p.nrows(), p.ncols());
    (id + p * c(outcome as f64, 0.0)) * c(0.5, 0.0)
}

/// Kraus operators `|b><0|` and `|b><1|` of a single-register reset.
fn reset_kraus(b: Basis) -> [CMatrix; 2] {
    let ket = basis_ket(b);
    let mut k0 = CMatrix::zeros(2, 2);
    let mut k1 = CMatrix::zeros(2, 2);
    k0[(0, 0)] = ket[0];
    k0[(1, 0)] = ket[1];
    k1[(0, 1)] = ket[0];
    k1[(1, 1)] = ket[1];
    [k0, k1]
}

/// Pure state of a preparation as a density matrix on all its registers.
pub fn prep_density(prep: &PrepSpec) -> CMatrix {
    let n = prep.assign.len();
    let mut psi = CMatrix::from_element(1, 1, c(1.0, 0.0));
    for b in &prep.assign {
        let ket = basis_ket(*b);
        psi = kron(&psi, &CMatrix::from_column_slice(2, 1, &ket));
    }
    for g in &prep.steps {
        psi = embed(&gate_matrix(g.kind), &g.regs, n) * psi;
    }
    &psi * psi.adjoint()
}

/// Unnormalized global density operator.
#[derive(Debug, Clone)]
pub struct DenseState {
    pub n: usize,
    pub rho: CMatrix,
}

impl DenseState {
    pub fn from_prep(prep: &PrepSpec) -> Result<Self, DimensionError> {
        let n = prep.assign.len();
        if n > DENSE_REGISTER_LIMIT {
            return Err(DimensionError(n));
        }
        Ok(DenseState { n, rho: prep_density(prep) })
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn apply_local(&mut self, op: &CMatrix, qubits: &[usize]) {
        let full = embed(op, qubits, self.n);
        self.rho = &full * &self.rho * full.adjoint();
    }

    pub fn apply_gate(&mut self, g: &Gate) {
        self.apply_local(&gate_matrix(g.kind), &g.regs);
    }

    pub fn apply_step(&mut self, step: &Step) {
        match step {
            Step::Prep { reg, basis } => {
                let [k0, k1] = reset_kraus(*basis);
                let e0 = embed(&k0, &[*reg], self.n);
                let e1 = embed(&k1, &[*reg], self.n);
                self.rho = &e0 * &self.rho * e0.adjoint() + &e1 * &self.rho * e1.adjoint();
            }
            Step::Gate(g) => self.apply_gate(g),
            Step::Project { pauli, regs, outcome } => self.apply_local(&projector(pauli, *outcome), regs),
            Step::ReplaceAll(prep) => {
                let tr = self.rho.trace();
                self.rho = prep_density(prep) * tr;
            }
        }
    }

    pub fn apply_branch(&mut self, b: &Branch) {
        for s in &b.program {
            self.apply_step(s);
        }
    }

    /// Reduced operator on `keep` (in the given order, first most significant).
    pub fn partial_trace(&self, keep: &[usize]) -> CMatrix {
        partial_trace(&self.rho, keep, self.n)
    }
}

pub fn partial_trace(rho: &CMatrix, keep: &[usize], n: usize) -> CMatrix {
    let k = keep.len();
    let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
    let kdim = 1usize << k;
    let tdim = 1usize << traced.len();
    let index = |kept: usize, t: usize| -> usize {
        let mut i = 0usize;
        for (pos, q) in keep.iter().enumerate() {
            i |= ((kept >> (k - 1 - pos)) & 1) << (n - 1 - q);
        }
        for (pos, q) in traced.iter().enumerate() {
            i |= ((t >> (traced.len() - 1 - pos)) & 1) << (n - 1 - q);
        }
        i
    };
    let mut out = CMatrix::zeros(kdim, kdim);
    for a in 0..kdim {
        for b in 0..kdim {
            let mut acc = c(0.0, 0.0);
            for t in 0..tdim {
                acc += rho[(index(a, t), index(b, t))];
            }
            out[(a, b)] = acc;
        }
    }
    out
}

/// Heisenberg-picture action of one step on an observable over `n` registers.
fn adjoint_step(x: &CMatrix, step: &Step, n: usize) -> CMatrix {
    match step {
        Step::Prep { reg, basis } => {
            let [k0, k1] = reset_kraus(*basis);
            let e0 = embed(&k0, &[*reg], n);
            let e1 = embed(&k1, &[*reg], n);
            e0.adjoint() * x * &e0 + e1.adjoint() * x * &e1
        }
        Step::Gate(g) => {
            let u = embed(&gate_matrix(g.kind), &g.regs, n);
            u.adjoint() * x * u
        }
        Step::Project { pauli, regs, outcome } => {
            let p = embed(&projector(pauli, *outcome), regs, n);
            &p * x * &p
        }
        Step::ReplaceAll(prep) => {
            let ev = (prep_density(prep) * x).trace();
            CMatrix::identity(x.nrows(), x.ncols()) * ev
        }
    }
}

/// Largest entry of `|sum_r Phi_r^dagger(I) - I|`, computed on the transition's
/// access registers only. `regs` must contain every register the branches
/// touch; a `replace_all` step requires `regs` to be all `n` registers.
pub fn trace_preservation_defect(t: &Transition, regs: &[usize], n: usize) -> f64 {
    let k = regs.len();
    let local = |q: usize| regs.iter().position(|r| *r == q).expect("register outside access set");
    let dim = 1usize << k;
    let mut total = CMatrix::zeros(dim, dim);
    for b in &t.branches {
        let mut x = CMatrix::identity(dim, dim);
        for step in b.program.iter().rev() {
            let localized = match step {
                Step::Prep { reg, basis } => Step::Prep { reg: local(*reg), basis: *basis },
                Step::Gate(g) => Step::Gate(Gate { kind: g.kind, regs: g.regs.iter().map(|q| local(*q)).collect() }),
                Step::Project { pauli, regs: rs, outcome } => Step::Project {
                    pauli: pauli.clone(),
                    regs: rs.iter().map(|q| local(*q)).collect(),
                    outcome: *outcome,
                },
                Step::ReplaceAll(prep) => {
                    if k != n {
                        return f64::INFINITY;
                    }
                    let assign = regs.iter().map(|q| prep.assign[*q]).collect();
                    let steps = prep
                        .steps
                        .iter()
                        .map(|g| Gate { kind: g.kind, regs: g.regs.iter().map(|q| local(*q)).collect() })
                        .collect();
                    Step::ReplaceAll(PrepSpec { assign, steps })
                }
            };
            x = adjoint_step(&x, &localized, k);
        }
        total += x;
    }
    total -= CMatrix::identity(dim, dim);
    total.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
