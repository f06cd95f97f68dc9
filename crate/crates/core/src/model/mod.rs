//! Net model: control places, qubit registers, transitions carrying branch
//! instruments, the attacker interface and the secret.
//!
//! Identifiers from the model file are resolved to dense indices on load.
//! Places, registers and transitions are addressed by their position in the
//! corresponding declaration list.

mod schema;
mod validate;

pub use schema::{parse_model, parse_model_unchecked, serialize_model, TargetNode, TargetSpec};
pub use validate::{validate_model, Diagnostic, DiagnosticKind, Severity, ORACLE_REGISTER_LIMIT};

use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("model failed validation:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Diagnostic>),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("a transition cannot be compared with itself (`{0}`)")]
    SameTransition(String),
}

/// Control marking of a safe net: the set of marked places.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Marking(pub BTreeSet<usize>);

impl Marking {
    pub fn new(places: impl IntoIterator<Item = usize>) -> Self {
        Marking(places.into_iter().collect())
    }

    pub fn contains(&self, place: usize) -> bool {
        self.0.contains(&place)
    }

    pub fn places(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    Zero,
    One,
    Plus,
    Minus,
}

impl Basis {
    pub fn symbol(self) -> &'static str {
        match self {
            Basis::Zero => "0",
            Basis::One => "1",
            Basis::Plus => "+",
            Basis::Minus => "-",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "0" => Some(Basis::Zero),
            "1" => Some(Basis::One),
            "+" => Some(Basis::Plus),
            "-" => Some(Basis::Minus),
            _ => None,
        }
    }

    pub fn is_diagonal(self) -> bool {
        matches!(self, Basis::Zero | Basis::One)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GateKind {
    H,
    S,
    X,
    Y,
    Z,
    Cnot,
    Cz,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::H => "H",
            GateKind::S => "S",
            GateKind::X => "X",
            GateKind::Y => "Y",
            GateKind::Z => "Z",
            GateKind::Cnot => "CNOT",
            GateKind::Cz => "CZ",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "H" => GateKind::H,
            "S" => GateKind::S,
            "X" => GateKind::X,
            "Y" => GateKind::Y,
            "Z" => GateKind::Z,
            "CNOT" | "CX" => GateKind::Cnot,
            "CZ" => GateKind::Cz,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            GateKind::Cnot | GateKind::Cz => 2,
            _ => 1,
        }
    }

    pub const ALL: [GateKind; 7] =
        [GateKind::H, GateKind::S, GateKind::X, GateKind::Y, GateKind::Z, GateKind::Cnot, GateKind::Cz];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Gate {
    pub kind: GateKind,
    pub regs: Vec<usize>,
}

impl Gate {
    pub fn new(kind: GateKind, regs: impl Into<Vec<usize>>) -> Self {
        Gate { kind, regs: regs.into() }
    }
}

/// Single-qubit Pauli letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli1 {
    I,
    X,
    Y,
    Z,
}

impl Pauli1 {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'I' => Some(Pauli1::I),
            'X' => Some(Pauli1::X),
            'Y' => Some(Pauli1::Y),
            'Z' => Some(Pauli1::Z),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Pauli1::I => 'I',
            Pauli1::X => 'X',
            Pauli1::Y => 'Y',
            Pauli1::Z => 'Z',
        }
    }

    /// `(x, z)` bits in the `X^x Z^z` convention.
    pub fn bits(self) -> (bool, bool) {
        match self {
            Pauli1::I => (false, false),
            Pauli1::X => (true, false),
            Pauli1::Y => (true, true),
            Pauli1::Z => (false, true),
        }
    }

    pub fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli1::I,
            (true, false) => Pauli1::X,
            (true, true) => Pauli1::Y,
            (false, true) => Pauli1::Z,
        }
    }
}

/// Pure stabilizer state preparation: per-register basis assignment followed
/// by Clifford gates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrepSpec {
    pub assign: Vec<Basis>,
    pub steps: Vec<Gate>,
}

impl PrepSpec {
    pub fn all_zero(n: usize) -> Self {
        PrepSpec { assign: vec![Basis::Zero; n], steps: Vec::new() }
    }
}

/// Primitive step of a branch program.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Step {
    /// Reset one register to a basis state (trace preserving).
    Prep { reg: usize, basis: Basis },
    Gate(Gate),
    /// Projector `(I + outcome * P) / 2` with `P` the Pauli string on `regs`.
    Project { pauli: Vec<Pauli1>, regs: Vec<usize>, outcome: i8 },
    /// Replacement channel `rho -> rho_prep * Tr(rho)`.
    ReplaceAll(PrepSpec),
}

impl Step {
    /// Registers the step touches.
    pub fn registers(&self, n: usize) -> Vec<usize> {
        match self {
            Step::Prep { reg, .. } => vec![*reg],
            Step::Gate(g) => g.regs.clone(),
            Step::Project { regs, pauli, .. } => regs
                .iter()
                .zip(pauli)
                .filter(|(_, p)| **p != Pauli1::I)
                .map(|(r, _)| *r)
                .collect(),
            Step::ReplaceAll(_) => (0..n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Tau,
    Obs(String),
}

impl Label {
    pub fn is_tau(&self) -> bool {
        matches!(self, Label::Tau)
    }

    pub fn observable(&self) -> Option<&str> {
        match self {
            Label::Tau => None,
            Label::Obs(s) => Some(s),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Tau => f.write_str("tau"),
            Label::Obs(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub outcome: String,
    pub label: Label,
    pub program: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub id: String,
    pub pre: BTreeSet<usize>,
    pub post: BTreeSet<usize>,
    pub access: BTreeSet<usize>,
    pub branches: Vec<Branch>,
    pub controllable: bool,
    pub masking: bool,
    /// Marks reset-class transitions at which posterior evaluation is cut.
    pub evaluation_cut: bool,
}

impl Transition {
    pub fn neighbourhood(&self) -> BTreeSet<usize> {
        self.pre.union(&self.post).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SecretSpec {
    /// Secret iff the configuration's final marking is one of these.
    MarkingSet(Vec<Marking>),
    /// Secret iff some event of the configuration fires one of these transitions.
    EventPredicate(BTreeSet<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    pub name: String,
    pub places: Vec<String>,
    pub registers: Vec<String>,
    pub alphabet: BTreeSet<String>,
    pub transitions: Vec<Transition>,
    pub initial_marking: Marking,
    pub initial_state: PrepSpec,
    pub attacker_interface: Vec<usize>,
    pub secret: SecretSpec,
    pub targets: Vec<TargetSpec>,
    /// Raw architecture section, interpreted by the enforcement layer.
    pub architecture: Option<serde_json::Value>,
}

impl NetModel {
    pub fn n_registers(&self) -> usize {
        self.registers.len()
    }

    pub fn place_index(&self, id: &str) -> Option<usize> {
        self.places.iter().position(|p| p == id)
    }

    pub fn register_index(&self, id: &str) -> Option<usize> {
        self.registers.iter().position(|r| r == id)
    }

    pub fn transition_index(&self, id: &str) -> Option<usize> {
        self.transitions.iter().position(|t| t.id == id)
    }

    pub fn transition(&self, id: &str) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.id == id)
    }

    pub fn marking_names(&self, m: &Marking) -> Vec<String> {
        m.places().map(|p| self.places[p].clone()).collect()
    }

    pub fn marking_of(&self, ids: &[&str]) -> Result<Marking, ModelError> {
        ids.iter()
            .map(|id| self.place_index(id).ok_or_else(|| ModelError::UnknownPlace(id.to_string())))
            .collect::<Result<BTreeSet<_>, _>>()
            .map(Marking)
    }

    /// Secrecy bit of a configuration given its final marking and the
    /// transitions of its events.
    pub fn is_secret(&self, marking: &Marking, mut fired: impl Iterator<Item = usize>) -> bool {
        match &self.secret {
            SecretSpec::MarkingSet(set) => set.iter().any(|s| s == marking),
            SecretSpec::EventPredicate(ts) => fired.any(|t| ts.contains(&t)),
        }
    }

    pub fn interface_names(&self) -> Vec<String> {
        self.attacker_interface.iter().map(|&q| self.registers[q].clone()).collect()
    }
}

/// Contact-free enabledness: `pre ⊆ M` and `(M \ pre) ∩ post = ∅`.
pub fn enabled(m: &Marking, t: &Transition) -> bool {
    t.pre.iter().all(|p| m.contains(*p))
        && t.post.iter().all(|p| t.pre.contains(p) || !m.contains(*p))
}

pub fn fire(m: &Marking, t: &Transition) -> Result<Marking, ModelError> {
    if !enabled(m, t) {
        return Err(ModelError::NotEnabled(t.id.clone()));
    }
    let mut next: BTreeSet<usize> = m.0.difference(&t.pre).copied().collect();
    next.extend(t.post.iter().copied());
    Ok(Marking(next))
}

/// Disjoint control neighbourhoods and disjoint register access.
pub fn structurally_independent(t1: &Transition, t2: &Transition) -> Result<bool, ModelError> {
    if t1.id == t2.id {
        return Err(ModelError::SameTransition(t1.id.clone()));
    }
    Ok(t1.neighbourhood().is_disjoint(&t2.neighbourhood()) && t1.access.is_disjoint(&t2.access))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn t(model: &NetModel, id: &str) -> Transition {
        model.transition(id).unwrap().clone()
    }

    #[test]
    fn repeater_firing_examples() {
        let m = bundled::repeater();
        let m0 = m.initial_marking.clone();
        assert!(enabled(&m0, &t(&m, "t_req")));
        assert!(!enabled(&m0, &t(&m, "t_ok_sec")));

        let after_req = fire(&m0, &t(&m, "t_req")).unwrap();
        assert_eq!(after_req, m.marking_of(&["p_1", "p_bg"]).unwrap());

        let after_cal = fire(&after_req, &t(&m, "t_cal")).unwrap();
        assert_eq!(after_cal, after_req);

        let sec = m.marking_of(&["p_2_sec", "p_bg"]).unwrap();
        assert_eq!(
            fire(&sec, &t(&m, "t_reject")).unwrap(),
            m.marking_of(&["p_finish", "p_bg"]).unwrap()
        );
        assert!(matches!(fire(&m0, &t(&m, "t_done_sec")), Err(ModelError::NotEnabled(_))));
    }

    #[test]
    fn contact_blocks_firing() {
        let tr = Transition {
            id: "t".into(),
            pre: [0].into(),
            post: [1].into(),
            access: BTreeSet::new(),
            branches: vec![],
            controllable: false,
            masking: false,
            evaluation_cut: false,
        };
        assert!(!enabled(&Marking::new([0, 1]), &tr));
        assert!(enabled(&Marking::new([0]), &tr));
    }

    #[test]
    fn structural_independence_examples() {
        let m = bundled::repeater();
        assert!(structurally_independent(&t(&m, "t_cal"), &t(&m, "t_req")).unwrap());
        assert!(!structurally_independent(&t(&m, "t_swap_nonsec"), &t(&m, "t_pur_sec")).unwrap());
        assert!(!structurally_independent(&t(&m, "t_ok_nonsec"), &t(&m, "t_ok_sec")).unwrap());
        assert!(matches!(
            structurally_independent(&t(&m, "t_cal"), &t(&m, "t_cal")),
            Err(ModelError::SameTransition(_))
        ));
    }

    #[test]
    fn independence_is_symmetric() {
        let m = bundled::repeater();
        for a in &m.transitions {
            for b in &m.transitions {
                if a.id != b.id {
                    assert_eq!(
                        structurally_independent(a, b).unwrap(),
                        structurally_independent(b, a).unwrap()
                    );
                }
            }
        }
    }
}
