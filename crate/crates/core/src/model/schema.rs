//! JSON model-file format.

use super::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetNode {
    pub id: String,
    pub label: String,
}

/// Observation target as written in a model or target file. A bare list of
/// labels is shorthand for a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Chain(Vec<String>),
    Pomset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        nodes: Vec<TargetNode>,
        #[serde(default)]
        order: Vec<[String; 2]>,
    },
    NamedChain {
        name: String,
        chain: Vec<String>,
    },
}

impl TargetSpec {
    pub fn name(&self) -> Option<&str> {
        match self {
            TargetSpec::Chain(_) => None,
            TargetSpec::Pomset { name, .. } => name.as_deref(),
            TargetSpec::NamedChain { name, .. } => Some(name),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawRegister {
    Name(String),
    Decl {
        id: String,
        #[serde(default = "qubit_dim")]
        dim: u32,
    },
}

fn qubit_dim() -> u32 {
    2
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGate {
    name: String,
    regs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrep {
    #[serde(default)]
    assign: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    steps: Vec<RawGate>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "mode", deny_unknown_fields)]
enum RawSecret {
    #[serde(rename = "marking-set")]
    MarkingSet { markings: Vec<Vec<String>> },
    #[serde(rename = "event-predicate")]
    EventPredicate { transitions: Vec<String> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawStep {
    Prep { reg: String, basis: String },
    Gate(RawGate),
    Project { pauli: String, regs: Vec<String>, outcome: i8 },
    ReplaceAll(RawPrep),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBranch {
    outcome: String,
    label: String,
    #[serde(default)]
    program: Vec<RawStep>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    id: String,
    #[serde(default)]
    pre: Vec<String>,
    #[serde(default)]
    post: Vec<String>,
    #[serde(default)]
    access: Vec<String>,
    #[serde(default)]
    controllable: bool,
    #[serde(default)]
    masking: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    evaluation_cut: bool,
    branches: Vec<RawBranch>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    control_places: Vec<String>,
    quantum_registers: Vec<RawRegister>,
    observable_alphabet: Vec<String>,
    initial_marking: Vec<String>,
    initial_state: RawPrep,
    attacker_interface: Vec<String>,
    secret: RawSecret,
    transitions: Vec<RawTransition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    targets: Vec<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    architecture: Option<serde_json::Value>,
}

/// Parses and validates a model file. Validation errors (but not warnings)
/// are fatal.
pub fn parse_model(text: &str) -> Result<NetModel, ModelError> {
    let model = parse_model_unchecked(text)?;
    let errors: Vec<Diagnostic> = validate_model(&model)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .collect();
    if errors.is_empty() {
        Ok(model)
    } else {
        Err(ModelError::Validation(errors))
    }
}

/// Parses and resolves identifiers without running the structural checks.
pub fn parse_model_unchecked(text: &str) -> Result<NetModel, ModelError> {
    let raw: RawModel = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    resolve(raw)
}

pub fn serialize_model(model: &NetModel) -> String {
    let raw = unresolve(model);
    let mut s = serde_json::to_string_pretty(&raw).expect("model serialization cannot fail");
    s.push('\n');
    s
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a String>) -> Result<(), ModelError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(ModelError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

struct Resolver<'a> {
    places: &'a [String],
    registers: &'a [String],
}

impl Resolver<'_> {
    fn place(&self, id: &str) -> Result<usize, ModelError> {
        self.places
            .iter()
            .position(|p| p == id)
            .ok_or_else(|| ModelError::UnknownPlace(id.to_string()))
    }

    fn register(&self, id: &str) -> Result<usize, ModelError> {
        self.registers
            .iter()
            .position(|r| r == id)
            .ok_or_else(|| ModelError::UnknownRegister(id.to_string()))
    }

    fn places(&self, ids: &[String]) -> Result<BTreeSet<usize>, ModelError> {
        ids.iter().map(|id| self.place(id)).collect()
    }

    fn registers(&self, ids: &[String]) -> Result<BTreeSet<usize>, ModelError> {
        ids.iter().map(|id| self.register(id)).collect()
    }

    fn gate(&self, g: &RawGate) -> Result<Gate, ModelError> {
        let kind = GateKind::from_name(&g.name).ok_or_else(|| {
            ModelError::Invalid(format!("unsupported gate `{}` (allowed: H, S, X, Y, Z, CNOT, CZ)", g.name))
        })?;
        if g.regs.len() != kind.arity() {
            return Err(ModelError::Invalid(format!(
                "gate {} expects {} register(s), got {}",
                g.name,
                kind.arity(),
                g.regs.len()
            )));
        }
        let regs = g.regs.iter().map(|r| self.register(r)).collect::<Result<Vec<_>, _>>()?;
        if kind.arity() == 2 && regs[0] == regs[1] {
            return Err(ModelError::Invalid(format!("gate {} applied to the same register twice", g.name)));
        }
        Ok(Gate { kind, regs })
    }

    fn prep(&self, p: &RawPrep) -> Result<PrepSpec, ModelError> {
        let mut assign = vec![None; self.registers.len()];
        for (reg, basis) in &p.assign {
            let q = self.register(reg)?;
            let b = Basis::from_symbol(basis).ok_or_else(|| {
                ModelError::Invalid(format!("unknown basis state `{basis}` (allowed: 0, 1, +, -)"))
            })?;
            assign[q] = Some(b);
        }
        let assign = assign
            .into_iter()
            .enumerate()
            .map(|(q, b)| {
                b.ok_or_else(|| {
                    ModelError::Invalid(format!(
                        "malformed preparation: register `{}` is not assigned",
                        self.registers[q]
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let steps = p.steps.iter().map(|g| self.gate(g)).collect::<Result<Vec<_>, _>>()?;
        Ok(PrepSpec { assign, steps })
    }

    fn step(&self, s: &RawStep) -> Result<Step, ModelError> {
        Ok(match s {
            RawStep::Prep { reg, basis } => Step::Prep {
                reg: self.register(reg)?,
                basis: Basis::from_symbol(basis)
                    .ok_or_else(|| ModelError::Invalid(format!("unknown basis state `{basis}`")))?,
            },
            RawStep::Gate(g) => Step::Gate(self.gate(g)?),
            RawStep::Project { pauli, regs, outcome } => {
                let letters = pauli
                    .chars()
                    .map(|c| {
                        Pauli1::from_char(c)
                            .ok_or_else(|| ModelError::Invalid(format!("bad Pauli letter `{c}` in `{pauli}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if letters.len() != regs.len() {
                    return Err(ModelError::Invalid(format!(
                        "Pauli string `{pauli}` has {} letters but {} registers",
                        letters.len(),
                        regs.len()
                    )));
                }
                if *outcome != 1 && *outcome != -1 {
                    return Err(ModelError::Invalid(format!("projection outcome must be 1 or -1, got {outcome}")));
                }
                let regs = regs.iter().map(|r| self.register(r)).collect::<Result<Vec<_>, _>>()?;
                let distinct: BTreeSet<_> = regs.iter().collect();
                if distinct.len() != regs.len() {
                    return Err(ModelError::Invalid(format!("projection `{pauli}` repeats a register")));
                }
                Step::Project { pauli: letters, regs, outcome: *outcome }
            }
            RawStep::ReplaceAll(p) => Step::ReplaceAll(self.prep(p)?),
        })
    }
}

fn parse_label(s: &str) -> Label {
    match s {
        "tau" | "τ" => Label::Tau,
        other => Label::Obs(other.to_string()),
    }
}

fn resolve(raw: RawModel) -> Result<NetModel, ModelError> {
    check_unique(raw.control_places.iter())?;
    let mut registers = Vec::new();
    for r in &raw.quantum_registers {
        match r {
            RawRegister::Name(id) => registers.push(id.clone()),
            RawRegister::Decl { id, dim } => {
                if *dim != 2 {
                    return Err(ModelError::Invalid(format!(
                        "register `{id}` has dimension {dim}; only qubits are supported"
                    )));
                }
                registers.push(id.clone());
            }
        }
    }
    check_unique(registers.iter())?;
    check_unique(raw.transitions.iter().map(|t| &t.id))?;
    check_unique(raw.observable_alphabet.iter())?;

    let rs = Resolver { places: &raw.control_places, registers: &registers };
    let mut transitions = Vec::with_capacity(raw.transitions.len());
    for t in &raw.transitions {
        let mut branches = Vec::with_capacity(t.branches.len());
        for b in &t.branches {
            let program = b.program.iter().map(|s| rs.step(s)).collect::<Result<Vec<_>, _>>()?;
            branches.push(Branch { outcome: b.outcome.clone(), label: parse_label(&b.label), program });
        }
        transitions.push(Transition {
            id: t.id.clone(),
            pre: rs.places(&t.pre)?,
            post: rs.places(&t.post)?,
            access: rs.registers(&t.access)?,
            branches,
            controllable: t.controllable,
            masking: t.masking,
            evaluation_cut: t.evaluation_cut,
        });
    }
    let transition_index = |id: &str| {
        transitions
            .iter()
            .position(|t: &Transition| t.id == id)
            .ok_or_else(|| ModelError::UnknownTransition(id.to_string()))
    };
    let secret = match &raw.secret {
        RawSecret::MarkingSet { markings } => SecretSpec::MarkingSet(
            markings.iter().map(|m| rs.places(m).map(Marking)).collect::<Result<Vec<_>, _>>()?,
        ),
        RawSecret::EventPredicate { transitions: ts } => SecretSpec::EventPredicate(
            ts.iter().map(|t| transition_index(t)).collect::<Result<BTreeSet<_>, _>>()?,
        ),
    };
    let interface: BTreeSet<usize> = rs.registers(&raw.attacker_interface)?;
    Ok(NetModel {
        name: raw.name.clone(),
        places: raw.control_places.clone(),
        alphabet: raw.observable_alphabet.iter().cloned().collect(),
        initial_marking: Marking(rs.places(&raw.initial_marking)?),
        initial_state: rs.prep(&raw.initial_state)?,
        attacker_interface: interface.into_iter().collect(),
        secret,
        targets: raw.targets.clone(),
        architecture: raw.architecture.clone(),
        transitions,
        registers,
    })
}

fn unresolve(m: &NetModel) -> RawModel {
    let place = |p: &usize| m.places[*p].clone();
    let reg = |q: &usize| m.registers[*q].clone();
    let gate = |g: &Gate| RawGate { name: g.kind.name().to_string(), regs: g.regs.iter().map(reg).collect() };
    let prep = |p: &PrepSpec| RawPrep {
        assign: p
            .assign
            .iter()
            .enumerate()
            .map(|(q, b)| (m.registers[q].clone(), b.symbol().to_string()))
            .collect(),
        steps: p.steps.iter().map(gate).collect(),
    };
    let step = |s: &Step| match s {
        Step::Prep { reg: q, basis } => RawStep::Prep { reg: reg(q), basis: basis.symbol().to_string() },
        Step::Gate(g) => RawStep::Gate(gate(g)),
        Step::Project { pauli, regs, outcome } => RawStep::Project {
            pauli: pauli.iter().map(|p| p.to_char()).collect(),
            regs: regs.iter().map(reg).collect(),
            outcome: *outcome,
        },
        Step::ReplaceAll(p) => RawStep::ReplaceAll(prep(p)),
    };
    RawModel {
        name: m.name.clone(),
        control_places: m.places.clone(),
        quantum_registers: m.registers.iter().cloned().map(RawRegister::Name).collect(),
        observable_alphabet: m.alphabet.iter().cloned().collect(),
        initial_marking: m.initial_marking.places().map(|p| place(&p)).collect(),
        initial_state: prep(&m.initial_state),
        attacker_interface: m.attacker_interface.iter().map(reg).collect(),
        secret: match &m.secret {
            SecretSpec::MarkingSet(ms) => RawSecret::MarkingSet {
                markings: ms.iter().map(|mk| mk.places().map(|p| place(&p)).collect()).collect(),
            },
            SecretSpec::EventPredicate(ts) => RawSecret::EventPredicate {
                transitions: ts.iter().map(|t| m.transitions[*t].id.clone()).collect(),
            },
        },
        transitions: m
            .transitions
            .iter()
            .map(|t| RawTransition {
                id: t.id.clone(),
                pre: t.pre.iter().map(place).collect(),
                post: t.post.iter().map(place).collect(),
                access: t.access.iter().map(reg).collect(),
                controllable: t.controllable,
                masking: t.masking,
                evaluation_cut: t.evaluation_cut,
                branches: t
                    .branches
                    .iter()
                    .map(|b| RawBranch {
                        outcome: b.outcome.clone(),
                        label: b.label.to_string(),
                        program: b.program.iter().map(step).collect(),
                    })
                    .collect(),
            })
            .collect(),
        targets: m.targets.clone(),
        architecture: m.architecture.clone(),
    }
}
