//! Seeded random instances for the oracle and property suites.

use crate::model::{
    Basis, Branch, Gate, GateKind, Label, Marking, NetModel, Pauli1, PrepSpec, SecretSpec, Step, Transition,
};
use crate::rational::Rational;
use crate::stabilizer::{PauliCoefficients, Tableau};
use crate::unfolding::Pomset;
use crate::verifier::PosteriorAggregate;
use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::collections::BTreeSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const BASES: [Basis; 4] = [Basis::Zero, Basis::One, Basis::Plus, Basis::Minus];
const CLASSICAL_GATES: [GateKind; 6] =
    [GateKind::X, GateKind::Y, GateKind::Z, GateKind::S, GateKind::Cnot, GateKind::Cz];

fn distinct<R: Rng>(rng: &mut R, pool: &[usize], k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = pool.choose_multiple(rng, k.min(pool.len())).copied().collect();
    v.sort_unstable();
    v
}

fn random_gate<R: Rng>(rng: &mut R, regs: &[usize], kinds: &[GateKind]) -> Gate {
    let usable: Vec<GateKind> = kinds.iter().copied().filter(|k| k.arity() <= regs.len()).collect();
    let kind = *usable.choose(rng).expect("single-register gates always fit");
    let mut on: Vec<usize> = regs.choose_multiple(rng, kind.arity()).copied().collect();
    if kind.arity() == 1 {
        on.truncate(1);
    }
    Gate::new(kind, on)
}

fn random_pauli<R: Rng>(rng: &mut R, regs: &[usize], diagonal: bool) -> (Vec<Pauli1>, Vec<usize>) {
    let k = rng.gen_range(1..=regs.len());
    let on = distinct(rng, regs, k);
    let letters = on
        .iter()
        .map(|_| if diagonal { Pauli1::Z } else { *[Pauli1::X, Pauli1::Y, Pauli1::Z].choose(rng).unwrap() })
        .collect();
    (letters, on)
}

/// Random pure preparation on `n` registers.
pub fn random_prep<R: Rng>(rng: &mut R, n: usize, diagonal: bool) -> PrepSpec {
    let all: Vec<usize> = (0..n).collect();
    let assign = (0..n)
        .map(|_| if diagonal { *BASES[..2].choose(rng).unwrap() } else { *BASES.choose(rng).unwrap() })
        .collect();
    let steps = if diagonal || n == 0 {
        Vec::new()
    } else {
        (0..rng.gen_range(0..=3)).map(|_| random_gate(rng, &all, &GateKind::ALL)).collect()
    };
    PrepSpec { assign, steps }
}

/// Random program of `len` primitives on `n` registers: Clifford gates,
/// single-register resets and Pauli projections with random outcomes.
pub fn random_program<R: Rng>(rng: &mut R, n: usize, len: usize) -> (PrepSpec, Vec<Step>) {
    let all: Vec<usize> = (0..n).collect();
    let prep = random_prep(rng, n, false);
    let steps = (0..len)
        .map(|_| match rng.gen_range(0..10) {
            0..=5 => Step::Gate(random_gate(rng, &all, &GateKind::ALL)),
            6..=8 => {
                let (pauli, regs) = random_pauli(rng, &all, false);
                Step::Project { pauli, regs, outcome: if rng.gen_bool(0.5) { 1 } else { -1 } }
            }
            _ => Step::Prep { reg: rng.gen_range(0..n), basis: *BASES.choose(rng).unwrap() },
        })
        .collect();
    (prep, steps)
}

#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    pub max_registers: usize,
    /// Concurrent state-machine components, one token each.
    pub components: usize,
    /// Places per component beyond the initial one.
    pub depth: usize,
    /// Diagonal preparations and classical instruments only.
    pub diagonal: bool,
    pub max_interface: usize,
    /// Only the initial choice between the secret and the public lane is
    /// nondeterministic, and only the secret lane is secret.
    pub choice_free: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { max_registers: 3, components: 1, depth: 3, diagonal: false, max_interface: 2, choice_free: false }
    }
}

fn label<R: Rng>(rng: &mut R) -> Label {
    match rng.gen_range(0..5) {
        0 | 1 => Label::Tau,
        2 | 3 => Label::Obs("a".into()),
        _ => Label::Obs("b".into()),
    }
}

fn branch(outcome: &str, label: Label, program: Vec<Step>) -> Branch {
    Branch { outcome: outcome.into(), label, program }
}

/// Trace-preserving instrument on `access`.
fn random_instrument<R: Rng>(rng: &mut R, access: &[usize], diagonal: bool) -> Vec<Branch> {
    match rng.gen_range(0..4) {
        0 => {
            let kinds: &[GateKind] = if diagonal { &CLASSICAL_GATES } else { &GateKind::ALL };
            let program = (0..rng.gen_range(1..=3)).map(|_| Step::Gate(random_gate(rng, access, kinds))).collect();
            vec![branch("0", label(rng), program)]
        }
        1 => {
            let (pauli, regs) = random_pauli(rng, access, diagonal);
            [1i8, -1]
                .iter()
                .map(|&o| {
                    let step = Step::Project { pauli: pauli.clone(), regs: regs.clone(), outcome: o };
                    branch(if o > 0 { "0" } else { "1" }, label(rng), vec![step])
                })
                .collect()
        }
        2 => {
            let reg = *access.choose(rng).unwrap();
            let basis = if diagonal { *BASES[..2].choose(rng).unwrap() } else { *BASES.choose(rng).unwrap() };
            vec![branch("0", label(rng), vec![Step::Prep { reg, basis }])]
        }
        _ => {
            // fair coin written into one register
            let reg = *access.choose(rng).unwrap();
            let seed = if rng.gen_bool(0.5) { Basis::Plus } else { Basis::Minus };
            [1i8, -1]
                .iter()
                .map(|&o| {
                    let program = vec![
                        Step::Prep { reg, basis: seed },
                        Step::Project { pauli: vec![Pauli1::Z], regs: vec![reg], outcome: o },
                    ];
                    branch(if o > 0 { "0" } else { "1" }, label(rng), program)
                })
                .collect()
        }
    }
}

/// Random safe net made of acyclic state-machine components sharing a pool
/// of registers. Component 0 starts with a choice between a secret lane and
/// a public lane.
pub fn random_model<R: Rng>(rng: &mut R, p: ModelParams) -> NetModel {
    let n = rng.gen_range(1..=p.max_registers.max(1));
    let regs: Vec<usize> = (0..n).collect();
    let mut places = Vec::new();
    let mut transitions = Vec::new();
    let mut initial = BTreeSet::new();
    let mut secret = BTreeSet::new();
    for c in 0..p.components {
        let base = places.len();
        let depth = rng.gen_range(1..=p.depth.max(1));
        for i in 0..=depth {
            places.push(format!("c{c}_p{i}"));
        }
        initial.insert(base);
        for i in 0..depth {
            let lanes = c == 0 && i == 0;
            let fan = if lanes { 2 } else if p.choice_free { 1 } else { rng.gen_range(1..=2) };
            for k in 0..fan {
                let to = if rng.gen_bool(0.75) { i + 1 } else { rng.gen_range(i + 1..=depth) };
                let width = rng.gen_range(1..=2);
                let access = distinct(rng, &regs, width);
                let id = format!("t{c}_{i}_{k}");
                if (lanes && k == 0) || (!lanes && !p.choice_free && rng.gen_bool(0.1)) {
                    secret.insert(transitions.len());
                }
                transitions.push(Transition {
                    id,
                    pre: [base + i].into(),
                    post: [base + to].into(),
                    branches: random_instrument(rng, &access, p.diagonal),
                    access: access.into_iter().collect(),
                    controllable: rng.gen_bool(0.5),
                    masking: false,
                    evaluation_cut: false,
                });
            }
        }
    }
    let k = rng.gen_range(1..=p.max_interface.clamp(1, n));
    NetModel {
        name: "random".into(),
        places,
        registers: (0..n).map(|i| format!("q{i}")).collect(),
        alphabet: ["a".to_string(), "b".to_string()].into(),
        transitions,
        initial_marking: Marking::new(initial),
        initial_state: random_prep(rng, n, p.diagonal),
        attacker_interface: distinct(rng, &regs, k),
        secret: SecretSpec::EventPredicate(secret),
        targets: Vec::new(),
        architecture: None,
    }
}

/// Observable labels along a random maximal firing sequence.
pub fn random_walk_labels<R: Rng>(rng: &mut R, m: &NetModel) -> Vec<String> {
    let mut marking = m.initial_marking.clone();
    let mut labels = Vec::new();
    loop {
        let enabled: Vec<&Transition> =
            m.transitions.iter().filter(|t| crate::model::enabled(&marking, t)).collect();
        let Some(t) = enabled.choose(rng) else { break };
        let b = t.branches.choose(rng).expect("transitions have branches");
        if let Some(l) = b.label.observable() {
            labels.push(l.to_string());
        }
        marking = crate::model::fire(&marking, t).expect("enabled");
    }
    labels
}

pub fn random_chain_target<R: Rng>(rng: &mut R, m: &NetModel) -> Pomset {
    Pomset::chain(&random_walk_labels(rng, m))
}

fn random_state<R: Rng>(rng: &mut R, k: usize) -> PauliCoefficients {
    let len = rng.gen_range(0..8);
    let (prep, steps) = random_program(rng, k, len);
    let mut t = Tableau::init(&prep, k).expect("valid preparation");
    for s in &steps {
        t.apply_step(s).expect("valid step");
    }
    let all: Vec<usize> = (0..k).collect();
    t.reduce_to(&all).expect("full interface")
}

/// Random nonnegative combination of stabilizer states on `k` registers with
/// positive trace.
pub fn random_aggregate<R: Rng>(rng: &mut R, k: usize, secret: bool) -> PosteriorAggregate {
    let mut omega = PauliCoefficients::zero((0..k).collect());
    while omega.trace().is_zero() {
        for _ in 0..rng.gen_range(1..=3) {
            let w = Rational::new(rng.gen_range(1..=8).into(), 8.into());
            omega.add_assign(&random_state(rng, k).scaled(&w));
        }
    }
    let p = omega.trace();
    PosteriorAggregate { secret, present: true, omega, p, witness: None }
}
