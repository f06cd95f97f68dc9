//! Randomized equivalence suites. Each suite checks the exact engine against
//! an independent reference computation and reports per-case failures.

use crate::baseline::dense::DenseState;
use crate::baseline::{interleaving_aggregate, max_deviation, InterleavingOptions};
use crate::engine::{explore, ExploreOptions, TableauBackend};
use crate::gen::{self, ModelParams};
use crate::model::{structurally_independent, Basis, GateKind, Marking, NetModel, Pauli1, Step};
use crate::rational::{half, to_f64, Rational};
use crate::stabilizer::Tableau;
use crate::unfolding::{linearizations, replay_marking, Pomset, TargetFamily};
use crate::verifier;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use std::collections::BTreeMap;

pub const DENSE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Default)]
pub struct SuiteResult {
    pub name: String,
    pub total: usize,
    pub passed: usize,
    /// `(case, message)` for every failing case.
    pub failures: Vec<(usize, String)>,
}

impl SuiteResult {
    fn new(name: &str) -> Self {
        SuiteResult { name: name.to_string(), ..Default::default() }
    }

    fn record(&mut self, case: usize, r: Result<(), String>) {
        self.total += 1;
        match r {
            Ok(()) => self.passed += 1,
            Err(e) => self.failures.push((case, e)),
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        format!("{}: {}/{} pass", self.name, self.passed, self.total)
    }
}

fn case_seed(seed: u64, case: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(case as u64)
}

fn deviation(a: &crate::baseline::dense::CMatrix, b: &crate::baseline::dense::CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// One random program on at most `max_qubits` registers, checked step by step.
pub fn program_case(seed: u64, max_qubits: usize) -> Result<(), String> {
    let mut rng = gen::rng(seed);
    let n = rng.gen_range(1..=max_qubits.max(1));
    let len = rng.gen_range(0..=30);
    let (prep, steps) = gen::random_program(&mut rng, n, len);
    let mut t = Tableau::init(&prep, n).map_err(|e| e.to_string())?;
    let mut d = DenseState::from_prep(&prep).map_err(|e| e.to_string())?;
    let ratios = [Rational::zero(), half(), Rational::one()];
    for (i, s) in steps.iter().enumerate() {
        let before = t.weight().clone();
        t.apply_step(s).map_err(|e| e.to_string())?;
        d.apply_step(s);
        if matches!(s, Step::Project { .. }) && !before.is_zero() {
            let r = t.weight() / &before;
            if !ratios.contains(&r) {
                return Err(format!("step {i}: projection scaled the weight by {r}"));
            }
        }
    }
    let dev = deviation(&t.to_dense().map_err(|e| e.to_string())?, &d.rho);
    if dev > DENSE_TOLERANCE {
        return Err(format!("denotation deviates by {dev:e}"));
    }
    if (to_f64(t.weight()) - d.trace()).abs() > DENSE_TOLERANCE {
        return Err(format!("weight {} vs trace {}", t.weight(), d.trace()));
    }
    let k = rng.gen_range(1..=n);
    let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
    keep.sort_unstable();
    let reduced = t.reduce_to(&keep).map_err(|e| e.to_string())?;
    let dev = max_deviation(&d.partial_trace(&keep), &reduced);
    if dev > DENSE_TOLERANCE {
        return Err(format!("partial trace on {keep:?} deviates by {dev:e}"));
    }
    Ok(())
}

pub fn program_suite(seed: u64, cases: usize, max_qubits: usize) -> SuiteResult {
    let mut r = SuiteResult::new("stabilizer-vs-dense");
    for c in 0..cases {
        r.record(c, program_case(case_seed(seed, c), max_qubits));
    }
    r
}

/// Deterministic classical state along one firing sequence.
#[derive(Clone)]
struct Classical {
    bits: Vec<u8>,
    prob: Rational,
}

fn classical_prep(m: &NetModel) -> Result<Vec<u8>, String> {
    if !m.initial_state.steps.is_empty() {
        return Err("initial state is not diagonal".into());
    }
    m.initial_state
        .assign
        .iter()
        .map(|b| match b {
            Basis::Zero => Ok(0),
            Basis::One => Ok(1),
            _ => Err("initial state is not diagonal".to_string()),
        })
        .collect()
}

/// Runs a branch program on a classical state. A fair coin appears as a
/// `+`/`-` reset followed by a one-register `Z` projection.
fn classical_branch(s: &Classical, program: &[Step]) -> Result<Classical, String> {
    let mut out = s.clone();
    let mut coin: Option<usize> = None;
    for step in program {
        match step {
            Step::Prep { reg, basis } => match basis {
                Basis::Zero | Basis::One => out.bits[*reg] = (*basis == Basis::One) as u8,
                _ => coin = Some(*reg),
            },
            Step::Gate(g) => {
                if g.regs.iter().any(|r| Some(*r) == coin) {
                    return Err("gate on an unresolved coin".into());
                }
                match g.kind {
                    GateKind::X | GateKind::Y => out.bits[g.regs[0]] ^= 1,
                    GateKind::Z | GateKind::S | GateKind::Cz => {}
                    GateKind::Cnot => out.bits[g.regs[1]] ^= out.bits[g.regs[0]],
                    GateKind::H => return Err("H is not classical".into()),
                }
            }
            Step::Project { pauli, regs, outcome } => {
                if pauli.iter().any(|p| !matches!(p, Pauli1::Z | Pauli1::I)) {
                    return Err("non-diagonal projection".into());
                }
                let on: Vec<usize> = regs.iter().zip(pauli).filter(|(_, p)| **p == Pauli1::Z).map(|(r, _)| *r).collect();
                let want = (*outcome < 0) as u8;
                match coin {
                    Some(c) if on.contains(&c) => {
                        let rest = on.iter().filter(|&&r| r != c).fold(0u8, |a, &r| a ^ out.bits[r]);
                        out.bits[c] = want ^ rest;
                        out.prob *= half();
                        coin = None;
                    }
                    _ => {
                        let parity = on.iter().fold(0u8, |a, &r| a ^ out.bits[r]);
                        if parity != want {
                            out.prob = Rational::zero();
                        }
                    }
                }
            }
            Step::ReplaceAll(prep) => {
                if !prep.steps.is_empty() || prep.assign.iter().any(|b| !b.is_diagonal()) {
                    return Err("non-diagonal replacement".into());
                }
                out.bits = prep.assign.iter().map(|b| (*b == Basis::One) as u8).collect();
            }
        }
    }
    if coin.is_some() {
        return Err("coin left unresolved".into());
    }
    Ok(out)
}

/// Classical posterior distributions over interface bit strings, per secrecy
/// class, for a one-token model and a chain target.
pub fn classical_posteriors(m: &NetModel, target: &[String]) -> Result<[BTreeMap<Vec<u8>, Rational>; 2], String> {
    if m.initial_marking.0.len() != 1 {
        return Err("classical oracle needs a one-token model".into());
    }
    let secret_ts = match &m.secret {
        crate::model::SecretSpec::EventPredicate(s) => s.clone(),
        _ => return Err("classical oracle needs an event-predicate secret".into()),
    };
    let mut out: [BTreeMap<Vec<u8>, Rational>; 2] = Default::default();
    let start = Classical { bits: classical_prep(m)?, prob: Rational::one() };

    fn visit(
        m: &NetModel,
        target: &[String],
        secret_ts: &std::collections::BTreeSet<usize>,
        marking: &Marking,
        s: &Classical,
        secret: bool,
        seen: usize,
        out: &mut [BTreeMap<Vec<u8>, Rational>; 2],
    ) -> Result<(), String> {
        let mut tau_child = false;
        for (ti, t) in m.transitions.iter().enumerate() {
            if !crate::model::enabled(marking, t) {
                continue;
            }
            let next = crate::model::fire(marking, t).map_err(|e| e.to_string())?;
            for b in &t.branches {
                let c = classical_branch(s, &b.program)?;
                if c.prob.is_zero() {
                    continue;
                }
                let seen2 = match b.label.observable() {
                    None => {
                        tau_child = true;
                        seen
                    }
                    Some(l) if target.get(seen).map(String::as_str) == Some(l) => seen + 1,
                    Some(_) => continue,
                };
                visit(m, target, secret_ts, &next, &c, secret || secret_ts.contains(&ti), seen2, out)?;
            }
        }
        if !tau_child && seen == target.len() {
            let key: Vec<u8> = m.attacker_interface.iter().map(|&q| s.bits[q]).collect();
            let slot = out[secret as usize].entry(key).or_insert_with(Rational::zero);
            *slot += &s.prob;
        }
        Ok(())
    }
    visit(m, target, &secret_ts, &m.initial_marking, &start, false, 0, &mut out)?;
    Ok(out)
}

/// Leakage from classical posteriors, using the three-case rule.
pub fn classical_leakage(post: &[BTreeMap<Vec<u8>, Rational>; 2]) -> Rational {
    let p: Vec<Rational> = post.iter().map(|d| d.values().sum()).collect();
    if p[1].is_zero() {
        return Rational::zero();
    }
    if p[0].is_zero() {
        return Rational::one();
    }
    let mut keys: Vec<&Vec<u8>> = post[0].keys().chain(post[1].keys()).collect();
    keys.sort();
    keys.dedup();
    let zero = Rational::zero();
    let tv: Rational = keys
        .into_iter()
        .map(|k| (post[1].get(k).unwrap_or(&zero) / &p[1] - post[0].get(k).unwrap_or(&zero) / &p[0]).abs())
        .sum();
    tv * half()
}

/// Random diagonal model: verifier leakage against the classical reference.
pub fn classical_case(seed: u64) -> Result<(f64, Rational), String> {
    let mut rng = gen::rng(seed);
    let m = gen::random_model(&mut rng, ModelParams { diagonal: true, ..Default::default() });
    let labels = gen::random_walk_labels(&mut rng, &m);
    let fam = TargetFamily::new(vec![("O".into(), Pomset::chain(&labels))]).map_err(|e| e.to_string())?;
    let rep = verifier::report(&m, &fam, 0.0, &ExploreOptions::default()).map_err(|e| e.to_string())?;
    let l = rep.per_observation[0].leakage.value;
    let reference = classical_leakage(&classical_posteriors(&m, &labels)?);
    if (l - to_f64(&reference)).abs() > 1e-12 {
        return Err(format!("leakage {l} vs total variation {reference}"));
    }
    Ok((l, reference))
}

pub fn classical_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut r = SuiteResult::new("classical-conservativity");
    for c in 0..cases {
        r.record(c, classical_case(case_seed(seed, c)).map(|_| ()));
    }
    r
}

/// Observation pomset of a firing sequence from the dependency closure of
/// its steps (shared place or shared register).
pub fn trace_obs_pomset(m: &NetModel, steps: &[(usize, usize)]) -> Pomset {
    let n = steps.len();
    let dep = |a: usize, b: usize| {
        let (ta, tb) = (&m.transitions[steps[a].0], &m.transitions[steps[b].0]);
        steps[a].0 == steps[b].0 || !structurally_independent(ta, tb).unwrap_or(false)
    };
    let mut reach = vec![vec![false; n]; n];
    for j in 0..n {
        for i in (0..j).rev() {
            if dep(i, j) || (i + 1..j).any(|k| reach[i][k] && dep(k, j)) {
                reach[i][j] = true;
            }
        }
    }
    let obs: Vec<usize> = (0..n)
        .filter(|&i| !m.transitions[steps[i].0].branches[steps[i].1].label.is_tau())
        .collect();
    let labels = obs.iter().map(|&i| m.transitions[steps[i].0].branches[steps[i].1].label.to_string()).collect();
    let mut edges = Vec::new();
    for (a, &i) in obs.iter().enumerate() {
        for (b, &j) in obs.iter().enumerate() {
            if reach[i][j] {
                edges.push((a, b));
            }
        }
    }
    Pomset::new(labels, &edges).expect("sequence order is acyclic")
}

/// Replays every linearization of every explored configuration with at most
/// `max_events` events. Returns the number of linearizations checked.
pub fn linearization_check(m: &NetModel, fam: &TargetFamily, max_events: usize) -> Result<usize, String> {
    let x = explore(m, fam, &TableauBackend, &ExploreOptions::default()).map_err(|e| e.to_string())?;
    let u = &x.unfolding;
    let mut checked = 0;
    for node in &x.nodes {
        if node.config.len() > max_events {
            continue;
        }
        let expected = node.state.canonical();
        for order in linearizations(u, &node.config, max_events).map_err(|e| e.to_string())? {
            let mut t = Tableau::init(&m.initial_state, m.n_registers()).map_err(|e| e.to_string())?;
            let mut steps = Vec::new();
            for &e in &order {
                let br = u.events[e].branch;
                t.apply_branch(&m.transitions[br.transition].branches[br.branch]).map_err(|e| e.to_string())?;
                steps.push((br.transition, br.branch));
            }
            let key = u.config_key(&node.config);
            if t.canonical() != expected {
                return Err(format!("configuration {key}: denotation depends on the linearization"));
            }
            if replay_marking(u, m, &order) != node.config.marking {
                return Err(format!("configuration {key}: marking depends on the linearization"));
            }
            if trace_obs_pomset(m, &steps).canonical() != node.obs {
                return Err(format!("configuration {key}: observation pomset mismatch"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub fn concurrency_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut r = SuiteResult::new("linearization-invariance");
    for c in 0..cases {
        let mut rng = gen::rng(case_seed(seed, c));
        let comps = rng.gen_range(2..=3);
        let m = gen::random_model(&mut rng, ModelParams { components: comps, depth: 2, ..Default::default() });
        r.record(c, linearization_check(&m, &TargetFamily::unrestricted(), 8).map(|_| ()));
    }
    r
}

/// A random observation of `m` reached by some maximal configuration.
pub fn random_observed_target<R: Rng>(rng: &mut R, m: &NetModel) -> Result<Option<Pomset>, String> {
    let x = explore(m, &TargetFamily::unrestricted(), &TableauBackend, &ExploreOptions::default())
        .map_err(|e| e.to_string())?;
    let maximal: Vec<usize> = (0..x.nodes.len()).filter(|&i| !x.nodes[i].has_tau_child).collect();
    if maximal.is_empty() {
        return Ok(None);
    }
    let i = maximal[rng.gen_range(0..maximal.len())];
    Ok(Some(x.unfolding.obs_pomset(&x.nodes[i].config)))
}

/// Interleaving baseline against the exact verifier on one random model.
pub fn interleaving_case(seed: u64) -> Result<(), String> {
    let mut rng = gen::rng(seed);
    let comps = rng.gen_range(1..=2);
    let m = gen::random_model(&mut rng, ModelParams { components: comps, depth: 2, ..Default::default() });
    let Some(target) = random_observed_target(&mut rng, &m)? else { return Ok(()) };
    let fam = TargetFamily::new(vec![("O".into(), target)]).map_err(|e| e.to_string())?;
    let x = verifier::explore(&m, &fam, &ExploreOptions::default()).map_err(|e| e.to_string())?;
    let exact = verifier::aggregate(&x, &m, &fam).map_err(|e| e.to_string())?;
    let dense = interleaving_aggregate(&m, &fam, InterleavingOptions::default()).map_err(|e| e.to_string())?;
    for b in 0..2 {
        let dev = max_deviation(&dense[0].omega[b], &exact[0].classes[b].omega);
        if dev > DENSE_TOLERANCE {
            return Err(format!("class {b}: interleaving deviates by {dev:e}"));
        }
    }
    Ok(())
}

pub fn interleaving_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut r = SuiteResult::new("interleaving-vs-quotient");
    for c in 0..cases {
        r.record(c, interleaving_case(case_seed(seed, c)));
    }
    r
}
