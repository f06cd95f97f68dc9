//! Posterior aggregation over maximal unobservable reach, leakage, bounds and
//! opacity verdicts.

use crate::baseline::dense::CMatrix;
use crate::engine::{self, Exploration, ExploreError, ExploreOptions, TableauBackend};
use crate::model::{NetModel, SecretSpec};
use crate::rational::{fmt_ratio, Rational, SqrtValue};
use crate::stabilizer::{PauliCoefficients, StabilizerError, Tableau};
use crate::unfolding::TargetFamily;
use nalgebra::SymmetricEigen;
use num_traits::{One, Zero};
use serde_json::{json, Value};
use std::collections::BTreeSet;

/// Absolute tolerance of every threshold comparison.
pub const EPSILON_TOLERANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Stabilizer(#[from] StabilizerError),
    #[error("operator is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("operator does not have unit trace (trace {0})")]
    NotNormalized(f64),
    #[error("interface mismatch")]
    InterfaceMismatch,
    #[error("upper bound needs both secrecy classes to be reachable")]
    EmptySide,
}

/// Reference to a configuration: stable key plus its events as
/// `transition:outcome` in a causal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub key: String,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorAggregate {
    pub secret: bool,
    /// Unnormalized interface operator.
    pub omega: PauliCoefficients,
    pub p: Rational,
    /// Some maximal configuration contributed.
    pub present: bool,
    /// First contributing configuration in exploration order.
    pub witness: Option<Witness>,
}

/// Both secrecy classes of one target observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationAggregates {
    pub name: String,
    /// Canonical form of the observation pomset.
    pub obs: String,
    /// Index 0 is the non-secret class.
    pub classes: [PosteriorAggregate; 2],
    /// Distinct normalized interface states of every reachable configuration
    /// with this observation, per secrecy bit.
    pub states: [Vec<PauliCoefficients>; 2],
}

/// Leakage value, exact when the interface is a single register or the
/// value is degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct Leakage {
    pub value: f64,
    pub exact: Option<SqrtValue>,
}

impl Leakage {
    fn exact(v: Rational) -> Self {
        let s = SqrtValue::rational(v);
        Leakage { value: s.to_f64(), exact: Some(s) }
    }
}

pub fn explore(m: &NetModel, fam: &TargetFamily, opts: &ExploreOptions) -> Result<Exploration<Tableau>, VerifyError> {
    Ok(engine::explore(m, fam, &TableauBackend, opts)?)
}

fn witness(m: &NetModel, x: &Exploration<Tableau>, i: usize) -> Witness {
    let u = &x.unfolding;
    // interned ids grow along causality, so sorted ids form a linearization
    let events = x.nodes[i]
        .config
        .events
        .iter()
        .map(|&e| {
            let b = u.events[e].branch;
            let t = &m.transitions[b.transition];
            format!("{}:{}", t.id, t.branches[b.branch].outcome)
        })
        .collect();
    Witness { key: x.key(i), events }
}

/// Aggregates per target, in family order.
pub fn aggregate(
    x: &Exploration<Tableau>,
    m: &NetModel,
    fam: &TargetFamily,
) -> Result<Vec<ObservationAggregates>, VerifyError> {
    let iface = &m.attacker_interface;
    let mut out = Vec::new();
    for target in &fam.targets {
        let mut classes = [false, true].map(|secret| PosteriorAggregate {
            secret,
            omega: PauliCoefficients::zero(iface.clone()),
            p: Rational::zero(),
            present: false,
            witness: None,
        });
        let mut states: [BTreeSet<Vec<(String, Rational)>>; 2] = Default::default();
        for i in x.with_obs(&target.canonical) {
            let node = &x.nodes[i];
            let b = node.secret as usize;
            let reduced = node.state.reduce_to(iface)?;
            if let Some(n) = reduced.normalized() {
                states[b].insert(n.coeffs.into_iter().collect());
            }
            if node.has_tau_child {
                continue;
            }
            let agg = &mut classes[b];
            agg.omega.add_assign(&reduced);
            agg.present = true;
            if agg.witness.is_none() {
                agg.witness = Some(witness(m, x, i));
            }
        }
        for agg in &mut classes {
            agg.p = agg.omega.trace();
        }
        let states = states.map(|set| {
            set.into_iter()
                .map(|c| PauliCoefficients { registers: iface.clone(), coeffs: c.into_iter().collect() })
                .collect()
        });
        out.push(ObservationAggregates { name: target.name.clone(), obs: target.canonical.clone(), classes, states });
    }
    Ok(out)
}

/// Three-case posterior leakage.
pub fn leakage(a0: &PosteriorAggregate, a1: &PosteriorAggregate) -> Result<Leakage, VerifyError> {
    if a1.p.is_zero() {
        return Ok(Leakage::exact(Rational::zero()));
    }
    if a0.p.is_zero() {
        return Ok(Leakage::exact(Rational::one()));
    }
    let s1 = a1.omega.scaled(&(Rational::one() / &a1.p));
    let s0 = a0.omega.scaled(&(Rational::one() / &a0.p));
    state_distance(&s1, &s0)
}

/// Trace distance of two normalized interface states.
pub fn state_distance(x: &PauliCoefficients, y: &PauliCoefficients) -> Result<Leakage, VerifyError> {
    if x.registers != y.registers {
        return Err(VerifyError::InterfaceMismatch);
    }
    let mut diff = x.clone();
    diff.add_assign(&y.scaled(&-Rational::one()));
    if diff.is_zero() {
        return Ok(Leakage::exact(Rational::zero()));
    }
    if x.registers.len() == 1 {
        // D = |r - s| / 2 with Bloch vectors r = 2 c
        let sum: Rational = ["X", "Y", "Z"].iter().map(|l| diff.get(l) * diff.get(l)).sum();
        let exact = SqrtValue::sqrt_of(&sum);
        return Ok(Leakage { value: exact.to_f64(), exact: Some(exact) });
    }
    Ok(Leakage { value: half_trace_norm(&diff.to_dense()?)?, exact: None })
}

fn hermitian_defect(a: &CMatrix) -> f64 {
    (a - a.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn half_trace_norm(d: &CMatrix) -> Result<f64, VerifyError> {
    let defect = hermitian_defect(d);
    if defect > 1e-9 {
        return Err(VerifyError::NotHermitian(defect));
    }
    let h = (d + d.adjoint()) * num_complex::Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    Ok((0.5 * eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>()).clamp(0.0, 1.0))
}

/// `1/2 ||x - y||_1` of two density matrices.
pub fn trace_distance(x: &CMatrix, y: &CMatrix) -> Result<f64, VerifyError> {
    if x.shape() != y.shape() {
        return Err(VerifyError::InterfaceMismatch);
    }
    for a in [x, y] {
        let defect = hermitian_defect(a);
        if defect > 1e-9 {
            return Err(VerifyError::NotHermitian(defect));
        }
        let tr = a.trace().re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(VerifyError::NotNormalized(tr));
        }
    }
    half_trace_norm(&(x - y))
}

/// Worst pairwise distance between per-configuration posteriors of the two
/// secrecy classes.
pub fn robust_upper_bound(a: &ObservationAggregates) -> Result<Leakage, VerifyError> {
    let [v0, v1] = &a.states;
    if v0.is_empty() || v1.is_empty() {
        return Err(VerifyError::EmptySide);
    }
    let mut best: Option<Leakage> = None;
    for s1 in v1 {
        for s0 in v0 {
            let d = state_distance(s1, s0)?;
            if best.as_ref().is_none_or(|b| d.value > b.value) {
                best = Some(d);
            }
        }
    }
    Ok(best.expect("nonempty sides"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationReport {
    pub name: String,
    pub obs: String,
    pub classes: [PosteriorAggregate; 2],
    pub leakage: Leakage,
    pub upper_bound: Option<Leakage>,
}

impl ObservationReport {
    /// A secret configuration produces this observation but no other one does.
    pub fn structural_violation(&self) -> bool {
        self.classes[1].present && !self.classes[0].present
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpacityReport {
    pub interface: Vec<String>,
    pub epsilon: f64,
    pub structural_opaque: bool,
    pub epsilon_opaque: bool,
    pub worst_observation: Option<String>,
    pub per_observation: Vec<ObservationReport>,
    pub warnings: Vec<String>,
    /// Filled in by callers that read the model from a file.
    pub model_sha256: Option<String>,
}

impl OpacityReport {
    pub fn max_leakage(&self) -> f64 {
        self.per_observation.iter().map(|o| o.leakage.value).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&ObservationReport> {
        self.per_observation.iter().find(|o| o.name == name)
    }

    pub fn passed(&self) -> bool {
        self.structural_opaque && self.epsilon_opaque
    }

    pub fn to_json(&self) -> Value {
        let per: Vec<Value> = self
            .per_observation
            .iter()
            .map(|o| {
                let [a0, a1] = &o.classes;
                let wit = |a: &PosteriorAggregate| match &a.witness {
                    Some(w) => json!({"key": w.key, "events": w.events}),
                    None => Value::Null,
                };
                json!({
                    "obs": o.name,
                    "pomset": o.obs,
                    "S0": a0.present as u8,
                    "S1": a1.present as u8,
                    "p0": fmt_ratio(&a0.p),
                    "p1": fmt_ratio(&a1.p),
                    "omega0": a0.omega.to_strings(),
                    "omega1": a1.omega.to_strings(),
                    "leakage": o.leakage.value,
                    "leakage_exact": o.leakage.exact.as_ref().map(|e| e.to_string()),
                    "upper_bound": o.upper_bound.as_ref().map(|u| u.value),
                    "witness0": wit(a0),
                    "witness1": wit(a1),
                })
            })
            .collect();
        json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "model_sha256": self.model_sha256,
            "interface": self.interface,
            "structural_opaque": self.structural_opaque,
            "epsilon": self.epsilon,
            "epsilon_opaque": self.epsilon_opaque,
            "worst_observation": self.worst_observation,
            "warnings": self.warnings,
            "per_observation": per,
        })
    }
}

/// Verdicts from precomputed aggregates.
pub fn report_from(m: &NetModel, aggs: &[ObservationAggregates], epsilon: f64) -> Result<OpacityReport, VerifyError> {
    let mut per = Vec::new();
    for a in aggs {
        let [a0, a1] = &a.classes;
        let leak = leakage(a0, a1)?;
        let upper = if a0.p.is_zero() || a1.p.is_zero() { None } else { Some(robust_upper_bound(a)?) };
        per.push(ObservationReport {
            name: a.name.clone(),
            obs: a.obs.clone(),
            classes: a.classes.clone(),
            leakage: leak,
            upper_bound: upper,
        });
    }
    let structural_opaque = per.iter().all(|o| !o.structural_violation());
    let mut worst: Option<&ObservationReport> = None;
    for o in &per {
        let better = match worst {
            None => true,
            Some(w) => o.leakage.value > w.leakage.value || (o.leakage.value == w.leakage.value && o.obs < w.obs),
        };
        if better {
            worst = Some(o);
        }
    }
    let max = per.iter().map(|o| o.leakage.value).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if matches!(m.secret, SecretSpec::MarkingSet(_)) && !per.iter().any(|o| o.classes[1].present) {
        warnings.push("no secret marking is reached by any targeted observation".to_string());
    }
    Ok(OpacityReport {
        interface: m.interface_names(),
        epsilon,
        structural_opaque,
        epsilon_opaque: max <= epsilon + EPSILON_TOLERANCE,
        worst_observation: worst.map(|w| w.name.clone()),
        per_observation: per,
        warnings,
        model_sha256: None,
    })
}

pub fn report(m: &NetModel, fam: &TargetFamily, epsilon: f64, opts: &ExploreOptions) -> Result<OpacityReport, VerifyError> {
    let x = explore(m, fam, opts)?;
    let aggs = aggregate(&x, m, fam)?;
    report_from(m, &aggs, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::dense::{pauli_matrix, prep_density};
    use crate::bundled;
    use crate::model::{Basis, Pauli1, PrepSpec};
    use crate::rational::ratio;

    fn family(m: &NetModel, names: &[&str]) -> TargetFamily {
        let all = TargetFamily::from_specs(&m.targets).unwrap();
        TargetFamily::new(names.iter().map(|n| (n.to_string(), all.get(n).unwrap().pomset.clone())).collect()).unwrap()
    }

    fn coeffs(pairs: &[(&str, Rational)]) -> PauliCoefficients {
        PauliCoefficients {
            registers: vec![4],
            coeffs: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    #[test]
    fn repeater_fg_posteriors() {
        let m = bundled::repeater();
        let fam = family(&m, &["O_fg"]);
        let x = explore(&m, &fam, &ExploreOptions::default()).unwrap();
        let aggs = aggregate(&x, &m, &fam).unwrap();
        let [a0, a1] = &aggs[0].classes;
        assert_eq!(a1.omega, coeffs(&[("I", ratio(1, 2))]));
        assert_eq!(a0.omega, coeffs(&[("I", ratio(1, 2)), ("Z", ratio(1, 2))]));
        assert_eq!(a0.p, Rational::one());
        assert_eq!(a1.p, Rational::one());
        let l = leakage(a0, a1).unwrap();
        assert_eq!(l.exact.unwrap().to_string(), "1/2");
        assert_eq!(robust_upper_bound(&aggs[0]).unwrap().value, 0.5);
        let w = a1.witness.as_ref().unwrap();
        assert!(w.events.iter().any(|e| e.starts_with("t_pur_sec:")));
        assert_eq!(w.events.len(), 4);
    }

    #[test]
    fn repeater_verdicts() {
        let m = bundled::repeater();
        let opts = ExploreOptions::default();
        let r = report(&m, &family(&m, &["O_fg"]), 0.05, &opts).unwrap();
        assert!(r.structural_opaque);
        assert!(!r.epsilon_opaque);
        assert_eq!(r.worst_observation.as_deref(), Some("O_fg"));
        assert!(report(&m, &family(&m, &["O_fg"]), 0.5, &opts).unwrap().passed());

        let r = report(&m, &family(&m, &["O_fail"]), 0.05, &opts).unwrap();
        assert!(!r.structural_opaque);
        let o = r.get("O_fail").unwrap();
        assert!(o.classes[1].present && !o.classes[0].present);
        assert_eq!(o.leakage.value, 1.0);
        assert_eq!(o.upper_bound, None);
    }

    #[test]
    fn unreachable_target_is_empty() {
        let m = bundled::repeater();
        let fam = TargetFamily::new(vec![("x".into(), crate::unfolding::Pomset::chain(&["done", "req"]))]).unwrap();
        let r = report(&m, &fam, 0.0, &ExploreOptions::default()).unwrap();
        let o = &r.per_observation[0];
        assert!(!o.classes[0].present && !o.classes[1].present);
        assert!(o.classes[0].omega.is_zero() && o.classes[1].omega.is_zero());
        assert_eq!(o.leakage.value, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn trace_distance_examples() {
        let plus = prep_density(&PrepSpec { assign: vec![Basis::Plus], steps: vec![] });
        let zero = prep_density(&PrepSpec { assign: vec![Basis::Zero], steps: vec![] });
        let one = prep_density(&PrepSpec { assign: vec![Basis::One], steps: vec![] });
        assert!((trace_distance(&plus, &zero).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(trace_distance(&plus, &plus).unwrap(), 0.0);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-12);
        let y = pauli_matrix(Pauli1::Y) * num_complex::Complex64::new(0.0, 1.0);
        assert!(matches!(trace_distance(&y, &zero), Err(VerifyError::NotHermitian(_))));
    }

    #[test]
    fn bloch_formula_is_exact() {
        let plus = coeffs(&[("I", ratio(1, 2)), ("X", ratio(1, 2))]);
        let zero = coeffs(&[("I", ratio(1, 2)), ("Z", ratio(1, 2))]);
        let d = state_distance(&plus, &zero).unwrap();
        assert_eq!(d.exact.unwrap().to_string(), "1/2*sqrt(2)");
    }
}
