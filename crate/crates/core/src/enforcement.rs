//! Enforcement policies: supervisory disabling, invisible masking on the
//! attacker interface, and counterexample-guided synthesis.

use crate::engine::{ExploreOptions, Exploration};
use crate::model::NetModel;
use crate::rational::{ceil_to_grid, fmt_ratio, parse_rational, to_f64, Rational};
use crate::stabilizer::{PauliCoefficients, Tableau};
use crate::unfolding::{Restriction, TargetFamily, UnfoldingError};
use crate::verifier::{self, ObservationAggregates, OpacityReport, VerifyError, EPSILON_TOLERANCE};
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};

/// Resolution used when a masking strength has no exact closed form.
pub const STRENGTH_GRID: i64 = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum EnforceError {
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("transition `{0}` is not controllable")]
    Uncontrollable(String),
    #[error("unknown masking channel `{0}`")]
    UnknownMask(String),
    #[error("masking register `{0}` is outside the attacker interface")]
    MaskOutsideInterface(String),
    #[error("masking strength {0} is outside [0, 1]")]
    BadStrength(String),
    #[error("architecture: {0}")]
    BadArchitecture(String),
    #[error("policy: {0}")]
    BadPolicy(String),
    #[error(transparent)]
    Target(#[from] UnfoldingError),
    #[error("uncontrollably reachable secret in observation `{0}`")]
    UncontrollableSecret(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ChannelKind {
    /// Depolarization of the masked registers with strength up to `p_max`.
    Depolarize { p_max: Rational },
    /// Full twirl, i.e. depolarization with strength one.
    Twirl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub id: String,
    /// Register indices, all inside the attacker interface.
    pub registers: Vec<usize>,
    pub kind: ChannelKind,
    /// Price per unit of strength; falls back to the cost model default.
    pub price: Option<Rational>,
}

impl MaskSpec {
    pub fn p_max(&self) -> Rational {
        match &self.kind {
            ChannelKind::Depolarize { p_max } => p_max.clone(),
            ChannelKind::Twirl => Rational::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdmissibilitySpec {
    /// Target names that must stay reachable.
    pub required: Vec<String>,
    pub forbid_deadlock: bool,
    pub completion_place: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub disable_default: Rational,
    pub mask_default: Rational,
    pub disable: BTreeMap<String, Rational>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { disable_default: Rational::one(), mask_default: Rational::one(), disable: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlledArchitecture {
    pub catalog: Vec<MaskSpec>,
    pub admissibility: AdmissibilitySpec,
    pub cost: CostModel,
}

impl ControlledArchitecture {
    pub fn mask(&self, id: &str) -> Option<&MaskSpec> {
        self.catalog.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArchitecture {
    #[serde(default)]
    masking_catalog: Vec<RawMask>,
    #[serde(default)]
    admissibility: RawAdmissibility,
    #[serde(default)]
    cost: RawCost,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMask {
    id: String,
    registers: Vec<String>,
    channel: RawChannel,
    #[serde(default)]
    price: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    kind: String,
    #[serde(default)]
    p_max: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdmissibility {
    #[serde(default)]
    required: Vec<String>,
    #[serde(default)]
    forbid_deadlock: bool,
    #[serde(default)]
    completion_place: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    #[serde(default)]
    disable_default: Option<String>,
    #[serde(default)]
    mask_default: Option<String>,
    #[serde(default)]
    disable: BTreeMap<String, String>,
}

fn rational_field(what: &str, text: &str) -> Result<Rational, EnforceError> {
    parse_rational(text).map_err(|e| EnforceError::BadArchitecture(format!("{what}: {e}")))
}

fn check_strength(p: &Rational) -> Result<(), EnforceError> {
    if p.is_negative() || *p > Rational::one() {
        return Err(EnforceError::BadStrength(fmt_ratio(p)));
    }
    Ok(())
}

pub fn parse_architecture(m: &NetModel, v: &Value) -> Result<ControlledArchitecture, EnforceError> {
    let raw: RawArchitecture =
        serde_json::from_value(v.clone()).map_err(|e| EnforceError::BadArchitecture(e.to_string()))?;
    let mut catalog = Vec::new();
    for mk in raw.masking_catalog {
        let mut registers = Vec::new();
        for r in &mk.registers {
            let q = m.register_index(r).ok_or_else(|| EnforceError::BadArchitecture(format!("unknown register `{r}`")))?;
            if !m.attacker_interface.contains(&q) {
                return Err(EnforceError::MaskOutsideInterface(r.clone()));
            }
            registers.push(q);
        }
        let kind = match mk.channel.kind.as_str() {
            "depolarize" => {
                let p_max = match &mk.channel.p_max {
                    Some(t) => rational_field("p_max", t)?,
                    None => Rational::one(),
                };
                check_strength(&p_max)?;
                ChannelKind::Depolarize { p_max }
            }
            "twirl" => ChannelKind::Twirl,
            other => return Err(EnforceError::BadArchitecture(format!("unknown channel kind `{other}`"))),
        };
        let price = mk.price.as_deref().map(|t| rational_field("price", t)).transpose()?;
        catalog.push(MaskSpec { id: mk.id, registers, kind, price });
    }
    let completion_place = match &raw.admissibility.completion_place {
        Some(p) => Some(m.place_index(p).ok_or_else(|| EnforceError::BadArchitecture(format!("unknown place `{p}`")))?),
        None => None,
    };
    let mut cost = CostModel::default();
    if let Some(t) = &raw.cost.disable_default {
        cost.disable_default = rational_field("disable_default", t)?;
    }
    if let Some(t) = &raw.cost.mask_default {
        cost.mask_default = rational_field("mask_default", t)?;
    }
    for (t, price) in &raw.cost.disable {
        if m.transition_index(t).is_none() {
            return Err(EnforceError::UnknownTransition(t.clone()));
        }
        cost.disable.insert(t.clone(), rational_field("disable", price)?);
    }
    Ok(ControlledArchitecture {
        catalog,
        admissibility: AdmissibilitySpec {
            required: raw.admissibility.required,
            forbid_deadlock: raw.admissibility.forbid_deadlock,
            completion_place,
        },
        cost,
    })
}

/// Architecture declared inside the model, or an empty one.
pub fn model_architecture(m: &NetModel) -> Result<ControlledArchitecture, EnforceError> {
    match &m.architecture {
        Some(v) => parse_architecture(m, v),
        None => Ok(ControlledArchitecture::default()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    All,
    /// Configuration key for δ, target name for μ.
    Only(String),
}

impl Scope {
    fn parse(s: &str) -> Scope {
        if s == "all" {
            Scope::All
        } else {
            Scope::Only(s.to_string())
        }
    }

    fn render(&self) -> String {
        match self {
            Scope::All => "all".to_string(),
            Scope::Only(s) => s.clone(),
        }
    }

    fn matches(&self, name: &str) -> bool {
        match self {
            Scope::All => true,
            Scope::Only(s) => s == name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaRule {
    pub scope: Scope,
    pub transitions: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuRule {
    pub scope: Scope,
    pub mask: String,
    pub p: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EnforcementPolicy {
    pub delta: Vec<DeltaRule>,
    pub mu: Vec<MuRule>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    #[serde(default)]
    delta: Vec<DeltaFile>,
    #[serde(default)]
    mu: Vec<MuFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeltaFile {
    scope: String,
    transitions: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MuFile {
    scope: String,
    mask: String,
    p: String,
}

impl EnforcementPolicy {
    pub fn is_empty(&self) -> bool {
        self.delta.is_empty() && self.mu.is_empty()
    }

    /// Transitions disabled by some rule.
    pub fn disabled(&self) -> BTreeSet<String> {
        self.delta.iter().flat_map(|d| d.transitions.iter().cloned()).collect()
    }

    pub fn to_json(&self) -> Value {
        let f = PolicyFile {
            delta: self
                .delta
                .iter()
                .map(|d| DeltaFile { scope: d.scope.render(), transitions: d.transitions.iter().cloned().collect() })
                .collect(),
            mu: self
                .mu
                .iter()
                .map(|r| MuFile { scope: r.scope.render(), mask: r.mask.clone(), p: fmt_ratio(&r.p) })
                .collect(),
        };
        serde_json::to_value(f).expect("policy serializes")
    }

    pub fn from_json(v: &Value) -> Result<Self, EnforceError> {
        let f: PolicyFile = serde_json::from_value(v.clone()).map_err(|e| EnforceError::BadPolicy(e.to_string()))?;
        let mut mu = Vec::new();
        for r in f.mu {
            let p = parse_rational(&r.p).map_err(|e| EnforceError::BadPolicy(e.to_string()))?;
            check_strength(&p)?;
            mu.push(MuRule { scope: Scope::parse(&r.scope), mask: r.mask, p });
        }
        Ok(EnforcementPolicy {
            delta: f
                .delta
                .into_iter()
                .map(|d| DeltaRule { scope: Scope::parse(&d.scope), transitions: d.transitions.into_iter().collect() })
                .collect(),
            mu,
        })
    }

    /// Adds `p` on top of an existing rule for the same scope and mask, so
    /// that the combined strength is `1 - (1-p_old)(1-p)`.
    fn add_mask(&mut self, scope: Scope, mask: &str, p: Rational) {
        if let Some(r) = self.mu.iter_mut().find(|r| r.scope == scope && r.mask == mask) {
            let one = Rational::one();
            r.p = &one - (&one - &r.p) * (&one - &p);
        } else {
            self.mu.push(MuRule { scope, mask: mask.to_string(), p });
        }
    }

    fn add_disabled(&mut self, ts: &BTreeSet<String>) {
        if let Some(d) = self.delta.iter_mut().find(|d| d.scope == Scope::All) {
            d.transitions.extend(ts.iter().cloned());
        } else {
            self.delta.push(DeltaRule { scope: Scope::All, transitions: ts.clone() });
        }
    }
}

/// Exploration restriction implementing the δ part of a policy.
pub fn closed_loop(
    m: &NetModel,
    arch: &ControlledArchitecture,
    pol: &EnforcementPolicy,
) -> Result<Restriction, EnforceError> {
    let mut r = Restriction::default();
    for d in &pol.delta {
        let mut ids = BTreeSet::new();
        for t in &d.transitions {
            let i = m.transition_index(t).ok_or_else(|| EnforceError::UnknownTransition(t.clone()))?;
            if !m.transitions[i].controllable {
                return Err(EnforceError::Uncontrollable(t.clone()));
            }
            ids.insert(i);
        }
        match &d.scope {
            Scope::All => r.disabled.extend(ids),
            Scope::Only(key) => r.disabled_at.entry(key.clone()).or_default().extend(ids),
        }
    }
    for mu in &pol.mu {
        let spec = arch.mask(&mu.mask).ok_or_else(|| EnforceError::UnknownMask(mu.mask.clone()))?;
        check_strength(&mu.p)?;
        if mu.p > spec.p_max() {
            return Err(EnforceError::BadPolicy(format!(
                "strength {} exceeds p_max of `{}`",
                fmt_ratio(&mu.p),
                spec.id
            )));
        }
    }
    Ok(r)
}

/// Depolarization of strength `p` on `registers`: every coefficient whose
/// label is non-identity on some masked register is scaled by `1 - p`.
pub fn masking_effect(
    c: &PauliCoefficients,
    registers: &[usize],
    p: &Rational,
) -> Result<PauliCoefficients, EnforceError> {
    check_strength(p)?;
    let positions: Vec<usize> = registers
        .iter()
        .map(|q| c.registers.iter().position(|r| r == q).ok_or_else(|| EnforceError::MaskOutsideInterface(format!("#{q}"))))
        .collect::<Result<_, _>>()?;
    let keep = Rational::one() - p;
    let mut out = PauliCoefficients::zero(c.registers.clone());
    for (label, v) in &c.coeffs {
        let letters: Vec<char> = label.chars().collect();
        let v = if positions.iter().any(|&i| letters[i] != 'I') { v * &keep } else { v.clone() };
        if !v.is_zero() {
            out.coeffs.insert(label.clone(), v);
        }
    }
    Ok(out)
}

/// Applies a mask to both classes and to the per-configuration states.
pub fn mask_aggregates(
    a: &ObservationAggregates,
    registers: &[usize],
    p: &Rational,
) -> Result<ObservationAggregates, EnforceError> {
    let mut out = a.clone();
    for agg in &mut out.classes {
        agg.omega = masking_effect(&agg.omega, registers, p)?;
    }
    for side in &mut out.states {
        let mut set = BTreeSet::new();
        for s in side.iter() {
            set.insert(masking_effect(s, registers, p)?.coeffs.into_iter().collect::<Vec<_>>());
        }
        *side = set
            .into_iter()
            .map(|c| PauliCoefficients { registers: a.classes[0].omega.registers.clone(), coeffs: c.into_iter().collect() })
            .collect();
    }
    Ok(out)
}

/// Applies every matching μ rule of `pol`.
pub fn apply_masks(
    arch: &ControlledArchitecture,
    pol: &EnforcementPolicy,
    aggs: &[ObservationAggregates],
) -> Result<Vec<ObservationAggregates>, EnforceError> {
    let mut out = aggs.to_vec();
    for a in &mut out {
        for mu in &pol.mu {
            if mu.scope.matches(&a.name) {
                let spec = arch.mask(&mu.mask).ok_or_else(|| EnforceError::UnknownMask(mu.mask.clone()))?;
                *a = mask_aggregates(a, &spec.registers, &mu.p)?;
            }
        }
    }
    Ok(out)
}

/// Smallest `p` with `(1 - p) d <= eps`.
pub fn required_masking_strength(d: f64, eps: f64) -> f64 {
    if d <= 0.0 {
        0.0
    } else {
        (1.0 - eps / d).max(0.0)
    }
}

/// Exact version for a rational leakage.
pub fn required_masking_strength_exact(d: &Rational, eps: &Rational) -> Rational {
    if !d.is_positive() || eps >= d {
        Rational::zero()
    } else {
        Rational::one() - eps / d
    }
}

/// Inclusion-minimal sets meeting every member of `families`, ordered by size
/// and then lexicographically.
pub fn minimal_hitting_sets(families: &[BTreeSet<String>]) -> Result<Vec<BTreeSet<String>>, EnforceError> {
    if families.iter().any(|f| f.is_empty()) {
        return Err(EnforceError::UncontrollableSecret(String::new()));
    }
    let mut current: Vec<BTreeSet<String>> = vec![BTreeSet::new()];
    for f in families {
        let mut next: Vec<BTreeSet<String>> = Vec::new();
        for h in &current {
            if !h.is_disjoint(f) {
                next.push(h.clone());
                continue;
            }
            for x in f {
                let mut g = h.clone();
                g.insert(x.clone());
                next.push(g);
            }
        }
        next.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        next.dedup();
        let mut minimal: Vec<BTreeSet<String>> = Vec::new();
        for s in next {
            if !minimal.iter().any(|k| k.is_subset(&s)) {
                minimal.push(s);
            }
        }
        current = minimal;
    }
    Ok(current)
}

pub fn policy_cost(pol: &EnforcementPolicy, arch: &ControlledArchitecture) -> Rational {
    let mut total = Rational::zero();
    for d in &pol.delta {
        for t in &d.transitions {
            total += arch.cost.disable.get(t).unwrap_or(&arch.cost.disable_default).clone();
        }
    }
    for mu in &pol.mu {
        let price = arch.mask(&mu.mask).and_then(|s| s.price.clone()).unwrap_or_else(|| arch.cost.mask_default.clone());
        total += price * &mu.p;
    }
    total
}

/// Closed-loop evaluation of a policy.
pub struct ClosedLoop {
    pub exploration: Exploration<Tableau>,
    pub aggregates: Vec<ObservationAggregates>,
    pub report: OpacityReport,
}

pub fn evaluate(
    m: &NetModel,
    arch: &ControlledArchitecture,
    pol: &EnforcementPolicy,
    fam: &TargetFamily,
    epsilon: f64,
    opts: &ExploreOptions,
) -> Result<ClosedLoop, EnforceError> {
    let restriction = closed_loop(m, arch, pol)?;
    let opts = ExploreOptions { restriction, ..opts.clone() };
    let x = verifier::explore(m, fam, &opts)?;
    let base = verifier::aggregate(&x, m, fam)?;
    let aggregates = apply_masks(arch, pol, &base)?;
    let report = verifier::report_from(m, &aggregates, epsilon)?;
    Ok(ClosedLoop { exploration: x, aggregates, report })
}

/// Checks the admissibility spec against a closed loop; returns the reason
/// for rejection.
pub fn admissibility_violation(
    m: &NetModel,
    arch: &ControlledArchitecture,
    pol: &EnforcementPolicy,
    fam: &TargetFamily,
    opts: &ExploreOptions,
) -> Result<Option<String>, EnforceError> {
    let spec = &arch.admissibility;
    let model_targets = TargetFamily::from_specs(&m.targets)?;
    let mut required = Vec::new();
    for name in &spec.required {
        let t = fam
            .get(name)
            .or_else(|| model_targets.get(name))
            .ok_or_else(|| EnforceError::BadArchitecture(format!("unknown required target `{name}`")))?;
        required.push((t.name.clone(), t.pomset.clone()));
    }
    let req = TargetFamily::new(required)?;
    let all = fam.union(&req)?;
    let restriction = closed_loop(m, arch, pol)?;
    let x = verifier::explore(m, &all, &ExploreOptions { restriction, ..opts.clone() })?;
    for t in &req.targets {
        if x.maximal_with_obs(&t.canonical).next().is_none() {
            return Ok(Some(format!("required observation `{}` is no longer reachable", t.name)));
        }
    }
    if spec.forbid_deadlock {
        let place = spec
            .completion_place
            .ok_or_else(|| EnforceError::BadArchitecture("deadlock check needs a completion place".into()))?;
        for n in &x.nodes {
            if !n.has_child && !n.config.marking.contains(place) && all.targets.iter().any(|t| t.canonical == n.obs) {
                return Ok(Some(format!(
                    "maximal configuration with marking {{{}}} misses `{}`",
                    m.marking_names(&n.config.marking).join(","),
                    m.places[place]
                )));
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub description: String,
    pub cost: Rational,
    pub disabled: usize,
    pub admissible: bool,
    pub leakage_after: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub iteration: usize,
    pub violating: String,
    pub leakage: f64,
    pub candidates: Vec<CandidateRecord>,
    pub chosen: Option<String>,
}

impl AuditEntry {
    pub fn to_json(&self) -> Value {
        json!({
            "iteration": self.iteration,
            "violating_observation": self.violating,
            "leakage": self.leakage,
            "candidates": self.candidates.iter().map(|c| json!({
                "update": c.description,
                "cost": fmt_ratio(&c.cost),
                "admissible": c.admissible,
                "leakage_after": c.leakage_after,
                "note": c.note,
            })).collect::<Vec<_>>(),
            "chosen": self.chosen,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Largest subset size for partial disabling candidates.
    pub partial_delta_cap: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions { epsilon: 0.0, max_iterations: 8, partial_delta_cap: 2 }
    }
}

#[derive(Debug)]
pub struct Synthesis {
    pub policy: EnforcementPolicy,
    pub report: OpacityReport,
    pub audit: Vec<AuditEntry>,
}

#[derive(Debug)]
pub struct SynthesisFailure {
    pub reason: String,
    pub policy: EnforcementPolicy,
    pub audit: Vec<AuditEntry>,
}

#[derive(Debug)]
pub enum SynthesisOutcome {
    Success(Synthesis),
    Failure(SynthesisFailure),
}

impl SynthesisOutcome {
    pub fn audit_json(&self) -> Value {
        let audit = match self {
            SynthesisOutcome::Success(s) => &s.audit,
            SynthesisOutcome::Failure(f) => &f.audit,
        };
        Value::Array(audit.iter().map(AuditEntry::to_json).collect())
    }
}

/// Controllable transitions fired in a configuration.
fn controllable_support(m: &NetModel, x: &Exploration<Tableau>, i: usize) -> BTreeSet<String> {
    x.nodes[i]
        .config
        .transitions(&x.unfolding)
        .filter(|&t| m.transitions[t].controllable)
        .map(|t| m.transitions[t].id.clone())
        .collect()
}

fn set_text(s: &BTreeSet<String>) -> String {
    s.iter().cloned().collect::<Vec<_>>().join(",")
}

struct Candidate {
    description: String,
    policy: EnforcementPolicy,
    disabled: usize,
    note: Option<String>,
}

/// Smallest masking strength on the grid that brings the masked leakage of `a`
/// to at most `eps`, or `None` when even `p_max` does not.
fn masking_strength_for(
    a: &ObservationAggregates,
    spec: &MaskSpec,
    interface: &[usize],
    eps: f64,
) -> Result<Option<Rational>, EnforceError> {
    let leak_at = |p: &Rational| -> Result<f64, EnforceError> {
        let b = mask_aggregates(a, &spec.registers, p)?;
        Ok(verifier::leakage(&b.classes[0], &b.classes[1])?.value)
    };
    let base = verifier::leakage(&a.classes[0], &a.classes[1])?;
    let full: BTreeSet<usize> = spec.registers.iter().copied().collect();
    let p_max = spec.p_max();
    if full == interface.iter().copied().collect() {
        let p = match &base.exact {
            Some(e) if e.is_rational() => {
                let eps_r = parse_rational(&format!("{eps}")).unwrap_or_else(|_| Rational::zero());
                required_masking_strength_exact(&e.coefficient, &eps_r)
            }
            _ => ceil_to_grid(required_masking_strength(base.value, eps), STRENGTH_GRID),
        };
        let p = p.min(Rational::one());
        return Ok((p <= p_max).then_some(p));
    }
    if leak_at(&p_max)? > eps + EPSILON_TOLERANCE {
        return Ok(None);
    }
    // leakage is non-increasing in p, so bisect on the grid
    let max_steps = (to_f64(&p_max) * STRENGTH_GRID as f64).round() as i64;
    let (mut lo, mut hi) = (0i64, max_steps);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if leak_at(&crate::rational::ratio(mid, STRENGTH_GRID))? <= eps + EPSILON_TOLERANCE {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(Some(crate::rational::ratio(lo, STRENGTH_GRID).min(p_max)))
}

fn subsets_up_to(items: &[String], cap: usize) -> Vec<BTreeSet<String>> {
    let mut out = Vec::new();
    fn rec(items: &[String], start: usize, cap: usize, cur: &mut Vec<String>, out: &mut Vec<BTreeSet<String>>) {
        if !cur.is_empty() {
            out.push(cur.iter().cloned().collect());
        }
        if cur.len() == cap {
            return;
        }
        for i in start..items.len() {
            cur.push(items[i].clone());
            rec(items, i + 1, cap, cur, out);
            cur.pop();
        }
    }
    rec(items, 0, cap, &mut Vec::new(), &mut out);
    out
}

/// Counterexample-guided policy improvement. Each round picks the most
/// leaking violating observation, generates δ or μ updates, keeps the
/// admissible ones that strictly reduce its leakage, and applies the cheapest.
pub fn synthesize(
    m: &NetModel,
    arch: &ControlledArchitecture,
    fam: &TargetFamily,
    sopts: SynthesisOptions,
    opts: &ExploreOptions,
) -> Result<SynthesisOutcome, EnforceError> {
    let eps = sopts.epsilon;
    let mut policy = EnforcementPolicy::default();
    let mut audit = Vec::new();
    let fail = |reason: String, policy: EnforcementPolicy, audit: Vec<AuditEntry>| {
        Ok(SynthesisOutcome::Failure(SynthesisFailure { reason, policy, audit }))
    };
    if let Some(why) = admissibility_violation(m, arch, &policy, fam, opts)? {
        return fail(format!("base model is not admissible: {why}"), policy, audit);
    }
    for iteration in 0..sopts.max_iterations {
        let cl = evaluate(m, arch, &policy, fam, eps, opts)?;
        if cl.report.epsilon_opaque {
            return Ok(SynthesisOutcome::Success(Synthesis { policy, report: cl.report, audit }));
        }
        let worst = cl
            .report
            .per_observation
            .iter()
            .filter(|o| o.leakage.value > eps + EPSILON_TOLERANCE)
            .max_by(|a, b| a.leakage.value.total_cmp(&b.leakage.value).then_with(|| b.obs.cmp(&a.obs)))
            .expect("a violating observation exists");
        let name = worst.name.clone();
        let target = fam.get(&name).expect("report names come from the family");
        let agg = cl.aggregates.iter().find(|a| a.name == name).expect("aggregate per target");
        let mut entry =
            AuditEntry { iteration, violating: name.clone(), leakage: worst.leakage.value, candidates: vec![], chosen: None };

        let x = &cl.exploration;
        let members: Vec<usize> = x.maximal_with_obs(&target.canonical).collect();
        let mut candidates = Vec::new();
        if worst.classes[0].p.is_zero() {
            let supports: Vec<BTreeSet<String>> =
                members.iter().filter(|&&i| x.nodes[i].secret).map(|&i| controllable_support(m, x, i)).collect();
            if supports.iter().any(|s| s.is_empty()) {
                audit.push(entry);
                return fail(EnforceError::UncontrollableSecret(name).to_string(), policy, audit);
            }
            for h in minimal_hitting_sets(&supports)? {
                let mut p = policy.clone();
                p.add_disabled(&h);
                candidates.push(Candidate {
                    description: format!("disable {{{}}}", set_text(&h)),
                    policy: p,
                    disabled: h.len(),
                    note: None,
                });
            }
        } else {
            for spec in &arch.catalog {
                match masking_strength_for(agg, spec, &m.attacker_interface, eps)? {
                    Some(p) if p.is_positive() => {
                        let mut pol = policy.clone();
                        pol.add_mask(Scope::Only(name.clone()), &spec.id, p.clone());
                        candidates.push(Candidate {
                            description: format!("mask {} p={} on {}", spec.id, fmt_ratio(&p), name),
                            policy: pol,
                            disabled: 0,
                            note: None,
                        });
                    }
                    Some(_) => {}
                    None => {
                        let p = spec.p_max();
                        let mut pol = policy.clone();
                        pol.add_mask(Scope::Only(name.clone()), &spec.id, p.clone());
                        candidates.push(Candidate {
                            description: format!("mask {} p={} on {}", spec.id, fmt_ratio(&p), name),
                            policy: pol,
                            disabled: 0,
                            note: Some("p_max does not reach the threshold".into()),
                        });
                    }
                }
            }
            let support: BTreeSet<String> = members.iter().flat_map(|&i| controllable_support(m, x, i)).collect();
            let support: Vec<String> = support.into_iter().collect();
            for s in subsets_up_to(&support, sopts.partial_delta_cap) {
                let mut p = policy.clone();
                p.add_disabled(&s);
                candidates.push(Candidate {
                    description: format!("disable {{{}}}", set_text(&s)),
                    policy: p,
                    disabled: s.len(),
                    note: None,
                });
            }
        }

        let checked: Vec<Result<(CandidateRecord, Option<EnforcementPolicy>), EnforceError>> = candidates
            .into_par_iter()
            .map(|c| {
                let cost = policy_cost(&c.policy, arch);
                let why = admissibility_violation(m, arch, &c.policy, fam, opts)?;
                let after = evaluate(m, arch, &c.policy, fam, eps, opts)?;
                let l = after.report.get(&name).map(|o| o.leakage.value).unwrap_or(0.0);
                let improves = l < worst.leakage.value - EPSILON_TOLERANCE;
                let note = match (&why, improves) {
                    (Some(w), _) => Some(w.clone()),
                    (None, false) => Some("does not reduce leakage".into()),
                    (None, true) => c.note.clone(),
                };
                let ok = why.is_none() && improves;
                let rec = CandidateRecord {
                    description: c.description,
                    cost,
                    disabled: c.disabled,
                    admissible: why.is_none(),
                    leakage_after: Some(l),
                    note,
                };
                Ok((rec, ok.then_some(c.policy)))
            })
            .collect();
        let mut best: Option<(CandidateRecord, EnforcementPolicy)> = None;
        for r in checked {
            let (rec, pol) = r?;
            entry.candidates.push(rec.clone());
            if let Some(pol) = pol {
                let better = match &best {
                    None => true,
                    Some((b, _)) => (&rec.cost, rec.disabled, &rec.description) < (&b.cost, b.disabled, &b.description),
                };
                if better {
                    best = Some((rec, pol));
                }
            }
        }
        match best {
            Some((rec, pol)) => {
                entry.chosen = Some(rec.description);
                audit.push(entry);
                policy = pol;
            }
            None => {
                audit.push(entry);
                return fail(format!("no admissible candidate for `{name}`"), policy, audit);
            }
        }
    }
    let cl = evaluate(m, arch, &policy, fam, eps, opts)?;
    if cl.report.epsilon_opaque {
        Ok(SynthesisOutcome::Success(Synthesis { policy, report: cl.report, audit }))
    } else {
        fail(format!("iteration bound {} exhausted", sopts.max_iterations), policy, audit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::rational::ratio;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn family(m: &NetModel, names: &[&str]) -> TargetFamily {
        let all = TargetFamily::from_specs(&m.targets).unwrap();
        TargetFamily::new(names.iter().map(|n| (n.to_string(), all.get(n).unwrap().pomset.clone())).collect()).unwrap()
    }

    #[test]
    fn hitting_set_examples() {
        assert_eq!(minimal_hitting_sets(&[set(&["t_pur"])]).unwrap(), vec![set(&["t_pur"])]);
        assert_eq!(minimal_hitting_sets(&[set(&["a"]), set(&["b"])]).unwrap(), vec![set(&["a", "b"])]);
        assert_eq!(
            minimal_hitting_sets(&[set(&["a", "b"]), set(&["b", "c"])]).unwrap(),
            vec![set(&["b"]), set(&["a", "c"])]
        );
        assert!(matches!(minimal_hitting_sets(&[set(&[])]), Err(EnforceError::UncontrollableSecret(_))));
    }

    #[test]
    fn strength_examples() {
        assert!((required_masking_strength(0.5f64.sqrt(), 0.1) - 0.8586).abs() < 1e-3);
        assert_eq!(required_masking_strength_exact(&ratio(1, 2), &ratio(1, 20)), ratio(9, 10));
        assert_eq!(required_masking_strength(0.3, 0.5), 0.0);
        assert_eq!(required_masking_strength(0.0, 0.0), 0.0);
    }

    #[test]
    fn cost_examples() {
        let m = bundled::repeater();
        let mut arch = model_architecture(&m).unwrap();
        assert_eq!(policy_cost(&EnforcementPolicy::default(), &arch), Rational::zero());
        let mut p = EnforcementPolicy::default();
        p.add_disabled(&set(&["t_pur_sec"]));
        assert_eq!(policy_cost(&p, &arch), Rational::one());
        arch.catalog[0].price = Some(ratio(2, 1));
        let mut p = EnforcementPolicy::default();
        p.add_mask(Scope::All, "t_mask_M", ratio(9, 10));
        assert_eq!(policy_cost(&p, &arch), ratio(9, 5));
    }

    #[test]
    fn masking_scales_and_twirls() {
        let c = PauliCoefficients {
            registers: vec![4],
            coeffs: [("I".to_string(), ratio(1, 2)), ("Z".to_string(), ratio(1, 2))].into_iter().collect(),
        };
        assert_eq!(masking_effect(&c, &[4], &Rational::zero()).unwrap(), c);
        let t = masking_effect(&c, &[4], &Rational::one()).unwrap();
        assert_eq!(t.coeffs.len(), 1);
        assert!(matches!(masking_effect(&c, &[0], &ratio(1, 2)), Err(EnforceError::MaskOutsideInterface(_))));
    }

    #[test]
    fn closed_loop_rejects_uncontrollable() {
        let m = bundled::repeater();
        let arch = model_architecture(&m).unwrap();
        let mut p = EnforcementPolicy::default();
        p.add_disabled(&set(&["t_req"]));
        assert!(matches!(closed_loop(&m, &arch, &p), Err(EnforceError::Uncontrollable(_))));
    }

    #[test]
    fn disabling_secret_lane_zeroes_leakage() {
        let m = bundled::repeater();
        let arch = model_architecture(&m).unwrap();
        let fam = family(&m, &["O_fg"]);
        let mut p = EnforcementPolicy::default();
        p.add_disabled(&set(&["t_pur_sec"]));
        let cl = evaluate(&m, &arch, &p, &fam, 0.05, &ExploreOptions::default()).unwrap();
        let o = cl.report.get("O_fg").unwrap();
        assert!(o.classes[1].p.is_zero());
        assert_eq!(o.leakage.value, 0.0);
    }

    #[test]
    fn policy_json_round_trip() {
        let mut p = EnforcementPolicy::default();
        p.add_disabled(&set(&["t_pur_sec"]));
        p.add_mask(Scope::Only("O_fg".into()), "t_mask_M", ratio(9, 10));
        let back = EnforcementPolicy::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        p.add_mask(Scope::Only("O_fg".into()), "t_mask_M", ratio(1, 2));
        assert_eq!(p.mu[0].p, ratio(19, 20));
    }

    #[test]
    fn synthesis_masks_repeater() {
        let m = bundled::repeater();
        let arch = model_architecture(&m).unwrap();
        let fam = family(&m, &["O_fg"]);
        let sopts = SynthesisOptions { epsilon: 0.05, max_iterations: 3, ..Default::default() };
        let out = synthesize(&m, &arch, &fam, sopts, &ExploreOptions::default()).unwrap();
        let SynthesisOutcome::Success(s) = out else { panic!("synthesis failed") };
        assert_eq!(s.policy.mu.len(), 1);
        assert_eq!(s.policy.mu[0].p, ratio(9, 10));
        assert!(s.policy.delta.is_empty());
        assert!(s.report.max_leakage() <= 0.05 + 1e-12);
    }

    #[test]
    fn synthesis_disables_secret_lane_for_fail() {
        let m = bundled::repeater();
        let arch = model_architecture(&m).unwrap();
        let fam = family(&m, &["O_fail"]);
        let sopts = SynthesisOptions { epsilon: 0.05, max_iterations: 3, ..Default::default() };
        let SynthesisOutcome::Success(s) = synthesize(&m, &arch, &fam, sopts, &ExploreOptions::default()).unwrap()
        else {
            panic!("synthesis failed")
        };
        assert_eq!(s.policy.disabled(), set(&["t_pur_sec"]));
    }

    #[test]
    fn synthesis_fails_without_levers() {
        let mut m = bundled::repeater();
        let t = m.transition_index("t_pur_sec").unwrap();
        m.transitions[t].controllable = false;
        let mut arch = model_architecture(&m).unwrap();
        arch.catalog.clear();
        let fam = family(&m, &["O_fg"]);
        let sopts = SynthesisOptions { epsilon: 0.05, max_iterations: 3, ..Default::default() };
        assert!(matches!(
            synthesize(&m, &arch, &fam, sopts, &ExploreOptions::default()).unwrap(),
            SynthesisOutcome::Failure(_)
        ));
        let zero = SynthesisOptions { max_iterations: 0, ..sopts };
        assert!(matches!(
            synthesize(&bundled::repeater(), &model_architecture(&m).unwrap(), &fam, zero, &ExploreOptions::default())
                .unwrap(),
            SynthesisOutcome::Failure(_)
        ));
    }
}
