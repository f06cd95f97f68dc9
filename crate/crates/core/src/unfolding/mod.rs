//! Branch-expanded unfolding of the control net.
//!
//! Events are interned by `(transition, branch, conditions)` where each
//! condition names a resource (place or register) together with the event
//! that touched it last. Two events touching a common place or register are
//! therefore always causally ordered, and an event's identity fixes its whole
//! causal past. Configurations are sets of interned event ids.

mod pomset;

pub use pomset::{Pomset, PomsetError};

use crate::model::{enabled, fire, Label, Marking, NetModel, TargetSpec};
use sha2::{Digest, Sha256};
use std::collections::{BTreeSet, HashMap, HashSet};

/// Default bound on configuration size for [`linearizations`].
pub const LINEARIZATION_BOUND: usize = 12;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum UnfoldingError {
    #[error("divergence guard: more than {0} consecutive unobservable events")]
    Divergence(usize),
    #[error("configuration has {0} events; linearization bound is {1}")]
    TooManyEvents(usize, usize),
    #[error("target `{0}`: {1}")]
    BadTarget(String, String),
}

/// Branch transition `(t, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BranchRef {
    pub transition: usize,
    pub branch: usize,
}

/// One entry per `(t, r)`, ordered by transition then branch.
pub fn branch_expand(m: &NetModel) -> Vec<BranchRef> {
    m.transitions
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| (0..tr.branches.len()).map(move |b| BranchRef { transition: t, branch: b }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resource {
    Place(usize),
    Register(usize),
}

#[derive(Debug, Clone)]
pub struct Event {
    pub id: usize,
    pub branch: BranchRef,
    pub label: Label,
    /// `(resource, previous toucher)` pairs; `None` is the initial state.
    pub conditions: Vec<(Resource, Option<usize>)>,
    /// Direct causes, sorted.
    pub causes: Vec<usize>,
    /// Strict causal past, sorted.
    pub past: Vec<usize>,
}

/// Interning table of events discovered so far.
#[derive(Debug, Default, Clone)]
pub struct Unfolding {
    pub events: Vec<Event>,
    index: HashMap<(BranchRef, Vec<(Resource, Option<usize>)>), usize>,
    digests: Vec<String>,
}

impl Unfolding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn event(&self, id: usize) -> &Event {
        &self.events[id]
    }

    fn intern(
        &mut self,
        m: &NetModel,
        branch: BranchRef,
        label: Label,
        conditions: Vec<(Resource, Option<usize>)>,
    ) -> usize {
        let key = (branch, conditions);
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.events.len();
        let conditions = key.1.clone();
        let causes: Vec<usize> =
            conditions.iter().filter_map(|(_, e)| *e).collect::<BTreeSet<_>>().into_iter().collect();
        let mut past: BTreeSet<usize> = BTreeSet::new();
        for &c in &causes {
            past.insert(c);
            past.extend(self.events[c].past.iter().copied());
        }
        let digest = self.compute_digest(m, branch, &conditions);
        self.digests.push(digest);
        self.events.push(Event { id, branch, label, conditions, causes, past: past.into_iter().collect() });
        self.index.insert(key, id);
        id
    }

    /// Stable content digest of an event (hex), independent of discovery order.
    pub fn event_digest(&self, id: usize) -> &str {
        &self.digests[id]
    }

    fn compute_digest(&self, m: &NetModel, branch: BranchRef, conditions: &[(Resource, Option<usize>)]) -> String {
        let t = &m.transitions[branch.transition];
        let mut h = Sha256::new();
        h.update(t.id.as_bytes());
        h.update([0]);
        h.update(t.branches[branch.branch].outcome.as_bytes());
        for (res, prev) in conditions {
            match res {
                Resource::Place(p) => h.update(format!("p:{}", m.places[*p]).as_bytes()),
                Resource::Register(q) => h.update(format!("q:{}", m.registers[*q]).as_bytes()),
            }
            h.update([2]);
            if let Some(p) = prev {
                h.update(self.digests[*p].as_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Stable key of a configuration: digest over its sorted event digests.
    pub fn config_key(&self, c: &Configuration) -> String {
        let mut ds: Vec<&str> = c.events.iter().map(|&e| self.event_digest(e)).collect();
        ds.sort();
        let mut h = Sha256::new();
        for d in ds {
            h.update(d.as_bytes());
            h.update([b'\n']);
        }
        hex(&h.finalize())
    }

    /// Labelled order of the observable events of `c`.
    pub fn obs_pomset(&self, c: &Configuration) -> Pomset {
        let obs: Vec<usize> = c.events.iter().copied().filter(|&e| !self.events[e].label.is_tau()).collect();
        let labels = obs.iter().map(|&e| self.events[e].label.to_string()).collect();
        let mut edges = Vec::new();
        for (j, &b) in obs.iter().enumerate() {
            for (i, &a) in obs.iter().enumerate() {
                if self.events[b].past.binary_search(&a).is_ok() {
                    edges.push((i, j));
                }
            }
        }
        Pomset::new(labels, &edges).expect("causality is acyclic")
    }

    /// Full causal order of `c` over all its events (in `c.events` order).
    pub fn causal_pomset(&self, m: &NetModel, c: &Configuration) -> Pomset {
        let labels = c
            .events
            .iter()
            .map(|&e| {
                let b = self.events[e].branch;
                format!("{}/{}", m.transitions[b.transition].id, m.transitions[b.transition].branches[b.branch].outcome)
            })
            .collect();
        let mut edges = Vec::new();
        for (j, &b) in c.events.iter().enumerate() {
            for (i, &a) in c.events.iter().enumerate() {
                if self.events[b].past.binary_search(&a).is_ok() {
                    edges.push((i, j));
                }
            }
        }
        Pomset::new(labels, &edges).expect("causality is acyclic")
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Causally closed, conflict-free event set with its final marking.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    /// Sorted event ids.
    pub events: Vec<usize>,
    pub marking: Marking,
    /// Unobservable events not below any observable event.
    pub tau_run: usize,
    last_place: Vec<Option<usize>>,
    last_register: Vec<Option<usize>>,
}

impl Configuration {
    pub fn empty(m: &NetModel) -> Self {
        Configuration {
            events: Vec::new(),
            marking: m.initial_marking.clone(),
            tau_run: 0,
            last_place: vec![None; m.places.len()],
            last_register: vec![None; m.n_registers()],
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains(&self, e: usize) -> bool {
        self.events.binary_search(&e).is_ok()
    }

    /// Transitions fired by the events of the configuration.
    pub fn transitions<'a>(&'a self, u: &'a Unfolding) -> impl Iterator<Item = usize> + 'a {
        self.events.iter().map(move |&e| u.events[e].branch.transition)
    }
}

/// Transitions suppressed during exploration.
#[derive(Debug, Clone, Default)]
pub struct Restriction {
    /// Disabled everywhere.
    pub disabled: BTreeSet<usize>,
    /// Disabled at configurations with the given key.
    pub disabled_at: HashMap<String, BTreeSet<usize>>,
}

impl Restriction {
    pub fn is_empty(&self) -> bool {
        self.disabled.is_empty() && self.disabled_at.values().all(|s| s.is_empty())
    }
}

/// A named target pomset.
#[derive(Debug, Clone)]
pub struct Target {
    pub name: String,
    pub pomset: Pomset,
    pub canonical: String,
}

/// Targeted observation family with its prefix index. An unrestricted family
/// admits every observation.
#[derive(Debug, Clone)]
pub struct TargetFamily {
    pub targets: Vec<Target>,
    prefixes: Option<HashSet<String>>,
}

impl TargetFamily {
    pub fn new(targets: Vec<(String, Pomset)>) -> Result<Self, UnfoldingError> {
        let mut prefixes = HashSet::new();
        let mut out = Vec::new();
        for (name, p) in targets {
            let ideals = p.ideals().map_err(|e| UnfoldingError::BadTarget(name.clone(), e.to_string()))?;
            for mask in ideals {
                prefixes.insert(p.restrict_mask(mask).canonical());
            }
            let canonical = p.canonical();
            out.push(Target { name, pomset: p, canonical });
        }
        Ok(TargetFamily { targets: out, prefixes: Some(prefixes) })
    }

    pub fn unrestricted() -> Self {
        TargetFamily { targets: Vec::new(), prefixes: None }
    }

    pub fn is_unrestricted(&self) -> bool {
        self.prefixes.is_none()
    }

    /// Resolves model-file target specs; unnamed ones become `O_<index>`.
    pub fn from_specs(specs: &[TargetSpec]) -> Result<Self, UnfoldingError> {
        let mut targets = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            let name = spec.name().map(str::to_string).unwrap_or_else(|| format!("O_{i}"));
            targets.push((name.clone(), spec_pomset(&name, spec)?));
        }
        TargetFamily::new(targets)
    }

    /// Adds the members of `other` that are not already present.
    pub fn union(&self, other: &TargetFamily) -> Result<Self, UnfoldingError> {
        let mut targets: Vec<(String, Pomset)> =
            self.targets.iter().map(|t| (t.name.clone(), t.pomset.clone())).collect();
        for t in &other.targets {
            if !self.targets.iter().any(|s| s.canonical == t.canonical) {
                targets.push((t.name.clone(), t.pomset.clone()));
            }
        }
        TargetFamily::new(targets)
    }

    /// Pomset-prefix test by canonical form.
    pub fn admits(&self, canonical: &str) -> bool {
        match &self.prefixes {
            None => true,
            Some(p) => p.contains(canonical),
        }
    }

    pub fn is_prefix(&self, p: &Pomset) -> bool {
        self.admits(&p.canonical())
    }

    pub fn get(&self, name: &str) -> Option<&Target> {
        self.targets.iter().find(|t| t.name == name)
    }
}

/// Pomset described by a target spec.
pub fn spec_pomset(name: &str, spec: &TargetSpec) -> Result<Pomset, UnfoldingError> {
    match spec {
        TargetSpec::Chain(labels) | TargetSpec::NamedChain { chain: labels, .. } => Ok(Pomset::chain(labels)),
        TargetSpec::Pomset { nodes, order, .. } => {
            let idx = |id: &str| {
                nodes
                    .iter()
                    .position(|n| n.id == id)
                    .ok_or_else(|| UnfoldingError::BadTarget(name.to_string(), format!("unknown node `{id}`")))
            };
            let mut ids = HashSet::new();
            for n in nodes {
                if !ids.insert(n.id.as_str()) {
                    return Err(UnfoldingError::BadTarget(name.to_string(), format!("duplicate node `{}`", n.id)));
                }
            }
            let edges = order.iter().map(|[a, b]| Ok((idx(a)?, idx(b)?))).collect::<Result<Vec<_>, _>>()?;
            Pomset::new(nodes.iter().map(|n| n.label.clone()).collect(), &edges)
                .map_err(|e| UnfoldingError::BadTarget(name.to_string(), e.to_string()))
        }
    }
}

/// Candidate extension of a configuration.
#[derive(Debug, Clone)]
pub struct Extension {
    pub event: usize,
    pub child: Configuration,
    /// Canonical observation of the child.
    pub obs: String,
}

#[derive(Debug, Clone, Copy)]
pub struct ExtensionOptions {
    /// Skip transitions flagged as evaluation cuts.
    pub cut: bool,
    pub tau_bound: usize,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        ExtensionOptions { cut: true, tau_bound: 10_000 }
    }
}

/// Targeted extensions of `c`, in transition then branch order. `obs` is the
/// canonical observation of `c` and `key` its stable key when per-configuration
/// restrictions are in force.
#[allow(clippy::too_many_arguments)]
pub fn extensions(
    u: &mut Unfolding,
    m: &NetModel,
    c: &Configuration,
    obs: &str,
    key: Option<&str>,
    fam: &TargetFamily,
    restriction: &Restriction,
    opts: ExtensionOptions,
) -> Result<Vec<Extension>, UnfoldingError> {
    let mut out = Vec::new();
    let local = key.and_then(|k| restriction.disabled_at.get(k));
    for (t, tr) in m.transitions.iter().enumerate() {
        if (opts.cut && tr.evaluation_cut)
            || restriction.disabled.contains(&t)
            || local.is_some_and(|s| s.contains(&t))
            || !enabled(&c.marking, tr)
        {
            continue;
        }
        let mut conditions = Vec::new();
        for p in tr.neighbourhood() {
            conditions.push((Resource::Place(p), c.last_place[p]));
        }
        for &q in &tr.access {
            conditions.push((Resource::Register(q), c.last_register[q]));
        }
        let marking = fire(&c.marking, tr).expect("enabled transition fires");
        for (b, branch) in tr.branches.iter().enumerate() {
            let e = u.intern(m, BranchRef { transition: t, branch: b }, branch.label.clone(), conditions.clone());
            let mut child = c.clone();
            let at = child.events.binary_search(&e).unwrap_err();
            child.events.insert(at, e);
            child.marking = marking.clone();
            for p in tr.neighbourhood() {
                child.last_place[p] = Some(e);
            }
            for &q in &tr.access {
                child.last_register[q] = Some(e);
            }
            let child_obs = if branch.label.is_tau() {
                child.tau_run = c.tau_run + 1;
                if child.tau_run > opts.tau_bound {
                    return Err(UnfoldingError::Divergence(opts.tau_bound));
                }
                obs.to_string()
            } else {
                child.tau_run = frontier_tau(u, &child);
                let o = u.obs_pomset(&child).canonical();
                if !fam.admits(&o) {
                    continue;
                }
                o
            };
            out.push(Extension { event: e, child, obs: child_obs });
        }
    }
    Ok(out)
}

/// Unobservable events of `c` that lie below no observable event.
fn frontier_tau(u: &Unfolding, c: &Configuration) -> usize {
    let obs: Vec<usize> = c.events.iter().copied().filter(|&e| !u.events[e].label.is_tau()).collect();
    c.events
        .iter()
        .filter(|&&x| u.events[x].label.is_tau() && !obs.iter().any(|&y| u.events[y].past.binary_search(&x).is_ok()))
        .count()
}

/// All topological sorts of the events of `c`.
pub fn linearizations(u: &Unfolding, c: &Configuration, bound: usize) -> Result<Vec<Vec<usize>>, UnfoldingError> {
    if c.len() > bound {
        return Err(UnfoldingError::TooManyEvents(c.len(), bound));
    }
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut placed = vec![false; c.len()];
    fn rec(
        u: &Unfolding,
        c: &Configuration,
        placed: &mut Vec<bool>,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if current.len() == c.len() {
            out.push(current.clone());
            return;
        }
        for i in 0..c.len() {
            if placed[i] {
                continue;
            }
            let e = c.events[i];
            let ready = u.events[e].causes.iter().all(|p| current.contains(p));
            if ready {
                placed[i] = true;
                current.push(e);
                rec(u, c, placed, current, out);
                current.pop();
                placed[i] = false;
            }
        }
    }
    rec(u, c, &mut placed, &mut current, &mut out);
    Ok(out)
}

/// Marking reached by firing the events of `c` along `order` from the initial marking.
pub fn replay_marking(u: &Unfolding, m: &NetModel, order: &[usize]) -> Marking {
    order.iter().fold(m.initial_marking.clone(), |mk, &e| {
        fire(&mk, &m.transitions[u.events[e].branch.transition]).expect("linearization is firable")
    })
}

/// Final marking of `c`; checked against a replay in debug builds.
pub fn config_marking(u: &Unfolding, m: &NetModel, c: &Configuration) -> Marking {
    if cfg!(debug_assertions) && c.len() <= 8 {
        if let Ok(ls) = linearizations(u, c, 8) {
            for l in ls.iter().take(4) {
                debug_assert_eq!(replay_marking(u, m, l), c.marking);
            }
        }
    }
    c.marking.clone()
}
