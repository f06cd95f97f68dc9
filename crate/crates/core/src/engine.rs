//! Targeted breadth-first exploration of the unfolding, generic over the
//! quantum backend.

use crate::model::{Branch, NetModel};
use crate::stabilizer::{StabilizerError, Tableau};
use crate::unfolding::{
    extensions, Configuration, ExtensionOptions, Restriction, TargetFamily, Unfolding, UnfoldingError,
};
use rayon::prelude::*;
use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error(transparent)]
    Unfolding(#[from] UnfoldingError),
    #[error("exploration exceeded {0} configurations")]
    TooManyConfigurations(usize),
    #[error("backend: {0}")]
    Backend(String),
}

impl From<StabilizerError> for ExploreError {
    fn from(e: StabilizerError) -> Self {
        ExploreError::Backend(e.to_string())
    }
}

/// State propagation used by the explorer.
pub trait Backend: Sync {
    type State: Clone + Send + Sync;
    fn initial(&self, m: &NetModel) -> Result<Self::State, ExploreError>;
    fn apply_branch(&self, s: &Self::State, b: &Branch) -> Result<Self::State, ExploreError>;
    /// Positive trace.
    fn is_reachable(&self, s: &Self::State) -> bool;
}

/// Exact stabilizer backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct TableauBackend;

impl Backend for TableauBackend {
    type State = Tableau;

    fn initial(&self, m: &NetModel) -> Result<Tableau, ExploreError> {
        Ok(Tableau::init(&m.initial_state, m.n_registers())?)
    }

    fn apply_branch(&self, s: &Tableau, b: &Branch) -> Result<Tableau, ExploreError> {
        let mut t = s.clone();
        t.apply_branch(b)?;
        Ok(t)
    }

    fn is_reachable(&self, s: &Tableau) -> bool {
        !s.is_zero()
    }
}

#[derive(Debug, Clone)]
pub struct ExploreOptions {
    /// Stop at transitions flagged as evaluation cuts.
    pub cut: bool,
    pub tau_bound: usize,
    pub max_configurations: usize,
    pub restriction: Restriction,
    /// Evaluate each frontier level in parallel.
    pub parallel: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            cut: true,
            tau_bound: 10_000,
            max_configurations: 1_000_000,
            restriction: Restriction::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node<S> {
    pub config: Configuration,
    pub state: S,
    /// Canonical observation pomset.
    pub obs: String,
    pub secret: bool,
    /// Some unobservable extension is reachable.
    pub has_tau_child: bool,
    /// Some targeted extension is reachable.
    pub has_child: bool,
}

/// Reachable targeted configurations in breadth-first order; within one
/// size level configurations are sorted by their event ids.
#[derive(Debug, Clone)]
pub struct Exploration<S> {
    pub unfolding: Unfolding,
    pub nodes: Vec<Node<S>>,
    /// Configurations generated, including unreachable ones.
    pub visited: usize,
}

impl<S> Exploration<S> {
    /// Maximal reachable configurations with the given observation.
    pub fn maximal_with_obs<'a>(&'a self, canonical: &'a str) -> impl Iterator<Item = usize> + 'a {
        (0..self.nodes.len()).filter(move |&i| !self.nodes[i].has_tau_child && self.nodes[i].obs == canonical)
    }

    pub fn with_obs<'a>(&'a self, canonical: &'a str) -> impl Iterator<Item = usize> + 'a {
        (0..self.nodes.len()).filter(move |&i| self.nodes[i].obs == canonical)
    }

    pub fn key(&self, i: usize) -> String {
        self.unfolding.config_key(&self.nodes[i].config)
    }
}

struct Candidate {
    parent: usize,
    event: usize,
    config: Configuration,
    obs: String,
    /// `(parent, unobservable)` for every way this configuration was generated.
    via: Vec<(usize, bool)>,
}

pub fn explore<B: Backend>(
    m: &NetModel,
    fam: &TargetFamily,
    backend: &B,
    opts: &ExploreOptions,
) -> Result<Exploration<B::State>, ExploreError> {
    let mut u = Unfolding::new();
    let root = Configuration::empty(m);
    let state = backend.initial(m)?;
    let secret = m.is_secret(&root.marking, std::iter::empty());
    let mut nodes = vec![Node { config: root, state, obs: "|".to_string(), secret, has_tau_child: false, has_child: false }];
    let mut level = vec![0usize];
    let mut visited = 1usize;
    let ext_opts = ExtensionOptions { cut: opts.cut, tau_bound: opts.tau_bound };
    let keyed = !opts.restriction.disabled_at.is_empty();

    while !level.is_empty() {
        let mut cands: Vec<Candidate> = Vec::new();
        let mut pending: HashMap<Vec<usize>, usize> = HashMap::new();
        for &pi in &level {
            let key = keyed.then(|| u.config_key(&nodes[pi].config));
            let parent = &nodes[pi];
            let exts = extensions(
                &mut u,
                m,
                &parent.config,
                &parent.obs,
                key.as_deref(),
                fam,
                &opts.restriction,
                ext_opts,
            )?;
            for x in exts {
                let tau = u.events[x.event].label.is_tau();
                match pending.get(&x.child.events) {
                    Some(&ci) => cands[ci].via.push((pi, tau)),
                    None => {
                        pending.insert(x.child.events.clone(), cands.len());
                        cands.push(Candidate { parent: pi, event: x.event, config: x.child, obs: x.obs, via: vec![(pi, tau)] });
                    }
                }
            }
        }
        visited += cands.len();
        if nodes.len() + cands.len() > opts.max_configurations {
            return Err(ExploreError::TooManyConfigurations(opts.max_configurations));
        }
        let step = |c: &Candidate| -> Result<B::State, ExploreError> {
            let br = u.events[c.event].branch;
            backend.apply_branch(&nodes[c.parent].state, &m.transitions[br.transition].branches[br.branch])
        };
        let states: Vec<B::State> = if opts.parallel {
            cands.par_iter().map(step).collect::<Result<_, _>>()?
        } else {
            cands.iter().map(step).collect::<Result<_, _>>()?
        };
        let mut next = Vec::new();
        for (c, s) in cands.into_iter().zip(states) {
            if !backend.is_reachable(&s) {
                continue;
            }
            for &(p, tau) in &c.via {
                nodes[p].has_child = true;
                if tau {
                    nodes[p].has_tau_child = true;
                }
            }
            let secret = m.is_secret(&c.config.marking, c.config.transitions(&u));
            let id = nodes.len();
            nodes.push(Node { config: c.config, state: s, obs: c.obs, secret, has_tau_child: false, has_child: false });
            next.push(id);
        }
        next.sort_by(|a, b| nodes[*a].config.events.cmp(&nodes[*b].config.events));
        level = next;
    }
    Ok(Exploration { unfolding: u, nodes, visited })
}
