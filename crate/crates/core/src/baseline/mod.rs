//! Interleaving reference simulator over explicit density matrices, and the
//! quotient-versus-interleaving benchmark.

pub mod dense;

use crate::engine::{self, Backend, ExploreError, ExploreOptions};
use crate::model::{enabled, fire, Branch, Label, Marking, NetModel};
use crate::stabilizer::PauliCoefficients;
use crate::unfolding::{Pomset, TargetFamily};
use dense::{CMatrix, DenseState, DimensionError};
use num_complex::Complex64;
use std::collections::BTreeSet;
use std::time::{Duration, Instant};

/// Weights below this are treated as unreachable by the dense backends.
pub const DENSE_ZERO: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error(transparent)]
    Dimension(#[from] DimensionError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error("more than {0} executions")]
    TooManyExecutions(usize),
    #[error("divergence guard: more than {0} consecutive unobservable events")]
    Divergence(usize),
    #[error("target `{0}` has more than 63 nodes")]
    TargetTooLarge(String),
    #[error("benchmark cell m={0} exceeded {1:?}")]
    Timeout(usize, Duration),
    #[error("io: {0}")]
    Io(String),
}

/// Exploration backend on explicit density matrices.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseBackend;

impl Backend for DenseBackend {
    type State = DenseState;

    fn initial(&self, m: &NetModel) -> Result<DenseState, ExploreError> {
        DenseState::from_prep(&m.initial_state).map_err(|e| ExploreError::Backend(e.to_string()))
    }

    fn apply_branch(&self, s: &DenseState, b: &Branch) -> Result<DenseState, ExploreError> {
        let mut t = s.clone();
        t.apply_branch(b);
        Ok(t)
    }

    fn is_reachable(&self, s: &DenseState) -> bool {
        s.trace() > DENSE_ZERO
    }
}

/// Floating-point posterior aggregate of one target.
#[derive(Debug, Clone)]
pub struct DenseAggregate {
    pub name: String,
    /// Index 0 is the non-secret class.
    pub omega: [CMatrix; 2],
    pub p: [f64; 2],
    pub present: [bool; 2],
}

impl DenseAggregate {
    fn zero(name: &str, k: usize) -> Self {
        let z = CMatrix::zeros(1 << k, 1 << k);
        DenseAggregate { name: name.to_string(), omega: [z.clone(), z], p: [0.0; 2], present: [false; 2] }
    }

    fn finish(&mut self) {
        for b in 0..2 {
            self.p[b] = self.omega[b].trace().re;
        }
    }
}

/// Largest entrywise deviation between a dense aggregate and exact coefficients.
pub fn max_deviation(d: &CMatrix, exact: &PauliCoefficients) -> f64 {
    match exact.to_dense() {
        Ok(e) => (d - e).iter().map(|z| z.norm()).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    }
}

/// Quotient aggregation with density matrices in place of tableaus.
pub fn quotient_dense_aggregate(
    m: &NetModel,
    fam: &TargetFamily,
    opts: &ExploreOptions,
) -> Result<Vec<DenseAggregate>, BaselineError> {
    let x = engine::explore(m, fam, &DenseBackend, opts)?;
    let iface = &m.attacker_interface;
    let mut out = Vec::new();
    for t in &fam.targets {
        let mut agg = DenseAggregate::zero(&t.name, iface.len());
        for i in x.maximal_with_obs(&t.canonical) {
            let node = &x.nodes[i];
            let b = node.secret as usize;
            agg.omega[b] += node.state.partial_trace(iface);
            agg.present[b] = true;
        }
        agg.finish();
        out.push(agg);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accounting {
    /// Every linearization contributes its final state divided by the number
    /// of linearizations of its causal order.
    DivideByCount,
    /// Only the canonical linearization of each causal order contributes.
    CanonicalOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct InterleavingOptions {
    pub accounting: Accounting,
    pub cut: bool,
    pub tau_bound: usize,
    /// Cap on explored executions (prefixes included).
    pub max_executions: usize,
}

impl Default for InterleavingOptions {
    fn default() -> Self {
        InterleavingOptions {
            accounting: Accounting::DivideByCount,
            cut: true,
            tau_bound: 10_000,
            max_executions: 5_000_000,
        }
    }
}

struct TargetAutomaton {
    labels: Vec<String>,
    preds: Vec<u64>,
    full: u64,
    canonical: String,
}

impl TargetAutomaton {
    fn new(name: &str, p: &Pomset) -> Result<Self, BaselineError> {
        let n = p.len();
        if n > 63 {
            return Err(BaselineError::TargetTooLarge(name.to_string()));
        }
        let preds = (0..n).map(|j| (0..n).filter(|&i| p.less(i, j)).fold(0u64, |a, i| a | 1 << i)).collect();
        Ok(TargetAutomaton { labels: p.labels.clone(), preds, full: (1u64 << n) - 1, canonical: p.canonical() })
    }

    /// Ideals reachable after reading `label` from any ideal in `from`.
    fn step(&self, from: &[u64], label: &str) -> Vec<u64> {
        let mut out = BTreeSet::new();
        for &mask in from {
            for (j, l) in self.labels.iter().enumerate() {
                if l == label && mask >> j & 1 == 0 && self.preds[j] & !mask == 0 {
                    out.insert(mask | 1 << j);
                }
            }
        }
        out.into_iter().collect()
    }
}

struct Run<'a> {
    m: &'a NetModel,
    opts: InterleavingOptions,
    targets: Vec<TargetAutomaton>,
    out: Vec<DenseAggregate>,
    executions: usize,
    /// `(transition, branch)` per step.
    steps: Vec<(usize, usize)>,
    /// Direct causes per step.
    causes: Vec<Vec<usize>>,
}

impl Run<'_> {
    fn dfs(
        &mut self,
        marking: &Marking,
        state: &DenseState,
        masks: &[Vec<u64>],
        last_place: &[Option<usize>],
        last_register: &[Option<usize>],
        tau_run: usize,
    ) -> Result<(), BaselineError> {
        self.executions += 1;
        if self.executions > self.opts.max_executions {
            return Err(BaselineError::TooManyExecutions(self.opts.max_executions));
        }
        let m = self.m;
        let mut tau_child = false;
        for (t, tr) in m.transitions.iter().enumerate() {
            if (self.opts.cut && tr.evaluation_cut) || !enabled(marking, tr) {
                continue;
            }
            let next_marking = fire(marking, tr).expect("enabled");
            let mut causes = BTreeSet::new();
            let mut lp = last_place.to_vec();
            let mut lr = last_register.to_vec();
            let idx = self.steps.len();
            for p in tr.neighbourhood() {
                causes.extend(last_place[p]);
                lp[p] = Some(idx);
            }
            for &q in &tr.access {
                causes.extend(last_register[q]);
                lr[q] = Some(idx);
            }
            for (b, branch) in tr.branches.iter().enumerate() {
                let mut s = state.clone();
                s.apply_branch(branch);
                if s.trace() <= DENSE_ZERO {
                    continue;
                }
                let (next_masks, run) = match &branch.label {
                    Label::Tau => {
                        tau_child = true;
                        if tau_run + 1 > self.opts.tau_bound {
                            return Err(BaselineError::Divergence(self.opts.tau_bound));
                        }
                        (masks.to_vec(), tau_run + 1)
                    }
                    Label::Obs(l) => {
                        let nm: Vec<Vec<u64>> =
                            self.targets.iter().zip(masks).map(|(a, ms)| a.step(ms, l)).collect();
                        if nm.iter().all(|v| v.is_empty()) {
                            continue;
                        }
                        (nm, 0)
                    }
                };
                self.steps.push((t, b));
                self.causes.push(causes.iter().copied().collect());
                self.dfs(&next_marking, &s, &next_masks, &lp, &lr, run)?;
                self.steps.pop();
                self.causes.pop();
            }
        }
        if !tau_child {
            self.record(masks)?;
        }
        Ok(())
    }

    fn causal_poset(&self) -> Pomset {
        let labels = self.steps.iter().map(|&(t, b)| self.m.transitions[t].branches[b].label.to_string()).collect();
        let edges: Vec<(usize, usize)> =
            self.causes.iter().enumerate().flat_map(|(j, cs)| cs.iter().map(move |&i| (i, j))).collect();
        Pomset::new(labels, &edges).expect("execution order is acyclic")
    }

    /// Whether the execution is the greedy smallest linearization of its own
    /// causal order.
    fn is_canonical(&self) -> bool {
        let n = self.steps.len();
        let mut placed = vec![false; n];
        for (pos, &step) in self.steps.iter().enumerate() {
            let best = (0..n)
                .filter(|&j| !placed[j] && self.causes[j].iter().all(|&c| placed[c]))
                .min_by_key(|&j| self.steps[j])
                .expect("some event is ready");
            if self.steps[best] != step || best != pos {
                return false;
            }
            placed[best] = true;
        }
        true
    }

    fn record(&mut self, masks: &[Vec<u64>]) -> Result<(), BaselineError> {
        let hits: Vec<usize> =
            (0..self.targets.len()).filter(|&k| masks[k].contains(&self.targets[k].full)).collect();
        if hits.is_empty() {
            return Ok(());
        }
        let poset = self.causal_poset();
        let observable: Vec<usize> =
            (0..poset.len()).filter(|&i| !self.m.transitions[self.steps[i].0].branches[self.steps[i].1].label.is_tau()).collect();
        let obs = poset.restrict(&observable).canonical();
        let factor = match self.opts.accounting {
            Accounting::DivideByCount => {
                let count = if poset.len() <= 63 { poset.count_linear_extensions().unwrap_or(1) } else { 1 };
                1.0 / count as f64
            }
            Accounting::CanonicalOnly => {
                if !self.is_canonical() {
                    return Ok(());
                }
                1.0
            }
        };
        // naive denotation: replay the whole execution from the initial state
        let mut s = DenseState::from_prep(&self.m.initial_state)?;
        for &(t, b) in &self.steps {
            s.apply_branch(&self.m.transitions[t].branches[b]);
        }
        let fired = self.steps.iter().map(|&(t, _)| t);
        let marking = self.steps.iter().fold(self.m.initial_marking.clone(), |mk, &(t, _)| {
            fire(&mk, &self.m.transitions[t]).expect("replay")
        });
        let bit = self.m.is_secret(&marking, fired) as usize;
        let reduced = s.partial_trace(&self.m.attacker_interface) * Complex64::new(factor, 0.0);
        for k in hits {
            if self.targets[k].canonical == obs {
                self.out[k].omega[bit] += &reduced;
                self.out[k].present[bit] = true;
            }
        }
        Ok(())
    }
}

/// Sums the interface states of all maximal linear executions whose
/// observation is a target, one target at a time.
pub fn interleaving_aggregate(
    m: &NetModel,
    fam: &TargetFamily,
    opts: InterleavingOptions,
) -> Result<Vec<DenseAggregate>, BaselineError> {
    let state = DenseState::from_prep(&m.initial_state)?;
    let targets =
        fam.targets.iter().map(|t| TargetAutomaton::new(&t.name, &t.pomset)).collect::<Result<Vec<_>, _>>()?;
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let k = m.attacker_interface.len();
    let mut run = Run {
        m,
        opts,
        out: fam.targets.iter().map(|t| DenseAggregate::zero(&t.name, k)).collect(),
        targets,
        executions: 0,
        steps: Vec::new(),
        causes: Vec::new(),
    };
    let masks: Vec<Vec<u64>> = vec![vec![0]; run.targets.len()];
    run.dfs(&m.initial_marking, &state, &masks, &vec![None; m.places.len()], &vec![None; m.n_registers()], 0)?;
    let mut out = run.out;
    for a in &mut out {
        a.finish();
    }
    Ok(out)
}

/// Interleavings of `m` calibration events with the three-event foreground chain.
pub fn shuffle_count(m: u64) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=3u128 {
        c = c * (m as u128 + i) / i;
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub m: usize,
    pub n_seq: u128,
    pub t_interleaving: Duration,
    pub t_quotient: Duration,
    pub speedup: f64,
    /// Largest entrywise disagreement between the two aggregates.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub repetitions: usize,
    pub timeout: Duration,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { repetitions: 3, timeout: Duration::from_secs(60) }
    }
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

fn deviation(a: &[DenseAggregate], b: &[DenseAggregate]) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        for k in 0..2 {
            let d = (&x.omega[k] - &y.omega[k]).iter().map(|z| z.norm()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    worst
}

/// Times both simulators on `target(m)` for each `m`, sequentially.
pub fn bench(
    model: &NetModel,
    target: impl Fn(usize) -> crate::model::TargetSpec,
    ms: &[usize],
    opts: BenchOptions,
) -> Result<Vec<BenchRecord>, BaselineError> {
    let mut out = Vec::new();
    for &m in ms {
        let fam = TargetFamily::from_specs(&[target(m)]).map_err(|e| ExploreError::Unfolding(e))?;
        let qopts = ExploreOptions { parallel: false, ..Default::default() };
        let mut tq = Vec::new();
        let mut ti = Vec::new();
        let mut q = Vec::new();
        let mut il = Vec::new();
        for _ in 0..opts.repetitions.max(1) {
            let start = Instant::now();
            il = interleaving_aggregate(model, &fam, InterleavingOptions::default())?;
            ti.push(start.elapsed());
            let start = Instant::now();
            q = quotient_dense_aggregate(model, &fam, &qopts)?;
            tq.push(start.elapsed());
            if *ti.last().unwrap() + *tq.last().unwrap() > opts.timeout {
                return Err(BaselineError::Timeout(m, opts.timeout));
            }
        }
        let (t_interleaving, t_quotient) = (median(ti), median(tq));
        out.push(BenchRecord {
            m,
            n_seq: shuffle_count(m as u64),
            t_interleaving,
            t_quotient,
            speedup: t_interleaving.as_secs_f64() / t_quotient.as_secs_f64().max(1e-9),
            max_deviation: deviation(&il, &q),
        });
    }
    Ok(out)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn write_bench_csv(path: &std::path::Path, records: &[BenchRecord]) -> Result<(), BaselineError> {
    let io = |e: csv::Error| BaselineError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["m", "n_seq", "t_interleaving_ms", "t_quotient_ms", "speedup"]).map_err(io)?;
    for r in records {
        w.write_record([
            r.m.to_string(),
            r.n_seq.to_string(),
            format!("{:.3}", ms(r.t_interleaving)),
            format!("{:.3}", ms(r.t_quotient)),
            format!("{:.2}", r.speedup),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| BaselineError::Io(e.to_string()))
}

pub fn bench_plot_json(records: &[BenchRecord]) -> serde_json::Value {
    serde_json::json!({
        "x": "m",
        "m": records.iter().map(|r| r.m).collect::<Vec<_>>(),
        "n_seq": records.iter().map(|r| r.n_seq as u64).collect::<Vec<_>>(),
        "t_interleaving_ms": records.iter().map(|r| ms(r.t_interleaving)).collect::<Vec<_>>(),
        "t_quotient_ms": records.iter().map(|r| ms(r.t_quotient)).collect::<Vec<_>>(),
        "speedup": records.iter().map(|r| r.speedup).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::model::parse_model;
    use crate::verifier;

    fn fam(m: &NetModel, names: &[&str]) -> TargetFamily {
        let all = TargetFamily::from_specs(&m.targets).unwrap();
        TargetFamily::new(names.iter().map(|n| (n.to_string(), all.get(n).unwrap().pomset.clone())).collect()).unwrap()
    }

    #[test]
    fn shuffle_counts() {
        assert_eq!([0, 1, 4, 8, 12].map(shuffle_count), [1, 4, 35, 165, 455]);
    }

    #[test]
    fn repeater_interleaving_matches_verifier() {
        let m = bundled::repeater();
        let f = fam(&m, &["O_fg", "O_fail"]);
        let exact = {
            let x = verifier::explore(&m, &f, &ExploreOptions::default()).unwrap();
            verifier::aggregate(&x, &m, &f).unwrap()
        };
        for acc in [Accounting::DivideByCount, Accounting::CanonicalOnly] {
            let il = interleaving_aggregate(&m, &f, InterleavingOptions { accounting: acc, ..Default::default() }).unwrap();
            for (d, e) in il.iter().zip(&exact) {
                for b in 0..2 {
                    assert!(max_deviation(&d.omega[b], &e.classes[b].omega) < 1e-10);
                    assert_eq!(d.present[b], e.classes[b].present);
                }
            }
        }
        let q = quotient_dense_aggregate(&m, &f, &ExploreOptions::default()).unwrap();
        for (d, e) in q.iter().zip(&exact) {
            for b in 0..2 {
                assert!(max_deviation(&d.omega[b], &e.classes[b].omega) < 1e-10);
            }
        }
    }

    #[test]
    fn concurrent_observables_counted_once() {
        let text = r#"{
            "control_places": ["a", "b", "a2", "b2"], "quantum_registers": ["q"],
            "observable_alphabet": ["x", "y"], "initial_marking": ["a", "b"],
            "initial_state": {"assign": {"q": "+"}}, "attacker_interface": ["q"],
            "secret": {"mode": "event-predicate", "transitions": []},
            "transitions": [
                {"id": "tx", "pre": ["a"], "post": ["a2"], "branches": [{"outcome": "0", "label": "x"}]},
                {"id": "ty", "pre": ["b"], "post": ["b2"], "branches": [{"outcome": "0", "label": "y"}]}
            ],
            "targets": [{"name": "xy", "nodes": [{"id": "1", "label": "x"}, {"id": "2", "label": "y"}], "order": []}]
        }"#;
        let m = parse_model(text).unwrap();
        let f = TargetFamily::from_specs(&m.targets).unwrap();
        let il = interleaving_aggregate(&m, &f, InterleavingOptions::default()).unwrap();
        assert!((il[0].p[0] - 1.0).abs() < 1e-12);
        assert!(interleaving_aggregate(&m, &TargetFamily::new(vec![]).unwrap(), Default::default()).unwrap().is_empty());
    }

    #[test]
    fn em_bench_agrees() {
        let m = bundled::repeater();
        let r = bench(&m, bundled::em_target, &[0, 2], BenchOptions { repetitions: 1, ..Default::default() }).unwrap();
        assert_eq!(r[0].n_seq, 1);
        assert_eq!(r[1].n_seq, 10);
        assert!(r.iter().all(|x| x.max_deviation < 1e-10));
    }
}
