//! Labelled partial orders and their canonical forms.

use std::collections::{BTreeMap, HashSet, VecDeque};

/// Finite labelled poset. `less[i][j]` holds iff `i < j` (strict, transitive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pomset {
    pub labels: Vec<String>,
    less: Vec<Vec<bool>>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PomsetError {
    #[error("order relation contains a cycle")]
    Cyclic,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("pomset has {0} nodes; at most {1} are supported here")]
    TooLarge(usize, usize),
}

impl Pomset {
    pub fn empty() -> Self {
        Pomset { labels: Vec::new(), less: Vec::new() }
    }

    /// Builds the transitive closure of `edges` (pairs `a < b`).
    pub fn new(labels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self, PomsetError> {
        let n = labels.len();
        let mut less = vec![vec![false; n]; n];
        for &(a, b) in edges {
            less[a][b] = true;
        }
        for k in 0..n {
            for i in 0..n {
                if less[i][k] {
                    for j in 0..n {
                        if less[k][j] {
                            less[i][j] = true;
                        }
                    }
                }
            }
        }
        if (0..n).any(|i| less[i][i]) {
            return Err(PomsetError::Cyclic);
        }
        Ok(Pomset { labels, less })
    }

    pub fn chain<S: AsRef<str>>(labels: &[S]) -> Self {
        let edges: Vec<(usize, usize)> = (1..labels.len()).map(|i| (i - 1, i)).collect();
        Pomset::new(labels.iter().map(|s| s.as_ref().to_string()).collect(), &edges).expect("chains are acyclic")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn less(&self, i: usize, j: usize) -> bool {
        self.less[i][j]
    }

    /// Covering pairs of the order.
    pub fn hasse(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.less[i][j] && !(0..n).any(|k| self.less[i][k] && self.less[k][j]) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Restriction to the nodes in `keep` (kept in increasing index order).
    pub fn restrict(&self, keep: &[usize]) -> Pomset {
        let labels = keep.iter().map(|&i| self.labels[i].clone()).collect();
        let less = keep.iter().map(|&i| keep.iter().map(|&j| self.less[i][j]).collect()).collect();
        Pomset { labels, less }
    }

    pub fn is_downward_closed(&self, set: &[bool]) -> bool {
        (0..self.len()).all(|j| !set[j] || (0..self.len()).all(|i| !self.less[i][j] || set[i]))
    }

    /// All downward-closed subsets as bitmasks, in breadth-first order.
    pub fn ideals(&self) -> Result<Vec<u64>, PomsetError> {
        let n = self.len();
        if n > 63 {
            return Err(PomsetError::TooLarge(n, 63));
        }
        let preds: Vec<u64> = (0..n)
            .map(|j| (0..n).filter(|&i| self.less[i][j]).fold(0u64, |m, i| m | 1 << i))
            .collect();
        let mut seen = HashSet::from([0u64]);
        let mut queue = VecDeque::from([0u64]);
        let mut out = Vec::new();
        while let Some(m) = queue.pop_front() {
            out.push(m);
            for j in 0..n {
                if m >> j & 1 == 0 && preds[j] & !m == 0 {
                    let next = m | 1 << j;
                    if seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn restrict_mask(&self, mask: u64) -> Pomset {
        let keep: Vec<usize> = (0..self.len()).filter(|i| mask >> i & 1 == 1).collect();
        self.restrict(&keep)
    }

    /// Number of linear extensions, by dynamic programming over ideals.
    pub fn count_linear_extensions(&self) -> Result<u128, PomsetError> {
        let ideals = self.ideals()?;
        let n = self.len();
        let mut ways: BTreeMap<u64, u128> = BTreeMap::new();
        ways.insert(0, 1);
        // breadth-first order lists ideals by size, so predecessors come first
        for m in ideals {
            let w = ways.get(&m).copied().unwrap_or(0);
            for j in 0..n {
                if m >> j & 1 == 0 && (0..n).all(|i| !self.less[i][j] || m >> i & 1 == 1) {
                    *ways.entry(m | 1 << j).or_insert(0) += w;
                }
            }
        }
        let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Ok(ways.get(&full).copied().unwrap_or(1))
    }

    /// Canonical string: equal for two pomsets iff they are isomorphic.
    pub fn canonical(&self) -> String {
        let perm = canonical_order(self);
        let mut pos = vec![0; self.len()];
        for (new, &old) in perm.iter().enumerate() {
            pos[old] = new;
        }
        render(self, &perm, &pos)
    }
}

fn render(p: &Pomset, perm: &[usize], pos: &[usize]) -> String {
    let labels: Vec<&str> = perm.iter().map(|&i| p.labels[i].as_str()).collect();
    let mut edges: Vec<(usize, usize)> = p.hasse().into_iter().map(|(a, b)| (pos[a], pos[b])).collect();
    edges.sort_unstable();
    let edges: Vec<String> = edges.iter().map(|(a, b)| format!("{a}<{b}")).collect();
    format!("{}|{}", labels.join(","), edges.join(","))
}

/// Replaces colours by ranks of `key(node)`.
fn rank_by<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).unwrap()).collect()
}

fn refine(p: &Pomset, colors: &[usize]) -> Vec<usize> {
    let n = p.len();
    let mut colors = colors.to_vec();
    loop {
        let sigs: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..n)
            .map(|v| {
                let mut below: Vec<usize> = (0..n).filter(|&u| p.less[u][v]).map(|u| colors[u]).collect();
                let mut above: Vec<usize> = (0..n).filter(|&u| p.less[v][u]).map(|u| colors[u]).collect();
                below.sort_unstable();
                above.sort_unstable();
                (colors[v], below, above)
            })
            .collect();
        let next = rank_by(&sigs);
        let classes = |c: &[usize]| c.iter().collect::<HashSet<_>>().len();
        if classes(&next) == classes(&colors) {
            return next;
        }
        colors = next;
    }
}

fn are_twins(p: &Pomset, u: usize, v: usize) -> bool {
    (0..p.len()).filter(|&w| w != u && w != v).all(|w| p.less[w][u] == p.less[w][v] && p.less[u][w] == p.less[v][w])
}

fn canonical_order(p: &Pomset) -> Vec<usize> {
    let n = p.len();
    if n == 0 {
        return Vec::new();
    }
    let init: Vec<(String, usize, usize)> = (0..n)
        .map(|v| {
            let below = (0..n).filter(|&u| p.less[u][v]).count();
            let above = (0..n).filter(|&u| p.less[v][u]).count();
            (p.labels[v].clone(), below, above)
        })
        .collect();
    let colors = refine(p, &rank_by(&init));
    let mut best: Option<(String, Vec<usize>)> = None;
    search(p, colors, &mut best);
    best.unwrap().1
}

fn search(p: &Pomset, colors: Vec<usize>, best: &mut Option<(String, Vec<usize>)>) {
    let n = p.len();
    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        cells.entry(colors[v]).or_default().push(v);
    }
    let Some(cell) = cells.values().find(|c| c.len() > 1).cloned() else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by_key(|&v| colors[v]);
        let mut pos = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pos[old] = new;
        }
        let s = render(p, &perm, &pos);
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            *best = Some((s, perm));
        }
        return;
    };
    let all_twins = cell.iter().all(|&u| cell.iter().all(|&v| u == v || are_twins(p, u, v)));
    let choices: &[usize] = if all_twins { &cell[..1] } else { &cell };
    for &v in choices {
        // the chosen vertex gets a colour just below the rest of its cell
        let split: Vec<(usize, bool)> = (0..n).map(|u| (colors[u], u != v)).collect();
        let refined = refine(p, &rank_by(&split));
        search(p, refined, best);
    }
}
