//! Causal structure discovery over object categories.
//!
//! Presence is binary per scene: an object category counts once no matter
//! how many instances appear. The pipeline is: co-occurrence tables, a
//! chi-squared conditional-independence skeleton, common-parent orientation
//! with cycle-free propagation, geometric support/enclosure edges, and an
//! acyclicity-preserving union.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
// Resolves f64 math when the crate is built without std.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::scene::{CategoryId, Scene, Vocabulary};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CausalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("conditioning category {k} is constant across the corpus")]
    DegenerateStratum { k: CategoryId },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Per-scene presence counts: singles, pairs and triples over category ids.
/// Index 0 (the room) is carried but is constant by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceTables {
    n_scenes: usize,
    m: usize,
    singles: Vec<u32>,
    pairs: Vec<u32>,
    triples: Vec<u32>,
}

impl CooccurrenceTables {
    pub fn n_scenes(&self) -> usize {
        self.n_scenes
    }

    pub fn n_categories(&self) -> usize {
        self.m
    }

    /// Scenes containing category `k`.
    pub fn single(&self, k: CategoryId) -> u32 {
        self.singles[k]
    }

    /// Scenes containing both `j` and `k`.
    pub fn pair(&self, j: CategoryId, k: CategoryId) -> u32 {
        self.pairs[j * self.m + k]
    }

    /// Scenes containing all of `j`, `jp` and `k`.
    pub fn triple(&self, j: CategoryId, jp: CategoryId, k: CategoryId) -> u32 {
        self.triples[(j * self.m + jp) * self.m + k]
    }

    /// Builds tables directly from 2x2x2 cell counts for three categories
    /// (ids 1, 2, 3); cell `[j][jp][k]` is the number of scenes with that
    /// presence pattern. Intended for tests and calibration.
    pub fn from_cells(cells: [[[u32; 2]; 2]; 2]) -> Self {
        let m = 4;
        let mut t = CooccurrenceTables {
            n_scenes: 0,
            m,
            singles: alloc::vec![0; m],
            pairs: alloc::vec![0; m * m],
            triples: alloc::vec![0; m * m * m],
        };
        for j in 0..2usize {
            for jp in 0..2usize {
                for k in 0..2usize {
                    for _ in 0..cells[j][jp][k] {
                        let mut present = alloc::vec![0usize];
                        if j == 1 {
                            present.push(1);
                        }
                        if jp == 1 {
                            present.push(2);
                        }
                        if k == 1 {
                            present.push(3);
                        }
                        t.record(&present);
                    }
                }
            }
        }
        t
    }

    fn record(&mut self, present: &[CategoryId]) {
        self.n_scenes += 1;
        for &a in present {
            self.singles[a] += 1;
            for &b in present {
                self.pairs[a * self.m + b] += 1;
                for &c in present {
                    self.triples[(a * self.m + b) * self.m + c] += 1;
                }
            }
        }
    }
}

/// Counts category presence per scene (the room, id 0, is always present).
pub fn build_tables(
    corpus: &[Scene],
    n_categories: usize,
) -> Result<CooccurrenceTables, CausalError> {
    if corpus.is_empty() {
        return Err(CausalError::EmptyCorpus);
    }
    let m = n_categories;
    let mut t = CooccurrenceTables {
        n_scenes: 0,
        m,
        singles: alloc::vec![0; m],
        pairs: alloc::vec![0; m * m],
        triples: alloc::vec![0; m * m * m],
    };
    for scene in corpus {
        let mut present = scene.present_categories();
        present.insert(0, 0);
        t.record(&present);
    }
    Ok(t)
}

/// Chi-squared statistic and p-value for the conditional independence of
/// `j` and `jp` given `k`, summed over the eight presence/absence cells
/// with per-stratum expectations. Two degrees of freedom, so the survival
/// function is exactly `exp(-chi2 / 2)`. Cells with zero expected count
/// contribute zero.
pub fn chi2_statistic(
    t: &CooccurrenceTables,
    j: CategoryId,
    jp: CategoryId,
    k: CategoryId,
) -> Result<(f64, f64), CausalError> {
    assert!(j != jp && j != k && jp != k, "categories must be distinct");
    let n = t.n_scenes() as i64;
    let ok = i64::from(t.single(k));
    if ok == 0 || ok == n {
        return Err(CausalError::DegenerateStratum { k });
    }
    let oj = i64::from(t.single(j));
    let ojp = i64::from(t.single(jp));
    let ojjp = i64::from(t.pair(j, jp));
    let ojk = i64::from(t.pair(j, k));
    let ojpk = i64::from(t.pair(jp, k));
    let o3 = i64::from(t.triple(j, jp, k));

    // Cell counts per stratum of k via inclusion-exclusion; rows index the
    // presence of j, columns the presence of jp.
    let k1 = [[ok - ojk - ojpk + o3, ojpk - o3], [ojk - o3, o3]];
    let nk0 = n - ok;
    let k0 = [
        [
            nk0 - (oj - ojk) - (ojp - ojpk) + (ojjp - o3),
            (ojp - ojpk) - (ojjp - o3),
        ],
        [(oj - ojk) - (ojjp - o3), ojjp - o3],
    ];

    let mut chi2 = 0.0;
    for (cells, total) in [(k1, ok), (k0, nk0)] {
        let rows = [cells[0][0] + cells[0][1], cells[1][0] + cells[1][1]];
        let cols = [cells[0][0] + cells[1][0], cells[0][1] + cells[1][1]];
        for r in 0..2 {
            for c in 0..2 {
                let expected = rows[r] as f64 * cols[c] as f64 / total as f64;
                if expected > 0.0 {
                    let d = cells[r][c] as f64 - expected;
                    chi2 += d * d / expected;
                }
            }
        }
    }
    Ok((chi2, chi2_survival_2dof(chi2)))
}

/// Survival function of the chi-squared distribution with two degrees of
/// freedom, which has the closed form `exp(-x / 2)`.
pub fn chi2_survival_2dof(x: f64) -> f64 {
    (-x / 2.0).exp()
}

/// Edge mark between two categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMark {
    Undirected,
    Directed,
}

/// Mixed graph over categories: undirected dependence edges plus directed
/// causal edges. Every constructor in this module keeps the directed part
/// acyclic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CausalGraph {
    directed: BTreeSet<(CategoryId, CategoryId)>,
    undirected: BTreeSet<(CategoryId, CategoryId)>,
}

impl CausalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_undirected(&mut self, a: CategoryId, b: CategoryId) {
        assert!(a != b, "no self loops");
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        if !self.adjacent(a, b) {
            self.undirected.insert((a, b));
        }
    }

    pub fn add_directed(&mut self, a: CategoryId, b: CategoryId) {
        assert!(a != b, "no self loops");
        self.undirected.remove(&(a.min(b), a.max(b)));
        self.directed.insert((a, b));
    }

    pub fn has_directed(&self, a: CategoryId, b: CategoryId) -> bool {
        self.directed.contains(&(a, b))
    }

    pub fn has_undirected(&self, a: CategoryId, b: CategoryId) -> bool {
        self.undirected.contains(&(a.min(b), a.max(b)))
    }

    pub fn adjacent(&self, a: CategoryId, b: CategoryId) -> bool {
        self.has_undirected(a, b) || self.has_directed(a, b) || self.has_directed(b, a)
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = (CategoryId, CategoryId)> + '_ {
        self.directed.iter().copied()
    }

    pub fn undirected_edges(&self) -> impl Iterator<Item = (CategoryId, CategoryId)> + '_ {
        self.undirected.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.directed.len() + self.undirected.len()
    }

    /// Nodes adjacent to `a` under any mark.
    pub fn neighbors(&self, a: CategoryId) -> BTreeSet<CategoryId> {
        let mut out = BTreeSet::new();
        for &(x, y) in self.undirected.iter().chain(self.directed.iter()) {
            if x == a {
                out.insert(y);
            }
            if y == a {
                out.insert(x);
            }
        }
        out
    }

    pub fn out_degree(&self, a: CategoryId) -> usize {
        self.directed.iter().filter(|(x, _)| *x == a).count()
    }

    pub fn in_degree(&self, a: CategoryId) -> usize {
        self.directed.iter().filter(|(_, y)| *y == a).count()
    }

    pub fn out_neighbors(&self, a: CategoryId) -> Vec<CategoryId> {
        self.directed
            .iter()
            .filter(|(x, _)| *x == a)
            .map(|(_, y)| *y)
            .collect()
    }

    /// Whether a directed path leads from `a` to `b`.
    pub fn reaches(&self, a: CategoryId, b: CategoryId) -> bool {
        let mut frontier = alloc::vec![a];
        let mut seen = BTreeSet::new();
        while let Some(x) = frontier.pop() {
            if x == b {
                return true;
            }
            if !seen.insert(x) {
                continue;
            }
            for (s, t) in &self.directed {
                if *s == x && !seen.contains(t) {
                    frontier.push(*t);
                }
            }
        }
        false
    }

    /// Kahn-style check that the directed part has no cycle.
    pub fn directed_is_acyclic(&self) -> bool {
        let nodes: BTreeSet<CategoryId> =
            self.directed.iter().flat_map(|&(a, b)| [a, b]).collect();
        let mut indeg: Vec<(CategoryId, usize)> = nodes
            .iter()
            .map(|&n| (n, self.directed.iter().filter(|(_, y)| *y == n).count()))
            .collect();
        let mut removed: BTreeSet<CategoryId> = BTreeSet::new();
        loop {
            let next = indeg
                .iter()
                .find(|(n, d)| !removed.contains(n) && *d == 0)
                .map(|(n, _)| *n);
            match next {
                None => break,
                Some(n) => {
                    removed.insert(n);
                    for (m, d) in indeg.iter_mut() {
                        if self.directed.contains(&(n, *m)) && *d > 0 {
                            *d -= 1;
                        }
                    }
                }
            }
        }
        removed.len() == nodes.len()
    }

    /// Text export: one edge per line, `a -> b` for directed and `a -- b`
    /// for undirected, sorted. Reads back losslessly with
    /// [`CausalGraph::from_text`].
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for &(a, b) in &self.directed {
            out.push_str(vocab.name(a));
            out.push_str(" -> ");
            out.push_str(vocab.name(b));
            out.push('\n');
        }
        for &(a, b) in &self.undirected {
            out.push_str(vocab.name(a));
            out.push_str(" -- ");
            out.push_str(vocab.name(b));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, vocab: &Vocabulary) -> Result<Self, CausalError> {
        let mut g = CausalGraph::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let body = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if body.is_empty() {
                continue;
            }
            let (mark, sep) = if body.contains("->") {
                (EdgeMark::Directed, "->")
            } else if body.contains("--") {
                (EdgeMark::Undirected, "--")
            } else {
                return Err(CausalError::Parse {
                    line,
                    msg: "expected `a -> b` or `a -- b`".to_string(),
                });
            };
            let (a, b) = body.split_once(sep).unwrap();
            let lookup = |n: &str| {
                vocab.id(n.trim()).ok_or_else(|| CausalError::Parse {
                    line,
                    msg: alloc::format!("unknown category `{}`", n.trim()),
                })
            };
            let (a, b) = (lookup(a)?, lookup(b)?);
            match mark {
                EdgeMark::Directed => g.add_directed(a, b),
                EdgeMark::Undirected => g.add_undirected(a, b),
            }
        }
        Ok(g)
    }
}

/// Default significance level for the dependence tests.
pub const DEFAULT_TAU: f64 = 0.05;

/// Undirected dependence skeleton: an edge appears between two co-occurring
/// categories when the chi-squared test rejects independence (p < tau) for
/// every choice of conditioning category. Degenerate strata are skipped and
/// do not veto an edge; pairs that never co-occur get no edge.
pub fn dependence_skeleton(t: &CooccurrenceTables, tau: f64) -> CausalGraph {
    assert!(tau > 0.0 && tau < 1.0, "tau must be in (0, 1)");
    let m = t.n_categories();
    let mut g = CausalGraph::new();
    for j in 1..m {
        for jp in (j + 1)..m {
            if t.pair(j, jp) == 0 {
                continue;
            }
            let mut dependent = true;
            for k in 1..m {
                if k == j || k == jp {
                    continue;
                }
                match chi2_statistic(t, j, jp, k) {
                    Err(CausalError::DegenerateStratum { .. }) => continue,
                    Err(_) => unreachable!(),
                    Ok((_, p)) => {
                        if p >= tau {
                            dependent = false;
                            break;
                        }
                    }
                }
            }
            if dependent {
                g.add_undirected(j, jp);
            }
        }
    }
    g
}

/// Orients a dependence skeleton. Non-adjacent pairs with a common neighbor
/// become common-parent structures (the neighbor points at both), honoring
/// any prior directed edges; remaining undirected edges are oriented in
/// deterministic order, preferring directions that create neither a cycle
/// nor a new common-parent triple. The output's directed part is acyclic.
pub fn ic_orient(skeleton: &CausalGraph) -> CausalGraph {
    let mut g = skeleton.clone();
    let nodes: BTreeSet<CategoryId> = g
        .undirected_edges()
        .chain(g.directed_edges())
        .flat_map(|(a, b)| [a, b])
        .collect();

    // Common-parent rewrites in lexicographic pair order. Orientations made
    // earlier in the pass are visible to later triples.
    let node_list: Vec<CategoryId> = nodes.iter().copied().collect();
    for (i, &j) in node_list.iter().enumerate() {
        for &jp in node_list.iter().skip(i + 1) {
            if g.adjacent(j, jp) {
                continue;
            }
            let common: Vec<CategoryId> = g
                .neighbors(j)
                .intersection(&g.neighbors(jp))
                .copied()
                .collect();
            for k in common {
                // An edge already pointing into k cannot be turned outward.
                if g.has_directed(j, k) || g.has_directed(jp, k) {
                    continue;
                }
                if !g.has_directed(k, j) {
                    g.add_directed(k, j);
                }
                if !g.has_directed(k, jp) {
                    g.add_directed(k, jp);
                }
            }
        }
    }

    // Orient what is left without creating cycles, avoiding new
    // common-parent triples when possible.
    let creates_v = |g: &CausalGraph, a: CategoryId, b: CategoryId| {
        g.directed_edges()
            .any(|(c, y)| y == b && c != a && !g.adjacent(a, c))
    };
    loop {
        let (a, b) = match g.undirected_edges().next() {
            Some(e) => e,
            None => break,
        };
        let cycle_ab = g.reaches(b, a);
        let cycle_ba = g.reaches(a, b);
        let choice = if !cycle_ab && !creates_v(&g, a, b) {
            (a, b)
        } else if !cycle_ba && !creates_v(&g, b, a) {
            (b, a)
        } else if !cycle_ab {
            (a, b)
        } else {
            // Both directions cycling would imply an existing cycle.
            (b, a)
        };
        g.add_directed(choice.0, choice.1);
    }
    debug_assert!(g.directed_is_acyclic());
    g
}

/// Configuration for the geometric relationship tests.
#[derive(Debug, Clone, Copy)]
pub struct GeometricConfig {
    /// Max gap between the supporter's top face and the supported bottom.
    pub support_tol: f64,
    /// Expansion applied to the enclosing box before the containment test.
    pub enclose_margin: f64,
    /// Fraction of co-occurrences that must agree with the hypothesis.
    pub ratio: f64,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        GeometricConfig {
            support_tol: 0.05,
            enclose_margin: 0.05,
            ratio: 0.30,
        }
    }
}

/// Whether box `a` supports box `b`: the bottom of `b` sits on the top face
/// of `a` within tolerance and their footprints overlap.
pub fn supports(a: &crate::geom::PlacedBox, b: &crate::geom::PlacedBox, tol: f64) -> bool {
    (b.bottom() - a.top()).abs() <= tol
        && crate::geom::footprint_intersection_area(&a.footprint(), &b.footprint()) > 0.0
}

/// Whether the larger box `a` encloses `b` once expanded by `margin`.
pub fn encloses(a: &crate::geom::PlacedBox, b: &crate::geom::PlacedBox, margin: f64) -> bool {
    if a.volume() <= b.volume() {
        return false;
    }
    let fp = b.footprint();
    let (zs, ze) = (b.bottom(), b.top());
    fp.iter()
        .all(|&[x, y]| a.contains([x, y, zs], margin) && a.contains([x, y, ze], margin))
}

/// Directed support/enclosure edges: `a -> b` when at least `ratio` of the
/// scenes containing both categories have an instance of `a` supporting or
/// enclosing an instance of `b`.
pub fn geometric_edges(
    corpus: &[Scene],
    n_categories: usize,
    cfg: &GeometricConfig,
) -> CausalGraph {
    let m = n_categories;
    let mut both = alloc::vec![0u32; m * m];
    let mut hits = alloc::vec![0u32; m * m];
    for scene in corpus {
        let present = scene.present_categories();
        for &a in &present {
            for &b in &present {
                if a == b {
                    continue;
                }
                both[a * m + b] += 1;
                let hit = scene.objects.iter().filter(|x| x.category == a).any(|x| {
                    scene.objects.iter().filter(|y| y.category == b).any(|y| {
                        supports(&x.placed(), &y.placed(), cfg.support_tol)
                            || encloses(&x.placed(), &y.placed(), cfg.enclose_margin)
                    })
                });
                if hit {
                    hits[a * m + b] += 1;
                }
            }
        }
    }
    let mut g = CausalGraph::new();
    for a in 1..m {
        for b in 1..m {
            if a == b || both[a * m + b] == 0 {
                continue;
            }
            if hits[a * m + b] as f64 >= cfg.ratio * both[a * m + b] as f64 {
                g.add_directed(a, b);
            }
        }
    }
    g
}

/// Union of two graphs that keeps the directed part acyclic: edges from the
/// second graph are added in lexicographic order and skipped when they
/// would close a directed cycle or duplicate an existing adjacency.
pub fn union_acyclic(g1: &CausalGraph, g2: &CausalGraph) -> CausalGraph {
    let mut out = g1.clone();
    for (a, b) in g2.directed_edges() {
        if out.has_directed(a, b) {
            continue;
        }
        if out.has_directed(b, a) || out.reaches(b, a) {
            continue;
        }
        out.add_directed(a, b);
    }
    for (a, b) in g2.undirected_edges() {
        if !out.adjacent(a, b) {
            out.add_undirected(a, b);
        }
    }
    debug_assert!(out.directed_is_acyclic());
    out
}
