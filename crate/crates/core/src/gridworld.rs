//! Grid-world and latent-grid-world task generation.
//!
//! Nodes live on a non-periodic rectangular lattice with 4-neighborhood
//! edges. A grid task labels every node with one word; a latent task gives
//! every latent node four child words and emits one of them uniformly at each
//! step of the latent walk.
//!
//! An instance is a context walk with a 5-step test walk spliced in at a
//! condition-dependent position. The context walk is steered so that it
//! enters the test walk through a lattice edge and continues from its last
//! node, so the whole sequence is one continuous traversal. Candidates are
//! rejected until the test 5-gram and both of its 4-grams are absent from the
//! rest of the sequence (word level), up to [`RETRY_BUDGET`] attempts.

use std::collections::{HashSet, VecDeque};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, Rng};
use crate::store::{Condition, LabeledSpan, SpanLabel};

pub const TEST_WALK_LEN: usize = 5;
/// Earliest token position for short-context and early repeat placement.
pub const EARLY_START: usize = 5;
/// Short-context tests and early repeats lie inside `[EARLY_START, EARLY_END)`.
pub const EARLY_END: usize = 64;
/// Long-context tests lie inside the final `LATE_WINDOW` tokens.
pub const LATE_WINDOW: usize = 64;
pub const RETRY_BUDGET: usize = 10_000;
pub const CHILDREN_PER_LATENT_NODE: usize = 4;
pub const DEFAULT_EXCLUDED_PAIRS: usize = 8;
/// Context tokens preceding the test walk that join it in the analysis window.
pub const PREFIX_TOKENS: usize = 2;

pub const DEFAULT_GRID_WORDS: &str = include_str!("../data/grid_words.txt");
pub const DEFAULT_LATENT_CATEGORIES: &str = include_str!("../data/latent_categories.txt");

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("lattice dimensions must be at least 2x2, got {width}x{height}")]
    LatticeTooSmall { width: usize, height: usize },
    #[error("word list has {available} words, {needed} needed")]
    NotEnoughWords { needed: usize, available: usize },
    #[error("duplicate word `{0}`")]
    DuplicateWord(String),
    #[error("invalid word `{0}`: words must be nonempty and contain no whitespace")]
    InvalidWord(String),
    #[error("need {needed} categories with at least {per} words, found {available}")]
    NotEnoughCategories { needed: usize, per: usize, available: usize },
    #[error("cannot exclude {requested} pairs: lattice has {edges} edges")]
    TooManyExclusions { requested: usize, edges: usize },
    #[error("excluded pair ({0}, {1}) does not cross a latent edge")]
    PairNotOnEdge(String, String),
    #[error("condition `{0}` is not supported by this task")]
    UnsupportedCondition(Condition),
    #[error("context length {length} cannot satisfy `{condition}` placement: {reason}")]
    Infeasible { condition: Condition, length: usize, reason: String },
    #[error("no valid `{condition}` instance of length {length} after {attempts} attempts ({diagnostics})")]
    RetryBudgetExhausted { condition: Condition, length: usize, attempts: usize, diagnostics: String },
    #[error("cannot render an empty walk")]
    EmptyWalk,
    #[error("spec invariant violated: {0}")]
    InvalidSpec(String),
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;

/// Non-periodic `width x height` lattice; node id = `row * width + col`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "LatticeDoc", try_from = "LatticeDoc")]
pub struct Lattice {
    width: usize,
    height: usize,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct LatticeDoc {
    width: usize,
    height: usize,
    edges: Vec<[usize; 2]>,
}

impl From<Lattice> for LatticeDoc {
    fn from(l: Lattice) -> Self {
        LatticeDoc { width: l.width, height: l.height, edges: l.edges().into_iter().map(|(a, b)| [a, b]).collect() }
    }
}

impl TryFrom<LatticeDoc> for Lattice {
    type Error = GridError;

    fn try_from(doc: LatticeDoc) -> Result<Self> {
        let l = build_lattice(doc.width, doc.height)?;
        let edges: Vec<[usize; 2]> = l.edges().into_iter().map(|(a, b)| [a, b]).collect();
        if edges != doc.edges {
            return Err(GridError::InvalidSpec("edge list does not match lattice dimensions".into()));
        }
        Ok(l)
    }
}

/// 4-neighbor non-wrapping adjacency on a `width x height` lattice.
pub fn build_lattice(width: usize, height: usize) -> Result<Lattice> {
    if width < 2 || height < 2 {
        return Err(GridError::LatticeTooSmall { width, height });
    }
    let neighbors = (0..width * height)
        .map(|node| {
            let (r, c) = (node / width, node % width);
            let mut ns = Vec::with_capacity(4);
            if r > 0 {
                ns.push(node - width);
            }
            if c > 0 {
                ns.push(node - 1);
            }
            if c + 1 < width {
                ns.push(node + 1);
            }
            if r + 1 < height {
                ns.push(node + width);
            }
            ns
        })
        .collect();
    Ok(Lattice { width, height, neighbors })
}

impl Lattice {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_nodes(&self) -> usize {
        self.width * self.height
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors.get(a).is_some_and(|ns| ns.contains(&b))
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = (0..self.n_nodes())
            .flat_map(|a| self.neighbors[a].iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node / self.width, node % self.width)
    }

    /// Hop distance from every node to the nearest node in `targets`.
    fn distances_to(&self, targets: &[usize]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_nodes()];
        let mut queue = VecDeque::new();
        for &t in targets {
            if dist[t] != 0 {
                dist[t] = 0;
                queue.push_back(t);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &w in &self.neighbors[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// Uniform random walk of `length` nodes from a uniformly chosen start.
pub fn random_walk(lattice: &Lattice, length: usize, rng: &mut Rng) -> Vec<usize> {
    if length == 0 {
        return Vec::new();
    }
    let mut walk = Vec::with_capacity(length);
    walk.push(rng.random_range(0..lattice.n_nodes()));
    extend_walk(lattice, &mut walk, length - 1, rng);
    walk
}

/// Deterministic random walk for a seed.
pub fn generate_walk(lattice: &Lattice, length: usize, seed: u64) -> Vec<usize> {
    random_walk(lattice, length, &mut Rng::seed_from_u64(seed))
}

fn extend_walk(lattice: &Lattice, walk: &mut Vec<usize>, steps: usize, rng: &mut Rng) {
    for _ in 0..steps {
        let last = *walk.last().expect("walk is nonempty");
        walk.push(*lattice.neighbors(last).choose(rng).expect("lattice nodes have neighbors"));
    }
}

/// Random walk of `steps` further nodes from `walk`'s last node that ends on
/// a node of `dist == 0`. Each step is uniform over the neighbors that keep
/// the target reachable in exactly the remaining steps.
fn steer_walk(lattice: &Lattice, walk: &mut Vec<usize>, steps: usize, dist: &[usize], rng: &mut Rng) -> bool {
    let reachable = |node: usize, remaining: usize| dist[node] <= remaining && (remaining - dist[node]) % 2 == 0;
    let start = *walk.last().expect("walk is nonempty");
    if !reachable(start, steps) {
        return false;
    }
    let mut candidates = Vec::with_capacity(4);
    for step in 0..steps {
        let remaining = steps - step - 1;
        let last = *walk.last().expect("walk is nonempty");
        candidates.clear();
        candidates.extend(lattice.neighbors(last).iter().copied().filter(|&w| reachable(w, remaining)));
        match candidates.choose(rng) {
            Some(&w) => walk.push(w),
            None => return false,
        }
    }
    true
}

/// Words in file order, grouped under `#` category headers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordList {
    pub categories: Vec<WordCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordCategory {
    pub name: Option<String>,
    pub words: Vec<String>,
}

impl WordList {
    /// One word per line; a line starting with `#` opens a new category.
    /// Headers with no words below them (plain comments) are dropped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut categories: Vec<WordCategory> = Vec::new();
        let mut current = WordCategory { name: None, words: Vec::new() };
        let mut seen = HashSet::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                if !current.words.is_empty() {
                    categories.push(current);
                }
                current = WordCategory { name: Some(header.trim().to_string()), words: Vec::new() };
                continue;
            }
            if line.chars().any(char::is_whitespace) {
                return Err(GridError::InvalidWord(line.to_string()));
            }
            if !seen.insert(line.to_string()) {
                return Err(GridError::DuplicateWord(line.to_string()));
            }
            current.words.push(line.to_string());
        }
        if !current.words.is_empty() {
            categories.push(current);
        }
        Ok(Self { categories })
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().flat_map(|c| c.words.iter().map(String::as_str))
    }

    pub fn default_grid() -> Self {
        Self::parse(DEFAULT_GRID_WORDS).expect("bundled grid word list parses")
    }

    pub fn default_latent() -> Self {
        Self::parse(DEFAULT_LATENT_CATEGORIES).expect("bundled category list parses")
    }
}

/// Grid world with one word per lattice node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTaskSpec {
    pub lattice: Lattice,
    /// `node_words[node]` labels that node.
    pub node_words: Vec<String>,
    pub seed: u64,
}

impl GridTaskSpec {
    /// Assigns a random subset of `words` to the lattice nodes.
    pub fn new(width: usize, height: usize, words: &WordList, seed: u64) -> Result<Self> {
        let lattice = build_lattice(width, height)?;
        let mut pool: Vec<String> = words.words().map(str::to_string).collect();
        if pool.len() < lattice.n_nodes() {
            return Err(GridError::NotEnoughWords { needed: lattice.n_nodes(), available: pool.len() });
        }
        pool.shuffle(&mut seed::rng_for(seed, "grid-words", 0));
        pool.truncate(lattice.n_nodes());
        let spec = Self { lattice, node_words: pool, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_words.len() != self.lattice.n_nodes() {
            return Err(GridError::InvalidSpec(format!(
                "{} words for {} nodes",
                self.node_words.len(),
                self.lattice.n_nodes()
            )));
        }
        check_unique(self.node_words.iter())
    }

    fn emissions(&self) -> Vec<Vec<String>> {
        self.node_words.iter().map(|w| vec![w.clone()]).collect()
    }
}

fn check_unique<'a>(words: impl Iterator<Item = &'a String>) -> Result<()> {
    let mut seen = HashSet::new();
    for w in words {
        if w.is_empty() || w.chars().any(char::is_whitespace) {
            return Err(GridError::InvalidWord(w.clone()));
        }
        if !seen.insert(w) {
            return Err(GridError::DuplicateWord(w.clone()));
        }
    }
    Ok(())
}

/// Ordered child-word pair withheld from zero-shot contexts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub from: String,
    pub to: String,
}

/// Latent grid: each latent node emits one of its child words per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGridTaskSpec {
    pub lattice: Lattice,
    pub categories: Vec<String>,
    /// `children[node]` holds that latent node's child words.
    pub children: Vec<Vec<String>>,
    pub excluded: Vec<ExcludedPair>,
    pub seed: u64,
}

impl LatentGridTaskSpec {
    /// Draws one category per latent node and `n_excluded` withheld child
    /// pairs, one per randomly selected latent edge with random direction.
    pub fn new(width: usize, height: usize, categories: &WordList, n_excluded: usize, seed: u64) -> Result<Self> {
        let lattice = build_lattice(width, height)?;
        let n = lattice.n_nodes();
        let mut usable: Vec<&WordCategory> =
            categories.categories.iter().filter(|c| c.words.len() >= CHILDREN_PER_LATENT_NODE).collect();
        if usable.len() < n {
            return Err(GridError::NotEnoughCategories { needed: n, per: CHILDREN_PER_LATENT_NODE, available: usable.len() });
        }
        let mut rng = seed::rng_for(seed, "latent-spec", 0);
        usable.shuffle(&mut rng);
        usable.truncate(n);
        let children: Vec<Vec<String>> =
            usable.iter().map(|c| c.words[..CHILDREN_PER_LATENT_NODE].to_vec()).collect();
        let names = usable
            .iter()
            .enumerate()
            .map(|(i, c)| c.name.clone().unwrap_or_else(|| format!("category-{i}")))
            .collect();

        let mut edges = lattice.edges();
        if n_excluded > edges.len() {
            return Err(GridError::TooManyExclusions { requested: n_excluded, edges: edges.len() });
        }
        edges.shuffle(&mut rng);
        let excluded = edges[..n_excluded]
            .iter()
            .map(|&(a, b)| {
                let (u, v) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
                ExcludedPair {
                    from: children[u].choose(&mut rng).expect("children").clone(),
                    to: children[v].choose(&mut rng).expect("children").clone(),
                }
            })
            .collect();
        let spec = Self { lattice, categories: names, children, excluded, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn owner(&self, word: &str) -> Option<usize> {
        self.children.iter().position(|ws| ws.iter().any(|w| w == word))
    }

    pub fn validate(&self) -> Result<()> {
        if self.children.len() != self.lattice.n_nodes() {
            return Err(GridError::InvalidSpec(format!(
                "{} child lists for {} latent nodes",
                self.children.len(),
                self.lattice.n_nodes()
            )));
        }
        if self.children.iter().any(|c| c.is_empty()) {
            return Err(GridError::InvalidSpec("latent node without children".into()));
        }
        check_unique(self.children.iter().flatten())?;
        for pair in &self.excluded {
            match (self.owner(&pair.from), self.owner(&pair.to)) {
                (Some(a), Some(b)) if self.lattice.is_edge(a, b) => {}
                _ => return Err(GridError::PairNotOnEdge(pair.from.clone(), pair.to.clone())),
            }
        }
        Ok(())
    }
}

/// Half-open word range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
}

impl WordSpan {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, end: start + len }
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }
}

/// One generated sequence: context walk with the spliced test walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkInstance {
    pub condition: Condition,
    pub context_length: usize,
    /// Lattice node (latent node for latent tasks) at each position.
    pub nodes: Vec<usize>,
    pub words: Vec<String>,
    pub test_span: WordSpan,
    pub repeat_span: Option<WordSpan>,
    pub seed: u64,
    /// Rejection-sampling attempts used, including the accepted one.
    pub attempts: usize,
}

impl WalkInstance {
    pub fn test_nodes(&self) -> &[usize] {
        &self.nodes[self.test_span.start..self.test_span.end]
    }

    pub fn test_words(&self) -> &[String] {
        &self.words[self.test_span.start..self.test_span.end]
    }
}

/// Any novelty or zero-shot rule an instance breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// An n-gram of the test walk occurs at `position` outside its allowed spots.
    NgramRepeat { n: usize, position: usize },
    /// Long-repeat instance whose early copy is missing or misplaced.
    MissingRepeat,
    /// Withheld child pair adjacent in the context at `position`.
    ExcludedInContext { position: usize },
    /// Zero-shot test walk crosses no withheld pair.
    NoExcludedInTest,
    /// Consecutive nodes at `position` are not adjacent.
    InvalidTransition { position: usize },
    /// Test window outside the condition's positional range.
    Placement,
}

/// Positions where `gram` occurs in `words`.
fn occurrences(words: &[String], gram: &[String]) -> Vec<usize> {
    if gram.is_empty() || words.len() < gram.len() {
        return Vec::new();
    }
    words.windows(gram.len()).enumerate().filter(|(_, w)| *w == gram).map(|(i, _)| i).collect()
}

/// Novelty check: the test 5-gram and its two 4-grams may appear only at the
/// test span (and at the repeat span for long-repeat).
pub fn novelty_violations(words: &[String], test: WordSpan, repeat: Option<WordSpan>) -> Vec<Violation> {
    let t = &words[test.start..test.end];
    let mut out = Vec::new();
    let allowed = |offset: usize| -> Vec<usize> {
        let mut a = vec![test.start + offset];
        if let Some(r) = repeat {
            a.push(r.start + offset);
        }
        a
    };
    for (gram, offset) in [(t, 0), (&t[..t.len() - 1], 0), (&t[1..], 1)] {
        let ok = allowed(offset);
        for pos in occurrences(words, gram) {
            if !ok.contains(&pos) {
                out.push(Violation::NgramRepeat { n: gram.len(), position: pos });
            }
        }
    }
    if let Some(r) = repeat {
        if words.get(r.start..r.end) != Some(t) {
            out.push(Violation::MissingRepeat);
        }
    }
    out
}

fn placement_ok(condition: Condition, length: usize, test: WordSpan, repeat: Option<WordSpan>) -> bool {
    let late = test.start >= length.saturating_sub(LATE_WINDOW) && test.end <= length;
    match condition {
        Condition::Short => test.start >= EARLY_START && test.end <= EARLY_END.min(length),
        Condition::Long | Condition::ZeroShot => late && test.start >= EARLY_START,
        Condition::LongRepeat => {
            late && repeat.is_some_and(|r| r.start >= EARLY_START && r.end <= EARLY_END && r.end <= test.start)
        }
        _ => false,
    }
}

/// Every rule of a grid instance.
pub fn audit_grid_instance(spec: &GridTaskSpec, inst: &WalkInstance) -> Vec<Violation> {
    let mut v = audit_common(&spec.lattice, inst);
    for (i, (&node, word)) in inst.nodes.iter().zip(&inst.words).enumerate() {
        if spec.node_words[node] != *word {
            v.push(Violation::InvalidTransition { position: i });
        }
    }
    v
}

/// Every rule of a latent instance, including zero-shot exclusion when applicable.
pub fn audit_latent_instance(spec: &LatentGridTaskSpec, inst: &WalkInstance) -> Vec<Violation> {
    let mut v = audit_common(&spec.lattice, inst);
    for (i, (&node, word)) in inst.nodes.iter().zip(&inst.words).enumerate() {
        if !spec.children[node].contains(word) {
            v.push(Violation::InvalidTransition { position: i });
        }
    }
    if inst.condition == Condition::ZeroShot {
        v.extend(zero_shot_violations(&spec.excluded, &inst.words, inst.test_span));
    }
    v
}

fn audit_common(lattice: &Lattice, inst: &WalkInstance) -> Vec<Violation> {
    let mut v: Vec<Violation> = inst
        .nodes
        .windows(2)
        .enumerate()
        .filter(|(_, p)| !lattice.is_edge(p[0], p[1]))
        .map(|(i, _)| Violation::InvalidTransition { position: i })
        .collect();
    if inst.nodes.len() != inst.context_length
        || inst.words.len() != inst.context_length
        || inst.test_span.end - inst.test_span.start != TEST_WALK_LEN
        || !placement_ok(inst.condition, inst.context_length, inst.test_span, inst.repeat_span)
    {
        v.push(Violation::Placement);
        return v;
    }
    v.extend(novelty_violations(&inst.words, inst.test_span, inst.repeat_span));
    v
}

/// Withheld pairs may not be adjacent anywhere except inside the test walk,
/// and the test walk must contain at least one.
pub fn zero_shot_violations(excluded: &[ExcludedPair], words: &[String], test: WordSpan) -> Vec<Violation> {
    let set: HashSet<(&str, &str)> = excluded.iter().map(|p| (p.from.as_str(), p.to.as_str())).collect();
    let mut out = Vec::new();
    let mut in_test = false;
    for (i, pair) in words.windows(2).enumerate() {
        if !set.contains(&(pair[0].as_str(), pair[1].as_str())) {
            continue;
        }
        if test.contains(i) && test.contains(i + 1) {
            in_test = true;
        } else {
            out.push(Violation::ExcludedInContext { position: i });
        }
    }
    if !in_test {
        out.push(Violation::NoExcludedInTest);
    }
    out
}

/// Shared generator state for grid and latent tasks.
struct Generator<'a> {
    lattice: &'a Lattice,
    /// Emission words per node.
    emissions: Vec<Vec<String>>,
    /// Withheld pairs (zero-shot only).
    excluded: HashSet<(String, String)>,
    excluded_list: &'a [ExcludedPair],
    owner: Box<dyn Fn(&str) -> Option<usize> + 'a>,
}

/// Tally of rejection reasons for diagnostics.
#[derive(Default)]
struct Rejections {
    steering: usize,
    emission: usize,
    novelty: usize,
    zero_shot: usize,
}

impl Rejections {
    fn summary(&self) -> String {
        format!(
            "rejected: {} steering, {} emission, {} novelty, {} zero-shot",
            self.steering, self.emission, self.novelty, self.zero_shot
        )
    }
}

enum Attempt {
    Accepted(Vec<usize>, Vec<String>, WordSpan, Option<WordSpan>),
    Steering,
    Emission,
    Novelty,
    ZeroShot,
}

impl Generator<'_> {
    fn positions(&self, condition: Condition, length: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let infeasible = |reason: &str| GridError::Infeasible { condition, length, reason: reason.to_string() };
        let late_lo = length.saturating_sub(LATE_WINDOW).max(EARLY_START);
        let late: Vec<usize> = if length >= TEST_WALK_LEN { (late_lo..=length - TEST_WALK_LEN).collect() } else { vec![] };
        let early_hi = EARLY_END.min(length).saturating_sub(TEST_WALK_LEN);
        let early: Vec<usize> = (EARLY_START..=early_hi).collect();
        match condition {
            Condition::Short => {
                if early.is_empty() {
                    return Err(infeasible("no room for a test walk between positions 5 and 64"));
                }
                Ok((early, vec![]))
            }
            Condition::Long | Condition::ZeroShot => {
                if late.is_empty() {
                    return Err(infeasible("no room for a test walk in the final 64 tokens"));
                }
                Ok((late, vec![]))
            }
            Condition::LongRepeat => {
                if early.is_empty() || late.is_empty() || late.last() <= early.first().map(|e| e + TEST_WALK_LEN).as_ref() {
                    return Err(infeasible("early copy and late test walk cannot both fit"));
                }
                Ok((late, early))
            }
            other => Err(GridError::UnsupportedCondition(other)),
        }
    }

    fn test_walk(&self, condition: Condition, rng: &mut Rng) -> Option<(Vec<usize>, Vec<Option<String>>)> {
        let mut fixed = vec![None; TEST_WALK_LEN];
        if condition != Condition::ZeroShot {
            return Some((random_walk(self.lattice, TEST_WALK_LEN, rng), fixed));
        }
        let pair = self.excluded_list.choose(rng)?;
        let (u, v) = ((self.owner)(&pair.from)?, (self.owner)(&pair.to)?);
        let j = rng.random_range(0..TEST_WALK_LEN - 1);
        let mut back = vec![u];
        extend_walk(self.lattice, &mut back, j, rng);
        back.reverse();
        let mut walk = back;
        walk.push(v);
        extend_walk(self.lattice, &mut walk, TEST_WALK_LEN - j - 2, rng);
        fixed[j] = Some(pair.from.clone());
        fixed[j + 1] = Some(pair.to.clone());
        Some((walk, fixed))
    }

    fn attempt(&self, condition: Condition, length: usize, late: &[usize], early: &[usize], rng: &mut Rng) -> Attempt {
        let test_start = *late.choose(rng).expect("nonempty");
        let repeat_start = if condition == Condition::LongRepeat {
            // The two copies start on the same lattice parity class.
            let options: Vec<usize> = early
                .iter()
                .copied()
                .filter(|&r| r + TEST_WALK_LEN < test_start && (test_start - r) % 2 == 0)
                .collect();
            match options.choose(rng) {
                Some(&r) => Some(r),
                None => return Attempt::Steering,
            }
        } else {
            None
        };
        let Some((test_nodes, fixed_words)) = self.test_walk(condition, rng) else {
            return Attempt::Steering;
        };

        let mut placements: Vec<usize> = repeat_start.into_iter().chain([test_start]).collect();
        placements.sort_unstable();
        let entry = self.lattice.distances_to(self.lattice.neighbors(test_nodes[0]));

        // Latent walk: steer into every placement, then walk freely to the end.
        let mut nodes: Vec<usize> = Vec::with_capacity(length);
        for &q in &placements {
            if nodes.is_empty() {
                let steps = q - 1;
                let starts: Vec<usize> = (0..self.lattice.n_nodes())
                    .filter(|&u| entry[u] <= steps && (steps - entry[u]) % 2 == 0)
                    .collect();
                let Some(&s) = starts.choose(rng) else {
                    return Attempt::Steering;
                };
                nodes.push(s);
                if !steer_walk(self.lattice, &mut nodes, steps, &entry, rng) {
                    return Attempt::Steering;
                }
            } else {
                let steps = q - nodes.len();
                if !steer_walk(self.lattice, &mut nodes, steps, &entry, rng) {
                    return Attempt::Steering;
                }
            }
            nodes.extend_from_slice(&test_nodes);
        }
        let rest = length - nodes.len();
        extend_walk(self.lattice, &mut nodes, rest, rng);

        // Emissions; test words are drawn once and reused for the repeat.
        let mut test_words = Vec::with_capacity(TEST_WALK_LEN);
        for (k, &node) in test_nodes.iter().enumerate() {
            let word = match &fixed_words[k] {
                Some(w) => w.clone(),
                None => self.emissions[node].choose(rng).expect("emissions").clone(),
            };
            test_words.push(word);
        }
        let in_placement = |i: usize| placements.iter().find(|&&q| (q..q + TEST_WALK_LEN).contains(&i)).copied();
        let mut words: Vec<String> = Vec::with_capacity(length);
        for (i, &node) in nodes.iter().enumerate() {
            if let Some(q) = in_placement(i) {
                words.push(test_words[i - q].clone());
                continue;
            }
            let prev = words.last();
            let next_fixed = in_placement(i + 1).map(|q| &test_words[i + 1 - q]);
            let options: Vec<&String> = self.emissions[node]
                .iter()
                .filter(|c| {
                    self.excluded.is_empty()
                        || (prev.is_none_or(|p| !self.excluded.contains(&(p.clone(), (*c).clone())))
                            && next_fixed.is_none_or(|n| !self.excluded.contains(&((*c).clone(), n.clone()))))
                })
                .collect();
            match options.choose(rng) {
                Some(w) => words.push((*w).clone()),
                None => return Attempt::Emission,
            }
        }

        let test = WordSpan::new(test_start, TEST_WALK_LEN);
        let repeat = repeat_start.map(|r| WordSpan::new(r, TEST_WALK_LEN));
        if !novelty_violations(&words, test, repeat).is_empty() {
            return Attempt::Novelty;
        }
        if condition == Condition::ZeroShot && !zero_shot_violations(self.excluded_list, &words, test).is_empty() {
            return Attempt::ZeroShot;
        }
        Attempt::Accepted(nodes, words, test, repeat)
    }

    fn generate(&self, condition: Condition, length: usize, seed: u64) -> Result<WalkInstance> {
        let (late, early) = self.positions(condition, length)?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut rejections = Rejections::default();
        for attempt in 1..=RETRY_BUDGET {
            match self.attempt(condition, length, &late, &early, &mut rng) {
                Attempt::Accepted(nodes, words, test_span, repeat_span) => {
                    return Ok(WalkInstance {
                        condition,
                        context_length: length,
                        nodes,
                        words,
                        test_span,
                        repeat_span,
                        seed,
                        attempts: attempt,
                    })
                }
                Attempt::Steering => rejections.steering += 1,
                Attempt::Emission => rejections.emission += 1,
                Attempt::Novelty => rejections.novelty += 1,
                Attempt::ZeroShot => rejections.zero_shot += 1,
            }
        }
        Err(GridError::RetryBudgetExhausted {
            condition,
            length,
            attempts: RETRY_BUDGET,
            diagnostics: rejections.summary(),
        })
    }
}

/// Grid-world instance for `condition` (short, long or long-repeat).
pub fn make_instance(spec: &GridTaskSpec, condition: Condition, context_length: usize, seed: u64) -> Result<WalkInstance> {
    if !matches!(condition, Condition::Short | Condition::Long | Condition::LongRepeat) {
        return Err(GridError::UnsupportedCondition(condition));
    }
    let generator = Generator {
        lattice: &spec.lattice,
        emissions: spec.emissions(),
        excluded: HashSet::new(),
        excluded_list: &[],
        owner: Box::new(|w: &str| spec.node_words.iter().position(|x| x == w)),
    };
    generator.generate(condition, context_length, seed)
}

/// Latent-grid instance; `ZeroShot` withholds the spec's excluded pairs from
/// the context and routes the test walk through one of them.
pub fn make_latent_instance(
    spec: &LatentGridTaskSpec,
    condition: Condition,
    context_length: usize,
    seed: u64,
) -> Result<WalkInstance> {
    if !matches!(condition, Condition::Short | Condition::Long | Condition::LongRepeat | Condition::ZeroShot) {
        return Err(GridError::UnsupportedCondition(condition));
    }
    if condition == Condition::ZeroShot && spec.excluded.is_empty() {
        return Err(GridError::Infeasible {
            condition,
            length: context_length,
            reason: "spec has no excluded pairs".into(),
        });
    }
    let excluded = if condition == Condition::ZeroShot {
        spec.excluded.iter().map(|p| (p.from.clone(), p.to.clone())).collect()
    } else {
        HashSet::new()
    };
    let generator = Generator {
        lattice: &spec.lattice,
        emissions: spec.children.clone(),
        excluded,
        excluded_list: &spec.excluded,
        owner: Box::new(|w: &str| spec.owner(w)),
    };
    generator.generate(condition, context_length, seed)
}

/// Character range `[start, end)` counted in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
    pub label: SpanLabel,
}

/// Prompt text with spans in word positions and in characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub word_spans: Vec<LabeledSpan>,
    pub char_spans: Vec<CharSpan>,
}

/// Space-separated words with the test window and its prefix labeled.
pub fn render_prompt(instance: &WalkInstance) -> Result<RenderedPrompt> {
    if instance.words.is_empty() {
        return Err(GridError::EmptyWalk);
    }
    let text = instance.words.join(" ");
    let mut starts = Vec::with_capacity(instance.words.len() + 1);
    let mut pos = 0;
    for w in &instance.words {
        starts.push(pos);
        pos += w.chars().count() + 1;
    }
    let char_range = |a: usize, b: usize| (starts[a], starts[b - 1] + instance.words[b - 1].chars().count());
    let t = instance.test_span;
    let mut word_spans = Vec::new();
    let prefix_start = t.start.saturating_sub(PREFIX_TOKENS);
    if prefix_start < t.start {
        word_spans.push(LabeledSpan::new(prefix_start, t.start, SpanLabel::Prefix));
    }
    word_spans.push(LabeledSpan::new(t.start, t.end, SpanLabel::TestWindow));
    let char_spans = word_spans
        .iter()
        .map(|s| {
            let (start, end) = char_range(s.start, s.end);
            CharSpan { start, end, label: s.label }
        })
        .collect();
    Ok(RenderedPrompt { text, word_spans, char_spans })
}

/// Ground truth attached to grid and latent sequences in a bundle.
///
/// `node_token_ids` is filled in by the extraction harness after tokenizing
/// `node_words`; behavioral scoring is skipped while it is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTruth {
    pub task: GridTaskKind,
    pub width: usize,
    pub height: usize,
    /// Emission words per (latent) node.
    pub node_words: Vec<Vec<String>>,
    #[serde(default)]
    pub node_token_ids: Option<Vec<Vec<u32>>>,
    pub test_nodes: Vec<usize>,
    pub context_length: usize,
    #[serde(default)]
    pub excluded: Vec<ExcludedPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridTaskKind {
    Grid,
    Latent,
}

impl GridTruth {
    pub fn for_grid(spec: &GridTaskSpec, inst: &WalkInstance) -> Self {
        Self {
            task: GridTaskKind::Grid,
            width: spec.lattice.width(),
            height: spec.lattice.height(),
            node_words: spec.emissions(),
            node_token_ids: None,
            test_nodes: inst.test_nodes().to_vec(),
            context_length: inst.context_length,
            excluded: Vec::new(),
        }
    }

    pub fn for_latent(spec: &LatentGridTaskSpec, inst: &WalkInstance) -> Self {
        Self {
            task: GridTaskKind::Latent,
            width: spec.lattice.width(),
            height: spec.lattice.height(),
            node_words: spec.children.clone(),
            node_token_ids: None,
            test_nodes: inst.test_nodes().to_vec(),
            context_length: inst.context_length,
            excluded: if inst.condition == Condition::ZeroShot { spec.excluded.clone() } else { Vec::new() },
        }
    }

    pub fn lattice(&self) -> Result<Lattice> {
        build_lattice(self.width, self.height)
    }
}
