//! Budget-limited search over bi-cluster trees.
//!
//! Everything here talks to an [`Oracle`], which is the only way to learn
//! how good a row is. An oracle either evaluates objective vectors (scored
//! by distance to heaven, cached per row) or forwards a pair of rows to a
//! [`Preference`] callback, typically a human. Either way it carries a hard
//! call budget.
//!
//! [`greedy_descend`] evaluates the two poles of the current pool, keeps the
//! median half on the winner's side and repeats. With a stop leaf of 4 this
//! takes about `log₂(N/4)` levels, so at most `2·⌈log₂N⌉` objective
//! evaluations or one question per level.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    ceil_log2, ceil_sqrt, cluster_rows, split, ClusterConfig, ClusterError, ClusterTree, LeafSize,
    PoleSample, Split,
};
use crate::data::{Cell, DataError, Dataset, Distance, Role, RowId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Choice::A => "A",
            Choice::B => "B",
        })
    }
}

impl FromStr for Choice {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Choice::A),
            "B" | "b" => Ok(Choice::B),
            other => Err(OracleError::Script(format!(
                "expected A or B, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("budget of {budget} oracle calls exhausted")]
    BudgetExhausted { budget: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("this oracle answers pairwise questions and cannot score single rows")]
    NotObjective,
    #[error("scripted oracle: {0}")]
    Script(String),
}

/// Answers "which of these two rows is better?".
pub trait Preference {
    fn prefer(&mut self, ds: &Dataset, a: RowId, b: RowId) -> Result<Choice, OracleError>;
}

impl<F> Preference for F
where
    F: FnMut(&Dataset, RowId, RowId) -> Choice,
{
    fn prefer(&mut self, ds: &Dataset, a: RowId, b: RowId) -> Result<Choice, OracleError> {
        Ok(self(ds, a, b))
    }
}

/// Replays a fixed list of answers, one per line (`A` or `B`).
#[derive(Debug, Clone, Default)]
pub struct Scripted {
    answers: VecDeque<Choice>,
}

impl Scripted {
    pub fn new(answers: impl IntoIterator<Item = Choice>) -> Self {
        Scripted {
            answers: answers.into_iter().collect(),
        }
    }

    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, OracleError> {
        let answers = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        Ok(Scripted { answers })
    }

    pub fn remaining(&self) -> usize {
        self.answers.len()
    }
}

impl Preference for Scripted {
    fn prefer(&mut self, _: &Dataset, _: RowId, _: RowId) -> Result<Choice, OracleError> {
        self.answers
            .pop_front()
            .ok_or_else(|| OracleError::Script("ran out of answers".into()))
    }
}

type ObjectiveFn<'a> = Box<dyn FnMut(&Dataset, RowId) -> Result<Vec<f64>, DataError> + 'a>;

enum Kind<'a> {
    Objective(ObjectiveFn<'a>),
    Preference(Box<dyn Preference + 'a>),
}

/// The evaluation contract with a hard call budget.
pub struct Oracle<'a> {
    kind: Kind<'a>,
    budget: usize,
    used: usize,
    cache: HashMap<RowId, f64>,
    evaluated: Vec<(RowId, f64)>,
}

impl fmt::Debug for Oracle<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Oracle")
            .field("objective", &self.is_objective())
            .field("budget", &self.budget)
            .field("used", &self.used)
            .finish()
    }
}

impl<'a> Oracle<'a> {
    /// Reads objective values straight from the dataset's objective cells.
    pub fn from_table(budget: usize) -> Self {
        Self::objective(budget, |ds: &Dataset, id| ds.objective_values(id))
    }

    /// Computes a row's raw objective vector with `f`. The vector is scored
    /// against the dataset's objective columns.
    pub fn objective<F>(budget: usize, f: F) -> Self
    where
        F: FnMut(&Dataset, RowId) -> Result<Vec<f64>, DataError> + 'a,
    {
        Oracle {
            kind: Kind::Objective(Box::new(f)),
            budget,
            used: 0,
            cache: HashMap::new(),
            evaluated: Vec::new(),
        }
    }

    pub fn preference<P: Preference + 'a>(budget: usize, p: P) -> Self {
        Oracle {
            kind: Kind::Preference(Box::new(p)),
            budget,
            used: 0,
            cache: HashMap::new(),
            evaluated: Vec::new(),
        }
    }

    pub fn is_objective(&self) -> bool {
        matches!(self.kind, Kind::Objective(_))
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn calls_used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.used
    }

    /// Rows scored so far with their distance to heaven, in evaluation order.
    pub fn evaluated(&self) -> &[(RowId, f64)] {
        &self.evaluated
    }

    /// Best evaluated row, earliest on ties.
    pub fn best_seen(&self) -> Option<(RowId, f64)> {
        self.evaluated
            .iter()
            .copied()
            .reduce(|best, e| if e.1 < best.1 { e } else { best })
    }

    /// Budget units a comparison of `a` and `b` would consume now.
    pub fn cost(&self, a: RowId, b: RowId) -> usize {
        match self.kind {
            Kind::Preference(_) => 1,
            Kind::Objective(_) => {
                let mut n = usize::from(!self.cache.contains_key(&a));
                if b != a && !self.cache.contains_key(&b) {
                    n += 1;
                }
                n
            }
        }
    }

    pub fn can_compare(&self, a: RowId, b: RowId) -> bool {
        self.cost(a, b) <= self.remaining()
    }

    /// Distance to heaven of one row. Cached rows are free.
    pub fn evaluate(&mut self, ds: &Dataset, id: RowId) -> Result<f64, OracleError> {
        if let Some(&v) = self.cache.get(&id) {
            return Ok(v);
        }
        let Kind::Objective(f) = &mut self.kind else {
            return Err(OracleError::NotObjective);
        };
        if self.used >= self.budget {
            return Err(OracleError::BudgetExhausted {
                budget: self.budget,
            });
        }
        let values = f(ds, id)?;
        let score = ds.d2h_of(&values)?;
        self.used += 1;
        self.cache.insert(id, score);
        self.evaluated.push((id, score));
        Ok(score)
    }

    /// Pairwise comparison. Objective oracles prefer the lower distance to
    /// heaven, `A` on ties. Nothing is charged unless the whole comparison
    /// fits in the remaining budget.
    pub fn compare(&mut self, ds: &Dataset, a: RowId, b: RowId) -> Result<Choice, OracleError> {
        if !self.can_compare(a, b) {
            return Err(OracleError::BudgetExhausted {
                budget: self.budget,
            });
        }
        match &mut self.kind {
            Kind::Preference(p) => {
                let choice = p.prefer(ds, a, b)?;
                self.used += 1;
                Ok(choice)
            }
            Kind::Objective(_) => {
                let da = self.evaluate(ds, a)?;
                let db = self.evaluate(ds, b)?;
                Ok(if db < da { Choice::B } else { Choice::A })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Pole selection settings; `min_leaf` shapes the non-greedy tree.
    pub cluster: ClusterConfig,
    /// Greedy descent stops once the pool has at most this many rows.
    pub stop_leaf: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            cluster: ClusterConfig::default(),
            stop_leaf: 4,
        }
    }
}

impl SearchConfig {
    pub fn with_seed(seed: u64) -> Self {
        SearchConfig {
            cluster: ClusterConfig::with_seed(seed),
            ..Default::default()
        }
    }
}

/// The default budget for `n` rows: `2·⌈log₂n⌉`.
pub fn auto_budget(n: usize) -> usize {
    2 * ceil_log2(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub a: RowId,
    pub b: RowId,
    pub winner: Choice,
    /// Pool size (or candidate subtree size) when the question was asked.
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: RowId,
    /// Distance to heaven of `best`, when it was evaluated.
    pub best_d2h: Option<f64>,
    /// Rows left when the search stopped.
    pub best_leaf: Vec<RowId>,
    pub trace: Vec<Step>,
    pub evals: usize,
    /// The budget ran out before the stop rule was reached.
    pub truncated: bool,
    /// Non-greedy only: survivors handed to the greedy phase.
    pub survivors: Option<usize>,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Oracle(OracleError),
    #[error("search needs at least one row")]
    Empty,
}

impl From<OracleError> for SearchError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Data(d) => SearchError::Data(d),
            other => SearchError::Oracle(other),
        }
    }
}

/// One greedy descent as an explicit state machine, so that questions can
/// be answered asynchronously (the review service holds one per session).
#[derive(Debug, Clone)]
pub struct Descent {
    pool: Vec<RowId>,
    rng: ChaCha8Rng,
    sample: PoleSample,
    stop_leaf: usize,
    pending: Option<Split>,
    trace: Vec<Step>,
    finished: bool,
}

impl Descent {
    pub fn new(rows: Vec<RowId>, cfg: &SearchConfig) -> Self {
        let mut pool = rows;
        pool.sort_unstable();
        Descent {
            pool,
            rng: cfg.cluster.rng(),
            sample: cfg.cluster.pole_sample,
            stop_leaf: cfg.stop_leaf.max(1),
            pending: None,
            trace: Vec::new(),
            finished: false,
        }
    }

    /// The pair awaiting an answer, picking fresh poles if needed. `None`
    /// once the pool is small enough or degenerate.
    pub fn question(&mut self, metric: &Distance<'_>) -> Option<(RowId, RowId)> {
        if self.finished {
            return None;
        }
        if self.pending.is_none() {
            if self.pool.len() <= self.stop_leaf {
                self.finished = true;
                return None;
            }
            match split(metric, &self.pool, self.sample, &mut self.rng) {
                Ok(s) => self.pending = Some(s),
                Err(_) => {
                    self.finished = true;
                    return None;
                }
            }
        }
        self.pending.as_ref().map(|s| (s.poles.a, s.poles.b))
    }

    /// Keeps the half on the winner's side. Returns false when no question
    /// was pending.
    pub fn answer(&mut self, winner: Choice) -> bool {
        let Some(s) = self.pending.take() else {
            return false;
        };
        self.trace.push(Step {
            a: s.poles.a,
            b: s.poles.b,
            winner,
            pool: self.pool.len(),
        });
        self.pool = match winner {
            Choice::A => s.west,
            Choice::B => s.east,
        };
        self.pool.sort_unstable();
        true
    }

    /// Abandons the pending question and stops.
    pub fn stop(&mut self) {
        self.pending = None;
        self.finished = true;
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn pool(&self) -> &[RowId] {
        &self.pool
    }

    pub fn trace(&self) -> &[Step] {
        &self.trace
    }

    pub fn last_winner(&self) -> Option<RowId> {
        self.trace.last().map(|s| match s.winner {
            Choice::A => s.a,
            Choice::B => s.b,
        })
    }
}

/// Drives a descent with `oracle` until the stop rule, degeneracy, or the
/// budget ends it. Running out of budget sets `truncated`.
fn drive(
    ds: &Dataset,
    metric: &Distance<'_>,
    descent: &mut Descent,
    oracle: &mut Oracle<'_>,
) -> Result<bool, SearchError> {
    while let Some((a, b)) = descent.question(metric) {
        if !oracle.can_compare(a, b) {
            descent.stop();
            return Ok(true);
        }
        let winner = oracle.compare(ds, a, b)?;
        descent.answer(winner);
    }
    Ok(false)
}

fn finish(
    oracle: &Oracle<'_>,
    pool: Vec<RowId>,
    trace: Vec<Step>,
    last_winner: Option<RowId>,
    truncated: bool,
    survivors: Option<usize>,
) -> SearchResult {
    let (best, best_d2h) = match oracle.best_seen() {
        Some((id, d)) if oracle.is_objective() => (id, Some(d)),
        _ => (last_winner.unwrap_or(pool[0]), None),
    };
    SearchResult {
        best,
        best_d2h,
        best_leaf: pool,
        trace,
        evals: oracle.calls_used(),
        truncated,
        survivors,
    }
}

/// Greedy descent over every row of the dataset.
pub fn greedy_descend(
    ds: &Dataset,
    cfg: &SearchConfig,
    oracle: &mut Oracle<'_>,
) -> Result<SearchResult, SearchError> {
    greedy_descend_rows(ds, ds.ids(), cfg, oracle)
}

pub fn greedy_descend_rows(
    ds: &Dataset,
    rows: Vec<RowId>,
    cfg: &SearchConfig,
    oracle: &mut Oracle<'_>,
) -> Result<SearchResult, SearchError> {
    if rows.is_empty() {
        return Err(SearchError::Empty);
    }
    let metric = ds.distance_with(cfg.cluster.p_dist)?;
    let mut descent = Descent::new(rows, cfg);
    let truncated = drive(ds, &metric, &mut descent, oracle)?;
    let last = descent.last_winner();
    let Descent { pool, trace, .. } = descent;
    Ok(finish(oracle, pool, trace, last, truncated, None))
}

/// Spread of one column over `rows`: variance of normalized values for
/// numeric columns, Gini impurity for symbolic ones. Missing cells skipped.
pub fn column_spread(ds: &Dataset, col: usize, rows: &[RowId]) -> f64 {
    match ds.columns()[col].role {
        Role::SymbolicDecision => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            let mut n = 0usize;
            for &id in rows {
                if let Cell::Sym(s) = &ds.row(id).cells[col] {
                    *counts.entry(s.as_str()).or_default() += 1;
                    n += 1;
                }
            }
            if n == 0 {
                return 0.0;
            }
            1.0 - counts
                .values()
                .map(|&c| (c as f64 / n as f64).powi(2))
                .sum::<f64>()
        }
        _ => {
            let xs: Vec<f64> = rows
                .iter()
                .filter_map(|&id| ds.row(id).cells[col].as_num())
                .map(|v| ds.norm(col, v))
                .collect();
            if xs.is_empty() {
                return 0.0;
            }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
        }
    }
}

/// The `⌈k/2⌉` decision columns with the largest spread over `rows`, most
/// variable first; ties keep column order.
pub fn most_variable_columns(ds: &Dataset, rows: &[RowId]) -> Vec<usize> {
    let decisions = ds.decision_columns();
    let keep = decisions.len().div_ceil(2);
    let mut scored: Vec<(usize, f64)> = decisions
        .iter()
        .map(|&j| (j, column_spread(ds, j, rows)))
        .collect();
    scored.sort_by(|l, r| r.1.total_cmp(&l.1).then(l.0.cmp(&r.0)));
    scored.into_iter().take(keep).map(|(j, _)| j).collect()
}

/// Mean ratio of within-subtree to global standard deviation over the given
/// columns. Lower is more homogeneous.
pub fn homogeneity(ds: &Dataset, rows: &[RowId], columns: &[(usize, f64)]) -> f64 {
    if columns.is_empty() {
        return 0.0;
    }
    let total: f64 = columns
        .iter()
        .map(|&(j, global_sd)| {
            if global_sd > 0.0 {
                column_spread(ds, j, rows).sqrt() / global_sd
            } else {
                0.0
            }
        })
        .sum();
    total / columns.len() as f64
}

/// Non-greedy pruning: the whole tree is built without evaluations, then
/// the largest, most homogeneous live subtree has its poles compared and its
/// losing half pruned, until at most `⌈√N⌉` rows survive. The survivors are
/// then searched greedily.
pub fn non_greedy(
    ds: &Dataset,
    cfg: &SearchConfig,
    oracle: &mut Oracle<'_>,
) -> Result<SearchResult, SearchError> {
    if ds.is_empty() {
        return Err(SearchError::Empty);
    }
    let metric = ds.distance_with(cfg.cluster.p_dist)?;
    let n = ds.len();
    let target = ceil_sqrt(n);
    // Leaves at most half the survivor target, so the target is reachable.
    let leaf = cfg.cluster.min_leaf.resolve(n).min((target / 2).max(1));
    let tree_cfg = ClusterConfig {
        min_leaf: LeafSize::Fixed(leaf),
        ..cfg.cluster
    };
    let tree = cluster_rows(&metric, &ds.ids(), &tree_cfg)?;

    let all = ds.ids();
    let columns: Vec<(usize, f64)> = most_variable_columns(ds, &all)
        .into_iter()
        .map(|j| (j, column_spread(ds, j, &all).sqrt()))
        .collect();

    let per_question = if oracle.is_objective() { 2 } else { 1 };
    let reserve = per_question * ceil_log2(target.div_ceil(cfg.stop_leaf.max(1)));

    let mut frontier: Vec<usize> = match tree.root().children {
        Some((w, e)) => vec![w, e],
        None => vec![0],
    };
    let mut trace = Vec::new();
    let mut truncated = false;
    let alive =
        |f: &[usize], t: &ClusterTree| f.iter().map(|&i| t.node(i).rows.len()).sum::<usize>();
    while alive(&frontier, &tree) > target {
        let pick = frontier
            .iter()
            .enumerate()
            .filter(|(_, &id)| !tree.node(id).is_leaf())
            .map(|(slot, &id)| {
                let node = tree.node(id);
                (
                    slot,
                    id,
                    node.rows.len(),
                    homogeneity(ds, &node.rows, &columns),
                )
            })
            .min_by(|l, r| r.2.cmp(&l.2).then(l.3.total_cmp(&r.3)).then(l.1.cmp(&r.1)));
        let Some((slot, id, size, _)) = pick else {
            break;
        };
        let node = tree.node(id);
        let poles = node.poles.expect("internal nodes carry poles");
        let cost = oracle.cost(poles.a, poles.b);
        if cost + reserve > oracle.remaining() {
            truncated = true;
            break;
        }
        let winner = oracle.compare(ds, poles.a, poles.b)?;
        trace.push(Step {
            a: poles.a,
            b: poles.b,
            winner,
            pool: size,
        });
        let (w, e) = node.children.expect("internal");
        frontier[slot] = match winner {
            Choice::A => w,
            Choice::B => e,
        };
    }

    let mut survivors: Vec<RowId> = frontier
        .iter()
        .flat_map(|&i| tree.node(i).rows.iter().copied())
        .collect();
    survivors.sort_unstable();
    let count = survivors.len();

    let mut descent = Descent::new(survivors, cfg);
    truncated |= drive(ds, &metric, &mut descent, oracle)?;
    let last = descent
        .last_winner()
        .or(trace.last().map(|s: &Step| match s.winner {
            Choice::A => s.a,
            Choice::B => s.b,
        }));
    let Descent {
        pool,
        trace: greedy_trace,
        ..
    } = descent;
    trace.extend(greedy_trace);
    Ok(finish(oracle, pool, trace, last, truncated, Some(count)))
}

/// Baseline: score `budget` distinct uniformly sampled rows and keep the
/// best. A preference oracle plays king of the hill over `budget + 1` rows.
pub fn random_search(
    ds: &Dataset,
    oracle: &mut Oracle<'_>,
    budget: usize,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    if ds.is_empty() {
        return Err(SearchError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = budget.min(oracle.remaining());
    let ids = ds.ids();
    let mut trace = Vec::new();
    if oracle.is_objective() {
        let picks: Vec<RowId> = ids
            .choose_multiple(&mut rng, budget.min(ds.len()))
            .copied()
            .collect();
        for &id in &picks {
            oracle.evaluate(ds, id)?;
        }
        let (best, d) = oracle
            .best_seen()
            .map_or((picks.first().copied().unwrap_or(0), None), |(id, d)| {
                (id, Some(d))
            });
        let mut pool = picks;
        pool.sort_unstable();
        Ok(SearchResult {
            best,
            best_d2h: d,
            best_leaf: pool,
            trace,
            evals: oracle.calls_used(),
            truncated: false,
            survivors: None,
        })
    } else {
        let picks: Vec<RowId> = ids
            .choose_multiple(&mut rng, (budget + 1).min(ds.len()))
            .copied()
            .collect();
        let mut champion = picks[0];
        for &challenger in &picks[1..] {
            let winner = oracle.compare(ds, champion, challenger)?;
            trace.push(Step {
                a: champion,
                b: challenger,
                winner,
                pool: picks.len(),
            });
            if winner == Choice::B {
                champion = challenger;
            }
        }
        let mut pool = picks;
        pool.sort_unstable();
        Ok(SearchResult {
            best: champion,
            best_d2h: None,
            best_leaf: pool,
            trace,
            evals: oracle.calls_used(),
            truncated: false,
            survivors: None,
        })
    }
}

/// The member of `rows` with the least total distance to the others,
/// lowest id on ties.
pub fn medoid(metric: &Distance<'_>, rows: &[RowId]) -> Option<RowId> {
    let mut best: Option<(RowId, f64)> = None;
    for &r in rows {
        let total: f64 = rows.iter().map(|&o| metric.between(r, o)).sum();
        match best {
            Some((bid, bt)) if total > bt || (total == bt && r > bid) => {}
            _ => best = Some((r, total)),
        }
    }
    best.map(|b| b.0)
}

/// One medoid per leaf, in leaf order.
pub fn prototypes(tree: &ClusterTree, metric: &Distance<'_>) -> Vec<RowId> {
    tree.leaves()
        .filter_map(|leaf| medoid(metric, &leaf.rows))
        .collect()
}
