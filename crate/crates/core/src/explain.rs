//! Contrast rules between a desired and a current cluster.
//!
//! The two clusters are treated as a two-class problem. Every decision
//! column is cut into ranges (entropy-based with an MDL stopping rule for
//! numbers, one range per symbol otherwise). A range seen in a fraction `x`
//! of desired rows and `y` of current rows scores `x² / (x + y)`. Rules are
//! built from every combination of the top ranges: ranges on the same
//! column are OR'd, columns are AND'd, and each rule is rescored with the
//! same formula over the rows it matches.
//!
//! ```
//! use keys::explain::score;
//! assert_eq!(score(0.8, 0.2), 0.64);
//! assert_eq!(score(0.5, 0.5), 0.25);
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterTree;
use crate::data::{Cell, DataError, Dataset, Role, RowId};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("need at least two leaves to contrast, found {0}")]
    TooFewLeaves(usize),
    #[error("leaf {leaf} cannot be scored ({source}); evaluate its rows or supply labels")]
    Unscorable {
        leaf: usize,
        #[source]
        source: DataError,
    },
    #[error("node {0} is not a leaf of this tree")]
    NotALeaf(usize),
    #[error("no range appears in the desired rows; the clusters are indistinguishable")]
    Indistinguishable,
    #[error("column {0} is not a decision column")]
    NotDecision(usize),
}

/// `x² / (x + y)`, zero when both frequencies are zero.
pub fn score(x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x / ((x + y) / x)
    }
}

/// [`score`] of the proportions `hit_d / n_d` and `hit_c / n_c`, computed
/// exactly in integers and rounded once.
pub fn score_counts(hit_d: usize, n_d: usize, hit_c: usize, n_c: usize) -> f64 {
    if hit_d == 0 || n_d == 0 {
        return 0.0;
    }
    let (a, n, b) = (hit_d as u128, n_d as u128, hit_c as u128);
    let m = n_c.max(1) as u128;
    let num = a * a * m;
    let den = n * (a * m + b * n);
    ratio(num, den)
}

/// `num / den` rounded once, for integers beyond f64's exact range too.
fn ratio(num: u128, den: u128) -> f64 {
    if num < (1 << 53) && den < (1 << 53) {
        num as f64 / den as f64
    } else {
        let g = gcd(num, den);
        (num / g) as f64 / (den / g) as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn count(ds: &Dataset, rows: &[RowId], mut pred: impl FnMut(&crate::data::Row) -> bool) -> usize {
    rows.iter().filter(|&&id| pred(ds.row(id))).count()
}

fn frac(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Picks the leaves with the lowest (desired) and highest (current) mean
/// row score, lowest node id on ties. `overrides` are returned as given
/// after checking they are leaves.
pub fn pick_desired_current<F>(
    tree: &ClusterTree,
    mut row_score: F,
    overrides: Option<(usize, usize)>,
) -> Result<(usize, usize), ExplainError>
where
    F: FnMut(RowId) -> Result<f64, DataError>,
{
    let leaves: Vec<usize> = tree.leaves().map(|l| l.id).collect();
    if leaves.len() < 2 {
        return Err(ExplainError::TooFewLeaves(leaves.len()));
    }
    if let Some((d, c)) = overrides {
        for id in [d, c] {
            if id >= tree.nodes().len() || !tree.node(id).is_leaf() {
                return Err(ExplainError::NotALeaf(id));
            }
        }
        return Ok((d, c));
    }
    let mut best: Option<(usize, f64)> = None;
    let mut worst: Option<(usize, f64)> = None;
    for &id in &leaves {
        let rows = &tree.node(id).rows;
        let mut total = 0.0;
        for &r in rows {
            total +=
                row_score(r).map_err(|source| ExplainError::Unscorable { leaf: id, source })?;
        }
        let mean = total / rows.len() as f64;
        if best.is_none_or(|(_, m)| mean < m) {
            best = Some((id, mean));
        }
        if worst.is_none_or(|(_, m)| mean > m) {
            worst = Some((id, mean));
        }
    }
    Ok((best.unwrap().0, worst.unwrap().0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Span {
    /// `[lo, hi)`; the outer bins use infinite ends.
    Interval {
        lo: f64,
        hi: f64,
    },
    Symbols(BTreeSet<String>),
}

impl Span {
    pub fn matches(&self, cell: &Cell) -> bool {
        match (self, cell) {
            (Span::Interval { lo, hi }, Cell::Num(v)) => *lo <= *v && *v < *hi,
            (Span::Symbols(set), Cell::Sym(s)) => set.contains(s),
            _ => false,
        }
    }

    fn order(&self, other: &Span) -> Ordering {
        match (self, other) {
            (Span::Interval { lo: a, .. }, Span::Interval { lo: b, .. }) => a.total_cmp(b),
            (Span::Symbols(a), Span::Symbols(b)) => a.cmp(b),
            (Span::Interval { .. }, Span::Symbols(_)) => Ordering::Less,
            (Span::Symbols(_), Span::Interval { .. }) => Ordering::Greater,
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Span::Interval { lo, hi } => write!(f, "[{}, {})", num(*lo), num(*hi)),
            Span::Symbols(set) => {
                let items: Vec<&str> = set.iter().map(String::as_str).collect();
                write!(f, "{{{}}}", items.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub column: usize,
    pub name: String,
    pub span: Span,
    /// Fraction of desired rows inside the span.
    pub x_freq: f64,
    /// Fraction of current rows inside the span.
    pub y_freq: f64,
    pub score: f64,
}

impl Range {
    fn new(ds: &Dataset, column: usize, span: Span, desired: &[RowId], current: &[RowId]) -> Self {
        let hd = count(ds, desired, |r| span.matches(&r.cells[column]));
        let hc = count(ds, current, |r| span.matches(&r.cells[column]));
        Range {
            column,
            name: ds.columns()[column].name.clone(),
            span,
            x_freq: frac(hd, desired.len()),
            y_freq: frac(hc, current.len()),
            score: score_counts(hd, desired.len(), hc, current.len()),
        }
    }
}

/// Two-class entropy in bits of `pos` positives among `n`.
pub fn entropy(pos: usize, n: usize) -> f64 {
    if n == 0 || pos == 0 || pos == n {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    let q = 1.0 - p;
    -(p * p.log2() + q * q.log2())
}

/// A candidate cut of value-sorted labelled points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cut {
    /// Midpoint between the two values either side of the cut.
    pub value: f64,
    /// Number of points left of the cut.
    pub index: usize,
    pub gain: f64,
}

/// Gains closer than this count as tied.
pub const GAIN_EPS: f64 = 1e-12;

/// The information-gain-maximizing midpoint cut, smallest value on ties.
/// `points` must be sorted by value; the label is `true` for desired rows.
pub fn best_cut(points: &[(f64, bool)]) -> Option<Cut> {
    let n = points.len();
    let total_pos = points.iter().filter(|p| p.1).count();
    let base = entropy(total_pos, n);
    let mut best: Option<Cut> = None;
    let mut pos = 0;
    for i in 1..n {
        pos += usize::from(points[i - 1].1);
        if points[i - 1].0 == points[i].0 {
            continue;
        }
        let left = i as f64 * entropy(pos, i);
        let right = (n - i) as f64 * entropy(total_pos - pos, n - i);
        let gain = base - (left + right) / n as f64;
        if best.is_none_or(|b| gain > b.gain + GAIN_EPS) {
            best = Some(Cut {
                value: (points[i - 1].0 + points[i].0) / 2.0,
                index: i,
                gain,
            });
        }
    }
    best
}

/// Fayyad–Irani MDL acceptance test for a cut.
pub fn mdl_accepts(points: &[(f64, bool)], cut: &Cut) -> bool {
    let n = points.len();
    let (left, right) = points.split_at(cut.index);
    let classes = |s: &[(f64, bool)]| {
        let pos = s.iter().filter(|p| p.1).count();
        (pos, usize::from(pos > 0) + usize::from(pos < s.len()))
    };
    let (pos, k) = classes(points);
    let (lpos, k1) = classes(left);
    let (rpos, k2) = classes(right);
    let ent = entropy(pos, n);
    let ent1 = entropy(lpos, left.len());
    let ent2 = entropy(rpos, right.len());
    let delta =
        (3f64.powi(k as i32) - 2.0).log2() - (k as f64 * ent - k1 as f64 * ent1 - k2 as f64 * ent2);
    let nf = n as f64;
    cut.gain > ((nf - 1.0).log2() + delta) / nf
}

fn mdl_cuts(points: &[(f64, bool)], out: &mut Vec<f64>) {
    if points.len() < 2 {
        return;
    }
    let Some(cut) = best_cut(points) else {
        return;
    };
    if !mdl_accepts(points, &cut) {
        return;
    }
    let (left, right) = points.split_at(cut.index);
    mdl_cuts(left, out);
    out.push(cut.value);
    mdl_cuts(right, out);
}

/// Sorted MDL cut points for labelled values.
pub fn cut_points(mut points: Vec<(f64, bool)>) -> Vec<f64> {
    points.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1)));
    let mut cuts = Vec::new();
    mdl_cuts(&points, &mut cuts);
    cuts
}

/// Cuts one decision column into ranges using only the desired and current
/// rows. Numeric ranges partition the real line.
pub fn discretize(
    ds: &Dataset,
    column: usize,
    desired: &[RowId],
    current: &[RowId],
) -> Result<Vec<Range>, ExplainError> {
    match ds.columns()[column].role {
        Role::NumericDecision => {
            let labelled = desired
                .iter()
                .map(|&id| (id, true))
                .chain(current.iter().map(|&id| (id, false)));
            let points: Vec<(f64, bool)> = labelled
                .filter_map(|(id, label)| ds.row(id).cells[column].as_num().map(|v| (v, label)))
                .collect();
            let cuts = cut_points(points);
            let mut edges = vec![f64::NEG_INFINITY];
            edges.extend(cuts);
            edges.push(f64::INFINITY);
            Ok(edges
                .windows(2)
                .map(|w| {
                    Range::new(
                        ds,
                        column,
                        Span::Interval { lo: w[0], hi: w[1] },
                        desired,
                        current,
                    )
                })
                .collect())
        }
        Role::SymbolicDecision => {
            let symbols: BTreeSet<&str> = desired
                .iter()
                .chain(current)
                .filter_map(|&id| match &ds.row(id).cells[column] {
                    Cell::Sym(s) => Some(s.as_str()),
                    _ => None,
                })
                .collect();
            Ok(symbols
                .into_iter()
                .map(|s| {
                    let span = Span::Symbols(BTreeSet::from([s.to_string()]));
                    Range::new(ds, column, span, desired, current)
                })
                .collect())
        }
        _ => Err(ExplainError::NotDecision(column)),
    }
}

/// Drops ranges absent from the desired rows and sorts the rest by score,
/// then smaller `y`, column name and span order.
pub fn rank_ranges(ranges: Vec<Range>) -> Vec<Range> {
    let mut kept: Vec<Range> = ranges.into_iter().filter(|r| r.x_freq > 0.0).collect();
    kept.sort_by(|l, r| {
        r.score
            .total_cmp(&l.score)
            .then(l.y_freq.total_cmp(&r.y_freq))
            .then_with(|| l.name.cmp(&r.name))
            .then_with(|| l.span.order(&r.span))
    });
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub column: usize,
    pub name: String,
    /// Alternatives on this column; any one matching suffices.
    pub spans: Vec<Span>,
}

impl Clause {
    pub fn matches(&self, cell: &Cell) -> bool {
        self.spans.iter().any(|s| s.matches(cell))
    }

    /// Spans merged for display: adjacent intervals fused, symbols unioned.
    fn merged(&self) -> Vec<Span> {
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        let mut symbols: BTreeSet<String> = BTreeSet::new();
        for s in &self.spans {
            match s {
                Span::Interval { lo, hi } => intervals.push((*lo, *hi)),
                Span::Symbols(set) => symbols.extend(set.iter().cloned()),
            }
        }
        intervals.sort_by(|l, r| l.0.total_cmp(&r.0));
        let mut fused: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in intervals {
            match fused.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => fused.push((lo, hi)),
            }
        }
        let mut out: Vec<Span> = fused
            .into_iter()
            .map(|(lo, hi)| Span::Interval { lo, hi })
            .collect();
        if !symbols.is_empty() {
            out.push(Span::Symbols(symbols));
        }
        out
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let spans: Vec<String> = self.merged().iter().map(Span::to_string).collect();
        write!(f, "{} ∈ {}", self.name, spans.join(" ∪ "))
    }
}

/// A conjunction over columns of disjunctions of ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Sorted by column index.
    pub clauses: Vec<Clause>,
    pub x_freq: f64,
    pub y_freq: f64,
    pub score: f64,
    /// Number of ranges used.
    pub size: usize,
    /// Positions of the ranges used within the ranked list, ascending.
    pub ranks: Vec<usize>,
}

impl Rule {
    /// Missing cells never match.
    pub fn matches(&self, ds: &Dataset, id: RowId) -> bool {
        let row = ds.row(id);
        self.clauses.iter().all(|c| c.matches(&row.cells[c.column]))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.clauses.iter().map(Clause::to_string).collect();
        f.write_str(&parts.join(" AND "))
    }
}

/// Every rule enumerated by [`build_rules`], best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSearch {
    pub rules: Vec<Rule>,
}

impl RuleSearch {
    pub fn best(&self) -> &Rule {
        &self.rules[0]
    }
}

/// Scores every non-empty subset of the first `top_n` ranked ranges as a
/// rule. Ties go to fewer ranges, then to the lexicographically smaller list
/// of range ranks.
pub fn build_rules(
    ds: &Dataset,
    ranked: &[Range],
    top_n: usize,
    desired: &[RowId],
    current: &[RowId],
) -> Result<RuleSearch, ExplainError> {
    let top = &ranked[..ranked.len().min(top_n)];
    if top.is_empty() {
        return Err(ExplainError::Indistinguishable);
    }
    assert!(top.len() < 32, "top_n must stay below 32");
    let hits = |rows: &[RowId]| -> Vec<Vec<bool>> {
        top.iter()
            .map(|r| {
                rows.iter()
                    .map(|&id| r.span.matches(&ds.row(id).cells[r.column]))
                    .collect()
            })
            .collect()
    };
    let (dh, ch) = (hits(desired), hits(current));

    let mut rules = Vec::with_capacity((1usize << top.len()) - 1);
    for mask in 1u32..(1u32 << top.len()) {
        let ranks: Vec<usize> = (0..top.len()).filter(|i| mask & (1 << i) != 0).collect();
        let mut by_column: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &ranks {
            by_column.entry(top[i].column).or_default().push(i);
        }
        let matched = |h: &[Vec<bool>], n: usize| -> usize {
            (0..n)
                .filter(|&row| by_column.values().all(|idx| idx.iter().any(|&i| h[i][row])))
                .count()
        };
        let hd = matched(&dh, desired.len());
        let hc = matched(&ch, current.len());
        let clauses = by_column
            .iter()
            .map(|(&column, idx)| Clause {
                column,
                name: top[idx[0]].name.clone(),
                spans: idx.iter().map(|&i| top[i].span.clone()).collect(),
            })
            .collect();
        rules.push(Rule {
            clauses,
            x_freq: frac(hd, desired.len()),
            y_freq: frac(hc, current.len()),
            score: score_counts(hd, desired.len(), hc, current.len()),
            size: ranks.len(),
            ranks,
        });
    }
    rules.sort_by(|l, r| {
        r.score
            .total_cmp(&l.score)
            .then(l.size.cmp(&r.size))
            .then_with(|| l.ranks.cmp(&r.ranks))
    });
    Ok(RuleSearch { rules })
}

/// Discretizes every decision column, ranks the ranges and searches rules.
pub fn contrast(
    ds: &Dataset,
    desired: &[RowId],
    current: &[RowId],
    top_n: usize,
) -> Result<RuleSearch, ExplainError> {
    let mut ranges = Vec::new();
    for &col in ds.decision_columns() {
        ranges.extend(discretize(ds, col, desired, current)?);
    }
    let ranked = rank_ranges(ranges);
    build_rules(ds, &ranked, top_n, desired, current)
}
