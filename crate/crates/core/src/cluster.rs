//! FASTMAP bi-clustering.
//!
//! Each node picks two distant poles: a random start row, its furthest
//! neighbour `A`, then `A`'s furthest neighbour `B`. Every row is projected
//! onto the line through the poles with the cosine rule
//!
//! ```text
//! x = (a² + c² − b²) / (2c),    a = dist(X, A), b = dist(X, B), c = dist(A, B)
//! ```
//!
//! and the rows are cut at the median `x`. Recursion stops at leaves of
//! `min_leaf` rows (default `⌈√N⌉`) or when every remaining row is a
//! duplicate of the others.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Distance, RowId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafSize {
    /// `⌈√N⌉` of the root size.
    Auto,
    Fixed(usize),
}

impl LeafSize {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            LeafSize::Auto => ceil_sqrt(n).max(1),
            LeafSize::Fixed(m) => m.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoleSample {
    Full,
    /// Furthest-neighbour scans look at a random subset of this many rows.
    Sample(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub min_leaf: LeafSize,
    pub pole_sample: PoleSample,
    pub seed: u64,
    /// Exponent of the row metric.
    pub p_dist: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            min_leaf: LeafSize::Auto,
            pole_sample: PoleSample::Full,
            seed: 0,
            p_dist: 2.0,
        }
    }
}

impl ClusterConfig {
    pub fn with_seed(seed: u64) -> Self {
        ClusterConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn validate(&self) -> Result<(), ClusterError> {
        if let PoleSample::Sample(k) = self.pole_sample {
            if k < 2 {
                return Err(ClusterError::Config(format!(
                    "pole_sample must be at least 2, got {k}"
                )));
            }
        }
        if self.p_dist.is_nan() || self.p_dist < 1.0 {
            return Err(ClusterError::Config(format!(
                "p_dist must be at least 1, got {}",
                self.p_dist
            )));
        }
        Ok(())
    }
}

/// Smallest `m` with `m * m >= n`.
pub fn ceil_sqrt(n: usize) -> usize {
    let mut m = (n as f64).sqrt() as usize;
    while m * m < n {
        m += 1;
    }
    while m > 0 && (m - 1) * (m - 1) >= n {
        m -= 1;
    }
    m
}

/// Smallest `k` with `2^k >= n`.
pub fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid cluster config: {0}")]
    Config(String),
    #[error("malformed tree text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// All candidate rows coincide with the start row; there is no axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("degenerate poles: all rows coincide")]
pub struct Degenerate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poles {
    pub a: RowId,
    pub b: RowId,
    pub c: f64,
}

/// Furthest neighbour of `from` among `candidates`, lowest id on ties.
fn furthest(metric: &Distance<'_>, from: RowId, candidates: &[RowId]) -> Option<(RowId, f64)> {
    let mut best: Option<(RowId, f64)> = None;
    for &id in candidates {
        if id == from {
            continue;
        }
        let d = metric.between(from, id);
        match best {
            Some((bid, bd)) if d < bd || (d == bd && id > bid) => {}
            _ => best = Some((id, d)),
        }
    }
    best
}

fn candidates<R: Rng + ?Sized>(rows: &[RowId], sample: PoleSample, rng: &mut R) -> Vec<RowId> {
    match sample {
        PoleSample::Sample(k) if k < rows.len() => rows.choose_multiple(rng, k).copied().collect(),
        _ => rows.to_vec(),
    }
}

/// Picks poles starting from a uniformly random row.
pub fn pick_poles<R: Rng + ?Sized>(
    metric: &Distance<'_>,
    rows: &[RowId],
    sample: PoleSample,
    rng: &mut R,
) -> Result<Poles, Degenerate> {
    if rows.len() < 2 {
        return Err(Degenerate);
    }
    let start = rows[rng.random_range(0..rows.len())];
    pick_poles_from(metric, rows, start, sample, rng)
}

/// Picks poles from a given start row: `A` is the start's furthest
/// neighbour and `B` is `A`'s furthest neighbour.
pub fn pick_poles_from<R: Rng + ?Sized>(
    metric: &Distance<'_>,
    rows: &[RowId],
    start: RowId,
    sample: PoleSample,
    rng: &mut R,
) -> Result<Poles, Degenerate> {
    let pool = candidates(rows, sample, rng);
    let (a, _) = furthest(metric, start, &pool).ok_or(Degenerate)?;
    let pool = candidates(rows, sample, rng);
    let (b, c) = furthest(metric, a, &pool).ok_or(Degenerate)?;
    if c == 0.0 {
        return Err(Degenerate);
    }
    Ok(Poles { a, b, c })
}

/// Cosine-rule position of a row along the pole axis.
pub fn project(metric: &Distance<'_>, row: RowId, poles: &Poles) -> f64 {
    let a = metric.between(row, poles.a);
    let b = metric.between(row, poles.b);
    projection(a, b, poles.c)
}

/// `(a² + c² − b²) / (2c)`.
pub fn projection(a: f64, b: f64, c: f64) -> f64 {
    (a * a + c * c - b * b) / (2.0 * c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub poles: Poles,
    /// Rows on `A`'s side of the median, the larger half when odd.
    pub west: Vec<RowId>,
    pub east: Vec<RowId>,
    /// Projection of the last west row.
    pub split_x: f64,
}

/// Median cut of `rows` along a fresh pole axis.
pub fn split<R: Rng + ?Sized>(
    metric: &Distance<'_>,
    rows: &[RowId],
    sample: PoleSample,
    rng: &mut R,
) -> Result<Split, Degenerate> {
    let poles = pick_poles(metric, rows, sample, rng)?;
    Ok(split_on(metric, rows, poles))
}

/// Median cut of `rows` along the given poles.
pub fn split_on(metric: &Distance<'_>, rows: &[RowId], poles: Poles) -> Split {
    let mut xs: Vec<(f64, RowId)> = rows
        .iter()
        .map(|&id| (project(metric, id, &poles), id))
        .collect();
    xs.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1)));
    let half = rows.len().div_ceil(2);
    let split_x = xs[half - 1].0;
    let west = xs[..half].iter().map(|p| p.1).collect();
    let east = xs[half..].iter().map(|p| p.1).collect();
    Split {
        poles,
        west,
        east,
        split_x,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterNode {
    /// Preorder index within the tree.
    pub id: usize,
    pub depth: usize,
    pub rows: Vec<RowId>,
    pub poles: Option<Poles>,
    pub split_x: Option<f64>,
    /// `(west, east)` node ids.
    pub children: Option<(usize, usize)>,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// A bi-cluster tree stored as a preorder arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    nodes: Vec<ClusterNode>,
    min_leaf: usize,
}

impl ClusterTree {
    pub fn root(&self) -> &ClusterNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &ClusterNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[ClusterNode] {
        &self.nodes
    }

    pub fn min_leaf(&self) -> usize {
        self.min_leaf
    }

    /// Leaves in preorder (west before east).
    pub fn leaves(&self) -> impl Iterator<Item = &ClusterNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Line-oriented dump, one node per line in preorder:
    /// `depth,node_id,leaf,pole_a,pole_b,c,split_x,row_ids...` with `-` for
    /// absent fields.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let (a, b, c) = match n.poles {
                Some(p) => (p.a.to_string(), p.b.to_string(), p.c.to_string()),
                None => ("-".into(), "-".into(), "-".into()),
            };
            let x = n.split_x.map_or_else(|| "-".to_string(), |x| x.to_string());
            write!(
                out,
                "{},{},{},{},{},{},{}",
                n.depth,
                n.id,
                u8::from(n.is_leaf()),
                a,
                b,
                c,
                x
            )
            .unwrap();
            for id in &n.rows {
                write!(out, ",{id}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`ClusterTree::to_text`]. Lines starting with
    /// `#` are skipped. Child links are rebuilt from depths and preorder.
    pub fn from_text(text: &str) -> Result<Self, ClusterError> {
        let mut nodes: Vec<ClusterNode> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| ClusterError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 7 {
                return Err(bad("expected at least 7 fields"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let depth = int(fields[0])?;
            let id = int(fields[1])?;
            if id != nodes.len() {
                return Err(bad("node ids must be consecutive preorder indices"));
            }
            let poles = match (fields[3], fields[4], fields[5]) {
                ("-", "-", "-") => None,
                (a, b, c) => Some(Poles {
                    a: int(a)?,
                    b: int(b)?,
                    c: float(c)?,
                }),
            };
            let split_x = match fields[6] {
                "-" => None,
                x => Some(float(x)?),
            };
            let rows = fields[7..]
                .iter()
                .map(|s| int(s))
                .collect::<Result<_, _>>()?;
            nodes.push(ClusterNode {
                id,
                depth,
                rows,
                poles,
                split_x,
                children: None,
            });
        }
        if nodes.is_empty() {
            return Err(ClusterError::Parse {
                line: 0,
                reason: "no nodes".into(),
            });
        }
        // Preorder: a node's children are the next nodes one level deeper.
        let mut stack: Vec<usize> = Vec::new();
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for i in 0..nodes.len() {
            while let Some(&top) = stack.last() {
                if nodes[top].depth + 1 == nodes[i].depth {
                    break;
                }
                stack.pop();
            }
            if let Some(&parent) = stack.last() {
                kids[parent].push(i);
            }
            stack.push(i);
        }
        for (i, k) in kids.into_iter().enumerate() {
            if let [w, e] = k[..] {
                nodes[i].children = Some((w, e));
            }
        }
        let min_leaf = nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.rows.len())
            .max()
            .unwrap_or(1);
        Ok(ClusterTree { nodes, min_leaf })
    }
}

/// Recursively bi-clusters every row of the dataset.
pub fn cluster(ds: &Dataset, cfg: &ClusterConfig) -> Result<ClusterTree, ClusterError> {
    let metric = ds.distance_with(cfg.p_dist)?;
    cluster_rows(&metric, &ds.ids(), cfg)
}

/// Recursively bi-clusters a subset of rows.
pub fn cluster_rows(
    metric: &Distance<'_>,
    rows: &[RowId],
    cfg: &ClusterConfig,
) -> Result<ClusterTree, ClusterError> {
    cfg.validate()?;
    let min_leaf = cfg.min_leaf.resolve(rows.len());
    let mut rng = cfg.rng();
    let mut nodes = Vec::new();
    grow(
        metric,
        rows.to_vec(),
        0,
        min_leaf,
        cfg.pole_sample,
        &mut rng,
        &mut nodes,
    );
    Ok(ClusterTree { nodes, min_leaf })
}

fn grow(
    metric: &Distance<'_>,
    rows: Vec<RowId>,
    depth: usize,
    min_leaf: usize,
    sample: PoleSample,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<ClusterNode>,
) -> usize {
    let id = nodes.len();
    let cut = if rows.len() > min_leaf {
        split(metric, &rows, sample, rng).ok()
    } else {
        None
    };
    nodes.push(ClusterNode {
        id,
        depth,
        rows,
        poles: cut.as_ref().map(|s| s.poles),
        split_x: cut.as_ref().map(|s| s.split_x),
        children: None,
    });
    if let Some(s) = cut {
        let w = grow(metric, s.west, depth + 1, min_leaf, sample, rng, nodes);
        let e = grow(metric, s.east, depth + 1, min_leaf, sample, rng, nodes);
        nodes[id].children = Some((w, e));
    }
    id
}
