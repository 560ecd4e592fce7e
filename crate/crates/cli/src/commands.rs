//! The batch subcommands. Each returns its full artifact as text so that
//! re-runs can be compared byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use keys::cluster::{cluster, ClusterConfig, ClusterTree};
use keys::explain::{contrast, pick_desired_current, Span};
use keys::optimize::{
    greedy_descend, non_greedy, random_search, Oracle, Scripted, SearchConfig, SearchResult,
};
use keys::stats::{iqr, median};
use keys::synth::{generate, SyntheticSpec};
use keys::Dataset;
use serde_json::json;

use crate::config::{Algo, RunConfig};
use crate::error::CliError;

/// A finished artifact. `truncated` maps to exit code 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub text: String,
    pub truncated: bool,
}

impl Output {
    fn complete(text: String) -> Self {
        Output {
            text,
            truncated: false,
        }
    }
}

pub fn load(path: &Path) -> Result<Dataset, CliError> {
    Dataset::from_path(path).map_err(|source| CliError::Data {
        path: path.display().to_string(),
        source,
    })
}

fn cluster_config(cfg: &RunConfig, seed: u64) -> ClusterConfig {
    ClusterConfig {
        min_leaf: cfg.min_leaf.leaf(),
        seed,
        ..Default::default()
    }
}

/// `# size count` lines of leaf sizes, smallest first.
fn histogram(tree: &ClusterTree) -> String {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for leaf in tree.leaves() {
        *counts.entry(leaf.rows.len()).or_default() += 1;
    }
    let mut out = String::from("# leaf sizes (rows count)\n");
    for (size, count) in counts {
        writeln!(out, "# {size} {count}").unwrap();
    }
    out
}

pub fn run_cluster(cfg: &RunConfig) -> Result<Output, CliError> {
    let ds = load(cfg.data_path()?)?;
    let tree = cluster(&ds, &cluster_config(cfg, cfg.seed))?;
    let mut text = cfg.header();
    writeln!(
        text,
        "# rows {} min_leaf {} leaves {} depth {}",
        ds.len(),
        tree.min_leaf(),
        tree.leaves().count(),
        tree.depth()
    )
    .unwrap();
    text.push_str(&tree.to_text());
    text.push_str(&histogram(&tree));
    Ok(Output::complete(text))
}

fn search_once(ds: &Dataset, cfg: &RunConfig, seed: u64) -> Result<SearchResult, CliError> {
    let budget = cfg.budget.budget(ds.len());
    let mut oracle = match &cfg.answers {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read answers {}: {e}", path.display()))
            })?;
            Oracle::preference(budget, Scripted::parse(&text)?)
        }
        None => Oracle::from_table(budget),
    };
    let scfg = SearchConfig {
        cluster: cluster_config(cfg, seed),
        stop_leaf: cfg.stop_leaf,
    };
    let result = match cfg.algo {
        Algo::Greedy => greedy_descend(ds, &scfg, &mut oracle)?,
        Algo::Nongreedy => non_greedy(ds, &scfg, &mut oracle)?,
        Algo::Random => random_search(ds, &mut oracle, budget, seed)?,
    };
    Ok(result)
}

fn join(ids: &[usize]) -> String {
    ids.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_row(ds: &Dataset, id: usize) -> String {
    let row = ds.row(id);
    ds.columns()
        .iter()
        .zip(&row.cells)
        .map(|(c, v)| format!("{}={v}", c.header()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn run_optimize(cfg: &RunConfig) -> Result<Output, CliError> {
    let ds = load(cfg.data_path()?)?;
    let budget = cfg.budget.budget(ds.len());
    let mut text = cfg.header();
    writeln!(text, "algo: {}", cfg.algo).unwrap();
    writeln!(text, "rows: {}", ds.len()).unwrap();
    writeln!(text, "budget: {budget}").unwrap();

    if cfg.repeats == 1 {
        let r = search_once(&ds, cfg, cfg.seed)?;
        writeln!(text, "evals: {}", r.evals).unwrap();
        writeln!(text, "truncated: {}", r.truncated).unwrap();
        writeln!(text, "best: {}", r.best).unwrap();
        match r.best_d2h {
            Some(d) => writeln!(text, "best_d2h: {d}").unwrap(),
            None => writeln!(text, "best_d2h: -").unwrap(),
        }
        writeln!(text, "best_row: {}", render_row(&ds, r.best)).unwrap();
        if let Some(s) = r.survivors {
            writeln!(text, "survivors: {s}").unwrap();
        }
        writeln!(text, "best_leaf: {}", join(&r.best_leaf)).unwrap();
        for (i, s) in r.trace.iter().enumerate() {
            writeln!(
                text,
                "step {}: {} vs {} -> {} (pool {})",
                i + 1,
                s.a,
                s.b,
                s.winner,
                s.pool
            )
            .unwrap();
        }
        return Ok(Output {
            text,
            truncated: r.truncated,
        });
    }

    let mut d2hs = Vec::new();
    let mut evals = Vec::new();
    let mut truncated = false;
    for run in 0..cfg.repeats as u64 {
        let seed = cfg.seed.wrapping_add(run);
        let r = search_once(&ds, cfg, seed)?;
        let d = r
            .best_d2h
            .map_or_else(|| "-".to_string(), |d| d.to_string());
        writeln!(
            text,
            "run seed={seed} evals={} best={} best_d2h={d} truncated={}",
            r.evals, r.best, r.truncated
        )
        .unwrap();
        d2hs.extend(r.best_d2h);
        evals.push(r.evals as f64);
        truncated |= r.truncated;
    }
    let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    writeln!(text, "median_d2h: {}", show(median(&d2hs))).unwrap();
    writeln!(text, "iqr_d2h: {}", show(iqr(&d2hs))).unwrap();
    writeln!(text, "median_evals: {}", show(median(&evals))).unwrap();
    writeln!(text, "iqr_evals: {}", show(iqr(&evals))).unwrap();
    Ok(Output { text, truncated })
}

fn bound(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

pub fn run_explain(cfg: &RunConfig) -> Result<Output, CliError> {
    let ds = load(cfg.data_path()?)?;
    let tree = cluster(&ds, &cluster_config(cfg, cfg.seed))?;
    let (desired, current) = match (cfg.desired, cfg.current) {
        (Some(d), Some(c)) => pick_desired_current(&tree, |r| ds.d2h(r), Some((d, c)))?,
        (d, c) => {
            let (auto_d, auto_c) = pick_desired_current(&tree, |r| ds.d2h(r), None)?;
            let chosen = (d.unwrap_or(auto_d), c.unwrap_or(auto_c));
            pick_desired_current(&tree, |r| ds.d2h(r), Some(chosen))?
        }
    };
    let (d_rows, c_rows) = (&tree.node(desired).rows, &tree.node(current).rows);
    let search = contrast(&ds, d_rows, c_rows, cfg.top_n)?;
    let best = search.best();

    let mut text = cfg.header();
    writeln!(text, "desired: leaf {desired} ({} rows)", d_rows.len()).unwrap();
    writeln!(text, "current: leaf {current} ({} rows)", c_rows.len()).unwrap();
    writeln!(text, "rule: {best}").unwrap();
    writeln!(text, "score: {}", best.score).unwrap();
    writeln!(text, "x: {}", best.x_freq).unwrap();
    writeln!(text, "y: {}", best.y_freq).unwrap();

    let clauses: Vec<serde_json::Value> = best
        .clauses
        .iter()
        .map(|c| {
            let spans: Vec<serde_json::Value> = c
                .spans
                .iter()
                .map(|s| match s {
                    Span::Interval { lo, hi } => json!({"lo": bound(*lo), "hi": bound(*hi)}),
                    Span::Symbols(set) => json!({"symbols": set}),
                })
                .collect();
            json!({"column": c.name, "spans": spans})
        })
        .collect();
    let machine = json!({
        "desired": {"leaf": desired, "rows": d_rows.len()},
        "current": {"leaf": current, "rows": c_rows.len()},
        "rule": best.to_string(),
        "score": best.score,
        "x": best.x_freq,
        "y": best.y_freq,
        "clauses": clauses,
    });
    writeln!(text, "json: {machine}").unwrap();
    Ok(Output::complete(text))
}

pub fn run_gen(cfg: &RunConfig) -> Result<Output, CliError> {
    if cfg.rows == 0 || cfg.dims == 0 {
        return Err(CliError::Usage("--rows and --dims must be positive".into()));
    }
    let spec = SyntheticSpec {
        family: cfg.family.into(),
        rows: cfg.rows,
        dims: cfg.dims,
        seed: cfg.seed,
        inject_optimum: cfg.inject_optimum,
    };
    let mut text = cfg.header();
    text.push_str(&generate(&spec).to_csv());
    Ok(Output::complete(text))
}
