use keys::cluster::{cluster, ClusterConfig, LeafSize};
use keys::data::{Cell, Dataset};
use keys::explain::{
    best_cut, build_rules, contrast, cut_points, discretize, mdl_accepts, pick_desired_current,
    rank_ranges, score, Range, Span,
};
use keys::synth::{generate, SyntheticSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- brute-force discretization oracle -------------------------------------

fn h(labels: &[bool]) -> f64 {
    let n = labels.len() as f64;
    let p = labels.iter().filter(|&&l| l).count() as f64 / n;
    [p, 1.0 - p]
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum()
}

fn sides(points: &[(f64, bool)], at: f64) -> (Vec<bool>, Vec<bool>) {
    let left = points.iter().filter(|p| p.0 < at).map(|p| p.1).collect();
    let right = points.iter().filter(|p| p.0 >= at).map(|p| p.1).collect();
    (left, right)
}

fn gain_at(points: &[(f64, bool)], at: f64) -> f64 {
    let all: Vec<bool> = points.iter().map(|p| p.1).collect();
    let (l, r) = sides(points, at);
    let n = all.len() as f64;
    h(&all) - (l.len() as f64 * h(&l) + r.len() as f64 * h(&r)) / n
}

/// Every midpoint between distinct neighbouring values, scanned in order.
fn oracle_best(points: &[(f64, bool)]) -> Option<(f64, f64)> {
    let mut values: Vec<f64> = points.iter().map(|p| p.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut best: Option<(f64, f64)> = None;
    for w in values.windows(2) {
        let mid = (w[0] + w[1]) / 2.0;
        let g = gain_at(points, mid);
        if best.is_none_or(|(_, bg)| g > bg + 1e-12) {
            best = Some((mid, g));
        }
    }
    best
}

fn classes(labels: &[bool]) -> f64 {
    let pos = labels.iter().any(|&l| l);
    let neg = labels.iter().any(|&l| !l);
    (pos as u8 + neg as u8) as f64
}

fn oracle_mdl(points: &[(f64, bool)], at: f64) -> bool {
    let all: Vec<bool> = points.iter().map(|p| p.1).collect();
    let (l, r) = sides(points, at);
    let n = all.len() as f64;
    let (k, k1, k2) = (classes(&all), classes(&l), classes(&r));
    let delta = (3f64.powf(k) - 2.0).log2() - (k * h(&all) - k1 * h(&l) - k2 * h(&r));
    gain_at(points, at) > ((n - 1.0).log2() + delta) / n
}

fn oracle_cuts(points: &[(f64, bool)], out: &mut Vec<f64>) {
    let Some((at, _)) = oracle_best(points) else {
        return;
    };
    if !oracle_mdl(points, at) {
        return;
    }
    let (l, r): (Vec<_>, Vec<_>) = points.iter().partition(|p| p.0 < at);
    oracle_cuts(&l, out);
    out.push(at);
    oracle_cuts(&r, out);
}

fn sample(rng: &mut ChaCha8Rng) -> Vec<(f64, bool)> {
    let n = rng.random_range(2..=60);
    let shift = rng.random_range(0.0..2.0);
    let mut pts: Vec<(f64, bool)> = (0..n)
        .map(|_| {
            let label = rng.random_bool(0.5);
            let v: f64 = rng.random_range(0.0..3.0) + if label { shift } else { 0.0 };
            // Coarse grid so that ties between values occur.
            ((v * 4.0).round() / 4.0, label)
        })
        .collect();
    pts.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1)));
    pts
}

#[test]
fn first_split_and_mdl_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut accepted, mut rejected) = (0, 0);
    for _ in 0..50 {
        let pts = sample(&mut rng);
        let mine = best_cut(&pts);
        let oracle = oracle_best(&pts);
        assert_eq!(mine.map(|c| c.value), oracle.map(|o| o.0), "points {pts:?}");
        if let (Some(c), Some((at, g))) = (mine, oracle) {
            assert!((c.gain - g).abs() < 1e-12);
            let ok = mdl_accepts(&pts, &c);
            assert_eq!(ok, oracle_mdl(&pts, at));
            if ok {
                accepted += 1
            } else {
                rejected += 1
            }
        }
        let mut expect = Vec::new();
        oracle_cuts(&pts, &mut expect);
        assert_eq!(cut_points(pts.clone()), expect);
    }
    assert!(
        accepted > 0 && rejected > 0,
        "{accepted} accepted, {rejected} rejected"
    );
}

#[test]
fn constant_column_has_no_cut() {
    let pts = vec![(1.0, true), (1.0, false), (1.0, true)];
    assert!(best_cut(&pts).is_none());
    assert!(cut_points(pts).is_empty());
}

// ---- brute-force rule oracle -----------------------------------------------

fn span_hit(span: &Span, cell: &Cell) -> bool {
    match (span, cell) {
        (Span::Interval { lo, hi }, Cell::Num(v)) => lo <= v && v < hi,
        (Span::Symbols(s), Cell::Sym(v)) => s.contains(v),
        _ => false,
    }
}

/// Highest score over every subset, recounted from the raw rows.
fn oracle_rule(ds: &Dataset, top: &[Range], desired: &[usize], current: &[usize]) -> f64 {
    let rule_hit = |mask: u32, id: usize| {
        let mut cols: Vec<usize> = (0..top.len())
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| top[i].column)
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols.iter().all(|&c| {
            (0..top.len())
                .filter(|&i| mask >> i & 1 == 1 && top[i].column == c)
                .any(|i| span_hit(&top[i].span, &ds.row(id).cells[c]))
        })
    };
    (1u32..1 << top.len())
        .map(|mask| {
            let x = desired.iter().filter(|&&id| rule_hit(mask, id)).count() as f64
                / desired.len() as f64;
            let y = current.iter().filter(|&&id| rule_hit(mask, id)).count() as f64
                / current.len() as f64;
            if x == 0.0 {
                0.0
            } else {
                x * x / (x + y)
            }
        })
        .fold(0.0, f64::max)
}

/// Desired rows sit low on x1 and mostly "red"; current rows high and "blue",
/// with some overlap on every column. Shape is noise.
fn crafted(seed: u64) -> (Dataset, Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("x1,x2,color,shape,y-\n");
    let (nd, nc) = (rng.random_range(15..40), rng.random_range(15..40));
    for i in 0..nd + nc {
        let d = i < nd;
        let x1: f64 = rng.random_range(0.0..6.0) + if d { 0.0 } else { 3.0 };
        let x2: f64 = rng.random_range(0.0..4.0) + if d { 1.0 } else { 0.0 };
        let color = match (d, rng.random_range(0..4)) {
            (true, 0) => "blue",
            (true, 1) => "green",
            (true, _) => "red",
            (false, 0) => "red",
            (false, 1) => "green",
            _ => "blue",
        };
        let shape = ["round", "square", "flat"][rng.random_range(0..3)];
        text.push_str(&format!("{x1:.2},{x2:.2},{color},{shape},0\n"));
    }
    let ds = Dataset::parse_csv(&text).unwrap();
    (ds, (0..nd).collect(), (nd..nd + nc).collect())
}

#[test]
fn best_rule_matches_subset_enumeration() {
    for seed in 0..20 {
        let (ds, d, c) = crafted(seed);
        let mut ranges = Vec::new();
        for &col in ds.decision_columns() {
            ranges.extend(discretize(&ds, col, &d, &c).unwrap());
        }
        let ranked = rank_ranges(ranges);
        assert!(
            ranked.len() >= 6,
            "seed {seed} gives only {} ranges",
            ranked.len()
        );
        let top = &ranked[..6];
        let search = build_rules(&ds, &ranked, 6, &d, &c).unwrap();
        assert_eq!(search.rules.len(), 63);
        let expect = oracle_rule(&ds, top, &d, &c);
        let got = search.best().score;
        assert!(
            (got - expect).abs() <= 1e-12,
            "seed {seed}: {got} vs {expect}"
        );
        // The rule's own counts agree with its score.
        let best = search.best();
        let x = d.iter().filter(|&&id| best.matches(&ds, id)).count() as f64 / d.len() as f64;
        let y = c.iter().filter(|&&id| best.matches(&ds, id)).count() as f64 / c.len() as f64;
        assert!((score(x, y) - got).abs() <= 1e-12);
    }
}

#[test]
fn best_rule_at_least_best_single_range() {
    for seed in 0..10 {
        let (ds, d, c) = crafted(100 + seed);
        let search = contrast(&ds, &d, &c, 10).unwrap();
        let mut ranges = Vec::new();
        for &col in ds.decision_columns() {
            ranges.extend(discretize(&ds, col, &d, &c).unwrap());
        }
        let single = rank_ranges(ranges)[0].score;
        assert!(search.best().score >= single);
        assert!(
            search.best().x_freq > 0.0,
            "never selects against the desired rows"
        );
    }
}

#[test]
fn numeric_ranges_partition_the_line() {
    let (ds, d, c) = crafted(7);
    let ranges = discretize(&ds, 0, &d, &c).unwrap();
    let bounds: Vec<(f64, f64)> = ranges
        .iter()
        .map(|r| match r.span {
            Span::Interval { lo, hi } => (lo, hi),
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(bounds.first().unwrap().0, f64::NEG_INFINITY);
    assert_eq!(bounds.last().unwrap().1, f64::INFINITY);
    assert!(bounds
        .windows(2)
        .all(|w| w[0].1 == w[1].0 && w[0].0 < w[0].1));
    for id in d.iter().chain(&c) {
        let hits = ranges
            .iter()
            .filter(|r| r.span.matches(&ds.row(*id).cells[0]))
            .count();
        assert_eq!(hits, 1);
    }
}

#[test]
fn ranges_absent_from_desired_are_dropped() {
    let ds = Dataset::parse_csv("s,y-\na,0\na,0\nb,1\nb,1\nc,1\n").unwrap();
    let ranges = discretize(&ds, 0, &[0, 1], &[2, 3, 4]).unwrap();
    assert_eq!(ranges.len(), 3);
    let ranked = rank_ranges(ranges);
    assert_eq!(ranked.len(), 1);
    assert_eq!(ranked[0].score, 1.0);
}

proptest! {
    #[test]
    fn score_is_bounded_and_monotone(x in 0.0f64..=1.0, y in 0.0f64..=1.0, dx in 0.0f64..0.5, dy in 0.0f64..0.5) {
        let s = score(x, y);
        prop_assert!((0.0..=1.0).contains(&s));
        let up = (x + dx).min(1.0);
        prop_assert!(score(up, y) >= s - 1e-15);
        let worse = (y + dy).min(1.0);
        prop_assert!(score(x, worse) <= s + 1e-15);
    }
}

#[test]
fn picks_extreme_leaves_among_many() {
    let ds = generate(&SyntheticSpec::tradeoff(1600, 4, 3));
    let cfg = ClusterConfig {
        min_leaf: LeafSize::Fixed(16),
        seed: 3,
        ..Default::default()
    };
    let tree = cluster(&ds, &cfg).unwrap();
    let leaves: Vec<_> = tree.leaves().collect();
    assert_eq!(leaves.len(), 128);
    let means: Vec<(usize, f64)> = leaves
        .iter()
        .map(|l| {
            let total: f64 = l.rows.iter().map(|&r| ds.d2h(r).unwrap()).sum();
            (l.id, total / l.rows.len() as f64)
        })
        .collect();
    let lo = means.iter().cloned().fold(
        (usize::MAX, f64::INFINITY),
        |a, b| if b.1 < a.1 { b } else { a },
    );
    let hi = means
        .iter()
        .cloned()
        .fold((usize::MAX, f64::NEG_INFINITY), |a, b| {
            if b.1 > a.1 {
                b
            } else {
                a
            }
        });
    let got = pick_desired_current(&tree, |r| ds.d2h(r), None).unwrap();
    assert_eq!(got, (lo.0, hi.0));
    let forced = (leaves[5].id, leaves[9].id);
    assert_eq!(
        pick_desired_current(&tree, |r| ds.d2h(r), Some(forced)).unwrap(),
        forced
    );
    assert!(pick_desired_current(&tree, |r| ds.d2h(r), Some((tree.root().id, forced.1))).is_err());
}
