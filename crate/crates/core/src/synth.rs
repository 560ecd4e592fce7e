//! Seeded synthetic candidate pools for benchmarks.
//!
//! * [`Family::Sphere`]: `k` decisions uniform in `[0, 1]`, one minimized
//!   objective equal to the distance from a hidden optimum.
//! * [`Family::Tradeoff`]: two minimized objectives `f1 = v1` and
//!   `f2 = 1 − √v1 + g(v2..vk)` with `g ≥ 0`, so improving one objective
//!   along the front costs the other.
//! * [`two_blobs`]: two labelled Gaussian clusters for prototype checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, Column, Dataset, Goal, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Sphere,
    Tradeoff,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sphere" => Ok(Family::Sphere),
            "tradeoff" => Ok(Family::Tradeoff),
            other => Err(format!("unknown family `{other}` (sphere|tradeoff)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub rows: usize,
    pub dims: usize,
    pub seed: u64,
    /// Sphere only: replace the last row with the hidden optimum.
    pub inject_optimum: bool,
}

impl SyntheticSpec {
    pub fn sphere(rows: usize, dims: usize, seed: u64) -> Self {
        SyntheticSpec {
            family: Family::Sphere,
            rows,
            dims,
            seed,
            inject_optimum: false,
        }
    }

    pub fn tradeoff(rows: usize, dims: usize, seed: u64) -> Self {
        SyntheticSpec {
            family: Family::Tradeoff,
            rows,
            dims,
            seed,
            inject_optimum: false,
        }
    }
}

fn decision_columns(dims: usize) -> Vec<Column> {
    (1..=dims)
        .map(|i| Column::new(format!("x{i}"), Role::NumericDecision))
        .collect()
}

/// Hidden optimum of a sphere problem.
pub fn sphere_optimum(spec: &SyntheticSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0b7e_c7ed_0001);
    (0..spec.dims).map(|_| rng.random::<f64>()).collect()
}

pub fn generate(spec: &SyntheticSpec) -> Dataset {
    let dims = spec.dims.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut columns = decision_columns(dims);
    let mut cells = Vec::with_capacity(spec.rows);
    match spec.family {
        Family::Sphere => {
            let opt = sphere_optimum(spec);
            columns.push(Column::new("dist", Role::Objective(Goal::Minimize)));
            for i in 0..spec.rows {
                let xs: Vec<f64> = if spec.inject_optimum && i + 1 == spec.rows {
                    opt.clone()
                } else {
                    (0..dims).map(|_| rng.random::<f64>()).collect()
                };
                let d = xs
                    .iter()
                    .zip(&opt)
                    .map(|(x, o)| (x - o).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let mut row: Vec<Cell> = xs.into_iter().map(Cell::Num).collect();
                row.push(Cell::Num(d));
                cells.push(row);
            }
        }
        Family::Tradeoff => {
            columns.push(Column::new("f1", Role::Objective(Goal::Minimize)));
            columns.push(Column::new("f2", Role::Objective(Goal::Minimize)));
            for _ in 0..spec.rows {
                let xs: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
                let (f1, f2) = tradeoff_objectives(&xs);
                let mut row: Vec<Cell> = xs.into_iter().map(Cell::Num).collect();
                row.push(Cell::Num(f1));
                row.push(Cell::Num(f2));
                cells.push(row);
            }
        }
    }
    Dataset::new(columns, cells).expect("generated rows have uniform arity")
}

/// `(v1, 1 − √v1 + g)` with `g` the mean squared offset of the remaining
/// decisions from 0.5.
pub fn tradeoff_objectives(xs: &[f64]) -> (f64, f64) {
    let v1 = xs[0];
    let rest = &xs[1..];
    let g = if rest.is_empty() {
        0.0
    } else {
        rest.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / rest.len() as f64
    };
    (v1, 1.0 - v1.sqrt() + g)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Two labelled Gaussian clusters in `dims` dimensions with unit spread,
/// centres `separation` apart along every axis. The label lives in an
/// ignored `?label` column so it never influences distances.
pub fn two_blobs(rows: usize, dims: usize, separation: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = vec![Column::new("label", Role::Ignored)];
    columns.extend(decision_columns(dims));
    let cells = (0..rows)
        .map(|_| {
            let label = rng.random_bool(0.5);
            let centre = if label { separation } else { 0.0 };
            let mut row = vec![Cell::Sym(if label { "b" } else { "a" }.to_string())];
            row.extend((0..dims).map(|_| Cell::Num(centre + gaussian(&mut rng))));
            row
        })
        .collect();
    Dataset::new(columns, cells).expect("generated rows have uniform arity")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec::sphere(256, 5, 11);
        assert_eq!(generate(&spec).to_csv(), generate(&spec).to_csv());
        let other = SyntheticSpec::sphere(256, 5, 12);
        assert_ne!(generate(&spec).to_csv(), generate(&other).to_csv());
    }

    #[test]
    fn injected_optimum_is_heaven() {
        let spec = SyntheticSpec {
            inject_optimum: true,
            ..SyntheticSpec::sphere(256, 5, 3)
        };
        let ds = generate(&spec);
        assert_eq!(ds.d2h(255).unwrap(), 0.0);
    }

    #[test]
    fn csv_reload_is_identical() {
        let ds = generate(&SyntheticSpec::tradeoff(50, 3, 1));
        let back = Dataset::parse_csv(&ds.to_csv()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn blobs_are_labelled() {
        let ds = two_blobs(100, 2, 4.0, 9);
        assert_eq!(ds.decision_columns(), &[1, 2]);
        assert!(ds
            .rows()
            .iter()
            .any(|r| r.cells[0] == Cell::Sym("a".into())));
        assert!(ds
            .rows()
            .iter()
            .any(|r| r.cells[0] == Cell::Sym("b".into())));
    }
}
