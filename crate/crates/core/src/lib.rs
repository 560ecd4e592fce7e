//! Small-budget model review for tabular data.
//!
//! * [`data`]: typed CSV tables, normalization, the row metric and distance
//!   to heaven.
//! * [`cluster`]: FASTMAP recursive bi-clustering.
//! * [`optimize`]: oracles with hard budgets, greedy and non-greedy search
//!   over the cluster tree, a random baseline and leaf medoids.
//! * [`explain`]: contrast rules between a desired and a current cluster.
//! * [`synth`] and [`stats`]: benchmark inputs and summaries.
//!
//! ```
//! use keys::cluster::{cluster, ClusterConfig};
//! use keys::optimize::{auto_budget, greedy_descend, Oracle, SearchConfig};
//! use keys::synth::{generate, SyntheticSpec};
//!
//! let ds = generate(&SyntheticSpec::sphere(1024, 4, 7));
//! let tree = cluster(&ds, &ClusterConfig::with_seed(7)).unwrap();
//! assert!(tree.leaves().all(|leaf| leaf.rows.len() <= 32));
//!
//! let mut oracle = Oracle::from_table(auto_budget(ds.len()));
//! let found = greedy_descend(&ds, &SearchConfig::with_seed(7), &mut oracle).unwrap();
//! assert!(found.evals <= 20);
//! ```

pub mod cluster;
pub mod data;
pub mod explain;
pub mod optimize;
pub mod stats;
pub mod synth;

pub use data::{Cell, Column, DataError, Dataset, RowId};

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/contrast.md")]
    mod contrast {}
    #[doc = include_str!("../../../book/src/prototypes.md")]
    mod prototypes {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
