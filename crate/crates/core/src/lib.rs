//! Weakly supervised instance annotation with expectation kernel density
//! estimation (eKDE).
//!
//! Bags of feature vectors carry only bag-level labels. Each positive-bag
//! instance gets a soft label `w` (the probability that it is an object);
//! class densities are kernel estimates weighted by those soft labels, and
//! the soft labels are refreshed from the resulting posterior until they
//! stop changing. The final decision is the sign of a similarity-weighted
//! vote of every instance for its own (soft) label.
//!
//! Also included: the negative-mining baselines NegMin, CRANE and negative
//! voting, neighbour-based score refinement, the bag-overlap evaluation
//! protocol and a seeded synthetic data generator.

pub mod baselines;
pub mod data;
pub mod ekde;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
mod par;
pub mod refine;
pub mod synth;

pub use data::{
    l2_normalize, load_dataset, parse_dataset, Bag, Dataset, Instance, InstanceKey, Label,
};
pub use ekde::{
    run_ekde, run_ekde_from, EkdeConfig, EkdeRun, ScoreTable, ScoredInstance, SoftLabels,
};
pub use error::{Error, ErrorKind, Result};
pub use kernels::{
    gaussian_kernel, kernel_matrix, select_bandwidths, BandwidthObjective, KernelConfig,
    DEFAULT_BANDWIDTH_GRID,
};
pub use par::current_num_threads;
