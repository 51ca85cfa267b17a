//! Closed-form data distributions and the synthetic datasets drawn from them.

mod datasets;
mod mixture;

pub use datasets::{gen_dirac, gen_grid25, gen_swiss_roll, DatasetKind, SyntheticDataset, SWISS_ROLL_SCALE};
pub use mixture::{grid25_means, optimal_unconditional_score, GaussianMixture};
