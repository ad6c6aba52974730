//! Dataset persistence, trajectory-level splits and normalization.

mod dataset;
mod normalizer;
mod split;

pub use dataset::{load_dataset, save_dataset, Dataset, MAGIC, VERSION};
pub use normalizer::{fit_normalizer, Normalizer, STD_FLOOR};
pub use split::{split, SplitIndex};
