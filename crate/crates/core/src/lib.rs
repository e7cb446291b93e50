//! Exact subgroup counting, bias analysis over (bias group, source) pairs,
//! a controllable spurious-correlation benchmark, and a small network
//! trainer with ERM, GroupDRO, resampling, last-layer retraining and
//! two-stage synthetic-then-real pipelines.

pub mod augment;
pub mod composition;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod table;
pub mod train;

pub use error::{Error, Result};
pub use table::{count_table, Cardinalities, Cell, Condition, Dataset, LabeledExample, Prob, Source, SubgroupTable};
