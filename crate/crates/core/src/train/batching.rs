//! Training groups and per-epoch batch construction.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::Rng;
use crate::error::{Error, Result};
use crate::table::{Dataset, Source};

/// Which labels define a training group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// (y, b) subgroups.
    ClassBias,
    /// (y, b, g) cells, for corpora that mix real and synthetic data.
    ClassBiasSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub y: usize,
    pub b: usize,
    pub g: Option<Source>,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.g {
            Some(g) => write!(f, "(y={}, b={}, g={})", self.y, self.b, g),
            None => write!(f, "(y={}, b={})", self.y, self.b),
        }
    }
}

/// Example indices per training group.
///
/// Under [`Grouping::ClassBias`] every (y, b) subgroup is declared. Under
/// [`Grouping::ClassBiasSource`] every real (y, b) cell is declared when the
/// corpus holds real data, and synthetic cells are declared where the corpus
/// holds synthetic examples; augmentation plans only place synthetic data in
/// some cells, so absent synthetic cells are not groups.
#[derive(Clone, Debug)]
pub struct GroupIndex {
    keys: Vec<GroupKey>,
    members: Vec<Vec<usize>>,
    of_example: Vec<usize>,
}

impl GroupIndex {
    pub fn build(dataset: &Dataset, grouping: Grouping) -> Self {
        let card = dataset.cardinalities();
        let table = dataset.table();
        let mut keys = Vec::new();
        match grouping {
            Grouping::ClassBias => {
                for (y, b) in card.subgroups_iter() {
                    keys.push(GroupKey { y, b, g: None });
                }
            }
            Grouping::ClassBiasSource => {
                let has_real = table.source_total(Source::Real) > 0;
                for (y, b) in card.subgroups_iter() {
                    for g in Source::ALL {
                        let declared = match g {
                            Source::Real => has_real,
                            Source::Synthetic => table.count(y, b, g) > 0,
                        };
                        if declared {
                            keys.push(GroupKey { y, b, g: Some(g) });
                        }
                    }
                }
            }
        }
        let mut members = vec![Vec::new(); keys.len()];
        let mut of_example = Vec::with_capacity(dataset.len());
        for (i, e) in dataset.examples().iter().enumerate() {
            let key = GroupKey {
                y: e.class_y,
                b: e.bias_b,
                g: match grouping {
                    Grouping::ClassBias => None,
                    Grouping::ClassBiasSource => Some(e.source_g),
                },
            };
            let gi = keys.binary_search(&key).expect("every example belongs to a declared group");
            members[gi].push(i);
            of_example.push(gi);
        }
        Self {
            keys,
            members,
            of_example,
        }
    }

    pub fn keys(&self) -> &[GroupKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn group_of(&self, example: usize) -> usize {
        self.of_example[example]
    }

    pub fn empty_groups(&self) -> Vec<GroupKey> {
        self.keys
            .iter()
            .zip(&self.members)
            .filter(|(_, m)| m.is_empty())
            .map(|(k, _)| *k)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchRule {
    /// Shuffle without replacement each epoch.
    Shuffle,
    /// Every slot picks a group uniformly, then an example of that group
    /// uniformly with replacement.
    Resample,
}

/// One epoch of batches as example indices. Under [`BatchRule::Resample`]
/// the epoch has `ceil(n / batch_size)` batches.
pub fn make_batches(
    dataset: &Dataset,
    index: &GroupIndex,
    rule: BatchRule,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let n = dataset.len();
    match rule {
        BatchRule::Shuffle => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
        }
        BatchRule::Resample => {
            if let Some(empty) = index.empty_groups().first() {
                return Err(Error::EmptySubgroup(empty.to_string()));
            }
            if batch_size < index.len() {
                return Err(Error::InvalidConfig(format!(
                    "resampling needs batch_size >= {} groups, got {batch_size}",
                    index.len()
                )));
            }
            let batches = n.div_ceil(batch_size);
            Ok((0..batches)
                .map(|_| {
                    (0..batch_size)
                        .map(|_| {
                            let g = rng.random_range(0..index.len());
                            let m = index.members(g);
                            m[rng.random_range(0..m.len())]
                        })
                        .collect()
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::rng_stream;
    use crate::table::{Cardinalities, LabeledExample};

    fn dataset(counts: &[(usize, usize, Source, usize)]) -> Dataset {
        let mut ex = Vec::new();
        for &(y, b, g, n) in counts {
            for _ in 0..n {
                ex.push(LabeledExample {
                    features: vec![0.0],
                    class_y: y,
                    bias_b: b,
                    source_g: g,
                });
            }
        }
        Dataset::new(Cardinalities::BINARY, 1, ex).unwrap()
    }

    #[test]
    fn shuffle_covers_every_example_once() {
        let d = dataset(&[(0, 0, Source::Real, 37), (1, 1, Source::Real, 20)]);
        let idx = GroupIndex::build(&d, Grouping::ClassBias);
        let batches = make_batches(&d, &idx, BatchRule::Shuffle, 8, &mut rng_stream(1, 1)).unwrap();
        assert_eq!(batches.len(), 8);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort();
        assert_eq!(seen, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn resampling_empty_subgroup_errors() {
        let d = dataset(&[(0, 0, Source::Real, 5), (0, 1, Source::Real, 5), (1, 0, Source::Real, 5)]);
        let idx = GroupIndex::build(&d, Grouping::ClassBias);
        let err = make_batches(&d, &idx, BatchRule::Resample, 8, &mut rng_stream(1, 1)).unwrap_err();
        assert!(err.to_string().contains("(y=1, b=1)"), "{err}");
    }

    #[test]
    fn resampling_batch_smaller_than_groups_errors() {
        let d = dataset(&[(0, 0, Source::Real, 5), (0, 1, Source::Real, 5), (1, 0, Source::Real, 5), (1, 1, Source::Real, 5)]);
        let idx = GroupIndex::build(&d, Grouping::ClassBias);
        assert!(make_batches(&d, &idx, BatchRule::Resample, 3, &mut rng_stream(1, 1)).is_err());
    }

    #[test]
    fn source_grouping_declares_only_populated_synthetic_cells() {
        let d = dataset(&[
            (0, 0, Source::Real, 9),
            (0, 1, Source::Real, 1),
            (1, 0, Source::Real, 1),
            (1, 1, Source::Real, 9),
            (0, 1, Source::Synthetic, 8),
            (1, 0, Source::Synthetic, 8),
        ]);
        let idx = GroupIndex::build(&d, Grouping::ClassBiasSource);
        assert_eq!(idx.len(), 6);
        assert!(idx.empty_groups().is_empty());
        let k = idx.keys()[idx.group_of(d.len() - 1)];
        assert_eq!(k, GroupKey { y: 1, b: 0, g: Some(Source::Synthetic) });
    }
}
