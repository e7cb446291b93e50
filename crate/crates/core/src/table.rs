//! Labeled examples, exact subgroup count tables and rational probability
//! queries over them.
//!
//! Every probability here is a ratio of two integer counts. Equality and
//! ordering compare by cross-multiplication in 128-bit arithmetic, so bias
//! predicates never depend on floating-point rounding.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether an example came from the real data collection or a generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::Real, Source::Synthetic];

    pub fn index(self) -> usize {
        match self {
            Source::Real => 0,
            Source::Synthetic => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" | "r" => Ok(Source::Real),
            "synthetic" | "syn" | "s" => Ok(Source::Synthetic),
            other => Err(Error::Parse(format!("unknown source {other:?}"))),
        }
    }
}

/// Declared number of classes and bias groups. The source axis always has
/// two values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cardinalities {
    pub classes: usize,
    pub bias_groups: usize,
}

impl Cardinalities {
    pub const BINARY: Cardinalities = Cardinalities {
        classes: 2,
        bias_groups: 2,
    };

    pub fn new(classes: usize, bias_groups: usize) -> Result<Self> {
        if classes == 0 || bias_groups == 0 {
            return Err(Error::InvalidConfig(format!(
                "cardinalities must be positive, got |Y|={classes}, |B|={bias_groups}"
            )));
        }
        Ok(Self {
            classes,
            bias_groups,
        })
    }

    /// Number of (y, b) subgroups.
    pub fn subgroups(&self) -> usize {
        self.classes * self.bias_groups
    }

    /// Number of (y, b, g) cells.
    pub fn cells(&self) -> usize {
        self.subgroups() * 2
    }

    pub fn check_class(&self, y: usize) -> Result<()> {
        check_index("class_y", y, self.classes)
    }

    pub fn check_bias(&self, b: usize) -> Result<()> {
        check_index("bias_b", b, self.bias_groups)
    }

    /// Row-major (y, b) index.
    pub fn subgroup_index(&self, y: usize, b: usize) -> usize {
        y * self.bias_groups + b
    }

    pub fn subgroup_of(&self, index: usize) -> (usize, usize) {
        (index / self.bias_groups, index % self.bias_groups)
    }

    pub fn subgroups_iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.classes).flat_map(move |y| (0..self.bias_groups).map(move |b| (y, b)))
    }
}

impl fmt::Display for Cardinalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|Y|={}, |B|={}", self.classes, self.bias_groups)
    }
}

fn check_index(what: &'static str, index: usize, cardinality: usize) -> Result<()> {
    if index < cardinality {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange {
            what,
            index,
            cardinality,
        })
    }
}

/// An exact probability `num / den` with `den > 0`, not necessarily reduced.
#[derive(Clone, Copy, Debug)]
pub struct Prob {
    num: u64,
    den: u64,
}

impl Prob {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den > 0).then_some(Self { num, den })
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn reduced(&self) -> Self {
        let g = gcd(self.num, self.den);
        Self {
            num: self.num / g,
            den: self.den / g,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn cross(&self, other: &Self) -> (u128, u128) {
        (
            self.num as u128 * other.den as u128,
            other.num as u128 * self.den as u128,
        )
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

impl PartialEq for Prob {
    fn eq(&self, other: &Self) -> bool {
        let (l, r) = self.cross(other);
        l == r
    }
}

impl Eq for Prob {}

impl PartialOrd for Prob {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Prob {
    fn cmp(&self, other: &Self) -> Ordering {
        let (l, r) = self.cross(other);
        l.cmp(&r)
    }
}

impl fmt::Display for Prob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Prob {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.reduced().to_string())
    }
}

impl<'de> Deserialize<'de> for Prob {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let (n, d) = s
            .split_once('/')
            .ok_or_else(|| serde::de::Error::custom(format!("expected n/d, got {s:?}")))?;
        let num = n.trim().parse().map_err(serde::de::Error::custom)?;
        let den = d.trim().parse().map_err(serde::de::Error::custom)?;
        Prob::new(num, den).ok_or_else(|| serde::de::Error::custom("zero denominator"))
    }
}

/// One (y, b, g) cell of a subgroup table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub y: usize,
    pub b: usize,
    pub g: Source,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(y={}, b={}, g={})", self.y, self.b, self.g)
    }
}

/// The conditioning event of a probability query. `None` on an axis means
/// the axis is marginalized out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Condition {
    pub bias: Option<usize>,
    pub source: Option<Source>,
}

impl Condition {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn bias(b: usize) -> Self {
        Self {
            bias: Some(b),
            source: None,
        }
    }

    pub fn bias_source(b: usize, g: Source) -> Self {
        Self {
            bias: Some(b),
            source: Some(g),
        }
    }

    fn matches(&self, b: usize, g: Source) -> bool {
        self.bias.is_none_or(|cb| cb == b) && self.source.is_none_or(|cg| cg == g)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.bias, self.source) {
            (None, None) => f.write_str("(none)"),
            (Some(b), None) => write!(f, "B={b}"),
            (None, Some(g)) => write!(f, "G={g}"),
            (Some(b), Some(g)) => write!(f, "B={b}, G={g}"),
        }
    }
}

/// Exact integer counts indexed by (y, b, g).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubgroupTable {
    card: Cardinalities,
    counts: Vec<u64>,
}

impl SubgroupTable {
    pub fn zeros(card: Cardinalities) -> Self {
        Self {
            card,
            counts: vec![0; card.cells()],
        }
    }

    /// Builds a table from `(cell, count)` pairs; unspecified cells are zero.
    /// Repeated cells accumulate.
    pub fn from_cells<I>(card: Cardinalities, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Cell, u64)>,
    {
        let mut table = Self::zeros(card);
        for (cell, count) in cells {
            let i = table.checked_index(cell.y, cell.b, cell.g)?;
            table.counts[i] += count;
        }
        Ok(table)
    }

    /// Real-only table from a row-major `|Y| x |B|` slice.
    pub fn from_real(card: Cardinalities, counts: &[u64]) -> Result<Self> {
        Self::from_sources(card, counts, &vec![0; card.subgroups()])
    }

    /// Table from row-major `|Y| x |B|` real and synthetic count slices.
    pub fn from_sources(card: Cardinalities, real: &[u64], synthetic: &[u64]) -> Result<Self> {
        for part in [real, synthetic] {
            if part.len() != card.subgroups() {
                return Err(Error::CardinalityMismatch {
                    expected: format!("{} subgroup counts", card.subgroups()),
                    found: format!("{}", part.len()),
                });
            }
        }
        let mut table = Self::zeros(card);
        for (y, b) in card.subgroups_iter() {
            let s = card.subgroup_index(y, b);
            let (ir, is) = (table.index(y, b, Source::Real), table.index(y, b, Source::Synthetic));
            table.counts[ir] = real[s];
            table.counts[is] = synthetic[s];
        }
        Ok(table)
    }

    pub fn cardinalities(&self) -> Cardinalities {
        self.card
    }

    fn index(&self, y: usize, b: usize, g: Source) -> usize {
        (y * self.card.bias_groups + b) * 2 + g.index()
    }

    fn checked_index(&self, y: usize, b: usize, g: Source) -> Result<usize> {
        self.card.check_class(y)?;
        self.card.check_bias(b)?;
        Ok(self.index(y, b, g))
    }

    /// Count of one cell. Panics on out-of-range indices.
    pub fn count(&self, y: usize, b: usize, g: Source) -> u64 {
        assert!(y < self.card.classes && b < self.card.bias_groups);
        self.counts[self.index(y, b, g)]
    }

    /// Returns a copy with one cell replaced.
    pub fn with_count(&self, y: usize, b: usize, g: Source, count: u64) -> Result<Self> {
        let i = self.checked_index(y, b, g)?;
        let mut next = self.clone();
        next.counts[i] = count;
        Ok(next)
    }

    /// Returns a copy with `extra` row-major synthetic counts added per (y, b).
    pub fn with_synthetic(&self, extra: &[u64]) -> Result<Self> {
        if extra.len() != self.card.subgroups() {
            return Err(Error::CardinalityMismatch {
                expected: format!("{} subgroup counts", self.card.subgroups()),
                found: format!("{}", extra.len()),
            });
        }
        let mut next = self.clone();
        for (s, add) in extra.iter().enumerate() {
            let (y, b) = self.card.subgroup_of(s);
            let i = next.index(y, b, Source::Synthetic);
            next.counts[i] += add;
        }
        Ok(next)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum over g of count(y, b, g).
    pub fn marginal(&self, y: usize, b: usize) -> u64 {
        self.count(y, b, Source::Real) + self.count(y, b, Source::Synthetic)
    }

    pub fn class_total(&self, y: usize) -> u64 {
        (0..self.card.bias_groups).map(|b| self.marginal(y, b)).sum()
    }

    pub fn source_total(&self, g: Source) -> u64 {
        self.card
            .subgroups_iter()
            .map(|(y, b)| self.count(y, b, g))
            .sum()
    }

    /// Row-major (y, b) counts for one source.
    pub fn source_counts(&self, g: Source) -> Vec<u64> {
        self.card
            .subgroups_iter()
            .map(|(y, b)| self.count(y, b, g))
            .collect()
    }

    /// Row-major (y, b) counts summed over sources.
    pub fn marginal_counts(&self) -> Vec<u64> {
        self.card
            .subgroups_iter()
            .map(|(y, b)| self.marginal(y, b))
            .collect()
    }

    pub fn is_real_only(&self) -> bool {
        self.source_total(Source::Synthetic) == 0
    }

    /// Count of examples satisfying the condition, optionally restricted to
    /// class `y`.
    pub fn support(&self, y: Option<usize>, cond: &Condition) -> u64 {
        let mut total = 0;
        for (cy, b) in self.card.subgroups_iter() {
            if y.is_some_and(|y| y != cy) {
                continue;
            }
            for g in Source::ALL {
                if cond.matches(b, g) {
                    total += self.count(cy, b, g);
                }
            }
        }
        total
    }

    /// Exact P(Y = y | cond). An empty condition gives the marginal P(Y = y).
    pub fn conditional_prob(&self, y: usize, cond: &Condition) -> Result<Prob> {
        self.card.check_class(y)?;
        if let Some(b) = cond.bias {
            self.card.check_bias(b)?;
        }
        if self.total() == 0 {
            return Err(Error::EmptyTable);
        }
        let den = self.support(None, cond);
        let num = self.support(Some(y), cond);
        Prob::new(num, den).ok_or_else(|| Error::ZeroSupport(cond.to_string()))
    }

    /// Exact P(B = b | Y = y), pooled over sources.
    pub fn bias_given_class(&self, b: usize, y: usize) -> Result<Prob> {
        self.card.check_class(y)?;
        self.card.check_bias(b)?;
        Prob::new(self.marginal(y, b), self.class_total(y))
            .ok_or_else(|| Error::ZeroSupport(format!("Y={y}")))
    }

    /// Folds the source axis into the bias axis: bias group `b` with source
    /// `g` becomes bias group `2b + g` of an all-real table. Probability
    /// statements about (B, G) on `self` are statements about B on the result.
    pub fn fold_source_into_bias(&self) -> SubgroupTable {
        let card = Cardinalities {
            classes: self.card.classes,
            bias_groups: self.card.bias_groups * 2,
        };
        let mut out = SubgroupTable::zeros(card);
        for (y, b) in self.card.subgroups_iter() {
            for g in Source::ALL {
                let i = out.index(y, 2 * b + g.index(), Source::Real);
                out.counts[i] = self.count(y, b, g);
            }
        }
        out
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, u64)> + '_ {
        self.card.subgroups_iter().flat_map(move |(y, b)| {
            Source::ALL
                .into_iter()
                .map(move |g| (Cell { y, b, g }, self.count(y, b, g)))
        })
    }

    /// Writes `y,b,g,count` rows, one per cell including zeros.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["y", "b", "g", "count"])?;
        for (cell, count) in self.cells() {
            w.write_record([
                cell.y.to_string(),
                cell.b.to_string(),
                cell.g.to_string(),
                count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `y,b,g,count` rows. Without declared cardinalities they are
    /// taken from the largest indices present, so zero rows declare cells.
    pub fn read_csv<R: Read>(reader: R, card: Option<Cardinalities>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            y: usize,
            b: usize,
            g: String,
            count: u64,
        }
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        let missing: Vec<&str> = ["y", "b", "g", "count"]
            .into_iter()
            .filter(|h| !headers.iter().any(|x| x == *h))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Parse(format!("missing columns: {}", missing.join(", "))));
        }
        let mut cells = Vec::new();
        for row in r.deserialize::<Row>() {
            let row = row?;
            cells.push((
                Cell {
                    y: row.y,
                    b: row.b,
                    g: row.g.parse()?,
                },
                row.count,
            ));
        }
        let card = match card {
            Some(c) => c,
            None => {
                if cells.is_empty() {
                    return Err(Error::Parse("table csv has no rows".into()));
                }
                Cardinalities::new(
                    cells.iter().map(|(c, _)| c.y).max().unwrap_or(0) + 1,
                    cells.iter().map(|(c, _)| c.b).max().unwrap_or(0) + 1,
                )?
            }
        };
        Self::from_cells(card, cells)
    }
}

/// A feature vector with its class, bias group and source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub class_y: usize,
    pub bias_b: usize,
    pub source_g: Source,
}

impl LabeledExample {
    pub fn cell(&self) -> Cell {
        Cell {
            y: self.class_y,
            b: self.bias_b,
            g: self.source_g,
        }
    }
}

/// A sequence of examples of one feature dimension with declared
/// cardinalities and a cached subgroup table.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    card: Cardinalities,
    dim: usize,
    examples: Vec<LabeledExample>,
    table: SubgroupTable,
}

impl Dataset {
    pub fn new(card: Cardinalities, dim: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        let mut table = SubgroupTable::zeros(card);
        for e in &examples {
            if e.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.features.len(),
                });
            }
            let i = table.checked_index(e.class_y, e.bias_b, e.source_g)?;
            table.counts[i] += 1;
        }
        Ok(Self {
            card,
            dim,
            examples,
            table,
        })
    }

    pub fn empty(card: Cardinalities, dim: usize) -> Self {
        Self {
            card,
            dim,
            examples: Vec::new(),
            table: SubgroupTable::zeros(card),
        }
    }

    pub fn cardinalities(&self) -> Cardinalities {
        self.card
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The cached table; may be all zeros. See [`count_table`] for the
    /// checked query.
    pub fn table(&self) -> &SubgroupTable {
        &self.table
    }

    /// Concatenation of two datasets with matching shape.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.card != other.card {
            return Err(Error::CardinalityMismatch {
                expected: self.card.to_string(),
                found: other.card.to_string(),
            });
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        let mut table = self.table.clone();
        for (a, b) in table.counts.iter_mut().zip(&other.table.counts) {
            *a += b;
        }
        let out = Dataset {
            card: self.card,
            dim: self.dim,
            examples,
            table,
        };
        debug_assert_eq!(out.table, recount(&out));
        Ok(out)
    }

    /// Examples satisfying `keep`, in their original order.
    pub fn filter<F: Fn(&LabeledExample) -> bool>(&self, keep: F) -> Dataset {
        let examples: Vec<_> = self.examples.iter().filter(|e| keep(e)).cloned().collect();
        Dataset::new(self.card, self.dim, examples).expect("subset of a valid dataset")
    }

    pub fn only_source(&self, g: Source) -> Dataset {
        self.filter(|e| e.source_g == g)
    }

    /// Sources present, in `Source::ALL` order.
    pub fn sources(&self) -> Vec<Source> {
        Source::ALL
            .into_iter()
            .filter(|g| self.table.source_total(*g) > 0)
            .collect()
    }

    /// Writes `x0..x{d-1},y,b,g` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        header.extend(["y", "b", "g"].map(String::from));
        w.write_record(&header)?;
        for e in &self.examples {
            let mut rec: Vec<String> = e.features.iter().map(|v| format!("{v:?}")).collect();
            rec.push(e.class_y.to_string());
            rec.push(e.bias_b.to_string());
            rec.push(e.source_g.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Dataset::write_csv`].
    pub fn read_csv<R: Read>(reader: R, card: Cardinalities) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let dim = headers.iter().filter(|h| h.starts_with('x')).count();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse(format!("missing column {name}")))
        };
        let (cy, cb, cg) = (col("y")?, col("b")?, col("g")?);
        let xcols: Vec<usize> = (0..dim).map(|i| col(&format!("x{i}"))).collect::<Result<_>>()?;
        let mut examples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Parse("short record".into()))
            };
            let features = xcols
                .iter()
                .map(|&i| parse(i)?.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            examples.push(LabeledExample {
                features,
                class_y: parse(cy)?.parse().map_err(|e: std::num::ParseIntError| Error::Parse(e.to_string()))?,
                bias_b: parse(cb)?.parse().map_err(|e: std::num::ParseIntError| Error::Parse(e.to_string()))?,
                source_g: parse(cg)?.parse()?,
            });
        }
        Dataset::new(card, dim, examples)
    }
}

fn recount(d: &Dataset) -> SubgroupTable {
    SubgroupTable::from_cells(d.card, d.examples.iter().map(|e| (e.cell(), 1)))
        .expect("examples validated on construction")
}

/// Exact per-cell counts of a non-empty dataset.
pub fn count_table(dataset: &Dataset) -> Result<SubgroupTable> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(recount(dataset))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(y: usize, b: usize, g: Source) -> LabeledExample {
        LabeledExample {
            features: vec![0.0],
            class_y: y,
            bias_b: b,
            source_g: g,
        }
    }

    fn biased() -> SubgroupTable {
        SubgroupTable::from_real(Cardinalities::BINARY, &[90, 10, 10, 90]).unwrap()
    }

    #[test]
    fn count_table_one_per_cell() {
        let examples = Cardinalities::BINARY
            .subgroups_iter()
            .map(|(y, b)| ex(y, b, Source::Real))
            .collect();
        let d = Dataset::new(Cardinalities::BINARY, 1, examples).unwrap();
        let t = count_table(&d).unwrap();
        assert_eq!(t.source_counts(Source::Real), vec![1, 1, 1, 1]);
        assert_eq!(t.source_counts(Source::Synthetic), vec![0, 0, 0, 0]);
        assert_eq!(t.total(), 4);
    }

    #[test]
    fn count_table_tallies() {
        let mut examples = vec![ex(0, 0, Source::Real); 90];
        examples.extend(vec![ex(0, 1, Source::Real); 10]);
        let d = Dataset::new(Cardinalities::BINARY, 1, examples).unwrap();
        let t = count_table(&d).unwrap();
        assert_eq!(t.count(0, 0, Source::Real), 90);
        assert_eq!(t.count(0, 1, Source::Real), 10);
        assert_eq!(t.total(), 100);
        assert_eq!(&t, d.table());
    }

    #[test]
    fn count_table_empty_errors() {
        let d = Dataset::empty(Cardinalities::BINARY, 3);
        assert!(matches!(count_table(&d), Err(Error::EmptyDataset)));
    }

    #[test]
    fn conditional_prob_examples() {
        let t = biased();
        assert_eq!(
            t.conditional_prob(0, &Condition::bias(0)).unwrap(),
            Prob::new(90, 100).unwrap()
        );
        let p = t.conditional_prob(0, &Condition::none()).unwrap();
        assert_eq!(p, Prob::new(1, 2).unwrap());
        assert_eq!((p.numer(), p.denom()), (100, 200));
        assert!(matches!(
            t.conditional_prob(0, &Condition::bias(2)),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_support_differs_from_zero_probability() {
        let t = SubgroupTable::from_real(Cardinalities::BINARY, &[5, 0, 0, 5]).unwrap();
        let zero = t.conditional_prob(1, &Condition::bias(0)).unwrap();
        assert_eq!(zero, Prob::new(0, 1).unwrap());
        assert!(matches!(
            t.conditional_prob(0, &Condition::bias_source(0, Source::Synthetic)),
            Err(Error::ZeroSupport(_))
        ));
        let empty = SubgroupTable::zeros(Cardinalities::BINARY);
        assert!(matches!(
            empty.conditional_prob(0, &Condition::none()),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn prob_compares_exactly() {
        let a = Prob::new(1, 3).unwrap();
        let b = Prob::new(333_333_333_333, 999_999_999_999).unwrap();
        let c = Prob::new(333_333_333_334, 1_000_000_000_000).unwrap();
        assert_eq!(a, b);
        assert!(c > a);
        assert_eq!(b.reduced().to_string(), "1/3");
    }

    #[test]
    fn fold_source_into_bias_preserves_counts() {
        let t = biased().with_synthetic(&[0, 80, 80, 0]).unwrap();
        let f = t.fold_source_into_bias();
        assert_eq!(f.cardinalities().bias_groups, 4);
        assert!(f.is_real_only());
        assert_eq!(f.count(0, 3, Source::Real), 80);
        assert_eq!(f.count(0, 2, Source::Real), 10);
        assert_eq!(f.total(), t.total());
    }

    #[test]
    fn table_csv_round_trip() {
        let t = biased().with_synthetic(&[0, 80, 80, 0]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,b,g,count\n"));
        assert!(text.contains("0,1,synthetic,80"));
        let back = SubgroupTable::read_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn table_csv_missing_column() {
        let err = SubgroupTable::read_csv("y,b,count\n0,0,1\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("g"));
    }

    #[test]
    fn dataset_rejects_bad_labels_and_dims() {
        let bad = vec![ex(2, 0, Source::Real)];
        assert!(Dataset::new(Cardinalities::BINARY, 1, bad).is_err());
        let mut wrong_dim = ex(0, 0, Source::Real);
        wrong_dim.features = vec![1.0, 2.0];
        assert!(matches!(
            Dataset::new(Cardinalities::BINARY, 1, vec![wrong_dim]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let mut a = ex(1, 0, Source::Synthetic);
        a.features = vec![0.1, -2.5e-7];
        let mut b = ex(0, 1, Source::Real);
        b.features = vec![3.0, 4.0];
        let d = Dataset::new(Cardinalities::BINARY, 2, vec![a, b]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x0,x1,y,b,g\n"));
        let back = Dataset::read_csv(buf.as_slice(), Cardinalities::BINARY).unwrap();
        assert_eq!(back, d);
    }
}
