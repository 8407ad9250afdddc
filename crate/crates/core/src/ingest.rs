//! Reading HMD `Mx_1x1` style mortality tables, open-age grouping, the log10
//! transform and the train/validation/test split.

use std::ops::RangeInclusive;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fts::{AgeGrid, FunctionalTimeSeries, ScaleTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Total,
}

impl Sex {
    fn column(self) -> usize {
        match self {
            Sex::Female => 2,
            Sex::Male => 3,
            Sex::Total => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Total => "total",
        }
    }
}

impl std::str::FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            "total" | "t" => Ok(Sex::Total),
            other => Err(Error::Parameter(format!("unknown sex '{other}'"))),
        }
    }
}

/// An age label; `open` marks the terminal "110+" style group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeLabel {
    pub age: u32,
    pub open: bool,
}

impl std::fmt::Display for AgeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.open {
            write!(f, "{}+", self.age)
        } else {
            write!(f, "{}", self.age)
        }
    }
}

/// Year × age table of central death rates for one sex. Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityTable {
    pub years: Vec<i32>,
    pub ages: Vec<AgeLabel>,
    pub rates: DMatrix<f64>,
    pub exposures: Option<DMatrix<f64>>,
    pub sex: Sex,
    /// Set when the open age group was pooled without exposures.
    pub unweighted_pool: bool,
}

impl MortalityTable {
    pub fn is_missing(&self, year_idx: usize, age_idx: usize) -> bool {
        self.rates[(year_idx, age_idx)].is_nan()
    }

    /// Attaches exposures read from a file of the same layout.
    pub fn with_exposures(mut self, exposures: &MortalityTable) -> Result<Self> {
        if exposures.years != self.years || exposures.ages != self.ages {
            return Err(Error::Structural(
                "exposure table does not match the rate table's years and ages".into(),
            ));
        }
        self.exposures = Some(exposures.rates.clone());
        Ok(self)
    }
}

/// Reads an `Mx_1x1` (or `Exposures_1x1`) file for one sex.
pub fn parse_mx_file(path: impl AsRef<Path>, sex: Sex) -> Result<MortalityTable> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_mx_str(&text, sex)
}

/// Parses `Year Age Female Male Total` rows. Lines before a `Year Age ...`
/// header are skipped; without a header every non-blank line is data.
pub fn parse_mx_str(text: &str, sex: Sex) -> Result<MortalityTable> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| {
            let mut tok = l.split_whitespace();
            matches!((tok.next(), tok.next()), (Some(y), Some(a)) if y.eq_ignore_ascii_case("year") && a.eq_ignore_ascii_case("age"))
        })
        .map_or(0, |i| i + 1);

    let mut years: Vec<i32> = Vec::new();
    let mut ages: Vec<AgeLabel> = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    let mut current_ages: Vec<AgeLabel> = Vec::new();

    for (idx, line) in lines.iter().enumerate().skip(start) {
        let lineno = idx + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 5 columns, found {}", tokens.len()),
            });
        }
        let year: i32 = tokens[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad year '{}'", tokens[0]),
        })?;
        let age = parse_age(tokens[1]).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("bad age '{}'", tokens[1]),
        })?;
        let raw = tokens[sex.column()];
        let value = if raw == "." {
            f64::NAN
        } else {
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad value '{raw}'"),
            })?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("rate must be a nonnegative number, got '{raw}'"),
                });
            }
            v
        };

        match years.last() {
            Some(&last) if last == year => {}
            Some(&last) => {
                if year != last + 1 {
                    return Err(Error::Structural(format!(
                        "years are not contiguous: {year} follows {last} (line {lineno})"
                    )));
                }
                close_year(&mut ages, &current_ages, last)?;
                current_ages.clear();
                years.push(year);
            }
            None => years.push(year),
        }
        if let Some(prev) = current_ages.last() {
            if age.age <= prev.age {
                return Err(Error::Structural(format!(
                    "ages not increasing within year {year} (line {lineno})"
                )));
            }
        }
        current_ages.push(age);
        cells.push(value);
    }
    let Some(&last) = years.last() else {
        return Err(Error::Parse {
            line: lines.len(),
            msg: "no data rows".into(),
        });
    };
    close_year(&mut ages, &current_ages, last)?;

    let rates = DMatrix::from_row_slice(years.len(), ages.len(), &cells);
    Ok(MortalityTable {
        years,
        ages,
        rates,
        exposures: None,
        sex,
        unweighted_pool: false,
    })
}

fn close_year(ages: &mut Vec<AgeLabel>, current: &[AgeLabel], year: i32) -> Result<()> {
    if ages.is_empty() {
        ages.extend_from_slice(current);
        Ok(())
    } else if ages.as_slice() != current {
        Err(Error::Structural(format!(
            "year {year} has a different set of ages from earlier years"
        )))
    } else {
        Ok(())
    }
}

fn parse_age(tok: &str) -> Option<AgeLabel> {
    let (digits, open) = match tok.strip_suffix('+') {
        Some(d) => (d, true),
        None => (tok, false),
    };
    digits.parse().ok().map(|age| AgeLabel { age, open })
}

/// Pools ages `>= cutoff` into a single open group.
///
/// With exposures the pooled rate is `Σ deaths / Σ exposure`, deaths being
/// rebuilt as `rate × exposure`. Without exposures the rates are averaged and
/// `unweighted_pool` is set.
pub fn group_open_age(table: &MortalityTable, cutoff: u32) -> Result<MortalityTable> {
    let first = table
        .ages
        .iter()
        .position(|a| a.age >= cutoff)
        .ok_or_else(|| {
            Error::Range(format!(
                "cutoff {cutoff} is beyond the oldest age {}",
                table.ages.last().map_or(0, |a| a.age)
            ))
        })?;
    if table.ages[first].age != cutoff && !table.ages[first].open {
        return Err(Error::Range(format!("no age {cutoff} in the table")));
    }
    let n = table.years.len();
    let keep = first + 1;
    let mut rates = DMatrix::from_element(n, keep, f64::NAN);
    rates
        .columns_mut(0, first)
        .copy_from(&table.rates.columns(0, first));
    let mut exposures = table.exposures.as_ref().map(|e| {
        let mut out = DMatrix::zeros(n, keep);
        out.columns_mut(0, first).copy_from(&e.columns(0, first));
        out
    });

    for t in 0..n {
        let mut pooled = f64::NAN;
        match &table.exposures {
            Some(e) => {
                let (mut deaths, mut exp) = (0.0, 0.0);
                for a in first..table.ages.len() {
                    let r = table.rates[(t, a)];
                    let x = e[(t, a)];
                    if r.is_finite() && x.is_finite() {
                        deaths += r * x;
                        exp += x;
                    }
                }
                if exp > 0.0 {
                    pooled = deaths / exp;
                }
                if let Some(out) = exposures.as_mut() {
                    out[(t, first)] = exp;
                }
            }
            None => {
                let vals: Vec<f64> = (first..table.ages.len())
                    .map(|a| table.rates[(t, a)])
                    .filter(|r| r.is_finite())
                    .collect();
                if !vals.is_empty() {
                    pooled = vals.iter().sum::<f64>() / vals.len() as f64;
                }
            }
        }
        rates[(t, first)] = pooled;
    }

    let mut ages = table.ages[..first].to_vec();
    ages.push(AgeLabel {
        age: cutoff,
        open: true,
    });
    Ok(MortalityTable {
        years: table.years.clone(),
        ages,
        rates,
        exposures,
        sex: table.sex,
        unweighted_pool: table.exposures.is_none(),
    })
}

/// Replaces zero and missing rates so the log transform is defined.
///
/// Missing cells are interpolated linearly in time at the same age from the
/// nearest observed years (constant extrapolation at the ends). Zero cells, and
/// missing cells with no observed value at that age, become half the smallest
/// positive rate of their year.
pub fn impute_rates(table: &MortalityTable) -> Result<DMatrix<f64>> {
    let (n, p) = table.rates.shape();
    let positive = |r: f64| r.is_finite() && r > 0.0;
    for t in 0..n {
        if !(0..p).any(|a| positive(table.rates[(t, a)])) {
            return Err(Error::Ingestion(format!(
                "year {} has no positive observed rate",
                table.years[t]
            )));
        }
    }
    let mut out = table.rates.clone();
    for a in 0..p {
        let observed: Vec<usize> = (0..n).filter(|&t| table.rates[(t, a)].is_finite()).collect();
        if observed.is_empty() {
            continue;
        }
        for t in 0..n {
            if table.rates[(t, a)].is_finite() {
                continue;
            }
            let after = observed.partition_point(|&s| s < t);
            out[(t, a)] = match (after.checked_sub(1).map(|i| observed[i]), observed.get(after)) {
                (Some(lo), Some(&hi)) => {
                    let f = (t - lo) as f64 / (hi - lo) as f64;
                    table.rates[(lo, a)] * (1.0 - f) + table.rates[(hi, a)] * f
                }
                (Some(lo), None) => table.rates[(lo, a)],
                (None, Some(&hi)) => table.rates[(hi, a)],
                (None, None) => unreachable!(),
            };
        }
    }
    for t in 0..n {
        let min_pos = (0..p)
            .map(|a| table.rates[(t, a)])
            .filter(|&r| positive(r))
            .fold(f64::INFINITY, f64::min);
        for a in 0..p {
            if !positive(out[(t, a)]) {
                out[(t, a)] = 0.5 * min_pos;
            }
        }
    }
    Ok(out)
}

/// `log10` of the imputed rates as a functional time series over integer ages.
pub fn to_log_fts(table: &MortalityTable) -> Result<FunctionalTimeSeries> {
    let rates = impute_rates(table)?;
    let grid = AgeGrid::new(table.ages.iter().map(|a| a.age as f64).collect())?;
    FunctionalTimeSeries::new(
        rates.map(f64::log10),
        grid,
        table.years.clone(),
        ScaleTag::Log10Rate,
    )
}

/// Training, validation and test blocks as 1-based inclusive ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub train: RangeInclusive<usize>,
    pub validation: RangeInclusive<usize>,
    pub test: RangeInclusive<usize>,
}

impl SampleSplit {
    pub fn n(&self) -> usize {
        *self.test.end()
    }

    /// Number of curves in the training block.
    pub fn train_len(&self) -> usize {
        *self.train.end()
    }

    pub fn validation_len(&self) -> usize {
        self.validation.clone().count()
    }

    pub fn test_len(&self) -> usize {
        self.test.clone().count()
    }

    /// Last index of the validation block (`m = n − test_len`).
    pub fn validation_end(&self) -> usize {
        *self.validation.end()
    }
}

/// `1..n−v−s`, then `v` validation years, then `s` test years.
pub fn make_split(n: usize, val_len: usize, test_len: usize) -> Result<SampleSplit> {
    if val_len == 0 || test_len == 0 {
        return Err(Error::Parameter(
            "validation and test lengths must be positive".into(),
        ));
    }
    if n <= val_len + test_len {
        return Err(Error::InsufficientData {
            needed: val_len + test_len + 1,
            got: n,
        });
    }
    let train_end = n - val_len - test_len;
    Ok(SampleSplit {
        train: 1..=train_end,
        validation: train_end + 1..=train_end + val_len,
        test: train_end + val_len + 1..=n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIXTURE: &str = "1751 0 0.2 0.25 0.22\n1751 1 0.05 0.06 0.055\n1751 2 0.03 . 0.03\n";

    #[test]
    fn parses_three_line_fixture() {
        let t = parse_mx_str(FIXTURE, Sex::Female).unwrap();
        assert_eq!(t.years, vec![1751]);
        assert_eq!(t.rates.shape(), (1, 3));
        assert_eq!(t.rates[(0, 1)], 0.05);
        let m = parse_mx_str(FIXTURE, Sex::Male).unwrap();
        assert!(m.is_missing(0, 2));
        assert!(!m.is_missing(0, 1));
    }

    #[test]
    fn parses_hmd_header_and_open_age() {
        let text = "Sweden, Death rates (period 1x1)\n\n  Year  Age  Female  Male  Total\n  1751  0  0.1  0.2  0.15\n  1751  110+  0.9  0.8  0.85\n  1752  0  0.1  0.2  0.15\n  1752  110+  0.9  0.8  0.85\n";
        let t = parse_mx_str(text, Sex::Total).unwrap();
        assert_eq!(t.years, vec![1751, 1752]);
        assert_eq!(t.ages[1], AgeLabel { age: 110, open: true });
    }

    #[test]
    fn structural_and_parse_errors() {
        let shuffled = "1752 0 0.1 0.1 0.1\n1751 0 0.1 0.1 0.1\n";
        assert!(matches!(parse_mx_str(shuffled, Sex::Female), Err(Error::Structural(_))));
        let gap = "1751 0 0.1 0.1 0.1\n1753 0 0.1 0.1 0.1\n";
        assert!(matches!(parse_mx_str(gap, Sex::Female), Err(Error::Structural(_))));
        let bad = "1751 0 0.1 0.1 0.1\n1752 0 abc 0.1 0.1\n";
        match parse_mx_str(bad, Sex::Female) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_mx_str("1751 0 0.1\n", Sex::Female), Err(Error::Parse { line: 1, .. })));
    }

    fn table(rates: &[f64], ages: &[u32], exposures: Option<&[f64]>) -> MortalityTable {
        MortalityTable {
            years: vec![2000],
            ages: ages.iter().map(|&age| AgeLabel { age, open: false }).collect(),
            rates: DMatrix::from_row_slice(1, rates.len(), rates),
            exposures: exposures.map(|e| DMatrix::from_row_slice(1, e.len(), e)),
            sex: Sex::Female,
            unweighted_pool: false,
        }
    }

    #[test]
    fn pooling_examples() {
        let t = table(&[0.1, 0.5, 0.7], &[94, 95, 96], Some(&[10.0, 100.0, 100.0]));
        let g = group_open_age(&t, 95).unwrap();
        assert_eq!(g.ages.len(), 2);
        assert!((g.rates[(0, 1)] - 0.6).abs() < 1e-15);
        assert_eq!(g.rates[(0, 0)], 0.1);
        assert!(!g.unweighted_pool);

        let single = group_open_age(&table(&[0.1, 0.5], &[94, 95], None), 95).unwrap();
        assert_eq!(single.rates[(0, 1)], 0.5);
        assert!(single.unweighted_pool);

        let zero = group_open_age(&table(&[0.1, 0.5, 0.7], &[94, 95, 96], Some(&[1.0, 0.0, 0.0])), 95)
            .unwrap();
        assert!(zero.rates[(0, 1)].is_nan());

        assert!(matches!(
            group_open_age(&table(&[0.1, 0.5], &[0, 1], None), 95),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn log_transform_and_imputation() {
        let t = table(&[0.01, 1.0, 0.0, 0.04], &[0, 1, 2, 3], None);
        let f = to_log_fts(&t).unwrap();
        let v = f.values();
        assert!((v[(0, 0)] + 2.0).abs() < 1e-15);
        assert_eq!(v[(0, 1)], 0.0);
        // scratch computation: smallest positive rate 0.01, halved
        assert!((v[(0, 2)] - 0.005f64.log10()).abs() < 1e-15);

        let empty = table(&[f64::NAN, 0.0], &[0, 1], None);
        match to_log_fts(&empty) {
            Err(Error::Ingestion(msg)) => assert!(msg.contains("2000")),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn missing_cells_interpolate_in_time() {
        let mut t = table(&[0.1, 0.2], &[0, 1], None);
        t.years = vec![2000, 2001, 2002];
        t.rates = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.1, f64::NAN, 0.1, 0.4]);
        let r = impute_rates(&t).unwrap();
        assert!((r[(1, 1)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn split_examples() {
        let s = make_split(272, 30, 30).unwrap();
        assert_eq!(s.train, 1..=212);
        assert_eq!(s.validation, 213..=242);
        assert_eq!(s.test, 243..=272);
        let s = make_split(61, 30, 30).unwrap();
        assert_eq!((s.train, s.validation, s.test), (1..=1, 2..=31, 32..=61));
        assert!(matches!(make_split(60, 30, 30), Err(Error::InsufficientData { .. })));
    }

    proptest! {
        #[test]
        fn split_partitions(n in 61usize..400) {
            let s = make_split(n, 30, 30).unwrap();
            let all: Vec<usize> = s.train.clone().chain(s.validation.clone()).chain(s.test.clone()).collect();
            prop_assert_eq!(all, (1..=n).collect::<Vec<_>>());
            prop_assert_eq!(s.validation_len(), 30);
            prop_assert_eq!(s.test_len(), 30);
        }

        #[test]
        fn pooling_keeps_young_ages(rates in proptest::collection::vec(0.001f64..1.0, 5)) {
            let t = table(&rates, &[93, 94, 95, 96, 97], Some(&[1.0; 5]));
            let g = group_open_age(&t, 95).unwrap();
            prop_assert_eq!(g.rates[(0, 0)].to_bits(), rates[0].to_bits());
            prop_assert_eq!(g.rates[(0, 1)].to_bits(), rates[1].to_bits());
        }

        #[test]
        fn log_roundtrip(rates in proptest::collection::vec(1e-6f64..1.0, 4)) {
            let t = table(&rates, &[0, 1, 2, 3], None);
            let f = to_log_fts(&t).unwrap();
            for (j, r) in rates.iter().enumerate() {
                prop_assert!((10f64.powf(f.values()[(0, j)]) - r).abs() <= 1e-12 * r.max(1e-300) * 10.0);
            }
        }
    }
}
