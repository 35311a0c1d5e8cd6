//! Correlation tables P(a,b|x,y) and their JSON / CSV encodings.
//!
//! JSON: `{"scenario": {...}, "source": "exact" | {"sampled": {"counts": [x][y][a][b]}},
//! "probs": [x][y][a][b]}`. CSV: header `x,y,a,b,p` (plus `count` for sampled
//! tables), one row per cell in x, y, a, b order. Both encodings print floats in
//! shortest round-trip form, so decoding reproduces every bit.

use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BellScenario {
    pub settings_a: usize,
    pub settings_b: usize,
    pub outcomes: usize,
}

impl BellScenario {
    pub fn new(settings_a: usize, settings_b: usize, outcomes: usize) -> Result<Self> {
        if settings_a == 0 || settings_b == 0 || outcomes == 0 {
            return Err(Error::InvalidTable("scenario sizes must be positive".into()));
        }
        Ok(Self {
            settings_a,
            settings_b,
            outcomes,
        })
    }

    /// [{2,2},{2,2}].
    pub fn chsh() -> Self {
        Self {
            settings_a: 2,
            settings_b: 2,
            outcomes: 2,
        }
    }

    /// [{3,d},{4,d}].
    pub fn qudit(d: usize) -> Self {
        Self {
            settings_a: 3,
            settings_b: 4,
            outcomes: d,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.settings_a * self.settings_b * self.outcomes * self.outcomes
    }

    pub fn index(&self, x: usize, y: usize, a: usize, b: usize) -> usize {
        debug_assert!(x < self.settings_a && y < self.settings_b);
        debug_assert!(a < self.outcomes && b < self.outcomes);
        ((x * self.settings_b + y) * self.outcomes + a) * self.outcomes + b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Exact,
    /// Raw counts in the same layout as the probabilities.
    Sampled { counts: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    scenario: BellScenario,
    probs: Vec<f64>,
    source: Source,
}

impl CorrelationTable {
    /// Validates shape, nonnegativity and per-setting normalization.
    pub fn new(scenario: BellScenario, probs: Vec<f64>, source: Source) -> Result<Self> {
        if probs.len() != scenario.cell_count() {
            return Err(Error::InvalidTable(format!(
                "{} probabilities for a scenario with {} cells",
                probs.len(),
                scenario.cell_count()
            )));
        }
        if let Source::Sampled { counts } = &source {
            if counts.len() != probs.len() {
                return Err(Error::InvalidTable("counts and probabilities differ in length".into()));
            }
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidTable(format!("invalid probability {bad}")));
        }
        let table = Self {
            scenario,
            probs,
            source,
        };
        for x in 0..scenario.settings_a {
            for y in 0..scenario.settings_b {
                let s = table.setting_sum(x, y);
                if (s - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidTable(format!(
                        "P(·,·|{x},{y}) sums to {s}"
                    )));
                }
            }
        }
        Ok(table)
    }

    /// Frequencies from raw counts; every setting pair needs at least one count.
    pub fn from_counts(scenario: BellScenario, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != scenario.cell_count() {
            return Err(Error::InvalidTable(format!(
                "{} counts for a scenario with {} cells",
                counts.len(),
                scenario.cell_count()
            )));
        }
        let block = scenario.outcomes * scenario.outcomes;
        let mut probs = Vec::with_capacity(counts.len());
        for chunk in counts.chunks(block) {
            let total: u64 = chunk.iter().sum();
            if total == 0 {
                return Err(Error::InvalidTable("setting pair without counts".into()));
            }
            probs.extend(chunk.iter().map(|&c| c as f64 / total as f64));
        }
        Self::new(scenario, probs, Source::Sampled { counts })
    }

    pub fn scenario(&self) -> BellScenario {
        self.scenario
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.source, Source::Exact)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// P(a, b | x, y).
    pub fn p(&self, a: usize, b: usize, x: usize, y: usize) -> f64 {
        self.probs[self.scenario.index(x, y, a, b)]
    }

    pub fn counts(&self) -> Option<&[u64]> {
        match &self.source {
            Source::Exact => None,
            Source::Sampled { counts } => Some(counts),
        }
    }

    pub fn count(&self, a: usize, b: usize, x: usize, y: usize) -> Option<u64> {
        self.counts().map(|c| c[self.scenario.index(x, y, a, b)])
    }

    /// Number of samples behind setting pair (x, y), if sampled.
    pub fn setting_total(&self, x: usize, y: usize) -> Option<u64> {
        let d = self.scenario.outcomes;
        self.counts().map(|_| {
            (0..d)
                .flat_map(|a| (0..d).map(move |b| (a, b)))
                .map(|(a, b)| self.count(a, b, x, y).unwrap_or(0))
                .sum()
        })
    }

    /// Smallest per-setting sample count, if sampled.
    pub fn min_setting_total(&self) -> Option<u64> {
        let s = self.scenario;
        (0..s.settings_a)
            .flat_map(|x| (0..s.settings_b).map(move |y| (x, y)))
            .filter_map(|(x, y)| self.setting_total(x, y))
            .min()
    }

    fn setting_sum(&self, x: usize, y: usize) -> f64 {
        let d = self.scenario.outcomes;
        let start = self.scenario.index(x, y, 0, 0);
        self.probs[start..start + d * d].iter().sum()
    }

    /// Applies an outcome permutation (`new = perm[old]`) to one setting of one party.
    pub fn relabel_outcomes(&self, alice: bool, setting: usize, perm: &[usize]) -> Result<Self> {
        let s = self.scenario;
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..s.outcomes).collect::<Vec<_>>() {
            return Err(Error::InvalidTable(format!("{perm:?} is not a permutation")));
        }
        let mut probs = self.probs.clone();
        let mut counts = self.counts().map(|c| c.to_vec());
        for x in 0..s.settings_a {
            for y in 0..s.settings_b {
                if (alice && x != setting) || (!alice && y != setting) {
                    continue;
                }
                for a in 0..s.outcomes {
                    for b in 0..s.outcomes {
                        let (na, nb) = if alice { (perm[a], b) } else { (a, perm[b]) };
                        let src = s.index(x, y, a, b);
                        let dst = s.index(x, y, na, nb);
                        probs[dst] = self.probs[src];
                        if let (Some(c), Some(orig)) = (counts.as_mut(), self.counts()) {
                            c[dst] = orig[src];
                        }
                    }
                }
            }
        }
        let source = match counts {
            None => Source::Exact,
            Some(counts) => Source::Sampled { counts },
        };
        Self::new(s, probs, source)
    }

    fn nested<T: Copy>(&self, flat: &[T]) -> Vec<Vec<Vec<Vec<T>>>> {
        let s = self.scenario;
        (0..s.settings_a)
            .map(|x| {
                (0..s.settings_b)
                    .map(|y| {
                        (0..s.outcomes)
                            .map(|a| (0..s.outcomes).map(|b| flat[s.index(x, y, a, b)]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let sampled = self.counts().is_some();
        if sampled {
            w.write_record(["x", "y", "a", "b", "p", "count"])?;
        } else {
            w.write_record(["x", "y", "a", "b", "p"])?;
        }
        let s = self.scenario;
        for x in 0..s.settings_a {
            for y in 0..s.settings_b {
                for a in 0..s.outcomes {
                    for b in 0..s.outcomes {
                        let mut row = vec![
                            x.to_string(),
                            y.to_string(),
                            a.to_string(),
                            b.to_string(),
                            format!("{:?}", self.p(a, b, x, y)),
                        ];
                        if let Some(c) = self.count(a, b, x, y) {
                            row.push(c.to_string());
                        }
                        w.write_record(&row)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidTable(e.to_string()))
    }

    /// Reads the CSV layout written by [`CorrelationTable::write_csv`]; the
    /// scenario is inferred from the largest indices.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let sampled = match headers.iter().collect::<Vec<_>>().as_slice() {
            ["x", "y", "a", "b", "p"] => false,
            ["x", "y", "a", "b", "p", "count"] => true,
            other => {
                return Err(Error::InvalidTable(format!("unexpected CSV header {other:?}")));
            }
        };
        let parse_idx = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidTable(format!("bad index {s:?}: {e}")))
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let x = parse_idx(&rec[0])?;
            let y = parse_idx(&rec[1])?;
            let a = parse_idx(&rec[2])?;
            let b = parse_idx(&rec[3])?;
            let p: f64 = rec[4]
                .trim()
                .parse()
                .map_err(|e| Error::InvalidTable(format!("bad probability {:?}: {e}", &rec[4])))?;
            let c = if sampled {
                Some(
                    rec[5]
                        .trim()
                        .parse::<u64>()
                        .map_err(|e| Error::InvalidTable(format!("bad count {:?}: {e}", &rec[5])))?,
                )
            } else {
                None
            };
            rows.push((x, y, a, b, p, c));
        }
        if rows.is_empty() {
            return Err(Error::InvalidTable("empty CSV table".into()));
        }
        let max = |f: fn(&(usize, usize, usize, usize, f64, Option<u64>)) -> usize| {
            rows.iter().map(f).max().unwrap_or(0) + 1
        };
        let outcomes = max(|r| r.2).max(max(|r| r.3));
        let scenario = BellScenario::new(max(|r| r.0), max(|r| r.1), outcomes)?;
        if rows.len() != scenario.cell_count() {
            return Err(Error::InvalidTable(format!(
                "{} rows for a scenario with {} cells",
                rows.len(),
                scenario.cell_count()
            )));
        }
        let mut probs = vec![f64::NAN; scenario.cell_count()];
        let mut counts = vec![0u64; scenario.cell_count()];
        for (x, y, a, b, p, c) in rows {
            let i = scenario.index(x, y, a, b);
            if !probs[i].is_nan() {
                return Err(Error::InvalidTable(format!("duplicate cell ({x},{y},{a},{b})")));
            }
            probs[i] = p;
            counts[i] = c.unwrap_or(0);
        }
        let source = if sampled {
            Source::Sampled { counts }
        } else {
            Source::Exact
        };
        Self::new(scenario, probs, source)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SourceRepr {
    Exact,
    Sampled { counts: Vec<Vec<Vec<Vec<u64>>>> },
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    scenario: BellScenario,
    source: SourceRepr,
    probs: Vec<Vec<Vec<Vec<f64>>>>,
}

impl Serialize for CorrelationTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let source = match &self.source {
            Source::Exact => SourceRepr::Exact,
            Source::Sampled { counts } => SourceRepr::Sampled {
                counts: self.nested(counts),
            },
        };
        TableRepr {
            scenario: self.scenario,
            source,
            probs: self.nested(&self.probs),
        }
        .serialize(serializer)
    }
}

fn flatten<T: Copy>(nested: Vec<Vec<Vec<Vec<T>>>>, s: BellScenario) -> Option<Vec<T>> {
    if nested.len() != s.settings_a {
        return None;
    }
    let mut flat = Vec::with_capacity(s.cell_count());
    for xs in nested {
        if xs.len() != s.settings_b {
            return None;
        }
        for ys in xs {
            if ys.len() != s.outcomes {
                return None;
            }
            for row in ys {
                if row.len() != s.outcomes {
                    return None;
                }
                flat.extend(row);
            }
        }
    }
    Some(flat)
}

impl<'de> Deserialize<'de> for CorrelationTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = TableRepr::deserialize(deserializer)?;
        let s = BellScenario::new(
            repr.scenario.settings_a,
            repr.scenario.settings_b,
            repr.scenario.outcomes,
        )
        .map_err(D::Error::custom)?;
        let probs = flatten(repr.probs, s).ok_or_else(|| D::Error::custom("probs shape mismatch"))?;
        let source = match repr.source {
            SourceRepr::Exact => Source::Exact,
            SourceRepr::Sampled { counts } => Source::Sampled {
                counts: flatten(counts, s).ok_or_else(|| D::Error::custom("counts shape mismatch"))?,
            },
        };
        CorrelationTable::new(s, probs, source).map_err(D::Error::custom)
    }
}
