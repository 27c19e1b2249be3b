//! Edit-distance scoring of decoded label sequences, with an optional
//! many-to-one symbol folding applied to both sides before comparison.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::ctc::{Alphabet, BLANK};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    fn add(&mut self, other: EditCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
    }
}

/// Levenshtein alignment of `hyp` against `reference` with unit costs.
pub fn edit_counts<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == cost[(i - 1) * w + j - 1] + usize::from(!same) {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == cost[(i - 1) * w + j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> usize {
    edit_counts(reference, hyp).distance()
}

/// Folds alphabet symbols onto scoring symbols. Each line is `<symbol> <target>`;
/// a line with only `<symbol>` drops that symbol from both sides. Symbols not
/// listed score as themselves.
#[derive(Clone, Debug, Default)]
pub struct SymbolMap {
    map: HashMap<usize, Option<String>>,
}

impl SymbolMap {
    pub fn parse(text: &str, alphabet: &Alphabet) -> Result<Self> {
        let mut map = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (src, dst) = match fields.as_slice() {
                [] => continue,
                [src] => (*src, None),
                [src, dst] => (*src, Some(dst.to_string())),
                _ => {
                    return Err(Error::Format(format!(
                        "mapping line {}: expected `<symbol> [<target>]`",
                        lineno + 1
                    )))
                }
            };
            let idx = alphabet
                .index_of(src)
                .filter(|&i| i != BLANK)
                .ok_or_else(|| {
                    Error::Format(format!(
                        "mapping line {}: unknown symbol {src:?}",
                        lineno + 1
                    ))
                })?;
            if map.insert(idx, dst).is_some() {
                return Err(Error::Format(format!("symbol {src:?} mapped twice")));
            }
        }
        Ok(SymbolMap { map })
    }

    pub fn load(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, alphabet)
    }

    pub fn apply(&self, labels: &[usize], alphabet: &Alphabet) -> Vec<String> {
        labels
            .iter()
            .filter_map(|&l| match self.map.get(&l) {
                Some(target) => target.clone(),
                None => alphabet.symbol(l).map(String::from),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtteranceScore {
    pub id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub counts: EditCounts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceScore>,
    pub totals: EditCounts,
    pub reference_length: usize,
    /// Total edit distance over total reference length.
    pub error_rate: f64,
}

impl EvalReport {
    /// Scores `(id, reference, hypothesis)` triples in the given order.
    pub fn score<'a, I>(items: I, alphabet: &Alphabet, map: Option<&SymbolMap>) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a [usize], &'a [usize])>,
    {
        let identity = SymbolMap::default();
        let map = map.unwrap_or(&identity);
        let mut report = EvalReport::default();
        for (id, reference, hyp) in items {
            let reference = map.apply(reference, alphabet);
            let hypothesis = map.apply(hyp, alphabet);
            let counts = edit_counts(&reference, &hypothesis);
            report.totals.add(counts);
            report.reference_length += reference.len();
            report.utterances.push(UtteranceScore {
                id: id.to_string(),
                reference,
                hypothesis,
                counts,
            });
        }
        report.error_rate = if report.reference_length == 0 {
            if report.totals.distance() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            report.totals.distance() as f64 / report.reference_length as f64
        };
        report
    }
}
