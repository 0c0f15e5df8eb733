//! CSV ingestion and output, the stratified split, and a small logistic base
//! scorer.

mod base;
mod split;

pub use base::{train_base, BaseModel, FeatureTable, TrainOptions};
pub use split::{split_indices, Fractions};

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numfmt::f17;
use crate::problem::{Decision, ScoredSample};

/// Group numbering used by a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupBase {
    #[default]
    One,
    Zero,
}

impl GroupBase {
    pub fn offset(self) -> usize {
        match self {
            GroupBase::One => 1,
            GroupBase::Zero => 0,
        }
    }

    /// Internal (0-based) index of a file group value.
    fn to_index(self, raw: &str) -> std::result::Result<usize, String> {
        let g: i64 = raw
            .trim()
            .parse()
            .map_err(|_| format!("group '{raw}' is not an integer"))?;
        let i = g - self.offset() as i64;
        if i < 0 {
            return Err(format!(
                "group {g} is below the first group index {}",
                self.offset()
            ));
        }
        Ok(i as usize)
    }
}

/// Rows of `id,group,score[,label]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub ids: Vec<String>,
    pub samples: Vec<ScoredSample>,
    /// Number of groups, `max group + 1`.
    pub k: usize,
}

impl ScoreFile {
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.k];
        self.samples.iter().for_each(|s| n[s.group] += 1);
        n
    }

    /// `(group, label)` pairs; fails on the first unlabeled row.
    pub fn labels(&self, path: &str) -> Result<Vec<(usize, u8)>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.label.map(|y| (s.group, y)).ok_or_else(|| Error::Parse {
                    path: path.to_string(),
                    row: i + 2,
                    reason: "label is missing".into(),
                })
            })
            .collect()
    }
}

fn parse_err(path: &str, row: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        row,
        reason: reason.into(),
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Parses a `0`/`1`/empty label cell.
fn parse_label(raw: &str) -> std::result::Result<Option<u8>, String> {
    match raw.trim() {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(format!("label '{other}' is not 0 or 1")),
    }
}

/// Reads a score file. Rows are numbered as in a text editor (the header is
/// row 1). Groups must cover a contiguous range from the first index.
pub fn read_scores_from<R: Read>(reader: R, path: &str, base: GroupBase) -> Result<ScoreFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let need = |name: &str| {
        column(&headers, name).ok_or_else(|| parse_err(path, 1, format!("missing column '{name}'")))
    };
    let (gi, si) = (need("group")?, need("score")?);
    let (ii, li) = (column(&headers, "id"), column(&headers, "label"));
    let mut out = ScoreFile {
        ids: Vec::new(),
        samples: Vec::new(),
        k: 0,
    };
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| parse_err(path, row, e.to_string()))?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let group = base
            .to_index(get(gi))
            .map_err(|e| parse_err(path, row, e))?;
        let score: f64 = get(si)
            .parse()
            .map_err(|_| parse_err(path, row, format!("score '{}' is not a number", get(si))))?;
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(parse_err(
                path,
                row,
                format!("score {score} is outside [0, 1]"),
            ));
        }
        let label = match li {
            Some(i) => parse_label(get(i)).map_err(|e| parse_err(path, row, e))?,
            None => None,
        };
        out.ids
            .push(ii.map_or_else(|| (row - 1).to_string(), |i| get(i).to_string()));
        out.samples.push(ScoredSample {
            group,
            score,
            noise: None,
            label,
        });
        out.k = out.k.max(group + 1);
    }
    let seen: BTreeSet<usize> = out.samples.iter().map(|s| s.group).collect();
    if let Some(missing) = (0..out.k).find(|g| !seen.contains(g)) {
        return Err(parse_err(
            path,
            1,
            format!(
                "groups are not contiguous: group {} has no rows",
                missing + base.offset()
            ),
        ));
    }
    Ok(out)
}

pub fn read_scores(path: &Path, base: GroupBase) -> Result<ScoreFile> {
    let f = std::fs::File::open(path)?;
    read_scores_from(
        std::io::BufReader::new(f),
        &path.display().to_string(),
        base,
    )
}

/// Writes `id,group,score,label`; the label cell is empty when unknown.
pub fn write_scores<W: Write>(
    out: W,
    ids: &[String],
    samples: &[ScoredSample],
    base: GroupBase,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "group", "score", "label"])?;
    for (id, s) in ids.iter().zip(samples) {
        let label = s.label.map(|y| y.to_string()).unwrap_or_default();
        w.write_record([
            id.as_str(),
            &(s.group + base.offset()).to_string(),
            &f17(s.score),
            &label,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `id,group,decision` with decisions `0`, `1` or `r`.
pub fn write_decisions<W: Write>(
    out: W,
    ids: &[String],
    groups: &[usize],
    decisions: &[Decision],
    base: GroupBase,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "group", "decision"])?;
    for ((id, g), d) in ids.iter().zip(groups).zip(decisions) {
        w.write_record([id.as_str(), &(g + base.offset()).to_string(), d.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionFile {
    pub ids: Vec<String>,
    pub groups: Vec<usize>,
    pub decisions: Vec<Decision>,
}

pub fn read_decisions_from<R: Read>(
    reader: R,
    path: &str,
    base: GroupBase,
) -> Result<DecisionFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let need = |name: &str| {
        column(&headers, name).ok_or_else(|| parse_err(path, 1, format!("missing column '{name}'")))
    };
    let (ii, gi, di) = (need("id")?, need("group")?, need("decision")?);
    let mut out = DecisionFile {
        ids: Vec::new(),
        groups: Vec::new(),
        decisions: Vec::new(),
    };
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| parse_err(path, row, e.to_string()))?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        out.groups.push(
            base.to_index(get(gi))
                .map_err(|e| parse_err(path, row, e))?,
        );
        let d = Decision::parse(get(di)).ok_or_else(|| {
            parse_err(
                path,
                row,
                format!("decision '{}' is not 0, 1 or r", get(di)),
            )
        })?;
        out.decisions.push(d);
        out.ids.push(get(ii).to_string());
    }
    Ok(out)
}

pub fn read_decisions(path: &Path, base: GroupBase) -> Result<DecisionFile> {
    let f = std::fs::File::open(path)?;
    read_decisions_from(
        std::io::BufReader::new(f),
        &path.display().to_string(),
        base,
    )
}
