//! Parsers for the two whitespace-column cell-record formats and the
//! exponential growth-rate fit.
//!
//! Both formats hold one cell per line, numeric fields only, with `-1`
//! as the not-available sentinel. The 11-column format carries explicit
//! cell labels; the 9-column comb format omits them (labels are
//! reconstructed from the generation and pole type). Trailing-dot
//! numerals like `103.` are accepted.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lineage::{CellLabel, CombCell, PoleType};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: both consecutive-pole counts positive ({old} old, {new} new)")]
    AmbiguousPole { line: usize, old: u32, new: u32 },
    #[error("invalid JSON dataset: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which published table layout a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    /// 11-column full-tree format (explicit labels).
    Stewart,
    /// 9-column comb format (generation + pole type only).
    Wang,
}

/// Cell identity: an explicit binary-tree label, or a comb-spine
/// position when the label would overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelRef {
    Explicit(CellLabel),
    Comb(CombCell),
}

impl LabelRef {
    pub fn generation(&self) -> u32 {
        match self {
            LabelRef::Explicit(l) => l.generation(),
            LabelRef::Comb(c) => c.generation,
        }
    }

    /// Pole type from the label itself, when determined.
    pub fn pole(&self) -> Option<PoleType> {
        match self {
            LabelRef::Explicit(l) => l.pole_type().ok(),
            LabelRef::Comb(c) => Some(c.pole),
        }
    }

    /// Identity of the mother cell, when it exists.
    pub fn mother(&self) -> Option<LabelRef> {
        match self {
            LabelRef::Explicit(l) => l.mother().ok().map(LabelRef::Explicit),
            LabelRef::Comb(c) => {
                if c.generation == 0 {
                    None
                } else {
                    // comb mothers sit on the old-pole spine
                    Some(LabelRef::Comb(CombCell {
                        generation: c.generation - 1,
                        pole: PoleType::Old,
                    }))
                }
            }
        }
    }
}

/// One observed cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub tree_id: i64,
    pub label: LabelRef,
    pub generation: u32,
    pub mother_generation: Option<u32>,
    /// Growth rate in 1/minute; `None` when the file said `-1`.
    pub growth_rate: Option<f64>,
    pub mother_growth_rate: Option<f64>,
    pub consec_old: Option<u32>,
    pub consec_new: Option<u32>,
    pub mother_consec_old: Option<u32>,
    pub mother_consec_new: Option<u32>,
    /// Set by outlier marking; the raw value stays in `growth_rate`.
    #[serde(default)]
    pub outlier_flag: bool,
    /// Set when the mother cell was marked as an outlier.
    #[serde(default)]
    pub mother_outlier_flag: bool,
}

impl CellRecord {
    /// Pole type from the consecutive-pole columns (exactly one is
    /// positive for a typed cell), falling back to the label.
    pub fn pole(&self) -> Option<PoleType> {
        match (self.consec_old, self.consec_new) {
            (Some(o), _) if o > 0 => Some(PoleType::Old),
            (_, Some(n)) if n > 0 => Some(PoleType::New),
            _ => self.label.pole(),
        }
    }

    /// Effective growth rate: `None` when missing or outlier-marked.
    pub fn rate(&self) -> Option<f64> {
        if self.outlier_flag {
            None
        } else {
            self.growth_rate
        }
    }

    /// Effective mother growth rate, honoring the mother's outlier mark.
    pub fn mother_rate(&self) -> Option<f64> {
        if self.mother_outlier_flag {
            None
        } else {
            self.mother_growth_rate
        }
    }
}

/// All records of one genealogical tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineageTree {
    pub tree_id: i64,
    pub records: Vec<CellRecord>,
}

impl LineageTree {
    pub fn max_generation(&self) -> u32 {
        self.records.iter().map(|r| r.generation).max().unwrap_or(0)
    }

    /// Index of records by identity, for mother lookups.
    pub fn index(&self) -> HashMap<LabelRef, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.label, i))
            .collect()
    }

    /// Effective rate of the comb cell at (generation, pole), if present.
    pub fn comb_rate(&self, generation: u32, pole: PoleType) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.generation == generation && r.pole() == Some(pole))
            .and_then(|r| r.rate())
    }

    /// Non-missing effective rates, in record order.
    pub fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().filter_map(|r| r.rate())
    }
}

/// A parsed dataset: trees sorted by id, plus integrity warnings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub source: SourceFormat,
    pub trees: Vec<LineageTree>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn n_records(&self) -> usize {
        self.trees.iter().map(|t| t.records.len()).sum()
    }

    pub fn all_records(&self) -> impl Iterator<Item = &CellRecord> {
        self.trees.iter().flat_map(|t| t.records.iter())
    }

    pub fn to_json(&self) -> Result<String, IngestError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Dataset, IngestError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Render back to the whitespace-column text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tree in &self.trees {
            for r in &tree.records {
                let mut fields: Vec<String> = Vec::new();
                fields.push(format!("{}.", r.tree_id));
                if self.source == SourceFormat::Stewart {
                    let label = match r.label {
                        LabelRef::Explicit(l) => l.value().to_string(),
                        LabelRef::Comb(c) => c
                            .label()
                            .map(|l| l.value().to_string())
                            .unwrap_or_else(|_| "-1".into()),
                    };
                    fields.push(format!("{label}."));
                    let mother = match r.label.mother() {
                        Some(LabelRef::Explicit(l)) => l.value().to_string(),
                        _ => "-1".into(),
                    };
                    fields.push(format!("{mother}."));
                }
                fields.push(format!("{}.", r.generation));
                fields.push(opt_int(r.mother_generation));
                fields.push(opt_rate(r.growth_rate));
                fields.push(opt_rate(r.mother_growth_rate));
                fields.push(opt_int(r.consec_old));
                fields.push(opt_int(r.consec_new));
                fields.push(opt_int(r.mother_consec_old));
                fields.push(opt_int(r.mother_consec_new));
                let _ = writeln!(out, "{}", fields.join("  "));
            }
        }
        out
    }
}

fn opt_int(v: Option<u32>) -> String {
    match v {
        Some(x) => format!("{x}."),
        None => "-1.".into(),
    }
}

fn opt_rate(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.7}"),
        None => "-1.".into(),
    }
}

// Published record counts, used only for integrity warnings.
const STEWART_COUNTS: (usize, usize) = (22732, 101);
const WANG_COUNTS: (usize, usize) = (45255, 224);

fn parse_field(tok: &str, line: usize) -> Result<f64, IngestError> {
    tok.parse::<f64>().map_err(|_| IngestError::Parse {
        line,
        msg: format!("not a number: {tok:?}"),
    })
}

/// -1 sentinel to missing, for real-valued fields.
fn rate_field(v: f64) -> Option<f64> {
    if v == -1.0 {
        None
    } else {
        Some(v)
    }
}

fn int_field(v: f64, line: usize, what: &str) -> Result<Option<u32>, IngestError> {
    if v == -1.0 {
        return Ok(None);
    }
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(IngestError::Parse {
            line,
            msg: format!("{what} must be a non-negative integer, got {v}"),
        });
    }
    Ok(Some(v as u32))
}

fn read_lines(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn collect_trees(
    source: SourceFormat,
    records: Vec<CellRecord>,
    warnings: Vec<String>,
) -> Dataset {
    let mut by_tree: HashMap<i64, Vec<CellRecord>> = HashMap::new();
    for r in records {
        by_tree.entry(r.tree_id).or_default().push(r);
    }
    let mut trees: Vec<LineageTree> = by_tree
        .into_iter()
        .map(|(tree_id, records)| LineageTree { tree_id, records })
        .collect();
    trees.sort_by_key(|t| t.tree_id);
    let mut ds = Dataset {
        source,
        trees,
        warnings,
    };
    let (exp_records, exp_trees) = match source {
        SourceFormat::Stewart => STEWART_COUNTS,
        SourceFormat::Wang => WANG_COUNTS,
    };
    if ds.n_records() != exp_records || ds.trees.len() != exp_trees {
        ds.warnings.push(format!(
            "record/tree counts ({}, {}) differ from the published dataset ({}, {})",
            ds.n_records(),
            ds.trees.len(),
            exp_records,
            exp_trees
        ));
    }
    ds
}

/// Parse the 11-column full-tree format.
pub fn parse_stewart(path: &Path) -> Result<Dataset, IngestError> {
    parse_stewart_str(&read_lines(path)?)
}

pub fn parse_stewart_str(text: &str) -> Result<Dataset, IngestError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.len() != 11 {
            return Err(IngestError::Parse {
                line,
                msg: format!("expected 11 fields, got {}", toks.len()),
            });
        }
        let vals: Vec<f64> = toks
            .iter()
            .map(|t| parse_field(t, line))
            .collect::<Result<_, _>>()?;
        let tree_id = vals[0] as i64;
        let label_raw = int_field(vals[1], line, "cell number")?.ok_or(IngestError::Parse {
            line,
            msg: "cell number missing".into(),
        })?;
        let label = CellLabel::new(label_raw as u128).map_err(|e| IngestError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let mother_num = int_field(vals[2], line, "mother cell number")?;
        if let Some(m) = mother_num {
            if label_raw >= 2 && m as u128 != label.value() / 2 {
                warnings.push(format!(
                    "line {line}: mother label {m} inconsistent with cell {label_raw} (expected {})",
                    label.value() / 2
                ));
            }
        }
        let generation = int_field(vals[3], line, "generation")?.unwrap_or(label.generation());
        let mother_generation = int_field(vals[4], line, "mother generation")?;
        if let Some(mg) = mother_generation {
            if mg + 1 != generation {
                warnings.push(format!(
                    "line {line}: mother generation {mg} != generation {generation} - 1"
                ));
            }
        }
        records.push(CellRecord {
            tree_id,
            label: LabelRef::Explicit(label),
            generation,
            mother_generation,
            growth_rate: rate_field(vals[5]),
            mother_growth_rate: rate_field(vals[6]),
            consec_old: int_field(vals[7], line, "consec old")?,
            consec_new: int_field(vals[8], line, "consec new")?,
            mother_consec_old: int_field(vals[9], line, "mother consec old")?,
            mother_consec_new: int_field(vals[10], line, "mother consec new")?,
            outlier_flag: false,
            mother_outlier_flag: false,
        });
    }
    Ok(collect_trees(SourceFormat::Stewart, records, warnings))
}

/// Parse the 9-column comb format (no label columns; the identity is
/// reconstructed from the generation and the pole type implied by the
/// consecutive-pole counts).
pub fn parse_wang(path: &Path) -> Result<Dataset, IngestError> {
    parse_wang_str(&read_lines(path)?)
}

pub fn parse_wang_str(text: &str) -> Result<Dataset, IngestError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.len() != 9 {
            return Err(IngestError::Parse {
                line,
                msg: format!("expected 9 fields, got {}", toks.len()),
            });
        }
        let vals: Vec<f64> = toks
            .iter()
            .map(|t| parse_field(t, line))
            .collect::<Result<_, _>>()?;
        let tree_id = vals[0] as i64;
        let generation = int_field(vals[1], line, "generation")?.ok_or(IngestError::Parse {
            line,
            msg: "generation missing".into(),
        })?;
        let mother_generation = int_field(vals[2], line, "mother generation")?;
        let consec_old = int_field(vals[5], line, "consec old")?;
        let consec_new = int_field(vals[6], line, "consec new")?;
        let pole = match (consec_old.unwrap_or(0), consec_new.unwrap_or(0)) {
            (o, n) if o > 0 && n > 0 => {
                return Err(IngestError::AmbiguousPole {
                    line,
                    old: o,
                    new: n,
                })
            }
            (o, _) if o > 0 => PoleType::Old,
            (_, n) if n > 0 => PoleType::New,
            _ => {
                warnings.push(format!(
                    "line {line}: no positive consecutive-pole count, assuming new pole"
                ));
                PoleType::New
            }
        };
        if pole == PoleType::Old {
            if let Some(o) = consec_old {
                if o < generation {
                    warnings.push(format!(
                        "line {line}: old pole cell at generation {generation} \
                         cumulated only {o} old poles"
                    ));
                }
            }
        }
        records.push(CellRecord {
            tree_id,
            label: LabelRef::Comb(CombCell { generation, pole }),
            generation,
            mother_generation,
            growth_rate: rate_field(vals[3]),
            mother_growth_rate: rate_field(vals[4]),
            consec_old,
            consec_new,
            mother_consec_old: int_field(vals[7], line, "mother consec old")?,
            mother_consec_new: int_field(vals[8], line, "mother consec new")?,
            outlier_flag: false,
            mother_outlier_flag: false,
        });
    }
    Ok(collect_trees(SourceFormat::Wang, records, warnings))
}

/// Raw length time series over one cell's life.
#[derive(Debug, Clone)]
pub struct LengthSeries {
    pub times: Vec<f64>,
    pub lengths: Vec<f64>,
    pub complete_life: bool,
}

impl LengthSeries {
    pub fn new(times: Vec<f64>, lengths: Vec<f64>, complete_life: bool) -> Result<Self, IngestError> {
        if times.len() != lengths.len() {
            return Err(IngestError::Parse {
                line: 0,
                msg: "times and lengths differ in length".into(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(IngestError::Parse {
                line: 0,
                msg: "times must be strictly increasing".into(),
            });
        }
        Ok(LengthSeries {
            times,
            lengths,
            complete_life,
        })
    }
}

/// Growth rate by log-linear least squares: the slope of `log(length)`
/// against time. `None` when the life is incomplete, any length is
/// nonpositive, or there are fewer than 3 points.
pub fn fit_growth_rate(series: &LengthSeries) -> Option<f64> {
    if !series.complete_life || series.times.len() < 3 {
        return None;
    }
    if series.lengths.iter().any(|&l| l <= 0.0) {
        return None;
    }
    let n = series.times.len() as f64;
    let logs: Vec<f64> = series.lengths.iter().map(|l| l.ln()).collect();
    let tbar = series.times.iter().sum::<f64>() / n;
    let ybar = logs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (t, y) in series.times.iter().zip(&logs) {
        sxx += (t - tbar) * (t - tbar);
        sxy += (t - tbar) * (y - ybar);
    }
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Parse the raw-length CSV (`cell_id,time_minutes,length[,complete]`).
/// An optional header line is skipped. Returns one series per cell id,
/// in first-appearance order.
pub fn parse_lengths_str(text: &str) -> Result<Vec<(String, LengthSeries)>, IngestError> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (Vec<f64>, Vec<f64>, bool)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if toks.len() != 3 && toks.len() != 4 {
            return Err(IngestError::Parse {
                line,
                msg: format!("expected 3 or 4 comma-separated fields, got {}", toks.len()),
            });
        }
        if line == 1 && toks[1].parse::<f64>().is_err() {
            continue; // header
        }
        let id = toks[0].to_string();
        let time = parse_field(toks[1], line)?;
        let length = parse_field(toks[2], line)?;
        let complete = match toks.get(3) {
            Some(&"0") => false,
            _ => true,
        };
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new(), true)
        });
        entry.0.push(time);
        entry.1.push(length);
        entry.2 &= complete;
    }
    order
        .into_iter()
        .map(|id| {
            let (times, lengths, complete) = rows.remove(&id).unwrap();
            LengthSeries::new(times, lengths, complete).map(|s| (id, s))
        })
        .collect()
}

pub fn parse_lengths(path: &Path) -> Result<Vec<(String, LengthSeries)>, IngestError> {
    parse_lengths_str(&read_lines(path)?)
}
