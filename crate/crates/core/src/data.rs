//! Tabular data: CSV ingestion, preprocessing recipes and their inverse.
//!
//! Recipe files are line oriented:
//!
//! ```text
//! filter RAD < 24        # ops: < <= > >= == !=
//! subsample 300 seed 1   # keep n rows chosen uniformly without replacement
//! log INDUS
//! center all             # or: center COL
//! standardize all        # center and divide by the sample SD
//! ```
//!
//! Whatever the line order, filters run first, then subsampling, then log
//! transforms, then centering/scaling.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRecord {
    pub log: bool,
    /// Subtracted after any log transform.
    pub offset: f64,
    /// Divides after centering; 1 unless standardized.
    pub scale: f64,
}

impl Default for ColumnRecord {
    fn default() -> Self {
        ColumnRecord {
            log: false,
            offset: 0.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
    pub records: Vec<ColumnRecord>,
    /// Filter directives applied, as text.
    pub filters: Vec<String>,
    /// Rows dropped at load time for missing values.
    pub dropped_incomplete: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                found: bad.len(),
            });
        }
        let records = vec![ColumnRecord::default(); names.len()];
        Ok(Dataset {
            names,
            rows,
            records,
            filters: Vec::new(),
            dropped_incomplete: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Maps a preprocessed row back to raw units.
    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.records)
            .map(|(v, r)| {
                let u = v * r.scale + r.offset;
                if r.log {
                    u.exp()
                } else {
                    u
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.names)?;
        for r in &self.rows {
            out.write_record(r.iter().map(|v| format!("{v}")))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Writes the per-column transform (`column,log,offset,scale`).
    pub fn save_transform(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["column", "log", "offset", "scale"])?;
        for (name, r) in self.names.iter().zip(&self.records) {
            w.write_record([name.clone(), r.log.to_string(), r.offset.to_string(), r.scale.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// A row-less dataset carrying a transform written by [`Dataset::save_transform`],
    /// usable as the `fitted` argument of [`apply_transform`].
    pub fn load_transform(path: &Path) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut names = Vec::new();
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |k: usize| Error::BadCell {
                row: i + 1,
                column: ["column", "log", "offset", "scale"][k].to_string(),
                value: rec.get(k).unwrap_or("").to_string(),
            };
            names.push(rec.get(0).ok_or_else(|| bad(0))?.to_string());
            records.push(ColumnRecord {
                log: rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad(1))?,
                offset: rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| bad(2))?,
                scale: rec.get(3).and_then(|v| v.parse().ok()).ok_or_else(|| bad(3))?,
            });
        }
        let mut ds = Dataset::new(names, Vec::new())?;
        ds.records = records;
        Ok(ds)
    }
}

/// Reads a headed CSV. With a schema, only those columns are kept, in schema
/// order; otherwise every column must be numeric. Rows with an empty or `NA`
/// cell in a kept column are dropped and counted.
pub fn load_csv(path: &Path, schema: Option<&[String]>) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: Option<&[String]>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let names: Vec<String> = match schema {
        Some(s) => s.to_vec(),
        None => header.clone(),
    };
    let picks = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::MissingColumn(n.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(picks.len());
        let mut missing = false;
        for (&p, name) in picks.iter().zip(&names) {
            let cell = rec.get(p).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell == "?" {
                missing = true;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::BadCell {
                row: i + 1,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            row.push(v);
        }
        if missing {
            dropped += 1;
        } else {
            rows.push(row);
        }
    }
    let mut ds = Dataset::new(names, rows)?;
    ds.dropped_incomplete = dropped;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Filter { column: String, op: CmpOp, value: f64 },
    Subsample { n: usize, seed: u64 },
    Log(String),
    /// `None` means every column.
    Center(Option<String>),
    Standardize(Option<String>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Recipe {
    pub directives: Vec<Directive>,
}

impl Recipe {
    pub fn parse(text: &str) -> Result<Self> {
        let mut directives = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| Error::Recipe {
                line: ln + 1,
                message: message.to_string(),
            };
            let toks: Vec<&str> = line.split_whitespace().collect();
            let target = |t: Option<&&str>| -> Result<Option<String>> {
                match t {
                    None | Some(&"all") => Ok(None),
                    Some(c) => Ok(Some(c.to_string())),
                }
            };
            let d = match toks[0] {
                "filter" => {
                    if toks.len() != 4 {
                        return Err(err("expected `filter <col> <op> <value>`"));
                    }
                    let op = match toks[2] {
                        "<" => CmpOp::Lt,
                        "<=" => CmpOp::Le,
                        ">" => CmpOp::Gt,
                        ">=" => CmpOp::Ge,
                        "==" | "=" => CmpOp::Eq,
                        "!=" => CmpOp::Ne,
                        _ => return Err(err("unknown comparison operator")),
                    };
                    let value = toks[3].parse().map_err(|_| err("bad filter value"))?;
                    Directive::Filter {
                        column: toks[1].to_string(),
                        op,
                        value,
                    }
                }
                "subsample" => {
                    let n = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err("expected `subsample <n> [seed <s>]`"))?;
                    let seed = match (toks.get(2), toks.get(3)) {
                        (None, _) => 0,
                        (Some(&"seed"), Some(s)) => s.parse().map_err(|_| err("bad seed"))?,
                        _ => return Err(err("expected `subsample <n> [seed <s>]`")),
                    };
                    Directive::Subsample { n, seed }
                }
                "log" => match toks.get(1) {
                    Some(c) if toks.len() == 2 => Directive::Log(c.to_string()),
                    _ => return Err(err("expected `log <col>`")),
                },
                "center" => Directive::Center(target(toks.get(1))?),
                "standardize" => Directive::Standardize(target(toks.get(1))?),
                other => return Err(err(&format!("unknown directive `{other}`"))),
            };
            directives.push(d);
        }
        Ok(Recipe { directives })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Recipe::parse(&std::fs::read_to_string(path)?)
    }

    /// Filter and subsample directives dropped; used when the row selection
    /// was already made (for example on a held-out fold).
    pub fn columnwise(&self) -> Recipe {
        Recipe {
            directives: self
                .directives
                .iter()
                .filter(|d| !matches!(d, Directive::Filter { .. } | Directive::Subsample { .. }))
                .cloned()
                .collect(),
        }
    }
}

pub fn preprocess(dataset: &Dataset, recipe: &Recipe) -> Result<Dataset> {
    let mut ds = dataset.clone();
    let col = |ds: &Dataset, name: &str| {
        ds.column_index(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    for d in &recipe.directives {
        if let Directive::Filter { column, op, value } = d {
            let k = col(&ds, column)?;
            ds.rows.retain(|r| op.holds(r[k], *value));
            ds.filters.push(format!("{column} {op:?} {value}"));
        }
    }
    for d in &recipe.directives {
        if let Directive::Subsample { n, seed } = d {
            if *n < ds.rows.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut keep = sample(&mut rng, ds.rows.len(), *n).into_vec();
                keep.sort_unstable();
                ds.rows = keep.iter().map(|&i| ds.rows[i].clone()).collect();
            }
        }
    }
    for d in &recipe.directives {
        if let Directive::Log(c) = d {
            let k = col(&ds, c)?;
            if ds.records[k].log {
                continue;
            }
            for (i, r) in ds.rows.iter_mut().enumerate() {
                if !(r[k] > 0.0) {
                    return Err(Error::LogDomain {
                        row: i + 1,
                        column: c.clone(),
                        value: r[k],
                    });
                }
                r[k] = r[k].ln();
            }
            ds.records[k].log = true;
        }
    }
    let all: Vec<usize> = (0..ds.n_cols()).collect();
    for d in &recipe.directives {
        let (target, scale) = match d {
            Directive::Center(t) => (t, false),
            Directive::Standardize(t) => (t, true),
            _ => continue,
        };
        let cols = match target {
            None => all.clone(),
            Some(c) => vec![col(&ds, c)?],
        };
        for k in cols {
            let n = ds.rows.len() as f64;
            let mean = if n > 0.0 {
                ds.rows.iter().map(|r| r[k]).sum::<f64>() / n
            } else {
                0.0
            };
            let sd = if scale && n > 1.0 {
                (ds.rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                1.0
            };
            let sd = if sd > 0.0 { sd } else { 1.0 };
            for r in ds.rows.iter_mut() {
                r[k] = (r[k] - mean) / sd;
            }
            let rec = &mut ds.records[k];
            rec.offset += rec.scale * mean;
            rec.scale *= sd;
        }
    }
    Ok(ds)
}

/// Applies the column transforms recorded on `fitted` (log, offset, scale) to
/// new raw rows, so held-out data share the training coordinates.
pub fn apply_transform(fitted: &Dataset, raw: &Dataset) -> Result<Dataset> {
    let mut out = raw.clone();
    let picks = fitted
        .names
        .iter()
        .map(|n| raw.column_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
        .collect::<Result<Vec<_>>>()?;
    out.names = fitted.names.clone();
    out.records = fitted.records.clone();
    out.rows = Vec::with_capacity(raw.n_rows());
    for (i, r) in raw.rows.iter().enumerate() {
        let mut row = Vec::with_capacity(picks.len());
        for (k, &p) in picks.iter().enumerate() {
            let rec = &fitted.records[k];
            let mut v = r[p];
            if rec.log {
                if !(v > 0.0) {
                    return Err(Error::LogDomain {
                        row: i + 1,
                        column: fitted.names[k].clone(),
                        value: v,
                    });
                }
                v = v.ln();
            }
            row.push((v - rec.offset) / rec.scale);
        }
        out.rows.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 60.0]],
        )
        .unwrap()
    }

    #[test]
    fn parses_recipe() {
        let r = Recipe::parse("filter RAD < 24\nlog INDUS # x\n\ncenter all\nsubsample 300 seed 4\n")
            .unwrap();
        assert_eq!(r.directives.len(), 4);
        assert_eq!(r.directives[3], Directive::Subsample { n: 300, seed: 4 });
        assert!(matches!(Recipe::parse("scale x"), Err(Error::Recipe { line: 1, .. })));
        assert!(matches!(Recipe::parse("\nfilter a ~ 1"), Err(Error::Recipe { line: 2, .. })));
    }

    #[test]
    fn identity_recipe_records_means() {
        let ds = small();
        let out = preprocess(&ds, &Recipe::parse("center all").unwrap()).unwrap();
        assert_eq!(out.records[0].offset, 2.0);
        assert_eq!(out.records[1].offset, 30.0);
        assert_eq!(out.rows[0], vec![-1.0, -20.0]);
    }

    #[test]
    fn log_of_zero_fails() {
        let mut ds = small();
        ds.rows[1][0] = 0.0;
        let err = preprocess(&ds, &Recipe::parse("log a").unwrap()).unwrap_err();
        assert!(matches!(err, Error::LogDomain { row: 2, .. }));
    }

    #[test]
    fn inverse_recovers_rows() {
        let ds = small();
        let r = Recipe::parse("filter b >= 20\nlog b\nstandardize all").unwrap();
        let out = preprocess(&ds, &r).unwrap();
        assert_eq!(out.n_rows(), 2);
        for (p, raw) in out.rows.iter().zip(&ds.rows[1..]) {
            let back = out.inverse_row(p);
            for (x, y) in back.iter().zip(raw) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_errors_and_drops() {
        let text = "x,y,z\n1,2,3\n4,,6\n7,8,9\n";
        let schema = vec!["z".to_string(), "x".to_string()];
        let ds = read_csv(text.as_bytes(), Some(&schema)).unwrap();
        assert_eq!(ds.rows, vec![vec![3.0, 1.0], vec![6.0, 4.0], vec![9.0, 7.0]]);
        let ds = read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(ds.dropped_incomplete, 1);
        assert_eq!(ds.n_rows(), 2);
        let bad = read_csv("x\n1\nfoo\n".as_bytes(), None).unwrap_err();
        assert!(matches!(bad, Error::BadCell { row: 2, .. }));
        let empty = read_csv("x,y\n".as_bytes(), None).unwrap();
        assert_eq!(empty.n_rows(), 0);
        let missing = read_csv("x\n1\n".as_bytes(), Some(&["q".to_string()])).unwrap_err();
        assert!(matches!(missing, Error::MissingColumn(_)));
    }

    #[test]
    fn transform_round_trips() {
        let ds = preprocess(&small(), &Recipe::parse("log b\nstandardize all").unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        ds.save_transform(&path).unwrap();
        let back = Dataset::load_transform(&path).unwrap();
        assert_eq!(back.names, ds.names);
        assert_eq!(back.records, ds.records);
        assert_eq!(apply_transform(&back, &small()).unwrap().rows, ds.rows);
    }

    #[test]
    fn transform_matches_fit() {
        let ds = small();
        let fit = preprocess(&ds, &Recipe::parse("log b\nstandardize all").unwrap()).unwrap();
        let again = apply_transform(&fit, &ds).unwrap();
        for (a, b) in again.rows.iter().zip(&fit.rows) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
