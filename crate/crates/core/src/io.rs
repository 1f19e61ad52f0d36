//! CSV ingestion.
//!
//! Two layouts are accepted, told apart by the fourth header column:
//!
//! * cluster level: `stratum,cluster,weight,m,y1..y{d+1},x1..xk`
//! * individual level: `stratum,cluster,weight,category,x1..xk`, one row per
//!   respondent, aggregated by `(stratum, cluster)`.
//!
//! Numbers may be written as decimals or as exact ratios such as `3734/300`.
//! Lines starting with `#` are ignored. The last count column (or the last
//! category) is the reference category.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ClusterRecord, Stratum, SurveyDataset};

/// A dataset together with the labels read from the file.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: SurveyDataset,
    pub category_labels: Vec<String>,
    pub covariate_labels: Vec<String>,
}

/// Parses a decimal or an `a/b` ratio.
pub fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    let v = match t.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().ok()?;
            let b: f64 = b.trim().parse().ok()?;
            if b == 0.0 {
                return None;
            }
            a / b
        }
        None => t.parse().ok()?,
    };
    v.is_finite().then_some(v)
}

/// Reads either layout from a file.
pub fn read_dataset(path: impl AsRef<Path>, categories: Option<&[String]>) -> Result<LoadedData> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset_from(file, categories)
}

/// Reads either layout from any reader.
pub fn read_dataset_from<R: Read>(reader: R, categories: Option<&[String]>) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let header_line = rdr.position().line().max(1);
    if header.len() < 4 || header[0] != "stratum" || header[1] != "cluster" || header[2] != "weight" {
        return Err(Error::Parse {
            line: header_line,
            message: "header must start with `stratum,cluster,weight`".into(),
        });
    }
    match header[3].as_str() {
        "m" => read_cluster_rows(rdr, &header, header_line),
        "category" => read_individual_rows(rdr, &header, header_line, categories),
        other => Err(Error::Parse {
            line: header_line,
            message: format!("fourth column must be `m` or `category`, found `{other}`"),
        }),
    }
}

struct Grouper<T> {
    strata: Vec<(String, Vec<T>)>,
    index: HashMap<String, usize>,
}

impl<T> Grouper<T> {
    fn new() -> Self {
        Self {
            strata: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn slot(&mut self, stratum: &str) -> &mut Vec<T> {
        let idx = *self.index.entry(stratum.to_string()).or_insert_with(|| {
            self.strata.push((stratum.to_string(), Vec::new()));
            self.strata.len() - 1
        });
        &mut self.strata[idx].1
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field_number(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<f64> {
    let raw = rec.get(i).unwrap_or("");
    parse_number(raw).ok_or_else(|| parse_err(line, format!("column `{name}`: `{raw}` is not a number")))
}

fn field_count(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<u64> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| parse_err(line, format!("column `{name}`: `{raw}` is not a non-negative integer")))
}

fn split_columns(header: &[String], from: usize, line: u64) -> Result<(Vec<String>, Vec<String>)> {
    let rest = &header[from..];
    let n_y = rest.iter().take_while(|c| c.starts_with('y')).count();
    let (ys, xs) = rest.split_at(n_y);
    if let Some(bad) = xs.iter().find(|c| !c.starts_with('x')) {
        return Err(parse_err(line, format!("unexpected column `{bad}`; counts are y*, covariates x*")));
    }
    if xs.is_empty() {
        return Err(parse_err(line, "no covariate columns (x1, x2, ...)"));
    }
    Ok((ys.to_vec(), xs.to_vec()))
}

fn read_cluster_rows<R: Read>(mut rdr: csv::Reader<R>, header: &[String], header_line: u64) -> Result<LoadedData> {
    let (ys, xs) = split_columns(header, 4, header_line)?;
    if ys.len() < 2 {
        return Err(parse_err(header_line, "need at least two count columns (y1, y2, ...)"));
    }
    let width = 4 + ys.len() + xs.len();
    let mut groups: Grouper<ClusterRecord> = Grouper::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", row.len())));
        }
        let weight = field_number(&row, 2, "weight", line)?;
        let m = field_count(&row, 3, "m", line)?;
        let counts = ys
            .iter()
            .enumerate()
            .map(|(s, name)| field_count(&row, 4 + s, name, line))
            .collect::<Result<Vec<_>>>()?;
        let x = xs
            .iter()
            .enumerate()
            .map(|(j, name)| field_number(&row, 4 + ys.len() + j, name, line))
            .collect::<Result<Vec<_>>>()?;
        let rec = ClusterRecord::with_nonresponse(&row[1], weight, m, counts, x).map_err(|e| at_line(e, line))?;
        groups.slot(&row[0]).push(rec);
    }
    finish(groups, ys, xs)
}

fn at_line(err: Error, line: u64) -> Error {
    match err {
        Error::InvalidData(m) | Error::Dimension(m) => parse_err(line, m),
        other => other,
    }
}

struct Partial {
    label: String,
    weight: f64,
    x: Vec<f64>,
    counts: Vec<u64>,
    first_line: u64,
}

fn read_individual_rows<R: Read>(
    mut rdr: csv::Reader<R>,
    header: &[String],
    header_line: u64,
    categories: Option<&[String]>,
) -> Result<LoadedData> {
    let (ys, xs) = split_columns(header, 4, header_line)?;
    if !ys.is_empty() {
        return Err(parse_err(header_line, "individual-level files have no count columns"));
    }
    let width = 4 + xs.len();
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", row.len())));
        }
        rows.push((line, row));
    }
    let labels = category_order(&rows, categories)?;
    let cat_index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

    let mut groups: Grouper<Partial> = Grouper::new();
    let mut where_is: HashMap<(String, String), usize> = HashMap::new();
    for (line, row) in &rows {
        let line = *line;
        let weight = field_number(row, 2, "weight", line)?;
        let x = xs
            .iter()
            .enumerate()
            .map(|(j, name)| field_number(row, 4 + j, name, line))
            .collect::<Result<Vec<_>>>()?;
        let s = *cat_index
            .get(&row[3])
            .ok_or_else(|| parse_err(line, format!("unknown category `{}`", &row[3])))?;
        let key = (row[0].to_string(), row[1].to_string());
        let clusters = groups.slot(&row[0]);
        let idx = *where_is.entry(key).or_insert_with(|| {
            clusters.push(Partial {
                label: row[1].to_string(),
                weight,
                x: x.clone(),
                counts: vec![0; labels.len()],
                first_line: line,
            });
            clusters.len() - 1
        });
        let p = &mut clusters[idx];
        if p.weight != weight {
            return Err(parse_err(
                line,
                format!("cluster `{}` weight differs from line {}", p.label, p.first_line),
            ));
        }
        if p.x != x {
            return Err(parse_err(
                line,
                format!("cluster `{}` covariates differ from line {}", p.label, p.first_line),
            ));
        }
        p.counts[s] += 1;
    }
    let mut out: Grouper<ClusterRecord> = Grouper::new();
    for (label, parts) in groups.strata {
        let slot = out.slot(&label);
        for p in parts {
            let m = p.counts.iter().sum();
            slot.push(ClusterRecord::new(p.label, p.weight, m, p.counts, p.x).map_err(|e| at_line(e, p.first_line))?);
        }
    }
    finish(out, labels, xs)
}

/// Category labels in model order: as given, else `1..=max` for integer
/// codes, else sorted.
fn category_order(rows: &[(u64, csv::StringRecord)], given: Option<&[String]>) -> Result<Vec<String>> {
    if let Some(g) = given {
        if g.len() < 2 {
            return Err(Error::InvalidData("need at least two categories".into()));
        }
        return Ok(g.to_vec());
    }
    let mut seen: Vec<String> = Vec::new();
    for (_, row) in rows {
        if !seen.iter().any(|s| s == &row[3]) {
            seen.push(row[3].to_string());
        }
    }
    let codes: Option<Vec<u64>> = seen.iter().map(|s| s.parse().ok().filter(|&v| v >= 1)).collect();
    let labels = match codes {
        Some(c) => {
            let max = c.into_iter().max().unwrap_or(0);
            (1..=max).map(|v| v.to_string()).collect()
        }
        None => {
            seen.sort();
            seen
        }
    };
    if labels.len() < 2 {
        return Err(Error::InvalidData("need at least two categories".into()));
    }
    Ok(labels)
}

fn finish(groups: Grouper<ClusterRecord>, category_labels: Vec<String>, covariate_labels: Vec<String>) -> Result<LoadedData> {
    let strata = groups
        .strata
        .into_iter()
        .map(|(label, clusters)| Stratum::new(label, clusters))
        .collect();
    Ok(LoadedData {
        dataset: SurveyDataset::new(strata)?,
        category_labels,
        covariate_labels,
    })
}

/// Writes a dataset in the cluster-level layout.
pub fn write_cluster_csv<W: std::io::Write>(writer: W, data: &LoadedData) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["stratum".to_string(), "cluster".into(), "weight".into(), "m".into()];
    header.extend(data.category_labels.iter().enumerate().map(|(s, _)| format!("y{}", s + 1)));
    header.extend(data.covariate_labels.iter().cloned());
    w.write_record(&header)?;
    for s in data.dataset.strata() {
        for c in s.clusters() {
            let mut row = vec![s.label().to_string(), c.label().to_string(), format!("{:?}", c.weight()), c.size().to_string()];
            row.extend(c.counts().iter().map(u64::to_string));
            row.extend(c.covariates().iter().map(|x| format!("{x:?}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
