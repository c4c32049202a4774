//! CSV import and export.
//!
//! Every file starts with a `# schema <name> v<version>` comment line.
//! Floats use the shortest representation that parses back to the same
//! value, so equal runs produce byte-identical files. Undefined values are
//! empty fields.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{DatasetClass, DatasetReal};
use crate::elasticity::SRelSeries;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::sgd::RunRecord;

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn schema_line(name: &str, extra: &str) -> String {
    if extra.is_empty() {
        format!("# schema {name} v{SCHEMA_VERSION}\n")
    } else {
        format!("# schema {name} v{SCHEMA_VERSION} {extra}\n")
    }
}

/// Writes one table: schema comment, header, rows.
pub fn write_table<W, I>(mut out: W, schema: &str, extra: &str, header: &[String], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = Vec<String>>,
{
    out.write_all(schema_line(schema, extra).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Header of a table read back by [`read_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub version: u32,
    /// `key=value` tokens after the version on the schema line.
    pub extra: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn extra_value(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let mut tokens = first.split_whitespace();
    if (tokens.next(), tokens.next()) != (Some("#"), Some("schema")) {
        return Err(Error::Csv("missing '# schema' line".into()));
    }
    let schema = tokens.next().ok_or_else(|| Error::Csv("schema name missing".into()))?.to_string();
    let version = tokens
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Csv("schema version missing".into()))?;
    if version != SCHEMA_VERSION {
        return Err(Error::Csv(format!("unsupported schema version {version}")));
    }
    let extra = tokens
        .map(|t| {
            let (k, v) = t.split_once('=').ok_or_else(|| Error::Csv(format!("bad schema token '{t}'")))?;
            Ok((k.to_string(), v.to_string()))
        })
        .collect::<Result<_>>()?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(Error::from))
        .collect::<Result<_>>()?;
    Ok(Table { schema, version, extra, header, rows })
}

fn expect_schema(t: &Table, name: &str) -> Result<()> {
    if t.schema != name {
        return Err(Error::Csv(format!("expected schema {name}, found {}", t.schema)));
    }
    Ok(())
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Csv(format!("row {line}: '{s}' is not a number")))
}

/// Opens `path` for writing, creating parent directories.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn input_header(dim: usize, last: &str) -> Vec<String> {
    (0..dim).map(|i| format!("x_{i}")).chain(std::iter::once(last.to_string())).collect()
}

fn parse_inputs<'a>(t: &'a Table, last: &str) -> Result<(usize, Vec<Vector>, Vec<&'a str>)> {
    let dim = t.header.len().checked_sub(1).ok_or_else(|| Error::Csv("empty header".into()))?;
    if t.header != input_header(dim, last) {
        return Err(Error::Csv(format!("header must be x_0..x_{{d-1}},{last}")));
    }
    let mut xs = Vec::with_capacity(t.rows.len());
    let mut labels = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let x = row[..dim].iter().map(|s| parse_f64(s, i + 1)).collect::<Result<Vec<f64>>>()?;
        xs.push(Vector::from_vec(x));
        labels.push(row[dim].as_str());
    }
    Ok((dim, xs, labels))
}

pub fn write_dataset_real<W: Write>(out: W, ds: &DatasetReal) -> Result<()> {
    let rows = ds.iter().map(|(x, y)| x.iter().copied().chain(std::iter::once(y)).map(fmt_f64).collect());
    write_table(out, "dataset_real", &format!("seed={}", ds.seed), &input_header(ds.dim(), "y"), rows)
}

pub fn read_dataset_real<R: Read>(input: R) -> Result<DatasetReal> {
    let t = read_table(input)?;
    expect_schema(&t, "dataset_real")?;
    let seed = seed_of(&t)?;
    let (_, xs, labels) = parse_inputs(&t, "y")?;
    let ys = labels.iter().enumerate().map(|(i, s)| parse_f64(s, i + 1)).collect::<Result<_>>()?;
    DatasetReal::new(xs, ys, seed)
}

pub fn write_dataset_class<W: Write>(out: W, ds: &DatasetClass) -> Result<()> {
    let rows = ds.xs.iter().zip(&ds.labels).map(|(x, c)| x.iter().map(|v| fmt_f64(*v)).chain(std::iter::once(c.to_string())).collect());
    let extra = format!("seed={} classes={}", ds.seed, ds.num_classes);
    write_table(out, "dataset_class", &extra, &input_header(ds.dim(), "class"), rows)
}

pub fn read_dataset_class<R: Read>(input: R) -> Result<DatasetClass> {
    let t = read_table(input)?;
    expect_schema(&t, "dataset_class")?;
    let seed = seed_of(&t)?;
    let (_, xs, labels) = parse_inputs(&t, "class")?;
    let labels: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, s)| s.trim().parse().map_err(|_| Error::Csv(format!("row {}: bad class '{s}'", i + 1))))
        .collect::<Result<_>>()?;
    let num_classes = match t.extra_value("classes") {
        Some(v) => v.parse().map_err(|_| Error::Csv(format!("bad class count '{v}'")))?,
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    DatasetClass::new(xs, labels, num_classes, seed)
}

fn seed_of(t: &Table) -> Result<u64> {
    t.extra_value("seed").map_or(Ok(0), |s| s.parse().map_err(|_| Error::Csv(format!("bad seed '{s}'"))))
}

/// Long format: `t, pair_id, run_id, value, defined_count`, with `run_id`
/// either a seed or `mean` / `std`. `defined_count` is filled on the
/// summary rows.
pub fn write_series<W: Write>(out: W, series: &SRelSeries) -> Result<()> {
    let header = ["t", "pair_id", "run_id", "value", "defined_count"].map(String::from);
    let mut rows = Vec::new();
    for (ti, t) in series.times.iter().enumerate() {
        for (pi, pair) in series.pairs.iter().enumerate() {
            for (ri, id) in series.run_ids.iter().enumerate() {
                rows.push(vec![fmt_f64(*t), pair.clone(), id.to_string(), fmt_opt(series.values[ri][ti][pi]), String::new()]);
            }
            let n = series.defined[ti][pi].to_string();
            rows.push(vec![fmt_f64(*t), pair.clone(), "mean".into(), fmt_opt(series.mean[ti][pi]), n.clone()]);
            rows.push(vec![fmt_f64(*t), pair.clone(), "std".into(), fmt_opt(series.std[ti][pi]), n]);
        }
    }
    write_table(out, "srel_series", "", &header, rows)
}

/// Rebuilds a series from the per-run rows of [`write_series`]; mean and
/// std are recomputed.
pub fn read_series<R: Read>(input: R) -> Result<SRelSeries> {
    let t = read_table(input)?;
    expect_schema(&t, "srel_series")?;
    let mut times: Vec<f64> = Vec::new();
    let mut pairs: Vec<String> = Vec::new();
    let mut runs: Vec<u64> = Vec::new();
    let mut cells = Vec::new();
    for (i, row) in t.rows.iter().enumerate() {
        if row.len() != 5 {
            return Err(Error::Csv(format!("row {}: expected 5 fields", i + 1)));
        }
        let Ok(run) = row[2].parse::<u64>() else { continue };
        let time = parse_f64(&row[0], i + 1)?;
        let value = if row[3].is_empty() { None } else { Some(parse_f64(&row[3], i + 1)?) };
        let ti = times.iter().position(|&x| x == time).unwrap_or_else(|| {
            times.push(time);
            times.len() - 1
        });
        let pi = pairs.iter().position(|p| p == &row[1]).unwrap_or_else(|| {
            pairs.push(row[1].clone());
            pairs.len() - 1
        });
        let ri = runs.iter().position(|&r| r == run).unwrap_or_else(|| {
            runs.push(run);
            runs.len() - 1
        });
        cells.push((ri, ti, pi, value));
    }
    let mut grid = vec![vec![vec![None; pairs.len()]; times.len()]; runs.len()];
    for (ri, ti, pi, v) in cells {
        grid[ri][ti][pi] = v;
    }
    SRelSeries::from_runs(times, pairs, runs.into_iter().zip(grid).collect())
}

/// `step, run_id, pair_id, srel, emp_loss, pop_loss, weight_error`; runs
/// without tracked pairs get one row per record with an empty pair.
pub fn write_run_records<W: Write>(out: W, records: &[RunRecord], pair_ids: &[String]) -> Result<()> {
    let header = ["step", "run_id", "pair_id", "srel", "emp_loss", "pop_loss", "weight_error"].map(String::from);
    let mut rows = Vec::new();
    for r in records {
        for (i, step) in r.steps.iter().enumerate() {
            let common = |pair: String, srel: Option<f64>| {
                vec![
                    step.to_string(),
                    r.seed.to_string(),
                    pair,
                    fmt_opt(srel),
                    fmt_f64(r.emp_loss[i]),
                    fmt_opt(r.pop_loss[i]),
                    fmt_f64(r.weight_error[i]),
                ]
            };
            if pair_ids.is_empty() {
                rows.push(common(String::new(), None));
            }
            for (pi, id) in pair_ids.iter().enumerate() {
                rows.push(common(id.clone(), r.srel[i].get(pi).copied().flatten()));
            }
        }
    }
    write_table(out, "run_records", "", &header, rows)
}

/// `t, w_0, …, w_{n−1}` for a sampled trajectory.
pub fn write_trajectory<W: Write>(out: W, times: &[f64], states: &[Vector]) -> Result<()> {
    if times.len() != states.len() {
        return Err(Error::Shape(format!("{} times but {} states", times.len(), states.len())));
    }
    let dim = states.first().map_or(0, |s| s.len());
    if states.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape("states differ in length".into()));
    }
    let header: Vec<String> = std::iter::once("t".to_string()).chain((0..dim).map(|i| format!("w_{i}"))).collect();
    let rows = times.iter().zip(states).map(|(t, s)| std::iter::once(*t).chain(s.iter().copied()).map(fmt_f64).collect());
    write_table(out, "trajectory", "", &header, rows)
}
