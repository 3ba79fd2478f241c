//! Long-format panel CSV files and atomic output.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use hcpanel::{CovariateMode, PanelDataset, PanelUnit};

use crate::error::{CliError, CliResult};

pub const HEADER: [&str; 3] = ["unit_id", "t", "y"];
pub const HEADER_X2: [&str; 4] = ["unit_id", "t", "y", "x2"];

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::usage(format!("{} is not a file path", path.display())))?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Serializes rows with a header into CSV bytes.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> CliResult<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::usage(format!("csv write error: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::usage(format!("csv write error: {e}")))
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

struct Row {
    t: usize,
    y: f64,
    x2: Option<f64>,
}

fn parse_real(field: &str, name: &str, line: u64) -> CliResult<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| CliError::usage(format!("line {line}: {name} = {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::usage(format!("line {line}: {name} = {field:?} is not finite")));
    }
    Ok(v)
}

/// Parses a panel from CSV text. Rows may come in any order; units keep
/// the order of their first row.
pub fn parse_panel(text: &str, source: &str) -> CliResult<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CliError::usage(format!("{source}: line 1: cannot read header: {e}")))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let with_x2 = if cols == HEADER {
        false
    } else if cols == HEADER_X2 {
        true
    } else {
        return Err(CliError::usage(format!(
            "{source}: line 1: header must be `unit_id,t,y` or `unit_id,t,y,x2`, found `{}`",
            cols.join(",")
        )));
    };
    let mut order: Vec<String> = Vec::new();
    let mut units: HashMap<String, Vec<Row>> = HashMap::new();
    let mut seen: HashMap<(String, usize), u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::usage(format!("{source}: line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(CliError::usage(format!("{source}: line {line}: empty unit_id")));
        }
        let t: usize = rec[1]
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| CliError::usage(format!("{source}: line {line}: t = {:?} is not an integer >= 1", &rec[1])))?;
        let y = parse_real(&rec[2], "y", line).map_err(|e| CliError::usage(format!("{source}: {e}")))?;
        let x2 = if with_x2 {
            Some(parse_real(&rec[3], "x2", line).map_err(|e| CliError::usage(format!("{source}: {e}")))?)
        } else {
            None
        };
        if let Some(first) = seen.insert((id.clone(), t), line) {
            return Err(CliError::usage(format!(
                "{source}: line {line}: duplicate (unit_id, t) = ({id}, {t}), first seen on line {first}"
            )));
        }
        let rows = units.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        rows.push(Row { t, y, x2 });
    }
    if order.is_empty() {
        return Err(CliError::usage(format!("{source}: no data rows")));
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = units.remove(&id).expect("unit was recorded");
        rows.sort_by_key(|r| r.t);
        for (k, r) in rows.iter().enumerate() {
            if r.t != k + 1 {
                let line = seen[&(id.clone(), r.t)];
                return Err(CliError::usage(format!(
                    "{source}: line {line}: unit {id} has t = {} but t = {} is missing (t must run 1, 2, ... without gaps)",
                    r.t,
                    k + 1
                )));
            }
        }
        let y = rows.iter().map(|r| r.y).collect();
        out.push(if with_x2 {
            PanelUnit::with_x2(id, y, rows.iter().map(|r| r.x2.unwrap()).collect())
        } else {
            PanelUnit::new(id, y)
        });
    }
    let mode = if with_x2 {
        CovariateMode::InterceptPlusX2
    } else {
        CovariateMode::InterceptOnly
    };
    Ok(PanelDataset::new(out, mode)?)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(s)
}

pub fn read_panel(path: &Path) -> CliResult<PanelDataset> {
    parse_panel(&read_text(path)?, &path.display().to_string())
}

/// Panel in long format.
pub fn panel_bytes(data: &PanelDataset) -> CliResult<Vec<u8>> {
    let with_x2 = data.covariate_mode == CovariateMode::InterceptPlusX2;
    let header: &[&str] = if with_x2 { &HEADER_X2 } else { &HEADER };
    let rows = data.units.iter().flat_map(|u| {
        (0..u.len()).map(move |s| {
            let mut r = vec![u.id.clone(), (s + 1).to_string(), num(u.y[s])];
            if with_x2 {
                r.push(num(u.x2_at(s)));
            }
            r
        })
    });
    csv_bytes(header, rows)
}

/// Reads `unit_id,x2_next` pairs from a CSV with at least those columns.
pub fn read_x2_next(path: &Path) -> CliResult<HashMap<String, f64>> {
    let source = path.display().to_string();
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CliError::usage(format!("{source}: line 1: {e}")))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::usage(format!("{source}: line 1: missing column {name}")))
    };
    let (ci, cx) = (col("unit_id")?, col("x2_next")?);
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::usage(format!("{source}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let v = parse_real(&rec[cx], "x2_next", line).map_err(|e| CliError::usage(format!("{source}: {e}")))?;
        if out.insert(rec[ci].to_string(), v).is_some() {
            return Err(CliError::usage(format!("{source}: line {line}: duplicate unit_id {}", &rec[ci])));
        }
    }
    Ok(out)
}
