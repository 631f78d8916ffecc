//! CSV and JSON formats: points, queries, histograms and reports.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, RunReport, Summary, SweepReport};
use crate::types::{Histogram, QueryMatrix, UniversePoints};

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(r)
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, what: &str) -> Result<f64> {
    let raw = &rec[idx];
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line: line_of(rec),
            msg: format!("bad {what} value '{raw}'"),
        })
}

fn check_width(rec: &csv::StringRecord, width: usize) -> Result<()> {
    if rec.len() != width {
        return Err(Error::Parse {
            line: line_of(rec),
            msg: format!("expected {width} fields, found {}", rec.len()),
        });
    }
    Ok(())
}

fn header_error(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 1,
        msg: msg.into(),
    }
}

/// Reads `id,x,y[,attr...]`; extra columns (e.g. `elevation`, `population`)
/// become named attributes.
pub fn read_points_csv<R: Read>(r: R) -> Result<UniversePoints> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "x" || &header[2] != "y" {
        return Err(header_error("points header must start with id,x,y"));
    }
    let extra: Vec<String> = header.iter().skip(3).map(str::to_owned).collect();
    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut attrs: Vec<Vec<f64>> = vec![Vec::new(); extra.len()];
    for rec in rdr.records() {
        let rec = rec?;
        check_width(&rec, header.len())?;
        ids.push(rec[0].to_owned());
        points.push(vec![parse_f64(&rec, 1, "x")?, parse_f64(&rec, 2, "y")?]);
        for (a, (col, name)) in attrs.iter_mut().zip(extra.iter().enumerate()) {
            a.push(parse_f64(&rec, col + 3, name)?);
        }
    }
    if points.is_empty() {
        return Err(Error::Invalid("points file has no rows".into()));
    }
    let mut u = UniversePoints::new(points)?;
    u.ids = ids;
    u.attributes = extra.into_iter().zip(attrs).collect();
    Ok(u)
}

pub fn ingest_points_csv(path: impl AsRef<Path>) -> Result<UniversePoints> {
    read_points_csv(File::open(path)?)
}

pub fn write_points_csv<W: Write>(u: &UniversePoints, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let names: Vec<&String> = u.attributes.keys().collect();
    let mut header = vec!["id", "x", "y"];
    header.extend(names.iter().map(|s| s.as_str()));
    wtr.write_record(&header)?;
    for (idx, p) in u.points.iter().enumerate() {
        let mut row = vec![u.ids[idx].clone(), p[0].to_string(), p.get(1).copied().unwrap_or(0.0).to_string()];
        row.extend(names.iter().map(|n| u.attributes[*n][idx].to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row per query row: `query_id,k,q0,…,q{N−1}`.
pub fn write_queries_csv<W: Write>(queries: &[QueryMatrix], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let n = queries.first().map_or(0, QueryMatrix::universe_size);
    let mut header = vec!["query_id".to_string(), "k".to_string()];
    header.extend((0..n).map(|i| format!("q{i}")));
    wtr.write_record(&header)?;
    for (id, q) in queries.iter().enumerate() {
        if q.universe_size() != n {
            return Err(Error::Dimension {
                what: "query universe size",
                expected: n,
                got: q.universe_size(),
            });
        }
        for (k, row) in q.rows().enumerate() {
            let mut rec = vec![id.to_string(), k.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_queries_csv<R: Read>(r: R) -> Result<Vec<QueryMatrix>> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "query_id" || &header[1] != "k" {
        return Err(header_error("queries header must be query_id,k,coeffs..."));
    }
    let n = header.len() - 2;
    let mut out = Vec::new();
    let mut current: Option<(usize, Vec<Vec<f64>>)> = None;
    for rec in rdr.records() {
        let rec = rec?;
        check_width(&rec, header.len())?;
        let parse_idx = |i: usize, what: &str| {
            rec[i].parse::<usize>().map_err(|_| Error::Parse {
                line: line_of(&rec),
                msg: format!("bad {what} '{}'", &rec[i]),
            })
        };
        let id = parse_idx(0, "query_id")?;
        let k = parse_idx(1, "k")?;
        let row = (0..n).map(|i| parse_f64(&rec, i + 2, "coefficient")).collect::<Result<Vec<_>>>()?;
        match &mut current {
            Some((cur, rows)) if *cur == id => {
                if k != rows.len() {
                    return Err(Error::Parse {
                        line: line_of(&rec),
                        msg: format!("expected k = {}, found {k}", rows.len()),
                    });
                }
                rows.push(row);
            }
            _ => {
                if let Some((_, rows)) = current.take() {
                    out.push(QueryMatrix::from_rows(&rows)?);
                }
                if id != out.len() || k != 0 {
                    return Err(Error::Parse {
                        line: line_of(&rec),
                        msg: format!("expected query {} row 0, found query {id} row {k}", out.len()),
                    });
                }
                current = Some((id, vec![row]));
            }
        }
    }
    if let Some((_, rows)) = current {
        out.push(QueryMatrix::from_rows(&rows)?);
    }
    Ok(out)
}

pub fn write_histogram_csv<W: Write>(x: &Histogram, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["bin", "count"])?;
    for (i, c) in x.counts().iter().enumerate() {
        wtr.write_record([i.to_string(), c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_histogram_csv<R: Read>(r: R) -> Result<Histogram> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "bin" || &header[1] != "count" {
        return Err(header_error("histogram header must be bin,count"));
    }
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        check_width(&rec, 2)?;
        let bad = |msg: String| Error::Parse {
            line: line_of(&rec),
            msg,
        };
        let bin: usize = rec[0].parse().map_err(|_| bad(format!("bad bin '{}'", &rec[0])))?;
        let count: u64 = rec[1].parse().map_err(|_| bad(format!("bad count '{}'", &rec[1])))?;
        if bin != counts.len() {
            return Err(bad(format!("expected bin {}, found {bin}", counts.len())));
        }
        counts.push(count);
    }
    Ok(Histogram::new(counts))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Long format, one row per query; scales are `;`-separated.
pub fn write_report_csv<W: Write>(report: &RunReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "query_id", "k", "strategy", "c", "if", "rmse", "stderr", "mean_loss", "l2_bound", "seed", "feasible", "error",
    ])?;
    for r in &report.records {
        wtr.write_record([
            r.query_id.to_string(),
            r.k.to_string(),
            r.strategy.clone(),
            join(&r.scales),
            opt(r.improvement),
            opt(r.rmse),
            opt(r.stderr),
            opt(r.mean_loss),
            opt(r.l2_bound),
            r.seed.to_string(),
            r.feasible.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ReportJson<'a> {
    config: &'a ExperimentConfig,
    metric: &'a str,
    histogram_law: &'a str,
    summary: &'a Summary,
}

pub fn write_report_json<W: Write>(report: &RunReport, w: W) -> Result<()> {
    let view = ReportJson {
        config: &report.config,
        metric: &report.metric,
        histogram_law: &report.histogram_law,
        summary: &report.summary,
    };
    serde_json::to_writer_pretty(w, &view)?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(sweep: &SweepReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "metric", "queries", "usable", "mean_rmse", "pooled_stderr", "mean_if", "median_if", "min_if", "max_if",
    ])?;
    for c in &sweep.cells {
        let s = &c.summary;
        wtr.write_record([
            c.metric.label(),
            s.queries.to_string(),
            s.usable.to_string(),
            opt(s.mean_rmse),
            opt(s.pooled_stderr),
            opt(s.mean_improvement),
            opt(s.median_improvement),
            opt(s.min_improvement),
            opt(s.max_improvement),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sweep_json<W: Write>(sweep: &SweepReport, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, sweep)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{gen_queries, gen_universe, CoefficientLaw, CoordBox};

    #[test]
    fn toy_points_with_attributes() {
        let src = "id,x,y,elevation,population\na,0,0,10,50000\nb,3,0,20,60000\nc,0,4,15,70000\n";
        let u = read_points_csv(src.as_bytes()).unwrap();
        assert_eq!(u.len(), 3);
        assert_eq!(u.ids, vec!["a", "b", "c"]);
        assert_eq!(u.attribute("elevation").unwrap(), &[10.0, 20.0, 15.0]);
        let mut buf = Vec::new();
        write_points_csv(&u, &mut buf).unwrap();
        assert_eq!(read_points_csv(buf.as_slice()).unwrap(), u);
    }

    #[test]
    fn points_without_optional_columns() {
        let u = read_points_csv("id,x,y\n1,0.5,1\n2,2,2\n".as_bytes()).unwrap();
        assert!(u.attributes.is_empty());
        assert_eq!(u.points[0], vec![0.5, 1.0]);
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = read_points_csv("id,x,y\n1,0,0\n2,oops,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = read_points_csv("id,x,y\n1,0,0\n2,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        assert!(matches!(
            read_points_csv("x,y\n0,0\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn generated_universe_csv_is_byte_identical() {
        let write = || {
            let mut buf = Vec::new();
            write_points_csv(&gen_universe(50, CoordBox::default(), 3).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(write(), write());
    }

    #[test]
    fn queries_roundtrip() {
        let qs = gen_queries(4, 3, 5, CoefficientLaw::Uniform, 2).unwrap();
        let mut buf = Vec::new();
        write_queries_csv(&qs, &mut buf).unwrap();
        assert_eq!(read_queries_csv(buf.as_slice()).unwrap(), qs);
        let bad = "query_id,k,q0,q1\n0,0,1,2\n0,2,1,2\n";
        assert!(matches!(read_queries_csv(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn histogram_roundtrip() {
        let x = Histogram::new(vec![3, 0, 7]);
        let mut buf = Vec::new();
        write_histogram_csv(&x, &mut buf).unwrap();
        assert_eq!(read_histogram_csv(buf.as_slice()).unwrap(), x);
        assert!(read_histogram_csv("bin,count\n0,1\n2,1\n".as_bytes()).is_err());
    }
}
