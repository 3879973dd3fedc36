//! File output: `trace.csv`, `rollout.csv`, `summary.json`, `fig1_data.csv`, `fig2_data.csv`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{Aggregates, Comparison, RunReport, SampleRecord, TraceRow};
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 11] = [
    "k",
    "iter",
    "kkt_stat",
    "kkt_feas",
    "kkt_comp",
    "kkt_max",
    "sched_delta",
    "step_norm",
    "qp_iters",
    "t_prep_us",
    "t_fb_us",
];

pub const FIG1_HEADER: [&str; 6] = ["policy", "iter", "kkt_stat", "kkt_feas", "kkt_comp", "kkt_max"];
pub const FIG2_HEADER: [&str; 3] = ["policy", "k", "n_it"];
pub const TABLE_HEADER: [&str; 7] = ["policy", "n_it", "delta_r_avg", "r_avg", "max_violation", "t_prep_us", "t_fb_us"];

pub fn rollout_header(n_x: usize, n_u: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((0..n_x).map(|i| format!("x{i}")));
    h.extend((0..n_u).map(|i| format!("u{i}")));
    h.extend(["cost", "violation", "n_it"].map(String::from));
    h
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!("{}: {other:?}", path.display())),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))
}

fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

fn trace_fields(r: &TraceRow) -> Vec<String> {
    vec![
        r.k.to_string(),
        r.iter.to_string(),
        r.kkt_stat.to_string(),
        r.kkt_feas.to_string(),
        r.kkt_comp.to_string(),
        r.kkt_max.to_string(),
        r.sched_delta.to_string(),
        r.step_norm.to_string(),
        r.qp_iters.to_string(),
        r.t_prep_us.to_string(),
        r.t_fb_us.to_string(),
    ]
}

fn rollout_fields(s: &SampleRecord) -> Vec<String> {
    let mut v = vec![s.k.to_string()];
    v.extend(s.x.iter().chain(&s.u).map(|x| x.to_string()));
    v.extend([s.cost.to_string(), s.violation.to_string(), s.n_it.to_string()]);
    v
}

fn fig1_rows<'a>(reports: impl IntoIterator<Item = &'a RunReport>) -> Vec<Vec<String>> {
    reports
        .into_iter()
        .flat_map(|rep| {
            rep.first_ocp_rows().map(move |r| {
                vec![
                    rep.name.clone(),
                    r.iter.to_string(),
                    r.kkt_stat.to_string(),
                    r.kkt_feas.to_string(),
                    r.kkt_comp.to_string(),
                    r.kkt_max.to_string(),
                ]
            })
        })
        .collect()
}

fn fig2_rows<'a>(reports: impl IntoIterator<Item = &'a RunReport>) -> Vec<Vec<String>> {
    reports
        .into_iter()
        .flat_map(|rep| rep.samples.iter().map(move |s| vec![rep.name.clone(), s.k.to_string(), s.n_it.to_string()]))
        .collect()
}

fn table_row(name: &str, a: &Aggregates) -> Vec<String> {
    vec![
        name.to_string(),
        a.n_it.to_string(),
        a.delta_r_avg.to_string(),
        a.r_avg.to_string(),
        a.max_violation.to_string(),
        a.t_prep_us.to_string(),
        a.t_fb_us.to_string(),
    ]
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    benchmark: &'a str,
    status: &'a super::run::RunStatus,
    final_state: &'a [f64],
    aggregates: &'a Aggregates,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the five report files into `dir`, creating it if needed. Returns the written paths.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let p = |f: &str| dir.join(f);
    write_rows(&p("trace.csv"), &strings(&TRACE_HEADER), report.trace.iter().map(trace_fields))?;
    write_rows(&p("rollout.csv"), &rollout_header(report.n_x, report.n_u), report.samples.iter().map(rollout_fields))?;
    write_json(
        &p("summary.json"),
        &Summary {
            name: &report.name,
            benchmark: &report.benchmark,
            status: &report.status,
            final_state: &report.final_state,
            aggregates: &report.aggregates,
        },
    )?;
    write_rows(&p("fig1_data.csv"), &strings(&FIG1_HEADER), fig1_rows([report]))?;
    write_rows(&p("fig2_data.csv"), &strings(&FIG2_HEADER), fig2_rows([report]))?;
    Ok(["trace.csv", "rollout.csv", "summary.json", "fig1_data.csv", "fig2_data.csv"].map(p).to_vec())
}

/// Writes each run into `dir/<name>/` plus combined figure data and `table2.csv` in `dir`.
pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for r in &cmp.reports {
        write_report(r, &dir.join(&r.name))?;
    }
    write_rows(&dir.join("fig1_data.csv"), &strings(&FIG1_HEADER), fig1_rows(&cmp.reports))?;
    write_rows(&dir.join("fig2_data.csv"), &strings(&FIG2_HEADER), fig2_rows(&cmp.reports))?;
    write_rows(
        &dir.join("table2.csv"),
        &strings(&TABLE_HEADER),
        cmp.reports.iter().map(|r| table_row(&r.name, &r.aggregates)),
    )
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(csv_err(path))
}

fn parse<T: std::str::FromStr>(path: &Path, field: Option<&str>, what: &str) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Invalid(format!("{}: bad or missing {what}", path.display())))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if header != strings(&TRACE_HEADER) {
        return Err(Error::Invalid(format!("{}: unexpected trace header", path.display())));
    }
    rdr.deserialize().map(|r| r.map_err(csv_err(path))).collect()
}

/// Parses `rollout.csv`; the state and input widths come from the header.
pub fn read_rollout(path: &Path) -> Result<Vec<SampleRecord>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let nx = header.iter().filter(|h| h.starts_with('x')).count();
    let nu = header.iter().filter(|h| h.starts_with('u')).count();
    if header.iter().map(String::from).collect::<Vec<_>>() != rollout_header(nx, nu) {
        return Err(Error::Invalid(format!("{}: unexpected rollout header", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let num = |i: usize| parse::<f64>(path, rec.get(i), "number");
        out.push(SampleRecord {
            k: parse(path, rec.get(0), "k")?,
            x: (1..=nx).map(num).collect::<Result<_>>()?,
            u: (nx + 1..=nx + nu).map(num).collect::<Result<_>>()?,
            cost: num(nx + nu + 1)?,
            violation: num(nx + nu + 2)?,
            n_it: parse(path, rec.get(nx + nu + 3), "n_it")?,
        });
    }
    Ok(out)
}

/// Aggregates recomputed from the CSV files of a written report.
pub fn recompute_aggregates(dir: &Path) -> Result<Aggregates> {
    let samples = read_rollout(&dir.join("rollout.csv"))?;
    let trace = read_trace(&dir.join("trace.csv"))?;
    Ok(Aggregates::from_rows(&samples, &trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let rep = RunReport::empty("e", "cart_pendulum", 4, 1);
        write_report(&rep, dir.path()).unwrap();
        let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(read("trace.csv"), TRACE_HEADER.join(",") + "\n");
        assert_eq!(read("rollout.csv"), "k,x0,x1,x2,x3,u0,cost,violation,n_it\n");
        assert_eq!(read("fig1_data.csv"), FIG1_HEADER.join(",") + "\n");
        assert_eq!(read("fig2_data.csv"), FIG2_HEADER.join(",") + "\n");
        assert!(read("summary.json").contains("\"aggregates\""));
        assert!(read_rollout(&dir.path().join("rollout.csv")).unwrap().is_empty());
    }

    #[test]
    fn unwritable_directory_reports_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_report(&RunReport::empty("e", "b", 1, 1), &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { ref path, .. } if path.starts_with(&blocker)), "{err}");
    }
}
