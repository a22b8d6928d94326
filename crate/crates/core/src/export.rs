//! Result files: trace records (CSV or JSON lines), per-step polytopes,
//! per-agent boxes and a run report.
//!
//! CSV floats are written with 17 significant digits and JSON floats in
//! shortest round-trip form, so re-reading reproduces every value exactly.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vector;
use crate::reach::{AgentBox, ReachError, ReachResult, ReachView};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Reach(#[from] ReachError),
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum TraceFormat {
    #[default]
    Csv,
    Jsonl,
}

impl TraceFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            TraceFormat::Csv => "traces.csv",
            TraceFormat::Jsonl => "traces.jsonl",
        }
    }
}

/// One trace at one step as held by one view.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub view: String,
    pub step: usize,
    pub time: f64,
    pub trace: usize,
    pub gamma: f64,
    pub lambda: Vec<f64>,
    pub contact: Vec<f64>,
    /// NaN marks entries the view does not know.
    pub w_star: Option<Vec<f64>>,
}

pub fn trace_records(result: &ReachResult) -> Vec<TraceRecord> {
    let mut out = Vec::new();
    for view in &result.views {
        let label = view.label();
        for (k, &time) in result.times.iter().enumerate() {
            for (j, t) in view.traces.iter().enumerate() {
                let s = &t.steps[k];
                out.push(TraceRecord {
                    view: label.clone(),
                    step: k,
                    time,
                    trace: j,
                    gamma: s.gamma,
                    lambda: s.lambda.iter().copied().collect(),
                    contact: s.contact.iter().copied().collect(),
                    w_star: s.w_star.as_ref().map(|w| w.iter().copied().collect()),
                });
            }
        }
    }
    out
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_traces_csv<W: Write>(records: &[TraceRecord], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let (n, m) = records.first().map_or((0, 0), |r| {
        let m = records
            .iter()
            .find_map(|r| r.w_star.as_ref().map(Vec::len))
            .unwrap_or(0);
        (r.lambda.len(), m)
    });
    let mut header = vec![
        "view".to_string(),
        "step".into(),
        "time".into(),
        "trace".into(),
        "gamma".into(),
    ];
    header.extend((0..n).map(|i| format!("lambda_{i}")));
    header.extend((0..n).map(|i| format!("contact_{i}")));
    header.extend((0..m).map(|i| format!("w_{i}")));
    wr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.view.clone(),
            r.step.to_string(),
            fmt_f64(r.time),
            r.trace.to_string(),
            fmt_f64(r.gamma),
        ];
        row.extend(r.lambda.iter().map(|x| fmt_f64(*x)));
        row.extend(r.contact.iter().map(|x| fmt_f64(*x)));
        match &r.w_star {
            Some(w) => row.extend(w.iter().map(|x| fmt_f64(*x))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_traces_csv<R: io::Read>(r: R) -> Result<Vec<TraceRecord>, String> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(|e| e.to_string())?.clone();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (n, m) = (count("lambda_"), count("w_"));
    if header.len() != 5 + 2 * n + m {
        return Err("unexpected header".into());
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let bad = |what: &str| format!("record {}: bad {what}", line + 1);
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&header[i]));
        let floats = |start: usize, len: usize| (start..start + len).map(num).collect::<Result<Vec<_>, _>>();
        let w_start = 5 + 2 * n;
        let w_star = if m > 0 && rec[w_start].is_empty() {
            None
        } else {
            Some(floats(w_start, m)?)
        };
        out.push(TraceRecord {
            view: rec[0].to_string(),
            step: rec[1].parse().map_err(|_| bad("step"))?,
            time: num(2)?,
            trace: rec[3].parse().map_err(|_| bad("trace"))?,
            gamma: num(4)?,
            lambda: floats(5, n)?,
            contact: floats(5 + n, n)?,
            w_star,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    view: String,
    step: usize,
    time: f64,
    trace: usize,
    gamma: f64,
    lambda: Vec<f64>,
    contact: Vec<f64>,
    w_star: Option<Vec<Option<f64>>>,
}

pub fn write_traces_jsonl<W: Write>(records: &[TraceRecord], mut w: W) -> io::Result<()> {
    for r in records {
        let rec = JsonRecord {
            view: r.view.clone(),
            step: r.step,
            time: r.time,
            trace: r.trace,
            gamma: r.gamma,
            lambda: r.lambda.clone(),
            contact: r.contact.clone(),
            w_star: r
                .w_star
                .as_ref()
                .map(|w| w.iter().map(|x| (!x.is_nan()).then_some(*x)).collect()),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_traces_jsonl<R: io::Read>(r: R) -> Result<Vec<TraceRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(TraceRecord {
            view: rec.view,
            step: rec.step,
            time: rec.time,
            trace: rec.trace,
            gamma: rec.gamma,
            lambda: rec.lambda,
            contact: rec.contact,
            w_star: rec
                .w_star
                .map(|w| w.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()),
        });
    }
    Ok(out)
}

/// Reads a trace file, choosing the format by extension.
pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>, ExportError> {
    let file = File::open(path).map_err(io_err(path))?;
    let fmt_err = |msg| ExportError::Format {
        path: path.display().to_string(),
        msg,
    };
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_traces_jsonl(file).map_err(fmt_err),
        _ => read_traces_csv(file).map_err(fmt_err),
    }
}

#[derive(Serialize)]
struct OuterView {
    view: String,
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    inner: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct OuterStep {
    step: usize,
    time: f64,
    views: Vec<OuterView>,
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn outer_view(view: &ReachView, k: usize) -> Result<OuterView, ReachError> {
    let outer = view.outer(k)?;
    let inner = view.inner(k)?;
    Ok(OuterView {
        view: view.label(),
        normals: outer.halfspaces().iter().map(|h| to_vec(&h.normal)).collect(),
        offsets: outer.halfspaces().iter().map(|h| h.offset).collect(),
        inner: inner.vertices().iter().map(to_vec).collect(),
    })
}

#[derive(Serialize)]
struct BoxRecord {
    agent: usize,
    view: String,
    lo: Vec<Option<f64>>,
    hi: Vec<Option<f64>>,
    cloud: Vec<Vec<f64>>,
    issues: Vec<String>,
}

#[derive(Serialize)]
struct BoxStep {
    step: usize,
    time: f64,
    agents: Vec<BoxRecord>,
}

/// Per-agent boxes at every step. Each agent uses its own view when the
/// result has one, else the centralized view.
pub fn agent_boxes(result: &ReachResult, block_dims: &[usize]) -> Result<Vec<Vec<AgentBox>>, ReachError> {
    let mut out = Vec::with_capacity(result.times.len());
    for k in 0..result.times.len() {
        let mut row = Vec::with_capacity(block_dims.len());
        for i in 0..block_dims.len() {
            let view = result
                .agent_view(i)
                .or_else(|| result.central())
                .ok_or_else(|| ReachError::Config(format!("no view for agent {i}")))?;
            row.push(crate::reach::agent_box(view, block_dims, i, k)?);
        }
        out.push(row);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path)(e.into()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Writes all result files into `dir`; returns their paths.
pub fn write_all<R: Serialize>(
    dir: &Path,
    result: &ReachResult,
    block_dims: &[usize],
    format: TraceFormat,
    report: &R,
) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let records = trace_records(result);
    let path = dir.join(format.file_name());
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    match format {
        TraceFormat::Csv => write_traces_csv(&records, &mut w).map_err(|e| io_err(&path)(e.into()))?,
        TraceFormat::Jsonl => write_traces_jsonl(&records, &mut w).map_err(io_err(&path))?,
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    for (k, &time) in result.times.iter().enumerate() {
        let views = result
            .views
            .iter()
            .map(|v| outer_view(v, k))
            .collect::<Result<Vec<_>, _>>()?;
        let path = dir.join(format!("outer_k{k}.json"));
        write_json(&path, &OuterStep { step: k, time, views })?;
        written.push(path);
    }

    let boxes = agent_boxes(result, block_dims)?;
    let steps: Vec<BoxStep> = boxes
        .into_iter()
        .enumerate()
        .map(|(k, row)| BoxStep {
            step: k,
            time: result.times[k],
            agents: row
                .into_iter()
                .map(|b| BoxRecord {
                    agent: b.agent,
                    view: result.agent_view(b.agent).map_or("central".into(), ReachView::label),
                    lo: b.lo,
                    hi: b.hi,
                    cloud: b.cloud.iter().map(to_vec).collect(),
                    issues: b.issues,
                })
                .collect(),
        })
        .collect();
    let path = dir.join("agents_boxes.json");
    write_json(&path, &steps)?;
    written.push(path);

    let path = dir.join("report.json");
    write_json(&path, report)?;
    written.push(path);
    Ok(written)
}

/// Writes `value` as pretty JSON to `path`.
pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    write_json(path, value)
}
